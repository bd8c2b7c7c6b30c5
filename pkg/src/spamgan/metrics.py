"""Accuracy, F1 and generator perplexity."""

from __future__ import annotations

import math
from typing import Sequence

import torch

from .corpus import SPAM
from .generator import Generator, real_context


def _check(preds: Sequence, gold: Sequence) -> None:
    if len(preds) != len(gold):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(gold)} labels")
    if len(gold) == 0:
        raise ValueError("empty label list")


def accuracy(preds: Sequence, gold: Sequence) -> float:
    _check(preds, gold)
    return sum(int(p) == int(g) for p, g in zip(preds, gold)) / len(gold)


def f1(preds: Sequence, gold: Sequence, positive_class: int = SPAM) -> float:
    _check(preds, gold)
    tp = sum(int(p) == positive_class and int(g) == positive_class for p, g in zip(preds, gold))
    fp = sum(int(p) == positive_class and int(g) != positive_class for p, g in zip(preds, gold))
    fn = sum(int(p) != positive_class and int(g) == positive_class for p, g in zip(preds, gold))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@torch.no_grad()
def perplexity(gen: Generator, ids: torch.Tensor, mask: torch.Tensor, classes, batch_size: int = 256) -> float:
    """``exp(total NLL / total predicted tokens)`` under teacher forcing with ``z = 0``."""
    if ids.shape[0] == 0:
        raise ValueError("empty test set")
    was_training = gen.training
    gen.eval()
    classes = torch.as_tensor(classes, dtype=torch.long)
    total_nll = 0.0
    count = 0
    try:
        for i in range(0, ids.shape[0], batch_size):
            b_ids, b_mask = ids[i : i + batch_size], mask[i : i + batch_size]
            ctx = real_context(classes[i : i + batch_size], gen.z_dim, gen.output.weight.dtype)
            total_nll -= float(gen.token_logprobs(b_ids, b_mask, ctx).double().sum())
            count += int(b_mask[:, 1:].sum())
    finally:
        gen.train(was_training)
    return math.exp(total_nll / count)
