"""Blended rewards, alpha-weighted advantages and the generator's policy-gradient step."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from .generator import GeneratedBatch, Generator
from .nn import NonFiniteError, clipped_step

log = logging.getLogger(__name__)


def blend(a, b):
    """Harmonic blend ``2ab / (a + b)``, defined as 0 where ``a + b == 0``.

    Evaluated as ``2a * (b / (a + b))`` so tiny scores do not underflow and
    ``blend(a, a) == a`` holds exactly. Works on floats and tensors alike.
    """
    if isinstance(a, torch.Tensor) or isinstance(b, torch.Tensor):
        a, b = torch.as_tensor(a), torch.as_tensor(b)
        s = a + b
        safe = torch.where(s > 0, s, torch.ones_like(s))
        return torch.where(s > 0, 2 * a * (b / safe), torch.zeros_like(s))
    s = a + b
    return 0.0 if s == 0 else 2.0 * a * (b / s)


def sentence_reward(d_score, c_score):
    """Reward for a whole generated sentence, paid at its final step."""
    return blend(d_score, c_score)


@dataclass
class AdvantageTrace:
    blended_q: torch.Tensor
    blended_v: torch.Tensor
    alpha: torch.Tensor
    advantage: torch.Tensor


def alpha_schedule(T: int, offset: float = 0.0, dtype=torch.float32) -> torch.Tensor:
    """``alpha[t] = T - t + offset`` for ``t = 1..T``."""
    t = torch.arange(1, T + 1, dtype=dtype)
    return T - t + offset


def advantages(qd, qc, vd, vc, T: int = None, mask=None, alpha_offset: float = 0.0) -> AdvantageTrace:
    """Per-step advantages ``alpha * (blend(Qd, Qc) - blend(Vd, Vc))``.

    Inputs are ``(T,)`` or ``(B, T)``; positions outside ``mask`` get zero advantage.
    """
    qd, qc, vd, vc = (torch.as_tensor(x, dtype=torch.float32) for x in (qd, qc, vd, vc))
    shape = qd.shape
    if any(x.shape != shape for x in (qc, vd, vc)):
        raise ValueError("score series lengths differ")
    if T is None:
        T = shape[-1]
    if shape[-1] != T:
        raise ValueError(f"series length {shape[-1]} != T={T}")
    bq = blend(qd, qc)
    bv = blend(vd, vc)
    alpha = alpha_schedule(T, alpha_offset)
    adv = alpha * (bq - bv)
    if mask is not None:
        mask = torch.as_tensor(mask, dtype=torch.bool)
        if mask.shape != shape:
            raise ValueError("mask shape differs from score series")
        adv = torch.where(mask, adv, torch.zeros_like(adv))
    return AdvantageTrace(bq, bv, alpha.expand(shape).clone(), adv)


def whiten(adv: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    vals = adv[mask]
    if vals.numel() < 2:
        return adv
    out = (adv - vals.mean()) / (vals.std() + 1e-8)
    return torch.where(mask, out, torch.zeros_like(out))


def policy_gradient_loss(gen: Generator, batch: GeneratedBatch, advantage: torch.Tensor) -> torch.Tensor:
    """Negated surrogate whose gradient is ``-mean_b sum_t A_t grad log G(y_t | ...)``.

    Log-probabilities are recomputed by teacher-forcing the sampled tokens with
    dropout off, so the gradient is that of the sampling policy.
    """
    logp = gen.token_logprobs(batch.ids, batch.mask, batch.context)
    adv = torch.where(batch.action_mask, advantage.to(logp.dtype), torch.zeros_like(logp)).detach()
    return -(adv * logp).sum(1).mean()


def policy_gradient_update(
    gen: Generator,
    batch: GeneratedBatch,
    advantage: torch.Tensor,
    optimizer,
    clip_norm: float = 5.0,
) -> bool:
    """One ascent step on the expected reward. Returns False (and leaves
    parameters untouched) when the gradient is not finite."""
    gen.eval()
    try:
        loss = policy_gradient_loss(gen, batch, advantage)
        clipped_step(optimizer, loss, clip_norm)
    except NonFiniteError as err:
        log.warning("skipping policy-gradient update: %s", err)
        return False
    finally:
        gen.train()
    return True
