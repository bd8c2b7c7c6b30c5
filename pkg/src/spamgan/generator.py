"""Class-conditioned autoregressive GRU generator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .corpus import END_ID, PAD_ID, START_ID, TokenSequence
from .nn import StackedGRU, clipped_step

N_CLASSES = 2


@dataclass
class Context:
    z: torch.Tensor  # (z_dim,) or (B, z_dim)
    c: torch.Tensor  # class index, scalar or (B,)

    @property
    def c_onehot(self) -> torch.Tensor:
        return F.one_hot(self.c.long(), N_CLASSES).to(self.z.dtype)

    def vector(self) -> torch.Tensor:
        return torch.cat([self.z, self.c_onehot], dim=-1)


@dataclass
class GeneratedBatch:
    ids: torch.Tensor  # (B, T) long
    mask: torch.Tensor  # (B, T) bool
    step_logprobs: torch.Tensor  # (B, T); position 0 (<start>) and pads hold 0
    context: Context

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def action_mask(self) -> torch.Tensor:
        """Positions that were sampled by the policy (content minus ``<start>``)."""
        m = self.mask.clone()
        m[:, 0] = False
        return m

    def sequences(self) -> list[TokenSequence]:
        return [TokenSequence.from_ids(row.tolist()) for row in self.ids]


def sample_context(
    batch: int,
    class_prior: Sequence[float] = (0.5, 0.5),
    z_dim: int = 50,
    rng: Optional[torch.Generator] = None,
    classes: Optional[torch.Tensor] = None,
) -> Context:
    """Draw ``z ~ N(0, I)`` and ``c ~ class_prior`` for a batch.

    ``classes`` pins the labels instead of sampling them.
    """
    prior = torch.as_tensor(class_prior, dtype=torch.float64)
    if prior.numel() != N_CLASSES or abs(float(prior.sum()) - 1.0) > 1e-9 or bool((prior < 0).any()):
        raise ValueError("class_prior must be a distribution over two classes")
    z = torch.randn(batch, z_dim, generator=rng)
    if classes is None:
        classes = torch.multinomial(prior, batch, replacement=True, generator=rng)
    return Context(z, torch.as_tensor(classes, dtype=torch.long).reshape(batch))


class Generator(nn.Module):
    """GRU language model whose every input step is ``embed(y_{t-1}) ⊕ z ⊕ onehot(c)``.

    ``<start>`` and ``<pad>`` are never emitted: their logits are fixed at -inf
    both when sampling and under teacher forcing, so the two paths agree.
    """

    def __init__(
        self,
        vocab_size: int,
        embedding_dim: int = 50,
        hidden_size: int = 1024,
        num_layers: int = 2,
        z_dim: int = 50,
        dropout: float = 0.5,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.z_dim = z_dim
        self.embedding = nn.Embedding(vocab_size, embedding_dim)
        self.rnn = StackedGRU(embedding_dim + z_dim + N_CLASSES, hidden_size, num_layers, dropout)
        self.output = nn.Linear(hidden_size, vocab_size)
        # real sentences are scored with z = 0; zeroing the noise inputs makes
        # sampled z harmless until adversarial training learns to use it
        with torch.no_grad():
            self.rnn.layers[0].weight_ih_l0[:, embedding_dim : embedding_dim + z_dim].zero_()
        forbidden = torch.zeros(vocab_size, dtype=torch.bool)
        forbidden[[PAD_ID, START_ID]] = True
        self.register_buffer("forbidden", forbidden, persistent=False)

    def _inputs(self, tokens: torch.Tensor, context: Context) -> torch.Tensor:
        emb = self.embedding(tokens)
        ctx = context.vector().to(emb.dtype)
        ctx = ctx.unsqueeze(1).expand(-1, tokens.shape[1], -1)
        return torch.cat([emb, ctx], dim=-1)

    def _logits(self, out: torch.Tensor) -> torch.Tensor:
        return self.output(out).masked_fill(self.forbidden, float("-inf"))

    def forward(self, ids: torch.Tensor, context: Context, rng=None) -> torch.Tensor:
        """Teacher-forced next-token logits for positions ``1..T-1``: shape ``(B, T-1, V)``."""
        x = self._inputs(ids[:, :-1], context)
        out, _ = self.rnn(x, masks=self.rnn.dropout_masks(ids.shape[0], rng, like=x))
        return self._logits(out)

    def token_logprobs(self, ids: torch.Tensor, mask: torch.Tensor, context: Context, rng=None):
        """Per-position ``log G(y_t | y_<t, z, c)`` as ``(B, T)``; zero at ``<start>`` and pads."""
        logp = F.log_softmax(self(ids, context, rng), dim=-1)
        target = ids[:, 1:]
        picked = logp.gather(-1, target.unsqueeze(-1)).squeeze(-1)
        # pads carry -inf log-probability; zero them before masking to keep gradients finite
        keep = mask[:, 1:]
        picked = torch.where(keep, picked, torch.zeros_like(picked))
        return F.pad(picked, (1, 0))

    @torch.no_grad()
    def generate(
        self,
        context: Context,
        T: int,
        temperature: float = 1.0,
        rng: Optional[torch.Generator] = None,
    ) -> GeneratedBatch:
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        was_training = self.training
        self.eval()
        try:
            B = context.z.shape[0]
            ids = torch.full((B, T), PAD_ID, dtype=torch.long)
            ids[:, 0] = START_ID
            logps = torch.zeros(B, T)
            done = torch.zeros(B, dtype=torch.bool)
            token = ids[:, :1]
            hidden = None
            for t in range(1, T):
                out, hidden = self.rnn(self._inputs(token, context), hidden)
                logits = self._logits(out[:, -1])
                probs = F.softmax(logits / temperature, dim=-1)
                nxt = torch.multinomial(probs.float(), 1, generator=rng).squeeze(-1)
                lp = F.log_softmax(logits, dim=-1).gather(-1, nxt.unsqueeze(-1)).squeeze(-1)
                nxt = torch.where(done, torch.full_like(nxt, PAD_ID), nxt)
                ids[:, t] = nxt
                logps[:, t] = torch.where(done, torch.zeros_like(lp), lp).float()
                done = done | (nxt == END_ID)
                if bool(done.all()):
                    break
                token = nxt.unsqueeze(1)
        finally:
            self.train(was_training)
        return GeneratedBatch(ids, ids != PAD_ID, logps, context)


def real_context(classes: torch.Tensor, z_dim: int, dtype=torch.float32) -> Context:
    """Context for real sentences: zero noise vector plus the given classes."""
    classes = torch.as_tensor(classes, dtype=torch.long)
    return Context(torch.zeros(classes.shape[0], z_dim, dtype=dtype), classes)


def mle_loss(
    gen: Generator, ids: torch.Tensor, mask: torch.Tensor, classes: torch.Tensor, rng=None
) -> torch.Tensor:
    """Batch mean of the summed next-token negative log-likelihood over content positions."""
    if ids.shape[0] == 0:
        raise ValueError("empty batch")
    ctx = real_context(classes, gen.z_dim, gen.output.weight.dtype)
    return -gen.token_logprobs(ids, mask, ctx, rng).sum(1).mean()


def mle_update(gen: Generator, optimizer, ids, mask, classes, clip_norm: float = 5.0, rng=None) -> float:
    """One clipped optimizer step on :func:`mle_loss`; returns the loss before the step."""
    gen.train()
    loss = mle_loss(gen, ids, mask, classes, rng)
    clipped_step(optimizer, loss, clip_norm)
    return loss.item()


def sequences_to_tensors(seqs: Sequence[TokenSequence]):
    ids = torch.as_tensor(np.array([s.ids for s in seqs], dtype=np.int64))
    return ids, ids != PAD_ID
