"""Per-timestep real/fake discriminator with a discrimination-critic head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import TokenSequence
from .nn import StackedGRU, masked_mean

EPS = 1e-7


@dataclass
class ScoreSeries:
    """Per-step scores ``q[t] = Q(y_<t, y_t)`` and critic baselines ``v[t] = V(y_<t)``."""

    q: torch.Tensor
    v: torch.Tensor
    mask: torch.Tensor


class RecurrentScorer(nn.Module):
    """Embedding plus stacked GRU, exposing the state before and after each token."""

    def __init__(self, vocab_size: int, embedding_dim: int, hidden_size: int, num_layers: int, dropout: float):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, embedding_dim)
        self.rnn = StackedGRU(embedding_dim, hidden_size, num_layers, dropout)

    def trunk_parameters(self):
        return list(self.embedding.parameters()) + list(self.rnn.parameters())

    def states(self, ids: torch.Tensor, rng=None) -> torch.Tensor:
        """``(B, T+1, H)``: index ``t`` is the top-layer state after ``y_1..y_t`` (index 0 = nothing read)."""
        x = self.embedding(ids)
        out, _ = self.rnn(x, masks=self.rnn.dropout_masks(ids.shape[0], rng, like=x))
        return F.pad(out, (0, 0, 1, 0))


class Discriminator(RecurrentScorer):
    def __init__(
        self,
        vocab_size: int,
        embedding_dim: int = 50,
        hidden_size: int = 512,
        num_layers: int = 2,
        dropout: float = 0.5,
    ):
        super().__init__(vocab_size, embedding_dim, hidden_size, num_layers, dropout)
        self.score_head = nn.Linear(hidden_size, 1)
        self.critic_head = nn.Linear(hidden_size, 1)

    def main_parameters(self):
        return self.trunk_parameters() + list(self.score_head.parameters())

    def critic_parameters(self):
        return list(self.critic_head.parameters())

    def score_steps(self, ids: torch.Tensor, mask: torch.Tensor, rng=None) -> ScoreSeries:
        h = self.states(ids, rng)
        q = torch.sigmoid(self.score_head(h[:, 1:])).squeeze(-1)
        # the critic never back-propagates into the shared trunk
        v = torch.sigmoid(self.critic_head(h[:, :-1].detach())).squeeze(-1)
        return ScoreSeries(q, v, mask)


def disc_score_steps(disc: Discriminator, seq: TokenSequence) -> ScoreSeries:
    ids = torch.tensor([seq.ids])
    with torch.no_grad():
        s = disc.score_steps(ids, torch.tensor([seq.mask]))
    return ScoreSeries(s.q[0], s.v[0], s.mask[0])


def sentence_score(q: torch.Tensor, mask: torch.Tensor, strict_eq3: bool = False) -> torch.Tensor:
    """Mean per-step score over content positions (or over every position when ``strict_eq3``)."""
    if strict_eq3:
        if q.shape[-1] == 0:
            raise ValueError("empty score series")
        if not bool(mask.reshape(-1, mask.shape[-1]).any(-1).all()):
            raise ValueError("sequence without content positions")
        return q.mean(dim=-1)
    if q.dim() == 1:
        return masked_mean(q.unsqueeze(0), mask.unsqueeze(0))[0]
    return masked_mean(q, mask)


def disc_sentence_score(series: ScoreSeries, strict_eq3: bool = False) -> torch.Tensor:
    return sentence_score(series.q, series.mask, strict_eq3)


def disc_loss(
    disc: Discriminator,
    real_ids,
    real_mask,
    fake_ids,
    fake_mask,
    strict_eq3: bool = False,
    rng=None,
) -> torch.Tensor:
    """``mean(-log D(real)) + mean(-log(1 - D(fake)))`` with scores clamped to ``[eps, 1-eps]``."""
    if real_ids.shape[0] == 0 or fake_ids.shape[0] == 0:
        raise ValueError("real and fake batches must be non-empty")
    d_real = sentence_score(disc.score_steps(real_ids, real_mask, rng).q, real_mask, strict_eq3)
    d_fake = sentence_score(disc.score_steps(fake_ids, fake_mask, rng).q, fake_mask, strict_eq3)
    return gan_loss(d_real, d_fake)


def gan_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    d_real = d_real.clamp(EPS, 1 - EPS)
    d_fake = d_fake.clamp(EPS, 1 - EPS)
    return -torch.log(d_real).mean() - torch.log1p(-d_fake).mean()


def critic_mse(q: torch.Tensor, v: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Batch mean of ``sum_t (q - v)^2`` over content positions; ``q`` is a fixed target."""
    diff = (q.detach() - v) * mask.to(v.dtype)
    return (diff**2).sum(-1).mean()


def disc_critic_loss(disc: Discriminator, fake_ids, fake_mask) -> torch.Tensor:
    s = disc.score_steps(fake_ids, fake_mask)
    return critic_mse(s.q, s.v, s.mask)
