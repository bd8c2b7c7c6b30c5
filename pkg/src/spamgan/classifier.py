"""Per-timestep spam/non-spam classifier with a classification-critic head."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .corpus import NONSPAM, TokenSequence
from .discriminator import EPS, RecurrentScorer, ScoreSeries, critic_mse, sentence_score
from .generator import N_CLASSES


class Classifier(RecurrentScorer):
    """Softmax class head and a per-class sigmoid critic head on one GRU trunk."""

    def __init__(
        self,
        vocab_size: int,
        embedding_dim: int = 50,
        hidden_size: int = 512,
        num_layers: int = 2,
        dropout: float = 0.5,
    ):
        super().__init__(vocab_size, embedding_dim, hidden_size, num_layers, dropout)
        self.class_head = nn.Linear(hidden_size, N_CLASSES)
        self.critic_head = nn.Linear(hidden_size, N_CLASSES)

    def main_parameters(self):
        return self.trunk_parameters() + list(self.class_head.parameters())

    def critic_parameters(self):
        return list(self.critic_head.parameters())

    def step_probs(self, ids, rng=None):
        """``(probs, critic)``, each ``(B, T, 2)``: ``Q_C(y_<t, y_t, ·)`` and ``V_C(y_<t, ·)``."""
        h = self.states(ids, rng)
        probs = F.softmax(self.class_head(h[:, 1:]), dim=-1)
        critic = torch.sigmoid(self.critic_head(h[:, :-1].detach()))
        return probs, critic

    def score_steps(self, ids, mask, classes, rng=None) -> ScoreSeries:
        probs, critic = self.step_probs(ids, rng)
        idx = torch.as_tensor(classes, dtype=torch.long).view(-1, 1, 1).expand(-1, ids.shape[1], 1)
        return ScoreSeries(probs.gather(-1, idx).squeeze(-1), critic.gather(-1, idx).squeeze(-1), mask)

    def sentence_probs(self, ids, mask, strict_eq3: bool = False, rng=None) -> torch.Tensor:
        """Sentence-level class distribution ``(B, 2)``: per-step distributions averaged over content."""
        probs, _ = self.step_probs(ids, rng)
        if strict_eq3:
            return sentence_score(probs.transpose(1, 2), mask.unsqueeze(1).expand(-1, N_CLASSES, -1), True)
        return sentence_score(probs, mask)


def cls_score_steps(cls: Classifier, seq: TokenSequence, c: int) -> ScoreSeries:
    with torch.no_grad():
        s = cls.score_steps(torch.tensor([seq.ids]), torch.tensor([seq.mask]), torch.tensor([c]))
    return ScoreSeries(s.q[0], s.v[0], s.mask[0])


def predict_from_probs(probs: torch.Tensor, tie_class: int = NONSPAM) -> torch.Tensor:
    """Argmax over the two classes; exact ties resolve to ``tie_class``."""
    other = 1 - tie_class
    return torch.where(probs[..., other] > probs[..., tie_class], other, tie_class)


def classify(cls: Classifier, seq: TokenSequence, tie_class: int = NONSPAM, strict_eq3: bool = False):
    cls.eval()
    with torch.no_grad():
        probs = cls.sentence_probs(torch.tensor([seq.ids]), torch.tensor([seq.mask]), strict_eq3)[0]
    return int(predict_from_probs(probs, tie_class)), probs


def entropy(probs: torch.Tensor) -> torch.Tensor:
    p = probs.clamp(EPS, 1.0)
    return -(probs * torch.log(p)).sum(-1)


def classifier_loss(
    cls: Classifier,
    real_ids,
    real_mask,
    real_labels,
    fake_ids=None,
    fake_mask=None,
    fake_labels=None,
    beta: float = 1.0,
    strict_eq3: bool = False,
    rng=None,
) -> torch.Tensor:
    """Cross-entropy on real labeled sentences plus, when given, cross-entropy minus
    ``beta`` times the sentence-level Shannon entropy on generated sentences."""
    p_real = cls.sentence_probs(real_ids, real_mask, strict_eq3, rng)
    loss = nll(p_real, real_labels).mean()
    if fake_ids is not None:
        p_fake = cls.sentence_probs(fake_ids, fake_mask, strict_eq3, rng)
        loss = loss + (nll(p_fake, fake_labels) - beta * entropy(p_fake)).mean()
    return loss


def nll(probs: torch.Tensor, labels) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    picked = probs.gather(-1, labels.view(-1, 1)).squeeze(-1)
    return -torch.log(picked.clamp(EPS, 1.0))


def cls_critic_loss(cls: Classifier, fake_ids, fake_mask, fake_labels) -> torch.Tensor:
    s = cls.score_steps(fake_ids, fake_mask, fake_labels)
    return critic_mse(s.q, s.v, s.mask)
