"""Recurrent building blocks and optimizer plumbing shared by the three networks."""

from __future__ import annotations

import hashlib
import math
from typing import Iterable, Optional

import torch
from torch import nn


class StackedGRU(nn.Module):
    """GRU layers with variational dropout between them.

    One dropout mask is drawn per sequence and reused at every timestep
    (``(batch, 1, hidden)``), so the noise does not vary along time.
    """

    def __init__(self, input_size: int, hidden_size: int, num_layers: int = 2, dropout: float = 0.5):
        super().__init__()
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.dropout = dropout
        sizes = [input_size] + [hidden_size] * (num_layers - 1)
        self.layers = nn.ModuleList(nn.GRU(s, hidden_size, batch_first=True) for s in sizes)

    def dropout_masks(self, batch: int, rng: Optional[torch.Generator] = None, like=None):
        if not self.training or self.dropout <= 0 or self.num_layers < 2:
            return None
        keep = 1.0 - self.dropout
        ref = like if like is not None else next(self.parameters())
        return [
            torch.bernoulli(
                torch.full((batch, 1, self.hidden_size), keep, dtype=ref.dtype), generator=rng
            )
            / keep
            for _ in range(self.num_layers - 1)
        ]

    def forward(self, x, hidden=None, masks=None):
        """Run ``x`` of shape ``(B, L, input)``; returns top-layer outputs and per-layer states."""
        new_hidden = []
        out = x
        for i, layer in enumerate(self.layers):
            if i > 0 and masks is not None:
                out = out * masks[i - 1]
            h0 = None if hidden is None else hidden[i]
            out, h = layer(out, h0)
            new_hidden.append(h)
        return out, new_hidden


def make_optimizer(params: Iterable[torch.nn.Parameter], lr: float, weight_decay: float):
    # decoupled decay: a zero gradient moves parameters only by lr * wd * p
    return torch.optim.AdamW(list(params), lr=lr, weight_decay=weight_decay, betas=(0.9, 0.999))


class NonFiniteError(FloatingPointError):
    pass


def clipped_step(optimizer: torch.optim.Optimizer, loss: torch.Tensor, clip_norm: Optional[float]) -> float:
    """Backprop ``loss``, clip the global gradient norm and step.

    Raises :class:`NonFiniteError` without touching parameters when the loss
    or the gradient is not finite. Returns the pre-clip gradient norm.
    """
    if not torch.isfinite(loss):
        optimizer.zero_grad(set_to_none=True)
        raise NonFiniteError(f"non-finite loss {loss.item()}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    params = [p for group in optimizer.param_groups for p in group["params"] if p.grad is not None]
    if clip_norm is not None and clip_norm > 0:
        norm = torch.nn.utils.clip_grad_norm_(params, clip_norm)
    else:
        norm = torch.norm(torch.stack([p.grad.norm() for p in params])) if params else torch.tensor(0.0)
    if not math.isfinite(float(norm)):
        optimizer.zero_grad(set_to_none=True)
        raise NonFiniteError("non-finite gradient norm")
    optimizer.step()
    return float(norm)


def param_digest(*modules: nn.Module) -> str:
    """SHA-256 over every parameter's bytes, in registration order."""
    h = hashlib.sha256()
    for module in modules:
        for name, p in module.named_parameters():
            h.update(name.encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean of ``values`` over true ``mask`` positions along dim 1.

    ``values`` is ``(B, T)`` or ``(B, T, K)``; raises if a row has no content.
    """
    m = mask.to(values.dtype)
    counts = m.sum(1)
    if bool((counts == 0).any()):
        raise ValueError("sequence without content positions")
    if values.dim() == 3:
        return (values * m.unsqueeze(-1)).sum(1) / counts.unsqueeze(-1)
    return (values * m).sum(1) / counts
