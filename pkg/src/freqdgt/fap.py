"""Frequency-adaptive processing: band energies, cross-band attention and band re-weighting."""

from __future__ import annotations

import torch
from torch import nn


def band_energy(X: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Channel-averaged in-band power per window.

    X is ``(..., S, C, F)`` and mask is ``(F,)``; returns ``(..., S)``.
    """
    return (X.square() * mask).sum(-1).mean(-1)


def band_energies(X: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    """Stack of :func:`band_energy` over all bands, shape ``(..., S, n_bands)``."""
    return torch.einsum("...cf,bf->...b", X.square(), masks) / X.shape[-2]


def _small_init(layer: nn.Linear, bound: float = 1e-2):
    nn.init.uniform_(layer.weight, -bound, bound)
    nn.init.zeros_(layer.bias)


class FAP(nn.Module):
    """Re-weights band-masked features by ``attention * importance`` per window.

    ``attention=False`` replaces the attention weights with a uniform 1/5 and
    ``importance=False`` fixes the importance weights at 1 (ablation switches).
    """

    def __init__(self, masks, hidden: int = 16, attention: bool = True,
                 softmax: bool = True, importance: bool = True):
        super().__init__()
        masks = torch.as_tensor(masks, dtype=torch.get_default_dtype())
        self.register_buffer("masks", masks)
        n_bands = masks.shape[0]
        self.attention_net = nn.Sequential(
            nn.LayerNorm(n_bands),
            nn.Linear(n_bands, hidden),
            nn.GELU(),
            nn.Linear(hidden, n_bands),
        )
        self.importance_net = nn.Sequential(
            nn.Linear(n_bands, hidden),
            nn.GELU(),
            nn.Linear(hidden, n_bands),
            nn.Sigmoid(),
        )
        _small_init(self.attention_net[-1])
        _small_init(self.importance_net[-2])
        self.use_attention = attention
        self.use_softmax = softmax
        self.use_importance = importance

    def band_weights(self, P: torch.Tensor):
        if self.use_attention:
            A = self.attention_net(P)
            if self.use_softmax:
                A = A.softmax(-1)
        else:
            A = torch.full_like(P, 1.0 / P.shape[-1])
        W = self.importance_net(P) if self.use_importance else torch.ones_like(P)
        return A, W

    def forward(self, X: torch.Tensor, return_weights: bool = False):
        P = band_energies(X, self.masks)
        A, W = self.band_weights(P)
        # sum_b (A_b W_b) M_b collapses to one gain per (window, bin)
        gain = (A * W) @ self.masks
        Y = X * gain.unsqueeze(-2)
        if return_weights:
            return Y, A, W
        return Y
