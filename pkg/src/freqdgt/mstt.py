"""Multi-scale temporal transformer with banded, scale-specific attention masks."""

from __future__ import annotations

import math

import torch
from torch import nn


def make_scale_mask(S: int, s: int, device=None) -> torch.Tensor:
    """Boolean ``(S, S)`` mask, True where ``|i - j| < s``."""
    idx = torch.arange(S, device=device)
    return (idx[:, None] - idx[None, :]).abs() < s


def masked_attention(q, k, v, mask, mode: str = "additive"):
    """Attention over the window axis restricted by ``mask``.

    q, k, v are ``(..., S, d)``. ``additive`` sends masked logits to -inf so they
    get exactly zero weight; ``multiplicative`` multiplies the raw scores by the
    mask before scaling, as the equation is written.
    """
    scores = q @ k.transpose(-1, -2)
    if mode == "additive":
        scores = scores.masked_fill(~mask, float("-inf"))
    else:
        scores = scores * mask.to(scores.dtype)
    A = (scores / math.sqrt(q.shape[-1])).softmax(-1)
    return A @ v, A


def scale_energy(O: torch.Tensor) -> torch.Tensor:
    """Mean over the window axis, ``(..., S, d) -> (..., d)``."""
    return O.mean(-2)


class ScaleGroup(nn.Module):
    """A group of heads sharing one temporal scale, with its modulation gate."""

    def __init__(self, d_in: int, d_group: int, n_heads: int, scale: int,
                 mask_mode: str = "additive"):
        super().__init__()
        self.scale = scale
        self.n_heads = n_heads
        self.mask_mode = mask_mode
        self.q = nn.Linear(d_in, d_group, bias=False)
        self.k = nn.Linear(d_in, d_group, bias=False)
        self.v = nn.Linear(d_in, d_group, bias=False)
        self.modulation = nn.Sequential(
            nn.Linear(d_group, d_group), nn.GELU(), nn.Linear(d_group, d_group)
        )

    def _split(self, x):
        *lead, S, d = x.shape
        return x.reshape(*lead, S, self.n_heads, d // self.n_heads).transpose(-2, -3)

    def attention(self, H: torch.Tensor):
        """Returns ``O_s`` of shape ``(..., S, d_group)`` and per-head weights ``(..., h, S, S)``."""
        S = H.shape[-2]
        mask = make_scale_mask(S, self.scale, H.device)
        O, A = masked_attention(self._split(self.q(H)), self._split(self.k(H)),
                                self._split(self.v(H)), mask, self.mask_mode)
        O = O.transpose(-2, -3).flatten(-2)
        return O, A

    def gate(self, p: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.modulation(p))


class MSTTBlock(nn.Module):
    def __init__(self, d_in: int, d_h: int, scales, n_heads: int, mask_mode: str = "additive",
                 fusion_hidden: int | None = None):
        super().__init__()
        scales = list(scales)
        if n_heads % len(scales):
            raise ValueError(f"n_heads={n_heads} not divisible by {len(scales)} scales")
        if d_h % n_heads:
            raise ValueError(f"d_h={d_h} not divisible by n_heads={n_heads}")
        heads_per_group = n_heads // len(scales)
        d_group = d_h // len(scales)
        self.groups = nn.ModuleList(
            ScaleGroup(d_in, d_group, heads_per_group, s, mask_mode) for s in scales
        )
        fusion_hidden = fusion_hidden or d_group
        self.scale_attention = nn.Sequential(
            nn.Linear(len(scales) * d_group, fusion_hidden), nn.GELU(),
            nn.Linear(fusion_hidden, len(scales)),
        )
        self.out = nn.Linear(d_h, d_h, bias=False)

    def forward(self, H: torch.Tensor, return_details: bool = False):
        outs = [g.attention(H) for g in self.groups]
        energies = [scale_energy(O) for O, _ in outs]
        alpha = self.scale_attention(torch.cat(energies, -1)).softmax(-1)
        fused = [
            alpha[..., i, None, None] * O * g.gate(p).unsqueeze(-2)
            for i, (g, (O, _), p) in enumerate(zip(self.groups, outs, energies))
        ]
        Y = self.out(torch.cat(fused, -1))
        if return_details:
            return Y, {"alpha": alpha, "attention": [A for _, A in outs], "energy": energies}
        return Y


class MSTT(nn.Module):
    """Flattens ``(..., S, C, d_g)`` to ``(..., S, C*d_g)`` and applies ``n_blocks`` blocks."""

    def __init__(self, d_in: int, d_h: int, scales=(1, 2, 4, 8), n_heads: int = 4,
                 n_blocks: int = 1, mask_mode: str = "additive"):
        super().__init__()
        dims = [d_in] + [d_h] * n_blocks
        self.blocks = nn.ModuleList(
            MSTTBlock(a, d_h, scales, n_heads, mask_mode) for a in dims[:-1]
        )

    def forward(self, H: torch.Tensor, return_details: bool = False):
        H = H.flatten(-2)
        details = []
        for block in self.blocks:
            H, d = block(H, return_details=True)
            details.append(d)
        if return_details:
            return H, details
        return H
