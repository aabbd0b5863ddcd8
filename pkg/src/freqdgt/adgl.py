"""Adaptive dynamic graph learning over EEG channels."""

from __future__ import annotations

import math

import torch
from torch import nn


def temporal_mean_pool(Y: torch.Tensor) -> torch.Tensor:
    """``(..., S, C, F) -> (..., C, F)``."""
    return Y.mean(-3)


def dynamic_adjacency(Z: torch.Tensor) -> torch.Tensor:
    """Row-softmax of scaled pairwise dot products, ``(..., C, d) -> (..., C, C)``."""
    return (Z @ Z.transpose(-1, -2) / math.sqrt(Z.shape[-1])).softmax(-1)


def normalize_adjacency(A: torch.Tensor) -> torch.Tensor:
    """Symmetrize, add self-loops and apply symmetric degree normalization."""
    eye = torch.eye(A.shape[-1], dtype=A.dtype, device=A.device)
    At = 0.5 * (A + A.transpose(-1, -2)) + eye
    d = At.sum(-1).rsqrt()
    return d.unsqueeze(-1) * At * d.unsqueeze(-2)


def fixed_adjacency(n_channels: int, dtype=None) -> torch.Tensor:
    """Static identity-plus-uniform graph used when dynamic learning is switched off."""
    A = torch.full((n_channels, n_channels), 1.0 / n_channels, dtype=dtype)
    return normalize_adjacency(A)


def power_iteration_lmax(L: torch.Tensor, iters: int = 30, tol: float = 1e-6,
                         fallback: float = 2.0) -> torch.Tensor:
    """Largest eigenvalue of a PSD matrix by power iteration.

    Entries that have not settled to ``tol`` after ``iters`` steps get ``fallback``.
    """
    C = L.shape[-1]
    gen = torch.Generator().manual_seed(C)
    v = torch.rand(C, generator=gen, dtype=L.dtype) + 0.5
    v = (v / v.norm()).expand(L.shape[:-1]).unsqueeze(-1)
    lam = prev = None
    for _ in range(iters):
        w = L @ v
        prev, lam = lam, (v * w).sum((-1, -2))
        v = w / w.norm(dim=-2, keepdim=True).clamp_min(1e-30)
    settled = (lam - prev).abs() <= tol * lam.abs().clamp_min(1.0)
    return torch.where(settled, lam, torch.full_like(lam, fallback))


def largest_eigenvalue(L: torch.Tensor, method: str = "eigh") -> torch.Tensor:
    if method == "eigh":
        lam = torch.linalg.eigvalsh(L)[..., -1]
    elif method == "power":
        lam = power_iteration_lmax(L)
    else:
        raise ValueError(f"unknown lmax method {method!r}")
    if torch.any(lam <= 1e-12):
        raise ValueError("degenerate graph: Laplacian has no positive eigenvalue")
    return lam


def scaled_laplacian(A_hat: torch.Tensor, lmax_method: str = "eigh") -> torch.Tensor:
    eye = torch.eye(A_hat.shape[-1], dtype=A_hat.dtype, device=A_hat.device)
    L = eye - A_hat
    lmax = largest_eigenvalue(L, lmax_method)
    return 2.0 * L / lmax[..., None, None] - eye


def chebyshev_basis(L_tilde: torch.Tensor, H: torch.Tensor, K: int) -> list[torch.Tensor]:
    """``[T_0(L~) H, ..., T_{K-1}(L~) H]`` via the three-term recurrence."""
    out = [H]
    if K > 1:
        out.append(L_tilde @ H)
    for _ in range(2, K):
        out.append(2.0 * (L_tilde @ out[-1]) - out[-2])
    return out


def cheb_propagate(L_tilde: torch.Tensor, H: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """``ReLU(sum_k T_k(L~) H W_k)`` with ``weights`` of shape ``(K, d_in, d_out)``."""
    basis = chebyshev_basis(L_tilde, H, weights.shape[0])
    return torch.relu(sum(Tx @ W for Tx, W in zip(basis, weights)))


class GraphConv(nn.Module):
    """One propagation layer: Chebyshev filter (``cheb``) or ``ReLU(A H W)`` (``simple``)."""

    def __init__(self, d_in: int, d_out: int, K: int = 4, mode: str = "cheb"):
        super().__init__()
        self.mode = mode
        shape = (K, d_in, d_out) if mode == "cheb" else (d_in, d_out)
        self.weight = nn.Parameter(torch.empty(shape))
        bound = math.sqrt(6.0 / (d_in + d_out))
        if mode == "cheb":
            bound /= math.sqrt(K)
        nn.init.uniform_(self.weight, -bound, bound)

    def forward(self, op: torch.Tensor, H: torch.Tensor) -> torch.Tensor:
        # op is the scaled Laplacian in cheb mode, the normalized adjacency otherwise
        if self.mode == "cheb":
            return cheb_propagate(op, H, self.weight)
        return torch.relu(op @ H @ self.weight)


class ADGL(nn.Module):
    """Shallow and deep relation nets -> two dynamic graphs -> two-layer propagation each.

    ``adjacency`` selects ``dynamic`` (learned relation nets), ``raw`` (similarity
    of the pooled features themselves) or ``fixed`` (static identity-plus-uniform).
    """

    def __init__(self, n_bins: int, d_r: int = 8, d_g: int = 16, K: int = 4,
                 mode: str = "cheb", adjacency: str = "dynamic", lmax_method: str = "eigh",
                 n_layers: int = 2):
        super().__init__()
        self.shallow = nn.Sequential(nn.Linear(n_bins, d_r), nn.Tanh())
        self.deep = nn.Sequential(
            nn.Linear(n_bins, d_r), nn.GELU(),
            nn.Linear(d_r, d_r), nn.GELU(),
            nn.Linear(d_r, d_r),
        )
        dims = [n_bins] + [d_g] * n_layers
        self.gcn_shallow = nn.ModuleList(GraphConv(a, b, K, mode) for a, b in zip(dims, dims[1:]))
        self.gcn_deep = nn.ModuleList(GraphConv(a, b, K, mode) for a, b in zip(dims, dims[1:]))
        self.mode = mode
        self.adjacency = adjacency
        self.lmax_method = lmax_method

    def adjacencies(self, Yp: torch.Tensor):
        """Normalized shallow and deep adjacencies for pooled features ``(..., C, F)``."""
        if self.adjacency == "fixed":
            A = fixed_adjacency(Yp.shape[-2], Yp.dtype).expand(*Yp.shape[:-1], Yp.shape[-2])
            return A, A
        if self.adjacency == "raw":
            A = normalize_adjacency(dynamic_adjacency(Yp))
            return A, A
        return (normalize_adjacency(dynamic_adjacency(self.shallow(Yp))),
                normalize_adjacency(dynamic_adjacency(self.deep(Yp))))

    def _propagate(self, layers, A_hat, H):
        op = scaled_laplacian(A_hat, self.lmax_method) if self.mode == "cheb" else A_hat
        for layer in layers:
            H = layer(op, H)
        return H

    def forward(self, Y: torch.Tensor, return_adjacency: bool = False):
        S = Y.shape[-3]
        Yp = temporal_mean_pool(Y)
        A_s, A_d = self.adjacencies(Yp)
        H = 0.5 * (self._propagate(self.gcn_shallow, A_s, Yp)
                   + self._propagate(self.gcn_deep, A_d, Yp))
        # the fused graph features are copied to every window
        H = H.unsqueeze(-3).expand(*H.shape[:-2], S, *H.shape[-2:])
        if return_adjacency:
            return H, A_s, A_d
        return H
