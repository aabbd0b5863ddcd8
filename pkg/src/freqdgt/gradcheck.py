"""Central finite-difference checks of analytic gradients for every trainable tensor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import RunConfig
from .disentangle import loss_terms
from .features import band_masks
from .model import FreqDGT


@dataclass
class TensorCheck:
    name: str
    numel: int
    max_rel_err: float
    max_abs_grad: float
    passed: bool


def check_gradients(loss_fn, named_params, eps: float = 1e-5, tol: float = 1e-5,
                    corrupt=None, floor: float = 1e-10) -> list[TensorCheck]:
    """Compare autograd against central differences, one tensor at a time.

    The error of a tensor is ``max|g_auto - g_fd| / max(|g_auto|_inf, |g_fd|_inf, floor)``.
    ``floor`` only matters for tensors whose gradient is zero up to rounding, where
    a purely relative error is undefined. ``corrupt`` maps ``(name, grad) -> grad``
    and exists to test that bad gradients get flagged.
    """
    named_params = [(n, p) for n, p in named_params if p.requires_grad]
    params = [p for _, p in named_params]
    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    report = []
    for (name, p), g in zip(named_params, grads):
        g = torch.zeros_like(p) if g is None else g.detach().clone()
        if corrupt is not None:
            g = corrupt(name, g)
        fd = torch.zeros_like(p)
        flat, fd_flat = p.data.view(-1), fd.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                fd_flat[i] = (up - down) / (2 * eps)
        scale = max(g.abs().max().item(), fd.abs().max().item())
        err = (g - fd).abs().max().item() / max(scale, floor)
        report.append(TensorCheck(name, p.numel(), err, scale, err < tol))
    return report


def micro_config(**overrides) -> RunConfig:
    base = dict(n_classes=2, scales=[1, 2], cheb_order=4, d_g=3, d_h=8, d_r=3, d_e=4, d_s=3,
                n_heads=4, fap_hidden=4, disc_hidden=5, dtype="float64")
    base.update(overrides)
    cfg = RunConfig(**base)
    cfg.validate()
    return cfg


MICRO_BINS = np.array([2.0, 3.0, 5.0, 6.0, 9.0, 11.0, 15.0, 22.0, 35.0, 42.0])


def micro_problem(cfg: RunConfig, S: int = 4, C: int = 4, batch: int = 6, seed: int = 0,
                  param_scale: float | None = None):
    """A tiny model and random batch for gradient checks.

    With ``param_scale`` every parameter is redrawn from N(0, param_scale^2), moving
    the check away from the near-degenerate initial point where many gradients
    are too small to resolve by finite differences.
    """
    if S > 6 or C > 4:
        raise ValueError("gradient checks use S <= 6 and C <= 4")
    torch.manual_seed(seed)
    gen = np.random.default_rng(seed)
    masks = band_masks(MICRO_BINS).masks
    subjects = [0, 1, 2]
    model = FreqDGT(cfg, masks, C, subjects).double()
    if param_scale is not None:
        gen_t = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in model.parameters():
                p.copy_(torch.randn(p.shape, generator=gen_t, dtype=p.dtype) * param_scale)
    X = torch.as_tensor(gen.dirichlet(np.ones(len(MICRO_BINS)), size=(batch, S, C)))
    y = torch.as_tensor(gen.integers(0, cfg.n_classes, batch))
    s = torch.as_tensor(np.resize(subjects, batch))
    return model, (X, y, s)


def grad_check(cfg: RunConfig | None = None, eps: float = 1e-5, tol: float = 1e-5,
               seed: int = 0, corrupt=None, param_scale: float | None = 0.5) -> list[TensorCheck]:
    """Check every trainable tensor of the micro model.

    Tensors trained by the main step are checked against ``L_cls + lambda_adv L_adv``;
    the discriminator, subject bank and probe against the full ``L_total``. The
    discriminator term ``L_disc`` sees a detached ``z_emo``, so it contributes no
    autograd gradient to the main tensors by construction.
    """
    cfg = cfg or micro_config()
    model, (X, y, s) = micro_problem(cfg, seed=seed, param_scale=param_scale)
    la, ld = cfg.lambda_adv, cfg.lambda_disc

    def main_loss():
        l_cls, l_adv, _ = loss_terms(model, X, y, s, la, ld)
        return l_cls + la * l_adv

    def full_loss():
        l_cls, l_adv, l_disc = loss_terms(model, X, y, s, la, ld)
        return l_cls + la * l_adv + ld * l_disc

    disc_ids = {id(p) for p in model.head.disc_parameters()}
    named = list(model.named_parameters())
    main = [(n, p) for n, p in named if id(p) not in disc_ids]
    disc = [(n, p) for n, p in named if id(p) in disc_ids]
    return (check_gradients(main_loss, main, eps, tol, corrupt)
            + check_gradients(full_loss, disc, eps, tol, corrupt))


def format_report(report: list[TensorCheck]) -> str:
    lines = [f"{'tensor':<48} {'numel':>6} {'max rel err':>12}  status"]
    for r in report:
        lines.append(f"{r.name:<48} {r.numel:>6} {r.max_rel_err:12.3e}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"
