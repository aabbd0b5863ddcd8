"""Subject/emotion dual encoders, subject discriminator and the adversarial objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


def aggregate(H: torch.Tensor) -> torch.Tensor:
    """Global average over windows, ``(..., S, d_h) -> (..., d_h)``."""
    return H.mean(-2)


@dataclass
class LossBreakdown:
    l_cls: float
    l_adv: float
    l_disc: float
    total: float
    lambda_adv: float
    lambda_disc: float

    @classmethod
    def combine(cls, l_cls, l_adv, l_disc, lambda_adv, lambda_disc):
        l_cls, l_adv, l_disc = float(l_cls), float(l_adv), float(l_disc)
        return cls(l_cls, l_adv, l_disc, l_cls + lambda_adv * l_adv + lambda_disc * l_disc,
                   lambda_adv, lambda_disc)


class DisentangleHead(nn.Module):
    """Emotion encoder + classifier, per-subject projection bank, discriminator and probe.

    Only the emotion path is needed at inference; the subject bank is keyed by the
    training subjects given at construction.
    """

    def __init__(self, d_h: int, d_e: int, d_s: int, n_classes: int, subject_ids,
                 disc_hidden: int = 32, subject_probe: bool = True):
        super().__init__()
        self.subject_ids = [int(s) for s in subject_ids]
        self.subject_index = {s: i for i, s in enumerate(self.subject_ids)}
        n_sub = len(self.subject_ids)
        self.subject_bank = nn.Parameter(torch.randn(n_sub, d_s, d_h) / math.sqrt(d_h))
        self.emotion_encoder = nn.Sequential(nn.Linear(d_h, d_e), nn.GELU(), nn.Linear(d_e, d_e))
        self.classifier = nn.Linear(d_e, n_classes)
        self.discriminator = nn.Sequential(
            nn.Linear(d_e, disc_hidden), nn.GELU(), nn.Linear(disc_hidden, n_sub)
        )
        self.subject_probe = nn.Linear(d_s, n_sub) if subject_probe else None

    @property
    def n_subjects(self) -> int:
        return len(self.subject_ids)

    def subject_indices(self, subject_ids) -> torch.Tensor:
        ids = torch.as_tensor(subject_ids).tolist()
        try:
            return torch.tensor([self.subject_index[int(s)] for s in ids])
        except KeyError as exc:
            raise KeyError(f"subject {exc.args[0]} has no matrix in the subject bank") from None

    def emotion_encode(self, h: torch.Tensor, subject_id=None) -> torch.Tensor:
        # subject_id is accepted and ignored: the emotion path is subject-agnostic
        return self.emotion_encoder(h)

    def subject_encode(self, h: torch.Tensor, subject_ids) -> torch.Tensor:
        M = self.subject_bank[self.subject_indices(subject_ids)]
        return (M @ h.unsqueeze(-1)).squeeze(-1)

    def disc_parameters(self):
        """Parameters trained by the discriminator step."""
        params = list(self.discriminator.parameters()) + [self.subject_bank]
        if self.subject_probe is not None:
            params += list(self.subject_probe.parameters())
        return params


def confusion_loss(logits: torch.Tensor) -> torch.Tensor:
    """Cross-entropy against the uniform distribution over classes."""
    return -F.log_softmax(logits, -1).mean(-1).mean()


def discriminator_loss(head: DisentangleHead, h: torch.Tensor, z_emo: torch.Tensor,
                       subjects) -> torch.Tensor:
    """Subject cross-entropy of the discriminator on detached ``z_emo``, plus the
    subject-probe term on ``z_sub`` computed from detached ``h``."""
    idx = head.subject_indices(subjects).to(h.device)
    loss = F.cross_entropy(head.discriminator(z_emo.detach()), idx)
    if head.subject_probe is not None:
        z_sub = head.subject_encode(h.detach(), subjects)
        loss = loss + F.cross_entropy(head.subject_probe(z_sub), idx)
    return loss


def loss_terms(model, X, labels, subjects, lambda_adv: float, lambda_disc: float):
    """Differentiable ``(l_cls, l_adv, l_disc)`` for one batch."""
    if subjects is None and (lambda_adv > 0 or lambda_disc > 0):
        raise ValueError("subject labels are required when lambda_adv or lambda_disc > 0")
    head = model.head
    h = model.embed(X)
    z_emo = head.emotion_encode(h)
    l_cls = F.cross_entropy(head.classifier(z_emo), labels)
    l_adv = confusion_loss(head.discriminator(z_emo))
    if subjects is None:
        l_disc = torch.zeros((), dtype=l_cls.dtype)
    else:
        l_disc = discriminator_loss(head, h, z_emo, subjects)
    return l_cls, l_adv, l_disc


def total_loss(batch, model, lambda_adv: float = 0.1, lambda_disc: float = 1.0) -> LossBreakdown:
    X, labels, subjects = batch
    with torch.no_grad():
        terms = loss_terms(model, X, labels, subjects, lambda_adv, lambda_disc)
    return LossBreakdown.combine(*terms, lambda_adv, lambda_disc)


class _Frozen:
    def __init__(self, params):
        self.params = [p for p in params if p.requires_grad]

    def __enter__(self):
        for p in self.params:
            p.requires_grad_(False)

    def __exit__(self, *exc):
        for p in self.params:
            p.requires_grad_(True)


def adversarial_step(batch, model, opt_main, opt_disc, lambda_adv: float = 0.1,
                     lambda_disc: float = 1.0, disc_steps: int = 1) -> LossBreakdown:
    """One alternating update: discriminator side first, then the main network.

    The discriminator side takes ``disc_steps`` updates on the same batch.

    ``opt_disc`` must own exactly ``model.head.disc_parameters()`` and ``opt_main``
    everything else.
    """
    X, labels, subjects = batch
    head = model.head

    l_disc = torch.zeros(())
    if subjects is not None and lambda_disc > 0:
        with torch.no_grad():
            h = model.embed(X)
            z_emo = head.emotion_encode(h)
        for _ in range(disc_steps):
            opt_disc.zero_grad(set_to_none=True)
            l_disc = discriminator_loss(head, h, z_emo, subjects)
            (lambda_disc * l_disc).backward()
            opt_disc.step()

    opt_main.zero_grad(set_to_none=True)
    with _Frozen(head.disc_parameters()):
        h = model.embed(X)
        z_emo = head.emotion_encode(h)
        l_cls = F.cross_entropy(head.classifier(z_emo), labels)
        l_adv = confusion_loss(head.discriminator(z_emo))
        loss = l_cls + lambda_adv * l_adv if lambda_adv > 0 else l_cls
        loss.backward()
    opt_main.step()
    return LossBreakdown.combine(l_cls.item(), l_adv.item(), l_disc.item(), lambda_adv, lambda_disc)
