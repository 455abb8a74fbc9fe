"""Adversarial, domain-classification, reconstruction and gradient-penalty terms.

Every term reduces by the mean over batch and spatial/attribute positions.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

from .labels import BINARY, LabelError, LabelUniverse, UnifiedLabel

GAN = "gan"
WGAN_GP = "wgan_gp"


@dataclass(frozen=True)
class LossConfig:
    lambda_cls: float = 1.0
    lambda_rec: float = 10.0
    lambda_gp: float = 10.0
    adv_variant: str = WGAN_GP

    def __post_init__(self):
        for f in ("lambda_cls", "lambda_rec", "lambda_gp"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")
        if self.adv_variant not in (GAN, WGAN_GP):
            raise ValueError(f"unknown adversarial variant {self.adv_variant!r}")


@dataclass
class LossBreakdown:
    """Raw (unweighted) terms and the weighted total. Fields hold tensors during a step."""

    adv: torch.Tensor | float = 0.0
    cls: torch.Tensor | float = 0.0
    rec: torch.Tensor | float = 0.0
    gp: torch.Tensor | float = 0.0
    total: torch.Tensor | float = 0.0

    def detached(self) -> "LossBreakdown":
        def scalar(v):
            return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        return LossBreakdown(**{f.name: scalar(getattr(self, f.name)) for f in fields(self)})


def adv_loss_gan(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """mean log D(x) + mean log(1 - D(G(x,c))) over batch and patch grid; inputs are probabilities."""
    for name, t in (("d_real", d_real), ("d_fake", d_fake)):
        if t.numel() and not bool(((t > 0) & (t < 1)).all()):
            raise ValueError(f"{name} must lie strictly inside (0, 1); apply a sigmoid first")
    return torch.log(d_real).mean() + torch.log1p(-d_fake).mean()


def gp_term(grad_norms: torch.Tensor) -> torch.Tensor:
    return (grad_norms - 1.0).pow(2).mean()


def adv_loss_wgan_gp(d_real: torch.Tensor, d_fake: torch.Tensor, grad_norms: torch.Tensor,
                     cfg: LossConfig) -> torch.Tensor:
    """Critic objective (to be maximised): mean D(x) - mean D(G) - lambda_gp * mean((|grad|-1)^2)."""
    return d_real.mean() - d_fake.mean() - cfg.lambda_gp * gp_term(grad_norms)


def interpolate(real: torch.Tensor, fake: torch.Tensor,
                rng: torch.Generator | None = None,
                eps: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample uniform points on the segment between paired real and fake images."""
    if real.shape != fake.shape:
        raise ValueError(f"shape mismatch {tuple(real.shape)} vs {tuple(fake.shape)}")
    if eps is None:
        eps = torch.rand(real.size(0), generator=rng, dtype=real.dtype)
    e = eps.view(-1, *([1] * (real.dim() - 1)))
    return e * real + (1 - e) * fake, eps


def gradient_norms(critic: Callable[[torch.Tensor], torch.Tensor], x_hat: torch.Tensor) -> torch.Tensor:
    """Per-sample L2 norm of d critic(x_hat).sum() / d x_hat, kept in the graph."""
    if not x_hat.requires_grad:
        x_hat = x_hat.detach().requires_grad_(True)
    out = critic(x_hat)
    (grad,) = torch.autograd.grad(out, x_hat, grad_outputs=torch.ones_like(out),
                                  create_graph=True, retain_graph=True)
    return grad.flatten(1).norm(2, dim=1)


def _labels_and_origin(labels, universe: LabelUniverse, origin: int | None) -> tuple[torch.Tensor, int]:
    if isinstance(labels, torch.Tensor):
        values = labels
        if origin is None:
            if universe.has_mask:
                origins = values[:, universe.total_label_dim:].argmax(1).unique()
                if origins.numel() != 1:
                    raise LabelError(f"batch mixes label origins {origins.tolist()}")
                origin = int(origins[0])
            else:
                origin = 0
        return values, origin
    labels = list(labels)
    origins = {lab.origin for lab in labels}
    if len(origins) != 1:
        raise LabelError(f"batch mixes label origins {sorted(origins)}")
    values = torch.stack([torch.from_numpy(lab.values) for lab in labels])
    return values, origins.pop()


def cls_loss(logits: torch.Tensor, labels: Sequence[UnifiedLabel] | torch.Tensor,
             universe: LabelUniverse, origin: int | None = None) -> torch.Tensor:
    """Classification loss restricted to the origin dataset's logit slice.

    ``logits`` has shape (B, total_label_dim) (any trailing 1x1 spatial dims are
    flattened). Binary-attribute slices use per-attribute sigmoid cross-entropy,
    categorical slices softmax cross-entropy. Logits outside the slice receive
    exactly zero gradient.
    """
    values, origin = _labels_and_origin(labels, universe, origin)
    logits = logits.flatten(1)
    if logits.size(1) != universe.total_label_dim:
        raise ValueError(f"expected {universe.total_label_dim} logits, got {logits.size(1)}")
    sl = universe.slice_of(origin)
    lg, target = logits[:, sl], values[:, sl].to(logits.dtype)
    if universe.datasets[origin].kind == BINARY:
        return F.binary_cross_entropy_with_logits(lg, target)
    return F.cross_entropy(lg, target.argmax(1))


def rec_loss(x: torch.Tensor, x_rec: torch.Tensor) -> torch.Tensor:
    if x.shape != x_rec.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(x_rec.shape)}")
    return (x - x_rec).abs().mean()


def total_d_loss(adv, cls, gp, cfg: LossConfig) -> LossBreakdown:
    """Discriminator objective: -L_adv + lambda_cls * L_cls^r.

    ``adv`` is the critic's raw real-minus-fake score (or the log-likelihood sum
    for the gan variant) and ``gp`` the unweighted penalty, so that
    L_adv = adv - lambda_gp * gp.
    """
    total = -adv + cfg.lambda_gp * gp + cfg.lambda_cls * cls
    return LossBreakdown(adv=adv, cls=cls, rec=0.0, gp=gp, total=total)


def total_g_loss(adv, cls, rec, cfg: LossConfig) -> LossBreakdown:
    """Generator objective: L_adv + lambda_cls * L_cls^f + lambda_rec * L_rec."""
    total = adv + cfg.lambda_cls * cls + cfg.lambda_rec * rec
    return LossBreakdown(adv=adv, cls=cls, rec=rec, gp=0.0, total=total)
