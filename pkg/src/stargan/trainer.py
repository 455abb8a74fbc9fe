"""Alternating critic/generator optimisation over one or several partially-labeled datasets.

Batch order, flips, target permutations and interpolation weights are all pure
functions of (seed, global step), so a run resumed from a checkpoint replays
the uninterrupted trajectory exactly.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import losses as L
from .data import LabeledSet, epoch_order, to_nchw
from .labels import LabelUniverse, encode_unified, sample_target_labels, stack
from .netspec import stargan_discriminator_spec, stargan_generator_spec
from .networks import materialize, require_double_backward
from .seeding import np_rng, stable_hash, substream_seed, torch_rng

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
LOG_FIELDS = ("step", "net", "adv", "cls", "rec", "gp", "total", "lr")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    warm_epochs: int = 10
    decay_epochs: int = 10
    n_critic: int = 5
    batch_size: int = 16
    flip_prob: float = 0.5
    seed: int = 0
    alternation: str = "single"
    checkpoint_every: int = 0  # steps; 0 = final checkpoint only

    def __post_init__(self):
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must lie in [0, 1]")
        if self.warm_epochs < 0 or self.decay_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.alternation not in ("single", "round_robin"):
            raise ValueError(f"unknown alternation {self.alternation!r}")

    @property
    def epochs(self) -> int:
        return self.warm_epochs + self.decay_epochs


@dataclass(frozen=True)
class NetConfig:
    image_size: int = 128
    g_width: float = 1.0
    g_n_res: int = 6
    d_width: float = 1.0
    d_depth: int | None = None

    def specs(self, universe: LabelUniverse):
        g = stargan_generator_spec(universe.unified_dim, self.g_width, self.g_n_res)
        d = stargan_discriminator_spec(self.image_size, self.image_size, universe.total_label_dim,
                                       self.d_width, self.d_depth)
        return g, d


def lr_at(epoch: float, cfg: TrainConfig) -> float:
    """Constant for the warm phase, then linear decay to zero over decay_epochs."""
    if epoch < cfg.warm_epochs:
        return cfg.lr
    if cfg.decay_epochs == 0:
        return 0.0
    frac = (epoch - cfg.warm_epochs) / cfg.decay_epochs
    return cfg.lr * max(0.0, 1.0 - frac)


class StarGAN:
    """Generator/discriminator pair plus their optimisers and the step counter."""

    def __init__(self, universe: LabelUniverse, net_cfg: NetConfig, train_cfg: TrainConfig,
                 loss_cfg: L.LossConfig):
        if loss_cfg.adv_variant == L.WGAN_GP and loss_cfg.lambda_gp > 0:
            require_double_backward()
        self.universe, self.net_cfg = universe, net_cfg
        self.train_cfg, self.loss_cfg = train_cfg, loss_cfg
        self.g_spec, self.d_spec = net_cfg.specs(universe)
        self.G = materialize(self.g_spec, substream_seed(train_cfg.seed, "init", 0))
        self.D = materialize(self.d_spec, substream_seed(train_cfg.seed, "init", 1))
        betas = (train_cfg.beta1, train_cfg.beta2)
        self.g_opt = torch.optim.Adam(self.G.parameters(), train_cfg.lr, betas)
        self.d_opt = torch.optim.Adam(self.D.parameters(), train_cfg.lr, betas)
        self.step = 0

    def set_lr(self, lr: float) -> None:
        for opt in (self.g_opt, self.d_opt):
            for group in opt.param_groups:
                group["lr"] = lr

    def config_dict(self) -> dict:
        return {
            "universe": self.universe.to_dict(),
            "net": asdict(self.net_cfg),
            "train": asdict(self.train_cfg),
            "losses": asdict(self.loss_cfg),
        }

    @property
    def config_hash(self) -> str:
        return stable_hash(self.config_dict())

    # -- checkpoints

    def state_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config_hash": self.config_hash,
            "config": self.config_dict(),
            "step": self.step,
            "rng": {"scheme": "derived-from-seed-and-step", "seed": self.train_cfg.seed},
            "G": self.G.state_dict(),
            "D": self.D.state_dict(),
            "g_opt": self.g_opt.state_dict(),
            "d_opt": self.d_opt.state_dict(),
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.state_dict(), path)
        return path

    def load_state(self, state: dict) -> None:
        if state.get("version") != CHECKPOINT_VERSION:
            raise TrainingError(f"unsupported checkpoint version {state.get('version')}")
        if state["config_hash"] != self.config_hash:
            raise TrainingError(
                f"checkpoint config hash {state['config_hash']} does not match run config {self.config_hash}")
        self.G.load_state_dict(state["G"])
        self.D.load_state_dict(state["D"])
        self.g_opt.load_state_dict(state["g_opt"])
        self.d_opt.load_state_dict(state["d_opt"])
        self.step = int(state["step"])

    @classmethod
    def from_checkpoint(cls, path) -> "StarGAN":
        state = torch.load(path, map_location="cpu", weights_only=False)
        c = state["config"]
        model = cls(LabelUniverse.from_dict(c["universe"]), NetConfig(**c["net"]),
                    TrainConfig(**c["train"]), L.LossConfig(**c["losses"]))
        model.load_state(state)
        return model


def _check_finite(parts: L.LossBreakdown, net: str, step: int) -> None:
    vals = parts.detached()
    if not all(math.isfinite(getattr(vals, f)) for f in ("adv", "cls", "rec", "gp", "total")):
        raise TrainingError(f"non-finite {net} loss at step {step}: {vals}")


def _adv_gan_from_logits(real_logits, fake_logits):
    # log(sigmoid(z)) and log(1 - sigmoid(z)) without saturating to log(0)
    real = F.logsigmoid(real_logits).mean() if real_logits is not None else 0.0
    return real + F.logsigmoid(-fake_logits).mean()


def d_step(model: StarGAN, x: torch.Tensor, c_org: torch.Tensor, c_trg: torch.Tensor,
           origin: int, rng: torch.Generator) -> L.LossBreakdown:
    cfg = model.loss_cfg
    G, D = model.G, model.D
    D.requires_grad_(True)
    src_real, cls_real = D(x)
    with torch.no_grad():
        fake = G(x, c_trg)
    src_fake, _ = D(fake)
    cls_r = L.cls_loss(cls_real, c_org, model.universe, origin)
    if cfg.adv_variant == L.WGAN_GP:
        adv = src_real.mean() - src_fake.mean()
        gp = torch.zeros(())
        if cfg.lambda_gp > 0:
            x_hat, _ = L.interpolate(x, fake, rng)
            gp = L.gp_term(L.gradient_norms(lambda t: D(t)[0], x_hat))
    else:
        adv = _adv_gan_from_logits(src_real, src_fake)
        gp = torch.zeros(())
    parts = L.total_d_loss(adv, cls_r, gp, cfg)
    _check_finite(parts, "D", model.step)
    model.d_opt.zero_grad(set_to_none=True)
    parts.total.backward()
    model.d_opt.step()
    return parts


def g_step(model: StarGAN, x: torch.Tensor, c_org: torch.Tensor, c_trg: torch.Tensor,
           trg_origin: int) -> L.LossBreakdown:
    cfg = model.loss_cfg
    G, D = model.G, model.D
    D.requires_grad_(False)
    try:
        fake = G(x, c_trg)
        src_fake, cls_fake = D(fake)
        adv = -src_fake.mean() if cfg.adv_variant == L.WGAN_GP else _adv_gan_from_logits(None, src_fake)
        cls_f = L.cls_loss(cls_fake, c_trg, model.universe, trg_origin)
        rec = L.rec_loss(x, G(fake, c_org)) if cfg.lambda_rec > 0 else torch.zeros(())
        parts = L.total_g_loss(adv, cls_f, rec, cfg)
        _check_finite(parts, "G", model.step)
        model.g_opt.zero_grad(set_to_none=True)
        parts.total.backward()
        model.g_opt.step()
    finally:
        D.requires_grad_(True)
    return parts


def train_step(model: StarGAN, images: np.ndarray, labels: np.ndarray, origin: int,
               ) -> tuple[L.LossBreakdown, L.LossBreakdown | None]:
    """One critic update and, on every n_critic-th call, one generator update.

    ``images`` is a channels-last batch already augmented; ``labels`` are the
    origin dataset's raw label vectors.
    """
    seed = model.train_cfg.seed
    org = [encode_unified(lab, origin, model.universe) for lab in labels]
    trg = sample_target_labels(org, np_rng(seed, "targets", model.step))
    c_org, c_trg = stack(org), stack(trg)
    x = to_nchw(images)
    d_parts = d_step(model, x, c_org, c_trg, origin, torch_rng(seed, "interp", model.step))
    g_parts = None
    if (model.step + 1) % model.train_cfg.n_critic == 0:
        g_parts = g_step(model, x, c_org, c_trg, trg[0].origin)
    model.step += 1
    return d_parts, g_parts


@dataclass
class Schedule:
    """Maps a global step to (dataset, batch indices, epoch)."""

    sizes: Sequence[int]
    batch_size: int
    seed: int

    def __post_init__(self):
        self.per_dataset = [n // self.batch_size for n in self.sizes]
        if min(self.per_dataset) < 1:
            raise TrainingError(
                f"batch_size {self.batch_size} exceeds a dataset size {min(self.sizes)}")
        self.n = len(self.sizes)
        self.steps_per_epoch = self.n * max(self.per_dataset)

    def dataset_at(self, step: int) -> int:
        return step % self.n

    def batch_at(self, step: int) -> tuple[int, np.ndarray]:
        i, k = step % self.n, step // self.n
        nb = self.per_dataset[i]
        order = epoch_order(self.sizes[i], self.batch_size, np_rng(self.seed, "data", i, k // nb))
        return i, order[k % nb]

    def epoch_of(self, step: int) -> int:
        return step // self.steps_per_epoch


def flip_batch(images: np.ndarray, prob: float, rng: np.random.Generator) -> np.ndarray:
    flips = rng.random(len(images)) < prob
    if not flips.any():
        return images
    out = images.copy()
    out[flips] = out[flips, :, ::-1]
    return out


@dataclass
class TrainResult:
    model: StarGAN
    log: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


def validate_datasets(datasets: Sequence[LabeledSet], universe: LabelUniverse, cfg: TrainConfig) -> None:
    if not datasets:
        raise TrainingError("no datasets given")
    if len(datasets) != universe.n:
        raise TrainingError(f"{len(datasets)} datasets for a universe of {universe.n}")
    for ds, spec in zip(datasets, universe.datasets):
        if ds.spec != spec:
            raise TrainingError(f"dataset {ds.spec.name!r} does not match universe entry {spec.name!r}")
        if ds.labels.shape[1] != spec.dim:
            raise TrainingError(f"dataset {spec.name!r} labels have width {ds.labels.shape[1]}")
    sizes = {ds.image_size for ds in datasets}
    if len(sizes) != 1:
        raise TrainingError(f"datasets disagree on image size: {sorted(sizes)}")
    if universe.n >= 2 and cfg.alternation != "round_robin":
        raise TrainingError("joint training over several datasets requires alternation=round_robin")
    if universe.n == 1 and cfg.alternation != "single":
        raise TrainingError("alternation=round_robin needs at least two datasets")


def write_log(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        w.writerows(rows)


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _row(step: int, net: str, parts: L.LossBreakdown, lr: float) -> dict:
    p = parts.detached()
    return {"step": step, "net": net, "adv": repr(p.adv), "cls": repr(p.cls), "rec": repr(p.rec),
            "gp": repr(p.gp), "total": repr(p.total), "lr": repr(lr)}


def train(datasets: Sequence[LabeledSet], universe: LabelUniverse, cfg: TrainConfig,
          loss_cfg: L.LossConfig, net_cfg: NetConfig, out_dir=None, resume=None,
          max_steps: int | None = None, model: StarGAN | None = None) -> TrainResult:
    """Run (or continue) training; returns the model and the loss log rows of this call.

    With ``out_dir`` the loss log is written to ``out_dir/loss_log.csv`` (appended
    to on resume) and checkpoints to ``out_dir/checkpoints/step_XXXXXXX.pt``.
    """
    validate_datasets(datasets, universe, cfg)
    if net_cfg.image_size != datasets[0].image_size[0]:
        raise TrainingError(
            f"net image_size {net_cfg.image_size} != dataset image size {datasets[0].image_size}")
    torch.use_deterministic_algorithms(True)
    if model is None:
        model = StarGAN(universe, net_cfg, cfg, loss_cfg)
    if resume is not None:
        model.load_state(torch.load(resume, map_location="cpu", weights_only=False))
        log.info("resumed from %s at step %d", resume, model.step)
    sched = Schedule([len(d) for d in datasets], cfg.batch_size, cfg.seed)
    total = cfg.epochs * sched.steps_per_epoch
    if max_steps is not None:
        total = min(total, max_steps)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "loss_log.csv"
        if resume is None or not log_path.exists():
            write_log([], log_path)
        else:
            kept = [r for r in read_log(log_path) if int(r["step"]) < model.step]
            write_log(kept, log_path)

    result = TrainResult(model)
    fh = open(log_path, "a", newline="") if log_path else None
    writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS) if fh else None
    try:
        while model.step < total:
            step = model.step
            lr = lr_at(sched.epoch_of(step), cfg)
            model.set_lr(lr)
            i, idx = sched.batch_at(step)
            images = flip_batch(datasets[i].images[idx], cfg.flip_prob, np_rng(cfg.seed, "flip", step))
            d_parts, g_parts = train_step(model, images, datasets[i].labels[idx], i)
            rows = [_row(step, "D", d_parts, lr)]
            if g_parts is not None:
                rows.append(_row(step, "G", g_parts, lr))
            result.log.extend(rows)
            if writer:
                writer.writerows(rows)
            if out_dir is not None and cfg.checkpoint_every and model.step % cfg.checkpoint_every == 0:
                fh.flush()
                model.save(out_dir / "checkpoints" / f"step_{model.step:07d}.pt")
    finally:
        if fh:
            fh.close()
    if out_dir is not None:
        result.checkpoint = model.save(out_dir / "checkpoints" / "final.pt")
    return result
