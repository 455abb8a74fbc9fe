"""Classification-error protocol, parameter report, translation grids and the mask probe."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from PIL import Image
from torch import nn

from .data import LabeledSet, denormalize, to_nchw
from .labels import BINARY, CATEGORICAL, DatasetSpec, LabelUniverse, encode_unified, encode_with_mask_override
from .netspec import PAPER_PARAMS, NetworkSpec, infer_shapes_and_params
from .seeding import torch_rng

log = logging.getLogger(__name__)

Classifier = Callable[[torch.Tensor], np.ndarray]


@dataclass
class EvalReport:
    classification_error: float = float("nan")
    per_domain_errors: list[float] = field(default_factory=list)
    per_domain_counts: list[int] = field(default_factory=list)
    domain_names: list[str] = field(default_factory=list)
    n_images: int = 0
    params_generator: int = 0
    params_discriminator: int = 0
    params_total: int = 0
    classifier_accuracy: float | None = None
    trusted: bool = True
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def uniform_mean_error(self) -> float:
        return float(np.mean(self.per_domain_errors)) if self.per_domain_errors else float("nan")

    def to_json(self) -> str:
        d = asdict(self)
        d["uniform_mean_error"] = self.uniform_mean_error
        return json.dumps(d, indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def markdown(self, method: str = "StarGAN") -> str:
        rows = ["| Method | Classification error | # of parameters |", "|---|---|---|"]
        err = "n/a" if np.isnan(self.classification_error) else f"{100 * self.classification_error:.2f}%"
        rows.append(f"| {method} | {err} | {self.params_total / 1e6:.1f}M x 1 |")
        return "\n".join(rows) + "\n"


def domain_targets(spec: DatasetSpec) -> list[np.ndarray]:
    """All one-hots for a categorical dataset, all on/off combinations for binary attributes."""
    k = spec.dim
    if spec.kind == CATEGORICAL:
        return [np.eye(k, dtype=np.float32)[i] for i in range(k)]
    return [np.array([(j >> b) & 1 for b in range(k)], dtype=np.float32) for j in range(2 ** k)]


def target_name(spec: DatasetSpec, target: np.ndarray) -> str:
    on = [n for n, v in zip(spec.label_names, target) if v > 0.5]
    if spec.kind == CATEGORICAL:
        return on[0]
    return "+".join(on) if on else "none"


# ---------------------------------------------------------------- classifier

class DomainClassifier(nn.Module):
    """Four conv layers and a linear readout; multi-label for binary specs, softmax otherwise."""

    def __init__(self, spec: DatasetSpec, image_size: int, width: int = 16):
        super().__init__()
        self.spec = spec
        layers, c, size = [], 3, image_size
        for i in range(4):
            stride = 2 if size > 2 else 1
            layers += [nn.Conv2d(c, width * 2 ** min(i, 2), 3, stride, 1), nn.LeakyReLU(0.01)]
            c = width * 2 ** min(i, 2)
            size = (size + 1) // stride
        self.features = nn.Sequential(*layers, nn.AdaptiveAvgPool2d(1), nn.Flatten())
        self.head = nn.Linear(c, spec.dim)

    def forward(self, x):
        return self.head(self.features(x))

    @torch.no_grad()
    def __call__(self, x) -> np.ndarray:  # type: ignore[override]
        if isinstance(x, np.ndarray):
            x = to_nchw(x)
        logits = self.forward(x)
        if self.spec.kind == BINARY:
            return (logits > 0).float().numpy()
        out = np.zeros(logits.shape, dtype=np.float32)
        out[np.arange(len(out)), logits.argmax(1).numpy()] = 1.0
        return out


def label_accuracy(classifier: Classifier, images: np.ndarray, labels: np.ndarray) -> float:
    pred = classifier(to_nchw(images))
    return float((pred == labels).all(1).mean())


@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    holdout_fraction: float = 0.1
    accuracy_floor: float = 0.95
    seed: int = 0


def train_eval_classifier(train_set: LabeledSet, spec: DatasetSpec, cfg: ClassifierConfig = ClassifierConfig(),
                          oracle: Classifier | None = None) -> tuple[Classifier, float, bool]:
    """Returns (classifier, held-out accuracy, trusted).

    With an oracle no training happens; its accuracy is measured on the full set.
    Otherwise a 90/10 split trains a DomainClassifier.
    """
    present = {tuple(l) for l in train_set.labels}
    if len(present) < 2:
        raise ValueError("classification error is undefined for a dataset with fewer than two domains")
    if oracle is not None:
        acc = label_accuracy(oracle, train_set.images, train_set.labels)
        return oracle, acc, acc >= cfg.accuracy_floor
    torch.manual_seed(cfg.seed)
    gen = torch_rng(cfg.seed, "eval", 0)
    n = len(train_set)
    perm = torch.randperm(n, generator=gen).numpy()
    n_test = max(1, int(round(n * cfg.holdout_fraction)))
    test, train = train_set.subset(perm[:n_test]), train_set.subset(perm[n_test:])
    model = DomainClassifier(spec, train_set.image_size[0])
    opt = torch.optim.Adam(model.parameters(), cfg.lr)
    x_all, y_all = to_nchw(train.images), torch.from_numpy(train.labels)
    for _ in range(cfg.epochs):
        order = torch.randperm(len(train), generator=gen)
        for i in range(0, len(train), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            logits = model.forward(x_all[idx])
            if spec.kind == BINARY:
                loss = nn.functional.binary_cross_entropy_with_logits(logits, y_all[idx])
            else:
                loss = nn.functional.cross_entropy(logits, y_all[idx].argmax(1))
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    acc = label_accuracy(model, test.images, test.labels)
    trusted = acc >= cfg.accuracy_floor
    if not trusted:
        log.warning("evaluation classifier accuracy %.3f is below the floor %.3f; report untrusted",
                    acc, cfg.accuracy_floor)
    return model, acc, trusted


# ---------------------------------------------------------------- translation error

@torch.no_grad()
def translate(generator: nn.Module, images: np.ndarray, unified: np.ndarray, batch_size: int = 64) -> torch.Tensor:
    """Translate channels-last images with one unified label vector (or one per image)."""
    x = to_nchw(images)
    c = torch.as_tensor(np.asarray(unified, dtype=np.float32))
    if c.dim() == 1:
        c = c.expand(len(x), -1)
    return torch.cat([generator(x[i:i + batch_size], c[i:i + batch_size])
                      for i in range(0, len(x), batch_size)]) if len(x) else x


def classification_error_of_translations(generator: nn.Module, test_set: LabeledSet, universe: LabelUniverse,
                                         target_origin: int, classifier: Classifier,
                                         targets: Sequence[np.ndarray] | None = None) -> EvalReport:
    """Translate every test image to every target of dataset ``target_origin`` and classify."""
    if len(test_set) == 0:
        raise ValueError("empty test set")
    spec = universe.datasets[target_origin]
    targets = list(targets) if targets is not None else domain_targets(spec)
    errors, counts, names = [], [], []
    for t in targets:
        unified = encode_unified(t, target_origin, universe).values
        pred = classifier(translate(generator, test_set.images, unified))
        errors.append(float((pred != t[None]).any(1).mean()))
        counts.append(len(test_set))
        names.append(target_name(spec, t))
    weighted = float(np.dot(errors, counts) / np.sum(counts))
    return EvalReport(classification_error=weighted, per_domain_errors=errors, per_domain_counts=counts,
                      domain_names=names, n_images=int(np.sum(counts)))


@torch.no_grad()
def reconstruction_error(generator: nn.Module, test_set: LabeledSet, universe: LabelUniverse, origin: int,
                         target_origin: int | None = None) -> float:
    """Mean L1 between x and G(G(x, c), c') over all targets c of ``target_origin``."""
    target_origin = origin if target_origin is None else target_origin
    x = to_nchw(test_set.images)
    c_org = torch.from_numpy(np.stack([encode_unified(l, origin, universe).values for l in test_set.labels]))
    errs = []
    for t in domain_targets(universe.datasets[target_origin]):
        c = torch.from_numpy(encode_unified(t, target_origin, universe).values).expand(len(x), -1)
        errs.append((generator(generator(x, c), c_org) - x).abs().mean().item())
    return float(np.mean(errs))


def param_report(g_spec: NetworkSpec, d_spec: NetworkSpec, h: int, w: int,
                 reference: float = PAPER_PARAMS) -> dict:
    g = infer_shapes_and_params(g_spec, h, w).total_params
    d = infer_shapes_and_params(d_spec, h, w).total_params
    total = g + d
    return {
        "params_generator": g,
        "params_discriminator": d,
        "params_total": total,
        "reference": reference,
        "relative_diff": (total - reference) / reference if reference else None,
    }


# ---------------------------------------------------------------- grids

def grid_array(columns: Sequence[np.ndarray]) -> np.ndarray:
    """Tile columns of (N,h,w,3) [-1,1] images into one uint8 (N*h, C*w, 3) array."""
    cols = [denormalize(np.asarray(c)) for c in columns]
    n, h, w, _ = cols[0].shape
    out = np.zeros((n * h, len(cols) * w, 3), dtype=np.uint8)
    for j, col in enumerate(cols):
        for i in range(n):
            out[i * h:(i + 1) * h, j * w:(j + 1) * w] = col[i]
    return out


def emit_grid(generator: nn.Module, inputs: np.ndarray, target_labels: Sequence[np.ndarray], out_path) -> np.ndarray:
    """Column 0 holds the inputs; column j>0 the translation to target_labels[j-1] (unified vectors)."""
    columns = [inputs]
    for lab in target_labels:
        columns.append(translate(generator, inputs, lab).permute(0, 2, 3, 1).numpy())
    arr = grid_array(columns)
    out_path = Path(out_path)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr).save(out_path)
    except OSError as e:
        raise OSError(f"cannot write grid to {out_path}: {e}") from e
    return arr


def mask_probe(generator: nn.Module, universe: LabelUniverse, inputs: np.ndarray, target_origin: int,
               classifier: Classifier, out_path=None, wrong_mask_origin: int | None = None) -> dict:
    """Translate under the proper mask and under a wrong mask; report per-row classifier error."""
    if not universe.has_mask:
        raise ValueError("the mask probe needs a generator trained jointly on >= 2 datasets")
    if wrong_mask_origin is None:
        wrong_mask_origin = next(i for i in range(universe.n) if i != target_origin)
    if wrong_mask_origin == target_origin:
        raise ValueError("the wrong mask must point at a different dataset")
    spec = universe.datasets[target_origin]
    proper_mask = np.eye(universe.n, dtype=np.float32)[target_origin]
    wrong_mask = np.eye(universe.n, dtype=np.float32)[wrong_mask_origin]
    rows = {"proper": [], "wrong": []}
    errors = {"proper": [], "wrong": []}
    targets = domain_targets(spec)
    for t in targets:
        for key, mask in (("proper", proper_mask), ("wrong", wrong_mask)):
            vec = encode_with_mask_override(t, target_origin, mask, universe)
            out = translate(generator, inputs, vec)
            errors[key].append(float((classifier(out) != t[None]).any(1).mean()))
            rows[key].append(out.permute(0, 2, 3, 1).numpy())
    chance = 1.0 - 1.0 / len(targets)
    result = {
        "proper_mask": proper_mask.tolist(),
        "wrong_mask": wrong_mask.tolist(),
        "targets": [target_name(spec, t) for t in targets],
        "proper_error": float(np.mean(errors["proper"])),
        "wrong_error": float(np.mean(errors["wrong"])),
        "proper_per_target": errors["proper"],
        "wrong_per_target": errors["wrong"],
        "chance_error": chance,
    }
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        for key in ("proper", "wrong"):
            arr = grid_array([inputs] + rows[key])
            Image.fromarray(arr).save(out_path.with_name(f"{out_path.stem}_{key}{out_path.suffix or '.png'}"))
    return result
