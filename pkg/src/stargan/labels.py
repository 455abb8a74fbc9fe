"""Domain labels: per-dataset label specs, the unified label vector and mask."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

BINARY = "binary_attributes"
CATEGORICAL = "categorical"


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    kind: str
    label_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "label_names", tuple(self.label_names))
        if self.kind not in (BINARY, CATEGORICAL):
            raise LabelError(f"unknown label kind {self.kind!r}")
        if len(self.label_names) < 1:
            raise LabelError(f"dataset {self.name!r} declares no labels")
        if len(set(self.label_names)) != len(self.label_names):
            raise LabelError(f"dataset {self.name!r} has duplicate label names")

    @property
    def dim(self) -> int:
        return len(self.label_names)

    def validate(self, label) -> np.ndarray:
        v = np.asarray(label, dtype=np.float32).reshape(-1)
        if v.shape[0] != self.dim:
            raise LabelError(
                f"label for {self.name!r} has length {v.shape[0]}, expected {self.dim}")
        if not np.all((v == 0) | (v == 1)):
            raise LabelError(f"label for {self.name!r} has entries outside {{0,1}}: {v.tolist()}")
        if self.kind == CATEGORICAL and v.sum() != 1:
            raise LabelError(f"categorical label for {self.name!r} is not one-hot: {v.tolist()}")
        return v

    def one_hot(self, name: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float32)
        v[self.index(name)] = 1.0
        return v

    def index(self, name: str) -> int:
        try:
            return self.label_names.index(name)
        except ValueError:
            raise LabelError(
                f"unknown label {name!r} for {self.name!r}; valid: {', '.join(self.label_names)}"
            ) from None

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "label_names": list(self.label_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(d["name"], d["kind"], tuple(d["label_names"]))


@dataclass(frozen=True)
class LabelUniverse:
    """Ordered datasets whose label slices are concatenated, then the mask."""

    datasets: tuple[DatasetSpec, ...]
    offsets: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "datasets", tuple(self.datasets))
        if not self.datasets:
            raise LabelError("a label universe needs at least one dataset")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise LabelError(f"duplicate dataset names: {names}")
        offsets, pos = [], 0
        for d in self.datasets:
            offsets.append(pos)
            pos += d.dim
        object.__setattr__(self, "offsets", tuple(offsets))

    @property
    def n(self) -> int:
        return len(self.datasets)

    @property
    def total_label_dim(self) -> int:
        return sum(d.dim for d in self.datasets)

    @property
    def has_mask(self) -> bool:
        return self.n >= 2

    @property
    def unified_dim(self) -> int:
        return self.total_label_dim + (self.n if self.has_mask else 0)

    def slice_of(self, origin: int) -> slice:
        self._check_origin(origin)
        start = self.offsets[origin]
        return slice(start, start + self.datasets[origin].dim)

    def dataset_index(self, name: str) -> int:
        for i, d in enumerate(self.datasets):
            if d.name == name:
                return i
        raise LabelError(f"unknown dataset {name!r}; valid: {', '.join(d.name for d in self.datasets)}")

    def _check_origin(self, origin: int):
        if not 0 <= origin < self.n:
            raise LabelError(f"dataset index {origin} outside [0, {self.n})")

    def to_dict(self) -> dict:
        return {"datasets": [d.to_dict() for d in self.datasets]}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelUniverse":
        return cls(tuple(DatasetSpec.from_dict(x) for x in d["datasets"]))


@dataclass(frozen=True, eq=False)
class UnifiedLabel:
    values: np.ndarray
    origin: int

    def __eq__(self, other):
        return (isinstance(other, UnifiedLabel) and self.origin == other.origin
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.origin, self.values.tobytes()))


def _assemble(label: np.ndarray, origin: int, mask: np.ndarray | None,
              universe: LabelUniverse) -> np.ndarray:
    out = np.zeros(universe.unified_dim, dtype=np.float32)
    out[universe.slice_of(origin)] = label
    if mask is not None:
        out[universe.total_label_dim:] = mask
    return out


def encode_unified(label, origin: int, universe: LabelUniverse) -> UnifiedLabel:
    universe._check_origin(origin)
    v = universe.datasets[origin].validate(label)
    mask = None
    if universe.has_mask:
        mask = np.zeros(universe.n, dtype=np.float32)
        mask[origin] = 1.0
    return UnifiedLabel(_assemble(v, origin, mask, universe), origin)


def encode_with_mask_override(label, origin: int, mask, universe: LabelUniverse) -> np.ndarray:
    """Place ``label`` in the origin slice but use a caller-chosen mask.

    Evaluation-only: lets a probe feed a deliberately wrong mask. The label
    slice may be all zeros. Training code must go through encode_unified.
    """
    universe._check_origin(origin)
    m = np.asarray(mask, dtype=np.float32).reshape(-1)
    if m.shape[0] != universe.n or not np.all((m == 0) | (m == 1)) or m.sum() != 1:
        raise LabelError(f"mask must be one-hot of length {universe.n}, got {m.tolist()}")
    v = np.asarray(label, dtype=np.float32).reshape(-1)
    if v.shape[0] != universe.datasets[origin].dim:
        raise LabelError(
            f"label length {v.shape[0]} does not match dataset dim {universe.datasets[origin].dim}")
    return _assemble(v, origin, m if universe.has_mask else None, universe)


def decode_unified(label: UnifiedLabel | np.ndarray, universe: LabelUniverse,
                   origin: int | None = None) -> tuple[np.ndarray, int]:
    """Inverse of encode_unified. The origin comes from the mask when present."""
    values = label.values if isinstance(label, UnifiedLabel) else np.asarray(label, np.float32)
    if values.shape[-1] != universe.unified_dim:
        raise LabelError(f"unified label length {values.shape[-1]} != {universe.unified_dim}")
    if universe.has_mask:
        mask = values[universe.total_label_dim:]
        if not np.all((mask == 0) | (mask == 1)) or mask.sum() != 1:
            raise LabelError(f"malformed mask {mask.tolist()}")
        origin = int(np.argmax(mask))
    else:
        origin = 0
    return values[universe.slice_of(origin)].copy(), origin


def sample_target_labels(real_labels: Sequence[UnifiedLabel],
                         rng: np.random.Generator) -> list[UnifiedLabel]:
    """Targets are a uniform random permutation of the batch's own labels."""
    if len(real_labels) == 0:
        raise LabelError("cannot sample targets for an empty batch")
    origins = {lab.origin for lab in real_labels}
    if len(origins) != 1:
        raise LabelError(f"batch mixes label origins {sorted(origins)}")
    perm = rng.permutation(len(real_labels))
    return [real_labels[i] for i in perm]


def stack(labels: Sequence[UnifiedLabel]) -> torch.Tensor:
    return torch.from_numpy(np.stack([lab.values for lab in labels]))


def spatial_replicate(label, h: int, w: int) -> torch.Tensor:
    """Tile a label over an h x w grid, channels last: (h, w, dim)."""
    if h < 1 or w < 1:
        raise LabelError(f"replication size must be positive, got {h}x{w}")
    values = label.values if isinstance(label, UnifiedLabel) else label
    v = torch.as_tensor(np.asarray(values, dtype=np.float32))
    return v.view(1, 1, -1).expand(h, w, -1).contiguous()


def replicate_batch(labels: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """(B, dim) labels -> (B, dim, h, w) maps for concatenation with NCHW images."""
    return labels[:, :, None, None].expand(-1, -1, h, w)
