"""Image datasets: annotated folders, preprocessing, the synthetic corpus, batching.

Pixels are channels-last float32 in [-1, 1]. On disk a dataset is::

    root/images/<name>.png|jpg
    root/annotations.txt     # header of attribute names, then "<file> v1 v2 ..."
    root/oracle.json         # synthetic corpora only
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import median_filter

from .labels import BINARY, CATEGORICAL, DatasetSpec, LabelError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class DataError(ValueError):
    pass


@dataclass
class ImageRecord:
    pixels: np.ndarray
    label: np.ndarray
    source_path: str = ""


@dataclass
class LabeledSet:
    """A dataset held as stacked arrays: images (N,h,w,3), labels (N,dim)."""

    spec: DatasetSpec
    images: np.ndarray
    labels: np.ndarray
    paths: list[str] = field(default_factory=list)

    def __len__(self):
        return self.images.shape[0]

    def __getitem__(self, i) -> ImageRecord:
        path = self.paths[i] if self.paths else ""
        return ImageRecord(self.images[i], self.labels[i], path)

    def subset(self, idx) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.int64)
        paths = [self.paths[i] for i in idx] if self.paths else []
        return LabeledSet(self.spec, self.images[idx], self.labels[idx], paths)

    @property
    def image_size(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]


def normalize(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float32) / 127.5 - 1.0


def denormalize(x) -> np.ndarray:
    x = x.detach().cpu().numpy() if isinstance(x, torch.Tensor) else np.asarray(x)
    return np.clip(np.rint((x + 1.0) * 127.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class PreprocessSpec:
    resize_to: int
    crop: str = "center_square"
    crop_size: int | None = None  # None: the shorter image side

    def __post_init__(self):
        if self.resize_to < 8:
            raise DataError(f"resize_to must be >= 8, got {self.resize_to}")
        if self.crop not in ("center_square", "none"):
            raise DataError(f"unknown crop {self.crop!r}")


CELEBA_PREP = PreprocessSpec(resize_to=128, crop="center_square", crop_size=178)
RAFD_PREP = PreprocessSpec(resize_to=128, crop="center_square", crop_size=256)


def center_crop_box(w: int, h: int, size: int | None) -> tuple[int, int, int, int]:
    side = min(w, h) if size is None else size
    if side > min(w, h):
        raise DataError(f"crop size {side} exceeds image {w}x{h}")
    left, top = (w - side) // 2, (h - side) // 2
    return left, top, left + side, top + side


def preprocess_image(img: Image.Image, prep: PreprocessSpec) -> np.ndarray:
    img = img.convert("RGB")
    if prep.crop == "center_square":
        img = img.crop(center_crop_box(img.width, img.height, prep.crop_size))
    if img.size != (prep.resize_to, prep.resize_to):
        img = img.resize((prep.resize_to, prep.resize_to), Image.BICUBIC)
    return normalize(np.asarray(img))


def preprocess_array(x: np.ndarray, prep: PreprocessSpec) -> np.ndarray:
    """Same pipeline for an already-normalized (h,w,3) array."""
    h, w = x.shape[:2]
    if prep.crop == "center_square":
        l, t, r, b = center_crop_box(w, h, prep.crop_size)
        x = x[t:b, l:r]
    if x.shape[:2] == (prep.resize_to, prep.resize_to):
        return x
    return preprocess_image(Image.fromarray(denormalize(x)), PreprocessSpec(prep.resize_to, "none"))


# ---------------------------------------------------------------- annotated folders

def read_annotations(path) -> tuple[list[str], dict[str, np.ndarray]]:
    lines = [l.split() for l in Path(path).read_text().splitlines() if l.strip()]
    if lines and len(lines[0]) == 1 and lines[0][0].isdigit():
        lines = lines[1:]  # optional leading record count
    if not lines:
        raise DataError(f"{path}: empty annotation file")
    header, rows = lines[0], {}
    for lineno, parts in enumerate(lines[1:], 2):
        if len(parts) != len(header) + 1:
            raise DataError(f"{path}:{lineno}: expected {len(header) + 1} fields, got {len(parts)}")
        vals = np.array([int(v) for v in parts[1:]], dtype=np.float32)
        if not np.all(np.isin(vals, (-1, 0, 1))):
            raise DataError(f"{path}:{lineno}: values must be in {{-1,0,1}}")
        rows[parts[0]] = (vals > 0).astype(np.float32)
    return header, rows


def write_annotations(path, names, rows: dict[str, np.ndarray]) -> None:
    out = [" ".join(names)]
    out += [f"{fn} " + " ".join(str(int(v)) for v in lab) for fn, lab in rows.items()]
    Path(path).write_text("\n".join(out) + "\n")


def split_indices(n: int, holdout_count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if not 0 <= holdout_count <= n:
        raise DataError(f"holdout_count {holdout_count} outside [0, {n}]")
    perm = rng.permutation(n)
    return np.sort(perm[holdout_count:]), np.sort(perm[:holdout_count])


def load_annotated_folder(root, spec: DatasetSpec, prep: PreprocessSpec, holdout_count: int,
                          rng: np.random.Generator, annotation_file=None) -> tuple[LabeledSet, LabeledSet]:
    root = Path(root)
    header, rows = read_annotations(annotation_file or root / "annotations.txt")
    missing = [n for n in spec.label_names if n not in header]
    if missing:
        raise DataError(f"unknown attribute(s) {missing}; annotation header has {header}")
    cols = [header.index(n) for n in spec.label_names]
    names = sorted(rows)
    images, labels = [], []
    for fn in names:
        path = root / "images" / fn
        if not path.exists():
            raise DataError(f"annotated image missing: {fn}")
        lab = rows[fn][cols]
        try:
            spec.validate(lab)
        except LabelError as e:
            raise DataError(f"{fn}: {e}") from None
        with Image.open(path) as img:
            images.append(preprocess_image(img, prep))
        labels.append(lab)
    full = LabeledSet(spec, np.stack(images), np.stack(labels), [str(root / "images" / n) for n in names])
    train_idx, test_idx = split_indices(len(full), holdout_count, rng)
    return full.subset(train_idx), full.subset(test_idx)


def write_folder(root, sets: list[LabeledSet], names: list[list[str]]) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rows = {}
    for s, fns in zip(sets, names):
        for i, fn in enumerate(fns):
            Image.fromarray(denormalize(s.images[i])).save(root / "images" / fn)
            rows[fn] = s.labels[i]
    write_annotations(root / "annotations.txt", sets[0].spec.label_names, rows)


# ---------------------------------------------------------------- synthetic corpus

HUES = ("red", "green", "blue")
BINARY_ATTRS = ("light_bg", "bright")

PALETTES = ("color", "gray")
BG_LEVELS = (0.1, 0.7)
SHAPE_LEVELS = (0.45, 0.95)

# Closed-form labeler thresholds, in [0,1] pixel units.
CONTRAST_THRESHOLD = 0.15
BRIGHT_THRESHOLD = 0.7
LIGHT_BG_THRESHOLD = 0.4


@dataclass(frozen=True)
class SyntheticSpec:
    """Coloured shapes on a grey background.

    kind=categorical: one domain per hue in ``attributes`` (a subset of HUES).
    kind=binary_attributes: one domain per on/off combination of ``attributes``
    (a subset of BINARY_ATTRS); the hue is then a nuisance variable.
    palette="gray" draws colourless shapes, so two corpora can differ in style.
    """

    name: str = "hue"
    kind: str = CATEGORICAL
    attributes: tuple[str, ...] = HUES
    image_size: int = 16
    n_per_domain: int = 50
    test_per_domain: int = 10
    noise: float = 0.0
    seed: int = 0
    palette: str = "color"

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if self.palette not in PALETTES:
            raise DataError(f"unknown palette {self.palette!r}")
        if self.palette == "gray" and self.kind == CATEGORICAL:
            raise DataError("degenerate synthetic spec: hue domains are indistinguishable in gray")
        if self.n_per_domain < 1:
            raise DataError("n_per_domain must be >= 1")
        if self.test_per_domain < 0:
            raise DataError("test_per_domain must be >= 0")
        if self.image_size < 8:
            raise DataError("image_size must be >= 8")
        if len(set(self.attributes)) != len(self.attributes):
            raise DataError(f"degenerate synthetic spec: repeated attributes {self.attributes}")
        allowed = HUES if self.kind == CATEGORICAL else BINARY_ATTRS
        if self.kind not in (CATEGORICAL, BINARY):
            raise DataError(f"unknown kind {self.kind!r}")
        bad = [a for a in self.attributes if a not in allowed]
        if bad:
            raise DataError(f"unsupported {self.kind} attributes {bad}; choose from {allowed}")
        if self.kind == CATEGORICAL and len(self.attributes) < 2:
            raise DataError("degenerate synthetic spec: a categorical corpus needs >= 2 distinct domains")
        if self.kind == BINARY and not self.attributes:
            raise DataError("degenerate synthetic spec: no attributes")

    @property
    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(self.name, self.kind, self.attributes)

    def domains(self) -> list[np.ndarray]:
        k = len(self.attributes)
        if self.kind == CATEGORICAL:
            return [np.eye(k, dtype=np.float32)[i] for i in range(k)]
        return [np.array([(j >> b) & 1 for b in range(k)], dtype=np.float32) for j in range(2 ** k)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attributes"] = list(self.attributes)
        return d


def render_shape(size: int, hue: int | None, light_bg: bool, bright: bool, rng: np.random.Generator,
                 noise: float = 0.0) -> np.ndarray:
    """uint8 (size,size,3) image: a circle or square of one primary hue (None: grey) on grey."""
    img = np.full((size, size, 3), BG_LEVELS[int(light_bg)], dtype=np.float64)
    level = SHAPE_LEVELS[int(bright)]
    if hue is None:
        color = np.full(3, level)
    else:
        color = np.full(3, 0.05)
        color[hue] = level
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    r = rng.uniform(0.2, 0.3) * size
    cy, cx = rng.uniform(r + 1, size - r - 1, size=2)
    if rng.random() < 0.5:
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    else:
        inside = (np.abs(yy - cy) <= r * 0.85) & (np.abs(xx - cx) <= r * 0.85)
    img[inside] = color
    if noise > 0:
        img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def oracle_attributes(pixels: np.ndarray) -> dict[str, float | int]:
    """Closed-form readout of hue / bright / light_bg from a [-1,1] image."""
    x = median_filter((np.asarray(pixels, dtype=np.float64) + 1.0) / 2.0, size=(3, 3, 1), mode="nearest")
    border = np.concatenate([x[0], x[-1], x[1:-1, 0], x[1:-1, -1]])
    contrast = np.abs(x - np.median(border, 0)).max(-1)
    shape = contrast > CONTRAST_THRESHOLD
    if not shape.any():
        shape = contrast >= contrast.max()
    px = x[shape]
    return {
        "hue": int(np.argmax(px.mean(0))),
        "bright": float(np.median(px.max(-1)) > BRIGHT_THRESHOLD),
        "light_bg": float(np.median(border.mean(-1)) > LIGHT_BG_THRESHOLD),
    }


class SyntheticOracle:
    """Labels synthetic images in a given dataset's label space."""

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec

    def label(self, pixels: np.ndarray) -> np.ndarray:
        a = oracle_attributes(pixels)
        if self.spec.kind == CATEGORICAL:
            hue_name = HUES[a["hue"]]
            out = np.zeros(len(self.spec.attributes), dtype=np.float32)
            if hue_name in self.spec.attributes:
                out[self.spec.attributes.index(hue_name)] = 1.0
            return out
        return np.array([a[n] for n in self.spec.attributes], dtype=np.float32)

    def __call__(self, images) -> np.ndarray:
        """(N,h,w,3) array or (N,3,h,w) tensor -> (N,dim) labels."""
        if isinstance(images, torch.Tensor):
            images = images.detach().permute(0, 2, 3, 1).cpu().numpy()
        return np.stack([self.label(im) for im in images])

    def describe(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "rule": {
                "denoise": "3x3 per-channel median filter, edge mode nearest",
                "shape_pixels": f"max over rgb of |pixel - median border colour| > {CONTRAST_THRESHOLD}"
                                " (pixels rescaled to [0,1])",
                "hue": "argmax over channels of the mean shape-pixel colour, in order " + ",".join(HUES),
                "bright": f"median over shape pixels of max(rgb) > {BRIGHT_THRESHOLD}",
                "light_bg": f"median over the 1-pixel border of mean(rgb) > {LIGHT_BG_THRESHOLD}",
            },
        }


def _render_domain(spec: SyntheticSpec, domain: np.ndarray, count: int,
                   rng: np.random.Generator) -> np.ndarray:
    out = []
    for _ in range(count):
        if spec.kind == CATEGORICAL:
            hue = HUES.index(spec.attributes[int(np.argmax(domain))])
            light_bg, bright = bool(rng.random() < 0.5), bool(rng.random() < 0.5)
        else:
            attrs = dict(zip(spec.attributes, domain))
            hue = int(rng.integers(3)) if spec.palette == "color" else None
            light_bg = bool(attrs.get("light_bg", rng.random() < 0.5))
            bright = bool(attrs.get("bright", rng.random() < 0.5))
        out.append(render_shape(spec.image_size, hue, light_bg, bright, rng, spec.noise))
    return np.stack(out)


def make_synthetic(spec: SyntheticSpec) -> tuple[LabeledSet, LabeledSet, SyntheticOracle]:
    rng = np.random.default_rng(spec.seed)
    ds = spec.dataset_spec
    parts = {"train": ([], []), "test": ([], [])}
    for domain in spec.domains():
        for split, count in (("train", spec.n_per_domain), ("test", spec.test_per_domain)):
            if count:
                parts[split][0].append(_render_domain(spec, domain, count, rng))
                parts[split][1].append(np.repeat(domain[None], count, 0))
    sets = []
    for split in ("train", "test"):
        imgs, labs = parts[split]
        if imgs:
            images, labels = normalize(np.concatenate(imgs)), np.concatenate(labs)
        else:
            s = spec.image_size
            images, labels = np.zeros((0, s, s, 3), np.float32), np.zeros((0, ds.dim), np.float32)
        paths = [f"{split}_{i:05d}.png" for i in range(len(images))]
        sets.append(LabeledSet(ds, images, labels, paths))
    return sets[0], sets[1], SyntheticOracle(spec)


def write_synthetic(root, spec: SyntheticSpec) -> tuple[LabeledSet, LabeledSet]:
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        raise DataError(f"refusing to write into non-empty directory {root}")
    train, test, oracle = make_synthetic(spec)
    write_folder(root, [train, test], [train.paths, test.paths])
    (root / "oracle.json").write_text(json.dumps(oracle.describe(), indent=2, sort_keys=True) + "\n")
    return train, test


def load_oracle(root) -> SyntheticOracle | None:
    path = Path(root) / "oracle.json"
    if not path.exists():
        return None
    d = json.loads(path.read_text())["spec"]
    d["attributes"] = tuple(d["attributes"])
    return SyntheticOracle(SyntheticSpec(**d))


# ---------------------------------------------------------------- batching

def to_nchw(images: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images)).permute(0, 3, 1, 2).contiguous()


def epoch_order(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    if batch_size < 1:
        raise DataError("batch_size must be >= 1")
    if batch_size > n:
        raise DataError(f"batch_size {batch_size} exceeds dataset size {n}")
    perm = rng.permutation(n)
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(n // batch_size)]


def batches(dataset: LabeledSet, batch_size: int, shuffle_rng: np.random.Generator
            ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch of fixed-size (images, labels) batches; the last partial batch is dropped."""
    for idx in epoch_order(len(dataset), batch_size, shuffle_rng):
        yield dataset.images[idx], dataset.labels[idx]
