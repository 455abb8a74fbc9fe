"""Declarative generator/discriminator layer tables and analytic shape inference.

Layers serialize to the row notation ``CONV-(N64, K7x7, S1, P3), IN, ReLU``;
a whole network is a small text file::

    network generator
    input_channels 11
    CONV-(N64, K7x7, S1, P3), IN, ReLU
    Residual Block: CONV-(N256, K3x3, S1, P1), IN, ReLU
    DECONV-(N128, K4x4, S2, P1), IN, ReLU
    ...
    src_head: CONV-(N1, K3x3, S1, P1)
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

CONV = "conv"
DECONV = "transposed_conv"
RESIDUAL = "residual_block"

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "none")
LEAKY_SLOPE = 0.01
MAX_DISC_DEPTH = 6
PAPER_PARAMS = 53.2e6  # reported generator+discriminator size


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    padding: int = 0
    norm: str = "none"
    activation: str = "none"

    def __post_init__(self):
        k = self.kernel
        if isinstance(k, int):
            k = (k, k)
        object.__setattr__(self, "kernel", tuple(int(v) for v in k))
        if self.kind not in (CONV, DECONV, RESIDUAL):
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.out_channels < 1 or min(self.kernel) < 1 or self.stride < 1:
            raise SpecError(f"N, K, S must be >= 1: {self}")
        if self.padding < 0:
            raise SpecError(f"padding must be >= 0: {self}")
        if self.norm not in ("instance", "none"):
            raise SpecError(f"unknown norm {self.norm!r}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}")

    def notation(self) -> str:
        kh, kw = self.kernel
        head = {CONV: "CONV", DECONV: "DECONV", RESIDUAL: "Residual Block: CONV"}[self.kind]
        parts = [f"{head}-(N{self.out_channels}, K{kh}x{kw}, S{self.stride}, P{self.padding})"]
        if self.norm == "instance":
            parts.append("IN")
        parts.append({"relu": "ReLU", "leaky_relu": "Leaky ReLU", "tanh": "Tanh", "none": ""}[self.activation])
        return ", ".join(p for p in parts if p)


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_channels: int
    layers: tuple[LayerSpec, ...]
    src_head: LayerSpec | None = None
    cls_head: LayerSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if (self.src_head is None) != (self.cls_head is None):
            raise SpecError("discriminator heads come in pairs")
        c = self.input_channels
        for i, layer in enumerate(self.layers):
            if layer.kind == RESIDUAL and layer.out_channels != c:
                raise SpecError(
                    f"layer {i}: residual block maps {c} -> {layer.out_channels} channels")
            c = layer.out_channels

    @property
    def is_discriminator(self) -> bool:
        return self.src_head is not None

    @property
    def output_channels(self) -> int:
        return self.layers[-1].out_channels if self.layers else self.input_channels

    def to_text(self) -> str:
        lines = [f"network {self.name}", f"input_channels {self.input_channels}"]
        lines += [layer.notation() for layer in self.layers]
        if self.is_discriminator:
            lines.append(f"src_head: {self.src_head.notation()}")
            lines.append(f"cls_head: {self.cls_head.notation()}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


_ROW = re.compile(
    r"^(?P<kind>Residual Block:\s*CONV|CONV|DECONV)-\(\s*N(?P<n>\d+)\s*,\s*K(?P<kh>\d+)x(?P<kw>\d+)\s*,"
    r"\s*S(?P<s>\d+)\s*,\s*P(?P<p>\d+)\s*\)(?P<rest>.*)$")


def parse_layer(text: str) -> LayerSpec:
    m = _ROW.match(text.strip())
    if not m:
        raise SpecError(f"cannot parse layer row {text.strip()!r}")
    kind = {"CONV": CONV, "DECONV": DECONV}.get(m["kind"], RESIDUAL)
    norm, act = "none", "none"
    for tok in (t.strip() for t in m["rest"].split(",")):
        if not tok:
            continue
        low = tok.lower()
        if low == "in":
            norm = "instance"
        elif low == "relu":
            act = "relu"
        elif low in ("leaky relu", "lrelu"):
            act = "leaky_relu"
        elif low == "tanh":
            act = "tanh"
        else:
            raise SpecError(f"unknown layer modifier {tok!r}")
    return LayerSpec(kind, int(m["n"]), (int(m["kh"]), int(m["kw"])), int(m["s"]), int(m["p"]), norm, act)


def parse_network(text: str) -> NetworkSpec:
    name, in_ch, layers, heads = None, None, [], {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("network "):
                name = line.split(None, 1)[1].strip()
            elif line.startswith("input_channels "):
                in_ch = int(line.split(None, 1)[1])
            elif line.startswith(("src_head:", "cls_head:")):
                key, row = line.split(":", 1)
                heads[key] = parse_layer(row)
            else:
                layers.append(parse_layer(line))
        except (SpecError, ValueError) as e:
            raise SpecError(f"line {lineno}: {e}") from None
    if name is None or in_ch is None:
        raise SpecError("architecture file needs 'network <name>' and 'input_channels <int>' lines")
    try:
        return NetworkSpec(name, in_ch, tuple(layers), heads.get("src_head"), heads.get("cls_head"))
    except SpecError as e:
        raise SpecError(f"{e}") from None


def load_network(path) -> NetworkSpec:
    return parse_network(Path(path).read_text())


def _scaled(channels: int, mult: Fraction) -> int:
    return max(1, int(round(channels * mult)))


def _as_multiplier(width_multiplier) -> Fraction:
    mult = Fraction(width_multiplier).limit_denominator(1 << 16)
    if mult <= 0:
        raise SpecError(f"width_multiplier must be positive, got {width_multiplier}")
    return mult


def stargan_generator_spec(n_c: int, width_multiplier=1, n_res: int = 6) -> NetworkSpec:
    """Encoder (7x7 then two stride-2 4x4), residual bottleneck, two 4x4 deconvs, 7x7 tanh output."""
    if n_c < 1:
        raise SpecError(f"label dimension must be >= 1, got {n_c}")
    if n_res < 0:
        raise SpecError(f"n_res must be >= 0, got {n_res}")
    mult = _as_multiplier(width_multiplier)
    c1, c2, c3 = (_scaled(c, mult) for c in (64, 128, 256))
    layers = [
        LayerSpec(CONV, c1, 7, 1, 3, "instance", "relu"),
        LayerSpec(CONV, c2, 4, 2, 1, "instance", "relu"),
        LayerSpec(CONV, c3, 4, 2, 1, "instance", "relu"),
    ]
    layers += [LayerSpec(RESIDUAL, c3, 3, 1, 1, "instance", "relu") for _ in range(n_res)]
    layers += [
        LayerSpec(DECONV, c2, 4, 2, 1, "instance", "relu"),
        LayerSpec(DECONV, c1, 4, 2, 1, "instance", "relu"),
        LayerSpec(CONV, 3, 7, 1, 3, "none", "tanh"),
    ]
    return NetworkSpec("generator", 3 + n_c, tuple(layers))


def default_disc_depth(h: int, w: int) -> int:
    return max(1, min(MAX_DISC_DEPTH, math.ceil(math.log2(min(h, w))) - 1))


def stargan_discriminator_spec(h: int, w: int, n_d: int, width_multiplier=1,
                               depth: int | None = None) -> NetworkSpec:
    """Stride-2 4x4 leaky-relu stack with a PatchGAN src head and a full-extent cls head."""
    if n_d < 1:
        raise SpecError(f"label dimension must be >= 1, got {n_d}")
    if depth is None:
        depth = default_disc_depth(h, w)
    if depth < 1:
        raise SpecError(f"depth must be >= 1, got {depth}")
    total = 2 ** depth
    # the src head needs a patch grid of at least 2x2
    if h % total or w % total or h < 2 * total or w < 2 * total:
        side = lambda v: max(2 * total, -(-v // total) * total)
        raise SpecError(
            f"input {h}x{w} does not give a depth-{depth} discriminator (total stride {total}) "
            f"an integral patch grid of at least 2x2; minimal legal size is {side(h)}x{side(w)}")
    mult = _as_multiplier(width_multiplier)
    layers = [LayerSpec(CONV, _scaled(64 * 2 ** i, mult), 4, 2, 1, "none", "leaky_relu")
              for i in range(depth)]
    gh, gw = h // total, w // total
    src = LayerSpec(CONV, 1, 3, 1, 1)
    cls = LayerSpec(CONV, n_d, (gh, gw), 1, 0)
    return NetworkSpec("discriminator", 3, tuple(layers), src, cls)


@dataclass
class LayerShape:
    label: str
    h: int
    w: int
    channels: int
    params: int


@dataclass
class ShapeReport:
    layers: list[LayerShape] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    def output(self, label: str | None = None) -> tuple[int, int, int]:
        entry = self.layers[-1] if label is None else next(l for l in self.layers if l.label == label)
        return entry.h, entry.w, entry.channels


def conv_out(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def deconv_out(size: int, k: int, s: int, p: int) -> int:
    return (size - 1) * s - 2 * p + k


def layer_params(layer: LayerSpec, c_in: int) -> int:
    kh, kw = layer.kernel
    conv = c_in * layer.out_channels * kh * kw + layer.out_channels
    norm = 2 * layer.out_channels if layer.norm == "instance" else 0
    if layer.kind == RESIDUAL:
        conv += layer.out_channels * layer.out_channels * kh * kw + layer.out_channels
        norm *= 2
    return conv + norm


def _step(layer: LayerSpec, h: int, w: int, label: str) -> tuple[int, int]:
    (kh, kw), s, p = layer.kernel, layer.stride, layer.padding
    if layer.kind == DECONV:
        oh, ow = deconv_out(h, kh, s, p), deconv_out(w, kw, s, p)
    else:
        oh, ow = conv_out(h, kh, s, p), conv_out(w, kw, s, p)
        if layer.kind == RESIDUAL:
            oh, ow = conv_out(oh, kh, s, p), conv_out(ow, kw, s, p)
            if (oh, ow) != (h, w):
                raise SpecError(f"{label}: residual block changes spatial size {h}x{w} -> {oh}x{ow}")
    if oh < 1 or ow < 1:
        raise SpecError(f"{label} ({layer.notation()}) produces non-positive size {oh}x{ow} from {h}x{w}")
    return oh, ow


def infer_shapes_and_params(spec: NetworkSpec, input_h: int, input_w: int) -> ShapeReport:
    report = ShapeReport()
    h, w, c = input_h, input_w, spec.input_channels
    for i, layer in enumerate(spec.layers):
        label = f"layer{i}"
        h, w = _step(layer, h, w, label)
        report.layers.append(LayerShape(label, h, w, layer.out_channels, layer_params(layer, c)))
        c = layer.out_channels
    if spec.is_discriminator:
        for label, head in (("src", spec.src_head), ("cls", spec.cls_head)):
            hh, hw = _step(head, h, w, label)
            report.layers.append(LayerShape(label, hh, hw, head.out_channels, layer_params(head, c)))
    return report
