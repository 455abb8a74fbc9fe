"""Run configuration: one INI file per experiment, with ``section.key=value`` overrides.

Precedence (lowest first): built-in defaults, the config file, ``--set`` flags.
Dataset sections ``[dataset:NAME]`` appear in label-slice order. Relative
paths resolve against the config file's directory, except ``run.out_dir``,
which resolves against ``$STARGAN_OUTPUT_ROOT`` when that is set.

Example::

    [run]
    seed = 0
    image_size = 16
    out_dir = runs/hue

    [dataset:hue]
    root = data/hue
    kind = categorical
    labels = red, green, blue
    holdout = 60

    [synthetic:hue]
    root = data/hue
    attributes = red, green, blue
    n_per_domain = 100
    test_per_domain = 20

    [net]
    g_width = 0.25
    g_n_res = 3
    d_width = 0.25

    [train]
    lr = 3e-4
    warm_epochs = 400
    decay_epochs = 200
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import LabeledSet, PreprocessSpec, SyntheticSpec, load_annotated_folder, load_oracle
from .labels import DatasetSpec, LabelUniverse
from .losses import LossConfig
from .seeding import np_rng, stable_hash
from .trainer import NetConfig, TrainConfig

OUTPUT_ROOT_ENV = "STARGAN_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSource:
    spec: DatasetSpec
    root: Path
    prep: PreprocessSpec
    holdout: int


@dataclass(frozen=True)
class EvalConfig:
    classifier: str = "auto"  # auto | oracle | cnn
    max_error: float = 0.15
    max_rec: float = 0.10
    accuracy_floor: float = 0.95
    grid_inputs: int = 6
    classifier_epochs: int = 30


@dataclass
class RunConfig:
    universe: LabelUniverse
    sources: list[DatasetSource]
    net: NetConfig
    losses: LossConfig
    train: TrainConfig
    eval: EvalConfig
    out_dir: Path
    synthetic: list[tuple[Path, SyntheticSpec]] = field(default_factory=list)
    canonical: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return stable_hash(self.canonical)

    def load_datasets(self) -> tuple[list[LabeledSet], list[LabeledSet]]:
        trains, tests = [], []
        for i, src in enumerate(self.sources):
            tr, te = load_annotated_folder(src.root, src.spec, src.prep, src.holdout,
                                           np_rng(self.train.seed, "split", i))
            trains.append(tr)
            tests.append(te)
        return trains, tests

    def oracles(self) -> list:
        return [load_oracle(src.root) for src in self.sources]


def _list(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.replace(",", " ").split() if x.strip())


def _coerce(cls, section: dict, name: str):
    """Build dataclass ``cls`` from string values, using field defaults for missing keys."""
    kwargs = {}
    known = {f.name: f for f in fields(cls) if f.init}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}; valid: {', '.join(sorted(known))}")
        default = known[key].default
        raw = raw.strip()
        try:
            if raw == "" or raw.lower() == "none":
                kwargs[key] = None
            elif isinstance(default, bool):
                kwargs[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int) or (default is None and key.endswith(("depth", "size"))):
                kwargs[key] = int(raw)
            elif isinstance(default, float):
                kwargs[key] = float(raw)
            elif isinstance(default, tuple):
                kwargs[key] = _list(raw)
            else:
                kwargs[key] = raw
        except ValueError:
            raise ConfigError(f"[{name}] {key} = {raw!r} is not a valid value") from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{name}] {e}") from None


def apply_overrides(parser: configparser.ConfigParser, overrides) -> None:
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.rsplit(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key.strip(), value.strip())


def read_parser(path, overrides=None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    apply_overrides(parser, overrides)
    return parser


def _resolve(base: Path, p: str) -> Path:
    q = Path(os.path.expanduser(p))
    return q if q.is_absolute() else base / q


def load_config(path, overrides=None) -> RunConfig:
    path = Path(path)
    parser = read_parser(path, overrides)
    base = path.resolve().parent
    canonical = {s: dict(sorted(parser.items(s))) for s in sorted(parser.sections())}
    run = dict(parser.items("run")) if parser.has_section("run") else {}
    seed = int(run.get("seed", 0))
    image_size = int(run.get("image_size", 128))

    sources = []
    for sec in parser.sections():
        if not sec.startswith("dataset:"):
            continue
        name = sec.split(":", 1)[1].strip()
        d = dict(parser.items(sec))
        try:
            spec = DatasetSpec(name, d.get("kind", "categorical"), _list(d.get("labels", "")))
            crop = d.get("crop", "none")
            crop_size = d.get("crop_size", "").strip()
            prep = PreprocessSpec(int(d.get("resize_to", image_size)), crop, int(crop_size) if crop_size else None)
            root = d.get("root")
            if not root:
                raise ConfigError(f"[{sec}] needs a root directory")
            sources.append(DatasetSource(spec, _resolve(base, root), prep, int(d.get("holdout", 0))))
        except ValueError as e:
            raise ConfigError(f"[{sec}] {e}") from None

    synthetic = []
    for sec in parser.sections():
        if not sec.startswith("synthetic:"):
            continue
        d = dict(parser.items(sec))
        root = d.pop("root", None)
        if not root:
            raise ConfigError(f"[{sec}] needs a root directory")
        d.setdefault("name", sec.split(":", 1)[1].strip())
        d.setdefault("image_size", str(image_size))
        d.setdefault("seed", str(seed))
        if "kind" not in d and "attributes" in d:
            d["kind"] = "categorical" if set(_list(d["attributes"])) <= {"red", "green", "blue"} else "binary_attributes"
        synthetic.append((_resolve(base, root), _coerce(SyntheticSpec, d, sec)))

    universe = LabelUniverse(tuple(s.spec for s in sources)) if sources else None
    train_d = dict(parser.items("train")) if parser.has_section("train") else {}
    train_d.setdefault("seed", str(seed))
    if universe is not None:
        train_d.setdefault("alternation", "round_robin" if universe.n >= 2 else "single")
        missing = [k for k in ("warm_epochs", "decay_epochs") if k not in train_d]
        if universe.n >= 2 and missing:
            raise ConfigError(f"joint training has no default schedule; set [train] {', '.join(missing)}")
    net_d = dict(parser.items("net")) if parser.has_section("net") else {}
    net_d.setdefault("image_size", str(image_size))

    out = run.get("out_dir", "runs/default")
    root_env = os.environ.get(OUTPUT_ROOT_ENV)
    out_dir = Path(out) if Path(out).is_absolute() else (Path(root_env) / out if root_env else base / out)

    return RunConfig(
        universe=universe,
        sources=sources,
        net=_coerce(NetConfig, net_d, "net"),
        losses=_coerce(LossConfig, dict(parser.items("losses")) if parser.has_section("losses") else {}, "losses"),
        train=_coerce(TrainConfig, train_d, "train"),
        eval=_coerce(EvalConfig, dict(parser.items("eval")) if parser.has_section("eval") else {}, "eval"),
        out_dir=out_dir,
        synthetic=synthetic,
        canonical=canonical,
    )

