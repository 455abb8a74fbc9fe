"""Command-line entry points: make-synthetic, train, translate, evaluate, count-params."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .netspec import PAPER_PARAMS, SpecError, infer_shapes_and_params, load_network, \
    stargan_discriminator_spec, stargan_generator_spec
from .seeding import stable_hash

log = logging.getLogger("stargan")


class CommandError(RuntimeError):
    pass


def _banner(cfg_hash: str) -> None:
    print(f"config_hash {cfg_hash}")


def _checkpoint_path(cfg, given) -> Path:
    path = Path(given) if given else cfg.out_dir / "checkpoints" / "final.pt"
    if not path.exists():
        raise CommandError(f"checkpoint not found: {path}")
    return path


# ---------------------------------------------------------------- make-synthetic

def cmd_make_synthetic(args) -> int:
    from .config import load_config
    from .data import write_synthetic
    cfg = load_config(args.config, args.set)
    _banner(cfg.config_hash)
    if not cfg.synthetic:
        raise CommandError("config has no [synthetic:NAME] sections")
    for root, spec in cfg.synthetic:
        train_set, test_set = write_synthetic(root, spec)
        print(f"wrote {len(train_set) + len(test_set)} images ({len(train_set)} train-side, "
              f"{len(test_set)} test-side) for {spec.name!r} to {root}")
    return 0


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    from . import plotting
    from .config import load_config
    from .trainer import read_log, train
    cfg = load_config(args.config, args.set)
    _banner(cfg.config_hash)
    if cfg.universe is None:
        raise CommandError("config declares no [dataset:NAME] sections")
    trains, _ = cfg.load_datasets()
    t0 = time.time()
    result = train(trains, cfg.universe, cfg.train, cfg.losses, cfg.net, out_dir=cfg.out_dir,
                   resume=args.resume, max_steps=args.max_steps)
    rows = read_log(cfg.out_dir / "loss_log.csv")
    if rows:
        plotting.loss_curves(rows, cfg.out_dir / "loss_curves.png")
    print(f"trained to step {result.model.step} in {time.time() - t0:.1f}s; "
          f"checkpoint {result.checkpoint}; log {cfg.out_dir / 'loss_log.csv'}")
    return 0


# ---------------------------------------------------------------- translate

def parse_target(text: str, universe) -> tuple[np.ndarray, int]:
    """'red', 'hue.red' or 'light_bg+bright' -> (dataset-slice label, dataset index)."""
    from .labels import LabelError
    tokens = [t.strip() for t in text.split("+") if t.strip()]
    if not tokens:
        raise LabelError("empty target")
    hits = []
    for tok in tokens:
        if "." in tok:
            ds, name = tok.split(".", 1)
            i = universe.dataset_index(ds)
            universe.datasets[i].index(name)
            hits.append((i, name))
            continue
        found = [(i, tok) for i, d in enumerate(universe.datasets) if tok in d.label_names]
        if not found:
            valid = ", ".join(f"{d.name}.{n}" for d in universe.datasets for n in d.label_names)
            raise LabelError(f"unknown domain {tok!r}; valid names: {valid}")
        if len(found) > 1:
            raise LabelError(f"domain {tok!r} is ambiguous; qualify it as DATASET.{tok}")
        hits.append(found[0])
    origins = {i for i, _ in hits}
    if len(origins) != 1:
        raise LabelError(f"target {text!r} mixes datasets; one translation uses one dataset's labels")
    origin = origins.pop()
    spec = universe.datasets[origin]
    label = np.zeros(spec.dim, dtype=np.float32)
    for _, name in hits:
        label[spec.index(name)] = 1.0
    spec.validate(label)
    return label, origin


def cmd_translate(args) -> int:
    from PIL import Image

    from . import plotting
    from .config import load_config
    from .data import preprocess_image
    from .evaluate import emit_grid, translate
    from .labels import encode_unified, encode_with_mask_override
    from .trainer import StarGAN
    cfg = load_config(args.config, args.set)
    _banner(cfg.config_hash)
    model = StarGAN.from_checkpoint(_checkpoint_path(cfg, args.checkpoint))
    universe = model.universe
    prep = cfg.sources[0].prep
    images = []
    for p in args.inputs:
        with Image.open(p) as img:
            images.append(preprocess_image(img, prep))
    images = np.stack(images)
    vectors, names = [], []
    for t in args.target:
        label, origin = parse_target(t, universe)
        if args.mask is not None:
            mask = [float(v) for v in args.mask.replace(",", " ").split()]
            vec = encode_with_mask_override(label, origin, mask, universe)
        else:
            vec = encode_unified(label, origin, universe).values
        vectors.append(vec)
        names.append(t.replace("+", "_") + ("" if args.mask is None else "_mask" + args.mask.replace(",", "")))
    out_dir = Path(args.out) if args.out else cfg.out_dir / "translations"
    out_dir.mkdir(parents=True, exist_ok=True)
    for vec, name in zip(vectors, names):
        out = translate(model.G, images, vec).permute(0, 2, 3, 1).numpy()
        for src, arr in zip(args.inputs, out):
            path = out_dir / f"{Path(src).stem}_{name}.png"
            Image.fromarray(np.clip(np.rint((arr + 1) * 127.5), 0, 255).astype(np.uint8)).save(path)
            print(path)
    grid = emit_grid(model.G, images, vectors, out_dir / "grid.png")
    plotting.translation_figure(grid, len(images), ["input"] + list(args.target), out_dir / "grid_annotated.png")
    return 0


# ---------------------------------------------------------------- evaluate

def _classifiers(cfg, trains):
    from .evaluate import ClassifierConfig, train_eval_classifier
    out = []
    oracles = cfg.oracles()
    for tr, src, oracle in zip(trains, cfg.sources, oracles):
        use_oracle = cfg.eval.classifier == "oracle" or (cfg.eval.classifier == "auto" and oracle is not None)
        if cfg.eval.classifier == "oracle" and oracle is None:
            raise CommandError(f"no oracle.json under {src.root}; set eval.classifier = cnn")
        ccfg = ClassifierConfig(epochs=cfg.eval.classifier_epochs, accuracy_floor=cfg.eval.accuracy_floor,
                                seed=cfg.train.seed)
        out.append(train_eval_classifier(tr, src.spec, ccfg, oracle if use_oracle else None))
    return out


def cmd_evaluate(args) -> int:
    from . import plotting
    from .config import load_config
    from .evaluate import (EvalReport, classification_error_of_translations, domain_targets, emit_grid,
                           mask_probe, param_report, reconstruction_error, target_name)
    from .labels import encode_unified
    from .trainer import StarGAN
    cfg = load_config(args.config, args.set)
    _banner(cfg.config_hash)
    ckpt = _checkpoint_path(cfg, args.checkpoint)
    model = StarGAN.from_checkpoint(ckpt)
    universe = model.universe
    trains, tests = cfg.load_datasets()
    out_dir = Path(args.out) if args.out else cfg.out_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    classifiers = _classifiers(cfg, trains)

    per_dataset, errors, counts, names, trusted = {}, [], [], [], True
    for i, (test, (clf, acc, ok)) in enumerate(zip(tests, classifiers)):
        if len(test) == 0:
            raise CommandError(f"dataset {universe.datasets[i].name!r} has an empty test split (holdout = 0)")
        rep = classification_error_of_translations(model.G, test, universe, i, clf)
        rec = reconstruction_error(model.G, test, universe, i)
        per_dataset[universe.datasets[i].name] = {
            "classification_error": rep.classification_error,
            "uniform_mean_error": rep.uniform_mean_error,
            "per_domain_errors": rep.per_domain_errors,
            "domain_names": rep.domain_names,
            "reconstruction_l1": rec,
            "classifier_accuracy": acc,
            "trusted": ok,
        }
        errors += rep.per_domain_errors
        counts += rep.per_domain_counts
        names += [f"{universe.datasets[i].name}.{n}" for n in rep.domain_names]
        trusted = trusted and ok
        plotting.per_domain_errors(rep.domain_names, rep.per_domain_errors,
                                   out_dir / f"errors_{universe.datasets[i].name}.png",
                                   chance=1 - 1 / len(rep.domain_names))

    params = param_report(model.g_spec, model.d_spec, cfg.net.image_size, cfg.net.image_size)
    report = EvalReport(
        classification_error=float(np.dot(errors, counts) / np.sum(counts)),
        per_domain_errors=errors, per_domain_counts=counts, domain_names=names, n_images=int(np.sum(counts)),
        params_generator=params["params_generator"], params_discriminator=params["params_discriminator"],
        params_total=params["params_total"],
        classifier_accuracy=float(min(c[1] for c in classifiers)), trusted=trusted,
        config_hash=cfg.config_hash, extra={"datasets": per_dataset, "checkpoint": str(ckpt), "step": model.step},
    )

    # grid for the first dataset's test images against every target of every dataset
    n_in = min(cfg.eval.grid_inputs, len(tests[0]))
    inputs = tests[0].images[:n_in]
    vecs, titles = [], []
    for i, spec in enumerate(universe.datasets):
        for t in domain_targets(spec):
            vecs.append(encode_unified(t, i, universe).values)
            titles.append(target_name(spec, t))
    grid = emit_grid(model.G, inputs, vecs, out_dir / "grid.png")
    plotting.translation_figure(grid, n_in, ["input"] + titles, out_dir / "grid_annotated.png")

    if universe.has_mask:
        target = universe.n - 1
        probe = mask_probe(model.G, universe, tests[0].images, target, classifiers[target][0],
                           out_dir / "mask_probe.png")
        report.extra["mask_probe"] = probe

    report.save(out_dir / "report.json")
    (out_dir / "summary.md").write_text(report.markdown())
    print(f"classification_error {report.classification_error:.4f}")
    for name, d in per_dataset.items():
        print(f"dataset {name}: error {d['classification_error']:.4f} rec_l1 {d['reconstruction_l1']:.4f} "
              f"classifier_accuracy {d['classifier_accuracy']:.4f}")
    if "mask_probe" in report.extra:
        p = report.extra["mask_probe"]
        print(f"mask_probe proper {p['proper_error']:.4f} wrong {p['wrong_error']:.4f} chance {p['chance_error']:.4f}")
    print(f"report {out_dir / 'report.json'}")
    if args.strict:
        bad = [n for n, d in per_dataset.items()
               if d["classification_error"] > cfg.eval.max_error or d["reconstruction_l1"] > cfg.eval.max_rec]
        if bad:
            print(f"thresholds exceeded for {bad}", file=sys.stderr)
            return 1
    return 0


# ---------------------------------------------------------------- count-params

def cmd_count_params(args) -> int:
    if args.arch:
        specs = [load_network(p) for p in args.arch]
        cfg_hash = stable_hash([Path(p).read_text() for p in args.arch])
        h, w = args.size if args.size else (128, 128)
    elif args.config:
        from .config import load_config
        cfg = load_config(args.config, args.set)
        cfg_hash = cfg.config_hash
        if cfg.universe is None:
            raise CommandError("config declares no [dataset:NAME] sections")
        specs = list(cfg.net.specs(cfg.universe))
        h = w = cfg.net.image_size
    else:
        h, w = args.size if args.size else (128, 128)
        specs = [stargan_generator_spec(args.n_c), stargan_discriminator_spec(h, w, args.n_d)]
        cfg_hash = stable_hash({"paper": True, "n_c": args.n_c, "n_d": args.n_d, "h": h, "w": w})
        if args.reference is None:
            args.reference = PAPER_PARAMS
    _banner(cfg_hash)
    if args.write_arch:
        d = Path(args.write_arch)
        d.mkdir(parents=True, exist_ok=True)
        for s in specs:
            s.save(d / f"{s.name}.arch")
    print("network,layer,h,w,channels,params")
    total = 0
    for s in specs:
        rep = infer_shapes_and_params(s, h, w)
        if args.layers:
            for l in rep.layers:
                print(f"{s.name},{l.label},{l.h},{l.w},{l.channels},{l.params}")
        print(f"{s.name},total,,,,{rep.total_params}")
        total += rep.total_params
    print(f"all,total,,,,{total}")
    ref = args.reference
    if ref:
        print(f"reference {ref:.0f} relative_diff {(total - ref) / ref:+.4%}")
    return 0


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stargan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=True):
        sp.add_argument("config", nargs=None if required else "?")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a config key (repeatable; wins over the file)")

    sp = sub.add_parser("make-synthetic", help="write the [synthetic:*] corpora to disk")
    with_config(sp)
    sp.set_defaults(func=cmd_make_synthetic)

    sp = sub.add_parser("train", help="train (or resume) a model")
    with_config(sp)
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp.add_argument("--max-steps", type=int, help="stop after this global step")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("translate", help="translate images to target domains")
    with_config(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--inputs", nargs="+", required=True)
    sp.add_argument("--target", action="append", required=True,
                    help="domain name(s), '+'-joined for multi-attribute targets; repeatable")
    sp.add_argument("--mask", help="override the mask vector, e.g. 1,0 (evaluation only)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_translate)

    sp = sub.add_parser("evaluate", help="classification error, reconstruction, grids, mask probe")
    with_config(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--out")
    sp.add_argument("--strict", action="store_true", help="exit 1 when eval thresholds are exceeded")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("count-params", help="analytic parameter counts")
    with_config(sp, required=False)
    sp.add_argument("--arch", nargs="+", help="architecture files in table-row notation")
    sp.add_argument("--size", nargs=2, type=int, metavar=("H", "W"))
    sp.add_argument("--n-c", type=int, default=8, help="generator label dim (paper config)")
    sp.add_argument("--n-d", type=int, default=8, help="discriminator label dim (paper config)")
    sp.add_argument("--reference", type=float,
                    help="compare the total against this count (default: 53.2e6 for the built-in 128x128 configuration)")
    sp.add_argument("--write-arch", metavar="DIR", help="also write the specs as .arch files")
    sp.add_argument("--layers", action="store_true", help="print one row per layer")
    sp.set_defaults(func=cmd_count_params)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, SpecError, OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
