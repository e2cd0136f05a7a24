"""Command-line interface.

Exit codes: 0 success, 1 usage, 2 data/config error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import data
from .errors import DataError, IusError, NumericError
from .harness import studies
from .harness.curation import ScoredPool, curate_vh, parse_distribution, random_control
from .harness.records import write_run_manifest, write_table
from .harness.sensitivity import baseline_sensitivity, group_by_level, joint_threshold_probability, magnitude_stats
from .ius import DEFAULT_THRESHOLDS, Scope, compute_baseline, score_set
from .neural import LabeledArrays, TrainConfig, train_epu
from .pfm import ColorSpace, PfmConfig

log = logging.getLogger("iusim")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _modality(name: str) -> ColorSpace:
    return ColorSpace.SRGB if name == "color" else ColorSpace.GRAY


def _size(n: int) -> tuple[int, int]:
    return (n, n)


def _images(manifest, size, modality):
    return data.load_manifest_images(manifest, size, modality)


def _pfm_stack(images):
    return studies.pfm_array(images)


def cmd_train(args) -> int:
    manifest = data.read_manifest(args.manifest)
    classes = manifest.classes
    if len(classes) != 2:
        raise DataError(f"{args.manifest}: binary training needs exactly 2 labels, found {classes}")
    train_m, val_m, test_m = data.stratified_split(manifest, data.SplitSpec(rng_seed=args.seed))
    if len(train_m) == 0 or len(val_m) == 0:
        raise DataError(f"{args.manifest}: empty train or validation split")
    size, modality = _size(args.input_size), _modality(args.modality)
    cfg = PfmConfig.for_color_space(modality)

    def arrays(m):
        x = _pfm_stack(_images(m, size, modality))
        y = np.array([classes.index(r.label) for r in m.rows])
        return LabeledArrays(x, y, cfg)

    tc = TrainConfig(args.lr, args.momentum, args.batch, args.epochs, args.patience, args.seed)
    model, history = train_epu(arrays(train_m), arrays(val_m), tc,
                               callback=lambda r: log.info("epoch %d val_loss %.4f val_acc %.3f",
                                                           r.epoch, r.val_loss, r.val_accuracy))
    out = Path(args.out)
    data.save_model(model, out / "model.json")
    write_table(studies.history_rows(history), out / "history.csv",
                ["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"])
    for name, part in (("train", train_m), ("val", val_m), ("test", test_m)):
        data.write_manifest(data.Manifest([data.ManifestRow(str(part.resolve(r)), r.label, r.split)
                                           for r in part.rows]), out / f"split_{name}.csv")
    write_run_manifest(out / "run_manifest.json", args.seed,
                       {"command": "train", "classes": classes, "input_size": list(size),
                        "modality": args.modality, "train": tc.__dict__,
                        "split_sizes": [len(train_m), len(val_m), len(test_m)]},
                       [args.manifest])
    print(f"model written to {out / 'model.json'} ({len(history)} epochs)")
    return 0


def _baseline_rows(manifest):
    test = manifest.in_split(data.Split.TEST)
    return test if len(test) else manifest


def cmd_baseline(args) -> int:
    model = data.load_model(args.model)
    manifest = _baseline_rows(data.read_manifest(args.manifest, require_labels=False))
    scope = Scope(args.scope)
    if scope is Scope.PER_CLASS and not manifest.labeled:
        raise DataError(f"{args.manifest}: per-class baseline needs labels for every row")
    images = _images(manifest, model.input_size, model.pfm_config.color_space)
    labels = manifest.labels if scope is Scope.PER_CLASS else None
    baseline = compute_baseline(model, images, labels, scope)
    data.save_baseline(baseline, args.out)
    write_run_manifest(Path(args.out).with_suffix(".run.json"), args.seed,
                       {"command": "baseline", "scope": scope.value, "n_images": len(images)},
                       [args.model, args.manifest])
    print(f"baseline written to {args.out} ({', '.join(f'{k}: J={v}' for k, v in baseline.counts.items())})")
    return 0


def _thresholds(text):
    if text is None:
        return DEFAULT_THRESHOLDS
    try:
        t = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad --thresholds {text!r}") from None
    if len(t) != 4:
        raise UsageError("--thresholds needs four comma-separated values")
    return t


def cmd_score(args) -> int:
    model = data.load_model(args.model)
    baseline = data.load_baseline(args.baseline)
    manifest = data.read_manifest(args.manifest, require_labels=False)
    thresholds = _thresholds(args.thresholds)
    entries = []
    failures = []
    for row in manifest.rows:
        try:
            image = data.load_image(manifest.resolve(row), model.input_size, model.pfm_config.color_space)
        except DataError as exc:
            failures.append((row.path, str(exc)))
            continue
        entries.append((row.path, image, row.label))
    result = score_set(model, baseline, entries, workers=args.workers, thresholds=thresholds)
    failures += result.failures
    note = None if thresholds == DEFAULT_THRESHOLDS else f"non-standard thresholds {list(thresholds)}"
    data.write_score_report(result.items, args.out, model.pfm_config, note)
    write_run_manifest(Path(args.out).with_suffix(".run.json"), args.seed,
                       {"command": "score", "thresholds": list(thresholds), "scored": len(result.items),
                        "failed": len(failures)},
                       [args.model, args.baseline, args.manifest])
    for ident, msg in failures:
        print(f"failed: {ident}: {msg}", file=sys.stderr)
    print(f"{len(result.items)} scored, {len(failures)} failed -> {args.out}")
    return 0


def cmd_curate(args) -> int:
    items, _ = data.read_score_report(args.scores)
    pool = ScoredPool.from_items(items)
    dist = parse_distribution(args.dist)
    if args.mode == "vh":
        ids = curate_vh(pool, args.count, dist)
    else:
        ids = random_control(pool, args.count, dist, args.seed)
    data._atomic_write(args.out, ("\n".join(ids) + ("\n" if ids else "")).encode("utf-8"))
    write_run_manifest(Path(args.out).with_suffix(".run.json"), args.seed,
                       {"command": "curate", "mode": args.mode, "count": args.count, "dist": dist},
                       [args.scores])
    print(f"{len(ids)} ids written to {args.out}")
    return 0


def cmd_sensitivity(args) -> int:
    model = data.load_model(args.model)
    manifest = _baseline_rows(data.read_manifest(args.manifest, require_labels=False))
    pool_items, _ = data.read_score_report(args.pool)
    scope = Scope(args.scope) if args.scope else (Scope.PER_CLASS if manifest.labeled else Scope.GLOBAL)
    images = _images(manifest, model.input_size, model.pfm_config.color_space)
    labels = manifest.labels if scope is Scope.PER_CLASS else None
    res = baseline_sensitivity(model, images, labels, pool_items, seed=args.seed, scope=scope)
    out = Path(args.out)
    write_table(res.cosine_rows(), out / "sensitivity_cosines.csv", ["fraction_a", "fraction_b", "class", "cosine"])
    write_table(res.agreement_rows(), out / "sensitivity_agreement.csv", ["fraction", "n_images", "vh_agreement"])
    mag = magnitude_stats(group_by_level(pool_items))
    write_table(mag.rows(), out / "magnitudes.csv", ["group", "count", "min", "q1", "median", "q3", "max"])
    if pool_items:
        jtp = joint_threshold_probability([it.profile for it in pool_items])
        write_table([{"threshold": t, "probability": p} for t, p in jtp], out / "joint_threshold.csv")
    write_run_manifest(out / "run_manifest.json", args.seed,
                       {"command": "sensitivity", "scope": scope.value, "fractions": list(res.fractions),
                        "notes": mag.notes},
                       [args.model, args.manifest, args.pool])
    for f in res.fractions:
        print(f"fraction {f}: {res.sizes[f]} images, VH agreement {res.agreement[f]:.4f}")
    return 0


def cmd_study(args) -> int:
    out = Path(args.out)
    if args.kind == "toy":
        run = studies.train_toy(args.seed)
        run.corpus.write(out / "corpus")
        studies.toy_study(out, args.seed, run)
        print(f"toy study: best val accuracy {run.best_val_accuracy:.3f} ({len(run.history)} epochs) -> {out}")
    elif args.kind == "degradation":
        rep = studies.degradation(out, args.seed)
        for r in rep.rows:
            print(f"level {r.level}: mean u {r.mean_u:.4f} (sd {r.sd_u:.4f})")
        print(f"spearman(level, mean u) = {rep.spearman:.3f}")
    else:
        res = studies.probe(out, args.seed, repeats=args.repeats)
        for r in res.runs:
            print(f"repeat {r.repeat}: curated {r.curated_accuracy:.3f} vs control {r.control_accuracy:.3f}")
        print(f"curated >= control in {res.wins}/{len(res.runs)} repeats")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iusim", description="Interpretable utility similarity for synthetic images.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train an EPU classifier on a labeled manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--modality", choices=["color", "gray"], default="color")
    t.add_argument("--input-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--epochs", type=int, default=50, help="maximum epochs")
    t.add_argument("--seed", type=int, default=42)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("baseline", help="average profiles of real (test) images")
    b.add_argument("--model", required=True)
    b.add_argument("--manifest", required=True)
    b.add_argument("--scope", choices=["global", "per-class"], default="per-class")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=42)
    b.set_defaults(func=cmd_baseline)

    s = sub.add_parser("score", help="score images against a baseline")
    s.add_argument("--model", required=True)
    s.add_argument("--baseline", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--thresholds", help="advanced: four comma-separated level thresholds")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--seed", type=int, default=42)
    s.set_defaults(func=cmd_score)

    c = sub.add_parser("curate", help="select a VH-only or random subset from a score report")
    c.add_argument("--scores", required=True)
    c.add_argument("--count", type=int, required=True)
    c.add_argument("--dist", required=True, help='e.g. "classA=0.5,classB=0.5"')
    c.add_argument("--mode", choices=["vh", "random"], default="vh")
    c.add_argument("--seed", type=int, default=42)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_curate)

    se = sub.add_parser("sensitivity", help="baseline subsampling and magnitude analyses")
    se.add_argument("--model", required=True)
    se.add_argument("--manifest", required=True)
    se.add_argument("--pool", required=True, help="score report of the synthetic pool")
    se.add_argument("--scope", choices=["global", "per-class"])
    se.add_argument("--out", required=True)
    se.add_argument("--seed", type=int, default=42)
    se.set_defaults(func=cmd_sensitivity)

    st = sub.add_parser("study", help="run a scripted toy study")
    st.add_argument("kind", choices=["toy", "degradation", "probe"])
    st.add_argument("--out", required=True)
    st.add_argument("--seed", type=int, default=42)
    st.add_argument("--repeats", type=int, default=5)
    st.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"iusim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"iusim: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except IusError as exc:
        print(f"iusim: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"iusim: I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
