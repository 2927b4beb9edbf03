"""Command line entry point: ``gesture-fusion <command> [options]``.

Commands
--------
generate    synthetic dataset to a directory (refuses a non-empty one without --force)
train       fusion model per fold; run directories plus ``train_summary.csv``
eval        result table (fusion with/without SM-training, single-modality models)
ablate-sm   SM-ratio sweep of the fusion model
ablate-mu   auxiliary-loss-weight sweep of the fusion model
radar-sim   signal-level frontend audit against the fast path
gradcheck   finite-difference check of every differentiable op and a tiny model
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import config_hash, read_dataset, write_dataset
from .experiments import ExperimentConfig, ablate, load_config, run_fold, table1
from .synth import GeneratorConfig, audit_frontend, generate_dataset, subject_folds

log = logging.getLogger("gesture_fusion")

QUICK = {"n_subjects": 5, "epochs": 20, "folds": (0,)}


def _experiment(args) -> ExperimentConfig:
    exp = load_config(args.config)
    data, train, model = exp.data, exp.train, exp.model
    if args.quick:
        data = dataclasses.replace(data, n_subjects=QUICK["n_subjects"])
        train = dataclasses.replace(train, epochs=QUICK["epochs"])
        exp.folds = QUICK["folds"]
    if getattr(args, "subjects", None) is not None:
        data = dataclasses.replace(data, n_subjects=args.subjects)
    if args.seed is not None:
        data = dataclasses.replace(data, seed=args.seed)
        train = dataclasses.replace(train, seed=args.seed)
        model = dataclasses.replace(model, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        train = dataclasses.replace(train, epochs=args.epochs)
    if getattr(args, "fold", None):
        exp.folds = tuple(args.fold)
    elif getattr(args, "folds", None) is not None:
        exp.folds = tuple(range(args.folds))
    bad = [f for f in exp.folds if not 0 <= f < exp.n_folds]
    if bad:
        raise ValueError(f"fold(s) {bad} outside 0..{exp.n_folds - 1}")
    exp.data, exp.train, exp.model = data, train, model
    return exp


def _load_data(args, exp: ExperimentConfig):
    root = Path(args.data) if args.data else Path(args.out) / "dataset"
    if not (root / "dataset.manifest").exists():
        raise FileNotFoundError(f"no dataset at {root}; run 'gesture-fusion generate --out {root}' first")
    data, _, gen = read_dataset(root)
    exp.data = GeneratorConfig.from_dict(gen)
    return data, config_hash(gen)


def cmd_generate(args) -> int:
    exp = _experiment(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise FileExistsError(f"{out} is not empty; use --force to overwrite")
    cfg = exp.data
    log.info("generating %d subjects", cfg.n_subjects)
    data = generate_dataset(cfg, progress=lambda s: log.info("subject %d done", s))
    h = write_dataset(out, data, subject_folds(cfg.n_subjects, exp.n_folds, cfg.seed), cfg.to_dict())
    print(f"dataset {out}: {len(data)} samples, {cfg.n_subjects} subjects, config hash {h}")
    print("per class:  " + " ".join(str(c) for c in data.class_counts()))
    subs, counts = np.unique(data.subject, return_counts=True)
    print("per subject: " + " ".join(f"{s}:{c}" for s, c in zip(subs, counts)))
    return 0


def cmd_train(args) -> int:
    exp = _experiment(args)
    data, h = _load_data(args, exp)
    out = Path(args.out)
    rows = []
    for fold in exp.folds:
        r = run_fold(data, exp, fold, args.modalities, args.sm, out_root=out, data_hash=h,
                     force=args.force)
        rows.append([r.run_id, fold] + [f"{100 * r.accuracy[c]:.2f}" for c in sorted(r.accuracy)] + [r.best_epoch])
        print(f"fold {fold}: {r.run_id} " + " ".join(f"{c}={100 * a:.2f}" for c, a in sorted(r.accuracy.items())))
    conds = sorted(r.accuracy)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "fold"] + conds + ["best_epoch"])
        w.writerows(rows)
    return 0


def cmd_eval(args) -> int:
    exp = _experiment(args)
    data, h = _load_data(args, exp)
    table = table1(data, exp, args.out, data_hash=h, force=args.force)
    print(f"{'model':16s} {'condition':10s} {'sm':3s} accuracy")
    for t in table:
        print(f"{t['model']:16s} {t['condition']:10s} {t['sm_training']:3s} {100 * t['accuracy']:.2f}")
    return 0


def _cmd_ablate(args, which: str) -> int:
    exp = _experiment(args)
    data, h = _load_data(args, exp)
    cells = ablate(data, exp, which, args.out, data_hash=h, force=args.force)
    for name, vals in cells.items():
        print(f"{name:15s} " + " ".join(f"{100 * v:6.2f}" for v in vals))
    return 0


def cmd_radar_sim(args) -> int:
    exp = _experiment(args)
    res = audit_frontend(exp.data, n_subjects=args.subjects or 2, n_frames=args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "radar_audit.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "sensor", "matched", "d_range_m", "d_velocity_mps", "d_azimuth_deg", "snr_db"])
        for r in res.records:
            w.writerow([int(r[0]), int(r[1]), int(r[2])] + [f"{v:.4f}" for v in (r[3], r[4], np.rad2deg(r[5]), r[6])])
    dr, dv, da = res.max_error
    print(f"matched {res.n_matched}/{res.n_reference} fast-path targets ({100 * res.matched_fraction:.1f}%), "
          f"raw scatterers {100 * res.joint_fraction:.1f}%")
    print(f"max error over matched: range {dr:.3f} m, velocity {dv:.3f} m/s, azimuth {np.rad2deg(da):.2f} deg")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import gradient_suite

    errs = gradient_suite(seed=args.seed or 0)
    for name, e in errs.items():
        print(f"{name:24s} {e:.2e} {'ok' if e < args.tol else 'FAIL'}")
    worst = max(errs.values())
    print(f"max relative error {worst:.2e} (tolerance {args.tol:g})")
    return 0 if worst < args.tol else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gesture-fusion", description="Radar + keypoint gesture fusion experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="flat 'section.key = value' config file")
        sp.add_argument("--seed", type=int, help="override every seed")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--quick", action="store_true", help="1 fold, 20 epochs, 5-subject dataset")
        sp.add_argument("-v", "--verbose", action="store_true")
        if data:
            sp.add_argument("--data", help="dataset directory (default: <out>/dataset)")
            sp.add_argument("--fold", type=int, action="append", help="fold to run (repeatable)")
            sp.add_argument("--folds", type=int, help="run folds 0..N-1")
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--force", action="store_true", help="retrain runs that already exist")
        return sp

    g = common(sub.add_parser("generate", help="generate the synthetic dataset"), data=False)
    g.add_argument("--subjects", type=int)
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    g.set_defaults(func=cmd_generate)

    t = common(sub.add_parser("train", help="train one model variant per fold"))
    t.add_argument("--modalities", choices=("both", "keypoints", "radar"), default="both")
    t.add_argument("--sm", type=float, help="SM-training ratio (default from config)")
    t.set_defaults(func=cmd_train)

    common(sub.add_parser("eval", help="result table over the folds")).set_defaults(func=cmd_eval)
    common(sub.add_parser("ablate-sm", help="SM-ratio sweep")).set_defaults(func=lambda a: _cmd_ablate(a, "sm"))
    common(sub.add_parser("ablate-mu", help="loss-weight sweep")).set_defaults(func=lambda a: _cmd_ablate(a, "mu"))

    r = common(sub.add_parser("radar-sim", help="signal-level frontend audit"), data=False)
    r.add_argument("--subjects", type=int)
    r.add_argument("--frames", type=int, default=3)
    r.set_defaults(func=cmd_radar_sim)

    gc = sub.add_parser("gradcheck", help="gradient suite")
    gc.add_argument("--seed", type=int)
    gc.add_argument("--tol", type=float, default=1e-3)
    gc.add_argument("-v", "--verbose", action="store_true")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FileExistsError, KeyError, OSError) as e:
        print(f"gesture-fusion {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
