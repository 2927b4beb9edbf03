"""Cross-subject experiment loops, run directories and result tables.

A run directory holds ``config.json`` (everything needed to re-run),
``metrics.csv`` (per-epoch losses and validation accuracy), the best
checkpoint (``best.bin`` / ``best.manifest``) and ``report.csv`` (test
accuracy per evaluation condition).  Run ids are derived from the run
configuration, so repeating a run reuses or reproduces the same ids.
"""
from __future__ import annotations

import ast
import csv
import dataclasses
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_model
from .dataset import GestureDataset, config_hash
from .model import ModelConfig
from .synth import GeneratorConfig, cross_subject_split
from .training import CONDITIONS, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

SM_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
MU_GRID = (0.0, 0.2, 0.5, 0.8, 1.0, 2.0, 3.0)
ROWS = (("Fusion", "both"), ("Only Keypoints", "keypoints"), ("Only Radar", "radar"))


@dataclass
class ExperimentConfig:
    data: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: tuple = (0, 1, 2, 3, 4)
    n_folds: int = 5
    val_fraction: float = 0.15

    def to_dict(self) -> dict:
        return {"data": self.data.to_dict(), "model": self.model.to_dict(), "train": self.train.to_dict(),
                "folds": list(self.folds), "n_folds": self.n_folds, "val_fraction": self.val_fraction}


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", ""):
        return None
    if "," in text:
        return tuple(_parse_value(t) for t in text.split(",") if t.strip())
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str) -> dict[str, dict]:
    """Flat ``section.key = value`` lines (``#`` comments) into nested dicts."""
    out: dict[str, dict] = {"data": {}, "model": {}, "train": {}, "experiment": {}}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or section not in out:
            raise ValueError(f"config line {n}: expected 'section.key = value' with section in {sorted(out)}")
        out[section][name.strip()] = _parse_value(value)
    return out


def build_config(sections: dict[str, dict] | None = None) -> ExperimentConfig:
    sections = sections or {}
    exp = dict(sections.get("experiment", {}))

    def make(cls, values):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        vals = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items()}
        for k, v in vals.items():  # single values for tuple fields
            default = getattr(cls(), k) if cls is not ModelConfig else getattr(ModelConfig(), k)
            if isinstance(default, tuple) and not isinstance(v, tuple):
                vals[k] = (v,)
        return cls(**vals)

    folds = exp.pop("folds", (0, 1, 2, 3, 4))
    cfg = ExperimentConfig(
        data=make(GeneratorConfig, sections.get("data", {})),
        model=make(ModelConfig, sections.get("model", {})),
        train=make(TrainConfig, sections.get("train", {})),
        folds=tuple(folds) if isinstance(folds, (tuple, list)) else (int(folds),),
        **exp,
    )
    return cfg


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return build_config()
    return build_config(parse_config_text(Path(path).read_text()))


# -- runs -------------------------------------------------------------------------

@dataclass
class RunResult:
    run_id: str
    fold: int
    modalities: str
    sm_ratio: float
    mu: float
    accuracy: dict[str, float]
    best_epoch: int
    run_dir: Path | None = None


def run_id_for(cfg: dict) -> str:
    m, t = cfg["model"], cfg["train"]
    tag = {"both": "fusion", "keypoints": "kp", "radar": "radar"}[m["modalities"]]
    return f"{tag}-sm{round(t['sm_ratio'] * 100):02d}-mu{t['mu']:g}-f{t['fold']}-{config_hash(cfg)[:8]}"


def split_for(data_cfg: GeneratorConfig, fold: int, exp: ExperimentConfig) -> tuple[list, list, list]:
    return cross_subject_split(data_cfg.n_subjects, fold, exp.n_folds, exp.val_fraction, data_cfg.seed)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _fmt(x: float) -> str:
    return f"{100 * x:.2f}"


def run_fold(data: GestureDataset, exp: ExperimentConfig, fold: int, modalities: str = "both",
             sm_ratio: float | None = None, mu: float | None = None, out_root=None,
             data_hash: str = "", force: bool = False) -> RunResult:
    """Train one model on one fold and evaluate it on the fold's test subjects.

    With ``out_root`` the run directory is written; an existing complete run
    with an identical config is loaded from its report instead of retrained
    unless ``force`` is set.
    """
    tcfg = dataclasses.replace(
        exp.train, fold=fold, seed=exp.train.seed + fold,
        sm_ratio=exp.train.sm_ratio if sm_ratio is None else sm_ratio,
        mu=exp.train.mu if mu is None else mu,
    )
    mcfg = dataclasses.replace(exp.model, modalities=modalities, aux_enabled=exp.model.aux_enabled and modalities == "both",
                               seed=exp.model.seed + fold)
    if modalities != "both":
        tcfg = dataclasses.replace(tcfg, sm_ratio=0.0, mu=0.0)
    snapshot = {"model": mcfg.to_dict(), "train": tcfg.to_dict(), "data": exp.data.to_dict(),
                "data_hash": data_hash, "n_folds": exp.n_folds, "val_fraction": exp.val_fraction}
    rid = run_id_for(snapshot)
    conditions = CONDITIONS if modalities == "both" else (modalities,)
    run_dir = Path(out_root) / "runs" / rid if out_root is not None else None
    if run_dir is not None and not force and (run_dir / "report.csv").exists():
        stored = json.loads((run_dir / "config.json").read_text())
        if stored == json.loads(json.dumps(snapshot)):
            with open(run_dir / "report.csv") as fh:
                rows = list(csv.DictReader(fh))
            acc = {r["condition"]: float(r["accuracy"]) / 100 for r in rows}
            log.info("reusing run %s", rid)
            return RunResult(rid, fold, modalities, tcfg.sm_ratio, tcfg.mu, acc, int(rows[0]["best_epoch"]), run_dir)

    train_ids, val_ids, test_ids = split_for(exp.data, fold, exp)
    tr, va, te = data.for_subjects(train_ids), data.for_subjects(val_ids), data.for_subjects(test_ids)
    if len(te) == 0:
        raise ValueError(f"fold {fold} has no test samples")
    log.info("run %s: %d train / %d val / %d test samples", rid, len(tr), len(va), len(te))
    model, hist = train(mcfg, tcfg, tr, va if len(va) else None)
    acc = {c: evaluate(model, te, c, tcfg.eval_batch) for c in conditions}
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(snapshot, indent=1, sort_keys=True) + "\n")
        keys = ("epoch", "L_F", "L_R", "L_K", "total", "val_acc")
        _write_csv(run_dir / "metrics.csv", keys,
                   [[e["epoch"]] + [f"{float(e[k]):.6f}" for k in keys[1:]] for e in hist.epochs])
        save_model(run_dir / "best", model, {"run_id": rid, "best_epoch": hist.best_epoch})
        _write_csv(run_dir / "report.csv", ("run_id", "condition", "accuracy", "best_epoch"),
                   [[rid, c, _fmt(a), hist.best_epoch] for c, a in acc.items()])
    return RunResult(rid, fold, modalities, tcfg.sm_ratio, tcfg.mu, acc, hist.best_epoch, run_dir)


def _mean(results: list[RunResult], condition: str) -> float:
    return float(np.mean([r.accuracy[condition] for r in results]))


def table1(data: GestureDataset, exp: ExperimentConfig, out_root, data_hash: str = "",
           force: bool = False) -> list[dict]:
    """Fusion (with and without SM-training) and single-modality models over the folds.

    Rows: model variant x evaluation condition x SM-training flag with the
    fold-mean accuracy; written to ``table1.csv``.
    """
    sm = exp.train.sm_ratio
    runs: dict[tuple, list[RunResult]] = {}
    for fold in exp.folds:
        for key, mod, ratio in (("fusion-sm", "both", sm), ("fusion", "both", 0.0),
                                ("keypoints", "keypoints", 0.0), ("radar", "radar", 0.0)):
            runs.setdefault(key, []).append(run_fold(data, exp, fold, mod, ratio, out_root=out_root,
                                                      data_hash=data_hash, force=force))
    rows = []
    for key, label, flag in (("fusion", "fusion", "no"), ("fusion-sm", "fusion", "yes")):
        for cond in CONDITIONS:
            rows.append({"model": label, "condition": cond, "sm_training": flag, "results": runs[key], "cond": cond})
    rows.append({"model": "keypoints-only", "condition": "keypoints", "sm_training": "no", "results": runs["keypoints"], "cond": "keypoints"})
    rows.append({"model": "radar-only", "condition": "radar", "sm_training": "no", "results": runs["radar"], "cond": "radar"})
    table = []
    for r in rows:
        res = r["results"]
        table.append({
            "model": r["model"], "condition": r["condition"], "sm_training": r["sm_training"],
            "accuracy": _mean(res, r["cond"]),
            "fold_accuracies": [x.accuracy[r["cond"]] for x in res],
            "run_ids": [x.run_id for x in res],
        })
    out = Path(out_root)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "table1.csv", ("model", "condition", "sm_training", "accuracy", "fold_accuracies", "run_ids"),
               [[t["model"], t["condition"], t["sm_training"], _fmt(t["accuracy"]),
                 ";".join(_fmt(a) for a in t["fold_accuracies"]), ";".join(t["run_ids"])] for t in table])
    return table


def ablate(data: GestureDataset, exp: ExperimentConfig, which: str, out_root, grid=None,
           data_hash: str = "", force: bool = False) -> dict[str, list[float]]:
    """SM-ratio or loss-weight sweep of the fusion model; rows as in the result tables.

    Each cell is the fold-mean test accuracy of the fusion model under the
    row's evaluation condition.  Written to ``ablation_<which>.csv``.
    """
    if which not in ("sm", "mu"):
        raise ValueError("which must be 'sm' or 'mu'")
    grid = tuple(grid if grid is not None else (SM_GRID if which == "sm" else MU_GRID))
    cells: dict[str, list[float]] = {name: [] for name, _ in ROWS}
    ids = []
    for value in grid:
        res = [run_fold(data, exp, f, "both", value if which == "sm" else None, value if which == "mu" else None,
                        out_root=out_root, data_hash=data_hash, force=force) for f in exp.folds]
        ids += [r.run_id for r in res]
        for name, cond in ROWS:
            cells[name].append(_mean(res, cond))
    header = ["row"] + [f"{round(v * 100)}%" if which == "sm" else f"{v:g}" for v in grid] + ["run_ids"]
    out = Path(out_root)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / f"ablation_{which}.csv", header,
               [[name] + [_fmt(a) for a in cells[name]] + [";".join(ids)] for name, _ in ROWS])
    return cells
