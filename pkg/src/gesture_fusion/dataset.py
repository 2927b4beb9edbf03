"""In-memory gesture sample arrays and their on-disk format.

On disk a dataset is a directory with one sub-directory per cross-subject
fold (``fold_0`` ... ``fold_{k-1}``).  Each holds ``samples.bin`` with one
little-endian float32 record per sample (``x_R`` then ``x_K``, row-major)
and ``manifest.tsv`` listing sample id, label, subject, byte offset and the
generator config hash.  ``dataset.manifest`` at the top level stores the
generator config.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_F32 = np.dtype("<f4")


@dataclass
class GestureDataset:
    x_R: np.ndarray  # [N, T, 5, 300]
    x_K: np.ndarray  # [N, T, 34]
    y: np.ndarray  # [N]
    subject: np.ndarray  # [N]
    sample_id: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.y)
        if not (len(self.x_R) == len(self.x_K) == len(self.subject) == n):
            raise ValueError("dataset arrays have different lengths")
        if self.sample_id is None:
            self.sample_id = np.arange(n)

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "GestureDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return GestureDataset(self.x_R[idx], self.x_K[idx], self.y[idx], self.subject[idx], self.sample_id[idx])

    def for_subjects(self, subjects) -> "GestureDataset":
        return self.take(np.flatnonzero(np.isin(self.subject, list(subjects))))

    def class_counts(self, n_classes: int = 8) -> np.ndarray:
        return np.bincount(self.y, minlength=n_classes)

    @staticmethod
    def concatenate(parts: list["GestureDataset"]) -> "GestureDataset":
        return GestureDataset(
            np.concatenate([p.x_R for p in parts]),
            np.concatenate([p.x_K for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.subject for p in parts]),
            np.concatenate([p.sample_id for p in parts]),
        )


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def write_split(directory, data: GestureDataset, cfg_hash: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = ["sample_id\tlabel\tsubject\toffset\tconfig_hash"]
    offset = 0
    with open(directory / "samples.bin", "wb") as fh:
        for i in range(len(data)):
            rec = np.concatenate([data.x_R[i].ravel(), data.x_K[i].ravel()]).astype(_F32).tobytes()
            fh.write(rec)
            rows.append(f"{data.sample_id[i]}\t{data.y[i]}\t{data.subject[i]}\t{offset}\t{cfg_hash}")
            offset += len(rec)
    (directory / "manifest.tsv").write_text("\n".join(rows) + "\n")


def read_split(directory, n_steps: int = 30, n_points: int = 300, keypoint_dim: int = 34) -> GestureDataset:
    directory = Path(directory)
    lines = (directory / "manifest.tsv").read_text().splitlines()[1:]
    n = len(lines)
    r_size = n_steps * 5 * n_points
    rec = r_size + n_steps * keypoint_dim
    blob = np.fromfile(directory / "samples.bin", dtype=_F32)
    ids, ys, subs = np.zeros(n, np.int64), np.zeros(n, np.int64), np.zeros(n, np.int64)
    x_R = np.empty((n, n_steps, 5, n_points), np.float32)
    x_K = np.empty((n, n_steps, keypoint_dim), np.float32)
    for i, line in enumerate(lines):
        sid, label, subject, offset, _ = line.split("\t")
        start = int(offset) // _F32.itemsize
        chunk = blob[start:start + rec]
        x_R[i] = chunk[:r_size].reshape(n_steps, 5, n_points)
        x_K[i] = chunk[r_size:].reshape(n_steps, keypoint_dim)
        ids[i], ys[i], subs[i] = int(sid), int(label), int(subject)
    return GestureDataset(x_R, x_K, ys, subs, ids)


def write_dataset(root, data: GestureDataset, folds: list[list[int]], generator_config: dict) -> str:
    """Write ``data`` partitioned by subject folds; returns the config hash."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    h = config_hash(generator_config)
    for k, subjects in enumerate(folds):
        write_split(root / f"fold_{k}", data.for_subjects(subjects), h)
    meta = {"config_hash": h, "folds": folds, "config": generator_config}
    (root / "dataset.manifest").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return h


def read_dataset(root) -> tuple[GestureDataset, list[list[int]], dict]:
    root = Path(root)
    meta_path = root / "dataset.manifest"
    if not meta_path.exists():
        raise FileNotFoundError(f"no dataset found at {root} (missing dataset.manifest)")
    meta = json.loads(meta_path.read_text())
    cfg = meta["config"]
    parts = [
        read_split(root / f"fold_{k}", cfg.get("n_steps", 30), cfg.get("n_points", 300))
        for k in range(len(meta["folds"]))
    ]
    data = GestureDataset.concatenate(parts)
    order = np.argsort(data.sample_id, kind="stable")
    return data.take(order), meta["folds"], cfg
