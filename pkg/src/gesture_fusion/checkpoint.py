"""Parameter checkpoints: little-endian float32 stream plus a text manifest.

``<stem>.bin`` holds the parameters back to back.  ``<stem>.manifest`` starts
with ``key = value`` header lines (model config as JSON, free metadata),
then one ``name<TAB>shape<TAB>byte_offset`` row per parameter.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import GestureModel, ModelConfig

_DTYPE = np.dtype("<f4")
_MAGIC = "# gesture-fusion checkpoint v1"


def _paths(stem) -> tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_suffix(".bin"), stem.with_suffix(".manifest")


def save_params(stem, named: dict[str, np.ndarray], meta: dict | None = None) -> None:
    bin_path, man_path = _paths(stem)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [_MAGIC]
    for k, v in (meta or {}).items():
        lines.append(f"{k} = {v}")
    lines.append("")
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, arr in named.items():
            raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
            shape = ",".join(str(d) for d in np.shape(arr))
            lines.append(f"{name}\t{shape}\t{offset}")
            fh.write(raw)
            offset += len(raw)
    man_path.write_text("\n".join(lines) + "\n")


def load_params(stem) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    bin_path, man_path = _paths(stem)
    text = man_path.read_text().splitlines()
    if not text or text[0] != _MAGIC:
        raise ValueError(f"{man_path} is not a checkpoint manifest")
    blob = bin_path.read_bytes()
    meta, params = {}, {}
    body = iter(text[1:])
    for line in body:
        if not line:
            break
        key, _, value = line.partition(" = ")
        meta[key] = value
    for line in body:
        name, shape, offset = line.split("\t")
        dims = tuple(int(d) for d in shape.split(",")) if shape else ()
        n = int(np.prod(dims)) if dims else 1
        start = int(offset)
        params[name] = np.frombuffer(blob, dtype=_DTYPE, count=n, offset=start).reshape(dims).copy()
    return params, meta


def save_model(stem, model: GestureModel, meta: dict | None = None) -> None:
    header = {"config": json.dumps(model.config.to_dict(), sort_keys=True)}
    header.update(meta or {})
    save_params(stem, dict(model.state_dict()), header)


def load_model(stem) -> GestureModel:
    params, meta = load_params(stem)
    model = GestureModel(ModelConfig.from_dict(json.loads(meta["config"])))
    model.load_state_dict(params)
    return model
