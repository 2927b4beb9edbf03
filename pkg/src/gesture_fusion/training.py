"""Loss, SGD with momentum, skipped-modality masking, training and evaluation."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as tc
from .dataset import GestureDataset
from .model import FusionOutputs, GestureModel, ModelConfig, predict
from .tensor import Tensor

log = logging.getLogger(__name__)

CONDITIONS = ("both", "keypoints", "radar")


@dataclass
class TrainConfig:
    epochs: int = 70
    batch_size: int = 32
    lr: float = 0.003
    momentum: float = 0.95
    weight_decay: float = 0.001
    mu: float = 0.5
    sm_ratio: float = 0.3
    seed: int = 0
    fold: int = 0
    micro_batch: int = 8  # gradient accumulation chunk; bounds memory, not the math
    aux_on_masked: bool = True
    eval_batch: int = 64
    target_train_acc: float | None = None  # stop once train accuracy reaches this

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.micro_batch < 1:
            raise ValueError("epochs, batch_size and micro_batch must be positive")
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("invalid optimizer settings")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if not 0 <= self.sm_ratio <= 1:
            raise ValueError("sm_ratio must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class RunHistory:
    epochs: list[dict] = field(default_factory=list)
    steps: list[tuple[float, float, float, float]] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = -1.0
    test_acc: dict[str, float] = field(default_factory=dict)


def _per_sample_labels(y, logits: Tensor) -> np.ndarray:
    y = np.asarray(y)
    return np.broadcast_to(y[..., None], logits.shape[:-1]) if y.ndim < logits.ndim - 1 else y


def total_loss(outputs: FusionOutputs, y, mu: float, aux_weights=None):
    """L = L_F + mu * (L_R + L_K), each term the mean per-time-step cross-entropy.

    ``aux_weights`` optionally gives per-sample ``(radar, keypoint)`` weights
    for the auxiliary terms (used to drop the aux loss of a skipped modality).
    Returns the total loss tensor and the float components.
    """
    labels = _per_sample_labels(y, outputs.y_hat)
    l_f = tc.cross_entropy(outputs.y_hat, labels)
    comps = {"L_F": float(l_f.data), "L_R": 0.0, "L_K": 0.0}
    if mu == 0:
        return l_f, comps
    if outputs.y_hat_R is None or outputs.y_hat_K is None:
        raise ValueError("mu > 0 needs the auxiliary outputs")
    w_r = w_k = None
    if aux_weights is not None:
        shape = (-1,) + (1,) * (labels.ndim - 1)
        w_r, w_k = (np.reshape(w, shape) for w in aux_weights)
    l_r = tc.cross_entropy(outputs.y_hat_R, labels, w_r)
    l_k = tc.cross_entropy(outputs.y_hat_K, labels, w_k)
    comps["L_R"], comps["L_K"] = float(l_r.data), float(l_k.data)
    return l_f + (l_r + l_k) * mu, comps


class SGD:
    """Classical momentum: v <- m v + g + wd theta; theta <- theta - lr v."""

    def __init__(self, named_params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.named = list(named_params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.velocity = [np.zeros_like(p.data) for _, p in self.named]

    def step(self) -> None:
        for (name, p), v in zip(self.named, self.velocity):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                bad = int(np.sum(~np.isfinite(g)))
                raise FloatingPointError(f"non-finite gradient in {name}: {bad} of {g.size} entries")
            sgd_update(p.data, g, v, self.lr, self.momentum, self.weight_decay)

    def zero_grad(self) -> None:
        for _, p in self.named:
            p.grad = None


def sgd_update(theta: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, momentum: float,
               weight_decay: float) -> None:
    """In-place momentum step on raw arrays."""
    velocity *= momentum
    velocity += grad
    if weight_decay:
        velocity += weight_decay * theta
    theta -= lr * velocity


def apply_sm_masking(n: int, sm_ratio: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample presence flags ``(radar_present, keypoints_present)``.

    Each sample is picked with probability ``sm_ratio``; a picked sample loses
    its radar or its keypoints with equal probability, never both.
    """
    picked = rng.random(n) < sm_ratio
    drop_radar = rng.random(n) < 0.5
    return ~(picked & drop_radar), ~(picked & ~drop_radar)


def condition_mask(condition: str, n: int):
    if condition == "both":
        return None
    if condition == "keypoints":
        return np.zeros(n, bool), np.ones(n, bool)
    if condition == "radar":
        return np.ones(n, bool), np.zeros(n, bool)
    raise ValueError(f"unknown condition {condition!r}")


def predict_dataset(model: GestureModel, data: GestureDataset, condition: str = "both",
                    batch: int = 64) -> np.ndarray:
    kind = model.config.modalities
    if kind != "both" and condition not in ("both", kind):
        raise ValueError(f"a {kind}-only model cannot be evaluated under condition {condition!r}")
    preds = np.empty(len(data), np.int64)
    with tc.no_grad():
        for s in range(0, len(data), batch):
            sl = slice(s, s + batch)
            n = len(data.y[sl])
            mask = condition_mask(condition, n) if kind == "both" else None
            out = model(data.x_R[sl], data.x_K[sl], mask=mask, with_aux=False)
            preds[sl] = predict(out)
    return preds


def evaluate(model: GestureModel, data: GestureDataset, condition: str = "both", batch: int = 64) -> float:
    """Fraction of windows whose predicted class matches the label."""
    if len(data) == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(predict_dataset(model, data, condition, batch) == data.y))


def train(model_config: ModelConfig, train_config: TrainConfig, train_data: GestureDataset,
          val_data: GestureDataset | None = None, model: GestureModel | None = None,
          progress=None) -> tuple[GestureModel, RunHistory]:
    """Mini-batch SGD with per-epoch validation; returns the best-validation model.

    Without ``val_data`` the training set doubles as the selection set.  A
    freshly built model takes its input standardization from ``train_data``.
    """
    if len(train_data) == 0:
        raise ValueError("empty training split")
    if val_data is not None and len(val_data) == 0:
        raise ValueError("empty validation split")
    cfg = train_config
    if model is None:
        model = GestureModel(model_config).fit_input_stats(train_data.x_R, train_data.x_K)
    two_stream = model.config.modalities == "both"
    mu = cfg.mu if (two_stream and model.has_aux) else 0.0
    sm_ratio = cfg.sm_ratio if two_stream else 0.0
    opt = SGD(model.named_parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    mask_rng = np.random.default_rng([cfg.seed, 2])
    select = val_data if val_data is not None else train_data
    hist = RunHistory()
    best_state = model.state_dict()
    n = len(train_data)

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            radar_on, kp_on = apply_sm_masking(len(idx), sm_ratio, mask_rng)
            opt.zero_grad()
            step = np.zeros(4)
            for ms in range(0, len(idx), cfg.micro_batch):
                sub = idx[ms:ms + cfg.micro_batch]
                r_on, k_on = radar_on[ms:ms + cfg.micro_batch], kp_on[ms:ms + cfg.micro_batch]
                out = model(train_data.x_R[sub], train_data.x_K[sub], mask=(r_on, k_on), with_aux=mu > 0)
                aux_w = None if cfg.aux_on_masked else (r_on.astype(float), k_on.astype(float))
                loss, comps = total_loss(out, train_data.y[sub], mu, aux_w)
                w = len(sub) / len(idx)
                scaled = tc.mul(loss, w)
                tc.backward(scaled)
                step += w * np.array([comps["L_F"], comps["L_R"], comps["L_K"], float(loss.data)])
            opt.step()
            hist.steps.append(tuple(step))
            sums += step * len(idx)
        row = dict(zip(("L_F", "L_R", "L_K", "total"), sums / n))
        row["epoch"] = epoch
        row["val_acc"] = evaluate(model, select, "both", cfg.eval_batch)
        if cfg.target_train_acc is not None:
            row["train_acc"] = row["val_acc"] if val_data is None else evaluate(model, train_data, "both", cfg.eval_batch)
        hist.epochs.append(row)
        if row["val_acc"] > hist.best_val_acc:
            hist.best_val_acc, hist.best_epoch = row["val_acc"], epoch
            best_state = model.state_dict()
        log.info("epoch %d total=%.4f val_acc=%.4f", epoch, row["total"], row["val_acc"])
        if progress is not None:
            progress(row)
        if cfg.target_train_acc is not None and row["train_acc"] >= cfg.target_train_acc:
            break
    model.load_state_dict(best_state)
    return model, hist
