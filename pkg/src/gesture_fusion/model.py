"""Two-stream radar + keypoint fusion network and its single-modality variants."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

from . import tensor as tc
from .nn import ClassifierHead, Module, PointNetEncoder, Standardizer, StMlp
from .tensor import ShapeError, Tensor

MODALITIES = ("both", "radar", "keypoints")


class AuxUnavailableError(RuntimeError):
    """Raised when auxiliary outputs are requested from a model without aux heads."""


@dataclass
class ModelConfig:
    n_classes: int = 8
    n_steps: int = 30
    hidden: int = 256  # fused width H; each stream emits H/2
    point_dim: int = 5
    n_points: int = 300
    keypoint_dim: int = 34
    pn_mlp1: tuple = (64, 64)
    pn_mlp2: tuple = (64, 128, 1024)
    pn_out: int = 512
    feature_transform: bool = True
    tnet_mlp: tuple = (64, 128, 1024)
    tnet_fc: tuple = (512, 256)
    mixer_depth: int = 4
    mixer_hidden: int = 256
    time_hidden: int = 256
    feature_hidden: int = 64
    aux_enabled: bool = True
    modalities: str = "both"
    seed: int = 0

    def __post_init__(self):
        for f in ("pn_mlp1", "pn_mlp2", "tnet_mlp", "tnet_fc"):
            setattr(self, f, tuple(int(v) for v in getattr(self, f)))
        if self.hidden % 2:
            raise ValueError(f"hidden width must be even, got {self.hidden}")
        if self.modalities not in MODALITIES:
            raise ValueError(f"modalities must be one of {MODALITIES}, got {self.modalities!r}")
        if self.modalities != "both" and self.aux_enabled:
            # a single stream has nothing to be auxiliary to
            self.aux_enabled = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ModalityMask:
    radar_present: bool = True
    keypoints_present: bool = True

    def __post_init__(self):
        if not (self.radar_present or self.keypoints_present):
            raise ValueError("at least one modality must be present")


@dataclass
class FusionOutputs:
    y_hat: Tensor
    y_hat_R: Optional[Tensor] = None
    y_hat_K: Optional[Tensor] = None
    features: Optional[dict] = None


def _mask_arrays(mask, batch: int) -> tuple[np.ndarray, np.ndarray]:
    if mask is None:
        return np.ones(batch, bool), np.ones(batch, bool)
    if isinstance(mask, ModalityMask):
        return np.full(batch, mask.radar_present), np.full(batch, mask.keypoints_present)
    radar, kp = (np.asarray(m, bool) for m in mask)
    if np.any(~radar & ~kp):
        raise ValueError("a sample has both modalities masked")
    return radar, kp


def _zero_masked(x: np.ndarray, present: np.ndarray) -> np.ndarray:
    if present.all():
        return x
    x = x.copy()
    x[~present] = 0
    return x


class GestureModel(Module):
    """Radar stream (PointNet + stMLP), keypoint stream (stMLP), fusion stMLP, head.

    With ``config.modalities`` set to ``"radar"`` or ``"keypoints"`` only the
    corresponding stream is built and the fusion stMLP takes ``H/2`` inputs.
    Auxiliary heads exist only for the two-stream model with ``aux_enabled``.
    """

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        half = cfg.hidden // 2
        mixer = dict(
            hidden=cfg.mixer_hidden,
            depth=cfg.mixer_depth,
            time_hidden=cfg.time_hidden,
            feature_hidden=cfg.feature_hidden,
        )
        use_radar = cfg.modalities in ("both", "radar")
        use_kp = cfg.modalities in ("both", "keypoints")
        if use_radar:
            self.radar_norm = Standardizer(cfg.point_dim, feature_axis=-2)
            self.pointnet = PointNetEncoder(
                rng,
                point_dim=cfg.point_dim,
                mlp1=cfg.pn_mlp1,
                mlp2=cfg.pn_mlp2,
                out_dim=cfg.pn_out,
                feature_transform=cfg.feature_transform,
                tnet_mlp=cfg.tnet_mlp,
                tnet_fc=cfg.tnet_fc,
            )
            self.radar_mlp = StMlp(cfg.n_steps, cfg.pn_out, half, rng, **mixer)
        if use_kp:
            self.keypoint_norm = Standardizer(cfg.keypoint_dim)
            self.keypoint_mlp = StMlp(cfg.n_steps, cfg.keypoint_dim, half, rng, **mixer)
        fused_in = cfg.hidden if cfg.modalities == "both" else half
        self.fusion_mlp = StMlp(cfg.n_steps, fused_in, cfg.hidden, rng, **mixer)
        self.head = ClassifierHead(cfg.hidden, cfg.n_classes, rng)
        if cfg.aux_enabled:
            self.aux_radar = ClassifierHead(half, cfg.n_classes, rng)
            self.aux_keypoints = ClassifierHead(half, cfg.n_classes, rng)

    @property
    def has_aux(self) -> bool:
        return self.config.aux_enabled

    def _check(self, x_R, x_K) -> int:
        cfg = self.config
        batch = None
        if x_R is not None:
            if x_R.ndim != 4 or x_R.shape[1:3] != (cfg.n_steps, cfg.point_dim):
                raise ShapeError(f"radar input must be [B, {cfg.n_steps}, {cfg.point_dim}, N], got {x_R.shape}")
            batch = x_R.shape[0]
        if x_K is not None:
            if x_K.shape[1:] != (cfg.n_steps, cfg.keypoint_dim):
                raise ShapeError(f"keypoint input must be [B, {cfg.n_steps}, {cfg.keypoint_dim}], got {x_K.shape}")
            if batch is not None and x_K.shape[0] != batch:
                raise ShapeError(f"batch sizes differ: radar {x_R.shape}, keypoints {x_K.shape}")
            batch = x_K.shape[0]
        if batch is None:
            raise ValueError("no input given")
        return batch

    def fit_input_stats(self, x_R=None, x_K=None) -> "GestureModel":
        """Set the fixed input standardization from training inputs."""
        if x_R is not None and hasattr(self, "radar_norm"):
            self.radar_norm.fit(x_R)
        if x_K is not None and hasattr(self, "keypoint_norm"):
            self.keypoint_norm.fit(x_K)
        return self

    def forward(self, x_R=None, x_K=None, mask=None, with_aux: bool | None = None,
                return_features: bool = False) -> FusionOutputs:
        """Run the network on a batch (or a single unbatched sample).

        ``mask`` is a :class:`ModalityMask` for the whole batch or a pair of
        per-sample boolean arrays ``(radar_present, keypoints_present)``.  A
        masked modality's input is replaced by zeros after the fixed input
        standardization, i.e. it enters its stream at the training mean.
        """
        cfg = self.config
        if with_aux and not self.has_aux:
            raise AuxUnavailableError("this model has no auxiliary heads")
        if with_aux is None:
            with_aux = self.has_aux
        x_R = None if x_R is None else np.asarray(x_R)
        x_K = None if x_K is None else np.asarray(x_K)
        single = (x_K is not None and x_K.ndim == 2) or (x_R is not None and x_R.ndim == 3)
        if single:
            x_R = None if x_R is None else x_R[None]
            x_K = None if x_K is None else x_K[None]
        if cfg.modalities == "radar":
            x_K = None
        elif cfg.modalities == "keypoints":
            x_R = None
        elif x_R is None or x_K is None:
            raise ValueError("the two-stream model needs both inputs; mask a modality instead of omitting it")
        batch = self._check(x_R, x_K)
        radar_on, kp_on = _mask_arrays(mask, batch)

        feats = {}
        streams = []
        if x_R is not None:
            x_R = _zero_masked(self.radar_norm(x_R), radar_on)
            feats["radar_points"] = self.pointnet(x_R)
            feats["radar"] = self.radar_mlp(feats["radar_points"])
            streams.append(feats["radar"])
        if x_K is not None:
            x_K = _zero_masked(self.keypoint_norm(x_K), kp_on)
            feats["keypoints"] = self.keypoint_mlp(Tensor(x_K))
            streams.append(feats["keypoints"])
        fused_in = streams[0] if len(streams) == 1 else tc.concat(streams, axis=-1)
        feats["fused_input"] = fused_in
        feats["fused"] = self.fusion_mlp(fused_in)
        out = FusionOutputs(self.head(feats["fused"]))
        if with_aux:
            out.y_hat_R = self.aux_radar(feats["radar"])
            out.y_hat_K = self.aux_keypoints(feats["keypoints"])
        if return_features:
            out.features = feats
        if single:
            out.y_hat = out.y_hat.reshape(out.y_hat.shape[1:])
            if out.y_hat_R is not None:
                out.y_hat_R = out.y_hat_R.reshape(out.y_hat_R.shape[1:])
                out.y_hat_K = out.y_hat_K.reshape(out.y_hat_K.shape[1:])
        return out


def aux_parameter_count(model: GestureModel) -> int:
    return sum(p.size for n, p in model.named_parameters() if n.startswith("aux_"))


def strip_aux(model: GestureModel) -> GestureModel:
    """Copy of ``model`` without the auxiliary heads; ``y_hat`` is unchanged."""
    stripped = copy.deepcopy(model)
    if stripped.has_aux:
        del stripped.aux_radar
        del stripped.aux_keypoints
        stripped.config = replace(stripped.config, aux_enabled=False)
    return stripped


def single_modality_model(config: ModelConfig, which: str) -> GestureModel:
    """Model containing only the ``"radar"`` or ``"keypoints"`` stream."""
    if which not in ("radar", "keypoints"):
        raise ValueError(f"which must be 'radar' or 'keypoints', got {which!r}")
    d = config.to_dict()
    d.update(modalities=which, aux_enabled=False)
    return GestureModel(ModelConfig.from_dict(d))


def predict(outputs: FusionOutputs | Tensor | np.ndarray) -> np.ndarray | int:
    """Class index per sample from the time-averaged logits; ties go to the lowest class."""
    logits = outputs.y_hat if isinstance(outputs, FusionOutputs) else outputs
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    mean = logits.astype(np.float64).mean(axis=-2)
    pred = np.argmax(mean, axis=-1)
    return int(pred) if pred.ndim == 0 else pred
