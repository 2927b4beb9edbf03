"""scikit-learn style wrappers around the fusion classifier and the radar frontend.

Samples are passed as flat 2-D arrays so that the standard validation
helpers and meta-estimators work unchanged: :func:`pack_inputs` joins a
radar tensor ``[N, T, 5, P]`` and a keypoint tensor ``[N, T, 34]`` row-wise
and :func:`unpack_inputs` splits them again.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import radar as rd
from . import tensor as tc
from .dataset import GestureDataset
from .model import GestureModel, ModelConfig, predict
from .training import CONDITIONS, TrainConfig, condition_mask, train


def pack_inputs(x_R, x_K) -> np.ndarray:
    x_R, x_K = np.asarray(x_R, np.float32), np.asarray(x_K, np.float32)
    if len(x_R) != len(x_K):
        raise ValueError(f"radar and keypoint inputs hold {len(x_R)} and {len(x_K)} samples")
    return np.concatenate([x_R.reshape(len(x_R), -1), x_K.reshape(len(x_K), -1)], axis=1)


def unpack_inputs(X, n_steps: int = 30, point_dim: int = 5, n_points: int = 300,
                  keypoint_dim: int = 34) -> tuple[np.ndarray, np.ndarray]:
    r = n_steps * point_dim * n_points
    k = n_steps * keypoint_dim
    if X.shape[1] != r + k:
        raise ValueError(f"expected {r + k} features per sample, got {X.shape[1]}")
    return (X[:, :r].reshape(-1, n_steps, point_dim, n_points),
            X[:, r:].reshape(-1, n_steps, keypoint_dim))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class FusionGestureClassifier(ClassifierMixin, BaseEstimator):
    """Two-stream gesture classifier with the usual fit/predict interface.

    Parameters
    ----------
    modalities : {"both", "radar", "keypoints"}
        Streams to build.
    model_params : dict, optional
        Extra :class:`ModelConfig` fields (widths, depths).
    epochs, batch_size, lr, momentum, weight_decay, mu, sm_ratio
        Training hyperparameters, see :class:`TrainConfig`.
    micro_batch : int
        Gradient accumulation chunk.
    condition : {"both", "keypoints", "radar"}
        Modalities fed at prediction time; the others are masked.
    random_state : int
        Seeds both the weight init and the training order.
    """

    def __init__(self, modalities="both", model_params=None, epochs=70, batch_size=32, lr=0.003,
                 momentum=0.95, weight_decay=0.001, mu=0.5, sm_ratio=0.3, micro_batch=8,
                 condition="both", n_steps=30, n_points=300, random_state=0):
        self.modalities = modalities
        self.model_params = model_params
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.mu = mu
        self.sm_ratio = sm_ratio
        self.micro_batch = micro_batch
        self.condition = condition
        self.n_steps = n_steps
        self.n_points = n_points
        self.random_state = random_state

    def _unpack(self, X):
        return unpack_inputs(X, self.n_steps, 5, self.n_points)

    def fit(self, X, y, validation_data=None):
        """Train on flat samples ``X`` with labels ``y``.

        ``validation_data=(X_val, y_val)`` selects the best epoch; without it
        the training set is used for selection.
        """
        X, y = check_X_y(X, y, dtype=np.float32)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need samples of at least two classes")
        mcfg = ModelConfig(n_classes=len(self.classes_), n_steps=self.n_steps, n_points=self.n_points,
                           modalities=self.modalities, seed=int(self.random_state),
                           **(self.model_params or {}))
        tcfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
                           weight_decay=self.weight_decay, mu=self.mu, sm_ratio=self.sm_ratio,
                           micro_batch=self.micro_batch, seed=int(self.random_state))
        data = GestureDataset(*self._unpack(X), y_enc, np.zeros(len(y), np.int64))
        val = None
        if validation_data is not None:
            Xv, yv = check_X_y(*validation_data, dtype=np.float32)
            if not np.isin(yv, self.classes_).all():
                raise ValueError("validation labels not seen in training")
            val = GestureDataset(*self._unpack(Xv), np.searchsorted(self.classes_, yv), np.zeros(len(yv), np.int64))
        self.model_, self.history_ = train(mcfg, tcfg, data, val)
        self.n_features_in_ = X.shape[1]
        return self

    def _logits(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the model was fit with {self.n_features_in_}")
        if self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}")
        x_R, x_K = self._unpack(X)
        out = []
        with tc.no_grad():
            for s in range(0, len(X), 64):
                mask = condition_mask(self.condition, len(x_R[s:s + 64])) if self.modalities == "both" else None
                out.append(self.model_(x_R[s:s + 64], x_K[s:s + 64], mask=mask, with_aux=False).y_hat.data)
        return np.concatenate(out)

    def predict(self, X):
        logits = self._logits(X)
        return self.classes_[predict(logits)]

    def predict_proba(self, X):
        """Class probabilities of the time-averaged logits."""
        return _softmax(self._logits(X).astype(np.float64).mean(axis=1))

    @property
    def network(self) -> GestureModel:
        check_is_fitted(self, "model_")
        return self.model_


class RadarTargetExtractor(TransformerMixin, BaseEstimator):
    """Raw multi-sensor beat signals to normalized radar target lists.

    ``fit`` calibrates the OS-CFAR scale factor on noise-only frames run
    through the processing chain; ``transform`` maps ``X[n_frames, n_sensors,
    samples, chirps, channels]`` (complex) to ``[n_frames, 5, n_sensors *
    n_per_sensor]``.

    Parameters
    ----------
    pfa : float
        Target false-alarm probability per cell.
    noise_db : float
        Noise power per raw sample used for calibration.
    window, guard : tuple of int
        CFAR half-extents (range, Doppler).
    n_per_sensor : int
        Fixed target-list length per sensor.
    n_cells : int
        Noise cells drawn for calibration.
    sensors : sequence of RadarConfig, optional
        Defaults to :func:`radar.default_sensors`.
    """

    def __init__(self, pfa=1e-4, noise_db=-90.0, window=(8, 4), guard=(2, 1), n_per_sensor=100,
                 n_cells=200_000, sensors=None, random_state=0):
        self.pfa = pfa
        self.noise_db = noise_db
        self.window = window
        self.guard = guard
        self.n_per_sensor = n_per_sensor
        self.n_cells = n_cells
        self.sensors = sensors
        self.random_state = random_state

    def fit(self, X=None, y=None):
        if not 0 < self.pfa < 1:
            raise ValueError("pfa must lie in (0, 1)")
        self.sensors_ = tuple(self.sensors) if self.sensors is not None else rd.default_sensors()
        cfar = rd.CfarConfig(window=tuple(self.window), guard=tuple(self.guard))
        rng = np.random.default_rng(self.random_state)
        alpha = rd.calibrate_alpha(self.pfa, cfar, rng, noise=rd.processed_noise_map(self.sensors_[0], self.noise_db),
                                   n_cells=self.n_cells)
        self.cfar_ = rd.CfarConfig(window=tuple(self.window), guard=tuple(self.guard), alpha=alpha)
        return self

    def detect(self, frame) -> list[np.ndarray]:
        """Physical ``(range, velocity, azimuth, power_db)`` per sensor for one frame."""
        check_is_fitted(self, "cfar_")
        frame = np.asarray(frame)
        if len(frame) != len(self.sensors_):
            raise ValueError(f"frame holds {len(frame)} sensors, expected {len(self.sensors_)}")
        return [rd.extract_targets(rd.range_doppler_map(raw), cfg, self.cfar_) for raw, cfg in zip(frame, self.sensors_)]

    def transform(self, X):
        check_is_fitted(self, "cfar_")
        X = np.asarray(X)
        if X.ndim != 5 or not np.iscomplexobj(X):
            raise ValueError("X must be complex [n_frames, n_sensors, samples, chirps, channels]")
        rng = np.random.default_rng([self.random_state, 1])
        return np.stack([rd.assemble_target_list(self.detect(f), self.sensors_, rng, self.n_per_sensor)
                         for f in X]).astype(np.float32)
