"""Parameterized layers: linear, layer norm, mixer blocks, stMLP, PointNet."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as tc
from .tensor import ShapeError, Tensor


RELU_GAIN = float(np.sqrt(2.0))


class Module:
    """Container tracking parameters and sub-modules in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})

    def __setattr__(self, name, value):
        params, modules = self.__dict__.get("_params"), self.__dict__.get("_modules")
        if params is not None:
            params.pop(name, None)
            modules.pop(name, None)
            if isinstance(value, Tensor) and value.requires_grad:
                params[name] = value
            elif isinstance(value, Module):
                modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        """Non-trainable state saved with the parameters."""
        self._buffers[name] = None
        object.__setattr__(self, name, np.asarray(value, np.float32))

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def __delattr__(self, name):
        self._params.pop(name, None)
        self._modules.pop(name, None)
        object.__delattr__(self, name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        """Cast all parameters in place (e.g. to float64 for gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update((name, b.copy()) for name, b in self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        unexpected = set(state) - set(own) - set(bufs)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name in list(own) + list(bufs):
            arr = np.asarray(state[name])
            shape = own[name].shape if name in own else bufs[name].shape
            if arr.shape != shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != expected shape {shape}")
            if name in own:
                own[name].data = arr.astype(own[name].dtype, copy=True)
            else:
                owner, _, attr = name.rpartition(".")
                mod = self
                for part in filter(None, owner.split(".")):
                    mod = mod._modules[part]
                object.__setattr__(mod, attr, arr.astype(np.float32, copy=True))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True, dtype=np.float32)


class Linear(Module):
    """Fully connected layer; weight is ``[out, in]``.

    Kaiming-style uniform init: weights from U(-b, b) with
    ``b = gain * sqrt(3 / in)`` (``gain = sqrt(2)`` ahead of a ReLU), bias
    from U(-1/sqrt(in), 1/sqrt(in)).  A nonzero bias keeps the output of an
    all-zero (masked) input away from the constant vector, where a following
    LayerNorm has a 1/sqrt(eps) gradient.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, gain: float = 1.0):
        super().__init__()
        bound = gain * np.sqrt(3.0 / d_in)
        self.weight = _param(rng.uniform(-bound, bound, size=(d_out, d_in)))
        self.bias = _param(rng.uniform(-1.0, 1.0, size=d_out) / np.sqrt(d_in))

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return tc.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = _param(np.ones(d))
        self.beta = _param(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return tc.layer_norm(x, self.gamma, self.beta, self.eps)


class Mlp(Module):
    """Two linear layers with a GELU in between."""

    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(tc.gelu(self.fc1(x)))


class MixerBlock(Module):
    """Pre-norm mixer block: mix along time, then along features.

    Input and output are ``[B, T, D]``.
    """

    def __init__(self, n_steps: int, dim: int, time_hidden: int, feature_hidden: int, rng: np.random.Generator):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.time_mix = Mlp(n_steps, time_hidden, rng)
        self.norm2 = LayerNorm(dim)
        self.feature_mix = Mlp(dim, feature_hidden, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = self.time_mix(self.norm1(x).transpose(-1, -2)).transpose(-1, -2)
        x = x + y
        return x + self.feature_mix(self.norm2(x))


class StMlp(Module):
    """Spatio-temporal MLP: input projection, mixer blocks, output projection.

    The temporal-mixing weights depend on ``n_steps``, so the sequence length
    is fixed at construction.
    """

    def __init__(
        self,
        n_steps: int,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        hidden: int = 256,
        depth: int = 4,
        time_hidden: int = 256,
        feature_hidden: int = 64,
    ):
        super().__init__()
        self.n_steps = n_steps
        self.d_in = d_in
        self.in_proj = Linear(d_in, hidden, rng)
        self.blocks = Sequential(
            *[MixerBlock(n_steps, hidden, time_hidden, feature_hidden, rng) for _ in range(depth)]
        )
        self.out_proj = Linear(hidden, d_out, rng)

    def forward(self, x) -> Tensor:
        x = tc.as_tensor(x)
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
            return self.forward(x).reshape(x.shape[1], -1)
        if x.shape[1] != self.n_steps or x.shape[2] != self.d_in:
            raise ShapeError(f"stMLP built for [B, {self.n_steps}, {self.d_in}] input, got {x.shape}")
        return self.out_proj(self.blocks(self.in_proj(x)))


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self._order = []
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)
            self._order.append(layer)

    def __len__(self) -> int:
        return len(self._order)

    def __getitem__(self, i: int) -> Module:
        return self._order[i]

    def forward(self, x):
        for layer in self._order:
            x = layer(x)
        return x


class SharedMlp(Module):
    """Per-point linear layers, each followed by ReLU."""

    def __init__(self, widths: tuple[int, ...], rng: np.random.Generator):
        super().__init__()
        self.layers = Sequential(*[Linear(a, b, rng, RELU_GAIN) for a, b in zip(widths[:-1], widths[1:])])

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers._order:
            x = tc.relu(layer(x))
        return x


class TNet(Module):
    """Predicts a ``k x k`` feature transform from a point set.

    The last layer starts at zero weight and identity bias, so the initial
    prediction is the identity matrix.
    """

    def __init__(self, k: int, mlp: tuple[int, ...], fc: tuple[int, ...], rng: np.random.Generator):
        super().__init__()
        self.k = k
        self.mlp = SharedMlp((k,) + tuple(mlp), rng)
        self.fc = SharedMlp((mlp[-1],) + tuple(fc), rng)
        self.out = Linear(fc[-1] if fc else mlp[-1], k * k, rng)
        self.out.weight.data[...] = 0.0
        self.out.bias.data[...] = np.eye(k, dtype=np.float32).ravel()

    def forward(self, x: Tensor) -> Tensor:
        """``x[N_sets, n_points, k]`` -> ``[N_sets, k, k]``."""
        pooled, _ = tc.max_reduce(self.mlp(x), axis=1, with_index=False)
        m = self.out(self.fc(pooled))
        return m.reshape(x.shape[0], self.k, self.k)


class Standardizer(Module):
    """Fixed per-feature affine input scaling ``(x - mean) / scale``.

    The statistics are buffers set by :meth:`fit`, not trained.  With
    ``feature_axis`` other than -1 the features sit on that axis (radar
    points ``[..., P, N]``); all-zero padding points are left at zero and
    excluded from the statistics.
    """

    def __init__(self, dim: int, feature_axis: int = -1):
        super().__init__()
        self.feature_axis = feature_axis
        self.register_buffer("mean", np.zeros(dim))
        self.register_buffer("scale", np.ones(dim))

    def _move(self, x):
        return np.moveaxis(x, self.feature_axis, -1)

    def fit(self, x: np.ndarray, min_scale: float = 1e-3) -> "Standardizer":
        f = self._move(np.asarray(x, np.float64)).reshape(-1, self.mean.shape[0])
        if self.feature_axis != -1:
            f = f[np.any(f != 0, axis=1)]
        if len(f):
            self.mean = f.mean(axis=0).astype(np.float32)
            self.scale = np.maximum(f.std(axis=0), min_scale).astype(np.float32)
        return self

    def forward(self, x: np.ndarray) -> np.ndarray:
        f = self._move(np.asarray(x))
        out = ((f - self.mean) / self.scale).astype(f.dtype)
        if self.feature_axis != -1:
            out = np.where(np.any(f != 0, axis=-1, keepdims=True), out, 0).astype(f.dtype)
        return np.moveaxis(out, -1, self.feature_axis)


def compact_points(x: np.ndarray) -> np.ndarray:
    """Drop redundant all-zero padding points from ``x[B, T, P, N]``.

    Real points are moved to the front (stable order) and the point axis is
    cut to ``max real count + 1`` so that every frame that had padding keeps
    at least one zero point.  A max-pooled point encoder sees exactly the
    same set of distinct rows, so its output is unchanged.
    """
    real = np.any(x != 0, axis=2)  # [B, T, N]
    n = x.shape[-1]
    keep = min(n, int(real.sum(axis=-1).max(initial=0)) + 1)
    if keep >= n:
        return x
    order = np.argsort(~real, axis=-1, kind="stable")[..., :keep]
    return np.take_along_axis(x, order[:, :, None, :], axis=-1)


class PointNetEncoder(Module):
    """Per-time-step PointNet over radar targets.

    ``x[B, T, P, N]`` (P target parameters, N points) -> ``[B, T, out_dim]``.
    Points are encoded by shared MLPs, optionally re-mapped by a learned
    feature transform, max-pooled, and passed through a head layer.  There
    is no input transform and no batch normalization.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        point_dim: int = 5,
        mlp1: tuple[int, ...] = (64, 64),
        mlp2: tuple[int, ...] = (64, 128, 1024),
        out_dim: int = 512,
        feature_transform: bool = True,
        tnet_mlp: tuple[int, ...] = (64, 128, 1024),
        tnet_fc: tuple[int, ...] = (512, 256),
        compact: bool = True,
    ):
        super().__init__()
        self.point_dim = point_dim
        self.compact = compact
        self.mlp1 = SharedMlp((point_dim,) + tuple(mlp1), rng)
        self.tnet = TNet(mlp1[-1], tnet_mlp, tnet_fc, rng) if feature_transform else None
        self.mlp2 = SharedMlp((mlp1[-1],) + tuple(mlp2), rng)
        self.head = Linear(mlp2[-1], out_dim, rng, RELU_GAIN)

    def feature_transform(self, f: Tensor) -> Tensor:
        """Right-multiply every point feature by the predicted matrix."""
        if self.tnet is None:
            return f
        return tc.matmul(f, self.tnet(f))

    def point_features(self, x) -> Tensor:
        """Per-point features before pooling, ``[B*T, N, D]``."""
        x = x.data if isinstance(x, Tensor) else np.asarray(x)
        b, t, p, n = x.shape
        pts = Tensor(np.ascontiguousarray(np.swapaxes(x, -1, -2)).reshape(b * t, n, p))
        h = self.mlp1(pts)
        h = self.feature_transform(h)
        return self.mlp2(h)

    def forward(self, x) -> Tensor:
        x = x.data if isinstance(x, Tensor) else np.asarray(x)
        if x.ndim == 3:
            return self.forward(x[None]).reshape(x.shape[0], -1)
        if x.ndim != 4 or x.shape[2] != self.point_dim:
            raise ShapeError(f"expected radar input [B, T, {self.point_dim}, N], got {x.shape}")
        b, t = x.shape[:2]
        if self.compact:
            x = compact_points(x)
        pooled, _ = tc.max_reduce(self.point_features(x), axis=1, with_index=False)
        return tc.relu(self.head(pooled)).reshape(b, t, -1)


class ClassifierHead(Module):
    """Layer norm followed by one linear layer, applied per time step."""

    def __init__(self, d_in: int, n_classes: int, rng: np.random.Generator):
        super().__init__()
        self.norm = LayerNorm(d_in)
        self.fc = Linear(d_in, n_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc(self.norm(x))
