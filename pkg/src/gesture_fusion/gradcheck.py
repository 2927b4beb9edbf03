"""Central-difference gradient checking for the tensor engine."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-5, index=None) -> np.ndarray:
    """d fn() / d x by central differences; ``index`` limits which entries are probed."""
    flat = x.data.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    probe = range(flat.size) if index is None else index
    for i in probe:
        orig = flat[i]
        flat[i] = orig + eps
        up = float(fn().data)
        flat[i] = orig - eps
        down = float(fn().data)
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return out.reshape(x.shape)


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-6,
    max_probes: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[int, float]:
    """Compare backward() against central differences for each input.

    ``fn`` must rebuild the graph from ``inputs`` on every call.  With
    ``max_probes`` only that many randomly chosen entries per input are
    differenced.  Returns the relative error per input position.
    """
    for x in inputs:
        x.grad = None
    backward(fn())
    rng = rng or np.random.default_rng(0)
    errors = {}
    for k, x in enumerate(inputs):
        analytic = np.zeros(x.shape) if x.grad is None else x.grad.astype(np.float64)
        if max_probes is not None and x.size > max_probes:
            idx = np.sort(rng.choice(x.size, size=max_probes, replace=False))
            numeric = numeric_grad(fn, x, eps, idx).reshape(-1)[idx]
            errors[k] = relative_error(analytic.reshape(-1)[idx], numeric, floor)
        else:
            errors[k] = relative_error(analytic, numeric_grad(fn, x, eps), floor)
    return errors



def _op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    from . import tensor as tc

    def t(*shape, shift=0.0):
        return Tensor(rng.standard_normal(shape) + shift, requires_grad=True)

    def w(*shape):  # fixed upstream weights
        return Tensor(rng.standard_normal(shape))

    a, b, bb = t(3, 4), t(3, 4), t(4)
    m1, m2 = t(2, 3, 4), t(4, 5)
    x, wt, bias = t(2, 3, 4), t(6, 4), t(6)
    ln_x, g, beta = t(3, 5), t(5, shift=1.0), t(5)
    # well separated values keep the max away from ties
    mx = Tensor(rng.permutation(24).reshape(2, 4, 3) * 0.3 + rng.uniform(-0.05, 0.05, (2, 4, 3)), requires_grad=True)
    act = Tensor(rng.uniform(0.1, 2.0, (3, 4)) * rng.choice([-1, 1], (3, 4)), requires_grad=True)
    c1, c2 = t(2, 3), t(2, 5)
    logits, labels = t(4, 3, 6), rng.integers(0, 6, (4, 3))
    ce_w = rng.uniform(0.2, 1.0, (4, 1))
    w34, w432, w64, w28, w235, w236, w35, w23, w24 = (
        w(3, 4), w(4, 3, 2), w(6, 4), w(2, 8), w(2, 3, 5), w(2, 3, 6), w(3, 5), w(2, 3), w(2, 4))
    return {
        "add": (lambda: (tc.add(a, bb) * w34).sum(), [a, bb]),
        "sub": (lambda: (tc.sub(a, b) * w34).sum(), [a, b]),
        "mul": (lambda: (tc.mul(a, b) * w34).sum(), [a, b]),
        "relu": (lambda: (tc.relu(act) * w34).sum(), [act]),
        "gelu": (lambda: (tc.gelu(a) * w34).sum(), [a]),
        "transpose": (lambda: (tc.transpose(m1, 0, 2) * w432).sum(), [m1]),
        "reshape": (lambda: (tc.reshape(m1, (6, 4)) * w64).sum(), [m1]),
        "concat": (lambda: (tc.concat([c1, c2], axis=-1) * w28).sum(), [c1, c2]),
        "matmul": (lambda: (tc.matmul(m1, m2) * w235).sum(), [m1, m2]),
        "linear": (lambda: (tc.linear(x, wt, bias) * w236).sum(), [x, wt, bias]),
        "layer_norm": (lambda: (tc.layer_norm(ln_x, g, beta) * w35).sum(), [ln_x, g, beta]),
        "max_reduce": (lambda: (tc.max_reduce(mx, axis=1, with_index=False)[0] * w23).sum(), [mx]),
        "mean_axis": (lambda: (tc.mean_axis(m1, 1) * w24).sum(), [m1]),
        "mean_all": (lambda: tc.mean_all(tc.mul(a, a)), [a]),
        "cross_entropy": (lambda: tc.cross_entropy(logits, labels), [logits]),
        "weighted_cross_entropy": (lambda: tc.cross_entropy(logits, labels, ce_w), [logits]),
    }


def tiny_model_config(seed: int = 0):
    """Small fusion model (T = 4 steps, 12 radar targets) for gradient checks."""
    from .model import ModelConfig

    return ModelConfig(n_steps=4, hidden=16, n_points=12, pn_mlp1=(8, 8), pn_mlp2=(8, 16), pn_out=16,
                       tnet_mlp=(8, 16), tnet_fc=(8,), mixer_depth=2, mixer_hidden=16, time_hidden=8,
                       feature_hidden=8, seed=seed)


def gradient_suite(seed: int = 0, model_check: bool = True) -> dict[str, float]:
    """Max relative central-difference error of every differentiable op and a tiny fusion model.

    Runs in wide precision.  The model check uses the full auxiliary loss,
    once with both modalities and once with a masked radar input.
    """
    from . import tensor as tc
    from .model import GestureModel
    from .training import total_loss

    rng = np.random.default_rng(seed)
    out = {}
    with tc.wide_precision():
        for name, (fn, inputs) in _op_cases(rng).items():
            out[name] = max(check_gradients(fn, inputs).values())
        if model_check:
            model = GestureModel(tiny_model_config(seed)).astype(np.float64)
            # move the feature transform off its identity start
            tout = model.pointnet.tnet.out.weight
            tout.data[...] = rng.standard_normal(tout.shape) * 0.05
            x_R = np.zeros((2, 4, 5, 12))
            x_R[..., :8] = rng.random((2, 4, 5, 8))
            x_K = rng.random((2, 4, 34))
            model.fit_input_stats(x_R, x_K)
            y = np.array([1, 6])
            mask = (np.array([True, False]), np.array([True, True]))
            out["fusion_model"] = max(check_gradients(
                lambda: total_loss(model(x_R, x_K), y, 0.5)[0], model.parameters()).values())
            out["fusion_model_masked"] = max(check_gradients(
                lambda: total_loss(model(x_R, x_K, mask=mask), y, 0.5)[0], model.parameters()).values())
    return out
