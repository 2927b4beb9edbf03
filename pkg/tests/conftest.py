import numpy as np
import pytest

from gesture_fusion.model import ModelConfig


def tiny_config(**overrides) -> ModelConfig:
    cfg = dict(
        n_steps=4,
        hidden=16,
        n_points=12,
        pn_mlp1=(8, 8),
        pn_mlp2=(8, 16),
        pn_out=16,
        tnet_mlp=(8, 16),
        tnet_fc=(8,),
        mixer_depth=2,
        mixer_hidden=16,
        time_hidden=8,
        feature_hidden=8,
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)


def random_radar(rng, batch, steps, n_points, n_real=None, dtype=np.float32):
    """Radar input with the first ``n_real`` points filled and the rest zero-padded."""
    x = np.zeros((batch, steps, 5, n_points), dtype=dtype)
    n_real = n_points if n_real is None else n_real
    x[..., :n_real] = rng.random((batch, steps, 5, n_real))
    return x


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
