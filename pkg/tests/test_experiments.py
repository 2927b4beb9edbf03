import csv
import dataclasses
from pathlib import Path

import numpy as np
import pytest

from conftest import random_radar, tiny_config
from gesture_fusion.dataset import GestureDataset
from gesture_fusion.experiments import (MU_GRID, SM_GRID, ExperimentConfig, ablate, build_config, load_config,
                                        parse_config_text, run_fold, table1)
from gesture_fusion.synth import GeneratorConfig
from gesture_fusion.training import TrainConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_parse_values_and_comments():
    s = parse_config_text("# c\nmodel.hidden = 64  # width\nmodel.pn_mlp1 = 16, 16\ntrain.target_train_acc = none\n"
                          "model.feature_transform = false\ntrain.lr = 1e-3\n")
    assert s["model"] == {"hidden": 64, "pn_mlp1": (16, 16), "feature_transform": False}
    assert s["train"] == {"target_train_acc": None, "lr": 1e-3}


@pytest.mark.parametrize("text", ["hidden = 3", "model.hidden 3", "optim.lr = 1"])
def test_parse_rejects_malformed_lines(text):
    with pytest.raises(ValueError, match="line 1"):
        parse_config_text(text)


def test_unknown_key_is_rejected():
    with pytest.raises(ValueError, match="unknown"):
        build_config({"model": {"widht": 3}})


def test_single_value_for_tuple_field():
    assert build_config({"experiment": {"folds": 2}, "model": {"pn_mlp1": 8}}).folds == (2,)
    assert build_config({"model": {"pn_mlp1": 8}}).model.pn_mlp1 == (8,)


def test_defaults_match_reference_hyperparameters():
    exp = load_config()
    t = exp.train
    assert (t.epochs, t.batch_size, t.lr, t.momentum, t.weight_decay, t.mu, t.sm_ratio) == \
        (70, 32, 0.003, 0.95, 0.001, 0.5, 0.3)
    assert exp.model.hidden == 256 and exp.folds == (0, 1, 2, 3, 4)


def test_desk_profile_keeps_optimizer():
    exp = load_config(CONFIGS / "desk.cfg")
    assert exp.model.hidden == 64 and not exp.model.feature_transform and exp.train.epochs == 15
    assert dataclasses.replace(exp.train, epochs=70, micro_batch=8) == TrainConfig()


def test_shipped_configs_parse():
    for p in sorted(CONFIGS.glob("*.cfg")):
        assert isinstance(load_config(p), ExperimentConfig)


def _tiny_experiment(n_subjects=10):
    rng = np.random.default_rng(0)
    n = n_subjects * 8
    y = np.arange(n) % 8
    x_K = rng.random((n, 4, 34)).astype(np.float32) * 0.1
    x_K[np.arange(n), :, y] += 1.0
    data = GestureDataset(random_radar(rng, n, 4, 12, n_real=5), x_K, y, np.arange(n) // 8)
    exp = ExperimentConfig(data=GeneratorConfig(n_subjects=n_subjects), model=tiny_config(),
                           train=TrainConfig(epochs=2, batch_size=8), folds=(0,))
    return data, exp


def test_run_fold_writes_and_reuses(tmp_path):
    data, exp = _tiny_experiment()
    r = run_fold(data, exp, 0, out_root=tmp_path, data_hash="abc")
    files = sorted(p.name for p in r.run_dir.iterdir())
    assert {"config.json", "metrics.csv", "report.csv"} <= set(files)
    assert set(r.accuracy) == {"both", "keypoints", "radar"}
    stamp = (r.run_dir / "metrics.csv").stat().st_mtime_ns
    again = run_fold(data, exp, 0, out_root=tmp_path, data_hash="abc")
    assert again.run_id == r.run_id and (r.run_dir / "metrics.csv").stat().st_mtime_ns == stamp
    assert again.accuracy == pytest.approx(r.accuracy, abs=5e-5)
    run_fold(data, exp, 0, out_root=tmp_path, data_hash="abc", force=True)
    assert (r.run_dir / "metrics.csv").stat().st_mtime_ns != stamp
    # a different data hash is a different run
    assert run_fold(data, exp, 0, out_root=tmp_path, data_hash="xyz").run_id != r.run_id


def test_single_modality_run_ignores_sm_ratio():
    data, exp = _tiny_experiment()
    r = run_fold(data, exp, 0, "radar", 0.5)
    assert r.sm_ratio == 0 and set(r.accuracy) == {"radar"}


def test_table_and_ablation_files(tmp_path):
    data, exp = _tiny_experiment()
    exp.train = dataclasses.replace(exp.train, epochs=1)
    table = table1(data, exp, tmp_path)
    with open(tmp_path / "table1.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(table) == len(rows) == 8
    cells = ablate(data, exp, "sm", tmp_path, grid=(0.0, 0.3))
    assert list(cells) == ["Fusion", "Only Keypoints", "Only Radar"]
    assert all(len(v) == 2 for v in cells.values())
    with open(tmp_path / "ablation_sm.csv") as fh:
        assert next(csv.reader(fh)) == ["row", "0%", "30%", "run_ids"]
    with pytest.raises(ValueError):
        ablate(data, exp, "lr", tmp_path)
    assert len(SM_GRID) == len(MU_GRID) == 7
