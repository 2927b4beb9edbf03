import csv
import filecmp
from pathlib import Path

import pytest

from gesture_fusion import cli

DESK = str(Path(__file__).resolve().parents[1] / "configs" / "desk.cfg")


def test_parser_has_every_command():
    sub = next(a for a in cli.build_parser()._actions if a.dest == "command")
    assert set(sub.choices) == {"generate", "train", "eval", "ablate-sm", "ablate-mu", "radar-sim", "gradcheck"}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "dataset"
    assert cli.main(["generate", "--quick", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_generate_is_reproducible(dataset, tmp_path, capsys):
    again = tmp_path / "again"
    assert cli.main(["generate", "--quick", "--seed", "3", "--out", str(again)]) == 0
    assert "5 subjects" in capsys.readouterr().out
    names = sorted(p.relative_to(dataset) for p in dataset.rglob("*") if p.is_file())
    assert len(names) > 1 and names == sorted(p.relative_to(again) for p in again.rglob("*") if p.is_file())
    assert all(filecmp.cmp(dataset / n, again / n, shallow=False) for n in names)


def test_generate_refuses_non_empty_dir(dataset, capsys):
    assert cli.main(["generate", "--quick", "--out", str(dataset)]) == 2
    err = capsys.readouterr().err.strip()
    assert "--force" in err and len(err.splitlines()) == 1


def test_missing_dataset_is_a_clean_error(tmp_path, capsys):
    assert cli.main(["train", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "generate" in err[0]


def test_bad_fold_and_config(dataset, tmp_path, capsys):
    assert cli.main(["train", "--data", str(dataset), "--out", str(tmp_path), "--fold", "7"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("model.nope = 1\n")
    assert cli.main(["train", "--config", str(bad), "--data", str(dataset), "--out", str(tmp_path)]) == 2
    assert len(capsys.readouterr().err.strip().splitlines()) == 2


def test_train_writes_summary(dataset, tmp_path, capsys):
    args = ["train", "--config", DESK, "--data", str(dataset), "--out", str(tmp_path), "--folds", "1", "--epochs", "2"]
    assert cli.main(args) == 0
    with open(tmp_path / "train_summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and set(rows[0]) == {"run_id", "fold", "both", "keypoints", "radar", "best_epoch"}
    assert (tmp_path / "runs" / rows[0]["run_id"] / "report.csv").exists()
    assert cli.main(args + ["--modalities", "radar"]) == 0
    assert "radar=" in capsys.readouterr().out


def test_radar_sim_writes_audit(tmp_path, capsys):
    assert cli.main(["radar-sim", "--subjects", "1", "--frames", "1", "--out", str(tmp_path)]) == 0
    assert "matched" in capsys.readouterr().out
    with open(tmp_path / "radar_audit.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and {"matched", "d_range_m"} <= set(rows[0])
