#
# Copyright 2026 ERI Toolkit Developers
#
# The source code of this program is made available
# under the terms of the GNU Affero General Public License version 3
# (GNU AGPL V3) as published by the Free Software Foundation.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public
# License along with this program; if not, see
# <http://www.gnu.org/licenses/>.

import csv
import json

import pytest

from affective.eri.toolkit.cli import cmd_labelcorr, cmd_synth, main, run_command
from affective.eri.toolkit.config import RunConfig

SMALL_RUN = {
    "synth.n_train": 12,
    "synth.n_val": 6,
    "synth.n_test": 2,
    "synth.dims": {"visual": 4, "audio": 3},
    "synth.frames_min": 4,
    "synth.frames_max": 8,
    "hp.hidden_dim": 8,
    "hp.num_heads": 2,
    "hp.num_layers": 1,
    "hp.batch_size": 4,
    "hp.max_epochs": 2,
}


def _summary(out_dir):
    return json.loads((out_dir / "run_summary.json").read_text())


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(SMALL_RUN))
    out = root / "out"
    assert main(["synth", "--config", str(config), "--out", str(out)]) == 0
    assert main(["train", "--config", str(config), "--out", str(out)]) == 0
    return config, out


def test_synth_train_eval(workspace):
    config, out = workspace
    assert (out / "data" / "manifest.jsonl").is_file()
    assert (out / "checkpoint.eric").is_file()
    history = (out / "history.jsonl").read_text().splitlines()
    assert 1 <= len(history) <= 2
    assert "wall_time" in json.loads(history[0])
    summary = _summary(out)
    assert summary["status"] == "ok"
    assert summary["command"] == "train"
    assert summary["exit_code"] == 0

    assert main(["eval", "--config", str(config), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert -1.0 <= metrics["mean_pcc"] <= 1.0
    assert len(metrics["per_emotion_pcc"]) == 7
    assert metrics["n_samples"] == 6
    rows = list(csv.reader((out / "predictions_val.csv").read_text().splitlines()))
    assert rows[0][0] == "sample_id"
    assert len(rows) == 7
    assert _summary(out)["metrics"] == metrics


def test_train_is_idempotent(workspace):
    config, out = workspace
    checkpoint = (out / "checkpoint.eric").read_bytes()
    assert main(["train", "--config", str(config), "--out", str(out)]) == 0
    summary = (out / "run_summary.json").read_bytes()
    assert main(["train", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "checkpoint.eric").read_bytes() == checkpoint
    assert (out / "run_summary.json").read_bytes() == summary


def test_missing_manifest(tmp_path):
    missing = tmp_path / "nope" / "manifest.jsonl"
    code = run_command(
        "train", None, {"paths.out_dir": str(tmp_path), "paths.manifest": str(missing)}
    )
    assert code == 3
    summary = _summary(tmp_path)
    assert summary["status"] == "error"
    assert summary["exit_code"] == 3
    assert str(missing) in json.dumps(summary["error"])


def test_missing_checkpoint(workspace, tmp_path):
    config, out = workspace
    code = run_command(
        "eval",
        str(config),
        {
            "paths.out_dir": str(tmp_path),
            "paths.manifest": str(out / "data" / "manifest.jsonl"),
            "paths.checkpoint": str(tmp_path / "none.eric"),
        },
    )
    assert code == 3
    assert _summary(tmp_path)["error"]["type"] == "ManifestError"


@pytest.mark.parametrize(
    "values",
    [
        pytest.param({"hp.hidden_dim": 30, "hp.num_heads": 4}, id="divisibility"),
        pytest.param({"hp.dropout": "high"}, id="type"),
        pytest.param({"hp.momentum": 0.9}, id="unknown_key"),
    ],
)
def test_bad_config(write_config, tmp_path, values):
    out = tmp_path / "out"
    assert main(["train", "--config", str(write_config(values)), "--out", str(out)]) == 2
    assert not (out / "run_summary.json").exists()


def test_bad_flag(tmp_path):
    assert main(["train", "--loss", "huber", "--out", str(tmp_path)]) == 2


def test_labelcorr(workspace, tmp_path):
    config, out = workspace
    manifest = str(out / "data" / "manifest.jsonl")
    args = ["labelcorr", "--config", str(config), "--manifest", manifest, "--out", str(tmp_path)]
    assert main(args) == 0
    rows = list(csv.reader((tmp_path / "label_corr.csv").read_text().splitlines()))
    assert len(rows) == 8
    matrix = rows[1:]
    assert all(len(row) == 7 for row in matrix)
    for i in range(7):
        assert matrix[i][i] == "1.000000"
        for j in range(7):
            assert matrix[i][j] == matrix[j][i]


def test_tune_and_ensemble(workspace, tmp_path):
    config, out = workspace
    overrides = {
        "paths.manifest": str(out / "data" / "manifest.jsonl"),
        "paths.out_dir": str(tmp_path / "tune"),
        "search.trials": 2,
        "search.max_epochs_per_trial": 1,
        "search.hidden_dim": [8, 8],
        "search.batch_size": [2, 4],
        "search.lr": [1e-3, 2e-3],
    }
    assert run_command("tune", str(config), overrides) == 0
    tune_dir = tmp_path / "tune"
    assert len((tune_dir / "trials.jsonl").read_text().splitlines()) == 2
    search = json.loads((tune_dir / "search_summary.json").read_text())
    assert _summary(tune_dir)["best_trial_id"] == search["best_trial_id"]

    members = [str(tune_dir / "best_checkpoint.eric"), str(out / "checkpoint.eric")]
    ensemble_overrides = {
        "paths.manifest": overrides["paths.manifest"],
        "paths.out_dir": str(tmp_path / "ensemble"),
        "paths.checkpoints": members,
    }
    assert run_command("ensemble", str(config), ensemble_overrides) == 0
    ens_dir = tmp_path / "ensemble"
    report = (ens_dir / "ensemble_report.csv").read_text().splitlines()
    assert report[0] == "k,member_id,mean_pcc"
    assert [line.split(",")[0] for line in report[1:]] == ["1", "2"]
    predictions = (ens_dir / "ensemble_predictions_val.csv").read_text().splitlines()
    assert len(predictions) == 7


def test_ensemble_without_members(workspace, tmp_path):
    config, out = workspace
    overrides = {
        "paths.manifest": str(out / "data" / "manifest.jsonl"),
        "paths.out_dir": str(tmp_path),
    }
    assert run_command("ensemble", str(config), overrides) == 2
    assert _summary(tmp_path)["error"]["field"] == "checkpoints"


def test_combos(write_config, tmp_path):
    values = dict(SMALL_RUN)
    values.update(
        {
            "synth.dims": {"face": 3, "pose": 2, "audio": 3},
            "synth.visual_modalities": ["face", "pose"],
            "hp.max_epochs": 1,
        }
    )
    config = str(write_config(values))
    assert main(["synth", "--config", config, "--out", str(tmp_path)]) == 0
    assert main(["combos", "--config", config, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "feature_sets.csv").read_text().splitlines()
    assert [line.split(",")[0] for line in lines] == ["streams", "face", "pose", "face+pose"]


def test_cmd_functions(tmp_path):
    overrides = dict(SMALL_RUN, **{"paths.out_dir": str(tmp_path)})
    assert cmd_synth(RunConfig.load("synth", overrides=overrides)) == 0
    assert _summary(tmp_path)["samples"] == 20
    assert cmd_labelcorr(RunConfig.load("labelcorr", overrides=overrides)) == 0
    assert (tmp_path / "label_corr.csv").is_file()
    assert _summary(tmp_path)["command"] == "labelcorr"
