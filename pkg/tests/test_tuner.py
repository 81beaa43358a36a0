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

import json

import numpy as np
import pytest

from affective.eri.toolkit.encoders import Hyperparams
from affective.eri.toolkit.exceptions import (
    BadSettingsWarning,
    ConfigError,
    NoCompletedTrials,
    NumericalError,
)
from affective.eri.toolkit.objectives import LossKind
from affective.eri.toolkit.trainer import TrainingRun, derive_run_id
from affective.eri.toolkit.tuner import (
    SearchSpace,
    TrialRecord,
    TrialStatus,
    best_trial,
    run_search,
    run_search_async,
    sample_config,
)

TINY_BASE = Hyperparams(hidden_dim=8, num_heads=2, num_layers=1, batch_size=4, dropout=0.0)


def tiny_space(**kwargs) -> SearchSpace:
    values = dict(
        lr=(1e-3, 5e-3),
        batch_size=(2, 4),
        hidden_dim=(8, 16),
        trials=4,
        max_epochs_per_trial=3,
        base=TINY_BASE,
    )
    values.update(kwargs)
    return SearchSpace(**values)


def _record(trial_id, score, status=TrialStatus.COMPLETED):
    return TrialRecord(trial_id, TINY_BASE, status=status, final_score=score)


def test_sample_config_bounds():
    space = SearchSpace()
    for trial_id in range(1000):
        hp = sample_config(space, trial_id, seed=0)
        assert 1e-5 <= hp.learning_rate <= 2e-4
        assert 8 <= hp.batch_size <= 32
        assert 512 <= hp.hidden_dim <= 1024
        assert hp.hidden_dim % hp.num_heads == 0
        assert hp.max_epochs == 10


def test_sample_config_learning_rate_is_uniform():
    space = SearchSpace()
    rates = [sample_config(space, i, seed=1).learning_rate for i in range(20000)]
    assert np.mean(rates) == pytest.approx(1.05e-4, rel=0.02)


def test_sample_config_is_deterministic():
    space = SearchSpace(dropout=(0.0, 0.5), num_layers=(1, 4))
    assert sample_config(space, 3, seed=9) == sample_config(space, 3, seed=9)
    assert sample_config(space, 3, seed=9) != sample_config(space, 4, seed=9)
    assert sample_config(space, 3, seed=9) != sample_config(space, 3, seed=10)


@pytest.mark.parametrize(
    "heads,bounds",
    [
        pytest.param(8, (512, 1024), id="eight_heads"),
        pytest.param(3, (10, 20), id="three_heads"),
        pytest.param(7, (14, 14), id="single_value"),
    ],
)
def test_sampled_hidden_dim_divisible_by_heads(heads, bounds):
    space = SearchSpace(hidden_dim=bounds, base=Hyperparams(hidden_dim=heads, num_heads=heads))
    for trial_id in range(200):
        hp = sample_config(space, trial_id, seed=2)
        assert hp.hidden_dim % heads == 0
        assert bounds[0] <= hp.hidden_dim <= bounds[1]


@pytest.mark.parametrize(
    "kwargs,field",
    [
        pytest.param(dict(lr=(2e-4, 1e-5)), "lr", id="reversed_lr"),
        pytest.param(dict(lr=(0.0, 1e-5)), "lr", id="zero_lr"),
        pytest.param(dict(trials=0), "trials", id="no_trials"),
        pytest.param(dict(max_epochs_per_trial=0), "max_epochs_per_trial", id="no_epochs"),
        pytest.param(dict(hidden_dim=(9, 9)), "hidden_dim", id="no_divisible_dim"),
        pytest.param(dict(loss_kind="pcc", batch_size=(1, 4)), "batch_size", id="pcc_batch"),
    ],
)
def test_search_space_validation(kwargs, field):
    with pytest.raises(ConfigError) as exc_info:
        tiny_space(**kwargs).validate()
    assert exc_info.value.field == field


def test_rungs():
    assert tiny_space(max_epochs_per_trial=1).rungs == (1,)
    assert tiny_space(max_epochs_per_trial=3).rungs == (1, 3)
    assert tiny_space(max_epochs_per_trial=10).rungs == (1, 3, 10)
    assert tiny_space(loss_kind="pcc").loss_kind is LossKind.PCC


def test_best_trial():
    records = [_record(0, 0.2), _record(1, 0.5), _record(2, 0.3)]
    assert best_trial(records).trial_id == 1
    assert best_trial([_record(4, 0.5), _record(2, 0.5)]).trial_id == 2
    assert best_trial([_record(0, 0.9, TrialStatus.PRUNED), _record(1, 0.1)]).trial_id == 1
    with pytest.raises(NoCompletedTrials):
        best_trial([_record(0, 0.9, TrialStatus.PRUNED)])


def test_successive_halving(micro_manifest):
    result = run_search(micro_manifest, tiny_space(max_epochs_per_trial=5), seed=0)
    assert [r.trial_id for r in result.records] == [0, 1, 2, 3]
    assert sum(r.epochs >= 3 for r in result.records) == 2
    assert sum(r.epochs == 1 for r in result.records) == 2
    completed = [r for r in result.records if r.status is TrialStatus.COMPLETED]
    assert len(completed) == 1
    assert set(result.checkpoints) == {completed[0].trial_id}
    assert all(len(r.trace) == r.epochs for r in result.records)
    assert result.best.final_score == max(completed[0].trace)
    summary = result.summary()
    assert summary["completed"] == 1
    assert summary["pruned"] == 3
    assert summary["best_trial_id"] == completed[0].trial_id


def test_parallelism_does_not_change_results(micro_manifest):
    space = tiny_space(trials=8)
    serial = run_search(micro_manifest, space, seed=3, parallelism=1)
    parallel = run_search(micro_manifest, space, seed=3, parallelism=4)
    assert serial.to_jsonl() == parallel.to_jsonl()
    for trial_id, checkpoint in serial.checkpoints.items():
        assert checkpoint.params.equals(parallel.checkpoints[trial_id].params)


@pytest.mark.asyncio
async def test_run_search_async(micro_manifest):
    result = await run_search_async(micro_manifest, tiny_space(trials=2), seed=1, parallelism=2)
    assert len(result.records) == 2
    assert result.best.status is TrialStatus.COMPLETED


def test_parallelism_below_one_is_raised(micro_manifest):
    space = tiny_space(trials=1, max_epochs_per_trial=1)
    with pytest.warns(BadSettingsWarning):
        result = run_search(micro_manifest, space, seed=0, parallelism=0)
    assert result.records[0].status is TrialStatus.COMPLETED


def test_crashed_trial_is_recorded(micro_manifest, mocker):
    original = TrainingRun.run_until
    victim = derive_run_id({"seed": 0, "trial_id": 1})

    def run_until(self, epochs):
        if self.run_id == victim:
            raise NumericalError("Non-finite loss at step 0.")
        return original(self, epochs)

    mocker.patch.object(TrainingRun, "run_until", autospec=True, side_effect=run_until)
    result = run_search(micro_manifest, tiny_space(trials=2, max_epochs_per_trial=1), seed=0)
    crashed = result.records[1]
    assert crashed.status is TrialStatus.PRUNED
    assert crashed.error.startswith("NumericalError")
    assert result.records[0].status is TrialStatus.COMPLETED
    assert result.best.trial_id == 0


def test_all_trials_crashing(micro_manifest, mocker):
    mocker.patch.object(TrainingRun, "run_until", side_effect=NumericalError("boom"))
    result = run_search(micro_manifest, tiny_space(trials=2), seed=0)
    assert all(r.error for r in result.records)
    with pytest.raises(NoCompletedTrials):
        best_trial(result.records)
    assert result.summary()["best_trial_id"] is None


def test_search_result_files(micro_manifest, tmp_path):
    result = run_search(micro_manifest, tiny_space(trials=2, max_epochs_per_trial=1), seed=5)
    result.write(tmp_path / "trials.jsonl", tmp_path / "search_summary.json")
    lines = (tmp_path / "trials.jsonl").read_text().splitlines()
    assert [json.loads(line)["trial_id"] for line in lines] == [0, 1]
    assert "wall_time" not in lines[0]
    summary = json.loads((tmp_path / "search_summary.json").read_text())
    assert summary["trials"] == 2
    assert summary["seed"] == 5
