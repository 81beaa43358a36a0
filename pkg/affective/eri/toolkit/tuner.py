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

"""
Seeded random hyperparameter search with a successive-halving scheduler.

Trials are sampled independently of each other and of the execution order,
advanced rung by rung (epochs 1, 3 and the maximum) and the worse half of the
live trials is pruned after every rung but the last.
"""

import asyncio
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .encoders import Checkpoint, Hyperparams
from .exceptions import BadSettingsWarning, ConfigError, NoCompletedTrials
from .featstore import DATA_DEFAULT_RETRIES, DatasetManifest
from .objectives import LossKind
from .trainer import TrainingRun, derive_run_id

RUNG_EPOCHS = (1, 3)
SEARCH_DEFAULT_PARALLELISM = 1

PathLike = Union[str, Path]

logger = logging.getLogger(__name__)


class TrialStatus(str, Enum):
    COMPLETED = "completed"
    PRUNED = "pruned"


@dataclass(frozen=True)
class SearchSpace:
    lr: Tuple[float, float] = (1e-5, 2e-4)
    batch_size: Tuple[int, int] = (8, 32)
    hidden_dim: Tuple[int, int] = (512, 1024)
    loss_kind: LossKind = LossKind.MSE
    trials: int = 100
    max_epochs_per_trial: int = 10
    dropout: Optional[Tuple[float, float]] = None
    num_layers: Optional[Tuple[int, int]] = None
    base: Hyperparams = field(default_factory=Hyperparams)

    def __post_init__(self):
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        for name in ("lr", "batch_size", "hidden_dim", "dropout", "num_layers"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))

    def validate(self) -> None:
        for name in ("lr", "batch_size", "hidden_dim", "dropout", "num_layers"):
            bounds = getattr(self, name)
            if bounds is None:
                continue
            if len(bounds) != 2 or bounds[0] > bounds[1]:
                raise ConfigError(f"Bounds of {name!r} must be ordered: {bounds!r}.", field=name)
        if self.lr[0] <= 0:
            raise ConfigError("Learning rates must be positive.", field="lr")
        if self.trials < 1:
            raise ConfigError("At least one trial is required.", field="trials")
        if self.max_epochs_per_trial < 1:
            raise ConfigError(
                "At least one epoch per trial is required.", field="max_epochs_per_trial"
            )
        heads = self.base.num_heads
        lo, hi = self.hidden_dim
        if math.ceil(lo / heads) * heads > hi:
            raise ConfigError(
                f"No hidden_dim in [{lo}, {hi}] is divisible by num_heads={heads}.",
                field="hidden_dim",
            )
        if self.loss_kind is LossKind.PCC and self.batch_size[0] < 2:
            raise ConfigError("PCC loss needs batch sizes of at least 2.", field="batch_size")

    @property
    def rungs(self) -> Tuple[int, ...]:
        last = self.max_epochs_per_trial
        return tuple(sorted({r for r in RUNG_EPOCHS if r < last} | {last}))


def _round_to_multiple(value: int, step: int, lo: int, hi: int) -> int:
    rounded = int(round(value / step)) * step
    if rounded > hi:
        rounded -= step
    if rounded < lo:
        rounded += step
    return rounded


def trial_seed(seed: int, trial_id: int) -> int:
    return int(np.random.SeedSequence([seed, trial_id]).generate_state(1)[0])


def sample_config(space: SearchSpace, trial_id: int, seed: int) -> Hyperparams:
    """Draw the hyperparameters of one trial; a pure function of its arguments."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, trial_id]))
    lr = float(rng.uniform(*space.lr))
    batch_size = int(rng.integers(space.batch_size[0], space.batch_size[1] + 1))
    heads = space.base.num_heads
    raw_hidden = int(rng.integers(space.hidden_dim[0], space.hidden_dim[1] + 1))
    changes: Dict[str, Any] = dict(
        learning_rate=lr,
        batch_size=batch_size,
        hidden_dim=_round_to_multiple(raw_hidden, heads, *space.hidden_dim),
        loss_kind=space.loss_kind,
        max_epochs=space.max_epochs_per_trial,
        seed=trial_seed(seed, trial_id),
    )
    if space.dropout is not None:
        changes["dropout"] = float(rng.uniform(*space.dropout))
    if space.num_layers is not None:
        changes["num_layers"] = int(rng.integers(space.num_layers[0], space.num_layers[1] + 1))
    return space.base.replace(**changes)


@dataclass
class TrialRecord:
    trial_id: int
    hyperparams: Hyperparams
    trace: List[float] = field(default_factory=list)
    status: TrialStatus = TrialStatus.PRUNED
    final_score: Optional[float] = None
    epochs: int = 0
    error: Optional[str] = None

    def as_dict(self) -> Dict[str, Any]:
        return {
            "epochs": self.epochs,
            "error": self.error,
            "final_score": self.final_score,
            "hyperparams": self.hyperparams.as_dict(),
            "status": self.status.value,
            "trace": list(self.trace),
            "trial_id": self.trial_id,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def best_trial(records: Sequence[TrialRecord]) -> TrialRecord:
    """Completed trial with the highest final score; ties go to the lowest trial id."""
    completed = [
        r for r in records if r.status is TrialStatus.COMPLETED and r.final_score is not None
    ]
    if not completed:
        raise NoCompletedTrials("No trial completed, cannot pick a best one.", field="trials")
    return min(completed, key=lambda r: (-r.final_score, r.trial_id))


@dataclass
class SearchResult:
    records: List[TrialRecord]
    seed: int
    checkpoints: Dict[int, Checkpoint] = field(default_factory=dict, repr=False)

    @property
    def best(self) -> TrialRecord:
        return best_trial(self.records)

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in sorted(self.records, key=lambda r: r.trial_id))

    def summary(self) -> Dict[str, Any]:
        res: Dict[str, Any] = {
            "completed": sum(r.status is TrialStatus.COMPLETED for r in self.records),
            "pruned": sum(r.status is TrialStatus.PRUNED for r in self.records),
            "seed": self.seed,
            "trials": len(self.records),
        }
        try:
            best = self.best
        except NoCompletedTrials:
            res.update(best_trial_id=None, best_score=None, best_hyperparams=None)
        else:
            res.update(
                best_trial_id=best.trial_id,
                best_score=best.final_score,
                best_hyperparams=best.hyperparams.as_dict(),
            )
        return res

    def write(self, records_path: PathLike, summary_path: PathLike) -> None:
        records_path, summary_path = Path(records_path), Path(summary_path)
        records_path.parent.mkdir(parents=True, exist_ok=True)
        records_path.write_text(self.to_jsonl())
        summary_path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


class _Trial:
    def __init__(self, trial_id: int, hp: Hyperparams, run_id: str):
        self.record = TrialRecord(trial_id=trial_id, hyperparams=hp)
        self.run_id = run_id
        self.run: Optional[TrainingRun] = None

    @property
    def trial_id(self) -> int:
        return self.record.trial_id

    @property
    def score(self) -> float:
        best = self.run.history.best if self.run else None
        return best.val_mean_pcc if best is not None else -math.inf

    def advance(
        self, manifest: DatasetManifest, epochs: int, filter_faces: bool, retries: int
    ) -> None:
        if self.run is None:
            hp = self.record.hyperparams
            self.run = TrainingRun(
                manifest,
                hp,
                hp.seed,
                filter_faces=filter_faces,
                retries=retries,
                run_id=self.run_id,
            )
        self.run.run_until(epochs)
        self.sync()

    def sync(self) -> None:
        if self.run is None:
            return
        self.record.trace = [rec.val_mean_pcc for rec in self.run.history.epochs]
        self.record.epochs = self.run.epoch
        best = self.run.history.best
        self.record.final_score = None if best is None else best.val_mean_pcc


async def run_search_async(
    manifest: DatasetManifest,
    space: SearchSpace,
    seed: int,
    parallelism: int = SEARCH_DEFAULT_PARALLELISM,
    filter_faces: bool = True,
    retries: int = DATA_DEFAULT_RETRIES,
) -> SearchResult:
    """
    Run the search. At most ``parallelism`` trials train at the same time;
    the result does not depend on it.
    """
    if parallelism < 1:
        txt = "Raising value of 'parallelism' to its minimum of 1."
        warnings.warn(txt, BadSettingsWarning, stacklevel=2)
        logger.warning(txt)
        parallelism = 1
    space.validate()
    trials = [
        _Trial(i, sample_config(space, i, seed), derive_run_id({"seed": seed, "trial_id": i}))
        for i in range(space.trials)
    ]
    limiter = asyncio.Semaphore(parallelism)
    loop = asyncio.get_running_loop()
    live = list(trials)

    with ThreadPoolExecutor(max_workers=parallelism) as pool:

        async def advance(trial: _Trial, epochs: int) -> None:
            async with limiter:
                try:
                    await loop.run_in_executor(
                        pool, trial.advance, manifest, epochs, filter_faces, retries
                    )
                except Exception as exc:
                    trial.sync()
                    trial.record.error = f"{exc.__class__.__name__}: {exc!s}"
                    logger.error(
                        "[%s] Trial %d crashed: %s", trial.run_id[:10], trial.trial_id, exc
                    )

        for rung in space.rungs:
            await asyncio.gather(*(advance(t, rung) for t in live))
            crashed = [t for t in live if t.record.error is not None]
            live = [t for t in live if t.record.error is None]
            if rung == space.rungs[-1]:
                break
            live.sort(key=lambda t: (-t.score, t.trial_id))
            keep = math.ceil(len(live) / 2)
            pruned = live[keep:]
            live = sorted(live[:keep], key=lambda t: t.trial_id)
            logger.info(
                "Rung at epoch %d: %d trial(s) kept, %d pruned, %d crashed.",
                rung,
                len(live),
                len(pruned),
                len(crashed),
            )

    for trial in trials:
        trial.record.status = TrialStatus.COMPLETED if trial in live else TrialStatus.PRUNED
    result = SearchResult(
        records=[t.record for t in trials],
        seed=seed,
        checkpoints={t.trial_id: t.run.checkpoint() for t in live if t.run is not None},
    )
    logger.info(
        "Search finished: %d trial(s), %d completed.", len(trials), len(result.checkpoints)
    )
    return result


def run_search(
    manifest: DatasetManifest,
    space: SearchSpace,
    seed: int,
    parallelism: int = SEARCH_DEFAULT_PARALLELISM,
    filter_faces: bool = True,
    retries: int = DATA_DEFAULT_RETRIES,
) -> SearchResult:
    return asyncio.run(
        run_search_async(manifest, space, seed, parallelism, filter_faces, retries)
    )
