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
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .encoders import Checkpoint, load_checkpoint
from .exceptions import ConfigError, IncompatibleCheckpoint, InsufficientSamples, ShapeError
from .featstore import DATA_DEFAULT_RETRIES, DatasetManifest
from .objectives import mean_pcc
from .trainer import PredictionTable, predict, read_predictions_csv, split_labels

WEIGHT_SUM_TOLERANCE = 1e-12

PathLike = Union[str, Path]
Member = Union[str, Path, Checkpoint]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnsembleSpec:
    """
    Ordered ensemble members with their weights (uniform by default).

    A member is a :class:`Checkpoint`, a checkpoint file or a predictions
    CSV (``*.csv``) written by ``predict``.
    """

    members: Tuple[Member, ...]
    weights: Optional[Tuple[float, ...]] = None
    member_ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ConfigError("An ensemble needs at least one member.", field="checkpoints")
        if self.weights is None:
            weights = (1.0 / len(members),) * len(members)
        else:
            weights = tuple(float(w) for w in self.weights)
        if len(weights) != len(members):
            raise ConfigError(
                f"{len(members)} members but {len(weights)} weights.", field="weights"
            )
        if min(weights) <= 0:
            raise ConfigError("Ensemble weights must be positive.", field="weights")
        if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE * len(weights):
            raise ConfigError(f"Ensemble weights sum to {sum(weights)!r}, not 1.", field="weights")
        ids = self.member_ids
        if ids is None:
            ids = tuple(_member_id(m, i) for i, m in enumerate(members))
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "member_ids", tuple(ids))

    def __len__(self) -> int:
        return len(self.members)


def _member_id(member: Member, index: int) -> str:
    if isinstance(member, Checkpoint):
        return str(member.metadata.get("run_id", f"member_{index}"))[:10]
    return Path(member).stem


def pairwise_sum(terms: Sequence[np.ndarray]) -> np.ndarray:
    """Sum ``terms`` by recursive halving, in member order."""
    if len(terms) == 1:
        return np.asarray(terms[0], dtype=np.float64)
    mid = len(terms) // 2
    return pairwise_sum(terms[:mid]) + pairwise_sum(terms[mid:])


def average_predictions(
    tables: Sequence[PredictionTable], weights: Optional[Sequence[float]] = None
) -> PredictionTable:
    """Weighted mean of member predictions (pairwise sum in member order), clamped to [0, 1]."""
    if not tables:
        raise ConfigError("Nothing to average.", field="checkpoints")
    if weights is None:
        weights = [1.0 / len(tables)] * len(tables)
    ids = tables[0].sample_ids
    for table in tables:
        if table.sample_ids != ids:
            raise ShapeError("Ensemble members predicted different samples.", field="checkpoints")
    acc = pairwise_sum([weight * table.values for table, weight in zip(tables, weights)])
    return PredictionTable(ids, np.clip(acc, 0.0, 1.0))


def _member_table(
    member: Member, member_id: str, manifest: DatasetManifest, split: str, retries: int
) -> PredictionTable:
    if not isinstance(member, Checkpoint) and Path(member).suffix == ".csv":
        stored = read_predictions_csv(member, retries=retries)
        rows = dict(zip(stored.sample_ids, stored.values))
        ids = tuple(e.sample_id for e in manifest.split(split))
        if not ids:
            raise InsufficientSamples(f"Split {split!r} is empty.", field="split")
        missing = [sid for sid in ids if sid not in rows]
        if missing:
            raise IncompatibleCheckpoint(
                f"Predictions {str(member)!r} lack sample {missing[0]!r} of split {split!r}.",
                path=member,
            )
        return PredictionTable(ids, np.stack([rows[sid] for sid in ids]))
    checkpoint = member if isinstance(member, Checkpoint) else load_checkpoint(member, retries)
    try:
        return predict(checkpoint, manifest, split, retries=retries)
    except IncompatibleCheckpoint as exc:
        raise IncompatibleCheckpoint(
            f"Ensemble member {member_id!r}: {exc!s}", path=exc.path, field=exc.field
        ) from exc


def member_predictions(
    spec: EnsembleSpec,
    manifest: DatasetManifest,
    split: str,
    retries: int = DATA_DEFAULT_RETRIES,
) -> List[PredictionTable]:
    return [
        _member_table(member, member_id, manifest, split, retries)
        for member, member_id in zip(spec.members, spec.member_ids)
    ]


def ensemble_predict(
    spec: EnsembleSpec,
    manifest: DatasetManifest,
    split: str,
    retries: int = DATA_DEFAULT_RETRIES,
) -> PredictionTable:
    tables = member_predictions(spec, manifest, split, retries)
    return average_predictions(tables, spec.weights)


@dataclass(frozen=True)
class IncrementalRow:
    k: int
    member_id: str
    mean_pcc: float


def incremental_scores(
    predictions: Sequence[np.ndarray],
    target: np.ndarray,
    weights: Optional[Sequence[float]] = None,
) -> List[float]:
    """mean PCC of the ensembles of the first k members, k = 1..n."""
    weights = np.ones(len(predictions)) if weights is None else np.asarray(weights, dtype=float)
    scores = []
    for k in range(1, len(predictions) + 1):
        prefix = weights[:k] / weights[:k].sum()
        acc = pairwise_sum(
            [w * np.asarray(p, dtype=np.float64) for p, w in zip(predictions[:k], prefix)]
        )
        scores.append(mean_pcc(np.clip(acc, 0.0, 1.0), target).mean_pcc)
    return scores


def incremental_report(
    spec: EnsembleSpec,
    manifest: DatasetManifest,
    split: str,
    retries: int = DATA_DEFAULT_RETRIES,
) -> List[IncrementalRow]:
    """One row per prefix of the member list: the mean PCC of members 1..k."""
    tables = member_predictions(spec, manifest, split, retries)
    target = split_labels(manifest, split, tables[0].sample_ids)
    scores = incremental_scores([t.values for t in tables], target, spec.weights)
    rows = [
        IncrementalRow(k + 1, member_id, score)
        for k, (member_id, score) in enumerate(zip(spec.member_ids, scores))
    ]
    for row in rows:
        logger.info(
            "Ensemble of %d member(s) (+%s): mean_pcc=%.4f", row.k, row.member_id, row.mean_pcc
        )
    return rows


def write_incremental_csv(rows: Sequence[IncrementalRow], path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["k", "member_id", "mean_pcc"])
        for row in rows:
            writer.writerow([row.k, row.member_id, f"{row.mean_pcc:.6f}"])
