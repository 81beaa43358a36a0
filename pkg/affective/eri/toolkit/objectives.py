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
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple, Union

import numpy as np

from .diffcore import Tensor, sqrt, tsum
from .exceptions import InsufficientSamples, ShapeError
from .featstore import DEFAULT_EMOTION_NAMES, NUM_EMOTIONS

VARIANCE_GUARD = 1e-12

logger = logging.getLogger(__name__)


class LossKind(str, Enum):
    MSE = "mse"
    PCC = "pcc"


@dataclass(frozen=True)
class MetricReport:
    mse: float
    per_emotion_pcc: Tuple[float, ...]
    mean_pcc: float
    n_samples: int

    def as_dict(self) -> Dict[str, Any]:
        return {
            "mean_pcc": self.mean_pcc,
            "mse": self.mse,
            "n_samples": self.n_samples,
            "per_emotion_pcc": list(self.per_emotion_pcc),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricReport":
        return cls(
            mse=float(data["mse"]),
            per_emotion_pcc=tuple(float(v) for v in data["per_emotion_pcc"]),
            mean_pcc=float(data["mean_pcc"]),
            n_samples=int(data["n_samples"]),
        )


def _check_pair(pred: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"Prediction shape {pred.shape} does not match target {target.shape}.")
    return pred, target


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = _check_pair(pred, target)
    if pred.size == 0:
        raise InsufficientSamples("mse() needs at least one sample.")
    return float(np.mean((pred - target) ** 2))


def pcc(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Sample Pearson correlation. Returns 0 when either series has a variance
    below ``VARIANCE_GUARD``.
    """
    x, y = _check_pair(x, y)
    if x.ndim != 1:
        raise ShapeError(f"pcc() expects 1-d series, got shape {x.shape}.")
    if x.size < 2:
        raise InsufficientSamples(f"pcc() needs at least 2 samples, got {x.size}.")
    xc = x - x.mean()
    yc = y - y.mean()
    if np.mean(xc**2) < VARIANCE_GUARD or np.mean(yc**2) < VARIANCE_GUARD:
        return 0.0
    r = np.sum(xc * yc) / (np.sqrt(np.sum(xc**2)) * np.sqrt(np.sum(yc**2)))
    return float(np.clip(r, -1.0, 1.0))


def mean_pcc(pred: np.ndarray, target: np.ndarray) -> MetricReport:
    """Per-emotion PCC across samples, averaged over the seven emotions."""
    pred, target = _check_pair(pred, target)
    if pred.ndim != 2 or pred.shape[1] != NUM_EMOTIONS:
        raise ShapeError(f"Expected N x {NUM_EMOTIONS} arrays, got {pred.shape}.")
    if pred.shape[0] < 2:
        raise InsufficientSamples(f"PCC needs at least 2 samples, got {pred.shape[0]}.")
    per_emotion = tuple(pcc(pred[:, j], target[:, j]) for j in range(NUM_EMOTIONS))
    return MetricReport(
        mse=mse(pred, target),
        per_emotion_pcc=per_emotion,
        mean_pcc=float(np.mean(per_emotion)),
        n_samples=int(pred.shape[0]),
    )


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"Prediction shape {pred.shape} does not match target {target.shape}.")
    diff = pred - target
    return tsum(diff * diff) * (1.0 / diff.size)


def pcc_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """
    ``1 - mean_j pcc(pred[:, j], target[:, j])`` over one batch; columns with
    (near) zero variance count as correlation 0.
    """
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape or pred.ndim != 2:
        raise ShapeError(f"Prediction shape {pred.shape} does not match target {target.shape}.")
    if pred.shape[0] < 2:
        raise InsufficientSamples(f"PCC loss needs a batch of at least 2, got {pred.shape[0]}.")
    centered = pred - pred.mean(axis=0, keepdims=True)
    t_centered = target - target.mean(axis=0, keepdims=True)
    valid = (np.mean(centered.data**2, axis=0) >= VARIANCE_GUARD) & (
        np.mean(t_centered**2, axis=0) >= VARIANCE_GUARD
    )
    pad = np.where(valid, 0.0, 1.0).astype(pred.dtype)
    t_norm = np.sqrt(np.sum(t_centered**2, axis=0) + pad)
    cov = tsum(centered * t_centered, axis=0)
    p_norm = sqrt(tsum(centered * centered, axis=0) + pad)
    r = cov / (p_norm * t_norm) * valid.astype(pred.dtype)
    return 1.0 - r.mean()


def batch_mean_pcc(pred: np.ndarray, target: np.ndarray) -> float:
    pred, target = _check_pair(pred, target)
    return float(np.mean([pcc(pred[:, j], target[:, j]) for j in range(pred.shape[1])]))


def label_corr_matrix(labels: np.ndarray) -> np.ndarray:
    """Pairwise PCC between the label columns (symmetric, unit diagonal)."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2:
        raise ShapeError(f"Expected an N x k label matrix, got {labels.shape}.")
    if labels.shape[0] < 2:
        raise InsufficientSamples(
            f"Label correlation needs at least 2 samples, got {labels.shape[0]}."
        )
    k = labels.shape[1]
    matrix = np.eye(k)
    for i in range(k):
        for j in range(i, k):
            matrix[i, j] = matrix[j, i] = pcc(labels[:, i], labels[:, j])
    return matrix


def write_corr_csv(
    matrix: np.ndarray,
    path: Union[str, Path],
    names: Sequence[str] = DEFAULT_EMOTION_NAMES,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(list(names))
        for row in matrix:
            writer.writerow([f"{v:.6f}" for v in row])
    logger.debug("Wrote %d x %d correlation matrix to %r.", *matrix.shape, str(path))
