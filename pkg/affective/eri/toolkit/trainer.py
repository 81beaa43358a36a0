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
import hashlib
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .encoders import (
    Checkpoint,
    FusionMode,
    Hyperparams,
    ModelParams,
    forward_batch,
    init_params,
    pad_batch,
    predict_arrays,
    prepare_inputs,
    required_modalities,
)
from .exceptions import ComputeError, InsufficientSamples, ManifestError, NumericalError, ShapeError
from .featstore import (
    DATA_DEFAULT_RETRIES,
    LABEL_CSV_HEADER,
    NUM_EMOTIONS,
    DatasetManifest,
    EmotionVector,
    MultimodalSample,
    filter_trainable,
    load_bytes,
    load_samples,
)
from .objectives import LossKind, MetricReport, mean_pcc, mse_loss, pcc_loss

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
PREDICT_BATCH_SIZE = 32

PathLike = Union[str, Path]

logger = logging.getLogger(__name__)


def derive_run_id(payload: Mapping[str, Any]) -> str:
    """Stable id for a run, derived from its resolved settings."""
    raw = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha1(raw).hexdigest()  # noqa: S324


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_mean_pcc: float
    val_mse: float
    wall_time: float = 0.0

    def as_dict(self, wall_time: bool = True) -> Dict[str, Any]:
        res = {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_mean_pcc": self.val_mean_pcc,
            "val_mse": self.val_mse,
        }
        if wall_time:
            res["wall_time"] = self.wall_time
        return res


@dataclass
class TrainHistory:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def record(self, rec: EpochRecord) -> bool:
        """Append ``rec``; return whether it is the new best epoch (ties keep the earlier one)."""
        if rec.epoch != len(self.epochs):
            raise ComputeError(
                f"Expected epoch {len(self.epochs)}, got {rec.epoch}.", field="epoch"
            )
        self.epochs.append(rec)
        if self.best_epoch is None or rec.val_mean_pcc > self.best.val_mean_pcc:
            self.best_epoch = rec.epoch
            return True
        return False

    @property
    def best(self) -> Optional[EpochRecord]:
        return None if self.best_epoch is None else self.epochs[self.best_epoch]

    @property
    def loss_trace(self) -> List[float]:
        return [rec.train_loss for rec in self.epochs]

    def to_jsonl(self, wall_time: bool = True) -> str:
        return "".join(json.dumps(r.as_dict(wall_time), sort_keys=True) + "\n" for r in self.epochs)

    def write(self, path: PathLike, wall_time: bool = True) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(wall_time))


class Adam:
    """Adam with global gradient-norm clipping; state is kept in 64-bit."""

    def __init__(
        self,
        lr: float,
        betas: Tuple[float, float] = ADAM_BETAS,
        eps: float = ADAM_EPS,
        clip: Optional[float] = 1.0,
    ):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip = clip
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(
        self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]
    ) -> Dict[str, np.ndarray]:
        grads = {k: np.asarray(g, dtype=np.float64) for k, g in grads.items()}
        norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
        if not np.isfinite(norm):
            raise NumericalError("Non-finite gradient norm.")
        if self.clip is not None and norm > self.clip:
            grads = {k: g * (self.clip / norm) for k, g in grads.items()}
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        updated = {}
        for name in sorted(params):
            g = grads[name]
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            self.m[name] = m = self.beta1 * m + (1.0 - self.beta1) * g
            self.v[name] = v = self.beta2 * v + (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p = params[name]
            updated[name] = (p.astype(np.float64) - update).astype(p.dtype)
        return updated


def _loss_fn(kind: LossKind):
    return pcc_loss if kind is LossKind.PCC else mse_loss


def _labels(samples: Sequence[MultimodalSample], split: str) -> np.ndarray:
    unlabeled = [s.sample_id for s in samples if s.label is None]
    if unlabeled:
        raise ManifestError(
            f"Split {split!r} has unlabeled sample {unlabeled[0]!r}.", field="split"
        )
    if not samples:
        return np.zeros((0, NUM_EMOTIONS))
    return np.stack([s.label.as_array() for s in samples])


class TrainingRun:
    """
    A training run that advances one epoch at a time, so a scheduler can
    pause it between epochs and resume it later.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        hp: Hyperparams,
        seed: int,
        filter_faces: bool = True,
        retries: int = DATA_DEFAULT_RETRIES,
        run_id: Optional[str] = None,
        dtype=np.float32,
    ):
        self.hp = hp.replace(seed=seed)
        self.seed = seed
        self.filter_faces = filter_faces
        self.run_id = run_id or derive_run_id(
            {"hp": self.hp.as_dict(), "seed": seed, "filter_faces": filter_faces}
        )
        modalities = required_modalities(self.hp)
        missing = [m for m in modalities if m not in manifest.dims]
        if missing:
            raise ManifestError(
                f"Dataset has no {missing[0]!r} stream, needed for fusion mode "
                f"{self.hp.fusion_mode.value!r}.",
                field=missing[0],
            )
        self.input_dims = {m: manifest.dims[m] for m in modalities}
        train_manifest = filter_trainable(manifest) if filter_faces else manifest
        train = load_samples(train_manifest, "train", modalities, retries=retries)
        val = load_samples(manifest, "val", modalities, retries=retries)
        min_train = 2 if self.hp.loss_kind is LossKind.PCC else 1
        if len(train) < min_train:
            raise InsufficientSamples(
                f"Training needs at least {min_train} train sample(s), got {len(train)}.",
                field="train",
            )
        if len(val) < 2:
            raise InsufficientSamples(
                f"Validation needs at least 2 labeled samples, got {len(val)}.", field="val"
            )
        self.train_inputs = [prepare_inputs(self.hp, s.streams) for s in train]
        self.train_targets = _labels(train, "train")
        self.val_inputs = [prepare_inputs(self.hp, s.streams) for s in val]
        self.val_targets = _labels(val, "val")
        self.params = init_params(self.hp, self.input_dims, seed, dtype=dtype)
        self.best_params: ModelParams = self.params
        self.optimizer = Adam(self.hp.learning_rate, clip=self.hp.grad_clip)
        self.history = TrainHistory()
        self.step = 0
        self.stopped_early = False
        self._loss = _loss_fn(self.hp.loss_kind)
        logger.info(
            "[%s] Training %s/%s on %d train / %d val samples (seed=%d).",
            self.run_id[:10],
            self.hp.architecture.value,
            self.hp.fusion_mode.value,
            len(train),
            len(val),
            seed,
        )

    @property
    def epoch(self) -> int:
        return len(self.history.epochs)

    @property
    def finished(self) -> bool:
        return self.stopped_early or self.epoch >= self.hp.max_epochs

    def batches(self, epoch: int) -> List[np.ndarray]:
        order = np.random.default_rng([self.seed, epoch]).permutation(len(self.train_inputs))
        size = self.hp.batch_size
        batches = [order[i : i + size] for i in range(0, order.size, size)]
        if self.hp.loss_kind is LossKind.PCC and batches and batches[-1].size < 2:
            batches.pop()
        return batches

    def train_step(self, idx: np.ndarray) -> float:
        weights = self.params.as_tensors(requires_grad=True)
        batch = pad_batch([self.train_inputs[i] for i in idx], dtype=self.params.dtype)
        pred = forward_batch(self.params, batch, train_mode=True, step=self.step, weights=weights)
        loss = self._loss(pred, self.train_targets[idx])
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericalError(
                f"[{self.run_id[:10]}] Non-finite loss at step {self.step}.", field="loss"
            )
        loss.backward()
        grads = {
            n: w.grad if w.grad is not None else np.zeros_like(w.data) for n, w in weights.items()
        }
        self.params = self.params.with_tensors(self.optimizer.step(self.params.tensors, grads))
        self.step += 1
        logger.debug("[%s] step %d loss=%.6f", self.run_id[:10], self.step, value)
        return value

    def validate(self, params: Optional[ModelParams] = None) -> MetricReport:
        preds = predict_arrays(params or self.params, self.val_inputs, PREDICT_BATCH_SIZE)
        return mean_pcc(preds, self.val_targets)

    def run_epoch(self) -> EpochRecord:
        if self.finished:
            raise ComputeError(f"[{self.run_id[:10]}] Training run already finished.")
        started = time.perf_counter()
        epoch = self.epoch
        losses = [self.train_step(idx) for idx in self.batches(epoch)]
        report = self.validate()
        rec = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)) if losses else float("nan"),
            val_mean_pcc=report.mean_pcc,
            val_mse=report.mse,
            wall_time=time.perf_counter() - started,
        )
        if self.history.record(rec):
            self.best_params = self.params
        elif epoch - self.history.best_epoch >= self.hp.patience:
            self.stopped_early = True
        logger.info(
            "[%s] epoch %d: train_loss=%.6f val_mean_pcc=%.4f val_mse=%.6f%s",
            self.run_id[:10],
            epoch,
            rec.train_loss,
            rec.val_mean_pcc,
            rec.val_mse,
            " (early stop)" if self.stopped_early else "",
        )
        return rec

    def run_until(self, epochs: int) -> TrainHistory:
        while not self.finished and self.epoch < epochs:
            self.run_epoch()
        return self.history

    def run(self) -> TrainHistory:
        return self.run_until(self.hp.max_epochs)

    def checkpoint(self) -> Checkpoint:
        best = self.history.best
        metadata = {"filter_faces": self.filter_faces, "run_id": self.run_id}
        if best is not None:
            metadata.update(best_epoch=best.epoch, val_mean_pcc=best.val_mean_pcc)
        return Checkpoint(
            params=self.best_params,
            input_dims=dict(self.input_dims),
            seed=self.seed,
            metadata=metadata,
        )


def train(
    manifest: DatasetManifest,
    hp: Hyperparams,
    seed: int,
    filter_faces: bool = True,
    retries: int = DATA_DEFAULT_RETRIES,
    run_id: Optional[str] = None,
) -> Tuple[Checkpoint, TrainHistory]:
    """
    Train on the (face-filtered) train split, validate on the full val split
    every epoch and return the parameters of the best validation epoch.
    """
    run = TrainingRun(manifest, hp, seed, filter_faces=filter_faces, retries=retries, run_id=run_id)
    history = run.run()
    return run.checkpoint(), history


@dataclass(frozen=True, eq=False)
class PredictionTable:
    sample_ids: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1, NUM_EMOTIONS)
        if values.shape[0] != len(self.sample_ids):
            raise ShapeError(
                f"{len(self.sample_ids)} ids but {values.shape[0]} prediction rows.", field="values"
            )
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.sample_ids)

    def as_dict(self) -> Dict[str, EmotionVector]:
        return {
            sid: EmotionVector(np.clip(row, 0.0, 1.0))
            for sid, row in zip(self.sample_ids, self.values)
        }

    def write_csv(self, path: PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fp:
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(LABEL_CSV_HEADER)
            for sid, row in zip(self.sample_ids, self.values):
                writer.writerow([sid] + [f"{v:.6f}" for v in row])


def read_predictions_csv(path: PathLike, retries: int = DATA_DEFAULT_RETRIES) -> PredictionTable:
    text = load_bytes(path, retries).decode("utf-8")
    rows = list(csv.reader(text.splitlines()))
    if not rows or rows[0] != LABEL_CSV_HEADER:
        raise ManifestError(
            f"{str(path)!r} is not a predictions CSV (expected header {LABEL_CSV_HEADER!r}).",
            path=path,
        )
    try:
        values = [[float(v) for v in row[1:]] for row in rows[1:]]
        return PredictionTable(tuple(row[0] for row in rows[1:]), np.asarray(values))
    except (ValueError, IndexError, ShapeError) as exc:
        raise ManifestError(f"Malformed predictions CSV {str(path)!r}: {exc!s}", path=path) from exc


def _split_inputs(
    checkpoint: Checkpoint, manifest: DatasetManifest, split: str, retries: int
) -> Tuple[List[MultimodalSample], List[Dict[str, np.ndarray]]]:
    checkpoint.check_compatible(manifest.dims)
    samples = load_samples(manifest, split, required_modalities(checkpoint.hp), retries=retries)
    return samples, [prepare_inputs(checkpoint.hp, s.streams) for s in samples]


def predict(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    split: str,
    retries: int = DATA_DEFAULT_RETRIES,
) -> PredictionTable:
    samples, inputs = _split_inputs(checkpoint, manifest, split, retries)
    if not samples:
        raise InsufficientSamples(f"Split {split!r} is empty.", field="split")
    values = predict_arrays(checkpoint.params, inputs, PREDICT_BATCH_SIZE)
    return PredictionTable(tuple(s.sample_id for s in samples), values)


def split_labels(
    manifest: DatasetManifest, split: str, sample_ids: Optional[Iterable[str]] = None
) -> np.ndarray:
    """Labels of ``split`` straight from the manifest, optionally in the order of ``sample_ids``."""
    by_id = {e.sample_id: e for e in manifest.split(split)}
    ids = list(by_id) if sample_ids is None else list(sample_ids)
    rows = []
    for sid in ids:
        entry = by_id.get(sid)
        if entry is None or entry.label is None:
            raise ManifestError(f"No label for sample {sid!r} in split {split!r}.", field="split")
        rows.append(entry.label)
    return np.asarray(rows, dtype=np.float64).reshape(-1, NUM_EMOTIONS)


def evaluate(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    split: str = "val",
    retries: int = DATA_DEFAULT_RETRIES,
) -> MetricReport:
    table = predict(checkpoint, manifest, split, retries=retries)
    report = mean_pcc(table.values, split_labels(manifest, split, table.sample_ids))
    logger.info(
        "Evaluated on %r: mean_pcc=%.4f mse=%.6f (n=%d).",
        split,
        report.mean_pcc,
        report.mse,
        report.n_samples,
    )
    return report


@dataclass(frozen=True)
class FeatureSetResult:
    streams: Tuple[str, ...]
    report: MetricReport

    @property
    def name(self) -> str:
        return "+".join(self.streams)


def compare_feature_sets(
    manifest: DatasetManifest,
    hp: Hyperparams,
    streams: Sequence[str],
    seed: int,
    filter_faces: bool = True,
    retries: int = DATA_DEFAULT_RETRIES,
) -> List[FeatureSetResult]:
    """
    Train one visual-only model per non-empty subset of ``streams`` and report
    its validation metrics; ordered by subset size, then name.
    """
    if not streams:
        raise ManifestError("No visual streams given.", field="visual_streams")
    subsets = [
        c for r in range(1, len(streams) + 1) for c in itertools.combinations(streams, r)
    ]
    subsets.sort(key=lambda c: (len(c), "+".join(c)))
    results = []
    for subset in subsets:
        local = hp.replace(visual_streams=subset, fusion_mode=FusionMode.VISUAL_ONLY)
        checkpoint, _ = train(manifest, local, seed, filter_faces, retries)
        report = evaluate(checkpoint, manifest, "val", retries=retries)
        results.append(FeatureSetResult(subset, report))
    return results


def write_feature_sets_csv(results: Sequence[FeatureSetResult], path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["streams", "mean_pcc", "mse"])
        for res in results:
            writer.writerow([res.name, f"{res.report.mean_pcc:.6f}", f"{res.report.mse:.6f}"])
