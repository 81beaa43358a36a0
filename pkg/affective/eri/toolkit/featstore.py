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
Feature streams, dataset manifests and the synthetic dataset generator.

A feature file is little-endian binary::

    magic "ERIF" | version u32 | dim u32 | frames u32
    | timestamps f64 x frames | data f32 x (frames * dim), row-major

A manifest is a JSON-lines file, one sample per line, with the keys
``sample_id``, ``split``, ``face_detected``, ``label`` (7 floats or ``null``)
and ``streams`` (modality id -> feature file path, relative to the manifest).
"""

import csv
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from tenacity import (
    Retrying,
    before_sleep_log,
    retry_if_exception,
    stop_after_attempt,
    wait_exponential,
)

from .exceptions import (
    ConfigError,
    FeatureCorruptionError,
    FeatureFormatError,
    FeatureValidationError,
    ManifestError,
)

MAGIC = b"ERIF"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIII")
NUM_EMOTIONS = 7
DEFAULT_EMOTION_NAMES: Tuple[str, ...] = tuple(f"emotion_{i}" for i in range(NUM_EMOTIONS))
LABEL_CSV_HEADER = ["sample_id"] + [f"e{i}" for i in range(NUM_EMOTIONS)]
SPLITS = ("train", "val", "test")
LABELED_SPLITS = ("train", "val")
VISUAL_FRAME_STEP = 0.2  # seconds
MANIFEST_FILENAME = "manifest.jsonl"
DATA_DEFAULT_RETRIES = 0
DATA_DEFAULT_MIN_RETRY_PAUSE = 2  # seconds
DATA_DEFAULT_MAX_RETRY_PAUSE = 20  # seconds

PathLike = Union[str, Path]
logger = logging.getLogger(__name__)


class AlignPolicy(str, Enum):
    NEAREST = "nearest"
    TRUNCATE = "truncate"


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    modality_id: str
    timestamps: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        timestamps = np.array(self.timestamps, dtype=np.float64).reshape(-1)
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise FeatureValidationError(
                f"Feature data of stream {self.modality_id!r} must be a frames x dim matrix, "
                f"got shape {data.shape}.",
                field="data",
            )
        if data.shape[1] < 1:
            raise FeatureValidationError(
                f"Stream {self.modality_id!r} has dim {data.shape[1]}, must be positive.",
                field="dim",
            )
        if data.shape[0] != timestamps.shape[0]:
            raise FeatureValidationError(
                f"Stream {self.modality_id!r} has {timestamps.shape[0]} timestamps "
                f"but {data.shape[0]} data rows.",
                field="timestamps",
            )
        if timestamps.size > 1 and not np.all(np.diff(timestamps) > 0):
            raise FeatureValidationError(
                f"Timestamps of stream {self.modality_id!r} are not strictly increasing.",
                field="timestamps",
            )
        if not (np.all(np.isfinite(timestamps)) and np.all(np.isfinite(data))):
            raise FeatureValidationError(
                f"Stream {self.modality_id!r} contains non-finite values.", field="data"
            )
        timestamps.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "data", data)

    def __repr__(self):
        return (
            f"{self.__class__.__name__}(modality_id={self.modality_id!r}, "
            f"dim={self.dim!r}, frames={self.frames!r})"
        )

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return (
            self.modality_id == other.modality_id
            and self.data.shape == other.data.shape
            and self.timestamps.tobytes() == other.timestamps.tobytes()
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    @property
    def frames(self) -> int:
        return int(self.data.shape[0])

    @classmethod
    def empty(cls, modality_id: str, dim: int) -> "FeatureSequence":
        return cls(modality_id, np.zeros(0), np.zeros((0, dim), dtype=np.float32))


@dataclass(frozen=True)
class EmotionVector:
    intensities: Tuple[float, ...]
    names: Tuple[str, ...] = DEFAULT_EMOTION_NAMES

    def __post_init__(self):
        values = tuple(float(v) for v in self.intensities)
        if len(values) != NUM_EMOTIONS:
            raise FeatureValidationError(
                f"An emotion vector has exactly {NUM_EMOTIONS} entries, got {len(values)}.",
                field="label",
            )
        if not all(np.isfinite(v) and 0.0 <= v <= 1.0 for v in values):
            raise FeatureValidationError(
                f"Emotion intensities must be finite and within [0, 1]: {values!r}.",
                field="label",
            )
        if len(self.names) != NUM_EMOTIONS:
            raise FeatureValidationError(
                f"Exactly {NUM_EMOTIONS} emotion names are required.", field="emotion_names"
            )
        object.__setattr__(self, "intensities", values)
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self) -> int:
        return NUM_EMOTIONS

    def __getitem__(self, item):
        return self.intensities[item]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.intensities, dtype=np.float64)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, self.intensities))


@dataclass(frozen=True)
class MultimodalSample:
    sample_id: str
    streams: Dict[str, FeatureSequence]
    label: Optional[EmotionVector]
    split: str
    face_detected: bool = True


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    split: str
    streams: Dict[str, str]
    label: Optional[Tuple[float, ...]] = None
    face_detected: bool = True

    def as_dict(self) -> Dict[str, object]:
        return {
            "face_detected": self.face_detected,
            "label": list(self.label) if self.label is not None else None,
            "sample_id": self.sample_id,
            "split": self.split,
            "streams": dict(sorted(self.streams.items())),
        }


@dataclass(frozen=True)
class DatasetManifest:
    entries: Tuple[ManifestEntry, ...]
    dims: Dict[str, int]
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.entries)

    def split(self, name: str) -> List[ManifestEntry]:
        return [entry for entry in self.entries if entry.split == name]

    def stream_path(self, entry: ManifestEntry, modality_id: str) -> Path:
        try:
            rel = entry.streams[modality_id]
        except KeyError as exc:
            raise ManifestError(
                f"Sample {entry.sample_id!r} has no {modality_id!r} stream.",
                field=modality_id,
            ) from exc
        return self.root / rel


def _read_bytes(path: Path, size: Optional[int] = None) -> bytes:
    with path.open("rb") as fp:
        return fp.read() if size is None else fp.read(size)


def _is_transient(exc: BaseException) -> bool:
    return isinstance(exc, OSError) and not isinstance(
        exc, (FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError)
    )


def _retrying(retries: int) -> Retrying:
    return Retrying(
        stop=stop_after_attempt(retries + 1),
        wait=wait_exponential(
            multiplier=1, min=DATA_DEFAULT_MIN_RETRY_PAUSE, max=DATA_DEFAULT_MAX_RETRY_PAUSE
        ),
        retry=retry_if_exception(_is_transient),
        before_sleep=before_sleep_log(logger, logging.WARNING),
        reraise=True,
    )


def load_bytes(
    path: PathLike, retries: int = DATA_DEFAULT_RETRIES, size: Optional[int] = None
) -> bytes:
    """Read ``path`` (only its first ``size`` bytes if given), retrying transient errors."""
    path = Path(path)
    try:
        return _retrying(retries)(_read_bytes, path, size)
    except FileNotFoundError as exc:
        raise ManifestError(f"File not found: {str(path)!r}.", path=path) from exc
    except OSError as exc:
        raise ManifestError(f"Error reading {str(path)!r}: {exc!s}", path=path) from exc


def _parse_header(raw: bytes, path: PathLike) -> Tuple[int, int]:
    if len(raw) < HEADER.size:
        raise FeatureFormatError(
            f"Feature file {str(path)!r} is shorter than its header.", path=path
        )
    magic, version, dim, frames = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FeatureFormatError(
            f"Feature file {str(path)!r} has bad magic {magic!r}.", reason="bad magic", path=path
        )
    if version != FORMAT_VERSION:
        raise FeatureFormatError(
            f"Feature file {str(path)!r} has unsupported version {version}.",
            reason="bad version",
            path=path,
        )
    return dim, frames


def read_feature_header(path: PathLike, retries: int = DATA_DEFAULT_RETRIES) -> Tuple[int, int]:
    """Return ``(dim, frames)`` of a feature file without decoding the payload."""
    return _parse_header(load_bytes(path, retries, size=HEADER.size), path)


def read_feature_file(
    path: PathLike, modality_id: str = None, retries: int = DATA_DEFAULT_RETRIES
) -> FeatureSequence:
    """
    Read a feature file.

    :param path: file to read
    :param modality_id: stream name, defaults to the part of the file name after the
        first dot (``<sample>.<modality>.erif``)
    :param retries: how often to retry transient read errors
    :raises FeatureFormatError: bad magic or version
    :raises FeatureCorruptionError: payload length does not match the header
    :raises FeatureValidationError: non-increasing timestamps or non-finite values
    """
    path = Path(path)
    raw = load_bytes(path, retries)
    dim, frames = _parse_header(raw, path)
    expected = HEADER.size + 8 * frames + 4 * frames * dim
    if len(raw) != expected:
        raise FeatureCorruptionError(
            f"Feature file {str(path)!r} declares {frames} frames x {dim} dims "
            f"({expected} bytes) but has {len(raw)} bytes.",
            path=path,
        )
    if modality_id is None:
        parts = path.name.split(".")
        modality_id = parts[1] if len(parts) > 2 else path.stem
    offset = HEADER.size
    timestamps = np.frombuffer(raw, dtype="<f8", count=frames, offset=offset)
    offset += 8 * frames
    data = np.frombuffer(raw, dtype="<f4", count=frames * dim, offset=offset).reshape(frames, dim)
    try:
        seq = FeatureSequence(modality_id, timestamps, data)
    except FeatureValidationError as exc:
        raise FeatureValidationError(
            f"Invalid feature file {str(path)!r}: {exc!s}", reason=exc.reason, path=path
        ) from exc
    logger.debug("Read %r (%d frames x %d dims).", str(path), frames, dim)
    return seq


def atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fp:
            fp.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def encode_feature_sequence(seq: FeatureSequence) -> bytes:
    return b"".join(
        (
            HEADER.pack(MAGIC, FORMAT_VERSION, seq.dim, seq.frames),
            seq.timestamps.astype("<f8").tobytes(),
            seq.data.astype("<f4").tobytes(),
        )
    )


def write_feature_file(seq: FeatureSequence, path: PathLike) -> None:
    if not (np.all(np.isfinite(seq.data)) and np.all(np.isfinite(seq.timestamps))):
        raise FeatureValidationError(
            f"Refusing to write non-finite values to {str(path)!r}.", path=path
        )
    atomic_write(Path(path), encode_feature_sequence(seq))
    logger.debug("Wrote %r (%d frames x %d dims).", str(path), seq.frames, seq.dim)


def _entry_from_json(obj: Dict[str, object], lineno: int, path: Path) -> ManifestEntry:
    try:
        sample_id = str(obj["sample_id"])
        split = str(obj["split"])
        streams = {str(k): str(v) for k, v in dict(obj["streams"]).items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(
            f"Malformed manifest line {lineno} in {str(path)!r}: {exc!s}", path=path
        ) from exc
    if split not in SPLITS:
        raise ManifestError(
            f"Sample {sample_id!r} (line {lineno}) has unknown split {split!r}.",
            path=path,
            field="split",
        )
    label = obj.get("label")
    if label is not None:
        try:
            label = EmotionVector(tuple(label)).intensities
        except (TypeError, FeatureValidationError) as exc:
            raise ManifestError(
                f"Sample {sample_id!r} (line {lineno}) has an invalid label: {exc!s}",
                path=path,
                field="label",
            ) from exc
    elif split in LABELED_SPLITS:
        raise ManifestError(
            f"Sample {sample_id!r} in split {split!r} (line {lineno}) carries no label.",
            path=path,
            field="label",
        )
    return ManifestEntry(
        sample_id=sample_id,
        split=split,
        streams=streams,
        label=label,
        face_detected=bool(obj.get("face_detected", True)),
    )


def read_manifest(path: PathLike, retries: int = DATA_DEFAULT_RETRIES) -> DatasetManifest:
    """
    Load a manifest and check that every referenced feature file exists and
    that all files of one modality share the same dim.

    :raises ManifestError: missing files, duplicate ids, malformed lines, dim mismatches
    """
    path = Path(path)
    text = load_bytes(path, retries).decode("utf-8")
    entries: List[ManifestEntry] = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise ManifestError(
                f"Line {lineno} of {str(path)!r} is not valid JSON: {exc!s}", path=path
            ) from exc
        entry = _entry_from_json(obj, lineno, path)
        if entry.sample_id in seen:
            raise ManifestError(
                f"Duplicate sample_id {entry.sample_id!r} in {str(path)!r}.",
                path=path,
                field="sample_id",
            )
        seen.add(entry.sample_id)
        entries.append(entry)
    root = path.parent
    dims: Dict[str, int] = {}
    for entry in entries:
        for modality_id, rel in sorted(entry.streams.items()):
            dim, _frames = read_feature_header(root / rel, retries=retries)
            if dims.setdefault(modality_id, dim) != dim:
                raise ManifestError(
                    f"Stream {modality_id!r} of sample {entry.sample_id!r} has dim {dim}, "
                    f"expected {dims[modality_id]} ({str(root / rel)!r}).",
                    path=root / rel,
                    field=modality_id,
                )
    logger.info("Loaded manifest %r with %d samples.", str(path), len(entries))
    return DatasetManifest(entries=tuple(entries), dims=dims, root=root)


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    lines = [json.dumps(entry.as_dict(), sort_keys=True) for entry in manifest.entries]
    atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def write_labels_csv(
    manifest: DatasetManifest, path: PathLike, split: Optional[str] = None
) -> None:
    entries = manifest.entries if split is None else manifest.split(split)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(LABEL_CSV_HEADER)
        for entry in entries:
            if entry.label is None:
                continue
            writer.writerow([entry.sample_id] + [f"{v:.6f}" for v in entry.label])


def filter_trainable(manifest: DatasetManifest) -> DatasetManifest:
    """Drop training samples without a detected face; validation and test samples stay."""
    kept = tuple(e for e in manifest.entries if e.split != "train" or e.face_detected)
    dropped = len(manifest.entries) - len(kept)
    if dropped:
        logger.info("Discarded %d training sample(s) without detected faces.", dropped)
    return replace(manifest, entries=kept)


def nearest_indices(reference: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Index into ``other`` of the timestamp closest to each reference timestamp (ties: earlier)."""
    idx = np.searchsorted(other, reference, side="left")
    right = np.clip(idx, 0, other.size - 1)
    left = np.clip(idx - 1, 0, other.size - 1)
    take_left = np.abs(reference - other[left]) <= np.abs(other[right] - reference)
    return np.where(take_left, left, right)


def concat_streams(
    seqs: Sequence[FeatureSequence], policy: AlignPolicy = AlignPolicy.NEAREST
) -> FeatureSequence:
    """
    Stitch streams along the feature axis on the timeline of ``seqs[0]``.

    With ``NEAREST`` every other stream is resampled onto the reference
    timestamps; with ``TRUNCATE`` all streams are cut to the shortest one.
    """
    if not seqs:
        raise FeatureValidationError("concat_streams() needs at least one stream.")
    for seq in seqs:
        if seq.frames == 0:
            raise FeatureValidationError(
                f"Cannot align empty stream {seq.modality_id!r}.", field=seq.modality_id
            )
    if len(seqs) == 1:
        return seqs[0]
    policy = AlignPolicy(policy)
    reference = seqs[0]
    if policy is AlignPolicy.NEAREST:
        timestamps = reference.timestamps
        blocks = [reference.data]
        blocks.extend(s.data[nearest_indices(timestamps, s.timestamps)] for s in seqs[1:])
    else:
        frames = min(s.frames for s in seqs)
        timestamps = reference.timestamps[:frames]
        blocks = [s.data[:frames] for s in seqs]
    return FeatureSequence(
        "+".join(s.modality_id for s in seqs), timestamps, np.concatenate(blocks, axis=1)
    )


def load_samples(
    manifest: DatasetManifest,
    split: Optional[str] = None,
    modalities: Optional[Iterable[str]] = None,
    retries: int = DATA_DEFAULT_RETRIES,
) -> List[MultimodalSample]:
    """Read the feature files of all (or one split's) samples, in manifest order."""
    entries = manifest.entries if split is None else manifest.split(split)
    wanted = None if modalities is None else set(modalities)
    samples = []
    for entry in entries:
        streams = {}
        for modality_id in sorted(entry.streams):
            if wanted is not None and modality_id not in wanted:
                continue
            seq = read_feature_file(
                manifest.stream_path(entry, modality_id), modality_id, retries=retries
            )
            if seq.dim != manifest.dims.get(modality_id, seq.dim):
                raise ManifestError(
                    f"Stream {modality_id!r} of sample {entry.sample_id!r} has dim {seq.dim}, "
                    f"manifest declares {manifest.dims[modality_id]}.",
                    path=manifest.stream_path(entry, modality_id),
                    field=modality_id,
                )
            streams[modality_id] = seq
        label = EmotionVector(entry.label) if entry.label is not None else None
        samples.append(
            MultimodalSample(
                sample_id=entry.sample_id,
                streams=streams,
                label=label,
                split=entry.split,
                face_detected=entry.face_detected,
            )
        )
    return samples


@dataclass(frozen=True)
class SynthSpec:
    n_train: int = 200
    n_val: int = 50
    n_test: int = 0
    dims: Dict[str, int] = field(default_factory=lambda: {"visual": 16, "audio": 8})
    visual_modalities: Tuple[str, ...] = ("visual",)
    frames_min: int = 8
    frames_max: int = 24
    frame_step: float = VISUAL_FRAME_STEP
    audio_hop: float = 0.5
    no_face_fraction: float = 0.05
    latent_dim: int = 4
    noise: float = 0.5
    gain: float = 2.0

    def validate(self) -> None:
        if self.n_train + self.n_val + self.n_test <= 0:
            raise ConfigError("Zero samples requested.", field="synth.n_train")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ConfigError("Sample counts must not be negative.", field="synth.n_train")
        if not 1 <= self.frames_min <= self.frames_max:
            raise ConfigError(
                f"Invalid frame range [{self.frames_min}, {self.frames_max}].",
                field="synth.frames_min",
            )
        if not self.dims or any(d < 1 for d in self.dims.values()):
            raise ConfigError("Every modality needs a positive dim.", field="synth.dims")
        missing = [m for m in self.visual_modalities if m not in self.dims]
        if not self.visual_modalities or missing:
            raise ConfigError(
                f"Visual modalities {missing!r} have no dim.", field="synth.visual_modalities"
            )
        if not 0.0 <= self.no_face_fraction <= 1.0:
            raise ConfigError(
                "no_face_fraction must lie within [0, 1].", field="synth.no_face_fraction"
            )
        if self.frame_step <= 0 or self.audio_hop <= 0:
            raise ConfigError("Frame steps must be positive.", field="synth.frame_step")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def gen_synthetic(spec: SynthSpec, seed: int, out_dir: PathLike) -> DatasetManifest:
    """
    Write a deterministic synthetic dataset below ``out_dir``.

    Every sample has a hidden latent vector that drives all of its streams.
    Labels are a smooth function of the time mean of the visual features as
    written (noise included) squashed into (0, 1), so a model that pools over
    time can learn them. A ``no_face_fraction`` of train/val samples is marked as
    ``face_detected=False`` and gets uninformative fallback visual features.
    """
    spec.validate()
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    modalities = sorted(spec.dims)
    projections = {
        m: rng.standard_normal((spec.latent_dim, spec.dims[m])) / np.sqrt(spec.latent_dim)
        for m in modalities
    }
    visual_dim = sum(spec.dims[m] for m in spec.visual_modalities)
    readout = rng.standard_normal((visual_dim, NUM_EMOTIONS))
    readout /= np.linalg.norm(readout, axis=0, keepdims=True)
    bend = rng.standard_normal((visual_dim, NUM_EMOTIONS)) / np.sqrt(visual_dim)
    bias = rng.uniform(-0.5, 0.5, NUM_EMOTIONS)

    entries: List[ManifestEntry] = []
    counts = (("train", spec.n_train), ("val", spec.n_val), ("test", spec.n_test))
    for split, count in counts:
        for i in range(count):
            sample_id = f"{split}_{i:05d}"
            frames = int(rng.integers(spec.frames_min, spec.frames_max + 1))
            latent = rng.standard_normal(spec.latent_dim)
            no_face = bool(rng.random() < spec.no_face_fraction) and split in LABELED_SPLITS
            duration = (frames - 1) * spec.frame_step
            streams: Dict[str, str] = {}
            pooled = []
            for m in modalities:
                if m in spec.visual_modalities:
                    n = frames
                    timestamps = np.arange(n) * spec.frame_step
                else:
                    n = int(np.floor(duration / spec.audio_hop + 1e-9)) + 1
                    timestamps = np.arange(n) * spec.audio_hop
                phase = rng.uniform(0, 2 * np.pi, spec.dims[m])
                drift = 0.3 * np.sin(timestamps[:, None] + phase[None, :])
                clean = latent @ projections[m] + drift
                data = clean + spec.noise * rng.standard_normal((n, spec.dims[m]))
                if m in spec.visual_modalities:
                    pooled.append(data.mean(axis=0))
                    if no_face:
                        data = rng.standard_normal((n, spec.dims[m]))
                rel = Path("features") / f"{sample_id}.{m}.erif"
                write_feature_file(FeatureSequence(m, timestamps, data), out_dir / rel)
                streams[m] = rel.as_posix()
            label = None
            if split in LABELED_SPLITS:
                x = np.concatenate(pooled)
                u = spec.gain * (x @ readout) + 0.5 * np.tanh(x @ bend) + bias
                label = tuple(float(v) for v in _sigmoid(u))
            entries.append(
                ManifestEntry(
                    sample_id=sample_id,
                    split=split,
                    streams=streams,
                    label=label,
                    face_detected=not no_face,
                )
            )
    manifest = DatasetManifest(entries=tuple(entries), dims=dict(spec.dims), root=out_dir)
    write_manifest(manifest, out_dir / MANIFEST_FILENAME)
    write_labels_csv(manifest, out_dir / "labels.csv")
    logger.info(
        "Generated %d synthetic samples (seed %d) in %r.", len(entries), seed, str(out_dir)
    )
    return manifest
