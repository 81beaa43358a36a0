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
Model architectures: the temporal-convolution + transformer-encoder model
(TE), a 1-D ResNet and cross-modal attention fusion, together with parameter
initialization and the checkpoint file format.
"""

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .diffcore import (
    Tensor,
    concat,
    conv1d,
    dropout,
    gelu,
    layer_norm,
    linear,
    masked_mean_pool,
    multi_head_attention,
    positional_encoding,
    relu,
    sigmoid,
)
from .exceptions import (
    FeatureCorruptionError,
    IncompatibleCheckpoint,
    InvalidHyperparams,
    ManifestError,
    ShapeError,
)
from .featstore import (
    DATA_DEFAULT_RETRIES,
    NUM_EMOTIONS,
    AlignPolicy,
    EmotionVector,
    FeatureSequence,
    atomic_write,
    concat_streams,
    load_bytes,
)
from .objectives import LossKind

CHECKPOINT_MAGIC = b"ERIC"
CHECKPOINT_VERSION = 1
RESNET_BLOCKS = 7
SINGLE_INPUT = "x"
ATTENTION_KEYS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")

_U32 = struct.Struct("<I")
_CKPT_PREAMBLE = struct.Struct("<4sII")

PathLike = Union[str, Path]

logger = logging.getLogger(__name__)


class FusionMode(str, Enum):
    VISUAL_ONLY = "visual_only"
    AUDIO_ONLY = "audio_only"
    CONCAT = "concat"
    CROSS_ATTENTION = "cross_attention"


class Architecture(str, Enum):
    TE = "te"
    RESNET1D = "resnet1d"


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 1e-3
    batch_size: int = 8
    hidden_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    conv_kernel: int = 3
    dropout: float = 0.1
    loss_kind: LossKind = LossKind.MSE
    fusion_mode: FusionMode = FusionMode.VISUAL_ONLY
    max_epochs: int = 10
    seed: int = 0
    architecture: Architecture = Architecture.TE
    positional_encoding: bool = True
    patience: int = 3
    grad_clip: float = 1.0
    ff_multiplier: int = 2
    visual_streams: Tuple[str, ...] = ("visual",)
    audio_stream: str = "audio"
    align_policy: AlignPolicy = AlignPolicy.NEAREST
    resnet_widths: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        for name, enum_cls in (
            ("loss_kind", LossKind),
            ("fusion_mode", FusionMode),
            ("architecture", Architecture),
            ("align_policy", AlignPolicy),
        ):
            try:
                object.__setattr__(self, name, enum_cls(getattr(self, name)))
            except ValueError as exc:
                raise InvalidHyperparams(
                    f"Invalid value {getattr(self, name)!r} for {name!r}, choose from "
                    f"{[e.value for e in enum_cls]!r}.",
                    field=name,
                ) from exc
        if isinstance(self.visual_streams, str):
            object.__setattr__(self, "visual_streams", (self.visual_streams,))
        object.__setattr__(self, "visual_streams", tuple(self.visual_streams))
        if self.resnet_widths is not None:
            object.__setattr__(self, "resnet_widths", tuple(int(w) for w in self.resnet_widths))
        self.validate()

    def validate(self) -> None:
        def check(ok: bool, name: str, msg: str):
            if not ok:
                raise InvalidHyperparams(f"Invalid {name!r}: {msg}", field=name)

        check(self.learning_rate > 0, "learning_rate", "must be > 0.")
        check(self.batch_size >= 1, "batch_size", "must be >= 1.")
        check(self.hidden_dim >= 1, "hidden_dim", "must be >= 1.")
        check(self.num_heads >= 1, "num_heads", "must be >= 1.")
        check(
            self.hidden_dim % self.num_heads == 0,
            "hidden_dim",
            f"{self.hidden_dim} is not divisible by num_heads={self.num_heads}.",
        )
        check(self.num_layers >= 0, "num_layers", "must be >= 0.")
        check(
            self.conv_kernel >= 1 and self.conv_kernel % 2 == 1,
            "conv_kernel",
            f"must be a positive odd integer, got {self.conv_kernel}.",
        )
        check(0.0 <= self.dropout < 1.0, "dropout", "must lie within [0, 1).")
        check(self.max_epochs >= 1, "max_epochs", "must be >= 1.")
        check(self.seed >= 0, "seed", "must be >= 0.")
        check(self.patience >= 1, "patience", "must be >= 1.")
        check(self.grad_clip > 0, "grad_clip", "must be > 0.")
        check(self.ff_multiplier >= 1, "ff_multiplier", "must be >= 1.")
        check(len(self.visual_streams) >= 1, "visual_streams", "at least one stream required.")
        check(
            not (self.loss_kind is LossKind.PCC and self.batch_size < 2),
            "batch_size",
            "PCC loss is undefined for batches smaller than 2.",
        )
        check(
            not (
                self.architecture is Architecture.RESNET1D
                and self.fusion_mode is FusionMode.CROSS_ATTENTION
            ),
            "fusion_mode",
            "cross_attention fusion is only available for the te architecture.",
        )
        if self.resnet_widths is not None:
            check(
                len(self.resnet_widths) == RESNET_BLOCKS and min(self.resnet_widths) >= 1,
                "resnet_widths",
                f"exactly {RESNET_BLOCKS} positive widths required.",
            )

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def replace(self, **changes) -> "Hyperparams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> Dict[str, Any]:
        res = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, tuple):
                value = list(value)
            res[f.name] = value
        return res

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Hyperparams":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidHyperparams(f"Unknown hyperparameter {unknown[0]!r}.", field=unknown[0])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class ModelParams:
    architecture: Architecture
    hp: Hyperparams
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __repr__(self):
        return (
            f"{self.__class__.__name__}(architecture={self.architecture.value!r}, "
            f"tensors={len(self.tensors)!r}, size={self.size!r})"
        )

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    @property
    def names(self) -> List[str]:
        return sorted(self.tensors)

    @property
    def size(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.tensors.values())).dtype

    def as_tensors(self, requires_grad: bool = False) -> Dict[str, Tensor]:
        return {
            name: Tensor(arr, requires_grad=requires_grad, name=name)
            for name, arr in self.tensors.items()
        }

    def with_tensors(self, tensors: Mapping[str, np.ndarray]) -> "ModelParams":
        missing = set(self.tensors) ^ set(tensors)
        if missing:
            raise ShapeError(f"Parameter sets differ in {sorted(missing)!r}.")
        return ModelParams(
            self.architecture, self.hp, {k: np.array(v) for k, v in tensors.items()}
        )

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.architecture, self.hp, {k: v.astype(dtype) for k, v in self.tensors.items()}
        )

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise comparison of all tensors."""
        return (
            self.architecture == other.architecture
            and self.names == other.names
            and all(
                self.tensors[n].shape == other.tensors[n].shape
                and self.tensors[n].tobytes() == other.tensors[n].tobytes()
                for n in self.names
            )
        )


def required_modalities(hp: Hyperparams) -> Tuple[str, ...]:
    if hp.fusion_mode is FusionMode.VISUAL_ONLY:
        return hp.visual_streams
    if hp.fusion_mode is FusionMode.AUDIO_ONLY:
        return (hp.audio_stream,)
    return hp.visual_streams + (hp.audio_stream,)


def model_input_dims(hp: Hyperparams, input_dims: Mapping[str, int]) -> Dict[str, int]:
    """Dims of the tensors the model consumes, keyed by model input name."""
    missing = [m for m in required_modalities(hp) if m not in input_dims]
    if missing:
        raise InvalidHyperparams(
            f"Fusion mode {hp.fusion_mode.value!r} needs modality {missing[0]!r}, "
            f"available: {sorted(input_dims)!r}.",
            field="audio_stream" if missing[0] == hp.audio_stream else "visual_streams",
        )
    if hp.fusion_mode is FusionMode.AUDIO_ONLY:
        return {SINGLE_INPUT: input_dims[hp.audio_stream]}
    visual = sum(input_dims[m] for m in hp.visual_streams)
    if hp.fusion_mode is FusionMode.VISUAL_ONLY:
        return {SINGLE_INPUT: visual}
    audio = input_dims[hp.audio_stream]
    if hp.fusion_mode is FusionMode.CONCAT:
        return {SINGLE_INPUT: visual + audio}
    return {"visual": visual, "audio": audio}


class _Initializer:
    def __init__(self, seed: int, dtype):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.tensors: Dict[str, np.ndarray] = {}

    def uniform(self, name: str, shape: Tuple[int, ...], fan_in: int) -> None:
        limit = 1.0 / np.sqrt(fan_in)
        self.tensors[name] = self.rng.uniform(-limit, limit, size=shape).astype(self.dtype)

    def const(self, name: str, shape: Tuple[int, ...], value: float) -> None:
        self.tensors[name] = np.full(shape, value, dtype=self.dtype)

    def conv(self, prefix: str, k: int, d_in: int, d_out: int) -> None:
        self.uniform(f"{prefix}.weight", (k, d_in, d_out), k * d_in)
        self.uniform(f"{prefix}.bias", (d_out,), k * d_in)

    def dense(self, prefix: str, d_in: int, d_out: int) -> None:
        self.uniform(f"{prefix}.weight", (d_in, d_out), d_in)
        self.uniform(f"{prefix}.bias", (d_out,), d_in)

    def norm(self, prefix: str, dim: int) -> None:
        self.const(f"{prefix}.gamma", (dim,), 1.0)
        self.const(f"{prefix}.beta", (dim,), 0.0)

    def attention(self, prefix: str, dim: int) -> None:
        for proj in ("q", "k", "v", "o"):
            self.uniform(f"{prefix}.w{proj}", (dim, dim), dim)
            self.uniform(f"{prefix}.b{proj}", (dim,), dim)

    def te_stack(self, prefix: str, hp: Hyperparams, d_in: int, cross: bool) -> None:
        h = hp.hidden_dim
        self.conv(f"{prefix}front.conv", hp.conv_kernel, d_in, h)
        for i in range(hp.num_layers):
            block = f"{prefix}encoder.{i}"
            self.norm(f"{block}.ln1", h)
            if cross:
                self.norm(f"{block}.ln_kv", h)
            self.attention(f"{block}.attn", h)
            self.norm(f"{block}.ln2", h)
            self.dense(f"{block}.ff1", h, hp.ff_multiplier * h)
            self.dense(f"{block}.ff2", hp.ff_multiplier * h, h)
        self.norm(f"{prefix}encoder.norm", h)

    def head(self, d_in: int, hidden: int) -> None:
        self.dense("head.fc1", d_in, hidden)
        self.dense("head.fc2", hidden, NUM_EMOTIONS)


def resnet_widths(hp: Hyperparams) -> Tuple[int, ...]:
    return hp.resnet_widths or (hp.hidden_dim,) * RESNET_BLOCKS


def init_params(
    hp: Hyperparams, input_dims: Mapping[str, int], seed: int, dtype=np.float32
) -> ModelParams:
    """
    Fan-in scaled uniform initialization, a pure function of ``(hp, input_dims, seed)``.

    :param input_dims: dim per modality id, as declared by the manifest
    """
    dims = model_input_dims(hp, input_dims)
    init = _Initializer(seed, dtype)
    if hp.architecture is Architecture.RESNET1D:
        widths = resnet_widths(hp)
        init.conv("stem.conv", hp.conv_kernel, dims[SINGLE_INPUT], widths[0])
        c_in = widths[0]
        for i, c_out in enumerate(widths):
            block = f"blocks.{i}"
            init.conv(f"{block}.conv1", hp.conv_kernel, c_in, c_out)
            init.norm(f"{block}.ln1", c_out)
            init.conv(f"{block}.conv2", hp.conv_kernel, c_out, c_out)
            init.norm(f"{block}.ln2", c_out)
            if c_in != c_out:
                init.conv(f"{block}.proj", 1, c_in, c_out)
            c_in = c_out
        init.head(widths[-1], hp.hidden_dim)
    elif hp.fusion_mode is FusionMode.CROSS_ATTENTION:
        init.te_stack("visual.", hp, dims["visual"], cross=True)
        init.te_stack("audio.", hp, dims["audio"], cross=True)
        init.head(2 * hp.hidden_dim, hp.hidden_dim)
    else:
        init.te_stack("", hp, dims[SINGLE_INPUT], cross=False)
        init.head(hp.hidden_dim, hp.hidden_dim)
    logger.debug(
        "Initialized %s parameters: %d tensors, %d values (seed=%d).",
        hp.architecture.value,
        len(init.tensors),
        sum(t.size for t in init.tensors.values()),
        seed,
    )
    return ModelParams(hp.architecture, hp, init.tensors)


def resnet_block_count(params: ModelParams) -> int:
    return len({name.split(".")[1] for name in params.tensors if name.startswith("blocks.")})


class _Forward:
    """One forward pass; numbers dropout sites in call order for their keys."""

    def __init__(
        self,
        params: ModelParams,
        weights: Optional[Mapping[str, Tensor]] = None,
        train: bool = False,
        step: int = 0,
    ):
        self.hp = params.hp
        self.dtype = params.dtype
        self.w = weights if weights is not None else params.as_tensors()
        self.train = train
        self.step = step
        self._site = 0

    def drop(self, x: Tensor) -> Tensor:
        key = (self.hp.seed, self._site, self.step)
        self._site += 1
        return dropout(x, self.hp.dropout, self.train, key)

    def _mask(self, mask: np.ndarray) -> np.ndarray:
        return mask[..., None].astype(self.dtype)

    def front(self, prefix: str, x: np.ndarray, mask: np.ndarray) -> Tensor:
        w = self.w
        h = conv1d(Tensor(x * self._mask(mask)), w[f"{prefix}front.conv.weight"])
        h = h + w[f"{prefix}front.conv.bias"]
        if self.hp.positional_encoding:
            h = h + positional_encoding(h.shape[-2], h.shape[-1], self.dtype)
        return self.drop(h)

    def block(
        self,
        prefix: str,
        h: Tensor,
        mask: np.ndarray,
        context: Optional[Tensor] = None,
        context_mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        w = self.w
        q = layer_norm(h, w[f"{prefix}.ln1.gamma"], w[f"{prefix}.ln1.beta"])
        if context is None:
            kv, key_mask = q, mask
        else:
            kv = layer_norm(context, w[f"{prefix}.ln_kv.gamma"], w[f"{prefix}.ln_kv.beta"])
            key_mask = context_mask
        attn = {k: w[f"{prefix}.attn.{k}"] for k in ATTENTION_KEYS}
        h = h + self.drop(multi_head_attention(q, kv, kv, self.hp.num_heads, attn, key_mask))
        f = layer_norm(h, w[f"{prefix}.ln2.gamma"], w[f"{prefix}.ln2.beta"])
        f = gelu(linear(f, w[f"{prefix}.ff1.weight"], w[f"{prefix}.ff1.bias"]))
        f = linear(f, w[f"{prefix}.ff2.weight"], w[f"{prefix}.ff2.bias"])
        return h + self.drop(f)

    def finish(self, prefix: str, h: Tensor, mask: np.ndarray) -> Tensor:
        w = self.w
        h = layer_norm(h, w[f"{prefix}encoder.norm.gamma"], w[f"{prefix}encoder.norm.beta"])
        return masked_mean_pool(h, mask)

    def head(self, pooled: Tensor) -> Tensor:
        w = self.w
        z = self.drop(gelu(linear(pooled, w["head.fc1.weight"], w["head.fc1.bias"])))
        return sigmoid(linear(z, w["head.fc2.weight"], w["head.fc2.bias"]))

    def te(self, x: np.ndarray, mask: np.ndarray) -> Tensor:
        h = self.front("", x, mask)
        for i in range(self.hp.num_layers):
            h = self.block(f"encoder.{i}", h, mask)
        return self.head(self.finish("", h, mask))

    def cross(self, inputs: Mapping[str, Tuple[np.ndarray, np.ndarray]]) -> Tensor:
        (xv, mv), (xa, ma) = inputs["visual"], inputs["audio"]
        hv = self.front("visual.", xv, mv)
        ha = self.front("audio.", xa, ma)
        for i in range(self.hp.num_layers):
            hv, ha = (
                self.block(f"visual.encoder.{i}", hv, mv, ha, ma),
                self.block(f"audio.encoder.{i}", ha, ma, hv, mv),
            )
        pooled = concat([self.finish("visual.", hv, mv), self.finish("audio.", ha, ma)], axis=-1)
        return self.head(pooled)

    def resnet(self, x: np.ndarray, mask: np.ndarray) -> Tensor:
        w = self.w
        m = self._mask(mask)
        h = relu(conv1d(Tensor(x * m), w["stem.conv.weight"], w["stem.conv.bias"]))
        for i in range(RESNET_BLOCKS):
            p = f"blocks.{i}"
            skip = h
            if f"{p}.proj.weight" in w:
                skip = conv1d(h, w[f"{p}.proj.weight"], w[f"{p}.proj.bias"])
            r = conv1d(h * m, w[f"{p}.conv1.weight"], w[f"{p}.conv1.bias"])
            r = relu(layer_norm(r, w[f"{p}.ln1.gamma"], w[f"{p}.ln1.beta"]))
            r = conv1d(r * m, w[f"{p}.conv2.weight"], w[f"{p}.conv2.bias"])
            h = skip + layer_norm(r, w[f"{p}.ln2.gamma"], w[f"{p}.ln2.beta"])
        return self.head(masked_mean_pool(h, mask))

    def __call__(self, inputs: Mapping[str, Tuple[np.ndarray, np.ndarray]]) -> Tensor:
        if self.hp.fusion_mode is FusionMode.CROSS_ATTENTION:
            return self.cross(inputs)
        x, mask = inputs[SINGLE_INPUT]
        if self.hp.architecture is Architecture.RESNET1D:
            return self.resnet(x, mask)
        return self.te(x, mask)


def forward_batch(
    params: ModelParams,
    inputs: Mapping[str, Tuple[np.ndarray, np.ndarray]],
    train_mode: bool = False,
    step: int = 0,
    weights: Optional[Mapping[str, Tensor]] = None,
) -> Tensor:
    """
    Batched forward pass.

    :param inputs: model input name -> (``B x T x D`` data, ``B x T`` boolean mask),
        as produced by :func:`pad_batch`
    :param weights: parameter tensors to differentiate against; defaults to
        constant tensors built from ``params``
    :return: ``B x 7`` intensities in (0, 1)
    """
    dtype = params.dtype
    cast = {
        name: (np.asarray(x, dtype=dtype), np.asarray(m, dtype=bool))
        for name, (x, m) in inputs.items()
    }
    return _Forward(params, weights, train_mode, step)(cast)


def _single(
    params: ModelParams, features: np.ndarray, mask: Optional[np.ndarray], train_mode: bool
) -> EmotionVector:
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError(f"Expected a T x D feature matrix, got shape {features.shape}.")
    if mask is None:
        mask = np.ones(features.shape[0], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != features.shape[:1]:
        raise ShapeError(f"Mask shape {mask.shape} does not match {features.shape[0]} frames.")
    out = forward_batch(params, {SINGLE_INPUT: (features[None], mask[None])}, train_mode)
    return EmotionVector(out.data[0])


def te_forward(
    params: ModelParams,
    features: np.ndarray,
    mask: Optional[np.ndarray] = None,
    train_mode: bool = False,
) -> EmotionVector:
    """Predict the intensities of one ``T x D`` sequence with a single-stream TE model."""
    if (
        params.architecture is not Architecture.TE
        or params.hp.fusion_mode is FusionMode.CROSS_ATTENTION
    ):
        raise ShapeError(
            "te_forward() needs single-stream TE parameters, got "
            f"{params.architecture.value}/{params.hp.fusion_mode.value}.",
            field="architecture",
        )
    return _single(params, features, mask, train_mode)


def resnet1d_forward(
    params: ModelParams,
    features: np.ndarray,
    train_mode: bool = False,
    mask: Optional[np.ndarray] = None,
) -> EmotionVector:
    if params.architecture is not Architecture.RESNET1D:
        raise ShapeError(
            f"resnet1d_forward() needs resnet1d parameters, got {params.architecture.value}.",
            field="architecture",
        )
    return _single(params, features, mask, train_mode)


def _fallback_frame(modality_id: str, dim: int) -> FeatureSequence:
    return FeatureSequence(modality_id, np.zeros(1), np.zeros((1, dim), dtype=np.float32))


def merge_visual(
    streams: Sequence[FeatureSequence], policy: AlignPolicy = AlignPolicy.NEAREST
) -> FeatureSequence:
    """Concatenate the visual streams; empty (no-face) streams become one zero frame."""
    filled = [s if s.frames else _fallback_frame(s.modality_id, s.dim) for s in streams]
    return concat_streams(filled, policy)


def prepare_inputs(
    hp: Hyperparams, streams: Mapping[str, FeatureSequence]
) -> Dict[str, np.ndarray]:
    """Turn one sample's streams into the ``T x D`` matrices the model consumes."""
    missing = [m for m in required_modalities(hp) if m not in streams]
    if missing:
        raise ManifestError(
            f"Fusion mode {hp.fusion_mode.value!r} needs modality {missing[0]!r}.",
            field=missing[0],
        )
    if hp.fusion_mode is not FusionMode.AUDIO_ONLY:
        visual = merge_visual([streams[m] for m in hp.visual_streams], hp.align_policy)
    if hp.fusion_mode is not FusionMode.VISUAL_ONLY:
        audio = streams[hp.audio_stream]
        if not audio.frames:
            audio = _fallback_frame(audio.modality_id, audio.dim)
    if hp.fusion_mode is FusionMode.VISUAL_ONLY:
        return {SINGLE_INPUT: visual.data}
    if hp.fusion_mode is FusionMode.AUDIO_ONLY:
        return {SINGLE_INPUT: audio.data}
    if hp.fusion_mode is FusionMode.CONCAT:
        return {SINGLE_INPUT: concat_streams([visual, audio], hp.align_policy).data}
    return {"visual": visual.data, "audio": audio.data}


def pad_batch(
    items: Sequence[Mapping[str, np.ndarray]], dtype=np.float32
) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """Zero-pad every model input to the batch's longest sequence and build masks."""
    if not items:
        raise ShapeError("Cannot pad an empty batch.")
    batch = {}
    for name in items[0]:
        mats = [np.asarray(item[name]) for item in items]
        length = max(m.shape[0] for m in mats)
        data = np.zeros((len(mats), length, mats[0].shape[1]), dtype=dtype)
        mask = np.zeros((len(mats), length), dtype=bool)
        for i, m in enumerate(mats):
            data[i, : m.shape[0]] = m
            mask[i, : m.shape[0]] = True
        batch[name] = (data, mask)
    return batch


def fuse_forward(
    params: ModelParams,
    visual: Optional[FeatureSequence],
    audio: Optional[FeatureSequence],
    mode: Union[FusionMode, str, None] = None,
    train_mode: bool = False,
) -> EmotionVector:
    """
    Predict one sample from its (already merged) visual and audio streams.

    ``mode`` defaults to the fusion mode the parameters were built for and
    must agree with it.
    """
    hp = params.hp
    mode = hp.fusion_mode if mode is None else FusionMode(mode)
    if mode is not hp.fusion_mode:
        raise ShapeError(
            f"Parameters were built for fusion mode {hp.fusion_mode.value!r}, not {mode.value!r}.",
            field="fusion_mode",
        )
    streams = {}
    if visual is not None:
        streams[hp.visual_streams[0]] = visual
    if audio is not None:
        streams[hp.audio_stream] = audio
    local = hp.replace(visual_streams=hp.visual_streams[:1])
    inputs = prepare_inputs(local, streams)
    batch = pad_batch([inputs], dtype=params.dtype)
    return EmotionVector(forward_batch(params, batch, train_mode).data[0])


def predict_arrays(
    params: ModelParams, inputs: Sequence[Mapping[str, np.ndarray]], batch_size: int = 32
) -> np.ndarray:
    """Eval-mode predictions for many samples, ``N x 7`` in input order."""
    out = []
    for start in range(0, len(inputs), batch_size):
        batch = pad_batch(inputs[start : start + batch_size], dtype=params.dtype)
        out.append(forward_batch(params, batch).data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, NUM_EMOTIONS))


@dataclass(frozen=True, eq=False)
class Checkpoint:
    params: ModelParams
    input_dims: Dict[str, int]
    seed: int
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def hp(self) -> Hyperparams:
        return self.params.hp

    @property
    def architecture(self) -> Architecture:
        return self.params.architecture

    def check_compatible(self, dims: Mapping[str, int]) -> None:
        for modality_id in required_modalities(self.hp):
            expected = self.input_dims.get(modality_id)
            actual = dims.get(modality_id)
            if actual != expected:
                raise IncompatibleCheckpoint(
                    f"Checkpoint expects {modality_id!r} with dim {expected}, "
                    f"dataset provides {actual}.",
                    field=modality_id,
                )

    def header(self) -> Dict[str, Any]:
        return {
            "architecture": self.architecture.value,
            "format_version": CHECKPOINT_VERSION,
            "hyperparams": self.hp.as_dict(),
            "input_dims": dict(sorted(self.input_dims.items())),
            "metadata": self.metadata,
            "seed": self.seed,
        }


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    header = json.dumps(checkpoint.header(), sort_keys=True).encode("utf-8")
    params = checkpoint.params
    table = [_U32.pack(len(params.names))]
    blobs = []
    for name in params.names:
        arr = params[name]
        raw_name = name.encode("utf-8")
        table.append(_U32.pack(len(raw_name)) + raw_name + _U32.pack(arr.ndim))
        table.extend(_U32.pack(d) for d in arr.shape)
        blobs.append(arr.astype("<f4").tobytes())
    return b"".join(
        [_CKPT_PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)), header]
        + table
        + blobs
    )


def save_checkpoint(checkpoint: Checkpoint, path: PathLike) -> None:
    atomic_write(Path(path), encode_checkpoint(checkpoint))
    logger.info("Saved checkpoint %r (%d values).", str(path), checkpoint.params.size)


class _Reader:
    def __init__(self, raw: bytes, path: PathLike):
        self.raw = raw
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FeatureCorruptionError(
                f"Checkpoint {str(self.path)!r} is truncated.", path=self.path
            )
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]


def decode_checkpoint(raw: bytes, path: PathLike = "<bytes>") -> Checkpoint:
    reader = _Reader(raw, path)
    magic, version, header_len = _CKPT_PREAMBLE.unpack(reader.take(_CKPT_PREAMBLE.size))
    if magic != CHECKPOINT_MAGIC:
        raise IncompatibleCheckpoint(f"{str(path)!r} is not a checkpoint file.", path=path)
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpoint(
            f"Unsupported checkpoint version {version} in {str(path)!r}.", path=path
        )
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
    except ValueError as exc:
        raise FeatureCorruptionError(
            f"Checkpoint header of {str(path)!r} is not valid JSON.", path=path
        ) from exc
    shapes = []
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        ndim = reader.u32()
        shapes.append((name, tuple(reader.u32() for _ in range(ndim))))
    tensors = {}
    for name, shape in shapes:
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape).astype(
            np.float32
        )
    if reader.pos != len(raw):
        raise FeatureCorruptionError(
            f"Checkpoint {str(path)!r} has {len(raw) - reader.pos} trailing bytes.", path=path
        )
    hp = Hyperparams.from_dict(header["hyperparams"])
    return Checkpoint(
        params=ModelParams(Architecture(header["architecture"]), hp, tensors),
        input_dims={k: int(v) for k, v in header["input_dims"].items()},
        seed=int(header["seed"]),
        metadata=header.get("metadata", {}),
    )


def load_checkpoint(path: PathLike, retries: int = DATA_DEFAULT_RETRIES) -> Checkpoint:
    checkpoint = decode_checkpoint(load_bytes(path, retries), path)
    logger.debug("Loaded checkpoint %r (%s).", str(path), checkpoint.architecture.value)
    return checkpoint
