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
Reverse-mode automatic differentiation on numpy arrays.

Operations build a graph on the fly. A :class:`Tensor` only remembers its
parents when at least one of them requires a gradient, so evaluation with
plain parameters never builds a graph. Every operation rejects non-finite
results.
"""

import logging
import math
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import MaskError, NumericalError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int]
GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

LAYER_NORM_EPS = 1e-5
GRAD_CHECK_EPS = 1e-5
GRAD_CHECK_FLOOR = 1e-3

logger = logging.getLogger(__name__)


class Tensor:
    __array_priority__ = 100

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: str = None,
        _parents: Tuple["Tensor", ...] = (),
        _grad_fn: GradFn = None,
        _op: str = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        self.data = data
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._grad_fn = _grad_fn
        self._op = _op

    def __repr__(self):
        label = f"name={self.name!r}, " if self.name else ""
        return (
            f"{self.__class__.__name__}({label}shape={self.shape!r}, "
            f"requires_grad={self.requires_grad!r})"
        )

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray = None) -> None:
        """
        Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that
        requires a gradient.

        :param grad: upstream gradient, defaults to 1 for scalar tensors
        """
        if not self.requires_grad:
            raise NumericalError("backward() called on a tensor that does not require grad.")
        if grad is None:
            if self.size != 1:
                raise ShapeError(
                    f"backward() without an explicit gradient needs a scalar, got {self.shape}."
                )
            grad = np.ones_like(self.data)
        grads: Dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in topological_order(self):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x: ArrayLike, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def topological_order(output: Tensor) -> List[Tensor]:
    """Nodes reachable from ``output`` that require grad, outputs before their inputs."""
    order: List[Tensor] = []
    visited = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], grad_fn: GradFn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"Operation {op!r} produced non-finite values.", reason=op)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _grad_fn=grad_fn, _op=op)
    return Tensor(data, _op=op)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _operands(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        a = Tensor(np.asarray(a, dtype=np.float64))
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _operands(a, b)

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), grad_fn, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _operands(a, b)

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _operands(a, b)

    def grad_fn(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), grad_fn, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _operands(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def grad_fn(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), grad_fn, "div")


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} @ {b.shape}.")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}.")

    def grad_fn(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), grad_fn, "matmul")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out), (x,), grad_fn, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def grad_fn(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), grad_fn, "reshape")


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.transpose(g, inverse),)

    return _result(np.transpose(x.data, axes), (x,), grad_fn, "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, grad_fn, "concat")


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0

    def grad_fn(g):
        return (g * positive,)

    return _result(np.where(positive, x.data, 0).astype(x.dtype), (x,), grad_fn, "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of the Gaussian error linear unit."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def grad_fn(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * d_inner),)

    return _result(out.astype(x.dtype), (x,), grad_fn, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    out = np.exp(-np.logaddexp(0.0, -x.data)).astype(x.dtype)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), grad_fn, "sigmoid")


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)

    def grad_fn(g):
        return (g / (2.0 * out),)

    return _result(out, (x,), grad_fn, "sqrt")


def softmax(x: Tensor, axis: int = -1, where: Optional[np.ndarray] = None) -> Tensor:
    """
    Softmax along ``axis``. Positions where ``where`` is False get exactly zero
    weight; a slice without any allowed position is an error.
    """
    z = x.data
    if where is not None:
        where = np.broadcast_to(where, z.shape)
        if not np.all(where.any(axis=axis)):
            raise MaskError("Softmax over a fully masked slice.", field="mask")
        z = np.where(where, z, -np.inf)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), grad_fn, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize every row (last axis) to zero mean / unit variance, then scale and shift."""
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm parameters must have shape ({x.shape[-1]},).")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    # constant rows normalize to exactly 0
    centered *= np.ptp(x.data, axis=-1, keepdims=True) != 0
    inv = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def grad_fn(g):
        gxhat = g * gamma.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gamma, beta), grad_fn, "layer_norm")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def conv1d(x: Tensor, kernels: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """
    Stride-1, same-padded convolution over time.

    :param x: ``(..., T, D)``
    :param kernels: ``(K, D, C)`` with odd ``K``
    :param bias: ``(C,)``
    :return: ``(..., T, C)``; output frame t sees input frames within K // 2 of t
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 3:
        raise ShapeError(f"conv1d kernels must be K x D x C, got {kernels.shape}.")
    k, d, c = kernels.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d needs an odd kernel size for same padding, got {k}.")
    if x.ndim < 2 or x.shape[-1] != d:
        raise ShapeError(f"conv1d input {x.shape} does not match kernel input dim {d}.")
    t = x.shape[-2]
    pad = k // 2
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    padded = np.pad(x.data, widths)
    cols = np.stack([padded[..., i : i + t, :] for i in range(k)], axis=-2)
    flat = cols.reshape(x.shape[:-2] + (t, k * d))
    w2 = kernels.data.reshape(k * d, c)
    out = flat @ w2

    def grad_fn(g):
        gx = gw = None
        if x.requires_grad:
            gcols = (g @ w2.T).reshape(x.shape[:-2] + (t, k, d))
            gpad = np.zeros_like(padded)
            for i in range(k):
                gpad[..., i : i + t, :] += gcols[..., :, i, :]
            gx = gpad[..., pad : pad + t, :]
        if kernels.requires_grad:
            gw = (flat.reshape(-1, k * d).T @ g.reshape(-1, c)).reshape(k, d, c)
        return gx, gw

    result = _result(out, (x, kernels), grad_fn, "conv1d")
    return result if bias is None else add(result, bias)


def dropout(x: Tensor, rate: float, train: bool, key: Sequence[int] = (0,)) -> Tensor:
    """
    Inverted dropout. Identity in eval mode; in train mode the mask is a pure
    function of ``key`` (seed, op instance, step).
    """
    if not train or rate <= 0.0:
        return x
    keep = np.random.default_rng([int(k) for k in key]).random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    factor = keep * scale

    def grad_fn(g):
        return (g * factor,)

    return _result((x.data * factor).astype(x.dtype), (x,), grad_fn, "dropout")


def positional_encoding(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    position = np.arange(length)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(position * rates)
    pe[:, 1::2] = np.cos(position * rates[: dim // 2])
    return pe.astype(dtype)


def masked_mean_pool(x: Tensor, mask: np.ndarray) -> Tensor:
    """Average ``x`` (``..., T, D``) over the frames where ``mask`` (``..., T``) is True."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise ShapeError(f"Mask of shape {mask.shape} does not match frames {x.shape[:-1]}.")
    counts = mask.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise MaskError("Cannot pool a sequence whose frames are all masked.", field="mask")
    weights = (mask / counts).astype(x.dtype)[..., None]
    return tsum(mul(x, weights), axis=-2)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    lead, (t, d) = x.shape[:-2], x.shape[-2:]
    n = len(lead)
    x = reshape(x, lead + (t, heads, d // heads))
    return transpose(x, tuple(range(n)) + (n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    lead, (h, t, dh) = x.shape[:-3], x.shape[-3:]
    n = len(lead)
    x = transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return reshape(x, lead + (t, h * dh))


def multi_head_attention(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    heads: int,
    params: Mapping[str, Tensor],
    key_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Scaled dot-product attention with ``heads`` heads.

    ``params`` holds the projections ``wq, bq, wk, bk, wv, bv, wo, bo``.
    ``key_mask`` (``..., Tk``, True = attend) removes keys from every query's
    softmax, so masked keys get exactly zero weight.
    """
    d = query.shape[-1]
    if heads < 1 or d % heads:
        raise ShapeError(f"Model dim {d} is not divisible by {heads} heads.", field="num_heads")
    if key.shape[-2] != value.shape[-2]:
        raise ShapeError(f"Key/value length mismatch: {key.shape} vs {value.shape}.")
    where = None
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape[-1] != key.shape[-2]:
            raise ShapeError(
                f"Key mask length {key_mask.shape[-1]} does not match {key.shape[-2]} keys.",
                field="mask",
            )
        if not np.all(key_mask.any(axis=-1)):
            raise MaskError("All keys are masked for some query.", field="mask")
        where = key_mask[..., None, None, :]
    q = _split_heads(linear(query, params["wq"], params["bq"]), heads)
    k = _split_heads(linear(key, params["wk"], params["bk"]), heads)
    v = _split_heads(linear(value, params["wv"], params["bv"]), heads)
    scale = np.asarray(1.0 / np.sqrt(d // heads), dtype=q.dtype)
    scores = mul(matmul(q, swap_last(k)), scale)
    weights = softmax(scores, axis=-1, where=where)
    return linear(_merge_heads(matmul(weights, v)), params["wo"], params["bo"])


def _numerical_grad(
    scalar_fn: Callable[[List[np.ndarray]], float], arrays: List[np.ndarray], eps: float
) -> List[np.ndarray]:
    grads = []
    for i, arr in enumerate(arrays):
        grad = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            plus = scalar_fn(arrays)
            arr[idx] = orig - eps
            minus = scalar_fn(arrays)
            arr[idx] = orig
            grad[idx] = (plus - minus) / (2 * eps)
        grads.append(grad)
    return grads


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = GRAD_CHECK_EPS,
    seed: int = 0,
    floor: float = GRAD_CHECK_FLOOR,
) -> float:
    """
    Compare analytic gradients of ``fn`` with central differences.

    Non-scalar outputs are reduced with a fixed random projection. The
    relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``, so
    entries whose gradients are both smaller than ``floor`` are held to an
    absolute tolerance instead. Pass a tiny ``floor`` (e.g. ``1e-8``) for a
    purely relative check.

    :return: maximal relative error over all scalar inputs
    :raises NumericalError: for non-64-bit inputs or non-finite values
    """
    arrays = [np.array(a, copy=True) for a in inputs]
    for arr in arrays:
        if arr.dtype != np.float64:
            raise NumericalError(f"grad_check needs 64-bit inputs, got {arr.dtype}.")
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = as_tensor(fn(*leaves))
    projection = np.random.default_rng(seed).standard_normal(out.shape)
    tsum(mul(out, Tensor(projection))).backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def scalar_fn(values: List[np.ndarray]) -> float:
        return float((as_tensor(fn(*[Tensor(v) for v in values])).data * projection).sum())

    numeric = _numerical_grad(scalar_fn, arrays, eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    logger.debug("grad_check: max relative error %.3e over %d input(s).", worst, len(arrays))
    return worst
