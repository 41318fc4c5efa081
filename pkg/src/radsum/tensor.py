"""Dense float64 tensors with reverse-mode differentiation.

Small by design: a Tensor wraps a numpy float64 array and remembers how it
was produced, ``backward`` walks the graph in reverse topological order, and
``grad_check`` verifies any scalar-valued tensor function against central
finite differences. All randomness flows through ``Rng``, a splittable
counter-based generator (Philox), so every initialization and dropout mask
is reproducible from a seed.
"""

from __future__ import annotations

import hashlib
import struct
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import RadsumError

RMS_EPS = 1e-6


class ShapeMismatch(RadsumError):
    pass


class NotScalar(RadsumError):
    pass


# ---------------------------------------------------------------------------
# Random numbers


class Rng:
    """Deterministic, splittable random source.

    Child streams are derived by hashing the parent key with a label, so
    ``rng.split("init")`` is independent of ``rng.split("dropout")`` and both
    are fixed by the root seed alone.
    """

    algorithm = "philox4x64"

    def __init__(self, seed: int, _key: int | None = None):
        self.seed = int(seed)
        self.key = _key if _key is not None else _derive_key(f"seed:{self.seed}")
        self._gen = np.random.Generator(np.random.Philox(key=self.key))

    def split(self, label: str) -> "Rng":
        return Rng(self.seed, _key=_derive_key(f"{self.key:x}:{label}"))

    def normal(self, shape: Sequence[int] | int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape)

    def uniform(self, shape: Sequence[int] | int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def random(self, shape: Sequence[int] | int) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def _derive_key(material: str) -> int:
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


# ---------------------------------------------------------------------------
# Tensor and graph machinery

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction, e.g. during generation."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars and arrays are wrapped as constants.
    def __add__(self, other) -> "Tensor":
        return add(self, _as_tensor(other))

    def __radd__(self, other) -> "Tensor":
        return add(_as_tensor(other), self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, _as_tensor(other))

    def __rmul__(self, other) -> "Tensor":
        return mul(_as_tensor(other), self)

    def __neg__(self) -> "Tensor":
        return mul(self, _as_tensor(-1.0))

    def __sub__(self, other) -> "Tensor":
        return add(self, -_as_tensor(other))

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, _as_tensor(other))

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def transpose(self, axes: Sequence[int] | None = None) -> "Tensor":
        return transpose(self, axes)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return reshape(self, shape)

    def backward(self) -> None:
        """Populate grads of every requires_grad ancestor of this scalar.

        Repeated calls without zeroing accumulate, matching gradient
        accumulation across micro-batches.
        """
        if self.data.size != 1:
            raise NotScalar(f"backward needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = grad.copy()
                else:
                    node.grad += grad
            if node._backward_fn is None:
                continue
            for parent, parent_grad in node._backward_fn(grad):
                if not (parent.requires_grad or parent._backward_fn is not None):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] += parent_grad
                else:
                    grads[key] = parent_grad


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward_fn is not None for p in parents):
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Kernels


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _make(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ((a, ga), (b, gb))

    return _make(data, (a, b), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis; rows sum to 1."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    data = exp / exp.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        return ((x, data * (g - inner)),)

    return _make(data, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - log_z

    def backward(g):
        probs = np.exp(data)
        return ((x, g - probs * g.sum(axis=-1, keepdims=True)),)

    return _make(data, (x,), backward)


def rms_norm(x: Tensor) -> Tensor:
    """x / sqrt(mean(x^2, last axis) + eps) with eps fixed at 1e-6."""
    d = x.data.shape[-1]
    mean_sq = (x.data ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(mean_sq + RMS_EPS)
    data = x.data * inv

    def backward(g):
        dot = (g * x.data).sum(axis=-1, keepdims=True)
        return ((x, inv * g - (inv ** 3 / d) * x.data * dot),)

    return _make(data, (x,), backward)


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x), the gate activation of SwiGLU blocks."""
    sig = _sigmoid(x.data)
    data = x.data * sig

    def backward(g):
        return ((x, g * sig * (1.0 + x.data * (1.0 - sig))),)

    return _make(data, (x,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; gradient scatter-adds."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeMismatch(f"embedding ids out of range for table {table.shape}")
    data = table.data[idx]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return ((table, gt),)

    return _make(data, (table,), backward)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.data.ndim)))
    data = np.transpose(x.data, perm)
    inverse = np.argsort(perm)

    def backward(g):
        return ((x, np.transpose(g, inverse)),)

    return _make(data, (x,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(tensors)
    data = np.concatenate([t.data for t in parts], axis=axis)
    sizes = [t.data.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for t, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            grads.append((t, g[tuple(index)]))
        return tuple(grads)

    return _make(data, parts, backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; gradient pads with zeros."""
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = x.data[index]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return ((x, gx),)

    return _make(data, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    data = x.data.reshape(tuple(shape))

    def backward(g):
        return ((x, g.reshape(x.data.shape)),)

    return _make(data, (x,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum())

    def backward(g):
        return ((x, np.broadcast_to(g, x.data.shape).copy()),)

    return _make(data, (x,), backward)


def gather_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Pick x[i, indices[i]] from a 2-D tensor, one element per row."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"gather_rows needs a 2-D tensor, got {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape != (x.data.shape[0],):
        raise ShapeMismatch(f"gather_rows needs one index per row: {x.shape} vs {idx.shape}")
    rows = np.arange(x.data.shape[0])
    data = x.data[rows, idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, idx), g)
        return ((x, gx),)

    return _make(data, (x,), backward)


# ---------------------------------------------------------------------------
# Initialization, gradient checking, checkpoints


def seeded_init(shape: Sequence[int], dist: tuple, rng: Rng, requires_grad: bool = False) -> Tensor:
    """Draw a tensor from ("zeros",), ("normal", mean, std) or ("uniform", a, b)."""
    kind = dist[0]
    if kind == "zeros":
        data = np.zeros(tuple(shape))
    elif kind == "normal":
        data = rng.normal(tuple(shape), mean=dist[1], std=dist[2])
    elif kind == "uniform":
        data = rng.uniform(tuple(shape), low=dist[1], high=dist[2])
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    return Tensor(data, requires_grad=requires_grad)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4) -> float:
    """Max relative error between backward() and central finite differences.

    The relative error per coordinate uses denominator max(|analytic|,
    |numeric|, 1e-8). ``f`` must be a deterministic scalar-valued function
    that does not mutate its argument.
    """
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    numeric_flat = numeric.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        f_plus = f(x).item()
        flat[i] = original - eps
        f_minus = f(x).item()
        flat[i] = original
        numeric_flat[i] = (f_plus - f_minus) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


CKPT_MAGIC = "ckpt-v1"

# Records under this namespace (stored configs and the like) are not model
# parameters and are excluded from the count declared in the header.
META_PREFIX = "meta."


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Binary checkpoint: header "ckpt-v1 <parameter scalar count>", then records.

    Each record is uint32 name length, the UTF-8 name, uint32 rank, uint32
    dims, and the raw little-endian float64 values in row-major order.
    Records are sorted by name so identical weights always produce identical
    bytes.
    """
    total = sum(int(np.asarray(v).size) for name, v in tensors.items()
                if not name.startswith(META_PREFIX))
    with open(path, "wb") as fh:
        fh.write(f"{CKPT_MAGIC} {total}\n".encode("ascii"))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(np.asarray(tensors[name], dtype=np.float64))
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 2 or header[0] != CKPT_MAGIC:
            raise RadsumError(f"{path}: not a {CKPT_MAGIC} checkpoint")
        declared = int(header[1])
        tensors: dict[str, np.ndarray] = {}
        total = 0
        while True:
            raw = fh.read(4)
            if not raw:
                break
            (name_len,) = struct.unpack("<I", raw)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims)
            tensors[name] = data.astype(np.float64)
            if not name.startswith(META_PREFIX):
                total += count
        if total != declared:
            raise RadsumError(f"{path}: header declares {declared} values, found {total}")
    return tensors
