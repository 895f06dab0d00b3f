"""Minimal dense-tensor reverse-mode autodiff with shared parameter storage.

Everything is a numpy array wrapped in a :class:`Tensor` node.  Ops build
the backward closure inline (when gradients are enabled), so the graph of
one BPTT window is an implicit tape that the garbage collector frees once
the step is done.  Parameters live in a :class:`ParamRegistry`; two slots
may point at the same underlying tensor, which is how layer tying is
realized: forward passes read the shared array and backward passes
accumulate both use sites into the one gradient buffer.

Dropout takes caller-supplied masks so that per-sequence (variational)
masking and deterministic tests need no RNG in here.
"""

from __future__ import annotations

import json
import struct
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from sublm.errors import DataError, NumericError

_GRAD_ENABLED = True
# Finite-value checking after every op; cheap relative to the matmuls.
FINITE_CHECKS = True

# Stand-in for -inf in max masking; keeps arrays finite.
NEG_LARGE = -1e30


@contextmanager
def no_grad():
    """Run ops without recording backward closures."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense array plus the bookkeeping for reverse-mode differentiation."""

    __slots__ = ("data", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, data: np.ndarray, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, name={self.name!r})"


def _check_finite(arr: np.ndarray, op: str) -> None:
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _same_dtype(*tensors: Tensor) -> None:
    dts = {t.dtype for t in tensors}
    if len(dts) > 1:
        raise NumericError(f"mixed dtypes in op: {dts}")


def constant(data, dtype=None) -> Tensor:
    """Wrap raw data as a non-trainable tensor (floats keep their dtype)."""
    arr = np.asarray(data)
    if dtype is None:
        dtype = arr.dtype if arr.dtype.kind == "f" else np.float32
    return Tensor(np.asarray(arr, dtype=dtype))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may be a row vector broadcast over `a`'s rows."""
    _same_dtype(a, b)
    row_bias = b.data.ndim == 1 or (b.data.ndim == 2 and b.shape[0] == 1)
    if a.shape != b.shape and not (row_bias and a.shape[-1] == b.shape[-1]):
        raise NumericError(f"add: incompatible shapes {a.shape} and {b.shape}")
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            gb = g if b.shape == g.shape else g.sum(axis=0).reshape(b.shape)
            b.accumulate_grad(gb)

    return _make(data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; same broadcast rule as :func:`add`."""
    _same_dtype(a, b)
    row = b.data.ndim == 1 or (b.data.ndim == 2 and b.shape[0] == 1)
    if a.shape != b.shape and not (row and a.shape[-1] == b.shape[-1]):
        raise NumericError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            gb = g * a.data
            if b.shape != g.shape:
                gb = gb.sum(axis=0).reshape(b.shape)
            b.accumulate_grad(gb)

    return _make(data, (a, b), backward, "mul")


def add_const(a: Tensor, c) -> Tensor:
    data = a.data + np.asarray(c, dtype=a.dtype)
    if data.shape != a.shape:
        raise NumericError("add_const: constant must broadcast within a's shape")

    def backward(g):
        a.accumulate_grad(g)

    return _make(data, (a,), backward, "add_const")


def mul_const(a: Tensor, c) -> Tensor:
    carr = np.asarray(c, dtype=a.dtype)
    data = a.data * carr
    if data.shape != a.shape:
        raise NumericError("mul_const: constant must broadcast within a's shape")

    def backward(g):
        a.accumulate_grad(g * carr)

    return _make(data, (a,), backward, "mul_const")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise NumericError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _make(data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise NumericError("transpose expects a matrix")

    def backward(g):
        a.accumulate_grad(g.T)

    return _make(a.data.T, (a,), backward, "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        a.accumulate_grad(g.reshape(a.shape))

    return _make(data, (a,), backward, "reshape")


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    _same_dtype(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(sl)])

    return _make(data, tuple(tensors), backward, "concat")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    data = a.data[sl]

    def backward(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        a.accumulate_grad(full)

    return _make(data, (a,), backward, "narrow")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        a.accumulate_grad(g * (a.data > 0))

    return _make(data, (a,), backward, "relu")


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a.accumulate_grad(g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        a.accumulate_grad(g * (1.0 - data * data))

    return _make(data, (a,), backward, "tanh")


def row_gather(a: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of a matrix (embedding lookup); repeats allowed."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.min(initial=0) < 0 or (indices.size and indices.max() >= a.shape[0]):
        raise NumericError("row_gather: index out of range")
    data = a.data[indices]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        a.accumulate_grad(full)

    return _make(data, (a,), backward, "row_gather")


def segment_sum(a: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows sharing a segment id: out[s] = sum of a[i] with seg[i] == s."""
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != a.shape[0]:
        raise NumericError("segment_sum: one segment id per row required")
    data = np.zeros((num_segments,) + a.shape[1:], dtype=a.dtype)
    np.add.at(data, seg, a.data)

    def backward(g):
        a.accumulate_grad(g[seg])

    return _make(data, (a,), backward, "segment_sum")


def segment_max(a: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Columnwise max over rows sharing a segment id.

    Rows meant to be excluded should carry :data:`NEG_LARGE`; every
    segment must contain at least one row.  Gradient flows to the rows
    attaining the max (split on exact ties).
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != a.shape[0]:
        raise NumericError("segment_max: one segment id per row required")
    data = np.full((num_segments,) + a.shape[1:], -np.inf, dtype=a.dtype)
    np.maximum.at(data, seg, a.data)
    if np.any(data == -np.inf):
        raise NumericError("segment_max: empty segment")

    def backward(g):
        # exactly one winner per (segment, column): the first maximal row,
        # so repeated identical windows are not double-counted
        rows, cols = np.nonzero(a.data == data[seg])
        first = np.full(data.shape, a.shape[0], dtype=np.int64)
        np.minimum.at(first, (seg[rows], cols), rows)
        ga = np.zeros_like(a.data)
        s_idx, c_idx = np.nonzero(first < a.shape[0])
        ga[first[s_idx, c_idx], c_idx] = g[s_idx, c_idx]
        a.accumulate_grad(ga)

    return _make(data, (a,), backward, "segment_max")


def max_over_time(a: Tensor) -> Tensor:
    """Max along the last axis of a matrix: [m x t] -> [m]."""
    if a.data.ndim != 2:
        raise NumericError("max_over_time expects a matrix")
    data = a.data.max(axis=1)
    argmax = a.data.argmax(axis=1)  # first winner on ties

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[np.arange(a.shape[0]), argmax] = g
        a.accumulate_grad(ga)

    return _make(data, (a,), backward, "max_over_time")


def dropout(a: Tensor, mask: np.ndarray, rate: float) -> Tensor:
    """Inverted dropout with a caller-supplied binary mask."""
    if not 0.0 <= rate < 1.0:
        raise NumericError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    scale = np.asarray(mask, dtype=a.dtype) / (1.0 - rate)
    if (a.data * scale).shape != a.shape:
        raise NumericError("dropout: mask must broadcast within a's shape")
    return mul_const(a, scale)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable row softmax of a raw array (not differentiated)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(
    logits: Tensor, targets: np.ndarray, reduction: str = "mean"
) -> Tensor:
    """Negative log-likelihood of integer targets under row softmax (nats)."""
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.shape
    if v < 2:
        raise NumericError("softmax needs at least two classes")
    if targets.shape != (n,) or targets.min() < 0 or targets.max() >= v:
        raise NumericError("softmax_cross_entropy: invalid target indices")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    nll = logsumexp - z[np.arange(n), targets]
    if reduction == "mean":
        data = np.asarray(nll.mean(), dtype=logits.dtype)
        scale = 1.0 / n
    elif reduction == "sum":
        data = np.asarray(nll.sum(), dtype=logits.dtype)
        scale = 1.0
    else:
        raise NumericError(f"unknown reduction {reduction!r}")

    def backward(g):
        probs = np.exp(z - logsumexp[:, None])
        probs[np.arange(n), targets] -= 1.0
        logits.accumulate_grad((g * scale) * probs.astype(logits.dtype))

    return _make(data, (logits,), backward, "softmax_cross_entropy")


def backward(loss: Tensor, seed: float = 1.0) -> None:
    """Reverse pass from a scalar loss; accumulates into leaf gradients."""
    if loss.data.size != 1:
        raise NumericError("backward expects a scalar loss")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.accumulate_grad(np.full_like(loss.data, seed))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node is not loss:
                node.grad = None  # free intermediate buffers eagerly


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


class ParamSlot:
    """A named view onto a (possibly shared) trainable tensor."""

    __slots__ = ("name", "storage_id", "tensor")

    def __init__(self, name: str, storage_id: str, tensor: Tensor):
        self.name = name
        self.storage_id = storage_id
        self.tensor = tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape


class ParamRegistry:
    """Ordered collection of parameter slots with explicit storage sharing."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.slots: dict[str, ParamSlot] = {}
        self.version = 0  # bumped on every parameter update

    def add(self, name: str, shape: tuple[int, ...]) -> ParamSlot:
        if name in self.slots:
            raise DataError(f"duplicate parameter name {name!r}")
        t = Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True, name=name)
        slot = ParamSlot(name, storage_id=name, tensor=t)
        self.slots[name] = slot
        return slot

    def rebind(self, name: str, source: str) -> None:
        """Point slot `name` at the storage behind slot `source`."""
        src = self.slots[source]
        dst = self.slots[name]
        if dst.tensor.shape != src.tensor.shape:
            raise DataError(
                f"cannot tie {name} {dst.tensor.shape} to {source} {src.tensor.shape}"
            )
        dst.tensor = src.tensor
        dst.storage_id = src.storage_id

    def __getitem__(self, name: str) -> ParamSlot:
        return self.slots[name]

    def __contains__(self, name: str) -> bool:
        return name in self.slots

    def unique_storages(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for slot in self.slots.values():
            out.setdefault(slot.storage_id, slot.tensor)
        return out

    def total_param_count(self) -> int:
        return sum(s.tensor.data.size for s in self.slots.values())

    def unique_param_count(self) -> int:
        return sum(t.data.size for t in self.unique_storages().values())

    def zero_grad(self) -> None:
        for t in self.unique_storages().values():
            t.zero_grad()


def clip_global_norm(
    registry: ParamRegistry, max_norm: float, batch_size: int
) -> float:
    """Normalize gradients by batch size, then clip their global L2 norm.

    Returns the clip factor that was applied (1.0 when under the limit).
    """
    storages = [t for t in registry.unique_storages().values() if t.grad is not None]
    sq = 0.0
    for t in storages:
        t.grad /= batch_size
        sq += float(np.sum(t.grad.astype(np.float64) ** 2))
    norm = np.sqrt(sq)
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm")
    scale = 1.0 if norm <= max_norm else max_norm / norm
    if scale != 1.0:
        for t in storages:
            t.grad *= scale
    return scale


def sgd_step(registry: ParamRegistry, lr: float) -> None:
    """p <- p - lr * grad per unique storage; gradients zeroed afterwards."""
    for t in registry.unique_storages().values():
        if t.grad is not None:
            t.data -= np.asarray(lr, dtype=t.dtype) * t.grad
            t.grad[...] = 0.0
    registry.version += 1


def gradient_check(build_loss, registry: ParamRegistry, h: float = 1e-5) -> float:
    """Worst relative error of backprop vs central finite differences.

    `build_loss` must be a deterministic scalar-valued closure over the
    registry's current values.  Use a float64 registry; float32 has too
    little headroom for h=1e-5.  The error denominator is floored at 1e-3
    so coordinates whose true gradient is zero do not divide by zero.
    """
    registry.zero_grad()
    loss = build_loss()
    backward(loss)
    worst = 0.0
    for tensor in registry.unique_storages().values():
        analytic = (
            tensor.grad.reshape(-1).copy()
            if tensor.grad is not None
            else np.zeros(tensor.data.size)
        )
        flat = tensor.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            registry.version += 1  # invalidate frozen caches keyed on version
            with no_grad():
                fp = build_loss().item()
            flat[i] = orig - h
            registry.version += 1
            with no_grad():
                fm = build_loss().item()
            flat[i] = orig
            registry.version += 1
            numeric = (fp - fm) / (2.0 * h)
            err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-3)
            worst = max(worst, err)
    registry.zero_grad()
    return worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"SUBLM1\n"


def save_checkpoint(path: str | Path, registry: ParamRegistry, config: dict) -> None:
    """Binary checkpoint: JSON header + raw little-endian float32 storages."""
    storages = registry.unique_storages()
    header = {
        "format_version": 1,
        "config": config,
        "slots": [
            {"name": s.name, "storage": s.storage_id, "shape": list(s.shape)}
            for s in registry.slots.values()
        ],
        "storages": [
            {"id": sid, "shape": list(t.shape)} for sid, t in storages.items()
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for t in storages.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path, dtype=np.float32) -> tuple[ParamRegistry, dict]:
    """Rebuild a registry (tying map included) from a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise DataError(f"not a checkpoint file: {path}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != 1:
            raise DataError(f"unsupported checkpoint version in {path}")
        registry = ParamRegistry(dtype=dtype)
        storage_slot: dict[str, str] = {}
        for rec in header["slots"]:
            if rec["storage"] not in storage_slot:
                slot = registry.add(rec["name"], tuple(rec["shape"]))
                slot.storage_id = rec["storage"]
                storage_slot[rec["storage"]] = rec["name"]
            else:
                registry.add(rec["name"], tuple(rec["shape"]))
                registry.rebind(rec["name"], storage_slot[rec["storage"]])
                registry.slots[rec["name"]].storage_id = rec["storage"]
        for rec in header["storages"]:
            shape = tuple(rec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            tensor = registry.slots[storage_slot[rec["id"]]].tensor
            if tensor.shape != shape:
                raise DataError(f"storage {rec['id']} shape mismatch in {path}")
            tensor.data[...] = raw.astype(dtype)
    return registry, header["config"]


def restore_checkpoint(path: str | Path, registry: ParamRegistry) -> dict:
    """Copy checkpoint values into an existing registry.

    The registry must have the same slot names, shapes and tying map
    (storage grouping) as the one that was saved; mismatches are data
    errors.  Returns the stored config echo.
    """
    loaded, config = load_checkpoint(path, dtype=registry.dtype)
    if list(loaded.slots) != list(registry.slots):
        raise DataError(f"checkpoint {path} slot names do not match the model")
    for name, slot in registry.slots.items():
        other = loaded.slots[name]
        if slot.shape != other.shape:
            raise DataError(f"checkpoint {path}: shape mismatch for {name}")
        if slot.storage_id != other.storage_id:
            raise DataError(f"checkpoint {path}: tying map mismatch at {name}")
    for sid, tensor in registry.unique_storages().items():
        tensor.data[...] = loaded.unique_storages()[sid].data
    registry.version += 1
    return config
