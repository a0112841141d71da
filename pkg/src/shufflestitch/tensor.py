"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

The tape is define-by-run and rebuilt for every forward pass: ops record a
backward rule referencing their parents' node ids, and ``Tape.backward``
replays those rules in reverse topological order (which is simply the
recording order). Tensors without a node id are constants; they receive no
gradient and contribute no tape edges.

Broadcasting follows numpy's trailing-dimension rules and nothing fancier.
Everything is float64 end to end.
"""

import numpy as np

from . import _kernels
from .errors import ContractError, NumericError, ShapeError


class Tensor:
    """Dense float64 array, optionally tracked on a gradient tape.

    Attributes:
        values: row-major numpy buffer.
        tape: the Tape this tensor is recorded on, or None for constants.
        node_id: handle into the tape, or None for constants.
    """

    __slots__ = ("values", "tape", "node_id")

    def __init__(self, values, tape=None, node_id=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def __repr__(self):
        tracked = f"node={self.node_id}" if self.node_id is not None else "const"
        return f"Tensor(shape={self.values.shape}, {tracked})"


class Parameter:
    """A named, persistent learnable buffer.

    Parameters outlive any single tape. ``bind`` registers the buffer as a
    leaf on the given tape, memoized so repeated use inside one forward pass
    maps to a single node.
    """

    __slots__ = ("name", "values", "_bound_tape", "_bound_tensor")

    def __init__(self, name: str, values):
        self.name = name
        self.values = np.asarray(values, dtype=np.float64)
        self._bound_tape = None
        self._bound_tensor = None

    def bind(self, tape: "Tape") -> Tensor:
        if self._bound_tape is not tape:
            self._bound_tensor = tape.watch(self.values)
            self._bound_tape = tape
        return self._bound_tensor

    def grad(self, tape: "Tape") -> np.ndarray:
        """Gradient accumulated for this parameter on ``tape`` (zeros if unused)."""
        if self._bound_tape is not tape:
            return np.zeros_like(self.values)
        return tape.grad_of(self._bound_tensor)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.values.shape})"


class Tape:
    """Ordered record of differentiable operations plus gradient buffers.

    Topological order is the recording order: every op's parents were
    recorded (or watched) before it. Gradients accumulate across repeated
    ``backward`` calls; calling backward twice doubles them.
    """

    def __init__(self):
        self._records = []  # (out_id, backward_fn); fn(upstream) -> [(pid, grad)]
        self.gradients = {}  # node_id -> np.ndarray, persists across backward calls
        self._watched = []  # (node_id, shape) of explicitly watched leaves
        self.clamp_events = 0  # reciprocal-guard activations (see layer.shuffle)
        self._next_id = 0

    def _new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def watch(self, values) -> Tensor:
        """Register a leaf whose gradient should be tracked."""
        t = Tensor(values, tape=self, node_id=self._new_id())
        self._watched.append((t.node_id, t.values.shape))
        return t

    def record(self, out_values, backward_fn) -> Tensor:
        out = Tensor(out_values, tape=self, node_id=self._new_id())
        self._records.append((out.node_id, backward_fn))
        return out

    def grad_of(self, t: Tensor) -> np.ndarray:
        if t.node_id is None or t.node_id not in self.gradients:
            return np.zeros(t.values.shape)
        return self.gradients[t.node_id]

    def backward(self, root: Tensor) -> dict:
        """Propagate from a scalar root; returns the node-id -> gradient map.

        The pass computes fresh gradients and then adds them into the
        persistent buffers, so repeated calls accumulate exactly.
        """
        if root.tape is not self or root.node_id is None:
            raise ContractError("backward root is not recorded on this tape")
        if root.values.size != 1:
            raise ContractError(
                f"backward requires a scalar root, got shape {root.values.shape}"
            )
        pass_grads = {root.node_id: np.ones(root.values.shape)}
        for out_id, backward_fn in reversed(self._records):
            upstream = pass_grads.pop(out_id, None)
            if upstream is None:
                continue
            for pid, contrib in backward_fn(upstream):
                acc = pass_grads.get(pid)
                # contributions may alias the upstream buffer; never mutate them
                pass_grads[pid] = contrib if acc is None else acc + contrib
        # the root's record was consumed above; its own gradient is the seed
        pass_grads.setdefault(root.node_id, np.ones(root.values.shape))
        for nid, g in pass_grads.items():
            acc = self.gradients.get(nid)
            if acc is None:
                self.gradients[nid] = np.array(g, dtype=np.float64, copy=True)
            else:
                acc += g
        for nid, shape in self._watched:
            self.gradients.setdefault(nid, np.zeros(shape))
        return self.gradients


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.node_id is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ContractError("operands are recorded on different tapes")
    return tape


def _broadcast_shape(a_shape, b_shape):
    try:
        return np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {a_shape} with {b_shape}") from None


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses trailing-dimension broadcast)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    out_values = a.values + b.values
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out_values)
    a_id, a_shape = a.node_id, a.shape
    b_id, b_shape = b.node_id, b.shape

    def backward_fn(g):
        out = []
        if a_id is not None:
            out.append((a_id, _unbroadcast(g, a_shape)))
        if b_id is not None:
            out.append((b_id, _unbroadcast(g, b_shape)))
        return out

    return tape.record(out_values, backward_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    out_values = a.values - b.values
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out_values)
    a_id, a_shape = a.node_id, a.shape
    b_id, b_shape = b.node_id, b.shape

    def backward_fn(g):
        out = []
        if a_id is not None:
            out.append((a_id, _unbroadcast(g, a_shape)))
        if b_id is not None:
            out.append((b_id, _unbroadcast(-g, b_shape)))
        return out

    return tape.record(out_values, backward_fn)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with trailing-dimension broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    out_values = a.values * b.values
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out_values)
    a_id, a_shape, a_values = a.node_id, a.shape, a.values
    b_id, b_shape, b_values = b.node_id, b.shape, b.values

    def backward_fn(g):
        out = []
        if a_id is not None:
            out.append((a_id, _unbroadcast(g * b_values, a_shape)))
        if b_id is not None:
            out.append((b_id, _unbroadcast(g * a_values, b_shape)))
        return out

    return tape.record(out_values, backward_fn)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out_values = a.values * c
    if a.node_id is None:
        return Tensor(out_values)
    a_id = a.node_id
    return a.tape.record(out_values, lambda g: [(a_id, g * c)])


def detach(a) -> Tensor:
    """Value-identical constant: gradients never propagate through it."""
    a = _as_tensor(a)
    return Tensor(a.values.copy())


# ---------------------------------------------------------------------------
# shape surgery


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out_values = a.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from None
    if a.node_id is None:
        return Tensor(out_values)
    a_id, a_shape = a.node_id, a.shape
    return a.tape.record(out_values, lambda g: [(a_id, g.reshape(a_shape))])


def tslice(a, axis: int, start: int, end: int) -> Tensor:
    """Contiguous slice [start, end) along one axis."""
    a = _as_tensor(a)
    if not 0 <= axis < a.values.ndim:
        raise IndexError(f"axis {axis} out of range for shape {a.shape}")
    dim = a.shape[axis]
    if not (0 <= start <= end <= dim):
        raise IndexError(f"slice [{start}:{end}) out of range for axis of size {dim}")
    index = tuple(slice(None) if i != axis else slice(start, end) for i in range(a.values.ndim))
    out_values = a.values[index]
    if a.node_id is None:
        return Tensor(out_values)
    a_id, a_shape = a.node_id, a.shape

    def backward_fn(g):
        full = np.zeros(a_shape)
        full[index] = g
        return [(a_id, full)]

    return a.tape.record(out_values, backward_fn)


def concat(parts, axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat of zero parts")
    ndim = parts[0].values.ndim
    if not 0 <= axis < ndim:
        raise IndexError(f"axis {axis} out of range for rank {ndim}")
    base = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != ndim or any(
            other[i] != base[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(
                f"concat parts disagree off axis {axis}: {parts[0].shape} vs {p.shape}"
            )
    out_values = np.concatenate([p.values for p in parts], axis=axis)
    tape = _tape_of(*parts)
    if tape is None:
        return Tensor(out_values)
    sizes = [p.shape[axis] for p in parts]
    ids = [p.node_id for p in parts]

    def backward_fn(g):
        out = []
        offset = 0
        for pid, n in zip(ids, sizes):
            if pid is not None:
                index = tuple(
                    slice(None) if i != axis else slice(offset, offset + n)
                    for i in range(ndim)
                )
                out.append((pid, g[index]))
            offset += n
        return out

    return tape.record(out_values, backward_fn)


# ---------------------------------------------------------------------------
# reductions and contractions


def reduce_sum(a, axes=None) -> Tensor:
    """Sum over the given axes (all axes when None), dropping them."""
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(range(a.values.ndim))
    else:
        axes = tuple(sorted(int(ax) for ax in axes))
        for ax in axes:
            if not 0 <= ax < a.values.ndim:
                raise IndexError(f"axis {ax} out of range for shape {a.shape}")
    out_values = a.values.sum(axis=axes)
    if a.node_id is None:
        return Tensor(out_values)
    a_id, a_shape = a.node_id, a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(a_shape))

    def backward_fn(g):
        return [(a_id, np.broadcast_to(g.reshape(kept), a_shape).copy())]

    return a.tape.record(out_values, backward_fn)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy's 1-D promotion semantics."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim not in (1, 2) or b.values.ndim not in (1, 2):
        raise ShapeError("matmul supports 1-D and 2-D operands only")
    a2 = a.values if a.values.ndim == 2 else a.values[None, :]
    b2 = b.values if b.values.ndim == 2 else b.values[:, None]
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out2 = a2 @ b2
    out_values = out2
    if a.values.ndim == 1:
        out_values = out_values[0]
    if b.values.ndim == 1:
        out_values = out_values[..., 0]
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out_values)
    a_id, b_id = a.node_id, b.node_id
    a_vec, b_vec = a.values.ndim == 1, b.values.ndim == 1
    a_saved, b_saved = a2, b2

    def backward_fn(g):
        g2 = g
        if a_vec:
            g2 = g2[None, ...]
        if b_vec:
            g2 = g2[..., None]
        out = []
        if a_id is not None:
            ga = g2 @ b_saved.T
            out.append((a_id, ga[0] if a_vec else ga))
        if b_id is not None:
            gb = a_saved.T @ g2
            out.append((b_id, gb[..., 0] if b_vec else gb))
        return out

    return tape.record(out_values, backward_fn)


# ---------------------------------------------------------------------------
# nonlinearities and losses


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_values = np.maximum(a.values, 0.0)
    if a.node_id is None:
        return Tensor(out_values)
    a_id = a.node_id
    mask = a.values > 0.0
    return a.tape.record(out_values, lambda g: [(a_id, g * mask)])


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer labels.

    ``logits`` is (K,) for one sample or (B, K) for a batch; ``labels`` is a
    plain int or an int array of length B. Returns a scalar tensor.
    """
    logits = _as_tensor(logits)
    if logits.values.ndim == 1:
        rows = logits.values[None, :]
    elif logits.values.ndim == 2:
        rows = logits.values
    else:
        raise ShapeError(f"logits must be 1-D or 2-D, got {logits.shape}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    batch, k = rows.shape
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"label out of range for {k} classes")
    shifted = rows - rows.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1)) + rows.max(axis=1)
    losses = log_z - rows[np.arange(batch), labels]
    out_values = np.asarray(losses.mean())
    if logits.node_id is None:
        return Tensor(out_values)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    grad_rows = probs.copy()
    grad_rows[np.arange(batch), labels] -= 1.0
    grad_rows /= batch
    a_id, a_shape = logits.node_id, logits.shape

    def backward_fn(g):
        return [(a_id, (float(g) * grad_rows).reshape(a_shape))]

    return logits.tape.record(out_values, backward_fn)


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over all elements, as a scalar tensor."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.values - target.values
    out_values = np.asarray((diff * diff).mean())
    tape = _tape_of(pred, target)
    if tape is None:
        return Tensor(out_values)
    n = diff.size
    p_id, t_id = pred.node_id, target.node_id

    def backward_fn(g):
        base = (2.0 / n) * float(g) * diff
        out = []
        if p_id is not None:
            out.append((p_id, base))
        if t_id is not None:
            out.append((t_id, -base))
        return out

    return tape.record(out_values, backward_fn)


def conv1d(x, kernel, bias=None, padding: int = 0) -> Tensor:
    """Temporal convolution, stride 1, explicit symmetric zero padding.

    ``x`` is (T, C_in), ``kernel`` is (K, C_in, C_out), ``bias`` is (C_out,)
    or None. Output is (T + 2*padding - K + 1, C_out). The heavy lifting is
    delegated to the active kernel backend (compiled or numpy).
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    bias = None if bias is None else _as_tensor(bias)
    if x.values.ndim != 2 or kernel.values.ndim != 3:
        raise ShapeError(f"conv1d expects (T,C_in) and (K,C_in,C_out), got {x.shape}, {kernel.shape}")
    t_in, c_in = x.shape
    k, kc_in, c_out = kernel.shape
    if kc_in != c_in:
        raise ShapeError(f"kernel C_in {kc_in} does not match input C_in {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match C_out {c_out}")
    padding = int(padding)
    if padding < 0 or t_in + 2 * padding < k:
        raise ShapeError(f"T={t_in} with padding {padding} shorter than kernel {k}")
    xv = np.ascontiguousarray(x.values)
    wv = np.ascontiguousarray(kernel.values)
    out_values = _kernels.conv1d_forward(xv, wv, padding)
    if bias is not None:
        out_values = out_values + bias.values
    tape = _tape_of(x, kernel) if bias is None else _tape_of(x, kernel, bias)
    if tape is None:
        return Tensor(out_values)
    x_id, k_id = x.node_id, kernel.node_id
    b_id = None if bias is None else bias.node_id

    def backward_fn(g):
        g = np.ascontiguousarray(g)
        out = []
        if x_id is not None:
            out.append((x_id, _kernels.conv1d_backward_input(g, wv, t_in, padding)))
        if k_id is not None:
            out.append((k_id, _kernels.conv1d_backward_kernel(g, xv, k, padding)))
        if b_id is not None:
            out.append((b_id, g.sum(axis=0)))
        return out

    return tape.record(out_values, backward_fn)


def is_finite_scalar(t: Tensor) -> bool:
    return bool(np.isfinite(t.values).all())


def check_finite(t: Tensor, context: str) -> Tensor:
    if not np.isfinite(t.values).all():
        raise NumericError(f"non-finite values in {context}")
    return t
