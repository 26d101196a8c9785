"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

Values are numpy arrays (row-major). float32 is the working precision; pass
float64 arrays (as gradient checking does) and ops preserve it. Integer data
such as token ids stays in plain numpy arrays and never enters the tape.

Contracts enforced here:
  * every forward op checks its output for NaN/Inf and raises NumericsError;
  * a Tape records ops in execution order (a valid topological order) and
    backward walks that list strictly in reverse;
  * backward may run once per tape; a second call raises;
  * leaf gradients are overwritten per backward call, never accumulated
    across tapes.
"""

from __future__ import annotations

import numpy as np

_DEFAULT_DTYPE = np.float32
_FINITE_CHECKS = True
_GRAD_ENABLED = True
_ACTIVE_TAPE = None


class NumericsError(ArithmeticError):
    """A forward value or gradient went NaN/Inf."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported default dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class no_grad:
    """Context manager: ops inside neither record nor propagate requires_grad."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """n-dimensional real-valued array, optionally tracked on the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "node_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.ascontiguousarray(arr, dtype=dtype)
        elif not (isinstance(data, np.ndarray) and arr.dtype in (np.float32, np.float64)):
            arr = np.ascontiguousarray(arr, dtype=_DEFAULT_DTYPE)
        else:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Single-owner op recorder. Use as ``with Tape() as tape: ...``."""

    def __init__(self):
        self._records = []  # (out, inputs, backward_fn), forward order
        self._watched = []
        self._next_id = 0
        self._used = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("another tape is already active; tapes are single-owner")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def watch(self, t: Tensor) -> None:
        """Register a leaf so backward reports its gradient even if unused."""
        if not isinstance(t, Tensor):
            raise TypeError("can only watch Tensors")
        if not any(w is t for w in self._watched):
            self._watched.append(t)
            self._tag(t)

    def _tag(self, t: Tensor) -> None:
        if t.node_id is None:
            t.node_id = self._next_id
            self._next_id += 1

    def _record(self, out: Tensor, inputs, backward_fn) -> None:
        for x in inputs:
            if isinstance(x, Tensor):
                self._tag(x)
        self._tag(out)
        self._records.append((out, inputs, backward_fn))

    def backward(self, loss: Tensor):
        """Reverse sweep from a scalar loss.

        Returns a map {leaf Tensor: gradient ndarray} covering every
        requires_grad leaf that took part plus all watched tensors; also
        assigns each leaf's ``.grad``.
        """
        if self._used:
            raise RuntimeError("backward already ran on this tape; build a new tape")
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ValueError("backward requires a scalar Tensor loss")
        self._used = True

        acc = {id(loss): np.ones_like(loss.data)}
        produced = {id(rec[0]) for rec in self._records}
        leaves = {}
        for out, inputs, backward_fn in reversed(self._records):
            gout = acc.pop(id(out), None)
            if gout is None:
                continue
            for inp, g in zip(inputs, backward_fn(gout)):
                if g is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in acc:
                    acc[key] = acc[key] + g
                else:
                    acc[key] = g
                if key not in produced:
                    leaves[key] = inp

        for t in self._watched:
            leaves.setdefault(id(t), t)
        result = {}
        for key, t in leaves.items():
            g = acc.get(key)
            if g is None:
                g = np.zeros_like(t.data)
            t.grad = g
            result[t] = g
        return result


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _finish(op_name: str, data: np.ndarray, inputs, backward_fn) -> Tensor:
    """Wrap an op result: finiteness check, grad flag, tape recording."""
    if _FINITE_CHECKS and not np.isfinite(data).all():
        raise NumericsError(f"{op_name} produced non-finite values")
    needs = _GRAD_ENABLED and any(isinstance(x, Tensor) and x.requires_grad for x in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs and _ACTIVE_TAPE is not None and not _ACTIVE_TAPE._used:
        _ACTIVE_TAPE._record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def matmul(a, b) -> Tensor:
    """Matrix product; batched when leading dims match (or b is unbatched)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul needs ndim >= 2 operands, got shapes {a.data.shape} x {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.data.shape} x {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def backward_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _finish("matmul", data, (a, b), backward_fn)


def add(a, b) -> Tensor:
    a0 = a if isinstance(a, Tensor) else None
    b0 = b if isinstance(b, Tensor) else None
    a, b = _as_tensor(a, like=b0), _as_tensor(b, like=a0)
    data = a.data + b.data

    def backward_fn(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _finish("add", data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a0 = a if isinstance(a, Tensor) else None
    b0 = b if isinstance(b, Tensor) else None
    a, b = _as_tensor(a, like=b0), _as_tensor(b, like=a0)
    data = a.data - b.data

    def backward_fn(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _finish("sub", data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a0 = a if isinstance(a, Tensor) else None
    b0 = b if isinstance(b, Tensor) else None
    a, b = _as_tensor(a, like=b0), _as_tensor(b, like=a0)
    data = a.data * b.data

    def backward_fn(g):
        ga = _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _finish("mul", data, (a, b), backward_fn)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    data = a.data * a.data.dtype.type(s)

    def backward_fn(g):
        return (g * a.data.dtype.type(s) if a.requires_grad else None,)

    return _finish("scale", data, (a,), backward_fn)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0)

    def backward_fn(g):
        return (g * (a.data > 0) if a.requires_grad else None,)

    return _finish("relu", data, (a,), backward_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def backward_fn(g):
        return (g.reshape(a.data.shape) if a.requires_grad else None,)

    return _finish("reshape", data, (a,), backward_fn)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    data = np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2))

    def backward_fn(g):
        return (np.swapaxes(g, ax1, ax2) if a.requires_grad else None,)

    return _finish("swapaxes", data, (a,), backward_fn)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(dtype=a.data.dtype).reshape(())

    def backward_fn(g):
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype) if a.requires_grad else None,)

    return _finish("sum_all", data, (a,), backward_fn)


def mask_fill(a, allowed: np.ndarray, value: float) -> Tensor:
    """Keep entries where `allowed` is True, set the rest to `value`."""
    a = _as_tensor(a)
    allowed = np.asarray(allowed, dtype=bool)
    data = np.where(allowed, a.data, a.data.dtype.type(value))

    def backward_fn(g):
        return (_unbroadcast(np.where(allowed, g, 0), a.data.shape) if a.requires_grad else None,)

    return _finish("mask_fill", data, (a,), backward_fn)


def softmax(a, axis: int = -1) -> Tensor:
    """Stable softmax: the per-slice max is always subtracted before exp."""
    a = _as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {a.data.shape}")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        if not a.requires_grad:
            return (None,)
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _finish("softmax", y, (a,), backward_fn)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance), then affine."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    d = a.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ValueError(
            f"layer_norm parameter shape mismatch: x trailing dim {d}, "
            f"gamma {gamma.data.shape}, beta {beta.data.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + a.data.dtype.type(eps))
    xhat = (a.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def backward_fn(g):
        ga = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        if a.requires_grad:
            gy = g * gamma.data
            ga = inv * (gy - gy.mean(axis=-1, keepdims=True) - xhat * (gy * xhat).mean(axis=-1, keepdims=True))
        return ga, gg, gb

    return _finish("layer_norm", data, (a, gamma, beta), backward_fn)


def embedding_lookup(table, ids: np.ndarray) -> Tensor:
    """Row gather; backward scatter-adds into the table (duplicates accumulate)."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("embedding ids must be integers")
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise IndexError(f"token id {bad} out of range [0, {vocab})")
    data = table.data[ids]

    def backward_fn(g):
        if not table.requires_grad:
            return (None,)
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _finish("embedding_lookup", data, (table,), backward_fn)


def cross_entropy(logits, targets: np.ndarray, ignore_id: int | None = None) -> Tensor:
    """Mean negative log-softmax over non-ignored positions; 0 if all ignored."""
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy expects [N, V] logits, got {logits.data.shape}")
    n, vocab = logits.data.shape
    if targets.shape != (n,):
        raise ValueError(f"cross_entropy size mismatch: {n} logit rows vs targets {targets.shape}")
    keep = np.ones(n, dtype=bool) if ignore_id is None else targets != ignore_id
    safe = np.where(keep, targets, 0)
    if safe.size and (safe.min() < 0 or safe.max() >= vocab):
        raise IndexError("cross_entropy target id out of range")
    n_keep = int(keep.sum())

    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1)) + m[:, 0]
    nll = lse - logits.data[np.arange(n), safe]
    value = nll[keep].mean() if n_keep else logits.data.dtype.type(0.0)
    data = np.asarray(value, dtype=logits.data.dtype).reshape(())

    def backward_fn(g):
        if not logits.requires_grad:
            return (None,)
        if n_keep == 0:
            return (np.zeros_like(logits.data),)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(n), safe] -= 1.0
        p[~keep] = 0.0
        return (p * (g / n_keep),)

    return _finish("cross_entropy", data, (logits,), backward_fn)


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    `f` maps `x` to a scalar Tensor and must be pure (it is re-evaluated with
    perturbed coordinates). Requires float64 data for usable headroom.
    """
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires a float64 tensor")
    x.requires_grad = True
    with Tape() as tape:
        tape.watch(x)
        analytic = tape.backward(f(x))[x]

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
