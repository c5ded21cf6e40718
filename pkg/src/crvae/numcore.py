"""Dense float64 tensors with a define-by-run reverse-mode tape.

A :class:`Tape` is created per minibatch. Parameters stay plain ``numpy``
arrays; they enter a graph through :meth:`Tape.leaf` and every operation on a
tracked :class:`Tensor` appends a node holding its backward rule. Tensors that
carry no tape are constants.

Random numbers come from :class:`Rng`, a Philox-4x64 counter generator whose
raw 64-bit words are turned into doubles and Gaussians by the fixed transforms
documented on the class, so draws do not depend on numpy's higher-level
sampling routines.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An elementwise function was evaluated outside its domain."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes that were broadcast to produce `grad` from `shape`
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


@dataclass
class _Node:
    kind: str
    parents: tuple
    backward: Callable | None


@dataclass
class Tape:
    """Ordered record of operations; parents always precede children."""

    nodes: list = field(default_factory=list)
    grads: list | None = None
    consumed: bool = False

    def _push(self, kind, parents, backward) -> int:
        self.nodes.append(_Node(kind, tuple(parents), backward))
        return len(self.nodes) - 1

    def leaf(self, value, name: str | None = None) -> "Tensor":
        data = np.array(value, dtype=DTYPE)
        t = Tensor(data, tape=self, index=self._push("leaf", (), None))
        t.name = name
        return t

    def backward(self, loss: "Tensor") -> None:
        if loss.tape is not self:
            raise ContractError("loss is not recorded on this tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise ContractError("backward() already ran on this tape; record a new one")
        grads: list = [None] * len(self.nodes)
        grads[loss.index] = np.ones_like(loss.data)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.backward is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if parent is None or pg is None:
                    continue
                if grads[parent] is None:
                    grads[parent] = pg
                else:
                    grads[parent] = grads[parent] + pg
            # interior gradients are never read back; closures hold cycles back to the tape
            grads[i] = None
            node.backward = None
        self.grads = grads
        self.consumed = True

    def grad(self, t: "Tensor") -> np.ndarray:
        """Gradient of the last backward() loss w.r.t. ``t`` (zeros if unreachable)."""
        if self.grads is None:
            raise ContractError("backward() has not been run")
        g = self.grads[t.index]
        return np.zeros_like(t.data) if g is None else g


class Tensor:
    __slots__ = ("data", "tape", "index", "name")

    def __init__(self, data, tape: Tape | None = None, index: int | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.tape = tape
        self.index = index
        self.name = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        tracked = "tracked" if self.tape is not None else "const"
        return f"Tensor(shape={self.shape}, {tracked})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(kind: str, out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("operands recorded on different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(out)
    parents = [t.index if t.tape is not None else None for t in inputs]
    return Tensor(out, tape=tape, index=tape._push(kind, parents, backward))


def _check_finite(out: np.ndarray, kind: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise DomainError(f"{kind} produced a non-finite value")
    return out


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules; dA = dC·Bᵀ, dB = Aᵀ·dC."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs a matrix right operand, got {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record("matmul", out, (a, b), backward)


# -- elementwise --------------------------------------------------------------


def _binary(kind, a, b, fn, ga_fn, gb_fn):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = fn(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"{kind}: {exc}") from None
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(ga_fn(g, ad, bd), ad.shape),
                _unbroadcast(gb_fn(g, ad, bd), bd.shape))

    return _record(kind, out, (a, b), backward)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = _check_finite(np.exp(a.data), "exp")
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    x = a.data
    return _record("log", np.log(x), (a,), lambda g: (g / x,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _record("square", x * x, (a,), lambda g: (2.0 * g * x,))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log, "square": square}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch by name: tanh, sigmoid, exp, log, square (unary); add, sub, mul (binary)."""
    if kind in _UNARY:
        if len(operands) != 1:
            raise ContractError(f"{kind} takes one operand")
        return _UNARY[kind](operands[0])
    if kind in _BINARY:
        if len(operands) != 2:
            raise ContractError(f"{kind} takes two operands")
        a, b = (as_tensor(o) for o in operands)
        if a.shape != b.shape:
            raise DimensionError(f"{kind}: operand shapes differ {a.shape} vs {b.shape}")
        return _BINARY[kind](a, b)
    raise ContractError(f"unknown elementwise kind {kind!r}")


# -- reductions and shape ops -------------------------------------------------


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take(a, key) -> Tensor:
    """Basic/fancy indexing; the gradient scatters back with ``np.add.at``."""
    a = as_tensor(a)
    shape = a.shape
    out = a.data[key]

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, key, g)
        return (full,)

    return _record("take", np.array(out, dtype=DTYPE), (a,), backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _record("stack", out, ts, backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", out, ts, backward)


def detach(a) -> Tensor:
    return Tensor(as_tensor(a).data.copy())


# -- fused recurrent cells ----------------------------------------------------


def gru_cell(x, h, w_in, w_h, b_in, b_h) -> Tensor:
    """One GRU step, gates stacked as [reset, update, candidate] on the last axis.

    Shapes follow numpy batching, so a leading head axis on the weights runs
    every head in a single call::

        x: (..., B, In)  h: (..., B, H)  w_in: (..., In, 3H)  w_h: (..., H, 3H)

    r = σ(x·W_ir + b_ir + h·W_hr + b_hr)
    u = σ(x·W_iu + b_iu + h·W_hu + b_hu)
    n = tanh(x·W_in + b_in + r ⊙ (h·W_hn + b_hn))
    h' = (1 − u) ⊙ n + u ⊙ h
    """
    x, h, w_in, w_h, b_in, b_h = (as_tensor(t) for t in (x, h, w_in, w_h, b_in, b_h))
    H = h.shape[-1]
    if w_in.shape[-1] != 3 * H or w_h.shape[-2:] != (H, 3 * H):
        raise DimensionError(f"gru weights {w_in.shape}, {w_h.shape} do not match hidden {H}")
    if x.shape[-1] != w_in.shape[-2]:
        raise DimensionError(f"gru input width {x.shape[-1]} != {w_in.shape[-2]}")
    xd, hd, wi, wh = x.data, h.data, w_in.data, w_h.data
    gi = xd @ wi + b_in.data
    gh = hd @ wh + b_h.data
    ru = _sigmoid(gi[..., :2 * H] + gh[..., :2 * H])
    r, u = ru[..., :H], ru[..., H:]
    ghn = gh[..., 2 * H:]
    n = np.tanh(gi[..., 2 * H:] + r * ghn)
    out = n + u * (hd - n)

    def backward(g):
        dn = g * (1.0 - u)
        du = g * (hd - n)
        dan = dn * (1.0 - n * n)
        dar = dan * ghn * r * (1.0 - r)
        dau = du * u * (1.0 - u)
        dgi = np.concatenate([dar, dau, dan], axis=-1)
        dgh = np.concatenate([dar, dau, dan * r], axis=-1)
        dx = dgi @ np.swapaxes(wi, -1, -2)
        dh = g * u + dgh @ np.swapaxes(wh, -1, -2)
        dwi = np.swapaxes(xd, -1, -2) @ dgi
        dwh = np.swapaxes(hd, -1, -2) @ dgh
        return (_unbroadcast(dx, xd.shape), _unbroadcast(dh, hd.shape),
                _unbroadcast(dwi, wi.shape), _unbroadcast(dwh, wh.shape),
                _unbroadcast(dgi, b_in.shape), _unbroadcast(dgh, b_h.shape))

    return _record("gru_cell", out, (x, h, w_in, w_h, b_in, b_h), backward)


def rnn_cell(x, h, w_in, w_h, b_in, b_h) -> Tensor:
    """Vanilla tanh step: h' = tanh(x·W_in + h·W_h + b_in + b_h)."""
    x, h, w_in, w_h, b_in, b_h = (as_tensor(t) for t in (x, h, w_in, w_h, b_in, b_h))
    if x.shape[-1] != w_in.shape[-2] or h.shape[-1] != w_h.shape[-2]:
        raise DimensionError("rnn_cell operand widths do not match weights")
    xd, hd, wi, wh = x.data, h.data, w_in.data, w_h.data
    out = np.tanh(xd @ wi + hd @ wh + b_in.data + b_h.data)

    def backward(g):
        da = g * (1.0 - out * out)
        return (_unbroadcast(da @ np.swapaxes(wi, -1, -2), xd.shape),
                _unbroadcast(da @ np.swapaxes(wh, -1, -2), hd.shape),
                _unbroadcast(np.swapaxes(xd, -1, -2) @ da, wi.shape),
                _unbroadcast(np.swapaxes(hd, -1, -2) @ da, wh.shape),
                _unbroadcast(da, b_in.shape), _unbroadcast(da, b_h.shape))

    return _record("rnn_cell", out, (x, h, w_in, w_h, b_in, b_h), backward)


# -- gradient checking ----------------------------------------------------------


def backward(tape: Tape, loss: Tensor, leaves: Sequence[Tensor]) -> list:
    """Run reverse mode and return the gradient of every tensor in ``leaves``."""
    tape.backward(loss)
    return [tape.grad(t) for t in leaves]


def check_gradient(f: Callable, params: Sequence[np.ndarray], epsilon: float = 1e-5) -> float:
    """Largest |analytic − central difference| / max(1, |analytic|) over all coordinates.

    ``f`` receives one tracked Tensor per array in ``params`` and returns a
    scalar Tensor. NaN anywhere counts as an infinite error.
    """
    if not 0 < epsilon <= 1e-2:
        raise ContractError("epsilon must lie in (0, 1e-2]")
    params = [np.array(p, dtype=DTYPE) for p in params]
    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    out = as_tensor(f(*leaves))
    if out.tape is None:
        analytic = [np.zeros_like(p) for p in params]
    else:
        analytic = backward(tape, out, leaves)

    def value(arrays):
        return as_tensor(f(*[Tensor(a) for a in arrays])).item()

    worst = 0.0
    for k, p in enumerate(params):
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = value(params)
            flat[i] = orig - epsilon
            lo = value(params)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * epsilon)
            a = analytic[k].reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a))
            if not math.isfinite(err):
                return math.inf
            worst = max(worst, err)
    return worst


# -- random numbers -------------------------------------------------------------------


class Rng:
    """Seeded counter-based generator.

    Algorithm: ``numpy.random.Philox`` (Philox-4x64-10) keyed by
    ``SeedSequence(seed, spawn_key=stream)``. Uniforms are ``(w >> 11) · 2⁻⁵³``
    for each raw 64-bit word ``w``; Gaussians use Box–Muller on consecutive
    uniform pairs, ``sqrt(−2 ln(1 − u₁)) · cos(2π u₂)``, one normal per pair.
    Named child streams are keyed by the CRC-32 of their name so components
    can draw independently of each other.
    """

    def __init__(self, seed: int, stream: tuple = ()):
        self.seed = int(seed)
        self.stream = tuple(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self._bits = np.random.Philox(ss)

    def child(self, name: str) -> "Rng":
        return Rng(self.seed, self.stream + (zlib.crc32(name.encode()),))

    def uniform(self, shape=()) -> np.ndarray:
        n = int(np.prod(shape)) if shape != () else 1
        raw = self._bits.random_raw(n)
        u = (raw >> np.uint64(11)).astype(DTYPE) * (1.0 / 9007199254740992.0)
        return u.reshape(shape) if shape != () else u[0]

    def normal(self, shape=()) -> np.ndarray:
        n = int(np.prod(shape)) if shape != () else 1
        u = self.uniform((2 * n,))
        z = np.sqrt(-2.0 * np.log1p(-u[0::2])) * np.cos(2.0 * np.pi * u[1::2])
        return z.reshape(shape) if shape != () else z[0]

    def integers(self, high: int, size: int) -> np.ndarray:
        """``size`` draws from {0, …, high − 1}."""
        return np.minimum((self.uniform((size,)) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates over the uniform stream
        idx = np.arange(n)
        u = self.uniform((max(n - 1, 0),))
        for i in range(n - 1, 0, -1):
            j = min(int(u[n - 1 - i] * (i + 1)), i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
