"""Dense reverse-mode autodiff on numpy arrays, with nested derivatives.

Every primitive records a node on a :class:`Tape`.  The backward rule of each
primitive is itself written with taped primitives, so a gradient computed with
``create_graph=True`` is an ordinary differentiable :class:`Value`.  That is
what makes the normal-alignment loss (a loss on an input gradient) trainable.

All math is float64.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

_RECORDING = True


@contextmanager
def recording(enabled: bool):
    """Temporarily switch node recording on or off."""
    global _RECORDING
    prev = _RECORDING
    _RECORDING = enabled
    try:
        yield
    finally:
        _RECORDING = prev


class Tape:
    """Ordered list of recorded nodes; creation order is topological order."""

    def __init__(self):
        self.nodes: list[Value] = []

    def var(self, data) -> "Value":
        """Register a differentiable leaf."""
        v = Value(np.array(data, dtype=np.float64))
        v.tape = self
        v.index = len(self.nodes)
        self.nodes.append(v)
        return v

    def __len__(self):
        return len(self.nodes)


class Value:
    __slots__ = ("data", "tape", "index", "parents", "vjp", "_sin", "_cos")
    __array_priority__ = 100.0

    def __init__(self, data):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.tape: Tape | None = None
        self.index: int | None = None
        self.parents: tuple = ()
        self.vjp: Callable | None = None
        self._sin = None
        self._cos = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def requires_grad(self) -> bool:
        return self.index is not None

    def __repr__(self):
        tag = f"node={self.index}" if self.requires_grad else "const"
        return f"Value(shape={self.shape}, {tag})"

    def __len__(self):
        return len(self.data)

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis, keepdims)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: tuple, vjp: Callable) -> Value:
    out = Value(data)
    if not _RECORDING:
        return out
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise ValueError("operands belong to different tapes")
            tape = p.tape
    if tape is None:
        return out
    out.tape = tape
    out.index = len(tape.nodes)
    out.parents = parents
    out.vjp = vjp
    tape.nodes.append(out)
    return out


def _unbroadcast(g: Value, shape: tuple) -> Value:
    if g.shape == shape:
        return g
    nlead = g.ndim - len(shape)
    axes = tuple(range(nlead)) + tuple(
        i + nlead for i, s in enumerate(shape) if s == 1 and g.shape[i + nlead] != 1
    )
    if axes:
        g = vsum(g, axis=axes, keepdims=True)
    if nlead:
        g = reshape(g, shape)
    elif g.shape != shape:
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------- primitives


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)))


def neg(a) -> Value:
    a = as_value(a)
    return _node(-a.data, (a,), lambda g: (neg(g),))


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(mul(g, b), a.shape) if a.requires_grad else None,
                            _unbroadcast(mul(g, a), b.shape) if b.requires_grad else None))


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def vjp(g):
        ga = _unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = (_unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape)
              if b.requires_grad else None)
        return ga, gb

    return _node(a.data / b.data, (a, b), vjp)


def power(a, p: float) -> Value:
    a = as_value(a)
    if p == 2:
        return mul(a, a)
    return _node(a.data ** p, (a,), lambda g: (mul(g, mul(p, power(a, p - 1))),))


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b),
                 lambda g: (matmul(g, transpose(b)) if a.requires_grad else None,
                            matmul(transpose(a), g) if b.requires_grad else None))


def transpose(a) -> Value:
    a = as_value(a)
    return _node(a.data.T, (a,), lambda g: (transpose(g),))


def reshape(a, shape) -> Value:
    a = as_value(a)
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (reshape(g, src),))


def vsum(a, axis=None, keepdims=False) -> Value:
    a = as_value(a)
    src = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else axis
            axes = tuple(ax % len(src) for ax in axes)
            kshape = tuple(1 if i in axes else s for i, s in enumerate(src))
            g = reshape(g, kshape)
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * len(src))
        return (broadcast_to(g, src),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp)


def vmean(a, axis=None, keepdims=False) -> Value:
    a = as_value(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(vsum(a, axis, keepdims), 1.0 / n)


def broadcast_to(a, shape) -> Value:
    a = as_value(a)
    src = a.shape
    return _node(np.broadcast_to(a.data, shape).copy(), (a,),
                 lambda g: (_unbroadcast(g, src),))


def getitem(a, key) -> Value:
    a = as_value(a)
    src = a.shape
    return _node(a.data[key], (a,), lambda g: (scatter(g, key, src),))


def scatter(g, key, shape) -> Value:
    """Adjoint of ``getitem``: zeros of ``shape`` with ``g`` added at ``key``."""
    g = as_value(g)
    out = np.zeros(shape)
    np.add.at(out, key, g.data)
    return _node(out, (g,), lambda h: (getitem(h, key),))


def concatenate(values: Sequence, axis=0) -> Value:
    values = [as_value(v) for v in values]
    sizes = [v.shape[axis] for v in values]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        outs = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            outs.append(getitem(g, tuple(idx)))
        return tuple(outs)

    return _node(np.concatenate([v.data for v in values], axis=axis), tuple(values), vjp)


def _sin_of(a: Value) -> np.ndarray:
    if a._sin is None:
        a._sin = np.sin(a.data)
    return a._sin


def _cos_of(a: Value) -> np.ndarray:
    if a._cos is None:
        a._cos = np.cos(a.data)
    return a._cos


def sin(a) -> Value:
    a = as_value(a)

    def vjp(g):
        return (mul(g, cos(a) if _RECORDING else _cos_of(a)),)

    return _node(_sin_of(a), (a,), vjp)


def cos(a) -> Value:
    a = as_value(a)

    def vjp(g):
        return (neg(mul(g, sin(a) if _RECORDING else _sin_of(a))),)

    return _node(_cos_of(a), (a,), vjp)


def exp(a) -> Value:
    a = as_value(a)
    out = None

    def vjp(g):
        return (mul(g, out),)

    out = _node(np.exp(a.data), (a,), vjp)
    return out


def log(a) -> Value:
    a = as_value(a)
    return _node(np.log(a.data), (a,), lambda g: (div(g, a),))


def sigmoid(a) -> Value:
    a = as_value(a)
    out = None

    def vjp(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _node(_sigmoid(a.data), (a,), vjp)
    return out


def softplus(a) -> Value:
    a = as_value(a)
    return _node(np.logaddexp(0.0, a.data), (a,), lambda g: (mul(g, sigmoid(a)),))


def tanh(a) -> Value:
    a = as_value(a)
    out = None

    def vjp(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = _node(np.tanh(a.data), (a,), vjp)
    return out


def vabs(a) -> Value:
    a = as_value(a)
    sign = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (mul(g, sign),))


def sqrt(a) -> Value:
    a = as_value(a)
    out = None

    def vjp(g):
        return (div(mul(g, 0.5), out),)

    out = _node(np.sqrt(a.data), (a,), vjp)
    return out


def clip(a, lo, hi) -> Value:
    a = as_value(a)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float64)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (mul(g, mask),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------- derivatives


def grad(out: Value, wrt: Sequence[Value], create_graph: bool = False,
         allow_unused: bool = True) -> list[Value]:
    """Reverse sweep from scalar ``out`` to each leaf or node in ``wrt``.

    With ``create_graph`` the returned gradients are recorded on the tape and
    can be differentiated again.  Without it the tape is left untouched.
    """
    if out.size != 1:
        raise ValueError(f"gradient requires a scalar output, got shape {out.shape}")
    if out.tape is None:
        raise ValueError("output is not recorded on any tape")
    tape = out.tape
    top = out.index
    targets = {}
    for w in wrt:
        if w.tape is not tape:
            raise ValueError("wrt value is not on the output's tape")
        targets[w.index] = w

    # only sweep nodes that depend on some target
    relevant = np.zeros(top + 1, dtype=bool)
    lo = min(targets) if targets else top + 1
    for i in range(lo, top + 1):
        if i in targets:
            relevant[i] = True
            continue
        node = tape.nodes[i]
        for p in node.parents:
            if p.index is not None and p.index <= top and relevant[p.index]:
                relevant[i] = True
                break

    found: dict[int, Value] = {}
    cot: dict[int, Value] = {top: Value(np.ones_like(out.data))}
    with recording(create_graph):
        for i in range(top, lo - 1, -1):
            g = cot.pop(i, None)
            if g is None:
                continue
            if i in targets:
                found[i] = g
            node = tape.nodes[i]
            if node.vjp is None:
                continue
            parents = node.parents
            if not any(p.index is not None and relevant[p.index] for p in parents):
                continue
            pgrads = node.vjp(g)
            for p, gp in zip(parents, pgrads):
                if gp is None or p.index is None or not relevant[p.index]:
                    continue
                prev = cot.get(p.index)
                cot[p.index] = gp if prev is None else add(prev, gp)

    result = []
    for w in wrt:
        g = found.get(w.index)
        if g is None:
            if not allow_unused:
                raise ValueError("value is not an ancestor of the output")
            g = Value(np.zeros_like(w.data))
        elif g.shape != w.shape:
            g = reshape(g, w.shape) if create_graph else Value(g.data.reshape(w.shape))
        result.append(g)
    return result


def grad_params(loss: Value, params: Sequence[Value]) -> list[np.ndarray]:
    """Plain-array gradients of a scalar loss; unreachable params get zeros."""
    return [g.data for g in grad(loss, params, create_graph=False)]


def grad_input(out: Value, query: Value) -> Value:
    """d out / d query, kept on the tape so later losses can differentiate it."""
    return grad(out, [query], create_graph=True, allow_unused=False)[0]


# ---------------------------------------------------------------- MLPs


ACTIVATIONS = ("sine", "softplus", "tanh", "linear", "sigmoid")


@dataclass(frozen=True)
class MLPSpec:
    """Fully connected net: ``sizes = (in, h1, ..., out)``.

    Flat parameter layout is layer by layer: the (in, out) weight matrix in
    row-major order followed by the bias vector.
    """

    sizes: tuple[int, ...]
    hidden: str = "softplus"
    output: str = "linear"
    w0: float = 30.0  # sine frequency, used only when hidden == "sine"

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        for act in (self.hidden, self.output):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.sizes[:-1], self.sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def offsets(self) -> list[tuple[int, int, int]]:
        """(weight start, bias start, bias end) per layer."""
        out, pos = [], 0
        for i, o in self.layer_shapes:
            out.append((pos, pos + i * o, pos + i * o + o))
            pos += i * o + o
        return out


def _activate(x: Value, kind: str, w0: float) -> Value:
    if kind == "sine":
        return sin(mul(x, w0))
    if kind == "softplus":
        return softplus(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    return x


def forward_mlp(weights, spec: MLPSpec, x, activation: str | None = None) -> Value:
    """Evaluate the MLP on a batch ``x`` of shape (N, in) (or a single vector).

    ``activation`` overrides ``spec.hidden`` when given.
    """
    weights, x = as_value(weights), as_value(x)
    if weights.size != spec.n_params:
        raise ValueError(f"weight count {weights.size} does not match layer spec "
                         f"{spec.sizes} ({spec.n_params} parameters)")
    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, x.shape[0]))
    if x.shape[1] != spec.sizes[0]:
        raise ValueError(f"input dimension {x.shape[1]} does not match first layer "
                         f"size {spec.sizes[0]}")
    hidden = activation or spec.hidden
    flat = reshape(weights, (weights.size,)) if weights.ndim != 1 else weights
    h = x
    n_layers = len(spec.layer_shapes)
    for k, ((i, o), (w_lo, b_lo, b_hi)) in enumerate(zip(spec.layer_shapes, spec.offsets())):
        W = reshape(getitem(flat, slice(w_lo, b_lo)), (i, o))
        b = getitem(flat, slice(b_lo, b_hi))
        h = add(matmul(h, W), b)
        h = _activate(h, hidden if k < n_layers - 1 else spec.output, spec.w0)
    if squeeze:
        h = reshape(h, (spec.sizes[-1],))
    return h


def init_mlp(spec: MLPSpec, rng: np.random.Generator) -> np.ndarray:
    """Initial flat weights; sine nets get the usual sinusoidal-network scheme."""
    parts = []
    for k, (i, o) in enumerate(spec.layer_shapes):
        if spec.hidden == "sine":
            bound = 1.0 / i if k == 0 else np.sqrt(6.0 / i) / spec.w0
        else:
            bound = np.sqrt(6.0 / (i + o))
        parts.append(rng.uniform(-bound, bound, size=i * o))
        parts.append(rng.uniform(-1.0 / np.sqrt(i), 1.0 / np.sqrt(i), size=o))
    return np.concatenate(parts)


# ---------------------------------------------------------------- Adam


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update; returns new arrays, state updated in place."""
    state.step += 1
    t = state.step
    new = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        new[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return new, state


def leaves(tape: Tape, arrays: dict[str, np.ndarray], names: Iterable[str]) -> dict[str, Value]:
    return {n: tape.var(arrays[n]) for n in names}
