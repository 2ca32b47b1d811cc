"""A small reverse-mode differentiation tape over numpy arrays.

Only the operations the GAN objectives need are provided. Every operation
appends a node to the tape together with a vector-Jacobian product closure;
``backward`` walks the tape in reverse.

Parameters live in a plain ``dict`` mapping names to float64 arrays (the
"param store"). A tape reads them through :meth:`Tape.param`, which creates
one leaf per name.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import linalg
from .errors import ArgumentError, NumericalError

ParamStore = dict  # name -> np.ndarray (float64)

LEAKY_SLOPE = 0.1


class Node:
    __slots__ = ("tape", "index", "value", "parents", "vjp", "name")

    def __init__(self, tape, value, parents=(), vjp=None, name=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

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

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node#{self.index}{label} shape={self.value.shape}"


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self.kink_margin = np.inf   # smallest |input| seen by a leaky ReLU

    def param(self, name: str, value) -> Node:
        node = self.params.get(name)
        if node is None:
            node = Node(self, np.asarray(value, dtype=np.float64), name=name)
            self.params[name] = node
        return node

    def const(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64))


def _lift(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise ArgumentError("operation needs at least one tape node")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.shape, b.shape
    return Node(tape, a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    sa, sb = a.shape, b.shape
    return Node(tape, a.value - b.value, (a, b),
                lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    return Node(tape, av * bv, (a, b),
                lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def leaky_relu(x: Node, slope: float = LEAKY_SLOPE) -> Node:
    # derivative at 0 taken from the positive branch
    pos = x.value >= 0
    if x.value.size:
        x.tape.kink_margin = min(x.tape.kink_margin, float(np.abs(x.value).min()))
    scale = np.where(pos, 1.0, slope)
    return Node(x.tape, x.value * scale, (x,), lambda g: (g * scale,))


def clamp_min(x: Node, lo: float) -> Node:
    keep = ~(x.value < lo)        # NaN passes through so the finiteness guard sees it
    return Node(x.tape, np.where(keep, x.value, lo), (x,), lambda g: (g * keep,))


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ArgumentError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    return Node(tape, av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def affine(x: Node, w: Node, b: Node) -> Node:
    return add(matmul(x, w), b)


def concat(parts: Iterable, axis: int = -1, tape: Tape | None = None) -> Node:
    parts = list(parts)
    tape = tape or _tape_of(*parts)
    parts = [_lift(tape, p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    value = np.concatenate([p.value for p in parts], axis=axis)
    return Node(tape, value, tuple(parts),
                lambda g: tuple(np.split(g, splits, axis=axis)))


def take_rows(x: Node, idx) -> Node:
    """``x[idx]`` along the first axis; repeated indices accumulate."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Node(x.tape, x.value[idx], (x,), vjp)


def pick(x: Node, idx) -> Node:
    """Row-wise element selection ``x[i, idx[i]]``."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        out[rows, idx] = g
        return (out,)

    return Node(x.tape, x.value[rows, idx], (x,), vjp)


# -- reductions ------------------------------------------------------------

def total(x: Node) -> Node:
    shape = x.shape
    return Node(x.tape, np.asarray(x.value.sum()), (x,),
                lambda g: (np.broadcast_to(g, shape).copy(),))


def weighted_sum(x: Node, weights) -> Node:
    """``sum_i w_i x_i`` for a vector node and constant weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ArgumentError(f"weights shape {w.shape} != values shape {x.shape}")
    return Node(x.tape, np.asarray(np.dot(x.value, w)), (x,), lambda g: (g * w,))


def row_sqnorm(x: Node) -> Node:
    """Squared Euclidean norm of each row."""
    xv = x.value
    return Node(x.tape, np.einsum("ij,ij->i", xv, xv), (x,),
                lambda g: (2.0 * g[:, None] * xv,))


def log_softmax(logits: Node, active=None) -> Node:
    """Row-wise log-softmax over the ``active`` columns.

    Inactive columns are excluded from the normalizer and hold ``-inf``.
    """
    z = logits.value
    if active is None:
        active = np.ones(z.shape[1], dtype=bool)
    active = np.asarray(active, dtype=bool)
    zm = np.where(active, z, -np.inf)
    top = zm.max(axis=1, keepdims=True)
    lse = top + np.log(np.exp(zm - top).sum(axis=1, keepdims=True))
    out = zm - lse
    p = np.exp(out)

    def vjp(g):
        g = np.where(active, g, 0.0)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return Node(logits.tape, out, (logits,), vjp)


def log_prob_excluding(logits: Node, col: int, active=None) -> Node:
    """Row-wise ``log(1 - p[col])`` computed as a log-sum-exp over the other columns."""
    z = logits.value
    if active is None:
        active = np.ones(z.shape[1], dtype=bool)
    active = np.asarray(active, dtype=bool)
    rest = active.copy()
    rest[col] = False
    zm = np.where(active, z, -np.inf)
    zr = np.where(rest, z, -np.inf)
    top = zm.max(axis=1, keepdims=True)
    e_all = np.exp(zm - top)
    e_rest = np.exp(zr - top)
    s_all = e_all.sum(axis=1)
    s_rest = e_rest.sum(axis=1)
    value = np.log(s_rest) - np.log(s_all)

    def vjp(g):
        return (g[:, None] * (e_rest / s_rest[:, None] - e_all / s_all[:, None]),)

    return Node(logits.tape, value, (logits,), vjp)


def log_clamped(logp: Node, floor: float = 1e-12) -> Node:
    """Floor log-probabilities at ``log(floor)``."""
    return clamp_min(logp, float(np.log(floor)))


# -- covariance and the Ky Fan node ---------------------------------------

def group_covariance(x: Node, groups, n_groups: int) -> Node:
    """Per-group covariance ``(G, D, D)`` of the rows of ``x``, centered at each
    group's own mean, divisor = group size."""
    groups = np.asarray(groups, dtype=np.int64)
    xv = x.value
    D = xv.shape[1]
    counts = np.bincount(groups, minlength=n_groups).astype(np.float64)
    if np.any(counts == 0):
        raise ArgumentError("group_covariance: every group needs at least one row")
    sums = np.zeros((n_groups, D))
    np.add.at(sums, groups, xv)
    means = sums / counts[:, None]
    centered = xv - means[groups]
    outer = np.einsum("ni,nj->nij", centered, centered)
    cov = np.zeros((n_groups, D, D))
    np.add.at(cov, groups, outer)
    cov /= counts[:, None, None]

    def vjp(g):
        gs = (g + np.swapaxes(g, 1, 2)) / counts[:, None, None]
        # centering contributes nothing: centered rows sum to zero per group
        return (np.einsum("nj,nij->ni", centered, gs[groups]),)

    return Node(x.tape, cov, (x,), vjp)


def kyfan(stack: Node, m: int, method: str = "jacobi") -> Node:
    """Ky Fan m-norm of each matrix in a ``(P, r, c)`` stack.

    The backward rule is ``U_m V_m^T`` from the truncated SVD; the SVD itself
    is not differentiated through.
    """
    norms, sub = linalg.kyfan_stack(stack.value, m, method)
    return Node(stack.tape, norms, (stack,), lambda g: (g[:, None, None] * sub,))


# -- backward --------------------------------------------------------------

def backward(tape: Tape, loss: Node, params: ParamStore | None = None) -> dict:
    """Gradients of a scalar ``loss`` with respect to every parameter leaf.

    Parameters present in ``params`` but never read on the tape get zeros.
    """
    if loss.tape is not tape:
        raise ArgumentError("loss node belongs to a different tape")
    if np.size(loss.value) != 1:
        raise ArgumentError(f"loss must be a scalar, got shape {np.shape(loss.value)}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = grads.pop(node.index, None) if node.name is None else grads.get(node.index)
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if parent.index in grads:
                grads[parent.index] = grads[parent.index] + pg
            else:
                grads[parent.index] = pg
    out = {}
    for name, node in tape.params.items():
        g = grads.get(node.index)
        out[name] = np.zeros_like(node.value) if g is None else np.asarray(g, dtype=np.float64)
    if params is not None:
        for name, value in params.items():
            out.setdefault(name, np.zeros_like(value))
    return out


# -- MLPs ------------------------------------------------------------------

def init_mlp(params: ParamStore, prefix: str, sizes: list[int], rng: np.random.Generator) -> None:
    """Glorot-uniform weights and zero biases for ``len(sizes) - 1`` layers."""
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"{prefix}.w{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{prefix}.b{i}"] = np.zeros(fan_out)


def mlp_forward(params: ParamStore, prefix: str, x, tape: Tape, n_layers: int = 3) -> Node:
    """affine -> leaky ReLU -> affine -> leaky ReLU -> affine, on batched rows."""
    h = _lift(tape, x)
    if h.value.ndim == 1:
        h = Node(tape, h.value[None, :], (h,), lambda g: (g[0],))
    for i in range(n_layers):
        try:
            w, b = params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"]
        except KeyError as exc:
            raise ArgumentError(f"missing parameter {exc.args[0]}") from None
        if w.shape[0] != h.shape[1] or b.shape != (w.shape[1],):
            raise ArgumentError(
                f"{prefix} layer {i}: input width {h.shape[1]} vs weight {w.shape}, bias {b.shape}")
        h = affine(h, tape.param(f"{prefix}.w{i}", w), tape.param(f"{prefix}.b{i}", b))
        if i < n_layers - 1:
            h = leaky_relu(h)
    return h


# -- Adam ------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, grads: dict, state: AdamState, lr: float,
              names: Iterable[str] | None = None) -> None:
    """One bias-corrected Adam update, in place, on ``names`` (default: all grads)."""
    names = list(grads) if names is None else list(names)
    for name in names:
        g = grads[name]
        if g.shape != params[name].shape:
            raise ArgumentError(f"gradient for {name} has shape {g.shape}, param {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in names:
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        params[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- finite-difference checking -------------------------------------------

def _loss_value(loss_fn, params) -> float:
    return float(loss_fn(params, Tape()).value)


def grad_errors(loss_fn: Callable[[ParamStore, Tape], Node], params: ParamStore,
                step: float = 1e-5, max_coords: int | None = None,
                rng: np.random.Generator | None = None, names=None) -> dict[str, float]:
    """Per-parameter max of ``|analytic - central difference| / max(1, |central difference|)``.

    ``loss_fn(params, tape)`` must be deterministic (noise frozen). When
    ``max_coords`` is set, that many coordinates per parameter are sampled.
    """
    tape = Tape()
    analytic = backward(tape, loss_fn(params, tape), params)
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name in (names or sorted(params)):
        base = params[name]
        flat_idx = np.arange(base.size)
        if max_coords is not None and base.size > max_coords:
            flat_idx = rng.choice(base.size, size=max_coords, replace=False)
        worst = 0.0
        for k in flat_idx:
            idx = np.unravel_index(k, base.shape)
            probe = dict(params)
            plus = base.copy()
            plus[idx] += step
            probe[name] = plus
            f_plus = _loss_value(loss_fn, probe)
            minus = base.copy()
            minus[idx] -= step
            probe[name] = minus
            f_minus = _loss_value(loss_fn, probe)
            fd = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[name][idx] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
        errors[name] = worst
    return errors


def grad_check(loss_fn, params: ParamStore, step: float = 1e-5, **kwargs) -> float:
    """Maximum relative error over all checked coordinates."""
    errs = grad_errors(loss_fn, params, step, **kwargs)
    return max(errs.values()) if errs else 0.0
