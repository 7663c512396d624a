"""Reverse-mode differentiation over the closed op set the unfolded
pipelines are built from.

The design is a plain Wengert list: every primitive application appends a
node (op id, parent node indices, forward value, op-specific aux data) to a
:class:`Tape`; :func:`backward` walks the list once in reverse, dispatching
per-op vector-Jacobian products from a table.  No graph rewriting, no
fusion -- sizes here are tiny and replay order is the recorded order.

Values are float64 arrays.  Ops reduce or normalize along axis 0, so a
value of shape ``(n, B)`` behaves as a batch of B column vectors and the
whole graph vectorizes over the batch.  Two broadcasting conventions keep
that ergonomic, and gradients are summed back to each operand's true shape:

* a 1-d operand meeting a 2-d operand of matching leading length is treated
  as a column, e.g. thresholds ``(m,)`` against measurements ``(m, B)``;
* ``dot``/``normalize_l2`` keep a leading unit axis on batched inputs
  (``(1, B)``), so per-sample scalars broadcast against columns unambiguously.

Subgradient conventions at kinks: relu'(0) = 0 and abs'(0) = 0.  The top-k
selection backward is straight-through on the support chosen in the forward
pass: the upstream gradient passes unchanged on selected entries and is
zero elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .numerics import ContractViolation


@dataclass
class _Node:
    op: str
    parents: tuple
    value: np.ndarray
    aux: object = None


class Var:
    """Handle to one node of a tape; ``value`` is the forward result."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.shape})"


class Tape:
    """Append-only record of primitive applications.

    Single-owner: do not share a tape across concurrent recordings or run
    backward while still recording.  Parameters registered via ``param``
    are the leaves :func:`backward` reports gradients for.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.params: dict[str, int] = {}

    def _record(self, op: str, parents: tuple, value, aux=None) -> Var:
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(_Node(op, parents, value, aux))
        return Var(self, len(self.nodes) - 1)

    def constant(self, value) -> Var:
        return self._record("leaf", (), value)

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise ContractViolation(f"Tape.param: {name!r} already registered")
        var = self._record("leaf", (), value)
        self.params[name] = var.index
        return var


def _lift(tape: Tape, v) -> Var:
    if isinstance(v, Var):
        if v.tape is not tape:
            raise ContractViolation("op mixes Vars from different tapes")
        return v
    return tape.constant(v)


def _tape_of(*args) -> Tape:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    raise ContractViolation("at least one operand must be a Var")


def _colify(v: np.ndarray, other: np.ndarray) -> np.ndarray:
    # 1-d against (k, B): treat the vector as a column.
    if v.ndim == 1 and other.ndim == 2 and v.shape[0] == other.shape[0]:
        return v.reshape(-1, 1)
    return v


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


_VJPS: dict[str, Callable] = {}


def _vjp(op: str):
    def register(fn):
        _VJPS[op] = fn
        return fn
    return register


# ---------------------------------------------------------------- primitives

def mat_vec(a, x) -> Var:
    """A @ x for a 2-d A and a vector or (n, B) batch x."""
    tape = _tape_of(a, x)
    a, x = _lift(tape, a), _lift(tape, x)
    av, xv = a.value, x.value
    if av.ndim != 2 or xv.shape[0] != av.shape[1]:
        raise ContractViolation(f"mat_vec: shapes {av.shape} and {xv.shape} do not chain")
    return tape._record("mat_vec", (a.index, x.index), av @ xv)


@_vjp("mat_vec")
def _mat_vec_vjp(node, g, nodes):
    a, x = nodes[node.parents[0]].value, nodes[node.parents[1]].value
    ga = np.outer(g, x) if x.ndim == 1 else g @ x.T
    return ((node.parents[0], ga), (node.parents[1], a.T @ g))


def mat_vec_t(a, y) -> Var:
    """A.T @ y."""
    tape = _tape_of(a, y)
    a, y = _lift(tape, a), _lift(tape, y)
    av, yv = a.value, y.value
    if av.ndim != 2 or yv.shape[0] != av.shape[0]:
        raise ContractViolation(f"mat_vec_t: shapes {av.shape} and {yv.shape} do not chain")
    return tape._record("mat_vec_t", (a.index, y.index), av.T @ yv)


@_vjp("mat_vec_t")
def _mat_vec_t_vjp(node, g, nodes):
    a, y = nodes[node.parents[0]].value, nodes[node.parents[1]].value
    ga = np.outer(y, g) if y.ndim == 1 else y @ g.T
    return ((node.parents[0], ga), (node.parents[1], a @ g))


def _binary(tape, op, a, b, combine) -> Var:
    a, b = _lift(tape, a), _lift(tape, b)
    av = _colify(a.value, b.value)
    bv = _colify(b.value, a.value)
    try:
        value = combine(av, bv)
    except ValueError as err:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from err
    return tape._record(op, (a.index, b.index), value, aux=(av.shape, bv.shape))


def add(a, b) -> Var:
    return _binary(_tape_of(a, b), "add", a, b, lambda x, y: x + y)


@_vjp("add")
def _add_vjp(node, g, nodes):
    sa, sb = node.aux
    pa, pb = node.parents
    return ((pa, _unbroadcast(g, sa).reshape(nodes[pa].value.shape)),
            (pb, _unbroadcast(g, sb).reshape(nodes[pb].value.shape)))


def sub(a, b) -> Var:
    return _binary(_tape_of(a, b), "sub", a, b, lambda x, y: x - y)


@_vjp("sub")
def _sub_vjp(node, g, nodes):
    sa, sb = node.aux
    pa, pb = node.parents
    return ((pa, _unbroadcast(g, sa).reshape(nodes[pa].value.shape)),
            (pb, -_unbroadcast(g, sb).reshape(nodes[pb].value.shape)))


def elem_mul(a, b) -> Var:
    return _binary(_tape_of(a, b), "elem_mul", a, b, lambda x, y: x * y)


@_vjp("elem_mul")
def _elem_mul_vjp(node, g, nodes):
    sa, sb = node.aux
    pa, pb = node.parents
    av = nodes[pa].value
    bv = nodes[pb].value
    ga = _unbroadcast(g * _colify(bv, av), sa).reshape(av.shape)
    gb = _unbroadcast(g * _colify(av, bv), sb).reshape(bv.shape)
    return ((pa, ga), (pb, gb))


def scale(s, x) -> Var:
    """Scalar times tensor; ``s`` may be a float or a scalar Var."""
    tape = _tape_of(s, x) if isinstance(s, Var) or isinstance(x, Var) else None
    if tape is None:
        raise ContractViolation("scale: at least one operand must be a Var")
    s, x = _lift(tape, s), _lift(tape, x)
    if s.value.shape != ():
        raise ContractViolation(f"scale: scale factor must be scalar, got shape {s.shape}")
    return tape._record("scale", (s.index, x.index), s.value * x.value)


@_vjp("scale")
def _scale_vjp(node, g, nodes):
    sv = nodes[node.parents[0]].value
    xv = nodes[node.parents[1]].value
    return ((node.parents[0], np.asarray(np.sum(g * xv))),
            (node.parents[1], sv * g))


def dot(x, y) -> Var:
    """Contraction along axis 0: scalar for vectors, (1, B) per-column dots
    for batched inputs (the kept unit axis broadcasts against columns)."""
    tape = _tape_of(x, y)
    x, y = _lift(tape, x), _lift(tape, y)
    if x.value.shape != y.value.shape:
        raise ContractViolation(f"dot: shapes {x.shape} and {y.shape} differ")
    value = np.sum(x.value * y.value, axis=0, keepdims=x.value.ndim == 2)
    return tape._record("dot", (x.index, y.index), value)


@_vjp("dot")
def _dot_vjp(node, g, nodes):
    xv = nodes[node.parents[0]].value
    yv = nodes[node.parents[1]].value
    return ((node.parents[0], yv * g), (node.parents[1], xv * g))


def relu(x) -> Var:
    x = _lift(_tape_of(x), x)
    return x.tape._record("relu", (x.index,), np.maximum(x.value, 0.0))


@_vjp("relu")
def _relu_vjp(node, g, nodes):
    xv = nodes[node.parents[0]].value
    return ((node.parents[0], g * (xv > 0)),)


def abs_elem(x) -> Var:
    x = _lift(_tape_of(x), x)
    return x.tape._record("abs_elem", (x.index,), np.abs(x.value))


@_vjp("abs_elem")
def _abs_vjp(node, g, nodes):
    xv = nodes[node.parents[0]].value
    return ((node.parents[0], g * np.sign(xv)),)


def tanh_scaled(x, t: float) -> Var:
    """tanh(t * x), the smooth sign surrogate."""
    if not t > 0:
        raise ContractViolation(f"tanh_scaled: sharpness must be positive, got {t}")
    x = _lift(_tape_of(x), x)
    return x.tape._record("tanh_scaled", (x.index,), np.tanh(t * x.value), aux=float(t))


@_vjp("tanh_scaled")
def _tanh_vjp(node, g, nodes):
    t = node.aux
    return ((node.parents[0], g * t * (1.0 - node.value * node.value)),)


def normalize_l2(x) -> Var:
    """x / ||x||_2 along axis 0 (per column for batched inputs)."""
    x = _lift(_tape_of(x), x)
    xv = x.value
    norms = np.sqrt(np.sum(xv * xv, axis=0, keepdims=xv.ndim == 2))
    if np.any(norms == 0.0):
        raise ContractViolation("normalize_l2: zero vector")
    return x.tape._record("normalize_l2", (x.index,), xv / norms, aux=norms)


@_vjp("normalize_l2")
def _normalize_vjp(node, g, nodes):
    # J = (I - y y^T) / ||x||, applied per column
    y = node.value
    norms = node.aux
    s = np.sum(y * g, axis=0, keepdims=y.ndim == 2)
    return ((node.parents[0], (g - y * s) / norms),)


def topk_support_mask(values: np.ndarray, k: int) -> np.ndarray:
    """0/1 mask of the k largest-magnitude entries along axis 0, ties broken
    toward the smaller index (same rule as ``solvers.hard_threshold``)."""
    if not (1 <= k <= values.shape[0]):
        raise ContractViolation(f"topk_support_mask: need 1 <= k <= {values.shape[0]}, got {k}")
    order = np.argsort(-np.abs(values), axis=0, kind="stable")
    mask = np.zeros_like(values)
    np.put_along_axis(mask, order[:k], 1.0, axis=0)
    return mask


def topk_mask(x, k: int) -> Var:
    """Keep the k largest-magnitude entries (per column), zero the rest.

    Backward is straight-through on the selected support: the support is
    frozen from the forward pass and gradients flow only through it.
    """
    x = _lift(_tape_of(x), x)
    mask = topk_support_mask(x.value, k)
    return x.tape._record("topk_mask", (x.index,), x.value * mask, aux=mask)


@_vjp("topk_mask")
def _topk_vjp(node, g, nodes):
    return ((node.parents[0], g * node.aux),)


def reduce_sum_sq(x) -> Var:
    """Sum of squared entries (over every axis) as a scalar."""
    x = _lift(_tape_of(x), x)
    return x.tape._record("reduce_sum_sq", (x.index,), np.sum(x.value * x.value))


@_vjp("reduce_sum_sq")
def _sum_sq_vjp(node, g, nodes):
    return ((node.parents[0], 2.0 * nodes[node.parents[0]].value * g),)


# ----------------------------------------------------------------- backward

def backward(tape: Tape, loss: Var) -> dict:
    """Gradients of a scalar loss with respect to every registered parameter.

    Parameters the loss does not depend on get zero gradients of the right
    shape.  Parameters read at several places in the graph (the sensing
    matrix feeds the encoder and every decoder layer) accumulate summed
    contributions.
    """
    if loss.tape is not tape:
        raise ContractViolation("backward: loss does not belong to this tape")
    if loss.value.shape != ():
        raise ContractViolation(f"backward: loss must be scalar, got shape {loss.value.shape}")
    nodes = tape.nodes
    grads: list[Optional[np.ndarray]] = [None] * len(nodes)
    grads[loss.index] = np.asarray(1.0)
    for idx in range(loss.index, -1, -1):
        g = grads[idx]
        if g is None:
            continue
        node = nodes[idx]
        if node.op == "leaf":
            continue
        for pidx, contrib in _VJPS[node.op](node, g, nodes):
            if grads[pidx] is None:
                grads[pidx] = np.array(contrib, dtype=np.float64)
            else:
                grads[pidx] += contrib
    out = {}
    for name, idx in tape.params.items():
        g = grads[idx]
        out[name] = np.zeros_like(nodes[idx].value) if g is None else g
    return out


def kink_margin(tape: Tape) -> float:
    """Smallest distance of any recorded nonlinearity from its kink.

    relu/abs: min |input|.  topk: min magnitude gap between the k-th and
    (k+1)-th largest entries per column (support stability).  normalize:
    the norm itself (distance from the singular zero vector).  Finite
    differences are only trustworthy when this margin comfortably exceeds
    the perturbation's reach; callers filter or resample on small margins.
    """
    worst = np.inf
    for node in tape.nodes:
        if node.op in ("relu", "abs_elem"):
            x = tape.nodes[node.parents[0]].value
            worst = min(worst, float(np.min(np.abs(x))))
        elif node.op == "topk_mask":
            x = np.abs(tape.nodes[node.parents[0]].value)
            k = int(np.sum(node.aux[..., 0] if node.aux.ndim == 2 else node.aux))
            if k < x.shape[0]:
                s = -np.sort(-x, axis=0)
                worst = min(worst, float(np.min(s[k - 1] - s[k])))
        elif node.op == "normalize_l2":
            worst = min(worst, float(np.min(node.aux)))
    return worst


def grad_check(builder, params: dict, h: float = 1e-6) -> float:
    """Compare tape gradients with central finite differences.

    ``builder(tape, vars)`` must record a graph on ``tape`` from the dict of
    parameter Vars and return the scalar loss Var.  Every coordinate of
    every parameter is checked; the result is the worst relative error
    ``|analytic - numeric| / (|analytic| + |numeric| + 1e-12)``.
    """
    if not h > 0:
        raise ContractViolation(f"grad_check: step must be positive, got {h}")
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    tape = Tape()
    pvars = {k: tape.param(k, v) for k, v in params.items()}
    analytic = backward(tape, builder(tape, pvars))

    def value_at(current: dict) -> float:
        t2 = Tape()
        vs = {k: t2.param(k, v) for k, v in current.items()}
        return float(builder(t2, vs).value)

    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        aflat = np.asarray(analytic[name]).reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            up = value_at(params)
            flat[i] = orig - h
            down = value_at(params)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(aflat[i] - numeric) / (abs(aflat[i]) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
