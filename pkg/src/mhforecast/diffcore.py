"""Dense-matrix numerics with tape-based reverse-mode differentiation.

Every value is a 2-D float64 numpy array. A :class:`Tape` is an
append-only record of primitive operations with cached forward values;
inputs always precede the nodes that use them, so :func:`backward` visits
the record once in reverse to accumulate gradients. The primitive set is
deliberately small and auditable; every rule is validated against central
finite differences in the test suite.

A tape is single-threaded. Node values are immutable after recording and
may be shared freely; distinct tapes are independent and may run in
parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError

# Arguments of `log` are clamped here so saturated probabilities cannot
# produce -inf in cross-entropy terms.
LOG_FLOOR = 1e-12

PRIMITIVES = (
    "leaf",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "sum_all",
    "mean_all",
    "relu",
    "sigmoid",
    "log",
    "square",
    "reshape",
    "concat_cols",
    "slice_cols",
)


def as_matrix(value, *, name: str = "matrix") -> np.ndarray:
    """Coerce ``value`` to a fresh 2-D float64 array with finite entries."""
    a = np.array(value, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function computed via exp of a negative magnitude only."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class Node:
    """One recorded primitive: kind, input node ids, cached value."""

    op: str
    inputs: tuple
    value: np.ndarray
    payload: dict


class Tape:
    """Topologically ordered record of primitive operations."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    def leaf(self, value) -> int:
        """Record a constant or parameter entering the computation."""
        return self.record("leaf", (), value=value)

    def record(self, op: str, inputs: Sequence[int] = (), **payload) -> int:
        """Apply primitive ``op`` to input nodes and cache the result."""
        if op not in PRIMITIVES:
            raise ContractError(f"unknown primitive {op!r}")
        inputs = tuple(inputs)
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ContractError(f"input node {i} not on tape")
        vals = [self.nodes[i].value for i in inputs]
        value = _forward(op, vals, payload)
        self.nodes.append(Node(op, inputs, value, payload))
        return len(self.nodes) - 1


def _forward(op: str, vals: list, payload: dict) -> np.ndarray:
    if op == "leaf":
        return as_matrix(payload["value"], name="leaf")
    if op == "matmul":
        a, b = vals
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        return a @ b
    if op == "add":
        a, b = vals
        if b.shape == a.shape:
            return a + b
        if b.shape == (1, a.shape[1]):
            # Row-vector bias broadcast is the only broadcast allowed.
            return a + b
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} incompatible")
    if op == "sub":
        a, b = vals
        if a.shape != b.shape:
            raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
        return a - b
    if op == "mul":
        a, b = vals
        if a.shape != b.shape:
            raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
        return a * b
    if op == "scale":
        return vals[0] * payload["factor"]
    if op == "sum_all":
        return np.array([[vals[0].sum()]])
    if op == "mean_all":
        return np.array([[vals[0].mean()]])
    if op == "relu":
        return np.maximum(vals[0], 0.0)
    if op == "sigmoid":
        return stable_sigmoid(vals[0])
    if op == "log":
        return np.log(np.maximum(vals[0], LOG_FLOOR))
    if op == "square":
        return vals[0] * vals[0]
    if op == "reshape":
        a = vals[0]
        rows, cols = payload["rows"], payload["cols"]
        if rows * cols != a.size:
            raise ShapeError(f"reshape: {a.shape} has {a.size} entries, not {rows}x{cols}")
        return a.reshape(rows, cols)
    if op == "concat_cols":
        rows = {v.shape[0] for v in vals}
        if len(rows) != 1:
            raise ShapeError(f"concat_cols: row counts differ: {[v.shape for v in vals]}")
        return np.concatenate(vals, axis=1)
    if op == "slice_cols":
        a = vals[0]
        start, stop = payload["start"], payload["stop"]
        if not 0 <= start < stop <= a.shape[1]:
            raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")
        return a[:, start:stop].copy()
    raise ContractError(f"unknown primitive {op!r}")  # pragma: no cover


def _acc(grads: list, nid: int, g: np.ndarray) -> None:
    cur = grads[nid]
    grads[nid] = g if cur is None else cur + g


def backward(tape: Tape, root: int) -> Dict[int, np.ndarray]:
    """Gradient of the scalar node ``root`` with respect to every node.

    Returns a dict mapping node id to an array of that node's shape.
    Nodes that do not reach ``root`` get exact zeros. Returned arrays may
    share storage; treat them as read-only.
    """
    nodes = tape.nodes
    if not 0 <= root < len(nodes):
        raise ContractError(f"root node {root} not on tape")
    if nodes[root].value.shape != (1, 1):
        raise ContractError(
            f"backward root must be a 1x1 scalar, got shape {nodes[root].value.shape}"
        )
    grads: list = [None] * len(nodes)
    grads[root] = np.ones((1, 1))
    for nid in range(root, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        node = nodes[nid]
        op = node.op
        if op == "leaf":
            continue
        ivals = [nodes[i].value for i in node.inputs]
        if op == "matmul":
            a, b = node.inputs
            _acc(grads, a, g @ ivals[1].T)
            _acc(grads, b, ivals[0].T @ g)
        elif op == "add":
            a, b = node.inputs
            _acc(grads, a, g)
            if ivals[1].shape == g.shape:
                _acc(grads, b, g)
            else:  # row-vector bias: sum over the broadcast rows
                _acc(grads, b, g.sum(axis=0, keepdims=True))
        elif op == "sub":
            a, b = node.inputs
            _acc(grads, a, g)
            _acc(grads, b, -g)
        elif op == "mul":
            a, b = node.inputs
            _acc(grads, a, g * ivals[1])
            _acc(grads, b, g * ivals[0])
        elif op == "scale":
            _acc(grads, node.inputs[0], g * node.payload["factor"])
        elif op == "sum_all":
            _acc(grads, node.inputs[0], np.full_like(ivals[0], g[0, 0]))
        elif op == "mean_all":
            _acc(grads, node.inputs[0], np.full_like(ivals[0], g[0, 0] / ivals[0].size))
        elif op == "relu":
            _acc(grads, node.inputs[0], g * (ivals[0] > 0.0))
        elif op == "sigmoid":
            s = node.value
            _acc(grads, node.inputs[0], g * s * (1.0 - s))
        elif op == "log":
            x = ivals[0]
            live = x > LOG_FLOOR  # clamped region is constant, so zero gradient
            _acc(grads, node.inputs[0], np.where(live, g / np.where(live, x, 1.0), 0.0))
        elif op == "square":
            _acc(grads, node.inputs[0], 2.0 * ivals[0] * g)
        elif op == "reshape":
            _acc(grads, node.inputs[0], g.reshape(ivals[0].shape))
        elif op == "concat_cols":
            offset = 0
            for i, v in zip(node.inputs, ivals):
                w = v.shape[1]
                _acc(grads, i, g[:, offset : offset + w])
                offset += w
        elif op == "slice_cols":
            start, stop = node.payload["start"], node.payload["stop"]
            gz = np.zeros_like(ivals[0])
            gz[:, start:stop] = g
            _acc(grads, node.inputs[0], gz)
        else:  # pragma: no cover
            raise ContractError(f"no backward rule for {op!r}")
    return {
        i: (grads[i] if grads[i] is not None else np.zeros_like(nodes[i].value))
        for i in range(len(nodes))
    }


def finite_diff_check(
    f: Callable[[Tape, int], int], x: np.ndarray, h: float = 1e-6
) -> float:
    """Compare tape gradients of ``f`` at ``x`` against central differences.

    ``f(tape, node)`` must record a scalar-valued computation of the leaf
    node it is given. Returns the max over entries of
    ``|analytic - central| / (|central| + 1e-12)``.
    """
    if h <= 0:
        raise ConfigError(f"finite-difference step must be positive, got {h}")
    x = as_matrix(x, name="x")
    tape = Tape()
    xid = tape.leaf(x)
    root = f(tape, xid)
    analytic = backward(tape, root)[xid]

    def value_at(xp: np.ndarray) -> float:
        t = Tape()
        r = f(t, t.leaf(xp))
        v = t.value(r)
        if v.shape != (1, 1):
            raise ContractError(f"finite_diff_check needs a scalar function, got {v.shape}")
        fv = float(v[0, 0])
        if not np.isfinite(fv):
            raise NumericError("function value is not finite at perturbed point")
        return fv

    worst = 0.0
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        central = (value_at(xp) - value_at(xm)) / (2.0 * h)
        err = abs(analytic[idx] - central) / (abs(central) + 1e-12)
        if err > worst:
            worst = err
    return worst


# Thin helpers so call sites read like expressions rather than op codes.


def matmul(tape: Tape, a: int, b: int, *, data_movement: bool = False) -> int:
    return tape.record("matmul", (a, b), data_movement=data_movement)


def add(tape: Tape, a: int, b: int) -> int:
    return tape.record("add", (a, b))


def sub(tape: Tape, a: int, b: int) -> int:
    return tape.record("sub", (a, b))


def mul(tape: Tape, a: int, b: int) -> int:
    return tape.record("mul", (a, b))


def scale(tape: Tape, a: int, factor: float) -> int:
    return tape.record("scale", (a,), factor=float(factor))


def sum_all(tape: Tape, a: int) -> int:
    return tape.record("sum_all", (a,))


def mean_all(tape: Tape, a: int) -> int:
    return tape.record("mean_all", (a,))


def relu(tape: Tape, a: int) -> int:
    return tape.record("relu", (a,))


def sigmoid(tape: Tape, a: int) -> int:
    return tape.record("sigmoid", (a,))


def log(tape: Tape, a: int) -> int:
    return tape.record("log", (a,))


def square(tape: Tape, a: int) -> int:
    return tape.record("square", (a,))


def reshape(tape: Tape, a: int, rows: int, cols: int) -> int:
    return tape.record("reshape", (a,), rows=int(rows), cols=int(cols))


def concat_cols(tape: Tape, *inputs: int) -> int:
    return tape.record("concat_cols", inputs)


def slice_cols(tape: Tape, a: int, start: int, stop: int) -> int:
    return tape.record("slice_cols", (a,), start=int(start), stop=int(stop))
