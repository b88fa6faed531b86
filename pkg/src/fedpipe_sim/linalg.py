"""Dense float64 matrices, a small reverse-mode tape, and low-rank singular values.

Matrices are plain 2-D ``numpy.float64`` arrays. The tape records a closed set
of primitives (matmul, add, scale, elementwise product, row softmax, mean
squared error) and back-propagates through them in exact reverse order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractViolation, ShapeError, UnknownLeafError


def as_matrix(x) -> np.ndarray:
    """Validate and copy ``x`` into a finite 2-D float64 array."""
    m = np.array(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ContractViolation("matrix entries must be finite")
    return m


@dataclass(frozen=True)
class Node:
    """Handle to a value recorded on a :class:`Tape`."""

    tape: "Tape" = field(repr=False, compare=False)
    index: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Single-owner recording of a forward computation.

    Each record is ``(op, inputs, aux)`` where ``inputs`` are node indices.
    Leaves are recorded with op ``"leaf"``; constants with ``"const"``.
    """

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.records: list[tuple] = []

    def _push(self, value, op, inputs=(), aux=None) -> Node:
        self.values.append(value)
        self.records.append((op, tuple(inputs), aux))
        return Node(self, len(self.values) - 1)

    def _idx(self, node: Node) -> int:
        if node.tape is not self:
            raise ContractViolation("node belongs to a different tape")
        return node.index

    # -- leaves -----------------------------------------------------------

    def leaf(self, value) -> Node:
        """Record a differentiable input."""
        return self._push(as_matrix(value), "leaf")

    def const(self, value) -> Node:
        """Record a non-differentiable input."""
        return self._push(as_matrix(value), "const")

    # -- primitives -------------------------------------------------------

    def matmul(self, a: Node, b: Node, transpose_b: bool = False) -> Node:
        """``a @ b`` (or ``a @ b.T`` when ``transpose_b``)."""
        av, bv = a.value, b.value
        rhs = bv.T if transpose_b else bv
        if av.shape[1] != rhs.shape[0]:
            raise ShapeError(f"matmul {av.shape} x {rhs.shape}")
        return self._push(av @ rhs, "matmul", (self._idx(a), self._idx(b)), transpose_b)

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise ShapeError(f"add {a.shape} + {b.shape}")
        return self._push(a.value + b.value, "add", (self._idx(a), self._idx(b)))

    def scale(self, a: Node, c: float) -> Node:
        return self._push(a.value * float(c), "scale", (self._idx(a),), float(c))

    def mul(self, a: Node, b: Node) -> Node:
        """Elementwise product."""
        if a.shape != b.shape:
            raise ShapeError(f"mul {a.shape} * {b.shape}")
        return self._push(a.value * b.value, "mul", (self._idx(a), self._idx(b)))

    def row_softmax(self, a: Node) -> Node:
        z = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        return self._push(e / e.sum(axis=1, keepdims=True), "softmax", (self._idx(a),))

    def square_loss(self, pred: Node, target=None) -> Node:
        """Mean of ``(pred - target)**2`` as a 1x1 node; ``target`` defaults to zero."""
        t = np.zeros_like(pred.value) if target is None else as_matrix(target)
        if t.shape != pred.shape:
            raise ShapeError(f"square_loss {pred.shape} vs target {t.shape}")
        r = pred.value - t
        return self._push(np.array([[np.mean(r * r)]]), "sqloss", (self._idx(pred),), t)

    def __len__(self):
        return len(self.records)

    # -- replay -----------------------------------------------------------

    def replay(self, leaf_values: dict[Node, np.ndarray] | None = None) -> None:
        """Recompute every value in recording order, optionally with new leaf values."""
        overrides = {self._idx(k): as_matrix(v) for k, v in (leaf_values or {}).items()}
        for i, (op, ins, aux) in enumerate(self.records):
            v = self.values
            if op in ("leaf", "const"):
                if i in overrides:
                    if overrides[i].shape != v[i].shape:
                        raise ShapeError("replayed leaf changes shape")
                    v[i] = overrides[i]
            elif op == "matmul":
                rhs = v[ins[1]].T if aux else v[ins[1]]
                v[i] = v[ins[0]] @ rhs
            elif op == "add":
                v[i] = v[ins[0]] + v[ins[1]]
            elif op == "scale":
                v[i] = v[ins[0]] * aux
            elif op == "mul":
                v[i] = v[ins[0]] * v[ins[1]]
            elif op == "softmax":
                z = v[ins[0]] - v[ins[0]].max(axis=1, keepdims=True)
                e = np.exp(z)
                v[i] = e / e.sum(axis=1, keepdims=True)
            elif op == "sqloss":
                r = v[ins[0]] - aux
                v[i] = np.array([[np.mean(r * r)]])


def gradient_of_loss(tape: Tape, loss: Node, params: list[Node]) -> list[np.ndarray]:
    """Reverse-mode gradients of the scalar ``loss`` with respect to leaf ``params``."""
    li = tape._idx(loss)
    if tape.values[li].shape != (1, 1):
        raise ContractViolation(f"loss node must be scalar (1x1), got {tape.values[li].shape}")
    wanted = []
    for p in params:
        pi = tape._idx(p) if p.tape is tape else None
        if pi is None or tape.records[pi][0] != "leaf":
            raise UnknownLeafError(f"node {p.index} is not a leaf of this tape")
        wanted.append(pi)

    vals = tape.values
    adj: list[np.ndarray | None] = [None] * (li + 1)
    adj[li] = np.ones((1, 1))

    def acc(i, g):
        adj[i] = g if adj[i] is None else adj[i] + g

    for i in range(li, -1, -1):
        g = adj[i]
        if g is None:
            continue
        op, ins, aux = tape.records[i]
        if op == "matmul":
            a, b = ins
            if aux:  # out = A B^T
                acc(a, g @ vals[b])
                acc(b, g.T @ vals[a])
            else:
                acc(a, g @ vals[b].T)
                acc(b, vals[a].T @ g)
        elif op == "add":
            acc(ins[0], g)
            acc(ins[1], g)
        elif op == "scale":
            acc(ins[0], g * aux)
        elif op == "mul":
            acc(ins[0], g * vals[ins[1]])
            acc(ins[1], g * vals[ins[0]])
        elif op == "softmax":
            y = vals[i]
            acc(ins[0], y * (g - (g * y).sum(axis=1, keepdims=True)))
        elif op == "sqloss":
            x = vals[ins[0]]
            acc(ins[0], g[0, 0] * 2.0 * (x - aux) / x.size)

    return [np.zeros_like(vals[i]) if i > li or adj[i] is None else adj[i].copy() for i in wanted]


def singular_values_of_product(B, A) -> np.ndarray:
    """All ``min(d_i, d_o)`` singular values of ``B @ A``, descending.

    ``B`` is ``d_i x r`` and ``A`` is ``r x d_o``. Both factors are QR-reduced
    so the Jacobi sweep runs on an ``r x r`` core; the full product is never
    formed.
    """
    B = np.asarray(B, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    if B.ndim != 2 or A.ndim != 2 or B.shape[1] != A.shape[0]:
        raise ShapeError(f"cannot multiply {B.shape} by {A.shape}")
    d_i, d_o = B.shape[0], A.shape[1]
    n = min(d_i, d_o)
    _, rb = np.linalg.qr(B, mode="reduced")
    _, ra = np.linalg.qr(A.T, mode="reduced")
    core = rb @ ra.T
    sv = np.sort(kernels.jacobi_singular_values(core))[::-1]
    out = np.zeros(n)
    k = min(n, sv.size)
    out[:k] = sv[:k]
    return out
