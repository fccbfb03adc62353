"""Small reverse-mode autodiff tape over numpy arrays.

Every ``Var`` is appended to its ``Tape`` on creation, so the tape order is
already topological; ``Tape.backward`` walks it once in reverse. Each parent
link stores a vector-Jacobian product closure. Values may be 0-d (scalars) or
small arrays; the MLP layers and the ellipsometer read-out are fused ops so a
training step stays at a few dozen nodes.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

VJP = Callable[[np.ndarray], np.ndarray]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def var(self, value, name: str = "") -> "Var":
        """Register a leaf (an input or a trainable parameter)."""
        return Var(self, np.asarray(value, dtype=float), (), "leaf", name)

    def backward(self, out: "Var") -> None:
        if out.tape is not self:
            raise ValueError("output belongs to a different tape")
        for node in self.nodes:
            node.grad = None
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            for parent, vjp in node.parents:
                g = vjp(node.grad)
                parent.grad = g if parent.grad is None else parent.grad + g

    def __len__(self) -> int:
        return len(self.nodes)


class Var:
    __slots__ = ("tape", "value", "grad", "parents", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, tape: Tape, value: np.ndarray, parents, op: str, name: str = ""):
        self.tape = tape
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents: tuple[tuple[Var, VJP], ...] = tuple(parents)
        self.op = op
        self.name = name
        tape.nodes.append(self)

    def __repr__(self) -> str:
        return f"Var(op={self.op!r}, shape={self.value.shape})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _new(self, value, parents, op) -> "Var":
        return Var(self.tape, value, parents, op)

    def __add__(self, other):
        if isinstance(other, Var):
            return self._new(
                self.value + other.value,
                (
                    (self, lambda g, s=self.shape: _unbroadcast(g, s)),
                    (other, lambda g, s=other.shape: _unbroadcast(g, s)),
                ),
                "add",
            )
        other = np.asarray(other, dtype=float)
        return self._new(self.value + other, ((self, lambda g, s=self.shape: _unbroadcast(g, s)),), "add")

    __radd__ = __add__

    def __neg__(self):
        return self._new(-self.value, ((self, lambda g: -g),), "neg")

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            return self._new(
                a * b,
                (
                    (self, lambda g, s=self.shape: _unbroadcast(g * b, s)),
                    (other, lambda g, s=other.shape: _unbroadcast(g * a, s)),
                ),
                "mul",
            )
        c = np.asarray(other, dtype=float)
        return self._new(self.value * c, ((self, lambda g, s=self.shape: _unbroadcast(g * c, s)),), "mul")

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        shape = self.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return out

        return self._new(self.value[idx], ((self, vjp),), "getitem")

    def sum(self, axis=None):
        shape = self.shape

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return self._new(np.sum(self.value, axis=axis), ((self, vjp),), "sum")


def sin(x: Var) -> Var:
    return x._new(np.sin(x.value), ((x, lambda g, c=np.cos(x.value): g * c),), "sin")


def cos(x: Var) -> Var:
    return x._new(np.cos(x.value), ((x, lambda g, s=np.sin(x.value): -g * s),), "cos")


def relu(x: Var) -> Var:
    mask = x.value > 0
    return x._new(np.where(mask, x.value, 0.0), ((x, lambda g: g * mask),), "relu")


def matmul(a, b) -> Var:
    if isinstance(a, Var) and isinstance(b, Var):
        av, bv = a.value, b.value
        return a._new(av @ bv, ((a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)), "matmul")
    if isinstance(a, Var):
        bv = np.asarray(b, dtype=float)
        return a._new(a.value @ bv, ((a, lambda g: g @ bv.T),), "matmul")
    av = np.asarray(a, dtype=float)
    return b._new(av @ b.value, ((b, lambda g: av.T @ g),), "matmul")


def stack(items: Sequence, axis: int = -1) -> Var:
    """Stack Vars and constants of equal shape along a new axis."""
    ref = next(x for x in items if isinstance(x, Var))
    values = [x.value if isinstance(x, Var) else np.broadcast_to(np.asarray(x, float), ref.shape) for x in items]
    parents = [(x, lambda g, i=i: np.take(g, i, axis=axis)) for i, x in enumerate(items) if isinstance(x, Var)]
    return ref._new(np.stack(values, axis=axis), parents, "stack")


def affine(x, w: Var, b: Var) -> Var:
    """``x @ w + b`` for x of shape (B, n_in) as a single node."""
    xv = x.value if isinstance(x, Var) else np.asarray(x, dtype=float)
    out = xv @ w.value + b.value
    parents = [(w, lambda g: xv.T @ g), (b, lambda g: g.sum(axis=0))]
    if isinstance(x, Var):
        wv = w.value
        parents.insert(0, (x, lambda g: g @ wv.T))
    return w._new(out, parents, "affine")


def bilinear_readout(a: Var, m: np.ndarray, p: Var) -> Var:
    """``f[b, k] = a[k] · m[b] · p[k]`` for analyzer rows ``a`` (K, 4), generator
    states ``p`` (K, 4) and a constant batch of Mueller matrices ``m`` (B, 4, 4)."""
    m = np.asarray(m, dtype=float)
    av, pv = a.value, p.value
    mp = np.swapaxes(m @ pv.T, 1, 2)  # (B, K, 4): M_b p_k
    am = av @ m  # (B, K, 4): a_k M_b
    out = np.sum(am * pv, axis=-1)
    return a._new(
        out,
        (
            (a, lambda g: np.einsum("bk,bki->ki", g, mp)),
            (p, lambda g: np.einsum("bk,bkj->kj", g, am)),
        ),
        "bilinear",
    )


def logsumexp(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=-1, keepdims=True)
    return (zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True)))[..., 0]


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def weighted_cross_entropy(logits: Var, labels: np.ndarray, sample_weights: np.ndarray) -> Var:
    """Weight-normalized mean of ``w_i * (logsumexp(z_i) - z_i[y_i])`` as a scalar node."""
    z = logits.value
    labels = np.asarray(labels, dtype=int)
    w = np.asarray(sample_weights, dtype=float)
    total = w.sum()
    rows = np.arange(z.shape[0])
    per = logsumexp(z) - z[rows, labels]
    loss = np.dot(w, per) / total

    def vjp(g):
        d = softmax(z)
        d[rows, labels] -= 1.0
        return g * d * (w / total)[:, None]

    return logits._new(np.asarray(loss), ((logits, vjp),), "wxent")
