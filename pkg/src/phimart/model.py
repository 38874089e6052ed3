"""m-uniform martingale trees and fractional martingale transforms.

A simple martingale adapted to an m-uniform filtration is stored by its leaf
values in row-major tree order: the children of the node at position ``a`` on
level ``n`` occupy positions ``a*m .. a*m+m-1`` on level ``n+1``.  Interior
node values are always recomputed by averaging descendants, so the martingale
property cannot be violated by construction.

Conventions used throughout:

* the level-0 difference is the starting value itself (``f_0 = F_0``), so the
  damped sum of a constant martingale is that constant;
* all arithmetic is 64-bit binary floating point;
* values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .phi import PhiFunction

_ZERO_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ModelParams:
    """Branching factor, codomain dimension, and exponents of one instance.

    ``alpha`` is free for standalone transforms; inequality contexts require
    ``alpha == (p-1)/p`` and enforce it at construction time.
    """

    m: int
    ell: int
    p: float
    alpha: float

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("branching factor m must be >= 2")
        if self.ell < 1:
            raise ValueError("codomain dimension ell must be >= 1")
        if not (1.0 < self.p < math.inf):
            raise ValueError("exponent p must lie in (1, inf)")
        if not (self.alpha > 0.0):
            raise ValueError("alpha must be positive")

    @property
    def inequality_alpha(self) -> float:
        return (self.p - 1.0) / self.p

    @classmethod
    def for_inequality(cls, m: int, ell: int, p: float) -> "ModelParams":
        return cls(m=m, ell=ell, p=p, alpha=(p - 1.0) / p)

    def check_inequality_alpha(self) -> None:
        target = self.inequality_alpha
        if abs(self.alpha - target) > 1e-12 * max(1.0, abs(target)):
            raise ValueError(
                f"alpha={self.alpha} inconsistent with (p-1)/p={target}; "
                "inequality machinery requires the homogeneity-critical exponent"
            )


@dataclass(frozen=True)
class Operator:
    """Linear map from zero-sum m-vectors to m-by-ell arrays with zero-sum columns.

    ``coefficients[j, c, i]`` is the weight of input coordinate ``i`` in output
    coordinate ``j``, channel ``c``.  The map is stored on all of R^m but is
    only ever applied to zero-sum vectors; applying it to anything else is an
    error.
    """

    m: int
    ell: int
    coefficients: np.ndarray

    def __post_init__(self):
        coeff = np.asarray(self.coefficients, dtype=float)
        if coeff.shape != (self.m, self.ell, self.m):
            raise ValueError(
                f"coefficients must have shape (m, ell, m) = "
                f"({self.m}, {self.ell}, {self.m}); got {coeff.shape}"
            )
        coeff = coeff.copy()
        coeff.setflags(write=False)
        object.__setattr__(self, "coefficients", coeff)
        # the image must consist of zero-sum columns; test on a spanning set of
        # the zero-sum subspace
        scale = float(np.max(np.abs(coeff))) + 1.0
        for i in range(1, self.m):
            v = np.zeros(self.m)
            v[0], v[i] = 1.0, -1.0
            out = np.einsum("jci,i->jc", coeff, v)
            col_sums = out.sum(axis=0)
            if np.any(np.abs(col_sums) > _ZERO_SUM_TOL * scale):
                raise ValueError(
                    "operator does not map zero-sum vectors to zero-sum outputs "
                    f"(column sums {col_sums} on spanning vector {i})"
                )

    def apply(self, x) -> np.ndarray:
        """Apply to zero-sum vectors along the last axis; returns (..., m, ell)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.m:
            raise ValueError(f"expected last axis of length {self.m}, got {x.shape}")
        sums = x.sum(axis=-1)
        scale = np.abs(x).sum(axis=-1) + 1.0
        if np.any(np.abs(sums) > _ZERO_SUM_TOL * scale):
            raise ValueError("operator applied to a vector with nonzero sum")
        return np.einsum("jci,...i->...jc", self.coefficients, x)

    def as_dict(self) -> dict:
        return {"m": self.m, "ell": self.ell, "coefficients": self.coefficients.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Operator":
        return cls(int(d["m"]), int(d["ell"]), np.asarray(d["coefficients"], dtype=float))


def builtin_operator(name: str) -> Operator:
    """Named operators: ``rotation3`` sends (x1,x2,x3) to (x3-x2, x1-x3, x2-x1)."""
    key = name.strip().lower()
    if key == "rotation3":
        coeff = np.array(
            [
                [[0.0, -1.0, 1.0]],
                [[1.0, 0.0, -1.0]],
                [[-1.0, 1.0, 0.0]],
            ]
        )
        return Operator(3, 1, coeff)
    raise ValueError(f"unknown built-in operator: {name!r}")


def zero_operator(m: int, ell: int) -> Operator:
    return Operator(m, ell, np.zeros((m, ell, m)))


@dataclass(frozen=True)
class SimpleMartingale:
    """A depth-N martingale on the m-ary tree, stored by its leaves.

    ``leaves`` has shape (m**depth,) for scalar values or (m**depth, ell) for
    vector values, in row-major tree order.
    """

    m: int
    depth: int
    leaves: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("branching factor m must be >= 2")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        lv = np.asarray(self.leaves, dtype=float)
        if lv.ndim not in (1, 2):
            raise ValueError("leaves must be a 1-d (scalar) or 2-d (vector) array")
        if lv.shape[0] != self.m**self.depth:
            raise ValueError(
                f"expected {self.m ** self.depth} leaves for depth {self.depth}, "
                f"got {lv.shape[0]}"
            )
        lv = lv.copy()
        lv.setflags(write=False)
        object.__setattr__(self, "leaves", lv)

    @classmethod
    def from_leaves(cls, m: int, leaves) -> "SimpleMartingale":
        lv = np.asarray(leaves, dtype=float)
        n = lv.shape[0]
        depth = 0 if n == 1 else round(math.log(n, m))
        if m**depth != n:
            raise ValueError(f"leaf count {n} is not a power of m={m}")
        return cls(m, depth, lv)

    @classmethod
    def constant(cls, m: int, value, depth: int = 0) -> "SimpleMartingale":
        value = np.asarray(value, dtype=float)
        shape = (m**depth,) + value.shape
        return cls(m, depth, np.broadcast_to(value, shape).copy())

    @property
    def n_leaves(self) -> int:
        return self.leaves.shape[0]

    @property
    def is_scalar(self) -> bool:
        return self.leaves.ndim == 1

    @property
    def value_dim(self) -> int:
        return 1 if self.is_scalar else self.leaves.shape[1]

    def as_dict(self) -> dict:
        return {"m": self.m, "depth": self.depth, "leaves": self.leaves.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SimpleMartingale":
        return cls(int(d["m"]), int(d["depth"]), np.asarray(d["leaves"], dtype=float))


def node_values(F: SimpleMartingale, n: int) -> np.ndarray:
    """Values of F_n on the m**n nodes of level n (means of descendant leaves)."""
    if not 0 <= n <= F.depth:
        raise ValueError(f"level {n} outside [0, {F.depth}]")
    block = F.m ** (F.depth - n)
    lv = F.leaves
    shaped = lv.reshape((F.m**n, block) + lv.shape[1:])
    return shaped.mean(axis=1)


def martingale_differences(F: SimpleMartingale) -> list[np.ndarray]:
    """The sequence f_1..f_N with f_n = F_n - F_{n-1}, each on level-n nodes.

    Restricted to the children of any node, each difference sums to zero.
    """
    out = []
    prev = node_values(F, 0)
    for n in range(1, F.depth + 1):
        cur = node_values(F, n)
        out.append(cur - np.repeat(prev, F.m, axis=0))
        prev = cur
    return out


def _abs_values(vals: np.ndarray) -> np.ndarray:
    if vals.ndim == 1:
        return np.abs(vals)
    return np.linalg.norm(vals, axis=1)


def abs_level_means(F: SimpleMartingale) -> np.ndarray:
    """E|F_n| for n = 0..N (Euclidean magnitude for vector values)."""
    return np.array(
        [float(_abs_values(node_values(F, n)).mean()) for n in range(F.depth + 1)]
    )


def l1_norm(F: SimpleMartingale) -> float:
    """sup_n E|F_n|; attained at some level for simple martingales."""
    return float(abs_level_means(F).max())


def abs_final_mean(F: SimpleMartingale) -> float:
    """E|F_infinity|, the quantity the Bellman function is parametrized by."""
    return float(_abs_values(F.leaves).mean())


def riesz_potential(F: SimpleMartingale, alpha: float) -> SimpleMartingale:
    """Damped difference sum: level-n value is sum_{k<=n} m^{-alpha k} f_k.

    The result is itself a martingale (the damping is predictable), so it is
    returned as a SimpleMartingale whose level values recover the partial sums.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    acc = node_values(F, 0)
    prev = acc
    for n in range(1, F.depth + 1):
        cur = node_values(F, n)
        diff = cur - np.repeat(prev, F.m, axis=0)
        acc = np.repeat(acc, F.m, axis=0) + float(F.m) ** (-alpha * n) * diff
        prev = cur
    return SimpleMartingale(F.m, F.depth, acc)


@dataclass(frozen=True)
class TransformResult:
    """Leaf values of the vector transform; shape (m**depth, ell)."""

    m: int
    depth: int
    ell: int
    leaf_values: np.ndarray = field(repr=False)

    def __post_init__(self):
        lv = np.asarray(self.leaf_values, dtype=float)
        if lv.shape != (self.m**self.depth, self.ell):
            raise ValueError("leaf_values must have shape (m**depth, ell)")
        lv = lv.copy()
        lv.setflags(write=False)
        object.__setattr__(self, "leaf_values", lv)

    def as_martingale(self) -> SimpleMartingale:
        return SimpleMartingale(self.m, self.depth, self.leaf_values)

    @property
    def scalar_leaves(self) -> np.ndarray:
        if self.ell != 1:
            raise ValueError("scalar view requires ell == 1")
        return self.leaf_values[:, 0]


def fractional_transform(F: SimpleMartingale, T: Operator, alpha: float) -> TransformResult:
    """Apply the operator to each martingale difference, damp by level, and sum.

    The level-(k+1) difference restricted to a level-k node is a zero-sum
    m-vector; the operator turns it into m values in R^ell that are re-embedded
    on the same children and weighted by m^{-alpha (k+1)}.  The returned leaf
    values are the totals over all levels.  The map is linear in F and kills
    constants.
    """
    if not F.is_scalar:
        raise ValueError("the transform is defined for scalar-valued martingales")
    if T.m != F.m:
        raise ValueError(f"branching factor mismatch: martingale m={F.m}, operator m={T.m}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    K = F.n_leaves
    out = np.zeros((K, T.ell))
    prev = node_values(F, 0)
    for k in range(F.depth):
        cur = node_values(F, k + 1)
        d = cur.reshape(-1, F.m) - prev[:, None]  # zero-sum rows, one per level-k node
        tv = np.einsum("jci,ai->ajc", T.coefficients, d)  # (m^k, m, ell)
        weight = float(F.m) ** (-alpha * (k + 1))
        out += weight * np.repeat(tv.reshape(-1, T.ell), K // (F.m ** (k + 1)), axis=0)
        prev = cur
    return TransformResult(F.m, F.depth, T.ell, out)


def phi_functional(
    F: SimpleMartingale,
    T: Operator,
    alpha: float,
    phi: PhiFunction,
    y=0.0,
) -> float:
    """Exact finite average of phi(transform + y) over the leaves."""
    if phi.ell != T.ell:
        raise ValueError(f"integrand dimension {phi.ell} != operator dimension {T.ell}")
    tr = fractional_transform(F, T, alpha)
    offset = np.zeros(T.ell)
    offset[...] = y
    vals = phi(tr.leaf_values + offset)
    return float(np.mean(vals))


def glue_martingale(children: list[SimpleMartingale]) -> SimpleMartingale:
    """Join m subtrees under a fresh root; child i starts at its own F_0.

    Children of different depths are padded by constant continuation, which
    leaves each of them unchanged as a martingale.
    """
    m = len(children)
    if m < 2:
        raise ValueError("need at least two children to glue")
    if any(c.m != m for c in children):
        raise ValueError("every child must have branching factor equal to the child count")
    if len({c.is_scalar for c in children}) != 1:
        raise ValueError("children must be all scalar or all vector valued")
    depth = max(c.depth for c in children)
    padded = []
    for c in children:
        reps = m ** (depth - c.depth)
        padded.append(np.repeat(c.leaves, reps, axis=0))
    return SimpleMartingale(m, depth + 1, np.concatenate(padded, axis=0))
