"""Delta vectors and the two cancellation conditions.

The delta vector D_j is the zero-sum m-vector with m-1 in slot j, the
one-step shape of a martingale concentrating on a single child.  An operator
is weakly canceling when every T[D_j] vanishes in its own slot j; an
integrand is T-canceling when the off-slot values of each T[D_j] average the
integrand to zero.  The second condition is what makes iterated single-child
refinements harmless; ``necessity_ratios`` exhibits the linear blow-up when
it fails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, Operator, SimpleMartingale, abs_final_mean, phi_functional
from .phi import PhiFunction

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class DeltaVector:
    j: int
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)


def delta_vector(m: int, j: int) -> DeltaVector:
    """The zero-sum vector with m-1 in slot j (1-based)."""
    if not 1 <= j <= m:
        raise ValueError(f"slot index {j} outside [1, {m}]")
    entries = -np.ones(m)
    entries[j - 1] = m - 1.0
    return DeltaVector(j, entries)


@dataclass(frozen=True)
class WeakCancellationReport:
    ok: bool
    residuals: np.ndarray  # |T[D_j]|_j per j, Euclidean over channels
    tol: float


@dataclass(frozen=True)
class PhiCancellationReport:
    ok: bool
    sums: np.ndarray  # sum over i != j of phi((T[D_j])_i) per j
    tol: float


def is_weakly_canceling(T: Operator, tol: float = DEFAULT_TOL) -> WeakCancellationReport:
    """Check (T[D_j])_j = 0 for every j; residuals are reported per slot."""
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    residuals = np.empty(T.m)
    for j in range(1, T.m + 1):
        out = T.apply(delta_vector(T.m, j).entries)  # (m, ell)
        residuals[j - 1] = float(np.linalg.norm(out[j - 1]))
    return WeakCancellationReport(bool(np.max(residuals) <= tol), residuals, tol)


def is_phi_canceling(
    T: Operator, phi: PhiFunction, tol: float = DEFAULT_TOL
) -> PhiCancellationReport:
    """Check sum_{i != j} phi((T[D_j])_i) = 0 for every j."""
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    if phi.ell != T.ell:
        raise ValueError("integrand and operator codomain dimensions differ")
    sums = np.empty(T.m)
    for j in range(1, T.m + 1):
        out = T.apply(delta_vector(T.m, j).entries)  # (m, ell)
        vals = phi(out)  # (m,)
        sums[j - 1] = float(vals.sum() - vals[j - 1])
    return PhiCancellationReport(bool(np.max(np.abs(sums)) <= tol), sums, tol)


def delta_martingale(m: int, j: int, scale: float = 1.0) -> SimpleMartingale:
    """Depth-1 martingale with F_0 = scale: one leaf scale*m, the rest 0."""
    if not 1 <= j <= m:
        raise ValueError(f"slot index {j} outside [1, {m}]")
    if scale <= 0:
        raise ValueError("scale must be positive")
    leaves = np.zeros(m)
    leaves[j - 1] = scale * m
    return SimpleMartingale(m, 1, leaves)


def delta_refinement_martingale(
    m: int, j: int, depth: int, scale: float = 1.0
) -> SimpleMartingale:
    """Self-similar refinement of the delta split down to the given depth.

    At each level the mass-carrying node splits again toward child j, leaving
    one leaf equal to scale*m**depth on the all-j spine and zeros elsewhere.
    E|F_infinity| = scale at every depth.
    """
    if not 1 <= j <= m:
        raise ValueError(f"slot index {j} outside [1, {m}]")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    leaves = np.zeros(m**depth)
    spine = sum((j - 1) * m**lev for lev in range(depth))
    leaves[spine] = scale * float(m) ** depth
    return SimpleMartingale(m, depth, leaves)


def necessity_ratios(
    instance: ModelParams,
    T: Operator,
    phi: PhiFunction,
    depths: range | list[int],
    j: int = 1,
) -> list[float]:
    """|E phi(transform)| / (E|F_inf|)^p along iterated delta refinements.

    For a weakly canceling operator the spine contributions vanish slot-wise,
    so each level adds the same off-slot average; the ratio grows linearly in
    depth exactly when the integrand fails to be T-canceling.
    """
    instance.check_inequality_alpha()
    ratios = []
    for depth in depths:
        F = delta_refinement_martingale(instance.m, j, depth)
        e_phi = phi_functional(F, T, instance.alpha, phi)
        e_abs = abs_final_mean(F)
        ratios.append(abs(e_phi) / e_abs**instance.p)
    return ratios
