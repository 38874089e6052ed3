"""Positively homogeneous integrands and the built-in registry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class PhiFunction:
    """A positively p-homogeneous, locally Lipschitz integrand on R^ell.

    ``evaluator`` must be numpy-vectorized.  For ``ell == 1`` it receives a
    plain float array and acts elementwise; for ``ell >= 2`` it receives an
    array whose last axis has length ``ell`` and must reduce that axis.
    ``lipschitz_on_ball`` is a Lipschitz constant valid on the closed unit
    ball (used as metadata by sampled regularity checks, never to rescale
    values).
    """

    name: str
    p: float
    ell: int
    evaluator: Callable[[np.ndarray], np.ndarray]
    lipschitz_on_ball: float

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.ell == 1:
            # accept both (...,) and (..., 1) layouts for scalar integrands
            if y.ndim >= 1 and y.shape[-1] == 1:
                y = y[..., 0]
            return self.evaluator(y)
        if y.ndim == 0 or y.shape[-1] != self.ell:
            raise ValueError(
                f"integrand {self.name!r} expects last axis of length {self.ell}, "
                f"got shape {y.shape}"
            )
        return self.evaluator(y)

    def negated(self) -> "PhiFunction":
        ev = self.evaluator
        return PhiFunction(
            name=f"neg-{self.name}",
            p=self.p,
            ell=self.ell,
            evaluator=lambda y: -ev(y),
            lipschitz_on_ball=self.lipschitz_on_ball,
        )


def builtin_phi(name: str, p: float | None = None, ell: int = 1) -> PhiFunction:
    """Return a registered integrand by name.

    Names: ``signed-square`` (t|t|), ``signed-power`` (sign(t)|t|^p),
    ``abs-p`` (|y|^p, Euclidean norm for ell >= 2), ``zero``.
    """
    key = name.strip().lower()
    if key == "signed-square":
        if ell != 1:
            raise ValueError("signed-square is a scalar integrand (ell = 1)")
        if p is not None and abs(p - 2.0) > 1e-12:
            raise ValueError("signed-square is 2-homogeneous; p must be 2")
        return PhiFunction("signed-square", 2.0, 1, lambda y: y * np.abs(y), 2.0)
    if key == "signed-power":
        if ell != 1:
            raise ValueError("signed-power is a scalar integrand (ell = 1)")
        if p is None:
            raise ValueError("signed-power requires an explicit exponent p")
        q = float(p)
        return PhiFunction(
            "signed-power", q, 1, lambda y: np.sign(y) * np.abs(y) ** q, max(q, 1.0)
        )
    if key == "abs-p":
        if p is None:
            raise ValueError("abs-p requires an explicit exponent p")
        q = float(p)
        if ell == 1:
            ev = lambda y: np.abs(y) ** q
        else:
            ev = lambda y: np.linalg.norm(y, axis=-1) ** q
        return PhiFunction("abs-p", q, ell, ev, max(q, 1.0))
    if key == "zero":
        q = 2.0 if p is None else float(p)
        if ell == 1:
            ev = lambda y: np.zeros_like(np.asarray(y, dtype=float))
        else:
            ev = lambda y: np.zeros(np.asarray(y, dtype=float).shape[:-1])
        return PhiFunction("zero", q, ell, ev, 0.0)
    raise ValueError(f"unknown built-in integrand: {name!r}")


def homogeneity_defect(phi: PhiFunction, seed: int = 0, samples: int = 200) -> float:
    """Largest relative violation of phi(t*y) = t^p phi(y) on a seeded sample."""
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(samples, phi.ell))
    worst = 0.0
    for t in (0.5, 2.0, 7.3):
        lhs = phi(t * y)
        rhs = t**phi.p * phi(y)
        scale = np.abs(lhs) + np.abs(rhs) + 1e-300
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / scale)))
    return worst


def lipschitz_defect(phi: PhiFunction, seed: int = 0, samples: int = 2000) -> float:
    """Largest ratio |phi(a)-phi(b)| / (L |a-b|) over pairs in the unit ball."""
    if phi.lipschitz_on_ball == 0.0:
        return 0.0
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, size=(samples, phi.ell))
    a /= np.maximum(1.0, np.linalg.norm(a, axis=-1, keepdims=True))
    b = a + rng.normal(scale=0.1, size=a.shape)
    b /= np.maximum(1.0, np.linalg.norm(b, axis=-1, keepdims=True))
    num = np.abs(phi(a) - phi(b))
    den = phi.lipschitz_on_ball * np.linalg.norm(a - b, axis=-1) + 1e-300
    return float(np.max(num / den))
