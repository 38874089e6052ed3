"""Stratified samplers shared by the lemma scans and the verifier.

Every scanned inequality in this package splits into regimes (small vs large
arguments, boundary vs bulk, one dominant coordinate), so uniform sampling
would miss the binding sets.  The samplers below mix uniform, log-radial, and
boundary-concentrated draws and always accept an explicit rng for
reproducibility.
"""

from __future__ import annotations

import numpy as np


def log_uniform(rng: np.random.Generator, lo: float, hi: float, size) -> np.ndarray:
    return 10.0 ** rng.uniform(np.log10(lo), np.log10(hi), size)


def signed_log_uniform(rng: np.random.Generator, lo: float, hi: float, size) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size) * log_uniform(rng, lo, hi, size)


def exact_delta_head_size(m: int) -> int:
    """Rows reserved at the start of a split sample for exact delta splits.

    Two copies per slot and sign: the first half is meant to be probed at
    zero offset (the necessity configuration), the second at small offsets
    (the regime that pins the correction constant).
    """
    return 4 * m


def admissible_splits(
    m: int,
    n: int,
    rng: np.random.Generator,
    include_exact_deltas: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample n splits (xs, zs) with |x_j| <= z_j, stratified by regime.

    Strata: exact one-child splits (the delta configuration), near-delta
    z-vectors (half of them with the children pinned near the co-monotone
    boundary, the shape that tightens the correction estimates), constant
    splits, boundary splits with z_j = |x_j|, and bulk draws across scales.
    """
    xs = np.empty((n, m))
    zs = np.empty((n, m))
    pos = 0

    if include_exact_deltas:
        for _copy in range(2):
            for j in range(m):
                for sign in (1.0, -1.0):
                    if pos >= n:
                        break
                    zs[pos] = 0.0
                    xs[pos] = 0.0
                    zs[pos, j] = float(m)
                    xs[pos, j] = sign * float(m)
                    pos += 1

    n_rest = n - pos
    counts = {
        "near_delta": n_rest // 4,
        "constant": n_rest // 10,
        "boundary": n_rest // 4,
    }
    counts["bulk"] = n_rest - sum(counts.values())

    k = counts["near_delta"]
    if k:
        j = rng.integers(0, m, k)
        eps = log_uniform(rng, 1e-6, 0.5, k)
        noise = rng.dirichlet(np.ones(m), k)
        z = eps[:, None] * noise
        z[np.arange(k), j] += 1.0
        scale = log_uniform(rng, 0.1, 10.0, k)
        z *= scale[:, None]
        x = rng.uniform(-1.0, 1.0, (k, m)) * z
        comonotone = rng.random(k) < 0.5
        sgn = rng.choice([-1.0, 1.0], k)
        frac = rng.uniform(0.7, 1.0, (k, m))
        x[comonotone] = (sgn[:, None] * frac * z)[comonotone]
        zs[pos : pos + k] = z
        xs[pos : pos + k] = x
        pos += k

    k = counts["constant"]
    if k:
        x0 = signed_log_uniform(rng, 1e-3, 1e3, k)
        z0 = np.abs(x0) * (1.0 + rng.exponential(1.0, k))
        zs[pos : pos + k] = z0[:, None]
        xs[pos : pos + k] = x0[:, None]
        pos += k

    k = counts["boundary"]
    if k:
        x = signed_log_uniform(rng, 1e-3, 1e3, (k, m))
        xs[pos : pos + k] = x
        zs[pos : pos + k] = np.abs(x)
        pos += k

    k = counts["bulk"]
    if k:
        z = log_uniform(rng, 1e-3, 1e3, (k, m))
        x = rng.uniform(-1.0, 1.0, (k, m)) * z
        # sprinkle exact-boundary coordinates into the bulk
        hit = rng.random((k, m)) < 0.15
        x[hit] = np.sign(x[hit] + 1e-300) * z[hit]
        zs[pos : pos + k] = z
        xs[pos : pos + k] = x
        pos += k

    return xs[:n], zs[:n]


def offsets(ell: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample n offset vectors: a heavy atom at 0 plus log-radial directions."""
    y = np.zeros((n, ell))
    radial = rng.random(n) >= 0.3
    k = int(radial.sum())
    if k:
        if ell == 1:
            y[radial, 0] = signed_log_uniform(rng, 1e-3, 1e3, k)
        else:
            dirs = rng.normal(size=(k, ell))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            y[radial] = dirs * log_uniform(rng, 1e-3, 1e3, k)[:, None]
    return y
