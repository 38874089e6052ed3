"""Auxiliary functions and executable versions of the supporting lemmas.

The superadditivity surplus ``psi``, the correction profile ``m_p`` and its
one-variable form ``theta``, and the elementary three-point inequality in
``slavin_check`` all enter the supersolution gap estimates.  Each lemma with
an unnamed constant becomes a (scan, assert) pair: a deterministic seeded
scan produces the constant, and a fresh sample validates it.  The scans are
falsification tools, not proofs.

Both displayed closed forms for ``m_p`` in terms of ``theta`` agree with the
min definition pointwise for every p > 1 (the min of the two products is
symmetric in which factor carries the power); ``mintheta_identity_defect``
is the brute-force comparison that pins this down.
"""

from __future__ import annotations

import numpy as np

from .model import Operator
from .sampling import admissible_splits, log_uniform, signed_log_uniform


def psi(z, p: float):
    """Superadditivity surplus (sum z_j)^p - sum z_j^p on the nonnegative orthant."""
    z = np.asarray(z, dtype=float)
    if p <= 1.0:
        raise ValueError("p must exceed 1")
    if z.ndim == 0:
        raise ValueError("psi expects an m-vector along the last axis")
    if np.any(z < 0.0):
        raise ValueError("psi is only defined for nonnegative coordinates")
    total = z.sum(axis=-1)
    return total**p - (z**p).sum(axis=-1)


def m_p(y, z, p: float):
    """min(|y|^{p-1} z, |y| z^{p-1}) with |y| Euclidean; jointly p-homogeneous.

    ``y`` either matches the shape of ``z`` (scalar channel, elementwise
    absolute value) or carries one extra trailing channel axis that is
    reduced by the Euclidean norm.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(z < 0.0):
        raise ValueError("z must be nonnegative")
    if y.ndim == z.ndim + 1:
        ynorm = np.linalg.norm(y, axis=-1)
    elif y.ndim == z.ndim:
        ynorm = np.abs(y)
    else:
        raise ValueError("y must match z's shape or carry one trailing channel axis")
    return np.minimum(ynorm ** (p - 1.0) * z, ynorm * z ** (p - 1.0))


def theta(t, p: float):
    """min(|t|, |t|^{p-1}); concave and nondecreasing on the positive semi-axis."""
    if p <= 1.0:
        raise ValueError("p must exceed 1")
    t = np.abs(np.asarray(t, dtype=float))
    return np.minimum(t, t ** (p - 1.0))


def mintheta_identity_defect(p: float, seed: int = 0, samples: int = 20000) -> float:
    """Largest relative disagreement between m_p and both theta closed forms."""
    rng = np.random.default_rng(seed)
    y = log_uniform(rng, 1e-6, 1e6, samples)
    z = log_uniform(rng, 1e-6, 1e6, samples)
    direct = m_p(y, z, p)
    form_y = y**p * theta(z / y, p)
    form_z = z**p * theta(y / z, p)
    scale = direct + 1e-300
    return float(
        max(np.max(np.abs(form_y - direct) / scale), np.max(np.abs(form_z - direct) / scale))
    )


# ---------------------------------------------------------------------------
# theta increment lemma: |theta(a+b) - theta(a)| <= K theta(b)
# ---------------------------------------------------------------------------


def _theta_lemma_sample(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (a, b) concentrated on the proof regimes of the increment bound."""
    per = n // 6
    parts_a, parts_b = [], []

    # a = 0 exactly: the ratio equals 1 there
    b = signed_log_uniform(rng, 1e-6, 1e3, per)
    parts_a.append(np.zeros(per))
    parts_b.append(b)

    # |b| near the kink at 1
    b = rng.choice([-1.0, 1.0], per) * (1.0 + rng.normal(scale=0.05, size=per))
    parts_a.append(signed_log_uniform(rng, 1e-6, 1e3, per))
    parts_b.append(b)

    # |a| near 1
    a = rng.choice([-1.0, 1.0], per) * (1.0 + rng.normal(scale=0.05, size=per))
    parts_a.append(a)
    parts_b.append(signed_log_uniform(rng, 1e-6, 1e3, per))

    # |a| comparable to 2|b|
    b = signed_log_uniform(rng, 1e-3, 1e3, per)
    parts_a.append(2.0 * b * (1.0 + rng.normal(scale=0.1, size=per)))
    parts_b.append(b)

    # a = -b: jump down to theta(0)
    b = signed_log_uniform(rng, 1e-3, 1e3, per)
    parts_a.append(-b)
    parts_b.append(b)

    rest = n - 5 * per
    parts_a.append(signed_log_uniform(rng, 1e-6, 1e6, rest))
    parts_b.append(signed_log_uniform(rng, 1e-6, 1e6, rest))

    return np.concatenate(parts_a), np.concatenate(parts_b)


def theta_increment_max_ratio(p: float, samples: int, seed: int) -> float:
    """max |theta(a+b) - theta(a)| / theta(b) over the stratified sample."""
    if not (1.0 < p <= 2.0):
        raise ValueError("the increment lemma requires p in (1, 2]")
    rng = np.random.default_rng(seed)
    a, b = _theta_lemma_sample(samples, rng)
    num = np.abs(theta(a + b, p) - theta(a, p))
    den = theta(b, p)
    mask = den > 0.0
    return float(np.max(num[mask] / den[mask]))


def theta_lemma_constant(p: float, samples: int = 200_000, seed: int = 0) -> float:
    """Empirical increment constant K; finite, and exactly 1 at the a=0 stratum."""
    return theta_increment_max_ratio(p, samples, seed)


# ---------------------------------------------------------------------------
# epsilon lemma: |a+b|^{p-1} <= (1+eps)|a|^{p-1} + C_eps |b|^{p-1}
# ---------------------------------------------------------------------------


def epsilon_constant(p: float, eps: float, grid: int = 20001) -> float:
    """Smallest scanned C_eps for the split power inequality.

    The worst case has a and b of one sign, so by homogeneity it reduces to
    maximizing (1+t)^q - (1+eps) t^q over t >= 0 with q = p-1; the scan runs
    a dense deterministic grid plus the stationary point when q > 1.
    """
    if p < 1.0:
        raise ValueError("p must be >= 1")
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    q = p - 1.0
    t = np.concatenate(
        [
            np.linspace(0.0, 20.0, grid),
            10.0 ** np.linspace(-8.0, 8.0, grid),
        ]
    )
    if q > 1.0:
        t_star = 1.0 / ((1.0 + eps) ** (1.0 / (q - 1.0)) - 1.0)
        t = np.append(t, t_star)
    vals = (1.0 + t) ** q - (1.0 + eps) * t**q
    return float(max(vals.max(), 1.0))


def epsilon_lemma_max_ratio(p: float, eps: float, samples: int, seed: int) -> float:
    """max (|a+b|^{p-1} - (1+eps)|a|^{p-1}) / |b|^{p-1} over a fresh 2-d sample."""
    q = p - 1.0
    rng = np.random.default_rng(seed)
    a = signed_log_uniform(rng, 1e-6, 1e6, samples)
    b = signed_log_uniform(rng, 1e-6, 1e6, samples)
    num = np.abs(a + b) ** q - (1.0 + eps) * np.abs(a) ** q
    return float(np.max(num / np.abs(b) ** q))


# ---------------------------------------------------------------------------
# three-point inequality with the explicit constant 2
# ---------------------------------------------------------------------------


def slavin_lhs(x: np.ndarray) -> np.ndarray:
    """|sum of cyclic signed squares of differences| for rows of 3."""
    x = np.asarray(x, dtype=float)
    d1 = x[..., 2] - x[..., 1]
    d2 = x[..., 0] - x[..., 2]
    d3 = x[..., 1] - x[..., 0]
    return np.abs(d1 * np.abs(d1) + d2 * np.abs(d2) + d3 * np.abs(d3))


def slavin_rhs(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return 2.0 * (
        z[..., 0] * z[..., 1] + z[..., 0] * z[..., 2] + z[..., 1] * z[..., 2]
    )


def slavin_check(x, z) -> tuple[float, float]:
    """Evaluate both sides of the three-point bound at one admissible triple."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != (3,) or z.shape != (3,):
        raise ValueError("expected 3-vectors")
    if np.any(np.abs(x) > z):
        raise ValueError("admissibility requires |x_j| <= z_j for every j")
    return float(slavin_lhs(x)), float(slavin_rhs(z))


def slavin_violations(samples: int, seed: int) -> tuple[int, float]:
    """Count of lhs > rhs (beyond roundoff) and the max ratio on admissible draws."""
    rng = np.random.default_rng(seed)
    xs, zs = admissible_splits(3, samples, rng)
    lhs = slavin_lhs(xs)
    rhs = slavin_rhs(zs)
    scale = zs.max(axis=1) ** 2 + 1e-300
    bad = lhs > rhs + 1e-12 * scale
    pos = rhs > 0
    max_ratio = float(np.max(lhs[pos] / rhs[pos])) * 2.0 if pos.any() else 0.0
    return int(bad.sum()), max_ratio


# ---------------------------------------------------------------------------
# correction-sum estimate against psi
# ---------------------------------------------------------------------------


def i2_max_ratio(T: Operator, p: float, samples: int, seed: int) -> float:
    """max over admissible splits of sum_j m_p((T[dev])_j, z_j) / psi(z)."""
    rng = np.random.default_rng(seed)
    xs, zs = admissible_splits(T.m, samples, rng)
    devs = xs - xs.mean(axis=1, keepdims=True)
    ty = T.apply(devs)  # (n, m, ell)
    corr = m_p(ty, zs, p).sum(axis=1)
    denom = psi(zs, p)
    scale = zs.sum(axis=1) ** p + 1e-300
    mask = denom > 1e-13 * scale
    # where the surplus vanishes the correction sum must vanish with it
    tiny = ~mask
    if np.any(corr[tiny] > 1e-10 * scale[tiny]):
        raise AssertionError("correction sum does not vanish with the surplus")
    return float(np.max(corr[mask] / denom[mask]))


def i2_triangle_max_ratio(T: Operator, samples: int, seed: int) -> float:
    """p = 2, m = 3 form: max of sum_j |(T[dev])_j| z_j over the pair sum."""
    if T.m != 3 or T.ell != 1:
        raise ValueError("the triangle form is specific to m=3, ell=1")
    rng = np.random.default_rng(seed)
    xs, zs = admissible_splits(3, samples, rng)
    devs = xs - xs.mean(axis=1, keepdims=True)
    ty = np.abs(T.apply(devs)[:, :, 0])
    num = (ty * zs).sum(axis=1)
    den = zs[:, 0] * zs[:, 1] + zs[:, 0] * zs[:, 2] + zs[:, 1] * zs[:, 2]
    scale = zs.max(axis=1) ** 2 + 1e-300
    mask = den > 1e-13 * scale
    if np.any(num[~mask] > 1e-10 * scale[~mask]):
        raise AssertionError("correction sum does not vanish with the pair sum")
    return float(np.max(num[mask] / den[mask]))


# ---------------------------------------------------------------------------
# local lower bound for psi near the spike directions
# ---------------------------------------------------------------------------


def psi_local_constant(
    m: int, p: float, samples: int = 100_000, seed: int = 0, radius: float = 0.1
) -> float:
    """min of psi(z)/|z - e_j| over the unit p-sphere shell of the given radius."""
    rng = np.random.default_rng(seed)
    per = max(1, samples // m)
    worst = np.inf
    for j in range(m):
        r = log_uniform(rng, 1e-5, radius, per)
        u = np.abs(rng.normal(size=(per, m)))
        u[:, j] = rng.normal(size=per)
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        v = np.zeros((per, m))
        v[:, j] = 1.0
        v += r[:, None] * u
        v = np.clip(v, 0.0, None)
        v /= ((v**p).sum(axis=1) ** (1.0 / p))[:, None]
        d = v.copy()
        d[:, j] -= 1.0
        dist = np.linalg.norm(d, axis=1)
        mask = (dist > 1e-6) & (dist <= radius)
        if mask.any():
            worst = min(worst, float(np.min(psi(v[mask], p) / dist[mask])))
    return worst


def psi_violations(m: int, p: float, samples: int, seed: int) -> int:
    """Count of negative surplus values on a seeded nonnegative sample."""
    rng = np.random.default_rng(seed)
    z = np.concatenate(
        [
            log_uniform(rng, 1e-6, 1e6, (samples // 2, m)),
            rng.uniform(0.0, 1.0, (samples - samples // 2, m)),
        ]
    )
    return int(np.sum(psi(z, p) < 0.0))


# ---------------------------------------------------------------------------
# scan dispatcher used by the command line
# ---------------------------------------------------------------------------


def scan_constants(
    lemma: str,
    p: float,
    seed: int,
    samples: int = 200_000,
    T: Operator | None = None,
    eps: float = 0.1,
) -> dict:
    """Run one lemma scan and package {lemma, p, constant, samples}."""
    lemma = lemma.strip().lower()
    if lemma == "theta":
        constant = theta_lemma_constant(p, samples, seed)
    elif lemma == "epsilon":
        constant = epsilon_constant(p, eps)
    elif lemma == "i2":
        if T is None:
            raise ValueError("the I2 scan needs an operator")
        constant = i2_max_ratio(T, p, samples, seed)
    elif lemma == "slavin":
        _, constant = slavin_violations(samples, seed)
    elif lemma == "psi-local":
        m = T.m if T is not None else 3
        constant = psi_local_constant(m, p, samples, seed)
    else:
        raise ValueError(f"unknown lemma: {lemma!r}")
    report = {"lemma": lemma, "p": p, "constant": constant, "samples": samples}
    if lemma == "epsilon":
        report["eps"] = eps
    return report
