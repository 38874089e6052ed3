"""Candidate supersolutions: evaluation, verification, fitting, chain bounds.

A candidate G(x, y, z) = phi(y) + C1 * correction(y, z) + C2 * z^p (min-form
correction for p <= 2, sum-form for p >= 2) never depends on x.  It is a
supersolution when it dominates the one-step split average

    G(x, y, z) >= m^{-p} sum_j G(x_j, m^alpha y + (T[dev])_j, z_j)

over all admissible splits and satisfies the boundary floor
G(x, y, |x|) >= phi(y).  Verification here is Monte-Carlo falsification over
regime-stratified splits: a PASS means "no violation found in N samples",
never a proof.

The split gap is affine in (C1, C2), so fitting precomputes the three
bracket arrays once per sample set and scans the constant grid cheaply.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cancellation import is_phi_canceling, is_weakly_canceling
from .model import (
    ModelParams,
    Operator,
    SimpleMartingale,
    abs_final_mean,
    fractional_transform,
    node_values,
    phi_functional,
)
from .phi import PhiFunction
from .sampling import admissible_splits, exact_delta_head_size, log_uniform, offsets

MEMBERSHIP_TOL = 1e-12
DEFAULT_TOL_REL = 1e-9


@dataclass(frozen=True)
class BellmanPoint:
    """A point (x, y, z) of the domain {|x| <= z}; outside points are rejected."""

    x: float
    y: np.ndarray
    z: float

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if abs(self.x) > self.z * (1.0 + MEMBERSHIP_TOL) + 1e-300:
            raise ValueError(f"point ({self.x}, ..., {self.z}) lies outside |x| <= z")


@dataclass(frozen=True)
class SupersolutionParams:
    """Constants of the candidate; branch selects the correction shape."""

    C1: float
    C2: float
    branch: str = "min"  # "min" for p <= 2, "sum" for p >= 2

    def __post_init__(self):
        if self.C1 < 0 or self.C2 < 0:
            raise ValueError("constants must be nonnegative")
        if self.branch not in ("min", "sum"):
            raise ValueError("branch must be 'min' or 'sum'")

    @staticmethod
    def default_branch(p: float) -> str:
        return "min" if p <= 2.0 else "sum"

    def check_branch(self, p: float) -> None:
        if self.branch == "min" and p > 2.0:
            raise ValueError("min-form correction is only valid for p <= 2")
        if self.branch == "sum" and p < 2.0:
            raise ValueError("sum-form correction is only valid for p >= 2")


@dataclass(frozen=True)
class SplitConfiguration:
    """One admissible split: offset y, child values x_j, child budgets z_j."""

    y: np.ndarray
    xs: np.ndarray
    zs: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        xs = np.asarray(self.xs, dtype=float)
        zs = np.asarray(self.zs, dtype=float)
        if xs.shape != zs.shape or xs.ndim != 1:
            raise ValueError("xs and zs must be flat arrays of equal length")
        scale = float(np.max(zs)) + 1e-300
        if np.any(np.abs(xs) > zs * (1.0 + MEMBERSHIP_TOL) + 1e-12 * scale):
            raise ValueError("every child must satisfy |x_j| <= z_j")
        for name, arr in (("y", y), ("xs", xs), ("zs", zs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def x(self) -> float:
        return float(self.xs.mean())

    @property
    def z(self) -> float:
        return float(self.zs.mean())

    @property
    def deviations(self) -> np.ndarray:
        return self.xs - self.xs.mean()


@dataclass(frozen=True)
class SupersolutionSpec:
    """Instance + operator + integrand + constants, checked for consistency."""

    instance: ModelParams
    T: Operator
    phi: PhiFunction
    params: SupersolutionParams

    def __post_init__(self):
        self.instance.check_inequality_alpha()
        if self.T.m != self.instance.m or self.T.ell != self.instance.ell:
            raise ValueError("operator dimensions disagree with the instance")
        if self.phi.ell != self.instance.ell:
            raise ValueError("integrand dimension disagrees with the instance")
        if abs(self.phi.p - self.instance.p) > 1e-12:
            raise ValueError("integrand homogeneity disagrees with the instance")
        self.params.check_branch(self.instance.p)


def _correction(ynorm: np.ndarray, z: np.ndarray, p: float, branch: str) -> np.ndarray:
    a = ynorm ** (p - 1.0) * z
    b = ynorm * z ** (p - 1.0)
    return np.minimum(a, b) if branch == "min" else a + b


def _values(x, y, z, params: SupersolutionParams, phi: PhiFunction) -> np.ndarray:
    # x is accepted for interface symmetry; the candidate never reads it
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    ynorm = np.abs(y[..., 0]) if phi.ell == 1 else np.linalg.norm(y, axis=-1)
    return (
        phi(y)
        + params.C1 * _correction(ynorm, z, phi.p, params.branch)
        + params.C2 * z**phi.p
    )


def eval_G(point: BellmanPoint, params: SupersolutionParams, phi: PhiFunction) -> float:
    """Candidate value at one domain point."""
    if point.y.shape != (phi.ell,):
        raise ValueError(f"offset must have shape ({phi.ell},)")
    params.check_branch(phi.p)
    return float(_values(point.x, point.y[None, :], np.array([point.z]), params, phi)[0])


def check_boundary(
    params: SupersolutionParams,
    phi: PhiFunction,
    sample: tuple[np.ndarray, np.ndarray],
) -> dict:
    """Slack of G(x, y, |x|) - phi(y) over sampled (x, y) pairs.

    Nonnegative constants make the slack nonnegative automatically; a
    violation indicates a sign bug, so it is reported rather than raised.
    """
    x, y = sample
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    slack = _values(x, y, np.abs(x), params, phi) - phi(y)
    scale = np.abs(phi(y)) + np.abs(x) ** phi.p + 1e-300
    rel = slack / scale
    i = int(np.argmin(rel))
    return {
        "ok": bool(rel[i] >= -DEFAULT_TOL_REL),
        "min_slack": float(slack[i]),
        "min_rel_slack": float(rel[i]),
        "n": int(x.shape[0]),
    }


@dataclass
class GapComponents:
    """Per-split brackets of the gap, affine in the constants.

    gap = phi_part + C1 * corr_part + C2 * power_part, and the matching
    magnitude arrays give the roundoff scale of each split.
    """

    phi_part: np.ndarray
    corr_part: np.ndarray
    power_part: np.ndarray
    phi_mag: np.ndarray
    corr_mag: np.ndarray
    power_mag: np.ndarray
    y: np.ndarray
    xs: np.ndarray
    zs: np.ndarray

    def gap(self, C1: float, C2: float) -> np.ndarray:
        return self.phi_part + C1 * self.corr_part + C2 * self.power_part

    def scale(self, C1: float, C2: float) -> np.ndarray:
        return self.phi_mag + C1 * self.corr_mag + C2 * self.power_mag + 1e-300

    def rel_gap(self, C1: float, C2: float) -> np.ndarray:
        return self.gap(C1, C2) / self.scale(C1, C2)

    def universal_violations(self, tol_rel: float = DEFAULT_TOL_REL) -> np.ndarray:
        """Rows that defeat every constant choice.

        The gap is affine in (C1, C2) with nonnegative multipliers, so a split
        whose phi bracket is genuinely negative while the correction and power
        brackets are nonpositive violates the inequality no matter how large
        the constants get; large constants only dilute its relative size.
        Each bracket is compared against its own magnitude, which keeps the
        test sound under roundoff.
        """
        return np.nonzero(
            (self.phi_part < -1e-6 * self.phi_mag - 1e-300)
            & (self.corr_part <= tol_rel * self.corr_mag + 1e-300)
            & (self.power_part <= tol_rel * self.power_mag + 1e-300)
        )[0]


def gap_components(
    instance: ModelParams,
    T: Operator,
    phi: PhiFunction,
    branch: str,
    y: np.ndarray,
    xs: np.ndarray,
    zs: np.ndarray,
) -> GapComponents:
    """Evaluate the three gap brackets for a batch of splits."""
    m, p, alpha = instance.m, instance.p, instance.alpha
    w = float(m) ** (-p)
    x_par = xs.mean(axis=1)
    z_par = zs.mean(axis=1)
    devs = xs - x_par[:, None]
    ty = T.apply(devs)  # (n, m, ell)
    y_child = float(m) ** alpha * y[:, None, :] + ty

    phi_par = phi(y)
    phi_ch = phi(y_child)  # (n, m) after the channel axis is reduced
    phi_ch_sum = phi_ch.sum(axis=1)
    phi_ch_mag = np.abs(phi_ch).sum(axis=1)

    yn_par = np.abs(y[:, 0]) if phi.ell == 1 else np.linalg.norm(y, axis=-1)
    yn_ch = np.abs(y_child[..., 0]) if phi.ell == 1 else np.linalg.norm(y_child, axis=-1)
    corr_par = _correction(yn_par, z_par, p, branch)
    corr_ch = _correction(yn_ch, zs, p, branch).sum(axis=1)

    pow_par = z_par**p
    pow_ch = (zs**p).sum(axis=1)

    return GapComponents(
        phi_part=phi_par - w * phi_ch_sum,
        corr_part=corr_par - w * corr_ch,
        power_part=pow_par - w * pow_ch,
        phi_mag=np.abs(phi_par) + w * phi_ch_mag,
        corr_mag=corr_par + w * corr_ch,
        power_mag=pow_par + w * pow_ch,
        y=y,
        xs=xs,
        zs=zs,
    )


def main_inequality_gap(spec: SupersolutionSpec, split: SplitConfiguration) -> float:
    """G at the split mean minus the weighted child average; >= 0 certifies the split."""
    comp = gap_components(
        spec.instance,
        spec.T,
        spec.phi,
        spec.params.branch,
        split.y[None, :],
        split.xs[None, :],
        split.zs[None, :],
    )
    return float(comp.gap(spec.params.C1, spec.params.C2)[0])


def _sample_batch(instance: ModelParams, n: int, seed: int):
    rng = np.random.default_rng(seed)
    xs, zs = admissible_splits(instance.m, n, rng)
    y = offsets(instance.ell, n, rng)
    # exact delta heads: first half at zero offset (necessity configuration),
    # second half at small offsets (the regime binding the correction constant)
    head = min(exact_delta_head_size(instance.m), n)
    half = head // 2
    y[:half] = 0.0
    k = head - half
    if k > 0:
        mags = log_uniform(rng, 1e-4, 10.0, k) * rng.choice([-1.0, 1.0], k)
        y[half:head] = 0.0
        y[half:head, 0] = mags
    return y, xs, zs


@dataclass
class VerifyReport:
    ok: bool
    n: int
    seed: int
    tol_rel: float
    min_gap: float
    min_rel_gap: float
    worst: dict
    boundary: dict
    cancellation_ok: bool
    universal_violations: int = 0
    worst_table: list = field(default_factory=list)
    rel_gaps: np.ndarray | None = None

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "n": self.n,
            "seed": self.seed,
            "tol_rel": self.tol_rel,
            "min_gap": self.min_gap,
            "min_rel_gap": self.min_rel_gap,
            "worst": self.worst,
            "boundary": self.boundary,
            "cancellation_ok": self.cancellation_ok,
            "universal_violations": self.universal_violations,
        }


def _check_cancellation(spec_or_args) -> bool:
    instance, T, phi = spec_or_args
    return bool(is_weakly_canceling(T).ok and is_phi_canceling(T, phi).ok)


def verify_supersolution(
    spec: SupersolutionSpec,
    n_samples: int,
    seed: int,
    tol_rel: float = DEFAULT_TOL_REL,
    require_cancellation: bool = True,
    worst_k: int = 100,
) -> VerifyReport:
    """Min relative gap over stratified splits; PASS iff it stays above -tol_rel."""
    cancel_ok = _check_cancellation((spec.instance, spec.T, spec.phi))
    if require_cancellation and not cancel_ok:
        raise ValueError(
            "cancellation precheck failed; pass require_cancellation=False to probe anyway"
        )
    y, xs, zs = _sample_batch(spec.instance, n_samples, seed)
    comp = gap_components(spec.instance, spec.T, spec.phi, spec.params.branch, y, xs, zs)
    rel = comp.rel_gap(spec.params.C1, spec.params.C2)
    gaps = comp.gap(spec.params.C1, spec.params.C2)
    order = np.argsort(rel)
    i = int(order[0])
    worst = {
        "gap": float(gaps[i]),
        "rel_gap": float(rel[i]),
        "y": comp.y[i].tolist(),
        "xs": comp.xs[i].tolist(),
        "zs": comp.zs[i].tolist(),
    }
    table = [
        {
            "gap": float(gaps[k]),
            "rel_gap": float(rel[k]),
            "y": comp.y[k].tolist(),
            "xs": comp.xs[k].tolist(),
            "zs": comp.zs[k].tolist(),
        }
        for k in order[: min(worst_k, n_samples)]
    ]
    rng = np.random.default_rng(seed + 1)
    bx = rng.normal(scale=3.0, size=2000)
    by = offsets(spec.instance.ell, 2000, rng)
    boundary = check_boundary(spec.params, spec.phi, (bx, by))
    universal = comp.universal_violations(tol_rel)
    return VerifyReport(
        ok=bool(rel[i] >= -tol_rel) and boundary["ok"] and universal.size == 0,
        n=n_samples,
        seed=seed,
        tol_rel=tol_rel,
        min_gap=float(gaps[i]),
        min_rel_gap=float(rel[i]),
        worst=worst,
        boundary=boundary,
        cancellation_ok=cancel_ok,
        universal_violations=int(universal.size),
        worst_table=table,
        rel_gaps=rel,
    )


@dataclass
class FitResult:
    ok: bool
    params: SupersolutionParams | None
    c1_grid_max: float
    c2_grid_max: float
    min_rel_gap_train: float
    min_rel_gap_val: float
    n_samples: int
    seed: int

    def as_dict(self) -> dict:
        d = {
            "ok": self.ok,
            "c1_grid_max": self.c1_grid_max,
            "c2_grid_max": self.c2_grid_max,
            "min_rel_gap_train": self.min_rel_gap_train,
            "min_rel_gap_val": self.min_rel_gap_val,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }
        if self.params is not None:
            d["C1"] = self.params.C1
            d["C2"] = self.params.C2
            d["branch"] = self.params.branch
        return d


def fit_constants(
    instance: ModelParams,
    T: Operator,
    phi: PhiFunction,
    n_samples: int,
    seed: int,
    tol_rel: float = DEFAULT_TOL_REL,
    fit_tol_rel: float = 1e-12,
    require_cancellation: bool = True,
    c1_exponents: range = range(-4, 21),
    c2_exponents: range = range(-4, 21),
) -> FitResult:
    """Smallest (C1, C2) on the log grid passing train and validation samples.

    C2 candidates follow the families 2^j * C1^q with q in {1, p-1, p}, since
    the feasible C2 threshold grows with C1.  The scan is lexicographic in
    (C1, C2); the affine structure of the gap makes each candidate a single
    vectorized reduction.  Candidates are accepted at the roundoff-level
    ``fit_tol_rel`` rather than the looser verification tolerance, so the
    returned constants carry margin against fresh samples.  If either sample
    set contains a split that defeats every constant choice, the fit fails
    immediately at the grid ceiling.
    """
    instance.check_inequality_alpha()
    cancel_ok = _check_cancellation((instance, T, phi))
    if require_cancellation and not cancel_ok:
        raise ValueError(
            "cancellation precheck failed; pass require_cancellation=False to probe anyway"
        )
    branch = SupersolutionParams.default_branch(instance.p)
    y_tr, xs_tr, zs_tr = _sample_batch(instance, n_samples, seed)
    y_va, xs_va, zs_va = _sample_batch(instance, n_samples, seed + 104729)
    train = gap_components(instance, T, phi, branch, y_tr, xs_tr, zs_tr)
    val = gap_components(instance, T, phi, branch, y_va, xs_va, zs_va)

    c1_grid = [2.0**k for k in c1_exponents]
    q_family = sorted({1.0, instance.p - 1.0, instance.p})
    ceiling = FitResult(
        ok=False,
        params=None,
        c1_grid_max=max(c1_grid),
        c2_grid_max=float(max(2.0**max(c2_exponents) * max(c1_grid) ** q for q in q_family)),
        min_rel_gap_train=-np.inf,
        min_rel_gap_val=-np.inf,
        n_samples=n_samples,
        seed=seed,
    )
    if train.universal_violations(tol_rel).size or val.universal_violations(tol_rel).size:
        return ceiling

    worst_train, worst_val = -np.inf, -np.inf
    for c1 in c1_grid:
        c2_grid = np.unique(
            np.array([2.0**j * c1**q for j in c2_exponents for q in q_family])
        )
        for c2 in c2_grid:
            mt = float(np.min(train.rel_gap(c1, c2)))
            worst_train = max(worst_train, mt)
            if mt < -fit_tol_rel:
                continue
            mv = float(np.min(val.rel_gap(c1, c2)))
            worst_val = max(worst_val, mv)
            if mv < -fit_tol_rel:
                continue
            return FitResult(
                ok=True,
                params=SupersolutionParams(float(c1), float(c2), branch),
                c1_grid_max=max(c1_grid),
                c2_grid_max=float(c2_grid[-1]),
                min_rel_gap_train=mt,
                min_rel_gap_val=mv,
                n_samples=n_samples,
                seed=seed,
            )
    ceiling.min_rel_gap_train = worst_train
    ceiling.min_rel_gap_val = worst_val
    return ceiling


def fit_two_sided(
    instance: ModelParams,
    T: Operator,
    phi: PhiFunction,
    n_samples: int,
    seed: int,
    **kwargs,
) -> dict:
    """Fit for phi and its negation; the common upper constant is max(C2+, C2-)."""
    plus = fit_constants(instance, T, phi, n_samples, seed, **kwargs)
    minus = fit_constants(instance, T, phi.negated(), n_samples, seed + 1, **kwargs)
    upper = None
    if plus.ok and minus.ok:
        upper = max(plus.params.C2, minus.params.C2)
    return {"plus": plus, "minus": minus, "upper_constant": upper}


def supermartingale_check(
    spec: SupersolutionSpec,
    F: SimpleMartingale,
    y0=0.0,
    tol_rel: float = DEFAULT_TOL_REL,
) -> dict:
    """Exact one-tree check that the weighted G-process decreases on average.

    Builds X_n = m^{-(p-1)n} G(F_n, m^{alpha n}(y0 + transform_n), E(|F_inf| | level n))
    on every node and asserts the conditional mean of X_{n+1} never exceeds
    X_n beyond roundoff; also checks the endgame bound
    G(F_0, y0, E|F_inf|) >= E phi(y0 + transform).
    """
    inst = spec.instance
    m, p, alpha = inst.m, inst.p, inst.alpha
    offset = np.zeros(inst.ell)
    offset[...] = y0
    tr = fractional_transform(F, spec.T, alpha).as_martingale()
    zmart = SimpleMartingale(F.m, F.depth, np.abs(F.leaves))

    levels_x = [node_values(F, n) for n in range(F.depth + 1)]
    levels_t = [node_values(tr, n) for n in range(F.depth + 1)]
    levels_z = [node_values(zmart, n) for n in range(F.depth + 1)]

    X = []
    for n in range(F.depth + 1):
        yk = float(m) ** (alpha * n) * (offset[None, :] + levels_t[n])
        g = _values(levels_x[n], yk, levels_z[n], spec.params, spec.phi)
        X.append(float(m) ** (-(p - 1.0) * n) * g)

    worst = -np.inf
    for n in range(F.depth):
        cond = X[n + 1].reshape(-1, m).mean(axis=1)
        scale = np.abs(X[n]) + np.abs(cond) + 1e-300
        worst = max(worst, float(np.max((cond - X[n]) / scale)))
    if F.depth == 0:
        worst = 0.0

    lhs = phi_functional(F, spec.T, alpha, spec.phi, y=offset)
    rhs = float(X[0][0])
    end_scale = abs(lhs) + abs(rhs) + 1e-300
    endgame_ok = lhs <= rhs + tol_rel * end_scale
    return {
        "ok": bool(worst <= tol_rel) and endgame_ok,
        "worst_rel_decrement": worst,
        "endgame_ok": bool(endgame_ok),
        "endgame_lhs": lhs,
        "endgame_rhs": rhs,
    }


def supermartingale_check_random(
    spec: SupersolutionSpec,
    n_trials: int,
    depth: int,
    seed: int,
    tol_rel: float = DEFAULT_TOL_REL,
) -> dict:
    """Run the one-tree check on seeded random martingales of depth <= depth."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    failures = 0
    for _ in range(n_trials):
        d = int(rng.integers(1, depth + 1))
        leaves = rng.normal(scale=rng.choice([0.3, 1.0, 5.0]), size=spec.instance.m**d)
        F = SimpleMartingale(spec.instance.m, d, leaves)
        y0 = rng.normal(scale=rng.choice([0.0, 1.0, 4.0]), size=spec.instance.ell)
        rep = supermartingale_check(spec, F, y0=y0, tol_rel=tol_rel)
        worst = max(worst, rep["worst_rel_decrement"])
        if not rep["ok"]:
            failures += 1
    return {"ok": failures == 0, "worst_rel_decrement": worst, "failures": failures, "n": n_trials}


def bellman_chain_bound(spec: SupersolutionSpec, F: SimpleMartingale) -> tuple[float, float]:
    """(E phi(transform), G(F_0, 0, E|F_inf|)); the second dominates the first."""
    lhs = phi_functional(F, spec.T, spec.instance.alpha, spec.phi)
    x0 = float(node_values(F, 0)[0])
    z0 = abs_final_mean(F)
    rhs = eval_G(BellmanPoint(x0, np.zeros(spec.instance.ell), z0), spec.params, spec.phi)
    return lhs, rhs
