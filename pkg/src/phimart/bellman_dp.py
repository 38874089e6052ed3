"""Grid value iteration for the scalar-channel Bellman function slice.

The slice fixes z = 1 (plus the closed-form z = 0 line, where the value is
exactly phi(y)); homogeneity renormalizes every split child back onto the
slice by a single division.  Cells hold lower-bound estimates that only grow:
each iteration takes the max of the stored value and the one-step split
average over a finite candidate set.

Candidate splits come from four families:

* boundary splits: every child sits on |x_j| = z_j, so its contribution is
  the closed form phi(y_j) and no grid lookup is needed; the scale solving
  mean |x + t u_j| = 1 along zero-sum directions is exact piecewise-linear
  root finding;
* template splits: discrete z-patterns with children landing back on grid
  nodes, available on the y = 0 row where the child offsets stay rational;
* targeted splits: on the x = 0 column the two boundary children can absorb
  the irrational offset factor, steering the third child onto any chosen
  grid node (three-child trees only);
* random splits (heuristic mode only): stratified draws evaluated by
  bilinear interpolation and flagged heuristic.

In certified mode a split contributes only if every child is closed-form or
lands exactly (within snapping roundoff) on an already-certified node, so
certified values stay true lower bounds; each cell records the split that
produced it and ``dp_witness`` rebuilds the explicit martingale, which must
reproduce the stored value through the tree model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, Operator, SimpleMartingale, glue_martingale
from .phi import PhiFunction
from .search import SearchState
from .supersolution import SupersolutionParams, _values as _supersolution_values

UNSET, CERTIFIED, HEURISTIC = 0, 1, 2
_FLAG_NAMES = {UNSET: "unset", CERTIFIED: "certified", HEURISTIC: "heuristic"}
_SNAP_TOL = 1e-9
_CLOSED_TOL = 1e-12


@dataclass
class CandidateBatch:
    """Vectorized split candidates addressed to parent cells."""

    ix: np.ndarray
    iy: np.ndarray
    value: np.ndarray
    certified: np.ndarray
    xs: np.ndarray  # (n, m) child x values
    zs: np.ndarray  # (n, m) child z values
    child_kind: np.ndarray  # (n, m): 0 closed-form, 1 grid cell
    child_ix: np.ndarray
    child_iy: np.ndarray


@dataclass
class GridSlice:
    """Value-iteration state on the z = 1 slice, with per-iteration snapshots."""

    instance: ModelParams
    T: Operator
    phi: PhiFunction
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    flags: np.ndarray
    prov: dict
    history: list = field(default_factory=list)
    stats: list = field(default_factory=list)
    seed: int = 0

    @classmethod
    def initialize(
        cls,
        instance: ModelParams,
        T: Operator,
        phi: PhiFunction,
        nx: int = 41,
        ny: int = 81,
        ymax: float = 8.0,
        seed: int = 0,
    ) -> "GridSlice":
        instance.check_inequality_alpha()
        if instance.ell != 1 or T.ell != 1 or phi.ell != 1:
            raise ValueError("the slice machinery handles the scalar channel only")
        if T.m != instance.m:
            raise ValueError("operator branching factor disagrees with the instance")
        if nx < 3 or ny < 1:
            raise ValueError("grid too small")
        xs = np.linspace(-1.0, 1.0, nx)
        ys = np.linspace(-ymax, ymax, ny)
        values = np.full((nx, ny), np.nan)
        flags = np.zeros((nx, ny), dtype=np.int8)
        prov: dict = {}
        for ix in (0, nx - 1):  # |x| = z cells carry the constant-martingale floor
            values[ix, :] = phi(ys)
            flags[ix, :] = CERTIFIED
            for iy in range(ny):
                prov[(ix, iy)] = ("seed",)
        sl = cls(instance, T, phi, xs, ys, values, flags, prov, seed=seed)
        sl.history.append(
            {"values": values.copy(), "flags": flags.copy(), "prov": dict(prov)}
        )
        sl._record_stats(0)
        return sl

    @property
    def iterations(self) -> int:
        return len(self.history) - 1

    def origin_cell(self) -> tuple[int, int] | None:
        ix, okx = _snap(self.xs, np.array([0.0]))
        iy, oky = _snap(self.ys, np.array([0.0]))
        if okx[0] and oky[0]:
            return int(ix[0]), int(iy[0])
        return None

    def _record_stats(self, iteration: int) -> None:
        set_mask = ~np.isnan(self.values)
        entry = {
            "iteration": iteration,
            "n_set": int(set_mask.sum()),
            "n_certified": int((self.flags == CERTIFIED).sum()),
            "max_value": float(np.nanmax(self.values)) if set_mask.any() else None,
        }
        origin = self.origin_cell()
        if origin is not None and set_mask[origin]:
            entry["origin_value"] = float(self.values[origin])
        else:
            entry["origin_value"] = None
        self.stats.append(entry)


def _snap(grid: np.ndarray, v: np.ndarray, tol: float = _SNAP_TOL):
    """Nearest grid index and whether v sits on the node within roundoff."""
    step = grid[1] - grid[0]
    idx = np.rint((v - grid[0]) / step).astype(int)
    ok = (idx >= 0) & (idx < len(grid))
    safe = np.clip(idx, 0, len(grid) - 1)
    ok &= np.abs(grid[safe] - v) <= tol * np.maximum(1.0, np.abs(v))
    return safe, ok


def _bilinear(xs, ys, values, xq, yq):
    """Interpolated values and a validity mask (inside hull, no unset corners)."""
    ok = (xq >= xs[0]) & (xq <= xs[-1]) & (yq >= ys[0]) & (yq <= ys[-1])
    xq = np.clip(xq, xs[0], xs[-1])
    yq = np.clip(yq, ys[0], ys[-1])
    i = np.clip(np.searchsorted(xs, xq) - 1, 0, len(xs) - 2)
    j = np.clip(np.searchsorted(ys, yq) - 1, 0, len(ys) - 2)
    tx = (xq - xs[i]) / (xs[i + 1] - xs[i])
    ty = (yq - ys[j]) / (ys[j + 1] - ys[j])
    corners = (
        values[i, j],
        values[i + 1, j],
        values[i, j + 1],
        values[i + 1, j + 1],
    )
    out = (
        corners[0] * (1 - tx) * (1 - ty)
        + corners[1] * tx * (1 - ty)
        + corners[2] * (1 - tx) * ty
        + corners[3] * tx * ty
    )
    ok &= ~(np.isnan(corners[0]) | np.isnan(corners[1]) | np.isnan(corners[2]) | np.isnan(corners[3]))
    return out, ok


def _evaluate_splits(
    sl: GridSlice,
    prev: dict,
    parent_ix: np.ndarray,
    parent_iy: np.ndarray,
    xs_children: np.ndarray,
    zs_children: np.ndarray,
    mode: str,
    overflow_params: SupersolutionParams | None,
) -> CandidateBatch:
    """Classify children, resolve their values, and price each split.

    Children with z_j = |x_j| (including z_j = 0) use the exact closed form
    phi(y_j); all others are renormalized onto the slice and either snapped to
    a stored node (certified) or interpolated (heuristic).  Splits with any
    unresolvable child are dropped.
    """
    inst = sl.instance
    m, p, alpha = inst.m, inst.p, inst.alpha
    x_par = sl.xs[parent_ix]
    y_par = sl.ys[parent_iy]

    keep = (
        (np.abs(xs_children.mean(axis=1) - x_par) <= 1e-9 * (1.0 + np.abs(x_par)))
        & (np.abs(zs_children.mean(axis=1) - 1.0) <= 1e-9)
        & np.all(np.abs(xs_children) <= zs_children + 1e-12, axis=1)
    )

    devs = xs_children - x_par[:, None]
    ty = sl.T.apply(devs)[:, :, 0]
    y_abs = float(m) ** alpha * y_par[:, None] + ty

    closed = (zs_children <= _CLOSED_TOL) | (
        np.abs(np.abs(xs_children) - zs_children)
        <= _CLOSED_TOL * (zs_children + 1e-300)
    )
    contribution = np.where(closed, sl.phi(y_abs), 0.0)
    certified_children = closed.copy()
    resolved = closed.copy()

    grid_rows, grid_cols = np.nonzero(~closed)
    child_ix = np.zeros(xs_children.shape, dtype=np.int32)
    child_iy = np.zeros(xs_children.shape, dtype=np.int32)
    if grid_rows.size:
        zg = zs_children[grid_rows, grid_cols]
        xq = xs_children[grid_rows, grid_cols] / zg
        yq = y_abs[grid_rows, grid_cols] / zg
        gix, okx = _snap(sl.xs, xq)
        giy, oky = _snap(sl.ys, yq)
        on_node = okx & oky
        node_val = prev["values"][gix, giy]
        node_flag = prev["flags"][gix, giy]
        node_ok = on_node & ~np.isnan(node_val)
        if mode == "certified":
            node_ok &= node_flag == CERTIFIED
        val = np.where(node_ok, zg**p * node_val, 0.0)
        cert = node_ok & (node_flag == CERTIFIED)
        res = node_ok.copy()
        if mode == "heuristic":
            fallback = ~node_ok
            if fallback.any():
                interp, iok = _bilinear(
                    sl.xs, sl.ys, prev["values"], xq[fallback], yq[fallback]
                )
                fval = np.where(iok, zg[fallback] ** p * interp, 0.0)
                fres = iok.copy()
                if overflow_params is not None:
                    outside = ~iok & (np.abs(yq[fallback]) > sl.ys[-1])
                    if outside.any():
                        # supersolution surrogate: an upper bound, heuristic only
                        yo = (yq[fallback][outside] * zg[fallback][outside])[:, None]
                        zo = zg[fallback][outside]
                        g = _supersolution_values(
                            None, yo, zo, overflow_params, sl.phi
                        )
                        fval[outside] = g
                        fres[outside] = True
                val[fallback] = fval
                res[fallback] = fres
                cert[fallback] = False
        contribution[grid_rows, grid_cols] = val
        certified_children[grid_rows, grid_cols] = cert
        resolved[grid_rows, grid_cols] = res
        child_ix[grid_rows, grid_cols] = gix
        child_iy[grid_rows, grid_cols] = giy

    keep &= np.all(resolved, axis=1)
    value = float(m) ** (-p) * contribution.sum(axis=1)
    certified = np.all(certified_children, axis=1)
    kind = np.where(closed, 0, 1).astype(np.int8)

    idx = np.nonzero(keep)[0]
    return CandidateBatch(
        ix=parent_ix[idx],
        iy=parent_iy[idx],
        value=value[idx],
        certified=certified[idx],
        xs=xs_children[idx],
        zs=zs_children[idx],
        child_kind=kind[idx],
        child_ix=child_ix[idx],
        child_iy=child_iy[idx],
    )


# ---------------------------------------------------------------------------
# split construction families
# ---------------------------------------------------------------------------


def _directions(m: int, count: int) -> np.ndarray:
    """Zero-sum unit directions: exact coordinate patterns plus a seeded sweep."""
    dirs = []
    for i in range(m):
        for j in range(m):
            if i != j:
                u = np.zeros(m)
                u[i], u[j] = 1.0, -1.0
                dirs.append(u / np.sqrt(2.0))
    if m == 3:
        for j in range(3):
            for s in (1.0, -1.0):
                u = -np.ones(3)
                u[j] = 2.0
                dirs.append(s * u / np.sqrt(6.0))
        a = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
        b = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)
        for th in np.linspace(0.0, 2.0 * np.pi, count, endpoint=False):
            dirs.append(np.cos(th) * a + np.sin(th) * b)
    else:
        rng = np.random.default_rng(12345)
        for _ in range(count):
            u = rng.normal(size=m)
            u -= u.mean()
            n = np.linalg.norm(u)
            if n > 1e-12:
                dirs.append(u / n)
    uniq = []
    for u in dirs:
        if all(np.max(np.abs(u - v)) > 1e-12 for v in uniq):
            uniq.append(u)
    return np.array(uniq)


def _boundary_scale_roots(x: float, u: np.ndarray) -> list[float]:
    """All t with mean_j |x + t u_j| = 1 (a convex piecewise-linear equation)."""
    mask = np.abs(u) > 1e-15
    if not mask.any():
        return []
    kinks = np.unique(-x / u[mask])
    s = lambda t: float(np.mean(np.abs(x + t * u)))
    sv = [s(t) for t in kinks]
    n = len(kinks)
    if min(sv) > 1.0:
        return []
    roots = []
    if sv[0] >= 1.0:
        i = next(k for k in range(n) if sv[k] <= 1.0)
        if i == 0:
            roots.append(float(kinks[0]))
        else:
            t0, t1, s0, s1 = kinks[i - 1], kinks[i], sv[i - 1], sv[i]
            roots.append(float(t0 + (1.0 - s0) * (t1 - t0) / (s1 - s0)))
    else:
        slope = float(np.mean(np.sign(x + (kinks[0] - 1.0) * u) * u))
        roots.append(float(kinks[0] + (1.0 - sv[0]) / slope))
    if sv[-1] >= 1.0:
        i = next(k for k in range(n - 1, -1, -1) if sv[k] <= 1.0)
        if i == n - 1:
            roots.append(float(kinks[-1]))
        else:
            t0, t1, s0, s1 = kinks[i], kinks[i + 1], sv[i], sv[i + 1]
            roots.append(float(t0 + (1.0 - s0) * (t1 - t0) / (s1 - s0)))
    else:
        slope = float(np.mean(np.sign(x + (kinks[-1] + 1.0) * u) * u))
        roots.append(float(kinks[-1] + (1.0 - sv[-1]) / slope))
    out: list[float] = []
    for r in roots:
        if all(abs(r - q) > 1e-12 * (1.0 + abs(r)) for q in out):
            out.append(r)
    return out


def _family_boundary(sl: GridSlice, budget: int):
    """All-children-on-the-boundary splits; closed-form at every cell."""
    m = sl.instance.m
    nx, ny = len(sl.xs), len(sl.ys)
    dirs = _directions(m, min(48, max(8, budget // 8)))
    pix, piy, cxs = [], [], []
    for u in dirs:
        for ix, x in enumerate(sl.xs):
            for t in _boundary_scale_roots(float(x), u):
                xs_child = x + t * u
                pix.append(np.full(ny, ix, dtype=np.int64))
                piy.append(np.arange(ny, dtype=np.int64))
                cxs.append(np.broadcast_to(xs_child, (ny, m)))
    if not pix:
        return None
    parent_ix = np.concatenate(pix)
    parent_iy = np.concatenate(piy)
    xs_children = np.concatenate(cxs).astype(float)
    zs_children = np.abs(xs_children)
    return parent_ix, parent_iy, xs_children, zs_children


def _family_templates(sl: GridSlice, budget: int):
    """Discrete z-pattern splits on the y = 0 row with grid-node children."""
    m = sl.instance.m
    iy0_arr, ok = _snap(sl.ys, np.array([0.0]))
    if not ok[0]:
        return None
    iy0 = int(iy0_arr[0])
    templates = [tuple([1.0] * m)]
    if m == 3:
        base = [(1.5, 1.5, 0.0), (2.0, 1.0, 0.0), (2.0, 0.5, 0.5), (3.0, 0.0, 0.0)]
    else:
        base = [tuple(float(m) if j == 0 else 0.0 for j in range(m))]
    for pat in base:
        seen = set()
        for perm in _permutations(pat):
            if perm not in seen:
                seen.add(perm)
                templates.append(perm)

    nx = len(sl.xs)
    stride = 1
    pix, piy, cxs, czs = [], [], [], []
    for tpl in templates:
        z = np.array(tpl)
        free = np.nonzero(z > 0)[0]
        n_enum = len(free) - 1
        grid = sl.xs[::stride]
        if n_enum == 0:
            combos = np.zeros((1, 0))
        elif n_enum == 1:
            combos = grid[:, None]
        else:
            while len(grid) ** n_enum * nx > max(budget, 1) * 64:
                stride *= 2
                grid = sl.xs[::stride]
            mesh = np.meshgrid(*([grid] * n_enum), indexing="ij")
            combos = np.stack([g.ravel() for g in mesh], axis=1)
        for ix, x in enumerate(sl.xs):
            xs_child = np.zeros((combos.shape[0], m))
            for k, f in enumerate(free[:-1]):
                xs_child[:, f] = combos[:, k] * z[f]
            last = free[-1]
            xs_child[:, last] = m * x - xs_child.sum(axis=1)
            feas = np.abs(xs_child[:, last]) <= z[last] + 1e-12
            if not feas.any():
                continue
            xs_child = xs_child[feas]
            pix.append(np.full(xs_child.shape[0], ix, dtype=np.int64))
            piy.append(np.full(xs_child.shape[0], iy0, dtype=np.int64))
            cxs.append(xs_child)
            czs.append(np.broadcast_to(z, xs_child.shape))
    if not pix:
        return None
    return (
        np.concatenate(pix),
        np.concatenate(piy),
        np.concatenate(cxs).astype(float),
        np.concatenate(czs).astype(float),
    )


def _permutations(t):
    import itertools

    return set(itertools.permutations(t))


def _family_targeted(sl: GridSlice, budget: int):
    """x = 0 column splits steering one child onto an arbitrary grid node.

    Two boundary children split the offset mass s = a + b between them; with
    branching 3 the remaining child lands on the chosen (xi, g) node with
    weight z1 = m^alpha (m^alpha - s).  Both sign orientations are emitted.
    """
    inst = sl.instance
    if inst.m != 3:
        return None
    ix0_arr, ok = _snap(sl.xs, np.array([0.0]))
    if not ok[0]:
        return None
    ix0 = int(ix0_arr[0])
    root = float(inst.m) ** inst.alpha
    ny, nx = len(sl.ys), len(sl.xs)
    sx = max(1, int(np.ceil(np.sqrt(nx * ny / max(budget, 1)))))
    xi = sl.xs[::sx]
    gg = sl.ys[::sx]

    pix, piy, cxs, czs = [], [], [], []
    for orient in (1.0, -1.0):
        Y, XI, G = np.meshgrid(sl.ys, xi, gg, indexing="ij")
        denom = G + orient
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (root * G - Y) / denom
            r = root - s
            a = (s + orient * XI * r) / 2.0
            b = (s - orient * XI * r) / 2.0
            feas = (
                np.isfinite(s)
                & (s >= 0.0)
                & (r > 1e-9)
                & (a >= 0.0)
                & (b >= 0.0)
            )
        iy_par = np.broadcast_to(
            np.arange(ny)[:, None, None], Y.shape
        )[feas]
        rF, aF, bF = r[feas], a[feas], b[feas]
        n = rF.size
        if n == 0:
            continue
        x1 = orient * root * (aF - bF)
        x2 = -orient * root * aF
        x3 = orient * root * bF
        xs_child = np.stack([x1, x2, x3], axis=1)
        zs_child = np.stack([root * rF, np.abs(x2), np.abs(x3)], axis=1)
        pix.append(np.full(n, ix0, dtype=np.int64))
        piy.append(iy_par.astype(np.int64))
        cxs.append(xs_child)
        czs.append(zs_child)
    if not pix:
        return None
    return (
        np.concatenate(pix),
        np.concatenate(piy),
        np.concatenate(cxs).astype(float),
        np.concatenate(czs).astype(float),
    )


def _family_random(sl: GridSlice, budget: int, rng: np.random.Generator):
    """Stratified random splits for heuristic sweeps; feasibility by construction."""
    m = sl.instance.m
    nx, ny = len(sl.xs), len(sl.ys)
    per_cell = max(4, min(64, budget // max(1, nx * ny // 16)))
    cells_ix, cells_iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    parent_ix = np.repeat(cells_ix.ravel(), per_cell)
    parent_iy = np.repeat(cells_iy.ravel(), per_cell)
    n = parent_ix.size
    x = sl.xs[parent_ix]
    zeta = rng.exponential(1.0, (n, m))
    zs_child = np.abs(x)[:, None] + (1.0 - np.abs(x))[:, None] * zeta / zeta.mean(
        axis=1, keepdims=True
    )
    w = rng.normal(size=(n, m))
    w -= w.mean(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        cap = np.where(
            w > 0, (zs_child - x[:, None]) / w, (-zs_child - x[:, None]) / w
        )
    cap[np.abs(w) <= 1e-15] = np.inf
    s_max = cap.min(axis=1)
    s = rng.random(n) * np.where(np.isfinite(s_max), s_max, 0.0)
    xs_child = x[:, None] + s[:, None] * w
    xs_child = np.clip(xs_child, -zs_child, zs_child)
    # clipping can shift the mean by roundoff only; recenter exactly
    xs_child += (x - xs_child.mean(axis=1))[:, None]
    ok = np.all(np.abs(xs_child) <= zs_child + 1e-12, axis=1)
    return parent_ix[ok], parent_iy[ok], xs_child[ok], zs_child[ok]


def _generate_batches(
    sl: GridSlice,
    prev: dict,
    mode: str,
    budget: int,
    rng: np.random.Generator | None,
    overflow_params: SupersolutionParams | None,
):
    raw = [
        _family_boundary(sl, budget),
        _family_templates(sl, budget),
        _family_targeted(sl, budget),
    ]
    if mode == "heuristic" and rng is not None:
        raw.append(_family_random(sl, budget, rng))
    batches = []
    for item in raw:
        if item is None:
            continue
        batch = _evaluate_splits(sl, prev, *item, mode=mode, overflow_params=overflow_params)
        if batch.value.size:
            batches.append(batch)
    return batches


def _apply_batch(
    sl: GridSlice,
    batch: CandidateBatch,
    iteration: int,
    vals: np.ndarray,
    flags: np.ndarray,
    prov: dict,
) -> None:
    chunk_max = np.full(vals.shape, -np.inf)
    np.maximum.at(chunk_max, (batch.ix, batch.iy), batch.value)
    cur = vals[batch.ix, batch.iy]
    rows = np.nonzero(
        (batch.value >= chunk_max[batch.ix, batch.iy])
        & (np.isnan(cur) | (batch.value > cur))
    )[0]
    taken = set()
    m = sl.instance.m
    for r in rows:
        cell = (int(batch.ix[r]), int(batch.iy[r]))
        if cell in taken:
            continue
        taken.add(cell)
        vals[cell] = batch.value[r]
        flags[cell] = CERTIFIED if batch.certified[r] else HEURISTIC
        children = tuple(
            ("phi",)
            if batch.child_kind[r, j] == 0
            else ("cell", int(batch.child_ix[r, j]), int(batch.child_iy[r, j]))
            for j in range(m)
        )
        prov[cell] = (
            "split",
            iteration,
            tuple(float(v) for v in batch.xs[r]),
            tuple(float(v) for v in batch.zs[r]),
            children,
        )


def dp_iterate(
    sl: GridSlice,
    split_budget: int = 4096,
    mode: str = "certified",
    overflow_params: SupersolutionParams | None = None,
) -> GridSlice:
    """One sweep: every cell takes the max of its value and the split averages.

    Child lookups read the previous iteration's buffer, so sweeps are
    double-buffered and values are nondecreasing by construction.
    """
    if mode not in ("certified", "heuristic"):
        raise ValueError("mode must be 'certified' or 'heuristic'")
    if not sl.history:
        raise ValueError("slice not initialized")
    prev = sl.history[-1]
    iteration = len(sl.history)
    rng = np.random.default_rng(np.random.SeedSequence([sl.seed, iteration]))
    new_vals = prev["values"].copy()
    new_flags = prev["flags"].copy()
    prov = dict(prev["prov"])
    for batch in _generate_batches(sl, prev, mode, split_budget, rng, overflow_params):
        _apply_batch(sl, batch, iteration, new_vals, new_flags, prov)
    sl.values, sl.flags, sl.prov = new_vals, new_flags, prov
    sl.history.append({"values": new_vals.copy(), "flags": new_flags.copy(), "prov": dict(prov)})
    sl._record_stats(iteration)
    return sl


def run_dp(
    instance: ModelParams,
    T: Operator,
    phi: PhiFunction,
    nx: int = 41,
    ny: int = 81,
    ymax: float = 8.0,
    iters: int = 6,
    mode: str = "certified",
    split_budget: int = 4096,
    seed: int = 0,
    overflow_params: SupersolutionParams | None = None,
) -> GridSlice:
    sl = GridSlice.initialize(instance, T, phi, nx=nx, ny=ny, ymax=ymax, seed=seed)
    for _ in range(iters):
        dp_iterate(sl, split_budget=split_budget, mode=mode, overflow_params=overflow_params)
    return sl


# ---------------------------------------------------------------------------
# witness materialization
# ---------------------------------------------------------------------------


def dp_witness(
    sl: GridSlice, ix: int, iy: int, iteration: int | None = None
) -> tuple[SimpleMartingale, float, float]:
    """Rebuild the explicit martingale behind a cell value.

    Returns (martingale, y_offset, predicted value); evaluating the phi
    functional of the martingale at the offset must reproduce the value.
    """
    it = sl.iterations if iteration is None else iteration
    snap = sl.history[it]
    value = snap["values"][ix, iy]
    if np.isnan(value):
        raise ValueError(f"cell ({ix}, {iy}) is unset at iteration {it}")
    F = _materialize(sl, ix, iy, it)
    return F, float(sl.ys[iy]), float(value)


def _materialize(sl: GridSlice, ix: int, iy: int, it: int) -> SimpleMartingale:
    m = sl.instance.m
    entry = sl.history[it]["prov"][(ix, iy)]
    if entry[0] == "seed":
        return SimpleMartingale.constant(m, float(sl.xs[ix]))
    _, created, xs_child, zs_child, children = entry
    subtrees = []
    for j in range(m):
        if children[j] == ("phi",):
            subtrees.append(SimpleMartingale.constant(m, xs_child[j]))
        else:
            _, cix, ciy = children[j]
            sub = _materialize(sl, cix, ciy, created - 1)
            subtrees.append(SimpleMartingale(m, sub.depth, zs_child[j] * sub.leaves))
    return glue_martingale(subtrees)


# ---------------------------------------------------------------------------
# bracket report and slice serialization
# ---------------------------------------------------------------------------


def bracket_report(
    slice_plus: GridSlice,
    search_state: SearchState,
    params_plus: SupersolutionParams,
    params_minus: SupersolutionParams | None = None,
    slice_minus: GridSlice | None = None,
    upper_constant: float | None = None,
    tol_rel: float = 1e-9,
    max_listed: int = 20,
) -> dict:
    """Pointwise dp <= G sandwich plus the global constant bracket.

    Any cell where a certified lower bound exceeds the fitted candidate beyond
    tolerance flags a bug in one of the two sides.
    """
    if slice_minus is not None:
        same = (
            slice_minus.instance == slice_plus.instance
            and np.array_equal(slice_minus.xs, slice_plus.xs)
            and np.array_equal(slice_minus.ys, slice_plus.ys)
        )
        if not same:
            raise ValueError("the two slices were built for different instances or grids")

    def _side(sl: GridSlice, params: SupersolutionParams) -> dict:
        ny = len(sl.ys)
        y = sl.ys[None, :].repeat(len(sl.xs), axis=0)
        g = _supersolution_values(
            None, y.reshape(-1, 1), np.ones(y.size), params, sl.phi
        ).reshape(len(sl.xs), ny)
        dpv = sl.values
        mask = ~np.isnan(dpv)
        scale = np.abs(dpv) + np.abs(g) + 1.0
        excess = np.where(mask, dpv - g, -np.inf)
        bad = excess > tol_rel * scale
        listed = []
        for ix, iy in zip(*np.nonzero(bad)):
            if len(listed) >= max_listed:
                break
            listed.append(
                {
                    "x": float(sl.xs[ix]),
                    "y": float(sl.ys[iy]),
                    "dp": float(dpv[ix, iy]),
                    "G": float(g[ix, iy]),
                    "flag": _FLAG_NAMES[int(sl.flags[ix, iy])],
                }
            )
        certified_bad = int(np.sum(bad & (sl.flags == CERTIFIED)))
        return {
            "cells_checked": int(mask.sum()),
            "violations": int(bad.sum()),
            "certified_violations": certified_bad,
            "max_excess_rel": float(np.max(excess / scale)) if mask.any() else None,
            "listed": listed,
            "iteration_tail": sl.stats,
        }

    plus = _side(slice_plus, params_plus)
    report = {"plus": plus}
    ok = plus["certified_violations"] == 0
    if slice_minus is not None and params_minus is not None:
        minus = _side(slice_minus, params_minus)
        report["minus"] = minus
        ok = ok and minus["certified_violations"] == 0

    # the z = 0 line is exactly tight: both correction terms vanish there
    ys = slice_plus.ys
    g0 = _supersolution_values(
        None, ys[:, None], np.zeros(ys.size), params_plus, slice_plus.phi
    )
    z0_defect = float(np.max(np.abs(g0 - slice_plus.phi(ys))))

    if upper_constant is None:
        upper_constant = params_plus.C2
        if params_minus is not None:
            upper_constant = max(upper_constant, params_minus.C2)
    lower = float(search_state.best_ratio)
    sandwich_ok = lower <= upper_constant * (1.0 + tol_rel)
    report.update(
        {
            "lower_bound": lower,
            "upper_bound": float(upper_constant),
            "sandwich_ok": bool(sandwich_ok),
            "z0_line_defect": z0_defect,
            "ok": bool(ok and sandwich_ok),
        }
    )
    return report


def write_slice_csv(sl: GridSlice, path) -> None:
    """x, y, value, flag rows in x-major order; unset cells carry empty values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value", "flag"])
        for ix, x in enumerate(sl.xs):
            for iy, y in enumerate(sl.ys):
                v = sl.values[ix, iy]
                w.writerow(
                    [
                        repr(float(x)),
                        repr(float(y)),
                        "" if np.isnan(v) else repr(float(v)),
                        _FLAG_NAMES[int(sl.flags[ix, iy])],
                    ]
                )


def read_slice_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Rebuild (xs, ys, values, flags) from a slice CSV."""
    xs_seen, ys_seen, rows = [], [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:4] != ["x", "y", "value", "flag"]:
            raise ValueError("not a slice CSV")
        for x, y, v, flag in r:
            rows.append((float(x), float(y), float(v) if v else np.nan, flag))
            xs_seen.append(float(x))
            ys_seen.append(float(y))
    xs = np.unique(np.array(xs_seen))
    ys = np.unique(np.array(ys_seen))
    values = np.full((len(xs), len(ys)), np.nan)
    flags = np.zeros((len(xs), len(ys)), dtype=np.int8)
    inv_flags = {v: k for k, v in _FLAG_NAMES.items()}
    for x, y, v, flag in rows:
        ix = int(np.searchsorted(xs, x))
        iy = int(np.searchsorted(ys, y))
        values[ix, iy] = v
        flags[ix, iy] = inv_flags[flag]
    return xs, ys, values, flags
