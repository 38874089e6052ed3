"""Annealing search for extremal martingales of the ratio functional.

The objective |E phi(transform)| / (E|F_inf|)^p is scale invariant and has
many local optima, so the search runs independent seeded chains of simulated
annealing with two move types: perturb one leaf, or refine the whole tree one
level (an exact no-op as a martingale) and then perturb inside one fresh
sibling group.  Every candidate is evaluated exactly through the tree model,
so the best ratio found is a certified lower bound for the sharp constant.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, Operator, SimpleMartingale, abs_final_mean, phi_functional
from .phi import PhiFunction


@dataclass(frozen=True)
class SearchConfig:
    depth_max: int = 4
    restarts: int = 8
    steps: int = 1500
    t0: float = 0.3
    cooling: float = 0.996
    sigma: float = 0.8
    refine_prob: float = 0.2
    seed: int = 0


@dataclass
class SearchState:
    best_ratio: float
    best_leaves: np.ndarray
    best_depth: int
    best_sign: int  # sign of E phi(transform) at the best witness
    seed: int
    config: SearchConfig
    trace: list = field(default_factory=list)  # (chain, step, best_so_far)

    def witness(self, m: int) -> SimpleMartingale:
        return SimpleMartingale(m, self.best_depth, self.best_leaves)

    def as_dict(self, m: int) -> dict:
        return {
            "m": m,
            "depth": self.best_depth,
            "leaves": self.best_leaves.tolist(),
            "ratio": self.best_ratio,
            "sign": self.best_sign,
            "seed": self.seed,
            "depth_max": self.config.depth_max,
            "restarts": self.config.restarts,
            "steps": self.config.steps,
        }


def evaluate_ratio(
    instance: ModelParams, T: Operator, phi: PhiFunction, leaves: np.ndarray
) -> tuple[float, float, float]:
    """(ratio, E phi, E|F_inf|); constant and null martingales score zero."""
    F = SimpleMartingale.from_leaves(instance.m, leaves)
    e_abs = abs_final_mean(F)
    if e_abs <= 0.0:
        return 0.0, 0.0, 0.0
    e_phi = phi_functional(F, T, instance.alpha, phi)
    return abs(e_phi) / e_abs**instance.p, e_phi, e_abs


def _seed_leaves(m: int) -> np.ndarray:
    leaves = np.zeros(m)
    leaves[0], leaves[1] = 1.0, -1.0
    return leaves


def _run_chain(
    instance: ModelParams,
    T: Operator,
    phi: PhiFunction,
    config: SearchConfig,
    chain: int,
    seq: np.random.SeedSequence,
) -> tuple[float, np.ndarray, int, list]:
    rng = np.random.default_rng(seq)
    m = instance.m
    if chain == 0:
        cur = _seed_leaves(m)  # the known depth-1 witness anchors chain 0
    else:
        cur = rng.normal(size=m)
        cur -= cur.mean() * rng.choice([0.0, 1.0])
    cur_ratio, _, _ = evaluate_ratio(instance, T, phi, cur)
    best, best_ratio = cur.copy(), cur_ratio
    trace = []
    temp = config.t0
    for step in range(config.steps):
        depth = round(np.log(len(cur)) / np.log(m))
        if depth < config.depth_max and rng.random() < config.refine_prob:
            cand = np.repeat(cur, m)
            group = rng.integers(0, len(cur))
            scale = np.mean(np.abs(cand)) + 1.0
            cand[group * m + rng.integers(0, m)] += config.sigma * scale * rng.normal()
        else:
            cand = cur.copy()
            scale = np.mean(np.abs(cand)) + 1.0
            cand[rng.integers(0, len(cand))] += config.sigma * scale * rng.normal()
        cand_ratio, _, _ = evaluate_ratio(instance, T, phi, cand)
        if cand_ratio >= cur_ratio or rng.random() < np.exp((cand_ratio - cur_ratio) / temp):
            cur, cur_ratio = cand, cand_ratio
            if cur_ratio > best_ratio:
                best, best_ratio = cur.copy(), cur_ratio
        temp *= config.cooling
        if step % 50 == 0:
            trace.append((chain, step, best_ratio))
    trace.append((chain, config.steps, best_ratio))
    return best_ratio, best, chain, trace


def adversarial_search(
    instance: ModelParams,
    T: Operator,
    phi: PhiFunction,
    config: SearchConfig | None = None,
    threads: int = 1,
) -> SearchState:
    """Best ratio over seeded annealing chains; reproducible from the seed.

    The reduction over chains is a pure max (ties broken by chain index), so
    the result is identical whether chains run serially or in a pool.
    """
    instance.check_inequality_alpha()
    config = config or SearchConfig()
    sequences = np.random.SeedSequence(config.seed).spawn(config.restarts)
    jobs = [
        (instance, T, phi, config, chain, seq) for chain, seq in enumerate(sequences)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _run_chain(*a), jobs))
    else:
        results = [_run_chain(*a) for a in jobs]
    results.sort(key=lambda r: (-r[0], r[2]))
    best_ratio, best_leaves, _, _ = results[0]
    trace = [t for r in results for t in r[3]]
    _, e_phi, _ = evaluate_ratio(instance, T, phi, best_leaves)
    depth = round(np.log(len(best_leaves)) / np.log(instance.m))
    return SearchState(
        best_ratio=best_ratio,
        best_leaves=np.asarray(best_leaves, dtype=float),
        best_depth=depth,
        best_sign=int(np.sign(e_phi)) if e_phi else 0,
        seed=config.seed,
        config=config,
        trace=trace,
    )
