"""Command-line entry point.

Exit codes: 0 on success/PASS, 1 on a mathematical FAIL (a violation was
found or a fit exhausted its grid), 2 on usage or configuration errors.
All randomness derives from the configured seed, and identical configs
produce byte-identical JSON/CSV reports; figures are rendered next to the
delimited outputs unless ``--no-figures`` is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, plots, reports
from .bellman_dp import (
    GridSlice,
    bracket_report,
    dp_iterate,
    read_slice_csv,
    write_slice_csv,
)
from .cancellation import is_phi_canceling, is_weakly_canceling
from .model import (
    ModelParams,
    Operator,
    SimpleMartingale,
    abs_final_mean,
    builtin_operator,
    fractional_transform,
    l1_norm,
)
from .phi import PhiFunction, builtin_phi
from .search import SearchConfig, SearchState, adversarial_search, evaluate_ratio
from .special import scan_constants
from .supersolution import (
    SupersolutionParams,
    SupersolutionSpec,
    fit_two_sided,
    verify_supersolution,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read JSON file {path}: {e}") from e


def _load_operator(spec) -> Operator:
    if isinstance(spec, dict):
        return Operator.from_dict(spec)
    if os.path.exists(spec):
        return Operator.from_dict(_load_json(spec))
    try:
        return builtin_operator(spec)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _load_phi(spec, p: float | None = None, ell: int = 1) -> PhiFunction:
    if isinstance(spec, dict):
        return builtin_phi(spec["name"], p=spec.get("p", p), ell=int(spec.get("ell", ell)))
    if isinstance(spec, str) and os.path.exists(spec):
        d = _load_json(spec)
        return builtin_phi(d["name"], p=d.get("p", p), ell=int(d.get("ell", ell)))
    try:
        return builtin_phi(spec, p=p, ell=ell)
    except ValueError as e:
        raise UsageError(str(e)) from e


def _instance_ref(instance: ModelParams, T: Operator, phi: PhiFunction) -> dict:
    """Self-contained instance block for reports: content, never file paths."""
    return {
        "m": instance.m,
        "ell": instance.ell,
        "p": instance.p,
        "alpha": instance.alpha,
        "operator": T.as_dict(),
        "phi": {"name": phi.name, "p": phi.p, "ell": phi.ell},
    }


def _load_instance(block: dict) -> tuple[ModelParams, Operator, PhiFunction]:
    try:
        m, ell, p = int(block["m"]), int(block["ell"]), float(block["p"])
        alpha = float(block.get("alpha", (p - 1.0) / p))
        instance = ModelParams(m=m, ell=ell, p=p, alpha=alpha)
        instance.check_inequality_alpha()
        T = _load_operator(block["operator"])
        phi = _load_phi(block["phi"], p=p, ell=ell)
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(f"bad instance block: {e}") from e
    if T.m != m or T.ell != ell:
        raise UsageError("operator dimensions disagree with the instance block")
    return instance, T, phi


def _figures_enabled(args) -> bool:
    return not getattr(args, "no_figures", False)


def _sidecar(path: str, suffix: str) -> str:
    base, _ = os.path.splitext(path)
    return base + suffix


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_check_cancellation(args) -> int:
    T = _load_operator(args.operator)
    phi = _load_phi(args.phi, p=args.p, ell=T.ell)
    wc = is_weakly_canceling(T, tol=args.tol)
    pc = is_phi_canceling(T, phi, tol=args.tol)
    payload = {
        "weakly_canceling": wc.ok,
        "phi_canceling": pc.ok,
        "residuals": {
            "weak": wc.residuals.tolist(),
            "phi_sums": pc.sums.tolist(),
        },
        "tol": args.tol,
    }
    config = {"operator": T.as_dict(), "phi": {"name": phi.name, "p": phi.p},
              "tol": args.tol}
    stamped = reports.write_report(args.out, payload, config, 0, __version__)
    print(reports.canonical_json(stamped), end="")
    return EXIT_OK if wc.ok and pc.ok else EXIT_FAIL


def cmd_transform(args) -> int:
    T = _load_operator(args.operator)
    F = SimpleMartingale.from_dict(_load_json(args.martingale))
    if F.m != T.m:
        raise UsageError("martingale and operator branching factors disagree")
    tr = fractional_transform(F, T, args.alpha)
    payload = {
        "m": tr.m,
        "depth": tr.depth,
        "ell": tr.ell,
        "leaves": tr.leaf_values.tolist(),
        "l1_norm": l1_norm(F),
        "abs_final_mean": abs_final_mean(F),
    }
    config = {"martingale": F.as_dict(), "operator": T.as_dict(), "alpha": args.alpha}
    stamped = reports.write_report(args.out, payload, config, 0, __version__)
    print(reports.canonical_json(stamped), end="")
    return EXIT_OK


def cmd_scan_constants(args) -> int:
    T = _load_operator(args.operator) if args.operator else None
    report = scan_constants(
        args.lemma, args.p, args.seed, samples=args.samples, T=T, eps=args.eps
    )
    config = {
        "lemma": args.lemma,
        "p": args.p,
        "seed": args.seed,
        "samples": args.samples,
        "eps": args.eps,
        "operator": args.operator,
    }
    stamped = reports.write_report(args.out, report, config, args.seed, __version__)
    print(reports.canonical_json(stamped), end="")
    return EXIT_OK


def _run_config(args) -> dict:
    cfg = _load_json(args.config)
    for key in ("instance", "task", "seed"):
        if key not in cfg:
            raise UsageError(f"run config is missing the {key!r} block")
    return cfg


def cmd_verify_supersolution(args) -> int:
    cfg = _run_config(args)
    instance, T, phi = _load_instance(cfg["instance"])
    task = cfg["task"]
    try:
        params = SupersolutionParams(
            float(task["C1"]),
            float(task["C2"]),
            task.get("branch", SupersolutionParams.default_branch(instance.p)),
        )
        n = int(task.get("samples", 100_000))
        sign = int(task.get("sign", 1))
    except (KeyError, ValueError, TypeError) as e:
        raise UsageError(f"bad task block: {e}") from e
    if sign < 0:
        phi = phi.negated()
    spec = SupersolutionSpec(instance, T, phi, params)
    rep = verify_supersolution(
        spec,
        n,
        int(cfg["seed"]),
        require_cancellation=bool(task.get("require_cancellation", True)),
    )
    out = cfg.get("out", {})
    config_core = {"instance": _instance_ref(instance, T, phi), "task": task, "seed": cfg["seed"]}
    stamped = reports.write_report(
        out.get("report"), rep.as_dict(), config_core, int(cfg["seed"]), __version__
    )
    print(reports.canonical_json(stamped), end="")
    if out.get("worst_csv"):
        reports.write_worst_splits_csv(out["worst_csv"], rep.worst_table, instance.m)
    if out.get("report") and _figures_enabled(args) and rep.rel_gaps is not None:
        plots.plot_gap_histogram(
            rep.rel_gaps, rep.tol_rel, _sidecar(out["report"], "_gaps.png")
        )
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_fit_constants(args) -> int:
    cfg = _run_config(args)
    instance, T, phi = _load_instance(cfg["instance"])
    task = cfg["task"]
    n = int(task.get("samples", 100_000))
    both = fit_two_sided(
        instance,
        T,
        phi,
        n,
        int(cfg["seed"]),
        require_cancellation=bool(task.get("require_cancellation", True)),
    )
    payload = {
        "instance": _instance_ref(instance, T, phi),
        "plus": both["plus"].as_dict(),
        "minus": both["minus"].as_dict(),
        "upper_constant": both["upper_constant"],
        "ok": both["plus"].ok and both["minus"].ok,
    }
    out = cfg.get("out", {})
    config_core = {"instance": _instance_ref(instance, T, phi), "task": task, "seed": cfg["seed"]}
    stamped = reports.write_report(
        out.get("report"), payload, config_core, int(cfg["seed"]), __version__
    )
    print(reports.canonical_json(stamped), end="")
    return EXIT_OK if payload["ok"] else EXIT_FAIL


def cmd_bellman_dp(args) -> int:
    try:
        nx, ny = (int(v) for v in args.grid.split(","))
    except ValueError as e:
        raise UsageError(f"--grid expects nx,ny: {e}") from e
    instance = ModelParams.for_inequality(args.m, 1, args.p)
    T = _load_operator(args.operator)
    phi = _load_phi(args.phi, p=args.p)
    if args.sign < 0:
        phi = phi.negated()
    overflow = None
    if args.constants:
        fitted = _load_json(args.constants)
        side = "plus" if args.sign > 0 else "minus"
        blk = fitted.get(side, fitted)
        overflow = SupersolutionParams(
            float(blk["C1"]), float(blk["C2"]), blk.get("branch", "min")
        )
    sl = GridSlice.initialize(
        instance, T, phi, nx=nx, ny=ny, ymax=args.ymax, seed=args.seed
    )
    for _ in range(args.iters):
        dp_iterate(sl, split_budget=args.budget, mode=args.mode, overflow_params=overflow)
    write_slice_csv(sl, args.out)
    ref = _instance_ref(instance, T, phi)
    config = {
        "grid": args.grid,
        "ymax": args.ymax,
        "iters": args.iters,
        "mode": args.mode,
        "sign": args.sign,
        "instance": ref,
        "seed": args.seed,
        "budget": args.budget,
    }
    payload = {
        "instance": ref,
        "sign": args.sign,
        "mode": args.mode,
        "iteration_tail": sl.stats,
    }
    stamped = reports.write_report(
        _sidecar(args.out, ".report.json"), payload, config, args.seed, __version__
    )
    print(reports.canonical_json(stamped), end="")
    if _figures_enabled(args):
        plots.plot_slice(sl.xs, sl.ys, sl.values, sl.flags, _sidecar(args.out, ".png"))
    return EXIT_OK


def cmd_search(args) -> int:
    instance = ModelParams.for_inequality(args.m, 1, args.p)
    T = _load_operator(args.operator)
    phi = _load_phi(args.phi, p=args.p)
    config = SearchConfig(
        depth_max=args.depth_max,
        restarts=args.restarts,
        steps=args.steps,
        seed=args.seed,
    )
    state = adversarial_search(instance, T, phi, config, threads=args.threads)
    payload = state.as_dict(args.m)
    payload["instance"] = _instance_ref(instance, T, phi)
    cfg = {
        "instance": _instance_ref(instance, T, phi),
        "depth_max": args.depth_max,
        "restarts": args.restarts,
        "steps": args.steps,
        "seed": args.seed,
    }
    stamped = reports.write_report(args.out, payload, cfg, args.seed, __version__)
    print(reports.canonical_json(stamped), end="")
    if _figures_enabled(args) and args.out:
        plots.plot_search_trace(state.trace, state.best_ratio, _sidecar(args.out, ".png"))
    return EXIT_OK


def cmd_bracket(args) -> int:
    witness = _load_json(args.witness)
    fitted = _load_json(args.constants)

    meta_path = _sidecar(args.dp, ".report.json")
    if not os.path.exists(meta_path):
        raise UsageError(f"missing dp run report next to the slice: {meta_path}")
    meta = _load_json(meta_path)
    inst_blocks = [witness.get("instance"), fitted.get("instance"), meta.get("instance")]
    keys = ("m", "p")
    ref = inst_blocks[0]
    for blk in inst_blocks[1:]:
        if ref and blk and any(ref.get(k) != blk.get(k) for k in keys):
            raise UsageError("witness, constants, and dp slice come from different instances")

    instance = ModelParams.for_inequality(int(meta["instance"]["m"]), 1, float(meta["instance"]["p"]))
    T = _load_operator(meta["instance"]["operator"])
    phi = _load_phi(meta["instance"]["phi"], p=instance.p)
    if str(phi.name).startswith("neg-"):
        raise UsageError("dp meta must reference the base integrand; sign is tracked separately")

    # re-evaluate the witness from scratch; its claimed ratio must reproduce
    leaves = np.asarray(witness["leaves"], dtype=float)
    ratio, _, _ = evaluate_ratio(instance, T, phi, leaves)
    claimed = float(witness["ratio"])
    if abs(ratio - claimed) > 1e-9 * (1.0 + claimed):
        raise UsageError(
            f"witness does not reproduce its claimed ratio ({ratio} vs {claimed})"
        )

    xs, ys, values, flags = read_slice_csv(args.dp)
    sl = GridSlice(instance, T, phi if meta.get("sign", 1) > 0 else phi.negated(),
                   xs, ys, values, flags, {}, history=[], stats=meta.get("iteration_tail", []))
    side = "plus" if meta.get("sign", 1) > 0 else "minus"
    blk = fitted.get(side) or fitted.get("plus")
    if blk is None or "C1" not in blk:
        raise UsageError("constants file does not carry fitted parameters")
    params = SupersolutionParams(float(blk["C1"]), float(blk["C2"]), blk.get("branch", "min"))

    state = SearchState(
        best_ratio=claimed,
        best_leaves=leaves,
        best_depth=int(witness["depth"]),
        best_sign=int(witness.get("sign", 0)),
        seed=int(witness.get("seed", 0)),
        config=SearchConfig(),
    )
    rep = bracket_report(sl, state, params, upper_constant=fitted.get("upper_constant"))
    cfg = {"dp": os.path.basename(args.dp), "witness_seed": witness.get("seed"),
           "constants": {k: blk[k] for k in ("C1", "C2")}, "sign": meta.get("sign", 1)}
    stamped = reports.write_report(args.out, rep, cfg, int(witness.get("seed", 0)), __version__)
    print(reports.canonical_json(stamped), end="")
    if _figures_enabled(args) and args.out:
        origin = None
        for entry in reversed(meta.get("iteration_tail", [])):
            if entry.get("origin_value") is not None:
                origin = entry["origin_value"]
                break
        plots.plot_bracket(rep["lower_bound"], rep["upper_bound"], origin,
                           _sidecar(args.out, ".png"))
    return EXIT_OK if rep["ok"] else EXIT_FAIL


def cmd_demo(args) -> int:
    """Full pipeline on the m=3, p=2 instance: cancellation, fit, verify, search, dp, bracket."""
    outdir = args.outdir
    os.makedirs(outdir, exist_ok=True)
    path = lambda name: os.path.join(outdir, name)

    op_file = path("operator.json")
    with open(op_file, "w") as fh:
        json.dump(builtin_operator("rotation3").as_dict(), fh, indent=2)
    mart_file = path("martingale.json")
    with open(mart_file, "w") as fh:
        json.dump({"m": 3, "depth": 1, "leaves": [1.0, -1.0, 0.0]}, fh, indent=2)
    run_cfg = {
        "instance": {"m": 3, "ell": 1, "p": 2.0, "alpha": 0.5,
                     "operator": op_file, "phi": "signed-square"},
        "task": {"samples": args.samples, "C1": 0.0, "C2": 0.0},
        "seed": args.seed,
        "out": {"report": path("verify.json"), "worst_csv": path("worst_splits.csv")},
    }
    with open(path("run.json"), "w") as fh:
        json.dump(run_cfg, fh, indent=2)

    steps = [
        ["check-cancellation", "--operator", op_file, "--phi", "signed-square",
         "--out", path("cancellation.json")],
        ["transform", "--martingale", mart_file, "--operator", op_file,
         "--alpha", "0.5", "--out", path("transform.json")],
    ]
    for step in steps:
        code = main(step + (["--no-figures"] if args.no_figures else []))
        if code != EXIT_OK:
            return code

    fit_cfg = dict(run_cfg)
    fit_cfg["out"] = {"report": path("fit.json")}
    with open(path("fit-run.json"), "w") as fh:
        json.dump(fit_cfg, fh, indent=2)
    code = main(["fit-constants", "--config", path("fit-run.json")]
                + (["--no-figures"] if args.no_figures else []))
    if code != EXIT_OK:
        print("demo: fit failed", file=sys.stderr)
        return code
    fitted = _load_json(path("fit.json"))

    run_cfg["task"]["C1"] = fitted["plus"]["C1"]
    run_cfg["task"]["C2"] = fitted["plus"]["C2"]
    with open(path("run.json"), "w") as fh:
        json.dump(run_cfg, fh, indent=2)
    code = main(["verify-supersolution", "--config", path("run.json")]
                + (["--no-figures"] if args.no_figures else []))
    if code != EXIT_OK:
        return code

    base = ["--operator", op_file, "--phi", "signed-square", "--m", "3", "--p", "2.0"]
    code = main(["search", "--depth-max", "3", "--restarts", "4", "--steps", "600",
                 "--seed", str(args.seed), "--out", path("witness.json")] + base
                + (["--no-figures"] if args.no_figures else []))
    if code != EXIT_OK:
        return code
    code = main(["bellman-dp", "--grid", f"{args.grid_nx},{args.grid_ny}", "--ymax", "8",
                 "--iters", str(args.iters), "--mode", "certified",
                 "--out", path("slice.csv"), "--seed", str(args.seed)] + base
                + (["--no-figures"] if args.no_figures else []))
    if code != EXIT_OK:
        return code
    code = main(["bracket", "--dp", path("slice.csv"), "--witness", path("witness.json"),
                 "--constants", path("fit.json"), "--out", path("bracket.json")]
                + (["--no-figures"] if args.no_figures else []))
    if code != EXIT_OK:
        return code
    bracket = _load_json(path("bracket.json"))
    print(
        f"sharp-constant bracket: [{bracket['lower_bound']:.6f}, "
        f"{bracket['upper_bound']:.6f}] (artifacts in {outdir})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phimart",
        description="Martingale transform inequality laboratory",
    )
    parser.add_argument("--version", action="version", version=f"phimart {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-cancellation", help="decide both cancellation conditions")
    p.add_argument("--operator", required=True, help="operator JSON path or built-in name")
    p.add_argument("--phi", required=True, help="integrand built-in name or JSON spec path")
    p.add_argument("--p", type=float, default=None, help="homogeneity for parametric integrands")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_check_cancellation)

    p = sub.add_parser("transform", help="apply the fractional transform to a martingale file")
    p.add_argument("--martingale", required=True)
    p.add_argument("--operator", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_transform)

    p = sub.add_parser("scan-constants", help="scan one lemma constant")
    p.add_argument("--lemma", required=True,
                   choices=["theta", "epsilon", "i2", "slavin", "psi-local"])
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--operator", default="rotation3")
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_scan_constants)

    p = sub.add_parser("verify-supersolution", help="Monte-Carlo check of a candidate")
    p.add_argument("--config", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_verify_supersolution)

    p = sub.add_parser("fit-constants", help="fit (C1, C2) for both signs of the integrand")
    p.add_argument("--config", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_fit_constants)

    p = sub.add_parser("bellman-dp", help="grid value iteration on the z = 1 slice")
    p.add_argument("--grid", default="41,81", help="nx,ny")
    p.add_argument("--ymax", type=float, default=8.0)
    p.add_argument("--iters", type=int, default=6)
    p.add_argument("--mode", choices=["certified", "heuristic"], default="certified")
    p.add_argument("--out", required=True)
    p.add_argument("--sign", type=int, choices=[1, -1], default=1)
    p.add_argument("--budget", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--operator", default="rotation3")
    p.add_argument("--phi", default="signed-square")
    p.add_argument("--constants", default=None,
                   help="fit report JSON used as the overflow surrogate in heuristic mode")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_bellman_dp)

    p = sub.add_parser("search", help="annealing search for extremal martingales")
    p.add_argument("--depth-max", type=int, default=4)
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--steps", type=int, default=1500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--operator", default="rotation3")
    p.add_argument("--phi", default="signed-square")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_search)

    p = sub.add_parser("bracket", help="combine dp slice, search witness, and fitted constants")
    p.add_argument("--dp", required=True, help="slice CSV from bellman-dp")
    p.add_argument("--witness", required=True, help="witness JSON from search")
    p.add_argument("--constants", required=True, help="fit report JSON")
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_bracket)

    p = sub.add_parser("demo", help="full pipeline on the worked 3-adic instance")
    p.add_argument("--outdir", default="demo-out")
    p.add_argument("--seed", type=int, default=20240)
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--iters", type=int, default=4)
    p.add_argument("--grid-nx", type=int, default=21)
    p.add_argument("--grid-ny", type=int, default=41)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(handler=cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    try:
        return args.handler(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
