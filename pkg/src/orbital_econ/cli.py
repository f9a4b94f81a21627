"""Command-line entry point.

Every subcommand writes its outputs and a ``manifest.json`` into ``--out``
and prints a one-line summary. Exit codes: 0 success, 1 failed acceptance
checks (``reproduce`` only), 2 usage error, 3 validation error, 4 numerical
non-convergence. Errors are also reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConvergenceError,
    DomainError,
    NoPositiveLaunchError,
    OrbitEconError,
    UnboundedEquilibriumError,
    ValidationError,
)
from .params import OrbitState, Scenario, read_config, scenario_from_flat

log = logging.getLogger("orbital_econ")

EXIT_OK, EXIT_FAILED_CHECKS, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3, 4
BUILTIN_SCENARIOS = ("qualitative", "calibrated")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        raise SystemExit(EXIT_USAGE)


def _emit_error(kind: str, message: str, **extra):
    payload = dict(error=kind, message=message, **extra)
    print(json.dumps(payload, default=str), file=sys.stderr)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17e}"
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()


# --------------------------------------------------------------------------
# argument helpers


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip().replace("-", "_")
        v = v.strip()
        if v.lower() in ("true", "false"):
            out[k] = v.lower() == "true"
        else:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


def _flag_overrides(args) -> dict:
    out = {}
    for flag, key in (("beta_dd", "beta_dd"), ("beta_sd", "beta_sd"), ("growth_a", "a"),
                      ("eta", "eta"), ("r", "r")):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    out.update(_parse_set(getattr(args, "set", None)))
    return out


def _load_scenario(args, default: str = "qualitative") -> tuple[Scenario, dict]:
    from .scenarios import calibrated_scenario, factor_productivity, qualitative_scenario

    src = args.config or default
    overrides = _flag_overrides(args)
    if src in BUILTIN_SCENARIOS:
        base = qualitative_scenario() if src == "qualitative" else calibrated_scenario()
    else:
        flat, _ = read_config(src)
        base = scenario_from_flat(flat)
    if src == "calibrated" and "eta" in overrides and "pi" not in overrides:
        overrides["pi"] = factor_productivity(overrides["eta"])
    sc = base.with_overrides(**overrides) if overrides else base
    return sc, overrides


def _pair(text: str, name: str) -> tuple[float, float]:
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"{name} expects two comma-separated numbers, got {text!r}") from exc
    return a, b


def _floats(text: str, name: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"{name} expects comma-separated numbers, got {text!r}") from exc


def _grid(args, sc):
    from .planner import Grid2D, default_grid

    if getattr(args, "grid", None):
        return Grid2D.parse(args.grid)
    return default_grid(sc)


# --------------------------------------------------------------------------
# subcommands (each returns (summary line, payload for the manifest))


def cmd_simple_model(args, out: Path):
    from . import simple_model as sm

    if args.config:
        flat, _ = read_config(args.config)
        known = {"pi", "r", "F", "x_bar", "sigma", "eta"}
        unknown = set(flat) - known
        if unknown:
            raise ValidationError(f"unknown simple-model fields: {', '.join(sorted(unknown))}")
        try:
            p = sm.SimpleParams(**flat)
        except TypeError as exc:
            raise ValidationError(f"incomplete simple-model config: {exc}") from exc
    else:
        p = sm.PANEL_A if args.panel == "A" else sm.PANEL_B
    over = _parse_set(args.set)
    if over:
        from dataclasses import replace
        p = replace(p, **over)
    cond = sm.kessler_conditions(p)
    s_hat = sm.open_access_launch(p)
    s_star = sm.planner_launch(p)
    oa_b, pl_b = sm.linear_kessler_bounds(p)
    res = dict(
        params=asdict(p),
        oa_kessler=cond.oa_kessler,
        planner_kessler=cond.planner_kessler,
        oa_bound=oa_b,
        planner_bound=pl_b,
        S_K=cond.S_K,
        S_hat=s_hat,
        S_star=s_star,
        oa_crosses_threshold=bool(s_hat >= cond.S_K),
        planner_crosses_threshold=bool(s_star >= cond.S_K),
        degenerate=cond.degenerate,
    )
    if p.eta != 0:
        res["downward_demand"] = asdict(sm.downward_demand_extension(p))
    write_json(out / "simple_model.json", res)
    write_csv(out / "value_curves.csv", ["S", "V", "SV", "external_cost", "segment"], sm.value_curves(p))
    return (f"oa_kessler={str(cond.oa_kessler).lower()} planner_kessler={str(cond.planner_kessler).lower()} "
            f"S_K={cond.S_K:.6g}"), dict(params=asdict(p))


def cmd_oa_simulate(args, out: Path):
    from .open_access import OpenAccessPolicy
    from .phase import simulate

    sc, over = _load_scenario(args)
    s0, d0 = _pair(args.init, "--init")
    traj = simulate(OpenAccessPolicy(sc), OrbitState(s0, d0), args.periods, sc, t0=args.t0,
                    stop_early=not args.full)
    write_csv(out / "trajectory.csv", ["t", "X", "S", "D", "L"], traj.rows())
    f = traj.final
    return f"{len(traj.t)} rows, {traj.termination}, final S={f.S:.6g} D={f.D:.6g}", dict(overrides=over, scenario=sc)


def cmd_oa_steady_states(args, out: Path):
    from .open_access import find_steady_states, stability_margin

    sc, over = _load_scenario(args)
    recs = find_steady_states(sc, args.t)
    rows = [(r.S_star, r.D_star, r.X_star, r.stable, r.y_prime,
             stability_margin(r, sc) if sc.mode == "constant" else None) for r in recs]
    write_csv(out / "steady_states.csv", ["S", "D", "X", "stable", "y_prime", "closed_form_margin"], rows)
    write_json(out / "steady_states.json", [r.as_dict() for r in recs])
    kinds = ",".join("stable" if r.stable else "unstable" for r in recs) or "none"
    return f"{len(recs)} steady states ({kinds})", dict(overrides=over, scenario=sc)


def cmd_planner_solve(args, out: Path):
    from .planner import solve_planner

    sc, over = _load_scenario(args)
    grid = _grid(args, sc)
    res = solve_planner(sc, grid, T=args.horizon, tol_fraction=args.tol_fraction, max_iter=args.max_iter)
    header = ["S\\D"] + [_fmt(d) for d in grid.D_nodes]
    write_csv(out / "W.csv", header, ([s, *row] for s, row in zip(grid.S_nodes, res.W.values)))
    write_csv(out / "X.csv", header, ([s, *row] for s, row in zip(grid.S_nodes, res.X.values)))
    rep = res.report()
    rep["grid"] = asdict(grid)
    write_json(out / "convergence.json", rep)
    return (f"converged in {res.iterations} iterations, sup-norm {rep['final_sup_norm']:.3e}, "
            f"{res.clamp_count} clamped queries"), dict(overrides=over, scenario=sc, grid=asdict(grid))


def cmd_mec(args, out: Path):
    from .planner import external_cost_general, external_cost_steady_state, steady_state_gap, steady_window

    sc, over = _load_scenario(args)
    s, d = _pair(args.at, "--at")
    state = OrbitState(s, d)
    ss = external_cost_steady_state(state, sc)
    res = dict(steady_state_form=ss.as_dict(), steady_state_gap=steady_state_gap(state, sc))
    if ss.label == "steady-state":
        res["general_form"] = external_cost_general(*steady_window(state, sc), sc).as_dict()
    write_json(out / "mec.json", res)
    return f"xi={ss.xi_total:.6e} ({ss.label})", dict(overrides=over, scenario=sc, at=(s, d))


def cmd_basin(args, out: Path):
    from .open_access import OpenAccessPolicy
    from .phase import classify_basin

    sc, over = _load_scenario(args)
    grid = _grid(args, sc)
    bm = classify_basin(OpenAccessPolicy(sc), sc, grid.S_nodes, grid.D_nodes, horizon=args.horizon, t=args.t)
    write_csv(out / "basin.csv", ["S", "D", "class"], bm.rows())
    counts = bm.counts()
    write_json(out / "basin_summary.json", dict(counts=counts, d_threshold=bm.d_threshold,
                                                rule=bm.rule.as_dict(), horizon=bm.horizon))
    return " ".join(f"{k}={v}" for k, v in counts.items()), dict(overrides=over, scenario=sc, grid=asdict(grid))


def cmd_nullclines(args, out: Path):
    from .open_access import OpenAccessPolicy
    from .phase import nullclines

    sc, over = _load_scenario(args)
    grid = _grid(args, sc)
    sat, deb = nullclines(OpenAccessPolicy(sc), sc, grid.S_nodes, grid.D_nodes, t=args.t)
    rows = []
    for kind, lines in (("satellite", sat), ("debris", deb)):
        for k, ln in enumerate(lines):
            rows.extend((kind, k, p[0], p[1]) for p in ln)
    write_csv(out / "nullclines.csv", ["nullcline", "segment", "S", "D"], rows)
    return f"{len(sat)} satellite and {len(deb)} debris nullcline segments", dict(overrides=over, scenario=sc)


def cmd_kessler_time(args, out: Path):
    from .phase import kessler_time

    sc, over = _load_scenario(args, default="calibrated")
    init = OrbitState(*_pair(args.init, "--init")) if args.init else None
    res = kessler_time(sc, init, max_years=args.max_years, horizon=args.horizon)
    write_json(out / "kessler_time.json", dict(year=res.year, label=res.label, start_year=res.start_year,
                                               max_years=res.max_years, note=res.note))
    years = res.start_year + np.arange(len(res.path_S))
    cls = list(res.classes) + [None] * (len(res.path_S) - len(res.classes))
    write_csv(out / "path.csv", ["year", "S", "D", "class"],
              zip(years, res.path_S, res.path_D, (None if c is None else int(c) for c in cls)))
    return f"Kessler time {res.label}", dict(overrides=over, scenario=sc)


def cmd_sweep(args, out: Path):
    from .phase import sweep_kessler_times

    sc, over = _load_scenario(args, default="calibrated")
    values = _floats(args.values, "--values")
    rows = sweep_kessler_times(sc, args.axis, values, max_years=args.max_years, horizon=args.horizon,
                               jobs=args.jobs)
    write_csv(out / "sweep.csv", [args.axis, "kessler_year"], rows)
    return f"{len(rows)} Kessler times over {args.axis}", dict(overrides=over, scenario=sc, values=values)


def cmd_calibrate(args, out: Path):
    from .calibration import ECON_CSV, TRAFFIC_CSV, calibrate, emit_calibration

    res = calibrate(args.econ or ECON_CSV, args.traffic or TRAFFIC_CSV, eta=args.eta if args.eta is not None else 0.0,
                    a=args.growth_a if args.growth_a is not None else 0.03,
                    use_estimates=args.use_estimates, overrides=_parse_set(args.set), penalty=args.penalty)
    emit_calibration(out / "calibration.cfg", res, stamp=False)
    write_json(out / "diagnostics.json", res.diagnostics)
    d = res.diagnostics
    return (f"eta1_F={d['eta1_F']:.4f} (se {d['eta1_F_se']:.4f}), gammas=({d['gamma0_hat']:.3e}, "
            f"{d['gamma1_hat']:.3e}, {d['gamma2_hat']:.3e})"), dict(provenance=res.provenance)


def cmd_reproduce(args, out: Path):
    from .reproduce import CHECKS, run_all

    keys = [k.strip().upper() for k in args.only.split(",")] if args.only else None
    if keys:
        bad = [k for k in keys if k not in CHECKS]
        if bad:
            raise UsageError(f"unknown checks: {', '.join(bad)}")
    checks = run_all(jobs=args.jobs, seed=args.seed, quick=args.quick, keys=keys)
    write_json(out / "report.json", [c.as_dict() for c in checks])
    with open(out / "report.txt", "w") as fh:
        for c in checks:
            fh.write(c.line() + "\n")
    for c in checks:
        print(c.line())
    passed = sum(c.passed for c in checks)
    return f"{passed}/{len(checks)} acceptance checks passed", dict(all_passed=passed == len(checks))


COMMANDS = {
    "simple-model": cmd_simple_model,
    "oa-simulate": cmd_oa_simulate,
    "oa-steady-states": cmd_oa_steady_states,
    "planner-solve": cmd_planner_solve,
    "mec": cmd_mec,
    "basin": cmd_basin,
    "nullclines": cmd_nullclines,
    "kessler-time": cmd_kessler_time,
    "sweep": cmd_sweep,
    "calibrate": cmd_calibrate,
    "reproduce": cmd_reproduce,
}


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "--scenario", dest="config", default=None,
                        help="scenario config file, or a built-in name (qualitative, calibrated)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("--seed", type=int, default=0, help="seed for randomised sampling")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any scenario field")
    common.add_argument("-v", "--verbose", action="store_true")

    econ_flags = argparse.ArgumentParser(add_help=False)
    econ_flags.add_argument("--beta-dd", dest="beta_dd", type=float)
    econ_flags.add_argument("--beta-sd", dest="beta_sd", type=float)
    econ_flags.add_argument("--growth-a", "--a", dest="growth_a", type=float)
    econ_flags.add_argument("--eta", type=float)
    econ_flags.add_argument("--r", type=float)

    grid_flag = argparse.ArgumentParser(add_help=False)
    grid_flag.add_argument("--grid", help="s_max,d_max,n_s,n_d")

    p = _Parser(prog="orbital-econ", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simple-model", parents=[common], help="three-period model and Kessler conditions")
    s.add_argument("--panel", choices=["A", "B"], default="A")

    s = sub.add_parser("oa-simulate", parents=[common, econ_flags], help="open-access trajectory")
    s.add_argument("--init", default="0,0", help="S0,D0")
    s.add_argument("--periods", type=int, default=500)
    s.add_argument("--t0", type=float, default=0.0)
    s.add_argument("--full", action="store_true", help="do not stop at convergence")

    s = sub.add_parser("oa-steady-states", parents=[common, econ_flags], help="open-access steady states")
    s.add_argument("--t", type=float, default=None, help="frozen period of a time-varying scenario")

    s = sub.add_parser("planner-solve", parents=[common, econ_flags, grid_flag], help="planner value iteration")
    s.add_argument("--horizon", type=int, default=150, help="finite-horizon seed length")
    s.add_argument("--tol-fraction", type=float, default=0.01)
    s.add_argument("--max-iter", type=int, default=2000)

    s = sub.add_parser("mec", parents=[common, econ_flags], help="external cost of a marginal satellite")
    s.add_argument("--at", required=True, help="S,D")

    s = sub.add_parser("basin", parents=[common, econ_flags, grid_flag], help="stable basin and Kessler region")
    s.add_argument("--horizon", type=int, default=2000)
    s.add_argument("--t", type=float, default=0.0)

    s = sub.add_parser("nullclines", parents=[common, econ_flags, grid_flag], help="open-access nullclines")
    s.add_argument("--t", type=float, default=0.0)

    s = sub.add_parser("kessler-time", parents=[common, econ_flags], help="first year in the Kessler region")
    s.add_argument("--init", default=None, help="S0,D0 (default: the 2020 shell)")
    s.add_argument("--max-years", type=int, default=700)
    s.add_argument("--horizon", type=int, default=5000)

    s = sub.add_parser("sweep", parents=[common, econ_flags], help="Kessler times over one parameter")
    s.add_argument("--axis", choices=["beta_dd", "growth_a", "eta"], default="beta_dd")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--max-years", type=int, default=700)
    s.add_argument("--horizon", type=int, default=5000)

    s = sub.add_parser("calibrate", parents=[common, econ_flags], help="regressions and calibrated config")
    s.add_argument("--econ", default=None, help="economic panel CSV")
    s.add_argument("--traffic", default=None, help="traffic panel CSV")
    s.add_argument("--use-estimates", action="store_true", help="use regression estimates instead of published values")
    s.add_argument("--penalty", type=float, default=None, help="fixed ridge penalty (default: cross-validated)")

    s = sub.add_parser("reproduce", parents=[common], help="run the acceptance checks")
    s.add_argument("--quick", action="store_true", help="shorter Kessler-time sweeps")
    s.add_argument("--only", default=None, help="comma-separated check keys, e.g. C1,C4")
    return p


def _scenario_record(sc) -> dict:
    return sc.to_flat() if isinstance(sc, Scenario) else sc


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary, info = COMMANDS[args.command](args, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _emit_error("usage", str(exc))
        return EXIT_USAGE
    except (ConvergenceError, UnboundedEquilibriumError) as exc:
        _emit_error("numerical", str(exc), diagnostics=getattr(exc, "diagnostics", {}))
        return EXIT_NUMERICAL
    except (ValidationError, DomainError, NoPositiveLaunchError, OrbitEconError) as exc:
        _emit_error("validation", str(exc))
        return EXIT_VALIDATION

    scenario = _scenario_record(info.pop("scenario", None)) if "scenario" in info else None
    manifest = dict(
        subcommand=args.command,
        argv=argv,
        scenario=scenario,
        scenario_hash=_hash(scenario) if scenario is not None else None,
        overrides=info.pop("overrides", {}),
        seed=args.seed,
        jobs=args.jobs,
        tool_version=__version__,
        wall_clock_seconds=time.perf_counter() - t0,
        details=info,
    )
    write_json(out / "manifest.json", manifest)
    print(f"{args.command}: {summary}")
    if args.command == "reproduce" and not info.get("all_passed", True):
        return EXIT_FAILED_CHECKS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
