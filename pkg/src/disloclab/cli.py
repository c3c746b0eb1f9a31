"""Command line entry point: one JSON report (plus CSV tables) per subcommand."""
import argparse
import os
import sys

import numpy as np

from . import experiments as ex
from .assembly import (ConstructionFailure, ResolutionError, approximate_measure, build_implant,
                       burgers_convergence_check, deviation_report)
from .cell import InconsistentForm, InvalidDomain, SolverFailure, extrapolate_izero, singular_strain, solve_ladder
from .config import ConfigError, load
from .density import EnergyDensity, InvalidInput, hessian_at_identity
from .geometry import ModelManifold, deviation_norm, model_body
from .lattice_selfenergy import (CutoffTooLarge, DislocationLattice, cutoff_doubling_certificate, sigma,
                                 verify_sigma_properties)
from .mesh import CorruptBody, write_mesh_text
from .solve import DegenerateField, DivergenceError, best_rotation, minimize

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


def _density(cfg):
    d = cfg["density"]
    return EnergyDensity(d["kind"], d["lame_mu"], d["lame_lambda"])


def _iquad(cfg):
    w = _density(cfg)
    return singular_strain((1.0, 0.0), hessian_at_identity(w)).closed_form_factor() * np.eye(2)


def _lattice(cfg):
    lat = cfg["lattice"]
    if lat["cutoff_K"] is None:
        return DislocationLattice.certified(lat["basis"], _iquad(cfg))
    return DislocationLattice(tuple(map(tuple, lat["basis"])), float(lat["cutoff_K"]))


def _resolution(cfg):
    return (cfg["domain"]["cells_per_decade"], cfg["domain"]["n_theta"])


def _regime(cfg):
    r = cfg["regime"]
    return ex.RegimeParams(tuple(r["eps_ladder"]), r["rule"], r["power"], r["constant"],
                           tuple(r["table"]) if r["table"] else None)


# ---------------------------------------------------------------- subcommands

def cmd_cell(cfg, args):
    w = _density(cfg)
    v = cfg["measure"]["burgers"]
    res = (max(cfg["domain"]["cells_per_decade"], 32), cfg["domain"]["n_theta"])
    ladder = solve_ladder(v, hessian_at_identity(w), tuple(cfg["domain"]["delta_ladder"]), res, args.workers)
    i0, fit = extrapolate_izero(ladder)
    oracle = singular_strain(v, hessian_at_identity(w)).prelog_factor()
    rep = {"burgers": v, "ladder": [r.to_dict() for r in ladder], "izero": i0, "fit": fit,
           "oracle_prelog": oracle, "relative_error": abs(i0 - oracle) / oracle}
    tables = {"cell_ladder.csv": ([{"delta": r.delta, "value": r.value_delta} for r in ladder], ["delta", "value"])}
    return rep, tables, rep["relative_error"] <= 0.03


def cmd_sigma(cfg, args):
    iq = _iquad(cfg)
    lat = _lattice(cfg)
    rows = []
    for q in cfg["lattice"]["queries"]:
        r = sigma(lat, iq, q)
        rows.append({"query": list(map(float, q)), **r.to_dict()})
    cert = cutoff_doubling_certificate(lat, iq, cfg["lattice"]["queries"])
    props = verify_sigma_properties(lat, iq, cfg["lattice"]["samples"], args.seed)
    rep = {"lattice": lat.to_dict(), "iquad": iq.tolist(), "queries": rows, "certificate": cert, "properties": props}
    return rep, {}, bool(cert["passed"] and props["passed"])


def cmd_build(cfg, args):
    m = cfg["measure"]
    eps = m["eps"]
    lat = _lattice(cfg)
    iq = _iquad(cfg)
    rows, bodies = [], []
    for n in m["n_eps"]:
        meas = approximate_measure(m["mu"], n, eps, lat, iq, tuple(cfg["domain"]["box"]))
        ab = build_implant(meas, n_theta=cfg["domain"]["core_segments"], chi_grid=cfg["domain"]["chi_grid"])
        dev = deviation_report(ab)
        rows.append({"n_eps": n, "atoms": meas.count, "measure": meas.to_dict(), "diagnostics": ab.diagnostics,
                     "deviation": dev})
        bodies.append(ab)
        if args.out:
            write_mesh_text(os.path.join(args.out, f"implant_n{n}.mesh"), ab.body.mesh.points, ab.body.mesh.tris)
    fields = ex.burgers_test_fields()
    conv = burgers_convergence_check(bodies, m["mu"], fields)
    ratios = [r["deviation"]["integral_over_h2"] for r in rows]
    rep = {"rows": rows, "burgers_convergence": conv, "distortion_spread": max(ratios) / min(ratios)}
    ok = (all(r["diagnostics"]["circulation_error"] <= 1e-7 and r["diagnostics"]["min_det"] > 0 for r in rows)
          and rep["distortion_spread"] <= 2.0 and conv["passed"])
    table = [{"n_eps": r["n_eps"], "integral_over_h2": r["deviation"]["integral_over_h2"],
              "min_det": r["diagnostics"]["min_det"]} for r in rows]
    return rep, {"build.csv": (table, ["n_eps", "integral_over_h2", "min_det"])}, ok


def cmd_minimize(cfg, args):
    w = _density(cfg)
    v = np.asarray(cfg["measure"]["burgers"], float) * cfg["measure"]["magnitudes"][0]
    m = ModelManifold(tuple(v), cfg["domain"]["R"])
    body = model_body(m, None, *_resolution(cfg))
    t = cfg["tolerances"]
    res = minimize(body, w, body.chart.copy(), tol_g=t["tol_g"], tol_e=t["tol_e"], max_iter=t["max_iter"])
    rig = best_rotation(body, res.positions)
    rep = {"burgers": v.tolist(), "R": m.r_outer, "energy": res.breakdown.to_dict(), "iterations": res.iterations,
           "converged": res.converged, "rigidity": rig.to_dict(), "vertices": body.mesh.n_vertices}
    if args.out:
        write_mesh_text(os.path.join(args.out, "minimizer.mesh"), res.positions, body.mesh.tris)
    hist = [{"iter": r["iter"], "energy": r["energy"]} for r in res.log]
    return rep, {"minimize_log.csv": (hist, ["iter", "energy"])}, res.converged


def cmd_sweep_scaling(cfg, args):
    w = _density(cfg)
    m = cfg["measure"]
    rep = ex.single_scaling_sweep(m["burgers"], m["magnitudes"], cfg["domain"]["R"], w, _resolution(cfg),
                                  cfg["tolerances"]["tol_g"], args.workers)
    if rep.get("fit_skipped"):
        return rep, {}, True
    ok = rep["fit_residual"] <= 0.10 and abs(rep["kappa_over_prelog"] - 1) <= 0.15
    table = [{k: r[k] for k in ("magnitude", "energy", "scale")} for r in rep["rows"]]
    return rep, {"scaling.csv": (table, ["magnitude", "energy", "scale"])}, ok


def cmd_gamma_limit(cfg, args):
    w = _density(cfg)
    r = cfg["regime"]
    rep = ex.gamma_limit_experiment(_regime(cfg), w, tuple(cfg["measure"]["mu"]), cfg["lattice"]["basis"], r["s"],
                                    {"n_theta": cfg["domain"]["core_segments"], "n_theta_min": 16, "coarsen": 2.0,
                                     "check_closed": False, "chi_grid": cfg["domain"]["chi_grid"]},
                                    J=r["J"], workers=args.workers)
    cols = ["eps", "n_eps", "lower", "measured", "upper", "E_self", "E_elastic", "gap_measured", "gap_upper"]
    table = [{c: row[c] for c in cols} for row in rep["rows"]]
    return rep, {"gamma_limit.csv": (table, cols)}, bool(rep["sandwich_all"] and rep["gap_decreasing"])


def cmd_diagnose(cfg, args):
    w = _density(cfg)
    mags = cfg["measure"]["magnitudes"]
    R, delta = cfg["domain"]["R"], cfg["domain"]["delta"]
    dev = []
    for nv in mags:
        m = ModelManifold((nv, 0.0), R)
        r = np.geomspace(nv, R, 64)[:, None]
        phi = np.linspace(0, 2 * np.pi, 128, endpoint=False)[None, :]
        dev.append(float(np.max(r * deviation_norm(m, r, phi)) / nv))
    rig = ex.rigidity_probe(mags, R, delta, w, cfg["regime"]["trials"], args.seed, workers=args.workers)
    lin = ex.linearization_consistency(cfg["regime"]["eps_ladder"], (1.0, 0.0), R, w, workers=args.workers)
    conv = ex.cell_convergence_sweep(cfg["measure"]["burgers"], delta, cfg["regime"]["eps_ladder"], R, w,
                                     workers=args.workers)
    rep = {"deviation_law": {"magnitudes": mags, "sup_scaled": dev, "max": max(dev)}, "rigidity": rig,
           "linearization": lin, "cell_convergence": conv}
    ok = max(dev) <= 0.25 and rig["stable"] and lin["monotone"] and conv["abs_gap_decreasing"]
    table = [{"eps": r["eps"], "relative_gap": r["relative_gap"]} for r in lin["rows"]]
    return rep, {"linearization.csv": (table, ["eps", "relative_gap"])}, ok


COMMANDS = {"cell": cmd_cell, "sigma": cmd_sigma, "build": cmd_build, "minimize": cmd_minimize,
            "sweep-scaling": cmd_sweep_scaling, "gamma-limit": cmd_gamma_limit, "diagnose": cmd_diagnose}

NUMERIC = (DivergenceError, DegenerateField, SolverFailure, InconsistentForm, ConstructionFailure, CorruptBody,
           CutoffTooLarge, np.linalg.LinAlgError, FloatingPointError, RuntimeError)
CONFIG = (ConfigError, InvalidInput, InvalidDomain, ResolutionError)


def parser():
    p = argparse.ArgumentParser(prog="disloclab", description="Desk-scale dislocation energy experiments.")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="directory for reports and tables")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--check", action="store_true", help="exit 4 when the acceptance check fails")
    p.add_argument("command", choices=sorted(COMMANDS))
    return p


def main(argv=None):
    args = parser().parse_args(argv)
    if args.seed < 0 or args.seed >= 2 ** 64 or args.workers < 1:
        print("error: seed must be a u64 and workers >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load(args.config)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
        rep, tables, ok = COMMANDS[args.command](cfg, args)
    except CONFIG as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    rep = {"command": args.command, "config": cfg, "seed": args.seed, "workers": args.workers,
           "check_passed": bool(ok), "report": rep}
    name = args.command.replace("-", "_")
    if args.out:
        ex.write_json(os.path.join(args.out, f"{name}.json"), rep)
        for fname, (rows, cols) in tables.items():
            ex.write_csv(os.path.join(args.out, fname), rows, cols)
    else:
        print(ex.dumps(rep))
    if args.check and not ok:
        print(f"acceptance check failed for {args.command}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
