"""Command line entry point ``cohesive-pf``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .envelopes import (EnvelopeTable, LaminationSettings, build_lamination_table, convex_envelope_grid)
from .harness import SweepConfig, _atomic_text, gamma_sweep, persist_results
from .laws import MaterialLaw, h_eval, make_law, psi_eval, psi_infty_eval
from .phasefield import GridSpec, SolveConfig, alternate_minimize, initial_state
from .surface import SurfaceDensityCurve, gscal_curve


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(" ", "").split(",") if x]


def _amplitudes(text: str) -> np.ndarray:
    # "a:b:n" is a linspace, otherwise a comma list
    if ":" in text:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n))
    return np.array(_floats(text))


def _law_from_args(a) -> MaterialLaw:
    return make_law(a.psi, a.ell, a.m, a.n)


def _add_law_args(p, psi_flag="--psi"):
    p.add_argument(psi_flag, dest="psi", default="euclidean_squared",
                   help="euclidean_squared, dist_sq_SOn or custom:module:function")
    p.add_argument("--ell", type=float, default=1.0)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--n", type=int, default=None)


def cmd_law_eval(a) -> int:
    law = _law_from_args(a)
    xi = np.array(_floats(a.xi))
    if xi.size != law.m * law.n:
        raise SystemExit(f"--xi needs {law.m * law.n} entries for a {law.m}x{law.n} law")
    xi = xi.reshape(law.m, law.n)
    out = {"psi": float(psi_eval(law, xi)), "h": float(h_eval(law, xi))}
    try:
        out["psi_infty"] = float(psi_infty_eval(law, xi))
    except Exception as exc:  # custom densities without a recession limit
        out["psi_infty_error"] = str(exc)
    print(json.dumps(out))
    return 0


def cmd_envelope_build(a) -> int:
    law = _law_from_args(a)
    if a.kind == "convex":
        if not a.grid:
            raise SystemExit("--grid min,max,count is required for convex tables")
        lo, hi, c = _floats(a.grid)
        tab = convex_envelope_grid(law, [lo, hi, int(c)], certify=not a.no_certify)
    else:
        st = LaminationSettings(smax=a.smax, count=a.count)
        tab = build_lamination_table(law, a.depth, a.split_budget, st)
    tab.save(a.out)
    print(json.dumps({"out": a.out, "kind": tab.kind, "depth": tab.depth, "grid_spec": tab.grid_spec}))
    return 0


def cmd_envelope_query(a) -> int:
    tab = EnvelopeTable.load(a.table)
    xi = np.array(_floats(a.at))
    print(json.dumps({"at": xi.tolist(), "value": float(tab.query(xi))}))
    return 0


def cmd_gscal(a) -> int:
    T = _floats(a.T)
    curve = gscal_curve(a.ell, _amplitudes(a.amplitudes), T_ladder=T, nodes_per_unit=a.nodes_per_unit,
                        max_rounds=a.max_rounds, workers=a.workers)
    curve.save(a.out)
    print(json.dumps({"out": a.out, "T_used": curve.T_used, "flagged": curve.flagged}))
    return 0


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def run_simulation(cfg: dict):
    """Run one alternating minimisation from a ``run.json`` style dict."""
    g = cfg["grid"]
    grid = GridSpec(int(g.get("dim", len(np.atleast_1d(g["extent"])))), tuple(np.atleast_1d(g["extent"])),
                    tuple(np.atleast_1d(g["nodes"])))
    lw = cfg.get("law", {})
    law = make_law(lw.get("psi", "euclidean_squared"), float(lw.get("ell", 1.0)), lw.get("m"), lw.get("n"))
    tol = cfg.get("tolerances", {})
    fid = cfg.get("fidelity") or {}
    scfg = SolveConfig(eta_rule=cfg.get("eta_rule", "eps^1.5"), bc=cfg.get("bc", {}),
                       fidelity_w=fid.get("w"), fidelity_q=float(fid.get("q", 2.0)),
                       max_rounds=int(tol.get("max_rounds", 1000)), tol_energy=float(tol.get("tol_energy", 1e-10)))
    eps = float(cfg["eps"])
    state, trace = alternate_minimize(initial_state(grid, law, scfg, eps), law, grid, scfg)
    return grid, law, state, trace


def cmd_simulate(a) -> int:
    cfg = _load_json(a.config)
    grid, law, state, trace = run_simulation(cfg)
    X = grid.coords()
    cols = ["x", "y"][: grid.dim] + [f"u{i}" for i in range(law.m)] + ["v"]
    sio = io.StringIO()
    w = csv.writer(sio, lineterminator="\n")
    w.writerow(cols)
    for i in range(grid.n_nodes):
        w.writerow([repr(float(c)) for c in X[i]] + [repr(float(c)) for c in state.u[i]] + [repr(float(state.v[i]))])
    _atomic_text(a.out, sio.getvalue())
    side = {"config": cfg, "grid": grid.to_dict(), "law": law.to_dict(), "eps": state.eps,
            "energy_parts": state.energy_parts.as_dict(), "flags": state.flags, "trace": trace}
    _atomic_text(os.path.splitext(a.out)[0] + ".json", json.dumps(side, indent=1))
    print(json.dumps({"out": a.out, "energy": state.energy_parts.total, "rounds": len(trace) - 1,
                      "flags": state.flags}))
    return 0


def cmd_gamma_sweep(a) -> int:
    cfg = SweepConfig.from_dict(_load_json(a.config))
    curve = SurfaceDensityCurve.load(a.curve)
    res = gamma_sweep(cfg, curve)
    persist_results(res, a.out)
    for e, d, r in zip(res.eps_list, res.discrete_min, res.rel_errors):
        print(f"eps={e:g} discrete_min={d:.6g} limit={res.limit_value:.6g} rel_error={r:.4f}")
    for name, ok in res.gates.items():
        print(f"gate {name}: {'PASS' if ok else 'FAIL'}")
    return 0 if res.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cohesive-pf", description="Phase-field cohesive fracture tools")
    sub = p.add_subparsers(dest="command", required=True)

    law = sub.add_parser("law", help="material law utilities").add_subparsers(dest="action", required=True)
    ev = law.add_parser("eval", help="evaluate Psi, Psi_inf and h at one matrix")
    _add_law_args(ev)
    ev.add_argument("--xi", required=True, help="comma-separated row-major entries")
    ev.set_defaults(func=cmd_law_eval)

    env = sub.add_parser("envelope", help="envelope tables").add_subparsers(dest="action", required=True)
    b = env.add_parser("build", help="build a convex or lamination table")
    _add_law_args(b, "--law")
    b.add_argument("--kind", choices=["convex", "lamination"], default="convex")
    b.add_argument("--depth", type=int, default=1)
    b.add_argument("--grid", help="min,max,count per axis (convex)")
    b.add_argument("--split-budget", type=int, default=512)
    b.add_argument("--smax", type=float, default=None)
    b.add_argument("--count", type=int, default=81)
    b.add_argument("--no-certify", action="store_true")
    b.add_argument("--out", required=True, help=".json or .npz")
    b.set_defaults(func=cmd_envelope_build)
    q = env.add_parser("query", help="interpolate a stored table")
    q.add_argument("table")
    q.add_argument("--at", required=True, help="comma-separated row-major entries")
    q.set_defaults(func=cmd_envelope_query)

    g = sub.add_parser("gscal", help="scalar surface density curve")
    g.add_argument("--ell", type=float, default=1.0)
    g.add_argument("--amplitudes", required=True, help="comma list or start:stop:count")
    g.add_argument("--T", default="16,32", help="comma-separated truncation ladder")
    g.add_argument("--nodes-per-unit", type=int, default=128)
    g.add_argument("--max-rounds", type=int, default=500)
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gscal)

    s = sub.add_parser("simulate", help="one alternating minimisation run")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    gs = sub.add_parser("gamma-sweep", help="eps sweep against the limit energy")
    gs.add_argument("--config", required=True)
    gs.add_argument("--curve", required=True)
    gs.add_argument("--out", required=True)
    gs.set_defaults(func=cmd_gamma_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
