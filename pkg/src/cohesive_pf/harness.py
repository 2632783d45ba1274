"""Gamma-convergence experiments on a 1D bar.

The limit energy of a one-slope/one-jump profile is
``sum length*h_conv(slope) + sum g(|jump|)``. For end loading ``t`` on a
bar of length ``L`` its minimum is taken over the jump size ``s``; the
sweep compares that number with discrete phase-field minima as ``eps``
decreases.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import scipy
from scipy.optimize import golden, minimize

from .envelopes import EnvelopeTable
from .laws import MaterialLaw, f_eps, h_scal_conv, make_law, psi_eval
from .phasefield import (GridSpec, PhaseFieldState, SolveConfig, alternate_minimize, assemble_energy,
                         initial_state, topology, cell_gradients, local_oracle)
from .surface import SurfaceDensityCurve, g_vectorial


class UnderResolvedError(RuntimeError):
    """Halving the grid spacing changed the discrete minimum by 1% or more."""


# -- limit functional -----------------------------------------------------------

@dataclass
class LimitProfile1D:
    """Piecewise-affine profile: ``(length, slope)`` segments plus jumps."""

    slope_segments: list
    jumps: list = field(default_factory=list)

    def __post_init__(self):
        segs = []
        for length, slope in self.slope_segments:
            if not length > 0:
                raise ValueError("segment lengths must be positive")
            segs.append((float(length), np.atleast_1d(np.asarray(slope, dtype=float))))
        self.slope_segments = segs
        self.jumps = [np.atleast_1d(np.asarray(j, dtype=float)) for j in self.jumps]

    @property
    def length(self) -> float:
        return float(sum(l for l, _ in self.slope_segments))

    @property
    def total_rise(self) -> np.ndarray:
        rise = sum(l * s for l, s in self.slope_segments)
        return rise + sum(self.jumps, np.zeros_like(rise))

    def to_dict(self) -> dict:
        return {"slope_segments": [[l, s.tolist()] for l, s in self.slope_segments],
                "jumps": [j.tolist() for j in self.jumps]}


def _volume_density(law: MaterialLaw, volume_table: Optional[EnvelopeTable]):
    if law.m == 1 and law.n == 1 and law.psi_kind == "euclidean_squared":
        return lambda s: h_scal_conv(np.abs(s).reshape(-1)[0], law.ell)
    if volume_table is None:
        raise ValueError("this law needs a convex volume table (convex_envelope_grid)")
    return lambda s: volume_table.query(np.asarray(s, dtype=float).reshape(law.m, law.n))


def eval_F0_1d(profile: LimitProfile1D, law: MaterialLaw, curve: SurfaceDensityCurve,
               volume_table: Optional[EnvelopeTable] = None) -> float:
    """Limit energy ``sum length*h_conv(slope) + sum g(jump)`` of a 1D profile.

    Scalar euclidean laws use the closed-form envelope; other laws need a
    ``volume_table`` from :func:`convex_envelope_grid`. Jumps outside the
    curve's range raise ``ValueError``.
    """
    if law.n != 1:
        raise ValueError("1D profiles need a law with n = 1")
    hconv = _volume_density(law, volume_table)
    vol = sum(length * float(hconv(s)) for length, s in profile.slope_segments)
    surf = sum(g_vectorial(j, np.ones(1), law, curve) for j in profile.jumps)
    return float(vol + surf)


@dataclass
class LimitResult:
    value: float
    jump: float
    profile: LimitProfile1D
    elastic_value: float
    fracture_value: float
    fracture_jump: float

    def to_dict(self) -> dict:
        return {"value": self.value, "jump": self.jump, "profile": self.profile.to_dict(),
                "elastic_value": self.elastic_value, "fracture_value": self.fracture_value,
                "fracture_jump": self.fracture_jump}


def limit_min_1d(t_load: float, L: float, law: MaterialLaw, curve: SurfaceDensityCurve,
                 fidelity: Optional[dict] = None, grid_points: int = 2001) -> LimitResult:
    """Minimise the limit energy over one slope plus one jump ``s in [0, t]``.

    A uniform scan over ``s`` is refined by golden-section search on the
    bracket around the best sample (final bracket below ``1e-6``). The
    elastic branch is ``s = 0``; the fracture branch is the best ``s > 0``.
    With ``fidelity`` (``{"w": callable, "q": q}``) there is no end loading
    and the minimum is taken over the same family with free offset and jump
    position; see :func:`limit_min_fidelity_1d`.
    """
    if fidelity is not None:
        return limit_min_fidelity_1d(L, law, curve, fidelity)
    if law.m != 1 or law.n != 1:
        raise ValueError("limit_min_1d handles scalar bars")
    t = abs(float(t_load))
    sign = 1.0 if t_load >= 0 else -1.0
    if t == 0:
        prof = LimitProfile1D([(L, 0.0)])
        return LimitResult(0.0, 0.0, prof, 0.0, 0.0, 0.0)
    if t > curve.t_max * (1 + 1e-12):
        raise ValueError("curve does not cover the load")
    hconv = lambda s: L * h_scal_conv((t - s) / L, law.ell)
    F = lambda s: float(hconv(s) + curve(min(max(s, 0.0), t)))
    ss = np.linspace(0.0, t, grid_points)
    vals = L * np.asarray(h_scal_conv((t - ss) / L, law.ell)) + np.asarray(curve(ss))
    elastic = float(vals[0])
    i = int(np.argmin(vals[1:])) + 1
    s_best, f_best = float(ss[i]), float(vals[i])
    if 1 <= i < grid_points - 1 and vals[i] < vals[i - 1] and vals[i] < vals[i + 1]:
        xs = golden(F, brack=(ss[i - 1], ss[i], ss[i + 1]), tol=1e-8 / max(t, 1e-300), full_output=True)
        if xs[1] < f_best:
            s_best, f_best = float(xs[0]), float(xs[1])
    fracture, s_frac = f_best, s_best
    if elastic <= fracture:
        value, s_star = elastic, 0.0
    else:
        value, s_star = fracture, s_frac
    segs = [(L, sign * (t - s_star) / L)]
    jumps = [sign * s_star] if s_star > 0 else []
    return LimitResult(value, sign * s_star, LimitProfile1D(segs, jumps), elastic, fracture, sign * s_frac)


def limit_min_fidelity_1d(L: float, law: MaterialLaw, curve: SurfaceDensityCurve, fidelity: dict,
                          quad_points: int = 2001) -> LimitResult:
    """Best profile ``u = a + b x + s H(x - x0)`` for the fidelity problem.

    Minimises ``L h_conv(b) + g(|s|) + int_0^L |u - w|^q`` over the four
    parameters (multi-start Nelder-Mead). The family is a restriction, so
    the value is an upper bound of the limit minimum.
    """
    w = fidelity["w"]
    q = float(fidelity.get("q", 2.0))
    x = np.linspace(0, L, quad_points)
    wx = np.asarray(w(x), dtype=float)
    wts = np.full(x.size, L / (x.size - 1))
    wts[0] = wts[-1] = wts[0] / 2

    def cost(p, with_jump=True):
        a, b, s, x0 = p
        if not with_jump:
            s = 0.0
        x0 = min(max(x0, 0.0), L)
        s_abs = abs(s)
        if s_abs > curve.t_max:
            return np.inf
        u = a + b * x + s * (x > x0)
        return L * h_scal_conv(b, law.ell) + curve(s_abs) + float(np.sum(wts * np.abs(u - wx) ** q))

    A = np.stack([np.ones_like(x), x], axis=1)
    (a0, b0), *_ = np.linalg.lstsq(A, wx, rcond=None)
    el = minimize(lambda p: cost(np.array([p[0], p[1], 0, 0]), False), [a0, b0], method="Nelder-Mead",
                  options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000})
    best = (float(el.fun), np.array([el.x[0], el.x[1], 0.0, L / 2]))
    elastic = best[0]
    frac = (np.inf, None)
    jumps = np.diff(wx)
    k = int(np.argmax(np.abs(jumps)))
    for x0 in (x[k], L / 4, L / 2, 3 * L / 4):
        for s0 in (wx[-1] - wx[0], jumps[k]):
            r = minimize(cost, [a0, 0.0, s0, x0], method="Nelder-Mead",
                         options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 8000})
            if r.fun < frac[0]:
                frac = (float(r.fun), r.x)
    if frac[0] < best[0]:
        best = frac
    a, b, s, x0 = best[1]
    x0 = min(max(x0, 0.0), L)
    segs = [(x0, b), (L - x0, b)] if 0 < x0 < L else [(L, b)]
    prof = LimitProfile1D(segs, [s] if s != 0 else [])
    return LimitResult(best[0], float(s), prof, elastic, frac[0], float(frac[1][2]) if frac[1] is not None else 0.0)


def crossover_load(L: float, law: MaterialLaw, curve: SurfaceDensityCurve, t_hi: Optional[float] = None,
                   samples: int = 200) -> dict:
    """Smallest load where the fracture branch overtakes the elastic branch.

    Returns ``{"t_star", "gap"}`` with ``gap = |elastic - fracture|`` at the
    bisected crossover, or ``t_star = None`` if no crossover is found.
    """
    t_hi = t_hi or curve.t_max
    ts = np.linspace(t_hi / samples, t_hi, samples)

    def diff(t):
        r = limit_min_1d(t, L, law, curve)
        return r.elastic_value - r.fracture_value

    prev_t, prev_d = None, None
    for t in ts:
        d = diff(t)
        if d > 0 and prev_d is not None and prev_d <= 0:
            lo, hi = prev_t, t
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if diff(mid) > 0:
                    hi = mid
                else:
                    lo = mid
            r = limit_min_1d(hi, L, law, curve)
            return {"t_star": hi, "gap": abs(r.elastic_value - r.fracture_value)}
        prev_t, prev_d = t, d
    return {"t_star": None, "gap": None}


# -- per-eps lower bound ---------------------------------------------------------

def _node_oracle(P: np.ndarray, eps: float, ell: float) -> np.ndarray:
    """``min_s f_eps(s)^2 P + (1-s)^2/(4 eps)`` per entry of ``P``."""
    return local_oracle(P, eps, ell)[0]


def node_oracle_bound(state: PhaseFieldState, law: MaterialLaw, grid: GridSpec) -> float:
    """Lower bound ``sum_c vol_c phi(Psi(grad u_c))`` on the energy of ``state``.

    ``phi(P) = min_s f_eps(s)^2 P + (1-s)^2/(4 eps)`` minimises the local
    terms cell by cell; the nodal damage term dominates its cell-mean form
    by convexity and the remaining terms are nonnegative. For an almost
    affine elastic ``u`` this is ``(1 - delta) Psi(t/L) L`` with ``delta``
    set by the optimal ``v`` below 1.
    """
    top = topology(grid)
    P = np.asarray(psi_eval(law, cell_gradients(grid, state.u)), dtype=float).reshape(-1)
    return float(np.sum(top.vol * _node_oracle(P, state.eps, law.ell)))


def elastic_oracle_value(t_load: float, L: float, eps: float, law: MaterialLaw) -> float:
    """``L phi(Psi(t/L))``: the node-oracle bound of the affine state."""
    P = np.atleast_1d(float(psi_eval(law, abs(t_load) / L)))
    return float(L * _node_oracle(P, eps, law.ell)[0])


# -- sweeps ---------------------------------------------------------------------

@dataclass
class SweepConfig:
    """Experiment description; mirrors ``sweep.json``."""

    L: float = 1.0
    t_load: float = 0.0
    ell: float = 1.0
    psi: str = "euclidean_squared"
    eps_list: list = field(default_factory=lambda: [0.1, 0.05, 0.02, 0.01])
    eta_rule: str = "eps^3"
    points_per_eps: float = 20.0
    max_rounds: int = 3000
    tol_energy: float = 1e-10
    fidelity: Optional[dict] = None
    crack_fractions: list = field(default_factory=lambda: [1.0, 0.7, 0.4])
    gates: dict = field(default_factory=dict)
    resolution_check: bool = False
    workers: int = 1
    keep_profiles: bool = True

    def __post_init__(self):
        e = [float(x) for x in self.eps_list]
        if any(b >= a for a, b in zip(e, e[1:])) or any(x <= 0 for x in e):
            raise ValueError("eps_list must be strictly decreasing and positive")
        self.eps_list = e
        if self.points_per_eps < 20:
            raise ValueError("points_per_eps must be at least 20 (spacing <= eps/20)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        if "eps" in d and "eps_list" not in d:
            d["eps_list"] = d.pop("eps")
        if "grid_rule" in d:
            d["points_per_eps"] = float(d.pop("grid_rule").get("points_per_eps", 20))
        if "tolerances" in d:
            tol = d.pop("tolerances")
            d.setdefault("max_rounds", tol.get("max_rounds", 3000))
            d.setdefault("tol_energy", tol.get("tol_energy", 1e-10))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sweep config keys {sorted(unknown)}")
        return cls(**d)

    def law(self) -> MaterialLaw:
        return make_law(self.psi, self.ell, 1, 1)

    def nodes(self, eps: float, refine: int = 1) -> int:
        return int(np.ceil(self.points_per_eps * refine * self.L / eps)) + 1


@dataclass
class GammaSweepResult:
    """Per-eps discrete minima against the limit prediction."""

    eps_list: list
    discrete_min: list
    limit_value: float
    rel_errors: list
    runtimes: list
    flags: list = field(default_factory=list)
    start_energies: list = field(default_factory=list)
    best_start: list = field(default_factory=list)
    lower_bounds: list = field(default_factory=list)
    limit: dict = field(default_factory=dict)
    monotone: bool = True
    gates: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    law: dict = field(default_factory=dict)
    profiles: dict = field(default_factory=dict)

    def __post_init__(self):
        e = list(self.eps_list)
        if any(b >= a for a, b in zip(e, e[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        if not all(np.isfinite(r) for r in self.rel_errors):
            raise ValueError("rel_errors must be finite")

    @property
    def passed(self) -> bool:
        return all(self.gates.values())


def _rel_error(value: float, limit: float) -> float:
    return abs(value - limit) / limit if limit > 0 else abs(value - limit)


def _starts(cfg: SweepConfig, law: MaterialLaw, grid: GridSpec, scfg: SolveConfig, eps: float,
            limit: LimitResult) -> dict:
    x = grid.coords()[:, 0]
    L, t, ell = cfg.L, cfg.t_load, law.ell
    starts = {"elastic": initial_state(grid, law, scfg, eps)}
    if cfg.fidelity is not None:
        s = limit.jump
        if s != 0:
            x0 = L / 2
            for l, _ in limit.profile.slope_segments[:1]:
                x0 = l if l < L else L / 2
            st = _crack_state(x, grid, law, scfg, eps, x0, s, starts["elastic"].u[:, 0])
            starts["crack:limit"] = st
        return starts
    xi = t / L
    v_rec = np.clip(1 - np.sqrt(2 * ell * eps) * float(psi_eval(law, xi)) ** 0.25, 0.0, 1.0)
    v = np.full(x.size, v_rec)
    v[0] = v[-1] = 1.0
    starts["recovery"] = PhaseFieldState((t * x / L)[:, None], v, eps)
    for frac in cfg.crack_fractions:
        if t == 0:
            break
        s = frac * t
        r = np.clip((x - L / 2 + eps) / (2 * eps), 0, 1)
        u0 = (t - s) * x / L + s * r
        starts[f"crack:{frac:g}"] = _crack_state(x, grid, law, scfg, eps, L / 2, s, u0, keep_u=True)
    return starts


def _crack_state(x, grid, law, scfg, eps, x0, s, u0, keep_u=False) -> PhaseFieldState:
    """Competitor with a damage plateau ``(1 - sqrt(ell|s|))_+`` of half-width ``eps``
    at ``x0``, ramping back to 1 at distance ``2 eps``."""
    pl = max(0.0, 1 - np.sqrt(min(1.0, law.ell * abs(s))))
    d = np.abs(x - x0)
    v = np.where(d <= eps, pl, np.where(d >= 2 * eps, 1.0, pl + (1 - pl) * (d - eps) / eps))
    v[0] = v[-1] = 1.0
    if keep_u:
        return PhaseFieldState(np.asarray(u0, float)[:, None].copy(), v, eps)
    r = np.clip((x - x0 + eps) / (2 * eps), 0, 1)
    u = np.asarray(u0, float) + s * (r - (x > x0))
    return PhaseFieldState(u[:, None], v, eps)


def _solve_config(cfg: SweepConfig) -> SolveConfig:
    bc = {"left": {"v": 1.0}, "right": {"v": 1.0}}
    fid = None
    if cfg.fidelity is None:
        bc["left"]["u"] = 0.0
        bc["right"]["u"] = cfg.t_load
    else:
        fid = cfg.fidelity.get("w")
    return SolveConfig(eta_rule=cfg.eta_rule, bc=bc, max_rounds=cfg.max_rounds, tol_energy=cfg.tol_energy,
                       fidelity_w=fid, fidelity_q=float((cfg.fidelity or {}).get("q", 2.0)))


def _fidelity_callable(spec: dict):
    w = spec.get("w")
    if callable(w):
        return w
    if isinstance(w, dict) and "constant" in w:
        c = float(np.asarray(w["constant"]).reshape(-1)[0])
        return lambda x: np.full_like(np.asarray(x, float), c)
    if isinstance(w, dict) and "affine" in w:
        A = float(np.asarray(w["affine"]).reshape(-1)[0])
        b = float(np.asarray(w.get("offset", 0.0)).reshape(-1)[0])
        return lambda x: A * np.asarray(x, float) + b
    if isinstance(w, dict) and "step" in w:
        lo, hi, x0 = w["step"]
        return lambda x: np.where(np.asarray(x, float) > x0, hi, lo)
    raise ValueError("fidelity limit needs w as constant, affine, step or callable")


def _fidelity_spec_for_solver(spec: dict):
    w = spec.get("w")
    if isinstance(w, dict) and "step" in w:
        f = _fidelity_callable(spec)
        return lambda pts: f(pts[:, 0])
    return w


def _run_eps(args):
    cfg, eps, limit, refine = args
    law = cfg.law()
    grid = GridSpec.bar(cfg.L, cfg.nodes(eps, refine))
    scfg = _solve_config(cfg)
    if cfg.fidelity is not None:
        scfg.fidelity_w = _fidelity_spec_for_solver(cfg.fidelity)
    t0 = time.perf_counter()
    energies, flags, best = {}, [], None
    for name, st in _starts(cfg, law, grid, scfg, eps, limit).items():
        init_E = assemble_energy(st, law, grid, scfg).total
        state, trace = alternate_minimize(st, law, grid, scfg)
        E = state.energy_parts.total
        energies[name] = {"initial": init_E, "final": E, "rounds": len(trace) - 1}
        flags += [f"{name}:{f}" for f in state.flags if f != "no_decrease"]
        if best is None or E < best[1]:
            best = (name, E, state)
    name, E, state = best
    ok_limsup = all(E <= v["initial"] + 1e-9 for k, v in energies.items() if k != "elastic")
    prof = {"x": grid.coords()[:, 0].tolist(), "u": state.u[:, 0].tolist(), "v": state.v.tolist()}
    lb = node_oracle_bound(state, law, grid)
    return {"eps": eps, "E": E, "best": name, "energies": energies, "flags": flags, "lower_bound": lb,
            "limsup_ok": ok_limsup, "profile": prof, "seconds": time.perf_counter() - t0}


def gamma_sweep(config: SweepConfig, curve: SurfaceDensityCurve) -> GammaSweepResult:
    """Run the phase-field bar for every ``eps`` and compare with the limit.

    Each ``eps`` is solved from several starts (elastic, the affine recovery
    state, centred crack competitors) and the lowest final energy is kept,
    so the discrete minimum never exceeds the recovery construction on the
    same grid. Flags: ``nonmonotone`` if rel_errors increase over the last
    three ``eps``; per-eps solver flags; ``limsup`` / ``lower_bound``
    violations.
    """
    if isinstance(config, dict):
        config = SweepConfig.from_dict(config)
    law = config.law()
    if abs(curve.ell - law.ell) > 1e-12:
        raise ValueError("curve and sweep use different ell")
    if config.fidelity is not None:
        limit = limit_min_1d(0.0, config.L, law, curve,
                             fidelity={"w": _fidelity_callable(config.fidelity),
                                       "q": config.fidelity.get("q", 2.0)})
    else:
        limit = limit_min_1d(config.t_load, config.L, law, curve)
    if config.resolution_check and config.eps_list:
        a = _run_eps((config, config.eps_list[0], limit, 1))["E"]
        b = _run_eps((config, config.eps_list[0], limit, 2))["E"]
        if abs(a - b) >= 0.01 * max(abs(b), 1e-12) and max(abs(a), abs(b)) > 1e-12:
            raise UnderResolvedError(f"halving the spacing at eps={config.eps_list[0]} moved the minimum "
                                     f"from {a:.6g} to {b:.6g}")
    jobs = [(config, eps, limit, 1) for eps in config.eps_list]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            rows = list(ex.map(_run_eps, jobs))
    else:
        rows = [_run_eps(j) for j in jobs]
    flags, lbs = [], []
    for row in rows:
        f = list(row["flags"])
        if not row["limsup_ok"]:
            f.append("limsup")
        lbs.append(row["lower_bound"])
        if row["E"] < row["lower_bound"] - 1e-10 or row["E"] < 0:
            f.append("lower_bound")
        flags.append(f)
    rel = [_rel_error(r["E"], limit.value) for r in rows]
    tail = rel[-3:]
    monotone = all(b <= a for a, b in zip(tail, tail[1:]))
    gates = {}
    g = config.gates or {}
    if "final_rel_error_max" in g and rel:
        gates["final_rel_error"] = bool(rel[-1] <= float(g["final_rel_error_max"]))
    if g.get("monotone_last3", False):
        gates["monotone_last3"] = bool(monotone)
    profiles = {repr(r["eps"]): r["profile"] for r in rows} if config.keep_profiles else {}
    return GammaSweepResult(
        eps_list=[r["eps"] for r in rows], discrete_min=[r["E"] for r in rows], limit_value=limit.value,
        rel_errors=rel, runtimes=[r["seconds"] for r in rows], flags=flags,
        start_energies=[r["energies"] for r in rows], best_start=[r["best"] for r in rows],
        lower_bounds=lbs, limit=limit.to_dict(), monotone=monotone, gates=gates,
        config=_jsonable(config.to_dict()), law=law.to_dict(), profiles=profiles)


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: repr(o)))


# -- persistence ----------------------------------------------------------------

MANIFEST = "manifest.json"
RESULTS_CSV = "results.csv"
PROFILES_CSV = "profiles.csv"


def _atomic_text(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def versions() -> dict:
    import numba
    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "cohesive_pf": __version__}


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def persist_results(result: GammaSweepResult, path: str) -> str:
    """Write ``manifest.json``, ``results.csv`` and ``profiles.csv`` into ``path``.

    Every file goes through a temporary file and an atomic rename. Floats
    are written with ``repr`` so a reload reproduces them exactly.
    """
    os.makedirs(path, exist_ok=True)
    man = asdict(result)
    profiles = man.pop("profiles")
    man["config_hash"] = config_hash(result.config)
    man["versions"] = versions()
    man["files"] = {"results": RESULTS_CSV, "profiles": PROFILES_CSV}
    man["profile_eps"] = list(profiles.keys())
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["eps", "discrete_min", "limit", "rel_error"])
    for e, d, r in zip(result.eps_list, result.discrete_min, result.rel_errors):
        wr.writerow([repr(float(e)), repr(float(d)), repr(float(result.limit_value)), repr(float(r))])
    pbuf = io.StringIO()
    pw = csv.writer(pbuf, lineterminator="\n")
    pw.writerow(["eps", "x", "u", "v"])
    for key, prof in profiles.items():
        for x, u, v in zip(prof["x"], prof["u"], prof["v"]):
            pw.writerow([key, repr(float(x)), repr(float(u)), repr(float(v))])
    _atomic_text(os.path.join(path, RESULTS_CSV), buf.getvalue())
    _atomic_text(os.path.join(path, PROFILES_CSV), pbuf.getvalue())
    _atomic_text(os.path.join(path, MANIFEST), json.dumps(man, indent=1, default=repr))
    return path


def reload_results(path: str) -> GammaSweepResult:
    """Inverse of :func:`persist_results`."""
    with open(os.path.join(path, MANIFEST)) as fh:
        man = json.load(fh)
    with open(os.path.join(path, RESULTS_CSV), newline="") as fh:
        rows = list(csv.DictReader(fh))
    profiles = {k: {"x": [], "u": [], "v": []} for k in man.get("profile_eps", [])}
    with open(os.path.join(path, PROFILES_CSV), newline="") as fh:
        for row in csv.DictReader(fh):
            p = profiles.setdefault(row["eps"], {"x": [], "u": [], "v": []})
            for k in ("x", "u", "v"):
                p[k].append(float(row[k]))
    fields = set(GammaSweepResult.__dataclass_fields__)
    kw = {k: v for k, v in man.items() if k in fields}
    kw["eps_list"] = [float(r["eps"]) for r in rows]
    kw["discrete_min"] = [float(r["discrete_min"]) for r in rows]
    kw["rel_errors"] = [float(r["rel_error"]) for r in rows]
    kw["profiles"] = profiles
    return GammaSweepResult(**kw)
