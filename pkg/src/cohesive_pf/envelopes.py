"""Convex envelopes, rank-one lamination and numerical recession functions.

The quasiconvex envelope of ``h`` is bracketed: :func:`convex_envelope_grid`
gives the lower bound, :func:`lamination_envelope` (iterated rank-one
convexification) the upper bound.
"""
from __future__ import annotations

import functools
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import minimize

from . import _kernels as K
from .laws import MaterialLaw, h_eval, h_infty_eval, h_scal, psi_infty_eval

TABLE_KINDS = ("convex", "lamination", "recession")
MAX_GRID_POINTS = 10_000_000
MAX_DEPTH = 4


class EnvelopeCertificationError(RuntimeError):
    """The computed envelope exceeds the raw density on the certified region."""


class NonConvergentRecessionError(RuntimeError):
    """Recession slopes from consecutive decades disagree."""


# -- scalar function descriptors ------------------------------------------

def scalar_function(desc) -> tuple[Callable, Optional[dict]]:
    """Resolve a scalar function descriptor.

    ``desc`` is a callable, or a dict ``{"name": ..., ...}`` with names
    ``h_scal`` (needs ``ell``), ``square``, ``linear`` (needs ``slope``).
    Returns the vectorised callable and a JSON-able descriptor (``None`` for
    raw callables).
    """
    if callable(desc):
        return desc, None
    if isinstance(desc, str):
        desc = {"name": desc}
    name = desc.get("name")
    if name == "h_scal":
        ell = float(desc["ell"])
        return (lambda t: h_scal(np.asarray(t, float), ell)), dict(desc)
    if name == "square":
        return (lambda t: np.asarray(t, float) ** 2), dict(desc)
    if name == "linear":
        c = float(desc.get("slope", 1.0))
        return (lambda t: c * np.asarray(t, float)), dict(desc)
    raise ValueError(f"unknown scalar function {desc!r}")


# -- tables ---------------------------------------------------------------

@dataclass
class EnvelopeTable:
    """Sampled envelope with interpolating queries.

    ``grid_spec["type"]`` is ``axes`` (per-axis ``[min, max, count]``),
    ``singular_values`` (diag table over ``[-smax, smax]^2`` for 2x2 laws
    invariant under rotations) or ``radial`` (directions x radii).
    Queries return ``min(raw, interpolant)`` whenever the raw function is
    known; the raw function bounds every envelope from above.
    """

    kind: str
    grid_spec: dict
    values: np.ndarray
    depth: int = 0
    meta: dict = field(default_factory=dict)
    law: Optional[MaterialLaw] = field(default=None, repr=False, compare=False)
    source: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in TABLE_KINDS:
            raise ValueError(f"unknown table kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("table values must be finite")

    @property
    def label(self) -> str:
        return f"lamination_depth_{self.depth}" if self.kind == "lamination" else self.kind

    def axes(self) -> list:
        return [np.linspace(lo, hi, int(c)) for lo, hi, c in self.grid_spec["axes"]]

    def _raw(self, pts: np.ndarray):
        if self.law is not None:
            return np.asarray(h_eval(self.law, pts.reshape(pts.shape[0], self.law.m, self.law.n)))
        if self.source is not None:
            return np.asarray(self.source(pts[:, 0]), dtype=float)
        return None

    def query(self, xi):
        """Evaluate the table at one point or a batch of points."""
        t = self.grid_spec["type"]
        if t == "axes":
            d = len(self.grid_spec["axes"])
            a = np.asarray(xi, dtype=float)
            if self.law is not None:
                single = a.shape in (self.law.shape, (d,)) or (a.ndim == 0 and d == 1)
            else:
                single = a.ndim == 0 or (a.ndim == 1 and a.size == d)
            pts = a.reshape(-1, d)
            lo = np.array([s[0] for s in self.grid_spec["axes"]])
            hi = np.array([s[1] for s in self.grid_spec["axes"]])
            tol = 1e-12 * (1 + np.abs(hi - lo))
            if np.any(pts < lo - tol) or np.any(pts > hi + tol):
                raise ValueError("query point outside the table grid")
            pts = np.clip(pts, lo, hi)
            interp = RegularGridInterpolator(self.axes(), self.values, method="linear")
            out = interp(pts)
            raw = self._raw(pts)
            if raw is not None:
                out = np.minimum(out, raw)
        elif t == "singular_values":
            law = self.law
            mats = np.asarray(xi, dtype=float).reshape(-1, 2, 2)
            single = np.asarray(xi).size == 4
            kind = 0 if self.grid_spec["law_kind"] == "euclidean_squared" else 1
            smax = float(self.grid_spec["smax"])
            out = np.empty(mats.shape[0])
            for i, mt in enumerate(mats):
                s1, s2 = K.signed_svals(mt[0, 0], mt[0, 1], mt[1, 0], mt[1, 1])
                if abs(s1) > smax or abs(s2) > smax:
                    raise ValueError("query point outside the table grid")
                out[i] = K.table_lookup(self.values, smax, s1, s2, kind)
            if law is not None:
                out = np.minimum(out, np.asarray(h_eval(law, mats)))
        elif t == "radial":
            dirs = np.asarray(self.grid_spec["directions"], dtype=float)
            radii = np.asarray(self.grid_spec["radii"], dtype=float)
            pts = np.asarray(xi, dtype=float).reshape(-1, dirs.shape[1])
            single = pts.shape[0] == 1
            out = np.empty(pts.shape[0])
            for i, p in enumerate(pts):
                r = np.linalg.norm(p)
                k = int(np.argmax(dirs @ (p / r))) if r > 0 else 0
                if r > 0 and np.linalg.norm(dirs[k] - p / r) > 1e-9:
                    raise ValueError("radial table has no matching direction")
                if r > radii[-1] or r < radii[0]:
                    raise ValueError("query radius outside the table")
                out[i] = np.interp(r, radii, self.values[k])
        else:
            raise ValueError(f"unknown grid type {t!r}")
        return float(out[0]) if single else out

    __call__ = query

    # -- persistence --------------------------------------------------------
    def header(self) -> dict:
        return {"kind": self.kind, "label": self.label, "depth": int(self.depth),
                "grid_spec": self.grid_spec, "meta": self.meta,
                "law": self.law.to_dict() if self.law is not None else None,
                "shape": list(self.values.shape)}

    def save(self, path: str) -> str:
        """Write a self-describing table (``.json`` or binary ``.npz``)."""
        path = os.fspath(path)
        hdr = self.header()
        d = os.path.dirname(os.path.abspath(path))
        if path.endswith(".json"):
            payload = json.dumps({"header": hdr, "values": self.values.ravel().tolist()})
            _atomic_write(path, payload.encode(), d)
        else:
            fd, tmp = tempfile.mkstemp(dir=d, suffix=".npz")
            os.close(fd)
            with open(tmp, "wb") as fh:
                np.savez_compressed(fh, header=np.array(json.dumps(hdr)), values=self.values)
            os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path: str) -> "EnvelopeTable":
        path = os.fspath(path)
        if path.endswith(".json"):
            with open(path) as fh:
                raw = json.load(fh)
            hdr = raw["header"]
            values = np.asarray(raw["values"], dtype=float).reshape(hdr["shape"])
        else:
            with np.load(path) as z:
                hdr = json.loads(str(z["header"]))
                values = z["values"]
        law = MaterialLaw.from_dict(hdr["law"]) if hdr.get("law") else None
        src = None
        fdesc = hdr["meta"].get("function")
        if fdesc is not None:
            src, _ = scalar_function(fdesc)
        return cls(kind=hdr["kind"], grid_spec=hdr["grid_spec"], values=values,
                   depth=hdr["depth"], meta=hdr["meta"], law=law, source=src)


def _atomic_write(path: str, data: bytes, d: str):
    fd, tmp = tempfile.mkstemp(dir=d)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class RayProbe:
    """Unit matrix direction and increasing radii for recession estimates."""

    direction: np.ndarray
    radii: tuple

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("probe direction must have unit Frobenius norm")
        r = np.asarray(self.radii, dtype=float)
        if r.ndim != 1 or r.size < 3 or np.any(r < 0) or np.any(np.diff(r) <= 0):
            raise ValueError("radii must be an increasing list of nonnegative reals")
        pos = r[r > 0]
        if pos.size == 0 or pos[-1] / pos[0] < 100.0 * (1 - 1e-12):
            raise ValueError("radii must span at least two decades")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "radii", tuple(r.tolist()))

    @classmethod
    def default(cls, direction, r_min=1.0, decades=4, per_decade=4) -> "RayProbe":
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        return cls(d, tuple(np.logspace(np.log10(r_min), np.log10(r_min) + decades,
                                        decades * per_decade + 1)))


# -- 1D convex envelope ---------------------------------------------------

def convex_envelope_1d(f, t_max: float, samples: int = 4097, slope_at_infinity="auto") -> EnvelopeTable:
    """Lower convex envelope of a scalar function on ``[0, 1.5*t_max]``.

    Parameters
    ----------
    f : callable or descriptor
        See :func:`scalar_function`.
    t_max : float
        Largest query abscissa; the grid is padded to ``1.5*t_max``.
    samples : int
        Grid size, at least 16.
    slope_at_infinity : float, "auto" or None
        Recession slope used to extend the hull by a ray to the right.
        ``"auto"`` probes ``(f(2R) - f(R))/R`` at ``R = 1e6*max(t_max, 1)``.
    """
    if samples < 16:
        raise ValueError("samples must be at least 16")
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    fn, desc = scalar_function(f)
    t = np.linspace(0.0, 1.5 * t_max, int(samples))
    y = np.asarray(fn(t), dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("f returned non-finite values on the sample grid")
    hull = K.lower_hull(t, y)
    env = K.hull_eval(t[hull], y[hull], t)
    if slope_at_infinity == "auto":
        R = 1e6 * max(t_max, 1.0)
        s_inf = float((fn(np.array([2 * R]))[0] - fn(np.array([R]))[0]) / R)
    else:
        s_inf = slope_at_infinity
    if s_inf is not None and np.isfinite(s_inf):
        # cheapest ray of slope s_inf leaving any hull vertex to the left of t
        hx, hy = t[hull], y[hull]
        start = np.minimum.accumulate(hy - s_inf * hx)
        pos = np.searchsorted(hx, t, side="right") - 1
        env = np.minimum(env, s_inf * t + start[pos])
    meta = {"function": desc, "t_max": t_max, "samples": int(samples), "slope_at_infinity": s_inf}
    return EnvelopeTable(kind="convex", grid_spec={"type": "axes", "axes": [[0.0, 1.5 * t_max, int(samples)]]},
                         values=env, meta=meta, source=fn)


# -- grid convex envelope (discrete Legendre-Fenchel) -----------------------

def _axes_from_spec(grid_spec, dim: int) -> list:
    if isinstance(grid_spec, dict):
        grid_spec = grid_spec["axes"]
    spec = list(grid_spec)
    if len(spec) == 3 and np.isscalar(spec[0]):
        spec = [spec] * dim
    if len(spec) != dim:
        raise ValueError(f"grid spec has {len(spec)} axes, law needs {dim}")
    out = []
    for lo, hi, c in spec:
        c = int(c)
        if c < 2 or not hi > lo:
            raise ValueError("each axis needs min < max and count >= 2")
        out.append([float(lo), float(hi), c])
    return out


def legendre_transform(axes: list, values: np.ndarray, dual_axes: list) -> np.ndarray:
    """Discrete conjugate ``max_x (p.x - f(x))`` on a product grid, axis by axis.

    The first axis conjugates ``f``; each later axis conjugates the negated
    partial result, which factorises the multi-dimensional maximum.
    """
    g = np.asarray(values, dtype=float)
    for k, (x, p) in enumerate(zip(axes, dual_axes)):
        moved = np.moveaxis(g, k, -1)
        shp = moved.shape
        res = K.conjugate_lines(np.ascontiguousarray(x), np.ascontiguousarray(moved.reshape(-1, shp[-1])),
                                np.ascontiguousarray(p), k > 0)
        g = np.moveaxis(res.reshape(shp[:-1] + (p.size,)), -1, k)
    return g


def convex_envelope_values(axes: list, values: np.ndarray, dual_axes: Optional[list] = None,
                           dual_mask: Optional[Callable] = None) -> np.ndarray:
    """Biconjugate of sampled values on a product grid.

    Without ``dual_axes`` each dual axis spans the range of finite-difference
    slopes along that axis; in 1D the dual grid is the set of chord slopes,
    which makes the result the exact lower hull at the samples.
    """
    values = np.asarray(values, dtype=float)
    if dual_axes is None:
        dual_axes = []
        for k, x in enumerate(axes):
            sl = np.diff(values, axis=k) / np.diff(x).reshape([-1 if i == k else 1 for i in range(values.ndim)])
            if values.ndim == 1:
                dual_axes.append(np.unique(np.concatenate([sl, [0.0]])))
            else:
                lo, hi = float(np.min(sl)), float(np.max(sl))
                dual_axes.append(np.linspace(lo, hi, x.size | 1))
    fstar = legendre_transform(axes, values, dual_axes)
    if dual_mask is not None:
        fstar = np.where(dual_mask(np.meshgrid(*dual_axes, indexing="ij")), fstar, np.inf)
    return legendre_transform(dual_axes, fstar, axes)


def _interior(shape, frac=0.8) -> tuple:
    sl = []
    for c in shape:
        cut = int(np.floor(c * (1 - frac) / 2))
        sl.append(slice(cut, c - cut))
    return tuple(sl)


def convex_envelope_grid(law: MaterialLaw, grid_spec, dual_count: Optional[int] = None,
                         certify: bool = True) -> EnvelopeTable:
    """Convex envelope of ``h`` on a product grid over the ``m*n`` matrix entries.

    Double discrete Legendre-Fenchel transform, one axis at a time. The dual
    variable is restricted to the domain of the conjugate,
    ``{p : p.xi <= ell*sqrt(Psi_inf(xi))}``, so the bounded grid does not
    bend the linear-growth branch. In 1D the dual grid consists of the chord
    slopes; otherwise it is uniform with ``dual_count`` points per axis.

    Raises
    ------
    EnvelopeCertificationError
        If the envelope exceeds ``h`` on the interior 80% of the grid.
    """
    dim = law.m * law.n
    spec = _axes_from_spec(grid_spec, dim)
    npts = int(np.prod([c for _, _, c in spec]))
    if npts > MAX_GRID_POINTS:
        raise ValueError(f"grid has {npts} points, limit is {MAX_GRID_POINTS}")
    axes = [np.linspace(lo, hi, c) for lo, hi, c in spec]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    hvals = np.asarray(h_eval(law, mesh.reshape(mesh.shape[:-1] + (law.m, law.n))), dtype=float)
    hvals = hvals.reshape(mesh.shape[:-1])
    del mesh

    eye = np.eye(dim)
    bounds = np.array([float(h_infty_eval(law, eye[i])) for i in range(dim)])
    if dim == 1:
        sl = np.diff(hvals) / np.diff(axes[0])
        b = bounds[0]
        dual = [np.unique(np.concatenate([np.clip(sl, -b, b), [-b, 0.0, b]]))]
    else:
        dual = []
        for i, (_, _, c) in enumerate(spec):
            cnt = int(dual_count or c) | 1
            dual.append(np.linspace(-bounds[i], bounds[i], cnt))

    if law.euclidean_recession:
        def mask(P):
            r2 = sum(p * p for p in P)
            return r2 <= (law.ell * (1 + 1e-12)) ** 2
    else:
        dirs = _sphere_sample(dim, 2048)
        dirs = np.concatenate([dirs, eye, -eye])
        caps = np.asarray(h_infty_eval(law, dirs.reshape(-1, law.m, law.n)))

        def mask(P):
            flat = np.stack([p.ravel() for p in P], axis=-1)
            ok = np.all(flat @ dirs.T <= caps * (1 + 1e-9) + 1e-12, axis=1)
            return ok.reshape(P[0].shape)

    env = convex_envelope_values(axes, hvals, dual, mask)
    if not np.all(np.isfinite(env)):
        raise EnvelopeCertificationError("envelope has non-finite values; grid too coarse")
    env = np.maximum(env, 0.0)
    if certify:
        inner = _interior(env.shape)
        excess = env[inner] - hvals[inner]
        if np.any(excess > 1e-6 * (1 + np.abs(hvals[inner]))):
            raise EnvelopeCertificationError(
                f"envelope exceeds h by {float(excess.max()):.3g} on the certified region")
    meta = {"law": law.to_dict() if law.psi_kind != "custom" or law.custom_ref else None,
            "dual_counts": [int(d.size) for d in dual], "certified_fraction": 0.8}
    return EnvelopeTable(kind="convex", grid_spec={"type": "axes", "axes": spec}, values=env,
                         meta=meta, law=law)


# -- lamination -----------------------------------------------------------

def _sphere_sample(k: int, count: int) -> np.ndarray:
    """Deterministic near-uniform sample of the half sphere ``S^{k-1}/{+-1}``."""
    if k == 1:
        return np.ones((1, 1))
    if k == 2:
        a = np.arange(count) * np.pi / count
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    if k == 3:
        # Fibonacci lattice on the upper hemisphere
        i = np.arange(count) + 0.5
        z = i / count
        phi = np.pi * (1 + 5**0.5) * i
        r = np.sqrt(1 - z * z)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    rng = np.random.default_rng(12345)
    v = rng.standard_normal((count, k))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * np.where(v[:, :1] < 0, -1.0, 1.0)


def _budget_split(budget: int) -> tuple[int, int]:
    """Direction lattice sizes; powers of two so smaller budgets nest in larger ones."""
    if budget < 1:
        raise ValueError("split_budget must be positive")
    e = int(np.floor(np.log2(budget)))
    ka = 2 ** (e // 2)
    kb = 2 ** (e - e // 2)
    return ka, kb


def _fast_kind(law: MaterialLaw) -> Optional[int]:
    if law.m == 2 and law.n == 2:
        if law.psi_kind == "euclidean_squared":
            return 0
        if law.psi_kind == "dist_sq_SOn":
            return 1
    return None


@functools.lru_cache(maxsize=32)
def _lamination_tables(kind: int, ell: float, smax: float, count: int, budget: int,
                       line_samples: int, levels: int) -> tuple:
    ka, kb = _budget_split(budget)
    aa = np.arange(ka) * np.pi / ka
    ab = np.arange(kb) * np.pi / kb
    ts = np.linspace(-2 * smax, 2 * smax, line_samples)
    tab = np.zeros((count, count))
    out = []
    for k in range(levels):
        tab = K.lamination_level(tab, smax, aa, ab, ts, ell, kind, k > 0)
        out.append(tab)
    return tuple(out)


@dataclass(frozen=True)
class LaminationSettings:
    """Discretisation of the 2x2 lamination search.

    ``smax`` and ``count`` define the signed singular-value tables,
    ``line_samples`` the samples along each rank-one line (odd, includes 0).
    """

    smax: Optional[float] = None
    count: int = 81
    line_samples: int = 161
    refine: bool = True
    refine_starts: int = 1

    def resolve_smax(self, law: MaterialLaw) -> float:
        return float(self.smax) if self.smax else 4.0 * max(law.ell, 1.0)


def lamination_tables(law: MaterialLaw, depth: int, split_budget: int = 512,
                      settings: LaminationSettings = LaminationSettings()) -> list:
    """Tables ``R_1..R_depth`` for a rotation-invariant 2x2 law (cached)."""
    kind = _fast_kind(law)
    if kind is None:
        raise ValueError("table lamination needs a 2x2 euclidean_squared or dist_sq_SOn law")
    if depth < 1:
        return []
    ts = settings.line_samples | 1
    return list(_lamination_tables(kind, law.ell, settings.resolve_smax(law), settings.count | 1,
                                   int(split_budget), ts, int(depth)))


def build_lamination_table(law: MaterialLaw, depth: int, split_budget: int = 512,
                           settings: LaminationSettings = LaminationSettings()) -> EnvelopeTable:
    if not 1 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in 1..{MAX_DEPTH}")
    tab = lamination_tables(law, depth, split_budget, settings)[-1]
    smax = settings.resolve_smax(law)
    spec = {"type": "singular_values", "smax": smax, "count": int(tab.shape[0]),
            "law_kind": law.psi_kind}
    meta = {"split_budget": int(split_budget), "line_samples": settings.line_samples | 1}
    return EnvelopeTable(kind="lamination", grid_spec=spec, values=tab, depth=depth, meta=meta, law=law)


def lamination_envelope(law: MaterialLaw, xi, depth: int, split_budget: int = 512,
                        settings: LaminationSettings = LaminationSettings()) -> float:
    """Iterated rank-one convexification ``R_depth(xi)`` of ``h``.

    ``R_0 = h`` and ``R_{k+1}(xi)`` is the smaller of ``R_k(xi)`` and the best
    value at ``xi`` of the convex envelope of ``R_k`` restricted to a rank-one
    line ``xi + t a(x)b``. Along each line the envelope is taken over sampled
    points together with recession rays, which covers every split
    ``lambda`` at once.

    For 2x2 laws invariant under rotations, ``R_1..R_{depth-1}`` are
    precomputed on signed singular-value tables and the last level is
    evaluated at ``xi`` itself, refined by Nelder-Mead over the two
    direction angles. Other laws use a direct recursion, feasible for
    small depth and budget.

    The result is nonincreasing in ``depth`` and satisfies
    ``h_conv(xi) <= value <= h(xi)`` up to discretisation.
    """
    if not 0 <= depth <= MAX_DEPTH:
        raise ValueError(f"depth must be in 0..{MAX_DEPTH}")
    a = law.as_matrix(xi)
    if a.ndim != 2:
        raise ValueError("lamination_envelope evaluates a single matrix")
    val = float(h_eval(law, a))
    if depth == 0:
        return val
    kind = _fast_kind(law)
    if kind is None:
        return min(val, _generic_lamination(law, a, depth, split_budget, settings))
    tabs = lamination_tables(law, depth - 1, split_budget, settings)
    smax = settings.resolve_smax(law)
    ka, kb = _budget_split(split_budget)
    aa = np.arange(ka) * np.pi / ka
    ab = np.arange(kb) * np.pi / kb
    s1, s2 = K.signed_svals(a[0, 0], a[0, 1], a[1, 0], a[1, 1])
    if kind == 0:
        s2 = abs(s2)
    reach = max(2 * smax, 2 * (abs(s1) + law.ell))
    ts = np.linspace(-reach, reach, 2 * (settings.line_samples // 2) + 1)
    dummy = np.zeros((3, 3))
    for k in range(1, depth + 1):
        tab = tabs[k - 2] if k >= 2 else dummy
        use = k >= 2
        best, ba, bb = K.best_direction(s1, 0.0, 0.0, s2, aa, ab, ts, tab, smax, law.ell, kind, use)
        if settings.refine and np.isfinite(best):
            def obj(z, tab=tab, use=use):
                return K.line_value(s1, 0.0, 0.0, s2, np.cos(z[0]), np.sin(z[0]), np.cos(z[1]), np.sin(z[1]),
                                    ts, tab, smax, law.ell, kind, use)
            res = minimize(obj, np.array([ba, bb]), method="Nelder-Mead",
                           options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 400})
            best = min(best, float(res.fun))
        val = min(val, best)
    return val


def _generic_lamination(law: MaterialLaw, xi: np.ndarray, depth: int, budget: int,
                        settings: LaminationSettings, max_evals: float = 5e7) -> float:
    m, n = law.m, law.n
    ka = max(1, int(round(np.sqrt(budget)))) if m > 1 else 1
    kb = max(1, budget // ka) if n > 1 else 1
    if m == 1:
        kb = budget if n > 1 else 1
    if n == 1:
        ka = budget if m > 1 else 1
    A = _sphere_sample(m, ka)
    B = _sphere_sample(n, kb)
    dirs = np.einsum("ai,bj->abij", A, B).reshape(-1, m, n)
    # densest odd line sampling (33 at least) that fits the evaluation cap
    nt = settings.line_samples | 1
    while nt > 33 and float(dirs.shape[0] * nt) ** depth > max_evals:
        nt = max(33, (nt // 2) | 1)
    cost = float(dirs.shape[0] * nt) ** depth
    if cost > max_evals:
        raise ValueError(f"generic lamination needs ~{cost:.2g} evaluations; lower depth or split_budget")
    slopes = np.asarray(h_infty_eval(law, dirs), dtype=float).reshape(-1)
    reach = 2.0 * (np.linalg.norm(xi) + law.ell + 1.0)
    ts = np.linspace(-reach, reach, nt)

    def R(k, pts):
        base = np.asarray(h_eval(law, pts), dtype=float).reshape(-1)
        if k == 0:
            return base
        P = pts.shape[0]
        line = pts[:, None, None] + ts[None, None, :, None, None] * dirs[None, :, None]
        vals = R(k - 1, line.reshape(-1, m, n)).reshape(P * dirs.shape[0], nt)
        best = K.conv_rows(ts, vals, np.tile(slopes, P)).reshape(P, dirs.shape[0]).min(axis=1)
        return np.minimum(base, np.minimum(best, vals.reshape(P, dirs.shape[0], nt)[:, 0, nt // 2]))

    return float(R(depth, xi[None])[0])


# -- recession ------------------------------------------------------------

def _ray_values(source, probe: RayProbe, scale: float) -> np.ndarray:
    r = np.asarray(probe.radii)
    pts = (scale * r)[:, None] * probe.direction.reshape(1, -1)
    if isinstance(source, MaterialLaw):
        return np.asarray(h_eval(source, pts.reshape(-1, source.m, source.n)), dtype=float)
    if isinstance(source, EnvelopeTable):
        return np.asarray([source.query(p.reshape(probe.direction.shape)) for p in pts], dtype=float)
    shape = probe.direction.shape
    if probe.direction.size == 1:
        return np.asarray(source(pts[:, 0]), dtype=float).reshape(-1)
    return np.asarray([source(p.reshape(shape)) for p in pts], dtype=float)


def _lsq_slope(r: np.ndarray, v: np.ndarray) -> float:
    A = np.stack([r, np.ones_like(r)], axis=1)
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    return float(coef[0])


def recession_numeric(source, probe: RayProbe, scale: float = 1.0, rtol: float = 0.05) -> float:
    """Recession slope ``lim value(t*scale*dir)/t`` from a ray probe.

    ``source`` is a :class:`MaterialLaw` (probes ``h``), an
    :class:`EnvelopeTable`, or a callable taking a matrix (or a scalar for
    1-entry directions). The slope is the least-squares fit over the top
    decade of radii; the fit over the decade below must agree within
    ``rtol``, otherwise :class:`NonConvergentRecessionError` is raised.
    """
    r = np.asarray(probe.radii)
    v = _ray_values(source, probe, scale)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite values along the probe ray")
    top = r >= r[-1] / 10 * (1 - 1e-12)
    lower = (r >= r[-1] / 100 * (1 - 1e-12)) & (r <= r[-1] / 10 * (1 + 1e-12))
    if top.sum() < 2 or lower.sum() < 2:
        raise ValueError("need at least two radii in each of the top two decades")
    s_top = _lsq_slope(r[top], v[top])
    s_low = _lsq_slope(r[lower], v[lower])
    if abs(s_top - s_low) > rtol * max(abs(s_top), 1e-12):
        raise NonConvergentRecessionError(
            f"slope {s_low:.6g} on the lower decade vs {s_top:.6g} on the top decade")
    return s_top


def recession_table(source, directions, radii) -> EnvelopeTable:
    """Sample ``source`` along several rays; per-direction slopes go in ``meta``."""
    dirs = np.asarray(directions, dtype=float)
    dirs = dirs.reshape(dirs.shape[0], -1)
    vals, slopes = [], []
    for d in dirs:
        shape = d.shape if not isinstance(source, MaterialLaw) else (source.m, source.n)
        probe = RayProbe(d.reshape(shape), tuple(radii))
        vals.append(_ray_values(source, probe, 1.0))
        slopes.append(recession_numeric(source, probe))
    spec = {"type": "radial", "directions": dirs.tolist(), "radii": list(map(float, radii))}
    return EnvelopeTable(kind="recession", grid_spec=spec, values=np.array(vals),
                         meta={"slopes": slopes})
