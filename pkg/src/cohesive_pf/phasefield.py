"""Discrete phase-field energies on structured 1D/2D grids and their
alternating minimisation.

Energy (per cell ``c``, node ``a``)::

    elastic         sum_c vol_c f_eps(vbar_c)^2 Psi(grad u_c)
    regularization  eta * sum_c vol_c Psi(grad u_c)
    damage_local    sum_a w_a (1 - v_a)^2 / (4 eps)
    damage_gradient eps * sum_c vol_c |grad v_c|^2
    fidelity        sum_a w_a |u_a - w_a|^q

Cells are intervals in 1D and right triangles (two per grid square) in 2D,
so gradients are constant per cell and one-point quadrature is exact for
the gradient terms. ``vbar_c`` is the mean of ``v`` over the cell's
vertices and ``w_a`` are lumped nodal volumes.
"""
from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import cg, splu

from .laws import MaterialLaw, gamma_eps, nearest_rotation, psi_eval

FACES = {1: ("left", "right"), 2: ("left", "right", "bottom", "top")}


class AssemblyError(FloatingPointError):
    """A NaN appeared in one of the energy parts."""


class SolverError(RuntimeError):
    """Linear solver failed to reach its tolerance."""


@dataclass(frozen=True)
class GridSpec:
    """Box ``[0, extent_0] x ...`` with ``nodes`` per axis (``dim`` 1 or 2)."""

    dim: int
    extent: tuple
    nodes: tuple

    def __post_init__(self):
        ext = tuple(float(e) for e in np.atleast_1d(self.extent))
        nod = tuple(int(n) for n in np.atleast_1d(self.nodes))
        if self.dim not in (1, 2) or len(ext) != self.dim or len(nod) != self.dim:
            raise ValueError("dim must be 1 or 2 with one extent and node count per axis")
        if any(n < 3 for n in nod) or any(e <= 0 for e in ext):
            raise ValueError("need at least 3 nodes and positive extent per axis")
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "nodes", nod)

    @classmethod
    def bar(cls, L: float, nodes: int) -> "GridSpec":
        return cls(1, (L,), (nodes,))

    @property
    def spacing(self) -> tuple:
        return tuple(e / (n - 1) for e, n in zip(self.extent, self.nodes))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def axes(self) -> list:
        return [np.linspace(0.0, e, n) for e, n in zip(self.extent, self.nodes)]

    def coords(self) -> np.ndarray:
        """Nodal coordinates, shape ``(n_nodes, dim)``, C order over ``nodes``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def face_nodes(self, face: str) -> np.ndarray:
        idx = np.arange(self.n_nodes).reshape(self.nodes)
        if face == "left":
            return idx[0].ravel() if self.dim == 2 else idx[:1]
        if face == "right":
            return idx[-1].ravel() if self.dim == 2 else idx[-1:]
        if self.dim == 2 and face == "bottom":
            return idx[:, 0]
        if self.dim == 2 and face == "top":
            return idx[:, -1]
        raise ValueError(f"unknown face {face!r} for dim {self.dim}")

    def to_dict(self) -> dict:
        return {"dim": self.dim, "extent": list(self.extent), "nodes": list(self.nodes)}


@dataclass(frozen=True)
class _Topology:
    cells: np.ndarray        # (C, k) vertex indices
    vol: np.ndarray          # (C,)
    D: sp.csr_matrix         # (C*dim, N) cell gradients
    avg: sp.csr_matrix       # (C, N) vertex means
    lumped: np.ndarray       # (N,)
    lap: sp.csr_matrix       # D^T diag(vol) D


@functools.lru_cache(maxsize=16)
def topology(grid: GridSpec) -> _Topology:
    N = grid.n_nodes
    if grid.dim == 1:
        (h,) = grid.spacing
        n = grid.nodes[0]
        cells = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
        vol = np.full(n - 1, h)
        rows = np.repeat(np.arange(n - 1), 2)
        cols = cells.ravel()
        data = np.tile([-1.0 / h, 1.0 / h], n - 1)
        D = sp.csr_matrix((data, (rows, cols)), shape=(n - 1, N))
    else:
        hx, hy = grid.spacing
        nx, ny = grid.nodes
        idx = np.arange(N).reshape(nx, ny)
        p00 = idx[:-1, :-1].ravel()
        p10 = idx[1:, :-1].ravel()
        p01 = idx[:-1, 1:].ravel()
        p11 = idx[1:, 1:].ravel()
        t1 = np.stack([p00, p10, p11], axis=1)
        t2 = np.stack([p00, p11, p01], axis=1)
        cells = np.concatenate([t1, t2])
        C = cells.shape[0]
        nsq = p00.size
        vol = np.full(C, hx * hy / 2)
        # lower triangle: dx = (u10-u00)/hx, dy = (u11-u10)/hy
        # upper triangle: dx = (u11-u01)/hx, dy = (u01-u00)/hy
        r, c, d = [], [], []
        k = np.arange(nsq)
        for (rowoff, a, b, s) in ((0, p10, p00, 1 / hx), (1, p11, p10, 1 / hy)):
            r += [2 * k + rowoff, 2 * k + rowoff]
            c += [a, b]
            d += [np.full(nsq, s), np.full(nsq, -s)]
        k2 = k + nsq
        for (rowoff, a, b, s) in ((0, p11, p01, 1 / hx), (1, p01, p00, 1 / hy)):
            r += [2 * k2 + rowoff, 2 * k2 + rowoff]
            c += [a, b]
            d += [np.full(nsq, s), np.full(nsq, -s)]
        D = sp.csr_matrix((np.concatenate(d), (np.concatenate(r), np.concatenate(c))), shape=(2 * C, N))
    k = cells.shape[1]
    C = cells.shape[0]
    avg = sp.csr_matrix((np.full(C * k, 1.0 / k), (np.repeat(np.arange(C), k), cells.ravel())), shape=(C, N))
    lumped = np.asarray(avg.T @ vol).ravel()
    lap = (D.T @ sp.diags(np.repeat(vol, grid.dim)) @ D).tocsr()
    return _Topology(cells, vol, D, avg, lumped, lap)


# -- configuration ----------------------------------------------------------

def eta_from_rule(rule, eps: float) -> float:
    """``eta_eps`` from a rule: ``"eps^p"`` (p > 1), ``"zero"`` or a callable."""
    if callable(rule):
        return float(rule(eps))
    if rule in ("zero", 0, 0.0, None):
        return 0.0
    m = re.fullmatch(r"\s*eps\s*\^\s*([0-9.]+)\s*", str(rule))
    if not m:
        raise ValueError(f"unknown eta rule {rule!r}")
    p = float(m.group(1))
    if p <= 1:
        raise ValueError("eta rule exponent must exceed 1 so that eta/eps -> 0")
    return eps**p


@dataclass
class SolveConfig:
    """Solver settings for one phase-field run.

    ``bc`` maps face names (``left``, ``right``; plus ``bottom``, ``top`` in
    2D) to ``{"u": value, "v": value}``. A ``u`` value is a number, an
    m-vector, ``{"affine": A, "offset": b}`` (``u = A x + b``) or a callable
    of the face coordinates.
    """

    eta_rule: Union[str, Callable] = "eps^1.5"
    fidelity_w: Optional[object] = None
    fidelity_q: float = 2.0
    bc: dict = field(default_factory=dict)
    max_rounds: int = 1000
    tol_energy: float = 1e-10
    u_solver: str = "auto"
    u_gd_steps: int = 200
    v_maxit: int = 50

    def eta(self, eps: float) -> float:
        e = eta_from_rule(self.eta_rule, eps)
        if not e / eps < 1:
            raise ValueError("eta/eps must be below 1")
        return e

    def __post_init__(self):
        if self.fidelity_q <= 1:
            raise ValueError("fidelity_q must exceed 1")


@dataclass
class EnergyParts:
    elastic: float = 0.0
    damage_local: float = 0.0
    damage_gradient: float = 0.0
    regularization: float = 0.0
    fidelity: float = 0.0

    @property
    def total(self) -> float:
        return self.elastic + self.damage_local + self.damage_gradient + self.regularization + self.fidelity

    def as_dict(self) -> dict:
        d = asdict(self)
        d["total"] = self.total
        return d


@dataclass
class PhaseFieldState:
    """Nodal displacement ``u`` (shape ``(n_nodes, m)``) and damage ``v``."""

    u: np.ndarray
    v: np.ndarray
    eps: float
    energy_parts: Optional[EnergyParts] = None
    flags: list = field(default_factory=list)

    def copy(self) -> "PhaseFieldState":
        return PhaseFieldState(self.u.copy(), self.v.copy(), self.eps, self.energy_parts, list(self.flags))


# -- boundary data ----------------------------------------------------------

def _u_values(spec, pts: np.ndarray, m: int) -> np.ndarray:
    if callable(spec):
        return np.asarray(spec(pts), dtype=float).reshape(pts.shape[0], m)
    if isinstance(spec, dict):
        A = np.asarray(spec["affine"], dtype=float).reshape(m, pts.shape[1])
        b = np.asarray(spec.get("offset", np.zeros(m)), dtype=float).reshape(m)
        return pts @ A.T + b
    val = np.asarray(spec, dtype=float).reshape(-1)
    return np.broadcast_to(val, (pts.shape[0], m)).copy()


def boundary_data(grid: GridSpec, m: int, bc: dict) -> tuple:
    """Masks and values of Dirichlet nodes for ``u`` and ``v``."""
    N = grid.n_nodes
    X = grid.coords()
    fu = np.zeros(N, bool)
    uval = np.zeros((N, m))
    fv = np.zeros(N, bool)
    vval = np.ones(N)
    for face, spec in (bc or {}).items():
        nodes = grid.face_nodes(face)
        if "u" in spec and spec["u"] is not None:
            fu[nodes] = True
            uval[nodes] = _u_values(spec["u"], X[nodes], m)
        if "v" in spec and spec["v"] is not None:
            fv[nodes] = True
            vval[nodes] = float(spec["v"])
    if np.any((vval[fv] < 0) | (vval[fv] > 1)):
        raise ValueError("Dirichlet values of v must lie in [0, 1]")
    return fu, uval, fv, vval


def fidelity_field(grid: GridSpec, m: int, spec) -> Optional[np.ndarray]:
    """Nodal target ``w`` from an array, ``{"constant": c}``, ``{"affine": A,
    "offset": b}`` or ``{"file": path}`` (CSV/NPY with one row per node)."""
    if spec is None:
        return None
    if isinstance(spec, dict):
        if "constant" in spec:
            return _u_values(spec["constant"], grid.coords(), m)
        if "affine" in spec:
            return _u_values(spec, grid.coords(), m)
        if "file" in spec:
            path = spec["file"]
            arr = np.load(path) if path.endswith(".npy") else np.loadtxt(path, delimiter=",", ndmin=2)
            return np.asarray(arr, dtype=float).reshape(grid.n_nodes, m)
        raise ValueError(f"unknown fidelity spec {spec!r}")
    if callable(spec):
        return _u_values(spec, grid.coords(), m)
    return np.asarray(spec, dtype=float).reshape(grid.n_nodes, m)


# -- energy -----------------------------------------------------------------

def _fe2(vb: np.ndarray, eps: float, ell: float) -> tuple:
    """``f_eps^2`` of cell means with first and second derivatives (0 on the flat branch)."""
    gam = gamma_eps(eps, ell)
    below = vb < gam
    s = np.where(below, np.clip(vb, 0.0, None), 0.0)
    c = eps * ell**2
    val = np.where(below, c * s**2 / (1 - s) ** 2, 1.0)
    d1 = np.where(below, 2 * c * s / (1 - s) ** 3, 0.0)
    d2 = np.where(below, 2 * c * (1 + 2 * s) / (1 - s) ** 4, 0.0)
    return val, d1, d2


def cell_gradients(grid: GridSpec, u: np.ndarray) -> np.ndarray:
    """Per-cell gradient matrices, shape ``(C, m, dim)``."""
    top = topology(grid)
    g = top.D @ u  # (C*dim, m)
    C = top.vol.size
    return g.reshape(C, grid.dim, -1).transpose(0, 2, 1)


def _psi_cells(law: MaterialLaw, grads: np.ndarray) -> np.ndarray:
    return np.asarray(psi_eval(law, grads), dtype=float).reshape(-1)


def _dpsi(law: MaterialLaw, grads: np.ndarray) -> np.ndarray:
    if law.psi_kind == "euclidean_squared":
        return 2.0 * grads
    if law.psi_kind == "dist_sq_SOn":
        return 2.0 * (grads - nearest_rotation(grads))
    # central differences for custom densities
    out = np.zeros_like(grads)
    step = 1e-6 * (1 + np.abs(grads))
    for i in range(grads.shape[1]):
        for j in range(grads.shape[2]):
            e = np.zeros_like(grads)
            e[:, i, j] = step[:, i, j]
            out[:, i, j] = (_psi_cells(law, grads + e) - _psi_cells(law, grads - e)) / (2 * step[:, i, j])
    return out


def _check_state(state: PhaseFieldState, law: MaterialLaw, grid: GridSpec):
    if state.u.shape != (grid.n_nodes, law.m) or state.v.shape != (grid.n_nodes,):
        raise ValueError(f"state shapes {state.u.shape}, {state.v.shape} do not match grid/law")
    if law.n != grid.dim:
        raise ValueError("law domain dimension must equal grid dimension")


def assemble_energy(state: PhaseFieldState, law: MaterialLaw, grid: GridSpec, cfg: SolveConfig,
                    w: Optional[np.ndarray] = None) -> EnergyParts:
    """Energy breakdown of ``state``; raises :class:`AssemblyError` on NaN."""
    _check_state(state, law, grid)
    if np.isnan(state.u).any() or np.isnan(state.v).any():
        raise AssemblyError("NaN in the state")
    top = topology(grid)
    eps = state.eps
    grads = cell_gradients(grid, state.u)
    psi = _psi_cells(law, grads)
    fe2, _, _ = _fe2(top.avg @ state.v, eps, law.ell)
    elastic = float(np.sum(top.vol * fe2 * psi))
    reg = float(cfg.eta(eps) * np.sum(top.vol * psi))
    loc = float(np.sum(top.lumped * (1 - state.v) ** 2) / (4 * eps))
    grad = float(eps * state.v @ (top.lap @ state.v))
    fid = 0.0
    if w is None:
        w = fidelity_field(grid, law.m, cfg.fidelity_w)
    if w is not None:
        r = np.linalg.norm(state.u - w, axis=1)
        fid = float(np.sum(top.lumped * r**cfg.fidelity_q))
    parts = EnergyParts(elastic, loc, grad, reg, fid)
    for name, val in asdict(parts).items():
        if np.isnan(val):
            raise AssemblyError(f"NaN in energy part {name!r}")
    return parts


def energy_gradient(state: PhaseFieldState, law: MaterialLaw, grid: GridSpec, cfg: SolveConfig,
                    w: Optional[np.ndarray] = None) -> tuple:
    """Analytic gradient ``(dE/du, dE/dv)`` of the total energy.

    Valid wherever the energy is differentiable: away from the kink of
    ``f_eps`` at ``gamma_eps`` (and, for ``dist_sq_SOn``, away from
    coinciding signed singular values).
    """
    top = topology(grid)
    eps = state.eps
    grads = cell_gradients(grid, state.u)
    psi = _psi_cells(law, grads)
    fe2, d1, _ = _fe2(top.avg @ state.v, eps, law.ell)
    k = fe2 + cfg.eta(eps)
    flux = (top.vol * k)[:, None, None] * _dpsi(law, grads)  # (C, m, dim)
    gu = top.D.T @ flux.transpose(0, 2, 1).reshape(-1, law.m)
    if w is None:
        w = fidelity_field(grid, law.m, cfg.fidelity_w)
    if w is not None:
        diff = state.u - w
        r = np.linalg.norm(diff, axis=1)
        q = cfg.fidelity_q
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(r > 0, q * r ** (q - 2), 0.0)
        gu = gu + (top.lumped * fac)[:, None] * diff
    gv = top.avg.T @ (top.vol * psi * d1)
    gv = gv - top.lumped * (1 - state.v) / (2 * eps)
    gv = gv + 2 * eps * (top.lap @ state.v)
    return np.asarray(gu), np.asarray(gv).ravel()


# -- u-subproblem -------------------------------------------------------------

def _u_energy(u, v, law, grid, cfg, eps, w) -> float:
    top = topology(grid)
    psi = _psi_cells(law, cell_gradients(grid, u))
    fe2, _, _ = _fe2(top.avg @ v, eps, law.ell)
    e = float(np.sum(top.vol * (fe2 + cfg.eta(eps)) * psi))
    if w is not None:
        e += float(np.sum(top.lumped * np.linalg.norm(u - w, axis=1) ** cfg.fidelity_q))
    return e


def _stiffness(grid: GridSpec, weights: np.ndarray) -> sp.csr_matrix:
    top = topology(grid)
    return (top.D.T @ sp.diags(np.repeat(top.vol * weights, grid.dim)) @ top.D).tocsr()


def _solve_spd(A: sp.csr_matrix, b: np.ndarray, grid: GridSpec, method: str, x0=None) -> np.ndarray:
    """Solve ``A x = b`` column by column; tridiagonal direct solve in 1D."""
    n = A.shape[0]
    if method == "auto":
        method = "banded" if grid.dim == 1 else "cg"
    if method == "banded":
        ab = np.zeros((3, n))
        ab[1] = A.diagonal()
        off = A.diagonal(1) if n > 1 else np.zeros(0)
        ab[0, 1:] = off
        ab[2, :-1] = off
        return solve_banded((1, 1), ab, b)
    if method == "direct":
        return splu(A.tocsc()).solve(b)
    if method != "cg":
        raise ValueError(f"unknown u solver {method!r}")
    diag = A.diagonal()
    M = sp.diags(1.0 / np.where(diag > 0, diag, 1.0))
    out = np.empty_like(b)
    for j in range(b.shape[1]):
        rhs = b[:, j]
        nb = np.linalg.norm(rhs)
        if nb == 0:
            out[:, j] = 0.0
            continue
        x, info = cg(A, rhs, x0=None if x0 is None else x0[:, j], rtol=1e-10, atol=0.0,
                     maxiter=10 * n, M=M)
        res = np.linalg.norm(A @ x - rhs) / nb
        if info != 0 or res > 1e-10 * 10:
            raise SolverError(f"CG did not converge in {10 * n} iterations, relative residual {res:.3e}")
        out[:, j] = x
    return out


def minimize_u(state: PhaseFieldState, law: MaterialLaw, grid: GridSpec, cfg: SolveConfig,
               w: Optional[np.ndarray] = None, bcdata: Optional[tuple] = None) -> PhaseFieldState:
    """Minimise over ``u`` at fixed ``v``; Dirichlet nodes are left untouched.

    Quadratic problems (``euclidean_squared`` with ``q = 2`` or no fidelity)
    are solved exactly: by a tridiagonal direct solve in 1D and by Jacobi
    preconditioned conjugate gradients in 2D (or as ``cfg.u_solver`` says).
    Other densities take up to ``cfg.u_gd_steps`` steps of gradient descent
    preconditioned by the weighted stiffness matrix, with Armijo
    backtracking. The energy never increases.
    """
    _check_state(state, law, grid)
    top = topology(grid)
    eps = state.eps
    if w is None:
        w = fidelity_field(grid, law.m, cfg.fidelity_w)
    fu, uval, _, _ = bcdata or boundary_data(grid, law.m, cfg.bc)
    u = state.u.copy()
    u[fu] = uval[fu]
    free = ~fu
    if not np.any(free):
        return PhaseFieldState(u, state.v.copy(), eps, None, list(state.flags))
    fe2, _, _ = _fe2(top.avg @ state.v, eps, law.ell)
    k = fe2 + cfg.eta(eps)
    K = _stiffness(grid, k)
    lump = top.lumped if w is not None else np.zeros(grid.n_nodes)
    if not np.any(fu) and w is None:
        raise SolverError("u-subproblem is singular: no Dirichlet data and no fidelity")
    u_in = u.copy()
    E0 = _u_energy(u_in, state.v, law, grid, cfg, eps, w)
    quadratic = law.psi_kind == "euclidean_squared" and (w is None or cfg.fidelity_q == 2)
    Kff = K[free][:, free]
    if quadratic:
        A = (Kff + sp.diags(lump[free])).tocsr()
        rhs = -(K[free][:, fu] @ u[fu])
        if w is not None:
            rhs = rhs + lump[free, None] * w[free]
        u_new = u.copy()
        u_new[free] = _solve_spd(A, np.asarray(rhs), grid, cfg.u_solver, x0=u[free])
        if _u_energy(u_new, state.v, law, grid, cfg, eps, w) > E0:
            u_new = u_in
        u = u_new
        return PhaseFieldState(u, state.v.copy(), eps, None, list(state.flags))
    # preconditioned gradient descent
    P = splu((2 * Kff + sp.diags(2 * lump[free] + 1e-14)).tocsc())
    E = E0
    for _ in range(cfg.u_gd_steps):
        st = PhaseFieldState(u, state.v, eps)
        gu, _ = energy_gradient(st, law, grid, cfg, w)
        gf = gu[free]
        d = -P.solve(gf)
        slope = float(np.sum(gf * d))
        if slope > -1e-15 * (1 + abs(E)):
            break
        s = 1.0
        ok = False
        for _ in range(40):
            un = u.copy()
            un[free] = u[free] + s * d
            En = _u_energy(un, state.v, law, grid, cfg, eps, w)
            if En <= E + 1e-4 * s * slope:
                ok = True
                break
            s *= 0.5
        if not ok:
            break
        dec = E - En
        u, E = un, En
        if dec <= 1e-14 * max(1.0, E):
            break
    return PhaseFieldState(u, state.v.copy(), eps, None, list(state.flags))


# -- v-subproblem -------------------------------------------------------------

def local_oracle(P: np.ndarray, eps: float, ell: float, iters: int = 100) -> tuple:
    """Per-entry ``min_s f_eps(s)^2 P + (1-s)^2/(4 eps)`` and its argmin.

    Golden-section search on ``[0, gamma_eps]`` (convex there) compared with
    the flat branch, whose best point is ``s = 1`` with value ``P``.
    """
    P = np.asarray(P, dtype=float)
    gam = gamma_eps(eps, ell)
    obj = lambda s: _fe2(s, eps, ell)[0] * P + (1 - s) ** 2 / (4 * eps)
    lo = np.zeros_like(P)
    hi = np.full_like(P, gam)
    r = (np.sqrt(5) - 1) / 2
    c = hi - r * (hi - lo)
    d = lo + r * (hi - lo)
    fc, fd = obj(c), obj(d)
    for _ in range(iters):
        left = fc < fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        c = hi - r * (hi - lo)
        d = lo + r * (hi - lo)
        fc, fd = obj(c), obj(d)
    cands = np.stack([np.zeros_like(P), np.full_like(P, gam), c, d, np.ones_like(P)])
    vals = np.stack([obj(cands[0]), obj(cands[1]), fc, fd, P])
    k = np.argmin(vals, axis=0)
    pick = np.take_along_axis
    return pick(vals, k[None], 0)[0], pick(cands, k[None], 0)[0]


def _v_energy(v, psi, law, grid, eps) -> float:
    top = topology(grid)
    fe2, _, _ = _fe2(top.avg @ v, eps, law.ell)
    return float(np.sum(top.vol * fe2 * psi) + np.sum(top.lumped * (1 - v) ** 2) / (4 * eps)
                 + eps * v @ (top.lap @ v))


def _v_newton(v, psi, law, grid, eps, fv, maxit) -> tuple:
    top = topology(grid)
    E = _v_energy(v, psi, law, grid, eps)
    base = (sp.diags(top.lumped / (2 * eps)) + 2 * eps * top.lap).tocsr()
    for _ in range(maxit):
        _, d1, d2 = _fe2(top.avg @ v, eps, law.ell)
        g = top.avg.T @ (top.vol * psi * d1) - top.lumped * (1 - v) / (2 * eps) + 2 * eps * (top.lap @ v)
        act = fv | ((v <= 0) & (g > 0)) | ((v >= 1) & (g < 0))
        idx = np.flatnonzero(~act)
        if idx.size == 0:
            break
        gf = g[idx]
        if np.max(np.abs(gf)) < 1e-13:
            break
        H = (base + top.avg.T @ sp.diags(top.vol * psi * d2) @ top.avg).tocsr()
        Hff = H[idx][:, idx]
        if grid.dim == 1:
            ab = np.zeros((3, idx.size))
            ab[1] = Hff.diagonal()
            if idx.size > 1:
                off = Hff.diagonal(1)
                ab[0, 1:] = off
                ab[2, :-1] = off
            step = solve_banded((1, 1), ab, -gf)
        else:
            step = splu(Hff.tocsc()).solve(-gf)
        s = 1.0
        for _ in range(40):
            vn = v.copy()
            vn[idx] = np.clip(v[idx] + s * step, 0.0, 1.0)
            En = _v_energy(vn, psi, law, grid, eps)
            if En <= E + 1e-4 * s * min(float(gf @ step), 0.0):
                break
            s *= 0.5
        else:
            return v, E, False
        dec = E - En
        v, E = vn, En
        if dec <= 1e-15 * max(1.0, E):
            break
    return v, E, True


def minimize_v(state: PhaseFieldState, law: MaterialLaw, grid: GridSpec, cfg: SolveConfig,
               bcdata: Optional[tuple] = None) -> PhaseFieldState:
    """Projected Newton in ``v`` on ``[0, 1]^N`` at fixed ``u``.

    Cells with ``vbar >= gamma_eps`` sit on the flat branch of ``f_eps`` and
    contribute nothing to the derivatives (active-set treatment of the
    kink); bound-active nodes are frozen per iteration. Each step is
    accepted by Armijo backtracking on the exact energy; a failure after 40
    halvings is recorded in ``state.flags`` as ``"v_line_search"``.

    The flat branch makes ``v = 1`` a local minimiser at any strain. When
    Newton from the incoming ``v`` makes no progress, it is restarted from
    the nodewise minimiser of the local terms (:func:`local_oracle` on the
    volume weighted mean of ``Psi`` around each node) and the lower energy
    wins, so the step never increases the energy.
    """
    _check_state(state, law, grid)
    top = topology(grid)
    eps = state.eps
    _, _, fv, vval = bcdata or boundary_data(grid, law.m, cfg.bc)
    psi = _psi_cells(law, cell_gradients(grid, state.u))
    v0 = np.clip(state.v.copy(), 0.0, 1.0)
    v0[fv] = vval[fv]
    E_in = _v_energy(np.clip(state.v, 0, 1), psi, law, grid, eps)
    if _v_energy(v0, psi, law, grid, eps) > E_in and np.array_equal(np.clip(state.v, 0, 1)[fv], vval[fv]):
        v0 = np.clip(state.v.copy(), 0, 1)
    flags = list(state.flags)
    E0 = _v_energy(v0, psi, law, grid, eps)
    best = _v_newton(v0, psi, law, grid, eps, fv, cfg.v_maxit)
    if not best[1] < E0:
        Pn = (top.avg.T @ (top.vol * psi)) / top.lumped
        vo = local_oracle(Pn, eps, law.ell)[1]
        vo[fv] = vval[fv]
        alt = _v_newton(vo, psi, law, grid, eps, fv, cfg.v_maxit)
        if alt[1] < best[1]:
            best = alt
    if not best[2]:
        flags.append("v_line_search")
    return PhaseFieldState(state.u.copy(), best[0], eps, None, flags)


# -- alternation ----------------------------------------------------------------

def initial_state(grid: GridSpec, law: MaterialLaw, cfg: SolveConfig, eps: float) -> PhaseFieldState:
    """Elastic start: ``v = 1`` (or its Dirichlet values) and ``u`` minimising at that ``v``."""
    fu, uval, fv, vval = bcdata = boundary_data(grid, law.m, cfg.bc)
    v = np.where(fv, vval, 1.0)
    u = np.where(fu[:, None], uval, 0.0)
    st = PhaseFieldState(u, v, eps)
    return minimize_u(st, law, grid, cfg, bcdata=bcdata)


def optimality(state: PhaseFieldState, law: MaterialLaw, grid: GridSpec, cfg: SolveConfig,
               w: Optional[np.ndarray] = None) -> dict:
    """Projected-gradient sup norms of both subproblems on free nodes."""
    fu, _, fv, _ = boundary_data(grid, law.m, cfg.bc)
    gu, gv = energy_gradient(state, law, grid, cfg, w)
    v = state.v
    pg = np.where((v <= 0) & (gv > 0) | (v >= 1) & (gv < 0) | fv, 0.0, gv)
    return {"u_grad": float(np.max(np.abs(gu[~fu]), initial=0.0)), "v_pgrad": float(np.max(np.abs(pg), initial=0.0))}


def alternate_minimize(init: PhaseFieldState, law: MaterialLaw, grid: GridSpec, cfg: SolveConfig) -> tuple:
    """Alternate ``v`` and ``u`` steps until the relative energy decrease of a
    round falls below ``cfg.tol_energy`` or ``cfg.max_rounds`` is reached.

    Returns
    -------
    state : PhaseFieldState
        Final state with ``energy_parts`` filled in.
    trace : list of dict
        Energy parts per round, starting with the initial state.
    """
    _check_state(init, law, grid)
    bcdata = boundary_data(grid, law.m, cfg.bc)
    fu, uval, fv, vval = bcdata
    if not (np.allclose(init.u[fu], uval[fu]) and np.allclose(init.v[fv], vval[fv])):
        raise ValueError("initial state violates the Dirichlet data")
    w = fidelity_field(grid, law.m, cfg.fidelity_w)
    state = init.copy()
    state.v = np.clip(state.v, 0.0, 1.0)
    parts = assemble_energy(state, law, grid, cfg, w)
    trace = [dict(parts.as_dict(), round=0)]
    E = parts.total
    for r in range(1, cfg.max_rounds + 1):
        nxt = minimize_v(state, law, grid, cfg, bcdata)
        nxt = minimize_u(nxt, law, grid, cfg, w, bcdata)
        p = assemble_energy(nxt, law, grid, cfg, w)
        if p.total > E:
            # roundoff guard: keep the better state, stop
            state.flags = list(nxt.flags) + ["no_decrease"]
            break
        state, parts = nxt, p
        trace.append(dict(p.as_dict(), round=r))
        dec = E - p.total
        E = p.total
        if dec <= cfg.tol_energy * max(E, 1e-300) or E == 0.0:
            break
    else:
        state.flags = list(state.flags) + ["max_rounds"]
    state.energy_parts = parts
    return state, trace
