"""Material laws: energy densities, damage coefficients and scalar closed forms.

A :class:`MaterialLaw` bundles the elastic density ``Psi`` with the yield
parameter ``ell``. Everything else in the package evaluates ``Psi``,
its recession ``Psi_inf`` and the composite density ``h = min(Psi, ell*sqrt(Psi))``
through the functions defined here.

Matrix arguments are arrays of shape ``(..., m, n)``. A flat array with
``m*n`` entries (row-major) is accepted for a single matrix.
"""
from __future__ import annotations

import importlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

PSI_KINDS = ("euclidean_squared", "dist_sq_SOn", "custom")

# scales used for the two-point recession estimate of custom laws
RECESSION_SCALES = (1.0e3, 1.0e4)
RECESSION_RTOL = 0.01


class DimensionError(ValueError):
    """Matrix argument does not match the law's (m, n)."""


class NonConvergentRecessionError(RuntimeError):
    """Numerical recession estimates at two scales disagree."""


@dataclass(frozen=True)
class MaterialLaw:
    """Elastic density ``Psi`` together with the yield parameter ``ell``.

    Parameters
    ----------
    ell : float
        Critical yield parameter, ``ell > 0``.
    psi_kind : str
        One of ``euclidean_squared``, ``dist_sq_SOn`` or ``custom``.
    m, n : int
        Codomain and domain dimension; matrices are ``m x n``.
    growth_const : float, optional
        Constant ``c`` of the quadratic growth bounds
        ``|xi|^2/c - c <= Psi(xi) <= c(|xi|^2 + 1)``. Defaults to 1 for
        ``euclidean_squared`` and ``2n`` for ``dist_sq_SOn``; required for
        ``custom``.
    custom_psi : callable, optional
        Vectorised evaluator ``(..., m, n) -> (...)`` for ``custom`` laws.
    custom_ref : str, optional
        ``"module:function"`` reference used to rebuild a custom law from JSON.
    sliceable : bool
        User declaration that ``Psi_inf(xi) >= Psi_inf(xi nu (x) nu)``; enables the
        sliced surface-density solve for custom laws.
    """

    ell: float
    psi_kind: str = "euclidean_squared"
    m: int = 1
    n: int = 1
    growth_const: Optional[float] = None
    custom_psi: Optional[Callable] = field(default=None, compare=False, repr=False)
    custom_ref: Optional[str] = None
    sliceable: bool = False

    def __post_init__(self):
        if not np.isfinite(self.ell) or self.ell <= 0:
            raise ValueError(f"ell must be positive, got {self.ell}")
        if self.psi_kind not in PSI_KINDS:
            raise ValueError(f"unknown psi_kind {self.psi_kind!r}")
        if int(self.m) < 1 or int(self.n) < 1:
            raise ValueError("m and n must be positive")
        object.__setattr__(self, "ell", float(self.ell))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "n", int(self.n))
        if self.psi_kind == "dist_sq_SOn":
            if self.m != self.n or self.n not in (2, 3):
                raise ValueError("dist_sq_SOn requires m = n in {2, 3}")
        if self.psi_kind == "custom":
            if self.custom_psi is None and self.custom_ref is not None:
                object.__setattr__(self, "custom_psi", resolve_callable(self.custom_ref))
            if self.custom_psi is None:
                raise ValueError("custom law needs custom_psi or custom_ref")
            if self.growth_const is None:
                raise ValueError("custom law needs a declared growth_const")
        if self.growth_const is None:
            c = 1.0 if self.psi_kind == "euclidean_squared" else 2.0 * self.n
            object.__setattr__(self, "growth_const", c)
        if self.growth_const <= 0:
            raise ValueError("growth_const must be positive")

    # -- evaluators -------------------------------------------------------
    def as_matrix(self, xi) -> np.ndarray:
        return as_matrix(self, xi)

    def psi(self, xi):
        return psi_eval(self, xi)

    def psi_infty(self, xi):
        return psi_infty_eval(self, xi)

    def h(self, xi):
        return h_eval(self, xi)

    @property
    def shape(self) -> tuple:
        return (self.m, self.n)

    @property
    def euclidean_recession(self) -> bool:
        """True when ``Psi_inf(xi) = |xi|^2`` holds in closed form."""
        return self.psi_kind in ("euclidean_squared", "dist_sq_SOn")

    @property
    def h_growth_const(self) -> float:
        """A constant ``C`` with ``max(|xi|/C - C, 0) <= h(xi) <= C(|xi| + 1)``."""
        c, ell = self.growth_const, self.ell
        return max(ell * np.sqrt(c), np.sqrt(c) / ell, np.sqrt(np.sqrt(c) * (ell + np.sqrt(c))))

    def cache_key(self) -> tuple:
        ref = self.custom_ref if self.psi_kind == "custom" else None
        if self.psi_kind == "custom" and ref is None:
            ref = id(self.custom_psi)
        return (self.psi_kind, self.ell, self.m, self.n, self.growth_const, ref)

    def to_dict(self) -> dict:
        if self.psi_kind == "custom" and self.custom_ref is None:
            raise ValueError("custom law without custom_ref cannot be serialised")
        d = {"ell": self.ell, "psi_kind": self.psi_kind, "m": self.m, "n": self.n,
             "growth_const": self.growth_const}
        if self.psi_kind == "custom":
            d["custom_ref"] = self.custom_ref
            d["sliceable"] = self.sliceable
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MaterialLaw":
        keys = ("ell", "psi_kind", "m", "n", "growth_const", "custom_ref", "sliceable")
        return cls(**{k: d[k] for k in keys if k in d})


def resolve_callable(ref: str) -> Callable:
    """Import ``"package.module:function"``."""
    mod, _, name = ref.partition(":")
    if not name:
        raise ValueError(f"expected 'module:function', got {ref!r}")
    return getattr(importlib.import_module(mod), name)


def as_matrix(law: MaterialLaw, xi) -> np.ndarray:
    """Coerce ``xi`` to shape ``(..., m, n)``; reject mismatches and non-finite entries."""
    a = np.asarray(xi, dtype=float)
    m, n = law.m, law.n
    if a.ndim >= 2 and a.shape[-2:] == (m, n):
        out = a
    elif a.ndim == 0 and m * n == 1:
        out = a.reshape(1, 1)
    elif a.ndim == 1 and a.size == m * n:
        out = a.reshape(m, n)
    elif m * n == 1 and a.ndim >= 1:
        # batch of scalars for a 1x1 law
        out = a[..., None, None]
    else:
        raise DimensionError(f"matrix of shape {a.shape} does not match law {m}x{n}")
    if not np.all(np.isfinite(out)):
        raise ValueError("matrix argument has non-finite entries")
    return out


def _frob2(a: np.ndarray) -> np.ndarray:
    return np.sum(a * a, axis=(-2, -1))


def dist_sq_SOn(a: np.ndarray) -> np.ndarray:
    """Squared Frobenius distance of ``(..., n, n)`` matrices to SO(n)."""
    n = a.shape[-1]
    sv = np.linalg.svd(a, compute_uv=False)
    sign = np.sign(np.linalg.det(a))
    sign = np.where(sign == 0, 1.0, sign)
    ssum = np.sum(sv[..., :-1], axis=-1) + sign * sv[..., -1]
    return np.maximum(_frob2(a) + n - 2.0 * ssum, 0.0)


def nearest_rotation(a: np.ndarray) -> np.ndarray:
    """Closest rotation to each ``(..., n, n)`` matrix (polar factor with det fix)."""
    u, _, vt = np.linalg.svd(a)
    d = np.sign(np.linalg.det(u @ vt))
    d = np.where(d == 0, 1.0, d)
    u = u.copy()
    u[..., :, -1] *= d[..., None]
    return u @ vt


def _unbox(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def psi_eval(law: MaterialLaw, xi):
    """Elastic density ``Psi(xi)``; batched over leading axes."""
    a = as_matrix(law, xi)
    if law.psi_kind == "euclidean_squared":
        out = _frob2(a)
    elif law.psi_kind == "dist_sq_SOn":
        out = dist_sq_SOn(a)
    else:
        out = np.asarray(law.custom_psi(a), dtype=float)
        if out.shape != a.shape[:-2]:
            raise ValueError("custom psi returned the wrong shape")
    return _unbox(out)


def psi_infty_eval(law: MaterialLaw, xi):
    """Recession density ``Psi_inf(xi) = lim Psi(t xi)/t^2``.

    Closed form ``|xi|^2`` for the built-in kinds. Custom laws are probed at
    ``t = 1e3`` and ``t = 1e4``; a relative disagreement above 1% raises
    :class:`NonConvergentRecessionError`.
    """
    a = as_matrix(law, xi)
    if law.euclidean_recession:
        return _unbox(_frob2(a))
    t1, t2 = RECESSION_SCALES
    v1 = np.asarray(law.custom_psi(t1 * a), dtype=float) / t1**2
    v2 = np.asarray(law.custom_psi(t2 * a), dtype=float) / t2**2
    scale = np.maximum(np.abs(v2), 1e-300)
    bad = (np.abs(v1 - v2) > RECESSION_RTOL * scale) & (np.abs(v1 - v2) > 1e-14 * (1.0 + _frob2(a)))
    if np.any(bad):
        raise NonConvergentRecessionError(
            f"recession estimates at t={t1:g} and t={t2:g} differ by more than 1%")
    return _unbox(np.where(_frob2(a) == 0, 0.0, np.maximum(v2, 0.0)))


def h_from_psi(psi, ell: float):
    psi = np.maximum(np.asarray(psi, dtype=float), 0.0)
    return _unbox(np.minimum(psi, ell * np.sqrt(psi)))


def h_eval(law: MaterialLaw, xi):
    """Composite density ``h = min(Psi, ell*sqrt(Psi))``."""
    return h_from_psi(psi_eval(law, xi), law.ell)


def h_infty_eval(law: MaterialLaw, xi):
    """Recession of ``h``: ``ell*sqrt(Psi_inf)``."""
    return _unbox(law.ell * np.sqrt(np.asarray(psi_infty_eval(law, xi))))


# -- scalar closed forms ---------------------------------------------------

def f_damage(s, ell: float):
    """Damage coefficient ``f(s) = ell*s/(1-s)`` on ``[0, 1)``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(s >= 1):
        raise ValueError("f_damage needs 0 <= s < 1")
    return _unbox(ell * s / (1.0 - s))


def f_eps(s, eps: float, ell: float):
    """Truncated coefficient ``min(1, sqrt(eps)*f(s))`` with ``f_eps(1) = 1``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("f_eps needs 0 <= s <= 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.minimum(1.0, np.sqrt(eps) * (ell * s / (1.0 - s)))
    return _unbox(np.where(s >= 1.0, 1.0, val))


def f_eps_sq(s, eps: float, ell: float) -> np.ndarray:
    """``f_eps(s)^2`` without argument checks, clipping ``s`` into ``[0, 1]``."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    gam = gamma_eps(eps, ell)
    below = s < gam
    sb = np.where(below, s, 0.0)
    val = eps * ell**2 * sb**2 / (1.0 - sb) ** 2
    return np.where(below, np.minimum(val, 1.0), 1.0)


def gamma_eps(eps: float, ell: float) -> float:
    """Threshold ``1/(1 + ell*sqrt(eps))`` where ``f_eps`` reaches 1."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return 1.0 / (1.0 + ell * np.sqrt(eps))


def h_scal(t, ell: float):
    """Scalar ``h`` for ``Psi(t) = t^2``: ``min(t^2, ell*|t|)``."""
    t = np.abs(np.asarray(t, dtype=float))
    return _unbox(np.minimum(t * t, ell * t))


def h_scal_conv(t, ell: float):
    """Convex envelope of :func:`h_scal`: ``t^2`` up to ``ell/2``, then ``ell*t - ell^2/4``."""
    t = np.abs(np.asarray(t, dtype=float))
    return _unbox(np.where(t <= ell / 2, t * t, ell * t - ell**2 / 4))


def phi_map(t):
    """``Phi(t) = t - t^2/2`` on ``[0, 1]``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("phi_map needs 0 <= t <= 1")
    return _unbox(t - 0.5 * t * t)


def make_law(psi: str, ell: float, m: Optional[int] = None, n: Optional[int] = None, **kw) -> MaterialLaw:
    """Build a law from a CLI-style name: ``euclidean_squared``, ``dist_sq_SOn``
    or ``custom:module:function``."""
    if psi.startswith("custom:"):
        ref = psi[len("custom:"):]
        return MaterialLaw(ell=ell, psi_kind="custom", m=m or 1, n=n or 1, custom_ref=ref, **kw)
    if psi == "dist_sq_SOn":
        m = m or n or 2
        return MaterialLaw(ell=ell, psi_kind=psi, m=m, n=n or m, **kw)
    return MaterialLaw(ell=ell, psi_kind=psi, m=m or 1, n=n or 1, **kw)
