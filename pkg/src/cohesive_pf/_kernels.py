"""Compiled inner loops: lower hulls, discrete Legendre transforms and the
2x2 lamination sweeps."""
import numpy as np
import numba as nb


@nb.njit(cache=True)
def lower_hull(x, y):
    """Indices of the lower convex hull of points sorted by ``x``.

    Points with ``y = +inf`` are skipped. Collinear middle points are
    dropped; ties in ``x`` keep the lower value, earlier index first.
    """
    n = x.size
    idx = np.empty(n, dtype=np.int64)
    k = 0
    for i in range(n):
        yi = y[i]
        if not np.isfinite(yi):
            continue
        if k >= 1 and x[idx[k - 1]] == x[i]:
            if yi < y[idx[k - 1]]:
                k -= 1
            else:
                continue
        while k >= 2:
            a = idx[k - 2]
            b = idx[k - 1]
            cross = (x[b] - x[a]) * (yi - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross <= 0.0:
                k -= 1
            else:
                break
        idx[k] = i
        k += 1
    return idx[:k]


@nb.njit(cache=True)
def conjugate_1d(x, y, p, out):
    """``out[j] = max_i (p[j]*x[i] - y[i])`` for sorted ``x`` and ``p``.

    Linear time via the lower hull. ``+inf`` samples are ignored, any
    ``-inf`` sample makes the result ``+inf`` and an empty set gives ``-inf``.
    """
    for i in range(y.size):
        if y[i] == -np.inf:
            for j in range(p.size):
                out[j] = np.inf
            return
    hull = lower_hull(x, y)
    k = hull.size
    if k == 0:
        for j in range(p.size):
            out[j] = -np.inf
        return
    v = 0
    for j in range(p.size):
        pj = p[j]
        # advance while the next hull edge has slope below pj
        while v < k - 1:
            a = hull[v]
            b = hull[v + 1]
            if (y[b] - y[a]) <= pj * (x[b] - x[a]):
                v += 1
            else:
                break
        c = hull[v]
        out[j] = pj * x[c] - y[c]


@nb.njit(cache=True)
def conjugate_lines(x, vals, p, negate):
    """Row-wise :func:`conjugate_1d` of ``vals`` (or ``-vals`` if ``negate``)."""
    nl = vals.shape[0]
    res = np.empty((nl, p.size))
    buf = np.empty(x.size)
    for l in range(nl):
        for i in range(x.size):
            buf[i] = -vals[l, i] if negate else vals[l, i]
        conjugate_1d(x, buf, p, res[l])
    return res


@nb.njit(cache=True)
def hull_eval(hx, hy, t):
    """Piecewise-linear interpolation of hull vertices (``hx`` increasing)."""
    out = np.empty(t.size)
    k = hx.size
    for j in range(t.size):
        tj = t[j]
        lo = 0
        hi = k - 1
        if tj <= hx[0]:
            out[j] = hy[0]
            continue
        if tj >= hx[hi]:
            out[j] = hy[hi]
            continue
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if hx[mid] <= tj:
                lo = mid
            else:
                hi = mid
        w = (tj - hx[lo]) / (hx[hi] - hx[lo])
        out[j] = (1.0 - w) * hy[lo] + w * hy[hi]
    return out


# -- 2x2 lamination -------------------------------------------------------
# kind 0: Psi = |xi|^2, kind 1: Psi = dist^2(xi, SO(2)).

@nb.njit(cache=True)
def signed_svals(p, q, r, s):
    """Signed singular values of [[p, q], [r, s]]; second carries sign(det)."""
    e = 0.5 * (p + s)
    f = 0.5 * (p - s)
    g = 0.5 * (r + q)
    h = 0.5 * (r - q)
    qq = np.sqrt(e * e + h * h)
    rr = np.sqrt(f * f + g * g)
    return qq + rr, qq - rr


@nb.njit(cache=True)
def h22(p, q, r, s, ell, kind):
    if kind == 0:
        psi = p * p + q * q + r * r + s * s
    else:
        s1, s2 = signed_svals(p, q, r, s)
        psi = p * p + q * q + r * r + s * s + 2.0 - 2.0 * (s1 + s2)
        if psi < 0.0:
            psi = 0.0
    a = ell * np.sqrt(psi)
    return psi if psi < a else a


@nb.njit(cache=True)
def canonical(a, b, kind):
    """Representative of the symmetry orbit of diag(a, b)."""
    if kind == 0:
        a = abs(a)
        b = abs(b)
        if b > a:
            a, b = b, a
    else:
        if abs(b) > abs(a):
            a, b = b, a
        if a < 0.0:
            a = -a
            b = -b
    return a, b


@nb.njit(cache=True)
def table_lookup(tab, smax, a, b, kind):
    """Bilinear lookup of a table over ``[-smax, smax]^2`` at diag(a, b)."""
    a, b = canonical(a, b, kind)
    m = tab.shape[0]
    d = 2.0 * smax / (m - 1)
    x = (a + smax) / d
    y = (b + smax) / d
    i = int(np.floor(x))
    j = int(np.floor(y))
    if i > m - 2:
        i = m - 2
    if j > m - 2:
        j = m - 2
    if i < 0:
        i = 0
    if j < 0:
        j = 0
    fx = x - i
    fy = y - j
    return ((1 - fx) * (1 - fy) * tab[i, j] + fx * (1 - fy) * tab[i + 1, j]
            + (1 - fx) * fy * tab[i, j + 1] + fx * fy * tab[i + 1, j + 1])


@nb.njit(cache=True)
def conv_at_zero(ts, ph, slope):
    """Value at 0 of the convex envelope of samples ``(ts, ph)`` extended by
    rays of the given recession slope. ``ts`` is sorted and contains 0."""
    n = ts.size
    hx = np.empty(n)
    hy = np.empty(n)
    k = 0
    for i in range(n):
        while k >= 2 and ((hx[k - 1] - hx[k - 2]) * (ph[i] - hy[k - 2])
                          - (hy[k - 1] - hy[k - 2]) * (ts[i] - hx[k - 2])) <= 0.0:
            k -= 1
        hx[k] = ts[i]
        hy[k] = ph[i]
        k += 1
    best = np.inf
    for i in range(k - 1):
        if hx[i] <= 0.0 and hx[i + 1] >= 0.0:
            w = (0.0 - hx[i]) / (hx[i + 1] - hx[i])
            v = (1.0 - w) * hy[i] + w * hy[i + 1]
            if v < best:
                best = v
    for i in range(n):
        v = ph[i] + slope * abs(ts[i])
        if v < best:
            best = v
    return best


@nb.njit(cache=True)
def line_value(p, q, r, s, ca, sa, cb, sb, ts, tab, smax, ell, kind, use_tab):
    """Envelope at t=0 along ``xi + t a(x)b`` with ``a = (ca, sa)``, ``b = (cb, sb)``."""
    n = ts.size
    ph = np.empty(n)
    for j in range(n):
        t = ts[j]
        pp = p + t * ca * cb
        qq = q + t * ca * sb
        rr = r + t * sa * cb
        ss = s + t * sa * sb
        hv = h22(pp, qq, rr, ss, ell, kind)
        if use_tab:
            s1, s2 = signed_svals(pp, qq, rr, ss)
            if abs(s1) <= smax and abs(s2) <= smax:
                tv = table_lookup(tab, smax, s1, s2, kind)
                if tv < hv:
                    hv = tv
        ph[j] = hv
    # recession of h along a rank-one unit direction is ell
    return conv_at_zero(ts, ph, ell)


@nb.njit(cache=True)
def best_direction(p, q, r, s, angles_a, angles_b, ts, tab, smax, ell, kind, use_tab):
    """Minimum of :func:`line_value` over the direction lattice, with argmin."""
    best = np.inf
    ba = 0.0
    bb = 0.0
    for ia in range(angles_a.size):
        ca = np.cos(angles_a[ia])
        sa = np.sin(angles_a[ia])
        for ib in range(angles_b.size):
            cb = np.cos(angles_b[ib])
            sb = np.sin(angles_b[ib])
            v = line_value(p, q, r, s, ca, sa, cb, sb, ts, tab, smax, ell, kind, use_tab)
            if v < best:
                best = v
                ba = angles_a[ia]
                bb = angles_b[ib]
    return best, ba, bb


@nb.njit(cache=True)
def lamination_level(tab, smax, angles_a, angles_b, ts, ell, kind, use_tab):
    """One rank-one convexification sweep of a diag-table.

    Only canonical grid points are computed; the rest are filled by symmetry.
    """
    m = tab.shape[0]
    d = 2.0 * smax / (m - 1)
    new = np.empty((m, m))
    done = np.zeros((m, m), dtype=np.bool_)
    for i in range(m):
        a = -smax + i * d
        for j in range(m):
            b = -smax + j * d
            ca, cb = canonical(a, b, kind)
            if ca != a or cb != b:
                continue
            cur = h22(a, 0.0, 0.0, b, ell, kind)
            if use_tab:
                tv = tab[i, j]
                if tv < cur:
                    cur = tv
            v, _, _ = best_direction(a, 0.0, 0.0, b, angles_a, angles_b, ts, tab, smax, ell, kind, use_tab)
            new[i, j] = v if v < cur else cur
            done[i, j] = True
    for i in range(m):
        a = -smax + i * d
        for j in range(m):
            if done[i, j]:
                continue
            b = -smax + j * d
            ca, cb = canonical(a, b, kind)
            ii = int(np.rint((ca + smax) / d))
            jj = int(np.rint((cb + smax) / d))
            new[i, j] = new[ii, jj]
    return new


@nb.njit(cache=True)
def conv_rows(ts, ph, slopes):
    """:func:`conv_at_zero` for each row of ``ph``."""
    out = np.empty(ph.shape[0])
    for i in range(ph.shape[0]):
        out[i] = conv_at_zero(ts, ph[i], slopes[i])
    return out
