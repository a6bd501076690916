"""Compiled inner loops: mode sums, RK4 characteristics and stopping-time scans.

All kernels release the GIL so that independent paths can run on a thread pool.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

_TWO_OVER_PI = 2.0 / math.pi
# pi/2 split for Cody-Waite reduction: the high part has trailing zero bits so q*hi is exact.
_PIO2_HI = 1.5707963267341256
_PIO2_LO = 6.077100506506192e-11


@nb.njit(fastmath=True, inline="always")
def sincos(x):
    """Branch-free sin and cos, accurate to a few ulp for |x| up to ~1e5.

    libm calls do not vectorise inside the mode loop; this polynomial version
    is about ten times faster there.
    """
    q = np.floor(x * _TWO_OVER_PI + 0.5)
    r = (x - q * _PIO2_HI) - q * _PIO2_LO
    r2 = r * r
    s = r * (1.0 + r2 * (-1.6666666666666666e-01 + r2 * (8.3333333333333332e-03 + r2 * (
        -1.9841269841269841e-04 + r2 * (2.7557319223985893e-06 + r2 * (-2.5052108385441720e-08 + r2 * (
            1.6059043836821613e-10 + r2 * (-7.6471637318198164e-13))))))))
    c = 1.0 + r2 * (-0.5 + r2 * (4.1666666666666664e-02 + r2 * (-1.3888888888888889e-03 + r2 * (
        2.4801587301587302e-05 + r2 * (-2.7557319223985888e-07 + r2 * (2.0876756987868100e-09 + r2 * (
            -1.1470745597729725e-11)))))))
    qi = np.int64(q)
    sel = np.float64(qi & 1)
    ss = 1.0 - 2.0 * np.float64((qi >> 1) & 1)
    cs = 1.0 - 2.0 * np.float64(((qi + 1) >> 1) & 1)
    return ss * (s + sel * (c - s)), cs * (c + sel * (s - c))


@nb.njit(fastmath=True, nogil=True, cache=True)
def field_forces(xi0, xi1, xi2, vr, vi, sr, si, y0, y1, y2, out):
    """out <- (V, dV/dy1, dV/dy2, dV/dy3, S) at y for the mode arrays."""
    v = 0.0
    g0 = 0.0
    g1 = 0.0
    g2 = 0.0
    s = 0.0
    for j in range(xi0.shape[0]):
        sn, c = sincos(xi0[j] * y0 + xi1[j] * y1 + xi2[j] * y2)
        v += vr[j] * c + vi[j] * sn
        w = vi[j] * c - vr[j] * sn
        g0 += w * xi0[j]
        g1 += w * xi1[j]
        g2 += w * xi2[j]
        s += sr[j] * c + si[j] * sn
    out[0] = v
    out[1] = g0
    out[2] = g1
    out[3] = g2
    out[4] = s


@nb.njit(fastmath=True, nogil=True, cache=True)
def rk4_path(xi0, xi1, xi2, vr, vi, sr, si, x0, k0, delta, dt, n_steps, traj, energy):
    """Fixed-step RK4 for dX = -K, dK = d^{-1/2} grad V(X/d), dZ = d^{-1/2} S(X/d).

    ``traj`` (n_steps + 1, 7) receives (X, K, Z) at every step and ``energy``
    (n_steps + 1,) the invariant |K|^2/2 + sqrt(d) V(X/d).
    Returns False as soon as the state stops being finite.
    """
    inv = 1.0 / delta
    amp = 1.0 / math.sqrt(delta)
    sq = math.sqrt(delta)
    f = np.empty(5)
    x = np.empty(3)
    k = np.empty(3)
    dx = np.empty((4, 3))
    dk = np.empty((4, 3))
    dz = np.empty(4)
    for i in range(3):
        x[i] = x0[i]
        k[i] = k0[i]
    z = 0.0
    c_stage = (0.0, 0.5, 0.5, 1.0)
    for n in range(n_steps + 1):
        traj[n, 0] = x[0]
        traj[n, 1] = x[1]
        traj[n, 2] = x[2]
        traj[n, 3] = k[0]
        traj[n, 4] = k[1]
        traj[n, 5] = k[2]
        traj[n, 6] = z
        field_forces(xi0, xi1, xi2, vr, vi, sr, si, x[0] * inv, x[1] * inv, x[2] * inv, f)
        energy[n] = 0.5 * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) + sq * f[0]
        if not math.isfinite(energy[n]) or not math.isfinite(z):
            return False
        if n == n_steps:
            break
        for st in range(4):
            if st > 0:
                h = c_stage[st] * dt
                y0 = (x[0] + h * dx[st - 1, 0]) * inv
                y1 = (x[1] + h * dx[st - 1, 1]) * inv
                y2 = (x[2] + h * dx[st - 1, 2]) * inv
                for i in range(3):
                    dx[st, i] = -(k[i] + h * dk[st - 1, i])
                field_forces(xi0, xi1, xi2, vr, vi, sr, si, y0, y1, y2, f)
            else:
                for i in range(3):
                    dx[0, i] = -k[i]
            dk[st, 0] = amp * f[1]
            dk[st, 1] = amp * f[2]
            dk[st, 2] = amp * f[3]
            dz[st] = amp * f[4]
        w = dt / 6.0
        for i in range(3):
            x[i] += w * (dx[0, i] + 2.0 * dx[1, i] + 2.0 * dx[2, i] + dx[3, i])
            k[i] += w * (dk[0, i] + 2.0 * dk[1, i] + 2.0 * dk[2, i] + dk[3, i])
        z += w * (dz[0] + 2.0 * dz[1] + 2.0 * dz[2] + dz[3])
    return True


@nb.njit(nogil=True, cache=True)
def _interp_row(t, times, vals, out):
    n = times.shape[0]
    if t <= times[0]:
        j = 0
        a = 0.0
    elif t >= times[n - 1]:
        j = n - 2
        a = 1.0
    else:
        j = np.searchsorted(times, t, side="right") - 1
        a = (t - times[j]) / (times[j + 1] - times[j])
    for i in range(vals.shape[1]):
        out[i] = (1.0 - a) * vals[j, i] + a * vals[j + 1, i]


@nb.njit(nogil=True, cache=True)
def _unit(v):
    r = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    return v / r


@nb.njit(nogil=True, cache=True)
def _seg_dist2(px, a, b):
    d0 = b[0] - a[0]
    d1 = b[1] - a[1]
    d2 = b[2] - a[2]
    e0 = px[0] - a[0]
    e1 = px[1] - a[1]
    e2 = px[2] - a[2]
    ll = d0 * d0 + d1 * d1 + d2 * d2
    u = 0.0
    if ll > 0.0:
        u = min(max((e0 * d0 + e1 * d1 + e2 * d2) / ll, 0.0), 1.0)
    r0 = e0 - u * d0
    r1 = e1 - u * d1
    r2 = e2 - u * d2
    return r0 * r0 + r1 * r1 + r2 * r2


TRACE_BLOCK = 128


@nb.njit(nogil=True, cache=True)
def _block_boxes(X, B):
    """Axis-aligned boxes around the points of each run of B segments."""
    n = X.shape[0]
    nb_ = max((n - 1 + B - 1) // B, 1)
    lo = np.empty((nb_, 3))
    hi = np.empty((nb_, 3))
    for b in range(nb_):
        j0 = b * B
        j1 = min(j0 + B, n - 1)
        for c in range(3):
            mn = X[j0, c]
            mx = X[j0, c]
            for j in range(j0 + 1, j1 + 1):
                v = X[j, c]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            lo[b, c] = mn
            hi[b, c] = mx
    return lo, hi


@nb.njit(nogil=True, cache=True)
def _box_dist2(px, lo, hi):
    d = 0.0
    for c in range(3):
        if px[c] < lo[c]:
            d += (lo[c] - px[c]) ** 2
        elif px[c] > hi[c]:
            d += (px[c] - hi[c]) ** 2
    return d


@nb.njit(nogil=True, cache=True)
def _near_trace(px, X, hull, lo, hi, B, r2):
    """True when px lies within sqrt(r2) of the polyline X[0..hull]."""
    full = hull // B
    for b in range(full):
        if _box_dist2(px, lo[b], hi[b]) <= r2:
            for j in range(b * B, (b + 1) * B):
                if _seg_dist2(px, X[j], X[j + 1]) <= r2:
                    return True
    for j in range(full * B, hull):
        if _seg_dist2(px, X[j], X[j + 1]) <= r2:
            return True
    return False


@nb.njit(nogil=True, cache=True)
def stopping_scan(times, X, K, N, p, q, N1):
    """First violent-turn and tube-return times on a sampled path (NaN if none).

    The path between samples is taken piecewise linear; both tests are made
    at the sample times.  The past trace is searched block by block, skipping
    blocks whose bounding box is farther than 1/q.
    """
    n = times.shape[0]
    thresh = 1.0 - 1.0 / N
    r2 = 1.0 / (q * q)
    t_v = np.nan
    t_u = np.nan
    kbuf = np.empty(3)
    a = np.empty(3)
    b = np.empty(3)
    cur_cell = -1
    ka = np.empty(3)
    kb = np.empty(3)
    hull = 0          # samples [0, hull] lie in [0, t_{k-1}]
    xe = np.empty(3)  # X(t_{k-1}) (interpolated end point of the past trace)
    B = TRACE_BLOCK
    lo, hi = _block_boxes(X, B)
    for i in range(n):
        t = times[i]
        cell = int(math.floor(t * p + 1e-12))
        if cell != cur_cell:
            cur_cell = cell
            t_prev = (cell - 1) / p
            if t_prev < 0.0:
                t_prev = 0.0
            _interp_row(t_prev, times, K, kbuf)
            ka[:] = _unit(kbuf)
            t_in = cell / p - 1.0 / N1
            if t_in < 0.0:
                t_in = 0.0
            _interp_row(t_in, times, K, kbuf)
            kb[:] = _unit(kbuf)
            while hull + 1 < n and times[hull + 1] <= t_prev:
                hull += 1
            _interp_row(t_prev, times, X, xe)
        kh = _unit(K[i])
        if math.isnan(t_v):
            ca = ka[0] * kh[0] + ka[1] * kh[1] + ka[2] * kh[2]
            cb = kb[0] * kh[0] + kb[1] * kh[1] + kb[2] * kh[2]
            if ca <= thresh or cb <= thresh:
                t_v = t
        if math.isnan(t_u) and cell >= 1:
            hit = _near_trace(X[i], X, hull, lo, hi, B, r2)
            if not hit:
                a[:] = X[hull]
                b[:] = xe
                hit = _seg_dist2(X[i], a, b) <= r2
            if hit:
                t_u = t
        if not math.isnan(t_v) and not math.isnan(t_u):
            break
    return t_v, t_u
