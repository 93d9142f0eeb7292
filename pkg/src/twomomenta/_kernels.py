"""Compiled per-point channel velocity and RK4 stepping.

Same construction as :mod:`twomomenta.channels` (three channels per slit,
osmotic pair at +-pi/2 with half amplitude), evaluated point by point so that
ensemble integration does not materialize ``(3n, points)`` arrays.  Kernels
release the GIL; every point is processed independently, so results do not
depend on how points are split across threads.

Mode rows are ``(center, sigma0, v0, phase_offset, birth_time)``.
"""

from __future__ import annotations

import cmath
import math

import numpy as np
from numba import njit





def mode_table(modes) -> np.ndarray:
    table = np.empty((len(modes), 5))
    for i, m in enumerate(modes):
        table[i] = (m.center, m.sigma0, m.v0, m.phase_offset, m.birth_time)
    return table


@njit(cache=True, nogil=True)
def _mode_consts(t, modes, hbar, mass, out):
    """Per-mode constants at time ``t``.

    Row: ``(mean position, 1/(2 sigma_t**2), a, -ln(2 pi sigma_t**2)/4,
    phase at the packet center, k0)`` with ``a = hbar tau / (2 m sigma0**2)``.
    """
    for i in range(modes.shape[0]):
        s0 = modes[i, 1]
        v0 = modes[i, 2]
        tau = t - modes[i, 4]
        a = hbar * tau / (2.0 * mass * s0 * s0)
        sig2 = s0 * s0 * (1.0 + a * a)
        k0 = mass * v0 / hbar
        out[i, 0] = modes[i, 0] + v0 * tau
        out[i, 1] = 1.0 / (2.0 * sig2)
        out[i, 2] = a
        out[i, 3] = -0.25 * math.log(2.0 * math.pi * sig2)
        out[i, 4] = -0.5 * math.atan(a) + 0.5 * k0 * v0 * tau + modes[i, 3]
        out[i, 5] = k0


@njit(cache=True, nogil=True)
def _fill_modes(x, n, consts, hbar, mass, buf):
    # psi = exp(L): Re L = c3 - xi^2 inv2 / 2, Im L = c4 + a xi^2 inv2 / 2 + k0 xi
    for i in range(n):
        xi = x - consts[i, 0]
        inv2 = consts[i, 1]
        a = consts[i, 2]
        q = 0.5 * xi * xi * inv2
        theta = consts[i, 4] + a * q + consts[i, 5] * xi
        buf[i, 0] = math.exp(consts[i, 3] - q)
        buf[i, 1] = math.cos(theta)
        buf[i, 2] = math.sin(theta)
        buf[i, 3] = hbar / mass * (a * xi * inv2 + consts[i, 5])
        buf[i, 4] = hbar / mass * xi * inv2


@njit(cache=True, nogil=True)
def _channel_velocity(n, buf, eps):
    """Emergent velocity and forward-velocity spread from filled slit rows."""
    wx = 0.0
    wy = 0.0
    scale = 0.0
    for i in range(n):
        R = buf[i, 0]
        cx = buf[i, 1]
        cy = buf[i, 2]
        # forward at theta, osmotic_plus at theta + pi/2, osmotic_minus at theta - pi/2
        wx += R * cx + (0.5 * R * -cy + 0.5 * R * cy)
        wy += R * cy + (0.5 * R * cx + 0.5 * R * -cx)
        scale += R
    P = 0.0
    J = 0.0
    vmin = np.inf
    vmax = -np.inf
    for i in range(n):
        R = buf[i, 0]
        cx = buf[i, 1]
        cy = buf[i, 2]
        v = buf[i, 3]
        u = buf[i, 4]
        pf = R * (cx * wx + cy * wy)
        pp = 0.5 * R * (-cy * wx + cx * wy)
        pm = 0.5 * R * (cy * wx - cx * wy)
        P += pf + (pp + pm)
        J += v * pf + (u * pp + -u * pm)
        vmin = min(vmin, v)
        vmax = max(vmax, v)
    spread = vmax - vmin if n > 1 else 0.0
    if not P > eps * scale * scale:
        return np.nan, spread
    return J / P, spread


@njit(cache=True, nogil=True)
def _vel_at(x, n, consts, hbar, mass, buf, eps):
    _fill_modes(x, n, consts, hbar, mass, buf)
    return _channel_velocity(n, buf, eps)


@njit(cache=True, nogil=True)
def _vel(x, t, modes, hbar, mass, buf, cbuf, eps):
    _mode_consts(t, modes, hbar, mass, cbuf)
    return _vel_at(x, modes.shape[0], cbuf, hbar, mass, buf, eps)


@njit(cache=True, nogil=True)
def _rk4(x, t, h, k, v_first, modes, hbar, mass, buf, cbuf, eps):
    """``k`` RK4 substeps; also returns the largest in-substep stage drift."""
    hs = h / k
    drift = 0.0
    for s in range(k):
        ts = t + s * h / k
        if s == 0:
            k1 = v_first
        else:
            k1 = _vel(x, ts, modes, hbar, mass, buf, cbuf, eps)[0]
        k2 = _vel(x + 0.5 * hs * k1, ts + 0.5 * hs, modes, hbar, mass, buf, cbuf, eps)[0]
        k3 = _vel(x + 0.5 * hs * k2, ts + 0.5 * hs, modes, hbar, mass, buf, cbuf, eps)[0]
        k4 = _vel(x + hs * k3, ts + hs, modes, hbar, mass, buf, cbuf, eps)[0]
        x = x + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        d = hs * max(abs(k2 - k1), abs(k3 - k1), abs(k4 - k1))
        drift = max(drift, d)
    return x, drift


@njit(cache=True, nogil=True)
def _rk4_single(x, h, v_first, n, c_mid, c_end, hbar, mass, buf, eps):
    # one full step with stage constants shared by all points
    k2 = _vel_at(x + 0.5 * h * v_first, n, c_mid, hbar, mass, buf, eps)[0]
    k3 = _vel_at(x + 0.5 * h * k2, n, c_mid, hbar, mass, buf, eps)[0]
    k4 = _vel_at(x + h * k3, n, c_end, hbar, mass, buf, eps)[0]
    drift = h * max(abs(k2 - v_first), abs(k3 - v_first), abs(k4 - v_first))
    return x + h / 6.0 * (v_first + 2.0 * k2 + 2.0 * k3 + k4), drift


@njit(cache=True, nogil=True)
def velocities(X, t, modes, hbar, mass, eps, out):
    n = modes.shape[0]
    buf = np.empty((max(n, 1), 5))
    cbuf = np.empty((max(n, 1), 6))
    _mode_consts(t, modes, hbar, mass, cbuf)
    for p in range(X.size):
        out[p] = _vel_at(X[p], n, cbuf, hbar, mass, buf, eps)[0]


@njit(cache=True, nogil=True)
def advance(X, t, h, modes, hbar, mass, eps, frac, max_sub, retry,
            out_x, out_v0, out_k):
    """One fixed step of every point; NaN in ``out_x`` marks an unresolved node."""
    n = modes.shape[0]
    m = max(n, 1)
    buf = np.empty((m, 5))
    cbuf = np.empty((m, 6))
    c0 = np.empty((m, 6))
    c_mid = np.empty((m, 6))
    c_end = np.empty((m, 6))
    _mode_consts(t, modes, hbar, mass, c0)
    _mode_consts(t + 0.5 * h, modes, hbar, mass, c_mid)
    _mode_consts(t + h, modes, hbar, mass, c_end)
    sig_min = np.inf
    for i in range(n):
        sig_min = min(sig_min, math.sqrt(0.5 / c0[i, 1]))
    for p in range(X.size):
        x = X[p]
        if not math.isfinite(x):
            out_x[p] = np.nan
            out_v0[p] = np.nan
            out_k[p] = 0
            continue
        v0, spread = _vel_at(x, n, c0, hbar, mass, buf, eps)
        out_v0[p] = v0
        length = sig_min
        if spread > 0:
            length = min(length, 2.0 * math.pi * hbar / (mass * spread))
        need = abs(v0) * h / (frac * length)
        k = 1
        if math.isfinite(need) and need > 1:
            k = min(int(math.ceil(need)), max_sub)
        if k == 1:
            xn, drift = _rk4_single(x, h, v0, n, c_mid, c_end, hbar, mass, buf, eps)
        else:
            xn, drift = _rk4(x, t, h, k, v0, modes, hbar, mass, buf, cbuf, eps)
        # stages that disagree by more than the substep criterion allows: refine
        while k < max_sub and math.isfinite(xn) and drift > frac * length:
            k = min(max_sub, k * int(math.ceil(2.0 * drift / (frac * length))))
            xn, drift = _rk4(x, t, h, k, v0, modes, hbar, mass, buf, cbuf, eps)
        if not math.isfinite(xn):
            k = min(k * retry, max_sub * retry)
            xn, drift = _rk4(x, t, h, k, v0, modes, hbar, mass, buf, cbuf, eps)
        out_x[p] = xn
        out_k[p] = k
