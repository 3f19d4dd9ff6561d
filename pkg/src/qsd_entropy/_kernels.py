"""Compiled inner loops for the trajectory integrators.

These are private; the public entry points live in :mod:`qsd_entropy.sde`
and :mod:`qsd_entropy.entropy`. Formulas mirror :mod:`qsd_entropy.model`
term by term.
"""

from __future__ import annotations

import math

from numba import njit

TWO_PI = 2.0 * math.pi

# indices into the per-trajectory counter array
C_REFLECT = 0
C_CLAMP = 1
C_FLOOR = 2
N_COUNTERS = 3

# rows of the per-time accumulator
A_RZ, A_RZ2, A_SYS, A_ENV, A_TOT, A_TOT2, A_DTOT, A_DTOT2 = range(8)
N_ACC = 8


@njit(cache=True, nogil=True, error_model="numpy")
def reflect(x, hi):
    """Mirror ``x`` into ``[-hi, hi]``; returns ``(x, n_reflections)``, x nan on failure."""
    it = 0
    while x > hi or x < -hi:
        if x > hi:
            x = 2.0 * hi - x
        else:
            x = -2.0 * hi - x
        it += 1
        if it > 8 or not math.isfinite(x):
            return math.nan, it
    return x, it


@njit(cache=True, nogil=True, error_model="numpy")
def grid_value(x, p, x0, hx):
    """Linear interpolation of one snapshot row; edge values outside the span."""
    n = p.shape[0]
    xi = (x - x0) / hx
    if xi <= 0.0:
        return p[0]
    if xi >= n - 1:
        return p[n - 1]
    i = int(xi)
    f = xi - i
    return (1.0 - f) * p[i] + f * p[i + 1]


@njit(cache=True, nogil=True, error_model="numpy")
def _time_index(t, m, tau):
    jf = t / tau
    j = int(math.floor(jf))
    if j < 0:
        j = 0
    if j > m - 2:
        j = m - 2
    w = jf - j
    if w < 0.0:
        w = 0.0
    elif w > 1.0:
        w = 1.0
    return j, w


@njit(cache=True, nogil=True, error_model="numpy")
def snapshot_lnp(x, t, snaps, x0, hx, tau, floor):
    """ln p(x, t): linear in ``rz`` on p, floored, logged, then linear in time."""
    m = snaps.shape[0]
    if m == 1 or tau <= 0.0:
        return math.log(max(grid_value(x, snaps[0], x0, hx), floor))
    j, w = _time_index(t, m, tau)
    if w == 0.0:
        return math.log(max(grid_value(x, snaps[j], x0, hx), floor))
    if w == 1.0:
        return math.log(max(grid_value(x, snaps[j + 1], x0, hx), floor))
    la = math.log(max(grid_value(x, snaps[j], x0, hx), floor))
    lb = math.log(max(grid_value(x, snaps[j + 1], x0, hx), floor))
    return (1.0 - w) * la + w * lb


@njit(cache=True, nogil=True, error_model="numpy")
def floor_hits(x, t, snaps, x0, hx, tau, floor):
    """Number of snapshot interpolants used at ``(x, t)`` that fell below ``floor``."""
    m = snaps.shape[0]
    if m == 1 or tau <= 0.0:
        return 1 if grid_value(x, snaps[0], x0, hx) < floor else 0
    j, w = _time_index(t, m, tau)
    hits = 0
    if w < 1.0 and grid_value(x, snaps[j], x0, hx) < floor:
        hits += 1
    if w > 0.0 and grid_value(x, snaps[j + 1], x0, hx) < floor:
        hits += 1
    return hits


@njit(cache=True, nogil=True, error_model="numpy")
def env_rz(rz, dx, dt, be, lam2, g):
    """Closed-form environmental entropy increment (only rz contributes)."""
    q = 0.25 * be * be + be * rz + (1.0 - g * g) * rz * rz + g * g
    dq = be + 2.0 * (1.0 - g * g) * rz
    d2q = 2.0 * (1.0 - g * g)
    u = 1.0 - rz * rz
    a = -4.0 * lam2 * (be + rz)
    d = 2.0 * lam2 * u * q
    d1 = 2.0 * lam2 * (-2.0 * rz * q + u * dq)
    d2 = 2.0 * lam2 * (-2.0 * q - 4.0 * rz * dq + u * d2q)
    return (a - d1) / d * dx + (-4.0 * lam2 - d2 + d1 * (d1 - a) / d) * dt


@njit(cache=True, nogil=True, error_model="numpy")
def reduced_path(
    rz0, phi0, noise, dt, be, lam, eps, gam, dref,
    with_entropy, snaps, x0, hx, tau, floor,
    rz_buf, phi_buf, sys_buf, env_buf, counters,
):
    """Euler-Maruyama path of ``(rz, phi)`` with fused entropy bookkeeping.

    ``gam[k]`` is the coupling used on step ``k``. Buffers have length
    ``n_steps + 1`` and receive the state and cumulative entropies at every
    grid time. The environmental term is evaluated on the integrator's
    increment before any reflection. Returns -1 on success or the index of
    the first step that produced a non-finite value.
    """
    lam2 = lam * lam
    hi = 1.0 - dref
    n = noise.shape[0]
    rz = rz0
    phi = phi0
    rz_buf[0] = rz
    phi_buf[0] = phi
    sys_buf[0] = 0.0
    env_buf[0] = 0.0
    s_sys = 0.0
    s_env = 0.0
    lp_prev = 0.0
    n_ref = 0
    n_clamp = 0
    n_floor = 0
    x_last = x0 + (snaps.shape[1] - 1) * hx
    # floors are only possible if some snapshot node lies below the floor
    may_floor = with_entropy and snaps.min() < floor
    if with_entropy:
        lp_prev = snapshot_lnp(rz, 0.0, snaps, x0, hx, tau, floor)
        if rz < x0 or rz > x_last:
            n_clamp += 1
        if may_floor:
            n_floor += floor_hits(rz, 0.0, snaps, x0, hx, tau, floor)
    fault = -1
    for k in range(n):
        g = gam[k]
        w0 = noise[k, 0]
        w1 = noise[k, 1]
        w2 = noise[k, 2]
        s = math.sqrt(1.0 - rz * rz)
        c = math.cos(phi)
        sn = math.sin(phi)
        a = -4.0 * lam2 * (be + rz)
        f = be + 2.0 * rz
        drz = a * dt - lam * f * s * (c * w0 + sn * w1) + 2.0 * g * lam * (1.0 - rz * rz) * w2
        h = lam * (be * rz + 2.0) / s
        dphi = 2.0 * eps * dt - h * sn * w0 + h * c * w1
        rn, nr = reflect(rz + drz, hi)
        n_ref += nr
        pn = phi + dphi
        if not (math.isfinite(rn) and math.isfinite(pn)):
            fault = k
            break
        # steps are far smaller than 2 pi, so one shift wraps exactly
        if pn >= TWO_PI:
            pn -= TWO_PI
        elif pn < 0.0:
            pn += TWO_PI
            if pn >= TWO_PI:
                pn = 0.0
        if with_entropy:
            de = env_rz(rz, drz, dt, be, lam2, g)
            t1 = (k + 1) * dt
            lp = snapshot_lnp(rn, t1, snaps, x0, hx, tau, floor)
            if rn < x0 or rn > x_last:
                n_clamp += 1
            if may_floor:
                n_floor += floor_hits(rn, t1, snaps, x0, hx, tau, floor)
            ds = -(lp - lp_prev)
            if not (math.isfinite(de) and math.isfinite(ds)):
                fault = k
                break
            lp_prev = lp
            s_env += de
            s_sys += ds
        rz = rn
        phi = pn
        rz_buf[k + 1] = rz
        phi_buf[k + 1] = phi
        sys_buf[k + 1] = s_sys
        env_buf[k + 1] = s_env
    counters[C_REFLECT] += n_ref
    counters[C_CLAMP] += n_clamp
    counters[C_FLOOR] += n_floor
    return fault


@njit(cache=True, nogil=True, error_model="numpy")
def accumulate(acc, rz_buf, sys_buf, env_buf):
    """Add one committed trajectory to the per-time accumulator ``acc``."""
    n = rz_buf.shape[0]
    prev = 0.0
    for k in range(n):
        r = rz_buf[k]
        tot = sys_buf[k] + env_buf[k]
        d = tot - prev
        prev = tot
        acc[A_RZ, k] += r
        acc[A_RZ2, k] += r * r
        acc[A_SYS, k] += sys_buf[k]
        acc[A_ENV, k] += env_buf[k]
        acc[A_TOT, k] += tot
        acc[A_TOT2, k] += tot * tot
        acc[A_DTOT, k] += d
        acc[A_DTOT2, k] += d * d


@njit(cache=True, nogil=True, error_model="numpy")
def path_3d(r0, noise, dt, be, lam, eps, gam, out):
    """Unreflected Euler-Maruyama path of the full coherence vector."""
    lam2 = lam * lam
    rx = r0[0]
    ry = r0[1]
    rz = r0[2]
    out[0, 0] = rx
    out[0, 1] = ry
    out[0, 2] = rz
    for k in range(noise.shape[0]):
        g = gam[k]
        w0 = noise[k, 0]
        w1 = noise[k, 1]
        w2 = noise[k, 2]
        kk = 2.0 * lam2 * (1.0 + g * g)
        dx = (
            (-2.0 * eps * ry - kk * rx) * dt
            + lam * (be * rz + 2.0 * (1.0 - rx * rx)) * w0
            - 2.0 * lam * rx * ry * w1
            - 2.0 * g * lam * rx * rz * w2
        )
        dy = (
            (2.0 * eps * rx - kk * ry) * dt
            - 2.0 * lam * rx * ry * w0
            + lam * (be * rz + 2.0 * (1.0 - ry * ry)) * w1
            - 2.0 * g * lam * ry * rz * w2
        )
        dz = (
            -4.0 * lam2 * (be + rz) * dt
            - lam * rx * (be + 2.0 * rz) * w0
            - lam * ry * (be + 2.0 * rz) * w1
            + 2.0 * g * lam * (1.0 - rz * rz) * w2
        )
        rx += dx
        ry += dy
        rz += dz
        if not (math.isfinite(rx) and math.isfinite(ry) and math.isfinite(rz)):
            return k
        out[k + 1, 0] = rx
        out[k + 1, 1] = ry
        out[k + 1, 2] = rz
    return -1
