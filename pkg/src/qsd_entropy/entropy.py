"""Stochastic entropy production along trajectories and its analytic references.

Environmental increments follow the diagonal-diffusion functional of the
drift split::

    sum_i [ A_i^irr/D_ii dx_i - A_i^rev A_i^irr/D_ii dt + dA_i^irr/dx_i dt
            - dA_i^rev/dx_i dt - D_ii'/D_ii dx_i + (A_i^rev - A_i^irr) D_ii'/D_ii dt
            - D_ii'' dt + (D_ii')^2/D_ii dt ]

For this model every ``phi`` term vanishes, and the ``rz`` terms reduce to::

    ds_env = (A - D')/D drz + (-4 lam^2 - D'' + D'(D' - A)/D) dt

System increments are ``-d ln p(rz, t)``, read from Fokker-Planck snapshots.

The stationary density diverges weakly at ``rz = +-1`` where ``D_zz``
vanishes. The mean of ``-d ln p`` along sampled paths then misses the
boundary contribution ``-[D_zz dp_st/drz]_{-1}^{+1}``, which is added back
to ensemble means as a constant rate. The companion ``J_z ln p`` boundary
term vanishes for stationary densities (``J_z = 0``) and is not applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import DivergenceFault, NumericalLimitFault, BoundarySingularityError
from .fokker_planck import P_FLOOR, PdfGrid, log_pdf_at
from .model import (
    BlochState,
    ModelParams,
    diffusion,
    diffusion_derivatives,
    diffusion_zz,
    diffusion_zz_derivatives,
    drift_split,
    drift_z,
    stationary_log_pdf_derivative,
    stationary_log_pdf_unnormalized,
    stationary_normalization,
    stationary_pdf,
)


# ------------------------------------------------------------ increments


def _coordinate_terms(a_irr, a_rev, da_irr, da_rev, d, dd, d2d, dx, dt):
    """The eight terms of the environmental functional for one coordinate."""
    if d <= 0:
        raise BoundarySingularityError("diffusion coefficient must be positive")
    return (
        a_irr / d * dx
        - a_rev * a_irr / d * dt
        + da_irr * dt
        - da_rev * dt
        - dd / d * dx
        + (a_rev - a_irr) * dd / d * dt
        - d2d * dt
        + dd * dd / d * dt
    )


def env_increment_terms(state: BlochState, d_state, dt: float, params: ModelParams):
    """Per-coordinate environmental contributions ``(rz part, phi part)``.

    ``d_state = (drz, dphi)`` must be the integrator's increment for the
    same noise draw, taken before any boundary reflection.
    """
    drz, dphi = d_state
    split = drift_split(state, params)
    d_zz, d_pp = diffusion(state, params)
    dd_zz, d2d_zz, dd_pp = diffusion_derivatives(state, params)
    # drift derivatives along their own coordinate
    da_irr_z = -4.0 * params.lam2
    da_rev_z = 0.0
    da_irr_phi = 0.0  # no phi dependence anywhere
    da_rev_phi = 0.0
    rz_part = _coordinate_terms(
        split.a_irr[0], split.a_rev[0], da_irr_z, da_rev_z, float(d_zz), float(dd_zz), float(d2d_zz), drz, dt
    )
    phi_part = _coordinate_terms(
        split.a_irr[1], split.a_rev[1], da_irr_phi, da_rev_phi, float(d_pp), float(dd_pp), 0.0, dphi, dt
    )
    return rz_part, phi_part


def env_increment(state: BlochState, d_state, dt: float, params: ModelParams) -> float:
    """Environmental entropy increment, evaluated term by term over ``(rz, phi)``."""
    rz_part, phi_part = env_increment_terms(state, d_state, dt, params)
    return rz_part + phi_part


def env_increment_rz(rz, drz, dt, params: ModelParams):
    """Closed-form reduction of :func:`env_increment` (vectorised)."""
    rz = np.asarray(rz, dtype=float)
    a = drift_z(rz, params)
    d = diffusion_zz(rz, params)
    d1, d2 = diffusion_zz_derivatives(rz, params)
    return (a - d1) / d * drz + (-4.0 * params.lam2 - d2 + d1 * (d1 - a) / d) * dt


def env_mean_rate(rz, params: ModelParams):
    """Drift of ``ds_env`` per unit time at ``rz``: ``(A-D')^2/D + A' - D''``."""
    rz = np.asarray(rz, dtype=float)
    a = drift_z(rz, params)
    d = diffusion_zz(rz, params)
    d1, d2 = diffusion_zz_derivatives(rz, params)
    return (a - d1) ** 2 / d - 4.0 * params.lam2 - d2


def sys_increment(rz_prev, rz_next, p_prev: PdfGrid, p_next: PdfGrid, clamp: bool = False) -> float:
    """``-[ln p_next(rz_next) - ln p_prev(rz_prev)]`` with linear interpolation."""
    lp_next, _ = log_pdf_at(p_next, rz_next, clamp=clamp)
    lp_prev, _ = log_pdf_at(p_prev, rz_prev, clamp=clamp)
    return -(lp_next - lp_prev)


# ------------------------------------------------------- boundary correction


def boundary_flux(params: ModelParams, h: float) -> float:
    """``-[D_zz dp_st/drz]`` between ``-(1-h)`` and ``1-h`` for the normalised density."""
    x = np.array([-1.0 + h, 1.0 - h])
    f = diffusion_zz(x, params) * stationary_pdf(x, params) * stationary_log_pdf_derivative(x, params)
    return -float(f[1] - f[0])


@dataclass(frozen=True)
class BoundaryLimit:
    """Endpoint limit with its convergence history."""

    rate: float
    h: np.ndarray
    raw: np.ndarray
    extrapolated: np.ndarray


def boundary_limit(params: ModelParams, h0: float = 1e-2, rtol: float = 5e-3,
                   max_halvings: int = 40, atol: float = 1e-15) -> BoundaryLimit:
    """Richardson-extrapolated endpoint limit of the stationary boundary current.

    Raw values ``f(h)`` at ``h = h0 / 2^k`` are combined as ``2 f(h/2) - f(h)``
    (removing the linear term in ``h``). Stops when two successive
    extrapolants agree to ``rtol``.

    Raises
    ------
    NumericalLimitFault
        If no two successive extrapolants agree before ``max_halvings``.
    """
    hs, raw, ext = [h0], [boundary_flux(params, h0)], []
    for k in range(1, max_halvings + 1):
        h = h0 / 2.0**k
        hs.append(h)
        raw.append(boundary_flux(params, h))
        ext.append(2.0 * raw[-1] - raw[-2])
        if not math.isfinite(ext[-1]):
            break
        if len(ext) >= 2 and abs(ext[-1] - ext[-2]) <= rtol * abs(ext[-1]) + atol:
            return BoundaryLimit(ext[-1], np.array(hs), np.array(raw), np.array(ext))
    raise NumericalLimitFault(
        "boundary limit did not converge",
        diagnostics={"h": hs, "raw": raw, "extrapolated": ext},
    )


def boundary_correction_rate(params: ModelParams, **kwargs) -> float:
    """Rate added to the ensemble-mean system entropy (per unit time)."""
    return boundary_limit(params, **kwargs).rate


def boundary_rate_closed_form(params: ModelParams) -> float:
    """``-lam^2 (beta epsilon)^2``, the leading small-``beta epsilon`` rate at ``gamma = 1``."""
    return -params.lam2 * params.be**2


def boundary_rate_series(params: ModelParams) -> float:
    """Second-order small-``beta epsilon`` estimate for any ``gamma``.

    Near the ends ``D_zz p' -> +-lam^2 (beta epsilon)^2 p(+-1)``, so to leading
    order the rate is ``-lam^2 (beta epsilon)^2 [p0(1) + p0(-1)]`` with ``p0``
    the ``beta epsilon = 0`` density ``~ (gamma^2 + (1 - gamma^2) rz^2)^-2``.
    """
    g2 = params.gamma**2
    z, _ = integrate.quad(lambda r: (g2 + (1.0 - g2) * r * r) ** -2, -1.0, 1.0, epsabs=0, epsrel=1e-13)
    edge = 1.0 / z  # p0(+-1), both ends equal
    return -params.lam2 * params.be**2 * 2.0 * edge


# ------------------------------------------------------- divergences


def kl_divergence(p_a: PdfGrid, p_b: PdfGrid, floor: float = P_FLOOR) -> float:
    """Midpoint-rule ``sum h p_a ln(p_a/p_b)`` on a common grid."""
    if p_a.n != p_b.n or not np.allclose(p_a.nodes, p_b.nodes, rtol=0, atol=1e-14):
        raise ValueError("grids must share nodes")
    a, b = p_a.values, p_b.values
    live = a > floor
    if np.any(live & (b <= floor)):
        raise DivergenceFault("reference density vanishes where the first is positive")
    return float(p_a.h * np.sum(a[live] * (np.log(a[live]) - np.log(b[live]))))


def kl_divergence_stationary(params_a: ModelParams, params_b: ModelParams) -> float:
    """``KL(p_st(a) || p_st(b))`` by adaptive quadrature on the closed forms."""
    ln_za = math.log(stationary_normalization(params_a))
    ln_zb = math.log(stationary_normalization(params_b))

    def f(r):
        la = float(stationary_log_pdf_unnormalized(r, params_a)) - ln_za
        lb = float(stationary_log_pdf_unnormalized(r, params_b)) - ln_zb
        return math.exp(la) * (la - lb)

    return _quad_open(f)


def gibbs_entropy(p: PdfGrid, floor: float = P_FLOOR) -> float:
    """``-sum h p ln p``; cells at or below ``floor`` contribute zero."""
    v = p.values
    live = v > floor
    return float(-p.h * np.sum(v[live] * np.log(v[live])))


def gibbs_entropy_stationary(params: ModelParams) -> float:
    ln_z = math.log(stationary_normalization(params))

    def f(r):
        lp = float(stationary_log_pdf_unnormalized(r, params)) - ln_z
        return -math.exp(lp) * lp

    return _quad_open(f)


def _quad_open(f):
    # log-singular integrands at both ends; the open Gauss-Kronrod rule copes
    val, _ = integrate.quad(f, -1.0, 1.0, limit=400, epsabs=0.0, epsrel=1e-12,
                            points=(-0.999, 0.0, 0.999))
    return val


# ------------------------------------------------------- ledger & observer


@dataclass
class EntropyLedger:
    """Cumulative system and environmental entropy on a time grid.

    Works for one trajectory or for ensemble means; ``sem_tot`` is set only
    for ensembles. ``boundary_correction_rate`` is the constant stationary
    boundary rate of the dynamics-phase coupling.
    """

    times: np.ndarray
    cum_sys: np.ndarray
    cum_env: np.ndarray
    boundary_correction_rate: float = 0.0
    sem_tot: Optional[np.ndarray] = None

    @property
    def cum_tot(self) -> np.ndarray:
        return self.cum_sys + self.cum_env

    @property
    def ds_sys(self) -> np.ndarray:
        return np.diff(self.cum_sys, prepend=0.0)

    @property
    def ds_env(self) -> np.ndarray:
        return np.diff(self.cum_env, prepend=0.0)

    @property
    def ds_tot(self) -> np.ndarray:
        return self.ds_sys + self.ds_env

    @property
    def corrected_total(self) -> np.ndarray:
        return self.cum_tot + self.boundary_correction_rate * self.times

    @classmethod
    def from_trajectory(cls, traj, rate: float = 0.0) -> "EntropyLedger":
        if traj.ds_sys is None:
            raise ValueError("trajectory was integrated without an entropy observer")
        return cls(traj.times, traj.ds_sys, traj.ds_env, rate)

    @classmethod
    def from_ensemble(cls, res, rate: float = 0.0) -> "EntropyLedger":
        if res.mean_tot is None:
            raise ValueError("ensemble was run without an entropy observer")
        return cls(res.times, res.mean_sys, res.mean_env, rate, res.sem_tot)


class EntropyObserver:
    """Fused observer that accumulates entropy inside the integrator.

    Parameters
    ----------
    snapshots
        Density grids at ``t = 0, cadence, 2 cadence, ...`` on a common
        uniform node set. ``ln p`` is interpolated linearly in ``rz`` (on
        ``p``) and linearly in time (on ``ln p``). Queries outside the node
        span use the edge node value and are counted as clamps.
    rate
        Boundary-correction rate carried for downstream ledgers.
    """

    def __init__(self, snapshots: Sequence[PdfGrid], rate: float = 0.0, floor: float = P_FLOOR):
        if not snapshots:
            raise ValueError("at least one snapshot is required")
        nodes = snapshots[0].nodes
        for s in snapshots[1:]:
            if s.n != nodes.size or not np.array_equal(s.nodes, nodes):
                raise ValueError("snapshots must share nodes")
        times = np.array([s.t for s in snapshots])
        if len(snapshots) > 1:
            steps = np.diff(times)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12) or times[0] != 0.0:
                raise ValueError("snapshots must start at t=0 with uniform cadence")
            self.cadence = float(steps[0])
        else:
            self.cadence = 0.0
        self.snapshots = list(snapshots)
        self.rate = float(rate)
        self.floor = float(floor)
        self._table = np.ascontiguousarray(np.stack([s.values for s in snapshots]))
        self._x0 = float(nodes[0])
        self._hx = float(snapshots[0].h)

    def kernel_args(self):
        return self._table, self._x0, self._hx, self.cadence, self.floor

    @property
    def t_end(self) -> float:
        return self.snapshots[-1].t
