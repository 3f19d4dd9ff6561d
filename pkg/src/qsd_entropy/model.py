"""Physical parameters and closed-form coefficients of the monitored qubit.

The system is a two-level system with Hamiltonian ``epsilon * sigma_z``
coupled isotropically to three thermal baths through ``sigma_x``,
``sigma_y`` (strength ``gamma0 = 1``) and ``sigma_z`` (strength ``gamma``).
Raising ``gamma`` above one models an attached energy-measuring device.
Trajectories are pure states, so the coherence vector lives on the unit
Bloch sphere and is described by ``(rz, phi)``.

The reduced Ito SDE is::

    d rz  = A_z dt + B[0] . dW
    d phi = A_phi dt + B[1] . dW

with ``A_z = -4 lam^2 (be + rz)``, ``A_phi = 2 epsilon`` and ``be = beta*epsilon``.
The diffusion matrix ``D = B B^T / 2`` is diagonal.

Units: hbar = k_B = 1, time in units of 1/epsilon.

All functions are pure and vectorise over numpy arrays.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np
from scipy import integrate

from .errors import BoundarySingularityError, DomainError

#: operations with a ``1/sqrt(1 - rz^2)`` factor refuse ``|rz| > 1 - SINGULAR_GUARD``
SINGULAR_GUARD = 1e-12
#: below this ``|gamma - 1|`` the gamma = 1 stationary formula is used
GAMMA_ONE_TOL = 1e-6
#: half-width of the endpoint tail handled analytically during normalisation
_TAIL_EPS = 1e-6


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the model.

    ``lam`` is derived as ``sqrt(2 alpha / beta)``. Passing it explicitly is
    allowed only if it agrees with that value.
    """

    beta: float = 0.1
    epsilon: float = 1.0
    alpha: float = 0.01
    gamma: float = 1.0
    gamma0: float = 1.0
    lam: float | None = field(default=None)

    def __post_init__(self):
        if not (self.beta > 0 and self.alpha > 0):
            raise ValueError("beta and alpha must be positive")
        if not math.isfinite(self.epsilon):
            raise ValueError("epsilon must be finite")
        expected = math.sqrt(2.0 * self.alpha / self.beta)
        if self.lam is None:
            object.__setattr__(self, "lam", expected)
        elif not math.isclose(self.lam, expected, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(
                f"lam={self.lam!r} inconsistent with sqrt(2*alpha/beta)={expected!r}"
            )
        if self.gamma0 != 1.0:
            # the coefficient functions below are written for gamma0 = 1
            raise ValueError("gamma0 must equal 1")
        if not self.gamma >= self.gamma0:
            raise ValueError(f"gamma={self.gamma} must be >= gamma0={self.gamma0}")
        if abs(self.beta * self.epsilon) >= 1.0:
            warnings.warn(
                f"beta*epsilon={self.beta * self.epsilon:g} is outside the "
                "high-temperature regime the coefficients assume",
                RuntimeWarning,
                stacklevel=3,
            )

    @property
    def be(self) -> float:
        """Dimensionless bias ``beta * epsilon``."""
        return self.beta * self.epsilon

    @property
    def lam2(self) -> float:
        return 2.0 * self.alpha / self.beta

    def with_gamma(self, gamma: float) -> "ModelParams":
        return replace(self, gamma=float(gamma))


@dataclass(frozen=True)
class BlochState:
    """Point on the Bloch sphere in reduced coordinates.

    Fields may be scalars or equally shaped arrays. ``phi`` is wrapped into
    ``[0, 2 pi)`` on construction.
    """

    rz: float | np.ndarray
    phi: float | np.ndarray = 0.0

    def __post_init__(self):
        rz = np.asarray(self.rz, dtype=float)
        if np.any(np.abs(rz) > 1.0):
            raise ValueError("|rz| must not exceed 1")
        phi = np.mod(np.asarray(self.phi, dtype=float), 2.0 * np.pi)
        object.__setattr__(self, "rz", rz if rz.ndim else float(rz))
        object.__setattr__(self, "phi", phi if phi.ndim else float(phi))

    def to_vector(self) -> "BlochVector":
        s = np.sqrt(1.0 - np.asarray(self.rz) ** 2)
        return BlochVector(s * np.cos(self.phi), s * np.sin(self.phi), self.rz)


@dataclass(frozen=True)
class BlochVector:
    """Full coherence vector ``(rx, ry, rz)`` used by the 3-D integrator."""

    rx: float | np.ndarray
    ry: float | np.ndarray
    rz: float | np.ndarray

    #: slack allowed above r^2 = 1 before the state is rejected
    SLACK = 1e-2

    def __post_init__(self):
        if np.any(self.r2 > 1.0 + self.SLACK):
            raise ValueError("coherence vector length exceeds 1")

    @property
    def r2(self):
        return np.asarray(self.rx) ** 2 + np.asarray(self.ry) ** 2 + np.asarray(self.rz) ** 2

    def as_array(self) -> np.ndarray:
        return np.array([self.rx, self.ry, self.rz], dtype=float)

    def to_state(self) -> BlochState:
        """Project onto reduced coordinates (drops ``|r|``)."""
        return BlochState(np.clip(self.rz, -1.0, 1.0), np.arctan2(self.ry, self.rx))


@dataclass(frozen=True)
class DriftSplit:
    """Drift separated by time-reversal parity.

    ``rz`` is even under time reversal and ``phi`` is odd, so the ``rz`` drift
    is irreversible and the precession ``2 epsilon`` is reversible.
    """

    a_irr: Tuple[np.ndarray, np.ndarray]
    a_rev: Tuple[np.ndarray, np.ndarray]

    @property
    def total(self):
        return (self.a_irr[0] + self.a_rev[0], self.a_irr[1] + self.a_rev[1])


# ---------------------------------------------------------------- rz helpers


def _q(rz, be, g):
    return (0.5 * be) ** 2 + be * rz + (1.0 - g * g) * rz * rz + g * g


def drift_z(rz, params: ModelParams):
    """``A_z = -4 lam^2 (be + rz)``."""
    return -4.0 * params.lam2 * (params.be + np.asarray(rz, dtype=float))


def diffusion_zz(rz, params: ModelParams):
    """``D_zz`` on the closed interval ``[-1, 1]``; vanishes at both ends."""
    rz = np.asarray(rz, dtype=float)
    return 2.0 * params.lam2 * (1.0 - rz * rz) * _q(rz, params.be, params.gamma)


def diffusion_zz_derivatives(rz, params: ModelParams):
    """First and second ``rz`` derivatives of ``D_zz``."""
    rz = np.asarray(rz, dtype=float)
    be, g = params.be, params.gamma
    q = _q(rz, be, g)
    dq = be + 2.0 * (1.0 - g * g) * rz
    d2q = 2.0 * (1.0 - g * g)
    u = 1.0 - rz * rz
    c = 2.0 * params.lam2
    return c * (-2.0 * rz * q + u * dq), c * (-2.0 * q - 4.0 * rz * dq + u * d2q)


def _guard(rz):
    rz = np.asarray(rz, dtype=float)
    if np.any(np.abs(rz) > 1.0 - SINGULAR_GUARD):
        raise BoundarySingularityError(
            f"|rz| > 1 - {SINGULAR_GUARD:g}: coefficient has a 1/sqrt(1-rz^2) pole"
        )
    return rz


# ------------------------------------------------------------ public ops


def drift(state: BlochState, params: ModelParams):
    """Drift vector ``(A_z, A_phi)``; independent of ``phi`` and ``gamma``."""
    a_z = drift_z(state.rz, params)
    a_phi = np.full_like(a_z, 2.0 * params.epsilon)
    return (a_z if a_z.ndim else float(a_z)), (a_phi if a_phi.ndim else float(a_phi))


def drift_split(state: BlochState, params: ModelParams) -> DriftSplit:
    a_z, a_phi = drift(state, params)
    zero = np.zeros_like(np.asarray(a_z))
    zero = zero if zero.ndim else 0.0
    return DriftSplit(a_irr=(a_z, zero), a_rev=(zero, a_phi))


def noise_matrix(state: BlochState, params: ModelParams) -> np.ndarray:
    """The 2x3 noise matrix ``B`` multiplying ``(dW_x, dW_y, dW_z)``.

    Array input of shape ``s`` gives output of shape ``s + (2, 3)``.
    """
    rz = _guard(state.rz)
    phi = np.asarray(state.phi, dtype=float)
    be, lam, g = params.be, params.lam, params.gamma
    s = np.sqrt(1.0 - rz * rz)
    c, sn = np.cos(phi), np.sin(phi)
    f = be + 2.0 * rz
    h = (be * rz + 2.0) / s
    out = np.empty(np.broadcast(rz, phi).shape + (2, 3))
    out[..., 0, 0] = -f * s * c
    out[..., 0, 1] = -f * s * sn
    out[..., 0, 2] = 2.0 * g * (1.0 - rz * rz)
    out[..., 1, 0] = -h * sn
    out[..., 1, 1] = h * c
    out[..., 1, 2] = 0.0
    return lam * out


def diffusion(state: BlochState, params: ModelParams):
    """Diagonal entries ``(D_zz, D_phiphi)`` of ``B B^T / 2``."""
    rz = _guard(state.rz)
    be = params.be
    d_zz = diffusion_zz(rz, params)
    d_pp = 2.0 * params.lam2 * ((0.5 * be * rz) ** 2 + be * rz + 1.0) / (1.0 - rz * rz)
    return d_zz, d_pp


def diffusion_derivatives(state: BlochState, params: ModelParams):
    """``(dD_zz/drz, d2D_zz/drz2, dD_phiphi/dphi)``; the last is identically zero."""
    rz = _guard(state.rz)
    d1, d2 = diffusion_zz_derivatives(rz, params)
    return d1, d2, np.zeros_like(d1)


# ------------------------------------------------------------------ 3-D mode


def drift_3d(vec: BlochVector, params: ModelParams) -> np.ndarray:
    rx, ry, rz = (np.asarray(v, dtype=float) for v in (vec.rx, vec.ry, vec.rz))
    eps, l2, g, be = params.epsilon, params.lam2, params.gamma, params.be
    k = 2.0 * l2 * (1.0 + g * g)
    return np.stack(
        [
            -2.0 * eps * ry - k * rx,
            2.0 * eps * rx - k * ry,
            -4.0 * l2 * (be + rz),
        ]
    )


def noise_matrix_3d(vec: BlochVector, params: ModelParams) -> np.ndarray:
    """3x3 matrix; row ``i`` multiplies ``(dW_x, dW_y, dW_z)`` in ``dr_i``."""
    rx, ry, rz = (np.asarray(v, dtype=float) for v in (vec.rx, vec.ry, vec.rz))
    lam, g, be = params.lam, params.gamma, params.be
    out = np.empty(np.broadcast(rx, ry, rz).shape + (3, 3))
    out[..., 0, 0] = be * rz + 2.0 * (1.0 - rx * rx)
    out[..., 0, 1] = -2.0 * rx * ry
    out[..., 0, 2] = -2.0 * g * rx * rz
    out[..., 1, 0] = -2.0 * rx * ry
    out[..., 1, 1] = be * rz + 2.0 * (1.0 - ry * ry)
    out[..., 1, 2] = -2.0 * g * ry * rz
    out[..., 2, 0] = -rx * (be + 2.0 * rz)
    out[..., 2, 1] = -ry * (be + 2.0 * rz)
    out[..., 2, 2] = 2.0 * g * (1.0 - rz * rz)
    return lam * out


# ------------------------------------------------------ stationary density


def stationary_exponents(params: ModelParams):
    """Edge and shape exponents ``(a, b, c, d)`` of the stationary density."""
    be = params.be
    be2 = be * be
    a = -((be / (2.0 + be)) ** 2)
    b = -((be / (2.0 - be)) ** 2)
    c = -1.0 + 4.0 * (-4.0 + 3.0 * be2) / (-4.0 + be2) ** 2
    d = -1.0 + 8.0 * (-4.0 + 3.0 * be2) / (-4.0 + be2) ** 2
    return a, b, c, d


def _is_gamma_one(params: ModelParams) -> bool:
    return abs(params.gamma - 1.0) <= GAMMA_ONE_TOL


def _arctanh_parts(params: ModelParams):
    be, g = params.be, params.gamma
    s = g * math.sqrt(4.0 * g * g - 4.0 + be * be)
    k = 8.0 * be * (be * be * (1.0 + 2.0 * g * g) - 4.0) / ((4.0 - be * be) ** 2 * s)
    return s, k


def stationary_log_pdf_unnormalized(rz, params: ModelParams):
    """Logarithm of the unnormalised zero-flux stationary density of ``rz``."""
    rz = np.asarray(rz, dtype=float)
    be, g = params.be, params.gamma
    a, b, c, d = stationary_exponents(params)
    with np.errstate(divide="ignore", invalid="ignore"):
        edge = a * np.log1p(-rz) + b * np.log1p(rz)
        if _is_gamma_one(params):
            out = edge + d * np.log(be * be + 4.0 * be * rz + 4.0)
        else:
            # 4 * (be^2/4 + be rz + (1-g^2) rz^2 + g^2)
            quad = be * be + 4.0 * be * rz + 4.0 * g * g + 4.0 * (1.0 - g * g) * rz * rz
            s, k = _arctanh_parts(params)
            arg = (-be - 2.0 * rz * (1.0 - g * g)) / s
            out = edge + c * np.log(quad) + k * np.arctanh(arg)
    if not np.all(np.isfinite(out)):
        raise DomainError("stationary density is not finite at the requested points")
    return out if out.ndim else float(out)


def stationary_pdf_unnormalized(rz, params: ModelParams):
    return np.exp(stationary_log_pdf_unnormalized(rz, params))


def stationary_log_pdf_derivative(rz, params: ModelParams):
    """``d ln p_st / d rz`` from the closed form."""
    rz = np.asarray(rz, dtype=float)
    be, g = params.be, params.gamma
    a, b, c, d = stationary_exponents(params)
    edge = -a / (1.0 - rz) + b / (1.0 + rz)
    if _is_gamma_one(params):
        return edge + d * 4.0 * be / (be * be + 4.0 * be * rz + 4.0)
    quad = be * be + 4.0 * be * rz + 4.0 * g * g + 4.0 * (1.0 - g * g) * rz * rz
    dquad = 4.0 * be + 8.0 * (1.0 - g * g) * rz
    s, k = _arctanh_parts(params)
    arg = (-be - 2.0 * rz * (1.0 - g * g)) / s
    darg = -2.0 * (1.0 - g * g) / s
    return edge + c * dquad / quad + k * darg / (1.0 - arg * arg)


@functools.lru_cache(maxsize=64)
def _normalization(beta, epsilon, alpha, gamma):
    params = ModelParams(beta=beta, epsilon=epsilon, alpha=alpha, gamma=gamma)
    a, b, _, _ = stationary_exponents(params)
    lo, hi = -1.0 + _TAIL_EPS, 1.0 - _TAIL_EPS
    f = lambda x: float(stationary_pdf_unnormalized(x, params))
    body, _ = integrate.quad(
        f, lo, hi, limit=400, epsabs=0.0, epsrel=1e-13, points=(-0.999, 0.0, 0.999)
    )
    # p ~ C u^a near each end, so the tail integral is p(edge) * eps / (1 + a)
    tails = f(hi) * _TAIL_EPS / (1.0 + a) + f(lo) * _TAIL_EPS / (1.0 + b)
    return body + tails


def stationary_normalization(params: ModelParams) -> float:
    """Normalisation constant ``N_gamma`` of the stationary density."""
    return _normalization(params.beta, params.epsilon, params.alpha, params.gamma)


def stationary_pdf(rz, params: ModelParams):
    """Normalised stationary density on ``(-1, 1)``."""
    return stationary_pdf_unnormalized(rz, params) / stationary_normalization(params)


def stationary_moment(params: ModelParams, order: int = 1) -> float:
    """``<rz**order>`` under the normalised stationary density."""
    norm = stationary_normalization(params)
    val, _ = integrate.quad(
        lambda x: x**order * float(stationary_pdf_unnormalized(x, params)),
        -1.0,
        1.0,
        limit=400,
        epsabs=0.0,
        epsrel=1e-12,
        points=(-0.999, 0.0, 0.999),
    )
    return val / norm
