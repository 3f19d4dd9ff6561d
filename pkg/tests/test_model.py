import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qsd_entropy.errors import BoundarySingularityError
from qsd_entropy.model import (
    BlochState,
    BlochVector,
    ModelParams,
    diffusion,
    diffusion_derivatives,
    drift,
    drift_3d,
    drift_split,
    noise_matrix,
    noise_matrix_3d,
    stationary_exponents,
    stationary_moment,
    stationary_normalization,
    stationary_pdf,
    stationary_pdf_unnormalized,
)

P = ModelParams()
LAM = math.sqrt(0.2)

rz_s = st.floats(-0.999, 0.999)
phi_s = st.floats(0.0, 2 * math.pi, exclude_max=True)
gamma_s = st.floats(1.0, 5.0)


def test_params_derive_lambda():
    assert P.lam2 == pytest.approx(0.2, rel=1e-15)
    assert P.lam == pytest.approx(LAM, rel=1e-15)
    ModelParams(lam=LAM)
    with pytest.raises(ValueError):
        ModelParams(lam=0.5)


def test_params_reject_gamma_below_gamma0():
    with pytest.raises(ValueError):
        ModelParams(gamma=0.5)


def test_params_warn_outside_high_temperature():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        ModelParams(beta=2.0, epsilon=1.0)
    assert any(issubclass(x.category, RuntimeWarning) for x in w)


def test_bloch_state_wraps_phi_and_checks_rz():
    s = BlochState(0.2, 2 * math.pi + 0.5)
    assert s.phi == pytest.approx(0.5)
    with pytest.raises(ValueError):
        BlochState(1.5, 0.0)


def test_bloch_vector_slack():
    BlochVector(0.0, 0.0, 1.004)
    with pytest.raises(ValueError):
        BlochVector(0.0, 0.0, 1.1)


def test_drift_examples():
    az, aphi = drift(BlochState(0.0, 0.0), P)
    assert az == pytest.approx(-0.08, abs=1e-15) and aphi == 2.0
    assert drift(BlochState(-0.1, 1.0), P)[0] == pytest.approx(0.0, abs=1e-15)
    assert drift(BlochState(0.5, 1.0), P)[0] == pytest.approx(-0.48, abs=1e-15)


def test_noise_matrix_example():
    b = noise_matrix(BlochState(0.0, 0.0), P)
    np.testing.assert_allclose(b[0], [-0.1 * LAM, 0.0, 2 * LAM], atol=1e-15)
    assert b[0, 0] == pytest.approx(-0.04472, abs=1e-5) and b[0, 2] == pytest.approx(0.89443, abs=1e-5)


def test_noise_matrix_guard():
    with pytest.raises(BoundarySingularityError):
        noise_matrix(BlochState(1.0, 0.0), P)


def test_noise_boundary_factor_vanishes():
    b = noise_matrix(BlochState(1 - 1e-10, 0.3), P.with_gamma(2.0))
    assert abs(b[0, 2]) < 1e-9


def test_diffusion_examples():
    dzz, dpp = diffusion(BlochState(0.0, 0.0), P)
    assert dzz == pytest.approx(0.401, abs=1e-14)
    assert dpp == pytest.approx(0.4, abs=1e-14)
    d1, d2, dphi = diffusion_derivatives(BlochState(0.0, 0.0), P)
    assert d1 == pytest.approx(0.04, abs=1e-14)
    assert dphi == 0.0


@given(rz_s, phi_s, gamma_s)
def test_diffusion_is_diagonal_and_matches_bbt(rz, phi, g):
    q = P.with_gamma(g)
    s = BlochState(rz, phi)
    b = noise_matrix(s, q)
    d = 0.5 * b @ b.T
    dzz, dpp = diffusion(s, q)
    assert abs(d[0, 1]) <= 1e-12 * max(1.0, abs(d[1, 1]))
    assert d[0, 0] == pytest.approx(dzz, rel=1e-12, abs=1e-14)
    assert d[1, 1] == pytest.approx(dpp, rel=1e-12)


@given(st.floats(-0.99, 0.99), gamma_s)
def test_diffusion_derivatives_match_finite_differences(rz, g):
    q = P.with_gamma(g)
    h = 1e-5

    def dzz(x):
        return float(diffusion(BlochState(x, 0.0), q)[0])

    d1, d2, _ = diffusion_derivatives(BlochState(rz, 0.0), q)
    fd1 = (dzz(rz + h) - dzz(rz - h)) / (2 * h)
    fd2 = (dzz(rz + h) - 2 * dzz(rz) + dzz(rz - h)) / h**2
    scale = max(abs(float(d1)), 1.0)
    assert abs(fd1 - d1) <= 1e-6 * scale
    assert abs(fd2 - d2) <= 1e-4 * max(abs(float(d2)), 1.0)


@given(rz_s, phi_s, gamma_s, st.floats(-10, 10))
def test_drift_split_exact_and_invariances(rz, phi, g, c):
    s = BlochState(rz, phi)
    sp = drift_split(s, P.with_gamma(g))
    az, aphi = drift(s, P)
    assert sp.a_irr[0] + sp.a_rev[0] == az
    assert sp.a_irr[1] + sp.a_rev[1] == aphi
    assert sp.a_rev[0] == 0.0 and sp.a_irr[1] == 0.0
    assert drift(s, P.with_gamma(1.0)) == drift(s, P.with_gamma(7.0))
    shifted = BlochState(rz, phi + c)
    assert drift(shifted, P) == drift(s, P)
    assert diffusion(shifted, P.with_gamma(g)) == pytest.approx(diffusion(s, P.with_gamma(g)), rel=1e-15)


def test_drift_3d_examples():
    np.testing.assert_allclose(drift_3d(BlochVector(0.0, 0.0, 0.0), P), [0.0, 0.0, -0.08], atol=1e-15)
    np.testing.assert_allclose(drift_3d(BlochVector(0.0, 0.0, -0.1), P), [0.0, 0.0, 0.0], atol=1e-15)


@given(rz_s, phi_s, gamma_s)
def test_r2_noise_coefficients_vanish_on_sphere(rz, phi, g):
    v = BlochState(rz, phi).to_vector()
    b = noise_matrix_3d(v, P.with_gamma(g))
    np.testing.assert_allclose(2 * v.as_array() @ b, 0.0, atol=1e-12)


def test_r2_ito_drift_on_sphere_is_order_beta_squared():
    # the SDEs drop O(beta^2) terms, so the Ito drift of r^2 at r = 1 is
    # beta^2 lam^2 (1 + rz^2) instead of zero (see the purity check in validation)
    for rz in (-0.7, 0.0, 0.4):
        for g in (1.0, 2.0):
            v = BlochState(rz, 0.9).to_vector()
            q = P.with_gamma(g)
            r = v.as_array()
            b = noise_matrix_3d(v, q)
            ito = 2 * r @ drift_3d(v, q) + (b * b).sum()
            assert ito == pytest.approx(q.be**2 * q.lam2 * (1 + rz**2), rel=1e-10)


def test_stationary_exponents_example():
    a, b, c, d = stationary_exponents(P)
    assert a == pytest.approx(-2.2676e-3, rel=1e-4)
    assert b == pytest.approx(-2.7701e-3, rel=1e-4)
    assert c == pytest.approx(-1.99748, abs=1e-5)
    assert d == pytest.approx(-2.99497, abs=1e-5)


def test_stationary_flat_when_unbiased():
    q = ModelParams(beta=0.1, epsilon=1e-12)
    x = np.linspace(-0.9, 0.9, 7)
    v = stationary_pdf_unnormalized(x, q)
    np.testing.assert_allclose(v / v[0], 1.0, rtol=1e-9)


@pytest.mark.parametrize("g", [1.0, 1.5, 2.0, 3.0])
def test_stationary_first_moment(g):
    assert stationary_moment(P.with_gamma(g), 1) == pytest.approx(-0.1, abs=1e-8)


def test_stationary_normalisations():
    assert stationary_normalization(P) == pytest.approx(0.0319165, rel=1e-5)
    assert stationary_normalization(P.with_gamma(2.0)) == pytest.approx(0.0219783, rel=1e-5)


@given(st.floats(-0.999, 0.999), st.floats(1.0, 3.0))
def test_stationary_pdf_positive(rz, g):
    assert stationary_pdf(rz, P.with_gamma(g)) > 0


def test_gamma_branch_is_continuous():
    x = np.linspace(-0.95, 0.95, 9)
    a = stationary_pdf(x, P.with_gamma(1.0))
    b = stationary_pdf(x, P.with_gamma(1.0 + 2e-6))
    np.testing.assert_allclose(a, b, rtol=1e-4)


def test_higher_gamma_concentrates_at_poles():
    from scipy import integrate

    fr = []
    for g in (1.0, 1.2, 1.5, 2.0):
        q = P.with_gamma(g)
        f = lambda x: float(stationary_pdf(x, q))  # noqa: E731
        fr.append(integrate.quad(f, 0.8, 1, limit=200)[0] + integrate.quad(f, -1, -0.8, limit=200)[0])
    assert all(np.diff(fr) > 0)
