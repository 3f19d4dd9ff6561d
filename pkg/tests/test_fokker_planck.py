import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from qsd_entropy import fokker_planck as fp
from qsd_entropy.errors import ExtrapolationError, NormalizationFault, StepSizeFault
from qsd_entropy.model import ModelParams, drift_z
from qsd_entropy.rng import trajectory_stream

P = ModelParams()


def test_cell_centres_span():
    x = fp.cell_centres(400)
    assert x[0] == pytest.approx(-1 + 1 / 400) and x[-1] == pytest.approx(1 - 1 / 400)
    assert fp.uniform_grid(400).mass == pytest.approx(1.0, abs=1e-14)


def test_grid_rejects_negative_values():
    with pytest.raises(ValueError):
        fp.PdfGrid(np.array([0.0, 0.1]), np.array([0.1, -0.1]))


@pytest.mark.parametrize("g", [1.0, 2.0])
def test_stationary_grid_is_steady(g):
    q = P.with_gamma(g)
    s = fp.stationary_grid(q)
    one = fp.evolve(s, q, 1e-3, 1e-3)
    assert np.max(np.abs(one.values / s.values - 1)) < 1e-8
    later = fp.evolve(s, q, 1.0, min(1e-3, 0.9 * fp.max_dt(q)))
    assert fp.l1_distance(later, s) < 1e-4


@pytest.mark.parametrize("g", [1.0, 2.0])
def test_uniform_converges_to_analytic(g):
    q = P.with_gamma(g)
    pt = fp.evolve(fp.uniform_grid(400), q, 10.0, min(1e-3, 0.9 * fp.max_dt(q)))
    assert fp.l1_distance(pt, fp.stationary_grid(q, moment_match=False)) < 1e-3


def test_mass_conserved_over_many_steps():
    q = P.with_gamma(2.0)
    p = fp.evolve(fp.uniform_grid(400), q, 1.0, 1e-4)  # 10^4 steps
    assert p.mass == pytest.approx(1.0, abs=1e-8)
    assert np.all(p.values >= 0)


def test_first_moment_law_every_step():
    q = P.with_gamma(2.0)
    cur = fp.stationary_grid(P)
    for _ in range(100):
        nxt = fp.evolve(cur, q, cur.t + 1e-3, 1e-3)
        rate = (fp.mean_rz(nxt) - fp.mean_rz(cur)) / 1e-3
        assert rate == pytest.approx(fp.mean_drift(nxt, q), abs=1e-6)
        cur = nxt


@pytest.mark.parametrize("g", [2.0, 3.0])
def test_refinement_order(g):
    q = P.with_gamma(g)
    e = [fp.l1_distance(fp.stationary_grid(q, n), fp.stationary_grid(q, n, moment_match=False)) for n in (400, 800)]
    assert e[0] / e[1] >= 3.0


def test_flux_zero_at_walls_and_steady():
    q = P.with_gamma(2.0)
    f = fp.flux(fp.stationary_grid(q), q)
    assert f.J[0] == 0.0 and f.J[-1] == 0.0
    assert np.max(np.abs(f.J)) < 1e-12


def test_step_size_fault_suggests_dt():
    q = P.with_gamma(3.0)
    with pytest.raises(StepSizeFault) as e:
        fp.evolve(fp.uniform_grid(400), q, 0.1, 0.01)
    assert e.value.suggested_dt < fp.max_dt(q)
    fp.evolve(fp.uniform_grid(400), q, 0.01, e.value.suggested_dt)


def test_gamma_ordering_of_edge_mass():
    mass = []
    for g in (1.0, 1.2, 1.5, 2.0):
        s = fp.stationary_grid(P.with_gamma(g))
        mass.append(s.h * s.values[np.abs(s.nodes) > 0.8].sum())
    assert all(np.diff(mass) > 0)
    s2 = fp.stationary_grid(P.with_gamma(2.0))
    assert s2.values[0] > s2.values[-1]  # tilted toward rz = -1


def test_log_pdf_interpolation_examples():
    p = fp.PdfGrid(np.array([0.0, 0.1]), np.array([0.4, 0.6]))
    v, nf = fp.log_pdf_at(p, 0.05)
    assert v == pytest.approx(math.log(0.5), abs=1e-15) and nf == 0
    assert fp.log_pdf_at(p, 0.1)[0] == math.log(0.6)
    q = fp.PdfGrid(np.array([0.0, 0.1]), np.array([0.0, 0.6]))
    v, nf = fp.log_pdf_at(q, 0.0)
    assert v == math.log(fp.P_FLOOR) and nf == 1
    with pytest.raises(ExtrapolationError):
        fp.log_pdf_at(p, 0.2)
    assert fp.log_pdf_at(p, 0.2, clamp=True)[0] == math.log(0.6)


@given(arrays(float, 20, elements=st.floats(0.0, 10.0)))
def test_normalize(values):
    p = fp.PdfGrid(fp.cell_centres(20), values)
    if values.sum() == 0:
        with pytest.raises(NormalizationFault):
            fp.normalize(p)
    else:
        assert fp.normalize(p).mass == pytest.approx(1.0, rel=1e-12)


def test_sample_uniform_passes_ks():
    x = fp.sample(fp.uniform_grid(400), trajectory_stream(0, 0), 100_000)
    assert stats.kstest(x, "uniform", args=(-1, 2)).pvalue > 0.01


def test_sample_single_cell_spike():
    v = np.zeros(50)
    v[17] = 25.0
    p = fp.PdfGrid(fp.cell_centres(50), v)
    x = fp.sample(p, trajectory_stream(0, 1), 10_000)
    h = p.h
    assert np.all(np.abs(x - p.nodes[17]) <= h)


def test_sample_consumes_one_uniform_per_draw():
    a = trajectory_stream(4, 0)
    fp.sample(fp.uniform_grid(), a, 5)
    b = trajectory_stream(4, 0)
    b.random(5)
    assert a.random() == b.random()


def test_stationary_sample_mean():
    n = 1_000_000
    x = fp.sample(fp.stationary_grid(P.with_gamma(2.0)), trajectory_stream(0, 2), n)
    assert abs(x.mean() + 0.1) < 4 * x.std(ddof=1) / math.sqrt(n)


def test_mean_drift_uses_model_drift():
    p = fp.uniform_grid(100)
    assert fp.mean_drift(p, P) == pytest.approx(p.h * np.dot(drift_z(p.nodes, P), p.values))


def test_snapshots_cadence():
    snaps = fp.solve_snapshots(fp.stationary_grid(P), P.with_gamma(2.0), 0.05, 1e-3, 0.01)
    assert [round(s.t, 12) for s in snaps] == [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]
    with pytest.raises(ValueError):
        fp.solve_snapshots(fp.stationary_grid(P), P, 0.055, 1e-3, 0.01)
