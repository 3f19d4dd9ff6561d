import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qsd_entropy import fokker_planck as fp
from qsd_entropy.errors import IntegrationFault
from qsd_entropy.model import BlochState, BlochVector, ModelParams
from qsd_entropy.protocol import initial_sampler
from qsd_entropy.rng import trajectory_stream
from qsd_entropy.sde import (
    ConstantSchedule,
    NoiseIncrement,
    StepSchedule,
    gamma_per_step,
    n_steps_for,
    reflect,
    run_ensemble,
    simulate,
    simulate_3d,
    step,
    step_3d,
)

P = ModelParams()
LAM = math.sqrt(0.2)


def test_step_drift_only():
    s = step(BlochState(0.0, 0.0), NoiseIncrement(0.0, 0.0, 0.0), 1e-3, P)
    assert s.rz == pytest.approx(-8e-5, abs=1e-16)
    assert s.phi == pytest.approx(2e-3, abs=1e-16)


def test_step_z_noise():
    dt = 1e-3
    s = step(BlochState(0.0, 0.0), NoiseIncrement(0.0, 0.0, math.sqrt(dt)), dt, P)
    assert s.rz == pytest.approx(-8e-5 + 2 * LAM * math.sqrt(dt), abs=1e-15)
    assert s.phi == pytest.approx(2e-3, abs=1e-16)


def test_reflection_rule():
    d = 1e-9
    assert reflect(1.0000004, d) == 2 * (1 - d) - 1.0000004
    assert reflect(-1.0000004, d) == -2 * (1 - d) + 1.0000004
    assert reflect(0.3, d) == 0.3


@given(st.floats(-5, 5))
def test_reflection_lands_inside(x):
    assert abs(reflect(x, 1e-9)) <= 1 - 1e-9


def test_step_wraps_phi():
    s = step(BlochState(0.0, 2 * math.pi - 1e-4), NoiseIncrement(0.0, 0.0, 0.0), 1e-3, P)
    assert 0 <= s.phi < 2 * math.pi and s.phi == pytest.approx(2e-3 - 1e-4, abs=1e-12)


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_step_fault_on_non_finite():
    with pytest.raises(IntegrationFault) as e:
        step(BlochState(0.0, 0.0), NoiseIncrement(math.inf, 0.0, 0.0), 1e-3, P, traj_index=4, step_index=9)
    assert e.value.traj_index == 4 and e.value.step == 9


def test_step_3d_drift_only():
    v = step_3d(BlochVector(0.0, 0.0, 0.0), NoiseIncrement(0.0, 0.0, 0.0), 1e-3, P)
    np.testing.assert_allclose(v.as_array(), [0.0, 0.0, -0.08e-3], atol=1e-18)


def test_step_3d_purity_remainder_bound():
    # "fixed dW" is read as an increment with every component bounded by sqrt(dt)
    rng = np.random.default_rng(0)
    dt = 1e-4
    c_max = 0.0
    for _ in range(10_000):
        rz, phi = rng.uniform(-1, 1), rng.uniform(0, 2 * np.pi)
        v = BlochState(rz, phi).to_vector()
        w = NoiseIncrement(*(rng.uniform(-1, 1, 3) * math.sqrt(dt)))
        out = step_3d(v, w, dt, P.with_gamma(rng.uniform(1, 2)))
        c_max = max(c_max, abs(float(out.r2) - 1) / dt)
    assert c_max <= 10 * P.lam2 * (2 + P.be) ** 2


def test_step_3d_deterministic():
    v = BlochVector(0.1, 0.2, 0.3)
    w = NoiseIncrement(0.01, -0.02, 0.005)
    assert np.array_equal(step_3d(v, w, 1e-3, P).as_array(), step_3d(v, w, 1e-3, P).as_array())


def test_schedules():
    s = StepSchedule(1.0, 2.0, 0.0)
    assert s(0.0) == 2.0 and s(-1e-9) == 1.0
    g = gamma_per_step(s, 4, 0.1)
    assert np.array_equal(g, [2.0, 2.0, 2.0, 2.0])
    g = gamma_per_step(StepSchedule(1.0, 2.0, 0.2), 4, 0.1)
    assert np.array_equal(g, [1.0, 1.0, 2.0, 2.0])
    assert ConstantSchedule(1.5)(3.0) == 1.5


def test_n_steps_and_length():
    assert n_steps_for(2.0, 1e-4) == 20000
    with pytest.raises(ValueError):
        n_steps_for(1.0, 0.3)
    tr = simulate(BlochState(0.1, 0.2), 1.0, 0.01, 1e-3, P, trajectory_stream(0, 0))
    assert len(tr) == 11 and tr.times[-1] == pytest.approx(0.01)


def test_t_max_zero_gives_initial_only():
    tr = simulate(BlochState(0.3, 1.0), 1.0, 0.0, 1e-3, P, trajectory_stream(0, 0))
    assert len(tr) == 1 and tr.rz[0] == 0.3 and tr.phi[0] == 1.0


def test_zero_noise_follows_linear_ode():
    dt = 1e-4
    tr = simulate(BlochState(0.6, 0.0), 2.0, 1.0, dt, P, zero_noise=True)
    exact = -0.1 + 0.7 * np.exp(-4 * 0.2 * tr.times)
    assert np.max(np.abs(tr.rz - exact)) < 10 * dt
    np.testing.assert_allclose(tr.phi, np.mod(2 * tr.times, 2 * np.pi), atol=1e-9)


def test_simulate_matches_step_loop():
    dt = 1e-3
    s = trajectory_stream(3, 0)
    w = s.standard_normal((50, 3)) * math.sqrt(dt)
    tr = simulate(BlochState(0.2, 1.0), 1.5, 0.05, dt, P, noise=w)
    cur = BlochState(0.2, 1.0)
    for k in range(50):
        cur = step(cur, NoiseIncrement(*w[k]), dt, P.with_gamma(1.5))
        assert cur.rz == pytest.approx(tr.rz[k + 1], abs=1e-13)
        assert cur.phi == pytest.approx(tr.phi[k + 1], abs=1e-11)


def test_recorded_states_inside_reflection_band():
    tr = simulate(BlochState(0.99, 0.0), 3.0, 1.0, 1e-3, P, trajectory_stream(1, 2))
    assert np.all(np.abs(tr.rz) <= 1 - 1e-9)
    assert np.all((tr.phi >= 0) & (tr.phi < 2 * np.pi))


def test_constant_gamma_two_dwells_near_poles():
    fr = []
    for i in range(60):
        tr = simulate(BlochState(0.0, 0.0), 2.0, 2.0, 1e-4, P, trajectory_stream(11, i))
        tail = tr.rz[3 * len(tr) // 4:]
        fr.append(np.mean(np.abs(tail) > 0.8))
    assert np.mean(fr) > 0.5


def test_simulate_3d_zero_noise():
    t, r = simulate_3d(BlochVector(0.0, 0.0, 0.0), 1.0, 0.01, 1e-3, P, zero_noise=True)
    assert r.shape == (11, 3)
    assert r[1, 2] == pytest.approx(-0.08e-3, abs=1e-18)


def _sampler(stream):
    return 0.0, 2 * math.pi * stream.random()


def test_ensemble_of_one_reduces_to_simulate():
    res = run_ensemble(1, _sampler, 1.0, 0.05, 1e-3, 9, params=P)
    s = trajectory_stream(9, 0, 0)
    rz0, phi0 = _sampler(s)
    tr = simulate(BlochState(rz0, phi0), 1.0, 0.05, 1e-3, P, s)
    assert np.array_equal(res.mean_rz, tr.rz)
    assert res.rz_final[0] == tr.rz[-1]


def test_ensemble_deterministic_across_workers():
    a = run_ensemble(300, _sampler, 2.0, 0.05, 1e-3, 5, params=P, chunk_size=32)
    b = run_ensemble(300, _sampler, 2.0, 0.05, 1e-3, 5, params=P, chunk_size=32, workers=3)
    assert np.array_equal(a.mean_rz, b.mean_rz) and np.array_equal(a.sem_rz, b.sem_rz)
    assert np.array_equal(a.rz_final, b.rz_final)


def test_ensemble_reports_faults():
    def bad(stream):
        return 2.0, 0.0  # outside the sphere

    res = run_ensemble(3, bad, 1.0, 0.01, 1e-3, 0, params=P)
    assert res.fault_count == 3 and res.n_committed == 0
    assert [i for i, _ in res.faults] == [0, 1, 2]


def test_ensemble_mean_rz_pinned_short():
    p0 = fp.stationary_grid(P.with_gamma(2.0))
    res = run_ensemble(2000, initial_sampler(p0), 2.0, 0.2, 1e-4, 1, params=P)
    z = (res.mean_rz + 0.1) / res.sem_rz
    assert np.max(np.abs(z[1:])) < 4.5
