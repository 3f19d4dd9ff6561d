import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qsd_entropy import analysis
from qsd_entropy.analysis import EntropyHistogram, build_histogram, dft_check, dft_histograms
from qsd_entropy.errors import EmptyOverlapFault, IncompleteBundleFault
from qsd_entropy.io import read_csv
from qsd_entropy.model import ModelParams
from qsd_entropy.protocol import ProtocolRun, execute

samples = arrays(float, st.integers(5, 400), elements=st.floats(-50, 50))


@given(samples, st.floats(0.01, 5.0))
def test_histogram_normalisation(x, w):
    h = build_histogram(x, w)
    assert h.counts.sum() == h.n_total == x.size
    assert abs(h.density.sum() * h.width - 1.0) <= 1e-12
    assert np.all((x >= h.edges[0]) & (x < h.edges[-1]))
    # bins are centred on multiples of the width
    np.testing.assert_allclose(h.centres / h.width, np.round(h.centres / h.width), atol=1e-9)


@given(samples, st.floats(0.05, 5.0), st.sampled_from([1, 3, 5, 7]))
def test_rebin_preserves_counts_and_alignment(x, w, f):
    h = build_histogram(x, w)
    r = h.rebin(f)
    assert r.n_total == h.n_total and r.width == pytest.approx(f * w)
    direct = build_histogram(x, f * w)
    np.testing.assert_array_equal(r.count_at(direct.index), direct.counts)


def test_rebin_rejects_even_factor():
    with pytest.raises(ValueError):
        build_histogram(np.arange(10.0), 1.0).rebin(2)


def _exact_dft_pair(n, seed, sigma=1.0):
    # P(s) = N(sigma^2/2, sigma) satisfies P(s)/P(-s) = exp(s); both protocols share it
    rng = np.random.default_rng(seed)
    return rng.normal(0.5 * sigma**2, sigma, n), rng.normal(0.5 * sigma**2, sigma, n)


def test_synthetic_oracle_slope_and_intercept():
    a, b = _exact_dft_pair(100_000, 0)
    r = dft_check(*dft_histograms(a, b))
    assert r.slope_ci[0] <= 1.0 <= r.slope_ci[1] or abs(r.slope - 1) < 0.02
    assert r.intercept_ci[0] <= 0.0 <= r.intercept_ci[1]


def test_synthetic_oracle_bias_below_two_percent():
    slopes = [dft_check(*dft_histograms(*_exact_dft_pair(100_000, s))).slope for s in range(10)]
    assert abs(np.mean(slopes) - 1.0) < 0.02


def test_mirror_tilted_pair_gives_zero_slope():
    # P_M ~ e^{s/2} g and P_Mbar ~ e^{-s/2} g are mirror images, so the ratio is identically one
    rng = np.random.default_rng(1)
    a = rng.normal(0.5, 1.0, 100_000)
    b = rng.normal(-0.5, 1.0, 100_000)
    r = dft_check(*dft_histograms(a, b))
    assert abs(r.slope) < 0.05


def test_identical_symmetric_histograms_give_zero_slope():
    counts = np.array([12, 40, 90, 40, 12])
    h = EntropyHistogram(0.5, -2, counts)
    r = dft_check(h, h)
    assert r.slope == pytest.approx(0.0, abs=1e-14) and r.intercept == pytest.approx(0.0, abs=1e-14)


def test_rebinning_invariance_on_synthetic_data():
    a, b = _exact_dft_pair(100_000, 3)
    hm, hb = dft_histograms(a, b)
    r1 = dft_check(hm, hb)
    r3 = dft_check(hm.rebin(3), hb.rebin(3))
    assert abs(r3.slope - r1.slope) < (r1.slope_ci[1] - r1.slope_ci[0]) / 2


def test_bins_below_n_min_are_excluded_and_reported():
    hm = EntropyHistogram(1.0, -2, np.array([3, 50, 100, 50, 20]))
    hb = EntropyHistogram(1.0, -2, np.array([20, 50, 100, 50, 3]))
    r = dft_check(hm, hb, n_min=10)
    # s = -2 pairs n_M = 3 with n_Mbar(2) = 3; s = 2 pairs 20 with 20
    assert set(r.table[:, 0]) == {-1.0, 0.0, 1.0, 2.0}
    assert set(r.excluded) == {-2.0}
    assert np.all(r.table[:, 5] <= r.table[:, 3]) and np.all(r.table[:, 3] <= r.table[:, 6])


def test_empty_overlap_fault():
    hm = EntropyHistogram(1.0, 5, np.array([100, 100]))
    hb = EntropyHistogram(1.0, 5, np.array([100, 100]))
    with pytest.raises(EmptyOverlapFault):
        dft_check(hm, hb)


def test_width_mismatch_rejected():
    with pytest.raises(ValueError):
        dft_check(EntropyHistogram(1.0, 0, np.array([1])), EntropyHistogram(0.5, 0, np.array([1])))


def test_freedman_diaconis():
    x = np.random.default_rng(0).normal(size=1000)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    assert analysis.freedman_diaconis(x) == pytest.approx(2 * iqr / 10)


@pytest.fixture(scope="module")
def small_run():
    return execute(ProtocolRun(kind="M", n_traj=200, t_max=0.5, master_seed=2, slope_window=(0.25, 0.5)))


def test_summarize_is_deterministic(small_run):
    a = analysis.summarize(small_run)
    b = analysis.summarize(small_run)
    assert a == b
    assert a.n_committed == 200 and a.reflections >= 0
    assert a.lines()[0].startswith("protocol M")


def test_summarize_incomplete_bundle(small_run):
    import copy

    broken = copy.deepcopy(small_run)
    broken.ensemble.ds_tot_final[[3, 7]] = np.nan
    with pytest.raises(IncompleteBundleFault) as e:
        analysis.summarize(broken)
    assert e.value.offending == [3, 7]
    broken.ensemble = None
    with pytest.raises(IncompleteBundleFault):
        analysis.summarize(broken)


def test_plot_data_emission(tmp_path, small_run):
    p = ModelParams()
    f = analysis.emit_stationary_family(tmp_path, p)
    d = read_csv(f)
    assert set(d) == {"rz", "p_gamma_1", "p_gamma_1.2", "p_gamma_1.5", "p_gamma_2"}
    f = analysis.emit_final_histogram(tmp_path, small_run.ensemble.rz_final, p.with_gamma(2.0))
    d = read_csv(f)
    assert d["density"].sum() * 2 / 50 == pytest.approx(1.0)
    f = analysis.emit_entropy_curves(tmp_path, small_run)
    d = read_csv(f)
    np.testing.assert_allclose(d["mean_ds_tot_corrected"] - d["mean_ds_tot"], small_run.rate * d["t"], atol=1e-12)
    a, b = _exact_dft_pair(20_000, 0)
    hm, hb = dft_histograms(a, b)
    d = read_csv(analysis.emit_dft(tmp_path, dft_check(hm, hb)))
    np.testing.assert_array_equal(d["identity"], d["s"])
    d = read_csv(analysis.emit_dft_densities(tmp_path, hm, hb))
    assert d["P_M"].sum() * hm.width == pytest.approx(1.0)


def test_l1_histogram_distance_of_exact_quantiles_is_small():
    from qsd_entropy import fokker_planck as fp
    from qsd_entropy.rng import trajectory_stream

    p = ModelParams().with_gamma(2.0)
    x = fp.sample(fp.stationary_grid(p), trajectory_stream(0, 0), 100_000)
    assert analysis.l1_histogram_distance(x, p) < 0.05
