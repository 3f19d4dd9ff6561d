"""Entropy histograms, the detailed fluctuation theorem check, and summaries.

The DFT states ``P_M(s) / P_Mbar(-s) = exp(s)``. It is tested by fitting
``y = ln[P_M(s) / P_Mbar(-s)]`` against ``s`` over bins that are well
sampled in both protocols. Bins are centred on integer multiples of a
common width, so reflecting ``s -> -s`` maps bins onto bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import fokker_planck as fp
from .errors import EmptyOverlapFault, IncompleteBundleFault
from .io import write_csv
from .model import ModelParams, stationary_pdf

N_MIN = 10


@dataclass(frozen=True)
class EntropyHistogram:
    """Counts in bins ``[(k - 1/2) w, (k + 1/2) w)`` for ``k = k0, k0 + 1, ...``."""

    width: float
    k0: int
    counts: np.ndarray

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("bin width must be positive")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def n_total(self) -> int:
        return int(self.counts.sum())

    @property
    def index(self) -> np.ndarray:
        return self.k0 + np.arange(self.counts.size)

    @property
    def centres(self) -> np.ndarray:
        return self.index * self.width

    @property
    def edges(self) -> np.ndarray:
        return (self.k0 - 0.5 + np.arange(self.counts.size + 1)) * self.width

    @property
    def density(self) -> np.ndarray:
        return self.counts / (self.n_total * self.width)

    def count_at(self, k) -> np.ndarray:
        """Counts for bin indices ``k`` (zero outside the stored range)."""
        k = np.asarray(k)
        j = k - self.k0
        ok = (j >= 0) & (j < self.counts.size)
        out = np.zeros(k.shape, dtype=self.counts.dtype)
        out[ok] = self.counts[j[ok]]
        return out

    def rebin(self, factor: int) -> "EntropyHistogram":
        """Merge ``factor`` (odd) neighbouring bins, keeping centres on multiples of the width."""
        if factor < 1 or factor % 2 == 0:
            raise ValueError("merge factor must be a positive odd integer")
        half = factor // 2
        jlo = math.floor((self.k0 + half) / factor)
        jhi = math.floor((self.k0 + self.counts.size - 1 + half) / factor)
        j = np.arange(jlo, jhi + 1)
        merged = np.array([self.count_at(np.arange(m * factor - half, m * factor + half + 1)).sum() for m in j])
        return EntropyHistogram(self.width * factor, int(jlo), merged)


def freedman_diaconis(samples) -> float:
    x = np.asarray(samples, dtype=float)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    if iqr <= 0:
        raise ValueError("interquartile range is zero; pass an explicit width")
    return 2.0 * iqr * x.size ** (-1.0 / 3.0)


def build_histogram(samples, width: Optional[float] = None) -> EntropyHistogram:
    """Histogram with bins centred on multiples of ``width`` (Freedman-Diaconis default)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite and non-empty")
    w = freedman_diaconis(x) if width is None else float(width)
    k = np.floor(x / w + 0.5).astype(np.int64)
    k0 = int(k.min())
    counts = np.bincount(k - k0)
    return EntropyHistogram(w, k0, counts)


def dft_histograms(s_m, s_mbar, width: Optional[float] = None):
    """Both histograms on a common width (Freedman-Diaconis of the pooled samples)."""
    if width is None:
        width = freedman_diaconis(np.concatenate([np.asarray(s_m), np.asarray(s_mbar)]))
    return build_histogram(s_m, width), build_histogram(s_mbar, width)


@dataclass
class DFTResult:
    """Weighted fit of ``ln[P_M(s) / P_Mbar(-s)]`` against ``s``.

    Confidence intervals are 95% t-intervals of the weighted least-squares fit.
    ``table`` rows are ``(s, n_M, n_Mbar(-s), y, var_y, y_lo, y_hi)`` for the
    included bins; ``excluded`` lists the centres of bins present in either
    histogram that failed ``n_min``.
    """

    slope: float
    intercept: float
    slope_se: float
    intercept_se: float
    slope_ci: tuple
    intercept_ci: tuple
    table: np.ndarray
    excluded: np.ndarray
    n_min: int
    width: float

    @property
    def n_bins(self) -> int:
        return self.table.shape[0]


def dft_check(hist_m: EntropyHistogram, hist_mbar: EntropyHistogram, n_min: int = N_MIN) -> DFTResult:
    """Test the detailed fluctuation theorem on two histograms.

    Raises
    ------
    EmptyOverlapFault
        If fewer than two bins have at least ``n_min`` counts in both.
    """
    if not math.isclose(hist_m.width, hist_mbar.width, rel_tol=1e-12):
        raise ValueError("histograms must share a bin width")
    w = hist_m.width
    kmin = min(hist_m.k0, -(hist_mbar.k0 + hist_mbar.counts.size - 1))
    kmax = max(hist_m.k0 + hist_m.counts.size - 1, -hist_mbar.k0)
    k = np.arange(kmin, kmax + 1)
    c_m = hist_m.count_at(k).astype(float)
    c_r = hist_mbar.count_at(-k).astype(float)
    present = (c_m > 0) | (c_r > 0)
    ok = (c_m >= n_min) & (c_r >= n_min)
    if ok.sum() < 2:
        raise EmptyOverlapFault(f"{int(ok.sum())} bins with >= {n_min} counts in both histograms")
    s = k[ok] * w
    y = np.log(c_m[ok] / hist_m.n_total) - np.log(c_r[ok] / hist_mbar.n_total)
    # delta method on the log of two Poisson counts
    var = 1.0 / c_m[ok] + 1.0 / c_r[ok]
    wt = 1.0 / var
    sw, sx, sy = wt.sum(), (wt * s).sum(), (wt * y).sum()
    sxx, sxy = (wt * s * s).sum(), (wt * s * y).sum()
    det = sw * sxx - sx * sx
    slope = (sw * sxy - sx * sy) / det
    intercept = (sxx * sy - sx * sxy) / det
    # known variances: parameter covariance is the inverse weighted normal matrix
    slope_se = math.sqrt(sw / det)
    intercept_se = math.sqrt(sxx / det)
    z = stats.norm.ppf(0.975)
    yerr = z * np.sqrt(var)
    table = np.column_stack([s, c_m[ok], c_r[ok], y, var, y - yerr, y + yerr])
    return DFTResult(
        slope=float(slope),
        intercept=float(intercept),
        slope_se=slope_se,
        intercept_se=intercept_se,
        slope_ci=(slope - z * slope_se, slope + z * slope_se),
        intercept_ci=(intercept - z * intercept_se, intercept + z * intercept_se),
        table=table,
        excluded=k[present & ~ok] * w,
        n_min=n_min,
        width=w,
    )


# ------------------------------------------------------------------ summary


@dataclass
class Summary:
    kind: str
    n_traj: int
    n_committed: int
    faults: list
    t_max: float
    mean_total: float
    sem_total: float
    kl_oracle: float
    kl_z: float
    kl_pass: bool
    boundary_rate: float
    corrected_slope: float
    slope_sem: float
    stationary: bool
    slope_pass: Optional[bool]
    reflections: int
    clamps: int
    floors: int
    flags: list = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [
            f"protocol {self.kind}: n={self.n_committed}/{self.n_traj} faults={len(self.faults)}",
            f"mean Delta s_tot(t={self.t_max:g}) = {self.mean_total:.6g} +- {self.sem_total:.2g}"
            f" vs KL {self.kl_oracle:.6g}: z={self.kl_z:+.2f} {'PASS' if self.kl_pass else 'FAIL'}",
            f"corrected slope = {self.corrected_slope:.3g} +- {self.slope_sem:.2g}"
            + ("" if self.slope_pass is None else f" {'PASS' if self.slope_pass else 'FAIL'}"),
            f"events: reflections={self.reflections} clamps={self.clamps} floors={self.floors}",
        ]
        return out + [f"flag: {f}" for f in self.flags]


def summarize(results, z_max: float = 3.0) -> Summary:
    """Deterministic summary of a protocol results bundle.

    Raises
    ------
    IncompleteBundleFault
        If the ensemble is missing or any per-trajectory entropy is not finite.
    """
    ens = getattr(results, "ensemble", None)
    if ens is None or ens.ds_tot_final is None or results.ledger is None:
        raise IncompleteBundleFault("results bundle lacks an entropy ensemble")
    bad = np.flatnonzero(~np.isfinite(ens.ds_tot_final))
    faulted = {i for i, _ in ens.faults}
    offending = [int(i) for i in bad if int(i) not in faulted]
    if offending or not np.all(np.isfinite(results.ledger.corrected_total)):
        raise IncompleteBundleFault(
            f"non-finite entropy for {len(offending)} trajectories", offending=offending
        )
    run = results.run
    mean = float(results.ledger.corrected_total[-1])
    sem = float(ens.sem_tot[-1])
    kl = float(results.kl_oracle)
    z = (mean - kl) / sem if sem > 0 else (0.0 if mean == kl else math.inf)
    ok_slopes = ens.slopes[np.isfinite(ens.slopes)]
    if ok_slopes.size > 1:
        slope = float(ok_slopes.mean() + results.rate)
        slope_sem = float(ok_slopes.std(ddof=1) / math.sqrt(ok_slopes.size))
    else:
        slope = slope_sem = math.nan
    stationary = run.gamma_init == run.gamma_dyn
    flags = []
    if ens.faults:
        flags.append(f"{len(ens.faults)} trajectories faulted and were excluded")
    if ens.floors.sum():
        flags.append(f"{int(ens.floors.sum())} density floor events")
    return Summary(
        kind=run.kind,
        n_traj=ens.n_traj,
        n_committed=ens.n_committed,
        faults=list(ens.faults),
        t_max=run.t_max,
        mean_total=mean,
        sem_total=sem,
        kl_oracle=kl,
        kl_z=float(z),
        kl_pass=bool(abs(z) <= z_max),
        boundary_rate=float(results.rate),
        corrected_slope=slope,
        slope_sem=slope_sem,
        stationary=stationary,
        slope_pass=bool(abs(slope) <= z_max * slope_sem) if stationary and math.isfinite(slope) else None,
        reflections=int(ens.reflections.sum()),
        clamps=int(ens.clamps.sum()),
        floors=int(ens.floors.sum()),
        flags=flags,
    )


# ------------------------------------------------------------ plot data


def emit_stationary_family(out_dir, params: ModelParams, gammas=(1.0, 1.2, 1.5, 2.0), n: int = 401):
    """``(rz, p_st)`` per coupling on an open grid."""
    rz = np.linspace(-1.0, 1.0, n + 2)[1:-1]
    cols = {"rz": rz}
    for g in gammas:
        cols[f"p_gamma_{g:g}"] = stationary_pdf(rz, params.with_gamma(g))
    return write_csv(Path(out_dir) / "stationary_family.csv", cols, {"beta": params.beta, "epsilon": params.epsilon})


def emit_final_histogram(out_dir, rz_final, params: ModelParams, bins: int = 50):
    """Histogram of final ``rz`` against the stationary density of ``params.gamma``."""
    counts, edges = np.histogram(rz_final, bins=bins, range=(-1.0, 1.0), density=True)
    mids = 0.5 * (edges[1:] + edges[:-1])
    return write_csv(
        Path(out_dir) / "final_rz_histogram.csv",
        {"rz": mids, "density": counts, "p_st": stationary_pdf(mids, params)},
        {"gamma": params.gamma},
    )


def emit_sample_paths(out_dir, trajectories, stride: int = 100):
    cols = {"t": trajectories[0].times[::stride]}
    for i, tr in enumerate(trajectories):
        cols[f"rz_{i}"] = tr.rz[::stride]
    return write_csv(Path(out_dir) / "sample_paths.csv", cols)


def emit_entropy_curves(out_dir, results, single=None, stride: int = 100):
    """Mean total entropy with and without correction, one realisation, KL line."""
    led = results.ledger
    cols = {
        "t": led.times[::stride],
        "mean_ds_tot": led.cum_tot[::stride],
        "mean_ds_tot_corrected": led.corrected_total[::stride],
        "kl_asymptote": np.full(led.times[::stride].shape, results.kl_oracle),
    }
    if single is not None:
        cols["single_ds_tot"] = single.cum_tot[::stride]
    return write_csv(Path(out_dir) / f"entropy_curves_{results.run.kind}.csv", cols,
                     {"boundary_rate": repr(results.rate)})


def emit_dft(out_dir, res: DFTResult):
    t = res.table
    return write_csv(
        Path(out_dir) / "dft.csv",
        {"s": t[:, 0], "count_M": t[:, 1], "count_Mbar_reflected": t[:, 2], "ln_ratio": t[:, 3],
         "var": t[:, 4], "ci_lo": t[:, 5], "ci_hi": t[:, 6], "identity": t[:, 0]},
        {"slope": repr(res.slope), "intercept": repr(res.intercept), "n_min": res.n_min, "width": repr(res.width)},
    )


def emit_dft_densities(out_dir, hist_m: EntropyHistogram, hist_mbar: EntropyHistogram):
    k = np.arange(min(hist_m.k0, -(hist_mbar.k0 + hist_mbar.counts.size - 1)),
                  max(hist_m.k0 + hist_m.counts.size, -hist_mbar.k0 + 1))
    w = hist_m.width
    return write_csv(
        Path(out_dir) / "dft_densities.csv",
        {"s": k * w, "P_M": hist_m.count_at(k) / (hist_m.n_total * w),
         "P_Mbar_reflected": hist_mbar.count_at(-k) / (hist_mbar.n_total * w)},
    )


def l1_histogram_distance(samples, params: ModelParams, bins: int = 50) -> float:
    """L1 distance between a sample histogram on ``[-1, 1]`` and ``p_st`` bin masses."""
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    emp = counts / counts.sum()
    ref = np.array([_bin_mass(edges[i], edges[i + 1], params) for i in range(bins)])
    return float(np.abs(emp - ref / ref.sum()).sum())


def _bin_mass(a, b, params):
    from scipy import integrate

    val, _ = integrate.quad(lambda r: float(stationary_pdf(r, params)), a, b, limit=200, epsrel=1e-10)
    return val


def ks_uniform_phi(phi) -> float:
    """Kolmogorov-Smirnov p-value of azimuths against uniform on ``[0, 2 pi)``."""
    return float(stats.kstest(np.asarray(phi) / (2.0 * np.pi), "uniform").pvalue)


def ks_against_grid(samples, grid: fp.PdfGrid) -> float:
    """KS p-value of samples against the piecewise-linear density of ``grid``."""
    left, right, va, vb, mass = fp._cdf_pieces(grid)
    cdf_knots = np.concatenate([[0.0], np.cumsum(mass)]) / mass.sum()
    knots = np.concatenate([left, [right[-1]]])

    def cdf(x):
        x = np.asarray(x, dtype=float)
        k = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, mass.size - 1)
        s = np.clip(x - left[k], 0.0, right[k] - left[k])
        w = right[k] - left[k]
        part = va[k] * s + 0.5 * (vb[k] - va[k]) / w * s * s
        return cdf_knots[k] + part / mass.sum()

    return float(stats.kstest(np.asarray(samples), cdf).pvalue)
