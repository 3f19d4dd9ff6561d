"""Invariant suite run by ``qsd-entropy validate``, plus purity studies.

Every check returns a :class:`Check`. Sample sizes are reduced relative to
the desk-scale defaults so the whole suite fits a ten-minute budget on one
core; tolerances are the stated ones.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import analysis
from . import fokker_planck as fp
from .entropy import (
    boundary_limit,
    boundary_rate_closed_form,
    env_increment,
    env_increment_rz,
    env_increment_terms,
    kl_divergence_stationary,
)
from .model import (
    BlochState,
    ModelParams,
    diffusion,
    drift,
    drift_3d,
    drift_split,
    drift_z,
    diffusion_zz,
    noise_matrix,
    noise_matrix_3d,
    stationary_moment,
    stationary_pdf,
)
from .protocol import ProtocolRun, execute, initial_sampler
from .rng import trajectory_stream
from .sde import ConstantSchedule, run_ensemble, simulate, simulate_3d


@dataclass
class Check:
    name: str
    module: str
    passed: bool
    detail: str
    seconds: float = 0.0
    key: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} [{self.module}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _rand_states(n, seed, lim=0.999):
    g = np.random.default_rng(seed)
    return BlochState(g.uniform(-lim, lim, n), g.uniform(0.0, 2.0 * np.pi, n)), g


# --------------------------------------------------------------- model


def check_diagonality(p: ModelParams, n=2000, seed=1) -> Check:
    st, _ = _rand_states(n, seed)
    worst = 0.0
    for g in (1.0, 1.5, 2.0, 3.0):
        b = noise_matrix(st, p.with_gamma(g))
        d = 0.5 * np.einsum("...ik,...jk->...ij", b, b)
        worst = max(worst, float(np.abs(d[..., 0, 1]).max()))
    return Check("diagonal diffusion", "model", worst <= 1e-12, f"max |D_zphi| = {worst:.2e}")


def check_drift_split(p: ModelParams, n=2000, seed=2) -> Check:
    st, _ = _rand_states(n, seed)
    sp = drift_split(st, p)
    az, aphi = drift(st, p)
    ok = (np.array_equal(sp.a_irr[0] + sp.a_rev[0], az) and np.array_equal(sp.a_irr[1] + sp.a_rev[1], aphi)
          and not np.any(sp.a_rev[0]) and not np.any(sp.a_irr[1]))
    same_g = all(np.array_equal(drift(st, p.with_gamma(1.0))[i], drift(st, p.with_gamma(7.0))[i]) for i in (0, 1))
    shifted = BlochState(st.rz, st.phi + 1.234)
    phi_free = (np.array_equal(drift(st, p)[0], drift(shifted, p)[0])
                and np.array_equal(diffusion(st, p)[0], diffusion(shifted, p)[0])
                and np.array_equal(diffusion(st, p)[1], diffusion(shifted, p)[1]))
    return Check("drift split, gamma and phi independence", "model", bool(ok and same_g and phi_free),
                 f"split exact={ok}, gamma-free={same_g}, phi-free={phi_free}")


def check_purity_fixed_point(p: ModelParams, n=500, seed=3) -> Check:
    st, _ = _rand_states(n, seed, 0.99)
    w_drift = w_noise = 0.0
    for g in (1.0, 2.0):
        q = p.with_gamma(g)
        v = st.to_vector()
        r = v.as_array()
        a = drift_3d(v, q)
        b = noise_matrix_3d(v, q)
        # Ito: d(r.r) = (2 r.A + tr(B B^T)) dt + 2 r.B dW
        ito = 2.0 * np.einsum("i...,i...->...", r, a) + np.einsum("...ij,...ij->...", b, b)
        noise = 2.0 * np.einsum("...i,...ij->...j", r.T, b)
        w_drift = max(w_drift, float(np.abs(ito).max()))
        w_noise = max(w_noise, float(np.abs(noise).max()))
    return Check("purity fixed point", "model", max(w_drift, w_noise) <= 1e-12,
                 f"max r^2 coefficients at r=1: drift {w_drift:.2e}, noise {w_noise:.2e}")


def check_stationary_flux(p: ModelParams) -> Check:
    worst = 0.0
    x = np.linspace(-0.95, 0.95, 381)
    for g in (1.0, 1.5, 2.0, 3.0):
        q = p.with_gamma(g)
        ps = stationary_pdf(x, q)
        h = 1e-5
        dp = (diffusion_zz(x + h, q) * stationary_pdf(x + h, q)
              - diffusion_zz(x - h, q) * stationary_pdf(x - h, q)) / (2 * h)
        j = drift_z(x, q) * ps - dp
        worst = max(worst, float(np.abs(j).max() / np.abs(drift_z(x, q) * ps).max()))
    return Check("stationary zero flux", "model", worst <= 1e-6, f"max |J|/max|A p| = {worst:.2e}")


def check_stationary_moment(p: ModelParams) -> Check:
    errs = [abs(stationary_moment(p.with_gamma(g), 1) + p.be) for g in (1.0, 1.5, 2.0, 3.0)]
    return Check("stationary first moment", "model", max(errs) <= 1e-8, f"max |<rz> + beta eps| = {max(errs):.2e}")


# ----------------------------------------------------------------- sde


def check_determinism(p: ModelParams, n=600, t=0.2, dt=1e-4) -> Check:
    run = ProtocolRun(kind="M", params=p, n_traj=n, t_max=t, dt=dt, dt_pde=dt, master_seed=5, chunk_size=64)
    a = execute(run)
    b = execute(replace(run, workers=4, chunk_size=64))
    c = execute(replace(run, chunk_size=100))
    fields = ("mean_rz", "sem_rz", "mean_sys", "mean_env", "mean_tot", "sem_tot", "ds_tot_final", "rz_final")
    same_workers = all(np.array_equal(getattr(a.ensemble, f), getattr(b.ensemble, f)) for f in fields)
    # chunking changes the reduction tree, so only per-trajectory data must match bitwise
    same_paths = all(np.array_equal(getattr(a.ensemble, f), getattr(c.ensemble, f)) for f in ("ds_tot_final", "rz_final"))
    return Check("bitwise determinism", "sde", same_workers and same_paths,
                 f"workers 1 vs 4 identical={same_workers}, per-trajectory across chunking={same_paths}")


def bridge_refine(noise: np.ndarray, factor: int, dt: float, rng) -> np.ndarray:
    """Subdivide each increment into ``factor`` increments with the same sum (Brownian bridge)."""
    z = rng.standard_normal((noise.shape[0], factor, 3)) * math.sqrt(dt / factor)
    z += (noise[:, None, :] - z.sum(axis=1, keepdims=True)) / factor
    return z.reshape(-1, 3)


def check_strong_order(p: ModelParams, n_paths=200, t=0.5, dt=2e-3, seed=9) -> Check:
    q = p.with_gamma(1.0)
    rng = np.random.default_rng(seed)
    ends = np.empty((n_paths, 3))
    for i in range(n_paths):
        n = int(round(t / dt))
        w1 = rng.standard_normal((n, 3)) * math.sqrt(dt)
        w2 = bridge_refine(w1, 4, dt, rng)
        w3 = bridge_refine(w2, 4, dt / 4, rng)
        x0 = BlochState(rng.uniform(-0.6, 0.6), rng.uniform(0, 2 * np.pi))
        for j, (w, h) in enumerate(((w1, dt), (w2, dt / 4), (w3, dt / 16))):
            ends[i, j] = simulate(x0, ConstantSchedule(1.0), t, h, q, noise=w).rz[-1]
    e1 = math.sqrt(np.mean((ends[:, 0] - ends[:, 1]) ** 2))
    e2 = math.sqrt(np.mean((ends[:, 1] - ends[:, 2]) ** 2))
    ratio = e1 / e2
    return Check("strong order 1/2", "sde", 1.5 <= ratio <= 2.7,
                 f"RMS ratio for dt -> dt/4: {ratio:.2f} (expect 2)")


def check_boundary_safety_and_phi(p: ModelParams, n=4000, t=0.5, dt=1e-4) -> Check:
    q2 = p.with_gamma(2.0)
    p0 = fp.stationary_grid(q2)
    res = run_ensemble(n, initial_sampler(p0), 2.0, t, dt, 13, params=p, delta_refl=1e-9)
    inside = float(np.abs(res.rz_final).max()) <= 1 - 1e-9
    pval = analysis.ks_uniform_phi(res.phi_final)
    ok = inside and pval > 0.01
    return Check("boundary safety and uniform phi", "sde", ok,
                 f"max|rz|<=1-delta: {inside}, reflections={int(res.reflections.sum())}, KS p(phi)={pval:.3f}")


def purity_deviation(p: ModelParams, dt: float, n_paths: int = 200, t: float = 2.0,
                     gamma: float = 1.0, seed: int = 0) -> float:
    """Ensemble-mean ``|r^2 - 1|`` at ``t`` for unreflected 3-D paths started on the sphere."""
    q = p.with_gamma(gamma)
    dev = np.empty(n_paths)
    for i in range(n_paths):
        s = trajectory_stream(seed, i, 3)
        rz0, phi0 = s.uniform(-0.9, 0.9), s.uniform(0, 2 * np.pi)
        _, r = simulate_3d(BlochState(rz0, phi0).to_vector(), gamma, t, dt, q, s)
        dev[i] = abs(float(r[-1] @ r[-1]) - 1.0)
    return float(dev.mean())


def cylindrical_vs_3d_rms(p: ModelParams, dt: float, n_paths: int = 200, t: float = 1.0,
                          gamma: float = 1.0, seed: int = 0) -> float:
    """RMS over paths and times of ``rz`` from the two integrators driven by the same noise."""
    q = p.with_gamma(gamma)
    acc, cnt = 0.0, 0
    n = int(round(t / dt))
    for i in range(n_paths):
        s = trajectory_stream(seed, i, 3)
        rz0, phi0 = s.uniform(-0.9, 0.9), s.uniform(0, 2 * np.pi)
        w = s.standard_normal((n, 3)) * math.sqrt(dt)
        x0 = BlochState(rz0, phi0)
        _, r = simulate_3d(x0.to_vector(), gamma, t, dt, q, noise=w)
        cyl = simulate(x0, gamma, t, dt, q, noise=w).rz
        acc += float(((r[:, 2] - cyl) ** 2).sum())
        cnt += n + 1
    return math.sqrt(acc / cnt)


def check_purity(p: ModelParams, n_paths=100) -> Check:
    d1 = purity_deviation(p, 1e-4, n_paths)
    d2 = purity_deviation(p, 5e-5, n_paths)
    ratio = d1 / d2
    ok = d1 < 5e-3 and 2 * 0.7 <= ratio <= 2 * 1.3
    return Check("3-D purity drift linear in dt", "sde", ok,
                 f"<|r^2-1|>(t=2) = {d1:.2e} at dt=1e-4, {d2:.2e} at dt=5e-5, ratio {ratio:.2f}")


# ------------------------------------------------------------ fokker_planck


def check_fp_stationarity(p: ModelParams) -> Check:
    worst = 0.0
    for g in (1.0, 2.0):
        q = p.with_gamma(g)
        s = fp.stationary_grid(q)
        s1 = fp.evolve(s, q, 1e-3, 1e-3 if g == 1.0 else 1e-3)
        worst = max(worst, float(np.abs(s1.values / s.values - 1).max()))
    return Check("zero-flux stationarity", "fokker_planck", worst < 1e-8, f"max relative change {worst:.1e}")


def check_fp_convergence(p: ModelParams) -> Check:
    out = []
    for g in (1.0, 2.0):
        q = p.with_gamma(g)
        pt = fp.evolve(fp.uniform_grid(400), q, 10.0, min(1e-3, 0.9 * fp.max_dt(q)))
        out.append(fp.l1_distance(pt, fp.stationary_grid(q, moment_match=False)))
    return Check("convergence from uniform", "fokker_planck", max(out) < 1e-3,
                 f"L1 at t=10: gamma=1 {out[0]:.1e}, gamma=2 {out[1]:.1e}")


def check_fp_moment_and_mass(p: ModelParams, n_steps=200) -> Check:
    q = p.with_gamma(2.0)
    cur = fp.stationary_grid(p.with_gamma(1.0))
    dt = 1e-3
    worst_m, worst_mass = 0.0, 0.0
    m0 = cur.mass
    for k in range(n_steps):
        nxt = fp.evolve(cur, q, cur.t + dt, dt)
        lhs = (fp.mean_rz(nxt) - fp.mean_rz(cur)) / dt
        worst_m = max(worst_m, abs(lhs - fp.mean_drift(nxt, q)))
        worst_mass = max(worst_mass, abs(nxt.mass - m0))
        cur = nxt
    ok = worst_m <= 1e-6 and worst_mass <= 1e-12
    return Check("first-moment law and mass", "fokker_planck", ok,
                 f"max |d<rz>/dt - <A_z>| = {worst_m:.1e}, max mass drift = {worst_mass:.1e}")


def check_fp_refinement(p: ModelParams) -> Check:
    ratios = []
    for g in (2.0, 3.0):
        q = p.with_gamma(g)
        e = [fp.l1_distance(fp.stationary_grid(q, n), fp.stationary_grid(q, n, moment_match=False))
             for n in (400, 800)]
        ratios.append(e[0] / e[1])
    return Check("grid refinement", "fokker_planck", min(ratios) >= 3.0,
                 "L1 ratio N=400 -> 800: " + ", ".join(f"{r:.2f}" for r in ratios))


# ----------------------------------------------------------------- entropy


def check_env_terms(p: ModelParams, n=1000, seed=21) -> Check:
    st, g = _rand_states(n, seed, 0.99)
    worst_phi, worst_cf = 0.0, 0.0
    for i in range(n):
        s = BlochState(float(st.rz[i]), float(st.phi[i]))
        d = (g.normal(0, 0.01), g.normal(0, 0.1))
        zr, zp = env_increment_terms(s, d, 1e-4, p)
        worst_phi = max(worst_phi, abs(zp))
        cf = float(env_increment_rz(s.rz, d[0], 1e-4, p))
        worst_cf = max(worst_cf, abs(env_increment(s, d, 1e-4, p) - cf) / max(1.0, abs(cf)))
    ok = worst_phi == 0.0 and worst_cf <= 1e-12
    return Check("phi-null environment term and closed form", "entropy", ok,
                 f"max |phi part| = {worst_phi:.1e}, generic vs closed form {worst_cf:.1e}")


def check_boundary_consistency(p: ModelParams) -> Check:
    q = p.with_gamma(1.0)
    lim = boundary_limit(q)
    ref = boundary_rate_closed_form(q)
    rel = abs(lim.rate / ref - 1)
    return Check("boundary limit vs closed form at gamma=1", "entropy", rel <= 0.01,
                 f"limit {lim.rate:.7f} vs {ref:.7f} (rel {rel:.2%})")


def check_kl_ordering(p: ModelParams) -> Check:
    a = kl_divergence_stationary(p.with_gamma(1.0), p.with_gamma(2.0))
    b = kl_divergence_stationary(p.with_gamma(2.0), p.with_gamma(1.0))
    return Check("KL ordering Mbar > M", "entropy", b > a, f"KL(1||2)={a:.6f}, KL(2||1)={b:.6f}")


def check_stationary_null(p: ModelParams, n=10_000, dt=1e-4) -> Check:
    run = ProtocolRun(kind="custom", params=p, gamma_init=1.0, gamma_dyn=1.0, n_traj=n,
                      t_max=2.0, dt=dt, dt_pde=dt, master_seed=17)
    s = analysis.summarize(execute(run))
    return Check("stationary null production", "entropy", bool(s.slope_pass),
                 f"corrected slope {s.corrected_slope:.2e} +- {s.slope_sem:.1e} (n={n})")


def check_protocols(p: ModelParams, n=5_000, dt=1e-4) -> Check:
    parts, ok = [], True
    means = {}
    for kind in ("M", "Mbar"):
        r = execute(ProtocolRun(kind=kind, params=p, n_traj=n, dt=dt, dt_pde=dt, master_seed=23))
        s = analysis.summarize(r)
        means[kind] = r
        ok &= s.kl_pass and s.mean_total > 0
        parts.append(f"{kind}: {s.mean_total:.4f}+-{s.sem_total:.4f} vs {s.kl_oracle:.4f}")
        if kind == "M":
            # eigenstate dwelling
            frac = float(np.mean(np.abs(r.ensemble.rz_final) > 0.8))
            q1 = p.with_gamma(1.0)
            from scipy import integrate

            ref = (integrate.quad(lambda x: float(stationary_pdf(x, q1)), 0.8, 1, limit=200)[0]
                   + integrate.quad(lambda x: float(stationary_pdf(x, q1)), -1, -0.8, limit=200)[0])
            ok &= frac > ref
            parts.append(f"dwelling {frac:.3f} > {ref:.3f}")
    return Check("protocol KL asymptotes and second law", "protocol", bool(ok), "; ".join(parts))


def check_initial_law(p: ModelParams, n=100_000) -> Check:
    q = p.with_gamma(1.0)
    p0 = fp.stationary_grid(q)
    samp = initial_sampler(p0)
    rz = np.array([samp(trajectory_stream(31, i, 2))[0] for i in range(n)])
    pv = analysis.ks_against_grid(rz, p0)
    return Check("initial-state law", "protocol", pv > 0.01, f"KS p = {pv:.3f} (n={n})")


def check_protocol_symmetry(p: ModelParams) -> Check:
    m = ProtocolRun.connect(params=p)
    mb = ProtocolRun.disconnect(params=p)
    ok = m.reversed() == mb and mb.reversed() == m
    return Check("protocol symmetry", "protocol", ok, "M.reversed() == Mbar and back")


# ----------------------------------------------------------------- analysis


def check_dft_oracle(n=100_000, seed=41) -> Check:
    rng = np.random.default_rng(seed)
    # g(|s|) = exp(-s^2 / 2 sigma^2) tilted by exp(+-s/2) is a shifted Gaussian
    sig = 1.0
    sm = rng.normal(0.5 * sig**2, sig, n)
    sb = rng.normal(0.5 * sig**2, sig, n)
    hm, hb = analysis.dft_histograms(sm, sb)
    r = analysis.dft_check(hm, hb)
    r3 = analysis.dft_check(hm.rebin(3), hb.rebin(3))
    norm = abs(hm.density.sum() * hm.width - 1)
    same = analysis.dft_check(hm, analysis.EntropyHistogram(hm.width, -(hm.k0 + hm.counts.size - 1), hm.counts[::-1]))
    ok = (abs(r.slope - 1) < 0.02 and r.intercept_ci[0] <= 0 <= r.intercept_ci[1]
          and abs(r3.slope - r.slope) < (r.slope_ci[1] - r.slope_ci[0]) / 2 and norm <= 1e-12
          and abs(same.slope) < 1e-12)
    return Check("DFT synthetic oracle, rebinning, normalisation", "analysis", bool(ok),
                 f"slope {r.slope:.4f}, intercept {r.intercept:.4f}, rebinned slope {r3.slope:.4f}, "
                 f"symmetric slope {same.slope:.1e}")


# ------------------------------------------------------------------- cli


def check_config_roundtrip() -> Check:
    from .config import RunConfig

    c = RunConfig(beta=0.1, dt=1e-4 / 3, n_traj=12345, purity_3d=True)
    c2 = RunConfig.loads(c.dumps())
    return Check("config round-trip", "cli", c2 == c and c2.dumps() == c.dumps(), "parse -> serialize -> parse")


# ------------------------------------------------------------------- suite


def suite(p: ModelParams) -> list[tuple[str, Callable[[], Check]]]:
    return [
        ("diagonality", lambda: check_diagonality(p)),
        ("drift_split", lambda: check_drift_split(p)),
        ("purity_fixed_point", lambda: check_purity_fixed_point(p)),
        ("stationary_flux", lambda: check_stationary_flux(p)),
        ("stationary_moment", lambda: check_stationary_moment(p)),
        ("determinism", lambda: check_determinism(p)),
        ("strong_order", lambda: check_strong_order(p)),
        ("boundary_safety", lambda: check_boundary_safety_and_phi(p)),
        ("purity", lambda: check_purity(p)),
        ("fp_stationarity", lambda: check_fp_stationarity(p)),
        ("fp_convergence", lambda: check_fp_convergence(p)),
        ("fp_moment_mass", lambda: check_fp_moment_and_mass(p)),
        ("fp_refinement", lambda: check_fp_refinement(p)),
        ("env_terms", lambda: check_env_terms(p)),
        ("boundary_consistency", lambda: check_boundary_consistency(p)),
        ("kl_ordering", lambda: check_kl_ordering(p)),
        ("stationary_null", lambda: check_stationary_null(p)),
        ("protocols", lambda: check_protocols(p)),
        ("initial_law", lambda: check_initial_law(p)),
        ("protocol_symmetry", lambda: check_protocol_symmetry(p)),
        ("dft_oracle", lambda: check_dft_oracle()),
        ("config_roundtrip", check_config_roundtrip),
    ]


def run_suite(p: ModelParams | None = None, only=None, log: Callable[[str], None] | None = None) -> list[Check]:
    p = p or ModelParams()
    out = []
    for key, fn in suite(p):
        if only and key not in only:
            continue
        t0 = time.perf_counter()
        try:
            c = fn()
        except Exception as exc:  # a crashing check is a failing check
            c = Check(key, "suite", False, f"{type(exc).__name__}: {exc}")
        c.seconds = time.perf_counter() - t0
        c.key = key
        out.append(c)
        if log:
            log(c.line())
    return out
