"""Euler-Maruyama integration of the qubit SDEs and seeded ensembles.

Two integrators are provided:

* the reduced ``(rz, phi)`` system on the unit sphere, reflected across
  ``+-(1 - delta_refl)`` so that ``1/sqrt(1 - rz^2)`` stays finite;
* the full 3-D coherence-vector system, unreflected, used to check that
  ``|r| = 1`` is preserved.

Ensembles split trajectories into fixed-size chunks, run the chunks on a
thread pool, and combine per-chunk sums with a fixed pairwise tree. The
chunk layout does not depend on the worker count, so aggregates are
bitwise reproducible for any ``workers``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .errors import IntegrationFault
from .model import BlochState, BlochVector, ModelParams, drift, drift_3d, noise_matrix, noise_matrix_3d
from .rng import trajectory_stream, wiener_increments

log = logging.getLogger(__name__)

DELTA_REFL = 1e-9
DEFAULT_CHUNK = 256


# ------------------------------------------------------------------ types


@dataclass(frozen=True)
class NoiseIncrement:
    """Wiener increments ``(dW_x, dW_y, dW_z)`` for one step."""

    dw_x: float
    dw_y: float
    dw_z: float

    @classmethod
    def draw(cls, stream: np.random.Generator, dt: float) -> "NoiseIncrement":
        return cls(*wiener_increments(stream, 1, dt)[0])

    @classmethod
    def zero(cls) -> "NoiseIncrement":
        return cls(0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.dw_x, self.dw_y, self.dw_z], dtype=float)


@dataclass(frozen=True)
class ConstantSchedule:
    gamma: float

    def __call__(self, t):
        return np.full(np.shape(t), float(self.gamma)) if np.ndim(t) else float(self.gamma)


@dataclass(frozen=True)
class StepSchedule:
    """``gamma(t) = before`` for ``t < t_switch`` and ``after`` otherwise.

    The schedule is right-continuous, so with ``t_switch = 0`` every step of
    a run starting at ``t = 0`` already uses ``after``.
    """

    before: float
    after: float
    t_switch: float = 0.0

    def __call__(self, t):
        return np.where(np.asarray(t) < self.t_switch, self.before, self.after) if np.ndim(t) else (
            float(self.before) if t < self.t_switch else float(self.after)
        )


def as_schedule(schedule) -> Callable:
    if callable(schedule):
        return schedule
    return ConstantSchedule(float(schedule))


def gamma_per_step(schedule, n_steps: int, dt: float) -> np.ndarray:
    """Coupling in force on each step, read at the step's start time."""
    t = np.arange(n_steps) * dt
    g = np.asarray(as_schedule(schedule)(t), dtype=float)
    g = np.broadcast_to(g, t.shape).copy()
    if np.any(g < 1.0):
        raise ValueError("schedule must satisfy gamma >= gamma0 = 1")
    return g


def n_steps_for(t_max: float, dt: float) -> int:
    """Number of steps; ``t_max`` must be a multiple of ``dt`` to within rounding."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    n = int(round(t_max / dt))
    if abs(n * dt - t_max) > 4.0 * np.spacing(max(abs(t_max), n * dt, dt)):
        raise ValueError(f"t_max={t_max!r} is not a multiple of dt={dt!r}")
    return n


@dataclass
class Trajectory:
    """One integrated path on the uniform time grid.

    ``ds_sys`` and ``ds_env`` hold cumulative entropies when an entropy
    observer was attached, otherwise they are ``None``.
    """

    times: np.ndarray
    rz: np.ndarray
    phi: np.ndarray
    ds_sys: Optional[np.ndarray] = None
    ds_env: Optional[np.ndarray] = None
    reflections: int = 0
    clamps: int = 0
    floors: int = 0

    def __len__(self):
        return self.times.shape[0]

    @property
    def states(self) -> BlochState:
        return BlochState(self.rz, self.phi)

    @property
    def ds_tot(self) -> Optional[np.ndarray]:
        if self.ds_sys is None:
            return None
        return self.ds_sys + self.ds_env


# ----------------------------------------------------------------- stepping


def reflect(x: float, delta_refl: float = DELTA_REFL) -> float:
    """Mirror ``x`` into ``[-(1-delta), 1-delta]``."""
    return float(K.reflect(float(x), 1.0 - delta_refl)[0])


def step(
    state: BlochState,
    noise: NoiseIncrement,
    dt: float,
    params: ModelParams,
    delta_refl: float = DELTA_REFL,
    traj_index: int = -1,
    step_index: int = -1,
) -> BlochState:
    """One Euler-Maruyama step of the reduced system."""
    if abs(state.rz) > 1.0 - delta_refl:
        raise ValueError("state must satisfy |rz| <= 1 - delta_refl")
    a_z, a_phi = drift(state, params)
    b = noise_matrix(state, params)
    dw = noise.as_array()
    rz = state.rz + a_z * dt + float(b[0] @ dw)
    phi = state.phi + a_phi * dt + float(b[1] @ dw)
    if not (math.isfinite(rz) and math.isfinite(phi)):
        raise IntegrationFault("non-finite state", traj_index, step_index)
    rz = reflect(rz, delta_refl)
    if not math.isfinite(rz):
        raise IntegrationFault("reflection failed", traj_index, step_index)
    return BlochState(rz, phi)


def step_3d(vec: BlochVector, noise: NoiseIncrement, dt: float, params: ModelParams,
            traj_index: int = -1, step_index: int = -1) -> BlochVector:
    """One unreflected Euler-Maruyama step of the 3-D system."""
    r = vec.as_array()
    new = r + drift_3d(vec, params) * dt + noise_matrix_3d(vec, params) @ noise.as_array()
    if not np.all(np.isfinite(new)):
        raise IntegrationFault("non-finite state", traj_index, step_index)
    return BlochVector(*new)


def _noise_block(stream, noise, zero_noise, n, dt):
    if zero_noise:
        return np.zeros((n, 3))
    if noise is not None:
        noise = np.ascontiguousarray(noise, dtype=float)
        if noise.shape != (n, 3):
            raise ValueError(f"noise must have shape {(n, 3)}, got {noise.shape}")
        return noise
    if stream is None:
        raise ValueError("a stream, explicit noise, or zero_noise is required")
    return wiener_increments(stream, n, dt)


def simulate(
    initial: BlochState,
    schedule,
    t_max: float,
    dt: float,
    params: ModelParams,
    stream: Optional[np.random.Generator] = None,
    *,
    noise: Optional[np.ndarray] = None,
    zero_noise: bool = False,
    delta_refl: float = DELTA_REFL,
    observer=None,
    traj_index: int = -1,
) -> Trajectory:
    """Integrate one reduced trajectory.

    Parameters
    ----------
    initial
        Starting point; must satisfy ``|rz| <= 1 - delta_refl``.
    schedule
        ``gamma(t)`` callable or a constant.
    stream
        Generator supplying the Wiener increments. Ignored when ``noise``
        is given or ``zero_noise`` is set.
    noise
        Explicit ``(n_steps, 3)`` increments, e.g. for refinement studies.
    observer
        Optional fused entropy observer (see :class:`entropy.EntropyObserver`).
    """
    n = n_steps_for(t_max, dt)
    rz0, phi0 = float(initial.rz), float(initial.phi)
    if abs(rz0) > 1.0 - delta_refl:
        raise ValueError("initial |rz| exceeds 1 - delta_refl")
    dw = _noise_block(stream, noise, zero_noise, n, dt)
    gam = gamma_per_step(schedule, n, dt)
    bufs = [np.empty(n + 1) for _ in range(4)]
    counters = np.zeros(K.N_COUNTERS, dtype=np.int64)
    with_entropy, snaps, x0, hx, tau, floor = _observer_args(observer)
    fault = K.reduced_path(
        rz0, phi0, dw, dt, params.be, params.lam, params.epsilon, gam, delta_refl,
        with_entropy, snaps, x0, hx, tau, floor, *bufs, counters,
    )
    if fault >= 0:
        raise IntegrationFault(f"non-finite value at step {fault}", traj_index, int(fault))
    rz, phi, s_sys, s_env = bufs
    return Trajectory(
        times=np.arange(n + 1) * dt,
        rz=rz,
        phi=phi,
        ds_sys=s_sys if with_entropy else None,
        ds_env=s_env if with_entropy else None,
        reflections=int(counters[K.C_REFLECT]),
        clamps=int(counters[K.C_CLAMP]),
        floors=int(counters[K.C_FLOOR]),
    )


def simulate_3d(
    initial: BlochVector,
    schedule,
    t_max: float,
    dt: float,
    params: ModelParams,
    stream: Optional[np.random.Generator] = None,
    *,
    noise: Optional[np.ndarray] = None,
    zero_noise: bool = False,
    traj_index: int = -1,
):
    """Integrate the 3-D system; returns ``(times, r)`` with ``r`` of shape ``(n+1, 3)``."""
    n = n_steps_for(t_max, dt)
    dw = _noise_block(stream, noise, zero_noise, n, dt)
    gam = gamma_per_step(schedule, n, dt)
    out = np.empty((n + 1, 3))
    fault = K.path_3d(initial.as_array(), dw, dt, params.be, params.lam, params.epsilon, gam, out)
    if fault >= 0:
        raise IntegrationFault(f"non-finite value at step {fault}", traj_index, int(fault))
    return np.arange(n + 1) * dt, out


_EMPTY_SNAPS = np.zeros((1, 2))


def _observer_args(observer):
    if observer is None:
        return False, _EMPTY_SNAPS, 0.0, 1.0, 0.0, 1e-300
    snaps, x0, hx, tau, floor = observer.kernel_args()
    return True, snaps, x0, hx, tau, floor


# ----------------------------------------------------------------- ensembles


@dataclass
class EnsembleResult:
    """Per-time ensemble statistics plus per-trajectory summaries.

    Entropy rows are cumulative means from ``t = 0``; ``mean_dtot`` is the
    per-step increment mean. Entropy arrays are ``None`` without an entropy
    observer. ``faults`` lists ``(trajectory index, step)`` pairs that were
    excluded from every aggregate.
    """

    times: np.ndarray
    n_traj: int
    n_committed: int
    mean_rz: np.ndarray
    sem_rz: np.ndarray
    rz0: np.ndarray
    phi0: np.ndarray
    rz_final: np.ndarray
    phi_final: np.ndarray
    reflections: np.ndarray
    clamps: np.ndarray
    floors: np.ndarray
    faults: list = field(default_factory=list)
    mean_sys: Optional[np.ndarray] = None
    mean_env: Optional[np.ndarray] = None
    mean_tot: Optional[np.ndarray] = None
    sem_tot: Optional[np.ndarray] = None
    mean_dtot: Optional[np.ndarray] = None
    sem_dtot: Optional[np.ndarray] = None
    ds_tot_final: Optional[np.ndarray] = None
    slopes: Optional[np.ndarray] = None
    slope_window: tuple = (0.0, 0.0)
    observer_means: dict = field(default_factory=dict)
    observer_sems: dict = field(default_factory=dict)

    @property
    def fault_count(self) -> int:
        return len(self.faults)


@dataclass
class _Chunk:
    acc: np.ndarray
    obs: dict
    n_ok: int
    per_traj: np.ndarray  # (n, 9) rows
    faults: list


def _window_weights(times, window):
    lo, hi = window
    sel = (times >= lo - 1e-12) & (times <= hi + 1e-12)
    if sel.sum() < 2:
        # slopes are undefined on a window with fewer than two grid times
        return np.full_like(times, np.nan)
    w = np.zeros_like(times)
    tc = times[sel] - times[sel].mean()
    w[sel] = tc / np.dot(tc, tc)
    return w


def _run_chunk(i0, i1, cfg) -> _Chunk:
    n = cfg["n"]
    dt = cfg["dt"]
    params = cfg["params"]
    fused = cfg["fused"]
    generic = cfg["generic"]
    with_entropy, snaps, x0, hx, tau, floor = _observer_args(fused)
    acc = np.zeros((K.N_ACC, n + 1))
    obs = {name: np.zeros((2, n + 1)) for name, _ in generic}
    rows = np.full((i1 - i0, 9), np.nan)
    bufs = [np.empty(n + 1) for _ in range(4)]
    faults = []
    n_ok = 0
    for j, idx in enumerate(range(i0, i1)):
        stream = trajectory_stream(cfg["seed"], idx, cfg["stream_id"])
        rz0, phi0 = cfg["sampler"](stream)
        dw = wiener_increments(stream, n, dt)
        counters = np.zeros(K.N_COUNTERS, dtype=np.int64)
        fault = K.reduced_path(
            float(rz0), float(phi0), dw, dt, params.be, params.lam, params.epsilon,
            cfg["gam"], cfg["dref"], with_entropy, snaps, x0, hx, tau, floor, *bufs, counters,
        )
        rz, phi, s_sys, s_env = bufs
        rows[j, 0:2] = rz0, phi0
        rows[j, 5:8] = counters
        if fault >= 0:
            faults.append((idx, int(fault)))
            continue
        K.accumulate(acc, rz, s_sys, s_env)
        rows[j, 2:4] = rz[n], phi[n]
        if with_entropy:
            rows[j, 4] = s_sys[n] + s_env[n]
            rows[j, 8] = np.dot(cfg["weights"], s_sys + s_env)
        if generic:
            traj = Trajectory(
                times=cfg["times"], rz=rz.copy(), phi=phi.copy(),
                ds_sys=s_sys.copy() if with_entropy else None,
                ds_env=s_env.copy() if with_entropy else None,
                reflections=int(counters[K.C_REFLECT]),
            )
            for name, fn in generic:
                v = np.asarray(fn(traj), dtype=float)
                obs[name][0] += v
                obs[name][1] += v * v
        n_ok += 1
    return _Chunk(acc, obs, n_ok, rows, faults)


def _merge(a: _Chunk, b: _Chunk) -> _Chunk:
    return _Chunk(
        a.acc + b.acc,
        {k: a.obs[k] + b.obs[k] for k in a.obs},
        a.n_ok + b.n_ok,
        np.concatenate([a.per_traj, b.per_traj]),
        a.faults + b.faults,
    )


def tree_reduce(items: Sequence, merge: Callable):
    """Pairwise reduction in a fixed order: ((0,1),(2,3)),... ."""
    items = list(items)
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        nxt = [merge(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def _mean_sem(s1, s2, n):
    if n == 0:
        nan = np.full_like(s1, np.nan)
        return nan, nan
    m = s1 / n
    if n < 2:
        return m, np.full_like(m, np.nan)
    var = np.maximum(s2 / n - m * m, 0.0) * n / (n - 1)
    return m, np.sqrt(var / n)


def run_ensemble(
    n_traj: int,
    sampler: Callable[[np.random.Generator], tuple],
    schedule,
    t_max: float,
    dt: float,
    master_seed: int,
    observers: Sequence = (),
    *,
    params: ModelParams,
    stream_id: int = 0,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
    delta_refl: float = DELTA_REFL,
    slope_window: tuple = (0.5, 2.0),
) -> EnsembleResult:
    """Run ``n_traj`` independent reduced trajectories.

    Parameters
    ----------
    sampler
        ``sampler(stream) -> (rz0, phi0)``; called first on each
        trajectory's stream, before the Wiener increments are drawn.
    observers
        At most one fused observer exposing ``kernel_args()`` (the entropy
        ledger), plus any callables ``f(Trajectory) -> array(n_steps+1)``
        whose per-time means and SEMs are reported under ``f.__name__``.
    slope_window
        Time window for the per-trajectory least-squares slope of the
        cumulative total entropy.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    n = n_steps_for(t_max, dt)
    times = np.arange(n + 1) * dt
    fused = [o for o in observers if hasattr(o, "kernel_args")]
    if len(fused) > 1:
        raise ValueError("at most one fused observer is supported")
    generic = [(getattr(o, "__name__", f"observer{i}"), o) for i, o in enumerate(observers)
               if not hasattr(o, "kernel_args")]
    window = (max(slope_window[0], 0.0), min(slope_window[1], t_max))
    cfg = dict(
        n=n, dt=dt, params=params, fused=fused[0] if fused else None, generic=generic,
        seed=int(master_seed), stream_id=int(stream_id), sampler=sampler,
        gam=gamma_per_step(schedule, n, dt), dref=float(delta_refl), times=times,
        weights=_window_weights(times, window),
    )
    bounds = [(i, min(i + chunk_size, n_traj)) for i in range(0, n_traj, chunk_size)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda b: _run_chunk(b[0], b[1], cfg), bounds))
    else:
        chunks = [_run_chunk(i0, i1, cfg) for i0, i1 in bounds]
    total = tree_reduce(chunks, _merge)
    if total.faults:
        log.warning("%d of %d trajectories faulted and were excluded", len(total.faults), n_traj)
    m = total.n_ok
    acc = total.acc
    mean_rz, sem_rz = _mean_sem(acc[K.A_RZ], acc[K.A_RZ2], m)
    rows = total.per_traj
    res = EnsembleResult(
        times=times, n_traj=n_traj, n_committed=m, mean_rz=mean_rz, sem_rz=sem_rz,
        rz0=rows[:, 0], phi0=rows[:, 1], rz_final=rows[:, 2], phi_final=rows[:, 3],
        reflections=rows[:, 5].astype(np.int64), clamps=rows[:, 6].astype(np.int64),
        floors=rows[:, 7].astype(np.int64), faults=total.faults, slope_window=window,
    )
    if fused:
        res.mean_sys = acc[K.A_SYS] / max(m, 1)
        res.mean_env = acc[K.A_ENV] / max(m, 1)
        res.mean_tot, res.sem_tot = _mean_sem(acc[K.A_TOT], acc[K.A_TOT2], m)
        res.mean_dtot, res.sem_dtot = _mean_sem(acc[K.A_DTOT], acc[K.A_DTOT2], m)
        res.ds_tot_final = rows[:, 4]
        res.slopes = rows[:, 8]
    for name, a in total.obs.items():
        res.observer_means[name], res.observer_sems[name] = _mean_sem(a[0], a[1], m)
    return res
