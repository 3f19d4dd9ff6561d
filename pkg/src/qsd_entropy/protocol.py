"""Measurement connect/disconnect protocols.

Protocol ``M`` attaches the measuring device (``gamma: 1 -> 2``) and
``Mbar`` detaches it (``gamma: 2 -> 1``). In both, initial states are drawn
from the stationary density of ``gamma_init`` with a uniform azimuth, and the
dynamics run at ``gamma_dyn`` for all ``t > 0``.

A run has three stages:

1. a serial Fokker-Planck pre-pass from ``p_st(gamma_init)`` under
   ``gamma_dyn``, emitting snapshots at a fixed cadence;
2. the trajectory ensemble against those immutable snapshots, with
   per-step environmental and system entropy;
3. the stationary boundary rate of ``gamma_dyn``, added to ensemble means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import fokker_planck as fp
from .entropy import (
    EntropyLedger,
    EntropyObserver,
    boundary_correction_rate,
    kl_divergence_stationary,
)
from .model import BlochState, ModelParams
from .rng import STREAM_IDS, trajectory_stream
from .sde import DELTA_REFL, DEFAULT_CHUNK, EnsembleResult, StepSchedule, Trajectory, run_ensemble, simulate

KIND_GAMMAS = {"M": (1.0, 2.0), "Mbar": (2.0, 1.0)}


@dataclass(frozen=True)
class ProtocolRun:
    """Configuration of one protocol ensemble.

    ``params.gamma`` is ignored; the couplings come from ``gamma_init`` and
    ``gamma_dyn``. ``kind`` is ``"M"``, ``"Mbar"`` or ``"custom"``.
    """

    kind: str = "M"
    params: ModelParams = field(default_factory=ModelParams)
    gamma_init: Optional[float] = None
    gamma_dyn: Optional[float] = None
    n_traj: int = 100_000
    t_max: float = 2.0
    dt: float = 1e-4
    dt_pde: float = 1e-4
    n_grid: int = fp.DEFAULT_N
    cadence: float = 0.01
    master_seed: int = 0
    workers: int = 1
    chunk_size: int = DEFAULT_CHUNK
    delta_refl: float = DELTA_REFL
    slope_window: tuple = (0.5, 2.0)

    def __post_init__(self):
        if self.kind not in ("M", "Mbar", "custom"):
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        if self.kind == "custom":
            if self.gamma_init is None or self.gamma_dyn is None:
                raise ValueError("custom protocols need gamma_init and gamma_dyn")
        else:
            gi, gd = KIND_GAMMAS[self.kind]
            if self.gamma_init is None:
                object.__setattr__(self, "gamma_init", gi)
            if self.gamma_dyn is None:
                object.__setattr__(self, "gamma_dyn", gd)
            if (self.gamma_init, self.gamma_dyn) != (gi, gd):
                raise ValueError(f"protocol {self.kind} requires (gamma_init, gamma_dyn) = {(gi, gd)}")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")

    @classmethod
    def connect(cls, **kw) -> "ProtocolRun":
        return cls(kind="M", **kw)

    @classmethod
    def disconnect(cls, **kw) -> "ProtocolRun":
        return cls(kind="Mbar", **kw)

    def reversed(self) -> "ProtocolRun":
        """The time-reversed protocol (couplings swapped)."""
        kind = {"M": "Mbar", "Mbar": "M"}.get(self.kind, "custom")
        return replace(self, kind=kind, gamma_init=self.gamma_dyn, gamma_dyn=self.gamma_init)

    @property
    def params_init(self) -> ModelParams:
        return self.params.with_gamma(self.gamma_init)

    @property
    def params_dyn(self) -> ModelParams:
        return self.params.with_gamma(self.gamma_dyn)

    @property
    def stream_id(self) -> int:
        return STREAM_IDS[self.kind]

    @property
    def schedule(self) -> StepSchedule:
        return StepSchedule(self.gamma_init, self.gamma_dyn, 0.0)


@dataclass
class ProtocolResults:
    run: ProtocolRun
    snapshots: list
    ensemble: EnsembleResult
    rate: float
    ledger: EntropyLedger
    kl_oracle: float

    @property
    def corrected_final(self) -> np.ndarray:
        """Per-trajectory ``Delta s_tot(t_max)`` plus ``rate * t_max``."""
        return self.ensemble.ds_tot_final + self.rate * self.run.t_max

    @property
    def l1_to_target(self) -> np.ndarray:
        """L1 distance of each snapshot to the stationary density of ``gamma_dyn``."""
        target = fp.stationary_grid(self.run.params_dyn, self.run.n_grid)
        return np.array([fp.l1_distance(s, target) for s in self.snapshots])


def initial_sampler(p0: fp.PdfGrid):
    """``stream -> (rz, phi)``: inverse-CDF ``rz`` from ``p0``, then uniform ``phi``."""

    def sampler(stream):
        rz = fp.sample(p0, stream)
        phi = 2.0 * math.pi * stream.random()
        return rz, phi

    return sampler


def prepare(run: ProtocolRun):
    """Fokker-Planck pre-pass; returns ``(p0, snapshots, observer)``."""
    p0 = fp.stationary_grid(run.params_init, run.n_grid)
    snaps = fp.solve_snapshots(p0, run.params_dyn, run.t_max, run.dt_pde, run.cadence)
    rate = boundary_correction_rate(run.params_dyn)
    return p0, snaps, EntropyObserver(snaps, rate)


def execute(run: ProtocolRun) -> ProtocolResults:
    """Run the full protocol: pre-pass, ensemble, boundary correction."""
    kl = kl_divergence_stationary(run.params_init, run.params_dyn)
    p0, snaps, obs = prepare(run)
    ens = run_ensemble(
        run.n_traj,
        initial_sampler(p0),
        run.schedule,
        run.t_max,
        run.dt,
        run.master_seed,
        [obs],
        params=run.params,
        stream_id=run.stream_id,
        workers=run.workers,
        chunk_size=run.chunk_size,
        delta_refl=run.delta_refl,
        slope_window=run.slope_window,
    )
    ledger = EntropyLedger.from_ensemble(ens, obs.rate)
    return ProtocolResults(run, snaps, ens, obs.rate, ledger, kl)


def single_trajectory_report(run: ProtocolRun, traj_index: int, zero_noise: bool = False):
    """Re-integrate trajectory ``traj_index`` exactly as the ensemble did.

    Returns ``(Trajectory, EntropyLedger)``. With ``zero_noise`` the same
    initial state is followed along the deterministic drift instead.
    """
    if not 0 <= traj_index < run.n_traj:
        raise IndexError(f"trajectory index {traj_index} outside [0, {run.n_traj})")
    p0, _, obs = prepare(run)
    stream = trajectory_stream(run.master_seed, traj_index, run.stream_id)
    rz0, phi0 = initial_sampler(p0)(stream)

    traj: Trajectory = simulate(
        BlochState(rz0, phi0),
        run.schedule,
        run.t_max,
        run.dt,
        run.params,
        stream,
        zero_noise=zero_noise,
        delta_refl=run.delta_refl,
        observer=obs,
        traj_index=traj_index,
    )
    return traj, EntropyLedger.from_trajectory(traj, obs.rate)
