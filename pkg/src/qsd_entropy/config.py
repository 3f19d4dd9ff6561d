"""Run configuration in INI form.

All quantities are in natural units (hbar = k_B = 1). Floats are written
with ``repr`` so that parse -> serialize -> parse is a fixed point.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .model import ModelParams
from .protocol import KIND_GAMMAS, ProtocolRun

# field -> section; the order here is the order written
SECTIONS = {
    "beta": "model", "epsilon": "model", "alpha": "model", "gamma0": "model",
    "kind": "protocol", "gamma_init": "protocol", "gamma_dyn": "protocol",
    "n_traj": "protocol", "t_max": "protocol", "dt": "protocol", "master_seed": "protocol",
    "dt_pde": "fokker_planck", "n_grid": "fokker_planck", "cadence": "fokker_planck",
    "out_dir": "run", "workers": "run", "chunk_size": "run", "delta_refl": "run",
    "purity_3d": "run", "dump_raw": "run", "dump_stride": "run",
}


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run; defaults are the desk-scale values."""

    beta: float = 0.1
    epsilon: float = 1.0
    alpha: float = 0.01
    gamma0: float = 1.0
    kind: str = "M"
    gamma_init: Optional[float] = None
    gamma_dyn: Optional[float] = None
    n_traj: int = 100_000
    t_max: float = 2.0
    dt: float = 1e-4
    master_seed: int = 0
    dt_pde: float = 1e-4
    n_grid: int = 400
    cadence: float = 0.01
    out_dir: str = "results"
    workers: int = 1
    chunk_size: int = 256
    delta_refl: float = 1e-9
    purity_3d: bool = False
    dump_raw: bool = False
    dump_stride: int = 100

    def __post_init__(self):
        if self.kind in KIND_GAMMAS:
            gi, gd = KIND_GAMMAS[self.kind]
            if self.gamma_init is None:
                object.__setattr__(self, "gamma_init", gi)
            if self.gamma_dyn is None:
                object.__setattr__(self, "gamma_dyn", gd)

    # ---------------------------------------------------------- validation

    def violations(self) -> list[str]:
        """Every rule the configuration breaks (empty when valid)."""
        v = []

        def pos(name):
            x = getattr(self, name)
            if not (isinstance(x, (int, float)) and math.isfinite(x) and x > 0):
                v.append(f"{name} must be a positive finite number, got {x!r}")

        for name in ("beta", "epsilon", "alpha", "t_max", "dt", "dt_pde", "cadence", "delta_refl"):
            pos(name)
        for name in ("n_traj", "workers", "chunk_size", "dump_stride"):
            if getattr(self, name) < 1:
                v.append(f"{name} must be >= 1, got {getattr(self, name)!r}")
        if self.n_grid < 4:
            v.append(f"n_grid must be >= 4, got {self.n_grid!r}")
        if self.master_seed < 0:
            v.append(f"master_seed must be non-negative, got {self.master_seed!r}")
        if self.gamma0 != 1.0:
            v.append(f"gamma0 must be 1, got {self.gamma0!r}")
        if self.kind not in ("M", "Mbar", "custom"):
            v.append(f"kind must be one of M, Mbar, custom, got {self.kind!r}")
        elif self.kind == "custom":
            if self.gamma_init is None or self.gamma_dyn is None:
                v.append("custom protocols need gamma_init and gamma_dyn")
        elif (self.gamma_init, self.gamma_dyn) != KIND_GAMMAS[self.kind]:
            v.append(f"protocol {self.kind} requires (gamma_init, gamma_dyn) = {KIND_GAMMAS[self.kind]}")
        for name in ("gamma_init", "gamma_dyn"):
            g = getattr(self, name)
            if g is not None and not (math.isfinite(g) and g >= 1.0):
                v.append(f"{name} must be >= 1, got {g!r}")
        if self.delta_refl >= 0.5:
            v.append(f"delta_refl must be < 0.5, got {self.delta_refl!r}")
        if self.dt > 0 and self.t_max > 0 and self.cadence > 0:
            if self.cadence < self.dt_pde:
                v.append("cadence must not be shorter than dt_pde")
        return v

    def validate(self) -> "RunConfig":
        v = self.violations()
        if v:
            raise ConfigError(v)
        return self

    # ---------------------------------------------------------- conversion

    @property
    def params(self) -> ModelParams:
        return ModelParams(beta=self.beta, epsilon=self.epsilon, alpha=self.alpha,
                           gamma=1.0, gamma0=self.gamma0)

    def protocol_run(self) -> ProtocolRun:
        return ProtocolRun(
            kind=self.kind, params=self.params, gamma_init=self.gamma_init, gamma_dyn=self.gamma_dyn,
            n_traj=self.n_traj, t_max=self.t_max, dt=self.dt, dt_pde=self.dt_pde, n_grid=self.n_grid,
            cadence=self.cadence, master_seed=self.master_seed, workers=self.workers,
            chunk_size=self.chunk_size, delta_refl=self.delta_refl,
        )

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    # ---------------------------------------------------------- INI

    def to_parser(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser(interpolation=None)
        for f in fields(self):
            sec = SECTIONS[f.name]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, f.name, _fmt(getattr(self, f.name)))
        return cp

    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write("# units: hbar = k_B = 1; time in units of 1/epsilon\n")
        self.to_parser().write(buf)
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        """Parse INI text; unknown sections are ignored, unknown keys and bad values are errors."""
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError([f"unparseable config: {exc}"]) from exc
        known = {f.name: f for f in fields(cls)}
        kw, errs = {}, []
        for sec in set(SECTIONS.values()):
            if not cp.has_section(sec):
                continue
            for key, raw in cp.items(sec):
                if key not in known or SECTIONS[key] != sec:
                    errs.append(f"unknown key [{sec}] {key}")
                    continue
                try:
                    kw[key] = _parse(known[key].type, raw)
                except ValueError as exc:
                    errs.append(f"[{sec}] {key}: {exc}")
        if errs:
            raise ConfigError(errs)
        cfg = cls(**kw)
        return cfg.validate()

    @classmethod
    def read(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError([f"cannot read {path}: {exc}"]) from exc
        return cls.loads(text)


def _fmt(x) -> str:
    if x is None:
        return "none"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _parse(typ, raw: str):
    raw = raw.strip()
    t = str(typ)
    if "Optional" in t or "None" in t:
        if raw.lower() == "none":
            return None
        return float(raw)
    if t in ("bool", "<class 'bool'>"):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if t in ("int", "<class 'int'>"):
        try:
            return int(raw)
        except ValueError:
            f = float(raw)
            if f != int(f):
                raise ValueError(f"not an integer: {raw!r}") from None
            return int(f)
    if t in ("float", "<class 'float'>"):
        return float(raw)
    return raw
