"""Command-line entry point: ``qsd-entropy {stationary,run,dft,validate}``.

Exit codes: 0 success, 2 configuration error, 3 numerical fault,
4 failed validation. Failures print a JSON error report on stderr and, when
the output directory is writable, into ``error.json`` there.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, analysis
from . import fokker_planck as fp
from .config import RunConfig
from .entropy import boundary_correction_rate, gibbs_entropy_stationary
from .errors import ConfigError, QSDError
from .io import read_csv, sha256, write_csv
from .model import stationary_moment
from .protocol import execute, initial_sampler, single_trajectory_report
from .rng import trajectory_stream

EXIT_OK, EXIT_CONFIG, EXIT_FAULT, EXIT_VALIDATE = 0, 2, 3, 4
STATIONARY_GAMMAS = (1.0, 1.2, 1.5, 2.0)
RNG_CONTRACT = ("numpy Philox per trajectory, SeedSequence(master_seed, spawn_key=(stream_id, index)); "
                "initial rz by inverse CDF then phi, then standard_normal Wiener increments")

log = logging.getLogger("qsd_entropy")


# ------------------------------------------------------------- manifest


def write_manifest(cfg: RunConfig, out: Path, outputs: dict[str, Path]) -> Path:
    """Config sections plus environment and output checksums (ignored on re-read)."""
    text = cfg.dumps()
    env = [
        "[environment]",
        f"package_version = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"rng = {RNG_CONTRACT}",
        "",
        "[outputs]",
    ]
    env += [f"{k} = {p.name} sha256:{sha256(p)}" for k, p in sorted(outputs.items())]
    path = out / "manifest.ini"
    path.write_text(text + "\n".join(env) + "\n")
    return path


# --------------------------------------------------------------- commands


def cmd_stationary(cfg: RunConfig, out: Path) -> dict:
    """Analytic and Fokker-Planck stationary densities plus moments."""
    p = cfg.params
    outputs = {"family": analysis.emit_stationary_family(out, p, STATIONARY_GAMMAS)}
    rows = {"gamma": [], "normalised_mean": [], "second_moment": [], "gibbs_entropy": [], "boundary_rate": [],
            "fp_l1_to_analytic": []}
    grid_cols = {"rz": fp.cell_centres(cfg.n_grid)}
    for g in STATIONARY_GAMMAS:
        q = p.with_gamma(g)
        rows["gamma"].append(g)
        rows["normalised_mean"].append(stationary_moment(q, 1))
        rows["second_moment"].append(stationary_moment(q, 2))
        rows["gibbs_entropy"].append(gibbs_entropy_stationary(q))
        rows["boundary_rate"].append(boundary_correction_rate(q))
        grid = fp.stationary_grid(q, cfg.n_grid)
        rows["fp_l1_to_analytic"].append(
            fp.l1_distance(grid, fp.stationary_grid(q, cfg.n_grid, moment_match=False)))
        grid_cols[f"p_gamma_{g:g}"] = grid.values
    outputs["moments"] = write_csv(out / "stationary_moments.csv", rows)
    outputs["grid"] = write_csv(out / "stationary_grid.csv", grid_cols, {"n_grid": cfg.n_grid})
    write_manifest(cfg, out, outputs)
    return {"command": "stationary", "moments": {k: list(map(float, v)) for k, v in rows.items()}}


def _purity(cfg: RunConfig, out: Path) -> Path:
    from .validation import cylindrical_vs_3d_rms, purity_deviation

    dts = (cfg.dt, cfg.dt / 2)
    dev = [purity_deviation(cfg.params, h, t=cfg.t_max, gamma=cfg.gamma_dyn, seed=cfg.master_seed) for h in dts]
    rms = cylindrical_vs_3d_rms(cfg.params, cfg.dt, t=min(1.0, cfg.t_max), gamma=cfg.gamma_dyn,
                                seed=cfg.master_seed)
    return write_csv(out / "purity.csv", {"dt": np.array(dts), "mean_abs_r2_minus_1": np.array(dev),
                                          "rms_rz_cyl_vs_3d": np.array([rms, np.nan])})


def _raw_dump(cfg: RunConfig, run, p0, out: Path) -> Path:
    """Re-integrates each trajectory from its own substream; rows every ``dump_stride`` steps."""
    from .sde import simulate
    from .model import BlochState

    ids, ts, rzs, phis = [], [], [], []
    samp = initial_sampler(p0)
    for i in range(cfg.n_traj):
        s = trajectory_stream(cfg.master_seed, i, run.stream_id)
        rz0, phi0 = samp(s)
        tr = simulate(BlochState(rz0, phi0), run.schedule, run.t_max, run.dt, run.params, s,
                      delta_refl=run.delta_refl)
        sl = slice(None, None, cfg.dump_stride)
        ids.append(np.full(tr.times[sl].shape, i, dtype=np.int64))
        ts.append(tr.times[sl])
        rzs.append(tr.rz[sl])
        phis.append(tr.phi[sl])
    path = out / "raw_trajectories.npz"
    np.savez(path, traj_id=np.concatenate(ids), t=np.concatenate(ts), rz=np.concatenate(rzs),
             phi=np.concatenate(phis))
    return path


def cmd_run(cfg: RunConfig, out: Path) -> dict:
    """Full protocol: pre-pass, ensemble, correction; writes the results directory."""
    run = cfg.protocol_run()
    t0 = time.perf_counter()
    res = execute(run)
    log.info("ensemble of %d finished in %.1f s", run.n_traj, time.perf_counter() - t0)
    ens, led = res.ensemble, res.ledger
    summary = analysis.summarize(res)
    meta = {"kind": run.kind, "gamma_init": run.gamma_init, "gamma_dyn": run.gamma_dyn,
            "boundary_rate": repr(res.rate)}
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    snaps = res.snapshots
    outputs["snapshots"] = write_csv(
        out / "pdf_snapshots.csv",
        {"t": np.repeat([s.t for s in snaps], snaps[0].n), "rz": np.tile(snaps[0].nodes, len(snaps)),
         "p": np.concatenate([s.values for s in snaps])},
        meta,
    )
    outputs["aggregate"] = write_csv(
        out / "aggregate.csv",
        {"t": ens.times, "mean_rz": ens.mean_rz, "sem_rz": ens.sem_rz, "mean_ds_sys": ens.mean_sys,
         "mean_ds_env": ens.mean_env, "mean_ds_tot": ens.mean_tot, "sem_ds_tot": ens.sem_tot},
        {**meta, "entropy_columns": "cumulative means from t=0, without boundary correction"},
    )
    outputs["ledger"] = write_csv(
        out / "ledger.csv",
        {"t": led.times, "mean_ds_sys_cum": led.cum_sys, "mean_ds_env_cum": led.cum_env,
         "mean_ds_tot_cum": led.cum_tot, "boundary_corrected_total": led.corrected_total, "sem": ens.sem_tot},
        meta,
    )
    outputs["final"] = write_csv(
        out / "final.csv",
        {"traj_id": np.arange(ens.n_traj, dtype=np.int64), "ds_tot_final": ens.ds_tot_final},
        {**meta, "ds_tot_final": "uncorrected per-trajectory total; nan marks a faulted trajectory"},
    )
    outputs["states"] = write_csv(
        out / "final_states.csv",
        {"traj_id": np.arange(ens.n_traj, dtype=np.int64), "rz0": ens.rz0, "phi0": ens.phi0,
         "rz_final": ens.rz_final, "phi_final": ens.phi_final, "reflections": ens.reflections,
         "clamps": ens.clamps, "floors": ens.floors},
        meta,
    )
    outputs["l1"] = write_csv(out / "l1_to_target.csv",
                              {"t": np.array([s.t for s in snaps]), "l1": res.l1_to_target}, meta)
    outputs["hist"] = analysis.emit_final_histogram(out, ens.rz_final[np.isfinite(ens.rz_final)], run.params_dyn)
    _, single = single_trajectory_report(run, 0)
    outputs["curves"] = analysis.emit_entropy_curves(out, res, single)
    if cfg.purity_3d:
        outputs["purity"] = _purity(cfg, out)
    if cfg.dump_raw:
        outputs["raw"] = _raw_dump(cfg, run, fp.stationary_grid(run.params_init, run.n_grid), out)
    report = {
        "command": "run", "kind": run.kind, "n_traj": ens.n_traj, "n_committed": ens.n_committed,
        "faults": [list(map(int, f)) for f in ens.faults], "mean_ds_tot_corrected": summary.mean_total,
        "sem": summary.sem_total, "kl_oracle": summary.kl_oracle, "z": summary.kl_z,
        "kl_within_3_sem": summary.kl_pass, "boundary_rate": summary.boundary_rate,
        "reflections": summary.reflections, "clamps": summary.clamps, "floors": summary.floors,
        "flags": summary.flags,
    }
    (out / "summary.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    outputs["summary"] = out / "summary.json"
    write_manifest(cfg, out, outputs)
    for line in summary.lines():
        print(line)
    return report


def _load_final(run_dir: Path):
    cfg = RunConfig.read(run_dir / "manifest.ini")
    s = read_csv(run_dir / "final.csv")["ds_tot_final"]
    return cfg, s[np.isfinite(s)]


def cmd_dft(run_m: Path, run_mbar: Path, out: Path, width=None, n_min: int = analysis.N_MIN) -> dict:
    """DFT report from two run directories (protocol M first)."""
    cm, sm = _load_final(run_m)
    cb, sb = _load_final(run_mbar)
    if (cm.gamma_init, cm.gamma_dyn) != (cb.gamma_dyn, cb.gamma_init):
        raise ConfigError([f"runs are not time reverses of each other: "
                           f"{(cm.gamma_init, cm.gamma_dyn)} vs {(cb.gamma_init, cb.gamma_dyn)}"])
    hm, hb = analysis.dft_histograms(sm, sb, width)
    res = analysis.dft_check(hm, hb, n_min)
    out.mkdir(parents=True, exist_ok=True)
    analysis.emit_dft(out, res)
    analysis.emit_dft_densities(out, hm, hb)
    report = {
        "command": "dft", "n_M": int(sm.size), "n_Mbar": int(sb.size), "width": res.width,
        "n_bins": res.n_bins, "slope": res.slope, "slope_ci95": list(res.slope_ci),
        "intercept": res.intercept, "intercept_ci95": list(res.intercept_ci),
        "excluded_bin_centres": res.excluded.tolist(), "slope_within_0.1_of_1": abs(res.slope - 1) <= 0.1,
    }
    (out / "dft_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"DFT slope {res.slope:.4f} [{res.slope_ci[0]:.4f}, {res.slope_ci[1]:.4f}], "
          f"intercept {res.intercept:.4f}, {res.n_bins} bins, {res.excluded.size} excluded")
    return report


def cmd_validate(cfg: RunConfig, out: Path) -> tuple[dict, bool]:
    from .validation import run_suite

    t0 = time.perf_counter()
    checks = run_suite(cfg.params, log=print)
    report = {
        "command": "validate", "seconds": time.perf_counter() - t0,
        "checks": [{"key": c.key, "name": c.name, "module": c.module, "passed": c.passed, "detail": c.detail,
                    "seconds": round(c.seconds, 3)} for c in checks],
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "validate_report.json").write_text(json.dumps(report, indent=2) + "\n")
    ok = all(c.passed for c in checks)
    print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed in {report['seconds']:.0f} s")
    return report, ok


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qsd-entropy", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in (("stationary", "stationary densities and moments"), ("run", "one protocol ensemble"),
                      ("validate", "invariant suite at reduced sample sizes")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config", type=Path, help="INI configuration file")
        sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--workers", type=int, help="override worker threads")
        sp.add_argument("--out", type=Path, help="output directory")
        if name == "run":
            sp.add_argument("--kind", choices=("M", "Mbar"), help="override protocol kind")
            sp.add_argument("--n-traj", type=int, help="override trajectory count")
    sp = sub.add_parser("dft", help="fluctuation-theorem check on two run directories")
    sp.add_argument("run_m", type=Path, help="results directory of protocol M")
    sp.add_argument("run_mbar", type=Path, help="results directory of protocol Mbar")
    sp.add_argument("--width", type=float, help="bin width (default Freedman-Diaconis)")
    sp.add_argument("--n-min", type=int, default=analysis.N_MIN)
    sp.add_argument("--out", type=Path, help="output directory (default: run_m/dft)")
    sp.add_argument("--config", type=Path, help=argparse.SUPPRESS)
    sp.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    sp.add_argument("--workers", type=int, help=argparse.SUPPRESS)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _config(args) -> RunConfig:
    cfg = RunConfig.read(args.config) if args.config else RunConfig()
    kw = {"master_seed": args.seed, "workers": args.workers}
    if getattr(args, "kind", None):
        cfg = replace(cfg, kind=args.kind, gamma_init=None, gamma_dyn=None)
    if getattr(args, "n_traj", None):
        kw["n_traj"] = args.n_traj
    if args.out is not None:
        kw["out_dir"] = str(args.out)
    cfg = cfg.with_overrides(**kw)
    return cfg.validate()


def _fail(code: int, exc: BaseException, out: Path | None) -> int:
    report = {"exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    for attr in ("violations", "suggested_dt", "traj_index", "step", "offending", "diagnostics"):
        if hasattr(exc, attr):
            v = getattr(exc, attr)
            report[attr] = v if isinstance(v, (list, int, float, str, dict, type(None))) else repr(v)
    text = json.dumps(report, indent=2, default=repr)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = args.out
    try:
        if args.command == "dft":
            out = args.out or args.run_m / "dft"
            cmd_dft(args.run_m, args.run_mbar, out, args.width, args.n_min)
            return EXIT_OK
        cfg = _config(args)
        out = Path(cfg.out_dir)
        if args.command == "stationary":
            out.mkdir(parents=True, exist_ok=True)
            cmd_stationary(cfg, out)
        elif args.command == "run":
            cmd_run(cfg, out)
        elif args.command == "validate":
            _, ok = cmd_validate(cfg, out)
            return EXIT_OK if ok else EXIT_VALIDATE
        return EXIT_OK
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, out)
    except (QSDError, FloatingPointError) as exc:
        return _fail(EXIT_FAULT, exc, out)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_CONFIG, exc, out)


if __name__ == "__main__":
    sys.exit(main())
