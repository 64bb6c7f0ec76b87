"""Command line entry point ``chc``.

Exit codes: 0 when every check of the subcommand passes, 1 on a failed check
or a Newton step failure, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import ConfigError, CouplingViolation, StepFailure
from .harness import StudyConfig, StudyResult, run_spatial_study, run_temporal_study
from .invariants import run_invariants
from .mesh_fem import build
from .noise import sample_path, validate_spec, write_path
from .operator_checks import BatteryConfig, hoelder_probe, run_battery
from .scheme import SchemeConfig, default_initial_data, run_trajectory

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SUBCOMMANDS = ("simulate", "study-space", "study-time", "check-operators", "check-invariants")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def fmt(value) -> str:
    """Shortest round-trip text for floats, plain text otherwise."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence], manifest_hash: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# manifest_sha256={manifest_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=10, cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() if res.returncode == 0 and res.stdout.strip() else "unknown"


class Manifest:
    """Run manifest; the hash covers the inputs and is stamped on every output."""

    def __init__(self, out: Path, subcommand: str, cfg: RunConfig):
        self.path = out / "manifest.json"
        self.inputs = {"tool": "chcfem", "version": __version__, "git_describe": git_describe(),
                       "subcommand": subcommand, "config": cfg.to_dict()}
        canon = json.dumps(_jsonable(self.inputs), sort_keys=True, separators=(",", ":"))
        self.sha256 = hashlib.sha256(canon.encode("utf-8")).hexdigest()
        self.results: dict = {"status": "running"}
        self.write()

    def write(self) -> None:
        write_json(self.path, {**self.inputs, "inputs_sha256": self.sha256, "results": self.results})

    def finish(self, status: str, **results) -> None:
        self.results = {"status": status, **results}
        self.write()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _threads(args, cfg: RunConfig) -> int | None:
    return args.threads if args.threads is not None else cfg["run.threads"]


def cmd_simulate(cfg: RunConfig, out: Path, man: Manifest, args) -> int:
    ops = build(cfg.n_elements, cfg.degree)
    scfg = SchemeConfig.from_steps(ops, cfg["scheme.n_steps"], cfg["scheme.T"],
                                   newton_tol=cfg["scheme.newton_tol"],
                                   newton_max_iters=cfg["scheme.newton_max_iters"],
                                   initial_data=default_initial_data(cfg["scheme.amplitude"]),
                                   linear=cfg["scheme.linear"])
    n = scfg.n_steps
    stored = max(2, cfg["scheme.checkpoints"])
    ck = sorted({int(round(i * n / (stored - 1))) for i in range(stored)})
    path = None
    if cfg["noise.scale"] > 0:
        spec = cfg.noise_spec()
        validate_spec(spec)
        path = sample_path(spec, n, scfg.T, 0)
        if cfg["scheme.dump_path"]:
            write_path(path, out / "noise_path.bin")
    try:
        traj = run_trajectory(scfg, path, checkpoints=ck)
    except StepFailure as exc:
        report = {"message": str(exc), "step_index": exc.step_index, "residuals": exc.residuals}
        write_json(out / "failure.json", report)
        man.finish("step_failure", failure=report)
        print(f"step failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    x = ops.space.dof_coords
    rows = ((t, i, x[i], traj.u[c, i], traj.w[c, i])
            for c, t in enumerate(traj.times) for i in range(ops.n))
    write_csv(out / "trajectory.csv", ("t", "dof", "x", "u", "w"), rows, man.sha256)
    mon = ((s, traj.energy[s], traj.ah_norm[s], traj.dissipation[s],
            traj.newton_iterations[s - 1] if s else 0, traj.final_residuals[s - 1] if s else 0.0)
           for s in range(n + 1))
    write_csv(out / "monitors.csv", ("step", "J", "ah_norm", "dissipation", "newton_iterations",
                                     "final_residual"), mon, man.sha256)
    man.finish("ok", path_hash=None if path is None else path.path_hash,
               sup_ah_norm=traj.sup_ah_norm, final_energy=float(traj.energy[-1]))
    return EXIT_OK


def _study_config(cfg: RunConfig, mode: str, args) -> StudyConfig:
    spatial = mode == "spatial"
    return StudyConfig(
        mode=mode,
        ladder=cfg["study.space_ladder"] if spatial else cfg["study.time_ladder"],
        ref_elements=cfg["study.space_ref_elements"] if spatial else cfg["study.time_elements"],
        ref_steps=cfg["study.ref_steps"], samples=cfg["study.samples"],
        moment=cfg["study.moment"], gamma=cfg["noise.gamma"], decay_s=cfg["noise.decay_s"],
        r=cfg["mesh.r"], T=cfg["scheme.T"], seed=cfg["run.seed"], noise_scale=cfg["noise.scale"],
        modes=cfg["noise.modes"], linear=cfg["scheme.linear"],
        initial_amplitude=cfg["scheme.amplitude"], threads=_threads(args, cfg))


def _write_study(res: StudyResult, out: Path, man: Manifest) -> int:
    rows = res.table.rows()
    cols = ("resolution", "rms_error_X", "stderr_X", "rms_error_Y", "stderr_Y", "samples")
    write_csv(out / "errors.csv", cols, ([r[c] for c in cols] for r in rows), man.sha256)
    summary = {"manifest_sha256": man.sha256, **res.ratefit_summary()}
    write_json(out / "ratefit.json", summary)
    plot = [(q, np.log10(r["resolution"]), np.log10(r[f"rms_error_{q}"]))
            for q in ("X", "Y") for r in rows]
    write_csv(out / "plot_data.csv", ("quantity", "log10_resolution", "log10_error"), plot,
              man.sha256)
    status = "ok" if res.dominance_ok else "reference_floor_exceeded"
    man.finish(status, path_hashes=res.path_hashes, slope_X=res.fit("X").slope,
               slope_Y=res.fit("Y").slope, reference_floor_ok=res.dominance_ok)
    if not res.dominance_ok:
        print(f"reference floor {res.floor_estimate:.3e} exceeds {res.floor_limit:.3e}; "
              "rates are not reliable", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_study(mode: str):
    def run(cfg: RunConfig, out: Path, man: Manifest, args) -> int:
        try:
            scfg = _study_config(cfg, mode, args)
        except ValueError as exc:
            raise ConfigError(str(exc), "study") from None
        if mode == "spatial":
            res = run_spatial_study(scfg, floor_samples=cfg["study.floor_samples"])
        else:
            res = run_temporal_study(scfg)
        fx, fy = res.fit("X"), res.fit("Y")
        print(f"{mode} study: slope X {fx.slope:.3f} (predicted {res.predicted('X'):g}), "
              f"slope Y {fy.slope:.3f} (predicted {res.predicted('Y'):g})")
        return _write_study(res, out, man)
    return run


def cmd_check_operators(cfg: RunConfig, out: Path, man: Manifest, args) -> int:
    battery = BatteryConfig(tol_space=cfg["checks.tol_space"], tol_time=cfg["checks.tol_time"])
    probes = run_battery(battery)
    cols = ("estimate_id", "ladder_point", "measured", "fitted_slope", "fitted_slope_log",
            "predicted", "status")
    write_csv(out / "operator_checks.csv", cols,
              ([r[c] for c in cols] for p in probes for r in p.rows()), man.sha256)
    for p in probes:
        print(f"{p.estimate_id:12s} slope {p.fitted_slope:+.3f} predicted "
              f"{p.predicted_slope:+.2f} {'pass' if p.passed else 'FAIL'}")
    ok = all(p.passed for p in probes)
    results = {"probes": {p.estimate_id: {"fitted_slope": p.fitted_slope, "passed": p.passed}
                          for p in probes}}
    if cfg["hoelder.enabled"]:
        spec = cfg.noise_spec(cfg["hoelder.elements"] * cfg.degree + 1)
        hr = hoelder_probe(build(cfg["hoelder.elements"], cfg.degree),
                           spec if cfg["noise.scale"] > 0 else None, cfg["hoelder.samples"],
                           cfg["scheme.T"], cfg["hoelder.steps"], cfg["hoelder.max_lag_exp"],
                           threads=_threads(args, cfg))
        write_csv(out / "hoelder.csv", ("lag", "mean_sq", "stderr"),
                  zip(hr.lags, hr.mean_sq, hr.stderr), man.sha256)
        print(f"hoelder exponent {hr.exponent:.3f} (predicted {hr.predicted:g}) "
              f"{'pass' if hr.passed() else 'FAIL'}")
        ok = ok and hr.passed()
        results["hoelder"] = {"exponent": hr.exponent, "predicted": hr.predicted,
                              "passed": hr.passed()}
    man.finish("ok" if ok else "failed", **results)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_check_invariants(cfg: RunConfig, out: Path, man: Manifest, args) -> int:
    ops = build(cfg.n_elements, cfg.degree)
    spec = cfg.noise_spec()
    res = run_invariants(ops, spec, cfg["scheme.n_steps"], cfg["scheme.T"],
                         cfg["checks.invariant_tol"])
    cols = ("name", "value", "tolerance", "status", "detail")
    write_csv(out / "invariants.csv", cols, ([r.row()[c] for c in cols] for r in res), man.sha256)
    for r in res:
        print(f"{r.name:28s} {r.value:.3e} <= {r.tolerance:.1e} {'pass' if r.passed else 'FAIL'}")
    ok = all(r.passed for r in res)
    man.finish("ok" if ok else "failed", invariants={r.name: r.passed for r in res})
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "study-space": cmd_study("spatial"),
            "study-time": cmd_study("temporal"), "check-operators": cmd_check_operators,
            "check-invariants": cmd_check_invariants}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chc", description="Stochastic Cahn-Hilliard FEM solver.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI or JSON config, or a run manifest")
        p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
        p.add_argument("--out", default="chc_out", help="output directory")
        p.add_argument("--samples", type=int, help="Monte Carlo samples (overrides study.samples)")
        p.add_argument("--threads", type=int, help="worker threads (fallback: CHC_THREADS)")
    return parser


def dispatch(cfg: RunConfig, args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man = Manifest(out, args.subcommand, cfg)
    try:
        return COMMANDS[args.subcommand](cfg, out, man, args)
    except ConfigError:
        man.finish("usage_error")
        raise
    except (StepFailure, CouplingViolation) as exc:
        man.finish("failed", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.set("run.seed", args.seed)
        if args.samples is not None:
            cfg.set("study.samples", args.samples)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads must be positive", "--threads")
        cfg.subcommand, cfg.out_dir = args.subcommand, args.out
        return dispatch(cfg, args)
    except ConfigError as exc:
        where = f" [{exc.key}]" if exc.key else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
