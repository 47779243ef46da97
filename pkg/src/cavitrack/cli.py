"""Command-line driver: pattern, simulate, detect, grid, reconstruct, evaluate, run.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(including a record with nothing to reconstruct), 3 accuracy above tolerance.
Every output file is accompanied by ``<stem>.config.ini``, the fully resolved
configuration whose hash appears in the output header.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .detector import detect_trajectory
from .dynamics import simulate
from .params import digest
from .reconstruct import GridHashError, build_grid, evaluate, grid_hash, load_grid, reconstruct, save_grid
from .records import (RecordError, read_detector, read_path, read_trajectory, write_detector, write_path,
                      write_trajectory)
from .steady import render_pattern, write_pgm

log = logging.getLogger("cavitrack")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_TOLERANCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class ToleranceFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- shared pieces ------------------------------------------------------

def physics_hash(cfg: RunConfig) -> str:
    """Identity of the physical model (parameters and mode basis)."""
    return digest(cfg.system_params().to_dict(), cfg.modeset().to_dict())


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _provenance(cfg: RunConfig, target: Path) -> None:
    cfg.write(target.with_name(target.stem + ".config.ini"))


def do_simulate(cfg: RunConfig):
    d = cfg.dynamics
    return simulate(cfg.initial_state(), cfg.system_params(), cfg.modeset(), d.duration, d.dt,
                    cfg.noise_config(), d.record_stride, d.box)


def do_detect(cfg: RunConfig, record):
    det = cfg.detector_config(record.noise)
    frames = detect_trajectory(record, cfg.modeset(), det)
    return frames, det


def do_grid(cfg: RunConfig, threads: int = 1):
    rc = cfg.reconstruction
    return build_grid(cfg.system_params(), cfg.modeset(), cfg.detector_config(), rc.extent, rc.spacing,
                      rc.quantile, threads=threads)


def do_reconstruct(cfg: RunConfig, times, counts, grid):
    rc = cfg.reconstruction
    seed = cfg.initial_state().r if rc.seeded else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        path = reconstruct(counts, times, grid, seed, rc.gate, rc.predict)
    for w in caught:
        log.warning("%s", w.message)
    return path


def write_trajectory_file(cfg: RunConfig, record, target: Path) -> Path:
    write_trajectory(target, record, cfg.hash, list(cfg.modes.modes), {"physics_hash": physics_hash(cfg)})
    _provenance(cfg, target)
    return target


def write_detector_file(cfg: RunConfig, frames, det, target: Path, with_truth: bool) -> Path:
    resolved = cfg.override("detector", vacuum_offset=repr(float(det.vacuum_offset)))
    sig = grid_hash(cfg.system_params(), cfg.modeset(), det)
    write_detector(target, frames, det, resolved.hash, sig, with_truth)
    _provenance(resolved, target)
    return target


def write_grid_file(cfg: RunConfig, grid, target: Path) -> Path:
    grid.meta["config_hash"] = cfg.hash
    save_grid(grid, target)
    _provenance(cfg, target)
    return target


def write_path_file(cfg: RunConfig, path, grid, target: Path) -> Path:
    write_path(target, path, cfg.hash, {"grid_hash": grid.hash, "grid_spacing": repr(grid.spacing)})
    _provenance(cfg, target)
    return target


def _check_physics(cfg: RunConfig, header: dict, what: str) -> None:
    if header.get("physics_hash") not in (None, physics_hash(cfg)):
        raise GridHashError(f"{what} was produced with different physics or modes than the current configuration")


def _summary(report: dict, tol: float) -> str:
    keys = ("frames", "frames_in_region", "frames_evaluated", "detectable_fraction", "rms", "max_error",
            "raw_rms", "branch_flips", "branch")
    body = "\n".join(f"  {k:20s} {report[k]}" for k in keys)
    return f"evaluation (lengths in w0, tolerance {tol:.4g} w0)\n{body}"


# -- commands ------------------------------------------------------------

def cmd_pattern(cfg: RunConfig, args) -> int:
    if args.resolution < 2:
        raise UsageError("--resolution must be at least 2")
    if not args.extent > 0:
        raise UsageError("--extent must be positive")
    img = render_pattern(cfg.system_params(), cfg.modeset(), args.atom, args.resolution, args.extent)
    target = _outdir(cfg) / (args.name or "pattern.pgm")
    write_pgm(target, img, {"config_hash": cfg.hash, "extent_w0": repr(float(args.extent)),
                            "resolution": args.resolution,
                            "atom": None if args.atom is None else [repr(float(v)) for v in args.atom],
                            "orientation": "row 0 at +y (top), column 0 at -x"})
    _provenance(cfg, target)
    print(target)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, args) -> int:
    record = do_simulate(cfg)
    target = write_trajectory_file(cfg, record, _outdir(cfg) / "trajectory.csv")
    if record.escaped:
        log.warning("atom left the simulation box at t = %.6g / kappa", record.times[-1])
    print(target)
    return EXIT_OK


def cmd_detect(cfg: RunConfig, args) -> int:
    src = Path(args.trajectory or Path(cfg.output.dir) / "trajectory.csv")
    record, header = read_trajectory(src)
    _check_physics(cfg, header, str(src))
    frames, det = do_detect(cfg, record)
    target = write_detector_file(cfg, frames, det, _outdir(cfg) / "detector.csv", args.with_truth)
    print(target)
    return EXIT_OK


def cmd_grid(cfg: RunConfig, args) -> int:
    grid = do_grid(cfg, args.threads)
    target = write_grid_file(cfg, grid, _outdir(cfg) / "grid.bin")
    print(target)
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    src = Path(args.detector or Path(cfg.output.dir) / "detector.csv")
    times, counts, header = read_detector(src)
    expected = grid_hash(cfg.system_params(), cfg.modeset(), cfg.detector_config())
    if header["signature_hash"] != expected:
        raise GridHashError(f"{src} was recorded with detector/physics settings (signature {header['signature_hash']})"
                            f" that differ from the configuration (signature {expected})")
    grid = load_grid(args.grid or Path(cfg.output.dir) / "grid.bin", expected_hash=expected)
    path = do_reconstruct(cfg, times, counts, grid)
    target = write_path_file(cfg, path, grid, _outdir(cfg) / "path.csv")
    print(target)
    if not np.isfinite(path.smoothed).any():
        raise NumericalFailure("no detectable frames: the path is empty")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    out = Path(cfg.output.dir)
    path, _ = read_path(args.path or out / "path.csv")
    record, header = read_trajectory(args.trajectory or out / "trajectory.csv")
    report = evaluate(path, record.times, record.r, cfg.reconstruction.rho_max)
    tol = cfg.two_lambda_w0() if args.tolerance is None else args.tolerance * 1e-6 / (cfg.geometry.w0_um * 1e-6)
    report["tolerance"] = tol
    report["passed"] = bool(np.isfinite(report["rms"]) and report["rms"] <= tol)
    target = _outdir(cfg) / "report.json"
    target.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(_summary(report, tol))
    if not report["passed"]:
        raise ToleranceFailure(f"RMS error {report['rms']:.4g} w0 exceeds tolerance {tol:.4g} w0")
    return EXIT_OK


def cmd_run(cfg: RunConfig, args) -> int:
    """The whole chain in one process, writing the same files as the separate commands."""
    out = _outdir(cfg)
    record = do_simulate(cfg)
    write_trajectory_file(cfg, record, out / "trajectory.csv")
    frames, det = do_detect(cfg, record)
    write_detector_file(cfg, frames, det, out / "detector.csv", args.with_truth)
    grid = do_grid(cfg, args.threads)
    write_grid_file(cfg, grid, out / "grid.bin")
    times = np.array([f.t_mid for f in frames])
    counts = np.array([f.counts for f in frames])
    path = do_reconstruct(cfg, times, counts, grid)
    write_path_file(cfg, path, grid, out / "path.csv")
    args.path = args.trajectory = None
    return cmd_evaluate(cfg, args)


COMMANDS = {
    "pattern": cmd_pattern, "simulate": cmd_simulate, "detect": cmd_detect, "grid": cmd_grid,
    "reconstruct": cmd_reconstruct, "evaluate": cmd_evaluate, "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file (defaults reproduce the reference setup)")
    common.add_argument("--seed", type=int, help="seed of this command's random stage (noise or photon counting)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for grid building")
    common.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = _Parser(prog="cavitrack", description="Atom tracking through a degenerate multimode cavity.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pattern", parents=[common], help="stationary transverse intensity image")
    p.add_argument("--atom", type=float, nargs=2, metavar=("X", "Y"), help="atom position in units of w0")
    p.add_argument("--resolution", type=int, default=201)
    p.add_argument("--extent", type=float, default=2.0, help="half width in units of w0")
    p.add_argument("--name", help="image file name inside the output directory")

    sub.add_parser("simulate", parents=[common], help="simulate one atom transit")

    p = sub.add_parser("detect", parents=[common], help="sector photon counts from a trajectory")
    p.add_argument("trajectory", nargs="?", type=Path)
    p.add_argument("--with-truth", action="store_true", help="also write expected (noise-free) counts")

    sub.add_parser("grid", parents=[common], help="precompute the signature grid")

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct the path from detector counts")
    p.add_argument("detector", nargs="?", type=Path)
    p.add_argument("--grid", type=Path)

    for name in ("evaluate", "run"):
        p = sub.add_parser(name, parents=[common],
                           help="compare path with truth" if name == "evaluate" else "full chain in one process")
        if name == "evaluate":
            p.add_argument("path", nargs="?", type=Path)
            p.add_argument("--trajectory", type=Path)
        else:
            p.add_argument("--with-truth", action="store_true")
        p.add_argument("--tolerance", type=float, help="RMS tolerance in micrometres (default two wavelengths)")
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.out is not None:
        cfg = cfg.override("output", dir=str(args.out))
    if args.seed is not None:
        if args.command in ("simulate", "run"):
            cfg = cfg.override("noise", seed=args.seed)
        if args.command in ("detect", "run"):
            cfg = cfg.override("detector", seed=args.seed)
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    logging.captureWarnings(True)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError, RecordError, GridHashError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except ToleranceFailure as exc:
        log.error("%s", exc)
        return EXIT_TOLERANCE
    except (NumericalFailure, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
