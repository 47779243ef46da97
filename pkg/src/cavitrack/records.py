"""CSV files passed between pipeline stages.

Each file opens with a block of ``# key: value`` lines (JSON values) holding
the resolved configuration hash, the column units and whatever the next
stage needs, followed by a header row and the data. Floats are written with
``repr`` so every value survives the round trip bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .detector import DetectorConfig, DetectorFrame
from .dynamics import NoiseConfig, TrajectoryRecord
from .reconstruct import PositionEstimate, ReconstructedPath


class RecordError(ValueError):
    pass


def _write(path, header: dict, columns: list[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        for key, value in header.items():
            fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else repr(float(v)) for v in row) + "\n")
    return path


def _read(path, kind: str):
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise RecordError(f"cannot read {path}: {exc.strerror}") from None
    header = {}
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].partition(":")
        try:
            header[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            raise RecordError(f"{path}:{i + 1}: malformed header line") from None
        i += 1
    if header.get("kind") != kind:
        raise RecordError(f"{path} is not a {kind} file (kind {header.get('kind')!r})")
    if i >= len(lines):
        raise RecordError(f"{path}: missing column row")
    columns = lines[i].split(",")
    body = [ln for ln in lines[i + 1:] if ln.strip()]
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in body], dtype=float).reshape(-1, len(columns))
    except ValueError as exc:
        raise RecordError(f"{path}: bad data row ({exc})") from None
    return header, columns, data


# -- trajectory ---------------------------------------------------------

def trajectory_columns(mode_labels) -> list[str]:
    cols = ["t", "x", "y", "px", "py"]
    for lab in mode_labels:
        tag = lab.replace(":", "_")
        cols += [f"re_alpha_{tag}", f"im_alpha_{tag}"]
    return cols


def write_trajectory(path, record: TrajectoryRecord, config_hash: str, mode_labels, extra: dict | None = None):
    n = record.noise
    header = {
        "kind": "trajectory",
        "config_hash": config_hash,
        "units": "t [1/kappa]; x, y [w0]; px, py [M w0 kappa]; alpha [sqrt(photons)]",
        "modes": list(mode_labels),
        "noise": {"enabled": n.enabled, "momentum_diffusion_scale": repr(n.momentum_diffusion_scale),
                  "field_noise_scale": repr(n.field_noise_scale), "seed": n.seed},
        "dt": repr(record.dt),
        "escaped": bool(record.escaped),
    }
    header.update(extra or {})
    k = record.alpha.shape[1]
    rows = np.empty((len(record.times), 5 + 2 * k))
    rows[:, 0] = record.times
    rows[:, 1:3] = record.r
    rows[:, 3:5] = record.p
    rows[:, 5::2] = record.alpha.real
    rows[:, 6::2] = record.alpha.imag
    return _write(path, header, trajectory_columns(mode_labels), rows)


def read_trajectory(path) -> tuple[TrajectoryRecord, dict]:
    header, columns, data = _read(path, "trajectory")
    if columns != trajectory_columns(header["modes"]):
        raise RecordError(f"{path}: unexpected columns")
    nz = header["noise"]
    noise = NoiseConfig(nz["enabled"], float(nz["momentum_diffusion_scale"]), float(nz["field_noise_scale"]),
                        int(nz["seed"]))
    alpha = data[:, 5::2] + 1j * data[:, 6::2]
    rec = TrajectoryRecord(data[:, 0].copy(), data[:, 1:3].copy(), data[:, 3:5].copy(), alpha, noise,
                           float(header["dt"]), bool(header["escaped"]), meta=header)
    return rec, header


# -- detector -----------------------------------------------------------

def write_detector(path, frames: list[DetectorFrame], config: DetectorConfig, config_hash: str,
                   signature_hash: str, with_truth: bool = False, extra: dict | None = None) -> Path:
    n = len(frames[0].counts) if frames else config.n_outputs
    header = {
        "kind": "detector",
        "config_hash": config_hash,
        "signature_hash": signature_hash,
        "units": "t_mid [1/kappa]; counts [photons per window]; expected [mean photons per window]",
        "detector": {**config.signature_dict(), "seed": config.seed,
                     "vacuum_offset": repr(float(config.vacuum_offset))},
        "sector_orientation": "sector 0 spans [0, 360/n) deg counter-clockwise from +x; "
                              "pair j sums sectors j and j + n/2",
        "with_truth": bool(with_truth),
    }
    header.update(extra or {})
    cols = ["t_mid"] + [f"counts_{j}" for j in range(n)]
    if with_truth:
        cols += [f"expected_{j}" for j in range(n)]
    rows = []
    for f in frames:
        row = [f.t_mid] + [str(int(c)) for c in f.counts]
        if with_truth:
            row += list(f.expected)
        rows.append(row)
    return _write(path, header, cols, rows)


def read_detector(path) -> tuple[np.ndarray, np.ndarray, dict]:
    """Returns ``(t_mid, counts, header)``; expected columns are never returned."""
    header, columns, data = _read(path, "detector")
    n = sum(c.startswith("counts_") for c in columns)
    if n == 0:
        raise RecordError(f"{path}: no count columns")
    return data[:, 0].copy(), data[:, 1:1 + n].astype(np.int64), header


# -- reconstructed path -------------------------------------------------

PATH_COLUMNS = ["t_mid", "x_hat", "y_hat", "residual", "detectable", "branch_flag", "jump", "outlier", "sigma",
                "x_smooth", "y_smooth", "interpolated"]


def write_path(path, rec: ReconstructedPath, config_hash: str, extra: dict | None = None) -> Path:
    header = {
        "kind": "path",
        "config_hash": config_hash,
        "units": "t_mid [1/kappa]; x, y, sigma [w0]; residual [counts^2]",
        "branch": rec.branch,
        "smoothing": repr(float(rec.smoothing)),
        "branch_flag": "+1 chosen = lookup result r, -1 chosen = its reflection -r, 0 no estimate",
    }
    header.update(extra or {})
    rows = []
    for i, e in enumerate(rec.estimates):
        if e.chosen is None:
            xh = yh = np.nan
            flag = 0
        else:
            xh, yh = e.chosen
            flag = 1 if np.array_equal(e.chosen, e.candidates[0]) else -1
        rows.append([e.t_mid, xh, yh, e.residual, int(e.detectable), flag, int(e.jump), int(e.outlier),
                     e.sigma, rec.smoothed[i, 0], rec.smoothed[i, 1], int(rec.interpolated[i])])
    return _write(path, header, PATH_COLUMNS, rows)


def read_path(path) -> tuple[ReconstructedPath, dict]:
    header, columns, data = _read(path, "path")
    if columns != PATH_COLUMNS:
        raise RecordError(f"{path}: unexpected columns")
    ests = []
    for row in data:
        t, xh, yh, res, det, flag, jump, outl, sig = row[:9]
        chosen = None if flag == 0 else np.array([xh, yh])
        cand = None if chosen is None else np.array([chosen, -chosen]) * flag
        ests.append(PositionEstimate(t, cand, chosen, res, bool(det), sig, bool(jump), bool(outl)))
    rec = ReconstructedPath(ests, data[:, 0].copy(), data[:, 9:11].copy(), data[:, 11].astype(bool),
                            header["branch"], float(header["smoothing"]))
    return rec, header
