"""Atom position reconstruction from the segmented detector record.

Only detector frames and a precomputed :class:`SignatureGrid` are used; the
truth trajectory appears in :func:`evaluate` alone.
"""

from __future__ import annotations

import json
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import UnivariateSpline

from .detector import DetectorConfig, expected_counts, overlaps_for
from .modes import ModeSet
from .params import SystemParams, digest
from .steady import empty_cavity, stationary_fields, symmetric_axis

GRID_MAGIC = b"CVTGRID1"


class GridHashError(ValueError):
    pass


@dataclass
class SignatureGrid:
    axis: np.ndarray  # shared x and y coordinates, w0 units
    signatures: np.ndarray  # (n_y, n_x, n_outputs) expected counts per window
    empty_signature: np.ndarray
    detectable: np.ndarray  # (n_y, n_x) bool
    threshold: float  # chi-square level separating a frame from the empty cavity
    window: float
    hash: str
    meta: dict = field(default_factory=dict)

    @property
    def spacing(self) -> float:
        return float(self.axis[1] - self.axis[0])

    @property
    def shape(self):
        return self.signatures.shape[:2]

    def point(self, iy: int, ix: int) -> np.ndarray:
        return np.array([self.axis[ix], self.axis[iy]])


@dataclass
class PositionEstimate:
    t_mid: float
    candidates: np.ndarray | None  # (2, 2): r and -r
    chosen: np.ndarray | None
    residual: float
    detectable: bool
    sigma: float = np.inf  # position noise scale from counting statistics, w0 units
    jump: bool = False
    outlier: bool = False


@dataclass
class ReconstructedPath:
    estimates: list
    times: np.ndarray
    smoothed: np.ndarray  # (n, 2), NaN outside the fitted time range
    interpolated: np.ndarray  # frames whose smoothed value is not backed by an estimate
    branch: str  # "seeded" or "arbitrary"; the point reflection is always equivalent
    smoothing: float = 0.0


def grid_hash(params: SystemParams, modeset: ModeSet, config: DetectorConfig) -> str:
    """Identity of the signature model: physics, basis and detector geometry."""
    return digest(params.to_dict(), modeset.to_dict(), config.signature_dict())


def chi_square(counts, reference) -> np.ndarray:
    ref = np.asarray(reference, dtype=float)
    return np.sum((np.asarray(counts, dtype=float) - ref) ** 2 / np.maximum(ref, 1.0), axis=-1)


def calibrate_threshold(empty_signature, quantile: float = 0.95, draws: int = 10000, seed: int = 0) -> float:
    """Quantile of the chi-square misfit of pure shot-noise frames to the empty cavity."""
    rng = np.random.default_rng(seed)
    samples = rng.poisson(np.asarray(empty_signature), size=(draws, len(empty_signature)))
    return float(np.quantile(chi_square(samples, empty_signature), quantile))


def build_grid(params: SystemParams, modeset: ModeSet, config: DetectorConfig, extent: float = 1.5,
               spacing: float = 0.025, quantile: float = 0.95, calibration_draws: int = 10000,
               calibration_seed: int = 0, threads: int = 1) -> SignatureGrid:
    """Noise-free detector signatures of a static atom on a square grid.

    Signatures are evaluated for one point of every ``(r, -r)`` pair and copied
    to its partner, so the grid is point symmetric by construction. Points are
    independent; ``threads > 1`` evaluates blocks of them concurrently with
    identical results.
    """
    n = int(round(2 * extent / spacing)) + 1
    axis = symmetric_axis(n, extent)
    overlaps = overlaps_for(modeset, config)
    half = np.arange((n * n + 1) // 2)
    iy, ix = np.divmod(half, n)

    def block(sl):
        alpha, _, _ = stationary_fields(params, modeset, axis[ix[sl]], axis[iy[sl]])
        return expected_counts(alpha, overlaps, config)

    step = max(1, -(-len(half) // max(1, threads)))
    blocks = [slice(a, a + step) for a in range(0, len(half), step)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                parts = list(pool.map(block, blocks))
        else:
            parts = [block(b) for b in blocks]
    sig_half = np.concatenate(parts)
    sig = np.empty((n * n, sig_half.shape[-1]))
    sig[half] = sig_half
    sig[n * n - 1 - half] = sig_half
    sig = sig.reshape(n, n, -1)
    empty = expected_counts(empty_cavity(params, modeset), overlaps, config)
    threshold = calibrate_threshold(empty, quantile, calibration_draws, calibration_seed)
    detectable = chi_square(sig, empty) > threshold
    meta = {"extent": repr(float(extent)), "spacing": repr(float(axis[1] - axis[0])), "quantile": quantile,
            "calibration_draws": calibration_draws, "calibration_seed": calibration_seed,
            "sector_orientation": "sector 0 spans [0, 360/n) deg counter-clockwise from +x"}
    return SignatureGrid(axis, sig, empty, detectable, threshold, config.window,
                         grid_hash(params, modeset, config), meta)


def _jacobian(grid: SignatureGrid, iy: int, ix: int) -> np.ndarray:
    """d signature / d(x, y) by finite differences of neighbouring grid points."""
    sig = grid.signatures
    n_y, n_x = grid.shape
    h = grid.spacing
    cols = []
    for axis_len, idx, take in ((n_x, ix, lambda k: sig[iy, k]), (n_y, iy, lambda k: sig[k, ix])):
        lo, hi = max(idx - 1, 0), min(idx + 1, axis_len - 1)
        cols.append((take(hi) - take(lo)) / ((hi - lo) * h))
    return np.stack(cols, axis=-1)


def _position_sigma(jac, variance) -> float:
    jtj = jac.T @ jac
    if np.linalg.cond(jtj) > 1e12:
        return np.inf
    inv = np.linalg.inv(jtj)
    cov = inv @ (jac.T * variance) @ jac @ inv
    return float(np.sqrt(max(np.trace(cov), 0.0) / 2))


def locate_frames(counts, grid: SignatureGrid, times=None, chunk: int = 64) -> list[PositionEstimate]:
    """Least-squares grid lookup for a batch of frames."""
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    if counts.shape[-1] != grid.signatures.shape[-1]:
        raise ValueError("frame length does not match grid signatures")
    times = np.zeros(len(counts)) if times is None else np.asarray(times, dtype=float)
    flat = grid.signatures.reshape(-1, grid.signatures.shape[-1])
    candidates = np.flatnonzero(grid.detectable.reshape(-1))
    pool = flat[candidates]
    out = []
    empty_misfit = np.sum((counts - grid.empty_signature) ** 2, axis=-1)
    detect = chi_square(counts, grid.empty_signature) > grid.threshold
    best = np.full(len(counts), -1)
    todo = np.flatnonzero(detect)
    if len(pool):
        for s in range(0, len(todo), chunk):
            sel = todo[s: s + chunk]
            misfit = np.sum((pool[None, :, :] - counts[sel, None, :]) ** 2, axis=-1)
            best[sel] = candidates[np.argmin(misfit, axis=1)]
    n_x = grid.shape[1]
    for f in range(len(counts)):
        if best[f] < 0:
            out.append(PositionEstimate(float(times[f]), None, None, float(empty_misfit[f]), False))
            continue
        iy, ix = divmod(int(best[f]), n_x)
        s0 = grid.signatures[iy, ix]
        resid0 = counts[f] - s0
        if float(resid0 @ resid0) >= empty_misfit[f]:
            out.append(PositionEstimate(float(times[f]), None, None, float(empty_misfit[f]), False))
            continue
        jac = _jacobian(grid, iy, ix)
        # Gauss-Newton step on the misfit surface around the grid minimum
        delta, *_ = np.linalg.lstsq(jac, resid0, rcond=1e-10)
        delta = np.clip(delta, -grid.spacing, grid.spacing)
        lin = resid0 - jac @ delta
        residual = float(min(lin @ lin, resid0 @ resid0))
        if lin @ lin > resid0 @ resid0:
            delta = np.zeros(2)
        r = grid.point(iy, ix) + delta
        sigma = _position_sigma(jac, np.maximum(s0, 1.0))
        out.append(PositionEstimate(float(times[f]), np.array([r, -r]), None, residual, True, sigma))
    return out


def locate_frame(frame, grid: SignatureGrid) -> PositionEstimate:
    """Locate a single :class:`~cavitrack.detector.DetectorFrame` or count vector."""
    counts = getattr(frame, "counts", frame)
    t = getattr(frame, "t_mid", 0.0)
    if np.shape(counts) != grid.empty_signature.shape:
        raise ValueError("frame length does not match grid signatures")
    return locate_frames(counts, grid, [t])[0]


def _predict(history, t):
    """Constant-velocity extrapolation from the last two accepted points."""
    (t1, p1), (t2, p2) = history[-2], history[-1]
    if t2 - t1 <= 0:
        return p2
    return p2 + (p2 - p1) * min((t - t2) / (t2 - t1), 1.0)


def select_branch(estimates, seed_position=None, gate: float = 0.5, predict: str = "velocity",
                  max_gap: float | None = None) -> tuple[list[PositionEstimate], str]:
    """Pick one of each symmetric candidate pair so the path is continuous.

    Each detectable estimate takes the candidate closer to a reference point:
    the last accepted point (``predict="previous"``) or its constant-velocity
    extrapolation (``predict="velocity"``, used only while the last two
    accepted points are at most ``max_gap`` apart in time; defaults to two
    frame intervals). A step longer than ``gate`` is flagged as a jump; it is
    accepted if the next detectable estimate lies within ``gate`` of it,
    otherwise it is marked as an outlier and the reference point is kept.
    """
    if predict not in ("velocity", "previous"):
        raise ValueError(f"unknown predictor {predict!r}")
    ests = [replace(e, chosen=None, jump=False, outlier=False) for e in estimates]
    times = np.array([e.t_mid for e in ests], dtype=float)
    if max_gap is None:
        max_gap = 2.0 * float(np.median(np.diff(times))) if len(times) > 1 else np.inf
    history: list = []
    if seed_position is not None:
        history.append((None, np.asarray(seed_position, dtype=float)))
    branch = "arbitrary" if seed_position is None else "seeded"
    idx = [i for i, e in enumerate(ests) if e.detectable and e.candidates is not None]
    for n, i in enumerate(idx):
        cand = ests[i].candidates
        t = ests[i].t_mid
        if not history:
            ref = None
        elif (predict == "velocity" and len(history) >= 2 and history[-2][0] is not None
              and t - history[-1][0] <= max_gap and history[-1][0] - history[-2][0] <= max_gap):
            ref = _predict(history, t)
        else:
            ref = history[-1][1]
        pick = cand[0] if ref is None else cand[int(np.argmin(np.linalg.norm(cand - ref, axis=1)))]
        ests[i].chosen = pick.copy()
        if history and np.linalg.norm(pick - history[-1][1]) > gate:
            ests[i].jump = True
            nxt = ests[idx[n + 1]].candidates if n + 1 < len(idx) else None
            confirmed = nxt is not None and np.min(np.linalg.norm(nxt - pick, axis=1)) <= gate
            if not confirmed:
                ests[i].outlier = True
                continue
        history.append((t, pick))
    if any(e.jump for e in ests):
        warnings.warn(f"{sum(e.jump for e in ests)} discontinuities larger than {gate} w0 in reconstructed path",
                      stacklevel=2)
    return ests, branch


def smooth_path(estimates, branch: str = "arbitrary", spacing: float = 0.025,
                max_trim: float = 0.25) -> ReconstructedPath:
    """Cubic smoothing spline through the accepted estimates, per coordinate.

    Weights are the inverse position noise scales and the smoothing factor
    starts at the number of points, i.e. residuals at the counting-noise level.
    While the curve misses a fitted point by more than three grid spacings,
    the worst such point is dropped as an outlier and the fit repeated; once a
    fraction ``max_trim`` of the points is gone the smoothing factor is halved
    instead.
    """
    ests = [replace(e) for e in estimates]
    times = np.array([e.t_mid for e in ests], dtype=float)
    use = [i for i, e in enumerate(ests) if e.chosen is not None and not e.outlier]
    if len(use) < 4:
        raise ValueError(f"need at least 4 accepted estimates to fit a path, got {len(use)}")
    n_start = len(use)
    tol = 3 * spacing
    s = None
    while True:
        t = times[use]
        xy = np.array([ests[i].chosen for i in use])
        sig = np.array([ests[i].sigma for i in use])
        w = 1.0 / np.clip(np.where(np.isfinite(sig), sig, 10.0), spacing / 4, 10.0)
        if s is None:
            s = float(len(t))
        splines = [UnivariateSpline(t, xy[:, c], w=w, k=3, s=s) for c in range(2)]
        miss = np.linalg.norm(np.column_stack([sp(t) for sp in splines]) - xy, axis=1)
        worst = int(np.argmax(miss))
        if miss[worst] <= tol or s == 0.0:
            break
        if len(use) > max(4, (1 - max_trim) * n_start):
            ests[use[worst]].outlier = True
            del use[worst]
            s = None
        else:
            s = s * 0.5 if s > 1e-6 else 0.0
    smoothed = np.full((len(times), 2), np.nan)
    inside = (times >= t[0]) & (times <= t[-1])
    smoothed[inside] = np.column_stack([sp(times[inside]) for sp in splines])
    interpolated = np.ones(len(times), dtype=bool)
    interpolated[use] = False
    return ReconstructedPath(ests, times, smoothed, interpolated, branch, s)


def reconstruct(counts, times, grid: SignatureGrid, seed_position=None, gate: float = 0.5,
                predict: str = "velocity") -> ReconstructedPath:
    """Locate every frame, resolve the 180 degree ambiguity and smooth."""
    ests = locate_frames(counts, grid, times)
    ests, branch = select_branch(ests, seed_position, gate, predict)
    try:
        return smooth_path(ests, branch, grid.spacing)
    except ValueError:
        t = np.asarray(times, dtype=float)
        return ReconstructedPath(ests, t, np.full((len(t), 2), np.nan), np.ones(len(t), dtype=bool), branch)


def evaluate(path: ReconstructedPath, truth_times, truth_r, rho_max: float | None = 0.7) -> dict:
    """Compare a reconstructed path with the true trajectory.

    Errors are taken at frames with an accepted estimate and, if ``rho_max`` is
    set, a true radius below it. The smaller of the errors against the truth
    and against its point reflection is reported.
    """
    truth_times = np.asarray(truth_times, dtype=float)
    truth_r = np.asarray(truth_r, dtype=float)
    t = path.times
    ok_t = (t >= truth_times[0]) & (t <= truth_times[-1])
    if not ok_t.any():
        raise ValueError("reconstruction and truth do not overlap in time")
    true_xy = np.column_stack([np.interp(t, truth_times, truth_r[:, c]) for c in range(2)])
    rho = np.hypot(*true_xy.T)
    region = ok_t & (rho < rho_max if rho_max is not None else True)
    detectable = np.array([e.detectable for e in path.estimates])
    use = region & detectable & np.all(np.isfinite(path.smoothed), axis=1)
    report = {
        "frames": int(len(t)),
        "frames_in_region": int(region.sum()),
        "frames_evaluated": int(use.sum()),
        "detectable_fraction": float(detectable[region].mean()) if region.any() else 0.0,
        "branch": path.branch,
    }
    if not use.any():
        report.update(rms=float("nan"), max_error=float("nan"), raw_rms=float("nan"), branch_flips=0)
        return report
    best = None
    for sign in (1.0, -1.0):
        err = np.linalg.norm(path.smoothed[use] - sign * true_xy[use], axis=1)
        rms = float(np.sqrt(np.mean(err**2)))
        if best is None or rms < best[0]:
            best = (rms, float(err.max()), sign)
    chosen = np.array([path.estimates[i].chosen for i in np.flatnonzero(use)])
    raw = np.linalg.norm(chosen - best[2] * true_xy[use], axis=1)
    side = np.linalg.norm(chosen - true_xy[use], axis=1) < np.linalg.norm(chosen + true_xy[use], axis=1)
    report.update(rms=best[0], max_error=best[1], raw_rms=float(np.sqrt(np.mean(raw**2))),
                  branch_flips=int(np.count_nonzero(np.diff(side.astype(int)))))
    return report


def save_grid(grid: SignatureGrid, path) -> Path:
    """Binary layout: magic, uint32 header length, JSON header, float64
    signatures (row-major, little endian), uint8 detectability mask."""
    path = Path(path)
    header = {
        "hash": grid.hash, "n_y": int(grid.shape[0]), "n_x": int(grid.shape[1]),
        "n_outputs": int(grid.signatures.shape[-1]), "axis0": repr(float(grid.axis[0])),
        "spacing": repr(grid.spacing), "threshold": repr(grid.threshold), "window": repr(float(grid.window)),
        "empty_signature": [repr(float(v)) for v in grid.empty_signature], "meta": grid.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(grid.signatures, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(grid.detectable, dtype=np.uint8).tobytes())
    header["detectable_points"] = int(grid.detectable.sum())
    path.with_suffix(".txt").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return path


def load_grid(path, expected_hash: str | None = None) -> SignatureGrid:
    raw = Path(path).read_bytes()
    if raw[:8] != GRID_MAGIC:
        raise ValueError(f"{path} is not a signature grid file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12: 12 + hlen])
    if expected_hash is not None and header["hash"] != expected_hash:
        raise GridHashError(f"grid hash {header['hash']} does not match expected {expected_hash}")
    n_y, n_x, k = header["n_y"], header["n_x"], header["n_outputs"]
    off = 12 + hlen
    nbytes = n_y * n_x * k * 8
    sig = np.frombuffer(raw[off: off + nbytes], dtype="<f8").reshape(n_y, n_x, k).astype(float)
    mask = np.frombuffer(raw[off + nbytes: off + nbytes + n_y * n_x], dtype=np.uint8).reshape(n_y, n_x).astype(bool)
    spacing = float(header["spacing"])
    axis = symmetric_axis(n_x, -float(header["axis0"]))
    if not np.isclose(axis[1] - axis[0], spacing):
        raise ValueError("corrupt grid header")
    return SignatureGrid(axis, sig, np.array([float(v) for v in header["empty_signature"]]), mask,
                         float(header["threshold"]), float(header["window"]), header["hash"], header["meta"])
