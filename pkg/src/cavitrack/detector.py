"""Segmented photodetector behind the output mirror.

The transverse output plane is cut into ``n_sectors`` equal angular sectors
(sector 0 spans [0, 360/n) degrees counter-clockwise from +x). Each sector
counts photons at the rate ``2 kappa eta_det int_sector |sum alpha u|^2``;
opposing sectors may be summed into pairs. Counts are integrated over
non-overlapping windows tiling the record from t = 0 and then Poisson sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .modes import ModeSet, sector_overlap_matrices


class NegativeRateError(ArithmeticError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    n_sectors: int = 16
    window: float = 100.0  # units of 1/kappa
    efficiency: float = 1.0
    pair_sum: bool = True
    seed: int = 2
    r_max: float = 5.0  # units of w0
    # symmetric-ordering offset per mode removed before counting, see integrate_windows
    vacuum_offset: float = 0.0

    def __post_init__(self):
        if self.n_sectors < 1:
            raise ValueError("n_sectors must be positive")
        if self.pair_sum and self.n_sectors % 2:
            raise ValueError("pair summation needs an even number of sectors")
        if not self.window > 0:
            raise ValueError("window must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must lie in (0, 1]")
        if self.vacuum_offset < 0:
            raise ValueError("vacuum_offset must be non-negative")

    @property
    def n_outputs(self) -> int:
        return self.n_sectors // 2 if self.pair_sum else self.n_sectors

    def signature_dict(self) -> dict:
        """Fields that determine expected counts (the seed does not)."""
        return {"n_sectors": self.n_sectors, "window": repr(float(self.window)),
                "efficiency": repr(float(self.efficiency)), "pair_sum": self.pair_sum,
                "r_max": repr(float(self.r_max))}


@dataclass
class DetectorFrame:
    t_mid: float
    counts: np.ndarray
    expected: np.ndarray | None = None


def overlaps_for(modeset: ModeSet, config: DetectorConfig) -> np.ndarray:
    return sector_overlap_matrices(modeset, config.n_sectors, config.r_max)


def sector_rates(alpha, overlaps: np.ndarray, efficiency: float = 1.0) -> np.ndarray:
    """Photon detection rate per sector, in photons per 1/kappa.

    ``alpha`` may carry leading batch dimensions; output has shape
    ``alpha.shape[:-1] + (n_sectors,)``.
    """
    alpha = np.asarray(alpha, dtype=complex)
    form = np.einsum("...a,jab,...b->...j", alpha, overlaps, np.conj(alpha))
    rates = 2.0 * efficiency * form
    scale = max(np.abs(rates).max(initial=0.0), 1.0)
    if np.abs(rates.imag).max(initial=0.0) > 1e-10 * scale:
        raise NegativeRateError("sector intensity has an imaginary part; overlaps are not Hermitian")
    rates = rates.real
    if rates.min(initial=0.0) < -1e-12 * scale:
        raise NegativeRateError(f"negative sector rate {rates.min()}")
    return np.maximum(rates, 0.0)


def pair_sum(values: np.ndarray) -> np.ndarray:
    """Add opposing sectors j and j + n/2."""
    n = values.shape[-1]
    return values[..., : n // 2] + values[..., n // 2:]


def vacuum_rates(overlaps: np.ndarray, config: DetectorConfig) -> np.ndarray:
    """Per-sector rate carried by ``vacuum_offset`` photons in every mode."""
    trace = np.einsum("jaa->j", overlaps).real
    return 2.0 * config.efficiency * config.vacuum_offset * trace


def expected_counts(alpha, overlaps: np.ndarray, config: DetectorConfig) -> np.ndarray:
    """Mean counts per window for a stationary field."""
    rates = sector_rates(alpha, overlaps, config.efficiency) * config.window
    return pair_sum(rates) if config.pair_sum else rates


def window_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per window, so windows can be sampled in any order."""
    return np.random.default_rng([int(seed), int(index)])


def integrate_windows(times, alphas, config: DetectorConfig, overlaps: np.ndarray,
                      shot_noise: bool = True) -> list[DetectorFrame]:
    """Window-integrated detector record from a sampled field history.

    Expected counts are trapezoidal integrals of the sector rates over each
    window (linear interpolation at window edges), minus ``vacuum_offset``
    photons per mode: semiclassical amplitudes sampled with vacuum-level noise
    carry a symmetric-ordering excess that a photodetector does not see.
    Incomplete trailing windows are dropped.
    """
    times = np.asarray(times, dtype=float)
    alphas = np.asarray(alphas, dtype=complex)
    if times.ndim != 1 or len(times) < 2:
        raise ValueError("need at least two samples")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    if np.max(np.diff(times)) > config.window / 10 * (1 + 1e-9):
        raise ValueError("sampling interval must not exceed a tenth of the window")
    span = times[-1] - times[0]
    n_windows = int(np.floor(span / config.window + 1e-9))
    if n_windows < 1:
        raise ValueError("trajectory shorter than one detector window")

    rates = sector_rates(alphas, overlaps, config.efficiency) - vacuum_rates(overlaps, config)
    cum = np.concatenate([np.zeros((1, rates.shape[1])),
                          np.cumsum(0.5 * (rates[1:] + rates[:-1]) * np.diff(times)[:, None], axis=0)])

    def integral_to(t):
        i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        h = t - times[i]
        w = times[i + 1] - times[i]
        r_t = rates[i] + (rates[i + 1] - rates[i]) * (h / w)
        return cum[i] + 0.5 * (rates[i] + r_t) * h

    frames = []
    t0 = times[0]
    for k in range(n_windows):
        a, b = t0 + k * config.window, t0 + (k + 1) * config.window
        exp = np.maximum(integral_to(b) - integral_to(a), 0.0)
        if config.pair_sum:
            exp = pair_sum(exp)
        if shot_noise:
            counts = window_rng(config.seed, k).poisson(exp)
        else:
            counts = np.round(exp).astype(np.int64)
        frames.append(DetectorFrame(0.5 * (a + b), counts.astype(np.int64), exp))
    return frames


def detect_trajectory(record, modeset: ModeSet, config: DetectorConfig, shot_noise: bool = True):
    """Detector frames for a ``TrajectoryRecord``."""
    return integrate_windows(record.times, record.alpha, config, overlaps_for(modeset, config), shot_noise)
