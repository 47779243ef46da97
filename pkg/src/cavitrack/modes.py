"""Laguerre-Gaussian transverse modes of a degenerate resonator.

All transverse lengths are in units of the cavity waist ``w0``; gradients are
therefore in units of ``1/w0``. The longitudinal profile is a plain standing
wave ``cos(k z)`` (no Gouy phase, no wavefront curvature).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy import integrate

__all__ = [
    "ModeIndex",
    "CavityGeometry",
    "ModeSet",
    "ModeField",
    "QuadratureError",
    "DEFAULT_MODES",
    "laguerre",
    "evaluate_mode",
    "compute_norms",
    "mode_vector",
    "mode_values",
    "sector_overlap_matrices",
]

# Scale of the Laguerre argument, in units of rho^2 / w0^2.
RADIAL_ARGUMENT = {"sqrt2": math.sqrt(2.0), "standard": 2.0}

# Transverse power of the TEM00 mode, pi w0^2 / 2, in units of w0^2.
TRANSVERSE_POWER = math.pi / 2.0


class QuadratureError(RuntimeError):
    """Raised when an adaptive quadrature fails to converge."""


@dataclass(frozen=True, order=True)
class ModeIndex:
    p: int
    m: int

    def __post_init__(self):
        if int(self.p) != self.p or int(self.m) != self.m:
            raise ValueError(f"mode indices must be integers, got {self}")
        if self.p < 0:
            raise ValueError(f"radial index must be >= 0, got p={self.p}")

    @property
    def order(self) -> int:
        return 2 * self.p + abs(self.m)

    def __str__(self):
        return f"{self.p}:{self.m}"

    @classmethod
    def parse(cls, text: str) -> "ModeIndex":
        p, m = text.strip().split(":")
        return cls(int(p), int(m))


DEFAULT_MODES = (ModeIndex(1, 0), ModeIndex(0, -2), ModeIndex(0, 2))


@dataclass(frozen=True)
class CavityGeometry:
    """Cavity waist, optical wavelength and cavity length, all in metres."""

    w0: float = 29e-6
    wavelength: float = 780e-9
    length: float = 100e-6

    def __post_init__(self):
        for name in ("w0", "wavelength", "length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def k(self) -> float:
        return 2 * math.pi / self.wavelength

    @property
    def kw0(self) -> float:
        """Wave number in units of 1/w0."""
        return self.k * self.w0

    @property
    def mode_volume(self) -> float:
        """TEM00 mode volume d w0^2 pi / 4 in m^3."""
        return self.length * self.w0**2 * math.pi / 4


@njit(cache=True)
def _laguerre(n, alpha, x):
    # three-term recurrence, L_{-1} = 0
    if n < 0:
        return 0.0
    prev = 1.0
    if n == 0:
        return prev
    cur = 1.0 + alpha - x
    for j in range(1, n):
        nxt = ((2 * j + 1 + alpha - x) * cur - (j + alpha) * prev) / (j + 1)
        prev = cur
        cur = nxt
    return cur


def laguerre(n: int, alpha: float, x):
    """Generalized Laguerre polynomial ``L_n^alpha(x)`` by upward recurrence."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape)
    flat = out.reshape(-1)
    for i, xi in enumerate(x.reshape(-1)):
        flat[i] = _laguerre(n, float(alpha), float(xi))
    return out if out.ndim else float(out)


@njit(cache=True)
def _mode_point(p, m, norm, arg_scale, x, y):
    """Value and transverse gradient of one mode at (x, y), z = 0.

    Uses rho^|m| e^{i m theta} = (x + i sgn(m) y)^|m|, which is analytic and
    removes the coordinate singularity on the axis.
    """
    am = abs(m)
    q = x * x + y * y
    s = arg_scale * q
    lag = _laguerre(p, am, s)
    dlag = -_laguerre(p - 1, am + 1, s)
    g = math.exp(-q)
    f = g * lag
    dfdq = g * (arg_scale * dlag - lag)
    pref = norm * (1.0 - 2.0 * (p % 2)) * 2.0 ** (0.5 * am)
    sgn = 1.0 if m >= 0 else -1.0
    w = complex(x, sgn * y)
    if am == 0:
        wm = 1.0 + 0.0j
        dwm = 0.0j
    else:
        wm = w**am
        dwm = am * w ** (am - 1)
    u = pref * wm * f
    ux = pref * (dwm * f + wm * dfdq * 2.0 * x)
    uy = pref * (dwm * (1j * sgn) * f + wm * dfdq * 2.0 * y)
    return u, ux, uy


@njit(cache=True)
def _modes_batch(ps, ms, norms, arg_scale, xs, ys):
    n = xs.shape[0]
    k = ps.shape[0]
    u = np.empty((n, k), dtype=np.complex128)
    ux = np.empty((n, k), dtype=np.complex128)
    uy = np.empty((n, k), dtype=np.complex128)
    for i in range(n):
        for a in range(k):
            u[i, a], ux[i, a], uy[i, a] = _mode_point(ps[a], ms[a], norms[a], arg_scale, xs[i], ys[i])
    return u, ux, uy


def _radial_profile(p, m, arg_scale, rho):
    """Unnormalized real radial factor: (-1)^p (sqrt2 rho)^|m| e^{-rho^2} L(.)"""
    am = abs(m)
    return (
        (-1) ** p
        * (math.sqrt(2.0) * rho) ** am
        * math.exp(-rho * rho)
        * _laguerre(p, am, arg_scale * rho * rho)
    )


def _quad(func, a, b, what):
    value, err, info = integrate.quad(func, a, b, epsabs=1e-14, epsrel=1e-12, limit=200, full_output=True)[:3]
    if not np.isfinite(value) or err > 1e-9 * max(abs(value), 1e-12):
        raise QuadratureError(f"quadrature for {what} did not converge (estimate {value}, error {err})")
    return value


def compute_norms(modes: Sequence[ModeIndex], geometry: CavityGeometry | None = None, convention: str = "sqrt2") -> list[float]:
    """Normalization constants giving every mode the TEM00 mode volume.

    The longitudinal ``cos^2`` factor contributes ``d/2`` for every mode, so
    only the transverse integral ``2 pi int |R|^2 rho d rho = pi w0^2 / 2``
    has to be enforced; it is computed by adaptive quadrature, which keeps
    the result valid for either radial-argument convention.
    """
    if not modes:
        raise ValueError("mode list is empty")
    if convention not in RADIAL_ARGUMENT:
        raise ValueError(f"unknown Laguerre convention {convention!r}")
    arg_scale = RADIAL_ARGUMENT[convention]
    norms = []
    for mode in modes:
        power = 2 * math.pi * _quad(
            lambda r: _radial_profile(mode.p, mode.m, arg_scale, r) ** 2 * r, 0.0, np.inf, f"norm of {mode}"
        )
        norms.append(math.sqrt(TRANSVERSE_POWER / power))
    return norms


@dataclass(frozen=True)
class ModeSet:
    """Ordered set of modes; the order fixes the amplitude-vector layout."""

    modes: tuple[ModeIndex, ...]
    norms: tuple[float, ...]
    geometry: CavityGeometry = field(default_factory=CavityGeometry)
    convention: str = "sqrt2"

    def __post_init__(self):
        if self.convention not in RADIAL_ARGUMENT:
            raise ValueError(f"unknown Laguerre convention {self.convention!r}")
        if len(self.modes) != len(self.norms):
            raise ValueError("one norm per mode required")
        if len(set(self.modes)) != len(self.modes):
            raise ValueError("duplicate modes in mode set")
        if any(not c > 0 for c in self.norms):
            raise ValueError("norms must be positive")
        if len({mode.order for mode in self.modes}) > 1:
            warnings.warn("mode set is not frequency degenerate (2p+|m| differs)", stacklevel=3)

    @classmethod
    def build(cls, modes: Iterable[ModeIndex] = DEFAULT_MODES, geometry: CavityGeometry | None = None,
              convention: str = "sqrt2") -> "ModeSet":
        modes = tuple(ModeIndex(*m) if not isinstance(m, ModeIndex) else m for m in modes)
        geometry = geometry or CavityGeometry()
        return cls(modes, tuple(compute_norms(modes, geometry, convention)), geometry, convention)

    def __len__(self):
        return len(self.modes)

    @cached_property
    def ps(self) -> np.ndarray:
        return np.array([m.p for m in self.modes], dtype=np.int64)

    @cached_property
    def ms(self) -> np.ndarray:
        return np.array([m.m for m in self.modes], dtype=np.int64)

    @cached_property
    def norm_array(self) -> np.ndarray:
        return np.array(self.norms, dtype=float)

    @property
    def arg_scale(self) -> float:
        return RADIAL_ARGUMENT[self.convention]

    def index(self, mode: ModeIndex) -> int:
        return self.modes.index(mode)

    def to_dict(self) -> dict:
        g = self.geometry
        return {
            "modes": [str(m) for m in self.modes],
            "norms": [repr(c) for c in self.norms],
            "convention": self.convention,
            "geometry": {"w0": repr(g.w0), "wavelength": repr(g.wavelength), "length": repr(g.length)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModeSet":
        g = {k: float(v) for k, v in d["geometry"].items()}
        return cls(
            tuple(ModeIndex.parse(s) for s in d["modes"]),
            tuple(float(c) for c in d["norms"]),
            CavityGeometry(**g),
            d["convention"],
        )

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModeSet":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ModeField:
    """Complex mode value with its transverse (x, y) gradient."""

    value: complex
    grad: tuple[complex, complex]


def mode_values(modeset: ModeSet, x, y):
    """Evaluate all modes at z = 0 on arrays of positions.

    Returns ``(u, ux, uy)``, each of shape ``x.shape + (len(modeset),)``.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    shape = x.shape
    u, ux, uy = _modes_batch(
        modeset.ps, modeset.ms, modeset.norm_array, modeset.arg_scale,
        np.ascontiguousarray(x.reshape(-1)), np.ascontiguousarray(y.reshape(-1)),
    )
    k = len(modeset)
    return u.reshape(shape + (k,)), ux.reshape(shape + (k,)), uy.reshape(shape + (k,))


def evaluate_mode(mode: ModeIndex, modeset: ModeSet, position: tuple[float, float, float]) -> ModeField:
    """Mode value and Cartesian gradient at ``(rho, theta, z)``.

    ``rho`` is in units of w0 and ``z`` in units of w0 as well; the
    longitudinal factor ``cos(k z)`` multiplies value and gradient alike.
    """
    rho, theta, z = position
    if rho < 0:
        raise ValueError("rho must be non-negative")
    a = modeset.index(mode)
    x, y = rho * math.cos(theta), rho * math.sin(theta)
    u, ux, uy = _mode_point(mode.p, mode.m, modeset.norms[a], modeset.arg_scale, x, y)
    c = math.cos(modeset.geometry.kw0 * z)
    return ModeField(u * c, (ux * c, uy * c))


def mode_vector(modeset: ModeSet, position) -> tuple[np.ndarray, np.ndarray]:
    """All modes at a transverse position ``(x, y)`` (w0 units, z = 0).

    Returns the value vector (N,) and gradient array (2, N).
    """
    x, y = position
    u, ux, uy = mode_values(modeset, x, y)
    return u, np.stack([ux, uy])


def sector_overlap_matrices(modeset: ModeSet, n_sectors: int = 16, r_max: float = 5.0) -> np.ndarray:
    """Sector-integrated mode overlaps, shape ``(n_sectors, N, N)``.

    ``O[j, a, b]`` is the integral of ``u_a u_b^*`` over sector ``j`` (angles
    ``[2 pi j / n, 2 pi (j+1) / n)``, measured counter-clockwise from +x, radius
    ``0..r_max``), divided by the single-mode transverse power. The intensity
    of a field ``sum_a alpha_a u_a`` in sector ``j`` is then
    ``alpha @ O[j] @ alpha.conj()``.
    """
    if n_sectors < 1:
        raise ValueError("n_sectors must be positive")
    if r_max < 4.0:
        raise ValueError("r_max must be at least 4 w0")
    n = len(modeset)
    scale = modeset.arg_scale
    radial = np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            ma, mb = modeset.modes[a], modeset.modes[b]
            val = _quad(
                lambda r: _radial_profile(ma.p, ma.m, scale, r) * _radial_profile(mb.p, mb.m, scale, r) * r,
                0.0, r_max, f"radial overlap {ma}/{mb}",
            )
            radial[a, b] = radial[b, a] = val * modeset.norms[a] * modeset.norms[b]

    edges = 2 * np.pi * np.arange(n_sectors + 1) / n_sectors
    dm = (modeset.ms[:, None] - modeset.ms[None, :]).astype(float)
    t0, t1 = edges[:-1, None, None], edges[1:, None, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        angular = np.where(
            dm == 0,
            (t1 - t0) + 0j,
            (np.exp(1j * dm * t1) - np.exp(1j * dm * t0)) / (1j * np.where(dm == 0, 1.0, dm)),
        )
    overlaps = angular * radial[None] / TRANSVERSE_POWER
    # exact Hermitian symmetry
    overlaps = 0.5 * (overlaps + np.conj(np.swapaxes(overlaps, 1, 2)))
    if n_sectors % 2 == 0 and np.all(dm % 2 == 0):
        # even azimuthal differences: sector j + n/2 is the point image of sector j
        overlaps[n_sectors // 2:] = overlaps[: n_sectors // 2]
    return overlaps
