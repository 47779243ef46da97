"""Semiclassical atom-cavity dynamics.

Dimensionless equations of motion (time in 1/kappa, length in w0, momentum in
M w0 kappa, ``eps = hbar / (M w0^2 kappa)``)::

    dr/dt     = p
    dp/dt     = eps [ -U0 grad|E|^2 + i gamma (E grad E^* - E^* grad E) ] + chi
    dalpha/dt = eta + (i Delta - 1) alpha - (i U0 + gamma) u^* E + xi
    E         = sum_a u_a(r) alpha_a

The double sums of the force collapse to ``E = sum u alpha`` and
``G = sum grad(u) alpha``: ``grad|E|^2 = 2 Re(E^* G)`` and
``i (E grad E^* - E^* grad E) = 2 Im(E^* G)``.

Noise model (configurable, not fixed by the underlying model): momentum
diffusion ``<chi_i chi_i> = s_p eps^2 (k w0)^2 gamma |E|^2`` per axis and unit
time, field noise ``<xi xi^*> = s_f`` per mode and unit time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .modes import ModeSet, _mode_point, mode_values
from .params import Scaled, SystemParams
from .steady import empty_cavity

__all__ = [
    "AtomState",
    "NoiseConfig",
    "SimState",
    "TrajectoryRecord",
    "ComplexForceError",
    "forces",
    "potential",
    "field_derivative",
    "step",
    "simulate",
    "entry_state",
    "MAX_DT",
]

MAX_DT = 0.05
_CHUNK = 20000


class ComplexForceError(ArithmeticError):
    """The force double sum has a significant imaginary part."""


@dataclass
class AtomState:
    r: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float).reshape(2)
        self.p = np.asarray(self.p, dtype=float).reshape(2)
        if not (np.all(np.isfinite(self.r)) and np.all(np.isfinite(self.p))):
            raise ValueError("atom state must be finite")


@dataclass(frozen=True)
class NoiseConfig:
    enabled: bool = True
    momentum_diffusion_scale: float = 1.0
    field_noise_scale: float = 1.0
    seed: int = 1

    def __post_init__(self):
        if self.momentum_diffusion_scale < 0 or self.field_noise_scale < 0:
            raise ValueError("noise scales must be non-negative")

    @property
    def field_variance(self) -> float:
        """Field noise strength per mode and unit time (0 when disabled)."""
        return self.field_noise_scale if self.enabled else 0.0

    @property
    def momentum_scale(self) -> float:
        return self.momentum_diffusion_scale if self.enabled else 0.0


@dataclass
class SimState:
    atom: AtomState
    alpha: np.ndarray
    t: float = 0.0


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    r: np.ndarray
    p: np.ndarray
    alpha: np.ndarray
    noise: NoiseConfig
    dt: float
    escaped: bool = False
    params_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> SimState:
        return SimState(AtomState(self.r[i], self.p[i]), self.alpha[i].copy(), float(self.times[i]))


def forces(modeset: ModeSet, params: SystemParams, atom: AtomState, field: np.ndarray) -> np.ndarray:
    """Optical force in units of hbar kappa / w0, from the explicit double sums."""
    s = params.scaled(modeset.geometry)
    u, grad = _modes_at(modeset, atom.r)
    a = np.asarray(field, dtype=complex)
    rho = np.outer(a, np.conj(a))  # alpha_m alpha_n^*
    out = np.empty(2, dtype=complex)
    for i in range(2):
        g = grad[i]
        grad_pair = np.outer(g, np.conj(u)) + np.outer(u, np.conj(g))  # grad(u_m u_n^*)
        diss = np.outer(u, np.conj(g)) - np.outer(g, np.conj(u))  # u_m grad u_n^* - u_n^* grad u_m
        out[i] = -s.U0 * np.sum(grad_pair * rho) + 1j * s.gamma * np.sum(diss * rho)
    mag = np.abs(out).max()
    if np.abs(out.imag).max() > 1e-12 * max(mag, 1e-300) and np.abs(out.imag).max() > 1e-300:
        raise ComplexForceError(f"force has imaginary part {out.imag}")
    return out.real


def potential(modeset: ModeSet, params: SystemParams, r, field: np.ndarray) -> float:
    """Conservative light-shift potential U0 |sum u alpha|^2 (units of hbar kappa)."""
    u, _ = _modes_at(modeset, r)
    return float(params.scaled(modeset.geometry).U0 * np.abs(u @ field) ** 2)


def field_derivative(modeset: ModeSet, params: SystemParams, atom: AtomState, field: np.ndarray) -> np.ndarray:
    """Deterministic part of d alpha / dt in units of kappa."""
    s = params.scaled(modeset.geometry)
    u, _ = _modes_at(modeset, atom.r)
    a = np.asarray(field, dtype=complex)
    return s.eta + (1j * s.Delta - 1.0) * a - s.coupling * np.conj(u) * (u @ a)


def _modes_at(modeset, r):
    u, ux, uy = mode_values(modeset, r[0], r[1])
    return u, np.stack([ux, uy])


@njit(cache=True)
def _run(x, y, px, py, alpha, n_steps, dt, stride, ps, ms, norms, arg_scale,
         eta, delta, u0, gamma, recoil, kw0, mom_scale, field_var, noise,
         evolve_field, evolve_atom, box, out_t, out_r, out_p, out_a, t0, rec0):
    """Advance the state ``n_steps`` steps, recording every ``stride`` steps.

    ``noise`` holds ``n_steps x (2 + 2N)`` standard normals. Returns the
    final state, number of records written and an escape flag.
    """
    k = ps.shape[0]
    lin = complex(-1.0, delta)
    decay = np.exp(lin * dt)
    phi = (decay - 1.0) / lin  # exact integral of the linear part over dt
    coup = complex(gamma, u0)
    u = np.empty(k, dtype=np.complex128)
    ux = np.empty(k, dtype=np.complex128)
    uy = np.empty(k, dtype=np.complex128)
    sq_dt = math.sqrt(dt)
    sig_f = math.sqrt(0.5 * field_var * dt)
    mom_pref = mom_scale * (recoil * kw0) ** 2 * gamma * dt
    nrec = rec0
    escaped = False
    for i in range(n_steps):
        for a in range(k):
            u[a], ux[a], uy[a] = _mode_point(ps[a], ms[a], norms[a], arg_scale, x, y)
        if evolve_field:
            e = 0j
            for a in range(k):
                e += u[a] * alpha[a]
            for a in range(k):
                drive = eta[a] - coup * u[a].conjugate() * e
                alpha[a] = decay * alpha[a] + phi * drive
                if field_var > 0.0:
                    alpha[a] += sig_f * complex(noise[i, 2 + 2 * a], noise[i, 3 + 2 * a])
        if evolve_atom:
            e = 0j
            gx = 0j
            gy = 0j
            for a in range(k):
                e += u[a] * alpha[a]
                gx += ux[a] * alpha[a]
                gy += uy[a] * alpha[a]
            ec = e.conjugate()
            fx = recoil * (-2.0 * u0 * (ec * gx).real + 2.0 * gamma * (ec * gx).imag)
            fy = recoil * (-2.0 * u0 * (ec * gy).real + 2.0 * gamma * (ec * gy).imag)
            px += fx * dt
            py += fy * dt
            if mom_pref > 0.0:
                sig_p = math.sqrt(mom_pref * (e.real * e.real + e.imag * e.imag))
                px += sig_p * noise[i, 0]
                py += sig_p * noise[i, 1]
            x += px * dt
            y += py * dt
        if (i + 1) % stride == 0 and out_t.shape[0] > 0:
            out_t[nrec] = t0 + (i + 1) * dt
            out_r[nrec, 0] = x
            out_r[nrec, 1] = y
            out_p[nrec, 0] = px
            out_p[nrec, 1] = py
            for a in range(k):
                out_a[nrec, a] = alpha[a]
            nrec += 1
        if abs(x) > box or abs(y) > box:
            escaped = True
            return x, y, px, py, i + 1, nrec, escaped
    return x, y, px, py, n_steps, nrec, escaped


def _check_dt(dt):
    if not (0 < dt <= MAX_DT):
        raise ValueError(f"time step {dt} outside (0, {MAX_DT}] (units of 1/kappa)")


def _kernel_args(modeset: ModeSet, s: Scaled):
    return (modeset.ps, modeset.ms, modeset.norm_array, modeset.arg_scale,
            np.asarray(s.eta, dtype=np.complex128), s.Delta, s.U0, s.gamma, s.recoil, s.kw0)


def _draw(rng, n_steps, k, noise: NoiseConfig):
    if noise.enabled and (noise.field_noise_scale > 0 or noise.momentum_diffusion_scale > 0):
        return rng.standard_normal((n_steps, 2 + 2 * k))
    return np.zeros((n_steps, 2 + 2 * k))


_EMPTY = (np.empty(0), np.empty((0, 2)), np.empty((0, 2)), np.empty((0, 1), dtype=np.complex128))


def step(state: SimState, dt: float, noise: NoiseConfig, rng: np.random.Generator,
         modeset: ModeSet, params: SystemParams, *, evolve_field=True, evolve_atom=True) -> SimState:
    """One splitting step: exact linear field decay, exponential-Euler forcing,
    symplectic Euler for the atom (momentum first), Euler-Maruyama noise."""
    _check_dt(dt)
    s = params.scaled(modeset.geometry)
    alpha = np.array(state.alpha, dtype=np.complex128)
    k = len(modeset)
    x, y, px, py, _, _, _ = _run(
        state.atom.r[0], state.atom.r[1], state.atom.p[0], state.atom.p[1], alpha, 1, dt, 1,
        *_kernel_args(modeset, s), noise.momentum_scale, noise.field_variance, _draw(rng, 1, k, noise),
        evolve_field, evolve_atom, np.inf, *_EMPTY, state.t, 0,
    )
    return SimState(AtomState([x, y], [px, py]), alpha, state.t + dt)


def simulate(initial: AtomState, params: SystemParams, modeset: ModeSet, duration: float,
             dt: float = 0.01, noise: NoiseConfig = NoiseConfig(), record_stride: int = 10,
             box: float = 5.0, initial_field: np.ndarray | None = None,
             evolve_field: bool = True, evolve_atom: bool = True) -> TrajectoryRecord:
    """Integrate the coupled equations for ``duration`` (units of 1/kappa).

    The field starts in the empty-cavity steady state unless ``initial_field``
    is given. The run stops early, with ``escaped`` set, if the atom leaves the
    square ``|x|, |y| <= box``.
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    _check_dt(dt)
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    s = params.scaled(modeset.geometry)
    k = len(modeset)
    n_steps = int(round(duration / dt))
    n_rec = n_steps // record_stride + 1
    out_t = np.empty(n_rec)
    out_r = np.empty((n_rec, 2))
    out_p = np.empty((n_rec, 2))
    out_a = np.empty((n_rec, k), dtype=np.complex128)
    alpha = np.array(empty_cavity(params, modeset) if initial_field is None else initial_field, dtype=np.complex128)
    x, y = initial.r
    px, py = initial.p
    out_t[0], out_r[0], out_p[0], out_a[0] = 0.0, (x, y), (px, py), alpha
    nrec = 1
    rng = np.random.default_rng(noise.seed)
    args = _kernel_args(modeset, s)
    done = 0
    escaped = False
    chunk = _CHUNK - _CHUNK % record_stride
    while done < n_steps and not escaped:
        n = min(chunk, n_steps - done)
        x, y, px, py, taken, nrec, escaped = _run(
            x, y, px, py, alpha, n, dt, record_stride, *args, noise.momentum_scale, noise.field_variance,
            _draw(rng, n, k, noise), evolve_field, evolve_atom, box, out_t, out_r, out_p, out_a, done * dt, nrec,
        )
        done += taken
    return TrajectoryRecord(out_t[:nrec].copy(), out_r[:nrec].copy(), out_p[:nrec].copy(), out_a[:nrec].copy(),
                            noise, dt, escaped)


def entry_state(geometry, speed: float = 0.12, x_offset: float = 0.3, y_start: float = -2.0,
                kappa: float | None = None) -> AtomState:
    """Atom entering from below (-y side) moving along +y with ``speed`` in m/s."""
    if kappa is None:
        raise ValueError("kappa (rad/s) is required to convert the entry speed")
    v = speed / (geometry.w0 * kappa)
    return AtomState([x_offset, y_start], [0.0, v])
