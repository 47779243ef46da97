"""Stationary cavity fields for an atom held at rest.

Field equation (rates in units of kappa, noise off)::

    d alpha_a / dt = eta_a + (i Delta - kappa) alpha_a - (i U0 + gamma) u_a^* E,
    E = sum_b u_b alpha_b

``E`` is the field at the atom, the same combination whose gradient drives
the optical force. The fixed point is the N x N linear system

    [(kappa - i Delta) 1 + (i U0 + gamma) u^* u^T] alpha = eta,

which is solved directly. Contracting with ``u^T`` gives the closed forms

    E = u^T eta / (kappa - i Delta + (i U0 + gamma) |u|^2)
    alpha = [eta - (i U0 + gamma) u^* E] / (kappa - i Delta),

identical to the textbook expressions written with a pump amplitude of
``-eta^*``; they are kept as an independent cross-check of the solve.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .modes import ModeSet, mode_values
from .params import SystemParams, digest

SATURATION_LIMIT = 0.1


class SingularSystemError(ArithmeticError):
    pass


@dataclass(frozen=True)
class StationarySolution:
    alpha: np.ndarray
    E0: complex
    intensity_at_atom: float
    saturation: float


def empty_cavity(params: SystemParams, modeset: ModeSet) -> np.ndarray:
    """alpha = eta / (kappa - i Delta) for every mode."""
    s = params.scaled(modeset.geometry)
    if len(s.eta) != len(modeset):
        raise ValueError("one pump amplitude per mode required")
    return s.eta / s.decay


def _check_saturation(params, intensity):
    sat = params.saturation(intensity)
    worst = float(np.max(sat)) if np.size(sat) else 0.0
    if worst > SATURATION_LIMIT:
        warnings.warn(
            f"atomic saturation parameter reaches {worst:.3g} (> {SATURATION_LIMIT}); "
            "low-saturation approximation is questionable",
            stacklevel=3,
        )
    return sat


def solve_stationary(params: SystemParams, modeset: ModeSet, u: np.ndarray) -> np.ndarray:
    """Fixed-point amplitudes for mode values ``u`` (shape ``(..., N)``)."""
    s = params.scaled(modeset.geometry)
    n = len(modeset)
    if len(s.eta) != n:
        raise ValueError("one pump amplitude per mode required")
    u = np.asarray(u, dtype=complex)
    if not np.all(np.isfinite(u)):
        raise SingularSystemError("mode values are not finite")
    mat = s.decay * np.eye(n) + s.coupling * np.conj(u)[..., :, None] * u[..., None, :]
    pivot = s.decay + s.coupling * np.sum(np.abs(u) ** 2, axis=-1)
    if np.any(np.abs(pivot) < 1e-12):
        raise SingularSystemError(f"stationary system singular: effective decay {pivot!r}")
    rhs = np.broadcast_to(s.eta, u.shape)
    alpha = np.linalg.solve(mat, rhs[..., None])[..., 0]
    resid = np.abs(np.einsum("...ab,...b->...a", mat, alpha) - rhs).max(initial=0.0)
    scale = max(np.abs(s.eta).max(initial=0.0), 1.0)
    if resid > 1e-10 * scale:
        raise SingularSystemError(f"fixed-point residual {resid:.3g} exceeds tolerance")
    return alpha


def closed_form_stationary(params: SystemParams, modeset: ModeSet, u: np.ndarray):
    """Closed-form amplitudes and field at the atom, returns ``(alpha, E0)``."""
    s = params.scaled(modeset.geometry)
    u = np.asarray(u, dtype=complex)
    # written in the (i Delta - kappa) form with pump -eta^*, i.e. eta_conv^* = -eta
    eta_conv = -np.conj(s.eta)
    denom = 1j * s.Delta - 1.0
    e0 = np.sum(u * np.conj(eta_conv), axis=-1) / (denom - s.coupling * np.sum(np.abs(u) ** 2, axis=-1))
    alpha = np.conj(eta_conv) / denom + (s.coupling / denom) * np.conj(u) * e0[..., None]
    return alpha, e0


def stationary_fields(params: SystemParams, modeset: ModeSet, x, y, check: bool = True):
    """Batch stationary solution on arrays of atom positions.

    Returns ``(alpha, E0, intensity)`` with ``alpha`` of shape ``x.shape + (N,)``.
    """
    u, _, _ = mode_values(modeset, x, y)
    alpha = solve_stationary(params, modeset, u)
    e0 = np.sum(u * alpha, axis=-1)
    if check:
        alpha_cf, e0_cf = closed_form_stationary(params, modeset, u)
        scale = max(np.abs(params.scaled(modeset.geometry).eta).max(initial=0.0), 1.0)
        err = max(np.abs(alpha_cf - alpha).max(initial=0.0), np.abs(e0_cf - e0).max(initial=0.0))
        if err > 1e-10 * scale:
            raise SingularSystemError(f"closed form disagrees with linear solve by {err:.3g}")
    return alpha, e0, np.abs(e0) ** 2


def stationary_field(params: SystemParams, modeset: ModeSet, atom_position) -> StationarySolution:
    """Stationary amplitudes for an atom at rest at ``(x, y)`` (w0 units, z = 0)."""
    x, y = atom_position
    alpha, e0, inten = stationary_fields(params, modeset, np.array([x]), np.array([y]))
    sat = _check_saturation(params, inten)
    return StationarySolution(alpha[0], complex(e0[0]), float(inten[0]), float(sat[0]))


def effective_mode(modeset: ModeSet, atom_position) -> tuple[float, np.ndarray]:
    """Single coupled mode seen by an atom at rest.

    Returns ``(u_eff, R)`` with ``R`` unitary and ``R @ conj(u) = (u_eff, 0, ...)``;
    in the rotated amplitudes ``beta = R @ alpha`` only ``beta_0`` couples
    to the atom.
    """
    u, _, _ = mode_values(modeset, *atom_position)
    n = len(modeset)
    u_eff = float(np.sqrt(np.sum(np.abs(u) ** 2)))
    if u_eff == 0.0:
        return 0.0, np.eye(n, dtype=complex)
    e = np.conj(u) / u_eff
    # unitary whose first column is e, then R = Q^H maps e to the first unit vector
    basis = np.column_stack([e, np.eye(n, dtype=complex)])
    q, _ = np.linalg.qr(basis)
    q[:, 0] = e  # q[:, 0] equals e up to a phase; the other columns stay orthogonal
    return u_eff, np.conj(q.T)


def effective_mode_stationary(params: SystemParams, modeset: ModeSet, atom_position) -> np.ndarray:
    """Stationary amplitudes via the rotated single-mode picture."""
    s = params.scaled(modeset.geometry)
    u_eff, rot = effective_mode(modeset, atom_position)
    drive = rot @ s.eta
    beta = drive / s.decay
    beta[0] = drive[0] / (s.decay + s.coupling * u_eff**2)
    return np.conj(rot.T) @ beta


def detuning_scan(params: SystemParams, modeset: ModeSet, atom_position, detunings) -> np.ndarray:
    """Intensity at the atom relative to the empty cavity for a range of
    cavity detunings ``Delta`` (rad/s).

    Values above one mark a local intensity maximum created by the atom,
    values below one a local minimum.
    """
    x, y = atom_position
    u, _, _ = mode_values(modeset, np.array([x]), np.array([y]))
    out = []
    for d in np.atleast_1d(np.asarray(detunings, dtype=float)):
        p = replace(params, Delta=float(d))
        alpha = solve_stationary(p, modeset, u)[0]
        empty = np.abs(u[0] @ empty_cavity(p, modeset)) ** 2
        atom = np.abs(u[0] @ alpha) ** 2
        out.append(np.inf if empty == 0 else atom / empty)
    return np.array(out)


def symmetric_axis(n: int, extent: float) -> np.ndarray:
    """``n`` samples on ``[-extent, extent]`` with exact sign symmetry."""
    if n < 2:
        raise ValueError("need at least two samples")
    step = 2 * extent / (n - 1)
    return (np.arange(n) - (n - 1) / 2) * step


def render_pattern(params: SystemParams, modeset: ModeSet, atom_position=None,
                   resolution: int = 201, extent: float = 2.0) -> np.ndarray:
    """Transverse intensity |sum alpha u|^2 of the stationary field.

    Row index runs along y, column index along x; ``extent`` is the half
    width in units of w0.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2 pixels")
    if not extent > 0:
        raise ValueError("extent must be positive")
    if atom_position is None:
        alpha = empty_cavity(params, modeset)
    else:
        alpha = stationary_field(params, modeset, atom_position).alpha
    axis = symmetric_axis(resolution, extent)
    xx, yy = np.meshgrid(axis, axis)
    u, _, _ = mode_values(modeset, xx, yy)
    return np.abs(u @ alpha) ** 2


def write_pgm(path, image: np.ndarray, metadata: dict | None = None) -> Path:
    """16-bit binary greymap (row 0 at the top, +y up) plus ``.json`` sidecar."""
    path = Path(path)
    img = np.asarray(image, dtype=float)
    peak = img.max()
    scaled = np.zeros(img.shape) if peak <= 0 else img / peak * 65535.0
    data = np.round(scaled[::-1]).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())
    meta = dict(metadata or {})
    meta.update(width=w, height=h, peak_intensity=repr(float(peak)))
    meta["hash"] = digest(meta)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary greymap")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = np.frombuffer(parts[4][: 2 * w * h], dtype=">u2").reshape(h, w)
    return data[::-1].astype(float) / maxval


def write_stationary_csv(path, params: SystemParams, modeset: ModeSet, x, y) -> Path:
    """Stationary solutions for a list of positions as CSV."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    alpha, e0, inten = stationary_fields(params, modeset, x, y)
    cols = ["x", "y"]
    for m in modeset.modes:
        cols += [f"re_alpha_{m.p}_{m.m}", f"im_alpha_{m.p}_{m.m}"]
    cols += ["re_E0", "im_E0", "intensity"]
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(f"# hash: {digest(params.to_dict(), modeset.to_dict())}\n")
        fh.write("# units: x,y [w0]; alpha, E0 [sqrt(photons)]; intensity [photons]\n")
        fh.write(",".join(cols) + "\n")
        for i in range(len(x)):
            row = [x[i], y[i]]
            for a in alpha[i]:
                row += [a.real, a.imag]
            row += [e0[i].real, e0[i].imag, inten[i]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return path
