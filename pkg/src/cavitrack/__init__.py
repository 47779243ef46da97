"""Tracking a single atom through the light it scatters in a degenerate multimode cavity.

Modules: ``modes`` (Laguerre-Gaussian basis and detector overlaps), ``steady``
(stationary fields), ``dynamics`` (stochastic atom-field integration),
``detector`` (segmented photon counting), ``reconstruct`` (least-squares
localization and path smoothing), ``config``, ``records`` and ``cli``.
"""

from .detector import DetectorConfig, DetectorFrame, detect_trajectory, integrate_windows, sector_rates
from .dynamics import AtomState, NoiseConfig, TrajectoryRecord, entry_state, forces, simulate
from .modes import CavityGeometry, ModeIndex, ModeSet, mode_vector, sector_overlap_matrices
from .params import SystemParams
from .reconstruct import SignatureGrid, build_grid, evaluate, locate_frame, reconstruct
from .steady import empty_cavity, render_pattern, stationary_field

__version__ = "0.1.0"

__all__ = [
    "AtomState", "CavityGeometry", "DetectorConfig", "DetectorFrame", "ModeIndex", "ModeSet", "NoiseConfig",
    "SignatureGrid", "SystemParams", "TrajectoryRecord", "build_grid", "detect_trajectory", "empty_cavity",
    "entry_state", "evaluate", "forces", "integrate_windows", "locate_frame", "mode_vector", "reconstruct",
    "render_pattern", "sector_overlap_matrices", "sector_rates", "simulate", "stationary_field",
]
