"""Physical parameters of the driven atom-cavity system.

Frequencies are stored as angular frequencies in rad/s. Everything the
integrators and solvers consume is the dimensionless ``Scaled`` view, where
time is measured in ``1/kappa``, length in ``w0`` and momentum in
``M w0 kappa``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import hbar

from .modes import CavityGeometry

TWO_PI_MHZ = 2 * math.pi * 1e6

RB87_MASS = 1.443e-25


@dataclass(frozen=True)
class SystemParams:
    g0: float
    Gamma: float
    kappa: float
    Delta: float
    detuning_atom: float
    eta: tuple[complex, ...]
    mass: float = RB87_MASS
    coupling_scale: float = 1.0  # longitudinal average of g0^2 relative to the antinode

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.Gamma > 0:
            raise ValueError("Gamma must be positive")
        if self.detuning_atom == 0:
            raise ValueError("pump-atom detuning must be non-zero")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.coupling_scale > 0:
            raise ValueError("coupling_scale must be positive")
        object.__setattr__(self, "eta", tuple(complex(e) for e in self.eta))

    @classmethod
    def from_mhz(cls, g0=16.0, Gamma=3.0, kappa=1.5, Delta=-2.25, detuning_atom=-114.0,
                 eta=(6.4, 0.0, 0.0), mass=RB87_MASS, coupling_scale=1.0) -> "SystemParams":
        """Build from ordinary frequencies in MHz (multiplied by 2 pi here)."""
        return cls(g0 * TWO_PI_MHZ, Gamma * TWO_PI_MHZ, kappa * TWO_PI_MHZ, Delta * TWO_PI_MHZ,
                   detuning_atom * TWO_PI_MHZ, tuple(complex(e) * TWO_PI_MHZ for e in eta),
                   mass, coupling_scale)

    @property
    def U0(self) -> float:
        """Single-photon light shift g0^2 / (omega_p - omega_a)."""
        return self.coupling_scale * self.g0**2 / self.detuning_atom

    @property
    def gamma_sc(self) -> float:
        """Single-photon spontaneous emission rate Gamma g0^2 / (omega_p - omega_a)^2."""
        return self.coupling_scale * self.Gamma * self.g0**2 / self.detuning_atom**2

    def saturation(self, intensity) -> np.ndarray:
        """Atomic saturation parameter for a field of ``intensity`` photons at the atom."""
        return self.g0**2 * np.asarray(intensity) / (self.detuning_atom**2 + self.Gamma**2)

    def scaled(self, geometry: CavityGeometry | None = None) -> "Scaled":
        geometry = geometry or CavityGeometry()
        k = self.kappa
        recoil = hbar / (self.mass * geometry.w0**2 * k)
        return Scaled(
            U0=self.U0 / k,
            gamma=self.gamma_sc / k,
            Delta=self.Delta / k,
            eta=np.array(self.eta) / k,
            recoil=recoil,
            kw0=geometry.kw0,
        )

    def to_dict(self) -> dict:
        return {
            "g0": repr(self.g0), "Gamma": repr(self.Gamma), "kappa": repr(self.kappa),
            "Delta": repr(self.Delta), "detuning_atom": repr(self.detuning_atom),
            "eta": [repr(complex(e)) for e in self.eta], "mass": repr(self.mass),
            "coupling_scale": repr(self.coupling_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemParams":
        return cls(
            float(d["g0"]), float(d["Gamma"]), float(d["kappa"]), float(d["Delta"]),
            float(d["detuning_atom"]), tuple(complex(e) for e in d["eta"]),
            float(d["mass"]), float(d["coupling_scale"]),
        )


@dataclass(frozen=True)
class Scaled:
    """Dimensionless parameters (rates in units of kappa)."""

    U0: float
    gamma: float
    Delta: float
    eta: np.ndarray = field(repr=False)
    recoil: float  # hbar / (M w0^2 kappa)
    kw0: float

    @property
    def decay(self) -> complex:
        """kappa - i Delta in units of kappa."""
        return 1.0 - 1j * self.Delta

    @property
    def coupling(self) -> complex:
        """i U0 + gamma in units of kappa."""
        return 1j * self.U0 + self.gamma


def digest(*parts: dict) -> str:
    """Stable short hash of JSON-serializable dictionaries."""
    text = json.dumps(parts, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
