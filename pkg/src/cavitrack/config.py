"""Run configuration: INI text with one section per pipeline stage.

Frequencies are ordinary frequencies in MHz (multiplied by 2 pi internally),
lengths in micrometres or nanometres as the key suffix says, times in units
of 1/kappa and transverse positions in units of w0. Every key has a default;
the resolved file written next to each output lists all of them, so a run
can be repeated from that file alone.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .detector import DetectorConfig
from .dynamics import MAX_DT, AtomState, NoiseConfig, entry_state
from .modes import CavityGeometry, ModeIndex, ModeSet
from .params import TWO_PI_MHZ, RB87_MASS, SystemParams, digest


class ConfigError(ValueError):
    """Invalid configuration; the message names the file line when known."""


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, complex):
        return repr(v.real) if v.imag == 0 else repr(v).strip("()")
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass
class PhysicsSection:
    g0_mhz: float = 16.0
    gamma_mhz: float = 3.0  # atomic linewidth Gamma
    kappa_mhz: float = 1.5
    delta_mhz: float = -2.25  # pump - cavity detuning
    atom_detuning_mhz: float = -114.0  # pump - atom detuning
    eta_mhz: tuple = (6.4, 0.0, 0.0)  # one pump amplitude per mode, may be complex
    mass_kg: float = RB87_MASS
    coupling_scale: float = 1.0


@dataclass
class GeometrySection:
    w0_um: float = 29.0
    wavelength_nm: float = 780.0
    length_um: float = 100.0


@dataclass
class ModesSection:
    modes: tuple = ("1:0", "0:-2", "0:2")
    convention: str = "sqrt2"


@dataclass
class DynamicsSection:
    dt: float = 0.01
    duration: float = 5300.0
    record_stride: int = 10
    speed_m_s: float = 0.12
    x_offset: float = 0.3
    y_start: float = -2.0
    box: float = 5.0


@dataclass
class NoiseSection:
    enabled: bool = True
    momentum_diffusion_scale: float = 1.0
    field_noise_scale: float = 1.0
    seed: int = 1


@dataclass
class DetectorSection:
    n_sectors: int = 16
    window: float = 100.0
    efficiency: float = 1.0
    pair_sum: bool = True
    seed: int = 2
    r_max: float = 5.0
    vacuum_offset: str = "auto"  # "auto": half the field noise scale of the trajectory


@dataclass
class ReconstructionSection:
    extent: float = 1.5
    spacing: float = 0.025
    quantile: float = 0.95
    gate: float = 0.5
    predict: str = "velocity"
    max_trim: float = 0.25
    rho_max: float = 0.7
    seeded: bool = True  # start branch selection at the configured entry point


@dataclass
class OutputSection:
    dir: str = "out"


SECTIONS = {
    "physics": PhysicsSection,
    "geometry": GeometrySection,
    "modes": ModesSection,
    "dynamics": DynamicsSection,
    "noise": NoiseSection,
    "detector": DetectorSection,
    "reconstruction": ReconstructionSection,
    "output": OutputSection,
}


@dataclass
class RunConfig:
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    modes: ModesSection = field(default_factory=ModesSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    reconstruction: ReconstructionSection = field(default_factory=ReconstructionSection)
    output: OutputSection = field(default_factory=OutputSection)

    # -- serialization -------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            sec = getattr(self, name)
            lines.append(f"[{name}]")
            lines += [f"{f.name} = {_fmt(getattr(sec, f.name))}" for f in fields(sec)]
            lines.append("")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {name: {f.name: _fmt(getattr(getattr(self, name), f.name)) for f in fields(getattr(self, name))}
                for name in SECTIONS}

    @property
    def hash(self) -> str:
        """Digest of everything that affects results (the output location does not)."""
        d = self.to_dict()
        d.pop("output")
        return digest(d)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(f"# resolved configuration, hash {self.hash}\n" + self.to_text())
        return path

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None
        lines = _line_index(text)
        cfg = cls()
        for name in parser.sections():
            if name not in SECTIONS:
                raise ConfigError(f"{source}:{lines.get((name, None), '?')}: unknown section [{name}]")
            sec = getattr(cfg, name)
            known = {f.name: f for f in fields(sec)}
            for key, raw in parser.items(name):
                where = f"{source}:{lines.get((name, key), '?')}"
                if key not in known:
                    raise ConfigError(f"{where}: unknown key '{key}' in [{name}]")
                try:
                    value = _parse(raw, getattr(sec, key))
                except ValueError as exc:
                    raise ConfigError(f"{where}: [{name}] {key} = {raw!r}: {exc}") from None
                setattr(sec, key, value)
        try:
            cfg.validate()
        except ConfigError as exc:
            msg = str(exc)
            m = re.match(r"\[(\w+)\] (\w+):", msg)
            if m and (m.group(1), m.group(2)) in lines:
                msg = f"{source}:{lines[(m.group(1), m.group(2))]}: {msg}"
            raise ConfigError(msg) from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, str(path))

    def override(self, section: str, **values) -> "RunConfig":
        new = replace(self, **{section: replace(getattr(self, section), **values)})
        new.validate()
        return new

    # -- validation ----------------------------------------------------
    def validate(self) -> None:
        def need(ok, sec, key, why):
            if not ok:
                raise ConfigError(f"[{sec}] {key}: {why}")

        ph, d, det, rc = self.physics, self.dynamics, self.detector, self.reconstruction
        for key in ("g0_mhz", "gamma_mhz", "kappa_mhz", "mass_kg", "coupling_scale"):
            need(getattr(ph, key) > 0, "physics", key, "must be positive")
        need(ph.atom_detuning_mhz != 0, "physics", "atom_detuning_mhz", "must be non-zero")
        need(len(ph.eta_mhz) == len(self.modes.modes), "physics", "eta_mhz",
             f"{len(ph.eta_mhz)} pump amplitudes for {len(self.modes.modes)} modes")
        for key in ("w0_um", "wavelength_nm", "length_um"):
            need(getattr(self.geometry, key) > 0, "geometry", key, "must be positive")
        need(self.modes.convention in ("sqrt2", "standard"), "modes", "convention", "must be 'sqrt2' or 'standard'")
        for m in self.modes.modes:
            try:
                ModeIndex.parse(m)
            except ValueError as exc:
                raise ConfigError(f"[modes] modes: {exc}") from None
        need(len(set(self.modes.modes)) == len(self.modes.modes), "modes", "modes", "duplicate mode")
        need(0 < d.dt <= MAX_DT, "dynamics", "dt", f"must lie in (0, {MAX_DT}]")
        need(d.duration > 0, "dynamics", "duration", "must be positive")
        need(d.record_stride >= 1, "dynamics", "record_stride", "must be >= 1")
        need(d.box > 0, "dynamics", "box", "must be positive")
        need(self.noise.momentum_diffusion_scale >= 0, "noise", "momentum_diffusion_scale", "must be >= 0")
        need(self.noise.field_noise_scale >= 0, "noise", "field_noise_scale", "must be >= 0")
        need(det.n_sectors >= 2, "detector", "n_sectors", "must be at least 2")
        need(not det.pair_sum or det.n_sectors % 2 == 0, "detector", "n_sectors", "must be even for pair sums")
        need(det.window > 0, "detector", "window", "must be positive")
        need(0 < det.efficiency <= 1, "detector", "efficiency", "must lie in (0, 1]")
        need(det.r_max >= 4, "detector", "r_max", "must be at least 4 (w0 units)")
        if det.vacuum_offset != "auto":
            try:
                ok = float(det.vacuum_offset) >= 0
            except ValueError:
                ok = False
            need(ok, "detector", "vacuum_offset", "must be 'auto' or a non-negative number")
        need(rc.extent > 0, "reconstruction", "extent", "must be positive")
        need(0 < rc.spacing < rc.extent, "reconstruction", "spacing", "must lie in (0, extent)")
        need(0 < rc.quantile < 1, "reconstruction", "quantile", "must lie in (0, 1)")
        need(rc.gate > 0, "reconstruction", "gate", "must be positive")
        need(rc.predict in ("velocity", "previous"), "reconstruction", "predict", "must be 'velocity' or 'previous'")
        need(0 <= rc.max_trim < 1, "reconstruction", "max_trim", "must lie in [0, 1)")
        need(rc.rho_max > 0, "reconstruction", "rho_max", "must be positive")

    # -- typed views ---------------------------------------------------
    def system_params(self) -> SystemParams:
        ph = self.physics
        return SystemParams.from_mhz(ph.g0_mhz, ph.gamma_mhz, ph.kappa_mhz, ph.delta_mhz, ph.atom_detuning_mhz,
                                     tuple(ph.eta_mhz), ph.mass_kg, ph.coupling_scale)

    def cavity_geometry(self) -> CavityGeometry:
        g = self.geometry
        return CavityGeometry(g.w0_um * 1e-6, g.wavelength_nm * 1e-9, g.length_um * 1e-6)

    def modeset(self) -> ModeSet:
        return ModeSet.build([ModeIndex.parse(m) for m in self.modes.modes], self.cavity_geometry(),
                             self.modes.convention)

    def noise_config(self) -> NoiseConfig:
        n = self.noise
        return NoiseConfig(n.enabled, n.momentum_diffusion_scale, n.field_noise_scale, n.seed)

    def initial_state(self) -> AtomState:
        d = self.dynamics
        return entry_state(self.cavity_geometry(), d.speed_m_s, d.x_offset, d.y_start,
                           self.physics.kappa_mhz * TWO_PI_MHZ)

    def vacuum_offset(self, noise: NoiseConfig | None = None) -> float:
        """Explicit offset, or half the field noise scale of the run that made the trajectory."""
        if self.detector.vacuum_offset != "auto":
            return float(self.detector.vacuum_offset)
        noise = noise or self.noise_config()
        return 0.5 * noise.field_noise_scale if noise.enabled else 0.0

    def detector_config(self, noise: NoiseConfig | None = None) -> DetectorConfig:
        d = self.detector
        return DetectorConfig(d.n_sectors, d.window, d.efficiency, d.pair_sum, d.seed, d.r_max,
                              self.vacuum_offset(noise))

    def two_lambda_w0(self) -> float:
        """Two optical wavelengths in units of w0."""
        return 2 * self.geometry.wavelength_nm * 1e-3 / self.geometry.w0_um


def _parse(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError("expected true or false")
    if isinstance(default, int):
        v = float(raw)
        if not v.is_integer():
            raise ValueError("expected an integer")
        return int(v)
    if isinstance(default, float):
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if isinstance(default, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if not items:
            raise ValueError("empty list")
        if default and isinstance(default[0], float):
            out = []
            for x in items:
                c = complex(x.replace(" ", ""))
                out.append(c.real if c.imag == 0 else c)
            return tuple(out)
        return tuple(items)
    return raw


def _line_index(text: str) -> dict:
    """Map ``(section, key)`` (and ``(section, None)``) to 1-based line numbers."""
    out = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, None), n)
            continue
        m = re.match(r"([^=:\s]+)\s*[=:]", s)
        if m and section is not None:
            out.setdefault((section, m.group(1)), n)
    return out
