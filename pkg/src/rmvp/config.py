"""Study configuration: a YAML file with a fixed key set (all quantities in SI units).

Example::

    study: verify
    geometry:
      r_cyl: 0.012
      h_cyl: 0.06
      r_interface: 0.0205
    coil:
      radius: 0.025
      current: 320.0
      frequency: 200.0
    degrees: [1, 2]
    levels: [1, 2, 3, 4]

Omitted keys take the defaults below; unknown keys raise ``ConfigError``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

STUDIES = ("verify", "quad", "trace", "helix")


class ConfigError(ValueError):
    pass


@dataclass
class GeometryConfig:
    r_cyl: float = 0.012
    h_cyl: float = 0.06
    r_interface: float = 0.0205
    box_half_width: float = 0.038
    gamma_half_height: float | None = None
    box_half_height: float | None = None
    gamma_shape: str = "cylinder"
    symmetry: str = "octant"
    sigma: float = 35e6
    mu_r: float = 1.0
    divisions: dict = field(default_factory=lambda: {"angular": 1, "radial": [1, 1, 1], "axial": [3, 1, 1]})


@dataclass
class CoilConfig:
    kind: str = "circle"          # circle | helix
    radius: float = 0.025
    turns: int = 1
    current: float = 320.0        # amplitude [A]; for a circle the ampere-turns are turns * current
    frequency: float = 200.0      # [Hz]
    z: float = 0.0
    pitch: float = 0.0003         # helix only [m per turn]
    points_per_turn: int = 96     # helix interpolation density


@dataclass
class QuadConfig:
    n_quad: int = 64
    rule: str = "trapezoidal"
    adaptive: bool = False
    adaptive_tol: float = 1e-10
    adaptive_max: int = 4096
    study_ns: list = field(default_factory=lambda: [2, 4, 8, 16, 32, 64, 128])
    convergence_ns: list = field(default_factory=lambda: [26, 32, 64, 128])
    volume_subdivisions: int = 4
    volume_order: int = 8


@dataclass
class StudyConfig:
    study: str = "verify"
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    coil: CoilConfig = field(default_factory=CoilConfig)
    quadrature: QuadConfig = field(default_factory=QuadConfig)
    degrees: list = field(default_factory=lambda: [1, 2])
    levels: list = field(default_factory=lambda: [1, 2, 3, 4])
    method: str = "direct-B"      # direct-B | projected-A
    pairing: str = "variational"  # variational | pointwise
    sign: int = -1                # time convention: (nu curl A, curl v) + sign * j omega (sigma A, v)
    reference_extra_levels: int = 2
    reference_degree_offset: int = 1
    line_points: int = 201        # helix study: samples along the x axis
    output_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self):
        g, c, q = self.geometry, self.coil, self.quadrature
        if self.study not in STUDIES:
            raise ConfigError(f"study must be one of {STUDIES}, got {self.study!r}")
        lengths = {"r_cyl": g.r_cyl, "h_cyl": g.h_cyl, "r_interface": g.r_interface,
                   "box_half_width": g.box_half_width, "coil.radius": c.radius}
        for k in ("gamma_half_height", "box_half_height"):
            if getattr(g, k) is not None:
                lengths[k] = getattr(g, k)
        for k, v in lengths.items():
            if not v > 0:
                raise ConfigError(f"{k} must be positive, got {v}")
        if c.kind == "helix" and not c.pitch >= 0:
            raise ConfigError("coil.pitch must be nonnegative")
        if c.frequency < 0:
            raise ConfigError("frequency must be nonnegative")
        if c.kind not in ("circle", "helix"):
            raise ConfigError(f"coil.kind must be circle or helix, got {c.kind!r}")
        if c.turns < 0:
            raise ConfigError("coil.turns must be nonnegative")
        if g.sigma < 0 or g.mu_r <= 0:
            raise ConfigError("need sigma >= 0 and mu_r > 0")
        if not self.degrees or not set(self.degrees) <= {1, 2, 3}:
            raise ConfigError(f"degrees must be a nonempty subset of {{1, 2, 3}}, got {self.degrees}")
        if not self.levels or min(self.levels) < 1:
            raise ConfigError("levels must be positive integers")
        if q.rule not in ("trapezoidal", "gauss") or q.n_quad < 2:
            raise ConfigError("quadrature.rule must be trapezoidal|gauss with n_quad >= 2")
        if self.method not in ("direct-B", "projected-A"):
            raise ConfigError(f"unknown K_g method {self.method!r}")
        if self.pairing not in ("pointwise", "variational"):
            raise ConfigError(f"unknown pairing {self.pairing!r}")
        if self.sign not in (-1, 1):
            raise ConfigError("sign must be -1 or +1")
        if self.study == "trace" and min(self.degrees) < 2:
            raise ConfigError("the trace study needs p >= 2 (no degree-0 trace space)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def header_lines(self) -> list[str]:
        """The resolved configuration as ``# ``-prefixed JSON lines."""
        text = json.dumps(self.to_dict(), sort_keys=True, indent=1)
        return ["# " + line for line in text.splitlines()]


_SECTIONS = {"geometry": GeometryConfig, "coil": CoilConfig, "quadrature": QuadConfig}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        if k in _SECTIONS and cls is StudyConfig:
            kwargs[k] = _build(_SECTIONS[k], v or {}, k)
        else:
            kwargs[k] = v
    if cls is GeometryConfig and "divisions" in kwargs:
        div = GeometryConfig().divisions
        extra = sorted(set(kwargs["divisions"]) - set(div))
        if extra:
            raise ConfigError(f"unknown key(s) in geometry.divisions: {', '.join(extra)}")
        div.update(kwargs["divisions"])
        kwargs["divisions"] = div
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(data: dict) -> StudyConfig:
    return _build(StudyConfig, dict(data or {}), "")


def load_config(path) -> StudyConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data or {})
