"""Flat ``section.key = value`` run configuration.

Every key has a documented default, so an empty file describes the flag
benchmark.  ``render_config`` writes the complete canonical form; parsing
that text again gives back an equal ``Config``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable

from .assembly import (
    BoundaryConditions,
    PhysicalParams,
    benchmark_conditions,
    channel_conditions,
    closed_conditions,
)
from .mesh import Boundary, GeometryParams, Mesh, generate_benchmark_mesh, load_mesh, rectangle_mesh

__all__ = [
    "ConfigError",
    "Config",
    "Numerics",
    "MeshSpec",
    "InflowSpec",
    "ProbeSpec",
    "parse_config",
    "render_config",
    "expand_sweep",
    "KEYS",
]


class ConfigError(ValueError):
    """Bad configuration text; ``lineno`` is 0 for errors not tied to a line."""

    def __init__(self, message: str, lineno: int = 0):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


# ---------------------------------------------------------------------------
# value codecs
# ---------------------------------------------------------------------------


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _floats(text: str) -> tuple[float, ...]:
    if not text.strip():
        return ()
    return tuple(float(t) for t in text.split(","))


def _points(text: str) -> tuple[tuple[float, float], ...]:
    out = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        xy = _floats(chunk)
        if len(xy) != 2:
            raise ValueError(f"point {chunk!r} needs two coordinates")
        out.append(xy)
    return tuple(out)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"{text!r} not in {{{', '.join(options)}}}")
        return text

    return parse


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(_fmt(v) for v in value)
        return ", ".join(_fmt(float(v)) for v in value)
    return str(value)


_GEOM = GeometryParams()
_PHYS = PhysicalParams()

# key -> (parser, default)
KEYS: dict[str, tuple[Callable[[str], Any], Any]] = {
    "geometry.kind": (_choice("benchmark", "channel", "box"), "benchmark"),
    **{f"geometry.{f.name}": (_float, getattr(_GEOM, f.name)) for f in fields(GeometryParams)},
    "geometry.nx": (_int, 40),
    "geometry.ny": (_int, 10),
    "geometry.mesh_file": (str, ""),
    "params.rho_f": (_float, _PHYS.rho_f),
    "params.rho_s": (_float, _PHYS.rho_s),
    "params.mu": (_float, _PHYS.mu),
    "params.mu_r": (_float, _PHYS.mu_r),
    "params.lambda1": (_float, _PHYS.lambda1),
    "params.lambda2": (_float, _PHYS.lambda2),
    "params.micro_inertia": (_float, _PHYS.micro_inertia),
    "params.c3": (_float, _PHYS.c3),
    "params.c3_source": (_choice("override", "density"), "override"),
    "params.c1": (_float, 1.0e6),
    "params.fx": (_float, 0.0),
    "params.fy": (_float, 0.0),
    "params.g": (_float, 0.0),
    "params.viscous_in_solid": (_bool, True),
    "numerics.dt": (_float, 0.005),
    "numerics.T": (_float, 3.0),
    "numerics.level": (_int, 0),
    "numerics.solver": (_choice("auto", "direct", "pardiso", "gmres"), "auto"),
    "numerics.zeta": (_float, _PHYS.zeta),
    "numerics.snapshot_every": (_int, 0),
    "numerics.save_mesh": (_bool, False),
    "bcs.kind": (_choice("auto", "benchmark", "channel", "closed"), "auto"),
    "bcs.U_bar": (_float, 2.0),
    "bcs.omega_inlet": (_float, 0.0),
    "bcs.ramp_time": (_float, 0.0),
    "probes.control_point": (_floats, ()),
    "probes.points": (_points, ()),
    "probes.lines": (_floats, (0.7,)),
    "probes.line_samples": (_int, 201),
    "probes.average_from": (_float, -1.0),
}


@dataclass(frozen=True)
class MeshSpec:
    kind: str = "benchmark"
    nx: int = 40
    ny: int = 10
    mesh_file: str = ""


@dataclass(frozen=True)
class Numerics:
    dt: float = 0.005
    T: float = 3.0
    level: int = 0
    solver: str = "auto"
    zeta: float = _PHYS.zeta
    snapshot_every: int = 0
    save_mesh: bool = False

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass(frozen=True)
class InflowSpec:
    kind: str = "auto"
    U_bar: float = 2.0
    omega_inlet: float = 0.0
    ramp_time: float = 0.0


@dataclass(frozen=True)
class ProbeSpec:
    control_point: tuple[float, ...] = ()  # empty: the flag tip A0
    points: tuple[tuple[float, float], ...] = ()
    lines: tuple[float, ...] = (0.7,)
    line_samples: int = 201
    average_from: float = -1.0  # < 0: no time-averaged profiles


@dataclass(frozen=True)
class Config:
    geometry: GeometryParams = field(default_factory=GeometryParams)
    mesh: MeshSpec = field(default_factory=MeshSpec)
    params: PhysicalParams = field(default_factory=PhysicalParams)
    numerics: Numerics = field(default_factory=Numerics)
    bcs: InflowSpec = field(default_factory=InflowSpec)
    probes: ProbeSpec = field(default_factory=ProbeSpec)
    sweep: tuple[tuple[str, tuple[str, ...]], ...] = ()
    values: dict = field(default_factory=dict, compare=False, repr=False)

    # -- derived objects ---------------------------------------------------

    @property
    def control_point(self) -> tuple[float, float]:
        if self.probes.control_point:
            return tuple(self.probes.control_point)
        if self.mesh.kind == "benchmark":
            return self.geometry.A0
        return (self.geometry.L / 2, self.geometry.H / 2)

    def build_mesh(self) -> Mesh:
        if self.mesh.mesh_file:
            return load_mesh(self.mesh.mesh_file)
        g = self.geometry
        if self.mesh.kind == "benchmark":
            return generate_benchmark_mesh(g, self.numerics.level)
        scale = 2**self.numerics.level
        nx, ny = self.mesh.nx * scale, self.mesh.ny * scale
        if self.mesh.kind == "channel":
            return rectangle_mesh(g.L, g.H, nx, ny)
        walls = {s: Boundary.WALL for s in ("left", "right", "bottom", "top")}
        return rectangle_mesh(g.L, g.H, nx, ny, labels=walls)

    def boundary_conditions(self) -> BoundaryConditions:
        kind = self.bcs.kind
        if kind == "auto":
            kind = {"benchmark": "benchmark", "channel": "channel", "box": "closed"}[self.mesh.kind]
        if kind == "benchmark":
            return benchmark_conditions(self.bcs.U_bar, self.geometry.H, self.bcs.omega_inlet, self.bcs.ramp_time)
        if kind == "channel":
            return channel_conditions()
        return closed_conditions()


def _build(values: dict[str, Any], sweep, lineno_of: dict[str, int]) -> Config:
    v = values

    def section(prefix):
        return {k.split(".", 1)[1]: val for k, val in v.items() if k.startswith(prefix + ".")}

    geometry = GeometryParams(**{f.name: v[f"geometry.{f.name}"] for f in fields(GeometryParams)})
    try:
        geometry.check()
    except ValueError as exc:
        raise ConfigError(f"geometry: {exc}") from exc

    c3 = v["params.c3"]
    if v["params.c3_source"] == "density":
        c3 = v["params.rho_s"] * v["params.c1"]
    params = PhysicalParams(
        rho_f=v["params.rho_f"],
        rho_s=v["params.rho_s"],
        mu=v["params.mu"],
        mu_r=v["params.mu_r"],
        lambda1=v["params.lambda1"],
        lambda2=v["params.lambda2"],
        micro_inertia=v["params.micro_inertia"],
        c3=c3,
        zeta=v["numerics.zeta"],
        f=(v["params.fx"], v["params.fy"]),
        g=v["params.g"],
        viscous_in_solid=v["params.viscous_in_solid"],
    )
    bad = params.violations()
    if bad:
        first = bad[0].split()
        name = "zeta" if "zeta" in first else first[0]
        key = "numerics.zeta" if name == "zeta" else f"params.{name}"
        line = lineno_of.get(key, 0)
        raise ConfigError("invariant violation: " + "; ".join(bad), line)

    mesh = MeshSpec(v["geometry.kind"], v["geometry.nx"], v["geometry.ny"], v["geometry.mesh_file"])
    if mesh.nx < 1 or mesh.ny < 1:
        raise ConfigError("geometry.nx and geometry.ny must be positive", lineno_of.get("geometry.nx", 0))
    num = Numerics(**{k: section("numerics")[k] for k in (f.name for f in fields(Numerics))})
    if not num.dt > 0:
        raise ConfigError("invariant violation: dt > 0 required", lineno_of.get("numerics.dt", 0))
    if num.T < 0:
        raise ConfigError("invariant violation: T >= 0 required", lineno_of.get("numerics.T", 0))
    if num.level < 0 or num.snapshot_every < 0:
        raise ConfigError("numerics.level and numerics.snapshot_every must be >= 0")
    bcs = InflowSpec(**section("bcs"))
    probes = ProbeSpec(**section("probes"))
    if probes.control_point and len(probes.control_point) != 2:
        raise ConfigError("probes.control_point needs two coordinates", lineno_of.get("probes.control_point", 0))
    if probes.line_samples < 2:
        raise ConfigError("probes.line_samples must be at least 2")
    return Config(geometry, mesh, params, num, bcs, probes, tuple(sweep), dict(values))


def parse_config(text: str) -> Config:
    """Parse configuration text.

    Lines are ``key = value``; ``#`` starts a comment.  ``sweep.<key> =
    v1, v2, ...`` declares a parameter sweep over any other key.
    """
    values = {k: default for k, (_, default) in KEYS.items()}
    seen: dict[str, int] = {}
    sweep = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, _, val = (s.strip() for s in line.partition("="))
        if not key:
            raise ConfigError("missing key", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        if key.startswith("sweep."):
            target = key[len("sweep."):]
            if target not in KEYS:
                raise ConfigError(f"sweep over unknown key {target!r}", lineno)
            items = tuple(s.strip() for s in val.split(","))
            if not all(items):
                raise ConfigError("empty sweep value", lineno)
            for item in items:
                try:
                    KEYS[target][0](item)
                except ValueError as exc:
                    raise ConfigError(f"{key}: {exc}", lineno) from exc
            sweep.append((target, items))
            continue
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        try:
            values[key] = KEYS[key][0](val)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", lineno) from exc
    return _build(values, sweep, seen)


def render_config(config: Config) -> str:
    """Canonical text listing every key; a fixed point of parse/render."""
    values = config.values or {k: d for k, (_, d) in KEYS.items()}
    lines = [f"{k} = {_fmt(values[k])}" for k in KEYS]
    lines += [f"sweep.{k} = {', '.join(vals)}" for k, vals in config.sweep]
    return "\n".join(lines) + "\n"


def expand_sweep(config: Config) -> list[tuple[str, Config]]:
    """Cartesian product of the sweep axes as ``(label, config)`` pairs."""
    if not config.sweep:
        return [("base", config)]
    keys = [k for k, _ in config.sweep]
    out = []
    for combo in itertools.product(*(vals for _, vals in config.sweep)):
        values = dict(config.values)
        for k, text in zip(keys, combo):
            values[k] = KEYS[k][0](text)
        label = "_".join(f"{k.split('.')[-1]}={t}" for k, t in zip(keys, combo))
        out.append((label, _build(values, (), {})))
    return out


def with_values(config: Config, **overrides) -> Config:
    """Copy of ``config`` with dotted keys overridden (``params__mu_r=1``)."""
    values = dict(config.values or {k: d for k, (_, d) in KEYS.items()})
    for k, val in overrides.items():
        key = k.replace("__", ".")
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = val
    return _build(values, config.sweep, {})
