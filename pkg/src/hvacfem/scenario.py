"""Scenario files: a single human-editable INI document describing the
floor plan, physics constants, objective weights, horizons, bounds,
occupant and seeds. Values are carried in the units of the underlying
model (already nondimensionalized where the model is; temperatures in
degC, lengths in meters, times in seconds).

Polygons are written as `rect x0 y0 x1 y1` or `poly x0 y0; x1 y1; ...`;
fans append `| dir dx dy` for the nominal force direction.
"""

import configparser
import io
from dataclasses import dataclass, field as dc_field, fields as dc_fields
from importlib import resources

import numpy as np

from .comfort import PersonalParams
from .errors import ParameterError, ScenarioError
from .geometry import FanRegion, RegionSpec


@dataclass
class Scenario:
    name: str = "scenario"
    outer: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 2)))
    regions: RegionSpec = dc_field(default_factory=RegionSpec)
    # mesh
    controller_h: float = 0.5
    plant_h: float = 0.35
    plant_dt: float = 5.0
    # physics (defaults are the reference simulation constants)
    reynolds: float = 100.0
    kappa0: float = 1e-2
    kappa_wall: float = 1e-4
    alpha_wall: float = 1e3
    t_ambient: float = 5.0
    p_ambient: float = 101300.0
    # objective weights
    eta0: float = 1.0
    eta1: float = 0.1
    eta0_prime: float = 0.1
    eta1_prime: float = 0.15
    # horizons
    delta: float = 30.0
    lookback: float = 60.0
    lookahead: float = 60.0
    eps_tol: float = 1e-6
    armijo_a: float = 0.1
    est_steps: int = 6
    ctl_steps: int = 6
    max_outer_estimation: int = 20
    max_outer_control: int = 20
    # control bounds
    g_te_min: float = -1.0
    g_te_max: float = 1.0
    g_u_min: float = -5.0
    g_u_max: float = 5.0
    # occupant
    occupant: PersonalParams = dc_field(
        default_factory=lambda: PersonalParams(metabolic_rate=64.0)
    )
    # seeds / noise
    noise_seed: int = 1234
    sensor_noise_sigma: float = 0.1

    def validate(self):
        """All semantic violations, not just the first."""
        v = []
        if self.outer.shape[0] < 4:
            v.append("domain: outer polygon needs at least 4 vertices")
        for w, nm in ((self.eta0, "eta0"), (self.eta1, "eta1"),
                      (self.eta0_prime, "eta0_prime"), (self.eta1_prime, "eta1_prime")):
            if w <= 0:
                v.append(f"weights: {nm} must be positive (got {w!r})")
        if self.reynolds <= 0:
            v.append("physics: reynolds must be positive")
        for k, nm in ((self.kappa0, "kappa0"), (self.kappa_wall, "kappa_wall"),
                      (self.alpha_wall, "alpha_wall")):
            if k <= 0:
                v.append(f"physics: {nm} must be positive")
        if not (self.delta > 0):
            v.append("horizons: delta must be positive")
        if not (self.lookback > self.delta):
            v.append("horizons: lookback T must exceed delta")
        if not (self.lookahead > self.delta):
            v.append("horizons: lookahead T' must exceed delta")
        if self.eps_tol < 0:
            v.append("horizons: eps_tol must be nonnegative")
        if not (0 < self.armijo_a < 1):
            v.append("horizons: armijo_a must lie in (0, 1)")
        if self.est_steps < 1 or self.ctl_steps < 1:
            v.append("horizons: step counts must be at least 1")
        else:
            dt_c = self.lookahead / self.ctl_steps
            ratio = self.delta / dt_c
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                v.append(
                    "horizons: delta must be a whole number of control steps "
                    f"(delta={self.delta}, T'/ctl_steps={dt_c})"
                )
        if self.g_te_min >= self.g_te_max:
            v.append("bounds: g_te_min must be below g_te_max")
        if self.g_u_min >= self.g_u_max:
            v.append("bounds: g_u_min must be below g_u_max")
        if self.controller_h <= 0 or self.plant_h <= 0 or self.plant_dt <= 0:
            v.append("mesh: controller_h, plant_h, plant_dt must be positive")
        if self.sensor_noise_sigma < 0:
            v.append("seeds: sensor_noise_sigma must be nonnegative")
        return v


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def _parse_polygon(text, where, violations):
    parts = text.split()
    try:
        if parts and parts[0] == "rect":
            x0, y0, x1, y1 = (float(p) for p in parts[1:5])
            return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        if parts and parts[0] == "poly":
            pts = [
                [float(c) for c in chunk.split()]
                for chunk in " ".join(parts[1:]).split(";")
            ]
            return np.array(pts, dtype=float).reshape(-1, 2)
    except (ValueError, IndexError):
        pass
    violations.append(f"{where}: cannot parse polygon {text!r}")
    return None


def _parse_fan(text, where, violations):
    if "|" not in text:
        violations.append(f"{where}: fan needs '| dir dx dy' (got {text!r})")
        return None
    poly_part, dir_part = (s.strip() for s in text.split("|", 1))
    poly = _parse_polygon(poly_part, where, violations)
    parts = dir_part.split()
    if len(parts) != 3 or parts[0] != "dir":
        violations.append(f"{where}: fan direction must be 'dir dx dy'")
        return None
    try:
        d = (float(parts[1]), float(parts[2]))
    except ValueError:
        violations.append(f"{where}: bad fan direction {dir_part!r}")
        return None
    if poly is None:
        return None
    return FanRegion(poly, np.array(d))


_FLOAT_KEYS = {
    ("mesh", "controller_h"): "controller_h",
    ("mesh", "plant_h"): "plant_h",
    ("mesh", "plant_dt"): "plant_dt",
    ("physics", "reynolds"): "reynolds",
    ("physics", "kappa0"): "kappa0",
    ("physics", "kappa_wall"): "kappa_wall",
    ("physics", "alpha_wall"): "alpha_wall",
    ("physics", "t_ambient"): "t_ambient",
    ("physics", "p_ambient"): "p_ambient",
    ("weights", "eta0"): "eta0",
    ("weights", "eta1"): "eta1",
    ("weights", "eta0_prime"): "eta0_prime",
    ("weights", "eta1_prime"): "eta1_prime",
    ("horizons", "delta"): "delta",
    ("horizons", "lookback"): "lookback",
    ("horizons", "lookahead"): "lookahead",
    ("horizons", "eps_tol"): "eps_tol",
    ("horizons", "armijo_a"): "armijo_a",
    ("bounds", "g_te_min"): "g_te_min",
    ("bounds", "g_te_max"): "g_te_max",
    ("bounds", "g_u_min"): "g_u_min",
    ("bounds", "g_u_max"): "g_u_max",
    ("seeds", "sensor_noise_sigma"): "sensor_noise_sigma",
}
_INT_KEYS = {
    ("horizons", "est_steps"): "est_steps",
    ("horizons", "ctl_steps"): "ctl_steps",
    ("horizons", "max_outer_estimation"): "max_outer_estimation",
    ("horizons", "max_outer_control"): "max_outer_control",
    ("seeds", "noise_seed"): "noise_seed",
}
_OCCUPANT_KEYS = (
    "metabolic_rate", "external_work", "clothing_insulation", "h_convective",
    "supply_humidity", "moisture_rate", "air_density", "fan_area", "flow_floor",
)


def parse_scenario(path):
    """Parse and validate a scenario file.

    Syntax errors are reported with their line number; semantic problems
    are collected into one ScenarioError carrying the full violation list.
    """
    with open(path) as f:
        text = f.read()
    return parse_scenario_text(text, name=str(path))


def parse_scenario_text(text, name="scenario"):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ScenarioError(
            f"{name}: syntax error at line {exc.lineno}: {exc.line.strip()!r} "
            "outside any section"
        ) from exc
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f" at line {lineno}" if lineno else ""
        raise ScenarioError(f"{name}: syntax error{where}: {exc.message}") from exc
    if not cp.sections():
        raise ScenarioError(f"{name}: syntax error at line 1: no sections found")

    violations = []
    sc = Scenario(name=name)

    for (sect, key), attr in _FLOAT_KEYS.items():
        if cp.has_option(sect, key):
            try:
                setattr(sc, attr, float(cp.get(sect, key)))
            except ValueError:
                violations.append(f"[{sect}] {key}: not a number")
    for (sect, key), attr in _INT_KEYS.items():
        if cp.has_option(sect, key):
            try:
                setattr(sc, attr, int(cp.get(sect, key)))
            except ValueError:
                violations.append(f"[{sect}] {key}: not an integer")

    if cp.has_option("domain", "outer"):
        poly = _parse_polygon(cp.get("domain", "outer"), "[domain] outer", violations)
        if poly is not None:
            sc.outer = poly
    else:
        violations.append("[domain] outer: missing")

    doors, walls, fans = [], [], []
    if cp.has_section("doors"):
        for key in sorted(cp.options("doors")):
            p = _parse_polygon(cp.get("doors", key), f"[doors] {key}", violations)
            if p is not None:
                doors.append(p)
    if cp.has_section("walls"):
        for key in sorted(cp.options("walls")):
            p = _parse_polygon(cp.get("walls", key), f"[walls] {key}", violations)
            if p is not None:
                walls.append(p)
    if cp.has_section("fans"):
        for key in sorted(cp.options("fans")):
            f = _parse_fan(cp.get("fans", key), f"[fans] {key}", violations)
            if f is not None:
                fans.append(f)
    target = None
    if cp.has_option("target", "region"):
        target = _parse_polygon(cp.get("target", "region"), "[target] region", violations)

    sensor_pts = np.zeros((0, 2))
    radius = 1.0
    if cp.has_section("sensors"):
        if cp.has_option("sensors", "radius"):
            try:
                radius = float(cp.get("sensors", "radius"))
            except ValueError:
                violations.append("[sensors] radius: not a number")
        if cp.has_option("sensors", "positions"):
            try:
                sensor_pts = np.array(
                    [
                        [float(c) for c in chunk.split()]
                        for chunk in cp.get("sensors", "positions").split(";")
                    ]
                ).reshape(-1, 2)
            except ValueError:
                violations.append("[sensors] positions: cannot parse")
    if radius <= 0:
        violations.append("[sensors] radius: must be positive")
        radius = 1.0

    try:
        sc.regions = RegionSpec(
            door_regions=tuple(doors),
            fan_regions=tuple(fans),
            sensor_points=sensor_pts,
            sensor_radius=radius,
            target_region=target,
            wall_regions=tuple(walls),
        )
    except Exception as exc:  # geometry-level validation
        violations.append(f"regions: {exc}")

    occ = {}
    if cp.has_section("occupant"):
        for key in _OCCUPANT_KEYS:
            if cp.has_option("occupant", key):
                try:
                    occ[key] = float(cp.get("occupant", key))
                except ValueError:
                    violations.append(f"[occupant] {key}: not a number")
    try:
        sc.occupant = PersonalParams(**{"metabolic_rate": 64.0, **occ})
    except ParameterError as exc:
        violations.append(f"occupant: {exc}")

    violations.extend(sc.validate())
    if violations:
        raise ScenarioError(
            f"{name}: {len(violations)} violation(s):\n  - " + "\n  - ".join(violations),
            violations=violations,
        )
    return sc


# ---------------------------------------------------------------------------
# serialization (round-trips losslessly through repr-exact floats)
# ---------------------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def _poly_str(poly):
    p = np.asarray(poly)
    if p.shape[0] == 4 and p[0, 0] == p[3, 0] and p[0, 1] == p[1, 1] \
            and p[1, 0] == p[2, 0] and p[2, 1] == p[3, 1]:
        return f"rect {_fmt(p[0,0])} {_fmt(p[0,1])} {_fmt(p[2,0])} {_fmt(p[2,1])}"
    return "poly " + " ; ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in p)


def write_scenario(sc, path):
    out = io.StringIO()
    out.write(f"# hvacfem scenario: {sc.name}\n")
    out.write("[domain]\n")
    out.write(f"outer = {_poly_str(sc.outer)}\n\n")
    out.write("[mesh]\n")
    for k in ("controller_h", "plant_h", "plant_dt"):
        out.write(f"{k} = {_fmt(getattr(sc, k))}\n")
    out.write("\n[physics]\n")
    for k in ("reynolds", "kappa0", "kappa_wall", "alpha_wall", "t_ambient", "p_ambient"):
        out.write(f"{k} = {_fmt(getattr(sc, k))}\n")
    out.write("\n[weights]\n")
    for k in ("eta0", "eta1", "eta0_prime", "eta1_prime"):
        out.write(f"{k} = {_fmt(getattr(sc, k))}\n")
    out.write("\n[horizons]\n")
    for k in ("delta", "lookback", "lookahead", "eps_tol", "armijo_a"):
        out.write(f"{k} = {_fmt(getattr(sc, k))}\n")
    for k in ("est_steps", "ctl_steps", "max_outer_estimation", "max_outer_control"):
        out.write(f"{k} = {getattr(sc, k)}\n")
    out.write("\n[bounds]\n")
    for k in ("g_te_min", "g_te_max", "g_u_min", "g_u_max"):
        out.write(f"{k} = {_fmt(getattr(sc, k))}\n")
    out.write("\n[occupant]\n")
    for k in _OCCUPANT_KEYS:
        out.write(f"{k} = {_fmt(getattr(sc.occupant, k))}\n")
    out.write("\n[sensors]\n")
    out.write(f"radius = {_fmt(sc.regions.sensor_radius)}\n")
    if sc.regions.n_sensors:
        out.write(
            "positions = "
            + " ; ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in sc.regions.sensor_points)
            + "\n"
        )
    if sc.regions.door_regions:
        out.write("\n[doors]\n")
        for i, p in enumerate(sc.regions.door_regions):
            out.write(f"door{i} = {_poly_str(p)}\n")
    if sc.regions.wall_regions:
        out.write("\n[walls]\n")
        for i, p in enumerate(sc.regions.wall_regions):
            out.write(f"wall{i} = {_poly_str(p)}\n")
    if sc.regions.fan_regions:
        out.write("\n[fans]\n")
        for i, f in enumerate(sc.regions.fan_regions):
            out.write(
                f"fan{i} = {_poly_str(f.polygon)} | dir {_fmt(f.direction[0])} "
                f"{_fmt(f.direction[1])}\n"
            )
    if sc.regions.target_region is not None:
        out.write("\n[target]\n")
        out.write(f"region = {_poly_str(sc.regions.target_region)}\n")
    out.write("\n[seeds]\n")
    out.write(f"noise_seed = {sc.noise_seed}\n")
    out.write(f"sensor_noise_sigma = {_fmt(sc.sensor_noise_sigma)}\n")
    with open(path, "w") as fh:
        fh.write(out.getvalue())


def builtin_scenario_path(name):
    """Path of a bundled scenario ('paper_apartment', 'two_room')."""
    return resources.files("hvacfem") / "scenarios" / f"{name}.scn"


def load_builtin(name):
    path = builtin_scenario_path(name)
    return parse_scenario_text(path.read_text(), name=name)
