#
# For licensing see accompanying LICENSE.md file.
# Copyright (C) 2022 Apple Inc. All Rights Reserved.
#

import copy
import json
import logging

logging.basicConfig()
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

import numpy as np
from typing import Any, Dict, Optional, Sequence, Tuple

from python_xls_topopt.elasticity import (
    DEFAULT_INPUT_SPRING_XX,
    DEFAULT_OUTPUT_SPRING_XX,
    DEFAULT_PCG_RTOL,
    DEFAULT_POISSON_RATIO,
    LinearSolver,
    MaterialCatalog,
)
from python_xls_topopt.evolution import DEFAULT_TAU, DEFAULT_TIME_STEP, EvolutionParams, PidGains
from python_xls_topopt.mesh import BoundaryKind, BoundaryTag, Region
from python_xls_topopt.multiphase import (
    DEFAULT_STABILIZER,
    DEFAULT_TRANSITION_WIDTH,
    SmoothingParams,
)
from python_xls_topopt.optimizer import (
    BoundarySpec,
    InertiaSpec,
    InitialConfiguration,
    MeshSpec,
    NondesignRegion,
    ObjectiveKind,
    ProblemSpec,
    Schedule,
    SolverOptions,
)
from python_xls_topopt.sensitivity import DEFAULT_FILTER_COEFFICIENT

_REQUIRED = object()


class ConfigError(ValueError):
    """ Problem-file error naming the offending dotted key and, when it can be
    found in the source text, its 1-based line
    """

    def __init__(self, message: str, key: Optional[str] = None,
                 text: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line if line is not None else _locate(key, text)
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if key:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


def _locate(key: Optional[str], text: Optional[str]) -> Optional[int]:
    """ Line of the last component of `key`, found by walking its parents
    through the text in order
    """
    if not key or not text:
        return None
    pos, found = 0, False
    for part in key.split("."):
        if part.isdigit():
            continue
        idx = text.find(f'"{part}"', pos)
        if idx < 0:
            break
        pos, found = idx, True
    return text.count("\n", 0, pos) + 1 if found else None


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class _Section:
    """ Reader over one JSON object that tracks consumed keys so that unknown
    keys can be rejected
    """

    def __init__(self, data: Any, path: str, text: Optional[str]):
        if not isinstance(data, dict):
            raise ConfigError(f"Expected a section (object), got {type(data).__name__}",
                              path or None, text)
        self.data = data
        self.path = path
        self.text = text
        self.used = set()

    def key(self, name) -> str:
        return f"{self.path}.{name}" if self.path else str(name)

    def error(self, name, message) -> ConfigError:
        return ConfigError(message, self.key(name), self.text)

    def raw(self, name, default=_REQUIRED):
        self.used.add(name)
        if name not in self.data or self.data[name] is None:
            if default is _REQUIRED:
                raise self.error(name, "Missing required key")
            return default
        return self.data[name]

    def number(self, name, default=_REQUIRED) -> Optional[float]:
        value = self.raw(name, default)
        if value is default:
            return value
        if not _is_number(value):
            raise self.error(name, f"Expected a number, got {value!r}")
        return float(value)

    def integer(self, name, default=_REQUIRED) -> Optional[int]:
        value = self.raw(name, default)
        if value is default:
            return value
        if not isinstance(value, int) or isinstance(value, bool):
            raise self.error(name, f"Expected an integer, got {value!r}")
        return value

    def boolean(self, name, default=_REQUIRED) -> Optional[bool]:
        value = self.raw(name, default)
        if value is default:
            return value
        if not isinstance(value, bool):
            raise self.error(name, f"Expected true or false, got {value!r}")
        return value

    def string(self, name, default=_REQUIRED) -> Optional[str]:
        value = self.raw(name, default)
        if value is default:
            return value
        if not isinstance(value, str):
            raise self.error(name, f"Expected a string, got {value!r}")
        return value

    def numbers(self, name, default=_REQUIRED, length=None) -> Optional[Tuple[float, ...]]:
        value = self.raw(name, default)
        if value is default:
            return value
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise self.error(name, f"Expected a list of numbers, got {value!r}")
        if length is not None and len(value) != length:
            raise self.error(name, f"Expected {length} values, got {len(value)}")
        return tuple(float(v) for v in value)

    def integers(self, name, default=_REQUIRED, length=None) -> Optional[Tuple[int, ...]]:
        value = self.raw(name, default)
        if value is default:
            return value
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise self.error(name, f"Expected a list of integers, got {value!r}")
        if length is not None and len(value) != length:
            raise self.error(name, f"Expected {length} values, got {len(value)}")
        return tuple(value)

    def choice(self, name, enum, default=_REQUIRED):
        value = self.string(name, default)
        if value is default:
            return value
        try:
            return enum(value)
        except ValueError:
            raise self.error(
                name, f"Expected one of {[e.value for e in enum]}, got {value!r}") from None

    def region(self, name, dim) -> Region:
        value = self.raw(name)
        if not isinstance(value, dict):
            raise self.error(name, f"Expected a region object, got {value!r}")
        try:
            return Region.from_dict(value, dim)
        except (TypeError, ValueError) as e:
            raise self.error(name, str(e)) from None

    def section(self, name) -> "_Section":
        return _Section(self.raw(name, {}), self.key(name), self.text)

    def items(self, name):
        value = self.raw(name, [])
        if not isinstance(value, list):
            raise self.error(name, f"Expected a list, got {value!r}")
        return [_Section(v, self.key(f"{name}.{k}"), self.text) for k, v in enumerate(value)]

    def finish(self):
        unknown = [k for k in self.data if k not in self.used]
        if unknown:
            raise self.error(unknown[0], f"Unknown key (allowed: {sorted(self.used)})")


def _pair_table(section: _Section, name: str, n_phases: int, default,
                trailing: Tuple[int, ...] = ()) -> Optional[np.ndarray]:
    """ Symmetric (M, M, *trailing) table from a scalar / vector applied to
    every pair, or an object {"default": ..., "i-j": ...}
    """
    value = section.raw(name, None)
    if value is None:
        if default is None:
            return None
        return np.broadcast_to(np.asarray(default, dtype=np.float64),
                               (n_phases, n_phases) + trailing).copy()

    def entry(v, key):
        array = np.asarray(v, dtype=np.float64) if (
            _is_number(v) or isinstance(v, list) and all(_is_number(x) for x in v)) else None
        if array is None or array.shape != trailing:
            raise section.error(key, f"Expected a value of shape {trailing}, got {v!r}")
        return array

    if not isinstance(value, dict):
        return np.broadcast_to(entry(value, name), (n_phases, n_phases) + trailing).copy()

    base = entry(value["default"], f"{name}.default") if "default" in value else default
    if base is None:
        raise section.error(f"{name}.default", "Missing required key")
    table = np.broadcast_to(np.asarray(base, dtype=np.float64),
                            (n_phases, n_phases) + trailing).copy()
    for pair, v in value.items():
        if pair == "default":
            continue
        try:
            i, j = (int(p) for p in pair.split("-"))
        except ValueError:
            raise section.error(f"{name}.{pair}",
                                "Expected a pair key of the form 'i-j'") from None
        if not (0 <= i < n_phases and 0 <= j < n_phases and i != j):
            raise section.error(f"{name}.{pair}",
                                f"Expected distinct phases below {n_phases}, got {pair}")
        table[i, j] = table[j, i] = entry(v, f"{name}.{pair}")
    return table


def _objective(doc: _Section, dim: int):
    value = doc.raw("objective", {"kind": ObjectiveKind.COMPLIANCE.value})
    if isinstance(value, str):
        value = {"kind": value}
    section = _Section(value, "objective", doc.text)
    kind = section.choice("kind", ObjectiveKind)
    inertia = None
    if kind is ObjectiveKind.COMPLIANCE_PLUS_INERTIA:
        weight = section.number("weight")
        if weight < 0:
            raise section.error("weight", f"Expected a nonnegative weight, got {weight}")
        axis_point = section.numbers("axis_point", (0., 0., 0.), length=3)
        axis_direction = section.numbers("axis_direction", (0., 0., 1.), length=3)
        if abs(np.linalg.norm(axis_direction) - 1.) > 1e-9:
            raise section.error("axis_direction",
                                f"Expected a unit vector, got {list(axis_direction)}")
        inertia = InertiaSpec(weight, axis_point, axis_direction)
    section.finish()
    return kind, inertia


def _mesh(doc: _Section) -> MeshSpec:
    section = doc.section("mesh")
    extent = section.numbers("extent")
    dim = len(extent)
    if dim not in (2, 3):
        raise section.error("extent", f"Expected 2 or 3 extents, got {dim}")
    if min(extent) <= 0:
        raise section.error("extent", f"Expected positive extents, got {list(extent)}")
    resolution = section.integers("resolution", length=dim)
    if min(resolution) < 2:
        raise section.error("resolution",
                            f"Expected at least 2 cells per axis, got {list(resolution)}")
    origin = section.numbers("origin", None, length=dim)
    char_length = section.number("char_length", None)
    if char_length is not None and char_length <= 0:
        raise section.error("char_length", f"Expected a positive length, got {char_length}")
    section.finish()
    return MeshSpec(extent, resolution, origin, char_length)


def _materials(doc: _Section):
    section = doc.section("materials")
    phases = section.integers("phases")
    M = len(phases)
    max_volume = section.numbers("max_volume", length=M)
    for m, v in enumerate(max_volume):
        if not 0. < v <= 1.:
            raise section.error("max_volume",
                                f"Expected 0 < max volume <= 1, got {v} for phase {m}")
    densities = section.numbers("densities", None, length=M)
    poisson_ratio = section.number("poisson_ratio", DEFAULT_POISSON_RATIO)
    section.finish()
    try:
        catalog = MaterialCatalog.from_table(phases, densities, poisson_ratio)
    except ValueError as e:
        raise section.error("phases", str(e)) from None
    return catalog, max_volume


def _material_index(section: _Section, name: str, n_phases: int, default=_REQUIRED):
    m = section.integer(name, default)
    if m is not None and m is not default and not 0 <= m < n_phases:
        raise section.error(name, f"Expected a phase index below {n_phases}, got {m}")
    return m


def _boundaries(doc: _Section, dim: int, n_phases: int) -> Tuple[BoundarySpec, ...]:
    boundaries = []
    for item in doc.items("boundaries"):
        name = item.string("name")
        kind = item.choice("kind", BoundaryKind)
        region = item.region("region", dim)
        material = _material_index(item, "material", n_phases, None)
        components = item.integers("components", None)
        traction = item.numbers("traction", None, length=dim)
        stiffness = item.raw("stiffness", None)
        if stiffness is not None:
            stiffness = np.asarray(stiffness, dtype=np.float64)
            if stiffness.shape != (dim, dim):
                raise item.error("stiffness",
                                 f"Expected a {dim}x{dim} matrix, got shape {stiffness.shape}")
        item.finish()
        try:
            tag = BoundaryTag(name, kind, region, material, components)
            boundaries.append(BoundarySpec(tag, traction, stiffness))
        except ValueError as e:
            raise ConfigError(str(e), item.path, item.text) from None
    return tuple(boundaries)


def _default_boundary(doc: _Section, n_phases: int) -> BoundaryTag:
    section = doc.section("default_boundary")
    kind = section.choice("kind", BoundaryKind, BoundaryKind.FREE)
    if kind not in (BoundaryKind.FREE, BoundaryKind.MATERIAL_SPECIFIED):
        raise section.error("kind",
                            f"Expected free or material-specified, got {kind.value}")
    material = _material_index(section, "material", n_phases, None)
    section.finish()
    try:
        return BoundaryTag("default", kind, material=material)
    except ValueError as e:
        raise ConfigError(str(e), section.path, section.text) from None


def _evolution(doc: _Section, n_phases: int, dim: int) -> EvolutionParams:
    section = doc.section("evolution")
    tau = _pair_table(section, "tau", n_phases, DEFAULT_TAU)
    anisotropy = _pair_table(section, "anisotropy", n_phases, np.ones(dim), (dim, ))
    piecewise = _pair_table(section, "piecewise_anisotropy", n_phases, None, (dim, ))
    ucss = _pair_table(section, "ucss_normalization", n_phases, 1.)
    dt = section.number("dt", DEFAULT_TIME_STEP)
    ordered = section.boolean("c_all_ordered_pairs", True)

    pid = section.section("pid")
    defaults = PidGains()
    gains = PidGains(kp=pid.number("kp", defaults.kp),
                     kip=pid.number("kip", defaults.kip),
                     kd=pid.number("kd", defaults.kd),
                     kid=pid.number("kid", defaults.kid))
    pid.finish()
    section.finish()
    try:
        return EvolutionParams(tau=tau,
                               anisotropy=anisotropy,
                               piecewise_anisotropy=piecewise,
                               ucss_normalization=ucss,
                               dt=dt,
                               gains=gains,
                               c_all_ordered_pairs=ordered)
    except ValueError as e:
        raise ConfigError(str(e), "evolution", doc.text) from None


def _smoothing(doc: _Section) -> SmoothingParams:
    section = doc.section("smoothing")
    width = section.number("width", DEFAULT_TRANSITION_WIDTH)
    epsilon = section.number("epsilon", DEFAULT_STABILIZER)
    section.finish()
    try:
        return SmoothingParams(width, epsilon)
    except ValueError as e:
        raise ConfigError(str(e), "smoothing", doc.text) from None


def _initial(doc: _Section, dim: int, n_phases: int) -> InitialConfiguration:
    section = doc.section("initial")
    background = _material_index(section, "background", n_phases, None)
    regions = []
    for item in section.items("regions"):
        regions.append((item.region("region", dim), _material_index(item, "phase", n_phases)))
        item.finish()
    section.finish()
    return InitialConfiguration(background, tuple(regions))


def _nondesign(doc: _Section, dim: int, n_phases: int) -> Tuple[NondesignRegion, ...]:
    regions = []
    for item in doc.items("nondesign"):
        regions.append(NondesignRegion(item.region("region", dim),
                                       _material_index(item, "material", n_phases)))
        item.finish()
    return tuple(regions)


def _schedule(doc: _Section) -> Schedule:
    section = doc.section("schedule")
    defaults = Schedule()
    values = dict(
        max_iterations=section.integer("max_iterations", defaults.max_iterations),
        window=section.integer("window", defaults.window),
        tolerance=section.number("tolerance", defaults.tolerance),
        feasibility_tolerance=section.number("feasibility_tolerance",
                                             defaults.feasibility_tolerance),
        filter_coefficient=section.number("filter_coefficient",
                                          DEFAULT_FILTER_COEFFICIENT),
    )
    section.finish()
    try:
        return Schedule(**values)
    except ValueError as e:
        raise ConfigError(str(e), "schedule", doc.text) from None


def _solver(doc: _Section) -> SolverOptions:
    section = doc.section("solver")
    options = SolverOptions(linear_solver=section.choice("linear_solver", LinearSolver, None),
                            rtol=section.number("rtol", DEFAULT_PCG_RTOL),
                            max_iterations=section.integer("max_iterations", None))
    section.finish()
    return options


def problem_from_dict(data: Dict[str, Any], text: Optional[str] = None) -> ProblemSpec:
    """ Validated ProblemSpec from a resolved problem document
    """
    doc = _Section(data, "", text)
    name = doc.string("name", "problem")
    doc.raw("preset", None)
    mesh = _mesh(doc)
    dim = mesh.dim
    catalog, max_volume = _materials(doc)
    M = catalog.n_phases
    objective, inertia = _objective(doc, dim)

    spec_kwargs = dict(
        name=name,
        objective=objective,
        mesh=mesh,
        catalog=catalog,
        max_volume=max_volume,
        boundaries=_boundaries(doc, dim, M),
        default_boundary=_default_boundary(doc, M),
        evolution=_evolution(doc, M, dim),
        smoothing=_smoothing(doc),
        initial=_initial(doc, dim, M),
        schedule=_schedule(doc),
        solver=_solver(doc),
        inertia=inertia,
        nondesign=_nondesign(doc, dim, M),
        sharp_masking=doc.boolean("sharp_masking", False),
    )
    doc.finish()
    try:
        return ProblemSpec(**spec_kwargs)
    except ValueError as e:
        raise ConfigError(str(e), text=text) from None


def merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """ Deep merge of nested objects; lists and scalars in `override` replace
    those of `base`
    """
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(doc: Dict[str, Any], assignment: str) -> Dict[str, Any]:
    """ Apply one `dotted.key=value` assignment. The value is parsed as JSON
    and kept as a plain string when that fails
    """
    if "=" not in assignment:
        raise ConfigError(f"Expected an override of the form key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw

    doc = copy.deepcopy(doc)
    parts = key.split(".")
    node = doc
    for depth, part in enumerate(parts):
        last = depth == len(parts) - 1
        if isinstance(node, list):
            if not part.isdigit() or int(part) >= len(node):
                raise ConfigError(f"Expected a list index below {len(node)}, got {part!r}",
                                  ".".join(parts[:depth + 1]))
            part = int(part)
        elif not isinstance(node, dict):
            raise ConfigError("Cannot descend into a scalar value", ".".join(parts[:depth]))
        if last:
            node[part] = value
        else:
            if isinstance(node, dict) and part not in node:
                node[part] = {}
            node = node[part]
    return doc


def resolve_config(text: str, overrides: Sequence[str] = ()) -> Dict[str, Any]:
    """ Problem document with its preset expanded and overrides applied
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Malformed problem file: {e.msg}", line=e.lineno) from None
    if not isinstance(data, dict):
        raise ConfigError(f"Expected a top-level object, got {type(data).__name__}", line=1)

    name = data.get("preset")
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"Unknown preset {name!r}, expected one of {preset_names()}",
                              "preset", text)
        data = merge(preset(name), {k: v for k, v in data.items() if k != "preset"})
        logger.info(f"Expanded preset {name}: {preset_description(name)}")

    for assignment in overrides:
        data = apply_override(data, assignment)
    return data


def parse_config(text: str, overrides: Sequence[str] = ()) -> ProblemSpec:
    return problem_from_dict(resolve_config(text, overrides), text)


def load_preset(name: str, overrides: Sequence[str] = ()) -> ProblemSpec:
    return parse_config(json.dumps({"preset": name}), overrides)


# Presets

def _compliance_2d(name, phases, max_volume, tau=DEFAULT_TAU, **evolution):
    """ 2 m x 1 m cantilever: left edge clamped, downward load at the middle of
    the right edge where material 1 is specified, material 0 elsewhere
    """
    return {
        "name": name,
        "objective": {"kind": ObjectiveKind.COMPLIANCE.value},
        "mesh": {"extent": [2.0, 1.0], "resolution": [100, 50]},
        "materials": {"phases": list(phases), "max_volume": list(max_volume)},
        "boundaries": [
            {"name": "fixed", "kind": "fixed-displacement", "region": {"x": [0.0, 0.0]}},
            {"name": "load", "kind": "traction", "region": {"x": [2.0, 2.0], "y": [0.45, 0.55]},
             "traction": [0.0, -1.0], "material": 1},
        ],
        "default_boundary": {"kind": "material-specified", "material": 0},
        "evolution": {"tau": tau, **evolution},
    }


def _holes(centers, half):
    return [{"region": {"x": [cx - half, cx + half], "y": [cy - half, cy + half]}, "phase": 0}
            for cx, cy in centers]


_THREE = ((0, 1, 2), (1., .2, .2))
_FOUR = ((0, 1, 2, 3), (1., .133, .133, .133))


def _compliance_cases():
    cases = {
        "case1": ("Two materials", _compliance_2d("case1", (0, 1), (1., .3))),
        "case2": ("Three materials", _compliance_2d("case2", *_THREE)),
        "case3": ("Four materials", _compliance_2d("case3", *_FOUR)),
        "case4": ("All nine table materials",
                  _compliance_2d("case4", range(9), (1., .1, .1) + (.05, ) * 6)),
        "case5": ("Three materials, tau = 1e-2", _compliance_2d("case5", *_THREE, tau=1e-2)),
        "case6": ("Three materials, tau = 1e-4", _compliance_2d("case6", *_THREE, tau=1e-4)),
        "case7": ("Per-pair tau (1e-4, 1e-2, 1e-4)",
                  _compliance_2d("case7", *_THREE,
                                 tau={"0-1": 1e-4, "1-2": 1e-2, "0-2": 1e-4, "default": 1e-3})),
        "case8": ("Per-pair tau (1e-2, 1e-4, 1e-4)",
                  _compliance_2d("case8", *_THREE,
                                 tau={"0-1": 1e-2, "1-2": 1e-4, "0-2": 1e-4, "default": 1e-3})),
        "case9": ("Uniform cross-section of the 1-2 interface along x",
                  _compliance_2d("case9", *_THREE, anisotropy={"1-2": [1e5, 1.]})),
        "case10": ("Uniform cross-section of the 1-2 interface along y",
                   _compliance_2d("case10", *_THREE, anisotropy={"1-2": [1., 1e5]})),
        "case11": ("Piecewise-linear 1-2 interface along x",
                   _compliance_2d("case11", *_THREE,
                                  piecewise_anisotropy={"default": [1., 1.], "1-2": [1e5, 1.]})),
        "case12": ("Piecewise-linear 1-2 interface along y",
                   _compliance_2d("case12", *_THREE,
                                  piecewise_anisotropy={"default": [1., 1.], "1-2": [1., 1e5]})),
    }
    initial = {
        "case13": ("Initial configuration: material 1 everywhere", {"background": 1}),
        "case14": ("Initial configuration: material 1 with a central hole",
                   {"background": 1, "regions": _holes([(1.0, 0.5)], 0.2)}),
        "case15": ("Initial configuration: material 1 with a 2 x 3 grid of holes",
                   {"background": 1,
                    "regions": _holes([(x, y) for y in (0.3, 0.7) for x in (0.5, 1.0, 1.5)], 0.1)}),
        "case16": ("Initial configuration: void with a horizontal material-1 bar",
                   {"background": 0,
                    "regions": [{"region": {"y": [0.4, 0.6]}, "phase": 1}]}),
    }
    for name, (description, configuration) in initial.items():
        doc = _compliance_2d(name, *_THREE, tau=1e-2)
        doc["initial"] = configuration
        cases[name] = (description, doc)
    return cases


def _mechanism_2d(name, phases, max_volume):
    """ Displacement inverter: input port pushed along +x at the middle of the
    left edge, output port at the middle of the right edge should move along -x
    """
    return {
        "name": name,
        "objective": {"kind": ObjectiveKind.MECHANISM.value},
        "mesh": {"extent": [2.0, 1.0], "resolution": [80, 40]},
        "materials": {"phases": list(phases), "max_volume": list(max_volume)},
        "boundaries": [
            {"name": "support_bottom", "kind": "fixed-displacement",
             "region": {"x": [0.0, 0.0], "y": [0.0, 0.1]}, "material": 1},
            {"name": "support_top", "kind": "fixed-displacement",
             "region": {"x": [0.0, 0.0], "y": [0.9, 1.0]}, "material": 1},
            {"name": "input", "kind": "input-port",
             "region": {"x": [0.0, 0.0], "y": [0.45, 0.55]},
             "traction": [1.0, 0.0], "stiffness": [[DEFAULT_INPUT_SPRING_XX, 0.0], [0.0, 0.0]],
             "material": 1},
            {"name": "output", "kind": "output-port",
             "region": {"x": [2.0, 2.0], "y": [0.45, 0.55]},
             "traction": [-1.0, 0.0], "stiffness": [[DEFAULT_OUTPUT_SPRING_XX, 0.0], [0.0, 0.0]],
             "material": 1},
        ],
        "default_boundary": {"kind": "material-specified", "material": 0},
        "schedule": {"filter_coefficient": DEFAULT_FILTER_COEFFICIENT},
    }


def _inertia_2d(name, weight):
    doc = _compliance_2d(name, (0, 1, 2), (1., .2, .2))
    doc["materials"]["densities"] = [0., 2., 1.]
    doc["objective"] = {"kind": ObjectiveKind.COMPLIANCE_PLUS_INERTIA.value,
                        "weight": weight,
                        "axis_point": [1.0, 0.5, 0.0],
                        "axis_direction": [0.0, 0.0, 1.0]}
    return doc


def _compliance_3d(name, phases, max_volume, free_z_max=False, **evolution):
    """ Quarter-symmetric 50 x 25 x 25 mm beam: x = 0 clamped, a material-1
    block at the loaded end pulled along -y, mirror plane z = 0
    """
    boundaries = [
        {"name": "symmetry", "kind": "symmetry", "region": {"z": [0.0, 0.0]}},
        {"name": "fixed", "kind": "fixed-displacement", "region": {"x": [0.0, 0.0]}},
        {"name": "load", "kind": "traction",
         "region": {"x": [0.05, 0.05], "y": [0.010, 0.015]},
         "traction": [0.0, -1.0, 0.0], "material": 1},
    ]
    if free_z_max:
        boundaries.append({"name": "top", "kind": "free", "region": {"z": [0.025, 0.025]}})
    return {
        "name": name,
        "objective": {"kind": ObjectiveKind.COMPLIANCE.value},
        "mesh": {"extent": [0.05, 0.025, 0.025], "resolution": [32, 16, 16],
                 "char_length": 0.025},
        "materials": {"phases": list(phases), "max_volume": list(max_volume)},
        "boundaries": boundaries,
        "default_boundary": {"kind": "material-specified", "material": 0},
        "nondesign": [{"region": {"x": [0.045, 0.05], "y": [0.010, 0.015]}, "material": 1}],
        "evolution": {"tau": 1e-4, **evolution},
    }


def _ucss_3d(name, anisotropy=None, piecewise=None, ucss=None, free_z_max=False):
    evolution = {}
    if anisotropy is not None:
        evolution["anisotropy"] = anisotropy
    if piecewise is not None:
        evolution["piecewise_anisotropy"] = piecewise
    if ucss is not None:
        evolution["ucss_normalization"] = ucss
    return _compliance_3d(name, *_THREE, free_z_max=free_z_max, **evolution)


def _other_cases():
    weak_z = {"1-2": 10.}
    return {
        "case17": ("Two-material inverter mechanism", _mechanism_2d("case17", (0, 1), (1., .3))),
        "case18": ("Three-material inverter mechanism",
                   _mechanism_2d("case18", (0, 1, 2), (1., .15, .15))),
        "case19": ("Four-material inverter mechanism",
                   _mechanism_2d("case19", (0, 1, 2, 3), (1., .1, .1, .1))),
        "case20": ("Compliance plus moment of inertia, w = 5e-13", _inertia_2d("case20", 5e-13)),
        "case21": ("Compliance plus moment of inertia, w = 5e-14", _inertia_2d("case21", 5e-14)),
        "case22": ("Compliance plus moment of inertia, w = 5e-15", _inertia_2d("case22", 5e-15)),
        "case23": ("3D, three materials", _compliance_3d("case23", *_THREE)),
        "case24": ("3D, four materials", _compliance_3d("case24", *_FOUR)),
        "case25": ("3D, uniform cross-section along z for every interface",
                   _ucss_3d("case25", anisotropy=[1., 1., 1e3], free_z_max=True)),
        "case26": ("3D, uniform cross-section along z for the 1-2 interface",
                   _ucss_3d("case26", anisotropy={"default": [1., 1., 1.], "1-2": [1., 1., 1e3]})),
        "case27": ("3D, 1-2 interface uniform along x and z",
                   _ucss_3d("case27", anisotropy={"default": [1., 1., 1.], "1-2": [1e6, 1., 1e3]},
                            ucss=weak_z)),
        "case28": ("3D, 1-2 interface uniform along y and z",
                   _ucss_3d("case28", anisotropy={"default": [1., 1., 1.], "1-2": [1., 1e5, 1e5]},
                            ucss=weak_z)),
        "case29": ("3D, piecewise-linear 1-2 interface along x and z",
                   _ucss_3d("case29",
                            piecewise={"default": [1., 1., 1.], "1-2": [1e6, 1., 1e3]},
                            ucss=weak_z)),
        "case30": ("3D, piecewise-linear 1-2 interface along y and z",
                   _ucss_3d("case30",
                            piecewise={"default": [1., 1., 1.], "1-2": [1., 1e5, 1e5]},
                            ucss=weak_z)),
    }


PRESETS: Dict[str, Tuple[str, Dict[str, Any]]] = {**_compliance_cases(), **_other_cases()}


def preset_names():
    return sorted(PRESETS, key=lambda name: int(name[len("case"):]))


def preset(name: str) -> Dict[str, Any]:
    if name not in PRESETS:
        raise KeyError(f"Unknown preset {name!r}, expected one of {preset_names()}")
    return copy.deepcopy(PRESETS[name][1])


def preset_description(name: str) -> str:
    return PRESETS[name][0]
