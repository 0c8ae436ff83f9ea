"""
Configuration for PeTTO runs
Benchmark presets, JSON config loading, merging and validation
"""
import copy
import json
import os
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Optional

import numpy as np
from packaging import version as pkg_version

from version import CONFIG_SCHEMA_VERSION

OUTPUT_ENV_VAR = 'PETTO_OUT'

FACE_KEYS = ('x-', 'x+', 'y-', 'y+', 'z-', 'z+')
AXIS_NAMES = ('x', 'y', 'z')
FACE_TYPES = ('dirichlet', 'neumann', 'traction_free', 'roller')
OUTPUT_FORMATS = ('csv', 'pgm', 'vtk')
PRECISIONS = ('f32', 'f64')


class ConfigError(ValueError):
    """Invalid or unreadable configuration

    Attributes:
        field: Dotted name of the offending setting, if known
        line: Line number in the config file for parse errors
    """

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        super().__init__(message)


def default_output_dir() -> Optional[str]:
    """Output directory from the PETTO_OUT environment variable"""
    return os.environ.get(OUTPUT_ENV_VAR) or None


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge override into a copy of base"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


DEFAULT_SETTINGS: Dict[str, Any] = {
    'schema_version': CONFIG_SCHEMA_VERSION,
    'preset': None,
    'physics': 'heat',
    'grid': {'dims': [64, 64], 'lengths': [1.0, 1.0]},
    'boundary': {'faces': {}, 'nodes': []},
    'loads': {'source': 0.0, 'nodal': []},
    'material': {
        'kind': 'thermal',
        'names': ['solid', 'void'],
        'properties': [1.0, 1e-6],
        'poisson_ratio': None,
        'penalty': 3.0,
        'void_floor': 1e-6,
    },
    'targets': {'volumes': [0.3, 0.7], 'region': None},
    'weights': {
        'alpha_compliance': 0.1,
        'alpha_volume': 0.0,
        'alpha_unity': 0.0,
        'alpha_region': 0.0,
        'normalize_compliance': True,
        'compliance_sign': -1,
        'scale_to_reference': True,
    },
    'schedule': {
        'n_apt': 0,
        'n_pt': 1,
        'theta': 1.0,
        'apt_form': 'explicit',
        'dt1': None,
        'dt2': None,
        'stability_factor': 1.0,
        'max_loops': 100,
        'tolerance': 1e-3,
        'window': 50,
        'nan_check_every': 100,
        'update_design': True,
        'evolve_phases': True,
        'symmetry': [],
    },
    'phase_field': {
        'gamma': 3e-5,
        'mobility': 1.0,
        'dt3_factor': 500.0,
        'dt3': None,
        'cap_dt3': True,
    },
    'initial': {'phases': [0.5], 'noise': 0.0, 'seed': 0},
    'output': {
        'directory': None,
        'formats': ['csv', 'pgm', 'vtk'],
        'report_every': 1,
        'write_state': True,
    },
    'reference': {'dims': None, 'loops': None},
    'precision': 'f64',
    'threads': 1,
}


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def centered_box(lengths: List[float], fraction: float) -> List[List[float]]:
    """Box centered in the domain covering the given volume fraction"""
    scale = fraction ** (1.0 / len(lengths))
    lower = [0.5 * L * (1.0 - scale) for L in lengths]
    upper = [0.5 * L * (1.0 + scale) for L in lengths]
    return [lower, upper]


def _heat2d() -> Dict[str, Any]:
    return {
        'physics': 'heat',
        'grid': {'dims': [128, 128], 'lengths': [4.0, 4.0]},
        'boundary': {
            'faces': {
                'x-': {'type': 'dirichlet', 'value': 0.0},
                'x+': {'type': 'neumann'},
                'y-': {'type': 'neumann'},
                'y+': {'type': 'dirichlet', 'value': 0.0},
            },
            'nodes': [],
        },
        'loads': {'source': 0.01, 'nodal': []},
        'material': {'kind': 'thermal', 'names': ['solid', 'void'], 'properties': [1.0, 1e-6],
                     'penalty': 3.0, 'void_floor': 1e-6},
        'targets': {'volumes': [0.3, 0.7], 'region': None},
        'weights': {'alpha_compliance': 0.1, 'alpha_volume': 1e5, 'alpha_unity': 1e4},
        'schedule': {'n_apt': 500, 'n_pt': 500, 'theta': 1.0, 'apt_form': 'explicit', 'max_loops': 5000},
        'phase_field': {'gamma': 3e-5, 'dt3_factor': 500.0},
        'initial': {'phases': [1.0, 1.0]},
        'reference': {'dims': [512, 512], 'loops': 5000},
    }


def _elastic_weights() -> Dict[str, Any]:
    return {'alpha_compliance': 0.1, 'alpha_volume': 1e4, 'alpha_unity': 1e3}


def _mbb2d() -> Dict[str, Any]:
    return {
        'physics': 'elasticity',
        'grid': {'dims': [129, 33], 'lengths': [4.0, 1.0]},
        'boundary': {
            'faces': {face: {'type': 'traction_free'} for face in FACE_KEYS[:4]},
            'nodes': [
                {'point': [0.0, 0.0], 'component': 1, 'value': 0.0},
                {'point': [4.0, 0.0], 'component': 1, 'value': 0.0},
            ],
        },
        'loads': {'nodal': [{'point': [2.0, 1.0], 'force': [0.0, -1.0]}]},
        'material': {'kind': 'elastic', 'names': ['m1', 'm2', 'm3', 'm4', 'm5', 'void'],
                     'properties': [1.0, 0.775, 0.55, 0.325, 0.1, 1e-6],
                     'poisson_ratio': 0.3, 'penalty': 3.0, 'void_floor': 1e-6},
        'targets': {'volumes': [0.08, 0.08, 0.08, 0.08, 0.08, 0.6], 'region': None},
        'weights': _elastic_weights(),
        'schedule': {'n_apt': 20, 'n_pt': 20, 'theta': 1.0, 'apt_form': 'semi-implicit', 'max_loops': 200000,
                     'symmetry': ['x']},
        'phase_field': {'gamma': 3e-5, 'dt3_factor': 500.0},
        'initial': {'phases': [0.5]},
        'reference': {'dims': [513, 128], 'loops': 200000},
    }


def _cantilever3d() -> Dict[str, Any]:
    lengths = [2.0, 2.0 / 15.0, 2.0 / 3.0]
    faces = {face: {'type': 'traction_free'} for face in FACE_KEYS}
    faces['x+'] = {'type': 'dirichlet', 'value': 0.0}
    mid = lengths[2] / 2
    return {
        'physics': 'elasticity',
        'grid': {'dims': [64, 5, 22], 'lengths': lengths},
        'boundary': {'faces': faces, 'nodes': []},
        'loads': {'nodal': [{'box': [[0.0, 0.0, mid], [0.0, lengths[1], mid]], 'force': [0.0, 0.0, 1.0]}]},
        'material': {'kind': 'elastic', 'names': ['m1', 'm2', 'm3', 'void'],
                     'properties': [1.0, 0.6, 0.2, 1e-6],
                     'poisson_ratio': 0.3, 'penalty': 3.0, 'void_floor': 1e-6},
        'targets': {'volumes': [0.1, 0.1, 0.1, 0.7], 'region': None},
        'weights': _elastic_weights(),
        'schedule': {'n_apt': 100, 'n_pt': 100, 'theta': 1.0, 'apt_form': 'semi-implicit', 'max_loops': 4000},
        'phase_field': {'gamma': 3e-5, 'dt3_factor': 500.0},
        'initial': {'phases': [0.5]},
        'reference': {'dims': [256, 17, 85], 'loops': 4000},
    }


def _drone3d(region_fraction: float) -> Dict[str, Any]:
    lengths = [1.0, 0.5, 1.0]
    top = lengths[1]
    corners = [[x, top, z] for x in (0.0, lengths[0]) for z in (0.0, lengths[2])]
    return {
        'physics': 'elasticity',
        'grid': {'dims': [48, 24, 48], 'lengths': lengths},
        'boundary': {
            'faces': {face: {'type': 'traction_free'} for face in FACE_KEYS},
            'nodes': [{'point': c, 'component': 1, 'value': 0.0} for c in corners],
        },
        'loads': {'nodal': [{'point': [0.5, 0.0, 0.5], 'force': [0.0, -1.0, 0.0]}]},
        'material': {'kind': 'elastic', 'names': ['solid', 'void'], 'properties': [1.0, 1e-6],
                     'poisson_ratio': 0.3, 'penalty': 3.0, 'void_floor': 1e-6},
        'targets': {
            'volumes': [0.2, 0.8],
            'region': {'boxes': [centered_box(lengths, region_fraction)], 'volumes': [0.0, 1.0]},
        },
        'weights': dict(_elastic_weights(), alpha_region=1e4),
        'schedule': {'n_apt': 50, 'n_pt': 50, 'theta': 1.0, 'apt_form': 'semi-implicit', 'max_loops': 40000,
                     'symmetry': ['x', 'z']},
        'phase_field': {'gamma': 3e-5, 'dt3_factor': 500.0},
        'initial': {'phases': [0.5]},
        'reference': {'dims': [128, 64, 128], 'loops': 40000},
    }


class PresetRegistry:
    """Named benchmark settings, merged over DEFAULT_SETTINGS on lookup"""

    def __init__(self):
        self._presets: Dict[str, Dict[str, Any]] = {}

    def register(self, name: str, settings: Dict[str, Any]) -> None:
        self._presets[name] = copy.deepcopy(settings)

    def names(self) -> List[str]:
        return sorted(self._presets)

    def __contains__(self, name: str) -> bool:
        return name in self._presets

    def get(self, name: str) -> Dict[str, Any]:
        """Full settings for a preset

        Raises:
            ConfigError: for unknown names, listing the valid ones
        """
        if name not in self._presets:
            raise ConfigError(f"unknown preset '{name}' (valid presets: {', '.join(self.names())})",
                              field='preset')
        settings = deep_merge(DEFAULT_SETTINGS, self._presets[name])
        settings['preset'] = name
        return settings


# Global preset registry
presets = PresetRegistry()
presets.register('heat2d', _heat2d())
presets.register('mbb2d', _mbb2d())
presets.register('cantilever3d', _cantilever3d())
presets.register('drone3d', _drone3d(0.2))
presets.register('drone3d_v012', _drone3d(0.12))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _require(condition: bool, field: str, message: str) -> None:
    if not condition:
        raise ConfigError(f"{field}: {message}", field=field)


def _check_known_keys(section: Dict[str, Any], allowed: Dict[str, Any], prefix: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        name = f"{prefix}.{unknown[0]}" if prefix else unknown[0]
        raise ConfigError(f"{name}: unknown setting", field=name)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _axis_hits(lo: float, hi: float, n: int, length: float) -> bool:
    """True if [lo, hi] contains a node of the n-node lattice on [0, length]"""
    if lo == hi:
        return True
    x = np.linspace(0.0, length, n)
    tol = 1e-9 * length / (n - 1)
    return bool(np.any((x >= lo - tol) & (x <= hi + tol)))


def _check_node_selector(entry: Dict[str, Any], dims: List[int], lengths: List[float], field: str) -> None:
    ndim = len(dims)
    has_point = 'point' in entry
    has_box = 'box' in entry
    _require(has_point != has_box, field, "give exactly one of 'point' or 'box'")
    corners = [entry['point']] if has_point else entry['box']
    _require(has_point or len(corners) == 2, field, "box needs [lower, upper] corners")
    for corner in corners:
        _require(isinstance(corner, list) and len(corner) == ndim and all(_is_number(x) for x in corner),
                 field, f"coordinates must be {ndim} numbers")
        for x, L in zip(corner, lengths):
            _require(-1e-12 <= x <= L + 1e-12, field, f"coordinate {x} outside the domain {lengths}")
    if has_box:
        lower, upper = corners
        _require(all(lo <= hi for lo, hi in zip(lower, upper)), field, "box lower corner exceeds upper corner")
        _require(all(_axis_hits(lo, hi, n, L) for lo, hi, n, L in zip(lower, upper, dims, lengths)),
                 field, f"box {lower}-{upper} covers no grid nodes")


def validate_settings(settings: Dict[str, Any]) -> None:
    """Check a fully merged settings dict

    Raises:
        ConfigError: naming the first offending field and constraint
    """
    _check_known_keys(settings, DEFAULT_SETTINGS, '')
    for section, defaults in DEFAULT_SETTINGS.items():
        if isinstance(defaults, dict):
            _require(isinstance(settings[section], dict), section, "must be a section")
            _check_known_keys(settings[section], defaults, section)

    try:
        schema = pkg_version.parse(str(settings['schema_version']))
    except pkg_version.InvalidVersion:
        raise ConfigError(f"schema_version: cannot parse '{settings['schema_version']}'", field='schema_version')
    supported = pkg_version.parse(CONFIG_SCHEMA_VERSION)
    _require(schema.major == supported.major and schema <= supported, 'schema_version',
             f"{schema} is not supported (this engine reads {CONFIG_SCHEMA_VERSION})")

    physics = settings['physics']
    _require(physics in ('heat', 'elasticity'), 'physics', "must be 'heat' or 'elasticity'")

    grid = settings['grid']
    dims, lengths = grid['dims'], grid['lengths']
    _require(isinstance(dims, list) and len(dims) in (2, 3), 'grid.dims', "must list 2 or 3 node counts")
    ndim = len(dims)
    _require(all(isinstance(n, int) and not isinstance(n, bool) and n >= 3 for n in dims),
             'grid.dims', "every node count must be an integer >= 3")
    _require(isinstance(lengths, list) and len(lengths) == ndim and all(_is_number(v) and v > 0 for v in lengths),
             'grid.lengths', f"must list {ndim} positive lengths")

    faces = settings['boundary'].get('faces', {})
    expected = set(FACE_KEYS[:2 * ndim])
    _require(set(faces) == expected, 'boundary.faces',
             f"must give exactly one condition for each of {sorted(expected)}")
    components = 1 if physics == 'heat' else ndim
    for face, cond in faces.items():
        field = f"boundary.faces.{face}"
        _require(isinstance(cond, dict) and cond.get('type') in FACE_TYPES, field,
                 f"type must be one of {FACE_TYPES}")
        if cond['type'] == 'roller':
            comp = cond.get('component')
            _require(isinstance(comp, int) and 0 <= comp < components, field, "roller needs a valid component")
        if cond['type'] == 'traction_free':
            _require(physics == 'elasticity', field, "traction_free applies to elasticity only")
    for i, node in enumerate(settings['boundary'].get('nodes', [])):
        field = f"boundary.nodes[{i}]"
        _check_node_selector(node, dims, lengths, field)
        comp = node.get('component')
        _require(comp is None or (isinstance(comp, int) and 0 <= comp < components), field,
                 "component out of range")

    loads = settings['loads']
    if physics == 'heat':
        _require(_is_number(loads['source']), 'loads.source', "must be a number")
    for i, load in enumerate(loads['nodal']):
        field = f"loads.nodal[{i}]"
        _require(physics == 'elasticity', field, "nodal loads apply to elasticity only")
        _check_node_selector(load, dims, lengths, field)
        force = load.get('force')
        _require(isinstance(force, list) and len(force) == ndim and all(_is_number(f) for f in force),
                 field, f"force must list {ndim} numbers")

    material = settings['material']
    kind = 'thermal' if physics == 'heat' else 'elastic'
    _require(material['kind'] == kind, 'material.kind', f"must be '{kind}' for {physics} problems")
    props = material['properties']
    _require(isinstance(props, list) and len(props) >= 1 and all(_is_number(p) and p > 0 for p in props),
             'material.properties', "must list positive values")
    n_phases = len(props)
    _require(len(material['names']) == n_phases, 'material.names', f"must list {n_phases} names")
    _require(_is_number(material['penalty']) and material['penalty'] >= 1, 'material.penalty', "must be >= 1")
    _require(_is_number(material['void_floor']) and material['void_floor'] > 0,
             'material.void_floor', "must be positive")
    if kind == 'elastic':
        nu = material['poisson_ratio']
        _require(_is_number(nu) and -1 < nu < 0.5, 'material.poisson_ratio', "must lie in (-1, 0.5)")

    targets = settings['targets']
    volumes = targets['volumes']
    _require(isinstance(volumes, list) and len(volumes) == n_phases, 'targets.volumes',
             f"must list {n_phases} targets")
    _require(all(_is_number(v) and 0 <= v <= 1 for v in volumes), 'targets.volumes', "targets must lie in [0, 1]")
    _require(sum(volumes) <= 1 + 1e-9, 'targets.volumes', f"targets sum to {sum(volumes)} > 1")
    region = targets['region']
    if region is not None:
        _require(isinstance(region, dict) and set(region) == {'boxes', 'volumes'}, 'targets.region',
                 "needs 'boxes' and 'volumes'")
        _require(len(region['boxes']) >= 1, 'targets.region.boxes', "needs at least one box")
        for i, box in enumerate(region['boxes']):
            _check_node_selector({'box': box}, dims, lengths, f"targets.region.boxes[{i}]")
        _require(len(region['volumes']) == n_phases and all(_is_number(v) and 0 <= v <= 1 for v in region['volumes']),
                 'targets.region.volumes', f"must list {n_phases} targets in [0, 1]")

    weights = settings['weights']
    for key in ('alpha_compliance', 'alpha_volume', 'alpha_unity', 'alpha_region'):
        _require(_is_number(weights[key]) and weights[key] >= 0, f"weights.{key}", "must be >= 0")
    _require(weights['compliance_sign'] in (-1, 1), 'weights.compliance_sign', "must be +1 or -1")

    schedule = settings['schedule']
    for key in ('n_apt', 'n_pt', 'max_loops', 'window', 'nan_check_every'):
        _require(isinstance(schedule[key], int) and schedule[key] >= 0, f"schedule.{key}",
                 "must be a non-negative integer")
    _require(schedule['n_apt'] + schedule['n_pt'] >= 1, 'schedule', "n_apt + n_pt must be >= 1")
    _require(schedule['max_loops'] >= 1, 'schedule.max_loops', "must be >= 1")
    _require(schedule['window'] >= 2, 'schedule.window', "must be >= 2")
    _require(schedule['nan_check_every'] >= 1, 'schedule.nan_check_every', "must be >= 1")
    _require(_is_number(schedule['tolerance']) and schedule['tolerance'] > 0, 'schedule.tolerance',
             "must be positive")
    _require(_is_number(schedule['theta']) and schedule['theta'] > 0, 'schedule.theta', "must be positive")
    _require(schedule['apt_form'] in ('explicit', 'semi-implicit'), 'schedule.apt_form',
             "must be 'explicit' or 'semi-implicit'")
    for key in ('dt1', 'dt2'):
        _require(schedule[key] is None or (_is_number(schedule[key]) and schedule[key] > 0),
                 f"schedule.{key}", "must be positive or null")
    _require(_is_number(schedule['stability_factor']) and schedule['stability_factor'] > 0,
             'schedule.stability_factor', "must be positive")
    symmetry = schedule['symmetry']
    _require(isinstance(symmetry, list) and all(a in AXIS_NAMES[:ndim] for a in symmetry)
             and len(set(symmetry)) == len(symmetry), 'schedule.symmetry',
             f"must list distinct axes from {list(AXIS_NAMES[:ndim])}")

    pf = settings['phase_field']
    for key in ('gamma', 'mobility'):
        values = pf[key] if isinstance(pf[key], list) else [pf[key]]
        _require(all(_is_number(v) and v > 0 for v in values), f"phase_field.{key}", "must be positive")
        _require(len(values) in (1, n_phases), f"phase_field.{key}", f"give 1 or {n_phases} values")
    _require(_is_number(pf['dt3_factor']) and pf['dt3_factor'] > 0, 'phase_field.dt3_factor', "must be positive")
    _require(pf['dt3'] is None or (_is_number(pf['dt3']) and pf['dt3'] > 0), 'phase_field.dt3',
             "must be positive or null")

    initial = settings['initial']
    values = initial['phases']
    _require(isinstance(values, list) and len(values) in (1, n_phases)
             and all(_is_number(v) and 0 <= v <= 1 for v in values),
             'initial.phases', f"give 1 or {n_phases} values in [0, 1]")
    _require(_is_number(initial['noise']) and initial['noise'] >= 0, 'initial.noise', "must be >= 0")

    output = settings['output']
    _require(all(f in OUTPUT_FORMATS for f in output['formats']), 'output.formats',
             f"formats must be among {OUTPUT_FORMATS}")
    _require(isinstance(output['report_every'], int) and output['report_every'] >= 1,
             'output.report_every', "must be an integer >= 1")

    _require(settings['precision'] in PRECISIONS, 'precision', f"must be one of {PRECISIONS}")
    _require(isinstance(settings['threads'], int) and settings['threads'] >= 1, 'threads', "must be >= 1")


# ---------------------------------------------------------------------------
# ProblemConfig
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemConfig:
    """Validated run configuration; sections are plain JSON-compatible dicts"""

    schema_version: str
    preset: Optional[str]
    physics: str
    grid: Dict[str, Any]
    boundary: Dict[str, Any]
    loads: Dict[str, Any]
    material: Dict[str, Any]
    targets: Dict[str, Any]
    weights: Dict[str, Any]
    schedule: Dict[str, Any]
    phase_field: Dict[str, Any]
    initial: Dict[str, Any]
    output: Dict[str, Any]
    reference: Dict[str, Any]
    precision: str
    threads: int

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ProblemConfig':
        """Fill defaults from the named preset (or the base defaults) and validate"""
        data = json.loads(json.dumps(data))
        name = data.get('preset')
        base = presets.get(name) if name is not None else copy.deepcopy(DEFAULT_SETTINGS)
        settings = deep_merge(base, data)
        settings['schema_version'] = str(settings['schema_version'])
        validate_settings(settings)
        return cls(**{f.name: settings[f.name] for f in fields(cls)})

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy({f.name: getattr(self, f.name) for f in fields(self)})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_overrides(self, overrides: Dict[str, Any]) -> 'ProblemConfig':
        return ProblemConfig.from_dict(deep_merge(self.to_dict(), overrides))

    @property
    def ndim(self) -> int:
        return len(self.grid['dims'])

    @property
    def phase_names(self) -> List[str]:
        return list(self.material['names'])


def load_config(path: str) -> ProblemConfig:
    """Read a JSON config file

    Raises:
        ConfigError: on unreadable files, parse errors (with line and
            column) and validation failures (with the field name)
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror or e}", field='config')
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}", line=e.lineno)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return ProblemConfig.from_dict(data)


def save_config(cfg: ProblemConfig, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(cfg.to_json())
        f.write('\n')
