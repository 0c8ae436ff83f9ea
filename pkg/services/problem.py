"""
Optimization problem definition
Binds grid, boundary conditions, loads, materials and targets, and builds
problems and loop schedules from a ProblemConfig
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from config import AXIS_NAMES, ProblemConfig
from services.grid import (
    BoundarySpec, Dirichlet, Field, Grid, GridError, NeumannZero, NodeConstraint, Roller, TractionFree,
)
from services.objectives import (
    MaterialModel, ObjectiveReport, ObjectiveWeights, VolumeTargets, elastic_material, interpolate,
    mechanical_compliance, region_objective, thermal_compliance, unity_objective, volume_fractions,
    volume_objective,
)
from services.optimizer import LoopSchedule
from services.phase_field import CahnHilliardParams, PhaseSet
from services.state_solver import ElasticPhysics, HeatPhysics, Physics, PTParams

logger = logging.getLogger(__name__)

PHYSICS_KINDS = ('heat', 'elasticity')


@dataclass
class Problem:
    """Everything the optimization loop needs besides the schedule

    source is the heat source density (heat); loads is the nodal force
    density entering div(sigma) = loads (elasticity).
    """

    grid: Grid
    physics: str
    boundary: BoundarySpec
    material: MaterialModel
    targets: VolumeTargets
    weights: ObjectiveWeights
    initial_phases: PhaseSet
    source: Optional[np.ndarray] = None
    loads: Optional[np.ndarray] = None
    initial_state: Optional[Field] = None
    name: str = ''

    def __post_init__(self):
        if self.physics not in PHYSICS_KINDS:
            raise ValueError(f"physics must be one of {PHYSICS_KINDS}, got '{self.physics}'")
        expected_kind = 'thermal' if self.physics == 'heat' else 'elastic'
        if self.material.kind != expected_kind:
            raise ValueError(f"{self.physics} problems need a {expected_kind} material")
        if len(self.initial_phases) != self.material.n_phases:
            raise ValueError(f"{len(self.initial_phases)} initial phases for {self.material.n_phases} materials")
        if self.initial_phases.grid != self.grid:
            raise GridError("initial phases live on a different grid")
        dtype = self.initial_phases[0].dtype
        if self.physics == 'heat':
            if self.source is None:
                self.source = np.zeros(self.grid.dims, dtype=dtype)
        elif self.loads is None:
            self.loads = np.zeros((self.grid.ndim,) + self.grid.dims, dtype=dtype)
        if self.initial_state is None:
            self.initial_state = Field.zeros(self.grid, self.state_components, dtype=dtype)
        self.boundary.validate(self.grid, self.state_components)

    @property
    def state_components(self) -> int:
        return 1 if self.physics == 'heat' else self.grid.ndim

    @property
    def state_name(self) -> str:
        return 'T' if self.physics == 'heat' else 'u'

    def effective_property(self, phases: PhaseSet) -> Field:
        return interpolate(phases, self.material)

    def build_physics(self, phases: PhaseSet) -> Physics:
        """State equation for the current design"""
        if self.physics == 'heat':
            kappa = self.effective_property(phases).data
            return HeatPhysics(self.grid, kappa, self.source, self.boundary)
        return ElasticPhysics(self.grid, elastic_material(phases, self.material), self.loads, self.boundary)

    def compliance(self, phases: PhaseSet, state: Field) -> float:
        if self.physics == 'heat':
            return thermal_compliance(state, self.effective_property(phases))
        return mechanical_compliance(state, elastic_material(phases, self.material))

    def report(self, loop: int, phases: PhaseSet, state: Field, r_pde: float) -> ObjectiveReport:
        region = region_objective(phases, self.targets) if self.targets.has_region else 0.0
        return ObjectiveReport(
            loop=loop,
            compliance=self.compliance(phases, state),
            volume=volume_objective(phases, self.targets),
            unity=unity_objective(phases),
            region=region,
            volume_fractions=tuple(float(v) for v in volume_fractions(phases)),
            r_pde=r_pde,
        )


# ---------------------------------------------------------------------------
# Building from config
# ---------------------------------------------------------------------------

def dtype_for(precision: str):
    return np.float32 if precision == 'f32' else np.float64


def _select_nodes(grid: Grid, entry: Dict[str, Any]) -> np.ndarray:
    """Boolean mask of the nodes named by a 'point' or 'box' entry"""
    if 'point' in entry:
        mask = np.zeros(grid.dims, dtype=bool)
        mask[grid.nearest_node(entry['point'])] = True
        return mask
    lower, upper = entry['box']
    mask = grid.box_mask(lower, upper)
    if not mask.any():
        raise GridError(f"box {entry['box']} selects no nodes")
    return mask


def _face_condition(spec: Dict[str, Any]):
    kind = spec['type']
    if kind == 'dirichlet':
        return Dirichlet(float(spec.get('value', 0.0)))
    if kind == 'neumann':
        return NeumannZero()
    if kind == 'traction_free':
        return TractionFree()
    return Roller(int(spec['component']), float(spec.get('value', 0.0)))


def build_boundary(cfg: ProblemConfig, grid: Grid) -> BoundarySpec:
    faces = {face: _face_condition(spec) for face, spec in cfg.boundary['faces'].items()}
    nodes: List[NodeConstraint] = []
    for entry in cfg.boundary.get('nodes', []):
        indices = tuple(tuple(int(i) for i in idx) for idx in np.argwhere(_select_nodes(grid, entry)))
        nodes.append(NodeConstraint(indices, entry.get('component'), float(entry.get('value', 0.0))))
    return BoundarySpec(faces, tuple(nodes))


def nodal_load_density(grid: Grid, entries: List[Dict[str, Any]], dtype=np.float64) -> np.ndarray:
    """Force density array for div(sigma) = loads

    Each entry's total force is split evenly over its nodes and divided by
    each node's control volume. The physical force enters with a minus
    sign since equilibrium reads div(sigma) + b = 0.
    """
    loads = np.zeros((grid.ndim,) + grid.dims)
    cellvol = grid.cell_volumes
    for entry in entries:
        mask = _select_nodes(grid, entry)
        count = int(mask.sum())
        for c, force in enumerate(entry['force']):
            loads[c][mask] -= force / count / cellvol[mask]
    return loads.astype(dtype)


def build_targets(cfg: ProblemConfig, grid: Grid) -> VolumeTargets:
    region = cfg.targets.get('region')
    if region is None:
        return VolumeTargets(tuple(cfg.targets['volumes']))
    mask = np.zeros(grid.dims, dtype=bool)
    for lower, upper in region['boxes']:
        mask |= grid.box_mask(lower, upper)
    return VolumeTargets(tuple(cfg.targets['volumes']), region_mask=mask,
                         region_volumes=tuple(region['volumes']))


def build_weights(cfg: ProblemConfig) -> ObjectiveWeights:
    w = cfg.weights
    reference = cfg.reference.get('dims')
    reference_nodes = int(np.prod(reference)) if (reference and w.get('scale_to_reference', True)) else None
    return ObjectiveWeights(
        alpha_compliance=float(w['alpha_compliance']),
        alpha_volume=float(w['alpha_volume']),
        alpha_unity=float(w['alpha_unity']),
        alpha_region=float(w['alpha_region']),
        normalize_compliance=bool(w['normalize_compliance']),
        compliance_sign=int(w['compliance_sign']),
        reference_nodes=reference_nodes,
    )


def build_initial_phases(cfg: ProblemConfig, grid: Grid, dtype=np.float64) -> PhaseSet:
    names = cfg.phase_names
    values = cfg.initial['phases']
    if len(values) == 1:
        values = values * len(names)
    stack = np.stack([np.full(grid.dims, v, dtype=np.float64) for v in values])
    noise = float(cfg.initial.get('noise', 0.0))
    if noise > 0:
        rng = np.random.default_rng(cfg.initial.get('seed', 0))
        stack = np.clip(stack + rng.uniform(-noise, noise, size=stack.shape), 0.0, 1.0)
    return PhaseSet.from_array(grid, stack.astype(dtype), names)


def build_problem(cfg: ProblemConfig) -> Problem:
    """Turn a validated config into arrays on a grid"""
    grid = Grid(tuple(cfg.grid['dims']), tuple(cfg.grid['lengths']))
    dtype = dtype_for(cfg.precision)
    mat = cfg.material
    material = MaterialModel(
        kind=mat['kind'],
        properties=tuple(mat['properties']),
        poisson_ratio=mat.get('poisson_ratio'),
        penalty=float(mat['penalty']),
        void_floor=float(mat['void_floor']),
    )
    source = loads = None
    if cfg.physics == 'heat':
        source = np.full(grid.dims, cfg.loads['source'], dtype=dtype)
    else:
        loads = nodal_load_density(grid, cfg.loads['nodal'], dtype)
    problem = Problem(
        grid=grid,
        physics=cfg.physics,
        boundary=build_boundary(cfg, grid),
        material=material,
        targets=build_targets(cfg, grid),
        weights=build_weights(cfg),
        initial_phases=build_initial_phases(cfg, grid, dtype),
        source=source,
        loads=loads,
        name=cfg.preset or 'custom',
    )
    logger.info("Built %s problem '%s' on grid %s (%d phases)", cfg.physics, problem.name,
                'x'.join(str(n) for n in grid.dims), material.n_phases)
    return problem


def _per_phase(value):
    return tuple(value) if isinstance(value, list) else value


def build_schedule(cfg: ProblemConfig, grid: Grid) -> LoopSchedule:
    """LoopSchedule from the schedule, phase_field and output sections"""
    s = cfg.schedule
    pt = PTParams.for_grid(grid, n_apt=s['n_apt'], n_pt=s['n_pt'], theta=float(s['theta']),
                           apt_form=s['apt_form'], stability_factor=float(s['stability_factor']),
                           nan_check_every=s['nan_check_every'])
    if s['dt1'] is not None or s['dt2'] is not None:
        pt = PTParams(dt1=float(s['dt1'] or pt.dt1), dt2=float(s['dt2'] or pt.dt2), theta=pt.theta,
                      n_apt=pt.n_apt, n_pt=pt.n_pt, apt_form=pt.apt_form, nan_check_every=pt.nan_check_every)

    pf = cfg.phase_field
    gamma, mobility = _per_phase(pf['gamma']), _per_phase(pf['mobility'])
    if pf['dt3'] is not None:
        ch = CahnHilliardParams(dt3=float(pf['dt3']), gamma=gamma, mobility=mobility)
    else:
        ch = CahnHilliardParams.for_grid(grid, dt3_factor=float(pf['dt3_factor']), gamma=gamma, mobility=mobility,
                                         safety=0.9 if pf['cap_dt3'] else None)
    return LoopSchedule(
        pt=pt,
        ch=ch,
        max_loops=s['max_loops'],
        tolerance=float(s['tolerance']),
        window=s['window'],
        report_every=cfg.output['report_every'],
        update_design=bool(s['update_design']),
        evolve_phases=bool(s['evolve_phases']),
        symmetry_axes=tuple(AXIS_NAMES.index(a) for a in s['symmetry']),
    )
