"""
Objective functionals and design sensitivities
Property interpolation, compliance, volume / unity / region penalties,
their partial derivatives with the state held fixed, and the design update
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from services.grid import Field, Grid, gradient_array
from services.phase_field import PhaseSet
from services.state_solver import ElasticMaterialField, strain_tensor

logger = logging.getLogger(__name__)

MATERIAL_KINDS = ('thermal', 'elastic')


class ObjectiveError(ValueError):
    """Raised for inconsistent materials, targets or weights"""


@dataclass(frozen=True)
class MaterialModel:
    """Per-phase property values (conductivity or Young's modulus)"""

    kind: str
    properties: Tuple[float, ...]
    poisson_ratio: Optional[float] = None
    penalty: float = 3.0
    void_floor: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, 'properties', tuple(float(p) for p in self.properties))
        if self.kind not in MATERIAL_KINDS:
            raise ObjectiveError(f"material kind must be one of {MATERIAL_KINDS}, got '{self.kind}'")
        if not self.properties or min(self.properties) <= 0:
            raise ObjectiveError(f"material properties must be positive, got {self.properties}")
        if self.penalty < 1:
            raise ObjectiveError(f"penalty exponent must be >= 1, got {self.penalty}")
        if not self.void_floor > 0:
            raise ObjectiveError(f"void floor must be positive, got {self.void_floor}")
        if self.kind == 'elastic' and self.poisson_ratio is None:
            raise ObjectiveError("elastic materials need a Poisson ratio")

    @property
    def n_phases(self) -> int:
        return len(self.properties)


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights of the compliance, volume, unity and region terms

    compliance_sign multiplies the normalized compliance term: -1 moves
    material towards high energy density, +1 descends the partial
    derivative as computed with the state held fixed. When reference_nodes
    is set, effective() rescales the constraint weights from that node
    count to the actual grid.
    """

    alpha_compliance: float = 0.1
    alpha_volume: float = 0.0
    alpha_unity: float = 0.0
    alpha_region: float = 0.0
    normalize_compliance: bool = True
    compliance_sign: int = -1
    reference_nodes: Optional[int] = None

    def __post_init__(self):
        alphas = (self.alpha_compliance, self.alpha_volume, self.alpha_unity, self.alpha_region)
        if min(alphas) < 0:
            raise ObjectiveError(f"weights must be >= 0, got {alphas}")
        if max(alphas) <= 0:
            raise ObjectiveError("at least one weight must be positive")
        if self.compliance_sign not in (-1, 1):
            raise ObjectiveError(f"compliance_sign must be +1 or -1, got {self.compliance_sign}")
        if self.reference_nodes is not None and self.reference_nodes < 1:
            raise ObjectiveError("reference_nodes must be positive")

    def effective(self, grid: Grid) -> 'ObjectiveWeights':
        """Weights with the per-node constraint gains of the reference grid"""
        if self.reference_nodes is None:
            return self
        scale = grid.n_nodes / self.reference_nodes
        return replace(
            self,
            alpha_volume=self.alpha_volume * scale,
            alpha_unity=self.alpha_unity * scale / grid.volume,
            alpha_region=self.alpha_region * scale,
            reference_nodes=None,
        )


@dataclass(frozen=True)
class VolumeTargets:
    """Global volume fraction targets, plus optional region targets on a node mask"""

    volumes: Tuple[float, ...]
    region_mask: Optional[np.ndarray] = field(default=None, compare=False)
    region_volumes: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, 'volumes', tuple(float(v) for v in self.volumes))
        for v in self.volumes + tuple(self.region_volumes or ()):
            if not 0.0 <= v <= 1.0:
                raise ObjectiveError(f"volume targets must lie in [0, 1], got {v}")
        if self.region_volumes is not None:
            object.__setattr__(self, 'region_volumes', tuple(float(v) for v in self.region_volumes))
            if self.region_mask is None:
                raise ObjectiveError("region targets need a region mask")
            if len(self.region_volumes) != len(self.volumes):
                raise ObjectiveError("region targets must list every phase")

    @property
    def has_region(self) -> bool:
        return self.region_volumes is not None


@dataclass(frozen=True)
class ObjectiveReport:
    """Objective values recorded after one loop's state solve"""

    loop: int
    compliance: float
    volume: float
    unity: float
    region: float
    volume_fractions: Tuple[float, ...]
    r_pde: float

    def is_finite(self) -> bool:
        values = (self.compliance, self.volume, self.unity, self.region, self.r_pde) + self.volume_fractions
        return bool(np.all(np.isfinite(values)))


@dataclass
class SensitivitySet:
    """Per-phase partial derivatives, each of shape (n_phases, *dims)"""

    compliance: np.ndarray
    volume: np.ndarray
    unity: np.ndarray
    region: Optional[np.ndarray] = None

    def as_dict(self) -> Dict[str, np.ndarray]:
        out = {'compliance': self.compliance, 'volume': self.volume, 'unity': self.unity}
        if self.region is not None:
            out['region'] = self.region
        return out


# ---------------------------------------------------------------------------
# Interpolation and objectives
# ---------------------------------------------------------------------------

def _check_phase_count(phases: PhaseSet, expected: int, what: str) -> None:
    if len(phases) != expected:
        raise ObjectiveError(f"{len(phases)} phases but {expected} {what}")


def _raw_property(stack: np.ndarray, mat: MaterialModel) -> np.ndarray:
    props = np.asarray(mat.properties, dtype=stack.dtype).reshape((-1,) + (1,) * (stack.ndim - 1))
    return np.sum(props * stack ** mat.penalty, axis=0)


def interpolate(phases: PhaseSet, mat: MaterialModel) -> Field:
    """Effective property sum(p_i phi_i^e), floored at the void floor"""
    _check_phase_count(phases, mat.n_phases, 'material properties')
    raw = _raw_property(phases.stack(), mat)
    return Field(phases.grid, np.maximum(raw, mat.void_floor))


def elastic_material(phases: PhaseSet, mat: MaterialModel) -> ElasticMaterialField:
    E = interpolate(phases, mat).data
    return ElasticMaterialField.from_modulus(E, mat.poisson_ratio)


def thermal_compliance(T: Field, kappa: Field) -> float:
    """sum(kappa |grad T|^2 cellvol)"""
    grid = T.grid
    grad = gradient_array(T.data, grid.spacing)
    return float(np.sum(kappa.data * np.sum(grad * grad, axis=0) * grid.cell_volumes))


def _strain_energy_terms(u: Field) -> Tuple[np.ndarray, np.ndarray]:
    """(tr(eps)^2, eps:eps) at every node"""
    eps = strain_tensor(u.values, u.grid.spacing)
    d = u.grid.ndim
    trace = sum(eps[a, a] for a in range(d))
    return trace * trace, np.sum(eps * eps, axis=(0, 1))


def mechanical_compliance(u: Field, mat: ElasticMaterialField) -> float:
    """sum(sigma:eps cellvol) with sigma = lam tr(eps) I + 2 mu eps"""
    trace2, eps2 = _strain_energy_terms(u)
    density = mat.lam * trace2 + 2 * mat.mu * eps2
    return float(np.sum(density * u.grid.cell_volumes))


def volume_fractions(phases: PhaseSet) -> np.ndarray:
    grid = phases.grid
    stack = phases.stack()
    return np.sum(stack * grid.cell_volumes, axis=tuple(range(1, stack.ndim))) / grid.volume


def region_fractions(phases: PhaseSet, mask: np.ndarray) -> np.ndarray:
    cellvol = phases.grid.cell_volumes
    region_volume = float(np.sum(cellvol[mask]))
    if region_volume <= 0:
        raise ObjectiveError("region mask covers no nodes")
    stack = phases.stack()
    return np.array([np.sum(phi[mask] * cellvol[mask]) for phi in stack]) / region_volume


def volume_objective(phases: PhaseSet, targets: VolumeTargets) -> float:
    _check_phase_count(phases, len(targets.volumes), 'volume targets')
    diff = volume_fractions(phases) - np.asarray(targets.volumes)
    return float(np.sum(diff * diff))


def unity_objective(phases: PhaseSet) -> float:
    """sum over nodes of (sum_i phi_i - 1)^2 cellvol"""
    excess = np.sum(phases.stack(), axis=0) - 1.0
    return float(np.sum(excess * excess * phases.grid.cell_volumes))


def region_objective(phases: PhaseSet, targets: VolumeTargets) -> float:
    if not targets.has_region:
        raise ObjectiveError("no region targets configured")
    _check_phase_count(phases, len(targets.region_volumes), 'region targets')
    diff = region_fractions(phases, targets.region_mask) - np.asarray(targets.region_volumes)
    return float(np.sum(diff * diff))


# ---------------------------------------------------------------------------
# Sensitivities
# ---------------------------------------------------------------------------

def _compliance_sensitivity(phases: PhaseSet, state: Field, mat: MaterialModel) -> np.ndarray:
    grid = phases.grid
    stack = phases.stack()
    e = mat.penalty
    props = np.asarray(mat.properties).reshape((-1,) + (1,) * grid.ndim)
    active = _raw_property(stack, mat) > mat.void_floor
    if mat.kind == 'thermal':
        grad = gradient_array(state.data, grid.spacing)
        density = np.sum(grad * grad, axis=0)
    else:
        c_lam, c_mu = ElasticMaterialField.lame_factors(mat.poisson_ratio)
        trace2, eps2 = _strain_energy_terms(state)
        density = c_lam * trace2 + 2 * c_mu * eps2
    return e * props * stack ** (e - 1) * (density * grid.cell_volumes * active)


def sensitivities(phases: PhaseSet, state: Field, mat: MaterialModel, targets: VolumeTargets,
                  weights: Optional[ObjectiveWeights] = None) -> SensitivitySet:
    """Partial derivatives of every objective term with respect to each phase

    The state (T or u) is held fixed; the compliance term differentiates
    only through the property interpolation. The region term is skipped
    when no region targets exist or its weight is zero.
    """
    _check_phase_count(phases, mat.n_phases, 'material properties')
    _check_phase_count(phases, len(targets.volumes), 'volume targets')
    grid = phases.grid
    cellvol = grid.cell_volumes
    stack = phases.stack()
    shape = (-1,) + (1,) * grid.ndim

    compliance = _compliance_sensitivity(phases, state, mat)

    vf_diff = (volume_fractions(phases) - np.asarray(targets.volumes)).reshape(shape)
    volume = 2.0 * vf_diff * cellvol / grid.volume * np.ones_like(stack)

    excess = np.sum(stack, axis=0) - 1.0
    unity = np.broadcast_to(2.0 * excess * cellvol, stack.shape).copy()

    region = None
    use_region = targets.has_region and (weights is None or weights.alpha_region > 0)
    if use_region:
        mask = targets.region_mask
        region_volume = float(np.sum(cellvol[mask]))
        rf_diff = (region_fractions(phases, mask) - np.asarray(targets.region_volumes)).reshape(shape)
        region = 2.0 * rf_diff * np.where(mask, cellvol, 0.0) / region_volume * np.ones_like(stack)

    return SensitivitySet(compliance=compliance, volume=volume, unity=unity, region=region)


def finite_difference_sensitivities(objective: Callable[[PhaseSet], float], phases: PhaseSet,
                                    step: float = 1e-6) -> np.ndarray:
    """Central-difference derivative of a scalar objective at every node of every phase"""
    base = phases.stack().astype(np.float64)
    grad = np.zeros_like(base)
    names = phases.names
    grid = phases.grid
    for index in np.ndindex(base.shape):
        shifted = base.copy()
        shifted[index] = base[index] + step
        f_plus = objective(PhaseSet.from_array(grid, shifted, names))
        shifted[index] = base[index] - step
        f_minus = objective(PhaseSet.from_array(grid, shifted, names))
        grad[index] = (f_plus - f_minus) / (2 * step)
    logger.debug("finite-difference gradient over %d entries, max |g| = %.3e", base.size, np.abs(grad).max())
    return grad


def compliance_update_term(g: np.ndarray, weights: ObjectiveWeights) -> Optional[np.ndarray]:
    """Weighted compliance contribution for one phase, None when it is skipped"""
    if not weights.normalize_compliance:
        return weights.compliance_sign * weights.alpha_compliance * g
    peak = float(np.max(np.abs(g)))
    if peak == 0.0:
        return None
    return (weights.compliance_sign * weights.alpha_compliance / peak) * g


def design_update(phases: PhaseSet, sens: SensitivitySet, weights: ObjectiveWeights) -> PhaseSet:
    """phi_i <- clamp(phi_i - weighted sensitivity sum, 0, 1)"""
    fields = []
    for i, phi in enumerate(phases):
        step = weights.alpha_volume * sens.volume[i] + weights.alpha_unity * sens.unity[i]
        if sens.region is not None and weights.alpha_region > 0:
            step = step + weights.alpha_region * sens.region[i]
        term = compliance_update_term(sens.compliance[i], weights)
        if term is None:
            logger.debug("compliance term of phase %s is zero, skipped", phases.names[i])
        else:
            step = step + term
        new = np.clip(phi.data - step, 0.0, 1.0).astype(phi.dtype, copy=False)
        fields.append(Field(phases.grid, new))
    return PhaseSet(fields, phases.names)


def total_objective(compliance: float, phases: PhaseSet, targets: VolumeTargets,
                    weights: ObjectiveWeights) -> float:
    """Weighted sum of all terms (compliance unnormalized)"""
    total = weights.alpha_compliance * compliance
    total += weights.alpha_volume * volume_objective(phases, targets)
    total += weights.alpha_unity * unity_objective(phases)
    if targets.has_region and weights.alpha_region > 0:
        total += weights.alpha_region * region_objective(phases, targets)
    return float(total)
