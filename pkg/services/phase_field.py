"""
Cahn-Hilliard evolution of the design densities
Explicit Euler stepping with no-flux boundaries, one field per phase
"""
import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from services.grid import Field, FieldNotFiniteError, Grid, GridError, laplacian_array

logger = logging.getLogger(__name__)

WELL_HEIGHT = 1.0 / 64.0
# max of d2w/dphi2 for the sin^2 well
WELL_CURVATURE = 2.0 * np.pi ** 2 / 64.0

PerPhase = Union[float, Sequence[float]]


class PhaseFieldError(ValueError):
    """Raised for invalid phase sets or Cahn-Hilliard parameters"""


def double_well(phi):
    """w(phi) = sin^2(pi phi) / 64, zero at the pure phases"""
    return WELL_HEIGHT * np.sin(np.pi * phi) ** 2


def dwell(phi):
    """dw/dphi = (pi / 64) sin(2 pi phi)"""
    return (np.pi / 64.0) * np.sin(2.0 * np.pi * phi)


def stable_dt3(grid: Grid, gamma: float, mobility: float = 1.0) -> float:
    """Largest forward-Euler step for the linearized Cahn-Hilliard operator

    Uses the largest eigenvalue of the mirror-ghost Laplacian, 4 sum(1/dx^2),
    and the largest curvature of the double well.
    """
    k = 4.0 * sum(1.0 / (h * h) for h in grid.spacing)
    return 2.0 / (mobility * k * (gamma * k + WELL_CURVATURE))


@dataclass(frozen=True)
class CahnHilliardParams:
    """Mobility D, interface parameter gamma and time step dt3

    mobility and gamma are either shared or given per phase.
    """

    dt3: float
    gamma: PerPhase = 3e-5
    mobility: PerPhase = 1.0

    def __post_init__(self):
        if not self.dt3 > 0:
            raise PhaseFieldError(f"dt3 must be positive, got {self.dt3}")
        for name in ('gamma', 'mobility'):
            values = np.atleast_1d(getattr(self, name))
            if values.size == 0 or not np.all(values > 0):
                raise PhaseFieldError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def for_grid(cls, grid: Grid, dt3_factor: float = 500.0, gamma: PerPhase = 3e-5,
                 mobility: PerPhase = 1.0, safety: Optional[float] = 0.9) -> 'CahnHilliardParams':
        """dt3 = dt3_factor * dx^4, capped at safety * stable_dt3 when safety is set"""
        h = grid.min_spacing
        dt3 = dt3_factor * h ** 4
        if safety is not None:
            limit = safety * min(stable_dt3(grid, g, d)
                                 for g in np.atleast_1d(gamma) for d in np.atleast_1d(mobility))
            if dt3 > limit:
                logger.warning("dt3 = %g dx^4 exceeds the explicit stability limit on this grid; "
                               "using %.3e (%.1f dx^4)", dt3_factor, limit, limit / h ** 4)
                dt3 = limit
        return cls(dt3=dt3, gamma=gamma, mobility=mobility)

    def for_phase(self, index: int) -> Tuple[float, float]:
        """(gamma, mobility) of one phase"""
        def pick(value):
            values = np.atleast_1d(value)
            if values.size == 1:
                return float(values[0])
            if index >= values.size:
                raise PhaseFieldError(f"no per-phase value for phase {index}")
            return float(values[index])
        return pick(self.gamma), pick(self.mobility)


@dataclass
class PhaseSet:
    """Ordered phase densities sharing one grid"""

    fields: List[Field]
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.fields:
            raise PhaseFieldError("a phase set needs at least one phase")
        grid = self.fields[0].grid
        for f in self.fields:
            if f.grid != grid:
                raise PhaseFieldError("all phases must share one grid")
            if not f.is_scalar:
                raise PhaseFieldError("phase densities are scalar fields")
        if not self.names:
            self.names = tuple(f"phase{i}" for i in range(len(self.fields)))
        self.names = tuple(self.names)
        if len(self.names) != len(self.fields):
            raise PhaseFieldError(f"{len(self.names)} names for {len(self.fields)} phases")

    @classmethod
    def from_array(cls, grid: Grid, values: np.ndarray, names: Sequence[str] = ()) -> 'PhaseSet':
        """Build from an array of shape (n_phases, *dims)"""
        return cls([Field(grid, np.array(v)[np.newaxis]) for v in values], tuple(names))

    @classmethod
    def uniform(cls, grid: Grid, values: Sequence[float], names: Sequence[str] = (),
                dtype=np.float64) -> 'PhaseSet':
        return cls([Field.full(grid, v, dtype=dtype) for v in values], tuple(names))

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    def __len__(self) -> int:
        return len(self.fields)

    def __iter__(self) -> Iterator[Field]:
        return iter(self.fields)

    def __getitem__(self, index: int) -> Field:
        return self.fields[index]

    def stack(self) -> np.ndarray:
        return np.stack([f.data for f in self.fields])

    def copy(self) -> 'PhaseSet':
        return PhaseSet([f.copy() for f in self.fields], self.names)


def phase_mass(phi: Field) -> float:
    """Cell-volume weighted integral of a density"""
    return float(np.sum(phi.data * phi.grid.cell_volumes))


def chemical_potential(phi: Field, gamma: float) -> Field:
    """mu = dw/dphi - gamma lap(phi) with no-flux boundaries"""
    if not phi.is_scalar:
        raise GridError("chemical_potential expects a scalar field")
    values = phi.data
    mu = dwell(values) - gamma * laplacian_array(values, phi.grid.spacing)
    return Field(phi.grid, mu)


def ch_step(phi: Field, params: CahnHilliardParams, phase_index: int = 0, clamp: bool = True) -> Field:
    """phi + dt3 D lap(mu), then clamp to [0, 1]

    Raises:
        FieldNotFiniteError: when dt3 is too large for the grid
    """
    gamma, mobility = params.for_phase(phase_index)
    spacing = phi.grid.spacing
    mu = chemical_potential(phi, gamma).data
    new = phi.data + (params.dt3 * mobility) * laplacian_array(mu, spacing)
    if not np.isfinite(new).all():
        raise FieldNotFiniteError(f"phi[{phase_index}]")
    if clamp:
        np.clip(new, 0.0, 1.0, out=new)
    return Field(phi.grid, new)


def ch_step_multi(phases: PhaseSet, params: CahnHilliardParams, executor: Optional[Executor] = None,
                  clamp: bool = True) -> PhaseSet:
    """ch_step on every phase independently

    With an executor the phases are stepped concurrently; each phase is
    computed the same way either way, so results do not depend on it.
    """
    def step(i: int) -> Field:
        return ch_step(phases[i], params, phase_index=i, clamp=clamp)

    indices = range(len(phases))
    if executor is None:
        fields = [step(i) for i in indices]
    else:
        fields = list(executor.map(step, indices))
    return PhaseSet(fields, phases.names)


def ginzburg_landau_energy(phi: Field, gamma: float) -> float:
    """sum(w(phi) cellvol) + gamma/2 sum over faces of (dphi/dx)^2 facevol"""
    grid = phi.grid
    values = phi.data
    energy = float(np.sum(double_well(values) * grid.cell_volumes))
    for axis, h in enumerate(grid.spacing):
        slope = np.diff(values, axis=axis) / h
        energy += 0.5 * gamma * float(np.sum(slope * slope * grid.face_volumes(axis)))
    return energy


def mirror_symmetrize(phases: PhaseSet, axes: Sequence[int]) -> PhaseSet:
    """Average every phase with its mirror image about the mid-plane of each axis

    The result is exactly symmetric. Bounds and phase_mass are unchanged
    as the lumped cell volumes are symmetric too.
    """
    if not axes:
        return phases
    ndim = phases.grid.ndim
    for axis in axes:
        if not 0 <= axis < ndim:
            raise PhaseFieldError(f"symmetry axis {axis} out of range for a {ndim}D grid")
    stack = phases.stack()
    for axis in axes:
        # phase index is axis 0 of the stack
        stack = 0.5 * (stack + np.flip(stack, axis=axis + 1))
    return PhaseSet.from_array(phases.grid, stack, phases.names)
