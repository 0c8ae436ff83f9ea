"""
Structured grids, nodal fields and finite-difference stencils
Node-centered uniform lattices in 2D and 3D with boundary-condition handling
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

FACE_NAMES = ('x-', 'x+', 'y-', 'y+', 'z-', 'z+')
AXIS_NAMES = ('x', 'y', 'z')


class GridError(ValueError):
    """Raised for invalid grids, fields or boundary specifications"""


class FieldNotFiniteError(FloatingPointError):
    """Raised when a field picks up NaN or Inf during time stepping

    Attributes:
        field_name: Name of the offending field ('T', 'u', 'phi[0]', ...)
        step: Step (or loop) index at which the check failed
    """

    def __init__(self, field_name: str, step: Optional[int] = None, message: str = ''):
        self.field_name = field_name
        self.step = step
        where = f" at step {step}" if step is not None else ''
        super().__init__(message or f"non-finite values in field '{field_name}'{where}")


@dataclass(frozen=True)
class Grid:
    """Uniform node-centered lattice

    Spacing along each axis is length / (count - 1), so nodes sit on both
    ends of every axis.
    """

    dims: Tuple[int, ...]
    lengths: Tuple[float, ...]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        lengths = tuple(float(v) for v in self.lengths)
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'lengths', lengths)

        if len(dims) not in (2, 3):
            raise GridError(f"grid must be 2D or 3D, got {len(dims)} axes")
        if len(lengths) != len(dims):
            raise GridError(f"got {len(dims)} node counts but {len(lengths)} lengths")
        for axis, (n, length) in enumerate(zip(dims, lengths)):
            if n < 3:
                raise GridError(f"axis {AXIS_NAMES[axis]} needs at least 3 nodes, got {n}")
            if not np.isfinite(length) or length <= 0.0:
                raise GridError(f"axis {AXIS_NAMES[axis]} length must be positive, got {length}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(length / (n - 1) for n, length in zip(self.dims, self.lengths))

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @cached_property
    def coords(self) -> Tuple[np.ndarray, ...]:
        """1D node coordinates per axis"""
        return tuple(np.linspace(0.0, length, n) for n, length in zip(self.dims, self.lengths))

    def mesh(self) -> List[np.ndarray]:
        """Node coordinate arrays, one per axis, in 'ij' indexing"""
        return np.meshgrid(*self.coords, indexing='ij')

    def _widths(self, axis: int) -> np.ndarray:
        w = np.full(self.dims[axis], self.spacing[axis])
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    @cached_property
    def cell_volumes(self) -> np.ndarray:
        """Lumped control volume of every node (half cells on faces)

        Returns:
            Read-only array of shape dims summing to the domain volume
        """
        vol = self._widths(0)
        for axis in range(1, self.ndim):
            vol = np.multiply.outer(vol, self._widths(axis))
        vol.setflags(write=False)
        return vol

    def face_volumes(self, axis: int) -> np.ndarray:
        """Control volumes attached to the faces between neighbours along an axis"""
        parts = []
        for a in range(self.ndim):
            if a == axis:
                parts.append(np.full(self.dims[a] - 1, self.spacing[a]))
            else:
                parts.append(self._widths(a))
        vol = parts[0]
        for part in parts[1:]:
            vol = np.multiply.outer(vol, part)
        return vol

    def nearest_node(self, point: Sequence[float]) -> Tuple[int, ...]:
        """Index of the node closest to a physical point"""
        if len(point) != self.ndim:
            raise GridError(f"point {list(point)} does not have {self.ndim} coordinates")
        index = []
        for axis, x in enumerate(point):
            if x < -1e-12 or x > self.lengths[axis] + 1e-12:
                raise GridError(f"point {list(point)} lies outside the domain {list(self.lengths)}")
            index.append(int(np.clip(np.rint(x / self.spacing[axis]), 0, self.dims[axis] - 1)))
        return tuple(index)

    def box_mask(self, lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
        """Boolean node mask of a closed axis-aligned box

        A box that is flat along an axis (lower == upper) selects the
        nearest layer of nodes there, so points and lines pick up nodes.
        """
        if len(lower) != self.ndim or len(upper) != self.ndim:
            raise GridError(f"box corners must have {self.ndim} coordinates")
        mask = np.ones(self.dims, dtype=bool)
        for axis, (lo, hi) in enumerate(zip(lower, upper)):
            if lo > hi:
                raise GridError(f"box lower corner {list(lower)} exceeds upper corner {list(upper)}")
            if lo < -1e-12 or hi > self.lengths[axis] + 1e-12:
                raise GridError(f"box {list(lower)}-{list(upper)} leaves the domain {list(self.lengths)}")
            x = self.coords[axis]
            if lo == hi:
                inside = np.zeros(self.dims[axis], dtype=bool)
                inside[int(np.clip(np.rint(lo / self.spacing[axis]), 0, self.dims[axis] - 1))] = True
            else:
                tol = 1e-9 * self.spacing[axis]
                inside = (x >= lo - tol) & (x <= hi + tol)
            shape = [1] * self.ndim
            shape[axis] = -1
            mask &= inside.reshape(shape)
        return mask

    def face_slice(self, face: str) -> Tuple[Union[slice, int], ...]:
        """Index tuple selecting the nodes of a box face, e.g. 'x-' or 'z+'"""
        if face not in FACE_NAMES[:2 * self.ndim]:
            raise GridError(f"unknown face '{face}' for a {self.ndim}D grid")
        axis = AXIS_NAMES.index(face[0])
        index: List[Union[slice, int]] = [slice(None)] * self.ndim
        index[axis] = 0 if face[1] == '-' else -1
        return tuple(index)

    def faces(self) -> Tuple[str, ...]:
        return FACE_NAMES[:2 * self.ndim]


@dataclass
class Field:
    """Nodal values on a grid

    values has shape (components, *grid.dims); components is 1 for scalar
    fields (T, phi, mu, residuals) and grid.ndim for vector fields (u).
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape == self.grid.dims:
            values = values[np.newaxis]
        if values.shape[1:] != self.grid.dims:
            raise GridError(f"field shape {values.shape} does not match grid {self.grid.dims}")
        if values.shape[0] not in (1, self.grid.ndim):
            raise GridError(f"field must have 1 or {self.grid.ndim} components, got {values.shape[0]}")
        self.values = values

    @classmethod
    def zeros(cls, grid: Grid, components: int = 1, dtype=np.float64) -> 'Field':
        return cls(grid, np.zeros((components,) + grid.dims, dtype=dtype))

    @classmethod
    def full(cls, grid: Grid, value: float, components: int = 1, dtype=np.float64) -> 'Field':
        return cls(grid, np.full((components,) + grid.dims, value, dtype=dtype))

    @property
    def components(self) -> int:
        return self.values.shape[0]

    @property
    def is_scalar(self) -> bool:
        return self.components == 1

    @property
    def data(self) -> np.ndarray:
        """Scalar view of shape dims (scalar fields only)"""
        if not self.is_scalar:
            raise GridError("data is only defined for scalar fields")
        return self.values[0]

    @property
    def dtype(self):
        return self.values.dtype

    def copy(self) -> 'Field':
        return Field(self.grid, self.values.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())


# ---------------------------------------------------------------------------
# Boundary conditions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dirichlet:
    """Every component held at a fixed value"""
    value: float = 0.0


@dataclass(frozen=True)
class NeumannZero:
    """No normal flux (mirrored ghost values)"""


@dataclass(frozen=True)
class TractionFree:
    """Zero normal and shear traction (elasticity)"""


@dataclass(frozen=True)
class Roller:
    """One displacement component held fixed, the others free"""
    component: int
    value: float = 0.0


Condition = Union[Dirichlet, NeumannZero, TractionFree, Roller]


@dataclass(frozen=True)
class NodeConstraint:
    """Override on an explicit node set

    component None constrains every component of the listed nodes.
    """
    nodes: Tuple[Tuple[int, ...], ...]
    component: Optional[int] = None
    value: float = 0.0


@dataclass(frozen=True)
class BoundarySpec:
    """One condition per box face plus optional node-set overrides"""

    faces: Mapping[str, Condition]
    nodes: Tuple[NodeConstraint, ...] = ()

    @classmethod
    def uniform(cls, condition: Condition, ndim: int,
                nodes: Sequence[NodeConstraint] = ()) -> 'BoundarySpec':
        return cls({face: condition for face in FACE_NAMES[:2 * ndim]}, tuple(nodes))

    def validate(self, grid: Grid, components: int = 1) -> None:
        expected = set(grid.faces())
        given = set(self.faces)
        if given != expected:
            missing = sorted(expected - given)
            extra = sorted(given - expected)
            raise GridError(f"boundary must name every face exactly once (missing {missing}, unknown {extra})")
        for face, cond in self.faces.items():
            if not isinstance(cond, (Dirichlet, NeumannZero, TractionFree, Roller)):
                raise GridError(f"face {face}: unsupported condition {cond!r}")
            if isinstance(cond, Roller) and not 0 <= cond.component < components:
                raise GridError(f"face {face}: roller component {cond.component} out of range")
            if isinstance(cond, TractionFree) and components == 1:
                raise GridError(f"face {face}: traction-free applies to vector fields only")
        for override in self.nodes:
            if override.component is not None and not 0 <= override.component < components:
                raise GridError(f"node constraint component {override.component} out of range")
            for node in override.nodes:
                if len(node) != grid.ndim or any(not 0 <= i < n for i, n in zip(node, grid.dims)):
                    raise GridError(f"node constraint index {tuple(node)} outside grid {grid.dims}")

    def compile(self, grid: Grid, components: int = 1) -> 'Constraints':
        """Precompute the constrained-entry mask and prescribed values"""
        self.validate(grid, components)
        mask = np.zeros((components,) + grid.dims, dtype=bool)
        values = np.zeros((components,) + grid.dims)
        for face in grid.faces():
            cond = self.faces[face]
            index = grid.face_slice(face)
            if isinstance(cond, Dirichlet):
                mask[(slice(None),) + index] = True
                values[(slice(None),) + index] = cond.value
            elif isinstance(cond, Roller):
                mask[(cond.component,) + index] = True
                values[(cond.component,) + index] = cond.value
        for override in self.nodes:
            comps = range(components) if override.component is None else (override.component,)
            for node in override.nodes:
                for c in comps:
                    mask[(c,) + tuple(node)] = True
                    values[(c,) + tuple(node)] = override.value
        return Constraints(mask, values)


@dataclass
class Constraints:
    """Compiled Dirichlet/roller entries for one field layout"""

    mask: np.ndarray
    values: np.ndarray
    _cast: Dict = field(default_factory=dict, repr=False)

    def _values_as(self, dtype) -> np.ndarray:
        key = np.dtype(dtype)
        if key not in self._cast:
            self._cast[key] = self.values.astype(key)
        return self._cast[key]

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Overwrite constrained entries in place"""
        np.copyto(values, self._values_as(values.dtype), where=self.mask)
        return values

    def zero(self, values: np.ndarray) -> np.ndarray:
        """Zero constrained entries in place"""
        values[self.mask] = 0
        return values


def apply_dirichlet(f: Field, bc: BoundarySpec) -> Field:
    """Return a copy of f with Dirichlet and roller entries set to their values"""
    out = f.copy()
    bc.compile(f.grid, f.components).apply(out.values)
    return out


# ---------------------------------------------------------------------------
# Stencils
# ---------------------------------------------------------------------------

def _check_same_grid(*fields: Field) -> Grid:
    grid = fields[0].grid
    for other in fields[1:]:
        if other.grid != grid:
            raise GridError(f"fields live on different grids: {grid.dims} vs {other.grid.dims}")
    return grid


def gradient_array(values: np.ndarray, spacing: Sequence[float], edge_order: int = 2) -> np.ndarray:
    """Nodal gradient of a scalar array, shape (ndim, *dims)"""
    parts = np.gradient(values, *spacing, edge_order=edge_order)
    return np.stack(parts)


def gradient(f: Field) -> Field:
    """Central differences inside, one-sided second order on the boundary"""
    if not f.is_scalar:
        raise GridError(f"gradient expects a scalar field, got {f.components} components")
    return Field(f.grid, gradient_array(f.data, f.grid.spacing))


def divergence(v: Field) -> Field:
    grid = v.grid
    if v.components != grid.ndim:
        raise GridError(f"divergence expects {grid.ndim} components, got {v.components}")
    total = np.zeros(grid.dims, dtype=v.dtype)
    for axis, h in enumerate(grid.spacing):
        total += np.gradient(v.values[axis], h, axis=axis, edge_order=2)
    return Field(grid, total)


def face_average(values: np.ndarray, axis: int) -> np.ndarray:
    """Arithmetic mean of neighbouring nodes along an axis"""
    lo: List = [slice(None)] * values.ndim
    hi: List = [slice(None)] * values.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (values[tuple(lo)] + values[tuple(hi)])


def flux_divergence(flux: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Nodal divergence of face fluxes along one axis

    flux holds the values on the n-1 faces between neighbours. Boundary
    faces carry zero flux, so the first and last nodes see only their
    half control volume.
    """
    pad = [(0, 0)] * flux.ndim
    pad[axis] = (1, 1)
    div = np.diff(np.pad(flux, pad), axis=axis) / h
    edge: List = [slice(None)] * flux.ndim
    edge[axis] = [0, -1]
    div[tuple(edge)] *= 2.0
    return div


def laplacian_array(values: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """Mirror-ghost (2d+1)-point Laplacian of a scalar array"""
    out = np.zeros_like(values)
    for axis, h in enumerate(spacing):
        out += flux_divergence(np.diff(values, axis=axis) / h, axis, h)
    return out


def laplacian(f: Field) -> Field:
    if not f.is_scalar:
        raise GridError("laplacian expects a scalar field")
    return Field(f.grid, laplacian_array(f.data, f.grid.spacing))


class DiffusionOperator:
    """Conservative div(kappa grad .) with face-averaged conductivities

    Face coefficients, including the doubled weight of the half control
    volumes on the boundary nodes, are computed once so the operator can
    be applied thousands of times per optimization loop.
    """

    def __init__(self, grid: Grid, kappa: np.ndarray):
        kappa = np.asarray(kappa)
        if kappa.shape != grid.dims:
            raise GridError(f"conductivity shape {kappa.shape} does not match grid {grid.dims}")
        if not np.all(kappa > 0):
            raise GridError("conductivity must be positive everywhere")
        self.grid = grid
        self._terms = []
        for axis, h in enumerate(grid.spacing):
            lower: List = [slice(None)] * grid.ndim
            upper: List = [slice(None)] * grid.ndim
            lower[axis] = slice(None, -1)
            upper[axis] = slice(1, None)
            # node i gains the flux through face i, node i+1 loses it
            gain = face_average(kappa, axis) / h ** 2
            loss = gain.copy()
            first: List = [slice(None)] * grid.ndim
            first[axis] = 0
            last: List = [slice(None)] * grid.ndim
            last[axis] = -1
            gain[tuple(first)] *= 2.0
            loss[tuple(last)] *= 2.0
            self._terms.append((axis, tuple(lower), tuple(upper), gain, loss))

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros_like(values)
        for axis, lower, upper, gain, loss in self._terms:
            d = np.diff(values, axis=axis)
            out[lower] += gain * d
            out[upper] -= loss * d
        return out


def variable_diffusion(f: Field, kappa: Field, bc: BoundarySpec) -> Field:
    """div(kappa grad f) in flux form

    Every box face is treated with mirrored ghosts, which gives zero
    normal flux on NeumannZero faces. Values on Dirichlet nodes are not
    meaningful; callers overwrite or ignore them.
    """
    grid = _check_same_grid(f, kappa)
    if not (f.is_scalar and kappa.is_scalar):
        raise GridError("variable_diffusion expects scalar fields")
    bc.validate(grid, 1)
    return Field(grid, DiffusionOperator(grid, kappa.data).apply(f.data))
