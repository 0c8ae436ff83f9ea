"""
Pseudo-transient state solver
PT and accelerated PT (damped second-order) iterations for heat and linear elasticity
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from services.grid import (
    BoundarySpec, Field, FieldNotFiniteError, Grid, GridError, DiffusionOperator,
    face_average, flux_divergence, gradient_array,
)

logger = logging.getLogger(__name__)

APT_FORMS = ('explicit', 'semi-implicit')


class SolverDivergedError(FieldNotFiniteError):
    """A pseudo-time iteration produced NaN or Inf (time step too large)"""


class MaterialError(ValueError):
    """Raised for nonpositive or inconsistent material coefficients"""


@dataclass(frozen=True)
class PTParams:
    """Pseudo-time stepping parameters for one optimization loop

    dt1 is the PT step, dt2 the APT step and theta the APT damping factor.
    apt_form picks where the first-order damping term sits: 'explicit'
    uses the (n, n-1) difference, 'semi-implicit' the (n+1, n) difference.
    """

    dt1: float
    dt2: float
    theta: float = 1.0
    n_apt: int = 0
    n_pt: int = 1
    apt_form: str = 'explicit'
    nan_check_every: int = 100

    def __post_init__(self):
        if not self.dt1 > 0 or not self.dt2 > 0:
            raise ValueError(f"time steps must be positive (dt1={self.dt1}, dt2={self.dt2})")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.n_apt < 0 or self.n_pt < 0 or self.n_apt + self.n_pt < 1:
            raise ValueError(f"need n_apt, n_pt >= 0 and at least one step (got {self.n_apt}, {self.n_pt})")
        if self.apt_form not in APT_FORMS:
            raise ValueError(f"apt_form must be one of {APT_FORMS}, got '{self.apt_form}'")
        if self.nan_check_every < 1:
            raise ValueError("nan_check_every must be >= 1")

    @classmethod
    def for_grid(cls, grid: Grid, n_apt: int = 0, n_pt: int = 1, theta: float = 1.0,
                 apt_form: str = 'explicit', stability_factor: float = 1.0,
                 nan_check_every: int = 100) -> 'PTParams':
        """Default steps: dt1 = dx^2 / (2 d sf), dt2 = dx / 2 on the finest axis"""
        h = grid.min_spacing
        return cls(
            dt1=h * h / (2 * grid.ndim * stability_factor),
            dt2=h / 2,
            theta=theta,
            n_apt=n_apt,
            n_pt=n_pt,
            apt_form=apt_form,
            nan_check_every=nan_check_every,
        )

    @property
    def steps_per_loop(self) -> int:
        return self.n_apt + self.n_pt


@dataclass(frozen=True)
class ElasticMaterialField:
    """Nodal Lame coefficients"""

    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        if self.lam.shape != self.mu.shape:
            raise MaterialError("lambda and mu must have the same shape")
        if not (np.all(self.lam > 0) and np.all(self.mu > 0)):
            raise MaterialError("Lame coefficients must be positive everywhere")

    @staticmethod
    def lame_factors(poisson_ratio: float) -> Tuple[float, float]:
        """(lambda / E, mu / E) for a given Poisson ratio"""
        nu = float(poisson_ratio)
        if not -1.0 < nu < 0.5:
            raise MaterialError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
        return nu / ((1 + nu) * (1 - 2 * nu)), 1 / (2 * (1 + nu))

    @classmethod
    def from_modulus(cls, modulus: Union[np.ndarray, float], poisson_ratio: float,
                     shape: Optional[Tuple[int, ...]] = None) -> 'ElasticMaterialField':
        E = np.asarray(modulus)
        if shape is not None:
            E = np.broadcast_to(E, shape)
        if not np.all(E > 0):
            raise MaterialError("Young's modulus must be positive everywhere")
        c_lam, c_mu = cls.lame_factors(poisson_ratio)
        return cls(lam=c_lam * E, mu=c_mu * E)


@dataclass
class StateHistory:
    """Two most recent iterates, as needed by the three-level APT stencil"""

    current: Field
    previous: Field

    def __post_init__(self):
        if self.current.grid != self.previous.grid:
            raise GridError("history fields live on different grids")
        if self.current.components != self.previous.components:
            raise GridError("history fields have different component counts")

    @classmethod
    def from_state(cls, state: Field) -> 'StateHistory':
        return cls(state.copy(), state.copy())

    def rotate(self, new: Field) -> 'StateHistory':
        return StateHistory(new, self.current)

    @property
    def grid(self) -> Grid:
        return self.current.grid


@dataclass
class SolveCounters:
    """Instrumented step counts"""
    apt_steps: int = 0
    pt_steps: int = 0

    @property
    def state_steps(self) -> int:
        return self.apt_steps + self.pt_steps


# ---------------------------------------------------------------------------
# Physics bundles
# ---------------------------------------------------------------------------

class HeatPhysics:
    """Steady heat conduction: div(kappa grad T) + f = 0"""

    field_name = 'T'
    components = 1

    def __init__(self, grid: Grid, kappa: np.ndarray, source: Union[np.ndarray, float], bc: BoundarySpec):
        self.grid = grid
        self.operator = DiffusionOperator(grid, kappa)
        self.source = np.broadcast_to(np.asarray(source, dtype=np.asarray(kappa).dtype), grid.dims)
        self.constraints = bc.compile(grid, 1)

    def residual(self, values: np.ndarray) -> np.ndarray:
        r = self.operator.apply(values[0]) + self.source
        return self.constraints.zero(r[np.newaxis])


def strain_tensor(u: np.ndarray, spacing, edge_order: int = 2) -> np.ndarray:
    """Small-strain tensor eps[a, b] of a displacement array (d, *dims)"""
    d = u.shape[0]
    grad = np.stack([gradient_array(u[c], spacing, edge_order) for c in range(d)])  # grad[c, a] = d u_c / d x_a
    return 0.5 * (grad + grad.transpose(1, 0, *range(2, grad.ndim)))


class ElasticPhysics:
    """Linear elasticity div(sigma) = f with sigma = lam tr(eps) I + 2 mu eps

    Stresses are assembled on the faces between neighbouring nodes:
    normal derivatives use compact differences, tangential derivatives
    are nodal central differences averaged onto the face. Boundary faces
    carry no traction; Dirichlet and roller entries are masked.
    """

    field_name = 'u'

    def __init__(self, grid: Grid, material: ElasticMaterialField, loads: np.ndarray, bc: BoundarySpec):
        loads = np.asarray(loads)
        if loads.shape != (grid.ndim,) + grid.dims:
            raise GridError(f"loads shape {loads.shape} does not match a {grid.ndim}-component field")
        if material.lam.shape != grid.dims:
            raise MaterialError(f"material shape {material.lam.shape} does not match grid {grid.dims}")
        self.grid = grid
        self.components = grid.ndim
        self.material = material
        self.loads = loads
        self.constraints = bc.compile(grid, grid.ndim)
        lam, mu = material.lam, material.mu
        h = grid.spacing
        self._normal = [(face_average(lam, a) + 2 * face_average(mu, a)) / h[a] for a in range(grid.ndim)]
        self._shear = [face_average(mu, a) / h[a] for a in range(grid.ndim)]

    def residual(self, u: np.ndarray) -> np.ndarray:
        d = self.components
        h = self.grid.spacing
        lam, mu = self.material.lam, self.material.mu
        # tangential derivatives, du[b][c] = d u_c / d x_b
        du = [[np.gradient(u[c], h[b], axis=b, edge_order=1) for c in range(d)] for b in range(d)]
        r = -self.loads.astype(u.dtype, copy=True)
        for c in range(d):
            for a in range(d):
                jump = np.diff(u[c], axis=a)
                if a == c:
                    lateral = sum(du[b][b] for b in range(d) if b != c)
                    flux = self._normal[a] * jump + face_average(lam * lateral, a)
                else:
                    flux = self._shear[a] * jump + face_average(mu * du[c][a], a)
                r[c] += flux_divergence(flux, a, h[a])
        return self.constraints.zero(r)


Physics = Union[HeatPhysics, ElasticPhysics]


def stress_field(u: Field, mat: ElasticMaterialField) -> Dict[str, np.ndarray]:
    """Nodal stress components keyed 'xx', 'yy', 'xy' (plus z terms in 3D)"""
    grid = u.grid
    if u.components != grid.ndim:
        raise GridError("stress_field expects a displacement field")
    eps = strain_tensor(u.values, grid.spacing)
    trace = sum(eps[a, a] for a in range(grid.ndim))
    names = 'xyz'
    out = {}
    for a in range(grid.ndim):
        for b in range(a, grid.ndim):
            sigma = 2 * mat.mu * eps[a, b]
            if a == b:
                sigma = sigma + mat.lam * trace
            out[names[a] + names[b]] = sigma
    return out


# ---------------------------------------------------------------------------
# Residuals and single steps
# ---------------------------------------------------------------------------

def heat_residual(T: Field, kappa: Field, f: Union[Field, float], bc: BoundarySpec) -> Field:
    """div(kappa grad T) + f with Dirichlet entries zeroed"""
    source = f.data if isinstance(f, Field) else f
    if isinstance(f, Field) and f.grid != T.grid:
        raise GridError("source and temperature live on different grids")
    if kappa.grid != T.grid:
        raise GridError("conductivity and temperature live on different grids")
    physics = HeatPhysics(T.grid, kappa.data, source, bc)
    return Field(T.grid, physics.residual(T.values))


def elasticity_residual(u: Field, mat: ElasticMaterialField, loads: Field, bc: BoundarySpec) -> Field:
    """div(sigma) - f per component with constrained entries zeroed"""
    if loads.grid != u.grid:
        raise GridError("loads and displacement live on different grids")
    physics = ElasticPhysics(u.grid, mat, loads.values, bc)
    return Field(u.grid, physics.residual(u.values))


def residual_norm(r: Union[Field, np.ndarray], n_nodes: Optional[int] = None) -> float:
    """Euclidean norm of all entries divided by the number of grid nodes"""
    if isinstance(r, Field):
        values, n_nodes = r.values, r.grid.n_nodes
    else:
        values = np.asarray(r)
        if n_nodes is None:
            n_nodes = values.size
    return float(np.sqrt(np.sum(np.square(values, dtype=np.float64))) / n_nodes)


def _check_finite(values: np.ndarray, field_name: str, step: int) -> None:
    if not np.isfinite(values).all():
        logger.warning("Field %s became non-finite at step %d", field_name, step)
        raise SolverDivergedError(field_name, step)


def _apt_update(cur: np.ndarray, prev: np.ndarray, r: np.ndarray, dt: float, theta: float, form: str) -> np.ndarray:
    if form == 'explicit':
        return 2 * cur - prev + (dt * dt / theta) * (r - (cur - prev) / dt)
    return (dt * dt * r + theta * (2 * cur - prev) + dt * cur) / (theta + dt)


def pt_step(state: Field, residual: Field, dt1: float, bc: BoundarySpec, field_name: str = 'state') -> Field:
    """One forward-Euler pseudo-time step

    Dirichlet and roller entries of bc are reapplied to the result; a BoundarySpec
    made of Neumann faces only leaves every entry free.
    """
    new = state.values + dt1 * residual.values
    bc.compile(state.grid, state.components).apply(new)
    _check_finite(new, field_name, 1)
    return Field(state.grid, new)


def apt_step(hist: StateHistory, residual: Field, dt2: float, theta: float, bc: BoundarySpec,
             apt_form: str = 'explicit', field_name: str = 'state') -> StateHistory:
    """One damped second-order pseudo-time step; returns the rotated history

    Constraints in bc are reapplied as in pt_step.
    """
    if not dt2 > 0 or not theta > 0:
        raise ValueError(f"dt2 and theta must be positive (dt2={dt2}, theta={theta})")
    if apt_form not in APT_FORMS:
        raise ValueError(f"apt_form must be one of {APT_FORMS}, got '{apt_form}'")
    new = _apt_update(hist.current.values, hist.previous.values, residual.values, dt2, theta, apt_form)
    bc.compile(hist.grid, hist.current.components).apply(new)
    _check_finite(new, field_name, 1)
    return hist.rotate(Field(hist.grid, new))


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

def hybrid_solve(hist: StateHistory, physics: Physics, params: PTParams,
                 counters: Optional[SolveCounters] = None) -> StateHistory:
    """n_apt APT steps followed by n_pt PT steps

    Does not iterate to convergence; the caller owns that decision.

    Raises:
        SolverDivergedError: with the global step index of the failure
    """
    cur = hist.current.values.copy()
    prev = hist.previous.values.copy()
    constraints = physics.constraints
    check = params.nan_check_every
    step = 0

    for _ in range(params.n_apt):
        r = physics.residual(cur)
        new = _apt_update(cur, prev, r, params.dt2, params.theta, params.apt_form)
        constraints.apply(new)
        prev, cur = cur, new
        step += 1
        if step % check == 0:
            _check_finite(cur, physics.field_name, step)
    if counters is not None:
        counters.apt_steps += params.n_apt

    for _ in range(params.n_pt):
        r = physics.residual(cur)
        new = cur + params.dt1 * r
        constraints.apply(new)
        prev, cur = cur, new
        step += 1
        if step % check == 0:
            _check_finite(cur, physics.field_name, step)
    if counters is not None:
        counters.pt_steps += params.n_pt

    _check_finite(cur, physics.field_name, step)
    return StateHistory(Field(hist.grid, cur), Field(hist.grid, prev))


def solve_to_tolerance(hist: StateHistory, physics: Physics, params: PTParams, method: str = 'hybrid',
                       tol: float = 1e-8, relative: bool = True,
                       max_steps: int = 1_000_000) -> Tuple[StateHistory, int]:
    """Iterate until r_PDE drops below tol (times the initial r_PDE if relative)

    method is 'pt', 'apt' or 'hybrid'; hybrid cycles the per-loop schedule.

    Returns:
        Tuple of (final history, number of state updates performed)
    """
    if method not in ('pt', 'apt', 'hybrid'):
        raise ValueError(f"unknown method '{method}'")
    n_nodes = hist.grid.n_nodes
    cur = hist.current.values.copy()
    prev = hist.previous.values.copy()
    constraints = physics.constraints

    r = physics.residual(cur)
    target = tol * residual_norm(r, n_nodes) if relative else tol
    cycle = max(params.n_apt + params.n_pt, 1)
    steps = 0
    while residual_norm(r, n_nodes) > target:
        if steps >= max_steps:
            logger.warning("solve_to_tolerance stopped after %d steps (r_PDE=%.3e, target %.3e)",
                           steps, residual_norm(r, n_nodes), target)
            break
        if method == 'apt' or (method == 'hybrid' and steps % cycle < params.n_apt):
            new = _apt_update(cur, prev, r, params.dt2, params.theta, params.apt_form)
        else:
            new = cur + params.dt1 * r
        constraints.apply(new)
        prev, cur = cur, new
        steps += 1
        if steps % params.nan_check_every == 0:
            _check_finite(cur, physics.field_name, steps)
        r = physics.residual(cur)

    _check_finite(cur, physics.field_name, steps)
    logger.debug("%s solve reached r_PDE=%.3e in %d steps", method, residual_norm(r, n_nodes), steps)
    return StateHistory(Field(hist.grid, cur), Field(hist.grid, prev)), steps
