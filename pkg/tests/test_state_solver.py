import numpy as np
import pytest

from services.grid import BoundarySpec, Dirichlet, Field, Grid, NeumannZero, NodeConstraint, TractionFree
from services.state_solver import (
    ElasticMaterialField, ElasticPhysics, HeatPhysics, MaterialError, PTParams, SolveCounters,
    SolverDivergedError, StateHistory, apt_step, elasticity_residual, heat_residual, hybrid_solve,
    pt_step, residual_norm, solve_to_tolerance, stress_field,
)


def poisson(n, source=1.0):
    grid = Grid((n, n), (1.0, 1.0))
    physics = HeatPhysics(grid, np.ones(grid.dims), source, BoundarySpec.uniform(Dirichlet(0.0), 2))
    return grid, physics


# Parameters and materials
# -----------------------------------------------------------------------------

def test_pt_params_defaults():
    grid = Grid((33, 33), (1.0, 1.0))
    params = PTParams.for_grid(grid, n_apt=3, n_pt=4)
    h = 1.0 / 32
    assert params.dt1 == pytest.approx(h * h / 4)
    assert params.dt2 == pytest.approx(h / 2)
    assert params.steps_per_loop == 7

    params3 = PTParams.for_grid(Grid((5, 5, 5), (1.0, 1.0, 1.0)), stability_factor=2.0)
    assert params3.dt1 == pytest.approx(0.25 ** 2 / 12)


@pytest.mark.parametrize('kwargs', [
    dict(dt1=0.0, dt2=1.0),
    dict(dt1=1.0, dt2=1.0, theta=0.0),
    dict(dt1=1.0, dt2=1.0, n_apt=0, n_pt=0),
    dict(dt1=1.0, dt2=1.0, apt_form='implicit'),
])
def test_pt_params_validation(kwargs):
    with pytest.raises(ValueError):
        PTParams(**kwargs)


def test_lame_coefficients():
    mat = ElasticMaterialField.from_modulus(1.0, 0.3, shape=(3, 3))
    assert np.allclose(mat.lam, 0.576923, atol=1e-6)
    assert np.allclose(mat.mu, 0.384615, atol=1e-6)
    with pytest.raises(MaterialError):
        ElasticMaterialField.from_modulus(0.0, 0.3, shape=(3, 3))
    with pytest.raises(MaterialError):
        ElasticMaterialField.lame_factors(0.5)


# Residuals
# -----------------------------------------------------------------------------

def test_heat_residual_uniform_source(unit_grid, dirichlet_box):
    r = heat_residual(Field.zeros(unit_grid), Field.full(unit_grid, 1.0), 0.01, dirichlet_box)
    assert np.allclose(r.data[1:-1, 1:-1], 0.01, atol=1e-15)
    assert np.all(r.data[0, :] == 0.0)


def test_heat_residual_insulated_constant(unit_grid, insulated_box):
    r = heat_residual(Field.full(unit_grid, 0.7), Field.full(unit_grid, 1.0), 0.0, insulated_box)
    assert np.abs(r.data).max() == 0.0


def test_elasticity_residual_zero(unit_grid):
    bc = BoundarySpec.uniform(TractionFree(), 2)
    mat = ElasticMaterialField.from_modulus(1.0, 0.3, shape=unit_grid.dims)
    r = elasticity_residual(Field.zeros(unit_grid, 2), mat, Field.zeros(unit_grid, 2), bc)
    assert np.abs(r.values).max() == 0.0


def test_elasticity_residual_uniform_load(unit_grid):
    bc = BoundarySpec.uniform(TractionFree(), 2, nodes=[NodeConstraint(((0, 0),), component=1)])
    mat = ElasticMaterialField.from_modulus(1.0, 0.3, shape=unit_grid.dims)
    loads = np.zeros((2,) + unit_grid.dims)
    loads[1] = 1.0
    r = elasticity_residual(Field.zeros(unit_grid, 2), mat, Field(unit_grid, loads), bc)
    assert np.abs(r.values[0]).max() == 0.0
    free = np.ones(unit_grid.dims, dtype=bool)
    free[0, 0] = False
    assert np.all(r.values[1][free] == -1.0)
    assert r.values[1, 0, 0] == 0.0


def test_elasticity_residual_rigid_translation(unit_grid):
    bc = BoundarySpec.uniform(TractionFree(), 2)
    mat = ElasticMaterialField.from_modulus(1.0, 0.3, shape=unit_grid.dims)
    u = Field.full(unit_grid, 0.3, components=2)
    r = elasticity_residual(u, mat, Field.zeros(unit_grid, 2), bc)
    assert np.abs(r.values).max() < 1e-12


def test_residual_norm():
    grid = Grid((10, 10), (1.0, 1.0))
    assert residual_norm(Field.zeros(grid)) == 0.0
    assert residual_norm(Field.full(grid, 1.0)) == pytest.approx(100 ** -0.5)
    r = Field(grid, np.linspace(-1.0, 1.0, 100).reshape(10, 10))
    assert residual_norm(Field(grid, -3.0 * r.values)) == pytest.approx(3.0 * residual_norm(r))
    # vector fields divide by the node count, not the entry count
    assert residual_norm(Field.full(grid, 1.0, components=2)) == pytest.approx(200 ** 0.5 / 100)


def test_stress_uniaxial(unit_grid):
    x, _ = unit_grid.mesh()
    eps = 1e-3
    u = Field(unit_grid, np.stack([eps * x, np.zeros_like(x)]))
    mat = ElasticMaterialField.from_modulus(1.0, 0.3, shape=unit_grid.dims)
    sigma = stress_field(u, mat)
    assert set(sigma) == {'xx', 'yy', 'xy'}
    assert np.allclose(sigma['xx'], 1.346154e-3, atol=1e-9)
    assert np.allclose(sigma['yy'], 0.576923e-3, atol=1e-9)
    assert np.allclose(sigma['xy'], 0.0, atol=1e-15)


# Single steps
# -----------------------------------------------------------------------------

def test_pt_step_fixed_point_and_hand_value(unit_grid, insulated_box):
    state = Field(unit_grid, np.linspace(0.0, 1.0, unit_grid.n_nodes).reshape(unit_grid.dims))
    assert np.array_equal(pt_step(state, Field.zeros(unit_grid), 0.5, insulated_box).values, state.values)

    out = pt_step(Field.zeros(unit_grid), Field.full(unit_grid, 0.01), 0.5, insulated_box)
    assert np.allclose(out.data, 0.005)


def test_pt_step_reapplies_dirichlet(unit_grid, dirichlet_box):
    out = pt_step(Field.full(unit_grid, 0.3), Field.full(unit_grid, 0.01), 0.5, dirichlet_box)
    assert np.all(out.data[0, :] == 0.0)
    assert np.all(out.data[:, -1] == 0.0)
    assert np.allclose(out.data[1:-1, 1:-1], 0.305)


def test_pt_step_is_linear(rng):
    grid = Grid((17, 17), (1.0, 1.0))
    bc = BoundarySpec({'x-': Dirichlet(0.0), 'x+': NeumannZero(), 'y-': NeumannZero(), 'y+': NeumannZero()})
    kappa = Field(grid, rng.uniform(0.1, 2.0, size=grid.dims))
    dt1 = PTParams.for_grid(grid).dt1

    def step(T, f):
        return pt_step(T, heat_residual(T, kappa, f, bc), dt1, bc).data

    T1, T2, f1, f2 = (Field(grid, rng.uniform(-1.0, 1.0, size=grid.dims)) for _ in range(4))
    a, b = 0.7, -1.3
    combined = step(Field(grid, a * T1.data + b * T2.data), Field(grid, a * f1.data + b * f2.data))
    assert np.allclose(combined, a * step(T1, f1) + b * step(T2, f2), rtol=0, atol=1e-12)


@pytest.mark.parametrize('apt_form', ['explicit', 'semi-implicit'])
def test_apt_step_fixed_point(apt_form, dirichlet_box):
    grid, physics = poisson(17)
    params = PTParams.for_grid(grid, n_pt=1)
    hist, _ = solve_to_tolerance(StateHistory.from_state(Field.zeros(grid)), physics, params, method='pt',
                                 tol=1e-13, relative=False)
    steady = hist.current
    fixed = StateHistory(steady, steady.copy())
    r = Field(grid, physics.residual(steady.values))
    out = apt_step(fixed, r, params.dt2, 1.0, dirichlet_box, apt_form)
    assert np.allclose(out.current.values, steady.values, rtol=0, atol=1e-12)
    assert out.previous is steady


def test_apt_step_heavy_damping(unit_grid, insulated_box):
    state = Field.full(unit_grid, 0.2)
    hist = StateHistory.from_state(state)
    residual = Field.full(unit_grid, 0.01)
    dt = 0.05
    out = apt_step(hist, residual, dt, 1e9, insulated_box)
    moved = np.abs(out.current.values - state.values).max()
    assert moved <= 1e-6 * 0.01 * dt ** 2 * 2


# Schedules
# -----------------------------------------------------------------------------

def test_hybrid_pt_only_matches_pt_steps(dirichlet_box):
    grid, physics = poisson(17, source=0.01)
    params = PTParams.for_grid(grid, n_apt=0, n_pt=25)
    hist = hybrid_solve(StateHistory.from_state(Field.zeros(grid)), physics, params)

    state = Field.zeros(grid)
    for _ in range(25):
        state = pt_step(state, Field(grid, physics.residual(state.values)), params.dt1, dirichlet_box)
    assert np.array_equal(hist.current.values, state.values)


@pytest.mark.parametrize('apt_form', ['explicit', 'semi-implicit'])
def test_hybrid_apt_only_matches_apt_steps(apt_form, dirichlet_box):
    grid, physics = poisson(17, source=0.01)
    params = PTParams.for_grid(grid, n_apt=25, n_pt=0, apt_form=apt_form)
    hist = hybrid_solve(StateHistory.from_state(Field.zeros(grid)), physics, params)

    stepped = StateHistory.from_state(Field.zeros(grid))
    for _ in range(25):
        r = Field(grid, physics.residual(stepped.current.values))
        stepped = apt_step(stepped, r, params.dt2, params.theta, dirichlet_box, apt_form)
    assert np.array_equal(hist.current.values, stepped.current.values)
    assert np.array_equal(hist.previous.values, stepped.previous.values)


@pytest.mark.parametrize('n_apt, n_pt, method', [(0, 1, 'pt'), (1, 0, 'apt')])
def test_degenerate_hybrid_solve_matches_pure_method(n_apt, n_pt, method):
    grid, physics = poisson(17, source=0.01)
    params = PTParams.for_grid(grid, n_apt=n_apt, n_pt=n_pt)
    start = StateHistory.from_state(Field.zeros(grid))
    hybrid, hybrid_steps = solve_to_tolerance(start, physics, params, method='hybrid', tol=1e-6)
    pure, pure_steps = solve_to_tolerance(start, physics, params, method=method, tol=1e-6)
    assert hybrid_steps == pure_steps
    assert np.array_equal(hybrid.current.values, pure.current.values)


@pytest.mark.parametrize('apt_form', ['explicit', 'semi-implicit'])
def test_hybrid_pass_near_steady_state_moves_little(apt_form):
    grid, physics = poisson(17, source=0.01)
    params = PTParams.for_grid(grid, n_apt=1, n_pt=1, apt_form=apt_form)
    steady, _ = solve_to_tolerance(StateHistory.from_state(Field.zeros(grid)), physics, params, method='pt',
                                   tol=1e-13, relative=False)
    x, y = grid.mesh()
    near = steady.current.values + 1e-3 * np.sin(np.pi * x) * np.sin(np.pi * y)
    eps = residual_norm(physics.residual(near), grid.n_nodes)
    assert eps > 0

    out = hybrid_solve(StateHistory.from_state(Field(grid, near)), physics, params)
    bound = 10 * max(params.dt1, params.dt2 ** 2 / params.theta + params.dt2)
    assert np.abs(out.current.values - near).max() <= bound * eps


def test_hybrid_counts_steps():
    grid, physics = poisson(9)
    counters = SolveCounters()
    params = PTParams.for_grid(grid, n_apt=7, n_pt=5)
    hybrid_solve(StateHistory.from_state(Field.zeros(grid)), physics, params, counters)
    hybrid_solve(StateHistory.from_state(Field.zeros(grid)), physics, params, counters)
    assert counters.apt_steps == 14
    assert counters.pt_steps == 10
    assert counters.state_steps == 24


def test_pt_residual_decreases_monotonically():
    grid, physics = poisson(32, source=0.01)
    params = PTParams.for_grid(grid, n_pt=1)
    hist = StateHistory.from_state(Field.zeros(grid))
    norms = []
    for _ in range(400):
        hist = hybrid_solve(hist, physics, params)
        norms.append(residual_norm(physics.residual(hist.current.values), grid.n_nodes))
    tail = np.array(norms[100:])
    assert np.all(tail[1:] <= tail[:-1] * (1 + 1e-12))
    assert norms[-1] < norms[0]


def test_steady_solution_residual():
    grid, physics = poisson(17, source=0.01)
    params = PTParams.for_grid(grid, n_pt=1)
    hist, steps = solve_to_tolerance(StateHistory.from_state(Field.zeros(grid)), physics, params,
                                     method='pt', tol=1e-12, relative=False)
    assert steps > 0
    assert np.abs(physics.residual(hist.current.values)).max() < 1e-8


def test_divergence_raises_with_field_name():
    grid, physics = poisson(17)
    params = PTParams(dt1=100.0 / 256, dt2=1.0, n_pt=500, nan_check_every=10)
    with pytest.raises(SolverDivergedError) as info:
        hybrid_solve(StateHistory.from_state(Field.zeros(grid)), physics, params)
    assert info.value.field_name == 'T'
    assert info.value.step % 10 == 0


# Manufactured solutions
# -----------------------------------------------------------------------------

def heat_mms_error(n):
    grid = Grid((n, n), (1.0, 1.0))
    x, y = grid.mesh()
    exact = np.sin(np.pi * x) * np.sin(np.pi * y)
    kappa = 1.0 + 0.5 * x
    # div(kappa grad T*) for kappa = 1 + x / 2
    div_flux = -2 * np.pi ** 2 * kappa * exact + 0.5 * np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)
    physics = HeatPhysics(grid, kappa, -div_flux, BoundarySpec.uniform(Dirichlet(0.0), 2))
    params = PTParams.for_grid(grid, n_apt=1, n_pt=0)
    hist, _ = solve_to_tolerance(StateHistory.from_state(Field.zeros(grid)), physics, params,
                                 method='apt', tol=1e-10)
    return np.abs(hist.current.data - exact).max()


def elastic_mms_error(n):
    grid = Grid((n, n), (1.0, 1.0))
    x, y = grid.mesh()
    mat = ElasticMaterialField.from_modulus(1.0, 0.3, shape=grid.dims)
    lam, mu = mat.lam[0, 0], mat.mu[0, 0]
    s = np.sin(np.pi * x) * np.sin(np.pi * y)
    cc = np.cos(np.pi * x) * np.cos(np.pi * y)
    a, b = 1.0, 0.5
    exact = np.stack([a * s, b * s])
    pi2 = np.pi ** 2
    # div(sigma) = (lam + mu) grad(div u) + mu lap(u)
    loads = np.stack([
        (lam + mu) * pi2 * (-a * s + b * cc) - 2 * mu * pi2 * a * s,
        (lam + mu) * pi2 * (a * cc - b * s) - 2 * mu * pi2 * b * s,
    ])
    physics = ElasticPhysics(grid, mat, loads, BoundarySpec.uniform(Dirichlet(0.0), 2))
    params = PTParams.for_grid(grid, n_apt=1, n_pt=0)
    hist, _ = solve_to_tolerance(StateHistory.from_state(Field.zeros(grid, 2)), physics, params,
                                 method='apt', tol=1e-10)
    return np.abs(hist.current.values - exact).max()


@pytest.mark.parametrize('error', [heat_mms_error, elastic_mms_error])
def test_manufactured_solution_second_order(error):
    errors = [error(n) for n in (17, 33, 65)]
    for coarse, fine in zip(errors, errors[1:]):
        assert 3.5 <= coarse / fine <= 4.5


# Iteration scaling
# -----------------------------------------------------------------------------

def steps_to_tolerance(n, method):
    grid, physics = poisson(n)
    params = PTParams.for_grid(grid, n_apt=1 if method == 'apt' else 0, n_pt=1 if method == 'pt' else 0)
    _, steps = solve_to_tolerance(StateHistory.from_state(Field.zeros(grid)), physics, params,
                                  method=method, tol=1e-8)
    return steps


@pytest.mark.slow
def test_pt_iterations_grow_quadratically():
    counts = [steps_to_tolerance(n, 'pt') for n in (32, 64, 128)]
    for coarse, fine in zip(counts, counts[1:]):
        assert 3.5 <= fine / coarse <= 4.5


@pytest.mark.slow
def test_apt_iterations_grow_linearly():
    counts = [steps_to_tolerance(n, 'apt') for n in (32, 64, 128)]
    for coarse, fine in zip(counts, counts[1:]):
        assert 1.6 <= fine / coarse <= 2.5
