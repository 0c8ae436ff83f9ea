import numpy as np
import pytest

from config import ProblemConfig
from services.objectives import ObjectiveReport
from services.optimizer import (
    LoopSchedule, has_converged, phase_separation_metric, relative_spread, run,
)
from services.phase_field import PhaseSet
from services.problem import build_problem, build_schedule


def heat_setup(n=17, **schedule):
    cfg = ProblemConfig.from_dict({
        'preset': 'heat2d',
        'grid': {'dims': [n, n]},
        'schedule': dict({'n_apt': 5, 'n_pt': 5, 'max_loops': 3}, **schedule),
    })
    problem = build_problem(cfg)
    return problem, build_schedule(cfg, problem.grid)


def report(loop, compliance):
    return ObjectiveReport(loop=loop, compliance=compliance, volume=0.0, unity=0.0, region=0.0,
                           volume_fractions=(0.5, 0.5), r_pde=0.0)


# Helpers
# -----------------------------------------------------------------------------

def test_relative_spread():
    assert relative_spread([2.0, 2.0, 2.0]) == 0.0
    assert relative_spread([1.0, 3.0]) == pytest.approx(1.0)
    assert relative_spread([0.0, 0.0]) == 0.0
    assert relative_spread([-1.0, 1.0]) == np.inf


def test_has_converged():
    history = [report(i, 1.0 + 1e-3 / i) for i in range(1, 11)]
    assert not has_converged(history[:3], tolerance=1.0, window=5)
    assert has_converged(history, tolerance=1e-3, window=5)
    assert not has_converged(history, tolerance=1e-5, window=5)


def test_phase_separation_metric(unit_grid):
    assert phase_separation_metric(PhaseSet.uniform(unit_grid, [0.0, 1.0])) == 1.0
    assert phase_separation_metric(PhaseSet.uniform(unit_grid, [0.5, 0.5])) == 0.0
    assert phase_separation_metric(PhaseSet.uniform(unit_grid, [0.95, 0.02])) == 1.0


def test_schedule_validation():
    _, schedule = heat_setup()
    with pytest.raises(ValueError):
        LoopSchedule(pt=schedule.pt, ch=schedule.ch, max_loops=0)
    with pytest.raises(ValueError):
        LoopSchedule(pt=schedule.pt, ch=schedule.ch, max_loops=5, window=1)


# Loop
# -----------------------------------------------------------------------------

def test_single_loop_accounting():
    problem, schedule = heat_setup(n_apt=3, n_pt=2, max_loops=1)
    result = run(problem, schedule)
    assert result.termination == 'max_loops'
    assert result.loops == 1
    assert result.counters.apt_steps == 3
    assert result.counters.pt_steps == 2
    assert result.counters.updates == 1
    assert result.counters.ch_steps == 1
    assert len(result.history) == 1


def test_report_cadence_and_callback():
    problem, schedule = heat_setup(max_loops=6)
    schedule = LoopSchedule(pt=schedule.pt, ch=schedule.ch, max_loops=6, report_every=2)
    seen = []
    result = run(problem, schedule, callback=lambda loop, rep: seen.append((loop, rep.loop)))
    assert seen == [(1, 1), (3, 3), (5, 5)]
    assert [r.loop for r in result.history] == [1, 3, 5]
    assert result.final_report.loop == 6


def test_run_is_deterministic():
    problem, schedule = heat_setup(max_loops=4)
    first = run(problem, schedule)
    second = run(problem, schedule)
    assert np.array_equal(first.phases.stack(), second.phases.stack())
    assert np.array_equal(first.state.values, second.state.values)
    assert first.history == second.history


def test_run_converges_with_frozen_design():
    problem, schedule = heat_setup(n_apt=50, n_pt=50, max_loops=500, tolerance=1e-6, window=5,
                                   update_design=False, evolve_phases=False)
    result = run(problem, schedule)
    assert result.termination == 'converged'
    assert result.success
    assert result.loops < 500
    assert result.counters.updates == 0
    assert result.counters.ch_steps == 0
    assert np.array_equal(result.phases.stack(), problem.initial_phases.stack())


def test_run_aborts_on_nan():
    problem, schedule = heat_setup(n_apt=0, n_pt=300, dt1=1.0, max_loops=3)
    result = run(problem, schedule)
    assert result.termination == 'aborted-NaN'
    assert not result.success
    assert result.field_name == 'T'
    assert 'loop 1' in result.message
    assert "'T'" in result.message
    assert result.history == []


def test_run_elastic_loop():
    cfg = ProblemConfig.from_dict({
        'preset': 'mbb2d',
        'grid': {'dims': [33, 9]},
        'schedule': {'n_apt': 10, 'n_pt': 10, 'max_loops': 2},
    })
    problem = build_problem(cfg)
    result = run(problem, build_schedule(cfg, problem.grid))
    assert result.success
    assert result.state.components == 2
    assert len(result.phases) == 6
    assert result.final_report.compliance > 0.0
    assert all(0.0 <= v <= 1.0 for v in result.final_report.volume_fractions)



def test_symmetric_run_keeps_mirror_image():
    cfg = ProblemConfig.from_dict({
        'preset': 'mbb2d',
        'grid': {'dims': [33, 9]},
        'schedule': {'n_apt': 10, 'n_pt': 10, 'max_loops': 3},
        'initial': {'noise': 0.05, 'seed': 3},
    })
    problem = build_problem(cfg)
    stack = problem.initial_phases.stack()
    assert not np.array_equal(stack, np.flip(stack, axis=1))

    result = run(problem, build_schedule(cfg, problem.grid))
    assert result.success
    stack = result.phases.stack()
    assert np.array_equal(stack, np.flip(stack, axis=1))


# Acceptance runs
# -----------------------------------------------------------------------------

def tail_spread(history, fraction=0.1):
    """Relative compliance spread over the final part of the history"""
    tail = history[-max(2, int(len(history) * fraction)):]
    return relative_spread([r.compliance for r in tail])


def mirror_asymmetry(values, axis):
    return float(np.abs(values - np.flip(values, axis=axis)).sum() / np.abs(values).sum())


@pytest.mark.slow
def test_heat_sink_acceptance():
    cfg = ProblemConfig.from_dict({'preset': 'heat2d', 'grid': {'dims': [128, 128]},
                                   'schedule': {'max_loops': 2500, 'tolerance': 1e-12}})
    problem = build_problem(cfg)
    result = run(problem, build_schedule(cfg, problem.grid))
    assert result.success
    assert result.loops >= 1000

    for value, target in zip(result.final_report.volume_fractions, (0.3, 0.7)):
        assert abs(value - target) <= 0.02
    assert phase_separation_metric(result.phases) >= 0.7
    assert tail_spread(result.history) < 0.01
    peak = max(r.r_pde for r in result.history[1:])
    assert result.history[-1].r_pde <= 1e-2 * peak


@pytest.mark.slow
def test_mbb_three_phase_acceptance():
    cfg = ProblemConfig.from_dict({
        'preset': 'mbb2d',
        'material': {'names': ['m1', 'm2', 'void'], 'properties': [1.0, 0.55, 1e-6]},
        'targets': {'volumes': [0.2, 0.2, 0.6]},
        'schedule': {'max_loops': 16000, 'tolerance': 1e-12},
    })
    problem = build_problem(cfg)
    result = run(problem, build_schedule(cfg, problem.grid))
    assert result.success

    for value, target in zip(result.final_report.volume_fractions, (0.2, 0.2, 0.6)):
        assert abs(value - target) <= 0.03
    assert tail_spread(result.history) <= 0.02
    modulus = problem.effective_property(result.phases).data
    assert mirror_asymmetry(modulus, axis=0) <= 0.05
    assert phase_separation_metric(result.phases) >= 0.6
