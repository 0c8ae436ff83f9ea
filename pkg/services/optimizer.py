"""
PeTTO optimization loop
Each loop runs APT steps, PT steps, one design update and one Cahn-Hilliard
step, so the state and the design evolve together
"""
import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, List, Optional, Tuple

import numpy as np

from services.grid import Field, FieldNotFiniteError
from services.objectives import ObjectiveReport, design_update, sensitivities
from services.phase_field import CahnHilliardParams, PhaseSet, ch_step_multi, mirror_symmetrize, phase_mass
from services.state_solver import PTParams, SolveCounters, StateHistory, hybrid_solve, residual_norm

if TYPE_CHECKING:
    from services.problem import Problem

logger = logging.getLogger(__name__)

TERMINATIONS = ('converged', 'max_loops', 'aborted-NaN')

ProgressCallback = Callable[[int, ObjectiveReport], None]


@dataclass(frozen=True)
class LoopSchedule:
    """Per-loop step counts and termination rule

    The run stops when the relative spread (max - min) / |mean| of the
    compliance over the last `window` records drops below `tolerance`,
    or after max_loops loops.

    symmetry_axes lists the axes the design is mirrored about after every
    update.
    """

    pt: PTParams
    ch: CahnHilliardParams
    max_loops: int
    tolerance: float = 1e-3
    window: int = 50
    report_every: int = 1
    update_design: bool = True
    evolve_phases: bool = True
    symmetry_axes: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.max_loops < 1:
            raise ValueError(f"max_loops must be >= 1, got {self.max_loops}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if self.report_every < 1:
            raise ValueError(f"report_every must be >= 1, got {self.report_every}")


@dataclass
class StepCounters(SolveCounters):
    """Step counts for the whole run"""
    loops: int = 0
    updates: int = 0
    ch_steps: int = 0


@dataclass
class OptimizationResult:
    """Final design and state plus the recorded history"""

    phases: PhaseSet
    state: Field
    history: List[ObjectiveReport]
    loops: int
    termination: str
    message: str = ''
    field_name: Optional[str] = None
    counters: StepCounters = field(default_factory=StepCounters)
    final_report: Optional[ObjectiveReport] = None

    @property
    def success(self) -> bool:
        return self.termination != 'aborted-NaN'


def relative_spread(values: List[float]) -> float:
    arr = np.asarray(values, dtype=np.float64)
    mean = abs(float(arr.mean()))
    spread = float(arr.max() - arr.min())
    if mean == 0.0:
        return 0.0 if spread == 0.0 else np.inf
    return spread / mean


def has_converged(history: List[ObjectiveReport], tolerance: float, window: int) -> bool:
    if len(history) < window:
        return False
    return relative_spread([r.compliance for r in history[-window:]]) < tolerance


def phase_separation_metric(phases: PhaseSet) -> float:
    """Fraction of nodes where every phase sits within 0.1 of a well"""
    stack = phases.stack()
    distance = np.max(np.minimum(stack, 1.0 - stack), axis=0)
    return float(np.mean(distance < 0.1))


def _check_phases(phases: PhaseSet, loop: int) -> None:
    for i, phi in enumerate(phases):
        if not phi.is_finite():
            raise FieldNotFiniteError(f"phi[{i}]", loop)


def run(problem: 'Problem', schedule: LoopSchedule, callback: Optional[ProgressCallback] = None,
        executor: Optional[Executor] = None) -> OptimizationResult:
    """Run the coupled loop until convergence, max_loops or a NaN abort

    Reports are computed after each loop's state solve, before the design
    update, and recorded every schedule.report_every loops. Divergence is
    returned as an 'aborted-NaN' result rather than raised.
    """
    grid = problem.grid
    weights = problem.weights.effective(grid)
    phases = mirror_symmetrize(problem.initial_phases.copy(), schedule.symmetry_axes)
    hist = StateHistory.from_state(problem.initial_state)
    counters = StepCounters()
    history: List[ObjectiveReport] = []
    report: Optional[ObjectiveReport] = None
    termination = 'max_loops'
    message = ''
    field_name = None

    logger.info("Starting %s run: %d loops max, %d APT + %d PT steps per loop",
                problem.name or problem.physics, schedule.max_loops, schedule.pt.n_apt, schedule.pt.n_pt)

    for loop in range(1, schedule.max_loops + 1):
        try:
            physics = problem.build_physics(phases)
            hist = hybrid_solve(hist, physics, schedule.pt, counters)
            r_pde = residual_norm(physics.residual(hist.current.values), grid.n_nodes)
            report = problem.report(loop, phases, hist.current, r_pde)
            if not report.is_finite():
                raise FieldNotFiniteError('objective', loop)

            if schedule.update_design:
                sens = sensitivities(phases, hist.current, problem.material, problem.targets, weights)
                phases = design_update(phases, sens, weights)
                counters.updates += 1

            if schedule.evolve_phases:
                before = [phase_mass(phi) for phi in phases]
                phases = ch_step_multi(phases, schedule.ch, executor)
                counters.ch_steps += 1
                if logger.isEnabledFor(logging.DEBUG):
                    drift = max(abs(phase_mass(phi) - m) for phi, m in zip(phases, before))
                    logger.debug("loop %d: post-clamp mass drift %.3e", loop, drift)

            phases = mirror_symmetrize(phases, schedule.symmetry_axes)
            _check_phases(phases, loop)
        except FieldNotFiniteError as exc:
            termination = 'aborted-NaN'
            field_name = exc.field_name
            message = f"loop {loop}: non-finite values in field '{exc.field_name}'"
            if exc.step is not None and exc.field_name in ('T', 'u'):
                message += f" (state step {exc.step} of the loop)"
            logger.warning("Run aborted: %s", message)
            break

        counters.loops = loop
        if (loop - 1) % schedule.report_every == 0:
            history.append(report)
            if callback is not None:
                callback(loop, report)
        logger.debug("loop %d: J=%.6e r_PDE=%.3e vf=%s", loop, report.compliance, report.r_pde,
                     ', '.join(f"{v:.4f}" for v in report.volume_fractions))

        if has_converged(history, schedule.tolerance, schedule.window):
            termination = 'converged'
            message = f"compliance spread below {schedule.tolerance:g} over the last {schedule.window} records"
            break

    if termination == 'max_loops':
        message = f"reached {schedule.max_loops} loops"
    logger.info("Run finished after %d loops: %s (%s)", counters.loops, termination, message)

    return OptimizationResult(
        phases=phases,
        state=hist.current,
        history=history,
        loops=counters.loops,
        termination=termination,
        message=message,
        field_name=field_name,
        counters=counters,
        final_report=report if termination != 'aborted-NaN' else (history[-1] if history else None),
    )
