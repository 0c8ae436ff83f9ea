"""
Service modules for PeTTO
"""
from services.grid import Field, FieldNotFiniteError, Grid, GridError
from services.objectives import MaterialModel, ObjectiveReport, ObjectiveWeights, VolumeTargets
from services.optimizer import LoopSchedule, OptimizationResult, run
from services.phase_field import CahnHilliardParams, PhaseSet
from services.problem import Problem, build_problem, build_schedule
from services.state_solver import PTParams, SolverDivergedError, hybrid_solve, solve_to_tolerance

__all__ = [
    'Field',
    'FieldNotFiniteError',
    'Grid',
    'GridError',
    'MaterialModel',
    'ObjectiveReport',
    'ObjectiveWeights',
    'VolumeTargets',
    'LoopSchedule',
    'OptimizationResult',
    'run',
    'CahnHilliardParams',
    'PhaseSet',
    'Problem',
    'build_problem',
    'build_schedule',
    'PTParams',
    'SolverDivergedError',
    'hybrid_solve',
    'solve_to_tolerance',
]
