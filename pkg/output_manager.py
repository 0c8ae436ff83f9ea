"""
Output Manager for PeTTO runs
Lays out the run directory and writes fields, history and summary into it
"""
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

from config import ProblemConfig
from services.grid import Field
from services.objectives import ObjectiveReport
from services.phase_field import PhaseSet
from services.state_solver import stress_field
from services.writers import (
    OutputError, write_field, write_history, write_summary, write_timing,
)
from utils.file_utils import ensure_dir

logger = logging.getLogger(__name__)


class OutputManager:
    """Manages the directory structure of one run

    <root>/
        config.json     resolved config
        history.csv     one row per recorded loop
        timing.csv      wall-clock per recorded loop
        summary.json    termination, counters, final objectives
        fields/         phase fields and effective property
        state/          final state (and stresses for elasticity)
    """

    FIELDS_DIR = 'fields'
    STATE_DIR = 'state'

    def __init__(self, root: str):
        self.root = root

    @property
    def fields_path(self) -> str:
        return os.path.join(self.root, self.FIELDS_DIR)

    @property
    def state_path(self) -> str:
        return os.path.join(self.root, self.STATE_DIR)

    @property
    def config_path(self) -> str:
        return os.path.join(self.root, 'config.json')

    @property
    def history_path(self) -> str:
        return os.path.join(self.root, 'history.csv')

    @property
    def timing_path(self) -> str:
        return os.path.join(self.root, 'timing.csv')

    @property
    def summary_path(self) -> str:
        return os.path.join(self.root, 'summary.json')

    def initialize_structure(self) -> Tuple[bool, str]:
        """Create the run directories

        Returns (success, message).
        """
        try:
            ensure_dir(self.fields_path)
            ensure_dir(self.state_path)
        except OSError as e:
            return False, f"cannot create output directory {self.root}: {e.strerror or e}"
        return True, self.root

    def save_config(self, cfg: ProblemConfig) -> str:
        try:
            with open(self.config_path, 'w', encoding='utf-8') as f:
                f.write(cfg.to_json())
                f.write('\n')
        except OSError as e:
            raise OutputError(self.config_path, e.strerror or str(e)) from e
        return self.config_path

    def write_phases(self, phases: PhaseSet, formats: Sequence[str], precision: str,
                     effective: Optional[Field] = None, prefix: str = 'phi') -> List[str]:
        """Phase fields in every requested format that fits the grid

        csv and pgm are written for 2D grids, vtk for any grid.
        """
        written: List[str] = []
        base = os.path.join(self.fields_path, prefix)
        for fmt in self._formats_for(phases.grid.ndim, formats):
            extra = {'effective': effective.data} if (effective is not None and fmt == 'vtk') else None
            written += write_field(phases, base, fmt, precision, extra=extra)
            if effective is not None and fmt != 'vtk':
                written += write_field(effective, os.path.join(self.fields_path, 'effective'), fmt, precision)
        return written

    def write_state(self, state: Field, formats: Sequence[str], precision: str, name: str,
                    material=None) -> List[str]:
        """Final state field; elasticity adds the recovered stress components"""
        written: List[str] = []
        base = os.path.join(self.state_path, name)
        for fmt in self._formats_for(state.grid.ndim, formats):
            if fmt == 'pgm' and not state.is_scalar:
                continue
            written += write_field(state, base, fmt, precision)
        if material is not None:
            stresses = stress_field(state, material)
            for key, values in stresses.items():
                sigma = Field(state.grid, values)
                for fmt in self._formats_for(state.grid.ndim, formats):
                    if fmt != 'pgm':
                        written += write_field(sigma, os.path.join(self.state_path, f"sigma_{key}"), fmt,
                                               precision)
        return written

    def write_history(self, history: Sequence[ObjectiveReport], phase_names: Sequence[str],
                      steps_per_loop: Sequence[int], precision: str) -> str:
        return write_history(history, self.history_path, phase_names, steps_per_loop, precision)

    def write_timing(self, rows: Sequence[Sequence[float]]) -> str:
        return write_timing(rows, self.timing_path)

    def write_summary(self, summary: Dict[str, Any]) -> str:
        return write_summary(summary, self.summary_path)

    @staticmethod
    def _formats_for(ndim: int, formats: Sequence[str]) -> List[str]:
        return [fmt for fmt in formats if ndim == 2 or fmt == 'vtk']
