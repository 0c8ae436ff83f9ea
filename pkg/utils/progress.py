"""
Thread-safe progress tracking for optimization runs
"""
import threading
from typing import Any, Dict


class ProgressStore:
    """Thread-safe store for run progress

    The optimizer's progress callback writes here while the CLI (or any
    other thread) reads the latest loop and status.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._data: Dict[str, Any] = {'status': 'idle', 'loop': 0, 'max_loops': 0, 'message': ''}

    def update(self, data: Dict[str, Any]) -> None:
        """Merge progress data thread-safely

        Args:
            data: Dictionary of progress data to merge
        """
        with self._lock:
            self._data.update(data)

    def set_starting(self, max_loops: int, message: str = 'Starting run...') -> None:
        with self._lock:
            self._data = {'status': 'starting', 'loop': 0, 'max_loops': max_loops, 'message': message}

    def record_loop(self, loop: int, report: Any) -> None:
        """Store the latest recorded loop

        Args:
            loop: Loop index (1-based)
            report: ObjectiveReport of that loop
        """
        self.update({'status': 'running', 'loop': loop, 'report': report})

    def set_completed(self, termination: str, message: str = '') -> None:
        self.update({'status': 'completed', 'message': message or termination, 'termination': termination})

    def set_error(self, error_message: str) -> None:
        self.update({'status': 'error', 'message': error_message})

    @property
    def status(self) -> str:
        with self._lock:
            return self._data['status']

    @property
    def fraction_done(self) -> float:
        """Loops done over max_loops, 0 before the run starts"""
        with self._lock:
            total = self._data['max_loops']
            return min(self._data['loop'] / total, 1.0) if total else 0.0
