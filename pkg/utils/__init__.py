"""
Utility modules for PeTTO
"""
from utils.file_utils import ensure_dir, sanitize_filename
from utils.parallel import phase_executor
from utils.progress import ProgressStore

__all__ = [
    'ensure_dir',
    'sanitize_filename',
    'phase_executor',
    'ProgressStore',
]
