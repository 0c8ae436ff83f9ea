"""
File utility functions for PeTTO output
"""
import os
import re


def sanitize_filename(filename: str) -> str:
    """Remove characters that are unsafe in file names

    Phase names from config end up in output file names.

    Args:
        filename: The filename to sanitize

    Returns:
        Sanitized filename safe for all platforms
    """
    # Invalid characters for Windows filenames, plus whitespace
    sanitized = re.sub(r'[<>:"/\\|?*\s]', '_', filename)
    sanitized = re.sub(r'[\x00-\x1f\x7f]', '', sanitized)
    sanitized = sanitized.strip('. ')
    if len(sanitized) > 120:
        sanitized = sanitized[:120]
    return sanitized or 'field'


def ensure_dir(path: str) -> str:
    """Create a directory (and parents) if missing

    Returns:
        The same path, for chaining
    """
    os.makedirs(path, exist_ok=True)
    return path
