"""
Field and history writers
CSV and binary PGM for 2D fields, legacy ASCII VTK structured points for 3D,
history / timing CSV and the JSON run summary
"""
import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from services.grid import Field, Grid
from services.objectives import ObjectiveReport
from services.phase_field import PhaseSet
from utils.file_utils import sanitize_filename

logger = logging.getLogger(__name__)

FIELD_FORMATS = ('csv', 'pgm', 'vtk')
HISTORY_COLUMNS = ('loop', 'apt_steps', 'pt_steps', 'compliance', 'volume', 'unity', 'region', 'r_pde')


class OutputError(OSError):
    """Writing an output file failed

    Attributes:
        path: The file that could not be written
    """

    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"cannot write {path}: {reason}")


def _float_fmt(precision: str) -> str:
    return '%.9g' if precision == 'f32' else '%.17g'


def _named_arrays(data: Union[Field, PhaseSet]) -> List[tuple]:
    """(name, scalar array) pairs for the writers that take scalars only"""
    if isinstance(data, PhaseSet):
        return [(name, phi.data) for name, phi in zip(data.names, data)]
    if data.is_scalar:
        return [('', data.data)]
    return [('xyz'[c], data.values[c]) for c in range(data.components)]


def _suffixed(path: str, name: str, ext: str) -> str:
    return f"{path}_{sanitize_filename(name)}{ext}" if name else f"{path}{ext}"


def write_csv(values: np.ndarray, grid: Grid, path: str, precision: str = 'f64') -> str:
    """2D array as comma separated rows; row i holds the nodes with x index i"""
    header = (f"dims={','.join(str(n) for n in grid.dims)} "
              f"spacing={','.join(_float_fmt(precision) % h for h in grid.spacing)} rows=x cols=y")
    np.savetxt(path, values, fmt=_float_fmt(precision), delimiter=',', header=header, comments='# ')
    return path


def read_csv(path: str) -> np.ndarray:
    return np.loadtxt(path, delimiter=',', comments='#', ndmin=2)


def write_pgm(values: np.ndarray, path: str) -> str:
    """8-bit binary graymap, min-max scaled, with the scaling in a JSON sidecar

    The image is oriented with y up: row 0 is the largest y, column 0 is x = 0.
    """
    vmin = float(np.min(values))
    vmax = float(np.max(values))
    span = vmax - vmin
    if span > 0:
        gray = np.rint((values - vmin) / span * 255.0)
    else:
        gray = np.zeros_like(values)
    image = np.ascontiguousarray(gray.T[::-1].astype(np.uint8))
    height, width = image.shape
    with open(path, 'wb') as f:
        f.write(f"P5\n{width} {height}\n255\n".encode('ascii'))
        f.write(image.tobytes())
    sidecar = {'min': vmin, 'max': vmax, 'width': width, 'height': height,
               'value': 'min + (max - min) * gray / 255', 'orientation': 'row 0 = max y, column 0 = x 0'}
    with open(path + '.json', 'w', encoding='utf-8') as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def write_vtk(grid: Grid, path: str, scalars: Dict[str, np.ndarray],
              vectors: Optional[Dict[str, np.ndarray]] = None, precision: str = 'f64',
              title: str = 'PeTTO fields') -> str:
    """Legacy ASCII VTK STRUCTURED_POINTS file, x varying fastest"""
    dims = list(grid.dims) + [1] * (3 - grid.ndim)
    spacing = list(grid.spacing) + [1.0] * (3 - grid.ndim)
    fmt = _float_fmt(precision)
    vtk_type = 'float' if precision == 'f32' else 'double'
    lines = [
        '# vtk DataFile Version 3.0',
        title,
        'ASCII',
        'DATASET STRUCTURED_POINTS',
        f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}",
        'ORIGIN 0 0 0',
        f"SPACING {' '.join(fmt % h for h in spacing)}",
        f"POINT_DATA {grid.n_nodes}",
    ]
    for name, values in scalars.items():
        lines.append(f"SCALARS {sanitize_filename(name)} {vtk_type} 1")
        lines.append('LOOKUP_TABLE default')
        lines.extend(fmt % v for v in np.ravel(values, order='F'))
    for name, values in (vectors or {}).items():
        comps = [np.ravel(values[c], order='F') for c in range(values.shape[0])]
        while len(comps) < 3:
            comps.append(np.zeros(grid.n_nodes))
        lines.append(f"VECTORS {sanitize_filename(name)} {vtk_type}")
        lines.extend(' '.join(fmt % c[i] for c in comps) for i in range(grid.n_nodes))
    with open(path, 'w', encoding='ascii', newline='\n') as f:
        f.write('\n'.join(lines))
        f.write('\n')
    return path


def write_field(data: Union[Field, PhaseSet], path: str, fmt: str, precision: str = 'f64',
                extra: Optional[Dict[str, np.ndarray]] = None) -> List[str]:
    """Write a field or phase set

    Args:
        data: Field (scalar or vector) or PhaseSet
        path: Output path without extension; phase or component names
            are appended for formats that hold one array per file
        fmt: 'csv' or 'pgm' (2D only) or 'vtk'
        precision: 'f32' or 'f64', sets the number of digits written
        extra: Additional named scalar arrays for VTK output

    Returns:
        List of written file paths

    Raises:
        OutputError: when a file cannot be written
    """
    if fmt not in FIELD_FORMATS:
        raise ValueError(f"unknown format '{fmt}', expected one of {FIELD_FORMATS}")
    grid = data.grid
    if fmt in ('csv', 'pgm') and grid.ndim != 2:
        raise ValueError(f"{fmt} output needs a 2D field, got {grid.ndim}D")

    written: List[str] = []
    target = path
    try:
        if fmt == 'vtk':
            target = path + '.vtk'
            scalars: Dict[str, np.ndarray] = {}
            vectors: Dict[str, np.ndarray] = {}
            if isinstance(data, Field) and not data.is_scalar:
                vectors[os.path.basename(path) or 'vector'] = data.values
            else:
                for name, values in _named_arrays(data):
                    scalars[name or os.path.basename(path) or 'scalar'] = values
            scalars.update(extra or {})
            written.append(write_vtk(grid, target, scalars, vectors, precision))
        else:
            ext = '.csv' if fmt == 'csv' else '.pgm'
            for name, values in _named_arrays(data):
                target = _suffixed(path, name, ext)
                if fmt == 'csv':
                    written.append(write_csv(values, grid, target, precision))
                else:
                    written.append(write_pgm(values, target))
    except OSError as e:
        raise OutputError(target, e.strerror or str(e)) from e
    logger.debug("Wrote %s", ', '.join(written))
    return written


def write_history(history: Sequence[ObjectiveReport], path: str, phase_names: Sequence[str],
                  steps_per_loop: Sequence[int] = (0, 0), precision: str = 'f64') -> str:
    """One CSV row per recorded loop; step columns are cumulative counts"""
    columns = list(HISTORY_COLUMNS) + [f"vf_{sanitize_filename(n)}" for n in phase_names]
    n_apt, n_pt = steps_per_loop
    rows = np.array([
        [r.loop, r.loop * n_apt, r.loop * n_pt, r.compliance, r.volume, r.unity, r.region, r.r_pde]
        + list(r.volume_fractions)
        for r in history
    ], dtype=np.float64).reshape(len(history), len(columns))
    fmts = ['%d'] * 3 + [_float_fmt(precision)] * (len(columns) - 3)
    try:
        np.savetxt(path, rows, fmt=fmts, delimiter=',', header=','.join(columns), comments='')
    except OSError as e:
        raise OutputError(path, e.strerror or str(e)) from e
    return path


def write_timing(rows: Sequence[Sequence[float]], path: str) -> str:
    """Wall-clock log: loop, seconds since start"""
    data = np.asarray(rows, dtype=np.float64).reshape(-1, 2)
    try:
        np.savetxt(path, data, fmt=['%d', '%.6f'], delimiter=',', header='loop,seconds', comments='')
    except OSError as e:
        raise OutputError(path, e.strerror or str(e)) from e
    return path


def write_summary(summary: Dict[str, Any], path: str) -> str:
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write('\n')
    except OSError as e:
        raise OutputError(path, e.strerror or str(e)) from e
    return path
