import json

import numpy as np
import pytest

from output_manager import OutputManager
from services.grid import Field, Grid
from services.objectives import ObjectiveReport
from services.phase_field import PhaseSet
from services.writers import (
    OutputError, read_csv, write_csv, write_field, write_history, write_pgm, write_summary, write_timing,
)


def vtk_blocks(path):
    """Map of array name -> list of value lines from a legacy ASCII VTK file"""
    lines = open(path, encoding='ascii').read().splitlines()
    header = lines[:8]
    blocks, name = {}, None
    for line in lines[8:]:
        if line.startswith('SCALARS') or line.startswith('VECTORS'):
            name = line.split()[1]
            blocks[name] = []
        elif line != 'LOOKUP_TABLE default':
            blocks[name].append(line)
    return header, blocks


# CSV
# -----------------------------------------------------------------------------

def test_zero_field_csv(tmp_path):
    grid = Grid((3, 3), (1.0, 1.0))
    path = write_csv(np.zeros(grid.dims), grid, str(tmp_path / 'zeros.csv'))
    lines = open(path).read().splitlines()
    assert lines[0].startswith('# dims=3,3 spacing=0.5,0.5')
    assert lines[1:] == ['0,0,0'] * 3
    assert read_csv(path).shape == (3, 3)


def test_csv_keeps_full_precision(tmp_path, rng):
    grid = Grid((5, 7), (1.0, 2.0))
    values = rng.normal(size=grid.dims)
    path = write_csv(values, grid, str(tmp_path / 'f.csv'))
    assert np.array_equal(read_csv(path), values)


def test_csv_single_precision_digits(tmp_path):
    grid = Grid((3, 3), (1.0, 1.0))
    path = write_csv(np.full(grid.dims, 1.0 / 3.0), grid, str(tmp_path / 'f.csv'), precision='f32')
    assert open(path).read().splitlines()[1] == '0.333333333,0.333333333,0.333333333'


def test_csv_rows_follow_x(tmp_path, unit_grid):
    x, y = unit_grid.mesh()
    field = Field(unit_grid, x + 10 * y)
    path = write_field(field, str(tmp_path / 'xy'), 'csv')[0]
    assert path.endswith('xy.csv')
    values = read_csv(path)
    assert np.allclose(values[:, 0], x[:, 0])
    assert np.allclose(values[0, :], 10 * y[0, :])


# PGM
# -----------------------------------------------------------------------------

def test_pgm_header_and_orientation(tmp_path):
    grid = Grid((4, 3), (1.0, 1.0))
    x, y = grid.mesh()
    path = write_pgm(y, str(tmp_path / 'y.pgm'))
    raw = open(path, 'rb').read()
    header = b'P5\n4 3\n255\n'
    assert raw.startswith(header)
    pixels = np.frombuffer(raw[len(header):], dtype=np.uint8).reshape(3, 4)
    assert list(pixels[:, 0]) == [255, 128, 0]
    assert np.all(pixels == pixels[:, :1])

    sidecar = json.load(open(path + '.json'))
    assert sidecar['min'] == 0.0
    assert sidecar['max'] == 1.0
    assert (sidecar['width'], sidecar['height']) == (4, 3)


def test_pgm_constant_field(tmp_path):
    path = write_pgm(np.full((5, 5), 0.7), str(tmp_path / 'c.pgm'))
    raw = open(path, 'rb').read()
    assert raw[len(b'P5\n5 5\n255\n'):] == bytes(25)


# VTK
# -----------------------------------------------------------------------------

def test_vtk_phase_set_3d(tmp_path, rng):
    grid = Grid((4, 4, 4), (1.0, 1.0, 1.0))
    phases = PhaseSet.from_array(grid, rng.uniform(size=(2,) + grid.dims), names=('solid', 'void'))
    extra = {'effective': np.ones(grid.dims)}
    path, = write_field(phases, str(tmp_path / 'phi'), 'vtk', extra=extra)
    header, blocks = vtk_blocks(path)
    assert header[0] == '# vtk DataFile Version 3.0'
    assert header[2:5] == ['ASCII', 'DATASET STRUCTURED_POINTS', 'DIMENSIONS 4 4 4']
    assert header[7] == 'POINT_DATA 64'
    assert list(blocks) == ['solid', 'void', 'effective']
    assert all(len(values) == 64 for values in blocks.values())
    # x varies fastest
    assert float(blocks['solid'][1]) == phases[0].data[1, 0, 0]
    assert float(blocks['solid'][4]) == phases[0].data[0, 1, 0]


def test_vtk_vector_field_2d(tmp_path, unit_grid):
    u = Field.full(unit_grid, 0.5, components=2)
    path, = write_field(u, str(tmp_path / 'u'), 'vtk', precision='f32')
    header, blocks = vtk_blocks(path)
    assert header[4] == 'DIMENSIONS 17 17 1'
    assert open(path).read().count('VECTORS u float') == 1
    assert len(blocks['u']) == unit_grid.n_nodes
    assert blocks['u'][0] == '0.5 0.5 0'


# write_field
# -----------------------------------------------------------------------------

def test_write_field_one_file_per_phase(tmp_path, unit_grid):
    phases = PhaseSet.uniform(unit_grid, [0.3, 0.7], names=('solid', 'void'))
    written = write_field(phases, str(tmp_path / 'phi'), 'csv')
    assert [p.rsplit('/', 1)[-1] for p in written] == ['phi_solid.csv', 'phi_void.csv']


def test_write_field_rejects_bad_requests(tmp_path):
    grid = Grid((4, 4, 4), (1.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        write_field(Field.zeros(grid), str(tmp_path / 'f'), 'csv')
    with pytest.raises(ValueError):
        write_field(Field.zeros(grid), str(tmp_path / 'f'), 'png')


def test_write_field_reports_path(tmp_path, unit_grid):
    target = str(tmp_path / 'missing' / 'f')
    with pytest.raises(OutputError) as info:
        write_field(Field.zeros(unit_grid), target, 'csv')
    assert info.value.path == target + '.csv'
    assert target in str(info.value)


# Run files
# -----------------------------------------------------------------------------

def test_write_history(tmp_path):
    history = [
        ObjectiveReport(loop=1, compliance=2.5, volume=0.01, unity=0.0, region=0.0,
                        volume_fractions=(0.25, 0.75), r_pde=1e-3),
        ObjectiveReport(loop=3, compliance=2.0, volume=0.0, unity=0.0, region=0.0,
                        volume_fractions=(0.3, 0.7), r_pde=1e-4),
    ]
    path = write_history(history, str(tmp_path / 'history.csv'), ['solid', 'void'], steps_per_loop=(5, 2))
    lines = open(path).read().splitlines()
    assert lines[0] == 'loop,apt_steps,pt_steps,compliance,volume,unity,region,r_pde,vf_solid,vf_void'
    assert lines[1].startswith('1,5,2,2.5,')
    assert lines[2].startswith('3,15,6,2,')
    assert len(lines) == 3


def test_write_empty_history(tmp_path):
    path = write_history([], str(tmp_path / 'history.csv'), ['solid'])
    assert open(path).read().splitlines() == ['loop,apt_steps,pt_steps,compliance,volume,unity,region,r_pde,vf_solid']


def test_write_timing(tmp_path):
    path = write_timing([(1, 0.25), (2, 0.5)], str(tmp_path / 'timing.csv'))
    assert open(path).read().splitlines() == ['loop,seconds', '1,0.250000', '2,0.500000']


def test_write_summary_sorted(tmp_path):
    path = write_summary({'termination': 'converged', 'loops': 4}, str(tmp_path / 'summary.json'))
    text = open(path).read()
    assert text.index('"loops"') < text.index('"termination"')
    assert json.loads(text) == {'termination': 'converged', 'loops': 4}


# OutputManager
# -----------------------------------------------------------------------------

def test_output_manager_layout(tmp_path, unit_grid):
    manager = OutputManager(str(tmp_path / 'run'))
    ok, _ = manager.initialize_structure()
    assert ok
    phases = PhaseSet.uniform(unit_grid, [0.3, 0.7], names=('solid', 'void'))
    written = manager.write_phases(phases, ['csv', 'pgm', 'vtk'], 'f64', effective=Field.full(unit_grid, 0.5))
    names = sorted(p.rsplit('/', 1)[-1] for p in written)
    assert names == ['effective.csv', 'effective.pgm', 'phi.vtk', 'phi_solid.csv', 'phi_solid.pgm',
                     'phi_void.csv', 'phi_void.pgm']
    assert (tmp_path / 'run' / 'fields' / 'phi_solid.pgm.json').exists()


def test_output_manager_skips_2d_formats_in_3d(tmp_path):
    grid = Grid((4, 4, 4), (1.0, 1.0, 1.0))
    manager = OutputManager(str(tmp_path / 'run'))
    manager.initialize_structure()
    written = manager.write_state(Field.zeros(grid), ['csv', 'pgm', 'vtk'], 'f64', 'T')
    assert [p.rsplit('/', 1)[-1] for p in written] == ['T.vtk']


def test_output_manager_reports_unwritable_root(tmp_path):
    blocker = tmp_path / 'file'
    blocker.write_text('')
    ok, message = OutputManager(str(blocker / 'run')).initialize_structure()
    assert not ok
    assert str(blocker) in message
