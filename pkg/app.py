"""
PeTTO command line application
Runs a preset or config file through the optimization loop and writes
fields, state, history and a run summary
"""
import argparse
import logging
import sys
import time
from typing import Dict, List, Optional, Sequence

from config import ConfigError, ProblemConfig, default_output_dir, load_config, presets
from output_manager import OutputManager
from services.grid import GridError
from services.objectives import elastic_material, total_objective
from services.optimizer import OptimizationResult, phase_separation_metric, run
from services.problem import Problem, build_problem, build_schedule
from services.writers import OutputError
from utils.parallel import phase_executor
from utils.progress import ProgressStore
from version import __app_name__, __version__

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_IO = 4

progress = ProgressStore()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='petto', description=f"{__app_name__} topology optimization")
    parser.add_argument('--version', action='version', version=f"{__app_name__} {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)

    run_p = sub.add_parser('run', help='Run one optimization')
    source = run_p.add_mutually_exclusive_group(required=True)
    source.add_argument('--preset', choices=presets.names(), help='Benchmark preset')
    source.add_argument('--config', help='JSON config file')
    run_p.add_argument('--nx', type=int, help='Grid nodes along x')
    run_p.add_argument('--ny', type=int, help='Grid nodes along y')
    run_p.add_argument('--nz', type=int, help='Grid nodes along z')
    run_p.add_argument('--loops', type=int, help='Maximum optimization loops')
    run_p.add_argument('--out', help='Output directory (default: $PETTO_OUT)')
    run_p.add_argument('--precision', choices=('f32', 'f64'))
    run_p.add_argument('--threads', type=int,
                       help='Worker threads for the per-phase Cahn-Hilliard steps; one phase per thread, '
                            'so more threads than phases gain nothing (default 1)')
    run_p.add_argument('--report-every', type=int, dest='report_every')
    run_p.add_argument('--compliance-sign', type=int, choices=(-1, 1), dest='compliance_sign')
    run_p.add_argument('--log-level', default='INFO', dest='log_level',
                       choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'))
    return parser


def scaled_dims(dims: Sequence[int], nx: Optional[int], ny: Optional[int], nz: Optional[int]) -> List[int]:
    """Apply --nx/--ny/--nz; axes left unset keep the preset's aspect ratio to x"""
    requested = [nx, ny, nz][:len(dims)]
    if all(n is None for n in requested):
        return list(dims)
    ratio = requested[0] / dims[0] if requested[0] is not None else 1.0
    return [n if n is not None else max(3, int(round(d * ratio))) for n, d in zip(requested, dims)]


def cli_overrides(cfg: ProblemConfig, args: argparse.Namespace) -> Dict:
    """Config overrides from the command line flags"""
    overrides: Dict = {}
    dims = scaled_dims(cfg.grid['dims'], args.nx, args.ny, args.nz)
    if dims != list(cfg.grid['dims']):
        overrides['grid'] = {'dims': dims}
    if args.loops is not None:
        overrides['schedule'] = {'max_loops': args.loops}
    if args.report_every is not None:
        overrides['output'] = {'report_every': args.report_every}
    if args.compliance_sign is not None:
        overrides['weights'] = {'compliance_sign': args.compliance_sign}
    if args.precision is not None:
        overrides['precision'] = args.precision
    if args.threads is not None:
        overrides['threads'] = args.threads
    if args.out is not None:
        overrides['output'] = dict(overrides.get('output', {}), directory=args.out)
    return overrides


def resolve_config(args: argparse.Namespace) -> ProblemConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = ProblemConfig.from_dict({'preset': args.preset})
    cfg = cfg.with_overrides(cli_overrides(cfg, args))
    if not cfg.output.get('directory'):
        env_dir = default_output_dir()
        if not env_dir:
            raise ConfigError('no output directory: pass --out or set PETTO_OUT', field='--out')
        cfg = cfg.with_overrides({'output': {'directory': env_dir}})
    return cfg


def build_summary(cfg: ProblemConfig, problem: Problem, result: OptimizationResult) -> Dict:
    counters = result.counters
    summary = {
        'app': __app_name__,
        'version': __version__,
        'preset': cfg.preset,
        'physics': cfg.physics,
        'grid': {'dims': list(problem.grid.dims), 'lengths': list(problem.grid.lengths)},
        'termination': result.termination,
        'message': result.message,
        'loops': result.loops,
        'counters': {
            'loops': counters.loops,
            'apt_steps': counters.apt_steps,
            'pt_steps': counters.pt_steps,
            'design_updates': counters.updates,
            'ch_steps': counters.ch_steps,
        },
        'phase_separation': phase_separation_metric(result.phases),
        'final_report': None,
    }
    if result.field_name is not None:
        summary['nan_field'] = result.field_name
    report = result.final_report
    if report is not None:
        summary['final_report'] = {
            'loop': report.loop,
            'compliance': report.compliance,
            'volume': report.volume,
            'unity': report.unity,
            'region': report.region,
            'r_pde': report.r_pde,
            'volume_fractions': dict(zip(cfg.phase_names, report.volume_fractions)),
            'total_objective': total_objective(report.compliance, result.phases, problem.targets,
                                               problem.weights.effective(problem.grid)),
        }
    return summary


def write_outputs(cfg: ProblemConfig, problem: Problem, result: OptimizationResult,
                  outputs: OutputManager, timing: List[List[float]]) -> None:
    formats = cfg.output['formats']
    written = outputs.write_phases(result.phases, formats, cfg.precision,
                                   effective=problem.effective_property(result.phases))
    if cfg.output['write_state']:
        material = None
        if problem.physics == 'elasticity':
            material = elastic_material(result.phases, problem.material)
        written += outputs.write_state(result.state, formats, cfg.precision, problem.state_name, material)
    schedule = (cfg.schedule['n_apt'], cfg.schedule['n_pt'])
    written.append(outputs.write_history(result.history, cfg.phase_names, schedule, cfg.precision))
    written.append(outputs.write_timing(timing))
    written.append(outputs.write_summary(build_summary(cfg, problem, result)))
    logger.info("Wrote %d files to %s", len(written), outputs.root)


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run, write outputs; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        cfg = resolve_config(args)
        problem = build_problem(cfg)
        schedule = build_schedule(cfg, problem.grid)
    except (ConfigError, GridError, ValueError) as e:
        field = getattr(e, 'field', None)
        print(f"Config error{f' ({field})' if field else ''}: {e}", file=sys.stderr)
        return EXIT_CONFIG

    outputs = OutputManager(cfg.output['directory'])
    ok, message = outputs.initialize_structure()
    if not ok:
        print(f"Output error: {message}", file=sys.stderr)
        return EXIT_IO

    print(f"{__app_name__} {__version__}: {problem.name} on "
          f"{'x'.join(str(n) for n in problem.grid.dims)}, up to {schedule.max_loops} loops")
    progress.set_starting(schedule.max_loops)
    start = time.perf_counter()
    timing: List[List[float]] = []

    def on_progress(loop, report):
        progress.record_loop(loop, report)
        timing.append([loop, time.perf_counter() - start])
        print(f"  loop {loop:>6d} ({progress.fraction_done:5.1%})  J={report.compliance:.6e}  "
              f"r_PDE={report.r_pde:.3e}")

    with phase_executor(cfg.threads) as executor:
        result = run(problem, schedule, callback=on_progress, executor=executor)

    if result.success:
        progress.set_completed(result.termination, result.message)
    else:
        progress.set_error(result.message)
    print(f"{result.termination}: {result.message} ({time.perf_counter() - start:.1f}s)")
    logger.info("Run %s after %d loops", progress.status, result.loops)

    try:
        outputs.save_config(cfg)
        write_outputs(cfg, problem, result, outputs, timing)
    except (OutputError, OSError) as e:
        print(f"Output error: {e}", file=sys.stderr)
        return EXIT_IO

    return EXIT_OK if result.success else EXIT_ABORTED


def main():
    """Main entry point"""
    sys.exit(run_cli())


if __name__ == '__main__':
    main()
