"""
Command-line interface for QubitThermo
Runs the analysis scenarios (sweep, frames, qfactor, map, sensitivity)
from an INI run configuration and writes plot-ready CSV/JSON datasets.
"""

from utils.common_imports import *
from utils.logger import logger, PerformanceTimer
from utils.error_handler import (EXIT_SUCCESS, EXIT_USAGE, ErrorContext, ErrorSeverity,
                                 categorize, error_handler)
from utils.export import write_csv, write_json
from config.settings import SCENARIOS, RunConfig, load_run_config
from core.bloch import eigenstate
from core.schedules import DriveSchedule, LZParams, build_schedule, delta_s_lz, p_lz
from core.integrator import IntegratorConfig, Trajectory, evolve, transition_probability
from core.frames import (CascadeGridConfig, FrameCascade, build_cascade, export_cascade,
                         q_factor, q_summary)
from core.analysis import (asymptotic_delta_s, control_metrics, delta_s_trace,
                           endpoint_sensitivity, entropy_map, map_compare,
                           monotonicity_metric, panel, resonance_peak_ratio)
import argparse
from typing import Callable


UNITS_NOTE = ("All quantities are dimensionless: energies in units of the coupling H_12 = 1, "
              "with hbar = k_B = 1. Entropies are in nats.")


def _int_list(text: str) -> List[int]:
    try:
        return [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qubitthermo",
        description="Thermodynamics of Landau-Zener driven qubits: entropy production, "
                    "superadiabatic frames, adiabaticity factors and entropy maps.",
        epilog=UNITS_NOTE)
    parser.add_argument("scenario", nargs="?", choices=SCENARIOS,
                        help="Scenario to run (overrides [run] scenario)")
    parser.add_argument("--config", metavar="PATH", help="INI run configuration")
    parser.add_argument("--epsilon", type=float, metavar="R", help="Sweep-rate parameter epsilon > 0")
    parser.add_argument("--t-start", dest="t_start", type=float, metavar="R", help="Sweep start t_i")
    parser.add_argument("--t-end", dest="t_end", type=float, metavar="R", help="Sweep end t_f")
    parser.add_argument("--frames", type=_int_list, metavar="LIST", help="Frames to analyse, e.g. 0,1,2,4")
    parser.add_argument("--n-max", dest="n_max", type=int, metavar="N", help="Deepest superadiabatic frame")
    parser.add_argument("--resolution", type=int, metavar="N", help="Entropy map cells (>= 16)")
    parser.add_argument("--frame", type=int, metavar="N", help="Frame of the entropy map (0 = lab)")
    parser.add_argument("--out", metavar="DIR", help="Output directory")
    parser.add_argument("--compare", metavar="PATH", help="Second config to compare the map against")
    parser.add_argument("--workers", type=int, metavar="N", help="Worker threads (default: logical processors)")
    parser.add_argument("--log-level", dest="log_level", choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
                        help="Console log level")
    parser.add_argument("--dump-config", dest="dump_config", metavar="PATH",
                        help="Write the fully resolved configuration to PATH")
    return parser


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _span(config: RunConfig) -> Tuple[float, float]:
    return (config.schedule.t_start, config.schedule.t_end)


def _integrator_config(config: RunConfig, output_times: Optional[Sequence[float]] = None) -> IntegratorConfig:
    return IntegratorConfig.from_settings(config.integrator, output_times)


def _initial_state(config: RunConfig, schedule: DriveSchedule) -> np.ndarray:
    if config.initial_state == 'vector':
        return np.asarray(config.initial_vector, dtype=float)
    sign = -1 if config.initial_state == 'ground' else 1
    return eigenstate(schedule.field(config.schedule.t_start), sign).as_array()


def _cascade(config: RunConfig, schedule: DriveSchedule, n_max: int) -> FrameCascade:
    return build_cascade(schedule, _span(config), n_max, CascadeGridConfig.from_settings(config.cascade))


def _evolve_on_grid(config: RunConfig, p0: np.ndarray, schedule: DriveSchedule, grid: np.ndarray) -> Trajectory:
    return evolve(p0, schedule, _span(config), _integrator_config(config, grid))


def _out(config: RunConfig, name: str) -> str:
    return os.path.join(config.output.directory, name)


def _lz_params(config: RunConfig) -> LZParams:
    return LZParams(config.schedule.epsilon, config.schedule.t_start, config.schedule.t_end)


def _write_summary(config: RunConfig, payload: Dict[str, Any], files: List[str]) -> List[str]:
    summary = {'scenario': config.scenario, 'config': config.to_dict()}
    summary.update(payload)
    summary['outputs'] = sorted(os.path.basename(f) for f in files)
    return files + [write_json(_out(config, "summary.json"), summary)]


def _scenario_metadata(config: RunConfig, schedule: DriveSchedule) -> Dict[str, Any]:
    return {'scenario': config.scenario, 'schedule': schedule.label,
            't_i': config.schedule.t_start, 't_f': config.schedule.t_end,
            'initial_state': config.initial_state}


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

def cmd_sweep(config: RunConfig) -> List[str]:
    """Lab-frame sweep: trajectory, Delta S trace and comparison with the Landau-Zener asymptote"""
    schedule = build_schedule(config.schedule)
    p0 = _initial_state(config, schedule)
    meta = _scenario_metadata(config, schedule)

    files = []
    trajectory = evolve(p0, schedule, _span(config), _integrator_config(config))
    if config.output.write_trajectory:
        files.append(trajectory.to_csv(_out(config, "trajectory.csv"), meta))

    cascade = _cascade(config, schedule, 1)
    dense = _evolve_on_grid(config, p0, schedule, cascade.grid)
    trace = delta_s_trace(dense, cascade, 0)
    files.append(trace.to_csv(_out(config, "entropy_trace.csv"), meta))

    payload = {
        'delta_s_final': trace.final,
        'delta_s_asymptotic': asymptotic_delta_s(trace),
        'monotonicity': monotonicity_metric(trace),
        'resonance_peak_ratio': resonance_peak_ratio(trace),
        'norm_drift': max(trajectory.norm_drift, dense.norm_drift),
        'control': control_metrics(dense, cascade, 0).summary(),
    }
    if schedule.kind == 'landau_zener':
        reference = delta_s_lz(config.schedule.epsilon)
        payload.update({
            'p_lz': p_lz(config.schedule.epsilon),
            'delta_s_lz': reference,
            'delta_s_difference': abs(payload['delta_s_asymptotic'] - reference),
        })
    if config.initial_state in ('ground', 'excited'):
        payload['transition_probability'] = transition_probability(trajectory, schedule)

    logger.info(f"sweep: Delta S(t_f) = {trace.final:.6g}, monotonicity {payload['monotonicity']:.4f}")
    return _write_summary(config, payload, files)


def cmd_frames(config: RunConfig) -> List[str]:
    """Delta S traces in the requested superadiabatic frames plus the cascade exports"""
    frames = sorted(set(config.cascade.frames))
    schedule = build_schedule(config.schedule)
    p0 = _initial_state(config, schedule)
    meta = _scenario_metadata(config, schedule)

    cascade = _cascade(config, schedule, config.cascade.n_max)
    trajectory = _evolve_on_grid(config, p0, schedule, cascade.grid)

    files = []
    metrics = {}
    for n in frames:
        trace = delta_s_trace(trajectory, cascade, n)
        files.append(trace.to_csv(_out(config, f"entropy_trace_frame{n}.csv"), meta))
        metrics[str(n)] = {
            'monotonicity': monotonicity_metric(trace),
            'delta_s_final': trace.final,
            'control': control_metrics(trajectory, cascade, n).summary(),
        }
    files.extend(export_cascade(cascade, config.output.directory, meta))

    payload = {'frames': metrics, 'q': q_summary(cascade), 'norm_drift': trajectory.norm_drift}
    if metrics:
        payload['most_monotone_frame'] = int(min(metrics, key=lambda k: (metrics[k]['monotonicity'], int(k))))
    return _write_summary(config, payload, files)


def cmd_qfactor(config: RunConfig) -> List[str]:
    """Q_n(t) series for every built frame, their minima and the optimal frame"""
    schedule = build_schedule(config.schedule)
    cascade = _cascade(config, schedule, config.cascade.n_max)
    frames = list(range(1, cascade.n_built + 1))
    series = [q_factor(cascade, n)[0] for n in frames]
    rows = (tuple([t] + [s[k] for s in series]) for k, t in enumerate(cascade.grid))
    header = ['t'] + [f"q{n}" for n in frames]
    files = [write_csv(_out(config, "qfactor.csv"), header, rows, _scenario_metadata(config, schedule))]
    summary = q_summary(cascade)
    if 'n_star' in summary:
        logger.info(f"qfactor: optimal frame n* = {summary['n_star']}, Q = {summary['q_star']:.4g}")
    return _write_summary(config, {'q': summary, 'cascade': cascade.metadata}, files)


def _map_options(config: RunConfig) -> Dict[str, Any]:
    options = {
        'cfg': _integrator_config(config),
        'strategy': config.map.strategy,
        'workers': config.worker_count,
        'grid_cfg': CascadeGridConfig.from_settings(config.cascade),
    }
    if config.schedule.kind != 'landau_zener':
        options['schedule'] = build_schedule(config.schedule)
    return options


def cmd_map(config: RunConfig) -> List[str]:
    """Entropy map over hemisphere cells, the 3x3 panel, and optional comparison with a second config"""
    params = _lz_params(config)
    options = _map_options(config)
    files = []
    payload = {}

    if config.map.panel:
        maps = panel(params, config.map.epsilon_shift, config.map.time_shift,
                     config.map.resolution, config.map.frame, **options)
        payload['panel'] = {}
        for (row, col), emap in sorted(maps.items()):
            tag = f"r{row}c{col}"
            files.extend(emap.write(_out(config, f"entropy_map_{tag}.csv"), _out(config, f"map_meta_{tag}.json")))
            payload['panel'][tag] = {'params': asdict(emap.params), 'summary': emap.sidecar()['summary']}
        base = maps[(1, 1)]
    else:
        base = entropy_map(params, config.map.resolution, config.map.frame, **options)
        files.extend(base.write(_out(config, "entropy_map.csv"), _out(config, "map_meta.json")))
        payload['summary'] = base.sidecar()['summary']

    if config.map.compare:
        other_config = RunConfig.load_from_file(config.map.compare)
        other_config.map.resolution = config.map.resolution
        other_config.raise_if_invalid()
        other = entropy_map(_lz_params(other_config), config.map.resolution, config.map.frame,
                            **_map_options(other_config))
        comparison = map_compare(base, other)
        files.append(write_json(_out(config, "map_compare.json"),
                                {'base': asdict(base.params), 'other': asdict(other.params),
                                 'comparison': asdict(comparison)}))
        payload['comparison'] = asdict(comparison)

    return _write_summary(config, payload, files)


def cmd_sensitivity(config: RunConfig) -> List[str]:
    """Compare the base map against t_i-shifted and t_f-shifted sweeps"""
    record = endpoint_sensitivity(_lz_params(config), config.map.delta, config.map.resolution,
                                  config.map.frame, **_map_options(config))
    files = [write_json(_out(config, "sensitivity.json"), record.to_dict())]
    return _write_summary(config, {'sensitivity': record.to_dict()}, files)


COMMANDS: Dict[str, Callable[[RunConfig], List[str]]] = {
    'sweep': cmd_sweep,
    'frames': cmd_frames,
    'qfactor': cmd_qfactor,
    'map': cmd_map,
    'sensitivity': cmd_sensitivity,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one scenario and return the process exit code

    Returns:
        0 on success, 1 on numerical failure, 2 on usage or configuration errors
        (argparse itself exits with 2 on malformed flags)
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_run_config(args.config, args)
        logger.setup_logger(**config.get_logging_settings())
        if args.dump_config:
            config.save_to_file(args.dump_config)

        logger.log_scenario(config.scenario, f"{config.schedule.kind}, epsilon={config.schedule.epsilon:g}, "
                                             f"span=[{config.schedule.t_start:g}, {config.schedule.t_end:g}]")
        with PerformanceTimer(f"scenario {config.scenario}"):
            files = COMMANDS[config.scenario](config)
        logger.info(f"Scenario {config.scenario} wrote {len(files)} files to {config.output.directory}")
        return EXIT_SUCCESS

    except Exception as e:
        context = ErrorContext(operation=f"Running scenario {args.scenario or ''}".strip(),
                               category=categorize(e),
                               severity=ErrorSeverity.HIGH)
        code = error_handler.handle_error(e, context, raise_on_critical=False)
        if code == EXIT_USAGE:
            print(parser.format_usage(), end="", file=sys.stderr)
        print(f"qubitthermo: error: {e}", file=sys.stderr)
        return code


def main():
    sys.exit(run())
