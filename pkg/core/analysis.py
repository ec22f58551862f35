"""
Thermodynamic analysis for QubitThermo
Frame-dependent entropy-production traces, monotonicity and control metrics,
entropy maps over initial Bloch states, and sensitivity comparisons between maps.
"""

from utils.common_imports import *
from utils.logger import logger, PerformanceTimer
from utils.error_handler import (ErrorCategory, ErrorContext, ErrorSeverity,
                                 error_handler, handle_errors)
from utils.export import write_csv, write_json
from core.bloch import (dissipated_entropy, entropy_of_norm, equilibrium_entropy,
                        fidelity_vectors, purity_of)
from core.schedules import DriveSchedule, LandauZenerSchedule, LZParams
from core.integrator import IntegratorConfig, Trajectory, evolve, propagate
from core.frames import (CascadeGridConfig, FrameCascade, adiabatic_following,
                         build_cascade, states_on_grid)
from concurrent.futures import ThreadPoolExecutor, as_completed
from scipy import stats
from scipy.integrate import trapezoid
from scipy.spatial.transform import Rotation


GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


# ---------------------------------------------------------------------------
# Entropy traces
# ---------------------------------------------------------------------------

@dataclass
class EntropyTrace:
    """Entropy production Delta S(t) of the coarse-grained equilibrium in one frame"""

    times: np.ndarray
    delta_s: np.ndarray
    frame: int
    entropy: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def final(self) -> float:
        return float(self.delta_s[-1])

    def to_csv(self, filepath: str, metadata: Optional[Dict[str, Any]] = None) -> str:
        """Columns t, delta_s, frame"""
        meta = dict(self.metadata)
        meta.update(metadata or {})
        rows = ((t, ds, self.frame) for t, ds in zip(self.times, self.delta_s))
        return write_csv(filepath, ['t', 'delta_s', 'frame'], rows, meta)


def _frame_states_and_field(traj: Trajectory, cascade: FrameCascade, frame: int) -> Tuple[np.ndarray, np.ndarray]:
    cascade.check_frame(frame)
    lab = states_on_grid(traj, cascade)
    if frame == 0:
        return lab, cascade.h_eff[0]
    return cascade.rotation(frame).apply(lab), cascade.h_eff[frame]


def delta_s_trace(traj: Trajectory, cascade: FrameCascade, frame: int = 0) -> EntropyTrace:
    """
    Delta S(t) = S(P_eq(t)) - S(P_eq(t_i)) on the cascade grid

    Frame 0 projects the lab state on H_hat; frame n >= 1 projects the frame-n
    state on the effective field of frame n.

    Raises:
        CascadeError: frame out of range or span mismatch
    """
    states, field_n = _frame_states_and_field(traj, cascade, frame)
    s_eq = np.asarray(equilibrium_entropy(states, field_n), dtype=float)
    delta = s_eq - s_eq[0]
    delta[0] = 0.0
    metadata = {'frame': frame, 't_i': cascade.span[0], 't_f': cascade.span[1]}
    metadata.update({k: v for k, v in traj.metadata.items() if k in ('schedule', 'method')})
    return EntropyTrace(cascade.grid.copy(), delta, frame, s_eq, metadata)


def monotonicity_metric(trace: EntropyTrace) -> float:
    """
    Negative-variation fraction sum(max(0, -d_i)) / sum(|d_i|) over successive increments

    0 for a nondecreasing trace, 1 for a nonincreasing one, 0 when all increments vanish.
    """
    values = np.asarray(trace.delta_s if isinstance(trace, EntropyTrace) else trace, dtype=float)
    if values.size < 2:
        raise DomainError("monotonicity_metric needs at least two samples")
    increments = np.diff(values)
    total = float(np.sum(np.abs(increments)))
    if total == 0.0:
        return 0.0
    return float(np.sum(np.clip(-increments, 0.0, None)) / total)


def asymptotic_delta_s(trace: EntropyTrace, fraction: float = 0.1) -> float:
    """Time average of the trace over the final fraction of its span"""
    if not 0 < fraction <= 1:
        raise DomainError(f"fraction must lie in (0, 1], got {fraction}")
    t = trace.times
    start = t[-1] - fraction * (t[-1] - t[0])
    mask = t >= start
    if np.count_nonzero(mask) < 2:
        return float(trace.delta_s[-1])
    window = t[mask]
    return float(trapezoid(trace.delta_s[mask], window) / (window[-1] - window[0]))


def resonance_peak_ratio(trace: EntropyTrace) -> float:
    """max_t Delta S(t) / Delta S(t_f); +inf when the final value is not positive"""
    peak = float(np.max(trace.delta_s))
    final = trace.final
    if final <= 0.0:
        return INF if peak > 0.0 else 0.0
    return peak / final


@dataclass
class ControlMetrics:
    """Per-time control diagnostics of a trajectory in one frame"""

    times: np.ndarray
    purity: np.ndarray
    fidelity: np.ndarray
    dissipated_entropy: np.ndarray
    frame: int
    target_sign: int

    def summary(self) -> Dict[str, Any]:
        return {
            'frame': self.frame,
            'target_sign': self.target_sign,
            'final_fidelity': float(self.fidelity[-1]),
            'min_fidelity': float(np.min(self.fidelity)),
            'min_purity': float(np.min(self.purity)),
            'final_dissipated_entropy': float(self.dissipated_entropy[-1]),
            'max_dissipated_entropy': float(np.max(self.dissipated_entropy)),
        }


def control_metrics(traj: Trajectory, cascade: FrameCascade, frame: int = 0,
                    target_sign: Optional[int] = None) -> ControlMetrics:
    """
    Purity of the coarse-grained state, fidelity to the adiabatically followed
    eigenstate, and the relative entropy S(rho || rho_eq) along a trajectory

    Args:
        traj: Lab-frame trajectory covering the cascade span
        cascade: Built cascade
        frame: Frame whose effective field defines equilibrium and the target
        target_sign: -1 lower level, +1 upper level; inferred from the initial
            alignment when omitted
    """
    states, field_n = _frame_states_and_field(traj, cascade, frame)
    if target_sign is None:
        target_sign = 1 if float(np.dot(states[0], field_n[0])) >= 0 else -1

    norms = np.linalg.norm(field_n, axis=1)
    projection = np.sum(states * field_n, axis=1) / norms
    purity = np.asarray(purity_of(projection[:, None] * field_n / norms[:, None]))

    lab = states_on_grid(traj, cascade)
    target = adiabatic_following(cascade, frame, target_sign).states
    fidelity = np.asarray(fidelity_vectors(lab, target))
    dissipated = np.asarray(dissipated_entropy(states, field_n))
    return ControlMetrics(cascade.grid.copy(), purity, fidelity, dissipated, frame, target_sign)


# ---------------------------------------------------------------------------
# Entropy maps
# ---------------------------------------------------------------------------

def hemisphere_grid(n_cells: int) -> np.ndarray:
    """
    Equal-area cell centers on the northern hemisphere (Fibonacci set)

    z_k = 1 - (k + 1/2) / N is uniform in z, so every cell covers the same area;
    cell 0 is the one closest to the north pole.
    """
    if n_cells < 1:
        raise DomainError("n_cells must be >= 1")
    k = np.arange(n_cells, dtype=float)
    z = 1.0 - (k + 0.5) / n_cells
    radius = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = GOLDEN_ANGLE * k
    return np.column_stack([radius * np.cos(phi), radius * np.sin(phi), z])


@dataclass
class EntropyMap:
    """Delta S(t_f) for each initial-state cell of a single sweep"""

    cells: np.ndarray
    values: np.ndarray
    flags: np.ndarray
    params: LZParams
    frame: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def resolution(self) -> int:
        return int(self.cells.shape[0])

    @property
    def north_pole_index(self) -> int:
        return int(np.argmax(self.cells[:, 2]))

    @property
    def valid(self) -> np.ndarray:
        return ~self.flags

    def to_csv(self, filepath: str) -> str:
        """Columns cell_index, cx, cy, cz, delta_s, flag"""
        meta = {'epsilon': self.params.epsilon, 't_i': self.params.t_i, 't_f': self.params.t_f,
                'frame': self.frame, 'resolution': self.resolution}
        rows = ((i, c[0], c[1], c[2], v, bool(f)) for i, (c, v, f) in
                enumerate(zip(self.cells, self.values, self.flags)))
        return write_csv(filepath, ['cell_index', 'cx', 'cy', 'cz', 'delta_s', 'flag'], rows, meta)

    def sidecar(self) -> Dict[str, Any]:
        return {
            'params': asdict(self.params),
            'frame': self.frame,
            'resolution': self.resolution,
            'summary': map_statistics(self),
            'metadata': self.metadata,
        }

    def write(self, csv_path: str, json_path: str) -> List[str]:
        return [self.to_csv(csv_path), write_json(json_path, self.sidecar())]


def _endpoint_frames(schedule: DriveSchedule, params: LZParams, frame: int,
                     cascade: Optional[FrameCascade]) -> Tuple[Rotation, Rotation, np.ndarray, np.ndarray]:
    """Frame rotations and effective fields at t_i and t_f"""
    if frame == 0:
        identity = Rotation.identity()
        return identity, identity, schedule.field(params.t_i), schedule.field(params.t_f)
    cascade.check_frame(frame)
    if not np.allclose(cascade.span, params.span, rtol=0.0, atol=1e-9):
        raise CascadeError(f"Cascade span {cascade.span} does not match sweep span {params.span}")
    rot = cascade.rotation(frame)
    last = len(cascade.grid) - 1
    return rot[0], rot[last], cascade.h_eff[frame][0], cascade.h_eff[frame][last]


@handle_errors(ErrorCategory.NUMERICAL, "Evaluating entropy map cell", ErrorSeverity.LOW, default=None)
def _evolve_cell(cell: np.ndarray, schedule: DriveSchedule, span: Tuple[float, float],
                 cfg: IntegratorConfig) -> Optional[np.ndarray]:
    return evolve(cell, schedule, span, cfg).states[-1]


def _final_states_per_cell(cells: np.ndarray, schedule: DriveSchedule, span: Tuple[float, float],
                           cfg: IntegratorConfig, workers: int) -> Tuple[np.ndarray, np.ndarray]:
    finals = np.full(cells.shape, np.nan)
    flags = np.zeros(cells.shape[0], dtype=bool)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        future_to_cell = {
            executor.submit(_evolve_cell, cell, schedule, span, cfg): index
            for index, cell in enumerate(cells)
        }
        for future in as_completed(future_to_cell):
            index = future_to_cell[future]
            result = future.result()
            if result is None:
                flags[index] = True
            else:
                finals[index] = result
    return finals, flags


def _final_states_shared(cells: np.ndarray, schedule: DriveSchedule, span: Tuple[float, float],
                         cfg: IntegratorConfig) -> Tuple[np.ndarray, np.ndarray]:
    try:
        propagator = propagate(schedule, span, cfg)
    except IntegrationError as e:
        context = ErrorContext("Propagating entropy map sweep", ErrorCategory.NUMERICAL, ErrorSeverity.LOW,
                               additional_data={'time': e.time})
        error_handler.handle_error(e, context, raise_on_critical=False)
        return np.full(cells.shape, np.nan), np.ones(cells.shape[0], dtype=bool)
    return propagator.apply_final(cells), np.zeros(cells.shape[0], dtype=bool)


def entropy_map(params: LZParams,
                resolution: int = 2048,
                frame: int = 0,
                cfg: Optional[IntegratorConfig] = None,
                strategy: str = "shared_propagator",
                workers: int = 1,
                cascade: Optional[FrameCascade] = None,
                grid_cfg: Optional[CascadeGridConfig] = None,
                schedule: Optional[DriveSchedule] = None) -> EntropyMap:
    """
    Delta S(t_f) of a single Landau-Zener sweep for every hemisphere cell

    Each cell center is the initial lab-frame polarization at t_i.

    Args:
        params: Sweep parameters (epsilon, t_i, t_f)
        resolution: Number of equal-area cells (>= 16)
        frame: Frame in which the coarse-grained equilibrium is taken (0 = lab)
        cfg: Integrator configuration; the output grid is replaced by the endpoints
        strategy: 'shared_propagator' (one propagation for all cells) or 'per_cell'
        workers: Worker threads for the per-cell strategy
        cascade: Prebuilt cascade for frame >= 1 (built on demand otherwise)
        grid_cfg: Cascade grid used when the cascade is built on demand
        schedule: Drive schedule; defaults to the Landau-Zener sweep of params

    Returns:
        EntropyMap in deterministic cell order; failed cells are flagged with NaN values
    """
    if resolution < 16:
        raise DomainError(f"Map resolution must be >= 16 cells, got {resolution}")
    if strategy not in ('shared_propagator', 'per_cell'):
        raise ConfigurationError(f"Unknown map strategy '{strategy}'")
    schedule = schedule or LandauZenerSchedule(params.epsilon)
    span = params.span
    base = cfg or IntegratorConfig()
    endpoint_cfg = replace(base, output_times=[span[0], span[1]], dt_out=None)

    if frame > 0 and cascade is None:
        cascade = build_cascade(schedule, span, max(frame, 1), grid_cfg)
    rot_start, rot_end, field_start, field_end = _endpoint_frames(schedule, params, frame, cascade)

    cells = hemisphere_grid(resolution)
    with PerformanceTimer("entropy_map", f"epsilon={params.epsilon:g}, t_i={params.t_i:g}, "
                                         f"{resolution} cells, {strategy}"):
        if strategy == 'shared_propagator':
            finals, flags = _final_states_shared(cells, schedule, span, endpoint_cfg)
        else:
            finals, flags = _final_states_per_cell(cells, schedule, span, endpoint_cfg, max(1, workers))

    values = np.full(resolution, np.nan)
    ok = ~flags
    if np.any(ok):
        start = rot_start.apply(cells[ok])
        end = rot_end.apply(finals[ok])
        s_start = np.asarray(equilibrium_entropy(start, np.tile(field_start, (start.shape[0], 1))))
        s_end = np.asarray(equilibrium_entropy(end, np.tile(field_end, (end.shape[0], 1))))
        values[ok] = s_end - s_start

    if np.any(flags):
        logger.warning(f"entropy_map: {int(flags.sum())} of {resolution} cells flagged")

    metadata = {'strategy': strategy, 'method': base.method, 'rel_tol': base.rel_tol,
                'abs_tol': base.abs_tol, 'flagged_cells': int(flags.sum())}
    return EntropyMap(cells, values, flags, params, frame, metadata)


@dataclass
class MapComparison:
    """Paired-cell statistics between two maps on the same grid"""

    pearson_r: float
    sign_flip_fraction: float
    max_abs_diff: float
    compared_cells: int


def map_compare(a: EntropyMap, b: EntropyMap) -> MapComparison:
    """
    Correlation, opposite-sign fraction and largest difference over paired cells

    Cells flagged in either map are skipped.

    Raises:
        GridMismatchError: if the maps were built on different cell grids
    """
    if a.cells.shape != b.cells.shape or not np.allclose(a.cells, b.cells, rtol=0.0, atol=1e-12):
        raise GridMismatchError(f"Cannot compare maps on different grids "
                                f"({a.resolution} vs {b.resolution} cells)")
    paired = a.valid & b.valid
    va = a.values[paired]
    vb = b.values[paired]
    if va.size == 0:
        return MapComparison(float('nan'), float('nan'), float('nan'), 0)

    if np.array_equal(va, vb):
        r = 1.0
    elif va.size < 2 or np.ptp(va) == 0.0 or np.ptp(vb) == 0.0:
        r = float('nan')
    else:
        r = float(stats.pearsonr(va, vb)[0])
    flips = float(np.mean(np.sign(va) * np.sign(vb) < 0))
    return MapComparison(r, flips, float(np.max(np.abs(va - vb))), int(va.size))


def map_statistics(entropy_map_: EntropyMap) -> Dict[str, Any]:
    """Hot/cold fractions, quantiles and the north-pole cell of a map"""
    values = entropy_map_.values[entropy_map_.valid]
    pole = entropy_map_.north_pole_index
    if values.size == 0:
        return {'valid_cells': 0, 'flagged_cells': int(entropy_map_.flags.sum())}
    pole_value = float(entropy_map_.values[pole])
    return {
        'valid_cells': int(values.size),
        'flagged_cells': int(entropy_map_.flags.sum()),
        'hot_fraction': float(np.mean(values > 0)),
        'cold_fraction': float(np.mean(values < 0)),
        'min': float(np.min(values)),
        'max': float(np.max(values)),
        'median': float(np.median(values)),
        'p25': float(np.percentile(values, 25)),
        'p75': float(np.percentile(values, 75)),
        'north_pole_index': pole,
        'north_pole_cell': entropy_map_.cells[pole].tolist(),
        'north_pole_delta_s': pole_value,
        'north_pole_percentile': float(stats.percentileofscore(values, pole_value, kind='weak'))
        if math.isfinite(pole_value) else float('nan'),
    }


@dataclass
class SensitivityRecord:
    """Map comparisons for a t_i shift and a t_f shift of the same size"""

    params: LZParams
    delta: float
    t_i_shift: MapComparison
    t_f_shift: MapComparison

    def to_dict(self) -> Dict[str, Any]:
        return {'params': asdict(self.params), 'delta': self.delta,
                't_i_shift': asdict(self.t_i_shift), 't_f_shift': asdict(self.t_f_shift)}


def endpoint_sensitivity(params: LZParams, delta: float, resolution: int = 2048,
                         frame: int = 0, **map_options) -> SensitivityRecord:
    """
    Compare the base map against maps with t_i and with t_f shifted by delta

    Args:
        params: Base sweep parameters
        delta: Endpoint shift (>= 0)
        resolution, frame, map_options: Forwarded to entropy_map
    """
    if delta < 0:
        raise DomainError(f"delta must be >= 0, got {delta}")
    base = entropy_map(params, resolution, frame, **map_options)
    start_shift = entropy_map(params.shifted(t_i_shift=delta), resolution, frame, **map_options)
    end_shift = entropy_map(params.shifted(t_f_shift=delta), resolution, frame, **map_options)
    record = SensitivityRecord(params, delta, map_compare(base, start_shift), map_compare(base, end_shift))
    logger.info(f"endpoint_sensitivity: sign flips t_i {record.t_i_shift.sign_flip_fraction:.3f}, "
                f"t_f {record.t_f_shift.sign_flip_fraction:.3f}")
    return record


def panel(params: LZParams, epsilon_shift: float = 0.01, time_shift: float = 0.1,
          resolution: int = 2048, frame: int = 0, **map_options) -> Dict[Tuple[int, int], EntropyMap]:
    """
    3x3 batch of maps: rows scale epsilon by (1 - s, 1, 1 + s), columns shift t_i by (-dt, 0, +dt)

    Returns:
        Maps keyed by (row, column)
    """
    maps = {}
    for row, factor in enumerate((1.0 - epsilon_shift, 1.0, 1.0 + epsilon_shift)):
        for col, shift in enumerate((-time_shift, 0.0, time_shift)):
            shifted = params.shifted(epsilon_factor=factor, t_i_shift=shift)
            maps[(row, col)] = entropy_map(shifted, resolution, frame, **map_options)
    return maps
