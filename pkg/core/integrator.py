"""
Precession integrator for QubitThermo
Integrates dP/dt = H(t) x P over a drive schedule.

The default scheme is a fourth-order Magnus propagator on Gauss-Legendre nodes.
Every step is an exact rotation, so |P| is conserved to round-off. Local errors
are controlled by step doubling, and the step rotations are chained into the
cumulative propagator R(t, t_i) with a parallel prefix scan over quaternions.
The Dormand-Prince pairs of scipy's solve_ivp are available as 'rk45' and
'dop853' for cross-checks.
"""

from utils.common_imports import *
from utils.logger import logger, PerformanceTimer
from utils.export import write_csv, read_csv
from core.bloch import BlochVector, as_vector
from core.schedules import DriveSchedule
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation


METHODS = ('magnus4', 'rk45', 'dop853')
_SOLVE_IVP_METHODS = {'rk45': 'RK45', 'dop853': 'DOP853'}

# Gauss-Legendre nodes for the two-point Magnus expansion
_GL_OFFSET = math.sqrt(3.0) / 6.0
_COMMUTATOR_WEIGHT = math.sqrt(3.0) / 12.0

# Step-doubling: the two-half-step result of an order-4 method has error ~ diff / 15
_RICHARDSON = 15.0
_SAFETY = 0.9
_MAX_SPLIT = 10


@dataclass
class IntegratorConfig:
    """Integrator tolerances, step limits and the output grid"""

    method: str = "magnus4"
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = 0.1
    initial_step: float = 0.05
    output_points: int = 4001
    dt_out: Optional[float] = None
    output_times: Optional[Sequence[float]] = None
    min_step: float = 1e-10
    max_refinements: int = 12
    norm_threshold: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"Unknown integrator method '{self.method}', expected one of {METHODS}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ConfigurationError("Integrator tolerances must be > 0")
        if not (self.max_step > 0 and self.initial_step > 0):
            raise ConfigurationError("max_step and initial_step must be > 0")
        if self.dt_out is not None and not self.dt_out > 0:
            raise ConfigurationError("dt_out must be > 0")
        if self.output_points < 2:
            raise ConfigurationError("output_points must be at least 2")

    @classmethod
    def from_settings(cls, settings, output_times: Optional[Sequence[float]] = None) -> 'IntegratorConfig':
        """Build from an [integrator] settings section"""
        return cls(method=settings.method,
                   rel_tol=settings.rel_tol,
                   abs_tol=settings.abs_tol,
                   max_step=settings.max_step,
                   initial_step=settings.initial_step,
                   output_points=settings.output_points,
                   dt_out=settings.dt_out if settings.dt_out > 0 else None,
                   output_times=output_times)

    def output_grid(self, span: Tuple[float, float]) -> np.ndarray:
        """
        Times at which the trajectory is sampled

        An explicit time list wins over dt_out, which wins over output_points.
        """
        t_i, t_f = float(span[0]), float(span[1])
        if self.output_times is not None:
            times = np.asarray(self.output_times, dtype=float)
            if times.ndim != 1 or times.size < 1:
                raise DomainError("output_times must be a non-empty 1-D list")
            if np.any(np.diff(times) <= 0):
                raise DomainError("output_times must be strictly increasing")
            if times[0] < t_i - 1e-12 or times[-1] > t_f + 1e-12:
                raise DomainError(f"output_times leave the span [{t_i}, {t_f}]")
            return np.clip(times, t_i, t_f)
        if self.dt_out is not None:
            count = int(math.floor((t_f - t_i) / self.dt_out + 1e-9))
            times = t_i + self.dt_out * np.arange(count + 1)
            if t_f - times[-1] > 1e-9 * self.dt_out:
                times = np.append(times, t_f)
            else:
                times[-1] = t_f
            return times
        return np.linspace(t_i, t_f, self.output_points)

    def as_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['output_times'] = None if self.output_times is None else len(self.output_times)
        return data


@dataclass
class Trajectory:
    """Polarization samples P(t) on a strictly increasing time grid"""

    times: np.ndarray
    states: np.ndarray
    norm_drift: float
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.states.shape != (self.times.size, 3):
            raise DomainError(f"Trajectory shapes disagree: times {self.times.shape}, states {self.states.shape}")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise DomainError("Trajectory times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.size

    @property
    def span(self) -> Tuple[float, float]:
        return (float(self.times[0]), float(self.times[-1]))

    @property
    def initial(self) -> BlochVector:
        return BlochVector.from_array(self.states[0])

    @property
    def final(self) -> BlochVector:
        return BlochVector.from_array(self.states[-1])

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def vectors(self) -> List[BlochVector]:
        return [BlochVector.from_array(row) for row in self.states]

    def at(self, times: Sequence[float]) -> np.ndarray:
        """
        States on another grid; samples are returned directly when the grids match,
        otherwise the trajectory is resampled with a cubic spline
        """
        query = np.asarray(times, dtype=float)
        if query.shape == self.times.shape and np.array_equal(query, self.times):
            return self.states.copy()
        lo, hi = self.span
        scale = max(1.0, abs(lo), abs(hi))
        if query.min() < lo - 1e-9 * scale or query.max() > hi + 1e-9 * scale:
            raise DomainError(f"Requested times leave the trajectory span [{lo}, {hi}]")
        if self.times.size < 2:
            return np.tile(self.states[0], (query.size, 1))
        return CubicSpline(self.times, self.states, axis=0)(np.clip(query, lo, hi))

    def to_csv(self, filepath: str, metadata: Optional[Dict[str, Any]] = None) -> str:
        """Columns t, Px, Py, Pz, |P| with '#' metadata lines"""
        meta = {k: v for k, v in self.metadata.items() if not isinstance(v, dict)}
        meta['norm_drift'] = self.norm_drift
        meta.update(metadata or {})
        norms = self.norms()
        rows = ((t, p[0], p[1], p[2], r) for t, p, r in zip(self.times, self.states, norms))
        return write_csv(filepath, ['t', 'Px', 'Py', 'Pz', '|P|'], rows, meta)

    @classmethod
    def from_csv(cls, filepath: str) -> 'Trajectory':
        metadata, header, table = read_csv(filepath)
        if header[:4] != ['t', 'Px', 'Py', 'Pz']:
            raise ExportError(f"{filepath} is not a trajectory file (header {header})")
        drift = float(metadata.pop('norm_drift', 'nan'))
        return cls(table[:, 0], table[:, 1:4], drift, dict(metadata))


@dataclass
class Propagator:
    """
    Rotations R(t_k, t_i) on an output grid

    Because the precession equation is linear, P(t_k) = R(t_k, t_i) P(t_i) for
    every initial state; one propagator serves a whole entropy map.
    """

    times: np.ndarray
    rotations: Rotation
    steps: int
    max_local_error: float
    metadata: Dict[str, Any] = field(default_factory=dict)

    def apply(self, p_init) -> np.ndarray:
        """Trajectory samples (N, 3) for one initial polarization"""
        return self.rotations.apply(as_vector(p_init))

    @property
    def final(self) -> Rotation:
        return self.rotations[len(self.times) - 1]

    def apply_final(self, points: np.ndarray) -> np.ndarray:
        """Final states for many initial polarizations at once, shape (M, 3)"""
        return self.final.apply(as_vector(points))

    def matrices(self) -> np.ndarray:
        return self.rotations.as_matrix()


# ---------------------------------------------------------------------------
# Magnus scheme
# ---------------------------------------------------------------------------

def _magnus_rotvec(schedule: DriveSchedule, start: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Fourth-order Magnus exponent (as a rotation vector) for steps [start, start + h]"""
    mid = start + 0.5 * h
    h1 = schedule.field(mid - _GL_OFFSET * h)
    h2 = schedule.field(mid + _GL_OFFSET * h)
    return 0.5 * h[:, None] * (h1 + h2) + _COMMUTATOR_WEIGHT * (h * h)[:, None] * np.cross(h2, h1)


def _step_with_error(schedule: DriveSchedule, start: np.ndarray, h: np.ndarray) -> Tuple[Rotation, np.ndarray]:
    """Two-half-step rotations and their step-doubling error estimates"""
    full = Rotation.from_rotvec(_magnus_rotvec(schedule, start, h))
    first = Rotation.from_rotvec(_magnus_rotvec(schedule, start, 0.5 * h))
    second = Rotation.from_rotvec(_magnus_rotvec(schedule, start + 0.5 * h, 0.5 * h))
    halves = second * first
    error = (halves * full.inv()).magnitude() / _RICHARDSON
    return halves, error


def _cumulative(steps: Rotation) -> Rotation:
    """Inclusive prefix products steps[k] * ... * steps[0] (Hillis-Steele scan)"""
    current = steps
    count = len(steps)
    shift = 1
    while shift < count:
        combined = current[shift:] * current[:count - shift]
        current = Rotation.concatenate([current[:shift], combined])
        shift *= 2
    return current


def _initial_edges(span: Tuple[float, float], outputs: np.ndarray, step: float) -> np.ndarray:
    """Uniform step grid merged with the output times; outputs stay exact grid points"""
    t_i, t_f = span
    count = max(1, int(math.ceil((t_f - t_i) / step)))
    base = np.linspace(t_i, t_f, count + 1)
    anchors = np.union1d(outputs, [t_i, t_f])
    # drop base points that would create sliver steps next to an output time
    idx = np.clip(np.searchsorted(anchors, base), 1, anchors.size - 1)
    distance = np.minimum(np.abs(base - anchors[idx - 1]), np.abs(anchors[idx] - base))
    keep = distance > 1e-6 * (t_f - t_i) / count
    return np.union1d(base[keep], anchors)


def _refine(edges: np.ndarray, splits: np.ndarray) -> np.ndarray:
    """Split step i of the grid into splits[i] equal substeps"""
    start = edges[:-1]
    h = np.diff(edges)
    local = np.arange(int(splits.sum())) - np.repeat(np.cumsum(splits) - splits, splits)
    points = np.repeat(start, splits) + np.repeat(h / splits, splits) * local
    return np.append(points, edges[-1])


def propagate(schedule: DriveSchedule,
              span: Tuple[float, float],
              cfg: Optional[IntegratorConfig] = None) -> Propagator:
    """
    Build the cumulative rotation propagator on the configured output grid

    Args:
        schedule: Drive schedule h(t)
        span: (t_i, t_f) with t_i < t_f
        cfg: Integrator configuration (method is ignored; the propagator is always Magnus)

    Returns:
        Propagator with R(t_k, t_i) for every output time t_k

    Raises:
        IntegrationError: step-size underflow or tolerance not reached
    """
    cfg = cfg or IntegratorConfig()
    t_i, t_f = float(span[0]), float(span[1])
    if not t_i < t_f:
        raise DomainError(f"Integration span must satisfy t_i < t_f, got [{t_i}, {t_f}]")
    schedule.check_span((t_i, t_f))

    outputs = cfg.output_grid((t_i, t_f))
    tolerance = cfg.abs_tol + cfg.rel_tol
    edges = _initial_edges((t_i, t_f), outputs, min(cfg.initial_step, cfg.max_step))

    with PerformanceTimer("propagate", f"{schedule.label} on [{t_i:g}, {t_f:g}]"):
        for iteration in range(cfg.max_refinements + 1):
            h = np.diff(edges)
            steps, error = _step_with_error(schedule, edges[:-1], h)
            bad = error > tolerance
            if not np.any(bad):
                break

            worst = int(np.argmax(error))
            if iteration == cfg.max_refinements:
                raise IntegrationError(
                    f"Tolerance {tolerance:.1e} not achievable after {iteration} refinements "
                    f"(local error {error[worst]:.2e})", time=float(edges[worst]))

            ratio = np.where(bad, error / tolerance, 1.0)
            splits = np.where(bad, np.ceil(ratio ** 0.2 / _SAFETY), 1).astype(int)
            splits = np.clip(splits, 1, _MAX_SPLIT)
            splits[bad] = np.maximum(splits[bad], 2)

            smallest = np.where(bad, h / splits, np.inf)
            if np.min(smallest) < cfg.min_step:
                at = int(np.argmin(smallest))
                raise IntegrationError(f"Step size underflow ({smallest[at]:.2e}) at t = {edges[at]:.6g}",
                                       time=float(edges[at]))

            logger.debug(f"propagate: refinement {iteration + 1}, {int(bad.sum())} of {h.size} steps above tolerance")
            edges = _refine(edges, splits)

        cumulative = _cumulative(steps)

    # R(edges[0]) is the identity; R(edges[j]) = cumulative[j - 1]
    index = np.searchsorted(edges, outputs)
    index = np.clip(index, 0, edges.size - 1)
    if np.max(np.abs(edges[index] - outputs)) > 1e-9 * max(1.0, abs(t_i), abs(t_f)):
        raise IntegrationError("Output times were lost from the step grid")
    identity = Rotation.identity(1)
    table = Rotation.concatenate([identity, cumulative])
    rotations = table[index]

    metadata = {
        'method': 'magnus4',
        'steps': int(h.size),
        'max_local_error': float(np.max(error)),
        'tolerance': tolerance,
        'span': [t_i, t_f],
    }
    logger.debug(f"propagate: {h.size} steps, max local error {np.max(error):.2e}")
    return Propagator(outputs, rotations, int(h.size), float(np.max(error)), metadata)


def _solve_ivp_states(p0: np.ndarray, schedule: DriveSchedule, span: Tuple[float, float],
                      outputs: np.ndarray, cfg: IntegratorConfig) -> Tuple[np.ndarray, int]:
    """Reference Runge-Kutta integration through scipy"""
    def rhs(t, y):
        return np.cross(schedule.field(t), y)

    solution = solve_ivp(rhs, span, p0,
                         method=_SOLVE_IVP_METHODS[cfg.method],
                         t_eval=outputs,
                         rtol=cfg.rel_tol,
                         atol=cfg.abs_tol,
                         max_step=cfg.max_step,
                         first_step=min(cfg.initial_step, cfg.max_step))
    if not solution.success:
        failed_at = float(solution.t[-1]) if solution.t.size else float(span[0])
        raise IntegrationError(f"{cfg.method} failed: {solution.message}", time=failed_at)
    return solution.y.T, int(solution.nfev)


def evolve(p_init,
           schedule: DriveSchedule,
           span: Tuple[float, float],
           cfg: Optional[IntegratorConfig] = None,
           propagator: Optional[Propagator] = None) -> Trajectory:
    """
    Integrate the precession equation from a single initial polarization

    Args:
        p_init: Initial polarization at t_i, |P| <= 1
        schedule: Drive schedule h(t)
        span: (t_i, t_f)
        cfg: Integrator configuration
        propagator: Reuse a Magnus propagator built for the same schedule, span and grid

    Returns:
        Trajectory on the output grid; |P| is never renormalized

    Raises:
        DomainError: non-physical initial state or invalid span
        IntegrationError: step-size underflow or tolerance not reached
    """
    cfg = cfg or IntegratorConfig()
    p0 = as_vector(p_init).reshape(3)
    r0 = float(np.linalg.norm(p0))
    if r0 > 1.0 + NORM_TOLERANCE:
        raise DomainError(f"Initial polarization norm {r0:.15g} exceeds 1")
    t_i, t_f = float(span[0]), float(span[1])
    if not t_i < t_f:
        raise DomainError(f"Integration span must satisfy t_i < t_f, got [{t_i}, {t_f}]")

    if cfg.method == 'magnus4':
        if propagator is None:
            propagator = propagate(schedule, (t_i, t_f), cfg)
        outputs = propagator.times
        states = propagator.apply(p0)
        work = {'steps': propagator.steps, 'max_local_error': propagator.max_local_error}
    else:
        schedule.check_span((t_i, t_f))
        outputs = cfg.output_grid((t_i, t_f))
        with PerformanceTimer(f"evolve[{cfg.method}]", schedule.label):
            states, nfev = _solve_ivp_states(p0, schedule, (t_i, t_f), outputs, cfg)
        work = {'function_evaluations': nfev}

    drift = float(np.max(np.abs(np.linalg.norm(states, axis=1) - r0)))
    logger.log_norm_drift(f"evolve[{cfg.method}]", drift, cfg.norm_threshold)

    metadata = {
        'method': cfg.method,
        'rel_tol': cfg.rel_tol,
        'abs_tol': cfg.abs_tol,
        'norm_threshold': cfg.norm_threshold,
        't_i': t_i,
        't_f': t_f,
        'schedule': schedule.label,
    }
    metadata.update(work)
    return Trajectory(outputs, states, drift, metadata)


def transition_probability(traj: Trajectory, schedule: DriveSchedule) -> float:
    """
    Nonadiabatic transition probability of a sweep started in an eigenstate

    p = (1 - s_i H_hat(t_f) . P(t_f) / |P(t_i)|) / 2 with s_i the initial
    alignment sign of P(t_i) relative to H_hat(t_i).

    Raises:
        DomainError: if P(t_i) is not an eigenstate of H(t_i) within 1e-6
    """
    p_start = traj.states[0]
    r0 = float(np.linalg.norm(p_start))
    h_start = schedule.field(traj.times[0])
    h_end = schedule.field(traj.times[-1])
    h_start_norm = float(np.linalg.norm(h_start))
    h_end_norm = float(np.linalg.norm(h_end))
    if r0 == 0.0 or h_start_norm == 0.0 or h_end_norm == 0.0:
        raise DomainError("Transition probability needs a polarized start and nonzero fields")

    alignment = float(np.dot(h_start, p_start)) / (h_start_norm * r0)
    sign = 1.0 if alignment >= 0 else -1.0
    misalignment = float(np.linalg.norm(p_start / r0 - sign * h_start / h_start_norm))
    if misalignment > EIGENSTATE_TOLERANCE:
        raise DomainError(f"Initial state is not an eigenstate of H(t_i) (deviation {misalignment:.2e})")

    projection = float(np.dot(h_end, traj.states[-1])) / (h_end_norm * r0)
    return float(np.clip(0.5 * (1.0 - sign * projection), 0.0, 1.0))
