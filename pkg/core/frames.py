"""
Superadiabatic frame cascade for QubitThermo

Frame n is reached from frame n-1 by the instantaneous rotation that takes the
effective field of frame n-1 onto z_hat. Moving into a rotating frame adds the
angular velocity of that rotation to the field, so in Bloch form

    h_eff[n] = |h_eff[n-1]| z_hat + c_vec[n],   c_vec[n] = J_l(v_n) dv_n/dt

with v_n the rotation vector of the aligning rotation and J_l the left Jacobian
of SO(3). The lab field is stored as frame 0.
"""

from utils.common_imports import *
from utils.logger import logger, PerformanceTimer
from utils.export import write_csv, write_json
from core.schedules import DriveSchedule
from core.integrator import Trajectory
from scipy.spatial.transform import Rotation


Z_HAT = np.array([0.0, 0.0, 1.0])
_SMALL_ANGLE = 1e-6
_ANTIPODE = 1e-12
_HARD_ANGLE_LIMIT = 0.1


@dataclass
class CascadeGridConfig:
    """
    Cascade grid and Q normalization

    q_rel_tol is the largest relative change of a frame's Q minimum between the
    grid and its once-halved spacing for that frame to count as converged.
    """

    points: int = 20001
    max_angle_step: float = 0.01
    max_points: int = 160001
    q_scale: float = 4.0
    q_rel_tol: float = 1e-3

    def __post_init__(self):
        if self.points < 5:
            raise ConfigurationError("The cascade grid needs at least five points")
        if not self.q_scale > 0:
            raise ConfigurationError("q_scale must be > 0")
        if not 0 < self.q_rel_tol < 1:
            raise ConfigurationError("q_rel_tol must lie in (0, 1)")

    @classmethod
    def from_settings(cls, settings) -> 'CascadeGridConfig':
        return cls(points=settings.grid_points,
                   max_angle_step=settings.max_angle_step,
                   max_points=settings.max_grid_points,
                   q_scale=settings.q_scale,
                   q_rel_tol=settings.q_convergence_tol)


@dataclass
class FrameCascade:
    """
    Per-frame time series on a uniform grid

    h_eff, quaternions: frames 0..n_built (frame 0 is the lab)
    h_diag, c_vec, q:   frames 1..n_built
    quaternions[n][k] maps lab vectors into frame n at grid[k]

    Frames past n_converged stay available for projections, but their Q minima
    moved under grid refinement and they take no part in optimal_frame.
    """

    grid: np.ndarray
    h_eff: Dict[int, np.ndarray]
    h_diag: Dict[int, np.ndarray]
    c_vec: Dict[int, np.ndarray]
    quaternions: Dict[int, np.ndarray]
    q: Dict[int, np.ndarray]
    n_max: int
    q_scale: float
    truncated_reason: Optional[str] = None
    n_converged: Optional[int] = None
    unconverged_reason: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_built(self) -> int:
        return len(self.h_eff) - 1

    @property
    def q_frames(self) -> List[int]:
        """Frames whose Q minima are trusted"""
        last = self.n_built if self.n_converged is None else min(self.n_converged, self.n_built)
        return list(range(1, max(last, 1) + 1)) if self.n_built else []

    def q_minima(self) -> List[float]:
        return [float(np.min(self.q[n])) for n in range(1, self.n_built + 1)]

    @property
    def span(self) -> Tuple[float, float]:
        return (float(self.grid[0]), float(self.grid[-1]))

    def check_frame(self, n: int, allow_lab: bool = True):
        lowest = 0 if allow_lab else 1
        if not isinstance(n, (int, np.integer)) or n < lowest or n > self.n_built:
            detail = f" (cascade truncated: {self.truncated_reason})" if self.truncated_reason else ""
            raise CascadeError(f"Frame {n} not available; built frames are {lowest}..{self.n_built}{detail}")

    def rotation(self, n: int) -> Rotation:
        """Cumulative lab-to-frame-n rotations on the grid"""
        self.check_frame(n)
        return Rotation.from_quat(self.quaternions[n])

    def step_rotation(self, n: int) -> Rotation:
        """The aligning rotation from frame n-1 to frame n"""
        self.check_frame(n, allow_lab=False)
        return self.rotation(n) * self.rotation(n - 1).inv()

    def max_angle_steps(self) -> Dict[int, float]:
        """Largest rotation angle between adjacent grid points, per frame"""
        steps = {}
        for n in range(1, self.n_built + 1):
            rot = self.rotation(n)
            steps[n] = float(np.max((rot[1:] * rot[:-1].inv()).magnitude()))
        return steps


# ---------------------------------------------------------------------------
# Numerical building blocks
# ---------------------------------------------------------------------------

def finite_difference(values: np.ndarray, spacing: float) -> np.ndarray:
    """
    Fourth-order derivative of samples on a uniform grid

    Five-point central stencil in the interior, one-sided fourth-order stencils
    at the two points nearest each boundary.
    """
    f = np.asarray(values, dtype=float)
    if f.shape[0] < 5:
        raise CascadeError("Finite differences need at least five grid points")
    d = np.empty_like(f)
    # written on differences so that constant samples differentiate to exactly zero
    d[2:-2] = ((f[:-4] - f[4:]) + 8.0 * (f[3:-1] - f[1:-3])) / (12.0 * spacing)
    d[0] = (48.0 * (f[1] - f[0]) - 36.0 * (f[2] - f[0]) + 16.0 * (f[3] - f[0]) - 3.0 * (f[4] - f[0])) / (12.0 * spacing)
    d[1] = (-3.0 * (f[0] - f[1]) + 18.0 * (f[2] - f[1]) - 6.0 * (f[3] - f[1]) + (f[4] - f[1])) / (12.0 * spacing)
    d[-1] = -(48.0 * (f[-2] - f[-1]) - 36.0 * (f[-3] - f[-1]) + 16.0 * (f[-4] - f[-1]) - 3.0 * (f[-5] - f[-1])) / (12.0 * spacing)
    d[-2] = -(-3.0 * (f[-1] - f[-2]) + 18.0 * (f[-3] - f[-2]) - 6.0 * (f[-4] - f[-2]) + (f[-5] - f[-2])) / (12.0 * spacing)
    return d


def alignment_rotvec(direction: np.ndarray) -> np.ndarray:
    """
    Rotation vectors of the minimal rotations taking unit vectors onto z_hat

    At the exact antipode (-z_hat) the axis is undefined and x_hat is used.
    """
    u = np.asarray(direction, dtype=float)
    cross = np.cross(u, Z_HAT)
    sin_theta = np.linalg.norm(cross, axis=-1)
    cos_theta = u[..., 2]
    theta = np.arctan2(sin_theta, cos_theta)

    small = (sin_theta < _SMALL_ANGLE) & (cos_theta > 0)
    factor = np.where(small, 1.0 + theta * theta / 6.0, theta / np.maximum(sin_theta, 1e-300))
    rotvec = cross * factor[..., None]

    antipode = (sin_theta < _ANTIPODE) & (cos_theta < 0)
    if np.any(antipode):
        rotvec[antipode] = np.array([math.pi, 0.0, 0.0])
    return rotvec


def alignment_rotvec_rate(direction: np.ndarray, direction_rate: np.ndarray) -> np.ndarray:
    """
    Time derivative of alignment_rotvec along a moving unit vector

    With s = u x z_hat and theta the angle between u and z_hat, v = s theta / sin(theta).
    Rows within 1e-8 of the antipode are returned as NaN.
    """
    u = np.asarray(direction, dtype=float)
    du = np.asarray(direction_rate, dtype=float)
    s = np.cross(u, Z_HAT)
    ds = np.cross(du, Z_HAT)
    sin_theta = np.linalg.norm(s, axis=-1)
    cos_theta = u[..., 2]
    theta = np.arctan2(sin_theta, cos_theta)

    safe = np.where(sin_theta > 0, sin_theta, 1.0)
    g = np.where(sin_theta > 0, theta / safe, 1.0)
    # k = g'(theta) / sin(theta); the closed form cancels badly for small angles
    series = theta < 1e-2
    k = np.where(series, 1.0 / 3.0 + 2.0 * theta ** 2 / 15.0 + 2.0 * theta ** 4 / 63.0,
                 (safe - theta * cos_theta) / safe ** 3)

    dot = np.einsum('...i,...i->...', s, ds)
    rate = ds * g[..., None] + s * (k * (cos_theta * dot - sin_theta ** 2 * du[..., 2]))[..., None]
    rate[(sin_theta < 1e-8) & (cos_theta < 0)] = np.nan
    return rate


def spatial_angular_velocity(rotvec: np.ndarray, rotvec_rate: np.ndarray) -> np.ndarray:
    """omega with dR/dt R^T = [omega]x for R = exp([v]x): omega = J_l(v) dv/dt"""
    theta = np.linalg.norm(rotvec, axis=-1)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta ** 2 / 24.0, (1.0 - np.cos(safe)) / safe ** 2)
    b = np.where(small, 1.0 / 6.0 - theta ** 2 / 120.0, (safe - np.sin(safe)) / safe ** 3)
    first = np.cross(rotvec, rotvec_rate)
    second = np.cross(rotvec, first)
    return rotvec_rate + a[..., None] * first + b[..., None] * second


def _continuous_quaternions(quats: np.ndarray) -> np.ndarray:
    """Flip quaternion signs so that neighbors have a positive dot product"""
    dots = np.einsum('ij,ij->i', quats[1:], quats[:-1])
    flips = np.concatenate([[1.0], np.cumprod(np.where(dots < 0, -1.0, 1.0))])
    return quats * flips[:, None]


def _q_series(h_diag: np.ndarray, c_vec: np.ndarray, q_scale: float) -> np.ndarray:
    c_norm = np.linalg.norm(c_vec, axis=1)
    q = np.full(h_diag.shape, INF)
    moving = c_norm > 0
    q[moving] = h_diag[moving] / (q_scale * c_norm[moving])
    return q


def _lab_rotvec_rate(schedule: DriveSchedule, grid: np.ndarray,
                     direction: np.ndarray, magnitude: np.ndarray) -> np.ndarray:
    """Frame-1 rotation-vector rate from the analytic field derivative"""
    dh = schedule.derivative(grid)
    along = np.einsum('ij,ij->i', direction, dh)
    direction_rate = (dh - direction * along[:, None]) / magnitude[:, None]
    return alignment_rotvec_rate(direction, direction_rate)


def _build_on_grid(schedule: DriveSchedule, grid: np.ndarray, n_max: int, q_scale: float) -> FrameCascade:
    spacing = float(grid[1] - grid[0])
    lab = schedule.field(grid)
    scale = float(np.max(np.linalg.norm(lab, axis=1))) if lab.size else 0.0

    h_eff = {0: lab}
    quaternions = {0: np.tile([0.0, 0.0, 0.0, 1.0], (grid.size, 1))}
    h_diag, c_vec, q = {}, {}, {}
    truncated = None
    cumulative = Rotation.from_quat(quaternions[0])

    for n in range(1, n_max + 1):
        previous = h_eff[n - 1]
        magnitude = np.linalg.norm(previous, axis=1)
        if not np.all(np.isfinite(previous)):
            truncated = f"non-finite effective field in frame {n - 1}"
            break
        weakest = int(np.argmin(magnitude))
        if magnitude[weakest] <= 1e-12 * max(scale, 1e-300):
            truncated = (f"effective field of frame {n - 1} vanishes at t = {grid[weakest]:.6g}; "
                         f"frame {n} is undefined")
            break

        direction = previous / magnitude[:, None]
        rotvec = alignment_rotvec(direction)
        if n == 1 and schedule.has_derivative:
            rate = _lab_rotvec_rate(schedule, grid, direction, magnitude)
            missing = ~np.all(np.isfinite(rate), axis=1)
            if np.any(missing):
                rate[missing] = finite_difference(rotvec, spacing)[missing]
        else:
            rate = finite_difference(rotvec, spacing)
        c = spatial_angular_velocity(rotvec, rate)

        step = Rotation.from_rotvec(rotvec)
        cumulative = step * cumulative
        quaternions[n] = _continuous_quaternions(cumulative.as_quat())

        h_diag[n] = magnitude
        c_vec[n] = c
        h_eff[n] = magnitude[:, None] * Z_HAT + c
        q[n] = _q_series(magnitude, c, q_scale)

    if truncated:
        logger.warning(f"build_cascade: truncated at frame {len(h_eff)} - {truncated}")

    return FrameCascade(grid=grid, h_eff=h_eff, h_diag=h_diag, c_vec=c_vec,
                        quaternions=quaternions, q=q, n_max=n_max, q_scale=q_scale,
                        truncated_reason=truncated)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def build_cascade(schedule: DriveSchedule,
                  span: Tuple[float, float],
                  n_max: int = 6,
                  grid_cfg: Optional[CascadeGridConfig] = None) -> FrameCascade:
    """
    Build superadiabatic frames 1..n_max on a uniform grid over span

    Every grid is checked against its once-halved spacing (2N - 1 points). The
    grid is refined while the adiabatic-frame rotation turns by more than
    max_angle_step between neighbors, or while more frames can be brought to
    grid-converged Q minima, up to max_points. The grid with the longest run of
    converged frames 1..k wins; deeper frames are kept but flagged through
    n_converged and unconverged_reason.

    Args:
        schedule: Drive schedule h(t)
        span: (t_i, t_f)
        n_max: Deepest frame to build (>= 1)
        grid_cfg: Grid resolution, Q normalization and convergence tolerance

    Returns:
        FrameCascade; truncated_reason is set when a frame could not be built
    """
    if n_max < 1:
        raise CascadeError(f"n_max must be >= 1, got {n_max}")
    grid_cfg = grid_cfg or CascadeGridConfig()
    t_i, t_f = float(span[0]), float(span[1])
    if not t_i < t_f:
        raise DomainError(f"Cascade span must satisfy t_i < t_f, got [{t_i}, {t_f}]")
    schedule.check_span((t_i, t_f))

    points = grid_cfg.points
    refinements = 0
    best = None
    with PerformanceTimer("build_cascade", f"{schedule.label}, n_max={n_max}"):
        cascade = _build_on_grid(schedule, np.linspace(t_i, t_f, points), n_max, grid_cfg.q_scale)
        while 2 * points - 1 <= grid_cfg.max_points:
            finer_points = 2 * points - 1
            finer = _build_on_grid(schedule, np.linspace(t_i, t_f, finer_points), n_max, grid_cfg.q_scale)
            adiabatic_step = cascade.max_angle_steps().get(1, 0.0)

            if adiabatic_step <= grid_cfg.max_angle_step:
                changes = q_minimum_changes(cascade.q_minima(), finer.q_minima())
                converged = converged_frames(changes, grid_cfg.q_rel_tol)
                logger.debug(f"build_cascade: {points} points, {converged} of {len(changes)} frames converged")
                if best is None or converged > best[0]:
                    best = (converged, cascade, points, refinements, changes)
                if converged == len(changes) or converged < best[0]:
                    break
            else:
                logger.debug(f"build_cascade: angle step {adiabatic_step:.3g} rad, refining to {finer_points} points")

            cascade, points = finer, finer_points
            refinements += 1

    changes = None
    if best is not None:
        converged, cascade, points, refinements, changes = best
        if converged < cascade.n_built:
            cascade.n_converged = converged
            if converged < len(changes):
                cascade.unconverged_reason = (f"Q minimum of frame {converged + 1} changed by "
                                              f"{changes[converged]:.2e} when the grid spacing was halved")
            else:
                cascade.unconverged_reason = f"frame {converged + 1} could not be built on the finer grid"
            logger.warning(f"build_cascade: frames {converged + 1}..{cascade.n_built} are not grid-converged "
                           f"and are left out of the optimal frame ({cascade.unconverged_reason})")
    else:
        logger.warning(f"build_cascade: Q convergence not checked, {points} points is the grid limit")

    angle_steps = cascade.max_angle_steps()
    coarse = {n: a for n, a in angle_steps.items() if a > _HARD_ANGLE_LIMIT}
    if coarse:
        logger.warning(f"build_cascade: grid under-resolves frames {sorted(coarse)} "
                       f"(largest angle step {max(coarse.values()):.3g} rad)")

    cascade.metadata = {
        'schedule': schedule.params(),
        'span': [t_i, t_f],
        'grid_points': int(points),
        'refinements': refinements,
        'max_angle_steps': angle_steps,
        'q_scale': grid_cfg.q_scale,
        'q_rel_tol': grid_cfg.q_rel_tol,
        'q_min_changes': changes,
        'n_converged': cascade.n_converged if cascade.n_converged is not None else cascade.n_built,
    }
    logger.log_cascade(schedule.label, cascade.q_minima(), int(points), cascade.metadata['n_converged'])
    return cascade


def q_minimum_changes(coarse: Sequence[float], fine: Sequence[float]) -> List[float]:
    """Relative change of each frame's Q minimum between two grids; equal infinities count as 0"""
    changes = []
    for a, b in zip(coarse, fine):
        if a == b:
            changes.append(0.0)
        elif math.isinf(a) or math.isinf(b):
            changes.append(INF)
        else:
            changes.append(abs(a - b) / max(abs(a), abs(b)))
    return changes


def converged_frames(changes: Sequence[float], tolerance: float) -> int:
    """Length of the leading run of frames whose Q minimum changed by at most tolerance"""
    count = 0
    for change in changes:
        if not change <= tolerance:
            break
        count += 1
    return count


def q_factor(cascade: FrameCascade, n: int,
             window: Optional[Tuple[float, float]] = None) -> Tuple[np.ndarray, float]:
    """
    Adiabaticity factor Q_n(t) = h_diag / (q_scale |c_vec|) and its minimum

    The plain ratio |h_diag| / |c_vec| is q_scale * Q_n; exported q columns
    carry the scaled value.

    Args:
        cascade: Built cascade
        n: Frame index (>= 1)
        window: Optional (t_a, t_b) for the minimum; defaults to the full grid

    Returns:
        (Q_n series on the grid, Q_n minimum over the window); +inf where c_vec = 0
    """
    cascade.check_frame(n, allow_lab=False)
    series = cascade.q[n]
    mask = _window_mask(cascade.grid, window)
    return series, float(np.min(series[mask]))


def q_minimum_time(cascade: FrameCascade, n: int, window: Optional[Tuple[float, float]] = None) -> float:
    """Grid time at which Q_n attains its minimum (first occurrence)"""
    cascade.check_frame(n, allow_lab=False)
    mask = _window_mask(cascade.grid, window)
    index = np.flatnonzero(mask)[int(np.argmin(cascade.q[n][mask]))]
    return float(cascade.grid[index])


def _window_mask(grid: np.ndarray, window: Optional[Tuple[float, float]]) -> np.ndarray:
    if window is None:
        return np.ones(grid.size, dtype=bool)
    mask = (grid >= window[0]) & (grid <= window[1])
    if not np.any(mask):
        raise CascadeError(f"Window {window} contains no grid points")
    return mask


def optimal_frame(cascade: FrameCascade) -> Tuple[int, float]:
    """
    Frame with the largest Q_n minimum; ties go to the smallest n

    Returns:
        (n_star, Q) where Q = max_n min_t Q_n(t)
    """
    if cascade.n_built < 2:
        raise CascadeError(f"optimal_frame needs at least two frames, {cascade.n_built} built")
    frames = cascade.q_frames
    minima = [q_factor(cascade, n)[1] for n in frames]
    index = int(np.argmax(minima))
    return frames[index], float(minima[index])


def q_summary(cascade: FrameCascade) -> Dict[str, Any]:
    """Per-frame Q minima with their times plus n_star and the frame-independent Q"""
    trusted = set(cascade.q_frames)
    frames = []
    for n in range(1, cascade.n_built + 1):
        _, q_min = q_factor(cascade, n)
        frames.append({'n': n, 'q_min': q_min, 't_at_qmin': q_minimum_time(cascade, n),
                       'converged': n in trusted})
    summary = {'frames': frames, 'n_built': cascade.n_built, 'truncated_reason': cascade.truncated_reason,
               'n_converged': cascade.n_built if cascade.n_converged is None else cascade.n_converged,
               'unconverged_reason': cascade.unconverged_reason}
    if cascade.n_built >= 2:
        n_star, q_star = optimal_frame(cascade)
        summary.update({'n_star': n_star, 'q_star': q_star})
    return summary


def frame_field(cascade: FrameCascade, n: int) -> np.ndarray:
    """Effective field of frame n in frame-n coordinates, shape (N, 3); n = 0 is the lab field"""
    cascade.check_frame(n)
    return cascade.h_eff[n]


def states_on_grid(traj: Trajectory, cascade: FrameCascade) -> np.ndarray:
    lo, hi = cascade.span
    t_lo, t_hi = traj.span
    tol = 1e-9 * max(1.0, abs(lo), abs(hi))
    if abs(t_lo - lo) > tol or abs(t_hi - hi) > tol:
        raise CascadeError(f"Trajectory span [{t_lo}, {t_hi}] does not match cascade span [{lo}, {hi}]")
    same_grid = traj.times.shape == cascade.grid.shape and np.allclose(traj.times, cascade.grid, rtol=0.0, atol=tol)
    if same_grid:
        return traj.states
    # Spline resampling cannot follow precession faster than the trajectory sampling
    fastest = float(np.max(np.linalg.norm(cascade.h_eff[0], axis=1)))
    if fastest * float(np.max(np.diff(traj.times))) > 0.5:
        logger.warning("transform_trajectory: trajectory samples are coarse relative to the precession "
                       "period; evolve on the cascade grid for exact frame projections")
    return traj.at(np.clip(cascade.grid, t_lo, t_hi))


def transform_trajectory(traj: Trajectory, cascade: FrameCascade, n: int) -> Trajectory:
    """
    Express a lab-frame trajectory in frame n

    Args:
        traj: Lab-frame trajectory covering the cascade span
        cascade: Built cascade
        n: Target frame; 0 returns the trajectory unchanged

    Returns:
        Trajectory on the cascade grid (frame n >= 1)

    Raises:
        CascadeError: frame not built or span mismatch
    """
    cascade.check_frame(n)
    if n == 0:
        return traj
    lab_states = states_on_grid(traj, cascade)
    states = cascade.rotation(n).apply(lab_states)
    metadata = dict(traj.metadata)
    metadata['frame'] = n
    return Trajectory(cascade.grid.copy(), states, traj.norm_drift, metadata)


def adiabatic_following(cascade: FrameCascade, n: int, sign: int = -1) -> Trajectory:
    """
    Lab-frame state that stays (anti)aligned with the effective field of frame n

    This is the basis state of frame n+1; sign = -1 follows the lower level.
    """
    cascade.check_frame(n)
    if sign not in (-1, 1):
        raise DomainError(f"sign must be +1 or -1, got {sign}")
    field_n = cascade.h_eff[n]
    target = sign * field_n / np.linalg.norm(field_n, axis=1)[:, None]
    lab = target if n == 0 else cascade.rotation(n).inv().apply(target)
    return Trajectory(cascade.grid.copy(), lab, 0.0, {'frame': n, 'kind': 'adiabatic_following', 'sign': sign})


def export_cascade(cascade: FrameCascade, directory: str, scenario: Optional[Dict[str, Any]] = None) -> List[str]:
    """
    Write one CSV per frame (t, h_diag, c_x, c_y, c_z, q) plus a JSON Q summary

    Returns:
        Paths written
    """
    written = []
    for n in range(1, cascade.n_built + 1):
        meta = dict(scenario or {})
        meta.update({'frame': n, 'q_scale': cascade.q_scale})
        rows = ((t, h, c[0], c[1], c[2], qv) for t, h, c, qv in
                zip(cascade.grid, cascade.h_diag[n], cascade.c_vec[n], cascade.q[n]))
        path = os.path.join(directory, f"cascade_frame{n}.csv")
        written.append(write_csv(path, ['t', 'h_diag', 'c_x', 'c_y', 'c_z', 'q'], rows, meta))

    payload = q_summary(cascade)
    payload['metadata'] = cascade.metadata
    written.append(write_json(os.path.join(directory, "cascade_summary.json"), payload))
    return written
