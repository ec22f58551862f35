"""
Drive schedules for QubitThermo
Time-dependent Hamiltonian fields h(t) in units where the coupling H_12 = 1.
The Landau-Zener linear sweep is the canonical schedule; constant and tabulated
schedules exist for static-field checks and user-supplied drives.
"""

from utils.common_imports import *
from utils.logger import logger
from core.bloch import BlochVector, entropy_of_norm
from abc import ABC, abstractmethod
from typing import Callable
from scipy.interpolate import CubicSpline


# ---------------------------------------------------------------------------
# Landau-Zener closed forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LZParams:
    """Sweep rate epsilon and the sweep endpoints t_i < t_f"""

    epsilon: float
    t_i: float = -100.0
    t_f: float = 100.0

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise DomainError(f"epsilon must be > 0, got {self.epsilon}")
        if not (math.isfinite(self.t_i) and math.isfinite(self.t_f) and self.t_i < self.t_f):
            raise DomainError(f"Sweep span must satisfy t_i < t_f, got [{self.t_i}, {self.t_f}]")

    @property
    def duration(self) -> float:
        return self.t_f - self.t_i

    @property
    def span(self) -> Tuple[float, float]:
        return (self.t_i, self.t_f)

    def shifted(self, epsilon_factor: float = 1.0, t_i_shift: float = 0.0, t_f_shift: float = 0.0) -> 'LZParams':
        return LZParams(self.epsilon * epsilon_factor, self.t_i + t_i_shift, self.t_f + t_f_shift)


def lz_field(t: float, params: LZParams) -> BlochVector:
    """H(t) = 2 x_hat + 2 epsilon t z_hat"""
    return BlochVector(2.0, 0.0, 2.0 * params.epsilon * float(t))


def energy_levels(t: float, params: LZParams) -> Tuple[float, float]:
    """Instantaneous eigenvalues E_pm = pm 2 sqrt(1 + (epsilon t)^2)"""
    gap = 2.0 * math.hypot(1.0, params.epsilon * float(t))
    return (gap, -gap)


def p_lz(epsilon: float) -> float:
    """Asymptotic nonadiabatic transition probability exp(-pi / epsilon)"""
    if not epsilon > 0:
        raise DomainError(f"epsilon must be > 0, got {epsilon}")
    return math.exp(-math.pi / epsilon)


def delta_s_lz(epsilon: float) -> float:
    """
    Asymptotic entropy production of a ground-state sweep

    Entropy of a state with |P| = |1 - 2 p_LZ|; the absolute value covers the
    diabatic branch p_LZ > 1/2 (epsilon > pi / ln 2).
    """
    return float(entropy_of_norm(abs(1.0 - 2.0 * p_lz(epsilon))))


# ---------------------------------------------------------------------------
# Schedule types
# ---------------------------------------------------------------------------

class DriveSchedule(ABC):
    """
    A time-parameterized Hamiltonian field

    field() and derivative() accept a scalar (returning shape (3,)) or an array
    of times (returning shape (N, 3)). Instances are immutable after construction.
    """

    kind = "abstract"

    def __init__(self, label: str, span: Optional[Tuple[float, float]] = None):
        self.label = label
        self.span = span

    @abstractmethod
    def _field(self, t: np.ndarray) -> np.ndarray:
        """Field at a 1-D array of times, shape (N, 3)"""

    def _derivative(self, t: np.ndarray) -> Optional[np.ndarray]:
        """Analytic dh/dt at a 1-D array of times, or None if unavailable"""
        return None

    @property
    def has_derivative(self) -> bool:
        return self._derivative(np.zeros(1)) is not None

    def field(self, t):
        times = np.asarray(t, dtype=float)
        values = self._field(np.atleast_1d(times))
        return values[0] if times.ndim == 0 else values

    def derivative(self, t):
        """Analytic derivative if available, else a central finite difference"""
        times = np.asarray(t, dtype=float)
        flat = np.atleast_1d(times)
        values = self._derivative(flat)
        if values is None:
            step = 1e-5 * np.maximum(1.0, np.abs(flat))
            values = (self._field(flat + step) - self._field(flat - step)) / (2.0 * step)[:, None]
        return values[0] if times.ndim == 0 else values

    def vector(self, t: float) -> BlochVector:
        return BlochVector.from_array(self.field(float(t)))

    def check_span(self, span: Tuple[float, float]):
        """Raise DomainError if span leaves the declared validity interval"""
        if self.span is None:
            return
        lo, hi = sorted(span)
        if lo < self.span[0] - 1e-12 or hi > self.span[1] + 1e-12:
            raise DomainError(f"Span [{lo}, {hi}] outside validity [{self.span[0]}, {self.span[1]}] of {self.label}")

    def params(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'label': self.label}

    def is_static(self) -> bool:
        return False

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.label})"


class LandauZenerSchedule(DriveSchedule):
    """Linear sweep h(t) = (2, 0, 2 epsilon t) with exact derivative (0, 0, 2 epsilon)"""

    kind = "landau_zener"

    def __init__(self, epsilon: float):
        if not (math.isfinite(epsilon) and epsilon > 0):
            raise DomainError(f"epsilon must be > 0, got {epsilon}")
        super().__init__(f"landau_zener(epsilon={epsilon:g})")
        self.epsilon = float(epsilon)

    def _field(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros((t.size, 3))
        out[:, 0] = 2.0
        out[:, 2] = 2.0 * self.epsilon * t
        return out

    def _derivative(self, t: np.ndarray) -> np.ndarray:
        out = np.zeros((t.size, 3))
        out[:, 2] = 2.0 * self.epsilon
        return out

    def params(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'label': self.label, 'epsilon': self.epsilon}


class ConstantSchedule(DriveSchedule):
    """Static field h(t) = h0"""

    kind = "constant"

    def __init__(self, h):
        h0 = np.asarray(h.as_array() if isinstance(h, BlochVector) else h, dtype=float).reshape(3)
        if not np.all(np.isfinite(h0)):
            raise DomainError("Constant field must be finite")
        super().__init__(f"constant({h0[0]:g}, {h0[1]:g}, {h0[2]:g})")
        self.h0 = h0

    def _field(self, t: np.ndarray) -> np.ndarray:
        return np.tile(self.h0, (t.size, 1))

    def _derivative(self, t: np.ndarray) -> np.ndarray:
        return np.zeros((t.size, 3))

    def params(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'label': self.label, 'field': self.h0.tolist()}

    def is_static(self) -> bool:
        return True


class TabulatedSchedule(DriveSchedule):
    """User samples of h(t) joined by a cubic spline; valid on the sample span only"""

    kind = "tabulated"

    def __init__(self, times: Sequence[float], fields: np.ndarray, label: str = "tabulated"):
        t = np.asarray(times, dtype=float)
        h = np.asarray(fields, dtype=float)
        if t.ndim != 1 or t.size < 4:
            raise DomainError("A tabulated schedule needs at least four samples")
        if h.shape != (t.size, 3):
            raise DomainError(f"Field table must have shape ({t.size}, 3), got {h.shape}")
        if np.any(np.diff(t) <= 0):
            raise DomainError("Tabulated times must be strictly increasing")
        if not np.all(np.isfinite(h)):
            raise DomainError("Tabulated fields must be finite")
        super().__init__(label, span=(float(t[0]), float(t[-1])))
        self._spline = CubicSpline(t, h, axis=0)
        self._spline_derivative = self._spline.derivative()
        self.sample_count = t.size

    @classmethod
    def from_csv(cls, filepath: str) -> 'TabulatedSchedule':
        """Load a table with columns t, hx, hy, hz"""
        from utils.export import read_csv
        _, header, table = read_csv(filepath)
        if [h.strip() for h in header] != ['t', 'hx', 'hy', 'hz']:
            raise ConfigurationError(f"{filepath}: expected columns t, hx, hy, hz, got {header}")
        logger.info(f"Loaded tabulated schedule with {len(table)} samples from {filepath}")
        return cls(table[:, 0], table[:, 1:4], label=os.path.basename(filepath))

    def _field(self, t: np.ndarray) -> np.ndarray:
        return self._spline(t)

    def _derivative(self, t: np.ndarray) -> np.ndarray:
        return self._spline_derivative(t)

    def params(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'label': self.label, 'samples': self.sample_count,
                'span': list(self.span)}


class TimeReversedSchedule(DriveSchedule):
    """
    h_r(s) = -h(-s)

    Integrating dP/ds = h_r(s) x P forward from s = -t_f to s = -t_i runs the
    original dynamics backwards from t_f to t_i.
    """

    kind = "time_reversed"

    def __init__(self, base: DriveSchedule):
        span = None if base.span is None else (-base.span[1], -base.span[0])
        super().__init__(f"reversed({base.label})", span=span)
        self.base = base

    def _field(self, t: np.ndarray) -> np.ndarray:
        return -self.base.field(-t)

    def _derivative(self, t: np.ndarray) -> Optional[np.ndarray]:
        return self.base._derivative(-t)

    def params(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'label': self.label, 'base': self.base.params()}

    def is_static(self) -> bool:
        return self.base.is_static()


# ---------------------------------------------------------------------------
# Registry and checks
# ---------------------------------------------------------------------------

SCHEDULE_REGISTRY: Dict[str, Callable[[Any], DriveSchedule]] = {
    'landau_zener': lambda s: LandauZenerSchedule(s.epsilon),
    'constant': lambda s: ConstantSchedule(s.static_field),
    'tabulated': lambda s: TabulatedSchedule.from_csv(s.table),
}


def register_schedule(kind: str, builder: Callable[[Any], DriveSchedule]):
    """Make a schedule kind available to build_schedule"""
    if kind in SCHEDULE_REGISTRY:
        logger.warning(f"Replacing schedule builder for kind '{kind}'")
    SCHEDULE_REGISTRY[kind] = builder


def build_schedule(settings) -> DriveSchedule:
    """
    Build the drive schedule described by a [schedule] settings section

    Args:
        settings: LZSettings (kind, epsilon, static_field, table)

    Returns:
        DriveSchedule instance
    """
    builder = SCHEDULE_REGISTRY.get(settings.kind)
    if builder is None:
        raise ConfigurationError(f"Unknown schedule kind '{settings.kind}'; "
                                 f"available: {sorted(SCHEDULE_REGISTRY)}")
    schedule = builder(settings)
    schedule.check_span((settings.t_start, settings.t_end))
    logger.debug(f"Built schedule {schedule.label}")
    return schedule


def check_derivative(schedule: DriveSchedule, span: Tuple[float, float], samples: int = 201) -> float:
    """
    Maximum relative deviation between the analytic derivative and central differences

    Returns 0.0 when the schedule has no analytic derivative (nothing to compare).
    """
    if not schedule.has_derivative:
        return 0.0
    step = 1e-4 * max(1.0, abs(span[0]), abs(span[1]))
    t = np.linspace(span[0] + step, span[1] - step, samples)
    numeric = (schedule.field(t + step) - schedule.field(t - step)) / (2.0 * step)
    analytic = schedule.derivative(t)
    scale = max(float(np.max(np.linalg.norm(analytic, axis=1))), 1e-300)
    deviation = np.linalg.norm(analytic - numeric, axis=1) / np.maximum(np.linalg.norm(analytic, axis=1), scale * 1e-3)
    return float(np.max(deviation))
