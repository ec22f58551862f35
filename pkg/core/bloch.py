"""
Bloch-vector state algebra for QubitThermo
Pauli decomposition, von Neumann entropy, equilibrium states, purity, fidelity and
relative entropy of a single qubit. Pure functions, no time evolution.

Every function accepts a BlochVector, a length-3 sequence, or an (N, 3) array of
vectors; array inputs are evaluated element-wise and return arrays.
"""

from utils.common_imports import *
from utils.logger import logger
from scipy.integrate import trapezoid
from scipy.special import entr


VectorLike = Union['BlochVector', Sequence[float], np.ndarray]


@dataclass(frozen=True)
class BlochVector:
    """Real 3-vector holding a polarization P or a Hamiltonian field H"""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise DomainError(f"Bloch vector components must be finite, got ({self.x}, {self.y}, {self.z})")

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'BlochVector':
        arr = np.asarray(values, dtype=float).reshape(3)
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def is_physical(self, tol: float = NORM_TOLERANCE) -> bool:
        """True if the vector is a valid qubit polarization (|P| <= 1)"""
        return self.norm <= 1.0 + tol

    def __iter__(self):
        return iter((self.x, self.y, self.z))


@dataclass(frozen=True)
class QubitState:
    """Trace component p0 plus polarization p: rho = (p0 + p . sigma) / 2"""

    p0: float
    p: BlochVector

    @classmethod
    def from_vector(cls, p: VectorLike, p0: float = 1.0) -> 'QubitState':
        if isinstance(p, BlochVector):
            return cls(p0, p)
        return cls(p0, BlochVector.from_array(p))

    def is_physical(self, tol: float = NORM_TOLERANCE) -> bool:
        return abs(self.p0 - 1.0) <= tol and self.p.norm <= 1.0 + tol

    def matrix(self) -> np.ndarray:
        return recompose(self)


@dataclass(frozen=True)
class ThermalParams:
    """Inverse temperature of a Gibbs state; negative beta means population inversion"""

    beta: float

    def __post_init__(self):
        if math.isnan(self.beta):
            raise DomainError("beta must be a number")


def as_vector(p: VectorLike) -> np.ndarray:
    """Coerce any vector-like input to a float array of shape (3,) or (N, 3)"""
    if isinstance(p, BlochVector):
        return p.as_array()
    arr = np.asarray(p, dtype=float)
    if arr.shape[-1] != 3:
        raise DomainError(f"Expected 3-component vectors, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("Bloch vector components must be finite")
    return arr


def _norm(arr: np.ndarray) -> np.ndarray:
    return np.linalg.norm(arr, axis=-1)


def _scalar_or_array(values: np.ndarray):
    return float(values) if np.ndim(values) == 0 else values


def _check_physical_norm(r: np.ndarray, what: str = "polarization") -> np.ndarray:
    """Reject |P| > 1 + tol and clamp round-off overshoot back onto the sphere"""
    if np.any(r > 1.0 + NORM_TOLERANCE):
        raise DomainError(f"{what} norm {float(np.max(r)):.15g} exceeds 1")
    r = np.where(np.abs(r - 1.0) <= NORM_CLAMP, 1.0, r)
    return np.clip(r, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Pauli decomposition
# ---------------------------------------------------------------------------

def decompose(density: np.ndarray) -> QubitState:
    """
    Decompose a Hermitian 2x2 matrix as (P0 + P . sigma) / 2

    Args:
        density: complex 2x2 matrix

    Returns:
        QubitState with P0 = trace and P_k = Tr(M sigma_k)
    """
    m = np.asarray(density, dtype=complex)
    if m.shape != (2, 2):
        raise StateError(f"Expected a 2x2 matrix, got shape {m.shape}")

    anti = 0.5 * (m - m.conj().T)
    anti_norm = float(np.linalg.norm(anti))
    if anti_norm > HERMITIAN_TOLERANCE * max(1.0, float(np.linalg.norm(m))):
        raise StateError(f"Matrix is not Hermitian (anti-Hermitian norm {anti_norm:.3e})",
                         anti_hermitian_norm=anti_norm)

    p0 = float(np.real(np.trace(m)))
    components = [float(np.real(np.trace(m @ sigma))) for sigma in PAULIS]
    return QubitState(p0, BlochVector(*components))


def recompose(state: QubitState) -> np.ndarray:
    """Rebuild the 2x2 matrix (P0 + P . sigma) / 2"""
    px, py, pz = state.p
    return 0.5 * (state.p0 * IDENTITY_2 + px * PAULI_X + py * PAULI_Y + pz * PAULI_Z)


# ---------------------------------------------------------------------------
# Entropies and equilibrium states
# ---------------------------------------------------------------------------

def entropy_of_norm(r) -> Union[float, np.ndarray]:
    """Von Neumann entropy in nats of a qubit with polarization length r"""
    r = _check_physical_norm(np.asarray(r, dtype=float))
    values = entr(0.5 * (1.0 + r)) + entr(0.5 * (1.0 - r))
    return _scalar_or_array(values)


def entropy(p: VectorLike) -> Union[float, np.ndarray]:
    """
    Von Neumann entropy S(P) in nats; depends on |P| only

    Raises:
        DomainError: if |P| > 1 beyond tolerance
    """
    return entropy_of_norm(_norm(as_vector(p)))


def thermal_equilibrium(h: VectorLike, params: ThermalParams) -> BlochVector:
    """
    Gibbs equilibrium polarization P_eq = -tanh(beta |H| / 2) H_hat

    A zero field has no preferred axis; the result is the zero vector and the
    degeneracy is logged.
    """
    hv = as_vector(h)
    magnitude = float(np.linalg.norm(hv))
    if magnitude == 0.0:
        if params.beta != 0.0:
            logger.warning("thermal_equilibrium: zero Hamiltonian field, returning unpolarized state")
        return BlochVector(0.0, 0.0, 0.0)
    if params.beta == 0.0:
        return BlochVector(0.0, 0.0, 0.0)
    scale = -math.tanh(0.5 * params.beta * magnitude) / magnitude
    return BlochVector.from_array(scale * hv)


def equilibrium_projection(p: VectorLike, h: VectorLike) -> Union[BlochVector, np.ndarray]:
    """
    Coarse-grained equilibrium P_eq = (H_hat . P) H_hat

    The alignment factor s times |H_hat . P| is the signed scalar projection, so a
    state perpendicular to H maps to the zero vector.

    Raises:
        DomainError: if the field vanishes anywhere
    """
    pv = as_vector(p)
    hv = as_vector(h)
    magnitude = _norm(hv)
    if np.any(magnitude == 0.0):
        raise DomainError("Equilibrium is undefined for a zero Hamiltonian field")
    h_hat = hv / magnitude[..., None]
    projection = np.sum(h_hat * pv, axis=-1)
    result = projection[..., None] * h_hat
    if isinstance(p, BlochVector) or result.ndim == 1:
        return BlochVector.from_array(result)
    return result


def equilibrium_entropy(p: VectorLike, h: VectorLike) -> Union[float, np.ndarray]:
    """Entropy of the coarse-grained equilibrium state, S(|H_hat . P|)"""
    pv = as_vector(p)
    hv = as_vector(h)
    magnitude = _norm(hv)
    if np.any(magnitude == 0.0):
        raise DomainError("Equilibrium is undefined for a zero Hamiltonian field")
    projection = np.abs(np.sum(hv * pv, axis=-1)) / magnitude
    return entropy_of_norm(projection)


def eigenstate(h: VectorLike, sign: int = -1) -> BlochVector:
    """Pure state along sign * H_hat; sign = -1 is the ground state"""
    if sign not in (-1, 1):
        raise DomainError(f"sign must be +1 or -1, got {sign}")
    hv = as_vector(h)
    magnitude = float(np.linalg.norm(hv))
    if magnitude == 0.0:
        raise DomainError("A zero field has no eigenbasis")
    return BlochVector.from_array(sign * hv / magnitude)


def purity(state: QubitState) -> float:
    """Tr(rho^2) = (P0^2 + |P|^2) / 2"""
    return 0.5 * (state.p0 ** 2 + state.p.norm ** 2)


def purity_of(p: VectorLike) -> Union[float, np.ndarray]:
    """Purity of physical states given only their polarizations"""
    r = _norm(as_vector(p))
    return _scalar_or_array(0.5 * (1.0 + r * r))


# ---------------------------------------------------------------------------
# Distances between states
# ---------------------------------------------------------------------------

def _physical_vector(state: QubitState, label: str) -> np.ndarray:
    if abs(state.p0 - 1.0) > NORM_TOLERANCE:
        raise DomainError(f"{label}: trace P0 = {state.p0} is not 1")
    vec = state.p.as_array()
    r = float(np.linalg.norm(vec))
    if r > 1.0 + NORM_TOLERANCE:
        raise DomainError(f"{label}: |P| = {r:.15g} exceeds 1")
    if r > 1.0:
        vec = vec / r
    return vec


def fidelity_vectors(a: VectorLike, b: VectorLike) -> Union[float, np.ndarray]:
    """
    Uhlmann fidelity between physical qubit states given by their polarizations

    Closed form for qubits: F = (1 + a.b + sqrt((1 - |a|^2)(1 - |b|^2))) / 2.
    """
    av = as_vector(a)
    bv = as_vector(b)
    ra = _check_physical_norm(_norm(av))
    rb = _check_physical_norm(_norm(bv))
    overlap = np.sum(av * bv, axis=-1)
    mixed = np.sqrt(np.clip((1.0 - ra * ra) * (1.0 - rb * rb), 0.0, None))
    values = np.clip(0.5 * (1.0 + overlap + mixed), 0.0, 1.0)
    return _scalar_or_array(values)


def fidelity(a: QubitState, b: QubitState) -> float:
    """Fidelity (Tr sqrt(sqrt(rho) rho' sqrt(rho)))^2 between two physical qubit states"""
    return float(fidelity_vectors(_physical_vector(a, "fidelity(a)"), _physical_vector(b, "fidelity(b)")))


def relative_entropy_vectors(a: VectorLike, b: VectorLike) -> float:
    """
    Quantum relative entropy S(rho_a || rho_b) in nats for polarizations a, b

    If rho_b is pure and differs from rho_a, the support condition fails and the
    result is +inf; the violation is logged.
    """
    av = as_vector(a)
    bv = as_vector(b)
    ra = float(_check_physical_norm(np.linalg.norm(av)))
    rb = float(_check_physical_norm(np.linalg.norm(bv)))

    if rb >= 1.0:
        if np.allclose(av, bv, atol=1e-12, rtol=0.0):
            return 0.0
        logger.warning("relative_entropy: support of the first state is not contained in the second")
        return INF

    # Tr(rho_a log rho_b) = 1/2 log((1 - rb^2) / 4) + artanh(rb) (a . b_hat)
    cross = 0.5 * math.log(0.25 * (1.0 - rb * rb))
    if rb > 0.0:
        cross += math.atanh(rb) * float(np.dot(av, bv)) / rb
    value = -float(entropy_of_norm(ra)) - cross
    return max(value, 0.0)


def relative_entropy(a: QubitState, b: QubitState) -> float:
    """S(rho || rho') = Tr(rho log rho) - Tr(rho log rho')"""
    return relative_entropy_vectors(_physical_vector(a, "relative_entropy(a)"),
                                    _physical_vector(b, "relative_entropy(b)"))


def dissipated_entropy(p: VectorLike, h: VectorLike) -> Union[float, np.ndarray]:
    """
    Relative entropy between a state and its coarse-grained equilibrium

    For P_eq = (H_hat . P) H_hat this reduces to S(P_eq) - S(P), which is the
    entropy a rethermalization onto the equilibrium would produce.
    """
    pv = as_vector(p)
    s_state = entropy(pv)
    s_eq = equilibrium_entropy(pv, h)
    return _scalar_or_array(np.clip(np.asarray(s_eq) - np.asarray(s_state), 0.0, None))


# ---------------------------------------------------------------------------
# Time averages
# ---------------------------------------------------------------------------

def time_average(times: Sequence[float], states: np.ndarray, window: Tuple[float, float]) -> BlochVector:
    """
    Trapezoidal time average of a polarization series over [t_a, t_b]

    Only the stored samples inside the window are used.

    Raises:
        DomainError: if the window is empty or outside the trajectory
    """
    t = np.asarray(times, dtype=float)
    values = as_vector(states)
    t_a, t_b = float(window[0]), float(window[1])
    if not t_b > t_a:
        raise DomainError(f"Empty averaging window [{t_a}, {t_b}]")
    if t_a < t[0] - 1e-12 or t_b > t[-1] + 1e-12:
        raise DomainError(f"Window [{t_a}, {t_b}] lies outside the trajectory span [{t[0]}, {t[-1]}]")

    mask = (t >= t_a - 1e-12) & (t <= t_b + 1e-12)
    if np.count_nonzero(mask) < 2:
        raise DomainError(f"Window [{t_a}, {t_b}] contains fewer than two samples")

    t_w = t[mask]
    span = t_w[-1] - t_w[0]
    average = trapezoid(values[mask], t_w, axis=0) / span
    return BlochVector.from_array(average)
