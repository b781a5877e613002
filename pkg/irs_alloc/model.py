"""
System model of an IRS-assisted multiuser MISO downlink with discrete phases.

A base station with M antennas serves K single-antenna users through a direct
link d_k and a cascaded link via an IRS of N passive elements. Each element
picks one of L = 2^B_bits phases, encoded as a one-hot column of the selection
matrix B (L x (N+1)) whose last column is fixed to the first basis vector, so
that the reflection vector is v = B^T theta with v_{N+1} = 1.

Stored channels are the un-conjugated vectors; every formula applies the
conjugate transpose explicitly:

    y_k = (h_k^H Phi F + d_k^H) sum_j w_j s_j + n_k
        = v^T H_k Fhat_k sum_j w_j s_j + n_k

with Fhat_k = [F^H, d_k]^H and H_k = diag([h_k^H, 1]).
"""
import logging
from itertools import product
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

### UNIT INFO
WATT_TO_MW = 1000.0


def db_to_linear(value_db):
    """Converts decibels to a linear ratio (scalar or array)."""
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def dbm_to_watts(value_dbm):
    return db_to_linear(value_dbm) / WATT_TO_MW


def watts_to_dbm(power_watts: float) -> float:
    """Returns 10*log10(P * 1000); zero power maps to -inf."""
    if power_watts <= 0.0:
        return float('-inf')
    return float(10.0 * np.log10(power_watts * WATT_TO_MW))


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """
    System dimensions and QoS targets.

    Attributes:
        M: Number of BS antennas.
        K: Number of users.
        N: Number of IRS elements (0 means no IRS).
        B_bits: Phase resolution in bits, L = 2**B_bits.
        gamma: Minimum SINR per user (linear). Zero switches the requirement off.
        sigma2: Noise power per user in watts.
    """
    M: int
    K: int
    N: int
    B_bits: int
    gamma: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        for name, low in (('M', 1), ('K', 1), ('N', 0), ('B_bits', 1)):
            value = getattr(self, name)
            if int(value) != value or value < low:
                raise ValueError(f"{name} must be an integer >= {low}, got {value}")
        gamma = np.broadcast_to(np.asarray(self.gamma, dtype=float), (self.K,))
        sigma2 = np.broadcast_to(np.asarray(self.sigma2, dtype=float), (self.K,))
        if np.any(~np.isfinite(gamma)) or np.any(gamma < 0):
            raise ValueError(f"gamma must be finite and nonnegative, got {gamma}")
        if np.any(~np.isfinite(sigma2)) or np.any(sigma2 <= 0):
            raise ValueError(f"sigma2 must be finite and positive, got {sigma2}")
        object.__setattr__(self, 'gamma', _frozen_array(gamma))
        object.__setattr__(self, 'sigma2', _frozen_array(sigma2))

    @property
    def L(self) -> int:
        return 2 ** self.B_bits

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.sigma2)

    @classmethod
    def from_db(cls, M: int, K: int, N: int, B_bits: int,
                gamma_db, sigma2_dbm) -> 'ScenarioConfig':
        """Builds a config from SINR targets in dB and noise powers in dBm."""
        return cls(M=M, K=K, N=N, B_bits=B_bits,
                   gamma=db_to_linear(gamma_db), sigma2=dbm_to_watts(sigma2_dbm))

    @classmethod
    def from_dict(cls, data: dict) -> 'ScenarioConfig':
        data = dict(data)
        if 'gamma_db' in data or 'sigma2_dbm' in data:
            return cls.from_db(int(data['M']), int(data['K']), int(data['N']), int(data['B_bits']),
                               data.get('gamma_db', 0.0), data.get('sigma2_dbm', -90.0))
        return cls(M=int(data['M']), K=int(data['K']), N=int(data['N']), B_bits=int(data['B_bits']),
                   gamma=data['gamma'], sigma2=data['sigma2'])

    def to_dict(self) -> dict:
        return {'M': self.M, 'K': self.K, 'N': self.N, 'B_bits': self.B_bits,
                'gamma': self.gamma.tolist(), 'sigma2': self.sigma2.tolist()}

    def with_changes(self, **changes) -> 'ScenarioConfig':
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """
    Propagation matrices of one scenario.

    Attributes:
        F: BS to IRS channel, N x M.
        h: IRS to user channels, K x N (row k is h_k, un-conjugated).
        d: BS to user direct channels, K x M (row k is d_k, un-conjugated).
    """
    F: np.ndarray
    h: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        F = np.array(self.F, dtype=complex)
        d = np.array(self.d, dtype=complex)
        if d.ndim != 2:
            raise ValueError(f"d must be K x M, got shape {d.shape}")
        K, M = d.shape
        if F.size == 0:
            F = F.reshape(0, M)
        h = np.array(self.h, dtype=complex).reshape(K, F.shape[0])
        if F.ndim != 2 or F.shape[1] != M:
            raise ValueError(f"F must be N x {M}, got shape {F.shape}")
        for name, arr in (('F', F), ('h', h), ('d', d)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"channel {name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def M(self) -> int:
        return self.d.shape[1]

    @property
    def K(self) -> int:
        return self.d.shape[0]

    @property
    def N(self) -> int:
        return self.F.shape[0]

    def Fhat(self, k: int) -> np.ndarray:
        """[F^H, d_k]^H, shape (N+1) x M."""
        return np.vstack([self.F, self.d[k].conj()[None, :]])

    def H(self, k: int) -> np.ndarray:
        """diag([h_k^H, 1]), shape (N+1) x (N+1)."""
        return np.diag(np.append(self.h[k].conj(), 1.0))

    def cascade(self, k: int) -> np.ndarray:
        """H_k Fhat_k, the per-element effective channel rows of user k."""
        return np.vstack([self.h[k].conj()[:, None] * self.F, self.d[k].conj()[None, :]])

    def without_irs(self) -> 'ChannelSet':
        """Drops the reflected path, leaving only the direct links."""
        return ChannelSet(F=np.zeros((0, self.M), dtype=complex), h=np.zeros((self.K, 0)), d=self.d)

    def check(self, cfg: ScenarioConfig):
        if (self.M, self.K, self.N) != (cfg.M, cfg.K, cfg.N):
            raise ValueError(f"channel dims (M={self.M}, K={self.K}, N={self.N}) do not match "
                             f"config (M={cfg.M}, K={cfg.K}, N={cfg.N})")


@dataclass(frozen=True)
class PhaseSelection:
    """
    Discrete IRS configuration as an index vector over the phase alphabet.

    Attributes:
        idx: Length-N tuple of phase indices in [0, L-1].
        L: Alphabet size.
    """
    idx: Tuple[int, ...]
    L: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.idx)
        if self.L < 1:
            raise ValueError(f"alphabet size must be >= 1, got {self.L}")
        for n, i in enumerate(idx):
            if not 0 <= i < self.L:
                raise ValueError(f"phase index {i} of element {n} outside [0, {self.L - 1}]")
        object.__setattr__(self, 'idx', idx)

    @property
    def N(self) -> int:
        return len(self.idx)

    @property
    def B(self) -> np.ndarray:
        """Binary selection matrix, L x (N+1), last column e_1."""
        B = np.zeros((self.L, self.N + 1))
        B[list(self.idx), np.arange(self.N)] = 1.0
        B[0, self.N] = 1.0
        return B

    @classmethod
    def from_matrix(cls, B: np.ndarray, fixed_column: bool = True, tol: float = 1e-9) -> 'PhaseSelection':
        """
        Reads a one-hot selection matrix back into an index vector.

        Args:
            B: L x (N+1) matrix, or L x N when fixed_column is False.
            fixed_column: Whether the last column is the constant e_1.
            tol: Distance from {0, 1} accepted as binary.
        """
        B = np.asarray(B, dtype=float)
        L = B.shape[0]
        body = B
        if fixed_column:
            if B.shape[1] < 1 or not np.allclose(B[:, -1], np.eye(L)[0], atol=tol):
                raise ValueError("last column of the selection matrix must be e_1")
            body = B[:, :-1]
        if np.any(np.minimum(np.abs(body), np.abs(1.0 - body)) > tol) \
                or np.any(np.abs(body.sum(axis=0) - 1.0) > tol):
            raise ValueError("selection matrix is not one-hot per column")
        return cls(idx=tuple(int(i) for i in np.argmax(body, axis=0)), L=L)

    @classmethod
    def first(cls, N: int, L: int) -> 'PhaseSelection':
        return cls(idx=(0,) * N, L=L)

    @classmethod
    def random(cls, N: int, L: int, rng: np.random.Generator) -> 'PhaseSelection':
        return cls(idx=tuple(int(i) for i in rng.integers(0, L, size=N)), L=L)

    def refine(self, factor: int = 2) -> 'PhaseSelection':
        """Maps the selection onto the alphabet of size factor*L (index l -> factor*l)."""
        if factor < 1:
            raise ValueError(f"refinement factor must be >= 1, got {factor}")
        return PhaseSelection(idx=tuple(factor * i for i in self.idx), L=factor * self.L)


@dataclass(frozen=True, eq=False)
class Beamformer:
    """Linear precoder W = [w_1, ..., w_K], M x K."""
    W: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=complex)
        if W.ndim != 2:
            raise ValueError(f"beamformer must be M x K, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("beamformer has non-finite entries")
        W.setflags(write=False)
        object.__setattr__(self, 'W', W)

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.W) ** 2))

    def scaled(self, factor: float) -> 'Beamformer':
        return Beamformer(self.W * factor)


@dataclass(frozen=True, eq=False)
class QosReport:
    ok: bool
    slack: np.ndarray
    sinr: np.ndarray


def phase_alphabet(L: int) -> np.ndarray:
    """
    Discrete phase alphabet theta_l = exp(j 2 pi l / L).

    Args:
        L: Alphabet size, >= 1.

    Returns:
        Complex vector of length L.
    """
    if int(L) != L or L < 1:
        raise ValueError(f"alphabet size must be a positive integer, got {L}")
    theta = np.exp(2j * np.pi * (np.arange(L) / L))
    # exact values at quarter turns keep the alphabet nesting bit-exact
    theta.real[np.abs(theta.real) < 1e-15] = 0.0
    theta.imag[np.abs(theta.imag) < 1e-15] = 0.0
    return theta


def reflection_vector(sel: PhaseSelection, L: Optional[int] = None) -> np.ndarray:
    """Returns v = B^T theta, length N+1 with v_{N+1} = 1."""
    if L is not None and L != sel.L:
        raise ValueError(f"selection alphabet {sel.L} does not match L={L}")
    theta = phase_alphabet(sel.L)
    return np.append(theta[list(sel.idx)], 1.0 + 0j)


def relaxed_reflection(B: np.ndarray) -> np.ndarray:
    """B^T theta for a (possibly fractional) L x (N+1) selection matrix."""
    B = np.asarray(B, dtype=float)
    return B.T @ phase_alphabet(B.shape[0])


def effective_channels(v: np.ndarray, ch: ChannelSet) -> np.ndarray:
    """Rows g_k = v^T H_k Fhat_k, shape K x M."""
    v = np.asarray(v, dtype=complex)
    if v.shape != (ch.N + 1,):
        raise ValueError(f"reflection vector must have length {ch.N + 1}, got {v.shape}")
    return np.stack([v @ ch.cascade(k) for k in range(ch.K)])


def sinr_from_effective(G: np.ndarray, W: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """SINR per user from effective channel rows G (K x M) and W (M x K)."""
    gains = np.abs(G @ W) ** 2
    signal = np.diag(gains)
    interference = gains.sum(axis=1) - signal
    return signal / (interference + sigma2)


def sinr_per_user(W: Beamformer, sel: PhaseSelection, ch: ChannelSet,
                  cfg: ScenarioConfig) -> np.ndarray:
    """
    Computes SINR_k = |v^T H_k Fhat_k w_k|^2 / (sum_{j != k} |v^T H_k Fhat_k w_j|^2 + sigma_k^2).

    Args:
        W: Beamformer, M x K.
        sel: Phase selection, length N.
        ch: Channels.
        cfg: Scenario config.

    Returns:
        Real vector of length K.
    """
    ch.check(cfg)
    if W.W.shape != (cfg.M, cfg.K):
        raise ValueError(f"beamformer shape {W.W.shape} does not match (M, K)=({cfg.M}, {cfg.K})")
    if sel.N != cfg.N or sel.L != cfg.L:
        raise ValueError(f"selection (N={sel.N}, L={sel.L}) does not match config (N={cfg.N}, L={cfg.L})")
    G = effective_channels(reflection_vector(sel), ch)
    return sinr_from_effective(G, W.W, cfg.sigma2)


def verify_qos(W: Beamformer, sel: PhaseSelection, ch: ChannelSet, cfg: ScenarioConfig,
               tol: float = 1e-6) -> QosReport:
    """
    Checks SINR_k >= gamma_k (1 - tol) for every user.

    Returns:
        QosReport with the per-user slack SINR_k / gamma_k - 1 (inf for users
        without a requirement).
    """
    if tol < 0:
        raise ValueError(f"tolerance must be nonnegative, got {tol}")
    sinr = sinr_per_user(W, sel, ch, cfg)
    with np.errstate(divide='ignore', invalid='ignore'):
        slack = np.where(cfg.gamma > 0, sinr / np.where(cfg.gamma > 0, cfg.gamma, 1.0) - 1.0, np.inf)
    ok = bool(np.all(sinr >= cfg.gamma * (1.0 - tol)))
    return QosReport(ok=ok, slack=slack, sinr=sinr)


@dataclass(frozen=True, eq=False)
class Conditioning:
    """
    Record of the desk-unit transform applied before solving.

    Internal beamformers relate to physical ones by w = sqrt(power_scale) * w_int
    and internal noise is 1 for every user.
    """
    power_scale: float
    user_gain: np.ndarray = field(default_factory=lambda: np.ones(0))
    balance: float = 1.0

    def to_watts(self, power_internal: float) -> float:
        return float(power_internal * self.power_scale)

    def beamformer(self, W_internal: np.ndarray) -> Beamformer:
        return Beamformer(np.asarray(W_internal) * np.sqrt(self.power_scale))


def reference_power(ch: ChannelSet, cfg: ScenarioConfig) -> float:
    """
    Matched-filter power of the all-first-phase configuration, ignoring interference.

    Used only as a unit of power; falls back to 1 W when no user has a requirement.
    """
    G = effective_channels(np.ones(ch.N + 1, dtype=complex), ch)
    gains = np.sum(np.abs(G) ** 2, axis=1)
    gains = np.where(gains > 0, gains, np.max(gains, initial=0.0))
    if not np.any(gains > 0) or not np.any(cfg.gamma > 0):
        return 1.0
    return float(np.sum(cfg.gamma * cfg.sigma2 / gains))


def condition(ch: ChannelSet, cfg: ScenarioConfig) -> Tuple[ChannelSet, ScenarioConfig, Conditioning]:
    """
    Rescales a scenario into internal units (unit noise, unit reference power).

    SINR is unchanged for w_int = w / sqrt(P_ref), so the optimal phase
    configuration is too. The BS-IRS and IRS-user links are balanced by a common
    real factor that cancels in the cascade.
    """
    ch.check(cfg)
    p_ref = reference_power(ch, cfg)
    gain = np.sqrt(p_ref) / cfg.sigma
    h = ch.h * gain[:, None]
    d = ch.d * gain[:, None]
    balance = 1.0
    if ch.N > 0:
        h_rms = np.sqrt(np.mean(np.abs(h) ** 2))
        f_rms = np.sqrt(np.mean(np.abs(ch.F) ** 2))
        if h_rms > 0 and f_rms > 0:
            balance = float(np.sqrt(h_rms / f_rms))
    scaled = ChannelSet(F=ch.F * balance, h=h / balance, d=d)
    internal = replace(cfg, sigma2=np.ones(cfg.K))
    logger.debug(f"[condition] P_ref={p_ref:.3e} W, balance={balance:.3e}")
    return scaled, internal, Conditioning(power_scale=p_ref, user_gain=gain, balance=balance)


def selections(N: int, L: int) -> Iterable[PhaseSelection]:
    """All L**N selections in lexicographic index order."""
    for idx in product(range(L), repeat=N):
        yield PhaseSelection(idx=idx, L=L)


def matched_filter_power(sel: PhaseSelection, ch: ChannelSet, cfg: ScenarioConfig) -> float:
    """Single-user closed form gamma sigma^2 / ||g(B)||^2."""
    if cfg.K != 1:
        raise ValueError("matched-filter closed form needs K=1")
    g = effective_channels(reflection_vector(sel), ch)[0]
    gain = float(np.sum(np.abs(g) ** 2))
    if cfg.gamma[0] == 0:
        return 0.0
    return float(cfg.gamma[0] * cfg.sigma2[0] / gain) if gain > 0 else float('inf')


__all__: List[str] = [
    'ScenarioConfig', 'ChannelSet', 'PhaseSelection', 'Beamformer', 'QosReport', 'Conditioning',
    'phase_alphabet', 'reflection_vector', 'relaxed_reflection', 'effective_channels',
    'sinr_from_effective', 'sinr_per_user', 'verify_qos', 'condition', 'reference_power',
    'selections', 'matched_filter_power', 'db_to_linear', 'dbm_to_watts', 'watts_to_dbm',
]
