"""
Random propagation scenarios for the IRS-assisted downlink.

The BS sits at the origin and the IRS at (D, 0). Users lie on a circle of
radius r around the IRS; user angles are measured at the IRS from the ray
pointing back to the BS. BS-IRS and IRS-user links are Rician with a
uniform-linear-array LoS part, direct BS-user links are Rayleigh:

    F   = sqrt(L0 D^-a_BI)  (sqrt(b/(1+b)) F_L + sqrt(1/(1+b)) F_N)
    h_k = sqrt(L0 r^-a_IU)  (sqrt(b/(1+b)) a_N(phi_k) + sqrt(1/(1+b)) h_N)
    d_k = sqrt(L0 dist_k^-a_d) d_N,   dist_k^2 = D^2 + r^2 - 2 D r cos(phi_k)

Random draws happen in a fixed order (F_N, then h_N per user, then d_N per
user) from numpy's default generator seeded by the caller, so (cfg, geo, seed)
determines the scenario.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from irs_alloc.model import ChannelSet, ScenarioConfig

logger = logging.getLogger(__name__)

### GEOMETRY INFO
DEFAULT_D = 40.0
DEFAULT_R = 5.0
DEFAULT_L0 = 1e-3
DEFAULT_ALPHA_BI = 2.2
DEFAULT_ALPHA_IU = 2.8
DEFAULT_ALPHA_D = 4.0
DEFAULT_BETA = 1.0


def default_user_angles(K: int) -> Tuple[float, ...]:
    """K angles equally spaced on the half-circle facing the BS."""
    return tuple(float(-np.pi / 2 + np.pi * (k + 0.5) / K) for k in range(K))


def ula_response(n: int, angle: float) -> np.ndarray:
    """Half-wavelength uniform linear array response exp(j pi i sin(angle)), i = 0..n-1."""
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@dataclass(frozen=True)
class GeometryConfig:
    """
    Deployment geometry and propagation constants.

    Attributes:
        D: BS-IRS distance in meters.
        r: Radius of the user circle around the IRS in meters.
        user_angles: Per-user angles in radians; None spreads users evenly.
        L0: Path loss at the 1 m reference distance (linear).
        alpha_BI, alpha_IU, alpha_d: Path-loss exponents of the BS-IRS, IRS-user and BS-user links.
        beta_BI, beta_IU: Rician factors of the BS-IRS and IRS-user links.
    """
    D: float = DEFAULT_D
    r: float = DEFAULT_R
    user_angles: Optional[Tuple[float, ...]] = None
    L0: float = DEFAULT_L0
    alpha_BI: float = DEFAULT_ALPHA_BI
    alpha_IU: float = DEFAULT_ALPHA_IU
    alpha_d: float = DEFAULT_ALPHA_D
    beta_BI: float = DEFAULT_BETA
    beta_IU: float = DEFAULT_BETA

    def __post_init__(self):
        if self.D <= 0 or self.r <= 0:
            raise ValueError(f"distances must be positive, got D={self.D}, r={self.r}")
        if self.L0 <= 0:
            raise ValueError(f"reference path loss must be positive, got {self.L0}")
        for name in ('alpha_BI', 'alpha_IU', 'alpha_d'):
            if getattr(self, name) < 2:
                raise ValueError(f"path-loss exponent {name} must be >= 2, got {getattr(self, name)}")
        for name in ('beta_BI', 'beta_IU'):
            if getattr(self, name) < 0:
                raise ValueError(f"Rician factor {name} must be >= 0, got {getattr(self, name)}")
        if self.user_angles is not None:
            object.__setattr__(self, 'user_angles', tuple(float(a) for a in self.user_angles))

    def angles(self, K: int) -> Tuple[float, ...]:
        if self.user_angles is None:
            return default_user_angles(K)
        if len(self.user_angles) != K:
            raise ValueError(f"geometry has {len(self.user_angles)} user angles for K={K} users")
        return self.user_angles

    def user_distance(self, angle: float) -> float:
        """BS-user straight-line distance for a user at `angle` on the circle."""
        return float(np.sqrt(self.D ** 2 + self.r ** 2 - 2.0 * self.D * self.r * np.cos(angle)))

    @classmethod
    def from_dict(cls, data: dict) -> 'GeometryConfig':
        data = dict(data or {})
        if data.get('user_angles') is not None:
            data['user_angles'] = tuple(data['user_angles'])
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out['user_angles'] = list(self.user_angles) if self.user_angles is not None else None
        return out

    def assumptions(self, K: int) -> dict:
        """Modelling choices not fixed by the channel model, written into scenario metadata."""
        return {
            'user_angles': list(self.angles(K)),
            'user_angles_default': self.user_angles is None,
            'array': 'half-wavelength ULA at BS and IRS, BS-IRS boresight 0 rad',
            'L0': self.L0,
            'direct_distance': 'law of cosines from D, r and the user angle',
        }


def _rician(rng: np.random.Generator, los: np.ndarray, beta: float) -> np.ndarray:
    nlos = complex_gaussian(rng, los.shape)
    if np.isinf(beta):
        return los
    return np.sqrt(beta / (1.0 + beta)) * los + np.sqrt(1.0 / (1.0 + beta)) * nlos


def gen_scenario(cfg: ScenarioConfig, geo: GeometryConfig, seed: int) -> ChannelSet:
    """
    Draws one channel realization.

    Args:
        cfg: Scenario dimensions.
        geo: Geometry and propagation constants.
        seed: Seed of numpy's default generator.

    Returns:
        ChannelSet with F (N x M), h (K x N) and d (K x M).
    """
    rng = np.random.default_rng(seed)
    angles = geo.angles(cfg.K)
    F_L = np.outer(ula_response(cfg.N, 0.0), ula_response(cfg.M, 0.0).conj())
    F = np.sqrt(geo.L0 * geo.D ** -geo.alpha_BI) * _rician(rng, F_L, geo.beta_BI)
    h = np.zeros((cfg.K, cfg.N), dtype=complex)
    for k, angle in enumerate(angles):
        h[k] = np.sqrt(geo.L0 * geo.r ** -geo.alpha_IU) * _rician(rng, ula_response(cfg.N, angle), geo.beta_IU)
    d = np.zeros((cfg.K, cfg.M), dtype=complex)
    for k, angle in enumerate(angles):
        dist = geo.user_distance(angle)
        d[k] = np.sqrt(geo.L0 * dist ** -geo.alpha_d) * complex_gaussian(rng, cfg.M)
    logger.debug(f"[gen {seed}] M={cfg.M} K={cfg.K} N={cfg.N} |F|={np.linalg.norm(F):.3e} "
                 f"|h|={np.linalg.norm(h):.3e} |d|={np.linalg.norm(d):.3e}")
    return ChannelSet(F=F, h=h, d=d)


@dataclass(frozen=True)
class CsiErrorSpec:
    """
    Norm-bounded CSI error level.

    kappa is the maximum normalized estimation error eps_k / ||Hbar_k||_F. The
    per-user radii eps_E, eps_d and eps = sqrt(eps_E^2 + eps_d^2) follow from
    the estimates, see estimate_with_error.
    """
    kappa: float = 0.0
    interior: bool = True

    def __post_init__(self):
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa}")
        if self.kappa >= 1:
            raise ValueError("kappa must be < 1: the error norm t = kappa ||truth - t e|| is solved in closed form, "
                             f"which has no unique positive root once kappa >= 1 (got {self.kappa})")

    def radii(self, Ebar: np.ndarray, dbar: np.ndarray) -> Tuple[float, float, float]:
        eps_E = self.kappa * float(np.linalg.norm(Ebar))
        eps_d = self.kappa * float(np.linalg.norm(dbar))
        return eps_E, eps_d, float(np.hypot(eps_E, eps_d))


def _draw_error(rng: np.random.Generator, truth: np.ndarray, kappa: float, interior: bool) -> np.ndarray:
    """
    Error Delta with truth - Delta = estimate and ||Delta|| = u kappa ||estimate||.

    The norm t of Delta = t e solves t = u kappa ||truth - t e|| in closed form.
    """
    direction = complex_gaussian(rng, truth.shape)
    norm = np.linalg.norm(direction)
    u = rng.uniform() if interior else 1.0
    if kappa == 0 or truth.size == 0 or norm == 0:
        return np.zeros_like(truth)
    e = direction / norm
    c = u * kappa
    proj = float(np.real(np.vdot(e, truth)))
    energy = float(np.linalg.norm(truth) ** 2)
    disc = c ** 4 * proj ** 2 + (1.0 - c ** 2) * c ** 2 * energy
    t = (-c ** 2 * proj + np.sqrt(max(disc, 0.0))) / (1.0 - c ** 2)
    return t * e


def estimate_with_error(ch: ChannelSet, spec: CsiErrorSpec, seed: int,
                        cfg: Optional[ScenarioConfig] = None):
    """
    Turns true channels into norm-bounded estimates.

    The cascade E_k = diag(h_k^H) F and the direct link d_k are perturbed as
    Ebar_k = E_k - DeltaE_k, dbar_k = d_k - Delta d_k, where each error points in a
    uniformly random direction and has norm u * kappa * ||estimate|| with u
    uniform in [0, 1] (interior sampling) or u = 1.

    Args:
        ch: True channels.
        spec: Error level.
        seed: Seed of numpy's default generator.
        cfg: Optional config used only to validate dimensions.

    Returns:
        RobustInstance with radii eps_E = kappa ||Ebar_k||, eps_d = kappa ||dbar_k||.
    """
    from irs_alloc.robust import RobustInstance

    if cfg is not None:
        ch.check(cfg)
    rng = np.random.default_rng(seed)
    Ebar = np.zeros((ch.K, ch.N, ch.M), dtype=complex)
    dbar = np.zeros((ch.K, ch.M), dtype=complex)
    eps_E = np.zeros(ch.K)
    eps_d = np.zeros(ch.K)
    for k in range(ch.K):
        E_true = ch.h[k].conj()[:, None] * ch.F
        dE = _draw_error(rng, E_true, spec.kappa, spec.interior)
        dd = _draw_error(rng, ch.d[k], spec.kappa, spec.interior)
        Ebar[k] = E_true - dE
        dbar[k] = ch.d[k] - dd
        eps_E[k], eps_d[k], _ = spec.radii(Ebar[k], dbar[k])
    logger.debug(f"[estimate {seed}] kappa={spec.kappa} eps={np.hypot(eps_E, eps_d)}")
    return RobustInstance(Ebar=Ebar, dbar=dbar, eps_E=eps_E, eps_d=eps_d)


__all__ = ['GeometryConfig', 'CsiErrorSpec', 'gen_scenario', 'estimate_with_error', 'ula_response',
           'default_user_angles', 'complex_gaussian']
