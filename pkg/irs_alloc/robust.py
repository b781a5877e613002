"""
Robust design under norm-bounded CSI errors.

The cascaded channel of user k is estimated as a whole, Hbar_k = [Ebar_k; dbar_k^H]
((N+1) x M), with error radius eps_k in Frobenius norm. Writing the received
amplitude as g_k^H P w with

    g_k = conj(vec(H_k)),   P = I_M kron (B^T theta)     ((N+1)M x M),

the worst-case QoS over ||g_k - gbar_k|| <= eps_k becomes, by the
S-procedure, one LMI per user in Xhat_k = P W_k P^H and a multiplier q_k >= 0:

    [[q_k I - Xt_k,        -Xt_k gbar_k],
     [-gbar_k^H Xt_k, -q_k eps_k^2 - gamma_k sigma_k^2 - gbar_k^H Xt_k gbar_k]] >= 0,
    Xt_k = gamma_k sum_{j != k} Xhat_j - Xhat_k.

At a fixed selection Xhat_k is affine in W_k and the program is a plain SDP
with the rank of W_k relaxed. With a relaxed selection the product P W_k P^H is
lifted through two Schur-complement LMIs with trace budgets (Y_k = P W_k,
Xhat_k = P Y_k^H). A rank-one W_k is read back by its principal eigenpair.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from irs_alloc.affine import AffineExpr, ProgramBuilder, VariablePool, complex_stationarity, group_dual, \
    lagrangian_terms
from irs_alloc.conic import ConeProgram, ConicSolution, ConicStatus, ToleranceSet, solve
from irs_alloc.gbd import DEFAULT_DELTA, FixedResult, GbdResult, SubproblemOutcome, solve_fixed, solve_gbd
from irs_alloc.model import (Beamformer, Conditioning, PhaseSelection, ScenarioConfig, phase_alphabet,
                             reflection_vector, relaxed_reflection)
from irs_alloc.reform import FEASIBILITY_POWER_WEIGHT, Cut, CutKind, selection_cut
from irs_alloc.sca import (SCA_LIFT_SHARE, ScaCandidate, ScaConfig, ScaResult, ScaStatus, ScaStep, ScaTrace,
                           best_of_starts, binary_gap, dirichlet_start, round_selection, run_sca_loop, solve_relaxed)

logger = logging.getLogger(__name__)

### ROBUST INFO
RANK_RATIO_TOL = 1e-6
CERTIFICATE_TOL = 1e-7
DEFAULT_SAMPLES = 10000
GRADIENT_STEPS = 100
GRADIENT_STARTS = 4
C2A = "C2a"
C2C = "C2c"


def _user(tag: str, k: int) -> str:
    return f"{tag} user {k + 1}"


@dataclass(frozen=True, eq=False)
class RobustInstance:
    """
    Channel estimates and error radii.

    Attributes:
        Ebar: K x N x M estimated cascades diag(h_k^H) F.
        dbar: K x M estimated direct links (un-conjugated).
        eps_E: Radii of the cascade errors.
        eps_d: Radii of the direct-link errors.
    """
    Ebar: np.ndarray
    dbar: np.ndarray
    eps_E: np.ndarray
    eps_d: np.ndarray

    def __post_init__(self):
        dbar = np.array(self.dbar, dtype=complex)
        if dbar.ndim != 2:
            raise ValueError(f"dbar must be K x M, got shape {dbar.shape}")
        K, M = dbar.shape
        Ebar = np.array(self.Ebar, dtype=complex)
        if Ebar.size == 0:
            Ebar = Ebar.reshape(K, 0, M)
        if Ebar.ndim != 3 or Ebar.shape[0] != K or Ebar.shape[2] != M:
            raise ValueError(f"Ebar must be K x N x {M}, got shape {Ebar.shape}")
        eps_E = np.broadcast_to(np.asarray(self.eps_E, dtype=float), (K,)).copy()
        eps_d = np.broadcast_to(np.asarray(self.eps_d, dtype=float), (K,)).copy()
        if np.any(eps_E < 0) or np.any(eps_d < 0) or not np.all(np.isfinite(np.concatenate([eps_E, eps_d]))):
            raise ValueError("error radii must be finite and nonnegative")
        if not (np.all(np.isfinite(Ebar)) and np.all(np.isfinite(dbar))):
            raise ValueError("channel estimates have non-finite entries")
        for name, arr in (('Ebar', Ebar), ('dbar', dbar), ('eps_E', eps_E), ('eps_d', eps_d)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.dbar.shape[0]

    @property
    def M(self) -> int:
        return self.dbar.shape[1]

    @property
    def N(self) -> int:
        return self.Ebar.shape[1]

    @property
    def D(self) -> int:
        return (self.N + 1) * self.M

    @property
    def eps(self) -> np.ndarray:
        return np.hypot(self.eps_E, self.eps_d)

    def Hbar(self, k: int) -> np.ndarray:
        """[Ebar_k; dbar_k^H], (N+1) x M."""
        return np.vstack([self.Ebar[k], self.dbar[k].conj()[None, :]])

    def gbar(self, k: int) -> np.ndarray:
        """conj(vec(Hbar_k)), column-major, length (N+1)M."""
        return self.Hbar(k).T.reshape(-1).conj()

    def without_irs(self) -> 'RobustInstance':
        """Direct links only: the cascade estimate and its radius are dropped."""
        return RobustInstance(Ebar=np.zeros((self.K, 0, self.M), dtype=complex), dbar=self.dbar,
                              eps_E=np.zeros(self.K), eps_d=self.eps_d)

    def with_radii(self, eps_E, eps_d) -> 'RobustInstance':
        return RobustInstance(Ebar=self.Ebar, dbar=self.dbar, eps_E=eps_E, eps_d=eps_d)

    def check(self, cfg: ScenarioConfig):
        if (self.M, self.K, self.N) != (cfg.M, cfg.K, cfg.N):
            raise ValueError(f"instance dims (M={self.M}, K={self.K}, N={self.N}) do not match "
                             f"config (M={cfg.M}, K={cfg.K}, N={cfg.N})")


def steering(B: Union[np.ndarray, PhaseSelection]) -> np.ndarray:
    """v = B^T theta for a selection or a (relaxed) selection matrix."""
    if isinstance(B, PhaseSelection):
        return reflection_vector(B)
    return relaxed_reflection(B)


def lift_matrix(v: np.ndarray, M: int) -> np.ndarray:
    """I_M kron v as a ((N+1)M) x M matrix."""
    return np.kron(np.eye(M), np.asarray(v).reshape(-1, 1))


def reference_power(inst: RobustInstance, cfg: ScenarioConfig) -> float:
    """Matched-filter power of the nominal all-first-phase channels; 1 W when no user has a requirement."""
    v = np.ones(inst.N + 1)
    gains = np.array([np.sum(np.abs(v @ inst.Hbar(k)) ** 2) for k in range(inst.K)])
    gains = np.where(gains > 0, gains, np.max(gains, initial=0.0))
    if not np.any(gains > 0) or not np.any(cfg.gamma > 0):
        return 1.0
    return float(np.sum(cfg.gamma * cfg.sigma2 / gains))


def condition_robust(inst: RobustInstance, cfg: ScenarioConfig) -> Tuple[RobustInstance, ScenarioConfig,
                                                                         Conditioning]:
    """Unit noise and unit reference power; estimates and radii share the per-user factor."""
    inst.check(cfg)
    p_ref = reference_power(inst, cfg)
    gain = np.sqrt(p_ref) / cfg.sigma
    scaled = RobustInstance(Ebar=inst.Ebar * gain[:, None, None], dbar=inst.dbar * gain[:, None],
                            eps_E=inst.eps_E * gain, eps_d=inst.eps_d * gain)
    internal = cfg.with_changes(sigma2=np.ones(cfg.K))
    logger.debug(f"[condition] robust P_ref={p_ref:.3e} W")
    return scaled, internal, Conditioning(power_scale=p_ref, user_gain=gain)


### LIFTED VARIABLES AND MULTIPLIERS

@dataclass(frozen=True, eq=False)
class RobustLift:
    """
    Primal point of the robust program; every matrix field is stacked over users.

    Attributes:
        W: K x M x M relaxed transmit covariances.
        Xhat, S, T, U: K x D x D Hermitian lift blocks.
        Y: K x D x M.
        V: K x M x M.
        q: S-procedure multipliers.
        lam: Feasibility slacks, or None.
        B: Selection matrix, L x (N+1), fixed or relaxed.
    """
    W: np.ndarray
    Xhat: np.ndarray
    S: np.ndarray
    T: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    q: np.ndarray
    lam: Optional[np.ndarray]
    B: np.ndarray

    def lift_errors(self, k: int) -> Tuple[float, float]:
        """(||Xhat_k - P W_k P^H||_F, ||Y_k - P W_k||_F) at the stored selection."""
        M = self.W.shape[1]
        P = lift_matrix(steering(self.B), M)
        return (float(np.linalg.norm(self.Xhat[k] - P @ self.W[k] @ P.conj().T)),
                float(np.linalg.norm(self.Y[k] - P @ self.W[k])))


@dataclass(frozen=True, eq=False)
class RobustDualSet:
    """
    Multipliers of a solved fixed-selection robust program.

    Attributes:
        kind: "primal" or "feasibility".
        Omega: K x M x M multipliers of W_k >= 0.
        Lambda: Per-user QoS multipliers, a (D+1) x (D+1) matrix or a scalar at zero radius.
        q_dual: Multipliers of q_k >= 0.
        dims: (N, L, M).
        lagrangian: Sum of all multiplier terms of the Lagrangian at the solution.
        stationarity: Complex-domain KKT residual.
    """
    kind: str
    Omega: np.ndarray
    Lambda: Tuple[Union[np.ndarray, float], ...]
    q_dual: np.ndarray
    dims: Tuple[int, int, int]
    lagrangian: float
    stationarity: float

    @property
    def D(self) -> int:
        N, _, M = self.dims
        return (N + 1) * M

    def complementarity(self, lift: 'RobustLift') -> float:
        """max_k |Tr(Omega_k W_k)|, zero at an exact optimum."""
        return float(max(abs(np.trace(O @ W)) for O, W in zip(self.Omega, lift.W)))


### FORMULATION

def formulate_robust(inst: RobustInstance, cfg: ScenarioConfig, B: Optional[np.ndarray] = None,
                     feasibility: bool = False, lift: bool = True) -> Tuple[ProgramBuilder, Dict[str, AffineExpr]]:
    """
    Declares the robust variables and adds every constraint but the objective.

    Args:
        inst: Estimates and radii (internal units in the solvers).
        cfg: Scenario config.
        B: Fixed L x (N+1) selection; None makes it a relaxed variable.
        feasibility: Shift the QoS LMIs by lambda_k I with lambda_k >= 0.
        lift: Declare Xhat_k, S_k, T_k, U_k, Y_k, V_k with the lift LMIs. Without
            it Xhat_k is the expression P W_k P^H, which needs a fixed B.

    Returns:
        The builder and the expressions 'power' (sum Tr W_k), 'lam', 'B' and
        'lift_cost' (sum_k Tr T_k + Tr V_k, lifted programs only).
    """
    inst.check(cfg)
    if B is None and not lift:
        raise ValueError("the reduced program needs a fixed selection")
    M, K, N, L = cfg.M, cfg.K, cfg.N, cfg.L
    D = inst.D
    theta = phase_alphabet(L)
    pool = VariablePool()
    for k in range(K):
        pool.hermitian(f'W{k}', M)
        if lift:
            for name in ('Xhat', 'S', 'T', 'U'):
                pool.hermitian(f'{name}{k}', D)
            pool.complex(f'Y{k}', (D, M))
            pool.hermitian(f'V{k}', M)
    pool.real('q', (K,))
    if feasibility:
        pool.real('lam', (K,))
    if B is None:
        pool.real('B', (L, N))
    pool.freeze()
    builder = ProgramBuilder(pool)
    exprs: Dict[str, AffineExpr] = {}

    if B is None:
        Bvar = pool.expr('B')
        B_expr = AffineExpr.block([[Bvar, np.eye(L)[:, :1]]])
        exprs['B'] = B_expr
        P = AffineExpr.kron_identity(M, B_expr.T @ theta)
        P_h = P.H
    else:
        B = np.asarray(B, dtype=float)
        if B.shape != (L, N + 1):
            raise ValueError(f"selection matrix must be {L} x {N + 1}, got {B.shape}")
        P = lift_matrix(B.T @ theta, M)
        P_h = P.conj().T

    q = pool.expr('q')
    lam = pool.expr('lam') if feasibility else None
    if lam is not None:
        exprs['lam'] = lam
    if lift:
        Xhat = [pool.expr(f'Xhat{k}') for k in range(K)]
    else:
        Xhat = [P @ pool.expr(f'W{k}') @ P_h for k in range(K)]
    power, lift_cost = None, None
    for k in range(K):
        W = pool.expr(f'W{k}')
        power = W.trace() if power is None else power + W.trace()
        builder.add_lmi(_user("C8", k), W)
        if lift:
            Y = pool.expr(f'Y{k}')
            builder.add_lmi(_user("C3a", k), AffineExpr.block([
                [pool.expr(f'S{k}'), Xhat[k], P],
                [Xhat[k], pool.expr(f'T{k}'), Y],
                [P_h, Y.H, np.eye(M)],
            ]))
            builder.add_nonneg(_user("C3b", k), (D - pool.expr(f'S{k}').trace()).reshape(1))
            builder.add_lmi(_user("C3c", k), AffineExpr.block([
                [pool.expr(f'U{k}'), Y, P],
                [Y.H, pool.expr(f'V{k}'), W],
                [P_h, W, np.eye(M)],
            ]))
            builder.add_nonneg(_user("C3d", k), (D - pool.expr(f'U{k}').trace()).reshape(1))
            cost = pool.expr(f'T{k}').trace() + pool.expr(f'V{k}').trace()
            lift_cost = cost if lift_cost is None else lift_cost + cost

        Xt = -Xhat[k]
        for j in range(K):
            if j != k:
                Xt = Xt + cfg.gamma[k] * Xhat[j]
        g = inst.gbar(k)
        Xg = Xt @ g
        gXg = g.conj() @ Xg
        noise = cfg.gamma[k] * cfg.sigma2[k]
        eps2 = float(inst.eps[k] ** 2)
        if eps2 == 0.0:
            # zero radius: the ball is the estimate itself
            margin = -gXg - noise
            if lam is not None:
                margin = margin + lam[k]
            builder.add_nonneg(_user("C1", k), margin.real.reshape(1))
        else:
            corner = (-q[k] * eps2 - noise - gXg.real).reshape(1, 1)
            top = q[k].reshape(1, 1) * np.eye(D) - Xt
            if lam is not None:
                top = top + lam[k].reshape(1, 1) * np.eye(D)
                corner = corner + lam[k].reshape(1, 1)
            col = -Xg.reshape(D, 1)
            builder.add_lmi(_user("C1", k), AffineExpr.block([[top, col], [col.H, corner]]))
        if lam is not None:
            builder.add_nonneg(_user("C4", k), lam[k].reshape(1))
    builder.add_nonneg("q", q)
    exprs['power'] = power.real
    if lift_cost is not None:
        exprs['lift_cost'] = lift_cost.real

    if B is None and N > 0:
        builder.add_nonneg(C2C, Bvar)
        builder.add_eq(C2A, (np.ones((1, L)) @ Bvar).reshape(N) - 1.0)
    return builder, exprs


def _fixed_meta(sel: PhaseSelection, cfg: ScenarioConfig) -> Dict[str, object]:
    return dict(selection=sel.idx, lifted=False, N=cfg.N, L=cfg.L, M=cfg.M)


def build_robust_primal(sel: PhaseSelection, inst: RobustInstance, cfg: ScenarioConfig) -> ConeProgram:
    """Worst-case power minimization at a fixed selection; objective sum Tr W_k."""
    _check_selection(sel, cfg)
    builder, exprs = formulate_robust(inst, cfg, B=sel.B, lift=False)
    builder.minimize(exprs['power'])
    return builder.build(kind='primal', **_fixed_meta(sel, cfg))


def build_robust_feasibility(sel: PhaseSelection, inst: RobustInstance, cfg: ScenarioConfig) -> ConeProgram:
    """
    l1 feasibility check: minimize sum lambda_k with the QoS LMIs shifted by lambda_k I.

    The power term weighted by FEASIBILITY_POWER_WEIGHT keeps the covariances bounded.
    """
    _check_selection(sel, cfg)
    builder, exprs = formulate_robust(inst, cfg, B=sel.B, feasibility=True, lift=False)
    builder.minimize(exprs['lam'].sum() + FEASIBILITY_POWER_WEIGHT * exprs['power'])
    return builder.build(kind='feasibility', **_fixed_meta(sel, cfg))


def _check_selection(sel: PhaseSelection, cfg: ScenarioConfig):
    if sel.N != cfg.N or sel.L != cfg.L:
        raise ValueError(f"selection (N={sel.N}, L={sel.L}) does not match config (N={cfg.N}, L={cfg.L})")


def robust_lift(program: ConeProgram, sol: ConicSolution) -> RobustLift:
    """
    Lifted point of a solved robust program.

    Fixed-selection programs are reduced; their lift is rebuilt exactly with
    Y_k = P W_k, Xhat_k = P W_k P^H, S_k = U_k = P P^H, T_k = Y_k Y_k^H and V_k = W_k^2.
    """
    pool: VariablePool = program.layout
    K = pool.block('q').shape[0]

    def stack(name: str) -> np.ndarray:
        return np.stack([pool.value(f'{name}{k}', sol.x) for k in range(K)])

    W = stack('W')
    L = program.meta['L']
    q = pool.value('q', sol.x)
    lam = pool.value('lam', sol.x) if 'lam' in pool else None
    if 'B' in pool:
        B = np.hstack([pool.value('B', sol.x), np.eye(L)[:, :1]])
    else:
        B = PhaseSelection(idx=tuple(program.meta['selection']), L=L).B
    if not program.meta.get('lifted', True):
        P = lift_matrix(steering(B), W.shape[1])
        Y = P @ W
        Xhat = Y @ P.conj().T
        S = np.broadcast_to(P @ P.conj().T, Xhat.shape).copy()
        return RobustLift(W=W, Xhat=Xhat, S=S, T=Y @ np.conj(np.swapaxes(Y, 1, 2)), U=S.copy(), Y=Y, V=W @ W,
                          q=q, lam=lam, B=B)
    return RobustLift(W=W, Xhat=stack('Xhat'), S=stack('S'), T=stack('T'), U=stack('U'), Y=stack('Y'),
                      V=stack('V'), q=q, lam=lam, B=B)


def recover_robust_duals(sol: ConicSolution, program: ConeProgram) -> RobustDualSet:
    """
    Multipliers of the covariance, QoS and S-procedure constraints plus the
    Lagrangian value at the solution.

    Raises:
        RuntimeError: The solution is not optimal.
    """
    if not sol.optimal:
        raise RuntimeError(f"cannot recover multipliers from a {sol.status.value} solution")
    kind = program.meta.get('kind')
    if kind not in ('primal', 'feasibility') or program.meta.get('lifted', True):
        raise ValueError(f"program kind {kind!r} carries no Benders multipliers")
    pool: VariablePool = program.layout
    K = pool.block('q').shape[0]
    Omega = np.stack([group_dual(program, sol, _user("C8", k)) for k in range(K)])
    Lambda = tuple(group_dual(program, sol, _user("C1", k)) for k in range(K))
    q_dual = np.asarray(group_dual(program, sol, "q"), dtype=float)
    residual = complex_stationarity(program, sol)
    if residual > 1e-6:
        logger.warning(f"[duals] robust complex stationarity residual {residual:.2e}")
    dims = (program.meta['N'], program.meta['L'], program.meta['M'])
    lagrangian = float(sum(lagrangian_terms(program, sol).values()))
    return RobustDualSet(kind=kind, Omega=Omega, Lambda=Lambda, q_dual=q_dual, dims=dims, lagrangian=lagrangian,
                         stationarity=residual)


### CUTS

def robust_cut(kind: CutKind, lift: RobustLift, duals: RobustDualSet, obj: float) -> Cut:
    """
    Benders cut of the robust program at the selection of `lift`.

    The cut equals obj there and is at most zero at every other selection, so
    the master visits each selection at most once and its bound stays valid.
    """
    kind = CutKind(kind)
    expected = 'primal' if kind is CutKind.OPTIMALITY else 'feasibility'
    if duals.kind != expected:
        raise ValueError(f"{kind.value} cut needs multipliers of a {expected} problem, got {duals.kind}")
    return selection_cut(kind, PhaseSelection.from_matrix(lift.B), obj)


### RANK-ONE RECOVERY AND VERIFICATION

class ExtractionStatus(str, Enum):
    OK = "ok"
    RANK_VIOLATION = "rank_violation"


@dataclass(frozen=True, eq=False)
class Extraction:
    status: ExtractionStatus
    w: np.ndarray
    ratio: float


def extract_beamformer(W: np.ndarray, tol: float = RANK_RATIO_TOL) -> Extraction:
    """
    Principal-eigenvector beamformer of a relaxed covariance.

    Args:
        W: Hermitian PSD M x M matrix.
        tol: Largest accepted ratio of the second to the first eigenvalue.

    Returns:
        Extraction with w = sqrt(l1) u1 and ratio l2 / l1.
    """
    W = np.asarray(W, dtype=complex)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {W.shape}")
    W = 0.5 * (W + W.conj().T)
    vals, vecs = np.linalg.eigh(W)
    top = float(vals[-1])
    if vals[0] < -max(1e-6 * max(top, 0.0), 1e-12):
        raise ValueError(f"covariance is not PSD (smallest eigenvalue {vals[0]:.2e})")
    if top <= 0.0:
        return Extraction(ExtractionStatus.OK, np.zeros(W.shape[0], dtype=complex), 0.0)
    ratio = float(max(vals[-2], 0.0) / top) if W.shape[0] > 1 else 0.0
    status = ExtractionStatus.OK if ratio <= tol else ExtractionStatus.RANK_VIOLATION
    if status is ExtractionStatus.RANK_VIOLATION:
        logger.warning(f"[extract] rank ratio {ratio:.2e} above {tol:.0e}")
    return Extraction(status, np.sqrt(top) * vecs[:, -1], ratio)


def _qos_matrix(W: np.ndarray, sel: PhaseSelection, inst: RobustInstance, cfg: ScenarioConfig,
                k: int) -> Tuple[np.ndarray, np.ndarray, float]:
    """(Xt_k, Xt_k gbar_k, gbar_k^H Xt_k gbar_k + gamma_k sigma_k^2) for beam columns W."""
    P = lift_matrix(steering(sel), inst.M)
    PW = P @ W
    Xt = -np.outer(PW[:, k], PW[:, k].conj())
    for j in range(inst.K):
        if j != k:
            Xt += cfg.gamma[k] * np.outer(PW[:, j], PW[:, j].conj())
    g = inst.gbar(k)
    Xg = Xt @ g
    return Xt, Xg, float(np.real(g.conj() @ Xg)) + float(cfg.gamma[k] * cfg.sigma2[k])


def lmi_certificate(W: Beamformer, sel: PhaseSelection, inst: RobustInstance, cfg: ScenarioConfig,
                    k: int) -> Tuple[float, float]:
    """
    Relative smallest eigenvalue of the S-procedure LMI at the best multiplier.

    Returns:
        (margin, q): margin >= 0 proves worst-case SINR_k >= gamma_k over the
        whole error ball; it is normalized by the spectral norm of the LMI.
    """
    Xt, Xg, const = _qos_matrix(W.W, sel, inst, cfg, k)
    eps2 = float(inst.eps[k] ** 2)
    D = Xt.shape[0]

    def lmi(q: float) -> np.ndarray:
        return np.block([[q * np.eye(D) - Xt, -Xg[:, None]], [-Xg.conj()[None, :], np.array([[-q * eps2 - const]])]])

    def margin(q: float) -> float:
        mat = lmi(q)
        vals = np.linalg.eigvalsh(mat)
        return float(vals[0] / max(np.max(np.abs(vals)), 1e-300))

    if eps2 == 0.0:
        scale = max(float(np.linalg.norm(Xt, 2)), abs(const), 1e-300)
        return float(-const / scale), 0.0
    top = max(float(np.linalg.eigvalsh(Xt)[-1]), 0.0)
    room = max(-const, 0.0)
    q_hi = top + room / eps2 + 1e-12 * (1.0 + top)
    res = minimize_scalar(lambda q: -margin(q), bounds=(0.0, q_hi), method='bounded',
                          options={'xatol': 1e-12 * max(q_hi, 1e-300)})
    q_best = float(res.x)
    best = margin(q_best)
    for q in (top, q_hi):
        if margin(q) > best:
            q_best, best = q, margin(q)
    return best, q_best


@dataclass(frozen=True, eq=False)
class WorstCaseReport:
    """
    Attributes:
        min_sinr: Smallest SINR per user over samples and gradient candidates.
        nominal_sinr: SINR at the estimates.
        certificate: Relative LMI margin per user (see lmi_certificate).
        q: Best S-procedure multiplier per user.
        certified: certificate >= -CERTIFICATE_TOL per user.
    """
    min_sinr: np.ndarray
    nominal_sinr: np.ndarray
    certificate: np.ndarray
    q: np.ndarray
    certified: np.ndarray


def _sinr_rows(G: np.ndarray, PW: np.ndarray, k: int, sigma2: float) -> np.ndarray:
    amp = np.abs(G.conj() @ PW) ** 2
    signal = amp[:, k]
    return signal / (amp.sum(axis=1) - signal + sigma2)


def _project(delta: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(delta, axis=-1, keepdims=True)
    factor = np.where(norms > radius, radius / np.where(norms > 0, norms, 1.0), 1.0)
    return delta * factor


def worst_case_sinr_check(W: Beamformer, sel: PhaseSelection, inst: RobustInstance, cfg: ScenarioConfig,
                          n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> WorstCaseReport:
    """
    Falsifies and certifies the worst-case QoS of a design.

    Errors are sampled uniformly on each user's radius-eps sphere, then the
    worst samples seed projected-gradient descent on the QoS margin inside the
    ball. Sampling can only over-estimate the true minimum; the LMI certificate
    is the proof.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    inst.check(cfg)
    rng = np.random.default_rng(seed)
    P = lift_matrix(steering(sel), inst.M)
    PW = P @ W.W
    K, D = inst.K, inst.D
    min_sinr, nominal = np.zeros(K), np.zeros(K)
    cert, qs = np.zeros(K), np.zeros(K)
    for k in range(K):
        g = inst.gbar(k)
        radius = float(inst.eps[k])
        nominal[k] = _sinr_rows(g[None, :], PW, k, cfg.sigma2[k])[0]
        direction = rng.standard_normal((n_samples, D)) + 1j * rng.standard_normal((n_samples, D))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        deltas = radius * direction
        sinr = _sinr_rows(g[None, :] + deltas, PW, k, cfg.sigma2[k])
        # margin |a_k|^2 - gamma sum_j |a_j|^2 is the quadratic form of A = -Xt
        Xt, _, _ = _qos_matrix(W.W, sel, inst, cfg, k)
        A = -Xt
        step = 1.0 / (2.0 * max(float(np.linalg.norm(A, 2)), 1e-300))
        starts = deltas[np.argsort(sinr)[:GRADIENT_STARTS]]
        grad0 = A @ g
        if np.linalg.norm(grad0) > 0:
            starts = np.vstack([starts, -radius * grad0 / np.linalg.norm(grad0)])
        cand = starts.copy()
        for _ in range(GRADIENT_STEPS):
            cand = _project(cand - step * ((g[None, :] + cand) @ A.T), radius)
        worst = _sinr_rows(g[None, :] + cand, PW, k, cfg.sigma2[k])
        min_sinr[k] = min(float(np.min(sinr)), float(np.min(worst)), nominal[k])
        cert[k], qs[k] = lmi_certificate(W, sel, inst, cfg, k)
        logger.debug(f"[worst-case user {k + 1}] nominal={nominal[k]:.6g} min={min_sinr[k]:.6g} "
                     f"certificate={cert[k]:.2e} q={qs[k]:.3e}")
    return WorstCaseReport(min_sinr=min_sinr, nominal_sinr=nominal, certificate=cert, q=qs,
                           certified=cert >= -CERTIFICATE_TOL)


### GBD ADAPTER

class RobustCsiAdapter:
    """GBD adapter for the robust formulation, solved in internal units."""

    def __init__(self, inst: RobustInstance, cfg: ScenarioConfig):
        inst.check(cfg)
        self.raw_inst, self.raw_cfg = inst, cfg
        self.inst, self.cfg, self.conditioning = condition_robust(inst, cfg)
        self.N, self.L = cfg.N, cfg.L

    @property
    def power_scale(self) -> float:
        return self.conditioning.power_scale

    def initial_selection(self, seed: int) -> PhaseSelection:
        return PhaseSelection.random(self.N, self.L, np.random.default_rng(seed))

    def _solve(self, kind: str, sel: PhaseSelection, tol: ToleranceSet) -> SubproblemOutcome:
        build = build_robust_primal if kind == 'primal' else build_robust_feasibility
        program = build(sel, self.inst, self.cfg)
        sol = solve(program, tol)
        out = SubproblemOutcome(kind, sol.status, sel, np.inf, program=program, solution=sol)
        if sol.optimal:
            out.vars = robust_lift(program, sol)
            out.duals = recover_robust_duals(sol, program)
            out.obj = float(sol.obj) if kind == 'primal' else float(np.sum(out.vars.lam))
            out.info['stationarity'] = out.duals.stationarity
        return out

    def primal(self, sel: PhaseSelection, tol: ToleranceSet) -> SubproblemOutcome:
        if np.all(self.cfg.gamma == 0):
            zeros = np.zeros((self.cfg.K, self.cfg.M, self.cfg.M), dtype=complex)
            return SubproblemOutcome('primal', ConicStatus.OPTIMAL, sel, 0.0, vars=zeros)
        return self._solve('primal', sel, tol)

    def feasibility(self, sel: PhaseSelection, tol: ToleranceSet) -> SubproblemOutcome:
        return self._solve('feasibility', sel, tol)

    def optimality_cut(self, outcome: SubproblemOutcome) -> Cut:
        if outcome.duals is None:
            return Cut(CutKind.OPTIMALITY, outcome.obj, np.zeros((self.N, self.L)))
        return robust_cut(CutKind.OPTIMALITY, outcome.vars, outcome.duals, outcome.obj)

    def feasibility_cut(self, outcome: SubproblemOutcome) -> Cut:
        value = max(outcome.obj, 1.0) if np.isfinite(outcome.obj) else 1.0
        if outcome.duals is None:
            return selection_cut(CutKind.FEASIBILITY, outcome.selection, value)
        return robust_cut(CutKind.FEASIBILITY, outcome.vars, outcome.duals, value)

    def beamformer(self, outcome: SubproblemOutcome) -> Beamformer:
        covs = outcome.vars.W if isinstance(outcome.vars, RobustLift) else outcome.vars
        extractions = [extract_beamformer(covs[k]) for k in range(self.cfg.K)]
        outcome.info['rank_ratios'] = [e.ratio for e in extractions]
        outcome.info['rank_ok'] = all(e.status is ExtractionStatus.OK for e in extractions)
        return self.conditioning.beamformer(np.stack([e.w for e in extractions], axis=1))


def gbd_robust(inst: RobustInstance, cfg: ScenarioConfig, delta: float = DEFAULT_DELTA, seed: int = 0,
               max_iter: Optional[int] = None, tol: Optional[ToleranceSet] = None) -> GbdResult:
    """Robust decomposition; rank ratios of the returned covariances land in result.outcome.info."""
    result = solve_gbd(RobustCsiAdapter(inst, cfg), delta=delta, max_iter=max_iter, seed=seed, tol=tol)
    if result.outcome is not None and not result.outcome.info.get('rank_ok', True):
        logger.warning(f"[GBD] robust covariances not rank one: ratios {result.outcome.info['rank_ratios']}")
    return result


def robust_baseline_no_irs(inst: RobustInstance, cfg: ScenarioConfig,
                           tol: Optional[ToleranceSet] = None) -> FixedResult:
    """Robust power minimization over the direct links only."""
    return solve_fixed(RobustCsiAdapter(inst.without_irs(), cfg.with_changes(N=0)), PhaseSelection((), cfg.L),
                       tol)


def robust_baseline_random(inst: RobustInstance, cfg: ScenarioConfig, seed: int,
                           tol: Optional[ToleranceSet] = None) -> FixedResult:
    """Robust power minimization at one uniformly drawn selection."""
    sel = PhaseSelection.random(cfg.N, cfg.L, np.random.default_rng(seed))
    logger.debug(f"[baseline random {seed}] robust selection {sel.idx}")
    return solve_fixed(RobustCsiAdapter(inst, cfg), sel, tol)


### ROBUST SCA

def robust_sca_subproblem(B_prev: np.ndarray, mu: float, inst: RobustInstance, cfg: ScenarioConfig,
                          weight: float = 1.0, price: float = 0.0) -> ConeProgram:
    """
    Robust counterpart of sca_subproblem.

    The objective is sum Tr W_k plus the linearized penalty, plus
    price * sum_k (Tr T_k + Tr V_k) to keep the lift blocks from drifting off
    their Schur bounds.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if price < 0:
        raise ValueError(f"price must be nonnegative, got {price}")
    B_prev = np.asarray(B_prev, dtype=float)[:, :cfg.N]
    if B_prev.shape != (cfg.L, cfg.N):
        raise ValueError(f"previous selection must be {cfg.L} x {cfg.N}, got {B_prev.shape}")
    builder, exprs = formulate_robust(inst, cfg, B=None)
    body = exprs['B'][:, :cfg.N]
    lin = (body * (1.0 - 2.0 * B_prev)).sum() + float(np.sum(B_prev ** 2))
    objective = exprs['power'] + (weight / mu) * lin
    if price > 0:
        objective = objective + price * exprs['lift_cost']
    builder.minimize(objective)
    return builder.build(kind='relaxed', mu=mu, N=cfg.N, L=cfg.L, M=cfg.M, price=price)


def solve_robust_sca(inst: RobustInstance, cfg: ScenarioConfig, sca_cfg: Optional[ScaConfig] = None,
                     seed: int = 0, tol: Optional[ToleranceSet] = None) -> ScaResult:
    """
    Robust penalized SCA; each rounded selection is re-solved and its beamformers extracted.

    Starts are drawn as in solve_sca and the best rounded design is kept.

    Returns:
        ScaResult whose metadata carries the rank ratios of the final covariances.
    """
    sca_cfg = sca_cfg or ScaConfig()
    tol = tol or ToleranceSet()
    adapter = RobustCsiAdapter(inst, cfg)
    meta: Dict[str, object] = {'beamformer': 're-optimized at the rounded selection'}
    if np.all(cfg.gamma == 0):
        return ScaResult(ScaStatus.CONVERGED, PhaseSelection.first(cfg.N, cfg.L),
                         Beamformer(np.zeros((cfg.M, cfg.K))), 0.0, 1, ScaTrace(), metadata=meta)
    rng = np.random.default_rng(seed)
    weight, price = sca_cfg.penalty_scale, SCA_LIFT_SHARE

    def step(B_prev: np.ndarray, mu: float) -> Optional[ScaStep]:
        program = robust_sca_subproblem(B_prev, mu, adapter.inst, adapter.cfg, weight, price)
        sol = solve_relaxed(program, tol)
        if not sol.optimal:
            return None
        pool = program.layout
        power = float(sum(np.real(np.trace(pool.value(f'W{k}', sol.x))) for k in range(cfg.K)))
        lift_cost = sum(np.trace(pool.value(f'T{k}', sol.x)) + np.trace(pool.value(f'V{k}', sol.x))
                        for k in range(cfg.K))
        extra = price * float(np.real(lift_cost))
        return ScaStep(B=np.clip(pool.value('B', sol.x), 0.0, 1.0), power=power, surrogate=sol.obj, extra=extra)

    def attempt(i: int) -> ScaCandidate:
        status, gap, trace = ScaStatus.CONVERGED, 0.0, ScaTrace(restarts=i)
        if cfg.N == 0:
            sel = PhaseSelection.first(0, cfg.L)
        else:
            status, last, trace = run_sca_loop(step, dirichlet_start(cfg.N, cfg.L, rng), sca_cfg, weight, trace)
            if last is None:
                return ScaCandidate(ScaStatus.INFEASIBLE, None, np.inf, 0.0, trace)
            gap, sel = binary_gap(last.B), round_selection(last.B)
        fixed = solve_fixed(adapter, sel, tol)
        if not fixed.feasible:
            logger.info(f"[SCA] rounded robust selection {sel.idx} is not feasible ({fixed.status.value})")
            return ScaCandidate(ScaStatus.INFEASIBLE, sel, np.inf, gap, trace)
        return ScaCandidate(status, sel, fixed.outcome.obj, gap, trace, payload=fixed)

    best = best_of_starts(attempt, sca_cfg.restarts if cfg.N > 0 else 0)
    iterations = max(1, len(best.trace.records))
    meta['start'] = best.trace.restarts
    if not best.feasible:
        logger.info("[SCA] robust problem infeasible from every start")
        return ScaResult(ScaStatus.INFEASIBLE, best.selection, None, np.inf, iterations, best.trace, best.gap, meta)
    fixed: FixedResult = best.payload
    meta['rank_ratios'] = fixed.outcome.info.get('rank_ratios', [])
    logger.info(f"[SCA] robust {best.status.value} after {iterations} iterations: power={fixed.power:.6e} W "
                f"at {best.selection.idx}")
    return ScaResult(best.status, best.selection, fixed.beamformer, fixed.power, iterations, best.trace,
                     best.gap, meta)


__all__ = ['RobustInstance', 'RobustLift', 'RobustDualSet', 'RobustCsiAdapter', 'ExtractionStatus', 'Extraction',
           'WorstCaseReport', 'formulate_robust', 'build_robust_primal', 'build_robust_feasibility',
           'robust_lift', 'recover_robust_duals', 'robust_cut', 'extract_beamformer',
           'lmi_certificate', 'worst_case_sinr_check', 'condition_robust', 'robust_baseline_no_irs',
           'robust_baseline_random', 'robust_sca_subproblem', 'solve_robust_sca', 'steering', 'lift_matrix',
           'gbd_robust']
