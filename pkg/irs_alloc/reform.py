"""
Perfect-CSI convex programs for a fixed (or relaxed) phase selection.

For a selection matrix B the transmit power problem is convex after lifting
the bilinear products x_kk' = B H_k Fhat_k w_k' into per-user matrices
X_k (L x K):

    min  sum_k ||w_k||^2
    s.t. ||sqrt(g_k) [theta^T x_kj (j != k); s_k]|| <= Re theta^T x_kk     (C1a)
         Im theta^T x_kk = 0                                             (C1b)
         [[S_k, X_k, B H_k], [X_k^H, T_k, (Fhat_k W)^H],
          [(B H_k)^H, Fhat_k W, I]] >= 0                                 (C3a)
         Tr S_k <= sum_n |h_kn|^2 + 1                                    (C3b)

For a one-hot B the pair C3a/C3b pins S_k = B H_k H_k^H B^H and X_k = B H_k Fhat_k W,
so the lifted program has no strictly feasible point. Fixed selections are
therefore solved in the reduced form, with X_k as an expression in W, and the
lifted point and the C3a/C3b multipliers are rebuilt in closed form from the
reduced solution. The lifted form with a relaxed B (and T_k priced in the
objective) is what the successive convex approximation solves.

The feasibility check relaxes C1a by lambda_k >= 0 and minimizes sum lambda_k.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np

from irs_alloc.affine import AffineExpr, ProgramBuilder, VariablePool, complex_stationarity, group_dual
from irs_alloc.conic import ConeProgram, ConicSolution
from irs_alloc.model import Beamformer, ChannelSet, PhaseSelection, ScenarioConfig, phase_alphabet

logger = logging.getLogger(__name__)

### FORMULATION INFO
EPIGRAPH = "epigraph"
C2A = "C2a"
C2C = "C2c"
LIFT_SHARE = 0.5
FEASIBILITY_POWER_WEIGHT = 1e-6


def _user(tag: str, k: int) -> str:
    return f"{tag} user {k + 1}"


def trace_budget(ch: ChannelSet, k: int) -> float:
    """Tr((B H_k)(B H_k)^H) for any one-hot B, i.e. sum_n |h_kn|^2 + 1."""
    return float(np.sum(np.abs(ch.h[k]) ** 2) + 1.0)


def lift_price(Fhat: np.ndarray, share: float = LIFT_SHARE) -> float:
    """
    Price eps of Tr T_k that keeps I - eps sum_k Fhat_k^H Fhat_k positive definite.

    Args:
        Fhat: K x (N+1) x M stacked Fhat_k.
        share: Fraction of the largest admissible price.
    """
    gram = np.einsum('knm,knp->mp', np.conj(Fhat), Fhat)
    top = float(np.linalg.eigvalsh(gram)[-1]) if gram.size else 0.0
    return share / top if top > 0 else share


class CutKind(str, Enum):
    OPTIMALITY = "optimality"
    FEASIBILITY = "feasibility"


@dataclass(frozen=True, eq=False)
class LiftedVars:
    """
    Primal point of the lifted program.

    Attributes:
        X: K x L x K, X[k] = X_k with columns x_kk'.
        S: K x L x L Hermitian blocks.
        T: K x K x K Hermitian blocks.
        W: Beamformer.
        lam: Feasibility slacks (None for the power problem).
        B: Selection matrix, L x (N+1), fixed or relaxed.
    """
    X: np.ndarray
    S: np.ndarray
    T: np.ndarray
    W: Beamformer
    lam: Optional[np.ndarray]
    B: np.ndarray

    def lift_error(self, ch: ChannelSet) -> float:
        """max_k ||X_k - B H_k Fhat_k W||_F."""
        return max(float(np.linalg.norm(self.X[k] - self.B @ ch.cascade(k) @ self.W.W))
                   for k in range(ch.K))


@dataclass(frozen=True, eq=False)
class DualSet:
    """
    Multipliers of one solved program, nonnegative for inequality constraints.

    Attributes:
        kind: "primal" or "feasibility".
        alpha: C1a multipliers (leading entry of each SOC dual vector).
        beta: C1b multipliers.
        Q: K x n x n Hermitian C3a multipliers, n = L + K + N + 1.
        zeta: C3b multipliers.
        nu: Multipliers of lambda >= 0 (feasibility only).
        dims: Block sizes (L, K, N+1) of the C3a partition.
        stationarity: Complex-domain KKT residual of the solve.
        soc: K x 2K full C1a dual vectors; None falls back to the scalar alpha form.
        price: Price of Tr T_k the C3a multipliers were built for.
    """
    kind: str
    alpha: np.ndarray
    beta: np.ndarray
    Q: np.ndarray
    zeta: np.ndarray
    nu: Optional[np.ndarray]
    dims: Tuple[int, int, int]
    stationarity: float
    soc: Optional[np.ndarray] = None
    price: float = 0.0

    def block(self, k: int, i: int, j: int) -> np.ndarray:
        """Q_k,ij with 1-based block indices i, j in {1, 2, 3}."""
        if not (1 <= i <= 3 and 1 <= j <= 3):
            raise ValueError(f"block indices must lie in 1..3, got ({i}, {j})")
        edges = np.cumsum((0,) + self.dims)
        return self.Q[k][edges[i - 1]:edges[i], edges[j - 1]:edges[j]]

    def min_eigenvalue(self) -> float:
        return float(min(np.linalg.eigvalsh(Q)[0] for Q in self.Q))


@dataclass(frozen=True, eq=False)
class Cut:
    """
    Affine Benders cut in the selection entries.

    Optimality:  eta >= const + sum_{n,l} coeff[n, l] b_n[l]
    Feasibility:   0 >= const + sum_{n,l} coeff[n, l] b_n[l]
    """
    kind: CutKind
    const: float
    coeff: np.ndarray

    def __post_init__(self):
        coeff = np.array(self.coeff, dtype=float)
        if coeff.ndim != 2:
            raise ValueError(f"cut coefficients must be N x L, got shape {coeff.shape}")
        if not np.isfinite(self.const) or not np.all(np.isfinite(coeff)):
            raise ValueError("cut has non-finite data")
        coeff.setflags(write=False)
        object.__setattr__(self, 'coeff', coeff)
        object.__setattr__(self, 'kind', CutKind(self.kind))

    @property
    def eta_coeff(self) -> int:
        return 1 if self.kind is CutKind.OPTIMALITY else 0

    def rhs(self, B: Union[PhaseSelection, np.ndarray]) -> float:
        """Right-hand side at a selection (index vector, L x (N+1) or L x N matrix)."""
        if isinstance(B, PhaseSelection):
            return self.const + float(sum(self.coeff[n, i] for n, i in enumerate(B.idx)))
        B = np.asarray(B, dtype=float)
        N = self.coeff.shape[0]
        return self.const + float(np.sum(self.coeff * B[:, :N].T))


### FORMULATION

def formulate(ch: ChannelSet, cfg: ScenarioConfig, B: Optional[np.ndarray] = None,
              feasibility: bool = False, lift: bool = True) -> Tuple[ProgramBuilder, Dict[str, AffineExpr]]:
    """
    Declares the variables and adds every constraint except the objective.

    Args:
        ch: Channels (internal units in the solvers).
        cfg: Scenario config.
        B: Fixed L x (N+1) selection matrix; None makes the first N columns a
            relaxed variable with 0 <= b and column sums 1.
        feasibility: Relax C1a by lambda_k >= 0.
        lift: Declare X_k, S_k, T_k with C3a/C3b. Without it X_k is the
            expression B H_k Fhat_k W, which needs a fixed B.

    Returns:
        The builder and the expressions 't' (epigraph of the power), 'W', 'lam',
        'B' and 'lift_cost' (sum_k Tr T_k, lifted programs only).
    """
    ch.check(cfg)
    if B is None and not lift:
        raise ValueError("the reduced program needs a fixed selection")
    M, K, N, L = cfg.M, cfg.K, cfg.N, cfg.L
    theta = phase_alphabet(L)
    pool = VariablePool()
    pool.real('t')
    pool.complex('W', (M, K))
    if lift:
        for k in range(K):
            pool.complex(f'X{k}', (L, K))
            pool.hermitian(f'S{k}', L)
            pool.hermitian(f'T{k}', K)
    if feasibility:
        pool.real('lam', (K,))
    if B is None:
        pool.real('B', (L, N))
    pool.freeze()
    builder = ProgramBuilder(pool)
    W = pool.expr('W')
    t = pool.expr('t')
    exprs: Dict[str, AffineExpr] = {'W': W, 't': t}

    if B is None:
        Bvar = pool.expr('B')
        B_expr = AffineExpr.block([[Bvar, np.eye(L)[:, :1]]])
        exprs['B'] = B_expr
    else:
        B = np.asarray(B, dtype=float)
        if B.shape != (L, N + 1):
            raise ValueError(f"selection matrix must be {L} x {N + 1}, got {B.shape}")
        B_expr = B

    w = W.vec()
    builder.add_soc(EPIGRAPH, [t + 1.0, t - 1.0, 2.0 * w.real, 2.0 * w.imag])
    lam = pool.expr('lam') if feasibility else None
    if lam is not None:
        exprs['lam'] = lam

    lift_cost = None
    for k in range(K):
        X = pool.expr(f'X{k}') if lift else (B_expr @ ch.cascade(k)) @ W
        z = theta @ X
        others = [j for j in range(K) if j != k]
        root = np.sqrt(cfg.gamma[k])
        lead = z[k].real + lam[k] if lam is not None else z[k].real
        builder.add_soc(_user("C1a", k), [lead, root * z[others].real, root * z[others].imag,
                                          np.array([root * cfg.sigma[k]])])
        builder.add_eq(_user("C1b", k), z[k].imag.reshape(1))
        if lift:
            A = B_expr @ ch.H(k)
            A_h = A.H if isinstance(A, AffineExpr) else A.conj().T
            C = ch.Fhat(k) @ W
            T = pool.expr(f'T{k}')
            lmi = AffineExpr.block([
                [pool.expr(f'S{k}'), X, A],
                [X.H, T, C.H],
                [A_h, C, np.eye(N + 1)],
            ])
            builder.add_lmi(_user("C3a", k), lmi)
            builder.add_nonneg(_user("C3b", k), (trace_budget(ch, k) - pool.expr(f'S{k}').trace()).reshape(1))
            lift_cost = T.trace().real if lift_cost is None else lift_cost + T.trace().real
        if lam is not None:
            builder.add_nonneg(_user("C4", k), lam[k].reshape(1))
    if lift_cost is not None:
        exprs['lift_cost'] = lift_cost

    if B is None and N > 0:
        builder.add_nonneg(C2C, Bvar)
        # b <= 1 follows from the column sums
        builder.add_eq(C2A, (np.ones((1, L)) @ Bvar).reshape(N) - 1.0)
    return builder, exprs


def _fixed_meta(sel: PhaseSelection, ch: ChannelSet, cfg: ScenarioConfig) -> Dict[str, object]:
    B = sel.B
    return dict(selection=sel.idx, lifted=False,
                A=np.stack([B @ ch.H(k) for k in range(cfg.K)]),
                Fhat=np.stack([ch.Fhat(k) for k in range(cfg.K)]),
                gamma=np.asarray(cfg.gamma, dtype=float), sigma=np.asarray(cfg.sigma, dtype=float))


def build_primal(sel: PhaseSelection, ch: ChannelSet, cfg: ScenarioConfig) -> ConeProgram:
    """Power minimization for a fixed selection; objective is the epigraph of sum ||w_k||^2."""
    _check_selection(sel, cfg)
    builder, exprs = formulate(ch, cfg, B=sel.B, lift=False)
    builder.minimize(exprs['t'])
    return builder.build(kind='primal', **_fixed_meta(sel, ch, cfg))


def build_feasibility(sel: PhaseSelection, ch: ChannelSet, cfg: ScenarioConfig) -> ConeProgram:
    """
    l1 feasibility check: minimize sum lambda_k over the relaxed QoS constraints.

    A small power term keeps the optimal set bounded; sum lambda_k is an exact
    penalty, so its optimum stays zero on every feasible selection whose QoS
    multipliers lie below 1 / FEASIBILITY_POWER_WEIGHT.
    """
    _check_selection(sel, cfg)
    builder, exprs = formulate(ch, cfg, B=sel.B, feasibility=True, lift=False)
    builder.minimize(exprs['lam'].sum() + FEASIBILITY_POWER_WEIGHT * exprs['t'])
    return builder.build(kind='feasibility', **_fixed_meta(sel, ch, cfg))


def _check_selection(sel: PhaseSelection, cfg: ScenarioConfig):
    if sel.N != cfg.N or sel.L != cfg.L:
        raise ValueError(f"selection (N={sel.N}, L={sel.L}) does not match config (N={cfg.N}, L={cfg.L})")


### READ-BACK

def lifted_vars(program: ConeProgram, sol: ConicSolution) -> LiftedVars:
    """
    Lifted point of a solved program.

    Fixed-selection programs are reduced; their lift is rebuilt exactly as
    X_k = A_k C_k, S_k = A_k A_k^H and T_k = C_k^H C_k with A_k = B H_k, C_k = Fhat_k W.
    """
    pool: VariablePool = program.layout
    W = pool.value('W', sol.x)
    lam = pool.value('lam', sol.x) if 'lam' in pool else None
    if not program.meta.get('lifted', True):
        A, Fhat = program.meta['A'], program.meta['Fhat']
        C = Fhat @ W
        B = PhaseSelection(idx=tuple(program.meta['selection']), L=A.shape[1]).B
        return LiftedVars(X=A @ C, S=A @ np.conj(np.swapaxes(A, 1, 2)), T=np.conj(np.swapaxes(C, 1, 2)) @ C,
                          W=Beamformer(W), lam=lam, B=B)
    K = pool.block('W').shape[1]
    X = np.stack([pool.value(f'X{k}', sol.x) for k in range(K)])
    S = np.stack([pool.value(f'S{k}', sol.x) for k in range(K)])
    T = np.stack([pool.value(f'T{k}', sol.x) for k in range(K)])
    L = S.shape[1]
    if 'B' in pool:
        B = np.hstack([pool.value('B', sol.x), np.eye(L)[:, :1]])
    else:
        B = PhaseSelection(idx=tuple(program.meta['selection']), L=L).B
    return LiftedVars(X=X, S=S, T=T, W=Beamformer(W), lam=lam, B=B)


def qos_gradient(soc: np.ndarray, beta: float, k: int, theta: np.ndarray, root: float) -> np.ndarray:
    """
    P_k with -<lambda_k, C1a(X_k)> + beta_k Im theta^T x_kk = -Re Tr(P_k^H X_k) + const.

    Args:
        soc: C1a dual vector of user k, length 2K.
        beta: C1b multiplier of user k.
        k: User index.
        theta: Phase alphabet.
        root: sqrt(gamma_k).

    Returns:
        L x K complex matrix conj(theta) omega^T.
    """
    K = soc.size // 2
    omega = np.zeros(K, dtype=complex)
    omega[k] = soc[0] - 1j * beta
    others = [j for j in range(K) if j != k]
    omega[others] = root * (soc[1:K] + 1j * soc[K:2 * K - 1])
    return np.outer(np.conj(theta), omega)


def lifted_multiplier(P: np.ndarray, A: np.ndarray, C: np.ndarray, price: float) -> Tuple[np.ndarray, float]:
    """
    C3a/C3b multipliers (Q_k, zeta_k) matching a reduced solution.

    Q_k = E^H Z E with E = [[I, 0, -A], [0, I, -C^H]] and
    Z = [[zeta I, -P/2], [-P^H/2, price I]], zeta = ||P||_2^2 / (4 price).
    Q_k is PSD and annihilates the lifted point [A; C^H; I], and its X_k, S_k
    and T_k parts cancel the C1 terms, the C3b term and the price of T_k.
    """
    L, K = P.shape
    zeta = float(np.linalg.norm(P, 2) ** 2 / (4.0 * price)) if P.size else 0.0
    E = np.block([[np.eye(L), np.zeros((L, K)), -A],
                  [np.zeros((K, L)), np.eye(K), -C.conj().T]])
    Z = np.block([[zeta * np.eye(L), -0.5 * P], [-0.5 * P.conj().T, price * np.eye(K)]])
    Q = E.conj().T @ Z @ E
    return 0.5 * (Q + Q.conj().T), zeta


def recover_duals(sol: ConicSolution, program: ConeProgram) -> DualSet:
    """
    Multiplier set of a solved fixed-selection primal or feasibility program.

    The C1a/C1b multipliers are read from the solve. For the power problem the
    C3a/C3b multipliers are built from them in closed form (see
    lifted_multiplier), for the lifted program with T_k priced at lift_price;
    the feasibility check carries none.

    Raises:
        RuntimeError: The solution is not optimal.
    """
    if not sol.optimal:
        raise RuntimeError(f"cannot recover multipliers from a {sol.status.value} solution")
    kind = program.meta.get('kind')
    if kind not in ('primal', 'feasibility') or program.meta.get('lifted', True):
        raise ValueError(f"program kind {kind!r} carries no Benders multipliers")
    pool: VariablePool = program.layout
    A, Fhat = program.meta['A'], program.meta['Fhat']
    K, L, n1 = A.shape
    theta = phase_alphabet(L)
    root = np.sqrt(program.meta['gamma'])
    soc = np.stack([group_dual(program, sol, _user("C1a", k)) for k in range(K)])
    beta = np.array([-group_dual(program, sol, _user("C1b", k))[0] for k in range(K)])
    n = L + K + n1
    Q = np.zeros((K, n, n), dtype=complex)
    zeta = np.zeros(K)
    nu, price = None, 0.0
    if kind == 'primal':
        price = lift_price(Fhat)
        C = Fhat @ pool.value('W', sol.x)
        for k in range(K):
            Q[k], zeta[k] = lifted_multiplier(qos_gradient(soc[k], beta[k], k, theta, root[k]), A[k], C[k], price)
    else:
        nu = np.array([group_dual(program, sol, _user("C4", k))[0] for k in range(K)])
    residual = complex_stationarity(program, sol)
    if residual > 1e-6:
        logger.warning(f"[duals] complex stationarity residual {residual:.2e}")
    return DualSet(kind=kind, alpha=soc[:, 0].copy(), beta=beta, Q=Q, zeta=zeta, nu=nu, dims=(L, K, n1),
                   stationarity=residual, soc=soc, price=price)


### LAGRANGIAN PIECES

def eval_f1(G: LiftedVars, D: DualSet, ch: ChannelSet, cfg: ScenarioConfig) -> float:
    """
    Selection-free part of the Lagrangian at (G, D), objective excluded.

    Uses the same C3b constant sum_n |h_kn|^2 + 1 as the constraint itself; the
    price term D.price (Tr T_k - ||Fhat_k W||_F^2) vanishes on exact lifts.
    """
    theta = phase_alphabet(cfg.L)
    L, K, _ = D.dims
    total = 0.0
    for k in range(K):
        z = theta @ G.X[k]
        others = np.delete(z, k)
        root = np.sqrt(cfg.gamma[k])
        slack = G.lam[k] if G.lam is not None else 0.0
        if D.soc is not None:
            u = np.concatenate([[z[k].real + slack], root * others.real, root * others.imag, [root * cfg.sigma[k]]])
            total -= float(D.soc[k] @ u)
        else:
            norm = root * np.linalg.norm(np.append(others, cfg.sigma[k]))
            total += D.alpha[k] * (norm - z[k].real - slack)
        total += D.beta[k] * z[k].imag
        total += D.zeta[k] * (np.trace(G.S[k]).real - trace_budget(ch, k))
        C = ch.Fhat(k) @ G.W.W
        M0 = np.block([
            [G.S[k], G.X[k], np.zeros((L, ch.N + 1))],
            [G.X[k].conj().T, G.T[k], C.conj().T],
            [np.zeros((ch.N + 1, L)), C, np.eye(ch.N + 1)],
        ])
        total -= np.real(np.trace(D.Q[k] @ M0))
        if D.price:
            total += D.price * (np.trace(G.T[k]).real - np.linalg.norm(C) ** 2)
    if D.nu is not None and G.lam is not None:
        total -= float(D.nu @ G.lam)
    return float(total)


def eval_f2_coeffs(D: DualSet, ch: ChannelSet) -> Tuple[float, np.ndarray]:
    """
    Selection part -sum_k 2 Re Tr(B H_k Q_k,31) as affine data.

    Returns:
        (const, coeff) with coeff[n, l] the coefficient of b_n[l] (N x L) and
        const the contribution of the fixed last column.
    """
    L, K, _ = D.dims
    N = ch.N
    acc = np.zeros((N + 1, L))
    for k in range(K):
        acc -= 2.0 * np.real(ch.H(k) @ D.block(k, 3, 1))
    return float(acc[N, 0]), acc[:N].copy()


def eval_f2(D: DualSet, ch: ChannelSet, B: np.ndarray) -> float:
    const, coeff = eval_f2_coeffs(D, ch)
    return const + float(np.sum(coeff * np.asarray(B, dtype=float)[:, :ch.N].T))


def selection_cut(kind: CutKind, sel: PhaseSelection, value: float) -> Cut:
    """
    Cut equal to `value` at `sel` and at most zero at every other selection.

    Valid whenever the bounded quantity (power or slack sum) is nonnegative.
    """
    value = max(float(value), 0.0)
    coeff = np.zeros((sel.N, sel.L))
    coeff[np.arange(sel.N), list(sel.idx)] = value
    return Cut(kind=kind, const=-value * (sel.N - 1), coeff=coeff)


def make_cut(kind: CutKind, G: LiftedVars, D: DualSet, obj: float,
             ch: ChannelSet, cfg: ScenarioConfig) -> Cut:
    """
    Benders cut generated at a solved primal (optimality) or feasibility problem.

    Args:
        kind: Cut kind; must match the program the multipliers came from.
        G: Primal point of that program.
        D: Its multipliers.
        obj: Its objective, sum ||w_k||^2 or sum lambda_k.

    Returns:
        Optimality: const = obj + f1 + f2 constant, so that the right-hand side
        at the generating selection equals obj. Feasibility: the slack sum at
        the generating selection and at most zero elsewhere, because the l1
        program has no attained lifted multipliers (W carries no cost there).
    """
    kind = CutKind(kind)
    expected = 'primal' if kind is CutKind.OPTIMALITY else 'feasibility'
    if D.kind != expected:
        raise ValueError(f"{kind.value} cut needs multipliers of a {expected} problem, got {D.kind}")
    if kind is CutKind.FEASIBILITY:
        return selection_cut(kind, PhaseSelection.from_matrix(G.B), obj)
    f1 = eval_f1(G, D, ch, cfg)
    const, coeff = eval_f2_coeffs(D, ch)
    cut = Cut(kind=kind, const=obj + f1 + const, coeff=coeff)
    logger.debug(f"[cut] {kind.value} obj={obj:.6g} f1={f1:.3e} rhs(B_t)={cut.rhs(G.B):.6g}")
    return cut


__all__ = ['CutKind', 'Cut', 'LiftedVars', 'DualSet', 'formulate', 'build_primal', 'build_feasibility',
           'lifted_vars', 'recover_duals', 'qos_gradient', 'lifted_multiplier', 'lift_price', 'eval_f1',
           'eval_f2_coeffs', 'eval_f2', 'selection_cut', 'make_cut', 'trace_budget']
