"""
Penalty-based successive convex approximation for the phase selection.

The binary constraint on b_n[l] is replaced by 0 <= b <= 1 plus the penalty
sum (b - b^2), which vanishes exactly on binary matrices. Its concave part is
linearized at the previous iterate,

    b - b^2 <= b - 2 b_prev b + b_prev^2,

so every subproblem is the convex lifted program with a relaxed selection
and a linear penalty. The outer loop shrinks mu until the iterate is binary,
then the rounded selection is re-solved with a fixed-B power minimization.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from irs_alloc.conic import ConeProgram, ConicStatus, ToleranceSet, solve
from irs_alloc.model import (Beamformer, ChannelSet, PhaseSelection, ScenarioConfig, condition,
                             verify_qos)
from irs_alloc.reform import build_primal, formulate, lift_price

logger = logging.getLogger(__name__)

### SCA INFO
DEFAULT_MU0 = 1e-3
DEFAULT_MU_SHRINK = 0.1
DEFAULT_DELTA_SCA = 1e-3
DEFAULT_BINARY_TOL = 1e-4
DEFAULT_MAX_OUTER = 6
DEFAULT_MAX_INNER = 30
DEFAULT_RESTARTS = 3
DEFAULT_PENALTY_SCALE = 1.0
RELAXED_BOX_TOL = 1e-9
SCA_LIFT_SHARE = 1e-2


class ScaStatus(str, Enum):
    CONVERGED = "converged"
    NOT_BINARY = "not_binary"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class ScaConfig:
    """
    Attributes:
        mu0: Initial penalty parameter (the penalty is weighted by 1/mu).
        mu_shrink: Factor applied to mu after a non-binary stage.
        delta_sca: Relative change ||B_prev - B||_F / ||B_prev||_F ending a stage.
        binary_tol: Largest min(b, 1 - b) accepted as binary.
        max_outer: Number of mu reductions before giving up.
        max_inner: Iteration cap per stage.
        restarts: Extra random starts tried while no start has converged to a feasible binary design.
        penalty_scale: Price of one unit of penalty, as a fraction of the reference power.
    """
    mu0: float = DEFAULT_MU0
    mu_shrink: float = DEFAULT_MU_SHRINK
    delta_sca: float = DEFAULT_DELTA_SCA
    binary_tol: float = DEFAULT_BINARY_TOL
    max_outer: int = DEFAULT_MAX_OUTER
    max_inner: int = DEFAULT_MAX_INNER
    restarts: int = DEFAULT_RESTARTS
    penalty_scale: float = DEFAULT_PENALTY_SCALE

    def __post_init__(self):
        if self.mu0 <= 0:
            raise ValueError(f"mu0 must be positive, got {self.mu0}")
        if not 0 < self.mu_shrink < 1:
            raise ValueError(f"mu_shrink must lie in (0, 1), got {self.mu_shrink}")
        if self.delta_sca <= 0 or self.binary_tol <= 0 or self.penalty_scale <= 0:
            raise ValueError("delta_sca, binary_tol and penalty_scale must be positive")
        if self.max_outer < 0 or self.max_inner < 1 or self.restarts < 0:
            raise ValueError("iteration caps must be nonnegative (max_inner >= 1)")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> 'ScaConfig':
        return cls(**dict(data or {}))


def _body(B: np.ndarray, N: Optional[int] = None) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    return B if N is None else B[:, :N]


def penalty(B: np.ndarray) -> float:
    """sum (b - b^2) over a relaxed L x N selection body."""
    B = _body(B)
    return float(np.sum(B - B ** 2))


def linearized_penalty(B: np.ndarray, B_prev: np.ndarray) -> float:
    """sum (b - 2 b_prev b + b_prev^2); never below penalty(B)."""
    B, B_prev = _body(B), _body(B_prev)
    return float(np.sum(B - 2.0 * B_prev * B + B_prev ** 2))


def surrogate_objective(power: float, B: np.ndarray, B_prev: np.ndarray, mu: float,
                        weight: float = 1.0) -> float:
    return power + weight / mu * linearized_penalty(B, B_prev)


def penalized_objective(power: float, B: np.ndarray, mu: float, weight: float = 1.0) -> float:
    return power + weight / mu * penalty(B)


def binary_gap(B: np.ndarray) -> float:
    """max over entries of min(b, 1 - b)."""
    B = _body(B)
    if B.size == 0:
        return 0.0
    return float(np.max(np.minimum(np.abs(B), np.abs(1.0 - B))))


def round_selection(B: np.ndarray) -> PhaseSelection:
    """Snaps each column of a relaxed L x N body to its largest entry."""
    B = _body(B)
    return PhaseSelection(idx=tuple(int(i) for i in np.argmax(B, axis=0)), L=B.shape[0])


def sca_subproblem(B_prev: np.ndarray, mu: float, ch: ChannelSet, cfg: ScenarioConfig,
                   weight: float = 1.0, price: float = 0.0) -> ConeProgram:
    """
    Convex subproblem around B_prev.

    Args:
        B_prev: Previous relaxed selection, L x N (or L x (N+1); the fixed column is ignored).
        mu: Penalty parameter.
        ch, cfg: Scenario.
        weight: Price of one unit of penalty in the program's power units.
        price: Price of sum_k Tr T_k, which keeps the lift blocks tight.

    Returns:
        ConeProgram minimizing sum ||w_k||^2 + (weight/mu) * linearized_penalty(B, B_prev)
        + price * sum_k Tr T_k.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    if price < 0:
        raise ValueError(f"price must be nonnegative, got {price}")
    B_prev = _body(B_prev, cfg.N)
    if B_prev.shape != (cfg.L, cfg.N):
        raise ValueError(f"previous selection must be {cfg.L} x {cfg.N}, got {B_prev.shape}")
    if np.any(B_prev < -RELAXED_BOX_TOL) or np.any(B_prev > 1 + RELAXED_BOX_TOL):
        raise ValueError("previous selection entries must lie in [0, 1]")
    builder, exprs = formulate(ch, cfg, B=None)
    body = exprs['B'][:, :cfg.N]
    lin = (body * (1.0 - 2.0 * B_prev)).sum() + float(np.sum(B_prev ** 2))
    objective = exprs['t'] + (weight / mu) * lin
    if price > 0:
        objective = objective + price * exprs['lift_cost']
    builder.minimize(objective)
    return builder.build(kind='relaxed', mu=mu, price=price)


@dataclass
class ScaStep:
    """
    Solved subproblem: relaxed selection body, internal power and the formulation payload.

    extra is the priced lift cost, counted in the penalized objective with the power.
    """
    B: np.ndarray
    power: float
    surrogate: float
    payload: Any = None
    extra: float = 0.0


@dataclass
class ScaRecord:
    stage: int
    mu: float
    inner: int
    power: float
    penalty: float
    objective: float
    surrogate: float
    rel_change: float


@dataclass
class ScaTrace:
    records: List[ScaRecord] = field(default_factory=list)
    restarts: int = 0

    def descent_violations(self, slack: float = 1e-9) -> List[str]:
        """Stages in which the penalized objective increased between accepted iterates."""
        issues = []
        for prev, cur in zip(self.records, self.records[1:]):
            if cur.stage != prev.stage:
                continue
            if cur.objective > prev.objective + slack * max(1.0, abs(prev.objective)):
                issues.append(f"objective rose in stage {cur.stage} at iteration {cur.inner}: "
                              f"{prev.objective:.9g} -> {cur.objective:.9g}")
        return issues

    def rows(self) -> List[Dict[str, Any]]:
        return [asdict(r) for r in self.records]

    def to_jsonl(self, path: str):
        with open(path, 'w') as f:
            for row in self.rows():
                f.write(json.dumps(row) + '\n')


def run_sca_loop(step: Callable[[np.ndarray, float], Optional[ScaStep]], B0: np.ndarray,
                 sca_cfg: ScaConfig, weight: float,
                 trace: Optional[ScaTrace] = None) -> Tuple[ScaStatus, Optional[ScaStep], ScaTrace]:
    """
    Drives the mu stages over any subproblem solver.

    Args:
        step: Solves the subproblem around (B_prev, mu); None when it has no certified solution.
        B0: Relaxed starting body, L x N.
        sca_cfg: Schedule and tolerances.
        weight: Penalty price used for the reported objectives.
        trace: Trace to append to.

    Returns:
        (status, last solved step, trace). INFEASIBLE only when the very first
        subproblem fails.
    """
    trace = trace or ScaTrace()
    B_prev = np.asarray(B0, dtype=float)
    mu = sca_cfg.mu0
    last: Optional[ScaStep] = None
    for stage in range(sca_cfg.max_outer + 1):
        for inner in range(1, sca_cfg.max_inner + 1):
            cur = step(B_prev, mu)
            if cur is None:
                if last is None:
                    return ScaStatus.INFEASIBLE, None, trace
                logger.warning(f"[SCA mu={mu:.0e} it {inner}] subproblem failed, keeping last iterate")
                return ScaStatus.NOT_BINARY, last, trace
            denom = np.linalg.norm(B_prev)
            rel = float(np.linalg.norm(B_prev - cur.B) / denom) if denom > 0 else 0.0
            pen = penalty(cur.B)
            trace.records.append(ScaRecord(stage, mu, inner, cur.power, pen,
                                           penalized_objective(cur.power + cur.extra, cur.B, mu, weight),
                                           cur.surrogate, rel))
            logger.debug(f"[SCA mu={mu:.0e} it {inner}] power={cur.power:.6g} penalty={pen:.3e} change={rel:.3e}")
            last, B_prev = cur, cur.B
            if rel <= sca_cfg.delta_sca:
                break
        gap = binary_gap(last.B)
        if gap <= sca_cfg.binary_tol:
            return ScaStatus.CONVERGED, last, trace
        logger.debug(f"[SCA mu={mu:.0e}] stage ended non-binary (gap {gap:.2e}), shrinking mu")
        mu *= sca_cfg.mu_shrink
    return ScaStatus.NOT_BINARY, last, trace


def dirichlet_start(N: int, L: int, rng: np.random.Generator) -> np.ndarray:
    """Relaxed L x N body with columns uniform on the simplex."""
    return rng.dirichlet(np.ones(L), size=N).T


def solve_relaxed(program: ConeProgram, tol: ToleranceSet):
    """Solves a subproblem, re-solving once with tighter steps after a numerical failure."""
    sol = solve(program, tol)
    if sol.status is ConicStatus.NUMERICAL_LIMIT:
        logger.warning(f"[SCA] subproblem hit {sol.status.value}, re-solving with tighter steps")
        sol = solve(program, tol.tighter())
    return sol


@dataclass(eq=False)
class ScaCandidate:
    """
    One random start carried through rounding and the fixed-selection re-solve.

    Attributes:
        status: Status of the relaxed loop, INFEASIBLE when it or the re-solve failed.
        selection: Rounded selection (None when the first subproblem failed).
        power: Re-solved power in internal units, inf when infeasible.
        gap: Binary gap of the last relaxed iterate.
        trace: History of this start.
        payload: Formulation-specific solution of the re-solve.
    """
    status: ScaStatus
    selection: Optional[PhaseSelection]
    power: float
    gap: float
    trace: ScaTrace
    payload: Any = None

    @property
    def feasible(self) -> bool:
        return bool(np.isfinite(self.power))


def best_of_starts(attempt: Callable[[int], ScaCandidate], restarts: int) -> ScaCandidate:
    """
    Runs attempt(0), attempt(1), ... until one converges to a feasible design or the starts run out.

    Returns:
        The feasible candidate of least power seen, or the last candidate when none was feasible.
    """
    best: Optional[ScaCandidate] = None
    for i in range(restarts + 1):
        cand = attempt(i)
        if cand.feasible and (best is None or cand.power < best.power):
            best = cand
        if cand.feasible and cand.status is ScaStatus.CONVERGED:
            break
        if i < restarts:
            logger.info(f"[SCA] start {i + 1} ended {cand.status.value} "
                        f"({'feasible' if cand.feasible else 'infeasible'}), drawing a new relaxed start")
    return best if best is not None else cand


@dataclass(eq=False)
class ScaResult:
    """
    Attributes:
        status: Outcome.
        selection: Rounded phase selection.
        beamformer: Physical beamformer re-optimized at the rounded selection.
        power: Transmit power in watts (inf when the rounded selection is infeasible).
        iterations: Total subproblems solved.
        trace: Per-iteration history.
        binary_gap: Distance of the last relaxed iterate from binary, before rounding.
        metadata: Choices made after the loop.
    """
    status: ScaStatus
    selection: Optional[PhaseSelection]
    beamformer: Optional[Beamformer]
    power: float
    iterations: int
    trace: ScaTrace
    binary_gap: float = 0.0
    metadata: Dict[str, Any] = field(default_factory=dict)


def solve_sca(ch: ChannelSet, cfg: ScenarioConfig, sca_cfg: Optional[ScaConfig] = None, seed: int = 0,
              tol: Optional[ToleranceSet] = None) -> ScaResult:
    """
    Locally optimal joint design by penalized successive convex approximation.

    Each start is rounded and re-solved at its selection. A start that ends
    non-binary or with an infeasible rounding triggers a fresh start, up to
    sca_cfg.restarts extra ones; the least-power feasible design is returned.

    Args:
        ch, cfg: Scenario in physical units.
        sca_cfg: Schedule; defaults to ScaConfig().
        seed: Seed of the random relaxed starts.
        tol: Conic solver tolerances.

    Returns:
        ScaResult with an exactly one-hot selection.
    """
    sca_cfg = sca_cfg or ScaConfig()
    tol = tol or ToleranceSet()
    ch_int, cfg_int, cond = condition(ch, cfg)
    meta: Dict[str, Any] = {'beamformer': 're-optimized at the rounded selection'}
    if np.all(cfg.gamma == 0):
        sel = PhaseSelection.first(cfg.N, cfg.L)
        return ScaResult(ScaStatus.CONVERGED, sel, Beamformer(np.zeros((cfg.M, cfg.K))), 0.0, 1, ScaTrace(),
                         metadata=meta)
    rng = np.random.default_rng(seed)
    weight = sca_cfg.penalty_scale
    price = lift_price(np.stack([ch_int.Fhat(k) for k in range(cfg.K)]), SCA_LIFT_SHARE)

    def step(B_prev: np.ndarray, mu: float) -> Optional[ScaStep]:
        program = sca_subproblem(B_prev, mu, ch_int, cfg_int, weight, price)
        sol = solve_relaxed(program, tol)
        if not sol.optimal:
            return None
        pool = program.layout
        W = pool.value('W', sol.x)
        extra = price * float(sum(np.real(np.trace(pool.value(f'T{k}', sol.x))) for k in range(cfg.K)))
        return ScaStep(B=np.clip(pool.value('B', sol.x), 0.0, 1.0), power=float(np.sum(np.abs(W) ** 2)),
                       surrogate=sol.obj, payload=W, extra=extra)

    def attempt(i: int) -> ScaCandidate:
        status, gap, trace = ScaStatus.CONVERGED, 0.0, ScaTrace(restarts=i)
        if cfg.N == 0:
            sel = PhaseSelection.first(0, cfg.L)
        else:
            status, last, trace = run_sca_loop(step, dirichlet_start(cfg.N, cfg.L, rng), sca_cfg, weight, trace)
            if last is None:
                return ScaCandidate(ScaStatus.INFEASIBLE, None, np.inf, 0.0, trace)
            gap, sel = binary_gap(last.B), round_selection(last.B)
        program = build_primal(sel, ch_int, cfg_int)
        sol = solve_relaxed(program, tol)
        if not sol.optimal:
            logger.info(f"[SCA] rounded selection {sel.idx} is not feasible ({sol.status.value})")
            return ScaCandidate(ScaStatus.INFEASIBLE, sel, np.inf, gap, trace)
        W = program.layout.value('W', sol.x)
        return ScaCandidate(status, sel, float(np.sum(np.abs(W) ** 2)), gap, trace, payload=W)

    best = best_of_starts(attempt, sca_cfg.restarts if cfg.N > 0 else 0)
    iterations = max(1, len(best.trace.records))
    meta['start'] = best.trace.restarts
    if not best.feasible:
        logger.info(f"[SCA] infeasible from {sca_cfg.restarts + 1} random starts")
        return ScaResult(ScaStatus.INFEASIBLE, best.selection, None, np.inf, iterations, best.trace, best.gap, meta)
    W = cond.beamformer(best.payload)
    power = W.power
    report = verify_qos(W, best.selection, ch, cfg)
    if not report.ok:
        logger.warning(f"[SCA] rounded design misses QoS, min slack {np.min(report.slack):.2e}")
    logger.info(f"[SCA] {best.status.value} after {iterations} iterations: power={power:.6e} W "
                f"at {best.selection.idx}")
    return ScaResult(best.status, best.selection, W, power, iterations, best.trace, best.gap, meta)


__all__ = ['ScaConfig', 'ScaStatus', 'ScaResult', 'ScaTrace', 'ScaRecord', 'ScaStep', 'penalty',
           'linearized_penalty', 'surrogate_objective', 'penalized_objective', 'binary_gap', 'round_selection',
           'sca_subproblem', 'run_sca_loop', 'dirichlet_start', 'solve_relaxed', 'ScaCandidate', 'best_of_starts',
           'solve_sca']
