"""
Generalized Benders decomposition over the discrete phase selection.

Each iteration solves the convex problem for the current selection (or its
l1 feasibility check when it is infeasible), turns the multipliers into a cut
that is affine in the selection entries, and re-solves the mixed-binary master

    min eta  s.t.  eta >= rhs_c(B)  for every optimality cut c
                     0 >= rhs_c(B)  for every feasibility cut c
                   sum_l b_n[l] = 1, b_n[l] in {0, 1}

whose optimum is a lower bound on the global minimum power. The best primal
objective seen so far is the upper bound.

The driver talks to the problem through a GbdAdapter, so the same loop runs
the perfect-CSI and the robust formulations.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Protocol, Set, Tuple

import numpy as np

from irs_alloc.conic import ConeProgram, ConicSolution, ConicStatus, ToleranceSet, solve
from irs_alloc.milp import MilpProblem, MilpStatus, MilpTolerance, solve_milp
from irs_alloc.model import Beamformer, ChannelSet, PhaseSelection, ScenarioConfig, condition, verify_qos
from irs_alloc.reform import (Cut, CutKind, build_feasibility, build_primal, lifted_vars, make_cut,
                              recover_duals, selection_cut)

logger = logging.getLogger(__name__)

### GBD INFO
DEFAULT_DELTA = 1e-3
GAP_FLOOR = 1e-12
FEASIBLE_SLACK = 1e-9
CUT_TIGHTNESS = 1e-6
MASTER_TOLERANCE = MilpTolerance(abs_gap=0.0, rel_gap=1e-7)


class GbdStatus(str, Enum):
    CONVERGED = "converged"
    NOT_CONVERGED = "not_converged"
    GLOBALLY_INFEASIBLE = "globally_infeasible"


class GbdAborted(RuntimeError):
    """No certified cut could be produced for a selection."""

    def __init__(self, message: str, selection: PhaseSelection):
        super().__init__(message)
        self.selection = selection


@dataclass(eq=False)
class SubproblemOutcome:
    """
    One solve of the fixed-selection program.

    Attributes:
        kind: "primal" or "feasibility".
        status: Conic status of the solve.
        selection: The selection it was solved for.
        obj: Transmit power (primal) or slack sum (feasibility) in internal units.
        vars: Formulation-specific primal point.
        duals: Formulation-specific multipliers; None for closed-form outcomes.
        program, solution: The conic program and its raw solution, when solved.
        info: Extra diagnostics (stationarity, rank ratios, ...).
    """
    kind: str
    status: ConicStatus
    selection: PhaseSelection
    obj: float
    vars: Any = None
    duals: Any = None
    program: Optional[ConeProgram] = None
    solution: Optional[ConicSolution] = None
    info: Dict[str, Any] = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is ConicStatus.OPTIMAL


class GbdAdapter(Protocol):
    """Problem side of the decomposition."""
    N: int
    L: int
    power_scale: float

    def initial_selection(self, seed: int) -> PhaseSelection:
        ...

    def primal(self, sel: PhaseSelection, tol: ToleranceSet) -> SubproblemOutcome:
        ...

    def feasibility(self, sel: PhaseSelection, tol: ToleranceSet) -> SubproblemOutcome:
        ...

    def optimality_cut(self, outcome: SubproblemOutcome) -> Cut:
        ...

    def feasibility_cut(self, outcome: SubproblemOutcome) -> Cut:
        ...

    def beamformer(self, outcome: SubproblemOutcome) -> Beamformer:
        ...


class PerfectCsiAdapter:
    """
    GBD adapter for the perfect-CSI formulation.

    The scenario is conditioned once; every program is solved in internal units
    and power_scale converts powers back to watts.
    """

    def __init__(self, ch: ChannelSet, cfg: ScenarioConfig):
        ch.check(cfg)
        self.raw_ch, self.raw_cfg = ch, cfg
        self.ch, self.cfg, self.conditioning = condition(ch, cfg)
        self.N, self.L = cfg.N, cfg.L

    @property
    def power_scale(self) -> float:
        return self.conditioning.power_scale

    def initial_selection(self, seed: int) -> PhaseSelection:
        return PhaseSelection.random(self.N, self.L, np.random.default_rng(seed))

    def _vacuous(self) -> bool:
        return bool(np.all(self.cfg.gamma == 0))

    def primal(self, sel: PhaseSelection, tol: ToleranceSet) -> SubproblemOutcome:
        if self._vacuous():
            return SubproblemOutcome('primal', ConicStatus.OPTIMAL, sel, 0.0,
                                     vars=Beamformer(np.zeros((self.cfg.M, self.cfg.K))))
        program = build_primal(sel, self.ch, self.cfg)
        sol = solve(program, tol)
        out = SubproblemOutcome('primal', sol.status, sel, np.inf, program=program, solution=sol)
        if sol.optimal:
            out.vars = lifted_vars(program, sol)
            out.duals = recover_duals(sol, program)
            out.obj = out.vars.W.power
            out.info['stationarity'] = out.duals.stationarity
        return out

    def feasibility(self, sel: PhaseSelection, tol: ToleranceSet) -> SubproblemOutcome:
        program = build_feasibility(sel, self.ch, self.cfg)
        sol = solve(program, tol)
        out = SubproblemOutcome('feasibility', sol.status, sel, np.inf, program=program, solution=sol)
        if sol.optimal:
            out.vars = lifted_vars(program, sol)
            out.duals = recover_duals(sol, program)
            out.obj = float(np.sum(out.vars.lam))
        return out

    def optimality_cut(self, outcome: SubproblemOutcome) -> Cut:
        if outcome.duals is None:
            return Cut(CutKind.OPTIMALITY, outcome.obj, np.zeros((self.N, self.L)))
        return make_cut(CutKind.OPTIMALITY, outcome.vars, outcome.duals, outcome.obj, self.ch, self.cfg)

    def feasibility_cut(self, outcome: SubproblemOutcome) -> Cut:
        value = max(outcome.obj, 1.0) if np.isfinite(outcome.obj) else 1.0
        if outcome.duals is None:
            return selection_cut(CutKind.FEASIBILITY, outcome.selection, value)
        return make_cut(CutKind.FEASIBILITY, outcome.vars, outcome.duals, value, self.ch, self.cfg)

    def beamformer(self, outcome: SubproblemOutcome) -> Beamformer:
        W = outcome.vars if isinstance(outcome.vars, Beamformer) else outcome.vars.W
        return self.conditioning.beamformer(W.W)


@dataclass
class GbdRecord:
    """
    One iteration of the decomposition, in internal power units.

    Attributes:
        i: Iteration number, from 1.
        feasible: Whether the primal was solvable (i in F) or not (i in I).
        selection: Phase indices solved in this iteration.
        obj: Primal power, or slack sum for infeasible iterations.
        UB, LB: Bounds after the iteration.
        eta: Master objective.
        master_nodes: Branch-and-bound nodes of the master.
        wall_time: Seconds spent in the iteration.
    """
    i: int
    feasible: bool
    selection: Tuple[int, ...]
    obj: float
    UB: float
    LB: float
    eta: float
    master_nodes: int
    wall_time: float


@dataclass
class GbdTrace:
    records: List[GbdRecord] = field(default_factory=list)
    status: Optional[GbdStatus] = None
    power_scale: float = 1.0

    @property
    def feasible_iterations(self) -> Set[int]:
        return {r.i for r in self.records if r.feasible}

    @property
    def infeasible_iterations(self) -> Set[int]:
        return {r.i for r in self.records if not r.feasible}

    def violations(self, tol: float = 1e-9) -> List[str]:
        """Broken bound or no-repeat properties of the trace; empty when all hold."""
        issues = []
        seen = set()
        for r in self.records:
            if np.isfinite(r.UB) and r.UB < r.LB - tol * max(1.0, abs(r.UB)):
                issues.append(f"LB exceeds UB at iteration {r.i}")
        for prev, cur in zip(self.records, self.records[1:]):
            if cur.UB > prev.UB + tol * max(1.0, abs(prev.UB)):
                issues.append(f"UB increased at iteration {cur.i}")
            if cur.LB < prev.LB - tol * max(1.0, abs(prev.LB)):
                issues.append(f"LB decreased at iteration {cur.i}")
        for r in self.records:
            if r.selection in seen:
                issues.append(f"selection {r.selection} repeated at iteration {r.i}")
            seen.add(r.selection)
        return issues

    def rows(self) -> List[Dict[str, Any]]:
        """One document per iteration, powers in watts."""
        out = []
        for r in self.records:
            row = asdict(r)
            row['selection'] = list(r.selection)
            for key in ('UB', 'LB', 'eta'):
                row[key] = _finite_or_none(row[key] * self.power_scale)
            if r.feasible:
                row['obj'] = r.obj * self.power_scale
            else:
                row['slack_sum'] = _finite_or_none(row.pop('obj'))
            out.append(row)
        return out

    def to_jsonl(self, path: str):
        with open(path, 'w') as f:
            for row in self.rows():
                f.write(json.dumps(row) + '\n')


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


@dataclass(eq=False)
class GbdResult:
    """
    Attributes:
        status: Outcome of the run.
        selection: Best phase selection (None when globally infeasible).
        beamformer: Physical beamformer at the best selection.
        power: Best transmit power in watts (inf when infeasible).
        trace: Iteration history.
        outcome: Internal subproblem outcome of the best selection.
    """
    status: GbdStatus
    selection: Optional[PhaseSelection]
    beamformer: Optional[Beamformer]
    power: float
    trace: GbdTrace
    outcome: Optional[SubproblemOutcome] = None

    @property
    def iterations(self) -> int:
        return len(self.trace.records)


def assemble_master(cuts: List[Cut], N: int, L: int) -> MilpProblem:
    """
    Mixed-binary master over x = [b_1[0..L-1], ..., b_N[0..L-1], eta].

    Args:
        cuts: Accumulated cut pool, at least one cut.
        N, L: Selection dimensions.

    Returns:
        MilpProblem minimizing eta >= 0 (power is nonnegative).
    """
    if not cuts:
        raise ValueError("the master needs at least one cut")
    nb = N * L
    rows, rhs = [], []
    for cut in cuts:
        if cut.coeff.shape != (N, L):
            raise ValueError(f"cut coefficients have shape {cut.coeff.shape}, expected {(N, L)}")
        row = np.zeros(nb + 1)
        row[:nb] = cut.coeff.reshape(-1)
        row[nb] = -cut.eta_coeff
        rows.append(row)
        rhs.append(-cut.const)
    A_eq = np.zeros((N, nb + 1))
    for n in range(N):
        A_eq[n, n * L:(n + 1) * L] = 1.0
    c = np.zeros(nb + 1)
    c[nb] = 1.0
    lower = np.full(nb + 1, -np.inf)
    lower[nb] = 0.0
    return MilpProblem(c=c, A_ineq=np.array(rows), b_ineq=np.array(rhs), A_eq=A_eq, b_eq=np.ones(N),
                       binary_idx=range(nb), lower=lower)


def _master_selection(x: np.ndarray, N: int, L: int) -> PhaseSelection:
    body = np.asarray(x[:N * L]).reshape(N, L)
    return PhaseSelection(idx=tuple(int(i) for i in np.argmax(body, axis=1)), L=L)


def _solve_selection(adapter: GbdAdapter, sel: PhaseSelection, tol: ToleranceSet) -> SubproblemOutcome:
    """Primal solve with one tighter re-solve, falling back to the feasibility check."""
    out = adapter.primal(sel, tol)
    if out.status in (ConicStatus.NUMERICAL_LIMIT, ConicStatus.DUAL_INFEASIBLE):
        logger.warning(f"[GBD] primal at {sel.idx} ended {out.status.value}, re-solving with tighter steps")
        out = adapter.primal(sel, tol.tighter())
    if out.optimal:
        return out
    feas = adapter.feasibility(sel, tol)
    if not feas.optimal:
        logger.warning(f"[GBD] feasibility check at {sel.idx} ended {feas.status.value}, re-solving")
        feas = adapter.feasibility(sel, tol.tighter())
    if not feas.optimal and out.status is ConicStatus.PRIMAL_INFEASIBLE:
        logger.warning(f"[GBD] primal at {sel.idx} is infeasible but its feasibility check ended "
                       f"{feas.status.value}, excluding the selection alone")
        return SubproblemOutcome('feasibility', ConicStatus.PRIMAL_INFEASIBLE, sel, np.inf)
    if not feas.optimal:
        raise GbdAborted(f"no certified cut at selection {sel.idx}: primal {out.status.value}, "
                         f"feasibility check {feas.status.value}", sel)
    if out.status is not ConicStatus.PRIMAL_INFEASIBLE and feas.obj <= FEASIBLE_SLACK:
        raise GbdAborted(f"selection {sel.idx} looks feasible (slack sum {feas.obj:.2e}) "
                         "but its power problem could not be certified", sel)
    return feas


def _checked_cut(cut: Cut, out: SubproblemOutcome) -> Cut:
    """Optimality cut that reproduces the solved power at its own selection."""
    gap = abs(cut.rhs(out.selection) - out.obj)
    if gap <= CUT_TIGHTNESS * max(1.0, abs(out.obj)):
        return cut
    logger.warning(f"[GBD] cut at {out.selection.idx} misses the solved power by {gap:.2e}, "
                   "using the selection cut instead")
    return selection_cut(CutKind.OPTIMALITY, out.selection, out.obj)


def _gap_closed(UB: float, LB: float, delta: float) -> bool:
    return bool(np.isfinite(UB) and UB - LB <= delta * abs(UB) + GAP_FLOOR)


def solve_gbd(adapter: GbdAdapter, delta: float = DEFAULT_DELTA, max_iter: Optional[int] = None,
              seed: int = 0, tol: Optional[ToleranceSet] = None,
              master_tol: Optional[MilpTolerance] = None) -> GbdResult:
    """
    Runs the decomposition until UB - LB <= delta * |UB|.

    Args:
        adapter: Problem adapter.
        delta: Relative convergence gap.
        max_iter: Iteration cap; defaults to L**N + 1.
        seed: Seed of the random initial selection.
        tol: Conic solver tolerances of the subproblems.
        master_tol: Branch-and-bound tolerances of the master.

    Returns:
        GbdResult with the best selection, its beamformer and power in watts.

    Raises:
        GbdAborted: A selection could not be certified either way.
    """
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    N, L = adapter.N, adapter.L
    max_iter = max_iter if max_iter is not None else L ** N + 1
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    tol = tol or ToleranceSet()
    master_tol = master_tol or MASTER_TOLERANCE
    trace = GbdTrace(power_scale=adapter.power_scale)
    cuts: List[Cut] = []
    UB, LB = np.inf, -np.inf
    best: Optional[SubproblemOutcome] = None
    seen: Set[Tuple[int, ...]] = set()
    sel = adapter.initial_selection(seed)
    status = GbdStatus.NOT_CONVERGED

    for i in range(1, max_iter + 1):
        if sel.idx in seen:
            if _gap_closed(UB, LB, delta):
                logger.info(f"[GBD {i}] master returned visited selection {sel.idx} with the gap closed")
                status = GbdStatus.CONVERGED
            else:
                logger.warning(f"[GBD {i}] master returned visited selection {sel.idx} with "
                               f"UB={UB:.6g} LB={LB:.6g}, stopping unconverged")
            break
        seen.add(sel.idx)
        start = time.perf_counter()
        out = _solve_selection(adapter, sel, tol)
        if out.kind == 'primal':
            cuts.append(_checked_cut(adapter.optimality_cut(out), out))
            if out.obj < UB:
                UB, best = out.obj, out
        else:
            cuts.append(adapter.feasibility_cut(out))
        master = solve_milp(assemble_master(cuts, N, L), master_tol)
        if master.status is MilpStatus.INFEASIBLE:
            trace.records.append(GbdRecord(i, out.kind == 'primal', sel.idx, out.obj, UB, LB, np.inf,
                                           master.node_count, time.perf_counter() - start))
            if best is None:
                status = GbdStatus.GLOBALLY_INFEASIBLE
                logger.info(f"[GBD {i}] every selection is cut off: QoS infeasible for all phase configurations")
            elif _gap_closed(UB, LB, delta):
                status = GbdStatus.CONVERGED
            else:
                logger.warning(f"[GBD {i}] master infeasible with an incumbent, keeping UB={UB:.6g} "
                               f"at LB={LB:.6g}")
            break
        if not master.optimal:
            raise GbdAborted(f"master problem ended {master.status.value}", sel)
        eta = float(master.x[-1])
        LB = max(LB, eta)
        trace.records.append(GbdRecord(i, out.kind == 'primal', sel.idx, out.obj, UB, LB, eta,
                                       master.node_count, time.perf_counter() - start))
        logger.debug(f"[GBD {i}] {out.kind} at {sel.idx} obj={out.obj:.6g} UB={UB:.6g} LB={LB:.6g} "
                     f"nodes={master.node_count}")
        if _gap_closed(UB, LB, delta):
            status = GbdStatus.CONVERGED
            break
        sel = _master_selection(master.x, N, L)

    trace.status = status
    if best is None:
        if status is GbdStatus.NOT_CONVERGED:
            logger.warning(f"[GBD] no feasible selection found in {len(trace.records)} iterations")
        return GbdResult(status, None, None, np.inf, trace)
    power = best.obj * adapter.power_scale
    logger.info(f"[GBD] {status.value} after {len(trace.records)} iterations: power={power:.6e} W "
                f"at {best.selection.idx}, gap={UB - LB:.3e}")
    return GbdResult(status, best.selection, adapter.beamformer(best), power, trace, best)


def gbd_perfect_csi(ch: ChannelSet, cfg: ScenarioConfig, delta: float = DEFAULT_DELTA, seed: int = 0,
                    max_iter: Optional[int] = None, tol: Optional[ToleranceSet] = None) -> GbdResult:
    """Convenience front end: conditions the scenario and runs the decomposition."""
    result = solve_gbd(PerfectCsiAdapter(ch, cfg), delta=delta, max_iter=max_iter, seed=seed, tol=tol)
    if result.beamformer is not None:
        report = verify_qos(result.beamformer, result.selection, ch, cfg)
        if not report.ok:
            logger.warning(f"[GBD] returned design misses QoS, min slack {np.min(report.slack):.2e}")
    return result


@dataclass(eq=False)
class FixedResult:
    """Power minimization at one given selection."""
    status: ConicStatus
    selection: PhaseSelection
    beamformer: Optional[Beamformer]
    power: float
    outcome: SubproblemOutcome

    @property
    def feasible(self) -> bool:
        return self.status is ConicStatus.OPTIMAL


def solve_fixed(adapter: GbdAdapter, sel: PhaseSelection, tol: Optional[ToleranceSet] = None) -> FixedResult:
    """Solves the primal at `sel`, with one tighter re-solve after a numerical failure."""
    tol = tol or ToleranceSet()
    out = adapter.primal(sel, tol)
    if out.status in (ConicStatus.NUMERICAL_LIMIT, ConicStatus.DUAL_INFEASIBLE):
        logger.warning(f"[fixed] primal at {sel.idx} ended {out.status.value}, re-solving with tighter steps")
        out = adapter.primal(sel, tol.tighter())
    if not out.optimal:
        return FixedResult(out.status, sel, None, np.inf, out)
    return FixedResult(out.status, sel, adapter.beamformer(out), out.obj * adapter.power_scale, out)


__all__ = ['GbdStatus', 'GbdAborted', 'GbdAdapter', 'PerfectCsiAdapter', 'SubproblemOutcome', 'GbdRecord',
           'GbdTrace', 'GbdResult', 'assemble_master', 'solve_gbd', 'gbd_perfect_csi', 'FixedResult',
           'solve_fixed']
