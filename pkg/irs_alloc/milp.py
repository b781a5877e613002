"""
Best-first branch and bound for mixed-binary linear programs.

    minimize    c'x
    subject to  A_ineq x <= b_ineq,  A_eq x = b_eq,  lower <= x <= upper
                x_i in {0, 1} for i in binary_idx

Relaxations go through the interior-point LP path of irs_alloc.conic. Equality
rows that read "sum of some binaries = 1" are recognized as one-hot groups:
setting one member to 1 fixes the rest of the group to 0.
"""
import heapq
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from irs_alloc.conic import ConicStatus, ToleranceSet, solve_lp

logger = logging.getLogger(__name__)

### BRANCH AND BOUND INFO
DEFAULT_ABS_GAP = 1e-6
DEFAULT_INT_TOL = 1e-6
DEFAULT_NODE_LIMIT = 100000
FEAS_TOL = 1e-9


class MilpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NODE_LIMIT = "node_limit"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class MilpTolerance:
    """
    Attributes:
        abs_gap: Nodes whose bound is within abs_gap of the incumbent are pruned.
        rel_gap: Additional pruning margin relative to |incumbent|.
        int_tol: Distance from {0, 1} at which a relaxed binary counts as integral.
        node_limit: Maximum number of evaluated nodes.
        workers: Threads evaluating node relaxations in batches (1 = sequential).
    """
    abs_gap: float = DEFAULT_ABS_GAP
    rel_gap: float = 0.0
    int_tol: float = DEFAULT_INT_TOL
    node_limit: int = DEFAULT_NODE_LIMIT
    workers: int = 1

    def __post_init__(self):
        if self.abs_gap < 0 or self.rel_gap < 0:
            raise ValueError("gap tolerances must be nonnegative")
        if not 0 < self.int_tol < 0.5:
            raise ValueError(f"int_tol must lie in (0, 0.5), got {self.int_tol}")
        if self.node_limit < 1 or self.workers < 1:
            raise ValueError("node_limit and workers must be >= 1")

    def margin(self, incumbent: float) -> float:
        if not np.isfinite(incumbent):
            return 0.0
        return self.abs_gap + self.rel_gap * abs(incumbent)


@dataclass(eq=False)
class MilpProblem:
    """
    Mixed-binary LP data. Missing blocks default to empty; bounds default to
    [0, 1] for binaries and (-inf, inf) for continuous variables.
    """
    c: np.ndarray
    A_ineq: Optional[np.ndarray] = None
    b_ineq: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    binary_idx: Sequence[int] = ()
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_ineq = np.zeros((0, n)) if self.A_ineq is None else np.asarray(self.A_ineq, dtype=float).reshape(-1, n)
        self.b_ineq = np.zeros(0) if self.b_ineq is None else np.asarray(self.b_ineq, dtype=float).ravel()
        self.A_eq = np.zeros((0, n)) if self.A_eq is None else np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        self.binary_idx = tuple(sorted(int(i) for i in self.binary_idx))
        if self.A_ineq.shape[0] != self.b_ineq.size or self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("constraint matrices and right-hand sides disagree in length")
        if any(not 0 <= i < n for i in self.binary_idx) or len(set(self.binary_idx)) != len(self.binary_idx):
            raise ValueError(f"binary indices must be distinct and within [0, {n - 1}]")
        lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).ravel()
        upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).ravel()
        binaries = list(self.binary_idx)
        lower[binaries] = np.maximum(np.where(np.isfinite(lower[binaries]), lower[binaries], 0.0), 0.0)
        upper[binaries] = np.minimum(np.where(np.isfinite(upper[binaries]), upper[binaries], 1.0), 1.0)
        if np.any(lower > upper):
            raise ValueError("infeasible variable bounds")
        self.lower, self.upper = lower, upper

    @property
    def n(self) -> int:
        return self.c.size

    def one_hot_groups(self) -> List[Tuple[int, ...]]:
        """Equality rows of the form sum_{i in S} x_i = 1 over binaries only."""
        binaries = set(self.binary_idx)
        groups = []
        for row, rhs in zip(self.A_eq, self.b_eq):
            support = np.flatnonzero(row)
            if support.size < 2 or abs(rhs - 1.0) > FEAS_TOL:
                continue
            if np.all(np.abs(row[support] - 1.0) <= FEAS_TOL) and set(support.tolist()) <= binaries:
                groups.append(tuple(int(i) for i in support))
        return groups

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation at x."""
        worst = 0.0
        if self.b_ineq.size:
            worst = max(worst, float(np.max(self.A_ineq @ x - self.b_ineq)))
        if self.b_eq.size:
            worst = max(worst, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        worst = max(worst, float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0)))
        return worst


@dataclass(eq=False)
class MilpResult:
    """
    Attributes:
        status: Outcome.
        x: Best solution (binaries exactly 0/1), or None.
        obj: Objective at x (inf when none).
        node_count: Number of evaluated nodes.
        gap: Incumbent minus global lower bound at exit.
        bound: Global lower bound at exit.
        incumbents: (node count, objective) each time the incumbent improved.
        node_bounds: (node id, relaxation bound) of every evaluated node.
    """
    status: MilpStatus
    x: Optional[np.ndarray]
    obj: float
    node_count: int
    gap: float
    bound: float
    incumbents: List[Tuple[int, float]] = field(default_factory=list)
    node_bounds: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status is MilpStatus.OPTIMAL


class _Incumbent:
    """Shared best-solution cell; offers only win with a strictly better objective or a smaller node id on ties."""

    def __init__(self):
        self._lock = threading.Lock()
        self.obj = np.inf
        self.x: Optional[np.ndarray] = None
        self.node = -1

    def offer(self, obj: float, x: np.ndarray, node: int) -> bool:
        with self._lock:
            if obj < self.obj or (obj == self.obj and node < self.node):
                self.obj, self.x, self.node = obj, x, node
                return True
            return False

    def value(self) -> float:
        with self._lock:
            return self.obj


@dataclass(order=True)
class _Node:
    bound: float
    node_id: int
    fixed: Dict[int, int] = field(compare=False, default_factory=dict)
    depth: int = field(compare=False, default=0)


@dataclass(eq=False)
class _Relaxation:
    status: str
    obj: float = np.inf
    x: Optional[np.ndarray] = None


class BranchAndBound:
    """One branch-and-bound run; holds the tree and the incumbent."""

    def __init__(self, p: MilpProblem, tol: MilpTolerance, lp_tol: Optional[ToleranceSet] = None):
        self.p = p
        self.tol = tol
        self.lp_tol = lp_tol or ToleranceSet()
        self.groups = p.one_hot_groups()
        self.group_of: Dict[int, Tuple[int, ...]] = {}
        for group in self.groups:
            for i in group:
                self.group_of.setdefault(i, group)
        self.incumbent = _Incumbent()
        self.node_count = 0
        self.node_bounds: List[Tuple[int, float]] = []
        self.incumbents: List[Tuple[int, float]] = []

    def _reduced(self, fixed: Dict[int, int]):
        p = self.p
        free = np.array([i for i in range(p.n) if i not in fixed], dtype=int)
        xf = np.zeros(p.n)
        for i, v in fixed.items():
            xf[i] = v
        rows_ub = [p.A_ineq[:, free]]
        rhs_ub = [p.b_ineq - p.A_ineq @ xf]
        for bound, sign in ((p.upper, 1.0), (p.lower, -1.0)):
            finite = np.isfinite(bound[free])
            if np.any(finite):
                sel = free[finite]
                block = np.zeros((sel.size, free.size))
                block[np.arange(sel.size), np.flatnonzero(finite)] = sign
                rows_ub.append(block)
                rhs_ub.append(sign * bound[sel])
        A_ub, b_ub = np.vstack(rows_ub), np.concatenate(rhs_ub)
        A_eq, b_eq = p.A_eq[:, free], p.b_eq - p.A_eq @ xf
        return free, xf, A_ub, b_ub, A_eq, b_eq

    @staticmethod
    def _drop_empty(A: np.ndarray, b: np.ndarray, equality: bool):
        """Removes rows without coefficients; returns None when such a row is violated."""
        empty = ~np.any(A != 0, axis=1)
        if np.any(empty):
            bad = np.abs(b[empty]) > FEAS_TOL if equality else b[empty] < -FEAS_TOL
            if np.any(bad):
                return None
        keep = ~empty
        A, b = A[keep], b[keep]
        scale = np.max(np.abs(A), axis=1, initial=0.0)
        scale = np.where(scale > 0, scale, 1.0)
        return A / scale[:, None], b / scale

    def _solve_lp(self, fixed: Dict[int, int]) -> _Relaxation:
        p = self.p
        free, xf, A_ub, b_ub, A_eq, b_eq = self._reduced(fixed)
        ub = self._drop_empty(A_ub, b_ub, equality=False)
        eq = self._drop_empty(A_eq, b_eq, equality=True)
        if ub is None or eq is None:
            return _Relaxation('infeasible')
        if free.size == 0:
            return _Relaxation('optimal', float(p.c @ xf), xf)
        if ub[0].shape[0] == 0:
            return self._solve_equality_only(free, xf, eq)
        sol = solve_lp(p.c[free], ub[0], ub[1], eq[0], eq[1], self.lp_tol)
        if sol.status is ConicStatus.PRIMAL_INFEASIBLE:
            return _Relaxation('infeasible')
        if sol.status is ConicStatus.DUAL_INFEASIBLE:
            return _Relaxation('unbounded', -np.inf)
        x = xf.copy()
        x[free] = sol.x
        if sol.status is ConicStatus.NUMERICAL_LIMIT:
            return _Relaxation('numerical', float(p.c @ x), x)
        return _Relaxation('optimal', float(p.c @ x), x)

    def _solve_equality_only(self, free, xf, eq) -> _Relaxation:
        A, b = eq
        c = self.p.c[free]
        if A.shape[0] == 0:
            if np.any(c != 0):
                return _Relaxation('unbounded', -np.inf)
            return _Relaxation('optimal', float(self.p.c @ xf), xf)
        sol, *_ = np.linalg.lstsq(A, b, rcond=None)
        if np.max(np.abs(A @ sol - b)) > 1e-8:
            return _Relaxation('infeasible')
        y, *_ = np.linalg.lstsq(A.T, c, rcond=None)
        if np.max(np.abs(A.T @ y - c)) > 1e-8:
            return _Relaxation('unbounded', -np.inf)
        x = xf.copy()
        x[free] = sol
        return _Relaxation('optimal', float(self.p.c @ x), x)

    def _complete(self, x: np.ndarray) -> Optional[Tuple[float, np.ndarray]]:
        """Rounds the binaries of x and re-optimizes the continuous part; None if infeasible."""
        p = self.p
        fixed = {i: int(round(x[i])) for i in p.binary_idx}
        continuous = [i for i in range(p.n) if i not in fixed]
        xf = np.zeros(p.n)
        for i, v in fixed.items():
            xf[i] = v
        if len(continuous) == 1:
            point = self._one_dimensional(continuous[0], xf)
        else:
            relax = self._solve_lp(fixed)
            point = relax.x if relax.status == 'optimal' else None
            if point is not None:
                point[list(p.binary_idx)] = xf[list(p.binary_idx)]
        if point is None or p.violation(point) > 1e-7 * max(1.0, float(np.max(np.abs(point), initial=0.0))):
            return None
        return float(p.c @ point), point

    def _one_dimensional(self, j: int, xf: np.ndarray) -> Optional[np.ndarray]:
        """Exact optimum of a single continuous variable with the binaries fixed."""
        p = self.p
        lo, hi = p.lower[j], p.upper[j]
        residual = p.b_ineq - p.A_ineq @ xf
        col = p.A_ineq[:, j]
        for a, r in zip(col, residual):
            if a > 0:
                hi = min(hi, r / a)
            elif a < 0:
                lo = max(lo, r / a)
            elif r < -FEAS_TOL:
                return None
        eq_res = p.b_eq - p.A_eq @ xf
        eq_col = p.A_eq[:, j]
        pinned = None
        for a, r in zip(eq_col, eq_res):
            if a != 0:
                value = r / a
                if pinned is not None and abs(value - pinned) > FEAS_TOL * max(1.0, abs(value)):
                    return None
                pinned = value
            elif abs(r) > FEAS_TOL:
                return None
        if pinned is not None:
            lo, hi = max(lo, pinned), min(hi, pinned)
            value = pinned
        elif p.c[j] > 0:
            value = lo
        elif p.c[j] < 0:
            value = hi
        else:
            value = lo if np.isfinite(lo) else (hi if np.isfinite(hi) else 0.0)
        if lo > hi + FEAS_TOL * max(1.0, abs(lo)) or not np.isfinite(value):
            return None
        x = xf.copy()
        x[j] = value
        return x

    def _branch_variable(self, x: np.ndarray, fixed: Dict[int, int]) -> Optional[int]:
        best, best_frac = None, self.tol.int_tol
        for i in self.p.binary_idx:
            if i in fixed:
                continue
            frac = min(x[i], 1.0 - x[i])
            if frac > best_frac + 1e-15:
                best, best_frac = i, frac
        return best

    def _children(self, node: _Node, var: int) -> List[Dict[int, int]]:
        up = dict(node.fixed)
        up[var] = 1
        group = self.group_of.get(var)
        if group is not None:
            for i in group:
                if i != var:
                    up[i] = 0
        down = dict(node.fixed)
        down[var] = 0
        return [down, up]

    def _evaluate(self, nodes: List[_Node]) -> List[_Relaxation]:
        if self.tol.workers == 1 or len(nodes) == 1:
            return [self._solve_lp(node.fixed) for node in nodes]
        with ThreadPoolExecutor(max_workers=self.tol.workers) as pool:
            return list(pool.map(lambda node: self._solve_lp(node.fixed), nodes))

    def run(self) -> MilpResult:
        tol = self.tol
        heap: List[_Node] = [_Node(-np.inf, 0, {}, 0)]
        next_id = 1
        status = MilpStatus.OPTIMAL
        root_checked = False

        while heap:
            if self.node_count >= tol.node_limit:
                status = MilpStatus.NODE_LIMIT
                break
            batch = []
            while heap and len(batch) < tol.workers and self.node_count + len(batch) < tol.node_limit:
                node = heapq.heappop(heap)
                if node.bound >= self.incumbent.value() - tol.margin(self.incumbent.value()):
                    continue
                batch.append(node)
            if not batch:
                continue
            relaxations = self._evaluate(batch)
            for node, relax in zip(batch, relaxations):
                self.node_count += 1
                if relax.status == 'unbounded':
                    if not root_checked:
                        logger.warning("[BnB] relaxation is unbounded")
                        return MilpResult(MilpStatus.UNBOUNDED, None, -np.inf, self.node_count, np.inf, -np.inf,
                                          self.incumbents, self.node_bounds)
                    continue
                root_checked = True
                if relax.status == 'infeasible':
                    logger.debug(f"[BnB node {node.node_id}] infeasible (depth {node.depth})")
                    continue
                bound = node.bound if relax.status == 'numerical' else relax.obj
                self.node_bounds.append((node.node_id, bound))
                incumbent = self.incumbent.value()
                if bound >= incumbent - tol.margin(incumbent):
                    logger.debug(f"[BnB node {node.node_id}] pruned bound={bound:.9g} incumbent={incumbent:.9g}")
                    continue
                var = self._branch_variable(relax.x, node.fixed)
                if var is None:
                    done = self._complete(relax.x)
                    if done is not None and self.incumbent.offer(done[0], done[1], node.node_id):
                        self.incumbents.append((self.node_count, done[0]))
                        logger.debug(f"[BnB node {node.node_id}] incumbent {done[0]:.9g}")
                    if done is not None or all(i in node.fixed for i in self.p.binary_idx):
                        continue
                    var = next(i for i in self.p.binary_idx if i not in node.fixed)
                for fixed in self._children(node, var):
                    heapq.heappush(heap, _Node(bound, next_id, fixed, node.depth + 1))
                    next_id += 1

        best = self.incumbent
        open_bound = min((node.bound for node in heap), default=np.inf)
        if best.x is None:
            if status is MilpStatus.NODE_LIMIT:
                return MilpResult(status, None, np.inf, self.node_count, np.inf, open_bound,
                                  self.incumbents, self.node_bounds)
            logger.debug(f"[BnB] infeasible after {self.node_count} nodes")
            return MilpResult(MilpStatus.INFEASIBLE, None, np.inf, self.node_count, np.inf, np.inf,
                              self.incumbents, self.node_bounds)
        bound = min(best.obj, open_bound)
        logger.debug(f"[BnB] {status.value} obj={best.obj:.9g} nodes={self.node_count}")
        return MilpResult(status, best.x, best.obj, self.node_count, best.obj - bound, bound,
                          self.incumbents, self.node_bounds)


def solve_milp(p: MilpProblem, tol: Optional[MilpTolerance] = None,
               lp_tol: Optional[ToleranceSet] = None) -> MilpResult:
    """
    Solves a mixed-binary LP to global optimality within the gap tolerance.

    Args:
        p: Problem data.
        tol: Branch-and-bound tolerances; defaults to MilpTolerance().
        lp_tol: Tolerances of the LP relaxations.

    Returns:
        MilpResult; binaries in x are exactly 0 or 1.
    """
    return BranchAndBound(p, tol or MilpTolerance(), lp_tol).run()


def _continuous_optimum(p: MilpProblem, xb: np.ndarray, continuous: List[int]) -> Tuple[str, Optional[np.ndarray]]:
    """HiGHS solve of the continuous part with the binaries of xb fixed."""
    if not continuous:
        return 'optimal', xb
    binaries = list(p.binary_idx)
    fixed = xb[binaries]
    A_ub, A_eq = p.A_ineq[:, continuous], p.A_eq[:, continuous]
    bounds = [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi)
              for lo, hi in zip(p.lower[continuous], p.upper[continuous])]
    res = linprog(p.c[continuous],
                  A_ub=A_ub if A_ub.shape[0] else None,
                  b_ub=p.b_ineq - p.A_ineq[:, binaries] @ fixed if A_ub.shape[0] else None,
                  A_eq=A_eq if A_eq.shape[0] else None,
                  b_eq=p.b_eq - p.A_eq[:, binaries] @ fixed if A_eq.shape[0] else None,
                  bounds=bounds, method='highs')
    if res.status == 2:
        return 'infeasible', None
    if res.status == 3:
        return 'unbounded', None
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed on a fixed assignment: {res.message}")
    x = xb.copy()
    x[continuous] = res.x
    return 'optimal', x


def brute_force(p: MilpProblem) -> MilpResult:
    """
    Enumerates all binary assignments and solves the continuous part of each
    with HiGHS, outside the branch-and-bound code path.
    """
    binaries = list(p.binary_idx)
    continuous = [i for i in range(p.n) if i not in set(binaries)]
    best_obj, best_x = np.inf, None
    count = 0
    for bits in range(2 ** len(binaries)):
        x = np.zeros(p.n)
        for pos, i in enumerate(binaries):
            x[i] = (bits >> pos) & 1
        count += 1
        if np.any(x[binaries] < p.lower[binaries]) or np.any(x[binaries] > p.upper[binaries]):
            continue
        status, point = _continuous_optimum(p, x, continuous)
        if status == 'unbounded':
            return MilpResult(MilpStatus.UNBOUNDED, None, -np.inf, count, np.inf, -np.inf)
        if point is None or p.violation(point) > 1e-7 * max(1.0, float(np.max(np.abs(point), initial=0.0))):
            continue
        obj = float(p.c @ point)
        if obj < best_obj:
            best_obj, best_x = obj, point
    if best_x is None:
        return MilpResult(MilpStatus.INFEASIBLE, None, np.inf, count, np.inf, np.inf)
    return MilpResult(MilpStatus.OPTIMAL, best_x, best_obj, count, 0.0, best_obj)



__all__ = ['MilpProblem', 'MilpResult', 'MilpStatus', 'MilpTolerance', 'solve_milp', 'brute_force']
