"""
Dense primal-dual interior-point solver for linear cone programs.

Programs are posed as

    minimize    c'x
    subject to  G x + s = h
                A x     = b
                s in K

where K is a product of free, nonnegative, second-order and positive
semidefinite cones. PSD blocks hold the scaled lower-triangular vectorization
of a symmetric matrix (off-diagonal entries times sqrt(2)), so the Euclidean
inner product of two vectorized blocks is the trace inner product.

The iteration runs on the homogeneous self-dual embedding with Nesterov-Todd
scaling and Mehrotra predictor-corrector steps. Optimality and both kinds of
infeasibility are read off the same iterates.

The returned equality multiplier y is the shadow price of b, i.e. the KKT
conditions read

    c + G'z - A'y = 0,   s'z = 0,   s, z in K

and the dual objective is b'y - h'z.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

logger = logging.getLogger(__name__)

### SOLVER INFO
SQRT2 = np.sqrt(2.0)
DEFAULT_FEASTOL = 1e-8
DEFAULT_ABSTOL = 1e-8
DEFAULT_RELTOL = 1e-8
DEFAULT_MAX_ITERS = 200
STEP_FRACTION = 0.99
KKT_REGULARIZATION = 1e-13
REFINEMENT_STEPS = 3
WEAK_DUALITY_TOL = 1e-9
DUMP_FORMAT = "irs-alloc-cone-program/1"


class ConeKind(str, Enum):
    FREE = "free"
    NONNEG = "nonneg"
    SOC = "soc"
    PSD = "psd"


class ConicStatus(str, Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    NUMERICAL_LIMIT = "numerical_limit"


@dataclass(frozen=True)
class ConeBlock:
    """One cone of the product. n is the length for FREE/NONNEG/SOC and the matrix order for PSD."""
    kind: ConeKind
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"cone block needs n >= 1, got {self.n}")

    @property
    def size(self) -> int:
        if self.kind is ConeKind.PSD:
            return self.n * (self.n + 1) // 2
        return self.n


@dataclass(frozen=True)
class ConstraintGroup:
    """
    A named range of rows.

    Attributes:
        name: Logical name, e.g. "C3a user 1".
        kind: "cone" for rows of G/h, "eq" for rows of A/b.
        rows: Row range inside G (cone) or A (eq).
        cone: The cone block(s) kind of the group; PSD groups hold exactly one block.
        hermitian_order: Order of the complex Hermitian LMI this PSD block embeds, if any.
    """
    name: str
    kind: str
    rows: slice
    cone: Optional[ConeBlock] = None
    hermitian_order: Optional[int] = None


@dataclass(eq=False)
class ConeProgram:
    """
    Problem data: minimize c'x + offset s.t. Gx + s = h, Ax = b, s in cones.

    Attributes:
        c, G, h, A, b: Dense problem data.
        cones: Ordered cone blocks partitioning the rows of G.
        names: Constraint groups keyed by name.
        offset: Constant added to the reported objective.
        layout: Optional variable layout used to read structured values back.
        lmis: Complex affine expressions of Hermitian LMI groups, keyed by group name.
        meta: Free-form tags set by the formulation that built the program.
    """
    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray
    cones: List[ConeBlock]
    names: Dict[str, ConstraintGroup] = field(default_factory=dict)
    offset: float = 0.0
    layout: Any = None
    lmis: Dict[str, Any] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).ravel()
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.cones = list(self.cones)

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.G.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[0]

    def validate(self):
        """Raises ValueError when dimensions or the group partition are inconsistent."""
        if self.n == 0:
            raise ValueError("program has no variables")
        if self.h.size != self.m:
            raise ValueError(f"h has {self.h.size} entries for {self.m} cone rows")
        if self.b.size != self.p:
            raise ValueError(f"b has {self.b.size} entries for {self.p} equality rows")
        total = sum(blk.size for blk in self.cones)
        if total != self.m:
            raise ValueError(f"cone blocks cover {total} rows, G has {self.m}")
        for name, arr in (('c', self.c), ('G', self.G), ('h', self.h), ('A', self.A), ('b', self.b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"program data {name} has non-finite entries")
        if not self.names:
            return
        cover = {'cone': np.zeros(self.m, dtype=int), 'eq': np.zeros(self.p, dtype=int)}
        for group in self.names.values():
            if group.kind not in cover:
                raise ValueError(f"group {group.name} has unknown kind {group.kind}")
            cover[group.kind][group.rows] += 1
        for kind, counts in cover.items():
            if np.any(counts != 1):
                bad = int(np.flatnonzero(counts != 1)[0])
                raise ValueError(f"{kind} row {bad} belongs to {counts[bad]} named groups, expected exactly 1")

    def group(self, name: str) -> ConstraintGroup:
        try:
            return self.names[name]
        except KeyError:
            raise ValueError(f"program has no constraint group named {name!r}") from None


@dataclass(frozen=True)
class ToleranceSet:
    """Stopping tolerances and step control of the interior-point method."""
    feastol: float = DEFAULT_FEASTOL
    abstol: float = DEFAULT_ABSTOL
    reltol: float = DEFAULT_RELTOL
    max_iters: int = DEFAULT_MAX_ITERS
    step_fraction: float = STEP_FRACTION
    centering_floor: float = 0.0
    inaccurate_factor: float = 100.0  # certificates only

    def __post_init__(self):
        if min(self.feastol, self.abstol, self.reltol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0 < self.step_fraction < 1:
            raise ValueError(f"step_fraction must lie in (0, 1), got {self.step_fraction}")

    def tighter(self) -> 'ToleranceSet':
        """Shorter, more centred steps for a re-solve after a numerical failure."""
        return replace(self, step_fraction=min(self.step_fraction, 0.9),
                       centering_floor=max(self.centering_floor, 0.1),
                       max_iters=self.max_iters + 100)


@dataclass(eq=False)
class ConicSolution:
    """
    Result of one solve.

    On PRIMAL_INFEASIBLE, (y, z) hold a certificate with G'z - A'y = 0,
    h'z - b'y = -1 and z in K. On DUAL_INFEASIBLE, (x, s) hold one with
    Gx + s = 0, Ax = 0, c'x = -1 and s in K.
    """
    status: ConicStatus
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    obj: float
    dual_obj: float
    residuals: Dict[str, float]
    iterations: int
    inaccurate: bool = False
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status is ConicStatus.OPTIMAL


### VECTORIZATION

@lru_cache(maxsize=64)
def _tril(n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = np.tril_indices(n)
    scale = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, scale


def svec(mat: np.ndarray) -> np.ndarray:
    """Scaled lower-triangular vectorization; works on stacks of matrices."""
    mat = np.asarray(mat)
    rows, cols, scale = _tril(mat.shape[-1])
    return mat[..., rows, cols] * scale


def smat(vec: np.ndarray, n: Optional[int] = None) -> np.ndarray:
    """Inverse of svec; works on stacks of vectors."""
    vec = np.asarray(vec, dtype=float)
    if n is None:
        n = int(round((np.sqrt(8 * vec.shape[-1] + 1) - 1) / 2))
    rows, cols, scale = _tril(n)
    out = np.zeros(vec.shape[:-1] + (n, n))
    vals = vec / scale
    out[..., rows, cols] = vals
    out[..., cols, rows] = vals
    return out


def _embed(a: np.ndarray) -> np.ndarray:
    re, im = a.real, a.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def hermitian_embed(H: np.ndarray, atol: float = 1e-10) -> np.ndarray:
    """
    Real symmetric embedding T(H) = [[Re H, -Im H], [Im H, Re H]].

    H is PSD iff T(H) is, and every eigenvalue of H appears twice in T(H).

    Args:
        H: Complex Hermitian n x n matrix.
        atol: Hermitian tolerance relative to the largest entry.

    Returns:
        Real symmetric 2n x 2n matrix.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    scale = max(1.0, float(np.max(np.abs(H), initial=0.0)))
    if np.max(np.abs(H - H.conj().T), initial=0.0) > atol * scale:
        raise ValueError("matrix is not Hermitian")
    return _embed(H)


def dual_unembed(Z: np.ndarray) -> np.ndarray:
    """
    Complex multiplier of an embedded Hermitian LMI.

    Returns Q = (Z11 + Z22) + j (Z21 - Z12), which satisfies
    <Z, T(M)> = Re Tr(Q M) for every Hermitian M. For Z = T(Q)/2 it returns Q,
    i.e. the two embedded copies are averaged.
    """
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[-1] // 2
    if Z.shape[-1] != 2 * n or Z.shape[-2] != Z.shape[-1]:
        raise ValueError(f"expected a square matrix of even order, got shape {Z.shape}")
    Z11, Z12 = Z[..., :n, :n], Z[..., :n, n:]
    Z21, Z22 = Z[..., n:, :n], Z[..., n:, n:]
    return (Z11 + Z22) + 1j * (Z21 - Z12)


### CONE ALGEBRA

class _Cones:
    """The non-free part of the cone product, with Jordan algebra helpers."""

    def __init__(self, blocks: Sequence[ConeBlock]):
        self.blocks = [blk for blk in blocks if blk.kind is not ConeKind.FREE]
        self.slices: List[slice] = []
        offset = 0
        for blk in self.blocks:
            self.slices.append(slice(offset, offset + blk.size))
            offset += blk.size
        self.m = offset
        self.degree = sum(1 if blk.kind is ConeKind.SOC else blk.n for blk in self.blocks)

    def _parts(self):
        return zip(self.blocks, self.slices)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        for blk, sl in self._parts():
            if blk.kind is ConeKind.NONNEG:
                e[sl] = 1.0
            elif blk.kind is ConeKind.SOC:
                e[sl.start] = 1.0
            else:
                e[sl] = svec(np.eye(blk.n))
        return e

    def margin(self, u: np.ndarray) -> float:
        """Smallest 'eigenvalue' of u over all blocks (negative outside the cone)."""
        worst = np.inf
        for blk, sl in self._parts():
            v = u[sl]
            if blk.kind is ConeKind.NONNEG:
                worst = min(worst, float(v.min()))
            elif blk.kind is ConeKind.SOC:
                worst = min(worst, float(v[0] - np.linalg.norm(v[1:])))
            else:
                worst = min(worst, float(np.linalg.eigvalsh(smat(v, blk.n))[0]))
        return worst

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product u o v."""
        out = np.empty(self.m)
        for blk, sl in self._parts():
            a, b = u[sl], v[sl]
            if blk.kind is ConeKind.NONNEG:
                out[sl] = a * b
            elif blk.kind is ConeKind.SOC:
                out[sl.start] = a @ b
                out[sl.start + 1:sl.stop] = a[0] * b[1:] + b[0] * a[1:]
            else:
                Am, Bm = smat(a, blk.n), smat(b, blk.n)
                out[sl] = svec(0.5 * (Am @ Bm + Bm @ Am))
        return out


class _Scaling:
    """
    Nesterov-Todd scaling W of a strictly interior pair (s, z).

    W z = W^{-T} s = lambda. PSD blocks keep lambda diagonal in the scaled frame.
    """

    def __init__(self, cones: _Cones, s: Optional[np.ndarray] = None, z: Optional[np.ndarray] = None):
        self.cones = cones
        self.parts: List[Tuple] = []
        self.lam = np.zeros(cones.m)
        if s is None:
            # identity scaling, used for the starting point
            for blk, sl in cones._parts():
                self.parts.append(('identity',))
            return
        for blk, sl in cones._parts():
            ss, zz = s[sl], z[sl]
            if blk.kind is ConeKind.NONNEG:
                if np.any(ss <= 0) or np.any(zz <= 0):
                    raise np.linalg.LinAlgError("iterate left the nonnegative orthant")
                d = np.sqrt(ss / zz)
                self.lam[sl] = np.sqrt(ss * zz)
                self.parts.append(('l', d))
            elif blk.kind is ConeKind.SOC:
                s_det, z_det = soc_det(ss), soc_det(zz)
                if s_det <= 0 or z_det <= 0:
                    raise np.linalg.LinAlgError("iterate left the second-order cone")
                s_nrm, z_nrm = np.sqrt(s_det), np.sqrt(z_det)
                sb, zb = ss / s_nrm, zz / z_nrm
                gamma = np.sqrt(0.5 * (1.0 + sb @ zb))
                jz = np.concatenate([[zb[0]], -zb[1:]])
                wb = (sb + jz) / (2.0 * gamma)
                eta = np.sqrt(s_nrm / z_nrm)
                Wm = self._soc_matrix(wb)
                wb_inv = np.concatenate([[wb[0]], -wb[1:]])
                Wi = self._soc_matrix(wb_inv)
                Wm *= eta
                Wi /= eta
                self.lam[sl] = Wm @ zz
                self.parts.append(('q', Wm, Wi))
            else:
                n = blk.n
                Ls = sla.cholesky(smat(ss, n), lower=True)
                Lz = sla.cholesky(smat(zz, n), lower=True)
                _, sv, Vt = sla.svd(Lz.T @ Ls)
                if np.any(sv <= 0):
                    raise np.linalg.LinAlgError("singular PSD scaling")
                R = (Ls @ Vt.T) / np.sqrt(sv)[None, :]
                Ls_inv = sla.solve_triangular(Ls, np.eye(n), lower=True)
                R_inv = np.sqrt(sv)[:, None] * (Vt @ Ls_inv)
                self.lam[sl] = svec(np.diag(sv))
                self.parts.append(('s', R, R_inv, sv))

    @staticmethod
    def _soc_matrix(w: np.ndarray) -> np.ndarray:
        n = w.size
        W = np.empty((n, n))
        W[0, 0] = w[0]
        W[0, 1:] = w[1:]
        W[1:, 0] = w[1:]
        W[1:, 1:] = np.eye(n - 1) + np.outer(w[1:], w[1:]) / (1.0 + w[0])
        return W

    def apply(self, v: np.ndarray, mode: str) -> np.ndarray:
        """
        Applies W, W^T, W^{-1} or W^{-T} to a vector or to the columns of a matrix.

        Args:
            v: Array of shape (m,) or (m, k).
            mode: One of 'W', 'WT', 'Winv', 'WinvT'.
        """
        out = np.empty_like(v, dtype=float)
        matrix = v.ndim == 2
        for part, (blk, sl) in zip(self.parts, self.cones._parts()):
            block = v[sl]
            tag = part[0]
            if tag == 'identity':
                out[sl] = block
            elif tag == 'l':
                d = part[1][:, None] if matrix else part[1]
                out[sl] = block * d if mode in ('W', 'WT') else block / d
            elif tag == 'q':
                out[sl] = (part[1] if mode in ('W', 'WT') else part[2]) @ block
            else:
                R, R_inv = part[1], part[2]
                mats = smat(block.T if matrix else block, blk.n)
                if mode == 'W':
                    res = R.T @ mats @ R
                elif mode == 'WT':
                    res = R @ mats @ R.T
                elif mode == 'Winv':
                    res = R_inv.T @ mats @ R_inv
                else:
                    res = R_inv @ mats @ R_inv.T
                vec = svec(res)
                out[sl] = vec.T if matrix else vec
        return out

    def lam_solve(self, v: np.ndarray) -> np.ndarray:
        """Solves lambda o u = v for u."""
        out = np.empty(self.cones.m)
        lam = self.lam
        for part, (blk, sl) in zip(self.parts, self.cones._parts()):
            lv, vv = lam[sl], v[sl]
            if blk.kind is ConeKind.NONNEG:
                out[sl] = vv / lv
            elif blk.kind is ConeKind.SOC:
                det = soc_det(lv)
                u0 = (lv[0] * vv[0] - lv[1:] @ vv[1:]) / det
                out[sl.start] = u0
                out[sl.start + 1:sl.stop] = (vv[1:] - u0 * lv[1:]) / lv[0]
            else:
                sv = part[3]
                rows, cols, _ = _tril(blk.n)
                out[sl] = vv * 2.0 / (sv[rows] + sv[cols])
        return out

    def max_step(self, d: np.ndarray) -> float:
        """Largest alpha with lambda + alpha d in the cone (scaled frame)."""
        alpha = np.inf
        lam = self.lam
        for part, (blk, sl) in zip(self.parts, self.cones._parts()):
            lv, dv = lam[sl], d[sl]
            if blk.kind is ConeKind.NONNEG:
                neg = dv < 0
                if np.any(neg):
                    alpha = min(alpha, float(np.min(-lv[neg] / dv[neg])))
            elif blk.kind is ConeKind.SOC:
                alpha = min(alpha, _soc_step(lv, dv))
            else:
                sv = part[3]
                inv_sqrt = 1.0 / np.sqrt(sv)
                scaled = smat(dv, blk.n) * np.outer(inv_sqrt, inv_sqrt)
                smallest = float(np.linalg.eigvalsh(scaled)[0])
                if smallest < 0:
                    alpha = min(alpha, -1.0 / smallest)
        return alpha


def soc_det(v: np.ndarray) -> float:
    """v0^2 - ||v1||^2 in factored form; negative outside the cone or for v0 <= 0."""
    head, tail = float(v[0]), float(np.linalg.norm(v[1:]))
    if head <= 0:
        return -1.0
    return (head - tail) * (head + tail)


def _soc_step(lam: np.ndarray, d: np.ndarray) -> float:
    # lam is rescaled to unit determinant, then the step is 1 / max(0, ||rho1|| - rho0)
    lam_det = soc_det(lam)
    if lam_det <= 0:
        return 0.0
    inv_nrm = 1.0 / np.sqrt(lam_det)
    lb = lam * inv_nrm
    rho0 = (lb[0] * d[0] - lb[1:] @ d[1:]) * inv_nrm
    factor = (rho0 + d[0] * inv_nrm) / (lb[0] + 1.0)
    rho1 = d[1:] * inv_nrm - factor * lb[1:]
    sigma = float(np.linalg.norm(rho1)) - rho0
    return float(1.0 / sigma) if sigma > 0 else np.inf


### KKT SYSTEM

class _Kkt:
    """
    Factorization of [[0, A', G'], [A, 0, 0], [G, 0, -W'W]] by elimination of z.

    The reduced matrix [[G'W^{-1}W^{-T}G + A'A, A'], [A, 0]] is factored with
    LU after a tiny static regularization. Solutions are refined against the
    full three-block matrix, so the regularization and the elimination leave
    no residual in the z rows.
    """

    def __init__(self, G: np.ndarray, A: np.ndarray, scaling: _Scaling):
        self.G, self.A, self.scaling = G, A, scaling
        n, p = G.shape[1], A.shape[0]
        self.n = n
        self.Gt = scaling.apply(G, 'WinvT')
        H = self.Gt.T @ self.Gt + A.T @ A
        K = np.zeros((n + p, n + p))
        K[:n, :n] = H
        K[:n, n:] = A.T
        K[n:, :n] = A
        reg = KKT_REGULARIZATION * max(1.0, float(np.max(np.abs(H), initial=0.0)))
        K[np.diag_indices(n)] += reg
        idx = np.arange(n, n + p)
        K[idx, idx] -= reg
        self.lu = sla.lu_factor(K, check_finite=True)

    def _reduced(self, rx: np.ndarray, ry: np.ndarray, rz: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = self.scaling.apply(rz, 'WinvT')
        sol = sla.lu_solve(self.lu, np.concatenate([rx + self.Gt.T @ t + self.A.T @ ry, ry]))
        dx, dy = sol[:self.n], sol[self.n:]
        dz = self.scaling.apply(self.Gt @ dx - t, 'Winv')
        return dx, dy, dz

    def residual(self, rx: np.ndarray, ry: np.ndarray, rz: np.ndarray,
                 dx: np.ndarray, dy: np.ndarray, dz: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Right-hand side minus the full matrix applied to (dx, dy, dz)."""
        wtw = self.scaling.apply(self.scaling.apply(dz, 'W'), 'WT')
        return (rx - self.A.T @ dy - self.G.T @ dz,
                ry - self.A @ dx,
                rz - self.G @ dx + wtw)

    def solve(self, rx: np.ndarray, ry: np.ndarray, rz: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        dx, dy, dz = self._reduced(rx, ry, rz)
        for _ in range(REFINEMENT_STEPS):
            ex, ey, ez = self.residual(rx, ry, rz, dx, dy, dz)
            cx, cy, cz = self._reduced(ex, ey, ez)
            dx, dy, dz = dx + cx, dy + cy, dz + cz
        return dx, dy, dz


### SOLVER

def solve(p: ConeProgram, tol: Optional[ToleranceSet] = None) -> ConicSolution:
    """
    Solves a cone program with a homogeneous self-dual interior-point method.

    Args:
        p: Program data.
        tol: Tolerances; defaults to ToleranceSet().

    Returns:
        ConicSolution. Free-cone rows are carried with z = 0.
    """
    tol = tol or ToleranceSet()
    p.validate()
    keep = np.ones(p.m, dtype=bool)
    offset = 0
    for blk in p.cones:
        if blk.kind is ConeKind.FREE:
            keep[offset:offset + blk.size] = False
        offset += blk.size
    G, h = p.G[keep], p.h[keep]
    cones = _Cones(p.cones)
    if cones.m == 0:
        raise ValueError("program has no cone constraints")
    result = _HsdSolver(p.c, G, h, p.A, p.b, cones, tol).run()

    s_full = p.h - p.G @ result.x if result.status is ConicStatus.OPTIMAL else np.zeros(p.m)
    z_full = np.zeros(p.m)
    s_full[keep] = result.s
    z_full[keep] = result.z
    result.s, result.z = s_full, z_full
    if result.status is ConicStatus.OPTIMAL:
        result.obj += p.offset
        result.dual_obj += p.offset
    return result


class _HsdSolver:
    """Mutable workspace of one interior-point run."""

    def __init__(self, c, G, h, A, b, cones: _Cones, tol: ToleranceSet):
        self.c, self.G, self.h, self.A, self.b = c, G, h, A, b
        self.cones = cones
        self.tol = tol
        self.resx0 = max(1.0, float(np.linalg.norm(c)))
        self.resy0 = max(1.0, float(np.linalg.norm(b)))
        self.resz0 = max(1.0, float(np.linalg.norm(h)))
        self.history: List[Dict[str, float]] = []

    def _start(self):
        cones = self.cones
        kkt = _Kkt(self.G, self.A, _Scaling(cones))
        n, p = self.G.shape[1], self.A.shape[0]
        x, _, ztmp = kkt.solve(np.zeros(n), self.b, self.h)
        s = -ztmp
        _, y, z = kkt.solve(-self.c, np.zeros(p), np.zeros(cones.m))
        e = cones.identity()
        for vec in (s, z):
            shift = -cones.margin(vec)
            if shift >= -1e-8 * max(1.0, float(np.linalg.norm(vec))):
                vec += (1.0 + shift) * e
        return x, y, s, z

    def _measures(self, x, y, s, z, tau, kappa) -> Dict[str, Any]:
        c, G, h, A, b = self.c, self.G, self.h, self.A, self.b
        rx = A.T @ y + G.T @ z + c * tau
        ry = -A @ x + b * tau
        rz = s + G @ x - h * tau
        cx, by, hz = c @ x, b @ y, h @ z
        rt = kappa + cx + by + hz
        gap = float(s @ z)
        pcost = cx / tau
        dcost = -(by + hz) / tau
        pres = max(np.linalg.norm(ry) / self.resy0, np.linalg.norm(rz) / self.resz0) / tau
        dres = np.linalg.norm(rx) / self.resx0 / tau
        gap_n = gap / tau ** 2
        if pcost < 0:
            relgap = gap_n / -pcost
        elif dcost > 0:
            relgap = gap_n / dcost
        else:
            relgap = np.inf
        pinf = np.inf
        if hz + by < 0:
            pinf = np.linalg.norm(A.T @ y + G.T @ z) / self.resx0 / -(hz + by)
        dinf = np.inf
        if cx < 0:
            dinf = max(np.linalg.norm(A @ x) / self.resy0, np.linalg.norm(s + G @ x) / self.resz0) / -cx
        return dict(rx=rx, ry=ry, rz=rz, rt=rt, gap=gap, pcost=pcost, dcost=dcost, pres=pres, dres=dres,
                    gap_n=gap_n, relgap=relgap, pinf=pinf, dinf=dinf, cx=cx, by=by, hz=hz)

    def _converged(self, m: Dict[str, Any]) -> bool:
        tol = self.tol
        spread = abs(m['pcost'] - m['dcost']) / (1.0 + abs(m['pcost']))
        return (m['pres'] <= tol.feastol and m['dres'] <= tol.feastol
                and spread <= 10.0 * max(tol.abstol, tol.reltol)
                and (m['gap_n'] <= tol.abstol or m['relgap'] <= tol.reltol))

    def _finish(self, status, x, y, s, z, tau, kappa, m, it, inaccurate=False) -> ConicSolution:
        residuals = {'primal': float(m['pres']), 'dual': float(m['dres']), 'gap': float(m['gap_n'])}
        if status is ConicStatus.PRIMAL_INFEASIBLE:
            scale = -(m['hz'] + m['by'])
            return ConicSolution(status, np.zeros_like(x), -y / scale, np.zeros_like(s), z / scale,
                                 np.inf, np.inf, residuals, it, inaccurate, self.history)
        if status is ConicStatus.DUAL_INFEASIBLE:
            scale = -m['cx']
            return ConicSolution(status, x / scale, np.zeros_like(y), s / scale, np.zeros_like(z),
                                 -np.inf, -np.inf, residuals, it, inaccurate, self.history)
        return ConicSolution(status, x / tau, -y / tau, s / tau, z / tau, float(m['pcost']), float(m['dcost']),
                             residuals, it, inaccurate, self.history)

    def run(self) -> ConicSolution:
        tol, cones = self.tol, self.cones
        c, G, h, A, b = self.c, self.G, self.h, self.A, self.b
        try:
            x, y, s, z = self._start()
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise ValueError(f"could not factor the initial KKT system: {exc}") from exc
        tau = kappa = 1.0
        e = cones.identity()
        best = None
        stalls = 0
        m = self._measures(x, y, s, z, tau, kappa)

        for it in range(tol.max_iters + 1):
            m = self._measures(x, y, s, z, tau, kappa)
            score = max(m['pres'], m['dres'], min(m['gap_n'], m['relgap']))
            if best is None or score < best[0]:
                best = (score, x.copy(), y.copy(), s.copy(), z.copy(), tau, kappa, m, it)
            record = {'iter': it, 'pcost': float(m['pcost']), 'dcost': float(m['dcost']), 'gap': m['gap'],
                      'pres': float(m['pres']), 'dres': float(m['dres']), 'tau': tau, 'kappa': kappa,
                      'weak_duality': self._weak_duality(x, y, s, z, tau, m)}
            self.history.append(record)
            if not record['weak_duality']:
                logger.warning(f"[IPM {it}] weak duality broken: pcost={m['pcost']:.9e} dcost={m['dcost']:.9e}")
            logger.debug(f"[IPM {it}] pcost={m['pcost']:.6e} dcost={m['dcost']:.6e} gap={m['gap_n']:.2e} "
                         f"pres={m['pres']:.2e} dres={m['dres']:.2e} tau={tau:.2e} kappa={kappa:.2e}")

            if self._converged(m):
                return self._finish(ConicStatus.OPTIMAL, x, y, s, z, tau, kappa, m, it)
            if m['pinf'] <= tol.feastol:
                return self._finish(ConicStatus.PRIMAL_INFEASIBLE, x, y, s, z, tau, kappa, m, it)
            if m['dinf'] <= tol.feastol:
                return self._finish(ConicStatus.DUAL_INFEASIBLE, x, y, s, z, tau, kappa, m, it)
            if it == tol.max_iters:
                break

            try:
                scaling = _Scaling(cones, s, z)
                kkt = _Kkt(G, A, scaling)
                x2, y2, z2 = kkt.solve(-c, b, h)
            except (np.linalg.LinAlgError, ValueError) as exc:
                logger.debug(f"[IPM {it}] factorization failed: {exc}")
                break
            denom = c @ x2 + b @ y2 + h @ z2 - kappa / tau
            if not np.isfinite(denom) or abs(denom) < 1e-300:
                break
            lam = scaling.lam
            lam_sq = cones.product(lam, lam)
            mu = (m['gap'] + tau * kappa) / (cones.degree + 1)

            step_info = None
            for phase in ('predictor', 'corrector'):
                if phase == 'predictor':
                    sigma = 0.0
                    ds_target = -lam_sq
                    dk_target = -tau * kappa
                else:
                    sigma = max(tol.centering_floor, min(1.0, (1.0 - alpha_aff) ** 3))
                    ds_target = -lam_sq - cones.product(ds_aff, dz_aff) + sigma * mu * e
                    dk_target = -tau * kappa - dtau_aff * dkappa_aff + sigma * mu
                eta = 1.0 - sigma
                u = scaling.lam_solve(ds_target)
                x1, y1, z1 = kkt.solve(-eta * m['rx'], eta * m['ry'], -eta * m['rz'] - scaling.apply(u, 'WT'))
                dtau = (-eta * m['rt'] - dk_target / tau - c @ x1 - b @ y1 - h @ z1) / denom
                dx, dy, dz = x1 + dtau * x2, y1 + dtau * y2, z1 + dtau * z2
                dz_s = scaling.apply(dz, 'W')
                ds_s = u - dz_s
                dkappa = (dk_target - kappa * dtau) / tau
                alpha = min(scaling.max_step(ds_s), scaling.max_step(dz_s))
                if dtau < 0:
                    alpha = min(alpha, -tau / dtau)
                if dkappa < 0:
                    alpha = min(alpha, -kappa / dkappa)
                if phase == 'predictor':
                    alpha_aff = min(1.0, alpha)
                    ds_aff, dz_aff, dtau_aff, dkappa_aff = ds_s, dz_s, dtau, dkappa
                else:
                    step = min(1.0, tol.step_fraction * alpha)
                    step_info = (step, dx, dy, dz, ds_s, dtau, dkappa)

            step, dx, dy, dz, ds_s, dtau, dkappa = step_info
            if not np.isfinite(step) or not all(np.all(np.isfinite(v)) for v in (dx, dy, dz, ds_s)):
                break
            record['step'] = float(step)
            x = x + step * dx
            y = y + step * dy
            z = z + step * dz
            s = s + step * scaling.apply(ds_s, 'WT')
            tau = tau + step * dtau
            kappa = kappa + step * dkappa
            stalls = stalls + 1 if step < 1e-8 else 0
            if stalls >= 3 or tau <= 0 or kappa <= 0:
                break

        return self._fallback(best, it)

    def _weak_duality(self, x, y, s, z, tau, m) -> bool:
        """
        Every iterate has pcost - dcost = (s'z + x'rx + y'ry - z'rz) / tau^2, so the
        gap can fall below the residual terms only by rounding.
        """
        slack = float(x @ m['rx'] + y @ m['ry'] - z @ m['rz']) / tau ** 2
        scale = 1.0 + abs(m['pcost']) + abs(m['dcost']) + float(s @ z) / tau ** 2
        return bool(m['pcost'] - m['dcost'] >= slack - WEAK_DUALITY_TOL * scale)

    def _fallback(self, best, it: int) -> ConicSolution:
        _, x, y, s, z, tau, kappa, m, best_it = best
        factor = self.tol.inaccurate_factor
        # OPTIMAL is only reported at full tolerance; certificates may be looser
        if m['pinf'] <= factor * self.tol.feastol:
            return self._finish(ConicStatus.PRIMAL_INFEASIBLE, x, y, s, z, tau, kappa, m, it, inaccurate=True)
        if m['dinf'] <= factor * self.tol.feastol:
            return self._finish(ConicStatus.DUAL_INFEASIBLE, x, y, s, z, tau, kappa, m, it, inaccurate=True)
        logger.warning(f"[IPM] numerical limit after {it} iterations (best iterate {best_it}: "
                       f"pres={m['pres']:.1e}, dres={m['dres']:.1e}, gap={m['gap_n']:.1e})")
        return self._finish(ConicStatus.NUMERICAL_LIMIT, x, y, s, z, tau, kappa, m, it)


def solve_lp(c: np.ndarray, A_ub: Optional[np.ndarray] = None, b_ub: Optional[np.ndarray] = None,
             A_eq: Optional[np.ndarray] = None, b_eq: Optional[np.ndarray] = None,
             tol: Optional[ToleranceSet] = None) -> ConicSolution:
    """
    Solves min c'x s.t. A_ub x <= b_ub, A_eq x = b_eq through the nonnegative-cone path.

    Returns:
        ConicSolution whose z holds the multipliers of the A_ub rows.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    cones = [ConeBlock(ConeKind.NONNEG, A_ub.shape[0])] if A_ub.shape[0] else []
    return solve(ConeProgram(c=c, G=A_ub, h=b_ub, A=A_eq, b=b_eq, cones=cones), tol)


def dump_program(p: ConeProgram, path: str):
    """
    Writes a program to JSON for cross-checking with external solvers.

    Schema: {"format", "n", "c", "G", "h", "A", "b", "cones": [{"kind", "n"}],
    "groups": [{"name", "kind", "start", "stop"}], "offset"}; every matrix entry
    is a decimal string (repr of the float) and matrices are lists of rows.
    """
    def _strings(arr):
        return np.vectorize(repr, otypes=[object])(np.asarray(arr, dtype=float)).tolist() if np.size(arr) else []

    doc = {
        'format': DUMP_FORMAT,
        'n': p.n,
        'c': _strings(p.c),
        'G': _strings(p.G),
        'h': _strings(p.h),
        'A': _strings(p.A),
        'b': _strings(p.b),
        'cones': [{'kind': blk.kind.value, 'n': blk.n} for blk in p.cones],
        'groups': [{'name': g.name, 'kind': g.kind, 'start': g.rows.start, 'stop': g.rows.stop}
                   for g in p.names.values()],
        'offset': repr(float(p.offset)),
    }
    with open(path, 'w') as fh:
        json.dump(doc, fh)


def load_program(path: str) -> ConeProgram:
    """Reads a program written by dump_program."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get('format') != DUMP_FORMAT:
        raise ValueError(f"unsupported program format {doc.get('format')!r}")
    n = int(doc['n'])

    def _array(rows, shape_cols=None):
        arr = np.array(rows, dtype=float)
        return arr.reshape(-1, shape_cols) if shape_cols is not None else arr.ravel()

    cones = [ConeBlock(ConeKind(c['kind']), int(c['n'])) for c in doc['cones']]
    names = {}
    for g in doc['groups']:
        names[g['name']] = ConstraintGroup(g['name'], g['kind'], slice(g['start'], g['stop']))
    return ConeProgram(c=_array(doc['c']), G=_array(doc['G'], n), h=_array(doc['h']),
                       A=_array(doc['A'], n), b=_array(doc['b']), cones=cones, names=names,
                       offset=float(doc['offset']))
