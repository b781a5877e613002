"""
Complex affine expressions and the program builder used by every formulation.

A VariablePool declares real, complex and Hermitian matrix variables and maps
them onto one real decision vector x. An AffineExpr is an array-valued map
x -> const + sum_v coef[v] * x[v] with complex coefficients, so Hermitian LMIs
and complex equalities can be written the way they are stated on paper and
lowered to the real conic form by ProgramBuilder.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from irs_alloc.conic import (ConeBlock, ConeKind, ConeProgram, ConicSolution, ConstraintGroup,
                             dual_unembed, smat, svec)

logger = logging.getLogger(__name__)

### BUILDER INFO
IMAG_TOL = 1e-12
HERMITIAN_TOL = 1e-10

Constant = Union[complex, float, np.ndarray]


@dataclass(frozen=True)
class VariableBlock:
    name: str
    kind: str
    shape: Tuple[int, ...]
    offset: int
    size: int


class VariablePool:
    """
    Named variable blocks laid out over one real vector.

    Blocks are declared first, then the pool is frozen; expressions can only be
    created from a frozen pool so that every coefficient array has the final
    length.

    Complex blocks store all real parts, then all imaginary parts. Hermitian
    n x n blocks store the n diagonal entries, then the real parts of the
    strictly lower triangle, then its imaginary parts.
    """

    def __init__(self):
        self.blocks: Dict[str, VariableBlock] = {}
        self.size = 0
        self.frozen = False
        self._basis: Dict[str, np.ndarray] = {}

    def _declare(self, name: str, kind: str, shape: Tuple[int, ...], size: int) -> str:
        if self.frozen:
            raise RuntimeError(f"cannot declare {name!r}: variable pool is frozen")
        if name in self.blocks:
            raise ValueError(f"variable {name!r} declared twice")
        if any(dim < 0 for dim in shape):
            raise ValueError(f"variable {name!r} has negative dimension {shape}")
        self.blocks[name] = VariableBlock(name, kind, shape, self.size, size)
        self.size += size
        return name

    def real(self, name: str, shape: Tuple[int, ...] = ()) -> str:
        return self._declare(name, 'real', tuple(shape), int(np.prod(shape, dtype=int)))

    def complex(self, name: str, shape: Tuple[int, ...]) -> str:
        return self._declare(name, 'complex', tuple(shape), 2 * int(np.prod(shape, dtype=int)))

    def hermitian(self, name: str, n: int) -> str:
        return self._declare(name, 'hermitian', (n, n), n * n)

    def freeze(self) -> 'VariablePool':
        if self.size == 0:
            raise ValueError("variable pool is empty")
        self.frozen = True
        return self

    def block(self, name: str) -> VariableBlock:
        try:
            return self.blocks[name]
        except KeyError:
            raise ValueError(f"unknown variable {name!r}") from None

    def _block_basis(self, blk: VariableBlock) -> np.ndarray:
        """Coefficients (size, *shape) of one block with respect to its own coordinates."""
        if blk.kind == 'real':
            return np.eye(blk.size, dtype=complex).reshape((blk.size,) + blk.shape)
        if blk.kind == 'complex':
            count = blk.size // 2
            eye = np.eye(count, dtype=complex).reshape((count,) + blk.shape)
            return np.concatenate([eye, 1j * eye])
        n = blk.shape[0]
        basis = np.zeros((blk.size, n, n), dtype=complex)
        diag = np.arange(n)
        basis[diag, diag, diag] = 1.0
        rows, cols = np.tril_indices(n, -1)
        count = rows.size
        off = np.arange(count)
        basis[n + off, rows, cols] = 1.0
        basis[n + off, cols, rows] = 1.0
        basis[n + count + off, rows, cols] = 1j
        basis[n + count + off, cols, rows] = -1j
        return basis

    def expr(self, name: str) -> 'AffineExpr':
        """The variable itself as an expression."""
        if not self.frozen:
            raise RuntimeError("freeze the variable pool before building expressions")
        blk = self.block(name)
        if name not in self._basis:
            self._basis[name] = self._block_basis(blk)
        coef = np.zeros((self.size,) + blk.shape, dtype=complex)
        coef[blk.offset:blk.offset + blk.size] = self._basis[name]
        return AffineExpr(coef, np.zeros(blk.shape, dtype=complex))

    def value(self, name: str, x: np.ndarray) -> np.ndarray:
        """Reads a block back out of a solution vector."""
        blk = self.block(name)
        if name not in self._basis:
            self._basis[name] = self._block_basis(blk)
        part = np.asarray(x, dtype=float)[blk.offset:blk.offset + blk.size]
        val = np.tensordot(part, self._basis[name], axes=(0, 0))
        return val.real if blk.kind == 'real' else val

    def __contains__(self, name: str) -> bool:
        return name in self.blocks


class AffineExpr:
    """
    Array-valued complex affine function of the pool vector.

    Attributes:
        coef: Complex array (nv, *shape).
        const: Complex array of shape `shape`.
    """
    __array_ufunc__ = None

    def __init__(self, coef: np.ndarray, const: np.ndarray):
        self.coef = np.asarray(coef, dtype=complex)
        self.const = np.asarray(const, dtype=complex)
        if self.coef.shape[1:] != self.const.shape:
            raise ValueError(f"coefficient shape {self.coef.shape} does not match constant {self.const.shape}")

    @property
    def nv(self) -> int:
        return self.coef.shape[0]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.const.shape

    @property
    def ndim(self) -> int:
        return self.const.ndim

    @classmethod
    def constant(cls, value: Constant, nv: int) -> 'AffineExpr':
        value = np.asarray(value, dtype=complex)
        return cls(np.zeros((nv,) + value.shape, dtype=complex), value)

    def _lift(self, other) -> 'AffineExpr':
        if isinstance(other, AffineExpr):
            if other.nv != self.nv:
                raise ValueError(f"expressions over different pools ({self.nv} vs {other.nv} variables)")
            return other
        return AffineExpr.constant(other, self.nv)

    def _coef_as(self, shape: Tuple[int, ...]) -> np.ndarray:
        """Coefficients broadcast to (nv,) + shape, lower-rank expressions padded on the left."""
        pad = (1,) * (len(shape) - self.ndim)
        return np.broadcast_to(self.coef.reshape((self.nv,) + pad + self.shape), (self.nv,) + shape)

    def __add__(self, other) -> 'AffineExpr':
        other = self._lift(other)
        shape = np.broadcast_shapes(self.shape, other.shape)
        return AffineExpr(self._coef_as(shape) + other._coef_as(shape), self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> 'AffineExpr':
        return AffineExpr(-self.coef, -self.const)

    def __sub__(self, other) -> 'AffineExpr':
        return self + (-self._lift(other))

    def __rsub__(self, other) -> 'AffineExpr':
        return self._lift(other) + (-self)

    def __mul__(self, other) -> 'AffineExpr':
        if isinstance(other, AffineExpr):
            raise TypeError("product of two affine expressions is not affine")
        other = np.asarray(other, dtype=complex)
        shape = np.broadcast_shapes(self.shape, other.shape)
        return AffineExpr(self._coef_as(shape) * other, self.const * other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> 'AffineExpr':
        return self * (1.0 / np.asarray(other, dtype=complex))

    def __matmul__(self, other) -> 'AffineExpr':
        if isinstance(other, AffineExpr):
            raise TypeError("product of two affine expressions is not affine")
        other = np.asarray(other, dtype=complex)
        if self.ndim == 1 and other.ndim == 2:
            return AffineExpr(self.coef @ other, self.const @ other)
        return AffineExpr(np.matmul(self.coef, other), self.const @ other)

    def __rmatmul__(self, other) -> 'AffineExpr':
        other = np.asarray(other, dtype=complex)
        if self.ndim == 1:
            return AffineExpr(self.coef @ other.T, other @ self.const)
        return AffineExpr(np.matmul(other, self.coef), other @ self.const)

    def __getitem__(self, key) -> 'AffineExpr':
        if not isinstance(key, tuple):
            key = (key,)
        return AffineExpr(self.coef[(slice(None),) + key], self.const[key])

    @property
    def T(self) -> 'AffineExpr':
        if self.ndim < 2:
            return self
        return AffineExpr(np.swapaxes(self.coef, -1, -2), np.swapaxes(self.const, -1, -2))

    @property
    def H(self) -> 'AffineExpr':
        return self.conj().T

    def conj(self) -> 'AffineExpr':
        return AffineExpr(self.coef.conj(), self.const.conj())

    @property
    def real(self) -> 'AffineExpr':
        return AffineExpr(self.coef.real.astype(complex), self.const.real.astype(complex))

    @property
    def imag(self) -> 'AffineExpr':
        return AffineExpr(self.coef.imag.astype(complex), self.const.imag.astype(complex))

    def trace(self) -> 'AffineExpr':
        return AffineExpr(np.trace(self.coef, axis1=-2, axis2=-1), np.trace(self.const))

    def sum(self) -> 'AffineExpr':
        axes = tuple(range(1, self.coef.ndim))
        return AffineExpr(self.coef.sum(axis=axes), self.const.sum())

    def vec(self) -> 'AffineExpr':
        """Column-major vectorization of a matrix expression."""
        if self.ndim != 2:
            raise ValueError(f"vec needs a matrix expression, got shape {self.shape}")
        coef = np.swapaxes(self.coef, 1, 2).reshape(self.nv, -1)
        return AffineExpr(coef, self.const.T.reshape(-1))

    def reshape(self, *shape) -> 'AffineExpr':
        return AffineExpr(self.coef.reshape((self.nv,) + tuple(shape)), self.const.reshape(shape))

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.tensordot(np.asarray(x, dtype=float), self.coef, axes=(0, 0)) + self.const

    @staticmethod
    def block(rows: Sequence[Sequence[Union['AffineExpr', Constant]]]) -> 'AffineExpr':
        """Assembles a block matrix; constant blocks must be 2-D arrays."""
        nv = next(item.nv for row in rows for item in row if isinstance(item, AffineExpr))
        lifted = [[item if isinstance(item, AffineExpr) else AffineExpr.constant(item, nv) for item in row]
                  for row in rows]
        for row in lifted:
            heights = {item.shape[0] for item in row}
            if len(heights) != 1:
                raise ValueError(f"block row has inconsistent heights {sorted(heights)}")
        coef = np.concatenate([np.concatenate([item.coef for item in row], axis=2) for row in lifted], axis=1)
        const = np.block([[item.const for item in row] for row in lifted])
        return AffineExpr(coef, const)

    @staticmethod
    def stack(parts: Sequence[Union['AffineExpr', Constant]]) -> 'AffineExpr':
        """Concatenates scalar and vector expressions into one vector."""
        nv = next(item.nv for item in parts if isinstance(item, AffineExpr))
        lifted = []
        for item in parts:
            item = item if isinstance(item, AffineExpr) else AffineExpr.constant(item, nv)
            lifted.append(item.reshape(-1) if item.ndim != 1 else item)
        return AffineExpr(np.concatenate([item.coef for item in lifted], axis=1),
                          np.concatenate([item.const for item in lifted]))

    @staticmethod
    def kron_identity(count: int, column: 'AffineExpr') -> 'AffineExpr':
        """I_count kron column for a vector expression, shape (count * n, count)."""
        if column.ndim != 1:
            raise ValueError(f"kron_identity needs a vector expression, got shape {column.shape}")
        n = column.shape[0]
        coef = np.zeros((column.nv, count * n, count), dtype=complex)
        const = np.zeros((count * n, count), dtype=complex)
        for m in range(count):
            coef[:, m * n:(m + 1) * n, m] = column.coef
            const[m * n:(m + 1) * n, m] = column.const
        return AffineExpr(coef, const)

    def __repr__(self) -> str:
        return f"AffineExpr(shape={self.shape}, nv={self.nv})"


def _as_real(expr: AffineExpr, what: str) -> Tuple[np.ndarray, np.ndarray]:
    scale = max(1.0, float(np.max(np.abs(expr.coef), initial=0.0)), float(np.max(np.abs(expr.const), initial=0.0)))
    imag = max(float(np.max(np.abs(expr.coef.imag), initial=0.0)), float(np.max(np.abs(expr.const.imag), initial=0.0)))
    if imag > IMAG_TOL * scale:
        raise ValueError(f"{what} must be real, imaginary part {imag:.2e}")
    return expr.coef.real, expr.const.real


class ProgramBuilder:
    """
    Collects an objective and named constraint groups over a frozen pool.

    Lowering rules (G x + s = h, s in K):
        cone expression u(x) = const + C x  ->  G = -C, h = const
        equality e(x) = 0                   ->  A = C,  b = -const
    Hermitian LMIs M(x) >= 0 are embedded as T(M(x)) in a real PSD block of
    twice the order unless every coefficient is real.
    """

    def __init__(self, pool: VariablePool):
        if not pool.frozen:
            pool.freeze()
        self.pool = pool
        self.c = np.zeros(pool.size)
        self.offset = 0.0
        self._cone_rows: List[Tuple[str, ConeBlock, np.ndarray, np.ndarray, Optional[int]]] = []
        self._eq_rows: List[Tuple[str, np.ndarray, np.ndarray]] = []
        self.lmis: Dict[str, AffineExpr] = {}
        self._names: set = set()

    def _claim(self, name: str):
        if name in self._names:
            raise ValueError(f"constraint group {name!r} defined twice")
        self._names.add(name)

    def minimize(self, objective: AffineExpr):
        coef, const = _as_real(objective, "objective")
        if coef.ndim != 1:
            raise ValueError(f"objective must be scalar, got shape {objective.shape}")
        self.c = coef.copy()
        self.offset = float(const)

    def add_lmi(self, name: str, M: AffineExpr):
        """M(x) >= 0 for a Hermitian matrix expression."""
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"LMI {name!r} needs a square expression, got shape {M.shape}")
        self._claim(name)
        n = M.shape[0]
        asym = max(float(np.max(np.abs(M.coef - np.conj(np.swapaxes(M.coef, 1, 2))), initial=0.0)),
                   float(np.max(np.abs(M.const - M.const.conj().T), initial=0.0)))
        scale = max(1.0, float(np.max(np.abs(M.coef), initial=0.0)), float(np.max(np.abs(M.const), initial=0.0)))
        if asym > HERMITIAN_TOL * scale:
            raise ValueError(f"LMI {name!r} is not Hermitian (asymmetry {asym:.2e})")
        is_real = float(np.max(np.abs(M.coef.imag), initial=0.0)) == 0.0 and \
            float(np.max(np.abs(M.const.imag), initial=0.0)) == 0.0
        if is_real:
            coef, const, order, herm = M.coef.real, M.const.real, n, None
        else:
            coef = np.block([[M.coef.real, -M.coef.imag], [M.coef.imag, M.coef.real]])
            const = np.block([[M.const.real, -M.const.imag], [M.const.imag, M.const.real]])
            order, herm = 2 * n, n
        coef = 0.5 * (coef + np.swapaxes(coef, 1, 2))
        const = 0.5 * (const + const.T)
        G = -svec(coef).T
        h = svec(const)
        self._cone_rows.append((name, ConeBlock(ConeKind.PSD, order), G, h, herm))
        self.lmis[name] = M

    def add_soc(self, name: str, parts: Sequence[Union[AffineExpr, Constant]]):
        """||parts[1:]|| <= parts[0]; entries are real scalar or vector expressions."""
        u = AffineExpr.stack(parts)
        coef, const = _as_real(u, f"SOC {name!r}")
        self._claim(name)
        self._cone_rows.append((name, ConeBlock(ConeKind.SOC, const.size), -coef.T, const, None))

    def add_nonneg(self, name: str, expr: AffineExpr):
        """expr(x) >= 0 elementwise."""
        u = expr.reshape(-1) if expr.ndim != 1 else expr
        coef, const = _as_real(u, f"inequality {name!r}")
        self._claim(name)
        self._cone_rows.append((name, ConeBlock(ConeKind.NONNEG, const.size), -coef.T, const, None))

    def add_eq(self, name: str, expr: AffineExpr):
        """expr(x) = 0 elementwise; expr must be real."""
        u = expr.reshape(-1) if expr.ndim != 1 else expr
        coef, const = _as_real(u, f"equality {name!r}")
        self._claim(name)
        self._eq_rows.append((name, coef.T, -const))

    def build(self, **meta) -> ConeProgram:
        nv = self.pool.size
        names: Dict[str, ConstraintGroup] = {}
        G_parts, h_parts, cones = [], [], []
        row = 0
        for name, blk, G, h, herm in self._cone_rows:
            names[name] = ConstraintGroup(name, 'cone', slice(row, row + blk.size), blk, herm)
            G_parts.append(G)
            h_parts.append(h)
            cones.append(blk)
            row += blk.size
        A_parts, b_parts = [], []
        row = 0
        for name, A, b in self._eq_rows:
            names[name] = ConstraintGroup(name, 'eq', slice(row, row + b.size))
            A_parts.append(A)
            b_parts.append(b)
            row += b.size
        program = ConeProgram(
            c=self.c,
            G=np.vstack(G_parts) if G_parts else np.zeros((0, nv)),
            h=np.concatenate(h_parts) if h_parts else np.zeros(0),
            A=np.vstack(A_parts) if A_parts else np.zeros((0, nv)),
            b=np.concatenate(b_parts) if b_parts else np.zeros(0),
            cones=cones, names=names, offset=self.offset, layout=self.pool, lmis=dict(self.lmis),
            meta=meta)
        program.validate()
        logger.debug(f"[build] {nv} variables, {program.m} cone rows, {program.p} equality rows, "
                     f"{len(names)} groups")
        return program


def group_dual(program: ConeProgram, sol: ConicSolution, name: str) -> Union[np.ndarray, float]:
    """
    Multiplier of one named group.

    Hermitian LMIs return the complex matrix Q with <Z, T(M)> = Re Tr(Q M);
    real LMIs return the symmetric matrix; SOC and nonnegative groups return the
    dual vector; equality groups return the shadow prices.
    """
    group = program.group(name)
    if group.kind == 'eq':
        return sol.y[group.rows]
    z = sol.z[group.rows]
    if group.cone is not None and group.cone.kind is ConeKind.PSD:
        Z = smat(z, group.cone.n)
        return dual_unembed(Z) if group.hermitian_order is not None else Z
    return z


def _lmi_gradient(program: ConeProgram, sol: ConicSolution, name: str) -> np.ndarray:
    Q = group_dual(program, sol, name)
    M = program.lmis[name]
    return np.real(np.einsum('ab,vba->v', Q, M.coef))


def complex_stationarity(program: ConeProgram, sol: ConicSolution) -> float:
    """
    Relative residual of c - sum_LMI Re Tr(Q dM/dx) + G_rest' z - A' y.

    LMI terms use the unembedded complex multipliers, so a small value shows
    that the recovered Q satisfy the complex-domain KKT conditions.
    """
    grad = program.c.copy()
    for name, group in program.names.items():
        if group.kind == 'eq':
            grad -= program.A[group.rows].T @ sol.y[group.rows]
        elif name in program.lmis:
            grad -= _lmi_gradient(program, sol, name)
        else:
            grad += program.G[group.rows].T @ sol.z[group.rows]
    return float(np.linalg.norm(grad) / max(1.0, float(np.linalg.norm(program.c))))


def lagrangian_terms(program: ConeProgram, sol: ConicSolution) -> Dict[str, float]:
    """
    Multiplier terms of the Lagrangian obj - sum <z, s(x)> - y'(Ax - b) per group.

    LMI groups are evaluated in the complex domain as -Re Tr(Q M(x)).
    """
    terms: Dict[str, float] = {}
    for name, group in program.names.items():
        if group.kind == 'eq':
            resid = program.A[group.rows] @ sol.x - program.b[group.rows]
            terms[name] = float(-sol.y[group.rows] @ resid)
        elif name in program.lmis:
            Q = group_dual(program, sol, name)
            terms[name] = float(-np.real(np.trace(Q @ program.lmis[name].value(sol.x))))
        else:
            slack = program.h[group.rows] - program.G[group.rows] @ sol.x
            terms[name] = float(-sol.z[group.rows] @ slack)
    return terms
