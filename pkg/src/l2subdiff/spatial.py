"""Finite differences for ``L u = -(a(x) u')'`` on ``(0, X)`` with zero Dirichlet data."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "SpatialGrid1D",
    "EllipticOperator1D",
    "ShiftedFactor",
    "assemble_elliptic",
    "solve_shifted",
    "discrete_sine_eigenpairs",
    "thomas",
    "l2_norm",
    "inner",
]


@dataclass(frozen=True)
class SpatialGrid1D:
    X: float
    N: int

    def __post_init__(self) -> None:
        if not self.X > 0:
            raise ValueError("domain length must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("need at least one interior node")

    @property
    def h(self) -> float:
        return self.X / (self.N + 1)

    @property
    def nodes(self) -> np.ndarray:
        """Interior nodes ``x_i = i h``, ``i = 1..N``."""
        return self.h * np.arange(1, self.N + 1)

    @property
    def midpoints(self) -> np.ndarray:
        """``x_{i-1/2}`` for ``i = 1..N+1``."""
        return self.h * (np.arange(self.N + 1) + 0.5)

    def sample(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        return np.asarray(fn(self.nodes), dtype=float) * np.ones(self.N)


def l2_norm(u: np.ndarray, grid: SpatialGrid1D) -> float:
    """Discrete ``L2(0, X)`` norm ``sqrt(h sum u_i^2)``."""
    return math.sqrt(grid.h * float(np.dot(u, u)))


def inner(u: np.ndarray, w: np.ndarray, grid: SpatialGrid1D) -> float:
    return grid.h * float(np.dot(u, w))


@dataclass(frozen=True)
class EllipticOperator1D:
    grid: SpatialGrid1D
    coeff: np.ndarray  # a(x_{i-1/2}), i = 1..N+1
    constant: bool

    @property
    def diag(self) -> np.ndarray:
        return (self.coeff[:-1] + self.coeff[1:]) / self.grid.h**2

    @property
    def off(self) -> np.ndarray:
        """Sub- and super-diagonal (the operator is symmetric)."""
        return -self.coeff[1:-1] / self.grid.h**2

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        padded = np.zeros((u.shape[0] + 2,) + u.shape[1:])
        padded[1:-1] = u
        flux = np.diff(padded, axis=0) * _expand(self.coeff, u.ndim)
        return -np.diff(flux, axis=0) / self.grid.h**2

    def to_dense(self) -> np.ndarray:
        n = self.grid.N
        out = np.diag(self.diag)
        if n > 1:
            out += np.diag(self.off, 1) + np.diag(self.off, -1)
        return out

    def factor_shifted(self, c: float, extra_diag: np.ndarray | None = None) -> "ShiftedFactor":
        return ShiftedFactor(self, c, extra_diag)


def _expand(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape(v.shape + (1,) * (ndim - 1))


def assemble_elliptic(grid: SpatialGrid1D, a: float | Callable[[np.ndarray], np.ndarray] = 1.0) -> EllipticOperator1D:
    """Conservative three-point stencil with the diffusion sampled at cell midpoints."""
    if callable(a):
        coeff = np.asarray(a(grid.midpoints), dtype=float) * np.ones(grid.N + 1)
        constant = bool(np.all(coeff == coeff[0]))
    else:
        coeff = np.full(grid.N + 1, float(a))
        constant = True
    if np.any(coeff <= 0) or not np.all(np.isfinite(coeff)):
        raise ValueError("diffusion coefficient must be positive")
    coeff.setflags(write=False)
    return EllipticOperator1D(grid, coeff, constant)


class ShiftedFactor:
    """LU factorisation of ``c I + L_h (+ diag(extra))`` reused across right-hand sides."""

    def __init__(self, op: EllipticOperator1D, c: float, extra_diag: np.ndarray | None = None):
        if not c > 0:
            raise ValueError("shift must be positive")
        self.op = op
        self.c = float(c)
        d = op.diag + c
        if extra_diag is not None:
            d = d + extra_diag
        off = op.off
        self._main = d
        self._dense = None
        if d.size <= 2:
            # the LAPACK wrapper cannot take n = 2; tiny systems are solved densely
            self._dense = np.diag(d) + (np.diag(off, 1) + np.diag(off, -1) if d.size == 2 else 0.0)
            return
        dl, dd, du, du2, ipiv, info = lapack.dgttrf(off.copy(), d.copy(), off.copy())
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal factorisation failed (info={info})")
        self._lu = (dl, dd, du, du2, ipiv)

    def solve(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if self._dense is not None:
            return np.linalg.solve(self._dense, g.reshape(g.shape[0], -1)).reshape(g.shape)
        rhs = g.reshape(g.shape[0], -1) if g.ndim > 1 else g[:, None]
        x, info = lapack.dgttrs(*self._lu, rhs)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal solve failed (info={info})")
        return x.reshape(g.shape)

    def matvec(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.op.apply(u) + _expand(self._main - self.op.diag, u.ndim) * u


def solve_shifted(op: EllipticOperator1D, c: float, g: np.ndarray) -> np.ndarray:
    """Solve ``(c I + L_h) u = g``."""
    return ShiftedFactor(op, c).solve(g)


def thomas(sub: np.ndarray, diag: np.ndarray, sup: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Plain Thomas elimination; ``sub[i]`` couples row ``i+1`` to ``i``."""
    n = diag.size
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = sup[0] / diag[0] if n > 1 else 0.0
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        den = diag[i] - sub[i - 1] * cp[i - 1]
        cp[i] = sup[i] / den if i < n - 1 else 0.0
        dp[i] = (rhs[i] - sub[i - 1] * dp[i - 1]) / den
    x = np.empty(n)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def discrete_sine_eigenpairs(grid: SpatialGrid1D, op: EllipticOperator1D | None = None):
    """Eigenpairs of ``L_h`` for ``a = 1``: ``mu_k = (4/h^2) sin^2(k pi h / (2X))``, ``v_k(x) = sin(k pi x / X)``.

    Returns ``(mu, V)`` with ``V[:, k-1] = v_k`` at the interior nodes.  If an
    operator is passed it must have unit coefficient.
    """
    if op is not None and not (op.constant and np.all(op.coeff == 1.0)):
        raise ValueError("sine eigenpairs need the constant coefficient a = 1")
    k = np.arange(1, grid.N + 1)
    h, X = grid.h, grid.X
    mu = 4.0 / h**2 * np.sin(k * math.pi * h / (2.0 * X)) ** 2
    V = np.sin(np.outer(grid.nodes, k) * math.pi / X)
    return mu, V
