"""Discrete Caputo operators on nonuniform meshes.

Both operators are written as ``delta U^m = sum_{j<=m} a_{m,j} U^j``.  The L2
flavour differentiates piecewise-quadratic Lagrange interpolants of the
history (linear on the first step when ``m = 1``, and on the last interval the
quadratic through ``t_{m-2}, t_{m-1}, t_m``); the L1 flavour uses
piecewise-linear interpolation everywhere.

Every coefficient is an exact weakly singular integral.  On an interval
``[t_{k-1}, t_k]`` at distance ``d = t_m - t_k`` from the evaluation point the
two moments

    M0 = int_0^1 (d + (1-s) h)^(-alpha) ds
    M1 = int_0^1 (d + (1-s) h)^(-alpha) s ds

are all that is needed.  Far from ``t_m`` (``h/d`` small) the closed forms
cancel, so a binomial series in ``h/d`` is summed to machine precision there.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .mesh import TemporalMesh

__all__ = [
    "DiscreteCaputoMatrix",
    "LossOfPrecisionWarning",
    "TruncationProfile",
    "assemble",
    "assemble_l1",
    "assemble_l2",
    "apply_history",
    "caputo_monomial",
    "caputo_polynomial",
    "interval_moments",
    "iter_rows",
    "caputo_row",
    "truncation_profile",
    "write_coefficients_csv",
]

log = logging.getLogger(__name__)

FLAVORS = ("l2", "l1")

# switch to the binomial series when h/d drops below this
SERIES_SWITCH = 0.2
ROW_SUM_RTOL = 1e-12


class LossOfPrecisionWarning(RuntimeWarning):
    pass


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def interval_moments(d, h, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Moments ``M0, M1`` of the kernel ``(d + (1-s) h)^(-alpha)`` on ``s in [0, 1]``."""
    d = np.atleast_1d(np.asarray(d, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    m0 = np.empty_like(d)
    m1 = np.empty_like(d)

    last = d == 0.0
    hl = h[last] ** (-alpha)
    m0[last] = hl / (1.0 - alpha)
    m1[last] = hl / ((1.0 - alpha) * (2.0 - alpha))

    far = ~last
    z = np.zeros_like(d)
    z[far] = h[far] / d[far]
    near = far & (z > SERIES_SWITCH)
    series = far & ~near

    if np.any(near):
        dn, hn = d[near], h[near]
        p1 = ((dn + hn) ** (1.0 - alpha) - dn ** (1.0 - alpha)) / (1.0 - alpha)
        p2 = ((dn + hn) ** (2.0 - alpha) - dn ** (2.0 - alpha)) / (2.0 - alpha)
        m0[near] = p1 / hn
        m1[near] = p1 / hn - (p2 - dn * p1) / hn**2

    if np.any(series):
        zs = z[series]
        coef = np.ones_like(zs)
        s0 = np.zeros_like(zs)
        s1 = np.zeros_like(zs)
        n = 0
        while True:
            s0 += coef / (n + 1)
            s1 += coef / ((n + 1) * (n + 2))
            coef = coef * ((-alpha - n) / (n + 1)) * zs
            n += 1
            if np.all(np.abs(coef) <= 1e-17 * s0) or n > 200:
                break
        scale = d[series] ** (-alpha)
        m0[series] = scale * s0
        m1[series] = scale * s1
    return m0, m1


def caputo_row(mesh: TemporalMesh, alpha: float, m: int, flavor: str = "l2") -> np.ndarray:
    """Coefficients ``a_{m,0..m}`` of one row."""
    _check_alpha(alpha)
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}")
    if not 1 <= m <= mesh.M:
        raise IndexError(f"row {m} outside 1..{mesh.M}")
    t = mesh.points
    tau = mesh.steps
    k = np.arange(1, m + 1)
    h = tau[k - 1]
    d = t[m] - t[k]
    d[-1] = 0.0
    m0, m1 = interval_moments(d, h, alpha)
    row = np.zeros(m + 1)
    if flavor == "l1" or m == 1:
        row[1:] += m0
        row[:-1] -= m0
        return row / math.gamma(1.0 - alpha)

    # intervals k < m: quadratic through t_{k-1}, t_k, t_{k+1}, expanded at t_{k-1}
    m0i, m1i = m0[:-1], m1[:-1]
    rho = tau[1:m] / tau[: m - 1]
    opr = 1.0 + rho
    w0 = -m0i * (2.0 + rho) / opr + 2.0 * m1i / opr
    w1 = m0i * opr / rho - 2.0 * m1i / rho
    w2 = (2.0 * m1i - m0i) / (rho * opr)
    row[: m - 1] += w0
    row[1:m] += w1
    row[2 : m + 1] += w2

    # last interval: quadratic through t_{m-2}, t_{m-1}, t_m, expanded at t_{m-1}
    q = tau[m - 1] / tau[m - 2]
    ml0, ml1 = m0[-1], m1[-1]
    row[m - 2] += (2.0 * ml1 - ml0) * q * q / (1.0 + q)
    row[m - 1] += ml0 * (q - 1.0) - 2.0 * q * ml1
    row[m] += (ml0 + 2.0 * q * ml1) / (1.0 + q)
    return row / math.gamma(1.0 - alpha)


def iter_rows(mesh: TemporalMesh, alpha: float, flavor: str = "l2") -> Iterator[np.ndarray]:
    """Stream rows ``m = 1..M`` without keeping the whole matrix."""
    for m in range(1, mesh.M + 1):
        yield caputo_row(mesh, alpha, m, flavor)


def _offset(m: int) -> int:
    # rows m = 1..M hold m+1 entries each
    return (m - 1) * (m + 2) // 2


@dataclass(frozen=True)
class DiscreteCaputoMatrix:
    """Packed lower-triangular coefficients ``a_{m,j}``, ``1 <= m <= M``, ``0 <= j <= m``."""

    alpha: float
    flavor: str
    mesh: TemporalMesh
    packed: np.ndarray

    @property
    def M(self) -> int:
        return self.mesh.M

    def row(self, m: int) -> np.ndarray:
        if not 1 <= m <= self.M:
            raise IndexError(f"row {m} outside 1..{self.M}")
        start = _offset(m)
        return self.packed[start : start + m + 1]

    def __getitem__(self, idx: tuple[int, int]) -> float:
        m, j = idx
        if not 0 <= j <= m:
            return 0.0
        return float(self.row(m)[j])

    def diagonal(self) -> np.ndarray:
        """``a_{m,m}`` for ``m = 1..M``."""
        return np.array([self.packed[_offset(m) + m] for m in range(1, self.M + 1)])

    def to_dense(self) -> np.ndarray:
        """``(M+1) x (M+1)`` array; row 0 is left zero."""
        out = np.zeros((self.M + 1, self.M + 1))
        for m in range(1, self.M + 1):
            out[m, : m + 1] = self.row(m)
        return out

    def apply(self, U, m: int):
        return apply_history(self, U, m)

    def row_sum_defects(self) -> np.ndarray:
        """``|sum_j a_{m,j}| / max_j |a_{m,j}|`` per row."""
        out = np.empty(self.M)
        for m in range(1, self.M + 1):
            row = self.row(m)
            out[m - 1] = abs(math.fsum(row)) / np.abs(row).max()
        return out

    def diagonal_bound_ratio(self) -> np.ndarray:
        """``a_{m,m} tau_m^alpha Gamma(2-alpha)``; at least one for both flavours."""
        tau = self.mesh.steps
        return self.diagonal() * tau**self.alpha * math.gamma(2.0 - self.alpha)

    def is_z_matrix(self, rtol: float = 1e-12) -> bool:
        for m in range(1, self.M + 1):
            row = self.row(m)
            if np.any(row[:-1] > rtol * np.abs(row).max()):
                return False
        return True


def assemble(mesh: TemporalMesh, alpha: float, flavor: str = "l2") -> DiscreteCaputoMatrix:
    _check_alpha(alpha)
    if flavor not in FLAVORS:
        raise ValueError(f"unknown flavor {flavor!r}")
    M = mesh.M
    packed = np.empty(_offset(M + 1))
    for m, row in enumerate(iter_rows(mesh, alpha, flavor), start=1):
        packed[_offset(m) : _offset(m) + m + 1] = row
    packed.setflags(write=False)
    op = DiscreteCaputoMatrix(float(alpha), flavor, mesh, packed)
    worst = op.row_sum_defects().max()
    if worst > ROW_SUM_RTOL:
        warnings.warn(
            f"{flavor} coefficients lost precision: relative row-sum defect {worst:.2e}",
            LossOfPrecisionWarning,
            stacklevel=2,
        )
    log.debug("assembled %s operator, M=%d, alpha=%g", flavor, M, alpha)
    return op


def assemble_l2(mesh: TemporalMesh, alpha: float) -> DiscreteCaputoMatrix:
    return assemble(mesh, alpha, "l2")


def assemble_l1(mesh: TemporalMesh, alpha: float) -> DiscreteCaputoMatrix:
    return assemble(mesh, alpha, "l1")


def apply_history(op: DiscreteCaputoMatrix, U, m: int):
    """``delta U^m`` from the history ``U^0..U^m``.

    ``U`` may be one value per time level or a 2-D array with time along the
    first axis.
    """
    U = np.asarray(U, dtype=float)
    if U.shape[0] != m + 1:
        raise ValueError(f"history for row {m} must have {m + 1} levels, got {U.shape[0]}")
    row = op.row(m)
    if U.ndim == 1:
        return math.fsum(row * U)
    return compensated_dot(row, U)


def compensated_dot(coeffs: np.ndarray, U: np.ndarray) -> np.ndarray:
    """``sum_j coeffs[j] * U[j]`` with Neumaier compensation, vectorised over ``U[j]``."""
    s = np.zeros(U.shape[1:])
    c = np.zeros_like(s)
    for a, u in zip(coeffs, U):
        x = a * u
        t = s + x
        big = np.abs(s) >= np.abs(x)
        c += np.where(big, (s - t) + x, (x - t) + s)
        s = t
    return s + c


def caputo_monomial(sigma: float, alpha: float, t):
    """Caputo derivative of ``t^sigma``: ``Gamma(sigma+1)/Gamma(sigma+1-alpha) t^(sigma-alpha)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive (the derivative of a constant is zero)")
    _check_alpha(alpha)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    out = math.gamma(sigma + 1.0) / math.gamma(sigma + 1.0 - alpha) * t ** (sigma - alpha)
    return float(out) if out.ndim == 0 else out


def caputo_polynomial(terms: Sequence[tuple[float, float]], alpha: float, t):
    """Caputo derivative of ``sum c * t^sigma`` given as ``(c, sigma)`` pairs; constants drop out."""
    t = np.asarray(t, dtype=float)
    total = np.zeros_like(t)
    for c, sigma in terms:
        if sigma == 0:
            continue
        total = total + c * caputo_monomial(sigma, alpha, t)
    return total


@dataclass
class TruncationProfile:
    """``r^m = delta u(t_m) - D^alpha u(t_m)`` for ``m = 1..M``."""

    errors: np.ndarray
    label: str
    gamma: float
    fitted_constant: float

    def __len__(self) -> int:
        return self.errors.size

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.errors).max())


def truncation_profile(
    op: DiscreteCaputoMatrix,
    u: Callable[[np.ndarray], np.ndarray],
    exact: Callable[[np.ndarray], np.ndarray],
    gamma: float,
    label: str = "",
) -> TruncationProfile:
    """Truncation errors of ``op`` on the sampled function ``u``.

    ``exact`` returns the Caputo derivative of ``u``.  The fitted constant is
    ``max_m |r^m| (t_m/tau_1)^(gamma+1)``.
    """
    t = op.mesh.points
    samples = np.asarray(u(t), dtype=float)
    ref = np.asarray(exact(t[1:]), dtype=float)
    err = np.array([apply_history(op, samples[: m + 1], m) for m in range(1, op.M + 1)]) - ref
    tau1 = op.mesh.steps[0]
    weight = (t[1:] / tau1) ** (gamma + 1.0)
    return TruncationProfile(err, label, float(gamma), float(np.max(np.abs(err) * weight)))


def write_coefficients_csv(op: DiscreteCaputoMatrix, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "j", "a_mj"])
        for m in range(1, op.M + 1):
            for j, a in enumerate(op.row(m)):
                w.writerow([m, j, repr(float(a))])
