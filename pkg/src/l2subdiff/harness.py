"""Convergence studies against the pointwise-in-time error bound.

For ``r`` the grading exponent the bound reads

    E^m = M^(-r) t_m^(alpha-1)                          if r < 3 - alpha,
          M^(alpha-3) t_m^(alpha-1) [1 + ln(t_m/t_1)]   if r = 3 - alpha,
          M^(alpha-3) t_m^(alpha-(3-alpha)/r)           if r > 3 - alpha,

so the order at a fixed time is ``min(r, 3 - alpha)``.  Reference solutions
are either exact in time (expansion in discrete sine modes with
Mittag-Leffler coefficients, constant-coefficient linear problems only) or a
run on a finer mesh with the same grading.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import fft

from .mesh import TemporalMesh, build_graded
from .mittag_leffler import ml_neg
from .monotone import MonotoneRepresentation, barrier_profile
from .spatial import EllipticOperator1D, SpatialGrid1D, discrete_sine_eigenpairs
from .stepper import NonlinearSolveConfig, ProblemSpec, SolutionTrajectory, solve

__all__ = [
    "REGIME_TOL",
    "ErrorReport",
    "StudyCell",
    "EnergyDiagnostic",
    "theoretical_bound",
    "gamma_exponent",
    "estimate_order",
    "eigen_reference",
    "run_convergence_study",
    "energy_diagnostic",
    "write_study_csv",
]

log = logging.getLogger(__name__)

# |r - (3 - alpha)| below this selects the logarithmic case
REGIME_TOL = 1e-9


def regime(alpha: float, r: float) -> str:
    crit = 3.0 - alpha
    if abs(r - crit) <= REGIME_TOL:
        return "critical"
    return "sub" if r < crit else "super"


def theoretical_bound(alpha: float, r: float, M: int, t_m, t_1: float, sharp_log: bool = True):
    """``E^m`` at ``t_m`` (scalar or array).

    In the critical case the log factor is ``1 + ln(t_m/t_1)``; with
    ``sharp_log=False`` the cruder ``1 + ln(t_max/t_1)`` over the given times is used.
    """
    if not r >= 1:
        raise ValueError("grading exponent must satisfy r >= 1")
    if not t_1 > 0:
        raise ValueError("t_1 must be positive")
    t = np.asarray(t_m, dtype=float)
    if np.any(t < t_1 * (1.0 - 1e-14)):
        raise ValueError("bound is defined for t_m >= t_1")
    kind = regime(alpha, r)
    if kind == "sub":
        out = M ** (-r) * t ** (alpha - 1.0)
    elif kind == "critical":
        top = t if sharp_log else np.max(t)
        out = M ** (alpha - 3.0) * t ** (alpha - 1.0) * (1.0 + np.log(np.maximum(top / t_1, 1.0)))
    else:
        out = M ** (alpha - 3.0) * t ** (alpha - (3.0 - alpha) / r)
    return float(out) if out.ndim == 0 else out


def gamma_exponent(alpha: float, r: float) -> float:
    """``min(alpha, (3 - alpha)/r - 1)``."""
    if not r >= 1:
        raise ValueError("grading exponent must satisfy r >= 1")
    return min(alpha, (3.0 - alpha) / r - 1.0)


def estimate_order(errors: Sequence[float], Ms: Sequence[int]) -> float:
    """Least-squares slope of ``-ln err`` against ``ln M`` over all rungs."""
    e = np.asarray(errors, dtype=float)
    m = np.asarray(Ms, dtype=float)
    if e.size != m.size:
        raise ValueError("errors and Ms differ in length")
    if e.size < 3:
        raise ValueError("order fitting needs at least three rungs")
    if np.any(~np.isfinite(e)) or np.any(e <= 0):
        raise ValueError("errors must be positive and finite")
    return float(-np.polyfit(np.log(m), np.log(e), 1)[0])


def _sine_coefficients(u0: np.ndarray) -> np.ndarray:
    # u0_i = sum_k c_k sin(k pi i/(N+1)); DST-I is its own inverse up to 2(N+1)
    return fft.dst(u0, type=1) / (u0.size + 1)


def eigen_reference(problem: ProblemSpec, grid: SpatialGrid1D, t, drop: float = 1e-15) -> np.ndarray:
    """Exact-in-time solution of the semidiscrete linear problem at times ``t``; shape ``(len(t), N)``.

    Needs ``f = 0`` and a constant diffusion coefficient.  Modes whose initial
    coefficient is below ``drop`` times the largest are skipped.
    """
    if problem.f is not None:
        raise ValueError("eigen reference needs f = 0")
    if callable(problem.a):
        coeff = np.asarray(problem.a(grid.midpoints), dtype=float) * np.ones(grid.N + 1)
        if not np.all(coeff == coeff[0]):
            raise ValueError("eigen reference needs a constant diffusion coefficient")
        a = float(coeff[0])
    else:
        a = float(problem.a)
    mu, V = discrete_sine_eigenpairs(grid)
    mu = a * mu
    c = _sine_coefficients(problem.initial(grid))
    t = np.asarray(t, dtype=float)
    out = np.zeros((t.size, grid.N))
    keep = np.flatnonzero(np.abs(c) > drop * np.abs(c).max()) if np.any(c) else []
    for k in keep:
        e = ml_neg(problem.alpha, -mu[k] * t**problem.alpha)
        out += np.outer(c[k] * e, V[:, k])
    return out


@dataclass
class StudyCell:
    M: int
    t: np.ndarray  # t_0..t_M
    err: np.ndarray  # e^m, m = 0..M (e^0 = 0)
    bound: np.ndarray  # E^m, m = 1..M (index m-1)
    iterations: int
    elapsed: float
    error: str | None = None

    @property
    def ratio(self) -> np.ndarray:
        return self.err[1:] / self.bound

    @property
    def max_ratio(self) -> float:
        return float(self.ratio.max())

    @property
    def final_error(self) -> float:
        return float(self.err[-1])


@dataclass
class ErrorReport:
    """One grading exponent across an ``M`` ladder."""

    alpha: float
    r: float
    reference: str
    cells: dict[int, StudyCell] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)
    notes: str = ""

    @property
    def Ms(self) -> list[int]:
        return sorted(self.cells)

    @property
    def order(self) -> float:
        Ms = self.Ms
        return estimate_order([self.cells[M].final_error for M in Ms], Ms)

    @property
    def regime(self) -> str:
        return regime(self.alpha, self.r)

    def predicted_order(self) -> float:
        return min(self.r, 3.0 - self.alpha)

    def to_dict(self) -> dict:
        try:
            order = self.order
        except ValueError:
            order = None
        return {
            "alpha": self.alpha,
            "r": self.r,
            "reference": self.reference,
            "regime": self.regime,
            "predicted_order": self.predicted_order(),
            "fitted_order": order,
            "final_errors": {str(M): self.cells[M].final_error for M in self.Ms},
            "max_ratio": {str(M): self.cells[M].max_ratio for M in self.Ms},
            "failures": {str(k): v for k, v in self.failures.items()},
            "notes": self.notes,
        }


def _error_norms(U: np.ndarray, ref: np.ndarray, grid: SpatialGrid1D) -> np.ndarray:
    d = U - ref
    return np.sqrt(grid.h * np.einsum("ij,ij->i", d, d))


def _run_cell(problem, mesh, grid, cfg, ref_values) -> StudyCell:
    traj = solve(problem, mesh, grid, cfg)
    err = _error_norms(traj.U, ref_values, grid)
    t = mesh.points
    bound = theoretical_bound(problem.alpha, mesh.r, mesh.M, t[1:], t[1])
    return StudyCell(mesh.M, t, err, bound, int(traj.iterations.max()), traj.elapsed)


def run_convergence_study(
    problem: ProblemSpec,
    rs: Sequence[float],
    Ms: Sequence[int],
    grid: SpatialGrid1D,
    cfg: NonlinearSolveConfig = NonlinearSolveConfig(),
    reference: str = "auto",
    csv_path: str | Path | None = None,
    workers: int = 1,
    ref_factor: int = 4,
) -> list[ErrorReport]:
    """Errors at every level for each ``(r, M)``; one report per ``r``.

    ``reference='auto'`` picks the exact-in-time reference when the problem
    allows it and otherwise a run with ``ref_factor * max(M)`` steps and the
    same grading, whose own error is smaller by about
    ``ref_factor^min(r, 3-alpha)``.  A failed cell is recorded and skipped.
    """
    Ms = sorted(int(M) for M in Ms)
    if reference == "auto":
        eigen_ok = problem.f is None and not callable(problem.a)
        reference = "eigen" if eigen_ok else "fine"
    if reference not in ("eigen", "fine"):
        raise ValueError(f"unknown reference {reference!r}")
    reports = []
    for r in rs:
        rep = ErrorReport(problem.alpha, float(r), reference)
        fine = None
        M_ref = ref_factor * Ms[-1]
        if reference == "fine":
            if any(M_ref % M for M in Ms):
                raise ValueError("fine reference needs every M to divide the reference size")
            fine = solve(problem, build_graded(problem.T, M_ref, r), grid, cfg)
            rep.notes = (
                f"fine-mesh reference M_ref={M_ref}; its error is smaller by about "
                f"{ref_factor}^{min(r, 3 - problem.alpha):.3g}"
            )
        else:
            rep.notes = "exact-in-time reference from discrete sine modes"

        def job(M, r=r, fine=fine, M_ref=M_ref):
            mesh = build_graded(problem.T, M, r)
            if fine is None:
                ref_values = eigen_reference(problem, grid, mesh.points)
            else:
                ref_values = fine.U[:: M_ref // M]
            return _run_cell(problem, mesh, grid, cfg, ref_values)

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            futures = {M: pool.submit(job, M) for M in Ms}
            for M, fut in futures.items():
                try:
                    rep.cells[M] = fut.result()
                except Exception as exc:  # one failed cell must not end the study
                    log.warning("cell alpha=%g r=%g M=%d failed: %s", problem.alpha, r, M, exc)
                    rep.failures[M] = f"{type(exc).__name__}: {exc}"
        reports.append(rep)
    if csv_path is not None:
        write_study_csv(reports, csv_path)
    return reports


def write_study_csv(reports: Sequence[ErrorReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "r", "M", "m", "t_m", "err", "bound", "ratio"])
        for rep in reports:
            for M in rep.Ms:
                cell = rep.cells[M]
                for m in range(1, M + 1):
                    w.writerow(
                        [
                            rep.alpha,
                            rep.r,
                            M,
                            m,
                            repr(float(cell.t[m])),
                            repr(float(cell.err[m])),
                            repr(float(cell.bound[m - 1])),
                            repr(float(cell.ratio[m - 1])),
                        ]
                    )


@dataclass
class EnergyDiagnostic:
    W: np.ndarray  # m = 0..M
    v_norms: np.ndarray
    gamma: float
    C_fit: float
    profile: np.ndarray  # barrier values, m = 1..M


def energy_diagnostic(
    U,
    rep: MonotoneRepresentation,
    L_h: EllipticOperator1D,
    gamma: float | None = None,
    mesh: TemporalMesh | None = None,
    alpha: float | None = None,
    sharp_ell: bool = True,
) -> EnergyDiagnostic:
    """``W^m = sqrt(|V^m|^2 + kappa*_m <L_h U^m, U^m>)`` and its fit against the barrier.

    ``U`` is a trajectory or an ``(M+1, N)`` array, typically an error grid
    function.  ``C_fit = max_m W^m / barrier^m`` for the given ``gamma``.
    """
    if isinstance(U, SolutionTrajectory):
        mesh = U.mesh if mesh is None else mesh
        alpha = U.alpha if alpha is None else alpha
        U = U.U
    if mesh is None or alpha is None:
        raise ValueError("mesh and alpha are required for a bare array")
    U = np.asarray(U, dtype=float)
    if U.shape[0] != rep.M + 1 or mesh.M != rep.M:
        raise ValueError("representation and trajectory live on different meshes")
    if not rep.sign_ok:
        raise ValueError("energy needs a representation with valid sign pattern")
    h = L_h.grid.h
    V = rep.to_v(U)
    v2 = h * np.einsum("ij,ij->i", V, V)
    LU = h * np.einsum("ij,ij->i", L_h.apply(U.T).T, U)
    W = np.sqrt(v2)
    W[1:] = np.sqrt(v2[1:] + rep.kappa_star * LU[1:])
    if gamma is None:
        r = mesh.r if mesh.r is not None else 1.0
        gamma = gamma_exponent(alpha, r)
    prof = barrier_profile(mesh, alpha, gamma, sharp_ell).values
    C = float(np.max(W[1:] / prof))
    return EnergyDiagnostic(W, np.sqrt(v2), float(gamma), C, prof)
