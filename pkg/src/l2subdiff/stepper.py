"""Time marching for ``D^alpha u + L u + f(x, t, u) = 0`` with zero Dirichlet data.

Each level solves

    a_{m,m} U^m + L_h U^m + f(., t_m, U^m) = -sum_{j<m} a_{m,j} U^j

by the fixed-point iteration ``U <- (a_{m,m} I + L_h)^{-1} (rhs - f(U))``,
which contracts with factor at most ``lambda / a_{m,m}`` when ``f`` is
``lambda``-Lipschitz in ``u``.  Newton with a fixed-point fallback is offered
when ``df/du`` is supplied.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .caputo import DiscreteCaputoMatrix, apply_history, assemble, compensated_dot
from .mesh import MeshAssumptionConfig, TemporalMesh, analyze_mesh
from .spatial import EllipticOperator1D, ShiftedFactor, SpatialGrid1D, assemble_elliptic, l2_norm

__all__ = [
    "ProblemSpec",
    "NonlinearSolveConfig",
    "NonlinearSolveError",
    "StepResult",
    "SolutionTrajectory",
    "step",
    "solve",
    "residual_norm",
    "write_trajectory_csv",
    "write_trajectory_json",
]

log = logging.getLogger(__name__)

Nonlinearity = Callable[[np.ndarray, float, np.ndarray], np.ndarray]


@dataclass
class ProblemSpec:
    """Problem data.  ``f(x, t, s)`` is vectorised over nodes; ``lipschitz`` is its declared constant in ``s``.

    ``clip = (lo, hi)`` evaluates ``f`` on ``s`` clipped to a declared solution
    range, which makes locally Lipschitz nonlinearities admissible.
    """

    alpha: float
    T: float = 1.0
    X: float = 1.0
    a: float | Callable[[np.ndarray], np.ndarray] = 1.0
    f: Nonlinearity | None = None
    lipschitz: float = 0.0
    u0: Callable[[np.ndarray], np.ndarray] | float = 0.0
    flavor: str = "l2"
    dfds: Nonlinearity | None = None
    clip: tuple[float, float] | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.lipschitz < 0:
            raise ValueError("Lipschitz constant must be non-negative")
        if self.clip is not None and not self.clip[0] < self.clip[1]:
            raise ValueError("clip range must satisfy lo < hi")

    @property
    def linear_homogeneous(self) -> bool:
        return self.f is None

    def nonlinearity(self) -> Nonlinearity | None:
        if self.f is None or self.clip is None:
            return self.f
        lo, hi = self.clip
        f = self.f
        return lambda x, t, s: f(x, t, np.clip(s, lo, hi))

    def derivative(self) -> Nonlinearity | None:
        if self.dfds is None or self.clip is None:
            return self.dfds
        lo, hi = self.clip
        df = self.dfds
        return lambda x, t, s: np.where((s > lo) & (s < hi), df(x, t, np.clip(s, lo, hi)), 0.0)

    def initial(self, grid: SpatialGrid1D) -> np.ndarray:
        if callable(self.u0):
            return grid.sample(self.u0)
        return np.full(grid.N, float(self.u0))


@dataclass(frozen=True)
class NonlinearSolveConfig:
    method: str = "fixed-point"
    rtol: float = 1e-12
    max_iter: int = 50

    def __post_init__(self) -> None:
        if self.method not in ("fixed-point", "newton"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.rtol > 10 * np.finfo(float).eps:
            raise ValueError("tolerance must exceed 10 machine epsilons")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


class NonlinearSolveError(RuntimeError):
    def __init__(self, m: int, history: list[float], method: str):
        self.m = m
        self.history = history
        super().__init__(
            f"{method} iteration at level m={m} did not converge in {len(history)} iterations; "
            f"last increments {history[-3:]} (check the Lipschitz constant or the tolerance)"
        )


@dataclass
class StepResult:
    U: np.ndarray
    iterations: int
    residual: float  # equation residual relative to the natural scale
    method: str


@dataclass
class SolutionTrajectory:
    mesh: TemporalMesh
    grid: SpatialGrid1D
    U: np.ndarray  # (M+1, N)
    iterations: np.ndarray
    residuals: np.ndarray
    alpha: float
    flavor: str
    elapsed: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.mesh.M

    def norms(self) -> np.ndarray:
        return np.sqrt(self.grid.h * np.einsum("ij,ij->i", self.U, self.U))

    def summary(self) -> dict:
        return {
            "alpha": self.alpha,
            "flavor": self.flavor,
            "M": self.M,
            "N": self.grid.N,
            "T": self.mesh.T,
            "r": self.mesh.r,
            "max_iterations": int(self.iterations.max(initial=0)),
            "max_residual": float(self.residuals.max(initial=0.0)),
            "final_norm": float(self.norms()[-1]),
            "elapsed_s": self.elapsed,
            **self.meta,
        }


def _abs_apply(L_h: EllipticOperator1D, u: np.ndarray) -> np.ndarray:
    """``|L_h| |u|``: the magnitude the stencil sums over, used as a rounding scale."""
    au = np.abs(u)
    out = L_h.diag * au
    off = np.abs(L_h.off)
    out[:-1] += off * au[1:]
    out[1:] += off * au[:-1]
    return out


def _natural_scale(a_mm, U, L_h, hist_scale, fU, grid) -> float:
    s = l2_norm(a_mm * np.abs(U) + _abs_apply(L_h, U), grid) + hist_scale
    if fU is not None:
        s += l2_norm(fU, grid)
    return s


def step(
    m: int,
    history: np.ndarray,
    A: DiscreteCaputoMatrix,
    L_h: EllipticOperator1D,
    f: Nonlinearity | None,
    cfg: NonlinearSolveConfig = NonlinearSolveConfig(),
    dfds: Nonlinearity | None = None,
    factor: ShiftedFactor | None = None,
    guess: np.ndarray | None = None,
    hist: np.ndarray | None = None,
    hist_scale: float | None = None,
    lipschitz: float | None = None,
) -> StepResult:
    """Advance to level ``m`` given ``history = U^0..U^{m-1}`` (shape ``(m, N)``).

    With the contraction factor ``q = lipschitz / a_{m,m}`` the iteration stops
    once ``q/(1-q) |U_{k+1} - U_k| <= rtol |U_{k+1}|``, which bounds the
    distance to the fixed point; without ``lipschitz`` the plain increment is
    used.  Either way the equation residual, ``f(U_{k+1}) - f(U_k)``, stays
    below ``rtol * a_{m,m} |U|``.  ``hist`` and ``hist_scale`` may be passed in
    when the caller already holds them.
    """
    history = np.asarray(history, dtype=float)
    if history.shape[0] != m:
        raise ValueError(f"level {m} needs {m} history levels, got {history.shape[0]}")
    row = A.row(m)
    a_mm = float(row[m])
    grid = L_h.grid
    x = grid.nodes
    t = float(A.mesh.points[m])
    if hist is None:
        hist = compensated_dot(row[:m], history)
    if hist_scale is None:
        hist_scale = float(np.abs(row[:m]) @ np.sqrt(grid.h * np.einsum("ij,ij->i", history, history)))
    rhs = -hist
    if factor is None:
        factor = L_h.factor_shifted(a_mm)
    U = history[-1].copy() if guess is None else np.asarray(guess, dtype=float).copy()

    def finish(U, fU, its, method):
        res = a_mm * U + L_h.apply(U) + hist
        if fU is not None:
            res = res + fU
        scale = _natural_scale(a_mm, U, L_h, hist_scale, fU, grid)
        rel = l2_norm(res, grid) / scale if scale > 0 else 0.0
        return StepResult(U, its, rel, method)

    if f is None:
        return finish(factor.solve(rhs), None, 1, "linear")

    if cfg.method == "newton" and dfds is not None:
        out = _newton(m, U, rhs, a_mm, L_h, f, dfds, x, t, cfg)
        if out is not None:
            U_new, its = out
            return finish(U_new, f(x, t, U_new), its, "newton")
        log.info("newton failed at m=%d, falling back to fixed-point", m)

    q = lipschitz / a_mm if lipschitz is not None else None
    gain = q / (1.0 - q) if q is not None and q < 1.0 else 1.0
    fU = f(x, t, U)
    incs: list[float] = []
    for k in range(1, cfg.max_iter + 1):
        U_new = factor.solve(rhs - fU)
        inc = gain * float(np.linalg.norm(U_new - U))
        size = float(np.linalg.norm(U_new))
        incs.append(inc / size if size > 0 else inc)
        U = U_new
        fU = f(x, t, U)
        if inc <= cfg.rtol * size or inc == 0.0:
            return finish(U, fU, k, "fixed-point")
    raise NonlinearSolveError(m, incs, "fixed-point")


def _newton(m, U, rhs, a_mm, L_h, f, dfds, x, t, cfg):
    prev = math.inf
    for k in range(1, cfg.max_iter + 1):
        fU = f(x, t, U)
        R = a_mm * U + L_h.apply(U) + fU - rhs
        J = ShiftedFactor(L_h, a_mm, extra_diag=dfds(x, t, U))
        dU = J.solve(R)
        inc = float(np.linalg.norm(dU))
        if not np.isfinite(inc) or inc > prev:
            return None
        U = U - dU
        prev = inc
        if inc <= cfg.rtol * float(np.linalg.norm(U)) or inc == 0.0:
            return U, k
    return None


def solve(
    problem: ProblemSpec,
    mesh: TemporalMesh,
    grid: SpatialGrid1D,
    cfg: NonlinearSolveConfig = NonlinearSolveConfig(),
    op: DiscreteCaputoMatrix | None = None,
) -> SolutionTrajectory:
    """March ``U^0 = u_0`` through all levels of ``mesh``."""
    if problem.X != grid.X:
        raise ValueError("grid length does not match the problem domain")
    diag = analyze_mesh(mesh, MeshAssumptionConfig(), problem.alpha, problem.lipschitz)
    if not diag.lambda_cond_ok:
        raise ValueError(
            f"Lipschitz constant {problem.lipschitz} violates lambda tau_j^alpha < 1/Gamma(2-alpha) on this mesh"
        )
    if op is None:
        op = assemble(mesh, problem.alpha, problem.flavor)
    elif op.mesh is not mesh and not np.array_equal(op.mesh.points, mesh.points):
        raise ValueError("operator was assembled on a different mesh")
    L_h = assemble_elliptic(grid, problem.a)
    f = problem.nonlinearity()
    dfds = problem.derivative()
    M, N = mesh.M, grid.N
    U = np.zeros((M + 1, N))
    U[0] = problem.initial(grid)
    norms = np.zeros(M + 1)
    norms[0] = l2_norm(U[0], grid)
    its = np.zeros(M + 1, dtype=int)
    res = np.zeros(M + 1)
    start = time.perf_counter()
    for m in range(1, M + 1):
        row = op.row(m)
        out = step(
            m,
            U[:m],
            op,
            L_h,
            f,
            cfg,
            dfds=dfds,
            factor=L_h.factor_shifted(float(row[m])),
            hist=compensated_dot(row[:m], U[:m]),
            hist_scale=float(np.abs(row[:m]) @ norms[:m]),
            lipschitz=problem.lipschitz,
        )
        U[m] = out.U
        norms[m] = l2_norm(out.U, grid)
        its[m] = out.iterations
        res[m] = out.residual
    elapsed = time.perf_counter() - start
    meta = {"problem": problem.name, "method": cfg.method, "rtol": cfg.rtol}
    return SolutionTrajectory(mesh, grid, U, its, res, problem.alpha, op.flavor, elapsed, meta)


def residual_norm(
    traj: SolutionTrajectory,
    A: DiscreteCaputoMatrix,
    L_h: EllipticOperator1D,
    f: Nonlinearity | None = None,
    relative: bool = False,
) -> float:
    """Largest discrete ``L2`` norm of ``delta U^m + L_h U^m + f(., t_m, U^m)`` over ``m >= 1``.

    With ``relative`` each level is divided by its natural scale (the sum of
    the magnitudes entering the equation).
    """
    x = traj.grid.nodes
    grid = traj.grid
    norms = traj.norms()
    worst = 0.0
    for m in range(1, traj.M + 1):
        row = A.row(m)
        Um = traj.U[m]
        fU = f(x, float(traj.mesh.points[m]), Um) if f is not None else None
        R = apply_history(A, traj.U[: m + 1], m) + L_h.apply(Um)
        if fU is not None:
            R = R + fU
        val = l2_norm(R, grid)
        if relative:
            scale = _natural_scale(float(row[m]), Um, L_h, float(np.abs(row[:m]) @ norms[:m]), fU, grid)
            val = val / scale if scale > 0 else 0.0
        worst = max(worst, val)
    return worst


def write_trajectory_csv(traj: SolutionTrajectory, path: str | Path, nodes=None) -> None:
    """Columns ``m, t_m``, values at selected node indices, and ``norm``."""
    N = traj.grid.N
    if nodes is None:
        nodes = sorted({0, N // 4, N // 2, (3 * N) // 4, N - 1})
    x = traj.grid.nodes
    norms = traj.norms()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "t_m"] + [f"u(x={x[i]:.6g})" for i in nodes] + ["norm"])
        for m in range(traj.M + 1):
            w.writerow(
                [m, repr(float(traj.mesh.points[m]))]
                + [repr(float(traj.U[m, i])) for i in nodes]
                + [repr(float(norms[m]))]
            )


def write_trajectory_json(traj: SolutionTrajectory, path: str | Path, extra: dict | None = None) -> None:
    payload = traj.summary()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, default=float))
