"""Temporal meshes and checks of the mesh assumptions used by the error analysis."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TemporalMesh",
    "MeshAssumptionConfig",
    "MeshDiagnostics",
    "build_graded",
    "from_points",
    "analyze_mesh",
    "lambda_cap",
    "write_mesh_csv",
    "read_mesh_csv",
]

# relative slack used when comparing step ratios that should be equal (uniform meshes)
RATIO_RTOL = 1e-12


@dataclass(frozen=True)
class TemporalMesh:
    """Time grid ``0 = t_0 < t_1 < ... < t_M = T``.

    ``r`` is the grading exponent for meshes built by :func:`build_graded`
    and ``None`` for imported meshes.
    """

    points: np.ndarray
    r: float | None = None

    def __post_init__(self) -> None:
        t = np.asarray(self.points, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a mesh needs at least two points")
        if t[0] != 0.0:
            raise ValueError("mesh must start at t_0 = 0")
        if not np.all(np.diff(t) > 0):
            raise ValueError("mesh points must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "points", t)

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def M(self) -> int:
        return self.points.size - 1

    @property
    def steps(self) -> np.ndarray:
        """``tau_j = t_j - t_{j-1}`` for ``j = 1..M`` (index ``j-1``)."""
        return np.diff(self.points)

    @property
    def ratios(self) -> np.ndarray:
        """``rho_j = tau_j / tau_{j-1}`` for ``j = 2..M`` (index ``j-2``)."""
        tau = self.steps
        return tau[1:] / tau[:-1]

    def __len__(self) -> int:
        return self.points.size


def build_graded(T: float, M: int, r: float) -> TemporalMesh:
    """Graded mesh ``t_j = T (j/M)^r``."""
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")
    if not r >= 1:
        raise ValueError(f"grading exponent must satisfy r >= 1, got {r}")
    M = int(M)
    j = np.arange(1, M + 1, dtype=float)
    t = np.empty(M + 1)
    t[0] = 0.0
    if r == 1.0:
        t[1:] = T * j / M
    else:
        # exp/log form keeps the rounding drift small for large r
        t[1:] = T * np.exp(r * (np.log(j) - math.log(M)))
    t[-1] = T
    return TemporalMesh(t, float(r))


def from_points(points) -> TemporalMesh:
    return TemporalMesh(np.asarray(points, dtype=float), None)


@dataclass(frozen=True)
class MeshAssumptionConfig:
    """Bound on step ratios for the monotone-step assumption.

    ``sigma_star`` is an externally supplied constant in (0, 1); the
    corresponding ratio bound is ``2/(1 - sigma_star) - 1``.  Without it,
    ``rho_bound`` is used directly, and with neither the only requirement is
    that ratios are at least one and non-increasing.
    """

    sigma_star: float | None = None
    rho_bound: float | None = None

    def __post_init__(self) -> None:
        if self.sigma_star is not None and not 0.0 < self.sigma_star < 1.0:
            raise ValueError("sigma_star must lie in (0, 1)")
        if self.rho_bound is not None and not self.rho_bound >= 1.0:
            raise ValueError("rho_bound must be >= 1")

    @property
    def rho_star(self) -> float:
        if self.sigma_star is not None:
            return 2.0 / (1.0 - self.sigma_star) - 1.0
        if self.rho_bound is not None:
            return float(self.rho_bound)
        return math.inf


@dataclass
class MeshDiagnostics:
    steps: np.ndarray
    ratios: np.ndarray
    a2_K: int | None
    a3_constants: dict[str, float]
    lambda_cond_ok: bool
    lam: float
    alpha: float
    rho_star: float
    extra: dict = field(default_factory=dict)

    @property
    def a2_star(self) -> bool:
        return self.a2_K == 1

    def to_dict(self) -> dict:
        return {
            "M": int(self.steps.size),
            "alpha": self.alpha,
            "lambda": self.lam,
            "rho_star": self.rho_star,
            "a2_K": self.a2_K,
            "a2_star": self.a2_star,
            "a3_constants": self.a3_constants,
            "lambda_cond_ok": self.lambda_cond_ok,
            "max_ratio": float(self.ratios.max()) if self.ratios.size else 1.0,
        }


def lambda_cap(mesh: TemporalMesh, alpha: float) -> float:
    """Largest ``lambda`` (exclusive) with ``lambda tau_j^alpha < 1/Gamma(2-alpha)`` for all j."""
    return float(mesh.steps.max() ** (-alpha) / math.gamma(2.0 - alpha))


def _a2_K(ratios: np.ndarray, rho_star: float) -> int | None:
    # ratios[i] holds rho_{i+2}; j runs over 2..M
    M = ratios.size + 1
    ok = (ratios >= 1.0 - RATIO_RTOL) & (ratios <= rho_star * (1.0 + RATIO_RTOL))
    mono = np.ones_like(ok)
    mono[:-1] = ratios[1:] <= ratios[:-1] * (1.0 + RATIO_RTOL)
    good = ok & mono
    if M == 1:
        return 1
    if not good[-1]:
        return None
    bad = np.flatnonzero(~good)
    if bad.size == 0:
        return 1
    # condition must hold for all j >= K+1, so K is the last failing j
    return int(bad[-1] + 2)


def analyze_mesh(
    mesh: TemporalMesh,
    cfg: MeshAssumptionConfig,
    alpha: float,
    lam: float = 0.0,
) -> MeshDiagnostics:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    tau = mesh.steps
    rho = mesh.ratios
    t = mesh.points[1:]
    j = np.arange(1, mesh.M + 1, dtype=float)
    r = mesh.r if mesh.r is not None else _fit_grading(mesh)
    step_local = tau * j / t
    power_law = t / (tau[0] * j**r)
    a3 = {
        "r": float(r),
        "tau1_times_M_pow_r": float(tau[0] * mesh.M**r),
        "tau_j_j_over_t_j_min": float(step_local.min()),
        "tau_j_j_over_t_j_max": float(step_local.max()),
        "t_j_over_tau1_j_pow_r_min": float(power_law.min()),
        "t_j_over_tau1_j_pow_r_max": float(power_law.max()),
    }
    cap = 1.0 / math.gamma(2.0 - alpha)
    return MeshDiagnostics(
        steps=tau,
        ratios=rho,
        a2_K=_a2_K(rho, cfg.rho_star),
        a3_constants=a3,
        lambda_cond_ok=bool(np.all(lam * tau**alpha < cap)),
        lam=float(lam),
        alpha=float(alpha),
        rho_star=cfg.rho_star,
    )


def _fit_grading(mesh: TemporalMesh) -> float:
    """Least-squares exponent in ``t_j ~ j^r`` for imported meshes."""
    if mesh.M < 2:
        return 1.0
    j = np.arange(1, mesh.M + 1, dtype=float)
    slope = np.polyfit(np.log(j), np.log(mesh.points[1:]), 1)[0]
    return float(max(slope, 1.0))


def write_mesh_csv(mesh: TemporalMesh, path: str | Path) -> None:
    """Columns ``j, t_j, tau_j, rho_j``; undefined entries are left empty."""
    tau = mesh.steps
    rho = mesh.ratios
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "t_j", "tau_j", "rho_j"])
        for j, tj in enumerate(mesh.points):
            w.writerow(
                [
                    j,
                    repr(float(tj)),
                    repr(float(tau[j - 1])) if j >= 1 else "",
                    repr(float(rho[j - 2])) if j >= 2 else "",
                ]
            )


def read_mesh_csv(path: str | Path) -> TemporalMesh:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda row: int(row["j"]))
    return from_points([float(row["t_j"]) for row in rows])
