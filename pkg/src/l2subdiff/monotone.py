"""Inverse-monotone structure of discrete Caputo operators.

The representation searched for here writes the operator as

    delta U^m = sum_j kappa_{m,j} V^j,    V^j = (U^j - beta_j U^{j-1}) / (1 - beta_j),

with ``kappa`` of M-matrix sign pattern.  With ``S_{m,m} = a_{m,m}`` and
``S_{m,i} = a_{m,i} + beta_{i+1} S_{m,i+1}`` one has
``kappa_{m,i} = (1 - beta_i) S_{m,i}``, so the sign conditions on row ``m``
are ``S_{m,i} <= 0`` for ``i < m``.

Row ``j`` is affine in ``beta_j`` once ``beta_1..beta_{j-1}`` are fixed, and
every ``S_{j,i}`` is non-decreasing in ``beta_j``, so the admissible set for
``beta_j`` is an interval ``[0, b_j]`` known in closed form.  In any later row
a larger ``beta_j`` can only lower the ``S`` values, so taking ``beta_j = b_j``
dominates every other admissible choice: if the greedy sweep fails, no
representation with ``beta_j`` below the cap exists.

Large ``beta_j`` inflate ``V^j`` by ``1/(1 - beta_j)``, so a second sweep
lowers each ``beta_j`` in turn to the bottom of its admissible interval with
the other values held fixed.  All ``S_{m,i}`` are affine in a single
``beta_j``, so each interval is again exact.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .caputo import DiscreteCaputoMatrix
from .mesh import MeshAssumptionConfig, analyze_mesh, lambda_cap

__all__ = [
    "MonotoneRepresentation",
    "BarrierProfile",
    "InverseCheck",
    "ComparisonResult",
    "ProbeResult",
    "BarrierResult",
    "compute_representation",
    "representation_from_beta",
    "inverse_monotonicity_oracle",
    "comparison_trial",
    "plus_lambda_probe",
    "replay_plus_lambda",
    "barrier_profile",
    "barrier_check",
    "write_representation_csv",
]

BETA_MAX = 0.999
SIGN_RTOL = 1e-12


@dataclass
class MonotoneRepresentation:
    """``beta[j]`` for ``j = 0..M`` (``beta[0] = 0``) and dense lower-triangular ``kappa``."""

    beta: np.ndarray
    kappa: np.ndarray
    sign_ok: bool
    first_failure: tuple[int, int] | None
    worst_violation: float
    flavor: str = "l2"

    @property
    def M(self) -> int:
        return self.beta.size - 1

    @property
    def kappa_star(self) -> np.ndarray:
        """``kappa*_m = 1 / (kappa_{m,m} (1 - beta_m))`` for ``m = 1..M`` (index ``m-1``)."""
        m = np.arange(1, self.M + 1)
        return 1.0 / (self.kappa[m, m] * (1.0 - self.beta[m]))

    def to_v(self, U: np.ndarray) -> np.ndarray:
        """Bidiagonal map ``U -> V`` along the first axis."""
        U = np.asarray(U, dtype=float)
        V = np.empty_like(U)
        V[0] = U[0]
        b = self.beta[1:].reshape((-1,) + (1,) * (U.ndim - 1))
        V[1:] = (U[1:] - b * U[:-1]) / (1.0 - b)
        return V

    def apply(self, V: np.ndarray, m: int):
        return np.tensordot(self.kappa[m, : m + 1], np.asarray(V)[: m + 1], axes=1)

    def to_dict(self) -> dict:
        return {
            "M": self.M,
            "sign_ok": self.sign_ok,
            "first_failure": list(self.first_failure) if self.first_failure else None,
            "worst_violation": self.worst_violation,
            "beta_min": float(self.beta[1:].min()) if self.M else 0.0,
            "beta_max": float(self.beta[1:].max()) if self.M else 0.0,
        }


def _row_affine(row: np.ndarray, beta: np.ndarray, j: int) -> tuple[np.ndarray, np.ndarray]:
    """``S_{j,i} = c_i + d_i beta_j`` for ``i = 0..j-1`` with ``beta_1..beta_{j-1}`` fixed."""
    c = np.empty(j)
    d = np.empty(j)
    sc, sd = row[j - 1], row[j]
    c[j - 1], d[j - 1] = sc, sd
    for i in range(j - 2, -1, -1):
        b = beta[i + 1]
        sc, sd = row[i] + b * sc, b * sd
        c[i], d[i] = sc, sd
    return c, d


def _kappa_row(row: np.ndarray, beta: np.ndarray, m: int) -> np.ndarray:
    out = np.empty(m + 1)
    s = row[m]
    out[m] = (1.0 - beta[m]) * s
    for i in range(m - 1, -1, -1):
        s = row[i] + beta[i + 1] * s
        out[i] = (1.0 - beta[i]) * s
    return out


def _check_row(krow: np.ndarray, arow: np.ndarray, rtol: float) -> tuple[int | None, float]:
    """First offending column (or ``None``) and the worst relative violation."""
    m = krow.size - 1
    scale = np.abs(arow).max()
    rel = krow[:m] / scale
    worst = float(max(rel.max(initial=-np.inf), abs(krow.sum()) / scale))
    if krow[m] <= 0:
        return m, max(worst, 1.0)
    bad = np.flatnonzero(rel > rtol)
    if bad.size:
        return int(bad[0]), worst
    if abs(krow.sum()) > rtol * scale:
        return 0, worst
    return None, worst


def _s_matrix(D: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """``S[m, i]`` for all rows at once from the dense operator ``D``."""
    S = np.empty_like(D)
    S[:, -1] = D[:, -1]
    for i in range(D.shape[1] - 2, -1, -1):
        S[:, i] = D[:, i] + beta[i + 1] * S[:, i + 1]
    return S


def _lower_betas(A: DiscreteCaputoMatrix, beta: np.ndarray, sweeps: int = 4) -> np.ndarray:
    """Coordinate sweep moving each ``beta_j`` to its smallest admissible value."""
    D = A.to_dense()
    beta = beta.copy()
    strict = np.tril(np.ones_like(D, dtype=bool), -1)
    # lowering beta_j only tightens the bounds of later values, so a backward
    # sweep settles in one pass; the repeat guards against rounding
    for _ in range(sweeps):
        moved = False
        for j in range(A.M, 0, -1):
            b0 = beta.copy()
            b0[j] = 0.0
            p = _s_matrix(D, b0)
            b1 = b0.copy()
            b1[j] = 1.0
            q = _s_matrix(D, b1) - p
            mask = strict & (q < 0) & (p > 0)
            lo = max(float(np.max(-p[mask] / q[mask])) if np.any(mask) else 0.0, 0.0)
            if lo < beta[j]:
                moved = moved or beta[j] - lo > 1e-14
                beta[j] = lo
        if not moved:
            break
    return beta


def compute_representation(
    A: DiscreteCaputoMatrix,
    beta_max: float = BETA_MAX,
    rtol: float = SIGN_RTOL,
    lower: bool = True,
) -> MonotoneRepresentation:
    """Greedy search for ``beta`` (largest admissible value per step).

    A failed search is reported through ``sign_ok``/``first_failure``; the
    sweep then continues with clipped values so ``kappa`` is always complete.
    On success and with ``lower=True`` the values are then pushed down as far
    as the sign conditions allow; the lowered set is kept only if it verifies.
    """
    if not 0.0 <= beta_max < 1.0:
        raise ValueError("beta_max must lie in [0, 1)")
    M = A.M
    beta = np.zeros(M + 1)
    kappa = np.zeros((M + 1, M + 1))
    kappa[0, 0] = 1.0
    first = None
    worst = -math.inf
    for j in range(1, M + 1):
        row = A.row(j)
        c, d = _row_affine(row, beta, j)
        hi = beta_max
        pos = d > 0
        if np.any(pos):
            hi = min(hi, float(np.min(-c[pos] / d[pos])))
        beta[j] = min(max(hi, 0.0), beta_max)
        kappa[j, : j + 1] = _kappa_row(row, beta, j)
        bad, w = _check_row(kappa[j, : j + 1], row, rtol)
        worst = max(worst, w)
        if bad is not None and first is None:
            first = (j, bad)
    if lower and first is None and M > 0:
        low = representation_from_beta(A, _lower_betas(A, beta), rtol)
        if low.sign_ok:
            return low
    return MonotoneRepresentation(beta, kappa, first is None, first, float(worst), A.flavor)


def representation_from_beta(A: DiscreteCaputoMatrix, beta, rtol: float = SIGN_RTOL) -> MonotoneRepresentation:
    """``kappa`` induced by a given ``beta`` (``beta[0]`` is ignored), with sign flags."""
    M = A.M
    b = np.zeros(M + 1)
    b[1:] = np.broadcast_to(np.asarray(beta, dtype=float), (M + 1,))[1:]
    if np.any(b < 0) or np.any(b >= 1):
        raise ValueError("beta must lie in [0, 1)")
    kappa = np.zeros((M + 1, M + 1))
    kappa[0, 0] = 1.0
    first = None
    worst = -math.inf
    for m in range(1, M + 1):
        row = A.row(m)
        kappa[m, : m + 1] = _kappa_row(row, b, m)
        bad, w = _check_row(kappa[m, : m + 1], row, rtol)
        worst = max(worst, w)
        if bad is not None and first is None:
            first = (m, bad)
    return MonotoneRepresentation(b, kappa, first is None, first, float(worst), A.flavor)


def write_representation_csv(rep: MonotoneRepresentation, beta_path, kappa_path=None) -> None:
    with open(beta_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "beta_j"])
        for j in range(1, rep.M + 1):
            w.writerow([j, repr(float(rep.beta[j]))])
    if kappa_path is not None:
        with open(kappa_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "j", "kappa_mj"])
            for m in range(1, rep.M + 1):
                for j in range(m + 1):
                    w.writerow([m, j, repr(float(rep.kappa[m, j]))])


@dataclass
class InverseCheck:
    nonneg: bool
    min_entry: float
    max_entry: float


def _dense_with_identity(A: DiscreteCaputoMatrix, shift: float = 0.0) -> np.ndarray:
    D = A.to_dense()
    if shift:
        D[np.arange(1, A.M + 1), np.arange(1, A.M + 1)] += shift
    D[0, 0] = 1.0
    return D


def inverse_monotonicity_oracle(A: DiscreteCaputoMatrix, rtol: float = SIGN_RTOL) -> InverseCheck:
    """Entrywise sign of the inverse (row 0 carries the identity for ``U^0``)."""
    if A.M > 4096:
        raise ValueError("dense inversion is limited to M <= 4096")
    D = _dense_with_identity(A)
    diag = np.diag(D)
    assert np.all(diag > 0), "singular diagonal"
    inv = solve_triangular(D, np.eye(A.M + 1), lower=True)
    low = inv[np.tril_indices(A.M + 1)]
    mn, mx = float(low.min()), float(low.max())
    return InverseCheck(mn >= -rtol * mx, mn, mx)


def _forward_solve(A: DiscreteCaputoMatrix, shift: float, G: np.ndarray) -> np.ndarray:
    """Solve ``(delta + shift) U^m = G^m``, ``U^0 = 0``; columns of ``G`` are independent."""
    M = A.M
    U = np.zeros((M + 1,) + G.shape[1:])
    for m in range(1, M + 1):
        row = A.row(m)
        U[m] = (G[m] - row[:m] @ U[:m]) / (row[m] + shift)
    return U


def _is_a2_star(A: DiscreteCaputoMatrix, lam: float) -> tuple[bool, bool]:
    diag = analyze_mesh(A.mesh, MeshAssumptionConfig(), A.alpha, lam)
    return diag.a2_star, diag.lambda_cond_ok


@dataclass
class ComparisonResult:
    violations: int
    worst: float
    trials: int
    seed: int
    lam: float
    exploratory: bool
    failed_trials: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def comparison_trial(
    A: DiscreteCaputoMatrix,
    lam: float,
    trials: int = 1000,
    seed: int = 0,
    rtol: float = SIGN_RTOL,
    batch: int = 500,
) -> ComparisonResult:
    """Randomised check that ``(delta - lam) U <= 0`` with ``U^0 = 0`` forces ``U <= 0``.

    ``violations`` counts entries ``U^m`` above ``rtol`` times the trial's
    largest magnitude; ``worst`` is the largest such relative value.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    a2_star, cond_ok = _is_a2_star(A, lam)
    rng = np.random.default_rng(seed)
    violations = 0
    failed = 0
    worst = -math.inf
    done = 0
    while done < trials:
        n = min(batch, trials - done)
        G = np.zeros((A.M + 1, n))
        G[1:] = -rng.uniform(0.0, 1.0, size=(A.M, n))
        U = _forward_solve(A, -lam, G)
        scale = np.abs(U).max(axis=0)
        scale[scale == 0] = 1.0
        rel = U / scale
        hits = rel > rtol
        violations += int(hits.sum())
        failed += int(hits.any(axis=0).sum())
        worst = max(worst, float(rel.max()))
        done += n
    return ComparisonResult(violations, worst, trials, seed, float(lam), not (a2_star and cond_ok), failed)


@dataclass
class ProbeResult:
    counterexample: dict | None
    trials: int
    seed: int
    lam: float
    elapsed: float
    max_relative: float = -math.inf

    @property
    def found(self) -> bool:
        return self.counterexample is not None

    def to_dict(self) -> dict:
        return {
            "found": self.found,
            "trials": self.trials,
            "seed": self.seed,
            "lambda": self.lam,
            "elapsed_s": self.elapsed,
            "max_relative": self.max_relative,
            "counterexample": self.counterexample,
        }


def replay_plus_lambda(A: DiscreteCaputoMatrix, lam: float, g) -> np.ndarray:
    """Solve ``(delta + lam) U^m = g^m`` with ``U^0 = 0``; ``g[0]`` is ignored."""
    G = np.asarray(g, dtype=float).reshape(A.M + 1, 1).copy()
    G[0] = 0.0
    return _forward_solve(A, lam, G)[:, 0]


def plus_lambda_probe(
    A: DiscreteCaputoMatrix,
    lam: float,
    trials: int = 10_000,
    seed: int = 0,
    rtol: float = SIGN_RTOL,
    batch: int = 2000,
) -> ProbeResult:
    """Random search for ``g <= 0`` with ``(delta + lam) U = g`` and some ``U^m > 0``.

    Half of each batch is dense uniform data on ``[-1, 0]``; the rest is sparse
    (one to three spikes), which probes single columns of the inverse.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    rng = np.random.default_rng(seed)
    M = A.M
    start = time.perf_counter()
    done = 0
    best = -math.inf
    while done < trials:
        n = min(batch, trials - done)
        G = np.zeros((M + 1, n))
        dense = n // 2
        G[1:, :dense] = -rng.uniform(0.0, 1.0, size=(M, dense))
        for col in range(dense, n):
            k = rng.integers(1, 4)
            idx = rng.integers(1, M + 1, size=k)
            G[idx, col] = -rng.uniform(0.1, 1.0, size=k)
        U = _forward_solve(A, lam, G)
        scale = np.abs(U).max(axis=0)
        scale[scale == 0] = 1.0
        rel = U / scale
        best = max(best, float(rel.max()))
        hits = np.flatnonzero((rel > rtol).any(axis=0))
        if hits.size:
            col = int(hits[0])
            m = int(np.argmax(rel[:, col]))
            ce = {
                "trial": done + col,
                "m": m,
                "U_m": float(U[m, col]),
                "relative": float(rel[m, col]),
                "g": G[:, col].tolist(),
            }
            return ProbeResult(ce, done + col + 1, seed, float(lam), time.perf_counter() - start, best)
        done += n
    return ProbeResult(None, trials, seed, float(lam), time.perf_counter() - start, best)


@dataclass
class BarrierProfile:
    gamma: float
    tau1: float
    values: np.ndarray  # j = 1..M
    ell: np.ndarray
    sharp_ell: bool


def barrier_profile(mesh, alpha: float, gamma: float, sharp_ell: bool = False) -> BarrierProfile:
    """``ell_gamma tau_1 t_j^(alpha-1) (tau_1/t_j)^min(0, gamma)``.

    ``ell_gamma = 1 + ln(T/tau_1)`` when ``gamma = 0`` (or ``1 + ln(t_j/tau_1)``
    with ``sharp_ell``) and one otherwise.
    """
    t = mesh.points[1:]
    tau1 = float(mesh.steps[0])
    if abs(gamma) < 1e-12:
        ell = 1.0 + np.log(t / tau1) if sharp_ell else np.full(t.size, 1.0 + math.log(mesh.T / tau1))
    else:
        ell = np.ones(t.size)
    values = ell * tau1 * t ** (alpha - 1.0) * (tau1 / t) ** min(0.0, gamma)
    return BarrierProfile(float(gamma), tau1, values, ell, bool(sharp_ell))


@dataclass
class BarrierResult:
    C_fit: float
    profile: BarrierProfile
    solution: np.ndarray
    exploratory: bool = False
    extra: dict = field(default_factory=dict)


def barrier_check(
    A: DiscreteCaputoMatrix,
    lam: float,
    gamma: float,
    sharp_ell: bool = False,
) -> BarrierResult:
    """Solve ``(delta - lam) U^j = (tau_1/t_j)^(gamma+1)``, ``U^0 = 0``, and fit it against the barrier."""
    mesh = A.mesh
    if lam >= lambda_cap(mesh, A.alpha):
        raise ValueError("lambda violates the step-size condition")
    a2_star, _ = _is_a2_star(A, lam)
    t = mesh.points
    tau1 = mesh.steps[0]
    F = np.zeros((A.M + 1, 1))
    F[1:, 0] = (tau1 / t[1:]) ** (gamma + 1.0)
    U = _forward_solve(A, -lam, F)[:, 0]
    profile = barrier_profile(mesh, A.alpha, gamma, sharp_ell)
    C = float(np.max(U[1:] / profile.values))
    return BarrierResult(C, profile, U, exploratory=not a2_star)
