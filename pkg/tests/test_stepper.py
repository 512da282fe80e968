import json
import math
import time

import numpy as np
import pytest

from l2subdiff.caputo import assemble_l2
from l2subdiff.harness import theoretical_bound
from l2subdiff.mesh import build_graded, lambda_cap
from l2subdiff.mittag_leffler import ml_neg
from l2subdiff.spatial import SpatialGrid1D, assemble_elliptic, discrete_sine_eigenpairs
from l2subdiff.stepper import (
    NonlinearSolveConfig,
    NonlinearSolveError,
    ProblemSpec,
    residual_norm,
    solve,
    step,
    write_trajectory_csv,
    write_trajectory_json,
)

sine = lambda x: np.sin(math.pi * x)  # noqa: E731


def semilinear(alpha, lam=1.0, **kw):
    return ProblemSpec(
        alpha=alpha,
        u0=sine,
        f=lambda x, t, s: lam * np.sin(s),
        dfds=lambda x, t, s: lam * np.cos(s),
        lipschitz=lam,
        **kw,
    )


def test_zero_solution():
    traj = solve(ProblemSpec(alpha=0.5), build_graded(1, 16, 2), SpatialGrid1D(1.0, 31))
    assert np.all(traj.U == 0)
    assert traj.residuals.max() == 0


def test_linear_matches_mode_solution():
    alpha, M = 0.5, 64
    grid = SpatialGrid1D(1.0, 127)
    mesh = build_graded(1.0, M, 1.0)
    traj = solve(ProblemSpec(alpha=alpha, u0=sine), mesh, grid)
    mu, V = discrete_sine_eigenpairs(grid)
    exact = np.outer(ml_neg(alpha, -mu[0] * mesh.points**alpha), V[:, 0])
    err = np.sqrt(grid.h * ((traj.U - exact) ** 2).sum(axis=1))
    bound = theoretical_bound(alpha, 1.0, M, mesh.points[1:], mesh.points[1])
    assert err[0] == 0
    assert np.max(err[1:] / bound) < 2.0
    np.testing.assert_allclose(traj.U[0], grid.sample(sine))


def test_linear_reaction_iteration_count():
    alpha, lam, rtol = 0.5, 0.5, 1e-12
    mesh = build_graded(1.0, 32, 2.0)
    problem = ProblemSpec(alpha=alpha, u0=sine, f=lambda x, t, s: lam * s, lipschitz=lam)
    traj = solve(problem, mesh, SpatialGrid1D(1.0, 63), NonlinearSolveConfig(rtol=rtol))
    a_mm = assemble_l2(mesh, alpha).diagonal()
    limit = np.ceil(np.log(rtol) / np.log(lam / a_mm))
    assert np.all(traj.iterations[1:] <= limit)


def test_single_step_is_one_shifted_solve():
    alpha = 0.6
    mesh = build_graded(0.5, 1, 1.0)
    grid = SpatialGrid1D(1.0, 40)
    traj = solve(ProblemSpec(alpha=alpha, T=0.5, u0=sine), mesh, grid)
    op = assemble_elliptic(grid)
    a11 = assemble_l2(mesh, alpha)[1, 1]
    direct = np.linalg.solve(a11 * np.eye(40) + op.to_dense(), a11 * grid.sample(sine))
    np.testing.assert_allclose(traj.U[1], direct, rtol=1e-12)


def test_spatial_refinement_does_not_move_temporal_error():
    alpha, M = 0.5, 16
    mesh = build_graded(1.0, M, 1.0)
    errs = []
    for N in (255, 511):
        grid = SpatialGrid1D(1.0, N)
        traj = solve(ProblemSpec(alpha=alpha, u0=sine), mesh, grid)
        mu, V = discrete_sine_eigenpairs(grid)
        exact = ml_neg(alpha, -mu[0] * mesh.T**alpha) * V[:, 0]
        errs.append(math.sqrt(grid.h * ((traj.U[-1] - exact) ** 2).sum()))
    assert abs(errs[1] / errs[0] - 1) < 0.01


def test_runtime_quadratic_in_M():
    grid = SpatialGrid1D(1.0, 2048)
    problem = ProblemSpec(alpha=0.5, u0=sine)
    times = []
    for M in (256, 512):
        mesh = build_graded(1.0, M, 2.0)
        op = assemble_l2(mesh, 0.5)
        best = math.inf
        for _ in range(2):
            start = time.perf_counter()
            solve(problem, mesh, grid, op=op)
            best = min(best, time.perf_counter() - start)
        times.append(best)
    assert 2.8 < times[1] / times[0] < 6.0


def test_residual_checks():
    alpha = 0.4
    mesh = build_graded(1.0, 24, 2.0)
    grid = SpatialGrid1D(1.0, 63)
    problem = semilinear(alpha)
    cfg = NonlinearSolveConfig(rtol=1e-12)
    traj = solve(problem, mesh, grid, cfg)
    A = assemble_l2(mesh, alpha)
    L = assemble_elliptic(grid)
    f = problem.nonlinearity()
    assert np.all(traj.residuals <= cfg.rtol)
    assert residual_norm(traj, A, L, f, relative=True) <= 10 * cfg.rtol

    # perturbing the last level along the first mode shifts only that level's residual
    mu, V = discrete_sine_eigenpairs(grid)
    v = V[:, 0] / math.sqrt(grid.h * (V[:, 0] ** 2).sum())
    base = residual_norm(traj, A, L, f)
    U = traj.U[-1].copy()
    traj.U[-1] += 1e-3 * v
    jump = residual_norm(traj, A, L, f) - base
    df = f(grid.nodes, mesh.T, traj.U[-1]) - f(grid.nodes, mesh.T, U)
    expected = math.sqrt(grid.h * (((A[mesh.M, mesh.M] + mu[0]) * 1e-3 * v + df) ** 2).sum())
    assert jump == pytest.approx(expected, rel=0.01)
    assert jump == pytest.approx((A[mesh.M, mesh.M] + mu[0] + 1.0) * 1e-3, rel=0.02)


def test_residual_of_zero_trajectory():
    mesh = build_graded(1, 8, 1)
    grid = SpatialGrid1D(1.0, 15)
    traj = solve(ProblemSpec(alpha=0.5), mesh, grid)
    assert residual_norm(traj, assemble_l2(mesh, 0.5), assemble_elliptic(grid)) == 0.0


def test_unique_fixed_point_from_different_guesses():
    alpha = 0.5
    mesh = build_graded(1.0, 16, 2.0)
    grid = SpatialGrid1D(1.0, 63)
    problem = semilinear(alpha, lam=2.0)
    cfg = NonlinearSolveConfig(rtol=1e-12)
    traj = solve(problem, mesh, grid, cfg)
    A = assemble_l2(mesh, alpha)
    L = assemble_elliptic(grid)
    f = problem.nonlinearity()
    for m in (1, 5, 16):
        a = step(m, traj.U[:m], A, L, f, cfg).U
        b = step(m, traj.U[:m], A, L, f, cfg, guess=np.zeros(grid.N)).U
        assert np.linalg.norm(a - b) <= 10 * cfg.rtol * np.linalg.norm(a)


def test_linear_consistency_with_direct_recursion():
    alpha = 0.7
    mesh = build_graded(1.0, 12, 3.0)
    grid = SpatialGrid1D(1.0, 20)
    problem = ProblemSpec(alpha=alpha, u0=lambda x: x * (1 - x), a=lambda x: 1 + x)
    traj = solve(problem, mesh, grid)
    A = assemble_l2(mesh, alpha)
    L = assemble_elliptic(grid, problem.a).to_dense()
    U = np.zeros((13, 20))
    U[0] = grid.sample(problem.u0)
    for m in range(1, 13):
        row = A.row(m)
        U[m] = np.linalg.solve(row[m] * np.eye(20) + L, -(row[:m] @ U[:m]))
    np.testing.assert_allclose(traj.U, U, rtol=1e-11, atol=1e-13)


def test_nonnegative_data_stays_nonnegative():
    alpha = 0.5
    mesh = build_graded(1.0, 64, 2.0)
    grid = SpatialGrid1D(1.0, 127)
    traj = solve(ProblemSpec(alpha=alpha, u0=lambda x: np.where(x < 0.3, 1.0, 0.0)), mesh, grid)
    assert traj.U.min() >= -1e-10


def test_newton_matches_fixed_point():
    alpha = 0.5
    mesh = build_graded(1.0, 32, 2.0)
    grid = SpatialGrid1D(1.0, 63)
    problem = semilinear(alpha, lam=3.0)
    fp = solve(problem, mesh, grid, NonlinearSolveConfig("fixed-point"))
    nt = solve(problem, mesh, grid, NonlinearSolveConfig("newton"))
    np.testing.assert_allclose(nt.U, fp.U, rtol=1e-10, atol=1e-12)
    assert nt.iterations.sum() <= fp.iterations.sum()


def test_newton_falls_back_on_bad_jacobian():
    alpha = 0.5
    mesh = build_graded(1.0, 16, 2.0)
    grid = SpatialGrid1D(1.0, 31)
    good = solve(semilinear(alpha), mesh, grid)
    bad = ProblemSpec(
        alpha=alpha, u0=sine, f=lambda x, t, s: np.sin(s), dfds=lambda x, t, s: -50.0 * np.cos(s), lipschitz=1.0
    )
    traj = solve(bad, mesh, grid, NonlinearSolveConfig("newton"))
    np.testing.assert_allclose(traj.U, good.U, rtol=1e-10, atol=1e-12)


def test_nonconvergence_is_a_hard_error():
    alpha = 0.5
    mesh = build_graded(1.0, 4, 1.0)
    lam = 0.9 * lambda_cap(mesh, alpha)
    problem = ProblemSpec(alpha=alpha, u0=sine, f=lambda x, t, s: lam * np.sin(s), lipschitz=lam)
    with pytest.raises(NonlinearSolveError) as info:
        solve(problem, mesh, SpatialGrid1D(1.0, 15), NonlinearSolveConfig(max_iter=2))
    assert info.value.m == 1 and len(info.value.history) == 2


def test_lambda_condition_enforced():
    mesh = build_graded(1.0, 4, 1.0)
    lam = lambda_cap(mesh, 0.5)
    problem = ProblemSpec(alpha=0.5, u0=sine, f=lambda x, t, s: lam * s, lipschitz=lam)
    with pytest.raises(ValueError):
        solve(problem, mesh, SpatialGrid1D(1.0, 7))


def test_config_validation():
    with pytest.raises(ValueError):
        NonlinearSolveConfig(rtol=1e-16)
    with pytest.raises(ValueError):
        NonlinearSolveConfig(method="bisection")
    with pytest.raises(ValueError):
        ProblemSpec(alpha=1.0)
    with pytest.raises(ValueError):
        ProblemSpec(alpha=0.5, lipschitz=-1)


def test_clipped_logistic_nonlinearity():
    # f = -u (1 - u) is Lipschitz with constant 1 on the declared range [0, 1]
    problem = ProblemSpec(
        alpha=0.6,
        u0=lambda x: 0.5 * np.sin(math.pi * x),
        f=lambda x, t, s: -s * (1 - s),
        lipschitz=1.0,
        clip=(0.0, 1.0),
    )
    traj = solve(problem, build_graded(1.0, 32, 2.0), SpatialGrid1D(1.0, 63))
    assert np.all(np.isfinite(traj.U)) and traj.U.min() >= -1e-12 and traj.U.max() <= 1.0


def test_exports(tmp_path):
    traj = solve(semilinear(0.5), build_graded(1.0, 8, 2.0), SpatialGrid1D(1.0, 15))
    write_trajectory_csv(traj, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("m,t_m,") and lines[0].endswith(",norm") and len(lines) == 10
    write_trajectory_json(traj, tmp_path / "t.json", {"seed": 0})
    data = json.loads((tmp_path / "t.json").read_text())
    assert data["M"] == 8 and data["seed"] == 0 and data["max_residual"] <= 1e-12
