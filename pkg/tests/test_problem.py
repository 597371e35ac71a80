import json

import numpy as np
import pytest
from scipy.linalg import null_space

from etdopt.errors import InfeasibleError, InvalidProblemError, OracleUnsupportedError
from etdopt.problem import (ConstraintSystem, ProblemInstance, ScalarObjective, gradient,
                            kkt_solve, load_problem, normalize_constraints, normalize_objective,
                            power_iteration, save_problem, second_derivative_bounds,
                            validate_assumptions)
from etdopt.scenarios import build_case1, random_instance

CASE1_C = np.array([[1, 1, 0, 0], [0, 0, 1, 1], [1, 0, 1, 0], [0, 1, 0, 1]], float)


def quad_problem(a, C, d, b=None):
    b = np.zeros(len(a)) if b is None else b
    objs = tuple(ScalarObjective.quadratic(ai, bi) for ai, bi in zip(a, b))
    return ProblemInstance(objs, ConstraintSystem(C, d))


def nullspace_oracle(p):
    """Minimize the quadratic on the affine set via a null-space basis."""
    a, b, _ = p._quad
    C, d = p.constraints.C, p.constraints.d
    y0 = np.linalg.lstsq(C, d, rcond=None)[0]
    N = null_space(C)
    H = np.diag(2 * a)
    z = np.linalg.solve(N.T @ H @ N, -N.T @ (H @ y0 + b))
    return y0 + N @ z


def test_power_iteration_matches_eigvalsh():
    rng = np.random.default_rng(3)
    for _ in range(5):
        A = rng.normal(size=(4, 6))
        assert power_iteration(A.T @ A) == pytest.approx(np.linalg.eigvalsh(A.T @ A).max(), rel=1e-10)


@pytest.mark.parametrize("C,d,rho", [
    ([[1.0]], [2.0], 1.0),
    ([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0], 1.0),
    (CASE1_C, np.ones(4), 4.0),
])
def test_normalize_constraints(C, d, rho):
    cs = normalize_constraints(ConstraintSystem(C, d))
    assert np.allclose(cs.C, np.asarray(C) / np.sqrt(rho), atol=1e-12)
    assert np.allclose(cs.d, np.asarray(d) / np.sqrt(rho), atol=1e-12)
    assert cs.normalized


def test_normalize_zero_matrix_rejected():
    with pytest.raises(InvalidProblemError):
        normalize_constraints(ConstraintSystem([[0.0, 0.0]], [0.0]))


def test_more_rows_than_columns_rejected():
    with pytest.raises(InvalidProblemError):
        ConstraintSystem(np.eye(3)[:, :2], np.zeros(3))


def test_gradient_and_bounds():
    p = build_case1().problem
    assert gradient(p, np.ones(4))[0] == 10.0
    assert second_derivative_bounds(p) == (10.0, 40.0)


def test_quadratic_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    p, _ = random_instance(6, 2, seed=1)
    y = rng.normal(size=6)
    h = 1e-6
    fd = np.array([(p.value(y + h * e) - p.value(y - h * e)) / (2 * h) for e in np.eye(6)])
    assert np.allclose(fd, p.gradient(y), atol=1e-6)


def test_gradient_monotone_on_random_pairs():
    p, _ = random_instance(6, 2, seed=5)
    rng = np.random.default_rng(11)
    for _ in range(100):
        y, z = rng.normal(size=6), rng.normal(size=6)
        assert (y - z) @ (p.gradient(y) - p.gradient(z)) > 0


def test_validate_case1_flags_rank_deficiency():
    rep = validate_assumptions(build_case1().problem)
    assert rep.rank == 3 and not rep.full_row_rank
    assert any("row-rank deficient" in msg for msg in rep.messages)
    assert rep.bounds_ok


def test_validate_trivial_and_flat():
    ok = validate_assumptions(quad_problem([1.0], [[1.0]], [1.0]))
    assert ok.ok
    flat = validate_assumptions(quad_problem([0.0, 1.0], [[1.0, 1.0]], [1.0]))
    assert not flat.ok and flat.strictly_convex[0] is False


def test_kkt_scalar():
    for c in (-2.0, 0.0, 3.5):
        sol = kkt_solve(quad_problem([1.0], [[1.0]], [c]))
        assert sol.y_star[0] == pytest.approx(c)
        assert sol.mu_star[0] == pytest.approx(-2 * c)


def test_kkt_case1_optimum():
    sol = kkt_solve(build_case1().problem)
    assert np.allclose(sol.y_star, [0.7, 0.3, 0.3, 0.7], atol=1e-9)
    assert not sol.multiplier_unique
    assert np.linalg.norm(CASE1_C @ sol.y_star - 1.0) < 1e-12


def test_kkt_matches_nullspace_oracle():
    for seed in range(10):
        p, _ = random_instance(7, 3, seed)
        assert np.allclose(kkt_solve(p).y_star, nullspace_oracle(p), atol=1e-9)


def test_kkt_matches_projected_gradient_seed42():
    p, _ = random_instance(6, 2, seed=42)
    C, d = p.constraints.C, p.constraints.d
    P = np.eye(6) - np.linalg.pinv(C) @ C
    y = np.linalg.pinv(C) @ d
    step = 1.0 / p.bound_hi
    for _ in range(20000):
        y = y - step * P @ p.gradient(y)
    assert np.allclose(kkt_solve(p).y_star, y, atol=1e-6)


def test_kkt_infeasible():
    with pytest.raises(InfeasibleError):
        kkt_solve(quad_problem([1.0, 1.0], [[1.0, 1.0], [2.0, 2.0]], [1.0, 3.0]))


def test_kkt_rejects_nonconvex_quadratic():
    with pytest.raises(OracleUnsupportedError):
        kkt_solve(quad_problem([-1.0, 1.0], [[1.0, 1.0]], [1.0]))


def test_kkt_custom_objective_newton():
    from scipy.optimize import minimize
    objs = tuple(ScalarObjective.custom(
        lambda x, s=s: np.exp(s * x) + x * x, lambda x, s=s: s * np.exp(s * x) + 2 * x,
        lambda x, s=s: s * s * np.exp(s * x) + 2, 2.0, 1e3) for s in (0.5, -0.3, 0.2))
    p = ProblemInstance(objs, ConstraintSystem([[1.0, 1.0, 1.0]], [1.0]))
    ref = minimize(p.value, np.array([1.0, 0.0, 0.0]), method="SLSQP", tol=1e-14,
                   constraints=[{"type": "eq", "fun": lambda y: y.sum() - 1.0}])
    assert np.allclose(kkt_solve(p).y_star, ref.x, atol=1e-6)


def test_normalize_objective_keeps_minimizer():
    p = build_case1().problem
    q, f = normalize_objective(p)
    assert f == 40.0 and q.bound_hi == pytest.approx(1.0)
    assert np.allclose(kkt_solve(q).y_star, kkt_solve(p).y_star, atol=1e-12)


def test_restrict_drops_empty_rows():
    p = quad_problem([1, 1, 1], [[1, 1, 0], [0, 0, 1]], [1, 1])
    r = p.restrict([0, 1])
    assert r.n == 2 and r.m == 1


def test_file_round_trip(tmp_path):
    p, _ = random_instance(5, 2, seed=3)
    path = tmp_path / "p.json"
    save_problem(p, path)
    q = load_problem(path)
    assert np.array_equal(q.constraints.C, p.constraints.C)
    assert np.allclose(kkt_solve(q).y_star, kkt_solve(p).y_star)
    doc = json.loads(path.read_text())
    doc["objectives"][0]["kind"] = "custom"
    path.write_text(json.dumps(doc))
    with pytest.raises(InvalidProblemError):
        load_problem(path)
