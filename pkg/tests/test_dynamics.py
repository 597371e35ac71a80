import numpy as np
import pytest
from scipy.linalg import expm

from etdopt.dynamics import (PrimalDualState, g_field, lyapunov, mu_field, rk4, step_continuous,
                             step_held)
from etdopt.errors import DivergenceError
from etdopt.problem import ConstraintSystem, ProblemInstance, ScalarObjective, kkt_solve
from etdopt.scenarios import build_case1, build_case2, random_instance


def scalar(d=0.0):
    return ProblemInstance((ScalarObjective.quadratic(1.0),), ConstraintSystem([[1.0]], [d]))


def flow_matrix(p):
    """Affine flow ``z' = J z + c`` of a quadratic instance, built densely."""
    a, b, _ = p._quad
    C, d = p.constraints.C, p.constraints.d
    n, m = p.n, p.m
    J = np.block([[-np.diag(2 * a) - C.T @ C, -C.T], [C, np.zeros((m, m))]])
    c = np.concatenate([-b + C.T @ d, -d])
    return J, c


def test_g_field_hand_values():
    assert g_field(scalar(), np.array([1.0]), np.array([0.0]))[0] == -3.0
    two = ProblemInstance((ScalarObjective.quadratic(1.0),) * 2, ConstraintSystem([[1.0, 1.0]], [1.0]))
    assert mu_field(two, np.array([1.0, 1.0]))[0] == 1.0
    assert mu_field(two, np.array([0.25, 0.75]))[0] == 0.0


@pytest.mark.parametrize("builder", [build_case1, lambda: build_case2(0)])
def test_fields_match_matrix_form(builder):
    p = builder().problem.normalized()
    J, c = flow_matrix(p)
    rng = np.random.default_rng(7)
    y, mu = rng.normal(size=p.n), rng.normal(size=p.m)
    z = np.concatenate([y, mu])
    assert np.allclose(np.concatenate([g_field(p, y, mu), mu_field(p, y)]), J @ z + c,
                       rtol=1e-12, atol=1e-9)


def test_fields_vanish_at_optimum():
    p, _ = random_instance(6, 2, 3)
    sol = kkt_solve(p)
    assert np.linalg.norm(g_field(p, sol.y_star, sol.mu_star)) < 1e-8
    assert lyapunov(p, sol.y_star, sol.mu_star, sol.y_star, sol.mu_star) < 1e-16


def test_equilibrium_is_fixed():
    p = build_case1().problem.normalized()
    sol = kkt_solve(p)
    st = PrimalDualState.initial(sol.y_star, p.m)
    st.mu[:] = st.mu_held[:] = sol.mu_star
    for _ in range(100):
        st = step_continuous(p, st, 0.01)
    assert np.allclose(st.y, sol.y_star, atol=1e-12)


def test_scalar_converges():
    # slowest mode decays at (3 - sqrt 5)/2, so 1e-4 is reached shortly after t = 23
    p = scalar(1.0)
    J, c = flow_matrix(p)
    st = PrimalDualState.initial([0.0], 1)
    for k in range(1, 2501):
        st = step_continuous(p, st, 0.01)
        if k == 2000:
            exact = expm(J * 20.0) @ np.array([-1.0, 2.0]) + np.array([1.0, -2.0])
            assert np.allclose([st.y[0], st.mu[0]], exact, atol=1e-9)
    assert abs(st.y[0] - 1.0) < 1e-4
    assert st.mu[0] == pytest.approx(-2.0, abs=1e-3)


def test_continuous_matches_matrix_exponential():
    p = build_case1().problem.normalized()
    J, c = flow_matrix(p)
    z0 = np.zeros(8)
    T = 2.0
    zeq = np.linalg.lstsq(J, -c, rcond=None)[0]
    exact = zeq + expm(J * T) @ (z0 - zeq)
    st = PrimalDualState.initial(np.zeros(4), 4)
    for _ in range(200):
        st = step_continuous(p, st, 0.01)
    assert np.allclose(np.concatenate([st.y, st.mu]), exact, atol=1e-8)


def test_rk4_order():
    f = lambda z: np.array([-z[0] + np.sin(z[0])])
    ref = np.array([1.0])
    for _ in range(4000):
        ref = rk4(f, ref, 1e-4)
    errs = []
    for dt in (0.1, 0.05):
        z = np.array([1.0])
        for _ in range(int(round(0.4 / dt))):
            z = rk4(f, z, dt)
        errs.append(abs(z[0] - ref[0]))
    assert 8 <= errs[0] / errs[1] <= 32


def test_held_advance_is_linear_in_time():
    p = build_case1().problem.normalized()
    st = PrimalDualState.initial(np.array([1.0, 0.0, 0.0, 1.0]), 4)
    g0 = g_field(p, st.y_held, st.mu_held)
    r0 = mu_field(p, st.y_held)
    for _ in range(50):
        st = step_held(p, st, 0.02)
    assert np.allclose(st.y, [1, 0, 0, 1] + 1.0 * g0, atol=1e-12)
    assert np.allclose(st.mu, 1.0 * r0, atol=1e-12)


def test_lyapunov_decreasing_continuous():
    p, _ = random_instance(6, 2, 9)
    sol = kkt_solve(p)
    rng = np.random.default_rng(9)
    st = PrimalDualState.initial(rng.normal(size=6), 2)
    st.mu[:] = rng.normal(size=2)
    v = lyapunov(p, st.y, st.mu, sol.y_star, sol.mu_star)
    for _ in range(200):
        st = step_continuous(p, st, 0.01)
        w = lyapunov(p, st.y, st.mu, sol.y_star, sol.mu_star)
        assert w < v
        v = w


def test_gain_scales_time():
    p = scalar(1.0)
    a = PrimalDualState.initial([0.0], 1)
    b = a.copy()
    for _ in range(100):
        a = step_continuous(p, a, 0.01, gain=2.0)
    for _ in range(100):
        b = step_continuous(p, b, 0.02)
    assert np.allclose(a.y, b.y, atol=1e-12)


def test_divergence_guard():
    p = scalar(0.0)
    st = PrimalDualState.initial([1e10], 1)
    with pytest.raises(DivergenceError):
        step_held(p, st, 0.01)
    st = PrimalDualState.initial([np.nan], 1)
    with pytest.raises(DivergenceError):
        step_continuous(p, st, 0.01)


def test_shape_checks():
    with pytest.raises(ValueError):
        g_field(scalar(), np.zeros(2), np.zeros(1))
    with pytest.raises(ValueError):
        step_held(scalar(), PrimalDualState.initial([0.0], 1), 0.0)
