"""Tests for the Riccati and open-loop reference solvers."""

import numpy as np
import pytest
import scipy.linalg

from polyfeedback.dynamics import ControlSystem
from polyfeedback.errors import PolyFeedbackError, StabilizationError
from polyfeedback.oracles import (OpenLoopSolution, open_loop_solve,
                                  riccati_reference, solve_are)

LC_A = np.array([[0.0, 1.0, -1.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 1.0]])
LC_B = np.array([[0.0], [1.0], [0.0]])


def linear_system(A, B, beta=1.0, l=10.0):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    return ControlSystem(
        dim=A.shape[0], control_dim=B.shape[1],
        f=lambda y: A @ y, Df=lambda y: A,
        running_cost=lambda y: 0.5 * float(y @ y),
        running_cost_grad=lambda y: np.asarray(y, dtype=float),
        B=B, beta=beta, box_halfwidth=l, escape_radius=np.inf)


class TestSolveARE:
    def test_scalar_closed_form_a_zero(self):
        # y' = u, q = beta = 1: P = 1 exactly
        sol = solve_are(np.zeros((1, 1)), np.ones((1, 1)), np.eye(1), beta=1.0)
        assert sol.P[0, 0] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("a,beta,q", [(1.0, 1.0, 1.0), (-0.5, 2.0, 3.0),
                                          (2.0, 0.1, 1.0)])
    def test_scalar_closed_form_general(self, a, beta, q):
        # P = beta (a + sqrt(a^2 + q/beta)) solves 2aP - P^2/beta + q = 0
        sol = solve_are(np.array([[a]]), np.ones((1, 1)), np.array([[q]]), beta)
        expected = beta * (a + np.sqrt(a * a + q / beta))
        assert sol.P[0, 0] == pytest.approx(expected, rel=1e-9)

    def test_lc_residual_and_hurwitz(self):
        sol = solve_are(LC_A, LC_B, np.eye(3), beta=1.0)
        assert sol.residual <= 1e-10
        assert sol.closed_loop_spectral_abscissa < 0
        # independent check of the residual claim
        R = (LC_A.T @ sol.P + sol.P @ LC_A
             - sol.P @ LC_B @ LC_B.T @ sol.P + np.eye(3))
        assert np.max(np.abs(R)) <= 1e-10

    def test_matches_scipy(self):
        rng = np.random.default_rng(0)
        checked = 0
        while checked < 5:
            d = int(rng.integers(2, 5))
            A = rng.standard_normal((d, d))
            B = rng.standard_normal((d, 1))
            beta = float(rng.uniform(0.1, 2.0))
            ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B
                              for k in range(d)])
            if np.linalg.cond(ctrb) > 1e3:
                continue          # nearly uncontrollable draws prove nothing
            ref = scipy.linalg.solve_continuous_are(A, B, np.eye(d),
                                                    beta * np.eye(1))
            sol = solve_are(A, B, np.eye(d), beta)
            scale = max(1.0, float(np.max(np.abs(ref))))
            assert np.allclose(sol.P, ref, rtol=1e-8, atol=1e-8 * scale)
            assert np.allclose(sol.gain, (B.T @ ref) / beta,
                               atol=1e-8 * scale)
            checked += 1

    def test_value_is_quadratic_form(self):
        sol = solve_are(LC_A, LC_B, np.eye(3), beta=1.0)
        y0 = np.array([1.0, -2.0, 0.5])
        assert sol.value(y0) == pytest.approx(0.5 * y0 @ sol.P @ y0)

    def test_unstabilizable_pair_raises(self):
        # unstable mode not reachable from B
        A = np.diag([1.0, -1.0])
        B = np.array([[0.0], [1.0]])
        with pytest.raises(StabilizationError):
            solve_are(A, B, np.eye(2), beta=1.0)


class TestRiccatiReference:
    def test_objective_close_to_value_function(self):
        sys = linear_system(LC_A, LC_B)
        ricc = solve_are(LC_A, LC_B, np.eye(3), beta=1.0)
        y0 = np.array([2.0, -1.0, 1.5])
        # the infinite-horizon value bounds the horizon-T cost; at T = 40
        # the tail is negligible and the quadrature error dominates
        sol = riccati_reference(sys, ricc, y0, T=40.0, h=0.005)
        assert sol.objective == pytest.approx(ricc.value(y0), rel=1e-4)

    def test_controls_are_linear_feedback(self):
        sys = linear_system(LC_A, LC_B)
        ricc = solve_are(LC_A, LC_B, np.eye(3), beta=1.0)
        sol = riccati_reference(sys, ricc, [1.0, 1.0, -1.0], T=5.0, h=0.01)
        assert np.allclose(sol.controls, -sol.states @ ricc.gain.T, atol=1e-12)
        assert sol.converged and sol.iterations == 0


class TestOpenLoopSolve:
    def test_scalar_lq_matches_riccati_tail(self):
        # long-horizon open loop on a scalar LQ problem approaches the
        # infinite-horizon value (1/2) P y0^2
        a, beta = -0.2, 1.0
        sys = linear_system(np.array([[a]]), np.eye(1), beta=beta)
        P = beta * (a + np.sqrt(a * a + 1.0 / beta))
        sol = open_loop_solve(sys, [3.0], T=10.0, h=0.025, tol=1e-6)
        assert sol.converged
        assert sol.objective == pytest.approx(0.5 * P * 9.0, rel=1e-3)

    def test_lc_matches_riccati_rollout(self):
        sys = linear_system(LC_A, LC_B)
        ricc = solve_are(LC_A, LC_B, np.eye(3), beta=1.0)
        y0 = np.array([1.5, -0.5, 1.0])
        T, h = 10.0, 0.05
        ref = riccati_reference(sys, ricc, y0, T, h)
        sol = open_loop_solve(sys, y0, T, h, tol=1e-4,
                              u0=ref.controls)
        assert sol.converged
        # finite horizon optimum can only undercut the Riccati rollout
        assert sol.objective <= ref.objective + 1e-8
        assert sol.objective == pytest.approx(ref.objective, rel=1e-3)

    def test_gradient_norm_reported(self):
        sys = linear_system(np.array([[-1.0]]), np.eye(1))
        sol = open_loop_solve(sys, [1.0], T=2.0, h=0.01, tol=1e-7)
        assert sol.gradient_norm <= 1e-7

    def test_escaping_initial_control_raises(self):
        A = np.array([[2.0]])
        sys = linear_system(A, np.eye(1), l=1.0)
        with pytest.raises(PolyFeedbackError):
            open_loop_solve(sys, [5.0], T=5.0, h=0.01, max_iter=1)

    def test_csv_and_summary(self):
        sol = OpenLoopSolution(times=np.array([0.0, 0.5]),
                               controls=np.array([[1.0], [2.0]]),
                               states=np.array([[0.1, 0.2], [0.3, 0.4]]),
                               objective=1.25, gradient_norm=1e-7,
                               iterations=12, converged=True)
        lines = sol.to_csv().strip().splitlines()
        assert lines[0] == "t,u1,y1,y2"
        assert len(lines) == 3
        summary = sol.summary_json()
        assert '"J": 1.25' in summary and '"converged": true' in summary
