"""Tests for control systems and Crank-Nicolson integration."""

import numpy as np
import pytest

from polyfeedback.basis import (reduce_basis, strip_low_order,
                                total_degree_indices)
from polyfeedback.dynamics import (ControlSystem, Trajectory,
                                   closed_loop_rhs, integrate_closed_loop,
                                   integrate_linear)
from polyfeedback.model import PolynomialModel, zero_model


def scalar_decay_system(a=-1.0, beta=1.0, l=10.0, escape=None):
    A = np.array([[a]])
    return ControlSystem(
        dim=1, control_dim=1,
        f=lambda y: A @ y, Df=lambda y: A,
        running_cost=lambda y: 0.5 * float(y @ y),
        running_cost_grad=lambda y: np.asarray(y, dtype=float),
        B=np.array([[1.0]]), beta=beta, box_halfwidth=l,
        escape_radius=escape)


def lc_system(l=10.0, escape=None):
    A = np.array([[0.0, 1.0, -1.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 1.0]])
    return ControlSystem(
        dim=3, control_dim=1,
        f=lambda y: A @ y, Df=lambda y: A,
        running_cost=lambda y: 0.5 * float(y @ y),
        running_cost_grad=lambda y: np.asarray(y, dtype=float),
        B=np.array([[0.0], [1.0], [0.0]]), beta=1.0, box_halfwidth=l,
        escape_radius=escape)


class TestControlSystem:
    def test_b_shape_validated(self):
        with pytest.raises(ValueError):
            ControlSystem(dim=2, control_dim=1,
                          f=lambda y: np.zeros(2), Df=lambda y: np.zeros((2, 2)),
                          running_cost=lambda y: 0.0,
                          running_cost_grad=lambda y: np.zeros(2),
                          B=np.ones((3, 1)), beta=1.0, box_halfwidth=1.0)

    def test_origin_must_be_equilibrium(self):
        with pytest.raises(ValueError):
            ControlSystem(dim=1, control_dim=1,
                          f=lambda y: y + 1.0, Df=lambda y: np.eye(1),
                          running_cost=lambda y: 0.0,
                          running_cost_grad=lambda y: np.zeros(1),
                          B=np.eye(1), beta=1.0, box_halfwidth=1.0)

    def test_beta_positive(self):
        with pytest.raises(ValueError):
            scalar_decay_system(beta=0.0)

    def test_feedback_formula(self):
        # linear-in-state feedback of a pure quadratic model: u=-(1/b) B^T P y
        sys = lc_system()
        basis = strip_low_order(total_degree_indices(3, 2))
        rng = np.random.default_rng(0)
        theta = rng.standard_normal(len(basis))
        model = PolynomialModel(basis, theta, sys.box_halfwidth)
        y = rng.uniform(-5, 5, 3)
        # assemble P from coefficients of the quadratic form
        P = np.zeros((3, 3))
        for t, alpha in zip(theta, basis.indices):
            nz = [i for i, a in enumerate(alpha) if a]
            if len(nz) == 1:
                P[nz[0], nz[0]] = 2 * t
            else:
                P[nz[0], nz[1]] = P[nz[1], nz[0]] = t
        grad = (P @ y) / sys.box_halfwidth**2
        u = sys.feedback(model, y)
        assert np.allclose(u, -(sys.B.T @ grad) / sys.beta, atol=1e-12)
        rhs = closed_loop_rhs(sys, model, y)
        assert np.allclose(rhs, sys.f(y) + sys.B @ u, atol=1e-12)


class TestCrankNicolsonLinear:
    def test_scalar_closed_form(self):
        # one CN step for y' = a y is multiplication by (1+ah/2)/(1-ah/2)
        a, h = -2.0, 0.1
        traj = integrate_linear(np.array([[a]]), [1.0], T=h, h=h)
        assert traj.states[1, 0] == pytest.approx(
            (1 + a * h / 2) / (1 - a * h / 2), abs=1e-14)

    def test_second_order_convergence(self):
        A = np.array([[0.0, 1.0], [-1.0, 0.0]])
        y0 = np.array([1.0, 0.0])
        T = 2.0
        exact = np.array([np.cos(T), -np.sin(T)])
        errs = []
        for K in (100, 200, 400):
            traj = integrate_linear(A, y0, T, T / K)
            errs.append(np.linalg.norm(traj.states[-1] - exact))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
        assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)

    @pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
    def test_singular_step_raises(self):
        # (I - h/2 A) singular when A has eigenvalue 2/h
        from polyfeedback.errors import StepSizeError
        h = 0.5
        A = np.array([[2.0 / h]])
        with pytest.raises(StepSizeError):
            integrate_linear(A, [1.0], T=1.0, h=h)

    def test_grid_must_divide(self):
        with pytest.raises(ValueError):
            integrate_linear(np.eye(1), [0.5], T=1.0, h=0.3)


class TestClosedLoopIntegration:
    def test_matches_linear_integrator_for_quadratic_model(self):
        # v = (theta/l^2) y^2 on the scalar system gives linear closed loop
        sys = scalar_decay_system(a=-0.5, beta=2.0)
        basis = strip_low_order(total_degree_indices(1, 2))
        theta = np.array([3.0])
        model = PolynomialModel(basis, theta, sys.box_halfwidth)
        # closed loop: y' = a y - (1/beta) * (2 theta / l^2) y
        a_cl = -0.5 - (2 * 3.0 / sys.box_halfwidth**2) / sys.beta
        traj = integrate_closed_loop(sys, model, [1.0], T=1.0, h=0.01)
        ref = integrate_linear(np.array([[a_cl]]), [1.0], T=1.0, h=0.01)
        assert not traj.escaped
        assert np.allclose(traj.states, ref.states, atol=1e-9)

    def test_controls_recorded(self):
        sys = scalar_decay_system()
        basis = strip_low_order(total_degree_indices(1, 2))
        model = PolynomialModel(basis, np.array([1.0]), sys.box_halfwidth)
        traj = integrate_closed_loop(sys, model, [2.0], T=0.5, h=0.05)
        assert traj.controls.shape == (11, 1)
        for k in (0, 5, 10):
            u = sys.feedback(model, traj.states[k])
            assert traj.controls[k] == pytest.approx(u, abs=1e-12)

    def test_unstable_uncontrolled_lc_escapes(self):
        # the uncontrolled circuit has only unstable modes; near-boundary
        # starts must leave the box
        sys = lc_system()
        model = zero_model(reduce_basis(
            strip_low_order(total_degree_indices(3, 2)), sys.B),
            sys.box_halfwidth)
        traj = integrate_closed_loop(sys, model, [9.5, 9.5, 9.5], T=10.0,
                                     h=0.025)
        assert traj.escaped
        assert traj.escaped_at is not None and traj.escaped_at > 0

    def test_initial_point_outside_box(self):
        sys = scalar_decay_system(l=1.0)
        basis = strip_low_order(total_degree_indices(1, 2))
        model = PolynomialModel(basis, np.zeros(1), sys.box_halfwidth)
        traj = integrate_closed_loop(sys, model, [2.0], T=1.0, h=0.1)
        assert traj.escaped_at == 0

    def test_escape_radius_relaxes_the_box(self):
        sys = scalar_decay_system(a=0.3, l=1.0, escape=np.inf)
        basis = strip_low_order(total_degree_indices(1, 2))
        model = PolynomialModel(basis, np.zeros(1), sys.box_halfwidth)
        traj = integrate_closed_loop(sys, model, [0.9], T=5.0, h=0.05)
        assert not traj.escaped
        assert traj.states[-1, 0] > 1.0   # left the box but kept integrating


class TestTrajectory:
    def test_csv_shape(self):
        times = np.linspace(0, 1, 3)
        states = np.array([[0.0, 1.0], [0.5, 1.5], [1.0, 2.0]])
        controls = np.array([[0.1], [0.2], [0.3]])
        text = Trajectory(times, states, controls).to_csv()
        lines = text.strip().splitlines()
        assert lines[0] == "t,y1,y2,u1"
        assert len(lines) == 4
        row = [float(v) for v in lines[2].split(",")]
        assert row == [0.5, 0.5, 1.5, 0.2]

    def test_step_property(self):
        traj = Trajectory(np.linspace(0, 1, 11), np.zeros((11, 1)))
        assert traj.step == pytest.approx(0.1)
