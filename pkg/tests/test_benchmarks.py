"""Tests for the benchmark constructors and the Chebyshev grid."""

import numpy as np
import pytest

from polyfeedback.benchmarks import (ALLEN_CAHN_GAMMA_LADDER,
                                     ALLEN_CAHN_REGIONS, cheb_grid,
                                     make_benchmark, make_cucker_smale,
                                     make_lc_circuit, make_vanderpol,
                                     sample_initial_conditions)


class TestChebGrid:
    def test_weights_sum_to_two(self):
        for N in (4, 9, 16, 21):
            assert np.sum(cheb_grid(N).weights) == pytest.approx(2.0, abs=1e-13)

    def test_quadrature_exact_on_polynomials(self):
        # Clenshaw-Curtis integrates degree <= N polynomials exactly
        N = 12
        g = cheb_grid(N)
        for k in range(N + 1):
            exact = 0.0 if k % 2 else 2.0 / (k + 1)
            assert g.weights @ g.points**k == pytest.approx(exact, abs=1e-12)

    def test_differentiation_exact_on_polynomials(self):
        N = 10
        g = cheb_grid(N)
        for k in range(N + 1):
            deriv = np.zeros(N + 1) if k == 0 else k * g.points**(k - 1)
            assert np.allclose(g.D @ g.points**k, deriv, atol=1e-8)

    def test_second_derivative(self):
        g = cheb_grid(12)
        assert np.allclose(g.D2 @ g.points**4, 12 * g.points**2, atol=1e-7)

    def test_too_small_raises(self):
        with pytest.raises(ValueError):
            cheb_grid(1)


class TestSampling:
    def test_deterministic_and_in_box(self):
        spec = make_lc_circuit(check=False)
        a = sample_initial_conditions(spec, 7, 123)
        b = sample_initial_conditions(spec, 7, 123)
        assert np.array_equal(a, b)
        assert a.shape == (7, 3)
        assert np.max(np.abs(a)) < spec.system.box_halfwidth

    def test_prefix_stability(self):
        # the first k points do not depend on the requested count
        spec = make_lc_circuit(check=False)
        small = sample_initial_conditions(spec, 3, 9)
        large = sample_initial_conditions(spec, 10, 9)
        assert np.array_equal(large[:3], small)

    def test_train_and_test_streams_differ(self):
        spec = make_lc_circuit(check=False)
        train = spec.training_points(5)
        test = spec.test_points(5)
        assert not np.allclose(train, test)

    def test_pool_limit(self):
        spec = make_lc_circuit(check=False)
        with pytest.raises(ValueError):
            spec.training_points(spec.training_pool + 1)


def finite_difference_jacobian(f, y, eps=1e-6):
    d = len(y)
    J = np.zeros((len(f(y)), d))
    for j in range(d):
        yp = y.copy(); yp[j] += eps
        ym = y.copy(); ym[j] -= eps
        J[:, j] = (f(yp) - f(ym)) / (2 * eps)
    return J


@pytest.mark.parametrize("name", ["lc_circuit", "vanderpol", "allen_cahn",
                                  "cucker_smale"])
class TestAllBenchmarks:
    def test_jacobian_matches_finite_differences(self, name):
        spec = make_benchmark(name, check=False)
        sys = spec.system
        rng = np.random.default_rng(1)
        for y in rng.uniform(-0.5 * sys.box_halfwidth,
                             0.5 * sys.box_halfwidth, size=(3, sys.dim)):
            J = sys.Df(y)
            J_fd = finite_difference_jacobian(sys.f, y)
            assert np.allclose(J, J_fd, rtol=1e-5, atol=1e-6), name

    def test_cost_gradient_matches_finite_differences(self, name):
        spec = make_benchmark(name, check=False)
        sys = spec.system
        rng = np.random.default_rng(2)
        y = rng.uniform(-1.0, 1.0, sys.dim)
        g = sys.running_cost_grad(y)
        eps = 1e-6
        for j in range(sys.dim):
            yp = y.copy(); yp[j] += eps
            ym = y.copy(); ym[j] -= eps
            fd = (sys.running_cost(yp) - sys.running_cost(ym)) / (2 * eps)
            assert g[j] == pytest.approx(fd, rel=1e-4, abs=1e-8)

    def test_initial_theta_shape_and_scale(self, name):
        spec = make_benchmark(name, check=False)
        assert spec.initial_theta.shape == (len(spec.basis),)
        assert spec.scale == spec.system.box_halfwidth


class TestLCCircuit:
    def test_reduced_basis_cardinality(self):
        spec = make_lc_circuit(check=False)
        assert len(spec.basis) == 3
        assert set(spec.basis.indices) == {(1, 1, 0), (0, 2, 0), (0, 1, 1)}

    def test_uncontrolled_dynamics_unstable(self):
        spec = make_lc_circuit(check=False)
        A = spec.system.Df(np.zeros(3))
        assert np.min(np.linalg.eigvals(A).real) > 0

    def test_default_guess_feasible(self):
        # zero initial guess with the infinite escape radius must be usable
        make_lc_circuit(check=True)


class TestVanderpol:
    def test_initial_guess_is_the_analytic_polynomial(self):
        spec = make_vanderpol(check=False)
        model = spec.initial_model()
        rng = np.random.default_rng(0)
        for y in rng.uniform(-5, 5, size=(10, 2)):
            v0 = 0.8e-3 * y[0]**3 * y[1] + 0.5e-3 * 1.5 * y[1]**2
            value, _ = model.value_grad(y)
            assert value == pytest.approx(v0, rel=1e-12, abs=1e-15)

    def test_analytic_guess_cancels_destabilizing_terms(self):
        # closed loop y2' = -nu y1^2 y2 - y1: bounded for all starts in the box
        spec = make_vanderpol(check=False)
        sys = spec.system
        model = spec.initial_model()
        y = np.array([3.0, -2.0])
        _, grad = model.value_grad(y)
        u = -(sys.B.T @ grad) / sys.beta
        rhs2 = sys.f(y)[1] + u[0]
        assert rhs2 == pytest.approx(-1.5 * y[0]**2 * y[1] - y[0], rel=1e-9)

    def test_degree_cardinalities(self):
        for n, card in {4: 9, 5: 14, 6: 20, 7: 27, 8: 35}.items():
            spec = make_vanderpol(degree=n, check=False)
            assert len(spec.basis) == card

    def test_low_degree_rejected(self):
        with pytest.raises(ValueError):
            make_vanderpol(degree=3, check=False)


class TestAllenCahn:
    def test_basis_cardinality_350(self):
        spec = make_benchmark("allen_cahn", check=False)
        assert len(spec.basis) == 350

    def test_gamma_ladder_strictly_decreasing(self):
        g = np.array(ALLEN_CAHN_GAMMA_LADDER)
        assert np.all(np.diff(g) < 0)
        assert g[0] == 0.1 and g[-1] == 1e-6

    def test_neumann_decay_rate(self):
        # pure diffusion with Neumann conditions: the slowest nonconstant
        # mode cos(pi x / 2) decays at rate nu pi^2 / 4
        nu = 0.5
        spec = make_benchmark("allen_cahn", nu=nu, check=False)
        sys = spec.system
        L = sys.Df(np.zeros(sys.dim)) - np.eye(sys.dim)  # strip the y(1-y^2) part
        eigs = np.sort(np.linalg.eigvals(L).real)[::-1]
        # largest eigenvalue ~ 0 (constant mode), next ~ -nu pi^2/4
        assert abs(eigs[0]) < 1e-8
        assert eigs[1] == pytest.approx(-nu * np.pi**2 / 4, rel=0.02)

    def test_control_regions_partition(self):
        spec = make_benchmark("allen_cahn", check=False)
        B = spec.system.B
        assert B.shape[1] == len(ALLEN_CAHN_REGIONS)
        # indicator columns: 0/1 entries, disjoint supports
        assert set(np.unique(B)) <= {0.0, 1.0}
        assert np.max(B.sum(axis=1)) <= 1.0
        assert all(B[:, i].sum() > 0 for i in range(B.shape[1]))

    def test_neumann_boundary_elimination(self):
        # the extension must satisfy the discrete Neumann conditions
        spec = make_benchmark("allen_cahn", check=False)
        grid = spec.extras["grid"]
        E = spec.extras["extension"]
        rng = np.random.default_rng(3)
        y = rng.standard_normal(spec.system.dim)
        full = E @ y
        dy = grid.D @ full
        assert abs(dy[0]) < 1e-8 and abs(dy[-1]) < 1e-8

    def test_running_cost_is_quadrature_of_square(self):
        spec = make_benchmark("allen_cahn", check=False)
        grid = spec.extras["grid"]
        E = spec.extras["extension"]
        rng = np.random.default_rng(4)
        y = rng.standard_normal(spec.system.dim)
        full = E @ y
        expected = float(grid.weights @ full**2)
        assert spec.system.running_cost(y) == pytest.approx(expected, rel=1e-12)


class TestCuckerSmale:
    def test_basis_cardinality_650(self):
        spec = make_cucker_smale(check=False)
        assert len(spec.basis) == 650

    def test_dimensions(self):
        spec = make_cucker_smale(check=False)
        assert spec.system.dim == 40
        assert spec.system.control_dim == 20
        assert spec.system.beta == pytest.approx(0.02)  # 2 x reference weight

    def test_uncontrolled_mean_velocity_conserved(self):
        # the alignment field is antisymmetric in the velocity deviations
        spec = make_cucker_smale(check=False)
        sys = spec.system
        rng = np.random.default_rng(5)
        y = rng.uniform(-2, 2, 40)
        dv = sys.f(y)[20:].reshape(10, 2)
        assert np.allclose(dv.mean(axis=0), 0.0, atol=1e-14)

    def test_running_cost_vanishes_at_consensus(self):
        spec = make_cucker_smale(check=False)
        y = np.zeros(40)
        y[20:] = np.tile([0.7, -0.3], 10)   # equal velocities
        assert spec.system.running_cost(y) == pytest.approx(0.0, abs=1e-14)

    def test_initial_guess_damps_velocities(self):
        spec = make_cucker_smale(check=False)
        sys = spec.system
        model = spec.initial_model()
        rng = np.random.default_rng(6)
        y = rng.uniform(-1, 1, 40)
        _, grad = model.value_grad(y)
        u = -(sys.B.T @ grad) / sys.beta
        # v0 = 10 K beta sum |v_i|^2 gives u = -(2 * 10 K beta / beta_sys) v = -v
        assert np.allclose(u, -y[20:], rtol=1e-9, atol=1e-12)


def test_unknown_benchmark():
    with pytest.raises(KeyError):
        make_benchmark("pendulum")
