"""The four benchmark control problems.

Each constructor returns a BenchmarkSpec bundling the control system, the
reduced monomial basis, default experiment parameters, and a feasible
initial coefficient guess.  Costs are normalized to the common form
int l(y) + (beta/2)|u|^2 dt; constructors that take a paper-style weight
on |u|^2 (without the 1/2) convert it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import (BasisSet, hyperbolic_cross_indices, reduce_basis,
                    strip_low_order, total_degree_indices)
from .dynamics import ControlSystem
from .errors import InfeasibleInitialGuessError
from .model import PolynomialModel, coefficients_from_unscaled
from .objective import TrainingSet, cost


@dataclass(frozen=True)
class ChebGrid:
    """Chebyshev extreme points with differentiation matrices and
    Clenshaw-Curtis quadrature weights on [-1, 1]."""

    points: np.ndarray
    D: np.ndarray
    D2: np.ndarray
    weights: np.ndarray


def cheb_grid(N: int) -> ChebGrid:
    """Standard Chebyshev collocation grid x_j = cos(j pi / N)."""
    if N < 2:
        raise ValueError("N must be at least 2")
    j = np.arange(N + 1)
    x = np.cos(np.pi * j / N)
    c = np.hstack([2.0, np.ones(N - 1), 2.0]) * (-1.0) ** j
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    w = _clenshaw_curtis_weights(N)
    return ChebGrid(points=x, D=D, D2=D @ D, weights=w)


def _clenshaw_curtis_weights(N: int) -> np.ndarray:
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    ii = np.arange(1, N)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k**2 - 1)
        v -= np.cos(N * theta[ii]) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k**2 - 1)
    w[ii] = 2.0 * v / N
    return w


@dataclass
class BenchmarkSpec:
    """A named problem instance with its learning defaults."""

    name: str
    system: ControlSystem
    basis: BasisSet
    horizon: float
    step: float
    gamma: float | tuple
    r: float
    initial_theta: np.ndarray
    training_pool: int
    test_size: int
    seed: int
    update_mode: str = "full"
    extras: dict = field(default_factory=dict)

    @property
    def scale(self) -> float:
        return self.system.box_halfwidth

    def initial_model(self) -> PolynomialModel:
        return PolynomialModel(self.basis, self.initial_theta.copy(), self.scale)

    def training_points(self, count: int | None = None,
                        seed: int | None = None) -> np.ndarray:
        seed = self.seed if seed is None else seed
        pool = sample_initial_conditions(self, self.training_pool, seed)
        if count is None:
            return pool
        if count > self.training_pool:
            raise ValueError("requested more points than the training pool")
        return pool[:count]

    def test_points(self, count: int | None = None,
                    seed: int | None = None) -> np.ndarray:
        seed = self.seed + 1 if seed is None else seed
        return sample_initial_conditions(
            self, self.test_size if count is None else count, seed)


def sample_initial_conditions(spec: BenchmarkSpec, count: int,
                              seed: int) -> np.ndarray:
    """Uniform i.i.d. points in the open box, from a counter-based
    generator so that (seed, count, d, l) fixes the output exactly."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    l = spec.system.box_halfwidth
    return rng.uniform(-l, l, size=(count, spec.system.dim))


def _check_initial_guess(spec: BenchmarkSpec, train_count: int = 1):
    model = spec.initial_model()
    train = TrainingSet(spec.training_points(train_count),
                        spec.horizon, spec.step)
    report = cost(model, spec.system, train)
    if not report.feasible:
        raise InfeasibleInitialGuessError(
            f"default initial guess for benchmark '{spec.name}' escaped")


LC_A = np.array([[0.0, 1.0, -1.0],
                 [-1.0, 0.0, 0.0],
                 [1.0, 0.0, 1.0]])
LC_B = np.array([[0.0], [1.0], [0.0]])


def make_lc_circuit(beta: float = 1.0, l: float = 10.0, T: float = 10.0,
                    gamma: float = 1e-30, r: float = 0.1, seed: int = 20230,
                    escape_radius: float = np.inf,
                    check: bool = True) -> BenchmarkSpec:
    """Linear-quadratic circuit: y' = A y + B u, l(y) = |y|^2 / 2.

    The uncontrolled dynamics are unstable (every eigenvalue of A has a
    positive real part), so the zero initial guess would escape any finite
    box; training from v0 = 0 therefore uses an infinite escape radius and
    relies on the finiteness checks only.
    """
    A, B = LC_A, LC_B
    sys = ControlSystem(
        dim=3, control_dim=1,
        f=lambda y: A @ y, Df=lambda y: A,
        running_cost=lambda y: 0.5 * float(y @ y),
        running_cost_grad=lambda y: np.asarray(y, dtype=float),
        B=B, beta=beta, box_halfwidth=l, escape_radius=escape_radius)
    basis = reduce_basis(strip_low_order(total_degree_indices(3, 2)), B)
    spec = BenchmarkSpec(
        name="lc_circuit", system=sys, basis=basis, horizon=T, step=T / 400,
        gamma=gamma, r=r, initial_theta=np.zeros(len(basis)),
        training_pool=20, test_size=100, seed=seed, update_mode="full")
    if check:
        _check_initial_guess(spec)
    return spec


def make_vanderpol(nu: float = 1.5, mu: float = 0.8, degree: int = 4,
                   beta: float = 1e-3, l: float = 10.0, T: float = 3.0,
                   gamma: float = 1e-8, r: float = 0.1, seed: int = 20231,
                   check: bool = True) -> BenchmarkSpec:
    """Modified Van der Pol oscillator: y'' = nu(1-y^2)y' - y + mu y^3 + u."""
    if degree < 4:
        raise ValueError("the analytic initial guess needs degree at least 4")

    def f(y):
        return np.array([y[1], nu * (1.0 - y[0]**2) * y[1] - y[0] + mu * y[0]**3])

    def Df(y):
        return np.array([[0.0, 1.0],
                         [-2.0 * nu * y[0] * y[1] - 1.0 + 3.0 * mu * y[0]**2,
                          nu * (1.0 - y[0]**2)]])

    B = np.array([[0.0], [1.0]])
    sys = ControlSystem(
        dim=2, control_dim=1, f=f, Df=Df,
        running_cost=lambda y: 0.5 * float(y @ y),
        running_cost_grad=lambda y: np.asarray(y, dtype=float),
        B=B, beta=beta, box_halfwidth=l)
    basis = reduce_basis(strip_low_order(total_degree_indices(2, degree)), B)
    # v0(y1, y2) = mu*beta*y1^3*y2 + (beta*nu/2)*y2^2, expressed on the
    # scaled monomials phi(y/l)
    theta0 = coefficients_from_unscaled(
        basis, {(3, 1): mu * beta, (0, 2): 0.5 * beta * nu}, l)
    spec = BenchmarkSpec(
        name="vanderpol", system=sys, basis=basis, horizon=T, step=T / 400,
        gamma=gamma, r=r, initial_theta=theta0,
        training_pool=5, test_size=100, seed=seed, update_mode="full")
    if check:
        _check_initial_guess(spec)
    return spec


def _cucker_smale_fields(N: int, K: float):
    n2 = 2 * N

    def split(y):
        return y[:n2].reshape(N, 2), y[n2:].reshape(N, 2)

    def f(y):
        X, V = split(y)
        diff = X[:, None, :] - X[None, :, :]
        s = np.sum(diff * diff, axis=2)
        a = K / (1.0 + s)
        dV = (a @ V - a.sum(axis=1)[:, None] * V) / N
        return np.concatenate([V.ravel(), dV.ravel()])

    eye2 = np.eye(2)
    eye_n2 = np.eye(n2)
    idx = np.arange(N)

    def Df(y):
        X, V = split(y)
        diff = X[:, None, :] - X[None, :, :]          # x_i - x_j
        s = np.sum(diff * diff, axis=2)
        a = K / (1.0 + s)
        c = -K / (1.0 + s) ** 2                       # d a / d s
        w = V[None, :, :] - V[:, None, :]             # v_j - v_i
        # blocks d v_i' / d x: outer products w_ij (c_ij * 2 * diff_ij)^T
        outer = np.einsum("ija,ij,ijb->ijab", w, 2.0 * c, diff) / N
        vx = -outer                                   # d v_i' / d x_j, j != i
        vx[idx, idx] = outer.sum(axis=1)              # d v_i' / d x_i
        # blocks d v_i' / d v
        vv = np.einsum("ij,ab->ijab", a / N, eye2)
        vv[idx, idx] = np.einsum("i,ab->iab",
                                 -(a.sum(axis=1) - a[idx, idx]) / N, eye2)
        J = np.zeros((4 * N, 4 * N))
        J[:n2, n2:] = eye_n2
        J[n2:, :n2] = vx.transpose(0, 2, 1, 3).reshape(n2, n2)
        J[n2:, n2:] = vv.transpose(0, 2, 1, 3).reshape(n2, n2)
        return J

    def running_cost(y):
        _, V = split(y)
        dev = V - V.mean(axis=0)
        return float(np.sum(dev * dev)) / N

    def running_cost_grad(y):
        _, V = split(y)
        dev = V - V.mean(axis=0)
        g = np.zeros_like(y)
        g[n2:] = (2.0 / N) * dev.ravel()
        return g

    return f, Df, running_cost, running_cost_grad


def make_cucker_smale(N: int = 10, K: float = 0.1, beta: float = 1e-2,
                      l: float = 5.0, T: float = 3.0, gamma: float = 1e-5,
                      r: float = 0.9, seed: int = 20232,
                      escape_radius: float = np.inf,
                      check: bool = True) -> BenchmarkSpec:
    """Optimal consensus for N planar Cucker-Smale agents.

    State is (positions, velocities) in R^{4N}; controls act on the
    velocities.  The reference cost weights |u|^2 by beta, which maps to
    a control weight 2*beta in the (beta/2)|u|^2 normalization used here.

    The default initial guess damps the velocities but lets positions
    drift as far as roughly twice the box half-width, so the benchmark
    defaults to an infinite escape radius (boundedness checks only).
    """
    d = 4 * N
    m = 2 * N
    f, Df, running_cost, running_cost_grad = _cucker_smale_fields(N, K)
    B = np.vstack([np.zeros((m, m)), np.eye(m)])
    sys = ControlSystem(dim=d, control_dim=m, f=f, Df=Df,
                        running_cost=running_cost,
                        running_cost_grad=running_cost_grad,
                        B=B, beta=2.0 * beta, box_halfwidth=l,
                        escape_radius=escape_radius)
    basis = reduce_basis(strip_low_order(hyperbolic_cross_indices(d, 4)), B)
    # v0 = 10 K beta sum_i |v_i|^2
    terms = {}
    for c in range(m):
        alpha = [0] * d
        alpha[m + c] = 2
        terms[tuple(alpha)] = 10.0 * K * beta
    theta0 = coefficients_from_unscaled(basis, terms, l)
    spec = BenchmarkSpec(
        name="cucker_smale", system=sys, basis=basis, horizon=T, step=T / 400,
        gamma=gamma, r=r, initial_theta=theta0,
        training_pool=5, test_size=100, seed=seed, update_mode="greedy")
    if check:
        _check_initial_guess(spec)
    return spec


ALLEN_CAHN_GAMMA_LADDER = (1.0e-1, 8.9e-2, 7.8e-2, 6.7e-2, 5.6e-2,
                           4.4e-2, 3.3e-2, 2.2e-2, 1.1e-2, 1.0e-6)
ALLEN_CAHN_REGIONS = ((-0.7, -0.4), (-0.2, 0.2), (0.4, 0.7))


def make_allen_cahn(nu: float = 0.5, n_interior: int = 19, beta: float = 0.1,
                    l: float = 10.0, T: float = 4.0, r: float = 0.9,
                    gamma=ALLEN_CAHN_GAMMA_LADDER, degree: int = 6,
                    seed: int = 20233, check: bool = True) -> BenchmarkSpec:
    """Chebyshev-collocated Allen-Cahn equation with Neumann conditions.

    The grid has n_interior + 2 points; the two boundary values are
    eliminated through the discrete Neumann conditions, leaving a state of
    dimension n_interior.  The paper-style beta on |u|^2 maps to 2*beta.
    """
    if n_interior < 4:
        raise ValueError("n_interior must be at least 4")
    N = n_interior + 1
    grid = cheb_grid(N)
    interior = np.arange(1, N)
    boundary = np.array([0, N])
    D = grid.D
    Sbb = D[np.ix_(boundary, boundary)]
    Sbi = D[np.ix_(boundary, interior)]
    bnd_map = -np.linalg.solve(Sbb, Sbi)            # boundary values from interior
    E = np.zeros((N + 1, n_interior))
    E[interior] = np.eye(n_interior)
    E[boundary] = bnd_map
    L = nu * (grid.D2 @ E)[interior]                # linear diffusion part
    Q = E.T @ np.diag(grid.weights) @ E             # l(y) = y^T Q y

    def f(y):
        return L @ y + y * (1.0 - y * y)

    def Df(y):
        return L + np.diag(1.0 - 3.0 * y * y)

    x_int = grid.points[interior]
    B = np.zeros((n_interior, len(ALLEN_CAHN_REGIONS)))
    for i, (lo, hi) in enumerate(ALLEN_CAHN_REGIONS):
        B[:, i] = ((x_int > lo) & (x_int < hi)).astype(float)

    sys = ControlSystem(
        dim=n_interior, control_dim=len(ALLEN_CAHN_REGIONS), f=f, Df=Df,
        running_cost=lambda y: float(y @ Q @ y),
        running_cost_grad=lambda y: 2.0 * (Q @ y),
        B=B, beta=2.0 * beta, box_halfwidth=l)
    basis = reduce_basis(
        strip_low_order(hyperbolic_cross_indices(n_interior, degree)), B)
    spec = BenchmarkSpec(
        name="allen_cahn", system=sys, basis=basis, horizon=T, step=T / 400,
        gamma=gamma, r=r, initial_theta=np.zeros(len(basis)),
        training_pool=5, test_size=100, seed=seed, update_mode="greedy",
        extras={"grid": grid, "extension": E})
    if check:
        _check_initial_guess(spec)
    return spec


REGISTRY = {
    "lc_circuit": make_lc_circuit,
    "vanderpol": make_vanderpol,
    "allen_cahn": make_allen_cahn,
    "cucker_smale": make_cucker_smale,
}


def make_benchmark(name: str, **kwargs) -> BenchmarkSpec:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown benchmark '{name}'; "
                       f"choose from {sorted(REGISTRY)}") from None
    return factory(**kwargs)
