"""Closed-loop training objective, its adjoint-based gradient, and the
elastic-net penalty.

The objective averages, over the training initial conditions, the
integral of the running cost plus the control energy of the feedback
induced by the model.  Its gradient with respect to the coefficients is
assembled from the adjoint states of each trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlSystem, Trajectory, integrate_closed_loop
from .errors import GradientUnavailableError
from .evaltree import gradient_table
from .model import PolynomialModel


@dataclass(frozen=True)
class TrainingSet:
    """Initial conditions with a shared horizon and step."""

    initial_conditions: np.ndarray    # (I, d)
    horizon: float
    step: float

    def __post_init__(self):
        ics = np.atleast_2d(np.asarray(self.initial_conditions, dtype=float))
        object.__setattr__(self, "initial_conditions", ics)
        if ics.shape[0] < 1:
            raise ValueError("at least one initial condition is required")

    def __len__(self) -> int:
        return self.initial_conditions.shape[0]


@dataclass
class ObjectiveReport:
    value: float
    state_costs: np.ndarray
    control_costs: np.ndarray
    feasible: bool
    trajectories: list[Trajectory] = field(default_factory=list)


def penalty(theta, gamma: float, r: float) -> float:
    """gamma * ((1 - r)/2 |theta|_2^2 + r |theta|_1)."""
    theta = np.asarray(theta, dtype=float)
    return gamma * (0.5 * (1.0 - r) * float(theta @ theta)
                    + r * float(np.sum(np.abs(theta))))


def _trapz(values: np.ndarray, h: float) -> float:
    return float(np.trapezoid(values, dx=h))


def _rollout_costs(model: PolynomialModel, sys: ControlSystem,
                   traj: Trajectory) -> tuple[float, float]:
    """Trapezoid state cost and feedback control cost along one trajectory."""
    Y = traj.states
    lvals = np.array([sys.running_cost(y) for y in Y])
    _, grads, _ = model.batch(Y)
    btg = grads @ sys.B                       # (K+1, m)
    cvals = 0.5 / sys.beta * np.sum(btg * btg, axis=1)
    h = traj.step
    return _trapz(lvals, h), _trapz(cvals, h)


def cost(model: PolynomialModel, sys: ControlSystem,
         train: TrainingSet) -> ObjectiveReport:
    """Mean closed-loop cost over the training set; +inf on any escape."""
    I = len(train)
    state_costs = np.zeros(I)
    control_costs = np.zeros(I)
    trajectories = []
    feasible = True
    for i, y0 in enumerate(train.initial_conditions):
        traj = integrate_closed_loop(sys, model, y0, train.horizon, train.step,
                                     record_controls=False)
        trajectories.append(traj)
        if traj.escaped:
            feasible = False
            state_costs[i] = np.inf
            control_costs[i] = np.inf
            continue
        state_costs[i], control_costs[i] = _rollout_costs(model, sys, traj)
    value = float(np.mean(state_costs + control_costs)) if feasible else np.inf
    return ObjectiveReport(value=value, state_costs=state_costs,
                           control_costs=control_costs, feasible=feasible,
                           trajectories=trajectories)


def solve_adjoint(traj: Trajectory, model: PolynomialModel,
                  sys: ControlSystem) -> np.ndarray:
    """Backward Crank-Nicolson solve of the adjoint equation, p(T) = 0.

    The adjoint satisfies
        p' = -Df(y)^T p + (1/beta) hess v(y) B B^T (grad v(y) + p) + grad l(y),
    which is linear in p along the stored forward states.
    """
    if traj.escaped:
        raise GradientUnavailableError("trajectory escaped; no adjoint")
    Y = traj.states
    K = Y.shape[0] - 1
    d = sys.dim
    h = traj.step
    beta = sys.beta
    BBt = sys.BBt

    _, grads, hessians = model.batch(Y, want_hess=True)
    # p' = M(t) p + b(t)
    M = np.empty((K + 1, d, d))
    b = np.empty((K + 1, d))
    for k in range(K + 1):
        HB = hessians[k] @ BBt / beta
        M[k] = -sys.Df(Y[k]).T + HB
        b[k] = HB @ grads[k] + sys.running_cost_grad(Y[k])

    p = np.zeros((K + 1, d))
    eye = np.eye(d)
    for k in range(K - 1, -1, -1):
        rhs = (eye - 0.5 * h * M[k + 1]) @ p[k + 1] - 0.5 * h * (b[k] + b[k + 1])
        p[k] = np.linalg.solve(eye + 0.5 * h * M[k], rhs)
    if not np.all(np.isfinite(p)):
        raise GradientUnavailableError("adjoint state is not finite")
    return p


def gradient(model: PolynomialModel, sys: ControlSystem, train: TrainingSet,
             report: ObjectiveReport | None = None
             ) -> tuple[np.ndarray, ObjectiveReport]:
    """Coefficient gradient of the training objective via the adjoint.

    Entries belonging to monomials with B^T grad phi identically zero are
    exactly zero: the integrand contracts grad phi_k with B B^T (...).
    """
    if report is None or not report.trajectories:
        report = cost(model, sys, train)
    if not report.feasible:
        raise GradientUnavailableError("objective is infinite at this iterate")
    table = gradient_table(model.basis, model.scale)
    I = len(train)
    h = train.step
    grad = np.zeros(len(model.basis))
    for traj in report.trajectories:
        p = solve_adjoint(traj, model, sys)
        Y = traj.states
        _, grads, _ = model.batch(Y)
        W = (grads + p) @ sys.BBt.T           # rows B B^T (grad v + p)
        rows = table.contracted_gradients(Y, W)   # (M, K+1)
        grad += np.trapezoid(rows, dx=h, axis=1)
    grad /= I * sys.beta
    return grad, report


def gradient_discrete(model: PolynomialModel, sys: ControlSystem,
                      train: TrainingSet,
                      report: ObjectiveReport | None = None
                      ) -> tuple[np.ndarray, ObjectiveReport]:
    """Exact coefficient gradient of the discretized training objective.

    Differentiates the trapezoid cost and the Crank-Nicolson steps as
    written (discrete adjoint), so the result is consistent with the
    evaluated objective to solver precision rather than O(h^2).  This is
    what the optimizer uses; the continuous-adjoint form above documents
    the underlying integral formula and agrees with this one as h -> 0.
    """
    if report is None or not report.trajectories:
        report = cost(model, sys, train)
    if not report.feasible:
        raise GradientUnavailableError("objective is infinite at this iterate")
    table = gradient_table(model.basis, model.scale)
    I = len(train)
    h = train.step
    beta = sys.beta
    BBt = sys.BBt
    d = sys.dim
    eye = np.eye(d)
    grad = np.zeros(len(model.basis))
    for traj in report.trajectories:
        Y = traj.states
        K = Y.shape[0] - 1
        _, grads, hessians = model.batch(Y, want_hess=True)
        # closed-loop Jacobian and running-cost gradient per node
        Fy = np.empty((K + 1, d, d))
        gphi = np.empty((K + 1, d))
        for k in range(K + 1):
            HB = hessians[k] @ BBt / beta       # (1/beta) hess v  B B^T
            Fy[k] = sys.Df(Y[k]) - HB.T         # d/dy [f - (1/beta) B B^T grad v]
            gphi[k] = sys.running_cost_grad(Y[k]) + HB @ grads[k]
        lam = np.zeros((K, d))
        lam[K - 1] = np.linalg.solve((eye - 0.5 * h * Fy[K]).T,
                                     -0.5 * h * gphi[K])
        for j in range(K - 1, 0, -1):
            rhs = (eye + 0.5 * h * Fy[j]).T @ lam[j] - h * gphi[j]
            lam[j - 1] = np.linalg.solve((eye - 0.5 * h * Fy[j]).T, rhs)
        if not np.all(np.isfinite(lam)):
            raise GradientUnavailableError("adjoint state is not finite")
        # node multipliers rho and trapezoid weights w
        rho = np.zeros((K + 1, d))
        rho[0] = 0.5 * lam[0]
        rho[1:K] = 0.5 * (lam[:-1] + lam[1:])
        rho[K] = 0.5 * lam[K - 1]
        w = np.full((K + 1, 1), 1.0)
        w[0] = w[K] = 0.5
        W = (w * grads + rho) @ BBt.T
        rows = table.contracted_gradients(Y, W)
        grad += h * rows.sum(axis=1)
    grad /= I * sys.beta
    return grad, report
