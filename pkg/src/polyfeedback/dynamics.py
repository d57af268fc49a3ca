"""Control systems on the box (-l, l)^d and Crank-Nicolson integration.

The closed-loop right-hand side is f(y) - (1/beta) B B^T grad v(y).  A
trajectory that leaves the closed box, or for which the implicit step
cannot be solved, is marked escaped; the training objective treats that
as an infinite value.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import StepSizeError
from .model import PolynomialModel

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 25
FIXED_POINT_SWEEPS = 5


@dataclass(frozen=True)
class ControlSystem:
    """Dynamics y' = f(y) + B u with running cost l(y) + (beta/2)|u|^2."""

    dim: int
    control_dim: int
    f: Callable[[np.ndarray], np.ndarray]
    Df: Callable[[np.ndarray], np.ndarray]
    running_cost: Callable[[np.ndarray], float]
    running_cost_grad: Callable[[np.ndarray], np.ndarray]
    B: np.ndarray
    beta: float
    box_halfwidth: float
    # States are declared escaped beyond this radius; defaults to the box
    # half-width.  An infinite radius keeps only the numerical-existence
    # checks (finite state, solvable implicit steps).
    escape_radius: float | None = None

    def __post_init__(self):
        if self.escape_radius is None:
            object.__setattr__(self, "escape_radius", self.box_halfwidth)
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if B.shape != (self.dim, self.control_dim):
            raise ValueError(f"B has shape {B.shape}, expected "
                             f"({self.dim}, {self.control_dim})")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "BBt", B @ B.T)
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        origin = np.zeros(self.dim)
        if np.max(np.abs(self.f(origin))) > 1e-12:
            raise ValueError("f(0) must vanish")
        if abs(self.running_cost(origin)) > 1e-12:
            raise ValueError("running cost must vanish at 0")

    BBt: np.ndarray = field(init=False, repr=False, compare=False)

    def feedback(self, model: PolynomialModel, y) -> np.ndarray:
        """u = -(1/beta) B^T grad v(y)."""
        _, grad = model.value_grad(y)
        return -(self.B.T @ grad) / self.beta


@dataclass
class Trajectory:
    """States on a uniform grid, with optional controls and escape marker."""

    times: np.ndarray
    states: np.ndarray                  # (K+1, d); rows beyond escape are frozen
    controls: np.ndarray | None = None  # (K+1, m)
    escaped_at: int | None = None

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def escaped(self) -> bool:
        return self.escaped_at is not None

    def to_csv(self) -> str:
        d = self.states.shape[1]
        header = "t," + ",".join(f"y{i + 1}" for i in range(d))
        cols = [self.times[:, None], self.states]
        if self.controls is not None:
            m = self.controls.shape[1]
            header += "," + ",".join(f"u{i + 1}" for i in range(m))
            cols.append(self.controls)
        buf = io.StringIO()
        np.savetxt(buf, np.hstack(cols), delimiter=",", header=header, comments="")
        return buf.getvalue()


def closed_loop_rhs(sys: ControlSystem, model: PolynomialModel, y) -> np.ndarray:
    """f(y) - (1/beta) B B^T grad v(y)."""
    _, grad = model.value_grad(y)
    return sys.f(y) - (sys.BBt @ grad) / sys.beta


def _grid(T: float, h: float) -> np.ndarray:
    K = int(round(T / h))
    if abs(K * h - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"step {h} does not divide horizon {T}")
    return np.linspace(0.0, T, K + 1)


def integrate_closed_loop(sys: ControlSystem, model: PolynomialModel,
                          y0, T: float, h: float,
                          record_controls: bool = True) -> Trajectory:
    """Crank-Nicolson integration of the closed-loop system.

    Each implicit step is solved by damped Newton with the analytic
    Jacobian Df - (1/beta) B B^T hess v, falling back to a few fixed-point
    sweeps.  Leaving the box, a non-finite state, or an unsolvable step
    marks the trajectory escaped and stops the integration.
    """
    times = _grid(T, h)
    K = len(times) - 1
    d = sys.dim
    l = sys.escape_radius
    beta = sys.beta
    BBt = sys.BBt
    theta = model.theta
    comp = model.compiled()

    y0 = np.asarray(y0, dtype=float)
    states = np.zeros((K + 1, d))
    states[0] = y0
    controls = np.zeros((K + 1, sys.control_dim)) if record_controls else None
    escaped_at = None

    def rhs_and_grad(y):
        _, g = comp.value_grad(theta, y)
        return sys.f(y) - (BBt @ g) / beta, g

    if record_controls:
        _, g0 = comp.value_grad(theta, y0)
        controls[0] = -(sys.B.T @ g0) / beta

    if np.max(np.abs(y0)) > l:
        return Trajectory(times, states, controls, escaped_at=0)

    eye = np.eye(d)
    Fk, _ = rhs_and_grad(y0)
    for k in range(K):
        yk = states[k]
        target = yk + 0.5 * h * Fk
        z = yk + h * Fk                      # explicit predictor
        tol = NEWTON_TOL * (1.0 + np.max(np.abs(yk)))
        converged = False
        Fz = gz = None
        # damped Newton: a trial step is evaluated at the top of the next
        # loop pass, so the common undamped path costs one model
        # evaluation and one Jacobian solve per iteration
        z_base = delta = None
        lam = 1.0
        prev_rnorm = np.inf
        for _ in range(NEWTON_MAX_ITER):
            if not np.all(np.isfinite(z)):
                break
            _, gz, Hz = comp.value_grad_hess(theta, z)
            Fz = sys.f(z) - (BBt @ gz) / beta
            res = z - target - 0.5 * h * Fz
            rnorm = np.max(np.abs(res))
            if rnorm <= tol:
                converged = True
                break
            if delta is not None and rnorm >= prev_rnorm and lam > 2.0**-6:
                lam *= 0.5                    # halve the last Newton step
                z = z_base + lam * delta
                continue
            J = eye - 0.5 * h * (sys.Df(z) - (BBt @ Hz) / beta)
            try:
                delta = np.linalg.solve(J, -res)
            except np.linalg.LinAlgError:
                break
            z_base, prev_rnorm, lam = z, rnorm, 1.0
            z = z + delta
        if not converged:
            z = yk + h * Fk
            for _ in range(FIXED_POINT_SWEEPS):
                if not np.all(np.isfinite(z)):
                    break
                _, gz = comp.value_grad(theta, z)
                Fz = sys.f(z) - (BBt @ gz) / beta
                z_new = target + 0.5 * h * Fz
                if np.max(np.abs(z_new - z)) <= tol:
                    z = z_new
                    _, gz = comp.value_grad(theta, z)
                    Fz = sys.f(z) - (BBt @ gz) / beta
                    converged = True
                    break
                z = z_new
        if not converged or not np.all(np.isfinite(z)) or np.max(np.abs(z)) > l:
            escaped_at = k + 1
            break
        states[k + 1] = z
        Fk = Fz                               # rhs at z from the last residual
        if record_controls:
            controls[k + 1] = -(sys.B.T @ gz) / beta

    return Trajectory(times, states, controls, escaped_at=escaped_at)


def integrate_linear(A, y0, T: float, h: float) -> Trajectory:
    """Crank-Nicolson for y' = A y with an exact linear solve per step."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    d = A.shape[0]
    times = _grid(T, h)
    K = len(times) - 1
    left = np.eye(d) - 0.5 * h * A
    right = np.eye(d) + 0.5 * h * A
    try:
        lu = scipy.linalg.lu_factor(left)
    except (ValueError, scipy.linalg.LinAlgError) as exc:
        raise StepSizeError(f"singular Crank-Nicolson step matrix: {exc}") from exc
    if abs(np.prod(np.diag(lu[0]))) < 1e-300:
        raise StepSizeError("singular Crank-Nicolson step matrix")
    states = np.zeros((K + 1, d))
    states[0] = np.asarray(y0, dtype=float)
    for k in range(K):
        states[k + 1] = scipy.linalg.lu_solve(lu, right @ states[k])
    return Trajectory(times, states)
