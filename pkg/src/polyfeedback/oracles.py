"""Reference solutions: algebraic Riccati synthesis and open-loop solves.

Both oracles price the cost J(u, y0) = int l(y) + (beta/2)|u|^2 dt.  For
the linear-quadratic case with l(y) = (1/2) y^T Q y the value function is
(1/2) y^T P y with P solving A^T P + P A - (1/beta) P B B^T P + Q = 0 and
the optimal feedback is u = -(1/beta) B^T P y.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlSystem
from .errors import PolyFeedbackError, StabilizationError

OPEN_LOOP_SAFETY_FACTOR = 10.0


@dataclass
class RiccatiSolution:
    P: np.ndarray
    gain: np.ndarray          # K = (1/beta) B^T P
    residual: float
    closed_loop_spectral_abscissa: float

    def value(self, y0) -> float:
        """Optimal cost (1/2) y0^T P y0."""
        y0 = np.asarray(y0, dtype=float)
        return 0.5 * float(y0 @ self.P @ y0)


def _lyapunov_transpose(Ac: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve Ac^T P + P Ac = rhs by a dense Kronecker linear solve."""
    d = Ac.shape[0]
    eye = np.eye(d)
    lhs = np.kron(eye, Ac.T) + np.kron(Ac.T, eye)
    P = np.linalg.solve(lhs, rhs.flatten(order="F")).reshape((d, d), order="F")
    return 0.5 * (P + P.T)


def _bass_stabilizing_gain(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Initial stabilizing feedback from a shifted Lyapunov equation."""
    d = A.shape[0]
    eigs = np.linalg.eigvals(A)
    sigma = 1.0 + max(0.0, float(np.max(np.abs(eigs.real))))
    M = A + sigma * np.eye(d)
    eye = np.eye(d)
    lhs = np.kron(eye, M) + np.kron(M, eye)
    rhs = 2.0 * (B @ B.T)
    try:
        W = np.linalg.solve(lhs, rhs.flatten(order="F")).reshape((d, d), order="F")
        W = 0.5 * (W + W.T)
        K = np.linalg.solve(W, B).T
    except np.linalg.LinAlgError as exc:
        raise StabilizationError(
            f"shifted Lyapunov stabilization failed: {exc}") from exc
    if np.max(np.linalg.eigvals(A - B @ K).real) >= 0:
        raise StabilizationError(
            "no stabilizing initialization found (shifted Lyapunov feedback "
            "does not stabilize; is (A, B) stabilizable?)")
    return K


def solve_are(A, B, Q, beta: float, residual_tol: float = 1e-10,
              max_iter: int = 60) -> RiccatiSolution:
    """Newton-Kleinman iteration for the algebraic Riccati equation."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    d = A.shape[0]

    if np.max(np.linalg.eigvals(A).real) < 0:
        K = np.zeros((B.shape[1], d))
    else:
        K = _bass_stabilizing_gain(A, B)

    def residual_of(P):
        # measured relative to the size of P so that badly scaled
        # problems are judged against an attainable target
        R = A.T @ P + P @ A - (P @ B @ B.T @ P) / beta + Q
        return float(np.max(np.abs(R)) / max(1.0, np.max(np.abs(P))))

    P = np.zeros((d, d))
    best = np.inf
    stagnant = 0
    for _ in range(max_iter):
        Ac = A - B @ K
        P = _lyapunov_transpose(Ac, -(Q + beta * K.T @ K))
        K = (B.T @ P) / beta
        res = residual_of(P)
        if res <= residual_tol:
            abscissa = float(np.max(np.linalg.eigvals(A - B @ K).real))
            return RiccatiSolution(P=P, gain=K, residual=res,
                                   closed_loop_spectral_abscissa=abscissa)
        if res >= 0.5 * best:
            stagnant += 1
            if stagnant >= 5:
                raise PolyFeedbackError(
                    f"Riccati residual stagnated at {res:.3e} "
                    f"(tolerance {residual_tol:.1e})")
        else:
            stagnant = 0
            best = res
    raise PolyFeedbackError(
        f"Riccati iteration did not reach residual {residual_tol:.1e}; "
        f"last residual {res:.3e}")


@dataclass
class OpenLoopSolution:
    times: np.ndarray
    controls: np.ndarray      # (K+1, m)
    states: np.ndarray        # (K+1, d)
    objective: float
    gradient_norm: float
    iterations: int
    converged: bool

    def to_csv(self) -> str:
        m = self.controls.shape[1]
        d = self.states.shape[1]
        header = ("t," + ",".join(f"u{i + 1}" for i in range(m))
                  + "," + ",".join(f"y{i + 1}" for i in range(d)))
        buf = io.StringIO()
        np.savetxt(buf, np.hstack([self.times[:, None], self.controls,
                                   self.states]),
                   delimiter=",", header=header, comments="")
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps({"J": self.objective, "iterations": self.iterations,
                           "converged": self.converged})


def riccati_reference(sys: ControlSystem, ricc: RiccatiSolution, y0,
                      T: float, h: float) -> OpenLoopSolution:
    """Reference rollout of the Riccati feedback for a linear system.

    Integrates y' = (A - B K) y with Crank-Nicolson, records u = -K y, and
    prices the trajectory with the same trapezoid quadrature used for the
    learned rollouts, so that discretization errors cancel in comparisons.
    """
    from .dynamics import integrate_linear
    A = sys.Df(np.zeros(sys.dim))
    K_gain = ricc.gain
    traj = integrate_linear(A - sys.B @ K_gain, y0, T, h)
    Y = traj.states
    U = -Y @ K_gain.T
    J = _open_loop_objective(sys, Y, U, h)
    return OpenLoopSolution(times=traj.times, controls=U, states=Y,
                            objective=J, gradient_norm=0.0, iterations=0,
                            converged=True)


def _forward_controlled(sys: ControlSystem, y0, u: np.ndarray, h: float,
                        safety: float) -> np.ndarray | None:
    """Crank-Nicolson solve of y' = f(y) + B u; None if the state leaves
    the safety box or a step cannot be solved."""
    K = u.shape[0] - 1
    d = sys.dim
    Y = np.zeros((K + 1, d))
    Y[0] = y0
    eye = np.eye(d)
    Bu = u @ sys.B.T                      # (K+1, d)
    fk = sys.f(Y[0])
    for k in range(K):
        yk = Y[k]
        target = yk + 0.5 * h * (fk + Bu[k] + Bu[k + 1])
        z = yk + h * (fk + Bu[k])
        converged = False
        for _ in range(25):
            if not np.all(np.isfinite(z)):
                break
            fz = sys.f(z)
            res = z - target - 0.5 * h * fz
            if np.max(np.abs(res)) <= 1e-11 * (1.0 + np.max(np.abs(yk))):
                converged = True
                break
            J = eye - 0.5 * h * sys.Df(z)
            try:
                z = z + np.linalg.solve(J, -res)
            except np.linalg.LinAlgError:
                break
        if not converged or not np.all(np.isfinite(z)) \
                or np.max(np.abs(z)) > safety:
            return None
        Y[k + 1] = z
        fk = sys.f(z)
    return Y


def _open_loop_objective(sys: ControlSystem, Y: np.ndarray, u: np.ndarray,
                         h: float) -> float:
    lvals = np.array([sys.running_cost(y) for y in Y])
    uvals = 0.5 * sys.beta * np.sum(u * u, axis=1)
    return float(np.trapezoid(lvals + uvals, dx=h))


def _open_loop_gradient(sys: ControlSystem, Y: np.ndarray, u: np.ndarray,
                        h: float) -> np.ndarray:
    """Exact gradient of the discrete objective via the discrete adjoint.

    The trapezoid cost and the Crank-Nicolson constraint are differentiated
    as written, so the returned array is the machine-accurate gradient of
    _open_loop_objective with respect to u, up to the row scaling h w_k
    (w = trapezoid weights) which is divided out so entries approximate
    the continuous gradient beta u + B^T p.
    """
    K = Y.shape[0] - 1
    d = sys.dim
    eye = np.eye(d)
    gl = np.array([sys.running_cost_grad(y) for y in Y])
    lam = np.zeros((K, d))
    DfT = sys.Df(Y[K]).T
    lam[K - 1] = np.linalg.solve(eye - 0.5 * h * DfT, -0.5 * h * gl[K])
    for j in range(K - 1, 0, -1):
        DfT = sys.Df(Y[j]).T
        rhs = (eye + 0.5 * h * DfT) @ lam[j] - h * gl[j]
        lam[j - 1] = np.linalg.solve(eye - 0.5 * h * DfT, rhs)
    G = sys.beta * u.copy()
    G[0] -= lam[0] @ sys.B
    G[1:K] -= 0.5 * (lam[:-1] + lam[1:]) @ sys.B
    G[K] -= lam[K - 1] @ sys.B
    return G


class _OpenLoopConverged(Exception):
    """Internal signal: the gradient tolerance was met mid-optimization."""


def open_loop_solve(sys: ControlSystem, y0, T: float, h: float,
                    tol: float = 1e-6, max_iter: int = 2000,
                    u0: np.ndarray | None = None) -> OpenLoopSolution:
    """Open-loop optimal control by L-BFGS on the discretized problem.

    The control is discretized on the integration grid and the cost
    gradient comes from the exact discrete adjoint, so quasi-Newton steps
    see a consistent objective/gradient pair even at small beta, where
    the problem is badly conditioned and plain gradient descent crawls.
    Convergence is declared when max_k |beta u_k + B^T p_k| <= tol.
    """
    import scipy.optimize

    Kn = int(round(T / h))
    times = np.linspace(0.0, T, Kn + 1)
    y0 = np.asarray(y0, dtype=float)
    safety = OPEN_LOOP_SAFETY_FACTOR * sys.box_halfwidth
    m = sys.control_dim
    u = np.zeros((Kn + 1, m)) if u0 is None \
        else np.asarray(u0, dtype=float).copy()

    if _forward_controlled(sys, y0, u, h, safety) is None:
        raise PolyFeedbackError(
            "open-loop state escaped the safety box for the initial control; "
            "provide a warm start")

    # true gradient entries are h w_k G_k with w the trapezoid weights
    omega = np.full((Kn + 1, 1), h)
    omega[0] = omega[Kn] = 0.5 * h

    best = {"J": np.inf, "u": None, "Y": None, "gnorm": np.inf}

    def fun(x):
        u_ = x.reshape(Kn + 1, m)
        Y_ = _forward_controlled(sys, y0, u_, h, safety)
        if Y_ is None:
            # infeasible trial: huge value makes the line search back off
            return 1e19, np.zeros_like(x)
        J_ = _open_loop_objective(sys, Y_, u_, h)
        G_ = _open_loop_gradient(sys, Y_, u_, h)
        gnorm = float(np.max(np.abs(G_)))
        if J_ < best["J"]:
            best.update(J=J_, u=u_.copy(), Y=Y_, gnorm=gnorm)
        if gnorm <= tol:
            best.update(J=J_, u=u_.copy(), Y=Y_, gnorm=gnorm)
            raise _OpenLoopConverged
        return J_, (omega * G_).ravel()

    seen = {"iters": 0}

    def count(_xk):
        seen["iters"] += 1

    iterations = 0
    converged = False
    try:
        res = scipy.optimize.minimize(
            fun, u.ravel(), jac=True, method="L-BFGS-B", callback=count,
            options={"maxiter": max_iter, "maxfun": 20 * max_iter,
                     "ftol": 0.0, "gtol": 0.0, "maxls": 60})
        iterations = int(res.nit)
    except _OpenLoopConverged:
        converged = True
        iterations = seen["iters"]
    if best["u"] is None:
        raise PolyFeedbackError("open-loop solve made no feasible progress")
    converged = converged or best["gnorm"] <= tol
    return OpenLoopSolution(times, best["u"], best["Y"], best["J"],
                            best["gnorm"], iterations, converged)
