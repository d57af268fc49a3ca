"""Error measures comparing learned feedback rollouts to open-loop solves.

The headline numbers are normalized squared errors in L2(0, T): the
control error SSE_u, the state error SSE_y, and the squared relative
objective mismatch SSE_J, each summed over the surviving test points and
divided by the corresponding oracle magnitude.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlSystem, integrate_closed_loop
from .errors import PolyFeedbackError
from .model import PolynomialModel
from .objective import _rollout_costs
from .oracles import OpenLoopSolution


@dataclass
class EvaluationReport:
    sse_u: float
    sse_y: float
    sse_j: float
    pairs: np.ndarray             # (n, 2) columns (J_oracle, J_learned)
    slope: float
    intercept: float
    failures: int                 # escaped rollouts, excluded from the sums
    unstabilized: int             # escaped or |y(T)| above the threshold
    test_size: int

    @property
    def sse_u_percent(self) -> float:
        return 100.0 * self.sse_u

    @property
    def sse_y_percent(self) -> float:
        return 100.0 * self.sse_y

    @property
    def sse_j_percent(self) -> float:
        return 100.0 * self.sse_j

    def to_json(self) -> str:
        return json.dumps({"sse_u": self.sse_u, "sse_y": self.sse_y,
                           "sse_j": self.sse_j, "failures": self.failures,
                           "unstabilized": self.unstabilized,
                           "test_size": self.test_size,
                           "slope": self.slope, "intercept": self.intercept})

    def pairs_to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("J_oracle,J_learned\n")
        for a, b in self.pairs:
            buf.write(f"{a!r},{b!r}\n")
        return buf.getvalue()


def scatter_regression(pairs) -> tuple[float, float]:
    """Ordinary least squares of the second column on the first."""
    pairs = np.atleast_2d(np.asarray(pairs, dtype=float))
    if pairs.shape[0] < 2:
        raise PolyFeedbackError("regression needs at least two pairs")
    x, y = pairs[:, 0], pairs[:, 1]
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 0.0:
        raise PolyFeedbackError("regression abscissae are constant")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    return slope, intercept


def _ratio(num: float, den: float) -> float:
    if den > 0.0:
        return num / den
    return 0.0 if num == 0.0 else np.inf


def evaluate(model: PolynomialModel, sys: ControlSystem, test_points,
             oracle_solutions: list[OpenLoopSolution], T: float, h: float,
             stability_threshold: float = np.inf) -> EvaluationReport:
    """Roll out the feedback per test point and accumulate the SSE sums.

    Escaped rollouts contribute nothing to the sums and are counted as
    failures; points whose terminal state exceeds stability_threshold are
    additionally counted as unstabilized.
    """
    test_points = np.atleast_2d(np.asarray(test_points, dtype=float))
    if len(oracle_solutions) != test_points.shape[0]:
        raise PolyFeedbackError("one oracle solution per test point required")
    num_u = den_u = num_y = den_y = num_j = den_j = 0.0
    pairs = []
    failures = 0
    unstabilized = 0
    for y0, sol in zip(test_points, oracle_solutions):
        traj = integrate_closed_loop(sys, model, y0, T, h)
        if traj.escaped:
            failures += 1
            unstabilized += 1
            continue
        if not np.allclose(traj.times, sol.times):
            raise PolyFeedbackError("oracle and rollout time grids differ")
        if float(np.linalg.norm(traj.states[-1])) > stability_threshold:
            unstabilized += 1
        du = traj.controls - sol.controls
        dy = traj.states - sol.states
        num_u += np.trapezoid(np.sum(du * du, axis=1), dx=h)
        den_u += np.trapezoid(np.sum(sol.controls**2, axis=1), dx=h)
        num_y += np.trapezoid(np.sum(dy * dy, axis=1), dx=h)
        den_y += np.trapezoid(np.sum(sol.states**2, axis=1), dx=h)
        state_cost, control_cost = _rollout_costs(model, sys, traj)
        J_hat = state_cost + control_cost
        num_j += (sol.objective - J_hat) ** 2
        den_j += sol.objective**2
        pairs.append((sol.objective, J_hat))
    if not pairs:
        raise PolyFeedbackError("every test rollout escaped the box")
    pairs = np.array(pairs)
    try:
        slope, intercept = scatter_regression(pairs)
    except PolyFeedbackError:
        slope = intercept = float("nan")
    return EvaluationReport(
        sse_u=_ratio(num_u, den_u), sse_y=_ratio(num_y, den_y),
        sse_j=_ratio(num_j, den_j), pairs=pairs,
        slope=slope, intercept=intercept, failures=failures,
        unstabilized=unstabilized, test_size=test_points.shape[0])
