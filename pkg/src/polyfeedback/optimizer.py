"""Proximal point iteration with Barzilai-Borwein steps and backtracking.

Each iteration forms d = grad J + gamma (1 - r) theta, picks a trial step
by the parity-alternating Barzilai-Borwein rule, backtracks until the
sufficient-decrease condition holds, and applies the soft-thresholding
proximal update, either to all coordinates or to a single greedily chosen
one.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet
from .dynamics import ControlSystem
from .errors import InfeasibleInitialGuessError, StepFailureError
from .model import PolynomialModel
from .objective import (TrainingSet, cost as closed_loop_cost,
                        gradient_discrete as closed_loop_gradient, penalty)


@dataclass
class OptimizerConfig:
    gamma: float
    r: float
    kappa: float = 0.5
    beta_ls: float = 0.5
    max_iter: int = 2000
    gtol: float = 1e-6
    tol: float = 1e-10
    s_min: float = 1e-8
    s_max: float = 1e3
    s0: float = 1.0
    i_max: int = 40
    update_mode: str = "full"          # "full" | "greedy"
    greedy_scaled: bool = True         # scale the subgradient by gamma*r

    def __post_init__(self):
        if not (0.0 < self.kappa < 1.0):
            raise ValueError("kappa must lie in (0, 1)")
        if not (0.0 < self.beta_ls < 1.0):
            raise ValueError("beta_ls must lie in (0, 1)")
        if not (0.0 <= self.r <= 1.0):
            raise ValueError("r must lie in [0, 1]")
        if self.gamma < 0 or self.s0 <= 0 or self.s_min <= 0 or self.s_max < self.s_min:
            raise ValueError("invalid step or penalty configuration")
        if self.update_mode not in ("full", "greedy"):
            raise ValueError("update_mode must be 'full' or 'greedy'")


@dataclass
class OptimizerTrace:
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step: list = field(default_factory=list)
    support: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    stop_reason: str = ""

    def append(self, J, dnorm, s, supp, secs):
        self.objective.append(float(J))
        self.grad_norm.append(float(dnorm))
        self.step.append(float(s))
        self.support.append(int(supp))
        self.seconds.append(float(secs))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("iter,J,grad_norm,step,support,seconds\n")
        for k in range(len(self.objective)):
            buf.write(f"{k},{self.objective[k]!r},{self.grad_norm[k]!r},"
                      f"{self.step[k]!r},{self.support[k]},{self.seconds[k]!r}\n")
        return buf.getvalue()


def shrink(a: float, b: float) -> float:
    """Soft-thresholding: a-b if a-b>0, a+b if a+b<0, else 0."""
    if a - b > 0.0:
        return a - b
    if a + b < 0.0:
        return a + b
    return 0.0


def prox_update(theta, d, s: float, gamma_r: float, coord: int | None = None
                ) -> np.ndarray:
    """Soft-thresholded gradient step on all coordinates or a single one."""
    theta = np.asarray(theta, dtype=float)
    d = np.asarray(d, dtype=float)
    out = theta.copy()
    if coord is None:
        stepped = theta - s * d
        out = np.sign(stepped) * np.maximum(np.abs(stepped) - s * gamma_r, 0.0)
    else:
        out[coord] = shrink(theta[coord] - s * d[coord], s * gamma_r)
    return out


def greedy_coordinate(d, theta, gamma_r: float, scaled: bool = True) -> int:
    """Coordinate with the largest stationarity violation.

    The score is the distance of -d_j to the (optionally gamma*r scaled)
    subdifferential of the absolute value at theta_j; it vanishes exactly
    at coordinates satisfying the first-order optimality condition.
    """
    d = np.asarray(d, dtype=float)
    theta = np.asarray(theta, dtype=float)
    w = gamma_r if scaled else 1.0
    nonzero = theta != 0.0
    scores = np.where(nonzero,
                      np.abs(d + w * np.sign(theta)),
                      np.maximum(np.abs(d) - w, 0.0))
    return int(np.argmax(scores))


def greedy_score(d, theta, gamma_r: float) -> float:
    """Maximal stationarity violation (the greedy rule's best score)."""
    d = np.asarray(d, dtype=float)
    theta = np.asarray(theta, dtype=float)
    scores = np.where(theta != 0.0,
                      np.abs(d + gamma_r * np.sign(theta)),
                      np.maximum(np.abs(d) - gamma_r, 0.0))
    return float(np.max(scores)) if scores.size else 0.0


def bb_step(theta_k, theta_prev, d_k, d_prev, k: int,
            s_min: float = 1e-8, s_max: float = 1e3) -> float:
    """Parity-alternating Barzilai-Borwein step, clamped to [s_min, s_max].

    Falls back to the clamp midpoint when the curvature is non-positive
    or non-finite.
    """
    dtheta = np.asarray(theta_k, dtype=float) - np.asarray(theta_prev, dtype=float)
    dd = np.asarray(d_k, dtype=float) - np.asarray(d_prev, dtype=float)
    fallback = 0.5 * (s_min + s_max)
    curvature = float(dtheta @ dd)
    if k % 2 == 1:
        denom = float(dd @ dd)
        s = curvature / denom if denom > 0 else np.nan
    else:
        s = float(dtheta @ dtheta) / curvature if curvature > 0 else np.nan
    if not np.isfinite(s) or s <= 0:
        s = fallback
    return float(min(max(s, s_min), s_max))


def backtrack(cost_fn, theta, d, J_smooth: float, s0: float,
              kappa: float, beta_ls: float, gamma: float, r: float,
              coord: int | None = None, i_max: int = 40):
    """Shrink the step until the sufficient-decrease condition holds.

    Sufficient decrease is measured on the penalized objective
    F = cost + P_{gamma,r}: a proximal step may raise the smooth cost
    while the thresholding shrinks the penalty by more, and such steps
    must be accepted for the iteration to make progress.  Accepted steps
    satisfy F(theta+) <= F(theta) - (kappa/s)|theta+ - theta|^2, so the
    penalized objective decreases monotonically along the iterates.

    Returns (s, theta_plus, J_smooth_plus, zero_step).  A zero update after
    thresholding satisfies the condition with equality and is flagged so
    the caller can stop.  Candidates with infinite objective are rejected.
    Raises StepFailureError after i_max rejected trials.
    """
    s = float(s0)
    F = J_smooth + penalty(theta, gamma, r)
    for _ in range(i_max + 1):
        theta_plus = prox_update(theta, d, s, gamma * r, coord)
        diff = theta_plus - theta
        sq = float(diff @ diff)
        if sq == 0.0:
            return s, theta_plus, J_smooth, True
        J_plus = cost_fn(theta_plus)
        F_plus = J_plus + penalty(theta_plus, gamma, r)
        if np.isfinite(J_plus) and F_plus <= F - (kappa / s) * sq:
            return s, theta_plus, float(J_plus), False
        s *= beta_ls
    raise StepFailureError(
        f"backtracking exhausted {i_max} trials from initial step {s0}")


def minimize(cost_fn, grad_fn, theta0, cfg: OptimizerConfig
             ) -> tuple[np.ndarray, OptimizerTrace]:
    """Core proximal loop over a smooth objective given by callables.

    cost_fn(theta) returns the smooth objective (may be +inf); grad_fn
    returns its gradient.  The penalty is handled internally.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    gamma, r = cfg.gamma, cfg.r
    gamma_r = gamma * r
    trace = OptimizerTrace()
    t_start = time.perf_counter()

    J_smooth = float(cost_fn(theta))
    if not np.isfinite(J_smooth):
        raise InfeasibleInitialGuessError(
            "initial coefficients give an infinite objective; "
            "choose a different initial guess")
    d = grad_fn(theta) + gamma * (1.0 - r) * theta
    J_total = J_smooth + penalty(theta, gamma, r)
    trace.append(J_total, np.linalg.norm(d), 0.0,
                 np.count_nonzero(theta), time.perf_counter() - t_start)

    theta_prev, d_prev, J_prev = theta, d, J_total
    s0 = cfg.s0
    for k in range(1, cfg.max_iter + 1):
        if np.linalg.norm(d) <= cfg.gtol:
            trace.stop_reason = "gradient tolerance"
            break
        if k > 1:
            s0 = bb_step(theta, theta_prev, d, d_prev, k,
                         s_min=cfg.s_min, s_max=cfg.s_max)
        coord = None
        if cfg.update_mode == "greedy":
            coord = greedy_coordinate(d, theta, gamma_r, scaled=cfg.greedy_scaled)
        try:
            s, theta_new, J_smooth_new, zero_step = backtrack(
                cost_fn, theta, d, J_smooth, s0, cfg.kappa, cfg.beta_ls,
                gamma, r, coord=coord, i_max=cfg.i_max)
        except StepFailureError as exc:
            trace.stop_reason = f"step failure: {exc}"
            break
        if zero_step:
            trace.stop_reason = "zero proximal step"
            break
        theta_prev, d_prev, J_prev = theta, d, J_total
        theta, J_smooth = theta_new, J_smooth_new
        d = grad_fn(theta) + gamma * (1.0 - r) * theta
        J_total = J_smooth + penalty(theta, gamma, r)
        trace.append(J_total, np.linalg.norm(d), s,
                     np.count_nonzero(theta), time.perf_counter() - t_start)
        if abs(J_total - J_prev) <= cfg.tol:
            trace.stop_reason = "objective stagnation"
            break
    else:
        trace.stop_reason = "max iterations"
    return theta, trace


class _CachedObjective:
    """Memoizes closed-loop cost reports so accepted backtracking
    candidates do not trigger a second forward solve in the gradient."""

    def __init__(self, sys: ControlSystem, train: TrainingSet,
                 basis: BasisSet, scale: float, cache_size: int = 8):
        self.sys = sys
        self.train = train
        self.template = PolynomialModel(basis, np.zeros(len(basis)), scale)
        self.cache: dict[bytes, object] = {}
        self.cache_size = cache_size

    def _report(self, theta: np.ndarray):
        key = theta.tobytes()
        report = self.cache.get(key)
        if report is None:
            report = closed_loop_cost(self.template.with_theta(theta),
                                      self.sys, self.train)
            if len(self.cache) >= self.cache_size:
                self.cache.pop(next(iter(self.cache)))
            self.cache[key] = report
        return report

    def cost(self, theta) -> float:
        return self._report(np.asarray(theta, dtype=float)).value

    def grad(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        report = self._report(theta)
        g, _ = closed_loop_gradient(self.template.with_theta(theta),
                                    self.sys, self.train, report=report)
        return g


def run(sys: ControlSystem, train: TrainingSet, basis: BasisSet,
        theta0, cfg: OptimizerConfig, scale: float | None = None
        ) -> tuple[np.ndarray, OptimizerTrace]:
    """Learn coefficients for the closed-loop objective on the given basis."""
    scale = sys.box_halfwidth if scale is None else scale
    obj = _CachedObjective(sys, train, basis, scale)
    return minimize(obj.cost, obj.grad, theta0, cfg)
