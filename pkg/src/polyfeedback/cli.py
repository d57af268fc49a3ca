"""Experiment runner: JSON configs in, JSON artifacts and CSV tables out.

Commands:
    run <config.json>                train and evaluate per the config
    replay <artifact.json> [--seed S --count N]
                                     re-evaluate a stored model
    benchmarks list                  show available benchmark names

Exit codes: 0 success, 2 configuration or artifact error, 3 infeasible
initial guess.
"""

from __future__ import annotations

import argparse
import json
import os
import sys as _sys
from dataclasses import dataclass, field

import numpy as np

from .basis import (BasisSet, KIND_HYPERBOLIC_CROSS, KIND_TOTAL_DEGREE,
                    hyperbolic_cross_indices, reduce_basis, strip_low_order,
                    total_degree_indices)
from .benchmarks import (BenchmarkSpec, REGISTRY, make_benchmark,
                         sample_initial_conditions)
from .dynamics import integrate_closed_loop
from .errors import (ArtifactError, ConfigError, InfeasibleInitialGuessError,
                     PolyFeedbackError)
from .metrics import EvaluationReport, evaluate
from .model import PolynomialModel
from .objective import TrainingSet
from .optimizer import OptimizerConfig, OptimizerTrace, run as optimize
from .oracles import open_loop_solve, riccati_reference, solve_are

ARTIFACT_FORMAT = "polyfeedback/1"

_CONFIG_KEYS = {
    "benchmark", "degree", "basis_kind", "gamma", "r", "horizon", "step",
    "training_size", "test_size", "seed", "optimizer", "initial_guess",
    "oracle", "oracle_tol", "oracle_max_iter", "stability_threshold",
    "output_dir", "threads",
}
_OPTIMIZER_KEYS = {
    "max_iter", "gtol", "tol", "kappa", "beta_ls", "s0", "s_min", "s_max",
    "i_max", "update_mode", "greedy_scaled",
}
_DEGREE_BENCHMARKS = {"vanderpol", "allen_cahn"}


@dataclass
class ExperimentConfig:
    """Validated experiment description; unknown keys are rejected."""

    benchmark: str
    degree: int | None = None
    basis_kind: str | None = None
    gamma: float | list | None = None
    r: float | None = None
    horizon: float | None = None
    step: float | None = None
    training_size: list = field(default_factory=list)   # empty: full pool
    test_size: int | None = None
    seed: int | None = None
    optimizer: dict = field(default_factory=dict)
    initial_guess: str | dict = "analytic"
    oracle: str | None = None
    oracle_tol: float = 1e-6
    oracle_max_iter: int = 2000
    stability_threshold: float = float("inf")
    output_dir: str | None = None
    threads: int | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "benchmark" not in raw:
            raise ConfigError("config needs a 'benchmark' key")
        name = raw["benchmark"]
        if name not in REGISTRY:
            raise ConfigError(f"unknown benchmark '{name}'; "
                              f"choose from {sorted(REGISTRY)}")
        cfg = cls(benchmark=name)
        for key, value in raw.items():
            if key == "training_size":
                value = [value] if isinstance(value, int) else list(value)
                if not value or any(not isinstance(v, int) or v < 1
                                    for v in value):
                    raise ConfigError("training_size must be a positive "
                                      "integer or a list of them")
            setattr(cfg, key, value)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self):
        if self.degree is not None and self.benchmark not in _DEGREE_BENCHMARKS:
            raise ConfigError(
                f"benchmark '{self.benchmark}' has a fixed basis degree")
        if self.basis_kind is not None and self.basis_kind not in (
                KIND_TOTAL_DEGREE, KIND_HYPERBOLIC_CROSS):
            raise ConfigError(f"unknown basis kind '{self.basis_kind}'")
        if isinstance(self.gamma, list):
            if len(self.gamma) < 1 or any(
                    b >= a for a, b in zip(self.gamma, self.gamma[1:])):
                raise ConfigError("gamma ladder must be strictly decreasing")
        unknown = set(self.optimizer) - _OPTIMIZER_KEYS
        if unknown:
            raise ConfigError(f"unknown optimizer keys: {sorted(unknown)}")
        if self.oracle is not None and self.oracle not in (
                "open_loop", "riccati"):
            raise ConfigError(f"unknown oracle '{self.oracle}'")
        if isinstance(self.initial_guess, dict):
            if set(self.initial_guess) != {"warm_start_from"}:
                raise ConfigError(
                    "initial_guess object must be {'warm_start_from': path}")
        elif self.initial_guess not in ("zero", "analytic"):
            raise ConfigError(f"unknown initial guess '{self.initial_guess}'")
        if self.test_size is not None and self.test_size < 1:
            raise ConfigError("test_size must be positive")

    def to_dict(self) -> dict:
        out = {"benchmark": self.benchmark}
        for key in sorted(_CONFIG_KEYS - {"benchmark"}):
            default = ExperimentConfig(benchmark=self.benchmark)
            value = getattr(self, key)
            if value != getattr(default, key):
                out[key] = value
        return out


def build_spec(config: ExperimentConfig) -> BenchmarkSpec:
    """Construct the benchmark and apply the config's overrides."""
    kwargs = {"check": False}
    if config.degree is not None:
        kwargs["degree"] = config.degree
    spec = make_benchmark(config.benchmark, **kwargs)
    if config.basis_kind is not None and config.basis_kind != spec.basis.kind:
        maker = (total_degree_indices
                 if config.basis_kind == KIND_TOTAL_DEGREE
                 else hyperbolic_cross_indices)
        raw = maker(spec.system.dim, spec.basis.degree)
        basis = reduce_basis(strip_low_order(raw), spec.system.B)
        theta0 = np.zeros(len(basis))
        for pos, alpha in enumerate(spec.basis.indices):
            if alpha in basis and spec.initial_theta[pos] != 0.0:
                theta0[basis.position(alpha)] = spec.initial_theta[pos]
        spec.basis = basis
        spec.initial_theta = theta0
    if config.gamma is not None:
        spec.gamma = (tuple(config.gamma) if isinstance(config.gamma, list)
                      else float(config.gamma))
    if config.r is not None:
        spec.r = config.r
    if config.horizon is not None:
        spec.horizon = config.horizon
    if config.step is not None:
        spec.step = config.step
    if config.test_size is not None:
        spec.test_size = config.test_size
    if config.seed is not None:
        spec.seed = config.seed
    if "update_mode" in config.optimizer:
        spec.update_mode = config.optimizer["update_mode"]
    return spec


def inject_coefficients(src_basis: BasisSet, src_theta: np.ndarray,
                        dst_basis: BasisSet) -> np.ndarray:
    """Copy coefficients of shared multi-indices; new entries are zero."""
    theta = np.zeros(len(dst_basis))
    for pos, alpha in enumerate(src_basis.indices):
        if alpha in dst_basis:
            theta[dst_basis.position(alpha)] = src_theta[pos]
    return theta


def initial_theta(spec: BenchmarkSpec, config: ExperimentConfig) -> np.ndarray:
    if config.initial_guess == "zero":
        return np.zeros(len(spec.basis))
    if config.initial_guess == "analytic":
        return spec.initial_theta.copy()
    artifact = RunArtifact.load(config.initial_guess["warm_start_from"])
    if artifact.benchmark != spec.name:
        raise ConfigError(
            f"warm-start artifact is for benchmark '{artifact.benchmark}', "
            f"config asks for '{spec.name}'")
    if artifact.basis.dim != spec.basis.dim:
        raise ConfigError("warm-start artifact has a different state dimension")
    return inject_coefficients(artifact.basis, artifact.theta, spec.basis)


def train(spec: BenchmarkSpec, config: ExperimentConfig, theta0: np.ndarray,
          train_points: np.ndarray
          ) -> tuple[np.ndarray, list[OptimizerTrace], list[tuple]]:
    """Optimize, warm-starting through the gamma ladder when one is set."""
    gammas = (list(spec.gamma) if isinstance(spec.gamma, (tuple, list))
              else [spec.gamma])
    opts = {k: v for k, v in config.optimizer.items() if k != "update_mode"}
    training = TrainingSet(train_points, spec.horizon, spec.step)
    theta = np.asarray(theta0, dtype=float).copy()
    traces = []
    gamma_supports = []
    for g in gammas:
        cfg = OptimizerConfig(gamma=g, r=spec.r, update_mode=spec.update_mode,
                              **opts)
        theta, trace = optimize(spec.system, training, spec.basis, theta, cfg,
                                scale=spec.scale)
        traces.append(trace)
        gamma_supports.append((g, int(np.count_nonzero(theta))))
    return theta, traces, gamma_supports


def _quadratic_state_weight(spec: BenchmarkSpec) -> np.ndarray:
    """Hessian of the running cost at the origin, by central differences."""
    d = spec.system.dim
    Q = np.zeros((d, d))
    eps = 1e-6
    for i in range(d):
        e = np.zeros(d)
        e[i] = eps
        Q[i] = (spec.system.running_cost_grad(e)
                - spec.system.running_cost_grad(-e)) / (2.0 * eps)
    return 0.5 * (Q + Q.T)


def oracle_solutions(spec: BenchmarkSpec, model: PolynomialModel | None,
                     points: np.ndarray, kind: str,
                     tol: float = 1e-6, max_iter: int = 2000) -> list:
    """Reference solutions per test point.

    'riccati' integrates the linear-quadratic feedback (valid only for
    linear dynamics); 'open_loop' runs the descent solver, warm-started
    from the learned rollout when a model is given.
    """
    sys = spec.system
    if kind == "riccati":
        A = sys.Df(np.zeros(sys.dim))
        ricc = solve_are(A, sys.B, _quadratic_state_weight(spec), sys.beta)
        return [riccati_reference(sys, ricc, y0, spec.horizon, spec.step)
                for y0 in points]
    sols = []
    for y0 in points:
        u0 = None
        if model is not None:
            traj = integrate_closed_loop(sys, model, y0, spec.horizon,
                                         spec.step)
            if not traj.escaped:
                u0 = traj.controls
        try:
            sol = open_loop_solve(sys, y0, spec.horizon, spec.step, tol=tol,
                                  max_iter=max_iter, u0=u0)
        except PolyFeedbackError:
            if u0 is None:
                raise
            sol = open_loop_solve(sys, y0, spec.horizon, spec.step, tol=tol,
                                  max_iter=max_iter)
        sols.append(sol)
    return sols


@dataclass
class RunArtifact:
    """Everything needed to reuse or re-evaluate a finished run."""

    benchmark: str
    basis: BasisSet
    scale: float
    theta: np.ndarray
    traces: list[OptimizerTrace]
    gamma_supports: list
    evaluation: dict | None
    config: dict
    training_size: int

    def to_json(self) -> str:
        traces = [{"objective": t.objective, "grad_norm": t.grad_norm,
                   "step": t.step, "support": t.support,
                   "seconds": t.seconds, "stop_reason": t.stop_reason}
                  for t in self.traces]
        return json.dumps({
            "format": ARTIFACT_FORMAT,
            "benchmark": self.benchmark,
            "basis": self.basis.to_text(),
            "scale": self.scale,
            "theta": [float(t) for t in self.theta],
            "theta_hex": [float(t).hex() for t in self.theta],
            "traces": traces,
            "gamma_supports": [[g, s] for g, s in self.gamma_supports],
            "evaluation": self.evaluation,
            "config": self.config,
            "training_size": self.training_size,
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "RunArtifact":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"artifact is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict) or raw.get("format") != ARTIFACT_FORMAT:
            raise ArtifactError(
                f"not a {ARTIFACT_FORMAT} artifact (format tag missing or "
                "unsupported)")
        try:
            basis = BasisSet.from_text(raw["basis"])
            theta = np.array([float.fromhex(t) for t in raw["theta_hex"]])
            traces = []
            for t in raw["traces"]:
                trace = OptimizerTrace(
                    objective=t["objective"], grad_norm=t["grad_norm"],
                    step=t["step"], support=t["support"],
                    seconds=t["seconds"], stop_reason=t["stop_reason"])
                traces.append(trace)
            return cls(benchmark=raw["benchmark"], basis=basis,
                       scale=raw["scale"], theta=theta, traces=traces,
                       gamma_supports=[tuple(g) for g in raw["gamma_supports"]],
                       evaluation=raw["evaluation"], config=raw["config"],
                       training_size=raw["training_size"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ArtifactError(f"corrupt artifact: {exc}") from exc

    def save(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path: str) -> "RunArtifact":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ArtifactError(f"cannot read artifact: {exc}") from exc
        return cls.from_json(text)

    def model(self) -> PolynomialModel:
        return PolynomialModel(self.basis, self.theta.copy(), self.scale)


def _evaluation_dict(report: EvaluationReport) -> dict:
    return {"sse_u": report.sse_u, "sse_y": report.sse_y,
            "sse_j": report.sse_j, "failures": report.failures,
            "unstabilized": report.unstabilized,
            "test_size": report.test_size,
            "slope": report.slope, "intercept": report.intercept,
            "pairs": [[float(a), float(b)] for a, b in report.pairs]}


def run_experiment(config: ExperimentConfig,
                   write_files: bool = True) -> RunArtifact:
    """Train on each requested training size and evaluate the results.

    Writes one artifact per size plus summary CSVs into the output
    directory; returns the artifact of the last (largest) size.
    """
    _cap_threads(config.threads)
    spec = build_spec(config)
    sizes = config.training_size or [spec.training_pool]
    if max(sizes) > spec.training_pool:
        spec.training_pool = max(sizes)
    pool = spec.training_points()
    test_pts = spec.test_points()
    theta0 = initial_theta(spec, config)
    oracle_kind = config.oracle or (
        "riccati" if spec.name == "lc_circuit" else "open_loop")

    out_dir = config.output_dir or os.path.join("runs", spec.name)
    if write_files:
        os.makedirs(out_dir, exist_ok=True)

    table_rows = []
    artifact = None
    for size in sizes:
        theta, traces, gamma_supports = train(spec, config, theta0,
                                              pool[:size])
        model = PolynomialModel(spec.basis, theta, spec.scale)
        sols = oracle_solutions(spec, model, test_pts, oracle_kind,
                                tol=config.oracle_tol,
                                max_iter=config.oracle_max_iter)
        report = evaluate(model, spec.system, test_pts, sols, spec.horizon,
                          spec.step,
                          stability_threshold=config.stability_threshold)
        artifact = RunArtifact(
            benchmark=spec.name, basis=spec.basis, scale=spec.scale,
            theta=theta, traces=traces, gamma_supports=gamma_supports,
            evaluation=_evaluation_dict(report), config=config.to_dict(),
            training_size=size)
        table_rows.append((size, report.sse_u_percent, report.sse_y_percent,
                           report.sse_j_percent, report.failures))
        if write_files:
            artifact.save(os.path.join(out_dir, f"artifact_size{size}.json"))
            for j, trace in enumerate(traces):
                name = (f"trace_size{size}.csv" if len(traces) == 1
                        else f"trace_size{size}_gamma{j}.csv")
                with open(os.path.join(out_dir, name), "w") as fh:
                    fh.write(trace.to_csv())
            with open(os.path.join(out_dir, f"pairs_size{size}.csv"),
                      "w") as fh:
                fh.write(report.pairs_to_csv())
            for i, y0 in enumerate(test_pts[:3]):
                traj = integrate_closed_loop(spec.system, model, y0,
                                             spec.horizon, spec.step)
                path = os.path.join(out_dir,
                                    f"trajectory_size{size}_{i}.csv")
                with open(path, "w") as fh:
                    fh.write(traj.to_csv())

    if write_files:
        with open(os.path.join(out_dir, "table.csv"), "w") as fh:
            fh.write("training_size,sse_u_percent,sse_y_percent,"
                     "sse_j_percent,failures\n")
            for row in table_rows:
                fh.write(",".join(repr(v) for v in row) + "\n")
        if artifact.gamma_supports and len(artifact.gamma_supports) > 1:
            with open(os.path.join(out_dir, "gamma_supports.csv"), "w") as fh:
                fh.write("gamma,support\n")
                for g, s in artifact.gamma_supports:
                    fh.write(f"{g!r},{s}\n")
    return artifact


def replay(artifact_path: str, seed: int | None = None,
           count: int | None = None) -> EvaluationReport:
    """Re-evaluate a stored model on a fresh test set without retraining."""
    artifact = RunArtifact.load(artifact_path)
    config = ExperimentConfig.from_dict(artifact.config)
    spec = build_spec(config)
    if count is None:
        count = spec.test_size
    if count < 1:
        raise ConfigError("replay needs at least one test point")
    model = artifact.model()
    points = sample_initial_conditions(
        spec, count, spec.seed + 1 if seed is None else seed)
    oracle_kind = config.oracle or (
        "riccati" if spec.name == "lc_circuit" else "open_loop")
    sols = oracle_solutions(spec, model, points, oracle_kind,
                            tol=config.oracle_tol,
                            max_iter=config.oracle_max_iter)
    return evaluate(model, spec.system, points, sols, spec.horizon,
                    spec.step,
                    stability_threshold=config.stability_threshold)


def _cap_threads(threads: int | None):
    if threads is None:
        return
    if threads < 1:
        raise ConfigError("threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(threads))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyfeedback",
        description="Learn sparse polynomial feedback laws and compare them "
                    "to optimal-control oracles.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config", help="path to the config file")
    p_run.add_argument("--threads", type=int, default=None,
                       help="cap the worker thread count")
    p_replay = sub.add_parser("replay",
                              help="re-evaluate a stored artifact")
    p_replay.add_argument("artifact", help="path to the artifact file")
    p_replay.add_argument("--seed", type=int, default=None)
    p_replay.add_argument("--count", type=int, default=None)
    p_bench = sub.add_parser("benchmarks", help="benchmark utilities")
    p_bench.add_argument("action", choices=["list"])
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            try:
                with open(args.config) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
            config = ExperimentConfig.from_json(text)
            if args.threads is not None:
                config.threads = args.threads
            artifact = run_experiment(config)
            ev = artifact.evaluation
            print(f"benchmark={artifact.benchmark} "
                  f"training_size={artifact.training_size} "
                  f"support={int(np.count_nonzero(artifact.theta))} "
                  f"sse_u={100 * ev['sse_u']:.4f}% "
                  f"sse_y={100 * ev['sse_y']:.4f}% "
                  f"sse_j={100 * ev['sse_j']:.4f}% "
                  f"failures={ev['failures']}")
        elif args.command == "replay":
            report = replay(args.artifact, seed=args.seed, count=args.count)
            print(report.to_json())
        elif args.command == "benchmarks":
            for name in sorted(REGISTRY):
                print(name)
    except (ConfigError, ArtifactError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2
    except InfeasibleInitialGuessError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
