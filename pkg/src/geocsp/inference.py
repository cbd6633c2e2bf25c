"""Test-time execution: batched prediction, resampling, traces, oracles.

Resampling reruns inference with fresh random initializations and keeps, per
problem, the run whose decoded assignment satisfies the most constraints
(exact integer check; ties go to the lowest resample index).  The
best-iteration oracle uses labels to pick, per problem, the earliest
iteration with the most correctly placed points, up to a 50-iteration cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import Point, check_constraint, index_to_point
from .model import BatchGraph, ModelParams, build_batch_graph, forward, init_state
from .solver import Problem

ORACLE_CAP = 50


@dataclass
class InferenceConfig:
    iterations: int = 15
    resamples: int = 1
    trace: bool = False
    seed: int = 0
    batch_size: int = 128

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.resamples < 1:
            raise ConfigError("resamples must be at least 1")


@dataclass
class ProblemTrace:
    """Per-iteration decodes (length iterations + 1, including the initial
    decode) plus exact constraint-satisfaction flags for each decode."""

    decoded_points: list[dict[str, Point]]
    satisfied: list[list[bool]]
    final_hidden: np.ndarray | None = None

    def satisfied_counts(self) -> list[int]:
        return [sum(flags) for flags in self.satisfied]


@dataclass
class ProblemPrediction:
    points: dict[str, Point]
    resample_index: int
    satisfied_constraints: int
    correct_points: int | None = None
    total_points: int = 0
    solved: bool | None = None
    trace: ProblemTrace | None = None


def problem_stream(seed: int, problem_index: int, resample: int) -> np.random.Generator:
    """Initialization stream for one (problem, resample) pair; independent of
    batch composition so batched and single runs decode identically."""
    return np.random.default_rng(np.random.SeedSequence([seed, problem_index, resample]))


def _decoded_assignment(problem: Problem, names: tuple[str, ...], indices: np.ndarray) -> dict[str, Point]:
    n = problem.grid_side
    return {v: index_to_point(int(k), n) for v, k in zip(names, indices)}


def _satisfaction(problem: Problem, decoded: dict[str, Point]) -> list[bool]:
    assignment = {**problem.fixed, **decoded}
    return [check_constraint(c, assignment) for c in problem.constraints]


def _correct_count(problem: Problem, decoded: dict[str, Point]) -> int:
    return sum(1 for v, p in decoded.items() if problem.labels.get(v) == p)


def run_dataset(
    problems: list[Problem],
    params: ModelParams,
    cfg: InferenceConfig,
    *,
    iterations: int | None = None,
    collect_constraint_states: bool = False,
) -> list[ProblemPrediction]:
    """Predict every problem; returns one selected prediction per problem."""
    iterations = cfg.iterations if iterations is None else iterations
    results: list[ProblemPrediction | None] = [None] * len(problems)
    for start in range(0, len(problems), cfg.batch_size):
        batch = problems[start : start + cfg.batch_size]
        graph = build_batch_graph(batch, require_labels=False)
        candidates: list[list[ProblemPrediction]] = [[] for _ in batch]
        for r in range(cfg.resamples):
            rngs = [problem_stream(cfg.seed, start + bi, r) for bi in range(len(batch))]
            state = init_state(graph, params.dim, rngs)
            out = forward(
                graph,
                params,
                state,
                iterations,
                record_trace=cfg.trace,
                record_constraint_states=collect_constraint_states,
            )
            final = out.predictions()
            for bi, problem in enumerate(batch):
                lo, hi = graph.unknown_slices[bi]
                names = problem.unknowns
                decoded = _decoded_assignment(problem, names, final[lo:hi])
                flags = _satisfaction(problem, decoded)
                trace = None
                if cfg.trace:
                    decodes = [
                        _decoded_assignment(problem, names, step[lo:hi])
                        for step in out.trace_decodes
                    ]
                    trace = ProblemTrace(
                        decoded_points=decodes,
                        satisfied=[_satisfaction(problem, d) for d in decodes],
                        final_hidden=out.unknown_hidden.data[lo:hi].copy(),
                    )
                pred = ProblemPrediction(
                    points=decoded,
                    resample_index=r,
                    satisfied_constraints=sum(flags),
                    total_points=len(names),
                    trace=trace,
                )
                if problem.labels is not None:
                    pred.correct_points = _correct_count(problem, decoded)
                    pred.solved = pred.correct_points == len(names)
                candidates[bi].append(pred)
        for bi in range(len(batch)):
            best = max(candidates[bi], key=lambda c: (c.satisfied_constraints, -c.resample_index))
            results[start + bi] = best
    return results


def run(problem: Problem, params: ModelParams, cfg: InferenceConfig) -> ProblemPrediction:
    """Single-problem entry point."""
    return run_dataset([problem], params, cfg)[0]


def _oracle_from_trace(problem: Problem, trace: ProblemTrace) -> tuple[int, int]:
    """(best iteration >= 1, correct count) with earliest-iteration ties."""
    best_t, best_correct = 1, -1
    for t in range(1, len(trace.decoded_points)):
        correct = _correct_count(problem, trace.decoded_points[t])
        if correct > best_correct:
            best_t, best_correct = t, correct
    return best_t, best_correct


def best_iteration_oracle(
    problem: Problem,
    params: ModelParams,
    cfg: InferenceConfig,
    *,
    problem_index: int = 0,
) -> tuple[int, dict[str, Point]]:
    """Label-using oracle: earliest iteration (up to 50) with the most
    correctly predicted points; returns that iteration and its decodes."""
    if problem.labels is None:
        raise ConfigError("the best-iteration oracle requires labels")
    best: tuple[int, int, int] | None = None  # (-correct, iteration, resample)
    best_points: dict[str, Point] | None = None
    graph = build_batch_graph([problem], require_labels=False)
    for r in range(cfg.resamples):
        state = init_state(graph, params.dim, [problem_stream(cfg.seed, problem_index, r)])
        out = forward(graph, params, state, ORACLE_CAP, record_trace=True)
        names = problem.unknowns
        for t in range(1, ORACLE_CAP + 1):
            decoded = _decoded_assignment(problem, names, out.trace_decodes[t])
            correct = _correct_count(problem, decoded)
            key = (-correct, t, r)
            if best is None or key < best:
                best = key
                best_points = decoded
    return best[1], best_points


def oracle_dataset(
    problems: list[Problem], params: ModelParams, cfg: InferenceConfig
) -> list[ProblemPrediction]:
    """Best-iteration oracle over a dataset (one prediction per problem).

    Shares the per-(problem, resample) initialization streams with
    :func:`run_dataset`, so oracle accuracy dominates any fixed-iteration run
    of the same seed by construction.
    """
    best: list[tuple[int, int, int] | None] = [None] * len(problems)  # sort key
    best_points: list[dict[str, Point] | None] = [None] * len(problems)
    for r in range(cfg.resamples):
        for start in range(0, len(problems), cfg.batch_size):
            batch = problems[start : start + cfg.batch_size]
            graph = build_batch_graph(batch, require_labels=False)
            rngs = [problem_stream(cfg.seed, start + bi, r) for bi in range(len(batch))]
            state = init_state(graph, params.dim, rngs)
            out = forward(graph, params, state, ORACLE_CAP, record_trace=True)
            for bi, problem in enumerate(batch):
                lo, hi = graph.unknown_slices[bi]
                if problem.labels is None:
                    raise ConfigError("the best-iteration oracle requires labels")
                for t in range(1, ORACLE_CAP + 1):
                    decoded = _decoded_assignment(
                        problem, problem.unknowns, out.trace_decodes[t][lo:hi]
                    )
                    key = (-_correct_count(problem, decoded), t, r)
                    slot = start + bi
                    if best[slot] is None or key < best[slot]:
                        best[slot] = key
                        best_points[slot] = decoded
    preds = []
    for problem, points in zip(problems, best_points):
        correct = _correct_count(problem, points)
        preds.append(
            ProblemPrediction(
                points=points,
                resample_index=0,
                satisfied_constraints=sum(_satisfaction(problem, points)),
                correct_points=correct,
                total_points=len(problem.unknowns),
                solved=correct == len(problem.unknowns),
            )
        )
    return preds


@dataclass
class TimingHistograms:
    """Iteration statistics over a 50-iteration trace scan."""

    first_solve: dict[int, int] = field(default_factory=dict)
    best_accuracy: dict[int, int] = field(default_factory=dict)
    solved: int = 0
    unsolved: int = 0


def timing_histograms(
    problems: list[Problem], params: ModelParams, cfg: InferenceConfig
) -> TimingHistograms:
    """First-solution iteration for solved problems and best-accuracy
    iteration for unsolved ones, scanning iterations 1..50."""
    hist = TimingHistograms()
    trace_cfg = InferenceConfig(
        iterations=ORACLE_CAP, resamples=1, trace=True, seed=cfg.seed, batch_size=cfg.batch_size
    )
    preds = run_dataset(problems, params, trace_cfg)
    for problem, pred in zip(problems, preds):
        total = len(problem.unknowns)
        first_solve = None
        best_t, best_correct = 1, -1
        for t in range(1, len(pred.trace.decoded_points)):
            correct = _correct_count(problem, pred.trace.decoded_points[t])
            if correct == total and first_solve is None:
                first_solve = t
            if correct > best_correct:
                best_t, best_correct = t, correct
        if first_solve is not None:
            hist.solved += 1
            hist.first_solve[first_solve] = hist.first_solve.get(first_solve, 0) + 1
        else:
            hist.unsolved += 1
            hist.best_accuracy[best_t] = hist.best_accuracy.get(best_t, 0) + 1
    return hist
