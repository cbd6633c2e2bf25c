"""Supervised training loop and evaluation.

Each batch samples a message-passing iteration count from a truncated
two-sided geometric distribution centered at 15 (the center occurring 40% of
the time), runs the unrolled forward pass with dropout on the updated hidden
states, takes the mean cross-entropy over every unknown point in the batch,
clips the global gradient norm, applies AdamW at the cyclic cosine learning
rate, and folds the result into an EMA shadow.  Validation always uses the
EMA weights at a fixed iteration count; the best-validation EMA snapshot is
what ships.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .analysis import failure_analysis, manhattan_histogram, prediction_errors
from .errors import ConfigError, TrainingAbortError
from .inference import InferenceConfig, ProblemPrediction, run_dataset
from .model import ModelParams, build_batch_graph, forward, init_params, init_state
from .numerics import AdamW, Ema, clip_global_norm, cosine_cycle_lr, mean_all, softmax_cross_entropy
from .solver import Problem


@dataclass
class TrainConfig:
    grid_side: int = 20
    dim: int = 128
    cell: str = "lstm"  # or "rnn" for the ablation
    init_mode: str = "random"  # or "grid"
    epochs: int = 200
    batch_size: int = 32
    base_lr: float = 1e-3
    weight_decay: float = 1e-3
    clip_norm: float = 0.65
    ema_decay: float = 0.99
    dropout: float = 0.1
    iteration_center: int = 15
    iteration_range: tuple[int, int] = (5, 25)
    center_probability: float = 0.4
    cycle_epochs: int = 15
    peak_decay: float = 0.9
    min_lr_factor: float = 0.1
    validation_fraction: float = 0.1
    val_iterations: int = 15
    #: Cap on validation problems per evaluation pass (None = all); the full
    #: split is still available to callers for a final measurement.
    val_subsample: int | None = None
    val_batch_size: int = 512
    evals_per_epoch: int = 1
    target_accuracy: float = 0.9
    #: Stop this many (fractional) epochs after validation first reaches the
    #: target accuracy; None trains for the full epoch budget.
    stop_after_target_epochs: float | None = None
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    log_progress: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.iteration_range
        if not (1 <= lo <= self.iteration_center <= hi):
            raise ConfigError("iteration_range must bracket the center")
        if self.iteration_center - lo != hi - self.iteration_center:
            raise ConfigError("iteration_range must be symmetric about the center")
        if not 0.0 < self.center_probability < 1.0:
            raise ConfigError("center probability must be in (0, 1)")
        for name in ("dropout", "validation_fraction"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in [0, 1)")
        if self.evals_per_epoch < 1:
            raise ConfigError("evals_per_epoch must be >= 1")


@lru_cache(maxsize=16)
def iteration_distribution(
    center: int, lo: int, hi: int, center_probability: float
) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Support and probabilities of p(k) proportional to r^|k - center|.

    r solves  center_probability * (1 + 2 * sum_{j=1..J} r^j) = 1  for the
    half-width J, by bisection.
    """
    half = center - lo
    target = (1.0 / center_probability - 1.0) / 2.0

    def tail_mass(r: float) -> float:
        return sum(r**j for j in range(1, half + 1))

    a, b = 0.0, 1.0
    for _ in range(200):
        mid = (a + b) / 2.0
        if tail_mass(mid) < target:
            a = mid
        else:
            b = mid
    ratio = (a + b) / 2.0
    values = tuple(range(lo, hi + 1))
    raw = np.array([center_probability * ratio ** abs(k - center) for k in values])
    probs = raw / raw.sum()
    return values, tuple(probs)


def sample_iterations(cfg: TrainConfig, rng: np.random.Generator) -> int:
    values, probs = iteration_distribution(
        cfg.iteration_center, *cfg.iteration_range, cfg.center_probability
    )
    return int(rng.choice(values, p=probs))


@dataclass
class EvalPoint:
    epoch: float
    train_loss: float
    lr: float
    val_point_acc: float
    val_complete_acc: float


@dataclass
class TrainReport:
    rows: list[EvalPoint] = field(default_factory=list)
    target_accuracy: float = 0.9
    epochs_to_target: float | None = None
    best_val_point_acc: float = 0.0
    best_val_complete_acc: float = 0.0

    def lr_trace(self) -> list[float]:
        return [row.lr for row in self.rows]


@dataclass
class TrainResult:
    params: ModelParams
    ema_arrays: dict[str, np.ndarray]
    best_ema_arrays: dict[str, np.ndarray]
    report: TrainReport
    train_problems: list[Problem]
    val_problems: list[Problem]


@contextmanager
def swapped_arrays(params: ModelParams, arrays: dict[str, np.ndarray]):
    """Temporarily load ``arrays`` into ``params`` (used for EMA validation)."""
    saved = params.export_arrays()
    params.load_arrays(arrays)
    try:
        yield params
    finally:
        params.load_arrays(saved)


@dataclass
class EvalReport:
    point_accuracy: float
    complete_accuracy: float
    n_problems: int
    n_points: int
    depth_success: dict[int, tuple[int, int]]
    count_success: dict[int, tuple[int, int]]
    error_histogram: dict[int, float]


def evaluate_predictions(problems: list[Problem], preds: list[ProblemPrediction]) -> EvalReport:
    total_points = sum(p.total_points for p in preds)
    correct = sum(p.correct_points for p in preds)
    solved = sum(1 for p in preds if p.solved)
    breakdown = failure_analysis(problems, preds)
    return EvalReport(
        point_accuracy=correct / total_points if total_points else 1.0,
        complete_accuracy=solved / len(problems) if problems else 1.0,
        n_problems=len(problems),
        n_points=total_points,
        depth_success=breakdown.depth_success,
        count_success=breakdown.count_success,
        error_histogram=manhattan_histogram(prediction_errors(problems, preds)),
    )


def evaluate(
    params: ModelParams,
    problems: list[Problem],
    iterations: int = 15,
    resamples: int = 1,
    seed: int = 0,
    batch_size: int = 128,
) -> EvalReport:
    """Point and complete accuracy plus failure breakdowns on ``problems``."""
    cfg = InferenceConfig(iterations=iterations, resamples=resamples, seed=seed, batch_size=batch_size)
    preds = run_dataset(problems, params, cfg)
    return evaluate_predictions(problems, preds)


def _quick_accuracy(
    params: ModelParams, problems: list[Problem], iterations: int, seed: int, batch_size: int
) -> tuple[float, float]:
    report = evaluate(
        params, problems, iterations=iterations, resamples=1, seed=seed, batch_size=batch_size
    )
    return report.point_accuracy, report.complete_accuracy


def train(problems: list[Problem], cfg: TrainConfig) -> TrainResult:
    """Run the full training recipe on ``problems``; returns raw parameters,
    the final and best-validation EMA weights, and the per-eval report."""
    if not problems:
        raise ConfigError("empty dataset")
    if any(p.grid_side != cfg.grid_side for p in problems):
        raise ConfigError("dataset grid side does not match the configuration")
    if any(p.labels is None for p in problems):
        raise ConfigError("training requires labeled problems")

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    iter_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    state_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    param_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))

    order = shuffle_rng.permutation(len(problems))
    n_val = int(len(problems) * cfg.validation_fraction)
    val_idx = order[len(problems) - n_val :]
    train_idx = order[: len(problems) - n_val]
    train_set = [problems[i] for i in train_idx]
    val_set = [problems[i] for i in val_idx]

    params = init_params(cfg.grid_side, cfg.dim, param_rng, cell=cfg.cell, init_mode=cfg.init_mode)
    named = params.named_parameters()
    opt = AdamW(named, lr=cfg.base_lr, weight_decay=cfg.weight_decay, betas=cfg.adam_betas, eps=cfg.adam_eps)
    ema = Ema(named, decay=cfg.ema_decay)

    report = TrainReport(target_accuracy=cfg.target_accuracy)
    best_point_acc = -1.0
    best_arrays = ema.arrays()

    n_batches = max(1, math.ceil(len(train_set) / cfg.batch_size))
    eval_marks = {
        max(1, round(n_batches * j / cfg.evals_per_epoch)) for j in range(1, cfg.evals_per_epoch + 1)
    }

    stop = False
    for epoch in range(cfg.epochs):
        if stop:
            break
        lr = cosine_cycle_lr(
            epoch, cfg.base_lr, cfg.cycle_epochs, cfg.peak_decay, cfg.min_lr_factor
        )
        epoch_order = shuffle_rng.permutation(len(train_set))
        loss_sum, loss_batches = 0.0, 0
        for b in range(n_batches):
            batch_idx = epoch_order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if len(batch_idx) == 0:
                continue
            batch = [train_set[i] for i in batch_idx]
            iterations = sample_iterations(cfg, iter_rng)
            graph = build_batch_graph(batch)
            state = init_state(graph, cfg.dim, [state_rng] * len(batch))
            out = forward(
                graph,
                params,
                state,
                iterations,
                dropout_rate=cfg.dropout,
                dropout_rng=dropout_rng,
                training=True,
            )
            loss = mean_all(softmax_cross_entropy(out.logits, graph.unknown_targets))
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingAbortError(
                    f"non-finite loss {loss_value} at epoch {epoch}, batch {b}"
                )
            opt.zero_grad()
            loss.backward()
            clip_global_norm(named, cfg.clip_norm)
            opt.step(lr=lr)
            ema.update(named)
            loss_sum += loss_value
            loss_batches += 1

            if (b + 1) in eval_marks and val_set:
                val_probe = val_set[: cfg.val_subsample] if cfg.val_subsample else val_set
                with swapped_arrays(params, ema.shadow):
                    point_acc, complete_acc = _quick_accuracy(
                        params, val_probe, cfg.val_iterations, cfg.seed, cfg.val_batch_size
                    )
                fractional_epoch = epoch + (b + 1) / n_batches
                report.rows.append(
                    EvalPoint(
                        epoch=fractional_epoch,
                        train_loss=loss_sum / loss_batches,
                        lr=lr,
                        val_point_acc=point_acc,
                        val_complete_acc=complete_acc,
                    )
                )
                if cfg.log_progress:
                    print(
                        f"[train] epoch {fractional_epoch:6.2f} loss {loss_sum / loss_batches:.4f} "
                        f"lr {lr:.2e} val point {point_acc:.4f} complete {complete_acc:.4f}",
                        flush=True,
                    )
                if report.epochs_to_target is None and point_acc >= cfg.target_accuracy:
                    report.epochs_to_target = fractional_epoch
                if point_acc > best_point_acc:
                    best_point_acc = point_acc
                    best_arrays = ema.arrays()
                    report.best_val_point_acc = point_acc
                    report.best_val_complete_acc = complete_acc
                if (
                    cfg.stop_after_target_epochs is not None
                    and report.epochs_to_target is not None
                    and fractional_epoch >= report.epochs_to_target + cfg.stop_after_target_epochs
                ):
                    stop = True
                    break

    return TrainResult(
        params=params,
        ema_arrays=ema.arrays(),
        best_ema_arrays=best_arrays,
        report=report,
        train_problems=train_set,
        val_problems=val_set,
    )
