"""Trainer tests: iteration sampling, loss behavior, schedule, reports."""

import math

import numpy as np
import pytest

from geocsp.errors import ConfigError
from geocsp.generator import GeneratorConfig, generate_dataset
from geocsp.inference import ProblemPrediction
from geocsp.model import build_batch_graph, forward, init_params, init_state
from geocsp.numerics import cosine_cycle_lr, mean_all, softmax_cross_entropy
from geocsp.training import (
    TrainConfig,
    evaluate_predictions,
    iteration_distribution,
    sample_iterations,
    train,
)


@pytest.fixture(scope="module")
def tiny_dataset():
    cfg = GeneratorConfig(
        grid_side=6,
        constraint_count_range=(1, 3),
        type_weights={"S": 0.5, "T": 0.5},
        allowed_kinds=("S", "T"),
        seed=10,
    )
    problems, _ = generate_dataset(cfg, 300)
    return problems


class TestIterationSampling:
    def test_center_frequency(self):
        values, probs = iteration_distribution(15, 5, 25, 0.4)
        by_value = dict(zip(values, probs))
        assert by_value[15] == pytest.approx(0.4, abs=1e-6)
        # vectorized equivalent of a million single draws
        rng = np.random.default_rng(0)
        draws = rng.choice(values, size=1_000_000, p=probs)
        assert abs((draws == 15).mean() - 0.4) < 0.01

    def test_support_is_bounded(self):
        cfg = TrainConfig(grid_side=6, dim=8)
        rng = np.random.default_rng(1)
        draws = {sample_iterations(cfg, rng) for _ in range(5000)}
        assert min(draws) >= 5 and max(draws) <= 25

    def test_extreme_value_is_rare(self):
        values, probs = iteration_distribution(15, 5, 25, 0.4)
        assert dict(zip(values, probs))[25] < 0.01

    def test_symmetry(self):
        values, probs = iteration_distribution(15, 5, 25, 0.4)
        by_value = dict(zip(values, probs))
        for offset in range(1, 11):
            assert by_value[15 - offset] == pytest.approx(by_value[15 + offset])

    def test_asymmetric_range_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(iteration_range=(5, 20))


class TestLossBehavior:
    def test_initial_loss_near_log_classes(self, tiny_dataset):
        n = 6
        params = init_params(n, 32, np.random.default_rng(0))
        batch = tiny_dataset[:32]
        graph = build_batch_graph(batch)
        state = init_state(graph, 32, [np.random.default_rng([7, i]) for i in range(len(batch))])
        out = forward(graph, params, state, 15)
        loss = mean_all(softmax_cross_entropy(out.logits, graph.unknown_targets)).item()
        assert abs(loss - math.log(n * n)) / math.log(n * n) < 0.10

    def test_loss_reads_only_unknown_rows(self, tiny_dataset):
        # fixed points contribute no logits, so perturbing their scores
        # cannot move the loss
        batch = tiny_dataset[:8]
        graph = build_batch_graph(batch)
        params = init_params(6, 16, np.random.default_rng(0))
        state = init_state(graph, 16, [np.random.default_rng([1, i]) for i in range(len(batch))])
        out = forward(graph, params, state, 3)
        assert out.logits.shape[0] == sum(len(p.unknowns) for p in batch)
        assert len(graph.unknown_targets) == out.logits.shape[0]


class TestTrainLoop:
    def test_two_epochs_reproducible(self, tiny_dataset):
        cfg = TrainConfig(grid_side=6, dim=16, epochs=2, seed=3)
        a = train(tiny_dataset, cfg)
        b = train(tiny_dataset, cfg)
        assert [r.val_point_acc for r in a.report.rows] == [r.val_point_acc for r in b.report.rows]
        assert [r.train_loss for r in a.report.rows] == [r.train_loss for r in b.report.rows]
        for k, v in a.params.export_arrays().items():
            assert np.array_equal(v, b.params.export_arrays()[k])

    def test_lr_trace_matches_schedule(self, tiny_dataset):
        cfg = TrainConfig(grid_side=6, dim=16, epochs=3, seed=0)
        result = train(tiny_dataset, cfg)
        for row in result.report.rows:
            expected = cosine_cycle_lr(
                int(row.epoch - 1e-9), cfg.base_lr, cfg.cycle_epochs, cfg.peak_decay, cfg.min_lr_factor
            )
            assert row.lr == pytest.approx(expected)

    def test_ema_differs_from_raw_params(self, tiny_dataset):
        cfg = TrainConfig(grid_side=6, dim=16, epochs=1, seed=0)
        result = train(tiny_dataset, cfg)
        raw = result.params.export_arrays()
        assert any(not np.array_equal(raw[k], result.ema_arrays[k]) for k in raw)

    def test_grid_mismatch_rejected(self, tiny_dataset):
        with pytest.raises(ConfigError):
            train(tiny_dataset, TrainConfig(grid_side=10, dim=16, epochs=1))

    def test_mid_epoch_evaluations(self, tiny_dataset):
        cfg = TrainConfig(grid_side=6, dim=16, epochs=1, seed=0, evals_per_epoch=3)
        result = train(tiny_dataset, cfg)
        assert len(result.report.rows) == 3
        epochs = [row.epoch for row in result.report.rows]
        assert epochs == sorted(epochs)
        assert epochs[-1] == pytest.approx(1.0)


class TestEvaluate:
    def test_perfect_predictions(self, tiny_dataset):
        problems = tiny_dataset[:20]
        preds = [
            ProblemPrediction(
                points=dict(p.labels),
                resample_index=0,
                satisfied_constraints=len(p.constraints),
                correct_points=len(p.unknowns),
                total_points=len(p.unknowns),
                solved=True,
            )
            for p in problems
        ]
        report = evaluate_predictions(problems, preds)
        assert report.point_accuracy == 1.0
        assert report.complete_accuracy == 1.0
        assert report.error_histogram == {}
        for correct, total in report.depth_success.values():
            assert correct == total

    def test_breakdown_partitions_dataset(self, tiny_dataset):
        problems = tiny_dataset[:30]
        preds = []
        rng = np.random.default_rng(0)
        for p in problems:
            pts = {
                v: (int(rng.integers(p.grid_side)), int(rng.integers(p.grid_side)))
                for v in p.unknowns
            }
            correct = sum(1 for v in p.unknowns if pts[v] == p.labels[v])
            preds.append(
                ProblemPrediction(
                    points=pts,
                    resample_index=0,
                    satisfied_constraints=0,
                    correct_points=correct,
                    total_points=len(p.unknowns),
                    solved=correct == len(p.unknowns),
                )
            )
        report = evaluate_predictions(problems, preds)
        assert sum(t for _, t in report.depth_success.values()) == report.n_points
        assert sum(t for _, t in report.count_success.values()) == report.n_problems
