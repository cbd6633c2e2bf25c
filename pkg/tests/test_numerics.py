"""Numeric substrate tests: hand oracles, finite differences, and identities."""

import math

import numpy as np
import pytest

from geocsp.errors import DimensionError, GraphError, TrainingAbortError
from geocsp.numerics import (
    AdamW,
    Ema,
    Tensor,
    add,
    clip_global_norm,
    cosine_cycle_lr,
    dropout,
    gather_rows,
    init_lstm_params,
    init_rnn_params,
    linear,
    lstm_cell,
    lstm_param_count,
    matmul,
    mean_all,
    mul,
    pca,
    relu,
    reshape,
    rnn_cell,
    rnn_param_count,
    scatter_sum,
    sigmoid,
    slice_cols,
    softmax,
    softmax_cross_entropy,
    sum_all,
    tanh,
)
from geocsp.numerics.cells import LstmParams
from geocsp.numerics.pca import explained_spectrum


def finite_diff_check(build_loss, tensors, step=1e-5, tol=1e-6, floor=1e-4):
    """Compare tape gradients with central finite differences."""
    loss = build_loss()
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, grad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = build_loss().item()
            flat[i] = keep - step
            down = build_loss().item()
            flat[i] = keep
            numeric = (up - down) / (2 * step)
            denom = max(abs(numeric), abs(gflat[i]), floor)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    assert worst < tol, f"max relative gradient error {worst:.3e}"
    return worst


class TestTapeBasics:
    def test_sum_of_parameters_gradient_is_one(self):
        t = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        loss = sum_all(t)
        loss.backward()
        assert np.array_equal(t.grad, np.ones((2, 3)))

    def test_detached_loss_raises(self):
        with pytest.raises(GraphError):
            sum_all(Tensor(np.ones(3))).backward()

    def test_non_scalar_backward_raises(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(DimensionError):
            add(t, t).backward()

    def test_shared_node_accumulates(self):
        t = Tensor(2.0, requires_grad=True)
        loss = add(mul(t, t), t)  # t^2 + t -> d/dt = 2t + 1 = 5
        loss.backward()
        assert float(t.grad) == pytest.approx(5.0)

    def test_matmul_shape_error(self):
        with pytest.raises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_composed_ops_match_finite_differences(self):
        rng = np.random.default_rng(0)
        w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        x = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        idx = np.array([0, 2, 2, 4, 1, 0])
        seg = np.array([0, 1, 1, 0, 2, 2])

        def loss():
            y = linear(x, w, b)
            y = tanh(y)
            g = gather_rows(y, idx)
            s = scatter_sum(g, seg, 3)
            s = relu(reshape(s, (2, 6)))
            s = sigmoid(slice_cols(s, 1, 5))
            return mean_all(mul(s, s))

        finite_diff_check(loss, [w, b, x])


class TestLstm:
    def test_zero_everything_gives_zero(self):
        zeros = lambda *shape: Tensor(np.zeros(shape), requires_grad=True)
        p = LstmParams(zeros(8, 3), zeros(8, 2), zeros(8), zeros(8))
        h, c = lstm_cell(Tensor(np.zeros((4, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros((4, 2))), p)
        assert np.all(h.data == 0) and np.all(c.data == 0)

    def test_parameter_counts(self):
        assert lstm_param_count(512, 128) == 328_704
        assert lstm_param_count(128, 128) == 132_096
        assert rnn_param_count(128, 128) == 33_024
        rng = np.random.default_rng(1)
        assert init_lstm_params(512, 128, rng).count() == 328_704
        assert init_rnn_params(128, 128, rng).count() == 33_024

    def test_scalar_cell_matches_hand_arithmetic(self):
        rng = np.random.default_rng(7)
        p = init_lstm_params(1, 1, rng)
        x, h0, c0 = 0.37, -0.21, 0.53
        ht, ct = lstm_cell(Tensor([[x]]), Tensor([[h0]]), Tensor([[c0]]), p)

        def sig(v):
            return 1.0 / (1.0 + math.exp(-v))

        pre = [
            float(p.w_in.data[k, 0] * x + p.b_in.data[k] + p.w_h.data[k, 0] * h0 + p.b_h.data[k])
            for k in range(4)
        ]
        # gate layout [i | f | o | g]
        i, f, o, g = sig(pre[0]), sig(pre[1]), sig(pre[2]), math.tanh(pre[3])
        c_hand = f * c0 + i * g
        h_hand = o * math.tanh(c_hand)
        assert abs(ct.data.item() - c_hand) < 1e-12
        assert abs(ht.data.item() - h_hand) < 1e-12

    def test_lstm_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        p = init_lstm_params(4, 3, rng)
        x = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        h0 = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        c0 = Tensor(rng.standard_normal((5, 3)), requires_grad=True)

        def loss():
            h, c = lstm_cell(x, h0, c0, p)
            h, c = lstm_cell(x, h, c, p)  # unrolled twice
            return mean_all(mul(h, h))

        finite_diff_check(loss, [p.w_in, p.w_h, p.b_in, p.b_h, x, h0, c0])

    def test_rnn_cell_is_tanh_affine(self):
        rng = np.random.default_rng(5)
        p = init_rnn_params(3, 2, rng)
        x = rng.standard_normal((4, 3))
        h = rng.standard_normal((4, 2))
        out = rnn_cell(Tensor(x), Tensor(h), p)
        expect = np.tanh(x @ p.w_in.data.T + p.b_in.data + h @ p.w_h.data.T + p.b_h.data)
        assert np.allclose(out.data, expect, atol=1e-14)


class TestSoftmaxCrossEntropy:
    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(11)
        probs = softmax(rng.standard_normal((50, 17)) * 30)
        assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-12)

    def test_uniform_logits_gradient(self):
        n = 8
        logits = Tensor(np.zeros((3, n)), requires_grad=True)
        targets = np.array([1, 4, 7])
        loss = sum_all(softmax_cross_entropy(logits, targets))
        loss.backward()
        expect = np.full((3, n), 1.0 / n)
        expect[np.arange(3), targets] -= 1.0
        assert np.allclose(logits.grad, expect, atol=1e-12)

    def test_uniform_logits_loss_is_log_n(self):
        logits = Tensor(np.zeros((5, 16)))
        losses = softmax_cross_entropy(logits, np.zeros(5, dtype=int))
        assert np.allclose(losses.data, math.log(16), atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        logits = Tensor(rng.standard_normal((6, 9)), requires_grad=True)
        targets = rng.integers(9, size=6)

        def loss():
            return mean_all(softmax_cross_entropy(logits, targets))

        finite_diff_check(loss, [logits])


class TestAdamW:
    def test_zero_gradient_is_pure_decay(self):
        w = Tensor(np.full(4, 2.0), requires_grad=True)
        opt = AdamW({"w": w}, lr=0.1, weight_decay=0.5)
        opt.step()
        assert np.allclose(w.data, 2.0 * (1 - 0.1 * 0.5), atol=1e-15)

    def test_scalar_step_matches_hand_recurrence(self):
        lr, wd, b1, b2, eps = 0.01, 0.02, 0.9, 0.999, 1e-8
        w = Tensor(np.array([0.5]), requires_grad=True)
        opt = AdamW({"w": w}, lr=lr, weight_decay=wd, betas=(b1, b2), eps=eps)
        w.grad = np.array([1.0])
        opt.step()
        expect = 0.5 * (1 - lr * wd)  # decoupled decay first
        m = (1 - b1) * 1.0
        v = (1 - b2) * 1.0
        m_hat = m / (1 - b1)
        v_hat = v / (1 - b2)
        expect -= lr * m_hat / (math.sqrt(v_hat) + eps)
        assert abs(w.data.item() - expect) < 1e-15

    def test_moments_stay_zero_under_zero_gradients(self):
        w = Tensor(np.ones(3), requires_grad=True)
        opt = AdamW({"w": w}, lr=0.01, weight_decay=0.0)
        for _ in range(5):
            w.grad = np.zeros(3)
            opt.step()
        assert np.all(opt.m["w"] == 0) and np.all(opt.v["w"] == 0)

    def test_non_finite_gradient_aborts(self):
        w = Tensor(np.ones(2), requires_grad=True)
        opt = AdamW({"w": w})
        w.grad = np.array([1.0, np.nan])
        with pytest.raises(TrainingAbortError):
            opt.step()


class TestSchedule:
    def test_peak_at_epoch_zero(self):
        assert cosine_cycle_lr(0, base_lr=1e-3) == pytest.approx(1e-3)

    def test_cycle_restart_decays_peak(self):
        assert cosine_cycle_lr(15, base_lr=1e-3) == pytest.approx(9e-4)
        assert cosine_cycle_lr(30, base_lr=1e-3) == pytest.approx(8.1e-4)

    def test_mid_cycle_is_halfway(self):
        peak, floor = 1e-3, 1e-4
        assert cosine_cycle_lr(7.5, base_lr=1e-3) == pytest.approx((peak + floor) / 2)

    def test_floor_factor(self):
        # just before the restart the lr approaches 0.1 * peak
        assert cosine_cycle_lr(14.999, base_lr=1e-3) == pytest.approx(1e-4, rel=1e-3)


class TestRegularizers:
    def test_clip_below_threshold_is_identity(self):
        t = Tensor(np.zeros(3), requires_grad=True)
        t.grad = np.array([0.3, 0.0, 0.4])  # norm 0.5
        norm = clip_global_norm({"t": t}, 0.65)
        assert norm == pytest.approx(0.5)
        assert np.allclose(t.grad, [0.3, 0.0, 0.4])

    def test_clip_scales_to_threshold(self):
        t = Tensor(np.zeros(2), requires_grad=True)
        t.grad = np.array([3.0, 4.0])  # norm 5
        clip_global_norm({"t": t}, 0.65)
        assert np.linalg.norm(t.grad) == pytest.approx(0.65)

    def test_ema_decay_zero_copies(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        ema = Ema({"w": w}, decay=0.0)
        w.data[:] = [5.0, 7.0]
        ema.update({"w": w})
        assert np.allclose(ema.shadow["w"], [5.0, 7.0])

    def test_ema_recurrence(self):
        w = Tensor(np.array([0.0]), requires_grad=True)
        ema = Ema({"w": w}, decay=0.99)
        w.data[:] = 1.0
        ema.update({"w": w})
        assert ema.shadow["w"].item() == pytest.approx(0.01)

    def test_dropout_identity_cases(self):
        rng = np.random.default_rng(0)
        x = Tensor(np.ones((4, 4)))
        assert np.array_equal(dropout(x, 0.0, rng).data, x.data)
        assert np.array_equal(dropout(x, 0.5, rng, training=False).data, x.data)

    def test_dropout_inverted_scaling(self):
        rng = np.random.default_rng(1)
        x = Tensor(np.ones((2000, 10)))
        y = dropout(x, 0.1, rng).data
        kept = y > 0
        assert np.allclose(y[kept], 1.0 / 0.9)
        assert abs(kept.mean() - 0.9) < 0.01


class TestPca:
    def test_line_in_ten_dims(self):
        rng = np.random.default_rng(4)
        direction = rng.standard_normal(10)
        points = np.outer(np.linspace(-2, 2, 30), direction)
        _, ratios = pca(points, 1)
        assert ratios[0] == pytest.approx(1.0)

    def test_planar_grid_top2(self):
        xs, ys = np.meshgrid(np.arange(5.0), np.arange(5.0))
        plane = np.stack([xs.ravel(), ys.ravel(), np.zeros(25), np.zeros(25)], axis=1)
        _, ratios = pca(plane, 2)
        assert ratios.sum() == pytest.approx(1.0)

    def test_matches_eigendecomposition_oracle(self):
        rng = np.random.default_rng(12)
        data = rng.standard_normal((20, 5))
        coords, ratios = pca(data, 3)

        centered = data - data.mean(axis=0)
        cov = centered.T @ centered / (len(data) - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        eigvals, eigvecs = eigvals[order], eigvecs[:, order]
        for j in range(3):
            pivot = np.argmax(np.abs(eigvecs[:, j]))
            if eigvecs[pivot, j] < 0:
                eigvecs[:, j] = -eigvecs[:, j]
        oracle_coords = centered @ eigvecs[:, :3]
        oracle_ratios = eigvals[:3] / eigvals.sum()
        assert np.allclose(coords, oracle_coords, atol=1e-9)
        assert np.allclose(ratios, oracle_ratios, atol=1e-12)

    def test_explained_spectrum_sums_to_one(self):
        rng = np.random.default_rng(3)
        spec = explained_spectrum(rng.standard_normal((40, 6)))
        assert spec.sum() == pytest.approx(1.0)
        assert np.all(np.diff(spec) <= 1e-12)
