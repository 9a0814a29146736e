"""Layer forward/backward correctness, Adam, dropout, and checkpoints."""

import numpy as np
import pytest

from beamseq.nn import (
    AttentionParams,
    CheckpointError,
    DenseParams,
    EmbeddingParams,
    adam_init,
    adam_step,
    attention_backward,
    attention_forward,
    clip_global_norm,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    embedding_backward,
    embedding_forward,
    finite_diff_check,
    init_attention,
    init_dense,
    init_embedding,
    init_lstm,
    load_tensors,
    lstm_cell_backward,
    lstm_cell_forward,
    params_items,
    save_tensors,
    softmax,
    softmax_cross_entropy,
    softmax_cross_entropy_batch,
    zeros_like_params,
)


def rng_for(seed):
    return np.random.default_rng(seed)


class TestDense:
    def test_identity_weights(self):
        p = DenseParams(weight=np.eye(3), bias=np.zeros(3))
        x = rng_for(0).normal(size=(4, 3))
        y, _ = dense_forward(p, x)
        np.testing.assert_array_equal(y, x)

    def test_zero_upstream_grad(self):
        p = init_dense(rng_for(1), 3, 5)
        x = rng_for(2).normal(size=(2, 3))
        _, cache = dense_forward(p, x)
        grads, gx = dense_backward(cache, np.zeros((2, 5)))
        assert not np.any(grads.weight) and not np.any(grads.bias) and not np.any(gx)

    def test_finite_difference(self):
        rng = rng_for(3)
        p = init_dense(rng, 3, 5)
        x = rng.normal(size=(4, 3))
        target = rng.normal(size=(4, 5))

        def loss():
            y, _ = dense_forward(p, x)
            return float(np.sum((y - target) ** 2))

        y, cache = dense_forward(p, x)
        grads, gx = dense_backward(cache, 2.0 * (y - target))
        err = finite_diff_check(
            loss, [p.weight, p.bias, x], [grads.weight, grads.bias, gx], rng
        )
        assert err < 1e-6

    def test_shape_mismatch(self):
        p = init_dense(rng_for(4), 3, 5)
        with pytest.raises(ValueError):
            dense_forward(p, np.zeros((2, 4)))


class TestEmbedding:
    def test_lookup_returns_rows(self):
        p = init_embedding(rng_for(5), 7, 4)
        y, _ = embedding_forward(p, np.array([0, 3]))
        np.testing.assert_array_equal(y[0], p.table[0])
        np.testing.assert_array_equal(y[1], p.table[3])

    def test_repeated_token_grads_sum(self):
        p = init_embedding(rng_for(6), 5, 3)
        _, cache = embedding_forward(p, np.array([2, 2]))
        g = np.ones((2, 3))
        grads = embedding_backward(cache, g)
        np.testing.assert_array_equal(grads.table[2], 2.0 * np.ones(3))
        assert not np.any(np.delete(grads.table, 2, axis=0))

    def test_finite_difference_on_looked_up_rows(self):
        rng = rng_for(7)
        p = init_embedding(rng, 6, 4)
        tokens = np.array([1, 4, 1])
        coeff = rng.normal(size=(3, 4))

        def loss():
            y, _ = embedding_forward(p, tokens)
            return float(np.sum(coeff * y))

        _, cache = embedding_forward(p, tokens)
        grads = embedding_backward(cache, coeff)
        err = finite_diff_check(loss, [p.table], [grads.table], rng, max_probes_per_tensor=24)
        assert err < 1e-6

    def test_token_out_of_range(self):
        p = init_embedding(rng_for(8), 5, 3)
        with pytest.raises(ValueError):
            embedding_forward(p, np.array([5]))


class TestLstmCell:
    def test_all_zero_params_fixpoint(self):
        p = init_lstm(rng_for(9), 3, 4)
        for _, arr in params_items(p):
            arr[...] = 0.0
        x = rng_for(10).normal(size=(2, 3))
        h, c, _ = lstm_cell_forward(p, x, np.zeros((2, 4)), np.zeros((2, 4)))
        # g = tanh(0) = 0 forces c = 0 and therefore h = 0
        np.testing.assert_array_equal(h, np.zeros((2, 4)))
        np.testing.assert_array_equal(c, np.zeros((2, 4)))

    def test_saturated_forget_gate_preserves_cell(self):
        p = init_lstm(rng_for(11), 3, 4)
        for _, arr in params_items(p):
            arr[...] = 0.0
        p.b_f[...] = 20.0  # sigmoid(20) ~ 1 - 2e-9
        c_prev = rng_for(12).normal(size=(2, 4))
        _, c, _ = lstm_cell_forward(p, np.zeros((2, 3)), np.zeros((2, 4)), c_prev)
        np.testing.assert_allclose(c, c_prev, rtol=1e-6)

    def test_full_backward_finite_difference(self):
        rng = rng_for(13)
        p = init_lstm(rng, 3, 4)
        x = rng.normal(size=(2, 3))
        h0 = rng.normal(size=(2, 4))
        c0 = rng.normal(size=(2, 4))
        wh = rng.normal(size=(2, 4))
        wc = rng.normal(size=(2, 4))

        def loss():
            h, c, _ = lstm_cell_forward(p, x, h0, c0)
            return float(np.sum(wh * h) + np.sum(wc * c))

        h, c, cache = lstm_cell_forward(p, x, h0, c0)
        grads, dx, dh0, dc0 = lstm_cell_backward(cache, wh, wc)
        tensors = [arr for _, arr in params_items(p)] + [x, h0, c0]
        analytic = [arr for _, arr in params_items(grads)] + [dx, dh0, dc0]
        err = finite_diff_check(loss, tensors, analytic, rng, max_probes_per_tensor=8)
        assert err < 1e-5


class TestAttention:
    def test_identical_states_give_uniform_weights(self):
        rng = rng_for(14)
        p = init_attention(rng, 4)
        state = rng.normal(size=4)
        enc = np.tile(state, (1, 5, 1))
        q = rng.normal(size=(1, 4))
        context, weights, _, _ = attention_forward(p, q, enc)
        np.testing.assert_allclose(weights, np.full((1, 5), 0.2), atol=1e-12)
        np.testing.assert_allclose(context[0], state, atol=1e-12)

    def test_single_state(self):
        rng = rng_for(15)
        p = init_attention(rng, 4)
        enc = rng.normal(size=(2, 1, 4))
        q = rng.normal(size=(2, 4))
        context, weights, _, _ = attention_forward(p, q, enc)
        np.testing.assert_allclose(weights, np.ones((2, 1)), atol=1e-15)
        np.testing.assert_allclose(context, enc[:, 0, :], atol=1e-15)

    def test_backward_finite_difference(self):
        rng = rng_for(16)
        p = init_attention(rng, 4)
        q = rng.normal(size=(3, 4))
        enc = rng.normal(size=(3, 5, 4))
        w = rng.normal(size=(3, 4))

        def loss():
            _, _, combined, _ = attention_forward(p, q, enc)
            return float(np.sum(w * combined))

        _, _, _, cache = attention_forward(p, q, enc)
        grads, dq, denc = attention_backward(cache, w)
        tensors = [p.w_score, p.w_combine, p.b_combine, q, enc]
        analytic = [grads.w_score, grads.w_combine, grads.b_combine, dq, denc]
        err = finite_diff_check(loss, tensors, analytic, rng, max_probes_per_tensor=12)
        assert err < 1e-5

    def test_empty_sequence_rejected(self):
        p = init_attention(rng_for(17), 4)
        with pytest.raises(ValueError):
            attention_forward(p, np.zeros((1, 4)), np.zeros((1, 0, 4)))


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, _ = softmax_cross_entropy(np.zeros(4), 2)
        assert loss == pytest.approx(np.log(4.0), abs=1e-12)

    def test_near_one_hot(self):
        logits = np.zeros(6)
        logits[3] = 50.0
        loss, _ = softmax_cross_entropy(logits, 3)
        assert loss < 1e-20

    def test_grad_finite_difference(self):
        rng = rng_for(18)
        logits = rng.normal(size=10)
        target = 4

        def loss():
            return softmax_cross_entropy(logits, target)[0]

        _, grad = softmax_cross_entropy(logits, target)
        err = finite_diff_check(loss, [logits], [grad], rng, max_probes_per_tensor=10)
        assert err < 1e-6

    def test_softmax_sums_to_one_and_shift_invariant(self):
        rng = rng_for(19)
        z = rng.normal(size=(8, 12)) * 10
        s = softmax(z)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(softmax(z + 123.0), s, atol=1e-12)

    def test_target_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros(4), 4)

    def test_batch_matches_single(self):
        rng = rng_for(20)
        logits = rng.normal(size=(5, 7))
        targets = rng.integers(0, 7, size=5)
        losses, grads = softmax_cross_entropy_batch(logits, targets)
        for b in range(5):
            loss_b, grad_b = softmax_cross_entropy(logits[b], int(targets[b]))
            assert losses[b] == pytest.approx(loss_b, abs=1e-15)
            np.testing.assert_allclose(grads[b], grad_b, atol=1e-15)


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = rng_for(21).normal(size=(3, 4))
        y, _ = dropout_forward(x, 0.0, rng_for(0), training=True)
        np.testing.assert_array_equal(y, x)

    def test_inference_identity_any_rate(self):
        x = rng_for(22).normal(size=(3, 4))
        y, _ = dropout_forward(x, 0.7, rng_for(0), training=False)
        assert y is x

    def test_survivor_fraction_and_mean(self):
        rng = rng_for(23)
        x = np.ones((1000, 1000))
        y, _ = dropout_forward(x, 0.2, rng, training=True)
        survivors = np.count_nonzero(y) / y.size
        assert survivors == pytest.approx(0.8, abs=0.002)
        assert y.mean() == pytest.approx(1.0, abs=0.005)

    def test_backward_uses_same_mask(self):
        rng = rng_for(24)
        x = np.ones((50, 50))
        y, cache = dropout_forward(x, 0.3, rng, training=True)
        dx = dropout_backward(cache, np.ones_like(x))
        np.testing.assert_array_equal(dx, y)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            dropout_forward(np.ones(3), 1.0, rng_for(0), training=True)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        params = {"p": np.array([1.0, -2.0, 3.0])}
        state = adam_init(params)
        before = params["p"].copy()
        adam_step(params, {"p": np.zeros(3)}, state)
        np.testing.assert_array_equal(params["p"], before)

    def test_first_step_hand_computed(self):
        # p=1, g=0.5, defaults: m_hat=0.5, v_hat=0.25 -> p' = 1 - 1e-3*(0.5/0.5)
        params = {"p": np.array([1.0])}
        state = adam_init(params)
        adam_step(params, {"p": np.array([0.5])}, state)
        assert params["p"][0] == pytest.approx(0.999, abs=1e-8)

    def test_constant_gradient_update_magnitude_approaches_alpha(self):
        params = {"p": np.array([0.0])}
        state = adam_init(params)
        prev = params["p"][0]
        for _ in range(200):
            adam_step(params, {"p": np.array([1.0])}, state)
            step = prev - params["p"][0]
            prev = params["p"][0]
        # with constant g the bias-corrected moments give exactly alpha/(1+eps')
        assert step == pytest.approx(state.alpha, rel=1e-6)
        assert params["p"][0] == pytest.approx(-200 * state.alpha, rel=1e-5)

    def test_clip_global_norm(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
        norm, clipped = clip_global_norm(grads, 2.5)
        assert norm == pytest.approx(5.0)
        assert clipped
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        assert total == pytest.approx(2.5)
        norm2, clipped2 = clip_global_norm(grads, 10.0)
        assert not clipped2


class TestFiniteDiffLinear:
    def test_linear_function_at_roundoff(self):
        rng = rng_for(25)
        w = rng.normal(size=8)
        x = rng.normal(size=8)

        def loss():
            return float(np.dot(w, x))

        err = finite_diff_check(loss, [x], [w.copy()], rng)
        assert err < 1e-9


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = rng_for(26)
        tensors = [
            ("enc.w", rng.normal(size=(3, 4))),
            ("enc.b", rng.normal(size=4)),
            ("scalarish", rng.normal(size=(1,))),
        ]
        meta = {"arch": {"hidden": 4}, "seed": 7}
        path = tmp_path / "model.bmck"
        save_tensors(path, tensors, meta)
        loaded, meta2 = load_tensors(path)
        assert meta2 == meta
        for name, arr in tensors:
            np.testing.assert_array_equal(loaded[name], arr)

    def test_corrupted_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bmck"
        save_tensors(path, [("a", np.zeros(2))], {})
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_tensors(path)

    def test_truncation_rejected(self, tmp_path):
        path = tmp_path / "trunc.bmck"
        save_tensors(path, [("a", np.arange(10.0))], {"k": 1})
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 6])
        with pytest.raises(CheckpointError):
            load_tensors(path)
