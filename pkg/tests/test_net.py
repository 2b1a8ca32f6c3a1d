"""Network tests: shapes, gradients vs finite differences, model files."""

import numpy as np
import pytest

from rcfd.net import (
    Activations,
    BadMagicError,
    Network,
    TrainingDivergedError,
    TruncatedModelError,
    VersionMismatchError,
    backward,
    batch_loss,
    forward,
    init_network,
    load_model,
    loss,
    predict,
    save_model,
    sgd_step,
)


def small_net(seed=3):
    return init_network(seed, conv1_filters=5, conv2_filters=5, dense_units=20)


class TestInit:
    def test_deterministic(self):
        a = init_network(9)
        b = init_network(9)
        for name, arr in a.param_arrays().items():
            assert np.array_equal(arr, getattr(b, name))

    def test_parameter_count(self):
        assert init_network(0).n_params() == 3_133_502

    def test_biases_zero(self):
        net = init_network(1)
        for name in ("conv1_b", "conv2_b", "dense_b", "logits_b"):
            assert np.abs(getattr(net, name)).max() == 0.0

    def test_weight_bounds(self):
        net = init_network(2)
        assert np.abs(net.conv1_w).max() <= 1 / np.sqrt(3)
        assert np.abs(net.conv2_w).max() <= 1 / np.sqrt(300)
        assert np.abs(net.dense_w).max() <= 1 / np.sqrt(3100)
        assert np.abs(net.logits_w).max() <= 1 / np.sqrt(1000)


class TestForward:
    def test_shape_chain(self):
        net = init_network(0)
        acts = forward(net, np.random.default_rng(1).normal(size=133))
        assert acts.conv1_out.shape == (1, 131, 100)
        assert acts.pool1_out.shape == (1, 65, 100)
        assert acts.conv2_out.shape == (1, 63, 100)
        assert acts.pool2_out.shape == (1, 31, 100)
        assert acts.dense_out.shape == (1, 1000)
        assert acts.probs.shape == (1, 2)

    def test_zero_input_uniform_probs(self):
        net = init_network(4)
        acts = forward(net, np.zeros(133))
        assert np.abs(acts.conv1_out).max() == 0.0
        assert acts.probs[0] == pytest.approx([0.5, 0.5], abs=1e-12)

    def test_probs_sum_to_one(self):
        net = small_net()
        rng = np.random.default_rng(5)
        probs = forward(net, rng.normal(size=(40, 133)) * 50).probs
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert probs.min() > 0.0

    def test_relu_nonnegative(self):
        net = small_net()
        acts = forward(net, np.random.default_rng(6).normal(size=133))
        for arr in (acts.conv1_out, acts.conv2_out, acts.dense_out):
            assert arr.min() >= 0.0

    def test_inference_deterministic(self):
        net = small_net()
        x = np.random.default_rng(7).normal(size=133)
        assert np.array_equal(forward(net, x).probs, forward(net, x).probs)

    def test_softmax_stable_for_large_logits(self):
        net = small_net()
        net.logits_b[:] = (1e4, -1e4)
        probs = forward(net, np.zeros(133)).probs
        assert np.isfinite(probs).all()
        assert probs.sum() == pytest.approx(1.0)

    def test_input_validation(self):
        net = small_net()
        with pytest.raises(ValueError):
            forward(net, np.zeros(132))
        with pytest.raises(ValueError):
            forward(net, np.full(133, np.inf))
        with pytest.raises(ValueError):
            forward(net, np.zeros(133), training=True, rng=None)

    def test_single_and_batch_agree(self):
        net = small_net()
        rng = np.random.default_rng(8)
        xs = rng.normal(size=(6, 133))
        batch_probs = forward(net, xs).probs
        for i, x in enumerate(xs):
            assert np.allclose(forward(net, x).probs[0], batch_probs[i], atol=1e-12)


class TestLoss:
    def test_uniform(self):
        assert loss(np.array([0.5, 0.5]), 0) == pytest.approx(np.log(2), abs=1e-12)

    def test_perfect(self):
        assert loss(np.array([1.0, 0.0]), 0) == 0.0

    def test_floor(self):
        assert loss(np.array([1.0, 0.0]), 1) == pytest.approx(-np.log(1e-12), rel=1e-9)
        assert loss(np.array([1.0, 0.0]), 1) == pytest.approx(27.6310211159, abs=1e-6)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            loss(np.array([0.5, 0.5]), 2)


class TestBackward:
    def test_matches_finite_differences(self):
        # central-difference check on every parameter group, downsized net
        rng = np.random.default_rng(11)
        net = small_net()
        eps = 1e-5
        worst = 0.0
        for _ in range(4):
            x = rng.normal(size=133)
            label = int(rng.integers(0, 2))
            grads = backward(net, forward(net, x), label)
            for name, garr in grads.param_arrays().items():
                p = getattr(net, name)
                picks = rng.integers(0, p.size, size=min(8, p.size))
                for flat in picks:
                    idx = np.unravel_index(flat, p.shape)
                    orig = p[idx]
                    p[idx] = orig + eps
                    up = loss(forward(net, x).probs[0], label)
                    p[idx] = orig - eps
                    down = loss(forward(net, x).probs[0], label)
                    p[idx] = orig
                    fd = (up - down) / (2 * eps)
                    rel = abs(fd - garr[idx]) / max(abs(fd) + abs(garr[idx]), 1e-8)
                    worst = max(worst, rel)
        assert worst < 1e-4

    def test_zero_input_logit_bias_gradient(self):
        net = init_network(12)
        acts = forward(net, np.zeros(133))
        grads = backward(net, acts, 0)
        assert grads.logits_b == pytest.approx([-0.5, 0.5], abs=1e-12)
        assert np.abs(grads.dense_w).max() == 0.0
        assert np.abs(grads.conv1_w).max() == 0.0

    def test_logit_bias_signs_opposite(self):
        net = small_net()
        x = np.random.default_rng(13).normal(size=133)
        grads = backward(net, forward(net, x), 1)
        assert grads.logits_b[0] > 0 > grads.logits_b[1]

    def test_pool_gradient_mass_conserved(self):
        # gradient mass into each pool window equals mass out: compare the
        # total gradient entering conv2_out against pool2's output gradient
        net = small_net(seed=14)
        rng = np.random.default_rng(14)
        x = rng.normal(size=133)
        acts = forward(net, x)
        grads = backward(net, acts, 0)
        # recompute dpool2 analytically from the logits/dense chain
        dlogits = acts.probs.copy()
        dlogits[0, 0] -= 1.0
        ddense = (dlogits @ net.logits_w) * (acts.dense_pre > 0)
        dpool2 = (ddense @ net.dense_w).reshape(acts.pool2_out.shape)
        from rcfd.net import _maxpool_backward

        dconv2out = _maxpool_backward(dpool2, acts.pool2_argmax, acts.conv2_out.shape[1])
        assert dconv2out.sum() == pytest.approx(dpool2.sum(), rel=1e-9, abs=1e-12)
        # and every deposit lands on a recorded argmax position
        nonzero = np.nonzero(dconv2out[0])
        for pos, ch in zip(*nonzero):
            assert pos in acts.pool2_argmax[0, :, ch]

    def test_dropout_mask_reapplied(self):
        net = small_net(seed=15)
        rng = np.random.default_rng(15)
        x = rng.normal(size=133) * 10
        acts = forward(net, x, training=True, rng=np.random.default_rng(0))
        grads = backward(net, acts, 0)
        dropped = np.flatnonzero(acts.dropout_mask[0] == 0)
        # a dropped unit contributes no gradient to its dense row
        assert np.abs(grads.dense_w[dropped]).max() == 0.0


class TestDropout:
    def test_inference_has_no_dropout(self):
        net = small_net()
        x = np.random.default_rng(16).normal(size=133)
        acts = forward(net, x, training=False)
        assert acts.dropout_mask is None
        assert np.array_equal(acts.dense_dropped, acts.dense_out)

    def test_masked_expectation_matches(self):
        # inverted dropout: E[mask * h / keep] = h, checked over many draws
        net = small_net(seed=17)
        x = np.random.default_rng(17).normal(size=133) * 5
        clean = forward(net, x).dense_out[0]
        rng = np.random.default_rng(99)
        draws = 10_000
        total = np.zeros_like(clean)
        for _ in range(draws):
            total += forward(net, x, training=True, rng=rng).dense_dropped[0]
        est = total / draws
        keep = 1.0 - net.dropout_rate
        se = clean * np.sqrt((1 - keep) / (keep * draws))
        active = clean > 0
        assert np.all(np.abs(est - clean)[active] <= 3 * se[active] + 1e-12)


class TestSgd:
    def test_zero_lr_no_change(self):
        net = small_net()
        x = np.random.default_rng(18).normal(size=133)
        grads = backward(net, forward(net, x), 1)
        before = {k: v.copy() for k, v in net.param_arrays().items()}
        sgd_step(net, grads, 0.0)
        for name, arr in net.param_arrays().items():
            assert np.array_equal(arr, before[name])

    def test_arithmetic(self):
        net = small_net()
        grads = backward(net, forward(net, np.zeros(133)), 0)
        for arr in grads.param_arrays().values():
            arr[...] = 2.0
        net.conv1_w[...] = 1.0
        sgd_step(net, grads, 0.001)
        assert net.conv1_w[0, 0] == pytest.approx(0.998, abs=1e-15)

    def test_descent_on_same_sample(self):
        rng = np.random.default_rng(19)
        for trial in range(10):
            net = small_net(seed=trial)
            x = rng.normal(size=133)
            label = int(rng.integers(0, 2))
            acts = forward(net, x)
            before = loss(acts.probs[0], label)
            sgd_step(net, backward(net, acts, label), 1e-4)
            after = loss(forward(net, x).probs[0], label)
            assert after < before

    def test_nonfinite_gradient_raises(self):
        net = small_net()
        grads = backward(net, forward(net, np.zeros(133)), 0)
        grads.dense_w[0, 0] = np.nan
        with pytest.raises(TrainingDivergedError):
            sgd_step(net, grads, 0.001)


class TestModelFile:
    def test_round_trip_bit_exact(self, tmp_path):
        net = small_net(seed=20)
        net.norm_mean = np.random.default_rng(20).normal(size=133)
        net.norm_std = np.abs(np.random.default_rng(21).normal(size=133)) + 0.5
        path = tmp_path / "m.rcfdnet"
        save_model(net, path)
        loaded = load_model(path)
        for name, arr in net.param_arrays().items():
            assert np.array_equal(arr, getattr(loaded, name))
        assert np.array_equal(loaded.norm_mean, net.norm_mean)
        assert np.array_equal(loaded.norm_std, net.norm_std)
        assert loaded.dropout_rate == net.dropout_rate
        assert loaded.rng_seed == net.rng_seed

    def test_round_trip_without_norm(self, tmp_path):
        net = small_net(seed=22)
        path = tmp_path / "m.rcfdnet"
        save_model(net, path)
        loaded = load_model(path)
        assert loaded.norm_mean is None and loaded.norm_std is None

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.rcfdnet"
        save_model(small_net(), path)
        data = bytearray(path.read_bytes())
        data[:8] = b"NOTAMODL"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagicError):
            load_model(path)

    def test_version_mismatch_names_both(self, tmp_path):
        path = tmp_path / "m.rcfdnet"
        save_model(small_net(), path)
        data = bytearray(path.read_bytes())
        data[8:10] = (7).to_bytes(2, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError, match="7.*1"):
            load_model(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.rcfdnet"
        save_model(small_net(), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(TruncatedModelError):
            load_model(path)

    def test_save_load_preserves_predictions(self, tmp_path):
        net = small_net(seed=23)
        rng = np.random.default_rng(23)
        xs = rng.normal(size=(10, 133))
        path = tmp_path / "m.rcfdnet"
        save_model(net, path)
        loaded = load_model(path)
        assert np.array_equal(predict(net, xs), predict(loaded, xs))
        assert np.array_equal(forward(net, xs).probs, forward(loaded, xs).probs)
