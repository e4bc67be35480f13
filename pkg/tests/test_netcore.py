import numpy as np
import pytest

from sequifi.corpus import EmotionLabel, Sample
from sequifi.netcore import (
    Architecture,
    TrainConfig,
    adam_step,
    backward,
    forward,
    init_adam,
    init_params,
    load_checkpoint,
    loss,
    predict_classes,
    save_checkpoint,
    train,
)
from sequifi.netcore.network import BN_EPS, TRAIN_MODE
from sequifi.netcore.training import batch_from_samples
from sequifi.rng import substream

TINY = Architecture(input_dim=8, lstm_units=(4, 4), dense_units=(3, 3, 3, 3))


def tiny_params(seed=0, perturb=0.1):
    params = init_params(TINY, seed)
    rng = np.random.default_rng(seed + 1000)
    for name in params.tensors:
        params.tensors[name] = params.tensors[name] + perturb * rng.normal(
            size=params.tensors[name].shape
        )
    return params


def random_batch(seed=0, batch=4, steps=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, steps, TINY.input_dim))
    lengths = rng.integers(1, steps + 1, size=batch)
    lengths[0] = steps
    y = rng.integers(0, 4, size=batch)
    return x, lengths, y


def separable_samples(n_per_class=80, seed=0):
    """Two far-apart Gaussian clusters mapped to labels 0 and 1."""
    rng = np.random.default_rng(seed)
    samples = []
    for label, sign in ((EmotionLabel.HAPPY, 1.0), (EmotionLabel.ANGRY, -1.0)):
        center = np.zeros(8)
        center[0] = 4.0 * sign
        for i in range(n_per_class):
            samples.append(
                Sample(
                    id=f"{label.as_string}{i}",
                    label=label,
                    dataset_id="toy",
                    features=center + 0.5 * rng.normal(size=8),
                )
            )
    return samples


class TestForward:
    def test_rows_sum_to_one(self):
        params = tiny_params()
        x, lengths, _ = random_batch()
        probs, _ = forward(params, x, lengths=lengths)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs > 0) and np.all(probs < 1)

    def test_zero_head_gives_uniform(self):
        params = tiny_params()
        params.tensors["head.w"][:] = 0.0
        params.tensors["head.b"][:] = 0.0
        x, lengths, _ = random_batch()
        probs, _ = forward(params, x, lengths=lengths)
        assert np.all(probs == 0.25)

    def test_eval_forward_deterministic(self):
        params = tiny_params()
        x, lengths, _ = random_batch()
        a, _ = forward(params, x, lengths=lengths)
        b, _ = forward(params, x, lengths=lengths)
        assert np.array_equal(a, b)

    def test_shape_mismatch_rejected(self):
        params = tiny_params()
        with pytest.raises(ValueError):
            forward(params, np.zeros((2, 1, 5)))

    def test_non_finite_input_rejected(self):
        params = tiny_params()
        x = np.zeros((2, 1, 8))
        x[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            forward(params, x)

    def test_batch_norm_standardizes_train_batches(self):
        # Mean is exactly centred for every feature. The variance property
        # needs the feature to actually vary in the batch: for raw batch
        # variance v, var(xhat) = v / (v + eps), so features with v >= 1e-4
        # are standardized to within 1e-4 of unit variance.
        params = init_params(Architecture(input_dim=8), seed=0)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(32, 1, 8))
        _, cache = forward(params, x, mode=TRAIN_MODE, rng=substream(0, "d"), dropout_rate=0.0)
        checked = 0
        for block in cache["dense"]:
            xhat = block["xhat"]
            assert np.all(np.abs(xhat.mean(axis=0)) <= 1e-6)
            lively = 1.0 / block["inv_std"] ** 2 - BN_EPS >= 1e-4
            assert np.all(np.abs(xhat.var(axis=0)[lively] - 1.0) <= 1e-4)
            checked += int(lively.sum())
        assert checked >= 50  # the property is exercised on most features


class TestLoss:
    def test_perfect_prediction_zero_loss(self):
        params = tiny_params()
        probs = np.eye(4)
        labels = np.arange(4)
        assert loss(probs, labels, params, l2_lambda=0.0) == 0.0

    def test_uniform_prediction_ln4(self):
        params = tiny_params()
        probs = np.full((6, 4), 0.25)
        labels = np.zeros(6, dtype=int)
        assert loss(probs, labels, params, l2_lambda=0.0) == pytest.approx(np.log(4.0), abs=1e-12)

    def test_l2_of_ones_matrix(self):
        # one 2x2 weight matrix of ones, everything else zero, perfect CE
        arch = Architecture(input_dim=3, lstm_units=(2,), dense_units=(2, 2))
        params = init_params(arch, 0)
        for name in arch.weight_matrix_names():
            params.tensors[name][:] = 0.0
        assert params.tensors["dense2.w"].shape == (2, 2)
        params.tensors["dense2.w"][:] = 1.0
        probs = np.eye(4)[[0, 1]]
        assert loss(probs, [0, 1], params, l2_lambda=0.5) == pytest.approx(2.0, abs=1e-12)

    def test_probability_floor_keeps_loss_finite(self):
        params = tiny_params()
        probs = np.array([[1.0, 0.0, 0.0, 0.0]])
        value = loss(probs, [1], params, l2_lambda=0.0)
        assert np.isfinite(value)
        assert value == pytest.approx(-np.log(1e-12))


class TestBackward:
    def loss_and_cache(self, params, x, y, lengths, seed, dropout, bn_batch):
        rng = substream(seed, "mask")
        probs, cache = forward(
            params, x, mode=TRAIN_MODE, rng=rng, dropout_rate=dropout,
            lengths=lengths, bn_batch_stats=bn_batch,
        )
        return loss(probs, y, params, l2_lambda=1e-4), cache

    @pytest.mark.parametrize("trial,dropout,bn_batch", [(0, 0.0, True), (1, 0.2, True), (3, 0.2, False)])
    def test_matches_finite_differences(self, trial, dropout, bn_batch):
        params = tiny_params(seed=trial)
        x, lengths, y = random_batch(seed=trial)
        _, cache = self.loss_and_cache(params, x, y, lengths, trial, dropout, bn_batch)
        grads = backward(cache, y, l2_lambda=1e-4)
        h = 1e-4
        worst = 0.0
        for name, arr in params.tensors.items():
            flat = arr.ravel()
            g = grads[name].ravel()
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                up, _ = self.loss_and_cache(params, x, y, lengths, trial, dropout, bn_batch)
                flat[j] = orig - h
                down, _ = self.loss_and_cache(params, x, y, lengths, trial, dropout, bn_batch)
                flat[j] = orig
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(g[j] - fd) / max(1.0, abs(g[j]), abs(fd)))
        assert worst <= 1e-4

    def test_dropped_unit_blocks_downstream_gradient(self):
        params = tiny_params(seed=9)
        x = np.random.default_rng(9).normal(size=(1, 1, 8))
        y = np.array([2])
        rng = substream(9, "mask")
        probs, cache = forward(params, x, mode=TRAIN_MODE, rng=rng, dropout_rate=0.5)
        mask0 = cache["dense"][0]["mask"][0]
        dropped = np.flatnonzero(mask0 == 0.0)
        assert dropped.size > 0, "seed must drop at least one unit"
        grads = backward(cache, y)
        for unit in dropped:
            assert np.all(grads["dense2.w"][unit, :] == 0.0)

    def test_l2_gradient_is_2_lambda_w(self):
        params = tiny_params(seed=4)
        x, lengths, y = random_batch(seed=4)
        _, cache = self.loss_and_cache(params, x, y, lengths, 4, 0.0, True)
        bare = backward(cache, y, l2_lambda=0.0)
        with_l2 = backward(cache, y, l2_lambda=0.01)
        for name in TINY.weight_matrix_names():
            np.testing.assert_allclose(
                with_l2[name] - bare[name], 2 * 0.01 * params.tensors[name], atol=1e-12
            )
        np.testing.assert_array_equal(with_l2["head.b"], bare["head.b"])

    def test_l2_on_recurrent_flag(self):
        params = tiny_params(seed=4)
        x, lengths, y = random_batch(seed=4)
        _, cache = self.loss_and_cache(params, x, y, lengths, 4, 0.0, True)
        bare = backward(cache, y, l2_lambda=0.0)
        no_rec = backward(cache, y, l2_lambda=0.01, l2_on_recurrent=False)
        np.testing.assert_array_equal(no_rec["lstm1.w_h"], bare["lstm1.w_h"])
        assert not np.array_equal(no_rec["lstm1.w_x"], bare["lstm1.w_x"])


class TestAdam:
    def test_first_step_magnitude(self):
        params = tiny_params()
        grads = {name: np.full_like(arr, 0.5) for name, arr in params.tensors.items()}
        state = init_adam(params)
        updated, new_state = adam_step(params, grads, state, learning_rate=1e-3)
        for name in params.tensors:
            delta = params.tensors[name] - updated.tensors[name]
            expected = 1e-3 * 0.5 / (0.5 + 1e-8)
            np.testing.assert_allclose(delta, expected, rtol=1e-12)
        assert new_state.t == 1

    def test_zero_gradient_keeps_params(self):
        params = tiny_params()
        grads = {name: np.zeros_like(arr) for name, arr in params.tensors.items()}
        updated, state = adam_step(params, grads, init_adam(params), 1e-3)
        for name in params.tensors:
            assert np.array_equal(updated.tensors[name], params.tensors[name])
        assert state.t == 1

    def test_deterministic(self):
        params = tiny_params()
        rng = np.random.default_rng(8)
        grads = {name: rng.normal(size=arr.shape) for name, arr in params.tensors.items()}
        a, _ = adam_step(params, grads, init_adam(params), 1e-3)
        b, _ = adam_step(params, grads, init_adam(params), 1e-3)
        for name in params.tensors:
            assert np.array_equal(a.tensors[name], b.tensors[name])

    def test_non_finite_gradient_names_tensor(self):
        params = tiny_params()
        grads = {name: np.zeros_like(arr) for name, arr in params.tensors.items()}
        grads["lstm2.w_h"][0, 0] = np.nan
        with pytest.raises(ValueError, match="lstm2.w_h"):
            adam_step(params, grads, init_adam(params), 1e-3)


class TestTrain:
    def test_separable_toy_reaches_98(self):
        samples = separable_samples()
        params = init_params(Architecture(input_dim=8), seed=0)
        cfg = TrainConfig(epochs=30, seed=0)
        trained, log = train(params, samples, cfg)
        x, lengths, y = batch_from_samples(samples)
        acc = (predict_classes(trained, x, lengths) == y).mean()
        assert acc >= 0.98
        assert log.num_epochs == 30

    def test_loss_non_increasing_smoothed(self):
        samples = separable_samples()
        params = init_params(Architecture(input_dim=8), seed=0)
        _, log = train(params, samples, TrainConfig(epochs=30, seed=0))
        losses = np.array(log.losses)
        smoothed = np.convolve(losses, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(smoothed) <= 1e-9)

    def test_zero_epochs_is_identity(self):
        samples = separable_samples(n_per_class=4)
        params = tiny_params()
        trained, log = train(params, samples, TrainConfig(epochs=0, seed=0))
        for name in params.tensors:
            assert np.array_equal(trained.tensors[name], params.tensors[name])
        assert log.num_epochs == 0

    def test_bitwise_deterministic(self):
        samples = separable_samples(n_per_class=12)
        params = tiny_params()
        cfg = TrainConfig(epochs=3, seed=5)
        a, _ = train(params, samples, cfg)
        b, _ = train(params, samples, cfg)
        for name in a.tensors:
            assert np.array_equal(a.tensors[name], b.tensors[name])
        for name in a.stats:
            assert np.array_equal(a.stats[name], b.stats[name])

    def test_batch_sizes_follow_config(self):
        samples = separable_samples(n_per_class=20)  # 40 total
        params = tiny_params()
        _, log = train(params, samples, TrainConfig(epochs=1, batch_size=32, seed=0))
        assert log.epochs[0].batch_sizes == [32, 8]

    def test_empty_sample_set_errors(self):
        with pytest.raises(ValueError):
            train(tiny_params(), [], TrainConfig(epochs=1, seed=0))

    def test_all_params_finite_after_training(self):
        samples = separable_samples(n_per_class=16)
        trained, _ = train(tiny_params(), samples, TrainConfig(epochs=5, seed=0))
        for arr in list(trained.tensors.values()) + list(trained.stats.values()):
            assert np.all(np.isfinite(arr))
        for k in range(1, 5):
            assert np.all(trained.stats[f"bn{k}.var"] > 0)


class TestPredict:
    def test_uniform_net_predicts_class_zero(self):
        params = tiny_params()
        params.tensors["head.w"][:] = 0.0
        params.tensors["head.b"][:] = 0.0
        x, lengths, _ = random_batch()
        assert np.all(predict_classes(params, x, lengths) == 0)

    def test_argmax_row(self):
        probs = np.array([[0.1, 0.7, 0.1, 0.1]])
        assert np.argmax(probs, axis=1)[0] == 1

    def test_logit_shift_invariance(self):
        params = tiny_params()
        x, lengths, _ = random_batch()
        before = predict_classes(params, x, lengths)
        params.tensors["head.b"] = params.tensors["head.b"] + 3.7
        after = predict_classes(params, x, lengths)
        assert np.array_equal(before, after)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        samples = separable_samples(n_per_class=8)
        params, _ = train(tiny_params(), samples, TrainConfig(epochs=2, seed=1))
        state = init_adam(params)
        state.m["head.w"] += 0.125
        state.t = 7
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, params, state)
        loaded, loaded_state = load_checkpoint(path)
        assert loaded.arch == params.arch
        for name in params.tensors:
            assert np.array_equal(loaded.tensors[name], params.tensors[name])
        for name in params.stats:
            assert np.array_equal(loaded.stats[name], params.stats[name])
        assert loaded_state.t == 7
        assert np.array_equal(loaded_state.m["head.w"], state.m["head.w"])

    def test_checkpoint_without_optimizer(self, tmp_path):
        params = tiny_params()
        path = tmp_path / "p.npz"
        save_checkpoint(path, params)
        loaded, state = load_checkpoint(path)
        assert state is None
        assert np.array_equal(loaded.tensors["head.w"], params.tensors["head.w"])
