"""Forward pass, softmax, loss, exact gradients, and plain training."""

import numpy as np
import pytest
from conftest import central_difference, random_mlp_setup, scaled_gradient_error

from contextbnn import dataset, mlp
from contextbnn.dataset import LabeledDataset
from contextbnn.mlp import (
    Architecture,
    MlpParams,
    TrainConfig,
    backprop_gradient,
    cross_entropy_loss,
    entropy,
    forward_logits,
    predict,
    softmax,
    train,
)


def make_ds(x, y):
    return LabeledDataset(np.asarray(x, float), np.asarray(y, int))


class TestArchitecture:
    def test_param_count(self):
        arch = Architecture(10, (64, 32, 8, 2))
        assert arch.n_params == 10 * 64 + 64 + 64 * 32 + 32 + 32 * 8 + 8 + 8 * 2 + 2

    def test_validation(self):
        with pytest.raises(ValueError):
            Architecture(0, (4, 2))
        with pytest.raises(ValueError):
            Architecture(2, ())
        with pytest.raises(ValueError):
            Architecture(2, (4, 1))
        with pytest.raises(ValueError):
            Architecture(2, (4, 2), activation="softplus")

    def test_theta_length_checked(self):
        with pytest.raises(ValueError):
            MlpParams(Architecture(2, (2,)), np.zeros(5))


class TestForward:
    def test_zero_parameters_give_zero_logits(self):
        arch = Architecture(3, (5, 4, 2))
        params = MlpParams(arch, np.zeros(arch.n_params))
        np.testing.assert_array_equal(forward_logits(params, np.ones(3)), np.zeros(2))

    def test_single_layer_identity(self):
        arch = Architecture(2, (2,))
        theta = np.concatenate([np.eye(2).ravel(), np.zeros(2)])
        params = MlpParams(arch, theta)
        np.testing.assert_array_equal(forward_logits(params, [1.0, 2.0]), [1.0, 2.0])

    def test_batched_matches_single(self):
        # BLAS may order the reductions differently for a batch, so allow ulps
        rng = np.random.default_rng(0)
        params, x, _ = random_mlp_setup(rng)
        batched = forward_logits(params, x)
        for i, row in enumerate(x):
            np.testing.assert_allclose(batched[i], forward_logits(params, row), rtol=1e-13)

    def test_dimension_mismatch(self):
        arch = Architecture(3, (2,))
        params = MlpParams(arch, np.zeros(arch.n_params))
        with pytest.raises(ValueError):
            forward_logits(params, np.zeros(4))


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_array_equal(softmax([0.0, 0.0]), [0.5, 0.5])

    def test_extreme_logits_do_not_overflow(self):
        p = softmax([1000.0, 0.0])
        assert np.isfinite(p).all()
        assert p[0] == pytest.approx(1.0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            z = rng.normal(size=4)
            c = rng.normal()
            np.testing.assert_allclose(softmax(z + c), softmax(z), atol=1e-12)

    def test_valid_distribution_for_huge_spread(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            z = rng.uniform(-700, 700, size=3)
            p = softmax(z)
            assert (p >= 0).all()
            assert p.sum() == pytest.approx(1.0, abs=1e-12)


class TestCrossEntropyLoss:
    def test_exact_one_hot_output_has_zero_loss(self):
        # saturated logits make the softmax exactly one-hot in float64
        arch = Architecture(1, (2,))
        theta = np.array([0.0, 0.0, 800.0, -800.0])  # W = 0, b = (800, -800)
        params = MlpParams(arch, theta)
        ds = make_ds([[0.3], [0.7]], [0, 0])
        assert cross_entropy_loss(params, ds) == 0.0

    def test_zero_parameters_give_n_log2(self):
        arch = Architecture(4, (3, 2))
        params = MlpParams(arch, np.zeros(arch.n_params))
        n = 7
        ds = make_ds(np.linspace(0, 1, 4 * n).reshape(n, 4), [0, 1] * 3 + [0])
        assert cross_entropy_loss(params, ds) == pytest.approx(n * np.log(2), rel=1e-12)

    def test_loss_decreases_during_training(self):
        # linearly separable toy set
        rng = np.random.default_rng(3)
        x = np.vstack([rng.normal(-1.0, 0.3, size=(40, 2)), rng.normal(1.0, 0.3, size=(40, 2))])
        y = np.array([0] * 40 + [1] * 40)
        losses = []
        train(
            Architecture(2, (4, 2)),
            make_ds(x, y),
            TrainConfig(learning_rate=0.1, epochs=60, batch_size=16, seed=0),
            on_epoch=lambda _, loss: losses.append(loss),
        )
        assert losses[-1] < 0.2 * losses[0]
        # monotone trend over epoch averages: tolerate rare small bumps
        drops = np.diff(losses) < 1e-9
        assert drops.mean() > 0.9

    def test_label_out_of_range_rejected(self):
        arch = Architecture(2, (2,))
        params = MlpParams(arch, np.zeros(arch.n_params))
        with pytest.raises(ValueError):
            cross_entropy_loss(params, make_ds([[0.0, 0.0]], [2]))


class TestBackpropGradient:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(50):
            params, x, y = random_mlp_setup(rng)
            ds = make_ds(x, y)
            grad = backprop_gradient(params, ds)
            idx = rng.choice(params.theta.size, size=min(20, params.theta.size), replace=False)
            fd = central_difference(
                lambda t: cross_entropy_loss(MlpParams(params.arch, t), ds), params.theta, idx
            )
            worst = max(worst, scaled_gradient_error(grad[idx], fd))
        assert worst < 1e-5

    def test_tanh_network_gradient(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            params, x, y = random_mlp_setup(rng, activation="tanh")
            ds = make_ds(x, y)
            grad = backprop_gradient(params, ds)
            idx = rng.choice(params.theta.size, size=min(20, params.theta.size), replace=False)
            fd = central_difference(
                lambda t: cross_entropy_loss(MlpParams(params.arch, t), ds), params.theta, idx
            )
            assert scaled_gradient_error(grad[idx], fd) < 1e-5

    def test_zero_loss_point_has_vanishing_gradient(self):
        arch = Architecture(1, (2,))
        params = MlpParams(arch, np.array([0.0, 0.0, 800.0, -800.0]))
        ds = make_ds([[0.5]], [0])
        assert np.linalg.norm(backprop_gradient(params, ds)) < 1e-6

    def test_duplicated_dataset_doubles_gradient(self):
        rng = np.random.default_rng(6)
        params, x, y = random_mlp_setup(rng)
        single = backprop_gradient(params, make_ds(x, y))
        doubled = backprop_gradient(params, make_ds(np.vstack([x, x]), np.concatenate([y, y])))
        np.testing.assert_allclose(doubled, 2.0 * single, rtol=0, atol=1e-12)


class TestTrain:
    def test_zero_epochs_returns_initialization(self):
        arch = Architecture(2, (4, 2))
        ds = dataset.sample_rhombus_dataset(20, seed=0)
        cfg = TrainConfig(epochs=0, seed=3)
        out = train(arch, ds, cfg)
        np.testing.assert_array_equal(out.theta, mlp.init_params(arch, seed=3).theta)

    def test_same_seed_is_bit_reproducible(self):
        arch = Architecture(2, (4, 2))
        ds = dataset.sample_rhombus_dataset(100, seed=1)
        cfg = TrainConfig(learning_rate=0.1, epochs=20, batch_size=16, seed=7)
        a = train(arch, ds, cfg)
        b = train(arch, ds, cfg)
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_rhombus_task_reaches_90_percent(self):
        train_ds = dataset.sample_rhombus_dataset(2000, seed=0)
        test_ds = dataset.sample_rhombus_dataset(4000, seed=555)
        params = train(
            Architecture(2, (8, 4, 2)),
            train_ds,
            TrainConfig(learning_rate=0.1, epochs=200, batch_size=32, seed=0),
        )
        predicted = np.argmax(forward_logits(params, test_ds.features), axis=1)
        assert (predicted == test_ds.labels).mean() > 0.9

    def test_contextuality_task_hits_preregistered_band(self):
        # baseline runs over seeds 0..3 landed in [0.940, 0.956]; the band
        # below has margin for platform variation
        train_ds = dataset.sample_behaviour_dataset(500, seed=0, class_balance=0.5)
        test_ds = dataset.sample_behaviour_dataset(4000, seed=424242, class_balance=0.5)
        params = train(
            Architecture(10, (64, 32, 8, 2)),
            train_ds,
            TrainConfig(learning_rate=0.05, epochs=300, batch_size=32, seed=0),
        )
        predicted = np.argmax(forward_logits(params, test_ds.features), axis=1)
        acc = (predicted == test_ds.labels).mean()
        assert 0.90 <= acc <= 0.99

    def test_divergence_guard(self):
        # step large enough that the parameter scale overflows float64
        ds = dataset.sample_rhombus_dataset(50, seed=2)
        with pytest.raises(mlp.TrainingDivergenceError):
            train(
                Architecture(2, (8, 2)),
                ds,
                TrainConfig(learning_rate=1e200, epochs=5, batch_size=8, seed=0),
            )


class TestPredict:
    def test_uniform_output_entropy(self):
        arch = Architecture(2, (2,))
        params = MlpParams(arch, np.zeros(arch.n_params))
        cls, probs = predict(params, [0.1, 0.2])
        assert cls == 0  # tie broken toward the lowest index
        np.testing.assert_array_equal(probs, [0.5, 0.5])
        assert entropy(probs) == pytest.approx(np.log(2), abs=1e-15)

    def test_one_hot_entropy_is_zero(self):
        assert entropy([1.0, 0.0]) == 0.0

    def test_point_nine_entropy(self):
        # -0.9 ln 0.9 - 0.1 ln 0.1 evaluated directly
        expected = -(0.9 * np.log(0.9) + 0.1 * np.log(0.1))
        assert expected == pytest.approx(0.3251, abs=5e-5)
        assert entropy([0.9, 0.1]) == pytest.approx(expected, abs=1e-15)

    def test_entropy_extremes(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            p = rng.dirichlet(np.ones(3))
            h = entropy(p)
            assert -1e-12 <= h <= np.log(3) + 1e-12
        assert entropy([1 / 3, 1 / 3, 1 / 3]) == pytest.approx(np.log(3), abs=1e-12)


class TestCheckpoint:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        params, _, _ = random_mlp_setup(rng)
        path = tmp_path / "net.ckpt"
        mlp.save_params(params, path, seed=11)
        back = mlp.load_params(path)
        assert back.arch == params.arch
        np.testing.assert_array_equal(back.theta, params.theta)

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.txt"
        path.write_text("not a checkpoint\n")
        with pytest.raises(ValueError):
            mlp.load_params(path)
