import math

import numpy as np
import pytest

from jamcodec import nn
from jamcodec.errors import InvalidSpecError, ShapeError, TrainingDivergedError


def eval_loss(model, x, loss_kind="mse", seed=3):
    if loss_kind == "vae":
        mu, logvar = model.encode(x)
        eps = nn.derived_rng(seed).standard_normal(mu.shape)
        z = mu + np.exp(0.5 * np.clip(logvar, -10, 10)) * eps
        return nn.mse_loss(x, model.decode(z)) + nn.gaussian_kl(mu, logvar)
    recon, _ = nn.forward(model, x)
    return nn.mse_loss(x, recon)


def finite_difference_fraction(model, x, loss_kind="mse", h=1e-4, tol=1e-4, seed=3):
    """Fraction of parameters whose backprop gradient matches central FD."""
    _, grads = nn.backprop(model, x, loss_kind=loss_kind, seed=seed)
    ok = total = 0
    for pi, p in enumerate(model.parameters()):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            lp = eval_loss(model, x, loss_kind, seed)
            p[idx] = orig - h
            lm = eval_loss(model, x, loss_kind, seed)
            p[idx] = orig
            fd = (lp - lm) / (2 * h)
            g = grads[pi][idx]
            rel = abs(g - fd) / max(abs(g), abs(fd), 1e-8)
            total += 1
            ok += rel <= tol
    return ok / total


class TestForward:
    def test_identity_dense(self):
        model = nn.build_autoencoder(3, (3,), 3, seed=0)
        # single path: encoder Dense(3,3,relu), Dense(3,3,linear); decoder mirrors
        for layer in model.encoder + model.decoder:
            layer.set_params([np.eye(3), np.zeros(3)])
        x = np.abs(np.random.default_rng(0).standard_normal((4, 3)))
        recon, latent = nn.forward(model, x)
        assert np.allclose(recon, x, atol=1e-12)
        assert np.allclose(latent, x, atol=1e-12)

    def test_zero_weights_relu(self):
        model = nn.build_autoencoder(5, (4,), 2, seed=0)
        for layer in model.encoder + model.decoder:
            layer.set_params([np.zeros_like(layer.params[0]), np.zeros_like(layer.params[1])])
        recon, latent = nn.forward(model, np.ones((2, 5)))
        assert np.all(latent == 0.0) and np.all(recon == 0.0)

    def test_scalar_loop_oracle(self):
        # element-by-element reference for a 2-layer encoder, batch of 3
        model = nn.build_autoencoder(4, (3,), 2, seed=9)
        x = np.random.default_rng(1).uniform(0, 1, (3, 4))
        recon, latent = nn.forward(model, x)

        def dense_scalar(w, b, inp, act):
            out = []
            for j in range(w.shape[1]):
                acc = b[j]
                for i in range(w.shape[0]):
                    acc += inp[i] * w[i, j]
                out.append(max(acc, 0.0) if act == "relu" else acc)
            return out

        for n in range(3):
            h = list(x[n])
            for layer in model.encoder:
                h = dense_scalar(layer.w, layer.b, h, layer.activation)
            assert np.max(np.abs(np.array(h) - latent[n])) < 1e-6
            for layer in model.decoder:
                h = dense_scalar(layer.w, layer.b, h, layer.activation)
            assert np.max(np.abs(np.array(h) - recon[n])) < 1e-6

    def test_latent_dimension(self):
        model = nn.build_autoencoder(16, (8, 8), 5, seed=0)
        _, latent = nn.forward(model, np.zeros((7, 16)))
        assert latent.shape == (7, 5)

    def test_shape_error(self):
        model = nn.build_autoencoder(8, (4,), 2, seed=0)
        with pytest.raises(ShapeError):
            nn.forward(model, np.zeros((2, 9)))

    def test_variational_forward_deterministic_without_seed(self):
        model = nn.build_autoencoder(6, (5,), 2, seed=1, variational=True)
        x = np.random.default_rng(0).uniform(0, 1, (3, 6))
        r1, l1 = nn.forward(model, x)
        r2, l2 = nn.forward(model, x)
        assert np.array_equal(r1, r2) and np.array_equal(l1, l2)


class TestBackprop:
    def test_linear_model_closed_form(self):
        # encoder = single linear map W (no decoder): recon = x W
        rng = np.random.default_rng(4)
        W = rng.standard_normal((6, 6))
        layer = nn.Dense(6, 6, activation="linear")
        layer.set_params([W, np.zeros(6)])
        model = nn.AeModel([layer], [], latent_dim=6, input_dim=6)
        x = rng.standard_normal((5, 6))
        loss, grads = nn.backprop(model, x)
        recon = x @ W
        expect = x.T @ (2.0 * (recon - x) / x.size)
        assert np.max(np.abs(grads[0] - expect)) < 1e-8

    def test_zero_loss_zero_gradients(self):
        model = nn.build_autoencoder(3, (3,), 3, seed=0)
        for layer in model.encoder + model.decoder:
            layer.set_params([np.eye(3), np.zeros(3)])
        x = np.abs(np.random.default_rng(2).standard_normal((4, 3)))
        loss, grads = nn.backprop(model, x)
        assert loss == 0.0
        assert all(np.all(g == 0.0) for g in grads)

    def test_dense_fd(self):
        model = nn.build_autoencoder(10, (7, 5), 3, seed=7)
        x = np.random.default_rng(107).uniform(0, 1, (6, 10))
        assert finite_difference_fraction(model, x) >= 0.99

    def test_conv_stride2_fd(self):
        model = nn.build_autoencoder(16, (6,), 3, seed=5, conv_front=((2, 4, 3, 2),))
        x = np.random.default_rng(2).uniform(0, 1, (4, 16))
        assert finite_difference_fraction(model, x) >= 0.99

    def test_conv_stride1_fd(self):
        model = nn.build_autoencoder(12, (5,), 2, seed=6, conv_front=((1, 3, 3, 1),))
        x = np.random.default_rng(3).uniform(0, 1, (3, 12))
        assert finite_difference_fraction(model, x) >= 0.99

    def test_vae_loss_fd(self):
        model = nn.build_autoencoder(8, (6,), 3, seed=8, variational=True)
        x = np.random.default_rng(4).uniform(0, 1, (5, 8))
        assert finite_difference_fraction(model, x, loss_kind="vae") >= 0.99


class TestAdam:
    def test_first_step_magnitude(self):
        p = np.array([1.0, -2.0, 0.5])
        g = np.array([0.3, -0.7, 2.0])
        state = nn.AdamState([p], lr=0.01)
        new = nn.adam_step([p], [g], state)
        step = p - new[0]
        expect = 0.01 * g / (np.abs(g) + 1e-8)
        assert np.max(np.abs(step - expect)) < 1e-12

    def test_zero_gradient_no_move(self):
        p = np.array([1.0, 2.0])
        state = nn.AdamState([p], lr=0.1)
        new = nn.adam_step([p], [np.zeros(2)], state)
        assert np.array_equal(new[0], p)

    def test_three_step_trace_on_quadratic(self):
        # independent scalar re-implementation of bias-corrected Adam
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        w_ref, m, v = 1.0, 0.0, 0.0
        trace = []
        for t in range(1, 4):
            g = 2.0 * w_ref
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w_ref -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
            trace.append(w_ref)

        p = np.array([1.0])
        state = nn.AdamState([p], lr=lr)
        got = []
        for _ in range(3):
            p = nn.adam_step([p], [2.0 * p], state)[0]
            got.append(float(p[0]))
        assert np.max(np.abs(np.array(got) - np.array(trace))) < 1e-12

    def test_state_shapes_validated(self):
        state = nn.AdamState([np.zeros(3)])
        with pytest.raises(ShapeError):
            nn.adam_step([np.zeros(3), np.zeros(2)], [np.zeros(3), np.zeros(2)], state)


class TestLosses:
    def test_mse_identical(self):
        assert nn.mse_loss(np.ones((3, 4)), np.ones((3, 4))) == 0.0

    def test_mse_unit_offset(self):
        assert nn.mse_loss(np.zeros((2, 5)), np.ones((2, 5))) == 1.0

    def test_mse_scalar_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        acc = 0.0
        for i in range(3):
            for j in range(4):
                acc += (a[i, j] - b[i, j]) ** 2
        assert abs(nn.mse_loss(a, b) - acc / 12) < 1e-12

    def test_kl_zero_at_prior(self):
        assert nn.gaussian_kl(np.zeros((4, 3)), np.zeros((4, 3))) == 0.0

    def test_kl_closed_form_unit_mean(self):
        assert abs(nn.gaussian_kl(np.array([[1.0]]), np.array([[0.0]])) - 0.5) < 1e-12

    def test_kl_quadrature_oracle(self):
        # numerically integrate KL(N(mu, s^2) || N(0,1)) on a dense grid
        for mu, logvar in [(0.7, 0.3), (-1.2, -0.8), (0.0, 1.5)]:
            sigma = math.exp(0.5 * logvar)
            lo = min(mu - 12 * sigma, -12.0)
            hi = max(mu + 12 * sigma, 12.0)
            t = np.linspace(lo, hi, 200_001)
            p = np.exp(-0.5 * ((t - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
            q = np.exp(-0.5 * t**2) / math.sqrt(2 * math.pi)
            integrand = np.where(p > 0, p * (np.log(p + 1e-300) - np.log(q + 1e-300)), 0.0)
            expect = np.trapezoid(integrand, t)
            got = nn.gaussian_kl(np.array([[mu]]), np.array([[logvar]]))
            assert abs(got - expect) < 1e-3

    def test_vae_total_is_mse_plus_kl(self):
        model = nn.build_autoencoder(6, (5,), 2, seed=3, variational=True)
        x = np.random.default_rng(1).uniform(0, 1, (4, 6))
        seed = 17
        loss, _ = nn.backprop(model, x, loss_kind="vae", seed=seed)
        mu, logvar = model.encode(x)
        z = nn.reparameterize(mu, logvar, seed)
        expect = nn.mse_loss(x, model.decode(z)) + nn.gaussian_kl(mu, logvar)
        assert abs(loss - expect) < 1e-12


class TestReparameterize:
    def test_sigma_zero_limit(self):
        mu = np.array([[1.0, -2.0]])
        z = nn.reparameterize(mu, np.full((1, 2), -50.0), seed=0)
        # logvar clamps to -10, so sigma = e^-5: z stays within ~1e-2 of mu
        assert np.max(np.abs(z - mu)) < 0.05

    def test_seed_repeatability(self):
        mu = np.zeros((4, 3))
        logvar = np.zeros((4, 3))
        assert np.array_equal(nn.reparameterize(mu, logvar, 5), nn.reparameterize(mu, logvar, 5))
        assert not np.array_equal(nn.reparameterize(mu, logvar, 5), nn.reparameterize(mu, logvar, 6))

    def test_moments_monte_carlo(self):
        mu = np.full((100_000, 1), 0.7)
        logvar = np.full((100_000, 1), math.log(2.25))
        z = nn.reparameterize(mu, logvar, seed=11)
        assert abs(np.mean(z) - 0.7) < 0.01 * 0.7 + 0.01
        assert abs(np.var(z) - 2.25) < 0.01 * 2.25 + 0.01


def plane_data(n, seed=0):
    """Points on a random 2-D plane embedded in 10-D."""
    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((2, 10))
    coords = rng.uniform(-1, 1, (n, 2))
    return coords @ basis


class TestTrainAutoencoder:
    def test_rank_limited_linear_data(self):
        X = plane_data(300, seed=2)
        model = nn.build_autoencoder(10, (8,), 2, seed=1, hidden_activation="linear")
        budget = nn.TrainBudget(screen_epochs=10, retrain_epochs_max=600,
                                early_stop_patience=50, batch_size=64, seed=0, lr=5e-3)
        model, history = nn.train_autoencoder(model, X[:240], X[240:], budget)
        assert min(h["val_loss"] for h in history) < 1e-3

    def test_patience_zero_stops_at_first_non_improvement(self):
        X = np.random.default_rng(0).uniform(0, 1, (40, 6))
        model = nn.build_autoencoder(6, (4,), 2, seed=0)
        budget = nn.TrainBudget(screen_epochs=1, retrain_epochs_max=500,
                                early_stop_patience=0, batch_size=8, seed=0, lr=1e-3)
        _, history = nn.train_autoencoder(model, X[:30], X[30:], budget)
        vals = [h["val_loss"] for h in history]
        # every epoch but the last must have strictly improved on the best so far
        for i in range(1, len(vals) - 1):
            assert vals[i] < min(vals[:i])
        assert vals[-1] >= min(vals[:-1])

    def test_identical_seeds_identical_histories(self):
        X = np.random.default_rng(1).uniform(0, 1, (50, 5))
        budget = nn.TrainBudget(screen_epochs=1, retrain_epochs_max=30,
                                early_stop_patience=5, batch_size=16, seed=4, lr=1e-3)
        _, h1 = nn.train_autoencoder(nn.build_autoencoder(5, (4,), 2, seed=9), X[:40], X[40:], budget)
        _, h2 = nn.train_autoencoder(nn.build_autoencoder(5, (4,), 2, seed=9), X[:40], X[40:], budget)
        assert h1 == h2

    def test_divergence_raises_with_epoch(self):
        X = np.random.default_rng(2).uniform(0, 1, (40, 4)) * 1e3
        model = nn.build_autoencoder(4, (4,), 2, seed=0, hidden_activation="linear")
        budget = nn.TrainBudget(screen_epochs=1, retrain_epochs_max=50,
                                early_stop_patience=50, batch_size=8, seed=0, lr=1e200)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(TrainingDivergedError) as err:
                nn.train_autoencoder(model, X[:30], X[30:], budget)
        assert err.value.last_finite_epoch >= -1

    def test_returns_best_checkpoint(self):
        X = np.random.default_rng(3).uniform(0, 1, (60, 6))
        model = nn.build_autoencoder(6, (5,), 2, seed=2)
        budget = nn.TrainBudget(screen_epochs=1, retrain_epochs_max=40,
                                early_stop_patience=10, batch_size=16, seed=1, lr=3e-3)
        model, history = nn.train_autoencoder(model, X[:45], X[45:], budget)
        recon, _ = nn.forward(model, X[45:])
        best_val = min(h["val_loss"] for h in history)
        assert abs(nn.mse_loss(X[45:], recon) - best_val) < 1e-9

    def test_empty_split_rejected(self):
        model = nn.build_autoencoder(4, (3,), 2, seed=0)
        budget = nn.TrainBudget()
        with pytest.raises(InvalidSpecError):
            nn.train_autoencoder(model, np.zeros((0, 4)), np.zeros((5, 4)), budget)

    def test_loss_monotone_on_convex_problem(self):
        # full-batch linear AE: training loss non-increasing after epoch 5
        # in at least 19 of 20 seeded runs
        X = plane_data(64, seed=5)
        good = 0
        for seed in range(20):
            model = nn.build_autoencoder(10, (6,), 2, seed=seed, hidden_activation="linear")
            budget = nn.TrainBudget(screen_epochs=1, retrain_epochs_max=60,
                                    early_stop_patience=60, batch_size=64, seed=seed, lr=1e-3)
            _, history = nn.train_autoencoder(model, X, X, budget, early_stop=False)
            losses = [h["train_loss"] for h in history][5:]
            good += all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
        assert good >= 19

    def test_reconstruction_lower_bound(self):
        # latent >= input dim, linear layers, <= latent_dim independent points
        rng = np.random.default_rng(7)
        X = rng.standard_normal((4, 4))
        model = nn.build_autoencoder(4, (6,), 4, seed=3, hidden_activation="linear")
        budget = nn.TrainBudget(screen_epochs=1, retrain_epochs_max=4000,
                                early_stop_patience=4000, batch_size=4, seed=0, lr=1e-2)
        model, history = nn.train_autoencoder(model, X, X, budget, early_stop=False)
        assert min(h["val_loss"] for h in history) < 1e-6


class TestModelFile:
    def test_roundtrip(self, tmp_path):
        model = nn.build_autoencoder(12, (8, 6), 3, seed=4)
        model.metadata = {"train_scenarios": [0, 1], "norm_stats": {"min": [0.0], "max": [1.0]}}
        x = np.random.default_rng(0).uniform(0, 1, (5, 12))
        recon, _ = nn.forward(model, x)
        path = tmp_path / "model.aem"
        nn.save_model(path, model)
        back = nn.load_model(path)
        recon2, _ = nn.forward(back, x)
        assert np.max(np.abs(recon - recon2)) < 1e-5  # weights quantized to f32
        assert back.metadata["train_scenarios"] == [0, 1]
        assert path.read_bytes()[:4] == b"AEM1"

    def test_variational_roundtrip(self, tmp_path):
        model = nn.build_autoencoder(8, (6,), 2, seed=1, variational=True)
        path = tmp_path / "vae.aem"
        nn.save_model(path, model)
        back = nn.load_model(path)
        x = np.random.default_rng(1).uniform(0, 1, (3, 8))
        mu1, lv1 = model.encode(x)
        mu2, lv2 = back.encode(x)
        assert np.max(np.abs(mu1 - mu2)) < 1e-5
        assert np.max(np.abs(lv1 - lv2)) < 1e-5

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.aem"
        p.write_bytes(b"XXXX" + b"\0" * 16)
        with pytest.raises(InvalidSpecError):
            nn.load_model(p)
