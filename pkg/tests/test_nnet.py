"""Network-level oracles: hand-evaluated LSTM steps, finite-difference gradient
checks, optimizer behavior, clipping, and serialization round trips."""

import json
import math

import numpy as np
import pytest

from pulseguard import nnet


def tiny_model(seed=0, h1=4, h2=3, seq_len=10):
    rng = np.random.default_rng(seed)
    model = nnet.init_model(rng, hidden1=h1, hidden2=h2, seq_len=seq_len)
    # perturb biases away from their symmetric init so no gradient sits at a
    # special point
    for name, arr in nnet.named_params(model):
        if (name.startswith(("encoder", "decoder"))) and ".b_" in name:
            arr += rng.normal(0.0, 0.3, arr.shape)
    return model, rng


def numeric_gradient(model, x, name, index, eps=1e-5):
    params = dict(nnet.named_params(model))
    arr = params[name]
    orig = arr[index]
    arr[index] = orig + eps
    up = nnet.loss_mse(nnet.reconstruct(model, x), x)
    arr[index] = orig - eps
    down = nnet.loss_mse(nnet.reconstruct(model, x), x)
    arr[index] = orig
    return (up - down) / (2 * eps)


class TestLstmStep:
    def test_zero_everything(self):
        zeros = nnet.LstmLayerParams(
            2, 3,
            *[np.zeros((3, 2)) for _ in range(4)],
            *[np.zeros((3, 3)) for _ in range(4)],
            *[np.zeros(3) for _ in range(4)],
        )
        h, c = nnet.lstm_step(zeros, [0.0, 0.0], np.zeros(3), np.zeros(3))
        assert np.all(h == 0.0) and np.all(c == 0.0)

    def test_scalar_cell_hand_arithmetic(self):
        # one-dimensional cell, every weight set by hand
        layer = nnet.LstmLayerParams(
            1, 1,
            W_i=np.array([[0.5]]), W_f=np.array([[-0.3]]),
            W_g=np.array([[0.8]]), W_o=np.array([[0.2]]),
            U_i=np.array([[0.1]]), U_f=np.array([[0.4]]),
            U_g=np.array([[-0.6]]), U_o=np.array([[0.7]]),
            b_i=np.array([0.05]), b_f=np.array([1.0]),
            b_g=np.array([-0.2]), b_o=np.array([0.3]),
        )
        x, h_prev, c_prev = 0.9, -0.4, 0.25

        def sig(v):
            return 1.0 / (1.0 + math.exp(-v))

        i = sig(0.5 * x + 0.1 * h_prev + 0.05)
        f = sig(-0.3 * x + 0.4 * h_prev + 1.0)
        g = math.tanh(0.8 * x - 0.6 * h_prev - 0.2)
        o = sig(0.2 * x + 0.7 * h_prev + 0.3)
        c = f * c_prev + i * g
        h = o * math.tanh(c)
        got_h, got_c = nnet.lstm_step(layer, [x], [h_prev], [c_prev])
        assert got_h[0] == pytest.approx(h, abs=1e-12)
        assert got_c[0] == pytest.approx(c, abs=1e-12)

    def test_saturated_gates_hold_memory(self):
        layer = nnet.LstmLayerParams(
            1, 2,
            *[np.zeros((2, 1)) for _ in range(4)],
            *[np.zeros((2, 2)) for _ in range(4)],
            b_i=np.full(2, -10.0), b_f=np.full(2, 10.0),
            b_g=np.zeros(2), b_o=np.zeros(2),
        )
        c_prev = np.array([0.7, -0.2])
        _, c = nnet.lstm_step(layer, [0.3], np.zeros(2), c_prev)
        np.testing.assert_allclose(c, c_prev, atol=1e-4)

    def test_dimension_mismatch(self):
        model, _ = tiny_model()
        with pytest.raises(nnet.NnetError):
            nnet.lstm_step(model.encoder[0], [1.0, 2.0], np.zeros(4), np.zeros(4))

    def test_matches_batched_forward(self):
        model, rng = tiny_model(seed=5, h1=5, h2=4, seq_len=9)
        x = rng.normal(size=9)
        fast = nnet.reconstruct(model, x)
        h1 = np.zeros(5); c1 = np.zeros(5)
        h2 = np.zeros(4); c2 = np.zeros(4)
        for t in range(9):
            h1, c1 = nnet.lstm_step(model.encoder[0], [x[t]], h1, c1)
            h2, c2 = nnet.lstm_step(model.encoder[1], h1, h2, c2)
        latent = h2
        d1 = np.zeros(4); dc1 = np.zeros(4)
        d2 = np.zeros(5); dc2 = np.zeros(5)
        slow = []
        for t in range(9):
            d1, dc1 = nnet.lstm_step(model.decoder[0], latent, d1, dc1)
            d2, dc2 = nnet.lstm_step(model.decoder[1], d1, d2, dc2)
            slow.append(float(model.output_w[0] @ d2 + model.output_b[0]))
        np.testing.assert_allclose(fast, slow, atol=1e-12)


class TestLoss:
    def test_identical(self):
        assert nnet.loss_mse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_offset_one(self):
        x = np.arange(5.0)
        assert nnet.loss_mse(x + 1.0, x) == pytest.approx(1.0, abs=1e-15)

    def test_direct_arithmetic(self):
        assert nnet.loss_mse([0.0, 0.0], [1.0, 3.0]) == pytest.approx(5.0, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(nnet.NnetError):
            nnet.loss_mse([1.0], [1.0, 2.0])


class TestGradients:
    def test_zero_loss_zero_gradients(self):
        model, _ = tiny_model(seed=1)
        x = np.zeros(10)
        recon = nnet.reconstruct(model, x)
        # force an exact zero-loss configuration: target equals reconstruction
        grads = nnet.backward(model, recon) if np.allclose(recon, 0) else None
        if grads is None:
            # generic construction: zero output projection makes recon == 0
            model.output_w[...] = 0.0
            model.output_b[...] = 0.0
            grads = nnet.backward(model, np.zeros(10))
        assert all(np.allclose(g, 0.0, atol=1e-15) for g in grads.values())

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_difference_oracle(self, seed):
        model, rng = tiny_model(seed=seed)
        x = rng.normal(size=model.seq_len)
        grads = nnet.backward(model, x)
        worst = 0.0
        for name, arr in nnet.named_params(model):
            g = grads[name]
            assert g.shape == arr.shape
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                num = numeric_gradient(model, x, name, idx)
                ana = g[idx]
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-5)
                worst = max(worst, rel)
        assert worst < 1e-4

    def test_output_bias_closed_form(self):
        model, rng = tiny_model(seed=11, h1=6, h2=3, seq_len=12)
        x = rng.normal(size=12)
        grads = nnet.backward(model, x)
        recon = nnet.reconstruct(model, x)
        direct = np.sum(2.0 * (recon - x) / 12.0)
        assert grads["output.b"][0] == pytest.approx(direct, abs=1e-10)

    def test_reconstruct_shape_and_finiteness(self):
        model = nnet.init_model(0)
        x = np.random.default_rng(0).normal(size=256)
        recon = nnet.reconstruct(model, x)
        assert recon.shape == (256,)
        assert np.isfinite(recon).all()

    def test_reconstruct_rejects_wrong_length(self):
        model = nnet.init_model(0)
        with pytest.raises(nnet.NnetError):
            nnet.reconstruct(model, np.zeros(255))

    def test_reconstruction_deterministic(self):
        model = nnet.init_model(3)
        x = np.random.default_rng(1).normal(size=256)
        a = nnet.reconstruct(model, x)
        b = nnet.reconstruct(model, x)
        assert np.array_equal(a, b)


class TestClipping:
    def test_norm_bound_holds(self):
        rng = np.random.default_rng(0)
        grads = [rng.normal(size=(5, 7)) * 10, rng.normal(size=13) * 10]
        pre = nnet.clip_global_norm(grads, 5.0)
        post = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
        assert pre > 5.0
        assert post <= 5.0 + 1e-9

    def test_small_gradients_untouched(self):
        grads = [np.full(4, 0.1)]
        before = grads[0].copy()
        nnet.clip_global_norm(grads, 5.0)
        assert np.array_equal(grads[0], before)


class TestAdamAndTraining:
    def _corpus(self, n=24, seq_len=16, seed=0):
        rng = np.random.default_rng(seed)
        t = np.arange(seq_len)
        segs = []
        for k in range(n):
            f = rng.uniform(0.08, 0.2)
            x = np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
            x = (x - x.mean()) / np.sqrt(np.mean((x - x.mean()) ** 2))
            segs.append(x)
        return segs[: n - 6], segs[n - 6 :]

    def test_zero_learning_rate_freezes_parameters(self):
        train_segs, val_segs = self._corpus()
        cfg = nnet.TrainConfig(
            learning_rate=0.0, batch_size=6, max_epochs=3, patience=5,
            hidden1=5, hidden2=3, seed=4,
        )
        model, _ = nnet.train((train_segs, val_segs), cfg)
        fresh = nnet.init_model(np.random.default_rng(4), hidden1=5, hidden2=3)
        # identical init draw: training with lr 0 must return it untouched
        fresh.seq_len = model.seq_len
        assert nnet.models_equal(
            model,
            nnet.ModelParams(
                encoder=fresh.encoder, decoder=fresh.decoder,
                output_w=fresh.output_w, output_b=fresh.output_b,
                seq_len=model.seq_len, pipeline_rate_hz=model.pipeline_rate_hz,
                segment_len_s=model.segment_len_s,
            ),
        )

    def test_seed_reproducibility(self):
        train_segs, val_segs = self._corpus()
        cfg = nnet.TrainConfig(
            learning_rate=1e-3, batch_size=6, max_epochs=4, patience=5,
            hidden1=5, hidden2=3, seed=9,
        )
        m1, h1 = nnet.train((train_segs, val_segs), cfg)
        m2, h2 = nnet.train((train_segs, val_segs), cfg)
        assert h1 == h2
        assert nnet.models_equal(m1, m2)

    def test_training_reduces_loss_on_toy_task(self):
        train_segs, val_segs = self._corpus(n=40, seq_len=16, seed=3)
        cfg = nnet.TrainConfig(
            learning_rate=5e-3, batch_size=8, max_epochs=60, patience=60,
            hidden1=12, hidden2=6, seed=1,
        )
        _, hist = nnet.train((train_segs, val_segs), cfg)
        assert min(h.val_loss for h in hist) < hist[0].val_loss

    def test_empty_corpus_rejected(self):
        with pytest.raises(nnet.TrainingError):
            nnet.train(([], []), nnet.TrainConfig())

    def test_history_shape(self):
        train_segs, val_segs = self._corpus()
        cfg = nnet.TrainConfig(
            learning_rate=1e-3, batch_size=6, max_epochs=3, patience=5,
            hidden1=4, hidden2=3, seed=0,
        )
        _, hist = nnet.train((train_segs, val_segs), cfg)
        assert [h.epoch for h in hist] == [1, 2, 3]
        assert all(math.isfinite(h.train_loss) and math.isfinite(h.val_loss) for h in hist)


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path):
        model, rng = tiny_model(seed=2, h1=6, h2=4, seq_len=8)
        path = tmp_path / "m.json"
        nnet.save_model(model, path)
        loaded = nnet.load_model(path)
        assert nnet.models_equal(model, loaded)
        x = rng.normal(size=8)
        assert np.array_equal(nnet.reconstruct(model, x), nnet.reconstruct(loaded, x))

    def test_truncated_file(self, tmp_path):
        model, _ = tiny_model()
        path = tmp_path / "m.json"
        nnet.save_model(model, path)
        path.write_text(path.read_text()[: 200])
        with pytest.raises(nnet.ModelFormatError):
            nnet.load_model(path)

    def test_version_mismatch(self, tmp_path):
        model, _ = tiny_model()
        path = tmp_path / "m.json"
        nnet.save_model(model, path)
        doc = json.loads(path.read_text())
        doc["version"] = "someone-elses-model.v9"
        path.write_text(json.dumps(doc))
        with pytest.raises(nnet.ModelVersionError):
            nnet.load_model(path)

    def test_dimension_inconsistency(self, tmp_path):
        model, _ = tiny_model()
        path = tmp_path / "m.json"
        nnet.save_model(model, path)
        doc = json.loads(path.read_text())
        doc["architecture"]["encoder_hidden"] = [4, 2]  # inconsistent with arrays
        path.write_text(json.dumps(doc))
        with pytest.raises(nnet.ModelDimensionError):
            nnet.load_model(path)

    def test_missing_parameters_block(self, tmp_path):
        model, _ = tiny_model()
        path = tmp_path / "m.json"
        nnet.save_model(model, path)
        doc = json.loads(path.read_text())
        del doc["parameters"]["decoder.1"]
        path.write_text(json.dumps(doc))
        with pytest.raises(nnet.ModelFormatError):
            nnet.load_model(path)
