import math

import numpy as np
import pytest

from conftest import TINY_ARCH, random_features, tiny_net
from lipsync import model, training
from lipsync.errors import FileFormatError, ShapeError, StateError
from lipsync.features import FeatureSequence
from lipsync.mesh import DisplacementSequence
from lipsync.model import Conv1dParams, LstmCellParams


def zero_cell(hidden, input_dim):
    shape = (hidden, hidden + input_dim)
    return LstmCellParams(
        W_f=np.zeros(shape), W_i=np.zeros(shape), W_o=np.zeros(shape), W_C=np.zeros(shape),
        b_f=np.zeros(hidden), b_i=np.zeros(hidden), b_o=np.zeros(hidden), b_C=np.zeros(hidden),
    )


class TestLstmStep:
    def test_all_zero_parameters(self):
        p = zero_cell(3, 2)
        h, c = model.lstm_step(p, np.array([0.7, -0.4]), np.zeros(3), np.zeros(3))
        # every gate sigmoid(0) = 0.5, candidate tanh(0) = 0
        assert np.array_equal(c, np.zeros(3))
        assert np.array_equal(h, np.zeros(3))

    def test_zero_weights_nonzero_cell_state(self):
        p = zero_cell(3, 2)
        c_prev = np.array([1.0, -2.0, 0.5])
        h, c = model.lstm_step(p, np.zeros(2), np.zeros(3), c_prev)
        assert np.allclose(c, 0.5 * c_prev, atol=1e-15)
        assert np.allclose(h, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)

    def test_matches_scalar_transcription(self):
        # independent oracle: the cell update evaluated scalar by scalar
        rng = np.random.default_rng(9)
        hidden, input_dim = 2, 3
        p = LstmCellParams(
            W_f=rng.standard_normal((hidden, hidden + input_dim)),
            W_i=rng.standard_normal((hidden, hidden + input_dim)),
            W_o=rng.standard_normal((hidden, hidden + input_dim)),
            W_C=rng.standard_normal((hidden, hidden + input_dim)),
            b_f=rng.standard_normal(hidden),
            b_i=rng.standard_normal(hidden),
            b_o=rng.standard_normal(hidden),
            b_C=rng.standard_normal(hidden),
        )
        x = rng.standard_normal(input_dim)
        h_prev = rng.standard_normal(hidden)
        c_prev = rng.standard_normal(hidden)

        def sig(v):
            return 1.0 / (1.0 + math.exp(-v))

        z = list(h_prev) + list(x)
        h_exp, c_exp = [], []
        for r in range(hidden):
            f = sig(sum(p.W_f[r][k] * z[k] for k in range(len(z))) + p.b_f[r])
            i = sig(sum(p.W_i[r][k] * z[k] for k in range(len(z))) + p.b_i[r])
            o = sig(sum(p.W_o[r][k] * z[k] for k in range(len(z))) + p.b_o[r])
            g = math.tanh(sum(p.W_C[r][k] * z[k] for k in range(len(z))) + p.b_C[r])
            c = f * c_prev[r] + i * g
            c_exp.append(c)
            h_exp.append(o * math.tanh(c))

        h, c = model.lstm_step(p, x, h_prev, c_prev)
        assert np.allclose(h, h_exp, atol=1e-12)
        assert np.allclose(c, c_exp, atol=1e-12)

    def test_dimension_mismatch(self):
        p = zero_cell(3, 2)
        with pytest.raises(ShapeError):
            model.lstm_step(p, np.zeros(5), np.zeros(3), np.zeros(3))

    def test_layer_matches_repeated_steps(self):
        rng = np.random.default_rng(4)
        net = tiny_net(seed=4)
        cell = net.lstm3
        x = rng.standard_normal((12, cell.input_size))
        h_seq, _ = model._lstm_forward(cell, x)
        h = np.zeros(cell.hidden_size)
        c = np.zeros(cell.hidden_size)
        for t in range(12):
            h, c = model.lstm_step(cell, x[t], h, c)
            assert np.allclose(h_seq[t], h, atol=1e-12)


class TestConv1d:
    def test_delta_kernel_is_relu_identity(self):
        kernels = np.zeros((1, 1, 5))
        kernels[0, 0, 2] = 1.0
        p = Conv1dParams(kernels=kernels, bias=np.zeros(1))
        x = np.array([[-1.0], [2.0], [-3.0], [4.0], [0.5]])
        out = model.conv1d_forward(p, x)
        assert np.array_equal(out, np.maximum(x, 0.0))

    def test_zero_input_gives_relu_bias(self):
        rng = np.random.default_rng(1)
        p = Conv1dParams(kernels=rng.standard_normal((4, 2, 5)), bias=rng.standard_normal(4))
        out = model.conv1d_forward(p, np.zeros((6, 2)))
        assert np.allclose(out, np.tile(np.maximum(p.bias, 0.0), (6, 1)), atol=1e-15)

    def test_matches_naive_sliding_window(self):
        # oracle: O(T * k) triple loop over zero-padded input
        rng = np.random.default_rng(2)
        p = Conv1dParams(kernels=rng.standard_normal((2, 3, 5)), bias=rng.standard_normal(2))
        x = rng.standard_normal((7, 3))
        expected = np.zeros((7, 2))
        for t in range(7):
            for o in range(2):
                acc = p.bias[o]
                for k in range(5):
                    src = t + k - 2
                    if 0 <= src < 7:
                        acc += float(p.kernels[o, :, k] @ x[src])
                expected[t, o] = max(acc, 0.0)
        assert np.allclose(model.conv1d_forward(p, x), expected, atol=1e-12)

    def test_channel_mismatch(self):
        p = Conv1dParams(kernels=np.zeros((2, 3, 5)), bias=np.zeros(2))
        with pytest.raises(ShapeError):
            model.conv1d_forward(p, np.zeros((4, 4)))


class TestForward:
    def test_length_preserved(self):
        net = tiny_net()
        out = model.forward(net, random_features(np.random.default_rng(0), 120))
        assert out.n_frames == 120
        assert out.frames.shape == (120, 5, 3)

    def test_zero_parameters_give_zero_output(self):
        net = tiny_net()
        for _, arr in net.items():
            arr[:] = 0.0
        out = model.forward(net, random_features(np.random.default_rng(1), 20))
        assert np.array_equal(out.frames, np.zeros((20, 5, 3)))

    def test_prefix_property_conv(self):
        # two stacked width-5 convs see 4 frames ahead; everything earlier
        # must agree between a 10-frame and a 20-frame run
        net = tiny_net(seed=7)
        feats = random_features(np.random.default_rng(7), 20)
        short = model.forward(net, FeatureSequence(data=feats.data[:10])).frames
        long = model.forward(net, feats).frames
        assert np.allclose(short[:6], long[:6], atol=1e-9, rtol=1e-9)

    def test_prefix_property_lstm_only_is_exact(self):
        net = tiny_net(seed=7, use_conv=False)
        feats = random_features(np.random.default_rng(8), 20)
        short = model.forward(net, FeatureSequence(data=feats.data[:10])).frames
        long = model.forward(net, feats).frames
        assert np.array_equal(short, long[:10])

    def test_causality_halo(self):
        # perturbing frame t cannot change outputs before t - 4 (conv halo)
        net = tiny_net(seed=5)
        rng = np.random.default_rng(5)
        feats = random_features(rng, 15)
        base = model.forward(net, feats).frames
        bumped = feats.data.copy()
        bumped[9] += 1.0
        out = model.forward(net, FeatureSequence(data=bumped)).frames
        assert np.array_equal(out[:5], base[:5])
        assert not np.allclose(out[5:], base[5:])

    def test_f32_fast_path_close_to_f64(self):
        net = tiny_net(seed=6)
        feats = random_features(np.random.default_rng(6), 30)
        full = model.forward(net, feats).frames
        fast = model.forward(net, feats, dtype=np.float32).frames
        assert fast.dtype == np.float32
        assert np.allclose(fast, full, rtol=1e-3, atol=1e-5)

    def test_feature_dim_mismatch(self):
        net = tiny_net()
        with pytest.raises(ShapeError):
            model.forward(net, FeatureSequence(data=np.zeros((10, 13))))


def scalar_loss(net, feats, truth, cfg):
    pred, _ = model.forward_with_cache(net, feats)
    total, _ = training.loss_total(pred, truth, cfg)
    return total


def max_gradient_error(seed, eps=1e-5):
    """Central finite differences over every parameter of the reduced net."""
    net = tiny_net(seed=seed)
    rng = np.random.default_rng(seed + 1000)
    feats = random_features(rng, 9)
    truth = DisplacementSequence(frames=rng.standard_normal((9, 5, 3)) * 0.1)
    cfg = training.LossConfig()

    pred, tape = model.forward_with_cache(net, feats)
    _, dpred = training.loss_total(pred, truth, cfg)
    grads = model.backward(net, tape, dpred)

    worst = 0.0
    for name, arr in net.items():
        g = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + eps
            up = scalar_loss(net, feats, truth, cfg)
            arr[ix] = orig - eps
            down = scalar_loss(net, feats, truth, cfg)
            arr[ix] = orig
            fd = (up - down) / (2.0 * eps)
            # absolute guard 1e-10 sits above the ~1e-11 cancellation noise
            # of the difference quotient for near-zero gradients
            err = (abs(g[ix] - fd) - 1e-10) / max(abs(fd), abs(g[ix]), 1e-10)
            worst = max(worst, err)
    return worst


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        net = tiny_net()
        feats = random_features(np.random.default_rng(2), 8)
        _, tape = model.forward_with_cache(net, feats)
        grads = model.backward(net, tape, np.zeros((8, 5, 3)))
        assert all(np.array_equal(g, np.zeros_like(g)) for g in grads.values())

    def test_decoder_bias_gradient_is_upstream_sum(self):
        net = tiny_net()
        rng = np.random.default_rng(3)
        feats = random_features(rng, 8)
        upstream = rng.standard_normal((8, 5, 3))
        _, tape = model.forward_with_cache(net, feats)
        grads = model.backward(net, tape, upstream)
        assert np.allclose(grads["decoder.bias"], upstream.reshape(8, -1).sum(axis=0), atol=1e-12)

    def test_gradients_match_finite_differences(self):
        assert max_gradient_error(seed=0) < 1e-4

    def test_requires_cache(self):
        net = tiny_net()
        with pytest.raises(StateError):
            model.backward(net, None, np.zeros((4, 5, 3)))

    def test_upstream_shape_checked(self):
        net = tiny_net()
        _, tape = model.forward_with_cache(net, random_features(np.random.default_rng(0), 8))
        with pytest.raises(ShapeError):
            model.backward(net, tape, np.zeros((7, 5, 3)))


class TestInitParams:
    def test_deterministic(self):
        a = model.init_params(12, 7, TINY_ARCH)
        b = model.init_params(12, 7, TINY_ARCH)
        for (name_a, arr_a), (_, arr_b) in zip(a.items(), b.items()):
            assert np.array_equal(arr_a, arr_b), name_a

    def test_forget_gate_bias_is_one(self):
        net = model.init_params(0, 5, TINY_ARCH)
        for cell in (net.lstm1, net.lstm2, net.lstm3, net.lstm4):
            assert np.array_equal(cell.b_f, np.ones_like(cell.b_f))
            assert np.array_equal(cell.b_i, np.zeros_like(cell.b_i))

    def test_glorot_bounds(self):
        net = model.init_params(1, 9, TINY_ARCH)

        def limit(fan_in, fan_out):
            return np.sqrt(6.0 / (fan_in + fan_out))

        assert np.abs(net.conv1.kernels).max() <= limit(29 * 5, 4 * 5)
        assert np.abs(net.lstm1.W_f).max() <= limit(6 + 4, 6)
        assert np.abs(net.fc1.weight).max() <= limit(3, 10)
        assert np.abs(net.decoder.weight).max() <= limit(6, 27)

    def test_parameter_count_production_preset(self):
        # closed-form total of the production shape chain with V = 5713
        conv = (29 * 32 * 5 + 32) + (32 * 32 * 5 + 32)
        lstm = (
            4 * (128 * (128 + 32) + 128)
            + 4 * (128 * (128 + 128) + 128)
            + 4 * (64 * (64 + 128) + 64)
            + 4 * (64 * (64 + 64) + 64)
        )
        dense = (128 * 64 + 128) + (50 * 128 + 50) + (5713 * 3 * 50 + 5713 * 3)
        expected = conv + lstm + dense
        assert expected == 1_195_131
        net = model.init_params(0, 5713)
        assert model.parameter_count(net) == expected


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = tiny_net(seed=13)
        model.save_checkpoint(net, tmp_path / "n.lsn1")
        back = model.load_checkpoint(tmp_path / "n.lsn1")
        assert back.vertex_count == net.vertex_count
        assert back.arch == net.arch
        for (name_a, arr_a), (_, arr_b) in zip(net.items(), back.items()):
            assert np.array_equal(arr_a, arr_b), name_a

    def test_round_trip_without_conv(self, tmp_path):
        net = tiny_net(seed=14, use_conv=False)
        model.save_checkpoint(net, tmp_path / "n.lsn1")
        back = model.load_checkpoint(tmp_path / "n.lsn1")
        assert back.conv1 is None
        assert back.arch.use_conv is False
        assert back.arch.feature_dim == 29

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.lsn1").write_bytes(b"WRNG" + b"\x00" * 16)
        with pytest.raises(FileFormatError):
            model.load_checkpoint(tmp_path / "x.lsn1")

    def test_truncated(self, tmp_path):
        net = tiny_net()
        model.save_checkpoint(net, tmp_path / "t.lsn1")
        raw = (tmp_path / "t.lsn1").read_bytes()
        (tmp_path / "t.lsn1").write_bytes(raw[: len(raw) // 2])
        with pytest.raises(FileFormatError):
            model.load_checkpoint(tmp_path / "t.lsn1")

    def test_loaded_checkpoint_same_forward(self, tmp_path):
        net = tiny_net(seed=15)
        feats = random_features(np.random.default_rng(15), 12)
        model.save_checkpoint(net, tmp_path / "f.lsn1")
        back = model.load_checkpoint(tmp_path / "f.lsn1")
        assert np.array_equal(model.forward(net, feats).frames, model.forward(back, feats).frames)
