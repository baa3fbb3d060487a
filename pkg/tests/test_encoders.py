"""Phoneme/prosody encoder behavior against hand and brute-force oracles."""

import numpy as np
import pytest

import prosospot.tensorcore as tc
from prosospot.encoders import (AttentionPooler, AudioEncoder, ConformerBlock,
                                PhonemeStreamConfig, ProsodyEncoder,
                                ProsodyStreamConfig, phoneme_pooler,
                                prosody_matcher_pool, subsampled_length)
from prosospot.g2p import Alignment
from prosospot.layers import MultiHeadAttention
from prosospot.tensorcore import ShapeError, Tensor


def small_cfg(**overrides):
    base = dict(d_model=8, n_blocks=1, n_heads=2, conv_kernel=3,
                ff_expansion=2, max_frames=16)
    base.update(overrides)
    return PhonemeStreamConfig(**base)


def np_sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def np_gru_step(x, h, wx, wh, bx, bh):
    """Reference cell: gates stacked [reset | update | candidate]."""
    hsz = h.shape[-1]
    gi = x @ wx + bx
    gh = h @ wh + bh
    r = np_sigmoid(gi[:, :hsz] + gh[:, :hsz])
    z = np_sigmoid(gi[:, hsz:2 * hsz] + gh[:, hsz:2 * hsz])
    n = np.tanh(gi[:, 2 * hsz:] + r * gh[:, 2 * hsz:])
    return (1.0 - z) * n + z * h


class TestAudioEncoder:
    def test_subsample_arithmetic(self):
        # floor((L + 2 - 3) / 2) + 1, applied twice.
        assert subsampled_length(100) == 25
        assert subsampled_length(198) == 50
        assert subsampled_length(8) == 2

    def test_output_shape(self):
        rng = np.random.default_rng(0)
        enc = AudioEncoder(rng, small_cfg(max_frames=32))
        x = Tensor(rng.standard_normal((2, 100, 80)).astype(np.float32))
        z = enc(x)
        assert z.shape == (2, 25, 8)

    def test_full_width_shape(self):
        rng = np.random.default_rng(1)
        enc = AudioEncoder(rng)
        x = Tensor(rng.standard_normal((1, 198, 80)).astype(np.float32))
        assert enc(x).shape == (1, 50, 128)

    def test_same_parameters_for_both_roles(self):
        rng = np.random.default_rng(2)
        enc = AudioEncoder(rng, small_cfg())
        x = rng.standard_normal((1, 16, 80)).astype(np.float32)
        as_enrollment = enc(Tensor(x.copy()))
        as_query = enc(Tensor(x.copy()))
        np.testing.assert_array_equal(as_enrollment.data, as_query.data)

    def test_too_short_rejected(self):
        rng = np.random.default_rng(3)
        enc = AudioEncoder(rng, small_cfg())
        with pytest.raises(ShapeError, match="at least"):
            enc(Tensor(np.zeros((1, 7, 80), dtype=np.float32)))

    def test_wrong_width_rejected(self):
        rng = np.random.default_rng(3)
        enc = AudioEncoder(rng, small_cfg())
        with pytest.raises(ShapeError):
            enc(Tensor(np.zeros((1, 16, 40), dtype=np.float32)))

    def test_finite_for_bounded_input(self):
        rng = np.random.default_rng(4)
        enc = AudioEncoder(rng, small_cfg())
        x = Tensor(rng.uniform(-10, 10, (2, 24, 80)).astype(np.float32))
        assert np.all(np.isfinite(enc(x).data))


class TestPhonemePooler:
    def test_constant_input(self):
        z = Tensor(np.full((2, 6, 4), 3.5, dtype=np.float32))
        out = phoneme_pooler(z, Alignment(segments=[(0, 2), (2, 5), (5, 6)]))
        np.testing.assert_allclose(out.data, 3.5)
        assert out.shape == (2, 3, 4)

    def test_single_frame_segments_gather(self):
        rng = np.random.default_rng(0)
        z = Tensor(rng.standard_normal((1, 4, 3)).astype(np.float32))
        out = phoneme_pooler(z, Alignment(segments=[(1, 2), (3, 4)]))
        np.testing.assert_array_equal(out.data, z.data[:, [1, 3], :])

    def test_hand_mean(self):
        z = Tensor(np.array([[[1.0], [2.0], [3.0], [4.0]]],
                            dtype=np.float32))
        out = phoneme_pooler(z, Alignment(segments=[(0, 2), (2, 4)]))
        np.testing.assert_allclose(out.data[0, :, 0], [1.5, 3.5])

    def test_empty_segment_rejected(self):
        z = Tensor(np.zeros((1, 4, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="empty"):
            phoneme_pooler(z, Alignment(segments=[(2, 2)]))

    def test_gradient_distributes_inverse_length(self):
        z = Tensor(np.zeros((1, 5, 2), dtype=np.float32),
                   requires_grad=True)
        with tc.Tape() as tape:
            out = phoneme_pooler(z, Alignment(segments=[(0, 4), (4, 5)]))
            tape.backward(tc.sum_all(out))
        expected = np.concatenate([np.full((1, 4, 2), 0.25),
                                   np.ones((1, 1, 2))], axis=1)
        np.testing.assert_allclose(z.grad, expected.astype(np.float32))


class TestProsodyEncoder:
    def test_output_shape_and_range(self):
        rng = np.random.default_rng(0)
        enc = ProsodyEncoder(rng)
        for t in (1, 2, 7):
            z = enc(rng.standard_normal((2, t, 3)).astype(np.float32))
            assert z.shape == (2, t, 64)
            assert np.all(np.abs(z.data) < 1.0)

    def test_single_layer_palindrome_symmetry(self):
        # With tied forward/backward cells, a palindromic input makes one
        # bidirectional layer's output the time-reverse with halves swapped.
        rng = np.random.default_rng(1)
        enc = ProsodyEncoder(rng, ProsodyStreamConfig(hidden=4))
        enc.bw1 = enc.fw1
        x = rng.standard_normal((1, 2, 3)).astype(np.float32)
        pal = np.concatenate([x, x[:, ::-1, :]], axis=1)  # T=4 palindrome
        steps = [Tensor(np.ascontiguousarray(pal[:, t, :]))
                 for t in range(4)]
        layer = enc._bidirectional(enc.fw1, enc.bw1, steps)
        h = 4
        for t in range(4):
            fwd_half = layer[t].data[:, :h]
            bwd_half = layer[3 - t].data[:, h:]
            np.testing.assert_allclose(fwd_half, bwd_half, atol=1e-6)

    def test_matches_unrolled_cells(self):
        rng = np.random.default_rng(2)
        cfg = ProsodyStreamConfig(hidden=3)
        enc = ProsodyEncoder(rng, cfg, dtype=np.float64)
        x = rng.standard_normal((2, 3, 3))
        z = enc(x)

        def run_dir(cell, seq):
            h = np.zeros((seq.shape[0], cfg.hidden))
            outs = []
            for t in range(seq.shape[1]):
                h = np_gru_step(seq[:, t, :], h, cell.wx.data, cell.wh.data,
                                cell.bx.data, cell.bh.data)
                outs.append(h)
            return np.stack(outs, axis=1)

        l1 = np.concatenate([run_dir(enc.fw1, x),
                             run_dir(enc.bw1, x[:, ::-1, :])[:, ::-1, :]],
                            axis=2)
        l2 = np.concatenate([run_dir(enc.fw2, l1),
                             run_dir(enc.bw2, l1[:, ::-1, :])[:, ::-1, :]],
                            axis=2)
        np.testing.assert_allclose(z.data, l2, atol=1e-12)

    def test_wrong_channel_count_rejected(self):
        enc = ProsodyEncoder(np.random.default_rng(0))
        with pytest.raises(ShapeError):
            enc(np.zeros((1, 5, 4), dtype=np.float32))


class TestPoolers:
    def test_attention_single_frame_identity(self):
        rng = np.random.default_rng(0)
        pool = AttentionPooler(rng, dim=6)
        z = Tensor(rng.standard_normal((3, 1, 6)).astype(np.float32))
        np.testing.assert_allclose(pool(z).data, z.data[:, 0, :])

    def test_attention_constant_sequence(self):
        rng = np.random.default_rng(1)
        pool = AttentionPooler(rng, dim=6)
        row = rng.standard_normal((1, 1, 6)).astype(np.float32)
        z = Tensor(np.repeat(row, 5, axis=1))
        np.testing.assert_allclose(pool(z).data, row[:, 0, :], atol=1e-6)

    def test_attention_weights_normalized(self):
        rng = np.random.default_rng(2)
        pool = AttentionPooler(rng, dim=4)
        for case in range(100):
            t = int(rng.integers(1, 9))
            z = Tensor(rng.standard_normal((2, t, 4)).astype(np.float32))
            w = pool.attention_weights(z).data
            assert np.all(w >= 0)
            np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)

    def test_matcher_constant_and_midpoint(self):
        z = Tensor(np.stack([np.full((2, 4), 1.0),
                             np.full((2, 4), 3.0)],
                            axis=1).astype(np.float32))
        np.testing.assert_allclose(prosody_matcher_pool(z).data, 2.0)

    def test_matcher_matches_loop_mean(self):
        rng = np.random.default_rng(3)
        for case in range(20):
            t = int(rng.integers(1, 9))
            z = rng.standard_normal((2, t, 5)).astype(np.float32)
            want = np.zeros((2, 5), dtype=np.float64)
            for step in range(t):
                want += z[:, step, :]
            want /= t
            got = prosody_matcher_pool(Tensor(z)).data
            np.testing.assert_allclose(got, want.astype(np.float32),
                                       atol=1e-6)


class TestGradients:
    def test_conformer_block(self):
        rng = np.random.default_rng(0)
        block = ConformerBlock(rng, small_cfg(), dtype=np.float64)
        x = Tensor(rng.standard_normal((1, 5, 8)), requires_grad=True)
        err = tc.check_gradients(lambda v: block(v), [x],
                                 rng=np.random.default_rng(1))
        assert err < 1e-5

    def test_attention_layer(self):
        rng = np.random.default_rng(1)
        attn = MultiHeadAttention(rng, 8, 2, residual_ln=True,
                                  dtype=np.float64)
        q = Tensor(rng.standard_normal((2, 3, 8)), requires_grad=True)
        kv = Tensor(rng.standard_normal((2, 4, 8)), requires_grad=True)
        err = tc.check_gradients(lambda a, b: attn(a, b), [q, kv],
                                 rng=np.random.default_rng(2))
        assert err < 1e-5

    def test_attention_pooler(self):
        rng = np.random.default_rng(2)
        pool = AttentionPooler(rng, dim=5, dtype=np.float64)
        z = Tensor(rng.standard_normal((2, 4, 5)), requires_grad=True)
        err = tc.check_gradients(lambda v: pool(v), [z],
                                 rng=np.random.default_rng(3))
        assert err < 1e-5

    def test_prosody_encoder_parameters(self):
        rng = np.random.default_rng(3)
        enc = ProsodyEncoder(rng, ProsodyStreamConfig(hidden=2),
                             dtype=np.float64)
        x = rng.standard_normal((1, 3, 3))
        err = tc.check_gradients(lambda wx, wh: enc(x),
                                 [enc.fw1.wx, enc.bw2.wh],
                                 rng=np.random.default_rng(4))
        assert err < 1e-5
