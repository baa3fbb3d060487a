"""Closed-form and hand-arithmetic oracles for the loss parts."""

import numpy as np
import pytest

import prosospot.tensorcore as tc
from prosospot.losses import (DegenerateBatchError, LossConfig,
                              infonce_audio_audio, infonce_audio_text,
                              info_nce, prosody_similarity_loss, total_loss,
                              utterance_bce)
from prosospot.tensorcore import Tensor


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestConfig:
    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.lam == 0.5
        assert cfg.tau == 0.07

    def test_invalid_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(lam=-0.1)
        with pytest.raises(ValueError):
            LossConfig(tau=0.0)


class TestBce:
    def test_half_score_positive(self):
        loss = utterance_bce(Tensor(np.array([0.5], dtype=np.float32)),
                             np.array([1.0]))
        np.testing.assert_allclose(loss.data, np.log(2.0), atol=1e-6)

    def test_perfect_prediction_near_zero(self):
        loss = utterance_bce(Tensor(np.array([1.0, 0.0], dtype=np.float32)),
                             np.array([1.0, 0.0]))
        assert loss.data <= 1e-6

    def test_hand_batch(self):
        loss = utterance_bce(Tensor(np.array([0.9, 0.2], dtype=np.float32)),
                             np.array([1.0, 0.0]))
        want = -(np.log(0.9) + np.log(0.8)) / 2.0
        np.testing.assert_allclose(loss.data, want, atol=1e-6)

    def test_decreases_as_positive_score_rises(self):
        y = np.array([1.0, 0.0])
        lo = utterance_bce(Tensor(np.array([0.6, 0.3], dtype=np.float32)), y)
        hi = utterance_bce(Tensor(np.array([0.8, 0.3], dtype=np.float32)), y)
        assert hi.data < lo.data

    def test_gradcheck(self):
        rng = np.random.default_rng(0)
        s = Tensor(rng.uniform(0.1, 0.9, 4), requires_grad=True)
        y = np.array([1.0, 0.0, 1.0, 0.0])
        err = tc.check_gradients(lambda v: utterance_bce(v, y), [s],
                                 rng=np.random.default_rng(1))
        assert err < 1e-5


class TestInfoNce:
    def test_uniform_similarities_give_log_k(self):
        for k in (2, 4, 8):
            anchor = Tensor(np.array([[1.0, 0.0]], dtype=np.float32))
            cands = Tensor(np.tile([1.0, 0.0], (k, 1)).astype(np.float32))
            loss = info_nce(anchor, cands, [0], tau=0.07)
            np.testing.assert_allclose(loss.data, np.log(k), atol=1e-5)

    def test_multi_anchor_sums(self):
        k = 4
        anchors = Tensor(np.tile([0.0, 1.0], (3, 1)).astype(np.float32))
        cands = Tensor(np.tile([0.0, 1.0], (k, 1)).astype(np.float32))
        loss = info_nce(anchors, cands, [0, 1, 2], tau=0.07)
        np.testing.assert_allclose(loss.data, 3.0 * np.log(k), atol=1e-5)

    def test_two_candidate_hand_softmax(self):
        anchor = Tensor(np.array([[1.0, 0.0]], dtype=np.float32))
        cands = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]],
                                dtype=np.float32))
        loss = info_nce(anchor, cands, [0], tau=1.0)
        want = -np.log(np.e / (np.e + 1.0))
        np.testing.assert_allclose(loss.data, want, atol=1e-5)

    def test_sharp_temperature_with_margin(self):
        # cos(pos) - cos(neg) = 0.5 at tau=0.01 -> essentially zero loss.
        anchor = Tensor(np.array([[1.0, 0.0]], dtype=np.float32))
        neg = unit([0.5, np.sqrt(1 - 0.25)])  # cos vs anchor = 0.5
        cands = Tensor(np.array([[1.0, 0.0], neg],
                                dtype=np.float32))
        loss = info_nce(anchor, cands, [0], tau=0.01)
        assert loss.data < 1e-3

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal((3, 5)).astype(np.float32)
        e = rng.standard_normal((3, 5)).astype(np.float32)
        base = infonce_audio_text(Tensor(z), Tensor(e), tau=0.07)
        scaled = infonce_audio_text(Tensor(10.0 * z), Tensor(10.0 * e),
                                    tau=0.07)
        assert abs(float(base.data) - float(scaled.data)) < 1e-5

    def test_degenerate_candidates_rejected(self):
        one = Tensor(np.ones((1, 3), dtype=np.float32))
        with pytest.raises(DegenerateBatchError):
            info_nce(one, one, [0], tau=0.07)

    def test_gradcheck(self):
        rng = np.random.default_rng(1)
        z = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        e = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        err = tc.check_gradients(
            lambda a, b: infonce_audio_text(a, b, tau=0.07), [z, e],
            rng=np.random.default_rng(2))
        assert err < 1e-5


class TestAudioAudio:
    def test_orthonormal_closed_form(self):
        # K orthonormal pairs: per segment log(1 + (K-1) e^{(c-1)/tau}), c=0.
        k, tau = 4, 0.07
        basis = np.eye(k, dtype=np.float32)
        loss = infonce_audio_audio(Tensor(basis.copy()),
                                   Tensor(basis.copy()), tau=tau)
        want = k * np.log(1.0 + (k - 1) * np.exp(-1.0 / tau))
        np.testing.assert_allclose(loss.data, want, atol=1e-5)

    def test_two_candidate_reduction(self):
        pair = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        loss = infonce_audio_audio(Tensor(pair.copy()), Tensor(pair.copy()),
                                   tau=1.0)
        # both segments see cos(pos)=1, cos(neg)=0
        want = 2.0 * -np.log(np.e / (np.e + 1.0))
        np.testing.assert_allclose(loss.data, want, atol=1e-5)

    def test_no_positive_trials_skips_with_counter(self):
        stats = {}
        loss = infonce_audio_audio(None, None, stats=stats)
        assert float(loss.data) == 0.0
        assert stats["aa_skipped"] == 1
        empty = Tensor(np.zeros((0, 4), dtype=np.float32))
        loss = infonce_audio_audio(empty, empty, stats=stats)
        assert float(loss.data) == 0.0
        assert stats["aa_skipped"] == 2


class TestProsodyLoss:
    def test_identical_signatures_near_zero(self):
        rng = np.random.default_rng(0)
        v = Tensor(rng.standard_normal((4, 6)).astype(np.float32))
        loss = prosody_similarity_loss(v, v, np.ones(4))
        assert abs(float(loss.data)) < 1e-6

    def test_antiparallel_gives_two(self):
        v = Tensor(np.ones((2, 3), dtype=np.float32))
        w = Tensor(-np.ones((2, 3), dtype=np.float32))
        loss = prosody_similarity_loss(v, w, np.ones(2))
        np.testing.assert_allclose(loss.data, 2.0, atol=1e-6)

    def test_orthogonal_single_positive(self):
        q = Tensor(np.array([[1.0, 0.0], [9.0, 9.0]], dtype=np.float32))
        e = Tensor(np.array([[0.0, 1.0], [9.0, 9.0]], dtype=np.float32))
        loss = prosody_similarity_loss(q, e, np.array([1, 0]))
        np.testing.assert_allclose(loss.data, 1.0, atol=1e-6)

    def test_no_positives_exactly_zero(self):
        v = Tensor(np.ones((3, 4), dtype=np.float32))
        assert float(prosody_similarity_loss(v, v, np.zeros(3)).data) == 0.0

    def test_only_positive_rows_matter(self):
        rng = np.random.default_rng(1)
        q = rng.standard_normal((4, 5)).astype(np.float32)
        e = rng.standard_normal((4, 5)).astype(np.float32)
        labels = np.array([1, 0, 1, 0])
        base = prosody_similarity_loss(Tensor(q), Tensor(e), labels)
        q2, e2 = q.copy(), e.copy()
        q2[1] = 100.0
        e2[3] = -50.0
        other = prosody_similarity_loss(Tensor(q2), Tensor(e2), labels)
        np.testing.assert_array_equal(base.data, other.data)

    def test_gradcheck(self):
        rng = np.random.default_rng(2)
        q = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        e = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        labels = np.array([1, 0, 1])
        err = tc.check_gradients(
            lambda a, b: prosody_similarity_loss(a, b, labels), [q, e],
            rng=np.random.default_rng(3))
        assert err < 1e-5


class TestTotalLoss:
    def scalar(self, x):
        return Tensor(np.array(x, dtype=np.float32))

    def test_weighted_sum(self):
        total = total_loss(self.scalar(1.0), self.scalar(2.0),
                           self.scalar(3.0), self.scalar(4.0),
                           LossConfig(lam=0.5))
        np.testing.assert_allclose(total.data, 8.0, atol=1e-6)

    def test_lambda_zero_drops_prosody_term(self):
        total = total_loss(self.scalar(1.0), self.scalar(2.0),
                           self.scalar(3.0), self.scalar(100.0),
                           LossConfig(lam=0.0))
        assert float(total.data) == 6.0

    def test_nonnegative_on_random_batches(self):
        rng = np.random.default_rng(0)
        for case in range(10):
            scores = Tensor(rng.uniform(0.01, 0.99, 4).astype(np.float32))
            labels = (rng.uniform(size=4) < 0.5).astype(np.float64)
            z = Tensor(rng.standard_normal((4, 6)).astype(np.float32))
            e = Tensor(rng.standard_normal((4, 6)).astype(np.float32))
            vq = Tensor(rng.standard_normal((4, 8)).astype(np.float32))
            ve = Tensor(rng.standard_normal((4, 8)).astype(np.float32))
            parts = [utterance_bce(scores, labels),
                     infonce_audio_text(z, e),
                     infonce_audio_audio(z, e),
                     prosody_similarity_loss(vq, ve, labels)]
            assert all(float(p.data) >= 0.0 for p in parts)
            assert float(total_loss(*parts).data) >= 0.0

    def test_gradient_is_weighted_sum_of_part_gradients(self):
        rng = np.random.default_rng(1)
        lam = 0.5
        q = rng.standard_normal((2, 4))

        def grad_of(fn):
            t = Tensor(q.copy(), requires_grad=True)
            with tc.Tape() as tape:
                tape.backward(fn(t))
            return t.grad.copy()

        labels = np.array([1.0, 0.0])
        e_np = rng.standard_normal((2, 4))

        def l_utt(t):
            col = tc.sigmoid(tc.sum_over_axis(t, 1))
            return utterance_bce(col, labels)

        def l_at(t):
            return infonce_audio_text(t, Tensor(e_np), tau=0.07)

        def l_aa(t):
            return infonce_audio_audio(t, Tensor(e_np), tau=0.07)

        def l_pro(t):
            return prosody_similarity_loss(t, Tensor(e_np), labels)

        def combined(t):
            return total_loss(l_utt(t), l_at(t), l_aa(t), l_pro(t),
                              LossConfig(lam=lam))

        want = (grad_of(l_utt) + grad_of(l_at) + grad_of(l_aa)
                + lam * grad_of(l_pro))
        np.testing.assert_allclose(grad_of(combined), want, atol=1e-10)

    def test_total_gradcheck(self):
        rng = np.random.default_rng(2)
        labels = np.array([1.0, 0.0])
        e = Tensor(rng.standard_normal((2, 4)))

        def fn(t):
            scores = tc.sigmoid(tc.sum_over_axis(t, 1))
            return total_loss(utterance_bce(scores, labels),
                              infonce_audio_text(t, e, tau=0.07),
                              infonce_audio_audio(t, e, tau=0.07),
                              prosody_similarity_loss(t, e, labels))

        t = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
        err = tc.check_gradients(fn, [t], rng=np.random.default_rng(3))
        assert err < 1e-4
