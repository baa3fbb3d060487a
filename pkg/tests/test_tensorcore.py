"""Engine-level checks: broadcast semantics, backward rules, tape behavior."""

import numpy as np
import pytest

from prosospot import tensorcore as tc


def _t64(arr, grad=True):
    return tc.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def test_add_elementwise_hand_case():
    a = tc.Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = tc.Tensor([[10.0, 20.0, 30.0], [40.0, 50.0, 60.0]])
    out = tc.add(a, b)
    np.testing.assert_array_equal(
        out.numpy(), [[11.0, 22.0, 33.0], [44.0, 55.0, 66.0]])


def test_matmul_hand_case():
    a = tc.Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    b = tc.Tensor([[7.0, 8.0], [9.0, 10.0], [11.0, 12.0]])
    np.testing.assert_array_equal(tc.matmul(a, b).numpy(),
                                  [[58.0, 64.0], [139.0, 154.0]])


def test_default_dtype_is_float32():
    t = tc.Tensor([1.0, 2.0])
    assert t.dtype == np.float32
    assert tc.DEFAULT_DTYPE == np.float32


def test_float64_mode_preserved_through_ops():
    a = _t64(np.ones((2, 2)))
    out = tc.mul(tc.add(a, a), a)
    assert out.dtype == np.float64


def test_dtype_mixing_rejected():
    a = tc.Tensor(np.ones((2, 2), dtype=np.float32))
    b = tc.Tensor(np.ones((2, 2), dtype=np.float64))
    with pytest.raises(tc.ShapeError, match="dtype"):
        tc.add(a, b)


class TestBroadcast:
    """Engine broadcasting must agree exactly with explicit expansion."""

    def _compatible_equal_rank(self, rank):
        extents = [1, 2, 3, 4]
        shapes = [()]
        for _ in range(rank):
            shapes = [s + (e,) for s in shapes for e in extents]
        for sa in shapes:
            for sb in shapes:
                if all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb)):
                    yield sa, sb

    def test_equal_rank_matches_expansion_oracle(self):
        rng = np.random.default_rng(42)
        for rank in (1, 2, 3):
            for sa, sb in self._compatible_equal_rank(rank):
                a = rng.standard_normal(sa)
                b = rng.standard_normal(sb)
                target = np.broadcast_shapes(sa, sb)
                ea = np.broadcast_to(a, target)
                eb = np.broadcast_to(b, target)
                got_mul = tc.mul(tc.Tensor(a, dtype=np.float64),
                                 tc.Tensor(b, dtype=np.float64))
                got_add = tc.add(tc.Tensor(a, dtype=np.float64),
                                 tc.Tensor(b, dtype=np.float64))
                np.testing.assert_array_equal(got_mul.numpy(), ea * eb)
                np.testing.assert_array_equal(got_add.numpy(), ea + eb)

    def test_per_batch_vector_spreads_over_middle_axis(self):
        rng = np.random.default_rng(7)
        for bsz in (1, 2, 3, 4):
            for t in (1, 2, 3, 4):
                for d in (1, 2, 3, 4):
                    small = rng.standard_normal((bsz, d))
                    big = rng.standard_normal((bsz, t, d))
                    want = small[:, None, :] * big
                    got = tc.mul(tc.Tensor(small, dtype=np.float64),
                                 tc.Tensor(big, dtype=np.float64))
                    np.testing.assert_array_equal(got.numpy(), want)

    def test_broadcast_gradient_sums_over_spread_axes(self):
        small = _t64(np.array([[1.0, 2.0], [3.0, 4.0]]))
        big = _t64(np.ones((2, 5, 2)))
        with tc.Tape() as tape:
            loss = tc.sum_all(tc.mul(small, big))
        tape.backward(loss)
        np.testing.assert_array_equal(small.grad, np.full((2, 2), 5.0))
        np.testing.assert_array_equal(
            big.grad, np.broadcast_to(small.numpy()[:, None, :], (2, 5, 2)))

    def test_incompatible_shapes_raise(self):
        a = tc.Tensor(np.ones((2, 3)))
        b = tc.Tensor(np.ones((4, 5)))
        with pytest.raises(tc.ShapeError, match="broadcast"):
            tc.add(a, b)


class TestTape:
    def test_fanout_accumulates(self):
        x = _t64([3.0])
        with tc.Tape() as tape:
            y = tc.add(tc.mul(x, x), x)
            loss = tc.sum_all(y)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [7.0])  # 2x + 1 at x = 3

    def test_each_record_visited_once(self):
        x = _t64(np.array([2.0]))
        with tc.Tape() as tape:
            a = tc.mul(x, 2.0)
            b = tc.add(x, 1.0)
            c = tc.mul(a, b)
            loss = tc.sum_all(c)
        calls = []
        for rec in tape.records:
            orig = rec.backward_fn
            rec.backward_fn = (lambda f, r: lambda g: calls.append(r) or f(g))(
                orig, rec)
        tape.backward(loss)
        assert len(calls) == len(tape.records)
        assert len(set(id(r) for r in calls)) == len(calls)

    def test_records_are_in_topological_order(self):
        x = _t64(np.ones(3))
        with tc.Tape() as tape:
            y = tc.mul(tc.add(x, 1.0), tc.exp(x))
            tc.sum_all(y)
        seen = {x.node_id}
        for rec in tape.records:
            for i in rec.input_ids:
                assert i in seen or not any(
                    r.out_id == i for r in tape.records)
            seen.add(rec.out_id)

    def test_repeated_backward_accumulates(self):
        x = _t64([1.0, 2.0])
        with tc.Tape() as tape:
            loss = tc.sum_all(tc.mul(x, x))
        tape.backward(loss)
        first = x.grad.copy()
        for rec in tape.records:
            rec.out.grad = None
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, 2.0 * first)

    def test_no_tape_means_no_recording(self):
        x = _t64([1.0])
        y = tc.mul(x, x)
        assert not y.requires_grad

    def test_backward_requires_scalar(self):
        x = _t64(np.ones((2, 2)))
        with tc.Tape() as tape:
            y = tc.mul(x, x)
        with pytest.raises(tc.ShapeError, match="scalar"):
            tape.backward(y)


class TestOpContracts:
    def test_conv1d_output_length(self):
        x = tc.Tensor(np.zeros((1, 10, 2)))
        k = tc.Tensor(np.zeros((3, 2, 4)))
        assert tc.conv1d(x, k, stride=2).shape == (1, 4, 4)
        assert tc.conv1d(x, k, stride=1, padding=1).shape == (1, 10, 4)

    def test_conv1d_too_short_raises(self):
        x = tc.Tensor(np.zeros((1, 2, 2)))
        k = tc.Tensor(np.zeros((3, 2, 4)))
        with pytest.raises(tc.ShapeError, match="short"):
            tc.conv1d(x, k)

    def test_matmul_inner_mismatch_raises(self):
        a = tc.Tensor(np.zeros((2, 3)))
        b = tc.Tensor(np.zeros((4, 2)))
        with pytest.raises(tc.ShapeError, match="inner"):
            tc.matmul(a, b)

    def test_layernorm_constant_slice_is_zero(self):
        x = tc.Tensor(np.full((3, 4), 2.5))
        out = tc.layernorm(x, tc.Tensor(np.ones(4)), tc.Tensor(np.zeros(4)))
        np.testing.assert_allclose(out.numpy(), 0.0, atol=1e-5)

    def test_gru_cell_all_zero_params_keeps_zero_state(self):
        x = tc.Tensor(np.zeros((2, 3)))
        h = tc.Tensor(np.zeros((2, 4)))
        zeros = lambda s: tc.Tensor(np.zeros(s))
        out = tc.gru_cell(x, h, zeros((3, 12)), zeros((4, 12)),
                          zeros(12), zeros(12))
        np.testing.assert_array_equal(out.numpy(), np.zeros((2, 4)))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        x = tc.Tensor(rng.standard_normal((4, 7)) * 10, dtype=np.float64)
        s = tc.softmax_lastdim(x)
        np.testing.assert_allclose(s.numpy().sum(axis=-1), 1.0, atol=1e-12)

    def test_clamp_kills_gradient_outside_range(self):
        x = _t64([-2.0, 0.5, 2.0])
        with tc.Tape() as tape:
            loss = tc.sum_all(tc.clamp(x, 0.0, 1.0))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_embedding_rows_receive_gradients(self):
        table = _t64(np.arange(12.0).reshape(4, 3))
        with tc.Tape() as tape:
            out = tc.embedding_lookup(table, np.array([1, 1, 3]))
            loss = tc.sum_all(out)
        tape.backward(loss)
        np.testing.assert_array_equal(table.grad.sum(axis=1), [0.0, 6.0, 0.0, 3.0])

    def test_embedding_id_out_of_range(self):
        table = tc.Tensor(np.zeros((4, 3)))
        with pytest.raises(tc.ShapeError, match="range"):
            tc.embedding_lookup(table, np.array([4]))

    def test_saturating_activations_stay_finite(self):
        x = _t64([-20.0, 20.0])
        for fn in (tc.sigmoid, tc.tanh):
            err = tc.check_gradients(fn, [x.detach()])
            assert np.isfinite(err)
            x2 = _t64([-20.0, 20.0])
            with tc.Tape() as tape:
                loss = tc.sum_all(fn(x2))
            tape.backward(loss)
            assert np.all(np.isfinite(x2.grad))


_GRADCHECK_CASES = {
    "add": (lambda a, b: tc.add(a, b), [(2, 3), (2, 3)]),
    "add_bcast": (lambda a, b: tc.add(a, b), [(2, 3), (2, 4, 3)]),
    "sub": (lambda a, b: tc.sub(a, b), [(3, 2), (3, 2)]),
    "mul_bcast": (lambda a, b: tc.mul(a, b), [(2, 3), (2, 4, 3)]),
    "div": (lambda a, b: tc.div(a, tc.add(tc.mul(b, b), 0.5)), [(2, 3), (2, 3)]),
    "neg": (tc.neg, [(4,)]),
    "exp": (tc.exp, [(2, 3)]),
    "log": (lambda x: tc.log(tc.add(tc.mul(x, x), 0.2)), [(2, 3)]),
    "sqrt": (lambda x: tc.sqrt(tc.add(tc.mul(x, x), 0.2)), [(2, 3)]),
    "tanh": (tc.tanh, [(2, 3)]),
    "sigmoid": (tc.sigmoid, [(2, 3)]),
    "relu": (lambda x: tc.relu(tc.add(x, 0.05)), [(2, 3)]),
    "swish": (tc.swish, [(2, 3)]),
    "matmul": (tc.matmul, [(2, 3), (3, 2)]),
    "matmul_batched": (tc.matmul, [(2, 3, 4), (2, 4, 2)]),
    "matmul_shared_rhs": (tc.matmul, [(2, 3, 4), (4, 2)]),
    "softmax": (tc.softmax_lastdim, [(3, 5)]),
    "layernorm": (tc.layernorm, [(2, 3, 5), (5,), (5,)]),
    "conv1d": (lambda x, k: tc.conv1d(x, k, stride=2, padding=1),
               [(2, 9, 3), (3, 3, 4)]),
    "depthwise": (lambda x, k: tc.depthwise_conv1d(x, k, padding=2),
                  [(2, 8, 3), (5, 3)]),
    "gru_cell": (tc.gru_cell, [(2, 3), (2, 4), (3, 12), (4, 12), (12,), (12,)]),
    "concat": (lambda a, b: tc.concat([a, b], axis=1), [(2, 3, 4), (2, 2, 4)]),
    "sum_axis": (lambda x: tc.sum_over_axis(x, 1), [(2, 4, 3)]),
    "mean_axis": (lambda x: tc.mean_over_axis(x, 1, keepdims=True), [(2, 4, 3)]),
    "reshape": (lambda x: tc.reshape(x, (2, 6)), [(2, 3, 2)]),
    "swapaxes": (lambda x: tc.swapaxes(x, 1, 2), [(2, 3, 4)]),
    "slice": (lambda x: tc.slice_axis(x, 1, 1, 3), [(2, 4, 3)]),
    "clamp": (lambda x: tc.clamp(x, -0.5, 0.5), [(3, 3)]),
}


@pytest.mark.parametrize("name", sorted(_GRADCHECK_CASES))
def test_backward_matches_central_differences(name):
    fn, shapes = _GRADCHECK_CASES[name]
    rng = np.random.default_rng(hash(name) % (2 ** 32))
    args = [tc.Tensor(rng.standard_normal(s) * 0.7, requires_grad=True,
                      dtype=np.float64) for s in shapes]
    assert tc.check_gradients(fn, args, rng=rng) < 1e-5


class TestContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        mapping = {
            "a.weight": rng.standard_normal((3, 4)).astype(np.float32),
            "a.bias": rng.standard_normal(4).astype(np.float32),
            "b.scale": rng.standard_normal((2, 2, 2)),
        }
        p = tmp_path / "dump.bin"
        tc.save_tensors(p, mapping)
        back = tc.load_tensors(p)
        assert set(back) == set(mapping)
        for k in mapping:
            assert back[k].dtype == mapping[k].dtype
            np.testing.assert_array_equal(back[k], mapping[k])

    def test_write_is_deterministic(self, tmp_path):
        mapping = {"z": np.ones(3, dtype=np.float32),
                   "a": np.zeros((2, 2), dtype=np.float32)}
        p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
        tc.save_tensors(p1, mapping)
        tc.save_tensors(p2, dict(reversed(list(mapping.items()))))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(tc.ContainerError, match="magic"):
            tc.load_tensors(p)
