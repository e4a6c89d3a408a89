"""Low-rank gate assembly from spatial maps and channel vectors."""

import numpy as np
import pytest

from structattn import attention as att
from structattn import oracle as orc
from structattn.errors import ShapeError
from structattn.tensor import Tensor, outer_map_vec


def _softmax(v):
    e = np.exp(v - np.max(v))
    return e / e.sum()


def _random_attention(rng, rank, h, w, c):
    maps = [rng.uniform(0.05, 0.95, size=(h, w)) for _ in range(rank)]
    vectors = [_softmax(rng.normal(size=c)) for _ in range(rank)]
    return att.from_arrays(maps, vectors)


class TestTypes:
    def test_map_must_be_2d(self):
        with pytest.raises(ShapeError):
            att.AttentionMap(Tensor(np.zeros((2, 2, 2))))

    def test_vector_must_be_1d(self):
        with pytest.raises(ShapeError):
            att.AttentionVector(Tensor(np.zeros((2, 2))))

    def test_rank_counts_factors(self):
        a = _random_attention(np.random.default_rng(0), 3, 2, 2, 4)
        assert a.rank == 3
        assert len(a.maps) == 3 and len(a.vectors) == 3

    def test_mismatched_factor_shapes_rejected(self):
        m1 = att.AttentionMap(Tensor(np.ones((2, 2))))
        m2 = att.AttentionMap(Tensor(np.ones((3, 3))))
        v = att.AttentionVector(Tensor(_softmax(np.zeros(2))))
        with pytest.raises(ShapeError):
            att.StructuredAttention(2, [m1, m2], [v, v])

    def test_factor_count_must_match_rank(self):
        m = att.AttentionMap(Tensor(np.ones((2, 2))))
        v = att.AttentionVector(Tensor(_softmax(np.zeros(2))))
        with pytest.raises(ShapeError):
            att.StructuredAttention(2, [m], [v, v])


class TestAssemble:
    def test_rank_one_one_hot_vector(self):
        pattern = np.array([[1.0, 0.0], [0.0, 1.0]])
        a = att.from_arrays([pattern], [np.array([1.0, 0.0])])
        out = att.assemble(a)
        np.testing.assert_array_equal(out.data[0], pattern)
        np.testing.assert_array_equal(out.data[1], np.zeros((2, 2)))

    def test_duplicate_factor_doubles(self):
        rng = np.random.default_rng(1)
        m = rng.uniform(0.1, 0.9, size=(2, 3))
        v = _softmax(rng.normal(size=4))
        single = att.assemble(att.from_arrays([m], [v]))
        double = att.assemble(att.from_arrays([m, m], [v, v]))
        np.testing.assert_allclose(double.data, 2.0 * single.data, atol=1e-15)

    def test_rank_zero_rejected(self):
        a = att.StructuredAttention(0, [], [])
        with pytest.raises(ShapeError):
            att.assemble(a)

    def test_generic_rank_three_matricization(self):
        rng = np.random.default_rng(2)
        a = _random_attention(rng, 3, 4, 4, 5)
        out = att.assemble(a)
        assert orc.matricization_rank(out, tol=1e-9) == 3

    def test_matches_sum_of_outer_products(self):
        rng = np.random.default_rng(3)
        a = _random_attention(rng, 2, 3, 2, 4)
        want = np.zeros((4, 3, 2))
        for t in range(2):
            want += outer_map_vec(a.maps[t].values, a.vectors[t].values).data
        np.testing.assert_allclose(att.assemble(a).data, want, atol=1e-14)

    def test_rank_bound_property(self):
        rng = np.random.default_rng(4)
        for trial in range(25):
            rank = int(rng.integers(1, 4))
            h, w, c = (int(rng.integers(2, 5)) for _ in range(3))
            if rank > min(h * w, c):
                continue
            a = _random_attention(rng, rank, h, w, c)
            assert orc.matricization_rank(att.assemble(a), tol=1e-9) <= rank, f"trial {trial}"

    def test_single_channel_active_with_one_hot_vector(self):
        # rank 1 with a one-hot vector leaves exactly one nonzero channel
        rng = np.random.default_rng(5)
        m = rng.uniform(0.2, 0.8, size=(3, 3))
        v = np.zeros(4)
        v[2] = 1.0
        out = att.assemble(att.from_arrays([m], [v]))
        nonzero = [c for c in range(4) if np.any(out.data[c] != 0.0)]
        assert nonzero == [2]

    def test_linear_in_each_map(self):
        rng = np.random.default_rng(6)
        m1 = rng.uniform(0.1, 0.9, size=(2, 2))
        m2 = rng.uniform(0.1, 0.9, size=(2, 2))
        v = _softmax(rng.normal(size=3))
        a_sum = att.assemble(att.from_arrays([m1 + m2], [v]))
        a_parts = att.assemble(att.from_arrays([m1], [v])).data + att.assemble(
            att.from_arrays([m2], [v])
        ).data
        np.testing.assert_allclose(a_sum.data, a_parts, atol=1e-14)

    def test_homogeneous_in_vector(self):
        rng = np.random.default_rng(7)
        m = rng.uniform(0.1, 0.9, size=(2, 2))
        v = rng.uniform(0.1, 0.5, size=3)
        base = att.assemble(att.from_arrays([m], [v])).data
        scaled = att.assemble(att.from_arrays([m], [2.5 * v])).data
        np.testing.assert_allclose(scaled, 2.5 * base, atol=1e-14)


class TestApplyGate:
    def test_all_ones_gate_is_identity(self):
        rng = np.random.default_rng(8)
        msg = Tensor(rng.normal(size=(2, 2, 2)))
        a = att.from_arrays([np.ones((2, 2))], [np.array([1.0, 1.0])])
        out = att.apply_gate(msg, a)
        np.testing.assert_allclose(out.data, msg.data, atol=1e-15)

    def test_zero_gate_annihilates(self):
        rng = np.random.default_rng(9)
        msg = Tensor(rng.normal(size=(3, 2, 2)))
        a = att.from_arrays([np.zeros((2, 2))], [_softmax(np.zeros(3))])
        out = att.apply_gate(msg, a)
        assert np.all(out.data == 0.0)

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(10)
        msg = Tensor(rng.normal(size=(4, 3, 3)))
        a = _random_attention(rng, 2, 3, 3, 4)
        gate = att.assemble(a)
        out = att.apply_gate(msg, a)
        for c in range(4):
            for hh in range(3):
                for ww in range(3):
                    want = msg.data[c, hh, ww] * gate.data[c, hh, ww]
                    assert abs(out.data[c, hh, ww] - want) < 1e-12

    def test_shape_mismatch_rejected(self):
        msg = Tensor(np.zeros((2, 3, 3)))
        a = _random_attention(np.random.default_rng(11), 1, 2, 2, 2)
        with pytest.raises(ShapeError):
            att.apply_gate(msg, a)
