"""Tensor value type, primitive ops, and the serialization format."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structattn import oracle as orc
from structattn.errors import NonFiniteError, SerializationError, ShapeError
from structattn.tensor import (
    Shape,
    Tensor,
    conv2d,
    load_tensor,
    outer_map_vec,
    read_tensor,
    resize_bilinear,
    save_tensor,
    sigmoid_map,
    softmax,
    write_tensor,
)


class TestShape:
    def test_count(self):
        assert Shape((2, 3, 4)).count == 24
        assert Shape((7,)).count == 7

    def test_rejects_nonpositive_extent(self):
        with pytest.raises(ShapeError):
            Shape((2, 0, 3))
        with pytest.raises(ShapeError):
            Shape((-1,))

    def test_rejects_empty(self):
        with pytest.raises(ShapeError):
            Shape(())


class TestTensor:
    def test_data_is_flat_row_major_and_read_only(self):
        t = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.dims == (2, 2)
        assert t.data.reshape(-1).tolist() == [1.0, 2.0, 3.0, 4.0]
        with pytest.raises(ValueError):
            t.data[0, 0] = 9.0

    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, float("nan")])
        with pytest.raises(NonFiniteError):
            Tensor([float("inf")])

    def test_item_requires_single_element(self):
        assert Tensor([3.5]).item() == 3.5
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.arange(9.0).reshape(1, 3, 3))
        k = Tensor(np.ones((1, 1, 1, 1)))
        out = conv2d(x, k, stride=1, zero_pad=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_counting_overlapped_ones(self):
        x = Tensor(np.ones((1, 3, 3)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, k, stride=1, zero_pad=1)
        assert out.data[0, 1, 1] == 9.0
        for hh, ww in ((0, 0), (0, 2), (2, 0), (2, 2)):
            assert out.data[0, hh, ww] == 4.0

    def test_same_padding_preserves_extents(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 5, 7)))
        k = Tensor(rng.normal(size=(3, 2, 3, 3)))
        assert conv2d(x, k).dims == (3, 5, 7)

    def test_stride_two_shape(self):
        x = Tensor(np.zeros((1, 6, 6)))
        k = Tensor(np.zeros((2, 1, 3, 3)))
        out = conv2d(x, k, stride=2, zero_pad=1)
        assert out.dims == (2, 3, 3)

    def test_channel_mismatch_names_both_shapes(self):
        x = Tensor(np.zeros((2, 4, 4)))
        k = Tensor(np.zeros((1, 3, 3, 3)))
        with pytest.raises(ShapeError) as exc:
            conv2d(x, k)
        msg = str(exc.value)
        assert "2" in msg and "3" in msg

    def test_even_kernel_rejected(self):
        x = Tensor(np.zeros((1, 4, 4)))
        k = Tensor(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ShapeError):
            conv2d(x, k)

    def test_matches_naive_oracle_small(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(2, 5, 5)))
        k = Tensor(rng.normal(size=(3, 2, 3, 3)))
        got = conv2d(x, k, stride=1, zero_pad=1)
        want = orc.naive_conv2d(x, k, stride=1, zero_pad=1)
        np.testing.assert_allclose(got.data, want.data, rtol=0, atol=1e-12)

    def test_matches_naive_oracle_randomized(self):
        # 100+ cases across channel counts, extents, strides, pads
        rng = np.random.default_rng(12)
        for case in range(110):
            cin = int(rng.integers(1, 4))
            cout = int(rng.integers(1, 4))
            h = int(rng.integers(1, 7))
            w = int(rng.integers(1, 7))
            ks = int(rng.choice([1, 3]))
            stride = int(rng.integers(1, 3))
            pad = ks // 2
            if (h + 2 * pad - ks) < 0 or (w + 2 * pad - ks) < 0:
                continue
            x = Tensor(rng.normal(size=(cin, h, w)))
            k = Tensor(rng.normal(size=(cout, cin, ks, ks)))
            got = conv2d(x, k, stride=stride, zero_pad=pad)
            want = orc.naive_conv2d(x, k, stride=stride, zero_pad=pad)
            scale = max(1.0, float(np.max(np.abs(want.data))))
            assert np.max(np.abs(got.data - want.data)) / scale < 1e-10, f"case {case}"


class TestResizeBilinear:
    def test_identity(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(2, 3, 4)))
        out = resize_bilinear(x, 3, 4)
        assert np.max(np.abs(out.data - x.data)) < 1e-12

    def test_constant_stays_constant(self):
        x = Tensor(np.full((1, 2, 2), 3.25))
        for oh, ow in ((1, 1), (3, 5), (8, 2)):
            out = resize_bilinear(x, oh, ow)
            assert np.max(np.abs(out.data - 3.25)) < 1e-12

    def test_two_by_two_upsample_hand_oracle(self):
        x = Tensor(np.array([[[0.0, 1.0], [2.0, 3.0]]]))
        out = resize_bilinear(x, 4, 4)

        def axis(n_in, n_out, i):
            s = (i + 0.5) * n_in / n_out - 0.5
            lo = math.floor(s)
            t = s - lo
            a = min(max(lo, 0), n_in - 1)
            b = min(max(lo + 1, 0), n_in - 1)
            return a, b, t

        src = x.data[0]
        for i in range(4):
            y0, y1, ty = axis(2, 4, i)
            for j in range(4):
                x0, x1, tx = axis(2, 4, j)
                top = (1 - tx) * src[y0, x0] + tx * src[y0, x1]
                bot = (1 - tx) * src[y1, x0] + tx * src[y1, x1]
                want = (1 - ty) * top + ty * bot
                assert abs(out.data[0, i, j] - want) < 1e-12

    def test_output_within_input_bounds(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            c = int(rng.integers(1, 3))
            h = int(rng.integers(1, 6))
            w = int(rng.integers(1, 6))
            x = Tensor(rng.normal(size=(c, h, w)))
            oh = int(rng.integers(1, 9))
            ow = int(rng.integers(1, 9))
            out = resize_bilinear(x, oh, ow)
            assert out.data.min() >= x.data.min() - 1e-12
            assert out.data.max() <= x.data.max() + 1e-12

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            c = int(rng.integers(1, 3))
            h = int(rng.integers(1, 5))
            w = int(rng.integers(1, 5))
            oh = int(rng.integers(1, 7))
            ow = int(rng.integers(1, 7))
            x = Tensor(rng.normal(size=(c, h, w)))
            got = resize_bilinear(x, oh, ow)
            want = orc.naive_resize_bilinear(x, oh, ow)
            np.testing.assert_allclose(got.data, want.data, rtol=0, atol=1e-12)


class TestSoftmax:
    def test_symmetry(self):
        out = softmax(Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)

    @pytest.mark.parametrize("x", [-3.0, 0.0, 1.7, 250.0])
    def test_shift_invariance_constant_input(self, x):
        out = softmax(Tensor([x, x, x, x]))
        np.testing.assert_allclose(out.data, [0.25] * 4, atol=1e-15)

    def test_large_logits_stable(self):
        out = softmax(Tensor([1000.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] > 1.0 - 1e-12
        assert out.data[1] < 1e-12

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-30, 30))
    @settings(max_examples=60, deadline=None)
    def test_simplex_and_shift(self, vals, shift):
        base = softmax(Tensor(vals))
        assert np.all(base.data > 0)
        assert abs(base.data.sum() - 1.0) < 1e-9
        shifted = softmax(Tensor([v + shift for v in vals]))
        assert np.max(np.abs(base.data - shifted.data)) < 1e-9

    def test_argmax_preserved(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            v = rng.normal(size=5)
            assert int(np.argmax(softmax(Tensor(v)).data)) == int(np.argmax(v))


class TestSigmoidMap:
    def test_zero_is_half(self):
        assert sigmoid_map(Tensor([0.0])).data[0] == 0.5

    @given(st.floats(-700, 700))
    @settings(max_examples=60, deadline=None)
    def test_symmetry_sums_to_one(self, x):
        a = sigmoid_map(Tensor([x])).data[0]
        b = sigmoid_map(Tensor([-x])).data[0]
        assert abs(a + b - 1.0) < 1e-12

    def test_large_input_no_overflow(self):
        out = sigmoid_map(Tensor([1e6]))
        assert 0.0 < out.data[0] <= 1.0
        assert np.isfinite(out.data[0])

    def test_monotone(self):
        xs = np.linspace(-20, 20, 41)
        ys = sigmoid_map(Tensor(xs)).data
        assert np.all(np.diff(ys) > 0)


class TestOuterMapVec:
    def test_one_hot_channel(self):
        m = Tensor(np.ones((2, 2)))
        v = Tensor([1.0, 0.0])
        out = outer_map_vec(m, v)
        np.testing.assert_array_equal(out.data[0], np.ones((2, 2)))
        np.testing.assert_array_equal(out.data[1], np.zeros((2, 2)))

    def test_zero_vector_annihilates(self):
        rng = np.random.default_rng(9)
        m = Tensor(rng.normal(size=(3, 3)))
        out = outer_map_vec(m, Tensor([0.0, 0.0]))
        assert np.all(out.data == 0.0)

    def test_scalar_loop_product(self):
        rng = np.random.default_rng(10)
        m = Tensor(rng.normal(size=(3, 3)))
        v = Tensor(rng.normal(size=4))
        out = outer_map_vec(m, v)
        for c in range(4):
            for hh in range(3):
                for ww in range(3):
                    assert out.data[c, hh, ww] == pytest.approx(
                        m.data[hh, ww] * v.data[c], abs=1e-15
                    )

    def test_matricization_rank_one(self):
        rng = np.random.default_rng(13)
        m = Tensor(rng.normal(size=(3, 4)))
        v = Tensor(rng.normal(size=5))
        out = outer_map_vec(m, v)
        assert orc.matricization_rank(out) == 1


class TestSerialization:
    def test_header_format(self):
        buf = io.BytesIO()
        write_tensor(buf, Tensor(np.zeros((2, 3))))
        raw = buf.getvalue()
        assert raw.startswith(b"shape: 2 3\n")
        assert len(raw) == len(b"shape: 2 3\n") + 6 * 8

    def test_payload_little_endian_float64(self):
        buf = io.BytesIO()
        write_tensor(buf, Tensor([1.0, -2.5]))
        payload = buf.getvalue().split(b"\n", 1)[1]
        assert np.frombuffer(payload, dtype="<f8").tolist() == [1.0, -2.5]

    def test_round_trip_bitwise(self):
        rng = np.random.default_rng(14)
        t = Tensor(rng.normal(size=(2, 3, 4)))
        buf = io.BytesIO()
        write_tensor(buf, t)
        buf.seek(0)
        back = read_tensor(buf)
        assert back.dims == t.dims
        assert np.array_equal(back.data, t.data)

    def test_file_round_trip(self, tmp_path):
        t = Tensor(np.arange(12.0).reshape(3, 4))
        p = tmp_path / "t.bin"
        save_tensor(p, t)
        back = load_tensor(p)
        assert np.array_equal(back.data, t.data)

    def test_bad_header_rejected(self):
        with pytest.raises(SerializationError):
            read_tensor(io.BytesIO(b"shap: 2 2\n" + b"\x00" * 32))

    def test_truncated_payload_rejected(self):
        buf = io.BytesIO()
        write_tensor(buf, Tensor(np.ones((2, 2))))
        raw = buf.getvalue()[:-8]
        with pytest.raises(SerializationError):
            read_tensor(io.BytesIO(raw))
