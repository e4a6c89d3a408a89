"""The brute-force reference implementations themselves."""

import numpy as np
import pytest

from structattn import mean_field as mf
from structattn import oracle as orc
from structattn.errors import ShapeError, SizeCapError
from structattn.tensor import Tensor


def outer(vec, h, w, rng):
    m = rng.uniform(0.2, 1.0, size=(h, w))
    return m[None] * np.asarray(vec)[:, None, None], m


class TestMatricizationRank:
    def test_zero_tensor(self):
        assert orc.matricization_rank(np.zeros((3, 2, 2))) == 0

    def test_single_outer_product(self):
        rng = np.random.default_rng(0)
        g, _ = outer([1.0, -2.0, 0.5], 3, 4, rng)
        assert orc.matricization_rank(g) == 1

    def test_three_term_sum(self):
        rng = np.random.default_rng(1)
        g = np.zeros((4, 3, 3))
        for _ in range(3):
            g += outer(rng.normal(size=4), 3, 3, rng)[0]
        assert orc.matricization_rank(g) == 3

    def test_rank_capped_by_channels(self):
        rng = np.random.default_rng(2)
        g = np.zeros((2, 4, 4))
        for _ in range(5):
            g += outer(rng.normal(size=2), 4, 4, rng)[0]
        assert orc.matricization_rank(g) == 2

    def test_tiny_component_below_tolerance(self):
        rng = np.random.default_rng(3)
        g, _ = outer([1.0, 1.0], 3, 3, rng)
        g = g + 1e-13 * outer([1.0, -1.0], 3, 3, rng)[0]
        assert orc.matricization_rank(g) == 1
        assert orc.matricization_rank(g, tol=1e-15) == 2

    def test_rejects_matrix_input(self):
        with pytest.raises(ShapeError):
            orc.matricization_rank(np.zeros((3, 3)))


class TestJacobiSingularValues:
    def test_diagonal_matrix(self):
        sv = orc._jacobi_singular_values(np.diag([3.0, 5.0, 1.0]))
        assert np.max(np.abs(sv - [5.0, 3.0, 1.0])) < 1e-12

    def test_frobenius_identity(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(6, 4))
        sv = orc._jacobi_singular_values(a)
        assert abs(np.sum(sv * sv) - np.sum(a * a)) < 1e-9

    def test_wide_matrix_transposed(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(3, 7))
        sv_a = orc._jacobi_singular_values(a)
        sv_t = orc._jacobi_singular_values(a.T)
        assert np.max(np.abs(sv_a - sv_t)) < 1e-9


class TestBudget:
    def test_conv_respects_budget(self):
        small = orc.OracleBudget(max_elements=10)
        with pytest.raises(SizeCapError, match="exceeds budget"):
            orc.naive_conv2d(np.zeros((2, 3, 3)), np.zeros((2, 2, 1, 1)), budget=small)

    def test_kernel_table_cap_names_alternative(self):
        f = np.zeros((4, 16, 16))
        att = ([np.ones((16, 16))], [np.full(4, 0.25)])
        with pytest.raises(SizeCapError, match="kernel_field"):
            orc.naive_kernel_table(f, f, f, f, att)

    def test_default_budget_allows_small(self):
        x = np.ones((1, 4, 4))
        k = np.ones((1, 1, 1, 1))
        assert orc.naive_conv2d(x, k).shape == (1, 4, 4)


class TestZeroNeutrality:
    def test_hidden_update_without_messages(self):
        f = np.random.default_rng(6).normal(size=(2, 3, 3))
        got = orc.naive_update_hidden(f, [], [])
        assert np.array_equal(got, f)

    def test_hidden_update_zero_messages(self):
        f = np.random.default_rng(7).normal(size=(2, 3, 3))
        att = ([np.ones((3, 3))], [np.ones(2)])
        got = orc.naive_update_hidden(f, [np.zeros((2, 3, 3))], [att])
        assert np.max(np.abs(got - f)) < 1e-15

    def test_gate_updates_on_zero_evidence(self):
        z = np.zeros((3, 2, 2))
        msg = np.zeros((3, 2, 2))
        m = orc.naive_update_spatial_gate(z, msg, np.full(3, 1.0 / 3.0))
        assert np.array_equal(m, np.full((2, 2), 0.5))
        v = orc.naive_update_channel_gate(z, msg, np.ones((2, 2)))
        assert np.max(np.abs(v - 1.0 / 3.0)) < 1e-15

    def test_kernel_table_zero_hidden(self):
        rng = np.random.default_rng(8)
        fr = rng.normal(size=(2, 2, 2))
        fe = rng.normal(size=(2, 2, 2))
        att = ([np.ones((2, 2))], [np.ones(2)])
        table = orc.naive_kernel_table(fr, fe, np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), att)
        flat_r = np.transpose(fr, (1, 2, 0)).reshape(4, 2)
        flat_e = np.transpose(fe, (1, 2, 0)).reshape(4, 2)
        expect = np.einsum("pc,qd->pcqd", flat_r, flat_e)
        assert np.max(np.abs(table - expect)) < 1e-15

    def test_refine_with_zero_bank_is_identity(self):
        rng = np.random.default_rng(9)
        feats = [rng.normal(size=(2, 4, 4))]
        zero = Tensor(np.zeros((2, 2, 3, 3)))
        bank = mf.KernelBank(
            self_kernels=[zero],
            projections=[Tensor(np.zeros((2, 2, 1, 1)))],
            cross_kernels=[zero],
            field_kernels=[Tensor(np.zeros((2, 3, 3, 3)))],
            out_kernel=zero,
        )
        cfg = mf.InferenceConfig(rank=0, variant="none")
        refined, gates = orc.naive_refine_scale(feats, 0, bank, cfg, seed=0)
        assert np.array_equal(refined, feats[0])
        assert gates == [([], [])]


class TestResizeOracle:
    def test_identity(self):
        x = np.random.default_rng(10).normal(size=(2, 3, 3))
        assert np.max(np.abs(orc.naive_resize_bilinear(x, 3, 3) - x)) < 1e-15

    def test_constant_preserved(self):
        x = np.full((1, 2, 2), 3.5)
        got = orc.naive_resize_bilinear(x, 5, 7)
        assert np.max(np.abs(got - 3.5)) < 1e-12


class TestSigmoidScalar:
    def test_extremes_finite(self):
        assert orc._sigmoid_scalar(1e6) == 1.0
        assert orc._sigmoid_scalar(-1e6) == 0.0
        assert orc._sigmoid_scalar(0.0) == 0.5
