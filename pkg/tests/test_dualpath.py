"""Dual-path structure: recurrences, width law, feature reuse, equivalences."""
import numpy as np
import pytest

import dpno.autodiff as ad
from dpno.autodiff import Tape, Tensor
from dpno.blocks import Affine, FnoBlock, LiftProject, Mlp, lift, make_coords, project
from dpno.dualpath import DualPathCore, dense_path, res_path
from dpno.models import DualPathDeepONetModel, DualPathFnoModel, StackedFnoModel
from dpno.spectral import mode_count

from helpers import gradcheck


def zero_fno_block(d_in, d_out, modes):
    blk = FnoBlock.init(np.random.default_rng(0), d_in, d_out, modes)
    blk.mode_weights.data[:] = 0.0
    blk.pointwise.weight.data[:] = 0.0
    blk.pointwise.bias.data[:] = 0.0
    return blk


class TestResPath:
    def test_zero_blocks_identity_exact(self):
        blocks = [zero_fno_block(3, 3, (4,)) for _ in range(4)]
        x = Tensor(np.random.default_rng(1).standard_normal((2, 16, 3)))
        out = res_path(x, blocks)
        # gelu(0) == 0 exactly, so the residual path is the identity bit-for-bit
        assert np.array_equal(out.data, x.data)

    def test_empty_block_list_is_identity(self):
        x = Tensor(np.random.default_rng(2).standard_normal((2, 8, 3)))
        assert res_path(x, []) is x

    def test_single_block_adds_block_output(self):
        blk = FnoBlock.init(np.random.default_rng(3), 2, 2, (3,))
        x = Tensor(np.random.default_rng(4).standard_normal((1, 8, 2)))
        g = blk(x).data  # direct evaluation of the block alone
        out = res_path(x, [blk])
        assert np.allclose(out.data, x.data + g, atol=1e-15)


class TestDensePath:
    def test_no_blocks_returns_input(self):
        x = Tensor(np.random.default_rng(5).standard_normal((2, 8, 4)))
        assert dense_path(x, []) is x

    def test_width_law(self):
        # d_v=32, K_d=3: block 2 consumes 96 channels, stack ends at 128
        d_v = 32
        consumed = []

        class Probe:
            def __init__(self, k):
                self.k = k

            def __call__(self, x):
                consumed.append(x.shape[-1])
                return Tensor(np.zeros(x.shape[:-1] + (d_v,)))

        x = Tensor(np.random.default_rng(6).standard_normal((1, 8, d_v)))
        out = dense_path(x, [Probe(k) for k in range(3)])
        assert consumed == [32, 64, 96]
        assert out.shape[-1] == 128

    def test_zero_blocks_stack_is_input_then_zeros(self):
        d_v = 4
        blocks = [zero_fno_block((k + 1) * d_v, d_v, (3,)) for k in range(3)]
        x = Tensor(np.random.default_rng(7).standard_normal((1, 8, d_v)))
        out = dense_path(x, blocks)
        assert np.array_equal(out.data[..., :d_v], x.data)
        assert np.array_equal(out.data[..., d_v:], np.zeros((1, 8, 3 * d_v)))

    def test_feature_reuse_input_slice_passthrough(self):
        d_v = 4
        rng = np.random.default_rng(8)
        blocks = [FnoBlock.init(rng, (k + 1) * d_v, d_v, (3,)) for k in range(2)]
        x = rng.standard_normal((1, 8, d_v))
        delta = np.zeros_like(x)
        delta[0, 3, 2] = 0.25
        out0 = dense_path(Tensor(x), blocks).data
        out1 = dense_path(Tensor(x + delta), blocks).data
        assert np.array_equal(out1[..., :d_v] - out0[..., :d_v], delta)


class TestMergedModel:
    def test_zero_paths_and_merge_give_zero_prediction(self):
        rng = np.random.default_rng(9)
        model = DualPathFnoModel.build(rng, d_a=1, d_u=1, ndim=1, width=4, modes=(3,),
                                       res_blocks=2, dense_blocks=2)
        for _, p in model.named_parameters():
            p.data[:] = 0.0
        a = Tensor(rng.standard_normal((2, 16, 1)))
        out = model(a, make_coords((16,)))
        assert np.array_equal(out.data, np.zeros((2, 16, 1)))

    def test_parameter_count_closed_form(self):
        d_v, k_max, K_r, K_d = 16, 12, 4, 3
        model = DualPathFnoModel.build(np.random.default_rng(10), d_a=1, d_u=1, ndim=1,
                                       width=d_v, modes=(k_max,), res_blocks=K_r,
                                       dense_blocks=K_d, merge_hidden=128)
        # independent arithmetic of per-piece parameter counts
        lift_n = (1 + 1) * d_v + d_v
        proj_n = (d_v * 128 + 128) + (128 * 1 + 1)
        res_n = K_r * (k_max * d_v * d_v * 2 + d_v * d_v + d_v)
        dense_n = sum(
            k_max * ((k + 1) * d_v) * d_v * 2 + ((k + 1) * d_v) * d_v + d_v
            for k in range(K_d)
        )
        merge_in = d_v + (K_d + 1) * d_v
        merge_n = (merge_in * 128 + 128) + (128 * d_v + d_v)
        expected = lift_n + proj_n + res_n + dense_n + merge_n
        assert model.parameter_count() == expected

    def test_end_to_end_gradient_grid16(self):
        rng = np.random.default_rng(11)
        model = DualPathFnoModel.build(rng, d_a=1, d_u=1, ndim=1, width=3, modes=(2,),
                                       res_blocks=2, dense_blocks=2, merge_hidden=5)
        a = Tensor(rng.uniform(-1, 1, (2, 16, 1)), requires_grad=True)
        coords = make_coords((16,))
        tgt = rng.uniform(-1, 1, (2, 16, 1))
        params = [a] + model.parameters()

        def loss():
            return ad.relative_l2(model(a, coords), tgt)

        assert gradcheck(loss, params, floor=1e-6) < 1e-4

    def test_constructed_merge_equals_plain_residual_fno(self):
        # K_r=1, K_d=0, merge = exact selector of the residual slice (identity
        # activation) => identical to lift -> one residual block -> project
        rng = np.random.default_rng(12)
        d_v = 4
        lp = LiftProject.init(rng, 1, 1, d_v, 1)
        blk = FnoBlock.init(rng, d_v, d_v, (3,))
        sel = np.zeros((2 * d_v, d_v))
        sel[:d_v, :] = np.eye(d_v)
        merge = Mlp(
            [Affine(Tensor(sel, requires_grad=True), Tensor(np.zeros(d_v), requires_grad=True)),
             Affine(Tensor(np.eye(d_v), requires_grad=True), Tensor(np.zeros(d_v), requires_grad=True))],
            activation="identity",
        )
        dual = DualPathFnoModel(lp, DualPathCore([blk], [], merge), (3,), "f64")

        a = Tensor(rng.standard_normal((2, 16, 1)))
        coords = make_coords((16,))
        merged_out = dual(a, coords).data

        a0 = lift(a, coords, lp)
        plain_out = project(res_path(a0, [blk]), lp).data
        assert np.max(np.abs(merged_out - plain_out)) < 1e-12


class TestDualPathDeepONet:
    def test_zeroed_trunk_gives_zero_prediction(self):
        rng = np.random.default_rng(13)
        model = DualPathDeepONetModel.build(rng, n_sensors=8, query_dim=1, basis=4,
                                            hidden=6, depth=2, res_blocks=2, dense_blocks=1,
                                            merge_hidden=5)
        for name, p in model.named_parameters():
            if name.startswith(("embed", "trunk")):
                p.data[:] = 0.0
        a = Tensor(rng.standard_normal((3, 8)))
        out = model(a, make_coords((5,)))
        assert np.array_equal(out.data, np.zeros((3, 5)))

    def test_basis_count_contract(self):
        rng = np.random.default_rng(14)
        for K_r, K_d in ((1, 0), (2, 1), (4, 3)):
            model = DualPathDeepONetModel.build(rng, n_sensors=8, query_dim=2, basis=7,
                                                hidden=6, depth=2, res_blocks=K_r,
                                                dense_blocks=K_d, merge_hidden=5)
            q = Tensor(np.random.default_rng(15).uniform(0, 1, (9, 2)))
            assert model.trunk_forward(q).shape == (9, 7)

    def test_bilinearity_in_branch_output(self):
        # scaling the branch output function by alpha scales predictions by alpha
        rng = np.random.default_rng(16)
        model = DualPathDeepONetModel.build(rng, n_sensors=6, query_dim=1, basis=4,
                                            hidden=6, depth=2, res_blocks=2, dense_blocks=1,
                                            merge_hidden=5)
        # constructed linear branch: single path through with no bias
        for layer in model.branch.layers:
            layer.bias.data[:] = 0.0
        a = np.random.default_rng(17).standard_normal((2, 6))
        queries = make_coords((5,))
        coeffs = model.branch(Tensor(a)).data
        basis_vals = model.trunk_forward(Tensor(queries)).data
        pred = model(Tensor(a), queries).data
        assert np.allclose(pred, coeffs @ basis_vals.T, atol=1e-12)
        assert np.allclose((3.0 * coeffs) @ basis_vals.T, 3.0 * pred, atol=1e-12)

    def test_end_to_end_gradient(self):
        rng = np.random.default_rng(18)
        model = DualPathDeepONetModel.build(rng, n_sensors=5, query_dim=1, basis=3,
                                            hidden=4, depth=2, res_blocks=2, dense_blocks=2,
                                            merge_hidden=4)
        a = Tensor(rng.uniform(-1, 1, (2, 5)), requires_grad=True)
        queries = make_coords((4,))
        tgt = rng.uniform(-1, 1, (2, 4))
        params = [a] + model.parameters()

        def loss():
            return ad.relative_l2(model(a, queries), tgt)

        assert gradcheck(loss, params, floor=1e-6) < 1e-4


class TestStackedFno:
    def test_zero_params_zero_prediction_rel_l2_one(self):
        rng = np.random.default_rng(19)
        model = StackedFnoModel.build(rng, d_a=1, d_u=1, ndim=1, width=4, modes=(3,))
        for _, p in model.named_parameters():
            p.data[:] = 0.0
        a = Tensor(rng.standard_normal((2, 16, 1)))
        out = model(a, make_coords((16,)))
        assert np.array_equal(out.data, np.zeros((2, 16, 1)))
        tgt = rng.standard_normal((2, 16, 1))
        assert abs(float(ad.relative_l2(out, tgt).data) - 1.0) < 1e-12

    def test_burgers_shape_contract(self):
        rng = np.random.default_rng(20)
        model = StackedFnoModel.build(rng, d_a=1, d_u=1, ndim=1, width=8, modes=(8,))
        a = Tensor(rng.standard_normal((3, 256, 1)))
        out = model(a, make_coords((256,)))
        assert out.shape == (3, 256, 1)

    def test_activation_identity_on_last_block_only(self):
        model = StackedFnoModel.build(np.random.default_rng(21), 1, 1, 1, width=4, modes=(3,))
        flags = [b.activation for b in model.blocks]
        assert flags == [True, True, True, False]

    def test_resolution_transfer_shapes(self):
        rng = np.random.default_rng(22)
        model = StackedFnoModel.build(rng, d_a=1, d_u=1, ndim=1, width=4, modes=(8,))
        for n in (64, 128):
            out = model(Tensor(rng.standard_normal((1, n, 1))), make_coords((n,)))
            assert out.shape == (1, n, 1)

    def test_end_to_end_gradient_grid16(self):
        rng = np.random.default_rng(23)
        model = StackedFnoModel.build(rng, d_a=1, d_u=1, ndim=1, width=3, modes=(2,), depth=2)
        a = Tensor(rng.uniform(-1, 1, (1, 16, 1)), requires_grad=True)
        tgt = rng.uniform(-1, 1, (1, 16, 1))
        coords = make_coords((16,))
        params = [a] + model.parameters()

        def loss():
            return ad.relative_l2(model(a, coords), tgt)

        assert gradcheck(loss, params, floor=1e-6) < 1e-4
