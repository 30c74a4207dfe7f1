"""Tests for transports, the full encoder-decoder model, heads, and the
capacity probe."""
import numpy as np
import pytest

from topounet import autodiff as ad
from topounet.autodiff import Tensor, backward
from topounet.complexes import CombinatorialComplex, incidence
from topounet.lifting import GraphInput, lift_graph
from topounet.model import (
    ModelState,
    RefinementSpec,
    TopoUNet,
    TopoUNetConfig,
    TransportSpec,
    count_parameters,
    linear_capacity_probe,
    transport_down,
    transport_up,
)
from topounet.synthetic import random_permutations, random_test_complex

TRANSPORTS = ("incidence_conv", "normalized_incidence", "attention", "gated")


def single_edge_complex():
    return CombinatorialComplex.from_cells(2, {1: [{0, 1}]})


def k3_complex(with_global=False):
    g = GraphInput(3, [(0, 1), (1, 2), (0, 2)])
    return lift_graph(g, with_triangles=True)


def make_config(path, dims, transport="normalized_incidence", use_skips=True,
                refinement=None, bottleneck=None, head="node_classify",
                head_out_dim=2, dropout=0.0, seed=0):
    return TopoUNetConfig(
        path=path,
        dims=dims,
        transport=transport,
        refinement=refinement or RefinementSpec(kind="pointwise_mlp", hidden_dim=3),
        bottleneck=bottleneck or RefinementSpec(kind="pointwise_mlp", hidden_dim=3),
        use_skips=use_skips,
        head=head,
        head_out_dim=head_out_dim,
        dropout=dropout,
        seed=seed,
    )


class TestTransportValues:
    def test_raw_up_sums_endpoints(self):
        cc = single_edge_complex()
        inc = incidence(cc, 0, 1)
        x = Tensor([[3.0], [5.0]])
        out = transport_up("incidence_conv", inc, x, Tensor([[1.0]]), phi="identity")
        assert np.allclose(out.data, [[8.0]])

    def test_normalized_up_means_endpoints(self):
        cc = single_edge_complex()
        inc = incidence(cc, 0, 1)
        x = Tensor([[3.0], [5.0]])
        out = transport_up("normalized_incidence", inc, x, Tensor([[1.0]]), phi="identity")
        assert np.allclose(out.data, [[4.0]])

    def test_down_direction(self):
        cc = single_edge_complex()
        inc = incidence(cc, 0, 1)
        g = Tensor([[6.0]])
        raw = transport_down("incidence_conv", inc, g, Tensor([[1.0]]), phi="identity")
        assert np.allclose(raw.data, [[6.0], [6.0]])

    @pytest.mark.parametrize("kind", TRANSPORTS)
    def test_standalone_transport_equivariance(self, kind):
        rng = np.random.default_rng(17)
        cc, _ = random_test_complex(rng)
        inc = incidence(cc, 0, 1)
        n0, n1 = cc.num_cells(0), cc.num_cells(1)
        x = rng.standard_normal((n0, 3))
        w = Tensor(rng.standard_normal((3, 2)))
        a_src = Tensor(rng.standard_normal((3, 1)))
        a_ctx = Tensor(rng.standard_normal((3, 1)))
        out = transport_up(kind, inc, Tensor(x), w, a_src, a_ctx)

        perms = random_permutations(cc, rng)
        cc2, record = cc.reindex(perms)
        inc2 = incidence(cc2, 0, 1)
        out2 = transport_up(kind, inc2, Tensor(x[list(record[0])]), w, a_src, a_ctx)
        assert np.max(np.abs(out2.data - out.data[list(record[1])])) < 1e-10


class TestForward:
    def test_depth_zero_is_identity(self):
        cc = k3_complex()
        config = make_config((0,), (2,), refinement=RefinementSpec(kind="none"),
                             bottleneck=RefinementSpec(kind="none"))
        model = TopoUNet(config)
        x = np.random.default_rng(0).standard_normal((3, 2))
        out, _ = model.forward(cc, x)
        assert np.array_equal(out.data, x)

    def test_k3_u_path_shapes(self):
        cc = k3_complex()
        config = make_config((0, 1, 2), (4, 3, 2))
        model = TopoUNet(config)
        x = np.random.default_rng(1).standard_normal((3, 4))
        out, state = model.forward(cc, x)
        assert out.data.shape == (3, 4)
        expected = [(3, 4), (3, 3), (1, 2)]
        for level, (n, d) in enumerate(expected):
            assert state.encoder[level].shape == (n, d)
        for level, (n, d) in enumerate(expected):
            assert state.decoder[level].shape == (n, d)

    def test_input_shape_mismatch_raises(self):
        cc = k3_complex()
        model = TopoUNet(make_config((0, 1), (2, 2)))
        with pytest.raises(AssertionError, match="structural compatibility"):
            model.forward(cc, np.zeros((4, 2)))

    def test_wrong_rank_cochain_rejected(self):
        from topounet.complexes import Cochain

        cc = k3_complex()
        model = TopoUNet(make_config((0, 1), (2, 2)))
        with pytest.raises(ValueError, match="input rank"):
            model.forward(cc, Cochain(1, np.zeros((3, 2))))

    def test_empty_path_rank_is_construction_error(self):
        cc = CombinatorialComplex.from_cells(3, {1: [{0, 1}]})
        model = TopoUNet(make_config((0, 2), (2, 2)))
        with pytest.raises(ValueError, match="zero cells"):
            model.forward(cc, np.zeros((3, 2)))

    @pytest.mark.parametrize("kind", TRANSPORTS)
    def test_full_model_equivariance(self, kind):
        rng = np.random.default_rng(23)
        for _ in range(6):
            cc, path = random_test_complex(rng)
            dims = tuple(int(rng.integers(2, 4)) for _ in path)
            refinement = rng.choice(["pointwise_mlp", "same_rank_message_passing", "none"])
            config = make_config(
                path, dims, transport=kind,
                refinement=RefinementSpec(kind=str(refinement), hidden_dim=3),
                use_skips=bool(rng.integers(0, 2)),
            )
            model = TopoUNet(config)
            x = rng.standard_normal((cc.num_cells(0), dims[0]))
            out, _ = model.forward(cc, x)

            perms = random_permutations(cc, rng)
            cc2, record = cc.reindex(perms)
            out2, _ = model.forward(cc2, x[list(record[0])])
            assert np.max(np.abs(out2.data - out.data[list(record[0])])) < 1e-10

    def test_no_skip_output_is_function_of_bottleneck_alone(self):
        rng = np.random.default_rng(31)
        cc, path = random_test_complex(rng)
        dims = (3,) * len(path)
        config = make_config(path, dims, use_skips=False)
        model = TopoUNet(config)
        x = rng.standard_normal((cc.num_cells(0), 3))
        state = model.encode(cc, x)
        out = model.decode(state).decoder[0].data

        zeroed = ModelState(cc=cc)
        zeroed.encoder = [Tensor(np.zeros_like(e.data)) for e in state.encoder[:-1]]
        zeroed.encoder.append(state.encoder[-1])
        out_zeroed = model.decode(zeroed).decoder[0].data
        assert np.array_equal(out, out_zeroed)

    def test_with_skip_output_uses_encoder_states(self):
        rng = np.random.default_rng(32)
        cc, path = random_test_complex(rng)
        if len(path) == 1:
            path = path + (max(cc.ranks),)
        dims = (3,) * len(path)
        model = TopoUNet(make_config(path, dims, use_skips=True))
        x = rng.standard_normal((cc.num_cells(0), 3))
        state = model.encode(cc, x)
        out = model.decode(state).decoder[0].data
        zeroed = ModelState(cc=cc)
        zeroed.encoder = [Tensor(np.zeros_like(e.data)) for e in state.encoder[:-1]]
        zeroed.encoder.append(state.encoder[-1])
        out_zeroed = model.decode(zeroed).decoder[0].data
        assert not np.array_equal(out, out_zeroed)

    def test_dropout_training_changes_output_eval_does_not(self):
        cc = k3_complex()
        config = make_config(
            (0, 1), (4, 4), dropout=0.5, seed=3,
            refinement=RefinementSpec(kind="pointwise_mlp", hidden_dim=16),
        )
        model = TopoUNet(config)
        x = np.random.default_rng(5).standard_normal((3, 4))
        a, _ = model.forward(cc, x)
        b, _ = model.forward(cc, x)
        assert np.array_equal(a.data, b.data)
        t1, _ = model.forward(cc, x, training=True)
        t2, _ = model.forward(cc, x, training=True)
        assert not np.array_equal(t1.data, t2.data)


class TestGradients:
    def numeric_grad(self, loss_fn, tensor, step=1e-6):
        grad = np.zeros_like(tensor.data)
        flat, gflat = tensor.data.reshape(-1), grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = loss_fn()
            flat[k] = orig - step
            lo = loss_fn()
            flat[k] = orig
            gflat[k] = (hi - lo) / (2 * step)
        return grad

    @pytest.mark.parametrize("kind", TRANSPORTS)
    def test_full_model_gradcheck(self, kind):
        rng = np.random.default_rng(sum(map(ord, kind)))
        cc, path = random_test_complex(rng, max_cells_per_rank=8)
        dims = (2,) * len(path)
        config = make_config(path, dims, transport=kind, head_out_dim=2)
        model = TopoUNet(config)
        # evaluate at a generic point: zero biases would park relu
        # pre-activations exactly on the kink where finite differences break
        for t in model.params.tensors():
            t.data = t.data + rng.normal(0.0, 0.05, t.shape)
        x = rng.standard_normal((cc.num_cells(0), 2))
        y = rng.integers(0, 2, size=cc.num_cells(0))

        def compute_loss():
            out, _ = model.output_tensor(cc, x)
            _, loss = model.head_apply(out, labels=y)
            return loss

        loss = compute_loss()
        model.params.zero_grad()
        backward(loss)
        for name in model.params.names():
            t = model.params[name]
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            numeric = self.numeric_grad(lambda: compute_loss().item(), t)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
            assert np.max(np.abs(analytic - numeric) / denom) < 1e-4, name

    def test_permuted_computation_gives_permuted_gradients(self):
        rng = np.random.default_rng(41)
        cc, path = random_test_complex(rng, max_cells_per_rank=8)
        dims = (2,) * len(path)
        model = TopoUNet(make_config(path, dims))
        x = Tensor(rng.standard_normal((cc.num_cells(0), 2)), requires_grad=True)
        out, _ = model.output_tensor(cc, x)
        backward(ad.mean_all(out))
        gx = x.grad.copy()

        perms = random_permutations(cc, rng)
        cc2, record = cc.reindex(perms)
        x2 = Tensor(x.data[list(record[0])], requires_grad=True)
        out2, _ = model.output_tensor(cc2, x2)
        backward(ad.mean_all(out2))
        assert np.max(np.abs(x2.grad - gx[list(record[0])])) < 1e-10


class TestHeads:
    def test_node_classify_masked(self):
        cc = k3_complex()
        model = TopoUNet(make_config((0, 1), (2, 2), head_out_dim=2))
        out, _ = model.output_tensor(cc, np.ones((3, 2)))
        preds, loss = model.head_apply(out, labels=np.array([0, 1, 0]), mask=[0, 2])
        assert preds.shape == (3,)
        assert np.isfinite(loss.item())

    def test_empty_mask_rejected(self):
        cc = k3_complex()
        model = TopoUNet(make_config((0, 1), (2, 2), head_out_dim=2))
        out, _ = model.output_tensor(cc, np.ones((3, 2)))
        with pytest.raises(ValueError, match="zero rows"):
            model.head_apply(out, labels=np.array([0, 1, 0]), mask=[])

    def test_graph_head_pools_rows(self):
        cc = k3_complex()
        model = TopoUNet(make_config((0, 1), (2, 2), head="graph_classify_mean_pool",
                                     head_out_dim=3))
        out, _ = model.output_tensor(cc, np.ones((3, 2)))
        preds, loss = model.head_apply(out, labels=1)
        assert preds.shape == (1,)
        assert np.isfinite(loss.item())

    def test_reconstruct_exact_target_zero_loss(self):
        cc = k3_complex()
        model = TopoUNet(make_config((0,), (2,), head="reconstruct", head_out_dim=2,
                                     refinement=RefinementSpec(kind="none"),
                                     bottleneck=RefinementSpec(kind="none")))
        x = np.random.default_rng(3).standard_normal((3, 2))
        out, _ = model.output_tensor(cc, x)
        pred, loss = model.head_apply(out, targets=x @ model.params["head.W"].data
                                      + model.params["head.b"].data)
        assert loss.item() < 1e-24


class TestCapacityProbe:
    def global_bottleneck_complex(self, n=4):
        return CombinatorialComplex.from_cells(n, {1: [set(range(n))]})

    def test_small_bottleneck_not_injective(self):
        cc = self.global_bottleneck_complex(4)
        probe = linear_capacity_probe(cc, (0, 1), d0=2, dL=7)
        assert probe["injective"] is False

    def test_wide_bottleneck_rank_bounded(self):
        cc = self.global_bottleneck_complex(4)
        probe = linear_capacity_probe(cc, (0, 1), d0=2, dL=8)
        assert probe["encoder_rank"] <= 8
        assert probe["injective"] == (probe["encoder_rank"] == 8)

    def test_identity_path_injective(self):
        cc = self.global_bottleneck_complex(4)
        probe = linear_capacity_probe(cc, (0,), d0=3, dL=3)
        assert probe["injective"] is True
        assert probe["encoder_rank"] == 12

    def test_k3_witness_injective(self):
        cc = k3_complex()
        probe = linear_capacity_probe(cc, (0, 1), d0=2, dL=2)
        assert probe["encoder_rank"] == 6
        assert probe["injective"] is True

    def test_under_capacity_never_injective(self):
        rng = np.random.default_rng(51)
        for trial in range(20):
            cc, path = random_test_complex(rng)
            n0, nl = cc.num_cells(path[0]), cc.num_cells(path[-1])
            d0 = int(rng.integers(2, 5))
            # force n_L * d_L < n_0 * d_0
            dl_max = (n0 * d0 - 1) // nl
            if dl_max < 1:
                dl = 1
                if nl >= n0 * d0:
                    continue
            else:
                dl = int(rng.integers(1, dl_max + 1))
            probe = linear_capacity_probe(cc, path, d0=d0, dL=dl, seed=trial)
            assert probe["injective"] is False


class TestConfig:
    def test_round_trip_json(self):
        config = make_config((0, 1, 2), (4, 3, 2), transport="attention")
        d = config.to_dict()
        again = TopoUNetConfig.from_dict(d)
        assert again.to_dict() == d

    def test_unknown_keys_rejected(self):
        d = make_config((0, 1), (2, 2)).to_dict()
        d["mystery"] = 1
        with pytest.raises(ValueError, match="mystery"):
            TopoUNetConfig.from_dict(d)

    def test_dims_path_length_mismatch(self):
        with pytest.raises(ValueError, match="dims length"):
            make_config((0, 1), (2, 2, 2))

    def test_count_parameters_monotone_in_path(self):
        cc = None
        short = make_config((0, 1), (4, 4))
        long = make_config((0, 1, 2, 3), (4, 4, 4, 4))
        assert count_parameters(long, cc) > count_parameters(short, cc)

    def test_head_only_parameter_count(self):
        config = make_config((0,), (5,), refinement=RefinementSpec(kind="none"),
                             bottleneck=RefinementSpec(kind="none"), head_out_dim=3)
        assert count_parameters(config, None) == 5 * 3 + 3
