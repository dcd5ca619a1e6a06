import numpy as np
import pytest

from graphmoe import autodiff as ad
from graphmoe.experts import (EXPERT_ORDER, ExpertKind, ExpertParams,
                              GraphContext, PropagationKind, apply_expert,
                              propagate_gat, propagate_gcn, propagate_sage,
                              stage_counts, transform)
from graphmoe.graphs import GraphDataset, generate_sbm
from graphmoe.rng import RngState
from graphmoe.sparse import SparseMatrix

from conftest import path_graph


def ctx_of(g):
    return GraphContext.build(g)


def leaf(tape, x):
    return tape.leaf(np.asarray(x, dtype=np.float64))


class TestPropagateGcn:
    def test_isolated_node_identity(self):
        g = generate_sbm(3, 3, 0.0, 0.0, 3, 0.0, RngState(0))
        ctx = ctx_of(g)
        tape = ad.Tape()
        h = leaf(tape, np.random.default_rng(0).normal(size=(3, 2)))
        out = propagate_gcn(ctx, h)
        assert np.allclose(out.value, h.value)

    def test_path_rows_equal_a_hat(self):
        ctx = ctx_of(path_graph(3))
        tape = ad.Tape()
        out = propagate_gcn(ctx, leaf(tape, np.eye(3)))
        assert np.allclose(out.value, ctx.a_hat.to_dense(), atol=1e-12)

    def test_constant_features_scale_by_row_sums(self):
        g = generate_sbm(20, 2, 0.3, 0.1, 2, 1.0, RngState(1))
        ctx = ctx_of(g)
        tape = ad.Tape()
        out = propagate_gcn(ctx, leaf(tape, np.ones((20, 3))))
        row_sums = ctx.a_hat.to_dense().sum(axis=1)
        assert np.allclose(out.value, row_sums[:, None], atol=1e-12)


class TestPropagateSage:
    def test_path_middle_is_neighbor_mean(self):
        g = path_graph(3)
        ctx = ctx_of(g)
        tape = ad.Tape()
        h = leaf(tape, np.random.default_rng(2).normal(size=(3, 2)))
        out = propagate_sage(ctx, h)
        assert np.allclose(out.value[1], (h.value[0] + h.value[2]) / 2)

    def test_isolated_node_zero(self):
        g = generate_sbm(4, 2, 0.0, 0.0, 2, 1.0, RngState(0))
        ctx = ctx_of(g)
        tape = ad.Tape()
        out = propagate_sage(ctx, leaf(tape, np.ones((4, 2))))
        assert np.allclose(out.value, 0.0)

    def test_matches_dense_oracle(self):
        g = generate_sbm(15, 3, 0.3, 0.1, 3, 1.0, RngState(3))
        ctx = ctx_of(g)
        adj = g.adjacency.to_dense()
        deg = adj.sum(axis=1, keepdims=True)
        dense_op = np.divide(adj, deg, out=np.zeros_like(adj), where=deg > 0)
        tape = ad.Tape()
        h = leaf(tape, np.random.default_rng(4).normal(size=(15, 4)))
        out = propagate_sage(ctx, h)
        assert np.allclose(out.value, dense_op @ h.value, atol=1e-12)


def dense_gat_reference(g, h, a_src, a_dst, slope=0.2):
    n = g.num_nodes
    adj = g.adjacency.to_dense() + np.eye(n)
    p = h @ a_src
    q = h @ a_dst
    z = p[:, None] + q[None, :]
    e = np.where(z > 0, z, slope * z)
    e = np.where(adj > 0, e, -np.inf)
    e -= e.max(axis=1, keepdims=True)
    w = np.exp(e) * (adj > 0)
    alpha = w / w.sum(axis=1, keepdims=True)
    return alpha @ h


class TestPropagateGat:
    def test_identical_features_give_neighborhood_mean(self):
        g = path_graph(4)
        ctx = ctx_of(g)
        tape = ad.Tape()
        h = leaf(tape, np.ones((4, 3)))
        a_src = leaf(tape, np.random.default_rng(5).normal(size=(3, 1)))
        a_dst = leaf(tape, np.random.default_rng(6).normal(size=(3, 1)))
        out = propagate_gat(ctx, h, a_src, a_dst)
        assert np.allclose(out.value, 1.0)  # mean of identical rows

    def test_zero_attention_uniform(self):
        g = path_graph(3)
        ctx = ctx_of(g)
        tape = ad.Tape()
        h = leaf(tape, np.random.default_rng(7).normal(size=(3, 2)))
        zeros = leaf(tape, np.zeros((2, 1)))
        out = propagate_gat(ctx, h, zeros, zeros)
        # node 1 attends uniformly over {0, 1, 2}
        assert np.allclose(out.value[1], h.value.mean(axis=0))

    def test_matches_dense_reference(self):
        g = generate_sbm(12, 3, 0.4, 0.1, 3, 1.0, RngState(8))
        ctx = ctx_of(g)
        rng = np.random.default_rng(9)
        hv = rng.normal(size=(12, 4))
        sv = rng.normal(size=(4, 1))
        dv = rng.normal(size=(4, 1))
        tape = ad.Tape()
        out = propagate_gat(ctx, leaf(tape, hv), leaf(tape, sv), leaf(tape, dv))
        ref = dense_gat_reference(g, hv, sv[:, 0], dv[:, 0])
        assert np.allclose(out.value, ref, atol=1e-10)

    def test_grad_check(self):
        g = path_graph(4)
        ctx = ctx_of(g)
        wv = np.random.default_rng(10).normal(size=(4, 3))

        def build(t, xs):
            out = propagate_gat(ctx, xs[0], xs[1], xs[2])
            return ad.sum_all(ad.hadamard(out, t.leaf(wv)))

        err = ad.grad_check(build, [np.random.default_rng(11).normal(size=(4, 3)),
                                    np.random.default_rng(12).normal(size=(3, 1)),
                                    np.random.default_rng(13).normal(size=(3, 1))])
        assert err < 1e-4


class TestTransform:
    def test_identity_weight(self):
        tape = ad.Tape()
        h = leaf(tape, [[-1.0, 2.0]])
        w = leaf(tape, np.eye(2))
        out = transform(h, w, 0.0, RngState(0), training=False)
        assert np.array_equal(out.value, [[0.0, 2.0]])

    def test_eval_mode_no_dropout(self):
        tape = ad.Tape()
        h = leaf(tape, np.abs(np.random.default_rng(14).normal(size=(4, 3))))
        w = leaf(tape, np.eye(3))
        out = transform(h, w, 0.9, RngState(1), training=False)
        assert np.allclose(out.value, h.value)

    def test_grad(self):
        def build(t, xs):
            out = transform(xs[0], xs[1], 0.0, RngState(0), training=True)
            return ad.sum_all(ad.hadamard(out, t.leaf(
                np.random.default_rng(15).normal(size=(4, 3)))))

        err = ad.grad_check(build,
                            [np.random.default_rng(16).normal(size=(4, 3)) + 0.3,
                             np.random.default_rng(17).normal(size=(3, 3))])
        assert err < 1e-4


def params_for(kind, prop, dh, seed=0):
    rng = np.random.default_rng(seed)
    n_p, n_t = stage_counts(kind)
    tape = ad.Tape()
    weights = [tape.leaf(rng.normal(size=(dh, dh))) for _ in range(n_t)]
    atts = [(tape.leaf(rng.normal(size=(dh, 1))), tape.leaf(rng.normal(size=(dh, 1))))
            for _ in range(n_p)] if prop is PropagationKind.GAT_LIKE else []
    return tape, ExpertParams(weights=weights, atts=atts, dropout=0.0)


class TestApplyExpert:
    def test_pp_is_double_propagation(self):
        g = path_graph(4)
        ctx = ctx_of(g)
        tape, params = params_for(ExpertKind.PP, PropagationKind.GCN_LIKE, 3)
        h = tape.leaf(np.random.default_rng(18).normal(size=(4, 3)))
        out = apply_expert(ExpertKind.PP, PropagationKind.GCN_LIKE, ctx, h,
                           params, RngState(0), False)
        ref = propagate_gcn(ctx, propagate_gcn(ctx, h))
        assert np.allclose(out.value, ref.value)

    def test_tt_identity_weights_on_nonnegative(self):
        g = path_graph(4)
        ctx = ctx_of(g)
        tape = ad.Tape()
        params = ExpertParams(weights=[tape.leaf(np.eye(3)), tape.leaf(np.eye(3))],
                              atts=[], dropout=0.0)
        hv = np.abs(np.random.default_rng(19).normal(size=(4, 3)))
        h = tape.leaf(hv)
        out = apply_expert(ExpertKind.TT, PropagationKind.GCN_LIKE, ctx, h,
                           params, RngState(0), False)
        assert np.allclose(out.value, hv)

    def test_pt_and_tp_differ(self):
        g = generate_sbm(10, 2, 0.4, 0.1, 2, 1.0, RngState(20))
        ctx = ctx_of(g)
        tape = ad.Tape()
        w = tape.leaf(np.random.default_rng(21).normal(size=(3, 3)))
        h = tape.leaf(np.random.default_rng(22).normal(size=(10, 3)))
        pt = apply_expert(ExpertKind.PT, PropagationKind.GCN_LIKE, ctx, h,
                          ExpertParams(weights=[w]), RngState(0), False)
        tp = apply_expert(ExpertKind.TP, PropagationKind.GCN_LIKE, ctx, h,
                          ExpertParams(weights=[w]), RngState(0), False)
        assert not np.allclose(pt.value, tp.value)

    @pytest.mark.parametrize("prop", list(PropagationKind))
    @pytest.mark.parametrize("kind", list(EXPERT_ORDER))
    def test_permutation_equivariance(self, prop, kind):
        g = generate_sbm(12, 3, 0.3, 0.1, 3, 1.0, RngState(23))
        perm = np.random.default_rng(24).permutation(12)
        adj = g.adjacency.to_dense()
        gp = GraphDataset(name="perm", num_nodes=12, num_features=3,
                          num_classes=3,
                          adjacency=SparseMatrix.from_dense(adj[perm][:, perm]),
                          features=g.features[perm], labels=g.labels[perm])
        hv = np.random.default_rng(25).normal(size=(12, 4))

        def run(graph, h_in):
            ctx = ctx_of(graph)
            tape, params = params_for(kind, prop, 4, seed=26)
            h = tape.leaf(h_in)
            return apply_expert(kind, prop, ctx, h, params, RngState(0),
                                False).value

        assert np.allclose(run(gp, hv[perm]), run(g, hv)[perm], atol=1e-10)

    def test_output_shape(self):
        g = generate_sbm(9, 3, 0.3, 0.1, 3, 1.0, RngState(27))
        ctx = ctx_of(g)
        for kind in EXPERT_ORDER:
            tape, params = params_for(kind, PropagationKind.SAGE_LIKE, 5, seed=28)
            h = tape.leaf(np.random.default_rng(29).normal(size=(9, 5)))
            out = apply_expert(kind, PropagationKind.SAGE_LIKE, ctx, h, params,
                               RngState(0), False)
            assert out.value.shape == (9, 5)
