import math

import numpy as np
import pytest

from polargraph import numcore as nc
from polargraph.graph_adaptive import (AU_AU, AU_EXPR, BranchStack, GateNetwork, HpgatLayer, attention_edges,
                                       forward_stack, gated_fuse, layer_aggregate, loss_sample)
from polargraph.graph_global import ClassifierHeads, aggregate, dag_penalty, polarity_split
from polargraph.numcore import DimensionError, Parameter


def _heads(r, n_au=4, n_expr=3, d=5):
    return ClassifierHeads(Parameter(r.normal(size=(n_au, d)), "h.a"), Parameter(r.normal(size=n_au), "h.ab"),
                           Parameter(r.normal(size=(n_expr, d)), "h.e"), Parameter(r.normal(size=n_expr), "h.eb"))


def _stack(r, kind, n_layers=2, d=5, n_expr=3, loops=False):
    layers = [HpgatLayer.init(r, d, d, f"l{i}") for i in range(n_layers)]
    protos = Parameter(r.normal(size=(n_expr, d)), "protos") if kind == AU_EXPR else None
    return BranchStack(kind, layers, GateNetwork.init("gate"), protos, no_self_loops=loops)


def _scalar_layer(wq=1.0, wk=1.0, a=1.0):
    p = lambda v, n: Parameter(np.array(v, dtype=float), n)
    return HpgatLayer(p([[wq]], "q"), p([[wk]], "k"), p([a], "a"), p([[1.0]], "vp"), p([[1.0]], "vn"))


def test_attention_examples(rng):
    layer = HpgatLayer.init(rng, 4, 4, "l")
    layer.attn_vec.data[...] = 0.0
    assert not attention_edges(rng.normal(size=(3, 4)), rng.normal(size=(5, 4)), layer).data.any()
    layer = HpgatLayer.init(rng, 4, 4, "l")
    q = np.repeat(rng.normal(size=(1, 4)), 3, axis=0)
    e = attention_edges(q, rng.normal(size=(5, 4)), layer).data
    np.testing.assert_array_equal(e[0], e[1])
    np.testing.assert_array_equal(e[0], e[2])
    assert attention_edges([[1.0]], [[1.0]], _scalar_layer()).data[0, 0] == pytest.approx(0.96403, abs=1e-5)


def test_attention_matches_loop(rng):
    layer = HpgatLayer.init(rng, 4, 3, "l")
    q, k = rng.normal(size=(2, 4)), rng.normal(size=(5, 4))
    e = attention_edges(q, k, layer, 0.2).data
    for j in range(2):
        for i in range(5):
            pre = q[j] @ layer.w_q.data + k[i] @ layer.w_k.data
            ref = math.tanh(np.where(pre > 0, pre, 0.2 * pre) @ layer.attn_vec.data)
            assert e[j, i] == pytest.approx(ref, abs=1e-12)
    assert np.all(np.abs(e) < 1)


def test_attention_width_mismatch(rng):
    with pytest.raises(DimensionError):
        attention_edges(rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), HpgatLayer.init(rng, 4, 4, "l"))


def test_layer_aggregate_examples(rng):
    layer = HpgatLayer.init(rng, 4, 4, "l")
    f = rng.normal(size=(3, 4))
    assert not layer_aggregate(np.zeros((3, 3)), f, layer).data.any()
    layer.w_v_neg.data[...] = layer.w_v_pos.data
    e = rng.uniform(-1, 1, (3, 3))
    np.testing.assert_allclose(layer_aggregate(e, f, layer).data, np.abs(e) @ (f @ layer.w_v_pos.data), atol=1e-12)
    one = np.zeros((3, 3))
    one[1, 0] = -0.25
    out = layer_aggregate(one, f, HpgatLayer.init(rng, 4, 4, "m")).data
    assert not out[[0, 2]].any()


def test_gated_fuse_examples(rng):
    eg, es = rng.uniform(-1, 1, (3, 3)), rng.uniform(-1, 1, (3, 3))
    gate = GateNetwork.init("g")
    gate.w.data[...] = 0.0
    gate.b.data[...] = 20.0
    assert np.max(np.abs(gated_fuse(eg, es, gate)[0].data - eg)) < 1e-8
    gate.b.data[...] = -20.0
    assert np.max(np.abs(gated_fuse(eg, es, gate)[0].data - es)) < 1e-8
    gate.b.data[...] = 0.0
    np.testing.assert_allclose(gated_fuse(eg, es, gate)[0].data, (eg + es) / 2, atol=1e-15)
    with pytest.raises(DimensionError):
        gated_fuse(eg, np.zeros((2, 3)), gate)


def test_gate_is_one_scalar_per_sample(rng):
    es = rng.uniform(-1, 1, (6, 3, 3))
    fused, g = gated_fuse(rng.uniform(-1, 1, (3, 3)), es, GateNetwork.init("g"))
    assert g.shape == (6, 1, 1)
    assert np.all(np.abs(fused.data) < 1)


def test_degenerate_stack_equals_global_prediction(rng):
    st = _stack(rng, AU_AU, n_layers=1)
    st.layers[0].attn_vec.data[...] = 0.0
    st.gate.w.data[...] = 0.0
    st.gate.b.data[...] = 40.0
    heads = _heads(rng)
    f = rng.normal(size=(7, 4, 5))
    eg = rng.uniform(-1, 1, (4, 4))
    out = forward_stack(f, st, heads, nc.Tensor(eg))
    ref = heads.au_logits(aggregate(eg, f, st.layers[0].w_v_pos, st.layers[0].w_v_neg))
    np.testing.assert_allclose(out.logits.data, ref.data, atol=1e-12)


def test_expression_queries_are_prototypes(rng):
    st = _stack(rng, AU_EXPR)
    out = forward_stack(rng.normal(size=(2, 4, 5)), st, _heads(rng))
    assert out.queries[0].data.shape[-2:] == st.prototypes.shape
    np.testing.assert_array_equal(out.queries[0].data[0], st.prototypes.data)
    for e in out.layer_edges:
        assert e.shape == (2, 3, 4)  # heterogeneous: N_Expr targets, N_AU sources
    assert out.logits.shape == (2, 3)


def test_recursive_queries_and_fixed_keys(rng):
    st = _stack(rng, AU_AU, n_layers=3)
    f = rng.normal(size=(2, 4, 5))
    out = forward_stack(f, st, _heads(rng))
    np.testing.assert_array_equal(out.queries[0].data, f)
    for l in range(1, 3):
        np.testing.assert_array_equal(out.queries[l].data, out.layer_targets[l - 1].data)
    ref = attention_edges(out.queries[2], f, st.layers[2])
    np.testing.assert_array_equal(out.layer_edges[2].data, ref.data)


def test_stack_deterministic_and_adaptive(rng):
    st, heads = _stack(rng, AU_AU), _heads(rng)
    eg = nc.Tensor(rng.uniform(-1, 1, (4, 4)))
    f = rng.normal(size=(2, 4, 5))
    a, b = forward_stack(f, st, heads, eg), forward_stack(f, st, heads, eg)
    np.testing.assert_array_equal(a.logits.data, b.logits.data)
    assert not np.array_equal(a.fused.data[0], a.fused.data[1])
    assert np.all(np.abs(a.fused.data) < 1)
    for e in a.layer_edges + [a.fused]:
        pair = polarity_split(e)
        assert np.array_equal(pair.pos.data - pair.neg.data, e.data)


def test_self_loops_masked(rng):
    st = _stack(rng, AU_AU, loops=True)
    out = forward_stack(rng.normal(size=(3, 4, 5)), st, _heads(rng))
    for e in out.layer_edges:
        assert not np.diagonal(e.data, axis1=-2, axis2=-1).any()


def test_loss_sample_examples(rng):
    fused = rng.uniform(-1, 1, (1, 4, 4))
    same = np.repeat(fused, 5, axis=0)
    one = loss_sample(None, None, None, None, None, None, fused, 1.0)["dag"].item()
    many = loss_sample(None, None, None, None, None, None, same, 1.0)["dag"].item()
    assert one == pytest.approx(many, abs=1e-12)
    assert one == pytest.approx(dag_penalty(fused[0]).item(), abs=1e-12)
    pure = loss_sample(np.zeros((5, 4)), None, np.ones((5, 4)), np.ones(5, bool), None, None, same, 0.0)
    assert set(pure) == {"au"} and pure["au"].item() == pytest.approx(math.log(2))
    ex = loss_sample(None, np.zeros((2, 6)), None, None, np.array([1, 2]), np.ones(2, bool))
    assert ex["expr"].item() == pytest.approx(math.log(6))


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("kind", [AU_AU, AU_EXPR])
def test_stack_gradients(seed, kind):
    r = np.random.default_rng(seed)
    st, heads = _stack(r, kind, loops=kind == AU_AU), _heads(r)
    f = Parameter(r.normal(size=(3, 4, 5)), "f")
    n_t = 4 if kind == AU_AU else 3
    eg = Parameter(r.uniform(-0.9, 0.9, (n_t, 4)), "eg")
    y = (r.random((3, 4)) < 0.5).astype(float)
    ye = r.integers(0, 3, 3)
    has = np.ones(3, bool)

    def loss():
        out = forward_stack(f, st, heads, eg)
        if kind == AU_AU:
            terms = loss_sample(out.logits, None, y, has, None, None, out.fused, 0.2)
        else:
            terms = loss_sample(None, out.logits, None, None, ye, has)
        total = nc.Tensor(0.0)
        for v in terms.values():
            total = total + v
        return total

    rep = nc.finite_diff_check(loss, st.parameters() + heads.parameters() + [f, eg])
    assert rep.passed, rep.max_rel_error
