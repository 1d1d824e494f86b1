import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.linear_model import LogisticRegression

from polargraph.graph_global import dag_penalty
from polargraph.synthdata import (PlantedScm, generate_dataset, load_dataset, make_scm, oracle_structure,
                                  sample_activations, sample_batch, sample_scm, save_dataset)


def _tiny_scm(adj, bias):
    n = len(bias)
    return PlantedScm(n, 2, max(n, 4), np.asarray(adj, float), np.asarray(bias, float), np.zeros((2, n)),
                      np.eye(max(n, 4))[:n], np.arange(n), noise_scale=0.1)


@given(st.integers(0, 10_000))
def test_scm_invariants(seed):
    scm = make_scm(seed=seed)
    perm = scm.order
    reordered = scm.au_adj[np.ix_(perm, perm)]
    assert not np.triu(reordered).any()
    np.testing.assert_allclose(scm.signatures @ scm.signatures.T, np.eye(scm.n_au), atol=1e-10)
    for w in (scm.au_adj, scm.expr_weights):
        k = np.count_nonzero(w)
        assert np.count_nonzero(w < 0) == round(0.4 * k)


def test_inhibitory_edges_exist_by_default():
    scm = make_scm()
    assert (scm.au_adj < 0).any() and (scm.expr_weights < 0).any() and (scm.expr_weights > 0).any()


def test_all_off_gives_pure_noise():
    scm = _tiny_scm(np.zeros((3, 3)), [-20.0] * 3)
    x, a, _ = sample_batch(scm, 500, np.random.default_rng(0))
    assert not a.any()
    assert abs(np.std(x) - 0.1) < 0.01


def test_excitatory_chain_monte_carlo():
    adj = np.zeros((2, 2))
    adj[1, 0] = 40.0
    scm = _tiny_scm(adj, [0.0, -20.0])
    a = sample_activations(scm, 10_000, np.random.default_rng(1))
    assert abs(a[a[:, 0] == 1, 1].mean() - 1.0) <= 0.01


def test_inhibitory_edge_monte_carlo():
    adj = np.zeros((3, 3))
    adj[2, 0] = -40.0
    scm = _tiny_scm(adj, [0.0, 0.0, 20.0])
    a = sample_activations(scm, 10_000, np.random.default_rng(2))
    assert a[a[:, 0] == 1, 2].mean() <= 0.01


def test_marginals_non_degenerate():
    for seed in range(5):
        scm = make_scm(seed=seed)
        _, a, e = sample_batch(scm, 20_000, np.random.default_rng(seed))
        rates = a.mean(axis=0)
        assert np.all((rates > 0.05) & (rates < 0.95))
        assert len(np.unique(e)) == scm.n_expr


def test_sample_scm_deterministic_and_labelled():
    scm = make_scm()
    a, b = sample_scm(scm, 7), sample_scm(scm, 7)
    np.testing.assert_array_equal(a.x, b.x)
    assert sample_scm(scm, 7, "au").y_expr is None
    assert sample_scm(scm, 7, "expr").y_au is None


def test_generate_counts_and_disjointness():
    scm = make_scm()
    ds = generate_dataset(scm, 100, 0, seed=3)
    total = sum(len(r) for r in ds.splits().values())
    assert total == 100
    for recs in ds.splits().values():
        assert recs.has_au.all() and not recs.has_expr.any()
    ds = generate_dataset(scm, 200, 300, seed=3)
    for recs in ds.splits().values():
        assert not (recs.has_au & recs.has_expr).any()
        assert (recs.has_au | recs.has_expr).all()
        assert np.all(recs.y_expr[recs.has_au] == -1)
    # the AU part splits exactly; expression strata round per class
    assert (ds.train.has_au.sum(), ds.val.has_au.sum(), ds.test.has_au.sum()) == (160, 20, 20)
    assert abs(ds.train.has_expr.sum() - 240) <= 6 and sum(len(r) for r in ds.splits().values()) == 500


def test_generate_deterministic():
    scm = make_scm()
    a, b = generate_dataset(scm, 50, 50, seed=9), generate_dataset(scm, 50, 50, seed=9)
    for name in ("train", "val", "test"):
        np.testing.assert_array_equal(a.splits()[name].x, b.splits()[name].x)
    with pytest.raises(ValueError):
        generate_dataset(scm, -1, 5)


def test_expression_split_is_stratified():
    ds = generate_dataset(make_scm(), 0, 3000, seed=0)
    full = np.concatenate([r.expr_truth for r in ds.splits().values()])
    share = np.bincount(ds.train.expr_truth, minlength=6) / len(ds.train)
    np.testing.assert_allclose(share, np.bincount(full, minlength=6) / len(full), atol=0.01)


def test_oracle_structure():
    scm = make_scm(seed=4)
    o = oracle_structure(scm)
    np.testing.assert_array_equal(o["au_support"], scm.au_adj != 0)
    assert set(np.unique(o["au_signs"])) <= {-1, 0, 1}
    assert abs(dag_penalty(o["au_support"].astype(float)).item()) <= 1e-9


def test_round_trip_is_bit_exact(tmp_path):
    ds = generate_dataset(make_scm(seed=2), 40, 40, seed=1)
    path = tmp_path / "d.jsonl"
    save_dataset(ds, path)
    back = load_dataset(path)
    for name, recs in ds.splits().items():
        other = back.splits()[name]
        for field in ("x", "y_au", "has_au", "y_expr", "has_expr", "au_truth", "expr_truth"):
            assert np.array_equal(getattr(recs, field), getattr(other, field)), field
    np.testing.assert_array_equal(back.scm.au_adj, ds.scm.au_adj)
    np.testing.assert_array_equal(back.scm.signatures, ds.scm.signatures)


def test_load_rejects_foreign_files(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"kind": "something"}\n')
    with pytest.raises(ValueError):
        load_dataset(p)


def test_linear_probe_identifiability():
    """Each AU is recoverable from x by a linear probe (precondition for structure scoring)."""
    scm = make_scm()
    x, a, _ = sample_batch(scm, 4000, np.random.default_rng(0))
    xt, at, _ = sample_batch(scm, 2000, np.random.default_rng(1))
    for i in range(scm.n_au):
        probe = LogisticRegression(max_iter=1000).fit(x, a[:, i])
        assert probe.score(xt, at[:, i]) >= 0.95
