"""Planted signed SCMs over binary AU activations, with disjoint AU / expression labels."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np


@dataclass
class PlantedScm:
    n_au: int
    n_expr: int
    d_in: int
    au_adj: np.ndarray        # (N_AU, N_AU); row = child, column = parent
    au_bias: np.ndarray       # (N_AU,)
    expr_weights: np.ndarray  # (N_Expr, N_AU)
    signatures: np.ndarray    # (N_AU, D_in), orthonormal rows
    order: np.ndarray         # topological order of AU indices
    expr_bias: Optional[np.ndarray] = None  # (N_Expr,); zeros when None
    noise_scale: float = 0.1
    gumbel_temp: float = 1.0
    seed: int = 0

    def expr_logit_bias(self) -> np.ndarray:
        return np.zeros(self.n_expr) if self.expr_bias is None else self.expr_bias

    def to_dict(self) -> dict:
        return {
            "n_au": self.n_au, "n_expr": self.n_expr, "d_in": self.d_in,
            "au_adj": self.au_adj.tolist(), "au_bias": self.au_bias.tolist(),
            "expr_weights": self.expr_weights.tolist(), "signatures": self.signatures.tolist(),
            "order": self.order.tolist(), "expr_bias": self.expr_logit_bias().tolist(),
            "noise_scale": self.noise_scale,
            "gumbel_temp": self.gumbel_temp, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PlantedScm:
        return cls(
            n_au=int(d["n_au"]), n_expr=int(d["n_expr"]), d_in=int(d["d_in"]),
            au_adj=np.asarray(d["au_adj"], dtype=np.float64),
            au_bias=np.asarray(d["au_bias"], dtype=np.float64),
            expr_weights=np.asarray(d["expr_weights"], dtype=np.float64),
            signatures=np.asarray(d["signatures"], dtype=np.float64),
            order=np.asarray(d["order"], dtype=np.int64),
            expr_bias=np.asarray(d["expr_bias"], dtype=np.float64) if "expr_bias" in d else None,
            noise_scale=float(d["noise_scale"]), gumbel_temp=float(d["gumbel_temp"]),
            seed=int(d["seed"]),
        )


def _signed_magnitudes(rng: np.random.Generator, count: int, neg_frac: float, lo: float, hi: float) -> np.ndarray:
    mags = rng.uniform(lo, hi, count)
    signs = np.ones(count)
    signs[: int(round(neg_frac * count))] = -1.0
    rng.shuffle(signs)
    return mags * signs


def make_scm(n_au: int = 8, n_expr: int = 6, d_in: int = 32, edge_prob: float = 0.3,
             expr_parents: tuple[int, int] = (2, 3), neg_frac: float = 0.4,
             weight_range: tuple[float, float] = (1.5, 3.0), noise_scale: float = 0.1,
             gumbel_temp: float = 1.0, seed: int = 0) -> PlantedScm:
    """Random signed DAG over AUs plus a sparse signed AU->expression map.

    Exactly round(neg_frac * k) of the k nonzero weights in each matrix are
    negative. Biases centre every AU and expression logit for parents active
    half the time.
    """
    if d_in < n_au:
        raise ValueError("orthogonal signatures need d_in >= n_au")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_au)
    support = np.zeros((n_au, n_au), dtype=bool)
    for pos in range(1, n_au):
        child = order[pos]
        parents = order[:pos][rng.random(pos) < edge_prob]
        support[child, parents] = True
    au_adj = np.zeros((n_au, n_au))
    au_adj[support] = _signed_magnitudes(rng, int(support.sum()), neg_frac, *weight_range)
    au_bias = -0.5 * au_adj.sum(axis=1)

    expr_support = np.zeros((n_expr, n_au), dtype=bool)
    lo, hi = expr_parents
    for j in range(n_expr):
        k = int(rng.integers(lo, hi + 1))
        expr_support[j, rng.choice(n_au, size=min(k, n_au), replace=False)] = True
    expr_weights = np.zeros((n_expr, n_au))
    expr_weights[expr_support] = _signed_magnitudes(rng, int(expr_support.sum()), neg_frac, *weight_range)

    q, _ = np.linalg.qr(rng.standard_normal((d_in, n_au)))
    return PlantedScm(n_au, n_expr, d_in, au_adj, au_bias, expr_weights, q.T.copy(), order,
                      -0.5 * expr_weights.sum(axis=1), noise_scale, gumbel_temp, seed)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sample_activations(scm: PlantedScm, n: int, rng: np.random.Generator) -> np.ndarray:
    a = np.zeros((n, scm.n_au))
    for i in scm.order:
        p = _sigmoid(scm.au_bias[i] + a @ scm.au_adj[i])
        a[:, i] = (rng.random(n) < p).astype(np.float64)
    return a


def sample_batch(scm: PlantedScm, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(x, activations, expression) for n independent draws."""
    a = sample_activations(scm, n, rng)
    gumbel = rng.gumbel(size=(n, scm.n_expr)) * scm.gumbel_temp
    expr = np.argmax(a @ scm.expr_weights.T + scm.expr_logit_bias() + gumbel, axis=1)
    x = a @ scm.signatures + rng.normal(0.0, scm.noise_scale, (n, scm.d_in))
    return x, a, expr


@dataclass
class SampleRecord:
    x: np.ndarray
    y_au: Optional[np.ndarray]
    y_expr: Optional[int]
    au_truth: np.ndarray
    expr_truth: int


def sample_scm(scm: PlantedScm, seed, label: str = "both") -> SampleRecord:
    """One record; ``label`` is 'au', 'expr' or 'both' (the latter for evaluation only)."""
    x, a, e = sample_batch(scm, 1, np.random.default_rng(seed))
    return SampleRecord(x[0], a[0].copy() if label in ("au", "both") else None,
                        int(e[0]) if label in ("expr", "both") else None, a[0], int(e[0]))


@dataclass
class Records:
    """Column-major record collection; missing labels are flagged by has_au / has_expr."""

    x: np.ndarray
    y_au: np.ndarray
    has_au: np.ndarray
    y_expr: np.ndarray
    has_expr: np.ndarray
    au_truth: np.ndarray
    expr_truth: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def take(self, idx) -> Records:
        return Records(*(getattr(self, f)[idx] for f in _FIELDS))

    @staticmethod
    def concat(parts: list[Records]) -> Records:
        return Records(*(np.concatenate([getattr(p, f) for p in parts]) for f in _FIELDS))

    def record(self, i: int) -> SampleRecord:
        return SampleRecord(self.x[i], self.y_au[i] if self.has_au[i] else None,
                            int(self.y_expr[i]) if self.has_expr[i] else None,
                            self.au_truth[i], int(self.expr_truth[i]))


_FIELDS = ("x", "y_au", "has_au", "y_expr", "has_expr", "au_truth", "expr_truth")


@dataclass
class DatasetSplit:
    scm: PlantedScm
    train: Records
    val: Records
    test: Records
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def splits(self) -> dict[str, Records]:
        return {"train": self.train, "val": self.val, "test": self.test}


def _labelled(x, a, e, kind: str) -> Records:
    n = len(x)
    is_au = kind == "au"
    return Records(
        x=x,
        y_au=a.copy() if is_au else np.zeros_like(a),
        has_au=np.full(n, is_au),
        y_expr=np.full(n, -1, dtype=np.int64) if is_au else e.astype(np.int64),
        has_expr=np.full(n, not is_au),
        au_truth=a,
        expr_truth=e.astype(np.int64),
    )


def _split_idx(n: int, rng: np.random.Generator, strata: Optional[np.ndarray]) -> tuple[np.ndarray, ...]:
    groups = [np.arange(n)] if strata is None else [np.flatnonzero(strata == s) for s in np.unique(strata)]
    parts: list[list[int]] = [[], [], []]
    for g in groups:
        g = rng.permutation(g)
        n_tr = int(round(0.8 * len(g)))
        n_va = int(round(0.1 * len(g)))
        parts[0].extend(g[:n_tr])
        parts[1].extend(g[n_tr:n_tr + n_va])
        parts[2].extend(g[n_tr + n_va:])
    return tuple(np.sort(np.asarray(p, dtype=np.int64)) for p in parts)


def generate_dataset(scm: PlantedScm, n_au_labeled: int, n_expr_labeled: int, seed: int = 0) -> DatasetSplit:
    """Two disjoint collections (AU-only, expression-only), each split 80/10/10."""
    if n_au_labeled < 0 or n_expr_labeled < 0:
        raise ValueError("record counts must be non-negative")
    rng = np.random.default_rng([seed, 7919])
    au = _labelled(*sample_batch(scm, n_au_labeled, rng), kind="au")
    ex = _labelled(*sample_batch(scm, n_expr_labeled, rng), kind="expr")
    au_idx = _split_idx(len(au), rng, None)
    ex_idx = _split_idx(len(ex), rng, ex.expr_truth)
    parts = [Records.concat([au.take(i), ex.take(j)]) for i, j in zip(au_idx, ex_idx)]
    return DatasetSplit(scm, *parts, seed=seed)


def oracle_structure(scm: PlantedScm) -> dict[str, np.ndarray]:
    return {
        "au_signs": np.sign(scm.au_adj).astype(np.int64),
        "expr_signs": np.sign(scm.expr_weights).astype(np.int64),
        "au_support": scm.au_adj != 0,
        "expr_support": scm.expr_weights != 0,
    }


# -- line-delimited serialization ----------------------------------------------------
#
# Line 1: {"kind": "header", "format": ..., "seed": ..., "scm": {...}}
# Then one line per record:
#   {"kind": "record", "split": "train"|"val"|"test", "x": [...],
#    "y_au": [...] | null, "y_expr": int | null,
#    "truth": {"au": [...], "expr": int}}
# Floats are written with repr-exact JSON so a round trip is bit-identical.

FORMAT = "polargraph-records/1"


def _record_lines(split: str, recs: Records) -> Iterator[str]:
    for i in range(len(recs)):
        yield json.dumps({
            "kind": "record", "split": split, "x": recs.x[i].tolist(),
            "y_au": recs.y_au[i].tolist() if recs.has_au[i] else None,
            "y_expr": int(recs.y_expr[i]) if recs.has_expr[i] else None,
            "truth": {"au": recs.au_truth[i].tolist(), "expr": int(recs.expr_truth[i])},
        })


def save_dataset(ds: DatasetSplit, path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps({"kind": "header", "format": FORMAT, "seed": ds.seed, "scm": ds.scm.to_dict(),
                             "meta": ds.meta}) + "\n")
        for name, recs in ds.splits().items():
            for line in _record_lines(name, recs):
                fh.write(line + "\n")


def load_dataset(path) -> DatasetSplit:
    path = Path(path)
    rows: dict[str, list[dict]] = {"train": [], "val": [], "test": []}
    with path.open() as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "header" or header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        scm = PlantedScm.from_dict(header["scm"])
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("split") not in rows:
                raise ValueError(f"{path}:{lineno}: bad split {rec.get('split')!r}")
            rows[rec["split"]].append(rec)

    def build(rs: list[dict]) -> Records:
        n = len(rs)
        x = np.array([r["x"] for r in rs], dtype=np.float64).reshape(n, scm.d_in)
        truth = np.array([r["truth"]["au"] for r in rs], dtype=np.float64).reshape(n, scm.n_au)
        has_au = np.array([r["y_au"] is not None for r in rs], dtype=bool)
        has_expr = np.array([r["y_expr"] is not None for r in rs], dtype=bool)
        y_au = np.zeros((n, scm.n_au))
        for i, r in enumerate(rs):
            if r["y_au"] is not None:
                y_au[i] = r["y_au"]
        y_expr = np.array([r["y_expr"] if r["y_expr"] is not None else -1 for r in rs], dtype=np.int64)
        expr_truth = np.array([r["truth"]["expr"] for r in rs], dtype=np.int64)
        return Records(x, y_au, has_au, y_expr, has_expr, truth, expr_truth)

    return DatasetSplit(scm, build(rows["train"]), build(rows["val"]), build(rows["test"]),
                        seed=int(header.get("seed", 0)), meta=header.get("meta", {}))
