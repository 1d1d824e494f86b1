"""Prediction and structure-recovery metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from sklearn.metrics import f1_score, roc_auc_score

from .. import numcore as nc
from ..synthdata import PlantedScm, Records, oracle_structure
from .model import Model

EDGE_THRESHOLD = 0.2


def per_class_f1(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    """F1 per column; a column with no positives on either side scores 1."""
    out = np.empty(y_true.shape[1])
    for i in range(y_true.shape[1]):
        t, p = y_true[:, i].astype(int), y_pred[:, i].astype(int)
        out[i] = 1.0 if t.sum() == 0 and p.sum() == 0 else f1_score(t, p, zero_division=0.0)
    return out


def edge_auroc(scores: np.ndarray, support: np.ndarray, exclude_diagonal: bool = False) -> Optional[float]:
    """AUROC of |edge| against the planted support; None when the support is all one class."""
    keep = np.ones(support.shape, dtype=bool)
    if exclude_diagonal:
        np.fill_diagonal(keep, False)
    y, s = support[keep].astype(int), np.abs(scores[keep])
    if y.min() == y.max():
        return None
    return float(roc_auc_score(y, s))


def sign_agreement(learned: np.ndarray, planted: np.ndarray) -> Optional[float]:
    sup = planted != 0
    if not sup.any():
        return None
    return float(np.mean(np.sign(learned[sup]) == np.sign(planted[sup])))


def shd(learned: np.ndarray, support: np.ndarray, threshold: float = EDGE_THRESHOLD,
        square: bool = False) -> int:
    """Structural Hamming distance of the thresholded graph.

    Square (homogeneous) graphs compare each unordered node pair once, so a
    reversed edge costs 1; rectangular graphs count mismatched entries.
    """
    pred = np.abs(learned) > threshold
    sup = support.astype(bool)
    if not square:
        return int(np.sum(pred != sup))
    n = sup.shape[0]
    dist = 0
    for i in range(n):
        for j in range(i + 1, n):
            if (pred[i, j], pred[j, i]) != (sup[i, j], sup[j, i]):
                dist += 1
    return dist


@dataclass
class MetricsReport:
    au_f1: list[float] = field(default_factory=list)
    macro_f1: Optional[float] = None
    graph_macro_f1: dict[str, float] = field(default_factory=dict)
    expr_accuracy: Optional[float] = None
    auroc_au: Optional[float] = None
    auroc_expr: Optional[float] = None
    sign_au: Optional[float] = None
    sign_expr: Optional[float] = None
    shd_au: Optional[int] = None
    shd_expr: Optional[int] = None
    loss_curve: list[float] = field(default_factory=list)

    def composite(self) -> Optional[float]:
        if self.macro_f1 is None or self.auroc_au is None:
            return None
        return self.macro_f1 + self.auroc_au

    def to_dict(self) -> dict:
        return asdict(self)


def population_graphs(model: Model, x: np.ndarray, chunk: int = 512) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Global edge matrices, or the mean per-sample graph when the global graph is off."""
    cfg = model.cfg
    if not (cfg.gc or cfg.sac):
        return None, None
    with nc.no_grad():
        if cfg.gc:
            fw = model.forward(x[:4])
            return fw.e_g_au.data.copy(), fw.e_g_expr.data.copy()
        acc_au = np.zeros((cfg.n_au, cfg.n_au))
        acc_ex = np.zeros((cfg.n_expr, cfg.n_au))
        for s in range(0, len(x), chunk):
            fw = model.forward(x[s:s + chunk])
            acc_au += fw.s_au.fused.data.sum(axis=0)
            acc_ex += fw.s_expr.fused.data.sum(axis=0)
    return acc_au / len(x), acc_ex / len(x)


def predict(model: Model, x: np.ndarray, chunk: int = 512) -> dict[str, np.ndarray]:
    cfg = model.cfg
    out: dict[str, list] = {"feat": [], "global": [], "sample": [], "expr": []}
    with nc.no_grad():
        for s in range(0, len(x), chunk):
            fw = model.forward(x[s:s + chunk])
            out["feat"].append(fw.feats.feat_logits.data)
            if cfg.gc:
                out["global"].append(fw.g_au_logits.data)
            if cfg.sac:
                out["sample"].append(fw.s_au.logits.data)
            ex = model.expr_logits(fw)
            if ex is not None:
                out["expr"].append(ex.data)
    return {k: np.concatenate(v) for k, v in out.items() if v}


def evaluate(model: Model, records: Records, scm: Optional[PlantedScm] = None,
             loss_curve: Optional[list[float]] = None) -> MetricsReport:
    if len(records) == 0:
        raise ValueError("cannot evaluate on an empty split")
    rep = MetricsReport(loss_curve=list(loss_curve or []))
    preds = predict(model, records.x)
    au_rows = records.has_au
    if au_rows.any():
        truth = records.y_au[au_rows]
        f1 = per_class_f1(truth, preds["feat"][au_rows] > 0)
        rep.au_f1 = f1.tolist()
        rep.macro_f1 = float(f1.mean())
        for head in ("global", "sample"):
            if head in preds:
                rep.graph_macro_f1[head] = float(per_class_f1(truth, preds[head][au_rows] > 0).mean())
    ex_rows = records.has_expr
    if ex_rows.any() and "expr" in preds:
        rep.expr_accuracy = float(np.mean(np.argmax(preds["expr"][ex_rows], axis=1) == records.y_expr[ex_rows]))
    if scm is not None:
        e_au, e_ex = population_graphs(model, records.x)
        if e_au is not None:
            fill_structure(rep, e_au, e_ex, scm)
    return rep


def fill_structure(rep: MetricsReport, e_au: np.ndarray, e_ex: np.ndarray, scm: PlantedScm) -> None:
    o = oracle_structure(scm)
    off = ~np.eye(scm.n_au, dtype=bool)
    rep.auroc_au = edge_auroc(e_au, o["au_support"], exclude_diagonal=True)
    rep.auroc_expr = edge_auroc(e_ex, o["expr_support"])
    rep.sign_au = sign_agreement(e_au, scm.au_adj)
    rep.sign_expr = sign_agreement(e_ex, scm.expr_weights)
    rep.shd_au = shd(np.where(off, e_au, 0.0), o["au_support"], square=True)
    rep.shd_expr = shd(e_ex, o["expr_support"])
