"""Population-level signed graph: tanh edges, polarity-split aggregation, soft-DAG penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numcore as nc
from .encoder import bce_with_logits
from .numcore import DimensionError, Parameter, Tensor


class LabelError(ValueError):
    pass


@dataclass
class GlobalEdgeParams:
    edge_logits: Parameter  # (N_target, N_source)
    temperature: Parameter  # scalar T_g, tau = exp(T_g)
    no_self_loops: bool = False

    @classmethod
    def init(cls, rng: np.random.Generator, n_target: int, n_source: int, name: str,
             no_self_loops: bool = False, std: float = 0.01) -> GlobalEdgeParams:
        return cls(Parameter(rng.normal(0.0, std, (n_target, n_source)), f"{name}.edge_logits"),
                   Parameter(np.array(0.0), f"{name}.temperature"),
                   no_self_loops)

    def parameters(self) -> list[Parameter]:
        return [self.edge_logits, self.temperature]


@dataclass
class PolarityPair:
    pos: Tensor
    neg: Tensor


@dataclass
class ValueProjections:
    w_pos: Parameter  # (d, d_g)
    w_neg: Parameter  # (d, d_g)

    def parameters(self) -> list[Parameter]:
        return [self.w_pos, self.w_neg]


@dataclass
class ClassifierHeads:
    """One linear readout per target row; expression rows are softmaxed jointly."""

    au_w: Parameter    # (N_AU, d_g)
    au_b: Parameter    # (N_AU,)
    expr_w: Parameter  # (N_Expr, d_g)
    expr_b: Parameter  # (N_Expr,)

    def parameters(self) -> list[Parameter]:
        return [self.au_w, self.au_b, self.expr_w, self.expr_b]

    def au_logits(self, z: Tensor) -> Tensor:
        return (z * self.au_w).sum(axis=-1) + self.au_b

    def expr_logits(self, z: Tensor) -> Tensor:
        return (z * self.expr_w).sum(axis=-1) + self.expr_b


def offdiag_mask(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


def edge_matrix(params: GlobalEdgeParams) -> Tensor:
    e = nc.tanh(nc.exp(params.temperature) * params.edge_logits)
    if params.no_self_loops:
        e = e * offdiag_mask(e.shape[-1])
    return e


def polarity_split(e) -> PolarityPair:
    e = nc.as_tensor(e)
    return PolarityPair(nc.relu(e), nc.relu(-e))


def aggregate(e, features, w_pos, w_neg) -> Tensor:
    """pos(e) @ (F W+) + neg(e) @ (F W-).

    e: (..., T, N); features: (..., N, d); result (..., T, d_out). Leading
    axes broadcast, so one global graph serves a whole batch.
    """
    e, features = nc.as_tensor(e), nc.as_tensor(features)
    if e.shape[-1] != features.shape[-2]:
        raise DimensionError(f"aggregate: edge sources {e.shape[-1]} != feature rows {features.shape[-2]}")
    pair = polarity_split(e)
    return pair.pos @ (features @ w_pos) + pair.neg @ (features @ w_neg)


def dag_penalty(e_au) -> Tensor:
    """tr(exp(E*E)) - N; zero iff the weighted graph has no cycles."""
    e = nc.as_tensor(e_au)
    if e.ndim < 2 or e.shape[-1] != e.shape[-2]:
        raise DimensionError(f"dag_penalty: expected square matrix, got shape {e.shape}")
    return nc.matrix_exp_trace(e * e) - float(e.shape[-1])


def masked_bce(logits: Tensor, y_au: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean BCE over AUs and labelled samples; unlabelled rows are dropped."""
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        return Tensor(0.0)
    return bce_with_logits(logits[idx], np.asarray(y_au)[idx]).mean()


def masked_ce(logits: Tensor, y_expr: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean categorical cross-entropy over the samples carrying an expression label."""
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        return Tensor(0.0)
    n_cls = logits.shape[-1]
    labels = np.asarray(y_expr)[idx]
    if np.any(labels < 0) or np.any(labels >= n_cls):
        raise LabelError(f"expression label outside [0, {n_cls})")
    labels = labels.astype(np.int64)
    logp = nc.log_softmax(logits[idx], axis=-1)
    return -logp[np.arange(idx.size), labels].mean()


def loss_global(au_logits: Optional[Tensor], expr_logits: Optional[Tensor], y_au, has_au, y_expr, has_expr,
                e_au: Optional[Tensor] = None, lam_dag: float = 0.0) -> dict[str, Tensor]:
    """Global-graph terms: {'au': BCE, 'dag': lam*L_DAG, 'expr': CE}.

    The DAG term needs no labels and applies whenever ``e_au`` is given.
    """
    out: dict[str, Tensor] = {}
    if au_logits is not None:
        out["au"] = masked_bce(au_logits, y_au, has_au)
    if e_au is not None and lam_dag > 0:
        out["dag"] = lam_dag * dag_penalty(e_au)
    if expr_logits is not None:
        out["expr"] = masked_ce(expr_logits, y_expr, has_expr)
    return out
