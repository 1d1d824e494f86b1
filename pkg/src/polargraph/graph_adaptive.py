"""Per-sample polarity-aware attention graphs with gated fusion into the global graph."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numcore as nc
from .graph_global import ClassifierHeads, aggregate, dag_penalty, masked_bce, masked_ce, offdiag_mask
from .numcore import DimensionError, Parameter, Tensor

AU_AU = "au_au"
AU_EXPR = "au_expr"


@dataclass
class HpgatLayer:
    w_q: Parameter       # (d, d_h)
    w_k: Parameter       # (d, d_h)
    attn_vec: Parameter  # (d_h,)
    w_v_pos: Parameter   # (d, d_h)
    w_v_neg: Parameter   # (d, d_h)

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, d_h: int, name: str) -> HpgatLayer:
        return cls(
            Parameter(nc.glorot(rng, (d, d_h)), f"{name}.w_q"),
            Parameter(nc.glorot(rng, (d, d_h)), f"{name}.w_k"),
            Parameter(rng.normal(0.0, 1.0 / np.sqrt(d_h), d_h), f"{name}.attn_vec"),
            Parameter(nc.glorot(rng, (d, d_h)), f"{name}.w_v_pos"),
            Parameter(nc.glorot(rng, (d, d_h)), f"{name}.w_v_neg"),
        )

    def parameters(self) -> list[Parameter]:
        return [self.w_q, self.w_k, self.attn_vec, self.w_v_pos, self.w_v_neg]


@dataclass
class GateNetwork:
    """Mean of the edge matrix -> affine -> one scalar per sample."""

    w: Parameter  # scalar
    b: Parameter  # scalar

    @classmethod
    def init(cls, name: str) -> GateNetwork:
        return cls(Parameter(np.array(1.0), f"{name}.w"), Parameter(np.array(0.0), f"{name}.b"))

    def __call__(self, e: Tensor) -> Tensor:
        pooled = e.mean(axis=(-2, -1), keepdims=True)
        return pooled * self.w + self.b

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


@dataclass
class BranchStack:
    """Everything one graph type (AU->AU or AU->Expr) needs for the adaptive path."""

    kind: str
    layers: list[HpgatLayer]
    gate: GateNetwork
    prototypes: Optional[Parameter] = None  # (N_Expr, d), AU->Expr only
    no_self_loops: bool = False

    def parameters(self) -> list[Parameter]:
        ps = [p for layer in self.layers for p in layer.parameters()] + self.gate.parameters()
        if self.prototypes is not None:
            ps.append(self.prototypes)
        return ps


@dataclass
class SampleGraphState:
    queries: list[Tensor] = field(default_factory=list)
    layer_edges: list[Tensor] = field(default_factory=list)
    layer_targets: list[Tensor] = field(default_factory=list)
    gate: Optional[Tensor] = None
    fused: Optional[Tensor] = None
    targets: Optional[Tensor] = None
    logits: Optional[Tensor] = None


def attention_edges(q, k, layer: HpgatLayer, slope: float = 0.2) -> Tensor:
    """e_ji = tanh(a . leakyrelu(q_j W_Q + k_i W_K)) for every target j and source i."""
    q, k = nc.as_tensor(q), nc.as_tensor(k)
    if q.shape[-1] != layer.w_q.shape[0] or k.shape[-1] != layer.w_k.shape[0]:
        raise DimensionError(f"attention_edges: query {q.shape} / key {k.shape} width mismatch with layer")
    qp = q @ layer.w_q
    kp = k @ layer.w_k
    t, n = qp.shape[-2], kp.shape[-2]
    pre = nc.expand_dims(qp, -2) + nc.expand_dims(kp, -3)  # (..., T, N, d_h)
    score = (nc.leaky_relu(pre, slope) * layer.attn_vec).sum(axis=-1)
    return nc.tanh(score)


def layer_aggregate(e, features, layer: HpgatLayer) -> Tensor:
    return aggregate(e, features, layer.w_v_pos, layer.w_v_neg)


def gated_fuse(e_global, e_sample, gate: GateNetwork) -> tuple[Tensor, Tensor]:
    """g*E_g + (1-g)*E_s with g = sigmoid(G(E_s)); returns (fused, g)."""
    e_global, e_sample = nc.as_tensor(e_global), nc.as_tensor(e_sample)
    if e_global.shape[-2:] != e_sample.shape[-2:]:
        raise DimensionError(f"gated_fuse: shapes {e_global.shape} and {e_sample.shape} differ")
    g = nc.sigmoid(gate(e_sample))
    return g * e_global + (1.0 - g) * e_sample, g


def forward_stack(features, branch: BranchStack, heads: ClassifierHeads,
                  e_global: Optional[Tensor] = None, slope: float = 0.2) -> SampleGraphState:
    """Run the L attention layers, fuse at the last one, and read out predictions.

    features: (B, N_AU, d). Without a global graph the last-layer edges are
    used unfused.
    """
    features = nc.as_tensor(features)
    if not branch.layers:
        raise ValueError("forward_stack needs at least one layer")
    state = SampleGraphState()
    if branch.kind == AU_AU:
        q = features
    elif branch.kind == AU_EXPR:
        lead = features.shape[:-2]
        q = branch.prototypes.reshape(*([1] * len(lead)), *branch.prototypes.shape)
    else:
        raise ValueError(f"unknown branch {branch.kind!r}")
    mask = offdiag_mask(features.shape[-2]) if branch.no_self_loops else None
    for layer in branch.layers:
        state.queries.append(q)
        e = attention_edges(q, features, layer, slope)
        if mask is not None:
            e = e * mask
        state.layer_edges.append(e)
        z = layer_aggregate(e, features, layer)
        state.layer_targets.append(z)
        q = z
    last = branch.layers[-1]
    if e_global is not None:
        state.fused, state.gate = gated_fuse(e_global, state.layer_edges[-1], branch.gate)
    else:
        state.fused = state.layer_edges[-1]
    state.targets = layer_aggregate(state.fused, features, last)
    if branch.kind == AU_AU:
        state.logits = heads.au_logits(state.targets)
    else:
        state.logits = heads.expr_logits(state.targets)
    return state


def loss_sample(au_logits: Optional[Tensor], expr_logits: Optional[Tensor], y_au, has_au, y_expr, has_expr,
                fused_au: Optional[Tensor] = None, lam_dag: float = 0.0) -> dict[str, Tensor]:
    """Sample-graph terms; the DAG penalty is averaged over every sample's fused AU graph."""
    out: dict[str, Tensor] = {}
    if au_logits is not None:
        out["au"] = masked_bce(au_logits, y_au, has_au)
    if fused_au is not None and lam_dag > 0:
        pen = dag_penalty(fused_au)
        out["dag"] = lam_dag * (pen.mean() if pen.ndim else pen)
    if expr_logits is not None:
        out["expr"] = masked_ce(expr_logits, y_expr, has_expr)
    return out
