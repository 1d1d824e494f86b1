"""The full model: encoder, global graphs, attention stacks and counterfactual specs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import numcore as nc
from ..counterfactual import SaliencySpec
from ..encoder import AuFeatureSet, EncoderParams, encode, project_aus
from ..graph_adaptive import AU_AU, AU_EXPR, BranchStack, GateNetwork, HpgatLayer, SampleGraphState, forward_stack
from ..graph_global import ClassifierHeads, GlobalEdgeParams, ValueProjections, aggregate, edge_matrix
from ..numcore import Parameter, Tensor
from .config import TrainConfig


@dataclass
class GlobalGraph:
    edges: GlobalEdgeParams
    values: ValueProjections

    def parameters(self) -> list[Parameter]:
        return self.edges.parameters() + self.values.parameters()


@dataclass
class Forward:
    z_img: Tensor
    feats: AuFeatureSet
    graph_inputs: Optional[Tensor] = None
    e_g_au: Optional[Tensor] = None
    e_g_expr: Optional[Tensor] = None
    z_g_au: Optional[Tensor] = None
    z_g_expr: Optional[Tensor] = None
    g_au_logits: Optional[Tensor] = None
    g_expr_logits: Optional[Tensor] = None
    s_au: Optional[SampleGraphState] = None
    s_expr: Optional[SampleGraphState] = None


class Model:
    """All parameters exist regardless of toggles; toggles only pick the forward path."""

    def __init__(self, cfg: TrainConfig, rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        c = cfg
        self.encoder = EncoderParams.init(rng, c.d_in, c.d_model, c.d, c.n_au)
        no_loops = not c.au_self_loops
        self.g_au = GlobalGraph(
            GlobalEdgeParams.init(rng, c.n_au, c.n_au, "gc_au", no_self_loops=no_loops),
            ValueProjections(Parameter(nc.glorot(rng, (c.d, c.d_g)), "gc_au.w_pos"),
                             Parameter(nc.glorot(rng, (c.d, c.d_g)), "gc_au.w_neg")))
        self.g_expr = GlobalGraph(
            GlobalEdgeParams.init(rng, c.n_expr, c.n_au, "gc_expr"),
            ValueProjections(Parameter(nc.glorot(rng, (c.d, c.d_g)), "gc_expr.w_pos"),
                             Parameter(nc.glorot(rng, (c.d, c.d_g)), "gc_expr.w_neg")))
        self.heads = ClassifierHeads(
            Parameter(rng.normal(0, 1 / np.sqrt(c.d_g), (c.n_au, c.d_g)), "heads.au_w"),
            Parameter(np.zeros(c.n_au), "heads.au_b"),
            Parameter(rng.normal(0, 1 / np.sqrt(c.d_g), (c.n_expr, c.d_g)), "heads.expr_w"),
            Parameter(np.zeros(c.n_expr), "heads.expr_b"))
        self.s_au = BranchStack(
            AU_AU, [HpgatLayer.init(rng, c.d, c.d_h, f"sac_au.l{i}") for i in range(c.n_layers)],
            GateNetwork.init("sac_au.gate"), no_self_loops=no_loops)
        self.s_expr = BranchStack(
            AU_EXPR, [HpgatLayer.init(rng, c.d, c.d_h, f"sac_expr.l{i}") for i in range(c.n_layers)],
            GateNetwork.init("sac_expr.gate"),
            prototypes=Parameter(rng.normal(0, 1.0, (c.n_expr, c.d)), "sac_expr.prototypes"))
        self.cf_au = SaliencySpec.init(c.n_au, "cf_au", c.cf_theta_init, c.cf_gamma, c.cf_noise_std)
        self.cf_expr = SaliencySpec.init(c.n_expr, "cf_expr", c.cf_theta_init, c.cf_gamma, c.cf_noise_std)
        if c.coherent_init:
            self._coherent_init(rng)
        self.encoder.head_w.data *= c.head_init_scale

    def _coherent_init(self, rng: np.random.Generator) -> None:
        """Align readout orientation so a positive edge means the source pushes the target up.

        Excitatory and inhibitory value maps start as W0 and -W0, every
        readout row starts as phi0, and each AU classifier starts as W0 phi0,
        so at initialisation phi0 . W0^T f_i equals AU i's activation logit
        (minus bias). Training is free to move away from this.
        """
        c = self.cfg
        w0 = nc.glorot(rng, (c.d, c.d_g))
        phi0 = rng.normal(0.0, 1.0, c.d_g)
        phi0 /= np.linalg.norm(phi0)
        for vp in (self.g_au.values, self.g_expr.values):
            vp.w_pos.data[...] = w0
            vp.w_neg.data[...] = -w0
        for stack in (self.s_au, self.s_expr):
            stack.layers[-1].w_v_pos.data[...] = w0
            stack.layers[-1].w_v_neg.data[...] = -w0
        self.heads.au_w.data[...] = phi0
        self.heads.expr_w.data[...] = phi0
        c_vec = w0 @ phi0
        self.encoder.cls_w.data[...] = c_vec / np.linalg.norm(c_vec)

    # -- parameters --------------------------------------------------------------
    def parameters(self) -> list[Parameter]:
        ps = (self.encoder.parameters() + self.g_au.parameters() + self.g_expr.parameters()
              + self.heads.parameters() + self.s_au.parameters() + self.s_expr.parameters()
              + [self.cf_au.thresholds, self.cf_expr.thresholds])
        return ps

    def named_parameters(self) -> dict[str, Parameter]:
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise RuntimeError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def clamp(self) -> None:
        self.cf_au.clamp()
        self.cf_expr.clamp()

    # -- forward -----------------------------------------------------------------
    def forward(self, x) -> Forward:
        c = self.cfg
        z = encode(x, self.encoder)
        feats = project_aus(z, self.encoder)
        out = Forward(z, feats)
        if not (c.gc or c.sac):
            return out
        f = Tensor(feats.features.data) if c.detach_graph_inputs else feats.features
        out.graph_inputs = f
        if c.gc:
            out.e_g_au = edge_matrix(self.g_au.edges)
            out.e_g_expr = edge_matrix(self.g_expr.edges)
            out.z_g_au = aggregate(out.e_g_au, f, self.g_au.values.w_pos, self.g_au.values.w_neg)
            out.z_g_expr = aggregate(out.e_g_expr, f, self.g_expr.values.w_pos, self.g_expr.values.w_neg)
            out.g_au_logits = self.heads.au_logits(out.z_g_au)
            out.g_expr_logits = self.heads.expr_logits(out.z_g_expr)
        if c.sac:
            out.s_au = forward_stack(f, self.s_au, self.heads, out.e_g_au, c.leaky_slope)
            out.s_expr = forward_stack(f, self.s_expr, self.heads, out.e_g_expr, c.leaky_slope)
        return out

    # -- predictions ---------------------------------------------------------------
    def au_logits(self, fw: Forward, head: str = "feat") -> Optional[Tensor]:
        if head == "feat":
            return fw.feats.feat_logits
        if head == "global":
            return fw.g_au_logits
        if head == "sample":
            return fw.s_au.logits if fw.s_au is not None else None
        raise ValueError(head)

    def expr_logits(self, fw: Forward) -> Optional[Tensor]:
        """The most refined expression readout available under the current toggles."""
        if fw.s_expr is not None:
            return fw.s_expr.logits
        return fw.g_expr_logits
