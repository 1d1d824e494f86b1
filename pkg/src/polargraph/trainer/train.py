"""Weakly supervised joint objective, SGD with momentum, and the training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import numcore as nc
from ..counterfactual import AU_TASK, EXPR_TASK, CfWeights, SaliencySpec, loss_cf
from ..encoder import bottleneck_losses, loss_feat, pseudo_labels
from ..graph_global import loss_global
from ..graph_adaptive import loss_sample
from ..numcore import Parameter, Tensor
from ..synthdata import Records
from .config import TrainConfig
from .model import Forward, Model

log = logging.getLogger(__name__)

TERM_NAMES = ("feat", "ib", "decorr", "align", "g_au", "g_dag", "s_au", "s_dag", "cf_au",
              "g_expr", "s_expr", "cf_expr")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term!r} is not finite ({value})")
        self.term = term


class SGD:
    """Momentum SGD; with ``clip`` > 0 the joint gradient is rescaled to at most that L2 norm."""

    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.9, clip: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.clip = clip
        self.velocity = [np.zeros_like(p.data) for p in params]
        self.last_norm = 0.0

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params))

    def step(self) -> None:
        self.last_norm = self.grad_norm()
        scale = self.clip / self.last_norm if 0 < self.clip < self.last_norm else 1.0
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v += scale * p.grad
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass
class Batch:
    x: np.ndarray
    y_au: np.ndarray
    has_au: np.ndarray
    y_expr: np.ndarray
    has_expr: np.ndarray

    @classmethod
    def from_records(cls, r: Records) -> Batch:
        return cls(r.x, r.y_au, r.has_au, r.y_expr, r.has_expr)

    def __len__(self) -> int:
        return len(self.x)


class BatchSampler:
    """Half AU-labelled, half expression-labelled records per batch, epoch-shuffled pools."""

    def __init__(self, records: Records, batch_size: int, rng: np.random.Generator):
        self.records = records
        self.rng = rng
        self.pools = [np.flatnonzero(records.has_au), np.flatnonzero(records.has_expr)]
        self.pools = [p for p in self.pools if p.size]
        if not self.pools:
            raise ValueError("no labelled records to train on")
        share = batch_size // len(self.pools)
        self.sizes = [share] * len(self.pools)
        self.sizes[0] += batch_size - share * len(self.pools)
        self.queues = [np.empty(0, dtype=np.int64) for _ in self.pools]

    def _take(self, k: int, n: int) -> np.ndarray:
        out = []
        while n > 0:
            if self.queues[k].size == 0:
                self.queues[k] = self.rng.permutation(self.pools[k])
            got = self.queues[k][:n]
            self.queues[k] = self.queues[k][n:]
            out.append(got)
            n -= got.size
        return np.concatenate(out)

    def next(self) -> Batch:
        idx = np.concatenate([self._take(k, n) for k, n in enumerate(self.sizes)])
        return Batch.from_records(self.records.take(idx))


def cf_weights(cfg: TrainConfig) -> CfWeights:
    return CfWeights(cfg.delta_feat, cfg.delta_logit, cfg.eta_feat, cfg.eta_logit,
                     cfg.lambda_consist, cfg.lambda_discrep)


def _cf_site(model: Model, fw: Forward, branch: str):
    """(edges, value maps, factual targets, factual logits, head) at the intervention site."""
    cfg = model.cfg
    use_sample = (cfg.cf_site == "sample" and cfg.sac) or not cfg.gc
    if branch == AU_TASK:
        head = model.heads.au_logits
        if use_sample:
            st, last = fw.s_au, model.s_au.layers[-1]
            return st.fused, (last.w_v_pos, last.w_v_neg), st.targets, st.logits, head
        vp = model.g_au.values
        return fw.e_g_au, (vp.w_pos, vp.w_neg), fw.z_g_au, fw.g_au_logits, head
    head = model.heads.expr_logits
    if use_sample:
        st, last = fw.s_expr, model.s_expr.layers[-1]
        return st.fused, (last.w_v_pos, last.w_v_neg), st.targets, st.logits, head
    vp = model.g_expr.values
    return fw.e_g_expr, (vp.w_pos, vp.w_neg), fw.z_g_expr, fw.g_expr_logits, head


def cf_branch_loss(model: Model, fw: Forward, branch: str, spec: SaliencySpec,
                   rng: np.random.Generator) -> Tensor:
    from ..graph_global import aggregate

    edges, (w_pos, w_neg), z_fact, y_fact, head = _cf_site(model, fw, branch)
    if edges.ndim == 3:
        b, t, n = edges.shape
        e4 = edges.reshape(b, 1, t, n)
    else:
        e4 = edges

    def forward_fn(f_cf: Tensor):
        z = aggregate(e4, f_cf, w_pos, w_neg)
        return z, head(z)

    sal = Tensor(edges.data) if model.cfg.cf_detach_saliency else None
    res = loss_cf(fw.graph_inputs, edges, z_fact, y_fact, forward_fn, spec, cf_weights(model.cfg),
                  branch, rng=rng, saliency_edges=sal)
    return res.total


def compute_losses(model: Model, batch: Batch, step: int = 0, fw: Optional[Forward] = None) -> dict[str, Tensor]:
    """Weighted contribution of every enabled term; the objective is their sum."""
    cfg = model.cfg
    fw = fw if fw is not None else model.forward(batch.x)
    terms: dict[str, Tensor] = {}
    terms["feat"] = loss_feat(fw.feats.feat_logits, batch.y_au, batch.has_au)
    if cfg.dis:
        pseudo = pseudo_labels(fw.feats.feat_logits, batch.y_au, batch.has_au)
        l_ib, l_align, l_decorr = bottleneck_losses(fw.feats.features, fw.z_img, pseudo)
        terms["ib"] = cfg.lambda_ib * l_ib
        terms["decorr"] = cfg.lambda_decorr * l_decorr
        terms["align"] = cfg.lambda_align * l_align
    le = cfg.lambda_expr
    if cfg.gc:
        g = loss_global(fw.g_au_logits, fw.g_expr_logits, batch.y_au, batch.has_au, batch.y_expr,
                        batch.has_expr, fw.e_g_au, cfg.lambda_dag_g if cfg.dag else 0.0)
        terms["g_au"] = g["au"]
        if "dag" in g:
            terms["g_dag"] = g["dag"]
        terms["g_expr"] = le * g["expr"]
    if cfg.sac:
        s_au = loss_sample(fw.s_au.logits, None, batch.y_au, batch.has_au, None, None,
                           fw.s_au.fused, cfg.lambda_dag_s if cfg.dag else 0.0)
        s_ex = loss_sample(None, fw.s_expr.logits, None, None, batch.y_expr, batch.has_expr)
        terms["s_au"] = s_au["au"]
        if "dag" in s_au:
            terms["s_dag"] = s_au["dag"]
        terms["s_expr"] = le * s_ex["expr"]
    if cfg.cf and (cfg.gc or cfg.sac):
        terms["cf_au"] = cf_branch_loss(model, fw, AU_TASK, model.cf_au,
                                        np.random.default_rng([cfg.seed, step, 0]))
        terms["cf_expr"] = le * cf_branch_loss(model, fw, EXPR_TASK, model.cf_expr,
                                               np.random.default_rng([cfg.seed, step, 1]))
    return terms


AU_PREDICTION_TERMS = ("feat", "g_au", "s_au")
EXPR_PREDICTION_TERMS = ("g_expr", "s_expr")


def cross_task_gradient(model: Model, batch: Batch) -> float:
    """Largest |gradient| any parameter receives from the prediction terms of the absent task.

    On a batch that carries only one label type the other task's supervised
    terms must contribute exactly nothing; representation and regularisation
    terms are excluded because they apply to every sample by design.
    """
    if batch.has_au.any() and batch.has_expr.any():
        raise ValueError("batch carries both label types")
    names = EXPR_PREDICTION_TERMS if batch.has_au.any() else AU_PREDICTION_TERMS
    terms = compute_losses(model, batch)
    picked = [terms[k] for k in names if k in terms]
    model.zero_grad()
    if not picked:
        return 0.0
    total = total_of(dict(enumerate(picked)))
    if total.requires_grad:
        total.backward()
    worst = max(float(np.max(np.abs(p.grad))) for p in model.parameters())
    model.zero_grad()
    return worst


def total_of(terms: dict[str, Tensor]) -> Tensor:
    total = Tensor(0.0)
    for t in terms.values():
        total = total + t
    return total


def train_step(model: Model, batch: Batch, opt: SGD, step: int = 0,
               check: Optional[Callable[[Model, Forward], None]] = None) -> dict[str, float]:
    """One update; returns the weighted term values and their total."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    fw = model.forward(batch.x)
    if check is not None:
        check(model, fw)
    terms = compute_losses(model, batch, step, fw)
    values = {k: float(v.data) for k, v in terms.items()}
    for k, v in values.items():
        if not math.isfinite(v):
            raise NonFiniteLossError(k, v)
    total = total_of(terms)
    opt.zero_grad()
    if total.requires_grad:
        total.backward()
    opt.step()
    model.clamp()
    values["total"] = float(total.data)
    return values


@dataclass
class History:
    steps: list[int] = field(default_factory=list)
    terms: list[dict[str, float]] = field(default_factory=list)
    seconds: float = 0.0

    def totals(self) -> list[float]:
        return [t["total"] for t in self.terms]


def fit(model: Model, records: Records, steps: Optional[int] = None, log_every: int = 0,
        record_every: int = 1, check: Optional[Callable[[Model, Forward], None]] = None,
        on_step: Optional[Callable[[int, Model, Batch], None]] = None) -> History:
    cfg = model.cfg
    steps = cfg.steps if steps is None else steps
    sampler = BatchSampler(records, cfg.batch_size, np.random.default_rng([cfg.seed, 1]))
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum, cfg.grad_clip)
    hist = History()
    t0 = time.perf_counter()
    for step in range(steps):
        batch = sampler.next()
        if on_step is not None:
            on_step(step, model, batch)
        vals = train_step(model, batch, opt, step, check)
        if record_every and step % record_every == 0:
            hist.steps.append(step)
            hist.terms.append(vals)
        if log_every and step % log_every == 0:
            log.info("step %d total %.4f", step, vals["total"])
    hist.seconds = time.perf_counter() - t0
    return hist
