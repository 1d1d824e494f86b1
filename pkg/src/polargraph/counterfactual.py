"""Feature-level counterfactual interventions driven by edge saliency."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import numcore as nc
from .numcore import DimensionError, Parameter, Tensor

AU_TASK = "au"
EXPR_TASK = "expr"

# Maps perturbed features (B, J, N, d) to (targets (B, J, T, d'), logits (B, J, T)).
ForwardFn = Callable[[Tensor], tuple[Tensor, Tensor]]


@dataclass
class SaliencySpec:
    thresholds: Parameter  # (N_target,), kept in [0, 1]
    sharpness: float = 10.0
    noise_std: float = 0.5

    def __post_init__(self):
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @classmethod
    def init(cls, n_target: int, name: str, theta: float = 0.3, sharpness: float = 10.0,
             noise_std: float = 0.5) -> SaliencySpec:
        return cls(Parameter(np.full(n_target, theta), f"{name}.thresholds"), sharpness, noise_std)

    def clamp(self) -> None:
        np.clip(self.thresholds.data, 0.0, 1.0, out=self.thresholds.data)


@dataclass
class InterventionMask:
    soft: Tensor

    @property
    def consist(self) -> Tensor:
        return 1.0 - self.soft

    @property
    def discrep(self) -> Tensor:
        return self.soft


@dataclass(frozen=True)
class CfWeights:
    delta_feat: float = 1.0
    delta_logit: float = 1.0
    eta_feat: float = 1.0
    eta_logit: float = 1.0
    lam_consist: float = 0.5
    lam_discrep: float = 0.5

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative")


def soft_mask(e, spec: SaliencySpec) -> InterventionMask:
    """sigmoid(gamma * (|e_ji| - theta_j)), one threshold per target row."""
    e = nc.as_tensor(e)
    theta = spec.thresholds.reshape(-1, 1)
    return InterventionMask(nc.sigmoid(spec.sharpness * (nc.tabs(e) - theta)))


def draw_noise(shape: tuple, noise_std: float, seed) -> np.ndarray:
    """Gaussian perturbation for one intervention, reproducible from ``seed``."""
    return np.random.default_rng(seed).standard_normal(shape) * noise_std


def intervene(features, mask_row, noise_std: float, seed=None, eps: Optional[np.ndarray] = None) -> Tensor:
    """F + eps * m, with one draw per source node and feature coordinate.

    ``mask_row`` broadcasts over the feature axis; eps is a constant, the
    mask keeps its gradient.
    """
    features, mask_row = nc.as_tensor(features), nc.as_tensor(mask_row)
    if np.any(mask_row.data < 0) or np.any(mask_row.data > 1):
        raise ValueError("mask entries must lie in [0, 1]")
    if eps is None:
        eps = draw_noise(features.shape, noise_std, seed)
    return features + nc.expand_dims(mask_row, -1) * eps


def cosine(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Cosine along the last axis; a zero vector gives 0 rather than NaN."""
    na = nc.sqrt((a * a).sum(axis=-1) + eps * eps)
    nb = nc.sqrt((b * b).sum(axis=-1) + eps * eps)
    return (a * b).sum(axis=-1) / (na * nb)


def logit_discrepancy(y_fact: Tensor, y_cf: Tensor, task: str) -> Tensor:
    """Per-target discrepancy: squared logit gap (AU) or KL(fact || cf) of softmaxes (expr).

    AU: y_fact (..., T), y_cf (..., T). Expr: y_fact (..., C), y_cf (..., T, C),
    one counterfactual distribution per intervened target.
    """
    if task == AU_TASK:
        d = y_fact - y_cf
        return d * d
    if task == EXPR_TASK:
        lp = nc.log_softmax(y_fact, axis=-1)
        lq = nc.log_softmax(y_cf, axis=-1)
        lp = nc.expand_dims(lp, -2)
        return (nc.exp(lp) * (lp - lq)).sum(axis=-1)
    raise ValueError(f"unknown task {task!r}")


def _check(z_fact: Tensor, z_cf: Tensor) -> None:
    if z_fact.shape != z_cf.shape:
        raise DimensionError(f"factual {z_fact.shape} and counterfactual {z_cf.shape} shapes differ")


def loss_consist(z_fact, z_cf, y_fact, y_cf, weights: CfWeights, task: str) -> Tensor:
    z_fact, z_cf = nc.as_tensor(z_fact), nc.as_tensor(z_cf)
    _check(z_fact, z_cf)
    per = weights.delta_feat * (1.0 - cosine(z_fact, z_cf))
    if weights.delta_logit:
        per = per + weights.delta_logit * logit_discrepancy(nc.as_tensor(y_fact), nc.as_tensor(y_cf), task)
    return per.mean()


def loss_discrep(z_fact, z_cf, y_fact, y_cf, weights: CfWeights, task: str) -> Tensor:
    z_fact, z_cf = nc.as_tensor(z_fact), nc.as_tensor(z_cf)
    _check(z_fact, z_cf)
    per = weights.eta_feat * (1.0 + cosine(z_fact, z_cf))
    if weights.eta_logit:
        d = logit_discrepancy(nc.as_tensor(y_fact), nc.as_tensor(y_cf), task)
        per = per + weights.eta_logit * nc.relu(1.0 - d)
    return per.mean()


@dataclass
class CfResult:
    total: Tensor
    consist: Tensor
    discrep: Tensor
    mask: InterventionMask


def loss_cf(features, edges, z_fact, y_fact, forward_fn: ForwardFn, spec: SaliencySpec,
            weights: CfWeights, task: str, rng: Optional[np.random.Generator] = None,
            eps: Optional[np.ndarray] = None, saliency_edges=None) -> CfResult:
    """Intervene on every target row under both masks and score the responses.

    features (B, N, d); edges (B, T, N) or (T, N); z_fact (B, T, d');
    y_fact (B, T) logits. ``eps`` is a standard-normal draw of shape
    (B, T, N, d); it is taken from ``rng`` when not given. ``saliency_edges``
    (same shape as ``edges``) feeds the mask instead of ``edges`` when given,
    e.g. a stop-gradient copy so edges learn only through aggregation.
    """
    features, edges = nc.as_tensor(features), nc.as_tensor(edges)
    z_fact, y_fact = nc.as_tensor(z_fact), nc.as_tensor(y_fact)
    b, n, d = features.shape
    t = edges.shape[-2]
    zero = Tensor(0.0)
    sal = edges if saliency_edges is None else nc.as_tensor(saliency_edges)
    if sal.shape != edges.shape:
        raise DimensionError(f"saliency edges {sal.shape} do not match edges {edges.shape}")
    mask = soft_mask(sal, spec)
    if weights.lam_consist == 0 and weights.lam_discrep == 0:
        return CfResult(zero, zero, zero, mask)
    if eps is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        eps = rng.standard_normal((b, t, n, d))
    noise = eps * spec.noise_std
    base = nc.expand_dims(features, 1)  # (B, 1, N, d)
    diag = np.arange(t)

    def run(m: Tensor):
        m = m if m.ndim == 3 else m.reshape(1, t, n)
        f_cf = base + nc.expand_dims(m, -1) * noise  # (B, T, N, d)
        z_all, y_all = forward_fn(f_cf)
        z_cf = z_all[:, diag, diag, :]
        y_cf = y_all[:, diag, diag] if task == AU_TASK else y_all
        return z_cf, y_cf

    consist = discrep = zero
    if weights.lam_consist:
        z_cf, y_cf = run(mask.consist)
        consist = loss_consist(z_fact, z_cf, y_fact, y_cf, weights, task)
    if weights.lam_discrep:
        z_cf, y_cf = run(mask.discrep)
        discrep = loss_discrep(z_fact, z_cf, y_fact, y_cf, weights, task)
    total = weights.lam_consist * consist + weights.lam_discrep * discrep
    return CfResult(total, consist, discrep, mask)
