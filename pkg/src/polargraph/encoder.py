"""Affine stand-in backbone, per-AU projection heads and the bottleneck losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .hsic import GAUSSIAN, LINEAR, InsufficientSamplesError, center, gaussian_grams, gram
from .numcore import DimensionError, Parameter, Tensor


@dataclass
class EncoderParams:
    backbone_w: Parameter  # (D_in, D)
    backbone_b: Parameter  # (D,)
    head_w: Parameter      # (N_AU, D, d)
    head_b: Parameter      # (N_AU, d)
    cls_w: Parameter       # (N_AU, d)
    cls_b: Parameter       # (N_AU,)

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_model: int, d: int, n_au: int) -> EncoderParams:
        return cls(
            backbone_w=Parameter(nc.glorot(rng, (d_in, d_model)), "enc.backbone_w"),
            backbone_b=Parameter(np.zeros(d_model), "enc.backbone_b"),
            head_w=Parameter(nc.glorot(rng, (n_au, d_model, d)), "enc.head_w"),
            head_b=Parameter(np.zeros((n_au, d)), "enc.head_b"),
            cls_w=Parameter(rng.normal(0.0, 1.0 / np.sqrt(d), (n_au, d)), "enc.cls_w"),
            cls_b=Parameter(np.zeros(n_au), "enc.cls_b"),
        )

    @property
    def n_au(self) -> int:
        return self.head_w.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.backbone_w, self.backbone_b, self.head_w, self.head_b, self.cls_w, self.cls_b]


@dataclass
class AuFeatureSet:
    features: Tensor     # (..., N_AU, d)
    feat_logits: Tensor  # (..., N_AU)


def encode(x, params: EncoderParams) -> Tensor:
    x = nc.as_tensor(x)
    if x.shape[-1] != params.backbone_w.shape[0]:
        raise DimensionError(f"encode: input width {x.shape[-1]} != D_in {params.backbone_w.shape[0]}")
    if x.ndim == 1:
        return (x.reshape(1, -1) @ params.backbone_w).reshape(-1) + params.backbone_b
    return x @ params.backbone_w + params.backbone_b


def project_aus(z_img, params: EncoderParams) -> AuFeatureSet:
    """Run every head on z_img: features[..., i, :] = phi_i(z_img)."""
    z = nc.as_tensor(z_img)
    lead = z.shape[:-1]
    zz = z.reshape(*lead, 1, 1, z.shape[-1])
    feats = (zz @ params.head_w).reshape(*lead, params.n_au, params.head_w.shape[-1]) + params.head_b
    logits = (feats * params.cls_w).sum(axis=-1) + params.cls_b
    return AuFeatureSet(feats, logits)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross-entropy, stable for large |logits|."""
    logits = nc.as_tensor(logits)
    t = np.asarray(targets, dtype=np.float64)
    return nc.softplus(logits) - logits * t


def loss_feat(feat_logits, y_au, mask) -> Tensor:
    """Mean BCE over AUs and over the samples whose AU labels are available.

    ``mask`` is a bool per sample (or a single bool for an unbatched call);
    unlabeled samples never enter the computation, so they contribute an
    exact zero gradient.
    """
    logits = nc.as_tensor(feat_logits)
    if logits.ndim == 1:
        if not bool(mask):
            return Tensor(0.0)
        return bce_with_logits(logits, y_au).mean()
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        return Tensor(0.0)
    return bce_with_logits(logits[idx], np.asarray(y_au)[idx]).mean()


def pseudo_labels(feat_logits: Tensor, y_au: np.ndarray, has_au: np.ndarray) -> np.ndarray:
    """Ground truth where labelled, otherwise detached sigmoid probabilities."""
    probs = 1.0 / (1.0 + np.exp(-feat_logits.data))
    return np.where(np.asarray(has_au, bool)[:, None], np.asarray(y_au, dtype=np.float64), probs)


def bottleneck_losses(features: Tensor, z_img: Tensor, pseudo: np.ndarray,
                      feature_kernel=GAUSSIAN, label_kernel=LINEAR) -> tuple[Tensor, Tensor, Tensor]:
    """(L_ib, L_align, L_decorr) with batch samples as HSIC observations.

    features: (B, N_AU, d); z_img: (B, D); pseudo: (B, N_AU) in [0, 1].
    """
    b, n_au = features.shape[0], features.shape[1]
    if b < 2:
        raise InsufficientSamplesError(f"bottleneck losses need at least 2 samples, got {b}")
    norm = 1.0 / (b - 1) ** 2
    per_au = features.swapaxes(0, 1)  # (N_AU, B, d)
    if feature_kernel.kind == "gaussian":
        grams = gaussian_grams(per_au, feature_kernel.bandwidth)
    else:
        grams = per_au @ per_au.swapaxes(-1, -2)
    centered = center(grams)
    lz = gram(z_img, feature_kernel)
    l_ib = (centered * lz).sum() * (norm / n_au)
    p = np.asarray(pseudo, dtype=np.float64).T[:, :, None]  # (N_AU, B, 1)
    if label_kernel.kind == "linear":
        lab = p @ np.swapaxes(p, -1, -2)
    else:
        lab = gaussian_grams(p, label_kernel.bandwidth).data
    l_align = (centered * lab).sum() * (-norm / n_au)
    if n_au < 2:
        return l_ib, l_align, Tensor(0.0)
    # pairwise tr(K_i H K_j H) for all i, j in one product; keep i != j
    cross = centered.reshape(n_au, b * b) @ grams.reshape(n_au, b * b).T
    off = 1.0 - np.eye(n_au)
    l_decorr = (cross * off).sum() * (norm / n_au ** 2)
    return l_ib, l_align, l_decorr


def loss_au_total(l_feat, l_ib, l_decorr, l_align, lam_ib: float, lam_decorr: float, lam_align: float):
    for lam in (lam_ib, lam_decorr, lam_align):
        if lam < 0:
            raise ValueError("loss weights must be non-negative")
    return l_feat + lam_ib * l_ib + lam_decorr * l_decorr + lam_align * l_align
