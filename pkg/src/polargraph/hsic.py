"""Biased HSIC estimator over batch samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import numcore as nc
from .numcore import DimensionError, Tensor


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    bandwidth: Union[float, str] = "median"

    def __post_init__(self):
        if self.kind not in ("gaussian", "linear"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "gaussian" and self.bandwidth != "median":
            if not float(self.bandwidth) > 0:
                raise ValueError("gaussian bandwidth must be positive")


GAUSSIAN = KernelSpec("gaussian", "median")
LINEAR = KernelSpec("linear")


def median_bandwidth(sqdist: np.ndarray) -> float:
    """Median pairwise distance over i<j; 1.0 when the points coincide."""
    iu = np.triu_indices(sqdist.shape[0], k=1)
    med = float(np.median(np.sqrt(np.maximum(sqdist[iu], 0.0))))
    return med if med > 0 else 1.0


def _as_2d(x) -> Tensor:
    x = nc.as_tensor(x)
    if x.ndim == 1:
        x = x.reshape(x.shape[0], 1)
    if x.ndim != 2 or x.shape[1] == 0:
        raise DimensionError(f"expected a non-empty (n, p) feature matrix, got shape {x.shape}")
    return x


def gram(x, kernel: KernelSpec = GAUSSIAN) -> Tensor:
    x = _as_2d(x)
    if x.shape[0] < 2:
        raise InsufficientSamplesError(f"gram needs at least 2 samples, got {x.shape[0]}")
    if kernel.kind == "linear":
        return x @ x.T
    return gaussian_grams(x, kernel.bandwidth)


def _sqdist(x: np.ndarray) -> np.ndarray:
    norms = np.sum(x * x, axis=-1)
    sq = norms[..., :, None] + norms[..., None, :] - 2.0 * np.matmul(x, np.swapaxes(x, -1, -2))
    sq = np.maximum(sq, 0.0)
    n = x.shape[-2]
    sq[..., np.arange(n), np.arange(n)] = 0.0
    return sq


def gaussian_grams(x, bandwidth: Union[float, str] = "median") -> Tensor:
    """Gaussian Gram matrices for a stack of (n, p) sample sets, shape (..., n, n).

    Each slice gets its own median-heuristic bandwidth, treated as a constant
    for differentiation.
    """
    x = nc.as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"gaussian_grams expects (..., n, p), got shape {x.shape}")
    xd = x.data
    sq = _sqdist(xd)
    lead = sq.shape[:-2]
    if bandwidth == "median":
        flat = sq.reshape(-1, *sq.shape[-2:])
        sigma = np.array([median_bandwidth(s) for s in flat]).reshape(lead)
    else:
        sigma = np.full(lead, float(bandwidth))
    scale = (-0.5 / sigma ** 2)[..., None, None]
    k = np.exp(sq * scale)

    def back(g):
        dsq = g * k * scale
        s = dsq + np.swapaxes(dsq, -1, -2)
        return ((x, 2.0 * (s.sum(axis=-1, keepdims=True) * xd - np.matmul(s, xd))),)

    return nc._make(k, (x,), back)


def _center_np(k: np.ndarray) -> np.ndarray:
    return (k - k.mean(axis=-2, keepdims=True) - k.mean(axis=-1, keepdims=True)
            + k.mean(axis=(-2, -1), keepdims=True))


def center(k) -> Tensor:
    """H K H with H = I - 11^T/n, applied to the last two axes."""
    k = nc.as_tensor(k)
    # H is symmetric and idempotent, so the adjoint is the same projection
    return nc._make(_center_np(k.data), (k,), lambda g: ((k, _center_np(g)),))


def hsic_from_grams(kc: Tensor, l: Tensor) -> Tensor:
    """tr(K H L H)/(n-1)^2 given the centered K and any symmetric L."""
    n = kc.shape[0]
    return (kc * l).sum() * (1.0 / (n - 1) ** 2)


def hsic(x, y, kx: KernelSpec = GAUSSIAN, ky: KernelSpec = GAUSSIAN, min_samples: int = 4) -> Tensor:
    x, y = _as_2d(x), _as_2d(y)
    if x.shape[0] != y.shape[0]:
        raise DimensionError(f"hsic: sample counts differ ({x.shape[0]} vs {y.shape[0]})")
    if x.shape[0] < min_samples:
        raise InsufficientSamplesError(f"hsic needs at least {min_samples} samples, got {x.shape[0]}")
    return hsic_from_grams(center(gram(x, kx)), gram(y, ky))


def permutation_null(x: np.ndarray, y: np.ndarray, n_perm: int, rng: np.random.Generator,
                     kx: KernelSpec = GAUSSIAN, ky: KernelSpec = GAUSSIAN) -> np.ndarray:
    """HSIC values with y's rows shuffled, for calibration against independence."""
    kc = center(gram(x, kx)).data
    l = gram(y, ky).data
    n = l.shape[0]
    out = np.empty(n_perm)
    for t in range(n_perm):
        p = rng.permutation(n)
        out[t] = (kc * l[np.ix_(p, p)]).sum() / (n - 1) ** 2
    return out
