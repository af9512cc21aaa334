"""Joint query/template feature space: per-layer PCA co-projection,
bilinear upsampling to the finest grid, and concatenation.

The co-projection is the load-bearing step: one basis is fitted on the
pooled foreground samples of BOTH images and applied to both, which is what
makes cross-image cosine similarities comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, InsufficientSamples, MissingLayer
from .tensorio import FeatureMap, resample_mask

DEFAULT_LAYERS = (2, 5, 8, 11)
DEFAULT_PCA_DIM = 64


@dataclass(frozen=True)
class CoProjection:
    """Shared PCA basis for one layer: mean, orthonormal basis, variances."""

    layer_id: int
    mean: np.ndarray  # (C,)
    basis: np.ndarray  # (C, pca_dim), orthonormal columns
    explained_variance: np.ndarray  # (pca_dim,), non-increasing, >= 0


@dataclass(frozen=True)
class HyperfeatureMap:
    """Concatenated projected layers on one spatial grid, shape (D, H, W)."""

    data: np.ndarray

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def _foreground_samples(fm: FeatureMap, mask) -> np.ndarray:
    """(n, C) channel vectors at foreground grid positions."""
    if mask is None:
        m = np.ones((fm.height, fm.width), dtype=bool)
    else:
        m = resample_mask(mask, fm.height, fm.width)
    return fm.data.reshape(fm.channels, -1).T[m.reshape(-1)].astype(np.float64)


def _fit_pca(samples: np.ndarray, pca_dim: int, layer_id: int) -> CoProjection:
    n, c = samples.shape
    if n < pca_dim:
        raise InsufficientSamples(f"{n} samples for pca_dim={pca_dim}")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:pca_dim]
    basis = eigvecs[:, order]
    variance = np.clip(eigvals[order], 0.0, None)
    # eigenvector sign is arbitrary: force the largest-magnitude entry positive
    # so repeated fits are bit-identical
    flip = basis[np.argmax(np.abs(basis), axis=0), np.arange(basis.shape[1])] < 0
    basis = basis * np.where(flip, -1.0, 1.0)[None, :]
    return CoProjection(
        layer_id=layer_id, mean=mean, basis=basis, explained_variance=variance
    )


def fit_coprojection(
    q_layer: FeatureMap,
    t_layer: FeatureMap,
    pca_dim: int,
    q_mask=None,
    t_mask=None,
) -> CoProjection:
    """Fit one PCA basis on the pooled foreground samples of both maps."""
    if q_layer.channels != t_layer.channels:
        raise DimMismatch(
            f"channel mismatch: {q_layer.channels} vs {t_layer.channels}"
        )
    if pca_dim > q_layer.channels:
        raise DimMismatch(f"pca_dim={pca_dim} exceeds {q_layer.channels} channels")
    samples = np.concatenate(
        [_foreground_samples(q_layer, q_mask), _foreground_samples(t_layer, t_mask)]
    )
    return _fit_pca(samples, pca_dim, q_layer.layer_id)


def fit_projection_single(fm: FeatureMap, pca_dim: int, mask=None) -> CoProjection:
    """PCA on one image alone (ablation path: no co-projection)."""
    if pca_dim > fm.channels:
        raise DimMismatch(f"pca_dim={pca_dim} exceeds {fm.channels} channels")
    return _fit_pca(_foreground_samples(fm, mask), pca_dim, fm.layer_id)


def apply_coprojection(cp: CoProjection, fm: FeatureMap) -> FeatureMap:
    """Project every position: (x - mean) @ basis."""
    if fm.channels != cp.mean.shape[0]:
        raise DimMismatch(f"map has {fm.channels} channels, basis expects {cp.mean.shape[0]}")
    flat = fm.data.reshape(fm.channels, -1).T.astype(np.float64)
    projected = (flat - cp.mean) @ cp.basis
    out = projected.T.reshape(cp.basis.shape[1], fm.height, fm.width)
    return FeatureMap(layer_id=fm.layer_id, data=out.astype(np.float32))


def resample_bilinear(data: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resampling of a (C, H, W) array, half-pixel-center convention."""
    c, h, w = data.shape
    if (h, w) == (target_h, target_w):
        return data.copy()

    def _coords(src: int, dst: int) -> np.ndarray:
        pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
        return np.clip(pos, 0.0, src - 1.0)

    ys = _coords(h, target_h)
    xs = _coords(w, target_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = data[:, y0][:, :, x0] * (1 - wx) + data[:, y0][:, :, x1] * wx
    bot = data[:, y1][:, :, x0] * (1 - wx) + data[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def upsample_bilinear(fm: FeatureMap, target_h: int, target_w: int) -> FeatureMap:
    """Bilinear upsampling to a finer (or equal) grid."""
    if target_h < fm.height or target_w < fm.width:
        raise ValueError("upsample target must be at least the source size")
    if (target_h, target_w) == (fm.height, fm.width):
        return FeatureMap(layer_id=fm.layer_id, data=fm.data)
    out = resample_bilinear(fm.data.astype(np.float64), target_h, target_w)
    return FeatureMap(layer_id=fm.layer_id, data=out.astype(np.float32))


def assemble(
    q,
    t,
    layers=DEFAULT_LAYERS,
    pca_dim: int = DEFAULT_PCA_DIM,
    mode: str = "joint",
):
    """Build the query and template hyperfeature maps.

    Per layer: fit the (co-)projection, apply it to both sides, upsample to
    the finest configured grid, then concatenate in ascending layer order.
    ``mode="independent"`` fits each side separately (ablation only; it
    breaks cross-image comparability by construction).

    Returns (query HyperfeatureMap, template HyperfeatureMap).
    """
    if mode not in ("joint", "independent"):
        raise ValueError(f"unknown co-projection mode {mode!r}")
    layers = sorted(layers)
    for side, rec in (("query", q), ("template", t)):
        for layer in layers:
            if layer not in rec.features:
                raise MissingLayer(f"{side} lacks layer {layer}")

    target_h = max(max(q.features[l].height, t.features[l].height) for l in layers)
    target_w = max(max(q.features[l].width, t.features[l].width) for l in layers)

    q_parts, t_parts = [], []
    for layer in layers:
        q_fm = q.features[layer]
        t_fm = t.features[layer]
        if mode == "joint":
            cp = fit_coprojection(q_fm, t_fm, pca_dim, q.mask, t.mask)
            q_proj = apply_coprojection(cp, q_fm)
            t_proj = apply_coprojection(cp, t_fm)
        else:
            q_proj = apply_coprojection(fit_projection_single(q_fm, pca_dim, q.mask), q_fm)
            t_proj = apply_coprojection(fit_projection_single(t_fm, pca_dim, t.mask), t_fm)
        q_parts.append(upsample_bilinear(q_proj, target_h, target_w).data.astype(np.float64))
        t_parts.append(upsample_bilinear(t_proj, target_h, target_w).data.astype(np.float64))

    return (
        HyperfeatureMap(data=np.concatenate(q_parts, axis=0)),
        HyperfeatureMap(data=np.concatenate(t_parts, axis=0)),
    )
