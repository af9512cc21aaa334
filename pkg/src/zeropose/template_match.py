"""Viewpoint retrieval: pick the template closest to the query crop.

Matching runs on the configured low-resolution layer (layer 2 by default):
masked feature maps are flattened channel-major and compared by cosine
similarity, so spatial layout contributes to the score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask, MissingLayer, NoTemplates, ZeroNorm
from .geometry import CameraIntrinsics, CropTransform, Pose
from .tensorio import FeatureMap, resample_mask


@dataclass
class TemplateRecord:
    """Rendered template: per-layer features, pose, camera, and geometry maps."""

    template_id: int
    features: dict  # layer id -> FeatureMap
    pose: Pose
    intrinsics: CameraIntrinsics
    mask: np.ndarray  # (H, W) bool, crop resolution
    depth: np.ndarray | None = None  # (H, W) mm
    nocs: np.ndarray | None = None  # (H, W, 3) in [0, 1]


@dataclass
class QueryCrop:
    """One detection crop: features, mask, and the map back to the source image."""

    crop_id: str
    features: dict  # layer id -> FeatureMap
    mask: np.ndarray  # (H, W) bool, crop resolution
    crop_transform: CropTransform
    scene_intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class MatchResult:
    template_id: int
    score: float
    ranked_scores: tuple = field(default_factory=tuple)  # ((template_id, score), ...) desc


def masked_embedding(fm: FeatureMap, mask: np.ndarray) -> np.ndarray:
    """Zero background positions and flatten the map channel-major."""
    m = resample_mask(mask, fm.height, fm.width)
    if not m.any():
        raise EmptyMask("no foreground left after resampling mask to feature grid")
    return (fm.data.astype(np.float64) * m[None, :, :]).reshape(-1)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= 1e-12 or nb <= 1e-12:
        raise ZeroNorm("cosine similarity of a (near-)zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def match_template(
    q: QueryCrop, templates: list, match_layer: int = 2
) -> MatchResult:
    """Return the template maximizing masked cosine similarity on ``match_layer``.

    Ties break toward the lowest template id. Template maps whose grid differs
    from the query's are bilinearly resampled to the query grid first.
    """
    if not templates:
        raise NoTemplates("template list is empty")
    if match_layer not in q.features:
        raise MissingLayer(f"query lacks layer {match_layer}")
    q_fm = q.features[match_layer]
    q_emb = masked_embedding(q_fm, q.mask)

    from .hyperfeatures import resample_bilinear  # local import to avoid a cycle

    scored = []
    for t in templates:
        if match_layer not in t.features:
            raise MissingLayer(f"template {t.template_id} lacks layer {match_layer}")
        fm = t.features[match_layer]
        if (fm.height, fm.width) != (q_fm.height, q_fm.width):
            data = resample_bilinear(fm.data.astype(np.float64), q_fm.height, q_fm.width)
            fm = FeatureMap(layer_id=fm.layer_id, data=data.astype(np.float32))
        t_emb = masked_embedding(fm, t.mask)
        scored.append((int(t.template_id), cosine_similarity(q_emb, t_emb)))

    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    best_id, best_score = scored[0]
    return MatchResult(template_id=best_id, score=best_score, ranked_scores=tuple(scored))
