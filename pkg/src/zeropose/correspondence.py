"""Cluster-wise semantic correspondence estimation.

Hyperfeatures of both images are clustered independently (same k, seeded),
clusters are paired greedily by centroid cosine similarity, mismatched pairs
are discarded by a RANSAC fundamental-matrix check on centroid positions,
features are matched mutually within surviving cluster pairs, and match
locations are refined to sub-pixel accuracy from their local neighborhood.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import TooFewPoints
from .hyperfeatures import HyperfeatureMap
from .tensorio import resample_mask

KMEANS_MAX_ITERS = 100
RANSAC_F_ITERS = 500
RANSAC_F_THRESHOLD = 2.0
MIN_CLUSTER_SIMILARITY = 0.5


@dataclass(frozen=True)
class ClusterAssignment:
    centroids: np.ndarray  # (k, d)
    labels: np.ndarray  # (n,)
    inertia: float

    @property
    def k(self) -> int:
        return len(self.centroids)


@dataclass(frozen=True)
class ClusteredMap:
    """Foreground grid positions, their hyperfeature vectors, and clusters."""

    positions: np.ndarray  # (n, 2) float64, rows (y, x) in grid coords
    vectors: np.ndarray  # (n, d)
    clusters: ClusterAssignment

    def centroid_positions(self) -> np.ndarray:
        """(k, 2) mean grid position per cluster."""
        k = self.clusters.k
        out = np.zeros((k, 2))
        for c in range(k):
            members = self.clusters.labels == c
            if members.any():
                out[c] = self.positions[members].mean(axis=0)
        return out


@dataclass
class ClusterMatch:
    pairs: list  # [(q_cluster, t_cluster, centroid_similarity), ...]
    survived_ransac: np.ndarray  # (len(pairs),) bool
    ransac_degenerate: bool = False


@dataclass(frozen=True)
class Correspondence:
    q_pos: tuple  # (y, x) integer grid coords
    t_pos: tuple
    similarity: float
    q_refined: tuple  # (y, x) continuous grid coords
    t_refined: tuple
    cluster_pair: int


@dataclass
class CorrespondenceSet:
    matches: list
    similarity_evaluations: int = 0  # pairwise cosine evaluations spent

    def dump_text(self) -> str:
        lines = []
        for m in self.matches:
            lines.append(
                f"{m.q_pos[0]} {m.q_pos[1]} {m.t_pos[0]} {m.t_pos[1]} "
                f"{m.similarity:.6f} {m.q_refined[0]:.4f} {m.q_refined[1]:.4f} "
                f"{m.t_refined[0]:.4f} {m.t_refined[1]:.4f} {m.cluster_pair}"
            )
        return "\n".join(lines) + ("\n" if lines else "")


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    p2 = (points**2).sum(axis=1)[:, None]
    c2 = (centroids**2).sum(axis=1)[None, :]
    return np.maximum(p2 + c2 - 2.0 * points @ centroids.T, 0.0)


def kmeans(points: np.ndarray, k: int, seed: int) -> ClusterAssignment:
    """Seeded k-means++ followed by Lloyd iterations to an assignment fixpoint.

    Empty clusters are re-seeded to the point farthest from its centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if k < 1 or n < k:
        raise TooFewPoints(f"{n} points for k={k}")
    rng = np.random.default_rng(seed)

    # k-means++ init
    centroids = np.empty((k, pts.shape[1]))
    centroids[0] = pts[rng.integers(n)]
    closest = _squared_distances(pts, centroids[:1]).min(axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[i] = pts[rng.integers(n)]
        else:
            centroids[i] = pts[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, _squared_distances(pts, centroids[i : i + 1]).min(axis=1))

    d2 = _squared_distances(pts, centroids)
    labels = d2.argmin(axis=1)
    dim = pts.shape[1]
    for _ in range(KMEANS_MAX_ITERS):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros((k, dim))
        np.add.at(sums, labels, pts)
        occupied = counts > 0
        centroids[occupied] = sums[occupied] / counts[occupied, None]
        if not occupied.all():
            # empty clusters: re-seed to the points farthest from their centroid
            assigned = d2[np.arange(n), labels]
            order = np.argsort(assigned)[::-1]
            for j, c in enumerate(np.nonzero(~occupied)[0]):
                centroids[c] = pts[order[j % n]]
        d2 = _squared_distances(pts, centroids)
        new_labels = d2.argmin(axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), labels].sum())
    return ClusterAssignment(centroids=centroids, labels=labels, inertia=inertia)


def _foreground_vectors(hm: HyperfeatureMap, mask: np.ndarray):
    m = resample_mask(mask, hm.height, hm.width)
    ys, xs = np.nonzero(m)
    positions = np.stack([ys, xs], axis=1).astype(np.float64)
    vectors = hm.data.reshape(hm.dim, -1).T[m.reshape(-1)].astype(np.float64)
    return positions, vectors


def cluster_hyperfeatures(
    hm: HyperfeatureMap, mask: np.ndarray, k: int, seed: int
) -> ClusteredMap:
    """Cluster the foreground positions of a hyperfeature map."""
    positions, vectors = _foreground_vectors(hm, mask)
    k_eff = min(k, len(positions))
    return ClusteredMap(
        positions=positions, vectors=vectors, clusters=kmeans(vectors, k_eff, seed)
    )


def cluster_jointly(
    qh: HyperfeatureMap,
    q_mask: np.ndarray,
    th: HyperfeatureMap,
    t_mask: np.ndarray,
    k: int,
    seed: int,
):
    """Shared-codebook clustering of a query/template pair.

    One seeded k-means runs on the pooled foreground vectors of both maps;
    each side is then assigned to the shared centroids. Corresponding
    regions land in the same cluster index by construction, which is what
    makes the downstream cluster pairing reliable. Per-image k-means grows
    structurally different partitions even for near-identical views, and
    centroid similarity alone cannot repair that.

    Returns (query ClusteredMap, template ClusteredMap).
    """
    q_pos, q_vec = _foreground_vectors(qh, q_mask)
    t_pos, t_vec = _foreground_vectors(th, t_mask)
    pooled = np.concatenate([q_vec, t_vec])
    assign = kmeans(pooled, min(k, len(pooled)), seed)
    out = []
    for pos, vec in ((q_pos, q_vec), (t_pos, t_vec)):
        d2 = _squared_distances(vec, assign.centroids)
        labels = d2.argmin(axis=1)
        inertia = float(d2[np.arange(len(vec)), labels].sum())
        out.append(
            ClusteredMap(
                positions=pos,
                vectors=vec,
                clusters=ClusterAssignment(
                    centroids=assign.centroids, labels=labels, inertia=inertia
                ),
            )
        )
    return out[0], out[1]


def _cosine_table(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.outer(np.maximum(na, 1e-12), np.maximum(nb, 1e-12))
    return np.clip(a @ b.T / denom, -1.0, 1.0)


def match_clusters(
    q: ClusterAssignment, t: ClusterAssignment, min_similarity: float = MIN_CLUSTER_SIMILARITY
) -> ClusterMatch:
    """Greedy mutual-best pairing on centroid cosine similarity.

    Repeatedly pairs the globally most similar unpaired centroids and stops
    below ``min_similarity``. Each cluster appears in at most one pair.
    """
    sims = _cosine_table(q.centroids, t.centroids)
    available = sims.copy()
    pairs = []
    for _ in range(min(q.k, t.k)):
        flat = available.argmax()
        qi, ti = np.unravel_index(flat, available.shape)
        best = available[qi, ti]
        if best < min_similarity:
            break
        pairs.append((int(qi), int(ti), float(sims[qi, ti])))
        available[qi, :] = -np.inf
        available[:, ti] = -np.inf
    return ClusterMatch(pairs=pairs, survived_ransac=np.ones(len(pairs), dtype=bool))


def _normalize_points(pts: np.ndarray):
    mean = pts.mean(axis=0)
    centered = pts - mean
    scale = np.sqrt(2.0) / max(np.sqrt((centered**2).sum(axis=1)).mean(), 1e-12)
    transform = np.array(
        [[scale, 0.0, -scale * mean[0]], [0.0, scale, -scale * mean[1]], [0.0, 0.0, 1.0]]
    )
    homog = np.column_stack([pts, np.ones(len(pts))])
    return homog @ transform.T, transform


def _eight_point(x1: np.ndarray, x2: np.ndarray) -> np.ndarray | None:
    """Normalized 8-point fundamental matrix; x1, x2 are (n, 2), n >= 8."""
    p1, t1 = _normalize_points(x1)
    p2, t2 = _normalize_points(x2)
    a = np.column_stack(
        [
            p2[:, 0] * p1[:, 0],
            p2[:, 0] * p1[:, 1],
            p2[:, 0],
            p2[:, 1] * p1[:, 0],
            p2[:, 1] * p1[:, 1],
            p2[:, 1],
            p1[:, 0],
            p1[:, 1],
            np.ones(len(p1)),
        ]
    )
    try:
        _, _, vt = np.linalg.svd(a)
        f = vt[-1].reshape(3, 3)
        u, s, vt2 = np.linalg.svd(f)
        f = u @ np.diag([s[0], s[1], 0.0]) @ vt2
    except np.linalg.LinAlgError:
        return None
    return t2.T @ f @ t1


def _sampson_distance(f: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    p1 = np.column_stack([x1, np.ones(len(x1))])
    p2 = np.column_stack([x2, np.ones(len(x2))])
    fx1 = p1 @ f.T
    ftx2 = p2 @ f
    residual = (p2 * fx1).sum(axis=1)
    denom = fx1[:, 0] ** 2 + fx1[:, 1] ** 2 + ftx2[:, 0] ** 2 + ftx2[:, 1] ** 2
    return residual**2 / np.maximum(denom, 1e-12)


def ransac_filter(
    cm: ClusterMatch,
    q_centpos: np.ndarray,
    t_centpos: np.ndarray,
    seed: int = 0,
    iterations: int = RANSAC_F_ITERS,
    threshold: float = RANSAC_F_THRESHOLD,
) -> ClusterMatch:
    """Discard cluster pairs violating the epipolar constraint.

    Runs a seeded RANSAC over normalized 8-point fundamental-matrix fits on
    the paired centroid grid positions (Sampson distance, units of grid
    cells). Fewer than 8 pairs, or a degenerate consensus, passes everything
    through with the degenerate flag set.
    """
    n = len(cm.pairs)
    if n < 8:
        return ClusterMatch(
            pairs=list(cm.pairs),
            survived_ransac=np.ones(n, dtype=bool),
            ransac_degenerate=True,
        )
    # positions as (x, y) for the epipolar algebra
    x1 = np.array([q_centpos[qc][::-1] for qc, _, _ in cm.pairs])
    x2 = np.array([t_centpos[tc][::-1] for _, tc, _ in cm.pairs])
    rng = np.random.default_rng(seed)
    best_inliers = None
    best_count = 0
    best_residual = np.inf
    for _ in range(iterations):
        sample = rng.choice(n, size=8, replace=False)
        f = _eight_point(x1[sample], x2[sample])
        if f is None:
            continue
        distances = _sampson_distance(f, x1, x2)
        inliers = distances < threshold**2
        count = int(inliers.sum())
        residual = float(distances[inliers].mean()) if count else np.inf
        if count > best_count or (count == best_count and residual < best_residual):
            best_count = count
            best_residual = residual
            best_inliers = inliers
    if best_inliers is None or best_count < 8:
        return ClusterMatch(
            pairs=list(cm.pairs),
            survived_ransac=np.ones(n, dtype=bool),
            ransac_degenerate=True,
        )
    f = _eight_point(x1[best_inliers], x2[best_inliers])
    if f is not None:
        refined = _sampson_distance(f, x1, x2) < threshold**2
        if refined.sum() >= 8:
            best_inliers = refined
    return ClusterMatch(
        pairs=list(cm.pairs),
        survived_ransac=best_inliers.copy(),
        ransac_degenerate=False,
    )


def match_within_clusters(
    q: ClusteredMap, t: ClusteredMap, cm: ClusterMatch, top_k: int = 10
) -> CorrespondenceSet:
    """Mutual-best cosine matches inside each surviving cluster pair.

    Keeps at most ``top_k`` matches per pair, ordered by similarity; fewer
    survive when mutuality fails.
    """
    matches = []
    evaluations = 0
    for pair_id, (qc, tc, _) in enumerate(cm.pairs):
        if not cm.survived_ransac[pair_id]:
            continue
        q_idx = np.nonzero(q.clusters.labels == qc)[0]
        t_idx = np.nonzero(t.clusters.labels == tc)[0]
        if len(q_idx) == 0 or len(t_idx) == 0:
            continue
        table = _cosine_table(q.vectors[q_idx], t.vectors[t_idx])
        evaluations += table.size
        best_t = table.argmax(axis=1)
        best_q = table.argmax(axis=0)
        mutual = [(i, best_t[i]) for i in range(len(q_idx)) if best_q[best_t[i]] == i]
        mutual.sort(key=lambda ij: -table[ij[0], ij[1]])
        for i, j in mutual[:top_k]:
            qy, qx = q.positions[q_idx[i]]
            ty, tx = t.positions[t_idx[j]]
            matches.append(
                Correspondence(
                    q_pos=(int(qy), int(qx)),
                    t_pos=(int(ty), int(tx)),
                    similarity=float(table[i, j]),
                    q_refined=(float(qy), float(qx)),
                    t_refined=(float(ty), float(tx)),
                    cluster_pair=pair_id,
                )
            )
    return CorrespondenceSet(matches=matches, similarity_evaluations=evaluations)


def _weighted_centroid(
    grid: np.ndarray, anchor: np.ndarray, pos: tuple, kernel: int
) -> tuple:
    """Similarity-weighted centroid of the kernel window around ``pos``.

    Weights are max(0, cosine(grid vector, anchor)); windows are clipped at
    the borders; zero total weight keeps the integer position.
    """
    d, h, w = grid.shape
    half = kernel // 2
    y0, y1 = max(pos[0] - half, 0), min(pos[0] + half, h - 1)
    x0, x1 = max(pos[1] - half, 0), min(pos[1] + half, w - 1)
    window = grid[:, y0 : y1 + 1, x0 : x1 + 1].reshape(d, -1).T
    norms = np.linalg.norm(window, axis=1)
    a_norm = np.linalg.norm(anchor)
    sims = window @ anchor / np.maximum(norms * max(a_norm, 1e-12), 1e-12)
    weights = np.maximum(sims, 0.0)
    total = weights.sum()
    if total <= 0:
        return (float(pos[0]), float(pos[1]))
    ys, xs = np.meshgrid(
        np.arange(y0, y1 + 1, dtype=np.float64),
        np.arange(x0, x1 + 1, dtype=np.float64),
        indexing="ij",
    )
    return (
        float((weights * ys.reshape(-1)).sum() / total),
        float((weights * xs.reshape(-1)).sum() / total),
    )


def subpixel_refine(
    cs: CorrespondenceSet,
    qh: HyperfeatureMap,
    th: HyperfeatureMap,
    kernel: int = 3,
) -> CorrespondenceSet:
    """Refine both endpoints of every match to continuous grid coordinates."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 1")
    q_grid = qh.data.astype(np.float64)
    t_grid = th.data.astype(np.float64)
    refined = []
    for m in cs.matches:
        t_anchor = t_grid[:, m.t_pos[0], m.t_pos[1]]
        q_anchor = q_grid[:, m.q_pos[0], m.q_pos[1]]
        refined.append(
            replace(
                m,
                q_refined=_weighted_centroid(q_grid, t_anchor, m.q_pos, kernel),
                t_refined=_weighted_centroid(t_grid, q_anchor, m.t_pos, kernel),
            )
        )
    return CorrespondenceSet(
        matches=refined, similarity_evaluations=cs.similarity_evaluations
    )
