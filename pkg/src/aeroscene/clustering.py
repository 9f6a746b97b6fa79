"""Fixed-size view clustering over a scene model.

Four methods are provided: capture-sequence chunking, XY-grid grouping with
an angular constraint, grouping by where each optical axis hits the ground
plane, and grouping by shared triangulated points. Every method emits
clusters of exactly `k` members and breaks all ties by ascending image id so
results are reproducible run to run.
"""

import warnings
from dataclasses import dataclass, field
from itertools import combinations
from math import ceil, degrees

import numpy as np
from scipy import sparse

from .errors import (
    CrossReferenceError,
    EmptyInputError,
    EmptyResultError,
    InsufficientViewsError,
)
from .model import (
    Plane,
    camera_center,
    estimate_ground_height,
    optical_axis_ray,
    ray_plane_intersect,
)

METHODS = ("sequence", "grid", "ray", "sfm")


@dataclass
class ClusteringConfig:
    k: int = 20
    num_clusters: int = None  # default: floor(n_images / k)
    angle_threshold_deg: float = 45.0
    ground_height: object = "estimate"  # meters, or "estimate"
    grid_cell_size: float = None  # meters; default: max XY extent / 10
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("cluster size k must be at least 2")
        if self.num_clusters is not None and self.num_clusters < 1:
            raise ValueError("num_clusters must be at least 1")
        if not (0 < self.angle_threshold_deg <= 180):
            raise ValueError("angle_threshold_deg must be in (0, 180]")


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    center_image: int
    members: tuple  # exactly k image ids, center first

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"cluster {self.cluster_id}: duplicate members")
        if self.members[0] != self.center_image:
            raise ValueError(f"cluster {self.cluster_id}: center must be members[0]")


@dataclass
class ClusterSet:
    method: str
    config: ClusteringConfig
    clusters: list

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        for want, cluster in enumerate(self.clusters):
            if cluster.cluster_id != want:
                raise ValueError("cluster ids must be consecutive from 0")
            if len(cluster.members) != self.config.k:
                raise ValueError(
                    f"cluster {cluster.cluster_id} has {len(cluster.members)} members, "
                    f"expected {self.config.k}")


@dataclass(eq=False)
class SimilarityMatrix:
    """Symmetric counts of 3D points co-observed by image pairs."""

    ids: tuple
    s: np.ndarray

    def __post_init__(self):
        self.ids = tuple(int(i) for i in self.ids)
        self._index = {image_id: i for i, image_id in enumerate(self.ids)}

    def index_of(self, image_id):
        return self._index[image_id]

    def value(self, id_a, id_b):
        return int(self.s[self._index[id_a], self._index[id_b]])

    def row(self, image_id):
        return self.s[self._index[image_id]]

    def covers(self, image_ids):
        return all(i in self._index for i in image_ids)


@dataclass
class QualityReport:
    per_cluster_mean: list
    global_mean: float
    global_min: float
    zero_pair_fraction: float
    flagged_clusters: list = field(default_factory=list)

    def to_dict(self):
        return {
            "per_cluster_mean": self.per_cluster_mean,
            "global_mean": self.global_mean,
            "global_min": self.global_min,
            "zero_pair_fraction": self.zero_pair_fraction,
            "flagged_clusters": self.flagged_clusters,
        }


def _default_num_clusters(scene, cfg):
    if cfg.num_clusters is not None:
        return cfg.num_clusters
    return max(1, len(scene.cameras) // cfg.k)


def _sorted_poses(scene):
    return [scene.cameras[i] for i in scene.ordered_image_ids()]


def _farthest_point_sampling(points, ids, count):
    """Greedy max-min selection over rows of `points`.

    Starts at the lowest id; distance ties resolve to the lowest id. Returns
    at most `count` row indices.
    """
    n = len(ids)
    count = min(count, n)
    order = np.asarray(ids)
    start = int(np.flatnonzero(order == order.min())[0])
    chosen = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    dist[start] = -1.0
    while len(chosen) < count:
        best = dist.max()
        cand = np.flatnonzero(dist == best)
        nxt = int(cand[np.argmin(order[cand])])
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
        dist[nxt] = -1.0
    return chosen


def sequence_clusters(scene, cfg):
    """Chunk the capture sequence into consecutive groups of k.

    A trailing remainder shorter than k is dropped so every cluster has a
    constant size.
    """
    poses = scene.poses_by_seq()
    if len(poses) < cfg.k:
        raise InsufficientViewsError(
            f"{len(poses)} images cannot form a cluster of {cfg.k}")
    clusters = []
    for start in range(0, len(poses) - cfg.k + 1, cfg.k):
        members = [p.image_id for p in poses[start:start + cfg.k]]
        clusters.append(Cluster(len(clusters), members[0], members))
    return ClusterSet("sequence", cfg, clusters)


def grid_clusters(scene, cfg):
    """Group the k cameras nearest each grid cell center, orientation-filtered.

    Cameras whose optical axis deviates from the per-cell anchor by more than
    the configured angle are discarded before the k nearest are taken; cells
    that cannot fill a cluster yield none.
    """
    poses = _sorted_poses(scene)
    if len(poses) < cfg.k:
        raise InsufficientViewsError(
            f"{len(poses)} images cannot form a cluster of {cfg.k}")
    ids = np.array([p.image_id for p in poses])
    centers = np.stack([camera_center(p) for p in poses])
    axes = np.stack([optical_axis_ray(p).direction for p in poses])

    xy = centers[:, :2]
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    ext = hi - lo
    cell = cfg.grid_cell_size
    if cell is None:
        cell = max(float(ext.max()) / 10.0, 1e-6)
    if cell <= 0:
        raise ValueError("grid_cell_size must be positive")
    nx = max(1, ceil(float(ext[0]) / cell - 1e-9))
    ny = max(1, ceil(float(ext[1]) / cell - 1e-9))

    clusters = []
    for iy in range(ny):
        for ix in range(nx):
            cc = lo + (np.array([ix, iy]) + 0.5) * cell
            d = np.linalg.norm(xy - cc, axis=1)
            order = np.lexsort((ids, d))
            anchor = order[0]
            cos = np.clip(axes[order] @ axes[anchor], -1.0, 1.0)
            keep = order[np.degrees(np.arccos(cos)) <= cfg.angle_threshold_deg]
            if len(keep) < cfg.k:
                continue
            members = ids[keep[:cfg.k]].tolist()
            clusters.append(Cluster(len(clusters), members[0], members))
    if not clusters:
        raise EmptyResultError("no grid cell produced a full cluster")
    return ClusterSet("grid", cfg, clusters)


def _ground_plane(scene, cfg):
    height = cfg.ground_height
    if height == "estimate":
        if not scene.points:
            raise EmptyInputError("cannot estimate ground height without points")
        height = estimate_ground_height(scene.points, up_axis=scene.up_axis)
    normal = np.zeros(3)
    normal[scene.up_axis] = 1.0
    return Plane(normal, float(height))


def ray_ground_clusters(scene, cfg):
    """Group cameras by proximity of their optical-axis ground intersections.

    Cluster centers are spread by farthest-point sampling over the
    intersection points; cameras whose axis never hits the ground plane are
    excluded.
    """
    poses = _sorted_poses(scene)
    if len(poses) < cfg.k:
        raise InsufficientViewsError(
            f"{len(poses)} images cannot form a cluster of {cfg.k}")
    plane = _ground_plane(scene, cfg)
    ids, hits = [], []
    for pose in poses:
        hit = ray_plane_intersect(optical_axis_ray(pose), plane)
        if hit is not None:
            ids.append(pose.image_id)
            hits.append(hit)
    if len(ids) < cfg.k:
        raise InsufficientViewsError(
            f"only {len(ids)} optical axes intersect the ground plane, need {cfg.k}")
    hits = np.stack(hits)
    ids_arr = np.array(ids)

    centers = _farthest_point_sampling(hits, ids, _default_num_clusters(scene, cfg))
    clusters = []
    for center_idx in centers:
        d = np.linalg.norm(hits - hits[center_idx], axis=1)
        order = np.lexsort((ids_arr, d))
        rest = [int(ids_arr[i]) for i in order if i != center_idx][:cfg.k - 1]
        members = [int(ids_arr[center_idx])] + rest
        clusters.append(Cluster(len(clusters), members[0], members))
    return ClusterSet("ray", cfg, clusters)


def shared_point_similarity(scene):
    """Count, for every image pair, the 3D points observed by both.

    Accumulated point-by-point from the tracks (as an incidence-matrix
    product), never by scanning all image pairs against all points.
    """
    ids = tuple(scene.ordered_image_ids())
    index = {image_id: i for i, image_id in enumerate(ids)}
    rows, cols = [], []
    for pi, point in enumerate(scene.points):
        for image_id in point.track:
            rows.append(pi)
            cols.append(index[image_id])
    if not rows:
        warnings.warn("all tracks are empty; similarity matrix is all zeros")
        return SimilarityMatrix(ids, np.zeros((len(ids), len(ids)), dtype=np.int64))
    incidence = sparse.coo_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)),
        shape=(len(scene.points), len(ids))).tocsr()
    s = (incidence.T @ incidence).toarray()
    return SimilarityMatrix(ids, s)


def sfm_clusters(scene, sim, cfg):
    """Group each sampled center with its k-1 most point-sharing images.

    Centers are spread by farthest-point sampling over camera centers; ties in
    similarity resolve to the lower image id.
    """
    poses = _sorted_poses(scene)
    if len(poses) < cfg.k:
        raise InsufficientViewsError(
            f"{len(poses)} images cannot form a cluster of {cfg.k}")
    if not sim.covers(p.image_id for p in poses):
        raise CrossReferenceError("similarity matrix does not cover all scene images")
    ids = np.array([p.image_id for p in poses])
    centers = np.stack([camera_center(p) for p in poses])

    picked = _farthest_point_sampling(centers, ids.tolist(), _default_num_clusters(scene, cfg))
    clusters = []
    for center_idx in picked:
        center_id = int(ids[center_idx])
        row = np.array([sim.value(center_id, int(j)) for j in ids])
        order = np.lexsort((ids, -row))
        rest = [int(ids[i]) for i in order if i != center_idx][:cfg.k - 1]
        members = [center_id] + rest
        clusters.append(Cluster(len(clusters), members[0], members))
    return ClusterSet("sfm", cfg, clusters)


def cluster_quality(scene, sim, cs):
    """Mean pairwise shared points per cluster plus global aggregates.

    `flagged_clusters` lists clusters whose center shares zero points with at
    least one member.
    """
    per_cluster = []
    flagged = []
    zero_pairs = 0
    total_pairs = 0
    for cluster in cs.clusters:
        if not sim.covers(cluster.members):
            raise CrossReferenceError(
                f"cluster {cluster.cluster_id} has members outside the similarity matrix")
        values = [sim.value(a, b) for a, b in combinations(cluster.members, 2)]
        per_cluster.append(float(np.mean(values)) if values else 0.0)
        zero_pairs += sum(1 for v in values if v == 0)
        total_pairs += len(values)
        if any(sim.value(cluster.center_image, m) == 0 for m in cluster.members[1:]):
            flagged.append(cluster.cluster_id)
    global_mean = float(np.mean(per_cluster)) if per_cluster else 0.0
    global_min = float(min(per_cluster)) if per_cluster else 0.0
    zero_frac = zero_pairs / total_pairs if total_pairs else 0.0
    return QualityReport(per_cluster, global_mean, global_min, zero_frac, flagged)


def cluster_scene(scene, method, cfg, sim=None):
    """Run one clustering method by name; computes the similarity if needed."""
    if method == "sequence":
        return sequence_clusters(scene, cfg)
    if method == "grid":
        return grid_clusters(scene, cfg)
    if method == "ray":
        return ray_ground_clusters(scene, cfg)
    if method == "sfm":
        if sim is None:
            sim = shared_point_similarity(scene)
        return sfm_clusters(scene, sim, cfg)
    raise ValueError(f"unknown clustering method {method!r}")
