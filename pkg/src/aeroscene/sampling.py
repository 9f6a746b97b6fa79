"""View augmentation samplers.

Two placement strategies generate virtual hemispheres ("domes") above the
scene: a multiscale XY grid whose cell sizes adapt to the scene's
height-to-footprint ratio, and a building-targeted variant that slices the
point cloud at a height percentile, rasterizes a top-down occupancy mask,
extracts building boxes and places one dome per (merged) box. Camera poses
are drawn on each dome either uniformly at random or along a spiral, always
looking at the dome center.
"""

import hashlib
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .errors import EmptyInputError
from .model import (
    CameraPose,
    fit_plane_xyz,
    look_at_quat,
    positions_of,
    quat_to_rotmat,
)

MAX_GRID_SCALES = 6
SPIRAL_TURNS = 3
RNG_ALGORITHM = "numpy-pcg64"


@dataclass
class SamplingConfig:
    slice_percentile: float = 70.0  # height percentile kept for the roof slice
    merge_m: int = 3  # merge each box with its 1..M nearest neighbors
    mask_resolution: int = 512  # pixels on the long side
    min_component_area: int = 9  # pixels
    closing_iterations: int = 1
    dome_radius_factor_grid: float = 0.75  # x cell size
    dome_radius_factor_box: float = 1.0  # x box diagonal
    poses_per_dome: int = 20
    el_range_deg: tuple = (30.0, 80.0)
    az_range_deg: tuple = (0.0, 360.0)
    scale_stop_factor: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.slice_percentile < 100):
            raise ValueError("slice_percentile must be in (0, 100)")
        if self.merge_m < 1:
            raise ValueError("merge_m must be at least 1")
        if self.mask_resolution < 8:
            raise ValueError("mask_resolution must be at least 8")

    def el_range(self):
        return (math.radians(self.el_range_deg[0]), math.radians(self.el_range_deg[1]))

    def az_range(self):
        return (math.radians(self.az_range_deg[0]), math.radians(self.az_range_deg[1]))


@dataclass(frozen=True, eq=False)
class DomeSpec:
    """A hemisphere of candidate camera positions above a ground point."""

    center: np.ndarray
    radius: float
    az_range: tuple  # radians, within [0, 2*pi]
    el_range: tuple  # radians, within [0, pi/2]
    tag: tuple

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "az_range", (float(self.az_range[0]), float(self.az_range[1])))
        object.__setattr__(self, "el_range", (float(self.el_range[0]), float(self.el_range[1])))
        if self.radius <= 0:
            raise ValueError("dome radius must be positive")
        el_lo, el_hi = self.el_range
        if not (0.0 <= el_lo <= el_hi <= math.pi / 2 + 1e-12):
            raise ValueError("elevation range must satisfy 0 <= lo <= hi <= pi/2")
        az_lo, az_hi = self.az_range
        if not (0.0 <= az_lo <= az_hi <= 2 * math.pi + 1e-12):
            raise ValueError("azimuth range must lie within [0, 2*pi]")


@dataclass(frozen=True)
class SampledPose:
    """A synthetic camera pose drawn from a dome."""

    pose: CameraPose
    source_dome: tuple
    synthetic: bool = True


def tag_to_str(tag):
    if isinstance(tag, (tuple, list)):
        if tag and tag[0] == "box":
            return "box" + "+".join(str(t) for t in tag[1:])
        return "g" + "_".join(str(t) for t in tag)
    return str(tag)


def _dome_seed(seed, tag):
    digest = hashlib.sha256(repr(tuple(tag)).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "big") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence([int(seed)] + words)
    return int(ss.generate_state(1, np.uint64)[0])


def dome_poses(dome, n, mode="random", seed=0, intr=None, *,
               intrinsics_id=1, id_start=0):
    """Draw n look-at poses on a dome.

    random mode samples azimuth and elevation uniformly within the dome's
    ranges; spiral mode winds three azimuth turns while stepping elevation
    linearly from el_max down to el_min (both endpoints hit exactly).
    """
    if n < 1:
        raise EmptyInputError("requested zero poses")
    az_lo, az_hi = dome.az_range
    el_lo, el_hi = dome.el_range
    if mode == "random":
        rng = np.random.default_rng(seed)
        az = rng.uniform(az_lo, az_hi, n)
        el = rng.uniform(el_lo, el_hi, n)
    elif mode == "spiral":
        i = np.arange(n)
        az = az_lo + (az_hi - az_lo) * np.mod(i * SPIRAL_TURNS / n, 1.0)
        el = np.linspace(el_hi, el_lo, n)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")

    out = []
    for j in range(n):
        direction = np.array([
            math.cos(el[j]) * math.cos(az[j]),
            math.cos(el[j]) * math.sin(az[j]),
            math.sin(el[j]),
        ])
        position = dome.center + dome.radius * direction
        qvec = look_at_quat(position, dome.center)
        tvec = -quat_to_rotmat(qvec) @ position
        pose = CameraPose(
            image_id=id_start + j,
            qvec=qvec,
            tvec=tvec,
            intrinsics_id=intrinsics_id,
            name=f"{tag_to_str(dome.tag)}_{j:03d}.png",
            seq_index=id_start + j,
        )
        out.append(SampledPose(pose, tuple(dome.tag)))
    return out


def sample_domes(domes, cfg, intr=None, mode="random", *, intrinsics_id=1, id_start=1):
    """Generate poses for every dome with per-dome derived seeds.

    The per-dome seed depends only on (cfg.seed, dome.tag), so the result is
    identical however the domes are batched or ordered.
    """
    poses = []
    next_id = id_start
    for dome in domes:
        batch = dome_poses(
            dome, cfg.poses_per_dome, mode=mode,
            seed=_dome_seed(cfg.seed, dome.tag), intr=intr,
            intrinsics_id=intrinsics_id, id_start=next_id)
        poses.extend(batch)
        next_id += len(batch)
    return poses


def derive_scales(bounds, scale_stop_factor, max_scales=MAX_GRID_SCALES):
    """Halving sequence of grid cell sizes adapted to the scene shape.

    Starts at the larger XY extent and keeps halving while the cell stays at
    least scale_stop_factor times the scene height; at least one and at most
    `max_scales` scales are produced.
    """
    ext = bounds.extent()
    size = float(max(ext[0], ext[1]))
    if size <= 0:
        raise EmptyInputError("bounds are degenerate in XY")
    height = float(ext[2])
    scales = [size]
    nxt = size / 2.0
    while len(scales) < max_scales and nxt >= scale_stop_factor * height:
        scales.append(nxt)
        nxt /= 2.0
    return scales


def _cells(extent, cell):
    return max(1, math.ceil(extent / cell - 1e-9))


def grid_domes(bounds, ground, cfg):
    """One dome per cell of each derived grid scale, centered on the ground."""
    scales = derive_scales(bounds, cfg.scale_stop_factor)
    ext = bounds.extent()
    domes = []
    for si, size in enumerate(scales):
        nx = _cells(float(ext[0]), size)
        ny = _cells(float(ext[1]), size)
        for row in range(ny):
            for col in range(nx):
                x = float(bounds.min[0]) + (col + 0.5) * size
                y = float(bounds.min[1]) + (row + 0.5) * size
                z = ground.height_at(x, y)
                domes.append(DomeSpec(
                    center=np.array([x, y, z]),
                    radius=cfg.dome_radius_factor_grid * size,
                    az_range=cfg.az_range(),
                    el_range=cfg.el_range(),
                    tag=(si, row, col),
                ))
    return domes


def fit_plane_lsq(points):
    """Least-squares plane through a Point3D list (normal oriented +Z)."""
    if len(points) < 3:
        raise EmptyInputError("plane fit needs at least 3 points")
    return fit_plane_xyz(positions_of(points))


def percentile_slice(points, slice_percentile):
    """Keep the points at or above the nearest-rank height percentile.

    Returns (threshold, kept). The threshold is the value at 1-based index
    ceil(P/100 * N) of the ascending Z sort, computed exactly.
    """
    if not points:
        raise EmptyInputError("cannot slice an empty point list")
    if not (0 < slice_percentile < 100):
        raise ValueError("slice_percentile must be in (0, 100)")
    heights = np.sort(positions_of(points)[:, 2])
    rank = int(math.ceil(Fraction(slice_percentile) * len(points) / 100))
    rank = min(max(rank, 1), len(points))
    threshold = float(heights[rank - 1])
    above = [p for p in points if p.position[2] >= threshold]
    return threshold, above


@dataclass(eq=False)
class BinaryMask:
    """Top-down occupancy raster with a pixel -> world-XY mapping.

    World center of pixel (row, col) is origin + (col + 0.5, row + 0.5) *
    pixel_size.
    """

    width: int
    height: int
    bits: np.ndarray  # bool, shape (height, width)
    origin: np.ndarray  # world XY of the (0, 0) pixel corner
    pixel_size: float

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(2)
        if self.bits.shape != (self.height, self.width):
            raise ValueError("bits shape must be (height, width)")
        if self.pixel_size <= 0:
            raise ValueError("pixel size must be positive")


def occupancy_mask(above, bounds, cfg):
    """Rasterize points onto the XY extent of `bounds` and close small gaps.

    The long side gets cfg.mask_resolution square pixels; a cell is occupied
    when at least one point projects into it. Closing is dilation then
    erosion with a 3x3 structuring element, each repeated
    cfg.closing_iterations times, computed on a zero-padded canvas so border
    pixels are not eaten.
    """
    if not above:
        raise EmptyInputError("occupancy mask needs at least one point")
    ext = bounds.extent()
    long_side = float(max(ext[0], ext[1]))
    if long_side <= 0:
        raise EmptyInputError("bounds are degenerate in XY")
    pixel = long_side / cfg.mask_resolution
    width = _cells(float(ext[0]), pixel)
    height = _cells(float(ext[1]), pixel)

    pos = positions_of(above)
    cols = np.clip(((pos[:, 0] - bounds.min[0]) / pixel).astype(np.int64), 0, width - 1)
    rows = np.clip(((pos[:, 1] - bounds.min[1]) / pixel).astype(np.int64), 0, height - 1)
    bits = np.zeros((height, width), dtype=bool)
    bits[rows, cols] = True

    if cfg.closing_iterations > 0:
        pad = cfg.closing_iterations + 1
        padded = np.pad(bits, pad)
        closed = ndimage.binary_closing(
            padded, structure=np.ones((3, 3), dtype=bool),
            iterations=cfg.closing_iterations)
        bits = closed[pad:-pad, pad:-pad]

    return BinaryMask(width, height, bits, bounds.min[:2].copy(), pixel)


@dataclass(frozen=True, eq=False)
class Box2D:
    """World-XY axis-aligned box; member_ids are the source box indices."""

    min_xy: np.ndarray
    max_xy: np.ndarray
    member_ids: frozenset

    def __post_init__(self):
        object.__setattr__(self, "min_xy", np.asarray(self.min_xy, dtype=np.float64).reshape(2))
        object.__setattr__(self, "max_xy", np.asarray(self.max_xy, dtype=np.float64).reshape(2))
        object.__setattr__(self, "member_ids", frozenset(int(i) for i in self.member_ids))
        if np.any(self.min_xy > self.max_xy):
            raise ValueError("box min must be <= max")
        if not self.member_ids:
            raise ValueError("box needs at least one member id")

    def centroid(self):
        return 0.5 * (self.min_xy + self.max_xy)

    def diagonal(self):
        return float(np.linalg.norm(self.max_xy - self.min_xy))


_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def extract_boxes(mask, min_component_area):
    """Bounding boxes of the 4-connected mask components, in world XY.

    Components smaller than min_component_area pixels are dropped; output is
    sorted by (min_x, min_y) and each box's member_ids is its own index.
    """
    labels, count = ndimage.label(mask.bits, structure=_FOUR_CONNECTED)
    if count == 0:
        return []
    areas = np.bincount(labels.ravel())
    raw = []
    for label, slc in enumerate(ndimage.find_objects(labels), start=1):
        if slc is None or areas[label] < min_component_area:
            continue
        rs, cs = slc
        min_xy = mask.origin + np.array([cs.start, rs.start]) * mask.pixel_size
        max_xy = mask.origin + np.array([cs.stop, rs.stop]) * mask.pixel_size
        raw.append((float(min_xy[0]), float(min_xy[1]), min_xy, max_xy))
    raw.sort(key=lambda r: (r[0], r[1]))
    return [Box2D(r[2], r[3], frozenset([i])) for i, r in enumerate(raw)]


def merge_nearest_boxes(boxes, merge_m):
    """Add, for each box, its union with the 1..M nearest boxes by centroid.

    Originals come first, then merges ordered by (source index, m); duplicate
    member sets are emitted once.
    """
    if not boxes:
        raise EmptyInputError("no boxes to merge")
    if merge_m < 1:
        raise ValueError("merge_m must be at least 1")
    out = list(boxes)
    seen = {b.member_ids for b in boxes}
    centroids = np.stack([b.centroid() for b in boxes])
    n = len(boxes)
    for i in range(n):
        d = np.linalg.norm(centroids - centroids[i], axis=1)
        order = [j for j in np.lexsort((np.arange(n), d)) if j != i]
        for m in range(1, min(merge_m, n - 1) + 1):
            members = frozenset().union(boxes[i].member_ids,
                                        *[boxes[j].member_ids for j in order[:m]])
            if members in seen:
                continue
            seen.add(members)
            group = [boxes[i]] + [boxes[j] for j in order[:m]]
            lo = np.min([b.min_xy for b in group], axis=0)
            hi = np.max([b.max_xy for b in group], axis=0)
            out.append(Box2D(lo, hi, members))
    return out


def semantic_domes(boxes, ground, cfg):
    """One dome per building box, sized by the box diagonal."""
    if not boxes:
        raise EmptyInputError("no boxes to place domes over")
    domes = []
    for box in boxes:
        diag = box.diagonal()
        if diag <= 0:
            warnings.warn(f"skipping zero-area box {sorted(box.member_ids)}")
            continue
        cx, cy = box.centroid()
        z = ground.height_at(cx, cy)
        domes.append(DomeSpec(
            center=np.array([cx, cy, z]),
            radius=cfg.dome_radius_factor_box * diag,
            az_range=cfg.az_range(),
            el_range=cfg.el_range(),
            tag=("box",) + tuple(sorted(box.member_ids)),
        ))
    return domes


def detect_building_boxes(points, cfg, bounds=None):
    """percentile slice -> occupancy mask -> component boxes, in one call."""
    from .model import scene_bounds

    if bounds is None:
        bounds = scene_bounds(points)
    threshold, above = percentile_slice(points, cfg.slice_percentile)
    mask = occupancy_mask(above, bounds, cfg)
    boxes = extract_boxes(mask, cfg.min_component_area)
    return threshold, mask, boxes


def boxes_to_json_dict(boxes):
    return {
        "boxes": [
            {
                "min": [float(b.min_xy[0]), float(b.min_xy[1])],
                "max": [float(b.max_xy[0]), float(b.max_xy[1])],
                "members": sorted(b.member_ids),
            }
            for b in boxes
        ]
    }


def boxes_from_json_dict(data):
    return [
        Box2D(np.array(entry["min"]), np.array(entry["max"]), frozenset(entry["members"]))
        for entry in data["boxes"]
    ]
