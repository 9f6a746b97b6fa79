"""Core scene types and camera geometry.

Conventions used everywhere in this package:
  * rotations are world->camera, stored as (qw, qx, qy, qz) unit quaternions,
    with x_cam = R @ x_world + t
  * camera frame is +Z forward, +X right, +Y down
  * the world up axis defaults to +Z
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFitError, EmptyInputError

UNIT_TOL = 1e-9
RAY_EPS = 1e-9
PARALLEL_EPS = 1e-12


def _vec3(v):
    a = np.asarray(v, dtype=np.float64).reshape(3)
    a.flags.writeable = False
    return a


def _vec4(v):
    a = np.asarray(v, dtype=np.float64).reshape(4)
    a.flags.writeable = False
    return a


def quat_to_rotmat(qvec):
    """Rotation matrix of a (qw, qx, qy, qz) quaternion."""
    w, x, y, z = qvec
    return np.array([
        [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * z * x + 2 * w * y],
        [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
        [2 * z * x - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
    ])


def rotmat_to_quat(rot):
    """Quaternion (qw, qx, qy, qz) of a rotation matrix, with qw >= 0."""
    rxx, ryx, rzx, rxy, ryy, rzy, rxz, ryz, rzz = np.asarray(rot, dtype=np.float64).flat
    k = np.array([
        [rxx - ryy - rzz, 0, 0, 0],
        [ryx + rxy, ryy - rxx - rzz, 0, 0],
        [rzx + rxz, rzy + ryz, rzz - rxx - ryy, 0],
        [ryz - rzy, rzx - rxz, rxy - ryx, rxx + ryy + rzz],
    ]) / 3.0
    eigvals, eigvecs = np.linalg.eigh(k)
    qvec = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if qvec[0] < 0:
        qvec = -qvec
    return qvec


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self):
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True, eq=False)
class CameraPose:
    """One posed image: world->camera rotation + translation."""

    image_id: int
    qvec: np.ndarray  # (qw, qx, qy, qz), unit norm
    tvec: np.ndarray
    intrinsics_id: int
    name: str = ""
    seq_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "qvec", _vec4(self.qvec))
        object.__setattr__(self, "tvec", _vec3(self.tvec))
        if abs(np.linalg.norm(self.qvec) - 1.0) > UNIT_TOL:
            raise ValueError(f"image {self.image_id}: quaternion is not unit norm")

    def rotation(self):
        return quat_to_rotmat(self.qvec)


@dataclass(frozen=True, eq=False)
class Point3D:
    """One triangulated point with the ids of the images observing it."""

    point_id: int
    position: np.ndarray
    color: tuple = (128, 128, 128)
    track: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        object.__setattr__(self, "color", tuple(int(c) for c in self.color))
        object.__setattr__(self, "track", tuple(int(i) for i in self.track))
        if len(set(self.track)) != len(self.track):
            raise ValueError(f"point {self.point_id}: duplicate track entries")


@dataclass(frozen=True, eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin))
        object.__setattr__(self, "direction", _vec3(self.direction))
        if abs(np.linalg.norm(self.direction) - 1.0) > UNIT_TOL:
            raise ValueError("ray direction is not unit norm")


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane normal . x = offset with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        object.__setattr__(self, "normal", _vec3(self.normal))
        object.__setattr__(self, "offset", float(self.offset))
        if abs(np.linalg.norm(self.normal) - 1.0) > UNIT_TOL:
            raise ValueError("plane normal is not unit norm")

    def height_at(self, x, y):
        """Z of the plane above world (x, y); requires a non-vertical plane."""
        nx, ny, nz = self.normal
        if abs(nz) < 1e-9:
            raise DegenerateFitError("plane is vertical, cannot project along Z")
        return (self.offset - nx * x - ny * y) / nz


def horizontal_plane(height):
    return Plane(np.array([0.0, 0.0, 1.0]), float(height))


@dataclass(frozen=True, eq=False)
class AxisAlignedBounds:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", _vec3(self.min))
        object.__setattr__(self, "max", _vec3(self.max))
        if np.any(self.min > self.max):
            raise ValueError("bounds min must be <= max componentwise")

    def extent(self):
        return self.max - self.min

    def center(self):
        return 0.5 * (self.min + self.max)

    def half_diagonal(self):
        return 0.5 * float(np.linalg.norm(self.max - self.min))


@dataclass(eq=False)
class SceneModel:
    """Immutable bundle of posed images, intrinsics and tracked points."""

    cameras: dict = field(default_factory=dict)  # image_id -> CameraPose
    intrinsics: dict = field(default_factory=dict)  # intrinsics_id -> Intrinsics
    points: list = field(default_factory=list)
    up_axis: int = 2

    def __post_init__(self):
        if not self.cameras:
            raise EmptyModelError("scene has no images")
        from .errors import CrossReferenceError

        for pose in self.cameras.values():
            if pose.intrinsics_id not in self.intrinsics:
                raise CrossReferenceError(
                    f"image {pose.image_id} references unknown camera {pose.intrinsics_id}")
        if self.points:
            ids = np.fromiter(
                (i for p in self.points for i in p.track), dtype=np.int64,
                count=sum(len(p.track) for p in self.points))
            if ids.size:
                known = np.fromiter(self.cameras.keys(), dtype=np.int64)
                if not np.isin(np.unique(ids), known).all():
                    bad = np.unique(ids)[~np.isin(np.unique(ids), known)]
                    raise CrossReferenceError(
                        f"point tracks reference unknown image ids {bad[:5].tolist()}")

    def ordered_image_ids(self):
        return sorted(self.cameras)

    def poses_by_seq(self):
        return sorted(self.cameras.values(), key=lambda p: p.seq_index)


def positions_of(points):
    """(N, 3) float array of point positions."""
    if not points:
        return np.zeros((0, 3))
    return np.stack([p.position for p in points])


def camera_center(pose):
    """World-space camera center -R^T t."""
    return -pose.rotation().T @ pose.tvec


def optical_axis_ray(pose):
    """Ray from the camera center along the viewing direction (+Z of the camera)."""
    rot = pose.rotation()
    return Ray(-rot.T @ pose.tvec, rot.T @ np.array([0.0, 0.0, 1.0]))


def ray_plane_intersect(ray, plane):
    """Intersection point, or None when parallel or behind the origin."""
    denom = float(plane.normal @ ray.direction)
    if abs(denom) < PARALLEL_EPS:
        return None
    t = (plane.offset - float(plane.normal @ ray.origin)) / denom
    if t <= RAY_EPS:
        return None
    return ray.origin + t * ray.direction


def scene_bounds(points):
    """Axis-aligned bounds of a non-empty point list."""
    if not points:
        raise EmptyInputError("cannot compute bounds of an empty point list")
    pos = positions_of(points)
    return AxisAlignedBounds(pos.min(axis=0), pos.max(axis=0))


def look_at_quat(position, target, up=(0.0, 0.0, 1.0)):
    """World->camera quaternion for a camera at `position` looking at `target`.

    Camera +Z points at the target and +Y points world-down. When the viewing
    direction is parallel to `up` the fallback up (1, 0, 0) is used.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("look-at target coincides with the camera position")
    forward = forward / norm
    return rotation_from_forward(forward, up)


def rotation_from_forward(forward, up=(0.0, 0.0, 1.0)):
    """World->camera quaternion with camera +Z along `forward`, +Y world-down."""
    forward = np.asarray(forward, dtype=np.float64)
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    return rotmat_to_quat(rot)


def fit_plane_xyz(xyz, cond_limit=1e12):
    """Least-squares plane z = a x + b y + c through an (N, 3) array.

    Returns a Plane with the normal oriented +Z. Raises DegenerateFitError
    when the normal equations are ill-conditioned (collinear or near-vertical
    data).
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    if xyz.ndim != 2 or xyz.shape[1] != 3 or xyz.shape[0] < 3:
        raise DegenerateFitError("plane fit needs at least 3 points")
    g = np.column_stack([xyz[:, 0], xyz[:, 1], np.ones(len(xyz))])
    gtg = g.T @ g
    if not np.isfinite(gtg).all() or np.linalg.cond(gtg) > cond_limit:
        raise DegenerateFitError("plane fit is degenerate (collinear or vertical data)")
    (a, b, c), _, rank, _ = np.linalg.lstsq(g, xyz[:, 2], rcond=None)
    if rank < 3:
        raise DegenerateFitError("plane fit is rank deficient")
    normal = np.array([-a, -b, 1.0])
    scale = np.linalg.norm(normal)
    return Plane(normal / scale, c / scale)


def estimate_ground_height(points, fraction=0.05, up_axis=2):
    """Median up-coordinate of the lowest `fraction` of points."""
    if not points:
        raise EmptyInputError("cannot estimate ground height without points")
    ups = np.sort(positions_of(points)[:, up_axis])
    n = max(1, int(math.ceil(fraction * len(ups))))
    return float(np.median(ups[:n]))


def align_to_ground(scene):
    """Rotate a scene so the plane fit to its lowest 5% of points faces +Z.

    Returns a new SceneModel; the input is untouched. Rotation is about the
    world origin, so ground height may change but stays consistent between
    points and cameras.
    """
    if not scene.points:
        raise EmptyInputError("ground alignment needs scene points")
    pos = positions_of(scene.points)
    order = np.argsort(pos[:, scene.up_axis], kind="stable")
    n = max(3, int(math.ceil(0.05 * len(order))))
    plane = fit_plane_xyz(pos[order[:n]])
    axis = np.cross(plane.normal, np.array([0.0, 0.0, 1.0]))
    sin_a = np.linalg.norm(axis)
    cos_a = float(plane.normal[2])
    if sin_a < 1e-12:
        rot_align = np.eye(3)
    else:
        axis = axis / sin_a
        k = np.array([
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ])
        rot_align = np.eye(3) + sin_a * k + (1.0 - cos_a) * (k @ k)

    cameras = {}
    for image_id, pose in scene.cameras.items():
        rot_new = pose.rotation() @ rot_align.T
        cameras[image_id] = CameraPose(
            image_id=pose.image_id,
            qvec=rotmat_to_quat(rot_new),
            tvec=pose.tvec,
            intrinsics_id=pose.intrinsics_id,
            name=pose.name,
            seq_index=pose.seq_index,
        )
    points = [
        Point3D(p.point_id, rot_align @ p.position, p.color, p.track)
        for p in scene.points
    ]
    return SceneModel(cameras, dict(scene.intrinsics), points, up_axis=2)
