"""Readers and writers for the SfM text-model subset and ASCII PLY clouds.

The text model follows the common three-file layout: `cameras.txt` with one
intrinsics row per camera, `images.txt` with a pose row followed by a 2D
observation row per image, and `points3D.txt` with one tracked point per row.
Lines starting with `#` are skipped. Only PINHOLE and SIMPLE_PINHOLE
intrinsics are accepted.
"""

import os

import numpy as np

from .errors import (
    CrossReferenceError,
    EmptyModelError,
    ParseError,
    TruncationError,
)
from .model import CameraPose, Intrinsics, Point3D, SceneModel, align_to_ground

_PINHOLE_PARAMS = {"PINHOLE": 4, "SIMPLE_PINHOLE": 3}


def _as_text(data):
    if isinstance(data, bytes):
        return data.decode("utf-8")
    if hasattr(data, "read"):
        data = data.read()
        if isinstance(data, bytes):
            return data.decode("utf-8")
        return data
    return data


def _floats(parts, line_no, what):
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ParseError(f"bad {what}", line=line_no) from None


def parse_cameras_text(data):
    """cameras.txt -> dict intrinsics_id -> Intrinsics."""
    intrinsics = {}
    for line_no, raw in enumerate(_as_text(data).splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 4:
            raise ParseError("camera row needs at least 4 fields", line=line_no)
        model = parts[1]
        if model not in _PINHOLE_PARAMS:
            raise ParseError(f"unsupported camera model {model!r}", line=line_no)
        if len(parts) != 4 + _PINHOLE_PARAMS[model]:
            raise ParseError(f"wrong parameter count for {model}", line=line_no)
        try:
            cam_id = int(parts[0])
            width, height = int(parts[2]), int(parts[3])
        except ValueError:
            raise ParseError("bad camera id or size", line=line_no) from None
        params = _floats(parts[4:], line_no, "camera parameters")
        if model == "SIMPLE_PINHOLE":
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            fx, fy, cx, cy = params
        if cam_id in intrinsics:
            raise ParseError(f"duplicate camera id {cam_id}", line=line_no)
        try:
            intrinsics[cam_id] = Intrinsics(fx, fy, cx, cy, width, height)
        except ValueError as exc:
            raise ParseError(str(exc), line=line_no) from None
    return intrinsics


def parse_images_text(data):
    """images.txt -> list of CameraPose in file order (seq_index = file order)."""
    poses = []
    seen = set()
    lines = _as_text(data).splitlines()
    i = 0
    while i < len(lines):
        line_no, line = i + 1, lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 10:
            raise ParseError(f"image row has {len(parts)} fields, expected 10", line=line_no)
        try:
            image_id = int(parts[0])
            camera_id = int(parts[8])
        except ValueError:
            raise ParseError("bad image or camera id", line=line_no) from None
        if image_id in seen:
            raise ParseError(f"duplicate image id {image_id}", line=line_no)
        seen.add(image_id)
        qvec = np.array(_floats(parts[1:5], line_no, "quaternion"))
        tvec = np.array(_floats(parts[5:8], line_no, "translation"))
        norm = np.linalg.norm(qvec)
        if norm < 1e-12 or not np.isfinite(norm):
            raise ParseError("degenerate quaternion", line=line_no)

        # The observations row is the next non-comment line; it may be empty.
        while i < len(lines) and lines[i].strip().startswith("#"):
            i += 1
        if i >= len(lines):
            raise ParseError("missing 2D observations row", line=line_no)
        obs = lines[i].split()
        if len(obs) % 3 != 0:
            raise ParseError("observations row length is not a multiple of 3", line=i + 1)
        _floats(obs, i + 1, "observations")
        i += 1

        poses.append(CameraPose(
            image_id=image_id,
            qvec=qvec / norm,
            tvec=tvec,
            intrinsics_id=camera_id,
            name=parts[9],
            seq_index=len(poses),
        ))
    return poses


def parse_points_text(data):
    """points3D.txt -> list of Point3D with deduplicated tracks."""
    points = []
    seen = set()
    for line_no, raw in enumerate(_as_text(data).splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 8 or (len(parts) - 8) % 2 != 0:
            raise ParseError("point row needs 8 fields plus (image, idx) pairs", line=line_no)
        try:
            point_id = int(parts[0])
            color = tuple(int(c) for c in parts[4:7])
            track_ids = [int(v) for v in parts[8::2]]
        except ValueError:
            raise ParseError("bad point fields", line=line_no) from None
        if point_id in seen:
            raise ParseError(f"duplicate point id {point_id}", line=line_no)
        seen.add(point_id)
        position = _floats(parts[1:4], line_no, "point position")
        _floats(parts[7:8], line_no, "point error")
        track = list(dict.fromkeys(track_ids))
        points.append(Point3D(point_id, np.array(position), color, track))
    return points


def parse_sfm_model(images_text, cameras_text, points_text, align_ground=False):
    """Assemble a SceneModel from the three text streams."""
    intrinsics = parse_cameras_text(cameras_text)
    poses = parse_images_text(images_text)
    if not poses:
        raise EmptyModelError("model has no images")
    points = parse_points_text(points_text)
    for pose in poses:
        if pose.intrinsics_id not in intrinsics:
            raise CrossReferenceError(
                f"image {pose.image_id} references unknown camera {pose.intrinsics_id}")
    known = set(p.image_id for p in poses)
    for point in points:
        for image_id in point.track:
            if image_id not in known:
                raise CrossReferenceError(
                    f"point {point.point_id} track references unknown image {image_id}")
    scene = SceneModel({p.image_id: p for p in poses}, intrinsics, points)
    if align_ground:
        scene = align_to_ground(scene)
    return scene


def _fmt(x):
    return repr(float(x))


def write_cameras_text(intrinsics):
    rows = ["# Camera list: CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]"]
    for cam_id in sorted(intrinsics):
        it = intrinsics[cam_id]
        rows.append(" ".join([
            str(cam_id), "PINHOLE", str(it.width), str(it.height),
            _fmt(it.fx), _fmt(it.fy), _fmt(it.cx), _fmt(it.cy),
        ]))
    return "\n".join(rows) + "\n"


def write_images_text(scene):
    rows = ["# Image list: IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME, then observations"]
    for pose in scene.poses_by_seq():
        rows.append(" ".join(
            [str(pose.image_id)]
            + [_fmt(v) for v in pose.qvec]
            + [_fmt(v) for v in pose.tvec]
            + [str(pose.intrinsics_id), pose.name]))
        rows.append("")  # observations are not retained
    return "\n".join(rows) + "\n"


def write_points_text(points):
    rows = ["# 3D point list: POINT3D_ID X Y Z R G B ERROR TRACK[] as (IMAGE_ID POINT2D_IDX)"]
    for p in points:
        track = " ".join(f"{i} 0" for i in p.track)
        base = " ".join([
            str(p.point_id),
            _fmt(p.position[0]), _fmt(p.position[1]), _fmt(p.position[2]),
            str(p.color[0]), str(p.color[1]), str(p.color[2]), "0",
        ])
        rows.append(base + (" " + track if track else ""))
    return "\n".join(rows) + "\n"


def write_sfm_model(scene):
    """SceneModel -> (images_text, cameras_text, points_text)."""
    return (
        write_images_text(scene),
        write_cameras_text(scene.intrinsics),
        write_points_text(scene.points),
    )


_FLOAT_PLY_TYPES = {"float", "float32", "float64", "double"}


def parse_ply(data):
    """ASCII PLY -> list of Point3D with empty tracks.

    Vertices need x, y, z float properties; red/green/blue are used when
    present and default to mid-gray otherwise.
    """
    lines = _as_text(data).splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("not a PLY file (missing 'ply' magic)", line=1)
    elements = []  # (name, count, [property names])
    fmt = None
    body_start = None
    for line_no, raw in enumerate(lines[1:], 2):
        line = raw.strip()
        if not line or line.startswith("comment"):
            continue
        parts = line.split()
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else ""
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError("malformed element declaration", line=line_no)
            try:
                elements.append([parts[1], int(parts[2]), []])
            except ValueError:
                raise ParseError("bad element count", line=line_no) from None
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element", line=line_no)
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], "list"))
            else:
                elements[-1][2].append((parts[-1], parts[1]))
        elif parts[0] == "end_header":
            body_start = line_no
            break
        else:
            raise ParseError(f"unknown header keyword {parts[0]!r}", line=line_no)
    if body_start is None:
        raise ParseError("missing end_header")
    if fmt != "ascii":
        raise ParseError(f"unsupported PLY format {fmt!r} (ASCII only)")

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise ParseError("PLY has no vertex element")
    names = [n for n, _ in vertex[2]]
    for req in ("x", "y", "z"):
        if req not in names:
            raise ParseError(f"vertex element is missing property {req!r}")
        ptype = dict(vertex[2])[req]
        if ptype not in _FLOAT_PLY_TYPES:
            raise ParseError(f"vertex property {req!r} must be a float type, got {ptype!r}")
    col = {n: names.index(n) for n in names}
    has_color = all(c in names for c in ("red", "green", "blue"))

    body = [l for l in lines[body_start:] if l.strip()]
    cursor = 0
    points = []
    for name, count, props in elements:
        if name != "vertex":
            if "list" in (t for _, t in props):
                raise ParseError(f"cannot skip list-property element {name!r}")
            cursor += count
            continue
        if cursor + count > len(body):
            raise TruncationError(
                f"vertex element declares {count} rows but the body has "
                f"{max(0, len(body) - cursor)}")
        for row in body[cursor:cursor + count]:
            parts = row.split()
            if len(parts) < len(names):
                raise TruncationError("vertex row has fewer columns than declared")
            try:
                pos = (float(parts[col["x"]]), float(parts[col["y"]]), float(parts[col["z"]]))
                if has_color:
                    color = (int(float(parts[col["red"]])),
                             int(float(parts[col["green"]])),
                             int(float(parts[col["blue"]])))
                else:
                    color = (128, 128, 128)
            except ValueError:
                raise ParseError("bad vertex row") from None
            points.append(Point3D(len(points), np.array(pos), color))
        cursor += count
    return points


def write_ply(points):
    """Point list -> ASCII PLY text with per-vertex colors."""
    rows = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for p in points:
        rows.append(" ".join([
            _fmt(p.position[0]), _fmt(p.position[1]), _fmt(p.position[2]),
            str(p.color[0]), str(p.color[1]), str(p.color[2]),
        ]))
    return "\n".join(rows) + "\n"


def load_scene_dir(path, align_ground=False):
    """Read cameras.txt / images.txt / points3D.txt from a directory."""
    def read(name):
        full = os.path.join(path, name)
        with open(full, "r", encoding="utf-8") as fh:
            return fh.read()

    return parse_sfm_model(
        read("images.txt"), read("cameras.txt"), read("points3D.txt"),
        align_ground=align_ground)


def save_scene_dir(scene, path):
    os.makedirs(path, exist_ok=True)
    images_text, cameras_text, points_text = write_sfm_model(scene)
    for name, text in [("images.txt", images_text),
                       ("cameras.txt", cameras_text),
                       ("points3D.txt", points_text)]:
        with open(os.path.join(path, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
