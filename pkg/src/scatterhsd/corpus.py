"""Procedural ground-truth shapes and point/mesh file I/O.

Eight built-in classes, each sampled uniformly by surface area. The two
composites (mug, hammer) carry part labels 0/1 for the segmentation path.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import InvalidInput, ParseError
from .geometry import PointCloud, normalize

CLASS_NAMES = ("sphere", "box", "cylinder", "torus", "cone", "capsule", "mug", "hammer")
COMPOSITE_CLASSES = (6, 7)
NUM_PARTS = 2
DENSE_POINTS = 10_000

# (low, high) for every shape parameter; gen_split draws uniformly inside.
PARAM_RANGES: Dict[str, Dict[str, Tuple[float, float]]] = {
    "sphere": {"radius": (0.8, 1.2)},
    "box": {"ex": (0.5, 1.5), "ey": (0.5, 1.5), "ez": (0.5, 1.5)},
    "cylinder": {"radius": (0.3, 0.7), "height": (0.8, 2.0)},
    "torus": {"major": (0.7, 1.0), "minor": (0.15, 0.4)},
    "cone": {"radius": (0.4, 0.8), "height": (0.8, 1.8)},
    "capsule": {"radius": (0.3, 0.6), "height": (0.5, 1.5)},
    "mug": {"radius": (0.4, 0.6), "height": (0.8, 1.3),
            "handle_major": (0.2, 0.35), "handle_minor": (0.04, 0.08)},
    "hammer": {"head_x": (0.6, 1.0), "head_y": (0.2, 0.35), "head_z": (0.2, 0.35),
               "handle_radius": (0.06, 0.12), "handle_length": (1.2, 2.0)},
}


@dataclass(frozen=True)
class ShapeSpec:
    class_id: int
    params: Dict[str, float] = field(default_factory=dict)
    rng_seed: int = 0

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.class_id]


@dataclass(frozen=True)
class DatasetSplit:
    train: List[ShapeSpec]
    test: List[ShapeSpec]


def default_params(class_id: int) -> Dict[str, float]:
    ranges = PARAM_RANGES[CLASS_NAMES[class_id]]
    params = {k: 0.5 * (lo + hi) for k, (lo, hi) in ranges.items()}
    params["yaw"] = 0.0
    return params


def sample_params(class_id: int, rng: np.random.Generator) -> Dict[str, float]:
    ranges = PARAM_RANGES[CLASS_NAMES[class_id]]
    params = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in ranges.items()}
    params["yaw"] = float(rng.uniform(0.0, 2.0 * math.pi))
    return params


# surface samplers (un-normalized, z up) ------------------------------------

def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sphere(rng, n, radius):
    # antipodal pairs (plus one zero-sum triple for odd n) put the sample
    # centroid exactly on the sphere center
    half = n // 2 if n % 2 == 0 else (n - 3) // 2
    v = _unit_vectors(rng, half)
    parts = [v, -v]
    if n % 2:
        a = _unit_vectors(rng, 1)[0]
        b = np.cross(a, _unit_vectors(rng, 1)[0])
        b /= np.linalg.norm(b)
        c = np.cross(a, b)
        ang = np.array([0.0, 2 * math.pi / 3, 4 * math.pi / 3])
        parts.append(np.cos(ang)[:, None] * b + np.sin(ang)[:, None] * c)
    return radius * np.concatenate(parts)


def _box(rng, n, ex, ey, ez):
    ext = np.array([ex, ey, ez])
    # faces 0..5: (+x, -x, +y, -y, +z, -z)
    axis_area = np.array([ey * ez, ex * ez, ex * ey])
    probs = np.repeat(axis_area, 2) / (2 * axis_area.sum())
    face = rng.choice(6, size=n, p=probs)
    pts = (rng.random((n, 3)) - 0.5) * ext
    axis = face // 2
    sign = np.where(face % 2 == 0, 0.5, -0.5)
    pts[np.arange(n), axis] = sign * ext[axis]
    return pts


def _disk(rng, n, radius, z):
    r = radius * np.sqrt(rng.random(n))
    t = rng.uniform(0, 2 * math.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t), np.full(n, z)], axis=1)


def _tube(rng, n, radius, z0, z1):
    t = rng.uniform(0, 2 * math.pi, n)
    return np.stack([radius * np.cos(t), radius * np.sin(t), rng.uniform(z0, z1, n)], axis=1)


def _split_counts(rng, n, areas):
    areas = np.asarray(areas, dtype=float)
    return rng.multinomial(n, areas / areas.sum())


def _cylinder(rng, n, radius, height):
    c = _split_counts(rng, n, [2 * math.pi * radius * height, math.pi * radius ** 2,
                               math.pi * radius ** 2])
    return np.concatenate([_tube(rng, c[0], radius, -height / 2, height / 2),
                           _disk(rng, c[1], radius, height / 2),
                           _disk(rng, c[2], radius, -height / 2)])


def _torus_patch(rng, n, major, minor, phi_lo=0.0, phi_hi=2 * math.pi):
    # tube angle density is proportional to (major + minor*cos(theta))
    theta = np.empty(0)
    while theta.size < n:
        t = rng.uniform(0, 2 * math.pi, 2 * n + 8)
        keep = rng.random(t.size) * (major + minor) < major + minor * np.cos(t)
        theta = np.concatenate([theta, t[keep]])
    theta = theta[:n]
    phi = rng.uniform(phi_lo, phi_hi, n)
    ring = major + minor * np.cos(theta)
    return np.stack([ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)], axis=1)


def _torus(rng, n, major, minor):
    return _torus_patch(rng, n, major, minor)


def _cone(rng, n, radius, height):
    slant = math.hypot(radius, height)
    c = _split_counts(rng, n, [math.pi * radius * slant, math.pi * radius ** 2])
    s = np.sqrt(rng.random(c[0]))
    t = rng.uniform(0, 2 * math.pi, c[0])
    lateral = np.stack([radius * s * np.cos(t), radius * s * np.sin(t), height * (1 - s)], axis=1)
    return np.concatenate([lateral, _disk(rng, c[1], radius, 0.0)])


def _capsule(rng, n, radius, height):
    c = _split_counts(rng, n, [2 * math.pi * radius * height, 4 * math.pi * radius ** 2])
    caps = _sphere(rng, c[1], radius) if c[1] >= 2 else radius * _unit_vectors(rng, c[1])
    caps = caps + np.where(caps[:, 2:3] >= 0, height / 2, -height / 2) * np.array([0, 0, 1.0])
    return np.concatenate([_tube(rng, c[0], radius, -height / 2, height / 2), caps])


def _mug(rng, n, radius, height, handle_major, handle_minor):
    body_area = [2 * math.pi * radius * height, math.pi * radius ** 2]
    handle_area = math.pi * 2 * math.pi * handle_major * handle_minor
    c = _split_counts(rng, n, body_area + [handle_area])
    body = np.concatenate([_tube(rng, c[0], radius, 0.0, height), _disk(rng, c[1], radius, 0.0)])
    h = _torus_patch(rng, c[2], handle_major, handle_minor, -math.pi / 2, math.pi / 2)
    # torus patch lies in the xy plane; stand it up into xz and attach at the side
    handle = np.stack([h[:, 0] + radius, h[:, 2], h[:, 1] + height / 2], axis=1)
    labels = np.concatenate([np.zeros(c[0] + c[1], int), np.ones(c[2], int)])
    return np.concatenate([body, handle]), labels


def _hammer(rng, n, head_x, head_y, head_z, handle_radius, handle_length):
    head_area = 2 * (head_x * head_y + head_y * head_z + head_x * head_z)
    c = _split_counts(rng, n, [head_area, 2 * math.pi * handle_radius * handle_length,
                               math.pi * handle_radius ** 2])
    head = _box(rng, c[0], head_x, head_y, head_z) + np.array([0, 0, head_z / 2])
    handle = np.concatenate([_tube(rng, c[1], handle_radius, -handle_length, 0.0),
                             _disk(rng, c[2], handle_radius, -handle_length)])
    labels = np.concatenate([np.zeros(c[0], int), np.ones(c[1] + c[2], int)])
    return np.concatenate([head, handle]), labels


_SAMPLERS = {
    "sphere": _sphere, "box": _box, "cylinder": _cylinder, "torus": _torus,
    "cone": _cone, "capsule": _capsule, "mug": _mug, "hammer": _hammer,
}


def gen_shape(spec: ShapeSpec, n: int) -> PointCloud:
    """Sample ``n`` surface points of ``spec``, rotated by its yaw and normalized."""
    if not 0 <= spec.class_id < len(CLASS_NAMES):
        raise InvalidInput(f"unknown class id {spec.class_id}")
    if n < 8:
        raise InvalidInput(f"need at least 8 points, got {n}")
    name = CLASS_NAMES[spec.class_id]
    params = default_params(spec.class_id)
    unknown = set(spec.params) - set(params)
    if unknown:
        raise InvalidInput(f"unknown parameters for {name}: {sorted(unknown)}")
    params.update(spec.params)
    yaw = params.pop("yaw")
    rng = np.random.default_rng(spec.rng_seed)
    out = _SAMPLERS[name](rng, n, **params)
    pts, labels = out if isinstance(out, tuple) else (out, None)
    if yaw:
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        pts = pts @ rot.T
    return normalize(PointCloud(pts, labels))


def gen_split(classes: int, per_class: int, seed: int) -> DatasetSplit:
    """Deterministic 80/20 train/test split with distinct seeds per shape."""
    if not 1 <= classes <= len(CLASS_NAMES):
        raise InvalidInput(f"classes must be in [1, {len(CLASS_NAMES)}], got {classes}")
    if per_class < 1:
        raise InvalidInput("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    n_train = int(round(0.8 * per_class))
    seeds = rng.choice(2 ** 31 - 1, size=classes * per_class, replace=False)
    train, test = [], []
    for c in range(classes):
        for i in range(per_class):
            spec = ShapeSpec(c, sample_params(c, rng), int(seeds[c * per_class + i]))
            (train if i < n_train else test).append(spec)
    return DatasetSplit(train, test)


# mesh sampling and file formats --------------------------------------------

def sample_mesh(vertices: np.ndarray, faces: np.ndarray, n: int = DENSE_POINTS,
                seed: int = 0) -> np.ndarray:
    """Area-weighted uniform samples on a triangle mesh."""
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    if areas.sum() <= 0:
        raise InvalidInput("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(faces), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    a, b, c = tri[pick, 0], tri[pick, 1], tri[pick, 2]
    return (1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c


def _data_lines(fh):
    for lineno, raw in enumerate(fh, start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _floats(tokens, lineno, path):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected numbers, got {' '.join(tokens)!r}", lineno, path) from None


def _read_xyz(path) -> PointCloud:
    pts, labels = [], []
    with open(path) as fh:
        for lineno, line in _data_lines(fh):
            tok = line.split()
            if len(tok) not in (3, 4):
                raise ParseError(f"expected 3 or 4 columns, got {len(tok)}", lineno, path)
            vals = _floats(tok, lineno, path)
            pts.append(vals[:3])
            if len(tok) == 4:
                labels.append(int(vals[3]))
            elif labels:
                raise ParseError("label column missing", lineno, path)
    if not pts:
        raise ParseError("no points", None, path)
    if labels and len(labels) != len(pts):
        raise ParseError("label column present on only some lines", None, path)
    return PointCloud(np.array(pts), np.array(labels) if labels else None)


def _read_ply(path) -> PointCloud:
    with open(path) as fh:
        lines = list(enumerate(fh, start=1))
    if not lines or lines[0][1].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1, path)
    elements: List[Tuple[str, int, List[str]]] = []
    body_start = None
    for lineno, raw in lines[1:]:
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise ParseError("only ascii PLY is supported", lineno, path)
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise ParseError("bad element line", lineno, path)
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before element", lineno, path)
            elements[-1][2].append(tok[-1])
        elif tok[0] == "end_header":
            body_start = lineno
            break
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", lineno, path)
    if body_start is None:
        raise ParseError("missing end_header", None, path)
    body = [(ln, raw) for ln, raw in lines[body_start:] if raw.strip()]
    pos = 0
    for name, count, props in elements:
        if name != "vertex":
            pos += count
            continue
        if not all(p in props for p in "xyz"):
            raise ParseError("vertex element lacks x/y/z", None, path)
        ix = [props.index(p) for p in "xyz"]
        il = props.index("label") if "label" in props else None
        pts, labels = [], []
        for j in range(count):
            if pos + j >= len(body):
                last = body[-1][0] if body else body_start
                raise ParseError(f"truncated: expected {count} vertices, found {j}",
                                 last + 1, path)
            ln, raw = body[pos + j]
            tok = raw.split()
            if len(tok) != len(props):
                raise ParseError(f"expected {len(props)} values, got {len(tok)}", ln, path)
            vals = _floats(tok, ln, path)
            pts.append([vals[i] for i in ix])
            if il is not None:
                labels.append(int(vals[il]))
        return PointCloud(np.array(pts).reshape(-1, 3), np.array(labels) if labels else None)
    raise ParseError("no vertex element", None, path)


def _read_off(path, n: int = DENSE_POINTS, seed: int = 0) -> PointCloud:
    with open(path) as fh:
        data = list(_data_lines(fh))
    if not data or not data[0][1].startswith("OFF"):
        raise ParseError("missing 'OFF' magic", data[0][0] if data else 1, path)
    first = data[0][1][3:].split()
    rest = data[1:]
    if first:
        counts_ln, counts = data[0][0], first
    else:
        if not rest:
            raise ParseError("missing counts line", None, path)
        counts_ln, counts = rest[0][0], rest[0][1].split()
        rest = rest[1:]
    if len(counts) < 2 or not all(c.isdigit() for c in counts[:3]):
        raise ParseError("bad counts line", counts_ln, path)
    nv, nf = int(counts[0]), int(counts[1])
    if len(rest) < nv + nf:
        last = rest[-1][0] if rest else counts_ln
        raise ParseError(f"truncated: expected {nv} vertices and {nf} faces", last + 1, path)
    verts = []
    for ln, line in rest[:nv]:
        tok = line.split()
        if len(tok) < 3:
            raise ParseError("vertex needs 3 coordinates", ln, path)
        verts.append(_floats(tok[:3], ln, path))
    faces = []
    for ln, line in rest[nv:nv + nf]:
        tok = line.split()
        try:
            k = int(tok[0])
            idx = [int(t) for t in tok[1:1 + k]]
        except (ValueError, IndexError):
            raise ParseError("bad face line", ln, path) from None
        if k < 3 or len(idx) != k or min(idx) < 0 or max(idx) >= nv:
            raise ParseError("bad face line", ln, path)
        faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, k - 1))
    if not faces:
        raise ParseError("mesh has no faces", None, path)
    return PointCloud(sample_mesh(np.array(verts), np.array(faces), n, seed))


def load_cloud(path, format: Optional[str] = None) -> PointCloud:
    """Read an ``xyz``, ascii ``ply`` or ``off`` file (format from the suffix by default).

    OFF meshes are converted to 10,000 area-weighted surface samples with a fixed
    seed; the other formats are read verbatim.
    """
    fmt = (format or os.path.splitext(str(path))[1].lstrip(".")).lower()
    if fmt in ("xyz", "txt", "pts"):
        return _read_xyz(path)
    if fmt in ("ply", "ply_ascii"):
        return _read_ply(path)
    if fmt == "off":
        return _read_off(path)
    raise InvalidInput(f"unsupported format {fmt!r}")


def save_cloud(path, cloud: PointCloud, format: Optional[str] = None):
    fmt = (format or os.path.splitext(str(path))[1].lstrip(".")).lower()
    pts = cloud.points
    lab = cloud.labels
    with open(path, "w") as fh:
        if fmt in ("ply", "ply_ascii"):
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(pts)}\n")
            fh.write("property double x\nproperty double y\nproperty double z\n")
            if lab is not None:
                fh.write("property int label\n")
            fh.write("end_header\n")
        elif fmt not in ("xyz", "txt", "pts"):
            raise InvalidInput(f"unsupported format {fmt!r}")
        # python floats repr to the shortest round-tripping decimal
        for i, p in enumerate(pts.tolist()):
            row = f"{p[0]!r} {p[1]!r} {p[2]!r}"
            if lab is not None:
                row += f" {int(lab[i])}"
            fh.write(row + "\n")


MANIFEST_FIELDS = ("split", "class_id", "class_name", "rng_seed", "params", "path")


def write_manifest(path, rows: List[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def read_manifest(path) -> Tuple[DatasetSplit, Dict[int, str]]:
    """Parse a corpus manifest into a split plus ``{rng_seed: cloud path}``."""
    train, test, paths = [], [], {}
    base = os.path.dirname(os.path.abspath(path))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(MANIFEST_FIELDS) - set(reader.fieldnames):
            raise ParseError("manifest header must contain " + ",".join(MANIFEST_FIELDS),
                             1, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                spec = ShapeSpec(int(row["class_id"]), json.loads(row["params"]),
                                 int(row["rng_seed"]))
            except (ValueError, TypeError) as exc:
                raise ParseError(f"bad manifest row: {exc}", lineno, path) from None
            if row["split"] not in ("train", "test"):
                raise ParseError(f"unknown split {row['split']!r}", lineno, path)
            (train if row["split"] == "train" else test).append(spec)
            paths[spec.rng_seed] = os.path.join(base, row["path"])
    return DatasetSplit(train, test), paths
