"""Synthetic labelled rooms, reflections, augmentation, sampling and CSV I/O.

Rooms are axis-aligned boxes ``[0, W] x [0, D] x [0, H]`` with points on the
floor, ceiling and four walls, plus box-shaped (``object_A``) and spherical
(``object_B``) objects resting on the floor.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import InvalidInputError
from .linalg import apply_transform, axis_flip, householder

logger = logging.getLogger(__name__)

CLASSES = ("floor", "ceiling", "wall", "object_A", "object_B")
FLOOR, CEILING, WALL, OBJECT_A, OBJECT_B = range(5)


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    extents: tuple[float, float, float] = (5.0, 4.0, 3.0)
    n_objects: tuple[int, int] = (1, 3)
    symmetry: str = "none"  # or "mirror-paired"
    n_points: int = 4096
    classes: tuple[str, ...] = CLASSES

    def __post_init__(self):
        ext = tuple(float(e) for e in self.extents)
        if len(ext) != 3 or not all(np.isfinite(e) and e > 0 for e in ext):
            raise InvalidInputError("room extents must be three positive numbers")
        lo, hi = self.n_objects
        if lo < 0 or hi < lo:
            raise InvalidInputError("object count range must satisfy 0 <= lo <= hi")
        if self.symmetry not in ("none", "mirror-paired"):
            raise InvalidInputError(f"unknown symmetry mode {self.symmetry!r}")
        if len(self.classes) < 2:
            raise InvalidInputError("need at least two classes")
        if self.n_points < 1:
            raise InvalidInputError("n_points must be positive")
        object.__setattr__(self, "extents", ext)


# --------------------------------------------------------------------------
# room generation


def _rect(rng, n, u_range, v_range, fixed_axis, fixed_value):
    pts = np.empty((n, 3))
    free = [a for a in range(3) if a != fixed_axis]
    pts[:, free[0]] = rng.uniform(*u_range, n)
    pts[:, free[1]] = rng.uniform(*v_range, n)
    pts[:, fixed_axis] = fixed_value
    return pts


def _box_surface(rng, n, lo, hi):
    size = hi - lo
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]]).repeat(2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(lo, hi, (n, 3))
    axis = face // 2
    side = face % 2
    pts[np.arange(n), axis] = np.where(side == 0, lo[axis], hi[axis])
    return pts


def _sphere_surface(rng, n, center, radius):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return center + radius * v


def _place_objects(rng, count, W, D, x_max):
    """Footprints for ``count`` objects inside ``[0, x_max] x [0, D]``."""
    objs = []
    for _ in range(count):
        kind = OBJECT_A if rng.random() < 0.5 else OBJECT_B
        if kind == OBJECT_A:
            size = rng.uniform([0.6, 0.6, 0.5], [1.5, 1.5, 1.4])
            x0 = rng.uniform(0.2, max(0.2, x_max - size[0] - 0.2))
            y0 = rng.uniform(0.2, max(0.2, D - size[1] - 0.2))
            lo = np.array([x0, y0, 0.0])
            objs.append((kind, lo, lo + size))
        else:
            r = rng.uniform(0.4, 0.8)
            cx = rng.uniform(0.2 + r, max(0.2 + r, x_max - r - 0.2))
            cy = rng.uniform(0.2 + r, max(0.2 + r, D - r - 0.2))
            objs.append((kind, np.array([cx, cy, r]), r))
    return objs


def _room_points(rng, n, W, D, H, x_max, objects):
    """Sample ``n`` labelled points from the part of the room with ``x <= x_max``."""
    n_obj = n * 3 // 10 if objects else 0
    n_plane = n - n_obj
    # floor, ceiling, walls split by area within the sampled slab
    walls = [
        ((0, x_max), (0, H), 1, 0.0),  # y = 0
        ((0, x_max), (0, H), 1, D),  # y = D
        ((0, D), (0, H), 0, 0.0),  # x = 0
    ]
    if x_max >= W:
        walls.append(((0, D), (0, H), 0, W))
    areas = [x_max * D, x_max * D] + [(u[1] - u[0]) * (v[1] - v[0]) for u, v, _, _ in walls]
    counts = rng.multinomial(n_plane, np.array(areas) / sum(areas))
    parts = [
        (_rect(rng, counts[0], (0, x_max), (0, D), 2, 0.0), FLOOR),
        (_rect(rng, counts[1], (0, x_max), (0, D), 2, H), CEILING),
    ]
    for c, (u, v, ax, val) in zip(counts[2:], walls):
        parts.append((_rect(rng, c, u, v, ax, val), WALL))
    if objects:
        per_obj = rng.multinomial(n_obj, np.full(len(objects), 1.0 / len(objects)))
        for (kind, a, b), c in zip(objects, per_obj):
            if kind == OBJECT_A:
                parts.append((_box_surface(rng, c, a, b), OBJECT_A))
            else:
                parts.append((_sphere_surface(rng, c, a, b), OBJECT_B))
    pos = np.concatenate([p for p, _ in parts])
    lab = np.concatenate([np.full(len(p), k) for p, k in parts])
    return pos, lab


def generate_room(spec: SceneSpec) -> PointCloud:
    """Sample a labelled room; identical specs give identical clouds.

    In ``mirror-paired`` mode one half of the room (``x <= W/2``) is sampled
    and mirrored across the mid-plane ``x = W/2``, so every object has a twin
    and the labelled point set is symmetric.
    """
    rng = np.random.default_rng(spec.seed)
    W, D, H = spec.extents
    count = int(rng.integers(spec.n_objects[0], spec.n_objects[1] + 1))
    if spec.symmetry == "mirror-paired":
        half = spec.n_points // 2
        objects = _place_objects(rng, count, W, D, W / 2.0)
        pos, lab = _room_points(rng, half, W, D, H, W / 2.0, objects)
        mirrored = pos.copy()
        mirrored[:, 0] = W - mirrored[:, 0]
        pos = np.concatenate([pos, mirrored])
        lab = np.concatenate([lab, lab])
    else:
        objects = _place_objects(rng, count, W, D, W)
        pos, lab = _room_points(rng, spec.n_points, W, D, H, W, objects)
    return PointCloud(pos, labels=lab)


def make_scene_specs(n_rooms: int, seed: int, extents=(5.0, 4.0, 3.0), extent_jitter=0.2,
                     n_objects=(1, 3), symmetry="none", n_points=4096) -> list[SceneSpec]:
    """Room specs with extents drawn uniformly within ``+-extent_jitter`` (relative)."""
    rng = np.random.default_rng(seed)
    base = np.asarray(extents, dtype=np.float64)
    specs = []
    for _ in range(n_rooms):
        ext = base * rng.uniform(1 - extent_jitter, 1 + extent_jitter, 3)
        specs.append(SceneSpec(seed=int(rng.integers(2**31)), extents=tuple(ext),
                               n_objects=tuple(n_objects), symmetry=symmetry, n_points=n_points))
    return specs


# --------------------------------------------------------------------------
# sampling


def _voxel_representatives(pos, pitch):
    cells = np.floor((pos - pos.min(axis=0)) / pitch).astype(np.int64)
    dims = cells.max(axis=0) + 1
    keys = np.ravel_multi_index(cells.T, dims) if np.prod(dims.astype(float)) < 2**62 else None
    if keys is None:
        _, first = np.unique(cells, axis=0, return_index=True)
    else:
        _, first = np.unique(keys, return_index=True)
    return np.sort(first)


def farthest_point_indices(pos, n) -> np.ndarray:
    """Greedy farthest-point selection starting from row 0."""
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = 0
    dist = np.sum((pos - pos[0]) ** 2, axis=1)
    for i in range(1, n):
        chosen[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.sum((pos - pos[chosen[i]]) ** 2, axis=1))
    return chosen


def grid_sample(cloud: PointCloud, n: int) -> PointCloud:
    """Reduce ``cloud`` to exactly ``n`` points.

    A voxel grid keeps the first point of every occupied cell. The pitch is
    the coarsest (found by bisection) that still leaves at least ``n``
    cells. Farthest-point selection then picks ``n`` of the survivors.
    Clouds with fewer than ``n`` distinct points are padded by sampling
    with replacement, with a warning.
    """
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    pos = cloud.positions
    if len(cloud) == 0:
        raise InvalidInputError("cannot sample an empty cloud")
    _, uniq = np.unique(pos, axis=0, return_index=True)
    if len(uniq) < n:
        logger.warning("cloud has %d distinct points < %d; sampling with replacement", len(uniq), n)
        uniq = np.sort(uniq)
        rng = np.random.default_rng(len(cloud))
        return cloud.take(np.concatenate([uniq, rng.choice(uniq, n - len(uniq))]))
    span = float(np.max(np.ptp(pos, axis=0)))
    lo, hi = 0.0, max(span, 1e-12) * 2.0
    best = np.arange(len(cloud))
    if span > 0:
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            reps = _voxel_representatives(pos, mid)
            if len(reps) >= n:
                best, lo = reps, mid
            else:
                hi = mid
    if len(best) > n:
        best = best[farthest_point_indices(pos[best], n)]
    return cloud.take(best)


# --------------------------------------------------------------------------
# transforms


def reflect(cloud: PointCloud, mode) -> PointCloud:
    """Reflect a cloud; labels and features are unchanged.

    ``mode`` is an axis string (``"x"``, ``"y"``, ``"z"``, ``"xyz"``), which
    negates those coordinates about the origin, or a plane normal, which
    reflects across the plane through the cloud centroid.
    """
    if isinstance(mode, str):
        return apply_transform(cloud, axis_flip(mode))
    F = householder(mode)
    c = cloud.positions.mean(axis=0)
    return cloud.with_positions((cloud.positions - c) @ F.T + c)


def augment(cloud: PointCloud, scale_range=(0.9, 1.1), jitter_sigma=0.01, jitter_clip=0.05,
            seed=None) -> PointCloud:
    """Random isotropic scaling plus clipped Gaussian jitter on positions."""
    rng = np.random.default_rng(seed)
    pos = cloud.positions
    if scale_range is not None:
        pos = pos * rng.uniform(*scale_range)
    if jitter_sigma:
        noise = np.clip(rng.normal(0.0, jitter_sigma, pos.shape), -jitter_clip, jitter_clip)
        pos = pos + noise
    return cloud.with_positions(pos)


# --------------------------------------------------------------------------
# CSV I/O


def save_cloud(cloud: PointCloud, path) -> None:
    """Write ``x,y,z[,f1..fc][,label]`` rows with 17 significant digits."""
    header = ["x", "y", "z"] + [f"f{i + 1}" for i in range(cloud.n_features)]
    if cloud.labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        data = cloud.data
        for i in range(len(cloud)):
            row = ["%.17g" % v for v in data[i]]
            if cloud.labels is not None:
                row.append(str(int(cloud.labels[i])))
            fh.write(",".join(row) + "\n")


def load_cloud(path) -> PointCloud:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[:3] != ["x", "y", "z"]:
        raise InvalidInputError(f"{path}: header must start with x,y,z")
    has_label = header[-1] == "label"
    n_feat = len(header) - 3 - int(has_label)
    if rows:
        arr = np.array([[float(v) for v in r[:3 + n_feat]] for r in rows])
    else:
        arr = np.zeros((0, 3 + n_feat))
    labels = np.array([int(r[-1]) for r in rows], dtype=np.int64) if has_label else None
    return PointCloud(arr[:, :3], arr[:, 3:], labels)


def save_dataset(clouds, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, c in enumerate(clouds):
        p = directory / f"cloud_{i:04d}.csv"
        save_cloud(c, p)
        paths.append(p)
    return paths


def load_dataset(directory) -> list[PointCloud]:
    paths = sorted(Path(directory).glob("cloud_*.csv"))
    if not paths:
        raise InvalidInputError(f"no clouds found in {directory}")
    return [load_cloud(p) for p in paths]


def synthetic_split(n_train: int, n_test: int, seed: int, n_points: int = 512,
                    raw_points: int = 4096, **scene_kwargs):
    """Generate, grid-sample and split synthetic rooms into train and test lists."""
    specs = make_scene_specs(n_train + n_test, seed, n_points=raw_points, **scene_kwargs)
    clouds = [grid_sample(generate_room(s), n_points) for s in specs]
    return clouds[:n_train], clouds[n_train:]


__all__ = [
    "CLASSES", "PointCloud", "SceneSpec", "generate_room", "make_scene_specs", "grid_sample",
    "reflect", "augment", "save_cloud", "load_cloud", "save_dataset", "load_dataset",
    "synthetic_split", "farthest_point_indices",
]
