"""Synthetic labeled shapes, plain-text point-cloud I/O, and dataset
manifests.

Four analytically distinct primitives (sphere, cube, cylinder, cone) give
classes whose surface normals and curvature are strongly discriminative,
which is exactly what geometry-aware inputs should exploit. Shapes symmetric
through the origin are sampled in antipodal pairs, keeping noiseless spheres
on an exact unit radius after centering.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .geometry import PointCloud
from .surface import SurfaceDescriptor

SHAPE_KINDS = ("sphere", "cube", "cylinder", "cone")


class XyzFormatError(ValueError):
    """Malformed point-cloud text file; message carries the line number."""


@dataclass
class ShapeSpec:
    kind: str
    n_points: int = 1024
    noise_sigma: float = 0.0
    seed: int = 0
    # per-axis stretches drawn log-uniformly per sample; spheres ignore them.
    # Boxes, elliptic cylinders, and elliptic cones of varying proportions
    # blur the classes' global coordinate signatures while flat-versus-curved
    # surface character stays intact, so geometric inputs keep their edge
    # over raw coordinates.
    aspect_range: tuple = (0.6, 2.5)

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}; choose from {SHAPE_KINDS}")
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        lo, hi = self.aspect_range
        if not 0 < lo <= hi:
            raise ValueError("aspect_range must satisfy 0 < lo <= hi")


def _antithetic(half_sampler, n, gen):
    half = half_sampler((n + 1) // 2, gen)
    pts = np.concatenate([half, -half])[:n]
    return pts


def _sphere_half(m, gen):
    d = gen.normal(size=(m, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _cube_half(m, gen):
    axis = gen.integers(3, size=m)
    side = np.where(gen.integers(2, size=m) == 0, -1.0, 1.0)
    uv = gen.uniform(-1.0, 1.0, size=(m, 2))
    pts = np.empty((m, 3))
    for a in range(3):
        rows = axis == a
        others = [o for o in range(3) if o != a]
        pts[rows, a] = side[rows]
        pts[np.ix_(rows, others)] = uv[rows]
    return pts


def _cylinder_half(m, gen):
    # radius 1, height 2: lateral area 4*pi vs 2*pi for both caps
    lateral = gen.random(m) < 2.0 / 3.0
    theta = gen.uniform(0.0, 2.0 * np.pi, size=m)
    pts = np.empty((m, 3))
    z = gen.uniform(-1.0, 1.0, size=m)
    r_cap = np.sqrt(gen.random(m))
    pts[:, 0] = np.where(lateral, np.cos(theta), r_cap * np.cos(theta))
    pts[:, 1] = np.where(lateral, np.sin(theta), r_cap * np.sin(theta))
    pts[:, 2] = np.where(lateral, z, np.where(gen.random(m) < 0.5, -1.0, 1.0))
    return pts


def _cone(n, gen):
    # apex (0,0,1), unit base circle at z=-1; lateral/base areas pi*sqrt(5) / pi
    lateral_frac = np.sqrt(5.0) / (np.sqrt(5.0) + 1.0)
    lateral = gen.random(n) < lateral_frac
    theta = gen.uniform(0.0, 2.0 * np.pi, size=n)
    s = np.sqrt(gen.random(n))  # radial fraction, area-uniform
    pts = np.empty((n, 3))
    pts[:, 0] = s * np.cos(theta)
    pts[:, 1] = s * np.sin(theta)
    pts[:, 2] = np.where(lateral, 1.0 - 2.0 * s, -1.0)
    return pts


def generate_shape(spec: ShapeSpec, return_transform: bool = False):
    """Sample the primitive's surface, jitter, spin about the gravity axis,
    then center and scale the cloud to the unit sphere."""
    gen = rng.generator(spec.seed, "shape", spec.kind)
    n = spec.n_points
    if spec.kind == "sphere":
        pts = _antithetic(_sphere_half, n, gen)
    elif spec.kind == "cube":
        pts = _antithetic(_cube_half, n, gen)
    elif spec.kind == "cylinder":
        pts = _antithetic(_cylinder_half, n, gen)
    else:
        pts = _cone(n, gen)

    lo, hi = spec.aspect_range
    if spec.kind == "sphere":
        aspect = np.ones(3)
    else:
        aspect = np.exp(gen.uniform(np.log(lo), np.log(hi), size=3))
    pts = pts * aspect
    if spec.noise_sigma > 0:
        pts = pts + gen.normal(0.0, spec.noise_sigma, size=pts.shape)
    angle = float(gen.uniform(0.0, 2.0 * np.pi))
    pts = rotate_z(pts, angle)
    center = pts.mean(axis=0)
    pts = pts - center
    scale = float(np.linalg.norm(pts, axis=1).max())
    pts = pts / scale
    cloud = PointCloud(pts)
    if return_transform:
        return cloud, {"angle": angle, "center": center, "scale": scale, "aspect": aspect}
    return cloud


def rotate_z(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return points @ rot.T


# -- plain-text I/O -----------------------------------------------------------


def write_xyz(path, cloud: PointCloud, descriptor: SurfaceDescriptor | None = None) -> None:
    """Rows of "x y z" or "x y z nx ny nz sigma", 9 significant digits."""
    lines = []
    if descriptor is not None:
        cols = np.concatenate([cloud.positions, descriptor.normals, descriptor.curvature], axis=1)
    else:
        cols = cloud.positions
    for row in cols:
        lines.append(" ".join(f"{v:.9g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_xyz(path) -> PointCloud:
    """Parse whitespace-separated rows; 3 columns give bare positions, 7 add
    a normal and curvature (stored as a 4-wide feature matrix). Columns past
    the seventh are ignored with a warning; anything else is an error naming
    the offending line."""
    text = Path(path).read_text(encoding="utf-8")
    positions, extras = [], []
    arity = None
    warned = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if len(tokens) > 7 and not warned:
            warnings.warn(f"{path}: line {lineno}: ignoring columns beyond 7")
            warned = True
        width = 7 if len(tokens) >= 7 else 3
        if len(tokens) < 3 or (len(tokens) > 3 and len(tokens) < 7):
            raise XyzFormatError(f"{path}: line {lineno}: expected 3 or 7 columns, found {len(tokens)}")
        if arity is None:
            arity = width
        elif width != arity:
            raise XyzFormatError(f"{path}: line {lineno}: inconsistent column count")
        try:
            vals = [float(t) for t in tokens[:width]]
        except ValueError as exc:
            raise XyzFormatError(f"{path}: line {lineno}: {exc}") from None
        positions.append(vals[:3])
        if width == 7:
            extras.append(vals[3:])
    if not positions:
        raise XyzFormatError(f"{path}: no points found")
    features = np.asarray(extras) if extras else None
    return PointCloud(np.asarray(positions), features=features)


# -- manifests -----------------------------------------------------------------


@dataclass
class DatasetManifest:
    root: Path
    entries: list  # (relative path, class id)
    class_names: list

    def __post_init__(self):
        self.root = Path(self.root)
        ids = sorted({cid for _, cid in self.entries})
        if ids != list(range(len(ids))):
            raise ValueError(f"class ids must be dense from 0, got {ids}")

    @property
    def num_classes(self) -> int:
        return len({cid for _, cid in self.entries})

    def paths(self):
        return [(self.root / rel, cid) for rel, cid in self.entries]


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = [f"{rel}\t{cid}" for rel, cid in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    entries = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rel, cid = raw.rsplit("\t", 1)
            entries.append((rel, int(cid)))
        except ValueError:
            raise ValueError(f"{path}: line {lineno}: expected 'path<TAB>class_id'") from None
    root = path.parent
    missing = [rel for rel, _ in entries if not (root / rel).exists()]
    if missing:
        raise FileNotFoundError(f"{path}: missing data files, e.g. {missing[0]}")
    names: dict[int, str] = {}
    for rel, cid in entries:
        names.setdefault(cid, Path(rel).parts[0] if len(Path(rel).parts) > 1 else f"class{cid}")
    class_names = [names[i] for i in sorted(names)]
    return DatasetManifest(root=root, entries=entries, class_names=class_names)


def build_dataset(
    out_dir,
    classes=SHAPE_KINDS,
    per_class_train: int = 200,
    per_class_test: int = 50,
    n_points: int = 1024,
    noise: float = 0.02,
    seed: int = 0,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Write shape files plus train/test manifests; splits draw from disjoint
    seed streams, so regenerating with one seed is byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifests = {}
    for split, per_class in (("train", per_class_train), ("test", per_class_test)):
        entries = []
        for cid, kind in enumerate(classes):
            (out / kind).mkdir(exist_ok=True)
            for i in range(per_class):
                spec = ShapeSpec(kind, n_points, noise, seed=rng.mix_seed(seed, split, kind, i))
                cloud = generate_shape(spec)
                rel = f"{kind}/{split}_{i:04d}.xyz"
                write_xyz(out / rel, cloud)
                entries.append((rel, cid))
        manifest = DatasetManifest(root=out, entries=entries, class_names=list(classes))
        save_manifest(manifest, out / f"{split}.txt")
        manifests[split] = manifest
    return manifests["train"], manifests["test"]
