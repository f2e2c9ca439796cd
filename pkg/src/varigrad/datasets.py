"""Synthetic labeled datasets of closed 3D curves and branching stick figures.

Both families are unregistered: every sample has its own vertex count and
irregular spacing along the curve, so no two samples share a vertex
correspondence. Sample ``i`` of a dataset is drawn from the generator seeded
with ``rng_seed + i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .geometry import ReparamSpec, ShapeGraph, apply_reparam, random_rotation, transform, validate


class DatasetError(ValueError):
    pass


class EmptyDataset(DatasetError):
    pass


class SingleClass(DatasetError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "curve"
    class_count: int = 4
    samples_per_class: int = 100
    vertex_range: tuple[int, int] = (64, 96)
    noise_scale: float = 0.0
    rng_seed: int = 0
    # curves: phases are drawn from [-phase_spread, phase_spread]
    phase_spread: float = np.pi

    def __post_init__(self):
        if self.kind not in ("curve", "stickfigure"):
            raise DatasetError(f"unknown kind {self.kind!r}")
        if self.class_count < 2:
            raise SingleClass(f"need at least 2 classes, got {self.class_count}")
        if self.samples_per_class < 1:
            raise EmptyDataset("samples_per_class must be positive")
        lo, hi = self.vertex_range
        if not 8 <= lo <= hi <= 512:
            raise DatasetError(f"vertex_range must satisfy 8 <= min <= max <= 512, got {self.vertex_range}")
        if self.noise_scale < 0:
            raise DatasetError("noise_scale must be nonnegative")


@dataclass
class LabeledDataset:
    shapes: list[ShapeGraph]
    split: str = "all"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.shapes)

    def __iter__(self) -> Iterator[ShapeGraph]:
        return iter(self.shapes)

    def __getitem__(self, i):
        return self.shapes[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if g.label is None else g.label for g in self.shapes], dtype=np.int64)

    @property
    def class_count(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def class_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels, return_counts=True)
        return dict(zip(ids.tolist(), counts.tolist()))


def _irregular_params(rng: np.random.Generator, m: int) -> np.ndarray:
    """m increasing values in [0, 1) with gaps varying by up to a factor 3."""
    gaps = rng.uniform(0.5, 1.5, size=m)
    t = np.concatenate([[0.0], np.cumsum(gaps)[:-1]]) / gaps.sum()
    return t


def curve_sample(k: int, rng: np.random.Generator, vertex_range, noise_scale: float, phase_spread: float = np.pi) -> ShapeGraph:
    m = int(rng.integers(vertex_range[0], vertex_range[1] + 1))
    phi, psi = rng.uniform(-phase_spread, phase_spread, size=2)
    theta = 2 * np.pi * ((_irregular_params(rng, m) + rng.uniform()) % 1.0)
    theta.sort()
    r = 1.0 + 0.3 * np.cos((k + 2) * theta + phi)
    z = 0.2 * np.sin((k + 1) * theta + psi)
    pts = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    pts += noise_scale * rng.standard_normal(pts.shape)
    n = len(pts)
    edges = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    return validate(ShapeGraph(pts, edges, k))


def gen_curves(spec: SyntheticSpec) -> LabeledDataset:
    """Closed curves; class k has radial harmonic k + 2 and vertical harmonic k + 1."""
    if spec.kind != "curve":
        raise DatasetError(f"gen_curves needs kind='curve', got {spec.kind!r}")
    shapes = []
    for k in range(spec.class_count):
        for s in range(spec.samples_per_class):
            rng = np.random.default_rng(spec.rng_seed + k * spec.samples_per_class + s)
            shapes.append(curve_sample(k, rng, spec.vertex_range, spec.noise_scale, spec.phase_spread))
    return LabeledDataset(shapes, meta={"spec": spec})


def _stick_pose(k: int, class_count: int, rng: np.random.Generator):
    """Control polylines (torso, 2 arms, 2 legs) for one pose of class k."""
    deg = np.pi / 180
    # arm elevation regime: evenly spread centres between -60 and +60 degrees
    centre = -60 + 120 * k / (class_count - 1)
    spread = 120 / (class_count - 1) / 3
    hip = np.zeros(3)
    bend = rng.uniform(-0.08, 0.08, size=2)
    shoulder = np.array([bend[0], bend[1], 1.0])
    torso = np.stack([hip, np.array([bend[0] * 0.5 + 0.03, bend[1] * 0.5, 0.5]), shoulder])
    limbs = []
    for side in (-1.0, 1.0):
        elev = (centre + rng.uniform(-spread, spread)) * deg
        yaw = rng.uniform(-10, 10) * deg
        d1 = np.array([side * np.cos(elev) * np.cos(yaw), np.cos(elev) * np.sin(yaw), np.sin(elev)])
        elbow = shoulder + 0.4 * d1
        flex = rng.uniform(0, 25) * deg
        d2 = np.array([side * np.cos(elev + flex), 0.0, np.sin(elev + flex)])
        limbs.append(np.stack([shoulder, elbow, elbow + 0.35 * d2]))
    leg_spread = (12.0 if k % 2 == 0 else 32.0) + rng.uniform(-6, 6)
    for side in (-1.0, 1.0):
        a = leg_spread * deg
        d1 = np.array([side * np.sin(a), rng.uniform(-0.1, 0.1), -np.cos(a)])
        knee = hip + 0.5 * d1 / np.linalg.norm(d1)
        knee_flex = rng.uniform(0, 15) * deg
        d2 = np.array([side * np.sin(a - knee_flex), 0.0, -np.cos(a - knee_flex)])
        limbs.append(np.stack([hip, knee, knee + 0.5 * d2]))
    return torso, limbs


def _sample_polyline(ctrl: np.ndarray, n_edges: int, rng: np.random.Generator) -> np.ndarray:
    """n_edges + 1 points along ``ctrl`` at irregular arc-length positions, ends exact."""
    seg = np.linalg.norm(np.diff(ctrl, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    gaps = rng.uniform(0.5, 1.5, size=n_edges)
    targets = np.concatenate([[0.0], np.cumsum(gaps)]) / gaps.sum() * s[-1]
    targets[-1] = s[-1]
    idx = np.clip(np.searchsorted(s, targets, side="right") - 1, 0, len(seg) - 1)
    alpha = (targets - s[idx]) / seg[idx]
    return ctrl[idx] + alpha[:, None] * (ctrl[idx + 1] - ctrl[idx])


def stickfigure_sample(k: int, class_count: int, rng: np.random.Generator, vertex_range, noise_scale: float) -> ShapeGraph:
    torso, limbs = _stick_pose(k, class_count, rng)
    chains = [torso] + limbs
    total = int(rng.integers(vertex_range[0], vertex_range[1] + 1))
    # vertex count = 1 + total edge count over the 5 chains
    lengths = np.array([np.linalg.norm(np.diff(c, axis=0), axis=1).sum() for c in chains])
    weights = lengths * rng.uniform(0.7, 1.3, size=5)
    n_edges = np.maximum(1, np.floor(weights / weights.sum() * (total - 1)).astype(int))
    while n_edges.sum() < total - 1:
        n_edges[np.argmax(weights / n_edges)] += 1
    while n_edges.sum() > total - 1:
        n_edges[np.argmax(np.where(n_edges > 1, n_edges / weights, -1))] -= 1

    hip, shoulder = 0, 1
    verts = [torso[0], torso[-1]]
    edges = []
    for ci, (ctrl, ne) in enumerate(zip(chains, n_edges)):
        pts = _sample_polyline(ctrl, int(ne), rng)
        start = hip if ci in (0, 3, 4) else shoulder
        ids = [start]
        interior = pts[1:-1] if ci == 0 else pts[1:]
        base = len(verts)
        verts.extend(interior)
        ids += list(range(base, base + len(interior)))
        if ci == 0:
            ids.append(shoulder)
        edges.extend(zip(ids[:-1], ids[1:]))
    v = np.array(verts)
    v += noise_scale * rng.standard_normal(v.shape)
    return validate(ShapeGraph(v, np.array(edges), k))


def gen_stickfigures(spec: SyntheticSpec) -> LabeledDataset:
    """Torso plus four limbs meeting at a hip and a shoulder junction (both degree 3).

    Class k fixes the arm-elevation interval and whether the legs are
    together (even k) or spread (odd k).
    """
    if spec.kind != "stickfigure":
        raise DatasetError(f"gen_stickfigures needs kind='stickfigure', got {spec.kind!r}")
    shapes = []
    for k in range(spec.class_count):
        for s in range(spec.samples_per_class):
            rng = np.random.default_rng(spec.rng_seed + k * spec.samples_per_class + s)
            shapes.append(stickfigure_sample(k, spec.class_count, rng, spec.vertex_range, spec.noise_scale))
    return LabeledDataset(shapes, meta={"spec": spec})


def generate(spec: SyntheticSpec) -> LabeledDataset:
    return gen_curves(spec) if spec.kind == "curve" else gen_stickfigures(spec)


def split(ds: LabeledDataset, test_fraction: float, rng_seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified train/test split; each class contributes round(fraction * size) test shapes."""
    if not 0 < test_fraction < 1:
        raise DatasetError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if len(ds) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    labels = ds.labels
    rng = np.random.default_rng(rng_seed)
    test_idx = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise DatasetError(f"class {c} has {len(idx)} sample(s); need at least 2 to split")
        n_test = min(max(1, int(round(test_fraction * len(idx)))), len(idx) - 1)
        test_idx.extend(rng.permutation(idx)[:n_test].tolist())
    is_test = np.zeros(len(ds), dtype=bool)
    is_test[test_idx] = True
    train = LabeledDataset([g for g, t in zip(ds.shapes, is_test) if not t], "train", dict(ds.meta))
    test = LabeledDataset([g for g, t in zip(ds.shapes, is_test) if t], "test", dict(ds.meta))
    return train, test


def make_reparam_set(
    ds: Sequence[ShapeGraph] | LabeledDataset,
    per_shape: int,
    rng_seed: int = 0,
    factor_range: tuple[float, float] = (0.7, 1.4),
    permute: bool = True,
    flip: bool = True,
    random_phase: bool = True,
    rotate: bool = False,
) -> LabeledDataset:
    """``per_shape`` random reparameterizations of every shape, labels kept.

    ``rotate`` additionally applies a random rotation about the shape's
    centroid (a rigid-alignment perturbation, not a reparameterization).
    """
    shapes = ds.shapes if isinstance(ds, LabeledDataset) else list(ds)
    rng = np.random.default_rng(rng_seed)
    out = []
    for g in shapes:
        for _ in range(per_shape):
            spec = ReparamSpec(
                permute_vertices=permute,
                flip_edges=flip,
                resample_factor=float(rng.uniform(*factor_range)) if factor_range[0] != factor_range[1] else float(factor_range[0]),
                rng_seed=int(rng.integers(2**32)),
                random_phase=random_phase,
            )
            h = apply_reparam(g, spec)
            if rotate:
                c = h.vertices.mean(axis=0)
                h = transform(transform(h, translation=-c), rotation=random_rotation(rng), translation=c)
            out.append(h)
    return LabeledDataset(out, "reparam")
