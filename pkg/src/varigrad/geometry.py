"""Shape graphs: 3D vertices joined by straight edges.

Curves (open or closed) and branching shape graphs share one type. This
module also holds the JSON reader/writer and the reparameterization
operators used to probe invariance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


class GeometryError(ValueError):
    """Base class for invalid shape graphs."""


class DegenerateEdge(GeometryError):
    pass


class IndexOutOfRange(GeometryError):
    pass


class DuplicateEdge(GeometryError):
    pass


class EmptyShape(GeometryError):
    pass


class TooFewPoints(GeometryError):
    pass


class ParseError(GeometryError):
    pass


@dataclass(frozen=True, eq=False)
class ShapeGraph:
    """Vertices (n, 3) and edges (m, 2) of a discrete curve or shape graph.

    Edges are stored in the given orientation but are treated as undirected
    everywhere downstream.
    """

    vertices: np.ndarray
    edges: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        e = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        v.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "edges", e)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def edge_lengths(self) -> np.ndarray:
        t = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(t, axis=1)

    def total_length(self) -> float:
        return float(self.edge_lengths().sum())

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_vertices)

    def with_label(self, label: Optional[int]) -> "ShapeGraph":
        return ShapeGraph(self.vertices, self.edges, label)

    def with_vertices(self, vertices) -> "ShapeGraph":
        return ShapeGraph(vertices, self.edges, self.label)

    def __eq__(self, other):
        if not isinstance(other, ShapeGraph):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.edges, other.edges)
        )

    __hash__ = None

    def __repr__(self):
        return f"ShapeGraph(n_vertices={self.n_vertices}, n_edges={self.n_edges}, label={self.label})"


def bounding_diameter(g: ShapeGraph) -> float:
    """Diagonal length of the axis-aligned bounding box of the vertices."""
    if g.n_vertices == 0:
        raise EmptyShape("shape has no vertices")
    span = g.vertices.max(axis=0) - g.vertices.min(axis=0)
    return float(np.linalg.norm(span))


def default_eps_len(g: ShapeGraph) -> float:
    return max(1e-9 * bounding_diameter(g), 1e-300)


def validate(g: ShapeGraph, eps_len: Optional[float] = None) -> ShapeGraph:
    """Return ``g`` unchanged if it is a well-formed shape graph, else raise.

    ``eps_len`` defaults to 1e-9 times the bounding diameter (floored at
    1e-300). Edges no longer than ``eps_len`` raise ``DegenerateEdge``.
    """
    n, m = g.n_vertices, g.n_edges
    if n < 2 or m < 1:
        raise EmptyShape(f"need at least 2 vertices and 1 edge, got {n} and {m}")
    if not np.all(np.isfinite(g.vertices)):
        raise GeometryError("non-finite vertex coordinates")
    e = g.edges
    bad = np.flatnonzero((e < 0).any(axis=1) | (e >= n).any(axis=1))
    if bad.size:
        k = int(bad[0])
        raise IndexOutOfRange(f"edge {k} = {tuple(e[k])} out of range for {n} vertices")
    loops = np.flatnonzero(e[:, 0] == e[:, 1])
    if loops.size:
        k = int(loops[0])
        raise IndexOutOfRange(f"edge {k} is a self-loop on vertex {e[k, 0]}")
    key = np.sort(e, axis=1)
    _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    if (counts > 1).any():
        dup = key[first[counts > 1][0]]
        raise DuplicateEdge(f"undirected edge {tuple(dup)} appears more than once")
    if eps_len is None:
        eps_len = default_eps_len(g)
    lengths = g.edge_lengths()
    short = np.flatnonzero(lengths <= eps_len)
    if short.size:
        k = int(short[0])
        raise DegenerateEdge(f"edge {k} has length {lengths[k]:.3g} <= {eps_len:.3g}")
    return g


def polyline(points, closed: bool = False, label: Optional[int] = None) -> ShapeGraph:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    idx = np.arange(n)
    if closed:
        edges = np.stack([idx, np.roll(idx, -1)], axis=1)
    else:
        edges = np.stack([idx[:-1], idx[1:]], axis=1)
    return validate(ShapeGraph(pts, edges, label))


def closed_polyline(points, label: Optional[int] = None) -> ShapeGraph:
    """Closed curve through ``points`` with a last-to-first edge."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(np.unique(pts, axis=0)) < 3:
        raise TooFewPoints(f"closed polyline needs at least 3 distinct points, got {len(pts)}")
    return polyline(pts, closed=True, label=label)


# ---------------------------------------------------------------------------
# Reparameterization


@dataclass(frozen=True)
class ReparamSpec:
    """Random reparameterization recipe.

    ``random_phase`` shifts where resampling starts along closed loops
    (loops have no junction vertex to anchor on); it has no effect when
    ``resample_factor == 1``.
    """

    permute_vertices: bool = False
    flip_edges: bool = False
    resample_factor: float = 1.0
    rng_seed: int = 0
    random_phase: bool = False

    def __post_init__(self):
        if not 0.5 <= self.resample_factor <= 2.0:
            raise ValueError(f"resample_factor must lie in [0.5, 2], got {self.resample_factor}")


def decompose_chains(g: ShapeGraph) -> list[tuple[list[int], bool]]:
    """Split ``g`` into maximal chains whose interior vertices have degree 2.

    Returns ``(vertex_path, is_loop)`` pairs. Open chains start and end at
    vertices of degree != 2; loops (components where every vertex has
    degree 2) start and end at their smallest vertex index.
    """
    n = g.n_vertices
    nbrs: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, (i, j) in enumerate(g.edges.tolist()):
        nbrs[i].append((j, k))
        nbrs[j].append((i, k))
    deg = [len(a) for a in nbrs]
    used = np.zeros(g.n_edges, dtype=bool)

    def walk(start, first_nb, first_edge):
        path = [start, first_nb]
        used[first_edge] = True
        cur = first_nb
        while deg[cur] == 2 and cur != start:
            nxt = [(w, k) for w, k in nbrs[cur] if not used[k]]
            if not nxt:
                break
            w, k = nxt[0]
            used[k] = True
            path.append(w)
            cur = w
        return path

    chains = []
    for s in range(n):
        if deg[s] == 2:
            continue
        for w, k in nbrs[s]:
            if not used[k]:
                chains.append((walk(s, w, k), False))
    for s in range(n):
        for w, k in nbrs[s]:
            if not used[k]:
                chains.append((walk(s, w, k), True))
    return chains


def _points_at(pts: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Positions at arc-length values ``targets`` along the polyline ``pts``."""
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    k = np.clip(np.searchsorted(s, targets, side="right") - 1, 0, len(seg) - 1)
    alpha = (targets - s[k]) / seg[k]
    return pts[k] + alpha[:, None] * (pts[k + 1] - pts[k])


def resample(g: ShapeGraph, factor: float, rng: Optional[np.random.Generator] = None) -> ShapeGraph:
    """Arc-length uniform resampling of every chain of ``g``.

    Each chain with ``k`` edges becomes ``max(1, round(factor * k))`` edges
    (loops keep at least 3). Vertices of degree != 2 are kept exactly. When
    ``rng`` is given, loops start at a random arc-length offset.
    """
    chains = decompose_chains(g)
    keep = sorted({p[0] for p, loop in chains if not loop} | {p[-1] for p, loop in chains if not loop})
    new_index = {v: i for i, v in enumerate(keep)}
    verts = [g.vertices[v] for v in keep]
    edges = []
    for path, loop in chains:
        pts = g.vertices[path]
        total = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
        n_seg = max(3 if path[0] == path[-1] else 1, int(round(factor * (len(path) - 1))))
        base = len(verts)
        if loop:
            phase = float(rng.uniform()) if rng is not None else 0.0
            verts.extend(_points_at(pts, (phase + np.arange(n_seg)) * (total / n_seg)))
            ids = list(range(base, base + n_seg))
            edges.extend(zip(ids, ids[1:] + ids[:1]))
        else:
            verts.extend(_points_at(pts, np.arange(1, n_seg) * (total / n_seg)))
            ids = [new_index[path[0]], *range(base, base + n_seg - 1), new_index[path[-1]]]
            edges.extend(zip(ids[:-1], ids[1:]))
    return validate(ShapeGraph(np.array(verts), np.array(edges), g.label))


def apply_reparam(g: ShapeGraph, spec: ReparamSpec) -> ShapeGraph:
    """Redescribe ``g`` without changing the polylines it traces.

    Order of operations: resampling, then vertex/edge-list permutation, then
    per-edge orientation flips (each edge flipped with probability 1/2).
    """
    validate(g)
    rng = np.random.default_rng(spec.rng_seed)
    out = g
    if spec.resample_factor != 1.0:
        out = resample(out, spec.resample_factor, rng if spec.random_phase else None)
    v, e = out.vertices, out.edges
    if spec.permute_vertices:
        perm = rng.permutation(len(v))
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        v = v[perm]
        e = inv[e][rng.permutation(len(e))]
    if spec.flip_edges:
        flip = rng.random(len(e)) < 0.5
        e = np.where(flip[:, None], e[:, ::-1], e)
    return validate(ShapeGraph(v, e, g.label))


def transform(g: ShapeGraph, rotation=None, translation=None, scale: float = 1.0) -> ShapeGraph:
    v = g.vertices * scale
    if rotation is not None:
        v = v @ np.asarray(rotation).T
    if translation is not None:
        v = v + np.asarray(translation)
    return g.with_vertices(v)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# ---------------------------------------------------------------------------
# Serialization


def shape_to_dict(g: ShapeGraph) -> dict:
    d = {"vertices": g.vertices.tolist(), "edges": g.edges.tolist()}
    if g.label is not None:
        d["label"] = g.label
    return d


def shape_from_dict(d, where: str = "", check: bool = True) -> ShapeGraph:
    if not isinstance(d, dict):
        raise ParseError(f"{where}expected a JSON object, got {type(d).__name__}")
    for key in ("vertices", "edges"):
        if key not in d:
            raise ParseError(f"{where}missing field {key!r}")
    try:
        v = np.array(d["vertices"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}field 'vertices': {exc}") from None
    if v.ndim != 2 or v.shape[1] != 3:
        raise ParseError(f"{where}field 'vertices': expected a list of [x, y, z], got shape {v.shape}")
    raw_edges = d["edges"]
    if not isinstance(raw_edges, list) or not all(
        isinstance(p, list) and len(p) == 2 and all(isinstance(i, int) and not isinstance(i, bool) for i in p)
        for p in raw_edges
    ):
        raise ParseError(f"{where}field 'edges': expected a list of [i, j] integer pairs")
    label = d.get("label")
    if label is not None and (not isinstance(label, int) or isinstance(label, bool) or label < 0):
        raise ParseError(f"{where}field 'label': expected a nonnegative integer, got {label!r}")
    g = ShapeGraph(v, np.array(raw_edges, dtype=np.int64).reshape(-1, 2), label)
    if check:
        try:
            validate(g)
        except ParseError:
            raise
        except GeometryError as exc:
            raise type(exc)(f"{where}{exc}") from None
    return g


def write_shape(g: ShapeGraph) -> bytes:
    """Canonical compact JSON; floats use Python's shortest round-trip repr."""
    return json.dumps(shape_to_dict(g), separators=(",", ":"), allow_nan=False).encode("utf-8")


def read_shape(data: bytes | str, check: bool = True) -> ShapeGraph:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        d = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return shape_from_dict(d, check=check)


def write_dataset(shapes: Iterable[ShapeGraph]) -> bytes:
    return b"".join(write_shape(g) + b"\n" for g in shapes)


def read_dataset(data: bytes | str, check: bool = True) -> list[ShapeGraph]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    out = []
    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}, column {exc.colno}: {exc.msg}") from None
        out.append(shape_from_dict(d, where=f"line {lineno}: ", check=check))
    return out


def load_shape(path, check: bool = True) -> ShapeGraph:
    with open(path, "rb") as f:
        return read_shape(f.read(), check=check)


def load_dataset(path, check: bool = True) -> list[ShapeGraph]:
    with open(path, "rb") as f:
        return read_dataset(f.read(), check=check)


def save_dataset(path, shapes: Sequence[ShapeGraph]) -> None:
    with open(path, "wb") as f:
        f.write(write_dataset(shapes))
