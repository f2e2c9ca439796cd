"""VariGrad feature extraction on a fixed template.

An input shape is summarized by the gradient of the squared varifold
distance to the template, taken with respect to the template vertices. That
(|V_T|, 3) field has the same size for every input; graph convolutions over
the template connectivity then map it to a flat feature vector.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import ShapeGraph, load_shape, validate, write_shape
from .nn.layers import Flatten, GraphConv, Identity, NeighborhoodPool, ReLU, Sequential
from .varifold import KernelConfig, default_kernel, grad_dist_sq


def vertex_adjacency(g: ShapeGraph) -> np.ndarray:
    n = g.n_vertices
    a = np.zeros((n, n))
    a[g.edges[:, 0], g.edges[:, 1]] = 1.0
    a[g.edges[:, 1], g.edges[:, 0]] = 1.0
    return a


def normalized_adjacency(g: ShapeGraph) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = vertex_adjacency(g) + np.eye(g.n_vertices)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


@dataclass(frozen=True, eq=False)
class Template:
    shape: ShapeGraph
    adjacency_norm: np.ndarray
    mean_adjacency: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return self.shape.n_vertices


def make_template(g: ShapeGraph) -> Template:
    validate(g)
    g = g.with_label(None)
    an = normalized_adjacency(g)
    an.setflags(write=False)
    closed = vertex_adjacency(g) + np.eye(g.n_vertices)
    mean_adj = closed / closed.sum(axis=1, keepdims=True)
    mean_adj.setflags(write=False)
    return Template(g, an, mean_adj)


def save_template(path, t: Template, sigma_ratio: float) -> None:
    """Write the template shape plus a ``<path>.meta.json`` sidecar."""
    with open(path, "wb") as f:
        f.write(write_shape(t.shape))
    with open(sidecar_path(path), "w") as f:
        json.dump({"sigma_ratio": sigma_ratio}, f)


def sidecar_path(path) -> str:
    return str(path) + ".meta.json"


def load_template(path) -> tuple[Template, float | None]:
    t = make_template(load_shape(path))
    try:
        with open(sidecar_path(path)) as f:
            ratio = json.load(f)["sigma_ratio"]
    except FileNotFoundError:
        ratio = None
    return t, ratio


def raw_feature(t: Template, g: ShapeGraph, k: KernelConfig) -> np.ndarray:
    """Gradient of dist_sq(template, g) w.r.t. the template vertices, shape (|V_T|, 3)."""
    return grad_dist_sq(t.shape, g, k)


def raw_features(t: Template, shapes: Sequence[ShapeGraph], k: KernelConfig, threads: int = 1) -> np.ndarray:
    """Stacked raw fields for many inputs, shape (len(shapes), |V_T|, 3).

    Each field is computed independently, so the result does not depend on
    ``threads``.
    """
    if threads > 1 and len(shapes) > 1:
        with ThreadPoolExecutor(threads) as ex:
            fields = list(ex.map(lambda g: raw_feature(t, g, k), shapes))
    else:
        fields = [raw_feature(t, g, k) for g in shapes]
    return np.stack(fields) if fields else np.zeros((0, t.n_vertices, 3))


class ConvStack(Sequential):
    """Graph convolutions over template connectivity, then vertex-major flatten.

    Default widths 3 -> 16 -> 32 with a ReLU after each conv. ``pool=True``
    inserts a closed-neighbourhood mean (halving channels) after the last
    conv. ``activation="identity"`` swaps the ReLUs out (used in tests).
    """

    def __init__(
        self,
        t: Template,
        channels: Sequence[int] = (3, 16, 32),
        rng: np.random.Generator | None = None,
        pool: bool = False,
        activation: str = "relu",
        input_scale: float = 1.0,
    ):
        act = {"relu": ReLU, "identity": Identity}[activation]
        layers = []
        for c_in, c_out in zip(channels[:-1], channels[1:]):
            layers += [GraphConv(t.adjacency_norm, c_in, c_out, rng), act()]
        if pool:
            layers.append(NeighborhoodPool(t.mean_adjacency))
        layers.append(Flatten())
        super().__init__(layers)
        self.channels = tuple(channels)
        self.pool = pool
        self.n_vertices = t.n_vertices
        self.buffers["input_scale"] = np.array([input_scale], dtype=np.float64)

    @property
    def out_dim(self) -> int:
        c = self.channels[-1] // 2 if self.pool else self.channels[-1]
        return c * self.n_vertices

    def forward(self, x, train=False):
        return super().forward(x * self.buffers["input_scale"][0], train)

    def backward(self, dy):
        return super().backward(dy) * self.buffers["input_scale"][0]


def conv_forward(t: Template, fields: np.ndarray, params: ConvStack) -> np.ndarray:
    """Feature vector(s) from raw gradient field(s).

    ``fields`` is (|V_T|, 3) for one input or (B, |V_T|, 3) for a batch.
    """
    x = np.asarray(fields, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[1:] != (t.n_vertices, params.channels[0]):
        raise ValueError(f"field shape {x.shape[1:]} does not match template ({t.n_vertices}, {params.channels[0]})")
    out = params.forward(x, train=False)
    return out[0] if single else out


def featurize(t: Template, g: ShapeGraph, k: KernelConfig, params: ConvStack) -> np.ndarray:
    return conv_forward(t, raw_feature(t, g, k), params)


__all__ = [
    "ConvStack",
    "Template",
    "conv_forward",
    "default_kernel",
    "featurize",
    "load_template",
    "make_template",
    "normalized_adjacency",
    "raw_feature",
    "raw_features",
    "save_template",
]
