"""Encoders and downstream heads.

An encoder maps a batch of shapes to fixed-length feature vectors. Shapes
are first converted by ``encoder.prepare`` into whatever the encoder
consumes (VariGrad: constant template gradient fields; PointNet: raw vertex
arrays), which lets training featurize a dataset once.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..features import ConvStack, Template, raw_features
from ..geometry import ShapeGraph
from ..varifold import KernelConfig
from .layers import Dense, Layer, ReLU, Sequential, mlp


@dataclass
class ModelConfig:
    task: str = "classifier"  # classifier | autoencoder
    encoder: str = "varigrad"  # varigrad | pointnet
    class_count: int = 0
    channels: tuple[int, ...] = (3, 16, 32)
    pool: bool = False
    pointnet_widths: tuple[int, ...] = (3, 64, 128)
    classifier_hidden: tuple[int, ...] = (256, 128)
    encoder_hidden: int = 128
    latent_dim: int = 64
    decoder_hidden: int = 256
    autoencoder_batchnorm: bool = False
    # start the decoder exactly at the template: final W = 0, final b = template coordinates
    decoder_template_init: bool = True
    sigma_ratio: float = 0.2
    kernel_a: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("channels", "pointnet_widths", "classifier_hidden"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


class VariGradEncoder(Layer):
    def __init__(self, template: Template, kernel: KernelConfig, channels=(3, 16, 32), pool=False, rng=None):
        super().__init__()
        self.template = template
        self.kernel = kernel
        self.conv = ConvStack(template, channels, rng, pool=pool)

    @property
    def out_dim(self) -> int:
        return self.conv.out_dim

    def prepare(self, shapes: Sequence[ShapeGraph], threads: int = 1) -> np.ndarray:
        return raw_features(self.template, shapes, self.kernel, threads)

    def take(self, inputs, idx):
        return inputs[idx]

    def forward(self, x, train=False):
        return self.conv.forward(x, train)

    def backward(self, dy):
        self.conv.backward(dy)

    def named_layers(self):
        yield "conv", self.conv
        for name, layer in self.conv.named_layers():
            yield f"conv.{name}", layer


class PointNetEncoder(Layer):
    """Shared per-vertex MLP followed by a channel-wise max over vertices.

    Edges are ignored, so the output is invariant to vertex order but not to
    resampling.
    """

    def __init__(self, widths=(3, 64, 128), rng=None):
        super().__init__()
        layers: list[Layer] = []
        for a, b in zip(widths[:-1], widths[1:]):
            layers += [Dense(a, b, rng), ReLU()]
        self.mlp = Sequential(layers)
        self.out_dim = widths[-1]

    def prepare(self, shapes: Sequence[ShapeGraph], threads: int = 1) -> list[np.ndarray]:
        return [np.asarray(g.vertices) for g in shapes]

    def take(self, inputs, idx):
        return [inputs[i] for i in idx]

    def forward(self, x, train=False):
        counts = [len(p) for p in x]
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int)
        h = self.mlp.forward(np.concatenate(x, axis=0), train)
        self._arg = np.stack([s + h[s : s + n].argmax(axis=0) for s, n in zip(starts, counts)])
        self._n = len(h)
        return np.take_along_axis(h, self._arg, axis=0)

    def backward(self, dy):
        dh = np.zeros((self._n, dy.shape[1]))
        np.add.at(dh, (self._arg, np.arange(dy.shape[1])[None, :]), dy)
        self.mlp.backward(dh)

    def named_layers(self):
        for name, layer in self.mlp.named_layers():
            yield f"mlp.{name}", layer


class Model:
    """Encoder plus named heads; owns the parameter naming used for saving."""

    def __init__(self, config: ModelConfig, template: Template, encoder, heads: dict[str, Sequential]):
        self.config = config
        self.template = template
        self.encoder = encoder
        self.heads = heads

    def layers(self):
        for name, layer in self.encoder.named_layers():
            if layer.params or layer.buffers:
                yield f"encoder.{name}", layer
        for hname, head in self.heads.items():
            for name, layer in head.named_layers():
                yield f"{hname}.{name}", layer

    def parameters(self) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        params, grads = {}, {}
        for lname, layer in self.layers():
            for pname, p in layer.params.items():
                params[f"{lname}.{pname}"] = p
                grads[f"{lname}.{pname}"] = layer.grads.get(pname)
        return params, grads

    def state(self) -> list[tuple[str, np.ndarray]]:
        """All arrays (parameters then buffers per layer) in a fixed order."""
        out = []
        for lname, layer in self.layers():
            for pname in sorted(layer.params):
                out.append((f"{lname}.{pname}", layer.params[pname]))
            for bname in sorted(layer.buffers):
                out.append((f"{lname}.{bname}", layer.buffers[bname]))
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for lname, layer in self.layers():
            for store in (layer.params, layer.buffers):
                for key in store:
                    full = f"{lname}.{key}"
                    a = arrays[full]
                    if a.shape != store[key].shape:
                        raise ValueError(f"{full}: stored shape {a.shape} != model shape {store[key].shape}")
                    store[key][...] = a

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters()[0].values())

    def prepare(self, shapes, threads: int = 1):
        return self.encoder.prepare(shapes, threads)


class Classifier(Model):
    def forward(self, x, train=False) -> np.ndarray:
        return self.heads["head"].forward(self.encoder.forward(x, train), train)

    def backward(self, dlogits):
        self.encoder.backward(self.heads["head"].backward(dlogits))


class AutoEncoder(Model):
    def forward(self, x, train=False) -> np.ndarray:
        """Reconstructed template-vertex coordinates, shape (B, |V_T|, 3)."""
        z = self.heads["enc"].forward(self.encoder.forward(x, train), train)
        out = self.heads["dec"].forward(z, train)
        return out.reshape(out.shape[0], -1, 3)

    def encode(self, x) -> np.ndarray:
        return self.heads["enc"].forward(self.encoder.forward(x, False), False)

    def backward(self, dverts):
        d = dverts.reshape(dverts.shape[0], -1)
        self.encoder.backward(self.heads["enc"].backward(self.heads["dec"].backward(d)))

    def reconstruct(self, x) -> list[ShapeGraph]:
        return [ShapeGraph(v, self.template.shape.edges) for v in self.forward(x, train=False)]


def build_model(config: ModelConfig, template: Template, kernel: KernelConfig, rng_seed: int | None = 0) -> Model:
    """Fresh model; ``rng_seed=None`` gives all-zero weights."""
    rng = None if rng_seed is None else np.random.default_rng(rng_seed)
    if config.encoder == "varigrad":
        encoder = VariGradEncoder(template, kernel, config.channels, config.pool, rng)
    elif config.encoder == "pointnet":
        encoder = PointNetEncoder(config.pointnet_widths, rng)
    else:
        raise ValueError(f"unknown encoder {config.encoder!r}")
    n = encoder.out_dim
    if config.task == "classifier":
        if config.class_count < 2:
            raise ValueError("classifier needs class_count >= 2")
        head = mlp([n, *config.classifier_hidden, config.class_count], rng)
        return Classifier(config, template, encoder, {"head": head})
    if config.task == "autoencoder":
        bn = config.autoencoder_batchnorm
        enc = mlp([n, config.encoder_hidden, config.latent_dim], rng, batchnorm=bn)
        dec = mlp([config.latent_dim, config.decoder_hidden, 3 * template.n_vertices], rng, batchnorm=bn)
        if rng is not None and config.decoder_template_init:
            dec.layers[-1].params["W"][:] = 0.0
            dec.layers[-1].params["b"][:] = template.shape.vertices.ravel()
        return AutoEncoder(config, template, encoder, {"enc": enc, "dec": dec})
    raise ValueError(f"unknown task {config.task!r}")


def mlp_classifier_forward(features: np.ndarray, head: Sequential, train: bool = False) -> np.ndarray:
    return head.forward(np.atleast_2d(features), train)


def pointnet_baseline_forward(g: ShapeGraph, encoder: PointNetEncoder) -> np.ndarray:
    return encoder.forward([np.asarray(g.vertices)], train=False)[0]
