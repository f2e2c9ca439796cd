"""Minibatch training loops for the classifier and the auto-encoder.

Inputs are prepared once per dataset (``Model.prepare``); the VariGrad
gradient fields are constants, so nothing backpropagates through the
varifold featurization. Both loops log an epoch-0 row (the initialized
model) followed by one train and one test row per epoch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..datasets import EmptyDataset, SingleClass
from ..features import Template
from ..geometry import ShapeGraph
from ..varifold import KernelConfig, dist_sq, grad_dist_sq
from .losses import cross_entropy_loss
from .models import AutoEncoder, Classifier, Model, ModelConfig, build_model
from .optim import Adam, AdamConfig

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "split", "loss", "accuracy_or_error", "seconds_per_batch")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 10
    epochs: int = 50
    learning_rate: float = 1e-3
    rng_seed: int = 0
    latent_dim: int = 64
    class_count: int = 0
    threads: int = 1
    normalize_fields: bool = True
    grad_clip: Optional[float] = None  # global L2 norm cap on parameter gradients

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainResult:
    model: Model
    optimizer: Adam
    metrics: list[dict]
    seconds_per_batch: float


def _clip(grads: dict[str, np.ndarray], max_norm: Optional[float]) -> None:
    if max_norm is None:
        return
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    out = [order[i : i + size] for i in range(0, n, size)]
    # a single-sample batch has no batch statistics; fold it into the previous one
    if len(out) > 1 and len(out[-1]) == 1:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def _set_field_scale(model: Model, inputs) -> None:
    conv = getattr(model.encoder, "conv", None)
    if conv is None:
        return
    rms = float(np.sqrt(np.mean(np.square(inputs))))
    conv.buffers["input_scale"][0] = 1.0 / rms if rms > 0 else 1.0


def evaluate_classifier(model: Classifier, inputs, labels, batch_size: int = 256) -> tuple[float, float]:
    """Mean cross-entropy and accuracy in eval mode."""
    n = len(labels)
    losses, correct = 0.0, 0
    for s in range(0, n, batch_size):
        idx = np.arange(s, min(n, s + batch_size))
        logits = model.forward(model.encoder.take(inputs, idx), train=False)
        loss, _ = cross_entropy_loss(logits, labels[idx])
        losses += loss * len(idx)
        correct += int((logits.argmax(axis=1) == labels[idx]).sum())
    return losses / n, correct / n


def predict(model: Classifier, inputs, batch_size: int = 256) -> np.ndarray:
    n = len(inputs)
    out = []
    for s in range(0, n, batch_size):
        idx = np.arange(s, min(n, s + batch_size))
        out.append(model.forward(model.encoder.take(inputs, idx), train=False).argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def recon_errors(model: AutoEncoder, inputs, targets: Sequence[ShapeGraph], kernel: KernelConfig, batch_size: int = 256) -> np.ndarray:
    """Squared varifold distance of each reconstruction to its target (eval mode)."""
    edges = model.template.shape.edges
    errs = []
    for s in range(0, len(targets), batch_size):
        idx = np.arange(s, min(len(targets), s + batch_size))
        verts = model.forward(model.encoder.take(inputs, idx), train=False)
        errs += [dist_sq(ShapeGraph(v, edges), targets[i], kernel, clamp=True) for v, i in zip(verts, idx)]
    return np.array(errs)


def _check_labeled(shapes: Sequence[ShapeGraph]) -> np.ndarray:
    if len(shapes) == 0:
        raise EmptyDataset("training set is empty")
    labels = np.array([-1 if g.label is None else g.label for g in shapes])
    if (labels < 0).any():
        raise ValueError("classifier training needs a label on every shape")
    if len(np.unique(labels)) < 2:
        raise SingleClass("training set contains a single class")
    return labels


def train_classifier(
    train: Sequence[ShapeGraph],
    template: Template,
    kernel: KernelConfig,
    config: TrainConfig = TrainConfig(),
    encoder: str = "varigrad",
    test: Optional[Sequence[ShapeGraph]] = None,
    model_config: Optional[ModelConfig] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    train = list(train)
    labels = _check_labeled(train)
    c = config.class_count or int(labels.max()) + 1
    mc = model_config or ModelConfig(task="classifier", encoder=encoder, class_count=c, kernel_a=kernel.a)
    model = build_model(mc, template, kernel, config.rng_seed)
    x = model.prepare(train, config.threads)
    if encoder == "varigrad" and config.normalize_fields:
        _set_field_scale(model, x)
    if test is not None:
        test = list(test)
        xt, yt = model.prepare(test, config.threads), _check_test_labels(test)

    opt = Adam(AdamConfig(lr=config.learning_rate))
    rng = np.random.default_rng(config.rng_seed)
    metrics: list[dict] = []

    def emit(row):
        metrics.append(row)
        if on_epoch:
            on_epoch(row)

    loss0, acc0 = evaluate_classifier(model, x, labels)
    emit(dict(epoch=0, split="train", loss=loss0, accuracy_or_error=acc0, seconds_per_batch=0.0))
    if test is not None:
        l, a = evaluate_classifier(model, xt, yt)
        emit(dict(epoch=0, split="test", loss=l, accuracy_or_error=a, seconds_per_batch=0.0))

    times = []
    for epoch in range(1, config.epochs + 1):
        tot, correct, epoch_times = 0.0, 0, []
        for idx in _batches(len(train), config.batch_size, rng):
            t0 = time.perf_counter()
            logits = model.forward(model.encoder.take(x, idx), train=True)
            loss, dlogits = cross_entropy_loss(logits, labels[idx])
            model.backward(dlogits)
            params, grads = model.parameters()
            _clip(grads, config.grad_clip)
            opt.step(params, grads)
            epoch_times.append(time.perf_counter() - t0)
            tot += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
        spb = float(np.median(epoch_times))
        times.append(spb)
        emit(dict(epoch=epoch, split="train", loss=tot / len(train), accuracy_or_error=correct / len(train), seconds_per_batch=spb))
        if test is not None:
            l, a = evaluate_classifier(model, xt, yt)
            emit(dict(epoch=epoch, split="test", loss=l, accuracy_or_error=a, seconds_per_batch=spb))
        log.info("epoch %d loss %.4f", epoch, tot / len(train))
    return TrainResult(model, opt, metrics, float(np.median(times)) if times else 0.0)


def _check_test_labels(shapes):
    labels = np.array([-1 if g.label is None else g.label for g in shapes])
    if (labels < 0).any():
        raise ValueError("evaluation set needs a label on every shape")
    return labels


def train_autoencoder(
    train: Sequence[ShapeGraph],
    template: Template,
    kernel: KernelConfig,
    config: TrainConfig = TrainConfig(),
    encoder: str = "varigrad",
    test: Optional[Sequence[ShapeGraph]] = None,
    model_config: Optional[ModelConfig] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Minimize the mean squared varifold distance between reconstructions and inputs."""
    train = list(train)
    if not train:
        raise EmptyDataset("training set is empty")
    mc = model_config or ModelConfig(task="autoencoder", encoder=encoder, latent_dim=config.latent_dim, kernel_a=kernel.a)
    model = build_model(mc, template, kernel, config.rng_seed)
    x = model.prepare(train, config.threads)
    if encoder == "varigrad" and config.normalize_fields:
        _set_field_scale(model, x)
    if test is not None:
        test = list(test)
        xt = model.prepare(test, config.threads)
    edges = template.shape.edges
    opt = Adam(AdamConfig(lr=config.learning_rate))
    rng = np.random.default_rng(config.rng_seed)
    metrics: list[dict] = []

    def emit(row):
        metrics.append(row)
        if on_epoch:
            on_epoch(row)

    e0 = float(recon_errors(model, x, train, kernel).mean())
    emit(dict(epoch=0, split="train", loss=e0, accuracy_or_error=e0, seconds_per_batch=0.0))
    if test is not None:
        e = float(recon_errors(model, xt, test, kernel).mean())
        emit(dict(epoch=0, split="test", loss=e, accuracy_or_error=e, seconds_per_batch=0.0))

    times = []
    for epoch in range(1, config.epochs + 1):
        tot, epoch_times = 0.0, []
        for idx in _batches(len(train), config.batch_size, rng):
            t0 = time.perf_counter()
            verts = model.forward(model.encoder.take(x, idx), train=True)
            grads = np.zeros_like(verts)
            for r, i in enumerate(idx):
                out = ShapeGraph(verts[r], edges)
                tot += dist_sq(out, train[i], kernel, clamp=True)
                grads[r] = grad_dist_sq(out, train[i], kernel, clamp=True)
            model.backward(grads / len(idx))
            params, pgrads = model.parameters()
            _clip(pgrads, config.grad_clip)
            opt.step(params, pgrads)
            epoch_times.append(time.perf_counter() - t0)
        spb = float(np.median(epoch_times))
        times.append(spb)
        emit(dict(epoch=epoch, split="train", loss=tot / len(train), accuracy_or_error=tot / len(train), seconds_per_batch=spb))
        if test is not None:
            e = float(recon_errors(model, xt, test, kernel).mean())
            emit(dict(epoch=epoch, split="test", loss=e, accuracy_or_error=e, seconds_per_batch=spb))
        log.info("epoch %d recon %.5f", epoch, tot / len(train))
    return TrainResult(model, opt, metrics, float(np.median(times)) if times else 0.0)
