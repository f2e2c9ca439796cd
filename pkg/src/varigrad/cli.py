"""Command-line entry point: ``varigrad <command> [flags]``.

Commands: gen, gradcheck, train, eval, invariance. Every command writes a
``manifest.json`` (flags, seed, timestamps, outputs) into its ``--out``
directory before writing results. Exit codes: 0 success, 1 usage or
validation error, 2 numerical check failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import DatasetError, SyntheticSpec, generate, make_reparam_set, split
from .features import make_template
from .geometry import GeometryError, ShapeGraph, load_dataset, load_shape, polyline, closed_polyline, write_dataset
from .nn.io import load_model, save_model
from .nn.models import AutoEncoder, Classifier, ModelConfig
from .nn.train import METRIC_FIELDS, TrainConfig, evaluate_classifier, recon_errors, train_autoencoder, train_classifier
from .varifold import KernelConfig, check_grad, default_kernel, lift, varifold_dist_sq

log = logging.getLogger("varigrad")

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, args.threads)
    env = os.environ.get("VARIGRAD_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"VARIGRAD_THREADS must be an integer, got {env!r}") from None


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode()


class Run:
    """Manifest bookkeeping for one command invocation."""

    def __init__(self, args, outputs: list[str]):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        flags = {k: v for k, v in vars(args).items() if k != "func"}
        self.manifest = {
            "command": args.command,
            "config": flags,
            "rng_seed": getattr(args, "seed", None),
            "code_version": __version__,
            "started_at": datetime.now(timezone.utc).isoformat(),
            "finished_at": None,
            "outputs": outputs,
        }
        self._write()

    def _write(self):
        _atomic_write(self.out / "manifest.json", _json_bytes(self.manifest))

    def path(self, name: str) -> Path:
        return self.out / name

    def finish(self, **extra):
        self.manifest["finished_at"] = datetime.now(timezone.utc).isoformat()
        self.manifest.update(extra)
        self._write()


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    spec = SyntheticSpec(
        kind=args.kind,
        class_count=args.classes,
        samples_per_class=args.per_class,
        vertex_range=(args.vmin, args.vmax),
        noise_scale=args.noise,
        rng_seed=args.seed,
        phase_spread=args.phase_spread,
    )
    run = Run(args, ["train.jsonl", "test.jsonl"])
    train, test = split(generate(spec), args.test_fraction, args.seed)
    _atomic_write(run.path("train.jsonl"), write_dataset(train.shapes))
    _atomic_write(run.path("test.jsonl"), write_dataset(test.shapes))
    run.finish(counts={"train": len(train), "test": len(test)})
    print(f"wrote {len(train)} train / {len(test)} test shapes to {run.out}")
    return EXIT_OK


def random_curve(rng: np.random.Generator, n: int) -> ShapeGraph:
    """Random-walk polyline (closed with probability 1/2) with n vertices."""
    pts = np.cumsum(0.15 * rng.standard_normal((n, 3)), axis=0)
    return closed_polyline(pts) if rng.random() < 0.5 else polyline(pts)


def cmd_gradcheck(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if not (args.h > 0 and args.tol > 0):
        raise UsageError("--h and --tol must be positive")
    run = Run(args, ["gradcheck.json"]) if args.out else None
    rng = np.random.default_rng(args.seed)
    worst, rows = 0.0, []
    t0 = time.perf_counter()
    for i in range(args.n):
        g1 = random_curve(rng, int(rng.integers(args.vmin, args.vmax + 1)))
        g2 = random_curve(rng, int(rng.integers(args.vmin, args.vmax + 1)))
        k = default_kernel(g1, args.sigma_ratio)
        rep = check_grad(g1, g2, k, args.h, args.tol)
        worst = max(worst, rep.max_rel_err)
        rows.append({"pair": i, "max_rel_err": rep.max_rel_err, "max_abs_err": rep.max_abs_err})
    ok = worst <= args.tol
    report = {"n": args.n, "h": args.h, "tol": args.tol, "max_rel_err": worst, "passed": ok, "pairs": rows}
    if run:
        _atomic_write(run.path("gradcheck.json"), _json_bytes(report))
        run.finish(passed=ok, seconds=time.perf_counter() - t0)
    print(f"gradcheck: {args.n} pairs, max relative error {worst:.3e} (tol {args.tol:g}) -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def _pick_template(args, train: list[ShapeGraph]):
    if args.template:
        if not Path(args.template).exists():
            raise UsageError(f"template file not found: {args.template}")
        return make_template(load_shape(args.template))
    if not 0 <= args.template_index < len(train):
        raise UsageError(f"--template-index {args.template_index} out of range for {len(train)} training shapes")
    order = np.random.default_rng(args.seed).permutation(len(train))
    return make_template(train[int(order[args.template_index])])


def _load_data(path, what: str) -> list[ShapeGraph]:
    if not Path(path).exists():
        raise UsageError(f"{what} file not found: {path}")
    return load_dataset(path)


def _write_metrics(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    _atomic_write(path, buf.getvalue().encode())


def cmd_train(args) -> int:
    train = _load_data(args.train, "training")
    test = _load_data(args.test, "test") if args.test else None
    template = _pick_template(args, train)
    kernel = default_kernel(template.shape, args.sigma_ratio)
    config = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        rng_seed=args.seed,
        latent_dim=args.latent_dim,
        threads=_threads(args),
        grad_clip=args.grad_clip,
    )
    labels = [g.label for g in train if g.label is not None]
    mc = ModelConfig(
        task=args.task,
        encoder=args.encoder,
        class_count=(max(labels) + 1) if (labels and args.task == "classifier") else 0,
        pool=args.pool,
        latent_dim=args.latent_dim,
        sigma_ratio=args.sigma_ratio,
        kernel_a=kernel.a,
    )
    run = Run(args, ["model.json", "model.bin", "template.json", "metrics.csv"])
    fn = train_classifier if args.task == "classifier" else train_autoencoder
    result = fn(train, template, kernel, config, encoder=args.encoder, test=test, model_config=mc)
    save_model(run.out, result.model, result.optimizer)
    _write_metrics(run.path("metrics.csv"), result.metrics)
    last = [r for r in result.metrics if r["epoch"] == config.epochs]
    run.finish(final=last, seconds_per_batch=result.seconds_per_batch, n_parameters=result.model.n_parameters())
    for r in last:
        print(f"epoch {r['epoch']} {r['split']}: loss {r['loss']:.6g} metric {r['accuracy_or_error']:.6g}")
    return EXIT_OK


def evaluate(model, shapes: list[ShapeGraph], threads: int = 1) -> dict:
    """Accuracy (classifier) or mean squared varifold error (auto-encoder) on ``shapes``."""
    x = model.prepare(shapes, threads)
    if isinstance(model, Classifier):
        labels = np.array([g.label for g in shapes])
        if any(g.label is None for g in shapes):
            raise UsageError("classifier evaluation needs labeled shapes")
        if labels.max() >= model.config.class_count:
            raise UsageError(f"label {labels.max()} outside the model's {model.config.class_count} classes")
        loss, acc = evaluate_classifier(model, x, labels)
        return {"task": "classifier", "n": len(shapes), "loss": loss, "accuracy": acc}
    errs = recon_errors(model, x, shapes, KernelConfig(model.config.kernel_a))
    return {"task": "autoencoder", "n": len(shapes), "loss": float(errs.mean()), "mean_error": float(errs.mean())}


def cmd_eval(args) -> int:
    if not (Path(args.model) / "model.json").exists():
        raise UsageError(f"no model found in {args.model}")
    model, _ = load_model(args.model)
    shapes = _load_data(args.data, "evaluation")
    if args.reparam:
        shapes = make_reparam_set(shapes, args.reparam, args.seed).shapes
    run = Run(args, [args.name])
    report = evaluate(model, shapes, _threads(args))
    report.update(encoder=model.config.encoder, data=str(args.data), reparam_per_shape=args.reparam, manifest="manifest.json")
    _atomic_write(run.path(args.name), _json_bytes(report))
    run.finish()
    metric = report.get("accuracy", report.get("mean_error"))
    print(f"{report['task']} on {report['n']} shapes: {metric:.6g}")
    return EXIT_OK


def output_spread(outputs: list[ShapeGraph], kernel) -> dict:
    """Mean pairwise squared varifold distance and per-vertex std of reconstructions."""
    mus = [lift(o, clamp=True) for o in outputs]
    n = len(mus)
    pair = [varifold_dist_sq(mus[i], mus[j], kernel) for i in range(n) for j in range(i + 1, n)]
    v = np.stack([o.vertices for o in outputs])
    std = np.sqrt(((v - v.mean(axis=0)) ** 2).sum(axis=2).mean(axis=0))
    return {
        "mean_pairwise_dist_sq": float(np.mean(pair)) if pair else 0.0,
        "per_vertex_std_mean": float(std.mean()),
        "per_vertex_std_max": float(std.max()),
        "max_vertex_deviation": float(np.abs(v - v[0]).max()),
    }


def cmd_invariance(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    source = _load_source(args)
    if args.permute_only:
        factor_range = (1.0, 1.0)
    else:
        factor_range = (args.factor_min, args.factor_max)
    variants = make_reparam_set([source], args.n, args.seed, factor_range=factor_range).shapes
    models = []
    for d in args.models:
        if not (Path(d) / "model.json").exists():
            raise UsageError(f"no model found in {d}")
        m, _ = load_model(d)
        if not isinstance(m, AutoEncoder):
            raise UsageError(f"{d} is not an auto-encoder")
        models.append((d, m))
    names = [f"reconstructions_{i}_{m.config.encoder}.jsonl" for i, (_, m) in enumerate(models)]
    run = Run(args, ["variants.jsonl", "invariance.json", *names])
    _atomic_write(run.path("variants.jsonl"), write_dataset(variants))
    report = {"n": args.n, "permute_only": args.permute_only, "models": [], "manifest": "manifest.json"}
    for (d, m), name in zip(models, names):
        outs = m.reconstruct(m.prepare(variants, _threads(args)))
        _atomic_write(run.path(name), write_dataset(outs))
        entry = {"model": str(d), "encoder": m.config.encoder, "reconstructions": name}
        entry.update(output_spread(outs, KernelConfig(m.config.kernel_a)))
        report["models"].append(entry)
    by_enc = {e["encoder"]: e["mean_pairwise_dist_sq"] for e in report["models"]}
    if "varigrad" in by_enc and "pointnet" in by_enc and by_enc["pointnet"] > 0:
        report["spread_ratio_varigrad_over_pointnet"] = by_enc["varigrad"] / by_enc["pointnet"]
    _atomic_write(run.path("invariance.json"), _json_bytes(report))
    run.finish()
    for e in report["models"]:
        print(f"{e['encoder']}: mean pairwise dist_sq {e['mean_pairwise_dist_sq']:.3e}, per-vertex std {e['per_vertex_std_mean']:.3e}")
    return EXIT_OK


def _load_source(args) -> ShapeGraph:
    if not Path(args.source).exists():
        raise UsageError(f"source file not found: {args.source}")
    if args.source.endswith(".jsonl"):
        shapes = load_dataset(args.source)
        if not 0 <= args.index < len(shapes):
            raise UsageError(f"--index {args.index} out of range for {len(shapes)} shapes")
        return shapes[args.index]
    return load_shape(args.source)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="varigrad", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic train/test dataset")
    g.add_argument("--kind", choices=["curve", "stickfigure"], default="curve")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--vmin", type=int, default=64)
    g.add_argument("--vmax", type=int, default=96)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--phase-spread", type=float, default=float(np.pi))
    g.add_argument("--test-fraction", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("gradcheck", help="check the analytic varifold gradient against finite differences")
    c.add_argument("--n", type=int, default=100)
    c.add_argument("--h", type=float, default=1e-5)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--vmin", type=int, default=10)
    c.add_argument("--vmax", type=int, default=40)
    c.add_argument("--sigma-ratio", type=float, default=0.2)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="train a classifier or auto-encoder")
    t.add_argument("--task", choices=["classifier", "autoencoder"], default="classifier")
    t.add_argument("--encoder", choices=["varigrad", "pointnet"], default="varigrad")
    t.add_argument("--train", required=True)
    t.add_argument("--test")
    t.add_argument("--template")
    t.add_argument("--template-index", type=int, default=0)
    t.add_argument("--sigma-ratio", type=float, default=0.2)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch-size", type=int, default=10)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--latent-dim", type=int, default=64)
    t.add_argument("--grad-clip", type=float)
    t.add_argument("--pool", action="store_true", help="closed-neighbourhood pooling after the last graph conv")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threads", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--reparam", type=int, default=0, help="evaluate on N random reparameterizations per shape")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--name", default="eval.json")
    e.add_argument("--threads", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("invariance", help="reconstruct many reparameterizations of one shape")
    i.add_argument("--models", nargs="+", required=True)
    i.add_argument("--source", required=True, help="shape .json file or dataset .jsonl (with --index)")
    i.add_argument("--index", type=int, default=0)
    i.add_argument("--n", type=int, default=100)
    i.add_argument("--permute-only", action="store_true")
    i.add_argument("--factor-min", type=float, default=0.7)
    i.add_argument("--factor-max", type=float, default=1.4)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--threads", type=int)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_invariance)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, GeometryError, DatasetError, ValueError, OSError) as exc:
        print(f"varigrad {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
