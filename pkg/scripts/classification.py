"""Train VariGrad and PointNet classifiers; report clean and reparameterized accuracy.

    python scripts/classification.py [--seed 7] [--epochs 50] [--per-shape 10]
"""

import argparse
import time

from common import curve_split

from varigrad.datasets import make_reparam_set
from varigrad.nn.train import TrainConfig, evaluate_classifier, train_classifier


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--per-shape", type=int, default=10)
    args = p.parse_args()

    train, test, template, kernel = curve_split(args.seed)
    reparam = make_reparam_set(test, args.per_shape, args.seed)
    cfg = TrainConfig(epochs=args.epochs, rng_seed=args.seed)
    print(f"{'encoder':10s} {'clean':>7s} {'reparam':>8s} {'drop':>7s} {'s/batch':>8s} {'total s':>8s}")
    for enc in ("varigrad", "pointnet"):
        t0 = time.perf_counter()
        res = train_classifier(train, template, kernel, cfg, encoder=enc)
        m = res.model
        _, clean = evaluate_classifier(m, m.prepare(test.shapes), test.labels)
        _, rep = evaluate_classifier(m, m.prepare(reparam.shapes), reparam.labels)
        print(f"{enc:10s} {clean:7.3f} {rep:8.3f} {100 * (clean - rep):6.2f}p {res.seconds_per_batch:8.4f} {time.perf_counter() - t0:8.1f}")


if __name__ == "__main__":
    main()
