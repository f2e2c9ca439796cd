"""Shared setup for the experiment scripts: the 4-class synthetic curve set."""

from __future__ import annotations

import numpy as np

from varigrad.datasets import SyntheticSpec, generate, split
from varigrad.features import make_template
from varigrad.varifold import default_kernel

CURVES = SyntheticSpec(kind="curve", class_count=4, samples_per_class=100, vertex_range=(64, 96), rng_seed=7)


def curve_split(seed: int = 7, spec: SyntheticSpec = CURVES):
    """360/40 stratified split, template picked as shape 0 of a seeded shuffle."""
    train, test = split(generate(spec), 0.1, seed)
    order = np.random.default_rng(seed).permutation(len(train))
    template = make_template(train[int(order[0])])
    return train, test, template, default_kernel(template.shape, 0.2)
