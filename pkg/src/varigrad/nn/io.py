"""Model files: a JSON manifest plus a flat little-endian float64 blob.

A model directory holds

    model.json              manifest (config, array names/shapes, optimizer step)
    model.bin               all arrays concatenated in manifest order
    template.json           template shape
    template.json.meta.json {"sigma_ratio": r}
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

import numpy as np

from ..features import load_template, save_template
from ..varifold import KernelConfig
from .models import Model, ModelConfig, build_model
from .optim import Adam, AdamConfig

FORMAT = "varigrad-model"
VERSION = 1
MANIFEST, BLOB, TEMPLATE = "model.json", "model.bin", "template.json"


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def save_model(directory, model: Model, optimizer: Optional[Adam] = None, extra: Optional[dict] = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    arrays = list(model.state())
    if optimizer is not None:
        params, _ = model.parameters()
        for name in params:
            if name in optimizer.m:
                arrays.append((f"adam.m.{name}", optimizer.m[name]))
                arrays.append((f"adam.v.{name}", optimizer.v[name]))
    entries, chunks = [], []
    for name, a in arrays:
        entries.append({"name": name, "shape": list(a.shape)})
        chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "template": TEMPLATE,
        "blob": BLOB,
        "arrays": entries,
        "optimizer": None
        if optimizer is None
        else {"step": optimizer.t, **{k: getattr(optimizer.config, k) for k in ("lr", "beta1", "beta2", "eps")}},
    }
    if extra:
        manifest["extra"] = extra
    save_template(d / TEMPLATE, model.template, model.config.sigma_ratio)
    _atomic_write(d / BLOB, b"".join(chunks))
    _atomic_write(d / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True).encode())
    return d


def read_manifest(directory) -> dict:
    with open(Path(directory) / MANIFEST) as f:
        manifest = json.load(f)
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{directory}: not a {FORMAT} directory")
    if manifest.get("version") != VERSION:
        raise ValueError(f"{directory}: unsupported model version {manifest.get('version')}")
    return manifest


def load_model(directory) -> tuple[Model, Optional[Adam]]:
    d = Path(directory)
    manifest = read_manifest(d)
    config = ModelConfig.from_dict(manifest["config"])
    template, _ = load_template(d / manifest["template"])
    model = build_model(config, template, KernelConfig(config.kernel_a), rng_seed=None)
    raw = np.frombuffer((d / manifest["blob"]).read_bytes(), dtype="<f8")
    arrays, pos = {}, 0
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if pos + n > raw.size:
            raise ValueError(f"{d / manifest['blob']}: blob too short for array {e['name']}")
        arrays[e["name"]] = raw[pos : pos + n].reshape(e["shape"]).astype(np.float64)
        pos += n
    if pos != raw.size:
        raise ValueError(f"{d / manifest['blob']}: {raw.size - pos} trailing values")
    model.load_state(arrays)
    opt = None
    if manifest.get("optimizer"):
        o = manifest["optimizer"]
        opt = Adam(AdamConfig(o["lr"], o["beta1"], o["beta2"], o["eps"]))
        opt.t = o["step"]
        for name in model.parameters()[0]:
            if f"adam.m.{name}" in arrays:
                opt.m[name] = arrays[f"adam.m.{name}"]
                opt.v[name] = arrays[f"adam.v.{name}"]
    return model, opt
