"""Checkpoint container: named float64 tensors plus a JSON header, in one ``.npz``.

Layout::

    __header__      uint8 bytes of a UTF-8 JSON object
    param/<name>    model tensors
    adam.m/<name>   optimizer first moments   (optional)
    adam.v/<name>   optimizer second moments  (optional)

The header always carries ``format_version``, ``tensors`` (name -> shape),
``seed`` and whatever the writer adds (encoder config, step counts, ...).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optim import AdamWState

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], *, seed: int, header: dict | None = None,
                    optimizer: AdamWState | None = None) -> None:
    meta = dict(header or {})
    meta["format_version"] = FORMAT_VERSION
    meta["seed"] = int(seed)
    meta["tensors"] = {k: list(v.shape) for k, v in tensors.items()}
    arrays = {f"param/{k}": np.asarray(v, dtype=np.float64) for k, v in tensors.items()}
    if optimizer is not None:
        meta["optimizer"] = {
            "kind": "adamw",
            "lr": optimizer.lr,
            "weight_decay": optimizer.weight_decay,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step": optimizer.step,
        }
        for k, m in optimizer.m.items():
            arrays[f"adam.m/{k}"] = m
            arrays[f"adam.v/{k}"] = optimizer.v[k]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    arrays["__header__"] = np.frombuffer(blob, dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray], AdamWState | None]:
    with np.load(path, allow_pickle=False) as z:
        if "__header__" not in z.files:
            raise CheckpointError(f"{path}: missing header")
        meta = json.loads(bytes(z["__header__"]).decode("utf-8"))
        version = meta.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format_version {version!r}")
        tensors = {}
        for name, shape in meta["tensors"].items():
            arr = z[f"param/{name}"]
            if list(arr.shape) != shape:
                raise CheckpointError(f"{path}: tensor {name!r} has shape {arr.shape}, header says {shape}")
            tensors[name] = arr.astype(np.float64)
        opt = None
        if "optimizer" in meta:
            o = meta["optimizer"]
            opt = AdamWState(lr=o["lr"], weight_decay=o["weight_decay"], beta1=o["beta1"],
                             beta2=o["beta2"], eps=o["eps"], step=o["step"])
            for f in z.files:
                if f.startswith("adam.m/"):
                    key = f[len("adam.m/"):]
                    opt.m[key] = z[f].copy()
                    opt.v[key] = z[f"adam.v/{key}"].copy()
    return meta, tensors, opt
