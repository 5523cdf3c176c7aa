"""Checkpoint layout: one SCST tensor per array plus a JSON index.

Arrays are stored float32 (the on-disk float width); training state is kept
so a reloaded model continues deterministically from the stored iteration.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import ModelParams
from .tensorio import read_tensor, write_tensor

INDEX_NAME = "index.json"


def save_checkpoint(directory, params: ModelParams) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, arr in params.param_items():
        fname = f"{name}.scst"
        write_tensor(arr.astype(np.float32), out / fname)
        arrays[name] = fname
    velocity = {}
    for name, _ in params.param_items():
        fname = f"v_{name}.scst"
        write_tensor(params.velocity[name].astype(np.float32), out / fname)
        velocity[name] = fname
    index = {
        "format": 1,
        "iteration": params.iteration,
        "d_in": params.d_in,
        "d_h": params.d_h,
        "k_sub": params.k_sub,
        "arrays": arrays,
        "velocity": velocity,
    }
    path = out / INDEX_NAME
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(index, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    return path


def load_checkpoint(directory) -> ModelParams:
    root = Path(directory)
    with open(root / INDEX_NAME, "r", encoding="utf-8") as fh:
        index = json.load(fh)
    if index.get("format") != 1:
        raise ValueError(f"unsupported checkpoint format {index.get('format')!r}")

    def arr(name):
        return read_tensor(root / index["arrays"][name]).astype(np.float64)

    params = ModelParams(
        arr("w1"), arr("b1"), arr("w_bi"), arr("b_bi"),
        w_sub=arr("w_sub") if "w_sub" in index["arrays"] else None,
        b_sub=arr("b_sub") if "b_sub" in index["arrays"] else None,
        iteration=index["iteration"],
    )
    for name, fname in index["velocity"].items():
        params.velocity[name] = read_tensor(root / fname).astype(np.float64)
    return params
