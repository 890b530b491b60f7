"""Checkpoint and loss-history files.

Checkpoint layout: ``DPMTSECK`` magic, uint32 version, uint32 header length,
a UTF-8 JSON header naming every array with its shape, then the arrays as
little-endian float64 in header order.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import List, Optional

import numpy as np

from .denoiser import PARAM_NAMES, Adam, LossRecord, TrainConfig

MAGIC = b"DPMTSECK"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


def save_checkpoint(path, params: dict, meta: dict, optimizer: Optional[Adam] = None,
                    history: Optional[List[LossRecord]] = None) -> None:
    arrays = [(f"param/{k}", params[k]) for k in PARAM_NAMES]
    if optimizer is not None:
        arrays += [(f"adam_m/{k}", optimizer.m[k]) for k in PARAM_NAMES]
        arrays += [(f"adam_v/{k}", optimizer.v[k]) for k in PARAM_NAMES]
    header = {
        "arrays": [{"name": n, "shape": list(a.shape), "dtype": "<f8"} for n, a in arrays],
        "meta": meta,
        "adam_step": optimizer.step if optimizer is not None else None,
        "history": [[r.epoch, r.step, r.loss] for r in (history or [])],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path, train_config: Optional[TrainConfig] = None):
    """Returns ``(params, meta, optimizer_or_None, history)``."""
    with open(path, "rb") as fh:
        magic, version, n = _PREFIX.unpack(fh.read(_PREFIX.size))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(n).decode("utf-8"))
        arrays = {}
        for spec in header["arrays"]:
            count = int(np.prod(spec["shape"], dtype=np.int64))
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError(f"{path}: truncated array {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(spec["shape"]).copy()
    params = {k: arrays[f"param/{k}"] for k in PARAM_NAMES}
    optimizer = None
    if header.get("adam_step") is not None:
        optimizer = Adam(params, train_config or TrainConfig())
        optimizer.step = int(header["adam_step"])
        optimizer.m = {k: arrays[f"adam_m/{k}"] for k in PARAM_NAMES}
        optimizer.v = {k: arrays[f"adam_v/{k}"] for k in PARAM_NAMES}
    history = [LossRecord(int(e), int(s), float(v)) for e, s, v in header.get("history", [])]
    return params, header["meta"], optimizer, history


def write_loss_csv(path, history: List[LossRecord]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "step", "loss"])
        for r in history:
            w.writerow([r.epoch, r.step, repr(r.loss)])


def read_loss_csv(path) -> List[LossRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [LossRecord(int(r["epoch"]), int(r["step"]), float(r["loss"])) for r in csv.DictReader(fh)]
