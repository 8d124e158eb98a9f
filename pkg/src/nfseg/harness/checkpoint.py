"""Single-file checkpoints.

Layout::

    8 bytes   magic b"NFSEGCKP"
    u32 LE    format version
    u64 LE    header length N
    N bytes   UTF-8 JSON header: config text, epoch, step, best validation
              IoU, Adam scalars, and a tensor index of {name, shape, offset}
    ...       concatenated little-endian float32 payloads

Tensor names carry a prefix: ``model/`` for parameters and batchnorm running
statistics, ``adam_m/`` and ``adam_v/`` for optimizer moments.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import LoadError
from .config import ExperimentConfig

MAGIC = b"NFSEGCKP"
VERSION = 1
_PAYLOAD_DTYPE = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: ExperimentConfig
    model_state: dict
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    adam_t: int = 0
    epoch: int = 0
    step: int = 0
    best_val_iou: float = float("nan")


def save_checkpoint(path, ckpt):
    groups = (("model", ckpt.model_state), ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v))
    index, payloads, offset = [], [], 0
    for prefix, tensors in groups:
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype=_PAYLOAD_DTYPE)
            index.append({"name": f"{prefix}/{name}", "shape": list(data.shape),
                          "offset": offset})
            payloads.append(data.tobytes())
            offset += data.nbytes
    header = {
        "config": ckpt.config.to_text(),
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "best_val_iou": ckpt.best_val_iou,
        "adam_t": ckpt.adam_t,
        "tensors": index,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for p in payloads:
            fh.write(p)


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise LoadError(f"{path} is not an nfseg checkpoint")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise LoadError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    body = memoryview(raw)[start + hlen:]
    groups = {"model": {}, "adam_m": {}, "adam_v": {}}
    for entry in header["tensors"]:
        prefix, name = entry["name"].split("/", 1)
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype=_PAYLOAD_DTYPE, count=count,
                            offset=entry["offset"]).reshape(shape)
        groups[prefix][name] = arr.astype(np.float32)
    return Checkpoint(
        config=ExperimentConfig.from_text(header["config"]),
        model_state=groups["model"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        adam_t=header["adam_t"],
        epoch=header["epoch"],
        step=header["step"],
        best_val_iou=header["best_val_iou"],
    )
