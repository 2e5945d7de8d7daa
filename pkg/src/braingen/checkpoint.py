"""Checkpoint file format.

Byte layout:
    magic   b"BGCK"
    u32 LE  header length in bytes
    header  UTF-8 JSON (see below)
    blocks  named parameter tensors, float32 little-endian, row-major,
            concatenated in header order

Header fields: format_version, denoiser_config, schedule {T, beta_start,
beta_end}, seed, epoch, normalization {mean, std} or null, params
[{name, shape}, ...].
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError
from .store import NormalizationStats
from .substrate import DTYPE64
from .unet import Denoiser, DenoiserConfig

MAGIC = b"BGCK"
FORMAT_VERSION = 1


def _config_dict(cfg: DenoiserConfig) -> dict:
    d = asdict(cfg)
    d["fusion"] = cfg.fusion.value
    return d


def save_checkpoint(path, model: Denoiser, schedule_params: dict, seed: int,
                    epoch: int, stats: NormalizationStats | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = [(name, p.detach().cpu().numpy().astype("<f4"))
              for name, p in model.named_parameters()]
    header = {
        "format_version": FORMAT_VERSION,
        "denoiser_config": _config_dict(model.cfg),
        "schedule": schedule_params,
        "seed": seed,
        "epoch": epoch,
        "normalization": None if stats is None else
            {"mean": stats.mean.tolist(), "std": stats.std.tolist()},
        "params": [{"name": name, "shape": list(arr.shape)} for name, arr in params],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in params:
            fh.write(arr.tobytes())
    return path


def load_checkpoint(path, dtype=DTYPE64):
    """Returns (model, header dict, NormalizationStats or None)."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise FormatError(f"{path}: not a checkpoint (bad magic)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {header.get('format_version')}")
        cfg = DenoiserConfig(**header["denoiser_config"])
        model = Denoiser(cfg, dtype=dtype)
        state = dict(model.named_parameters())
        if [p["name"] for p in header["params"]] != list(state):
            raise FormatError(f"{path}: parameter names do not match the config's layout")
        with torch.no_grad():
            for entry in header["params"]:
                shape = tuple(entry["shape"])
                n = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
                tensor = state[entry["name"]]
                if tuple(tensor.shape) != shape:
                    raise FormatError(
                        f"{path}: {entry['name']} stored as {shape}, model expects "
                        f"{tuple(tensor.shape)}"
                    )
                tensor.copy_(torch.as_tensor(arr.astype(np.float64), dtype=dtype))
    norm = header.get("normalization")
    stats = None
    if norm is not None:
        stats = NormalizationStats(mean=np.asarray(norm["mean"], dtype=np.float64),
                                   std=np.asarray(norm["std"], dtype=np.float64))
    return model, header, stats
