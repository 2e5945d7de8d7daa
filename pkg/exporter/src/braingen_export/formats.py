"""Writers for the two on-disk formats the generator package reads.

Trial archive directory:
    manifest.json      ArchiveManifest fields, UTF-8 JSON
    trials.f32         float32 little-endian, row-major [trial][channel][time]
    trials.index.json  [{trial_id, subject, image_id, repetition, split, row}]

Embedding file pair:
    <name>.f32         float32 little-endian, row-major n x dim
    <name>.index.json  {"dim": dim, "ids": [...]} in row order

All JSON is written with sorted keys and fixed separators so that a
re-export of unchanged sources is byte-identical.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .job import ExportError


def _dump_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def write_archive(path: Path, manifest: dict, index: list[dict],
                  data: np.ndarray) -> Path:
    if data.ndim != 3 or len(index) != data.shape[0]:
        raise ExportError(
            f"archive data {data.shape} does not match {len(index)} index rows")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(data, dtype="<f4").tofile(path / "trials.f32")
    _dump_json(path / "manifest.json", manifest)
    _dump_json(path / "trials.index.json", index)
    return path


def write_embeddings(path: Path, ids: list[str], vectors: np.ndarray) -> Path:
    if vectors.shape[0] != len(ids):
        raise ExportError(
            f"{vectors.shape[0]} embedding rows for {len(ids)} image ids")
    path = Path(path)
    if path.suffix != ".f32":
        raise ExportError(f"embedding file must end in .f32, got {path.name}")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(vectors, dtype="<f4").tofile(path)
    _dump_json(path.with_name(path.name[:-4] + ".index.json"),
               {"dim": int(vectors.shape[1]), "ids": list(ids)})
    return path
