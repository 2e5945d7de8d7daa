"""On-disk trial archive: epoched channels x time matrices paired with
image IDs, plus normalization, repetition averaging, and batching.

Directory layout:
    manifest.json      -- ArchiveManifest fields (UTF-8 JSON)
    trials.f32         -- float32 little-endian, row-major [trial][channel][time]
    trials.index.json  -- array of {trial_id, subject, image_id, repetition, split, row}
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

MANIFEST_NAME = "manifest.json"
DATA_NAME = "trials.f32"
INDEX_NAME = "trials.index.json"


@dataclass
class ArchiveManifest:
    dataset_id: str
    n_channels: int
    n_timepoints: int
    sampling_rate_hz: float
    channel_names: list[str]
    subjects: list[str]
    splits: dict[str, dict[str, list[int]]]  # subject -> split name -> rows
    stim_onset_sample: int | None = None

    def validate(self) -> None:
        if len(self.channel_names) != self.n_channels:
            raise FormatError(
                f"manifest: {len(self.channel_names)} channel_names for "
                f"n_channels={self.n_channels}"
            )
        for subject, splits in self.splits.items():
            seen: dict[int, str] = {}
            for split, rows in splits.items():
                for row in rows:
                    if row in seen:
                        raise FormatError(
                            f"manifest: trial row {row} of subject {subject} in both "
                            f"{seen[row]!r} and {split!r}"
                        )
                    seen[row] = split


@dataclass
class TrialRecord:
    trial_id: str
    subject: str
    image_id: str
    repetition: int
    split: str
    row: int
    samples: np.ndarray | None = field(default=None, repr=False)


class Archive:
    """Lazily readable trial archive; safe for concurrent reads."""

    def __init__(self, path: Path, manifest: ArchiveManifest, index: list[TrialRecord]):
        self.path = Path(path)
        self.manifest = manifest
        self.index = index
        self._data = np.memmap(
            self.path / DATA_NAME,
            dtype="<f4",
            mode="r",
            shape=(len(index), manifest.n_channels, manifest.n_timepoints),
        )

    def __len__(self) -> int:
        return len(self.index)

    def samples(self, row: int) -> np.ndarray:
        return np.asarray(self._data[row], dtype=np.float64)

    def trial(self, row: int) -> TrialRecord:
        rec = self.index[row]
        return TrialRecord(rec.trial_id, rec.subject, rec.image_id, rec.repetition,
                           rec.split, rec.row, self.samples(row))

    def rows_for(self, subject: str, split: str) -> list[int]:
        return [r.row for r in self.index if r.subject == subject and r.split == split]


def open_archive(path) -> Archive:
    path = Path(path)
    for name in (MANIFEST_NAME, DATA_NAME, INDEX_NAME):
        if not (path / name).exists():
            raise FormatError(f"archive {path}: missing {name}")
    with open(path / MANIFEST_NAME, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        manifest = ArchiveManifest(**raw)
    except TypeError as exc:
        raise FormatError(f"archive {path}: bad manifest fields ({exc})") from exc
    manifest.validate()

    with open(path / INDEX_NAME, encoding="utf-8") as fh:
        entries = json.load(fh)
    index = [TrialRecord(**e) for e in entries]
    for i, rec in enumerate(index):
        if rec.row != i:
            raise FormatError(f"archive {path}: index entry {i} claims row {rec.row}")

    expected = len(index) * manifest.n_channels * manifest.n_timepoints * 4
    actual = (path / DATA_NAME).stat().st_size
    if expected != actual:
        raise FormatError(
            f"archive {path}: {DATA_NAME} holds {actual} bytes, manifest implies {expected}"
        )
    for subject, splits in manifest.splits.items():
        for split, rows in splits.items():
            for row in rows:
                if not 0 <= row < len(index):
                    raise FormatError(f"archive {path}: split row {row} out of range")
                rec = index[row]
                if rec.subject != subject or rec.split != split:
                    raise FormatError(
                        f"archive {path}: row {row} indexed as {rec.subject}/{rec.split} "
                        f"but listed under {subject}/{split}"
                    )
    return Archive(path, manifest, index)


def write_archive(path, manifest: ArchiveManifest, records: list[TrialRecord]) -> Path:
    """Write a complete archive; `records` must carry samples and be in row order."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest.validate()
    data = np.empty((len(records), manifest.n_channels, manifest.n_timepoints), dtype="<f4")
    entries = []
    for i, rec in enumerate(records):
        if rec.samples is None:
            raise DataError(f"record {rec.trial_id} has no samples")
        if rec.samples.shape != (manifest.n_channels, manifest.n_timepoints):
            raise FormatError(
                f"record {rec.trial_id}: shape {rec.samples.shape} != "
                f"({manifest.n_channels}, {manifest.n_timepoints})"
            )
        data[i] = rec.samples
        entries.append(
            {"trial_id": rec.trial_id, "subject": rec.subject, "image_id": rec.image_id,
             "repetition": rec.repetition, "split": rec.split, "row": i}
        )
    data.tofile(path / DATA_NAME)
    with open(path / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(asdict(manifest), fh, indent=1, sort_keys=True)
    with open(path / INDEX_NAME, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=0)
    return path


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean/std (sample convention, ddof=1) from the training split."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if np.any(self.std <= 0):
            bad = int(np.argmin(self.std))
            raise DataError(f"channel {bad} has non-positive std {self.std[bad]}")


def compute_stats(archive: Archive, subject: str, split: str = "train",
                  channel_names: list[str] | None = None) -> NormalizationStats:
    rows = archive.rows_for(subject, split)
    if not rows:
        raise DataError(f"no {split!r} trials for subject {subject!r}")
    stacked = np.stack([archive.samples(r) for r in rows])  # (n, Nc, Nt)
    pooled = stacked.transpose(1, 0, 2).reshape(stacked.shape[1], -1)
    mean = pooled.mean(axis=1)
    std = pooled.std(axis=1, ddof=1)
    if np.any(std <= 0):
        bad = int(np.argmin(std))
        name = (channel_names or archive.manifest.channel_names)[bad]
        raise DataError(f"zero-variance channel {name!r} in {subject}/{split}")
    return NormalizationStats(mean=mean, std=std)


def normalize(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """(x - mean) / std per channel; works on (Nc, Nt) or (n, Nc, Nt)."""
    return (x - stats.mean[..., :, None]) / stats.std[..., :, None]


def denormalize(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return x * stats.std[..., :, None] + stats.mean[..., :, None]


def average_repetitions(archive: Archive, subject: str, split: str):
    """Mean over repetitions per image_id, plus the grand average over all trials."""
    rows = archive.rows_for(subject, split)
    if not rows:
        raise DataError(f"no {split!r} trials for subject {subject!r}")
    by_image: dict[str, list[int]] = {}
    for r in rows:
        by_image.setdefault(archive.index[r].image_id, []).append(r)
    averages = {
        image_id: np.mean([archive.samples(r) for r in group], axis=0)
        for image_id, group in by_image.items()
    }
    grand = np.mean([archive.samples(r) for r in rows], axis=0)
    return averages, grand


def make_batches(archive: Archive, subject: str, split: str, batch_size: int,
                 seed: int, epoch: int = 0):
    """Deterministic seeded shuffle; every trial exactly once, last batch partial."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    rows = np.array(archive.rows_for(subject, split))
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, epoch]))
    rng.shuffle(rows)
    for start in range(0, len(rows), batch_size):
        chunk = rows[start:start + batch_size]
        signals = np.stack([archive.samples(r) for r in chunk])
        image_ids = [archive.index[r].image_id for r in chunk]
        yield signals, image_ids
