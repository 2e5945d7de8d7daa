"""Deterministic synthetic dataset fabrication for tests and demos.

Each image's clean signal is a fixed smooth pattern driven by the leading
coordinates of its synthetic embedding, so the image -> signal mapping is
actually learnable from the condition. Trials add Gaussian noise on top.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .embeddings import synthetic_embedding, synthetic_index, write_embedding_file
from .store import ArchiveManifest, TrialRecord, write_archive
from .topoviz import disk_montage, save_montage

N_BASIS = 8


def _basis(n_channels: int, n_timepoints: int) -> np.ndarray:
    xs = np.linspace(0.0, 1.0, n_channels)
    ts = np.linspace(0.0, 1.0, n_timepoints)
    patterns = []
    for k in range(N_BASIS):
        spatial = np.sin(np.pi * (k % 4 + 1) * xs + 0.3 * k)
        temporal = np.sin(2.0 * np.pi * (k // 4 + 1) * ts + 0.5 * k)
        b = np.outer(spatial, temporal)
        patterns.append(b / b.std())
    return np.stack(patterns)


def clean_signal(seed: int, image_id: str, n_channels: int, n_timepoints: int,
                 amplitude: float = 2.0) -> np.ndarray:
    basis = _basis(n_channels, n_timepoints)
    weights = synthetic_embedding(seed, image_id, N_BASIS)
    return amplitude * np.tensordot(weights, basis, axes=1)


def _trial_rng(seed: int, subject: str, image_id: str, rep: int):
    digest = hashlib.sha256(f"{subject}|{image_id}|{rep}".encode()).digest()
    entropy = [seed & 0xFFFFFFFF] + [int.from_bytes(digest[i:i + 4], "little")
                                     for i in range(0, 12, 4)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def make_synthetic_dataset(out_dir, n_subjects: int = 1, n_images: int = 8,
                           train_reps: int = 2, test_reps: int = 2,
                           n_channels: int = 8, n_timepoints: int = 32,
                           rate_hz: float = 250.0, noise_std: float = 0.1,
                           embed_dim: int = 768, seed: int = 0,
                           n_train_trials: int | None = None):
    """Write archive + embedding pair + montage; returns their paths.

    If n_train_trials is given it overrides train_reps and distributes that
    many trials round-robin over the images.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    subjects = [f"s{i + 1:02d}" for i in range(n_subjects)]
    image_ids = [f"img_{i:03d}" for i in range(n_images)]
    channel_names = [f"ch{c:02d}" for c in range(n_channels)]

    rng_gain = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 991]))
    gains = rng_gain.uniform(0.5, 2.0, size=n_channels)
    offsets = rng_gain.uniform(-1.0, 1.0, size=n_channels)

    if n_train_trials is not None:
        reps_per_image = [n_train_trials // n_images +
                          (1 if i < n_train_trials % n_images else 0)
                          for i in range(n_images)]
    else:
        reps_per_image = [train_reps] * n_images

    records: list[TrialRecord] = []
    splits: dict[str, dict[str, list[int]]] = {}
    for subject in subjects:
        splits[subject] = {"train": [], "test": []}
        for split, reps_of in (("train", reps_per_image),
                               ("test", [test_reps] * n_images)):
            for img_i, image_id in enumerate(image_ids):
                clean = clean_signal(seed, image_id, n_channels, n_timepoints)
                clean = gains[:, None] * clean + offsets[:, None]
                for rep in range(reps_of[img_i]):
                    rng = _trial_rng(seed, subject, f"{split}:{image_id}", rep)
                    samples = clean + noise_std * rng.standard_normal(clean.shape)
                    row = len(records)
                    records.append(TrialRecord(
                        trial_id=f"{subject}_{split}_{image_id}_r{rep}",
                        subject=subject, image_id=image_id, repetition=rep,
                        split=split, row=row,
                        samples=samples.astype(np.float32)))
                    splits[subject][split].append(row)

    manifest = ArchiveManifest(
        dataset_id=f"synthetic-{seed}",
        n_channels=n_channels, n_timepoints=n_timepoints,
        sampling_rate_hz=rate_hz, channel_names=channel_names,
        subjects=subjects, splits=splits, stim_onset_sample=0,
    )
    archive_path = write_archive(out_dir / "archive", manifest, records)
    emb_path = write_embedding_file(
        out_dir / "embeddings.f32", synthetic_index(seed, image_ids, embed_dim))
    montage_path = save_montage(disk_montage(channel_names), out_dir / "montage.csv")
    return archive_path, emb_path, montage_path
