"""Convert per-subject epoch files into one trial archive."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .formats import write_archive
from .job import SPLIT_FILES, ExportError, ExportJob


def _load_epochs(path: Path):
    with np.load(path, allow_pickle=False) as npz:
        for key in ("data", "image_ids", "channel_names", "rate_hz"):
            if key not in npz:
                raise ExportError(f"{path}: missing array {key!r}")
        data = np.asarray(npz["data"], dtype=np.float32)
        image_ids = [str(i) for i in npz["image_ids"]]
        channels = [str(c) for c in npz["channel_names"]]
        rate = float(npz["rate_hz"])
    if data.ndim != 4:
        raise ExportError(
            f"{path}: epochs must be (images, reps, channels, times), got {data.shape}")
    if data.shape[0] != len(image_ids):
        raise ExportError(
            f"{path}: {data.shape[0]} image rows for {len(image_ids)} image ids")
    if data.shape[2] != len(channels):
        raise ExportError(
            f"{path}: {data.shape[2]} channels for {len(channels)} channel names")
    if not np.all(np.isfinite(data)):
        raise ExportError(f"{path}: non-finite sample values")
    return data, image_ids, channels, rate


def export_signals(job: ExportJob) -> Path:
    """Write the trial archive for every subject/split in the job.

    Trials are ordered subject-major, then train before test, then image
    order as stored, then repetition — a deterministic function of the
    sources, so re-export is byte-identical.
    """
    records: list[dict] = []
    trials: list[np.ndarray] = []
    splits: dict[str, dict[str, list[int]]] = {}
    reference: tuple | None = None
    channel_names: list[str] = []
    rate_hz = 0.0

    for subject in job.subjects:
        splits[subject] = {split: [] for split in SPLIT_FILES}
        for split in SPLIT_FILES:
            path = job.epoch_file(subject, split)
            data, image_ids, channels, rate = _load_epochs(path)
            shape = (data.shape[2], data.shape[3])
            if reference is None:
                reference = shape
                channel_names = channels
                rate_hz = rate
            elif shape != reference or channels != channel_names:
                raise ExportError(
                    f"{path}: epochs {shape} with channels {channels[:3]}... "
                    f"disagree with earlier files {reference}")
            for img_i, image_id in enumerate(image_ids):
                for rep in range(data.shape[1]):
                    row = len(records)
                    records.append({
                        "trial_id": f"{subject}_{split}_{image_id}_r{rep}",
                        "subject": subject, "image_id": image_id,
                        "repetition": rep, "split": split, "row": row,
                    })
                    trials.append(data[img_i, rep])
                    splits[subject][split].append(row)

    if reference is None:
        raise ExportError("export job produced no trials")
    manifest = {
        "dataset_id": job.dataset_id,
        "n_channels": reference[0],
        "n_timepoints": reference[1],
        "sampling_rate_hz": rate_hz,
        "channel_names": channel_names,
        "subjects": list(job.subjects),
        "splits": splits,
        "stim_onset_sample": job.stim_onset_sample,
    }
    return write_archive(job.archive_out, manifest, records,
                         np.stack(trials))


def unique_image_ids(job: ExportJob) -> list[str]:
    """All image ids referenced by the job's epoch files, sorted."""
    ids: set[str] = set()
    for subject in job.subjects:
        for split in SPLIT_FILES:
            with np.load(job.epoch_file(subject, split),
                         allow_pickle=False) as npz:
                if "image_ids" not in npz:
                    raise ExportError(
                        f"{job.epoch_file(subject, split)}: missing image_ids")
                ids.update(str(i) for i in npz["image_ids"])
    return sorted(ids)
