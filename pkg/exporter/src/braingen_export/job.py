"""Export job description and validation.

Source layout (one directory per subject under `source_root`):

    <source_root>/<subject>/train_epochs.npz
    <source_root>/<subject>/test_epochs.npz

Each .npz holds:
    data          float32 (n_images, n_reps, n_channels, n_timepoints)
    image_ids     str array, one id per image row
    channel_names str array
    rate_hz       scalar sampling rate

Stimulus images live flat in `image_dir` as <image_id>.<ext> with ext one
of png/jpg/jpeg/bmp.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

SPLIT_FILES = {"train": "train_epochs.npz", "test": "test_epochs.npz"}
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


class ExportError(RuntimeError):
    """Raised for any invalid source material; the message names the file."""


@dataclass
class ExportJob:
    source_root: Path
    image_dir: Path
    archive_out: Path
    embeddings_out: Path
    subjects: list[str]
    dataset_id: str = "export"
    stim_onset_sample: int = 0

    def __post_init__(self):
        self.source_root = Path(self.source_root)
        self.image_dir = Path(self.image_dir)
        self.archive_out = Path(self.archive_out)
        self.embeddings_out = Path(self.embeddings_out)
        if not self.subjects:
            raise ExportError("export job lists no subjects")
        missing = [s for s in self.subjects
                   if not (self.source_root / s).is_dir()]
        if missing:
            raise ExportError(
                f"subjects missing under {self.source_root}: {missing}")

    def epoch_file(self, subject: str, split: str) -> Path:
        path = self.source_root / subject / SPLIT_FILES[split]
        if not path.exists():
            raise ExportError(f"missing epoch file {path}")
        return path

    def image_file(self, image_id: str) -> Path:
        for ext in IMAGE_EXTENSIONS:
            path = self.image_dir / f"{image_id}{ext}"
            if path.exists():
                return path
        raise ExportError(
            f"no image file for id {image_id!r} under {self.image_dir}")
