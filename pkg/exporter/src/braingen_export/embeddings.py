"""Compute one 768-d embedding row per unique image id.

The default encoder is the ViT-L/14 vision-language model (pooled image
embedding, eval mode, its own preprocessing); PixelHashEncoder is a
deterministic offline stand-in that depends only on decoded pixel content.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from .formats import write_embeddings
from .job import ExportError, ExportJob
from .signals import unique_image_ids

EMBED_DIM = 768


class PixelHashEncoder:
    """Deterministic pixel-content encoder for offline use and testing.

    Two files that decode to identical RGB pixels produce identical rows.
    """

    dim = EMBED_DIM

    def encode(self, image: Image.Image) -> np.ndarray:
        pixels = np.asarray(image.convert("RGB"), dtype=np.uint8)
        digest = hashlib.sha256(pixels.tobytes()
                                + pixels.shape[0].to_bytes(4, "little")
                                + pixels.shape[1].to_bytes(4, "little")).digest()
        seed = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)


class ClipEncoder:
    """Pooled image embedding from the pretrained ViT-L/14 encoder."""

    dim = EMBED_DIM

    def __init__(self, model_name: str = "openai/clip-vit-large-patch14"):
        import torch
        from transformers import CLIPImageProcessor, CLIPVisionModelWithProjection

        self._torch = torch
        self.processor = CLIPImageProcessor.from_pretrained(model_name)
        self.model = CLIPVisionModelWithProjection.from_pretrained(model_name)
        self.model.eval()

    def encode(self, image: Image.Image) -> np.ndarray:
        inputs = self.processor(images=image.convert("RGB"), return_tensors="pt")
        with self._torch.no_grad():
            out = self.model(**inputs).image_embeds[0]
        return out.numpy().astype(np.float64)


def export_embeddings(job: ExportJob, encoder=None) -> Path:
    """Encode every image referenced by the job's epochs, sorted by id."""
    encoder = encoder or ClipEncoder()
    ids = unique_image_ids(job)
    if not ids:
        raise ExportError("export job references no images")
    rows = []
    for image_id in ids:
        path = job.image_file(image_id)
        try:
            with Image.open(path) as img:
                vector = np.asarray(encoder.encode(img), dtype=np.float64)
        except ExportError:
            raise
        except Exception as exc:
            raise ExportError(f"unreadable image {path}: {exc}") from exc
        if vector.shape != (EMBED_DIM,):
            raise ExportError(
                f"encoder produced shape {vector.shape} for {path}, "
                f"expected ({EMBED_DIM},)")
        if not np.all(np.isfinite(vector)):
            raise ExportError(f"non-finite embedding for {path}")
        rows.append(vector)
    return write_embeddings(job.embeddings_out, ids, np.stack(rows))
