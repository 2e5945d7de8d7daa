"""Bridge from preprocessed M/EEG epoch files to the neutral trial-archive
and embedding file formats consumed by the generator package.

Only files cross the boundary: this package writes the formats itself and
never imports the consumer.
"""

from .job import ExportError, ExportJob
from .signals import export_signals
from .embeddings import PixelHashEncoder, export_embeddings

__version__ = "0.1.0"

__all__ = [
    "ExportError",
    "ExportJob",
    "PixelHashEncoder",
    "export_embeddings",
    "export_signals",
]
