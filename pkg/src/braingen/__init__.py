"""Image-conditioned diffusion generation of M/EEG signals."""

__version__ = "0.1.0"
