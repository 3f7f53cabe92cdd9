"""Synthetic 2D spectra from sequential autoencoders and per-label latent Gaussians."""

from .core import Dataset, Spectrum2D, load_manifest, load_matrix, save_manifest, save_matrix
from .errors import SpectraForgeError

__all__ = ["Dataset", "Spectrum2D", "SpectraForgeError", "load_manifest", "load_matrix",
           "save_manifest", "save_matrix"]
__version__ = "0.1.0"
