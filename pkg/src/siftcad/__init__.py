"""Volumetric lesion CAD toolkit.

Candidate generation by multiscale morphological sifting over DCE
subtraction volumes, radiomic feature extraction, imbalance-aware
ensemble scoring, label fusion and FROC/ROC evaluation, plus a seeded
phantom generator and a command line front end.
"""

__version__ = "0.1.0"

from .volume import BinaryMask, BreastCase, Volume3D

__all__ = ["BinaryMask", "BreastCase", "Volume3D", "__version__"]
