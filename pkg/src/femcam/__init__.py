"""Cam morphology measurement on proximal-femur label masks.

Modules: ``volumes`` (label volumes), ``meshes`` (triangle meshes, distances),
``shapemodel`` (focused shape model), ``headfit`` (femoral head sphere),
``camdetect`` (cam patch and metrics), ``metrics`` (segmentation agreement),
``stats`` (cohort statistics), ``synth`` (phantoms) and ``cli``.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
