"""Part-level segmentation and masked editing of 3D Gaussian scenes.

Submodules: ``sh`` (spherical harmonics), ``scene`` (Gaussians, cameras,
palettes), ``rasterizer`` (forward and reverse rendering), ``galp`` (label
fitting with anchor consistency), ``slamp`` (scheduled latent mixing),
``editor`` (masked editing), ``synth`` (test scenes), ``metrics`` and ``io``.
"""

import os as _os

# Thread count for the BLAS/OpenMP pools; only effective before numpy loads.
if "PARTSPLAT_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["PARTSPLAT_THREADS"])

from .scene import Camera, GaussianScene, LabelPalette, validate_scene  # noqa: E402
from .rasterizer import render, render_backward  # noqa: E402

__all__ = ["Camera", "GaussianScene", "LabelPalette", "validate_scene", "render", "render_backward"]
__version__ = "0.1.0"
