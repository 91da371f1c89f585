"""Dual-guided diffusion inpainting for occluded video.

The package is organized bottom-up:

* :mod:`diffmvr.numerics` -- tensors with reverse-mode autodiff, counter-based
  RNG, Adam.
* :mod:`diffmvr.dataio` -- synthetic clip generation and on-disk formats.
* :mod:`diffmvr.preprocess` -- masked frames and the two guidance images.
* :mod:`diffmvr.models` -- VAE, guidance encoders, fused-attention U-Net.
* :mod:`diffmvr.diffusion` -- noise schedule, losses, training, inpainting.
* :mod:`diffmvr.metrics` -- similarity / temporal-consistency / distribution
  metrics and reports.
* :mod:`diffmvr.cli` -- the ``diffmvr`` command.
"""

__version__ = "0.1.0"
