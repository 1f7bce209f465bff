"""Identity-preserving face hallucination GANs (Siamese, generator-label and
discriminator-label variants) at desk scale."""

import os

import torch

__version__ = "0.1.0"


def _configure_threads() -> None:
    threads = os.environ.get("SGLAB_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))


_configure_threads()
