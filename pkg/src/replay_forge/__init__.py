"""Lesion-aware replay buffers, modality-flexible inputs and continual-learning
metrics for 3D lesion segmentation streams.

The package works on model outputs (probability volumes) and label masks; it
does not train networks.
"""

__version__ = "0.1.0"
