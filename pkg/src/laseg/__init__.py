"""Multi-atlas 3D segmentation of a bright cavity from MetaImage volumes."""

__version__ = "0.1.0"
