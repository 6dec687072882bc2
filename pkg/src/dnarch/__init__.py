"""Differentiable neural architectures: continuous-kernel CNNs whose kernel
sizes, resolutions, widths and depth are learned through masks."""

__version__ = "0.1.0"
