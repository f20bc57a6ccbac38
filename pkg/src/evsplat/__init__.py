"""Incremental event-camera 3D Gaussian splatting SLAM, desk scale."""

__version__ = "0.1.0"
