"""Pinhole camera intrinsics and projection helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside "
                             f"{self.width}x{self.height} image")

    def project(self, points_cam):
        """Camera-frame points (N, 3) to pixel coordinates (N, 2); no culling."""
        p = np.atleast_2d(np.asarray(points_cam, dtype=np.float64))
        z = p[:, 2]
        return np.stack([self.fx * p[:, 0] / z + self.cx,
                         self.fy * p[:, 1] / z + self.cy], axis=-1)

    def unproject(self, pixels, depths):
        """Pixel coordinates (N, 2) plus depths (N,) to camera-frame points (N, 3)."""
        uv = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        d = np.asarray(depths, dtype=np.float64).reshape(-1)
        x = (uv[:, 0] - self.cx) / self.fx * d
        y = (uv[:, 1] - self.cy) / self.fy * d
        return np.stack([x, y, d], axis=-1)

    def pixel_grid(self, stride=1, offset=0):
        """Integer (u, v) coordinates of a stride-subsampled grid, shape (M, 2)."""
        us = np.arange(offset, self.width, stride)
        vs = np.arange(offset, self.height, stride)
        uu, vv = np.meshgrid(us, vs)
        return np.stack([uu.ravel(), vv.ravel()], axis=-1)
