"""Axis-aligned voxel grids carrying scalar or boolean payloads.

A grid is described by the coordinates of its minimum corner (``origin``),
per-axis voxel counts, and per-axis voxel edge lengths.  Voxel (i, j, k)
occupies the box ``origin + (i, j, k) * resolution`` to
``origin + (i+1, j+1, k+1) * resolution``; its center sits at
``origin + (i+0.5, j+0.5, k+0.5) * resolution``.

Payloads are indexed ``values[i, j, k]`` (x, y, z).  The ``frame`` tag
records whether grid coordinates live in the dedicated voxel frame or
directly in a camera frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FRAME_VOXEL = "voxel"
FRAME_CAMERA = "camera"


@dataclass
class VoxelGrid:
    origin: np.ndarray
    counts: tuple
    resolution: np.ndarray
    values: np.ndarray
    frame: str = FRAME_VOXEL

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.counts = tuple(int(c) for c in np.asarray(self.counts).reshape(3))
        res = np.asarray(self.resolution, dtype=np.float64)
        if res.ndim == 0:
            res = np.full(3, float(res))
        self.resolution = res.reshape(3)
        if any(c < 1 for c in self.counts):
            raise ValueError("voxel counts must be >= 1")
        if np.any(self.resolution <= 0):
            raise ValueError("voxel resolution must be positive")
        if self.frame not in (FRAME_VOXEL, FRAME_CAMERA):
            raise ValueError(f"unknown frame tag {self.frame!r}")
        self.values = np.asarray(self.values)
        if self.values.shape != self.counts:
            raise ValueError(
                f"payload shape {self.values.shape} does not match counts {self.counts}")

    @classmethod
    def filled(cls, origin, counts, resolution, fill, dtype=None,
               frame: str = FRAME_VOXEL) -> "VoxelGrid":
        counts = tuple(int(c) for c in np.asarray(counts).reshape(3))
        values = np.full(counts, fill, dtype=dtype)
        return cls(origin, counts, resolution, values, frame)

    def like(self, values: np.ndarray) -> "VoxelGrid":
        """New grid with the same geometry and a replaced payload."""
        return VoxelGrid(self.origin, self.counts, self.resolution, values, self.frame)

    @property
    def num_voxels(self) -> int:
        return int(np.prod(self.counts))

    @property
    def max_corner(self) -> np.ndarray:
        return self.origin + np.asarray(self.counts) * self.resolution

    def centers(self) -> np.ndarray:
        """Voxel centers, shape (nx, ny, nz, 3), in grid-frame coordinates."""
        axes = [self.origin[a] + (np.arange(self.counts[a]) + 0.5) * self.resolution[a]
                for a in range(3)]
        xx, yy, zz = np.meshgrid(*axes, indexing="ij")
        return np.stack([xx, yy, zz], axis=-1)

    def centers_flat(self) -> np.ndarray:
        """Voxel centers flattened to (n, 3), x index varying slowest."""
        return self.centers().reshape(-1, 3)

    def point_to_index(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map points (..., 3) to integer voxel indices and an in-bounds mask.

        Points exactly on the max face are out of bounds (half-open boxes).
        Out-of-bounds indices are clipped so they can be used for masked
        gather without fancy handling.
        """
        pts = np.asarray(points, dtype=np.float64)
        rel = (pts - self.origin) / self.resolution
        idx = np.floor(rel).astype(np.int64)
        counts = np.asarray(self.counts)
        inside = np.all((idx >= 0) & (idx < counts), axis=-1)
        idx = np.clip(idx, 0, counts - 1)
        return idx, inside

    def same_geometry(self, other: "VoxelGrid", tol: float = 0.0) -> bool:
        return (self.counts == other.counts
                and np.allclose(self.origin, other.origin, atol=tol, rtol=0)
                and np.allclose(self.resolution, other.resolution, atol=tol, rtol=0))
