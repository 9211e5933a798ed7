"""Pinhole cameras, rigid poses, rays, and the frustum-normalizing coordinate map.

Conventions used throughout the package:

* Camera frame: x right, y down, z forward (optical axis = +z).
* Integer pixel (u, v) addresses the pixel center; the image spans
  u in [0, w-1], v in [0, h-1].
* A ``Pose`` is the rigid map ``y = R @ x + t``.  Camera poses stored on a
  ``CameraView`` are camera-to-world.
* The transformed coordinate system (TCS) normalizes the view frustum to
  the unit cube: x = u/(w-1), y = v/(h-1), and z is the inverse radial
  distance rescaled so the near bound maps to 0 and the far bound to 1.

All math is float64; round-trip contracts are asserted at 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9
_UNIT_TOL = 1e-12


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics (no skew, no distortion), sizes in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 2 or self.height < 2:
            raise ValueError("image must be at least 2x2 (TCS divides by w-1, h-1)")


@dataclass(frozen=True)
class Pose:
    """Rigid transform y = rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = _as_vec3(self.translation)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant must be +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate direction vectors (no translation)."""
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "Pose") -> "Pose":
        """Return the pose applying ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class Ray:
    """A ray o + t*d with unit direction, tagged with its source pixel."""

    origin: np.ndarray
    direction: np.ndarray
    pixel: tuple = (0.0, 0.0)

    def __post_init__(self):
        o = _as_vec3(self.origin)
        d = _as_vec3(self.direction)
        if abs(np.linalg.norm(d) - 1.0) > _UNIT_TOL:
            raise ValueError("ray direction must be unit length within 1e-12")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class FrustumSpec:
    """Near/far bounds of the rendering frustum, in meters."""

    near: float
    far: float

    def __post_init__(self):
        if not (0.0 < self.near < self.far):
            raise ValueError("frustum requires 0 < near < far")


@dataclass(frozen=True)
class CameraView:
    """One rig entry: intrinsics, camera-to-world pose, and frustum bounds."""

    intrinsics: CameraIntrinsics
    pose: Pose = field(default_factory=Pose.identity)
    frustum: FrustumSpec = FrustumSpec(0.1, 100.0)

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.pose.translation

    def world_rays(self, pixels_uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World-frame (origins, unit directions) for pixel coords (..., 2)."""
        dirs_cam = pixel_directions(self.intrinsics, pixels_uv)
        dirs = self.pose.rotate(dirs_cam)
        origins = np.broadcast_to(self.position, dirs.shape)
        return origins, dirs


def pixel_directions(intr: CameraIntrinsics, pixels_uv: np.ndarray) -> np.ndarray:
    """Unit camera-frame directions for pixel coordinates of shape (..., 2)."""
    uv = np.asarray(pixels_uv, dtype=np.float64)
    x = (uv[..., 0] - intr.cx) / intr.fx
    y = (uv[..., 1] - intr.cy) / intr.fy
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def all_pixel_coords(intr: CameraIntrinsics) -> np.ndarray:
    """Pixel-center coordinates for the full image, shape (w, h, 2).

    Indexed [u, v] to match the opacity-map layout.
    """
    us = np.arange(intr.width, dtype=np.float64)
    vs = np.arange(intr.height, dtype=np.float64)
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    return np.stack([uu, vv], axis=-1)


def ray_for_pixel(intr: CameraIntrinsics, u: float, v: float) -> Ray:
    """Camera-frame ray through pixel (u, v); origin at the camera center."""
    d = pixel_directions(intr, np.array([u, v]))
    return Ray(np.zeros(3), d, pixel=(float(u), float(v)))


def project(intr: CameraIntrinsics, points_cam: np.ndarray):
    """Perspective-project camera-frame points (..., 3) to (u, v, z).

    z is returned unmodified so callers can classify behind-camera points
    (z <= 0) themselves; z == 0 yields non-finite (u, v) and must be treated
    as outside the frustum.
    """
    pts = np.asarray(points_cam, dtype=np.float64)
    z = pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * pts[..., 0] / z + intr.cx
        v = intr.fy * pts[..., 1] / z + intr.cy
    return u, v, z


def ccs_to_tcs(points_cam: np.ndarray, intr: CameraIntrinsics,
               fr: FrustumSpec) -> np.ndarray:
    """Map camera-frame points into the normalized frustum cube.

    x = u/(w-1), y = v/(h-1),
    z = (1/near - 1/|x_c|) / (1/near - 1/far).

    Points on the image with radial distance in [near, far] land in [0,1]^3.
    Requires strictly positive depth and nonzero norm.
    """
    pts = np.asarray(points_cam, dtype=np.float64)
    norm = np.linalg.norm(pts, axis=-1)
    if np.any(norm == 0.0):
        raise ValueError("ccs_to_tcs: zero-norm input point")
    if np.any(pts[..., 2] <= 0.0):
        raise ValueError("ccs_to_tcs: point has nonpositive depth (outside frustum)")
    u, v, _ = project(intr, pts)
    inv_span = 1.0 / fr.near - 1.0 / fr.far
    zt = (1.0 / fr.near - 1.0 / norm) / inv_span
    return np.stack([u / (intr.width - 1.0), v / (intr.height - 1.0), zt], axis=-1)


def tcs_to_ccs(points_tcs: np.ndarray, intr: CameraIntrinsics,
               fr: FrustumSpec) -> np.ndarray:
    """Inverse of :func:`ccs_to_tcs` on the open frustum.

    The z coordinate determines the radial distance; x and y recover the
    pixel, hence the viewing direction.  Inputs implying a nonpositive
    radial distance are rejected.
    """
    pts = np.asarray(points_tcs, dtype=np.float64)
    u = pts[..., 0] * (intr.width - 1.0)
    v = pts[..., 1] * (intr.height - 1.0)
    inv_span = 1.0 / fr.near - 1.0 / fr.far
    inv_dist = 1.0 / fr.near - pts[..., 2] * inv_span
    if np.any(inv_dist <= 0.0):
        raise ValueError("tcs_to_ccs: z implies a nonpositive or infinite radial distance")
    dist = 1.0 / inv_dist
    d = np.stack([(u - intr.cx) / intr.fx,
                  (v - intr.cy) / intr.fy,
                  np.ones_like(u)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d * dist[..., None]


def voxel_to_camera_transform(t_i: Pose, t_j: Pose, t_lc: Pose, t_vl: Pose) -> Pose:
    """Compose the voxel-to-camera pose from ego poses and extrinsics.

    T = T_i^-1 @ T_j @ T_lc @ T_vl: ego pose of the annotated frame carried
    into the query frame, then LiDAR-to-camera, then voxel-to-LiDAR.
    """
    return t_i.inverse().compose(t_j).compose(t_lc).compose(t_vl)
