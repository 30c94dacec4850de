"""Coordinate frames, calibrated projection, and body/world transforms.

Frame conventions used throughout the package:

- body frame {b}: x forward, y lateral starboard, z down; motion-primitive
  samples live on the water plane z = 0.
- world frame {n}: local North-East-Down (NED); planar modules ignore down.
- camera frame {c}: the third camera axis is depth (a point is in front of
  the camera iff its third camera coordinate is positive). The body-to-camera
  rotation carries the full axis mapping, so no separate axis convention is
  stored.
- image plane: pixel coordinates u (column, rightward) and v (row, downward),
  origin at the top-left pixel center.

Both extrinsic transforms use the "rotate the offset" form

    p_other = R @ (p_body - r)

where r is expressed in the body frame. For the camera, r is the camera
origin in body coordinates. For the navigation pose, r is the point of the
body frame that coincides with the NED origin, so the vessel position in
world coordinates is -R @ r (see NavPose.from_position_yaw for the friendly
constructor). Calibration files store the matrices exactly as used here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

ORTHONORMAL_TOL = 1e-9


class CalibrationError(ValueError):
    """Raised when a camera or pose fails its construction invariants."""


def _check_rotation(R: np.ndarray, name: str) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise CalibrationError(f"{name} must be 3x3, got {R.shape}")
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
        raise CalibrationError(f"{name} is not orthonormal within {ORTHONORMAL_TOL}")
    return R


@dataclass(frozen=True)
class BodyPoint:
    """Point in the body-fixed horizontal frame (meters)."""

    x: float
    y: float
    z: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def bearing(self) -> float:
        """Bearing from the body x-axis, positive to starboard (radians)."""
        return math.atan2(self.y, self.x)

    @property
    def radius(self) -> float:
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class WorldPoint:
    """Point in the local NED world frame (meters)."""

    north: float
    east: float
    down: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.north, self.east, self.down], dtype=float)


@dataclass(frozen=True)
class PixelPoint:
    """Real-valued pixel coordinates; rounding to grid cells is the caller's job."""

    u: float
    v: float

    def rounded(self) -> tuple[int, int]:
        """Nearest-integer grid cell (half rounds up), as (col, row)."""
        return int(math.floor(self.u + 0.5)), int(math.floor(self.v + 0.5))


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics plus body-to-camera extrinsics.

    The projection of a body point p is K @ (R_cb @ (p - r_cb)), valid when
    the third (depth) component is positive and the pixel lands inside the
    image.
    """

    K: np.ndarray
    R_cb: np.ndarray
    r_cb: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        if K.shape != (3, 3):
            raise CalibrationError(f"K must be 3x3, got {K.shape}")
        if K[1, 0] != 0.0 or K[2, 0] != 0.0 or K[2, 1] != 0.0:
            raise CalibrationError("K must be upper-triangular")
        if K[0, 0] <= 0.0 or K[1, 1] <= 0.0:
            raise CalibrationError("K focal entries must be positive")
        R = _check_rotation(self.R_cb, "R_cb")
        r = np.asarray(self.r_cb, dtype=float).reshape(3)
        if self.width <= 0 or self.height <= 0:
            raise CalibrationError("image dimensions must be positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R_cb", R)
        object.__setattr__(self, "r_cb", r)

    def to_dict(self) -> dict:
        return {
            "K": [float(x) for x in self.K.ravel()],
            "R_cb": [float(x) for x in self.R_cb.ravel()],
            "r_cb": [float(x) for x in self.r_cb],
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        try:
            return cls(
                K=np.array(d["K"], dtype=float).reshape(3, 3),
                R_cb=np.array(d["R_cb"], dtype=float).reshape(3, 3),
                r_cb=np.array(d["r_cb"], dtype=float),
                width=int(d["width"]),
                height=int(d["height"]),
            )
        except KeyError as e:
            raise CalibrationError(f"calibration file missing key {e}") from e

    @classmethod
    def load(cls, path) -> "CameraModel":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def forward_looking(
        cls,
        fx: float = 500.0,
        fy: float = 500.0,
        width: int = 640,
        height: int = 480,
        mount: tuple[float, float, float] = (2.0, 0.0, -2.0),
    ) -> "CameraModel":
        """Forward camera: optical axis along body x, mounted above the water.

        Camera x = body y (starboard), camera y = body z (down), camera
        z = body x (forward). With z down, a negative third mount component
        puts the camera above the water plane so z = 0 points image below
        the principal row.
        """
        R = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        K = np.array([[fx, 0.0, width / 2.0], [0.0, fy, height / 2.0], [0.0, 0.0, 1.0]])
        return cls(K=K, R_cb=R, r_cb=np.array(mount, dtype=float), width=width, height=height)


@dataclass(frozen=True)
class NavPose:
    """Navigation pose used for world anchoring: p_world = R_nb @ (p_body - r_nb)."""

    R_nb: np.ndarray
    r_nb: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        R = _check_rotation(self.R_nb, "R_nb")
        r = np.asarray(self.r_nb, dtype=float).reshape(3)
        object.__setattr__(self, "R_nb", R)
        object.__setattr__(self, "r_nb", r)

    @classmethod
    def from_position_yaw(cls, north: float, east: float, yaw: float, timestamp: float = 0.0) -> "NavPose":
        """Planar pose from vessel position and heading (yaw about down-axis)."""
        c, s = math.cos(yaw), math.sin(yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        t = np.array([north, east, 0.0])
        # p_world = R (p_body - r) must send the body origin to t, so r = -R^T t.
        return cls(R_nb=R, r_nb=-R.T @ t, timestamp=timestamp)

    @property
    def position(self) -> WorldPoint:
        t = -self.R_nb @ self.r_nb
        return WorldPoint(float(t[0]), float(t[1]), float(t[2]))

    @property
    def yaw(self) -> float:
        return math.atan2(self.R_nb[1, 0], self.R_nb[0, 0])

    def to_dict(self) -> dict:
        return {
            "R_nb": [float(x) for x in self.R_nb.ravel()],
            "r_nb": [float(x) for x in self.r_nb],
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NavPose":
        if "yaw" in d:
            return cls.from_position_yaw(
                float(d.get("north", 0.0)),
                float(d.get("east", 0.0)),
                float(d["yaw"]),
                timestamp=float(d.get("timestamp", 0.0)),
            )
        return cls(
            R_nb=np.array(d["R_nb"], dtype=float).reshape(3, 3),
            r_nb=np.array(d["r_nb"], dtype=float),
            timestamp=float(d.get("timestamp", 0.0)),
        )


def project_body_to_pixel(camera: CameraModel, p: BodyPoint) -> Optional[PixelPoint]:
    """Project a body point; None when behind the camera or outside the image.

    The returned pixel is the real-valued projection. A pixel counts as
    in-frame when 0 <= u <= width-1 and 0 <= v <= height-1, so its rounded
    grid cell is always a valid index.
    """
    pc = camera.R_cb @ (p.as_array() - camera.r_cb)
    if pc[2] <= 0.0:
        return None
    h = camera.K @ pc
    u = h[0] / h[2]
    v = h[1] / h[2]
    if not (0.0 <= u <= camera.width - 1 and 0.0 <= v <= camera.height - 1):
        return None
    return PixelPoint(float(u), float(v))


def body_to_world(pose: NavPose, p: BodyPoint) -> WorldPoint:
    pn = pose.R_nb @ (p.as_array() - pose.r_nb)
    return WorldPoint(float(pn[0]), float(pn[1]), float(pn[2]))


def world_to_body(pose: NavPose, p: WorldPoint) -> BodyPoint:
    pb = pose.R_nb.T @ p.as_array() + pose.r_nb
    return BodyPoint(float(pb[0]), float(pb[1]), float(pb[2]))
