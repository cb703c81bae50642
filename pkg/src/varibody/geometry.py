"""Rigid transforms, axis-aligned boxes, and the orbit camera.

Shared by the articulated body layout, the volume renderer, and the mesh
rasterizer. Everything is float64 torch; cameras are plain dataclasses so they
serialize into manifests without ceremony.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .errors import ParameterError

DTYPE = torch.float64

_AXES = ("x", "y", "z")


def as_tensor(x, dtype: torch.dtype = DTYPE) -> torch.Tensor:
    t = torch.as_tensor(x, dtype=dtype)
    return t


def rotation_about_axis(axis: str, angle: float) -> torch.Tensor:
    """3x3 rotation about a principal axis."""
    if axis not in _AXES:
        raise ParameterError(f"unknown rotation axis {axis!r}, expected one of {_AXES}")
    c = math.cos(angle)
    s = math.sin(angle)
    if axis == "x":
        rows = [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
    elif axis == "y":
        rows = [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
    else:
        rows = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    return torch.tensor(rows, dtype=DTYPE)


@dataclass(frozen=True)
class RigidTransform:
    """x -> rotation @ x + translation."""

    rotation: torch.Tensor  # (3, 3)
    translation: torch.Tensor  # (3,)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(torch.eye(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    @staticmethod
    def about_pivot(axis: str, angle: float, pivot) -> "RigidTransform":
        """Rotation about an axis line through `pivot` (fixed point of the map)."""
        rot = rotation_about_axis(axis, angle)
        p = as_tensor(pivot)
        return RigidTransform(rot, p - rot @ p)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other)).apply(x) == self.apply(other.apply(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        return points @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rot_t = self.rotation.T
        return RigidTransform(rot_t.contiguous(), -(rot_t @ self.translation))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in the local frame of a part."""

    min_corner: torch.Tensor  # (3,)
    max_corner: torch.Tensor  # (3,)

    def __post_init__(self):
        lo = as_tensor(self.min_corner)
        hi = as_tensor(self.max_corner)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ParameterError("box corners must be 3-vectors")
        if not torch.all(hi > lo):
            raise ParameterError(f"box must have positive extent, got {lo.tolist()}..{hi.tolist()}")

    def center(self) -> torch.Tensor:
        return 0.5 * (self.min_corner + self.max_corner)

    def half_extent(self) -> torch.Tensor:
        return 0.5 * (self.max_corner - self.min_corner)

    def corners(self) -> torch.Tensor:
        # (8, 3), all sign combinations
        lo, hi = self.min_corner, self.max_corner
        picks = torch.tensor(
            [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=DTYPE
        )
        return lo + picks * (hi - lo)

    def scaled(self, factors, about_center: bool = False) -> "Box":
        f = as_tensor(factors)
        if about_center:
            c = self.center()
            h = self.half_extent() * f
            return Box(c - h, c + h)
        return Box(self.min_corner * f, self.max_corner * f)

    def contains(self, points: torch.Tensor) -> torch.Tensor:
        """Boolean (N,) for points (N, 3); boundary counts as inside."""
        return torch.all((points >= self.min_corner) & (points <= self.max_corner), dim=-1)


def union_bounds(boxes_world: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """min/max over a list of (8, 3) world-space corner sets."""
    allc = torch.cat(boxes_world, dim=0)
    return allc.min(dim=0).values, allc.max(dim=0).values


@dataclass(frozen=True)
class Camera:
    """Orbit camera around a look-at point, y-up, vertical fov in radians."""

    azimuth: float
    elevation: float
    distance: float
    fov: float
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.distance > 0 and math.isfinite(self.distance)):
            raise ParameterError(f"camera distance must be positive, got {self.distance}")
        if not (0.0 < self.fov < math.pi):
            raise ParameterError(f"fov must be in (0, pi), got {self.fov}")
        if abs(self.elevation) >= math.pi / 2 - 1e-6:
            raise ParameterError("elevation too close to the poles for a y-up basis")
        for v in (self.azimuth, *self.look_at):
            if not math.isfinite(v):
                raise ParameterError("camera parameters must be finite")

    def _direction(self) -> torch.Tensor:
        # unit vector from look_at toward the eye
        ce = math.cos(self.elevation)
        return torch.tensor(
            [ce * math.sin(self.azimuth), math.sin(self.elevation), ce * math.cos(self.azimuth)],
            dtype=DTYPE,
        )

    def eye(self) -> torch.Tensor:
        return as_tensor(self.look_at) + self.distance * self._direction()

    def basis(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(right, up, forward) orthonormal, forward pointing at look_at."""
        forward = -self._direction()
        world_up = torch.tensor([0.0, 1.0, 0.0], dtype=DTYPE)
        right = torch.linalg.cross(forward, world_up)
        right = right / torch.linalg.norm(right)
        up = torch.linalg.cross(right, forward)
        return right, up, forward

    def rays(self, resolution: tuple[int, int]) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-pixel rays through pixel centers.

        resolution is (H, W); returns origins (H, W, 3) and unit directions
        (H, W, 3). Horizontal fov follows from the aspect ratio.
        """
        h, w = _check_resolution(resolution)
        right, up, forward = self.basis()
        tan_v = math.tan(self.fov / 2)
        tan_u = tan_v * (w / h)
        ys = 1.0 - 2.0 * (torch.arange(h, dtype=DTYPE) + 0.5) / h  # +1 top .. -1 bottom
        xs = 2.0 * (torch.arange(w, dtype=DTYPE) + 0.5) / w - 1.0
        gy, gx = torch.meshgrid(ys, xs, indexing="ij")
        dirs = (
            forward
            + gx[..., None] * tan_u * right
            + gy[..., None] * tan_v * up
        )
        dirs = dirs / torch.linalg.norm(dirs, dim=-1, keepdim=True)
        origins = self.eye().expand(h, w, 3)
        return origins, dirs

    def project(
        self, points: torch.Tensor, resolution: tuple[int, int]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Project (N, 3) world points to pixel coords (N, 2) as (px, py) plus

        camera-forward depth (N,). Pixel (i, j) has center (px=j, py=i).
        Differentiable in `points`.
        """
        h, w = _check_resolution(resolution)
        right, up, forward = self.basis()
        rel = points - self.eye()
        z = rel @ forward
        x = rel @ right
        y = rel @ up
        tan_v = math.tan(self.fov / 2)
        tan_u = tan_v * (w / h)
        # guard z in the caller; keep the math pure here
        px = (x / (z * tan_u) + 1.0) * 0.5 * w - 0.5
        py = (1.0 - y / (z * tan_v)) * 0.5 * h - 0.5
        return torch.stack([px, py], dim=-1), z

    def with_updates(self, **kw) -> "Camera":
        base = dict(
            azimuth=self.azimuth,
            elevation=self.elevation,
            distance=self.distance,
            fov=self.fov,
            look_at=self.look_at,
        )
        base.update(kw)
        return Camera(**base)


def _check_resolution(resolution: tuple[int, int]) -> tuple[int, int]:
    h, w = int(resolution[0]), int(resolution[1])
    if h <= 0 or w <= 0:
        raise ParameterError(f"resolution must be positive, got {resolution}")
    return h, w


def near_far_for_bounds(
    cam: Camera, lo: torch.Tensor, hi: torch.Tensor, pad: float = 0.05
) -> tuple[float, float]:
    """Conservative near/far for a world AABB seen from `cam`."""
    center = 0.5 * (lo.detach() + hi.detach())
    radius = float(torch.linalg.norm(hi.detach() - center)) + pad
    d0 = float(torch.linalg.norm(cam.eye() - center))
    near = max(1e-3, d0 - radius)
    far = d0 + radius
    if far <= near:
        far = near + 2 * radius + 1e-3
    return near, far
