"""Articulated body layout: part boxes on a kinematic tree, parameter sampling,
semantic-region zoom cameras, and prompt rewriting.

The canonical body is nine axis-aligned part boxes in a y-up frame, standing at
the origin, roughly 1.9 units tall. Adjacent boxes deliberately overlap so the
field blending windows have work to do. Each part owns one single-axis joint;
forward kinematics composes rotations about pivots down the tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import torch

from .errors import ParameterError
from .geometry import DTYPE, Box, Camera, RigidTransform, as_tensor

BETA_DIM = 4

# shape coefficients act as bounded multiplicative tweaks; clamp keeps extreme
# normal draws from inverting a box
_BETA_CLAMP = 4.0
_STATURE_GAIN = 0.08   # beta[0]: height, beta[1]: breadth
_GIRTH_GAIN = 0.05     # beta[2]: trunk girth, beta[3]: limb girth


class PartName(str, Enum):
    HEAD = "head"
    TORSO = "torso"
    PELVIS = "pelvis"
    LEFT_ARM = "left_arm"
    RIGHT_ARM = "right_arm"
    LEFT_LEG = "left_leg"
    RIGHT_LEG = "right_leg"
    LEFT_FOOT = "left_foot"
    RIGHT_FOOT = "right_foot"


_TRUNK = (PartName.HEAD, PartName.TORSO, PartName.PELVIS)


@dataclass(frozen=True)
class JointSpec:
    """One rotational joint: where the part attaches and how it swings."""

    parent: PartName | None
    axis: str          # "x" | "y" | "z"
    pivot: tuple[float, float, float]


@dataclass(frozen=True)
class Skeleton:
    """Part boxes plus joint wiring. Part order is the canonical theta order."""

    boxes: dict[PartName, Box]
    joints: dict[PartName, JointSpec]

    def __post_init__(self):
        if set(self.boxes) != set(self.joints):
            raise ParameterError("skeleton boxes and joints must cover the same parts")
        roots = [p for p, j in self.joints.items() if j.parent is None]
        if len(roots) != 1:
            raise ParameterError(f"skeleton needs exactly one root, got {len(roots)}")
        for p, j in self.joints.items():
            if j.parent is not None and j.parent not in self.joints:
                raise ParameterError(f"part {p.value} has unknown parent {j.parent}")

    @property
    def parts(self) -> list[PartName]:
        return list(self.boxes)

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    def to_dict(self) -> dict:
        return {
            p.value: {
                "box": [self.boxes[p].min_corner.tolist(), self.boxes[p].max_corner.tolist()],
                "parent": self.joints[p].parent.value if self.joints[p].parent else None,
                "axis": self.joints[p].axis,
                "pivot": list(self.joints[p].pivot),
            }
            for p in self.parts
        }


def default_skeleton() -> Skeleton:
    def box(xlo, ylo, zlo, xhi, yhi, zhi):
        return Box(torch.tensor([xlo, ylo, zlo], dtype=DTYPE), torch.tensor([xhi, yhi, zhi], dtype=DTYPE))

    boxes = {
        PartName.PELVIS: box(-0.18, -0.12, -0.12, 0.18, 0.12, 0.12),
        PartName.TORSO: box(-0.20, 0.08, -0.12, 0.20, 0.66, 0.12),
        PartName.HEAD: box(-0.11, 0.62, -0.11, 0.11, 0.95, 0.11),
        PartName.LEFT_ARM: box(0.18, -0.38, -0.09, 0.34, 0.62, 0.09),
        PartName.RIGHT_ARM: box(-0.34, -0.38, -0.09, -0.18, 0.62, 0.09),
        PartName.LEFT_LEG: box(0.02, -0.88, -0.10, 0.17, -0.06, 0.10),
        PartName.RIGHT_LEG: box(-0.17, -0.88, -0.10, -0.02, -0.06, 0.10),
        PartName.LEFT_FOOT: box(0.02, -0.98, -0.10, 0.17, -0.84, 0.16),
        PartName.RIGHT_FOOT: box(-0.17, -0.98, -0.10, -0.02, -0.84, 0.16),
    }
    joints = {
        PartName.PELVIS: JointSpec(None, "y", (0.0, 0.0, 0.0)),
        PartName.TORSO: JointSpec(PartName.PELVIS, "x", (0.0, 0.10, 0.0)),
        PartName.HEAD: JointSpec(PartName.TORSO, "x", (0.0, 0.60, 0.0)),
        PartName.LEFT_ARM: JointSpec(PartName.TORSO, "z", (0.26, 0.55, 0.0)),
        PartName.RIGHT_ARM: JointSpec(PartName.TORSO, "z", (-0.26, 0.55, 0.0)),
        PartName.LEFT_LEG: JointSpec(PartName.PELVIS, "x", (0.095, -0.06, 0.0)),
        PartName.RIGHT_LEG: JointSpec(PartName.PELVIS, "x", (-0.095, -0.06, 0.0)),
        PartName.LEFT_FOOT: JointSpec(PartName.LEFT_LEG, "x", (0.095, -0.86, 0.0)),
        PartName.RIGHT_FOOT: JointSpec(PartName.RIGHT_LEG, "x", (-0.095, -0.86, 0.0)),
    }
    # dict order defines theta order; keep pelvis-first so parents precede children
    return Skeleton(boxes=boxes, joints=joints)


@dataclass(frozen=True)
class BodyParams:
    """Shape and pose of one body sample plus the camera that looks at it."""

    beta: torch.Tensor   # (BETA_DIM,)
    theta: torch.Tensor  # (joint_count,) radians
    cam: Camera

    def __post_init__(self):
        beta = as_tensor(self.beta)
        theta = as_tensor(self.theta)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)
        if beta.shape != (BETA_DIM,):
            raise ParameterError(f"beta must have shape ({BETA_DIM},), got {tuple(beta.shape)}")
        if theta.ndim != 1:
            raise ParameterError("theta must be a 1-d tensor of joint angles")
        if not torch.isfinite(beta).all() or not torch.isfinite(theta).all():
            raise ParameterError("body parameters must be finite")


@dataclass(frozen=True)
class ParamDistributions:
    """Sampling ranges for shape, pose, and camera."""

    beta_mean: torch.Tensor = field(default_factory=lambda: torch.zeros(BETA_DIM, dtype=DTYPE))
    beta_std: torch.Tensor = field(default_factory=lambda: torch.ones(BETA_DIM, dtype=DTYPE))
    theta_mean: torch.Tensor = field(default_factory=lambda: torch.zeros(9, dtype=DTYPE))
    theta_std: torch.Tensor = field(default_factory=lambda: torch.full((9,), 0.1, dtype=DTYPE))
    azimuth_range: tuple[float, float] = (-math.pi, math.pi)
    elevation_range: tuple[float, float] = (-math.pi / 12, math.pi / 12)
    distance_range: tuple[float, float] = (4.2, 4.6)
    fov: float = 0.5

    def __post_init__(self):
        for name in ("beta_mean", "beta_std", "theta_mean", "theta_std"):
            object.__setattr__(self, name, as_tensor(getattr(self, name)))
        if self.beta_mean.shape != self.beta_std.shape or self.theta_mean.shape != self.theta_std.shape:
            raise ParameterError("mean/std shapes must agree")
        if torch.any(self.beta_std < 0) or torch.any(self.theta_std < 0):
            raise ParameterError("standard deviations must be non-negative")
        for lo, hi in (self.azimuth_range, self.elevation_range, self.distance_range):
            if not (lo <= hi):
                raise ParameterError(f"range must satisfy lo <= hi, got ({lo}, {hi})")
        if self.distance_range[0] <= 0:
            raise ParameterError("distance must be positive")


def _uniform(rng: torch.Generator, lo: float, hi: float) -> float:
    u = torch.rand((), generator=rng, dtype=DTYPE)
    return float(lo + (hi - lo) * u)


def sample_body_params(rng: torch.Generator, dists: ParamDistributions) -> BodyParams:
    """Draw one body sample.

    Draw order (fixed, relied on by the training loop's rng contract):
    beta normals, theta normals, then azimuth/elevation/distance uniforms.
    Degenerate ranges (lo == hi) and zero stds produce exact constants.
    """
    beta = dists.beta_mean + dists.beta_std * torch.randn(
        dists.beta_mean.shape, generator=rng, dtype=DTYPE
    )
    theta = dists.theta_mean + dists.theta_std * torch.randn(
        dists.theta_mean.shape, generator=rng, dtype=DTYPE
    )
    az = _uniform(rng, *dists.azimuth_range)
    el = _uniform(rng, *dists.elevation_range)
    dist = _uniform(rng, *dists.distance_range)
    cam = Camera(azimuth=az, elevation=el, distance=dist, fov=dists.fov)
    return BodyParams(beta=beta, theta=theta, cam=cam)


@dataclass(frozen=True)
class PartVolume:
    """One posed part: its (shape-scaled) local box and local-to-world transform."""

    part: PartName
    box: Box
    transform: RigidTransform

    def world_corners(self) -> torch.Tensor:
        return self.transform.apply(self.box.corners())


def _shape_factors(beta: torch.Tensor) -> tuple[torch.Tensor, float, float]:
    b = torch.clamp(beta, -_BETA_CLAMP, _BETA_CLAMP)
    stature = torch.stack(
        [1.0 + _STATURE_GAIN * b[1], 1.0 + _STATURE_GAIN * b[0], 1.0 + _STATURE_GAIN * b[1]]
    )
    trunk_girth = float(1.0 + _GIRTH_GAIN * b[2])
    limb_girth = float(1.0 + _GIRTH_GAIN * b[3])
    return stature, trunk_girth, limb_girth


def pose_part_volumes(params: BodyParams, skeleton: Skeleton | None = None) -> list[PartVolume]:
    """Apply shape coefficients and forward kinematics; returns parts in theta order.

    beta[0]/beta[1] scale the whole layout (height / breadth-and-depth), pivots
    included, so articulation stays coherent; beta[2]/beta[3] thicken trunk and
    limb boxes about their centers. theta[j] rotates part j about its joint
    axis through its (scaled) pivot, composed with all ancestors.
    """
    skeleton = skeleton or default_skeleton()
    if params.theta.shape != (skeleton.joint_count,):
        raise ParameterError(
            f"theta must have one angle per joint ({skeleton.joint_count}), got {tuple(params.theta.shape)}"
        )
    stature, trunk_girth, limb_girth = _shape_factors(params.beta)

    transforms: dict[PartName, RigidTransform] = {}
    volumes: list[PartVolume] = []
    for idx, part in enumerate(skeleton.parts):
        joint = skeleton.joints[part]
        pivot = as_tensor(joint.pivot) * stature
        local = RigidTransform.about_pivot(joint.axis, float(params.theta[idx]), pivot)
        world = local if joint.parent is None else transforms[joint.parent].compose(local)
        transforms[part] = world

        box = skeleton.boxes[part].scaled(stature)
        girth = trunk_girth if part in _TRUNK else limb_girth
        box = box.scaled(torch.tensor([girth, 1.0, girth], dtype=DTYPE), about_center=True)
        volumes.append(PartVolume(part=part, box=box, transform=world))
    return volumes


def posed_bounds(volumes: list[PartVolume]) -> tuple[torch.Tensor, torch.Tensor]:
    corners = torch.cat([v.world_corners() for v in volumes], dim=0)
    return corners.min(dim=0).values, corners.max(dim=0).values


# --- semantic regions -------------------------------------------------------


class RegionName(str, Enum):
    FULL_BODY = "full_body"
    UPPER_FRONT = "upper_front"
    UPPER_BACK = "upper_back"
    LOWER_FRONT = "lower_front"
    LOWER_BACK = "lower_back"
    LEFT_HAND = "left_hand"
    RIGHT_HAND = "right_hand"


@dataclass(frozen=True)
class SemanticRegion:
    """A named crop of the body: where to aim the camera and how to retell the prompt."""

    name: RegionName
    zoom: float
    look_at_offset: tuple[float, float, float]
    azimuth_offset: float
    prompt_template: str

    def __post_init__(self):
        if self.name is not RegionName.FULL_BODY and not self.zoom > 1.0:
            raise ParameterError(f"region {self.name.value} must zoom in (zoom > 1)")
        if self.zoom <= 0:
            raise ParameterError("zoom must be positive")
        if "{p}" not in self.prompt_template:
            raise ParameterError("prompt template must reference the base prompt as {p}")


ZOOM_REGIONS = (
    RegionName.UPPER_FRONT,
    RegionName.UPPER_BACK,
    RegionName.LOWER_FRONT,
    RegionName.LOWER_BACK,
    RegionName.LEFT_HAND,
    RegionName.RIGHT_HAND,
)


def semantic_regions() -> dict[RegionName, SemanticRegion]:
    """The full-body view plus the six supervision crops.

    Offsets are in body (canonical) space; back views reuse the front offsets
    and flip the camera azimuth by pi. Zoom factors were sized so each region's
    rest-pose content projects inside the frame at the default camera.
    """
    upper = (0.0, 0.50, 0.0)
    lower = (0.0, -0.43, 0.0)
    regs = [
        SemanticRegion(RegionName.FULL_BODY, 1.0, (0.0, 0.0, 0.0), 0.0, "{p}"),
        SemanticRegion(RegionName.UPPER_FRONT, 1.35, upper, 0.0, "upper body of {p}"),
        SemanticRegion(RegionName.UPPER_BACK, 1.35, upper, math.pi, "back view of upper body of {p}"),
        SemanticRegion(RegionName.LOWER_FRONT, 1.7, lower, 0.0, "lower body of {p}"),
        SemanticRegion(RegionName.LOWER_BACK, 1.7, lower, math.pi, "back view of lower body of {p}"),
        SemanticRegion(RegionName.LEFT_HAND, 4.5, (0.26, -0.30, 0.0), 0.0, "left hand of {p}"),
        SemanticRegion(RegionName.RIGHT_HAND, 4.5, (-0.26, -0.30, 0.0), 0.0, "right hand of {p}"),
    ]
    return {r.name: r for r in regs}


def region_content_box(region: RegionName, skeleton: Skeleton | None = None) -> Box:
    """Nominal rest-pose content of a region, for framing checks."""
    skeleton = skeleton or default_skeleton()
    b = skeleton.boxes
    if region in (RegionName.UPPER_FRONT, RegionName.UPPER_BACK):
        parts = [PartName.HEAD, PartName.TORSO]
    elif region in (RegionName.LOWER_FRONT, RegionName.LOWER_BACK):
        parts = [PartName.PELVIS, PartName.LEFT_LEG, PartName.RIGHT_LEG, PartName.LEFT_FOOT, PartName.RIGHT_FOOT]
    elif region is RegionName.LEFT_HAND:
        arm = b[PartName.LEFT_ARM]
        return Box(arm.min_corner, torch.stack([arm.max_corner[0], arm.min_corner[1] + 0.16, arm.max_corner[2]]))
    elif region is RegionName.RIGHT_HAND:
        arm = b[PartName.RIGHT_ARM]
        return Box(arm.min_corner, torch.stack([arm.max_corner[0], arm.min_corner[1] + 0.16, arm.max_corner[2]]))
    else:
        parts = list(skeleton.parts)
    corners = torch.cat([b[p].corners() for p in parts], dim=0)
    return Box(corners.min(dim=0).values, corners.max(dim=0).values)


def camera_for_region(region: SemanticRegion, base: Camera) -> Camera:
    """Aim the base camera at a region: tighter fov, shifted look-at, back flip.

    Zoom divides tan(fov/2) so zoom 2 halves the visible extent exactly.
    """
    tan_half = math.tan(base.fov / 2) / region.zoom
    fov = 2.0 * math.atan(tan_half)
    look_at = tuple(
        base.look_at[i] + region.look_at_offset[i] for i in range(3)
    )
    return Camera(
        azimuth=base.azimuth + region.azimuth_offset,
        elevation=base.elevation,
        distance=base.distance,
        fov=fov,
        look_at=look_at,
    )


def rewrite_prompt(prompt: str, region: SemanticRegion) -> str:
    """Specialize a prompt to a region via the region's fixed template."""
    if not prompt or not prompt.strip():
        raise ParameterError("prompt must be non-empty")
    return region.prompt_template.format(p=prompt)
