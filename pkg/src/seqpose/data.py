"""Synthetic sequential hand dataset: kinematics, camera, renderer, file format.

A 21-joint kinematic hand (wrist + 5 fingers x 4 joints) is posed by joint
angles with anatomical limits, projected through a pinhole camera and drawn
as anti-aliased bone strokes plus Gaussian joint blobs on a randomized
background.  Sequences come in two modes:

* ``temporal``: one camera, the hand follows smooth random angle
  trajectories over N frames.
* ``angular``: one static pose viewed by N cameras spaced on a ring.

Ground truth per frame is the exact (float) 2D projection and the
root-relative 3D pose scaled so the wrist -> middle-finger-base bone has unit
length.  Datasets serialize to a checksummed binary file (magic ``STHD``)
with a JSON split manifest alongside.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DomainError(ValueError):
    """A joint angle lies outside its anatomical limit."""


class ProjectionError(ValueError):
    """A point cannot be projected (at or behind the camera plane)."""


class FormatError(ValueError):
    """A dataset/checkpoint file is malformed or corrupted."""


# --------------------------------------------------------------- skeleton

JOINT_COUNT = 21
FINGERS = ("thumb", "index", "middle", "ring", "pinky")
# fan-out of each finger's metacarpal in the palm plane, radians from +y
FAN_ANGLES = np.array([0.90, 0.25, 0.0, -0.20, -0.42])
# wrist->base bone length per finger; middle (index 2) is the reference bone
METACARPAL_LEN = np.array([0.45, 0.95, 1.00, 0.93, 0.85])
# proximal/middle/distal phalanx lengths per finger
PHALANX_LEN = np.array([
    [0.42, 0.32, 0.24],
    [0.45, 0.28, 0.20],
    [0.50, 0.32, 0.22],
    [0.46, 0.30, 0.20],
    [0.34, 0.22, 0.16],
])
REFERENCE_FINGER = 2           # middle
REFERENCE_JOINT = 1 + 4 * REFERENCE_FINGER   # middle-finger base = joint 9

ABDUCTION_RANGE = (-0.35, 0.35)
FLEX_RANGES = ((-0.25, 1.65), (0.0, 1.95), (0.0, 1.45))

# bone list: (parent, child) joint indices, 4 bones per finger
BONES = tuple((0 if s == 0 else 4 * f + s, 4 * f + s + 1)
              for f in range(5) for s in range(4))


def finger_joints(f: int) -> tuple:
    """The four joint indices (base..tip) of finger ``f``."""
    return tuple(range(1 + 4 * f, 5 + 4 * f))


def finger_bones(f: int) -> tuple:
    """The four bones of finger ``f``, including wrist -> base."""
    return tuple(BONES[4 * f + s] for s in range(4))


def _rodrigues(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    a = axis / np.linalg.norm(axis)
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(a, v) * s + a * np.dot(a, v) * (1.0 - c)


def euler_to_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation matrix for intrinsic x, then y, then z rotation (R = Rz Ry Rx)."""
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    rx_m = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry_m = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz_m = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz_m @ ry_m @ rx_m


@dataclass
class KinematicHand:
    """Hand shape (bone lengths) plus a pose (joint angles and global placement).

    ``bone_lengths`` is (5, 4): metacarpal then three phalanges per finger.
    ``abduction`` (5,) swings each finger in the palm plane at its base
    joint; ``flexion`` (5, 3) curls base/middle/distal joints toward the
    palm.  ``rot`` are global Euler angles (radians), ``pos`` is the wrist's
    world position.
    """
    bone_lengths: np.ndarray
    fan_angles: np.ndarray = field(default_factory=lambda: FAN_ANGLES.copy())
    abduction: np.ndarray = field(default_factory=lambda: np.zeros(5))
    flexion: np.ndarray = field(default_factory=lambda: np.zeros((5, 3)))
    rot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pos: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.bone_lengths = np.asarray(self.bone_lengths, dtype=np.float64)
        if self.bone_lengths.shape != (5, 4):
            raise ValueError(f"bone_lengths must be (5, 4), got {self.bone_lengths.shape}")
        if (self.bone_lengths <= 0).any():
            raise DomainError("bone lengths must be positive")
        self.fan_angles = np.asarray(self.fan_angles, dtype=np.float64)
        self.abduction = np.asarray(self.abduction, dtype=np.float64)
        self.flexion = np.asarray(self.flexion, dtype=np.float64)
        self.rot = np.asarray(self.rot, dtype=np.float64)
        self.pos = np.asarray(self.pos, dtype=np.float64)

    @classmethod
    def template(cls, segment_scales: np.ndarray | None = None) -> "KinematicHand":
        """The canonical flat hand; optional per-segment length scales."""
        lengths = np.column_stack([METACARPAL_LEN, PHALANX_LEN])
        if segment_scales is not None:
            lengths = lengths * np.asarray(segment_scales, dtype=np.float64)
        return cls(bone_lengths=lengths)

    @property
    def reference_length(self) -> float:
        """Length of the wrist -> middle-finger-base bone."""
        return float(self.bone_lengths[REFERENCE_FINGER, 0])

    @property
    def reach(self) -> float:
        """Longest wrist-to-fingertip chain length (fully extended)."""
        return float(self.bone_lengths.sum(axis=1).max())

    def check_limits(self):
        lo, hi = ABDUCTION_RANGE
        if (self.abduction < lo - 1e-9).any() or (self.abduction > hi + 1e-9).any():
            raise DomainError(f"abduction outside [{lo}, {hi}]")
        for j, (flo, fhi) in enumerate(FLEX_RANGES):
            col = self.flexion[:, j]
            if (col < flo - 1e-9).any() or (col > fhi + 1e-9).any():
                raise DomainError(f"flexion joint {j} outside [{flo}, {fhi}]")


PALM_NORMAL = np.array([0.0, 0.0, 1.0])


def forward_kinematics(hand: KinematicHand) -> np.ndarray:
    """World positions of all 21 joints, shape (21, 3), float64.

    With zero angles, identity rotation and zero translation, the result is
    the flat canonical template in the z = 0 plane.  Out-of-limit finger
    angles raise DomainError.
    """
    hand.check_limits()
    joints = np.zeros((JOINT_COUNT, 3))
    for f in range(5):
        phi = hand.fan_angles[f]
        base_dir = np.array([math.sin(phi), math.cos(phi), 0.0])
        mcp = hand.bone_lengths[f, 0] * base_dir
        d = _rodrigues(base_dir, PALM_NORMAL, hand.abduction[f])
        lat = np.cross(PALM_NORMAL, d)
        lat /= np.linalg.norm(lat)
        p = mcp
        joints[1 + 4 * f] = p
        total = 0.0
        for s in range(3):
            total += hand.flexion[f, s]
            seg_dir = _rodrigues(d, lat, total)
            p = p + hand.bone_lengths[f, 1 + s] * seg_dir
            joints[2 + 4 * f + s] = p
    r = euler_to_matrix(*hand.rot)
    return joints @ r.T + hand.pos


def normalize_pose(world: np.ndarray, ref_len: float) -> np.ndarray:
    """Root-relative pose with the reference bone scaled to unit length."""
    if ref_len <= 0:
        raise ValueError("reference length must be positive")
    return (world - world[0]) / ref_len


# ----------------------------------------------------------------- camera

@dataclass
class Camera:
    """Pinhole camera: x_cam = rot @ x_world + trans, u = fx x/z + cx."""
    fx: float
    fy: float
    cx: float
    cy: float
    rot: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        self.rot = np.asarray(self.rot, dtype=np.float64)
        self.trans = np.asarray(self.trans, dtype=np.float64).reshape(3)
        if self.rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {self.rot.shape}")
        if not np.allclose(self.rot @ self.rot.T, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation is not orthonormal")
        if np.linalg.det(self.rot) < 0:
            raise ValueError("camera rotation must be proper (det +1)")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @classmethod
    def look_at(cls, position, target, up=(0.0, 1.0, 0.0), fx=40.0, fy=40.0,
                cx=15.5, cy=15.5) -> "Camera":
        """Camera at ``position`` looking toward ``target``; image y points down."""
        position = np.asarray(position, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        fwd = target - position
        n = np.linalg.norm(fwd)
        if n < 1e-12:
            raise ValueError("look_at: position equals target")
        z = fwd / n
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        nx = np.linalg.norm(x)
        if nx < 1e-12:
            raise ValueError("look_at: up is parallel to the view direction")
        x /= nx
        y = np.cross(z, x)
        rot = np.stack([x, y, z])
        return cls(fx=fx, fy=fy, cx=cx, cy=cy, rot=rot, trans=-rot @ position)


def project(joints3d: np.ndarray, cam: Camera) -> np.ndarray:
    """Project world points (J, 3) -> pixel coordinates (J, 2).

    Raises ProjectionError if any point has non-positive camera depth.
    """
    pts = np.asarray(joints3d, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (J, 3) points, got {pts.shape}")
    cam_pts = pts @ cam.rot.T + cam.trans
    z = cam_pts[:, 2]
    if (z <= 1e-9).any():
        raise ProjectionError("point at or behind the camera plane")
    uv = np.empty((pts.shape[0], 2))
    uv[:, 0] = cam.fx * cam_pts[:, 0] / z + cam.cx
    uv[:, 1] = cam.fy * cam_pts[:, 1] / z + cam.cy
    return uv


# --------------------------------------------------------------- renderer

@dataclass
class RenderStyle:
    """Stroke/blob widths and colors for the hand renderer."""
    line_sigma: float = 0.65
    blob_sigma: float = 0.85
    line_gain: float = 0.75
    blob_gain: float = 1.0
    bg_max: float = 0.35
    palette: np.ndarray = field(default_factory=lambda: np.array([
        [1.00, 0.35, 0.35],   # thumb
        [0.35, 1.00, 0.35],   # index
        [0.40, 0.60, 1.00],   # middle
        [1.00, 0.90, 0.30],   # ring
        [1.00, 0.45, 1.00],   # pinky
    ]))
    wrist_color: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0]))


def _segment_dist2(px, py, p0, p1):
    v = p1 - p0
    vv = float(v @ v)
    if vv < 1e-12:
        dx, dy = px - p0[0], py - p0[1]
        return dx * dx + dy * dy
    t = np.clip(((px - p0[0]) * v[0] + (py - p0[1]) * v[1]) / vv, 0.0, 1.0)
    dx = px - (p0[0] + t * v[0])
    dy = py - (p0[1] + t * v[1])
    return dx * dx + dy * dy


def render(joints2d: np.ndarray, img_h: int, img_w: int,
           style: RenderStyle | None = None,
           rng: np.random.Generator | None = None,
           blank_finger: int | None = None) -> np.ndarray:
    """Draw the hand as colored bone strokes and joint blobs.

    Returns (3, img_h, img_w) float32 in [0, 1].  The background is a smooth
    random gradient from ``rng`` (black when rng is None); strokes are added
    on top, so blanking a finger only changes pixels near that finger.
    ``blank_finger`` omits that finger's four bones and joints.
    """
    style = style or RenderStyle()
    joints2d = np.asarray(joints2d, dtype=np.float64)
    if joints2d.shape != (JOINT_COUNT, 2):
        raise ValueError(f"expected ({JOINT_COUNT}, 2) joints, got {joints2d.shape}")
    if rng is not None:
        corners = rng.uniform(0.0, style.bg_max, size=(3, 2, 2))
        wy = np.linspace(0.0, 1.0, img_h)[:, None]
        wx = np.linspace(0.0, 1.0, img_w)[None, :]
        img = (corners[:, 0, 0, None, None] * (1 - wy) * (1 - wx)
               + corners[:, 0, 1, None, None] * (1 - wy) * wx
               + corners[:, 1, 0, None, None] * wy * (1 - wx)
               + corners[:, 1, 1, None, None] * wy * wx)
    else:
        img = np.zeros((3, img_h, img_w))
    py, px = np.mgrid[0:img_h, 0:img_w].astype(np.float64)

    skip_bones, skip_joints = set(), set()
    if blank_finger is not None:
        if not 0 <= blank_finger < 5:
            raise ValueError(f"finger index {blank_finger} out of range")
        skip_bones = set(finger_bones(blank_finger))
        skip_joints = set(finger_joints(blank_finger))

    inv_line = 1.0 / (2.0 * style.line_sigma ** 2)
    for bone in BONES:
        if bone in skip_bones:
            continue
        a, b = bone
        f = (b - 1) // 4
        d2 = _segment_dist2(px, py, joints2d[a], joints2d[b])
        glow = style.line_gain * np.exp(-d2 * inv_line)
        img += style.palette[f][:, None, None] * glow[None, :, :]

    inv_blob = 1.0 / (2.0 * style.blob_sigma ** 2)
    for j in range(JOINT_COUNT):
        if j in skip_joints:
            continue
        dx, dy = px - joints2d[j, 0], py - joints2d[j, 1]
        glow = style.blob_gain * np.exp(-(dx * dx + dy * dy) * inv_blob)
        color = style.wrist_color if j == 0 else style.palette[(j - 1) // 4]
        img += color[:, None, None] * glow[None, :, :]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# ------------------------------------------------------------- sequences

@dataclass
class HandSequenceSample:
    """One training sequence: frames plus exact 2D/3D ground truth.

    ``gt3d`` is root-relative with the wrist -> middle-finger-base bone at
    unit length, identical across views in angular mode.  Fields after
    ``camera_ids`` carry generation-time context (world pose, cameras,
    occlusion mask); they are not serialized.
    """
    frames: np.ndarray        # (N, 3, H, W) float32 in [0, 1]
    gt2d: np.ndarray          # (N, 21, 2) float32, pixel units
    gt3d: np.ndarray          # (N, 21, 3) float32, normalized units
    subject: int
    activity: int
    camera_ids: np.ndarray    # (N,) int
    mode: str = "temporal"
    world: np.ndarray | None = None       # (N, 21, 3) float64
    cameras: list | None = None
    ref_len: float | None = None
    occluded: np.ndarray | None = None    # (N,) int, -1 = fully visible
    smooth_bound: float | None = None

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def validate(self):
        n = self.frames.shape[0]
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ValueError(f"frames must be (N, 3, H, W), got {self.frames.shape}")
        if self.gt2d.shape != (n, JOINT_COUNT, 2):
            raise ValueError(f"gt2d shape {self.gt2d.shape}")
        if self.gt3d.shape != (n, JOINT_COUNT, 3):
            raise ValueError(f"gt3d shape {self.gt3d.shape}")
        if self.camera_ids.shape != (n,):
            raise ValueError(f"camera_ids shape {self.camera_ids.shape}")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ValueError("frame values must lie in [0, 1]")
        if not (np.isfinite(self.gt2d).all() and np.isfinite(self.gt3d).all()):
            raise ValueError("ground truth must be finite")

    def reprojection_error(self) -> float:
        """Max |gt2d - project(world)| in pixels; needs generation context."""
        if self.world is None or self.cameras is None:
            raise ValueError("sample lacks generation context (world/cameras)")
        worst = 0.0
        for t in range(self.n_frames):
            uv = project(self.world[t], self.cameras[t])
            worst = max(worst, float(np.abs(uv - self.gt2d[t].astype(np.float64)).max()))
        return worst


@dataclass
class GenSpec:
    """Configuration for the synthetic sequence generator."""
    subjects: int = 2
    activities: int = 2
    sequences_per: int = 4
    frames: int = 5             # sequence length in temporal mode
    cameras: int = 3            # sequence length in angular mode
    img_h: int = 32
    img_w: int = 32
    mode: str = "temporal"
    seed: int = 7
    camera_spacing_deg: float = 30.0
    camera_distance: float = 10.0
    occlude: bool = False
    occlude_prob: float = 0.5
    angle_step: float = 0.25    # per-frame angle change cap, radians
    trans_step: float = 0.08    # per-frame translation cap per axis
    focal_factor: float = 3.0   # focal length in units of image width
    split_by: str = "subject"
    test_ids: tuple = ()

    def __post_init__(self):
        if self.mode not in ("temporal", "angular"):
            raise ValueError(f"unknown mode '{self.mode}'")
        if self.split_by not in ("subject", "activity"):
            raise ValueError(f"unknown split '{self.split_by}'")
        if min(self.subjects, self.activities, self.sequences_per) < 1:
            raise ValueError("counts must be positive")
        if self.frames < 1 or self.cameras < 1:
            raise ValueError("sequence length must be positive")
        if not 0.0 <= self.occlude_prob <= 1.0:
            raise ValueError("occlude_prob must lie in [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.frames if self.mode == "temporal" else self.cameras

    @property
    def n_samples(self) -> int:
        return self.subjects * self.activities * self.sequences_per

    def focal(self) -> float:
        return self.focal_factor * self.img_w


@dataclass
class SplitManifest:
    """Train/test partition of sample indices by subject or activity."""
    split_by: str
    test_ids: list
    train: list
    test: list

    def save(self, path):
        Path(path).write_text(json.dumps({
            "split_by": self.split_by, "test_ids": self.test_ids,
            "train": self.train, "test": self.test}, indent=0) + "\n")

    @classmethod
    def load(cls, path) -> "SplitManifest":
        d = json.loads(Path(path).read_text())
        return cls(split_by=d["split_by"], test_ids=list(d["test_ids"]),
                   train=list(d["train"]), test=list(d["test"]))


def _ring_cameras(spec: GenSpec) -> list:
    """Cameras on a horizontal ring around the origin, all looking inward."""
    n = spec.cameras
    spacing = math.radians(spec.camera_spacing_deg)
    cams = []
    for i in range(n):
        theta = (i - (n - 1) / 2.0) * spacing
        pos = spec.camera_distance * np.array([math.sin(theta), 0.0, math.cos(theta)])
        cams.append(Camera.look_at(pos, (0.0, 0.0, 0.0), fx=spec.focal(), fy=spec.focal(),
                                   cx=(spec.img_w - 1) / 2.0, cy=(spec.img_h - 1) / 2.0))
    return cams


def _front_camera(spec: GenSpec) -> Camera:
    return Camera.look_at((0.0, 0.0, spec.camera_distance), (0.0, 0.0, 0.0),
                          fx=spec.focal(), fy=spec.focal(),
                          cx=(spec.img_w - 1) / 2.0, cy=(spec.img_h - 1) / 2.0)


def _subject_scales(seed: int, subject: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 9001, subject])
    return 1.0 + 0.08 * rng.uniform(-1.0, 1.0, size=(5, 4))


def _sample_span(rng, lo, hi, margin=0.15):
    span = hi - lo
    return rng.uniform(lo + margin * span, hi - margin * span)


class _Trajectory:
    """Smooth sinusoidal trajectory with a hard per-frame step cap."""

    def __init__(self, rng, base, lo, hi, step_cap, n):
        self.base = base
        self.lo, self.hi = lo, hi
        freq = rng.uniform(0.4, 1.2)
        amp_cap = step_cap * n / (2.0 * math.pi * freq) if n > 1 else 0.0
        self.amp = rng.uniform(0.0, amp_cap)
        self.freq = freq
        self.phase = rng.uniform(0.0, 2.0 * math.pi)
        self.n = n

    def at(self, t: int) -> float:
        v = self.base + self.amp * math.sin(2.0 * math.pi * self.freq * t / self.n + self.phase)
        return float(np.clip(v, self.lo, self.hi))


def _occlusion_plan(rng, n: int, prob: float) -> tuple:
    """Pick one finger and a strict subset of frames to blank it in."""
    finger = int(rng.integers(5))
    mask = rng.random(n) < prob
    if mask.all():
        mask[int(rng.integers(n))] = False
    if not mask.any():
        mask[int(rng.integers(n))] = True
    occ = np.full(n, -1, dtype=np.int64)
    occ[mask] = finger
    return finger, occ


def _generate_sequence(spec: GenSpec, subject: int, activity: int, rep: int,
                       style: RenderStyle) -> HandSequenceSample:
    rng = np.random.default_rng([spec.seed, subject, activity, rep])
    n = spec.n_frames
    hand = KinematicHand.template(_subject_scales(spec.seed, subject))

    # activity seeds the pose family; sequence rng perturbs it
    act_rng = np.random.default_rng([spec.seed, 7007, activity])
    abd_base = np.array([_sample_span(act_rng, *ABDUCTION_RANGE) for _ in range(5)])
    flex_base = np.array([[_sample_span(act_rng, lo, 0.5 * (lo + hi))
                           for (lo, hi) in FLEX_RANGES] for _ in range(5)])

    rot_base = rng.uniform(-0.5, 0.5, size=3)
    pos_base = rng.uniform(-0.2, 0.2, size=3)
    # keep the hand centered in view: rotate about the flat-pose centroid
    centroid = forward_kinematics(
        KinematicHand(bone_lengths=hand.bone_lengths.copy())).mean(axis=0)

    if spec.mode == "temporal":
        abd_tr = [_Trajectory(rng, abd_base[f] + 0.1 * rng.standard_normal(),
                              *ABDUCTION_RANGE, spec.angle_step, n) for f in range(5)]
        flex_tr = [[_Trajectory(rng, flex_base[f, s] + 0.1 * rng.standard_normal(),
                                FLEX_RANGES[s][0], FLEX_RANGES[s][1], spec.angle_step, n)
                    for s in range(3)] for f in range(5)]
        rot_tr = [_Trajectory(rng, rot_base[a], -0.7, 0.7, spec.angle_step, n)
                  for a in range(3)]
        pos_tr = [_Trajectory(rng, pos_base[a], -0.3, 0.3, spec.trans_step, n)
                  for a in range(3)]
        cameras = [_front_camera(spec)] * n
        camera_ids = np.zeros(n, dtype=np.int64)
    else:
        cameras = _ring_cameras(spec)
        camera_ids = np.arange(n, dtype=np.int64)

    occluded = np.full(n, -1, dtype=np.int64)
    if spec.occlude:
        _, occluded = _occlusion_plan(rng, n, spec.occlude_prob)

    world = np.zeros((n, JOINT_COUNT, 3))
    if spec.mode == "temporal":
        for t in range(n):
            for f in range(5):
                hand.abduction[f] = abd_tr[f].at(t)
                for s in range(3):
                    hand.flexion[f, s] = flex_tr[f][s].at(t)
            hand.rot = np.array([rot_tr[a].at(t) for a in range(3)])
            jitter = np.array([pos_tr[a].at(t) for a in range(3)])
            hand.pos = jitter - euler_to_matrix(*hand.rot) @ centroid
            world[t] = forward_kinematics(hand)
    else:
        hand.abduction = np.clip(abd_base + 0.05 * rng.standard_normal(5),
                                 *ABDUCTION_RANGE)
        lo = np.array([r[0] for r in FLEX_RANGES])
        hi = np.array([r[1] for r in FLEX_RANGES])
        hand.flexion = np.clip(flex_base + 0.05 * rng.standard_normal((5, 3)),
                               lo[None, :], hi[None, :])
        hand.rot = rot_base
        hand.pos = pos_base * 0.6 - euler_to_matrix(*hand.rot) @ centroid
        pose = forward_kinematics(hand)
        world[:] = pose[None]

    ref_len = hand.reference_length
    gt3d = np.stack([normalize_pose(world[t], ref_len) for t in range(n)])
    gt2d = np.stack([project(world[t], cameras[t]) for t in range(n)])

    lo2, hi2 = -0.5, max(spec.img_h, spec.img_w) - 0.5
    if gt2d.min() < lo2 or gt2d.max() > hi2:
        raise ProjectionError(
            f"hand out of frame for sample ({subject},{activity},{rep})")

    frames = np.stack([
        render(gt2d[t], spec.img_h, spec.img_w, style, rng,
               blank_finger=None if occluded[t] < 0 else int(occluded[t]))
        for t in range(n)])

    # worst-case per-frame joint displacement: translation plus every
    # rotation-type angle (3 global + abduction + 3 flexions) sweeping a
    # lever arm bounded by the hand's reach
    bound = None
    if spec.mode == "temporal":
        bound = 3 * spec.trans_step + 7 * spec.angle_step * hand.reach

    return HandSequenceSample(
        frames=frames, gt2d=gt2d.astype(np.float32), gt3d=gt3d.astype(np.float32),
        subject=subject, activity=activity, camera_ids=camera_ids, mode=spec.mode,
        world=world, cameras=list(cameras), ref_len=ref_len, occluded=occluded,
        smooth_bound=bound)


def generate_dataset(spec: GenSpec, style: RenderStyle | None = None):
    """Generate all sequences for ``spec`` plus a train/test split manifest.

    Deterministic in ``spec.seed``: every sequence derives its own generator
    from (seed, subject, activity, repetition), so the result is independent
    of generation order.
    """
    style = style or RenderStyle()
    samples = []
    for s in range(spec.subjects):
        for a in range(spec.activities):
            for r in range(spec.sequences_per):
                samples.append(_generate_sequence(spec, s, a, r, style))
    test_ids = list(spec.test_ids)
    if not test_ids:
        pool = spec.subjects if spec.split_by == "subject" else spec.activities
        test_ids = [pool - 1] if pool > 1 else []
    key = (lambda smp: smp.subject) if spec.split_by == "subject" else (lambda smp: smp.activity)
    train_idx = [i for i, smp in enumerate(samples) if key(smp) not in test_ids]
    test_idx = [i for i, smp in enumerate(samples) if key(smp) in test_ids]
    manifest = SplitManifest(split_by=spec.split_by, test_ids=test_ids,
                             train=train_idx, test=test_idx)
    return samples, manifest


# ------------------------------------------------------------ file format

DATASET_MAGIC = b"STHD"
DATASET_VERSION = 1
_MODE_CODE = {"temporal": 0, "angular": 1}
_MODE_NAME = {v: k for k, v in _MODE_CODE.items()}


@dataclass
class DatasetHeader:
    n_samples: int
    subjects: int
    activities: int
    sequences_per: int
    n_frames: int
    img_h: int
    img_w: int
    channels: int
    mode: str


def write_dataset(path, samples, spec: GenSpec):
    """Serialize samples to the STHD binary format (with trailing CRC-32)."""
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    n = samples[0].n_frames
    h, w = samples[0].frames.shape[2:]
    blob = bytearray()
    blob += DATASET_MAGIC
    blob += struct.pack("<I", DATASET_VERSION)
    blob += struct.pack("<9I", len(samples), spec.subjects, spec.activities,
                        spec.sequences_per, n, h, w, 3, _MODE_CODE[samples[0].mode])
    for smp in samples:
        smp.validate()
        if smp.n_frames != n:
            raise ValueError("all samples must share one sequence length")
        blob += struct.pack("<2I", smp.subject, smp.activity)
        blob += struct.pack(f"<{n}I", *[int(c) for c in smp.camera_ids])
        blob += np.ascontiguousarray(smp.frames, dtype="<f4").tobytes()
        blob += np.ascontiguousarray(smp.gt2d, dtype="<f4").tobytes()
        blob += np.ascontiguousarray(smp.gt3d, dtype="<f4").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(blob))


def read_dataset(path):
    """Read an STHD file; returns (DatasetHeader, list[HandSequenceSample]).

    Verifies magic, version and the trailing checksum; corruption raises
    FormatError.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError("dataset file truncated")
    if raw[:4] != DATASET_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {DATASET_MAGIC!r}")
    stored = struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored:
        raise FormatError("dataset checksum mismatch")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    vals = struct.unpack_from("<9I", raw, 8)
    header = DatasetHeader(n_samples=vals[0], subjects=vals[1], activities=vals[2],
                           sequences_per=vals[3], n_frames=vals[4], img_h=vals[5],
                           img_w=vals[6], channels=vals[7], mode=_MODE_NAME[vals[8]])
    off = 8 + 36
    n, h, w = header.n_frames, header.img_h, header.img_w
    f_bytes = n * 3 * h * w * 4
    g2_bytes = n * JOINT_COUNT * 2 * 4
    g3_bytes = n * JOINT_COUNT * 3 * 4
    samples = []
    for _ in range(header.n_samples):
        subject, activity = struct.unpack_from("<2I", raw, off)
        off += 8
        cam_ids = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(np.int64)
        off += 4 * n
        frames = np.frombuffer(raw, dtype="<f4", count=f_bytes // 4, offset=off) \
            .reshape(n, 3, h, w).copy()
        off += f_bytes
        gt2d = np.frombuffer(raw, dtype="<f4", count=g2_bytes // 4, offset=off) \
            .reshape(n, JOINT_COUNT, 2).copy()
        off += g2_bytes
        gt3d = np.frombuffer(raw, dtype="<f4", count=g3_bytes // 4, offset=off) \
            .reshape(n, JOINT_COUNT, 3).copy()
        off += g3_bytes
        samples.append(HandSequenceSample(
            frames=frames, gt2d=gt2d, gt3d=gt3d, subject=int(subject),
            activity=int(activity), camera_ids=cam_ids, mode=header.mode))
    if off != len(raw) - 4:
        raise FormatError("dataset record layout inconsistent with file size")
    return header, samples
