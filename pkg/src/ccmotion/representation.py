"""Per-frame motion representation and its inverse.

Each frame n of a clip becomes one flat vector, all blocks expressed in
the heading-levelled coordinate system of frame n-1 (frame 0 uses its
own): origin at the previous root's ground-plane position, +Y up, +Z
along the previous heading. Blocks, in storage order:

    x_e  exp-map rotations, 3 per joint; the root entry is its world
         orientation with the anchor heading removed, the rest are
         local joint rotations (canonical branch, angle <= pi)
    x_w  angular velocities: one-frame differences of x_e taken on the
         nearest branch, so crossing the pi boundary stays continuous
    x_p  joint positions in the anchor frame (root y is world height,
         the anchor sits on the ground plane)
    x_v  linear velocities, mm per frame, rotated into the anchor frame
    x_f  two binary foot-contact flags (left toe, right toe)

Millimetres and radians throughout; velocities are per frame. A clip
stores its first frame's planar position and heading as the anchor, so
an aligned clip (first frame at the origin facing +Z) has the identity
anchor and the on-disk schema needs no anchor field.

``from_representation`` rebuilds world poses from rotations and the
root position channel alone (other joints follow by forward
kinematics), which makes the round trip exact to float precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .skeleton import GlobalPose, Skeleton, fk, toe_indices

CONTACT_DISPLACEMENT_MM = 5.0
CONTACT_HEIGHT_MM = 80.0


class RepresentationError(ValueError):
    pass


@dataclass
class MotionClip:
    """A motion clip in representation form.

    data is (N, D) float64 with D = 12*J + 2. N may be zero (an empty
    rollout is representable); operations that need history, like
    training or reconstruction, enforce their own minimums.
    """

    skeleton: Skeleton
    fps: float
    data: np.ndarray
    type_labels: np.ndarray = None  # (N,) int64
    subject: str = ""
    anchor_xz: np.ndarray = field(default_factory=lambda: np.zeros(2))
    anchor_heading: float = 0.0

    def __post_init__(self):
        J = self.skeleton.n_joints
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != 12 * J + 2:
            raise RepresentationError(
                f"clip data {self.data.shape} does not match {12 * J + 2} dims "
                f"for a {J}-joint skeleton")
        if self.type_labels is None:
            self.type_labels = np.zeros(len(self.data), dtype=np.int64)
        self.type_labels = np.asarray(self.type_labels, dtype=np.int64)
        if self.type_labels.shape != (len(self.data),):
            raise RepresentationError("one type label per frame required")
        if self.fps <= 0:
            raise RepresentationError(f"fps must be positive, got {self.fps}")
        self.anchor_xz = np.asarray(self.anchor_xz, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.data)

    @property
    def n_joints(self) -> int:
        return self.skeleton.n_joints

    @property
    def d_motion(self) -> int:
        """Continuous dims (everything except the two contact flags)."""
        return 12 * self.skeleton.n_joints

    def _block(self, k: int) -> np.ndarray:
        J = self.skeleton.n_joints
        return self.data[:, k * 3 * J:(k + 1) * 3 * J].reshape(len(self.data), J, 3)

    @property
    def e(self) -> np.ndarray:
        return self._block(0)

    @property
    def w(self) -> np.ndarray:
        return self._block(1)

    @property
    def p(self) -> np.ndarray:
        return self._block(2)

    @property
    def v(self) -> np.ndarray:
        return self._block(3)

    @property
    def f(self) -> np.ndarray:
        return self.data[:, self.d_motion:]

    def copy(self) -> "MotionClip":
        return MotionClip(self.skeleton, self.fps, self.data.copy(),
                          self.type_labels.copy(), self.subject,
                          self.anchor_xz.copy(), self.anchor_heading)


def _heading_frame(root_pos: np.ndarray, root_quat: np.ndarray):
    """(planar origin, heading) of a pose's heading-levelled frame."""
    theta = float(quat.heading_of(root_quat))
    return np.array([root_pos[0], root_pos[2]]), theta


def _to_anchor_vec(vecs: np.ndarray, theta: float) -> np.ndarray:
    """Rotate world vectors into an anchor frame (inverse yaw)."""
    return quat.rotate(quat.from_y(-theta), vecs)


def _nearest_branch_diff(cur: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """cur - prev on whichever branch of cur lies closest to prev.

    cur/prev are (J,3) canonical exp coords. The only competitive
    alternative representative of a canonical rotation vector is the
    opposite branch (angle 2*pi - theta about the negated axis).
    """
    diff = cur - prev
    ang = np.linalg.norm(cur, axis=-1, keepdims=True)
    safe = np.maximum(ang, 1e-12)
    alt = cur * (1.0 - 2.0 * np.pi / safe)
    alt_diff = alt - prev
    use_alt = (np.linalg.norm(alt_diff, axis=-1) < np.linalg.norm(diff, axis=-1)) \
        & (ang[..., 0] > 1e-12)
    return np.where(use_alt[..., None], alt_diff, diff)


def label_foot_contact(positions: np.ndarray,
                       delta_d: float = CONTACT_DISPLACEMENT_MM,
                       delta_y: float = CONTACT_HEIGHT_MM) -> np.ndarray:
    """Binary contact per frame for one foot's world positions (N,3).

    Contact = displacement since the previous frame under ``delta_d``
    AND height above the ground plane under ``delta_y``. Frame 0 uses
    the forward difference (copies frame 1's displacement test).
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise RepresentationError(f"expected (N,3) positions, got {positions.shape}")
    n = len(positions)
    if n == 0:
        return np.zeros(0)
    disp = np.zeros(n)
    if n > 1:
        disp[1:] = np.linalg.norm(np.diff(positions, axis=0), axis=1)
        disp[0] = disp[1]
    return ((disp < delta_d) & (positions[:, 1] < delta_y)).astype(np.float64)


def to_representation(skel: Skeleton, poses: list[GlobalPose], fps: float,
                      type_labels: np.ndarray | None = None,
                      subject: str = "") -> MotionClip:
    """Encode world poses as a MotionClip (N poses -> N frames)."""
    N = len(poses)
    J = skel.n_joints
    if N == 0:
        clip = MotionClip(skel, fps, np.zeros((0, 12 * J + 2)), subject=subject)
        return clip
    pos = np.zeros((N, J, 3))
    for i, p in enumerate(poses):
        pos[i], _ = fk(skel, p)
    lt, rt = toe_indices(skel)
    contacts = np.stack([label_foot_contact(pos[:, lt]),
                         label_foot_contact(pos[:, rt])], axis=1)

    data = np.zeros((N, 12 * J + 2))
    anchor_xz, anchor_heading = _heading_frame(
        poses[0].root_position, poses[0].rotations[0])

    for n in range(N):
        ref = poses[n - 1] if n > 0 else poses[n]
        origin, theta = _heading_frame(ref.root_position, ref.rotations[0])
        inv_yaw = quat.from_y(-theta)

        # rotations: root relative to anchor yaw, others local
        e = np.zeros((J, 3))
        e[0] = quat.to_expmap(quat.mul(inv_yaw, poses[n].rotations[0]))
        e[1:] = quat.to_expmap(poses[n].rotations[1:])
        # the previous frame's root orientation seen from this same anchor
        prev = np.zeros((J, 3))
        prev[0] = quat.to_expmap(quat.mul(inv_yaw, ref.rotations[0]))
        prev[1:] = quat.to_expmap(ref.rotations[1:])

        rel = pos[n] - np.array([origin[0], 0.0, origin[1]])
        p_anchor = _to_anchor_vec(rel, theta)
        if n > 0:
            v_anchor = _to_anchor_vec(pos[n] - pos[n - 1], theta)
            w = _nearest_branch_diff(e, prev)
        else:
            v_anchor = np.zeros((J, 3))
            w = np.zeros((J, 3))

        data[n, : 3 * J] = e.ravel()
        data[n, 3 * J: 6 * J] = w.ravel()
        data[n, 6 * J: 9 * J] = p_anchor.ravel()
        data[n, 9 * J: 12 * J] = v_anchor.ravel()
        data[n, 12 * J:] = contacts[n]

    return MotionClip(skel, fps, data, type_labels, subject,
                      anchor_xz, anchor_heading)


def from_representation(clip: MotionClip) -> list[GlobalPose]:
    """Decode a clip back into world poses.

    Only rotations and the root position channel are consumed; joint
    positions/velocities in the clip are FK-implied and ignored here.
    """
    J = clip.skeleton.n_joints
    poses: list[GlobalPose] = []
    origin = clip.anchor_xz.copy()
    theta = clip.anchor_heading
    e = clip.e
    p = clip.p
    for n in range(len(clip)):
        yaw = quat.from_y(theta)
        rot = np.zeros((J, 4))
        rot[0] = quat.mul(yaw, quat.from_expmap(e[n, 0]))
        rot[1:] = quat.from_expmap(e[n, 1:])
        local = quat.rotate(yaw, p[n, 0])
        root_pos = np.array([origin[0] + local[0], p[n, 0, 1], origin[1] + local[2]])
        pose = GlobalPose(root_pos, rot)
        poses.append(pose)
        origin, theta = _heading_frame(root_pos, rot[0])
    return poses


def align_poses(poses: list[GlobalPose]) -> list[GlobalPose]:
    """Rigidly move a pose sequence so frame 0 sits at the origin facing +Z.

    One planar transform applied to every frame: first root planar
    position to (0,0), first heading to zero. Root height untouched.
    Applying it twice is a no-op.
    """
    if not poses:
        return []
    origin, theta = _heading_frame(poses[0].root_position, poses[0].rotations[0])
    inv = quat.from_y(-theta)
    shift = np.array([origin[0], 0.0, origin[1]])
    out = []
    for pose in poses:
        rot = pose.rotations.copy()
        rot[0] = quat.mul(inv, rot[0])
        root = quat.rotate(inv, pose.root_position - shift)
        out.append(GlobalPose(root, rot))
    return out


def align_clip(clip: MotionClip) -> MotionClip:
    """Alignment in representation space: only the anchor changes."""
    out = clip.copy()
    out.anchor_xz = np.zeros(2)
    out.anchor_heading = 0.0
    return out


def augment_noise(data: np.ndarray, std: float, rng: np.random.Generator,
                  d_motion: int | None = None) -> np.ndarray:
    """Gaussian noise on the continuous dims; contact flags untouched.

    ``data`` is (..., D); the last two entries of the final axis are
    the contacts unless ``d_motion`` overrides the split point.
    """
    if std < 0:
        raise ValueError("noise std must be non-negative")
    data = np.asarray(data, dtype=np.float64)
    dm = data.shape[-1] - 2 if d_motion is None else d_motion
    out = data.copy()
    out[..., :dm] += rng.normal(0.0, std, size=data[..., :dm].shape)
    return out


def downsample(clip: MotionClip, target_fps: float = 60.0) -> MotionClip:
    """Stride a clip down to target_fps, recomputing velocities.

    The source rate must be an integer multiple of the target; frames
    kept are 0, k, 2k, ...
    """
    ratio = clip.fps / target_fps
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-6:
        raise RepresentationError(
            f"fps {clip.fps} is not an integer multiple of {target_fps}")
    if k == 1:
        out = clip.copy()
        return out
    poses = from_representation(clip)
    return to_representation(clip.skeleton, poses[::k], target_fps,
                             clip.type_labels[::k], clip.subject)


def world_positions(clip: MotionClip) -> np.ndarray:
    """FK world joint positions for every frame, (N, J, 3)."""
    poses = from_representation(clip)
    if not poses:
        return np.zeros((0, clip.skeleton.n_joints, 3))
    return np.stack([fk(clip.skeleton, p)[0] for p in poses])


def root_track(clip: MotionClip) -> tuple[np.ndarray, np.ndarray]:
    """(root planar positions (N,2), headings (N,)) in world coords."""
    poses = from_representation(clip)
    xz = np.array([[p.root_position[0], p.root_position[2]] for p in poses],
                  dtype=np.float64).reshape(-1, 2)
    heading = np.array([quat.heading_of(p.rotations[0]) for p in poses])
    return xz, heading
