"""Skeleton model, canonical rig, and forward kinematics.

A skeleton is a topologically ordered joint list (every parent index
precedes its children, root first with parent -1) plus constant bone
offsets in millimetres. Poses are per-joint local rotations as unit
quaternions; the root's "local" rotation is its world orientation and
the root world position is carried separately.

The canonical rig has 28 joints: root plus the 27 non-finger joints
used by the motion representation (spine x3, neck x2, head + end,
5-joint arms, 5-joint legs). T-pose faces +Z with arms along +/-X.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int
    offset: tuple[float, float, float]


@dataclass
class Skeleton:
    """Joint hierarchy with fixed bone offsets (mm)."""

    joints: list[Joint]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.joints:
            raise SkeletonError("skeleton needs at least one joint")
        if self.joints[0].parent != -1:
            raise SkeletonError("first joint must be the root (parent -1)")
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise SkeletonError("duplicate joint names")
        for i, j in enumerate(self.joints[1:], start=1):
            if not 0 <= j.parent < i:
                raise SkeletonError(
                    f"joint {j.name!r}: parent {j.parent} breaks topological order")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def parents(self) -> np.ndarray:
        return np.array([j.parent for j in self.joints], dtype=np.int64)

    @property
    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints], dtype=np.float64)

    @property
    def names(self) -> list[str]:
        return [j.name for j in self.joints]

    def find(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SkeletonError(f"no joint named {name!r}") from None

    def t_pose(self) -> np.ndarray:
        """World joint positions with identity rotations, root at its offset."""
        pos = np.zeros((self.n_joints, 3))
        for i, j in enumerate(self.joints):
            if j.parent < 0:
                pos[i] = j.offset
            else:
                pos[i] = pos[j.parent] + j.offset
        return pos

    def height(self) -> float:
        """Vertical extent of the T-pose (max y minus min y), mm."""
        ys = self.t_pose()[:, 1]
        return float(ys.max() - ys.min())

    def to_dict(self) -> dict:
        return {
            "joints": [
                {"name": j.name, "parent": j.parent, "offset": list(j.offset)}
                for j in self.joints
            ]
        }

    @staticmethod
    def from_dict(d: dict) -> "Skeleton":
        try:
            joints = [
                Joint(str(j["name"]), int(j["parent"]),
                      tuple(float(v) for v in j["offset"]))
                for j in d["joints"]
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise SkeletonError(f"malformed skeleton dict: {e}") from e
        return Skeleton(joints)


@dataclass
class GlobalPose:
    """One frame: root world position plus per-joint local rotations.

    rotations[0] is the root's world orientation; rotations[j] for j>0
    is joint j's rotation relative to its parent. All quaternions wxyz.
    """

    root_position: np.ndarray
    rotations: np.ndarray  # (J, 4)

    def copy(self) -> "GlobalPose":
        return GlobalPose(self.root_position.copy(), self.rotations.copy())


def fk(skel: Skeleton, pose: GlobalPose) -> tuple[np.ndarray, np.ndarray]:
    """World positions (J,3) and world orientations (J,4) for one pose.

    position(child) = position(parent) + rotate(orient(parent), offset(child))
    orient(child)   = orient(parent) * local(child)
    """
    J = skel.n_joints
    rot = np.asarray(pose.rotations, dtype=np.float64)
    if rot.shape != (J, 4):
        raise SkeletonError(f"pose has {rot.shape} rotations, skeleton wants ({J}, 4)")
    pos = np.zeros((J, 3))
    orient = np.zeros((J, 4))
    pos[0] = np.asarray(pose.root_position, dtype=np.float64)
    orient[0] = rot[0]
    offs = skel.offsets
    parents = skel.parents
    for i in range(1, J):
        p = parents[i]
        orient[i] = quat.mul(orient[p], rot[i])
        pos[i] = pos[p] + quat.rotate(orient[p], offs[i])
    return pos, orient


def fk_positions(skel: Skeleton, poses: list[GlobalPose]) -> np.ndarray:
    """World positions for a pose sequence, shape (N, J, 3)."""
    return np.stack([fk(skel, p)[0] for p in poses])


_CANONICAL = [
    # name, parent, offset (mm)
    ("Hips", -1, (0.0, 960.0, 0.0)),
    ("Spine", 0, (0.0, 90.0, 0.0)),
    ("Spine1", 1, (0.0, 90.0, 0.0)),
    ("Spine2", 2, (0.0, 90.0, 0.0)),
    ("Neck", 3, (0.0, 80.0, 0.0)),
    ("Neck1", 4, (0.0, 50.0, 0.0)),
    ("Head", 5, (0.0, 60.0, 0.0)),
    ("HeadEnd", 6, (0.0, 160.0, 0.0)),
    ("LeftShoulder", 3, (80.0, 60.0, 0.0)),
    ("LeftArm", 8, (120.0, 0.0, 0.0)),
    ("LeftForeArm", 9, (260.0, 0.0, 0.0)),
    ("LeftHand", 10, (250.0, 0.0, 0.0)),
    ("LeftHandEnd", 11, (80.0, 0.0, 0.0)),
    ("RightShoulder", 3, (-80.0, 60.0, 0.0)),
    ("RightArm", 13, (-120.0, 0.0, 0.0)),
    ("RightForeArm", 14, (-260.0, 0.0, 0.0)),
    ("RightHand", 15, (-250.0, 0.0, 0.0)),
    ("RightHandEnd", 16, (-80.0, 0.0, 0.0)),
    ("LeftUpLeg", 0, (90.0, -40.0, 0.0)),
    ("LeftLeg", 18, (0.0, -440.0, 0.0)),
    ("LeftFoot", 19, (0.0, -440.0, 0.0)),
    ("LeftToe", 20, (0.0, -30.0, 140.0)),
    ("LeftToeEnd", 21, (0.0, 0.0, 60.0)),
    ("RightUpLeg", 0, (-90.0, -40.0, 0.0)),
    ("RightLeg", 23, (0.0, -440.0, 0.0)),
    ("RightFoot", 24, (0.0, -440.0, 0.0)),
    ("RightToe", 25, (0.0, -30.0, 140.0)),
    ("RightToeEnd", 26, (0.0, 0.0, 60.0)),
]


def canonical_skeleton() -> Skeleton:
    """The 28-joint reference rig (root + 27 moving joints), mm units."""
    return Skeleton([Joint(n, p, o) for n, p, o in _CANONICAL])


def scaled_skeleton(base: Skeleton | None = None, *, overall: float = 1.0,
                    legs: float = 1.0, arms: float = 1.0) -> Skeleton:
    """Proportionally rescaled rig, for modelling different subjects.

    Leg scaling keeps the root grounded by rescaling the root's own
    height offset with the legs, so the T-pose feet stay near y=0.
    """
    skel = base if base is not None else canonical_skeleton()
    leg_names = {n for n in skel.names if "Leg" in n or "Foot" in n or "Toe" in n}
    arm_names = {n for n in skel.names
                 if "Arm" in n or "Hand" in n or "Shoulder" in n}
    out = []
    for j in skel.joints:
        s = overall
        if j.name in leg_names or j.parent == -1:
            s = s * legs
        elif j.name in arm_names:
            s = s * arms
        out.append(Joint(j.name, j.parent, tuple(np.asarray(j.offset) * s)))
    return Skeleton(out)


def toe_indices(skel: Skeleton) -> tuple[int, int]:
    """(left, right) toe joint indices; the contact reference points."""
    return skel.find("LeftToe"), skel.find("RightToe")


def leg_chain(skel: Skeleton, side: str) -> dict[str, int]:
    """Hip/knee/foot/toe indices for one leg ('left' or 'right')."""
    pre = {"left": "Left", "right": "Right"}[side]
    return {
        "hip": skel.find(pre + "UpLeg"),
        "knee": skel.find(pre + "Leg"),
        "foot": skel.find(pre + "Foot"),
        "toe": skel.find(pre + "Toe"),
    }


def identity_pose(skel: Skeleton) -> GlobalPose:
    rot = np.zeros((skel.n_joints, 4))
    rot[:, 0] = 1.0
    return GlobalPose(np.asarray(skel.joints[0].offset, dtype=np.float64), rot)
