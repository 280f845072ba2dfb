"""Analytic two-bone leg IK and contact-driven foot cleanup.

The solver positions a hip/knee chain so the ankle reaches a world
target, keeping the knee in the plane spanned by the target direction
and a pole direction (knee points at the pole). Returns local
rotations, so results drop straight into a GlobalPose.

``ik_foot_cleanup`` removes foot skate: within every contact run the
toe is pinned to its position at the run's first frame. Frames inside
a run get the full correction (so the pinned toe does not move at
all); the five frames before and after a run get a tapered partial
correction to avoid pops. Unreachable pins are clamped to the leg's
reach sphere and flagged.
"""

from __future__ import annotations

import numpy as np

from . import quat
from .representation import MotionClip, from_representation, to_representation
from .skeleton import GlobalPose, Skeleton, fk, leg_chain


def two_bone_ik(hip_pos: np.ndarray, target: np.ndarray, pelvis_q: np.ndarray,
                l1: float, l2: float,
                pole_local: np.ndarray = (0.0, 0.0, 1.0),
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Solve hip and knee local rotations for an ankle target.

    The chain hangs along -Y at rest (thigh and shin both (0,-1,0) in
    their local frames). Returns (q_hip_local, q_knee_local,
    effective_target, clamped); the effective target equals ``target``
    unless the distance had to be clamped into the reachable annulus.
    """
    hip_pos = np.asarray(hip_pos, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    span = target - hip_pos
    d_raw = float(np.linalg.norm(span))
    lo = abs(l1 - l2) + 1e-6
    hi = l1 + l2 - 1e-6
    d = min(max(d_raw, lo), hi)
    clamped = d != d_raw
    if d_raw < 1e-9:
        dir_world = quat.rotate(pelvis_q, np.array([0.0, -1.0, 0.0]))
    else:
        dir_world = span / d_raw
    eff_target = hip_pos + dir_world * d

    dir_local = quat.rotate(quat.conj(pelvis_q), dir_world)
    pole = np.asarray(pole_local, dtype=np.float64)
    # bend axis oriented so it lands near +X for a down-hanging leg with a
    # forward pole; keeps solved frames close to the rest pose convention
    # (positive knee rotation folds the heel backwards)
    n = np.cross(pole, dir_local)
    if np.linalg.norm(n) < 1e-8:
        n = np.cross(np.array([0.0, 1.0, 0.0]), dir_local)
        if np.linalg.norm(n) < 1e-8:
            n = np.array([1.0, 0.0, 0.0])
    n = n / np.linalg.norm(n)

    cos_a = np.clip((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d), -1.0, 1.0)
    alpha = float(np.arccos(cos_a))
    thigh_dir = quat.rotate(quat.from_axis_angle(n, -alpha), dir_local)

    def frame_quat(x_axis, y_axis):
        y = y_axis / np.linalg.norm(y_axis)
        z = np.cross(x_axis, y)
        z = z / np.linalg.norm(z)
        x = np.cross(y, z)
        return quat.from_matrix(np.stack([x, y, z], axis=1))

    q_hip_local = frame_quat(n, -thigh_dir)
    q_hip_world = quat.mul(pelvis_q, q_hip_local)
    knee_pos = hip_pos + quat.rotate(q_hip_world, np.array([0.0, -l1, 0.0]))
    shin = eff_target - knee_pos
    shin_dir_local = quat.rotate(quat.conj(pelvis_q), shin / np.linalg.norm(shin))
    q_knee_world_frame = quat.mul(pelvis_q, frame_quat(n, -shin_dir_local))
    q_knee_local = quat.mul(quat.conj(q_hip_world), q_knee_world_frame)
    return q_hip_local, q_knee_local, eff_target, clamped


def contact_runs(flags: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, end] (inclusive) intervals where flags == 1."""
    runs = []
    start = None
    for i, v in enumerate(flags):
        if v > 0.5 and start is None:
            start = i
        elif v <= 0.5 and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(flags) - 1))
    return runs


def _solve_leg(skel: Skeleton, pose: GlobalPose, chain: dict[str, int],
               toe_target: np.ndarray, foot_world_q: np.ndarray,
               ) -> tuple[dict[int, np.ndarray], bool]:
    """Corrected local rotations pinning the toe, keeping foot attitude."""
    offs = skel.offsets
    l1 = float(np.linalg.norm(offs[chain["knee"]]))
    l2 = float(np.linalg.norm(offs[chain["foot"]]))
    pos, orient = fk(skel, pose)
    pelvis_q = orient[skel.parents[chain["hip"]]]
    hip_pos = pos[chain["hip"]]
    ankle_target = toe_target - quat.rotate(foot_world_q, offs[chain["toe"]])
    q_hip, q_knee, eff, clamped = two_bone_ik(
        hip_pos, ankle_target, pelvis_q, l1, l2)
    q_knee_world = quat.mul(quat.mul(pelvis_q, q_hip), q_knee)
    q_foot_local = quat.mul(quat.conj(q_knee_world), foot_world_q)
    return ({chain["hip"]: q_hip, chain["knee"]: q_knee,
             chain["foot"]: q_foot_local}, clamped)


def ik_foot_cleanup(clip: MotionClip, blend_frames: int = 5,
                    ) -> tuple[MotionClip, np.ndarray]:
    """Pin toes during contact runs; returns (cleaned clip, clamp flags).

    Contact runs come from the clip's own x_f flags. The returned clip
    keeps the input's contact labels and type labels; joint rotations
    and the derived position/velocity channels are rebuilt. A clip with
    no contacts comes back unchanged. flags is (N, 2) bool, true where
    a pin was out of reach and had to be clamped.
    """
    n = len(clip)
    flags = np.zeros((n, 2), dtype=bool)
    contacts = clip.f
    if n == 0 or not np.any(contacts > 0.5):
        return clip.copy(), flags

    skel = clip.skeleton
    poses = from_representation(clip)
    world = [fk(skel, p) for p in poses]
    out = [p.copy() for p in poses]

    for side_idx, side in enumerate(("left", "right")):
        chain = leg_chain(skel, side)
        toe = chain["toe"]
        runs = contact_runs(contacts[:, side_idx])
        in_run = np.zeros(n, dtype=bool)
        for s, e in runs:
            in_run[s:e + 1] = True
        # weight per frame: 1 inside runs, tapered just outside
        plan: dict[int, tuple[float, np.ndarray]] = {}
        for s, e in runs:
            pin = world[s][0][toe].copy()
            for f in range(s, e + 1):
                plan[f] = (1.0, pin)
            for k in range(1, blend_frames + 1):
                w = 1.0 - k / (blend_frames + 1.0)
                for f in (s - k, e + k):
                    if 0 <= f < n and not in_run[f]:
                        if f not in plan or plan[f][0] < w:
                            plan[f] = (w, pin)
        for f, (w, pin) in plan.items():
            foot_q = world[f][1][chain["foot"]]
            corrected, clamped = _solve_leg(skel, poses[f], chain, pin, foot_q)
            if in_run[f]:
                flags[f, side_idx] = clamped
            for jidx, q in corrected.items():
                if w >= 1.0:
                    out[f].rotations[jidx] = q
                else:
                    out[f].rotations[jidx] = quat.slerp(
                        out[f].rotations[jidx], q, w)

    cleaned = to_representation(skel, out, clip.fps, clip.type_labels.copy(),
                                clip.subject)
    # cleanup moves joints; the contact decisions stay the model's own
    cleaned.data[:, cleaned.d_motion:] = contacts
    cleaned.anchor_xz = clip.anchor_xz.copy()
    cleaned.anchor_heading = clip.anchor_heading
    return cleaned, flags
