"""Procedural motion corpus: a plant-based gait synthesizer.

Generates deterministic, kinematically consistent training clips for
ten motion types (walk, run, three jump styles, backward walk, zombie
shuffle, kick, punch, kick+punch). The core model is a support
schedule: each leg alternates stance intervals, where the toe is
pinned to a world-space plant point, and swing intervals, where the
toe travels to the next plant on a smooth arc. Legs then follow by
two-bone IK, so stance feet have exactly zero displacement and the
standard contact labeller reproduces the intended contacts.

The root advances along a steerable path at the requested speed, which
makes simple identities hold by construction (root advance per gait
cycle equals speed/cadence on a straight path). All amplitudes that
only make sense while moving are gated by speed, so a zero-speed walk
segment degenerates to a perfectly still standing pose.

Clips can chain segments of different types; numeric gait parameters
blend linearly over a half-second window at each boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .ik import two_bone_ik
from .representation import MotionClip, align_poses, to_representation
from .skeleton import GlobalPose, Skeleton, canonical_skeleton, leg_chain

TYPE_NAMES = [
    "walk", "run", "jump-left", "jump-right", "jump-both",
    "walk-back", "zombie", "kick", "punch", "kick-punch",
]
N_TYPES = len(TYPE_NAMES)

_BLEND_FRAMES = 30  # half a second at 60 fps


class SynthError(ValueError):
    pass


@dataclass
class Segment:
    """One stretch of a single motion type."""

    motion_type: int
    frames: int
    speed: float = 0.0      # forward speed, mm/s
    turn_rate: float = 0.0  # rad/s, positive turns left


@dataclass
class SynthItem:
    """Recipe for one clip: skeleton, segments, steering and style."""

    segments: list[Segment]
    skeleton: Skeleton | None = None
    subject: str = "synthetic"
    meander: float = 0.0  # rad/s scale of slow random steering
    style: dict = field(default_factory=dict)  # e.g. cadence_scale, arm_swing_scale


def _gait_numbers(mtype: int, speed: float, style: dict) -> dict[str, float]:
    """Numeric gait parameters for one type at one speed."""
    g = min(1.0, abs(speed) / 300.0)  # locomotion gate
    p = {
        "cadence": 0.9, "duty": 0.6, "lift": 0.0, "bounce": 0.0,
        "crouch": 30.0 + 0.04 * abs(speed), "sway": 8.0 * g,
        "yaw_sway": 0.03 * g, "arm_swing": 0.0, "arm_down": 1.31,
        "arm_forward": 0.0, "punch": 0.0, "lean": 0.0, "head_tilt": 0.0,
        "elbow": 0.25, "jump_h": 0.0, "ground_frac": 0.6,
        "arc_fwd": 0.0, "kick": 0.0, "direction": 1.0, "heel": 0.0,
    }
    if mtype == 0:  # walk
        p.update(cadence=0.55 + abs(speed) / 3000.0, duty=0.62,
                 lift=60.0 * g, bounce=16.0 * g, arm_swing=0.35 * g,
                 lean=0.04 * g, heel=0.95 * g)
    elif mtype == 1:  # run
        p.update(cadence=0.8 + abs(speed) / 3500.0, duty=0.38,
                 lift=90.0 * g, bounce=26.0 * g, arm_swing=0.55 * g,
                 lean=0.16 * g, elbow=1.1, heel=1.05 * g)
    elif mtype in (2, 3, 4):  # jumps
        p.update(cadence=0.55 + abs(speed) / 4000.0, ground_frac=0.6,
                 lift=140.0, jump_h=110.0 if mtype == 4 else 90.0,
                 crouch=55.0 + 0.04 * abs(speed), bounce=0.0,
                 arm_swing=0.45, duty=0.6, heel=0.7)
    elif mtype == 5:  # backward walk
        p.update(cadence=0.5 + abs(speed) / 3000.0, duty=0.64,
                 lift=50.0 * g, bounce=12.0 * g, arm_swing=0.25 * g,
                 lean=-0.03 * g, direction=-1.0, heel=0.9 * g)
    elif mtype == 6:  # zombie shuffle
        p.update(cadence=0.45 + abs(speed) / 3200.0, duty=0.7,
                 lift=25.0 * g, bounce=8.0 * g, arm_swing=0.08 * g,
                 lean=0.12, head_tilt=0.22, arm_forward=1.0,
                 crouch=55.0 + 0.04 * abs(speed), elbow=0.35,
                 heel=0.35 * g)
    elif mtype == 7:  # kick
        p.update(cadence=0.8, crouch=45.0, kick=1.0, arc_fwd=430.0,
                 lift=260.0, arm_swing=0.2, elbow=0.9)
    elif mtype == 8:  # punch
        p.update(cadence=1.3, crouch=50.0, punch=1.0, elbow=1.4,
                 arm_forward=0.55)
    elif mtype == 9:  # kick + punch
        p.update(cadence=1.0, crouch=48.0, kick=1.0, arc_fwd=380.0,
                 lift=240.0, punch=1.0, elbow=1.2, arm_forward=0.5)
    elif mtype not in range(N_TYPES):
        raise SynthError(f"motion type {mtype} outside 0..{N_TYPES - 1}")
    p["cadence"] *= style.get("cadence_scale", 1.0)
    p["arm_swing"] *= style.get("arm_swing_scale", 1.0)
    p["lift"] *= style.get("lift_scale", 1.0)
    p["crouch"] += style.get("crouch_extra", 0.0)
    p["lean"] += style.get("lean_extra", 0.0)
    return p


_PARAM_KEYS = sorted(_gait_numbers(0, 0.0, {}).keys())


def _timeline(item: SynthItem, fps: float):
    """Per-frame blended parameter arrays plus type/speed/phase tracks."""
    if not item.segments:
        raise SynthError("need at least one segment")
    for s in item.segments:
        if s.frames < 1:
            raise SynthError("segment frames must be >= 1")
        if not 0 <= s.motion_type < N_TYPES:
            raise SynthError(f"motion type {s.motion_type} outside 0..{N_TYPES - 1}")
    n = sum(s.frames for s in item.segments)
    types = np.zeros(n, dtype=np.int64)
    params = {k: np.zeros(n) for k in _PARAM_KEYS}
    speed = np.zeros(n)
    turn = np.zeros(n)

    at = 0
    prev_vals = None
    prev_speed = prev_turn = 0.0
    for seg in item.segments:
        vals = _gait_numbers(seg.motion_type, seg.speed, item.style)
        for f in range(seg.frames):
            i = at + f
            types[i] = seg.motion_type
            if prev_vals is not None and f < _BLEND_FRAMES:
                w = (f + 1) / float(_BLEND_FRAMES)
            else:
                w = 1.0
            for k in _PARAM_KEYS:
                a = prev_vals[k] if prev_vals is not None else vals[k]
                params[k][i] = (1 - w) * a + w * vals[k]
            speed[i] = (1 - w) * (prev_speed if prev_vals is not None else seg.speed) \
                + w * seg.speed
            turn[i] = (1 - w) * (prev_turn if prev_vals is not None else seg.turn_rate) \
                + w * seg.turn_rate
        prev_vals, prev_speed, prev_turn = vals, seg.speed, seg.turn_rate
        at += seg.frames

    phase = np.zeros(n)
    for i in range(1, n):
        phase[i] = phase[i - 1] + params["cadence"][i - 1] / fps
    return n, types, params, speed, turn, phase


def _support_wanted(types, params, phase):
    """Boolean stance wishes per frame for (left, right)."""
    n = len(types)
    left = np.zeros(n, dtype=bool)
    right = np.zeros(n, dtype=bool)
    fl = phase % 1.0
    fr = (phase + 0.5) % 1.0
    for i in range(n):
        t = types[i]
        if t in (0, 1, 5, 6):
            left[i] = fl[i] < params["duty"][i]
            right[i] = fr[i] < params["duty"][i]
        elif t == 4:
            left[i] = right[i] = fl[i] < params["ground_frac"][i]
        elif t == 2:
            left[i] = fl[i] < params["ground_frac"][i]
        elif t == 3:
            right[i] = fl[i] < params["ground_frac"][i]
        elif t in (7, 9):
            left[i] = True
            right[i] = not (0.35 <= fl[i] < 0.75)
        elif t == 8:
            left[i] = right[i] = True
    return left, right


def _intervals(wanted: np.ndarray, min_len: int = 3) -> list[tuple[int, int]]:
    """Stance runs [s,e] inclusive, dropping blips shorter than min_len."""
    runs = []
    s = None
    for i, v in enumerate(wanted):
        if v and s is None:
            s = i
        elif not v and s is not None:
            runs.append((s, i - 1))
            s = None
    if s is not None:
        runs.append((s, len(wanted) - 1))
    return [(a, b) for a, b in runs if b - a + 1 >= min_len
            or a == 0 or b == len(wanted) - 1]


def _smoothstep(s: float) -> float:
    return s * s * (3.0 - 2.0 * s)


def _stance_pitch(u: float, heel: float, direction: float) -> float:
    """Heel lift during stance: pivot on the toe near push-off.

    Late stance going forward (early stance going backward) puts the hip
    well past the planted toe; pitching the foot about the toe raises the
    ankle toward the hip and keeps the leg chain reachable without an
    exaggerated crouch.
    """
    ue = u if direction >= 0 else 1.0 - u
    ramp = min(1.0, max(0.0, (ue - 0.55) / 0.45))
    return heel * _smoothstep(ramp)


def _toe_track(n, intervals, path, heading, params, side_sign, half_width,
               toe_rest_y):
    """World toe targets and foot pitch for one leg."""
    lateral = side_sign * half_width
    pitch = np.zeros(n)
    if not intervals:
        # airborne leg (single-leg jump types): ride along with the root
        track = np.zeros((n, 3))
        for i in range(n):
            off = quat.rotate(quat.from_y(heading[i]),
                              np.array([lateral - side_sign * 30.0, 0.0, -60.0]))
            track[i] = [path[i, 0] + off[0], toe_rest_y + 150.0, path[i, 1] + off[2]]
        return track, pitch

    plants = []
    for (a, b) in intervals:
        m = (a + b) // 2
        off = quat.rotate(quat.from_y(heading[m]), np.array([lateral, 0.0, 0.0]))
        plants.append(np.array([path[m, 0] + off[0], toe_rest_y, path[m, 1] + off[2]]))

    track = np.zeros((n, 3))
    for k, (a, b) in enumerate(intervals):
        track[a:b + 1] = plants[k]
        for i in range(a, b + 1):
            u = (i - a) / max(1, b - a)
            pitch[i] = _stance_pitch(u, params["heel"][i], params["direction"][i])
    # swing arcs between consecutive stances
    for k in range(len(intervals) - 1):
        e0 = intervals[k][1]
        s1 = intervals[k + 1][0]
        span = s1 - e0
        p_lift = pitch[e0]
        p_land = _stance_pitch(0.0, params["heel"][s1], params["direction"][s1])
        for i in range(e0 + 1, s1):
            s = (i - e0) / span
            xz = plants[k] + _smoothstep(s) * (plants[k + 1] - plants[k])
            lift = params["lift"][i] + params["jump_h"][i]
            arc = params["arc_fwd"][i] * params["kick"][i]
            fwd = quat.rotate(quat.from_y(heading[i]),
                              np.array([0.0, 0.0, arc * np.sin(np.pi * s)]))
            track[i] = [xz[0] + fwd[0],
                        toe_rest_y + lift * np.sin(np.pi * s),
                        xz[2] + fwd[2]]
            blend = _smoothstep(s)
            pitch[i] = (1 - blend) * p_lift + blend * p_land \
                + 0.15 * params["heel"][i] * np.sin(np.pi * s)
    # clamp before the first and after the last stance
    track[: intervals[0][0]] = plants[0]
    pitch[: intervals[0][0]] = pitch[intervals[0][0]]
    track[intervals[-1][1] + 1:] = plants[-1]
    pitch[intervals[-1][1] + 1:] = pitch[intervals[-1][1]]
    return track, pitch


def synth_clip(item: SynthItem, rng: np.random.Generator,
               fps: float = 60.0) -> MotionClip:
    """Generate one clip from a SynthItem (deterministic given rng state)."""
    skel = item.skeleton if item.skeleton is not None else canonical_skeleton()
    n, types, params, speed, turn, phase = _timeline(item, fps)

    # steering: commanded turn plus slow random meander
    meander = np.zeros(n)
    if item.meander > 0:
        t_ax = np.arange(n) / fps
        for _ in range(3):
            f = rng.uniform(0.05, 0.25)
            ph = rng.uniform(0, 2 * np.pi)
            meander += np.sin(2 * np.pi * f * t_ax + ph)
        meander *= item.meander / 3.0
    heading = np.zeros(n)
    for i in range(1, n):
        heading[i] = heading[i - 1] + (turn[i - 1] + meander[i - 1]) / fps

    path = np.zeros((n, 2))
    for i in range(1, n):
        step = params["direction"][i - 1] * speed[i - 1] / fps
        path[i] = path[i - 1] + step * np.array(
            [np.sin(heading[i - 1]), np.cos(heading[i - 1])])

    left_w, right_w = _support_wanted(types, params, phase)
    iv_left = _intervals(left_w)
    iv_right = _intervals(right_w)

    tp = skel.t_pose()
    chains = {s: leg_chain(skel, s) for s in ("left", "right")}
    toe_rest_y = float(tp[chains["left"]["toe"], 1])
    half_width = abs(float(tp[chains["left"]["hip"], 0])) + 10.0
    root_rest_y = float(tp[0, 1])
    l1 = float(np.linalg.norm(skel.offsets[chains["left"]["knee"]]))
    l2 = float(np.linalg.norm(skel.offsets[chains["left"]["foot"]]))

    toe_l, pitch_l = _toe_track(n, iv_left, path, heading, params, +1.0,
                                half_width, toe_rest_y)
    toe_r, pitch_r = _toe_track(n, iv_right, path, heading, params, -1.0,
                                half_width, toe_rest_y)

    # root height: crouch + gait bounce + jump flight
    fl = phase % 1.0
    root_y = np.zeros(n)
    for i in range(n):
        y = root_rest_y - params["crouch"][i]
        y -= params["bounce"][i] * 0.5 * (1.0 - np.cos(4 * np.pi * phase[i]))
        if params["jump_h"][i] > 0 and types[i] in (2, 3, 4):
            gf = params["ground_frac"][i]
            if fl[i] >= gf:  # flight
                s = (fl[i] - gf) / max(1e-6, 1.0 - gf)
                y += params["jump_h"][i] * np.sin(np.pi * s)
            else:  # crouch into the jump
                y -= 25.0 * np.sin(np.pi * fl[i] / gf)
        root_y[i] = y

    x_axis = np.array([1.0, 0.0, 0.0])
    y_axis = np.array([0.0, 1.0, 0.0])
    z_axis = np.array([0.0, 0.0, 1.0])
    names = {nm: skel.find(nm) for nm in
             ["Spine", "Spine1", "Spine2", "Neck", "Head",
              "LeftArm", "LeftForeArm", "RightArm", "RightForeArm"]}

    poses: list[GlobalPose] = []
    for i in range(n):
        rot = np.zeros((skel.n_joints, 4))
        rot[:, 0] = 1.0
        yaw = heading[i] + params["yaw_sway"][i] * np.sin(2 * np.pi * phase[i])
        q_root = quat.from_y(yaw)
        rot[0] = q_root
        sway = quat.rotate(quat.from_y(heading[i]),
                           np.array([params["sway"][i] * np.sin(2 * np.pi * phase[i]),
                                     0.0, 0.0]))
        root_pos = np.array([path[i, 0] + sway[0], root_y[i], path[i, 1] + sway[2]])

        # spine lean and counter-sway, head stabilization
        lean = params["lean"][i]
        counter = -params["yaw_sway"][i] * np.sin(2 * np.pi * phase[i])
        for nm in ("Spine", "Spine1", "Spine2"):
            rot[names[nm]] = quat.mul(quat.from_axis_angle(x_axis, lean / 3.0),
                                      quat.from_y(counter / 3.0))
        rot[names["Neck"]] = quat.from_axis_angle(x_axis, -lean / 4.0)
        rot[names["Head"]] = quat.from_axis_angle(
            x_axis, params["head_tilt"][i] - lean / 4.0)

        # arms
        swing = params["arm_swing"][i]
        punch_amt = params["punch"][i]
        fwd_amt = params["arm_forward"][i]
        for sign, arm_nm, fore_nm, leg_phase in (
                (+1.0, "LeftArm", "LeftForeArm", 0.5),
                (-1.0, "RightArm", "RightForeArm", 0.0)):
            sw = swing * np.sin(2 * np.pi * (phase[i] + leg_phase))
            down = quat.from_axis_angle(z_axis, -sign * params["arm_down"][i])
            q_arm = quat.mul(quat.from_axis_angle(x_axis, sw), down)
            elbow = params["elbow"][i]
            if fwd_amt > 0 or punch_amt > 0:
                reach = 1.35 * fwd_amt
                ext = 0.0
                if punch_amt > 0:
                    s_p = np.sin(2 * np.pi * phase[i])
                    ext = punch_amt * max(0.0, sign * s_p) ** 2
                    reach = 0.6 + 0.8 * ext
                q_fwd = quat.from_axis_angle(y_axis, -sign * reach)
                q_arm = quat.slerp(q_arm, q_fwd, max(fwd_amt, punch_amt))
                elbow = elbow * (1.0 - ext) + 0.15 * ext
            rot[names[arm_nm]] = q_arm
            rot[names[fore_nm]] = quat.from_axis_angle(y_axis, -sign * elbow)

        # legs by IK: the ankle target comes from the pinned toe and the
        # desired foot orientation (heading yaw plus heel pitch)
        for side, toe_track_, pitch_ in (("left", toe_l, pitch_l),
                                         ("right", toe_r, pitch_r)):
            ch = chains[side]
            foot_q = quat.mul(quat.from_y(heading[i]),
                              quat.from_axis_angle(x_axis, pitch_[i]))
            offs = skel.offsets
            hip_world = root_pos + quat.rotate(q_root, offs[ch["hip"]])
            ankle_target = toe_track_[i] - quat.rotate(foot_q, offs[ch["toe"]])
            q_hip, q_knee, _, _ = two_bone_ik(
                hip_world, ankle_target, q_root, l1, l2)
            q_knee_world = quat.mul(quat.mul(q_root, q_hip), q_knee)
            rot[ch["hip"]] = q_hip
            rot[ch["knee"]] = q_knee
            rot[ch["foot"]] = quat.mul(quat.conj(q_knee_world), foot_q)
        poses.append(GlobalPose(root_pos, rot))

    poses = align_poses(poses)
    return to_representation(skel, poses, fps, types, item.subject)


def synth_dataset(items: list[SynthItem], seed: int,
                  fps: float = 60.0) -> list[MotionClip]:
    """Generate a clip per item; fully reproducible for a given seed."""
    rng = np.random.default_rng(seed)
    return [synth_clip(item, rng, fps) for item in items]
