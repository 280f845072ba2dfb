"""Control signals: direction/velocity, motion type, skeleton configuration.

All controls are expressed in the heading-levelled root frame of the
query frame, so they are invariant under planar rigid motion of the
world — the same property the pose representation has.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .representation import MotionClip, root_track
from .skeleton import Skeleton

N_TYPES = 10
DIRECTION_DIM = 12
SAMPLE_STRIDE = 10   # frames between direction samples
N_SAMPLES = 6
TYPE_BLEND_FRAMES = 20


class ControlError(ValueError):
    pass


def _to_local(points_xz: np.ndarray, root_xz: np.ndarray, heading: float) -> np.ndarray:
    """World XZ points -> root-frame XZ (forward = +z, left = +x)."""
    d = points_xz - root_xz[None, :]
    s, c = np.sin(heading), np.cos(heading)
    fwd = np.array([s, c])
    right = np.array([c, -s])
    return np.stack([d @ right, d @ fwd], axis=1)


def _from_local(points_local: np.ndarray, root_xz: np.ndarray, heading: float) -> np.ndarray:
    s, c = np.sin(heading), np.cos(heading)
    fwd = np.array([s, c])
    right = np.array([c, -s])
    return root_xz[None, :] + points_local[:, :1] * right + points_local[:, 1:] * fwd


def extract_direction(clip: MotionClip, n: int,
                      track=None) -> np.ndarray:
    """12-dim direction control at frame n.

    Root XZ of frames n+10, n+20, ..., n+60 in frame n's heading-levelled
    coordinates. Samples past the clip end repeat the last real position.
    """
    if track is None:
        track = root_track(clip)
    xz, headings = track
    nf = xz.shape[0]
    if not 0 <= n < nf:
        raise ControlError(f"frame {n} outside clip of length {nf}")
    idx = np.minimum(n + SAMPLE_STRIDE * np.arange(1, N_SAMPLES + 1), nf - 1)
    pts = _to_local(xz[idx], xz[n], headings[n])
    return pts.reshape(-1)


def direction_track(clip: MotionClip) -> np.ndarray:
    """(N,12) direction controls for every frame of a clip."""
    track = root_track(clip)
    return np.stack([extract_direction(clip, n, track)
                     for n in range(clip.data.shape[0])])


def control_velocity(direction: np.ndarray) -> float:
    """Scalar velocity: arc length per second of the control polyline.

    The polyline starts at the origin (the current root) and passes
    through the 6 sampled points, which span exactly one second.
    """
    pts = np.concatenate([np.zeros((1, 2)), direction.reshape(N_SAMPLES, 2)])
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def one_hot(type_id: int) -> np.ndarray:
    if not 0 <= type_id < N_TYPES:
        raise ControlError(f"motion type {type_id} outside [0,{N_TYPES})")
    v = np.zeros(N_TYPES)
    v[type_id] = 1.0
    return v


def motion_type_track(type_labels: np.ndarray, contacts: np.ndarray) -> np.ndarray:
    """(N,10) per-frame motion-type vectors with contact-aligned transitions.

    A label change at frame b opens a window from the previous type's
    final right-foot contact to the next type's first left-foot liftoff;
    inside it the two one-hot vectors are interpolated linearly by frame
    index. Degenerate windows fall back to a hard switch at b.
    """
    labels = np.asarray(type_labels, dtype=np.int64)
    n = labels.shape[0]
    if np.any((labels < 0) | (labels >= N_TYPES)):
        raise ControlError("type label outside [0,10)")
    out = np.zeros((n, N_TYPES))
    out[np.arange(n), labels] = 1.0
    if n == 0:
        return out
    f_left = contacts[:, 0]
    f_right = contacts[:, 1]
    boundaries = [b for b in range(1, n) if labels[b] != labels[b - 1]]
    for b in boundaries:
        old, new = labels[b - 1], labels[b]
        # ending state: right foot touching the ground
        s = None
        for i in range(b - 1, -1, -1):
            if f_right[i] == 1.0 and (i == 0 or f_right[i - 1] == 0.0):
                s = i
                break
        if s is None:
            cand = np.nonzero(f_right[:b] == 1.0)[0]
            s = int(cand[-1]) if cand.size else b - 1
        # starting state: left foot lifting off
        e = None
        for i in range(max(b, 1), n):
            if f_left[i] == 0.0 and f_left[i - 1] == 1.0:
                e = i
                break
        if e is None:
            cand = b + np.nonzero(f_left[b:] == 0.0)[0]
            e = int(cand[0]) if cand.size else b
        if e <= s:
            continue  # hard switch already encoded by the one-hot init
        va, vb = one_hot(old), one_hot(new)
        for f in range(s, min(e, n)):
            w = (f - s) / (e - s)
            out[f] = (1.0 - w) * va + w * vb
    return out


def extract_motion_type(type_labels, contacts, n: int) -> np.ndarray:
    return motion_type_track(type_labels, contacts)[n]


def skeleton_config(skel: Skeleton) -> np.ndarray:
    """Skeleton control vector: root height then root-relative T-pose.

    For the standard 28-joint rig this is 1 + 3*27 = 82 reals. Other
    topologies generalize to 1+3m with a warning, since conditioning
    widths must then differ from the stock configuration.
    """
    tp = skel.t_pose()
    m = skel.n_joints - 1
    if m != 27:
        warnings.warn(
            f"skeleton has {m} non-root joints; config length {1 + 3 * m} != 82",
            stacklevel=2)
    rel = tp[1:] - tp[0]
    return np.concatenate([[tp[0, 1]], rel.reshape(-1)])


# ---------------------------------------------------------------------------
# trajectory specs and the follower


@dataclass
class TrajectorySegment:
    points: np.ndarray  # (P,2) planar polyline, mm
    motion_type: int
    velocity: float     # mm/s

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2 \
                or self.points.shape[0] < 2:
            raise ControlError("segment needs at least 2 planar points")
        if not self.velocity > 0:
            raise ControlError("segment velocity must be > 0")
        if not 0 <= self.motion_type < N_TYPES:
            raise ControlError(f"motion type {self.motion_type} outside [0,10)")


@dataclass
class TrajectorySpec:
    segments: list[TrajectorySegment]

    def __post_init__(self):
        if not self.segments:
            raise ControlError("trajectory spec needs at least one segment")

    @classmethod
    def from_json(cls, text: str) -> "TrajectorySpec":
        raw = json.loads(text)
        segs = [TrajectorySegment(np.asarray(s["points"], dtype=np.float64),
                                  int(s["type"]), float(s["velocity_mm_s"]))
                for s in raw["segments"]]
        return cls(segs)

    def to_json(self) -> str:
        return json.dumps({"segments": [
            {"points": s.points.tolist(), "type": s.motion_type,
             "velocity_mm_s": s.velocity} for s in self.segments]})


class _FlatPath:
    """Concatenated polyline with per-vertex arc length, velocity and type."""

    def __init__(self, spec: TrajectorySpec):
        pts, vel, typ = [], [], []
        for seg in spec.segments:
            for p in seg.points:
                pts.append(p)
                vel.append(seg.velocity)
                typ.append(seg.motion_type)
        self.pts = np.asarray(pts)
        self.vel = np.asarray(vel)
        self.typ = np.asarray(typ, dtype=np.int64)
        d = np.linalg.norm(np.diff(self.pts, axis=0), axis=1)
        self.arc = np.concatenate([[0.0], np.cumsum(d)])
        if self.arc[-1] <= 0:
            raise ControlError("trajectory polyline has zero length")

    def closest_arc(self, p: np.ndarray) -> float:
        """Arc length of the exact closest point; ties pick the earlier one."""
        best = (np.inf, 0.0)
        for i in range(len(self.pts) - 1):
            a, b = self.pts[i], self.pts[i + 1]
            ab = b - a
            L2 = float(ab @ ab)
            t = 0.0 if L2 == 0 else float(np.clip((p - a) @ ab / L2, 0.0, 1.0))
            q = a + t * ab
            d = float(np.linalg.norm(p - q))
            if d < best[0] - 1e-12:
                best = (d, self.arc[i] + t * np.sqrt(L2))
        return best[1]

    def point_at(self, s: float) -> np.ndarray:
        s = float(np.clip(s, 0.0, self.arc[-1]))
        i = int(np.searchsorted(self.arc, s, side="right")) - 1
        i = min(max(i, 0), len(self.pts) - 2)
        span = self.arc[i + 1] - self.arc[i]
        t = 0.0 if span == 0 else (s - self.arc[i]) / span
        return self.pts[i] + t * (self.pts[i + 1] - self.pts[i])

    def velocity_at(self, s: float) -> float:
        i = int(np.searchsorted(self.arc, min(s, self.arc[-1]), side="right")) - 1
        return float(self.vel[min(max(i, 0), len(self.vel) - 1)])

    def type_at(self, s: float) -> int:
        i = int(np.searchsorted(self.arc, min(s, self.arc[-1]), side="right")) - 1
        return int(self.typ[min(max(i, 0), len(self.typ) - 1)])

    def advance(self, s: float, seconds: float) -> float:
        """Arc position after travelling for `seconds` at path velocity."""
        remaining = seconds
        while remaining > 1e-12 and s < self.arc[-1] - 1e-9:
            v = self.velocity_at(s)
            i = int(np.searchsorted(self.arc, s, side="right")) - 1
            i = min(max(i, 0), len(self.pts) - 2)
            edge = self.arc[i + 1]
            step = v * remaining
            if s + step <= edge or edge >= self.arc[-1]:
                return min(s + step, self.arc[-1])
            remaining -= (edge - s) / v
            s = edge
        return min(s, self.arc[-1])


class TrajectoryFollower:
    """Stateful trajectory controller.

    Each update finds the closest point on the path, extracts the
    expected one-second arc, blends it with the straight line from the
    current root to the arc endpoint (weight rising linearly along the
    time parameter) and samples 6 causal points in the root frame.
    Motion type follows the path segments with 20-frame interpolation
    windows at type changes.
    """

    def __init__(self, spec: TrajectorySpec):
        self.path = _FlatPath(spec)
        self._type_vec = None
        self._type_from = None
        self._target = None
        self._type_tick = TYPE_BLEND_FRAMES

    def update(self, root_xz: np.ndarray, heading: float):
        root_xz = np.asarray(root_xz, dtype=np.float64)
        s0 = self.path.closest_arc(root_xz)
        taus = np.arange(1, N_SAMPLES + 1) / N_SAMPLES
        arc_pts = np.stack([self.path.point_at(self.path.advance(s0, t))
                            for t in taus])
        endpoint = arc_pts[-1]
        straight = root_xz[None, :] + taus[:, None] * (endpoint - root_xz)[None, :]
        blended = (1.0 - taus)[:, None] * straight + taus[:, None] * arc_pts
        direction = _to_local(blended, root_xz, heading).reshape(-1)

        target = one_hot(self.path.type_at(s0))
        if self._target is None:
            self._target = target
            self._type_vec = target
        elif not np.array_equal(target, self._target):
            self._type_from = self._type_vec.copy()
            self._target = target
            self._type_tick = 0
        if self._type_tick < TYPE_BLEND_FRAMES:
            self._type_tick += 1
            w = self._type_tick / TYPE_BLEND_FRAMES
            self._type_vec = (1.0 - w) * self._type_from + w * self._target
        else:
            self._type_vec = self._target
        return direction, self._type_vec.copy()


# ---------------------------------------------------------------------------
# interactive keyboard control


@dataclass
class InteractiveState:
    """Per-session state for keyboard control ramps."""

    type_vec: np.ndarray = field(default_factory=lambda: one_hot(0))
    type_from: np.ndarray | None = None
    type_target: int = 0
    type_tick: int = TYPE_BLEND_FRAMES
    speed_weight: float = 1.0
    speed_active: bool = False


TURN_GAIN = 0.015


def interactive_update(pred_dir: np.ndarray, events, h: float,
                       v_cur: float, v_u: float,
                       state: InteractiveState):
    """Apply user events to a predicted direction control.

    Turns add a lateral offset o = [1,0]*h*0.015 weighted w_i = i/5 per
    sample. Speed events rescale inter-point distances by v_u/v_cur with
    a 20-frame ramp. Type changes interpolate one-hot vectors over 20
    frames. Returns (direction, type_vector, flags).
    """
    d = np.asarray(pred_dir, dtype=np.float64).reshape(N_SAMPLES, 2).copy()
    flags = {"rescale_skipped": False}
    for ev in events:
        if ev == "turn_left" or ev == "turn_right":
            sign = 1.0 if ev == "turn_left" else -1.0
            off = sign * h * TURN_GAIN
            w = np.arange(N_SAMPLES) / (N_SAMPLES - 1)
            d[:, 0] += w * off
        elif ev == "faster" or ev == "slower":
            state.speed_active = True
            state.speed_weight = 0.0
        elif isinstance(ev, tuple) and ev[0] == "set_type":
            k = int(ev[1])
            one_hot(k)  # validate before touching state
            if k != state.type_target:
                state.type_from = state.type_vec.copy()
                state.type_target = k
                state.type_tick = 0

    if state.speed_active:
        state.speed_weight = min(1.0, state.speed_weight + 1.0 / TYPE_BLEND_FRAMES)
        if v_cur <= 0.0:
            flags["rescale_skipped"] = True
        else:
            ratio = 1.0 + state.speed_weight * (v_u / v_cur - 1.0)
            d *= ratio  # uniform scaling == rescaling every inter-point gap

    if state.type_tick < TYPE_BLEND_FRAMES:
        state.type_tick += 1
        w = state.type_tick / TYPE_BLEND_FRAMES
        state.type_vec = (1.0 - w) * state.type_from + w * one_hot(state.type_target)
        if state.type_tick >= TYPE_BLEND_FRAMES:
            state.type_vec = one_hot(state.type_target)
    return d.reshape(-1), state.type_vec.copy(), flags
