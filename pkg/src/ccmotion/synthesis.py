"""Autoregressive synthesis: sessions, generation, denoising, completion,
trajectory-controlled synthesis, and the evaluation metrics.

A Session owns an incremental stepper plus the world-frame decode state,
so each generated frame costs a handful of matrix-vector products and
the root's world track is always available for trajectory control.
"""

import numpy as np

from . import quat
from .controls import (
    TrajectoryFollower,
    TrajectorySpec,
    _FlatPath,
    control_velocity,
    direction_track,
    one_hot,
    skeleton_config,
)
from .network import CCNetConfig, ControlBundle, IncrementalNet, forward, receptive_field
from .representation import MotionClip, _heading_frame, _nearest_branch_diff
from .skeleton import GlobalPose


class SynthesisError(RuntimeError):
    pass


SIGMA_FLOOR = 1e-4


class Session:
    """Single-owner autoregressive rollout over one immutable params dict.

    seed() replays observed frames through the stepper; step() then
    predicts one frame, optionally sampling the Gaussian head, feeds it
    back, and advances the world-frame decode. The decode mirrors
    from_representation frame by frame, so a clip assembled from the
    emitted vectors (anchored at the seed's end state) reconstructs the
    same world motion.
    """

    def __init__(self, params, config: CCNetConfig, skeleton, *,
                 fps: float = 60.0, rng=None, sample: bool = True):
        J = skeleton.n_joints
        if 12 * J != config.d_motion:
            raise SynthesisError(
                f"skeleton with {J} joints gives d_motion {12 * J}, "
                f"model expects {config.d_motion}")
        skel_vec = skeleton_config(skeleton)
        if len(skel_vec) != config.skeleton_dim:
            raise SynthesisError(
                f"skeleton configuration is {len(skel_vec)}-dim, model "
                f"expects {config.skeleton_dim}")
        self.params = params
        self.config = config
        self.skeleton = skeleton
        self.fps = fps
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.sample = sample
        self.skel_vec = skel_vec
        self.net = IncrementalNet(params, config)
        self._last = None
        self._consumed = 0
        self._origin = np.zeros(2)
        self._theta = 0.0
        self.world_pose = None
        self.pred_direction = None
        self.pred_velocity = None

    @property
    def history(self) -> int:
        """Frames the next prediction can see (consumed + pending)."""
        return self._consumed + (1 if self._last is not None else 0)

    def seed(self, clip: MotionClip, *, use_controls: bool = False):
        """Load observed frames; the clip's last frame becomes the input
        of the first generated step."""
        if clip.skeleton.n_joints != self.skeleton.n_joints:
            raise SynthesisError("seed clip skeleton does not match session")
        n = len(clip)
        if n < 1:
            raise SynthesisError("seed clip needs at least one frame")
        dirs = types = None
        if use_controls:
            dirs = direction_track(clip)
            types = np.stack([one_hot(int(t)) for t in clip.type_labels])
        for i in range(n - 1):
            d13 = None
            if dirs is not None:
                d13 = np.concatenate([dirs[i], [control_velocity(dirs[i])]])
            self.net.step(clip.data[i], self.skel_vec, d13,
                          None if types is None else types[i])
            self._consumed += 1
        self._last = clip.data[n - 1].copy()
        # replay the decode so world state sits after the final seed frame
        self._origin = clip.anchor_xz.copy()
        self._theta = clip.anchor_heading
        for i in range(n):
            self._advance_world(clip.data[i])

    def step(self, direction13=None, mtype10=None) -> np.ndarray:
        """Predict, sample, feed back and decode one frame."""
        rf = receptive_field(self.config)
        if self._last is None or self.history < rf:
            raise SynthesisError(
                f"history underflow: {self.history} frames held, the "
                f"receptive field needs {rf} before free-running")
        out = self.net.step(self._last, self.skel_vec, direction13, mtype10)
        dm = self.config.d_motion
        mean = out[:dm]
        log_std = out[dm:2 * dm]
        foot = out[2 * dm:2 * dm + 2]
        self.pred_direction = out[2 * dm + 2:2 * dm + 14].copy()
        self.pred_velocity = float(out[2 * dm + 14])
        if self.sample:
            sigma = np.maximum(np.exp(log_std), SIGMA_FLOOR)
            cont = self.rng.normal(mean, sigma)
        else:
            cont = mean.copy()
        # sigmoid(logit) > 0.5 is exactly logit > 0
        contacts = (foot > 0.0).astype(np.float64)
        vec = np.concatenate([cont, contacts])
        self._advance_world(vec)
        self._last = vec
        self._consumed += 1
        return vec

    def world_state(self):
        """(root planar position (2,), heading) after the latest frame."""
        return self._origin.copy(), self._theta

    def anchor(self):
        return self._origin.copy(), self._theta

    def _advance_world(self, vec):
        J = self.skeleton.n_joints
        e = vec[:3 * J].reshape(J, 3)
        p_root = vec[6 * J:6 * J + 3]
        yaw = quat.from_y(self._theta)
        rot = np.zeros((J, 4))
        rot[0] = quat.mul(yaw, quat.from_expmap(e[0]))
        rot[1:] = quat.from_expmap(e[1:])
        local = quat.rotate(yaw, p_root)
        root = np.array([self._origin[0] + local[0], p_root[1],
                         self._origin[1] + local[2]])
        self.world_pose = GlobalPose(root, rot)
        self._origin, self._theta = _heading_frame(root, rot[0])


def generate_random(session: Session, n_frames: int) -> MotionClip:
    """Free-run the session; returns the generated frames as a clip
    anchored at the session's pre-roll world state."""
    if n_frames < 0:
        raise SynthesisError("n_frames must be non-negative")
    anchor_xz, anchor_heading = session.anchor()
    rows = [session.step() for _ in range(n_frames)]
    D = session.config.input_width
    data = np.stack(rows) if rows else np.zeros((0, D))
    return MotionClip(session.skeleton, session.fps, data,
                      subject="generated",
                      anchor_xz=anchor_xz, anchor_heading=anchor_heading)


def synthesize_controlled(session: Session, spec, n_frames: int):
    """Roll out while steering along a trajectory spec.

    Returns (clip, applied) where applied lists the per-frame control
    values actually fed to the network. A ``None`` spec degenerates to
    generate_random on the same rng stream.
    """
    if spec is None:
        return generate_random(session, n_frames), []
    if not isinstance(spec, TrajectorySpec):
        raise SynthesisError("spec must be a TrajectorySpec or None")
    if n_frames < 0:
        raise SynthesisError("n_frames must be non-negative")
    follower = TrajectoryFollower(spec)
    anchor_xz, anchor_heading = session.anchor()
    rows = []
    applied = []
    labels = np.zeros(n_frames, dtype=np.int64)
    for i in range(n_frames):
        root_xz, heading = session.world_state()
        dir12, type10 = follower.update(root_xz, heading)
        vel = control_velocity(dir12)
        rows.append(session.step(np.concatenate([dir12, [vel]]), type10))
        applied.append({"direction": dir12, "velocity": vel,
                        "type": type10})
        labels[i] = int(np.argmax(type10))
    D = session.config.input_width
    data = np.stack(rows) if rows else np.zeros((0, D))
    clip = MotionClip(session.skeleton, session.fps, data, labels,
                      subject="controlled",
                      anchor_xz=anchor_xz, anchor_heading=anchor_heading)
    return clip, applied


def _teacher_forced_means(params, config: CCNetConfig, clip: MotionClip):
    """(means (T, d_motion), foot logits (T, 2)) for frames 1..N-1."""
    inputs = clip.data[:-1].T[None]
    bundle = ControlBundle(skeleton=skeleton_config(clip.skeleton)[None])
    out = forward(params, inputs, bundle, config).out.data[0]
    dm = config.d_motion
    return out[:dm].T, out[2 * dm:2 * dm + 2].T


def denoise(params, config: CCNetConfig, clip: MotionClip) -> MotionClip:
    """Teacher-forced cleanup: every output frame is the predicted mean
    given all (noisy) frames before it; frame 0 passes through."""
    if len(clip) < 2:
        raise SynthesisError("denoising needs at least 2 frames")
    if clip.d_motion != config.d_motion:
        raise SynthesisError(
            f"clip d_motion {clip.d_motion} != model {config.d_motion}")
    means, foot = _teacher_forced_means(params, config, clip)
    dm = config.d_motion
    data = np.empty_like(clip.data)
    data[0] = clip.data[0]
    data[1:, :dm] = means
    data[1:, dm:] = (foot > 0.0).astype(np.float64)
    return MotionClip(clip.skeleton, clip.fps, data, clip.type_labels,
                      clip.subject, clip.anchor_xz, clip.anchor_heading)


def complete(params, config: CCNetConfig, clip: MotionClip,
             mask: np.ndarray) -> MotionClip:
    """Fill in missing joint rotations.

    ``mask`` is (N, J) boolean, True where a joint's rotation was zeroed
    out. Masked entries (frames >= 1) take the predicted mean; every
    other entry is preserved exactly. Angular velocities are recomputed
    only where an edit could change them.
    """
    N = len(clip)
    J = clip.skeleton.n_joints
    mask = np.asarray(mask)
    if mask.shape != (N, J) or mask.dtype != np.bool_:
        raise SynthesisError(f"mask must be boolean with shape ({N}, {J})")
    if not mask.any():
        return clip.copy()
    if N < 2:
        raise SynthesisError("completion needs at least 2 frames")
    means, _ = _teacher_forced_means(params, config, clip)
    pred_e = means[:, :3 * J].reshape(N - 1, J, 3)

    data = clip.data.copy()
    e = data[:, :3 * J].reshape(N, J, 3).copy()
    e[1:][mask[1:]] = pred_e[mask[1:]]

    # an angular-velocity row (n, j) depends on e[n, j] and e[n-1, j];
    # the root row also rides the previous root orientation, so treat a
    # root edit as touching the following frame too
    touched = mask.copy()
    touched[1:] |= mask[:-1]
    w = data[:, 3 * J:6 * J].reshape(N, J, 3).copy()
    for n in range(1, N):
        if not touched[n].any():
            continue
        prev = e[n - 1].copy()
        if touched[n, 0]:
            # previous root re-expressed in its own heading frame
            root_prev = quat.from_expmap(e[n - 1, 0])
            theta = quat.heading_of(root_prev)
            prev[0] = quat.to_expmap(
                quat.mul(quat.from_y(-theta), root_prev))
        fresh = _nearest_branch_diff(e[n], prev)
        w[n][touched[n]] = fresh[touched[n]]
    data[:, :3 * J] = e.reshape(N, 3 * J)
    data[:, 3 * J:6 * J] = w.reshape(N, 3 * J)
    return MotionClip(clip.skeleton, clip.fps, data, clip.type_labels,
                      clip.subject, clip.anchor_xz, clip.anchor_heading)


def rel_pose_diff(generated: MotionClip, reference: MotionClip):
    """Mean and std over frames of ||x_hat - x|| / ||x|| on the
    continuous dims."""
    if len(generated) != len(reference):
        raise SynthesisError(
            f"length mismatch: {len(generated)} vs {len(reference)}")
    if len(generated) == 0:
        raise SynthesisError("empty clips have no pose difference")
    dm = reference.d_motion
    a = generated.data[:, :dm]
    b = reference.data[:, :dm]
    num = np.linalg.norm(a - b, axis=1)
    den = np.maximum(np.linalg.norm(b, axis=1), 1e-12)
    r = num / den
    return float(np.mean(r)), float(np.std(r))


def trajectory_distance(path_xz: np.ndarray, spec: TrajectorySpec) -> float:
    """Mean exact closest distance (mm) from each path point to the
    spec's polyline."""
    path_xz = np.asarray(path_xz, dtype=np.float64)
    if path_xz.ndim != 2 or path_xz.shape[1] != 2 or len(path_xz) == 0:
        raise SynthesisError("path must be a non-empty (N, 2) array")
    flat = _FlatPath(spec)
    total = 0.0
    for p in path_xz:
        q = flat.point_at(flat.closest_arc(p))
        total += float(np.linalg.norm(p - q))
    return total / len(path_xz)
