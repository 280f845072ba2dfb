import numpy as np
import pytest

from ccmotion import quat
from ccmotion.representation import (
    MotionClip,
    RepresentationError,
    align_clip,
    align_poses,
    augment_noise,
    downsample,
    from_representation,
    label_foot_contact,
    root_track,
    to_representation,
    world_positions,
)
from ccmotion.skeleton import GlobalPose, canonical_skeleton, fk, identity_pose


def smooth_random_poses(skel, n, rng, step_angle=0.08, root_step=12.0):
    """Random-walk pose sequence: smooth rotations, wandering root."""
    poses = [identity_pose(skel)]
    poses[0].root_position = np.array([0.0, 960.0, 0.0])
    for _ in range(n - 1):
        prev = poses[-1]
        rot = prev.rotations.copy()
        for j in range(skel.n_joints):
            ax = rng.standard_normal(3)
            d = quat.from_axis_angle(ax, rng.normal(0, step_angle))
            rot[j] = quat.normalize(quat.mul(rot[j], d))
        root = prev.root_position + rng.normal(0, root_step, 3)
        poses.append(GlobalPose(root, rot))
    return poses


def planar_transform(poses, phi, tx, tz):
    """Rigid transform in the ground plane applied to world poses."""
    r = quat.from_y(phi)
    t = np.array([tx, 0.0, tz])
    out = []
    for p in poses:
        rot = p.rotations.copy()
        rot[0] = quat.mul(r, rot[0])
        out.append(GlobalPose(quat.rotate(r, p.root_position) + t, rot))
    return out


@pytest.fixture(scope="module")
def skel():
    return canonical_skeleton()


def test_round_trip_exact(skel):
    rng = np.random.default_rng(0)
    poses = smooth_random_poses(skel, 30, rng)
    clip = to_representation(skel, poses, 60.0)
    back = from_representation(clip)
    for a, b in zip(poses, back):
        pa, _ = fk(skel, a)
        pb, _ = fk(skel, b)
        np.testing.assert_allclose(pa, pb, atol=1e-6)
    clip2 = to_representation(skel, back, 60.0)
    np.testing.assert_allclose(clip.data, clip2.data, atol=1e-6)


def test_planar_invariance(skel):
    rng = np.random.default_rng(1)
    poses = smooth_random_poses(skel, 12, rng)
    base = to_representation(skel, poses, 60.0)
    for _ in range(10):
        phi = rng.uniform(-np.pi, np.pi)
        tx, tz = rng.uniform(-5000, 5000, 2)
        moved = to_representation(skel, planar_transform(poses, phi, tx, tz), 60.0)
        np.testing.assert_allclose(moved.data, base.data, atol=1e-9)


def test_vertical_shift_not_invariant(skel):
    # sanity: the representation keeps absolute height
    poses = smooth_random_poses(skel, 5, np.random.default_rng(2))
    lifted = [GlobalPose(p.root_position + [0, 100, 0], p.rotations.copy())
              for p in poses]
    a = to_representation(skel, poses, 60.0)
    b = to_representation(skel, lifted, 60.0)
    assert np.max(np.abs(a.data - b.data)) > 50


def test_stationary_clip_zero_velocities(skel):
    pose = identity_pose(skel)
    clip = to_representation(skel, [pose.copy() for _ in range(6)], 60.0)
    np.testing.assert_allclose(clip.v, 0.0, atol=1e-12)
    np.testing.assert_allclose(clip.w, 0.0, atol=1e-12)
    # toes are on the ground and still: both feet in contact
    np.testing.assert_array_equal(clip.f, np.ones((6, 2)))


def test_frame0_velocities_zero(skel):
    poses = smooth_random_poses(skel, 8, np.random.default_rng(3))
    clip = to_representation(skel, poses, 60.0)
    np.testing.assert_array_equal(clip.v[0], np.zeros((skel.n_joints, 3)))
    np.testing.assert_array_equal(clip.w[0], np.zeros((skel.n_joints, 3)))


def test_root_height_is_world_height(skel):
    poses = smooth_random_poses(skel, 6, np.random.default_rng(4))
    clip = to_representation(skel, poses, 60.0)
    for n, p in enumerate(poses):
        assert clip.p[n, 0, 1] == pytest.approx(p.root_position[1], abs=1e-9)


def test_straight_walk_velocity_channel(skel):
    # facing +Z, moving +Z at 600 mm/s, 60 fps -> x_v root = (0,0,10)
    poses = []
    for n in range(10):
        pose = identity_pose(skel)
        pose.root_position = np.array([0.0, 960.0, 10.0 * n])
        poses.append(pose)
    clip = to_representation(skel, poses, 60.0)
    np.testing.assert_allclose(clip.v[1:, 0], [[0, 0, 10.0]] * 9, atol=1e-9)
    # and the root position channel shows the per-frame advance
    np.testing.assert_allclose(clip.p[1:, 0, 2], 10.0, atol=1e-9)


def test_exp_coords_canonical(skel):
    poses = smooth_random_poses(skel, 40, np.random.default_rng(5), step_angle=0.4)
    clip = to_representation(skel, poses, 60.0)
    angles = np.linalg.norm(clip.e[:, 1:], axis=-1)
    assert np.all(angles <= np.pi + 1e-9)


def test_angular_velocity_continuous_across_pi(skel):
    # elbow swinging through 180 degrees: x_e flips branch, x_w must not
    axis = np.array([0.0, 1.0, 0.0])
    step = 0.05
    poses = []
    for k in range(12):
        pose = identity_pose(skel)
        ang = np.pi - 0.15 + step * k  # crosses pi at k=3
        pose.rotations[10] = quat.from_axis_angle(axis, ang)
        poses.append(pose)
    clip = to_representation(skel, poses, 60.0)
    w = clip.w[1:, 10]
    np.testing.assert_allclose(w, [[0, step, 0]] * 11, atol=1e-9)
    # while x_e itself stays canonical (flips sign at the boundary)
    assert np.linalg.norm(clip.e[:, 10], axis=-1).max() <= np.pi + 1e-9


def test_turning_root_yaw_rate(skel):
    rate = 0.03
    poses = []
    for n in range(10):
        pose = identity_pose(skel)
        pose.rotations[0] = quat.from_y(rate * n)
        poses.append(pose)
    clip = to_representation(skel, poses, 60.0)
    np.testing.assert_allclose(clip.e[1:, 0], [[0, rate, 0]] * 9, atol=1e-9)
    np.testing.assert_allclose(clip.w[1:, 0], [[0, rate, 0]] * 9, atol=1e-9)


# ------------------------------------------------------------- contacts


def test_label_foot_contact_thresholds():
    still_low = np.tile([0.0, 10.0, 0.0], (5, 1))
    np.testing.assert_array_equal(label_foot_contact(still_low), np.ones(5))
    still_high = np.tile([0.0, 90.0, 0.0], (5, 1))
    np.testing.assert_array_equal(label_foot_contact(still_high), np.zeros(5))
    moving = np.stack([np.zeros(5), np.full(5, 10.0), np.arange(5) * 6.0], axis=1)
    np.testing.assert_array_equal(label_foot_contact(moving), np.zeros(5))
    # just under both thresholds counts as contact
    slow = np.stack([np.zeros(5), np.full(5, 79.9), np.arange(5) * 4.9], axis=1)
    np.testing.assert_array_equal(label_foot_contact(slow), np.ones(5))


def test_label_frame0_forward_difference():
    # big jump between frames 0 and 1: frame 0 inherits that displacement
    pos = np.array([[0, 10, 0], [100, 10, 0], [100, 10, 0]], dtype=float)
    np.testing.assert_array_equal(label_foot_contact(pos), [0, 0, 1])


# ------------------------------------------------------- noise/resample


def test_augment_noise_contacts_untouched(skel):
    rng = np.random.default_rng(6)
    poses = smooth_random_poses(skel, 50, rng)
    clip = to_representation(skel, poses, 60.0)
    noisy = augment_noise(clip.data, 0.03, rng)
    dm = clip.d_motion
    np.testing.assert_array_equal(noisy[:, dm:], clip.data[:, dm:])
    delta = noisy[:, :dm] - clip.data[:, :dm]
    assert delta.std() == pytest.approx(0.03, rel=0.05)
    assert np.any(delta != 0)
    np.testing.assert_array_equal(augment_noise(clip.data, 0.0, rng), clip.data)
    with pytest.raises(ValueError):
        augment_noise(clip.data, -0.1, rng)


def test_downsample_120_to_60(skel):
    rng = np.random.default_rng(7)
    poses = smooth_random_poses(skel, 10, rng)
    clip120 = to_representation(skel, poses, 120.0)
    clip60 = downsample(clip120, 60.0)
    assert len(clip60) == 5
    assert clip60.fps == 60.0
    # kept frames are 0,2,4,6,8: same world positions
    want = world_positions(clip120)[::2]
    np.testing.assert_allclose(world_positions(clip60), want, atol=1e-6)
    # velocities are recomputed over the doubled frame interval
    v120 = clip120.v[2]
    v60 = clip60.v[1]
    assert not np.allclose(v60, v120)
    with pytest.raises(RepresentationError):
        downsample(to_representation(skel, poses, 100.0), 60.0)


def test_downsample_identity_at_target_rate(skel):
    poses = smooth_random_poses(skel, 6, np.random.default_rng(8))
    clip = to_representation(skel, poses, 60.0)
    same = downsample(clip, 60.0)
    np.testing.assert_array_equal(same.data, clip.data)


# ------------------------------------------------------------ alignment


def test_align_poses_first_frame_canonical(skel):
    rng = np.random.default_rng(9)
    poses = planar_transform(
        smooth_random_poses(skel, 8, rng), 1.1, 3000.0, -500.0)
    aligned = align_poses(poses)
    assert aligned[0].root_position[0] == pytest.approx(0.0, abs=1e-9)
    assert aligned[0].root_position[2] == pytest.approx(0.0, abs=1e-9)
    assert quat.heading_of(aligned[0].rotations[0]) == pytest.approx(0.0, abs=1e-9)
    # height preserved
    for a, b in zip(poses, aligned):
        assert b.root_position[1] == pytest.approx(a.root_position[1], abs=1e-9)
    # idempotent
    again = align_poses(aligned)
    for a, b in zip(aligned, again):
        np.testing.assert_allclose(a.root_position, b.root_position, atol=1e-9)
        np.testing.assert_allclose(a.rotations, b.rotations, atol=1e-9)
    # representation data is untouched by alignment
    a = to_representation(skel, poses, 60.0)
    b = to_representation(skel, aligned, 60.0)
    np.testing.assert_allclose(a.data, b.data, atol=1e-9)


def test_align_clip_resets_anchor(skel):
    rng = np.random.default_rng(10)
    poses = planar_transform(smooth_random_poses(skel, 6, rng), 0.5, 100.0, 200.0)
    clip = to_representation(skel, poses, 60.0)
    assert np.linalg.norm(clip.anchor_xz) > 1
    out = align_clip(clip)
    np.testing.assert_array_equal(out.anchor_xz, [0.0, 0.0])
    assert out.anchor_heading == 0.0
    np.testing.assert_array_equal(out.data, clip.data)


def test_root_track_matches_poses(skel):
    poses = smooth_random_poses(skel, 7, np.random.default_rng(11))
    clip = to_representation(skel, poses, 60.0)
    xz, heading = root_track(clip)
    for i, p in enumerate(poses):
        assert xz[i, 0] == pytest.approx(p.root_position[0], abs=1e-6)
        assert xz[i, 1] == pytest.approx(p.root_position[2], abs=1e-6)


# ------------------------------------------------------------- clip type


def test_clip_validation(skel):
    with pytest.raises(RepresentationError):
        MotionClip(skel, 60.0, np.zeros((3, 5)))
    with pytest.raises(RepresentationError):
        MotionClip(skel, 0.0, np.zeros((3, 12 * skel.n_joints + 2)))
    with pytest.raises(RepresentationError):
        MotionClip(skel, 60.0, np.zeros((3, 12 * skel.n_joints + 2)),
                   type_labels=np.zeros(2, dtype=np.int64))
    empty = MotionClip(skel, 60.0, np.zeros((0, 12 * skel.n_joints + 2)))
    assert len(empty) == 0


def test_empty_pose_list(skel):
    clip = to_representation(skel, [], 60.0)
    assert len(clip) == 0
    assert from_representation(clip) == []
