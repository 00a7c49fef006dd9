"""Synthetic hand data tests: kinematics, projection, rendering, file format."""
import math

import numpy as np
import numpy.testing as npt
import pytest

from seqpose.data import (BONES, Camera, DatasetHeader, DomainError, FormatError,
                          GenSpec, HandSequenceSample, JOINT_COUNT, KinematicHand,
                          ProjectionError, REFERENCE_JOINT, RenderStyle, SplitManifest,
                          finger_bones, finger_joints, forward_kinematics,
                          generate_dataset, normalize_pose, project, read_dataset,
                          render, write_dataset)


# -------------------------------------------------------------- kinematics

def test_bone_list_covers_all_joints():
    assert len(BONES) == 20
    children = sorted(b for _, b in BONES)
    assert children == list(range(1, 21))


def test_template_is_flat_and_at_origin():
    j = forward_kinematics(KinematicHand.template())
    npt.assert_array_equal(j[0], np.zeros(3))
    npt.assert_allclose(j[:, 2], np.zeros(21), atol=1e-12)   # palm plane z = 0


def test_template_reference_bone_unit_length():
    j = forward_kinematics(KinematicHand.template())
    npt.assert_allclose(np.linalg.norm(j[REFERENCE_JOINT] - j[0]), 1.0, rtol=1e-12)
    # middle finger points along +y from the wrist
    npt.assert_allclose(j[REFERENCE_JOINT], [0.0, 1.0, 0.0], atol=1e-12)


def test_global_translation_moves_all_joints():
    hand = KinematicHand.template()
    base = forward_kinematics(hand)
    hand.pos = np.array([0.3, -0.2, 1.5])
    moved = forward_kinematics(hand)
    npt.assert_allclose(moved, base + hand.pos, atol=1e-12)


def test_chain_lengths_preserved_under_pose():
    rng = np.random.default_rng(61)
    hand = KinematicHand.template()
    hand.abduction = rng.uniform(-0.3, 0.3, 5)
    hand.flexion = rng.uniform(0.05, 1.0, (5, 3))
    hand.rot = rng.uniform(-1, 1, 3)
    hand.pos = rng.uniform(-1, 1, 3)
    j = forward_kinematics(hand)
    for f in range(5):
        for s, (a, b) in enumerate(finger_bones(f)):
            npt.assert_allclose(np.linalg.norm(j[b] - j[a]),
                                hand.bone_lengths[f, s], rtol=1e-10)


def test_right_angle_base_flexion_two_bone_case():
    # 90 deg at the middle finger base: the whole chain leaves the palm
    # plane; with zero further flexion it stays straight, so the tip sits at
    # mcp + (sum of phalanges) * rotated direction, i.e. out of plane by the
    # full phalanx length.
    hand = KinematicHand.template()
    hand.flexion[2, 0] = math.pi / 2
    j = forward_kinematics(hand)
    mcp, pip, dip, tip = (j[i] for i in finger_joints(2))
    npt.assert_allclose(mcp, [0.0, 1.0, 0.0], atol=1e-12)
    phal = hand.bone_lengths[2, 1:]
    # chain is rigid: direction mcp->pip equals pip->dip equals dip->tip
    d1 = (pip - mcp) / np.linalg.norm(pip - mcp)
    d2 = (dip - pip) / np.linalg.norm(dip - pip)
    d3 = (tip - dip) / np.linalg.norm(tip - dip)
    npt.assert_allclose(d1, d2, atol=1e-12)
    npt.assert_allclose(d2, d3, atol=1e-12)
    # rotated out of the palm plane: y unchanged, z carries the length
    npt.assert_allclose(np.abs(tip[2]), phal.sum(), rtol=1e-10)
    npt.assert_allclose(tip[1], 1.0, atol=1e-10)


def test_flexion_limit_enforced():
    hand = KinematicHand.template()
    hand.flexion[0, 0] = 3.0
    with pytest.raises(DomainError):
        forward_kinematics(hand)


def test_abduction_limit_enforced():
    hand = KinematicHand.template()
    hand.abduction[3] = 1.0
    with pytest.raises(DomainError):
        forward_kinematics(hand)


def test_normalize_pose_unit_reference():
    rng = np.random.default_rng(62)
    hand = KinematicHand.template(1.0 + 0.05 * rng.uniform(-1, 1, (5, 4)))
    hand.pos = np.array([1.0, 2.0, 3.0])
    world = forward_kinematics(hand)
    norm = normalize_pose(world, hand.reference_length)
    npt.assert_array_equal(norm[0], np.zeros(3))
    npt.assert_allclose(np.linalg.norm(norm[REFERENCE_JOINT]), 1.0, rtol=1e-10)


# -------------------------------------------------------------- projection

def test_project_scalar_oracle():
    rng = np.random.default_rng(63)
    cam = Camera.look_at(rng.uniform(5, 8, 3), np.zeros(3), fx=40, fy=45, cx=16, cy=15)
    pts = rng.uniform(-1, 1, (7, 3))
    uv = project(pts, cam)
    for i in range(7):
        p = cam.rot @ pts[i] + cam.trans
        npt.assert_allclose(uv[i, 0], 40 * p[0] / p[2] + 16, rtol=1e-12)
        npt.assert_allclose(uv[i, 1], 45 * p[1] / p[2] + 15, rtol=1e-12)


def test_project_optical_axis_hits_principal_point():
    cam = Camera(fx=30, fy=30, cx=15.5, cy=15.5, rot=np.eye(3), trans=np.zeros(3))
    uv = project(np.array([[0.0, 0.0, 5.0]]), cam)
    npt.assert_allclose(uv, [[15.5, 15.5]], atol=1e-12)


def test_point_behind_camera_rejected():
    cam = Camera(fx=30, fy=30, cx=16, cy=16, rot=np.eye(3), trans=np.zeros(3))
    with pytest.raises(ProjectionError):
        project(np.array([[0.0, 0.0, -1.0]]), cam)


def test_camera_rotation_validated():
    with pytest.raises(ValueError):
        Camera(fx=30, fy=30, cx=16, cy=16, rot=np.eye(3) * 2, trans=np.zeros(3))
    flipped = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        Camera(fx=30, fy=30, cx=16, cy=16, rot=flipped, trans=np.zeros(3))


def test_look_at_is_orthonormal_and_centers_target():
    cam = Camera.look_at((3.0, 2.0, 9.0), (0.0, 0.0, 0.0), fx=40, fy=40, cx=16, cy=16)
    npt.assert_allclose(cam.rot @ cam.rot.T, np.eye(3), atol=1e-12)
    npt.assert_allclose(np.linalg.det(cam.rot), 1.0, rtol=1e-12)
    uv = project(np.zeros((1, 3)), cam)
    npt.assert_allclose(uv, [[16.0, 16.0]], atol=1e-9)


# ---------------------------------------------------------------- renderer

def sample_joints2d(rng):
    hand = KinematicHand.template()
    hand.flexion[:, :] = 0.4
    world = forward_kinematics(hand)
    cam = Camera.look_at((0, 0, 10.0), (0, 0, 0), fx=41.6, fy=41.6, cx=15.5, cy=15.5)
    return project(world, cam)


def test_render_shape_range_dtype():
    rng = np.random.default_rng(64)
    img = render(sample_joints2d(rng), 32, 32, rng=rng)
    assert img.shape == (3, 32, 32) and img.dtype == np.float32
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert img.max() > 0.5  # hand strokes actually visible


def test_render_deterministic_under_seed():
    uv = sample_joints2d(np.random.default_rng(65))
    a = render(uv, 32, 32, rng=np.random.default_rng(99))
    b = render(uv, 32, 32, rng=np.random.default_rng(99))
    assert a.tobytes() == b.tobytes()


def test_render_blank_finger_diff_is_local():
    uv = sample_joints2d(np.random.default_rng(66))
    finger = 1
    full = render(uv, 32, 32, rng=np.random.default_rng(5))
    blanked = render(uv, 32, 32, rng=np.random.default_rng(5), blank_finger=finger)
    diff = np.abs(full.astype(np.float64) - blanked.astype(np.float64)).max(axis=0)
    changed = np.argwhere(diff > 1e-4)
    assert len(changed) > 0
    pts = uv[list(finger_joints(finger)) + [0]]
    for y, x in changed:
        d = np.sqrt(((pts - [x, y]) ** 2).sum(axis=1)).min()
        assert d < 12.0, f"pixel ({x},{y}) changed far from finger {finger}"


def test_render_rejects_bad_finger():
    uv = sample_joints2d(np.random.default_rng(67))
    with pytest.raises(ValueError):
        render(uv, 32, 32, blank_finger=7)


# -------------------------------------------------------------- generation

SMALL = GenSpec(subjects=2, activities=2, sequences_per=4, frames=5,
                img_h=32, img_w=32, mode="temporal", seed=11)


def test_generation_counts():
    samples, _ = generate_dataset(SMALL)
    assert len(samples) == 16
    assert all(s.n_frames == 5 for s in samples)
    assert all(s.frames.shape == (5, 3, 32, 32) for s in samples)


def test_generation_deterministic():
    a, _ = generate_dataset(SMALL)
    b, _ = generate_dataset(SMALL)
    for x, y in zip(a, b):
        assert x.frames.tobytes() == y.frames.tobytes()
        assert x.gt3d.tobytes() == y.gt3d.tobytes()


def test_reprojection_consistency_whole_set():
    samples, _ = generate_dataset(SMALL)
    worst = max(s.reprojection_error() for s in samples)
    assert worst < 1e-5, worst


def test_gt3d_root_relative_unit_reference():
    samples, _ = generate_dataset(SMALL)
    for s in samples:
        npt.assert_array_equal(s.gt3d[:, 0], np.zeros((5, 3)))
        ref = np.linalg.norm(s.gt3d[:, REFERENCE_JOINT], axis=1)
        npt.assert_allclose(ref, np.ones(5), atol=1e-6)


def test_temporal_smoothness_within_bound():
    samples, _ = generate_dataset(SMALL)
    for s in samples:
        step = np.linalg.norm(np.diff(s.world, axis=0), axis=2).max()
        assert step < s.smooth_bound, (step, s.smooth_bound)


def test_angular_mode_shares_gt3d_across_views():
    spec = GenSpec(subjects=2, activities=2, sequences_per=2, cameras=3,
                   mode="angular", seed=12)
    samples, _ = generate_dataset(spec)
    assert all(s.n_frames == 3 for s in samples)
    for s in samples:
        npt.assert_array_equal(s.gt3d[0], s.gt3d[1])
        npt.assert_array_equal(s.gt3d[0], s.gt3d[2])
        npt.assert_array_equal(s.camera_ids, [0, 1, 2])
        # the views themselves differ
        assert s.frames[0].tobytes() != s.frames[1].tobytes()


def test_subject_split_disjoint():
    samples, manifest = generate_dataset(SMALL)
    train_subj = {samples[i].subject for i in manifest.train}
    test_subj = {samples[i].subject for i in manifest.test}
    assert train_subj.isdisjoint(test_subj)
    assert sorted(manifest.train + manifest.test) == list(range(16))


def test_activity_split_disjoint():
    spec = GenSpec(subjects=2, activities=3, sequences_per=2, seed=13,
                   split_by="activity", test_ids=(2,))
    samples, manifest = generate_dataset(spec)
    train_act = {samples[i].activity for i in manifest.train}
    assert 2 not in train_act
    assert {samples[i].activity for i in manifest.test} == {2}


def test_occlusion_blanks_strict_subset():
    spec = GenSpec(subjects=1, activities=1, sequences_per=6, frames=5,
                   seed=14, occlude=True, occlude_prob=0.5)
    samples, _ = generate_dataset(spec)
    for s in samples:
        blanked = (s.occluded >= 0).sum()
        assert 1 <= blanked <= 4
        fingers = set(int(f) for f in s.occluded if f >= 0)
        assert len(fingers) == 1


def test_frames_values_in_unit_interval():
    samples, _ = generate_dataset(SMALL)
    for s in samples:
        assert s.frames.min() >= 0.0 and s.frames.max() <= 1.0


# ------------------------------------------------------------- file format

def test_dataset_roundtrip_bit_identical(tmp_path):
    samples, manifest = generate_dataset(SMALL)
    path = tmp_path / "d.sthd"
    write_dataset(path, samples, SMALL)
    header, loaded = read_dataset(path)
    assert header.n_samples == 16 and header.n_frames == 5
    assert header.mode == "temporal" and header.img_h == 32
    for a, b in zip(samples, loaded):
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.gt2d.tobytes() == b.gt2d.tobytes()
        assert a.gt3d.tobytes() == b.gt3d.tobytes()
        assert (a.subject, a.activity) == (b.subject, b.activity)
        npt.assert_array_equal(a.camera_ids, b.camera_ids)


def test_dataset_corruption_detected(tmp_path):
    samples, _ = generate_dataset(GenSpec(subjects=1, activities=1, sequences_per=1,
                                          frames=3, seed=15))
    path = tmp_path / "d.sthd"
    write_dataset(path, samples, GenSpec(subjects=1, activities=1, sequences_per=1,
                                         frames=3, seed=15))
    raw = bytearray(path.read_bytes())
    raw[100] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        read_dataset(path)


def test_dataset_bad_magic(tmp_path):
    path = tmp_path / "bogus.sthd"
    path.write_bytes(b"NOPE" + b"\x00" * 60)
    with pytest.raises(FormatError):
        read_dataset(path)


def test_split_manifest_roundtrip(tmp_path):
    m = SplitManifest(split_by="subject", test_ids=[1], train=[0, 1, 2], test=[3])
    p = tmp_path / "m.json"
    m.save(p)
    m2 = SplitManifest.load(p)
    assert (m2.split_by, m2.test_ids, m2.train, m2.test) == ("subject", [1], [0, 1, 2], [3])
