"""Synthetic clip generators: gait correctness and IK."""

import numpy as np
import pytest

import inbetween.rotations as rot
from inbetween import synth
from inbetween.data import yaw_of_quat


class TestSkeleton:
    def test_has_22_bones_with_sided_pairs(self, skeleton):
        assert skeleton.bone_count == 22
        mapping = skeleton.mirror_map()  # raises if any side lacks a counterpart
        assert sorted(mapping) == list(range(22))

    def test_left_right_offsets_mirror_in_x(self, skeleton):
        mapping = skeleton.mirror_map()
        for i, j in enumerate(mapping):
            np.testing.assert_allclose(
                skeleton.offsets[i] * [-1, 1, 1], skeleton.offsets[j], atol=1e-12
            )


class TestTwoBoneIk:
    def test_reachable_target_hit_exactly(self, rng):
        a = np.zeros(3)
        l1, l2 = 0.4, 0.4
        for _ in range(20):
            target = rng.normal(size=3)
            target *= rng.uniform(0.1, 0.78) / np.linalg.norm(target)
            mid, end = synth.two_bone_ik(a, target, l1, l2, pole=np.array([0.0, 0.0, 1.0]))
            np.testing.assert_allclose(end, target, atol=1e-9)
            assert abs(np.linalg.norm(mid - a) - l1) < 1e-9
            assert abs(np.linalg.norm(end - mid) - l2) < 1e-9

    def test_unreachable_target_clamps_to_full_extension(self):
        a = np.zeros(3)
        target = np.array([2.0, 0.0, 0.0])
        mid, end = synth.two_bone_ik(a, target, 0.4, 0.4, pole=np.array([0.0, 0.0, 1.0]))
        # the solver keeps a hair of slack off full extension to avoid a
        # degenerate knee, so the knee may sit ~1e-5 off the ray
        np.testing.assert_allclose(end, [0.8, 0.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(mid, [0.4, 0.0, 0.0], atol=1e-4)


class TestWalkClip:
    def test_root_speed_matches_request(self, walk_clip):
        hips = walk_clip.global_positions[:, 0]
        d = np.diff(hips[:, [0, 2]], axis=0) * walk_clip.fps
        speed = np.linalg.norm(d, axis=-1).mean()
        assert abs(speed - 1.0) < 0.02

    def test_heading_steers_the_walk(self):
        clip = synth.make_walk_clip(n_frames=120, heading=np.pi / 2)
        disp = clip.global_positions[-1, 0] - clip.global_positions[0, 0]
        assert disp[0] > 3.0 and abs(disp[2]) < 0.05

    def test_stance_toes_planted(self, walk_clip):
        left, right = synth.plant_schedule(walk_clip.frame_count)
        sk = walk_clip.skeleton
        for mask, name in ((left, "LeftToe"), (right, "RightToe")):
            j = sk.index(name)
            # interior stance frames (erode the mask to skip transitions)
            core = mask.astype(bool) & np.roll(mask.astype(bool), 1) & np.roll(mask.astype(bool), -1)
            core[[0, -1]] = False
            heights = walk_clip.global_positions[core, j, 1]
            speeds = np.linalg.norm(walk_clip.velocities[core, j], axis=-1)
            assert heights.max() < 0.01
            assert np.median(speeds) < 0.3

    def test_swing_feet_leave_the_ground(self, walk_clip):
        left, _ = synth.plant_schedule(walk_clip.frame_count)
        j = walk_clip.skeleton.index("LeftToe")
        swing = ~left.astype(bool)
        assert walk_clip.global_positions[swing, j, 1].max() > 0.04

    def test_bone_lengths_preserved(self, walk_clip):
        sk = walk_clip.skeleton
        lengths = sk.bone_lengths()
        for j in range(1, sk.bone_count):
            d = np.linalg.norm(
                walk_clip.global_positions[:, j] - walk_clip.global_positions[:, sk.parents[j]],
                axis=-1,
            )
            np.testing.assert_allclose(d, lengths[j], atol=1e-8)


class TestTurnClip:
    def test_facing_sweeps_requested_angle(self):
        clip = synth.make_turn_clip(n_frames=90, total_angle=np.pi)
        yaw = yaw_of_quat(clip.global_rotations[:, 0])
        swept = np.unwrap(yaw)[-1] - np.unwrap(yaw)[0]
        assert abs(abs(swept) - np.pi) < 0.1

    def test_root_stays_in_place(self):
        clip = synth.make_turn_clip(n_frames=90)
        xz = clip.global_positions[:, 0][:, [0, 2]]
        assert np.linalg.norm(xz - xz[0], axis=-1).max() < 0.1


class TestStaticClip:
    def test_no_motion(self, static_clip):
        assert np.abs(np.diff(static_clip.global_positions, axis=0)).max() < 1e-12
