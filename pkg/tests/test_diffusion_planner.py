from unittest import TestCase
from unittest.mock import Mock

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from diffusion_planner import InpaintingPlan, ToyDenoiser, detect_onset, inpaint_features, inpaint_pose, \
    joint_set_by_name, make_toy_denoiser, plan_motion, sample_with_inpainting
from exceptions import ConfigurationError, IntegrationError, NoInteractionError, StructuralError
from generate_demo_clips import generate_demo_clip
from motion_core import ContactMask, MotionClip, clip_to_features, default_skeleton, features_to_clip


def contacts_from(first_contact, frame_count=60):
    flags = np.zeros((frame_count, 2), dtype=bool)
    if first_contact is not None:
        flags[first_contact:, 0] = True
    return ContactMask(flags)


def test_detect_onset_adds_delay():
    # When
    onset = detect_onset(contacts_from(10), fps=30.0, delay_s=0.5)

    # Then
    assert onset == 25


def test_detect_onset_clamps_to_clip():
    # When
    onset = detect_onset(contacts_from(50), fps=30.0, delay_s=1.5)

    # Then
    assert onset == 59


def test_detect_onset_without_contact():
    # When, then raises
    with pytest.raises(NoInteractionError):
        detect_onset(contacts_from(None), fps=30.0)


def test_joint_set_by_name():
    # Given
    skeleton = default_skeleton()

    # Then
    assert joint_set_by_name(skeleton, None) == skeleton.interaction_joints
    assert joint_set_by_name(skeleton, 'none') == frozenset()
    assert len(joint_set_by_name(skeleton, 'all')) == skeleton.joint_count
    assert joint_set_by_name(skeleton, 'left_wrist, right_wrist') == {skeleton.index('left_wrist'),
                                                                       skeleton.index('right_wrist')}


def test_inpaint_features_shape_mismatch():
    # When, then raises
    with pytest.raises(StructuralError):
        inpaint_features(np.zeros((4, 60)), np.zeros((5, 60)), 2, np.zeros(18, dtype=bool))


def test_toy_denoiser_final_step_lands_on_library():
    # Given
    library = np.arange(12, dtype=float).reshape(4, 3)
    denoiser = ToyDenoiser([library], smoothing=0.0, steps=3)

    # When
    estimate = denoiser.step(np.zeros((4, 3)), None, 1)

    # Then
    np.testing.assert_allclose(estimate, library)


class TestSampleWithInpainting(TestCase):

    def setUp(self) -> None:
        self.reference = generate_demo_clip('carry-jump', seed=0)
        self.plan = InpaintingPlan.from_reference(self.reference, delay_s=0.2)

    def test_known_region_is_reproduced(self):
        # When
        planned, plan = plan_motion(self.reference, delay_s=0.2, steps=5, seed=1)

        # Then
        onset = plan.onset_frame
        np.testing.assert_array_equal(planned.root_positions[:onset], self.reference.human.root_positions[:onset])
        np.testing.assert_array_equal(planned.joint_rotations[:onset], self.reference.human.joint_rotations[:onset])
        joints = sorted(plan.interaction_joints)
        for frame in range(onset, len(planned)):
            np.testing.assert_array_equal(planned.joint_rotations[frame, joints],
                                          self.reference.human.joint_rotations[onset, joints])

    def test_planner_is_deterministic_for_a_seed(self):
        # When
        first, _ = plan_motion(self.reference, delay_s=0.2, steps=5, seed=7)
        second, _ = plan_motion(self.reference, delay_s=0.2, steps=5, seed=7)

        # Then
        np.testing.assert_array_equal(first.root_positions, second.root_positions)
        np.testing.assert_array_equal(first.joint_rotations, second.joint_rotations)

    def test_empty_interaction_set_only_fixes_prefix(self):
        # When
        planned, plan = plan_motion(self.reference, delay_s=0.2, steps=5, seed=1, interaction_joints=())

        # Then
        self.assertEqual(plan.interaction_joints, frozenset())
        self.assertEqual(len(planned), len(self.reference))

    def test_bad_denoiser_output_shape(self):
        # Given
        denoiser = Mock(steps=2)
        denoiser.step.return_value = np.zeros((3, 3))

        # When, then raises
        with self.assertRaises(IntegrationError):
            sample_with_inpainting(denoiser, self.plan)

    def test_empty_schedule_is_rejected(self):
        # Given
        denoiser = Mock(steps=0)

        # When, then raises
        with self.assertRaises(ConfigurationError):
            sample_with_inpainting(denoiser, self.plan)

    def test_denoiser_called_once_per_step_from_the_top(self):
        # Given
        features = clip_to_features(self.reference.human)
        denoiser = Mock(steps=4)
        denoiser.step.side_effect = lambda motion, condition, k: features

        # When
        sample_with_inpainting(denoiser, self.plan, condition='jump')

        # Then
        self.assertEqual([call.args[2] for call in denoiser.step.call_args_list], [4, 3, 2, 1])
        self.assertTrue(all(call.args[1] == 'jump' for call in denoiser.step.call_args_list))

    def test_library_with_mixed_skeletons(self):
        # Given
        other = Mock(skeleton=Mock(joint_count=5))

        # When, then raises
        with self.assertRaises(ConfigurationError):
            make_toy_denoiser([self.reference.human, other])


def random_motion(skeleton, frame_count, rng):
    root_quaternions = Rotation.random(frame_count, random_state=int(rng.integers(1 << 31))).as_quat()[:, [3, 0, 1, 2]]
    return MotionClip.from_arrays(skeleton, rng.normal(size=(frame_count, 3)), root_quaternions,
                                  rng.normal(size=(frame_count, skeleton.joint_count, 3)))


def three_branch_oracle(denoised, reference, onset, joints):
    root_positions = np.array(denoised.root_positions)
    root_quaternions = np.array(denoised.root_quaternions)
    joint_rotations = np.array(denoised.joint_rotations)
    root_positions[:onset] = reference.root_positions[:onset]
    root_quaternions[:onset] = reference.root_quaternions[:onset]
    joint_rotations[:onset] = reference.joint_rotations[:onset]
    if onset < len(reference):
        for joint in joints:
            joint_rotations[onset:, joint] = reference.joint_rotations[onset, joint]
    return root_positions, root_quaternions, joint_rotations


def assert_same_motion(clip, expected):
    np.testing.assert_array_equal(clip.root_positions, expected.root_positions)
    np.testing.assert_array_equal(clip.root_quaternions, expected.root_quaternions)
    np.testing.assert_array_equal(clip.joint_rotations, expected.joint_rotations)


class TestInpaintPose(TestCase):

    def setUp(self) -> None:
        self.reference = generate_demo_clip('carry-jump', seed=0)
        self.human = self.reference.human
        self.skeleton = self.human.skeleton

    def test_every_entry_matches_three_branch_oracle(self):
        # Given
        rng = np.random.default_rng(4)

        for _ in range(100):
            onset = int(rng.integers(0, len(self.human) + 1))
            joints = frozenset(np.flatnonzero(rng.random(self.skeleton.joint_count) < 0.4).tolist())
            plan = InpaintingPlan(self.reference, onset, joints)
            denoised = random_motion(self.skeleton, len(self.human), rng)

            # When
            inpainted = inpaint_pose(denoised, plan)

            # Then
            root_positions, root_quaternions, joint_rotations = three_branch_oracle(denoised, self.human, onset, joints)
            np.testing.assert_array_equal(inpainted.root_positions, root_positions)
            np.testing.assert_array_equal(inpainted.root_quaternions, root_quaternions)
            np.testing.assert_array_equal(inpainted.joint_rotations, joint_rotations)

    def test_inpainting_is_idempotent(self):
        # Given
        rng = np.random.default_rng(5)

        for _ in range(20):
            plan = InpaintingPlan(self.reference, int(rng.integers(0, len(self.human) + 1)),
                                  np.flatnonzero(rng.random(self.skeleton.joint_count) < 0.5).tolist())
            once = inpaint_pose(random_motion(self.skeleton, len(self.human), rng), plan)

            # When
            twice = inpaint_pose(once, plan)

            # Then
            assert_same_motion(twice, once)

    def test_onset_at_clip_end_returns_reference(self):
        # Given
        plan = InpaintingPlan(self.reference, len(self.human), self.skeleton.interaction_joints)
        denoised = random_motion(self.skeleton, len(self.human), np.random.default_rng(6))

        # When
        inpainted = inpaint_pose(denoised, plan)

        # Then
        assert_same_motion(inpainted, self.human)

    def test_onset_at_first_frame_freezes_only_interaction_joints(self):
        # Given
        plan = InpaintingPlan(self.reference, 0, {self.skeleton.index('left_wrist')})
        denoised = random_motion(self.skeleton, len(self.human), np.random.default_rng(7))

        # When
        inpainted = inpaint_pose(denoised, plan)

        # Then
        wrist = self.skeleton.index('left_wrist')
        np.testing.assert_array_equal(inpainted.root_positions, denoised.root_positions)
        np.testing.assert_array_equal(inpainted.joint_rotations[:, wrist],
                                      np.broadcast_to(self.human.joint_rotations[0, wrist], (len(self.human), 3)))
        others = [joint for joint in range(self.skeleton.joint_count) if joint != wrist]
        np.testing.assert_array_equal(inpainted.joint_rotations[:, others], denoised.joint_rotations[:, others])

    def test_frame_count_mismatch(self):
        # Given
        plan = InpaintingPlan(self.reference, 5, self.skeleton.interaction_joints)

        # When, then raises
        with self.assertRaises(StructuralError):
            inpaint_pose(self.human.frames[:-1], plan)

    def test_identity_denoiser_keeps_initial_noise_outside_constraints(self):
        # Given
        plan = InpaintingPlan.from_reference(self.reference, delay_s=0.2)
        denoiser = Mock(steps=6)
        denoiser.step.side_effect = lambda motion, condition, k: motion
        noise = np.random.default_rng(11).standard_normal(clip_to_features(self.human).shape)

        # When
        planned = sample_with_inpainting(denoiser, plan, seed=11)

        # Then
        expected = three_branch_oracle(features_to_clip(self.skeleton, noise), self.human, plan.onset_frame,
                                       plan.interaction_joints)
        np.testing.assert_array_equal(planned.root_positions, expected[0])
        np.testing.assert_allclose(planned.root_quaternions, expected[1], atol=1e-15)
        np.testing.assert_array_equal(planned.joint_rotations, expected[2])

    def test_single_step_schedule_is_one_denoise_then_one_inpaint(self):
        # Given
        plan = InpaintingPlan.from_reference(self.reference, delay_s=0.2)
        denoiser = Mock(steps=1)
        denoiser.step.side_effect = lambda motion, condition, k: 0.5 * motion + 0.1
        reference_features = clip_to_features(self.human)
        noise = np.random.default_rng(3).standard_normal(reference_features.shape)

        # When
        planned = sample_with_inpainting(denoiser, plan, seed=3)

        # Then
        denoised = features_to_clip(self.skeleton, inpaint_features(0.5 * noise + 0.1, reference_features,
                                                                    plan.onset_frame, plan.joint_mask))
        assert_same_motion(planned, inpaint_pose(denoised, plan))
        self.assertEqual(denoiser.step.call_count, 1)
