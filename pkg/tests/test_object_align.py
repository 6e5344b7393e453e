from unittest import TestCase

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from diffusion_planner import plan_motion
from exceptions import ConfigurationError, DegenerateConfigurationError, FrameTagError, StructuralError
from generate_demo_clips import generate_demo_clip
from metrics import contact_consistency
from object_align import AnchorFrame, AnchorSet, align_reference, anchors_to_hand_frame, anchors_to_world, \
    default_anchor_layout, kabsch_align, recover_object_trajectory
from rigid_transforms import RigidTransform, transform_points


def random_points(seed, count=6):
    return np.random.default_rng(seed).normal(size=(count, 3))


def test_kabsch_recovers_constructed_transform():
    # Given
    rotation = Rotation.from_rotvec([0.4, -1.1, 0.7]).as_matrix()
    translation = np.array([0.3, -2.0, 1.5])
    source = random_points(0)
    target = source @ rotation.T + translation

    # When
    result = kabsch_align(source, target)

    # Then
    np.testing.assert_allclose(result.rotation, rotation, atol=1e-9)
    np.testing.assert_allclose(result.translation, translation, atol=1e-9)
    assert result.residual < 1e-18
    assert not result.degenerate


def test_kabsch_is_least_squares_optimal():
    # Given
    rng = np.random.default_rng(1)
    candidates = Rotation.random(10000, random_state=3).as_matrix()

    for _ in range(200):
        count = int(rng.integers(3, 9))
        source = rng.normal(size=(count, 3))
        rotation = Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix()
        translation = rng.normal(size=3)
        clean_target = source @ rotation.T + translation
        noisy_target = clean_target + rng.normal(scale=0.05, size=(count, 3))

        # When
        recovered = kabsch_align(source, clean_target)
        result = kabsch_align(source, noisy_target)

        # Then
        np.testing.assert_allclose(recovered.rotation, rotation, atol=1e-9)
        np.testing.assert_allclose(recovered.translation, translation, atol=1e-9)
        centred_source = source - source.mean(axis=0)
        centred_target = noisy_target - noisy_target.mean(axis=0)
        rotated = np.einsum('kij,pj->kpi', candidates, centred_source)
        best_candidate = float(np.min(np.sum((rotated - centred_target) ** 2, axis=(1, 2))))
        assert result.residual <= best_candidate + 1e-12


def test_kabsch_never_returns_a_reflection():
    # Given
    source = random_points(4)
    target = source * np.array([1.0, 1.0, -1.0])

    # When
    result = kabsch_align(source, target)

    # Then
    assert np.linalg.det(result.rotation) == pytest.approx(1.0)


def test_kabsch_collinear_points_are_flagged():
    # Given
    source = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    target = np.array([[1.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 3.0, 1.0]])

    # When
    result = kabsch_align(source, target)

    # Then
    assert result.degenerate
    np.testing.assert_allclose(transform_points(result.transform, source), target, atol=1e-9)


def test_kabsch_coincident_points():
    # Given
    source = np.ones((4, 3))

    # When, then raises
    with pytest.raises(DegenerateConfigurationError):
        kabsch_align(source, random_points(5, 4))


def test_kabsch_needs_three_points():
    # When, then raises
    with pytest.raises(StructuralError):
        kabsch_align(np.zeros((2, 3)), np.zeros((2, 3)))


def test_anchor_frame_tags_are_checked():
    # Given
    world_anchors = AnchorSet(np.zeros((3, 3)), AnchorFrame.WORLD)

    # When, then raises
    with pytest.raises(FrameTagError):
        anchors_to_world(world_anchors, RigidTransform.identity())
    with pytest.raises(FrameTagError):
        anchors_to_hand_frame(world_anchors, RigidTransform.identity(), RigidTransform.identity())


def test_hand_local_anchors_need_a_hand():
    # When, then raises
    with pytest.raises(FrameTagError):
        AnchorSet(np.zeros((3, 3)), AnchorFrame.HAND_LOCAL)


def test_anchor_frame_chain_returns_object_points():
    # Given
    object_pose = RigidTransform(Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix(), np.array([1.0, 0.0, 0.5]))
    hand_pose = RigidTransform(Rotation.from_rotvec([-0.4, 0.0, 0.9]).as_matrix(), np.array([0.8, 0.2, 0.4]))
    anchors = AnchorSet(random_points(6, 4), AnchorFrame.OBJECT_LOCAL, hand=1)

    # When
    world = anchors_to_world(anchors_to_hand_frame(anchors, object_pose, hand_pose), hand_pose)

    # Then
    assert world.frame is AnchorFrame.WORLD
    assert world.hand == 1
    np.testing.assert_allclose(world.points, transform_points(object_pose, anchors.points), atol=1e-12)


class TestObjectRecovery(TestCase):

    def test_unchanged_motion_recovers_reference_object(self):
        # Given
        reference = generate_demo_clip('carry-stand', seed=0)
        onset = 30

        # When
        recovered = recover_object_trajectory(reference.human, reference, default_anchor_layout(reference, onset),
                                              onset)

        # Then
        np.testing.assert_allclose(recovered.positions, reference.object.positions, atol=1e-9)
        np.testing.assert_allclose(np.abs(np.sum(recovered.quaternions * reference.object.quaternions, axis=1)),
                                   np.ones(len(reference)), atol=1e-9)

    def test_frames_up_to_onset_copy_reference(self):
        # Given
        reference = generate_demo_clip('carry-jump', seed=0)
        planned, plan = plan_motion(reference, delay_s=0.5, steps=3, seed=2)

        # When
        aligned = align_reference(planned, reference, plan.onset_frame)

        # Then
        onset = plan.onset_frame
        np.testing.assert_array_equal(aligned.object.positions[:onset + 1], reference.object.positions[:onset + 1])
        np.testing.assert_array_equal(aligned.contacts.flags, reference.contacts.flags)

    def test_recovered_object_stays_rigid_in_the_hands(self):
        for name in ('carry-stand', 'carry-jump', 'one-hand-carry'):
            with self.subTest(clip=name):
                # Given
                reference = generate_demo_clip(name, seed=1)
                planned, plan = plan_motion(reference, delay_s=0.5, steps=3, seed=1)

                # When
                aligned = align_reference(planned, reference, plan.onset_frame)

                # Then
                self.assertLess(contact_consistency(aligned), 1e-6)

    def test_default_layout_uses_contacting_hands(self):
        # Given
        reference = generate_demo_clip('one-hand-carry', seed=0)

        # When
        anchors = default_anchor_layout(reference, 10)

        # Then
        self.assertEqual([anchor_set.hand for anchor_set in anchors], [1])
        self.assertEqual(len(anchors[0]), 4)
        self.assertIs(anchors[0].frame, AnchorFrame.OBJECT_LOCAL)

    def test_anchor_half_width_sets_square_size(self):
        # Given
        reference = generate_demo_clip('carry-stand', seed=0)

        # When
        anchors = default_anchor_layout(reference, 30, half_width=0.05)

        # Then
        for anchor_set in anchors:
            self.assertAlmostEqual(np.linalg.norm(anchor_set.points[1] - anchor_set.points[0]), 0.1, places=12)
            self.assertAlmostEqual(np.linalg.norm(anchor_set.points[3] - anchor_set.points[0]), 0.1 * np.sqrt(2),
                                   places=12)

    def test_wider_anchors_still_recover_reference_object(self):
        # Given
        reference = generate_demo_clip('carry-stand', seed=0)

        # When
        aligned = align_reference(reference.human, reference, 30, anchor_half_width=0.1)

        # Then
        np.testing.assert_allclose(aligned.object.positions, reference.object.positions, atol=1e-9)

    def test_non_positive_anchor_half_width(self):
        # Given
        reference = generate_demo_clip('carry-stand', seed=0)

        # When, then raises
        with self.assertRaises(ConfigurationError):
            default_anchor_layout(reference, 30, half_width=0.0)

    def test_onset_outside_clip(self):
        # Given
        reference = generate_demo_clip('carry-stand', seed=0)

        # When, then raises
        with self.assertRaises(StructuralError):
            recover_object_trajectory(reference.human, reference, default_anchor_layout(reference, 0),
                                      len(reference))
