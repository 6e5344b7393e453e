from unittest import TestCase
from unittest.mock import patch

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from exceptions import StructuralError
from motion_core import ContactMask, HOIReference, Joint, MotionClip, ObjectTrajectory, PoseFrame, SkeletonSpec, \
    batch_forward_kinematics, clip_forward_kinematics, clip_to_features, default_skeleton, features_to_clip, \
    forward_kinematics
from rigid_transforms import RigidTransform, axis_angle_to_matrix, matrix_to_axis_angle, matrix_to_quaternion

SCIPY_CONSTRUCTORS = {name: getattr(Rotation, name) for name in ('from_rotvec', 'from_matrix', 'from_quat')}


def writable_input_only(name):
    def construct(values, *args, **kwargs):
        if not np.asarray(values).flags.writeable:
            raise ValueError('buffer source array is read-only')
        return SCIPY_CONSTRUCTORS[name](values, *args, **kwargs)
    return construct


def two_link_skeleton():
    return SkeletonSpec(joints=(Joint('root', None, (0.0, 0.0, 0.0)),
                                Joint('upper', 0, (1.0, 0.0, 0.0)),
                                Joint('hand', 1, (1.0, 0.0, 0.0))),
                        body_joint_count=2, hand_joint_count=1, interaction_joints=frozenset({1}),
                        foot_joints=(1,))


class TestSkeletonSpec(TestCase):

    def test_default_skeleton_layout(self):
        # When
        skeleton = default_skeleton()

        # Then
        self.assertEqual(skeleton.joint_count, 18)
        self.assertEqual(skeleton.body_dof, 45)
        self.assertEqual(skeleton.full_dof, 47)
        self.assertEqual(skeleton.hand_joints, (16, 17))
        self.assertEqual({skeleton.joint_names[index] for index in skeleton.foot_joints}, {'left_foot', 'right_foot'})
        self.assertIn(skeleton.index('left_wrist'), skeleton.interaction_joints)

    def test_t_pose_pelvis_height(self):
        # Given
        skeleton = default_skeleton()

        # When
        height = skeleton.t_pose_pelvis_height()

        # Then
        self.assertAlmostEqual(height, 0.05 + 0.42 + 0.43)

    def test_parent_after_child_is_rejected(self):
        # When, then raises
        with self.assertRaises(StructuralError):
            SkeletonSpec(joints=(Joint('root', None, (0.0, 0.0, 0.0)), Joint('a', 2, (0.0, 0.0, 1.0)),
                                 Joint('b', 0, (0.0, 0.0, 1.0))),
                         body_joint_count=3, hand_joint_count=0, interaction_joints=frozenset(), foot_joints=())

    def test_two_roots_are_rejected(self):
        # When, then raises
        with self.assertRaises(StructuralError):
            SkeletonSpec(joints=(Joint('root', None, (0.0, 0.0, 0.0)), Joint('other', None, (0.0, 0.0, 1.0))),
                         body_joint_count=2, hand_joint_count=0, interaction_joints=frozenset(), foot_joints=())

    def test_unknown_joint_name(self):
        # When, then raises
        with self.assertRaises(StructuralError):
            default_skeleton().index('tail')


class TestForwardKinematics(TestCase):

    def test_zero_rotations_give_offset_sums(self):
        # Given
        skeleton = two_link_skeleton()
        frame = PoseFrame([0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0], np.zeros((3, 3)))

        # When
        transforms = forward_kinematics(skeleton, frame)

        # Then
        np.testing.assert_allclose([transform.translation for transform in transforms],
                                   [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [2.0, 0.0, 1.0]])

    def test_child_rotation_moves_only_descendants(self):
        # Given
        skeleton = two_link_skeleton()
        rotations = np.zeros((3, 3))
        rotations[1] = [0.0, 0.0, np.pi / 2]
        frame = PoseFrame([0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], rotations)

        # When
        transforms = forward_kinematics(skeleton, frame)

        # Then
        np.testing.assert_allclose(transforms[1].translation, [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(transforms[2].translation, [1.0, 1.0, 0.0], atol=1e-12)

    def test_root_joint_rotation_entry_is_ignored(self):
        # Given
        skeleton = two_link_skeleton()
        rotations = np.zeros((3, 3))
        rotations[0] = [0.3, 0.2, 0.1]
        frame = PoseFrame([0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], rotations)

        # When
        transforms = forward_kinematics(skeleton, frame)

        # Then
        np.testing.assert_allclose(transforms[0].rotation, np.eye(3), atol=1e-12)

    def test_batch_agrees_with_single_frame(self):
        # Given
        skeleton = default_skeleton()
        rng = np.random.default_rng(0)
        joint_rotations = rng.normal(scale=0.4, size=(5, skeleton.joint_count, 3))
        root_positions = rng.normal(size=(5, 3))
        root_rotations = Rotation.random(5, random_state=1).as_matrix()

        # When
        _, batch_positions = batch_forward_kinematics(skeleton, root_positions, root_rotations, joint_rotations)

        # Then
        for index in range(5):
            frame = PoseFrame(root_positions[index], Rotation.from_matrix(root_rotations[index]).as_quat()[[3, 0, 1, 2]],
                              joint_rotations[index])
            single = np.array([transform.translation for transform in forward_kinematics(skeleton, frame)])
            np.testing.assert_allclose(batch_positions[index], single, atol=1e-9)

    def test_joint_count_mismatch_is_rejected(self):
        # Given
        frame = PoseFrame([0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], np.zeros((2, 3)))

        # When, then raises
        with self.assertRaises(StructuralError):
            forward_kinematics(two_link_skeleton(), frame)


def test_pose_frame_rejects_non_unit_quaternion():
    # When, then raises
    with pytest.raises(StructuralError, match='unit quaternion'):
        PoseFrame([0.0, 0.0, 0.0], [1.0, 0.1, 0.0, 0.0], np.zeros((3, 3)))


def test_clip_rejects_empty_frames():
    # When, then raises
    with pytest.raises(StructuralError, match='empty clip'):
        MotionClip(two_link_skeleton(), ())


def test_object_trajectory_reports_bad_frame():
    # Given
    quaternions = np.tile([1.0, 0.0, 0.0, 0.0], (4, 1))
    quaternions[2] = [0.9, 0.0, 0.0, 0.0]

    # When, then raises
    with pytest.raises(StructuralError, match='frame 2'):
        ObjectTrajectory(np.zeros((4, 3)), quaternions)


def test_object_trajectory_from_transforms_round_trips_poses():
    # Given
    rotation = Rotation.from_rotvec([0.1, 0.2, 0.3]).as_matrix()
    transforms = [RigidTransform(rotation, np.array([1.0, 2.0, 3.0])), RigidTransform.identity()]

    # When
    trajectory = ObjectTrajectory.from_transforms(transforms)

    # Then
    np.testing.assert_allclose(trajectory.pose(0).rotation, rotation, atol=1e-12)
    np.testing.assert_allclose(trajectory.positions[0], [1.0, 2.0, 3.0])


def test_reference_rejects_mismatched_lengths():
    # Given
    skeleton = two_link_skeleton()
    human = MotionClip.from_arrays(skeleton, np.zeros((3, 3)), np.tile([1.0, 0.0, 0.0, 0.0], (3, 1)),
                                   np.zeros((3, 3, 3)))
    trajectory = ObjectTrajectory(np.zeros((2, 3)), np.tile([1.0, 0.0, 0.0, 0.0], (2, 1)))

    # When, then raises
    with pytest.raises(StructuralError, match='Frame counts differ'):
        HOIReference(human, trajectory, ContactMask(np.zeros((3, 1), dtype=bool)), np.zeros((1, 3)))


def test_features_round_trip_keeps_world_positions():
    # Given
    skeleton = default_skeleton()
    rng = np.random.default_rng(2)
    clip = MotionClip.from_arrays(skeleton, rng.normal(size=(4, 3)),
                                  Rotation.random(4, random_state=3).as_quat()[:, [3, 0, 1, 2]],
                                  rng.normal(scale=0.3, size=(4, skeleton.joint_count, 3)))

    # When
    restored = features_to_clip(skeleton, clip_to_features(clip))

    # Then
    np.testing.assert_allclose(clip_forward_kinematics(restored)[1], clip_forward_kinematics(clip)[1], atol=1e-9)


def test_read_only_clip_arrays_reach_scipy_as_copies():
    # Given
    skeleton = default_skeleton()
    clip = MotionClip.from_arrays(skeleton, np.zeros((2, 3)), np.tile([1.0, 0.0, 0.0, 0.0], (2, 1)),
                                  np.full((2, skeleton.joint_count, 3), 0.1))
    frozen = clip.joint_rotations[0]
    assert not frozen.flags.writeable

    # When
    with patch.object(Rotation, 'from_rotvec', side_effect=writable_input_only('from_rotvec')), \
            patch.object(Rotation, 'from_matrix', side_effect=writable_input_only('from_matrix')), \
            patch.object(Rotation, 'from_quat', side_effect=writable_input_only('from_quat')):
        _, positions = clip_forward_kinematics(clip)
        single = forward_kinematics(skeleton, clip.frames[1])
        restored = features_to_clip(skeleton, clip_to_features(clip))
        matrix = axis_angle_to_matrix(frozen[1])
        matrix.setflags(write=False)
        round_trip = matrix_to_axis_angle(matrix)
        matrix_to_quaternion(matrix)

    # Then
    np.testing.assert_allclose(positions[1], [transform.translation for transform in single], atol=1e-12)
    np.testing.assert_allclose(restored.joint_rotations, clip.joint_rotations, atol=1e-12)
    np.testing.assert_allclose(round_trip, frozen[1], atol=1e-12)
