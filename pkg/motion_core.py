"""Skeleton, pose and object data model plus forward kinematics.

Joint order is topological (parents precede children) with every body joint listed before the
hand end-effectors. The root joint's world transform is (root_rotation, root_position); its entry in
``joint_rotations`` is carried through files and the planner but does not enter kinematics.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from exceptions import StructuralError
from rigid_transforms import RigidTransform, quaternion_to_matrix, wxyz_to_xyzw, xyzw_to_wxyz

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

DEFAULT_FPS = 30.0
UNIT_NORM_TOLERANCE = 1e-9


def _frozen_array(values, dtype=float):
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Joint:
    name: str
    parent: Optional[int]
    local_offset: Tuple[float, float, float]


@dataclass(frozen=True)
class SkeletonSpec:
    joints: Tuple[Joint, ...]
    body_joint_count: int
    hand_joint_count: int
    interaction_joints: frozenset
    foot_joints: Tuple[int, ...]
    pelvis_joint: int = 0
    parents: np.ndarray = field(init=False, repr=False, compare=False)
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, 'joints', tuple(self.joints))
        object.__setattr__(self, 'interaction_joints', frozenset(self.interaction_joints))
        object.__setattr__(self, 'foot_joints', tuple(self.foot_joints))
        roots = [index for index, joint in enumerate(self.joints) if joint.parent is None]
        if len(roots) != 1:
            raise StructuralError(f'Skeleton must have exactly one root joint, found {len(roots)}')
        if roots[0] != self.pelvis_joint:
            raise StructuralError(f'Root joint {roots[0]} is not the pelvis joint {self.pelvis_joint}')
        for index, joint in enumerate(self.joints):
            if joint.parent is not None and not 0 <= joint.parent < index:
                raise StructuralError(f'Joint "{joint.name}" has parent {joint.parent}, '
                                      f'parents must precede their children')
        if self.body_joint_count + self.hand_joint_count != len(self.joints):
            raise StructuralError(f'body_joint_count {self.body_joint_count} + hand_joint_count '
                                  f'{self.hand_joint_count} != joint count {len(self.joints)}')
        joint_range = set(range(len(self.joints)))
        if not self.interaction_joints <= joint_range:
            raise StructuralError('Interaction joints must be skeleton joints')
        if not set(self.foot_joints) <= set(range(self.body_joint_count)):
            raise StructuralError('Foot joints must be body joints')
        object.__setattr__(self, 'parents', _frozen_array(
            [-1 if joint.parent is None else joint.parent for joint in self.joints], dtype=int))
        object.__setattr__(self, 'offsets', _frozen_array([joint.local_offset for joint in self.joints]))

    @property
    def joint_count(self):
        return len(self.joints)

    @property
    def joint_names(self):
        return [joint.name for joint in self.joints]

    @property
    def hand_joints(self):
        return tuple(range(self.body_joint_count, self.joint_count))

    @property
    def actuated_body_joints(self):
        """Non-root body joints, in order; each contributes three action DoF."""
        return tuple(index for index in range(self.body_joint_count) if index != self.pelvis_joint)

    @property
    def body_dof(self):
        return 3 * len(self.actuated_body_joints)

    @property
    def full_dof(self):
        return self.body_dof + self.hand_joint_count

    def index(self, name):
        for index, joint in enumerate(self.joints):
            if joint.name == name:
                return index
        raise StructuralError(f'Unknown joint "{name}"')

    def t_pose_pelvis_height(self):
        """Pelvis height above the lowest foot joint with every rotation at zero."""
        _, positions = forward_kinematics_arrays(self, np.zeros(3), np.eye(3),
                                                 np.zeros((self.joint_count, 3)))
        return float(positions[self.pelvis_joint, 2] - positions[list(self.foot_joints), 2].min())


DEFAULT_JOINTS = (
    Joint('pelvis', None, (0.0, 0.0, 0.0)),
    Joint('left_hip', 0, (0.0, 0.1, -0.05)),
    Joint('left_knee', 1, (0.0, 0.0, -0.42)),
    Joint('left_foot', 2, (0.0, 0.0, -0.43)),
    Joint('right_hip', 0, (0.0, -0.1, -0.05)),
    Joint('right_knee', 4, (0.0, 0.0, -0.42)),
    Joint('right_foot', 5, (0.0, 0.0, -0.43)),
    Joint('spine', 0, (0.0, 0.0, 0.12)),
    Joint('thorax', 7, (0.0, 0.0, 0.22)),
    Joint('neck', 8, (0.0, 0.0, 0.2)),
    Joint('left_shoulder', 8, (0.0, 0.18, 0.15)),
    Joint('left_elbow', 10, (0.0, 0.28, 0.0)),
    Joint('left_wrist', 11, (0.0, 0.25, 0.0)),
    Joint('right_shoulder', 8, (0.0, -0.18, 0.15)),
    Joint('right_elbow', 13, (0.0, -0.28, 0.0)),
    Joint('right_wrist', 14, (0.0, -0.25, 0.0)),
    Joint('left_hand', 12, (0.0, 0.08, 0.0)),
    Joint('right_hand', 15, (0.0, -0.08, 0.0)),
)

DEFAULT_INTERACTION_JOINT_NAMES = ('thorax', 'left_shoulder', 'right_shoulder', 'left_elbow', 'right_elbow',
                                   'left_wrist', 'right_wrist')


def default_skeleton() -> SkeletonSpec:
    names = [joint.name for joint in DEFAULT_JOINTS]
    return SkeletonSpec(joints=DEFAULT_JOINTS,
                        body_joint_count=16,
                        hand_joint_count=2,
                        interaction_joints=frozenset(names.index(name) for name in DEFAULT_INTERACTION_JOINT_NAMES),
                        foot_joints=(names.index('left_foot'), names.index('right_foot')),
                        pelvis_joint=0)


@dataclass(frozen=True, eq=False)
class PoseFrame:
    root_position: np.ndarray
    root_rotation: np.ndarray
    joint_rotations: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'root_position', _frozen_array(self.root_position))
        object.__setattr__(self, 'root_rotation', _frozen_array(self.root_rotation))
        object.__setattr__(self, 'joint_rotations', _frozen_array(self.joint_rotations))
        if self.root_position.shape != (3,) or not np.all(np.isfinite(self.root_position)):
            raise StructuralError('root_position must be a finite 3-vector')
        if self.root_rotation.shape != (4,) or \
                abs(np.linalg.norm(self.root_rotation) - 1.0) > UNIT_NORM_TOLERANCE:
            raise StructuralError(f'root_rotation must be a unit quaternion, norm '
                                  f'{np.linalg.norm(self.root_rotation)}')
        if self.joint_rotations.ndim != 2 or self.joint_rotations.shape[1] != 3:
            raise StructuralError(f'joint_rotations must be J x 3, got {self.joint_rotations.shape}')
        if not np.all(np.isfinite(self.joint_rotations)):
            raise StructuralError('joint_rotations must be finite')


@dataclass(frozen=True, eq=False)
class MotionClip:
    skeleton: SkeletonSpec
    frames: Tuple[PoseFrame, ...]
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        object.__setattr__(self, 'frames', tuple(self.frames))
        if not self.frames:
            raise StructuralError('empty clip')
        if not self.fps > 0:
            raise StructuralError(f'fps must be positive, got {self.fps}')
        for index, frame in enumerate(self.frames):
            if frame.joint_rotations.shape[0] != self.skeleton.joint_count:
                raise StructuralError(f'frame {index} has {frame.joint_rotations.shape[0]} joint rotations, '
                                      f'skeleton has {self.skeleton.joint_count} joints')

    def __len__(self):
        return len(self.frames)

    @cached_property
    def root_positions(self):
        return _frozen_array([frame.root_position for frame in self.frames])

    @cached_property
    def root_quaternions(self):
        return _frozen_array([frame.root_rotation for frame in self.frames])

    @cached_property
    def joint_rotations(self):
        return _frozen_array([frame.joint_rotations for frame in self.frames])

    @classmethod
    def from_arrays(cls, skeleton, root_positions, root_quaternions, joint_rotations, fps=DEFAULT_FPS):
        frames = [PoseFrame(position, quaternion, rotations)
                  for position, quaternion, rotations in zip(root_positions, root_quaternions, joint_rotations)]
        return cls(skeleton, frames, fps)


@dataclass(frozen=True, eq=False)
class ObjectTrajectory:
    positions: np.ndarray
    quaternions: np.ndarray
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        object.__setattr__(self, 'positions', _frozen_array(self.positions))
        object.__setattr__(self, 'quaternions', _frozen_array(self.quaternions))
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise StructuralError(f'Object positions must be N x 3, got {self.positions.shape}')
        if self.quaternions.shape != (len(self.positions), 4):
            raise StructuralError('Object quaternions must be N x 4 and match the position count')
        norms = np.linalg.norm(self.quaternions, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
            frame = int(np.argmax(np.abs(norms - 1.0)))
            raise StructuralError(f'Object quaternion at frame {frame} is not unit norm')
        if not self.fps > 0:
            raise StructuralError(f'fps must be positive, got {self.fps}')

    def __len__(self):
        return len(self.positions)

    def pose(self, frame_index) -> RigidTransform:
        return RigidTransform(quaternion_to_matrix(self.quaternions[frame_index]), self.positions[frame_index].copy())

    @cached_property
    def rotation_matrices(self):
        return _frozen_array(Rotation.from_quat(wxyz_to_xyzw(self.quaternions)).as_matrix())

    @classmethod
    def from_transforms(cls, transforms: Sequence[RigidTransform], fps=DEFAULT_FPS):
        rotations = np.array([transform.rotation for transform in transforms])
        quaternions = xyzw_to_wxyz(Rotation.from_matrix(rotations).as_quat())
        return cls(np.array([transform.translation for transform in transforms]), quaternions, fps)


@dataclass(frozen=True, eq=False)
class ContactMask:
    flags: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'flags', _frozen_array(self.flags, dtype=bool))
        if self.flags.ndim != 2:
            raise StructuralError(f'Contact mask must be N x hands, got {self.flags.shape}')

    def __len__(self):
        return len(self.flags)

    @property
    def any_hand(self):
        return self.flags.any(axis=1)


@dataclass(frozen=True, eq=False)
class HOIReference:
    human: MotionClip
    object: ObjectTrajectory
    contacts: ContactMask
    object_geometry: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'object_geometry', _frozen_array(self.object_geometry))
        if not len(self.human) == len(self.object) == len(self.contacts):
            raise StructuralError(f'Frame counts differ: human {len(self.human)}, object {len(self.object)}, '
                                  f'contacts {len(self.contacts)}')
        if self.human.fps != self.object.fps:
            raise StructuralError(f'Frame rates differ: human {self.human.fps}, object {self.object.fps}')
        if self.contacts.flags.shape[1] != self.human.skeleton.hand_joint_count:
            raise StructuralError('Contact mask needs one column per hand')
        if self.object_geometry.ndim != 2 or self.object_geometry.shape[1] != 3 or len(self.object_geometry) < 1:
            raise StructuralError('Object geometry must be a non-empty V x 3 vertex set')

    def __len__(self):
        return len(self.human)

    @property
    def fps(self):
        return self.human.fps

    @property
    def skeleton(self):
        return self.human.skeleton

    def truncated(self, length):
        return HOIReference(
            MotionClip(self.human.skeleton, self.human.frames[:length], self.human.fps),
            ObjectTrajectory(self.object.positions[:length], self.object.quaternions[:length], self.object.fps),
            ContactMask(self.contacts.flags[:length]),
            self.object_geometry)


def forward_kinematics_arrays(skeleton: SkeletonSpec, root_position, root_rotation, joint_rotations):
    """World rotations (J x 3 x 3) and positions (J x 3) for one pose; root_rotation is a matrix."""
    local_rotations = Rotation.from_rotvec(np.array(joint_rotations, dtype=float)).as_matrix()
    world_rotations = np.empty((skeleton.joint_count, 3, 3))
    world_positions = np.empty((skeleton.joint_count, 3))
    for index, parent in enumerate(skeleton.parents):
        if parent < 0:
            world_rotations[index] = root_rotation
            world_positions[index] = root_position
            continue
        world_rotations[index] = world_rotations[parent] @ local_rotations[index]
        world_positions[index] = world_positions[parent] + world_rotations[parent] @ skeleton.offsets[index]
    return world_rotations, world_positions


def forward_kinematics(skeleton: SkeletonSpec, frame: PoseFrame) -> List[RigidTransform]:
    if frame.joint_rotations.shape[0] != skeleton.joint_count:
        raise StructuralError(f'Pose has {frame.joint_rotations.shape[0]} joint rotations, '
                              f'skeleton has {skeleton.joint_count} joints')
    rotations, positions = forward_kinematics_arrays(skeleton, frame.root_position,
                                                     quaternion_to_matrix(frame.root_rotation),
                                                     frame.joint_rotations)
    return [RigidTransform(rotation, position) for rotation, position in zip(rotations, positions)]


def batch_forward_kinematics(skeleton: SkeletonSpec, root_positions, root_rotations, joint_rotations):
    """Vectorised over frames: returns (N x J x 3 x 3) rotations and (N x J x 3) positions."""
    root_positions = np.asarray(root_positions, dtype=float)
    joint_rotations = np.array(joint_rotations, dtype=float)
    frame_count = len(root_positions)
    if joint_rotations.shape[1] != skeleton.joint_count:
        raise StructuralError(f'Poses have {joint_rotations.shape[1]} joint rotations, '
                              f'skeleton has {skeleton.joint_count} joints')
    local_rotations = Rotation.from_rotvec(joint_rotations.reshape(-1, 3)).as_matrix() \
        .reshape(frame_count, skeleton.joint_count, 3, 3)
    world_rotations = np.empty_like(local_rotations)
    world_positions = np.empty((frame_count, skeleton.joint_count, 3))
    for index, parent in enumerate(skeleton.parents):
        if parent < 0:
            world_rotations[:, index] = root_rotations
            world_positions[:, index] = root_positions
            continue
        world_rotations[:, index] = world_rotations[:, parent] @ local_rotations[:, index]
        world_positions[:, index] = world_positions[:, parent] + world_rotations[:, parent] @ skeleton.offsets[index]
    return world_rotations, world_positions


def clip_forward_kinematics(clip: MotionClip):
    root_rotations = Rotation.from_quat(wxyz_to_xyzw(clip.root_quaternions)).as_matrix()
    return batch_forward_kinematics(clip.skeleton, clip.root_positions, root_rotations, clip.joint_rotations)


def clip_to_features(clip: MotionClip) -> np.ndarray:
    """N x (6 + 3J) array: root position, root rotation vector, then joint axis-angles."""
    root_rotvecs = Rotation.from_quat(wxyz_to_xyzw(clip.root_quaternions)).as_rotvec()
    return np.concatenate([clip.root_positions, root_rotvecs,
                           clip.joint_rotations.reshape(len(clip), -1)], axis=1)


def features_to_clip(skeleton: SkeletonSpec, features, fps=DEFAULT_FPS) -> MotionClip:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != 6 + 3 * skeleton.joint_count:
        raise StructuralError(f'Feature array shape {features.shape} does not match skeleton')
    root_quaternions = xyzw_to_wxyz(Rotation.from_rotvec(np.array(features[:, 3:6])).as_quat())
    joint_rotations = features[:, 6:].reshape(len(features), skeleton.joint_count, 3)
    return MotionClip.from_arrays(skeleton, features[:, :3], root_quaternions, joint_rotations, fps)
