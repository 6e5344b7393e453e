"""Object-trajectory recovery by contact-anchor bookkeeping and per-frame Kabsch alignment."""
import enum
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from exceptions import ConfigurationError, DegenerateConfigurationError, FrameTagError, StructuralError
from motion_core import HOIReference, MotionClip, ObjectTrajectory, clip_forward_kinematics
from rigid_transforms import RigidTransform, compose, invert, transform_points

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

ANCHOR_HALF_WIDTH = 0.02
COINCIDENT_TOLERANCE = 1e-12
COLLINEAR_TOLERANCE = 1e-9


class AnchorFrame(enum.Enum):
    OBJECT_LOCAL = 'object_local'
    HAND_LOCAL = 'hand_local'
    WORLD = 'world'


@dataclass(frozen=True, eq=False)
class AnchorSet:
    points: np.ndarray
    frame: AnchorFrame
    hand: Optional[int] = None

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        points.setflags(write=False)
        object.__setattr__(self, 'points', points)
        if points.ndim != 2 or points.shape[1] != 3:
            raise StructuralError(f'Anchor points must be P x 3, got {points.shape}')
        if not np.all(np.isfinite(points)):
            raise StructuralError('Anchor points must be finite')
        if self.frame is AnchorFrame.HAND_LOCAL and self.hand is None:
            raise FrameTagError('Hand-local anchors must name their hand')

    def __len__(self):
        return len(self.points)


def _require_frame(anchors: AnchorSet, frame: AnchorFrame):
    if anchors.frame is not frame:
        raise FrameTagError(f'Expected {frame.value} anchors, got {anchors.frame.value}')


def anchors_to_hand_frame(anchors_object_local: AnchorSet, object_pose_at_onset: RigidTransform,
                          hand_pose_at_onset: RigidTransform, hand: Optional[int] = None) -> AnchorSet:
    _require_frame(anchors_object_local, AnchorFrame.OBJECT_LOCAL)
    hand = anchors_object_local.hand if hand is None else hand
    relative = compose(invert(hand_pose_at_onset), object_pose_at_onset)
    return AnchorSet(transform_points(relative, anchors_object_local.points), AnchorFrame.HAND_LOCAL,
                     0 if hand is None else hand)


def anchors_to_world(anchors_hand_local: AnchorSet, hand_pose_at_n: RigidTransform) -> AnchorSet:
    _require_frame(anchors_hand_local, AnchorFrame.HAND_LOCAL)
    return AnchorSet(transform_points(hand_pose_at_n, anchors_hand_local.points), AnchorFrame.WORLD,
                     anchors_hand_local.hand)


@dataclass(frozen=True, eq=False)
class KabschResult:
    transform: RigidTransform
    residual: float
    degenerate: bool = False

    @property
    def rotation(self):
        return self.transform.rotation

    @property
    def translation(self):
        return self.transform.translation

    def rms(self, point_count):
        return float(np.sqrt(self.residual / point_count))


def _minimal_rotation(source_direction, target_direction):
    """Smallest-angle rotation taking one unit vector onto another."""
    axis = np.cross(source_direction, target_direction)
    sine = np.linalg.norm(axis)
    cosine = float(np.dot(source_direction, target_direction))
    if sine < COLLINEAR_TOLERANCE:
        if cosine > 0:
            return np.eye(3)
        perpendicular = np.eye(3)[np.argmin(np.abs(source_direction))]
        axis = np.cross(source_direction, perpendicular)
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    axis /= sine
    skew = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    return np.eye(3) + sine * skew + (1.0 - cosine) * skew @ skew


def kabsch_align(source, target) -> KabschResult:
    """Least-squares rigid (R, t) with R * source + t ~ target, det(R) = +1."""
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise StructuralError(f'Point sets must both be P x 3, got {source.shape} and {target.shape}')
    if len(source) < 3:
        raise StructuralError(f'Alignment needs at least 3 points, got {len(source)}')
    if not (np.all(np.isfinite(source)) and np.all(np.isfinite(target))):
        raise StructuralError('Point sets must be finite')

    source_centroid = source.mean(axis=0)
    target_centroid = target.mean(axis=0)
    centred_source = source - source_centroid
    centred_target = target - target_centroid
    source_spread = np.linalg.svd(centred_source, compute_uv=False)
    if source_spread[0] < COINCIDENT_TOLERANCE:
        raise DegenerateConfigurationError('all source points coincide')

    degenerate = source_spread[1] < COLLINEAR_TOLERANCE * source_spread[0]
    if degenerate:
        source_direction = np.linalg.svd(centred_source)[2][0]
        target_direction = np.linalg.svd(centred_target)[2][0]
        if np.dot(centred_source @ source_direction, centred_target @ target_direction) < 0:
            target_direction = -target_direction
        rotation = _minimal_rotation(source_direction, target_direction)
        logger.warning('Collinear anchor points: rotation about the anchor line is unobservable, '
                       'using the rotation closest to identity')
    else:
        u, _, vt = np.linalg.svd(centred_source.T @ centred_target)
        v = vt.T
        sign = np.sign(np.linalg.det(v @ u.T))
        rotation = v @ np.diag([1.0, 1.0, sign if sign != 0 else 1.0]) @ u.T

    translation = target_centroid - rotation @ source_centroid
    residual = float(np.sum((source @ rotation.T + translation - target) ** 2))
    return KabschResult(RigidTransform(rotation, translation), residual, bool(degenerate))


def default_anchor_layout(reference: HOIReference, onset: int,
                          half_width=ANCHOR_HALF_WIDTH) -> List[AnchorSet]:
    """Four hand-local square corners per contacting hand, expressed object-local at the onset frame."""
    if not half_width > 0:
        raise ConfigurationError(f'Anchor half width must be positive, got {half_width}')
    skeleton = reference.skeleton
    flags = reference.contacts.flags
    hands = np.flatnonzero(flags[onset]) if flags[onset].any() else np.flatnonzero(flags.any(axis=0))
    corners = np.array([[x, y, 0.0] for x in (-half_width, half_width) for y in (-half_width, half_width)])
    rotations, positions = clip_forward_kinematics(reference.human)
    object_pose = reference.object.pose(onset)
    anchors = []
    for hand_position in hands:
        hand = skeleton.hand_joints[hand_position]
        hand_pose = RigidTransform(rotations[onset, hand], positions[onset, hand])
        object_local = transform_points(compose(invert(object_pose), hand_pose), corners)
        anchors.append(AnchorSet(object_local, AnchorFrame.OBJECT_LOCAL, int(hand_position)))
    return anchors


def align_frames(human: MotionClip, reference: HOIReference, anchors_object_local: Sequence[AnchorSet],
                 n_onset: int) -> Dict[int, KabschResult]:
    """Kabsch result for every frame after the onset, keyed by frame index."""
    if not anchors_object_local:
        raise StructuralError('No contact anchors to align')
    if len(human) != len(reference):
        raise StructuralError(f'Human motion has {len(human)} frames, reference has {len(reference)}')
    if not 0 <= n_onset < len(reference):
        raise StructuralError(f'Onset {n_onset} outside clip of {len(reference)} frames')
    skeleton = reference.skeleton
    reference_rotations, reference_positions = clip_forward_kinematics(reference.human)
    object_pose = reference.object.pose(n_onset)
    hand_local = []
    for anchors in anchors_object_local:
        hand = skeleton.hand_joints[anchors.hand]
        hand_pose = RigidTransform(reference_rotations[n_onset, hand], reference_positions[n_onset, hand])
        hand_local.append(anchors_to_hand_frame(anchors, object_pose, hand_pose))
    source = np.concatenate([anchors.points for anchors in anchors_object_local])

    rotations, positions = clip_forward_kinematics(human)
    results = {}
    for frame in range(n_onset + 1, len(human)):
        target = np.concatenate([
            anchors_to_world(anchors, RigidTransform(rotations[frame, skeleton.hand_joints[anchors.hand]],
                                                     positions[frame, skeleton.hand_joints[anchors.hand]])).points
            for anchors in hand_local])
        results[frame] = kabsch_align(source, target)
    return results


def recover_object_trajectory(human: MotionClip, reference: HOIReference, anchors_object_local: Sequence[AnchorSet],
                              n_onset: int) -> ObjectTrajectory:
    aligned = align_frames(human, reference, anchors_object_local, n_onset)
    poses = [reference.object.pose(frame) if frame <= n_onset else aligned[frame].transform
             for frame in range(len(human))]
    worst = max((result.residual for result in aligned.values()), default=0.0)
    logger.debug(f'Recovered {len(poses)} object poses, worst anchor residual {worst:.3e}')
    return ObjectTrajectory.from_transforms(poses, reference.fps)


def align_reference(human: MotionClip, reference: HOIReference, n_onset: int,
                    anchors_object_local: Sequence[AnchorSet] = None,
                    anchor_half_width=ANCHOR_HALF_WIDTH) -> HOIReference:
    """Planned human motion paired with its recovered object trajectory and the reference contacts."""
    anchors = anchors_object_local or default_anchor_layout(reference, n_onset, anchor_half_width)
    objects = recover_object_trajectory(human, reference, anchors, n_onset)
    return HOIReference(human, objects, reference.contacts, reference.object_geometry)
