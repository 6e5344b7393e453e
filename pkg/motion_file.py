"""Motion-file reading and writing.

A motion file is one JSON document per HOIReference (format version 1). JSON writes floats with
their shortest round-trip representation, so save followed by load is bit-exact.
"""
import json
import logging
from pathlib import Path

import numpy as np

from exceptions import ClipParseError, StructuralError
from motion_core import ContactMask, HOIReference, Joint, MotionClip, ObjectTrajectory, PoseFrame, SkeletonSpec
from validate_clip import ClipValidator

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

FORMAT_VERSION = 1
RENORMALISE_TOLERANCE = 1e-9


def _unit(quaternion):
    quaternion = np.asarray(quaternion, dtype=float)
    norm = np.linalg.norm(quaternion)
    return quaternion / norm if abs(norm - 1.0) > RENORMALISE_TOLERANCE else quaternion


def skeleton_to_document(skeleton: SkeletonSpec):
    return {
        'joints': [{'name': joint.name, 'parent': joint.parent, 'offset': [float(value) for value in joint.local_offset]}
                   for joint in skeleton.joints],
        'body_joint_count': skeleton.body_joint_count,
        'hand_joint_count': skeleton.hand_joint_count,
        'interaction_joints': sorted(skeleton.interaction_joints),
        'foot_joints': list(skeleton.foot_joints),
        'pelvis_joint': skeleton.pelvis_joint,
    }


def skeleton_from_document(document) -> SkeletonSpec:
    return SkeletonSpec(
        joints=tuple(Joint(joint['name'], joint['parent'], tuple(float(value) for value in joint['offset']))
                     for joint in document['joints']),
        body_joint_count=document['body_joint_count'],
        hand_joint_count=document['hand_joint_count'],
        interaction_joints=frozenset(document['interaction_joints']),
        foot_joints=tuple(document['foot_joints']),
        pelvis_joint=document['pelvis_joint'])


def reference_to_document(reference: HOIReference):
    human = reference.human
    return {
        'version': FORMAT_VERSION,
        'fps': float(human.fps),
        'skeleton': skeleton_to_document(human.skeleton),
        'frames': [{'root_pos': frame.root_position.tolist(),
                    'root_quat': frame.root_rotation.tolist(),
                    'joint_aa': frame.joint_rotations.tolist()} for frame in human.frames],
        'object': [{'pos': position.tolist(), 'quat': quaternion.tolist()}
                   for position, quaternion in zip(reference.object.positions, reference.object.quaternions)],
        'contacts': [[bool(flag) for flag in flags] for flags in reference.contacts.flags],
        'object_vertices': reference.object_geometry.tolist(),
    }


def reference_from_document(document) -> HOIReference:
    failures = ClipValidator().find_document_validation_failures(document)
    if failures:
        first = failures[0]
        raise ClipParseError(f'{first.field}: {first.description}' if first.field else first.description,
                             frame_index=first.frame_index)
    try:
        skeleton = skeleton_from_document(document['skeleton'])
        fps = float(document['fps'])
        frames = [PoseFrame(frame['root_pos'], _unit(frame['root_quat']), frame['joint_aa'])
                  for frame in document['frames']]
        human = MotionClip(skeleton, frames, fps)
        object_trajectory = ObjectTrajectory(np.array([pose['pos'] for pose in document['object']], dtype=float),
                                             np.array([_unit(pose['quat']) for pose in document['object']]),
                                             fps)
        return HOIReference(human, object_trajectory, ContactMask(np.array(document['contacts'], dtype=bool)),
                            np.array(document['object_vertices'], dtype=float))
    except StructuralError as err:
        raise ClipParseError(str(err)) from err


def load_clip(path) -> HOIReference:
    try:
        with open(path, encoding='utf-8') as clip_file:
            document = json.load(clip_file)
    except json.JSONDecodeError as err:
        raise ClipParseError(f'not a JSON document: {err}') from err
    reference = reference_from_document(document)
    logger.debug(f'Loaded {len(reference)} frames from {path}')
    return reference


def save_clip(reference: HOIReference, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as clip_file:
        json.dump(reference_to_document(reference), clip_file)
    logger.debug(f'Saved {len(reference)} frames to {path}')
    return path
