"""Rigid transforms, quaternion conversions and point mapping.

Quaternions are stored scalar-first (w, x, y, z) everywhere in this project; scipy works
scalar-last, so every conversion goes through the helpers below.
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from exceptions import TransformValidationError

ORTHONORMAL_TOLERANCE = 1e-6


def wxyz_to_xyzw(quaternion):
    quaternion = np.asarray(quaternion, dtype=float)
    return np.concatenate([quaternion[..., 1:], quaternion[..., :1]], axis=-1)


def xyzw_to_wxyz(quaternion):
    quaternion = np.asarray(quaternion, dtype=float)
    return np.concatenate([quaternion[..., 3:], quaternion[..., :3]], axis=-1)


def quaternion_to_matrix(quaternion):
    return Rotation.from_quat(wxyz_to_xyzw(quaternion)).as_matrix()


def matrix_to_quaternion(matrix):
    return xyzw_to_wxyz(Rotation.from_matrix(np.array(matrix, dtype=float)).as_quat())


def axis_angle_to_matrix(axis_angle):
    return Rotation.from_rotvec(np.array(axis_angle, dtype=float)).as_matrix()


def matrix_to_axis_angle(matrix):
    return Rotation.from_matrix(np.array(matrix, dtype=float)).as_rotvec()


def quaternion_to_axis_angle(quaternion):
    return Rotation.from_quat(wxyz_to_xyzw(quaternion)).as_rotvec()


def axis_angle_to_quaternion(axis_angle):
    return xyzw_to_wxyz(Rotation.from_rotvec(np.array(axis_angle, dtype=float)).as_quat())


def geodesic_angle(rotation_a, rotation_b):
    relative = np.asarray(rotation_a).T @ np.asarray(rotation_b)
    return float(np.arccos(np.clip((np.trace(relative) - 1.0) / 2.0, -1.0, 1.0)))


def check_rotation(rotation, tolerance=ORTHONORMAL_TOLERANCE):
    rotation = np.asarray(rotation, dtype=float)
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        raise TransformValidationError(f'Rotation must be a finite 3x3 matrix, got shape {rotation.shape}')
    if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > tolerance:
        raise TransformValidationError('Rotation is not orthonormal')
    if abs(np.linalg.det(rotation) - 1.0) > tolerance:
        raise TransformValidationError(f'Rotation determinant {np.linalg.det(rotation)} is not +1')


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, quaternion, translation):
        return cls(quaternion_to_matrix(quaternion), np.asarray(translation, dtype=float))

    @property
    def quaternion(self):
        return matrix_to_quaternion(self.rotation)

    def as_matrix(self):
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def validate(self):
        check_rotation(self.rotation)
        if np.shape(self.translation) != (3,) or not np.all(np.isfinite(self.translation)):
            raise TransformValidationError('Translation must be a finite 3-vector')
        return self


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    a.validate()
    b.validate()
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a: RigidTransform) -> RigidTransform:
    a.validate()
    rotation_inverse = a.rotation.T
    return RigidTransform(rotation_inverse, -rotation_inverse @ a.translation)


def transform_points(a: RigidTransform, points) -> np.ndarray:
    a.validate()
    points = np.asarray(points, dtype=float)
    return points @ a.rotation.T + a.translation
