"""Evaluation metrics: interaction quality, physical plausibility, imitation error and style success."""
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence

import numpy as np

from exceptions import ConfigurationError, StructuralError, UndefinedMetricError, UnknownStyleError
from motion_core import ContactMask, HOIReference, clip_forward_kinematics
from rigid_transforms import RigidTransform, compose, invert, transform_points

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

FOOT_CONTACT_HEIGHT = 0.03
FOOT_CONTACT_SPEED = 0.1
HAND_CONTACT_RADIUS = 0.08

RUN_FORWARD = 'RunForward'
JUMP_FORWARD = 'JumpForward'
HIGH_KICK = 'HighKick'
DANCE = 'Dance'
STYLES = (RUN_FORWARD, JUMP_FORWARD, HIGH_KICK, DANCE)


def third_derivative(values, dt) -> np.ndarray:
    """Third time derivative along axis 0: central stencil inside, one-sided at both ends.

    Every stencil is exact for cubics.
    """
    values = np.asarray(values, dtype=float)
    if len(values) < 4:
        raise UndefinedMetricError(f'Third derivative needs at least 4 frames, got {len(values)}')
    one_sided = (values[3:] - 3.0 * values[2:-1] + 3.0 * values[1:-2] - values[:-3]) / dt ** 3
    result = np.empty_like(values)
    if len(values) == 4:
        result[:] = one_sided[0]
        return result
    result[:2] = one_sided[:2]
    result[-2:] = one_sided[-2:]
    result[2:-2] = (values[4:] - 2.0 * values[3:-1] + 2.0 * values[1:-3] - values[:-4]) / (2.0 * dt ** 3)
    return result


def _window_start(onset, length):
    if onset is None:
        return 0
    if not 0 <= onset <= length:
        raise StructuralError(f'Onset {onset} outside clip of {length} frames')
    return onset


def contact_percentage(traj: HOIReference, contacts: ContactMask = None, onset: Optional[int] = 0) -> float:
    flags = (contacts if contacts is not None else traj.contacts).any_hand[_window_start(onset, len(traj)):]
    if len(flags) == 0:
        raise UndefinedMetricError('contact percentage over an empty window')
    return float(np.mean(flags))


def object_vertices_in_hand_frames(traj: HOIReference, hand_position: int, frames) -> np.ndarray:
    rotations, positions = clip_forward_kinematics(traj.human)
    hand = traj.skeleton.hand_joints[hand_position]
    local = [transform_points(compose(invert(RigidTransform(rotations[frame, hand], positions[frame, hand])),
                                      traj.object.pose(frame)), traj.object_geometry)
             for frame in frames]
    return np.array(local)


def contact_consistency(traj: HOIReference, contacts: ContactMask = None) -> float:
    """Mean per-vertex per-axis standard deviation of object vertices in the contacting hand's frame."""
    flags = (contacts if contacts is not None else traj.contacts).flags
    spreads = []
    for hand_position in range(flags.shape[1]):
        frames = np.flatnonzero(flags[:, hand_position])
        if len(frames) < 2:
            continue
        local = object_vertices_in_hand_frames(traj, hand_position, frames)
        spreads.append(float(np.mean(np.std(local, axis=0))))
    if not spreads:
        raise UndefinedMetricError('contact consistency needs a hand in contact on at least 2 frames')
    return float(np.mean(spreads))


def detect_foot_contacts(traj: HOIReference, height=FOOT_CONTACT_HEIGHT, speed=FOOT_CONTACT_SPEED) -> np.ndarray:
    """N x feet flags: foot joint below ``height`` and (after frame 0) vertical speed below ``speed``."""
    _, positions = clip_forward_kinematics(traj.human)
    feet = positions[:, list(traj.skeleton.foot_joints)]
    contacts = feet[:, :, 2] < height
    if len(feet) > 1:
        vertical_speed = np.abs(np.diff(feet[:, :, 2], axis=0)) * traj.fps
        contacts[1:] &= vertical_speed < speed
    return contacts


def detect_hand_contacts(traj: HOIReference, grasp_points, radius=HAND_CONTACT_RADIUS) -> ContactMask:
    """A hand touches the object while it stays within ``radius`` of its object-local grasp point."""
    grasp_points = np.asarray(grasp_points, dtype=float)
    _, positions = clip_forward_kinematics(traj.human)
    hands = list(traj.skeleton.hand_joints)
    flags = np.zeros((len(traj), len(hands)), dtype=bool)
    for hand_position, hand in enumerate(hands):
        if not np.all(np.isfinite(grasp_points[hand_position])):
            continue
        for frame in range(len(traj)):
            grasp_world = transform_points(traj.object.pose(frame), grasp_points[hand_position])
            flags[frame, hand_position] = np.linalg.norm(positions[frame, hand] - grasp_world) <= radius
    return ContactMask(flags)


def interaction_duration(contacts: ContactMask, fps) -> float:
    """Longest uninterrupted run of hand-object contact, in seconds."""
    longest = current = 0
    for in_contact in contacts.any_hand:
        current = current + 1 if in_contact else 0
        longest = max(longest, current)
    return longest / fps


@dataclass(frozen=True)
class PlausibilityReport:
    pene_obj_cm: float
    skate_mm: float
    float_mm: float
    jitter_pos: float


def physical_plausibility(traj: HOIReference) -> PlausibilityReport:
    if len(traj) < 4:
        raise UndefinedMetricError(f'Plausibility metrics need at least 4 frames, got {len(traj)}')
    skeleton = traj.skeleton
    _, positions = clip_forward_kinematics(traj.human)
    body_positions = positions[:, :skeleton.body_joint_count]

    lowest_vertex = np.array([transform_points(traj.object.pose(frame), traj.object_geometry)[:, 2].min()
                              for frame in range(len(traj))])
    penetration = float(np.mean(np.maximum(0.0, -lowest_vertex))) * 100.0

    foot_contacts = detect_foot_contacts(traj)
    feet = positions[:, list(skeleton.foot_joints)]
    slide = np.linalg.norm(np.diff(feet[:, :, :2], axis=0), axis=2)
    sliding_contacts = foot_contacts[1:]
    skate = float(slide[sliding_contacts].mean()) * 1000.0 if sliding_contacts.any() else 0.0

    floating = float(np.mean(np.maximum(0.0, body_positions[:, :, 2].min(axis=1)))) * 1000.0
    jitter = float(np.mean(np.linalg.norm(third_derivative(body_positions, 1.0 / traj.fps), axis=2)))
    return PlausibilityReport(penetration, skate, floating, jitter)


def jitter_dof(traj: HOIReference) -> float:
    skeleton = traj.skeleton
    angles = traj.human.joint_rotations[:, list(skeleton.actuated_body_joints)].reshape(len(traj), -1)
    return float(np.mean(np.abs(third_derivative(angles, 1.0 / traj.fps))))


def e_hoi(executed: HOIReference, reference: HOIReference) -> float:
    """Mean joint-plus-object position error after aligning the executed pelvis to the reference at frame 0."""
    if len(executed) != len(reference):
        raise StructuralError(f'Executed has {len(executed)} frames, reference has {len(reference)}')
    skeleton = reference.skeleton
    alignment = compose(
        RigidTransform.from_quaternion(reference.human.root_quaternions[0], reference.human.root_positions[0]),
        invert(RigidTransform.from_quaternion(executed.human.root_quaternions[0],
                                              executed.human.root_positions[0])))
    _, executed_positions = clip_forward_kinematics(executed.human)
    _, reference_positions = clip_forward_kinematics(reference.human)
    joints = [joint for joint in range(skeleton.body_joint_count) if joint != skeleton.pelvis_joint]

    aligned_joints = transform_points(alignment, executed_positions[:, joints].reshape(-1, 3)).reshape(
        len(executed), len(joints), 3)
    aligned_object = transform_points(alignment, executed.object.positions)
    joint_errors = np.linalg.norm(aligned_joints - reference_positions[:, joints], axis=2)
    object_errors = np.linalg.norm(aligned_object - reference.object.positions, axis=1)
    return float(np.mean(np.column_stack([joint_errors, object_errors])))


@dataclass(frozen=True)
class SuccessSpec:
    style: str = JUMP_FORWARD
    run_speed_margin: float = 0.5
    jump_gain_ratio: float = 0.5
    max_false_foot_contacts: int = 10
    kick_margin: float = 0.05
    dance_min_pelvis_height: float = 0.3
    object_path_tolerance: float = 0.3

    def __post_init__(self):
        if self.style not in STYLES:
            raise UnknownStyleError(f'Unknown motion style "{self.style}", expected one of {list(STYLES)}')
        thresholds = {name: value for name, value in asdict(self).items() if name != 'style'}
        for name, value in thresholds.items():
            if value <= 0:
                raise ConfigurationError(f'Success threshold {name} must be positive, got {value}')


@dataclass(frozen=True)
class Criterion:
    value: float
    threshold: float
    passed: bool


@dataclass(frozen=True)
class SuccessResult:
    success: bool
    diagnostics: Dict[str, Criterion]

    @property
    def failed(self):
        return [name for name, criterion in self.diagnostics.items() if not criterion.passed]


def _horizontal_speed(traj: HOIReference):
    if len(traj) < 2:
        return np.zeros(1)
    return np.linalg.norm(np.diff(traj.human.root_positions[:, :2], axis=0), axis=1) * traj.fps


def success(traj: HOIReference, reference: HOIReference, spec: SuccessSpec,
            termination: Optional[str] = None) -> SuccessResult:
    if spec.style not in STYLES:
        raise UnknownStyleError(f'Unknown motion style "{spec.style}"')
    compared = reference.truncated(len(traj)) if len(reference) > len(traj) else reference
    if len(compared) != len(traj):
        raise StructuralError(f'Executed has {len(traj)} frames, reference has {len(reference)}')
    diagnostics = {}

    path_error = float(np.max(np.linalg.norm(traj.object.positions - compared.object.positions, axis=1)))
    diagnostics['object_path'] = Criterion(path_error, spec.object_path_tolerance,
                                           path_error <= spec.object_path_tolerance)
    if termination is not None:
        diagnostics['completed'] = Criterion(float(termination == 'completed'), 1.0, termination == 'completed')

    pelvis = traj.human.root_positions
    if spec.style == RUN_FORWARD:
        required = float(_horizontal_speed(reference).max()) - spec.run_speed_margin
        achieved = float(_horizontal_speed(traj).max())
        diagnostics['pelvis_speed'] = Criterion(achieved, required, achieved >= required)
    elif spec.style == JUMP_FORWARD:
        standing = reference.skeleton.t_pose_pelvis_height()
        reference_gain = float(reference.human.root_positions[:, 2].max()) - standing
        gain = (float(pelvis[:, 2].max()) - standing) / reference_gain if reference_gain > 0 else 0.0
        diagnostics['height_gain'] = Criterion(gain, spec.jump_gain_ratio, gain >= spec.jump_gain_ratio)
        rollout_feet = detect_foot_contacts(traj).any(axis=1)
        reference_feet = detect_foot_contacts(compared).any(axis=1)
        false_contacts = int(np.sum(rollout_feet & ~reference_feet))
        diagnostics['false_foot_contacts'] = Criterion(false_contacts, spec.max_false_foot_contacts,
                                                       false_contacts <= spec.max_false_foot_contacts)
    elif spec.style == HIGH_KICK:
        _, positions = clip_forward_kinematics(traj.human)
        _, reference_positions = clip_forward_kinematics(reference.human)
        feet = list(traj.skeleton.foot_joints)
        required = float(reference_positions[:, feet, 2].max()) - spec.kick_margin
        achieved = float(positions[:, feet, 2].max())
        diagnostics['foot_height'] = Criterion(achieved, required, achieved >= required)
    else:
        lowest = float(pelvis[:, 2].min())
        diagnostics['pelvis_floor'] = Criterion(lowest, spec.dance_min_pelvis_height,
                                                lowest >= spec.dance_min_pelvis_height)
    return SuccessResult(all(criterion.passed for criterion in diagnostics.values()), diagnostics)


@dataclass(frozen=True)
class MetricsReport:
    c_pct: float
    c_cons: float
    pene_obj_cm: float
    skate_mm: float
    float_mm: float
    jitter_pos: float
    jitter_dof: float
    e_hoi: float
    duration_s: float
    success: bool
    diagnostics: Dict[str, Criterion] = field(default_factory=dict, compare=False)

    @classmethod
    def field_names(cls):
        return [report_field.name for report_field in fields(cls) if report_field.name != 'diagnostics']

    def to_row(self) -> Dict[str, str]:
        row = {name: f'{getattr(self, name):.6f}' for name in self.field_names() if name != 'success'}
        row['success'] = str(int(self.success))
        row['failed'] = ';'.join(name for name, criterion in self.diagnostics.items() if not criterion.passed)
        return row


REPORT_FIELDS = MetricsReport.field_names() + ['failed']


def _or_nan(metric, *args, **kwargs):
    try:
        return metric(*args, **kwargs)
    except UndefinedMetricError as err:
        logger.debug(f'{metric.__name__} undefined: {err}')
        return float('nan')


def evaluate_episode(executed: HOIReference, reference: HOIReference, spec: SuccessSpec,
                     termination: Optional[str] = None, onset: int = 0) -> MetricsReport:
    """All metrics for one executed episode; metrics undefined on this episode are reported as NaN."""
    compared = reference.truncated(len(executed)) if len(reference) > len(executed) else reference
    plausibility = _or_nan(physical_plausibility, executed)
    if not isinstance(plausibility, PlausibilityReport):
        plausibility = PlausibilityReport(*[float('nan')] * 4)
    outcome = success(executed, reference, spec, termination)
    return MetricsReport(c_pct=_or_nan(contact_percentage, executed, onset=min(onset, len(executed))),
                         c_cons=_or_nan(contact_consistency, executed),
                         pene_obj_cm=plausibility.pene_obj_cm, skate_mm=plausibility.skate_mm,
                         float_mm=plausibility.float_mm, jitter_pos=plausibility.jitter_pos,
                         jitter_dof=_or_nan(jitter_dof, executed), e_hoi=e_hoi(executed, compared),
                         duration_s=interaction_duration(executed.contacts, executed.fps),
                         success=outcome.success, diagnostics=outcome.diagnostics)


SUMMARY_FIELDS = ['episodes', 'SR', 'D', 'E_HOI', 'Jitter_DoF']


def aggregate(reports: Sequence[MetricsReport]) -> Dict[str, float]:
    if not reports:
        raise UndefinedMetricError('no reports')
    return {'episodes': len(reports),
            'SR': float(np.mean([report.success for report in reports])),
            'D': float(np.mean([report.duration_s for report in reports])),
            'E_HOI': float(np.mean([report.e_hoi for report in reports])),
            'Jitter_DoF': float(np.mean([report.jitter_dof for report in reports]))}


def format_summary(summary: Dict[str, float]) -> Dict[str, str]:
    return {name: (str(value) if name == 'episodes' else f'{value:.6f}') for name, value in summary.items()}


def summary_table(rows: List[Dict[str, str]], columns: Sequence[str]) -> str:
    """Fixed-width human-readable table."""
    widths = {column: max(len(column), *(len(str(row.get(column, ''))) for row in rows)) for column in columns}
    lines = ['  '.join(column.ljust(widths[column]) for column in columns)]
    lines.extend('  '.join(str(row.get(column, '')).ljust(widths[column]) for column in columns) for row in rows)
    return '\n'.join(lines)
