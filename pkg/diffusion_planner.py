"""Interaction-consistent inpainting planner.

Sampling runs over feature arrays (root position, root rotation vector, per-joint axis-angles).
After every denoising step the known parts of the reference are written back: the whole pose
before the interaction onset, and the interaction joints frozen at their onset rotation after it.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter1d

from exceptions import ConfigurationError, IntegrationError, NoInteractionError, StructuralError
from motion_core import ContactMask, HOIReference, MotionClip, PoseFrame, clip_to_features, features_to_clip

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

DEFAULT_ONSET_DELAY_S = 1.5
DEFAULT_STEPS = 50
DEFAULT_SMOOTHING = 2.0
ROOT_FEATURES = 6


def detect_onset(contacts: ContactMask, fps: float, delay_s: float = DEFAULT_ONSET_DELAY_S) -> int:
    if len(contacts) == 0:
        raise NoInteractionError('empty contact mask')
    contact_frames = np.flatnonzero(contacts.any_hand)
    if len(contact_frames) == 0:
        raise NoInteractionError('no hand-object contact anywhere in the clip')
    onset = int(contact_frames[0]) + int(round(delay_s * fps))
    return min(onset, len(contacts) - 1)


def joint_set_by_name(skeleton, name: Optional[str]) -> frozenset:
    """'interaction' (default), 'none', 'all', or a comma-separated list of joint names."""
    if name in (None, '', 'interaction'):
        return frozenset(skeleton.interaction_joints)
    if name == 'none':
        return frozenset()
    if name == 'all':
        return frozenset(range(skeleton.joint_count))
    return frozenset(skeleton.index(joint_name.strip()) for joint_name in name.split(','))


@dataclass(frozen=True, eq=False)
class InpaintingPlan:
    reference: HOIReference
    onset_frame: int
    interaction_joints: frozenset
    onset_delay_s: float = DEFAULT_ONSET_DELAY_S

    def __post_init__(self):
        object.__setattr__(self, 'interaction_joints', frozenset(self.interaction_joints))
        if not 0 <= self.onset_frame <= len(self.reference):
            raise StructuralError(f'Onset frame {self.onset_frame} outside clip of {len(self.reference)} frames')
        if not self.interaction_joints <= set(range(self.reference.skeleton.joint_count)):
            raise StructuralError('Interaction joints must be skeleton joints')

    @classmethod
    def from_reference(cls, reference: HOIReference, delay_s=DEFAULT_ONSET_DELAY_S,
                       interaction_joints: Iterable[int] = None):
        joints = reference.skeleton.interaction_joints if interaction_joints is None else interaction_joints
        return cls(reference, detect_onset(reference.contacts, reference.fps, delay_s), frozenset(joints), delay_s)

    @property
    def joint_mask(self):
        mask = np.zeros(self.reference.skeleton.joint_count, dtype=bool)
        mask[list(self.interaction_joints)] = True
        return mask


def inpaint_features(features, reference_features, onset, joint_mask) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.shape != reference_features.shape:
        raise StructuralError(f'Denoised shape {features.shape} != reference shape {reference_features.shape}')
    result = features.copy()
    result[:onset] = reference_features[:onset]
    if onset < len(features) and joint_mask.any():
        joint_columns = ROOT_FEATURES + 3 * np.repeat(np.flatnonzero(joint_mask), 3) + np.tile([0, 1, 2],
                                                                                                 joint_mask.sum())
        result[onset:, joint_columns] = reference_features[onset, joint_columns]
    return result


def inpaint_pose(denoised: Sequence[PoseFrame], plan: InpaintingPlan) -> MotionClip:
    reference = plan.reference.human
    denoised = list(denoised.frames if isinstance(denoised, MotionClip) else denoised)
    if len(denoised) != len(reference):
        raise StructuralError(f'Denoised motion has {len(denoised)} frames, reference has {len(reference)}')
    onset = plan.onset_frame
    joint_mask = plan.joint_mask
    frames = list(reference.frames[:onset])
    if onset < len(reference):
        frozen = reference.frames[onset].joint_rotations
        for frame in denoised[onset:]:
            rotations = np.where(joint_mask[:, None], frozen, frame.joint_rotations)
            frames.append(PoseFrame(frame.root_position, frame.root_rotation, rotations))
    return MotionClip(reference.skeleton, frames, reference.fps)


class DenoiserInterface(Protocol):
    steps: int

    def step(self, noisy_motion: np.ndarray, condition, k: int) -> np.ndarray:
        ...


class ToyDenoiser:
    """Pulls each frame toward the nearest smoothed library clip on a linear schedule.

    At step k the estimate becomes target + ((k - 1) / k) * (x - target), so the final step (k = 1)
    lands on the target exactly.
    """

    def __init__(self, library_features, smoothing=DEFAULT_SMOOTHING, steps=DEFAULT_STEPS, seed=0,
                 noise_scale=0.0):
        self.library = [gaussian_filter1d(features, smoothing, axis=0, mode='nearest') if smoothing > 0
                        else np.array(features, dtype=float) for features in library_features]
        self.steps = steps
        self.seed = seed
        self.noise_scale = noise_scale

    def targets(self, frame_count):
        fitted = []
        for features in self.library:
            if len(features) >= frame_count:
                fitted.append(features[:frame_count])
            else:
                fitted.append(np.pad(features, ((0, frame_count - len(features)), (0, 0)), mode='edge'))
        return np.stack(fitted)

    def step(self, noisy_motion, condition, k):
        noisy_motion = np.asarray(noisy_motion, dtype=float)
        targets = self.targets(len(noisy_motion))
        if targets.shape[2] != noisy_motion.shape[1]:
            raise IntegrationError(f'Library feature width {targets.shape[2]} != motion width '
                                   f'{noisy_motion.shape[1]}')
        distances = np.linalg.norm(targets - noisy_motion[None], axis=2)
        nearest = targets[np.argmin(distances, axis=0), np.arange(len(noisy_motion))]
        estimate = nearest + ((k - 1) / k) * (noisy_motion - nearest)
        if self.noise_scale > 0 and k > 1:
            rng = np.random.default_rng([self.seed, k])
            estimate = estimate + self.noise_scale * (k - 1) / self.steps * rng.standard_normal(estimate.shape)
        return estimate


def make_toy_denoiser(reference_library: Sequence[MotionClip], smoothing=DEFAULT_SMOOTHING, steps=DEFAULT_STEPS,
                      seed=0, noise_scale=0.0) -> ToyDenoiser:
    if not reference_library:
        raise ConfigurationError('empty denoiser library')
    widths = {clip.skeleton.joint_count for clip in reference_library}
    if len(widths) != 1:
        raise ConfigurationError(f'Library clips use different skeletons: joint counts {sorted(widths)}')
    if steps < 1:
        raise ConfigurationError(f'Denoiser needs at least one step, got {steps}')
    return ToyDenoiser([clip_to_features(clip) for clip in reference_library], smoothing, steps, seed, noise_scale)


def sample_with_inpainting(denoiser: DenoiserInterface, plan: InpaintingPlan, condition=None, seed=0) -> MotionClip:
    if denoiser.steps < 1:
        raise ConfigurationError(f'Denoiser schedule length must be at least 1, got {denoiser.steps}')
    reference = plan.reference.human
    reference_features = clip_to_features(reference)
    joint_mask = plan.joint_mask
    rng = np.random.default_rng(seed)
    motion = rng.standard_normal(reference_features.shape)
    for k in range(denoiser.steps, 0, -1):
        denoised = np.asarray(denoiser.step(motion, condition, k))
        if denoised.shape != motion.shape:
            raise IntegrationError(f'Denoiser returned shape {denoised.shape} at step {k}, expected {motion.shape}')
        motion = inpaint_features(denoised, reference_features, plan.onset_frame, joint_mask)
        logger.debug(f'Denoising step {k} done')
    return inpaint_pose(features_to_clip(reference.skeleton, motion, reference.fps).frames, plan)


def plan_motion(reference: HOIReference, library: Sequence[MotionClip] = None, delay_s=DEFAULT_ONSET_DELAY_S,
                steps=DEFAULT_STEPS, seed=0, interaction_joints=None, smoothing=DEFAULT_SMOOTHING,
                condition=None) -> Tuple[MotionClip, InpaintingPlan]:
    plan = InpaintingPlan.from_reference(reference, delay_s, interaction_joints)
    denoiser = make_toy_denoiser(library or [reference.human], smoothing, steps, seed)
    logger.info(f'Planning {len(reference)} frames, onset {plan.onset_frame}, {steps} denoising steps')
    return sample_with_inpainting(denoiser, plan, condition, seed), plan
