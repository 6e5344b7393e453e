import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from exceptions import ConfigurationError
from validators import Invalid, in_set, non_negative, ordered_range, positive, set_equal

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

DEFAULT_CONFIG_PATH = Path(__file__).parent.joinpath('harness_config.json')
AXES = ('x', 'y', 'z')


@dataclass(frozen=True)
class SimConfig:
    sim_dt: float = 1 / 60
    control_dt: float = 1 / 30
    episode_length: int = 300
    ground_friction: float = 1.0
    ground_restitution: float = 0.0
    object_density: float = 200.0
    gravity: float = 9.81

    def __post_init__(self):
        if not self.sim_dt > 0 or not self.control_dt > 0:
            raise ConfigurationError('sim_dt and control_dt must be positive')
        ratio = self.control_dt / self.sim_dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigurationError(f'control_dt {self.control_dt} is not an integer multiple of '
                                     f'sim_dt {self.sim_dt}')
        if self.episode_length <= 0:
            raise ConfigurationError(f'episode_length must be positive, got {self.episode_length}')
        if not 0.0 <= self.ground_restitution <= 1.0:
            raise ConfigurationError('ground_restitution must lie in [0, 1]')

    @property
    def substeps(self):
        return int(round(self.control_dt / self.sim_dt))


@dataclass(frozen=True)
class BodyModel:
    mass: float = 60.0
    com_height: float = 0.9
    joint_inertia: float = 0.2
    grip_inertia: float = 0.02
    initial_lean: float = 0.03
    foot_stiffness: float = 5e4
    foot_damping: float = 1500.0
    foot_friction_damping: float = 1500.0
    object_stiffness: float = 2000.0
    object_damping: float = 30.0
    object_friction_damping: float = 30.0
    torque_limit_body: float = 200.0
    torque_limit_hand: float = 20.0
    attach_radius: float = 0.08
    grip_threshold: float = 0.5
    fall_height: float = 0.3
    drop_distance: float = 0.3


@dataclass(frozen=True)
class PDGains:
    per_joint: Dict[str, Tuple[float, float]]
    default: Tuple[float, float] = (150.0, 8.0)

    def __post_init__(self):
        for name, (kp, kd) in list(self.per_joint.items()) + [('default', self.default)]:
            if kp < 0 or kd < 0:
                raise ConfigurationError(f'Gains for "{name}" must be non-negative, got kp={kp}, kd={kd}')

    def gain(self, joint_name):
        return self.per_joint.get(joint_name, self.default)

    def dof_arrays(self, skeleton):
        """kp and kd per action DoF: three per actuated body joint, one grip DoF per hand."""
        kp, kd = [], []
        for index in skeleton.actuated_body_joints:
            joint_kp, joint_kd = self.gain(skeleton.joints[index].name)
            kp.extend([joint_kp] * 3)
            kd.extend([joint_kd] * 3)
        for index in skeleton.hand_joints:
            joint_kp, joint_kd = self.gain(skeleton.joints[index].name)
            kp.append(joint_kp)
            kd.append(joint_kd)
        return np.array(kp), np.array(kd)


@dataclass(frozen=True)
class RangeOfMotion:
    rows: Dict[str, Dict[str, Tuple[float, float]]]
    joint_rows: Dict[str, str] = field(default_factory=dict)
    default_row: str = 'Body'
    grip_range: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.default_row not in self.rows:
            raise ConfigurationError(f'Default range-of-motion row "{self.default_row}" is not defined')
        for row_name, axes in self.rows.items():
            for axis, (low, high) in axes.items():
                if low > high:
                    raise ConfigurationError(f'Range of motion {row_name}.{axis} has min {low} > max {high}')
        for joint_name, row_name in self.joint_rows.items():
            if row_name not in self.rows:
                raise ConfigurationError(f'Joint "{joint_name}" maps to unknown row "{row_name}"')

    def limits_degrees(self, joint_name):
        row = self.rows[self.joint_rows.get(joint_name, self.default_row)]
        return [row[axis] for axis in AXES]

    def dof_bounds(self, skeleton):
        """Lower and upper PD-target bounds per action DoF; body DoF in radians, grips unitless."""
        lower, upper = [], []
        for index in skeleton.actuated_body_joints:
            for low, high in self.limits_degrees(skeleton.joints[index].name):
                lower.append(math.radians(low))
                upper.append(math.radians(high))
        for _ in skeleton.hand_joints:
            lower.append(self.grip_range[0])
            upper.append(self.grip_range[1])
        return np.array(lower), np.array(upper)


@dataclass(frozen=True)
class RewardWeights:
    joint_weight: float = 100.0
    object_weight: float = 50.0
    object_rotation_weight: float = 0.1
    contact_bonus: float = 0.5

    @property
    def maximum(self):
        return 2.0 + self.contact_bonus


@dataclass(frozen=True)
class HarnessConfig:
    sim: SimConfig
    body: BodyModel
    gains: PDGains
    rom: RangeOfMotion
    reward: RewardWeights

    def with_sim(self, **changes):
        return replace(self, sim=replace(self.sim, **changes))

    def with_body(self, **changes):
        return replace(self, body=replace(self.body, **changes))

    def to_document(self):
        return {
            'version': 1,
            'sim': asdict(self.sim),
            'body': asdict(self.body),
            'gains': {'default': {'kp': self.gains.default[0], 'kd': self.gains.default[1]},
                      **{name: {'kp': kp, 'kd': kd} for name, (kp, kd) in self.gains.per_joint.items()}},
            'range_of_motion': {
                'rows': {name: {axis: list(bounds) for axis, bounds in axes.items()}
                         for name, axes in self.rom.rows.items()},
                'joint_rows': dict(self.rom.joint_rows),
                'default_row': self.rom.default_row,
                'grip_range': list(self.rom.grip_range),
            },
            'reward': asdict(self.reward),
        }

    def digest(self):
        encoded = json.dumps(self.to_document(), sort_keys=True).encode('utf-8')
        return hashlib.sha256(encoded).hexdigest()


def _check_section(section_name, values, validators_by_field):
    for field_name, validators in validators_by_field.items():
        if field_name not in values:
            continue
        for validator in validators:
            try:
                validator(values[field_name])
            except Invalid as invalid:
                raise ConfigurationError(f'{section_name}.{field_name}: {invalid}') from invalid


def harness_config_from_document(document) -> HarnessConfig:
    try:
        set_equal({'version', 'sim', 'body', 'gains', 'range_of_motion', 'reward'})(document.keys())
        in_set({1})(document['version'])
    except Invalid as invalid:
        raise ConfigurationError(f'Harness config: {invalid}') from invalid
    _check_section('sim', document['sim'], {name: [positive()] for name in
                                            ('sim_dt', 'control_dt', 'episode_length', 'object_density')})
    _check_section('sim', document['sim'], {'ground_friction': [non_negative()],
                                            'ground_restitution': [non_negative()],
                                            'gravity': [non_negative()]})
    _check_section('body', document['body'], {name: [non_negative()] for name in document['body']})
    for row_name, axes in document['range_of_motion']['rows'].items():
        _check_section(f'range_of_motion.{row_name}', axes, {axis: [ordered_range()] for axis in AXES})
    try:
        sim = SimConfig(**document['sim'])
        body = BodyModel(**document['body'])
    except TypeError as err:
        raise ConfigurationError(f'Harness config: {err}') from err
    gains_document = dict(document['gains'])
    default = gains_document.pop('default', {'kp': 150.0, 'kd': 8.0})
    gains = PDGains({name: (float(gain['kp']), float(gain['kd'])) for name, gain in gains_document.items()},
                    (float(default['kp']), float(default['kd'])))
    rom_document = document['range_of_motion']
    rom = RangeOfMotion(rows={name: {axis: tuple(bounds) for axis, bounds in axes.items()}
                              for name, axes in rom_document['rows'].items()},
                        joint_rows=dict(rom_document.get('joint_rows', {})),
                        default_row=rom_document.get('default_row', 'Body'),
                        grip_range=tuple(rom_document.get('grip_range', (0.0, 1.0))))
    return HarnessConfig(sim, body, gains, rom, RewardWeights(**document['reward']))


def load_harness_config(path=None) -> HarnessConfig:
    path = Path(path) if path else DEFAULT_CONFIG_PATH
    with open(path, encoding='utf-8') as config_file:
        document = json.load(config_file)
    config = harness_config_from_document(document)
    logger.debug(f'Loaded harness config {path} ({config.digest()[:12]})')
    return config
