import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from exceptions import ConfigurationError
from motion_core import ContactMask, HOIReference, MotionClip, ObjectTrajectory, clip_forward_kinematics, \
    default_skeleton
from motion_file import save_clip

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())


class DemoClipGenerator:
    DEMO_PACK = ('carry-stand', 'carry-jump', 'one-hand-carry')
    HELPER_CLIPS = ('static-stand',)
    FPS = 30.0
    FRAME_COUNT = 120
    GRAVITY = 9.81

    HIP_DROP = 0.05
    LEG_LENGTH = 0.85
    STAND_BEND = 0.1
    CROUCH_BEND = 0.9
    TAKEOFF_BEND = 0.35
    LANDING_BEND = 0.3
    ABSORB_BEND = 0.5
    ARM_PITCH = 0.6

    CARRY_BOX = (0.3, 0.3, 0.25)
    TALL_BOX = (0.1, 0.1, 0.4)

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self.skeleton = default_skeleton()
        self.names = self.skeleton.joint_names

    @staticmethod
    def box_vertices(size):
        half = np.asarray(size, dtype=float) / 2
        return np.array([[sx * half[0], sy * half[1], sz * half[2]]
                         for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])

    def pelvis_height(self, bend):
        return self.HIP_DROP + self.LEG_LENGTH * np.cos(bend)

    def get_random_push_speed(self):
        return self.rng.uniform(1.9, 2.1)

    def get_random_stand_bend(self):
        return self.rng.uniform(0.08, 0.12)

    def _set(self, rotations, joint_name, axis_angle):
        rotations[self.names.index(joint_name)] = axis_angle

    def leg_pose(self, rotations, bend):
        for side in ('left', 'right'):
            self._set(rotations, f'{side}_hip', (0.0, -bend, 0.0))
            self._set(rotations, f'{side}_knee', (0.0, 2.0 * bend, 0.0))
            self._set(rotations, f'{side}_foot', (0.0, -bend, 0.0))

    def carry_arms(self, rotations):
        pitch = Rotation.from_rotvec((0.0, self.ARM_PITCH, 0.0))
        self._set(rotations, 'left_shoulder', (pitch * Rotation.from_rotvec((0.0, 0.0, -np.pi / 2))).as_rotvec())
        self._set(rotations, 'right_shoulder', (pitch * Rotation.from_rotvec((0.0, 0.0, np.pi / 2))).as_rotvec())

    def hanging_arms(self, rotations):
        self._set(rotations, 'left_shoulder', (-np.pi / 2, 0.0, 0.0))
        self._set(rotations, 'right_shoulder', (np.pi / 2, 0.0, 0.0))

    def _poses(self, bends, pelvis_heights, arms):
        frame_count = len(bends)
        joint_rotations = np.zeros((frame_count, self.skeleton.joint_count, 3))
        for frame, bend in enumerate(bends):
            self.leg_pose(joint_rotations[frame], bend)
            arms(joint_rotations[frame])
        root_positions = np.column_stack([np.zeros(frame_count), np.zeros(frame_count), pelvis_heights])
        root_quaternions = np.tile([1.0, 0.0, 0.0, 0.0], (frame_count, 1))
        return MotionClip.from_arrays(self.skeleton, root_positions, root_quaternions, joint_rotations, self.FPS)

    def _held_object(self, human, hand_names, offset=(0.0, 0.0, 0.0)):
        _, positions = clip_forward_kinematics(human)
        hands = [self.names.index(name) for name in hand_names]
        centres = positions[:, hands].mean(axis=1) + np.asarray(offset)
        return ObjectTrajectory(centres, np.tile([1.0, 0.0, 0.0, 0.0], (len(human), 1)), self.FPS)

    def carry_stand(self):
        bends = np.full(self.FRAME_COUNT, self.get_random_stand_bend())
        human = self._poses(bends, self.pelvis_height(bends), self.carry_arms)
        contacts = np.ones((self.FRAME_COUNT, 2), dtype=bool)
        return HOIReference(human, self._held_object(human, ('left_hand', 'right_hand')), ContactMask(contacts),
                            self.box_vertices(self.CARRY_BOX))

    def jump_profile(self, push_speed):
        """Leg bend and pelvis height per frame: stand, crouch, push, flight, absorb, recover."""
        dt = 1.0 / self.FPS
        bends, heights = [], []

        def stance(bend):
            bends.append(bend)
            heights.append(self.pelvis_height(bend))

        for _ in range(55):
            stance(self.STAND_BEND)
        for ease in 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, 15)):
            stance(self.STAND_BEND + ease * (self.CROUCH_BEND - self.STAND_BEND))

        height = self.pelvis_height(self.CROUCH_BEND)
        takeoff_height = self.pelvis_height(self.TAKEOFF_BEND)
        while height + push_speed * dt < takeoff_height:
            height += push_speed * dt
            stance(float(np.arccos((height - self.HIP_DROP) / self.LEG_LENGTH)))

        landing_height = self.pelvis_height(self.LANDING_BEND)
        rise = takeoff_height - landing_height
        flight_time = (push_speed + np.sqrt(push_speed ** 2 + 2 * self.GRAVITY * rise)) / self.GRAVITY
        apex_time = push_speed / self.GRAVITY
        time = dt
        while time < flight_time:
            if time < apex_time:
                bend = self.TAKEOFF_BEND + (self.STAND_BEND - self.TAKEOFF_BEND) * time / apex_time
            else:
                bend = self.STAND_BEND + (self.LANDING_BEND - self.STAND_BEND) * \
                    (time - apex_time) / (flight_time - apex_time)
            ballistic = takeoff_height + push_speed * time - 0.5 * self.GRAVITY * time ** 2
            bends.append(bend)
            heights.append(max(ballistic, self.pelvis_height(bend)))
            time += dt

        for bend in np.linspace(self.LANDING_BEND, self.ABSORB_BEND, 6):
            stance(bend)
        for bend in np.linspace(self.ABSORB_BEND, self.STAND_BEND, 15):
            stance(bend)
        while len(bends) < self.FRAME_COUNT:
            stance(self.STAND_BEND)
        return np.array(bends[:self.FRAME_COUNT]), np.array(heights[:self.FRAME_COUNT])

    def carry_jump(self):
        bends, heights = self.jump_profile(self.get_random_push_speed())
        human = self._poses(bends, heights, self.carry_arms)
        contacts = np.ones((self.FRAME_COUNT, 2), dtype=bool)
        return HOIReference(human, self._held_object(human, ('left_hand', 'right_hand')), ContactMask(contacts),
                            self.box_vertices(self.CARRY_BOX))

    def one_hand_carry(self):
        time = np.arange(self.FRAME_COUNT) / self.FPS
        bends = self.get_random_stand_bend() + 0.08 * (1.0 - np.cos(np.pi * time))
        human = self._poses(bends, self.pelvis_height(bends), self.hanging_arms)
        contacts = np.zeros((self.FRAME_COUNT, 2), dtype=bool)
        contacts[:, 1] = True
        hang = -(0.05 + self.TALL_BOX[2] / 2)
        return HOIReference(human, self._held_object(human, ('right_hand',), (0.0, 0.0, hang)),
                            ContactMask(contacts), self.box_vertices(self.TALL_BOX))

    def static_stand(self):
        bends = np.full(self.FRAME_COUNT, self.STAND_BEND)
        human = self._poses(bends, self.pelvis_height(bends), self.hanging_arms)
        resting = np.tile([0.6, 0.0, self.CARRY_BOX[2] / 2], (self.FRAME_COUNT, 1))
        objects = ObjectTrajectory(resting, np.tile([1.0, 0.0, 0.0, 0.0], (self.FRAME_COUNT, 1)), self.FPS)
        return HOIReference(human, objects, ContactMask(np.zeros((self.FRAME_COUNT, 2), dtype=bool)),
                            self.box_vertices(self.CARRY_BOX))

    def generate_clip(self, name) -> HOIReference:
        generators = {'carry-stand': self.carry_stand, 'carry-jump': self.carry_jump,
                      'one-hand-carry': self.one_hand_carry, 'static-stand': self.static_stand}
        if name not in generators:
            raise ConfigurationError(f'Unknown demo clip "{name}", expected one of {sorted(generators)}')
        return generators[name]()

    def generate_demo_pack(self, output_dir: Path, names=DEMO_PACK):
        output_dir = Path(output_dir)
        paths = []
        for name in names:
            path = save_clip(self.generate_clip(name), output_dir.joinpath(f'{name}.json'))
            logger.info(f'Wrote demo clip {path}')
            paths.append(path)
        return paths


def generate_demo_clip(name, seed=0) -> HOIReference:
    return DemoClipGenerator(seed).generate_clip(name)


def parse_arguments():
    parser = argparse.ArgumentParser(description='Generate the seeded demo motion-file pack.')
    parser.add_argument('output_dir', help='directory to write the motion files to', type=str)
    parser.add_argument('--seed', help='generator seed', type=int, default=0)
    parser.add_argument('--with-helpers', help='also write the helper clips used by tests',
                        action='store_true', default=False)
    return parser.parse_args()


def main():
    args = parse_arguments()
    logging.basicConfig(handlers=[logging.StreamHandler(sys.stdout)], level=os.getenv('LOG_LEVEL') or logging.ERROR)
    logger.setLevel(os.getenv('LOG_LEVEL') or logging.INFO)
    names = DemoClipGenerator.DEMO_PACK + (DemoClipGenerator.HELPER_CLIPS if args.with_helpers else ())
    DemoClipGenerator(args.seed).generate_demo_pack(Path(args.output_dir), names)


if __name__ == "__main__":
    main()
