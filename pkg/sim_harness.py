"""Deterministic reduced-physics rollout harness.

The body is a point-mass root on penalty-spring feet plus a roll/pitch lean pendulum balanced
through the ankles; every other body DoF is an independent PD-driven axis-angle coordinate and
each hand carries one grip DoF. The object is a free rigid body with penalty contact at its
vertices, welded to a hand while that hand grips within reach of its grasp point.
"""
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Protocol

import numpy as np
from scipy.spatial.transform import Rotation

from exceptions import ExpertStepError, SimulationDivergedError, StructuralError
from harness_config import HarnessConfig, load_harness_config
from motion_core import ContactMask, HOIReference, MotionClip, ObjectTrajectory, SkeletonSpec, \
    clip_forward_kinematics, forward_kinematics_arrays
from rigid_transforms import RigidTransform, compose, geodesic_angle, invert, matrix_to_quaternion, \
    quaternion_to_matrix, transform_points

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

COMPLETED = 'completed'
FALL = 'fall'
DROP = 'drop'
MINIMUM_EXTENT = 0.01


@dataclass(frozen=True, eq=False)
class SimState:
    root_position: np.ndarray
    root_velocity: np.ndarray
    base_rotation: np.ndarray
    lean: np.ndarray
    lean_rate: np.ndarray
    joint_angles: np.ndarray
    joint_velocities: np.ndarray
    grips: np.ndarray
    grip_velocities: np.ndarray
    object_position: np.ndarray
    object_velocity: np.ndarray
    object_quaternion: np.ndarray
    object_angular_velocity: np.ndarray
    attached: np.ndarray
    carrier: int
    weld: Optional[RigidTransform]
    joint_positions: np.ndarray
    joint_world_rotations: np.ndarray
    previous_relative_positions: np.ndarray
    step_index: int = 0

    @property
    def root_rotation(self):
        return self.base_rotation @ lean_rotation(self.lean)

    @property
    def root_quaternion(self):
        return matrix_to_quaternion(self.root_rotation)

    @property
    def object_transform(self):
        return RigidTransform.from_quaternion(self.object_quaternion, self.object_position)

    def is_finite(self):
        arrays = (self.root_position, self.root_velocity, self.lean, self.lean_rate, self.joint_angles,
                  self.joint_velocities, self.grips, self.grip_velocities, self.object_position,
                  self.object_velocity, self.object_quaternion, self.object_angular_velocity,
                  self.joint_positions)
        return all(np.all(np.isfinite(array)) for array in arrays)

    def features(self):
        """Proprioceptive observation: root-relative where a heading-free quantity exists."""
        return np.concatenate([
            self.root_position, self.root_velocity, self.lean, self.lean_rate,
            self.joint_angles, self.joint_velocities, self.grips,
            self.object_position - self.root_position, self.object_velocity,
            self.attached.astype(float)])


@dataclass(frozen=True, eq=False)
class GoalFrame:
    index: int
    root_position: np.ndarray
    root_quaternion: np.ndarray
    joint_rotations: np.ndarray
    joint_velocities: np.ndarray
    joint_positions: np.ndarray
    object_position: np.ndarray
    object_quaternion: np.ndarray
    contacts: np.ndarray
    body_targets: np.ndarray
    body_target_velocities: np.ndarray

    def features(self):
        return np.concatenate([self.body_targets, self.root_position, self.object_position - self.root_position,
                               self.contacts.astype(float)])


def lean_rotation(lean):
    return Rotation.from_rotvec([lean[0], lean[1], 0.0]).as_matrix()


class Policy(Protocol):
    def reset(self, task: 'ImitationTask', seed: int) -> None:
        ...

    def act(self, state: SimState, goal: GoalFrame) -> np.ndarray:
        ...


class Simulator:
    def __init__(self, skeleton: SkeletonSpec, object_vertices, grasp_points, config: HarnessConfig):
        self.skeleton = skeleton
        self.config = config
        self.object_vertices = np.asarray(object_vertices, dtype=float)
        self.grasp_points = np.asarray(grasp_points, dtype=float).reshape(skeleton.hand_joint_count, 3)
        self.has_grasp = np.all(np.isfinite(self.grasp_points), axis=1)

        self.body_dof = skeleton.body_dof
        self.full_dof = skeleton.full_dof
        self.kp, self.kd = config.gains.dof_arrays(skeleton)
        self.lower, self.upper = config.rom.dof_bounds(skeleton)
        hand_count = skeleton.hand_joint_count
        self.torque_limits = np.concatenate([np.full(self.body_dof, config.body.torque_limit_body),
                                             np.full(hand_count, config.body.torque_limit_hand)])
        self.inertia = np.concatenate([np.full(self.body_dof, config.body.joint_inertia),
                                       np.full(hand_count, config.body.grip_inertia)])
        self.dof_slices = {joint: slice(3 * position, 3 * position + 3)
                           for position, joint in enumerate(skeleton.actuated_body_joints)}
        self.leg_chains = {foot: self._chain_above(foot) for foot in skeleton.foot_joints}

        extents = np.maximum(self.object_vertices.max(axis=0) - self.object_vertices.min(axis=0), MINIMUM_EXTENT)
        self.object_mass = config.sim.object_density * float(np.prod(extents))
        self.object_inertia = self.object_mass / 12.0 * np.array([extents[1] ** 2 + extents[2] ** 2,
                                                                  extents[0] ** 2 + extents[2] ** 2,
                                                                  extents[0] ** 2 + extents[1] ** 2])

    def _chain_above(self, foot):
        chain = []
        joint = self.skeleton.parents[foot]
        while joint >= 0 and joint != self.skeleton.pelvis_joint:
            chain.append(int(joint))
            joint = self.skeleton.parents[joint]
        return chain

    @classmethod
    def for_reference(cls, reference: HOIReference, config: HarnessConfig):
        return cls(reference.skeleton, reference.object_geometry, grasp_points(reference), config)

    def joint_rotation_array(self, joint_angles):
        rotations = np.zeros((self.skeleton.joint_count, 3))
        for joint, dof in self.dof_slices.items():
            rotations[joint] = joint_angles[dof]
        return rotations

    def _shin(self, values, foot):
        return sum(values[self.dof_slices[joint]][:2] for joint in self.leg_chains[foot])

    def _slave_ankles(self, joint_angles, joint_velocities, lean, lean_rate):
        for foot in self.skeleton.foot_joints:
            dof = self.dof_slices[foot]
            joint_angles[dof.start:dof.start + 2] = -(lean + self._shin(joint_angles, foot))
            joint_velocities[dof.start:dof.start + 2] = -(lean_rate + self._shin(joint_velocities, foot))

    def _kinematics(self, root_position, base_rotation, lean, joint_angles):
        return forward_kinematics_arrays(self.skeleton, root_position, base_rotation @ lean_rotation(lean),
                                         self.joint_rotation_array(joint_angles))

    def initial_state(self, reference: HOIReference, seed=0) -> SimState:
        """Reference frame 0 with a seeded lean of fixed magnitude; grips closed on hands in contact."""
        rng = np.random.default_rng(seed)
        direction = rng.uniform(0.0, 2.0 * np.pi)
        lean = self.config.body.initial_lean * np.array([np.cos(direction), np.sin(direction)])
        lean_rate = np.zeros(2)

        human = reference.human
        fps = reference.fps
        joint_angles = np.concatenate([human.joint_rotations[0, joint] for joint in self.dof_slices])
        if len(human) > 1:
            next_angles = np.concatenate([human.joint_rotations[1, joint] for joint in self.dof_slices])
            joint_velocities = (next_angles - joint_angles) * fps
            root_velocity = (human.root_positions[1] - human.root_positions[0]) * fps
        else:
            joint_velocities = np.zeros(self.body_dof)
            root_velocity = np.zeros(3)
        self._slave_ankles(joint_angles, joint_velocities, lean, lean_rate)

        root_position = human.root_positions[0].copy()
        base_rotation = quaternion_to_matrix(human.root_quaternions[0])
        world_rotations, world_positions = self._kinematics(root_position, base_rotation, lean, joint_angles)
        grips = reference.contacts.flags[0].astype(float)

        state = SimState(
            root_position=root_position, root_velocity=root_velocity, base_rotation=base_rotation,
            lean=lean, lean_rate=lean_rate, joint_angles=joint_angles, joint_velocities=joint_velocities,
            grips=grips, grip_velocities=np.zeros_like(grips),
            object_position=reference.object.positions[0].copy(), object_velocity=np.zeros(3),
            object_quaternion=reference.object.quaternions[0].copy(), object_angular_velocity=np.zeros(3),
            attached=np.zeros(self.skeleton.hand_joint_count, dtype=bool), carrier=-1, weld=None,
            joint_positions=world_positions, joint_world_rotations=world_rotations,
            previous_relative_positions=world_positions - root_position)
        return self._update_weld(state, state.root_velocity, world_positions - root_position)

    def step(self, state: SimState, action) -> SimState:
        action = np.asarray(action, dtype=float)
        if action.shape != (self.full_dof,):
            raise StructuralError(f'Action has shape {action.shape}, harness expects ({self.full_dof},)')
        if not np.all(np.isfinite(action)):
            raise SimulationDivergedError(state.step_index, 'non-finite action')
        targets = np.clip(action, self.lower, self.upper)
        for _ in range(self.config.sim.substeps):
            state = self._substep(state, targets)
            if not state.is_finite():
                raise SimulationDivergedError(state.step_index)
        return replace(state, step_index=state.step_index + 1)

    def _ground_force(self, points, velocities, stiffness, damping, friction_damping):
        """Penalty spring-damper per point with a friction force bounded by the friction cone."""
        sim = self.config.sim
        depth = -points[:, 2]
        normal = np.where(depth > 0.0,
                          stiffness * depth - damping * (1.0 - sim.ground_restitution) * velocities[:, 2], 0.0)
        normal = np.maximum(normal, 0.0)
        friction = -friction_damping * velocities[:, :2]
        magnitude = np.linalg.norm(friction, axis=1)
        limit = sim.ground_friction * normal
        scale = np.where(magnitude > limit, limit / np.maximum(magnitude, 1e-12), 1.0)
        friction = friction * scale[:, None]
        return np.column_stack([friction, normal])

    def _substep(self, state: SimState, targets) -> SimState:
        dt = self.config.sim.sim_dt
        gravity = self.config.sim.gravity
        body = self.config.body

        feet = list(self.skeleton.foot_joints)
        relative = state.joint_positions - state.root_position
        relative_velocity = (relative - state.previous_relative_positions) / dt
        foot_forces = self._ground_force(state.joint_positions[feet], state.root_velocity + relative_velocity[feet],
                                         body.foot_stiffness, body.foot_damping, body.foot_friction_damping)
        stance = bool(np.any(foot_forces[:, 2] > 0.0))

        root_velocity = state.root_velocity + dt * foot_forces.sum(axis=0) / body.mass
        root_velocity[2] -= dt * gravity
        root_position = state.root_position + dt * root_velocity
        root_position[2] += 0.5 * dt * dt * gravity

        body_dof = self.body_dof
        joint_angles = state.joint_angles.copy()
        joint_velocities = state.joint_velocities.copy()
        torques = self.kp[:body_dof] * (targets[:body_dof] - joint_angles) - self.kd[:body_dof] * joint_velocities
        torques = np.clip(torques, -self.torque_limits[:body_dof], self.torque_limits[:body_dof])
        joint_velocities += dt * torques / self.inertia[:body_dof]
        joint_angles += dt * joint_velocities

        lean = state.lean.copy()
        lean_rate = state.lean_rate.copy()
        if stance:
            ankle_torque = sum(torques[self.dof_slices[foot]][:2] for foot in feet)
            height = body.com_height
            gravity_torque = body.mass * gravity * height * np.sin(lean)
            lean_rate += dt * (gravity_torque - ankle_torque) / (body.mass * height * height)
        lean += dt * lean_rate
        fallen = np.abs(lean) >= np.pi / 2
        lean = np.clip(lean, -np.pi / 2, np.pi / 2)
        lean_rate[fallen] = 0.0
        if stance:
            self._slave_ankles(joint_angles, joint_velocities, lean, lean_rate)

        hand_kp, hand_kd = self.kp[body_dof:], self.kd[body_dof:]
        grip_torques = np.clip(hand_kp * (targets[body_dof:] - state.grips) - hand_kd * state.grip_velocities,
                               -self.torque_limits[body_dof:], self.torque_limits[body_dof:])
        grip_velocities = state.grip_velocities + dt * grip_torques / self.inertia[body_dof:]
        grips = state.grips + dt * grip_velocities
        low, high = self.config.rom.grip_range
        at_bound = (grips < low) | (grips > high)
        grips = np.clip(grips, low, high)
        grip_velocities = np.where(at_bound, 0.0, grip_velocities)

        world_rotations, world_positions = self._kinematics(root_position, state.base_rotation, lean, joint_angles)
        state_after_body = replace(
            state, root_position=root_position, root_velocity=root_velocity, lean=lean, lean_rate=lean_rate,
            joint_angles=joint_angles, joint_velocities=joint_velocities, grips=grips,
            grip_velocities=grip_velocities, joint_positions=world_positions, joint_world_rotations=world_rotations,
            previous_relative_positions=relative)
        if state.carrier < 0:
            state_after_body = self._integrate_free_object(state_after_body)
        return self._update_weld(state_after_body, root_velocity, relative)

    def _integrate_free_object(self, state: SimState) -> SimState:
        dt = self.config.sim.sim_dt
        gravity = self.config.sim.gravity
        body = self.config.body
        rotation = quaternion_to_matrix(state.object_quaternion)
        arms = self.object_vertices @ rotation.T
        angular_world = rotation @ state.object_angular_velocity
        vertex_velocities = state.object_velocity + np.cross(angular_world, arms)
        forces = self._ground_force(arms + state.object_position, vertex_velocities, body.object_stiffness,
                                    body.object_damping, body.object_friction_damping)
        torque_world = np.cross(arms, forces).sum(axis=0)

        velocity = state.object_velocity + dt * forces.sum(axis=0) / self.object_mass
        velocity[2] -= dt * gravity
        position = state.object_position + dt * velocity
        position[2] += 0.5 * dt * dt * gravity

        omega = state.object_angular_velocity
        torque_body = rotation.T @ torque_world
        omega = omega + dt * (torque_body - np.cross(omega, self.object_inertia * omega)) / self.object_inertia
        rotation = rotation @ Rotation.from_rotvec(omega * dt).as_matrix()
        quaternion = matrix_to_quaternion(rotation)
        return replace(state, object_position=position, object_velocity=velocity,
                       object_quaternion=quaternion / np.linalg.norm(quaternion), object_angular_velocity=omega)

    def _update_weld(self, state: SimState, root_velocity, previous_relative) -> SimState:
        body = self.config.body
        dt = self.config.sim.sim_dt
        hands = self.skeleton.hand_joints
        object_transform = state.object_transform
        attached = state.attached.copy()
        for hand_position, hand in enumerate(hands):
            if state.grips[hand_position] < body.grip_threshold:
                attached[hand_position] = False
            elif not attached[hand_position] and self.has_grasp[hand_position]:
                grasp_world = transform_points(object_transform, self.grasp_points[hand_position])
                if np.linalg.norm(state.joint_positions[hand] - grasp_world) <= body.attach_radius:
                    attached[hand_position] = True

        carrier = int(np.argmax(attached)) if attached.any() else -1
        if carrier < 0 and state.carrier < 0:
            return replace(state, attached=attached)

        def hand_velocity(hand_position):
            hand = hands[hand_position]
            relative = state.joint_positions[hand] - state.root_position
            return root_velocity + (relative - previous_relative[hand]) / dt

        if carrier < 0:
            logger.debug(f'Object released at step {state.step_index}')
            return replace(state, attached=attached, carrier=-1, weld=None,
                           object_velocity=hand_velocity(state.carrier), object_angular_velocity=np.zeros(3))

        hand_joint = hands[carrier]
        hand_transform = RigidTransform(state.joint_world_rotations[hand_joint], state.joint_positions[hand_joint])
        weld = state.weld if carrier == state.carrier else compose(invert(hand_transform), object_transform)
        welded = compose(hand_transform, weld)
        return replace(state, attached=attached, carrier=carrier, weld=weld,
                       object_position=welded.translation, object_quaternion=welded.quaternion,
                       object_velocity=hand_velocity(carrier), object_angular_velocity=np.zeros(3))


def grasp_points(reference: HOIReference):
    """Object-local hand position at each hand's first reference contact frame; NaN for hands never in contact."""
    _, positions = clip_forward_kinematics(reference.human)
    points = np.full((reference.skeleton.hand_joint_count, 3), np.nan)
    for hand_position, hand in enumerate(reference.skeleton.hand_joints):
        contact_frames = np.flatnonzero(reference.contacts.flags[:, hand_position])
        if len(contact_frames) == 0:
            continue
        frame = contact_frames[0]
        points[hand_position] = transform_points(invert(reference.object.pose(frame)), positions[frame, hand])
    return points


def imitation_reward(state: SimState, goal: GoalFrame, config: HarnessConfig) -> float:
    weights = config.reward
    joint_error = float(np.mean(np.sum((state.joint_positions - goal.joint_positions) ** 2, axis=1)))
    object_angle = geodesic_angle(quaternion_to_matrix(state.object_quaternion),
                                  quaternion_to_matrix(goal.object_quaternion))
    object_error = float(np.sum((state.object_position - goal.object_position) ** 2)) \
        + weights.object_rotation_weight * object_angle ** 2
    holding = not goal.contacts.any() or bool(np.all(state.attached[goal.contacts]))
    return (np.exp(-weights.joint_weight * joint_error) + np.exp(-weights.object_weight * object_error)
            + (weights.contact_bonus if holding else 0.0))


@dataclass(frozen=True, eq=False)
class RolloutResult:
    trajectory: HOIReference
    rewards: np.ndarray
    termination: str
    logs: List[dict]

    @property
    def steps(self):
        return len(self.rewards)

    @property
    def episode_return(self):
        return float(np.sum(self.rewards))


class ImitationTask:
    def __init__(self, reference: HOIReference, config: HarnessConfig = None):
        self.reference = reference
        self.config = config or load_harness_config()
        self.skeleton = reference.skeleton
        self.simulator = Simulator.for_reference(reference, self.config)
        self.goals = self._build_goals()
        self.episode_steps = min(self.config.sim.episode_length, len(reference) - 1)

    def _build_goals(self):
        reference = self.reference
        human = reference.human
        _, positions = clip_forward_kinematics(human)
        joint_velocities = np.gradient(human.joint_rotations, axis=0) * reference.fps if len(reference) > 1 \
            else np.zeros_like(human.joint_rotations)
        actuated = list(self.skeleton.actuated_body_joints)
        return [GoalFrame(index=index,
                          root_position=human.root_positions[index],
                          root_quaternion=human.root_quaternions[index],
                          joint_rotations=human.joint_rotations[index],
                          joint_velocities=joint_velocities[index],
                          joint_positions=positions[index],
                          object_position=reference.object.positions[index],
                          object_quaternion=reference.object.quaternions[index],
                          contacts=reference.contacts.flags[index],
                          body_targets=human.joint_rotations[index, actuated].reshape(-1),
                          body_target_velocities=joint_velocities[index, actuated].reshape(-1))
                for index in range(len(reference))]

    def goal(self, index) -> GoalFrame:
        return self.goals[index]

    def observation_size(self):
        state_size = 3 + 3 + 2 + 2 + 2 * self.skeleton.body_dof + 2 * self.skeleton.hand_joint_count + 3 + 3
        goal_size = self.skeleton.body_dof + 3 + 3 + self.skeleton.hand_joint_count
        return state_size + goal_size

    def rollout(self, policy: Policy, seed=0) -> RolloutResult:
        simulator = self.simulator
        body = self.config.body
        state = simulator.initial_state(self.reference, seed)
        policy.reset(self, seed)
        states, rewards, logs = [state], [], []
        termination = COMPLETED
        for step in range(self.episode_steps):
            goal = self.goals[step + 1]
            try:
                action = policy.act(state, goal)
            except (SimulationDivergedError, StructuralError):
                raise
            except Exception as err:
                raise ExpertStepError(step, err) from err
            state = simulator.step(state, action)
            states.append(state)
            rewards.append(imitation_reward(state, goal, self.config))
            logs.append(dict(getattr(policy, 'last_log', {}) or {}))
            if state.joint_positions[self.skeleton.pelvis_joint, 2] < body.fall_height:
                termination = FALL
                break
            if np.linalg.norm(state.object_position - goal.object_position) > body.drop_distance:
                termination = DROP
                break
        logger.debug(f'Rollout seed {seed} ended with "{termination}" after {len(rewards)} steps')
        return RolloutResult(self._trajectory(states), np.array(rewards), termination, logs)

    def _trajectory(self, states) -> HOIReference:
        fps = self.reference.fps
        human = MotionClip.from_arrays(self.skeleton,
                                       [state.root_position for state in states],
                                       [state.root_quaternion for state in states],
                                       [self.simulator.joint_rotation_array(state.joint_angles) for state in states],
                                       fps)
        quaternions = np.array([state.object_quaternion for state in states])
        quaternions = quaternions / np.linalg.norm(quaternions, axis=1, keepdims=True)
        objects = ObjectTrajectory(np.array([state.object_position for state in states]), quaternions, fps)
        return HOIReference(human, objects, ContactMask(np.array([state.attached for state in states])),
                            self.reference.object_geometry)


def rollout(policy: Policy, reference: HOIReference, config: HarnessConfig = None, seed=0) -> RolloutResult:
    return ImitationTask(reference, config).rollout(policy, seed)
