"""Two scripted imitation experts with complementary skills.

``DynamicExpert`` tracks the whole-body reference tightly (velocity lead on every PD target) but
has no notion of the hands. ``ContactExpert`` closes the grips wherever the reference is in contact
and tracks the upper body, but only follows a fraction of the lower-body reference, so it stays
upright on dynamic clips by not really performing them.
"""
import logging

import numpy as np

from sim_harness import GoalFrame, ImitationTask, SimState

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

BALANCE_STIFFNESS = 8.0
BALANCE_DAMPING = 1.7
LOWER_BODY_GAIN = 0.3


class _ScriptedExpert:
    covers_hands = False

    def __init__(self, task: ImitationTask):
        simulator = task.simulator
        skeleton = task.skeleton
        self.body_dof = skeleton.body_dof
        self.full_dof = skeleton.full_dof
        kp, kd = simulator.kp[:self.body_dof], simulator.kd[:self.body_dof]
        self.lead = np.divide(kd, kp, out=np.zeros_like(kd), where=kp > 0)
        self.ankle_dof = [simulator.dof_slices[foot].start + axis for foot in skeleton.foot_joints for axis in (0, 1)]
        leg_joints = {joint for foot in skeleton.foot_joints for joint in simulator.leg_chains[foot]}
        leg_joints.update(skeleton.foot_joints)
        self.lower_body_dof = np.concatenate([np.arange(simulator.dof_slices[joint].start,
                                                        simulator.dof_slices[joint].stop)
                                              for joint in sorted(leg_joints)])

    def reset(self, task: ImitationTask, seed: int):
        pass

    @property
    def action_dim(self):
        return self.full_dof if self.covers_hands else self.body_dof

    def _balance(self, targets, state: SimState):
        feedback = BALANCE_STIFFNESS * state.lean + BALANCE_DAMPING * state.lean_rate
        targets[self.ankle_dof] += np.tile(feedback, len(self.ankle_dof) // 2)
        return targets


class DynamicExpert(_ScriptedExpert):
    def act(self, state: SimState, goal: GoalFrame) -> np.ndarray:
        targets = goal.body_targets + self.lead * goal.body_target_velocities
        return self._balance(targets, state)


class ContactExpert(_ScriptedExpert):
    covers_hands = True

    def __init__(self, task: ImitationTask, lower_body_gain=LOWER_BODY_GAIN):
        super().__init__(task)
        self.lower_body_gain = lower_body_gain

    def act(self, state: SimState, goal: GoalFrame) -> np.ndarray:
        targets = goal.body_targets.copy()
        targets[self.lower_body_dof] *= self.lower_body_gain
        grips = goal.contacts.astype(float)
        return np.concatenate([self._balance(targets, state), grips])


def make_scripted_experts(task: ImitationTask):
    """(expert_dyn, expert_hoi): body-only dynamic tracker and full-action contact keeper."""
    return DynamicExpert(task), ContactExpert(task)
