"""Rollout policies built on the expert pair: the composer, its ablations and the baselines.

Every policy follows the harness contract: ``reset(task, seed)`` at episode start, then
``act(state, goal)`` returning a full action, with a per-step ``last_log`` for the blend log.
"""
import copy
import logging
from typing import Callable, Dict, Optional

import numpy as np
from scipy.special import expit

from composer import DEFAULT_HIDDEN, ComposerParams, DeltaBuffer, composer_observation, composer_step, \
    mlp_forward
from exceptions import ConfigurationError
from scripted_experts import LOWER_BODY_GAIN, make_scripted_experts

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

BLEND_LOG_FIELDS = ['step', 'w_mean', 'w_min', 'w_max', 'r_norm', 'mu_norm', 'expert']
ARM_JOINT_KEYWORDS = ('shoulder', 'elbow', 'wrist')
DYNAMIC = 'phc'
CONTACT = 'im'
MAX_LOWER_BODY_GAIN = 1.0


class BlendPolicy:
    mode = None
    trainable = False
    uses_experts = True

    def __init__(self, params: ComposerParams = None, experts_factory: Callable = make_scripted_experts,
                 hidden=DEFAULT_HIDDEN):
        self.params = params
        self.experts_factory = experts_factory
        self.hidden = tuple(hidden)
        self.experts = None
        self.last_log = {}
        self.step_index = 0

    def observation_size(self, task):
        return task.observation_size() + task.skeleton.body_dof + task.skeleton.full_dof

    def output_size(self, task):
        return 0

    def initial_params(self, task) -> Optional[ComposerParams]:
        if not self.trainable:
            return None
        return ComposerParams.zeros(self.observation_size(task), self.output_size(task), task.skeleton.body_dof,
                                    self.hidden)

    def with_params(self, params: ComposerParams) -> 'BlendPolicy':
        policy = copy.copy(self)
        policy.params = params
        return policy

    def reset(self, task, seed):
        skeleton = task.skeleton
        self.body_dof = skeleton.body_dof
        self.hand_count = skeleton.hand_joint_count
        self.step_index = 0
        self.last_log = {}
        if self.uses_experts:
            self.experts = self.experts_factory(task)
            for expert in self.experts:
                expert.reset(task, seed)
        if self.trainable:
            if self.params is None:
                self.params = self.initial_params(task)
            expected = (self.observation_size(task), self.output_size(task))
            if (self.params.observation_size, self.params.output_size) != expected:
                raise ConfigurationError(f'{self.mode} parameters map {self.params.observation_size} -> '
                                         f'{self.params.output_size}, task needs {expected[0]} -> {expected[1]}')

    def expert_actions(self, state, goal):
        dynamic_expert, contact_expert = self.experts
        return np.asarray(dynamic_expert.act(state, goal), dtype=float), \
            np.asarray(contact_expert.act(state, goal), dtype=float)

    def dynamic_full(self, a_phc):
        """The dynamic expert does not drive the hands, so its grips stay open."""
        return np.concatenate([a_phc, np.zeros(self.hand_count)])

    def act(self, state, goal) -> np.ndarray:
        action, log = self._act(state, goal)
        self.last_log = {'step': self.step_index, **log}
        self.step_index += 1
        return action

    def _act(self, state, goal):
        raise NotImplementedError


class ExpertOnlyPolicy(BlendPolicy):
    def __init__(self, expert=DYNAMIC, **kwargs):
        super().__init__(**kwargs)
        if expert not in (DYNAMIC, CONTACT):
            raise ConfigurationError(f'Unknown expert "{expert}"')
        self.expert = expert
        self.mode = f'expert_{expert}'

    def _act(self, state, goal):
        a_phc, a_im = self.expert_actions(state, goal)
        return (self.dynamic_full(a_phc) if self.expert == DYNAMIC else a_im), {'expert': self.expert}


class HeuristicPolicy(BlendPolicy):
    """Fixed partition: hands (and for 'arm' the arm chains) from the contact expert, the rest dynamic."""

    def __init__(self, partition='hand', **kwargs):
        super().__init__(**kwargs)
        if partition not in ('hand', 'arm'):
            raise ConfigurationError(f'Unknown heuristic partition "{partition}"')
        self.partition = partition
        self.mode = f'heuristic_{partition}'

    def reset(self, task, seed):
        super().reset(task, seed)
        skeleton = task.skeleton
        self.contact_dof = np.zeros(self.body_dof, dtype=bool)
        if self.partition == 'arm':
            for joint, dof in task.simulator.dof_slices.items():
                if any(keyword in skeleton.joints[joint].name for keyword in ARM_JOINT_KEYWORDS):
                    self.contact_dof[dof] = True

    def _act(self, state, goal):
        a_phc, a_im = self.expert_actions(state, goal)
        body = np.where(self.contact_dof, a_im[:self.body_dof], a_phc)
        return np.concatenate([body, a_im[self.body_dof:]]), {'expert': 'mixed'}


class ComposerPolicy(BlendPolicy):
    trainable = True

    def __init__(self, params=None, use_exploration=True, **kwargs):
        super().__init__(params, **kwargs)
        self.use_exploration = use_exploration
        self.mode = 'mlp_pca' if use_exploration else 'mlp'

    def output_size(self, task):
        return 2 * task.skeleton.body_dof + (self.params.components if self.params else 4)

    def initial_params(self, task):
        return ComposerParams.for_composer(self.observation_size(task), task.skeleton.body_dof, hidden=self.hidden)

    def reset(self, task, seed):
        super().reset(task, seed)
        self.buffer = DeltaBuffer()

    def _act(self, state, goal):
        result = composer_step(self.params, self.experts, state, goal, self.buffer, self.use_exploration)
        output = result.output
        return result.action, {'w_mean': float(output.w.mean()), 'w_min': float(output.w.min()),
                               'w_max': float(output.w.max()), 'r_norm': float(np.linalg.norm(output.r)),
                               'mu_norm': float(np.linalg.norm(output.mu))}


class HardMoEPolicy(BlendPolicy):
    """One expert per step, or one per joint with the hands following their wrist's gate."""
    trainable = True

    def __init__(self, params=None, per_joint=False, pinned: Optional[str] = None, **kwargs):
        super().__init__(params, **kwargs)
        if pinned not in (None, DYNAMIC, CONTACT):
            raise ConfigurationError(f'Unknown expert "{pinned}"')
        self.per_joint = per_joint
        self.pinned = pinned
        self.mode = 'hard_moe_joint' if per_joint else 'hard_moe'

    def output_size(self, task):
        return len(task.skeleton.actuated_body_joints) if self.per_joint else 1

    def reset(self, task, seed):
        super().reset(task, seed)
        skeleton = task.skeleton
        self.joint_of_dof = np.repeat(np.arange(len(skeleton.actuated_body_joints)), 3)
        wrists = [skeleton.joints[hand].parent for hand in skeleton.hand_joints]
        self.wrist_gate = [skeleton.actuated_body_joints.index(wrist) for wrist in wrists]

    def gates(self, state, goal, a_phc, a_im):
        if self.pinned is not None:
            return np.array([self.pinned == CONTACT])
        logits = mlp_forward(self.params, composer_observation(state, goal, a_phc, a_im))
        return expit(logits) >= 0.5

    def _act(self, state, goal):
        a_phc, a_im = self.expert_actions(state, goal)
        dynamic = self.dynamic_full(a_phc)
        gates = self.gates(state, goal, a_phc, a_im)
        if not self.per_joint or self.pinned is not None:
            chosen = CONTACT if gates[0] else DYNAMIC
            return (a_im if chosen == CONTACT else dynamic), {'w_mean': float(gates[0]), 'expert': chosen}
        body = np.where(gates[self.joint_of_dof], a_im[:self.body_dof], a_phc)
        hands = np.where(gates[self.wrist_gate], a_im[self.body_dof:], dynamic[self.body_dof:])
        expert = CONTACT if gates.all() else DYNAMIC if not gates.any() else 'mixed'
        return np.concatenate([body, hands]), {'w_mean': float(gates.mean()), 'expert': expert}


class ResidualPolicy(BlendPolicy):
    """A frozen expert plus a bounded learned correction on every DoF."""
    trainable = True

    def __init__(self, params=None, base=DYNAMIC, **kwargs):
        super().__init__(params, **kwargs)
        if base not in (DYNAMIC, CONTACT):
            raise ConfigurationError(f'Unknown expert "{base}"')
        self.base = base
        self.mode = 'residual' if base == DYNAMIC else 'residual_im'

    def observation_size(self, task):
        return task.observation_size() + task.skeleton.full_dof

    def output_size(self, task):
        return task.skeleton.full_dof

    def _act(self, state, goal):
        a_phc, a_im = self.expert_actions(state, goal)
        base = self.dynamic_full(a_phc) if self.base == DYNAMIC else a_im
        observation = np.concatenate([state.features(), goal.features(), base])
        residual = self.params.rho * np.tanh(mlp_forward(self.params, observation))
        return base + residual, {'r_norm': float(np.linalg.norm(residual)), 'expert': self.base}


class ScratchPolicy(BlendPolicy):
    """Direct policy with no expert: bounded body targets and sigmoid grips."""
    trainable = True
    uses_experts = False
    mode = 'scratch'

    def observation_size(self, task):
        return task.observation_size()

    def output_size(self, task):
        return task.skeleton.full_dof

    def _act(self, state, goal):
        head = mlp_forward(self.params, np.concatenate([state.features(), goal.features()]))
        return np.concatenate([np.pi * np.tanh(head[:self.body_dof]), expit(head[self.body_dof:])]), {}


class FinetunedExpertPolicy(BlendPolicy):
    """The contact expert alone, with its lower-body tracking gain tuned on the task instead of blended."""
    trainable = True
    mode = 'finetune_im'

    def observation_size(self, task):
        return 1

    def output_size(self, task):
        return 1

    def initial_params(self, task):
        return ComposerParams.zeros(1, 1, task.skeleton.body_dof, hidden=())

    def lower_body_gain(self):
        offset = mlp_forward(self.params, np.ones(1))[0]
        return float(np.clip(LOWER_BODY_GAIN + offset, 0.0, MAX_LOWER_BODY_GAIN))

    def reset(self, task, seed):
        super().reset(task, seed)
        self.experts[1].lower_body_gain = self.lower_body_gain()

    def _act(self, state, goal):
        contact_expert = self.experts[1]
        return np.asarray(contact_expert.act(state, goal), dtype=float), \
            {'w_mean': contact_expert.lower_body_gain, 'expert': CONTACT}


BLEND_MODES = {
    'mlp_pca': lambda **kwargs: ComposerPolicy(use_exploration=True, **kwargs),
    'mlp': lambda **kwargs: ComposerPolicy(use_exploration=False, **kwargs),
    'hard_moe': lambda **kwargs: HardMoEPolicy(per_joint=False, **kwargs),
    'hard_moe_joint': lambda **kwargs: HardMoEPolicy(per_joint=True, **kwargs),
    'heuristic_hand': lambda **kwargs: HeuristicPolicy('hand', **kwargs),
    'heuristic_arm': lambda **kwargs: HeuristicPolicy('arm', **kwargs),
    'residual': lambda **kwargs: ResidualPolicy(base=DYNAMIC, **kwargs),
    'residual_im': lambda **kwargs: ResidualPolicy(base=CONTACT, **kwargs),
    'finetune_im': lambda **kwargs: FinetunedExpertPolicy(**kwargs),
    'expert_phc': lambda **kwargs: ExpertOnlyPolicy(DYNAMIC, **kwargs),
    'expert_im': lambda **kwargs: ExpertOnlyPolicy(CONTACT, **kwargs),
    'scratch': lambda **kwargs: ScratchPolicy(**kwargs),
}


def make_blend_policy(mode, params: ComposerParams = None, **kwargs) -> BlendPolicy:
    if mode not in BLEND_MODES:
        raise ConfigurationError(f'Unknown blend mode "{mode}", expected one of {sorted(BLEND_MODES)}')
    policy = BLEND_MODES[mode](**kwargs)
    if params is not None:
        if not policy.trainable:
            raise ConfigurationError(f'Blend mode "{mode}" has no parameters to load')
        policy.params = params
    return policy


def baseline_blenders(params_by_mode: Dict[str, ComposerParams] = None, **kwargs) -> Dict[str, BlendPolicy]:
    """Every blend mode other than the full composer, keyed by mode name."""
    params_by_mode = params_by_mode or {}
    return {mode: make_blend_policy(mode, params_by_mode.get(mode), **kwargs)
            for mode in BLEND_MODES if mode != 'mlp_pca'}
