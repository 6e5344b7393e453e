"""Action-space composition of two frozen experts.

The body action is the dynamic expert's action moved along the expert disagreement
``delta = a_contact_body - a_dynamic`` by a per-DoF weight ``w + r``, plus a bounded excursion
``U mu`` inside the leading principal directions of recent disagreements. Hands always come from
the contact expert.
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np
from scipy.special import expit

from exceptions import ConfigurationError, StructuralError

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

DEFAULT_BUFFER_CAPACITY = 16
DEFAULT_COMPONENTS = 4
DEFAULT_RHO = 0.2
DEFAULT_SIGMA = 0.08
DEFAULT_HIDDEN = (32, 32)
EIGEN_RATIO = 1e12


class ExpertInterface(Protocol):
    covers_hands: bool

    @property
    def action_dim(self) -> int:
        ...

    def act(self, state, goal) -> np.ndarray:
        ...


class DeltaBuffer:
    """FIFO ring of body-action differences between the contact and dynamic experts."""

    def __init__(self, capacity=DEFAULT_BUFFER_CAPACITY):
        if capacity < 1:
            raise ConfigurationError(f'Buffer capacity must be positive, got {capacity}')
        self.capacity = capacity
        self._entries = deque(maxlen=capacity)

    def __len__(self):
        return len(self._entries)

    def push(self, delta):
        delta = np.array(delta, dtype=float)
        if self._entries and delta.shape != self._entries[0].shape:
            raise StructuralError(f'Delta has shape {delta.shape}, buffer holds {self._entries[0].shape}')
        self._entries.append(delta)
        return self

    def as_array(self):
        return np.array(self._entries)

    def clear(self):
        self._entries.clear()


@dataclass(frozen=True, eq=False)
class EigenBasis:
    vectors: np.ndarray
    eigenvalues: np.ndarray
    stale: bool

    @classmethod
    def empty(cls, dimension, components=DEFAULT_COMPONENTS):
        return cls(np.zeros((dimension, components)), np.zeros(components), True)

    @property
    def components(self):
        return self.vectors.shape[1]

    @property
    def valid_components(self):
        return int(np.count_nonzero(np.any(self.vectors != 0.0, axis=0)))


def update_basis(buffer: DeltaBuffer, components=DEFAULT_COMPONENTS, dimension: Optional[int] = None) -> EigenBasis:
    """Top principal directions of the mean-centred buffer; columns with no variance stay zero."""
    entries = buffer.as_array()
    if dimension is None:
        if len(entries) == 0:
            raise StructuralError('Cannot infer the basis dimension from an empty buffer')
        dimension = entries.shape[1]
    if len(entries) < 2:
        return EigenBasis.empty(dimension, components)

    centred = entries - entries.mean(axis=0)
    _, singular_values, directions = np.linalg.svd(centred, full_matrices=False)
    eigenvalues = singular_values ** 2 / (len(entries) - 1)
    kept = [index for index in range(min(components, len(eigenvalues)))
            if eigenvalues[index] > 0.0 and eigenvalues[0] / eigenvalues[index] < EIGEN_RATIO]

    vectors = np.zeros((dimension, components))
    values = np.zeros(components)
    for column, index in enumerate(kept):
        direction = directions[index]
        if direction[np.argmax(np.abs(direction))] < 0:
            direction = -direction
        vectors[:, column] = direction
        values[column] = eigenvalues[index]
    stale = len(entries) < components or not kept
    if not kept:
        logger.debug(f'Delta buffer of {len(entries)} entries has no variance, exploration disabled')
    return EigenBasis(vectors, values, stale)


@dataclass(frozen=True, eq=False)
class ComposerParams:
    """Tanh MLP with a linear head; the head emits [w logits, r logits, mu logits]."""
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    body_dof: int
    components: int = DEFAULT_COMPONENTS
    rho: float = DEFAULT_RHO
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        object.__setattr__(self, 'weights', tuple(np.array(weight, dtype=float) for weight in self.weights))
        object.__setattr__(self, 'biases', tuple(np.array(bias, dtype=float) for bias in self.biases))
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError('Composer network needs one bias per weight matrix')
        for weight, bias in zip(self.weights, self.biases):
            if weight.ndim != 2 or bias.shape != (weight.shape[1],):
                raise ConfigurationError(f'Layer shapes {weight.shape} / {bias.shape} do not match')
        for earlier, later in zip(self.weights, self.weights[1:]):
            if earlier.shape[1] != later.shape[0]:
                raise ConfigurationError(f'Layer widths {earlier.shape} -> {later.shape} do not chain')
        if self.rho <= 0:
            raise ConfigurationError(f'rho must be positive, got {self.rho}')
        if self.sigma < 0:
            raise ConfigurationError(f'sigma must be non-negative, got {self.sigma}')

    @classmethod
    def zeros(cls, observation_size, output_size, body_dof, hidden: Sequence[int] = DEFAULT_HIDDEN,
              components=DEFAULT_COMPONENTS, rho=DEFAULT_RHO, sigma=DEFAULT_SIGMA):
        sizes = [observation_size, *hidden, output_size]
        return cls(tuple(np.zeros((fan_in, fan_out)) for fan_in, fan_out in zip(sizes, sizes[1:])),
                   tuple(np.zeros(fan_out) for fan_out in sizes[1:]), body_dof, components, rho, sigma)

    @classmethod
    def for_composer(cls, observation_size, body_dof, **kwargs):
        components = kwargs.get('components', DEFAULT_COMPONENTS)
        return cls.zeros(observation_size, 2 * body_dof + components, body_dof, **kwargs)

    @property
    def observation_size(self):
        return self.weights[0].shape[0]

    @property
    def output_size(self):
        return self.weights[-1].shape[1]

    @property
    def hidden(self):
        return tuple(weight.shape[1] for weight in self.weights[:-1])

    def flatten(self):
        return np.concatenate([array.ravel() for layer in zip(self.weights, self.biases) for array in layer])

    def parameter_groups(self) -> List[str]:
        """Group label per flat parameter: 'weight', 'bias', or 'head_bias' for the last layer bias."""
        labels = []
        for layer, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            labels.extend(['weight'] * weight.size)
            labels.extend(['head_bias' if layer == len(self.weights) - 1 else 'bias'] * bias.size)
        return labels

    def with_flat(self, vector) -> 'ComposerParams':
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (len(self.flatten()),):
            raise StructuralError(f'Flat parameter vector has shape {vector.shape}, '
                                  f'expected ({len(self.flatten())},)')
        weights, biases, offset = [], [], 0
        for weight, bias in zip(self.weights, self.biases):
            weights.append(vector[offset:offset + weight.size].reshape(weight.shape))
            offset += weight.size
            biases.append(vector[offset:offset + bias.size].copy())
            offset += bias.size
        return ComposerParams(tuple(weights), tuple(biases), self.body_dof, self.components, self.rho, self.sigma)

    def to_document(self):
        return {'body_dof': self.body_dof, 'components': self.components, 'rho': self.rho, 'sigma': self.sigma,
                'layers': [{'weight': weight.tolist(), 'bias': bias.tolist()}
                           for weight, bias in zip(self.weights, self.biases)]}

    @classmethod
    def from_document(cls, document):
        try:
            layers = document['layers']
            return cls(tuple(np.array(layer['weight'], dtype=float).reshape(-1, len(layer['bias']))
                             for layer in layers),
                       tuple(np.array(layer['bias'], dtype=float) for layer in layers),
                       int(document['body_dof']), int(document.get('components', DEFAULT_COMPONENTS)),
                       float(document.get('rho', DEFAULT_RHO)), float(document.get('sigma', DEFAULT_SIGMA)))
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigurationError(f'Malformed composer parameter document: {err}') from err


def mlp_forward(params: ComposerParams, observation) -> np.ndarray:
    activation = np.asarray(observation, dtype=float)
    if activation.shape != (params.observation_size,):
        raise StructuralError(f'Observation has shape {activation.shape}, '
                              f'network expects ({params.observation_size},)')
    last = len(params.weights) - 1
    for layer, (weight, bias) in enumerate(zip(params.weights, params.biases)):
        activation = activation @ weight + bias
        if layer < last:
            activation = np.tanh(activation)
    return activation


@dataclass(frozen=True, eq=False)
class ComposerOutput:
    w: np.ndarray
    r: np.ndarray
    mu: np.ndarray
    action: Optional[np.ndarray] = None


def composer_forward(params: ComposerParams, observation, basis: EigenBasis = None) -> ComposerOutput:
    head = mlp_forward(params, observation)
    body_dof = params.body_dof
    if head.shape != (2 * body_dof + params.components,):
        raise StructuralError(f'Composer head has {len(head)} outputs, expected {2 * body_dof + params.components}')
    if basis is not None and basis.components != params.components:
        raise StructuralError(f'Basis has {basis.components} components, composer emits {params.components}')
    return ComposerOutput(w=expit(head[:body_dof]),
                          r=params.rho * np.tanh(head[body_dof:2 * body_dof]),
                          mu=params.sigma * np.tanh(head[2 * body_dof:]))


def blend(a_phc, a_im_full, w, r, mu, basis: EigenBasis) -> ComposerOutput:
    a_phc = np.asarray(a_phc, dtype=float)
    a_im_full = np.asarray(a_im_full, dtype=float)
    w = np.asarray(w, dtype=float)
    r = np.asarray(r, dtype=float)
    mu = np.asarray(mu, dtype=float)
    body_dof = len(a_phc)
    if a_phc.ndim != 1 or a_im_full.ndim != 1 or len(a_im_full) < body_dof:
        raise StructuralError(f'Expert actions of shape {a_phc.shape} and {a_im_full.shape} cannot be blended')
    if w.shape != (body_dof,) or r.shape != (body_dof,):
        raise StructuralError(f'Blend weights {w.shape} / {r.shape} do not match {body_dof} body DoF')
    if basis.vectors.shape != (body_dof, len(mu)):
        raise StructuralError(f'Basis {basis.vectors.shape} does not match {body_dof} DoF x {len(mu)} components')
    delta = a_im_full[:body_dof] - a_phc
    body = a_phc + (w + r) * delta + basis.vectors @ mu
    return ComposerOutput(w, r, mu, np.concatenate([body, a_im_full[body_dof:]]))


class ComposerStepResult(NamedTuple):
    action: np.ndarray
    buffer: DeltaBuffer
    basis: EigenBasis
    output: ComposerOutput


def composer_observation(state, goal, a_phc, a_im_full):
    return np.concatenate([state.features(), goal.features(), a_phc, a_im_full])


def composer_step(policy: ComposerParams, experts: Tuple[ExpertInterface, ExpertInterface], state, goal,
                  buffer: DeltaBuffer, use_exploration=True) -> ComposerStepResult:
    dynamic_expert, contact_expert = experts
    a_phc = np.asarray(dynamic_expert.act(state, goal), dtype=float)
    a_im = np.asarray(contact_expert.act(state, goal), dtype=float)
    buffer.push(a_im[:len(a_phc)] - a_phc)
    basis = update_basis(buffer, policy.components, len(a_phc))
    output = composer_forward(policy, composer_observation(state, goal, a_phc, a_im), basis)
    mu = output.mu if use_exploration else np.zeros_like(output.mu)
    blended = blend(a_phc, a_im, output.w, output.r, mu, basis)
    return ComposerStepResult(blended.action, buffer, basis, blended)
