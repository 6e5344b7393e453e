from unittest import TestCase
from unittest.mock import Mock

import numpy as np
import pytest

from composer import ComposerParams, DeltaBuffer, EigenBasis, blend, composer_forward, composer_step, \
    update_basis
from exceptions import ConfigurationError, StructuralError

BODY_DOF = 6
FULL_DOF = 8


class ConstantExpert:
    def __init__(self, action, covers_hands):
        self.action = np.asarray(action, dtype=float)
        self.covers_hands = covers_hands

    @property
    def action_dim(self):
        return len(self.action)

    def act(self, state, goal):
        return self.action


def observation_stubs(state_size=3, goal_size=2):
    return Mock(**{'features.return_value': np.ones(state_size)}), \
        Mock(**{'features.return_value': np.ones(goal_size)})


def composer_params(head_bias=None, **kwargs):
    params = ComposerParams.for_composer(3 + 2 + BODY_DOF + FULL_DOF, BODY_DOF, hidden=(4,), **kwargs)
    if head_bias is None:
        return params
    biases = params.biases[:-1] + (np.asarray(head_bias, dtype=float),)
    return ComposerParams(params.weights, biases, params.body_dof, params.components, params.rho, params.sigma)


def test_delta_buffer_is_fifo():
    # Given
    buffer = DeltaBuffer(capacity=3)

    # When
    for value in range(5):
        buffer.push(np.full(2, float(value)))

    # Then
    assert len(buffer) == 3
    np.testing.assert_array_equal(buffer.as_array()[:, 0], [2.0, 3.0, 4.0])


def test_delta_buffer_rejects_shape_change():
    # Given
    buffer = DeltaBuffer().push(np.zeros(3))

    # When, then raises
    with pytest.raises(StructuralError):
        buffer.push(np.zeros(4))


def test_delta_buffer_needs_capacity():
    # When, then raises
    with pytest.raises(ConfigurationError):
        DeltaBuffer(capacity=0)


class TestUpdateBasis(TestCase):

    def test_matches_covariance_eigendecomposition(self):
        # Given
        rng = np.random.default_rng(0)
        buffer = DeltaBuffer(capacity=16)
        for delta in rng.normal(size=(16, 5)) * np.array([3.0, 2.0, 1.0, 0.5, 0.1]):
            buffer.push(delta)

        # When
        basis = update_basis(buffer, components=3)

        # Then
        eigenvalues, eigenvectors = np.linalg.eigh(np.cov(buffer.as_array(), rowvar=False))
        order = np.argsort(eigenvalues)[::-1][:3]
        np.testing.assert_allclose(basis.eigenvalues, eigenvalues[order], rtol=1e-9)
        for column, index in enumerate(order):
            self.assertAlmostEqual(abs(float(basis.vectors[:, column] @ eigenvectors[:, index])), 1.0, places=9)
        np.testing.assert_allclose(basis.vectors.T @ basis.vectors, np.eye(3), atol=1e-9)
        self.assertFalse(basis.stale)

    def test_largest_component_is_positive(self):
        # Given
        rng = np.random.default_rng(1)
        buffer = DeltaBuffer()
        for delta in rng.normal(size=(8, 4)):
            buffer.push(delta)

        # When
        basis = update_basis(buffer, components=2)

        # Then
        for column in range(2):
            vector = basis.vectors[:, column]
            self.assertGreater(vector[np.argmax(np.abs(vector))], 0.0)

    def test_single_entry_is_stale_and_empty(self):
        # Given
        buffer = DeltaBuffer().push(np.ones(4))

        # When
        basis = update_basis(buffer, components=2)

        # Then
        self.assertTrue(basis.stale)
        self.assertEqual(basis.valid_components, 0)
        self.assertEqual(basis.vectors.shape, (4, 2))

    def test_identical_entries_keep_no_direction(self):
        # Given
        buffer = DeltaBuffer()
        for _ in range(6):
            buffer.push(np.array([1.0, -2.0, 0.5]))

        # When
        basis = update_basis(buffer, components=2)

        # Then
        self.assertEqual(basis.valid_components, 0)
        self.assertTrue(basis.stale)

    def test_rank_deficient_buffer_zeroes_extra_columns(self):
        # Given
        buffer = DeltaBuffer()
        for scale in (-1.0, 0.0, 1.0, 2.0):
            buffer.push(scale * np.array([1.0, 2.0, 0.0]))

        # When
        basis = update_basis(buffer, components=2)

        # Then
        self.assertEqual(basis.valid_components, 1)
        np.testing.assert_array_equal(basis.vectors[:, 1], np.zeros(3))

    def test_empty_buffer_without_dimension(self):
        # When, then raises
        with self.assertRaises(StructuralError):
            update_basis(DeltaBuffer())


class TestComposerForward(TestCase):

    def test_outputs_stay_in_bounds(self):
        # Given
        params = composer_params(rho=0.2, sigma=0.08)
        rng = np.random.default_rng(2)
        params = params.with_flat(rng.normal(scale=5.0, size=len(params.flatten())))

        # When
        output = composer_forward(params, rng.normal(size=params.observation_size))

        # Then
        self.assertTrue(np.all((output.w >= 0.0) & (output.w <= 1.0)))
        self.assertTrue(np.all(np.abs(output.r) <= 0.2))
        self.assertTrue(np.all(np.abs(output.mu) <= 0.08))

    def test_zero_network_gives_half_weights(self):
        # Given
        params = composer_params()

        # When
        output = composer_forward(params, np.zeros(params.observation_size))

        # Then
        np.testing.assert_allclose(output.w, np.full(BODY_DOF, 0.5))
        np.testing.assert_array_equal(output.r, np.zeros(BODY_DOF))

    def test_observation_size_is_checked(self):
        # When, then raises
        with self.assertRaises(StructuralError):
            composer_forward(composer_params(), np.zeros(3))

    def test_basis_component_mismatch(self):
        # When, then raises
        with self.assertRaises(StructuralError):
            composer_forward(composer_params(), np.zeros(19), EigenBasis.empty(BODY_DOF, components=2))


class TestBlend(TestCase):

    def setUp(self) -> None:
        rng = np.random.default_rng(3)
        self.a_phc = rng.normal(size=BODY_DOF)
        self.a_im = rng.normal(size=FULL_DOF)
        self.basis = EigenBasis.empty(BODY_DOF, components=2)
        self.mu = np.zeros(2)

    def test_zero_weight_recovers_dynamic_expert(self):
        # When
        output = blend(self.a_phc, self.a_im, np.zeros(BODY_DOF), np.zeros(BODY_DOF), self.mu, self.basis)

        # Then
        np.testing.assert_allclose(output.action[:BODY_DOF], self.a_phc)
        np.testing.assert_array_equal(output.action[BODY_DOF:], self.a_im[BODY_DOF:])

    def test_unit_weight_recovers_contact_expert(self):
        # When
        output = blend(self.a_phc, self.a_im, np.ones(BODY_DOF), np.zeros(BODY_DOF), self.mu, self.basis)

        # Then
        np.testing.assert_allclose(output.action, self.a_im, atol=1e-12)

    def test_interpolation_stays_between_experts(self):
        # Given
        w = np.linspace(0.0, 1.0, BODY_DOF)

        # When
        output = blend(self.a_phc, self.a_im, w, np.zeros(BODY_DOF), self.mu, self.basis)

        # Then
        low = np.minimum(self.a_phc, self.a_im[:BODY_DOF])
        high = np.maximum(self.a_phc, self.a_im[:BODY_DOF])
        self.assertTrue(np.all(output.action[:BODY_DOF] >= low - 1e-12))
        self.assertTrue(np.all(output.action[:BODY_DOF] <= high + 1e-12))

    def test_exploration_moves_along_basis(self):
        # Given
        vectors = np.zeros((BODY_DOF, 2))
        vectors[0, 0] = 1.0
        basis = EigenBasis(vectors, np.array([1.0, 0.0]), False)

        # When
        output = blend(self.a_phc, self.a_im, np.zeros(BODY_DOF), np.zeros(BODY_DOF), np.array([0.05, 0.07]), basis)

        # Then
        expected = self.a_phc.copy()
        expected[0] += 0.05
        np.testing.assert_allclose(output.action[:BODY_DOF], expected)

    def test_weight_shape_mismatch(self):
        # When, then raises
        with self.assertRaises(StructuralError):
            blend(self.a_phc, self.a_im, np.zeros(3), np.zeros(BODY_DOF), self.mu, self.basis)


class TestComposerStep(TestCase):

    def setUp(self) -> None:
        self.state, self.goal = observation_stubs()
        self.dynamic = ConstantExpert(np.zeros(BODY_DOF), covers_hands=False)
        self.contact = ConstantExpert(np.arange(FULL_DOF, dtype=float), covers_hands=True)

    def test_saturated_weights_select_each_expert(self):
        for bias, expected in ((-50.0, np.concatenate([np.zeros(BODY_DOF), [6.0, 7.0]])),
                               (50.0, np.arange(FULL_DOF, dtype=float))):
            with self.subTest(bias=bias):
                # Given
                head_bias = np.concatenate([np.full(BODY_DOF, bias), np.zeros(BODY_DOF + 4)])
                params = composer_params(head_bias=head_bias)

                # When
                result = composer_step(params, (self.dynamic, self.contact), self.state, self.goal, DeltaBuffer())

                # Then
                np.testing.assert_allclose(result.action, expected, atol=1e-12)

    def test_step_pushes_expert_difference(self):
        # Given
        buffer = DeltaBuffer()

        # When
        result = composer_step(composer_params(), (self.dynamic, self.contact), self.state, self.goal, buffer)

        # Then
        self.assertIs(result.buffer, buffer)
        np.testing.assert_array_equal(buffer.as_array(), [np.arange(BODY_DOF, dtype=float)])
        self.assertTrue(result.basis.stale)

    def test_exploration_can_be_disabled(self):
        # Given
        head_bias = np.concatenate([np.zeros(2 * BODY_DOF), np.full(4, 50.0)])
        params = composer_params(head_bias=head_bias)
        buffer = DeltaBuffer()
        for delta in np.random.default_rng(4).normal(size=(8, BODY_DOF)):
            buffer.push(delta)

        # When
        result = composer_step(params, (self.dynamic, self.contact), self.state, self.goal, buffer,
                               use_exploration=False)

        # Then
        np.testing.assert_array_equal(result.output.mu, np.zeros(4))
        np.testing.assert_allclose(result.action[:BODY_DOF], 0.5 * np.arange(BODY_DOF, dtype=float))


def test_params_document_round_trip_keeps_outputs():
    # Given
    params = composer_params()
    params = params.with_flat(np.random.default_rng(5).normal(size=len(params.flatten())))
    observation = np.random.default_rng(6).normal(size=params.observation_size)

    # When
    restored = ComposerParams.from_document(params.to_document())

    # Then
    np.testing.assert_array_equal(composer_forward(restored, observation).w, composer_forward(params, observation).w)
    assert restored.hidden == (4,)


def test_params_malformed_document():
    # When, then raises
    with pytest.raises(ConfigurationError):
        ComposerParams.from_document({'layers': [{'weight': [[0.0]]}]})


def test_params_groups_cover_every_parameter():
    # Given
    params = composer_params()

    # When
    groups = params.parameter_groups()

    # Then
    assert len(groups) == len(params.flatten())
    assert groups.count('head_bias') == params.output_size


def test_params_reject_non_positive_rho():
    # When, then raises
    with pytest.raises(ConfigurationError):
        composer_params(rho=0.0)
