"""Cross-entropy search over blend-policy parameters on one imitation task."""
import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Sequence

import numpy as np

from blend_policies import BlendPolicy, make_blend_policy
from composer import ComposerParams
from exceptions import ConfigurationError
from scripted_experts import make_scripted_experts
from sim_harness import ImitationTask

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

POPULATION = 16
ELITE_FRACTION = 0.25
EVALUATION_SEEDS = tuple(range(8))
EPISODES_PER_CANDIDATE = 2
WORKERS = 4
GROUP_STD = {'weight': 0.02, 'bias': 0.05, 'head_bias': 1.0}
EXTRA_STD_FRACTION = 0.1
LEARNING_CURVE_FIELDS = ['iteration', 'return', 'best_return']


@dataclass(frozen=True, eq=False)
class TrainingResult:
    params: ComposerParams
    learning_curve: List[dict]
    initial_return: float
    final_return: float


def mean_return(task: ImitationTask, policy: BlendPolicy, params: ComposerParams, seeds: Sequence[int]) -> float:
    candidate = policy.with_params(params)
    return float(np.mean([task.rollout(candidate, int(seed)).episode_return for seed in seeds]))


def candidate_returns(task: ImitationTask, policy: BlendPolicy, init_params: ComposerParams, candidates,
                      seeds: Sequence[int], workers=WORKERS) -> np.ndarray:
    """Mean return of every candidate vector, in candidate order whatever the worker count."""
    def evaluate(candidate):
        return mean_return(task, policy, init_params.with_flat(candidate), seeds)

    if workers <= 1:
        return np.array([evaluate(candidate) for candidate in candidates])
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return np.array(list(executor.map(evaluate, candidates)))


def cross_entropy_search(task: ImitationTask, policy: BlendPolicy, budget: int, seed=0,
                         init_params: ComposerParams = None, population=POPULATION, elite_fraction=ELITE_FRACTION,
                         evaluation_seeds: Sequence[int] = EVALUATION_SEEDS,
                         episodes_per_candidate=EPISODES_PER_CANDIDATE, workers=WORKERS) -> TrainingResult:
    if not policy.trainable:
        raise ConfigurationError(f'Blend mode "{policy.mode}" has no parameters to train')
    if budget < 0:
        raise ConfigurationError(f'Training budget must be non-negative, got {budget}')
    if population < 2 or not 0.0 < elite_fraction <= 1.0:
        raise ConfigurationError(f'Invalid population {population} / elite fraction {elite_fraction}')
    if workers < 1:
        raise ConfigurationError(f'Worker count must be at least 1, got {workers}')
    init_params = init_params or policy.initial_params(task)
    initial_return = mean_return(task, policy, init_params, evaluation_seeds)
    if budget == 0:
        return TrainingResult(init_params, [], initial_return, initial_return)

    rng = np.random.default_rng(seed)
    mean = init_params.flatten()
    initial_std = np.array([GROUP_STD[group] for group in init_params.parameter_groups()])
    std = initial_std.copy()
    elite_count = max(1, int(round(population * elite_fraction)))
    best_vector, best_score = mean.copy(), -np.inf
    curve = []

    for iteration in range(budget):
        episode_seeds = rng.integers(0, 2 ** 31 - 1, size=episodes_per_candidate)
        candidates = mean + std * rng.standard_normal((population, len(mean)))
        candidates[0] = mean
        scores = candidate_returns(task, policy, init_params, candidates, episode_seeds, workers)
        elites = candidates[np.argsort(-scores, kind='stable')[:elite_count]]
        if scores.max() > best_score:
            best_score = float(scores.max())
            best_vector = candidates[int(np.argmax(scores))].copy()
        decay = max(0.0, 1.0 - (iteration + 1) / budget)
        mean = elites.mean(axis=0)
        std = np.sqrt(elites.var(axis=0) + (EXTRA_STD_FRACTION * initial_std * decay) ** 2)
        curve.append({'iteration': iteration, 'return': float(scores[0]), 'best_return': best_score})
        logger.info(f'CEM iteration {iteration + 1}/{budget}: mean-candidate return {scores[0]:.3f}, '
                    f'best {best_score:.3f}')

    best_params = init_params.with_flat(best_vector)
    final_return = mean_return(task, policy, best_params, evaluation_seeds)
    if final_return < initial_return:
        logger.info(f'Search result {final_return:.3f} below initial {initial_return:.3f}, keeping initial parameters')
        return TrainingResult(init_params, curve, initial_return, initial_return)
    return TrainingResult(best_params, curve, initial_return, final_return)


def train_composer(task: ImitationTask, init_params: ComposerParams = None, budget=20, seed=0, mode='mlp_pca',
                   experts_factory: Callable = make_scripted_experts, **search_options) -> ComposerParams:
    policy = make_blend_policy(mode, experts_factory=experts_factory)
    return cross_entropy_search(task, policy, budget, seed, init_params, **search_options).params


def write_learning_curve(curve: List[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as curve_file:
        writer = csv.DictWriter(curve_file, fieldnames=LEARNING_CURVE_FIELDS)
        writer.writeheader()
        for row in curve:
            writer.writerow({'iteration': row['iteration'], 'return': f'{row["return"]:.6f}',
                             'best_return': f'{row["best_return"]:.6f}'})
    return path
