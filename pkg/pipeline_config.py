import os
from pathlib import Path

from composer_training import WORKERS
from diffusion_planner import DEFAULT_ONSET_DELAY_S, DEFAULT_STEPS
from exceptions import ConfigurationError
from harness_config import DEFAULT_CONFIG_PATH, HarnessConfig, load_harness_config
from metrics import STYLES, SuccessSpec
from object_align import ANCHOR_HALF_WIDTH


def parse_seeds(seeds):
    if isinstance(seeds, (list, tuple)):
        parsed = [int(seed) for seed in seeds]
    else:
        try:
            parsed = [int(seed) for seed in str(seeds).split(',') if seed.strip()]
        except ValueError as err:
            raise ConfigurationError(f'Seeds must be a comma separated list of integers, got "{seeds}"') from err
    if not parsed:
        raise ConfigurationError('At least one seed is required')
    return parsed


def _option(kwargs, name, environment_variable, default):
    value = kwargs.get(name)
    return value if value is not None else os.getenv(environment_variable, default)


class PipelineConfig:

    def __init__(self, **kwargs):
        self.reference_path = kwargs.get('reference_path')
        self.output_dir = Path(_option(kwargs, 'output_dir', 'HOI_OUTPUT_DIR', 'output'))
        self.harness_config_path = Path(_option(kwargs, 'harness_config_path', 'HOI_HARNESS_CONFIG',
                                                str(DEFAULT_CONFIG_PATH)))
        self.seeds = parse_seeds(_option(kwargs, 'seeds', 'HOI_SEEDS', '0'))
        self.seed = int(_option(kwargs, 'seed', 'HOI_SEED', self.seeds[0]))
        self.onset_delay_s = float(_option(kwargs, 'onset_delay_s', 'HOI_ONSET_DELAY', DEFAULT_ONSET_DELAY_S))
        self.planner_steps = int(_option(kwargs, 'planner_steps', 'HOI_PLANNER_STEPS', DEFAULT_STEPS))
        self.blend_mode = _option(kwargs, 'blend_mode', 'HOI_BLEND', 'mlp_pca')
        self.style = _option(kwargs, 'style', 'HOI_STYLE', 'JumpForward')
        self.interaction_joints = _option(kwargs, 'interaction_joints', 'HOI_INTERACTION_JOINTS', 'interaction')
        self.budget = int(_option(kwargs, 'budget', 'HOI_TRAIN_BUDGET', 20))
        self.workers = int(_option(kwargs, 'workers', 'HOI_TRAIN_WORKERS', WORKERS))
        self.anchor_half_width = float(_option(kwargs, 'anchor_half_width', 'HOI_ANCHOR_HALF_WIDTH',
                                              ANCHOR_HALF_WIDTH))
        self.validate()

    def validate(self):
        if self.reference_path is not None and not Path(self.reference_path).is_file():
            raise FileNotFoundError(f'Reference clip not found: {self.reference_path}')
        if not self.harness_config_path.is_file():
            raise FileNotFoundError(f'Harness config not found: {self.harness_config_path}')
        if self.style not in STYLES:
            raise ConfigurationError(f'Unknown motion style "{self.style}", expected one of {list(STYLES)}')
        if self.planner_steps < 1:
            raise ConfigurationError(f'Planner needs at least one denoising step, got {self.planner_steps}')
        if self.onset_delay_s < 0:
            raise ConfigurationError(f'Onset delay must be non-negative, got {self.onset_delay_s}')
        if self.budget < 0:
            raise ConfigurationError(f'Training budget must be non-negative, got {self.budget}')
        if self.workers < 1:
            raise ConfigurationError(f'Training needs at least one worker, got {self.workers}')
        if not self.anchor_half_width > 0:
            raise ConfigurationError(f'Anchor half width must be positive, got {self.anchor_half_width}')

    @property
    def success_spec(self) -> SuccessSpec:
        return SuccessSpec(self.style)

    def harness_config(self) -> HarnessConfig:
        return load_harness_config(self.harness_config_path)
