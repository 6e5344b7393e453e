import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from collections import OrderedDict
from pathlib import Path

import numpy as np

from blend_policies import BLEND_LOG_FIELDS, BLEND_MODES, make_blend_policy
from composer import ComposerParams
from composer_training import cross_entropy_search, write_learning_curve
from diffusion_planner import detect_onset, joint_set_by_name, plan_motion
from exceptions import ClipParseError, ConfigurationError, DegenerateConfigurationError, ExpertStepError, \
    FrameTagError, IntegrationError, NoInteractionError, SimulationDivergedError, StructuralError, \
    TransformValidationError, UndefinedMetricError, UnknownStyleError
from generate_demo_clips import DemoClipGenerator
from metrics import REPORT_FIELDS, SUMMARY_FIELDS, MetricsReport, aggregate, detect_hand_contacts, evaluate_episode, \
    format_summary, summary_table
from motion_core import HOIReference
from motion_file import load_clip, save_clip
from object_align import align_reference
from pipeline_config import PipelineConfig
from sim_harness import ImitationTask, grasp_points

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

EXIT_MISSING_FILE = 2
EXIT_VALIDATION = 3
EXIT_DIVERGED = 4
VALIDATION_ERRORS = (ClipParseError, ConfigurationError, DegenerateConfigurationError, FrameTagError,
                     IntegrationError, NoInteractionError, StructuralError, TransformValidationError,
                     UndefinedMetricError, UnknownStyleError)
SUMMARY_TABLE_FIELDS = ['mode'] + SUMMARY_FIELDS
ABLATION_FIELDS = SUMMARY_TABLE_FIELDS + ['train_s']


def sha256_of(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(artifact_path, command, inputs, config: PipelineConfig, **extra) -> Path:
    manifest = {
        'command': command,
        'artifact': Path(artifact_path).name,
        'inputs': [{'path': str(path), 'sha256': sha256_of(path)} for path in inputs],
        'seeds': config.seeds,
        'harness_config_sha256': config.harness_config().digest(),
        **extra,
    }
    manifest_path = Path(f'{artifact_path}.manifest.json')
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest_path


def read_manifest(artifact_path) -> dict:
    manifest_path = Path(f'{artifact_path}.manifest.json')
    if not manifest_path.is_file():
        return {}
    return json.loads(manifest_path.read_text())


def write_csv(path, fieldnames, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=fieldnames, extrasaction='ignore')
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def artifact_stem(path, suffix):
    name = Path(path).name
    return name[:-len(suffix)] if name.endswith(suffix) else Path(path).stem


def _format_log_value(value):
    if isinstance(value, float):
        return f'{value:.6f}'
    return value


def _config_from_args(args) -> PipelineConfig:
    return PipelineConfig(reference_path=getattr(args, 'ref', None), output_dir=getattr(args, 'out', None),
                          harness_config_path=getattr(args, 'config', None), seeds=getattr(args, 'seeds', None),
                          seed=getattr(args, 'seed', None), onset_delay_s=getattr(args, 'onset_delay', None),
                          planner_steps=getattr(args, 'steps', None), blend_mode=getattr(args, 'blend', None),
                          style=getattr(args, 'style', None), budget=getattr(args, 'budget', None),
                          interaction_joints=getattr(args, 'interaction_joints', None),
                          workers=getattr(args, 'workers', None),
                          anchor_half_width=getattr(args, 'anchor_half_width', None))


def _load_params(path):
    if path is None:
        return None
    if not Path(path).is_file():
        raise FileNotFoundError(f'Parameter file not found: {path}')
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigurationError(f'Parameter file {path} is not valid JSON: {err}') from err
    return ComposerParams.from_document(document)


def cmd_demo(args):
    config = _config_from_args(args)
    names = DemoClipGenerator.DEMO_PACK + (DemoClipGenerator.HELPER_CLIPS if args.with_helpers else ())
    for path in DemoClipGenerator(config.seed).generate_demo_pack(config.output_dir, names):
        write_manifest(path, 'demo', [], config, clip=path.stem, generator_seed=config.seed)
    return 0


def cmd_plan(args):
    config = _config_from_args(args)
    reference = load_clip(config.reference_path)
    library = [load_clip(path).human for path in args.library] if args.library else None
    joints = joint_set_by_name(reference.skeleton, config.interaction_joints)
    planned, plan = plan_motion(reference, library, config.onset_delay_s, config.planner_steps, config.seed,
                                joints)
    output_path = config.output_dir.joinpath(f'{Path(config.reference_path).stem}.planned.json')
    save_clip(HOIReference(planned, reference.object, reference.contacts, reference.object_geometry), output_path)
    write_manifest(output_path, 'plan', [config.reference_path, *(args.library or [])], config,
                   onset_frame=plan.onset_frame, onset_delay_s=config.onset_delay_s,
                   planner_steps=config.planner_steps, interaction_joints=sorted(plan.interaction_joints))
    logger.info(f'Planned motion written to {output_path}')
    return 0


def cmd_align(args):
    config = _config_from_args(args)
    reference = load_clip(config.reference_path)
    planned = load_clip(args.plan)
    onset = read_manifest(args.plan).get('onset_frame')
    if onset is None:
        onset = detect_onset(reference.contacts, reference.fps, config.onset_delay_s)
    aligned = align_reference(planned.human, reference, onset, anchor_half_width=config.anchor_half_width)
    output_path = config.output_dir.joinpath(f'{artifact_stem(args.plan, ".planned.json")}.aligned.json')
    save_clip(aligned, output_path)
    write_manifest(output_path, 'align', [config.reference_path, args.plan], config, onset_frame=onset,
                   anchor_half_width=config.anchor_half_width)
    logger.info(f'Aligned HOI written to {output_path}')
    return 0


def run_rollouts(reference, config: PipelineConfig, mode, params=None):
    task = ImitationTask(reference, config.harness_config())
    policy = make_blend_policy(mode, params)
    results = []
    for seed in config.seeds:
        results.append(task.rollout(policy, seed))
        logger.info(f'{mode} seed {seed}: {results[-1].termination} after {results[-1].steps} steps, '
                    f'return {results[-1].episode_return:.3f}')
    return results


def cmd_rollout(args):
    config = _config_from_args(args)
    reference = load_clip(config.reference_path)
    params = _load_params(args.params)
    task = ImitationTask(reference, config.harness_config())
    policy = make_blend_policy(config.blend_mode, params)
    stem = f'{Path(config.reference_path).stem}.{config.blend_mode}.seed{config.seed}'
    result = task.rollout(policy, config.seed)
    trajectory_path = save_clip(result.trajectory, config.output_dir.joinpath(f'{stem}.rollout.json'))
    rows = [{field: _format_log_value(log.get(field, '')) for field in BLEND_LOG_FIELDS} for log in result.logs]
    write_csv(config.output_dir.joinpath(f'{stem}.blend_log.csv'), BLEND_LOG_FIELDS, rows)
    inputs = [config.reference_path] + ([args.params] if args.params else [])
    write_manifest(trajectory_path, 'rollout', inputs, config, blend_mode=config.blend_mode, seed=config.seed,
                   termination=result.termination, steps=result.steps,
                   episode_return=round(result.episode_return, 6))
    logger.info(f'Rollout "{result.termination}" after {result.steps} steps written to {trajectory_path}')
    return 0


def cmd_train(args):
    config = _config_from_args(args)
    reference = load_clip(config.reference_path)
    task = ImitationTask(reference, config.harness_config())
    policy = make_blend_policy(config.blend_mode)
    started = time.perf_counter()
    result = cross_entropy_search(task, policy, config.budget, config.seed, workers=config.workers)
    train_s = time.perf_counter() - started
    stem = f'{Path(config.reference_path).stem}.{config.blend_mode}'
    params_path = config.output_dir.joinpath(f'{stem}.params.json')
    params_path.parent.mkdir(parents=True, exist_ok=True)
    params_path.write_text(json.dumps(result.params.to_document()))
    write_learning_curve(result.learning_curve, config.output_dir.joinpath(f'{stem}.learning_curve.csv'))
    write_manifest(params_path, 'train', [config.reference_path], config, blend_mode=config.blend_mode,
                   budget=config.budget, seed=config.seed, initial_return=round(result.initial_return, 6),
                   final_return=round(result.final_return, 6), train_s=round(train_s, 3))
    return 0


def _first_contact(reference: HOIReference):
    contact_frames = np.flatnonzero(reference.contacts.any_hand)
    return int(contact_frames[0]) if len(contact_frames) else 0


def evaluate_file(executed_path, reference: HOIReference, config: PipelineConfig) -> MetricsReport:
    """Metrics for one executed clip; clips that never went through the harness get geometric hand contacts."""
    executed = load_clip(executed_path)
    termination = read_manifest(executed_path).get('termination')
    if termination is None:
        contacts = detect_hand_contacts(executed, grasp_points(reference))
        logger.info(f'Kinematic clip {executed_path}: {int(contacts.any_hand.sum())} of {len(executed)} frames '
                    f'with hand-object contact')
        executed = HOIReference(executed.human, executed.object, contacts, executed.object_geometry)
    return evaluate_episode(executed, reference, config.success_spec, termination, _first_contact(reference))


def cmd_evaluate(args):
    config = _config_from_args(args)
    reference = load_clip(config.reference_path)
    report = evaluate_file(args.executed, reference, config)
    manifest = read_manifest(args.executed)
    row = OrderedDict(run=Path(args.executed).name, blend_mode=manifest.get('blend_mode', ''),
                      seed=manifest.get('seed', ''), style=config.style, **report.to_row())
    stem = artifact_stem(args.executed, ".json")
    report_path = write_csv(config.output_dir.joinpath(f'{stem}.report.csv'), list(row), [row])
    write_manifest(report_path, 'evaluate', [args.executed, config.reference_path], config, style=config.style)
    print(summary_table([row], list(row)))
    return 0


def _read_report_rows(reports_dir):
    rows = []
    for path in sorted(Path(reports_dir).glob('*.report.csv')):
        with open(path) as report_file:
            rows.extend(csv.DictReader(report_file))
    return rows


def _report_from_row(row) -> MetricsReport:
    values = {name: float(row[name]) for name in MetricsReport.field_names() if name != 'success'}
    return MetricsReport(success=row['success'] == '1', **values)


def cmd_report(args):
    config = _config_from_args(args)
    if not Path(args.reports).is_dir():
        raise FileNotFoundError(f'Report directory not found: {args.reports}')
    rows = _read_report_rows(args.reports)
    if not rows:
        raise UndefinedMetricError('no reports')
    run_fields = ['run', 'blend_mode', 'seed', 'style'] + REPORT_FIELDS
    write_csv(config.output_dir.joinpath('runs.csv'), run_fields, rows)
    summary_rows = []
    for mode in sorted({row['blend_mode'] for row in rows}):
        summary = aggregate([_report_from_row(row) for row in rows if row['blend_mode'] == mode])
        summary_rows.append({'mode': mode, **format_summary(summary)})
    write_csv(config.output_dir.joinpath('summary.csv'), SUMMARY_TABLE_FIELDS, summary_rows)
    print(summary_table(summary_rows, SUMMARY_TABLE_FIELDS))
    return 0


def ablation_row(reference: HOIReference, config: PipelineConfig, mode) -> dict:
    task = ImitationTask(reference, config.harness_config())
    policy = make_blend_policy(mode)
    params, train_s = None, 0.0
    if policy.trainable:
        started = time.perf_counter()
        params = cross_entropy_search(task, policy, config.budget, config.seed, workers=config.workers).params
        train_s = time.perf_counter() - started
    reports = [evaluate_episode(result.trajectory, reference, config.success_spec, result.termination,
                                _first_contact(reference))
               for result in run_rollouts(reference, config, mode, params)]
    return {'mode': mode, **format_summary(aggregate(reports)), 'train_s': f'{train_s:.3f}'}


def cmd_ablate(args):
    config = _config_from_args(args)
    modes = [mode.strip() for mode in args.modes.split(',') if mode.strip()]
    unknown = [mode for mode in modes if mode not in BLEND_MODES]
    if not modes or unknown:
        raise ConfigurationError(f'Unknown or empty blend modes {unknown}, expected from {sorted(BLEND_MODES)}')
    reference = load_clip(config.reference_path)
    rows = [ablation_row(reference, config, mode) for mode in modes]
    output_path = write_csv(config.output_dir.joinpath(f'{Path(config.reference_path).stem}.ablation.csv'),
                            ABLATION_FIELDS, rows)
    write_manifest(output_path, 'ablate', [config.reference_path], config, modes=modes, budget=config.budget)
    print(summary_table(rows, ABLATION_FIELDS))
    return 0


def parse_arguments(argv=None):
    parser = argparse.ArgumentParser(description='Plan, align, execute and evaluate dynamic human-object '
                                                 'interaction clips.')
    subparsers = parser.add_subparsers(dest='command', required=True)

    def add_common(subparser, needs_ref=True):
        if needs_ref:
            subparser.add_argument('--ref', help='reference motion file', type=str, required=True)
        subparser.add_argument('--out', help='output directory (default $HOI_OUTPUT_DIR or ./output)', type=str)
        subparser.add_argument('--config', help='harness config JSON (default $HOI_HARNESS_CONFIG or bundled)',
                               type=str)
        subparser.add_argument('--seed', help='seed for this run', type=int)
        subparser.add_argument('--seeds', help='comma separated evaluation seeds (default $HOI_SEEDS or 0)',
                               type=str)

    demo = subparsers.add_parser('demo', help='write the seeded demo clip pack')
    add_common(demo, needs_ref=False)
    demo.add_argument('--with-helpers', help='also write helper clips', action='store_true', default=False)
    demo.set_defaults(handler=cmd_demo)

    plan = subparsers.add_parser('plan', help='inpainting motion planning from a reference clip')
    add_common(plan)
    plan.add_argument('--steps', help='denoising steps (default $HOI_PLANNER_STEPS or 50)', type=int)
    plan.add_argument('--onset-delay', help='seconds after first contact (default $HOI_ONSET_DELAY or 1.5)',
                      type=float)
    plan.add_argument('--interaction-joints', help='"interaction", "none", "all" or comma separated joint names',
                      type=str)
    plan.add_argument('--library', help='motion files for the denoiser library', nargs='*', default=None)
    plan.set_defaults(handler=cmd_plan)

    align = subparsers.add_parser('align', help='recover the object trajectory for a planned clip')
    add_common(align)
    align.add_argument('--plan', help='planned motion file written by "plan"', type=str, required=True)
    align.add_argument('--onset-delay', help='used when the plan has no manifest', type=float)
    align.add_argument('--anchor-half-width', help='half width in metres of the hand-local anchor square '
                                                  '(default $HOI_ANCHOR_HALF_WIDTH or 0.02)', type=float)
    align.set_defaults(handler=cmd_align)

    rollout = subparsers.add_parser('rollout', help='execute a clip in the harness with one blend mode')
    add_common(rollout)
    rollout.add_argument('--blend', help='blend mode (default $HOI_BLEND or mlp_pca)', choices=sorted(BLEND_MODES))
    rollout.add_argument('--params', help='parameter file written by "train"', type=str)
    rollout.set_defaults(handler=cmd_rollout)

    train = subparsers.add_parser('train', help='cross-entropy training of a blend policy')
    add_common(train)
    train.add_argument('--blend', help='blend mode (default $HOI_BLEND or mlp_pca)', choices=sorted(BLEND_MODES))
    train.add_argument('--budget', help='CEM iterations (default $HOI_TRAIN_BUDGET or 20)', type=int)
    train.add_argument('--workers', help='parallel candidate evaluations (default $HOI_TRAIN_WORKERS or 4)', type=int)
    train.set_defaults(handler=cmd_train)

    evaluate = subparsers.add_parser('evaluate', help='metrics and style success for an executed clip')
    add_common(evaluate)
    evaluate.add_argument('--executed', help='executed motion file', type=str, required=True)
    evaluate.add_argument('--style', help='motion style (default $HOI_STYLE or JumpForward)', type=str)
    evaluate.set_defaults(handler=cmd_evaluate)

    report = subparsers.add_parser('report', help='aggregate a directory of evaluation reports')
    add_common(report, needs_ref=False)
    report.add_argument('--reports', help='directory holding *.report.csv files', type=str, required=True)
    report.set_defaults(handler=cmd_report)

    ablate = subparsers.add_parser('ablate', help='train, roll out and evaluate several blend modes')
    add_common(ablate)
    ablate.add_argument('--modes', help='comma separated blend modes', type=str,
                        default=','.join(BLEND_MODES))
    ablate.add_argument('--budget', help='CEM iterations per trainable mode', type=int)
    ablate.add_argument('--workers', help='parallel candidate evaluations (default $HOI_TRAIN_WORKERS or 4)', type=int)
    ablate.add_argument('--style', help='motion style (default $HOI_STYLE or JumpForward)', type=str)
    ablate.set_defaults(handler=cmd_ablate)
    return parser.parse_args(argv)


def run_command(args):
    """Run one subcommand, mapping failures to an exit code and an ``error[category]`` line on stderr."""
    try:
        return args.handler(args)
    except FileNotFoundError as err:
        print(f'error[missing-file]: {err}', file=sys.stderr)
        return EXIT_MISSING_FILE
    except VALIDATION_ERRORS as err:
        print(f'error[validation]: {err}', file=sys.stderr)
        return EXIT_VALIDATION
    except SimulationDivergedError as err:
        print(f'error[simulation-diverged]: {err}', file=sys.stderr)
        return EXIT_DIVERGED
    except ExpertStepError as err:
        print(f'error[expert-failure]: {err}', file=sys.stderr)
        return EXIT_DIVERGED


def main(argv=None):
    args = parse_arguments(argv)
    logging.basicConfig(handlers=[logging.StreamHandler(sys.stdout)], level=os.getenv('LOG_LEVEL') or logging.ERROR)
    logger.setLevel(os.getenv('LOG_LEVEL') or logging.INFO)
    exit(run_command(args))


if __name__ == "__main__":
    main()
