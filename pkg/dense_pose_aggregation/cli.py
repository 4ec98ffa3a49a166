"""Command line: ``dense-pose-aggregation <synth|aggregate|evaluate|losscheck|bench|compare> ...``.

Exit codes: 0 ok, 2 usage, 3 I/O or file format, 4 some objects produced no
pose (output still written), 5 missing point model, 6 loss check failed.
Diagnostics go to stderr at the level named by ``DPA_LOG``
(error, warn, info, debug); results go to stdout.
"""
import argparse
import logging
import os
import re
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from dense_pose_aggregation import __version__
from dense_pose_aggregation.aggregation import aggregate_orientation, gather_object_predictions, parse_method
from dense_pose_aggregation.core import DEFAULT_METHOD, compare_aggregation_methods, estimate_poses
from dense_pose_aggregation.errors import (AtMinimumWarning, BadParams, DensePoseError, DpmFormatError,
                                           EmptyModel, EmptyObject, MethodSyntaxError, MissingModel, ParseError)
from dense_pose_aggregation.hough_voting import DEFAULT_HOUGH_PARAMS, detect_objects
from dense_pose_aggregation.losses import (grad_ploss, grad_qloss, grad_sloss, ploss, project_to_tangent, qloss,
                                           sloss, sloss_matches, smloss)
from dense_pose_aggregation.metrics import evaluate_scene_set
from dense_pose_aggregation.random_streams import derive_seed, generator
from dense_pose_aggregation.synth import (NoiseConfig, SceneConfig, corrupt, make_model, random_orientations,
                                          render_dense, sample_scene)
from dense_pose_aggregation.tensor_io import (read_dpm, read_model_directory, read_poses, write_dpm,
                                              write_point_model, write_poses)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_EMPTY_OBJECT = 4
EXIT_MISSING_MODEL = 5
EXIT_CHECK_FAILED = 6

LOG_LEVELS = {'error': logging.ERROR, 'warn': logging.WARNING, 'info': logging.INFO, 'debug': logging.DEBUG}

FINITE_DIFFERENCE_STEP = 1e-6
GRADIENT_TOLERANCE = 1e-4
BENCH_WARMUP_RUNS = 3


class UsageError(DensePoseError):
    pass


def configure_logging():
    level_name = os.environ.get('DPA_LOG', 'warn').lower()
    level = LOG_LEVELS.get(level_name, logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level, format='%(levelname)s %(name)s: %(message)s')
    if level_name not in LOG_LEVELS:
        logger.warning("unknown DPA_LOG level '%s', using warn", level_name)


def scene_id_from_path(path, fallback):
    numbers = re.findall(r'\d+', Path(path).stem)
    return int(numbers[-1]) if numbers else fallback


def _run_ordered(function, tasks, jobs):
    """Apply ``function`` to every task tuple; results come back in task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [function(*each) for each in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(function, *zip(*tasks)))


### synth

def _synth_scene(scene_id, seed, scene_config, noise, out_dir):
    scene = sample_scene(scene_config, seed, scene_id)
    dpm = corrupt(render_dense(scene), noise, seed, scene_id)
    write_dpm(dpm, Path(out_dir) / f"scene_{scene_id:04d}.dpm")
    foreground = int(np.sum(dpm.labels() != 0))
    classes = ','.join(str(each.class_id) for each in scene.objects)
    return scene.poses(), f"scene={scene_id} objects={len(scene.objects)} classes={classes} pixels={foreground}"


def cmd_synth(args):
    if args.scenes < 1:
        raise UsageError(f"--scenes must be at least 1, got {args.scenes}")
    noise = NoiseConfig(sigma_rot=args.noise_rot, sigma_dir=args.noise_dir, sigma_depth=args.noise_depth,
                        outlier_fraction=args.outliers, outlier_norm_mean=args.outlier_norm,
                        norm_confidence=args.kappa, norm_jitter=args.norm_jitter)
    scene_config = SceneConfig(min_objects=args.min_objects, max_objects=args.max_objects)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    models_dir = Path(args.models) if args.models else out_dir / 'models'
    models_dir.mkdir(parents=True, exist_ok=True)
    for model in scene_config.models:
        write_point_model(model, models_dir / f"{model.class_id:02d}_{model.name}.xyz")

    tasks = [(scene_id, args.seed, scene_config, noise, out_dir) for scene_id in range(args.scenes)]
    gt_poses = []
    for poses, summary in _run_ordered(_synth_scene, tasks, args.jobs):
        gt_poses += poses
        print(summary)
    write_poses(gt_poses, args.gt)
    return EXIT_OK


### aggregate

def _hough_params(args):
    return {
        'min_votes': args.min_votes,
        'nms_radius': args.nms_radius,
        'cos_threshold': args.cos_threshold,
        'max_hypotheses': args.max_hypotheses,
        'depth_reducer': args.depth_reducer,
        'refine_center': not args.no_refine_center,
        'orientation_support': args.support,
    }


def _aggregate_file(path, scene_id, method, params, seed):
    return estimate_poses(read_dpm(path), method, params, seed, scene_id)


def cmd_aggregate(args):
    parse_method(args.method)
    params = _hough_params(args)
    tasks = [(path, scene_id_from_path(path, index), args.method, params, args.seed)
             for index, path in enumerate(args.inputs)]

    poses, skipped = [], 0
    for result in _run_ordered(_aggregate_file, tasks, args.jobs):
        poses += result.poses
        for class_id, instance, reason in result.skipped:
            print(f"empty_object scene={result.scene_id} class={class_id} instance={instance} reason={reason!r}",
                  file=sys.stderr)
            skipped += 1
    write_poses(poses, args.out)
    print(f"poses={len(poses)} skipped={skipped}")
    return EXIT_EMPTY_OBJECT if skipped else EXIT_OK


### evaluate

def _class_list(text):
    try:
        return [int(each) for each in text.split(',') if each.strip()]
    except ValueError:
        raise UsageError(f"--sym expects comma-separated class ids, got {text!r}") from None


def cmd_evaluate(args):
    models = read_model_directory(args.models)
    report = evaluate_scene_set(read_poses(args.pred), read_poses(args.gt), models,
                                symmetric_classes=_class_list(args.sym), max_threshold=args.max_threshold)
    if args.format == 'kv':
        print("\n".join(report.to_kv_lines()))
    else:
        print(report.to_text())
    return EXIT_OK


### losscheck

def _random_unit_quaternion(rng):
    return random_orientations(rng, 1)[0]


def _relative_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)


def _stencil(q, on_sphere):
    """``(forward, backward)`` central-difference samples around ``q``, one pair per component."""
    samples = []
    for index in range(4):
        step = np.zeros(4)
        step[index] = FINITE_DIFFERENCE_STEP
        forward, backward = q + step, q - step
        if on_sphere:
            forward, backward = forward / np.linalg.norm(forward), backward / np.linalg.norm(backward)
        samples.append((forward, backward))
    return samples


def _finite_difference(function, q, on_sphere):
    return np.array([(function(forward) - function(backward)) / (2 * FINITE_DIFFERENCE_STEP)
                     for forward, backward in _stencil(q, on_sphere)])


def _matches_stable(q_tilde, q, model):
    """True when no nearest-point correspondence switches inside the difference stencil."""
    center = sloss_matches(q_tilde, q, model)
    return all(np.array_equal(sloss_matches(each, q, model), center)
               for pair in _stencil(q_tilde, on_sphere=True) for each in pair)


def _losscheck_model(loss):
    if loss == 'smloss':
        return make_model('ring', {'radius': 0.05}, 360, class_id=1, name='ring')
    return make_model('box', {'size': (0.08, 0.12, 0.05)}, 200, class_id=1, name='box')


def _check_trial(loss, model, q_tilde, q, grad_check):
    """Returns (gradient relative error, number of violated properties).

    The error is 0 without ``grad_check`` and None when the trial sits on a
    correspondence switch of SLoss, where the loss has no gradient.
    """
    failures = 0
    if loss == 'qloss':
        if not np.isclose(qloss(q_tilde, q), qloss(-q_tilde, q)):
            failures += 1
        if qloss(q, q) > qloss(q_tilde, q) + 1e-12:
            failures += 1
        if not grad_check:
            return 0.0, failures
        numeric = _finite_difference(lambda each: qloss(each, q), q_tilde, on_sphere=False)
        return _relative_error(grad_qloss(q_tilde, q), numeric), failures

    value, reference = {'ploss': ploss, 'sloss': sloss, 'smloss': smloss}[loss], ploss(q_tilde, q, model)
    if value(q_tilde, q, model) < 0 or value(q, q, model) > 1e-12:
        failures += 1
    if loss != 'ploss' and value(q_tilde, q, model) > reference:
        failures += 1
    if not grad_check:
        return 0.0, failures
    uses_sloss = loss == 'sloss' or (loss == 'smloss' and model.symmetric)
    if uses_sloss and not _matches_stable(q_tilde, q, model):
        return None, failures
    gradient = (grad_sloss if uses_sloss else grad_ploss)(q_tilde, q, model)
    numeric = _finite_difference(lambda each: value(each, q, model), q_tilde, on_sphere=True)
    return _relative_error(project_to_tangent(q_tilde, gradient), numeric), failures


def cmd_losscheck(args):
    if args.trials < 1:
        raise UsageError(f"--trials must be at least 1, got {args.trials}")
    model = _losscheck_model(args.loss)
    rng = generator(args.seed, 0)

    worst, failures, skipped = 0.0, 0, 0
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', AtMinimumWarning)
        for _ in range(args.trials):
            q = _random_unit_quaternion(rng)
            q_tilde = _random_unit_quaternion(rng)
            # Keep the finite differences away from the non-smooth point |<q~, q>| = 1.
            while abs(q_tilde @ q) > 1 - 1e-3:
                q_tilde = _random_unit_quaternion(rng)
            error, violated = _check_trial(args.loss, model, q_tilde, q, args.grad_check)
            failures += violated
            if error is None:
                skipped += 1
            else:
                worst = max(worst, error)

    branch = args.loss
    if args.loss == 'smloss':
        branch = 'sloss' if model.symmetric else 'ploss'
    passed = failures == 0 and worst < GRADIENT_TOLERANCE
    if skipped:
        logger.info("%d of %d trials sit on a correspondence switch; gradient not compared", skipped, args.trials)
    print(f"loss={args.loss} branch={branch} model={model.name} trials={args.trials} "
          f"grad_check={int(args.grad_check)} max_rel_err={worst:.3e} property_failures={failures} "
          f"skipped={skipped} result={'pass' if passed else 'fail'}")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


### bench

def _time_stages(path, method, params, seed):
    timings = {}
    start = time.perf_counter()
    dpm = read_dpm(path)
    timings['load'] = time.perf_counter() - start

    start = time.perf_counter()
    detections = {class_id: detect_objects(dpm, class_id, params) for class_id in dpm.present_classes()}
    timings['hough'] = time.perf_counter() - start

    start = time.perf_counter()
    for class_id, hypotheses in detections.items():
        for instance, hypothesis in enumerate(hypotheses):
            try:
                prediction_set = gather_object_predictions(dpm, hypothesis.inliers, method.gather_weighting,
                                                           class_id)
            except EmptyObject:
                continue
            aggregate_orientation(prediction_set, method, derive_seed(seed, 0, class_id, instance))
    timings['aggregate'] = time.perf_counter() - start
    return timings


def cmd_bench(args):
    if args.iters < 1:
        raise UsageError(f"--iters must be at least 1, got {args.iters}")
    method = parse_method(args.method)
    params = dict(DEFAULT_HOUGH_PARAMS)
    runs = [_time_stages(args.input, method, params, args.seed)
            for _ in range(BENCH_WARMUP_RUNS + args.iters)][BENCH_WARMUP_RUNS:]
    for stage in ('load', 'hough', 'aggregate'):
        milliseconds = 1000.0 * np.array([each[stage] for each in runs])
        print(f"stage={stage} method={method.label.replace(' ', '_')} iters={args.iters} "
              f"median_ms={np.median(milliseconds):.3f} p95_ms={np.percentile(milliseconds, 95):.3f}")
    return EXIT_OK


### compare

def cmd_compare(args):
    methods = [each.strip() for each in args.methods.split(',') if each.strip()]
    for each in methods:
        parse_method(each)
    gt_poses = read_poses(args.gt)
    scenes = []
    for index, path in enumerate(args.inputs):
        scene_id = scene_id_from_path(path, index)
        scenes.append((read_dpm(path), [each for each in gt_poses if each.scene_id == scene_id]))
    models = read_model_directory(args.models) if args.models else None
    table = compare_aggregation_methods(scenes, methods, args.seed, _hough_params(args), models)
    print(table.to_string(index=False, float_format=lambda value: f"{value:.3f}"))
    return EXIT_OK


### Argument parsing

def _add_hough_flags(parser):
    parser.add_argument('--min-votes', type=int, default=DEFAULT_HOUGH_PARAMS['min_votes'])
    parser.add_argument('--nms-radius', type=float, default=DEFAULT_HOUGH_PARAMS['nms_radius'])
    parser.add_argument('--cos-threshold', type=float, default=DEFAULT_HOUGH_PARAMS['cos_threshold'])
    parser.add_argument('--max-hypotheses', type=int, default=DEFAULT_HOUGH_PARAMS['max_hypotheses'])
    parser.add_argument('--depth-reducer', choices=('mean', 'median'), default=DEFAULT_HOUGH_PARAMS['depth_reducer'])
    parser.add_argument('--no-refine-center', action='store_true',
                        help="use the vote peak instead of the least-squares ray intersection")
    parser.add_argument('--support', choices=('inliers', 'segmentation'), default='inliers',
                        help="pixels whose quaternions are aggregated per object")


def build_parser():
    parser = argparse.ArgumentParser(prog='dense-pose-aggregation',
                                     description="Dense 6D pose post-processing: Hough voting, "
                                                 "orientation aggregation, losses and metrics.")
    parser.add_argument('--version', action='version', version=__version__)
    commands = parser.add_subparsers(dest='command', required=True)

    synth = commands.add_parser('synth', help="generate synthetic dense prediction maps and GT poses")
    synth.add_argument('--scenes', type=int, required=True)
    synth.add_argument('--seed', type=int, default=0)
    synth.add_argument('--out', required=True, help="directory for the DPM files")
    synth.add_argument('--gt', required=True, help="ground-truth pose file")
    synth.add_argument('--models', help="directory for the point models (default: <out>/models)")
    synth.add_argument('--noise-rot', type=float, default=0.0, help="rotation noise std, radians")
    synth.add_argument('--noise-dir', type=float, default=0.0, help="center direction noise std, radians")
    synth.add_argument('--noise-depth', type=float, default=0.0, help="depth noise std, meters")
    synth.add_argument('--outliers', type=float, default=0.0, help="fraction of random quaternions")
    synth.add_argument('--outlier-norm', type=float, default=None, help="mean norm of outlier quaternions")
    synth.add_argument('--kappa', type=float, default=0.0, help="norm confidence: norm = 1 / (1 + kappa * error)")
    synth.add_argument('--norm-jitter', type=float, default=0.0)
    synth.add_argument('--min-objects', type=int, default=1)
    synth.add_argument('--max-objects', type=int, default=3)
    synth.add_argument('--jobs', type=int, default=1)
    synth.set_defaults(handler=cmd_synth)

    aggregate = commands.add_parser('aggregate', help="estimate poses from DPM files")
    aggregate.add_argument('--method', default=DEFAULT_METHOD)
    aggregate.add_argument('--in', dest='inputs', nargs='+', required=True)
    aggregate.add_argument('--out', required=True)
    aggregate.add_argument('--seed', type=int, default=0)
    aggregate.add_argument('--jobs', type=int, default=1)
    _add_hough_flags(aggregate)
    aggregate.set_defaults(handler=cmd_aggregate)

    evaluate = commands.add_parser('evaluate', help="score predicted poses against ground truth")
    evaluate.add_argument('--pred', required=True)
    evaluate.add_argument('--gt', required=True)
    evaluate.add_argument('--models', required=True, help="directory of *.xyz point models")
    evaluate.add_argument('--sym', default='', help="comma-separated symmetric class ids")
    evaluate.add_argument('--format', choices=('table', 'kv'), default='table')
    evaluate.add_argument('--max-threshold', type=float, default=0.1)
    evaluate.set_defaults(handler=cmd_evaluate)

    losscheck = commands.add_parser('losscheck', help="check a loss and its gradient on random instances")
    losscheck.add_argument('--loss', choices=('qloss', 'ploss', 'sloss', 'smloss'), required=True)
    losscheck.add_argument('--grad-check', action='store_true')
    losscheck.add_argument('--trials', type=int, default=100)
    losscheck.add_argument('--seed', type=int, default=0)
    losscheck.set_defaults(handler=cmd_losscheck)

    bench = commands.add_parser('bench', help="time the load, hough and aggregate stages")
    bench.add_argument('--in', dest='input', required=True)
    bench.add_argument('--method', default=DEFAULT_METHOD)
    bench.add_argument('--iters', type=int, default=50)
    bench.add_argument('--seed', type=int, default=0)
    bench.set_defaults(handler=cmd_bench)

    compare = commands.add_parser('compare', help="compare aggregation methods on DPM files")
    compare.add_argument('--in', dest='inputs', nargs='+', required=True)
    compare.add_argument('--gt', required=True)
    compare.add_argument('--methods', required=True, help="comma-separated method list")
    compare.add_argument('--models', help="directory of *.xyz point models; adds AUC columns")
    compare.add_argument('--seed', type=int, default=0)
    _add_hough_flags(compare)
    compare.set_defaults(handler=cmd_compare)
    return parser


def main(argv=None):
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except MissingModel as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_MISSING_MODEL
    except (UsageError, MethodSyntaxError, BadParams) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DpmFormatError, ParseError, EmptyModel) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_IO
    except (DensePoseError, ValueError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_USAGE
