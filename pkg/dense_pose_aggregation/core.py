### Pipeline entry points: dense prediction map -> object poses -> comparison tables.

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from dense_pose_aggregation.aggregation import aggregate_orientation, gather_object_predictions, parse_method
from dense_pose_aggregation.errors import DegenerateMean, EigenFailure, EmptyObject, EmptyDistances
from dense_pose_aggregation.geometry import quat_angular_distance
from dense_pose_aggregation.hough_voting import DEFAULT_HOUGH_PARAMS, detect_objects
from dense_pose_aggregation.metrics import DEFAULT_AUC_MAX_THRESHOLD, evaluate_scene_set, match_instances
from dense_pose_aggregation.random_streams import derive_seed
from dense_pose_aggregation.structures import PoseEstimate

logger = logging.getLogger(__name__)

DEFAULT_METHOD = 'markley:norm'
DEFAULT_POSE_PARAMS = dict(DEFAULT_HOUGH_PARAMS, orientation_support='inliers')
ORIENTATION_SUPPORTS = ('inliers', 'segmentation')

POSE_COLUMNS = ['scene_id', 'class_id', 'instance', 'qw', 'qx', 'qy', 'qz', 'tx', 'ty', 'tz', 'confidence']


@dataclass(eq=False)
class SceneEstimate:
    scene_id: int
    poses: list = field(default_factory=list)
    # (class_id, instance, reason) of every object that produced no pose
    skipped: list = field(default_factory=list)


def _final_params(params):
    final_params = dict(DEFAULT_POSE_PARAMS)
    final_params.update(params or {})
    if final_params['orientation_support'] not in ORIENTATION_SUPPORTS:
        raise ValueError(f"orientation_support must be one of {ORIENTATION_SUPPORTS}, "
                         f"got {final_params['orientation_support']!r}")
    return final_params


def _as_method(method):
    return parse_method(method) if isinstance(method, str) else method


def estimate_poses(dpm, method=DEFAULT_METHOD, params=None, seed=0, scene_id=0):
    """Hough translation plus aggregated orientation for every object instance of a map.

    Instances are numbered per class in descending vote order; the RANSAC
    stream of instance ``k`` of class ``c`` is ``(seed, scene_id, c, k)``.
    """
    method = _as_method(method)
    final_params = _final_params(params)
    result = SceneEstimate(scene_id)

    for class_id in dpm.present_classes():
        class_mask = dpm.class_mask(class_id)
        hypotheses = detect_objects(dpm, class_id, final_params)
        if not hypotheses:
            logger.warning("scene %d class %d: no center hypothesis", scene_id, class_id)
            result.skipped.append((class_id, 0, "no center hypothesis"))
            continue
        for instance, hypothesis in enumerate(hypotheses):
            if final_params['orientation_support'] == 'inliers':
                support = hypothesis.inliers & class_mask
            else:
                support = class_mask
            try:
                prediction_set = gather_object_predictions(dpm, support, method.gather_weighting, class_id)
                q = aggregate_orientation(prediction_set, method, derive_seed(seed, scene_id, class_id, instance))
            except (EmptyObject, DegenerateMean, EigenFailure) as error:
                logger.warning("scene %d class %d instance %d skipped: %s", scene_id, class_id, instance, error)
                result.skipped.append((class_id, instance, str(error)))
                continue
            result.poses.append(PoseEstimate(class_id, q, hypothesis.translation,
                                             float(hypothesis.votes), scene_id))
    return result


def poses_to_frame(poses):
    rows = []
    instances = {}
    for each in poses:
        key = (each.scene_id, each.class_id)
        instances[key] = instances.get(key, -1) + 1
        rows.append([each.scene_id, each.class_id, instances[key], *each.q, *each.t, each.confidence])
    return pd.DataFrame(rows, columns=POSE_COLUMNS)


def apply_pose_estimation(dpm, method=DEFAULT_METHOD, params=None, seed=0, scene_id=0):
    final_params = _final_params(params)
    logger.info("final params: %s", final_params)
    return poses_to_frame(estimate_poses(dpm, method, final_params, seed, scene_id).poses)


### Method comparison

def _angular_errors(poses, gts):
    errors = []
    for gt, pred in match_instances(poses, gts):
        errors.append(np.inf if pred is None else np.degrees(quat_angular_distance(pred.q, gt.q)))
    return np.array(errors)


def compare_aggregation_methods(scenes, methods, seed=0, params=None, models=None,
                                max_threshold=DEFAULT_AUC_MAX_THRESHOLD):
    """One row per method: angular error statistics over matched instances, AUCs when ``models`` is given.

    ``scenes`` is a sequence of ``(dpm, gt_poses)`` pairs; the scene id is
    taken from the ground-truth poses.
    """
    final_params = _final_params(params)
    logger.info("final params: %s", final_params)

    rows = []
    for text in methods:
        method = _as_method(text)
        predictions, ground_truths = [], []
        for dpm, gt_poses in scenes:
            scene_id = gt_poses[0].scene_id if gt_poses else 0
            predictions += estimate_poses(dpm, method, final_params, seed, scene_id).poses
            ground_truths += list(gt_poses)

        errors = _angular_errors(predictions, ground_truths)
        matched = errors[np.isfinite(errors)]
        row = {
            'method': text if isinstance(text, str) else method.label,
            'label': method.label,
            'instances': len(errors),
            'missed': int(np.sum(~np.isfinite(errors))),
            'mean_angular_error': float(matched.mean()) if len(matched) else np.nan,
            'median_angular_error': float(np.median(matched)) if len(matched) else np.nan,
        }
        if models is not None:
            try:
                report = evaluate_scene_set(predictions, ground_truths, models, max_threshold=max_threshold)
                row.update(auc_p=report.total['auc_p'], auc_s=report.total['auc_s'])
            except EmptyDistances:
                row.update(auc_p=np.nan, auc_s=np.nan)
        rows.append(row)
    return pd.DataFrame(rows)


def angular_errors_per_instance(scenes, method, seed=0, params=None):
    """Matched angular errors in degrees, ordered by scene then class; inf for a missed instance."""
    method = _as_method(method)
    errors = []
    for dpm, gt_poses in scenes:
        scene_id = gt_poses[0].scene_id if gt_poses else 0
        errors.append(_angular_errors(estimate_poses(dpm, method, params, seed, scene_id).poses, gt_poses))
    return np.concatenate(errors) if errors else np.zeros(0)
