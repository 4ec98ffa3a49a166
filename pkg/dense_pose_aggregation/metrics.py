import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from dense_pose_aggregation.errors import ClassMismatch, EmptyDistances, MissingModel
from dense_pose_aggregation.geometry import quat_angular_distance, transform_points

logger = logging.getLogger(__name__)

DEFAULT_AUC_MAX_THRESHOLD = 0.1
TOTAL = 'total'


### Pose distances

def _model_point_distances(pred, gt, model):
    """Per-point ADD distances and per-point ADD-S (nearest point) distances."""
    if pred.class_id != gt.class_id:
        raise ClassMismatch(pred.class_id, gt.class_id)
    predicted = transform_points(pred.q, pred.t, model.points)
    target = transform_points(gt.q, gt.t, model.points)
    corresponding = np.linalg.norm(predicted - target, axis=1)
    nearest = cdist(predicted, target).min(axis=1)
    # The corresponding point is itself a candidate, so ADD-S never exceeds ADD.
    return corresponding, np.minimum(nearest, corresponding)


def add_metric(pred, gt, model):
    corresponding, _ = _model_point_distances(pred, gt, model)
    return float(corresponding.mean())


def adds_metric(pred, gt, model):
    _, nearest = _model_point_distances(pred, gt, model)
    return float(nearest.mean())


def translation_error(pred, gt):
    return float(np.linalg.norm(np.asarray(pred.t) - np.asarray(gt.t)))


def rotation_error(pred, gt):
    return quat_angular_distance(pred.q, gt.q)


### Accuracy curve and AUC

def _as_distances(distances):
    distances = np.asarray(distances, dtype=np.float64).reshape(-1)
    if len(distances) == 0:
        raise EmptyDistances("no distances to evaluate")
    return distances


def accuracy_curve(distances, thresholds):
    distances = _as_distances(distances)
    thresholds = np.asarray(thresholds, dtype=np.float64).reshape(-1)
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be ascending")
    return np.array([np.mean(distances < threshold) for threshold in thresholds])


def auc(distances, max_threshold=DEFAULT_AUC_MAX_THRESHOLD):
    """Area under the accuracy curve on [0, max_threshold], scaled to [0, 100].

    Exact integral of the empirical step curve: each distance contributes
    ``max(0, max_threshold - d) / max_threshold``.
    """
    if not max_threshold > 0:
        raise ValueError(f"max_threshold must be positive, got {max_threshold}")
    distances = _as_distances(distances)
    covered = np.minimum(distances, max_threshold) / max_threshold
    return float(np.clip(100.0 * (1.0 - covered.mean()), 0.0, 100.0))


### Segmentation

def segmentation_iou(predicted_labels, gt_labels, class_id=None):
    """IoU of one class, or the mean IoU over foreground classes present in either map."""
    predicted_labels = np.asarray(predicted_labels)
    gt_labels = np.asarray(gt_labels)
    if class_id is None:
        classes = np.union1d(np.unique(predicted_labels), np.unique(gt_labels))
        classes = classes[classes != 0]
        if len(classes) == 0:
            return 1.0
        return float(np.mean([segmentation_iou(predicted_labels, gt_labels, each) for each in classes]))
    predicted, target = predicted_labels == class_id, gt_labels == class_id
    union = np.logical_or(predicted, target).sum()
    return float(np.logical_and(predicted, target).sum() / union) if union else 1.0


### Scene-set evaluation

@dataclass(eq=False)
class EvalReport:
    table: pd.DataFrame
    instances: pd.DataFrame
    non_sym_c: float
    sym_c: float

    def row(self, name):
        return self.table.loc[self.table['class'] == str(name)].iloc[0]

    @property
    def total(self):
        return self.row(TOTAL)

    def to_text(self):
        columns = ['class', 'n', 'auc_p', 'auc_s', 'rot_auc_p', 'rot_auc_s', 'translation_error']
        header = f"{'':>12}{'6D pose':^20}{'Rotation only':^20}"
        body = self.table[columns].to_string(index=False, float_format=lambda value: f"{value:.2f}")
        footer = f"NonSymC AUC P: {self.non_sym_c:.2f}    SymC AUC S: {self.sym_c:.2f}"
        return "\n".join([header, body, footer])

    def to_kv_lines(self):
        lines = []
        for _, each in self.table.iterrows():
            lines.append(f"class={each['class']} auc_p={_kv(each['auc_p'])} auc_s={_kv(each['auc_s'])} "
                         f"n={each['n']} rot_auc_p={_kv(each['rot_auc_p'])} "
                         f"rot_auc_s={_kv(each['rot_auc_s'])} trans_err={_kv(each['translation_error'], 6)}")
        lines.append(f"summary=class_average nonsym_c={_kv(self.non_sym_c)} sym_c={_kv(self.sym_c)}")
        return lines


def _kv(value, digits=4):
    return repr(round(float(value), digits))


def match_instances(preds, gts):
    """Greedy matching per (scene, class): confident predictions pick the nearest free GT."""
    predictions = defaultdict(list)
    for each in preds:
        predictions[(each.scene_id, each.class_id)].append(each)
    ground_truths = defaultdict(list)
    for each in gts:
        ground_truths[(each.scene_id, each.class_id)].append(each)

    matches = []
    for key in sorted(ground_truths):
        candidates = sorted(predictions.get(key, []), key=lambda each: -each.confidence)
        free = list(ground_truths[key])
        paired = {}
        for pred in candidates:
            if not free:
                break
            nearest = min(range(len(free)), key=lambda index: translation_error(pred, free[index]))
            paired[id(free[nearest])] = pred
            free.pop(nearest)
        for gt in ground_truths[key]:
            matches.append((gt, paired.get(id(gt))))
    return matches


def _per_class_auc(instances, column, classes, max_threshold):
    return {each: auc(instances.loc[instances['class_id'] == each, column], max_threshold) for each in classes}


def evaluate_scene_set(preds, gts, models, symmetric_classes=(), max_threshold=DEFAULT_AUC_MAX_THRESHOLD):
    """Score predictions against ground truth the way the YCB-Video tables do.

    ``models`` maps class id to PointModel. Every GT instance is matched to at
    most one prediction; an unmatched GT scores an infinite distance.
    """
    symmetric = set(symmetric_classes) | {class_id for class_id, model in models.items() if model.symmetric}
    records = []
    for gt, pred in match_instances(preds, gts):
        if gt.class_id not in models:
            raise MissingModel(gt.class_id)
        record = {'scene_id': gt.scene_id, 'class_id': gt.class_id, 'matched': pred is not None}
        if pred is None:
            record.update(add=np.inf, adds=np.inf, rot_add=np.inf, rot_adds=np.inf,
                          translation_error=np.nan, rotation_error=np.nan)
        else:
            model = models[gt.class_id]
            rotation_only = type(pred)(pred.class_id, pred.q, gt.t, pred.confidence, pred.scene_id)
            corresponding, nearest = _model_point_distances(pred, gt, model)
            rot_corresponding, rot_nearest = _model_point_distances(rotation_only, gt, model)
            record.update(add=corresponding.mean(), adds=nearest.mean(),
                          rot_add=rot_corresponding.mean(), rot_adds=rot_nearest.mean(),
                          translation_error=translation_error(pred, gt),
                          rotation_error=rotation_error(pred, gt))
        records.append(record)
    for pred in preds:
        if pred.class_id not in models:
            raise MissingModel(pred.class_id)

    instances = pd.DataFrame(records, columns=['scene_id', 'class_id', 'matched', 'add', 'adds', 'rot_add',
                                               'rot_adds', 'translation_error', 'rotation_error'])
    if instances.empty:
        raise EmptyDistances("no ground-truth instances to evaluate")

    classes = sorted(instances['class_id'].unique())
    rows = []
    for class_id in classes + [TOTAL]:
        subset = instances if class_id == TOTAL else instances.loc[instances['class_id'] == class_id]
        name = TOTAL if class_id == TOTAL else (models[class_id].name or str(class_id))
        matched_errors = subset['translation_error'].dropna()
        rows.append({
            'class': name,
            'class_id': -1 if class_id == TOTAL else int(class_id),
            'symmetric': class_id in symmetric,
            'n': int(len(subset)),
            'auc_p': auc(subset['add'], max_threshold),
            'auc_s': auc(subset['adds'], max_threshold),
            'rot_auc_p': auc(subset['rot_add'], max_threshold),
            'rot_auc_s': auc(subset['rot_adds'], max_threshold),
            'translation_error': float(matched_errors.mean()) if len(matched_errors) else np.nan,
        })
    table = pd.DataFrame(rows)

    auc_p = _per_class_auc(instances, 'add', classes, max_threshold)
    auc_s = _per_class_auc(instances, 'adds', classes, max_threshold)
    non_symmetric = [each for each in classes if each not in symmetric]
    symmetric_present = [each for each in classes if each in symmetric]
    non_sym_c = float(np.mean([auc_p[each] for each in non_symmetric])) if non_symmetric else np.nan
    sym_c = float(np.mean([auc_s[each] for each in symmetric_present])) if symmetric_present else np.nan
    logger.info("evaluated %d instances over %d classes", len(instances), len(classes))
    return EvalReport(table, instances, non_sym_c, sym_c)
