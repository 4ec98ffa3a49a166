"""Orientation losses (QLoss, PLoss, SLoss, SMLoss), their gradients and the combined training loss.

Rotation losses are evaluated per aggregated object quaternion. Dense
per-pixel maps are offered for the pixel-wise L2 and QLoss variants only.
"""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from dense_pose_aggregation.errors import AtMinimumWarning, EmptyModel
from dense_pose_aggregation.geometry import as_quaternion, quat_to_rotmat

DEFAULT_QLOSS_EPSILON = 1e-4
DEFAULT_DEPTH_SCALE = 100.0
AT_MINIMUM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha_seg: float = 1.0
    alpha_trans: float = 1.0
    alpha_rot: float = 1.0
    depth_scale: float = DEFAULT_DEPTH_SCALE

    def __post_init__(self):
        if min(self.alpha_seg, self.alpha_trans, self.alpha_rot) < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def for_rotation_loss(cls, rotation_loss):
        """1 for the L2 and QLoss variants, 100 for the shape-matching losses."""
        if rotation_loss in ('l2', 'qloss'):
            return cls(alpha_rot=1.0)
        if rotation_loss in ('smloss', 'ploss', 'sloss'):
            return cls(alpha_rot=100.0)
        raise ValueError(f"unknown rotation loss '{rotation_loss}'")


def _model_points(model):
    points = np.asarray(getattr(model, 'points', model), dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyModel("the point model is empty")
    return points


### QLoss

def qloss(q_bar, q, epsilon=DEFAULT_QLOSS_EPSILON):
    dot = float(as_quaternion(q_bar) @ as_quaternion(q))
    return float(np.log(epsilon + 1.0 - abs(dot)))


def grad_qloss(q_bar, q, epsilon=DEFAULT_QLOSS_EPSILON):
    """d qloss / d q_bar; zero with an AtMinimumWarning where |<q_bar, q>| reaches 1."""
    q_bar, q = as_quaternion(q_bar), as_quaternion(q)
    dot = float(q_bar @ q)
    if abs(dot) >= 1.0 - AT_MINIMUM_TOLERANCE:
        warnings.warn(f"QLoss is at its minimum (|dot| = {abs(dot)!r}); gradient set to zero",
                      AtMinimumWarning, stacklevel=2)
        return np.zeros(4)
    return -np.sign(dot) * q / (epsilon + 1.0 - abs(dot))


def qloss_map(predicted, ground_truth, mask, epsilon=DEFAULT_QLOSS_EPSILON):
    """Per-pixel QLoss between ``(4, H, W)`` quaternion planes; NaN outside ``mask``.

    Predictions are normalised first; zero-norm pixels count as orthogonal.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    norms = np.linalg.norm(predicted, axis=0)
    units = predicted / np.where(norms > 0, norms, 1.0)
    dots = np.abs(np.sum(units * ground_truth, axis=0))
    return np.where(mask, np.log(epsilon + 1.0 - dots), np.nan)


def l2_quaternion_map(predicted, ground_truth, mask):
    """Per-pixel squared L2 distance between raw predictions and targets; NaN outside ``mask``."""
    difference = np.asarray(predicted, dtype=np.float64) - np.asarray(ground_truth, dtype=np.float64)
    return np.where(mask, np.sum(difference ** 2, axis=0), np.nan)


### Shape-matching losses

def _ploss_terms(q_tilde, q, points):
    difference = points @ (quat_to_rotmat(q_tilde) - quat_to_rotmat(q)).T
    return np.sum(difference ** 2, axis=1)


def ploss(q_tilde, q, model):
    points = _model_points(model)
    return float(_ploss_terms(q_tilde, q, points).sum() / (2 * len(points)))


def sloss(q_tilde, q, model):
    points = _model_points(model)
    predicted = points @ quat_to_rotmat(q_tilde).T
    target = points @ quat_to_rotmat(q).T
    nearest = cdist(predicted, target, 'sqeuclidean').min(axis=1)
    # The identity match is one of the candidates of the minimum.
    nearest = np.minimum(nearest, _ploss_terms(q_tilde, q, points))
    return float(nearest.sum() / (2 * len(points)))


def smloss(q_tilde, q, model):
    if model.symmetric:
        return sloss(q_tilde, q, model)
    return ploss(q_tilde, q, model)


### Gradients

def _rotmat_partials(q):
    """dR/dw, dR/dx, dR/dy, dR/dz of the homogeneous quaternion-to-rotation map."""
    w, x, y, z = as_quaternion(q)
    return 2.0 * np.array([
        [[w, -z, y], [z, w, -x], [-y, x, w]],
        [[x, y, z], [y, -x, -w], [z, w, -x]],
        [[-y, x, w], [x, y, z], [-w, z, -y]],
        [[-z, -w, x], [w, -z, y], [x, y, z]],
    ])


def _homogeneous_rotmat(q):
    w, x, y, z = as_quaternion(q)
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def _loss_gradient(q_tilde, target_points, points):
    # loss = 1/(2m) sum ||R(q_tilde) x - y||^2 with y the matched target of x
    residual = points @ _homogeneous_rotmat(q_tilde).T - target_points
    gradient_wrt_rotation = residual.T @ points / len(points)
    return np.einsum('kij,ij->k', _rotmat_partials(q_tilde), gradient_wrt_rotation)


def grad_ploss(q_tilde, q, model):
    """Gradient of PLoss w.r.t. the 4 components of ``q_tilde`` (unit input expected).

    Use project_to_tangent to compare with derivatives taken on the unit sphere.
    """
    points = _model_points(model)
    return _loss_gradient(as_quaternion(q_tilde), points @ quat_to_rotmat(q).T, points)


def sloss_matches(q_tilde, q, model):
    """Index of the nearest target point for every rotated model point."""
    points = _model_points(model)
    predicted = points @ quat_to_rotmat(q_tilde).T
    target = points @ quat_to_rotmat(q).T
    return np.argmin(cdist(predicted, target, 'sqeuclidean'), axis=1)


def grad_sloss(q_tilde, q, model):
    """Subgradient of SLoss with the nearest-point correspondences held fixed.

    It is the gradient wherever the correspondences do not change in a
    neighbourhood of ``q_tilde`` (see sloss_matches).
    """
    points = _model_points(model)
    target = points @ quat_to_rotmat(q).T
    return _loss_gradient(as_quaternion(q_tilde), target[sloss_matches(q_tilde, q, model)], points)


def project_to_tangent(q, gradient):
    q = as_quaternion(q) / np.linalg.norm(q)
    gradient = np.asarray(gradient, dtype=np.float64)
    return gradient - (gradient @ q) * q


### Segmentation, translation and combined loss

def nll_segmentation(class_scores, labels):
    """Mean of -log p(true class) over all pixels; scores are ``(C, H, W)`` probabilities."""
    class_scores = np.asarray(class_scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rows, cols = np.indices(labels.shape)
    probabilities = class_scores[labels, rows, cols]
    return float(-np.mean(np.log(np.clip(probabilities, 1e-12, None))))


def translation_l2(predicted_directions, target_directions, predicted_depth, target_depth, mask,
                   depth_scale=DEFAULT_DEPTH_SCALE):
    """Mean squared error of the center-direction and depth planes over ``mask``.

    The depth term is multiplied by ``depth_scale`` to balance its smaller magnitude.
    """
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return 0.0
    direction_error = np.sum((np.asarray(predicted_directions, dtype=np.float64)
                              - np.asarray(target_directions, dtype=np.float64)) ** 2, axis=0)
    depth_error = (np.asarray(predicted_depth, dtype=np.float64)
                   - np.asarray(target_depth, dtype=np.float64)) ** 2
    return float((direction_error[mask].sum() + depth_scale * depth_error[mask].sum()) / count)


def combined_loss(segmentation, translation, rotation, weights=LossWeights()):
    return (weights.alpha_seg * segmentation
            + weights.alpha_trans * translation
            + weights.alpha_rot * rotation)
