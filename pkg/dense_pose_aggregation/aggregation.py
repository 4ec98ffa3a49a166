import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from dense_pose_aggregation.errors import (DegenerateMean, DimensionMismatch, EigenFailure,
                                           EmptyObject, EmptySet, MethodSyntaxError)
from dense_pose_aggregation.geometry import (ZERO_NORM_TOLERANCE, canonicalize_sign,
                                             normalize_rows, rotmats_from_quats, quat_to_rotmat)
from dense_pose_aggregation.random_streams import generator

logger = logging.getLogger(__name__)

DEFAULT_RANSAC_ITERATIONS = 50
JACOBI_TOLERANCE = 1e-12
JACOBI_MAX_SWEEPS = 100
DEGENERATE_EIGENVALUE_GAP = 1e-10
DEGENERATE_MEAN_NORM = 1e-9


class Weighting(str, Enum):
    UNIT = 'unit'
    NORM = 'norm'
    SEGMENTATION = 'seg'


@dataclass(eq=False)
class PredictionSet:
    """Unit quaternions and weights gathered for one object hypothesis."""
    quats: np.ndarray
    weights: np.ndarray
    source_pixels: np.ndarray

    def __post_init__(self):
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(-1, 4)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.source_pixels = np.asarray(self.source_pixels, dtype=np.int64).reshape(-1, 2)
        n = len(self.quats)
        if n == 0:
            raise EmptySet("a prediction set needs at least one quaternion")
        if len(self.weights) != n or len(self.source_pixels) != n:
            raise DimensionMismatch((n,), (len(self.weights), len(self.source_pixels)))
        if np.any(self.weights < 0) or not np.any(self.weights > 0):
            raise ValueError("weights must be non-negative with at least one positive weight")

    def __len__(self):
        return len(self.quats)

    @classmethod
    def from_quaternions(cls, quats, weights=None):
        """Build a set from raw quaternions, normalising them; pixels are numbered 0..n-1."""
        units, _ = normalize_rows(quats)
        n = len(units)
        weights = np.ones(n) if weights is None else weights
        pixels = np.stack([np.zeros(n, dtype=np.int64), np.arange(n)], axis=1)
        return cls(units, weights, pixels)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return PredictionSet(self.quats[indices], self.weights[indices], self.source_pixels[indices])

    def with_unit_weights(self):
        return PredictionSet(self.quats, np.ones(len(self)), self.source_pixels)


### Gathering

def gather_object_predictions(dpm, mask, weighting=Weighting.NORM, class_id=None):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != dpm.shape:
        raise DimensionMismatch(dpm.shape, mask.shape)
    weighting = Weighting(weighting)

    rows, cols = np.nonzero(mask)
    raw = dpm.quaternions[:, rows, cols].T.astype(np.float64)
    norms = np.linalg.norm(raw, axis=1)
    valid = norms > ZERO_NORM_TOLERANCE
    if not np.all(valid):
        logger.debug("dropping %d zero-norm quaternion pixels (class %s)", int((~valid).sum()), class_id)
    if not np.any(valid):
        raise EmptyObject(class_id)
    rows, cols, raw, norms = rows[valid], cols[valid], raw[valid], norms[valid]

    if weighting is Weighting.UNIT:
        weights = np.ones(len(norms))
    elif weighting is Weighting.NORM:
        weights = norms
    else:
        if class_id is None:
            weights = dpm.class_scores[:, rows, cols].max(axis=0).astype(np.float64)
        else:
            weights = dpm.class_scores[class_id, rows, cols].astype(np.float64)
        if not np.any(weights > 0):
            raise EmptyObject(class_id, "all segmentation weights are zero")

    return PredictionSet(raw / norms[:, None], weights, np.stack([rows, cols], axis=1))


### Averaging

def average_naive(prediction_set):
    """Component-wise mean after aligning every sign to the first quaternion."""
    quats = prediction_set.quats
    signs = np.where(quats @ quats[0] < 0, -1.0, 1.0)
    mean = (signs[:, None] * quats).mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm <= DEGENERATE_MEAN_NORM:
        raise DegenerateMean(norm)
    return mean / norm


def jacobi_eigh(matrix, tolerance=JACOBI_TOLERANCE, max_sweeps=JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi eigen-decomposition of a small symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` sorted by descending eigenvalue,
    eigenvectors in the columns. ``tolerance`` is relative to the Frobenius
    norm of the input; entries below a tenth of it are not rotated away.
    """
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    vectors = np.eye(n)
    threshold = tolerance * float(np.linalg.norm(a))
    negligible = 0.1 * threshold

    def off_diagonal_norm():
        return float(np.linalg.norm(a - np.diag(np.diag(a))))

    for _ in range(max_sweeps):
        if off_diagonal_norm() <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= negligible:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                t = t if theta >= 0 else -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                column_p, column_q = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * column_p - s * column_q, s * column_p + c * column_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = c * row_p - s * row_q, s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vector_p, vector_q = vectors[:, p].copy(), vectors[:, q].copy()
                vectors[:, p], vectors[:, q] = c * vector_p - s * vector_q, s * vector_p + c * vector_q
    else:
        residual = off_diagonal_norm()
        if residual > threshold:
            raise EigenFailure(max_sweeps, residual)

    order = np.argsort(-np.diag(a), kind='stable')
    return np.diag(a)[order], vectors[:, order]


@dataclass(frozen=True)
class MarkleyResult:
    quaternion: np.ndarray
    eigenvalues: np.ndarray
    degenerate: bool


def markley_eigen(prediction_set):
    quats, weights = prediction_set.quats, prediction_set.weights
    accumulator = (quats * (weights / weights.sum())[:, None]).T @ quats
    accumulator = 0.5 * (accumulator + accumulator.T)
    eigenvalues, eigenvectors = jacobi_eigh(accumulator)
    degenerate = bool(eigenvalues[0] - eigenvalues[1] <= DEGENERATE_EIGENVALUE_GAP)
    if degenerate:
        logger.warning("quaternion average is ambiguous: top eigenvalues %.3e and %.3e tie",
                       eigenvalues[0], eigenvalues[1])
    top = eigenvectors[:, 0] / np.linalg.norm(eigenvectors[:, 0])
    return MarkleyResult(canonicalize_sign(top), eigenvalues, degenerate)


def average_markley(prediction_set):
    return markley_eigen(prediction_set).quaternion


def orientation_cost(prediction_set, q):
    """Weighted sum of squared Frobenius distances between R(q) and every R(q_i)."""
    differences = rotmats_from_quats(prediction_set.quats) - quat_to_rotmat(q)[None, :, :]
    return float(prediction_set.weights @ np.sum(differences ** 2, axis=(1, 2)))


### Pruning

def prune_by_norm(prediction_set, fraction):
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"pruning fraction must be in [0, 1], got {fraction}")
    n = len(prediction_set)
    keep = max(1, math.ceil(round((1.0 - fraction) * n, 9)))
    if keep >= n:
        return prediction_set
    rows, cols = prediction_set.source_pixels.T
    order = np.lexsort((cols, rows, -prediction_set.weights))
    return prediction_set.subset(np.sort(order[:keep]))


### Clustering

def ransac_cluster(prediction_set, threshold, iterations=DEFAULT_RANSAC_ITERATIONS,
                   weighted=True, seed=0, refine=False):
    """Pick the sampled hypothesis with the largest inlier weight.

    Hypotheses are drawn with probability proportional to their weight
    (uniformly when ``weighted`` is false, which also scores by inlier count).
    The hypothesis itself is returned unless ``refine`` asks for the Markley
    average of its inliers.
    """
    if prediction_set is None or len(prediction_set) == 0:
        raise EmptySet("nothing to cluster")
    if not 0.0 < threshold < math.pi:
        raise ValueError(f"clustering threshold must be in (0, pi) radians, got {threshold}")
    if iterations < 1:
        raise ValueError(f"at least one RANSAC iteration is needed, got {iterations}")

    quats = prediction_set.quats
    weights = prediction_set.weights if weighted else np.ones(len(quats))

    cumulative = np.cumsum(weights) / weights.sum()
    last_drawable = int(np.flatnonzero(weights > 0)[-1])
    draws = generator(seed).random(iterations)
    hypotheses = np.minimum(np.searchsorted(cumulative, draws, side='right'), last_drawable)

    # d(q, h) < t  <=>  |<q, h>| > cos(t / 2)
    dots = np.abs(quats @ quats[hypotheses].T)
    inliers = dots > math.cos(0.5 * threshold)
    scores = weights @ inliers
    best = int(np.argmax(scores))
    logger.debug("RANSAC winner: iteration %d, inlier weight %.4g of %.4g", best, scores[best], weights.sum())

    if refine:
        return average_markley(prediction_set.subset(np.flatnonzero(inliers[:, best])))
    return quats[hypotheses[best]].copy()


### Methods

@dataclass(frozen=True)
class NaiveAverage:
    gather_weighting = Weighting.UNIT

    @property
    def label(self):
        return 'naive average'


@dataclass(frozen=True)
class MarkleyAverage:
    weighting: Weighting = Weighting.NORM

    @property
    def gather_weighting(self):
        return self.weighting

    @property
    def label(self):
        return {Weighting.UNIT: 'unit weights', Weighting.NORM: 'norm weights',
                Weighting.SEGMENTATION: 'segm. weights'}[self.weighting]


@dataclass(frozen=True)
class Pruned:
    fraction: float
    weighting: Weighting = Weighting.NORM

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"pruning fraction must be in [0, 1], got {self.fraction}")

    @property
    def gather_weighting(self):
        return self.weighting

    @property
    def label(self):
        return f'pruned({self.fraction:g})'


@dataclass(frozen=True)
class Single:
    gather_weighting = Weighting.NORM

    @property
    def label(self):
        return 'single'


@dataclass(frozen=True)
class Ransac:
    threshold: float
    iterations: int = DEFAULT_RANSAC_ITERATIONS
    weighted: bool = True
    refine: bool = False

    def __post_init__(self):
        if not 0.0 < self.threshold < math.pi:
            raise ValueError(f"clustering threshold must be in (0, pi) radians, got {self.threshold}")
        if self.iterations < 1:
            raise ValueError(f"at least one RANSAC iteration is needed, got {self.iterations}")

    @property
    def gather_weighting(self):
        return Weighting.NORM if self.weighted else Weighting.UNIT

    @property
    def label(self):
        return f"{'W-RANSAC' if self.weighted else 'RANSAC'}({self.threshold:g})"


def aggregate_orientation(prediction_set, method, seed=0):
    if isinstance(method, NaiveAverage):
        return average_naive(prediction_set)
    if isinstance(method, MarkleyAverage):
        if method.weighting is Weighting.UNIT:
            prediction_set = prediction_set.with_unit_weights()
        return average_markley(prediction_set)
    if isinstance(method, Pruned):
        return average_markley(prune_by_norm(prediction_set, method.fraction))
    if isinstance(method, Single):
        return prune_by_norm(prediction_set, 1.0).quats[0].copy()
    if isinstance(method, Ransac):
        return ransac_cluster(prediction_set, method.threshold, method.iterations,
                              method.weighted, seed, method.refine)
    raise TypeError(f"unknown aggregation method {method!r}")


### Method grammar: naive | markley[:unit|:norm|:seg] | pruned:<fraction>[:norm|:seg]
###                 | single | ransac:<t>[:<iterations>] | wransac:<t>[:<iterations>]

def _parse_weighting(text, token):
    try:
        return Weighting(token)
    except ValueError:
        raise MethodSyntaxError(text, f"unknown weighting '{token}' (expected unit, norm or seg)")


def _parse_number(text, token, what):
    try:
        value = float(token)
    except ValueError:
        raise MethodSyntaxError(text, f"{what} '{token}' is not a number")
    if not math.isfinite(value):
        raise MethodSyntaxError(text, f"{what} must be finite")
    return value


def parse_method(text):
    name, *args = text.strip().lower().split(':')
    if name == 'naive' and not args:
        return NaiveAverage()
    if name == 'single' and not args:
        return Single()
    if name == 'markley' and len(args) <= 1:
        return MarkleyAverage(_parse_weighting(text, args[0]) if args else Weighting.NORM)
    if name == 'pruned' and 1 <= len(args) <= 2:
        fraction = _parse_number(text, args[0], 'pruning fraction')
        if not 0.0 <= fraction <= 1.0:
            raise MethodSyntaxError(text, "pruning fraction must be in [0, 1]")
        weighting = _parse_weighting(text, args[1]) if len(args) == 2 else Weighting.NORM
        if weighting is Weighting.UNIT:
            raise MethodSyntaxError(text, "pruning needs norm or seg weights")
        return Pruned(fraction, weighting)
    if name in ('ransac', 'wransac') and 1 <= len(args) <= 2:
        threshold = _parse_number(text, args[0], 'threshold')
        if not 0.0 < threshold < math.pi:
            raise MethodSyntaxError(text, "threshold must be in (0, pi) radians")
        iterations = DEFAULT_RANSAC_ITERATIONS
        if len(args) == 2:
            if not args[1].isdigit() or int(args[1]) < 1:
                raise MethodSyntaxError(text, f"iteration count '{args[1]}' must be a positive integer")
            iterations = int(args[1])
        return Ransac(threshold, iterations, weighted=(name == 'wransac'))
    raise MethodSyntaxError(text, "expected naive, markley[:unit|:norm|:seg], pruned:<fraction>[:norm|:seg], "
                                  "single, ransac:<t> or wransac:<t>")
