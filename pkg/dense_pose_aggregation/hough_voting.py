import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from dense_pose_aggregation.errors import DimensionMismatch, NoInliers, NonPositiveDepth
from dense_pose_aggregation.geometry import backproject

logger = logging.getLogger(__name__)

DEFAULT_HOUGH_PARAMS = {
    'min_votes': 50,
    'nms_radius': 20,
    'cos_threshold': 0.99,
    'max_hypotheses': 8,
    'depth_reducer': 'mean',
    'refine_center': True,
}

# Direction vectors shorter than this carry no direction (e.g. the center pixel itself).
MIN_DIRECTION_NORM = 0.5
VOTING_CHUNK_CELLS = 2_000_000


@dataclass(eq=False)
class CenterHypothesis:
    center: tuple
    votes: int
    inlier_count: int
    depth: float
    translation: np.ndarray
    inliers: np.ndarray = field(default=None, repr=False)


def _check_field(directions, mask):
    directions = np.asarray(directions)
    mask = np.asarray(mask, dtype=bool)
    if directions.ndim != 3 or directions.shape[0] != 2 or directions.shape[1:] != mask.shape:
        raise DimensionMismatch((2,) + mask.shape, directions.shape)
    return directions, mask


def voting_pixels(directions, mask):
    """Masked pixels that carry a direction, as ``(rows, cols, dx, dy)`` float64 arrays."""
    directions, mask = _check_field(directions, mask)
    dx = directions[0].astype(np.float64)
    dy = directions[1].astype(np.float64)
    usable = mask & (np.hypot(dx, dy) >= MIN_DIRECTION_NORM)
    rows, cols = np.nonzero(usable)
    return rows, cols, dx[rows, cols], dy[rows, cols]


def ray_walk(origin_major, origin_minor, step, slope, length_major, length_minor):
    """Cells crossed by rays stepping one cell at a time along their dominant axis.

    Ray ``i`` visits major coordinate ``origin_major[i] + k * step[i]`` for
    ``k = 0, 1, ...`` up to the image border, and the minor cell
    ``floor(origin_minor[i] + k * slope[i] + 0.5)``. Returns the visited
    ``(major, minor)`` cells of all rays, clipped to the image.
    """
    counts = np.where(step > 0, length_major - origin_major, origin_major + 1).astype(np.int64)
    starts = np.cumsum(counts) - counts
    owner = np.repeat(np.arange(len(counts)), counts)
    k = (np.arange(counts.sum()) - starts[owner]).astype(np.float64)
    major = origin_major[owner] + (k * step[owner]).astype(np.int64)
    minor = np.floor(origin_minor[owner] + k * slope[owner] + 0.5)
    inside = (minor >= 0) & (minor < length_minor)
    return major[inside], minor[inside].astype(np.int64)


### Voting

def cast_votes(directions, mask):
    directions, mask = _check_field(directions, mask)
    height, width = mask.shape
    votes = np.zeros(height * width, dtype=np.int64)
    rows, cols, dx, dy = voting_pixels(directions, mask)

    x_major = np.abs(dx) >= np.abs(dy)
    chunk = max(1, VOTING_CHUNK_CELLS // max(height, width))
    for start in range(0, len(rows), chunk):
        part = slice(start, start + chunk)
        r, c, ddx, ddy, xm = rows[part], cols[part], dx[part], dy[part], x_major[part]

        along_x, across_y = ray_walk(c[xm], r[xm].astype(np.float64), np.sign(ddx[xm]).astype(np.int64),
                                     ddy[xm] / np.abs(ddx[xm]), width, height)
        votes += np.bincount(across_y * width + along_x, minlength=height * width)

        ym = ~xm
        along_y, across_x = ray_walk(r[ym], c[ym].astype(np.float64), np.sign(ddy[ym]).astype(np.int64),
                                     ddx[ym] / np.abs(ddy[ym]), height, width)
        votes += np.bincount(along_y * width + across_x, minlength=height * width)

    return votes.reshape(height, width)


def find_centers(votes, min_votes=DEFAULT_HOUGH_PARAMS['min_votes'],
                 nms_radius=DEFAULT_HOUGH_PARAMS['nms_radius'],
                 max_hypotheses=DEFAULT_HOUGH_PARAMS['max_hypotheses']):
    """Return ``[(u, v, votes), ...]`` in descending vote order, ``u`` along columns."""
    if min_votes < 1:
        raise ValueError(f"min_votes must be at least 1, got {min_votes}")
    votes = np.asarray(votes)
    peaks = (votes == maximum_filter(votes, size=3, mode='constant', cval=0)) & (votes >= min_votes)
    rows, cols = np.nonzero(peaks)
    order = np.lexsort((cols, rows, -votes[rows, cols]))

    accepted = []
    for index in order:
        if len(accepted) >= max_hypotheses:
            break
        row, col = rows[index], cols[index]
        if any((row - r) ** 2 + (col - c) ** 2 <= nms_radius ** 2 for r, c in accepted):
            continue
        accepted.append((row, col))

    centers = []
    for row, col in accepted:
        top, left = max(row - 1, 0), max(col - 1, 0)
        window = votes[top:row + 2, left:col + 2].astype(np.float64)
        window_rows, window_cols = np.mgrid[top:top + window.shape[0], left:left + window.shape[1]]
        total = window.sum()
        u = float((window * window_cols).sum() / total)
        v = float((window * window_rows).sum() / total)
        centers.append((u, v, int(votes[row, col])))
    return centers


### Inliers and translation

def inlier_mask(center, directions, mask, cos_threshold=DEFAULT_HOUGH_PARAMS['cos_threshold']):
    if not -1.0 < cos_threshold <= 1.0:
        raise ValueError(f"cos_threshold must be in (-1, 1], got {cos_threshold}")
    directions, mask = _check_field(directions, mask)
    u, v = center
    rows, cols = np.nonzero(mask)
    to_u = u - cols
    to_v = v - rows
    distance = np.hypot(to_u, to_v)
    coincident = distance < 0.5
    safe = np.where(coincident, 1.0, distance)
    dx = directions[0, rows, cols].astype(np.float64)
    dy = directions[1, rows, cols].astype(np.float64)
    cosine = (dx * to_u + dy * to_v) / safe

    inliers = np.zeros(mask.shape, dtype=bool)
    inliers[rows, cols] = coincident | (cosine >= cos_threshold)
    return inliers


def assign_inliers(centers, inlier_masks):
    """Make inlier sets disjoint: a pixel claimed by several centers goes to the nearest one."""
    if len(inlier_masks) < 2:
        return list(inlier_masks)
    rows, cols = np.indices(inlier_masks[0].shape)
    distances = np.stack([np.where(mask, np.hypot(u - cols, v - rows), np.inf)
                          for (u, v), mask in zip(centers, inlier_masks)])
    owner = np.argmin(distances, axis=0)
    return [mask & (owner == index) for index, mask in enumerate(inlier_masks)]


def refine_center_least_squares(directions, inliers):
    """Point closest (in squared perpendicular distance) to all inlier rays, or None."""
    rows, cols, dx, dy = voting_pixels(directions, inliers)
    if len(rows) < 2:
        return None
    length = np.hypot(dx, dy)
    normals = np.stack([-dy / length, dx / length], axis=1)
    points = np.stack([cols, rows], axis=1).astype(np.float64)
    normal_matrix = normals.T @ normals
    if np.linalg.cond(normal_matrix) > 1e8:
        return None
    rhs = normals.T @ np.sum(normals * points, axis=1)
    u, v = np.linalg.solve(normal_matrix, rhs)
    return float(u), float(v)


def estimate_translation(center, depths, inliers, intrinsics, reducer='mean'):
    depths = np.asarray(depths)
    values = depths[np.asarray(inliers, dtype=bool)].astype(np.float64)
    values = values[np.isfinite(values)]
    if len(values) == 0:
        raise NoInliers("no inlier pixel with a finite depth")
    depth = float(np.median(values) if reducer == 'median' else np.mean(values))
    if depth <= 0:
        raise NonPositiveDepth(depth)
    u, v = center
    return backproject(u, v, depth, intrinsics)


### Pipeline step

def detect_objects(dpm, class_id, params=None):
    final_params = dict(DEFAULT_HOUGH_PARAMS)
    final_params.update(params or {})

    mask = dpm.class_mask(class_id)
    votes = cast_votes(dpm.directions, mask)
    peaks = find_centers(votes, final_params['min_votes'], final_params['nms_radius'],
                         final_params['max_hypotheses'])

    centers = [(u, v) for u, v, _ in peaks]
    inlier_masks = assign_inliers(centers, [inlier_mask(center, dpm.directions, mask, final_params['cos_threshold'])
                                            for center in centers])

    hypotheses = []
    for (u, v, peak_votes), inliers in zip(peaks, inlier_masks):
        inlier_count = int(inliers.sum())
        if inlier_count == 0:
            logger.warning("class %d: center hypothesis at (%.1f, %.1f) has no inliers", class_id, u, v)
            continue
        center = (u, v)
        if final_params['refine_center']:
            center = refine_center_least_squares(dpm.directions, inliers) or center
        try:
            translation = estimate_translation(center, dpm.depth, inliers, dpm.intrinsics,
                                               final_params['depth_reducer'])
        except (NoInliers, NonPositiveDepth) as error:
            logger.warning("class %d: dropping hypothesis at (%.1f, %.1f): %s", class_id, u, v, error)
            continue
        hypotheses.append(CenterHypothesis(center, peak_votes, inlier_count, float(translation[2]),
                                           translation, inliers))
    return hypotheses
