"""Brute-force reference implementations used to check the fast paths.

Nothing here shares code with the eigen solver or the ray walker it checks.
"""
import numpy as np
from scipy.stats import qmc

from dense_pose_aggregation.errors import EmptySet
from dense_pose_aggregation.geometry import canonicalize_sign, quat_from_axis_angle, quat_multiply
from dense_pose_aggregation.hough_voting import MIN_DIRECTION_NORM, _check_field

DEFAULT_GRID_SAMPLES = 20_000
DEFAULT_GRID_RESOLUTION = 1e-4
INITIAL_DESCENT_STEP = 0.1
CANDIDATE_CELLS = 2_000_000


### Orientation averaging

def _rotation_matrices(quats):
    quats = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    w, x, y, z = quats.T
    return np.stack([
        np.stack([w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z], axis=-1),
    ], axis=1)


def _frobenius_costs(candidates, rotations, weights):
    costs = np.empty(len(candidates))
    size = max(1, CANDIDATE_CELLS // (9 * len(rotations)))
    for start in range(0, len(candidates), size):
        chunk = _rotation_matrices(candidates[start:start + size])
        difference = chunk[:, None, :, :] - rotations[None, :, :, :]
        costs[start:start + size] = np.sum(difference ** 2, axis=(2, 3)) @ weights
    return costs


def quasi_uniform_quaternions(count):
    """Low-discrepancy rotations: a Halton sequence pushed through the subgroup algorithm."""
    u1, u2, u3 = qmc.Halton(d=3, scramble=False).random(count).T
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    return np.stack([b * np.cos(2 * np.pi * u3), a * np.sin(2 * np.pi * u2),
                     a * np.cos(2 * np.pi * u2), b * np.sin(2 * np.pi * u3)], axis=1)


def oracle_grid_average(prediction_set, samples=DEFAULT_GRID_SAMPLES, resolution=DEFAULT_GRID_RESOLUTION):
    """Minimise ``sum w_i ||R(q) - R(q_i)||_F^2`` by grid search plus coordinate descent."""
    quats = np.asarray(prediction_set.quats, dtype=np.float64).reshape(-1, 4)
    if len(quats) == 0:
        raise EmptySet("cannot average an empty set")
    weights = np.asarray(prediction_set.weights, dtype=np.float64)
    rotations = _rotation_matrices(quats)

    candidates = np.concatenate([quasi_uniform_quaternions(samples), quats])
    costs = _frobenius_costs(candidates, rotations, weights)
    best = candidates[int(np.argmin(costs))]
    best_cost = float(costs.min())

    step = INITIAL_DESCENT_STEP
    while step >= resolution:
        moves = np.array([quat_multiply(quat_from_axis_angle(axis, sign * step), best)
                          for axis in np.eye(3) for sign in (1.0, -1.0)])
        move_costs = _frobenius_costs(moves, rotations, weights)
        if move_costs.min() < best_cost:
            best, best_cost = moves[int(np.argmin(move_costs))], float(move_costs.min())
        else:
            step /= 2
    return canonicalize_sign(best / np.linalg.norm(best))


### Hough voting

def oracle_vote_accumulate(directions, mask):
    """Count, for every cell and every voting pixel, whether the cell lies on the pixel's ray.

    A cell is on the ray when the ray passes within half a cell of its center,
    measured across the ray's dominant axis at the cell's position along it.
    """
    directions, mask = _check_field(directions, mask)
    height, width = mask.shape
    dx_plane = directions[0].astype(np.float64)
    dy_plane = directions[1].astype(np.float64)
    cell_rows, cell_cols = np.indices((height, width))
    votes = np.zeros((height, width), dtype=np.int64)

    for row, col in zip(*np.nonzero(mask)):
        dx, dy = dx_plane[row, col], dy_plane[row, col]
        if np.hypot(dx, dy) < MIN_DIRECTION_NORM:
            continue
        if abs(dx) >= abs(dy):
            k = ((cell_cols - col) * int(np.sign(dx))).astype(np.float64)
            across = np.floor(float(row) + k * (dy / abs(dx)) + 0.5)
            votes += (k >= 0) & (across == cell_rows)
        else:
            k = ((cell_rows - row) * int(np.sign(dy))).astype(np.float64)
            across = np.floor(float(col) + k * (dx / abs(dy)) + 0.5)
            votes += (k >= 0) & (across == cell_cols)
    return votes
