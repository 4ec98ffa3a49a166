"""Synthetic scenes and corrupted dense prediction maps standing in for a trained network.

Every random draw comes from a Philox stream keyed by ``(seed, scene id, ...)``,
so scenes can be generated in any order, or in parallel, with identical output.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from dense_pose_aggregation.errors import BadParams, PlacementFailure
from dense_pose_aggregation.geometry import (canonicalize_sign, normalize_rows, project, project_points,
                                             quat_multiply, transform_points)
from dense_pose_aggregation.random_streams import generator
from dense_pose_aggregation.structures import (BACKGROUND_CLASS, YCB_VIDEO_INTRINSICS,
                                               DensePredictionMap, PointModel, PoseEstimate)

logger = logging.getLogger(__name__)

MIN_MODEL_POINTS = 4
MAX_PLACEMENT_ATTEMPTS = 100
MIN_STORED_NORM = 0.01

# Stream ids below the scene id; object streams use the object index + 1.
COUNT_STREAM = 0
NOISE_STREAM = 1


### Point models

def _positive(params, name, default):
    value = params.get(name, default)
    if np.ndim(value) == 0:
        value = float(value)
        if not value > 0:
            raise BadParams(f"'{name}' must be positive, got {value}")
    else:
        value = np.asarray(value, dtype=np.float64)
        if not np.all(value > 0):
            raise BadParams(f"'{name}' must be positive, got {value.tolist()}")
    return value


def _box_points(params, n_points, seed):
    size = np.broadcast_to(_positive(params, 'size', 0.1), (3,)).astype(np.float64)
    half = size / 2
    if n_points == 8:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
        return signs * half

    # Uniform over the surface: pick a face with probability proportional to its area.
    rng = generator(seed, 0)
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]] * 2)
    faces = rng.choice(6, size=n_points, p=areas / areas.sum())
    points = rng.uniform(-half, half, size=(n_points, 3))
    axis = faces % 3
    side = np.where(faces < 3, -1.0, 1.0)
    points[np.arange(n_points), axis] = side * half[axis]
    return points


def _cylinder_points(params, n_points):
    radius = _positive(params, 'radius', 0.04)
    height = _positive(params, 'height', 0.1)
    rings = int(params.get('rings', 4))
    if rings < 2 or n_points % rings:
        raise BadParams(f"a cylinder needs at least 2 rings dividing n_points={n_points}, got {rings}")
    per_ring = n_points // rings
    angles = np.tile(2 * np.pi * np.arange(per_ring) / per_ring, rings)
    heights = np.repeat(np.linspace(-height / 2, height / 2, rings), per_ring)
    return np.stack([radius * np.cos(angles), radius * np.sin(angles), heights], axis=1)


def _ring_points(params, n_points):
    radius = _positive(params, 'radius', 0.05)
    angles = 2 * np.pi * np.arange(n_points) / n_points
    return np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(n_points)], axis=1)


def make_model(shape, params=None, n_points=500, seed=0, class_id=1, name=None):
    """Build a point model.

    ``shape`` is one of ``box`` (``size``: edge length or three edge lengths;
    ``n_points=8`` gives the corners), ``cylinder`` (``radius``, ``height``,
    ``rings``), ``ring`` (``radius``) or ``file`` (``path`` of a point model
    text file). Rings and cylinders are rotationally symmetric.
    """
    params = params or {}
    if shape == 'file':
        from dense_pose_aggregation.tensor_io import read_point_model
        if 'path' not in params:
            raise BadParams("a 'file' model needs a 'path'")
        model = read_point_model(params['path'])
        model.class_id = class_id
        return model

    if n_points < MIN_MODEL_POINTS:
        raise BadParams(f"a point model needs at least {MIN_MODEL_POINTS} points, got {n_points}")
    if shape == 'box':
        points, symmetric = _box_points(params, n_points, seed), False
    elif shape == 'cylinder':
        points, symmetric = _cylinder_points(params, n_points), True
    elif shape == 'ring':
        points, symmetric = _ring_points(params, n_points), True
    else:
        raise BadParams(f"unknown model shape '{shape}'")
    return PointModel(points, symmetric=symmetric, class_id=class_id, name=name or shape)


def default_models(n_points=720):
    return (
        make_model('box', {'size': (0.08, 0.12, 0.05)}, n_points, class_id=1, name='box'),
        make_model('cylinder', {'radius': 0.035, 'height': 0.12, 'rings': 6}, n_points, class_id=2,
                   name='cylinder'),
        make_model('box', {'size': (0.16, 0.05, 0.05)}, n_points, seed=1, class_id=3, name='bar'),
    )


### Scenes

@dataclass(frozen=True)
class SceneConfig:
    models: tuple = field(default_factory=default_models)
    min_objects: int = 1
    max_objects: int = 3
    x_range: tuple = (-0.12, 0.12)
    y_range: tuple = (-0.09, 0.09)
    z_range: tuple = (0.7, 1.2)
    intrinsics: object = YCB_VIDEO_INTRINSICS
    fixed_orientation: object = None
    distinct_classes: bool = True

    def __post_init__(self):
        if not self.models:
            raise BadParams("a scene needs at least one point model")
        if not 1 <= self.min_objects <= self.max_objects:
            raise BadParams(f"bad object count range [{self.min_objects}, {self.max_objects}]")
        if self.distinct_classes and self.max_objects > len(self.models):
            raise BadParams(f"{self.max_objects} distinct objects requested from {len(self.models)} models")
        if not self.z_range[0] > 0:
            raise BadParams(f"the sampling volume must lie in front of the camera, z_min={self.z_range[0]}")
        for axis in (self.x_range, self.y_range, self.z_range):
            if axis[0] > axis[1]:
                raise BadParams(f"empty sampling range {axis}")

    @property
    def num_classes(self):
        return max(model.class_id for model in self.models) + 1


@dataclass(eq=False)
class SceneObject:
    model: PointModel
    q: np.ndarray
    t: np.ndarray

    @property
    def class_id(self):
        return self.model.class_id


@dataclass(eq=False)
class Scene:
    scene_id: int
    objects: list
    intrinsics: object
    num_classes: int

    def poses(self):
        return [PoseEstimate(each.class_id, each.q, each.t, 1.0, self.scene_id) for each in self.objects]


def random_orientations(rng, n):
    """Uniform rotations on SO(3) by the subgroup algorithm, canonical sign."""
    u1, u2, u3 = rng.random((3, n))
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    quats = np.stack([b * np.cos(2 * np.pi * u3), a * np.sin(2 * np.pi * u2),
                      a * np.cos(2 * np.pi * u2), b * np.sin(2 * np.pi * u3)], axis=1)
    return np.where(quats[:, :1] < 0, -quats, quats)


def _inside_frustum(model, q, t, intrinsics):
    points = transform_points(q, t, model.points)
    if np.any(points[:, 2] <= 0):
        return False
    u, v, _ = project_points(points, intrinsics)
    return bool(np.all((u >= 0) & (u < intrinsics.width - 0.5) & (v >= 0) & (v < intrinsics.height - 0.5)))


def _place_object(cfg, model, rng):
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        t = np.array([rng.uniform(*cfg.x_range), rng.uniform(*cfg.y_range), rng.uniform(*cfg.z_range)])
        if cfg.fixed_orientation is None:
            q = random_orientations(rng, 1)[0]
        else:
            q = canonicalize_sign(np.asarray(cfg.fixed_orientation, dtype=np.float64))
        if _inside_frustum(model, q, t, cfg.intrinsics):
            return q, t
    raise PlacementFailure(MAX_PLACEMENT_ATTEMPTS)


def sample_scene(cfg, seed, scene_id=0):
    count_rng = generator(seed, scene_id, COUNT_STREAM)
    count = int(count_rng.integers(cfg.min_objects, cfg.max_objects + 1))
    picks = count_rng.choice(len(cfg.models), size=count, replace=not cfg.distinct_classes)

    objects = []
    for index, pick in enumerate(picks):
        model = cfg.models[int(pick)]
        q, t = _place_object(cfg, model, generator(seed, scene_id, COUNT_STREAM, index + 1))
        objects.append(SceneObject(model, q, t))
    logger.debug("scene %d: %d objects, classes %s", scene_id, count, [each.class_id for each in objects])
    return Scene(scene_id, objects, cfg.intrinsics, cfg.num_classes)


### Rendering

def render_dense(scene, intrinsics=None):
    """Ground-truth dense fields by z-buffered single-pixel splatting of the model points.

    ``extras['instances']`` holds the index of the object owning each pixel (-1 for background).
    """
    intrinsics = intrinsics or scene.intrinsics
    height, width = intrinsics.height, intrinsics.width

    pixels, depths, owners = [], [], []
    for index, each in enumerate(scene.objects):
        u, v, z = project_points(transform_points(each.q, each.t, each.model.points), intrinsics)
        cols, rows = np.floor(u + 0.5).astype(np.int64), np.floor(v + 0.5).astype(np.int64)
        inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
        pixels.append(rows[inside] * width + cols[inside])
        depths.append(z[inside])
        owners.append(np.full(int(inside.sum()), index))

    instances = np.full(height * width, -1, dtype=np.int64)
    if scene.objects:
        pixels, depths, owners = np.concatenate(pixels), np.concatenate(depths), np.concatenate(owners)
        order = np.lexsort((depths, pixels))
        nearest = order[np.unique(pixels[order], return_index=True)[1]]
        instances[pixels[nearest]] = owners[nearest]
    instances = instances.reshape(height, width)

    class_scores = np.zeros((scene.num_classes, height, width), dtype=np.float32)
    class_scores[BACKGROUND_CLASS][instances < 0] = 1.0
    quaternions = np.zeros((4, height, width), dtype=np.float32)
    directions = np.zeros((2, height, width), dtype=np.float32)
    depth = np.zeros((height, width), dtype=np.float32)

    for index, each in enumerate(scene.objects):
        rows, cols = np.nonzero(instances == index)
        if len(rows) == 0:
            logger.warning("scene %d: object %d (class %d) is fully occluded",
                           scene.scene_id, index, each.class_id)
            continue
        center_u, center_v, center_z = project(each.t, intrinsics)
        class_scores[each.class_id, rows, cols] = 1.0
        quaternions[:, rows, cols] = canonicalize_sign(each.q)[:, None]
        to_u, to_v = center_u - cols, center_v - rows
        distance = np.hypot(to_u, to_v)
        safe = np.where(distance > 0, distance, 1.0)
        directions[0, rows, cols] = np.where(distance > 0, to_u / safe, 0.0)
        directions[1, rows, cols] = np.where(distance > 0, to_v / safe, 0.0)
        depth[rows, cols] = center_z

    return DensePredictionMap(class_scores, quaternions, directions, depth, intrinsics,
                              extras={'instances': instances})


### Corruption

@dataclass(frozen=True)
class NoiseConfig:
    sigma_rot: float = 0.0
    sigma_dir: float = 0.0
    sigma_depth: float = 0.0
    outlier_fraction: float = 0.0
    outlier_norm_mean: float = None
    norm_confidence: float = 0.0
    norm_jitter: float = 0.0

    def __post_init__(self):
        if min(self.sigma_rot, self.sigma_dir, self.sigma_depth, self.norm_jitter) < 0:
            raise BadParams("noise standard deviations must be non-negative")
        if not 0 <= self.outlier_fraction < 1:
            raise BadParams(f"outlier_fraction must be in [0, 1), got {self.outlier_fraction}")
        if self.norm_confidence < 0:
            raise BadParams(f"norm_confidence must be non-negative, got {self.norm_confidence}")


def _row_angular_distances(a, b):
    if len(a) == 0:
        return np.zeros(0)
    a, _ = normalize_rows(a)
    b, _ = normalize_rows(b)
    signs = np.where(np.sum(a * b, axis=1) < 0, -1.0, 1.0)[:, None]
    return 4.0 * np.arctan2(np.linalg.norm(a - signs * b, axis=1), np.linalg.norm(a + signs * b, axis=1))


def corrupt(gt, noise, seed, scene_id=0):
    """Perturb every foreground pixel of a ground-truth map.

    ``extras`` gains ``rotation_error`` (radians, NaN on background) and
    ``outliers`` (pixels whose quaternion was replaced by a random one).
    Outliers get the norm ``outlier_norm_mean`` when it is set; ``norm_jitter``
    is added to every norm, outliers included, before the norm is clamped.
    """
    rng = generator(seed, scene_id, NOISE_STREAM)
    rows, cols = np.nonzero(gt.labels() != BACKGROUND_CLASS)
    n = len(rows)

    # Draws happen in a fixed order and size so a seed always yields the same map.
    axes = rng.standard_normal((n, 3))
    angles = np.abs(rng.normal(0.0, noise.sigma_rot, n))
    replaced = rng.random(n) < noise.outlier_fraction
    random_quats = random_orientations(rng, n)
    jitter = rng.normal(0.0, noise.norm_jitter, n)
    direction_angles = rng.normal(0.0, noise.sigma_dir, n)
    depth_noise = rng.normal(0.0, noise.sigma_depth, n)

    truth = gt.quaternions[:, rows, cols].T.astype(np.float64)
    axis_norms = np.linalg.norm(axes, axis=1, keepdims=True)
    axes = axes / np.where(axis_norms > 0, axis_norms, 1.0)
    perturbation = np.concatenate([np.cos(angles / 2)[:, None], np.sin(angles / 2)[:, None] * axes], axis=1)
    predicted = quat_multiply(truth, perturbation)
    predicted[replaced] = random_quats[replaced]

    errors = _row_angular_distances(predicted, truth)

    norms = 1.0 / (1.0 + noise.norm_confidence * errors)
    if noise.outlier_norm_mean is not None:
        norms = np.where(replaced, noise.outlier_norm_mean, norms)
    norms = np.maximum(norms + jitter, MIN_STORED_NORM)
    predicted = predicted * norms[:, None]

    quaternions = gt.quaternions.copy()
    quaternions[:, rows, cols] = predicted.T

    dx = gt.directions[0, rows, cols].astype(np.float64)
    dy = gt.directions[1, rows, cols].astype(np.float64)
    cosine, sine = np.cos(direction_angles), np.sin(direction_angles)
    directions = gt.directions.copy()
    directions[0, rows, cols] = dx * cosine - dy * sine
    directions[1, rows, cols] = dx * sine + dy * cosine

    depth = gt.depth.copy()
    depth[rows, cols] = gt.depth[rows, cols] + depth_noise

    rotation_error = np.full(gt.shape, np.nan)
    rotation_error[rows, cols] = errors
    outliers = np.zeros(gt.shape, dtype=bool)
    outliers[rows, cols] = replaced
    extras = dict(gt.extras, rotation_error=rotation_error, outliers=outliers)
    return DensePredictionMap(gt.class_scores.copy(), quaternions, directions, depth, gt.intrinsics, extras)
