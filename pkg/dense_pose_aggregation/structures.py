from dataclasses import dataclass, field

import numpy as np

from dense_pose_aggregation.errors import DimensionMismatch, EmptyModel

BACKGROUND_CLASS = 0


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) lies outside "
                             f"the {self.width}x{self.height} image")

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


# Intrinsics of the YCB-Video camera, 640x480.
YCB_VIDEO_INTRINSICS = CameraIntrinsics(fx=1066.778, fy=1067.487, cx=312.9869, cy=241.3109,
                                        width=640, height=480)


@dataclass(eq=False)
class PointModel:
    """3D points of one object class in its own frame, in meters."""
    points: np.ndarray
    symmetric: bool = False
    class_id: int = 1
    name: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise EmptyModel(f"point model '{self.name}' has no points")
        if not np.all(np.isfinite(self.points)):
            raise ValueError(f"point model '{self.name}' has non-finite points")

    def __len__(self):
        return len(self.points)


@dataclass(eq=False)
class PoseEstimate:
    class_id: int
    q: np.ndarray
    t: np.ndarray
    confidence: float = 1.0
    scene_id: int = 0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(4)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)


@dataclass(eq=False)
class DensePredictionMap:
    """Dense per-pixel network outputs for one frame.

    All planes are float32 and row-major ``(H, W)``: ``class_scores`` is
    ``(C, H, W)``, ``quaternions`` holds the raw (unnormalised) ``w, x, y, z``
    planes, ``directions`` the ``dx, dy`` planes pointing from each pixel
    towards its object center (``dx`` along columns), ``depth`` the object
    center depth in meters.
    """
    class_scores: np.ndarray
    quaternions: np.ndarray
    directions: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.class_scores = np.asarray(self.class_scores, dtype=np.float32)
        self.quaternions = np.asarray(self.quaternions, dtype=np.float32)
        self.directions = np.asarray(self.directions, dtype=np.float32)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        image_shape = (self.intrinsics.height, self.intrinsics.width)
        expected = {
            'class_scores': (self.class_scores.shape[0],) + image_shape,
            'quaternions': (4,) + image_shape,
            'directions': (2,) + image_shape,
            'depth': image_shape,
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise DimensionMismatch(shape, actual)

    @property
    def num_classes(self):
        return self.class_scores.shape[0]

    @property
    def shape(self):
        return self.depth.shape

    def labels(self):
        return np.argmax(self.class_scores, axis=0)

    def class_mask(self, class_id):
        return self.labels() == class_id

    def present_classes(self):
        labels = np.unique(self.labels())
        return [int(each) for each in labels if each != BACKGROUND_CLASS]

    def equals(self, other):
        """Bit-exact comparison of every plane and of the intrinsics."""
        if self.intrinsics != other.intrinsics:
            return False
        for name in ('class_scores', 'quaternions', 'directions', 'depth'):
            mine, theirs = getattr(self, name), getattr(other, name)
            if mine.shape != theirs.shape or mine.tobytes() != theirs.tobytes():
                return False
        return True
