class DensePoseError(Exception):
    pass


### Geometry

class ZeroNorm(DensePoseError, ValueError):
    def __init__(self, norm):
        super().__init__(f"quaternion norm {norm!r} is too small to normalise")
        self.norm = norm


class BehindCamera(DensePoseError, ValueError):
    def __init__(self, z):
        super().__init__(f"point with z={z!r} is not in front of the camera")
        self.z = z


class NonPositiveDepth(DensePoseError, ValueError):
    def __init__(self, z):
        super().__init__(f"depth {z!r} must be positive")
        self.z = z


### Aggregation

class EmptyObject(DensePoseError):
    def __init__(self, class_id=None, message="no valid pixels remain for the object"):
        super().__init__(f"{message} (class {class_id})" if class_id is not None else message)
        self.class_id = class_id


class EmptySet(DensePoseError, ValueError):
    pass


class DegenerateMean(DensePoseError):
    def __init__(self, norm):
        super().__init__(f"component-wise quaternion mean has norm {norm!r}")
        self.norm = norm


class EigenFailure(DensePoseError):
    def __init__(self, sweeps, off_diagonal):
        super().__init__(f"Jacobi sweep did not converge after {sweeps} sweeps "
                         f"(off-diagonal norm {off_diagonal!r})")
        self.sweeps = sweeps
        self.off_diagonal = off_diagonal


class MethodSyntaxError(DensePoseError, ValueError):
    def __init__(self, text, reason):
        super().__init__(f"bad aggregation method {text!r}: {reason}")
        self.text = text
        self.reason = reason


### Hough voting

class DimensionMismatch(DensePoseError, ValueError):
    def __init__(self, expected, actual):
        super().__init__(f"expected shape {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class NoInliers(DensePoseError):
    pass


### Losses and metrics

class EmptyModel(DensePoseError, ValueError):
    pass


class ClassMismatch(DensePoseError, ValueError):
    def __init__(self, predicted, ground_truth):
        super().__init__(f"prediction class {predicted} does not match ground truth class {ground_truth}")
        self.predicted = predicted
        self.ground_truth = ground_truth


class EmptyDistances(DensePoseError, ValueError):
    pass


class AtMinimumWarning(UserWarning):
    pass


### Synthetic harness

class BadParams(DensePoseError, ValueError):
    pass


class PlacementFailure(DensePoseError):
    def __init__(self, attempts):
        super().__init__(f"could not place object inside the view frustum after {attempts} attempts")
        self.attempts = attempts


### Tensor I/O

class DpmFormatError(DensePoseError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class BadMagic(DpmFormatError):
    pass


class VersionUnsupported(DpmFormatError):
    pass


class TruncatedPayload(DpmFormatError):
    pass


class TrailingData(DpmFormatError):
    pass


class NonFiniteValue(DpmFormatError):
    pass


class ParseError(DensePoseError, ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class MissingModel(DensePoseError, KeyError):
    def __init__(self, class_id):
        super().__init__(f"no point model for class {class_id}")
        self.class_id = class_id

    def __str__(self):
        return self.args[0]
