"""File formats: DPM binary maps, point model text files and pose record text files.

Every writer goes through a temporary file in the target directory and an
atomic rename, so a failed write never leaves a partial file behind.
"""
import logging
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from dense_pose_aggregation.errors import (BadMagic, DpmFormatError, EmptyModel, NonFiniteValue, ParseError,
                                           TrailingData, TruncatedPayload, VersionUnsupported)
from dense_pose_aggregation.structures import CameraIntrinsics, DensePredictionMap, PointModel, PoseEstimate

logger = logging.getLogger(__name__)

DPM_MAGIC = b'DPM1'
DPM_VERSION = 1
DPM_HEADER = np.dtype([
    ('magic', 'S4'),
    ('version', '<u4'),
    ('width', '<u4'),
    ('height', '<u4'),
    ('num_classes', '<u4'),
    ('fx', '<f8'),
    ('fy', '<f8'),
    ('cx', '<f8'),
    ('cy', '<f8'),
])
# quaternion w, x, y, z + direction dx, dy + depth
FIXED_PLANES = 7


def read_text_lines(path):
    """Lines of a UTF-8 text file; an undecodable line is a ParseError at that line."""
    lines = []
    for number, raw in enumerate(Path(path).read_bytes().splitlines(), start=1):
        try:
            lines.append(raw.decode('utf8'))
        except UnicodeDecodeError as error:
            raise ParseError(path, number, f"not valid UTF-8 at byte {error.start}") from None
    return lines


def atomic_write(path, content):
    path = Path(path)
    data = content.encode('utf8') if isinstance(content, str) else content
    handle, temporary = tempfile.mkstemp(dir=path.parent or '.', prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(handle, 'wb') as stream:
            stream.write(data)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.unlink(temporary)
        raise


### Dense prediction maps

def _dpm_payload(dpm):
    planes = [dpm.class_scores, dpm.quaternions, dpm.directions, dpm.depth[None]]
    return np.concatenate(planes, axis=0).astype('<f4')


def write_dpm(dpm, path):
    payload = _dpm_payload(dpm)
    if not np.all(np.isfinite(payload)):
        raise NonFiniteValue(path, "the map holds non-finite values")
    header = np.zeros((), dtype=DPM_HEADER)
    header['magic'] = DPM_MAGIC
    header['version'] = DPM_VERSION
    header['width'] = dpm.intrinsics.width
    header['height'] = dpm.intrinsics.height
    header['num_classes'] = dpm.num_classes
    for name in ('fx', 'fy', 'cx', 'cy'):
        header[name] = getattr(dpm.intrinsics, name)
    atomic_write(path, header.tobytes() + payload.tobytes())
    logger.debug("wrote %s (%dx%d, %d classes)", path, dpm.intrinsics.width, dpm.intrinsics.height,
                 dpm.num_classes)


def read_dpm(path):
    data = Path(path).read_bytes()
    if len(data) >= 4 and data[:4] != DPM_MAGIC:
        raise BadMagic(path, f"expected magic {DPM_MAGIC!r}, found {data[:4]!r}")
    if len(data) < DPM_HEADER.itemsize:
        raise TruncatedPayload(path, f"header needs {DPM_HEADER.itemsize} bytes, file has {len(data)}")

    header = np.frombuffer(data, dtype=DPM_HEADER, count=1)[0]
    if header['version'] != DPM_VERSION:
        raise VersionUnsupported(path, f"format version {int(header['version'])} is not supported")
    width, height, num_classes = int(header['width']), int(header['height']), int(header['num_classes'])
    expected = 4 * width * height * (num_classes + FIXED_PLANES)
    actual = len(data) - DPM_HEADER.itemsize
    if actual < expected:
        raise TruncatedPayload(path, f"payload has {actual} bytes, {expected} expected")
    if actual > expected:
        raise TrailingData(path, f"{actual - expected} bytes after the payload")

    try:
        intrinsics = CameraIntrinsics(float(header['fx']), float(header['fy']), float(header['cx']),
                                      float(header['cy']), width, height)
    except ValueError as error:
        raise DpmFormatError(path, f"bad camera header: {error}") from error

    planes = np.frombuffer(data, dtype='<f4', offset=DPM_HEADER.itemsize)
    planes = planes.astype(np.float32).reshape(num_classes + FIXED_PLANES, height, width)
    if not np.all(np.isfinite(planes)):
        raise NonFiniteValue(path, "payload holds non-finite values")
    return DensePredictionMap(planes[:num_classes], planes[num_classes:num_classes + 4],
                              planes[num_classes + 4:num_classes + 6], planes[num_classes + 6], intrinsics)


### Point models

HEADER_FIELD = re.compile(r'(\w+)=(\S*)')
CLASS_PREFIX = re.compile(r'^(\d+)_')


def write_point_model(model, path):
    name = (model.name or 'model').replace(' ', '_')
    lines = [f"# name={name} sym={int(model.symmetric)} class={model.class_id}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in model.points.tolist()]
    atomic_write(path, "\n".join(lines) + "\n")


def read_point_model(path):
    """Parse a point model file.

    The class id comes from a ``class=`` header field, else from a numeric
    ``NN_`` file name prefix, else defaults to 1.
    """
    header, points = {}, []
    for number, line in enumerate(read_text_lines(path), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith('#'):
            fields = dict(HEADER_FIELD.findall(stripped))
            if not header and ('name' in fields or 'sym' in fields):
                header = fields
            continue
        values = stripped.split()
        try:
            point = [float(each) for each in values]
        except ValueError:
            raise ParseError(path, number, f"expected 'x y z', got {stripped!r}") from None
        if len(point) != 3 or not np.all(np.isfinite(point)):
            raise ParseError(path, number, f"expected three finite coordinates, got {stripped!r}")
        points.append(point)

    if header.get('sym', '0') not in ('0', '1'):
        raise ParseError(path, 1, f"sym must be 0 or 1, got {header['sym']!r}")
    if not points:
        raise EmptyModel(f"{path}: no points")
    prefix = CLASS_PREFIX.match(Path(path).name)
    try:
        class_id = int(header.get('class', prefix.group(1) if prefix else 1))
    except ValueError:
        raise ParseError(path, 1, f"bad class id {header['class']!r}") from None
    return PointModel(np.array(points), symmetric=header.get('sym') == '1', class_id=class_id,
                      name=header.get('name', Path(path).stem))


def read_model_directory(directory):
    """Load every ``*.xyz`` point model of a directory, keyed by class id."""
    models, sources = {}, {}
    for each in sorted(Path(directory).glob('*.xyz')):
        model = read_point_model(each)
        if model.class_id in models:
            raise ParseError(each, 1, f"class {model.class_id} is already defined by {sources[model.class_id]}")
        models[model.class_id], sources[model.class_id] = model, each
    return models


### Pose records

POSE_FIELDS = ('scene', 'class', 'q', 't', 'conf')


def _vector(text, size, path, number, name):
    try:
        values = [float(each) for each in text.split(',')]
    except ValueError:
        raise ParseError(path, number, f"{name}= holds a non-number: {text!r}") from None
    if len(values) != size or not np.all(np.isfinite(values)):
        raise ParseError(path, number, f"{name}= needs {size} finite comma-separated values, got {text!r}")
    return values


def format_pose(record):
    q = ','.join(repr(each) for each in record.q.tolist())
    t = ','.join(repr(each) for each in record.t.tolist())
    return f"scene={record.scene_id} class={record.class_id} q={q} t={t} conf={float(record.confidence)!r}"


def write_poses(records, path):
    atomic_write(path, "".join(format_pose(each) + "\n" for each in records))


def parse_pose(line, path='<string>', number=1):
    fields = {}
    for token in line.split():
        key, separator, value = token.partition('=')
        if not separator or key not in POSE_FIELDS:
            raise ParseError(path, number, f"unexpected field {token!r}")
        if key in fields:
            raise ParseError(path, number, f"duplicate field '{key}'")
        fields[key] = value
    missing = [each for each in ('scene', 'class', 'q', 't') if each not in fields]
    if missing:
        raise ParseError(path, number, f"missing field(s) {', '.join(each + '=' for each in missing)}")
    try:
        scene_id, class_id = int(fields['scene']), int(fields['class'])
        confidence = float(fields.get('conf', 1.0))
    except ValueError:
        raise ParseError(path, number, f"bad scene, class or conf value in {line.strip()!r}") from None
    q = _vector(fields['q'], 4, path, number, 'q')
    t = _vector(fields['t'], 3, path, number, 't')
    return PoseEstimate(class_id, q, t, confidence, scene_id)


def read_poses(path):
    records = []
    for number, line in enumerate(read_text_lines(path), start=1):
        if line.strip() and not line.lstrip().startswith('#'):
            records.append(parse_pose(line, path, number))
    return records

