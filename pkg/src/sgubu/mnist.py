"""Reader for the IDX file format used by MNIST.

Convention for the binary logistic-regression target: pixels are scaled to
``[0, 1]``, no bias column is appended, and the label is 1 for the second digit
of the pair (5 in the default 3-vs-5 task) and 0 for the first.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

from .errors import ParameterError
from .model import LogisticRegressionPotential

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

_DTYPES = {
    0x08: np.uint8,
    0x09: np.int8,
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzipped) into an array."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ParameterError(f"{path}: truncated IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code not in _DTYPES:
        raise ParameterError(f"{path}: bad IDX magic {raw[:4].hex()}")
    header = 4 + 4 * ndim
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    dtype = np.dtype(_DTYPES[dtype_code])
    count = int(np.prod(dims)) if dims else 1
    if len(raw) - header != count * dtype.itemsize:
        raise ParameterError(f"{path}: payload size does not match dims {dims}")
    return np.frombuffer(raw, dtype=dtype, offset=header, count=count).reshape(dims)


def write_idx(path, array) -> None:
    """Write an unsigned-byte IDX file (used for fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, 0x08, array.ndim))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


def load_binary_mnist(images_path, labels_path, digits=(3, 5), prior_var: float = 1e-3):
    """Build a logistic-regression posterior for a pair of digits."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise ParameterError("expected (n, rows, cols) images and (n,) labels")
    neg, pos = digits
    keep = (labels == neg) | (labels == pos)
    if not keep.any():
        raise ParameterError(f"no images with labels {digits}")
    X = images[keep].reshape(int(keep.sum()), -1).astype(float) / 255.0
    y = (labels[keep] == pos).astype(float)
    return LogisticRegressionPotential(X, y, prior_var)
