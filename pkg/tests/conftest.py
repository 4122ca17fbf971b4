import struct

import numpy as np

from asymlora.linalg import Matrix


def bits(m: Matrix) -> bytes:
    """Exact bit pattern of a matrix, for bit-identity assertions."""
    return struct.pack(f"<{len(m.data)}d", *m.data)


def float_bits(values) -> bytes:
    vals = list(values)
    return struct.pack(f"<{len(vals)}d", *vals)


def to_numpy(m: Matrix) -> np.ndarray:
    return np.array(m.data, dtype=np.float64).reshape(m.rows, m.cols)


def from_numpy(arr) -> Matrix:
    arr = np.asarray(arr, dtype=np.float64)
    return Matrix(arr.shape[0], arr.shape[1], arr.reshape(-1).tolist())


def max_abs_diff(a: Matrix, b: Matrix) -> float:
    return max(abs(x - y) for x, y in zip(a.data, b.data))
