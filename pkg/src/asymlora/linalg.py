"""Dense 64-bit matrices, a reproducible RNG, and initialization schemes.

Matrices are immutable after construction and therefore safe to share across
threads; every operation returns a fresh instance. The heavy loops live in
the selected kernel backend (compiled or pure Python, see ``backend``).
"""

from __future__ import annotations

import math
from array import array
from typing import Iterable, Sequence

from .backend import kernels
from .errors import ShapeError

_MASK64 = (1 << 64) - 1
_TWO53 = float(1 << 53)


def _mix64(z: int) -> int:
    """splitmix64 finalizer: the avalanche stage of Steele et al.'s generator."""
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, tag: str) -> int:
    """Independent stream seed from (seed, tag): FNV-1a over the tag, then mix."""
    h = seed & _MASK64
    for byte in tag.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return _mix64(h)


class Rng:
    """splitmix64 counter generator.

    Recurrence: state += 0x9E3779B97F4A7C15 (mod 2^64), output = mix64(state)
    with mix64 as above. Identical seeds give identical draw sequences on any
    platform. Normal deviates use the Box-Muller cosine branch with no cached
    spare, so the full generator state is the single 64-bit counter (which is
    what checkpoints persist).
    """

    __slots__ = ("_state",)

    GAMMA = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    @property
    def state(self) -> int:
        return self._state

    @classmethod
    def from_state(cls, state: int) -> "Rng":
        return cls(state)

    def derive(self, tag: str) -> "Rng":
        """Child generator on an independent stream; does not consume draws."""
        return Rng(derive_seed(self._state, tag))

    def next_u64(self) -> int:
        self._state = (self._state + self.GAMMA) & _MASK64
        return _mix64(self._state)

    def uniform(self) -> float:
        """Uniform on [0, 1): top 53 bits of the next output."""
        return (self.next_u64() >> 11) / _TWO53

    def uniform_symmetric(self, bound: float) -> float:
        """Uniform on [-bound, bound]."""
        return bound * (2.0 * self.uniform() - 1.0)

    def normal(self) -> float:
        """Standard normal: z = sqrt(-2 ln u1) * cos(2 pi u2), u1 in (0, 1]."""
        u1 = ((self.next_u64() >> 11) + 1) / _TWO53
        u2 = (self.next_u64() >> 11) / _TWO53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


class Matrix:
    """Row-major dense matrix of float64. Treat instances as immutable."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, data: array):
        if rows < 1 or cols < 1:
            raise ShapeError("matrix", (rows, cols))
        if len(data) != rows * cols:
            raise ShapeError("matrix data length", (rows, cols), (len(data), 1))
        self.rows = rows
        self.cols = cols
        self.data = data if isinstance(data, array) else array("d", data)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "Matrix":
        r = len(rows)
        c = len(rows[0])
        flat = array("d")
        for row in rows:
            if len(row) != c:
                raise ShapeError("from_rows", (r, c), (r, len(row)))
            flat.extend(float(x) for x in row)
        return cls(r, c, flat)

    def at(self, i: int, j: int) -> float:
        return self.data[i * self.cols + j]

    def to_rows(self) -> list[list[float]]:
        return [
            list(self.data[i * self.cols : (i + 1) * self.cols])
            for i in range(self.rows)
        ]

    def with_entry(self, i: int, j: int, value: float) -> "Matrix":
        """Copy with one entry replaced (finite-difference perturbations)."""
        d = array("d", self.data)
        d[i * self.cols + j] = value
        return Matrix(self.rows, self.cols, d)

    def copy(self) -> "Matrix":
        return Matrix(self.rows, self.cols, array("d", self.data))

    def all_finite(self) -> bool:
        return all(math.isfinite(x) for x in self.data)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return self.shape == other.shape and self.data == other.data

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


def zeros(rows: int, cols: int) -> Matrix:
    return Matrix(rows, cols, array("d", bytes(8 * rows * cols)))


def identity(n: int) -> Matrix:
    m = zeros(n, n)
    for i in range(n):
        m.data[i * n + i] = 1.0
    return m


def from_flat(rows: int, cols: int, values: Iterable[float]) -> Matrix:
    return Matrix(rows, cols, array("d", values))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ShapeError("matmul", a.shape, b.shape)
    return Matrix(a.rows, b.cols, kernels.mm(a.data, b.data, a.rows, a.cols, b.cols))


def add(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError("add", a.shape, b.shape)
    return Matrix(a.rows, a.cols, kernels.add(a.data, b.data))


def sub(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)
    return Matrix(a.rows, a.cols, kernels.sub(a.data, b.data))


def scale(a: Matrix, s: float) -> Matrix:
    return Matrix(a.rows, a.cols, kernels.scale(a.data, s))


def axpy(a: Matrix, s: float, b: Matrix) -> Matrix:
    """a + s*b."""
    if a.shape != b.shape:
        raise ShapeError("axpy", a.shape, b.shape)
    return Matrix(a.rows, a.cols, kernels.axpy(a.data, s, b.data))


def transpose(a: Matrix) -> Matrix:
    return Matrix(a.cols, a.rows, kernels.transpose(a.data, a.rows, a.cols))


def frobenius_norm(a: Matrix) -> float:
    return math.sqrt(kernels.sumsq(a.data))


def frob_inner(a: Matrix, b: Matrix) -> float:
    """Frobenius inner product <A, B> = sum of entrywise products."""
    if a.shape != b.shape:
        raise ShapeError("frob_inner", a.shape, b.shape)
    return kernels.dot(a.data, b.data)


def add_bias(a: Matrix, bias: Matrix) -> Matrix:
    """Broadcast-add a column vector to every column of a."""
    if bias.rows != a.rows or bias.cols != 1:
        raise ShapeError("add_bias", a.shape, bias.shape)
    return Matrix(a.rows, a.cols, kernels.add_bias(a.data, bias.data, a.rows, a.cols))


def mean_over_columns(a: Matrix) -> Matrix:
    """Column-mean pooling: the rows x 1 average of a's columns."""
    return Matrix(a.rows, 1, kernels.row_mean(a.data, a.rows, a.cols))


def kaiming_uniform(rows: int, cols: int, fan_in: int, rng: Rng) -> Matrix:
    """Entries i.i.d. uniform on [-b, b] with b = 1/sqrt(fan_in), drawn row-major."""
    if fan_in < 1:
        raise ValueError(f"kaiming_uniform: fan_in must be >= 1, got {fan_in}")
    bound = 1.0 / math.sqrt(fan_in)
    return Matrix(
        rows, cols,
        array("d", [rng.uniform_symmetric(bound) for _ in range(rows * cols)]),
    )


def gaussian(rows: int, cols: int, rng: Rng, std: float = 1.0) -> Matrix:
    """Entries i.i.d. N(0, std^2), drawn row-major."""
    return Matrix(
        rows, cols, array("d", [std * rng.normal() for _ in range(rows * cols)])
    )
