"""Synthetic multi-task regression with tunable commonality and conflict.

Each task i has a low-rank teacher update dW_i = B*_i . A_i, and targets
Y = (W_base + dW_i) X + noise with X standard normal. Two dials shape the
task geometry:

* commonality (kappa): blends each task's teacher A toward one shared matrix,
  A_i = kappa * A_shared + (1 - kappa) * A_task_i. At kappa = 1 the tasks
  additionally share identical B directions, i.e. they are the same task.
* conflict (gamma): makes the tasks contest the same subspace while pulling
  in opposing directions. The per-task A_task_i are blended toward a common
  contested matrix with weight gamma, and the B*_i are built on an
  orthonormal frame with pairwise coefficient cosine

      c_B = (1 - gamma) * kappa - gamma / (N - 1),

  which drives the vectorized dW_i toward pairwise cosine -gamma for N = 2
  (and toward the feasibility bound -1/(N-1) as gamma -> 1 for larger N).

This realizes "conflict" as anti-aligned parameter updates rather than label
noise: tasks pull the same low-rank directions opposite ways, which is
exactly the regime where a single shared adapter cancels itself out while
task-specific B matrices do not.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

from .errors import DatasetFormatError, ShapeError
from .linalg import (
    Matrix,
    Rng,
    add,
    axpy,
    derive_seed,
    frob_inner,
    frobenius_norm,
    gaussian,
    kaiming_uniform,
    matmul,
    scale,
)

_MAGIC = b"ALD1"
_VERSION = 1


@dataclass
class TaskSpec:
    task_index: int
    teacher_a: Matrix  # teacher_rank x d_in
    teacher_b: Matrix  # d_out x teacher_rank
    noise_std: float
    num_samples: int

    def delta_w(self) -> Matrix:
        return matmul(self.teacher_b, self.teacher_a)


@dataclass
class TaskBatch:
    task_index: int
    x: Matrix  # d_in x batch
    y: Matrix  # d_out x batch

    def __post_init__(self):
        if self.x.cols != self.y.cols:
            raise ShapeError("task batch", self.x.shape, self.y.shape)


@dataclass
class MultitaskData:
    """Generated task family plus the base weight their targets are built on."""

    w_base: Matrix
    tasks: list[TaskSpec]
    w_eff: list[Matrix] = field(init=False)

    def __post_init__(self):
        self.w_eff = [add(self.w_base, t.delta_w()) for t in self.tasks]

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    @property
    def d_in(self) -> int:
        return self.w_base.cols

    @property
    def d_out(self) -> int:
        return self.w_base.rows


def vec_cosine(a: Matrix, b: Matrix) -> float:
    """Cosine between the vectorized matrices."""
    return frob_inner(a, b) / (frobenius_norm(a) * frobenius_norm(b))


def _orthonormal_frame(n: int, rows: int, cols: int, rng: Rng) -> list[Matrix]:
    """n random matrices orthonormalized in vec space (modified Gram-Schmidt)."""
    if n > rows * cols:
        raise ValueError(f"cannot build {n} orthonormal directions in {rows * cols} dims")
    frame: list[Matrix] = []
    while len(frame) < n:
        v = gaussian(rows, cols, rng)
        for u in frame:
            v = axpy(v, -frob_inner(v, u), u)
        norm = frobenius_norm(v)
        if norm < 1e-9:  # essentially collinear draw; retry
            continue
        frame.append(scale(v, 1.0 / norm))
    return frame


def _simplex_coefficients(n: int, cosine: float) -> list[list[float]]:
    """n unit vectors in R^n with pairwise inner product `cosine`.

    s_i = a e_i + (b / sqrt(n)) 1 with a = sqrt(1 - c); feasible for
    c in [-1/(n-1), 1].
    """
    if n == 1:
        return [[1.0]]
    lo = -1.0 / (n - 1)
    c = min(1.0, max(lo, cosine))
    a = math.sqrt(1.0 - c)
    disc = max(0.0, a * a / n + c)
    b = -a / math.sqrt(n) + math.sqrt(disc)
    base = b / math.sqrt(n)
    return [[base + (a if k == i else 0.0) for k in range(n)] for i in range(n)]


def generate_tasks(num_tasks: int, commonality: float, conflict: float,
                   d_in: int, d_out: int, teacher_rank: int, seed: int,
                   noise_std: float = 0.0, num_samples: int = 1024,
                   teacher_scale: float = 1.0) -> MultitaskData:
    """Build the task family; deterministic in (seed, dials, dims)."""
    if num_tasks < 1:
        raise ValueError(f"num_tasks must be >= 1, got {num_tasks}")
    if not 0.0 <= commonality <= 1.0:
        raise ValueError(f"commonality must be in [0, 1], got {commonality}")
    if not 0.0 <= conflict <= 1.0:
        raise ValueError(f"conflict must be in [0, 1], got {conflict}")
    if noise_std < 0.0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    if teacher_rank < 1:
        raise ValueError(f"teacher_rank must be >= 1, got {teacher_rank}")

    rng = Rng(derive_seed(seed, "teachers"))
    w_base = kaiming_uniform(d_out, d_in, d_in, Rng(derive_seed(seed, "base")))

    a_shared = kaiming_uniform(teacher_rank, d_in, d_in, rng)
    a_contested = kaiming_uniform(teacher_rank, d_in, d_in, rng)
    a_tasks = []
    for _ in range(num_tasks):
        a_own = kaiming_uniform(teacher_rank, d_in, d_in, rng)
        blended = add(scale(a_contested, conflict), scale(a_own, 1.0 - conflict))
        a_tasks.append(add(scale(a_shared, commonality), scale(blended, 1.0 - commonality)))

    frame = _orthonormal_frame(num_tasks, d_out, teacher_rank, rng)
    if num_tasks == 1:
        c_b = 1.0
    else:
        c_b = (1.0 - conflict) * commonality - conflict / (num_tasks - 1)
    coeffs = _simplex_coefficients(num_tasks, c_b)
    tasks = []
    for i in range(num_tasks):
        b = scale(frame[0], coeffs[i][0])
        for k in range(1, num_tasks):
            b = axpy(b, coeffs[i][k], frame[k])
        b = scale(b, teacher_scale)
        tasks.append(TaskSpec(i, a_tasks[i], b, noise_std, num_samples))
    return MultitaskData(w_base, tasks)


def sample_batch(data: MultitaskData, task_index: int, batch_size: int, rng: Rng) -> TaskBatch:
    """Fresh batch: X entries drawn row-major, then noise entries row-major."""
    spec = data.tasks[task_index]
    x = gaussian(data.d_in, batch_size, rng)
    y = matmul(data.w_eff[task_index], x)
    if spec.noise_std > 0.0:
        y = add(y, gaussian(data.d_out, batch_size, rng, std=spec.noise_std))
    return TaskBatch(task_index, x, y)


def mean_teacher_a_cosine(data: MultitaskData) -> float:
    """Mean pairwise cosine between the tasks' teacher A matrices."""
    n = data.num_tasks
    if n < 2:
        return 1.0
    vals = [
        vec_cosine(data.tasks[i].teacher_a, data.tasks[j].teacher_a)
        for i in range(n) for j in range(i + 1, n)
    ]
    return sum(vals) / len(vals)


def pairwise_delta_cosines(data: MultitaskData) -> list[float]:
    """Cosines between vectorized teacher updates, all task pairs."""
    deltas = [t.delta_w() for t in data.tasks]
    return [
        vec_cosine(deltas[i], deltas[j])
        for i in range(len(deltas)) for j in range(i + 1, len(deltas))
    ]


def _write_matrix(fh, m: Matrix) -> None:
    fh.write(struct.pack(f"<{len(m.data)}d", *m.data))


def _read_matrix(fh, rows: int, cols: int) -> Matrix:
    raw = fh.read(8 * rows * cols)
    if len(raw) != 8 * rows * cols:
        raise DatasetFormatError("truncated dataset file")
    return Matrix(rows, cols, struct.unpack(f"<{rows * cols}d", raw))


def export_dataset(data: MultitaskData, path: str, seed: int) -> None:
    """Write teachers plus materialized samples as a flat little-endian file.

    Layout: magic "ALD1", u32 version, u32 d_in, u32 d_out, u32 teacher_rank,
    u32 num_tasks, then W_base row-major f64; per task: f64 noise_std,
    u64 num_samples n, teacher A, teacher B, X (d_in x n), Y (d_out x n),
    all row-major f64. Samples are drawn from derive_seed(seed, "export").
    """
    rng = Rng(derive_seed(seed, "export"))
    r_star = data.tasks[0].teacher_a.rows
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIII", _VERSION, data.d_in, data.d_out,
                             r_star, data.num_tasks))
        _write_matrix(fh, data.w_base)
        for spec in data.tasks:
            fh.write(struct.pack("<dQ", spec.noise_std, spec.num_samples))
            _write_matrix(fh, spec.teacher_a)
            _write_matrix(fh, spec.teacher_b)
            batch = sample_batch(data, spec.task_index, spec.num_samples, rng)
            _write_matrix(fh, batch.x)
            _write_matrix(fh, batch.y)


def import_dataset(path: str) -> tuple[MultitaskData, list[TaskBatch]]:
    """Inverse of export_dataset; returns the task family and sample banks."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DatasetFormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        header = fh.read(20)
        if len(header) != 20:
            raise DatasetFormatError("truncated dataset header")
        version, d_in, d_out, r_star, num_tasks = struct.unpack("<IIIII", header)
        if version != _VERSION:
            raise DatasetFormatError(f"unsupported dataset version {version}")
        w_base = _read_matrix(fh, d_out, d_in)
        tasks = []
        banks = []
        for i in range(num_tasks):
            rec = fh.read(16)
            if len(rec) != 16:
                raise DatasetFormatError("truncated task record")
            noise_std, n = struct.unpack("<dQ", rec)
            a = _read_matrix(fh, r_star, d_in)
            b = _read_matrix(fh, d_out, r_star)
            x = _read_matrix(fh, d_in, n)
            y = _read_matrix(fh, d_out, n)
            tasks.append(TaskSpec(i, a, b, noise_std, n))
            banks.append(TaskBatch(i, x, y))
    return MultitaskData(w_base, tasks), banks
