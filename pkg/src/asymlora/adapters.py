"""Low-rank adapter schemes over a frozen weight.

Four variants of the update y = Wx + scale * B(Ax):

* ``lora``          - one (A, B) pair shared by every task.
* ``moe_lora``      - N independent (A_i, B_i) pairs, one per task.
* ``asym_lora``     - one shared A, N task-specific B_i.
* ``moe_asym_lora`` - one shared A, an N x J grid of expert matrices B_i^j
  mixed by a softmax gate: B_eff = sum_j w_j B_i^j.

B matrices start at zero and A matrices Kaiming-uniform, so a fresh adapter
is an exact no-op on the frozen forward. All scheme forwards funnel through
one helper so that degenerate configurations (asym with N=1 vs lora, moe
with J=1 vs asym) are bit-identical, not merely close.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .linalg import (
    Matrix,
    Rng,
    axpy,
    kaiming_uniform,
    matmul,
    mean_over_columns,
    scale as mat_scale,
    zeros,
)
from .errors import ShapeError

SCHEMES = ("lora", "moe_lora", "asym_lora", "moe_asym_lora")
ROUTING_MODES = ("oracle", "learned")


@dataclass(frozen=True)
class AdapterScheme:
    """Tagged adapter configuration: which variant, and its capacity knobs."""

    kind: str
    rank: int
    num_tasks: int = 1
    num_experts: int = 1
    scale: float = 1.0
    routing: str = "oracle"

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.routing not in ROUTING_MODES:
            raise ValueError(f"unknown routing mode {self.routing!r}")
        if self.rank < 1 or self.num_tasks < 1 or self.num_experts < 1:
            raise ValueError("rank, num_tasks, num_experts must all be >= 1")


class GateNetwork:
    """Single affine layer + softmax over experts.

    Input features are the column mean of the layer input (one weight vector
    per batch). Weights are Kaiming-initialized, bias starts at zero.
    """

    def __init__(self, weights: Matrix, bias: Matrix):
        self.weights = weights  # J x d_i
        self.bias = bias  # J x 1

    @classmethod
    def init(cls, num_experts: int, d_in: int, rng: Rng) -> "GateNetwork":
        return cls(kaiming_uniform(num_experts, d_in, d_in, rng), zeros(num_experts, 1))

    @property
    def num_experts(self) -> int:
        return self.weights.rows


def softmax(logits: list[float]) -> list[float]:
    m = max(logits)
    exps = [math.exp(z - m) for z in logits]
    s = sum(exps)
    return [e / s for e in exps]


def gate_entropy(w: list[float]) -> float:
    return -sum(wj * math.log(wj) for wj in w if wj > 0.0)


def gate_weights(gate: GateNetwork, x: Matrix) -> list[float]:
    """Softmax expert weights for one batch: a point on the J-simplex."""
    features = mean_over_columns(x)
    logits = matmul(gate.weights, features)
    return softmax(
        [logits.data[j] + gate.bias.data[j] for j in range(gate.num_experts)]
    )


class LoraAdapter:
    def __init__(self, a: Matrix, b: Matrix, rank: int, scale: float):
        if a.rows != rank or b.cols != rank:
            raise ShapeError("lora adapter", a.shape, b.shape)
        self.a = a
        self.b = b
        self.rank = rank
        self.scale = scale

    @classmethod
    def init(cls, d_in: int, d_out: int, rank: int, scale: float, rng: Rng) -> "LoraAdapter":
        return cls(kaiming_uniform(rank, d_in, d_in, rng), zeros(d_out, rank), rank, scale)

    def named_params(self) -> list[tuple[str, Matrix]]:
        return [("a", self.a), ("b", self.b)]

    def set_param(self, name: str, value: Matrix) -> None:
        if name == "a":
            self.a = value
        elif name == "b":
            self.b = value
        else:
            raise KeyError(name)


class MoeLoraAdapter:
    """N full LoRA pairs, routed by the batch's task index."""

    def __init__(self, a_tasks: list[Matrix], b_tasks: list[Matrix], rank: int, scale: float):
        self.a_tasks = a_tasks
        self.b_tasks = b_tasks
        self.rank = rank
        self.scale = scale

    @classmethod
    def init(cls, d_in: int, d_out: int, rank: int, num_tasks: int, scale: float, rng: Rng) -> "MoeLoraAdapter":
        a_tasks = [kaiming_uniform(rank, d_in, d_in, rng) for _ in range(num_tasks)]
        b_tasks = [zeros(d_out, rank) for _ in range(num_tasks)]
        return cls(a_tasks, b_tasks, rank, scale)

    @property
    def num_tasks(self) -> int:
        return len(self.a_tasks)

    def named_params(self) -> list[tuple[str, Matrix]]:
        out = []
        for i in range(self.num_tasks):
            out.append((f"a{i}", self.a_tasks[i]))
            out.append((f"b{i}", self.b_tasks[i]))
        return out

    def set_param(self, name: str, value: Matrix) -> None:
        idx = int(name[1:])
        if name[0] == "a":
            self.a_tasks[idx] = value
        elif name[0] == "b":
            self.b_tasks[idx] = value
        else:
            raise KeyError(name)


class AsymAdapter:
    """Shared A, task-specific B_i.

    ``task_gate`` is an optional, untrained gate over the N task matrices; it
    is attached only in "learned" routing mode and used at evaluation time to
    pick B matrices when no task index is supplied. It is not a trainable
    parameter and does not count toward the scheme's parameter budget.
    """

    def __init__(self, a_shared: Matrix, b_tasks: list[Matrix], rank: int, scale: float,
                 task_gate: Optional[GateNetwork] = None):
        self.a_shared = a_shared
        self.b_tasks = b_tasks
        self.rank = rank
        self.scale = scale
        self.task_gate = task_gate

    @classmethod
    def init(cls, d_in: int, d_out: int, rank: int, num_tasks: int, scale: float, rng: Rng,
             routing: str = "oracle") -> "AsymAdapter":
        a_shared = kaiming_uniform(rank, d_in, d_in, rng)
        b_tasks = [zeros(d_out, rank) for _ in range(num_tasks)]
        gate = GateNetwork.init(num_tasks, d_in, rng) if routing == "learned" else None
        return cls(a_shared, b_tasks, rank, scale, gate)

    @property
    def num_tasks(self) -> int:
        return len(self.b_tasks)

    def named_params(self) -> list[tuple[str, Matrix]]:
        return [("a_shared", self.a_shared)] + [
            (f"b{i}", self.b_tasks[i]) for i in range(self.num_tasks)
        ]

    def set_param(self, name: str, value: Matrix) -> None:
        if name == "a_shared":
            self.a_shared = value
        elif name.startswith("b"):
            self.b_tasks[int(name[1:])] = value
        else:
            raise KeyError(name)


class MoeAsymAdapter:
    """Shared A, N x J expert grid B_i^j, softmax gate over the J experts."""

    def __init__(self, a_shared: Matrix, b_experts: list[list[Matrix]], gate: GateNetwork,
                 rank: int, scale: float):
        self.a_shared = a_shared
        self.b_experts = b_experts  # [task][expert]
        self.gate = gate
        self.rank = rank
        self.scale = scale

    @classmethod
    def init(cls, d_in: int, d_out: int, rank: int, num_tasks: int, num_experts: int,
             scale: float, rng: Rng) -> "MoeAsymAdapter":
        a_shared = kaiming_uniform(rank, d_in, d_in, rng)
        b_experts = [
            [zeros(d_out, rank) for _ in range(num_experts)] for _ in range(num_tasks)
        ]
        gate = GateNetwork.init(num_experts, d_in, rng)
        return cls(a_shared, b_experts, gate, rank, scale)

    @property
    def num_tasks(self) -> int:
        return len(self.b_experts)

    @property
    def num_experts(self) -> int:
        return len(self.b_experts[0])

    def named_params(self) -> list[tuple[str, Matrix]]:
        out = [("a_shared", self.a_shared)]
        for i in range(self.num_tasks):
            for j in range(self.num_experts):
                out.append((f"b{i}e{j}", self.b_experts[i][j]))
        out.append(("gate_w", self.gate.weights))
        out.append(("gate_b", self.gate.bias))
        return out

    def set_param(self, name: str, value: Matrix) -> None:
        if name == "a_shared":
            self.a_shared = value
        elif name == "gate_w":
            self.gate.weights = value
        elif name == "gate_b":
            self.gate.bias = value
        elif name.startswith("b"):
            i, j = name[1:].split("e")
            self.b_experts[int(i)][int(j)] = value
        else:
            raise KeyError(name)


Adapter = LoraAdapter | MoeLoraAdapter | AsymAdapter | MoeAsymAdapter


@dataclass
class AdapterCache:
    """Intermediates the backward pass needs; filled by forward_with_cache."""

    a_used: Matrix
    b_eff: Matrix
    u: Matrix  # A x, rank x batch
    task: int
    w_vec: Optional[list[float]] = None
    features: Optional[Matrix] = None


def _check_forward_shapes(w: Matrix, a: Matrix, b: Matrix, x: Matrix) -> None:
    if w.cols != x.rows or a.cols != x.rows or b.rows != w.rows or a.rows != b.cols:
        raise ShapeError("adapter forward", w.shape, a.shape, b.shape, x.shape)


def _lowrank_forward(w: Matrix, a: Matrix, b_eff: Matrix, scale: float, x: Matrix) -> tuple[Matrix, Matrix]:
    """w.x + scale * b_eff.(a.x); the two skinny products, never b_eff.a."""
    _check_forward_shapes(w, a, b_eff, x)
    base = matmul(w, x)
    u = matmul(a, x)
    return axpy(base, scale, matmul(b_eff, u)), u


def _check_task(task: int, num_tasks: int) -> None:
    if not 0 <= task < num_tasks:
        raise IndexError(f"task index {task} out of range [0, {num_tasks})")


def _mix_experts(b_list: list[Matrix], w_vec: list[float]) -> Matrix:
    b_eff = mat_scale(b_list[0], w_vec[0])
    for j in range(1, len(b_list)):
        b_eff = axpy(b_eff, w_vec[j], b_list[j])
    return b_eff


def lora_forward(w: Matrix, adapter: LoraAdapter, x: Matrix) -> Matrix:
    """y = w.x + scale * b.(a.x)."""
    return _lowrank_forward(w, adapter.a, adapter.b, adapter.scale, x)[0]


def asym_forward(w: Matrix, adapter: AsymAdapter, task: int, x: Matrix) -> Matrix:
    """y = w.x + scale * b_task.(a_shared.x); other tasks' B are untouched."""
    _check_task(task, adapter.num_tasks)
    return _lowrank_forward(w, adapter.a_shared, adapter.b_tasks[task], adapter.scale, x)[0]


def moe_asym_forward(w: Matrix, adapter: MoeAsymAdapter, task: int, x: Matrix) -> tuple[Matrix, list[float]]:
    """Gate-mixed forward: B_eff = sum_j w_j B_task^j; returns (output, gate weights)."""
    _check_task(task, adapter.num_tasks)
    w_vec = gate_weights(adapter.gate, x)
    b_eff = _mix_experts(adapter.b_experts[task], w_vec)
    out, _ = _lowrank_forward(w, adapter.a_shared, b_eff, adapter.scale, x)
    return out, w_vec


def forward_with_cache(w: Matrix, adapter: Adapter, task: int, x: Matrix,
                       routing: str = "oracle") -> tuple[Matrix, AdapterCache]:
    """Scheme dispatch used by the host model; caches backward intermediates."""
    if isinstance(adapter, LoraAdapter):
        out, u = _lowrank_forward(w, adapter.a, adapter.b, adapter.scale, x)
        return out, AdapterCache(adapter.a, adapter.b, u, task)
    if isinstance(adapter, MoeLoraAdapter):
        _check_task(task, adapter.num_tasks)
        a = adapter.a_tasks[task]
        b = adapter.b_tasks[task]
        out, u = _lowrank_forward(w, a, b, adapter.scale, x)
        return out, AdapterCache(a, b, u, task)
    if isinstance(adapter, AsymAdapter):
        if routing == "learned":
            if adapter.task_gate is None:
                raise ValueError("learned routing requires an adapter built with routing='learned'")
            w_vec = gate_weights(adapter.task_gate, x)
            b_eff = _mix_experts(adapter.b_tasks, w_vec)
            out, u = _lowrank_forward(w, adapter.a_shared, b_eff, adapter.scale, x)
            return out, AdapterCache(adapter.a_shared, b_eff, u, task, w_vec=w_vec)
        _check_task(task, adapter.num_tasks)
        b = adapter.b_tasks[task]
        out, u = _lowrank_forward(w, adapter.a_shared, b, adapter.scale, x)
        return out, AdapterCache(adapter.a_shared, b, u, task)
    if isinstance(adapter, MoeAsymAdapter):
        _check_task(task, adapter.num_tasks)
        features = mean_over_columns(x)
        w_vec = gate_weights(adapter.gate, x)
        b_eff = _mix_experts(adapter.b_experts[task], w_vec)
        out, u = _lowrank_forward(w, adapter.a_shared, b_eff, adapter.scale, x)
        return out, AdapterCache(adapter.a_shared, b_eff, u, task, w_vec=w_vec, features=features)
    raise TypeError(f"unknown adapter type {type(adapter).__name__}")


def merge_adapter(w: Matrix, a: Matrix, b_eff: Matrix, scale: float) -> Matrix:
    """Fold the low-rank update into the dense weight: W' = W + scale * b_eff.a."""
    if b_eff.cols != a.rows or w.rows != b_eff.rows or w.cols != a.cols:
        raise ShapeError("merge_adapter", w.shape, b_eff.shape, a.shape)
    return axpy(w, scale, matmul(b_eff, a))


def make_adapter(scheme: AdapterScheme, d_in: int, d_out: int, rng: Rng) -> Adapter:
    """Freshly initialized adapter for one attachment site (zero-B, so a no-op)."""
    if scheme.rank > min(d_in, d_out):
        raise ValueError(
            f"rank {scheme.rank} exceeds min(d_in, d_out) = {min(d_in, d_out)}"
        )
    if scheme.kind == "lora":
        return LoraAdapter.init(d_in, d_out, scheme.rank, scheme.scale, rng)
    if scheme.kind == "moe_lora":
        return MoeLoraAdapter.init(d_in, d_out, scheme.rank, scheme.num_tasks, scheme.scale, rng)
    if scheme.kind == "asym_lora":
        return AsymAdapter.init(d_in, d_out, scheme.rank, scheme.num_tasks, scheme.scale, rng,
                                routing=scheme.routing)
    return MoeAsymAdapter.init(d_in, d_out, scheme.rank, scheme.num_tasks,
                               scheme.num_experts, scheme.scale, rng)


@dataclass(frozen=True)
class ParamCount:
    """Trainable entries per component for one adapter site."""

    a: int
    b: int
    gate: int

    @property
    def total(self) -> int:
        return self.a + self.b + self.gate


def param_count(kind: str, d_in: int, d_out: int, rank: int,
                num_tasks: int = 1, num_experts: int = 1) -> ParamCount:
    """Trainable-parameter formulas per scheme, for a single adapter site."""
    if kind == "lora":
        return ParamCount(rank * d_in, d_out * rank, 0)
    if kind == "moe_lora":
        return ParamCount(num_tasks * rank * d_in, num_tasks * d_out * rank, 0)
    if kind == "asym_lora":
        return ParamCount(rank * d_in, num_tasks * d_out * rank, 0)
    if kind == "moe_asym_lora":
        return ParamCount(
            rank * d_in,
            num_tasks * num_experts * d_out * rank,
            num_experts * (d_in + 1),
        )
    raise ValueError(f"unknown scheme kind {kind!r}")
