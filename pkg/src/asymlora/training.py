"""Multi-task training on the joint objective sum_i L_i, plus evaluation.

Task mini-batches interleave in strict round-robin so every task contributes
equally. Only adapter and gate parameters update; base weights stay frozen
(certified by fingerprint in tests). Every optimizer step touches every
trainable parameter, with exact zeros for parameters the batch's task does
not reach, so Adam moment decay behaves the same way it does in mainstream
trainers.

Random streams are derived per purpose from the run seed ("train", "eval",
"init", "host"), so e.g. consuming extra init draws for a gate never shifts
the data stream. That is what makes the degenerate-scheme equivalences
(asym_lora N=1 vs lora, moe_asym_lora J=1 vs asym_lora) bit-exact.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import adapters as ad
from .autograd import GradientSet, backward, mse_loss
from .backend import kernels
from .data import MultitaskData, generate_tasks, sample_batch
from .errors import TrainingDiverged
from .host import HostModel, attach_adapters, forward, make_host
from .linalg import Matrix, Rng, derive_seed

Record = Callable[[dict], None]


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


class Adam:
    """Adam with per-parameter moment buffers keyed by parameter name."""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.step_count = 0
        self.moments: dict[str, tuple] = {}

    def _slot(self, key: str, n: int):
        if key not in self.moments:
            from array import array

            self.moments[key] = (array("d", bytes(8 * n)), array("d", bytes(8 * n)))
        return self.moments[key]

    def apply(self, model: HostModel, grads: GradientSet) -> None:
        self.step_count += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1 ** self.step_count
        bc2 = 1.0 - c.beta2 ** self.step_count
        gpairs = grads.named_grads()
        for (key, p), (gkey, g) in zip(model.named_params(), gpairs):
            assert key == gkey, f"param/grad order mismatch: {key} vs {gkey}"
            m, v = self._slot(key, len(p.data))
            new = kernels.adam_step(p.data, g.data, m, v, c.learning_rate,
                                    c.beta1, c.beta2, c.epsilon, bc1, bc2)
            model.set_param(key, Matrix(p.rows, p.cols, new))


class Sgd:
    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.step_count = 0
        self.moments: dict[str, tuple] = {}

    def apply(self, model: HostModel, grads: GradientSet) -> None:
        self.step_count += 1
        for (key, p), (gkey, g) in zip(model.named_params(), grads.named_grads()):
            assert key == gkey, f"param/grad order mismatch: {key} vs {gkey}"
            new = kernels.sgd_step(p.data, g.data, self.cfg.learning_rate)
            model.set_param(key, Matrix(p.rows, p.cols, new))


Optimizer = Adam | Sgd


def make_optimizer(cfg: OptimizerConfig) -> Optimizer:
    if cfg.kind == "adam":
        return Adam(cfg)
    if cfg.kind == "sgd":
        return Sgd(cfg)
    raise ValueError(f"unknown optimizer kind {cfg.kind!r}")


@dataclass
class GateStats:
    mean_weights: list[list[float]]  # per task, length-J mean gate vector
    mean_entropy: float


@dataclass
class RunReport:
    scheme: str
    seed: int
    steps: int
    per_task_loss: list[float]
    mean_loss: float
    param_count: int
    wall_clock_s: float
    gate_stats: Optional[GateStats] = None


def trainable_param_total(model: HostModel) -> int:
    return sum(p.rows * p.cols for _, p in model.named_params())


def _gate_entropy_of_cache(cache) -> Optional[float]:
    vals = [
        ad.gate_entropy(lc.adapter.w_vec)
        for lc in cache.layers
        if lc.adapter is not None and lc.adapter.w_vec is not None
    ]
    if not vals:
        return None
    return sum(vals) / len(vals)


def evaluate(model: HostModel, data: MultitaskData, num_batches: int, seed: int,
             batch_size: int = 32) -> list[float]:
    """Held-out per-task MSE over fresh batches; no parameter mutation."""
    rng = Rng(derive_seed(seed, "eval"))
    losses = []
    for i in range(data.num_tasks):
        total = 0.0
        for _ in range(num_batches):
            batch = sample_batch(data, i, batch_size, rng)
            out, _ = forward(model, i, batch.x)
            total += mse_loss(out, batch.y)
        losses.append(total / num_batches)
    return losses


def gate_statistics(model: HostModel, data: MultitaskData, num_batches: int,
                    seed: int, batch_size: int = 32) -> Optional[GateStats]:
    """Mean gate weights per task and mean entropy, for gated schemes."""
    rng = Rng(derive_seed(seed, "gate_stats"))
    per_task = []
    entropies = []
    any_gate = False
    for i in range(data.num_tasks):
        sums: Optional[list[float]] = None
        count = 0
        for _ in range(num_batches):
            batch = sample_batch(data, i, batch_size, rng)
            _, cache = forward(model, i, batch.x)
            for lc in cache.layers:
                if lc.adapter is not None and lc.adapter.w_vec is not None:
                    any_gate = True
                    w = lc.adapter.w_vec
                    sums = w if sums is None else [a + b for a, b in zip(sums, w)]
                    entropies.append(ad.gate_entropy(w))
                    count += 1
        per_task.append([s / count for s in sums] if sums else [])
    if not any_gate:
        return None
    return GateStats(per_task, sum(entropies) / len(entropies))


def train(model: HostModel, data: MultitaskData, optimizer: Optimizer, steps: int,
          seed: int, batch_size: int = 32, eval_batches: int = 16,
          scheme_name: str = "", record: Optional[Record] = None,
          start_step: int = 0, data_rng: Optional[Rng] = None) -> RunReport:
    """Round-robin training for `steps` batches, then a held-out evaluation.

    `start_step` and `data_rng` support checkpoint resumption: a resumed run
    continues the saved data stream and step numbering, so its trace matches
    an uninterrupted run exactly.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if data_rng is None:
        data_rng = Rng(derive_seed(seed, "train"))
    t0 = time.perf_counter()
    n_tasks = data.num_tasks
    for t in range(start_step, start_step + steps):
        task = t % n_tasks
        batch = sample_batch(data, task, batch_size, data_rng)
        out, cache = forward(model, task, batch.x)
        loss, grads = backward(model, batch, cache)
        if not math.isfinite(loss):
            raise TrainingDiverged(t + 1, task, loss)
        optimizer.apply(model, grads)
        if record is not None:
            rec = {"kind": "train", "scheme": scheme_name, "seed": seed,
                   "step": t + 1, "task": task, "loss": loss}
            entropy = _gate_entropy_of_cache(cache)
            if entropy is not None:
                rec["gate_entropy"] = entropy
            record(rec)
    per_task = evaluate(model, data, eval_batches, seed, batch_size)
    end_step = start_step + steps
    if record is not None:
        for i, l in enumerate(per_task):
            record({"kind": "eval", "scheme": scheme_name, "seed": seed,
                    "step": end_step, "task": i, "loss": l})
    mean_loss = sum(per_task) / len(per_task)
    report = RunReport(
        scheme=scheme_name,
        seed=seed,
        steps=end_step,
        per_task_loss=per_task,
        mean_loss=mean_loss,
        param_count=trainable_param_total(model),
        wall_clock_s=time.perf_counter() - t0,
        gate_stats=gate_statistics(model, data, max(1, eval_batches // 4), seed, batch_size),
    )
    if record is not None:
        record({"kind": "report", "scheme": scheme_name, "seed": seed,
                "step": end_step, "mean_loss": mean_loss,
                "param_count": report.param_count})
    return report


def build_model(scheme_kind: str, cfg, data: MultitaskData, seed: int) -> HostModel:
    """Host + adapters for one run.

    With no hidden layer the host's single affine weight IS the data family's
    base weight, which makes the teachers exactly realizable by the adapters
    (rank permitting) and the least-squares oracles in the test suite exact.
    """
    scheme = ad.AdapterScheme(scheme_kind, cfg.rank, cfg.num_tasks, cfg.num_experts,
                              scale=cfg.scale, routing=cfg.routing)
    if cfg.hidden == 0:
        model = make_host([cfg.d_in, cfg.d_out], base_weight=data.w_base,
                          routing=cfg.routing)
    else:
        model = make_host([cfg.d_in, cfg.hidden, cfg.d_out],
                          Rng(derive_seed(seed, "host")), routing=cfg.routing)
    attach_adapters(model, scheme, Rng(derive_seed(seed, "init")),
                    layer_indices=cfg.adapt_layers)
    return model


def make_data(cfg, seed: int) -> MultitaskData:
    teacher_rank = cfg.teacher_rank if cfg.teacher_rank > 0 else cfg.rank
    return generate_tasks(cfg.num_tasks, cfg.commonality, cfg.conflict,
                          cfg.d_in, cfg.d_out, teacher_rank,
                          derive_seed(seed, "data"), noise_std=cfg.noise_std,
                          num_samples=cfg.export_samples,
                          teacher_scale=cfg.teacher_scale)


@dataclass
class CompareCell:
    scheme: str
    seed: int
    report: Optional[RunReport]
    error: Optional[str] = None


@dataclass
class CompareResult:
    cells: list[CompareCell]
    records: list[dict] = field(default_factory=list)

    def mean_loss(self, scheme: str) -> float:
        vals = [c.report.mean_loss for c in self.cells
                if c.scheme == scheme and c.report is not None]
        return sum(vals) / len(vals)

    def std_loss(self, scheme: str) -> float:
        vals = [c.report.mean_loss for c in self.cells
                if c.scheme == scheme and c.report is not None]
        mu = sum(vals) / len(vals)
        return math.sqrt(sum((v - mu) ** 2 for v in vals) / len(vals))

    def seed_losses(self, scheme: str) -> dict[int, float]:
        return {c.seed: c.report.mean_loss for c in self.cells
                if c.scheme == scheme and c.report is not None}


def _compare_threads(n_cells: int) -> int:
    env = os.environ.get("ASYMLORA_THREADS", "").strip()
    if env:
        limit = max(1, int(env))
    else:
        limit = os.cpu_count() or 1
    return max(1, min(limit, n_cells))


def compare_schemes(cfg) -> CompareResult:
    """Train every (scheme, seed) cell on identical tasks and batch streams.

    Cells may run in parallel (capped by ASYMLORA_THREADS); records are
    buffered per cell and concatenated in canonical scheme-major order, so
    the output is deterministic regardless of scheduling. A diverged cell is
    reported with its error and does not abort the rest.
    """
    jobs = [(scheme, seed) for scheme in cfg.schemes for seed in cfg.seeds]

    def run_cell(job) -> tuple[CompareCell, list[dict]]:
        scheme, seed = job
        records: list[dict] = []
        try:
            data = make_data(cfg, seed)
            model = build_model(scheme, cfg, data, seed)
            opt = make_optimizer(cfg.optimizer)
            report = train(model, data, opt, cfg.steps, seed,
                           batch_size=cfg.batch_size, eval_batches=cfg.eval_batches,
                           scheme_name=scheme, record=records.append)
            return CompareCell(scheme, seed, report), records
        except TrainingDiverged as exc:
            return CompareCell(scheme, seed, None, error=str(exc)), records

    workers = _compare_threads(len(jobs))
    if workers == 1:
        outcomes = [run_cell(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_cell, jobs))

    cells = [cell for cell, _ in outcomes]
    records: list[dict] = []
    for _, recs in outcomes:
        records.extend(recs)
    return CompareResult(cells, records)
