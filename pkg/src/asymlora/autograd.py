"""Hand-derived reverse-mode gradients for adapter and gate parameters.

The computation graph is small and fixed (affine layers, relu, the low-rank
adapter path, softmax gate mixing, MSE), so the backward pass is written out
operator by operator instead of through a tape. Base weights are frozen and
never receive gradients.

``finite_diff_check`` is the independent oracle: central differences on the
loss, parameter by parameter, compared against the analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from . import adapters as ad
from .errors import CacheMismatch
from .host import ForwardCache, HostModel, forward
from .linalg import (
    Matrix,
    Rng,
    add,
    add_bias,
    frob_inner,
    gaussian,
    matmul,
    scale as mat_scale,
    sub,
    transpose,
    zeros,
)
from .backend import kernels


@dataclass
class LoraGrads:
    d_a: Matrix
    d_b: Matrix

    def named_grads(self):
        return [("a", self.d_a), ("b", self.d_b)]


@dataclass
class MoeLoraGrads:
    d_a_tasks: list[Matrix]
    d_b_tasks: list[Matrix]

    def named_grads(self):
        out = []
        for i in range(len(self.d_a_tasks)):
            out.append((f"a{i}", self.d_a_tasks[i]))
            out.append((f"b{i}", self.d_b_tasks[i]))
        return out


@dataclass
class AsymGrads:
    d_a_shared: Matrix
    d_b_tasks: list[Matrix]

    def named_grads(self):
        return [("a_shared", self.d_a_shared)] + [
            (f"b{i}", g) for i, g in enumerate(self.d_b_tasks)
        ]


@dataclass
class MoeAsymGrads:
    d_a_shared: Matrix
    d_b_experts: list[list[Matrix]]
    d_gate_weights: Matrix
    d_gate_bias: Matrix

    def named_grads(self):
        out = [("a_shared", self.d_a_shared)]
        for i, row in enumerate(self.d_b_experts):
            for j, g in enumerate(row):
                out.append((f"b{i}e{j}", g))
        out.append(("gate_w", self.d_gate_weights))
        out.append(("gate_b", self.d_gate_bias))
        return out


AdapterGrads = LoraGrads | MoeLoraGrads | AsymGrads | MoeAsymGrads


@dataclass
class GradientSet:
    """Per-layer adapter gradients, aligned with model.layers (None = no adapter)."""

    layers: list[Optional[AdapterGrads]]

    def named_grads(self) -> list[tuple[str, Matrix]]:
        out = []
        for idx, g in enumerate(self.layers):
            if g is not None:
                for name, grad in g.named_grads():
                    out.append((f"layer{idx}/{name}", grad))
        return out


def mse_loss(out: Matrix, y: Matrix) -> float:
    """(1/(d_o * batch)) * ||out - y||_F^2."""
    diff = sub(out, y)
    return kernels.sumsq(diff.data) / (out.rows * out.cols)


def _adapter_backward(layer, acache: ad.AdapterCache, g: Matrix, x: Matrix):
    """Gradients of one adapter site given dL/dz = g; returns (grads, dx_extra).

    dx_extra is the adapter's contribution to dL/dx beyond W^T g (the low-rank
    path, plus the gate-feature path for gated adapters).
    """
    adapter = layer.adapter
    s = adapter.scale
    u = acache.u
    b_eff = acache.b_eff
    a_used = acache.a_used

    d_b_eff = mat_scale(matmul(g, transpose(u)), s)
    t = matmul(transpose(b_eff), g)  # rank x batch
    d_a = mat_scale(matmul(t, transpose(x)), s)
    dx = mat_scale(matmul(transpose(a_used), t), s)

    if isinstance(adapter, ad.LoraAdapter):
        return LoraGrads(d_a, d_b_eff), dx

    if isinstance(adapter, ad.MoeLoraAdapter):
        n = adapter.num_tasks
        d_as = [zeros(m.rows, m.cols) for m in adapter.a_tasks]
        d_bs = [zeros(m.rows, m.cols) for m in adapter.b_tasks]
        d_as[acache.task] = d_a
        d_bs[acache.task] = d_b_eff
        return MoeLoraGrads(d_as, d_bs), dx

    if isinstance(adapter, ad.AsymAdapter):
        d_bs = [zeros(m.rows, m.cols) for m in adapter.b_tasks]
        d_bs[acache.task] = d_b_eff
        return AsymGrads(d_a, d_bs), dx

    # MoeAsymAdapter: distribute d_b_eff over experts, then the gate chain.
    w_vec = acache.w_vec
    task = acache.task
    n_experts = adapter.num_experts
    d_grid = [
        [zeros(b.rows, b.cols) for b in row] for row in adapter.b_experts
    ]
    for j in range(n_experts):
        d_grid[task][j] = mat_scale(d_b_eff, w_vec[j])

    if n_experts == 1:
        # Softmax over one logit is constantly 1: the gate contributes nothing.
        d_gate_w = zeros(adapter.gate.weights.rows, adapter.gate.weights.cols)
        d_gate_b = zeros(adapter.gate.bias.rows, 1)
        return MoeAsymGrads(d_a, d_grid, d_gate_w, d_gate_b), dx

    # dL/dw_j = s * <g, B^j u>; softmax Jacobian: dL/dlogit_k = w_k (dL/dw_k - S).
    d_w = [
        s * frob_inner(g, matmul(adapter.b_experts[task][j], u))
        for j in range(n_experts)
    ]
    s_mix = sum(w_vec[j] * d_w[j] for j in range(n_experts))
    d_logits = Matrix(
        n_experts, 1, [w_vec[j] * (d_w[j] - s_mix) for j in range(n_experts)]
    )
    d_gate_w = matmul(d_logits, transpose(acache.features))
    d_gate_b = d_logits
    # Feature pooling is a column mean, so each input column gets (1/m) U^T dlogits.
    gate_dx_col = mat_scale(matmul(transpose(adapter.gate.weights), d_logits),
                            1.0 / x.cols)
    dx = add_bias(dx, gate_dx_col)
    return MoeAsymGrads(d_a, d_grid, d_gate_w, d_gate_b), dx


def backward(model: HostModel, batch, cache: ForwardCache) -> tuple[float, GradientSet]:
    """MSE loss and exact adapter/gate gradients for one task batch."""
    if cache.task != batch.task_index or cache.layers[0].x is not batch.x:
        raise CacheMismatch("forward cache does not correspond to this batch")
    out = cache.output
    y = batch.y
    d_o, m = out.rows, out.cols
    diff = sub(out, y)
    loss = kernels.sumsq(diff.data) / (d_o * m)

    g = mat_scale(diff, 2.0 / (d_o * m))  # dL/d(output)
    grads: list[Optional[AdapterGrads]] = [None] * len(model.layers)
    for idx in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[idx]
        lcache = cache.layers[idx]
        if layer.activation == "relu":
            g = Matrix(g.rows, g.cols, kernels.relu_bwd(lcache.z.data, g.data))
        if layer.adapter is not None:
            grads[idx], dx_extra = _adapter_backward(layer, lcache.adapter, g, lcache.x)
        else:
            dx_extra = None
        if idx > 0:
            g = matmul(transpose(layer.w), g)
            if dx_extra is not None:
                g = add(g, dx_extra)
    return loss, GradientSet(grads)


def loss_only(model: HostModel, batch) -> float:
    out, _ = forward(model, batch.task_index, batch.x)
    return mse_loss(out, batch.y)


def finite_diff_check(model: HostModel, batch, selector: Optional[Callable[[str], bool]] = None,
                      epsilon: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Perturbs every selected scalar parameter by +/- epsilon and compares
    (L+ - L-)/(2 eps) against the analytic entry, with relative error
    |ga - gfd| / max(1, |ga|, |gfd|).
    """
    if not 0.0 < epsilon < 1e-2:
        raise ValueError(f"epsilon must be in (0, 1e-2), got {epsilon}")
    out, cache = forward(model, batch.task_index, batch.x)
    _, grads = backward(model, batch, cache)
    gdict = dict(grads.named_grads())
    worst = 0.0
    for key, param in model.named_params():
        if selector is not None and not selector(key):
            continue
        ga = gdict[key]
        for i in range(param.rows):
            for j in range(param.cols):
                v = param.at(i, j)
                model.set_param(key, param.with_entry(i, j, v + epsilon))
                lp = loss_only(model, batch)
                model.set_param(key, param.with_entry(i, j, v - epsilon))
                lm = loss_only(model, batch)
                model.set_param(key, param)
                gfd = (lp - lm) / (2.0 * epsilon)
                gan = ga.at(i, j)
                rel = abs(gan - gfd) / max(1.0, abs(gan), abs(gfd))
                worst = max(worst, rel)
    return worst


def _kink_free(model: HostModel, cache: ForwardCache, margin: float = 1e-6) -> bool:
    for layer, lcache in zip(model.layers, cache.layers):
        if layer.activation == "relu" and any(abs(z) < margin for z in lcache.z.data):
            return False
    return True


def gradcheck_sweep(scheme_kind: str, n_configs: int, seed: int,
                    epsilon: float = 1e-5) -> float:
    """Max FD relative error over randomized small configurations of one scheme.

    Dimensions stay <= 8, rank <= 3, tasks <= 3, experts <= 2; inputs are
    resampled when any relu pre-activation sits within 1e-6 of its kink, so
    the central difference never straddles a nondifferentiable point.
    """
    from .data import TaskBatch  # local import to avoid a cycle
    from .host import attach_adapters, make_host

    rng = Rng(0).derive(f"gradcheck/{scheme_kind}/{seed}")
    worst = 0.0
    for _ in range(n_configs):
        d_in = 2 + rng.next_u64() % 7
        d_out = 2 + rng.next_u64() % 7
        hidden = 2 + rng.next_u64() % 7 if rng.uniform() < 0.5 else 0
        widths = [d_in, hidden, d_out] if hidden else [d_in, d_out]
        rank = 1 + rng.next_u64() % min(3, d_in, d_out, hidden or d_in)
        n_tasks = 1 + rng.next_u64() % 3
        n_experts = 1 + rng.next_u64() % 2
        m = 1 + rng.next_u64() % 4
        scheme = ad.AdapterScheme(scheme_kind, rank, n_tasks, n_experts,
                                  scale=0.5 + rng.uniform())
        model = make_host(widths, rng)
        for layer in model.layers:
            layer.bias = gaussian(layer.d_out, 1, rng, std=0.3)
        attach_adapters(model, scheme, rng)
        # Random nonzero parameters: zero-B would silence the A-grad path.
        for key, param in model.named_params():
            model.set_param(key, gaussian(param.rows, param.cols, rng, std=0.5))
        task = rng.next_u64() % n_tasks
        y = gaussian(d_out, m, rng)
        for _attempt in range(50):
            x = gaussian(d_in, m, rng)
            _, cache = forward(model, task, x)
            if _kink_free(model, cache):
                break
        batch = TaskBatch(task, x, y)
        worst = max(worst, finite_diff_check(model, batch, epsilon=epsilon))
    return worst
