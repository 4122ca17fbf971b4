"""Frozen host network: a stack of affine layers with adapter slots.

Base weights and biases never receive gradients; only attached adapters (and
their gates) train. ``freeze_fingerprint`` hashes the base parameters so a
test or run can certify that training left them untouched.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

from . import adapters as ad
from .errors import ShapeError
from .linalg import Matrix, Rng, add_bias, kaiming_uniform, matmul, zeros
from .backend import kernels

ACTIVATIONS = ("relu", "identity")


class HostLayer:
    def __init__(self, w: Matrix, bias: Matrix, activation: str,
                 adapter: Optional[ad.Adapter] = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if bias.rows != w.rows or bias.cols != 1:
            raise ShapeError("host layer bias", w.shape, bias.shape)
        self.w = w
        self.bias = bias
        self.activation = activation
        self.adapter = adapter

    @property
    def d_in(self) -> int:
        return self.w.cols

    @property
    def d_out(self) -> int:
        return self.w.rows


class HostModel:
    def __init__(self, layers: list[HostLayer], routing: str = "oracle"):
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.d_in != prev.d_out:
                raise ShapeError("host layer chain", prev.w.shape, nxt.w.shape)
        self.layers = layers
        self.routing = routing

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    def named_params(self) -> list[tuple[str, Matrix]]:
        """Trainable (adapter) parameters in deterministic order."""
        out = []
        for idx, layer in enumerate(self.layers):
            if layer.adapter is not None:
                for name, p in layer.adapter.named_params():
                    out.append((f"layer{idx}/{name}", p))
        return out

    def set_param(self, key: str, value: Matrix) -> None:
        layer_part, name = key.split("/", 1)
        self.layers[int(layer_part[5:])].adapter.set_param(name, value)


@dataclass
class LayerCache:
    x: Matrix  # layer input
    z: Matrix  # pre-activation
    adapter: Optional[ad.AdapterCache]


@dataclass
class ForwardCache:
    task: int
    layers: list[LayerCache]
    output: Matrix


def forward(model: HostModel, task: int, x: Matrix) -> tuple[Matrix, ForwardCache]:
    """Layer-by-layer evaluation; returns output and backward intermediates."""
    if x.rows != model.d_in:
        raise ShapeError("host forward", (model.d_in, 0), x.shape)
    caches: list[LayerCache] = []
    h = x
    for layer in model.layers:
        if layer.adapter is None:
            z = matmul(layer.w, h)
            acache = None
        else:
            z, acache = ad.forward_with_cache(layer.w, layer.adapter, task, h,
                                              routing=model.routing)
        z = add_bias(z, layer.bias)
        caches.append(LayerCache(h, z, acache))
        if layer.activation == "relu":
            h = Matrix(z.rows, z.cols, kernels.relu(z.data))
        else:
            h = z
    return h, ForwardCache(task, caches, h)


def freeze_fingerprint(model: HostModel) -> str:
    """Order-stable SHA-256 over all base weights and biases (adapters excluded)."""
    h = hashlib.sha256()
    for layer in model.layers:
        h.update(layer.activation.encode())
        for m in (layer.w, layer.bias):
            h.update(struct.pack("<II", m.rows, m.cols))
            h.update(struct.pack(f"<{len(m.data)}d", *m.data))
    return h.hexdigest()


def make_host(widths: list[int], rng: Optional[Rng] = None,
              base_weight: Optional[Matrix] = None,
              routing: str = "oracle") -> HostModel:
    """Host with len(widths)-1 affine layers, relu between, identity at the end.

    With ``base_weight`` given (single-layer hosts only) the layer weight is
    taken verbatim and the bias is zero; otherwise weights are Kaiming-drawn
    from ``rng`` and biases are zero.
    """
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    layers = []
    n_layers = len(widths) - 1
    if base_weight is not None:
        if n_layers != 1:
            raise ValueError("base_weight only applies to single-layer hosts")
        if base_weight.shape != (widths[1], widths[0]):
            raise ShapeError("base_weight", (widths[1], widths[0]), base_weight.shape)
        return HostModel([HostLayer(base_weight, zeros(widths[1], 1), "identity")],
                         routing=routing)
    if rng is None:
        raise ValueError("rng required when base_weight is not given")
    for i in range(n_layers):
        d_in, d_out = widths[i], widths[i + 1]
        act = "identity" if i == n_layers - 1 else "relu"
        layers.append(HostLayer(kaiming_uniform(d_out, d_in, d_in, rng),
                                zeros(d_out, 1), act))
    return HostModel(layers, routing=routing)


def attach_adapters(model: HostModel, scheme: ad.AdapterScheme, rng: Rng,
                    layer_indices: Optional[list[int]] = None) -> None:
    """Attach fresh adapters in layer order; draws occur in the same order."""
    idxs = range(len(model.layers)) if layer_indices is None else layer_indices
    for idx in idxs:
        layer = model.layers[idx]
        layer.adapter = ad.make_adapter(scheme, layer.d_in, layer.d_out, rng)
