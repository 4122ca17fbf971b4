import numpy as np
import pytest

from asymlora.adapters import AdapterScheme
from asymlora.errors import ShapeError
from asymlora.host import (
    HostLayer,
    HostModel,
    attach_adapters,
    forward,
    freeze_fingerprint,
    make_host,
)
from asymlora.linalg import Matrix, Rng, gaussian, identity, zeros

from conftest import bits, to_numpy


def test_identity_single_layer_passthrough():
    model = HostModel([HostLayer(identity(3), zeros(3, 1), "identity")])
    x = gaussian(3, 4, Rng(1))
    out, _ = forward(model, 0, x)
    assert bits(out) == bits(x)


def test_zero_b_adapters_match_adapter_free_forward():
    rng = Rng(2)
    bare = make_host([5, 6, 4], Rng(7))
    adapted = make_host([5, 6, 4], Rng(7))
    for kind in ("lora", "moe_lora", "asym_lora", "moe_asym_lora"):
        attach_adapters(adapted, AdapterScheme(kind, 2, 2, 2), rng)
        x = gaussian(5, 3, rng)
        out_bare, _ = forward(bare, 0, x)
        out_adapted, _ = forward(adapted, 0, x)
        assert bits(out_bare) == bits(out_adapted), kind


def test_two_layer_relu_matches_straight_line_numpy():
    # Independent re-implementation: two affine maps with relu between.
    rng = Rng(3)
    model = make_host([4, 6, 3], rng)
    model.layers[0].bias = gaussian(6, 1, rng, std=0.3)
    model.layers[1].bias = gaussian(3, 1, rng, std=0.3)
    x = gaussian(4, 5, rng)
    out, cache = forward(model, 0, x)

    w0, b0 = to_numpy(model.layers[0].w), to_numpy(model.layers[0].bias)
    w1, b1 = to_numpy(model.layers[1].w), to_numpy(model.layers[1].bias)
    h = np.maximum(w0 @ to_numpy(x) + b0, 0.0)
    want = w1 @ h + b1
    assert np.max(np.abs(to_numpy(out) - want)) < 1e-12
    # The cache exposes the same intermediates the backward pass will use.
    assert np.max(np.abs(to_numpy(cache.layers[0].z) - (w0 @ to_numpy(x) + b0))) < 1e-12
    assert np.max(np.abs(to_numpy(cache.layers[1].x) - h)) < 1e-12


def test_forward_determinism_same_seed():
    def build_and_run():
        rng = Rng(11)
        model = make_host([4, 5, 3], rng)
        attach_adapters(model, AdapterScheme("asym_lora", 2, 3), rng)
        x = gaussian(4, 2, Rng(13))
        out, _ = forward(model, 1, x)
        return bits(out)

    assert build_and_run() == build_and_run()


def test_forward_rejects_wrong_input_width():
    model = make_host([4, 3], Rng(5))
    with pytest.raises(ShapeError):
        forward(model, 0, gaussian(5, 2, Rng(6)))


def test_layer_chain_validation():
    with pytest.raises(ShapeError):
        HostModel([
            HostLayer(gaussian(3, 4, Rng(1)), zeros(3, 1), "relu"),
            HostLayer(gaussian(2, 5, Rng(2)), zeros(2, 1), "identity"),
        ])


def test_fingerprint_stable_across_calls():
    model = make_host([4, 5, 3], Rng(21))
    assert freeze_fingerprint(model) == freeze_fingerprint(model)


def test_fingerprint_detects_single_entry_change():
    model = make_host([4, 5, 3], Rng(22))
    fp = freeze_fingerprint(model)
    w = model.layers[1].w
    model.layers[1].w = w.with_entry(1, 2, w.at(1, 2) + 1e-9)
    assert freeze_fingerprint(model) != fp
    bias = model.layers[0].bias
    model.layers[1].w = w
    model.layers[0].bias = bias.with_entry(0, 0, 0.5)
    assert freeze_fingerprint(model) != fp


def test_fingerprint_ignores_adapter_params():
    rng = Rng(23)
    model = make_host([4, 5, 3], rng)
    attach_adapters(model, AdapterScheme("moe_asym_lora", 2, 2, 2), rng)
    fp = freeze_fingerprint(model)
    for key, p in model.named_params():
        model.set_param(key, gaussian(p.rows, p.cols, rng))
    assert freeze_fingerprint(model) == fp


def test_make_host_base_weight():
    w = gaussian(3, 4, Rng(31))
    model = make_host([4, 3], base_weight=w)
    assert model.layers[0].w is w
    assert model.layers[0].activation == "identity"
    with pytest.raises(ValueError):
        make_host([4, 5, 3], base_weight=gaussian(3, 4, Rng(32)))


def test_adapt_layers_subset():
    rng = Rng(33)
    model = make_host([4, 5, 3], rng)
    attach_adapters(model, AdapterScheme("lora", 2), rng, layer_indices=[1])
    assert model.layers[0].adapter is None
    assert model.layers[1].adapter is not None
    assert len(model.named_params()) == 2
