import math

import numpy as np
import pytest

from asymlora.adapters import (
    AdapterScheme,
    AsymAdapter,
    GateNetwork,
    LoraAdapter,
    MoeAsymAdapter,
    MoeLoraAdapter,
    asym_forward,
    forward_with_cache,
    gate_weights,
    lora_forward,
    make_adapter,
    merge_adapter,
    moe_asym_forward,
    param_count,
)
from asymlora.errors import ShapeError
from asymlora.linalg import (
    Matrix,
    Rng,
    gaussian,
    identity,
    matmul,
    sub,
    zeros,
)

from conftest import bits, to_numpy


def _rand_lora(d_in, d_out, rank, rng, scale=1.0):
    ad = LoraAdapter.init(d_in, d_out, rank, scale, rng)
    ad.b = gaussian(d_out, rank, rng, std=0.5)
    return ad


# ---------------------------------------------------------------- lora_forward

def test_lora_forward_zero_b_is_base_forward():
    rng = Rng(1)
    w = gaussian(4, 3, rng)
    x = gaussian(3, 5, rng)
    ad = LoraAdapter.init(3, 4, 2, 1.0, rng)
    assert bits(lora_forward(w, ad, x)) == bits(matmul(w, x))


def test_lora_forward_hand_value():
    # A x = [3]; B(Ax) = [6, 0]^T; W x = [1, 2]^T; total [7, 2]^T.
    w = identity(2)
    x = Matrix.from_rows([[1.0], [2.0]])
    ad = LoraAdapter(Matrix.from_rows([[1.0, 1.0]]), Matrix.from_rows([[2.0], [0.0]]), 1, 1.0)
    assert lora_forward(w, ad, x).to_rows() == [[7.0], [2.0]]


def test_lora_forward_zero_scale():
    rng = Rng(2)
    w = gaussian(4, 3, rng)
    x = gaussian(3, 2, rng)
    ad = _rand_lora(3, 4, 2, rng, scale=0.0)
    assert bits(lora_forward(w, ad, x)) == bits(matmul(w, x))


def test_lora_forward_matches_numpy():
    rng = Rng(3)
    w = gaussian(5, 4, rng)
    x = gaussian(4, 3, rng)
    ad = _rand_lora(4, 5, 2, rng, scale=0.7)
    want = to_numpy(w) @ to_numpy(x) + 0.7 * (to_numpy(ad.b) @ (to_numpy(ad.a) @ to_numpy(x)))
    assert np.max(np.abs(to_numpy(lora_forward(w, ad, x)) - want)) < 1e-12


def test_lora_forward_shape_error():
    rng = Rng(4)
    ad = _rand_lora(3, 4, 2, rng)
    with pytest.raises(ShapeError):
        lora_forward(gaussian(4, 3, rng), ad, gaussian(2, 1, rng))


# ---------------------------------------------------------------- asym_forward

def test_asym_forward_zero_b_any_task():
    rng = Rng(5)
    w = gaussian(4, 3, rng)
    x = gaussian(3, 2, rng)
    ad = AsymAdapter.init(3, 4, 2, 3, 1.0, rng)
    for task in range(3):
        assert bits(asym_forward(w, ad, task, x)) == bits(matmul(w, x))


def test_asym_forward_task_outputs_differ_iff_b_path_differs():
    rng = Rng(6)
    w = gaussian(4, 3, rng)
    x = gaussian(3, 2, rng)
    ad = AsymAdapter.init(3, 4, 2, 2, 1.0, rng)
    ad.b_tasks[0] = gaussian(4, 2, rng)
    ad.b_tasks[1] = gaussian(4, 2, rng)
    out0 = asym_forward(w, ad, 0, x)
    out1 = asym_forward(w, ad, 1, x)
    # Direct evaluation of both branches: (B0 - B1)(A x).
    diff_path = matmul(sub(ad.b_tasks[0], ad.b_tasks[1]), matmul(ad.a_shared, x))
    assert (bits(out0) != bits(out1)) == any(v != 0.0 for v in diff_path.data)
    # And with identical B matrices the outputs collapse.
    ad.b_tasks[1] = ad.b_tasks[0]
    assert bits(asym_forward(w, ad, 0, x)) == bits(asym_forward(w, ad, 1, x))


def test_asym_single_task_equals_lora_hand_value():
    w = identity(2)
    x = Matrix.from_rows([[1.0], [2.0]])
    ad = AsymAdapter(Matrix.from_rows([[1.0, 1.0]]), [Matrix.from_rows([[2.0], [0.0]])], 1, 1.0)
    assert asym_forward(w, ad, 0, x).to_rows() == [[7.0], [2.0]]


def test_asym_forward_task_out_of_range():
    rng = Rng(7)
    ad = AsymAdapter.init(3, 4, 2, 2, 1.0, rng)
    with pytest.raises(IndexError):
        asym_forward(gaussian(4, 3, rng), ad, 2, gaussian(3, 1, rng))
    with pytest.raises(IndexError):
        asym_forward(gaussian(4, 3, rng), ad, -1, gaussian(3, 1, rng))


def test_asym_task_isolation():
    # Perturbing B_k changes the output only for task k.
    rng = Rng(8)
    w = gaussian(4, 3, rng)
    x = gaussian(3, 2, rng)
    ad = AsymAdapter.init(3, 4, 2, 3, 1.0, rng)
    for i in range(3):
        ad.b_tasks[i] = gaussian(4, 2, rng)
    before = [bits(asym_forward(w, ad, t, x)) for t in range(3)]
    ad.b_tasks[1] = gaussian(4, 2, rng)
    after = [bits(asym_forward(w, ad, t, x)) for t in range(3)]
    assert after[0] == before[0]
    assert after[1] != before[1]
    assert after[2] == before[2]


# ---------------------------------------------------------------- gate_weights

def test_gate_uniform_at_zero_params():
    gate = GateNetwork(zeros(4, 3), zeros(4, 1))
    w = gate_weights(gate, gaussian(3, 5, Rng(9)))
    assert all(abs(wj - 0.25) < 1e-15 for wj in w)


def test_gate_closed_form_softmax():
    # logits (ln 2, 0) -> softmax (2/3, 1/3).
    gate = GateNetwork(zeros(2, 3), Matrix.from_rows([[math.log(2.0)], [0.0]]))
    w = gate_weights(gate, gaussian(3, 4, Rng(10)))
    assert abs(w[0] - 2.0 / 3.0) < 1e-12
    assert abs(w[1] - 1.0 / 3.0) < 1e-12


def test_gate_shift_invariance():
    rng = Rng(11)
    weights = gaussian(3, 4, rng)
    x = gaussian(4, 6, rng)
    base = gate_weights(GateNetwork(weights, zeros(3, 1)), x)
    for c in (-5.0, 0.173, 40.0):
        shifted = gate_weights(
            GateNetwork(weights, Matrix.from_rows([[c]] * 3)), x
        )
        assert all(abs(a - b) < 1e-12 for a, b in zip(base, shifted))


def test_gate_simplex_property():
    rng = Rng(12)
    gate = GateNetwork(gaussian(3, 5, rng), gaussian(3, 1, rng, std=0.5))
    for _ in range(1000):
        w = gate_weights(gate, gaussian(5, 2, rng))
        assert all(wj >= 0.0 for wj in w)
        assert abs(sum(w) - 1.0) < 1e-9


# ----------------------------------------------------------- moe_asym_forward

def _rand_moe(d_in, d_out, rank, n_tasks, n_experts, rng, scale=1.0):
    ad = MoeAsymAdapter.init(d_in, d_out, rank, n_tasks, n_experts, scale, rng)
    for i in range(n_tasks):
        for j in range(n_experts):
            ad.b_experts[i][j] = gaussian(d_out, rank, rng, std=0.5)
    return ad


def test_moe_equal_experts_collapse_to_asym():
    # If every expert holds the same B the convex mix is a fixed point.
    rng = Rng(13)
    w = gaussian(4, 3, rng)
    x = gaussian(3, 2, rng)
    b = gaussian(4, 2, rng)
    moe = _rand_moe(3, 4, 2, 2, 3, rng)
    for j in range(3):
        moe.b_experts[1][j] = b
    asym = AsymAdapter(moe.a_shared, [b, b], 2, 1.0)
    out_moe, w_vec = moe_asym_forward(w, moe, 1, x)
    out_asym = asym_forward(w, asym, 1, x)
    assert abs(sum(w_vec) - 1.0) < 1e-12
    assert np.max(np.abs(to_numpy(out_moe) - to_numpy(out_asym))) < 1e-12


def test_moe_single_expert_bit_identical_to_asym():
    rng = Rng(14)
    w = gaussian(4, 3, rng)
    x = gaussian(3, 2, rng)
    moe = _rand_moe(3, 4, 2, 2, 1, rng)
    asym = AsymAdapter(moe.a_shared, [moe.b_experts[0][0], moe.b_experts[1][0]], 2, 1.0)
    for task in range(2):
        out_moe, w_vec = moe_asym_forward(w, moe, task, x)
        assert w_vec == [1.0]
        assert bits(out_moe) == bits(asym_forward(w, asym, task, x))


def test_moe_hard_routing_uses_single_expert():
    # Saturated gate bias drives softmax to exactly (1, 0).
    rng = Rng(15)
    w = gaussian(4, 3, rng)
    x = gaussian(3, 2, rng)
    moe = _rand_moe(3, 4, 2, 1, 2, rng)
    moe.gate.weights = zeros(2, 3)
    moe.gate.bias = Matrix.from_rows([[1000.0], [0.0]])
    out, w_vec = moe_asym_forward(w, moe, 0, x)
    assert w_vec == [1.0, 0.0]
    asym = AsymAdapter(moe.a_shared, [moe.b_experts[0][0]], 2, 1.0)
    want = asym_forward(w, asym, 0, x)
    assert all(a == b for a, b in zip(out.data, want.data))


def test_moe_convex_combination_bound():
    rng = Rng(16)
    w = gaussian(4, 3, rng)
    for _ in range(20):
        x = gaussian(3, 2, rng)
        moe = _rand_moe(3, 4, 2, 2, 3, rng)
        task = 1
        out, _ = moe_asym_forward(w, moe, task, x)
        hard = [
            asym_forward(w, AsymAdapter(moe.a_shared, [moe.b_experts[task][j]] * 2, 2, 1.0),
                         0, x)
            for j in range(3)
        ]
        for idx in range(len(out.data)):
            lo = min(h.data[idx] for h in hard)
            hi = max(h.data[idx] for h in hard)
            assert lo - 1e-12 <= out.data[idx] <= hi + 1e-12


def test_moe_zero_b_identity():
    rng = Rng(17)
    w = gaussian(4, 3, rng)
    x = gaussian(3, 5, rng)
    moe = MoeAsymAdapter.init(3, 4, 2, 2, 2, 1.0, rng)
    out, _ = moe_asym_forward(w, moe, 0, x)
    assert bits(out) == bits(matmul(w, x))


# ---------------------------------------------------------------- merge

def test_merge_zero_b_keeps_weight():
    rng = Rng(18)
    w = gaussian(4, 3, rng)
    a = gaussian(2, 3, rng)
    merged = merge_adapter(w, a, zeros(4, 2), 1.0)
    assert all(x == y for x, y in zip(merged.data, w.data))


def test_merge_forward_equivalence():
    rng = Rng(19)
    w = gaussian(4, 3, rng)
    ad = _rand_lora(3, 4, 2, rng, scale=0.8)
    merged = merge_adapter(w, ad.a, ad.b, ad.scale)
    for _ in range(10):
        x = gaussian(3, 2, rng)
        diff = sub(matmul(merged, x), lora_forward(w, ad, x))
        assert max(abs(v) for v in diff.data) < 1e-10


def test_merge_scale_linearity():
    rng = Rng(20)
    w = gaussian(4, 3, rng)
    a = gaussian(2, 3, rng)
    b = gaussian(4, 2, rng)
    d2 = sub(merge_adapter(w, a, b, 2.0), w)
    d1 = sub(merge_adapter(w, a, b, 1.0), w)
    assert all(abs(x - 2.0 * y) < 1e-12 for x, y in zip(d2.data, d1.data))


def test_merge_shape_error():
    rng = Rng(21)
    with pytest.raises(ShapeError):
        merge_adapter(gaussian(4, 3, rng), gaussian(2, 3, rng), gaussian(4, 3, rng), 1.0)


# ---------------------------------------------------------------- param_count

def test_param_count_examples():
    assert param_count("lora", 8, 8, 2).total == 32
    assert param_count("moe_lora", 8, 8, 2, 3).total == 96
    assert param_count("asym_lora", 8, 8, 2, 3).total == 64


def test_param_count_single_task_degeneracy():
    assert param_count("asym_lora", 8, 8, 2, 1).total == param_count("lora", 8, 8, 2).total


def test_param_count_paper_scale_setting():
    asym = param_count("asym_lora", 4096, 4096, 32, 3).total
    moe = param_count("moe_lora", 4096, 4096, 32, 3).total
    assert asym == 524288
    assert moe == 786432
    assert asym < moe


def test_param_count_asym_always_below_moe_lora():
    rng = Rng(22)
    for _ in range(50):
        d_in = 1 + rng.next_u64() % 64
        d_out = 1 + rng.next_u64() % 64
        r = 1 + rng.next_u64() % 8
        n = 2 + rng.next_u64() % 4
        assert (param_count("asym_lora", d_in, d_out, r, n).total
                < param_count("moe_lora", d_in, d_out, r, n).total)


def test_param_count_matches_enumeration():
    rng = Rng(23)
    for kind in ("lora", "moe_lora", "asym_lora", "moe_asym_lora"):
        for _ in range(10):
            d_in = 2 + rng.next_u64() % 7
            d_out = 2 + rng.next_u64() % 7
            r = 1 + rng.next_u64() % min(2, d_in, d_out)
            n = 1 + rng.next_u64() % 3
            j = 1 + rng.next_u64() % 2
            scheme = AdapterScheme(kind, r, n, j)
            adapter = make_adapter(scheme, d_in, d_out, rng)
            enumerated = sum(p.rows * p.cols for _, p in adapter.named_params())
            assert param_count(kind, d_in, d_out, r, n, j).total == enumerated


# ---------------------------------------------------------------- construction

def test_fresh_adapters_have_zero_b():
    rng = Rng(24)
    for kind in ("lora", "moe_lora", "asym_lora", "moe_asym_lora"):
        adapter = make_adapter(AdapterScheme(kind, 2, 3, 2), 6, 5, rng)
        for name, p in adapter.named_params():
            if name.startswith("b"):
                assert all(v == 0.0 for v in p.data), (kind, name)


def test_make_adapter_rejects_excess_rank():
    with pytest.raises(ValueError):
        make_adapter(AdapterScheme("lora", 5), 4, 8, Rng(25))


def test_scheme_validation():
    with pytest.raises(ValueError):
        AdapterScheme("nope", 2)
    with pytest.raises(ValueError):
        AdapterScheme("lora", 0)
    with pytest.raises(ValueError):
        AdapterScheme("lora", 2, routing="psychic")


def test_learned_routing_forward():
    rng = Rng(26)
    scheme = AdapterScheme("asym_lora", 2, num_tasks=3, routing="learned")
    adapter = make_adapter(scheme, 5, 4, rng)
    assert adapter.task_gate is not None
    assert adapter.task_gate.num_experts == 3
    for i in range(3):
        adapter.b_tasks[i] = gaussian(4, 2, rng)
    w = gaussian(4, 5, rng)
    x = gaussian(5, 2, rng)
    out, cache = forward_with_cache(w, adapter, 0, x, routing="learned")
    assert cache.w_vec is not None and abs(sum(cache.w_vec) - 1.0) < 1e-12
    # The learned path ignores the supplied task index entirely.
    out2, _ = forward_with_cache(w, adapter, 2, x, routing="learned")
    assert bits(out) == bits(out2)
    # The task gate is evaluation plumbing, not a trainable parameter.
    assert all(not name.startswith("task_gate") for name, _ in adapter.named_params())


def test_moe_lora_oracle_routing_matches_manual_pair():
    rng = Rng(27)
    adapter = MoeLoraAdapter.init(4, 3, 2, 3, 1.0, rng)
    for i in range(3):
        adapter.b_tasks[i] = gaussian(3, 2, rng)
    w = gaussian(3, 4, rng)
    x = gaussian(4, 2, rng)
    for task in range(3):
        out, _ = forward_with_cache(w, adapter, task, x)
        pair = LoraAdapter(adapter.a_tasks[task], adapter.b_tasks[task], 2, 1.0)
        assert bits(out) == bits(lora_forward(w, pair, x))
