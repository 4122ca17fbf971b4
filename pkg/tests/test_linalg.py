import math

import numpy as np
import pytest

from asymlora.errors import ShapeError
from asymlora.linalg import (
    Matrix,
    Rng,
    add,
    axpy,
    derive_seed,
    frob_inner,
    frobenius_norm,
    gaussian,
    identity,
    kaiming_uniform,
    matmul,
    mean_over_columns,
    scale,
    sub,
    transpose,
    zeros,
)

from conftest import bits, from_numpy, to_numpy


def test_matmul_identity_exact():
    x = Matrix.from_rows([[3.0], [4.0]])
    assert matmul(identity(2), x).to_rows() == [[3.0], [4.0]]


def test_matmul_hand_dot_product():
    # 1x2 times 2x1: plain dot product, 1*1 + 1*2 = 3.
    a = Matrix.from_rows([[1.0, 1.0]])
    b = Matrix.from_rows([[1.0], [2.0]])
    assert matmul(a, b).to_rows() == [[3.0]]


def test_matmul_zero_annihilates():
    z = zeros(2, 3)
    x = gaussian(3, 1, Rng(7))
    assert matmul(z, x).to_rows() == [[0.0], [0.0]]


def test_matmul_matches_numpy():
    rng = Rng(11)
    for _ in range(20):
        m = 1 + rng.next_u64() % 6
        k = 1 + rng.next_u64() % 6
        n = 1 + rng.next_u64() % 6
        a = gaussian(m, k, rng)
        b = gaussian(k, n, rng)
        got = to_numpy(matmul(a, b))
        want = to_numpy(a) @ to_numpy(b)
        assert np.max(np.abs(got - want)) < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError) as exc:
        matmul(zeros(2, 3), zeros(2, 3))
    assert "2x3" in str(exc.value)


def test_matmul_associativity():
    rng = Rng(5)
    for _ in range(10):
        a = gaussian(4, 3, rng)
        b = gaussian(3, 5, rng)
        c = gaussian(5, 2, rng)
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert max(abs(x - y) for x, y in zip(left.data, right.data)) < 1e-9


def test_zeros():
    z = zeros(1, 1)
    assert z.to_rows() == [[0.0]]
    z = zeros(2, 3)
    assert len(z.data) == 6 and all(v == 0.0 for v in z.data)


def test_kaiming_bound_and_determinism():
    m = kaiming_uniform(2, 2, 4, Rng(3))
    assert all(abs(v) <= 0.5 for v in m.data)  # bound = 1/sqrt(4)
    again = kaiming_uniform(2, 2, 4, Rng(3))
    assert bits(m) == bits(again)
    wide = kaiming_uniform(3, 3, 1, Rng(3))
    assert all(abs(v) <= 1.0 for v in wide.data)


def test_kaiming_rejects_zero_fan_in():
    with pytest.raises(ValueError):
        kaiming_uniform(2, 2, 0, Rng(1))


def test_kaiming_sample_statistics():
    n = 10_000
    m = kaiming_uniform(100, 100, 9, Rng(17))
    bound = 1.0 / 3.0
    assert max(abs(v) for v in m.data) <= bound
    assert abs(sum(m.data) / n) < 0.02


def test_gaussian_statistics():
    m = gaussian(100, 100, Rng(23))
    vals = list(m.data)
    mean = sum(vals) / len(vals)
    var = sum((v - mean) ** 2 for v in vals) / len(vals)
    assert abs(mean) < 0.05
    assert abs(var - 1.0) < 0.05


def test_rng_determinism_and_streams():
    a = Rng(99)
    b = Rng(99)
    assert [a.next_u64() for _ in range(5)] == [b.next_u64() for _ in range(5)]
    # Derived streams are independent of the parent's consumption.
    assert Rng(99).derive("x").next_u64() == Rng(99).derive("x").next_u64()
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert derive_seed(1, "a") != derive_seed(2, "a")


def test_uniform_range():
    rng = Rng(1)
    vals = [rng.uniform() for _ in range(1000)]
    assert all(0.0 <= v < 1.0 for v in vals)


def test_elementwise_ops_match_numpy():
    rng = Rng(31)
    a = gaussian(3, 4, rng)
    b = gaussian(3, 4, rng)
    assert np.allclose(to_numpy(add(a, b)), to_numpy(a) + to_numpy(b))
    assert np.allclose(to_numpy(sub(a, b)), to_numpy(a) - to_numpy(b))
    assert np.allclose(to_numpy(scale(a, 2.5)), 2.5 * to_numpy(a))
    assert np.allclose(to_numpy(axpy(a, -1.5, b)), to_numpy(a) - 1.5 * to_numpy(b))
    assert np.allclose(to_numpy(transpose(a)), to_numpy(a).T)
    assert abs(frobenius_norm(a) - np.linalg.norm(to_numpy(a))) < 1e-12
    assert abs(frob_inner(a, b) - float(np.sum(to_numpy(a) * to_numpy(b)))) < 1e-12
    assert np.allclose(
        to_numpy(mean_over_columns(a)).ravel(), to_numpy(a).mean(axis=1)
    )


def test_ops_preserve_finiteness():
    rng = Rng(41)
    m = gaussian(5, 5, rng)
    for out in (
        matmul(m, m),
        add(m, m),
        sub(m, m),
        scale(m, 3.0),
        transpose(m),
        mean_over_columns(m),
    ):
        assert out.all_finite()


def test_matrix_validation():
    with pytest.raises(ShapeError):
        Matrix(2, 2, [1.0, 2.0, 3.0])
    with pytest.raises(ShapeError):
        Matrix(0, 2, [])


def test_with_entry_does_not_mutate():
    m = zeros(2, 2)
    m2 = m.with_entry(0, 1, 5.0)
    assert m.at(0, 1) == 0.0
    assert m2.at(0, 1) == 5.0


def test_from_numpy_round_trip():
    arr = np.arange(6, dtype=np.float64).reshape(2, 3)
    assert np.array_equal(to_numpy(from_numpy(arr)), arr)
