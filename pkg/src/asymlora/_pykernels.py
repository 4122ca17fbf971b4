"""Pure-Python fallback kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and, critically, the same floating-point evaluation order, so the
two backends produce bit-identical results. Keep both files in sync: any
change to an accumulation order here must be mirrored there.

All kernels operate on flat row-major ``array('d')`` buffers plus explicit
dimensions; shape checking lives one level up in ``linalg``.
"""

from array import array
from math import sqrt

NAME = "python"


def mm(a, b, m, k, n):
    """C[m,n] = A[m,k] @ B[k,n]; each cell accumulates over k in ascending order."""
    al = a.tolist()
    bl = b.tolist()
    out = []
    for i in range(m):
        row = [0.0] * n
        ai = i * k
        for t in range(k):
            aik = al[ai + t]
            bt = t * n
            for j in range(n):
                row[j] += aik * bl[bt + j]
        out.extend(row)
    return array("d", out)


def transpose(a, rows, cols):
    out = array("d", bytes(8 * rows * cols))
    for i in range(rows):
        base = i * cols
        for j in range(cols):
            out[j * rows + i] = a[base + j]
    return out


def add(a, b):
    return array("d", [x + y for x, y in zip(a, b)])


def sub(a, b):
    return array("d", [x - y for x, y in zip(a, b)])


def scale(a, s):
    return array("d", [x * s for x in a])


def axpy(a, s, b):
    """a + s*b, elementwise."""
    return array("d", [x + s * y for x, y in zip(a, b)])


def add_bias(a, bias, rows, cols):
    """Add bias[i] to every entry of row i."""
    out = array("d", a)
    for i in range(rows):
        bi = bias[i]
        base = i * cols
        for j in range(cols):
            out[base + j] = a[base + j] + bi
    return out


def row_mean(a, rows, cols):
    """Mean over columns: out[i] = sum_j a[i,j] / cols, summed in ascending j."""
    out = array("d", bytes(8 * rows))
    for i in range(rows):
        acc = 0.0
        base = i * cols
        for j in range(cols):
            acc += a[base + j]
        out[i] = acc / cols
    return out


def relu(a):
    return array("d", [x if x > 0.0 else 0.0 for x in a])


def relu_bwd(z, g):
    """Upstream gradient masked by the relu input: g[i] where z[i] > 0, else 0."""
    return array("d", [gi if zi > 0.0 else 0.0 for zi, gi in zip(z, g)])


def sumsq(a):
    acc = 0.0
    for x in a:
        acc += x * x
    return acc


def dot(a, b):
    acc = 0.0
    for x, y in zip(a, b):
        acc += x * y
    return acc


def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One Adam update; returns the new parameter buffer, mutates m and v.

    bc1/bc2 are the bias corrections 1-beta1^t and 1-beta2^t, precomputed by
    the caller so both backends see the exact same scalars.
    """
    out = array("d", p)
    omb1 = 1.0 - beta1
    omb2 = 1.0 - beta2
    for i in range(len(p)):
        gi = g[i]
        mi = beta1 * m[i] + omb1 * gi
        vi = beta2 * v[i] + omb2 * (gi * gi)
        m[i] = mi
        v[i] = vi
        out[i] = p[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps)
    return out


def sgd_step(p, g, lr):
    return array("d", [x - lr * y for x, y in zip(p, g)])
