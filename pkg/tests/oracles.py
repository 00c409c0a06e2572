"""Independent reference implementations used as test oracles.

Everything here is deliberately written as plain loops or arbitrary-precision
arithmetic, sharing no code with the engine, so each comparison is a genuine
cross-check rather than the same formula evaluated twice.
"""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def conv_loops(x, w, stride, pad):
    """Nested-loop n-d cross-correlation; x: (C_in, *S), w: (C_out, C_in, *K)."""
    rank = x.ndim - 1
    stride = (stride,) * rank if isinstance(stride, int) else tuple(stride)
    pad = (pad,) * rank if isinstance(pad, int) else tuple(pad)
    c_in = x.shape[0]
    sp = x.shape[1:]
    xp = np.zeros((c_in,) + tuple(s + 2 * p for s, p in zip(sp, pad)), dtype=np.float64)
    inner = (slice(None),) + tuple(slice(p, p + s) for p, s in zip(pad, sp))
    xp[inner] = x
    c_out = w.shape[0]
    ksp = w.shape[2:]
    out_sp = tuple((ps - k) // st + 1 for ps, k, st in zip(xp.shape[1:], ksp, stride))
    out = np.zeros((c_out,) + out_sp, dtype=np.float64)
    for o in range(c_out):
        for pos in itertools.product(*[range(e) for e in out_sp]):
            acc = 0.0
            for c in range(c_in):
                for offs in itertools.product(*[range(k) for k in ksp]):
                    idx = tuple(p * st + of for p, st, of in zip(pos, stride, offs))
                    acc += float(xp[(c,) + idx]) * float(w[(o, c) + offs])
            out[(o,) + pos] = acc
    return out


def gelu_erf(x):
    """High-precision erf-based GELU, elementwise via mpmath."""
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    out = np.empty_like(flat)
    for i, v in enumerate(flat):
        mv = mpmath.mpf(float(v))
        out[i] = float(mpmath.mpf("0.5") * mv * (1 + mpmath.erf(mv / mpmath.sqrt(2))))
    return out.reshape(np.asarray(x).shape)


def mean_loops(x, axis):
    """Scalar-accumulation mean along one axis."""
    x = np.asarray(x, dtype=np.float64)
    moved = np.moveaxis(x, axis, 0)
    out = np.zeros(moved.shape[1:], dtype=np.float64)
    for idx in itertools.product(*[range(e) for e in moved.shape[1:]]):
        acc = 0.0
        for t in range(moved.shape[0]):
            acc += float(moved[(t,) + idx])
        out[idx] = acc / moved.shape[0]
    return out


def cosine_loops(a, b):
    num = 0.0
    na = 0.0
    nb = 0.0
    for x, y in zip(np.ravel(a), np.ravel(b)):
        num += float(x) * float(y)
        na += float(x) ** 2
        nb += float(y) ** 2
    return num / (math.sqrt(na) * math.sqrt(nb))


def pearson_mp(x, y, dps=50):
    """Two-pass Pearson correlation in 50-digit arithmetic."""
    with mpmath.workdps(dps):
        xs = [mpmath.mpf(float(v)) for v in x]
        ys = [mpmath.mpf(float(v)) for v in y]
        n = len(xs)
        mx = mpmath.fsum(xs) / n
        my = mpmath.fsum(ys) / n
        cov = mpmath.fsum((a - mx) * (b - my) for a, b in zip(xs, ys))
        vx = mpmath.fsum((a - mx) ** 2 for a in xs)
        vy = mpmath.fsum((b - my) ** 2 for b in ys)
        return float(cov / (mpmath.sqrt(vx) * mpmath.sqrt(vy)))


def average_ranks_bruteforce(values):
    """Mean rank of each element over every ordering consistent with ties.

    Enumerates permutations inside each tied group (feasible for n <= 8) and
    averages the 1-based ranks each element receives.
    """
    values = list(values)
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    groups = []
    for idx in order:
        if groups and values[groups[-1][-1]] == values[idx]:
            groups[-1].append(idx)
        else:
            groups.append([idx])
    totals = np.zeros(n, dtype=np.float64)
    counts = 0
    per_group_perms = [list(itertools.permutations(g)) for g in groups]
    for combo in itertools.product(*per_group_perms):
        rank = 1
        assignment = np.zeros(n)
        for group_perm in combo:
            for idx in group_perm:
                assignment[idx] = rank
                rank += 1
        totals += assignment
        counts += 1
    return totals / counts


def spearman_bruteforce(x, y):
    rx = average_ranks_bruteforce(x)
    ry = average_ranks_bruteforce(y)
    return pearson_mp(rx, ry)


def adamw_scalar_step(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """One hand-written decoupled-decay update on a single scalar."""
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    p = p - lr * (m_hat / (math.sqrt(v_hat) + eps) + weight_decay * p)
    return p, m, v
