"""Independent brute-force oracles used to freeze expected values.

Everything here is deliberately loop-based and shares no code with the
package: nested loops, scatter-adds, and central finite differences.
"""

from __future__ import annotations

import numpy as np


def channel_contract_loops(c: np.ndarray, d: np.ndarray) -> np.ndarray:
    n, a, b = d.shape
    out = np.zeros((1, 1, a, b))
    for k in range(n):
        for i in range(a):
            for j in range(b):
                out[0, 0, i, j] += c[0, 0, k] * d[k, i, j]
    return out


def transposed_conv2d_scatter(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    h, w, c_in = x.shape
    s = k.shape[0]
    c_out = k.shape[2]
    full = np.zeros((h + s - 1, w + s - 1, c_out))
    for y in range(h):
        for xx in range(w):
            for dy in range(s):
                for dx in range(s):
                    for o in range(c_out):
                        for i in range(c_in):
                            full[y + dy, xx + dx, o] += x[y, xx, i] * k[dy, dx, o, i]
    return full[:h, :w]


def matmul_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def sq_l2_diff_loops(a: np.ndarray, b: np.ndarray) -> float:
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (x - y) ** 2
    return total


def softmax_loops(v: np.ndarray) -> np.ndarray:
    m = max(v)
    e = np.array([np.exp(x - m) for x in v])
    return e / sum(e)


def fps_trace(points: np.ndarray, k: int, start: int = 0) -> list[int]:
    """Greedy max-min selection, ties to the lowest index, via plain loops."""
    n = len(points)
    chosen = [start]
    dist = [float(np.sum((points[i] - points[start]) ** 2)) for i in range(n)]
    while len(chosen) < k:
        best, best_d = 0, -1.0
        for i in range(n):
            if dist[i] > best_d:
                best, best_d = i, dist[i]
        chosen.append(best)
        for i in range(n):
            d = float(np.sum((points[i] - points[best]) ** 2))
            if d < dist[i]:
                dist[i] = d
    return chosen


def central_differences(f, params, eps: float = 1e-4) -> list[np.ndarray]:
    """Numerical gradient of scalar f() w.r.t. each parameter tensor.

    Perturbs parameter entries in place; f must recompute the objective
    from the parameters' current values on every call.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def grads_close(analytic, numeric, tol: float = 1e-3) -> bool:
    """Mixed absolute/relative comparison robust near zero."""
    a = np.asarray(analytic)
    b = np.asarray(numeric)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return bool(np.all(np.abs(a - b) <= tol * denom))
