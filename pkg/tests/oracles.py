"""Reference implementations used only by the tests.

They are written directly from the definitions with plain numpy, sorting
and enumeration, and share no code with the package.
"""

import itertools

import numpy as np


def topk_by_sort(a, k):
    return float(np.sort(np.asarray(a, dtype=float))[::-1][:k].sum())


def g_direct(a, k, u, l):
    a = np.asarray(a, dtype=float)
    return float(np.maximum(a - u, 0).sum() - np.maximum(a - l, 0).sum() + k * (u - l))


def f_direct(a, k, r, u):
    a = np.asarray(a, dtype=float)
    return float((r - np.maximum(a - u, 0).sum()) / k)


def g_root_scan(a, k, u, zero_tol=1e-13):
    """Smallest root of ``l -> g_r(u, l)`` by scanning its breakpoints.

    On each piece between consecutive entries below ``u`` the function is
    linear, so the first sign change from below is located exactly.
    """
    a = np.asarray(a, dtype=float)
    n = a.size
    points = np.unique(a[a < u])
    if points.size == 0:
        raise ValueError("no entry below u")
    values = [g_direct(a, k, u, p) for p in points]
    if values[0] >= -zero_tol:
        if abs(values[0]) <= zero_tol:
            return float(points[0])
        # Below the smallest entry the slope in l is n - k > 0.
        return float(points[0] - values[0] / (n - k))
    grid = list(points) + [u]
    values.append(0.0)
    for lo, hi, g_lo, g_hi in zip(grid, grid[1:], values, values[1:]):
        if abs(g_hi) <= zero_tol:
            return float(hi)
        if g_lo < 0 < g_hi:
            return float(lo + (hi - lo) * (-g_lo) / (g_hi - g_lo))
    raise AssertionError("no root found")


def d_direct(a, k, r, u):
    """Gap ``G_r(u) - F_r(u)`` from the scan oracles."""
    return g_root_scan(a, k, u) - f_direct(a, k, r, u)


def d_root_bisect(a, k, r, lo, hi, iters=200):
    """Root of the decreasing gap on ``[lo, hi]`` by bisection on the scan oracle."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if d_direct(a, k, r, mid) >= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def brute_force_projection(a, k, r, feas_tol=1e-9):
    """Projection by enumerating every (shifted, pooled) split of the sorted vector.

    Each split ``(k0, k1)`` fixes a linear system in (u, l); the candidate is
    assembled position-wise on the sorted vector. The projection is the
    unique feasible point nearest to ``a``, so the nearest feasible
    candidate is the answer; no order conditions are consulted.
    """
    a = np.asarray(a, dtype=float)
    order = np.argsort(-a, kind="stable")
    s = a[order]
    n = s.size
    if s[:k].sum() <= r:
        return a.copy()
    scale = max(1.0, abs(r), n * float(np.abs(s).max()))
    best = None
    for k0, k1 in itertools.product(range(k), range(k, n + 1)):
        A = np.array([[-k0, k], [k - k0, k1 - k]], dtype=float)
        rhs = np.array([r - s[:k0].sum(), s[k0:k1].sum()])
        try:
            u, l = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            continue
        xs = np.concatenate((s[:k0] - (u - l), np.full(k1 - k0, l), s[k1:]))
        if np.sort(xs)[::-1][:k].sum() > r + feas_tol * scale:
            continue
        dist = float(((xs - s) ** 2).sum())
        if best is None or dist < best[0]:
            best = (dist, xs)
    x = np.empty(n)
    x[order] = best[1]
    return x
