"""Sort-based reference solvers.

Both work on the sorted vector ``s`` (descending) with prefix sums
``S[j] = s_1 + ... + s_j``. For a guess ``(k0, k1)`` of how many entries are
shifted (``k0``) and how many are shifted or pooled (``k1``) the thresholds
solve the 2x2 system

    budget:  S[k0] - k0 u + k l = r
    area:    (k - k0) u + (k1 - k) l = S[k1] - S[k0]

and the guess is right when the solution is consistent with the sorted order.
``grid_oracle`` tries every pair; ``sorted_solver`` walks a monotone path.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import (
    FLAG_FEASIBLE,
    FLAG_SHORTCUT,
    InvariantError,
    IterationStats,
    ProjectionSolution,
)
from .eips import assemble_into

# Slack for the order checks, relative to the magnitude of the data.
ORDER_TOL = 1e-12
# Largest violation accepted when no candidate is exactly consistent.
FALLBACK_TOL = 1e-9


@dataclass(frozen=True)
class GridCandidate:
    k0: int
    k1: int
    u: float
    l: float
    feasible: bool


def _sorted_data(a):
    s = np.sort(a)[::-1]
    prefix = np.concatenate(([0.0], np.cumsum(s)))
    ext = np.concatenate(([np.inf], s, [-np.inf]))
    return s, prefix, ext


def _scale(a, r, k):
    return max(1.0, float(np.abs(a).max()), abs(r) / k)


def solve_candidate(prefix, k, r, k0, k1):
    """Thresholds ``(u, l)`` for a candidate pair; works elementwise on arrays."""
    return _solve_sums(prefix[k0], prefix[k1], k, r, k0, k1)


def _solve_sums(S0, S1, k, r, k0, k1):
    """The 2x2 solve from ``S0 = s_1 + ... + s_k0`` and ``S1 = s_1 + ... + s_k1``."""
    rhs_budget = r - S0
    rhs_area = S1 - S0
    det = -k0 * (k1 - k) - k * (k - k0)
    u = (rhs_budget * (k1 - k) - k * rhs_area) / det
    l = (-k0 * rhs_area - (k - k0) * rhs_budget) / det
    return u, l, det


def _violation(ext, k, k0, k1, u, l):
    """Largest breach of the order conditions for a candidate (0 when consistent)."""
    z = np.zeros_like(u)
    v = np.maximum(z, u - ext[k0])
    v = np.maximum(v, ext[k0 + 1] - u)
    v = np.maximum(v, l - ext[k1])
    v = np.maximum(v, ext[k1 + 1] - l)
    v = np.maximum(v, l - ext[k])
    v = np.maximum(v, ext[k] - u)
    # The open ends of the order conditions: u < s_k0 and l > s_{k1+1}.
    strict = (u >= ext[k0]) | (l <= ext[k1 + 1])
    return v, strict


def _feasible_solution(a, k, r, u, l, flag, stats=None):
    x = np.empty_like(a)
    assemble_into(a, float(u), float(l), x)
    return ProjectionSolution(x, float(u), float(l), flag, stats or IterationStats())


def grid_oracle(inst, return_candidate=False):
    """Exhaustive search over all ``(k0, k1)`` pairs with ``0 <= k0 < k <= k1 <= n``.

    Returns the first exactly consistent candidate in enumeration order
    (``k0`` ascending, then ``k1`` ascending); when rounding leaves none
    exactly consistent, the candidate with the smallest violation is used if
    that violation is below ``FALLBACK_TOL`` times the data scale.
    """
    a, k, r, n = inst.a, inst.k, inst.r, inst.n
    s, prefix, ext = _sorted_data(a)
    if prefix[k] <= r:
        u = float(s[k - 1])
        sol = ProjectionSolution(a.copy(), u, u, FLAG_FEASIBLE)
        return (sol, None) if return_candidate else sol

    scale = _scale(a, r, k)
    tol = ORDER_TOL * scale
    k1 = np.arange(k, n + 1)
    rows = max(1, 2_000_000 // k1.size)
    best = None
    for start in range(0, k, rows):
        k0 = np.arange(start, min(k, start + rows))[:, None]
        u, l, det = solve_candidate(prefix, k, r, k0, k1[None, :])
        viol, strict = _violation(ext, k, k0, k1[None, :], u, l)
        viol = np.where(np.abs(det) < 1e-14 * scale, np.inf, viol)
        exact = (viol <= tol) & ~strict
        if exact.any():
            i, j = np.unravel_index(np.argmax(exact), exact.shape)
            best = (0.0, int(k0[i, 0]), int(k1[j]), float(u[i, j]), float(l[i, j]))
            break
        i, j = np.unravel_index(np.argmin(viol), viol.shape)
        if best is None or viol[i, j] < best[0]:
            best = (float(viol[i, j]), int(k0[i, 0]), int(k1[j]), float(u[i, j]), float(l[i, j]))
    if best is None or best[0] > FALLBACK_TOL * scale:
        raise InvariantError("grid oracle found no consistent (k0, k1) pair")
    _, c0, c1, u, l = best
    sol = _feasible_solution(a, k, r, u, l, FLAG_SHORTCUT)
    if return_candidate:
        return sol, GridCandidate(c0, c1, u, l, True)
    return sol


@njit(cache=True)
def _sweep(prefix, ext, k, r, tol):
    """Walk (k0, k1) from (k - 1, k): grow the pool while l is too low, then
    shrink the shifted block while u is too high."""
    n = ext.size - 2
    k0 = k - 1
    k1 = k
    steps = 0
    while True:
        steps += 1
        S0 = prefix[k0]
        rhs_budget = r - S0
        rhs_area = prefix[k1] - S0
        det = -k0 * (k1 - k) - k * (k - k0)
        u = (rhs_budget * (k1 - k) - k * rhs_area) / det
        l = (-k0 * rhs_area - (k - k0) * rhs_budget) / det
        if l < ext[k1 + 1] - tol and k1 < n:
            k1 += 1
        elif u > ext[k0] + tol and k0 > 0:
            k0 -= 1
        elif l == ext[k1 + 1] and k1 < n:
            k1 += 1
        elif u == ext[k0] and k0 > 0:
            k0 -= 1
        else:
            return k0, k1, u, l, steps


def sorted_solver(inst):
    """Sort, prefix sums, then one monotone sweep over candidate pairs."""
    a, k, r = inst.a, inst.k, inst.r
    s, prefix, ext = _sorted_data(a)
    if prefix[k] <= r:
        u = float(s[k - 1])
        return ProjectionSolution(a.copy(), u, u, FLAG_FEASIBLE)
    tol = ORDER_TOL * _scale(a, r, k)
    k0, k1, u, l, _ = _sweep(prefix, ext, k, r, tol)
    # Long prefix sums lose digits to cancellation; redo the final solve
    # from pairwise block sums.
    S0 = float(s[:k0].sum())
    u, l, _ = _solve_sums(S0, S0 + float(s[k0:k1].sum()), k, r, k0, k1)
    viol, _ = _violation(ext, k, k0, k1, np.float64(u), np.float64(l))
    if viol > FALLBACK_TOL * _scale(a, r, k):
        raise InvariantError("sorted solver ended on an inconsistent (k0, k1) pair")
    return _feasible_solution(a, k, r, u, l, FLAG_SHORTCUT)
