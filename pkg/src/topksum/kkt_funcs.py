"""Sort-free evaluation of the budget curve F_r, the area function g_r and its root G_r.

For a threshold ``u`` the three functions are

    F_r(u)    = (r - sum_i max(a_i - u, 0)) / k
    g_r(u, l) = sum_i max(a_i - u, 0) - sum_i max(a_i - l, 0) + k (u - l)
    G_r(u)    = min { l : g_r(u, l) = 0 }

and ``D(u) = G_r(u) - F_r(u)`` is decreasing; its root gives the optimal pair
of thresholds. Every evaluation is a pass over an unsorted pool of values.

The compiled kernels take a buffer and an explicit length so the solver can run
them on shrinking candidate pools; the Python wrappers run them on a full
instance.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import DomainError, ParameterError

# Reassociation lets LLVM vectorise the reductions; infinities stay legal.
FAST = {"nsz", "arcp", "contract", "reassoc"}

GS_OK = 0
GS_EMPTY = 1  # no entry below u although H = 0
GS_SHORT = 2  # fewer than H + 1 entries below u


@njit(cache=True, fastmath=FAST)
def excess_stats(src, n_src, u):
    """Return sum max(x - u, 0), |{x >= u}| and |{x == u}| over ``src[:n_src]``."""
    s = 0.0
    c = 0
    e = 0
    for i in range(n_src):
        x = src[i]
        d = x - u
        s += d if d > 0.0 else 0.0
        c += 1 if x >= u else 0
        e += 1 if x == u else 0
    return s, c, e


@njit(cache=True, fastmath=FAST)
def excess_sum(src, n_src, l):
    s = 0.0
    for i in range(n_src):
        d = src[i] - l
        s += d if d > 0.0 else 0.0
    return s


@njit(cache=True, fastmath=FAST)
def sum_between(src, n_src, lo, hi, closed_lo):
    """Sum and count of the entries in ``(lo, hi)``, or ``[lo, hi)`` if ``closed_lo``.

    Masks enter as multipliers so that the loop vectorises.
    """
    s = 0.0
    c = 0.0
    if closed_lo:
        for i in range(n_src):
            x = src[i]
            m = (x >= lo) & (x < hi)
            s += x * m
            c += m
    else:
        for i in range(n_src):
            x = src[i]
            m = (x > lo) & (x < hi)
            s += x * m
            c += m
    return s, int(c)


@njit(cache=True, fastmath=FAST)
def compact_between(src, n_src, lo, hi, dest):
    """Copy the entries in ``(lo, hi)`` to the front of ``dest``; may run in place."""
    j = 0
    for i in range(n_src):
        x = src[i]
        dest[j] = x
        j += 1 if (x > lo) & (x < hi) else 0
    return j


@njit(cache=True, fastmath=FAST)
def _gsearch_top(src, n_src, u, v, materialize, base_cnt, base_max):
    """G-search for ``H = 0``: the largest candidate below ``u``."""
    mx = base_max if base_cnt > 0 else -np.inf
    for i in range(n_src):
        x = src[i]
        if (x < u) & (x > mx):
            mx = x
    if mx == -np.inf:
        return mx, 0, 0, GS_EMPTY, mx
    nv = 0
    if materialize:
        for i in range(n_src):
            x = src[i]
            v[nv] = x
            nv += 1 if x == mx else 0
    else:
        for i in range(n_src):
            nv += 1 if src[i] == mx else 0
    return mx, nv, 0, GS_OK, np.nextafter(mx, -np.inf)


@njit(cache=True, fastmath=FAST)
def _pool_bound(v, nv, base_sum, base_cnt, H, u):
    s = base_sum
    for t in range(nv):
        s += v[t]
    return (s - H * u) / (base_cnt + nv - H)


@njit(cache=True, fastmath=FAST)
def gsearch_kernel(src, n_src, u, H, hint, use_hint, allow_skip, v, base_sum, base_cnt,
                   base_max):
    """Root of the area function below ``u`` by lower-bound filtering.

    ``H = k - |{a >= u}|``. Candidates are the entries of ``src[:n_src]``
    below ``u`` plus a fixed block of ``base_cnt`` entries (sum ``base_sum``,
    maximum ``base_max``) known to lie at or above the root. The bound is
    updated after every insertion of the growth pass and recomputed from the
    survivors after every removal sweep. ``v`` receives the
    surviving pool: the non-fixed candidates strictly above the returned
    ``cut``. Returns ``(rho, pool_size, sweeps, status, cut)``.
    """
    if H == 0:
        return _gsearch_top(src, n_src, u, v, True, base_cnt, base_max)

    nv = 0
    sv = base_sum
    rho = -np.inf
    cut = u
    low = np.inf  # smallest pooled value
    below = 1  # candidates under the cut; unknown without a hint
    drift = False  # rho carries incremental updates
    if use_hint and hint < u:
        cut = hint
        below = 0
        # Block of candidates at or above the hint, copied without branches.
        for i in range(n_src):
            x = src[i]
            v[nv] = x
            cand = x < u
            take = cand & (x >= hint)
            sv += x if take else 0.0
            nv += 1 if take else 0
            low = min(low, x if take else np.inf)
            below += 1 if cand & (x < hint) else 0
    seeded = base_cnt + nv > H
    if seeded:
        rho = (sv - H * u) / (base_cnt + nv - H)
        if use_hint and ((allow_skip and rho >= hint) or below == 0):
            cut = -np.inf
    if cut > -np.inf:
        for i in range(n_src):
            x = src[i]
            if x < cut:
                if seeded:
                    if x > rho:
                        v[nv] = x
                        nv += 1
                        rho += (x - rho) / (base_cnt + nv - H)
                        drift = True
                else:
                    v[nv] = x
                    nv += 1
                    sv += x
                    low = min(low, x)
                    if base_cnt + nv > H:
                        seeded = True
                        rho = (sv - H * u) / (base_cnt + nv - H)
    if not seeded:
        return -np.inf, nv, 0, GS_SHORT, -np.inf

    sweeps = 0
    if drift:
        rho = _pool_bound(v, nv, base_sum, base_cnt, H, u)
    if drift or low <= rho:
        # Each sweep removes the entries at or below the bound it started
        # with and recomputes the bound from the survivors; updating it per
        # removal lets rounding drift past entries tied with the root.
        while True:
            sweeps += 1
            j = 0
            sv = base_sum
            for t in range(nv):
                x = v[t]
                if x > rho:
                    v[t] = v[j]
                    v[j] = x
                    j += 1
                    sv += x
            if j == nv or base_cnt + j <= H:
                # Nothing left to remove, or only ties with the root were.
                break
            nv = j
            rho = (sv - H * u) / (base_cnt + nv - H)
    return rho, nv, sweeps, GS_OK, rho


@njit(cache=True)
def gsearch_batched(src, n_src, u, H, hint, use_hint, v, materialize, base_sum, base_cnt,
                    base_max):
    """Same contract as ``gsearch_kernel`` with batched bound updates.

    Each pass takes the sum and count of the candidates strictly above the
    current bound and recomputes the bound from them. Passes are read-only
    and carry no serial chain of divisions, and from a valid lower bound the
    bounds increase to the root; the sets they select are nested, so an
    unchanged count means a fixed point. The pool is written to ``v`` only
    when ``materialize`` is set.
    """
    if H == 0:
        return _gsearch_top(src, n_src, u, v, materialize, base_cnt, base_max)
    t = -np.inf
    c_prev = -1
    passes = 0
    if use_hint and hint < u:
        S, c = sum_between(src, n_src, hint, u, True)
        passes += 1
        if base_cnt + c > H:
            # Any seeded bound lies at or below the root.
            t = (base_sum + S - H * u) / (base_cnt + c - H)
            c_prev = c
    rho = t
    while passes <= n_src + 2:
        S, c = sum_between(src, n_src, t, u, False)
        passes += 1
        if base_cnt + c <= H:
            if t == -np.inf:
                return -np.inf, c, passes, GS_SHORT, -np.inf
            # Only ties at t remain above it: t is the root.
            rho = t
            break
        rho = (base_sum + S - H * u) / (base_cnt + c - H)
        if c == c_prev or not rho > t:
            break
        c_prev = c
        t = rho
    nv = c
    if materialize:
        nv = compact_between(src, n_src, t, u, v)
    return rho, nv, passes, GS_OK, t


GS_MODE_SKIP = 1  # allow the growth pass to be skipped
GS_MODE_BATCHED = 2  # batched bound updates instead of incremental ones


@njit(cache=True)
def gsearch_mode(src, n_src, u, H, hint, use_hint, mode, v, materialize, base_sum, base_cnt,
                 base_max):
    """Dispatch on the ``mode`` bits. The incremental search always fills ``v``."""
    if mode & GS_MODE_BATCHED:
        return gsearch_batched(src, n_src, u, H, hint, use_hint, v, materialize, base_sum,
                               base_cnt, base_max)
    return gsearch_kernel(src, n_src, u, H, hint, use_hint, (mode & GS_MODE_SKIP) != 0, v,
                          base_sum, base_cnt, base_max)


@dataclass(frozen=True)
class BreakpointQuery:
    """Counts of the entries at or above a query point ``u``."""

    u: float
    count_ge: int
    count_eq: int
    sum_ge: float


@dataclass(frozen=True)
class GSearchResult:
    rho: float
    pool_size: int
    passes: int


def breakpoint_query(inst, u):
    a = inst.a
    mask = a >= u
    return BreakpointQuery(
        float(u), int(mask.sum()), int(np.count_nonzero(a == u)), float(a[mask].sum())
    )


def eval_Fr(inst, u):
    """Budget curve F_r(u) in one pass."""
    s, _, _ = excess_stats(inst.a, inst.n, float(u))
    return (inst.r - s) / inst.k


def deriv_Fr(inst, u):
    """Left and right slopes of F_r at ``u``."""
    _, c, e = excess_stats(inst.a, inst.n, float(u))
    return c / inst.k, (c - e) / inst.k


def eval_gr(inst, u, l):
    if l > u:
        raise ParameterError(f"g_r needs l <= u, got l={l} > u={u}")
    a, k = inst.a, inst.k
    return excess_sum(a, a.size, float(u)) - excess_sum(a, a.size, float(l)) + k * (u - l)


def _scratch(n):
    return np.empty(n + 1, dtype=np.float64)


def g_search(inst, u, fr_hint=None, allow_skip=True, scratch=None, batched=False):
    """G_r(u): the smallest root of ``g_r(u, .)``.

    ``fr_hint`` (usually F_r(u)) moves the entries above it to the front of
    the candidate pool, which gives a tight starting bound. ``batched``
    selects the variant that recomputes the bound once per pass.
    """
    a, k = inst.a, inst.k
    u = float(u)
    _, m, _ = excess_stats(a, a.size, u)
    if m > k:
        raise DomainError(f"G_r undefined at u={u}: {m} entries >= u exceed k={k}")
    v = _scratch(a.size) if scratch is None else scratch
    use_hint = fr_hint is not None
    hint = float(fr_hint) if use_hint else np.inf
    mode = (GS_MODE_SKIP if allow_skip else 0) | (GS_MODE_BATCHED if batched else 0)
    rho, nv, sweeps, status, _ = gsearch_mode(a, a.size, u, k - m, hint, use_hint, mode, v,
                                              True, 0.0, 0, -np.inf)
    if status == GS_EMPTY:
        raise DomainError(f"G_r undefined at u={u}: no entry below u")
    if status == GS_SHORT:
        raise DomainError(f"G_r undefined at u={u}: too few entries below u")
    return GSearchResult(float(rho), int(nv), int(sweeps))


def eval_D(inst, u, fr_hint_mode=True):
    """Gap ``D(u) = G_r(u) - F_r(u)``; returns ``(D, F_r(u), G_r(u))``."""
    fr = eval_Fr(inst, u)
    gr = g_search(inst, u, fr if fr_hint_mode else None).rho
    return gr - fr, fr, gr


def deriv_D_right(inst, u, Gr_u):
    """Right derivative of D at ``u`` given ``G_r(u)``.

    Differentiating ``g_r(u, G_r(u)) = 0`` gives
    ``G_r'(u+) = -(k - m) / (c - k)`` with ``m = |{a > u}|`` and
    ``c = |{a >= G_r(u)}|``, the entries that take part in the balance as
    ``u`` grows and ``G_r`` falls.
    """
    a, k = inst.a, inst.k
    m_plus = int(np.count_nonzero(a > u))
    c_low = int(np.count_nonzero(a >= Gr_u))
    return _deriv_right(k, m_plus, c_low)


def _deriv_right(k, m_plus, c_low):
    if m_plus == k:
        return -1.0
    if c_low <= k:
        raise DomainError(f"degenerate piece: {c_low} entries at or above G_r, k={k}")
    return -(k - m_plus) / (c_low - k) - m_plus / k
