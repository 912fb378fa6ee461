"""EIPS: sort-free projection onto the top-k-sum constraint.

The solver looks for the root ``u_r*`` of ``D(u) = G_r(u) - F_r(u)`` in
three phases:

* initialization: a Newton-like iteration on the budget curve that either
  settles the instance outright (feasible input, or one of two shortcuts)
  or produces a bound and a starting point;
* pivot: a bracketing secant search that stops once the root is isolated on
  a single linear piece of F_r;
* exact: Newton steps on that piece.

Pools of candidate values shrink as the bracket tightens, so late iterations
only touch a small fraction of the input. All hot loops are compiled with
numba; the public step functions below wrap the same kernels that ``project``
runs end to end.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .core import (
    FLAG_BRACKET,
    FLAG_FEASIBLE,
    FLAG_LOWER,
    FLAG_SHORTCUT,
    FLAG_UPPER,
    DomainError,
    InvariantError,
    IterationStats,
    NumericError,
    ParameterError,
    ProjectionSolution,
    kth_largest,
    project_k1,
    project_kn,
)
from .kkt_funcs import (
    FAST,
    GS_MODE_BATCHED,
    GS_EMPTY,
    GS_MODE_SKIP,
    GS_OK,
    compact_between,
    excess_stats,
    gsearch_mode,
    sum_between,
)

# Scalar slots of the filter state array.
FS_B = 0  # sum of the entries at or above f_hi
FS_N = 1  # their count
FS_BTIE = 2  # those equal to f_hi
FS_FLO = 3  # every entry in [f_lo, f_hi) is in a_f
FS_FHI = 4
FS_NF = 5  # live length of a_f
FS_NG = 6  # live length of a_g
# Fixed block of the G pool: every entry in [p_lo, p_hi) lies at or above
# G_r(u) for all u >= p_hi still in the bracket, so it is summarised and
# kept out of a_g.
FS_PSUM = 7
FS_PCNT = 8
FS_PLO = 9
FS_PHI = 10
FS_PTIE = 11  # entries of the block equal to p_lo
FS_SIZE = 12

ST_OK = 0
ST_PIVOT_CAP = 1
ST_EXACT_CAP = 2
ST_FLAT = 3
ST_DOMAIN = 4
ST_NONFINITE = 5
ST_INIT_CAP = 6

_STATUS_TEXT = {
    ST_PIVOT_CAP: "pivot step exceeded its iteration cap",
    ST_EXACT_CAP: "exact step exceeded its iteration cap",
    ST_FLAT: "zero slope of D on a piece while |D| > eps",
    ST_DOMAIN: "G_r evaluated outside its domain",
    ST_NONFINITE: "non-finite intermediate value",
    ST_INIT_CAP: "initialization exceeded its iteration cap",
}


@dataclass(frozen=True)
class SolverConfig:
    """Switches for the optional parts of the algorithm."""

    fr_hint: bool = True  # seed G-searching from entries above F_r(u)
    skip_growth: bool = True  # skip the growth pass when the seed bound is already tight
    case3_exit: bool = True  # Case-3 test inside initialization
    polish: bool = True  # one extra Newton step on the final piece
    batched_gsearch: bool = True  # recompute the G-search bound once per sweep

    @property
    def gs_mode(self):
        return (GS_MODE_SKIP if self.skip_growth else 0) | (
            GS_MODE_BATCHED if self.batched_gsearch else 0)


DEFAULT_CONFIG = SolverConfig()


# ---------------------------------------------------------------------------
# Compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True, fastmath=FAST)
def _init_pass(a, u, l_prev):
    """One sweep for the initialization step at ``u``.

    Returns sum max(a - u, 0), |{a >= u}| and sum max(a - l_prev, 0).
    """
    s = 0.0
    c = 0.0
    sl = 0.0
    for i in range(a.size):
        x = a[i]
        d = x - u
        s += d if d > 0.0 else 0.0
        c += x >= u
        dl = x - l_prev
        sl += dl if dl > 0.0 else 0.0
    return s, int(c), sl


@njit(cache=True, fastmath=FAST)
def _max_entry(a):
    """max(a) with four independent accumulators."""
    n = a.size
    m0 = m1 = m2 = m3 = -np.inf
    i = 0
    while i + 4 <= n:
        x0 = a[i]
        x1 = a[i + 1]
        x2 = a[i + 2]
        x3 = a[i + 3]
        m0 = x0 if x0 > m0 else m0
        m1 = x1 if x1 > m1 else m1
        m2 = x2 if x2 > m2 else m2
        m3 = x3 if x3 > m3 else m3
        i += 4
    m = max(max(m0, m1), max(m2, m3))
    for j in range(i, n):
        m = a[j] if a[j] > m else m
    return m


@njit(cache=True)
def _neighbours(a, u):
    """min{a >= u} and max{a < u}."""
    lo_above = np.inf
    hi_below = -np.inf
    for i in range(a.size):
        x = a[i]
        if x >= u:
            lo_above = min(lo_above, x)
        else:
            hi_below = max(hi_below, x)
    return lo_above, hi_below


@njit(cache=True)
def _init_kernel(a, k, r, eps, case3_exit, use_hint, gs_mode, v, keep_pool):
    """Initialization phase.

    Returns ``(status, flag, iters, u_star, l_star, uL, DL, cL, GL, uR, DR,
    cR, uC, f_lo, u_prev, u_cur, pool_size, gsearch_calls, GR)``. For flag 3,
    and for flag 1 with ``keep_pool``, ``v[:pool_size]`` holds the G-search
    pool at ``uR``; at ``uR = max(a)`` that pool is nearly the whole input.
    """
    n = a.size
    nan = np.nan
    inf = np.inf
    u = r / k
    u_prev = inf
    fr_prev = inf
    s_prev = 0.0
    c_prev = 0
    it = 0
    s = 0.0
    c = 0
    sl = 0.0
    while True:
        it += 1
        if it > n + 2:
            return (ST_INIT_CAP, -9, it, nan, nan, nan, nan, 0, nan, nan, nan, 0, nan,
                    nan, u_prev, u, 0, 0, nan)
        s, c, sl = _init_pass(a, u, fr_prev)
        fr = (r - s) / k
        if (r - s) - k * u >= -eps * max(1.0, abs(u)):
            return (ST_OK, FLAG_FEASIBLE, it, u, u, nan, nan, 0, nan, nan, nan, 0, nan,
                    nan, u_prev, u, 0, 0, nan)
        if case3_exit and c == k:
            a_k, hi_below = _neighbours(a, u)
            fr_k = (r - (s - c * (a_k - u))) / k
            if hi_below <= fr_k + eps * max(1.0, abs(a_k)):
                return (ST_OK, FLAG_SHORTCUT, it, a_k, fr_k, nan, nan, 0, nan, nan, nan,
                        0, nan, nan, u_prev, u, 0, 0, nan)
        if c >= k:
            break
        u_next = (u * c - k * fr) / (c - k)
        if not np.isfinite(u_next):
            return (ST_NONFINITE, -9, it, nan, nan, nan, nan, 0, nan, nan, nan, 0, nan,
                    nan, u_prev, u, 0, 0, nan)
        u_prev = u
        fr_prev = fr
        s_prev = s
        c_prev = c
        u = u_next

    # Entries at or above u are a lower bound for u_r* unless Case 3 was
    # skipped and exactly k of them exist.
    f_lo = u if (c > k or case3_exit) else -inf

    if it == 1:
        # g_r(max a, r/k) in closed form from the first sweep.
        amax = _max_entry(a)
        g = k * amax - r - s
        if g < 0.0:
            l_star = u
            return (ST_OK, FLAG_SHORTCUT, it, l_star + s / k, l_star, nan, nan, 0, nan,
                    nan, nan, 0, nan, f_lo, u_prev, u, 0, 0, nan)
        uR = amax
        _, cR, _ = excess_stats(a, n, uR)
        frR = r / k
        G, nv, _, st, _ = gsearch_mode(a, n, uR, k - cR, frR, use_hint, gs_mode, v, keep_pool,
                                       0.0, 0, -inf)
        if st != GS_OK:
            return (ST_DOMAIN, -9, it, nan, nan, nan, nan, 0, nan, nan, nan, 0, nan,
                    f_lo, u_prev, u, 0, 1, nan)
        DR = G - frR
        uC = DR / (k / max(nv, 1)) + uR
        return (ST_OK, FLAG_UPPER, it, nan, nan, -inf, nan, n + 1, nan, uR, DR, cR, uC,
                f_lo, u_prev, u, nv, 1, G)

    # g_r(u_prev, F_r(u_prev)) from the sums of the last two sweeps.
    g = s_prev - sl + k * (u_prev - fr_prev)
    # The pool is only kept when u_prev becomes the upper bound (g >= 0).
    gs_init = 1
    G, nv, _, st, _ = gsearch_mode(a, n, u_prev, k - c_prev, fr_prev, use_hint, gs_mode, v,
                                   g >= 0.0, 0.0, 0, -inf)
    if st != GS_OK:
        return (ST_DOMAIN, -9, it, nan, nan, nan, nan, 0, nan, nan, nan, 0, nan, f_lo,
                u_prev, u, 0, 1, nan)
    D = G - fr_prev
    lower = D > 0.0
    if not lower and g < 0.0:
        # Rounding put g on the wrong side of a flat zero piece of
        # g_r(u_prev, .); the gap decides, and flag 3 needs the pool.
        G, nv, _, st, _ = gsearch_mode(a, n, u_prev, k - c_prev, fr_prev, use_hint, gs_mode,
                                       v, True, 0.0, 0, -inf)
        gs_init = 2
    u_tan = k * D / c_prev + u_prev
    if lower:
        uC = 0.5 * (u_prev + u_tan)
        return (ST_OK, FLAG_LOWER, it, nan, nan, u_prev, D, c_prev, G, inf, nan, 0, uC,
                u_prev, u_prev, u, nv, gs_init, nan)
    uC = 0.5 * (u_prev + max(u_tan, u))
    return (ST_OK, FLAG_BRACKET, it, nan, nan, -inf, nan, n + 1, nan, u_prev, D, c_prev,
            uC, f_lo, u_prev, u, nv, gs_init, G)


@njit(cache=True, fastmath=FAST)
def _high_stats(src, n_src, hi):
    """Sum and count of the entries >= hi, and how many equal hi."""
    B = 0.0
    N = 0.0
    tie = 0.0
    for i in range(n_src):
        x = src[i]
        m = x >= hi
        B += x * m
        N += m
        tie += x == hi
    return B, int(N), int(tie)


@njit(cache=True, fastmath=FAST)
def _build_filter(a, lo, hi, p_lo, p_hi, af, ag, fs):
    """Fill ``af`` with the entries in [lo, hi) and summarise the entries >= hi.

    With a finite ``p_lo`` the fixed G block [p_lo, p_hi) is summarised and
    every other entry is copied to ``ag``.
    """
    B, N, tie = _high_stats(a, a.size, hi)
    nf = 0
    for i in range(a.size):
        x = a[i]
        af[nf] = x
        nf += 1 if (x >= lo) & (x < hi) else 0
    fs[FS_B] = B
    fs[FS_N] = N
    fs[FS_BTIE] = tie
    fs[FS_FLO] = lo
    fs[FS_FHI] = hi
    fs[FS_NF] = nf
    fs[FS_PSUM] = 0.0
    fs[FS_PCNT] = 0
    fs[FS_PLO] = np.inf
    fs[FS_PHI] = np.inf
    fs[FS_PTIE] = 0
    if p_lo > -np.inf:
        psum, pcnt, ptie = _block_stats(a, a.size, p_lo, p_hi, np.inf, np.inf)
        ng = 0
        for i in range(a.size):
            x = a[i]
            ag[ng] = x
            ng += 1 if (x < p_lo) | (x >= p_hi) else 0
        fs[FS_NG] = ng
        if pcnt > 0:
            fs[FS_PSUM] = psum
            fs[FS_PCNT] = pcnt
            fs[FS_PTIE] = ptie
            fs[FS_PLO] = p_lo
            fs[FS_PHI] = p_hi


@njit(cache=True)
def _filter_F(af, fs, u, k, r):
    """F_r(u), |{a >= u}| and |{a == u}| from the filter."""
    s, c, e = excess_stats(af, int(fs[FS_NF]), u)
    N = fs[FS_N]
    fr = (r - (fs[FS_B] - N * u) - s) / k
    if u == fs[FS_FHI]:
        e += int(fs[FS_BTIE])
    return fr, int(N) + c, e


@njit(cache=True, fastmath=FAST)
def _tighten_R(af, dst, fs, u):
    """Move a_f entries >= u into (B, N); the rest of [f_lo, u) goes to ``dst``
    (``af`` itself is allowed)."""
    nf = int(fs[FS_NF])
    B, N, tie = _high_stats(af, nf, u)
    lo = fs[FS_FLO]
    j = 0
    for i in range(nf):
        x = af[i]
        dst[j] = x
        j += 1 if (x >= lo) & (x < u) else 0
    fs[FS_NF] = j
    if u < fs[FS_FHI]:
        fs[FS_BTIE] = tie
        fs[FS_FHI] = u
    fs[FS_B] += B
    fs[FS_N] += N


@njit(cache=True, fastmath=FAST)
def _tighten_L(af, dst, fs, u):
    """Keep the a_f entries in [u, f_hi) in ``dst`` (``af`` itself is allowed)."""
    nf = int(fs[FS_NF])
    hi = fs[FS_FHI]
    j = 0
    for i in range(nf):
        x = af[i]
        dst[j] = x
        j += 1 if (x >= u) & (x < hi) else 0
    fs[FS_NF] = j
    fs[FS_FLO] = max(fs[FS_FLO], u)


@njit(cache=True, fastmath=FAST)
def _block_stats(src, n_src, lo, hi, p_lo, p_hi):
    """Sum and count of the entries in [lo, hi) outside [p_lo, p_hi), and how
    many of them equal lo."""
    s = 0.0
    c = 0.0
    tie = 0.0
    for i in range(n_src):
        x = src[i]
        m = (x >= lo) & (x < hi) & ((x < p_lo) | (x >= p_hi))
        s += x * m
        c += m
        tie += m & (x == lo)
    return s, int(c), int(tie)


@njit(cache=True, fastmath=FAST)
def _grow_block(ag, dst, fs, u, G):
    """Widen the fixed G block to [min(G, p_lo), max(u, p_hi)) for a new lower
    bound ``u`` with ``G = G_r(u)``; G_r is nonincreasing, so the block stays
    above the root for every later evaluation point. The entries entering
    the block leave the pool, which is compacted into ``dst`` (``ag`` itself
    is allowed). Returns whether ``dst`` was written."""
    empty = fs[FS_PCNT] == 0
    p_lo = np.inf if empty else fs[FS_PLO]
    p_hi = np.inf if empty else fs[FS_PHI]
    lo = min(G, p_lo)
    hi = u if empty else max(u, p_hi)
    ng = int(fs[FS_NG])
    psum, pcnt, ptie = _block_stats(ag, ng, lo, hi, p_lo, p_hi)
    if pcnt == 0:
        return False
    j = 0
    for i in range(ng):
        x = ag[i]
        dst[j] = x
        j += 1 if (x < lo) | (x >= hi) else 0
    fs[FS_NG] = j
    if not empty and lo == p_lo:
        ptie += int(fs[FS_PTIE])
    fs[FS_PSUM] = (0.0 if empty else fs[FS_PSUM]) + psum
    fs[FS_PCNT] = (0 if empty else int(fs[FS_PCNT])) + pcnt
    fs[FS_PTIE] = ptie
    fs[FS_PLO] = lo
    fs[FS_PHI] = hi
    return True


@njit(cache=True, fastmath=FAST)
def _count_pool(ag, fs, lo, hi, closed_lo):
    """Pool entries in [lo, hi) (or (lo, hi)); the pool never holds block entries."""
    _, c = sum_between(ag, int(fs[FS_NG]), lo, hi, closed_lo)
    return c


@njit(cache=True)
def _gsearch(a, ag, fs, u, H, hint, use_hint, gs_mode, scratch):
    """G_r(u) over the pool and the fixed block.

    For ``H = 0`` the root is the largest entry below ``u``, read from the
    input itself since the block is only summarised.
    """
    if H == 0:
        mx = -np.inf
        for i in range(a.size):
            x = a[i]
            if (x < u) & (x > mx):
                mx = x
        if mx == -np.inf:
            return mx, 0, 0, GS_EMPTY, mx
        ng = int(fs[FS_NG])
        nv = 0
        for i in range(ng):
            x = ag[i]
            scratch[nv] = x
            nv += 1 if x == mx else 0
        return mx, nv, 0, GS_OK, np.nextafter(mx, -np.inf)
    return gsearch_mode(ag, int(fs[FS_NG]), u, H, hint, use_hint, gs_mode, scratch, False,
                        fs[FS_PSUM], int(fs[FS_PCNT]), -np.inf)


@njit(cache=True)
def _next_above(af, fs, u):
    best = np.inf
    for i in range(int(fs[FS_NF])):
        x = af[i]
        if x > u and x < best:
            best = x
    # Without a_f entries above u the answer is at least f_hi.
    if fs[FS_N] > 0 and fs[FS_FHI] > u:
        best = min(best, fs[FS_FHI])
    return best


@njit(cache=True)
def _next_below(af, fs, u):
    best = -np.inf
    lo = fs[FS_FLO]
    for i in range(int(fs[FS_NF])):
        x = af[i]
        if x < u and x > best and x >= lo:
            best = x
    return best


@njit(cache=True)
def _min_at_or_above(a, af, fs, u):
    best = np.inf
    for i in range(int(fs[FS_NF])):
        x = af[i]
        if x >= u and x < best:
            best = x
    if best == np.inf and fs[FS_N] > 0:
        # Only summarised entries remain; scan the input.
        for i in range(a.size):
            x = a[i]
            if x >= u and x < best:
                best = x
    return best


@njit(cache=True)
def _adopt_pool(ag, ag_input, scratch, spare, fs, gs_mode, nv, cut, u):
    """Make the candidates strictly between ``cut`` and ``u`` the new a_g.

    The incremental search has already written them to ``scratch``; the
    batched one leaves them to this compaction. Returns ``(ag, scratch,
    spare)``; the input array is never written and never becomes scratch.
    """
    if gs_mode & GS_MODE_BATCHED:
        nv = compact_between(ag, int(fs[FS_NG]), cut, u, scratch)
    fs[FS_NG] = nv
    if ag_input:
        return scratch, spare, spare
    return scratch, ag, spare


# Cost model for the lazy compactions: a branchless compaction costs about
# three plain scans, a G search reads its pool about four times, and a few
# evaluations usually remain.
COMPACT_COST = 3
GS_SCANS = 4
EVALS_AHEAD = 2


@njit(cache=True)
def _worth_compacting(kept, size, scans):
    """Whether dropping ``size - kept`` entries pays for a compaction.

    A compaction costs about as much as ``COMPACT_COST`` plain scans;
    ``scans`` is how often each later evaluation reads the array.
    """
    return (size - kept) * scans * EVALS_AHEAD >= COMPACT_COST * size


@njit(cache=True)
def _move_left(af, afb, ag, ag_input, scratch, spare, fs, u, G, c_af, nv):
    """Raise the lower bound to ``u`` with ``G = G_r(u)``.

    ``c_af`` is the number of a_f entries >= u and ``nv`` the size of the G
    pool at ``u``. Small moves only update the bounds: a_f may keep entries
    below f_lo and a_g entries of [G, u), since every kernel masks by range.
    Returns ``(af, ag, ag_input, scratch, spare)``; the input array is only
    ever read.
    """
    if _worth_compacting(c_af, int(fs[FS_NF]), 1):
        _tighten_L(af, afb, fs, u)
        af = afb
    else:
        fs[FS_FLO] = max(fs[FS_FLO], u)
    if _worth_compacting(int(fs[FS_NG]) - nv, int(fs[FS_NG]), GS_SCANS):
        if _grow_block(ag, scratch if ag_input else ag, fs, u, G) and ag_input:
            return af, scratch, False, spare, spare
    return af, ag, ag_input, scratch, spare


@njit(cache=True)
def _move_right(af, afb, ag, ag_input, scratch, spare, fs, gs_mode, c_af, nv, cut, u):
    """Lower the upper bound to ``u``; the G pool shrinks to (cut, u).

    Small moves leave a_f untouched (f_hi stays, so nothing is summarised
    twice) and keep the wider pool.
    """
    nf = int(fs[FS_NF])
    if _worth_compacting(nf - c_af, nf, 1):
        _tighten_R(af, afb, fs, u)
        af = afb
    if not gs_mode & GS_MODE_BATCHED or _worth_compacting(nv, int(fs[FS_NG]), GS_SCANS):
        ag, scratch, spare = _adopt_pool(ag, ag_input, scratch, spare, fs, gs_mode, nv, cut, u)
        ag_input = False
    return af, ag, ag_input, scratch, spare


@njit(cache=True)
def _secant(x, Dx, y, Dy):
    return (-x * Dy + y * Dx) / (Dx - Dy)


@njit(cache=True)
def generate(lo, D_lo, hi, D_hi):
    """Secant root inside ``(lo, hi)``; the midpoint when the secant is
    degenerate (equal gap values) or leaves the bracket."""
    z = np.nan
    if D_lo != D_hi:
        z = _secant(hi, D_hi, lo, D_lo)
    if not (lo < z and z < hi):
        z = 0.5 * (lo + hi)
    return z


@njit(cache=True)
def _extrapolate(x, Dx, y, Dy):
    """Secant through (x, Dx), (y, Dy) continued beyond y, away from x."""
    step = y - x
    z = np.nan
    if Dx != Dy:
        z = _secant(x, Dx, y, Dy)
    if not (np.isfinite(z) and (z - y) * step > 0.0):
        z = y + step
    return z


@njit(cache=True)
def _eval_D(a, af, fs, ag, scratch, u, k, r, use_hint, gs_mode):
    """D(u) through the filter; returns (status, D, F, G, count_ge, count_eq, pool)."""
    fr, cnt, eq = _filter_F(af, fs, u, k, r)
    if cnt > k:
        return ST_DOMAIN, np.nan, fr, np.nan, cnt, eq, 0
    G, nv, _, st, _ = _gsearch(a, ag, fs, u, k - cnt, fr, use_hint, gs_mode, scratch)
    if st != GS_OK:
        return ST_DOMAIN, np.nan, fr, G, cnt, eq, nv
    return ST_OK, G - fr, fr, G, cnt, eq, nv


@njit(cache=True)
def _pivot_kernel(a, k, r, eps, uL, DL, cL, GL, uR, DR, cR, GR, uC, af, afb, fs, ag, ag_input,
                  scratch, spare, use_hint, gs_mode, max_iter, trace):
    """Pivot phase: bracket the root of D until it sits on one linear piece of F_r.

    ``cL`` and ``cR`` are |{a >= uL}| and |{a >= uR}|, with ``n + 1`` and 0
    standing in for the infinite bounds; ``GR`` is G_r(uR) or nan. ``af`` and ``ag`` may be the input
    itself until the first bound move; ``afb``, ``scratch`` and ``spare`` are
    work buffers. ``trace`` (length >= 2 * max_iter)
    records the bounds after each iteration. Returns ``(status, converged,
    uL, DL, cL, GL, uR, DR, cR, uC, af, ag, scratch, iters,
    gsearch_calls)``.
    """
    inf = np.inf
    uLB = np.nan
    DLB = np.nan
    uRB = np.nan
    DRB = np.nan
    its = 0
    evals = 0
    gs = 0
    status = ST_OK
    converged = False
    carried = False
    # Secant weights: the gap values of the bounds, with the stale one halved
    # whenever the same bound moves twice in a row (Illinois rule).
    wL = DL
    wR = DR
    last = 0
    # A bound handed over by the initialization may already be the root; the
    # pool at uR then lacks the entry equal to G_r(uR) and cannot be searched
    # at uR itself.
    if abs(DR) <= eps:
        return status, True, uR, DR, cR, GR, uR, DR, cR, uR, af, ag, scratch, 0, 0
    if abs(DL) <= eps:
        return status, True, uL, DL, cL, GL, uR, DR, cR, uL, af, ag, scratch, 0, 0
    while True:
        # A move to a neighbouring breakpoint (lines 10/13) is finished by the
        # evaluation that follows it, inside the same iteration.
        if not carried:
            its += 1
        carried = False
        evals += 1
        if evals > max_iter:
            status = ST_PIVOT_CAP
            break
        # Halving repair: move toward uR until F_r has slope <= 1 at uC.
        halvings = 0
        cnt = 0
        eq = 0
        fr = 0.0
        while True:
            if uC >= fs[FS_FLO]:
                fr, cnt, eq = _filter_F(af, fs, uC, k, r)
                if cnt <= k:
                    break
            halvings += 1
            if not uR < inf or halvings > 4000:
                status = ST_DOMAIN
                break
            uC = 0.5 * (uC + uR)
        if status != ST_OK:
            break
        # G_r is nonincreasing, so G_r(uR) bounds G_r(uC) from below and is
        # the better seed whenever it exceeds F_r(uC).
        hint = GR if GR > fr else fr
        G, nv, _, st, cut = _gsearch(a, ag, fs, uC, k - cnt, hint, use_hint, gs_mode, scratch)
        gs += 1
        if st != GS_OK:
            status = ST_DOMAIN
            break
        DC = G - fr
        if not np.isfinite(DC):
            status = ST_NONFINITE
            break
        if abs(DC) <= eps:
            uL, DL, cL, GL = uC, DC, cnt, G
            converged = True
            break
        moved_L = False
        moved_R = False
        if cnt == cL:
            if DC > 0.0:
                uL, DL, cL, GL = uC, DC, cnt, G
                wL = DC
                af, ag, ag_input, scratch, spare = _move_left(af, afb, ag, ag_input, scratch,
                                                              spare, fs, uC, G,
                                                              cnt - int(fs[FS_N]), nv)
                nxt = _next_above(af, fs, uC)
                if not nxt < uR:
                    break
                uC = nxt
                carried = True
                if 2 * its + 1 < trace.size:
                    trace[2 * its - 2] = uL
                    trace[2 * its - 1] = uR
                continue
            break
        if cnt == cR:
            if DC < 0.0:
                uR, DR, cR, GR = uC, DC, cnt, G
                wR = DC
                af, ag, ag_input, scratch, spare = _move_right(af, afb, ag, ag_input, scratch,
                                                               spare, fs, gs_mode,
                                                           cnt - int(fs[FS_N]), nv, cut, uC)
                prv = _next_below(af, fs, uC)
                if not prv > uL:
                    break
                uC = prv
                carried = True
                if 2 * its + 1 < trace.size:
                    trace[2 * its - 2] = uL
                    trace[2 * its - 1] = uR
                continue
            uL, DL, cL, GL = uC, DC, cnt, G
            break
        if uR == inf:
            if DC < 0.0:
                moved_R = True
            else:
                uLB, DLB = uL, DL
                moved_L = True
        elif uL == -inf:
            if DC > 0.0:
                moved_L = True
            else:
                uRB, DRB = uR, DR
                moved_R = True
        elif DC < 0.0:
            moved_R = True
        else:
            moved_L = True
        if moved_R:
            if last == 1 and uL > -inf:
                wL *= 0.5
            wR = DC
            last = 1
            uR, DR, cR, GR = uC, DC, cnt, G
            af, ag, ag_input, scratch, spare = _move_right(af, afb, ag, ag_input, scratch,
                                                           spare, fs, gs_mode,
                                                           cnt - int(fs[FS_N]), nv, cut, uC)
        if moved_L:
            if last == -1 and uR < inf:
                wR *= 0.5
            wL = DC
            last = -1
            uL, DL, cL, GL = uC, DC, cnt, G
            af, ag, ag_input, scratch, spare = _move_left(af, afb, ag, ag_input, scratch,
                                                          spare, fs, uC, G,
                                                          cnt - int(fs[FS_N]), nv)
        if 2 * its + 1 < trace.size:
            trace[2 * its - 2] = uL
            trace[2 * its - 1] = uR
        if uR == inf:
            uC = _extrapolate(uLB, DLB, uL, DL)
        elif uL == -inf:
            uC = _extrapolate(uRB, DRB, uR, DR)
        else:
            uC = generate(uL, wL, uR, wR)
    if status == ST_OK and uL == -inf:
        # The root lies between the lower filter bound and the first entry above it.
        uL = fs[FS_FLO]
        st, DL, _, GL, cL, _, _ = _eval_D(a, af, fs, ag, scratch, uL, k, r, use_hint, gs_mode)
        gs += 1
        if st != ST_OK:
            status = st
    return status, converged, uL, DL, cL, GL, uR, DR, cR, uC, af, ag, scratch, its, gs


@njit(cache=True)
def _slope_right(af, fs, ag, u, G, k, r):
    """D'(u+) from counts; nan on a degenerate piece."""
    _, cnt, eq = _filter_F(af, fs, u, k, r)
    m_plus = cnt - eq
    if m_plus == k:
        # G_r is flat to the right of u.
        return -1.0
    c_low = cnt + int(fs[FS_PCNT]) + _count_pool(ag, fs, G, u, True)
    if c_low <= k:
        return np.nan
    return -(k - m_plus) / (c_low - k) - m_plus / k


@njit(cache=True)
def _slope_left(af, fs, ag, u, G, k, r):
    """D'(u-) from counts; nan on a degenerate piece."""
    _, cnt, eq = _filter_F(af, fs, u, k, r)
    if cnt == k:
        return -1.0
    block = int(fs[FS_PCNT]) - (int(fs[FS_PTIE]) if G >= fs[FS_PLO] else 0)
    c_high = cnt + block + _count_pool(ag, fs, G, u, False)
    if c_high <= k:
        return np.nan
    return -(k - cnt) / (c_high - k) - cnt / k


@njit(cache=True)
def _exact_kernel(a, k, r, eps, u, D, G, af, fs, ag, scratch, use_hint, gs_mode, max_iter):
    """Newton steps on D from a point left of the root.

    Returns ``(status, u, D, G, iters, gsearch_calls)``.
    """
    its = 0
    gs = 0
    while abs(D) > eps:
        its += 1
        if its > max_iter:
            return ST_EXACT_CAP, u, D, G, its, gs
        slope = _slope_right(af, fs, ag, u, G, k, r)
        if not slope < 0.0:
            return ST_FLAT, u, D, G, its, gs
        u_next = u - D / slope
        if not np.isfinite(u_next):
            return ST_NONFINITE, u, D, G, its, gs
        st, D_next, _, G_next, _, _, _ = _eval_D(a, af, fs, ag, scratch, u_next, k, r,
                                                 use_hint, gs_mode)
        gs += 1
        if st != ST_OK:
            return st, u, D, G, its, gs
        if not abs(D_next) < abs(D):
            # Each exact step shrinks |D|; when one does not, rounding at the
            # scale of the data has the last word and u is as good as it gets.
            break
        u, D, G = u_next, D_next, G_next
    return ST_OK, u, D, G, its, gs


@njit(cache=True)
def _finalize_kernel(a, k, r, u, D, G, af, fs, ag, scratch, use_hint, gs_mode, polish):
    """Resolve Case 2 vs Case 3 and return ``(u_star, l_star, gsearch_calls)``."""
    gs = 0
    if polish and D != 0.0:
        if D > 0.0:
            slope = _slope_right(af, fs, ag, u, G, k, r)
        else:
            slope = _slope_left(af, fs, ag, u, G, k, r)
        if slope < 0.0:
            u2 = u - D / slope
            if np.isfinite(u2) and u2 >= fs[FS_FLO]:
                st, D2, _, G2, _, _, _ = _eval_D(a, af, fs, ag, scratch, u2, k, r, use_hint,
                                                 gs_mode)
                gs += 1
                if st == ST_OK and abs(D2) < abs(D):
                    u, D, G = u2, D2, G2
    fr, cnt, _ = _filter_F(af, fs, u, k, r)
    if cnt == k:
        u = _min_at_or_above(a, af, fs, u)
        fr, _, _ = _filter_F(af, fs, u, k, r)
    return u, fr, gs


@njit(cache=True, fastmath=FAST)
def assemble_into(a, u, l, x):
    """Compiled counterpart of ``core.assemble`` writing into ``x``."""
    lam = u - l
    for i in range(a.size):
        ai = a[i]
        y = l if ai >= l else ai
        x[i] = ai - lam if ai > u else y


@njit(cache=True)
def _eips_kernel(a, k, r, eps, use_hint, gs_mode, case3_exit, polish, x, v, af, spare):
    """Full solve for 2 <= k <= n - 1.

    Writes the projection into ``x`` (except for flag 0, where the caller
    copies ``a``). ``v``, ``af`` and ``spare`` are work buffers of length
    ``n + 1``; the caller allocates them so that large pages can back them.
    Returns ``(status, flag, u_star, l_star, init_iters, pivot_iters,
    exact_iters, gsearch_calls)``.
    """
    n = a.size
    (st, flag, it_init, u_star, l_star, uL, DL, cL, GL, uR, DR, cR, uC, f_lo, u_prev,
     u_cur, nv, gs, GR) = _init_kernel(a, k, r, eps, case3_exit, use_hint, gs_mode, v,
                                   False)
    if st != ST_OK:
        return st, flag, u_star, l_star, it_init, 0, 0, gs
    if flag == FLAG_FEASIBLE:
        return st, flag, u_star, l_star, it_init, 0, 0, gs
    if flag == FLAG_SHORTCUT:
        assemble_into(a, u_star, l_star, x)
        return st, flag, u_star, l_star, it_init, 0, 0, gs

    # The pivot starts with the input itself as a_f (everything >= f_lo,
    # nothing summarised); the first bound move compacts it into af.
    fs = np.zeros(FS_SIZE)
    fs[FS_FLO] = uL if flag == FLAG_LOWER else f_lo
    fs[FS_FHI] = np.inf
    fs[FS_NF] = n
    fs[FS_PLO] = np.inf
    fs[FS_PHI] = np.inf
    trace = np.empty(0)
    if flag == FLAG_BRACKET:
        # a_g: the pool left in v by the search at u_R.
        fs[FS_NG] = nv
        ag, ag_input, scratch = v, False, spare
    else:
        # a_g is the input too; the moves carve out the G block and the pool.
        fs[FS_NG] = n
        ag, ag_input, scratch = a, True, v
    (st, conv, uL, DL, cL, GL, uR, DR, cR, uC, af, ag, scratch, it_piv,
     gs_piv) = _pivot_kernel(a, k, r, eps, uL, DL, cL, GL, uR, DR, cR, GR, uC, a, af, fs, ag,
                             ag_input, scratch, spare, use_hint, gs_mode, 4 * k + 64, trace)
    gs += gs_piv
    if st != ST_OK:
        return st, flag, uL, uR, it_init, it_piv, 0, gs
    it_exact = 0
    if not conv:
        st, uL, DL, GL, it_exact, gs_ex = _exact_kernel(a, k, r, eps, uL, DL, GL, af, fs, ag,
                                                        scratch, use_hint, gs_mode, n)
        gs += gs_ex
        if st != ST_OK:
            return st, flag, uL, DL, it_init, it_piv, it_exact, gs
    u_star, l_star, gs_fin = _finalize_kernel(a, k, r, uL, DL, GL, af, fs, ag, scratch,
                                              use_hint, gs_mode, polish)
    gs += gs_fin
    assemble_into(a, u_star, l_star, x)
    return ST_OK, flag, u_star, l_star, it_init, it_piv, it_exact, gs


# ---------------------------------------------------------------------------
# Python surface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitOutcome:
    """Result of the initialization phase.

    ``u_star``/``l_star`` are set for flags -1 and 0. For flags 1 to 3 the
    bracket ``(u_L, u_R)`` has one finite end with its gap value ``D_L`` or
    ``D_R``, ``u_C`` is the first pivot point and ``pool`` holds the entries
    strictly between ``G_r(u_R)`` and ``u_R`` (flags 1 and 3).
    """

    flag: int
    u_star: float | None
    l_star: float | None
    u_L: float
    u_R: float
    u_C: float
    last_iterates: tuple
    iters: int
    f_lo: float = -np.inf
    D_L: float = np.nan
    D_R: float = np.nan
    G_L: float = np.nan
    G_R: float = np.nan
    count_L: int = 0
    count_R: int = 0
    pool: np.ndarray | None = None
    gsearch_calls: int = 0


@dataclass
class FilterState:
    """Candidate pools of the pivot and exact phases.

    ``a_f`` holds every entry in ``[f_lo, f_hi)`` and nothing at or above
    ``f_hi``; entries at or above ``f_hi`` are summarised by their sum ``B``,
    count ``N`` and the number ``B_ties`` equal to ``f_hi``. ``a_g`` holds
    every entry that can influence G_r(u) for ``u`` inside the bracket,
    except the fixed block: the entries in ``[block_lo, block_hi)``, which
    lie at or above G_r(u) for every ``u >= block_hi`` in the bracket and
    are summarised by their sum, count and the number equal to ``block_lo``.
    """

    a_f: np.ndarray
    a_g: np.ndarray
    B: float
    N: int
    B_ties: int
    f_lo: float
    f_hi: float
    u_LB: float = np.nan
    u_RB: float = np.nan
    block_sum: float = 0.0
    block_count: int = 0
    block_lo: float = np.inf
    block_hi: float = np.inf
    block_ties: int = 0

    def _pack(self, n):
        af = np.empty(n)
        af[: self.a_f.size] = self.a_f
        ag = np.empty(n + 1)
        ag[: self.a_g.size] = self.a_g
        fs = np.empty(FS_SIZE)
        fs[FS_B] = self.B
        fs[FS_N] = self.N
        fs[FS_BTIE] = self.B_ties
        fs[FS_FLO] = self.f_lo
        fs[FS_FHI] = self.f_hi
        fs[FS_NF] = self.a_f.size
        fs[FS_NG] = self.a_g.size
        fs[FS_PSUM] = self.block_sum
        fs[FS_PCNT] = self.block_count
        fs[FS_PLO] = self.block_lo
        fs[FS_PHI] = self.block_hi
        fs[FS_PTIE] = self.block_ties
        return af, ag, fs

    @classmethod
    def _unpack(cls, af, ag, fs, **extra):
        pool = ag[: int(fs[FS_NG])]
        lo, hi = float(fs[FS_PLO]), float(fs[FS_PHI])
        pool = pool[(pool < lo) | (pool >= hi)]
        return cls(
            a_f=af[: int(fs[FS_NF])].copy(),
            a_g=pool.copy(),
            B=float(fs[FS_B]),
            N=int(fs[FS_N]),
            B_ties=int(fs[FS_BTIE]),
            f_lo=float(fs[FS_FLO]),
            f_hi=float(fs[FS_FHI]),
            block_sum=float(fs[FS_PSUM]),
            block_count=int(fs[FS_PCNT]),
            block_lo=lo,
            block_hi=hi,
            block_ties=int(fs[FS_PTIE]),
            **extra,
        )

    def eval_Gr(self, inst, u):
        """G_r(u) from the pools; valid for ``u`` inside the current bracket."""
        af, ag, fs = self._pack(max(inst.n, self.a_f.size, self.a_g.size))
        fr, cnt, _ = _filter_F(af, fs, float(u), inst.k, inst.r)
        G, _, _, st, _ = _gsearch(inst.a, ag, fs, float(u), inst.k - cnt, fr, True,
                                  GS_MODE_SKIP, np.empty(ag.size))
        if cnt > inst.k or st != GS_OK:
            raise DomainError(f"G_r undefined at u={u}")
        return float(G)

    def eval_Fr(self, inst, u):
        """F_r(u) from the pools; valid for ``f_lo <= u <= f_hi``."""
        af, _, fs = self._pack(max(inst.n, self.a_f.size))
        fr, _, _ = _filter_F(af, fs, float(u), inst.k, inst.r)
        return float(fr)


@dataclass(frozen=True)
class PivotOutcome:
    u_L: float
    u_R: float
    u_C: float
    converged: bool
    D_L: float
    G_L: float
    iters: int
    gsearch_calls: int
    filter: FilterState = field(repr=False)
    trace: np.ndarray = field(repr=False, default=None)


def _raise_status(status, what, stats=None):
    msg = f"{what}: {_STATUS_TEXT.get(status, 'unknown failure')}"
    if status in (ST_PIVOT_CAP, ST_EXACT_CAP, ST_INIT_CAP):
        raise InvariantError(msg, stats)
    if status == ST_DOMAIN:
        raise DomainError(msg)
    raise NumericError(msg, stats)


def _check_inner(inst):
    if not 2 <= inst.k <= inst.n - 1:
        raise ParameterError("the iterative phases need 2 <= k <= n - 1")


def initialize(inst, eps=1e-8, config=DEFAULT_CONFIG):
    """Initialization phase of the solver (requires ``2 <= k <= n - 1``)."""
    _check_inner(inst)
    v = np.empty(inst.n + 1)
    (st, flag, it, u_star, l_star, uL, DL, cL, GL, uR, DR, cR, uC, f_lo, u_prev, u_cur, nv,
     gs, GR) = _init_kernel(inst.a, inst.k, inst.r, eps, config.case3_exit, config.fr_hint,
                        config.gs_mode, v, True)
    if st != ST_OK:
        _raise_status(st, "initialize")
    has_star = flag in (FLAG_FEASIBLE, FLAG_SHORTCUT)
    pool = v[:nv].copy() if flag in (FLAG_UPPER, FLAG_BRACKET) else None
    return InitOutcome(
        flag=int(flag),
        u_star=float(u_star) if has_star else None,
        l_star=float(l_star) if has_star else None,
        u_L=float(uL),
        u_R=float(uR),
        u_C=float(uC),
        last_iterates=(float(u_prev), float(u_cur)),
        iters=int(it),
        f_lo=float(f_lo),
        D_L=float(DL),
        D_R=float(DR),
        G_L=float(GL),
        G_R=float(GR),
        count_L=int(cL),
        count_R=int(cR),
        pool=pool,
        gsearch_calls=int(gs),
    )


def build_filter(inst, init):
    """Initial pools for the pivot phase, depending on the flag."""
    if init.flag not in (FLAG_UPPER, FLAG_LOWER, FLAG_BRACKET):
        raise ParameterError(f"no pivot phase for flag {init.flag}")
    n = inst.n
    af = np.empty(n)
    ag = np.empty(n)
    fs = np.empty(FS_SIZE)
    if init.flag == FLAG_LOWER:
        _build_filter(inst.a, init.u_L, np.inf, init.G_L, init.u_L, af, ag, fs)
        return FilterState._unpack(af, ag, fs)
    _build_filter(inst.a, init.f_lo, init.u_R, -np.inf, -np.inf, af, ag, fs)
    fs[FS_NG] = init.pool.size
    return FilterState._unpack(af, init.pool, fs)


def filter_update(fs, event, u_C, Gr_uC=None):
    """Apply a bound tightening to the pools and return the new state.

    ``event`` is ``"tighten_uR"`` (needs ``Gr_uC = G_r(u_C)``) or
    ``"tighten_uL"``. For ``tighten_uL``, passing ``Gr_uC`` also folds the
    entries of ``[G_r(u_C), u_C)`` into the fixed G block.
    """
    n = max(fs.a_f.size, fs.a_g.size, 1)
    af, ag, arr = fs._pack(n)
    u_C = float(u_C)
    if event == "tighten_uR":
        if Gr_uC is None:
            raise ParameterError("tighten_uR needs G_r(u_C)")
        if u_C > fs.f_hi:
            raise InvariantError(f"tighten_uR at {u_C} above the current bound {fs.f_hi}")
        _tighten_R(af, af, arr, u_C)
        keep = ag[: fs.a_g.size]
        keep = keep[(keep > Gr_uC) & (keep < u_C)]
        out = FilterState._unpack(af, ag, arr, u_LB=fs.u_LB, u_RB=fs.u_RB)
        return replace(out, a_g=keep.copy())
    if event == "tighten_uL":
        if u_C < fs.f_lo:
            raise InvariantError(f"tighten_uL at {u_C} below the current bound {fs.f_lo}")
        _tighten_L(af, af, arr, u_C)
        if Gr_uC is not None:
            _grow_block(ag, ag, arr, u_C, float(Gr_uC))
        return FilterState._unpack(af, ag, arr, u_LB=fs.u_LB, u_RB=fs.u_RB)
    raise ParameterError(f"unknown filter event {event!r}")


def pivot_step(inst, init, fs, eps=1e-8, config=DEFAULT_CONFIG):
    """Pivot phase from an initialization outcome and its initial pools."""
    if init.flag not in (FLAG_UPPER, FLAG_LOWER, FLAG_BRACKET):
        raise ParameterError(f"no pivot phase for flag {init.flag}")
    n, k = inst.n, inst.k
    af, ag, arr = fs._pack(n)
    scratch = np.empty(n + 1)
    max_iter = 4 * k + 64
    trace = np.full(2 * max_iter + 2, np.nan)
    (st, conv, uL, DL, cL, GL, uR, DR, cR, uC, af, ag, scratch, its,
     gs) = _pivot_kernel(inst.a, k, inst.r, eps, init.u_L, init.D_L, init.count_L, init.G_L,
                         init.u_R, init.D_R, init.count_R, init.G_R, init.u_C, af, af, arr, ag, False,
                         scratch, scratch, config.fr_hint, config.gs_mode, max_iter, trace)
    if st != ST_OK:
        _raise_status(st, "pivot_step")
    used = min(2 * its, trace.size)
    return PivotOutcome(
        u_L=float(uL),
        u_R=float(uR),
        u_C=float(uC),
        converged=bool(conv),
        D_L=float(DL),
        G_L=float(GL),
        iters=int(its),
        gsearch_calls=int(gs),
        filter=FilterState._unpack(af, ag, arr),
        trace=trace[:used].reshape(-1, 2),
    )


def exact_step(inst, u_L, fs, eps=1e-8, D_L=None, G_L=None, config=DEFAULT_CONFIG):
    """Newton refinement from ``u_L`` on the final piece; returns ``(u, iters)``."""
    n, k, r = inst.n, inst.k, inst.r
    af, ag, arr = fs._pack(n)
    scratch = np.empty(n + 1)
    u_L = float(u_L)
    if D_L is None or G_L is None:
        st, D_L, _, G_L, _, _, _ = _eval_D(inst.a, af, arr, ag, scratch, u_L, k, r,
                                           config.fr_hint, config.gs_mode)
        if st != ST_OK:
            _raise_status(st, "exact_step")
    st, u, D, G, its, gs = _exact_kernel(inst.a, k, r, eps, u_L, float(D_L), float(G_L), af,
                                         arr, ag, scratch, config.fr_hint, config.gs_mode,
                                         n)
    if st != ST_OK:
        _raise_status(st, "exact_step")
    return float(u), int(its)


def project(inst, eps=1e-8, config=DEFAULT_CONFIG):
    """Euclidean projection of ``inst.a`` onto {x : sum of k largest <= r}."""
    if inst.k == 1:
        return project_k1(inst)
    if inst.k == inst.n:
        return project_kn(inst)
    a = inst.a
    n = a.size
    x = np.empty_like(a)
    # numpy maps large buffers lazily, so untouched work space costs nothing.
    v, af, spare = np.empty(n + 1), np.empty(n + 1), np.empty(n + 1)
    st, flag, u_star, l_star, it_i, it_p, it_e, gs = _eips_kernel(
        a, inst.k, inst.r, float(eps), config.fr_hint, config.gs_mode,
        config.case3_exit, config.polish, x, v, af, spare)
    stats = IterationStats(int(it_i), int(it_p), int(it_e), int(gs))
    if st != ST_OK:
        _raise_status(st, "project", stats)
    if flag == FLAG_FEASIBLE:
        # Any common value in [a_[k+1], a_[k]] certifies x = a; use a_[k].
        a_k = kth_largest(a, inst.k)
        return ProjectionSolution(a.copy(), a_k, a_k, FLAG_FEASIBLE, stats)
    return ProjectionSolution(x, float(u_star), float(l_star), int(flag), stats)
