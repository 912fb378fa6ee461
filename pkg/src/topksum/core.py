"""Problem types, top-k utilities, closed-form special cases and the KKT certificate.

The projection problem is

    minimize 0.5 * ||x - a||^2   subject to   sum of the k largest entries of x <= r.

Its solution is described by two thresholds ``u_star >= l_star``: entries of
``a`` above ``u_star`` are shifted down by ``u_star - l_star``, entries inside
``[l_star, u_star]`` are pooled to ``l_star`` and entries below ``l_star`` are
left alone.
"""

from dataclasses import dataclass, field

import numpy as np

# Termination flags reported by the solvers.
FLAG_SHORTCUT = -1  # closed form, Case-3 early exit or the l-only shortcut
FLAG_FEASIBLE = 0  # the input already satisfies the constraint
FLAG_UPPER = 1  # pivot seeded from an upper bound at max(a)
FLAG_LOWER = 2  # pivot seeded from a lower bound
FLAG_BRACKET = 3  # pivot seeded from an upper bound found by the iteration

DEFAULT_TOL = 1e-8


class ParameterError(ValueError):
    """Invalid problem data or parameters."""


class DomainError(ValueError):
    """A function was evaluated outside the region where it is defined."""


class NumericError(ArithmeticError):
    """A degenerate or non-finite quantity appeared during a solve."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class InvariantError(RuntimeError):
    """An internal guarantee was violated; this indicates a bug."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class ProblemInstance:
    """Input vector ``a``, count ``k`` and budget ``r``.

    ``a`` is stored as a contiguous float64 array. Treat it as read-only;
    the compiled kernels share it without copying.
    """

    a: np.ndarray
    k: int
    r: float

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=np.float64)
        if a.ndim != 1:
            raise ParameterError("a must be one-dimensional")
        if a.size < 1:
            raise ParameterError("a must have at least one entry")
        if not np.all(np.isfinite(a)):
            raise ParameterError("a must have finite entries")
        if isinstance(self.k, (bool, np.bool_)) or int(self.k) != self.k:
            raise ParameterError(f"k must be an integer, got {self.k!r}")
        k = int(self.k)
        if not 1 <= k <= a.size:
            raise ParameterError(f"k must satisfy 1 <= k <= n={a.size}, got {k}")
        r = float(self.r)
        if not np.isfinite(r):
            raise ParameterError("r must be finite")
        if not a.flags.writeable:
            a = a.copy()
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "r", r)

    @property
    def n(self):
        return self.a.size


@dataclass
class IterationStats:
    """Iteration counters of one solve.

    ``gsearch_passes`` counts calls of the G-searching routine.
    """

    init_iters: int = 0
    pivot_iters: int = 0
    exact_iters: int = 0
    gsearch_passes: int = 0

    @property
    def total(self):
        return self.init_iters + self.pivot_iters + self.exact_iters

    def within_bounds(self, n, k):
        return (
            self.init_iters <= k
            and self.pivot_iters <= k
            and self.exact_iters <= n
            and self.total <= 2 * k + n
        )


@dataclass(frozen=True)
class ProjectionSolution:
    x: np.ndarray
    u_star: float
    l_star: float
    flag: int
    stats: IterationStats = field(default_factory=IterationStats)

    @property
    def lam(self):
        """Multiplier of the top-k-sum constraint, ``u_star - l_star``."""
        return self.u_star - self.l_star


@dataclass(frozen=True)
class KktCertificate:
    residual_area: float
    residual_budget: float
    set_violations: int
    bounds_ok: bool
    tol: float

    @property
    def passed(self):
        return (
            abs(self.residual_area) <= self.tol
            and abs(self.residual_budget) <= self.tol
            and self.set_violations == 0
            and self.bounds_ok
        )

    def __bool__(self):
        return self.passed


def _check_k(a, k):
    if isinstance(k, (bool, np.bool_)) or int(k) != k or not 1 <= k <= a.size:
        raise ParameterError(f"k must satisfy 1 <= k <= n={a.size}, got {k!r}")
    return int(k)


def top_partition(a, k):
    """Partition ``a`` so that its k largest entries occupy the tail.

    numpy's introselect is quickselect with a median-of-medians fallback,
    so this is linear in the worst case.
    """
    a = np.asarray(a, dtype=np.float64)
    k = _check_k(a, k)
    return np.partition(a, a.size - k)


def kth_largest(a, k):
    """The k-th largest entry of ``a``."""
    part = top_partition(a, k)
    return float(part[part.size - k])


def topk_sum(a, k):
    """Sum of the k largest entries of ``a`` by linear-time selection."""
    part = top_partition(a, k)
    return float(part[part.size - k:].sum())


def assemble(a, u_star, l_star):
    """Build the projection from the two thresholds.

    Entries above ``u_star`` are shifted by ``l_star - u_star``, entries in
    ``[l_star, u_star]`` become ``l_star`` and the rest stay put.
    """
    a = np.asarray(a, dtype=np.float64)
    x = np.where(a >= l_star, l_star, a)
    high = a > u_star
    x[high] = a[high] - (u_star - l_star)
    return x


def project_k1(inst):
    """Closed form for k = 1: clip every entry at r."""
    if inst.k != 1:
        raise ParameterError("project_k1 needs k = 1")
    a, r = inst.a, inst.r
    amax = float(a.max())
    if amax <= r:
        return ProjectionSolution(a.copy(), amax, amax, FLAG_FEASIBLE)
    excess = float(np.maximum(a - r, 0.0).sum())
    return ProjectionSolution(np.minimum(a, r), r + excess, r, FLAG_SHORTCUT)


def project_kn(inst):
    """Closed form for k = n: shift every entry by the same amount."""
    if inst.k != inst.n:
        raise ParameterError("project_kn needs k = n")
    a, r, n = inst.a, inst.r, inst.n
    total = float(a.sum())
    amin = float(a.min())
    if total <= r:
        return ProjectionSolution(a.copy(), amin, amin, FLAG_FEASIBLE)
    shift = (total - r) / n
    return ProjectionSolution(a - shift, amin, amin - shift, FLAG_SHORTCUT)


def verify_kkt(inst, sol, tol=DEFAULT_TOL):
    """Check a solution against the optimality system of the projection.

    Evaluates the area balance between the top-k block and the tail, the
    budget equation, the three-set reconstruction of ``x`` and the ordering
    ``l* <= a_[k] <= u*``. All comparisons use the absolute tolerance ``tol``.
    """
    a, k, r = inst.a, inst.k, inst.r
    n = a.size
    x = np.asarray(sol.x, dtype=np.float64)
    if x.shape != a.shape:
        raise ParameterError(f"solution has length {x.size}, expected {n}")
    u, l = float(sol.u_star), float(sol.l_star)

    part = np.partition(a, n - k)
    top, rest = part[n - k:], part[: n - k]
    a_k = float(part[n - k])
    t_k = float(top.sum())

    area = np.maximum(u - top, 0.0).sum() - np.maximum(rest - l, 0.0).sum()
    budget = np.maximum(a - u, 0.0).sum() + l * k - min(t_k, r)
    expected = assemble(a, u, l)
    bad = int(np.count_nonzero(~(np.abs(x - expected) <= tol)))
    bounds_ok = bool(l <= a_k + tol and a_k <= u + tol and l <= u + tol)
    return KktCertificate(float(area), float(budget), bad, bounds_ok, float(tol))
