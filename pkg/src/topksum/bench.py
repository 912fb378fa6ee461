"""Benchmark harness: instance generation, timed suites, slopes, flag tables and vector files.

Instances follow the usual protocol for this problem: ``a`` uniform on
[0, 1)^n, ``k = max(1, round(tau_k * n))`` and ``r = tau_r * T_(k)(a)``.
"""

import csv
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from .baselines import grid_oracle, sorted_solver
from .core import DEFAULT_TOL, ParameterError, ProblemInstance, topk_sum, verify_kkt
from .eips import project

TAU_K_GRID = (1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
TAU_R_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99, 0.999,
              1.0, 1.01, 1.1, 1.2, 1.5, 2.0)
DESK_N_LIST = (10**3, 10**4, 10**5, 10**6)
DEFAULT_REPS = 20
DEFAULT_SEED = 20240607
SEED_ENV = "TKS_SEED"

# The exhaustive oracle is O(k (n - k)); larger inputs are refused.
GRID_MAX_N = 10_000
# Max-norm agreement required between a solver and the oracle.
ORACLE_TOL = 1e-7

SOLVERS = {"eips": project, "sorted": sorted_solver, "grid": grid_oracle}
SORT_ROW = "sort"

CSV_HEADER = ("n", "k", "tau_k", "tau_r", "algorithm", "seed", "elapsed_ns",
              "init_iters", "pivot_iters", "exact_iters", "flag", "kkt_pass")
TIMING_COLUMNS = ("elapsed_ns",)


class CertificateFailure(RuntimeError):
    """A solver output failed its KKT certificate during a suite."""


class VectorFormatError(ParameterError):
    """A vector file could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def default_seed():
    """The seed from ``TKS_SEED`` if set, else ``DEFAULT_SEED``."""
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return DEFAULT_SEED
    try:
        return int(raw.strip(), 0)
    except ValueError:
        raise ParameterError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# SplitMix64
# ---------------------------------------------------------------------------

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_CHUNK = 1 << 20


def _mix64(z):
    """SplitMix64 finalizer on numpy uint64 arrays (arithmetic wraps mod 2^64)."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def splitmix64(seed, count, start=0):
    """Outputs ``start .. start + count - 1`` of the SplitMix64 stream for ``seed``.

    Output ``i`` is the finalizer applied to ``seed + (i + 1) * GOLDEN_GAMMA``,
    so any slice of the stream can be produced directly.
    """
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    return _mix64(idx * np.uint64(GOLDEN_GAMMA) + np.uint64(int(seed) & MASK64))


def gen_instance(n, seed):
    """``n`` i.i.d. uniform [0, 1) doubles from SplitMix64, top 53 bits per output."""
    if int(n) != n or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    out = np.empty(n)
    for start in range(0, n, _CHUNK):
        m = min(_CHUNK, n - start)
        bits = splitmix64(seed, m, start) >> np.uint64(11)
        out[start:start + m] = bits * 2.0**-53
    return out


def derive_seed(seed, *keys):
    """A 64-bit seed derived from ``seed`` and integer keys, one mixing round per key."""
    z = int(seed) & MASK64
    for key in keys:
        z = int(splitmix64(z ^ (int(key) & MASK64), 1)[0])
    return z


def instance_seed(seed, n, rep):
    """Seed of the ``rep``-th input vector of size ``n``; shared by every tau pair."""
    return derive_seed(seed, n, rep)


# ---------------------------------------------------------------------------
# Grids and records
# ---------------------------------------------------------------------------


def derive_k(n, tau_k):
    return max(1, int(round(tau_k * n)))


@dataclass(frozen=True)
class ExperimentGrid:
    n_list: tuple = DESK_N_LIST
    tau_k_list: tuple = TAU_K_GRID
    tau_r_list: tuple = TAU_R_GRID
    reps: int = DEFAULT_REPS
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        for name in ("n_list", "tau_k_list", "tau_r_list"):
            values = tuple(getattr(self, name))
            if not values:
                raise ParameterError(f"{name} must not be empty")
            object.__setattr__(self, name, values)
        for n in self.n_list:
            if int(n) != n or n < 1:
                raise ParameterError(f"sizes must be positive integers, got {n!r}")
        for tk in self.tau_k_list:
            if not 0.0 < tk <= 1.0:
                raise ParameterError(f"tau_k must lie in (0, 1], got {tk!r}")
        for tr in self.tau_r_list:
            if not (np.isfinite(tr) and tr >= 0.0):
                raise ParameterError(f"tau_r must be finite and >= 0, got {tr!r}")
        if int(self.reps) != self.reps or self.reps < 1:
            raise ParameterError(f"reps must be a positive integer, got {self.reps!r}")
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "reps", int(self.reps))
        object.__setattr__(self, "seed", int(self.seed) & MASK64)

    def cells(self):
        return [(tk, tr) for tk in self.tau_k_list for tr in self.tau_r_list]


@dataclass(frozen=True)
class BenchRecord:
    n: int
    k: int
    tau_k: float
    tau_r: float
    algorithm: str
    seed: int
    elapsed_ns: int
    init_iters: int = 0
    pivot_iters: int = 0
    exact_iters: int = 0
    flag: int | None = None
    kkt_pass: bool | None = None

    def row(self):
        out = []
        for value in astuple(self):
            if value is None:
                out.append("")
            elif isinstance(value, bool):
                out.append("true" if value else "false")
            elif isinstance(value, float):
                out.append(repr(value))
            else:
                out.append(str(value))
        return out


_FIELD_TYPES = {f.name: f.type for f in fields(BenchRecord)}


def _parse_field(name, text):
    if text == "":
        return None
    kind = _FIELD_TYPES[name]
    if kind is str:
        return text
    if kind is float:
        return float(text)
    if name == "kkt_pass":
        return text == "true"
    return int(text)


def write_records(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in records:
            writer.writerow(rec.row())


def read_records(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ParameterError(f"{path}: expected header {','.join(CSV_HEADER)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise VectorFormatError(f"expected {len(CSV_HEADER)} columns", lineno)
            try:
                values = {name: _parse_field(name, text) for name, text in zip(CSV_HEADER, row)}
            except ValueError as exc:
                raise VectorFormatError(str(exc), lineno) from None
            records.append(BenchRecord(**values))
    return records


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def _timed(fn, *args):
    """Run once to warm up, then return (result, elapsed_ns) of a second run."""
    fn(*args)
    t0 = time.perf_counter_ns()
    out = fn(*args)
    return out, max(1, time.perf_counter_ns() - t0)


def _check_algorithms(algorithms, n_max):
    algorithms = sorted(set(algorithms))
    unknown = [a for a in algorithms if a not in SOLVERS]
    if unknown:
        raise ParameterError(f"unknown algorithms {unknown}; choose from {sorted(SOLVERS)}")
    if "grid" in algorithms and n_max > GRID_MAX_N:
        raise ParameterError(f"the grid oracle is limited to n <= {GRID_MAX_N}")
    return algorithms


def run_suite(grid, algorithms=("eips", "sorted"), out=None, tol=DEFAULT_TOL, eps=1e-8,
              progress=None):
    """Time every selected algorithm on every grid point and rep.

    Each record is preceded by an untimed warm-up call. Solver outputs must
    pass ``verify_kkt`` at ``tol``; a failure raises ``CertificateFailure``
    naming the seed and grid point. One ``"sort"`` row per grid point and rep
    times ``np.sort`` alone. Records are written to ``out`` as CSV when given.
    """
    algorithms = _check_algorithms(algorithms, max(grid.n_list))
    records = []
    for n in grid.n_list:
        for rep in range(grid.reps):
            seed = instance_seed(grid.seed, n, rep)
            a = gen_instance(n, seed)
            for tk in grid.tau_k_list:
                k = derive_k(n, tk)
                top = topk_sum(a, k)
                for tr in grid.tau_r_list:
                    inst = ProblemInstance(a, k, tr * top)
                    for name in algorithms:
                        solver = SOLVERS[name]
                        sol, ns = (_timed(solver, inst, eps) if name == "eips"
                                   else _timed(solver, inst))
                        cert = verify_kkt(inst, sol, tol)
                        if not cert.passed:
                            raise CertificateFailure(
                                f"{name} failed the certificate at n={n} k={k} tau_k={tk} "
                                f"tau_r={tr} seed={seed}: {cert}")
                        st = sol.stats
                        records.append(BenchRecord(n, k, tk, tr, name, seed, ns,
                                                   st.init_iters, st.pivot_iters,
                                                   st.exact_iters, sol.flag, True))
                    _, ns = _timed(np.sort, a)
                    records.append(BenchRecord(n, k, tk, tr, SORT_ROW, seed, ns))
                    if progress is not None:
                        progress(records[-1])
    if out is not None:
        write_records(records, out)
    return records


def estimate_slope(records, n_min=None):
    """OLS slope of log(mean elapsed) against log(n) over records of one cell."""
    by_n = {}
    for rec in records:
        if n_min is None or rec.n >= n_min:
            by_n.setdefault(rec.n, []).append(rec.elapsed_ns)
    if len(by_n) < 3:
        raise ParameterError(f"need at least 3 distinct sizes, got {len(by_n)}")
    sizes = np.array(sorted(by_n), dtype=float)
    means = np.array([np.mean(by_n[n]) for n in sorted(by_n)])
    slope, _ = np.polyfit(np.log(sizes), np.log(means), 1)
    return float(slope)


def slope_table(records, algorithm="eips", n_min=None):
    """Slope per (tau_k, tau_r) cell with at least 3 sizes, in first-seen order."""
    cells = {}
    for rec in records:
        if rec.algorithm == algorithm:
            cells.setdefault((rec.tau_k, rec.tau_r), []).append(rec)
    table = {}
    for cell, recs in cells.items():
        try:
            table[cell] = estimate_slope(recs, n_min)
        except ParameterError:
            continue
    return table


def flag_stats(records, tau_k_list=None, tau_r_list=None, algorithm="eips"):
    """Mean flag per (tau_k, tau_r); cells without records map to None.

    Without explicit lists the cells are the tau values present in the records.
    """
    sums = {}
    for rec in records:
        if rec.algorithm == algorithm and rec.flag is not None:
            sums.setdefault((rec.tau_k, rec.tau_r), []).append(rec.flag)
    if tau_k_list is None:
        tau_k_list = sorted({cell[0] for cell in sums})
    if tau_r_list is None:
        tau_r_list = sorted({cell[1] for cell in sums})
    table = {}
    for tk in tau_k_list:
        for tr in tau_r_list:
            flags = sums.get((tk, tr))
            table[(tk, tr)] = float(np.mean(flags)) if flags else None
    return table


def write_flag_table(table, path):
    """Long-format CSV ``tau_k,tau_r,mean_flag``; missing cells stay empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("tau_k", "tau_r", "mean_flag"))
        for (tk, tr), mean in table.items():
            writer.writerow((repr(tk), repr(tr), "" if mean is None else repr(mean)))


# ---------------------------------------------------------------------------
# Correctness corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusCase:
    index: int
    n: int
    tau_k: float
    tau_r: float
    seed: int
    a: np.ndarray = field(repr=False)

    def instance(self):
        k = derive_k(self.n, self.tau_k)
        return ProblemInstance(self.a, k, self.tau_r * topk_sum(self.a, k))


def correctness_corpus(count, seed, n_lo=5, n_hi=200, tau_k_list=TAU_K_GRID,
                       tau_r_list=TAU_R_GRID):
    """``count`` cases cycling through every (tau_k, tau_r) pair with n drawn
    uniformly from ``n_lo..n_hi``."""
    cells = [(tk, tr) for tk in tau_k_list for tr in tau_r_list]
    for i in range(count):
        case_seed = derive_seed(seed, i)
        n = n_lo + int(splitmix64(case_seed, 1, 1 << 32)[0] % np.uint64(n_hi - n_lo + 1))
        tk, tr = cells[i % len(cells)]
        yield CorpusCase(i, n, tk, tr, case_seed, gen_instance(n, case_seed))


def check_case(case, tol=DEFAULT_TOL):
    """Compare ``project`` with the grid oracle; returns a failure message or None."""
    inst = case.instance()
    sol = project(inst)
    ref = grid_oracle(inst)
    diff = float(np.abs(sol.x - ref.x).max())
    cert = verify_kkt(inst, sol, tol)
    if diff > ORACLE_TOL or not cert.passed:
        return (f"case {case.index} (n={case.n} tau_k={case.tau_k} tau_r={case.tau_r} "
                f"seed={case.seed}): max diff {diff:.3e}, {cert}")
    return None


def _check_batch(cases, tol):
    return [msg for msg in (check_case(c, tol) for c in cases) if msg is not None]


def verify_suite(count, seed, n_lo=5, n_hi=200, tol=DEFAULT_TOL, workers=1):
    """Run the oracle comparison over the correctness corpus.

    With ``workers > 1`` the cases are split across processes; this suite is
    untimed, so parallelism cannot disturb measurements.
    """
    cases = list(correctness_corpus(count, seed, n_lo, n_hi))
    if workers <= 1:
        return _check_batch(cases, tol)
    batches = [cases[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = pool.map(_check_batch, batches, [tol] * workers)
    return sorted((msg for batch in results for msg in batch),
                  key=lambda m: int(m.split()[1]))


# ---------------------------------------------------------------------------
# Vector files
# ---------------------------------------------------------------------------

BINARY_MAGIC = b"TKSVEC01"
_LENGTH = struct.Struct("<Q")


def write_vector(path, x, fmt="text"):
    """Write ``x`` as text (one shortest round-trip decimal per line) or binary."""
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if fmt == "text":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("".join(f"{v!r}\n" for v in x.tolist()))
    elif fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(_LENGTH.pack(x.size))
            fh.write(x.astype("<f8", copy=False).tobytes())
    else:
        raise ParameterError(f"unknown vector format {fmt!r}")


def read_vector(path):
    """Read a vector file, detecting the binary format by its magic bytes."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(BINARY_MAGIC):
        head = len(BINARY_MAGIC) + _LENGTH.size
        if len(data) < head:
            raise VectorFormatError("truncated binary header")
        (count,) = _LENGTH.unpack_from(data, len(BINARY_MAGIC))
        if len(data) != head + 8 * count:
            raise VectorFormatError(f"binary payload holds {len(data) - head} bytes, "
                                    f"expected {8 * count}")
        return np.frombuffer(data, dtype="<f8", offset=head).astype(np.float64)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise VectorFormatError(f"not UTF-8 text: {exc}") from None
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        try:
            values.append(float(body))
        except ValueError:
            raise VectorFormatError(f"cannot parse {body!r} as a number", lineno) from None
    return np.array(values, dtype=np.float64)
