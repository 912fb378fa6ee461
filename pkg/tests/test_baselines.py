import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_projection, topk_by_sort
from topksum.baselines import grid_oracle, sorted_solver
from topksum.bench import correctness_corpus
from topksum.core import FLAG_FEASIBLE, ProblemInstance, verify_kkt
from topksum.eips import project


class TestGridOracle:
    def test_worked_example(self):
        sol, cand = grid_oracle(ProblemInstance([4, 3, 1], 2, 5), return_candidate=True)
        assert (cand.k0, cand.k1) == (1, 2)
        assert (cand.u, cand.l) == pytest.approx((3.0, 2.0))
        np.testing.assert_allclose(sol.x, [3, 2, 1])

    def test_pooled_example(self):
        sol, cand = grid_oracle(ProblemInstance([5, 4, 4, 0], 2, 4), return_candidate=True)
        assert (cand.k0, cand.k1) == (0, 3)
        assert (cand.u, cand.l) == pytest.approx((5.5, 2.0))
        np.testing.assert_allclose(sol.x, [2, 2, 2, 0])

    def test_feasible_input_skips_enumeration(self):
        sol, cand = grid_oracle(ProblemInstance([4, 3, 1], 2, 7), return_candidate=True)
        assert cand is None and sol.flag == FLAG_FEASIBLE
        np.testing.assert_array_equal(sol.x, [4, 3, 1])

    def test_candidate_order_conditions(self, rng):
        for _ in range(200):
            n = int(rng.integers(3, 40))
            a = rng.uniform(0, 1, n)
            k = int(rng.integers(1, n))
            inst = ProblemInstance(a, k, rng.uniform(0, 1) * topk_by_sort(a, k))
            _, cand = grid_oracle(inst, return_candidate=True)
            s = np.concatenate(([np.inf], np.sort(a)[::-1], [-np.inf]))
            assert s[cand.k0] > cand.u >= s[cand.k0 + 1] - 1e-12
            assert s[cand.k1] >= cand.l - 1e-12 and cand.l > s[cand.k1 + 1]
            assert cand.l <= s[k] + 1e-12 <= cand.u + 2e-12

    def test_unique_candidate_distinct_entries(self, rng):
        """Exactly one (k0, k1) pair is consistent when entries are distinct."""
        for _ in range(100):
            n = int(rng.integers(3, 25))
            a = rng.uniform(0, 1, n)
            k = int(rng.integers(1, n))
            r = rng.uniform(0, 1) * topk_by_sort(a, k)
            s = np.sort(a)[::-1]
            ext = np.concatenate(([np.inf], s, [-np.inf]))
            prefix = np.concatenate(([0.0], np.cumsum(s)))
            hits = 0
            for k0 in range(k):
                for k1 in range(k, n + 1):
                    A = np.array([[-k0, k], [k - k0, k1 - k]], dtype=float)
                    u, l = np.linalg.solve(A, [r - prefix[k0], prefix[k1] - prefix[k0]])
                    tol = 1e-12
                    if (ext[k0] > u >= ext[k0 + 1] - tol and ext[k1] >= l - tol
                            and l > ext[k1 + 1] and l <= s[k - 1] + tol <= u + 2 * tol):
                        hits += 1
            assert hits == 1

    @given(st.lists(st.integers(-4, 4), min_size=2, max_size=20), st.data())
    def test_matches_brute_force(self, values, data):
        a = np.array(values, dtype=float)
        k = data.draw(st.integers(1, a.size))
        r = data.draw(st.floats(-10, 10))
        inst = ProblemInstance(a, k, r)
        sol = grid_oracle(inst)
        np.testing.assert_allclose(sol.x, brute_force_projection(a, k, r), atol=1e-9)
        assert verify_kkt(inst, sol).passed


class TestSortedSolver:
    def test_worked_example(self):
        np.testing.assert_allclose(sorted_solver(ProblemInstance([4, 3, 1], 2, 5)).x,
                                   [3, 2, 1])

    def test_sorted_input(self, rng):
        a = rng.uniform(0, 1, 300)
        inst = ProblemInstance(a, 30, 5.0)
        desc = ProblemInstance(np.sort(a)[::-1], 30, 5.0)
        np.testing.assert_array_equal(np.sort(sorted_solver(inst).x)[::-1],
                                      sorted_solver(desc).x)

    def test_matches_grid_oracle(self):
        for case in correctness_corpus(1000, 7, 5, 500):
            inst = case.instance()
            np.testing.assert_allclose(sorted_solver(inst).x, grid_oracle(inst).x, atol=1e-9)

    @given(st.lists(st.integers(-4, 4), min_size=2, max_size=30), st.data())
    def test_duplicates(self, values, data):
        a = np.array(values, dtype=float)
        k = data.draw(st.integers(1, a.size))
        r = data.draw(st.floats(-10, 10))
        inst = ProblemInstance(a, k, r)
        np.testing.assert_allclose(sorted_solver(inst).x, grid_oracle(inst).x, atol=1e-9)

    def test_large_certificate(self, rng):
        a = rng.uniform(0, 1, 1_000_000)
        inst = ProblemInstance(a, 100_000, 0.5 * topk_by_sort(a, 100_000))
        assert verify_kkt(inst, sorted_solver(inst)).passed


class TestPairwiseAgreement:
    def test_three_solvers(self):
        for case in correctness_corpus(300, 11, 5, 200):
            inst = case.instance()
            ref = grid_oracle(inst)
            for sol in (project(inst), sorted_solver(inst)):
                np.testing.assert_allclose(sol.x, ref.x, atol=1e-7)
                assert verify_kkt(inst, sol).passed
