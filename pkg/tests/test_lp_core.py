import numpy as np
import pytest

from ctmdp.lp_core import LpProblem, solve_lp, write_lp_format
from oracles import lp_vertex_optimum


class TestBasics:
    def test_pinned_variable(self):
        sol = solve_lp(LpProblem(c=[1.0], A_eq=[[1.0]], b_eq=[1.0]))
        assert sol.status == "optimal"
        assert sol.x[0] == pytest.approx(1.0, abs=1e-12)
        assert sol.objective == pytest.approx(1.0, abs=1e-12)

    def test_simplex_edge(self):
        sol = solve_lp(LpProblem(c=[-1.0, -1.0], A_ub=[[1.0, 1.0]], b_ub=[1.0]))
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(-1.0, abs=1e-12)
        assert sol.x[0] == pytest.approx(1.0) and sol.x[1] == pytest.approx(0.0)

    def test_infeasible_is_a_status_not_an_error(self):
        sol = solve_lp(LpProblem(c=[1.0], A_eq=[[1.0], [1.0]], b_eq=[1.0, 2.0]))
        assert sol.status == "infeasible"
        assert sol.x is None and sol.objective is None

    def test_unbounded_is_a_status(self):
        sol = solve_lp(LpProblem(c=[-1.0], A_ub=[[-1.0]], b_ub=[0.0]))
        assert sol.status == "unbounded"

    def test_pivot_cap_reports(self):
        rng = np.random.default_rng(0)
        A = rng.uniform(0, 1, size=(6, 12))
        sol = solve_lp(LpProblem(c=-np.ones(12), A_ub=A, b_ub=np.ones(6)),
                       pivot_cap=1)
        assert sol.status == "pivot_limit"

    def test_empty_constraint_blocks(self):
        assert solve_lp(LpProblem(c=[1.0, 2.0])).objective == 0.0
        assert solve_lp(LpProblem(c=[-1.0])).status == "unbounded"

    def test_beale_cycling_instance_terminates(self):
        # classic degenerate instance that cycles without an anti-cycling rule
        c = [-0.75, 150.0, -0.02, 6.0]
        A_ub = [[0.25, -60.0, -0.04, 9.0],
                [0.5, -90.0, -0.02, 3.0],
                [0.0, 0.0, 1.0, 0.0]]
        sol = solve_lp(LpProblem(c=c, A_ub=A_ub, b_ub=[0.0, 0.0, 1.0]))
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(-0.05, abs=1e-9)

    def test_redundant_rows_are_dropped(self):
        # second row duplicates the first: Phase 1 has to delete it
        sol = solve_lp(LpProblem(c=[1.0, 1.0],
                                 A_eq=[[1.0, 1.0], [2.0, 2.0]],
                                 b_eq=[1.0, 2.0]))
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.0, abs=1e-10)
        assert sol.y is not None and sol.y.size == 2


def random_bounded_lp(rng):
    """Random LP with a bounding box so the optimum is finite."""
    n = int(rng.integers(2, 6))
    m_eq = int(rng.integers(0, 3))
    m_ub = int(rng.integers(1, 4))
    x_feas = rng.uniform(0.2, 1.0, size=n)
    A_eq = rng.uniform(-1, 1, size=(m_eq, n))
    b_eq = A_eq @ x_feas
    A_ub = np.vstack([rng.uniform(-1, 1, size=(m_ub, n)), np.ones((1, n))])
    b_ub = np.concatenate([A_ub[:-1] @ x_feas + rng.uniform(0.05, 1.0, size=m_ub),
                           [float(x_feas.sum() + rng.uniform(0.5, 2.0))]])
    c = rng.uniform(-1, 1, size=n)
    return LpProblem(c=c, A_eq=A_eq if m_eq else None, b_eq=b_eq if m_eq else None,
                     A_ub=A_ub, b_ub=b_ub)


class TestAgainstVertexOracle:
    def test_thirty_random_instances(self):
        rng = np.random.default_rng(2024)
        solved = 0
        while solved < 30:
            problem = random_bounded_lp(rng)
            status, obj, _ = lp_vertex_optimum(
                problem.c,
                problem.A_eq if problem.b_eq.size else None,
                problem.b_eq if problem.b_eq.size else None,
                problem.A_ub, problem.b_ub)
            sol = solve_lp(problem)
            assert sol.status == status == "optimal"
            assert sol.objective == pytest.approx(obj, abs=1e-7)
            solved += 1

    def test_infeasible_detection_matches_oracle(self):
        # x1 + x2 = -1 with x >= 0 is infeasible
        status, _, _ = lp_vertex_optimum([1.0, 1.0], [[1.0, 1.0]], [-1.0])
        sol = solve_lp(LpProblem(c=[1.0, 1.0], A_eq=[[1.0, 1.0]], b_eq=[-1.0]))
        assert status == sol.status == "infeasible"


class TestOptimalityCertificates:
    def test_invariants_on_random_instances(self):
        rng = np.random.default_rng(77)
        for _ in range(25):
            sol = solve_lp(random_bounded_lp(rng))
            assert sol.status == "optimal"
            assert sol.primal_residual <= 1e-7
            assert sol.duality_gap <= 1e-7 * (1.0 + abs(sol.objective))
            assert sol.complementarity <= 1e-7
            assert np.all(sol.x >= -1e-9)

    def test_ub_duals_are_nonpositive(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            problem = random_bounded_lp(rng)
            sol = solve_lp(problem)
            n_eq = problem.b_eq.size
            assert np.all(sol.y[n_eq:] <= 1e-9)

    def test_basis_hint_shortens_the_run(self):
        # pinned system: the identity basis is feasible and optimal
        n = 8
        A = np.eye(n)
        b = np.ones(n)
        c = np.arange(1.0, n + 1.0)
        with_hint = solve_lp(LpProblem(c=c, A_eq=A, b_eq=b),
                             basis_hint=np.arange(n))
        assert with_hint.status == "optimal" and with_hint.n_pivots == 0
        bad_hint = solve_lp(LpProblem(c=c, A_eq=A, b_eq=b),
                            basis_hint=np.zeros(n, dtype=int))  # singular: ignored
        assert bad_hint.status == "optimal"
        assert bad_hint.objective == pytest.approx(with_hint.objective, abs=1e-10)


class TestLpFormatExport:
    def test_file_mentions_every_block(self, tmp_path):
        problem = LpProblem(c=[1.0, -2.0], A_eq=[[1.0, 1.0]], b_eq=[1.0],
                            A_ub=[[1.0, 0.0]], b_ub=[0.75])
        path = tmp_path / "problem.lp"
        write_lp_format(problem, path)
        text = path.read_text()
        for token in ("Minimize", "Subject To", "eq0:", "ub0:", "Bounds", "End"):
            assert token in text
