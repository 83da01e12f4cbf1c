import numpy as np
import pytest

from ctmdp.dp import TimeGrid, solve_backward
from ctmdp.model import CtmdpModel, MarkovPolicy, make_birth_death
from ctmdp.occupation import (DualSearchConfig, build_constrained_lp,
                              check_characterization, default_test_functions,
                              disintegrate, lagrangian_dual, occupation_of_policy,
                              solve_constrained, uniform_occupation)
from ctmdp.sim import mc_value
from oracles import (euler_masses_of_kernel, expm_transient, random_instance,
                     random_policy)


def two_state_chain(horizon=1.0):
    return CtmdpModel.from_tables(
        actions_per_state=[[0.0], [0.0]],
        rates=[[[-1.0, 1.0]], [[1.0, -1.0]]],
        costs=[[[0.0], [1.0]]],
        horizon=horizon, weight=[1.0, 2.0])


def one_state_mixing(d1=1.0):
    """One state, two actions: c0 = (1, 0), c1 = (0, 2), bound d1."""
    return CtmdpModel.from_tables(
        actions_per_state=[[0.0, 1.0]],
        rates=[[[0.0], [0.0]]],
        costs=[[[1.0, 0.0]], [[0.0, 2.0]]],
        horizon=1.0, constraint_bounds=[d1])


class TestOccupationOfPolicy:
    def test_single_state_is_all_mass(self):
        model = CtmdpModel.from_tables([[0.0]], [[[0.0]]], [[[1.0]]], horizon=1.0)
        grid = TimeGrid(1.0, 10)
        eta = occupation_of_policy(model, grid, MarkovPolicy.constant(model, 0, grid.n_nodes))
        assert np.allclose(eta.masses, 1.0)

    def test_two_state_transient_closed_form(self):
        model = two_state_chain()
        grid = TimeGrid(1.0, 1000)
        pol = MarkovPolicy.constant(model, 0, grid.n_nodes)
        eta = occupation_of_policy(model, grid, pol)
        marginal = eta.state_marginal(model)
        exact = (1.0 - np.exp(-2.0 * grid.nodes[:-1])) / 2.0
        assert np.abs(marginal[:, 1] - exact).max() < 1e-6
        # independent matrix-exponential check at a few nodes
        Q = np.array([[-1.0, 1.0], [1.0, -1.0]])
        for k in (0, 250, 999):
            p = expm_transient(Q, model.initial_dist, grid.nodes[k])
            assert np.abs(marginal[k] - p).max() < 1e-6

    def test_cells_stay_normalized(self):
        rng = np.random.default_rng(8)
        model = random_instance(rng, max_states=5, max_actions=3)
        grid = TimeGrid(model.horizon, 150)
        pol = random_policy(rng, model, grid.n_nodes, randomized=True)
        eta = occupation_of_policy(model, grid, pol)
        assert eta.max_cell_norm_error() < 1e-9
        assert np.all(eta.masses >= 0.0)

    def test_expected_cost_matches_monte_carlo(self):
        rng = np.random.default_rng(15)
        for _ in range(3):
            model = random_instance(rng, max_states=4, max_actions=3, horizon=1.0)
            grid = TimeGrid(model.horizon, 400)
            pol = random_policy(rng, model, grid.n_nodes, randomized=True)
            eta = occupation_of_policy(model, grid, pol)
            i0 = int(np.argmax(model.initial_dist))
            delta = np.zeros(model.n_states)
            delta[i0] = 1.0
            pinned = CtmdpModel.from_tables(
                [list(map(tuple, model.actions(i))) for i in range(model.n_states)],
                [[model.rate_rows[model.pair_index(i, a)]
                  for a in range(model.n_actions(i))] for i in range(model.n_states)],
                [[[model.cost(0, i, a) for a in range(model.n_actions(i))]
                  for i in range(model.n_states)]],
                horizon=model.horizon, initial_dist=delta, weight=model.weight)
            eta_pinned = occupation_of_policy(pinned, grid, pol)
            est = mc_value(pinned, pol, i0, 0, 30_000, seed=77)
            assert abs(eta_pinned.expected_cost(pinned, 0) - est.mean) \
                <= 4.0 * est.se + 5e-3


class TestCharacterization:
    def test_constant_test_function_balances_exactly(self):
        model = two_state_chain()
        grid = TimeGrid(1.0, 200)
        eta = occupation_of_policy(model, grid, MarkovPolicy.constant(model, 0, grid.n_nodes))
        const = [np.full((grid.n_steps, model.n_states), 3.7)]
        assert check_characterization(model, grid, eta, const) < 1e-12

    def test_weight_test_function_residual_small(self):
        model = two_state_chain()
        grid = TimeGrid(1.0, 1000)
        eta = occupation_of_policy(model, grid, MarkovPolicy.constant(model, 0, grid.n_nodes))
        w_table = [np.tile(model.weight, (grid.n_steps, 1))]
        assert check_characterization(model, grid, eta, w_table) < 1e-3

    def test_residual_halves_under_refinement(self):
        model = two_state_chain()
        residuals = {}
        for n in (1000, 2000):
            grid = TimeGrid(1.0, n)
            eta = occupation_of_policy(model, grid,
                                       MarkovPolicy.constant(model, 0, grid.n_nodes))
            residuals[n] = check_characterization(model, grid, eta)
        assert residuals[2000] <= 0.6 * residuals[1000]

    def test_adversarial_uniform_measure_is_flagged(self):
        model = two_state_chain()
        grid = TimeGrid(1.0, 1000)
        eta = occupation_of_policy(model, grid, MarkovPolicy.constant(model, 0, grid.n_nodes))
        compliant = check_characterization(model, grid, eta)
        adversarial = check_characterization(model, grid, uniform_occupation(model, grid))
        assert adversarial > 0.05
        assert adversarial > 10.0 * compliant

    def test_lp_measure_residual_shrinks_with_dt(self):
        lam, mu = 1.0, 2.0
        model = make_birth_death(lam, mu, m=2, grid=3,
                                 cost_fns=[lambda i, a1, a2: -float(i),
                                           lambda i, a1, a2: (a1 + lam) / (2 * lam)],
                                 constraint_bounds=[0.3])
        residuals = {}
        for n in (100, 200):
            grid = TimeGrid(1.0, n)
            res = solve_constrained(model, grid)
            assert res.solution.status == "optimal"
            residuals[n] = check_characterization(model, grid, res.occupation)
        assert residuals[100] <= 5.0 * (1.0 / 100)  # residual <= C dt, C ~ O(1)
        assert residuals[200] <= 0.8 * residuals[100]

    def test_shape_mismatch_rejected(self):
        model = two_state_chain()
        grid = TimeGrid(1.0, 10)
        eta = occupation_of_policy(model, grid, MarkovPolicy.constant(model, 0, grid.n_nodes))
        with pytest.raises(ValueError):
            check_characterization(model, grid, eta, [np.zeros((3, 3))])

    def test_default_family_covers_states_and_weights(self):
        model = two_state_chain()
        grid = TimeGrid(1.0, 40)
        fams = default_test_functions(model, grid)
        assert len(fams) == 4 * model.n_states + 2


class TestConstrainedLp:
    def test_one_state_mixing_optimum(self):
        # brute force over the mixing probability p of the free action:
        # constraint 2p <= 1 forces p <= 1/2, objective 1 - p is minimal at 1/2
        model = one_state_mixing(d1=1.0)
        grid = TimeGrid(1.0, 64)
        res = solve_constrained(model, grid)
        assert res.solution.status == "optimal"
        assert res.solution.objective == pytest.approx(0.5, abs=1e-9)
        assert res.occupation.expected_cost(model, 1) == pytest.approx(1.0, abs=1e-9)
        # aggregate action mixture is the brute-force mix (1/2, 1/2); the
        # simplex returns an optimal switching vertex with that aggregate
        mix = res.occupation.masses.mean(axis=0)
        assert np.allclose(mix, [0.5, 0.5], atol=1e-9)

    def test_slack_bound_recovers_unconstrained_value(self):
        model = make_birth_death(1.0, 2.0, m=3, grid=3,
                                 cost_fns=[lambda i, a1, a2: float(i),
                                           lambda i, a1, a2: (a1 + 1.0) / 2.0],
                                 constraint_bounds=[100.0])
        grid = TimeGrid(1.0, 120)
        res = solve_constrained(model, grid)
        euler, _ = solve_backward(model, grid, integrator="euler")
        rk4, _ = solve_backward(model, grid)
        assert res.solution.status == "optimal"
        discrete = float(model.initial_dist @ euler.at_start())
        assert res.solution.objective == pytest.approx(discrete, abs=1e-8)
        assert res.solution.objective == pytest.approx(
            float(model.initial_dist @ rk4.at_start()), abs=5e-3)

    def test_unattainable_bound_is_infeasible(self):
        model = one_state_mixing(d1=-0.1)  # c1 >= 0, so d1 < 0 empties the set
        res = solve_constrained(model, TimeGrid(1.0, 16))
        assert res.solution.status == "infeasible"
        assert res.occupation is None and res.policy is None

    def test_zero_objective_cost(self):
        model = CtmdpModel.from_tables(
            actions_per_state=[[0.0, 1.0]],
            rates=[[[0.0], [0.0]]],
            costs=[[[0.0, 0.0]], [[0.0, 2.0]]],
            horizon=1.0, constraint_bounds=[1.0])
        res = solve_constrained(model, TimeGrid(1.0, 16))
        assert res.solution.objective == pytest.approx(0.0, abs=1e-12)

    def test_flow_rows_encode_euler_propagation(self):
        rng = np.random.default_rng(4)
        model = random_instance(rng, max_states=4, max_actions=2, n_costs=2,
                                horizon=1.0)
        grid = TimeGrid(1.0, 30)
        problem = build_constrained_lp(model, grid)
        kernel = random_policy(rng, model, grid.n_nodes, randomized=True).kernel(model)
        y = euler_masses_of_kernel(model, grid.n_steps, kernel)
        slack = model.constraint_bounds[0] - grid.dt * float((y * model.costs[1]).sum())
        x = np.concatenate([y.ravel(), [slack]])
        assert np.abs(problem.A_eq @ x - problem.b_eq).max() < 1e-10

    def test_feasible_set_is_convex(self):
        model = one_state_mixing(d1=1.5)
        grid = TimeGrid(1.0, 12)
        problem = build_constrained_lp(model, grid)
        pol_a = MarkovPolicy.constant(model, 0, grid.n_nodes).kernel(model)
        pol_b = MarkovPolicy.uniform(model, grid.n_nodes).kernel(model)
        points = []
        for kernel in (pol_a, pol_b):
            y = euler_masses_of_kernel(model, grid.n_steps, kernel)
            slack = 1.5 - grid.dt * float((y * model.costs[1]).sum())
            assert slack >= 0
            points.append(np.concatenate([y.ravel(), [slack]]))
        for lam in (0.0, 0.3, 0.7, 1.0):
            z = lam * points[0] + (1 - lam) * points[1]
            assert np.abs(problem.A_eq @ z - problem.b_eq).max() < 1e-12
            assert np.all(z >= 0)


class TestDisintegration:
    def test_kernel_reproduces_the_lp_point_exactly(self):
        model = one_state_mixing(d1=1.0)
        grid = TimeGrid(1.0, 48)
        res = solve_constrained(model, grid)
        kernel = res.policy.kernel(model)
        y = euler_masses_of_kernel(model, grid.n_steps, kernel)
        assert np.abs(y - res.occupation.masses).max() < 1e-9
        for n in range(model.costs.shape[0]):
            lp_cost = res.occupation.expected_cost(model, n)
            re_cost = grid.dt * float((y * model.costs[n]).sum())
            assert re_cost == pytest.approx(lp_cost, abs=1e-9)

    def test_markov_kernel_reproduces_constraint_costs_on_birth_death(self):
        lam, mu = 1.0, 2.0
        model = make_birth_death(lam, mu, m=3, grid=3,
                                 cost_fns=[lambda i, a1, a2: -float(i),
                                           lambda i, a1, a2: (a1 + lam) / (2 * lam)],
                                 constraint_bounds=[0.3])
        grid = TimeGrid(1.0, 100)
        res = solve_constrained(model, grid)
        assert res.solution.status == "optimal"
        kernel = res.policy.kernel(model)
        y = euler_masses_of_kernel(model, grid.n_steps, kernel)
        for n in range(2):
            assert grid.dt * float((y * model.costs[n]).sum()) == pytest.approx(
                res.occupation.expected_cost(model, n), abs=1e-8)

    def test_rk4_reevaluation_matches_lp_objective_to_first_order(self):
        model = one_state_mixing(d1=1.0)
        grid = TimeGrid(1.0, 200)
        res = solve_constrained(model, grid)
        eta = occupation_of_policy(model, grid, res.policy)
        assert eta.expected_cost(model, 0) == pytest.approx(
            res.solution.objective, abs=2e-2)

    def test_uniform_off_support(self):
        masses = np.zeros((2, 2))
        masses[:, 0] = 1.0  # all mass on action 0, none on action 1's state? one state
        model = one_state_mixing()
        pol = disintegrate(model, TimeGrid(1.0, 2), masses)
        assert np.allclose(pol.action_probs[:2], [[1.0, 0.0], [1.0, 0.0]])
        empty = disintegrate(model, TimeGrid(1.0, 2), np.zeros((2, 2)))
        assert np.allclose(empty.action_probs, 0.5)

    def test_concentrates_on_the_dp_argmin_when_unconstrained(self):
        model = CtmdpModel.from_tables(
            actions_per_state=[[0.0, 1.0], [0.0]],
            rates=[[[-1.0, 1.0], [-1.0, 1.0]], [[1.0, -1.0]]],
            costs=[[[1.0, 0.3], [0.0]], [[0.0, 0.0], [0.0]]],
            horizon=1.0, constraint_bounds=[10.0])
        grid = TimeGrid(1.0, 60)
        res = solve_constrained(model, grid)
        _, policy = solve_backward(model, grid)
        kernel = res.policy.kernel(model)
        marginal = res.occupation.state_marginal(model)
        agree = 0.0
        total = 0.0
        for k in range(grid.n_steps):
            for i in range(model.n_states):
                best = model.pair_index(i, int(policy.action_index[k, i]))
                mass = marginal[k, i]
                total += mass
                if kernel[k, best] > 0.99:
                    agree += mass
        assert agree / total >= 0.99


class TestLagrangianDual:
    def test_one_state_golden_section(self):
        # D(u) = min(1, 2u) - u peaks at u = 1/2 with value 1/2
        model = one_state_mixing(d1=1.0)
        grid = TimeGrid(1.0, 64)
        cert = lagrangian_dual(model, grid)
        assert cert.multipliers[0] == pytest.approx(0.5, abs=1e-6)
        assert cert.dual_value == pytest.approx(0.5, abs=1e-9)
        assert cert.primal_value == pytest.approx(0.5, abs=1e-9)
        assert abs(cert.gap) <= 1e-6
        assert cert.status == "converged"
        assert cert.feasibility_ok

    def test_slack_constraints_zero_multiplier(self):
        model = make_birth_death(1.0, 2.0, m=3, grid=3,
                                 cost_fns=[lambda i, a1, a2: float(i),
                                           lambda i, a1, a2: (a1 + 1.0) / 2.0],
                                 constraint_bounds=[50.0])
        grid = TimeGrid(1.0, 100)
        cert = lagrangian_dual(model, grid)
        assert np.all(cert.multipliers == 0.0)
        euler, _ = solve_backward(model, grid, integrator="euler")
        assert cert.dual_value == pytest.approx(
            float(model.initial_dist @ euler.at_start()), abs=1e-12)
        rk4, _ = solve_backward(model, grid)
        assert cert.dual_value_continuum == pytest.approx(
            float(model.initial_dist @ rk4.at_start()), abs=1e-12)

    def test_lp_certificates_on_the_occupation_program(self):
        lam, mu = 1.0, 2.0
        model = make_birth_death(lam, mu, m=2, grid=3,
                                 cost_fns=[lambda i, a1, a2: -float(i),
                                           lambda i, a1, a2: (a1 + lam) / (2 * lam)],
                                 constraint_bounds=[0.3])
        res = solve_constrained(model, TimeGrid(1.0, 150))
        sol = res.solution
        assert sol.primal_residual <= 1e-7
        assert sol.duality_gap <= 1e-7 * (1.0 + abs(sol.objective))
        assert sol.complementarity <= 1e-7

    def test_primal_dual_agreement_on_a_random_instance(self):
        rng = np.random.default_rng(618)
        base = random_instance(rng, max_states=3, max_actions=2, n_costs=2,
                               horizon=1.0)
        grid = TimeGrid(1.0, 120)
        # pull the bound between the cheapest achievable constraint cost and
        # a loose level so the constraint is feasible and plausibly active
        floor_vg, _ = solve_backward(base, grid, cost_weights=[0.0, 1.0],
                                     integrator="euler")
        floor = float(base.initial_dist @ floor_vg.at_start())
        model = CtmdpModel.from_tables(
            [list(map(tuple, base.actions(i))) for i in range(base.n_states)],
            [[base.rate_rows[base.pair_index(i, a)]
              for a in range(base.n_actions(i))] for i in range(base.n_states)],
            [[[base.cost(n, i, a) for a in range(base.n_actions(i))]
              for i in range(base.n_states)] for n in range(2)],
            horizon=1.0, initial_dist=base.initial_dist, weight=base.weight,
            constraint_bounds=[floor + 0.15])
        res = solve_constrained(model, grid)
        assert res.solution.status == "optimal"
        cert = lagrangian_dual(model, grid, primal_value=res.solution.objective)
        assert cert.gap >= -1e-6
        assert abs(cert.gap) <= 1e-5 * (1.0 + abs(res.solution.objective))

    def test_weak_duality_both_routes(self):
        lam, mu = 1.0, 2.0
        model = make_birth_death(lam, mu, m=2, grid=3,
                                 cost_fns=[lambda i, a1, a2: -float(i),
                                           lambda i, a1, a2: (a1 + lam) / (2 * lam)],
                                 constraint_bounds=[0.3])
        grid = TimeGrid(1.0, 150)
        res = solve_constrained(model, grid)
        cert = lagrangian_dual(model, grid, primal_value=res.solution.objective)
        assert cert.gap >= -1e-6
        assert cert.gap <= 1e-5          # discrete strong duality
        assert cert.gap_continuum >= -1e-6
        assert cert.multipliers[0] > 0.0  # the constraint binds here

    def test_dual_function_is_concave_along_samples(self):
        model = one_state_mixing(d1=1.0)
        grid = TimeGrid(1.0, 32)
        from ctmdp.occupation import _dual_value_fn
        D = _dual_value_fn(model, grid, "euler")
        us = np.linspace(0.0, 2.0, 9)
        vals = np.array([D(np.array([u])) for u in us])
        for a in range(len(us)):
            for b in range(a + 2, len(us)):
                for mid in range(a + 1, b):
                    lam = (us[b] - us[mid]) / (us[b] - us[a])
                    chord = lam * vals[a] + (1 - lam) * vals[b]
                    assert vals[mid] >= chord - 1e-9

    def test_budget_exhaustion_reports_best_found(self):
        model = one_state_mixing(d1=1.0)
        grid = TimeGrid(1.0, 32)
        cfg = DualSearchConfig(max_evals=5)
        cert = lagrangian_dual(model, grid, u_search=cfg)
        assert cert.status == "budget_exhausted"
        assert cert.n_solves <= 7  # the few probes it was allowed

    def test_two_constraints_coordinate_ascent(self):
        # two independent mixing knobs; both constraints bind symmetrically
        model = CtmdpModel.from_tables(
            actions_per_state=[[0.0, 1.0, 2.0]],
            rates=[[[0.0], [0.0], [0.0]]],
            costs=[[[1.0, 0.0, 0.0]], [[0.0, 2.0, 0.0]], [[0.0, 0.0, 2.0]]],
            horizon=1.0, constraint_bounds=[0.5, 0.5])
        grid = TimeGrid(1.0, 32)
        res = solve_constrained(model, grid)
        cert = lagrangian_dual(model, grid, primal_value=res.solution.objective)
        assert res.solution.objective == pytest.approx(0.5, abs=1e-9)
        assert abs(cert.gap) <= 1e-5

    def test_h_grid_feasibility_and_growth(self):
        lam, mu = 1.0, 2.0
        model = make_birth_death(lam, mu, m=4, grid=3,
                                 cost_fns=[lambda i, a1, a2: -float(i),
                                           lambda i, a1, a2: (a1 + lam) / (2 * lam)],
                                 constraint_bounds=[0.3])
        grid = TimeGrid(1.0, 200)
        cert = lagrangian_dual(model, grid)
        assert cert.feasibility_ok
        assert cert.feasibility_min_slack >= -1e-6 * float((model.weight ** 2).max())
        assert np.isfinite(cert.h_w2_norm)
        assert cert.h_grid.shape == (grid.n_nodes, model.n_states)

    def test_needs_a_constraint(self):
        model = two_state_chain()
        with pytest.raises(ValueError):
            lagrangian_dual(model, TimeGrid(1.0, 8))

    def test_infeasible_primal_is_an_error_without_a_value(self):
        model = one_state_mixing(d1=-0.1)
        with pytest.raises(RuntimeError, match="infeasible"):
            lagrangian_dual(model, TimeGrid(1.0, 8))
