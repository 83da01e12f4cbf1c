"""Occupation measures, the constrained LP, and its Lagrangian dual.

The time-state-action measure of a Markov policy is discretized to cell
masses y(k, i, a) >= 0 with unit total per time cell, so that expected costs
are dt * sum c y. Feasible measures of the constrained problem are exactly
the solutions of a dense LP whose flow rows are the explicit-Euler forward
equation; the same discrete problem seen from the multiplier side is a
concave dual maximized by scalarized backward solves, which gives two
independent routes to the constrained optimum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .dp import TimeGrid, scalarize_costs, solve_backward
from .model import CtmdpModel, MarkovPolicy
from . import lp_core

MASS_EPS = 1e-12       # cells below this total mass disintegrate to uniform
CELL_NORM_TOL = 1e-9   # per-cell mass must equal 1 within this


@dataclass(frozen=True)
class OccupationGrid:
    """Nonnegative mass per (time cell, state-action pair), unit per cell.

    The continuous measure of a cell is mass * dt / T; expected costs over
    the full horizon are therefore dt * sum_k sum_ka c[ka] y[k, ka].
    """

    grid: TimeGrid
    masses: np.ndarray  # (n_cells, n_pairs)

    @property
    def n_cells(self) -> int:
        return self.masses.shape[0]

    def state_marginal(self, model: CtmdpModel) -> np.ndarray:
        return np.add.reduceat(self.masses, model.action_offsets[:-1], axis=1)

    def expected_cost(self, model: CtmdpModel, cost_index: int) -> float:
        return float(self.grid.dt * np.sum(self.masses @ model.costs[cost_index]))

    def max_cell_norm_error(self) -> float:
        return float(np.max(np.abs(self.masses.sum(axis=1) - 1.0)))

    def write_csv(self, model: CtmdpModel, path) -> None:
        dim = model.action_points.shape[1]
        nodes = self.grid.nodes
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell", "t", "state"] + [f"a{d}" for d in range(dim)] + ["mass"])
            for k in range(self.n_cells):
                for ka in range(model.n_pairs):
                    writer.writerow(
                        [k, f"{nodes[k]:.12g}", int(model.pair_state[ka])]
                        + [f"{x:.17g}" for x in model.action_points[ka]]
                        + [f"{self.masses[k, ka]:.17g}"])


def _kernel_on_grid(model: CtmdpModel, grid: TimeGrid, policy: MarkovPolicy) -> np.ndarray:
    if policy.n_nodes != grid.n_nodes:
        raise ValueError(f"policy has {policy.n_nodes} nodes, grid has {grid.n_nodes}")
    return policy.kernel(model)


def occupation_of_policy(model: CtmdpModel, grid: TimeGrid,
                         policy: MarkovPolicy) -> OccupationGrid:
    """Discretized occupation measure of a Markov policy.

    Integrates the forward equation p' = Qbar(t)^T p from the initial
    distribution with RK4 (kernel frozen per cell) and sets
    y(k, i, a) = p(i, t_k) * kernel(a | i, t_k).
    """
    grid.check_stability(model)
    kernel = _kernel_on_grid(model, grid, policy)
    starts = model.action_offsets[:-1]
    R = model.rate_rows
    dt = grid.dt

    p = model.initial_dist.astype(float).copy()
    y = np.zeros((grid.n_steps, model.n_pairs))
    for k in range(grid.n_steps):
        row = kernel[k]
        y[k] = p[model.pair_state] * row
        QbT = np.add.reduceat(row[:, None] * R, starts, axis=0).T
        k1 = QbT @ p
        k2 = QbT @ (p + 0.5 * dt * k1)
        k3 = QbT @ (p + 0.5 * dt * k2)
        k4 = QbT @ (p + dt * k3)
        p = p + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        np.maximum(p, 0.0, out=p)
        p /= p.sum()
    return OccupationGrid(grid=grid, masses=y)


def default_test_functions(model: CtmdpModel, grid: TimeGrid,
                           n_time_bins: int = 4) -> list[np.ndarray]:
    """Indicators of (state, time-bin) cells plus the weight and its square."""
    n_cells = grid.n_steps
    edges = np.linspace(0, n_cells, n_time_bins + 1).astype(int)
    out = []
    for i in range(model.n_states):
        for b in range(n_time_bins):
            g = np.zeros((n_cells, model.n_states))
            g[edges[b]:edges[b + 1], i] = 1.0
            out.append(g)
    out.append(np.tile(model.weight, (n_cells, 1)))
    out.append(np.tile(model.weight ** 2, (n_cells, 1)))
    return out


def check_characterization(model: CtmdpModel, grid: TimeGrid, eta: OccupationGrid,
                           test_functions: Sequence[np.ndarray] | None = None) -> float:
    """Max absolute residual of the occupation-measure balance identity.

    For each test table g(i, t) the generator side
    dt * sum_k sum_(i,a) [sum_j G(j,t_k) q(j|i,a)] y(k,i,a), with G the
    tail quadrature of g, must match the marginal side
    dt * sum_k sum_i g(i,t_k) ybar(k,i) - sum_i gamma(i) int g(i,.) dt.
    Measures produced by a consistent forward solve leave O(dt); measures
    that ignore the dynamics do not.
    """
    if eta.n_cells != grid.n_steps:
        raise ValueError("occupation grid does not match the time grid")
    if test_functions is None:
        test_functions = default_test_functions(model, grid)
    dt = grid.dt
    R = model.rate_rows
    marginal = eta.state_marginal(model)
    gamma = model.initial_dist

    worst = 0.0
    for g in test_functions:
        g = np.asarray(g, dtype=float)
        if g.shape != (grid.n_steps, model.n_states):
            raise ValueError(f"test function shape {g.shape}, expected "
                             f"{(grid.n_steps, model.n_states)}")
        tail = dt * np.flip(np.cumsum(np.flip(g, axis=0), axis=0), axis=0)  # G(., t_k)
        lhs = dt * float(np.sum(eta.masses * (tail @ R.T)))
        rhs = dt * float(np.sum(g * marginal)) - float(gamma @ (dt * g.sum(axis=0)))
        worst = max(worst, abs(lhs - rhs))
    return worst


def uniform_occupation(model: CtmdpModel, grid: TimeGrid) -> OccupationGrid:
    """Dynamics-blind uniform mass over every pair: a deliberate counterexample."""
    y = np.full((grid.n_steps, model.n_pairs), 1.0 / model.n_pairs)
    return OccupationGrid(grid=grid, masses=y)


# -- constrained linear program ----------------------------------------------


def lp_column(model: CtmdpModel, grid: TimeGrid, cell: int, pair: int) -> int:
    """Column index of y(cell, pair) in the assembled LP (cell-major layout)."""
    return cell * model.n_pairs + pair


def build_constrained_lp(model: CtmdpModel, grid: TimeGrid) -> lp_core.LpProblem:
    """Assemble the constrained problem as a dense equality-form LP.

    Variables: y(k, i, a) >= 0 cell-major, then one slack per constraint.
    Rows: initial marginal sum_a y(0,i,a) = gamma(i); flow rows
    sum_a y(k+1,j,a) = sum_a y(k,j,a) + dt sum_(i,a) q(j|i,a) y(k,i,a);
    cost rows dt * sum c_n y + x_n = d_n. Objective dt * sum c_0 y.
    """
    if model.n_constraints < 1:
        raise ValueError("constrained LP needs at least one constraint cost")
    grid.check_stability(model)
    n_cells = grid.n_steps
    n_pairs = model.n_pairs
    n_s = model.n_states
    N = model.n_constraints
    dt = grid.dt

    n_cols = n_cells * n_pairs + N
    n_rows = n_cells * n_s + N
    A = np.zeros((n_rows, n_cols))
    b = np.zeros(n_rows)

    # one-hot pair->state map and the one-step Euler kernel delta + dt q
    E = np.zeros((n_s, n_pairs))
    E[model.pair_state, np.arange(n_pairs)] = 1.0
    C = E + dt * model.rate_rows.T  # (n_s, n_pairs): nonneg under the stability cap

    A[:n_s, :n_pairs] = E
    b[:n_s] = model.initial_dist
    for k in range(n_cells - 1):
        rows = slice(n_s + k * n_s, n_s + (k + 1) * n_s)
        A[rows, k * n_pairs:(k + 1) * n_pairs] = -C
        A[rows, (k + 1) * n_pairs:(k + 2) * n_pairs] = E

    for n in range(N):
        r = n_cells * n_s + n
        A[r, :n_cells * n_pairs] = dt * np.tile(model.costs[n + 1], n_cells)
        A[r, n_cells * n_pairs + n] = 1.0
        b[r] = model.constraint_bounds[n]

    c = np.concatenate([dt * np.tile(model.costs[0], n_cells), np.zeros(N)])
    return lp_core.LpProblem(c=c, A_eq=A, b_eq=b)


def _euler_forward_masses(model: CtmdpModel, grid: TimeGrid,
                          action_by_state: np.ndarray) -> np.ndarray:
    """Exact per-cell masses of a stationary deterministic policy under the
    LP's own Euler flow; the LP's flow rows hold with equality for these."""
    n_cells = grid.n_steps
    dt = grid.dt
    ka = model.action_offsets[:-1] + action_by_state
    P = np.eye(model.n_states) + dt * model.rate_rows[ka]  # (n_s, n_s) row-stochastic
    y = np.zeros((n_cells, model.n_pairs))
    p = model.initial_dist.astype(float).copy()
    for k in range(n_cells):
        y[k, ka] = p
        p = P.T @ p
    return y


def _feasibility_hint(model: CtmdpModel, grid: TimeGrid):
    """Basis guess from the policy minimizing the summed constraint costs
    pointwise. Returns None when that policy is not feasible for the LP."""
    con = model.costs[1:].sum(axis=0)
    padded = np.where(model.pad_mask, con[model.pad_index], np.inf)
    act = np.argmin(padded, axis=1)
    y = _euler_forward_masses(model, grid, act)
    costs = grid.dt * (y @ model.costs[1:].T).sum(axis=0)
    if np.any(costs > model.constraint_bounds):
        return None
    n_cells = grid.n_steps
    cols = (np.arange(n_cells)[:, None] * model.n_pairs
            + (model.action_offsets[:-1] + act)[None, :]).ravel()
    slacks = n_cells * model.n_pairs + np.arange(model.n_constraints)
    return np.concatenate([cols, slacks])


class ConstrainedResult(NamedTuple):
    solution: lp_core.LpSolution
    occupation: OccupationGrid | None
    policy: MarkovPolicy | None


def disintegrate(model: CtmdpModel, grid: TimeGrid, masses: np.ndarray) -> MarkovPolicy:
    """Conditional action kernel of a mass table; uniform off the support."""
    n_cells = masses.shape[0]
    marginal = np.add.reduceat(masses, model.action_offsets[:-1], axis=1)
    denom = marginal[:, model.pair_state]
    counts = np.diff(model.action_offsets).astype(float)
    fallback = np.tile((1.0 / counts)[model.pair_state], (n_cells, 1))
    probs = np.where(denom > MASS_EPS, masses / np.where(denom > 0, denom, 1.0), fallback)
    probs = np.vstack([probs, probs[-1]])  # final node repeats the last cell
    # re-normalize exactly so the kernel invariant holds to float precision
    sums = np.add.reduceat(probs, model.action_offsets[:-1], axis=1)
    probs = probs / sums[:, model.pair_state]
    return MarkovPolicy.randomized(probs)


def solve_constrained(model: CtmdpModel, grid: TimeGrid,
                      pivot_cap: int = lp_core.DEFAULT_PIVOT_CAP,
                      use_hint: bool = True) -> ConstrainedResult:
    """Solve the constrained LP and disintegrate the optimal measure.

    A warm-start basis built from the pointwise most-feasible policy is
    tried first (Phase 1 is skipped when it is feasible); the simplex result
    does not depend on the start. Non-optimal LP statuses are passed through
    with empty occupation and policy.
    """
    problem = build_constrained_lp(model, grid)
    hint = _feasibility_hint(model, grid) if use_hint else None
    sol = lp_core.solve_lp(problem, pivot_cap=pivot_cap, basis_hint=hint)
    if sol.status != "optimal":
        return ConstrainedResult(sol, None, None)
    masses = sol.x[:grid.n_steps * model.n_pairs].reshape(grid.n_steps, model.n_pairs)
    masses = np.maximum(masses, 0.0)
    eta = OccupationGrid(grid=grid, masses=masses)
    return ConstrainedResult(sol, eta, disintegrate(model, grid, masses))


# -- Lagrangian dual ----------------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class DualSearchConfig:
    """Search budget and tolerances for maximizing the dual function."""

    u_max_initial: float = 1.0
    expansion_factor: float = 4.0
    max_expansions: int = 30
    u_tol: float = 1e-9
    value_tol: float = 1e-11
    max_evals: int = 400
    max_sweeps: int = 25


@dataclass(frozen=True)
class DualCertificate:
    """Outcome of the dual maximization, with the duality gap report.

    dual_value uses the backward solver stepped with the same explicit-Euler
    scheme the LP's flow rows encode, so weak duality against the LP optimum
    holds by construction and gap measures only search and simplex error.
    dual_value_continuum re-evaluates the maximizer with the RK4 stepping;
    gap_continuum therefore carries the O(dt) discretization of the LP and
    shrinks under grid refinement. h_grid is the dual variable reconstructed
    from the scalarized solve (its tail integrals are taken in closed form,
    which is exact for the reconstruction and keeps the pointwise feasibility
    check free of finite-difference noise).
    """

    multipliers: np.ndarray
    dual_value: float
    dual_value_continuum: float
    primal_value: float | None
    gap: float | None
    gap_continuum: float | None
    samples: tuple
    h_grid: np.ndarray
    h_w2_norm: float
    feasibility_min_slack: float
    feasibility_ok: bool
    status: str
    n_solves: int


def _dual_value_fn(model: CtmdpModel, grid: TimeGrid, integrator: str):
    gamma = model.initial_dist
    d = model.constraint_bounds

    def D(u: np.ndarray) -> float:
        weights = np.concatenate([[1.0], u])
        vg, _ = solve_backward(model, grid, cost_weights=weights, integrator=integrator)
        return float(gamma @ vg.at_start() - u @ d)

    return D


def _golden_max(f, lo: float, hi: float, u_tol: float, budget) -> float:
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > u_tol and budget.left() > 0:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    return x1 if f1 >= f2 else x2


class _Budget:
    def __init__(self, n):
        self.n = n

    def left(self):
        return self.n

    def spend(self):
        self.n -= 1


def _line_max(f, u, direction, cfg, budget) -> np.ndarray:
    """Golden-section maximization of f along u + t*direction, t clipped so
    the multipliers stay nonnegative."""
    direction = np.asarray(direction, dtype=float)
    moving = direction > 0
    t_lo = float(np.max(-u[moving] / direction[moving])) if np.any(moving) else 0.0

    def scalar(t):
        return f(np.maximum(u + t * direction, 0.0))

    t_hi = t_lo + cfg.u_max_initial
    for _ in range(cfg.max_expansions):
        if budget.left() <= 0:
            break
        probe = t_lo + _GOLDEN * (t_hi - t_lo)
        if scalar(t_hi) <= scalar(probe):
            break
        t_hi = t_lo + (t_hi - t_lo) * cfg.expansion_factor
    best = _golden_max(scalar, t_lo, t_hi, cfg.u_tol * max(1.0, t_hi - t_lo), budget)
    if scalar(best) < f(u):
        return u
    return np.maximum(u + best * direction, 0.0)


def lagrangian_dual(model: CtmdpModel, grid: TimeGrid,
                    u_search: DualSearchConfig | None = None,
                    primal_value: float | None = None) -> DualCertificate:
    """Maximize the concave dual over nonnegative multipliers.

    One multiplier uses bracketed golden section; several use projected
    coordinate ascent (each section is one backward solve, and the dual is
    concave, so no subgradient machinery is needed). When the search budget
    runs out the best certificate found so far is returned with status
    "budget_exhausted". The primal value comes from solve_constrained unless
    supplied by the caller.
    """
    N = model.n_constraints
    if N < 1:
        raise ValueError("dual path needs at least one constraint cost")
    cfg = u_search or DualSearchConfig()

    budget = _Budget(cfg.max_evals)
    samples: list[tuple[tuple, float]] = []
    cache: dict[tuple, float] = {}
    d_euler = _dual_value_fn(model, grid, "euler")

    def D(u: np.ndarray) -> float:
        key = tuple(np.round(u, 15))
        if key not in cache:
            budget.spend()
            cache[key] = d_euler(np.asarray(u, dtype=float))
            samples.append((key, cache[key]))
        return cache[key]

    u = np.zeros(N)
    d0 = D(u)
    if N == 1:
        u = _line_max(D, u, np.ones(1), cfg, budget)
        status = "converged" if budget.left() > 0 else "budget_exhausted"
    else:
        # coordinate sweeps plus a joint all-ones probe: the joint direction
        # escapes nonsmooth corners where every single coordinate stalls
        # (e.g. constraints that only pay off together)
        status = "budget_exhausted"
        directions = [np.eye(N)[n] for n in range(N)] + [np.ones(N)]
        for _ in range(cfg.max_sweeps):
            before = D(u)
            for direction in directions:
                if budget.left() <= 0:
                    break
                u = _line_max(D, u, direction, cfg, budget)
            if budget.left() <= 0:
                break
            if D(u) - before <= cfg.value_tol * (1.0 + abs(before)):
                status = "converged"
                break
    if d0 >= D(u):
        u = np.zeros(N)  # slack constraints: the exact maximizer is 0

    dual_value = D(u)
    weights = np.concatenate([[1.0], u])
    vg, _ = solve_backward(model, grid, cost_weights=weights, integrator="rk4")
    dual_continuum = float(model.initial_dist @ vg.at_start()
                           - u @ model.constraint_bounds)

    if primal_value is None:
        result = solve_constrained(model, grid)
        if result.solution.status != "optimal":
            raise RuntimeError(f"constrained LP is {result.solution.status}; "
                               "no primal value to certify against")
        primal_value = result.solution.objective

    # reconstruct the dual variable from the scalarized solve and check the
    # pointwise feasibility inequality of the dual program on every node
    T = model.horizon
    cbar = scalarize_costs(model, weights)
    R = model.rate_rows
    drift = vg.values @ R.T                      # (n_nodes, n_pairs)
    vals = T * (cbar[None, :] + drift)
    mins = np.minimum.reduceat(vals, model.action_offsets[:-1], axis=1)
    h_grid = mins                                 # h(t_k, i) = T * min_a {...}
    slack = vals - h_grid[:, model.pair_state]
    tol = 1e-6 * (model.weight ** 2)[model.pair_state]
    min_slack = float(np.min(slack + tol))        # >= 0 means every point passes
    w2 = model.weight ** 2
    h_w2_norm = float(np.max(np.abs(h_grid) / w2[None, :]))

    return DualCertificate(
        multipliers=u,
        dual_value=dual_value,
        dual_value_continuum=dual_continuum,
        primal_value=primal_value,
        gap=None if primal_value is None else primal_value - dual_value,
        gap_continuum=None if primal_value is None else primal_value - dual_continuum,
        samples=tuple(samples),
        h_grid=h_grid,
        h_w2_norm=h_w2_norm,
        feasibility_min_slack=float(np.min(slack)),
        feasibility_ok=min_slack >= 0.0,
        status=status,
        n_solves=len(cache))
