"""Backward solution of the finite-horizon optimality equation.

The value function g(i, s) satisfies -dg/ds = min_a { c(i,a) + sum_j g(j,s)
q(j|i,a) } with g(., T) = 0. We integrate backward on a uniform node grid
with classic RK4, re-resolving the min at every stage, and read the argmin
off each node to get a deterministic Markov policy. A fixed policy is
evaluated by the same integrator with the min replaced by the policy kernel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import CtmdpModel, DriftCertificate, MarkovPolicy

STABILITY_CAP = 0.5  # dt * max_i q*(i) must stay below this


class GridStabilityError(RuntimeError):
    """Time step too coarse for the model's fastest exit rate."""

    def __init__(self, n_steps: int, required: int):
        self.required_n_steps = required
        super().__init__(
            f"n_steps={n_steps} violates the stability cap; use n_steps >= {required}")


class NumericsError(RuntimeError):
    """Non-finite values appeared during integration."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_{n_steps} = T."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_nodes)

    def required_steps(self, model: CtmdpModel) -> int:
        return max(1, math.ceil(self.horizon * model.max_q_star / STABILITY_CAP))

    def check_stability(self, model: CtmdpModel) -> None:
        if self.dt * model.max_q_star > STABILITY_CAP:
            raise GridStabilityError(self.n_steps, self.required_steps(model))


@dataclass(frozen=True)
class ValueGrid:
    """Value table g(i, t_k), one row per node."""

    grid: TimeGrid
    values: np.ndarray  # (n_nodes, n_states)

    def at_start(self) -> np.ndarray:
        """g(., 0), the finite-horizon values from time zero."""
        return self.values[0]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["state", "t", "value"])
            nodes = self.grid.nodes
            for i in range(self.values.shape[1]):
                for k in range(self.values.shape[0]):
                    writer.writerow([i, f"{nodes[k]:.12g}", f"{self.values[k, i]:.17g}"])


def write_policy_csv(model: CtmdpModel, grid: TimeGrid, policy: MarkovPolicy, path) -> None:
    """Rows (state, t_k, action components) for a deterministic policy."""
    if policy.kind != "deterministic":
        raise ValueError("CSV export is for deterministic policies")
    dim = model.action_points.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "t"] + [f"a{d}" for d in range(dim)])
        nodes = grid.nodes
        for i in range(model.n_states):
            for k in range(policy.n_nodes):
                point = model.action_points[model.pair_index(i, int(policy.action_index[k, i]))]
                writer.writerow([i, f"{nodes[k]:.12g}"] + [f"{x:.17g}" for x in point])


def scalarize_costs(model: CtmdpModel, cost_weights=None) -> np.ndarray:
    """Combine the cost tables with nonnegative weights (default: c_0 alone)."""
    if cost_weights is None:
        weights = np.zeros(model.costs.shape[0])
        weights[0] = 1.0
    else:
        weights = np.asarray(cost_weights, dtype=float)
        if weights.shape != (model.costs.shape[0],):
            raise ValueError(f"need {model.costs.shape[0]} cost weights")
        if np.any(weights < 0):
            raise ValueError("cost weights must be nonnegative")
    return weights @ model.costs


def _min_operator(model: CtmdpModel, cbar: np.ndarray):
    """Return f(g) -> per-state min of c(i,a) + q(.|i,a) . g, plus argmins."""
    R = model.rate_rows
    pad, mask = model.pad_index, model.pad_mask

    def f(g: np.ndarray):
        vals = cbar + R @ g
        padded = np.where(mask, vals[pad], np.inf)
        local = np.argmin(padded, axis=1)  # first minimum: lowest action index
        idx = np.arange(padded.shape[0])
        return padded[idx, local], local

    return f


def solve_backward(model: CtmdpModel, grid: TimeGrid, cost_weights=None,
                   integrator: str = "rk4") -> tuple[ValueGrid, MarkovPolicy]:
    """Integrate the optimality equation backward; return value and argmin policy.

    The argmin is re-resolved at every RK4 stage and recorded at each node
    from a final evaluation on that node's value vector (ties break to the
    lowest action index). ``integrator='euler'`` switches to a single forward
    Euler stage per step; the occupation-measure LP is the discrete dual of
    exactly that scheme, so its Lagrangian probes use it for a matched pair.
    """
    grid.check_stability(model)
    cbar = scalarize_costs(model, cost_weights)
    f = _min_operator(model, cbar)
    dt = grid.dt

    g = np.zeros((grid.n_nodes, model.n_states))
    policy = np.zeros((grid.n_nodes, model.n_states), dtype=np.int64)
    _, policy[grid.n_steps] = f(g[grid.n_steps])

    with np.errstate(over="ignore", invalid="ignore"):  # caught by isfinite below
        for k in range(grid.n_steps - 1, -1, -1):
            y = g[k + 1]
            if integrator == "rk4":
                k1, _ = f(y)
                k2, _ = f(y + 0.5 * dt * k1)
                k3, _ = f(y + 0.5 * dt * k2)
                k4, _ = f(y + dt * k3)
                g[k] = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            elif integrator == "euler":
                k1, _ = f(y)
                g[k] = y + dt * k1
            else:
                raise ValueError(f"unknown integrator {integrator!r}")
            if not np.all(np.isfinite(g[k])):
                raise NumericsError(f"non-finite value at node {k} (t={k * dt:.6g})")
            _, policy[k] = f(g[k])

    return ValueGrid(grid=grid, values=g), MarkovPolicy.deterministic(policy)


def _policy_step_tables(model: CtmdpModel, kernel_row: np.ndarray, cost_row: np.ndarray):
    """Aggregate one kernel row into a mean cost vector and mean generator."""
    starts = model.action_offsets[:-1]
    cb = np.add.reduceat(kernel_row * cost_row, starts)
    Qb = np.add.reduceat(kernel_row[:, None] * model.rate_rows, starts, axis=0)
    return cb, Qb


def evaluate_policy(model: CtmdpModel, grid: TimeGrid, policy: MarkovPolicy,
                    cost_index: int = 0, integrator: str = "rk4") -> ValueGrid:
    """Backward evaluation of a fixed Markov policy for one cost table.

    Same stepping as solve_backward with the min replaced by the policy's
    kernel average; randomized kernels average both cost and generator. The
    policy must live on this grid's nodes.
    """
    grid.check_stability(model)
    if policy.n_nodes != grid.n_nodes:
        raise ValueError(f"policy has {policy.n_nodes} nodes, grid has {grid.n_nodes}")
    if not 0 <= cost_index < model.costs.shape[0]:
        raise ValueError(f"no cost table {cost_index}")
    kernel = policy.kernel(model)
    cost_row = model.costs[cost_index]
    dt = grid.dt

    g = np.zeros((grid.n_nodes, model.n_states))
    with np.errstate(over="ignore", invalid="ignore"):  # caught by isfinite below
        for k in range(grid.n_steps - 1, -1, -1):
            cb, Qb = _policy_step_tables(model, kernel[k], cost_row)
            y = g[k + 1]
            if integrator == "rk4":
                k1 = cb + Qb @ y
                k2 = cb + Qb @ (y + 0.5 * dt * k1)
                k3 = cb + Qb @ (y + 0.5 * dt * k2)
                k4 = cb + Qb @ (y + dt * k3)
                g[k] = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            elif integrator == "euler":
                g[k] = y + dt * (cb + Qb @ y)
            else:
                raise ValueError(f"unknown integrator {integrator!r}")
            if not np.all(np.isfinite(g[k])):
                raise NumericsError(f"non-finite value at node {k} (t={k * dt:.6g})")

    return ValueGrid(grid=grid, values=g)


@dataclass(frozen=True)
class EnvelopeReport:
    """Per-state growth envelope check for a value table."""

    bound: np.ndarray      # (n_states,) envelope M_eff T [e^{rho1 T} w + ...]
    max_ratio: float       # max |g| / bound over all nodes and states
    n_violations: int      # nodes*states where |g| > bound (1 + rel_slack)

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def value_envelope(model: CtmdpModel, certificate: DriftCertificate,
                   cost_weights=None) -> np.ndarray:
    """Growth envelope for values of the (scalarized) cost on this horizon."""
    weights_sum = 1.0 if cost_weights is None else float(np.sum(cost_weights))
    rho1, b1, T = certificate.rho1, certificate.b1, model.horizon
    m_eff = certificate.M * weights_sum
    return m_eff * T * (math.exp(rho1 * T) * model.weight
                        + (b1 / rho1) * (math.exp(rho1 * T) - 1.0))


def check_value_envelope(model: CtmdpModel, certificate: DriftCertificate,
                         value_grid: ValueGrid, cost_weights=None,
                         rel_slack: float = 1e-6) -> EnvelopeReport:
    """Assert |g(i, t_k)| stays inside the certified envelope at every node."""
    bound = value_envelope(model, certificate, cost_weights)
    magnitude = np.abs(value_grid.values)
    violations = magnitude > bound[None, :] * (1.0 + rel_slack)
    ratios = magnitude / np.where(bound > 0.0, bound, 1.0)[None, :]
    return EnvelopeReport(bound=bound,
                          max_ratio=float(ratios.max()),
                          n_violations=int(np.count_nonzero(violations)))


def truncation_error_bound(model: CtmdpModel, certificate: DriftCertificate) -> float:
    """Markov-inequality estimate of value mass beyond the truncation level.

    Scales the horizon-T mean-weight envelope by 1/m; reported, not enforced.
    Returns 0 for zero-cost models and decays like 1/m as the truncation grows.
    """
    rho1, b1, T = certificate.rho1, certificate.b1, model.horizon
    m = model.truncation_level
    if m is None:
        m = float(model.weight.max())
    envelope = math.exp(rho1 * T) * model.gamma_weight() \
        + (b1 / rho1) * (math.exp(rho1 * T) - 1.0)
    return certificate.M * T * envelope / m
