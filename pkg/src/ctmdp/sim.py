"""Jump-process simulation under Markov policies, by exact thinning.

While the process sits in state i, candidate event times arrive at the
constant majorant rate q*(i) = max_a |q(i|i,a)|; a candidate at time t is
accepted with probability |q(i|i,a_t)| / q*(i), where a_t is the policy's
action at (i, t) (sampled from the kernel for randomized policies), and an
accepted event jumps to j != i with probability q(j|i,a_t)/|q(i|i,a_t)|.
This is exact for time-inhomogeneous kernels because the majorant does not
depend on time. Paths stop at the horizon; q*(i) = 0 states simply hold.

Cost and rate functionals accrue along a path through their kernel averages
(for a fixed state these are deterministic piecewise-constant functions of
time), so Monte Carlo estimators only need the visited states and sojourns.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import CtmdpModel, DriftCertificate, MarkovPolicy

_MAX_ROUNDS_SLACK = 2000  # cap on thinning rounds beyond the expected count


@dataclass(frozen=True)
class Trajectory:
    """One simulated path: jump epochs, visited states, sojourn actions.

    ``times[m]`` is the m-th jump epoch (times[0] = 0), ``states[m]`` the
    state held on [times[m], times[m+1]) and ``action_indices[m]`` the local
    action in effect when that sojourn started. The final sojourn runs to the
    horizon.
    """

    horizon: float
    times: np.ndarray
    states: np.ndarray
    action_indices: np.ndarray

    def n_jumps(self) -> int:
        return len(self.times) - 1

    def state_at(self, t: float) -> int:
        """Right-continuous readout: the state holding at time t."""
        if not 0 <= t <= self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        return int(self.states[np.searchsorted(self.times, t, side="right") - 1])

    def write_csv(self, model: CtmdpModel, path) -> None:
        dim = model.action_points.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "state"] + [f"a{d}" for d in range(dim)])
            for m in range(len(self.times)):
                point = model.action_points[
                    model.pair_index(int(self.states[m]), int(self.action_indices[m]))]
                writer.writerow([f"{self.times[m]:.17g}", int(self.states[m])]
                                + [f"{x:.17g}" for x in point])


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with its standard error (sample sd / sqrt(count))."""

    mean: float
    se: float
    count: int

    def within(self, target: float, z: float = 4.0) -> bool:
        return abs(self.mean - target) <= z * self.se


def _estimate(samples: np.ndarray) -> McEstimate:
    n = samples.size
    mean = float(np.mean(samples))  # numpy pairwise summation
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(mean=mean, se=se, count=n)


def _policy_cells(model: CtmdpModel, policy: MarkovPolicy):
    """Kernel per time cell plus the cell width, from a node policy."""
    if policy.n_nodes < 2:
        raise ValueError("policy needs at least 2 nodes")
    kernel = policy.kernel(model)
    n_cells = policy.n_nodes - 1
    return kernel[:n_cells], model.horizon / n_cells


def _cell_of(t, dt_cells: float, n_cells: int):
    return np.clip((t / dt_cells).astype(np.int64), 0, n_cells - 1)


def kernel_cost_cells(model: CtmdpModel, policy: MarkovPolicy, cost_index: int) -> np.ndarray:
    """Kernel-averaged cost rate per (cell, state)."""
    cells, _ = _policy_cells(model, policy)
    return np.add.reduceat(cells * model.costs[cost_index][None, :],
                           model.action_offsets[:-1], axis=1)


def kernel_set_rate_cells(model: CtmdpModel, policy: MarkovPolicy, subset) -> np.ndarray:
    """Kernel-averaged rate into a state subset, q(B|i, .), per (cell, state).

    The diagonal is included whenever i itself lies in B, i.e. this is the
    full signed sum of the rate row over B.
    """
    cells, _ = _policy_cells(model, policy)
    indicator = np.zeros(model.n_states)
    indicator[list(subset)] = 1.0
    per_pair = model.rate_rows @ indicator
    return np.add.reduceat(cells * per_pair[None, :], model.action_offsets[:-1], axis=1)


def simulate(model: CtmdpModel, policy: MarkovPolicy, i0: int, seed) -> Trajectory:
    """Generate one path by thinning. Identical seeds give identical paths."""
    rng = np.random.default_rng(seed)
    cells, dt_cells = _policy_cells(model, policy)
    n_cells = cells.shape[0]
    T = model.horizon
    R = model.rate_rows
    offsets = model.action_offsets

    def action_at(i: int, t: float) -> int:
        cell = min(int(t / dt_cells), n_cells - 1)
        if policy.kind == "deterministic":
            return int(policy.action_index[cell, i])
        probs = cells[cell, offsets[i]:offsets[i + 1]]
        return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))

    times = [0.0]
    states = [int(i0)]
    actions = [min(action_at(int(i0), 0.0), model.n_actions(int(i0)) - 1)]
    t, i = 0.0, int(i0)
    max_rounds = _MAX_ROUNDS_SLACK + int(20 * model.max_q_star * T)
    for _ in range(max_rounds):
        qs = float(model.q_star[i])
        if qs <= 0.0:
            break  # absorbing under every action: hold to the horizon
        t = t + rng.exponential(1.0 / qs)
        if t >= T:
            break
        a = min(action_at(i, t), model.n_actions(i) - 1)
        ka = offsets[i] + a
        diag = abs(float(R[ka, i]))
        if rng.random() * qs >= diag:
            continue  # thinned proposal, clock keeps running
        row = R[ka].copy()
        row[i] = 0.0
        cum = np.cumsum(row / diag)
        j = int(np.searchsorted(cum, rng.random(), side="right"))
        j = min(j, model.n_states - 1)
        if row[j] <= 0.0:
            j = int(np.argmax(row))
        times.append(t)
        states.append(j)
        actions.append(min(action_at(j, t), model.n_actions(j) - 1))
        i = j
    else:
        raise RuntimeError("thinning did not reach the horizon within the round cap")

    return Trajectory(horizon=T, times=np.asarray(times),
                      states=np.asarray(states, dtype=np.int64),
                      action_indices=np.asarray(actions, dtype=np.int64))


def _prefix_integral(table: np.ndarray, dt_cells: float):
    """Cumulative integral of a piecewise-constant (cell, state) table."""
    n_cells, n_states = table.shape
    pre = np.zeros((n_states, n_cells + 1))
    pre[:, 1:] = np.cumsum(table.T, axis=1) * dt_cells
    return pre


def _integral_to(pre: np.ndarray, table: np.ndarray, dt_cells: float,
                 state: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Integral of table(., state) from 0 to u along constant-state stretches."""
    n_cells = table.shape[0]
    u = np.clip(u, 0.0, n_cells * dt_cells)
    cell = np.clip((u / dt_cells).astype(np.int64), 0, n_cells - 1)
    return pre[state, cell] + (u - cell * dt_cells) * table[cell, state]


def _run_batch(model: CtmdpModel, policy: MarkovPolicy, i0: int, n_paths: int,
               rng, integrands=(), capture_time: float | None = None):
    """Vectorized thinning over a batch of paths.

    integrands: sequence of (table (n_cells, n_states), t_end) pairs whose
    pathwise integrals over [0, min(t_end, T)] are returned, one column each.
    capture_time: if set, also return the state each path holds at that time.
    All randomness is drawn from the single counter-based stream ``rng`` with
    a consumption pattern that is a pure function of the seed.
    """
    cells, dt_cells = _policy_cells(model, policy)
    n_cells = cells.shape[0]
    T = model.horizon
    R = model.rate_rows
    offsets = model.action_offsets
    q_star = model.q_star
    randomized = policy.kind == "randomized"
    pad, mask = model.pad_index, model.pad_mask

    tables = [np.ascontiguousarray(tab) for tab, _ in integrands]
    ends = [min(float(t_end), T) for _, t_end in integrands]
    prefixes = [_prefix_integral(tab, dt_cells) for tab in tables]

    t = np.zeros(n_paths)
    state = np.full(n_paths, int(i0), dtype=np.int64)
    done = np.zeros(n_paths, dtype=bool)
    captured = np.full(n_paths, -1, dtype=np.int64)
    acc = np.zeros((n_paths, len(integrands)))

    max_rounds = _MAX_ROUNDS_SLACK + int(20 * model.max_q_star * T)
    for _ in range(max_rounds):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        s = state[idx]
        qs = q_star[s]
        draws = rng.exponential(1.0, size=idx.size)
        with np.errstate(divide="ignore"):
            t_new = np.where(qs > 0.0, t[idx] + draws / np.where(qs > 0, qs, 1.0), np.inf)

        if capture_time is not None:
            hit = (captured[idx] < 0) & (t[idx] <= capture_time) & (capture_time < t_new)
            captured[idx[hit]] = s[hit]

        hi = np.minimum(t_new, T)
        for m, (pre, tab, t_end) in enumerate(zip(prefixes, tables, ends)):
            lo_m = np.minimum(t[idx], t_end)
            hi_m = np.minimum(hi, t_end)
            acc[idx, m] += (_integral_to(pre, tab, dt_cells, s, hi_m)
                            - _integral_to(pre, tab, dt_cells, s, lo_m))

        finished = t_new >= T
        done[idx[finished]] = True
        t[idx] = hi

        live = idx[~finished]
        if live.size == 0:
            continue
        s_live = state[live]
        t_live = t[live]
        cell = _cell_of(t_live, dt_cells, n_cells)
        if randomized:
            rows = cells[cell[:, None], pad[s_live]]
            rows = np.where(mask[s_live], rows, 0.0)
            u = rng.random(live.size) * rows.sum(axis=1)
            local = (np.cumsum(rows, axis=1) < u[:, None]).sum(axis=1)
            local = np.minimum(local, np.diff(offsets)[s_live] - 1)
            chosen = rows[np.arange(rows.shape[0]), local]
            off = chosen <= 0.0  # boundary draws may land on a zero-mass action
            if np.any(off):
                local[off] = np.argmax(rows[off], axis=1)
        else:
            local = policy.action_index[cell, s_live]
        ka = offsets[s_live] + local

        diag = np.abs(R[ka, s_live])
        accept = rng.random(live.size) * q_star[s_live] < diag
        if not np.any(accept):
            continue
        jump_from = live[accept]
        rows = R[ka[accept]].copy()
        rows[np.arange(rows.shape[0]), state[jump_from]] = 0.0
        rows /= diag[accept][:, None]
        u2 = rng.random(rows.shape[0])
        j = (np.cumsum(rows, axis=1) < u2[:, None]).sum(axis=1)
        j = np.minimum(j, model.n_states - 1)
        bad = rows[np.arange(rows.shape[0]), j] <= 0.0
        if np.any(bad):
            j[bad] = np.argmax(rows[bad], axis=1)
        state[jump_from] = j
    if not done.all():
        raise RuntimeError("batch thinning did not finish within the round cap")

    if capture_time is not None:
        remaining = captured < 0
        captured[remaining] = state[remaining]
    return acc, captured


def mc_value(model: CtmdpModel, policy: MarkovPolicy, i0: int, cost_index: int,
             replicates: int, seed) -> McEstimate:
    """Monte Carlo estimate of the expected total cost from state i0.

    Each path contributes the integral of the kernel-averaged cost rate over
    its sojourns, clipped at the horizon.
    """
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    rng = np.random.default_rng(seed)
    table = kernel_cost_cells(model, policy, cost_index)
    acc, _ = _run_batch(model, policy, i0, replicates, rng,
                        integrands=[(table, model.horizon)])
    return _estimate(acc[:, 0])


@dataclass(frozen=True)
class FlowIdentityCheck:
    """Pathwise residual of the transient-balance identity at one time.

    Per path: indicator(state at t in B) minus indicator(i0 in B) minus the
    integrated kernel-averaged rate into B. Under a correct simulator the
    residual has mean zero.
    """

    residual: float
    se: float
    count: int
    occupancy: float    # estimated P(state at t in B)
    flow_side: float    # indicator(i0 in B) + estimated integrated rate

    def covers_zero(self, z: float = 4.0) -> bool:
        return abs(self.residual) <= z * self.se


def check_forward_kolmogorov(model: CtmdpModel, policy: MarkovPolicy, i0: int,
                             subset, t: float, replicates: int, seed) -> FlowIdentityCheck:
    """Estimate both sides of the transient-balance identity and difference them."""
    if not 0 < t <= model.horizon:
        raise ValueError("need 0 < t <= horizon")
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    subset = set(int(b) for b in subset)
    rng = np.random.default_rng(seed)
    table = kernel_set_rate_cells(model, policy, subset) if subset else \
        np.zeros((policy.n_nodes - 1, model.n_states))
    acc, captured = _run_batch(model, policy, i0, replicates, rng,
                               integrands=[(table, t)], capture_time=t)
    in_b = np.isin(captured, sorted(subset)).astype(float)
    start = 1.0 if int(i0) in subset else 0.0
    flow = start + acc[:, 0]
    res = _estimate(in_b - flow)
    return FlowIdentityCheck(residual=res.mean, se=res.se, count=res.count,
                             occupancy=float(np.mean(in_b)),
                             flow_side=float(np.mean(flow)))


@dataclass(frozen=True)
class WeightBoundCheck:
    """Estimated mean weight at time t against its certified exponential bound."""

    estimate: McEstimate
    bound: float
    slack: float   # estimate.mean - bound; should not sit above 0 statistically

    def statistically_ok(self, z: float = 4.0) -> bool:
        return self.slack <= z * self.estimate.se


def check_weight_bound(model: CtmdpModel, certificate: DriftCertificate,
                       policy: MarkovPolicy, i0: int, t: float,
                       replicates: int, seed) -> WeightBoundCheck:
    """Monte Carlo check of the mean-weight growth bound at one time point."""
    if not 0 <= t <= model.horizon:
        raise ValueError("need 0 <= t <= horizon")
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    rng = np.random.default_rng(seed)
    if t == 0.0:
        est = McEstimate(mean=float(model.weight[int(i0)]), se=0.0, count=replicates)
    else:
        _, captured = _run_batch(model, policy, i0, replicates, rng, capture_time=t)
        est = _estimate(model.weight[captured])
    rho1, b1 = certificate.rho1, certificate.b1
    bound = math.exp(rho1 * t) * float(model.weight[int(i0)]) \
        + (b1 / rho1) * (math.exp(rho1 * t) - 1.0)
    return WeightBoundCheck(estimate=est, bound=bound, slack=est.mean - bound)
