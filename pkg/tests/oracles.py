"""Independent reference implementations used to cross-check the package.

Everything here is written from first principles with plain loops and
generic numerical tools, deliberately avoiding the package's own code
paths, so a bug cannot hide on both sides of a comparison.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------------------
# movement plans: plain-loop cost evaluation and brute-force grid search


def plan_cost_plain(problem, plan) -> dict[str, float]:
    """Re-price a plan with nothing but loops over the raw arrays.

    Batches follow the one-slot delivery rule: what i keeps at t plus what
    neighbors sent at t-1.  The error charge is the linear discard weight,
    or scale/sqrt(batch) summed over positive batches for the sqrt model.
    """
    net = problem.net
    D = problem.arrivals
    T, n = net.horizon, net.n
    s = plan.offload
    r = plan.discard
    batch = np.zeros((T, n))
    for t in range(T):
        for i in range(n):
            got = D[t, i] * s[t, i, i]
            if t > 0:
                for j in range(n):
                    if j != i:
                        got += D[t - 1, j] * s[t - 1, j, i]
            batch[t, i] = got
    process = 0.0
    transfer = 0.0
    error = 0.0
    sur = problem.link_error_surcharge
    for t in range(T):
        for i in range(n):
            process += batch[t, i] * net.proc_cost[t, i]
            for j in range(n):
                if j != i:
                    transfer += D[t, i] * s[t, i, j] * (net.link_cost[t, i, j] + sur)
    model = problem.error_model
    if hasattr(model, "weights"):
        for t in range(T):
            for i in range(n):
                error += model.weights[t, i] * D[t, i] * r[t, i]
    else:
        for t in range(T):
            for i in range(n):
                if model.scale[i] > 0 and batch[t, i] > 1e-12:
                    error += model.scale[i] / math.sqrt(batch[t, i])
    total = process + transfer + error
    volume = float(D.sum())
    return {
        "process": process,
        "transfer": transfer,
        "discard": error,
        "total": total,
        "unit_cost": total / volume if volume > 0 else 0.0,
        "batch": batch,
    }


def _compositions(total: int, parts: int):
    """All nonnegative integer tuples of the given length summing to total."""
    if parts == 1:
        yield (total,)
        return
    for bars in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 2 - prev)
        yield tuple(out)


_COMBOS: dict[tuple[int, int], np.ndarray] = {}


def _combo_matrix(levels: int, parts: int) -> np.ndarray:
    key = (levels, parts)
    if key not in _COMBOS:
        _COMBOS[key] = np.array(list(_compositions(levels, parts)), dtype=float)
    return _COMBOS[key]


def _row_prices(problem, t: int, i: int) -> list[float]:
    """Unit prices of a row's options in [discard, keep, links...] order;
    offloading to j charges the link plus j's next-slot processing."""
    net = problem.net
    sur = problem.link_error_surcharge
    prices = [problem.error_model.weights[t, i], net.proc_cost[t, i]]
    if t + 1 < net.horizon:
        for j in sorted(net.active[t + 1]):
            if j != i and (i, j) in net.edges[t]:
                prices.append(net.link_cost[t, i, j] + sur + net.proc_cost[t + 1, j])
    return prices


def grid_best_total(problem, step: float = 0.05) -> float:
    """Brute-force optimum over per-row grids with the given step.

    Valid only without capacity coupling: the linear objective then
    separates across (slot, device) rows, each row choosing a split of its
    own arrivals among keep, each usable link, and discard.
    """
    assert not problem.capacities_enforced, "grid oracle assumes no capacities"
    D = problem.arrivals
    levels = round(1.0 / step)
    total = 0.0
    for t in range(problem.net.horizon):
        for i in sorted(problem.net.active[t]):
            d = D[t, i]
            if d <= 0:
                continue
            prices = np.array(_row_prices(problem, t, i))
            combos = _combo_matrix(levels, len(prices))
            total += float((combos @ prices).min()) * step * d
    return total


def grid_step_increment(problem, step: float = 0.05) -> float:
    """Largest objective change a single grid-step reallocation can cause:
    the oracle's optimum is within this much of the continuous optimum."""
    D = problem.arrivals
    worst = 0.0
    for t in range(problem.net.horizon):
        for i in sorted(problem.net.active[t]):
            d = D[t, i]
            if d <= 0:
                continue
            prices = _row_prices(problem, t, i)
            worst += step * d * (max(prices) - min(prices))
    return worst


def sqrt_objective_plain(problem, offload: np.ndarray, smoothing: float = 0.0) -> float:
    """Movement cost under the diminishing-returns error model, from the
    offload matrix alone (discard is the leftover; it carries no direct
    charge under this model)."""
    net = problem.net
    D = problem.arrivals
    scale = problem.error_model.scale
    sur = problem.link_error_surcharge
    T, n = net.horizon, net.n
    total = 0.0
    for t in range(T):
        for i in range(n):
            got = D[t, i] * offload[t, i, i]
            if t > 0:
                for j in range(n):
                    if j != i:
                        got += D[t - 1, j] * offload[t - 1, j, i]
            total += got * net.proc_cost[t, i]
            if scale[i] > 0:
                total += scale[i] / math.sqrt(got + smoothing)
            for j in range(n):
                if j != i:
                    total += D[t, i] * offload[t, i, j] * (
                        net.link_cost[t, i, j] + sur
                    )
    return total


# ---------------------------------------------------------------------------
# queueing: direct discrete-event check of the deterministic-arrival queue


def lindley_mean_wait(
    service_rate: float,
    arrival_rate: float,
    n_arrivals: int = 1_000_000,
    seed: int = 0,
    warmup: int = 100_000,
) -> float:
    """Mean waiting time of a queue fed every 1/arrival_rate slots with
    exponential(service_rate) service, by the Lindley recursion
    W_{k+1} = max(0, W_k + S_k - 1/arrival_rate), vectorized through the
    prefix-minimum identity W_k = C_k - min_{j<=k} C_j."""
    rng = np.random.default_rng(seed)
    drift = rng.exponential(1.0 / service_rate, n_arrivals) - 1.0 / arrival_rate
    c = np.concatenate(([0.0], np.cumsum(drift)))
    waits = c - np.minimum.accumulate(c)
    return float(waits[warmup + 1 :].mean())


# ---------------------------------------------------------------------------
# offloading gain: Monte Carlo of the cheapest-neighbor rule


def mc_offload_saving(
    weights: list[float],
    cost_scale: float = 1.0,
    trials: int = 1_000_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Expected drop in per-datapoint processing price when a device may
    use the cheapest of itself and its k neighbors, costs i.i.d.
    U(0, cost_scale), k drawn from weights over degrees 1..len(weights).
    Returns (mean, standard error)."""
    rng = np.random.default_rng(seed)
    ks = rng.choice(
        np.arange(1, len(weights) + 1), size=trials, p=np.asarray(weights)
    )
    own = rng.uniform(0.0, cost_scale, trials)
    # min of k uniforms by inverse transform, vectorized over mixed degrees
    nmin = cost_scale * (1.0 - rng.random(trials) ** (1.0 / ks))
    saving = own - np.minimum(own, nmin)
    return float(saving.mean()), float(saving.std(ddof=1) / math.sqrt(trials))


# ---------------------------------------------------------------------------
# capacity violations: whole-network simulation on a regular random graph


def violation_network_sim(
    degree: int,
    n: int,
    capacity,
    batch: float,
    trials: int = 2000,
    seed: int = 0,
    capacity_sampler=None,
) -> tuple[float, float]:
    """Simulate the cheapest-in-closed-neighborhood routing rule on one
    random regular graph and count devices whose realized load meets or
    exceeds capacity.  Returns (mean violations per trial, standard error).
    """
    import networkx as nx

    graph = nx.random_regular_graph(degree, n, seed=seed)
    nb = np.array([sorted(graph.neighbors(v)) for v in range(n)], dtype=int)
    rng = np.random.default_rng(seed + 1)
    counts = np.zeros(trials)
    for b in range(trials):
        costs = rng.uniform(0.0, 1.0, n)
        stacked = np.concatenate([costs[:, None], costs[nb]], axis=1)  # (n, k+1)
        pick = np.argmin(stacked, axis=1)
        target = np.where(pick == 0, np.arange(n), nb[np.arange(n), pick - 1])
        load = batch * np.bincount(target, minlength=n).astype(float)
        if capacity_sampler is not None:
            cap = capacity_sampler(rng, n)
        else:
            cap = np.full(n, float(capacity))
        counts[b] = (load >= cap).sum()
    return float(counts.mean()), float(counts.std(ddof=1) / math.sqrt(trials))


# ---------------------------------------------------------------------------
# gradients and convex minima


def fd_gradient(f, w: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a vector."""
    g = np.zeros_like(w)
    for k in range(w.size):
        up = w.copy()
        dn = w.copy()
        up[k] += step
        dn[k] -= step
        g[k] = (f(up) - f(dn)) / (2.0 * step)
    return g


def star_cost_plain(
    r: float,
    s: float,
    error_scale: float,
    leaf_cost: float,
    hub_cost: float,
    transmit_cost: float,
    leaves: int,
    batch: float,
) -> float:
    """Total cost of the symmetric star plan: each of the leaves keeps
    (1-r-s) of its batch, sends s to the hub, drops r; error decays as
    one over the square root of each processed pile."""
    kept = (1.0 - r - s) * batch
    hub = s * leaves * batch
    if kept <= 0 or hub <= 0:
        return math.inf
    return (
        leaves * kept * leaf_cost
        + hub * (hub_cost + transmit_cost)
        + leaves * error_scale / math.sqrt(kept)
        + error_scale / math.sqrt(hub)
    )


def star_numeric_optimum(
    error_scale: float,
    leaf_cost: float,
    hub_cost: float,
    transmit_cost: float,
    leaves: int,
    batch: float,
) -> tuple[float, float]:
    """(discard, offload) minimizing the star cost, by a generic bounded
    minimizer from a grid of starts."""
    from scipy.optimize import minimize

    def fun(x):
        return star_cost_plain(
            x[0], x[1], error_scale, leaf_cost, hub_cost, transmit_cost,
            leaves, batch,
        )

    best = None
    for r0 in (0.1, 0.5, 0.9, 0.99):
        for s0 in (1e-6, 1e-4, 1e-2):
            if r0 + s0 >= 1:
                continue
            res = minimize(
                fun,
                x0=[r0, s0],
                method="Nelder-Mead",
                options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000},
            )
            if best is None or res.fun < best.fun:
                best = res
    return float(best.x[0]), float(best.x[1])


# ---------------------------------------------------------------------------
# frozen worked-example values for the loss bound
# inputs: lipschitz=1, smoothness=1, step=0.5, divergence=0.1, omega=1,
# period=10, steps=25; derived by the closed quadratic form
# eps0 = (1 + sqrt(1 + 4*A*rho*B)) / (2A) with
# A = t*omega*eta*(1 - beta*eta/2), B = K*h(tau) + g(t - K*tau)

BOUND_EXAMPLE = {
    "growth_5": 0.659375,
    "drift_10": 5.16650390625,
    "A": 9.375,
    "B": 10.9923828125,
    "eps0": 1.137475979749,
    "bound": 1.796850979749,
}


def bound_eps0_closed(a: float, rho_times_b: float) -> float:
    """Positive root of eps = 1/(A - rB/eps^2) via the explicit quadratic
    A*eps^2 - eps - rB... rearranged: A eps^3 - eps^2 - rB eps = 0, i.e.
    A eps^2 - eps - rB = 0 on eps > 0."""
    return (1.0 + math.sqrt(1.0 + 4.0 * a * rho_times_b)) / (2.0 * a)
