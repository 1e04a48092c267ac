"""Closed-form performance analysis for networked training: convergence
bounds under periodic aggregation, queueing limits on offload capacity,
optimal keep/offload/discard splits for two-level networks, and Monte
Carlo estimates of capacity-violation counts under greedy offloading."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .topology import DegreeDistribution

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# convergence bound under periodic aggregation


@dataclass(frozen=True)
class BoundInputs:
    """Inputs to the training-loss bound.

    lipschitz and smoothness describe the loss (gradient bounded by the
    first, gradient Lipschitz with the second), step_size is the gradient
    step, grad_divergence bounds how far any device's local gradient can
    drift from the global one per step, omega weighs the initialization
    quality, period is the number of slots between aggregations, and
    steps is the slot at which the bound is evaluated.  epsilon_floor,
    when given, is the smallest optimality gap the analysis is allowed to
    assume; the computed gap is checked against it.
    """

    lipschitz: float
    smoothness: float
    step_size: float
    grad_divergence: float
    omega: float
    period: int
    steps: int
    epsilon_floor: float | None = None

    def __post_init__(self) -> None:
        for name in ("lipschitz", "smoothness", "step_size", "omega"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
        if self.grad_divergence < 0 or not np.isfinite(self.grad_divergence):
            raise ValueError(f"grad_divergence must be finite and >= 0")
        if self.step_size > 1.0 / self.smoothness + 1e-12:
            raise ValueError(
                f"step_size {self.step_size} exceeds 1/smoothness "
                f"{1.0 / self.smoothness}"
            )
        if self.period < 1 or self.steps < 1:
            raise ValueError("period and steps must be >= 1")


def divergence_growth(
    x: float, grad_divergence: float, smoothness: float, step_size: float
) -> float:
    """Worst-case parameter drift between a local model and the aggregate
    after x consecutive un-aggregated steps: (d/b)((sb+1)^x - 1) with
    d the per-step gradient divergence, b the smoothness, s the step."""
    if x < 0:
        raise ValueError(f"step count must be >= 0, got {x}")
    return (grad_divergence / smoothness) * (
        (step_size * smoothness + 1.0) ** x - 1.0
    )


def window_drift(
    x: float, grad_divergence: float, smoothness: float, step_size: float
) -> float:
    """Excess drift of a full window over its linear part:
    growth(x) - step*divergence*x.  Zero at x = 0 and x = 1, convex, so
    nonnegative at every integer window length."""
    return divergence_growth(x, grad_divergence, smoothness, step_size) - (
        step_size * grad_divergence * x
    )


def local_loss_bound(b: BoundInputs) -> float:
    """Bound on a device's loss gap after b.steps slots with aggregation
    every b.period slots.

    The bound is eps0 + lipschitz * growth(r) where r = steps mod period
    is the un-aggregated tail and eps0 solves the self-consistency
    equation eps = 1 / (A - lipschitz * B / eps^2), with
    A = steps * omega * step * (1 - smoothness*step/2) and
    B = K * drift(period) + growth(r) accumulated over the K completed
    windows.  The root is found by bisection above the pole of the
    right-hand side.
    """
    completed = b.steps // b.period
    tail = b.steps - completed * b.period
    growth_tail = divergence_growth(
        tail, b.grad_divergence, b.smoothness, b.step_size
    )
    drift_total = completed * window_drift(
        b.period, b.grad_divergence, b.smoothness, b.step_size
    ) + growth_tail
    amp = (
        b.steps * b.omega * b.step_size * (1.0 - b.smoothness * b.step_size / 2.0)
    )
    if amp <= 0:
        raise ValueError("bound amplitude must be positive; check step size")
    scaled = b.lipschitz * drift_total
    if scaled == 0.0:
        eps0 = 1.0 / amp
    else:
        pole = math.sqrt(scaled / amp)

        def gap(eps: float) -> float:
            denom = amp - scaled / (eps * eps)
            if denom <= 0:
                return -math.inf
            return eps - 1.0 / denom

        lo = pole
        hi = max(2.0 * pole, 2.0 / amp, 1.0)
        for _ in range(200):
            if gap(hi) > 0:
                break
            hi *= 2.0
        else:
            raise ValueError("self-consistency equation has no positive root")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if gap(mid) > 0:
                hi = mid
            else:
                lo = mid
        eps0 = 0.5 * (lo + hi)
    if b.epsilon_floor is not None and eps0 < b.epsilon_floor:
        logger.warning(
            "loss bound gap %.6g is below the assumed floor %.6g; "
            "the bound is not self-consistent at this horizon",
            eps0,
            b.epsilon_floor,
        )
    return eps0 + b.lipschitz * growth_tail


# ---------------------------------------------------------------------------
# queueing limit on sustained offload rate


@dataclass(frozen=True)
class QueueParams:
    """Deterministic arrivals at the capacity rate into an exponential
    server: service_rate is the processor's rate, max_wait the largest
    acceptable mean queueing delay."""

    service_rate: float
    max_wait: float

    def __post_init__(self) -> None:
        for name in ("service_rate", "max_wait"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")


def dm1_root(service_rate: float, arrival_rate: float) -> float:
    """Smallest root in (0, 1] of phi = exp(-service*(1-phi)/arrival), the
    delay factor of a queue fed at fixed spacing 1/arrival_rate.

    Returns 1.0 (and logs) when arrival_rate >= service_rate: the queue is
    unstable and only the trivial root remains.
    """
    if not (np.isfinite(service_rate) and service_rate > 0):
        raise ValueError(f"service_rate must be finite and > 0, got {service_rate}")
    if not (np.isfinite(arrival_rate) and arrival_rate > 0):
        raise ValueError(f"arrival_rate must be finite and > 0, got {arrival_rate}")
    if arrival_rate >= service_rate:
        logger.warning(
            "arrival rate %.6g >= service rate %.6g: queue unstable, "
            "delay factor pinned at 1",
            arrival_rate,
            service_rate,
        )
        return 1.0

    def resid(phi: float) -> float:
        return phi - math.exp(-service_rate * (1.0 - phi) / arrival_rate)

    lo, hi = 0.0, 1.0 - 1e-9
    # resid(0) < 0 always; resid(1-) > 0 in the stable regime
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if resid(mid) > 0:
            hi = mid
        else:
            lo = mid
    phi = 0.5 * (lo + hi)
    if abs(resid(phi)) > 1e-12:
        raise ArithmeticError(f"delay-factor residual {resid(phi):.3g} too large")
    return phi


def dm1_mean_wait(service_rate: float, arrival_rate: float) -> float:
    """Mean queueing delay phi/(mu(1-phi)); +inf in the unstable regime."""
    phi = dm1_root(service_rate, arrival_rate)
    if phi >= 1.0:
        return math.inf
    return phi / (service_rate * (1.0 - phi))


def capacity_for_wait(q: QueueParams) -> float:
    """Largest sustainable arrival rate whose mean queueing delay equals
    q.max_wait, found by bisection on the monotone rate -> delay-factor map.

    The target delay factor is s*mu/(1 + s*mu) < 1, so a solution always
    exists strictly below the service rate.
    """
    target = q.max_wait * q.service_rate / (1.0 + q.max_wait * q.service_rate)
    if not target < 1.0:
        raise ValueError("target delay factor must be < 1; check inputs")
    lo = q.service_rate * 1e-12
    hi = q.service_rate * (1.0 - 1e-12)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if dm1_root(q.service_rate, mid) > target:
            hi = mid
        else:
            lo = mid
    cap = 0.5 * (lo + hi)
    if abs(dm1_root(q.service_rate, cap) - target) > 1e-9:
        raise ArithmeticError("capacity bisection did not reach the delay target")
    return cap


# ---------------------------------------------------------------------------
# gradient divergence of a device processing a finite batch


def gradient_divergence_bound(
    device_scale: float,
    processed: float,
    network_scale: float,
    total_data: float,
    mismatch: float = 0.0,
) -> float:
    """Bound on how far a device's batch gradient strays from the full-data
    gradient: device_scale/sqrt(processed) + network_scale/sqrt(total_data)
    + mismatch.  An empty batch (or empty network) gives +inf: a device
    processing nothing can be arbitrarily wrong."""
    for name, v in (
        ("device_scale", device_scale),
        ("network_scale", network_scale),
        ("mismatch", mismatch),
    ):
        if v < 0 or not np.isfinite(v):
            raise ValueError(f"{name} must be finite and >= 0, got {v}")
    if processed < 0 or total_data < 0:
        raise ValueError("batch sizes must be >= 0")
    if (processed == 0 and device_scale > 0) or (total_data == 0 and network_scale > 0):
        return math.inf
    out = mismatch
    if device_scale > 0:
        out += device_scale / math.sqrt(processed)
    if network_scale > 0:
        out += network_scale / math.sqrt(total_data)
    return out


# ---------------------------------------------------------------------------
# optimal keep/offload/discard split for a two-level network


@dataclass(frozen=True)
class HierarchicalSplit:
    """Optimal symmetric per-leaf plan for a star of identical leaves.

    offload is the fraction each leaf sends to the hub, discard the
    fraction it drops (given that offload), and in_regime records whether
    both landed inside [0, 1]; outside the regime the closed forms are
    extrapolations (the batch is too small for the interior optimum)."""

    offload: float
    discard: float
    in_regime: bool

    def discard_for(self, offload: float) -> float:
        return self._keep_free - offload

    # set by factory
    _keep_free: float = 0.0


def hierarchical_optimum(
    error_scale: float,
    leaf_cost: float,
    hub_cost: float,
    transmit_cost: float,
    leaves: int,
    batch: float,
) -> HierarchicalSplit:
    """Closed-form minimizer of the one-shot star objective: each of
    ``leaves`` devices holds ``batch`` datapoints, processes at leaf_cost,
    may ship to a hub processing at hub_cost over links costing
    transmit_cost, and pays error_scale/sqrt(processed) per site.

    The optimum keeps (error_scale/(2*leaf_cost))^(2/3) points at each
    leaf, routes (error_scale/(2*(hub_cost+transmit_cost)))^(2/3) points
    total to the hub, and discards the rest.
    """
    for name, v in (
        ("error_scale", error_scale),
        ("leaf_cost", leaf_cost),
        ("hub_cost", hub_cost),
        ("transmit_cost", transmit_cost),
    ):
        if v <= 0 or not np.isfinite(v):
            raise ValueError(f"{name} must be finite and > 0, got {v}")
    if leaves < 1:
        raise ValueError(f"leaves must be >= 1, got {leaves}")
    if batch <= 0 or not np.isfinite(batch):
        raise ValueError(f"batch must be finite and > 0, got {batch}")
    kept = (error_scale / (2.0 * leaf_cost)) ** (2.0 / 3.0)
    hub_total = (error_scale / (2.0 * (hub_cost + transmit_cost))) ** (2.0 / 3.0)
    offload = hub_total / (leaves * batch)
    keep_free = 1.0 - kept / batch
    discard = keep_free - offload
    in_regime = 0.0 <= offload <= 1.0 and 0.0 <= discard <= 1.0
    if not in_regime:
        logger.warning(
            "interior optimum out of range (offload=%.4g, discard=%.4g): "
            "batch too small for the closed forms",
            offload,
            discard,
        )
    return HierarchicalSplit(
        offload=offload, discard=discard, in_regime=in_regime, _keep_free=keep_free
    )


def hierarchical_cost(
    discard: float,
    offload: float,
    error_scale: float,
    leaf_cost: float,
    hub_cost: float,
    transmit_cost: float,
    leaves: int,
    batch: float,
) -> float:
    """One-shot star objective evaluated at a symmetric (discard, offload)
    pair; +inf when either processing site would be starved."""
    keep = 1.0 - discard - offload
    leaf_batch = keep * batch
    hub_batch = offload * leaves * batch
    if leaf_batch <= 0 or hub_batch <= 0:
        return math.inf
    return (
        leaves * leaf_batch * leaf_cost
        + leaves * offload * batch * (hub_cost + transmit_cost)
        + leaves * error_scale / math.sqrt(leaf_batch)
        + error_scale / math.sqrt(hub_batch)
    )


# ---------------------------------------------------------------------------
# expected transfer-cost saving of single-hop offloading


def _degree_saving(k: int) -> Fraction:
    """Exact per-device saving factor at degree k (in units of the cost
    scale): 1/2 - (-1)^k/(k+2) - sum_l C(k,l) (-1)^l (k+3)/((l+2)(l+3))."""
    if k < 1:
        raise ValueError(f"degree must be >= 1, got {k}")
    total = Fraction(1, 2) - Fraction((-1) ** k, k + 2)
    for l in range(k):
        total -= (
            math.comb(k, l)
            * Fraction((-1) ** l * (k + 3), (l + 2) * (l + 3))
        )
    return total


def offloading_savings(dist: DegreeDistribution, cost_scale: float = 1.0) -> float:
    """Expected per-device saving from letting each device route its batch
    to the cheapest processor in its closed neighborhood, with all costs
    independent U(0, cost_scale).

    The per-degree factor is evaluated in exact rational arithmetic (the
    alternating binomial sum cancels catastrophically in floats at large
    degree) and only converted to float at the end.
    """
    if cost_scale < 0 or not np.isfinite(cost_scale):
        raise ValueError(f"cost_scale must be finite and >= 0, got {cost_scale}")
    total = Fraction(0)
    for k, weight in zip(dist.degrees(), dist.weights):
        if weight == 0:
            continue
        total += Fraction(weight) * _degree_saving(int(k))
    return float(total) * cost_scale


# ---------------------------------------------------------------------------
# capacity violations under greedy cheapest-neighbor offloading


Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class ViolationEstimate:
    expected: float        # expected number of violating devices
    stderr: float          # Monte Carlo standard error of `expected`
    probability: float     # per-device violation probability


def expected_capacity_violations(
    dist: DegreeDistribution,
    capacity: float | Sampler,
    batch: float,
    n_devices: int,
    trials: int = 100_000,
    seed: int = 0,
    cost_sampler: Sampler | None = None,
    neighbor_dist: DegreeDistribution | None = None,
) -> ViolationEstimate:
    """Monte Carlo estimate of how many devices end a slot with more work
    than capacity when every device routes its whole batch to the cheapest
    processor in its closed neighborhood.

    A tagged device keeps its own batch iff its cost beats every
    neighbor's, and receives neighbor j's batch iff it is the cheapest in
    j's closed neighborhood; j's remaining neighbors' costs are drawn
    through the conditional degree law (size-biased by default).  The
    realized load is compared against a capacity draw with a non-strict
    `load >= capacity` test, so a zero capacity is violated even by an
    idle device and an infinite one never is.
    """
    if batch < 0 or not np.isfinite(batch):
        raise ValueError(f"batch must be finite and >= 0, got {batch}")
    if n_devices < 0:
        raise ValueError(f"n_devices must be >= 0, got {n_devices}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    draw_cost: Sampler = cost_sampler or (lambda r, size: r.random(size))
    nbr_law = neighbor_dist or dist.size_biased()

    own_degree = rng.choice(dist.degrees(), size=trials, p=dist.probabilities())
    own_cost = draw_cost(rng, trials)
    kmax = dist.max_degree
    cheapest_nbr = np.full(trials, np.inf)
    inbound = np.zeros(trials)
    for slot in range(kmax):
        present = own_degree > slot
        m = present.sum()
        if m == 0:
            continue
        nbr_cost = np.full(trials, np.inf)
        nbr_cost[present] = draw_cost(rng, int(m))
        cheapest_nbr = np.minimum(cheapest_nbr, nbr_cost)
        nbr_degree = np.zeros(trials, dtype=int)
        nbr_degree[present] = rng.choice(
            nbr_law.degrees(), size=int(m), p=nbr_law.probabilities()
        )
        # min cost among the neighbor's other contacts; none -> +inf
        other_min = np.full(trials, np.inf)
        for deg in np.unique(nbr_degree[present]):
            if deg <= 1:
                continue
            rows = np.flatnonzero(present & (nbr_degree == deg))
            other = draw_cost(rng, len(rows) * (deg - 1)).reshape(len(rows), deg - 1)
            other_min[rows] = other.min(axis=1)
        wins = present & (own_cost < nbr_cost) & (own_cost < other_min)
        inbound += wins
    keeps = own_cost < cheapest_nbr
    load = batch * (keeps + inbound)
    if callable(capacity):
        cap = capacity(rng, trials)
    else:
        if capacity < 0 or math.isnan(capacity):
            raise ValueError(f"capacity must be >= 0, got {capacity}")
        cap = np.full(trials, float(capacity))
    violated = load >= cap
    p_hat = float(violated.mean())
    se = float(violated.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return ViolationEstimate(
        expected=n_devices * p_hat,
        stderr=n_devices * se,
        probability=p_hat,
    )
