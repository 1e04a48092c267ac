"""Fog-network construction: topology generators, membership churn, and
time-varying per-datapoint costs from synthetic draws or trace files."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import networkx as nx
import numpy as np

logger = logging.getLogger(__name__)

Edge = tuple[int, int]


@dataclass(frozen=True)
class NetworkState:
    """Time-indexed snapshot of the network over a fixed horizon.

    Slots run 0..horizon-1 and device ids 0..n-1.  ``edges[t]`` holds
    directed pairs (i, j) usable at slot t; link entries of the cost and
    capacity arrays are meaningful only on those pairs.  Instances are
    treated as immutable snapshots: derived states (churned, re-costed)
    are built with :func:`dataclasses.replace` on fresh arrays.
    """

    n: int
    horizon: int
    active: tuple[frozenset[int], ...]       # per-slot in-network device sets
    edges: tuple[frozenset[Edge], ...]       # per-slot directed link sets
    proc_cost: np.ndarray                    # (T, n) cost per datapoint processed
    link_cost: np.ndarray                    # (T, n, n) cost per datapoint sent
    proc_cap: np.ndarray                     # (T, n) datapoints/slot, +inf unbounded
    link_cap: np.ndarray                     # (T, n, n) datapoints/slot, +inf unbounded
    err_weight: np.ndarray                   # (T, n) discard penalty per datapoint

    def __post_init__(self) -> None:
        T, n = self.horizon, self.n
        if n < 1 or T < 1:
            raise ValueError(f"need n >= 1 and horizon >= 1, got n={n}, horizon={T}")
        if len(self.active) != T or len(self.edges) != T:
            raise ValueError("active/edges must have one entry per slot")
        for name, want in (
            ("proc_cost", (T, n)),
            ("link_cost", (T, n, n)),
            ("proc_cap", (T, n)),
            ("link_cap", (T, n, n)),
            ("err_weight", (T, n)),
        ):
            arr = getattr(self, name)
            if arr.shape != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want}")

    def validate(self) -> None:
        """Check structural invariants; raises ValueError on the first failure."""
        for t in range(self.horizon):
            for dev in self.active[t]:
                if not 0 <= dev < self.n:
                    raise ValueError(f"active[{t}] contains out-of-range id {dev}")
            for i, j in self.edges[t]:
                if i == j:
                    raise ValueError(f"edges[{t}] contains self-loop ({i},{i})")
                if i not in self.active[t] or j not in self.active[t]:
                    raise ValueError(
                        f"edges[{t}] contains ({i},{j}) with an inactive endpoint"
                    )
                if not np.isfinite(self.link_cost[t, i, j]):
                    raise ValueError(f"link_cost[{t}][{i}][{j}] is not finite")
        if not np.isfinite(self.proc_cost).all():
            raise ValueError("proc_cost contains non-finite entries")
        if not np.isfinite(self.err_weight).all():
            raise ValueError("err_weight contains non-finite entries")
        # capacities may be +inf (unbounded) but never negative or NaN
        for name in ("proc_cap", "link_cap"):
            arr = getattr(self, name)
            if np.isnan(arr).any():
                raise ValueError(f"{name} contains NaN")
            if (arr < 0).any():
                raise ValueError(f"{name} contains negative entries")

    def out_neighbors(self, t: int, i: int) -> list[int]:
        """Targets j with (i, j) usable at slot t, ascending for determinism."""
        return sorted(j for (a, j) in self.edges[t] if a == i)

    def in_neighbors(self, t: int, i: int) -> list[int]:
        """Sources j with (j, i) usable at slot t, ascending for determinism."""
        return sorted(a for (a, j) in self.edges[t] if j == i)


def _constant_state(n: int, horizon: int, pairs: set[Edge]) -> NetworkState:
    """All devices active every slot, the same edge set every slot, zero costs."""
    active = tuple(frozenset(range(n)) for _ in range(horizon))
    edges = tuple(frozenset(pairs) for _ in range(horizon))
    return NetworkState(
        n=n,
        horizon=horizon,
        active=active,
        edges=edges,
        proc_cost=np.zeros((horizon, n)),
        link_cost=np.zeros((horizon, n, n)),
        proc_cap=np.full((horizon, n), np.inf),
        link_cap=np.full((horizon, n, n), np.inf),
        err_weight=np.zeros((horizon, n)),
    )


def build_fully_connected(n: int, horizon: int = 1) -> NetworkState:
    """Every ordered pair of distinct devices is a link at every slot."""
    if n < 2:
        raise ValueError(f"fully connected network needs n >= 2, got {n}")
    pairs = {(i, j) for i in range(n) for j in range(n) if i != j}
    return _constant_state(n, horizon, pairs)


def build_singleton(horizon: int = 1) -> NetworkState:
    """One device, no links.  Used by the centralized reference pipeline."""
    return _constant_state(1, horizon, set())


def build_random(n: int, rho: float, seed: int, horizon: int = 1) -> NetworkState:
    """Each ordered pair becomes a link independently with probability rho.

    The draw happens once; the realized edge set is held constant over the
    horizon.  rho=1 reproduces the fully connected network exactly.
    """
    if n < 2:
        raise ValueError(f"random network needs n >= 2, got {n}")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    rng = np.random.default_rng(seed)
    draw = rng.random((n, n)) < rho
    np.fill_diagonal(draw, False)
    pairs = {(i, j) for i in range(n) for j in range(n) if draw[i, j]}
    return _constant_state(n, horizon, pairs)


def build_watts_strogatz(
    n: int, neighbors: int, rewire_p: float, seed: int, horizon: int = 1
) -> NetworkState:
    """Ring lattice with ``neighbors`` nearest neighbors, each undirected edge
    rewired with probability ``rewire_p``, then split into two directed links.
    """
    if n < 3:
        raise ValueError(f"small-world network needs n >= 3, got {n}")
    if neighbors < 2 or neighbors % 2 != 0 or neighbors >= n:
        raise ValueError(
            f"neighbors must be even, >= 2 and < n, got neighbors={neighbors}, n={n}"
        )
    if not 0.0 <= rewire_p <= 1.0:
        raise ValueError(f"rewire_p must lie in [0, 1], got {rewire_p}")
    graph = nx.watts_strogatz_graph(n, neighbors, rewire_p, seed=seed)
    pairs: set[Edge] = set()
    for a, b in graph.edges():
        pairs.add((a, b))
        pairs.add((b, a))
    return _constant_state(n, horizon, pairs)


def build_hierarchical(
    n: int, proc_costs: np.ndarray, seed: int, horizon: int = 1
) -> NetworkState:
    """Two-level tree: the n/3 cheapest processors become parents, the rest
    are leaves, and each parent is linked (both directions) with exactly two
    leaves sampled without replacement.

    Requires n divisible by 3 so parents exactly cover the leaf pool.
    Parent selection ties break toward the lower device id.
    """
    if n < 3 or n % 3 != 0:
        raise ValueError(f"hierarchical network needs n divisible by 3, got {n}")
    proc_costs = np.asarray(proc_costs, dtype=float)
    if proc_costs.shape != (n,):
        raise ValueError(f"proc_costs must have shape ({n},), got {proc_costs.shape}")
    order = sorted(range(n), key=lambda i: (proc_costs[i], i))
    parents = order[: n // 3]
    leaves = [i for i in range(n) if i not in set(parents)]
    rng = np.random.default_rng(seed)
    shuffled = [leaves[k] for k in rng.permutation(len(leaves))]
    pairs: set[Edge] = set()
    for idx, parent in enumerate(parents):
        for leaf in shuffled[2 * idx : 2 * idx + 2]:
            pairs.add((leaf, parent))
            pairs.add((parent, leaf))
    state = _constant_state(n, horizon, pairs)
    cost = np.tile(proc_costs, (horizon, 1))
    return replace(state, proc_cost=cost)


@dataclass(frozen=True)
class ChurnConfig:
    """Two-state membership chain: an in-network device exits with
    ``p_exit`` per slot, an out-of-network one re-enters with ``p_entry``."""

    p_exit: float = 0.0
    p_entry: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_exit", "p_entry"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")

    @property
    def enabled(self) -> bool:
        return self.p_exit > 0.0 or self.p_entry > 0.0


def apply_churn(state: NetworkState, churn: ChurnConfig) -> NetworkState:
    """Evolve membership from all-active at slot 0 and restrict each slot's
    links to pairs whose endpoints are both in-network.

    Whether a re-entrant participates immediately is a scheduling question
    the slot engine answers (it waits out the running aggregation window);
    here a device is simply in or out of the network.
    """
    if any(len(a) != state.n for a in state.active[:1]):
        raise ValueError("churn must start from an all-active slot 0")
    rng = np.random.default_rng(churn.seed)
    T, n = state.horizon, state.n
    member = np.zeros((T, n), dtype=bool)
    member[0] = True
    for t in range(1, T):
        u = rng.random(n)
        member[t] = np.where(member[t - 1], u >= churn.p_exit, u < churn.p_entry)
    active = tuple(frozenset(np.flatnonzero(member[t]).tolist()) for t in range(T))
    edges = tuple(
        frozenset((i, j) for (i, j) in state.edges[t] if member[t, i] and member[t, j])
        for t in range(T)
    )
    return replace(state, active=active, edges=edges)


def draw_uniform_costs(
    state: NetworkState, low: float, high: float, seed: int
) -> NetworkState:
    """Fill processing and link costs with independent U(low, high) draws,
    one per device-slot and per directed-pair-slot."""
    if not (np.isfinite(low) and np.isfinite(high)) or high < low:
        raise ValueError(f"need finite low <= high, got [{low}, {high}]")
    rng = np.random.default_rng(seed)
    T, n = state.horizon, state.n
    proc = rng.uniform(low, high, size=(T, n))
    link = rng.uniform(low, high, size=(T, n, n))
    return replace(state, proc_cost=proc, link_cost=link)


def set_error_weights(
    state: NetworkState, base: float, schedule: str = "constant"
) -> NetworkState:
    """Set the per-datapoint discard penalty f_i(t).

    ``constant`` holds it at ``base``; ``inverse_time`` decays it as
    base/(1+t), de-emphasizing early discards as the model matures.
    """
    if base < 0 or not np.isfinite(base):
        raise ValueError(f"error weight base must be finite and >= 0, got {base}")
    T, n = state.horizon, state.n
    if schedule == "constant":
        w = np.full((T, n), float(base))
    elif schedule == "inverse_time":
        w = np.tile(base / (1.0 + np.arange(T))[:, None], (1, n))
    else:
        raise ValueError(f"unknown error-weight schedule {schedule!r}")
    return replace(state, err_weight=w)


def _rescale(values: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a degenerate series (max == min) maps to 0."""
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def load_cost_trace(state: NetworkState, path: str) -> NetworkState:
    """Load per-slot costs from a CSV trace with columns t,i,j,value.

    An empty j column means a node processing cost, otherwise a link cost.
    Node and link values are min-max rescaled to [0, 1] separately (they
    come from different clocks).  Entries the file never mentions are
    filled with the time average of their own series, or 0 for a series
    with no observations at all; both fallbacks are logged.
    """
    T, n = state.horizon, state.n
    node_rows: list[tuple[int, int, float]] = []
    link_rows: list[tuple[int, int, int, float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "t":
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                t = int(row[0])
                i = int(row[1])
                j = int(row[2]) if row[2].strip() != "" else None
                value = float(row[3])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if not 0 <= t < T:
                raise ValueError(f"{path}:{lineno}: slot {t} outside [0, {T})")
            if not 0 <= i < n or (j is not None and not 0 <= j < n):
                raise ValueError(f"{path}:{lineno}: device id outside [0, {n})")
            if not np.isfinite(value):
                raise ValueError(f"{path}:{lineno}: non-finite value {row[3]!r}")
            if j is None:
                node_rows.append((t, i, value))
            else:
                if i == j:
                    raise ValueError(f"{path}:{lineno}: self-loop cost ({i},{j})")
                link_rows.append((t, i, j, value))

    proc = np.full((T, n), np.nan)
    for t, i, v in node_rows:
        proc[t, i] = v
    link = np.full((T, n, n), np.nan)
    for t, i, j, v in link_rows:
        link[t, i, j] = v

    if node_rows:
        seen = ~np.isnan(proc)
        proc[seen] = _rescale(proc[seen])
    if link_rows:
        seen = ~np.isnan(link)
        link[seen] = _rescale(link[seen])

    # fill gaps with each series' own time average, 0 if never observed
    for i in range(n):
        col = proc[:, i]
        missing = np.isnan(col)
        if missing.any():
            fill = float(np.nanmean(col)) if not missing.all() else 0.0
            col[missing] = fill
            logger.info("trace %s: node %d missing %d slots, filled with %.4g",
                        path, i, int(missing.sum()), fill)
    needed = set()
    for t in range(T):
        needed.update(state.edges[t])
    for i, j in sorted(needed):
        col = link[:, i, j]
        missing = np.isnan(col)
        if missing.any():
            fill = float(np.nanmean(col)) if not missing.all() else 0.0
            col[missing] = fill
            logger.info("trace %s: link (%d,%d) missing %d slots, filled with %.4g",
                        path, i, j, int(missing.sum()), fill)
    link = np.nan_to_num(link, nan=0.0)
    return replace(state, proc_cost=proc, link_cost=link)


@dataclass(frozen=True)
class DegreeDistribution:
    """Distribution of device degrees, weights[k-1] = fraction with k links."""

    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("degree distribution needs at least one degree")
        if any(w < 0 for w in self.weights):
            raise ValueError("degree weights must be nonnegative")
        total = sum(self.weights)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"degree weights must sum to 1, got {total}")

    @property
    def max_degree(self) -> int:
        return len(self.weights)

    def degrees(self) -> np.ndarray:
        return np.arange(1, len(self.weights) + 1)

    def probabilities(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    def mean_degree(self) -> float:
        return float(np.dot(self.degrees(), self.probabilities()))

    def size_biased(self) -> "DegreeDistribution":
        """Degree law of a device reached by following a random link."""
        w = self.degrees() * self.probabilities()
        w = w / w.sum()
        return DegreeDistribution(tuple(w.tolist()))

    @classmethod
    def point_mass(cls, degree: int, max_degree: int | None = None) -> "DegreeDistribution":
        if degree < 1:
            raise ValueError(f"degree must be >= 1, got {degree}")
        size = max_degree if max_degree is not None else degree
        if size < degree:
            raise ValueError("max_degree must be >= degree")
        w = [0.0] * size
        w[degree - 1] = 1.0
        return cls(tuple(w))

    @classmethod
    def truncated_power_law(cls, max_degree: int, exponent: float) -> "DegreeDistribution":
        """weights proportional to k**(-exponent) for k = 1..max_degree."""
        if max_degree < 1:
            raise ValueError(f"max_degree must be >= 1, got {max_degree}")
        k = np.arange(1, max_degree + 1, dtype=float)
        w = k ** (-exponent)
        w = w / w.sum()
        return cls(tuple(w.tolist()))
