"""Slot-by-slot execution of a movement plan over a fog network: datapoint
arrivals, transfers with one-slot delivery delay, local gradient steps,
periodic weighted aggregation, membership churn, and full cost accounting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from . import learning, optimizer, topology
from .learning import Dataset
from .optimizer import CostLedger, MovementPlan, MovementProblem
from .topology import ChurnConfig, NetworkState

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """A configuration dictionary failed validation."""


def _take(data: dict, allowed: dict[str, Any], context: str) -> dict:
    """Strict-key merge of a config dict over defaults."""
    if not isinstance(data, dict):
        raise ConfigError(f"{context}: expected an object, got {type(data).__name__}")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    merged = dict(allowed)
    merged.update(data)
    return merged


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "full"            # full | random | watts_strogatz | hierarchical | singleton
    rho: float = 0.5
    neighbors: int = 4
    rewire_p: float = 0.1

    KINDS = ("full", "random", "watts_strogatz", "hierarchical", "singleton")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ConfigError(f"topology.kind must be one of {self.KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"           # blobs | idx
    dim: int = 32
    classes: int = 10
    train_size: int = 2000
    test_size: int = 500
    spread: float = 1.0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("blobs", "idx"):
            raise ConfigError(f"dataset.kind must be blobs or idx, got {self.kind!r}")
        if self.train_size < 1 or self.test_size < 1:
            raise ConfigError("dataset sizes must be >= 1")
        if self.kind == "idx":
            for name in ("train_images", "train_labels", "test_images", "test_labels"):
                if getattr(self, name) is None:
                    raise ConfigError(f"dataset.{name} is required for kind=idx")


@dataclass(frozen=True)
class CostConfig:
    kind: str = "uniform"         # uniform | trace
    low: float = 0.0
    high: float = 1.0
    path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "trace"):
            raise ConfigError(f"costs.kind must be uniform or trace, got {self.kind!r}")
        if self.kind == "trace" and not self.path:
            raise ConfigError("costs.path is required for kind=trace")


@dataclass(frozen=True)
class ErrorWeightConfig:
    base: float = 0.5
    schedule: str = "constant"    # constant | inverse_time

    def __post_init__(self) -> None:
        if self.schedule not in ("constant", "inverse_time"):
            raise ConfigError(
                f"error_weight.schedule must be constant or inverse_time, "
                f"got {self.schedule!r}"
            )


@dataclass(frozen=True)
class InfoConfig:
    kind: str = "perfect"         # perfect | imperfect
    intervals: int = 10

    def __post_init__(self) -> None:
        if self.kind not in ("perfect", "imperfect"):
            raise ConfigError("information.kind must be perfect or imperfect")
        if self.intervals < 1:
            raise ConfigError("information.intervals must be >= 1")


@dataclass(frozen=True)
class CapacityConfig:
    enforced: bool = False
    node: float | str | None = None   # number, "mean_arrivals", or None (unbounded)
    link: float | str | None = None

    def __post_init__(self) -> None:
        for name in ("node", "link"):
            v = getattr(self, name)
            if v is None or v == "mean_arrivals":
                continue
            if not isinstance(v, (int, float)) or v < 0:
                raise ConfigError(
                    f'capacities.{name} must be a number >= 0, "mean_arrivals", or null'
                )


@dataclass(frozen=True)
class LearningConfig:
    arch: str = "softmax"         # softmax | mlp
    hidden: int = 64
    step_size: float = 0.01

    def __post_init__(self) -> None:
        if self.arch not in ("softmax", "mlp"):
            raise ConfigError(f"learning.arch must be softmax or mlp, got {self.arch!r}")
        if self.step_size <= 0:
            raise ConfigError("learning.step_size must be > 0")


@dataclass(frozen=True)
class SimConfig:
    """Full description of one experiment run."""

    n: int = 10
    horizon: int = 100
    tau: int = 10
    optimizer: str = "none"       # none | greedy | linear | sqrt
    rounding: str = "fractional"  # fractional | integral
    sqrt_scale: float = 1.0
    arrival_mean: float | None = None
    seed: int = 0
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    churn: ChurnConfig = field(default_factory=ChurnConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    costs: CostConfig = field(default_factory=CostConfig)
    error_weight: ErrorWeightConfig = field(default_factory=ErrorWeightConfig)
    information: InfoConfig = field(default_factory=InfoConfig)
    capacities: CapacityConfig = field(default_factory=CapacityConfig)
    learning: LearningConfig = field(default_factory=LearningConfig)

    def __post_init__(self) -> None:
        if self.n < 1 or self.horizon < 1 or self.tau < 1:
            raise ConfigError("n, horizon and tau must all be >= 1")
        if self.optimizer not in ("none", "greedy", "linear", "sqrt"):
            raise ConfigError(f"optimizer must be none|greedy|linear|sqrt, got {self.optimizer!r}")
        if self.rounding not in ("fractional", "integral"):
            raise ConfigError("rounding must be fractional or integral")
        if self.topology.kind == "singleton" and self.n != 1:
            raise ConfigError("singleton topology requires n = 1")
        if self.topology.kind != "singleton" and self.n < 2:
            raise ConfigError("n >= 2 required except for the singleton topology")
        if self.horizon % self.tau != 0:
            logger.info(
                "horizon %d not divisible by aggregation period %d: "
                "the last window is short",
                self.horizon,
                self.tau,
            )

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        top = _take(
            data,
            {
                "n": 10, "horizon": 100, "tau": 10, "optimizer": "none",
                "rounding": "fractional", "sqrt_scale": 1.0, "arrival_mean": None,
                "seed": 0, "topology": {}, "churn": {}, "dataset": {},
                "costs": {}, "error_weight": {}, "information": {},
                "capacities": {}, "learning": {},
            },
            "config",
        )
        try:
            churn_d = _take(
                top["churn"], {"p_exit": 0.0, "p_entry": 0.0}, "config.churn"
            )
            return cls(
                n=int(top["n"]),
                horizon=int(top["horizon"]),
                tau=int(top["tau"]),
                optimizer=str(top["optimizer"]),
                rounding=str(top["rounding"]),
                sqrt_scale=float(top["sqrt_scale"]),
                arrival_mean=None if top["arrival_mean"] is None else float(top["arrival_mean"]),
                seed=int(top["seed"]),
                topology=TopologyConfig(**_take(
                    top["topology"],
                    {"kind": "full", "rho": 0.5, "neighbors": 4, "rewire_p": 0.1},
                    "config.topology",
                )),
                churn=ChurnConfig(p_exit=float(churn_d["p_exit"]),
                                  p_entry=float(churn_d["p_entry"])),
                dataset=DatasetConfig(**_take(
                    top["dataset"],
                    {
                        "kind": "blobs", "dim": 32, "classes": 10,
                        "train_size": 2000, "test_size": 500, "spread": 1.0,
                        "train_images": None, "train_labels": None,
                        "test_images": None, "test_labels": None,
                    },
                    "config.dataset",
                )),
                costs=CostConfig(**_take(
                    top["costs"],
                    {"kind": "uniform", "low": 0.0, "high": 1.0, "path": None},
                    "config.costs",
                )),
                error_weight=ErrorWeightConfig(**_take(
                    top["error_weight"],
                    {"base": 0.5, "schedule": "constant"},
                    "config.error_weight",
                )),
                information=InfoConfig(**_take(
                    top["information"],
                    {"kind": "perfect", "intervals": 10},
                    "config.information",
                )),
                capacities=CapacityConfig(**_take(
                    top["capacities"],
                    {"enforced": False, "node": None, "link": None},
                    "config.capacities",
                )),
                learning=LearningConfig(**_take(
                    top["learning"],
                    {"arch": "softmax", "hidden": 64, "step_size": 0.01},
                    "config.learning",
                )),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["churn"] = {"p_exit": self.churn.p_exit, "p_entry": self.churn.p_entry}
        return out


@dataclass
class SimResult:
    """Everything a run produced: realized flows, learning trajectory,
    membership series, and the cost ledger."""

    config: dict
    arrivals: np.ndarray           # (T, n) datapoints collected
    kept: np.ndarray               # (T, n) processed where collected
    offloaded: np.ndarray          # (T, n) shipped to a neighbor
    discarded: np.ndarray          # (T, n) dropped by plan
    overflow: np.ndarray           # (T, n) dropped by capacity clamps
    lost_transit: np.ndarray       # (T, n) in flight when an endpoint left
    processed: np.ndarray          # (T, n) batch actually worked
    in_transit: np.ndarray         # (T,) datapoints in flight after each slot
    batch_loss: np.ndarray         # (T, n) post-update loss, NaN for idle
    active_count: np.ndarray       # (T,) in-network devices per slot
    working_count: np.ndarray      # (T,) devices collecting/processing
    agg_slots: list[int]
    agg_loss: list[float]
    agg_accuracy: list[float]
    ledger: CostLedger
    movement_rate: np.ndarray      # (T,) offloaded+discarded over arrivals
    mean_active_per_window: float
    final_loss: float
    final_accuracy: float
    final_params: np.ndarray       # global model after the last aggregation

    def summary_dict(self) -> dict:
        rate = self.movement_rate[~np.isnan(self.movement_rate)]
        return {
            "config": self.config,
            "ledger": self.ledger.to_dict(),
            "accuracy": self.final_accuracy,
            "loss": self.final_loss,
            "aggregations": {
                "slots": self.agg_slots,
                "loss": self.agg_loss,
                "accuracy": self.agg_accuracy,
            },
            "data": {
                "arrived": float(self.arrivals.sum()),
                "kept": float(self.kept.sum()),
                "offloaded": float(self.offloaded.sum()),
                "discarded": float(self.discarded.sum()),
                "overflow": float(self.overflow.sum()),
                "lost_transit": float(self.lost_transit.sum()),
                "processed": float(self.processed.sum()),
            },
            "movement_rate": {
                "mean": float(rate.mean()) if rate.size else 0.0,
                "min": float(rate.min()) if rate.size else 0.0,
                "max": float(rate.max()) if rate.size else 0.0,
            },
            "membership": {
                "mean_active_per_window": self.mean_active_per_window,
                "mean_active_per_slot": float(self.active_count.mean()),
                "mean_working_per_slot": float(self.working_count.mean()),
            },
        }

    def timeseries_rows(self) -> list[tuple[int, int, str, float]]:
        """Long-form (slot, device, metric, value) rows; device -1 carries
        network-wide series.  Ordering is fixed for reproducibility."""
        T, n = self.arrivals.shape
        rows: list[tuple[int, int, str, float]] = []
        per_device = [
            ("arrivals", self.arrivals),
            ("batch_loss", self.batch_loss),
            ("discarded", self.discarded),
            ("kept", self.kept),
            ("lost_transit", self.lost_transit),
            ("offloaded", self.offloaded),
            ("overflow", self.overflow),
            ("processed", self.processed),
        ]
        agg = dict(zip(self.agg_slots, zip(self.agg_loss, self.agg_accuracy)))
        for t in range(T):
            for i in range(n):
                for name, arr in per_device:
                    rows.append((t, i, name, float(arr[t, i])))
            rows.append((t, -1, "active_count", float(self.active_count[t])))
            rows.append((t, -1, "in_transit", float(self.in_transit[t])))
            rows.append((t, -1, "movement_rate", float(self.movement_rate[t])))
            rows.append((t, -1, "working_count", float(self.working_count[t])))
            if t in agg:
                loss, acc = agg[t]
                rows.append((t, -1, "agg_accuracy", float(acc)))
                rows.append((t, -1, "agg_loss", float(loss)))
        return rows


# ---------------------------------------------------------------------------
# assembly helpers


def _spawn_seeds(seed: int) -> dict[str, int]:
    streams = ("dataset", "topology", "costs", "churn", "arrivals", "model")
    children = np.random.SeedSequence(seed).spawn(len(streams))
    return {
        name: int(child.generate_state(1, dtype=np.uint64)[0] % (2**63))
        for name, child in zip(streams, children)
    }


def build_dataset(cfg: SimConfig) -> tuple[Dataset, Dataset]:
    seeds = _spawn_seeds(cfg.seed)
    d = cfg.dataset
    if d.kind == "blobs":
        full = learning.gaussian_blobs(
            d.dim, d.classes, d.train_size + d.test_size, seeds["dataset"], d.spread
        )
        return learning.split_dataset(full, d.train_size, d.test_size, seeds["dataset"])
    train_full = learning.load_idx_dataset(d.train_images, d.train_labels, d.classes)
    test_full = learning.load_idx_dataset(d.test_images, d.test_labels, d.classes)
    rng = np.random.default_rng(seeds["dataset"])
    train_idx = rng.choice(len(train_full), size=d.train_size, replace=False)
    test_idx = rng.choice(len(test_full), size=d.test_size, replace=False)
    return train_full.subset(np.sort(train_idx)), test_full.subset(np.sort(test_idx))


def build_network(cfg: SimConfig) -> NetworkState:
    """Topology, costs, discard weights, and membership churn for a run."""
    seeds = _spawn_seeds(cfg.seed)
    T, n = cfg.horizon, cfg.n
    kind = cfg.topology.kind

    # costs are materialized first so the hierarchical builder can rank
    # processors by their realized slot-0 cost
    if cfg.costs.kind == "uniform":
        rng = np.random.default_rng(seeds["costs"])
        proc = rng.uniform(cfg.costs.low, cfg.costs.high, size=(T, n))
        link = rng.uniform(cfg.costs.low, cfg.costs.high, size=(T, n, n))
    else:
        shape_state = (
            topology.build_singleton(T)
            if n == 1
            else topology.build_fully_connected(n, T)
        )
        traced = topology.load_cost_trace(shape_state, cfg.costs.path)
        proc, link = traced.proc_cost, traced.link_cost

    if kind == "full":
        state = topology.build_fully_connected(n, T)
    elif kind == "singleton":
        state = topology.build_singleton(T)
    elif kind == "random":
        state = topology.build_random(n, cfg.topology.rho, seeds["topology"], T)
    elif kind == "watts_strogatz":
        state = topology.build_watts_strogatz(
            n, cfg.topology.neighbors, cfg.topology.rewire_p, seeds["topology"], T
        )
    else:
        state = topology.build_hierarchical(n, proc[0], seeds["topology"], T)

    state = replace(state, proc_cost=proc.copy(), link_cost=link.copy())
    state = topology.set_error_weights(
        state, cfg.error_weight.base, cfg.error_weight.schedule
    )

    if cfg.capacities.enforced:
        pool = cfg.dataset.train_size
        mean_rate = pool / (n * T)
        node = cfg.capacities.node
        link_cap = cfg.capacities.link
        proc_cap = np.full((T, n), math.inf)
        if node is not None:
            proc_cap[:, :] = mean_rate if node == "mean_arrivals" else float(node)
        lcap = np.full((T, n, n), math.inf)
        if link_cap is not None:
            lcap[:, :, :] = mean_rate if link_cap == "mean_arrivals" else float(link_cap)
        state = replace(state, proc_cap=proc_cap, link_cap=lcap)

    if cfg.churn.enabled:
        state = topology.apply_churn(
            state, ChurnConfig(cfg.churn.p_exit, cfg.churn.p_entry, seeds["churn"])
        )
    return state


def working_mask(state: NetworkState, tau: int) -> np.ndarray:
    """Which device-slots collect and process: in-network, and past any
    re-entry wait.  A device re-joining at slot t sits out until the
    aggregation window running at t completes."""
    T, n = state.horizon, state.n
    member = np.zeros((T, n), dtype=bool)
    for t in range(T):
        for i in state.active[t]:
            member[t, i] = True
    out = np.zeros((T, n), dtype=bool)
    eligible = np.zeros(n, dtype=int)
    for t in range(T):
        for i in range(n):
            if member[t, i] and t > 0 and not member[t - 1, i]:
                eligible[i] = tau * math.ceil((t + 1) / tau)
        out[t] = member[t] & (t >= eligible)
    return out


def _working_state(state: NetworkState, working: np.ndarray) -> NetworkState:
    """Restrict membership and links to working devices: what the planner
    treats as the usable network."""
    T = state.horizon
    active = tuple(
        frozenset(int(i) for i in np.flatnonzero(working[t])) for t in range(T)
    )
    edges = tuple(
        frozenset(
            (i, j) for (i, j) in state.edges[t] if working[t, i] and working[t, j]
        )
        for t in range(T)
    )
    return replace(state, active=active, edges=edges)


def build_problem(
    cfg: SimConfig, state: NetworkState, counts: np.ndarray
) -> MovementProblem:
    if cfg.optimizer == "sqrt":
        return optimizer.sqrt_problem(
            state,
            counts.astype(float),
            cfg.sqrt_scale,
            capacities_enforced=cfg.capacities.enforced,
        )
    return optimizer.linear_problem(
        state,
        counts.astype(float),
        capacities_enforced=cfg.capacities.enforced,
    )


def plan_movement(cfg: SimConfig, problem: MovementProblem) -> MovementPlan:
    """Solve for the run's plan under the configured information model."""
    if cfg.optimizer == "none":
        return optimizer.identity_plan(problem)
    if cfg.information.kind == "perfect":
        return _solve(cfg, problem)

    est = optimizer.estimate_problem(problem, cfg.information.intervals)
    T, n = problem.net.horizon, problem.net.n
    width = math.ceil(T / cfg.information.intervals)
    offload = np.zeros((T, n, n))
    discard = np.ones((T, n))
    for t in range(T):
        for i in problem.net.active[t]:
            offload[t, i, i] = 1.0   # devices the planner missed keep their data
            discard[t, i] = 0.0
    for l in range(cfg.information.intervals):
        lo, hi = l * width, min((l + 1) * width, T)
        if lo >= T:
            break
        sub = optimizer.slice_problem(est, lo, hi, topology_at=lo)
        sub_plan = _solve(cfg, sub)
        for tl in range(hi - lo):
            for i in sub.net.active[tl]:
                if sub.arrivals[tl, i] <= 0:
                    continue  # unobserved devices stay on the keep default
                offload[lo + tl, i, :] = sub_plan.offload[tl, i, :]
                discard[lo + tl, i] = sub_plan.discard[tl, i]
    # interval seams may schedule a transfer over a link that is gone by
    # delivery time; execution charges the loss, the plan just records it
    return MovementPlan(
        offload=offload,
        discard=discard,
        processed=optimizer.implied_processed(problem, offload),
    )


def _solve(cfg: SimConfig, problem: MovementProblem) -> MovementPlan:
    if cfg.optimizer == "greedy":
        return optimizer.greedy_unconstrained(problem)
    if cfg.optimizer == "linear":
        plan, _ = optimizer.solve_linear(problem)
        return plan
    plan, _ = optimizer.solve_sqrt(problem)
    return plan


# ---------------------------------------------------------------------------
# the slot engine


def simulate_on(
    cfg: SimConfig,
    state: NetworkState,
    train: Dataset,
    test: Dataset,
    counts: np.ndarray,
    slots: list[list[np.ndarray]],
    plan: MovementPlan,
    problem: MovementProblem | None = None,
) -> SimResult:
    """Execute a plan over a prepared network and arrival schedule.

    ``counts``/``slots`` give each device-slot's realized datapoints (ids
    into ``train``); the plan's fractions are applied to them with
    largest-remainder rounding for the integer path.  The ledger prices
    either the exact fractions or the integer flows per cfg.rounding.
    """
    T, n = state.horizon, state.n
    working = working_mask(state, cfg.tau)
    member = np.zeros((T, n), dtype=bool)
    for t in range(T):
        for i in state.active[t]:
            member[t, i] = True
    fractional = cfg.rounding == "fractional"
    caps_on = cfg.capacities.enforced
    linear_discard = cfg.optimizer != "sqrt"
    err_mask = None
    sqrt_scale = None
    if cfg.optimizer == "sqrt":
        if problem is None:
            raise ValueError("sqrt accounting needs the movement problem")
        err_mask = optimizer.error_term_mask(problem)
        sqrt_scale = problem.error_model.scale

    if cfg.learning.arch == "softmax":
        arch: learning.Arch = learning.SoftmaxArch(train.dim, train.classes)
    else:
        arch = learning.MlpArch(train.dim, cfg.learning.hidden, train.classes)
    seeds = _spawn_seeds(cfg.seed)
    global_w = arch.init_params(seeds["model"])
    models = [
        learning.ModelState(global_w.copy(), arch, cfg.learning.step_size)
        for _ in range(n)
    ]
    h_counts = np.zeros(n)

    kept = np.zeros((T, n))
    offloaded = np.zeros((T, n))
    discarded = np.zeros((T, n))
    overflow = np.zeros((T, n))
    lost_transit = np.zeros((T, n))
    processed = np.zeros((T, n))
    in_transit = np.zeros(T)
    batch_loss = np.full((T, n), np.nan)
    cost_process = 0.0
    cost_transfer = 0.0
    cost_discard = 0.0
    agg_slots: list[int] = []
    agg_loss: list[float] = []
    agg_accuracy: list[float] = []

    # parcels in flight: (src, dst, indices, fractional batch)
    transit: list[tuple[int, int, np.ndarray, float]] = []

    for t in range(T):
        arrived_idx: list[list[np.ndarray]] = [[] for _ in range(n)]
        arrived_amt = np.zeros(n)
        for src, dst, idxs, amt in transit:
            if member[t, src] and working[t, dst]:
                arrived_idx[dst].append(idxs)
                arrived_amt[dst] += amt
            else:
                lost_transit[t - 1, src] += len(idxs) if not fractional else amt
        transit = []

        for i in range(n):
            if not working[t, i]:
                continue
            a = int(counts[t, i])
            if a == 0:
                continue
            idx = slots[t][i]
            # targets come from the plan row, not the live edge set: a plan
            # built on stale membership may still schedule the send, and the
            # delivery check next slot realizes the loss
            targets = [
                j
                for j in range(n)
                if j != i and plan.offload[t, i, j] > 1e-12
            ] if t + 1 < T else []
            fracs = np.array(
                [plan.offload[t, i, i]]
                + [plan.offload[t, i, j] for j in targets]
                + [plan.discard[t, i]]
            )
            parts = learning.largest_remainder_split(a, fracs)
            cursor = 0
            pieces = []
            for p in parts:
                pieces.append(idx[cursor : cursor + p])
                cursor += p
            keep_ids, target_ids, drop_ids = pieces[0], pieces[1:-1], pieces[-1]

            keep_amt = a * plan.offload[t, i, i] if fractional else float(len(keep_ids))
            drop_amt = a * plan.discard[t, i] if fractional else float(len(drop_ids))
            kept[t, i] += len(keep_ids) if not fractional else keep_amt
            discarded[t, i] += len(drop_ids) if not fractional else drop_amt
            if linear_discard:
                cost_discard += state.err_weight[t, i] * drop_amt

            for j, ids in zip(targets, target_ids):
                want_int = len(ids)
                want_amt = a * plan.offload[t, i, j] if fractional else float(want_int)
                cap = state.link_cap[t, i, j] if caps_on else math.inf
                send_int = min(want_int, int(cap + 1e-9)) if math.isfinite(cap) else want_int
                send_amt = min(want_amt, cap)
                spill_int = want_int - send_int
                spill_amt = want_amt - send_amt
                if spill_int > 0 or spill_amt > 0:
                    overflow[t, i] += spill_int if not fractional else spill_amt
                    if linear_discard:
                        cost_discard += state.err_weight[t, i] * (
                            spill_amt if fractional else spill_int
                        )
                transit.append((i, j, ids[:send_int], send_amt))
                sent_rec = send_amt if fractional else float(send_int)
                offloaded[t, i] += sent_rec
                cost_transfer += sent_rec * state.link_cost[t, i, j]

            arrived_idx[i].insert(0, keep_ids)
            arrived_amt[i] += keep_amt

        in_transit[t] = sum(
            len(ids) if not fractional else amt for _, _, ids, amt in transit
        )

        for i in range(n):
            if not working[t, i]:
                continue
            chunks = arrived_idx[i]
            if not chunks:
                if err_mask is not None and err_mask[t, i]:
                    cost_discard += math.inf
                continue
            batch = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
            amt = arrived_amt[i]
            cap = state.proc_cap[t, i] if caps_on else math.inf
            take_int = min(len(batch), int(cap + 1e-9)) if math.isfinite(cap) else len(batch)
            take_amt = min(amt, cap)
            spill_int = len(batch) - take_int
            spill_amt = amt - take_amt
            if spill_int > 0 or spill_amt > 0:
                overflow[t, i] += spill_int if not fractional else spill_amt
                if linear_discard:
                    cost_discard += state.err_weight[t, i] * (
                        spill_amt if fractional else spill_int
                    )
            batch = batch[:take_int]
            rec = take_amt if fractional else float(take_int)
            processed[t, i] = rec
            cost_process += rec * state.proc_cost[t, i]
            if err_mask is not None and err_mask[t, i]:
                got = rec
                cost_discard += (
                    sqrt_scale[i] / math.sqrt(got) if got > 0 else math.inf
                )
            if len(batch):
                models[i] = learning.local_update(
                    models[i], train.features[batch], train.labels[batch]
                )
                h_counts[i] += len(batch)
                batch_loss[t, i] = models[i].arch.loss(
                    models[i].w, train.features[batch], train.labels[batch]
                )

        boundary = (t + 1) % cfg.tau == 0 or t == T - 1
        if boundary:
            contributions = [
                (float(h_counts[i]), models[i].w) for i in range(n) if working[t, i]
            ]
            if contributions:
                global_w = learning.aggregate(contributions, fallback=global_w)
            else:
                logger.warning("aggregation at slot %d saw no working devices", t)
            for i in range(n):
                models[i] = replace(models[i], w=global_w.copy())
            h_counts[:] = 0.0
            loss, acc = learning.evaluate(
                learning.ModelState(global_w, arch, cfg.learning.step_size), test
            )
            agg_slots.append(t)
            agg_loss.append(loss)
            agg_accuracy.append(acc)

    volume = float(counts.sum())
    total = cost_process + cost_transfer + cost_discard
    ledger = CostLedger(
        process=cost_process,
        transfer=cost_transfer,
        discard=cost_discard,
        total=total,
        unit_cost=total / volume if volume > 0 else 0.0,
    )

    with np.errstate(invalid="ignore", divide="ignore"):
        slot_arrivals = counts.sum(axis=1).astype(float)
        moved = (counts.sum(axis=1) - kept.sum(axis=1)).astype(float)
        movement_rate = np.where(slot_arrivals > 0, moved / slot_arrivals, np.nan)

    windows = range(0, T, cfg.tau)
    union_counts = [
        float(member[w : min(w + cfg.tau, T)].any(axis=0).sum()) for w in windows
    ]
    return SimResult(
        config=cfg.to_dict(),
        arrivals=counts.astype(float),
        kept=kept,
        offloaded=offloaded,
        discarded=discarded,
        overflow=overflow,
        lost_transit=lost_transit,
        processed=processed,
        in_transit=in_transit,
        batch_loss=batch_loss,
        active_count=member.sum(axis=1).astype(float),
        working_count=working.sum(axis=1).astype(float),
        agg_slots=agg_slots,
        agg_loss=agg_loss,
        agg_accuracy=agg_accuracy,
        ledger=ledger,
        movement_rate=movement_rate,
        mean_active_per_window=float(np.mean(union_counts)),
        final_loss=agg_loss[-1] if agg_loss else math.nan,
        final_accuracy=agg_accuracy[-1] if agg_accuracy else math.nan,
        final_params=global_w.copy(),
    )


def run(cfg: SimConfig) -> SimResult:
    """Build everything from the config and execute one full run."""
    train, test = build_dataset(cfg)
    state = build_network(cfg)
    working = working_mask(state, cfg.tau)
    seeds = _spawn_seeds(cfg.seed)
    counts, slots = learning.generate_arrivals(
        len(train), cfg.n, cfg.horizon, seeds["arrivals"],
        mean=cfg.arrival_mean, working=working,
    )
    plan_state = _working_state(state, working)
    problem = build_problem(cfg, plan_state, counts)
    plan = plan_movement(cfg, problem)
    return simulate_on(cfg, state, train, test, counts, slots, plan, problem)


def run_centralized(cfg: SimConfig) -> SimResult:
    """Reference run with every datapoint routed to one virtual node that
    takes one gradient step per slot; no movement, no movement costs."""
    solo = replace(
        cfg,
        n=1,
        topology=TopologyConfig(kind="singleton"),
        optimizer="none",
        churn=ChurnConfig(),
        capacities=CapacityConfig(),
        information=InfoConfig(),
    )
    return run(solo)


# ---------------------------------------------------------------------------
# parameter sweeps


SWEEP_AXES = ("n", "rho", "tau", "p_exit", "p_entry")


def _apply_axis(cfg: SimConfig, axis: str, value: float) -> SimConfig:
    if axis == "n":
        return replace(cfg, n=int(value))
    if axis == "tau":
        return replace(cfg, tau=int(value))
    if axis == "rho":
        if cfg.topology.kind != "random":
            raise ConfigError("sweeping rho needs topology.kind = random")
        return replace(cfg, topology=replace(cfg.topology, rho=float(value)))
    if axis == "p_exit":
        return replace(cfg, churn=ChurnConfig(float(value), cfg.churn.p_entry))
    if axis == "p_entry":
        return replace(cfg, churn=ChurnConfig(cfg.churn.p_exit, float(value)))
    raise ConfigError(f"unknown sweep axis {axis!r}; pick one of {SWEEP_AXES}")


def _sweep_one(job: tuple[SimConfig, str, float, int]) -> dict:
    cfg, axis, value, seed = job
    row: dict[str, Any] = {"axis": axis, "value": value, "seed": seed}
    try:
        result = run(replace(_apply_axis(cfg, axis, value), seed=seed))
        summary = result.summary_dict()
        row.update(
            unit_cost=result.ledger.unit_cost,
            process_cost=result.ledger.process,
            transfer_cost=result.ledger.transfer,
            discard_cost=result.ledger.discard,
            total_cost=result.ledger.total,
            accuracy=result.final_accuracy,
            loss=result.final_loss,
            movement_mean=summary["movement_rate"]["mean"],
            movement_min=summary["movement_rate"]["min"],
            movement_max=summary["movement_rate"]["max"],
            mean_active_per_window=result.mean_active_per_window,
            processed=summary["data"]["processed"],
            discarded=summary["data"]["discarded"],
            error="",
        )
    except Exception as exc:  # a failing point must not sink the sweep
        logger.warning("sweep point %s=%s seed=%d failed: %s", axis, value, seed, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(
    cfg: SimConfig,
    axis: str,
    values: list[float],
    seeds: list[int],
    jobs: int = 1,
) -> list[dict]:
    """Run the config once per (value, seed) pair along one axis, collecting
    one summary row each; failures are recorded per-row, not raised."""
    jobs_list = [(cfg, axis, v, s) for v in values for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_one, jobs_list))
    return [_sweep_one(job) for job in jobs_list]
