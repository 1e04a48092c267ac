"""Data-movement planning: decide per slot what fraction of each device's
collected batch to process locally, ship to each neighbor, or discard.

Offloaded data is processed by the receiver one slot later, so a plan
couples consecutive slots; the horizon's last slot never offloads.  Two
error surrogates are supported: a linear per-discarded-point penalty
(solved exactly as an LP) and a diminishing-returns penalty growing as
1/sqrt(processed batch) (solved by projected gradient descent)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .topology import NetworkState

logger = logging.getLogger(__name__)


class InfeasibleMovementError(ValueError):
    """No plan satisfies the capacities; `constraint` names the culprit."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        super().__init__(
            f"infeasible movement problem: {constraint}" + (f" ({detail})" if detail else "")
        )


class PreconditionError(ValueError):
    """The greedy rule was invoked where its slack-capacity assumption fails."""


@dataclass(frozen=True)
class LinearError:
    """Discard penalty weights[t][i] per datapoint dropped at device i, slot t."""

    weights: np.ndarray


@dataclass(frozen=True)
class SqrtError:
    """Error cost scale[i]/sqrt(processed batch) per device-slot that could
    process data.  network_scale/sqrt(total data) + mismatch is a constant
    offset outside the optimization; when network_scale is given it is
    reported in solver diagnostics, never optimized."""

    scale: np.ndarray
    network_scale: float | None = None
    mismatch: float = 0.0


@dataclass(frozen=True)
class MovementProblem:
    """A network, the datapoints arriving at each device-slot, and the error
    surrogate under which movement is costed."""

    net: NetworkState
    arrivals: np.ndarray               # (T, n) datapoints collected
    error_model: LinearError | SqrtError
    capacities_enforced: bool = False
    link_error_surcharge: float = 0.0  # added to every link cost

    def __post_init__(self) -> None:
        T, n = self.net.horizon, self.net.n
        if self.arrivals.shape != (T, n):
            raise ValueError(
                f"arrivals must have shape {(T, n)}, got {self.arrivals.shape}"
            )
        if not np.isfinite(self.arrivals).all() or (self.arrivals < 0).any():
            raise ValueError("arrivals must be finite and >= 0")
        for t in range(T):
            for i in range(n):
                if self.arrivals[t, i] > 0 and i not in self.net.active[t]:
                    raise ValueError(
                        f"arrivals[{t}][{i}] > 0 but the device is not in the network"
                    )
        if isinstance(self.error_model, LinearError):
            if self.error_model.weights.shape != (T, n):
                raise ValueError("linear error weights must have shape (T, n)")
            if (self.error_model.weights < 0).any():
                raise ValueError("linear error weights must be >= 0")
        elif isinstance(self.error_model, SqrtError):
            if self.error_model.scale.shape != (n,):
                raise ValueError("sqrt error scale must have shape (n,)")
            if (self.error_model.scale < 0).any():
                raise ValueError("sqrt error scale must be >= 0")
        else:
            raise TypeError(f"unknown error model {type(self.error_model).__name__}")
        if self.link_error_surcharge < 0 or not np.isfinite(self.link_error_surcharge):
            raise ValueError("link_error_surcharge must be finite and >= 0")

    @property
    def horizon(self) -> int:
        return self.net.horizon


def linear_problem(
    net: NetworkState,
    arrivals: np.ndarray,
    capacities_enforced: bool = False,
    link_error_surcharge: float = 0.0,
) -> MovementProblem:
    """Movement problem charged with the network's discard weights."""
    return MovementProblem(
        net=net,
        arrivals=np.asarray(arrivals, dtype=float),
        error_model=LinearError(weights=net.err_weight.copy()),
        capacities_enforced=capacities_enforced,
        link_error_surcharge=link_error_surcharge,
    )


def sqrt_problem(
    net: NetworkState,
    arrivals: np.ndarray,
    error_scale: float | np.ndarray,
    capacities_enforced: bool = False,
    link_error_surcharge: float = 0.0,
    network_scale: float | None = None,
    mismatch: float = 0.0,
) -> MovementProblem:
    """Movement problem under the diminishing-returns error surrogate."""
    scale = np.broadcast_to(np.asarray(error_scale, dtype=float), (net.n,)).copy()
    return MovementProblem(
        net=net,
        arrivals=np.asarray(arrivals, dtype=float),
        error_model=SqrtError(
            scale=scale, network_scale=network_scale, mismatch=mismatch
        ),
        capacities_enforced=capacities_enforced,
        link_error_surcharge=link_error_surcharge,
    )


@dataclass
class MovementPlan:
    """Per-slot split of each device's batch.

    offload[t][i][j] is the fraction of device i's slot-t batch sent to j
    (the diagonal j == i is the fraction processed locally) and
    discard[t][i] the fraction dropped.  processed[t][i] is the implied
    batch worked at (i, t): the local keep plus last slot's inbound.
    Device-slots with nothing to decide (no data, or out of the network)
    default to discard = 1 so every row is a total assignment.
    """

    offload: np.ndarray                # (T, n, n)
    discard: np.ndarray                # (T, n)
    processed: np.ndarray              # (T, n)
    diagnostics: dict | None = None

    def validate(self, problem: MovementProblem, atol: float = 1e-6) -> None:
        net, D = problem.net, problem.arrivals
        T, n = net.horizon, net.n
        if self.offload.shape != (T, n, n) or self.discard.shape != (T, n):
            raise ValueError("plan arrays have wrong shapes")
        if (self.offload < -atol).any() or (self.discard < -atol).any():
            raise ValueError("plan fractions must be >= 0")
        if (self.offload > 1 + atol).any() or (self.discard > 1 + atol).any():
            raise ValueError("plan fractions must be <= 1")
        row_sum = self.discard + self.offload.sum(axis=2)
        if np.abs(row_sum - 1.0).max() > atol:
            t, i = np.unravel_index(np.abs(row_sum - 1.0).argmax(), row_sum.shape)
            raise ValueError(
                f"plan row ({t},{i}) sums to {row_sum[t, i]:.8f}, expected 1"
            )
        for t in range(T):
            allowed = np.zeros((n, n), dtype=bool)
            np.fill_diagonal(allowed, True)
            if t < T - 1:
                for i, j in net.edges[t]:
                    allowed[i, j] = True
            bad = (np.abs(self.offload[t]) > atol) & ~allowed
            if bad.any():
                i, j = np.argwhere(bad)[0]
                what = "after the horizon's last slot" if t == T - 1 else "without a link"
                raise ValueError(f"plan offloads ({i}->{j}) at slot {t} {what}")
        implied = implied_processed(problem, self.offload)
        if np.abs(implied - self.processed).max() > atol:
            raise ValueError("processed does not match the offload schedule")
        if problem.capacities_enforced:
            slack = 1e-9 * (1.0 + np.abs(net.proc_cap))
            if (self.processed > net.proc_cap + slack).any():
                t, i = np.argwhere(self.processed > net.proc_cap + slack)[0]
                raise ValueError(f"processing capacity exceeded at ({t},{i})")
            moved = self.offload * D[:, :, None]
            lslack = 1e-9 * (1.0 + np.where(np.isfinite(net.link_cap), net.link_cap, 0))
            over = moved > net.link_cap + lslack
            over[:, range(n), range(n)] = False
            if over.any():
                t, i, j = np.argwhere(over)[0]
                raise ValueError(f"link capacity exceeded at ({t},{i}->{j})")


def implied_processed(problem: MovementProblem, offload: np.ndarray) -> np.ndarray:
    """Batch worked at each device-slot: own kept fraction plus the data
    every neighbor shipped during the previous slot."""
    D = problem.arrivals
    T, n = D.shape
    out = np.zeros((T, n))
    for t in range(T):
        out[t] = np.diag(offload[t]) * D[t]
        if t > 0:
            inbound = offload[t - 1].T @ D[t - 1]
            inbound -= np.diag(offload[t - 1]) * D[t - 1]
            out[t] += inbound
    return out


@dataclass(frozen=True)
class CostLedger:
    """Movement cost split of a plan: processing, transfer, and the error
    charge for data not processed, plus the per-datapoint total."""

    process: float
    transfer: float
    discard: float
    total: float
    unit_cost: float

    @classmethod
    def from_plan(cls, problem: MovementProblem, plan: MovementPlan) -> "CostLedger":
        net, D = problem.net, problem.arrivals
        T, n = net.horizon, net.n
        process = float((plan.processed * net.proc_cost).sum())
        transfer = 0.0
        for t in range(T - 1):
            moved = plan.offload[t] * D[t][:, None]
            np.fill_diagonal(moved, 0.0)
            transfer += float(
                (moved * (net.link_cost[t] + problem.link_error_surcharge)).sum()
            )
        if isinstance(problem.error_model, LinearError):
            discard = float(
                (problem.error_model.weights * D * plan.discard).sum()
            )
        else:
            scale = problem.error_model.scale
            mask = error_term_mask(problem)
            discard = 0.0
            for t, i in np.argwhere(mask):
                got = plan.processed[t, i]
                discard += scale[i] / math.sqrt(got) if got > 0 else math.inf
        total = process + transfer + discard
        volume = float(D.sum())
        return cls(
            process=process,
            transfer=transfer,
            discard=discard,
            total=total,
            unit_cost=total / volume if volume > 0 else 0.0,
        )

    def to_dict(self) -> dict:
        return {
            "process": self.process,
            "transfer": self.transfer,
            "discard": self.discard,
            "total": self.total,
            "unit_cost": self.unit_cost,
        }


# ---------------------------------------------------------------------------
# shared decision layout


@dataclass
class _Layout:
    """Flat variable indexing for all solvers: one block per device-slot
    holding data, ordered (discard, keep, offload targets ascending)."""

    rows: list[tuple[int, int]]
    row_start: list[int]
    row_targets: list[list[int]]       # offload targets per row
    nvar: int
    var_t: np.ndarray
    var_i: np.ndarray
    var_j: np.ndarray                  # -1 except offload vars
    var_kind: np.ndarray               # 0 discard, 1 keep, 2 offload

    def row_slice(self, r: int) -> slice:
        lo = self.row_start[r]
        hi = self.row_start[r + 1] if r + 1 < len(self.row_start) else self.nvar
        return slice(lo, hi)


def _build_layout(problem: MovementProblem) -> _Layout:
    net, D = problem.net, problem.arrivals
    T = net.horizon
    rows: list[tuple[int, int]] = []
    row_start: list[int] = []
    row_targets: list[list[int]] = []
    vt, vi, vj, vk = [], [], [], []
    for t in range(T):
        for i in sorted(net.active[t]):
            if D[t, i] <= 0:
                continue
            targets = []
            if t + 1 < T:
                nxt = net.active[t + 1]
                if i in nxt:
                    # a transfer only pays off if both ends are still
                    # around next slot: the sender's outbound is dropped
                    # when it leaves, and a gone receiver processes nothing
                    targets = [j for j in net.out_neighbors(t, i) if j in nxt]
            rows.append((t, i))
            row_start.append(len(vt))
            row_targets.append(targets)
            for kind, j in [(0, -1), (1, -1)] + [(2, j) for j in targets]:
                vt.append(t)
                vi.append(i)
                vj.append(j)
                vk.append(kind)
    return _Layout(
        rows=rows,
        row_start=row_start,
        row_targets=row_targets,
        nvar=len(vt),
        var_t=np.asarray(vt, dtype=int),
        var_i=np.asarray(vi, dtype=int),
        var_j=np.asarray(vj, dtype=int),
        var_kind=np.asarray(vk, dtype=int),
    )


def _plan_from_vars(problem: MovementProblem, layout: _Layout, x: np.ndarray) -> MovementPlan:
    net = problem.net
    T, n = net.horizon, net.n
    offload = np.zeros((T, n, n))
    discard = np.zeros((T, n))
    discard[:, :] = 1.0          # rows with nothing to decide drop by default
    for r, (t, i) in enumerate(layout.rows):
        vals = np.clip(x[layout.row_slice(r)], 0.0, 1.0)
        discard[t, i] = vals[0]
        offload[t, i, i] = vals[1]
        for k, j in enumerate(layout.row_targets[r]):
            offload[t, i, j] = vals[2 + k]
    plan = MovementPlan(
        offload=offload,
        discard=discard,
        processed=implied_processed(
            problem, offload
        ),
    )
    return plan


def _scan_capacities(problem: MovementProblem) -> None:
    """Capacities that no plan can satisfy raise before any solve."""
    if not problem.capacities_enforced:
        return
    net = problem.net
    for t in range(net.horizon):
        for i in sorted(net.active[t]):
            if net.proc_cap[t, i] < 0:
                raise InfeasibleMovementError(
                    f"proc_cap[{t}][{i}]", f"negative capacity {net.proc_cap[t, i]}"
                )
        for i, j in sorted(net.edges[t]):
            if net.link_cap[t, i, j] < 0:
                raise InfeasibleMovementError(
                    f"link_cap[{t}][{i}][{j}]",
                    f"negative capacity {net.link_cap[t, i, j]}",
                )


def _offload_bound(problem: MovementProblem, t: int, i: int, j: int) -> float:
    if not problem.capacities_enforced:
        return 1.0
    cap = problem.net.link_cap[t, i, j]
    if not np.isfinite(cap):
        return 1.0
    d = problem.arrivals[t, i]
    return min(1.0, cap / d) if d > 0 else 1.0


def error_term_mask(problem: MovementProblem) -> np.ndarray:
    """Device-slots whose diminishing-returns error term is part of the
    objective: the batch can actually be positive there and the device's
    error scale is nonzero.  Slots that can never see data would contribute
    a constant infinite term and are excluded (and counted in diagnostics).
    """
    if not isinstance(problem.error_model, SqrtError):
        raise TypeError("error term mask only applies to the sqrt error model")
    net, D = problem.net, problem.arrivals
    T, n = net.horizon, net.n
    layout = _build_layout(problem)
    reachable = np.zeros((T, n), dtype=bool)
    for r, (t, i) in enumerate(layout.rows):
        reachable[t, i] = True
        for j in layout.row_targets[r]:
            reachable[t + 1, j] = True
    scale_pos = problem.error_model.scale > 0
    return reachable & scale_pos[None, :]


# ---------------------------------------------------------------------------
# exact solve of the linear-surrogate program


def solve_linear(problem: MovementProblem) -> tuple[MovementPlan, CostLedger]:
    """Minimize processing + transfer + linear discard cost over all plans.

    The one-slot offload delay is unrolled into the objective (data sent
    to j at t is processed at j's slot-t+1 price), which leaves a pure LP
    over the per-row splits.
    """
    if not isinstance(problem.error_model, LinearError):
        raise TypeError("solve_linear needs the linear error model")
    _scan_capacities(problem)
    net, D = problem.net, problem.arrivals
    weights = problem.error_model.weights
    layout = _build_layout(problem)
    if layout.nvar == 0:
        plan = _plan_from_vars(problem, layout, np.zeros(0))
        plan.validate(problem)
        return plan, CostLedger(0.0, 0.0, 0.0, 0.0, 0.0)

    c_process = np.zeros(layout.nvar)
    c_transfer = np.zeros(layout.nvar)
    c_discard = np.zeros(layout.nvar)
    for v in range(layout.nvar):
        t, i, j, kind = (
            int(layout.var_t[v]),
            int(layout.var_i[v]),
            int(layout.var_j[v]),
            int(layout.var_kind[v]),
        )
        d = D[t, i]
        if kind == 0:
            c_discard[v] = weights[t, i] * d
        elif kind == 1:
            c_process[v] = net.proc_cost[t, i] * d
        else:
            c_transfer[v] = (
                net.link_cost[t, i, j] + problem.link_error_surcharge
            ) * d
            c_process[v] = net.proc_cost[t + 1, j] * d

    nrows = len(layout.rows)
    eq_cols = np.arange(layout.nvar)
    eq_rows = np.repeat(
        np.arange(nrows),
        [layout.row_slice(r).stop - layout.row_slice(r).start for r in range(nrows)],
    )
    a_eq = sp.csr_matrix(
        (np.ones(layout.nvar), (eq_rows, eq_cols)), shape=(nrows, layout.nvar)
    )
    b_eq = np.ones(nrows)

    bounds = []
    for v in range(layout.nvar):
        if layout.var_kind[v] == 2:
            ub = _offload_bound(
                problem, int(layout.var_t[v]), int(layout.var_i[v]), int(layout.var_j[v])
            )
        else:
            ub = 1.0
        bounds.append((0.0, ub))

    a_ub = None
    b_ub = None
    if problem.capacities_enforced:
        inbound: dict[tuple[int, int], list[int]] = {}
        keep_var: dict[tuple[int, int], int] = {}
        for v in range(layout.nvar):
            if layout.var_kind[v] == 1:
                keep_var[(int(layout.var_t[v]), int(layout.var_i[v]))] = v
            elif layout.var_kind[v] == 2:
                inbound.setdefault(
                    (int(layout.var_t[v]) + 1, int(layout.var_j[v])), []
                ).append(v)
        rows_d, cols_d, data_d, rhs = [], [], [], []
        rix = 0
        for t in range(net.horizon):
            for i in sorted(net.active[t]):
                cap = net.proc_cap[t, i]
                if not np.isfinite(cap):
                    continue
                entries = []
                v = keep_var.get((t, i))
                if v is not None:
                    entries.append((v, D[t, i]))
                for v in inbound.get((t, i), []):
                    entries.append((v, D[int(layout.var_t[v]), int(layout.var_i[v])]))
                if not entries:
                    continue
                for v, coef in entries:
                    rows_d.append(rix)
                    cols_d.append(v)
                    data_d.append(coef)
                rhs.append(cap)
                rix += 1
        if rix:
            a_ub = sp.csr_matrix(
                (data_d, (rows_d, cols_d)), shape=(rix, layout.nvar)
            )
            b_ub = np.asarray(rhs)

    res = linprog(
        c_process + c_transfer + c_discard,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
    )
    if res.status == 2:
        raise InfeasibleMovementError("processing capacity", res.message)
    if res.status != 0:
        raise RuntimeError(f"movement LP failed (status {res.status}): {res.message}")
    x = np.asarray(res.x)
    plan = _plan_from_vars(problem, layout, x)
    plan.validate(problem)
    ledger = CostLedger.from_plan(problem, plan)
    if abs(res.fun - ledger.total) > 1e-6 * (1.0 + abs(ledger.total)):
        logger.warning(
            "LP objective %.12g and plan cost %.12g disagree beyond tolerance",
            res.fun,
            ledger.total,
        )
    return plan, ledger


# ---------------------------------------------------------------------------
# greedy per-datapoint rule (exact when capacities are slack)


def greedy_unconstrained(problem: MovementProblem) -> MovementPlan:
    """Send each batch wholly to its cheapest fate: process at c_i(t),
    discard at f_i(t), or ship to the neighbor minimizing link cost plus
    next-slot processing cost.  Ties prefer processing, then offloading to
    the lowest id, then discarding.

    Valid only when capacities cannot bind: every device must be able to
    absorb its own batch plus everything its in-neighbors held last slot.
    """
    if not isinstance(problem.error_model, LinearError):
        raise TypeError("greedy rule needs the linear error model")
    _scan_capacities(problem)
    net, D = problem.net, problem.arrivals
    weights = problem.error_model.weights
    if problem.capacities_enforced:
        for t in range(net.horizon):
            for i in sorted(net.active[t]):
                worst = D[t, i]
                if t > 0:
                    worst += sum(D[t - 1, j] for j in net.in_neighbors(t - 1, i))
                if worst > net.proc_cap[t, i]:
                    raise PreconditionError(
                        f"device {i} at slot {t} could be handed {worst:.6g} "
                        f"datapoints but can process {net.proc_cap[t, i]:.6g}"
                    )

    layout = _build_layout(problem)
    x = np.zeros(layout.nvar)
    for r, (t, i) in enumerate(layout.rows):
        sl = layout.row_slice(r)
        # candidates as (cost, preference rank, var offset); lower wins
        options = [
            (net.proc_cost[t, i], 0, 1),
            (weights[t, i], 2, 0),
        ]
        best_link = None
        for k, j in enumerate(layout.row_targets[r]):
            cost = (
                net.link_cost[t, i, j]
                + problem.link_error_surcharge
                + net.proc_cost[t + 1, j]
            )
            if best_link is None or cost < best_link[0]:
                best_link = (cost, 1, 2 + k)
        if best_link is not None:
            options.append(best_link)
        _, _, offset = min(options, key=lambda o: (o[0], o[1]))
        x[sl.start + offset] = 1.0
    plan = _plan_from_vars(problem, layout, x)
    try:
        plan.validate(problem)
    except ValueError as exc:
        raise PreconditionError(f"greedy plan violates a capacity: {exc}") from exc
    return plan


# ---------------------------------------------------------------------------
# projected gradient solve of the diminishing-returns program


def _capped_simplex_project(v: np.ndarray, u: np.ndarray, pad: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto {0 <= x <= u, sum x = 1}.

    v, u are (rows, width) with pad marking unused slots (u = 0 there).
    Bisection on the common shift: sum(clip(v - shift, 0, u)) is monotone.
    """
    lo = (v - u).min(axis=1) - 1.0
    hi = v.max(axis=1) + 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        total = np.clip(v - mid[:, None], 0.0, u).sum(axis=1)
        high = total > 1.0
        lo = np.where(high, mid, lo)
        hi = np.where(high, hi, mid)
    out = np.clip(v - (0.5 * (lo + hi))[:, None], 0.0, u)
    out[pad] = 0.0
    return out


def solve_sqrt(
    problem: MovementProblem,
    max_iter: int = 4000,
    tol: float = 1e-7,
) -> tuple[MovementPlan, CostLedger]:
    """Minimize processing + transfer cost plus sum of scale/sqrt(batch)
    error terms by projected gradient descent with backtracking.

    The error term is smoothed as scale/sqrt(batch + eps) with a tiny eps
    so empty batches stay differentiable; the reported ledger uses the
    unsmoothed objective.  Node capacities enter through an escalating
    quadratic penalty followed by an exact repair pass (excess inbound is
    rescaled and the freed mass moved to the sender's discard); link
    capacities are plain bounds handled by the projection.
    """
    if not isinstance(problem.error_model, SqrtError):
        raise TypeError("solve_sqrt needs the sqrt error model")
    _scan_capacities(problem)
    net, D = problem.net, problem.arrivals
    T, n = net.horizon, net.n
    scale = problem.error_model.scale
    layout = _build_layout(problem)
    mask = error_term_mask(problem)
    eps = 1e-9 * max(float(D.max()) if D.size else 1.0, 1.0)

    if layout.nvar == 0:
        plan = _plan_from_vars(problem, layout, np.zeros(0))
        return plan, CostLedger.from_plan(problem, plan)

    is_keep = layout.var_kind == 1
    is_off = layout.var_kind == 2
    d_own = D[layout.var_t, layout.var_i]
    # where each variable's mass lands: (slot, device) of the processing
    land_t = np.where(is_off, layout.var_t + 1, layout.var_t)
    land_i = np.where(is_off, layout.var_j, layout.var_i)
    link_c = np.zeros(layout.nvar)
    off_idx = np.flatnonzero(is_off)
    link_c[off_idx] = (
        net.link_cost[layout.var_t[off_idx], layout.var_i[off_idx], layout.var_j[off_idx]]
        + problem.link_error_surcharge
    )

    nrows = len(layout.rows)
    width = max(
        layout.row_slice(r).stop - layout.row_slice(r).start for r in range(nrows)
    )
    pad = np.ones((nrows, width), dtype=bool)
    ub = np.zeros((nrows, width))
    scatter = np.zeros((nrows, width), dtype=int)
    for r in range(nrows):
        sl = layout.row_slice(r)
        lenr = sl.stop - sl.start
        pad[r, :lenr] = False
        scatter[r, :lenr] = np.arange(sl.start, sl.stop)
        for o in range(lenr):
            v = sl.start + o
            if layout.var_kind[v] == 2:
                ub[r, o] = _offload_bound(
                    problem,
                    int(layout.var_t[v]),
                    int(layout.var_i[v]),
                    int(layout.var_j[v]),
                )
            else:
                ub[r, o] = 1.0

    def to_rows(x: np.ndarray) -> np.ndarray:
        out = x[scatter]
        out[pad] = 0.0
        return out

    def from_rows(rowsx: np.ndarray) -> np.ndarray:
        x = np.zeros(layout.nvar)
        x[scatter[~pad]] = rowsx[~pad]
        return x

    def batches(x: np.ndarray) -> np.ndarray:
        got = np.zeros((T, n))
        np.add.at(got, (land_t[is_keep | is_off], land_i[is_keep | is_off]),
                  x[is_keep | is_off] * d_own[is_keep | is_off])
        return got

    caps_on = problem.capacities_enforced and np.isfinite(net.proc_cap).any()
    cap = net.proc_cap

    def objective_grad(x: np.ndarray, pen: float) -> tuple[float, np.ndarray]:
        got = batches(x)
        val = float((got * net.proc_cost).sum())
        val += float((x[off_idx] * d_own[off_idx] * link_c[off_idx]).sum())
        scale_grid = np.broadcast_to(scale[None, :], (T, n))
        val += float((scale_grid[mask] / np.sqrt(got[mask] + eps)).sum())
        dval_dbatch = net.proc_cost.copy()
        dval_dbatch[mask] -= 0.5 * scale_grid[mask] * (got[mask] + eps) ** -1.5
        if pen > 0 and caps_on:
            over = np.where(np.isfinite(cap), np.maximum(got - cap, 0.0), 0.0)
            val += 0.5 * pen * float((over ** 2).sum())
            dval_dbatch += pen * over
        grad = np.zeros(layout.nvar)
        landed = is_keep | is_off
        grad[landed] = dval_dbatch[land_t[landed], land_i[landed]] * d_own[landed]
        grad[off_idx] += d_own[off_idx] * link_c[off_idx]
        return val, grad

    # keep everything as the start: always box-feasible, never starves a row
    x = from_rows(
        _capped_simplex_project(
            to_rows(np.where(is_keep, 1.0, 0.0)), ub, pad
        )
    )
    penalties = [0.0]
    if caps_on:
        base = 10.0 * max(1.0, float(net.proc_cost.max()))
        penalties = [base, base * 1e2, base * 1e4]

    iters_used = 0
    converged = False
    step = None
    for pen in penalties:
        val, grad = objective_grad(x, pen)
        if step is None:
            step = 1.0 / (1.0 + float(np.abs(grad).max()))
        stall = 0
        for _ in range(max_iter):
            iters_used += 1
            accepted = False
            for _ in range(60):
                trial = from_rows(
                    _capped_simplex_project(to_rows(x - step * grad), ub, pad)
                )
                move = trial - x
                tval, tgrad = objective_grad(trial, pen)
                if tval <= val + float(grad @ move) + float(move @ move) / (2 * step):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            shift = float(np.abs(move).max()) / step
            x, val, grad = trial, tval, tgrad
            step *= 1.3
            if shift <= tol * (1.0 + float(np.abs(grad).max())):
                stall += 1
                if stall >= 3:
                    converged = True
                    break
            else:
                stall = 0
        else:
            converged = False

    # exact repair: shrink every overfull batch and move the freed mass
    # back to the senders' discard slots
    if caps_on:
        got = batches(x)
        senders: dict[tuple[int, int], list[int]] = {}
        for v in np.flatnonzero(is_keep | is_off):
            senders.setdefault((int(land_t[v]), int(land_i[v])), []).append(int(v))
        discard_var = {}
        for r, (t, i) in enumerate(layout.rows):
            discard_var[(t, i)] = layout.row_slice(r).start
        for t in range(T):
            for i in range(n):
                c = cap[t, i]
                if not np.isfinite(c) or got[t, i] <= c or got[t, i] <= 0:
                    continue
                keepfrac = c / got[t, i]
                for v in senders.get((t, i), []):
                    freed = x[v] * (1.0 - keepfrac)
                    x[v] *= keepfrac
                    x[discard_var[(int(layout.var_t[v]), int(layout.var_i[v]))]] += freed

    final_val, final_grad = objective_grad(x, 0.0)
    kkt = float(
        np.abs(
            x
            - from_rows(
                _capped_simplex_project(to_rows(x - final_grad), ub, pad)
            )
        ).max()
    )
    plan = _plan_from_vars(problem, layout, x)
    excluded = int((~mask & (scale[None, :] > 0)).sum())
    constant = None
    if problem.error_model.network_scale is not None:
        volume = float(D.sum())
        constant = (
            problem.error_model.network_scale / math.sqrt(volume)
            if volume > 0
            else math.inf
        ) + problem.error_model.mismatch
    plan.diagnostics = {
        "iterations": iters_used,
        "converged": converged,
        "kkt_residual": kkt,
        "smoothing": eps,
        "objective": final_val,
        "excluded_terms": excluded,
        "constant_error": constant,
    }
    if not converged:
        logger.warning(
            "sqrt solve stopped after %d iterations with residual %.3g",
            iters_used,
            kkt,
        )
    plan.validate(problem)
    return plan, CostLedger.from_plan(problem, plan)


# ---------------------------------------------------------------------------
# interval estimation for planning without the current slot's parameters


@dataclass(frozen=True)
class EstimationPriors:
    """Parameter guesses for the first interval, before anything has been
    observed.  The defaults make keeping everything optimal: processing
    looks free, links look expensive, and a unit batch keeps rows alive."""

    proc_cost: float = 0.0
    link_cost: float = 1.0
    arrivals: float = 1.0
    proc_cap: float = math.inf
    link_cap: float = math.inf


def estimate_problem(
    observed: MovementProblem,
    intervals: int,
    priors: EstimationPriors | None = None,
) -> MovementProblem:
    """Replace every parameter series by its previous-interval average.

    The horizon splits into ``intervals`` contiguous intervals (the last
    may be shorter); interval l's costs, arrivals, and capacities are the
    means of interval l-1's observations, restricted to slots where the
    device (or link) was in the network.  Interval 0 and series with no
    observations fall back to the priors (logged).  Discard weights are
    system-chosen, not observed, so they pass through unchanged.
    """
    if intervals < 1 or intervals > observed.horizon:
        raise ValueError(
            f"intervals must lie in [1, horizon], got {intervals} for "
            f"horizon {observed.horizon}"
        )
    priors = priors or EstimationPriors()
    net, D = observed.net, observed.arrivals
    T, n = net.horizon, net.n
    width = math.ceil(T / intervals)
    proc_cost = np.full((T, n), priors.proc_cost)
    link_cost = np.full((T, n, n), priors.link_cost)
    arrivals = np.full((T, n), priors.arrivals)
    proc_cap = np.full((T, n), priors.proc_cap)
    link_cap = np.full((T, n, n), priors.link_cap)

    for l in range(intervals):
        lo, hi = l * width, min((l + 1) * width, T)
        if lo >= T:
            break
        if l == 0:
            continue
        plo, phi = (l - 1) * width, min(l * width, T)
        for i in range(n):
            slots = [s for s in range(plo, phi) if i in net.active[s]]
            if not slots:
                logger.info(
                    "estimation: device %d unseen in interval %d, using priors", i, l - 1
                )
                continue
            proc_cost[lo:hi, i] = np.mean([net.proc_cost[s, i] for s in slots])
            arrivals[lo:hi, i] = np.mean([D[s, i] for s in slots])
            proc_cap[lo:hi, i] = np.mean([net.proc_cap[s, i] for s in slots])
        pairs = set()
        for s in range(plo, phi):
            pairs.update(net.edges[s])
        for i, j in sorted(pairs):
            slots = [s for s in range(plo, phi) if (i, j) in net.edges[s]]
            link_cost[lo:hi, i, j] = np.mean([net.link_cost[s, i, j] for s in slots])
            link_cap[lo:hi, i, j] = np.mean([net.link_cap[s, i, j] for s in slots])

    # estimates describe devices the planner cannot see arriving; zero out
    # arrivals at device-slots that are out of the network so the problem
    # stays well formed
    for t in range(T):
        for i in range(n):
            if i not in net.active[t]:
                arrivals[t, i] = 0.0

    est_net = replace(
        net,
        proc_cost=proc_cost,
        link_cost=link_cost,
        proc_cap=proc_cap,
        link_cap=link_cap,
    )
    return MovementProblem(
        net=est_net,
        arrivals=arrivals,
        error_model=observed.error_model,
        capacities_enforced=observed.capacities_enforced,
        link_error_surcharge=observed.link_error_surcharge,
    )


def slice_problem(
    problem: MovementProblem,
    start: int,
    stop: int,
    topology_at: int | None = None,
) -> MovementProblem:
    """Sub-problem over slots [start, stop).  With ``topology_at`` the
    membership and links are frozen at that slot for the whole slice (what
    a planner standing there can see); otherwise they vary per slot."""
    T = problem.horizon
    if not 0 <= start < stop <= T:
        raise ValueError(f"bad slice [{start}, {stop}) for horizon {T}")
    net = problem.net
    span = stop - start
    if topology_at is None:
        active = net.active[start:stop]
        edges = net.edges[start:stop]
    else:
        active = tuple(net.active[topology_at] for _ in range(span))
        edges = tuple(net.edges[topology_at] for _ in range(span))
    sub_net = replace(
        net,
        horizon=span,
        active=active,
        edges=edges,
        proc_cost=net.proc_cost[start:stop].copy(),
        link_cost=net.link_cost[start:stop].copy(),
        proc_cap=net.proc_cap[start:stop].copy(),
        link_cap=net.link_cap[start:stop].copy(),
        err_weight=net.err_weight[start:stop].copy(),
    )
    arrivals = problem.arrivals[start:stop].copy()
    # membership may have been frozen; drop arrivals at now-invisible slots
    for t in range(span):
        for i in range(net.n):
            if i not in active[t]:
                arrivals[t, i] = 0.0
    if isinstance(problem.error_model, LinearError):
        model: LinearError | SqrtError = LinearError(
            weights=problem.error_model.weights[start:stop].copy()
        )
    else:
        model = problem.error_model
    return MovementProblem(
        net=sub_net,
        arrivals=arrivals,
        error_model=model,
        capacities_enforced=problem.capacities_enforced,
        link_error_surcharge=problem.link_error_surcharge,
    )


# ---------------------------------------------------------------------------
# plain-data serialization (config files, CLI round trips)


def _cap_list(arr: np.ndarray) -> list:
    return [
        [None if math.isinf(v) else float(v) for v in row] for row in arr.tolist()
    ]


def _cap_array(data: list, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.array(
        [[math.inf if v is None else float(v) for v in row] for row in data]
    )
    if arr.shape != shape:
        raise ValueError(f"capacity table has shape {arr.shape}, expected {shape}")
    return arr


def problem_to_dict(problem: MovementProblem) -> dict:
    net = problem.net
    T = net.horizon
    link_cost = []
    link_cap = []
    for t in range(T):
        for i, j in sorted(net.edges[t]):
            link_cost.append([t, i, j, float(net.link_cost[t, i, j])])
            if math.isfinite(net.link_cap[t, i, j]):
                link_cap.append([t, i, j, float(net.link_cap[t, i, j])])
    if isinstance(problem.error_model, LinearError):
        model = {"kind": "linear", "weights": problem.error_model.weights.tolist()}
    else:
        model = {
            "kind": "sqrt",
            "scale": problem.error_model.scale.tolist(),
            "network_scale": problem.error_model.network_scale,
            "mismatch": problem.error_model.mismatch,
        }
    return {
        "n": net.n,
        "horizon": T,
        "active": [sorted(net.active[t]) for t in range(T)],
        "edges": [[list(e) for e in sorted(net.edges[t])] for t in range(T)],
        "proc_cost": net.proc_cost.tolist(),
        "link_cost": link_cost,
        "proc_cap": _cap_list(net.proc_cap),
        "link_cap": link_cap,
        "arrivals": problem.arrivals.tolist(),
        "error_model": model,
        "capacities_enforced": problem.capacities_enforced,
        "link_error_surcharge": problem.link_error_surcharge,
    }


def problem_from_dict(data: dict) -> MovementProblem:
    required = {
        "n", "horizon", "active", "edges", "proc_cost", "link_cost",
        "proc_cap", "link_cap", "arrivals", "error_model",
        "capacities_enforced", "link_error_surcharge",
    }
    unknown = set(data) - required
    if unknown:
        raise ValueError(f"unknown problem fields: {sorted(unknown)}")
    missing = required - set(data)
    if missing:
        raise ValueError(f"missing problem fields: {sorted(missing)}")
    n, T = int(data["n"]), int(data["horizon"])
    link_cost = np.zeros((T, n, n))
    for t, i, j, v in data["link_cost"]:
        link_cost[int(t), int(i), int(j)] = float(v)
    link_cap = np.full((T, n, n), math.inf)
    for t, i, j, v in data["link_cap"]:
        link_cap[int(t), int(i), int(j)] = float(v)
    model_data = data["error_model"]
    model: LinearError | SqrtError
    if model_data.get("kind") == "linear":
        model = LinearError(weights=np.asarray(model_data["weights"], dtype=float))
        err_weight = model.weights
    elif model_data.get("kind") == "sqrt":
        model = SqrtError(
            scale=np.asarray(model_data["scale"], dtype=float),
            network_scale=model_data.get("network_scale"),
            mismatch=float(model_data.get("mismatch", 0.0)),
        )
        err_weight = np.zeros((T, n))
    else:
        raise ValueError(f"unknown error model kind {model_data.get('kind')!r}")
    net = NetworkState(
        n=n,
        horizon=T,
        active=tuple(frozenset(int(i) for i in row) for row in data["active"]),
        edges=tuple(
            frozenset((int(i), int(j)) for i, j in row) for row in data["edges"]
        ),
        proc_cost=np.asarray(data["proc_cost"], dtype=float),
        link_cost=link_cost,
        proc_cap=_cap_array(data["proc_cap"], (T, n)),
        link_cap=link_cap,
        err_weight=err_weight,
    )
    return MovementProblem(
        net=net,
        arrivals=np.asarray(data["arrivals"], dtype=float),
        error_model=model,
        capacities_enforced=bool(data["capacities_enforced"]),
        link_error_surcharge=float(data["link_error_surcharge"]),
    )


def plan_to_dict(plan: MovementPlan) -> dict:
    out = {
        "offload": plan.offload.tolist(),
        "discard": plan.discard.tolist(),
        "processed": plan.processed.tolist(),
    }
    if plan.diagnostics is not None:
        out["diagnostics"] = plan.diagnostics
    return out


def plan_from_dict(data: dict) -> MovementPlan:
    allowed = {"offload", "discard", "processed", "diagnostics"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown plan fields: {sorted(unknown)}")
    return MovementPlan(
        offload=np.asarray(data["offload"], dtype=float),
        discard=np.asarray(data["discard"], dtype=float),
        processed=np.asarray(data["processed"], dtype=float),
        diagnostics=data.get("diagnostics"),
    )


def identity_plan(problem: MovementProblem) -> MovementPlan:
    """Keep-everything plan: every in-network device processes its own
    batch; out-of-network rows discard by convention."""
    net = problem.net
    T, n = net.horizon, net.n
    offload = np.zeros((T, n, n))
    discard = np.ones((T, n))
    for t in range(T):
        for i in net.active[t]:
            offload[t, i, i] = 1.0
            discard[t, i] = 0.0
    return MovementPlan(
        offload=offload,
        discard=discard,
        processed=implied_processed(problem, offload),
    )
