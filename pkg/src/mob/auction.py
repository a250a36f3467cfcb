"""Stateless single-item reverse VCG auction (second-price, lowest bid wins)
plus a simulation harness verifying dominant-strategy incentive compatibility.

The auction takes a list of bids and a random source and returns everything
it computes; nothing persists between calls. Payments are diagnostic only.
"""

from dataclasses import dataclass, field

import numpy as np


class AuctionError(ValueError):
    pass


@dataclass(frozen=True)
class Bid:
    """One expert's declared cost for a batch: alpha*exec + beta*forget."""

    expert_id: int
    exec_cost: float
    forget_cost: float
    total: float

    @classmethod
    def make(cls, expert_id, exec_cost, forget_cost, alpha, beta):
        return cls(expert_id=expert_id, exec_cost=float(exec_cost),
                   forget_cost=float(forget_cost),
                   total=float(alpha * exec_cost + beta * forget_cost))


@dataclass(frozen=True)
class AuctionResult:
    winner: int
    payment: float | None  # None when there is no competing bidder
    all_bids: tuple = field(default=())
    tie_broken: bool = False


def run_auction(bids: list[Bid], rng: np.random.Generator) -> AuctionResult:
    """Lowest total wins; payment is the lowest total among the others.

    Exact ties on the minimum are broken uniformly at random via rng.
    """
    if not bids:
        raise AuctionError("empty bid list")
    for b in bids:
        if not np.isfinite(b.total):
            raise AuctionError(f"non-finite bid from expert {b.expert_id}")
    totals = np.array([b.total for b in bids])
    lo = totals.min()
    tied = np.flatnonzero(totals == lo)
    tie_broken = tied.size > 1
    win_idx = int(tied[rng.integers(tied.size)]) if tie_broken else int(tied[0])
    if len(bids) == 1:
        payment = None
    else:
        payment = float(min(t for i, t in enumerate(totals) if i != win_idx))
    ordered = tuple(sorted(bids, key=lambda b: b.expert_id))
    return AuctionResult(winner=bids[win_idx].expert_id, payment=payment,
                        all_bids=ordered, tie_broken=tie_broken)


@dataclass(frozen=True)
class DsicReport:
    violations: int
    trials: int


def _utility(costs, declared, agent, tie_seed):
    """Reverse-auction utility of `agent` declaring `declared[agent]`."""
    bids = [Bid(expert_id=i, exec_cost=declared[i], forget_cost=0.0,
                total=float(declared[i])) for i in range(len(declared))]
    res = run_auction(bids, np.random.default_rng(tie_seed))
    if res.winner == agent and res.payment is not None:
        return res.payment - costs[agent]
    return 0.0


def check_dsic(n_experts: int, n_trials: int,
               rng: np.random.Generator) -> DsicReport:
    """Search for profitable unilateral deviations from truthful bidding.

    Random cost profiles in [0, 10]^N; one agent deviates to a random bid
    != its cost; opponents and tie-breaking seed are held fixed. A
    violation is a strictly higher utility for the deviation. Second-price
    truthfulness is exact, so the expected count is 0, not approximately 0.
    """
    if n_experts < 2:
        raise AuctionError("need at least 2 experts")
    violations = 0
    for _ in range(n_trials):
        costs = rng.uniform(0.0, 10.0, size=n_experts)
        agent = int(rng.integers(n_experts))
        dev = float(rng.uniform(0.0, 10.0))
        while dev == costs[agent]:
            dev = float(rng.uniform(0.0, 10.0))
        tie_seed = int(rng.integers(2 ** 32))
        u_truth = _utility(costs, costs, agent, tie_seed)
        deviated = costs.copy()
        deviated[agent] = dev
        u_dev = _utility(costs, deviated, agent, tie_seed)
        if u_dev > u_truth:
            violations += 1
    return DsicReport(violations=violations, trials=n_trials)


def check_dsic_grid(grid=range(10)) -> DsicReport:
    """Exhaustive 2-bidder check over integer costs and deviations."""
    trials = 0
    violations = 0
    for c0 in grid:
        for c1 in grid:
            costs = np.array([float(c0), float(c1)])
            for agent in (0, 1):
                for dev in grid:
                    if dev == costs[agent]:
                        continue
                    for tie_seed in (0, 1):
                        trials += 1
                        u_truth = _utility(costs, costs, agent, tie_seed)
                        deviated = costs.copy()
                        deviated[agent] = float(dev)
                        u_dev = _utility(costs, deviated, agent, tie_seed)
                        if u_dev > u_truth:
                            violations += 1
    return DsicReport(violations=violations, trials=trials)
