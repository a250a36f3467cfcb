"""The MoB training loop: bid collection, auction routing, winner-only
EWC training, and consolidation (explicit boundaries or self-monitored).

Per-batch flow: every expert prices the batch (read-only), the second-price
reverse auction picks the cheapest, only the winner takes one SGD step on
task-loss + EWC-penalty gradient. Consolidation snapshots the winner's
params as the EWC anchor and accumulates its Fisher diagonal from a
reservoir of batches it won.
"""

from collections import deque
from dataclasses import dataclass, field, asdict

import numpy as np

from . import ewc, nn
from .auction import Bid, run_auction
from .nn import Batch, ModelSpec

EXPLICIT = "explicit"
SELF_MONITOR = "self_monitor"


@dataclass(frozen=True)
class MobConfig:
    n_experts: int = 4
    alpha: float = 1.0            # weight on execution cost in the bid
    beta: float = 1.0             # weight on forgetting cost in the bid
    forget_scale: float = 0.05    # scales Fisher magnitude into a cost
    lambda_ewc: float = 2e6
    lr: float = 0.1
    batch_size: int = 32
    hidden_sizes: tuple = (256,)
    activation: str = "tanh"      # keeps the Fisher dense (no dead units)
    boundary_mode: str = EXPLICIT
    window_size: int = 50         # W: loss ring buffer length
    tau_commit: float = 0.3       # CV threshold for commit consolidation
    ema_decay: float = 0.99       # rho
    spike_factor: float = 3.0     # kappa
    fisher_max_examples: int = 512
    reservoir_capacity: int = 64  # batches
    seed: int = 0

    def __post_init__(self):
        if self.n_experts < 1:
            raise ValueError("n_experts must be >= 1")
        if self.alpha + self.beta <= 0:
            raise ValueError("alpha + beta must be positive")
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")
        if self.reservoir_capacity < 1:
            raise ValueError("reservoir_capacity must be >= 1")
        if self.boundary_mode not in (EXPLICIT, SELF_MONITOR):
            raise ValueError(f"unknown boundary_mode {self.boundary_mode!r}")
        if not (0.0 < self.ema_decay < 1.0):
            raise ValueError("ema_decay must be in (0, 1)")
        if self.spike_factor <= 1.0:
            raise ValueError("spike_factor must exceed 1")

    def model_spec(self, input_dim=784, n_classes=10, expert_id=0) -> ModelSpec:
        return ModelSpec(
            layer_sizes=(input_dim, *self.hidden_sizes, n_classes),
            activation=self.activation,
            init_seed=self.seed ^ expert_id)


class ReservoirBuffer:
    """Uniform reservoir of won batches, bounded at `capacity`."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.items: list[Batch] = []
        self.seen = 0

    def offer(self, batch: Batch):
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append(batch)
        else:
            j = int(self.rng.integers(self.seen))
            if j < self.capacity:
                self.items[j] = batch

    def clear(self):
        self.items = []
        self.seen = 0

    def __len__(self):
        return len(self.items)


@dataclass
class ExpertAgent:
    """One bidder: a model, its EWC state, and self-monitoring bookkeeping."""

    id: int
    spec: ModelSpec
    params: np.ndarray
    ewc_state: ewc.EwcState
    reservoir: ReservoirBuffer
    loss_window: deque = None
    ema_loss: float | None = None
    wins_this_task: int = 0
    lifetime_wins: int = 0
    wins_since_consolidation: int = 0

    @classmethod
    def fresh(cls, expert_id: int, config: MobConfig,
              input_dim=784, n_classes=10) -> "ExpertAgent":
        spec = config.model_spec(input_dim, n_classes, expert_id)
        return cls(
            id=expert_id,
            spec=spec,
            params=nn.init_params(spec),
            ewc_state=ewc.EwcState.fresh(spec.n_params, config.lambda_ewc),
            reservoir=ReservoirBuffer(
                config.reservoir_capacity,
                np.random.default_rng(
                    np.random.SeedSequence([config.seed, expert_id, 1]))),
            loss_window=deque(maxlen=config.window_size),
        )

    def fisher_rng(self) -> np.random.Generator:
        # fresh stream per consolidation keeps replays deterministic
        return np.random.default_rng(np.random.SeedSequence(
            [self.spec.init_seed, self.ewc_state.consolidation_count, 2]))


def compute_bid(agent: ExpertAgent, batch: Batch, config: MobConfig) -> Bid:
    """Price a batch without touching agent state."""
    exec_cost = nn.mean_loss(agent.spec, agent.params, batch)
    forget_cost = config.forget_scale * ewc.fisher_magnitude(agent.ewc_state)
    return Bid.make(agent.id, exec_cost, forget_cost, config.alpha, config.beta)


def combined_loss_and_grad(agent: ExpertAgent, batch: Batch):
    """Task loss plus EWC penalty, with the exact summed gradient."""
    loss, grad = nn.loss_and_grad(agent.spec, agent.params, batch)
    penalty, pgrad = ewc.ewc_penalty_and_grad(agent.ewc_state, agent.params)
    return loss + penalty, grad + pgrad


def train_winner(agent: ExpertAgent, batch: Batch, config: MobConfig) -> float:
    """One SGD step on the task loss, then a closed-form proximal step on
    the EWC penalty; returns the pre-step task loss.

    The quadratic penalty is applied implicitly (per-coordinate shrink
    toward the anchor) rather than through its explicit gradient: the
    Fisher diagonal spans many orders of magnitude, so any penalty weight
    strong enough to protect typical coordinates makes an explicit combined
    step diverge on the largest ones (stability needs lr*lambda*F_max < 2).
    The proximal form agrees with the explicit step to O(lr^2) where that
    step is stable, and is unconditionally stable everywhere else.
    """
    loss, grad = nn.loss_and_grad(agent.spec, agent.params, batch)
    params = nn.sgd_step(agent.params, grad, config.lr)
    state = agent.ewc_state
    if state.consolidation_count > 0:
        stiff = config.lr * state.lambda_ewc * state.fisher
        params = (params + stiff * state.anchor) / (1.0 + stiff)
    agent.params = params
    agent.loss_window.append(loss)
    agent.reservoir.offer(batch)
    agent.ema_loss = (loss if agent.ema_loss is None
                      else config.ema_decay * agent.ema_loss
                      + (1.0 - config.ema_decay) * loss)
    agent.wins_this_task += 1
    agent.lifetime_wins += 1
    agent.wins_since_consolidation += 1
    return loss


COMMIT = "cv_commit"
SPIKE = "ema_spike"
BOUNDARY = "explicit_boundary"


def self_monitor(agent: ExpertAgent, loss_before: float,
                 config: MobConfig) -> str | None:
    """Decide whether the agent should consolidate after a won batch.

    Commit: full window, coefficient of variation below tau_commit, and a
    refractory period of window_size wins since the last consolidation.
    Spike: incoming loss exceeds spike_factor x EMA with at least half a
    window of history.
    """
    w = agent.loss_window
    window_full = len(w) == config.window_size
    if window_full and agent.wins_since_consolidation >= config.window_size:
        mu = float(np.mean(w))
        cv = 0.0 if mu == 0.0 else float(np.std(w) / mu)
        if cv < config.tau_commit:
            return COMMIT
    if (agent.ema_loss is not None
            and loss_before > config.spike_factor * agent.ema_loss
            and len(w) >= config.window_size // 2):
        return SPIKE
    return None


def _consolidate_agent(agent: ExpertAgent, config: MobConfig,
                       exclude: Batch | None = None) -> bool:
    batches = [b for b in agent.reservoir.items if b is not exclude]
    if not batches:
        return False
    agent.ewc_state = ewc.consolidate(
        agent.ewc_state, agent.spec, agent.params, batches,
        config.fisher_max_examples, rng=agent.fisher_rng())
    agent.wins_since_consolidation = 0
    return True


@dataclass
class StepLog:
    """One auction round, fully explaining the routing decision."""

    step_index: int
    bids: list          # [{expert, exec, forget, total}, ...] by expert id
    winner: int
    payment: float | None
    tie_broken: bool
    loss_before: float
    loss_after: float
    consolidations: list = field(default_factory=list)  # [(expert, reason)]

    def to_dict(self):
        return asdict(self)


class MobEngine:
    """Expert pool plus the per-batch auction/train/monitor loop."""

    def __init__(self, config: MobConfig, input_dim=784, n_classes=10):
        self.config = config
        self.agents = [ExpertAgent.fresh(i, config, input_dim, n_classes)
                       for i in range(config.n_experts)]
        self.rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 0xA0C]))
        self.step_index = 0

    def step(self, batch: Batch) -> StepLog:
        config = self.config
        bids = [compute_bid(a, batch, config) for a in self.agents]
        result = run_auction(bids, self.rng)
        winner = self.agents[result.winner]
        loss_before = train_winner(winner, batch, config)
        consolidations = []
        if config.boundary_mode == SELF_MONITOR:
            decision = self_monitor(winner, loss_before, config)
            if decision == COMMIT:
                if _consolidate_agent(winner, config):
                    consolidations.append((winner.id, COMMIT))
                    winner.loss_window.clear()
            elif decision == SPIKE:
                # exclude the shifted-distribution batch from the Fisher
                if _consolidate_agent(winner, config, exclude=batch):
                    consolidations.append((winner.id, SPIKE))
                    winner.loss_window.clear()
                    winner.reservoir.clear()
        loss_after = nn.mean_loss(winner.spec, winner.params, batch)
        log = StepLog(
            step_index=self.step_index,
            bids=[{"expert": b.expert_id, "exec": b.exec_cost,
                   "forget": b.forget_cost, "total": b.total}
                  for b in result.all_bids],
            winner=result.winner,
            payment=result.payment,
            tie_broken=result.tie_broken,
            loss_before=loss_before,
            loss_after=loss_after,
            consolidations=consolidations,
        )
        self.step_index += 1
        return log

    def explicit_boundary(self) -> list:
        """Consolidate every expert that won batches this task.

        Agents with empty reservoirs are skipped. Windows and per-task win
        counters reset for everyone; reservoirs persist so each expert keeps
        a uniform sample over everything it has ever won (spike
        consolidations are the only thing that empties a reservoir).
        """
        events = []
        for agent in self.agents:
            if agent.wins_this_task >= 1 and len(agent.reservoir) > 0:
                if _consolidate_agent(agent, self.config):
                    events.append((agent.id, BOUNDARY))
            agent.wins_this_task = 0
            agent.loss_window.clear()
        return events
