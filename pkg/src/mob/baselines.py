"""The four comparison systems: naive fine-tuning, monolithic EWC, random
assignment, and gated MoE. All share the network substrate and (where
applicable) the same EWC machinery as MoB, so differences isolate routing.
"""

from dataclasses import dataclass

import numpy as np

from . import ewc, nn
from .engine import ExpertAgent, MobConfig, _consolidate_agent, train_winner
from .runners import RunResult, _routed_eval, predict_single, LABELFREE
from .metrics import summarize

NAIVE = "naive_finetune"
RANDOM = "random_assignment"
MONOLITHIC = "monolithic_ewc"
GATED = "gated_moe"
MOB = "mob"

BASELINE_KINDS = (NAIVE, RANDOM, MONOLITHIC, GATED)


def _single_model_eval(spec, params, eval_sets):
    predict = predict_single(spec, params)
    return np.array([
        float((predict(inputs) == labels).mean())
        for inputs, labels in eval_sets])


def run_naive(stream, config: MobConfig, config_hash="") -> RunResult:
    """Single model, plain SGD on every batch, never consolidates."""
    input_dim = stream.eval_sets[0][0].shape[1]
    spec = config.model_spec(input_dim, 10, expert_id=0)
    params = nn.init_params(spec)
    matrix = []
    for task in stream.tasks:
        for batch in task:
            _, grad = nn.loss_and_grad(spec, params, batch)
            params = nn.sgd_step(params, grad, config.lr)
        matrix.append(_single_model_eval(spec, params, stream.eval_sets))
    summary = summarize(NAIVE, config.seed, config_hash, np.vstack(matrix))
    return RunResult(summary=summary)


def run_monolithic_ewc(stream, config: MobConfig, config_hash="") -> RunResult:
    """Single network with the EWC penalty, consolidating at each boundary."""
    input_dim = stream.eval_sets[0][0].shape[1]
    agent = ExpertAgent.fresh(0, config, input_dim, 10)
    matrix = []
    events = []
    penalties = []
    for t, task in enumerate(stream.tasks):
        for batch in task:
            train_winner(agent, batch, config)
            p, _ = ewc.ewc_penalty_and_grad(agent.ewc_state, agent.params)
            penalties.append(p)
        if _consolidate_agent(agent, config):
            events.append({"task": t, "expert": 0,
                           "reason": "explicit_boundary"})
        agent.wins_this_task = 0
        agent.loss_window.clear()
        agent.reservoir.clear()
        matrix.append(_single_model_eval(agent.spec, agent.params,
                                         stream.eval_sets))
    summary = summarize(MONOLITHIC, config.seed, config_hash,
                        np.vstack(matrix), events=events)
    result = RunResult(summary=summary)
    result.penalties = penalties
    result.agent = agent
    return result


def run_random_assignment(stream, config: MobConfig,
                          config_hash="") -> RunResult:
    """MoB's agents and training, but the winner is drawn uniformly."""
    input_dim = stream.eval_sets[0][0].shape[1]
    agents = [ExpertAgent.fresh(i, config, input_dim, 10)
              for i in range(config.n_experts)]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7A4D]))
    n_tasks = stream.n_tasks
    wins = np.zeros((config.n_experts, n_tasks), dtype=int)
    events = []
    matrix = []
    for t, task in enumerate(stream.tasks):
        for batch in task:
            winner = agents[int(rng.integers(config.n_experts))]
            train_winner(winner, batch, config)
            wins[winner.id, t] += 1
        for agent in agents:
            if agent.wins_this_task >= 1 and len(agent.reservoir) > 0:
                if _consolidate_agent(agent, config):
                    events.append({"task": t, "expert": agent.id,
                                   "reason": "explicit_boundary"})
            agent.wins_this_task = 0
            agent.loss_window.clear()
        matrix.append(_routed_eval(agents, stream.eval_sets, LABELFREE))
    summary = summarize(RANDOM, config.seed, config_hash, np.vstack(matrix),
                        win_counts=wins.sum(axis=1).tolist(),
                        win_counts_per_task=wins.tolist(), events=events)
    result = RunResult(summary=summary)
    result.agents = agents
    return result


@dataclass
class GatedMoe:
    """Dense softmax mixture: output logits = sum_i g_i(x) * E_i(x)."""

    expert_specs: list
    expert_params: list
    gater_w: np.ndarray   # input_dim x n_experts
    gater_b: np.ndarray

    @classmethod
    def fresh(cls, config: MobConfig, input_dim=784, n_classes=10):
        specs = [config.model_spec(input_dim, n_classes, expert_id=i)
                 for i in range(config.n_experts)]
        params = [nn.init_params(s) for s in specs]
        grng = np.random.default_rng(
            np.random.SeedSequence([config.seed, 0x6A7E]))
        scale = 1.0 / np.sqrt(input_dim)
        return cls(expert_specs=specs, expert_params=params,
                   gater_w=grng.uniform(-scale, scale,
                                        size=(input_dim, config.n_experts)),
                   gater_b=np.zeros(config.n_experts))

    def gate(self, inputs):
        return nn.softmax(inputs @ self.gater_w + self.gater_b)

    def forward(self, inputs):
        g = self.gate(inputs)
        traces = [nn._forward_trace(s, p, inputs)
                  for s, p in zip(self.expert_specs, self.expert_params)]
        mixed = sum(g[:, i:i + 1] * tr[0][-1] for i, tr in enumerate(traces))
        return mixed, g, traces

    def train_step(self, batch, lr):
        """Joint SGD on the mixture cross-entropy; no EWC anywhere."""
        mixed, g, traces = self.forward(batch.inputs)
        n = batch.size
        logp = nn.log_softmax(mixed)
        loss = -float(logp[np.arange(n), batch.labels].mean())
        dmix = nn.softmax(mixed)
        dmix[np.arange(n), batch.labels] -= 1.0
        dmix /= n
        # experts: each sees the mixture gradient scaled by its gate weight
        for i, (spec, params) in enumerate(
                zip(self.expert_specs, self.expert_params)):
            acts, pres = traces[i]
            grad = nn._backprop(spec, params, acts, pres, g[:, i:i + 1] * dmix)
            self.expert_params[i] = nn.sgd_step(params, grad, lr)
        # gater: softmax jacobian applied to per-example <dmix, E_i(x)>
        s = np.stack([(dmix * tr[0][-1]).sum(axis=1) for tr in traces], axis=1)
        dz = g * (s - (s * g).sum(axis=1, keepdims=True))
        self.gater_w = self.gater_w - lr * (batch.inputs.T @ dz)
        self.gater_b = self.gater_b - lr * dz.sum(axis=0)
        return loss

    def predict(self, inputs):
        mixed, _, _ = self.forward(inputs)
        return mixed.argmax(axis=1)


def run_gated_moe(stream, config: MobConfig, config_hash="") -> RunResult:
    input_dim = stream.eval_sets[0][0].shape[1]
    model = GatedMoe.fresh(config, input_dim, 10)
    matrix = []
    gate_snapshots = []   # mean gate distribution on task 0's eval inputs
    for task in stream.tasks:
        for batch in task:
            model.train_step(batch, config.lr)
        matrix.append(np.array([
            float((model.predict(inputs) == labels).mean())
            for inputs, labels in stream.eval_sets]))
        gate_snapshots.append(model.gate(stream.eval_sets[0][0]).mean(axis=0))
    summary = summarize(GATED, config.seed, config_hash, np.vstack(matrix))
    result = RunResult(summary=summary)
    result.gate_snapshots = gate_snapshots
    result.model = model
    return result


def run_baseline(kind, stream, config, config_hash=""):
    runner = {NAIVE: run_naive, MONOLITHIC: run_monolithic_ewc,
              RANDOM: run_random_assignment, GATED: run_gated_moe}[kind]
    return runner(stream, config, config_hash)
