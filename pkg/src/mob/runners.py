"""End-to-end MoB runs over a task stream, plus the label-free evaluation
routing shared with the multi-expert baselines.

Evaluation-time routing cannot see labels, so each expert's bid is a
confidence proxy — the mean negative log-probability of its own argmax
class — calibrated against the expert's own memory: we subtract a low
quantile of the same proxy measured on the batches in its reservoir
("how uncertain am I here, relative to data I know well?"). Raw confidence
is not comparable across experts (an expert that absorbed two tasks is
systematically less certain everywhere than a fresh single-task
specialist), while the calibrated score is. An oracle mode (true-label
cross-entropy) exists as an upper-bound diagnostic.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .engine import EXPLICIT, MobConfig, MobEngine, StepLog
from .metrics import summarize, RunSummary

LABELFREE = "labelfree"
ORACLE = "oracle"

# quantile of per-reservoir-batch confidence cost used as the calibration
# baseline; a low quantile tracks what the expert still knows well, so a
# partly-forgotten task in the reservoir cannot inflate the baseline
CALIBRATION_QUANTILE = 0.1


def predict_single(spec, params):
    """Plain argmax predictor for a single model."""
    def predict(inputs):
        return nn.forward(spec, params, inputs).argmax(axis=1)
    return predict


def confidence_cost(spec, params, inputs) -> float:
    """Mean negative log-probability of the predicted class."""
    logp = nn.log_softmax(nn.forward(spec, params, inputs))
    return float(-logp.max(axis=1).mean())


def reservoir_calibration(agent) -> float | None:
    """Low-quantile confidence cost on the agent's own won batches.

    None when the reservoir is empty (an expert that never won anything
    has no calibration and never wins an eval block unless all are empty).
    """
    if len(agent.reservoir) == 0:
        return None
    per_batch = [confidence_cost(agent.spec, agent.params, b.inputs)
                 for b in agent.reservoir.items]
    return float(np.quantile(per_batch, CALIBRATION_QUANTILE))


def routed_predictor(agents, mode=LABELFREE):
    """Route each eval block to one expert, then argmax with it.

    agents: list of ExpertAgent. In oracle mode the router sees true labels
    and picks the expert with the lowest cross-entropy; only useful as an
    upper-bound diagnostic.
    """
    calibrations = [reservoir_calibration(a) for a in agents]

    def predict(inputs, labels=None):
        if mode == ORACLE and labels is not None:
            costs = [nn.mean_loss(a.spec, a.params,
                                  nn.Batch(inputs=inputs, labels=labels))
                     for a in agents]
        elif any(c is not None for c in calibrations):
            costs = [confidence_cost(a.spec, a.params, inputs) - c
                     if c is not None else np.inf
                     for a, c in zip(agents, calibrations)]
        else:  # nobody has trained yet; raw confidence breaks the tie
            costs = [confidence_cost(a.spec, a.params, inputs)
                     for a in agents]
        winner = agents[int(np.argmin(costs))]
        return nn.forward(winner.spec, winner.params, inputs).argmax(axis=1)
    return predict


def _routed_eval(agents, eval_sets, mode, batch_size=256):
    predict = routed_predictor(agents, mode)
    accs = []
    for inputs, labels in eval_sets:
        correct = 0
        for i in range(0, len(inputs), batch_size):
            xs, ys = inputs[i:i + batch_size], labels[i:i + batch_size]
            pred = predict(xs, ys) if mode == ORACLE else predict(xs)
            correct += int((pred == ys).sum())
        accs.append(correct / len(inputs))
    return np.array(accs)


@dataclass
class RunResult:
    summary: RunSummary
    step_logs: list = field(default_factory=list)
    winners_by_task: list = field(default_factory=list)
    engine: object = None


def run_mob(stream, config: MobConfig, eval_routing=LABELFREE,
            config_hash="", method_name="mob") -> RunResult:
    """Full MoB pass over the stream with per-task evaluation rows."""
    input_dim = stream.eval_sets[0][0].shape[1]
    engine = MobEngine(config, input_dim=input_dim, n_classes=10)
    n_tasks = stream.n_tasks
    wins = np.zeros((config.n_experts, n_tasks), dtype=int)
    step_logs: list[StepLog] = []
    winners_by_task = [[] for _ in range(n_tasks)]
    events = []
    matrix = []
    for t, task in enumerate(stream.tasks):
        for batch in task:
            log = engine.step(batch)
            step_logs.append(log)
            wins[log.winner, t] += 1
            winners_by_task[t].append(log.winner)
            for expert, reason in log.consolidations:
                events.append({"step": log.step_index, "expert": expert,
                               "reason": reason})
        if config.boundary_mode == EXPLICIT:
            for expert, reason in engine.explicit_boundary():
                events.append({"step": engine.step_index - 1,
                               "expert": expert, "reason": reason})
        matrix.append(_routed_eval(engine.agents, stream.eval_sets,
                                   eval_routing))
    summary = summarize(method_name, config.seed, config_hash,
                        np.vstack(matrix),
                        win_counts=wins.sum(axis=1).tolist(),
                        win_counts_per_task=wins.tolist(),
                        events=events)
    return RunResult(summary=summary, step_logs=step_logs,
                     winners_by_task=winners_by_task, engine=engine)
