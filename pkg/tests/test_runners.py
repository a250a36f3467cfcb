"""Evaluation-time routing and the end-to-end training runner."""

import numpy as np
import pytest

from mob import data, nn
from mob.engine import ExpertAgent, MobConfig
from mob.runners import (LABELFREE, ORACLE, confidence_cost,
                         reservoir_calibration, routed_predictor, run_mob,
                         _routed_eval)

SMALL = MobConfig(n_experts=2, hidden_sizes=(32,), batch_size=32,
                  fisher_max_examples=64, seed=0)


@pytest.fixture(scope="module")
def stream(digits):
    return data.build_split_mnist(digits, seed=0, per_task_train=512,
                                  per_task_eval=100, batch_size=32)


def train_specialist(expert_id, task, config=SMALL):
    from mob.engine import train_winner
    agent = ExpertAgent.fresh(expert_id, config, 784, 10)
    for batch in task:
        train_winner(agent, batch, config)
    return agent


class TestConfidenceCost:
    def test_matches_manual_computation(self):
        spec = SMALL.model_spec(8, 10)
        params = nn.init_params(spec)
        inputs = np.random.default_rng(0).uniform(0, 1, size=(5, 8))
        logp = nn.log_softmax(nn.forward(spec, params, inputs))
        manual = float(-logp.max(axis=1).mean())
        assert confidence_cost(spec, params, inputs) == pytest.approx(manual)

    def test_empty_reservoir_has_no_calibration(self):
        agent = ExpertAgent.fresh(0, SMALL, 8, 10)
        assert reservoir_calibration(agent) is None


class TestRoutedPredictor:
    def test_specialists_get_their_own_tasks(self, stream):
        agents = [train_specialist(0, stream.tasks[0]),
                  train_specialist(1, stream.tasks[1])]
        accs = _routed_eval(agents, stream.eval_sets[:2], LABELFREE)
        assert accs[0] > 0.85
        assert accs[1] > 0.85

    def test_oracle_routing_uses_labels(self, stream):
        agents = [train_specialist(0, stream.tasks[0]),
                  train_specialist(1, stream.tasks[1])]
        accs = _routed_eval(agents, stream.eval_sets[:2], ORACLE)
        assert accs[0] > 0.85
        assert accs[1] > 0.85

    def test_untrained_pool_falls_back_to_raw_confidence(self, stream):
        agents = [ExpertAgent.fresh(i, SMALL, 784, 10) for i in range(2)]
        predict = routed_predictor(agents, LABELFREE)
        inputs = stream.eval_sets[0][0][:16]
        pred = predict(inputs)
        assert pred.shape == (16,)
        assert np.all((0 <= pred) & (pred < 10))

    def test_expert_without_wins_never_selected(self, stream):
        trained = train_specialist(0, stream.tasks[0])
        idle = ExpertAgent.fresh(1, SMALL, 784, 10)
        accs = _routed_eval([trained, idle], stream.eval_sets[:1], LABELFREE)
        # the idle expert has no calibration, so the trained one serves
        # its own task at specialist accuracy
        assert accs[0] > 0.85


class TestRunMob:
    @pytest.fixture(scope="class")
    @classmethod
    def result(cls, stream):
        return run_mob(stream, SMALL, config_hash="t")

    def test_summary_shape_and_bookkeeping(self, result, stream):
        s = result.summary
        assert np.asarray(s.acc_matrix).shape == (5, 5)
        assert s.method == "mob"
        total = sum(len(task) for task in stream.tasks)
        assert sum(s.win_counts) == total
        assert len(result.step_logs) == total
        assert sum(len(w) for w in result.winners_by_task) == total
        per_task = np.asarray(s.win_counts_per_task)
        assert per_task.shape == (SMALL.n_experts, 5)
        np.testing.assert_array_equal(per_task.sum(axis=0),
                                      [len(t) for t in stream.tasks])

    def test_boundary_consolidations_recorded(self, result):
        reasons = {e["reason"] for e in result.summary.events}
        assert reasons == {"explicit_boundary"}
        assert len(result.summary.events) >= 5  # one winner per task minimum

    def test_engine_exposed_for_diagnostics(self, result):
        assert len(result.engine.agents) == SMALL.n_experts
        assert result.engine.step_index == len(result.step_logs)
