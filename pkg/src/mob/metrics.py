"""Accuracy matrix, average-accuracy / forgetting metrics, and cross-seed
aggregation with Welch t-tests.

Matrix convention: A[i][j] = accuracy on task j's eval set measured right
after finishing task i. Forgetting for task j is its best accuracy at or
after its own training (max over rows i >= j) minus its final accuracy.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats


@dataclass
class RunSummary:
    method: str
    seed: int
    config_hash: str
    avg_accuracy: float
    forgetting: float | None
    per_task_final: list
    acc_matrix: list                       # T x T nested lists
    win_counts: list = field(default_factory=list)        # per expert
    win_counts_per_task: list = field(default_factory=list)  # expert x task
    events: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        return cls(**json.loads(text))


def evaluate(predict_fn, eval_sets, batch_size=256) -> np.ndarray:
    """Accuracy per eval set; predict_fn maps an input block to labels."""
    accs = []
    for inputs, labels in eval_sets:
        if len(inputs) == 0:
            raise ValueError("empty eval set")
        correct = 0
        for i in range(0, len(inputs), batch_size):
            pred = predict_fn(inputs[i:i + batch_size])
            correct += int((pred == labels[i:i + batch_size]).sum())
        accs.append(correct / len(inputs))
    return np.array(accs)


def summarize(method, seed, config_hash, acc_matrix, win_counts=None,
              win_counts_per_task=None, events=None) -> RunSummary:
    a = np.asarray(acc_matrix, dtype=np.float64)
    t = a.shape[0]
    final = a[t - 1]
    avg_accuracy = float(final.mean())
    if t < 2:
        forgetting = None
    else:
        drops = [float(a[j:, j].max() - final[j]) for j in range(t - 1)]
        forgetting = float(np.mean(drops))
    return RunSummary(
        method=method, seed=seed, config_hash=config_hash,
        avg_accuracy=avg_accuracy, forgetting=forgetting,
        per_task_final=final.tolist(), acc_matrix=a.tolist(),
        win_counts=list(win_counts or []),
        win_counts_per_task=[list(r) for r in (win_counts_per_task or [])],
        events=list(events or []))


def _mean_std(values):
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def welch_t(a, b):
    """Welch t statistic and two-sided p; exact-separation fallback when
    both samples are constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.std(ddof=1) == 0 and b.std(ddof=1) == 0:
        if a.mean() == b.mean():
            return 0.0, 1.0
        return float("inf") if a.mean() > b.mean() else float("-inf"), 0.0
    t, p = stats.ttest_ind(a, b, equal_var=False)
    return float(t), float(p)


def aggregate(summaries: list[RunSummary]) -> dict:
    """Per-method mean +/- std and pairwise Welch tests on avg_accuracy.

    All methods must cover the same seed set.
    """
    by_method: dict[str, list[RunSummary]] = {}
    for s in summaries:
        by_method.setdefault(s.method, []).append(s)
    seed_sets = {m: sorted(s.seed for s in runs)
                 for m, runs in by_method.items()}
    reference = next(iter(seed_sets.values()))
    for m, seeds in seed_sets.items():
        if seeds != reference:
            raise ValueError(f"seed sets differ: {m} has {seeds}, "
                             f"expected {reference}")
    table = {}
    for m, runs in by_method.items():
        runs = sorted(runs, key=lambda s: s.seed)
        acc = [s.avg_accuracy for s in runs]
        forg = [s.forgetting for s in runs if s.forgetting is not None]
        mean_acc, std_acc = _mean_std(acc)
        entry = {"avg_accuracy": mean_acc, "avg_accuracy_std": std_acc,
                 "seeds": [s.seed for s in runs], "per_seed_accuracy": acc}
        if forg:
            mean_f, std_f = _mean_std(forg)
            entry.update(forgetting=mean_f, forgetting_std=std_f,
                         per_seed_forgetting=forg)
        table[m] = entry
    pairwise = {}
    methods = sorted(by_method)
    for i, m1 in enumerate(methods):
        for m2 in methods[i + 1:]:
            a = table[m1]["per_seed_accuracy"]
            b = table[m2]["per_seed_accuracy"]
            if len(a) >= 2 and len(b) >= 2:
                t, p = welch_t(a, b)
                pairwise[f"{m1}|{m2}"] = {"t": t, "p": p}
    return {"methods": table, "welch_avg_accuracy": pairwise}
