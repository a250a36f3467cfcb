"""Diagonal-Fisher importance estimation and the EWC quadratic penalty.

Fisher entries are per-parameter mean squared gradients of the model's
log-probability of the observed label (empirical Fisher, ground-truth
labels). Accumulation across consolidations is additive with no decay, so
the total Fisher magnitude grows with protected knowledge and doubles as
the forgetting-cost signal for bidding.
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Batch, ContractViolation, ModelSpec


class NoConsolidationData(ValueError):
    """Fisher estimation was asked to run with no examples."""


@dataclass(frozen=True)
class EwcState:
    """Per-expert knowledge protection state.

    fisher starts all-zero; anchor is None until the first consolidation.
    Instances are immutable: consolidate() returns a new state.
    """

    fisher: np.ndarray
    anchor: np.ndarray | None
    lambda_ewc: float
    consolidation_count: int = 0

    @classmethod
    def fresh(cls, n_params: int, lambda_ewc: float) -> "EwcState":
        return cls(fisher=np.zeros(n_params), anchor=None,
                   lambda_ewc=float(lambda_ewc), consolidation_count=0)


def estimate_fisher(spec: ModelSpec, params: np.ndarray,
                    sample_batches: list[Batch], max_examples: int,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Mean squared log-prob gradient over up to max_examples examples.

    Examples are drawn uniformly without replacement across the pooled
    batches when more than max_examples are available.
    """
    pool = [(b, i) for b in sample_batches for i in range(b.size)]
    if not pool:
        raise NoConsolidationData("no consolidation data")
    if len(pool) > max_examples:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = rng.choice(len(pool), size=max_examples, replace=False)
        pool = [pool[i] for i in sorted(idx)]
    fisher = np.zeros_like(params)
    for batch, i in pool:
        g = nn.per_example_logprob_grad(spec, params, batch.inputs[i],
                                        int(batch.labels[i]))
        fisher += g * g
    fisher /= len(pool)
    return fisher


def consolidate(state: EwcState, spec: ModelSpec, params: np.ndarray,
                reservoir: list[Batch], max_examples: int,
                rng: np.random.Generator | None = None) -> EwcState:
    """Accumulate a fresh Fisher estimate and re-anchor at current params."""
    fresh = estimate_fisher(spec, params, reservoir, max_examples, rng=rng)
    return EwcState(fisher=state.fisher + fresh,
                    anchor=params.copy(),
                    lambda_ewc=state.lambda_ewc,
                    consolidation_count=state.consolidation_count + 1)


def ewc_penalty_and_grad(state: EwcState, params: np.ndarray):
    """(lambda/2) * sum_j F_j (theta_j - anchor_j)^2 and its gradient."""
    if state.consolidation_count == 0:
        return 0.0, np.zeros_like(params)
    if params.shape != state.anchor.shape:
        raise ContractViolation("param/anchor length mismatch")
    diff = params - state.anchor
    penalty = 0.5 * state.lambda_ewc * float(np.dot(state.fisher, diff * diff))
    grad = state.lambda_ewc * state.fisher * diff
    return penalty, grad


def fisher_magnitude(state: EwcState) -> float:
    """Total protected knowledge: sum of all Fisher entries."""
    return float(state.fisher.sum())
