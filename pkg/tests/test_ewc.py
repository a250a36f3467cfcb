"""Fisher estimation and the quadratic anchor penalty."""

import numpy as np
import pytest

from mob import ewc, nn

SPEC = nn.ModelSpec(layer_sizes=(5, 6, 4), activation="tanh", init_seed=2)


def make_batches(rng, n_batches=3, batch_size=4):
    return [nn.Batch(inputs=rng.uniform(0, 1, size=(batch_size, 5)),
                     labels=rng.integers(4, size=batch_size))
            for _ in range(n_batches)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestFresh:
    def test_fresh_state_is_inert(self):
        state = ewc.EwcState.fresh(SPEC.n_params, 10.0)
        params = nn.init_params(SPEC)
        penalty, grad = ewc.ewc_penalty_and_grad(state, params)
        assert penalty == 0.0
        assert np.all(grad == 0.0)
        assert state.consolidation_count == 0
        assert ewc.fisher_magnitude(state) == 0.0


class TestEstimateFisher:
    def test_matches_per_example_oracle(self, rng):
        """Independent recomputation: mean over examples of the squared
        log-prob gradient, accumulated with an explicit python loop."""
        params = nn.init_params(SPEC)
        batches = make_batches(rng)
        expected = np.zeros(SPEC.n_params)
        count = 0
        for b in batches:
            for i in range(b.size):
                g = nn.per_example_logprob_grad(SPEC, params, b.inputs[i],
                                                int(b.labels[i]))
                expected += g * g
                count += 1
        expected /= count
        got = ewc.estimate_fisher(SPEC, params, batches, max_examples=count)
        np.testing.assert_allclose(got, expected, atol=1e-15)

    def test_entries_nonnegative(self, rng):
        params = nn.init_params(SPEC)
        f = ewc.estimate_fisher(SPEC, params, make_batches(rng), 100)
        assert np.all(f >= 0.0)

    def test_subsampling_bounds_example_count(self, rng):
        params = nn.init_params(SPEC)
        batches = make_batches(rng, n_batches=10, batch_size=8)  # 80 examples
        sub = ewc.estimate_fisher(SPEC, params, batches, max_examples=5,
                                  rng=np.random.default_rng(1))
        full = ewc.estimate_fisher(SPEC, params, batches, max_examples=80)
        assert np.all(np.isfinite(sub))
        # 5-example mean of squares is not the 80-example one
        assert not np.allclose(sub, full)

    def test_empty_pool_raises(self):
        with pytest.raises(ewc.NoConsolidationData):
            ewc.estimate_fisher(SPEC, nn.init_params(SPEC), [], 10)


class TestConsolidate:
    def test_accumulates_additively_and_reanchors(self, rng):
        params = nn.init_params(SPEC)
        batches = make_batches(rng)
        s0 = ewc.EwcState.fresh(SPEC.n_params, 10.0)
        s1 = ewc.consolidate(s0, SPEC, params, batches, 100)
        fresh = ewc.estimate_fisher(SPEC, params, batches, 100)
        np.testing.assert_allclose(s1.fisher, fresh, atol=1e-15)

        params2 = params + 0.1
        s2 = ewc.consolidate(s1, SPEC, params2, batches, 100)
        fresh2 = ewc.estimate_fisher(SPEC, params2, batches, 100)
        np.testing.assert_allclose(s2.fisher, s1.fisher + fresh2, atol=1e-15)
        assert s2.consolidation_count == 2
        np.testing.assert_array_equal(s2.anchor, params2)

    def test_anchor_is_a_copy(self, rng):
        params = nn.init_params(SPEC)
        state = ewc.consolidate(ewc.EwcState.fresh(SPEC.n_params, 1.0),
                                SPEC, params, make_batches(rng), 100)
        params[0] += 99.0
        assert state.anchor[0] != params[0]

    def test_magnitude_never_decreases(self, rng):
        state = ewc.EwcState.fresh(SPEC.n_params, 1.0)
        mags = [ewc.fisher_magnitude(state)]
        params = nn.init_params(SPEC)
        for _ in range(4):
            state = ewc.consolidate(state, SPEC, params, make_batches(rng),
                                    100)
            mags.append(ewc.fisher_magnitude(state))
        assert all(b >= a for a, b in zip(mags, mags[1:]))
        assert mags[-1] > 0.0


class TestPenalty:
    def test_zero_exactly_at_anchor(self, rng):
        params = nn.init_params(SPEC)
        state = ewc.consolidate(ewc.EwcState.fresh(SPEC.n_params, 1e6),
                                SPEC, params, make_batches(rng), 100)
        penalty, grad = ewc.ewc_penalty_and_grad(state, state.anchor)
        assert penalty == 0.0
        assert np.all(grad == 0.0)

    def test_matches_closed_form(self, rng):
        params = nn.init_params(SPEC)
        lam = 7.0
        state = ewc.consolidate(ewc.EwcState.fresh(SPEC.n_params, lam),
                                SPEC, params, make_batches(rng), 100)
        theta = params + rng.normal(0, 0.1, size=params.shape)
        penalty, grad = ewc.ewc_penalty_and_grad(state, theta)
        diff = theta - state.anchor
        assert penalty == pytest.approx(
            0.5 * lam * float((state.fisher * diff ** 2).sum()), rel=1e-12)
        np.testing.assert_allclose(grad, lam * state.fisher * diff,
                                   atol=1e-15)

    def test_anchor_shape_mismatch(self, rng):
        state = ewc.consolidate(ewc.EwcState.fresh(SPEC.n_params, 1.0),
                                SPEC, nn.init_params(SPEC),
                                make_batches(rng), 100)
        with pytest.raises(nn.ContractViolation):
            ewc.ewc_penalty_and_grad(state, np.zeros(3))
