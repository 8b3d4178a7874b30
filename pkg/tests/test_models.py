from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eswitch import interpolate as ip
from eswitch import models
from eswitch.core import (
    EvidenceCollapse,
    SpecError,
    observe,
    oracle_likelihood,
    predict,
    run,
    sequence_probability,
    start_state,
)
from eswitch.priors import DriftKernel, SwitchRateSchedule, TailPrior, geometric_kernel

ROWS = [[0.8, 0.2], [0.8, 0.2]]


def evidence(spec, x) -> float:
    return run(spec, x).log_evidence


class TestBasicMixtures:
    """Bayes and elementwise mixtures."""

    def test_bayes_example(self):
        assert math.exp(-evidence(models.bayes(2), ROWS)) == pytest.approx(0.34)

    def test_elementwise_example(self):
        assert math.exp(-evidence(models.elementwise(2), ROWS)) == pytest.approx(0.25)
        assert math.exp(-evidence(models.elementwise(3), [[0.9, 0.6, 0.3]])) == pytest.approx(0.6)

    def test_elementwise_degenerate_prior(self):
        x = np.random.default_rng(42).uniform(0.1, 1, (5, 2))
        assert evidence(models.elementwise(2, [1, 0]), x) == pytest.approx(-np.log(x[:, 0]).sum())

    @pytest.mark.parametrize("w", [[0.5, 0.4], [1.2, -0.2], [0.5, 0.5, 0.0]])
    def test_rejects_bad_prior(self, w):
        with pytest.raises(SpecError):
            models.bayes(2, w)

    def test_rejects_no_experts(self):
        with pytest.raises(SpecError):
            models.bayes(0)


class TestFixedShare:
    """Constant-rate switching."""

    def test_example(self):
        assert math.exp(-evidence(models.fixed_share(2, alpha=0.5), ROWS)) == pytest.approx(0.295)

    def test_update_rule(self):
        spec = models.fixed_share(3, alpha=0.2)
        state = observe(start_state(spec), spec, [0.9, 0.5, 0.1])
        post = np.array([0.9, 0.5, 0.1]) / 1.5
        np.testing.assert_allclose(predict(state, spec), 0.8 * post + 0.2 / 3)

    @pytest.mark.parametrize("alpha", [-0.1, 1.1])
    def test_rejects_bad_rate(self, alpha):
        with pytest.raises(SpecError):
            models.fixed_share(2, alpha=alpha)

    def test_batch_matches_individual_runs(self):
        x = np.random.default_rng(42).uniform(0.05, 1, (25, 4))
        alphas = [0.0, 0.1, 0.5, 1.0]
        batch = models.fixed_share_batch(x, alphas)
        np.testing.assert_allclose(batch, [evidence(models.fixed_share(4, alpha=a), x) for a in alphas], rtol=1e-12)

    def test_edges_per_round(self):
        res = run(models.fixed_share(5, alpha=0.3), np.full((6, 5), 0.5))
        np.testing.assert_array_equal(res.edges, [5, 15, 15, 15, 15, 15])

    def test_zero_rate_skips_silent_edges(self):
        res = run(models.fixed_share(5, alpha=0.0), np.full((3, 5), 0.5))
        np.testing.assert_array_equal(res.edges, [5, 5, 5])


class TestDecreasingRate:
    """Time-varying switching rates."""

    def test_matches_manual_update(self):
        sched = SwitchRateSchedule.slow(1.0)
        x = np.random.default_rng(42).uniform(0.1, 1, (6, 3))
        w = np.full(3, 1 / 3)
        total = 0.0
        for i, row in enumerate(x):
            z = w @ row
            total -= math.log(z)
            post = w * row / z
            a = sched.rate(i + 1)
            w = (1 - a) * post + a / 3
        assert evidence(models.decreasing_rate(3, schedule=sched), x) == pytest.approx(total, rel=1e-12)

    def test_all_zero_rates_is_bayes(self):
        x = np.random.default_rng(42).uniform(0.1, 1, (6, 3))
        spec = models.decreasing_rate(3, schedule=SwitchRateSchedule.constant(0.0))
        assert evidence(spec, x) == pytest.approx(evidence(models.bayes(3), x))


class TestSwitchingMethod:
    """Jeffreys-prior switching counts."""

    def test_switch_probabilities(self):
        interp = ip.jeffreys()
        assert sequence_probability(interp, [ip.SWITCH]) == pytest.approx(0.5)
        # after three non-switches, (0 + 1/2) / (3 + 1)
        p3 = sequence_probability(interp, [ip.NORMAL] * 3)
        assert sequence_probability(interp, [ip.NORMAL] * 3 + [ip.SWITCH]) / p3 == pytest.approx(0.125)

    def test_two_round_example(self):
        # with one switch decision, the Jeffreys prior gives P(s) = 1/2, the same as Fixed Share at 1/2
        q = math.exp(-evidence(models.switching_method(2), ROWS))
        assert q == pytest.approx(0.295)
        assert q == pytest.approx(oracle_likelihood(models.switching_method(2), ROWS))

    def test_edges_grow_linearly(self):
        res = run(models.switching_method(3), np.full((8, 3), 0.5))
        np.testing.assert_array_equal(res.edges[1:], 9 * np.arange(1, 8))

    def test_product_equivalence(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            x = rng.uniform(0.1, 1, (3, 2))
            assert evidence(models.switching_method_product(2), x) == pytest.approx(
                evidence(models.switching_method(2), x), rel=1e-12
            )

    def test_dominates_fixed_share_grid(self):
        rng = np.random.default_rng(42)
        grid = np.linspace(0, 1, 11)
        for t in (1, 5, 20, 60):
            x = rng.uniform(0.05, 1, (t, 3))
            sm = evidence(models.switching_method(3), x)
            assert sm <= models.fixed_share_batch(x, grid).min() + math.log(2) + 0.5 * math.log(t) + 1e-9


class TestFixedShareGrid:
    """Bayes mixture over Fixed Share rates."""

    def test_singleton(self):
        x = np.random.default_rng(42).uniform(0.1, 1, (7, 3))
        assert evidence(models.fixed_share_grid(3, alphas=[0.5]), x) == pytest.approx(
            evidence(models.fixed_share(3, alpha=0.5), x), rel=1e-12
        )

    def test_two_point_example(self):
        q = math.exp(-evidence(models.fixed_share_grid(2, alphas=[0.0, 1.0]), ROWS))
        assert q == pytest.approx(0.5 * 0.34 + 0.5 * 0.25)

    def test_regret_against_best_grid_point(self):
        x = np.random.default_rng(42).uniform(0.05, 1, (30, 3))
        alphas = [0.0, 0.05, 0.2, 0.6]
        mix = evidence(models.fixed_share_grid(3, alphas=alphas), x)
        best = models.fixed_share_batch(x, alphas).min()
        assert 0 <= mix - best <= math.log(len(alphas)) + 1e-12

    def test_rejects_empty_grid(self):
        with pytest.raises(SpecError):
            models.fixed_share_grid(2, alphas=[])


class TestRunLength:
    """Renewal-process switching."""

    @pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
    def test_geometric_is_fixed_share(self, alpha):
        x = np.random.default_rng(42).uniform(0.1, 1, (12, 3))
        assert evidence(models.run_length(3, tau=TailPrior.geometric(alpha)), x) == pytest.approx(
            evidence(models.fixed_share(3, alpha=alpha), x), rel=1e-12
        )

    def test_geometric_two_round_example(self):
        q = math.exp(-evidence(models.run_length(2, tau=TailPrior.geometric(0.5)), ROWS))
        assert q == pytest.approx(0.295)

    def test_never_switching_is_bayes(self):
        x = np.random.default_rng(42).uniform(0.1, 1, (8, 3))
        assert evidence(models.run_length(3, tau=TailPrior.never()), x) == pytest.approx(evidence(models.bayes(3), x))

    def test_first_hazard(self):
        spec = models.run_length(2, tau=TailPrior.fat())
        assert sequence_probability(spec, [0, 1]) * 2 / 0.5 == pytest.approx(0.2385371404, abs=1e-10)

    def test_rejects_exhaustible_finite_prior(self):
        with pytest.raises(SpecError):
            models.run_length(2, tau=TailPrior.finite((0.5, 0.5)))

    def test_product_equivalence(self):
        x = np.random.default_rng(42).uniform(0.1, 1, (6, 3))
        assert evidence(models.run_length_product(3), x) == pytest.approx(evidence(models.run_length(3), x), rel=1e-12)


class TestKernelDrift:
    """Parameter drift over ordered experts."""

    def test_linear_time_convolution_matches_direct(self):
        rng = np.random.default_rng(42)
        w = rng.random(7)
        d = np.arange(7)
        direct = geometric_kernel(0.3, d[:, None] - d[None, :]) @ w
        np.testing.assert_allclose(models.geometric_convolve(w, 0.3), direct, atol=1e-12)

    def test_initial_distribution(self):
        spec = models.kernel_drift(4, DriftKernel.geometric(0.5))
        np.testing.assert_allclose(predict(start_state(spec), spec), geometric_kernel(0.5, np.arange(4)))

    def test_general_kernel_starts_uniform(self):
        spec = models.kernel_drift(4, DriftKernel.finite((-1, 1), (0.5, 0.5)))
        np.testing.assert_allclose(predict(start_state(spec), spec), 0.25)

    def test_mass_leaving_the_line_is_dropped(self):
        spec = models.kernel_drift(3, DriftKernel.finite((1,), (1.0,)))
        preds = run(spec, np.full((3, 3), 0.5)).predictions
        np.testing.assert_allclose(preds.sum(axis=1), [1.0, 2 / 3, 1 / 2], atol=1e-15)
        with pytest.raises(EvidenceCollapse):
            run(spec, np.full((4, 3), 0.5))

    def test_ring_keeps_mass(self):
        spec = models.kernel_drift(4, DriftKernel.geometric(0.7), topology="ring")
        preds = run(spec, np.random.default_rng(42).uniform(0.1, 1, (6, 4))).predictions
        np.testing.assert_allclose(preds.sum(axis=1), 1.0)

    def test_fused_edges_match_silent_state_layer(self):
        k = 6
        spec = models.kernel_drift(k, DriftKernel.geometric(0.4))
        assert spec.layer(1).n_edges == 7 * k - 4
        assert spec.initial.n_edges == k + 1

    def test_rejects_unknown_topology(self):
        with pytest.raises(SpecError):
            models.kernel_drift(3, topology="torus")


class TestKernelSwitch:
    """Interpolating between staying put and a kernel move."""

    def test_point_kernel_is_bayes(self):
        x = np.random.default_rng(42).uniform(0.1, 1, (6, 3))
        for interp in (0.3, SwitchRateSchedule.slow(1.0), ip.jeffreys(), ip.renewal(TailPrior.fat(0.5))):
            spec = models.kernel_switch(3, DriftKernel.point(), interp)
            assert evidence(spec, x) == pytest.approx(evidence(models.bayes(3), x), rel=1e-12)

    def test_uniform_ring_kernel_is_fixed_share(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            x = rng.uniform(0.1, 1, (3, 3))
            spec = models.kernel_switch(3, DriftKernel.uniform(3), 0.4, topology="ring")
            assert evidence(spec, x) == pytest.approx(evidence(models.fixed_share(3, alpha=0.4), x), rel=1e-12)
            assert math.exp(-evidence(spec, x)) == pytest.approx(oracle_likelihood(spec, x), rel=1e-12)

    def test_always_convolving_is_drift(self):
        x = np.random.default_rng(42).uniform(0.1, 1, (8, 5))
        kern = DriftKernel.geometric(0.5)
        assert evidence(models.kernel_switch(5, kern, 1.0), x) == pytest.approx(
            evidence(models.kernel_drift(5, kern), x), rel=1e-12
        )


@settings(max_examples=40, deadline=None)
@given(k=st.integers(1, 5), t=st.integers(0, 12), alpha=st.floats(0.0, 1.0), seed=st.integers(0, 2**32 - 1))
def test_fixed_share_between_bayes_and_elementwise_bounds(k, t, alpha, seed):
    """Fixed Share codelength never exceeds the best of Bayes plus its switch cost."""
    x = np.random.default_rng(seed).uniform(0.05, 1, (t, k))
    fs = evidence(models.fixed_share(k, alpha=alpha), x)
    if alpha < 1:
        assert fs <= evidence(models.bayes(k), x) - max(t - 1, 0) * math.log1p(-alpha) + 1e-9
    if alpha > 0:
        assert fs <= evidence(models.elementwise(k), x) - max(t - 1, 0) * math.log(alpha) + 1e-9
