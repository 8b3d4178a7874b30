"""Acceptance suite: one group of tests per criterion, summarized at the end of the run."""

from __future__ import annotations

import math
import time
from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from eswitch import interpolate as ip
from eswitch import models
from eswitch.bounds import (
    ReferenceSequence,
    bound_decreasing_drift,
    bound_fixed_share,
    bound_fs_ml,
    bound_parameter_drift,
    bound_pd_ml,
    bound_run_length,
    bound_switching_method,
    drift_alpha_star,
    entropy_kl,
)
from eswitch.core import count_paths, enumerate_paths, invest, run, sequence_log_prob
from eswitch.infer import marginals, viterbi
from eswitch.priors import DriftKernel, SwitchRateSchedule, TailPrior, geometric_kernel

from zoo import FACTORIES, all_sequences, enumerated_likelihood, spec_for

criterion = pytest.mark.criterion


def _sequence_regrets(spec, x, seqs):
    """Empirical regret of ``spec`` on ``x`` against every reference row of ``seqs``."""
    le = run(spec, x).log_evidence
    rows = np.arange(x.shape[0])
    return le + np.log(x[rows, seqs]).sum(axis=1)


def _drift_paths(k: int, t: int, max_drift: int):
    """Expert paths on a line of ``k`` with total drift (from expert 0) at most ``max_drift``."""
    out = []

    def walk(path, pos, d):
        if len(path) == t:
            out.append((tuple(path), d))
            return
        for nxt in range(k):
            nd = d + abs(nxt - pos)
            if nd <= max_drift:
                walk(path + [nxt], nxt, nd)

    walk([], 0, 0)
    return out


# ------------------------------------------------------------------ 1


@criterion(1, "engine equals brute-force path enumeration for every model")
@pytest.mark.parametrize("name", sorted(FACTORIES))
def test_oracle_equivalence(name):
    """100 random instances with k in {2,3}, t in 1..5 and likelihoods in [0.1, 1]."""
    rng = np.random.default_rng(42)
    for _ in range(100):
        k = int(rng.integers(2, 4))
        t = int(rng.integers(1, 6))
        x = rng.uniform(0.1, 1.0, (t, k))
        engine = -run(spec_for(name, k), x).log_evidence
        oracle = math.log(enumerated_likelihood(name, x))
        assert abs(engine - oracle) <= 1e-9 * abs(oracle) + 1e-15, (name, k, t)


# ------------------------------------------------------------------ 2


def _random_instances(n=100, kmax=6, tmax=30, seed=42):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        k = int(rng.integers(2, kmax + 1))
        t = int(rng.integers(1, tmax + 1))
        yield k, rng.uniform(0.05, 1.0, (t, k)), float(rng.uniform(0.05, 0.95))


def _same_evidence(a, b, x):
    np.testing.assert_allclose(run(a, x).log_evidence, run(b, x).log_evidence, rtol=1e-9, atol=1e-12)


@criterion(2, "reduction identities")
class TestReductions:
    """Each pair of models must assign identical log evidence."""

    def test_fixed_share_zero_is_bayes(self):
        for k, x, _ in _random_instances():
            _same_evidence(models.fixed_share(k, alpha=0.0), models.bayes(k), x)

    def test_fixed_share_one_is_elementwise(self):
        for k, x, _ in _random_instances():
            _same_evidence(models.fixed_share(k, alpha=1.0), models.elementwise(k), x)

    def test_geometric_run_length_is_fixed_share(self):
        for k, x, a in _random_instances():
            _same_evidence(models.run_length(k, tau=TailPrior.geometric(a)), models.fixed_share(k, alpha=a), x)

    def test_generic_interpolation_is_fused_fixed_share(self):
        for k, x, a in _random_instances():
            product = ip.interpolate(models.bayes(k), models.elementwise(k), ip.bernoulli(a))
            assert product.fused is None
            _same_evidence(product, models.fixed_share(k, alpha=a), x)

    def test_silent_state_drift_is_linear_time_recursion(self):
        for k, x, a in _random_instances():
            fused = models.kernel_drift(k, DriftKernel.geometric(a))
            generic = replace(fused, fused=None)
            _same_evidence(generic, fused, x)


# ------------------------------------------------------------------ 3


@criterion(3, "Fixed Share bound and the binary entropy sandwich")
class TestFixedShareTheorem:
    """Every reference for k=2, t <= 8, on worst-case and random data."""

    ALPHAS = [round(0.1 * j, 1) for j in range(1, 10)]

    def test_bound_dominates_regret(self):
        rng = np.random.default_rng(42)
        for t in range(1, 9):
            seqs = all_sequences(2, t)
            ms = np.array([ReferenceSequence.of(s).m for s in seqs])
            for alpha in self.ALPHAS:
                spec = models.fixed_share(2, alpha=alpha)
                bounds = np.array([bound_fixed_share(2, t, m, alpha) for m in ms])
                # one-hot data makes the regret equal to -ln of the prior, the tight case
                worst = -np.array([sequence_log_prob(spec, s) for s in seqs])
                assert np.all(worst <= bounds + 1e-9)
                for _ in range(3):
                    x = rng.uniform(0.01, 1.0, (t, 2))
                    assert np.all(_sequence_regrets(spec, x, seqs) <= bounds + 1e-9)

    def test_sandwich(self):
        for t in range(2, 201):
            for m in range(1, t + 1):
                a = (m - 1) / (t - 1)
                mid = (t - 1) * entropy_kl(a, a)[1]
                low = 0.0 if m == 1 else (m - 1) * math.log((t - 1) / (m - 1))
                assert low <= mid + 1e-9
                assert mid <= low + m + 1e-9


# ------------------------------------------------------------------ 4


@criterion(4, "Switching Method within ln 2 + ln(t)/2 of every Fixed Share rate")
def test_switching_method_regret():
    """Regret against the best rate on a 1e-3 grid, random and extreme instances."""
    rng = np.random.default_rng(42)
    grid = np.linspace(0.0, 1.0, 1001)
    worst_slack = math.inf
    for t in range(1, 9):
        for trial in range(30):
            if trial % 3 == 0:
                x = rng.choice([0.01, 1.0], size=(t, 2))
                x[x.max(axis=1) < 1, 0] = 1.0
            else:
                x = rng.uniform(0.01, 1.0, (t, 2))
            sm = run(models.switching_method(2), x).log_evidence
            best = float(np.min(models.fixed_share_batch(x, grid)))
            slack = bound_switching_method(t) + 1e-6 - (sm - best)
            worst_slack = min(worst_slack, slack)
            assert slack >= 0, (t, x)
    assert worst_slack < 1.0  # the extreme instances get reasonably close to the bound


# ------------------------------------------------------------------ 5


def _fs_codelength(x, alpha):
    return float(models.fixed_share_batch(x, [alpha])[0])


def ml_rate(x) -> float:
    """Maximum-likelihood Fixed Share rate: coarse grid, then golden-section refinement."""
    grid = np.linspace(0.0, 1.0, 101)
    coarse = models.fixed_share_batch(x, grid)
    j = int(np.argmin(coarse))
    if j in (0, grid.size - 1):
        return float(grid[j])
    res = minimize_scalar(
        lambda a: _fs_codelength(x, a),
        bracket=(grid[j - 1], grid[j], grid[j + 1]),
        method="golden",
        tol=1e-10,
    )
    return float(res.x)


@criterion(5, "Fixed Share maximum-likelihood rate regret")
def test_fixed_share_ml_regret():
    """ln FS_ahat(x) - ln FS_alpha(x) <= (t-1) KL(ahat || alpha)."""
    rng = np.random.default_rng(42)
    interior = 0
    for t in range(2, 9):
        for _ in range(20):
            x = rng.uniform(0.01, 1.0, (t, 2))
            ahat = ml_rate(x)
            interior += 0.0 < ahat < 1.0
            base = _fs_codelength(x, ahat)
            for alpha in (0.05, 0.2, 0.5, 0.8, 0.95):
                ratio = _fs_codelength(x, alpha) - base
                assert ratio <= bound_fs_ml(t, ahat, alpha) + 1e-6, (t, ahat, alpha)
    assert interior > 0


# ------------------------------------------------------------------ 6


@criterion(6, "run-length bound with a theta-scaled fat-tailed prior")
class TestRunLengthTheorem:
    """k=2, t <= 10, every reference with at most three blocks."""

    TAU = TailPrior.fat(0.5)

    def test_bound_dominates_regret(self):
        rng = np.random.default_rng(42)
        spec = models.run_length(2, tau=self.TAU)
        checked = 0
        for t in range(1, 11):
            seqs = all_sequences(2, t)
            refs = [ReferenceSequence.of(s) for s in seqs]
            keep = np.array([r.m <= 3 for r in refs])
            seqs = seqs[keep]
            refs = [r for r, kp in zip(refs, keep) if kp]
            bounds = np.array([bound_run_length(2, r.m, r.last_switch, self.TAU) for r in refs])
            worst = -np.array([sequence_log_prob(spec, s) for s in seqs])
            assert np.all(worst <= bounds + 1e-9)
            for _ in range(3):
                x = rng.uniform(0.01, 1.0, (t, 2))
                assert np.all(_sequence_regrets(spec, x, seqs) <= bounds + 1e-9)
            checked += len(refs)
        assert checked == 350  # 2 + sum over t of 2 * (1 + (t-1) + C(t-1, 2))

    def test_equal_blocks_are_the_worst_case(self):
        """Over compositions of t_m into m-1 parts, the block cost never exceeds the equal-split value."""
        tau = self.TAU
        for tm in range(1, 13):
            for parts in range(1, tm + 1):
                worst = -math.inf
                for cuts in combinations(range(1, tm), parts - 1):
                    lengths = np.diff((0,) + cuts + (tm,))
                    worst = max(worst, float(-np.log(tau.pmf(lengths)).sum()))
                equal = -parts * math.log(tau.pmf(tm / parts))
                assert worst <= equal + 1e-9
                if tm % parts == 0:
                    assert worst == pytest.approx(equal, rel=1e-12)


# ------------------------------------------------------------------ 7


@criterion(7, "parameter drift bound and its optimal rate")
class TestParameterDrift:
    """k=5 on a line, t <= 8, every path with drift at most 4."""

    def test_bound_dominates_regret(self):
        rng = np.random.default_rng(42)
        for alpha in (0.2, 0.41421, 0.6):
            spec = models.kernel_drift(5, DriftKernel.geometric(alpha))
            for t in range(1, 9):
                paths = _drift_paths(5, t, 4)
                seqs = np.array([p for p, _ in paths])
                bounds = np.array([bound_parameter_drift(t, d, alpha)[0] for _, d in paths])
                worst = -np.array([sequence_log_prob(spec, s) for s in seqs])
                assert np.all(worst <= bounds + 1e-9)
                x = rng.uniform(0.01, 1.0, (t, 5))
                assert np.all(_sequence_regrets(spec, x, seqs) <= bounds + 1e-9)

    def test_optimal_rate_matches_grid_search(self):
        grid = np.linspace(1e-4, 1 - 1e-4, 9999)
        for t in (1, 4, 8, 20, 100):
            for d in (1, 2, 4, 7, 30):
                values = -t * np.log((1 - grid) / (1 + grid)) - d * np.log(grid)
                assert abs(grid[np.argmin(values)] - drift_alpha_star(t, d)) <= 1e-3


# ------------------------------------------------------------------ 8


@criterion(8, "decreasing drift bound (d+2) ln(t+1)")
def test_decreasing_drift():
    rng = np.random.default_rng(42)
    spec = models.kernel_drift(5, schedule=SwitchRateSchedule.harmonic())
    for t in range(1, 9):
        paths = _drift_paths(5, t, 4)
        seqs = np.array([p for p, _ in paths])
        bounds = np.array([bound_decreasing_drift(t, d) for _, d in paths])
        worst = -np.array([sequence_log_prob(spec, s) for s in seqs])
        assert np.all(worst <= bounds + 1e-9)
        x = rng.uniform(0.01, 1.0, (t, 5))
        assert np.all(_sequence_regrets(spec, x, seqs) <= bounds + 1e-9)


# ------------------------------------------------------------------ 9


def kernel_kl_series(ahat: float, alpha: float) -> float:
    """KL(kappa_ahat || kappa_alpha) by direct summation over offsets."""

    def log_kernel(a, delta):
        return abs(delta) * math.log(a) + math.log((1 - a) / (1 + a))

    terms = []
    for delta in range(-4000, 4001):
        p = geometric_kernel(ahat, delta)
        if p > 0.0:
            terms.append(p * (log_kernel(ahat, delta) - log_kernel(alpha, delta)))
    return math.fsum(terms)


@criterion(9, "closed-form drift ML regret equals the series")
@pytest.mark.parametrize("ahat", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_pd_ml_closed_form(ahat):
    for alpha in (0.1, 0.3, 0.5, 0.7, 0.9):
        series = 10 * kernel_kl_series(ahat, alpha)
        assert abs(bound_pd_ml(10, ahat, alpha) - series) <= 1e-9 * max(1.0, abs(series))


# ----------------------------------------------------------------- 10


@criterion(10, "forward-backward cut identity and Viterbi against enumeration")
class TestInference:
    """All models in the zoo, random small instances."""

    @pytest.mark.parametrize("name", sorted(FACTORIES))
    def test_cut_identity(self, name):
        rng = np.random.default_rng(42)
        for _ in range(10):
            k, t = int(rng.integers(2, 4)), int(rng.integers(1, 6))
            x = rng.uniform(0.1, 1.0, (t, k))
            grid = marginals(spec_for(name, k), x)
            q = enumerated_likelihood(name, x)
            np.testing.assert_allclose(np.exp(grid.log_cut), q, rtol=1e-9)

    @pytest.mark.parametrize("name", sorted(FACTORIES))
    def test_viterbi_is_enumerated_argmax(self, name):
        rng = np.random.default_rng(42)
        checked = 0
        for _ in range(10):
            k, t = int(rng.integers(2, 4)), int(rng.integers(1, 6))
            spec = spec_for(name, k)
            if count_paths(spec, t) > 1e4:
                continue
            x = rng.uniform(0.1, 1.0, (t, k))
            rows = np.arange(t)
            best = max(enumerate_paths(spec, t), key=lambda p: p.prob * np.prod(x[rows, list(p.experts)]))
            path = viterbi(spec, x)
            joint = best.prob * np.prod(x[rows, list(best.experts)])
            assert path.log_joint == pytest.approx(math.log(joint), rel=1e-12, abs=1e-12)
            assert path.steps == best.nodes
            assert path.experts == best.experts
            checked += 1
        assert checked > 0


# ----------------------------------------------------------------- 11


@criterion(11, "investment mode")
class TestInvestment:
    """Wealth of the worked example and neutrality on unit returns."""

    def test_worked_example(self):
        res = invest(models.bayes(2), [[1.2, 0.8], [1.2, 0.8]])
        assert abs(res.wealth - 1.04) <= 1e-12

    @pytest.mark.parametrize("name", sorted(FACTORIES))
    def test_unit_returns_keep_wealth(self, name):
        res = invest(spec_for(name, 3), np.ones((10, 3)))
        assert abs(res.wealth - 1.0) <= 1e-12
        assert not res.ruined


# ----------------------------------------------------------------- 12


def _timed(spec, x):
    start = time.perf_counter()
    res = run(spec, x)
    return time.perf_counter() - start, res


def _generic_edges(spec, t):
    return np.array([spec.layer(i).n_edges for i in range(t)])


@criterion(12, "performance and exact edge-relaxation counts")
class TestPerformance:
    """Wall-clock sanity at scale and exact per-round edge counts."""

    K = 16

    def test_linear_models_at_scale(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(0.1, 1.0, (100_000, self.K))
        for spec, per_round in (
            (models.fixed_share(self.K, alpha=0.01), 3 * self.K),
            (models.kernel_drift(self.K, DriftKernel.geometric(0.3)), 7 * self.K - 4),
        ):
            seconds, res = _timed(spec, x)
            assert seconds < 10.0, (spec.name, seconds)
            assert np.isfinite(res.log_evidence)
            assert np.all(res.edges[1:] == per_round)

    def test_growing_models_at_scale(self):
        rng = np.random.default_rng(42)
        t = 2000
        x = rng.uniform(0.1, 1.0, (t, self.K))
        i = np.arange(1, t)
        for spec, per_round in (
            (models.switching_method(self.K), 3 * self.K * i),
            (models.run_length(self.K), self.K * (2 * i + 1)),
        ):
            seconds, res = _timed(spec, x)
            assert seconds < 10.0, (spec.name, seconds)
            assert res.edges[0] == self.K
            assert np.array_equal(res.edges[1:], per_round)

    @pytest.mark.parametrize("name", ["fs", "dsr-slow", "sm", "rl-fat", "pd", "ks", "fsgrid"])
    def test_fused_counts_equal_layer_counts(self, name):
        spec = spec_for(name, 5)
        x = np.random.default_rng(42).uniform(0.1, 1.0, (40, 5))
        assert np.array_equal(run(spec, x).edges, _generic_edges(spec, 40))
