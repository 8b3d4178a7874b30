"""Closed-form regret bounds and the empirical regret they dominate.

All quantities are in nats.  A bound that degenerates (a zero-probability
switch, an impossible rate) is returned as ``inf`` rather than raised.  A
theorem whose assumptions fail raises :class:`BoundInapplicable`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import rel_entr, xlogy

from .core import EhmmSpec, run, sequence_log_prob
from .priors import DriftKernel, TailPrior

LN2 = math.log(2.0)


class BoundInapplicable(ValueError):
    """The theorem's assumptions do not hold for the given model."""


@dataclass(frozen=True)
class ReferenceSequence:
    """Comparator expert sequence with its block and drift statistics."""

    experts: tuple[int, ...]

    def __post_init__(self):
        xs = tuple(int(x) for x in self.experts)
        if any(x < 0 for x in xs):
            raise ValueError("expert indices must be nonnegative")
        object.__setattr__(self, "experts", xs)

    @classmethod
    def of(cls, experts: Sequence[int]) -> ReferenceSequence:
        return cls(tuple(int(x) for x in experts))

    @property
    def t(self) -> int:
        return len(self.experts)

    @cached_property
    def switches(self) -> np.ndarray:
        """``sigma^{t-1}``: 1 at round i when the expert changes after it."""
        x = np.asarray(self.experts, dtype=np.int64)
        return (x[1:] != x[:-1]).astype(np.int64)

    @property
    def m(self) -> int:
        return int(self.switches.sum()) + 1 if self.t else 0

    @property
    def switch_times(self) -> tuple[int, ...]:
        """``t_2 .. t_m``: rounds after which a switch happens (1-based)."""
        return tuple(int(i) + 1 for i in np.flatnonzero(self.switches))

    @property
    def last_switch(self) -> int:
        """``t_m``, with ``t_1 = 0`` when there is no switch."""
        times = self.switch_times
        return times[-1] if times else 0

    @property
    def block_lengths(self) -> tuple[int, ...]:
        """Lengths of the blocks that end in a switch."""
        times = (0,) + self.switch_times
        return tuple(b - a for a, b in zip(times[:-1], times[1:]))

    @property
    def block_experts(self) -> tuple[int, ...]:
        if not self.t:
            return ()
        return (self.experts[0],) + tuple(self.experts[i] for i in self.switch_times)

    @property
    def alpha_star(self) -> float:
        return (self.m - 1) / (self.t - 1) if self.t > 1 else 0.0

    @property
    def drift(self) -> int:
        """Total drift ``|xi_1| + sum |xi_i - xi_{i-1}|`` along the expert line."""
        if not self.t:
            return 0
        x = np.asarray(self.experts, dtype=np.int64)
        return int(abs(x[0]) + np.abs(np.diff(x)).sum())

    def describe(self) -> str:
        return f"t={self.t},m={self.m},d={self.drift}"


# ------------------------------------------------------------------ entropy


def entropy_kl(alpha_star: float, alpha: float) -> tuple[float, float, float]:
    """Binary cross entropy ``H(a*, a)``, entropy ``H(a*)`` and ``KL(a* || a)``."""
    for v in (alpha_star, alpha):
        if not 0.0 <= v <= 1.0:
            raise ValueError("rates must lie in [0, 1]")
    cross = float(-xlogy(alpha_star, alpha) - xlogy(1.0 - alpha_star, 1.0 - alpha))
    ent = float(-xlogy(alpha_star, alpha_star) - xlogy(1.0 - alpha_star, 1.0 - alpha_star))
    # rounding can push a near-zero divergence just below zero
    kl = max(0.0, float(rel_entr(alpha_star, alpha) + rel_entr(1.0 - alpha_star, 1.0 - alpha)))
    return cross, ent, kl


def _times(n: float, value: float) -> float:
    return 0.0 if n == 0 else n * value


# ------------------------------------------------------------------- bounds


def bound_bayes(k: int, w=None, expert: int = 0) -> float:
    """``-ln w(expert)``: regret of the Bayes mixture against one fixed expert."""
    p = 1.0 / k if w is None else float(np.asarray(w, dtype=float)[expert])
    return math.inf if p <= 0 else -math.log(p)


def bound_elementwise(t: int, w_hat, w) -> float:
    """``t KL(w_hat || w)`` against the best fixed elementwise mixture."""
    kl = float(np.sum(rel_entr(np.asarray(w_hat, dtype=float), np.asarray(w, dtype=float))))
    return _times(t, kl)


def bound_fixed_share(k: int, t: int, m: int, alpha: float) -> float:
    """``m ln k + (t-1) H(alpha*, alpha)`` with ``alpha* = (m-1)/(t-1)``."""
    if not 1 <= m <= max(t, 1):
        raise ValueError(f"block count m={m} must lie in 1..t (t={t})")
    a_star = (m - 1) / (t - 1) if t > 1 else 0.0
    cross, _, _ = entropy_kl(a_star, alpha)
    return m * math.log(k) + _times(t - 1, cross)


def bound_fs_ml(t: int, alpha_hat: float, alpha: float) -> float:
    """``(t-1) KL(alpha_hat || alpha)``: loss of rate ``alpha`` against the best rate."""
    return _times(t - 1, entropy_kl(alpha_hat, alpha)[2])


def bound_dsr_slow(k: int, t: int, m: int, c: float = 1.0) -> float:
    """Switching rate ``1 - exp(-c/i)``: ``m ln k + c - (m-1) ln c + (m-1+c) ln(t-1)``."""
    if c <= 0:
        raise ValueError("c must be positive")
    if t < 2:
        raise ValueError("the slow-rate bound needs t >= 2")
    return m * math.log(k) + c - (m - 1) * math.log(c) + (m - 1 + c) * math.log(t - 1)


def dsr_slow_optimal_c(t: int, m: int) -> float:
    return (m - 1) / (1.0 + math.log(t - 1))


def fat_tail_relaxation(t: float) -> float:
    """Upper bound ``ln t + 2 ln ln(t+e) + e/t`` on ``-ln tau(t)`` for the fat-tailed prior."""
    return math.log(t) + 2.0 * math.log(math.log(t + math.e)) + math.e / t


def bound_dsr_fast(k: int, m: int, c: float, tau: TailPrior, t_m: int, relaxed: bool = False) -> float:
    """Rate ``1 - exp(-c tau(i))``: ``m ln k + c - (m-1) ln c - (m-1) ln tau(t_m)``.

    With ``relaxed`` the last term uses :func:`fat_tail_relaxation` instead.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    base = m * math.log(k) + c
    if m == 1:
        return base
    if t_m < 1:
        raise ValueError("t_m must be at least 1 when there are switches")
    if relaxed:
        cost = fat_tail_relaxation(t_m)
    else:
        p = float(tau.pmf(t_m))
        cost = math.inf if p <= 0 else -math.log(p)
    return base - (m - 1) * math.log(c) + (m - 1) * cost


def bound_switching_method(t: int) -> float:
    """``ln 2 + ln(t)/2``: regret of the Switching Method against every Fixed Share rate."""
    if t < 1:
        raise ValueError("t must be at least 1")
    return LN2 + 0.5 * math.log(t)


def bound_run_length(k: int, m: int, t_m: float, tau: TailPrior) -> float:
    """``m ln k - ln tau(inf) - (m-1) ln tau(t_m / (m-1))``."""
    theta = tau.at_infinity
    if theta <= 0:
        raise BoundInapplicable("the run-length bound assumes tau(inf) > 0")
    base = m * math.log(k) - math.log(theta)
    if m == 1:
        return base
    p = float(tau.pmf(t_m / (m - 1)))
    return math.inf if p <= 0 else base - (m - 1) * math.log(p)


def kernel_jump_prob(kernel: DriftKernel, jumps, k: int | None = None, topology: str = "line") -> np.ndarray:
    jumps = np.asarray(jumps, dtype=np.int64)
    if topology == "ring":
        return kernel.ring_pmf(k)[np.mod(jumps, k)]
    return np.asarray(kernel.pmf(jumps), dtype=float)


def bound_kernel_interp(
    interp_cost: float,
    kernel: DriftKernel,
    block_experts: Sequence[int],
    *,
    k: int | None = None,
    topology: str = "line",
    start_cost: float | None = None,
) -> float:
    """``-ln C(sigma^{t-1}) - sum_j ln kappa(k_j - k_{j-1})`` with ``k_0 = 0``.

    ``start_cost`` replaces the first term of the sum when the model does not
    draw its first expert from the kernel.
    """
    ks = np.concatenate(([0], np.asarray(block_experts, dtype=np.int64)))
    p = kernel_jump_prob(kernel, np.diff(ks), k, topology)
    with np.errstate(divide="ignore"):
        costs = -np.log(p)
    if start_cost is not None and costs.size:
        costs[0] = start_cost
    return float(interp_cost + costs.sum())


def drift_alpha_star(t: int, d: int) -> float:
    """Maximum-likelihood geometric parameter ``sqrt(1 + (t/d)^2) - t/d``."""
    if d == 0:
        return 0.0
    r = t / d
    return math.hypot(1.0, r) - r


def bound_parameter_drift(t: int, d: int, alpha: float) -> tuple[float, float]:
    """``-t ln((1-alpha)/(1+alpha)) - d ln alpha`` and the optimal ``alpha*``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    b = -t * math.log((1.0 - alpha) / (1.0 + alpha)) - _times(d, math.log(alpha))
    return b, drift_alpha_star(t, d)


def bound_pd_ml(t: int, alpha_hat: float, alpha: float) -> float:
    """``t KL(kappa_alpha_hat || kappa_alpha)`` in closed form."""
    for v in (alpha_hat, alpha):
        if not 0.0 < v < 1.0:
            raise ValueError("rates must lie in (0, 1)")
    ah, a = alpha_hat, alpha
    first = 2.0 * ah * math.log(ah / a) / ((1.0 - ah) * (1.0 + ah))
    second = math.log((1.0 + a) * (1.0 - ah) / ((1.0 - a) * (1.0 + ah)))
    return t * max(0.0, first + second)


def bound_decreasing_drift(t: int, d: int) -> float:
    """``(d+2) ln(t+1)`` for the kernel schedule ``alpha_i = 1/(i+1)``."""
    if t < 0 or d < 0:
        raise ValueError("t and d must be nonnegative")
    return (d + 2) * math.log(t + 1)


def bound_sequence_prior(spec: EhmmSpec, ref: ReferenceSequence) -> float:
    """``-ln Q(xi^t)``: keeping only the reference's term of the mixture."""
    return -sequence_log_prob(spec, ref.experts)


# --------------------------------------------------------- empirical regret


def _nonnegative(data) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim != 2 or not np.all(np.isfinite(x)) or np.any(x < 0):
        raise ValueError("data must be a finite nonnegative matrix (rounds x experts)")
    return x


def reference_log_loss(data, ref: ReferenceSequence) -> float:
    """``-ln P_xi(x^t)`` of the comparator (minus its log wealth for return data)."""
    x = _nonnegative(data)
    if x.shape[0] != ref.t:
        raise ValueError(f"reference has {ref.t} rounds but data has {x.shape[0]}")
    picked = x[np.arange(ref.t), list(ref.experts)]
    if np.any(picked <= 0):
        return math.inf
    return float(-np.log(picked).sum())


def empirical_regret(spec: EhmmSpec, data, ref: ReferenceSequence, log_evidence: float | None = None) -> float:
    """Codelength of the model minus that of the comparator (``-inf`` if the comparator is impossible)."""
    if max(ref.experts, default=0) >= spec.k:
        raise ValueError("reference names an expert the model does not have")
    ref_loss = reference_log_loss(data, ref)
    if log_evidence is None:
        log_evidence = run(spec, data).log_evidence
    if math.isinf(ref_loss):
        return -math.inf
    return log_evidence - ref_loss


def best_reference(data, max_blocks: int) -> ReferenceSequence:
    """Best comparator with at most ``max_blocks`` blocks, by dynamic programming.

    Ties prefer staying with the current expert, then the lowest index.
    Return matrices are accepted as well as likelihoods.
    """
    x = _nonnegative(data)
    t, k = x.shape
    if t == 0:
        return ReferenceSequence(())
    if max_blocks < 1:
        raise ValueError("need at least one block")
    m = min(max_blocks, t)
    with np.errstate(divide="ignore"):
        L = np.log(x)
    V = np.tile(L[0], (m, 1))  # V[j, xi]: best with at most j+1 blocks ending in xi
    back = np.full((t, m, k), -1, dtype=np.int64)
    for i in range(1, t):
        prev_best = np.argmax(V, axis=1)  # first maximizer
        prev_val = V[np.arange(m), prev_best]
        new = V.copy()
        for j in range(1, m):
            better = prev_val[j - 1] > V[j]
            new[j, better] = prev_val[j - 1]
            back[i, j, better] = prev_best[j - 1]
        V = new + L[i]
    j, xi = m - 1, int(np.argmax(V[m - 1]))
    seq = [xi]
    for i in range(t - 1, 0, -1):
        b = back[i, j, xi]
        if b >= 0:
            xi, j = int(b), j - 1
        seq.append(xi)
    return ReferenceSequence(tuple(reversed(seq)))
