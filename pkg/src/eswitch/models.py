"""Constructors for the expert-switching model zoo.

Every constructor returns an :class:`EhmmSpec` with explicit layers.  Most
also attach a fused forward rule that computes the same update in closed
form.  A fused rule reports the edge count of the layer it replaces, so work
counters agree whichever path runs.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

from .core import VOID, EhmmSpec, Layer, SpecError, tier_offsets
from .interpolate import (
    InterpolatorSpec,
    bernoulli_mixture,
    branch_layer,
    interpolate,
    jeffreys,
    mixture,
    renewal,
    scheduled,
)
from .priors import DriftKernel, SwitchRateSchedule, TailPrior, geometric_kernel

__all__ = [
    "DriftKernel",
    "SwitchRateSchedule",
    "TailPrior",
    "bayes",
    "decreasing_rate",
    "elementwise",
    "fixed_share",
    "fixed_share_batch",
    "fixed_share_grid",
    "geometric_convolve",
    "kernel_drift",
    "kernel_switch",
    "run_length",
    "switching_method",
]


def prior_weights(k: int, w=None) -> np.ndarray:
    """Validated prior over ``k`` experts (uniform when ``w`` is None)."""
    if k < 1:
        raise SpecError("need at least one expert")
    if w is None:
        return np.full(k, 1.0 / k)
    w = np.asarray(w, dtype=float)
    if w.shape != (k,) or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise SpecError(f"prior must be {k} nonnegative weights")
    if abs(w.sum() - 1.0) > 1e-9:
        raise SpecError(f"prior sums to {w.sum():.12g}, not 1")
    return w


def _start_layer(w: np.ndarray) -> Layer:
    k = w.size
    return Layer((1, k), np.zeros(k), 1 + np.arange(k), w, np.arange(k))


def _identity_layer(k: int) -> Layer:
    return Layer((k, k), np.arange(k), k + np.arange(k), np.ones(k), np.arange(k))


def _share_layer(w: np.ndarray, a: float) -> Layer:
    """Stay with probability 1-a, otherwise pass a silent state and redraw from w."""
    k = w.size
    off = tier_offsets((k, 1, k))
    q = np.arange(k)
    src = [q]
    dst = [off[2] + q]
    prob = [np.full(k, 1.0 - a)]
    if a > 0:
        src += [q, np.full(k, off[1])]
        dst += [np.full(k, off[1]), off[2] + q]
        prob += [np.full(k, a), w]
    return Layer((k, 1, k), np.concatenate(src), np.concatenate(dst), np.concatenate(prob), q)


def _rate_flags(a: float) -> tuple[bool, bool]:
    return a > 0, a < 1


class _EdgeCache:
    """Edge counts of layers whose structure depends only on which rates are 0 or 1."""

    def __init__(self, build):
        self._build = build
        self._seen: dict = {}

    def __call__(self, key, *args) -> int:
        n = self._seen.get(key)
        if n is None:
            n = self._build(*args).n_edges
            self._seen[key] = n
        return n


# ------------------------------------------------------------------ Bayes/EM


class _BayesRule:
    def __init__(self, w):
        self.w = w
        self.k = w.size
        self.nnz = int(np.count_nonzero(w))

    def advance(self, i, w):
        if i == 0:
            return self.w.copy(), None, self.nnz
        return w, None, self.k


def bayes(k: int, w=None) -> EhmmSpec:
    """Bayesian mixture: the expert is drawn once from ``w`` and never changes."""
    w = prior_weights(k, w)
    ident = _identity_layer(k)
    return EhmmSpec(k, _start_layer(w), lambda i: ident, "bayes", {}, stationary_from=1, fused=_BayesRule(w))


class _ElementwiseRule(_BayesRule):
    def advance(self, i, w):
        if i == 0:
            return self.w.copy(), None, self.nnz
        return w.sum() * self.w, None, self.k + self.nnz


def elementwise(k: int, w=None) -> EhmmSpec:
    """Fixed elementwise mixture: a fresh draw from ``w`` every round."""
    w = prior_weights(k, w)
    layer = _share_layer(w, 1.0)
    return EhmmSpec(k, _start_layer(w), lambda i: layer, "em", {}, stationary_from=1, fused=_ElementwiseRule(w))


# ---------------------------------------------------------------- Fixed Share


class _ShareRule:
    def __init__(self, w, schedule: SwitchRateSchedule):
        self.w = w
        self.schedule = schedule
        self.nnz = int(np.count_nonzero(w))
        self._edges = _EdgeCache(lambda a: _share_layer(w, a))

    def advance(self, i, w):
        if i == 0:
            return self.w.copy(), None, self.nnz
        a = self.schedule.rate(i)
        mass = (1.0 - a) * w + (a * w.sum()) * self.w
        return mass, None, self._edges(_rate_flags(a), a)


def _share_spec(k, w, schedule: SwitchRateSchedule, name: str, params: dict) -> EhmmSpec:
    w = prior_weights(k, w)
    return EhmmSpec(
        k,
        _start_layer(w),
        lambda i: _share_layer(w, schedule.rate(i)),
        name,
        params,
        stationary_from=1 if schedule.is_constant else None,
        fused=_ShareRule(w, schedule),
    )


def fixed_share(k: int, w=None, alpha: float = 0.1) -> EhmmSpec:
    """Fixed Share: after every round switch with probability ``alpha`` to a draw from ``w``."""
    if not 0.0 <= alpha <= 1.0:
        raise SpecError("alpha must lie in [0, 1]")
    return _share_spec(k, w, SwitchRateSchedule.constant(alpha), "fs", {"alpha": alpha})


def decreasing_rate(k: int, w=None, schedule: SwitchRateSchedule | None = None) -> EhmmSpec:
    """Fixed Share whose switching rate follows ``schedule``."""
    schedule = schedule or SwitchRateSchedule.slow(1.0)
    return _share_spec(k, w, schedule, "dsr", {"schedule": schedule.describe()})


def fixed_share_batch(data, alphas, w=None) -> np.ndarray:
    """Log evidence ``-ln FS_alpha(x^t)`` for every alpha in ``alphas`` at once."""
    x = np.asarray(data, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    w = prior_weights(x.shape[1], w)
    a = alphas[:, None]
    W = np.tile(w, (alphas.size, 1))
    out = np.zeros(alphas.size)
    for r in range(x.shape[0]):
        pred = W if r == 0 else (1.0 - a) * W + a * w
        joint = pred * x[r]
        z = joint.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            out -= np.log(z)
            W = joint / z[:, None]
    return out


class _GridRule:
    def __init__(self, w, alphas, prior):
        self.w = w
        self.alphas = alphas[:, None]
        self.prior = prior
        self.k = w.size
        self.labels = np.tile(np.arange(self.k), alphas.size)
        nnz = int(np.count_nonzero(w))
        self._init_edges = int(np.count_nonzero(prior)) + alphas.size * nnz
        self._edges = sum(_share_layer(w, a).n_edges for a in alphas)

    def advance(self, i, w):
        if i == 0:
            return np.outer(self.prior, self.w).ravel(), self.labels, self._init_edges
        W = w.reshape(-1, self.k)
        mass = (1.0 - self.alphas) * W + self.alphas * W.sum(axis=1, keepdims=True) * self.w
        return mass.ravel(), self.labels, self._edges


def fixed_share_grid(k: int, w=None, alphas=(0.0, 0.25, 0.5, 0.75, 1.0), grid_prior=None) -> EhmmSpec:
    """Bayesian mixture of Fixed Share models over a grid of switching rates."""
    alphas = np.asarray(alphas, dtype=float).ravel()
    if alphas.size == 0:
        raise SpecError("the alpha grid is empty")
    if np.any((alphas < 0) | (alphas > 1)):
        raise SpecError("grid rates must lie in [0, 1]")
    w = prior_weights(k, w)
    g = alphas.size
    prior = np.full(g, 1.0 / g) if grid_prior is None else np.asarray(grid_prior, dtype=float)
    comps = [fixed_share(k, w, float(a)) for a in alphas]
    params = {"alphas": "|".join(f"{a:g}" for a in alphas)}
    return mixture(comps, prior, name="fsgrid", params=params, fused=_GridRule(w, alphas, prior))


# ----------------------------------------------------------- Switching Method


class _CountRule:
    def __init__(self, w):
        self.w = w
        self.k = w.size
        self.nnz = int(np.count_nonzero(w))

    def advance(self, i, w):
        k = self.k
        if i == 0:
            return self.w.copy(), np.arange(k), self.nnz
        W = w.reshape(i, k)
        ns = np.arange(i)
        out = np.zeros((i + 1, k))
        out[:i] = W * ((i - 1 - ns + 0.5) / i)[:, None]
        out[1:] += (W.sum(axis=1) * ((ns + 0.5) / i))[:, None] * self.w
        return out.ravel(), np.tile(np.arange(k), i + 1), 2 * k * i + i * self.nnz


def switching_method(k: int, w=None) -> EhmmSpec:
    """Fixed Share with the switching rate integrated out under Jeffreys' prior.

    The state at round i is ``(n_s, xi)`` with ``n_s`` the number of earlier
    switches, stored at index ``n_s * k + xi``.
    """
    w = prior_weights(k, w)

    def expand(i: int) -> Layer:
        off = tier_offsets((k * i, i, k * (i + 1)))
        ns = np.repeat(np.arange(i), k)
        xi = np.tile(np.arange(k), i)
        state = ns * k + xi
        sil = np.arange(i)
        src = np.concatenate((state, state, np.repeat(off[1] + sil, k)))
        dst = np.concatenate((off[2] + state, off[1] + ns, off[2] + ((sil + 1)[:, None] * k + np.arange(k)).ravel()))
        prob = np.concatenate(((i - 1 - ns + 0.5) / i, (ns + 0.5) / i, np.tile(w, i)))
        return Layer((k * i, i, k * (i + 1)), src, dst, prob, np.tile(np.arange(k), i + 1))

    return EhmmSpec(k, _start_layer(w), expand, "sm", {}, fused=_CountRule(w))


# ------------------------------------------------------------------ run length


class _RunLengthRule:
    def __init__(self, w, tau: TailPrior):
        self.w = w
        self.k = w.size
        self.tau = tau
        self.nnz = int(np.count_nonzero(w))

    def advance(self, i, w):
        k = self.k
        if i == 0:
            return self.w.copy(), np.arange(k), self.nnz
        h = np.asarray(self.tau.hazard(np.arange(1, i + 1)), dtype=float)
        W = w.reshape(i, k)
        out = np.empty((i + 1, k))
        out[1:] = W * (1.0 - h)[:, None]
        out[0] = (W.sum(axis=1) @ h) * self.w
        edges = k * int(np.count_nonzero(h < 1)) + k * int(np.count_nonzero(h > 0))
        edges += self.nnz if np.any(h > 0) else 0
        return out.ravel(), np.tile(np.arange(k), i + 1), edges


def run_length(k: int, w=None, tau: TailPrior | None = None) -> EhmmSpec:
    """Renewal switching: block lengths drawn independently from ``tau``.

    The state at round i is ``(d, xi)`` where ``d`` is the position of round
    i inside its block, stored at index ``(d - 1) * k + xi``.
    """
    w = prior_weights(k, w)
    tau = tau or TailPrior.fat(0.5)
    if tau.kind == "finite" and tau.theta == 0:
        raise SpecError("a finite-support block prior without mass at infinity reaches a zero tail")

    def expand(i: int) -> Layer:
        h = np.asarray(tau.hazard(np.arange(1, i + 1)), dtype=float)
        off = tier_offsets((k * i, 1, k * (i + 1)))
        state = np.arange(k * i)
        hs = np.repeat(h, k)
        src = np.concatenate((state, state, np.full(k, off[1])))
        dst = np.concatenate((off[2] + k + state, np.full(k * i, off[1]), off[2] + np.arange(k)))
        prob = np.concatenate((1.0 - hs, hs, w if np.any(h > 0) else np.zeros(k)))
        return Layer((k * i, 1, k * (i + 1)), src, dst, prob, np.tile(np.arange(k), i + 1))

    return EhmmSpec(k, _start_layer(w), expand, "rl", {"tau": tau.describe()}, fused=_RunLengthRule(w, tau))


# ------------------------------------------------------------ kernel dynamics


def geometric_convolve(w: np.ndarray, alpha: float) -> np.ndarray:
    """Convolve ``w`` with the two-sided geometric kernel on a truncated line in O(k)."""
    c = (1.0 - alpha) / (1.0 + alpha)
    both = lfilter([1.0], [1.0, -alpha], np.stack((w, w[::-1])))
    return c * (both[0] + both[1, ::-1] - w)


def _drift_layer(k: int, a: float) -> Layer:
    """Geometric kernel through two chains of silent states (up and down).

    Tier ``t`` (1..k-1) holds the up-chain state leaving expert ``t - 1`` and
    the down-chain state leaving expert ``k - t``.
    """
    tiers = (k,) + (2,) * (k - 1) + (k,)
    off = tier_offsets(tiers)
    dest = off[k] + np.arange(k)

    def up(j):  # chain state leaving j toward j + 1
        return off[j + 1]

    def down(j):  # chain state leaving j toward j - 1
        return off[k - j] + 1

    stay = (1.0 - a) / (1.0 + a)
    leave = a / (1.0 + a)
    src, dst, prob = [], [], []

    def edge(s, d, p):
        src.append(s)
        dst.append(d)
        prob.append(p)

    for j in range(k):
        edge(j, dest[j], stay)
        edge(j, up(j) if j <= k - 2 else VOID, leave)
        edge(j, down(j) if j >= 1 else VOID, leave)
    for j in range(k - 1):
        edge(up(j), dest[j + 1], 1.0 - a)
        edge(up(j), up(j + 1) if j + 1 <= k - 2 else VOID, a)
    for j in range(1, k):
        edge(down(j), dest[j - 1], 1.0 - a)
        edge(down(j), down(j - 1) if j - 1 >= 1 else VOID, a)
    return Layer(tiers, src, dst, prob, np.arange(k))


def _geometric_start(k: int, a: float) -> Layer:
    inside = geometric_kernel(a, np.arange(k))
    lost = (a + a**k) / (1.0 + a)
    src = np.zeros(k + 1)
    dst = np.concatenate((1 + np.arange(k), [VOID]))
    return Layer((1, k), src, dst, np.concatenate((inside, [lost])), np.arange(k))


def _convolution_layer(k: int, kernel: DriftKernel, topology: str) -> Layer:
    q = np.arange(k)
    if topology == "ring":
        pmf = kernel.ring_pmf(k)
        offs = np.flatnonzero(pmf > 0)
        src = np.repeat(q, offs.size)
        dst = k + (src + np.tile(offs, k)) % k
        return Layer((k, k), src, dst, pmf[np.tile(offs, k)], q)
    offs, masses = kernel.line_support(k)
    total = 1.0
    src, dst, prob = [], [], []
    for j in range(k):
        target = j + offs
        inside = (target >= 0) & (target < k)
        src.append(np.full(int(inside.sum()), j))
        dst.append(k + target[inside])
        prob.append(masses[inside])
        lost = total - masses[inside].sum()
        if lost > 1e-15:
            src.append([j])
            dst.append([VOID])
            prob.append([lost])
    return Layer((k, k), np.concatenate(src), np.concatenate(dst), np.concatenate(prob), q)


def _kernel_start(k: int, kernel: DriftKernel, topology: str, alpha: float | None = None) -> Layer:
    if topology == "ring":
        return _start_layer(kernel.ring_pmf(k))
    if kernel.kind == "geometric":
        return _geometric_start(k, kernel.alpha if alpha is None else alpha)
    return _start_layer(np.full(k, 1.0 / k))


def _convolve(w: np.ndarray, kernel: DriftKernel, topology: str) -> np.ndarray:
    k = w.size
    if topology == "ring":
        pmf = kernel.ring_pmf(k)
        out = np.zeros(k)
        for j in np.flatnonzero(pmf > 0):
            out += pmf[j] * np.roll(w, j)
        return out
    offs, masses = kernel.line_support(k)
    if offs.size == 0:
        return np.zeros(k)
    lo = int(offs.min())
    dense = np.zeros(int(offs.max()) - lo + 1)
    dense[offs - lo] = masses
    full = np.convolve(w, dense)
    idx = np.arange(k) - lo
    ok = (idx >= 0) & (idx < full.size)
    out = np.zeros(k)
    out[ok] = full[idx[ok]]
    return out


def _check_topology(topology: str) -> None:
    if topology not in ("line", "ring"):
        raise SpecError(f"unknown topology {topology!r}")


class _GeometricDriftRule:
    def __init__(self, k, schedule: SwitchRateSchedule):
        self.k = k
        self.schedule = schedule

    def advance(self, i, w):
        a = self.schedule.rate(i + 1)
        if i == 0:
            return geometric_kernel(a, np.arange(self.k)), None, self.k + 1
        return geometric_convolve(w, a), None, 7 * self.k - 4


class _ConvolutionRule:
    def __init__(self, kernel, topology, start: Layer, layer: Layer):
        self.kernel = kernel
        self.topology = topology
        self.start_mass = start.push(np.ones(1))[start.dest_offset : start.n_nodes]
        self.start_edges = start.n_edges
        self.edges = layer.n_edges

    def advance(self, i, w):
        if i == 0:
            return self.start_mass.copy(), None, self.start_edges
        return _convolve(w, self.kernel, self.topology), None, self.edges


def _kernel_dynamics(
    k: int, kernel: DriftKernel, topology: str, schedule=None, name: str = "kernel", params: dict | None = None
) -> EhmmSpec:
    """Every round moves the expert by an offset drawn from ``kernel``."""
    _check_topology(topology)
    truncated = topology == "line"
    if kernel.kind == "geometric" and topology == "line":
        schedule = schedule or SwitchRateSchedule.constant(kernel.alpha)
        a1 = schedule.rate(1)
        if not 0 < a1 < 1:
            raise SpecError("drift rates must lie strictly between 0 and 1")
        return EhmmSpec(
            k,
            _geometric_start(k, a1),
            lambda i: _drift_layer(k, schedule.rate(i + 1)),
            name,
            {"schedule": schedule.describe()} if params is None else params,
            stationary_from=1 if schedule.is_constant else None,
            truncated=True,
            fused=_GeometricDriftRule(k, schedule),
        )
    if schedule is not None and not schedule.is_constant:
        raise SpecError("time-varying drift is only available for the geometric kernel on a line")
    start = _kernel_start(k, kernel, topology)
    layer = _convolution_layer(k, kernel, topology)
    return EhmmSpec(
        k,
        start,
        lambda i: layer,
        name,
        {"kernel": kernel.describe(), "topology": topology} if params is None else params,
        stationary_from=1,
        truncated=truncated,
        fused=_ConvolutionRule(kernel, topology, start, layer),
    )


def kernel_drift(
    k: int, kernel: DriftKernel | None = None, schedule: SwitchRateSchedule | None = None, topology: str = "line"
) -> EhmmSpec:
    """Parameter drift over ordered experts.

    With the geometric kernel on a line the update runs in O(k) per round;
    ``schedule`` then gives the kernel parameter alpha_i used to enter round i.
    Mass leaving the expert range is dropped.
    """
    kernel = kernel or DriftKernel.geometric(0.5)
    params = {"kernel": kernel.describe()} if schedule is None else {"schedule": schedule.describe()}
    if topology != "line":
        params["topology"] = topology
    return _kernel_dynamics(k, kernel, topology, schedule, name="pd", params=params)


def _kernel_bayes(k: int, kernel: DriftKernel, topology: str) -> EhmmSpec:
    start = _kernel_start(k, kernel, topology)
    ident = _identity_layer(k)
    return EhmmSpec(k, start, lambda i: ident, "bayes-kernel", {}, stationary_from=1, truncated=topology == "line")


class _KernelSwitchRule:
    def __init__(self, kernel, topology, schedule, start: Layer, branch_edges):
        self.kernel = kernel
        self.topology = topology
        self.schedule = schedule
        self.start_mass = start.push(np.ones(1))[start.dest_offset : start.n_nodes]
        self.start_edges = start.n_edges
        self._edges = _EdgeCache(branch_edges)

    def advance(self, i, w):
        if i == 0:
            return self.start_mass.copy(), None, self.start_edges
        a = self.schedule.rate(i)
        if self.kernel.kind == "geometric" and self.topology == "line":
            moved = geometric_convolve(w, self.kernel.alpha)
        else:
            moved = _convolve(w, self.kernel, self.topology)
        return (1.0 - a) * w + a * moved, None, self._edges(_rate_flags(a), i)


def kernel_switch(
    k: int,
    kernel: DriftKernel | None = None,
    interp: InterpolatorSpec | SwitchRateSchedule | float = 0.1,
    topology: str = "line",
) -> EhmmSpec:
    """Interpolate between staying put and a kernel move over ordered experts.

    ``interp`` may be a constant rate, a schedule, or any interpolator.
    Memoryless choices get an O(k) fused update.  Stateful interpolators use
    the generic product construction.
    """
    kernel = kernel or DriftKernel.geometric(0.5)
    _check_topology(topology)
    normal = _kernel_bayes(k, kernel, topology)
    switch = _kernel_dynamics(k, kernel, topology)
    if isinstance(interp, (int, float)):
        interp = SwitchRateSchedule.constant(float(interp))
    params = {"kernel": kernel.describe()}
    if topology != "line":
        params["topology"] = topology
    if isinstance(interp, SwitchRateSchedule):
        schedule = interp

        def branch(i):
            a = schedule.rate(i)
            return branch_layer([normal.layer(i), switch.layer(i)], [1.0 - a, a])

        params["interp"] = schedule.describe()
        rule = _KernelSwitchRule(kernel, topology, schedule, switch.initial, branch)
        return bernoulli_mixture(normal, switch, schedule, name="ks", params=params, fused=rule)
    params["interp"] = interp.describe()
    return interpolate(normal, switch, interp, name="ks", params=params)


# --------------------------------------------------------- generic products


def fixed_share_product(k: int, w=None, alpha: float = 0.1) -> EhmmSpec:
    """Fixed Share assembled by the generic interpolation construction."""
    return interpolate(bayes(k, w), elementwise(k, w), scheduled(SwitchRateSchedule.constant(alpha)), name="fs-product")


def switching_method_product(k: int, w=None) -> EhmmSpec:
    """Switching Method assembled by the generic interpolation construction."""
    return interpolate(bayes(k, w), elementwise(k, w), jeffreys(), name="sm-product")


def run_length_product(k: int, w=None, tau: TailPrior | None = None) -> EhmmSpec:
    """Run-length model assembled by the generic interpolation construction."""
    return interpolate(bayes(k, w), elementwise(k, w), renewal(tau or TailPrior.fat(0.5)), name="rl-product")
