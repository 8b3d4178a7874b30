"""Interpolation of two expert dynamics through an interpolator over {n, s}.

The product EHMM runs the interpolator and the base dynamics in lockstep.
The base model starts with the switch dynamics.  After round ``i`` the
interpolator emits a symbol ``sigma_i`` that selects which dynamics moves the
base state from round ``i`` to round ``i + 1``.  Product states at a round are
indexed interpolator-major: ``c * n_q + q``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import VOID, EhmmSpec, Layer, SpecError, tier_offsets
from .priors import SwitchRateSchedule, TailPrior

NORMAL, SWITCH = 0, 1


@dataclass(frozen=True, eq=False)
class InterpolatorSpec(EhmmSpec):
    """EHMM over the symbols n (0) and s (1).

    ``rate`` is set for memoryless interpolators: the probability that the
    symbol emitted after round ``i`` is s.
    """

    rate: Callable[[int], float] | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.k != 2:
            raise SpecError("an interpolator emits exactly two symbols")


# ------------------------------------------------------------ layer algebra


def _locate(layer: Layer, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tier = np.searchsorted(layer.offsets, nodes, side="right") - 1
    return tier, nodes - layer.offsets[tier]


def kron_layer(layer: Layer, n: int) -> Layer:
    """Run ``layer`` alongside ``n`` frozen copies of a second component."""
    tiers = tuple(t * n for t in layer.tiers)
    off = tier_offsets(tiers)
    q = np.arange(n)

    def remap(nodes):
        tier, local = _locate(layer, nodes)
        return off[tier] + local * n

    src = (remap(layer.src)[:, None] + q).ravel()
    void = layer.dst == VOID
    dst_base = np.where(void, 0, remap(np.where(void, 0, layer.dst)))
    dst = np.where(void[:, None], VOID, dst_base[:, None] + q).ravel()
    prob = np.repeat(layer.prob, n)
    return Layer(tiers, src, dst, prob, np.repeat(layer.labels, n))


def block_union(layers: Sequence[Layer]) -> Layer:
    """Side-by-side union; sources, silent tiers and destinations stay aligned."""
    depth = max(len(l.tiers) for l in layers) - 2
    n_tiers = depth + 2

    def placement(l: Layer) -> list[int]:
        return [0] + list(range(1, len(l.tiers) - 1)) + [n_tiers - 1]

    sizes = np.zeros((len(layers), n_tiers), dtype=np.int64)
    for b, l in enumerate(layers):
        for old, new in enumerate(placement(l)):
            sizes[b, new] = l.tiers[old]
    tiers = tuple(int(s) for s in sizes.sum(axis=0))
    off = tier_offsets(tiers)
    base = np.vstack((np.zeros(n_tiers, dtype=np.int64), np.cumsum(sizes, axis=0)[:-1]))

    srcs, dsts, probs = [], [], []
    for b, l in enumerate(layers):
        where = np.asarray(placement(l))

        def remap(nodes, l=l, where=where, b=b):
            tier, local = _locate(l, nodes)
            new = where[tier]
            return off[new] + base[b, new] + local

        void = l.dst == VOID
        srcs.append(remap(l.src))
        dsts.append(np.where(void, VOID, remap(np.where(void, 0, l.dst))))
        probs.append(l.prob)
    labels = np.concatenate([l.labels for l in layers])
    return Layer(tiers, np.concatenate(srcs), np.concatenate(dsts), np.concatenate(probs), labels)


def compose(first: Layer, second: Layer) -> Layer:
    """Chain two layers; the destinations of ``first`` become silent states."""
    if first.n_dest != second.n_sources:
        raise SpecError("composed layers do not line up")
    shift = first.dest_offset
    tiers = first.tiers[:-1] + second.tiers
    dst2 = np.where(second.dst == VOID, VOID, second.dst + shift)
    return Layer(
        tiers,
        np.concatenate((first.src, second.src + shift)),
        np.concatenate((first.dst, dst2)),
        np.concatenate((first.prob, second.prob)),
        second.labels,
    )


def branch_layer(layers: Sequence[Layer], probs: Sequence[float]) -> Layer:
    """Send each source into branch ``b`` with probability ``probs[b]``.

    All branches share their sources and destinations.  Branches with zero
    probability contribute no edges.
    """
    n, n_dest = layers[0].n_sources, layers[0].n_dest
    for l in layers[1:]:
        if l.n_sources != n or l.n_dest != n_dest or not np.array_equal(l.labels, layers[0].labels):
            raise SpecError("branches disagree on sources or destination labels")
    B = len(layers)
    depth = max(len(l.tiers) for l in layers) - 2
    n_tiers = depth + 3  # sources, branch entries, silent tiers, destinations
    sizes = np.zeros((B, n_tiers), dtype=np.int64)
    for b, l in enumerate(layers):
        sizes[b, 1] = n
        for m in range(1, len(l.tiers) - 1):
            sizes[b, m + 1] = l.tiers[m]
    tiers = tuple([n] + [int(s) for s in sizes.sum(axis=0)[1:-1]] + [n_dest])
    off = tier_offsets(tiers)
    base = np.vstack((np.zeros(n_tiers, dtype=np.int64), np.cumsum(sizes, axis=0)[:-1]))
    q = np.arange(n)

    srcs, dsts, ps = [], [], []
    for b, (l, p) in enumerate(zip(layers, probs)):
        if p <= 0:
            continue
        srcs.append(q)
        dsts.append(off[1] + base[b, 1] + q)
        ps.append(np.full(n, float(p)))
        where = np.array([1] + list(range(2, len(l.tiers))) + [n_tiers - 1])

        def remap(nodes, l=l, where=where, b=b):
            tier, local = _locate(l, nodes)
            new = where[tier]
            shift = np.where(new == n_tiers - 1, 0, base[b, new])
            return off[new] + shift + local

        void = l.dst == VOID
        srcs.append(remap(l.src))
        dsts.append(np.where(void, VOID, remap(np.where(void, 0, l.dst))))
        ps.append(l.prob)
    if not srcs:
        raise SpecError("every branch has zero probability")
    return Layer(tiers, np.concatenate(srcs), np.concatenate(dsts), np.concatenate(ps), layers[0].labels)


def _without_edges(layer: Layer) -> Layer:
    empty = np.zeros(0, dtype=np.int64)
    return Layer(layer.tiers, empty, empty, np.zeros(0), layer.labels)


def _stationary(*specs: EhmmSpec, lag: Sequence[int] | None = None) -> int | None:
    lag = lag or [0] * len(specs)
    marks = [s.stationary_from for s in specs]
    if any(m is None for m in marks):
        return None
    return max(max(m + d, 1) for m, d in zip(marks, lag))


# ------------------------------------------------------------- interpolators


def scheduled(schedule: SwitchRateSchedule) -> InterpolatorSpec:
    """Memoryless interpolator: emits s after round i with probability alpha_i."""

    def layer_for(i: int, sources: int) -> Layer:
        a = schedule.rate(i)
        src = np.repeat(np.arange(sources), 2)
        dst = sources + np.tile([NORMAL, SWITCH], sources)
        prob = np.tile([1.0 - a, a], sources)
        return Layer((sources, 2), src, dst, prob, [NORMAL, SWITCH])

    return InterpolatorSpec(
        k=2,
        initial=layer_for(1, 1),
        expand=lambda j: layer_for(j + 1, 2),
        name="bernoulli" if schedule.is_constant else "scheduled",
        params={"schedule": schedule.describe()},
        stationary_from=1 if schedule.is_constant else None,
        rate=schedule.rate,
    )


def bernoulli(alpha: float) -> InterpolatorSpec:
    return scheduled(SwitchRateSchedule.constant(alpha))


def jeffreys() -> InterpolatorSpec:
    """Switch and no-switch counts under add-one-half (Jeffreys) smoothing.

    The productive state emitted after round j is ``2 * n_s + symbol``, where
    ``n_s`` counts the earlier switches.
    """

    initial = Layer((1, 2), [0, 0], [1, 2], [0.5, 0.5], [NORMAL, SWITCH])

    def expand(j: int) -> Layer:
        n_src, n_sil, n_dst = 2 * j, j + 1, 2 * (j + 1)
        off = tier_offsets((n_src, n_sil, n_dst))
        ns = np.repeat(np.arange(j), 2)
        sym = np.tile([NORMAL, SWITCH], j)
        to_silent = off[1] + ns + sym
        after = np.arange(j + 1)
        nn = j - after
        src = np.concatenate((np.arange(n_src), off[1] + after, off[1] + after))
        dst = np.concatenate((to_silent, off[2] + 2 * after + NORMAL, off[2] + 2 * after + SWITCH))
        prob = np.concatenate((np.ones(n_src), (nn + 0.5) / (j + 1), (after + 0.5) / (j + 1)))
        return Layer((n_src, n_sil, n_dst), src, dst, prob, np.tile([NORMAL, SWITCH], j + 1))

    return InterpolatorSpec(k=2, initial=initial, expand=expand, name="jeffreys")


def renewal(tau: TailPrior) -> InterpolatorSpec:
    """Run-length interpolator: block lengths drawn independently from ``tau``.

    After round j, state 0 is the switch symbol and state ``d - 1`` is the
    no-switch symbol whose next block position is ``d`` (``2 <= d <= j + 1``).
    """

    def layer_for(n: int) -> Layer:
        # n sources; silent state p - 1 holds block position p = 1..n
        h = np.asarray(tau.hazard(np.arange(1, n + 1)), dtype=float)
        off = tier_offsets((n, n, n + 1))
        pos = np.arange(n)
        src = np.concatenate((pos, off[1] + pos, off[1] + pos))
        dst = np.concatenate((off[1] + pos, np.full(n, off[2]), off[2] + pos + 1))
        prob = np.concatenate((np.ones(n), h, 1.0 - h))
        return Layer((n, n, n + 1), src, dst, prob, [SWITCH] + [NORMAL] * n)

    h1 = float(tau.hazard(1))
    initial = Layer((1, 2), [0, 0], [1, 2], [h1, 1.0 - h1], [SWITCH, NORMAL])
    return InterpolatorSpec(
        k=2,
        initial=initial,
        expand=lambda j: layer_for(j + 1),
        name="renewal",
        params={"tau": tau.describe()},
    )


def constant_symbol(symbol: int) -> InterpolatorSpec:
    """One-state interpolator that always emits ``symbol``."""
    layer = Layer((1, 1), [0], [1], [1.0], [symbol])
    return InterpolatorSpec(k=2, initial=layer, expand=lambda j: layer, name="constant", stationary_from=1)


# -------------------------------------------------------------- combinators


def _check_pair(i: int, normal: Layer, switch: Layer) -> None:
    if normal.n_sources != switch.n_sources or normal.n_dest != switch.n_dest:
        raise SpecError(f"layer {i}: normal and switch dynamics have different state spaces")
    if not np.array_equal(normal.labels, switch.labels):
        raise SpecError(f"layer {i}: normal and switch dynamics label states differently")


def interpolate(
    normal: EhmmSpec, switch: EhmmSpec, interp: InterpolatorSpec, name: str = "interp", params: dict | None = None
) -> EhmmSpec:
    """Product EHMM in which ``interp`` chooses the dynamics of every transition."""
    if normal.k != switch.k:
        raise SpecError("normal and switch dynamics have different expert counts")
    if interp.k != 2:
        raise SpecError("interpolator must emit two symbols")
    _check_pair(0, normal.initial, switch.initial)

    def expand(i: int) -> Layer:
        c_layer = interp.layer(i - 1)
        qn, qs = normal.layer(i), switch.layer(i)
        _check_pair(i, qn, qs)
        fed = np.zeros(c_layer.n_nodes + 1, dtype=bool)
        fed[c_layer.dst[c_layer.dst != VOID]] = True
        fed = fed[c_layer.dest_offset : c_layer.n_nodes]
        blocks = []
        for c, sym in enumerate(c_layer.labels):
            base = qs if sym == SWITCH else qn
            blocks.append(base if fed[c] else _without_edges(base))
        return compose(kron_layer(c_layer, qn.n_sources), block_union(blocks))

    return EhmmSpec(
        k=normal.k,
        initial=switch.initial,
        expand=expand,
        name=name,
        params={"interp": interp.describe()} if params is None else params,
        stationary_from=_stationary(normal, switch, interp, lag=[0, 0, 1]),
        truncated=normal.truncated or switch.truncated,
        components=(normal, switch, interp),
    )


def bernoulli_mixture(
    normal: EhmmSpec,
    switch: EhmmSpec,
    schedule: SwitchRateSchedule,
    name: str = "mix",
    params: dict | None = None,
    fused=None,
) -> EhmmSpec:
    """Memoryless interpolation with the interpolator state summed out.

    Equivalent to ``interpolate(normal, switch, scheduled(schedule))`` but
    with one state per base state.
    """
    _check_pair(0, normal.initial, switch.initial)

    def expand(i: int) -> Layer:
        a = schedule.rate(i)
        return branch_layer([normal.layer(i), switch.layer(i)], [1.0 - a, a])

    return EhmmSpec(
        k=normal.k,
        initial=switch.initial,
        expand=expand,
        name=name,
        params={"schedule": schedule.describe()} if params is None else params,
        stationary_from=_stationary(normal, switch) if schedule.is_constant else None,
        truncated=normal.truncated or switch.truncated,
        fused=fused,
    )


def mixture(
    components: Sequence[EhmmSpec], prior=None, name: str = "mixture", params: dict | None = None, fused=None
) -> EhmmSpec:
    """Bayesian mixture over whole EHMMs: the start state first picks a component."""
    comps = list(components)
    if not comps:
        raise SpecError("a mixture needs at least one component")
    k = comps[0].k
    if any(c.k != k for c in comps):
        raise SpecError("mixture components have different expert counts")
    g = len(comps)
    prior = np.full(g, 1.0 / g) if prior is None else np.asarray(prior, dtype=float)
    if prior.shape != (g,) or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
        raise SpecError("mixture prior must be a distribution over the components")
    fan = Layer((1, g), np.zeros(g), 1 + np.arange(g), prior, np.zeros(g))
    initial = compose(fan, block_union([c.initial for c in comps]))
    return EhmmSpec(
        k=k,
        initial=initial,
        expand=lambda i: block_union([c.layer(i) for c in comps]),
        name=name,
        params=params or {},
        stationary_from=_stationary(*comps),
        truncated=any(c.truncated for c in comps),
        fused=fused,
        components=tuple(comps),
    )


# --------------------------------------------------------------- edge counts


@dataclass(frozen=True)
class EdgeReport:
    """Edges of layers 0..horizon-1 and the product edge bound for each."""

    per_layer: np.ndarray
    bound: np.ndarray

    @property
    def total(self) -> int:
        return int(self.per_layer.sum())

    @property
    def bound_total(self) -> int:
        return int(self.bound.sum())


def edge_count(spec: EhmmSpec, horizon: int) -> EdgeReport:
    """Exact edge counts; for products also ``|C^p| max(e_n, e_s) + |Q^p| e_C`` per layer."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    per = np.array([spec.layer(i).n_edges for i in range(horizon)], dtype=np.int64)
    if len(spec.components) != 3 or not isinstance(spec.components[2], InterpolatorSpec):
        return EdgeReport(per, per.copy())
    normal, switch, interp = spec.components
    bound = np.empty(horizon, dtype=np.int64)
    bound[0] = switch.initial.n_edges
    for i in range(1, horizon):
        c = interp.layer(i - 1)
        qn, qs = normal.layer(i), switch.layer(i)
        bound[i] = c.n_dest * max(qn.n_edges, qs.n_edges) + qn.n_sources * c.n_edges
    return EdgeReport(per, bound)
