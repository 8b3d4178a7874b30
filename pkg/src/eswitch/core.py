"""Expert hidden Markov models as layered state graphs, plus the forward engine.

An EHMM is stored as a sequence of layers.  Layer 0 leads from the start
state to the productive states of round 1; layer ``i`` (``i >= 1``) leads from
the productive states of round ``i`` to those of round ``i + 1``, passing
through silent states on the way.  Nodes inside a layer are grouped in tiers:
tier 0 holds the sources, the last tier holds the destinations and every edge
moves to a strictly later tier, so each layer is acyclic by construction and
silent states can be processed tier by tier.

Probabilities are carried as normalized weights plus an accumulated
log-evidence, which keeps long runs free of underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np

SUM_TOL = 1e-12
VOID = -1  # destination of an edge whose mass leaves the model


class SpecError(ValueError):
    """An EHMM violates one of its structural invariants."""


class EvidenceCollapse(ArithmeticError):
    """Every state assigns zero probability to the observed data."""

    def __init__(self, round_index: int):
        super().__init__(f"evidence collapse at round {round_index}: total mixture mass is 0")
        self.round_index = round_index


class PathLimitExceeded(ValueError):
    """Exhaustive path enumeration would exceed the requested cap."""

    def __init__(self, count: float, cap: int):
        super().__init__(f"{count:.6g} state paths exceed the cap of {cap}")
        self.count = count
        self.cap = cap


def tier_offsets(tiers: Sequence[int]) -> np.ndarray:
    """Global index of the first node of every tier, followed by the node total."""
    return np.concatenate(([0], np.cumsum(np.asarray(tiers, dtype=np.int64))))


@dataclass(frozen=True, eq=False)
class Layer:
    """Transition subgraph between two consecutive productive layers.

    ``src`` and ``dst`` are global node indices (tier offset plus local index);
    ``dst == VOID`` drops the edge's mass.  ``labels`` gives the symbol of each
    destination node.  Edges with zero probability are discarded.
    """

    tiers: tuple[int, ...]
    src: np.ndarray
    dst: np.ndarray
    prob: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        tiers = tuple(int(n) for n in self.tiers)
        if len(tiers) < 2 or min(tiers) < 0:
            raise SpecError(f"a layer needs at least a source and a destination tier, got {tiers}")
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        prob = np.asarray(self.prob, dtype=float).ravel()
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if not len(src) == len(dst) == len(prob):
            raise SpecError("edge arrays differ in length")
        if len(labels) != tiers[-1]:
            raise SpecError(f"{len(labels)} labels for {tiers[-1]} destination states")
        if not np.all(np.isfinite(prob)) or np.any(prob < 0):
            raise SpecError("edge probabilities must be finite and nonnegative")
        keep = prob > 0
        if not keep.all():
            src, dst, prob = src[keep], dst[keep], prob[keep]

        offsets = tier_offsets(tiers)
        n = int(offsets[-1])
        if src.size and (src.min() < 0 or src.max() >= offsets[-2]):
            raise SpecError("edge source outside the non-destination tiers")
        if dst.size and (dst.min() < VOID or dst.max() >= n):
            raise SpecError("edge destination out of range")
        src_tier = np.searchsorted(offsets, src, side="right") - 1
        dst_tier = np.where(dst == VOID, len(tiers), np.searchsorted(offsets, dst, side="right") - 1)
        if np.any(dst_tier <= src_tier):
            raise SpecError("edge does not move to a later tier")

        order = np.argsort(src_tier, kind="stable")
        src, dst, prob, src_tier = src[order], dst[order], prob[order], src_tier[order]
        cuts = np.searchsorted(src_tier, np.arange(len(tiers)))
        spans = []
        for tier in range(len(tiers) - 1):
            a, b = int(cuts[tier]), int(cuts[tier + 1])
            if b > a:
                spans.append((int(offsets[tier]), tiers[tier], int(offsets[tier + 1]), a, b))

        set_ = object.__setattr__
        set_(self, "tiers", tiers)
        set_(self, "src", src)
        set_(self, "dst", dst)
        set_(self, "prob", prob)
        set_(self, "labels", labels)
        set_(self, "offsets", offsets)
        set_(self, "n_nodes", n)
        set_(self, "_dst_slot", np.where(dst == VOID, n, dst))
        set_(self, "_spans", tuple(spans))

    @property
    def n_edges(self) -> int:
        return int(self.prob.size)

    @property
    def n_sources(self) -> int:
        return self.tiers[0]

    @property
    def n_dest(self) -> int:
        return self.tiers[-1]

    @property
    def dest_offset(self) -> int:
        return int(self.offsets[-2])

    @cached_property
    def outsum(self) -> np.ndarray:
        """Total outgoing probability of every node (destinations have none)."""
        return np.bincount(self.src, weights=self.prob, minlength=self.n_nodes)

    @cached_property
    def log_prob(self) -> np.ndarray:
        return np.log(self.prob)

    def push(self, w: np.ndarray, prob: np.ndarray | None = None) -> np.ndarray:
        """Percolate source mass through the layer.

        Returns the mass of every node plus a trailing slot for dropped mass.
        """
        prob = self.prob if prob is None else prob
        n = self.n_nodes
        mass = np.zeros(n + 1)
        mass[: self.tiers[0]] = w
        for _, _, lo, a, b in self._spans:
            flow = mass[self.src[a:b]] * prob[a:b]
            mass[lo:] += np.bincount(self._dst_slot[a:b] - lo, weights=flow, minlength=n + 1 - lo)
        return mass

    def pull(self, beta_dest: np.ndarray) -> np.ndarray:
        """Backward pass: expected destination value seen from every source."""
        n = self.n_nodes
        val = np.zeros(n + 1)
        val[self.dest_offset : n] = beta_dest
        for off, size, _, a, b in reversed(self._spans):
            flow = self.prob[a:b] * val[self._dst_slot[a:b]]
            val[off : off + size] = np.bincount(self.src[a:b] - off, weights=flow, minlength=size)
        return val[: self.tiers[0]]

    def relax_max(self, score0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Max-product relaxation in log space.

        Returns the best score and best predecessor of every node.  Ties go to
        the lowest predecessor index.
        """
        n = self.n_nodes
        score = np.full(n + 1, -np.inf)
        score[: self.tiers[0]] = score0
        pred = np.full(n + 1, -1, dtype=np.int64)
        for _, _, _, a, b in self._spans:
            s = self.src[a:b]
            d = self._dst_slot[a:b]
            cand = score[s] + self.log_prob[a:b]
            order = np.lexsort((s, -cand))
            targets, first = np.unique(d[order], return_index=True)
            best = order[first]
            better = cand[best] > score[targets]  # strict: earlier tiers hold lower indices
            score[targets[better]] = cand[best][better]
            pred[targets[better]] = s[best][better]
        return score[:n], pred[:n]

    def adjacency(self) -> dict[int, list[tuple[int, float]]]:
        adj: dict[int, list[tuple[int, float]]] = {}
        for s, d, p in zip(self.src.tolist(), self.dst.tolist(), self.prob.tolist()):
            adj.setdefault(s, []).append((d, p))
        return adj


class FusedRule(Protocol):
    """Closed-form forward update that replaces generic layer percolation.

    ``advance(i, w)`` maps weights on the productive states of round ``i``
    (``i = 0``: the start state) to predictive mass on round ``i + 1``; it
    returns that mass, the destination labels (``None`` for the identity) and
    the number of edges of the equivalent layer.
    """

    def advance(self, i: int, w: np.ndarray) -> tuple[np.ndarray, np.ndarray | None, int]: ...


@dataclass(frozen=True, eq=False)
class EhmmSpec:
    """Immutable layered EHMM over ``k`` experts.

    ``expand(i)`` builds layer ``i >= 1``.  When ``stationary_from`` is set,
    every layer from that index on equals ``expand(stationary_from)`` and is
    built once.  ``truncated`` marks models that drop mass (sub-probability
    predictions).
    """

    k: int
    initial: Layer
    expand: Callable[[int], Layer]
    name: str = "ehmm"
    params: dict = field(default_factory=dict)
    stationary_from: int | None = None
    truncated: bool = False
    fused: FusedRule | None = None
    components: tuple = ()

    def __post_init__(self):
        if self.k < 1:
            raise SpecError("an EHMM needs at least one expert")
        if self.initial.n_sources != 1:
            raise SpecError("the initial layer must have a single start state")
        object.__setattr__(self, "_cache", {})

    def layer(self, i: int) -> Layer:
        if i < 0:
            raise IndexError(f"layer index {i} < 0")
        if i == 0:
            return self.initial
        if self.stationary_from is not None and i >= self.stationary_from:
            key = self.stationary_from
            cached = self._cache.get(key)
            if cached is None:
                cached = self.expand(key)
                self._cache[key] = cached
            return cached
        return self.expand(i)

    def describe(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.name}({inner})"


class _LayerPropagator:
    def __init__(self, spec: EhmmSpec, check: bool = True):
        self.spec = spec
        self.check = check

    def advance(self, i: int, w: np.ndarray):
        layer = self.spec.layer(i)
        if len(w) != layer.n_sources:
            raise SpecError(f"layer {i} has {layer.n_sources} sources but the state has {len(w)} weights")
        mass = layer.push(w)
        if self.check:
            _check_outgoing(i, layer, mass)
        return mass[layer.dest_offset : layer.n_nodes], layer.labels, layer.n_edges


def _check_outgoing(i: int, layer: Layer, mass: np.ndarray) -> None:
    live = mass[: layer.dest_offset] > 0
    err = np.abs(layer.outsum[: layer.dest_offset] - 1.0) > SUM_TOL
    bad = np.flatnonzero(live & err)
    if bad.size:
        node = int(bad[0])
        raise SpecError(f"layer {i}: state {node} has outgoing probability {layer.outsum[node]:.17g}")


def propagator(spec: EhmmSpec, check: bool = True):
    """The forward update for ``spec``: its fused rule if present, else layers."""
    return spec.fused if spec.fused is not None else _LayerPropagator(spec, check)


def project(mass: np.ndarray, labels: np.ndarray | None, k: int) -> np.ndarray:
    if labels is None:
        return mass.copy()
    return np.bincount(labels, weights=mass, minlength=k)


# ---------------------------------------------------------------- data checks


def as_likelihoods(data, k: int | None = None) -> np.ndarray:
    """Validate a prediction-mode matrix (entries in [0, 1])."""
    x = np.asarray(data, dtype=float)
    if x.ndim == 1 and x.size == 0:
        x = x.reshape(0, k or 0)
    if x.ndim != 2:
        raise ValueError("likelihood data must be a 2-D matrix (rounds x experts)")
    if k is not None and x.shape[1] != k:
        raise ValueError(f"expected {k} expert columns, got {x.shape[1]}")
    bad = ~np.isfinite(x) | (x < 0) | (x > 1)
    if bad.any():
        r = int(np.flatnonzero(bad.any(axis=1))[0])
        raise ValueError(f"row {r + 1}: likelihoods must lie in [0, 1]")
    return x


def as_returns(data, k: int | None = None) -> np.ndarray:
    """Validate an investment-mode matrix (nonnegative, each row has a positive entry)."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("return data must be a 2-D matrix (rounds x experts)")
    if k is not None and x.shape[1] != k:
        raise ValueError(f"expected {k} expert columns, got {x.shape[1]}")
    bad = ~np.isfinite(x) | (x < 0)
    if bad.any():
        r = int(np.flatnonzero(bad.any(axis=1))[0])
        raise ValueError(f"row {r + 1}: returns must be finite and nonnegative")
    dead = ~(x > 0).any(axis=1)
    if dead.any():
        raise ValueError(f"row {int(np.flatnonzero(dead)[0]) + 1}: no positive return")
    return x


# ------------------------------------------------------------- forward engine


@dataclass(frozen=True)
class ForwardState:
    """Posterior over the productive states of the current round.

    ``log_evidence`` is the accumulated codelength ``-ln Q(x^round)`` in nats
    and ``relaxations`` counts the edges processed so far.
    """

    round: int
    weights: np.ndarray
    log_evidence: float = 0.0
    relaxations: int = 0


def start_state(spec: EhmmSpec) -> ForwardState:
    return ForwardState(0, np.ones(1))


def predict(state: ForwardState, spec: EhmmSpec) -> np.ndarray:
    """Predictive distribution on the expert of the next round."""
    mass, labels, _ = propagator(spec).advance(state.round, state.weights)
    return project(mass, labels, spec.k)


def observe(state: ForwardState, spec: EhmmSpec, row) -> ForwardState:
    """Condition on one round of expert likelihoods."""
    row = np.asarray(row, dtype=float)
    if row.shape != (spec.k,):
        raise ValueError(f"row must have {spec.k} entries")
    mass, labels, edges = propagator(spec).advance(state.round, state.weights)
    joint = mass * (row if labels is None else row[labels])
    z = joint.sum()
    if not z > 0:
        raise EvidenceCollapse(state.round + 1)
    return ForwardState(state.round + 1, joint / z, state.log_evidence - float(np.log(z)), state.relaxations + edges)


@dataclass(frozen=True)
class RunResult:
    state: ForwardState
    predictions: np.ndarray  # rounds x k, predictive distribution before each round
    losses: np.ndarray  # per-round -ln Q(x_i | x^{i-1})
    edges: np.ndarray  # edges relaxed to produce each round's prediction

    @property
    def log_evidence(self) -> float:
        return self.state.log_evidence


def run(spec: EhmmSpec, data, state: ForwardState | None = None, *, check: bool = True) -> RunResult:
    """Forward pass over ``data``, optionally continuing from ``state``."""
    x = as_likelihoods(data, spec.k)
    state = start_state(spec) if state is None else state
    prop = propagator(spec, check)
    t, k = x.shape
    preds = np.empty((t, k))
    z = np.empty(t)
    edges = np.empty(t, dtype=np.int64)
    w = state.weights
    i0 = state.round
    for r in range(t):
        mass, labels, e = prop.advance(i0 + r, w)
        row = x[r]
        joint = mass * (row if labels is None else row[labels])
        zr = joint.sum()
        if not zr > 0:
            raise EvidenceCollapse(i0 + r + 1)
        w = joint / zr
        preds[r] = mass if labels is None else np.bincount(labels, weights=mass, minlength=k)
        z[r] = zr
        edges[r] = e
    losses = -np.log(z)
    final = ForwardState(
        i0 + t,
        w,
        state.log_evidence + float(losses.sum()),
        state.relaxations + int(edges.sum()),
    )
    return RunResult(final, preds, losses, edges)


@dataclass(frozen=True)
class InvestResult:
    wealth: float
    log_wealth: float
    portfolios: np.ndarray  # rounds x k, weights held during each round
    ruined: bool
    ruin_round: int | None


def invest(spec: EhmmSpec, returns) -> InvestResult:
    """Run the model with return factors in place of likelihoods.

    The portfolio held in a round is the predictive distribution on experts,
    renormalized when the model drops mass.
    """
    x = as_returns(returns, spec.k)
    prop = propagator(spec)
    t, k = x.shape
    ports = np.full((t, k), np.nan)
    w = np.ones(1)
    log_wealth = 0.0
    for r in range(t):
        mass, labels, _ = prop.advance(r, w)
        port = project(mass, labels, k)
        port /= port.sum()
        ports[r] = port
        row = x[r]
        joint = mass * (row if labels is None else row[labels])
        total = joint.sum()
        if not total > 0:
            return InvestResult(0.0, -np.inf, ports, True, r + 1)
        log_wealth += float(np.log(port @ row))
        w = joint / total
    return InvestResult(float(np.exp(log_wealth)), log_wealth, ports, False, None)


# ----------------------------------------------------------------- validation


def validate_spec(spec: EhmmSpec, horizon: int) -> list[str]:
    """List every invariant violation on the initial layer and layers 1..horizon."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    problems: list[str] = []
    reach = np.ones(1)
    for i in range(horizon + 1):
        try:
            layer = spec.layer(i)
        except SpecError as exc:
            problems.append(f"layer {i}: {exc}")
            break
        if layer.n_sources != reach.size:
            problems.append(f"layer {i}: {layer.n_sources} sources but the previous layer ends in {reach.size} states")
            break
        if layer.labels.size and (layer.labels.min() < 0 or layer.labels.max() >= spec.k):
            problems.append(f"layer {i}: productive label outside 0..{spec.k - 1}")
        hit = layer.push(reach, prob=np.ones(layer.n_edges)) > 0
        live = hit[: layer.dest_offset]
        err = np.abs(layer.outsum[: layer.dest_offset] - 1.0)
        for node in np.flatnonzero(live & (err > SUM_TOL)):
            problems.append(f"layer {i}: state {int(node)} has outgoing probability {layer.outsum[node]:.17g}")
        reach = hit[layer.dest_offset : layer.n_nodes].astype(float)
        if not reach.any():
            where = "start state reaches" if i == 0 else f"layer {i} reaches"
            problems.append(f"{where} no productive state of round {i + 1}")
            break
    return problems


# -------------------------------------------------------------------- oracles


@dataclass(frozen=True)
class Path:
    """One complete state path: ``(layer, node)`` pairs from the start state."""

    nodes: tuple[tuple[int, int], ...]
    prob: float
    experts: tuple[int, ...]


def count_paths(spec: EhmmSpec, t: int) -> float:
    """Number of start-to-round-``t`` state paths that keep their mass."""
    counts = np.ones(1)
    for i in range(t):
        layer = spec.layer(i)
        counts = layer.push(counts, prob=np.ones(layer.n_edges))[layer.dest_offset : layer.n_nodes]
    return float(counts.sum())


def enumerate_paths(spec: EhmmSpec, t: int, max_paths: int = 100_000) -> Iterator[Path]:
    """Every state path through rounds 1..t, silent states included."""
    count = count_paths(spec, t)
    if count > max_paths:
        raise PathLimitExceeded(count, max_paths)
    layers = [spec.layer(i) for i in range(t)]
    adjs = [layer.adjacency() for layer in layers]

    def walk(i, source, trail, prob, experts):
        if i == t:
            yield Path(trail, prob, experts)
            return
        layer, adj = layers[i], adjs[i]
        stack = [(source, trail, prob)]
        while stack:
            node, tr, p = stack.pop()
            for nxt, q in reversed(adj.get(node, [])):
                if nxt == VOID:
                    continue
                step = tr + ((i, nxt),)
                if nxt >= layer.dest_offset:
                    local = nxt - layer.dest_offset
                    yield from walk(i + 1, local, step, p * q, experts + (int(layer.labels[local]),))
                else:
                    stack.append((nxt, step, p * q))

    yield from walk(0, 0, ((0, 0),), 1.0, ())


def oracle_likelihood(spec: EhmmSpec, data, max_paths: int = 100_000) -> float:
    """Exact ``Q(x^t)`` by summing over every state path."""
    x = as_likelihoods(data, spec.k)
    t = x.shape[0]
    if t == 0:
        return 1.0
    rows = np.arange(t)
    total = 0.0
    for path in enumerate_paths(spec, t, max_paths):
        total += path.prob * float(np.prod(x[rows, list(path.experts)]))
    return total


def sequence_log_prob(spec: EhmmSpec, experts: Sequence[int]) -> float:
    """``ln Q(xi^t)``, the prior log-probability of an expert (or symbol) sequence."""
    experts = np.asarray(experts, dtype=np.int64)
    if experts.size == 0:
        return 0.0
    if experts.min() < 0 or experts.max() >= spec.k:
        raise ValueError("sequence entry outside the label range")
    onehot = np.zeros((experts.size, spec.k))
    onehot[np.arange(experts.size), experts] = 1.0
    try:
        return -run(spec, onehot, check=False).log_evidence
    except EvidenceCollapse:
        return -np.inf


def sequence_probability(spec: EhmmSpec, experts: Sequence[int]) -> float:
    return float(np.exp(sequence_log_prob(spec, experts)))
