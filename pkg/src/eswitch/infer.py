"""Posterior marginals and most likely state paths.

Both passes work on the explicit layers of a spec, regenerating each layer
from ``spec.layer(i)`` when it is needed again.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EhmmSpec, EvidenceCollapse, SpecError, _check_outgoing, as_likelihoods, project


@dataclass(frozen=True)
class MarginalGrid:
    """Smoothed posterior of the expert at each round given all the data.

    ``log_cut[i]`` is ``ln sum_q fwd_i(q) bwd_i(q)`` for the productive
    states of round i+1; every entry equals ``ln Q(x^t)``.  ``retained[i]``
    is the predictive mass kept before round i+1 (below 1 for truncated models).
    """

    probs: np.ndarray  # rounds x k
    log_cut: np.ndarray
    log_evidence: float
    retained: np.ndarray


def marginals(spec: EhmmSpec, data, *, check: bool = True) -> MarginalGrid:
    """Forward-backward smoothing with per-round normalization."""
    x = as_likelihoods(data, spec.k)
    t, k = x.shape
    if t == 0:
        return MarginalGrid(np.empty((0, k)), np.empty(0), 0.0, np.empty(0))
    fwd, liks, labels = [], [], []
    z = np.empty(t)
    retained = np.empty(t)
    w = np.ones(1)
    for r in range(t):
        layer = spec.layer(r)
        if len(w) != layer.n_sources:
            raise SpecError(f"layer {r} has {layer.n_sources} sources but the state has {len(w)} weights")
        full = layer.push(w)
        if check:
            _check_outgoing(r, layer, full)
        mass = full[layer.dest_offset : layer.n_nodes]
        lik = x[r][layer.labels]
        joint = mass * lik
        zr = joint.sum()
        if not zr > 0:
            raise EvidenceCollapse(r + 1)
        retained[r] = mass.sum()
        z[r] = zr
        w = joint / zr
        fwd.append(w)
        liks.append(lik)
        labels.append(layer.labels)
    log_evidence = float(-np.log(z).sum())

    probs = np.empty((t, k))
    cut = np.empty(t)
    b = np.ones(len(w))
    for r in range(t - 1, -1, -1):
        if r < t - 1:
            b = spec.layer(r + 1).pull(b * liks[r + 1]) / z[r + 1]
        post = fwd[r] * b
        cut[r] = post.sum()
        probs[r] = project(post, labels[r], k)
    return MarginalGrid(probs, np.log(cut) - log_evidence, log_evidence, retained)


@dataclass(frozen=True)
class StatePath:
    """Most likely path through the unrolled graph.

    ``steps`` lists ``(layer, node)`` pairs from the start state ``(0, 0)``;
    node indices are global within their layer, and a layer's destination
    nodes are the productive states of the following round.
    """

    steps: tuple[tuple[int, int], ...]
    kinds: tuple[str, ...]  # start, silent or productive
    experts: tuple[int, ...]
    log_joint: float  # ln of the path probability times the data likelihood


def viterbi(spec: EhmmSpec, data) -> StatePath:
    """Max-product pass with backtracking; ties go to the lowest index."""
    x = as_likelihoods(data, spec.k)
    t = x.shape[0]
    if t == 0:
        return StatePath(((0, 0),), ("start",), (), 0.0)
    layers, preds = [], []
    score = np.zeros(1)
    with np.errstate(divide="ignore"):
        logx = np.log(x)
    for r in range(t):
        layer = spec.layer(r)
        if len(score) != layer.n_sources:
            raise SpecError(f"layer {r} has {layer.n_sources} sources but the state has {len(score)} scores")
        full, pred = layer.relax_max(score)
        score = full[layer.dest_offset :] + logx[r][layer.labels]
        layers.append(layer)
        preds.append(pred)
    best = int(np.argmax(score))
    log_joint = float(score[best])
    if log_joint == -np.inf:
        raise EvidenceCollapse(t)

    steps = []
    r, node = t - 1, layers[-1].dest_offset + best
    while True:
        steps.append((r, node))
        p = int(preds[r][node])
        if p < layers[r].n_sources:
            if r == 0:
                steps.append((0, p))
                break
            r -= 1
            node = layers[r].dest_offset + p
        else:
            node = p
    steps.reverse()

    kinds, experts = [], []
    for j, (r, node) in enumerate(steps):
        layer = layers[r]
        if j == 0:
            kinds.append("start")
        elif node >= layer.dest_offset:
            kinds.append("productive")
            experts.append(int(layer.labels[node - layer.dest_offset]))
        else:
            kinds.append("silent")
    return StatePath(tuple(steps), tuple(kinds), tuple(experts), log_joint)
