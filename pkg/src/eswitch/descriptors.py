"""Model descriptor strings such as ``fs(alpha=0.25)`` or ``rl(tau=fat,theta=0.5)``.

A descriptor names a model and its parameters.  Lists use ``|`` as the
separator (``w=0.5|0.5``) and ranges use ``start:step:stop`` with the stop
included (``alphas=0:0.1:1``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import bounds as bd
from . import interpolate as ip
from . import models
from .core import EhmmSpec, sequence_log_prob
from .priors import DriftKernel, SwitchRateSchedule, TailPrior

_PATTERN = re.compile(r"^\s*([A-Za-z_][\w-]*)\s*(?:\((.*)\))?\s*$", re.S)

ALIASES = {
    "elementwise": "em",
    "fixed_share": "fs",
    "switching_method": "sm",
    "run_length": "rl",
    "parameter_drift": "pd",
    "kernel_drift": "pd",
    "kernel_switch": "ks",
    "decreasing_rate": "dsr",
    "fixed_share_grid": "fsgrid",
}

PARAMS = {
    "bayes": {"w"},
    "em": {"w"},
    "fs": {"w", "alpha", "impl"},
    "dsr": {"w", "kind", "c", "theta"},
    "sm": {"w", "impl"},
    "fsgrid": {"w", "alphas"},
    "rl": {"w", "tau", "theta", "alpha", "impl"},
    "pd": {"alpha", "kernel", "schedule", "topology"},
    "ks": {"alpha", "kernel", "interp", "rate", "c", "theta", "topology"},
}


def parse_list(text: str) -> list[float]:
    """``a|b|c`` or ``start:step:stop`` (inclusive) into floats."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range {text!r} must be start:step:stop")
        start, step, stop = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"range {text!r} must have a positive step and stop >= start")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + j * step, 12) for j in range(n)]
    return [float(p) for p in text.split("|") if p.strip()]


@dataclass(frozen=True)
class ModelDescriptor:
    name: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> ModelDescriptor:
        m = _PATTERN.match(text)
        if not m:
            raise ValueError(f"malformed model descriptor {text!r}")
        name = ALIASES.get(m.group(1), m.group(1))
        if name not in PARAMS:
            raise ValueError(f"unknown model {m.group(1)!r}; known: {', '.join(sorted(PARAMS))}")
        params = {}
        body = (m.group(2) or "").strip()
        for item in body.split(",") if body else []:
            key, eq, value = item.partition("=")
            key = key.strip()
            if not eq or not key or not value.strip():
                raise ValueError(f"parameter {item.strip()!r} in {text!r} must be key=value")
            if key not in PARAMS[name]:
                raise ValueError(f"model {name} takes no parameter {key!r}")
            if key in params:
                raise ValueError(f"parameter {key!r} given twice in {text!r}")
            params[key] = value.strip()
        return cls(name, params)

    @property
    def param_text(self) -> str:
        return ",".join(f"{k}={v}" for k, v in self.params.items())

    def __str__(self) -> str:
        return f"{self.name}({self.param_text})" if self.params else self.name

    # ------------------------------------------------------------ accessors

    def num(self, key: str, default: float) -> float:
        return float(self.params[key]) if key in self.params else default

    def word(self, key: str, default: str) -> str:
        return self.params.get(key, default)

    def prior(self, k: int):
        return np.asarray(parse_list(self.params["w"])) if "w" in self.params else None

    def uniform_prior(self, k: int) -> bool:
        w = self.prior(k)
        return w is None or bool(np.allclose(w, 1.0 / k, rtol=0, atol=1e-12))

    def tail(self) -> TailPrior:
        kind = self.word("tau", "fat")
        theta = self.num("theta", 0.5)
        if kind == "fat":
            return TailPrior.fat(theta)
        if kind in ("geom", "geometric"):
            return TailPrior.geometric(self.num("alpha", 0.5), theta)
        if kind == "never":
            return TailPrior.never()
        raise ValueError(f"unknown tau {kind!r}; use fat, geom or never")

    def schedule(self) -> SwitchRateSchedule:
        kind = self.word("kind", "slow")
        if kind == "slow":
            return SwitchRateSchedule.slow(self.num("c", 1.0))
        if kind == "fast":
            return SwitchRateSchedule.fast(self.num("c", 1.0), TailPrior.fat(self.num("theta", 0.0)))
        raise ValueError(f"unknown dsr kind {kind!r}; use slow or fast")

    def kernel(self, k: int) -> DriftKernel:
        kind = self.word("kernel", "geom")
        if kind in ("geom", "geometric"):
            return DriftKernel.geometric(self.num("alpha", 0.5))
        if kind == "uniform":
            return DriftKernel.uniform(k)
        raise ValueError(f"unknown kernel {kind!r}; use geom or uniform")

    def interpolator(self):
        kind = self.word("interp", "const")
        if kind == "const":
            return SwitchRateSchedule.constant(self.num("rate", 0.1))
        if kind == "slow":
            return SwitchRateSchedule.slow(self.num("c", 1.0))
        if kind == "fast":
            return SwitchRateSchedule.fast(self.num("c", 1.0))
        if kind == "sm":
            return ip.jeffreys()
        if kind == "rl":
            return ip.renewal(TailPrior.fat(self.num("theta", 0.5)))
        raise ValueError(f"unknown interpolator {kind!r}; use const, slow, fast, sm or rl")

    # -------------------------------------------------------------- build

    def build(self, k: int) -> EhmmSpec:
        w = self.prior(k)
        n = self.name
        product = self.word("impl", "fused") == "product"
        if self.word("impl", "fused") not in ("fused", "product"):
            raise ValueError("impl must be fused or product")
        if n == "bayes":
            return models.bayes(k, w)
        if n == "em":
            return models.elementwise(k, w)
        if n == "fs":
            make = models.fixed_share_product if product else models.fixed_share
            return make(k, w, self.num("alpha", 0.1))
        if n == "dsr":
            return models.decreasing_rate(k, w, self.schedule())
        if n == "sm":
            return (models.switching_method_product if product else models.switching_method)(k, w)
        if n == "fsgrid":
            return models.fixed_share_grid(k, w, parse_list(self.word("alphas", "0:0.25:1")))
        if n == "rl":
            return (models.run_length_product if product else models.run_length)(k, w, self.tail())
        topology = self.word("topology", "line")
        if n == "pd":
            sched = self.word("schedule", "none")
            if sched not in ("none", "harmonic"):
                raise ValueError("pd schedule must be none or harmonic")
            schedule = SwitchRateSchedule.harmonic() if sched == "harmonic" else None
            return models.kernel_drift(k, self.kernel(k), schedule, topology)
        return models.kernel_switch(k, self.kernel(k), self.interpolator(), topology)


# ------------------------------------------------------------------ bounds


def _interp_cost(interp, ref: bd.ReferenceSequence) -> float:
    if isinstance(interp, SwitchRateSchedule):
        interp = ip.scheduled(interp)
    return -sequence_log_prob(interp, ref.switches.tolist())


def theorem_bound(desc: ModelDescriptor, spec: EhmmSpec, ref: bd.ReferenceSequence) -> tuple[float, str]:
    """Closed-form regret bound for ``desc`` against ``ref``, with a note.

    Where no closed form applies, the exact prior bound ``-ln pi(ref)`` is
    used and the note says so.  Raises :class:`BoundInapplicable` when the
    model's assumptions fail.
    """
    k, t, m = spec.k, ref.t, ref.m
    n = desc.name
    uniform = desc.uniform_prior(k)
    if t == 0:
        return 0.0, ""
    if n == "bayes" and m == 1:
        w = desc.prior(k)
        return bd.bound_bayes(k, w, ref.experts[0]), ""
    if n == "fs" and uniform:
        return bd.bound_fixed_share(k, t, m, desc.num("alpha", 0.1)), ""
    if n == "dsr" and uniform:
        sched = desc.schedule()
        if sched.kind == "slow" and t >= 2:
            return bd.bound_dsr_slow(k, t, m, sched.c), ""
        if sched.kind == "fast":
            return bd.bound_dsr_fast(k, m, sched.c, sched.tau, ref.last_switch), ""
    if n == "sm" and uniform:
        fs = bd.bound_fixed_share(k, t, m, ref.alpha_star)
        return fs + bd.bound_switching_method(t), "fixed share at alpha* plus switching method overhead"
    if n == "fsgrid" and uniform:
        grid = parse_list(desc.word("alphas", "0:0.25:1"))
        best = min(bd.bound_fixed_share(k, t, m, a) for a in grid)
        return best + math.log(len(grid)), "best grid rate plus ln|grid|"
    if n == "rl" and uniform:
        tau = desc.tail()
        if tau.kind in ("fat", "geometric", "never"):
            return bd.bound_run_length(k, m, ref.last_switch, tau), ""
    if n == "pd" and desc.word("topology", "line") == "line":
        kind = desc.word("kernel", "geom")
        if desc.word("schedule", "none") == "harmonic":
            return bd.bound_decreasing_drift(t, ref.drift), ""
        if kind in ("geom", "geometric") and max(ref.experts) < k:
            return bd.bound_parameter_drift(t, ref.drift, desc.num("alpha", 0.5))[0], ""
    if n == "ks":
        topology = desc.word("topology", "line")
        kernel = desc.kernel(k)
        start = spec.initial.push(np.ones(1))[spec.initial.dest_offset : spec.initial.n_nodes]
        first = ref.experts[0]
        labels = np.asarray(spec.initial.labels)
        p0 = float(start[labels == first].sum())
        bound = bd.bound_kernel_interp(
            _interp_cost(desc.interpolator(), ref),
            kernel,
            ref.block_experts,
            k=k,
            topology=topology,
            start_cost=math.inf if p0 <= 0 else -math.log(p0),
        )
        return bound, "kernel interpolation"
    return -sequence_log_prob(spec, ref.experts), "exact prior of the reference"
