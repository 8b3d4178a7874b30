"""Synthetic scenarios with a planted comparator, and key-value config files.

Each round a binary outcome is drawn.  Every expert forecasts the
probability of a 1, and the matrix records the probability it gave to the
realized outcome.  The planted expert forecasts ``p_hi`` and the outcome is
drawn from that forecast, so the planted sequence is the natural comparator.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

import numpy as np

SEED_ENV = "ESWITCH_SEED"


def read_config(text: str) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment; indented lines continue a value."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from None
    return dict(parser["config"])


def load_config(path: str) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return read_config(fh.read())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


@dataclass(frozen=True)
class ScenarioConfig:
    """``piecewise``: blocks start at ``boundaries`` with ``experts`` as the good expert.
    ``drift``: ``path`` gives the good expert each round; expert e forecasts
    ``p_lo + (p_hi - p_lo) decay^|e - path_i|``.
    """

    kind: str
    k: int
    t: int
    seed: int = 0
    p_hi: float = 0.8
    p_lo: float = 0.2
    boundaries: tuple[int, ...] = ()
    experts: tuple[int, ...] = ()
    path: tuple[int, ...] = ()
    decay: float = 0.5

    def __post_init__(self):
        if self.kind not in ("piecewise", "drift"):
            raise ValueError("kind must be piecewise or drift")
        if self.k < 1 or self.t < 1:
            raise ValueError("k and t must be positive")
        if not 0.0 < self.p_lo <= self.p_hi <= 1.0:
            raise ValueError("need 0 < p_lo <= p_hi <= 1")
        if self.kind == "piecewise":
            b = (1,) + self.boundaries
            if any(x >= y for x, y in zip(b[:-1], b[1:])) or b[-1] > self.t:
                raise ValueError("boundaries must be strictly increasing within 2..t")
            if self.experts and len(self.experts) != len(b):
                raise ValueError(f"need one expert per block ({len(b)}), got {len(self.experts)}")
            if self.experts and any(not 0 <= e < self.k for e in self.experts):
                raise ValueError("block experts out of range")
            if any(a == b for a, b in zip(self.experts[:-1], self.experts[1:])):
                raise ValueError("consecutive blocks must use different experts")
            if len(self.experts) == 0 and self.k < 2 and self.boundaries:
                raise ValueError("switching needs at least two experts")
        else:
            if len(self.path) != self.t:
                raise ValueError(f"drift path has {len(self.path)} entries, expected t={self.t}")
            if any(not 0 <= e < self.k for e in self.path):
                raise ValueError("drift path out of range")
            if not 0.0 <= self.decay <= 1.0:
                raise ValueError("decay must lie in [0, 1]")

    @classmethod
    def from_mapping(cls, cfg: dict[str, str], env: dict | None = None) -> ScenarioConfig:
        env = os.environ if env is None else env
        known = {"kind", "k", "t", "seed", "p_hi", "p_lo", "boundaries", "experts", "path", "decay"}
        extra = set(cfg) - known
        if extra:
            raise ValueError(f"unknown config keys: {', '.join(sorted(extra))}")
        try:
            kind = cfg["kind"]
            path = _ints(cfg.get("path", ""))
            t = int(cfg["t"]) if "t" in cfg else len(path)
            seed = int(env[SEED_ENV]) if env.get(SEED_ENV) else int(cfg.get("seed", 0))
            return cls(
                kind=kind,
                k=int(cfg["k"]),
                t=t,
                seed=seed,
                p_hi=float(cfg.get("p_hi", 0.8)),
                p_lo=float(cfg.get("p_lo", 0.2)),
                boundaries=_ints(cfg.get("boundaries", "")),
                experts=_ints(cfg.get("experts", "")),
                path=path,
                decay=float(cfg.get("decay", 0.5)),
            )
        except KeyError as exc:
            raise ValueError(f"missing config key {exc.args[0]!r}") from None

    def planted(self) -> np.ndarray:
        if self.kind == "drift":
            return np.asarray(self.path, dtype=np.int64)
        starts = (1,) + self.boundaries
        experts = self.experts or tuple(j % self.k for j in range(len(starts)))
        out = np.empty(self.t, dtype=np.int64)
        for j, s in enumerate(starts):
            out[s - 1 :] = experts[j]
        return out


def generate(config: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Likelihood matrix and planted expert sequence; deterministic in the seed."""
    rng = np.random.default_rng(config.seed)
    ref = config.planted()
    experts = np.arange(config.k)
    if config.kind == "piecewise":
        forecast = np.where(experts[None, :] == ref[:, None], config.p_hi, config.p_lo)
    else:
        dist = np.abs(experts[None, :] - ref[:, None])
        forecast = config.p_lo + (config.p_hi - config.p_lo) * config.decay**dist
    ones = rng.random(config.t) < config.p_hi
    return np.where(ones[:, None], forecast, 1.0 - forecast), ref
