"""Switch-rate schedules, block-length priors and drift kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

E = math.e


def _as_delta(delta):
    d = np.asarray(delta, dtype=float)
    if np.any(d < 1):
        raise ValueError("block lengths start at 1")
    return d


def _scalar(x, like):
    return float(x) if np.ndim(like) == 0 else x


@dataclass(frozen=True)
class TailPrior:
    """Distribution of block lengths on the positive integers plus an atom at infinity.

    ``theta`` is the mass at infinity; the finite part is scaled by ``1 - theta``.
    Kinds: ``geometric`` (``alpha (1-alpha)^(d-1)``), ``fat``
    (``1/ln(d+e-1) - 1/ln(d+e)``), ``finite`` (explicit masses for
    ``d = 1..n``) and ``never`` (all mass at infinity).  Geometric and fat
    priors accept real arguments.
    """

    kind: str
    theta: float = 0.0
    alpha: float = 0.5
    masses: tuple[float, ...] = ()
    _suffix: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("geometric", "fat", "finite", "never"):
            raise ValueError(f"unknown tail prior kind {self.kind!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.kind == "geometric" and not 0.0 < self.alpha <= 1.0:
            raise ValueError("geometric prior needs 0 < alpha <= 1")
        if self.kind == "finite":
            m = np.asarray(self.masses, dtype=float)
            if m.size == 0 or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
                raise ValueError("finite prior masses must be nonnegative and sum to 1")
            suffix = np.concatenate((np.cumsum(m[::-1])[::-1], [0.0]))
            object.__setattr__(self, "_suffix", suffix)
        if self.kind == "never" and self.theta != 1.0:
            object.__setattr__(self, "theta", 1.0)

    @classmethod
    def geometric(cls, alpha: float, theta: float = 0.0) -> TailPrior:
        return cls("geometric", theta=theta, alpha=alpha)

    @classmethod
    def fat(cls, theta: float = 0.0) -> TailPrior:
        return cls("fat", theta=theta)

    @classmethod
    def finite(cls, masses, theta: float = 0.0) -> TailPrior:
        return cls("finite", theta=theta, masses=tuple(float(m) for m in masses))

    @classmethod
    def never(cls) -> TailPrior:
        return cls("never", theta=1.0)

    @property
    def at_infinity(self) -> float:
        return self.theta

    def _integer(self, d):
        if np.any(d != np.floor(d)):
            raise ValueError("a finite prior is only defined on integers")
        return d.astype(np.int64)

    def pmf(self, delta):
        """``tau(z = delta)``."""
        d = _as_delta(delta)
        scale = 1.0 - self.theta
        if self.kind == "geometric":
            out = scale * self.alpha * (1.0 - self.alpha) ** (d - 1.0)
        elif self.kind == "fat":
            # 1/ln(a) - 1/ln(a+1) without cancellation
            a = d + E - 1.0
            out = scale * np.log1p(1.0 / a) / (np.log(a) * np.log(a + 1.0))
        elif self.kind == "finite":
            i = self._integer(d)
            m = np.asarray(self.masses)
            out = scale * np.where(i <= m.size, m[np.minimum(i, m.size) - 1], 0.0)
        else:
            out = np.zeros_like(d)
        return _scalar(out, delta)

    def tail(self, delta):
        """``tau(z >= delta)``, the atom at infinity included."""
        d = _as_delta(delta)
        scale = 1.0 - self.theta
        if self.kind == "geometric":
            out = self.theta + scale * (1.0 - self.alpha) ** (d - 1.0)
        elif self.kind == "fat":
            out = self.theta + scale / np.log(d + E - 1.0)
        elif self.kind == "finite":
            i = self._integer(d)
            out = self.theta + scale * self._suffix[np.minimum(i, self._suffix.size) - 1]
        else:
            out = np.ones_like(d)
        return _scalar(out, delta)

    def hazard(self, delta):
        """``tau(z = delta | z >= delta)``."""
        p = np.asarray(self.pmf(delta), dtype=float)
        q = np.asarray(self.tail(delta), dtype=float)
        if np.any(q <= 0):
            raise ValueError("hazard undefined where the tail mass is zero")
        return _scalar(np.minimum(p / q, 1.0), delta)

    def describe(self) -> str:
        if self.kind == "geometric":
            return f"geom(alpha={self.alpha:g},theta={self.theta:g})"
        if self.kind == "fat":
            return f"fat(theta={self.theta:g})"
        if self.kind == "finite":
            return f"finite(n={len(self.masses)},theta={self.theta:g})"
        return "never"


@dataclass(frozen=True)
class SwitchRateSchedule:
    """Per-round switching rate ``alpha_i`` for the transition from round i to i+1.

    Kinds: ``constant`` (``alpha``), ``slow`` (``1 - exp(-c/i)``), ``fast``
    (``1 - exp(-c tau(i))``) and ``harmonic`` (``1/(i+1)``, used by the
    decreasing drift kernel).
    """

    kind: str
    alpha: float = 0.0
    c: float = 1.0
    tau: TailPrior | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "slow", "fast", "harmonic"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.kind in ("slow", "fast") and not self.c > 0:
            raise ValueError("c must be positive")
        if self.kind == "fast" and self.tau is None:
            object.__setattr__(self, "tau", TailPrior.fat())

    @classmethod
    def constant(cls, alpha: float) -> SwitchRateSchedule:
        return cls("constant", alpha=alpha)

    @classmethod
    def slow(cls, c: float = 1.0) -> SwitchRateSchedule:
        return cls("slow", c=c)

    @classmethod
    def fast(cls, c: float = 1.0, tau: TailPrior | None = None) -> SwitchRateSchedule:
        return cls("fast", c=c, tau=tau)

    @classmethod
    def harmonic(cls) -> SwitchRateSchedule:
        return cls("harmonic")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def rates(self, i) -> np.ndarray:
        i = np.asarray(i, dtype=float)
        if np.any(i < 1):
            raise ValueError("rounds are numbered from 1")
        if self.kind == "constant":
            return np.full_like(i, self.alpha)
        if self.kind == "slow":
            return -np.expm1(-self.c / i)
        if self.kind == "fast":
            return -np.expm1(-self.c * np.asarray(self.tau.pmf(i)))
        return 1.0 / (i + 1.0)

    def rate(self, i: int) -> float:
        if i < 1:
            raise ValueError("rounds are numbered from 1")
        if self.kind == "constant":
            return self.alpha
        if self.kind == "slow":
            return -math.expm1(-self.c / i)
        if self.kind == "harmonic":
            return 1.0 / (i + 1.0)
        return float(self.rates(i))

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant(alpha={self.alpha:g})"
        if self.kind == "slow":
            return f"slow(c={self.c:g})"
        if self.kind == "fast":
            return f"fast(c={self.c:g},tau={self.tau.describe()})"
        return "harmonic"


def geometric_kernel(alpha: float, delta):
    """Two-sided geometric kernel ``alpha^|d| (1-alpha)/(1+alpha)``."""
    d = np.abs(np.asarray(delta, dtype=float))
    return _scalar(alpha**d * (1.0 - alpha) / (1.0 + alpha), delta)


@dataclass(frozen=True)
class DriftKernel:
    """Distribution over signed expert-index offsets.

    ``geometric`` is the two-sided geometric family with parameter ``alpha``;
    ``finite`` lists its offsets and masses explicitly.
    """

    kind: str
    alpha: float = 0.5
    offsets: tuple[int, ...] = ()
    masses: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "geometric":
            if not 0.0 < self.alpha < 1.0:
                raise ValueError("geometric kernel needs 0 < alpha < 1")
        elif self.kind == "finite":
            m = np.asarray(self.masses, dtype=float)
            if len(self.offsets) != m.size or m.size == 0:
                raise ValueError("offsets and masses must have the same nonzero length")
            if len(set(self.offsets)) != len(self.offsets):
                raise ValueError("duplicate kernel offsets")
            if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
                raise ValueError("kernel masses must be nonnegative and sum to 1")
        else:
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    @classmethod
    def geometric(cls, alpha: float) -> DriftKernel:
        return cls("geometric", alpha=alpha)

    @classmethod
    def finite(cls, offsets, masses) -> DriftKernel:
        return cls("finite", offsets=tuple(int(o) for o in offsets), masses=tuple(float(m) for m in masses))

    @classmethod
    def point(cls) -> DriftKernel:
        return cls.finite((0,), (1.0,))

    @classmethod
    def uniform(cls, k: int) -> DriftKernel:
        """Uniform over offsets 0..k-1; on a ring of k experts this resets to uniform."""
        return cls.finite(range(k), np.full(k, 1.0 / k))

    def pmf(self, delta):
        if self.kind == "geometric":
            return geometric_kernel(self.alpha, delta)
        table = dict(zip(self.offsets, self.masses))
        d = np.asarray(delta)
        out = np.vectorize(lambda x: table.get(int(x), 0.0), otypes=[float])(d)
        return _scalar(out, delta)

    def ring_pmf(self, k: int) -> np.ndarray:
        """Mass of each offset class modulo ``k``."""
        if self.kind == "geometric":
            a = self.alpha
            j = np.arange(k, dtype=float)
            c = (1.0 - a) / (1.0 + a)
            return c * (a**j + a ** (k - j)) / (1.0 - a**k) if k > 1 else np.ones(1)
        out = np.zeros(k)
        np.add.at(out, np.mod(self.offsets, k), self.masses)
        return out

    def line_support(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Offsets that can stay inside a line of ``k`` experts, with their masses."""
        if self.kind == "geometric":
            offs = np.arange(-(k - 1), k)
            return offs, geometric_kernel(self.alpha, offs)
        offs = np.asarray(self.offsets, dtype=np.int64)
        m = np.asarray(self.masses, dtype=float)
        keep = (np.abs(offs) < k) & (m > 0)
        return offs[keep], m[keep]

    def describe(self) -> str:
        if self.kind == "geometric":
            return f"geom(alpha={self.alpha:g})"
        return "finite(" + "|".join(f"{o}:{m:g}" for o, m in zip(self.offsets, self.masses)) + ")"
