"""Named catalog of deterministic building blocks.

Models are configured from JSON, so every rate, kernel, link and spacing
law is picked by name with numeric parameters. Nothing here is random.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

_DENSE = 4097


def _arr(t):
    return np.asarray(t, dtype=float)


def _scalarize(out, t):
    return float(out) if np.ndim(t) == 0 else out


# time functions ------------------------------------------------------------


class TimeFunction:
    """A non-negative function of time with an exact antiderivative."""

    kind = "abstract"

    def __call__(self, t):
        raise NotImplementedError

    def primitive(self, t):
        raise NotImplementedError

    def integral(self, a, b):
        """Exact integral over [a, b]; a and b broadcast."""
        return self.primitive(b) - self.primitive(a)

    def breakpoints(self) -> tuple:
        """Times where the function may jump."""
        return ()

    def sup(self, a: float, b: float) -> float:
        s = np.concatenate([np.linspace(a, b, _DENSE), [p for p in self.breakpoints() if a <= p <= b]])
        return float(np.max(self(s)))

    def inf(self, a: float, b: float) -> float:
        s = np.concatenate([np.linspace(a, b, _DENSE), [p for p in self.breakpoints() if a <= p <= b]])
        return float(np.min(self(s)))

    def support_end(self) -> float:
        """Smallest u with f = 0 on (u, inf); inf when unknown."""
        return math.inf

    def to_json(self) -> dict:
        return {"kind": self.kind, **asdict(self)}


@dataclass(frozen=True)
class Constant(TimeFunction):
    value: float = 1.0
    kind = "constant"

    def __call__(self, t):
        return _scalarize(np.full(np.shape(t), float(self.value)), t)

    def primitive(self, t):
        return self.value * _arr(t)

    def sup(self, a, b):
        return float(self.value)

    def inf(self, a, b):
        return float(self.value)

    def support_end(self):
        return math.inf if self.value != 0 else 0.0


@dataclass(frozen=True)
class Linear(TimeFunction):
    """a + b*t, clipped at zero."""

    a: float = 1.0
    b: float = 0.0
    kind = "linear"

    def __post_init__(self):
        if self.b != 0 and -self.a / self.b > 0:
            raise ValueError("linear rate must not change sign on t > 0")

    def __call__(self, t):
        return _scalarize(np.maximum(self.a + self.b * _arr(t), 0.0), t)

    def primitive(self, t):
        t = _arr(t)
        return self.a * t + 0.5 * self.b * t * t

    def sup(self, a, b):
        return float(max(self(a), self(b)))

    def inf(self, a, b):
        return float(min(self(a), self(b)))


@dataclass(frozen=True)
class Indicator(TimeFunction):
    """value on the closed interval [lo, hi], zero elsewhere."""

    lo: float = 0.0
    hi: float = 1.0
    value: float = 1.0
    kind = "indicator"

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError("indicator needs lo <= hi")

    def __call__(self, t):
        t = _arr(t)
        return _scalarize(np.where((t >= self.lo) & (t <= self.hi), float(self.value), 0.0), t)

    def primitive(self, t):
        return self.value * (np.clip(_arr(t), self.lo, self.hi) - self.lo)

    def breakpoints(self):
        return (float(self.lo), float(self.hi))

    def sup(self, a, b):
        return float(self.value) if (b >= self.lo and a <= self.hi) else 0.0

    def inf(self, a, b):
        return float(self.value) if (a >= self.lo and b <= self.hi) else 0.0

    def support_end(self):
        return float(self.hi)


@dataclass(frozen=True)
class Exponential(TimeFunction):
    """scale * exp(-rate * t)."""

    scale: float = 1.0
    rate: float = 1.0
    kind = "exponential"

    def __call__(self, t):
        return _scalarize(self.scale * np.exp(-self.rate * _arr(t)), t)

    def primitive(self, t):
        t = _arr(t)
        if self.rate == 0:
            return self.scale * t
        return self.scale * (-np.expm1(-self.rate * t)) / self.rate

    def sup(self, a, b):
        return float(max(self(a), self(b)))

    def inf(self, a, b):
        return float(min(self(a), self(b)))


@dataclass(frozen=True)
class Cosine(TimeFunction):
    """base + amp * cos(2 pi freq t), requires base >= |amp|."""

    base: float = 1.0
    amp: float = 0.5
    freq: float = 1.0
    kind = "cosine"

    def __post_init__(self):
        if self.base < abs(self.amp):
            raise ValueError("cosine rate would go negative")

    def __call__(self, t):
        return _scalarize(self.base + self.amp * np.cos(2 * math.pi * self.freq * _arr(t)), t)

    def primitive(self, t):
        t = _arr(t)
        if self.freq == 0:
            return (self.base + self.amp) * t
        w = 2 * math.pi * self.freq
        return self.base * t + self.amp * np.sin(w * t) / w


TIME_FUNCTIONS = {
    "constant": Constant,
    "linear": Linear,
    "indicator": Indicator,
    "exponential": Exponential,
    "cosine": Cosine,
}


def time_function(data) -> TimeFunction:
    """Build a time function from JSON: a number means a constant."""
    if isinstance(data, TimeFunction):
        return data
    if isinstance(data, (int, float)):
        return Constant(float(data))
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in TIME_FUNCTIONS:
        raise ValueError(f"unknown time function {kind!r}; choose from {sorted(TIME_FUNCTIONS)}")
    return TIME_FUNCTIONS[kind](**{k: float(v) for k, v in data.items()})


# links ---------------------------------------------------------------------


class Link:
    """A non-increasing Lipschitz link phi: [0, inf) -> [0, inf)."""

    kind = "abstract"
    lip: float = 0.0

    def __call__(self, u):
        raise NotImplementedError

    @property
    def at_zero(self) -> float:
        return float(self(0.0))

    def to_json(self) -> dict:
        return {"kind": self.kind, **asdict(self)}


@dataclass(frozen=True)
class ConstantLink(Link):
    value: float = 1.0
    kind = "constant"

    def __call__(self, u):
        return _scalarize(np.full(np.shape(u), float(self.value)), u)

    @property
    def lip(self):
        return 0.0


@dataclass(frozen=True)
class AffineLink(Link):
    """max(base - slope * u, 0)."""

    base: float = 1.0
    slope: float = 1.0
    kind = "affine"

    def __post_init__(self):
        if self.slope < 0:
            raise ValueError("affine link must be non-increasing (slope >= 0)")

    def __call__(self, u):
        return _scalarize(np.maximum(self.base - self.slope * _arr(u), 0.0), u)

    @property
    def lip(self):
        return float(self.slope)


@dataclass(frozen=True)
class ClampLink(Link):
    """alpha * min(max(K - u, 0), 1), the Erlang-loss link."""

    alpha: float = 1.0
    K: float = 2.0
    kind = "clamp"

    def __call__(self, u):
        return _scalarize(self.alpha * np.clip(self.K - _arr(u), 0.0, 1.0), u)

    @property
    def lip(self):
        return float(self.alpha)


@dataclass(frozen=True)
class ExponentialLink(Link):
    """base * exp(-rate * u)."""

    base: float = 1.0
    rate: float = 1.0
    kind = "exponential"

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("exponential link must be non-increasing (rate >= 0)")

    def __call__(self, u):
        return _scalarize(self.base * np.exp(-self.rate * _arr(u)), u)

    @property
    def lip(self):
        return float(self.base * self.rate)


LINKS = {
    "constant": ConstantLink,
    "affine": AffineLink,
    "clamp": ClampLink,
    "exponential": ExponentialLink,
}


def link(data) -> Link:
    if isinstance(data, Link):
        return data
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in LINKS:
        raise ValueError(f"unknown link {kind!r}; choose from {sorted(LINKS)}")
    return LINKS[kind](**{k: float(v) for k, v in data.items()})


# spacing laws --------------------------------------------------------------


class SpacingLaw:
    """Inter-arrival law on (0, inf) given by density, tail and log-tail.

    ``log_tail_inv`` defaults to vectorized bisection; laws with a closed
    form override it.
    """

    kind = "abstract"
    a: float = 0.0
    C: float = math.inf

    def pdf(self, x):
        raise NotImplementedError

    def log_tail(self, x):
        raise NotImplementedError

    def tail(self, x):
        return np.exp(self.log_tail(x))

    def hazard(self, x):
        x = _arr(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp(np.log(np.maximum(self.pdf(x), 0.0)) - self.log_tail(x))
        return _scalarize(np.where(self.pdf(x) > 0, out, 0.0), x)

    def log_tail_inv(self, y, tol: float = 1e-10):
        """Solve log_tail(x) = y for x >= 0 by bisection."""
        y = np.asarray(y, dtype=float)
        lo = np.zeros_like(y)
        hi = np.ones_like(y)
        for _ in range(200):
            grow = self.log_tail(hi) > y
            if not grow.any():
                break
            hi = np.where(grow, hi * 2, hi)
        while np.max(hi - lo, initial=0.0) > tol:
            mid = 0.5 * (lo + hi)
            above = self.log_tail(mid) > y
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        return 0.5 * (lo + hi)

    def to_json(self) -> dict:
        return {"kind": self.kind, **asdict(self)}


@dataclass(frozen=True)
class ExponentialSpacing(SpacingLaw):
    rate: float = 1.0
    kind = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential spacing needs rate > 0")

    def pdf(self, x):
        x = _arr(x)
        return _scalarize(np.where(x >= 0, self.rate * np.exp(-self.rate * x), 0.0), x)

    def log_tail(self, x):
        x = _arr(x)
        return _scalarize(-self.rate * np.maximum(x, 0.0), x)

    def log_tail_inv(self, y, tol=1e-10):
        return -np.asarray(y, dtype=float) / self.rate


@dataclass(frozen=True)
class WeibullSpacing(SpacingLaw):
    """f(x) = (k/s)(x/s)^(k-1) exp(-(x/s)^k) with shape k >= 1."""

    shape: float = 2.0
    scale: float = 1.0
    kind = "weibull"

    def __post_init__(self):
        if self.shape < 1 or not self.scale > 0:
            raise ValueError("weibull spacing needs shape >= 1 and scale > 0")

    def pdf(self, x):
        x = _arr(x)
        u = np.maximum(x, 0.0) / self.scale
        uk = np.power(u, self.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(u > 0, uk / u, 1.0 if self.shape == 1 else 0.0)
        out = (self.shape / self.scale) * ratio * np.exp(-uk)
        return _scalarize(np.where(x >= 0, out, 0.0), x)

    def log_tail(self, x):
        x = _arr(x)
        return _scalarize(-np.power(np.maximum(x, 0.0) / self.scale, self.shape), x)

    def log_tail_inv(self, y, tol=1e-10):
        return self.scale * np.power(np.maximum(-np.asarray(y, dtype=float), 0.0), 1.0 / self.shape)


@dataclass(frozen=True)
class ParetoSpacing(SpacingLaw):
    """Generalized Pareto: f(x) = rate (1 + xi rate x)^(-(1 + 1/xi))."""

    rate: float = 1.0
    xi: float = 0.1
    kind = "pareto"

    def __post_init__(self):
        if not (self.rate > 0 and self.xi > 0):
            raise ValueError("pareto spacing needs rate > 0 and xi > 0")

    def pdf(self, x):
        x = _arr(x)
        out = self.rate * np.power(1 + self.xi * self.rate * np.maximum(x, 0.0), -(1 + 1 / self.xi))
        return _scalarize(np.where(x >= 0, out, 0.0), x)

    def log_tail(self, x):
        x = _arr(x)
        return _scalarize(-np.log1p(self.xi * self.rate * np.maximum(x, 0.0)) / self.xi, x)

    def log_tail_inv(self, y, tol=1e-10):
        return np.expm1(-self.xi * np.asarray(y, dtype=float)) / (self.xi * self.rate)


SPACINGS = {
    "exponential": ExponentialSpacing,
    "weibull": WeibullSpacing,
    "pareto": ParetoSpacing,
}


def spacing(data) -> SpacingLaw:
    if isinstance(data, SpacingLaw):
        return data
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in SPACINGS:
        raise ValueError(f"unknown spacing law {kind!r}; choose from {sorted(SPACINGS)}")
    return SPACINGS[kind](**{k: float(v) for k, v in data.items()})
