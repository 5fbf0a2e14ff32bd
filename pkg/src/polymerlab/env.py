"""Disorder distributions and the seeded space-time environment field.

A :class:`DisorderSpec` pins the law of a single site variable together with
the inverse temperature, and knows its log-moment-generating function in
closed form -- the bookkeeping quantity every normalized partition function
is built on. An :class:`EnvironmentField` is a deterministic realization of
the i.i.d. field over a finite space-time window: values are produced by the
counter-based hash in :mod:`polymerlab._kernels`, so any (seed, n, x) query
returns the same double no matter when, where, or in which order it is made,
and the unbounded field never needs storage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import TAG_ETA, derive_seed  # noqa: F401  (re-exported)
from .errors import DimensionError, DivergenceError, WindowError

GAUSSIAN = "gaussian"
BERNOULLI_PM = "bernoulli_pm"
EXPONENTIAL = "exponential"

_KIND_IDS = {
    GAUSSIAN: _kernels.KIND_GAUSSIAN,
    BERNOULLI_PM: _kernels.KIND_BERNOULLI,
    EXPONENTIAL: _kernels.KIND_EXPONENTIAL,
}


@dataclass(frozen=True)
class DisorderSpec:
    """Site-disorder law plus inverse temperature.

    Use the constructors :meth:`gaussian`, :meth:`bernoulli_pm`,
    :meth:`exponential` rather than filling fields by hand.
    """

    kind: str
    beta: float
    mean: float = 0.0
    variance: float = 1.0
    p: float = 0.5
    a: float = 1.0
    b: float = -1.0
    rate: float = 1.0
    centered: bool = True

    def __post_init__(self):
        if self.kind not in _KIND_IDS:
            raise ValueError(f"unknown disorder kind {self.kind!r}")
        if self.kind == GAUSSIAN and self.variance <= 0.0:
            raise ValueError("gaussian disorder must be non-constant (variance > 0)")
        if self.kind == BERNOULLI_PM:
            if not (0.0 < self.p < 1.0) or self.a == self.b:
                raise ValueError("two-point disorder must be non-constant "
                                 "(0 < p < 1 and a != b)")
        if self.kind == EXPONENTIAL:
            if self.rate <= 0.0:
                raise ValueError("exponential rate must be positive")
            if 2.0 * self.beta >= self.rate:
                raise DivergenceError(
                    f"lambda(2*beta) diverges: 2*beta = {2 * self.beta} >= rate = {self.rate}")

    @classmethod
    def gaussian(cls, beta, mean=0.0, variance=1.0):
        return cls(kind=GAUSSIAN, beta=beta, mean=mean, variance=variance)

    @classmethod
    def bernoulli_pm(cls, beta, p=0.5, a=1.0, b=-1.0):
        return cls(kind=BERNOULLI_PM, beta=beta, p=p, a=a, b=b)

    @classmethod
    def exponential(cls, beta, rate=1.0, centered=True):
        return cls(kind=EXPONENTIAL, beta=beta, rate=rate, centered=centered)

    def kernel_params(self):
        """(kind_id, p0, p1, p2) consumed by the sampling kernels."""
        if self.kind == GAUSSIAN:
            return _kernels.KIND_GAUSSIAN, self.mean, math.sqrt(self.variance), 0.0
        if self.kind == BERNOULLI_PM:
            return _kernels.KIND_BERNOULLI, self.p, self.a, self.b
        shift = 1.0 / self.rate if self.centered else 0.0
        return _kernels.KIND_EXPONENTIAL, self.rate, shift, 0.0

    def to_config(self):
        if self.kind == GAUSSIAN:
            params = {"mean": self.mean, "variance": self.variance}
        elif self.kind == BERNOULLI_PM:
            params = {"p": self.p, "a": self.a, "b": self.b}
        else:
            params = {"rate": self.rate, "centered": self.centered}
        return {"kind": self.kind, "params": params, "beta": self.beta}

    @classmethod
    def from_config(cls, cfg):
        return cls(kind=cfg["kind"], beta=cfg["beta"], **cfg["params"])


def log_mgf(spec: DisorderSpec, b: float) -> float:
    """lambda(b) = ln E[exp(b * eta)] in closed form for the stored law."""
    if spec.kind == GAUSSIAN:
        return spec.mean * b + 0.5 * spec.variance * b * b
    if spec.kind == BERNOULLI_PM:
        # log-sum-exp of the two atoms, stable for large |b|
        la = math.log(spec.p) + b * spec.a
        lb = math.log1p(-spec.p) + b * spec.b
        hi = max(la, lb)
        return hi + math.log(math.exp(la - hi) + math.exp(lb - hi))
    if b >= spec.rate:
        raise DivergenceError(f"mgf infinite: b = {b} >= rate = {spec.rate}")
    shift = 1.0 / spec.rate if spec.centered else 0.0
    return -math.log1p(-b / spec.rate) - b * shift


def lambda2(spec: DisorderSpec) -> float:
    """lambda_2(beta) = lambda(2*beta) - 2*lambda(beta); >= 0, 0 iff beta = 0."""
    return log_mgf(spec, 2.0 * spec.beta) - 2.0 * log_mgf(spec, spec.beta)


@dataclass(frozen=True)
class L2RegionResult:
    in_region: bool
    margin: float
    lam2: float
    pi_d: float


def l2_region_check(spec: DisorderSpec, d: int) -> L2RegionResult:
    """Second-moment criterion: lambda_2(beta) < ln(1/pi_d).

    The margin is ln(1/pi_d) - lambda_2(beta); positive margin means the
    normalized partition function stays bounded in L^2.
    """
    from .walk import return_probability

    if d < 3:
        raise DimensionError(f"d = {d}: the walk is recurrent, no L2 region exists")
    pi_d = return_probability(d)
    lam2 = lambda2(spec)
    margin = math.log(1.0 / pi_d) - lam2
    return L2RegionResult(in_region=margin > 0.0, margin=margin, lam2=lam2, pi_d=pi_d)


@dataclass(frozen=True)
class EnvironmentField:
    """Deterministic realization of the i.i.d. field eta(n, x).

    ``n_max`` bounds the time range [1 .. n_max]; ``window_lo``/``window_hi``
    bound the spatial box (inclusive). Queries outside raise WindowError.
    Immutable, and safe for concurrent reads.
    """

    spec: DisorderSpec
    seed: int
    d: int
    n_max: int
    window_lo: tuple = field(default=None)
    window_hi: tuple = field(default=None)

    def __post_init__(self):
        if self.d < 1:
            raise DimensionError("d must be >= 1")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        lo = self.window_lo if self.window_lo is not None else (-self.n_max,) * self.d
        hi = self.window_hi if self.window_hi is not None else (self.n_max,) * self.d
        lo, hi = tuple(int(v) for v in lo), tuple(int(v) for v in hi)
        if len(lo) != self.d or len(hi) != self.d or any(l > h for l, h in zip(lo, hi)):
            raise ValueError("window_lo/window_hi must be a nonempty d-dimensional box")
        object.__setattr__(self, "window_lo", lo)
        object.__setattr__(self, "window_hi", hi)
        object.__setattr__(self, "_tagged", int(_kernels.seed_with_tag(
            np.uint64(self.seed), TAG_ETA)))

    # -- window bookkeeping -------------------------------------------------

    def check_time(self, n):
        if not (1 <= n <= self.n_max):
            raise WindowError(f"time {n} outside field range [1, {self.n_max}]")

    def check_site(self, x):
        for i, (c, l, h) in enumerate(zip(x, self.window_lo, self.window_hi)):
            if not (l <= c <= h):
                raise WindowError(f"site {tuple(x)} leaves window on axis {i}")

    def check_ball(self, center, radius, n_hi):
        """Require the L1 ball of ``radius`` around ``center`` and times <= n_hi."""
        if n_hi > self.n_max:
            raise WindowError(f"needs times up to {n_hi}, field has n_max = {self.n_max}")
        for i in range(self.d):
            if center[i] - radius < self.window_lo[i] or center[i] + radius > self.window_hi[i]:
                raise WindowError(
                    f"L1 ball radius {radius} at {tuple(center)} leaves window on axis {i}")

    # -- sampling -----------------------------------------------------------

    def eta(self, n, x) -> float:
        """The field value at (n, x); bit-identical across repeated queries."""
        x = tuple(int(c) for c in x) if np.ndim(x) else (int(x),)
        if len(x) != self.d:
            raise ValueError(f"site has {len(x)} coordinates, field is d = {self.d}")
        self.check_time(n)
        self.check_site(x)
        kind, p0, p1, p2 = self.spec.kernel_params()
        if self.d == 3:
            coords = np.array([x], dtype=np.int64)
            return float(_kernels.eta_sites_d3(
                np.uint64(self._tagged), n, coords, kind, p0, p1, p2)[0])
        u = _kernels.np_u01(self._tagged, n, [np.int64(c) for c in x])
        return float(self._transform(np.asarray(u, dtype=np.float64).reshape(1))[0])

    def eta_block(self, n, lo, shape) -> np.ndarray:
        """Field values on the box [lo, lo+shape) at time n (vectorized)."""
        self.check_time(n)
        lo = tuple(int(c) for c in lo)
        hi = tuple(l + s - 1 for l, s in zip(lo, shape))
        self.check_site(lo)
        self.check_site(hi)
        coords = [np.arange(lo[i], lo[i] + shape[i], dtype=np.int64)
                  .reshape((1,) * i + (-1,) + (1,) * (self.d - 1 - i))
                  for i in range(self.d)]
        u = _kernels.np_u01(self._tagged, n, coords)
        u = np.broadcast_to(u, shape).astype(np.float64)
        return self._transform(u)

    def _transform(self, u):
        kind, p0, p1, p2 = self.spec.kernel_params()
        return _kernels.disorder_from_u_array(np.ascontiguousarray(u), kind,
                                              p0, p1, p2)
