"""Exact simple-random-walk kernels, their gaussian approximation, and pi_d.

The n-step kernel q^{(n)}(x) is computed by exact slice-by-slice dynamic
programming over the reachable parity diamond. The return probability pi_d
comes from two independent routes: a truncated return series with a closed
form power-law tail completion, and numerical quadrature of the lattice
Green function in Bessel form. Their agreement is one of the package's
acceptance gates, and ln(1/pi_d) feeds the L2-region criterion.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import _kernels
from ._io import write_csv
from .errors import DimensionError, OverflowAbort

_SLICE_SUM_TOL = 1e-12


def parity(n, x) -> bool:
    """True iff n and x are mutually reachable: n + sum(x) is even."""
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    return (int(n) + int(x.sum())) % 2 == 0


def q_bar(d, n, x) -> float:
    """Gaussian approximation 2 * (d / 2 pi n)^{d/2} * exp(-d |x|^2 / 2n)."""
    if n < 1:
        raise ValueError("q_bar needs n >= 1")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    r2 = float(np.dot(x, x))
    return 2.0 * (d / (2.0 * math.pi * n)) ** (d / 2.0) * math.exp(-d * r2 / (2.0 * n))


def _check_slice_sums(totals):
    dev = np.max(np.abs(totals - 1.0))
    if dev > _SLICE_SUM_TOL:
        raise OverflowAbort(f"walk DP slice mass deviates from 1 by {dev:.3e}")


def _walk_slices(d, n, keep_js):
    """Exact kernel slices {j: (2j+1)^d array} for j in keep_js, validated."""
    keep_js = sorted(set(int(j) for j in keep_js))
    if any(j < 0 for j in keep_js):
        raise ValueError("slice times must be >= 0")
    if d == 3:
        steps = max(keep_js) if keep_js else 0
        keep_flag = np.zeros(steps + 1, dtype=np.uint8)
        keep_off = np.zeros(steps + 2, dtype=np.int64)
        off = 0
        for j in keep_js:
            keep_flag[j] = 1
            keep_off[j] = off
            off += (2 * j + 1) ** 3
        buf = np.zeros(off)
        totals = np.zeros(steps + 1)
        _kernels.walk_forward_d3(steps, keep_flag, keep_off, buf, totals)
        _check_slice_sums(totals)
        out = {}
        for j in keep_js:
            m = 2 * j + 1
            out[j] = buf[keep_off[j]:keep_off[j] + m ** 3].reshape((m, m, m)).copy()
        return out
    totals, kept = _kernels.np_polymer_forward(
        d, (0,) * d, max(keep_js) if keep_js else 0, 0, 1, 1.0, keep_js, None, 0.0, 0.0)
    _check_slice_sums(totals)
    return kept


@functools.lru_cache(maxsize=16)
def _walk_slice_cached(d, n):
    return _walk_slices(d, n, [n])[n]


def q_exact(d, n, x) -> float:
    """Exact q^{(n)}(x); 0 off-parity or outside the reachable diamond."""
    if n < 0:
        raise ValueError("n must be >= 0")
    x = tuple(int(c) for c in np.atleast_1d(x))
    if len(x) != d:
        raise ValueError(f"site has {len(x)} coordinates, expected d = {d}")
    if sum(abs(c) for c in x) > n or not parity(n, x):
        return 0.0
    sl = _walk_slice_cached(d, n)
    return float(sl[tuple(c + n for c in x)])


@dataclass(frozen=True)
class KernelTable:
    """Dense exact kernel slices for all times 0..n_max in dimension d."""

    d: int
    n_max: int

    def __post_init__(self):
        object.__setattr__(self, "_slices", _walk_slices(self.d, self.n_max,
                                                         range(self.n_max + 1)))

    def slice(self, n) -> np.ndarray:
        return self._slices[n]

    def q(self, n, x) -> float:
        x = tuple(int(c) for c in np.atleast_1d(x))
        if sum(abs(c) for c in x) > n or not parity(n, x):
            return 0.0
        return float(self._slices[n][tuple(c + n for c in x)])


# ---------------------------------------------------------------------------
# return probability pi_d
# ---------------------------------------------------------------------------

def return_series_terms(d, n_terms) -> np.ndarray:
    """Exact q^{(2n)}(0) for n = 0..n_terms via the multinomial identity.

    q^{(2n)}(0) = (2d)^{-2n} (2n)! sum_{n_1+..+n_d=n} prod_i (n_i!)^{-2},
    evaluated in log space; the inner sum is built by d-1 log-domain
    convolutions, so arbitrarily large n stays in range.
    """
    ns = np.arange(n_terms + 1)
    log_g = -2.0 * special.gammaln(ns + 1.0)
    log_s = log_g.copy()
    for _ in range(d - 1):
        new = np.full(n_terms + 1, -np.inf)
        for n in range(n_terms + 1):
            terms = log_s[:n + 1] + log_g[n::-1]
            new[n] = special.logsumexp(terms)
        log_s = new
    log_q = (-2.0 * ns * math.log(2.0 * d)
             + special.gammaln(2.0 * ns + 1.0) + log_s)
    return np.exp(log_q)


@dataclass(frozen=True)
class ReturnProbability:
    value: float
    green: float
    tail: float
    tail_uncertainty: float
    method: str


def _pi_series(d):
    n_terms = {3: 150, 4: 80}.get(d, 40)
    q2 = return_series_terms(d, n_terms)
    c0 = 2.0 * (d / (4.0 * math.pi)) ** (d / 2.0)
    # fit the two subleading corrections of q^{(2n)}(0) ~ c0 n^{-d/2} (1 + c1/n + c2/n^2)
    ks = np.arange(n_terms // 2, n_terms + 1, dtype=np.float64)
    resid = q2[n_terms // 2:] / (c0 * ks ** (-d / 2.0)) - 1.0
    design = np.vstack([1.0 / ks, 1.0 / ks ** 2]).T
    c1, c2 = np.linalg.lstsq(design, resid, rcond=None)[0]
    z = special.zeta(np.array([d / 2.0, d / 2.0 + 1.0, d / 2.0 + 2.0]), n_terms + 1)
    tail = c0 * (z[0] + c1 * z[1] + c2 * z[2])
    green = float(q2.sum() + tail)
    unc = abs(c0 * c2 * z[2]) + 1e-12
    return ReturnProbability(value=1.0 - 1.0 / green, green=green, tail=float(tail),
                             tail_uncertainty=float(unc), method="series")


def _pi_green_quadrature(d):
    # G = int_0^inf [e^{-s/d} I_0(s/d)]^d ds, split so the algebraic tail is
    # integrated in the variable v = 1/sqrt(s) where the integrand is smooth
    s_cut = 200.0
    head, err_h = integrate.quad(lambda s: special.i0e(s / d) ** d,
                                 0.0, s_cut, limit=200)
    tail, err_t = integrate.quad(
        lambda v: special.i0e(1.0 / (v * v * d)) ** d * 2.0 / v ** 3,
        1e-12, s_cut ** -0.5, limit=200)
    green = head + tail
    return ReturnProbability(value=1.0 - 1.0 / green, green=green, tail=float(tail),
                             tail_uncertainty=float(err_h + err_t),
                             method="green_quadrature")


def return_probability_detail(d, method="series") -> ReturnProbability:
    if d < 3:
        raise DimensionError(
            f"d = {d}: the walk is recurrent (pi_d = 1), outside the model's regime")
    if method == "series":
        return _pi_series(d)
    if method == "green_quadrature":
        return _pi_green_quadrature(d)
    raise ValueError(f"unknown method {method!r}")


@functools.lru_cache(maxsize=8)
def return_probability(d, method="series") -> float:
    return return_probability_detail(d, method).value


# ---------------------------------------------------------------------------
# classical local limit theorem scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LltErrorRow:
    n: int
    sup_err: float
    scaled_err: float          # sup |q - qbar| * n^{d/2 + 1}
    argmax_site: tuple
    min_ball_scaled: float     # min over parity sites |x| <= A sqrt(n) of q * n^{d/2}


def llt_error_scan(d, n_max, n_min=1, A=1.0):
    """Per-n worst-case gaussian-approximation error and window lower bound.

    Streams the exact DP once over a fixed box, so memory stays at two
    (2 n_max + 1)^d arrays.
    """
    L = 2 * n_max + 1
    R = n_max
    W = np.zeros((L,) * d)
    W[(R,) * d] = 1.0
    axes = np.arange(-n_max, n_max + 1)
    grids = np.meshgrid(*([axes] * d), indexing="ij")
    r2 = sum(g.astype(np.float64) ** 2 for g in grids)
    coord_sum = sum(g for g in grids)
    rows = []
    for j in range(1, n_max + 1):
        W = _kernels._np_stencil(W) / (2.0 * d)
        total = W.sum()
        if abs(total - 1.0) > _SLICE_SUM_TOL:
            raise OverflowAbort(f"walk DP slice mass deviates from 1 by {total - 1.0:.3e}")
        if j < n_min:
            continue
        par = ((coord_sum + j) % 2) == 0
        qbar = 2.0 * (d / (2.0 * math.pi * j)) ** (d / 2.0) * np.exp(-d * r2 / (2.0 * j))
        err = np.where(par, np.abs(W - qbar), -1.0)
        flat = int(np.argmax(err))
        site = tuple(int(g.flat[flat]) for g in grids)
        sup = float(err.flat[flat])
        ball = par & (r2 <= A * A * j)
        mn = float(np.where(ball, W, np.inf).min())
        rows.append(LltErrorRow(n=j, sup_err=sup, scaled_err=sup * j ** (d / 2.0 + 1.0),
                                argmax_site=site, min_ball_scaled=mn * j ** (d / 2.0)))
    return rows


def llt_error_scan_to_csv(rows, path):
    write_csv(path, ["n", "sup_error", "scaled_error", "argmax_site", "min_ball_scaled"],
              [(r.n, r.sup_err, r.scaled_err, " ".join(str(c) for c in r.argmax_site),
                r.min_ball_scaled) for r in rows])
