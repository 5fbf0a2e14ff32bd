"""The polymer local-limit-theorem experiment.

Per environment realization the bridge-conditioned partition function is
compared against the product of a short forward factor at the start and a
short time-reversed factor at the end; the residual is exact, and its
disorder L2 (or L1, in the limit-object form) norm is estimated by quenched
Monte Carlo and scanned in n. The factorization residual vanishing in the
large-n limit is the statement under test, so the scans only report decay --
no rate is asserted anywhere.

The limit normalization Z_infinity has no finite computation; the scans use
Z_N at a configured proxy time on the same environment and defend the proxy
with a Cauchy-in-L2 check of Z_N against Z_2N.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ._io import write_csv
from ._kernels import derive_seed
from ._parallel import blocked_map
from .env import DisorderSpec, EnvironmentField, l2_region_check
from .errors import HypothesisGateError
from .partition import (_forward_raw, conditional_density, forward_partition,
                        reversed_partition, reversed_totals)
from .walk import q_exact


def scan_offsets(d, n, A, stride=None):
    """Deterministic endpoint grid: reachable offsets |w| <= A sqrt(n).

    All admissible sites are ordered by (|w|^2, lexicographic); every
    ``stride``-th one is kept plus the extreme entry. Default stride keeps
    about twenty sites.
    """
    r = int(A * math.sqrt(n)) + 1
    sites = []
    ranges = [range(-r, r + 1)] * d
    for w in itertools.product(*ranges):
        if sum(c * c for c in w) <= A * A * n and (n + sum(w)) % 2 == 0 \
                and sum(abs(c) for c in w) <= n:
            sites.append(w)
    sites.sort(key=lambda w: (sum(c * c for c in w), w))
    if stride is None:
        stride = max(1, math.ceil(len(sites) / 20))
    picked = sites[::stride]
    if sites and sites[-1] not in picked:
        picked.append(sites[-1])
    return picked


@dataclass(frozen=True)
class LltScanConfig:
    """Configuration for the factorization-residual scans.

    ``a`` sets the short-factor depth l_n = floor(n^a); the scans enforce
    l_n < n/2 so the forward and reversed factors read disjoint time slices.
    Scans refuse to run outside the L2 region unless ``force`` is set.
    """

    spec: DisorderSpec
    d: int
    times: tuple
    a: float = 0.4
    A: float = 1.0
    n_seeds: int = 2000
    zinf_proxy_time: int = 64
    master_seed: int = 1
    grid_stride: int | None = None
    block_size: int = 64
    workers: int | None = None
    force: bool = False

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(sorted(int(n) for n in self.times)))
        if not (0.0 < self.a < 0.5):
            raise ValueError("the short-factor exponent must sit in (0, 1/2)")
        for n in self.times:
            l = self.l_of(n)
            if l < 1 or not l < n / 2:
                raise ValueError(f"l_n = {l} violates 1 <= l < n/2 at n = {n}")
        if not self.force:
            reg = l2_region_check(self.spec, self.d)
            if not reg.in_region:
                raise HypothesisGateError(
                    f"lambda_2 = {reg.lam2:.4f} >= ln(1/pi_d) = "
                    f"{reg.lam2 + reg.margin:.4f}: outside the L2 region "
                    "(pass force=True to run anyway)")

    def l_of(self, n) -> int:
        return int(math.floor(n ** self.a))

    def grids(self):
        return {n: scan_offsets(self.d, n, self.A, self.grid_stride)
                for n in self.times}


def factorization_residual(field: EnvironmentField, x, y, n, l) -> float:
    """Exact per-environment factorization residual
    P^x(e_{1,n} | end at y) - P^x(e_{1,l}) * P^y(reversed depth l, anchor n)."""
    if not l < n / 2:
        raise ValueError(f"need l < n/2, got l = {l}, n = {n}")
    x = tuple(int(c) for c in np.atleast_1d(x))
    y = tuple(int(c) for c in np.atleast_1d(y))
    cond = conditional_density(field, x, y, n)
    fwd = forward_partition(field, x, l).total
    rev = reversed_partition(field, y, l, anchor=n).total
    return cond - fwd * rev


def zinf_residual(field: EnvironmentField, x, y, n, proxy_time) -> float:
    """Residual of the limit-object form, with Z_infinity replaced by the
    proxy Z_N on the same environment (N = proxy_time >= n)."""
    x = tuple(int(c) for c in np.atleast_1d(x))
    y = tuple(int(c) for c in np.atleast_1d(y))
    cond = conditional_density(field, x, y, n)
    z_proxy = forward_partition(field, x, proxy_time).total
    rev = reversed_partition(field, y, n, anchor=n).total
    return cond - z_proxy * rev


@dataclass(frozen=True)
class ResidualRow:
    n: int
    offset: tuple
    mean: float      # disorder mean of the residual
    q_hat: float     # disorder mean of residual^2 (L2 scan) or |residual| (L1 scan)
    se: float        # standard error of q_hat
    n_seeds: int


@dataclass(frozen=True)
class ResidualScanResult:
    kind: str
    rows: tuple
    sup_rows: tuple  # per n: the row with maximal q_hat
    config: LltScanConfig

    def to_csv(self, path):
        write_csv(path, ["n", "offset", "mean", "q_hat", "se", "n_seeds"],
                  [(r.n, " ".join(str(c) for c in r.offset), r.mean, r.q_hat,
                    r.se, r.n_seeds) for r in self.rows])

    def summary(self):
        return {
            "kind": self.kind,
            "sup": [{"n": r.n, "offset": list(r.offset), "q_hat": r.q_hat,
                     "se": r.se} for r in self.sup_rows],
            "n_seeds": self.config.n_seeds,
        }


def _span(grid):
    return max(sum(abs(c) for c in w) for w in grid)


def _factorization_block(lo, hi, payload):
    cfg, grids, q_vals = payload
    n_top = max(cfg.times)
    d = cfg.d
    window = max(n_top, max(_span(grids[n]) + cfg.l_of(n) - 1 for n in cfg.times))
    acc = {n: np.zeros((len(grids[n]), 3)) for n in cfg.times}
    for i in range(lo, hi):
        fld = EnvironmentField(spec=cfg.spec, seed=derive_seed(cfg.master_seed, i),
                               d=d, n_max=n_top,
                               window_lo=(-window,) * d, window_hi=(window,) * d)
        totals, kept = _forward_raw(fld, (0,) * d, n_top, cfg.times)
        for n in cfg.times:
            grid = grids[n]
            l = cfg.l_of(n)
            span = _span(grid)
            lo_box, box = reversed_totals(fld, anchor=n, l=l, center=(0,) * d,
                                          span=span)
            sl = kept[n]
            z_l = totals[l]
            a = acc[n]
            for k, w in enumerate(grid):
                cond = sl[tuple(c + n for c in w)] / q_vals[n][k]
                rev = box[tuple(c - lo_box[j] for j, c in enumerate(w))]
                delta = cond - z_l * rev
                a[k, 0] += delta
                a[k, 1] += delta * delta
                a[k, 2] += delta ** 4
    return acc


def _zinf_block(lo, hi, payload):
    cfg, grids, q_vals = payload
    n_proxy = cfg.zinf_proxy_time
    d = cfg.d
    window = max(n_proxy, max(_span(grids[n]) + n - 1 for n in cfg.times))
    acc = {n: np.zeros((len(grids[n]), 3)) for n in cfg.times}
    for i in range(lo, hi):
        fld = EnvironmentField(spec=cfg.spec, seed=derive_seed(cfg.master_seed, i),
                               d=d, n_max=n_proxy,
                               window_lo=(-window,) * d, window_hi=(window,) * d)
        totals, kept = _forward_raw(fld, (0,) * d, n_proxy, cfg.times)
        z_proxy = totals[n_proxy]
        for n in cfg.times:
            grid = grids[n]
            span = _span(grid)
            lo_box, box = reversed_totals(fld, anchor=n, l=n, center=(0,) * d,
                                          span=span)
            sl = kept[n]
            a = acc[n]
            for k, w in enumerate(grid):
                cond = sl[tuple(c + n for c in w)] / q_vals[n][k]
                rev = box[tuple(c - lo_box[j] for j, c in enumerate(w))]
                delta = cond - z_proxy * rev
                a[k, 0] += delta
                a[k, 1] += abs(delta)
                a[k, 2] += delta * delta
    return acc


def _finish_scan(cfg, grids, blocks, kind):
    rows = []
    sup_rows = []
    m = cfg.n_seeds
    for n in cfg.times:
        stacked = np.stack([b[n] for b in blocks])
        sums = stacked.sum(axis=0)
        n_rows = []
        for k, w in enumerate(grids[n]):
            mean_delta = sums[k, 0] / m
            # column 1 holds the scanned norm (delta^2 or |delta|) and column 2
            # its square, so the same moment algebra serves both scans
            q_hat = sums[k, 1] / m
            var = max(sums[k, 2] / m - q_hat ** 2, 0.0)
            se = math.sqrt(var / m)
            n_rows.append(ResidualRow(n=n, offset=w, mean=mean_delta,
                                      q_hat=q_hat, se=se, n_seeds=m))
        rows.extend(n_rows)
        sup_rows.append(max(n_rows, key=lambda r: r.q_hat))
    return ResidualScanResult(kind=kind, rows=tuple(rows), sup_rows=tuple(sup_rows),
                              config=cfg)


def residual_l2_scan(cfg: LltScanConfig) -> ResidualScanResult:
    """Disorder-L2 scan of the short-factorization residual over cfg.times."""
    grids = cfg.grids()
    q_vals = {n: np.array([q_exact(cfg.d, n, w) for w in grids[n]])
              for n in cfg.times}
    blocks = blocked_map(_factorization_block, cfg.n_seeds, (cfg, grids, q_vals),
                         block_size=cfg.block_size, workers=cfg.workers)
    return _finish_scan(cfg, grids, blocks, "l2")


def zinf_residual_l1_scan(cfg: LltScanConfig) -> ResidualScanResult:
    """Disorder-L1 scan of the limit-object residual with the Z_N proxy."""
    if cfg.zinf_proxy_time < max(cfg.times):
        raise ValueError("zinf_proxy_time must be >= max(times)")
    grids = cfg.grids()
    q_vals = {n: np.array([q_exact(cfg.d, n, w) for w in grids[n]])
              for n in cfg.times}
    blocks = blocked_map(_zinf_block, cfg.n_seeds, (cfg, grids, q_vals),
                         block_size=cfg.block_size, workers=cfg.workers)
    return _finish_scan(cfg, grids, blocks, "zinf")


# ---------------------------------------------------------------------------
# proxy and symmetry diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CauchyCheckResult:
    n_proxy: int
    ratio: float          # Q((Z_N - Z_2N)^2) / Q(Z_N^2), Monte Carlo
    num: float
    den: float
    se_num: float
    se_den: float
    n_seeds: int


def _cauchy_block(lo, hi, payload):
    spec, d, n_proxy, master_seed = payload
    out = np.empty((hi - lo, 2))
    for i in range(lo, hi):
        fld = EnvironmentField(spec=spec, seed=derive_seed(master_seed, i),
                               d=d, n_max=2 * n_proxy)
        totals = _forward_raw(fld, (0,) * d, 2 * n_proxy, [])[0]
        out[i - lo, 0] = (totals[n_proxy] - totals[2 * n_proxy]) ** 2
        out[i - lo, 1] = totals[n_proxy] ** 2
    return out


def zinf_proxy_cauchy_check(spec: DisorderSpec, d, n_proxy, n_seeds,
                            master_seed=1, workers=None,
                            block_size=16) -> CauchyCheckResult:
    """Martingale Cauchy check defending the Z_N stand-in for the limit."""
    blocks = blocked_map(_cauchy_block, n_seeds, (spec, d, n_proxy, master_seed),
                         block_size=block_size, workers=workers)
    vals = np.concatenate(blocks)
    num, den = vals[:, 0].mean(), vals[:, 1].mean()
    return CauchyCheckResult(
        n_proxy=n_proxy, ratio=float(num / den), num=float(num), den=float(den),
        se_num=float(vals[:, 0].std(ddof=1) / math.sqrt(len(vals))),
        se_den=float(vals[:, 1].std(ddof=1) / math.sqrt(len(vals))),
        n_seeds=n_seeds)


@dataclass(frozen=True)
class TailEquivalenceResult:
    mc_mean: float
    mc_se: float
    exact: float
    z_score: float
    n_seeds: int


def _tail_block(lo, hi, payload):
    spec, d, n, l, master_seed = payload
    out = np.empty(hi - lo)
    for i in range(lo, hi):
        fld = EnvironmentField(spec=spec, seed=derive_seed(master_seed, i),
                               d=d, n_max=n)
        r_l = reversed_partition(fld, (0,) * d, l, anchor=n).total
        r_n = reversed_partition(fld, (0,) * d, n, anchor=n).total
        out[i - lo] = (r_l - r_n) ** 2
    return out


def reversed_tail_equivalence_check(spec: DisorderSpec, d, n, l, n_seeds,
                                    master_seed=1, workers=None,
                                    block_size=64) -> TailEquivalenceResult:
    """Quenched L2 distance between reversed partition functions of depths
    l and n against its exact two-replica value.

    Both reversed objects share their top l factors, so the cross term equals
    the shorter second moment and the distance reduces to
    e^{lambda_2} * (E[e^{lambda_2 N_{1,n-1}}] - E[e^{lambda_2 N_{1,l-1}}]).
    """
    from .overlap import pair_expectation

    if not 1 <= l <= n:
        raise ValueError("need 1 <= l <= n")
    from .env import lambda2 as _lambda2
    lam2 = _lambda2(spec)
    blocks = blocked_map(_tail_block, n_seeds, (spec, d, n, l, master_seed),
                         block_size=block_size, workers=workers)
    vals = np.concatenate(blocks)
    mc_mean = float(vals.mean())
    mc_se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    exact = math.exp(lam2) * (pair_expectation(d, n - 1, lam2)
                              - pair_expectation(d, l - 1, lam2))
    z = (mc_mean - exact) / mc_se if mc_se > 0.0 else 0.0
    return TailEquivalenceResult(mc_mean=mc_mean, mc_se=mc_se, exact=exact,
                                 z_score=float(z), n_seeds=n_seeds)
