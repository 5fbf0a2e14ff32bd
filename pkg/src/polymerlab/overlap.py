"""Two-replica overlap computations.

The second moment of the normalized partition function equals the
exponential-overlap moment of two independent walks in the same environment,
with rate lambda_2(beta) on coincidence times. Three independent mechanisms
meet here:

* an exact difference-chain transfer matrix (the difference of two
  independent walks steps by the two-step kernel, and the overlap only sees
  its visits to the origin);
* quenched Monte Carlo over environments through the partition module;
* direct path-pair sampling.

Bridge-conditioned quantities use a renewal expansion over coincidence
points: expanding prod_j (1 + c 1_{meet at j}) with c = e^{lambda_2} - 1
turns the pinned pair expectation into space-time convolutions of squared
walk kernels, evaluated spectrally. No replica-pair object ever lives on
Z^{2d}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from . import _kernels
from ._parallel import blocked_map
from .env import DisorderSpec, EnvironmentField, lambda2
from .errors import ParityError
from .partition import forward_totals
from .walk import q_exact, _walk_slices


# ---------------------------------------------------------------------------
# free pair expectations via the difference chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairChainState:
    """Distribution over the two-replica difference lattice at one time.

    ``dist`` holds the overlap-weighted occupation of the difference walk on
    a dense box with lower corner ``lo``; its total is the free pair
    expectation E[e^{lam2 N_{k,time}}]. At lam2 = 0 it reduces to the plain
    difference-walk law, i.e. the 2*time-step kernel.
    """

    d: int
    time: int
    lam2: float
    lo: tuple
    dist: np.ndarray

    @property
    def total(self) -> float:
        return float(self.dist.sum())

    def weight(self, w) -> float:
        idx = tuple(int(c) - l for c, l in zip(np.atleast_1d(w), self.lo))
        if any(i < 0 or i >= s for i, s in zip(idx, self.dist.shape)):
            return 0.0
        return float(self.dist[idx])


def pair_chain_state(d, n, lam2, k_start=1) -> PairChainState:
    """Difference-chain state at time n (dense numpy path; small n)."""
    L = 4 * n + 1
    R = 2 * n
    w = np.zeros((L,) * d)
    w[(R,) * d] = 1.0
    factor = math.exp(lam2)
    for j in range(1, n + 1):
        w = _kernels._np_stencil(_kernels._np_stencil(w)) / (2.0 * d) ** 2
        if j >= k_start:
            w[(R,) * d] *= factor
    return PairChainState(d=d, time=n, lam2=lam2, lo=(-R,) * d, dist=w)


def pair_expectation_profile(d, n, lam2, k_start=1) -> np.ndarray:
    """E[e^{lam2 * N_{k_start, j}}] for j = 0..n, two walks started together."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.ones(1)
    factor = math.exp(lam2)
    if d == 3:
        return _kernels.pair_difference_profile_d3(n, k_start, factor)
    return _kernels.np_pair_difference_profile(d, n, k_start, factor)


def pair_expectation(d, n, lam2, k_start=1) -> float:
    return float(pair_expectation_profile(d, n, lam2, k_start)[n])


def no_meet_probability_profile(d, n, k_start=1) -> np.ndarray:
    """P(walks never coincide in [k_start, j]) for j = 0..n (diagonal factor 0)."""
    if n == 0:
        return np.ones(1)
    if d == 3:
        return _kernels.pair_difference_profile_d3(n, k_start, 0.0)
    return _kernels.np_pair_difference_profile(d, n, k_start, 0.0)


# ---------------------------------------------------------------------------
# quenched second-moment identity check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentCheckResult:
    mc_mean: float
    mc_se: float
    exact: float
    z_score: float
    n_seeds: int


def _z2_block(lo, hi, payload):
    spec, d, n, master_seed = payload
    out = np.empty(hi - lo)
    for i in range(lo, hi):
        field = EnvironmentField(spec=spec, seed=_kernels.derive_seed(master_seed, i),
                                 d=d, n_max=n)
        out[i - lo] = forward_totals(field, (0,) * d, n)[n] ** 2
    return out


def second_moment_identity_check(spec: DisorderSpec, d, n, n_seeds,
                                 master_seed=1, workers=None,
                                 block_size=64) -> MomentCheckResult:
    """Monte Carlo Q(Z_n^2) against the exact difference-chain value.

    The two sides share no code path beyond the one-step walk kernel, so a
    z-score within noise is a real consistency statement about both.
    """
    blocks = blocked_map(_z2_block, n_seeds, (spec, d, n, master_seed),
                         block_size=block_size, workers=workers)
    z2 = np.concatenate(blocks)
    mc_mean = float(z2.mean())
    mc_se = float(z2.std(ddof=1) / math.sqrt(len(z2))) if len(z2) > 1 else 0.0
    exact = pair_expectation(d, n, lambda2(spec))
    # beta = 0 collapses both sides to 1 up to float dust; the z-score is
    # undefined there and reported as 0
    if mc_se <= 1e-12 * max(1.0, abs(mc_mean)):
        z = 0.0
    else:
        z = (mc_mean - exact) / mc_se
    return MomentCheckResult(mc_mean=mc_mean, mc_se=mc_se, exact=exact,
                             z_score=float(z), n_seeds=n_seeds)


# ---------------------------------------------------------------------------
# pinned pair expectations via the coincidence-point renewal expansion
# ---------------------------------------------------------------------------

class _PinnedPairRenewal:
    """Spectral renewal over coincidence points for two pinned walks (d=3).

    Works on a circular grid large enough that no used convolution wraps:
    every product of supports has total L1 radius <= n.
    """

    def __init__(self, n, c):
        self.n = n
        self.c = c
        m = sfft.next_fast_len(2 * n + 1)
        self.m = max(m, 2 * n + 1)
        slices = _walk_slices(3, n, range(1, n + 1))
        self.q_hat = {}
        for j in range(1, n + 1):
            self.q_hat[j] = sfft.rfftn(self._embed(slices[j] ** 2, j))
        shape = (self.m, self.m, self.m // 2 + 1)
        self.q_hat[0] = np.ones(shape, dtype=complex)
        # F_j = c * (Q2_j + sum_{i<j} F_i * Q2_{j-i}): mass of pin chains
        self.f_hat = {}
        for j in range(1, n + 1):
            acc = self.q_hat[j].copy()
            for i in range(1, j):
                acc += self.f_hat[i] * self.q_hat[j - i]
            self.f_hat[j] = c * acc

    def _embed(self, block, radius):
        m = self.m
        out = np.zeros((m, m, m))
        idx = (np.arange(-radius, radius + 1) % m)
        out[np.ix_(idx, idx, idx)] = block
        return out

    def _extract(self, spectrum, y):
        field = sfft.irfftn(spectrum, s=(self.m, self.m, self.m))
        return float(field[tuple(int(c) % self.m for c in y)])

    def pinned_exp_overlap(self, y, m_cut=None):
        """E[e^{lam2 N_{1,m_cut}} ; both walks end at y] (default m_cut = n)."""
        m_cut = self.n if m_cut is None else m_cut
        acc = self.q_hat[self.n].copy()
        for j in range(1, m_cut + 1):
            acc += self.f_hat[j] * self.q_hat[self.n - j]
        return self._extract(acc, y)

    def pinned_exp_overlap_all(self, m_cut=None):
        """Same, but the full spatial field over the grid (origin at index 0)."""
        m_cut = self.n if m_cut is None else m_cut
        acc = self.q_hat[self.n].copy()
        for j in range(1, m_cut + 1):
            acc += self.f_hat[j] * self.q_hat[self.n - j]
        return sfft.irfftn(acc, s=(self.m, self.m, self.m))

    def hit_kernels(self):
        """First-coincidence kernels H_j: no meeting in [1, j-1], meet at j.

        Inclusion-exclusion over earlier coincidences is the same renewal
        march run at c = -1.
        """
        h_hat = {}
        minus = {}
        for j in range(1, self.n + 1):
            acc = self.q_hat[j].copy()
            for i in range(1, j):
                acc += minus[i] * self.q_hat[j - i]
            minus[j] = -acc
            h_hat[j] = acc
        return h_hat


def conditioned_pair_expectation(d, n, lam2, x, y) -> float:
    """Exact E[e^{lam2 N_{1,n}} | both pinned walks run x -> y in n steps]."""
    if d != 3:
        raise NotImplementedError("pinned pair expectations are implemented for d = 3")
    x = tuple(int(c) for c in np.atleast_1d(x))
    y = tuple(int(c) for c in np.atleast_1d(y))
    disp = tuple(b - a for a, b in zip(x, y))
    q = q_exact(d, n, disp)
    if q == 0.0:
        raise ParityError(f"q^({n})({disp}) = 0: pinning event has probability 0")
    renew = _PinnedPairRenewal(n, math.exp(lam2) - 1.0)
    return renew.pinned_exp_overlap(disp) / (q * q)


@dataclass(frozen=True)
class ConditionedBoundRow:
    n: int
    max_value: float
    argmax_site: tuple
    n_sites: int


def conditioned_bound_scan(d, times, lam2, radius_factor=1.0):
    """max over |y - x| <= radius_factor * sqrt(n) of the conditioned pair
    expectation, per n; the overall max is the empirical bounding constant."""
    rows = []
    for n in times:
        renew = _PinnedPairRenewal(n, math.exp(lam2) - 1.0)
        field = renew.pinned_exp_overlap_all()
        best, best_site, count = -np.inf, None, 0
        rad2 = radius_factor * radius_factor * n
        r = int(math.isqrt(int(rad2)))
        for a in range(-r, r + 1):
            for b in range(-r, r + 1):
                for c in range(-r, r + 1):
                    if a * a + b * b + c * c > rad2:
                        continue
                    q = q_exact(3, n, (a, b, c))
                    if q == 0.0:
                        continue
                    val = float(field[a % renew.m, b % renew.m, c % renew.m]) / (q * q)
                    count += 1
                    if val > best:
                        best, best_site = val, (a, b, c)
        rows.append(ConditionedBoundRow(n=n, max_value=best, argmax_site=best_site,
                                        n_sites=count))
    return rows


# ---------------------------------------------------------------------------
# direct path-pair Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OverlapHistogram:
    d: int
    n: int
    n_pairs: int
    counts: np.ndarray  # counts[k] = number of sampled pairs with N_{1,n} = k

    def probability(self, k) -> float:
        return float(self.counts[k]) / self.n_pairs

    def exp_overlap_estimate(self, lam2):
        """(mean, se) of e^{lam2 N} under the sampled histogram."""
        ks = np.arange(self.n + 1)
        w = np.exp(lam2 * ks)
        p = self.counts / self.n_pairs
        mean = float(np.dot(p, w))
        var = float(np.dot(p, w * w) - mean ** 2)
        se = math.sqrt(max(var, 0.0) / self.n_pairs)
        return mean, se


def overlap_mc(d, n, n_pairs, seed) -> OverlapHistogram:
    """Sample independent walk pairs and histogram their coincidence count."""
    rng = np.random.default_rng(seed)
    moves = np.zeros((2 * d, d), dtype=np.int8)
    for i in range(d):
        moves[2 * i, i] = 1
        moves[2 * i + 1, i] = -1
    counts = np.zeros(n + 1, dtype=np.int64)
    chunk = max(1, min(n_pairs, 1 << 14))
    done = 0
    while done < n_pairs:
        m = min(chunk, n_pairs - done)
        s1 = moves[rng.integers(0, 2 * d, size=(m, n))]
        s2 = moves[rng.integers(0, 2 * d, size=(m, n))]
        diff = np.cumsum(s1 - s2, axis=1, dtype=np.int64)
        hits = np.all(diff == 0, axis=2).sum(axis=1)
        counts += np.bincount(hits, minlength=n + 1)
        done += m
    return OverlapHistogram(d=d, n=n, n_pairs=n_pairs, counts=counts)


# ---------------------------------------------------------------------------
# bridge absolute-continuity check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BridgeCheckRow:
    n: int
    y: tuple
    lhs: float
    rhs: float
    kernel_ratio: float   # sup_z [q^{(n-m)}(y-z)/q^{(n)}(y-x)]^2


@dataclass(frozen=True)
class BridgeCheckResult:
    t: float
    A: float
    constant: float       # C(A, d) = (1-t)^d * max kernel ratio over the scan
    ok: bool
    rows: tuple


def _kernel_ratio(n, m, y):
    """sup over reachable midpoints z of [q^{(n-m)}(y-z)/q^{(n)}(y-x)]^2, x = 0."""
    qn = q_exact(3, n, y)
    best = 0.0
    for a in range(-m, m + 1):
        for b in range(-(m - abs(a)), m - abs(a) + 1):
            rem = m - abs(a) - abs(b)
            c0 = -rem
            if ((a + b + c0 + m) & 1) != 0:
                c0 += 1
            for c in range(c0, rem + 1, 2):
                qr = q_exact(3, n - m, (y[0] - a, y[1] - b, y[2] - c))
                if qr > 0.0:
                    best = max(best, (qr / qn) ** 2)
    return best


def bridge_abs_continuity_check(d, n, t, A, lam2=None, kind="exp_overlap",
                                threshold=1) -> BridgeCheckResult:
    """Conditioned-versus-free comparison for functionals of the first
    floor(n*t) steps of a pinned pair of walks.

    Implemented functionals: kind="exp_overlap" is e^{lam2 N_{1,m}};
    kind="hit_atleast" is 1_{N_{1,m} >= threshold}; kind="one" is f = 1.
    ``ok`` states lhs <= C(A,d)/(1-t)^d * rhs at every scanned endpoint, with
    the single constant C(A,d) taken as the scan's worst kernel-ratio product.
    """
    if d != 3:
        raise NotImplementedError("the bridge comparison is implemented for d = 3")
    if not (0.0 < t < 1.0):
        raise ValueError("t must be in (0, 1)")
    m = int(n * t)
    if m < 1 or m >= n:
        raise ValueError(f"floor(n*t) = {m} leaves no room for conditioning")
    c = math.exp(lam2) - 1.0 if lam2 is not None else None
    renew = _PinnedPairRenewal(n, c if c is not None else 0.0)

    # deterministic endpoint grid: all reachable y with |y| <= A sqrt(n)
    ys = []
    r = int(A * math.sqrt(n)) + 1
    for a in range(-r, r + 1):
        for b in range(-r, r + 1):
            for cc in range(-r, r + 1):
                if a * a + b * b + cc * cc <= A * A * n and q_exact(3, n, (a, b, cc)) > 0:
                    ys.append((a, b, cc))
    ys.sort(key=lambda s: (s[0] ** 2 + s[1] ** 2 + s[2] ** 2, s))

    if kind == "exp_overlap":
        if lam2 is None:
            raise ValueError("exp_overlap needs lam2")
        rhs = pair_expectation(3, m, lam2)
        acc = renew.pinned_exp_overlap_all(m_cut=m)

        def lhs_at(y):
            q = q_exact(3, n, y)
            return float(acc[y[0] % renew.m, y[1] % renew.m, y[2] % renew.m]) / (q * q)
    elif kind == "hit_atleast":
        k_level = int(threshold)
        h_hat = renew.hit_kernels()
        layer = {j: h_hat[j].copy() for j in range(1, m + 1)}
        for _ in range(k_level - 1):
            nxt = {}
            for j in range(1, m + 1):
                acc_j = None
                for i in range(1, j):
                    term = layer[i] * h_hat[j - i]
                    acc_j = term if acc_j is None else acc_j + term
                if acc_j is not None:
                    nxt[j] = acc_j
            layer = nxt
        spec_acc = None
        rhs = 0.0
        for j, sp in layer.items():
            term = sp * renew.q_hat[n - j]
            spec_acc = term if spec_acc is None else spec_acc + term
            rhs += float(sp[0, 0, 0].real)  # zero frequency = total mass
        field = (sfft.irfftn(spec_acc, s=(renew.m,) * 3) if spec_acc is not None
                 else np.zeros((renew.m,) * 3))

        def lhs_at(y):
            q = q_exact(3, n, y)
            return float(field[y[0] % renew.m, y[1] % renew.m, y[2] % renew.m]) / (q * q)
    elif kind == "one":
        rhs = 1.0

        def lhs_at(y):
            return 1.0
    else:
        raise ValueError(f"unknown functional kind {kind!r}")

    rows = []
    worst_ratio = 0.0
    for y in ys:
        kr = _kernel_ratio(n, m, y)
        worst_ratio = max(worst_ratio, kr)
        rows.append(BridgeCheckRow(n=n, y=y, lhs=lhs_at(y), rhs=rhs, kernel_ratio=kr))
    constant = worst_ratio * (1.0 - t) ** d
    bound = constant / (1.0 - t) ** d
    ok = all(row.lhs <= bound * row.rhs * (1.0 + 1e-12) + 1e-15 for row in rows)
    return BridgeCheckResult(t=t, A=A, constant=constant, ok=ok, rows=tuple(rows))
