"""Discretized continuous polymer: Poisson environment and tube weights.

The environment is a unit-intensity Poisson point cloud on space-time,
generated lazily and reproducibly per unit cell from the counter-based hash.
Paths are Euler discretizations of Brownian motion on a step grid; the unit
volume tube around a path is discretized with the left-endpoint convention,
so a point (u, z) is tested against the path position at the grid time at or
below u. With that convention the discretized Boltzmann weight has exact
disorder mean one when normalized with the discrete tube length K*h, which
is what all the Monte Carlo normalization checks rely on.

Everything here is Monte Carlo: the continuous model has no exact
transfer-matrix route, so identities are verified as agreement between
estimators with independent sources of randomness.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from ._io import write_csv
from ._kernels import TAG_POISSON, derive_seed, np_mix, np_u01
from ._parallel import blocked_map
from .errors import HypothesisGateError, WindowError

U64 = np.uint64


def lambda_poisson(beta: float) -> float:
    """Log-moment-generating function of the Poisson environment: e^beta - 1."""
    return math.expm1(beta)


def lambda2_poisson(beta: float) -> float:
    """lambda(2 beta) - 2 lambda(beta) = (e^beta - 1)^2 for Poisson disorder."""
    return math.expm1(beta) ** 2


@dataclass(frozen=True)
class TubeGeometry:
    """Unit-volume ball radius and two-ball intersection volumes."""

    d: int
    h: float

    @property
    def radius(self) -> float:
        return float((special.gamma(self.d / 2.0 + 1.0) / math.pi ** (self.d / 2.0))
                     ** (1.0 / self.d))

    def lens_volume(self, delta):
        """Volume of the intersection of two unit-volume balls at center
        distance delta: 1 at delta = 0, 0 beyond 2*radius, exact in between
        (closed form for d = 3, cap-section quadrature otherwise)."""
        r = self.radius
        delta = np.abs(np.asarray(delta, dtype=np.float64))
        scalar = delta.ndim == 0
        delta = np.atleast_1d(delta)
        out = np.zeros_like(delta)
        inside = delta < 2.0 * r
        if self.d == 3:
            dd = np.where(delta > 1e-12, delta, 1.0)
            lens = np.pi * (2.0 * r - delta) ** 2 * (delta ** 2 + 4.0 * delta * r) \
                / (12.0 * dd)
            lens = np.where(delta <= 1e-12, 1.0, lens)
            out[inside] = lens[inside]
        else:
            c = math.pi ** ((self.d - 1) / 2.0) / special.gamma((self.d + 1) / 2.0)
            for i in np.nonzero(inside)[0]:
                val, _ = integrate.quad(
                    lambda x: (r * r - x * x) ** ((self.d - 1) / 2.0),
                    delta[i] / 2.0, r, epsabs=1e-10, epsrel=1e-10)
                out[i] = 2.0 * c * val
        return float(out[0]) if scalar else out


def _poisson_inv_cdf_table():
    # unit-rate Poisson CDF far past double precision mass
    k = np.arange(0, 36)
    pmf = np.exp(-1.0) / special.factorial(k)
    return np.cumsum(pmf)


_POISSON_CDF = _poisson_inv_cdf_table()


class PoissonEnvironment:
    """Reproducible unit-intensity Poisson cloud on [0, t_max] x box.

    Points are a pure function of (seed, cell): each unit space-time cell
    derives a hash key from its integer corner, draws its occupation count by
    inverse CDF, and places each point uniformly. Cells are generated lazily
    one time slab at a time and cached.
    """

    def __init__(self, seed, d, t_max, half_width):
        self.seed = int(seed)
        self.d = int(d)
        self.t_max = float(t_max)
        self.half_width = int(half_width)
        tagged = (self.seed + int(TAG_POISSON)) & 0xFFFFFFFFFFFFFFFF
        self._tagged = np_mix(U64(tagged))
        self._slabs = {}

    def _cell_keys(self, k):
        """Hash keys for all space cells of time slab k, plus corner grids."""
        hw = self.half_width
        axes = [np.arange(-hw, hw, dtype=np.int64) for _ in range(self.d)]
        grids = np.meshgrid(*axes, indexing="ij")
        h = np_mix(self._tagged ^ np_mix(U64(k)))
        for g in grids:
            h = np_mix(h ^ np_mix(g.astype(np.uint64)))
        return h, grids

    def _slot_u01(self, keys, slot):
        return ((np_mix(keys ^ np_mix(slot.astype(np.uint64))) >> U64(11))
                .astype(np.float64) + 0.5) * (2.0 ** -53)

    def slab(self, k):
        """(times, coords) of all points with time in [k, k+1)."""
        if k in self._slabs:
            return self._slabs[k]
        keys, grids = self._cell_keys(k)
        keys = keys.ravel()
        corners = np.stack([g.ravel() for g in grids], axis=1)
        u0 = self._slot_u01(keys, np.zeros_like(keys))
        counts = np.searchsorted(_POISSON_CDF, u0, side="right")
        total = int(counts.sum())
        if total == 0:
            out = (np.empty(0), np.empty((0, self.d)))
            self._slabs[k] = out
            return out
        rep = np.repeat(np.arange(keys.size), counts)
        point_idx = np.arange(total) - np.repeat(
            np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
        base = 1 + point_idx * (self.d + 1)
        pk = keys[rep]
        times = k + self._slot_u01(pk, base)
        coords = np.empty((total, self.d))
        for i in range(self.d):
            coords[:, i] = corners[rep, i] + self._slot_u01(pk, base + 1 + i)
        self._slabs[k] = (times, coords)
        return times, coords

    def points(self, t_lo, t_hi):
        """All points with time in [t_lo, t_hi) (callers refine half-open edges)."""
        ks = range(max(0, math.floor(t_lo)), math.ceil(t_hi))
        parts = [self.slab(k) for k in ks]
        if not parts:
            return np.empty(0), np.empty((0, self.d))
        times = np.concatenate([p[0] for p in parts])
        coords = np.concatenate([p[1] for p in parts])
        keep = (times >= t_lo) & (times < t_hi)
        return times[keep], coords[keep]

    def check_paths_inside(self, paths, radius):
        m = np.max(np.abs(paths))
        if m + radius > self.half_width:
            raise WindowError(
                f"tube exits the spatial box: |path| + radius = {m + radius:.2f} "
                f"> half_width = {self.half_width}")


def _bucket_counts(u_times, coords, paths, r, h, n_steps):
    """Tube hits per path: point with in-tube time u matches the path position
    at step ceil(u/h) - 1; left-endpoint piecewise-constant discretization."""
    steps = np.ceil(u_times / h).astype(np.int64) - 1
    keep = (steps >= 0) & (steps < n_steps)
    steps, coords = steps[keep], coords[keep]
    order = np.argsort(steps, kind="stable")
    steps, coords = steps[order], coords[order]
    bounds = np.searchsorted(steps, np.arange(n_steps + 1))
    counts = np.zeros(paths.shape[0], dtype=np.int64)
    r2 = r * r
    for i in range(n_steps):
        lo, hi = bounds[i], bounds[i + 1]
        if lo == hi:
            continue
        pts = coords[lo:hi]
        pos = paths[:, i, :]
        # cheap per-step bounding box around the path cloud
        sel = np.ones(len(pts), dtype=bool)
        for ax in range(pos.shape[1]):
            sel &= (pts[:, ax] >= pos[:, ax].min() - r) & \
                   (pts[:, ax] <= pos[:, ax].max() + r)
        pts = pts[sel]
        if len(pts) == 0:
            continue
        d2 = ((pos[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        counts += (d2 <= r2).sum(axis=1)
    return counts


def tube_count(env: PoissonEnvironment, path, s, t, geometry: TubeGeometry) -> int:
    """Points of the environment inside the unit tube around ``path`` over
    (s, t]; ``path`` holds positions at s, s+h, ..., t."""
    path = np.asarray(path, dtype=np.float64)
    h = geometry.h
    n_steps = int(round((t - s) / h))
    env.check_paths_inside(path, geometry.radius)
    times, coords = env.points(s, t + h)
    keep = (times > s) & (times <= t)
    counts = _bucket_counts(times[keep] - s, coords[keep], path[None, :, :],
                            geometry.radius, h, n_steps)
    return int(counts[0])


def reversed_tube_count(env: PoissonEnvironment, path, l, anchor,
                        geometry: TubeGeometry) -> int:
    """Tube count for a reversed path from y: reversed time u on the path maps
    to absolute environment time anchor - u, mirroring the forward convention."""
    path = np.asarray(path, dtype=np.float64)
    h = geometry.h
    n_steps = int(round(l / h))
    env.check_paths_inside(path, geometry.radius)
    times, coords = env.points(anchor - l, anchor)
    keep = (times >= anchor - l) & (times < anchor)
    counts = _bucket_counts(anchor - times[keep], coords[keep], path[None, :, :],
                            geometry.radius, h, n_steps)
    return int(counts[0])


def _free_paths(rng, x, t, h, n_paths, d):
    n_steps = int(round(t / h))
    inc = rng.normal(0.0, math.sqrt(h), size=(n_paths, n_steps, d))
    paths = np.concatenate([np.zeros((n_paths, 1, d)), np.cumsum(inc, axis=1)],
                           axis=1)
    return paths + np.asarray(x, dtype=np.float64)


def bridge_sample(x, y, t, h, seed) -> np.ndarray:
    """One Brownian bridge x -> y on the h-grid: free increments plus the
    linear endpoint correction (realizing the bridge's density-ratio law)."""
    return bridge_paths(x, y, t, h, 1, np.random.default_rng(seed))[0]


def bridge_paths(x, y, t, h, n_paths, rng) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = x.size
    w = _free_paths(rng, np.zeros(d), t, h, n_paths, d)
    n_steps = w.shape[1] - 1
    # integer fractions so both endpoints are exact
    frac = (np.arange(n_steps + 1) / n_steps)[None, :, None]
    return x + w - frac * (w[:, -1:, :] - (y - x))


def brownian_partition_mc(env: PoissonEnvironment, x, t, beta, n_paths, h, seed):
    """(estimate, se) of the normalized partition function Z_t^x by path MC."""
    geo = TubeGeometry(d=env.d, h=h)
    rng = np.random.default_rng(seed)
    paths = _free_paths(rng, x, t, h, n_paths, env.d)
    w = _weights_for_paths(env, paths, t, geo, beta)
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(n_paths))


def _weights_for_paths(env, paths, t, geo, beta):
    env.check_paths_inside(paths, geo.radius)
    n_steps = int(round(t / geo.h))
    times, coords = env.points(0.0, t + geo.h)
    keep = (times > 0.0) & (times <= t)
    counts = _bucket_counts(times[keep], coords[keep], paths, geo.radius,
                            geo.h, n_steps)
    return np.exp(beta * counts - lambda_poisson(beta) * n_steps * geo.h)


def overlap_volume(path1, path2, s, t, geometry: TubeGeometry) -> float:
    """Discretized tube-overlap volume: step sum of lens volumes at the
    inter-path distance, left-endpoint convention."""
    p1 = np.asarray(path1, dtype=np.float64)
    p2 = np.asarray(path2, dtype=np.float64)
    h = geometry.h
    i_lo = int(round(s / h))
    i_hi = int(round(t / h))
    delta = np.sqrt(((p1[i_lo:i_hi] - p2[i_lo:i_hi]) ** 2).sum(axis=1))
    return float(geometry.lens_volume(delta).sum() * h)


# ---------------------------------------------------------------------------
# second-moment identity, continuous model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuousMomentResult:
    lhs_mean: float
    lhs_se: float
    rhs_mean: float
    rhs_se: float
    z_score: float
    n_env: int
    n_pairs: int


def _second_moment_env_block(lo, hi, payload):
    beta, d, t, n_paths, h, master_seed, half_width = payload
    geo = TubeGeometry(d=d, h=h)
    out = np.empty(hi - lo)
    for i in range(lo, hi):
        env = PoissonEnvironment(derive_seed(master_seed, i, 0), d, t, half_width)
        za = _inner_z(env, beta, t, n_paths, geo,
                      np.random.default_rng(derive_seed(master_seed, i, 1)))
        zb = _inner_z(env, beta, t, n_paths, geo,
                      np.random.default_rng(derive_seed(master_seed, i, 2)))
        out[i - lo] = za * zb
    return out


def _inner_z(env, beta, t, n_paths, geo, rng):
    paths = _free_paths(rng, np.zeros(env.d), t, geo.h, n_paths, env.d)
    return float(_weights_for_paths(env, paths, t, geo, beta).mean())


def continuous_second_moment_check(beta, d, t, n_env, n_paths, n_pairs, h,
                                   master_seed=1, workers=None,
                                   block_size=32) -> ContinuousMomentResult:
    """Q(Z_t^2) two ways: quenched MC with a replica-pair product correcting
    the inner-MC bias, against path-pair MC of the exponential tube overlap."""
    geo = TubeGeometry(d=d, h=h)
    half_width = math.ceil(6.0 * math.sqrt(t) + geo.radius + 1.0)
    blocks = blocked_map(_second_moment_env_block, n_env,
                         (beta, d, t, n_paths, h, master_seed, half_width),
                         block_size=block_size, workers=workers)
    lhs = np.concatenate(blocks)
    kurt = _excess_kurtosis(lhs)
    if kurt > 100.0:
        warnings.warn(f"second-moment estimator kurtosis {kurt:.1f}: "
                      "variance may be blowing up at this beta", RuntimeWarning)
    lam2 = lambda2_poisson(beta)
    rng = np.random.default_rng(derive_seed(master_seed, 0x70617273))
    vals = np.empty(n_pairs)
    chunk = 512
    done = 0
    while done < n_pairs:
        m = min(chunk, n_pairs - done)
        p1 = _free_paths(rng, np.zeros(d), t, h, m, d)
        p2 = _free_paths(rng, np.zeros(d), t, h, m, d)
        delta = np.sqrt(((p1[:, :-1, :] - p2[:, :-1, :]) ** 2).sum(axis=2))
        overlap = geo.lens_volume(delta.ravel()).reshape(delta.shape).sum(axis=1) * h
        vals[done:done + m] = np.exp(lam2 * overlap)
        done += m
    lhs_mean, rhs_mean = float(lhs.mean()), float(vals.mean())
    lhs_se = float(lhs.std(ddof=1) / math.sqrt(len(lhs)))
    rhs_se = float(vals.std(ddof=1) / math.sqrt(n_pairs))
    se = math.hypot(lhs_se, rhs_se)
    # beta = 0: both estimators are exactly 1 with zero variance
    z = (lhs_mean - rhs_mean) / se if se > 1e-12 else 0.0
    return ContinuousMomentResult(lhs_mean=lhs_mean, lhs_se=lhs_se,
                                  rhs_mean=rhs_mean, rhs_se=rhs_se,
                                  z_score=float(z), n_env=n_env, n_pairs=n_pairs)


def _excess_kurtosis(x):
    mu = x.mean()
    s2 = x.var()
    if s2 == 0.0:
        return 0.0
    return float(((x - mu) ** 4).mean() / s2 ** 2 - 3.0)


# ---------------------------------------------------------------------------
# continuous local-limit-theorem residual scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuousResidualRow:
    t: float
    offset: float          # |y - x| along the first axis
    raw: float             # mean residual^2 over environments
    noise_floor: float     # mean inner-MC variance of the residual estimator
    corrected: float
    se: float
    n_env: int


def _resid_env_block(lo, hi, payload):
    (beta, d, t, l, offsets, n_paths, h, master_seed, half_width) = payload
    geo = TubeGeometry(d=d, h=h)
    lam = lambda_poisson(beta)
    n_steps_t = int(round(t / h))
    n_steps_l = int(round(l / h))
    acc = np.zeros((len(offsets), 4))
    for i in range(lo, hi):
        env = PoissonEnvironment(derive_seed(master_seed, i, 3), d, t, half_width)
        rng_f = np.random.default_rng(derive_seed(master_seed, i, 4))
        fwd_paths = _free_paths(rng_f, np.zeros(d), l, h, n_paths, d)
        env.check_paths_inside(fwd_paths, geo.radius)
        times, coords = env.points(0.0, t + h)
        sel_f = (times > 0.0) & (times <= l)
        cf = _bucket_counts(times[sel_f], coords[sel_f], fwd_paths, geo.radius,
                            h, n_steps_l)
        wf = np.exp(beta * cf - lam * n_steps_l * h)
        fwd_mean, fwd_var = float(wf.mean()), float(wf.var(ddof=1))
        sel_r = (times >= t - l) & (times < t)
        for k, off in enumerate(offsets):
            y = np.zeros(d)
            y[0] = off
            rng_b = np.random.default_rng(derive_seed(master_seed, i, 5, k))
            bridges = bridge_paths(np.zeros(d), y, t, h, n_paths, rng_b)
            env.check_paths_inside(bridges, geo.radius)
            sel_t = (times > 0.0) & (times <= t)
            cb = _bucket_counts(times[sel_t], coords[sel_t], bridges, geo.radius,
                                h, n_steps_t)
            wb = np.exp(beta * cb - lam * n_steps_t * h)
            rng_r = np.random.default_rng(derive_seed(master_seed, i, 6, k))
            rev_paths = _free_paths(rng_r, y, l, h, n_paths, d)
            env.check_paths_inside(rev_paths, geo.radius)
            cr = _bucket_counts(t - times[sel_r], coords[sel_r], rev_paths,
                                geo.radius, h, n_steps_l)
            wr = np.exp(beta * cr - lam * n_steps_l * h)
            bridge_mean, bridge_var = float(wb.mean()), float(wb.var(ddof=1))
            rev_mean, rev_var = float(wr.mean()), float(wr.var(ddof=1))
            delta = bridge_mean - fwd_mean * rev_mean
            m = n_paths
            floor = (bridge_var / m + fwd_mean ** 2 * rev_var / m
                     + rev_mean ** 2 * fwd_var / m + fwd_var * rev_var / m ** 2)
            acc[k, 0] += delta
            acc[k, 1] += delta * delta
            acc[k, 2] += floor
            acc[k, 3] += delta ** 4
    return acc


def continuous_llt_residual_scan(beta, d, times, a, A, n_env, n_paths, h,
                                 master_seed=1, workers=None, block_size=8,
                                 offsets_frac=(0.0, 0.5, 1.0),
                                 variance_gate=50.0, cap_half=False):
    """Noise-floor-corrected disorder-L2 scan of the continuous factorization
    residual over ``times``; the short depth is l_t = t^a rounded to the step
    grid (optionally capped at t/2, which forces the two short factors onto
    disjoint time slabs even at desk-scale t).

    Refuses betas whose inner path-MC weight variance makes the estimator
    hopeless at this path budget (the empirical stand-in for the continuum
    L2-region threshold, which has no closed form).
    """
    rows = []
    for t in times:
        lam2 = lambda2_poisson(beta)
        geo = TubeGeometry(d=d, h=h)
        # e^{lam2 t} - 1 bounds the relative variance of a single path weight;
        # compare in log space so hopeless betas cannot overflow the gate
        if lam2 * t > math.log1p(variance_gate):
            raise HypothesisGateError(
                f"inner-MC variance gate: lambda2 * t = {lam2 * t:.2f} exceeds "
                f"log(1 + {variance_gate})")
        l = min(t ** a, t / 2.0) if cap_half else min(t ** a, t)
        l = max(h, round(l / h) * h)
        half_width = math.ceil((A + 6.0) * math.sqrt(t) + geo.radius + 1.0)
        offsets = [f * A * math.sqrt(t) for f in offsets_frac]
        blocks = blocked_map(
            _resid_env_block, n_env,
            (beta, d, t, l, offsets, n_paths, h, master_seed, half_width),
            block_size=block_size, workers=workers)
        sums = np.stack(blocks).sum(axis=0)
        for k, off in enumerate(offsets):
            raw = sums[k, 1] / n_env
            floor = sums[k, 2] / n_env
            var = max(sums[k, 3] / n_env - raw * raw, 0.0)
            rows.append(ContinuousResidualRow(
                t=t, offset=off, raw=raw, noise_floor=floor,
                corrected=raw - floor, se=math.sqrt(var / n_env), n_env=n_env))
    return rows


def continuous_rows_to_csv(rows, path):
    write_csv(path, ["t", "offset", "raw", "noise_floor", "corrected", "se", "n_env"],
              [(r.t, r.offset, r.raw, r.noise_floor, r.corrected, r.se, r.n_env)
               for r in rows])


@dataclass(frozen=True)
class BridgeConsistencyResult:
    bridge_mean: float
    bridge_se: float
    binned_mean: float
    binned_se: float
    z_score: float
    n_binned: int


def bridge_conditioning_consistency(beta, d, t, h, y_offset, bin_radius,
                                    n_env, n_free, n_bridge, master_seed=1):
    """Bridge-MC of the conditioned weight against free paths whose endpoints
    land within ``bin_radius`` of y: a discretized statement of the bridge
    density-ratio representation."""
    geo = TubeGeometry(d=d, h=h)
    half_width = math.ceil((abs(y_offset) / math.sqrt(t) + 6.0) * math.sqrt(t)
                           + geo.radius + 1.0)
    y = np.zeros(d)
    y[0] = y_offset
    b_vals, f_vals = [], []
    n_binned = 0
    for i in range(n_env):
        env = PoissonEnvironment(derive_seed(master_seed, i, 7), d, t, half_width)
        rng_b = np.random.default_rng(derive_seed(master_seed, i, 8))
        bridges = bridge_paths(np.zeros(d), y, t, h, n_bridge, rng_b)
        b_vals.append(_weights_for_paths(env, bridges, t, geo, beta))
        rng_f = np.random.default_rng(derive_seed(master_seed, i, 9))
        free = _free_paths(rng_f, np.zeros(d), t, h, n_free, d)
        ends = free[:, -1, :]
        sel = ((ends - y) ** 2).sum(axis=1) <= bin_radius ** 2
        if sel.any():
            w = _weights_for_paths(env, free[sel], t, geo, beta)
            f_vals.append(w)
            n_binned += int(sel.sum())
    b = np.concatenate(b_vals)
    f = np.concatenate(f_vals) if f_vals else np.array([np.nan])
    bm, fm = float(b.mean()), float(f.mean())
    bs = float(b.std(ddof=1) / math.sqrt(len(b)))
    fs = float(f.std(ddof=1) / math.sqrt(len(f))) if len(f) > 1 else float("inf")
    z = (bm - fm) / math.hypot(bs, fs)
    return BridgeConsistencyResult(bridge_mean=bm, bridge_se=bs, binned_mean=fm,
                                   binned_se=fs, z_score=float(z),
                                   n_binned=n_binned)
