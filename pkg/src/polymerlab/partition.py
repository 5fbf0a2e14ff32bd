"""Transfer-matrix computation of polymer partition objects.

Everything here is exact per environment realization: point-to-point weights
W_n(x0 -> y), the normalized partition function Z_n as their total mass,
time-reversed partition functions read against the environment backwards
from an anchor time, bridge-conditioned densities, endpoint laws, and the
endpoint collision statistic I_n.

Conventions, fixed once and used everywhere:

* forward weights attach the Boltzmann factor to the arrival site of each
  step, so an n-step weight consumes the environment at times 1..n (shifted
  by ``start_time``) and never at the starting point;
* reversed weights anchored at time n consume times n, n-1, ..., n-l+1,
  including the start site and excluding the final one. This mirror image of
  the forward convention is exactly what path reversal produces, so the
  identity sum_z P^z(segment ending at y) = P^y(reversed from y) holds with
  no disorder average, and tests enforce it at 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .env import EnvironmentField, log_mgf
from .errors import OverflowAbort, ParityError
from ._io import write_csv
from .walk import q_exact


@dataclass(frozen=True)
class PartitionField:
    """One time slice of polymer weights on the lattice.

    ``weights`` is a dense (2*radius+1)^d box with lower corner ``lo``;
    sites outside carry weight zero (off-parity or unreachable).
    """

    origin: tuple
    time: int
    direction: str            # "forward" | "reversed"
    d: int
    lo: tuple
    weights: np.ndarray
    start_time: int = 0       # forward: environment times are start_time+1..start_time+n
    anchor: int | None = None  # reversed: environment times are anchor..anchor-l+1

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def weight(self, y) -> float:
        idx = tuple(int(c) - l for c, l in zip(np.atleast_1d(y), self.lo))
        if any(i < 0 or i >= s for i, s in zip(idx, self.weights.shape)):
            return 0.0
        return float(self.weights[idx])

    def sites(self):
        """Iterate (site, weight) over nonzero entries."""
        for idx in np.argwhere(self.weights != 0.0):
            site = tuple(int(i) + l for i, l in zip(idx, self.lo))
            yield site, float(self.weights[tuple(idx)])

    def to_csv(self, path):
        write_csv(path, [f"x{i}" for i in range(self.d)] + ["weight"],
                  [site + (w,) for site, w in self.sites()])


def _forward_raw(field: EnvironmentField, x0, steps, keep_js,
                 start_time=0, t_dir=1, init_factor=1.0):
    """Shared DP driver; returns (totals[0..steps], {j: dense (2j+1)^d slice})."""
    spec = field.spec
    beta = spec.beta
    lam = log_mgf(spec, beta)
    kind, p0, p1, p2 = spec.kernel_params()
    keep_js = sorted(set(int(j) for j in keep_js))
    if field.d == 3:
        keep_flag = np.zeros(steps + 1, dtype=np.uint8)
        keep_off = np.zeros(steps + 2, dtype=np.int64)
        off = 0
        for j in keep_js:
            keep_flag[j] = 1
            keep_off[j] = off
            off += (2 * j + 1) ** 3
        buf = np.zeros(max(off, 1))
        totals = np.zeros(steps + 1)
        status = _kernels.polymer_forward_d3(
            np.uint64(field._tagged), kind, p0, p1, p2, beta, lam,
            x0[0], x0[1], x0[2], steps, start_time, t_dir, init_factor,
            keep_flag, keep_off, buf, totals)
        if status != 0:
            raise OverflowAbort("transfer-matrix weight overflow")
        kept = {}
        for j in keep_js:
            m = 2 * j + 1
            kept[j] = buf[keep_off[j]:keep_off[j] + m ** 3].reshape((m,) * 3).copy()
        return totals, kept

    def eta_slice(t, lo, shape):
        return field.eta_block(t, lo, shape)

    return _kernels.np_polymer_forward(field.d, tuple(x0), steps, start_time,
                                       t_dir, init_factor, keep_js, eta_slice,
                                       beta, lam)


def forward_partition(field: EnvironmentField, x0, n, start_time=0) -> PartitionField:
    """Weights W_n(y) = P^{x0}(e_{1,n} 1_{walk at y}), environment times shifted
    by ``start_time``; their total is the normalized partition function Z_n."""
    x0 = tuple(int(c) for c in np.atleast_1d(x0))
    field.check_ball(x0, n, start_time + n)
    if start_time < 0 or (n >= 1 and start_time + 1 < 1):
        raise ValueError("start_time must be >= 0")
    totals, kept = _forward_raw(field, x0, n, [n], start_time=start_time)
    return PartitionField(origin=x0, time=n, direction="forward", d=field.d,
                          lo=tuple(c - n for c in x0), weights=kept[n],
                          start_time=start_time)


def forward_totals(field: EnvironmentField, x0, n, start_time=0) -> np.ndarray:
    """Z_j for j = 0..n in one DP pass (the partition-function martingale path)."""
    x0 = tuple(int(c) for c in np.atleast_1d(x0))
    field.check_ball(x0, n, start_time + n)
    totals, _ = _forward_raw(field, x0, n, [], start_time=start_time)
    return totals


def reversed_partition(field: EnvironmentField, y, l, anchor) -> PartitionField:
    """Time-reversed partition object from y, reading times anchor..anchor-l+1.

    The returned weights sit on the last weighted position (l-1 steps from y);
    their total is P^y of the reversed l-factor Boltzmann weight.
    """
    y = tuple(int(c) for c in np.atleast_1d(y))
    if not (1 <= l <= anchor):
        raise ValueError(f"need 1 <= l <= anchor, got l={l}, anchor={anchor}")
    field.check_time(anchor)
    field.check_time(anchor - l + 1)
    field.check_ball(y, l - 1, anchor)
    beta = field.spec.beta
    lam = log_mgf(field.spec, beta)
    start_factor = float(np.exp(beta * field.eta(anchor, y) - lam))
    totals, kept = _forward_raw(field, y, l - 1, [l - 1],
                                start_time=anchor, t_dir=-1,
                                init_factor=start_factor)
    return PartitionField(origin=y, time=l, direction="reversed", d=field.d,
                          lo=tuple(c - (l - 1) for c in y), weights=kept[l - 1],
                          anchor=anchor)


def reversed_totals(field: EnvironmentField, anchor, l, center, span):
    """P^y(reversed weight of depth l anchored at ``anchor``) for every y with
    |y - center|_1 <= span, via one all-ones adjoint DP.

    Returns (lo, box) where box is a dense (2*span+1)^d array; entries beyond
    the L1 ball of radius ``span`` are not meaningful.
    """
    center = tuple(int(c) for c in np.atleast_1d(center))
    if not (1 <= l <= anchor):
        raise ValueError(f"need 1 <= l <= anchor, got l={l}, anchor={anchor}")
    field.check_time(anchor)
    field.check_time(anchor - l + 1)
    field.check_ball(center, span + l - 1, anchor)
    spec = field.spec
    beta = spec.beta
    lam = log_mgf(spec, beta)
    lo = tuple(c - span for c in center)
    if field.d == 3:
        kind, p0, p1, p2 = spec.kernel_params()
        out = np.zeros((2 * span + 1,) * 3)
        status = _kernels.adjoint_totals_d3(
            np.uint64(field._tagged), kind, p0, p1, p2, beta, lam,
            center[0], center[1], center[2], span, l, anchor - l, out)
        if status != 0:
            raise OverflowAbort("transfer-matrix weight overflow")
        return lo, out

    def eta_slice(t_fwd, lo_, shape):
        # adjoint step i consumes absolute time anchor - l + i; the generic
        # driver hands us t_fwd = (anchor - l) + i already
        return field.eta_block(t_fwd, lo_, shape)

    out = _kernels.np_adjoint_totals(field.d, center, span, l, anchor - l,
                                     eta_slice, beta, lam)
    return lo, out


def conditional_density(field: EnvironmentField, x, y, n) -> float:
    """P^x(e_{1,n} | walk ends at y) = W_n(y) / q^{(n)}(y - x)."""
    x = tuple(int(c) for c in np.atleast_1d(x))
    y = tuple(int(c) for c in np.atleast_1d(y))
    disp = tuple(b - a for a, b in zip(x, y))
    q = q_exact(field.d, n, disp)
    if q == 0.0:
        raise ParityError(f"q^({n})({disp}) = 0: conditioning event has probability 0")
    return forward_partition(field, x, n).weight(y) / q


def endpoint_law(field: EnvironmentField, x0, n) -> PartitionField:
    """Polymer endpoint marginal mu_n: forward weights normalized by Z_n."""
    pf = forward_partition(field, x0, n)
    z = pf.total
    if z <= 0.0:
        raise OverflowAbort("partition function vanished; cannot normalize")
    return PartitionField(origin=pf.origin, time=n, direction="forward",
                          d=pf.d, lo=pf.lo, weights=pf.weights / z,
                          start_time=pf.start_time)


def i_n_statistic(field: EnvironmentField, x0, n) -> float:
    """I_n = sum_y mu_n(y)^2, the endpoint collision probability of two
    independent replicas drawn from the same environment."""
    mu = endpoint_law(field, x0, n)
    return float(np.sum(mu.weights * mu.weights))


def _i_n_block(lo, hi, payload):
    spec, d, times, master_seed = payload
    from ._kernels import derive_seed

    n_top = max(times)
    acc = np.zeros((len(times), 2))
    for i in range(lo, hi):
        fld = EnvironmentField(spec=spec, seed=derive_seed(master_seed, i),
                               d=d, n_max=n_top)
        totals, kept = _forward_raw(fld, (0,) * d, n_top, times)
        for k, n in enumerate(times):
            w = kept[n]
            z = totals[n]
            i_n = float(np.sum(w * w)) / (z * z)
            acc[k, 0] += i_n
            acc[k, 1] += i_n * i_n
    return acc


def i_n_disorder_scan(spec, d, times, n_seeds, master_seed=1, workers=None,
                      block_size=64):
    """Disorder-averaged I_n over the given times, with the diffusive scaling
    I_n * n^{d/2} reported (bounded in the diffusive regime, by construction
    of the endpoint factorization)."""
    from ._parallel import blocked_map

    times = sorted(int(n) for n in times)
    blocks = blocked_map(_i_n_block, n_seeds, (spec, d, tuple(times), master_seed),
                         block_size=block_size, workers=workers)
    sums = np.stack(blocks).sum(axis=0)
    rows = []
    for k, n in enumerate(times):
        mean = sums[k, 0] / n_seeds
        var = max(sums[k, 1] / n_seeds - mean * mean, 0.0)
        rows.append({"n": n, "mean": mean,
                     "se": float(np.sqrt(var / n_seeds)),
                     "scaled": mean * n ** (d / 2.0)})
    return rows
