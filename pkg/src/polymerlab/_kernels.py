"""Counter-based hashing and hot lattice kernels.

Everything stochastic in the lattice model flows through one hash pipeline:
a splitmix-style avalanche over (seed, tag, time, coordinates) producing a
uniform in (0,1), followed by an inverse-CDF transform for the disorder law.
The pipeline exists twice -- as numba scalar code inlined into the d=3
transfer-matrix kernels, and as a vectorized numpy mirror used by the
generic-dimension fallbacks -- and the two are tested to agree bit for bit.

The d=3 kernels do the O(n^4) work site by site over the reachable parity
diamond, which keeps the hash count minimal and the memory at two ping-pong
boxes.
"""

import math

import numpy as np
from numba import njit

U64 = np.uint64
_GOLD = U64(0x9E3779B97F4A7C15)
_MIX_A = U64(0xBF58476D1CE4E5B9)
_MIX_B = U64(0x94D049BB133111EB)

# domain separation tags so distinct consumers of the same seed never collide
TAG_ETA = U64(0x6C61747469636531)
TAG_POISSON = U64(0x706F697373303031)
TAG_DERIVE = U64(0x7461736B73656564)

WEIGHT_CAP = 1e300  # abort threshold for transfer-matrix weights


# ---------------------------------------------------------------------------
# hashing: numba scalar version
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _mix(z):
    z = z + _GOLD
    z ^= z >> U64(30)
    z = z * _MIX_A
    z ^= z >> U64(27)
    z = z * _MIX_B
    z ^= z >> U64(31)
    return z


@njit(cache=True, inline="always")
def _u01_3(seed_tagged, t, a, b, c):
    h = _mix(seed_tagged ^ _mix(U64(t)))
    h = _mix(h ^ _mix(U64(a)))
    h = _mix(h ^ _mix(U64(b)))
    h = _mix(h ^ _mix(U64(c)))
    return (np.float64(h >> U64(11)) + 0.5) * (2.0 ** -53)


@njit(cache=True)
def seed_with_tag(seed, tag):
    return _mix(U64(seed) + U64(tag))


# ---------------------------------------------------------------------------
# inverse normal CDF: Acklam's rational approximation plus one Newton step
# with erfc, giving full double precision while staying a pure function
# ---------------------------------------------------------------------------

_ACK_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACK_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_ACK_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACK_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True, inline="always")
def _inv_norm_lower(p):
    # p <= 0.5: Acklam's approximation plus one Newton step; in this half
    # Phi(x) = erfc(-x/sqrt(2))/2 evaluates without cancellation
    a0, a1, a2, a3, a4, a5 = _ACK_A
    b0, b1, b2, b3, b4 = _ACK_B
    c0, c1, c2, c3, c4, c5 = _ACK_C
    d0, d1, d2, d3 = _ACK_D
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / \
            ((((d0 * q + d1) * q + d2) * q + d3) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((a0 * r + a1) * r + a2) * r + a3) * r + a4) * r + a5) * q / \
            (((((b0 * r + b1) * r + b2) * r + b3) * r + b4) * r + 1.0)
    err = 0.5 * math.erfc(-x / _SQRT2) - p
    x -= err / (_INV_SQRT_2PI * math.exp(-0.5 * x * x))
    return x


@njit(cache=True, inline="always")
def inv_norm(p):
    # reduce to the lower tail (1 - p is exact for p >= 0.5) so the Newton
    # step never hits the Phi(x) ~ 1 cancellation
    if p > 0.5:
        return -_inv_norm_lower(1.0 - p)
    return _inv_norm_lower(p)


@njit(cache=True)
def inv_norm_array(p):
    out = np.empty(p.size)
    flat = p.ravel()
    for i in range(flat.size):
        out[i] = inv_norm(flat[i])
    return out.reshape(p.shape)


# disorder kinds, shared with env.DisorderSpec
KIND_GAUSSIAN = 0
KIND_BERNOULLI = 1
KIND_EXPONENTIAL = 2


@njit(cache=True, inline="always")
def disorder_from_u(u, kind, p0, p1, p2):
    if kind == KIND_GAUSSIAN:
        return p0 + p1 * inv_norm(u)          # p0 = mean, p1 = std dev
    if kind == KIND_BERNOULLI:
        return p1 if u < p0 else p2           # p0 = p, p1 = a, p2 = b
    return -math.log1p(-u) / p0 - p1          # p0 = rate, p1 = centering shift


@njit(cache=True)
def disorder_from_u_array(u, kind, p0, p1, p2):
    """Array version of the inverse-CDF transform (bitwise identical to the
    scalar path inlined in the DP kernels)."""
    out = np.empty(u.size)
    flat = u.ravel()
    for i in range(flat.size):
        out[i] = disorder_from_u(flat[i], kind, p0, p1, p2)
    return out.reshape(u.shape)


@njit(cache=True)
def eta_sites_d3(seed_tagged, t, coords, kind, p0, p1, p2):
    """Disorder values at explicit (m, 3) integer sites for time slice t."""
    m = coords.shape[0]
    out = np.empty(m)
    for i in range(m):
        u = _u01_3(seed_tagged, t, coords[i, 0], coords[i, 1], coords[i, 2])
        out[i] = disorder_from_u(u, kind, p0, p1, p2)
    return out


# ---------------------------------------------------------------------------
# hashing: numpy mirror (used by generic-d paths and the Poisson environment)
# ---------------------------------------------------------------------------

def np_mix(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLD
        z = z ^ (z >> U64(30))
        z = z * _MIX_A
        z = z ^ (z >> U64(27))
        z = z * _MIX_B
        z = z ^ (z >> U64(31))
    return z


def np_u01(seed_tagged, t, coord_arrays):
    """Uniforms for broadcastable integer coordinate arrays (matches _u01_3)."""
    h = np_mix(U64(seed_tagged) ^ np_mix(U64(t)))
    for c in coord_arrays:
        c64 = np.asarray(c, dtype=np.int64).astype(np.uint64)
        h = np_mix(h ^ np_mix(c64))
    return ((h >> U64(11)).astype(np.float64) + 0.5) * (2.0 ** -53)


def derive_seed(master, *parts):
    """Collision-resistant child seed for a worker task or substream."""
    h = np_mix(U64(master) + TAG_DERIVE)
    for p in parts:
        h = np_mix(h ^ np_mix(np.int64(p).astype(np.uint64)))
    return int(h)


# ---------------------------------------------------------------------------
# d=3 transfer-matrix kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def polymer_forward_d3(seed_tagged, kind, p0, p1, p2, beta, lam,
                       x0a, x0b, x0c, steps, t_base, t_dir, init_factor,
                       keep_flag, keep_off, buf, totals):
    """Point-source polymer DP with the Boltzmann factor on each arrival site.

    Step j consumes the environment at time t_base + t_dir*j; slice j lives on
    the parity diamond |v|_1 <= j around the source. Kept slices are copied
    row-major into ``buf`` at ``keep_off[j]``. Returns 0, or 1 on overflow.
    """
    R = steps + 1
    L = 2 * R + 1
    W = np.zeros((L, L, L))
    V = np.zeros((L, L, L))
    W[R, R, R] = init_factor
    totals[0] = init_factor
    if keep_flag[0]:
        buf[keep_off[0]] = init_factor
    inv2d = 1.0 / 6.0
    for j in range(1, steps + 1):
        t = t_base + t_dir * j
        tot = 0.0
        for a in range(-j, j + 1):
            aa = -a if a < 0 else a
            for b in range(-(j - aa), j - aa + 1):
                ab = -b if b < 0 else b
                rem = j - aa - ab
                c = -rem
                if ((a + b + c + j) & 1) != 0:
                    c += 1
                while c <= rem:
                    s = (W[R + a + 1, R + b, R + c] + W[R + a - 1, R + b, R + c]
                         + W[R + a, R + b + 1, R + c] + W[R + a, R + b - 1, R + c]
                         + W[R + a, R + b, R + c + 1] + W[R + a, R + b, R + c - 1])
                    if s > 0.0:
                        u = _u01_3(seed_tagged, t, x0a + a, x0b + b, x0c + c)
                        e = disorder_from_u(u, kind, p0, p1, p2)
                        w = s * inv2d * np.exp(beta * e - lam)
                        if w > WEIGHT_CAP:
                            return 1
                        V[R + a, R + b, R + c] = w
                        tot += w
                    else:
                        V[R + a, R + b, R + c] = 0.0
                    c += 2
        W, V = V, W
        totals[j] = tot
        if keep_flag[j]:
            off = keep_off[j]
            m = 2 * j + 1
            for a in range(m):
                for b in range(m):
                    for c in range(m):
                        buf[off + (a * m + b) * m + c] = W[R - j + a, R - j + b, R - j + c]
    return 0


@njit(cache=True)
def walk_forward_d3(steps, keep_flag, keep_off, buf, totals):
    """Pure simple-random-walk DP (no disorder): n-step kernel slices."""
    R = steps + 1
    L = 2 * R + 1
    W = np.zeros((L, L, L))
    V = np.zeros((L, L, L))
    W[R, R, R] = 1.0
    totals[0] = 1.0
    if keep_flag[0]:
        buf[keep_off[0]] = 1.0
    inv2d = 1.0 / 6.0
    for j in range(1, steps + 1):
        tot = 0.0
        for a in range(-j, j + 1):
            aa = -a if a < 0 else a
            for b in range(-(j - aa), j - aa + 1):
                ab = -b if b < 0 else b
                rem = j - aa - ab
                c = -rem
                if ((a + b + c + j) & 1) != 0:
                    c += 1
                while c <= rem:
                    s = (W[R + a + 1, R + b, R + c] + W[R + a - 1, R + b, R + c]
                         + W[R + a, R + b + 1, R + c] + W[R + a, R + b - 1, R + c]
                         + W[R + a, R + b, R + c + 1] + W[R + a, R + b, R + c - 1])
                    V[R + a, R + b, R + c] = s * inv2d
                    tot += s * inv2d
                    c += 2
        W, V = V, W
        totals[j] = tot
        if keep_flag[j]:
            off = keep_off[j]
            m = 2 * j + 1
            for a in range(m):
                for b in range(m):
                    for c in range(m):
                        buf[off + (a * m + b) * m + c] = W[R - j + a, R - j + b, R - j + c]
    return 0


@njit(cache=True)
def walk_origin_returns_d3(n_max):
    """q^{(j)}(0) for j = 0..n_max without storing slices (series oracle feed)."""
    R = n_max + 1
    L = 2 * R + 1
    W = np.zeros((L, L, L))
    V = np.zeros((L, L, L))
    W[R, R, R] = 1.0
    out = np.zeros(n_max + 1)
    out[0] = 1.0
    inv2d = 1.0 / 6.0
    for j in range(1, n_max + 1):
        for a in range(-j, j + 1):
            aa = -a if a < 0 else a
            for b in range(-(j - aa), j - aa + 1):
                ab = -b if b < 0 else b
                rem = j - aa - ab
                c = -rem
                if ((a + b + c + j) & 1) != 0:
                    c += 1
                while c <= rem:
                    s = (W[R + a + 1, R + b, R + c] + W[R + a - 1, R + b, R + c]
                         + W[R + a, R + b + 1, R + c] + W[R + a, R + b - 1, R + c]
                         + W[R + a, R + b, R + c + 1] + W[R + a, R + b, R + c - 1])
                    V[R + a, R + b, R + c] = s * inv2d
                    c += 2
        W, V = V, W
        out[j] = W[R, R, R]
    return out


@njit(cache=True)
def adjoint_totals_d3(seed_tagged, kind, p0, p1, p2, beta, lam,
                      ca, cb, cc, span, steps, t_base, out):
    """All-ones adjoint DP: out[v] = sum_z P^z(weighted segment, ends at v).

    Step i consumes the environment at time t_base + i on arrival sites; the
    computed region shrinks one lattice unit per step, so entries of ``out``
    (a (2*span+1)^3 box around the center) are valid for |v - center|_1 <= span.
    Returns 0, or 1 on overflow.
    """
    R = span + steps + 1
    L = 2 * R + 1
    W = np.zeros((L, L, L))
    V = np.zeros((L, L, L))
    r0 = span + steps
    for a in range(-r0, r0 + 1):
        aa = -a if a < 0 else a
        for b in range(-(r0 - aa), r0 - aa + 1):
            ab = -b if b < 0 else b
            rem = r0 - aa - ab
            for c in range(-rem, rem + 1):
                W[R + a, R + b, R + c] = 1.0
    inv2d = 1.0 / 6.0
    for i in range(1, steps + 1):
        t = t_base + i
        r = span + steps - i
        for a in range(-r, r + 1):
            aa = -a if a < 0 else a
            for b in range(-(r - aa), r - aa + 1):
                ab = -b if b < 0 else b
                rem = r - aa - ab
                for c in range(-rem, rem + 1):
                    s = (W[R + a + 1, R + b, R + c] + W[R + a - 1, R + b, R + c]
                         + W[R + a, R + b + 1, R + c] + W[R + a, R + b - 1, R + c]
                         + W[R + a, R + b, R + c + 1] + W[R + a, R + b, R + c - 1])
                    u = _u01_3(seed_tagged, t, ca + a, cb + b, cc + c)
                    e = disorder_from_u(u, kind, p0, p1, p2)
                    w = s * inv2d * np.exp(beta * e - lam)
                    if w > WEIGHT_CAP:
                        return 1
                    V[R + a, R + b, R + c] = w
        W, V = V, W
    m = 2 * span + 1
    for a in range(m):
        for b in range(m):
            for c in range(m):
                out[a, b, c] = W[R - span + a, R - span + b, R - span + c]
    return 0


@njit(cache=True)
def pair_difference_profile_d3(n, k_start, diag_factor):
    """Two-replica difference-chain DP in d=3.

    The difference of two independent walks steps by a two-fold convolution of
    the one-step kernel; each time j in [k_start, n] the origin weight picks up
    ``diag_factor`` (e^{lambda_2} for exponential-overlap moments, 0 for
    no-meeting probabilities). Returns totals[j] for j = 0..n.
    """
    R = 2 * n + 2
    L = 2 * R + 1
    W = np.zeros((L, L, L))
    T = np.zeros((L, L, L))
    V = np.zeros((L, L, L))
    W[R, R, R] = 1.0
    totals = np.zeros(n + 1)
    totals[0] = 1.0
    inv2d = 1.0 / 6.0
    for j in range(1, n + 1):
        r_mid = 2 * j - 1
        for a in range(-r_mid, r_mid + 1):
            aa = -a if a < 0 else a
            for b in range(-(r_mid - aa), r_mid - aa + 1):
                ab = -b if b < 0 else b
                rem = r_mid - aa - ab
                c = -rem
                if ((a + b + c + r_mid) & 1) != 0:
                    c += 1
                while c <= rem:
                    s = (W[R + a + 1, R + b, R + c] + W[R + a - 1, R + b, R + c]
                         + W[R + a, R + b + 1, R + c] + W[R + a, R + b - 1, R + c]
                         + W[R + a, R + b, R + c + 1] + W[R + a, R + b, R + c - 1])
                    T[R + a, R + b, R + c] = s * inv2d
                    c += 2
        r = 2 * j
        tot = 0.0
        for a in range(-r, r + 1):
            aa = -a if a < 0 else a
            for b in range(-(r - aa), r - aa + 1):
                ab = -b if b < 0 else b
                rem = r - aa - ab
                c = -rem
                if ((a + b + c) & 1) != 0:
                    c += 1
                while c <= rem:
                    s = (T[R + a + 1, R + b, R + c] + T[R + a - 1, R + b, R + c]
                         + T[R + a, R + b + 1, R + c] + T[R + a, R + b - 1, R + c]
                         + T[R + a, R + b, R + c + 1] + T[R + a, R + b, R + c - 1])
                    w = s * inv2d
                    if a == 0 and b == 0 and c == 0 and j >= k_start:
                        w *= diag_factor
                    V[R + a, R + b, R + c] = w
                    tot += w
                    c += 2
        W, V = V, W
        totals[j] = tot
    return totals


# ---------------------------------------------------------------------------
# generic-dimension numpy fallbacks (small n; any d >= 1)
# ---------------------------------------------------------------------------

def _np_stencil(W):
    """Sum of the 2d nearest-neighbor shifts, zero-padded."""
    acc = np.zeros_like(W)
    for ax in range(W.ndim):
        lo = [slice(None)] * W.ndim
        hi = [slice(None)] * W.ndim
        lo[ax] = slice(1, None)
        hi[ax] = slice(None, -1)
        acc[tuple(lo)] += W[tuple(hi)]
        acc[tuple(hi)] += W[tuple(lo)]
    return acc


def np_polymer_forward(d, x0, steps, t_base, t_dir, init_factor,
                       keep_js, eta_slice_fn, beta, lam):
    """Generic-d forward/reversed polymer DP on a full (2*steps+1)^d box.

    ``eta_slice_fn(t, lo, shape)`` supplies the disorder block; pass None for
    the pure walk. Returns (totals, {j: slice_array}) with slice j trimmed to
    its (2j+1)^d box.
    """
    L = 2 * steps + 1
    R = steps
    W = np.zeros((L,) * d)
    W[(R,) * d] = init_factor
    totals = np.zeros(steps + 1)
    totals[0] = init_factor
    kept = {}
    keep_js = set(keep_js)
    if 0 in keep_js:
        kept[0] = W[tuple(slice(R, R + 1) for _ in range(d))].copy()
    for j in range(1, steps + 1):
        W = _np_stencil(W) / (2.0 * d)
        if eta_slice_fn is not None:
            t = t_base + t_dir * j
            lo = tuple(x0[i] - steps for i in range(d))
            eta = eta_slice_fn(t, lo, (L,) * d)
            W = W * np.exp(beta * eta - lam)
        if np.any(W > WEIGHT_CAP):
            raise FloatingPointError("transfer-matrix weight overflow")
        totals[j] = W.sum()
        if j in keep_js:
            sl = tuple(slice(R - j, R + j + 1) for _ in range(d))
            kept[j] = W[sl].copy()
    return totals, kept


def np_adjoint_totals(d, center, span, steps, t_base, eta_slice_fn, beta, lam):
    """Generic-d all-ones adjoint DP; valid for |v - center|_1 <= span."""
    r0 = span + steps
    L = 2 * r0 + 1
    W = np.ones((L,) * d)
    for i in range(1, steps + 1):
        W = _np_stencil(W) / (2.0 * d)
        t = t_base + i
        lo = tuple(center[k] - r0 for k in range(d))
        eta = eta_slice_fn(t, lo, (L,) * d)
        W = W * np.exp(beta * eta - lam)
    sl = tuple(slice(r0 - span, r0 + span + 1) for _ in range(d))
    return W[sl].copy()


def np_pair_difference_profile(d, n, k_start, diag_factor):
    """Generic-d difference-chain profile (two stencil passes per step)."""
    L = 4 * n + 1
    R = 2 * n
    W = np.zeros((L,) * d)
    W[(R,) * d] = 1.0
    totals = np.zeros(n + 1)
    totals[0] = 1.0
    for j in range(1, n + 1):
        W = _np_stencil(_np_stencil(W)) / (2.0 * d) ** 2
        if j >= k_start:
            W[(R,) * d] *= diag_factor
        totals[j] = W.sum()
    return totals
