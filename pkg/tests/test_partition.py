import itertools
import math

import numpy as np
import pytest

from polymerlab.env import DisorderSpec, EnvironmentField, log_mgf
from polymerlab.errors import ParityError, WindowError
from polymerlab.partition import (conditional_density, endpoint_law,
                                  forward_partition, forward_totals,
                                  i_n_disorder_scan, i_n_statistic,
                                  reversed_partition, reversed_totals)
from polymerlab.walk import q_exact
from polymerlab._kernels import derive_seed

from oracles import brute_conditional, brute_forward, walk_paths


@pytest.fixture(scope="module")
def gauss_field():
    spec = DisorderSpec.gaussian(0.3)
    return EnvironmentField(spec=spec, seed=7, d=3, n_max=16,
                            window_lo=(-20,) * 3, window_hi=(20,) * 3)


@pytest.fixture(scope="module")
def zero_field():
    spec = DisorderSpec.gaussian(0.0)
    return EnvironmentField(spec=spec, seed=7, d=3, n_max=16,
                            window_lo=(-20,) * 3, window_hi=(20,) * 3)


def test_beta_zero_reduces_to_walk(zero_field):
    pf = forward_partition(zero_field, (0, 0, 0), 6)
    for site, w in pf.sites():
        assert w == q_exact(3, 6, site)  # bit-identical recursions
    assert pf.total == pytest.approx(1.0, abs=1e-12)


def test_one_step_expansion(gauss_field):
    spec = gauss_field.spec
    lam = log_mgf(spec, spec.beta)
    pf = forward_partition(gauss_field, (0, 0, 0), 1)
    nbrs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    for y in nbrs:
        expect = math.exp(spec.beta * gauss_field.eta(1, y) - lam) / 6.0
        assert pf.weight(y) == pytest.approx(expect, abs=1e-16)
    assert pf.weight((0, 0, 0)) == 0.0


def test_forward_matches_path_enumeration(gauss_field):
    lam = log_mgf(gauss_field.spec, gauss_field.spec.beta)
    brute, z = brute_forward(gauss_field, 4, lam)
    pf = forward_partition(gauss_field, (0, 0, 0), 4)
    assert pf.total == pytest.approx(z, abs=1e-12)
    for site, w in brute.items():
        assert pf.weight(site) == pytest.approx(w, abs=1e-12)


def test_forward_off_origin_and_start_time(gauss_field):
    lam = log_mgf(gauss_field.spec, gauss_field.spec.beta)
    brute, z = brute_forward(gauss_field, 3, lam, x0=(1, -1, 0))
    pf = forward_partition(gauss_field, (1, -1, 0), 3)
    assert pf.total == pytest.approx(z, abs=1e-12)
    # a shifted start time reads different environment slices
    pf_shift = forward_partition(gauss_field, (1, -1, 0), 3, start_time=5)
    assert pf_shift.total != pytest.approx(pf.total, abs=1e-6)


def test_markov_factorization(gauss_field):
    n, m = 8, 4
    pf_full = forward_partition(gauss_field, (0, 0, 0), n)
    pf_first = forward_partition(gauss_field, (0, 0, 0), m)
    target = (2, 0, 0)
    acc = 0.0
    for z_site, w in pf_first.sites():
        cont = forward_partition(gauss_field, z_site, n - m, start_time=m)
        acc += w * cont.weight(target)
    assert acc == pytest.approx(pf_full.weight(target), abs=1e-12)


def test_reversed_symmetry_identity(gauss_field):
    """sum_z P^z(segment over times n-l+1..n, ending at y) equals the
    time-reversed partition function from y at depth l, environmentwise."""
    n, l = 8, 3
    y = (1, 1, 0)
    lhs = 0.0
    for z in itertools.product(range(y[0] - l, y[0] + l + 1),
                               range(y[1] - l, y[1] + l + 1),
                               range(y[2] - l, y[2] + l + 1)):
        if sum(abs(c - yc) for c, yc in zip(z, y)) > l:
            continue
        seg = forward_partition(gauss_field, z, l, start_time=n - l)
        lhs += seg.weight(y)
    rev = reversed_partition(gauss_field, y, l, anchor=n)
    assert lhs == pytest.approx(rev.total, abs=1e-12)


def test_reversed_full_depth_identity(gauss_field):
    n = 6
    y = (0, 0, 0)
    lhs = 0.0
    for z in itertools.product(range(-n, n + 1), repeat=3):
        if sum(abs(c) for c in z) > n:
            continue
        seg = forward_partition(gauss_field, z, n)
        lhs += seg.weight(y)
    rev = reversed_partition(gauss_field, y, n, anchor=n)
    assert lhs == pytest.approx(rev.total, abs=1e-12)


def test_reversed_beta_zero(zero_field):
    rev = reversed_partition(zero_field, (1, 1, 0), 4, anchor=8)
    assert rev.total == pytest.approx(1.0, abs=1e-12)


def test_reversed_depth_one_is_anchor_factor(gauss_field):
    spec = gauss_field.spec
    lam = log_mgf(spec, spec.beta)
    y = (2, 0, 0)
    rev = reversed_partition(gauss_field, y, 1, anchor=8)
    assert rev.total == pytest.approx(
        math.exp(spec.beta * gauss_field.eta(8, y) - lam), abs=1e-15)


def test_adjoint_matches_per_site_reversed(gauss_field):
    lo, box = reversed_totals(gauss_field, anchor=10, l=4, center=(0, 0, 0), span=3)
    for y in [(0, 0, 0), (1, 1, 0), (-2, 0, 1), (0, -1, 0), (3, 0, 0)]:
        if sum(abs(c) for c in y) > 3:
            continue
        rv = reversed_partition(gauss_field, y, 4, anchor=10).total
        assert box[tuple(c - lo[i] for i, c in enumerate(y))] == pytest.approx(
            rv, abs=1e-12)


def test_conditional_density_beta_zero(zero_field):
    assert conditional_density(zero_field, (0, 0, 0), (1, 1, 0), 6) == 1.0
    assert conditional_density(zero_field, (0, 0, 0), (0, 0, 0), 8) == 1.0


def test_conditional_density_brute(gauss_field):
    lam = log_mgf(gauss_field.spec, gauss_field.spec.beta)
    y = (1, 1, 0)
    expect = brute_conditional(gauss_field, 4, y, lam)
    assert conditional_density(gauss_field, (0, 0, 0), y, 4) == pytest.approx(
        expect, abs=1e-12)


def test_conditional_density_parity_error(gauss_field):
    with pytest.raises(ParityError):
        conditional_density(gauss_field, (0, 0, 0), (1, 0, 0), 4)
    with pytest.raises(ParityError):
        conditional_density(gauss_field, (0, 0, 0), (6, 0, 0), 4)  # unreachable


def test_endpoint_law_normalized(gauss_field):
    mu = endpoint_law(gauss_field, (0, 0, 0), 8)
    assert mu.total == pytest.approx(1.0, abs=1e-12)
    assert np.all(mu.weights >= 0.0)


def test_window_too_small():
    spec = DisorderSpec.gaussian(0.3)
    f = EnvironmentField(spec=spec, seed=1, d=3, n_max=16,
                         window_lo=(-3,) * 3, window_hi=(3,) * 3)
    with pytest.raises(WindowError):
        forward_partition(f, (0, 0, 0), 5)
    with pytest.raises(WindowError):
        forward_partition(f, (0, 0, 0), 3, start_time=14)


def test_generic_dimension_forward_matches_d3_structure():
    # d=2 forward DP via the numpy fallback still normalizes at beta=0
    spec = DisorderSpec.gaussian(0.0)
    f = EnvironmentField(spec=spec, seed=2, d=2, n_max=6)
    pf = forward_partition(f, (0, 0), 5)
    assert pf.total == pytest.approx(1.0, abs=1e-12)


def test_partition_field_csv_round_trip(tmp_path, gauss_field):
    pf = forward_partition(gauss_field, (0, 0, 0), 3)
    path = tmp_path / "pf.csv"
    pf.to_csv(path)
    rows = path.read_text().strip().split("\n")
    assert rows[0] == "x0,x1,x2,weight"
    total = sum(float(r.split(",")[-1]) for r in rows[1:])
    assert total == pytest.approx(pf.total, rel=1e-14)


# ---------------------------------------------------------------------------
# disorder-mean normalizations (quenched MC)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("make_spec", [
    lambda b: DisorderSpec.gaussian(b),
    lambda b: DisorderSpec.bernoulli_pm(b),
    lambda b: DisorderSpec.exponential(b, rate=1.0),
])
@pytest.mark.parametrize("beta", [0.1, 0.3])
def test_partition_function_mean_one(make_spec, beta):
    spec = make_spec(beta)
    sums = {4: 0.0, 8: 0.0, 16: 0.0}
    sq = {4: 0.0, 8: 0.0, 16: 0.0}
    n_seeds = 10_000
    for i in range(n_seeds):
        f = EnvironmentField(spec=spec, seed=derive_seed(123, i), d=3, n_max=16)
        totals = forward_totals(f, (0, 0, 0), 16)
        for n in (4, 8, 16):
            sums[n] += totals[n]
            sq[n] += totals[n] ** 2
    for n in (4, 8, 16):
        mean = sums[n] / n_seeds
        se = math.sqrt(max(sq[n] / n_seeds - mean ** 2, 0.0) / n_seeds)
        assert abs(mean - 1.0) <= 3.0 * se, (spec.kind, beta, n, mean, se)


def test_conditional_density_mean_one():
    spec = DisorderSpec.gaussian(0.3)
    vals = []
    for i in range(10_000):
        f = EnvironmentField(spec=spec, seed=derive_seed(321, i), d=3, n_max=6)
        vals.append(conditional_density(f, (0, 0, 0), (1, 1, 0), 6))
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - 1.0) <= 3.0 * se


def test_full_depth_reversed_partition_mean_one():
    """l = n: the complete reversed normalized partition function has
    disorder mean 1, like its forward counterpart."""
    spec = DisorderSpec.gaussian(0.3)
    n = 8
    vals = np.empty(10_000)
    for i in range(vals.size):
        f = EnvironmentField(spec=spec, seed=derive_seed(654, i), d=3, n_max=n)
        vals[i] = reversed_partition(f, (0, 0, 0), n, anchor=n).total
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 1.0) <= 3.0 * se


# ---------------------------------------------------------------------------
# the endpoint collision statistic
# ---------------------------------------------------------------------------

def test_i_n_beta_zero_is_double_return(zero_field):
    # sum_x q^{(n)}(x)^2 = q^{(2n)}(0)
    for n in (4, 6, 8):
        assert i_n_statistic(zero_field, (0, 0, 0), n) == pytest.approx(
            q_exact(3, 2 * n, (0, 0, 0)), abs=1e-13)


def test_i_n_beta_zero_scaling(zero_field):
    limit = 2.0 * (3.0 / (4.0 * math.pi)) ** 1.5
    val = i_n_statistic(zero_field, (0, 0, 0), 16) * 16 ** 1.5
    assert val == pytest.approx(limit, rel=0.05)


def test_i_n_disorder_scan_rows():
    spec = DisorderSpec.gaussian(0.2)
    rows = i_n_disorder_scan(spec, 3, (8, 16), 50, master_seed=5, workers=1)
    assert [r["n"] for r in rows] == [8, 16]
    assert all(r["mean"] > 0.0 for r in rows)
    ratio = rows[0]["scaled"] / rows[1]["scaled"]
    assert 0.5 <= ratio <= 2.0


def test_endpoint_second_moment_diffusive():
    # mean_mu |w_n|^2 / n stays near 1 in the L2 region (20% tolerance)
    spec = DisorderSpec.gaussian(0.2)
    n = 40
    acc = 0.0
    n_seeds = 150
    for i in range(n_seeds):
        f = EnvironmentField(spec=spec, seed=derive_seed(777, i), d=3, n_max=n)
        mu = endpoint_law(f, (0, 0, 0), n)
        lo = mu.lo
        idx = np.indices(mu.weights.shape)
        r2 = sum((idx[k] + lo[k]) ** 2 for k in range(3))
        acc += float((mu.weights * r2).sum()) / n
    assert acc / n_seeds == pytest.approx(1.0, rel=0.2)
