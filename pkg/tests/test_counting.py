import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gibbslimit import counting
from gibbslimit.density import DiscretePMF, pmf_total_variation
from gibbslimit.errors import ExtinctionBeforeStationarity, ZeroMass


# ---------------------------------------------------------------- mu_n


def test_mu_poisson_bath_at_rate_is_zero():
    pair = counting.CountingPair(counting.poisson_pmf(2.0, 10), counting.PoissonBath(3.0))
    for n in (100, 1000, 10000):
        assert abs(counting.mu_n(pair, 3.0, n)) < 2.0 / n


def test_mu_poisson_bath_at_rate_times_e():
    # conditioning at h = lambda e tilts by e^{mu} = h / lambda
    pair = counting.CountingPair(counting.poisson_pmf(2.0, 10), counting.PoissonBath(3.0))
    mu, info = counting.mu_n(pair, 3.0 * math.e, 1000, full=True)
    assert mu == pytest.approx(1.0, abs=1e-3)
    assert info["m"] == round(1000 * 3.0 * math.e)
    assert not info["one_sided_y"]


def test_mu_binomial_bath_at_mode():
    pair = counting.CountingPair(counting.poisson_pmf(1.0, 5), counting.BinomialBath(0.3))
    for n in (100, 1000):
        assert abs(counting.mu_n(pair, 0.3, n)) < 2.0 / n


def test_mu_edge_is_one_sided():
    pair = counting.CountingPair(counting.poisson_pmf(1.0, 5), counting.PoissonBath(1.0))
    _, info = counting.mu_n(pair, 0.0, 10, full=True)
    assert info["one_sided_y"]


def test_mu_zero_mass():
    pair = counting.CountingPair(counting.poisson_pmf(1.0, 5), counting.BinomialBath(0.3))
    with pytest.raises(ZeroMass):
        counting.mu_n(pair, 2.0, 10)


def test_mu_coupled_bath_uses_x_partial():
    # L | K=k ~ Poisson(n lam + c k): the x-partial adds ln(1 + c/(n lam)) ~ c/(n lam)
    n, lam, c = 1000, 2.0, 5.0
    bath = counting.CoupledBath(lambda l, n_, k: stats.poisson.logpmf(l, n_ * lam + c * k), lambda n_: n_ * lam)
    pair = counting.CountingPair(counting.poisson_pmf(1.0, 10), bath)
    mu, info = counting.mu_n(pair, lam, n, full=True)
    m = n * lam
    expected_dx = stats.poisson.logpmf(m, m + c) - stats.poisson.logpmf(m, m)
    assert info["dx"] == pytest.approx(expected_dx, abs=1e-12)
    assert mu == pytest.approx(info["dx"] - info["dy"], abs=1e-15)


def test_convolution_bath_matches_poisson():
    base = counting.poisson_pmf(0.5, 40)
    bath = counting.ConvolutionBath(base)
    l = np.arange(0, 40)
    assert np.exp(bath.logpmf(l, 20)) == pytest.approx(stats.poisson.pmf(l, 10.0), abs=1e-12)


# ---------------------------------------------------------------- Q_n and the tilted pmf


def test_q_zero_tilt_is_cdf():
    p = counting.poisson_pmf(3.0, 50)
    assert counting.q_n(p, 0.0, 4) == pytest.approx(stats.poisson.cdf(4, 3.0), abs=1e-14)


def test_q_point_mass():
    p = DiscretePMF([1.0, 0.0, 0.0])
    for mu in (-3.0, 0.0, 5.0):
        assert counting.q_n(p, mu, 2) == 1.0


def test_q_against_extended_precision():
    m, lam = 60, 7.5
    prior = counting.inverse_factorial_prior(m)
    k = np.arange(m + 1, dtype=np.longdouble)
    w = np.exp(np.log(np.asarray(prior.p, dtype=np.longdouble)) + np.longdouble(math.log(lam)) * k)
    assert counting.log_q_n(prior, math.log(lam), m) == pytest.approx(float(np.log(w.sum())), abs=1e-13)


@pytest.mark.parametrize("lam", [0.1, 1.0, 4.0, 15.0])
def test_inverse_factorial_tilt_is_truncated_poisson(lam):
    m = 25
    law = counting.asymptotic_conditional_pmf(counting.inverse_factorial_prior(m), math.log(lam), m)
    ref = stats.poisson.pmf(np.arange(m + 1), lam)
    assert np.max(np.abs(law.p - ref / ref.sum())) < 1e-12


def test_zero_tilt_is_renormalized_truncation():
    p = counting.poisson_pmf(3.0, 50)
    law = counting.asymptotic_conditional_pmf(p, 0.0, 5)
    assert law.p == pytest.approx(p.p[:6] / p.p[:6].sum(), abs=1e-15)


def test_exact_is_binomial_and_tilted_close():
    n, a, lam = 1000, 2.0, 3.0
    m = int(a + n * lam)
    pair = counting.CountingPair(counting.poisson_pmf(a, m), counting.PoissonBath(lam))
    exact = pair.exact_conditional(n, m).pmf
    binom = DiscretePMF(stats.binom.pmf(np.arange(m + 1), m, a / (a + n * lam)))
    assert pmf_total_variation(exact, binom) < 1e-12
    tilted = counting.asymptotic_conditional_pmf(pair.p_k, counting.mu_n(pair, m / n, n), m)
    assert pmf_total_variation(exact, tilted) < 1.0 / n


@settings(max_examples=30, deadline=None)
@given(mu=st.floats(-4.0, 4.0), lam=st.floats(0.2, 6.0), m=st.integers(1, 60))
def test_tilt_symmetry(mu, lam, m):
    # tilting by mu then by -mu gives back the truncated prior
    p = counting.poisson_pmf(lam, m)
    up = counting.asymptotic_conditional_pmf(p, mu, m)
    back = counting.asymptotic_conditional_pmf(up, -mu, m)
    assert np.max(np.abs(back.p - p.p / p.p.sum())) < 1e-10
    # the tilted Poisson(lam) prior is truncated Poisson(lam e^{mu})
    ref = stats.poisson.pmf(np.arange(m + 1), lam * math.exp(mu))
    assert np.max(np.abs(up.p - ref / ref.sum())) < 1e-10


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.2, 5.0), lam=st.floats(0.2, 5.0), n=st.integers(1, 50), extra=st.integers(0, 20))
def test_poisson_splitting_enumeration(a, lam, n, extra):
    m = min(200, int(n * lam) + extra)
    pair = counting.CountingPair(counting.poisson_pmf(a, m), counting.PoissonBath(lam))
    exact = pair.exact_conditional(n, m).pmf
    ref = stats.binom.pmf(np.arange(m + 1), m, a / (a + n * lam))
    assert np.max(np.abs(exact.p - ref)) < 1e-10


# ---------------------------------------------------------------- spatial counts


def test_spatial_counts_close_to_poisson():
    regions = counting.RegionPair(1e-3, 1.0, 10000)
    emp = counting.spatial_poisson_counts(regions, 100_000, seed=3)
    k = np.arange(emp.n_max + 1)
    ref = stats.poisson.pmf(k, 10.0)
    tv = 0.5 * (np.abs(emp.p - ref).sum() + 1.0 - ref.sum())
    assert tv < 0.01
    # mean within 3 standard errors of N |B|/|D|
    se = math.sqrt(10000 * 1e-3 * (1 - 1e-3) / 100_000)
    assert abs(emp.mean() - 10.0) < 3 * se


def test_spatial_counts_edge_cases():
    full = counting.spatial_poisson_counts(counting.RegionPair(1.0, 1.0, 7, enforce_small=False), 100, seed=1)
    assert full.p[7] == 1.0
    empty = counting.spatial_poisson_counts(counting.RegionPair(0.0, 1.0, 7, enforce_small=False), 100, seed=1)
    assert empty.p[0] == 1.0


def test_spatial_counts_worker_independent():
    regions = counting.RegionPair(0.01, 1.0, 200)
    a = counting.spatial_poisson_counts(regions, 5000, seed=11, workers=1, draws_per_chunk=100_000)
    b = counting.spatial_poisson_counts(regions, 5000, seed=11, workers=2, draws_per_chunk=100_000)
    assert np.array_equal(a.p, b.p)


def test_region_pair_validation():
    with pytest.raises(ValueError):
        counting.RegionPair(0.5, 1.0, 10)
    with pytest.raises(ValueError):
        counting.RegionPair(2.0, 1.0, 10, enforce_small=False)


# ---------------------------------------------------------------- Gibbs paradox


def test_gibbs_n100_nearly_coincide():
    rep = counting.gibbs_paradox_demo(counting.RegionPair(1.0, 100.0, 100))
    assert 0 < rep["kl"] < 0.01
    assert np.dot(np.arange(101), rep["law_i"]) == pytest.approx(1.0, abs=1e-10)


def test_gibbs_single_particle_is_bernoulli():
    rep = counting.gibbs_paradox_demo(counting.RegionPair(0.2, 1.0, 1, enforce_small=False))
    assert rep["law_i"] == pytest.approx([0.8, 0.2], abs=1e-14)
    assert rep["law_ii"] == pytest.approx([0.8, 0.2], abs=1e-14)
    assert abs(rep["kl"]) <= 1e-12


def test_gibbs_four_particles_half():
    law = counting.distinguishable_law(4, 0.5)
    assert law.p.tolist() == [1 / 16, 4 / 16, 6 / 16, 4 / 16, 1 / 16]


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 40), f=st.floats(0.01, 0.99))
def test_indistinguishable_law_has_target_mean(n, f):
    law, mu = counting.indistinguishable_law(n, f)
    assert law.mean() == pytest.approx(n * f, abs=1e-9)
    assert pmf_total_variation(counting.distinguishable_law(n, f), counting.binomial_pmf(n, f)) < 1e-12


# ---------------------------------------------------------------- colonies


def _model(**kw):
    base = dict(birth_small=25.0, birth_large=1.0, cap_small=20.0, cap_large=1000.0, migrate_out=0.05, migrate_in=0.001)
    base.update(kw)
    return counting.ColonyModel(**base)


def test_colony_fixed_point_at_capacities():
    k, l = _model().fixed_point()
    assert k == pytest.approx(20.0, rel=1e-6)
    assert l == pytest.approx(1000.0, rel=1e-6)


def test_colony_size_ratio_enforced():
    with pytest.raises(ValueError):
        _model(cap_small=200.0)


@pytest.mark.slow
def test_colony_tilted_prediction():
    res = counting.colony_simulation(_model(), 4000.0, seed=1)
    assert res.tv < 0.05
    assert res.target == pytest.approx(1020, abs=5)


def test_colony_zero_migration_independent():
    res = counting.colony_simulation(_model(migrate_out=0.0, migrate_in=0.0), 1000.0, seed=2)
    assert abs(res.mu) < 0.05
    assert res.tv < 0.05
    assert res.meta["tv_marginal"] < 0.06


def test_colony_huge_death_rate():
    res = counting.colony_simulation(_model(death_small=1e6), 200.0, seed=3)
    assert res.conditional.p[0] > 0.99


def test_colony_extinction_reported():
    model = _model(birth_small=1e-6, birth_large=1e-6, migrate_out=0.0, migrate_in=0.0, cap_large=100.0,
                   cap_small=2.0, death_small=50.0, death_large=50.0)
    with pytest.raises(ExtinctionBeforeStationarity) as info:
        counting.colony_simulation(model, 1000.0, seed=4)
    partial = getattr(info.value, "partial", None)
    assert partial is None or partial.extinct
