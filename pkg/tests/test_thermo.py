import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from gibbslimit import thermo
from gibbslimit.density import Density1D, Exponential, Gamma, normalize
from gibbslimit.errors import NoStationaryPoint, UndefinedAtZero
from gibbslimit.experiments import _rescale


def fam(f):
    return Density1D.from_family(f)


def constant_entropy(c=0.0, volume=1.0):
    return thermo.ExtensiveEntropy(lambda e: np.full_like(e, c), lambda e: np.zeros_like(e), volume, name="const")


def log_oracle(c, volume, beta, h=None):
    # int_0^h (x/V)^{cV} e^{-beta x} dx = V^{-cV} Gamma(cV + 1) P(cV + 1, beta h) beta^{-(cV + 1)}
    a = c * volume
    if h is None:
        h = 10.0 * a / beta
    log_z = -a * math.log(volume) + special.gammaln(a + 1) + math.log(special.gammainc(a + 1, beta * h))
    return -(log_z - (a + 1) * math.log(beta)) / beta


# ---------------------------------------------------------------- free energy


@pytest.mark.parametrize("beta", [0.5, 1.0, 3.0])
def test_constant_entropy_free_energy(beta):
    # Z = int_0^h e^{-beta x} dx -> 1 / beta
    f = thermo.free_energy_exact(constant_entropy(), beta, h=80.0 / beta)
    assert f == pytest.approx(math.log(beta) / beta, abs=1e-10)


def test_adding_a_constant_shifts_free_energy():
    beta, c = 2.0, 0.7
    base = thermo.free_energy_exact(constant_entropy(), beta, h=40.0)
    shifted = thermo.free_energy_exact(constant_entropy(c), beta, h=40.0)
    assert shifted == pytest.approx(base - c / beta, abs=1e-10)


@pytest.mark.parametrize("beta", [0.5, 2.0])
def test_log_entropy_unit_volume(beta):
    # s = ln e: Z = Gamma(2) / beta^2, so F = (2 / beta) ln beta
    f = thermo.free_energy_exact(thermo.ExtensiveEntropy.log(1.0, 1.0), beta, h=60.0 / beta)
    assert f == pytest.approx(2.0 * math.log(beta) / beta, abs=1e-8)


@pytest.mark.parametrize("volume", [1.0, 10.0, 1000.0])
def test_log_entropy_matches_gamma_function(volume):
    ent = thermo.ExtensiveEntropy.log(1.5, volume)
    f = thermo.free_energy_exact(ent, 1.0)
    assert f == pytest.approx(log_oracle(1.5, volume, 1.0), rel=1e-8)


def test_legendre_closed_form():
    # s = c ln e: E* = cV / beta and F = E* - cV ln(c / beta) / beta
    c, v, beta = 1.5, 100.0, 2.0
    ent = thermo.ExtensiveEntropy.log(c, v)
    assert thermo.stationary_energy(ent, beta) == pytest.approx(c * v / beta, rel=1e-10)
    expected = c * v / beta - c * v * math.log(c / beta) / beta
    assert thermo.free_energy_legendre(ent, beta) == pytest.approx(expected, rel=1e-10)


def test_mixing_entropy_legendre():
    # s' = -ln e, so e* = e^{-beta} and F = -V e^{-beta} / beta
    ent = thermo.ExtensiveEntropy.mixing(50.0)
    for beta in (0.5, 2.0):
        assert thermo.free_energy_legendre(ent, beta) == pytest.approx(-50.0 * math.exp(-beta) / beta, rel=1e-9)
    assert ent.is_concave()


def test_gap_per_volume_shrinks():
    reps = thermo.volume_sweep(thermo.ExtensiveEntropy.log(1.5, 1.0), 1.0, [10.0, 100.0, 1000.0])
    gpv = [r.gap_per_volume for r in reps]
    assert gpv[0] > gpv[1] > gpv[2]
    # the gap grows like ln V / 2 (Stirling), so gap / V ~ ln V / (2V)
    assert reps[-1].gap == pytest.approx(0.5 * math.log(2 * math.pi * 1.5 * 1000.0), rel=1e-3)
    rows = list(thermo.sweep_csv_rows(reps))
    assert rows[0][0] == "V" and len(rows) == 4


def test_no_stationary_point():
    with pytest.raises(NoStationaryPoint):
        thermo.stationary_energy(thermo.ExtensiveEntropy.log(1.0, 1.0, e_max=10.0), 1e-3)
    with pytest.raises(NoStationaryPoint):
        thermo.free_energy_report(thermo.ExtensiveEntropy.mixing(1.0), -1.0)


def test_nonpositive_beta():
    with pytest.raises(ValueError):
        thermo.free_energy_exact(constant_entropy(), 0.0, h=1.0)
    with pytest.raises(ValueError):
        thermo.ExtensiveEntropy.log(0.0, 1.0)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(0.2, 4.0), beta=st.floats(0.2, 5.0), shift=st.floats(-5.0, 5.0))
def test_log_entropy_shift_property(c, beta, shift):
    ent = thermo.ExtensiveEntropy.log(c, 1.0)
    moved = thermo.ExtensiveEntropy(lambda e: c * np.log(e) + shift, ent.ds, 1.0, ent.e_max)
    h = 10.0 * thermo.stationary_energy(ent, beta)
    assert thermo.free_energy_exact(moved, beta, h) == pytest.approx(
        thermo.free_energy_exact(ent, beta, h) - shift / beta, abs=1e-9
    )
    assert thermo.free_energy_exact(ent, beta) == pytest.approx(log_oracle(c, 1.0, beta), rel=1e-6, abs=1e-9)


# ---------------------------------------------------------------- fluctuations


@pytest.mark.parametrize("lam", [0.5, 1.0, 3.0])
def test_exponential_saturates(lam):
    r = thermo.fluctuation_bounds(fam(Exponential(lam)))
    assert abs(r["lhs"]) <= 1e-12 and abs(r["rhs"]) <= 1e-12
    assert r["e_y2_e_beta2"] == pytest.approx(2.0, abs=1e-9)
    assert r["holds"] and r["finite"]


@pytest.mark.parametrize("k", [3.0, 5.0])
@pytest.mark.parametrize("theta", [0.5, 2.0])
def test_gamma_closed_forms(k, theta):
    # var Y = k theta^2, var beta = 1 / ((k - 2) theta^2), E beta = 0
    r = thermo.fluctuation_bounds(fam(Gamma(k, theta)))
    assert r["f0"] == 0.0
    assert r["lhs"] == pytest.approx(k / (k - 2), rel=1e-7)
    assert r["rhs"] == pytest.approx(1.0, abs=1e-12)
    assert r["mean_beta"] == pytest.approx(0.0, abs=1e-7)
    assert r["e_y2_e_beta2"] == pytest.approx(k * (k + 1) / (k - 2), rel=1e-7)


def test_gamma_two_has_divergent_beta_variance():
    r = thermo.fluctuation_bounds(fam(Gamma(2.0, 1.0)))
    assert not r["finite"]
    assert math.isinf(r["var_beta"])
    assert r["holds"]


def test_shape_below_one_is_undefined():
    with pytest.raises(UndefinedAtZero):
        thermo.fluctuation_bounds(fam(Gamma(0.5, 1.0)))


@settings(max_examples=15, deadline=None)
@given(k=st.floats(2.01, 9.0), theta=st.floats(0.3, 3.0))
def test_gamma_fluctuation_property(k, theta):
    r = thermo.fluctuation_bounds(fam(Gamma(k, theta)))
    assert r["holds"]
    assert r["margin"] == pytest.approx(k / (k - 2) - 1.0, rel=1e-6)


# ---------------------------------------------------------------- KL bound


def test_kl_bound_gamma_against_scaled_exponential():
    # f = y e^{-y}, g = 3 e^{-y}: lhs = digamma(2) - ln 3, rhs = -ln 3
    r = thermo.kl_lower_bound_check(fam(Gamma(2.0, 1.0)), _rescale(fam(Exponential(1.0)), 3.0))
    assert r["rhs"] == pytest.approx(-math.log(3.0), abs=1e-10)
    assert r["lhs"] == pytest.approx(special.digamma(2.0) - math.log(3.0), abs=1e-7)
    assert r["slack"] == pytest.approx(r["kl_to_normalized"], abs=1e-9)
    assert r["holds"]


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(0.3, 4.0), scale=st.floats(-3.0, 3.0))
def test_kl_bound_equality_when_proportional(lam, scale):
    g = _rescale(fam(Exponential(lam)), math.exp(scale))
    r = thermo.kl_lower_bound_check(normalize(g), g)
    assert abs(r["slack"]) <= 1e-8
    assert r["rhs"] == pytest.approx(-scale, abs=1e-8)
