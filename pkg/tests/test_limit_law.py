import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from gibbslimit import limit_law
from gibbslimit.conditional import JointLaw, ShiftCoupling, independent_joint
from gibbslimit.density import Density1D, Exponential, Gamma, Uniform, mean, scale_density
from gibbslimit.errors import BoundaryEvaluation, NoSolution


def fam(f):
    return Density1D.from_family(f)


def test_psi_gamma_bath_flat():
    joint = independent_joint(fam(Exponential(1.0)), fam(Gamma(3.0, 1.0)))
    assert limit_law.psi(joint, 2.0) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("lam", [0.3, 1.0, 4.0])
@pytest.mark.parametrize("h", [0.5, 3.0])
def test_psi_exponential_bath(lam, h):
    joint = independent_joint(fam(Exponential(1.0)), fam(Exponential(lam)))
    assert limit_law.psi(joint, h) == pytest.approx(-lam, abs=1e-14)


def test_psi_shift_coupling_chain_rule():
    joint = JointLaw(fam(Exponential(1.0)), ShiftCoupling(fam(Gamma(3.0, 1.0)), 0.5))
    assert limit_law.psi(joint, 2.0) == pytest.approx(0.0, abs=1e-14)
    # away from the flat point: (1 + c) g'(h), checked by finite differences of ln f_Y
    g = lambda y: math.log(y * y / 2) - y
    s = 1e-5
    fd = (g(1.0 + s) - g(1.0 - s)) / (2 * s)
    assert limit_law.psi(joint, 1.0) == pytest.approx(1.5 * fd, abs=1e-8)


def test_psi_outside_bath_support():
    joint = independent_joint(fam(Exponential(1.0)), fam(Uniform(0.0, 1.0)))
    with pytest.raises(BoundaryEvaluation):
        limit_law.psi(joint, 2.0)


def test_partition_function_cases():
    assert limit_law.partition_function(fam(Uniform(0.0, 1.0)), 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    z = limit_law.partition_function(fam(Exponential(1.0)), 1.0, 2.0)
    assert z == pytest.approx((1 - math.exp(-4)) / 2, abs=1e-12)
    ref, _ = integrate.quad(lambda x: x * math.exp(-1.5 * x), 0.0, 3.0, epsabs=1e-14)
    assert limit_law.partition_function(fam(Gamma(2.0, 1.0)), 0.5, 3.0) == pytest.approx(ref, abs=1e-9)


def test_asymptotic_flat_bath_is_renormalized_marginal():
    f_x = fam(Gamma(2.0, 1.0))
    joint = independent_joint(f_x, fam(Gamma(3.0, 1.0)))
    law = limit_law.asymptotic_conditional(f_x, joint, 2.0).density
    x = np.linspace(0.01, 1.99, 30)
    z = 1 - 3 * math.exp(-2)  # integral of x e^{-x} over [0, 2]
    assert law.pdf(x) == pytest.approx(x * np.exp(-x) / z, rel=1e-9)


def test_asymptotic_close_to_exact_for_small_system():
    base = fam(Gamma(2.0, 1.0))
    f_x = scale_density(base, 1.0 / 50)
    joint = independent_joint(f_x, fam(Gamma(3.0, 1.0)))
    kl, p = limit_law.kl_exact_vs_asymptotic(joint, 2.0)
    assert p == pytest.approx(0.0, abs=1e-14)
    assert 0 <= kl < 0.05


def test_convergence_study_decreasing():
    base = independent_joint(fam(Exponential(1.0)), fam(Gamma(5.0, 1.0)))
    seq = limit_law.SmallSystemSequence(base, [10, 30, 100, 300, 1000])
    assert seq.check_small()
    rep = limit_law.convergence_study(seq, 4.0)
    assert rep.strictly_decreasing()
    assert rep.slope <= -2.0 / 3.0 + 0.2
    assert set(rep.summary()) >= {"slope", "intercept", "residual"}


def test_convergence_needs_two_decades():
    base = independent_joint(fam(Exponential(1.0)), fam(Gamma(5.0, 1.0)))
    with pytest.raises(ValueError):
        limit_law.convergence_study(limit_law.SmallSystemSequence(base, [10, 20, 30, 40]), 4.0)


def test_fit_loglog_recovers_power():
    n = np.array([10, 100, 1000, 10000])
    slope, icept, resid = limit_law.fit_loglog(n, 3.0 * n**-0.75)
    assert slope == pytest.approx(-0.75, abs=1e-12)
    assert icept == pytest.approx(math.log(3.0), abs=1e-12)
    assert resid < 1e-12


# ---------------------------------------------------------------- counterexample


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.5, 2.5])
@pytest.mark.parametrize("n", [1, 7, 100])
def test_counterexample_constraints(gamma, n):
    c = limit_law.construct_counterexample(n, gamma=gamma)
    assert abs(c.mass_residual) <= 1e-8
    assert abs(c.first_moment_residual) <= 1e-8
    assert c.mean == pytest.approx(1.0 / n, abs=1e-8)
    assert c.beta == pytest.approx(gamma + 1.0)


def test_counterexample_distinct_laws_same_mean():
    a = limit_law.construct_counterexample(10, gamma=0.0)
    b = limit_law.construct_counterexample(10, gamma=1.0)
    assert mean(a.density) == pytest.approx(mean(b.density), abs=1e-8)
    kl_ab, kl_ba = limit_law.counterexample_separation(a, b)
    assert kl_ab > 0.1 and kl_ba > 0.1
    # gamma = 0 is Exp(rate n), gamma = 1 is Gamma(2, scale 1/(2n)): KL = 1 + euler_gamma - ln 4
    assert kl_ab == pytest.approx(1.0 + np.euler_gamma - math.log(4.0), abs=1e-7)


def test_counterexample_bad_parameters():
    with pytest.raises(NoSolution):
        limit_law.construct_counterexample(3, gamma=1.0, beta=5.0)
    with pytest.raises(NoSolution):
        limit_law.construct_counterexample(3, gamma=-2.0)
    with pytest.raises(NoSolution):
        limit_law.construct_counterexample(3)


@settings(max_examples=20, deadline=None)
@given(k=st.floats(1.5, 8.0), theta=st.floats(0.3, 3.0), h=st.floats(0.5, 10.0))
def test_psi_matches_gamma_log_slope(k, theta, h):
    joint = independent_joint(fam(Exponential(1.0)), fam(Gamma(k, theta)))
    assert limit_law.psi(joint, h) == pytest.approx((k - 1) / h - 1 / theta, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(x_shape=st.floats(1.0, 4.0), y_shape=st.floats(2.0, 10.0), h=st.floats(0.5, 6.0))
def test_asymptotic_log_ratio_is_linear(x_shape, y_shape, h):
    f_x = fam(Gamma(x_shape, 1.0))
    joint = independent_joint(f_x, fam(Gamma(y_shape, 1.0)))
    law = limit_law.asymptotic_conditional(f_x, joint, h)
    x = np.linspace(0.0, h, 200)[1:-1]
    ratio = law.density.logpdf(x) - f_x.logpdf(x)
    assert np.diff(ratio) / np.diff(x) == pytest.approx(np.full(x.size - 1, -law.meta["psi"]), abs=1e-8)


@settings(max_examples=10, deadline=None)
@given(n=st.sampled_from([20, 50, 200]), h=st.floats(2.0, 6.0))
def test_kl_between_exact_and_asymptotic_is_small_and_nonnegative(n, h):
    joint = independent_joint(scale_density(fam(Exponential(1.0)), 1.0 / n), fam(Gamma(5.0, 1.0)))
    kl, _ = limit_law.kl_exact_vs_asymptotic(joint, h)
    assert -1e-12 <= kl < 1e-3
