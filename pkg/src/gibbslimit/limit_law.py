"""Asymptotic canonical form of the conditional law and its convergence.

For a small component ``X_n`` and a bath ``Y``, the law of ``X_n`` given
``X_n + Y = h`` approaches ``f_{X_n}(x) exp(-psi(h) x) / Z(h)`` on ``[0, h]``,
with ``psi`` read off the bath's conditional log-density at ``(y=h, x=0)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .conditional import ConditionalLaw, JointLaw, exact_conditional_continuous
from .density import Density1D, PowerLaw, kl_divergence, mean, moment, normalize, scale_density, trapezoid_weights
from .errors import BoundaryEvaluation, NoSolution, NonIntegrable, SupportMismatch
from .quadrature import adaptive_simpson

KL_FLOOR = np.finfo(float).eps ** 2


def psi(joint: JointLaw, h: float) -> float:
    """Bath exponent ``[d/dy - d/dx] ln f_{Y|X}(y; x)`` at ``y = h, x = 0``."""
    lo, hi = joint.conditional.y_domain(0.0)
    if not lo < h < hi:
        raise BoundaryEvaluation(f"h={h} is not interior to the bath support ({lo}, {hi})")
    dy = joint.conditional.dlog_dy(h, 0.0)
    dx = 0.0 if joint.independent else joint.conditional.dlog_dx(h, 0.0)
    value = dy - dx
    if not math.isfinite(value):
        raise BoundaryEvaluation(f"bath log-density partials are not finite at (y={h}, x=0)")
    return float(value)


def _restricted(f_x: Density1D, h: float) -> Density1D:
    a, b = f_x.support
    if not a < h:
        raise NonIntegrable(f"support of X {f_x.support} does not meet [0, {h}]")
    if h >= b:
        return f_x
    if f_x.is_grid:
        return Density1D.from_function(f_x.logpdf, a, h, m=f_x.grid.size, log=True)
    return replace(f_x, support=(a, h), tail_cut=False)


def partition_function(f_x: Density1D, psi_value: float, h: float) -> float:
    """``Z = integral_0^h f_X(x) exp(-psi x) dx``."""
    if not h > 0:
        raise ValueError("h must be positive")
    d = _restricted(f_x, h)
    d = replace(d, tilt=d.tilt + psi_value) if not d.is_grid else _tilt_grid(d, psi_value)
    base = d._integrate_base()
    if not (math.isfinite(base) and base >= 0):
        raise NonIntegrable(f"partition integral is {base!r}")
    return math.exp(d.log_scale) * base


def _tilt_grid(d: Density1D, psi_value: float) -> Density1D:
    return replace(d, logvalues=d.logvalues - psi_value * d.grid)


def asymptotic_conditional(f_x: Density1D, joint: JointLaw, h: float) -> ConditionalLaw:
    """``Z(h)^{-1} f_X(x) exp(-psi(h) x)`` on ``[0, h]``, normalized."""
    p = psi(joint, h)
    d = _restricted(f_x, h)
    d = replace(d, tilt=d.tilt + p) if not d.is_grid else _tilt_grid(d, p)
    out = normalize(d)
    return ConditionalLaw(out, h=h, delta=0.0, log_evidence=math.log(out.norm_const), meta={"psi": p})


def discrete_kl(logp: np.ndarray, logq: np.ndarray, weights: np.ndarray) -> float:
    """KL between two grid laws, each renormalized under ``weights``.

    Works with the log-ratio relative to its value at the mode of ``q`` and
    uses ``expm1``/``log1p`` so that tiny divergences are not lost to
    cancellation between two O(1) normalizers.
    """
    logp = np.asarray(logp, dtype=float)
    logq = np.asarray(logq, dtype=float)
    pos_p = np.isfinite(logp)
    pos_q = np.isfinite(logq)
    if np.any(pos_p & ~pos_q):
        raise SupportMismatch("p has grid mass where q vanishes")
    lq = np.where(pos_q, logq, -np.inf)
    shift = lq[pos_q].max()
    q = weights * np.exp(lq - shift)
    q /= q.sum()
    ref = int(np.argmax(np.where(pos_p, q, -1.0)))
    d = np.full(logp.shape, -np.inf)
    d[pos_p] = logp[pos_p] - logq[pos_p]
    d = d - d[ref]
    em = np.where(pos_p, np.expm1(np.where(pos_p, d, 0.0)), -1.0)
    mq = float(np.dot(q, em))
    p = q * (1.0 + em) / (1.0 + mq)
    return float(np.dot(p[pos_p], d[pos_p]) - math.log1p(mq))


# ---------------------------------------------------------------- sequences


@dataclass(frozen=True, eq=False)
class SmallSystemSequence:
    """``X_n`` from a base joint law; default scaling ``X_n = X / n``.

    The bath conditional acts on the value of ``X_n``, so coupling strength
    does not grow with ``n``.
    """

    base: JointLaw
    ns: Sequence[int]
    scaling: Callable[[Density1D, int], Density1D] | None = None

    def marginal(self, n: int) -> Density1D:
        if self.scaling is not None:
            return self.scaling(self.base.marginal_x, n)
        return scale_density(self.base.marginal_x, 1.0 / n)

    def joint(self, n: int) -> JointLaw:
        return self.base.with_marginal(self.marginal(n))

    def check_small(self, c: float | None = None) -> bool:
        """``E[X_n] <= C/n`` on the n-list (``C`` defaults to ``2 E[X_1] + 1e-12``)."""
        means = {n: mean(self.marginal(n)) for n in self.ns}
        if c is None:
            c = 2.0 * mean(self.marginal(1)) + 1e-12
        return all(m <= c / n for n, m in means.items())


@dataclass
class ConvergenceReport:
    rows: list[tuple[int, float]]
    slope: float
    intercept: float
    residual: float
    psis: list[float] = field(default_factory=list)
    degenerate: list[int] = field(default_factory=list)

    @property
    def ns(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    @property
    def kls(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    def strictly_decreasing(self) -> bool:
        k = self.kls
        return bool(np.all(np.diff(k) < 0))

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "degenerate_n": list(self.degenerate),
        }


def fit_loglog(ns, values) -> tuple[float, float, float]:
    """OLS fit of ``ln value = slope ln n + intercept``; returns residual norm too."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    a = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    return float(coef[0]), float(coef[1]), float(np.linalg.norm(resid))


def kl_exact_vs_asymptotic(joint: JointLaw, h: float, points: int = 2048) -> tuple[float, float]:
    """KL(exact || asymptotic) on the exact law's grid, and the psi used."""
    exact = exact_conditional_continuous(joint, h, points=points)
    asym = asymptotic_conditional(joint.marginal_x, joint, h)
    g = exact.density
    w = trapezoid_weights(g.grid.size, g.dx)
    return discrete_kl(g.logvalues, asym.density.logpdf(g.grid), w), asym.meta["psi"]


def convergence_study(seq: SmallSystemSequence, h: float, points: int = 2048) -> ConvergenceReport:
    """KL between exact and asymptotic conditionals along the sequence, with a
    log-log slope fit.  Non-positive KL values are floored and flagged."""
    ns = sorted(int(n) for n in seq.ns)
    if len(ns) < 4 or ns[-1] / ns[0] < 100:
        raise ValueError("need >= 4 values of n spanning at least two decades")
    rows, psis, degenerate = [], [], []
    for n in ns:
        kl, p = kl_exact_vs_asymptotic(seq.joint(n), h, points)
        if kl <= KL_FLOOR:
            degenerate.append(n)
            kl = KL_FLOOR
        rows.append((n, kl))
        psis.append(p)
    slope, intercept, resid = fit_loglog(ns, [r[1] for r in rows])
    return ConvergenceReport(rows, slope, intercept, resid, psis, degenerate)


# ---------------------------------------------------------------- counterexample


@dataclass(frozen=True, eq=False)
class CounterexampleFamily:
    """``f(x) = n Omega(n x) exp(-n beta x)`` with ``Omega(x) = c1 x**gamma``."""

    c1: float
    gamma: float
    beta: float
    n: int
    density: Density1D
    mass_residual: float
    first_moment_residual: float
    mean: float

    @property
    def omega(self) -> Callable:
        return lambda x: self.c1 * np.asarray(x, dtype=float) ** self.gamma


def _power_exp_integral(c1: float, gamma: float, beta: float, k: int) -> float:
    """``integral_0^inf x**k c1 x**gamma exp(-beta x) dx`` by quadrature.

    Substituting ``x = t**(1/(gamma+1))`` removes the endpoint singularity for
    ``-1 < gamma < 0``.
    """
    a = gamma + 1.0
    if gamma >= 0:
        d = Density1D.from_family(PowerLaw(gamma, math.inf, c1), tilt=beta)
        return moment(d, k)

    def g(t):
        x = np.power(t, 1.0 / a)
        return c1 * np.exp(-beta * x) * x**k / a

    upper = (40.0 / beta) ** a
    return adaptive_simpson(g, 0.0, upper, initial=64)


def construct_counterexample(n: int, gamma: float | None = None, beta: float | None = None) -> CounterexampleFamily:
    """Solve ``int Omega e^{-beta x} = int x Omega e^{-beta x} = 1`` within the
    family ``Omega = c1 x**gamma`` and build the n-th density.

    Either ``gamma`` or ``beta`` may be given (the other follows from
    ``beta = gamma + 1``); giving both requires them to be consistent.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    if gamma is None and beta is None:
        raise NoSolution("need gamma or beta")
    if gamma is None:
        gamma = beta - 1.0
    if beta is None:
        beta = gamma + 1.0
    if not gamma > -1 or not beta > 0:
        raise NoSolution(f"no power-law Omega with gamma={gamma}, beta={beta}")
    if abs(beta - (gamma + 1.0)) > 1e-12 * max(1.0, beta):
        raise NoSolution(f"constraints force beta = gamma + 1, got beta={beta}, gamma={gamma}")
    c1 = math.exp((gamma + 1.0) * math.log(beta) - special.gammaln(gamma + 1.0))
    r0 = _power_exp_integral(c1, gamma, beta, 0) - 1.0
    r1 = _power_exp_integral(c1, gamma, beta, 1) - 1.0
    # n Omega(n x) e^{-n beta x} = (n c1 n^gamma) x^gamma e^{-n beta x}
    fam = PowerLaw(gamma, math.inf, n * c1 * n**gamma)
    dens = Density1D.from_family(fam, tilt=n * beta)
    m = _power_exp_integral(n * c1 * n**gamma, gamma, n * beta, 1)
    return CounterexampleFamily(c1, gamma, beta, n, dens, r0, r1, m)


def counterexample_separation(a: CounterexampleFamily, b: CounterexampleFamily) -> tuple[float, float]:
    """KL in both directions between two constructed densities."""
    return kl_divergence(a.density, b.density), kl_divergence(b.density, a.density)
