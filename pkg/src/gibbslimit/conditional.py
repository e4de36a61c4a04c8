"""Exact conditional laws of X given X + Y = h (or X + Y in a shell).

These are the ground-truth oracles: nothing here uses an asymptotic form.
The bath enters through a conditional log-density ``L(y; x) = ln f_{Y|X}(y; x)``
with closed-form partials for the built-in couplings.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np
from scipy import special

from .density import Density1D, DiscretePMF, Gamma, LOG_ZERO, trapezoid_weights
from .errors import EmptyShell, OutOfSupport, ZeroEvent, ZeroMarginal
from .quadrature import adaptive_simpson, gauss_legendre

DEFAULT_POINTS = 2048


# ---------------------------------------------------------------- couplings


class BathConditional:
    """Conditional law of Y given X = x."""

    independent: bool = False

    def logpdf(self, y, x):
        raise NotImplementedError

    def dlog_dy(self, y, x):
        raise NotImplementedError

    def dlog_dx(self, y, x):
        raise NotImplementedError

    def y_domain(self, x: float) -> tuple[float, float]:
        """Natural support of Y given x (may be unbounded above)."""
        raise NotImplementedError

    def y_window(self, x: float) -> tuple[float, float]:
        """Finite interval holding all but a negligible part of the mass."""
        raise NotImplementedError


class IndependentBath(BathConditional):
    independent = True

    def __init__(self, f_y: Density1D):
        self.f_y = f_y

    def logpdf(self, y, x):
        y = np.asarray(y, dtype=float)
        return self.f_y.logpdf(y) + np.zeros_like(np.asarray(x, dtype=float))

    def dlog_dy(self, y, x):
        from .density import log_density_derivative

        return log_density_derivative(self.f_y, float(y))

    def dlog_dx(self, y, x):
        return 0.0

    def y_domain(self, x):
        a, b = self.f_y.support
        return (a, math.inf if self.f_y.tail_cut else b)

    def y_window(self, x):
        return self.f_y.support

    def __repr__(self):
        return f"IndependentBath({self.f_y.family or 'grid'})"


class ShiftCoupling(BathConditional):
    """``f_{Y|X}(y; x) = f_Y(y - c x)``."""

    def __init__(self, f_y: Density1D, c: float):
        self.f_y = f_y
        self.c = float(c)
        self.independent = self.c == 0.0

    def logpdf(self, y, x):
        return self.f_y.logpdf(np.asarray(y, dtype=float) - self.c * np.asarray(x, dtype=float))

    def dlog_dy(self, y, x):
        from .density import log_density_derivative

        return log_density_derivative(self.f_y, float(y) - self.c * float(x))

    def dlog_dx(self, y, x):
        return -self.c * self.dlog_dy(y, x)

    def y_domain(self, x):
        a, b = self.f_y.support
        s = self.c * x
        return (a + s, math.inf if self.f_y.tail_cut else b + s)

    def y_window(self, x):
        a, b = self.f_y.support
        return (a + self.c * x, b + self.c * x)


class GaussianCopulaGammas(BathConditional):
    """Gamma marginals for X and Y joined by a Gaussian copula.

    ``f_{Y|X}(y; x) = f_Y(y) c_rho(F_X(x), F_Y(y))``.  The partials blow up as
    ``x -> 0`` because ``Phi^{-1}(F_X(0)) = -inf``; callers asking for them at
    the boundary get non-finite values.
    """

    def __init__(self, x_law: Gamma, y_law: Gamma, rho: float):
        if not -1 < rho < 1:
            raise ValueError("copula correlation must lie in (-1, 1)")
        self.x_law, self.y_law, self.rho = x_law, y_law, float(rho)
        self.independent = self.rho == 0.0
        self._yd = Density1D.from_family(y_law)

    def _z(self, law: Gamma, v):
        u = special.gammainc(law.shape, np.asarray(v, dtype=float) / law.scale)
        return special.ndtri(np.clip(u, 0.0, 1.0))

    def logpdf(self, y, x):
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        r = self.rho
        z1, z2 = self._z(self.x_law, x), self._z(self.y_law, y)
        with np.errstate(invalid="ignore"):
            lc = -0.5 * math.log1p(-r * r) - (r * r * (z1**2 + z2**2) - 2 * r * z1 * z2) / (2 * (1 - r * r))
        out = self.y_law.logpdf(y) + lc
        return np.where(np.isnan(out), -np.inf, out)

    def _dz(self, law: Gamma, v, z):
        # dz/dv = f(v) / phi(z)
        return np.exp(law.logpdf(v) + 0.5 * z * z + 0.5 * math.log(2 * math.pi))

    def dlog_dy(self, y, x):
        r = self.rho
        z1, z2 = self._z(self.x_law, x), self._z(self.y_law, y)
        with np.errstate(invalid="ignore", over="ignore"):
            dc = -(r * r * z2 - r * z1) / (1 - r * r) * self._dz(self.y_law, y, z2)
        return float(self.y_law.dlogpdf(np.asarray(y, dtype=float)) + dc)

    def dlog_dx(self, y, x):
        r = self.rho
        z1, z2 = self._z(self.x_law, x), self._z(self.y_law, y)
        with np.errstate(invalid="ignore", over="ignore"):
            return float(-(r * r * z1 - r * z2) / (1 - r * r) * self._dz(self.x_law, x, z1))

    def y_domain(self, x):
        return (0.0, math.inf)

    def y_window(self, x):
        return self._yd.support


class FiniteDifferenceBath(BathConditional):
    """User-supplied ``L(y; x)`` with central-difference partials.

    Cross-differentiating a black box is fragile, so construction requires
    ``expert=True``.
    """

    STEP = 1e-5

    def __init__(self, logpdf: Callable, y_domain: tuple[float, float], y_window=None, expert: bool = False,
                 independent: bool = False):
        if not expert:
            raise ValueError("black-box couplings require expert=True")
        self._logpdf = logpdf
        self._domain = y_domain
        self._window = y_window or y_domain
        self.independent = independent

    def logpdf(self, y, x):
        return np.asarray(self._logpdf(np.asarray(y, dtype=float), np.asarray(x, dtype=float)), dtype=float)

    def dlog_dy(self, y, x):
        s = self.STEP
        return float((self.logpdf(y + s, x) - self.logpdf(y - s, x)) / (2 * s))

    def dlog_dx(self, y, x):
        if self.independent:
            return 0.0
        s = self.STEP
        if x - s < 0:
            return float((self.logpdf(y, x + s) - self.logpdf(y, x)) / s)
        return float((self.logpdf(y, x + s) - self.logpdf(y, x - s)) / (2 * s))

    def y_domain(self, x):
        return self._domain

    def y_window(self, x):
        return self._window


@dataclass(frozen=True, eq=False)
class JointLaw:
    marginal_x: Density1D
    conditional: BathConditional

    @property
    def independent(self) -> bool:
        return bool(self.conditional.independent)

    def with_marginal(self, f_x: Density1D) -> "JointLaw":
        return JointLaw(f_x, self.conditional)


def independent_joint(f_x: Density1D, f_y: Density1D) -> JointLaw:
    return JointLaw(f_x, IndependentBath(f_y))


# ---------------------------------------------------------------- results


@dataclass(frozen=True, eq=False)
class ConditionalLaw:
    law: Density1D | DiscretePMF
    h: float
    delta: float = 0.0
    log_evidence: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def density(self) -> Density1D:
        return self.law

    @property
    def pmf(self) -> DiscretePMF:
        return self.law

    def to_dict(self) -> dict[str, Any]:
        d = self.law.to_dict()
        d["h"] = self.h
        d["delta"] = self.delta
        return d


def _conditional_support(joint: JointLaw, h: float, upper: float) -> tuple[float, float]:
    a, b = joint.marginal_x.support
    lo, hi = max(a, 0.0), min(b, upper)
    if not lo < hi:
        raise OutOfSupport(f"level h={h} does not meet the support of X {joint.marginal_x.support}")
    return lo, hi


def exact_conditional_continuous(joint: JointLaw, h: float, points: int = DEFAULT_POINTS) -> ConditionalLaw:
    """Density of X given X + Y = h by Bayes' rule on a uniform grid.

    ``g(x) = f_X(x) f_{Y|X}(h - x; x) / f_H(h)`` with ``f_H(h)`` obtained by
    adaptive quadrature of the numerator.
    """
    if not h > 0:
        raise OutOfSupport("h must be positive")
    lo, hi = _conditional_support(joint, h, h)
    fx, cond = joint.marginal_x, joint.conditional

    def log_num(x):
        x = np.asarray(x, dtype=float)
        out = fx.logpdf(x) + cond.logpdf(h - x, x)
        return np.where(np.isnan(out), -np.inf, out)

    x = np.linspace(lo, hi, points)
    lv = log_num(x)
    finite = np.isfinite(lv)
    if not finite.any():
        raise ZeroMarginal(f"f_H({h}) vanishes on the grid")
    shift = float(lv[finite].max())
    peak = float(x[np.argmax(np.where(finite, lv, -np.inf))])
    mass = adaptive_simpson(
        lambda t: np.exp(log_num(t) - shift), lo, hi, breakpoints=(peak,), open_ends=True, initial=32
    )
    if not mass > 0:
        raise ZeroMarginal(f"f_H({h}) underflows")
    log_fh = shift + math.log(mass)
    dens = replace(Density1D.from_grid(x, lv - log_fh), norm_const=math.exp(min(log_fh, 709.0)))
    return ConditionalLaw(dens, h=h, delta=0.0, log_evidence=log_fh)


def shell_conditional(joint: JointLaw, h: float, delta: float, points: int = DEFAULT_POINTS) -> ConditionalLaw:
    """Density of X given ``h - delta/2 < X + Y <= h + delta/2``.

    For each grid point the inner integral of ``f_{Y|X}(.; x)`` over the
    strip is a composite Gauss-Legendre rule on the strip clipped to the
    bath's support window.
    """
    if not delta > 0:
        raise ValueError("delta must be positive (use exact_conditional_continuous for delta = 0)")
    top = h + delta / 2.0
    lo, hi = _conditional_support(joint, h, top)
    fx, cond = joint.marginal_x, joint.conditional
    x = np.linspace(lo, hi, points)

    ylo = np.empty_like(x)
    yhi = np.empty_like(x)
    for i, xi in enumerate(x):
        wa, wb = cond.y_window(float(xi))
        ylo[i] = max(h - xi - delta / 2.0, wa)
        yhi[i] = min(h - xi + delta / 2.0, wb)
    ok = yhi > ylo
    inner = np.zeros_like(x)
    if ok.any():
        xs = x[ok]

        def integrand(y):
            return np.exp(cond.logpdf(y, xs[:, None]))

        inner[ok] = gauss_legendre(integrand, ylo[ok], yhi[ok])
    with np.errstate(divide="ignore"):
        lv = fx.logpdf(x) + np.log(np.maximum(inner, 0.0))
    lv = np.where(np.isnan(lv), -np.inf, lv)
    finite = np.isfinite(lv) & (lv > LOG_ZERO)
    if not finite.any():
        raise EmptyShell(f"no mass in the shell ({h - delta / 2}, {h + delta / 2}]")
    shift = float(lv[finite].max())
    w = trapezoid_weights(points, x[1] - x[0])
    mass = float(np.dot(np.exp(lv - shift), w))
    if not mass > 0:
        raise EmptyShell("shell probability underflows")
    log_p = shift + math.log(mass)
    dens = Density1D.from_grid(x, lv - log_p)
    return ConditionalLaw(dens, h=h, delta=delta, log_evidence=log_p)


def exact_conditional_discrete(p_k: DiscretePMF, p_l_given_k: Callable, m: int) -> ConditionalLaw:
    """Pmf of K given K + L = m by enumeration over k = 0..m.

    ``p_l_given_k(l, k)`` takes integer arrays and returns probabilities.
    The arithmetic is done in log space, so extreme tails do not underflow.
    """
    if m < 0 or int(m) != m:
        raise ValueError("m must be a non-negative integer")
    m = int(m)
    k = np.arange(m + 1)
    prior = np.full(m + 1, -np.inf)
    n = min(m, p_k.n_max) + 1
    prior[:n] = p_k.logp[:n]
    with np.errstate(divide="ignore"):
        like = np.log(np.asarray(p_l_given_k(m - k, k), dtype=float))
    logw = prior + like
    logw = np.where(np.isnan(logw), -np.inf, logw)
    if not np.isfinite(logw).any():
        raise ZeroEvent(f"P(K + L = {m}) = 0")
    z = special.logsumexp(logw)
    return ConditionalLaw(DiscretePMF(np.exp(logw - z)), h=float(m), delta=0.0, log_evidence=float(z))

