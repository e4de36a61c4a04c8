"""Thermodynamic corollaries of the canonical form.

Free energy from the exact partition integral versus its Legendre-transform
(maximum-term) evaluation, temperature-fluctuation inequalities for a bath
density, and the lower bound on KL divergence against a non-normalized
reference.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from .density import Density1D, integral, kl_divergence, neg_log_norm, normalize
from .errors import NoStationaryPoint, NonIntegrable, UndefinedAtZero
from .quadrature import adaptive_simpson, golden_section_max, trapezoid_weights

LOG_ZERO = -700.0


@dataclass(frozen=True, eq=False)
class ExtensiveEntropy:
    """``S(x) = V s(x / V)`` for an intensive entropy density ``s`` on ``(0, e_max]``."""

    s: Callable[[np.ndarray], np.ndarray]
    ds: Callable[[np.ndarray], np.ndarray]
    volume: float
    e_max: float = 1e6
    name: str = "custom"

    @classmethod
    def log(cls, c: float, volume: float, e_max: float = 1e6) -> "ExtensiveEntropy":
        """``s(e) = c ln e``."""
        if not c > 0:
            raise ValueError("c must be positive")
        return cls(lambda e: c * np.log(e), lambda e: c / np.asarray(e, dtype=float), volume, e_max, f"{c}*ln(e)")

    @classmethod
    def mixing(cls, volume: float, e_max: float = 1.0) -> "ExtensiveEntropy":
        """``s(e) = e - e ln e``; concave, ``s'(e) = -ln e``."""
        return cls(lambda e: e - e * np.log(e), lambda e: -np.log(e), volume, e_max, "e-e*ln(e)")

    def with_volume(self, volume: float) -> "ExtensiveEntropy":
        return ExtensiveEntropy(self.s, self.ds, volume, self.e_max, self.name)

    def __call__(self, x):
        v = self.volume
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = v * np.asarray(self.s(x / v), dtype=float)
        return np.where(x > 0, out, -np.inf)

    def derivative(self, x):
        return np.asarray(self.ds(np.asarray(x, dtype=float) / self.volume), dtype=float)

    def is_concave(self, points: int = 1001) -> bool:
        """Sampled second differences of ``s`` are ``<= 1e-8``."""
        hi = min(self.e_max, 1e3)
        e = np.linspace(hi * 1e-3, hi, points)
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = np.diff(np.asarray(self.s(e), dtype=float), 2)
        return bool(np.all(d2 <= 1e-8))


@dataclass
class FreeEnergyReport:
    beta: float
    volume: float
    f_exact: float
    f_legendre: float
    gap: float
    gap_per_volume: float
    e_star: float

    def to_dict(self) -> dict:
        return asdict(self)


def stationary_energy(entropy: ExtensiveEntropy, beta: float) -> float:
    """Root ``E*`` of ``dS/dE = beta`` by bisection on ``[1e-12 V, e_max V]``."""
    v = entropy.volume
    lo, hi = 1e-12 * v, entropy.e_max * v

    def g(x):
        return float(entropy.derivative(x)) - beta

    glo, ghi = g(lo), g(hi)
    if not (math.isfinite(glo) and math.isfinite(ghi)) or glo * ghi >= 0:
        raise NoStationaryPoint(
            f"beta={beta} is outside the range of s' on the bracket (s'={glo + beta:.6g}..{ghi + beta:.6g})"
        )
    return optimize.bisect(g, lo, hi, xtol=1e-300, rtol=1e-12, maxiter=2000)


def free_energy_legendre(entropy: ExtensiveEntropy, beta: float) -> float:
    """``E* - S(E*) / beta`` at ``dS/dE = beta``."""
    e = stationary_energy(entropy, beta)
    return float(e - entropy(e) / beta)


def log_partition(entropy: ExtensiveEntropy, beta: float, h: float) -> float:
    """``ln int_0^h exp(S(x) - beta x) dx`` with the maximum factored out."""
    top = min(h, entropy.e_max * entropy.volume)
    if not top > 0:
        raise NonIntegrable("empty integration range")

    def phi(x):
        return entropy(x) - beta * np.asarray(x, dtype=float)

    x_star = golden_section_max(lambda x: float(phi(x)), 0.0, top, 1e-12 * entropy.volume)
    peak = float(phi(x_star))
    if not math.isfinite(peak):
        # maximum at the left edge where S = -inf: scan a grid for a finite value
        xs = np.linspace(0.0, top, 4097)[1:]
        vals = phi(xs)
        x_star = float(xs[np.argmax(vals)])
        peak = float(np.max(vals))
    if not math.isfinite(peak):
        raise NonIntegrable("integrand is zero everywhere")

    def integrand(x):
        with np.errstate(invalid="ignore"):
            d = phi(x) - peak
        return np.exp(np.where(np.isfinite(d), np.maximum(d, LOG_ZERO), LOG_ZERO)) * (d > LOG_ZERO)

    # panel edges at multiples of the Laplace width around the peak
    curv = -float(entropy.derivative(x_star * (1 + 1e-6)) - entropy.derivative(x_star)) / (x_star * 1e-6) if x_star > 0 else 0.0
    width = 1.0 / math.sqrt(curv) if curv > 0 and math.isfinite(curv) else top / 64
    bps = [x_star + k * width for k in (-40, -20, -10, -5, -2, -1, 0, 1, 2, 5, 10, 20, 40)]
    val = adaptive_simpson(integrand, 0.0, top, tol=1e-10 * max(width, 1e-300), breakpoints=bps, initial=32, open_ends=True)
    if not val > 0:
        raise NonIntegrable("partition integral vanished")
    return peak + math.log(val)


def free_energy_exact(entropy: ExtensiveEntropy, beta: float, h: float | None = None) -> float:
    """``-beta^{-1} ln int_0^h exp(S(x) - beta x) dx``; ``h`` defaults to ``10 E*``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    if h is None:
        h = 10.0 * stationary_energy(entropy, beta)
    return -log_partition(entropy, beta, h) / beta


def free_energy_report(entropy: ExtensiveEntropy, beta: float, h: float | None = None) -> FreeEnergyReport:
    e_star = stationary_energy(entropy, beta)
    fe = free_energy_exact(entropy, beta, h)
    fl = float(e_star - entropy(e_star) / beta)
    gap = abs(fe - fl)
    return FreeEnergyReport(beta, entropy.volume, fe, fl, gap, gap / entropy.volume, e_star)


def volume_sweep(entropy: ExtensiveEntropy, beta: float, volumes) -> list[FreeEnergyReport]:
    return [free_energy_report(entropy.with_volume(v), beta) for v in volumes]


def sweep_csv_rows(reports: list[FreeEnergyReport]):
    yield ["V", "F_exact", "F_legendre", "gap", "gap_per_V"]
    for r in reports:
        yield [r.volume, r.f_exact, r.f_legendre, r.gap, r.gap_per_volume]


# ---------------------------------------------------------------- fluctuations


def _beta_fn(f: Density1D):
    if f.is_grid:
        grid = f.grid

        def beta(y):
            d = np.gradient(f.logvalues, grid, edge_order=2)
            return np.interp(y, grid, d)

        return beta
    return lambda y: np.asarray(f.family.dlogpdf(np.asarray(y, dtype=float)), dtype=float) - f.tilt


def _endpoint_exponent(g: Callable, a: float, scale: float) -> float:
    """Local power ``alpha`` in ``g(y) ~ (y - a)**alpha`` as ``y -> a+``."""
    e1, e2 = 1e-9 * scale, 1e-7 * scale
    g1, g2 = abs(float(g(np.array(a + e1)))), abs(float(g(np.array(a + e2))))
    if g1 == 0 or g2 == 0:
        return math.inf
    return math.log(g2 / g1) / math.log(e2 / e1)


def _expect(f: Density1D, fn: Callable, mass: float) -> float:
    a, b = f.support

    def integrand(y):
        with np.errstate(invalid="ignore", over="ignore"):
            out = f.pdf(y) * fn(y)
        return np.where(f.pdf(y) > 0, out, 0.0)

    alpha = _endpoint_exponent(integrand, a, b - a)
    if alpha <= -1.0 + 1e-4:
        return math.inf
    if f.is_grid:
        return float(np.dot(integrand(f.grid), trapezoid_weights(f.grid.size, f.dx))) / mass
    bps = f.family.breakpoints()
    if alpha < -1e-3 or abs(alpha - round(alpha)) > 1e-3:
        # y = a + L t**m turns (y - a)**alpha into t**(m (alpha + 1) - 1), smooth enough for Simpson.
        # Below y = a + 1e-30 L the local power law is integrated in closed form, since a
        # nearly divergent moment keeps real mass below the smallest representable y.
        width = b - a
        eps = 1e-30 * width
        g1, g2 = float(integrand(np.array(a + eps))), float(integrand(np.array(a + 2.0 * eps)))
        local = math.log(abs(g2 / g1)) / math.log(2.0) if g1 != 0 and g2 != 0 else alpha
        head = g1 * eps / (local + 1.0) if g1 != 0 else 0.0
        m = min(math.ceil(4.0 / (alpha + 1.0)), 400)

        def sub(t):
            return integrand(a + width * np.power(t, m)) * m * width * np.power(t, m - 1)

        t0 = 1e-30 ** (1.0 / m)
        tb = [((p - a) / width) ** (1.0 / m) for p in bps if a < p < b]
        return (head + adaptive_simpson(sub, t0, 1.0, breakpoints=tb, initial=64)) / mass
    return adaptive_simpson(integrand, a, b, breakpoints=bps, open_ends=True, initial=64) / mass


def fluctuation_bounds(f: Density1D) -> dict:
    """Both variance inequalities for ``Y ~ f`` and ``beta(y) = d ln f / dy``:
    ``var[Y] var[beta] >= (1 - f(0) E[Y])**2`` and ``E[Y^2] E[beta^2] >= 1``.

    Divergent moments are reported as ``inf`` (the inequality then holds
    trivially and ``finite`` is False).
    """
    a, b = f.support
    with np.errstate(divide="ignore", over="ignore"):
        f0 = float(f.pdf(np.array(0.0))) if a <= 0.0 else 0.0
        near = float(f.pdf(np.array(a + 1e-12 * (b - a))))
    if not math.isfinite(f0) or (a <= 0.0 and not near <= 1e6 * (f0 + 1.0)):
        raise UndefinedAtZero("f_Y(0) is not finite")
    beta = _beta_fn(f)
    mass = integral(f)
    ey = _expect(f, lambda y: y, mass)
    ey2 = _expect(f, lambda y: y * y, mass)
    var_y = _expect(f, lambda y: (y - ey) ** 2, mass)
    eb = _expect(f, beta, mass)
    eb2 = _expect(f, lambda y: beta(y) ** 2, mass)
    var_b = _expect(f, lambda y: (beta(y) - eb) ** 2, mass) if math.isfinite(eb) else math.inf
    lhs = var_y * var_b
    rhs = (1.0 - f0 * ey) ** 2
    second = ey2 * eb2
    finite = all(math.isfinite(v) for v in (ey2, eb2, var_b))
    report = {
        "var_y": var_y,
        "var_beta": var_b,
        "lhs": lhs,
        "rhs": rhs,
        "margin": lhs - rhs,
        "e_y2_e_beta2": second,
        "f0": f0,
        "mean_y": ey,
        "mean_beta": eb,
        "finite": finite,
    }
    report["holds"] = bool(lhs >= rhs - 1e-9 and second >= 1.0 - 1e-9)
    return report


# ---------------------------------------------------------------- KL bound


def kl_lower_bound_check(f: Density1D, g_tilde: Density1D) -> dict:
    """``int f ln(f/g) >= -ln int g`` for non-normalized ``g``.

    The slack equals ``KL(f || g / int g)``.
    """
    lhs = kl_divergence(f, g_tilde)
    rhs = neg_log_norm(g_tilde)
    slack = lhs - rhs
    return {
        "lhs": lhs,
        "rhs": rhs,
        "slack": slack,
        "kl_to_normalized": kl_divergence(f, normalize(g_tilde)),
        "holds": bool(slack >= -1e-9),
    }
