"""One-dimensional densities and pmfs on non-negative supports.

A :class:`Density1D` is either an analytic family (optionally rescaled and
exponentially tilted) or a uniform grid of log-density values.  Analytic
densities are integrated by adaptive Simpson, grids by the trapezoid rule.

The represented function is::

    exp(log_scale) * base(x) * exp(-tilt * x)    on support [a, b]

where ``base`` is the family pdf.  Keeping ``log_scale`` out of every
integrand makes normalization exactly invariant to positive rescaling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, ClassVar

import numpy as np
from scipy import special

from .errors import NonIntegrable, OutOfSupport, SupportMismatch, ZeroDensity
from .quadrature import ABS_TOL, adaptive_simpson, trapezoid_weights

TAIL_RATIO = 1e-16
LOG_ZERO = -700.0  # densities below exp(-700) are exact zeros


# ---------------------------------------------------------------- families


class Family:
    """Analytic density family on its natural domain."""

    name: ClassVar[str] = ""

    def domain(self) -> tuple[float, float]:
        raise NotImplementedError

    def logpdf(self, x):
        raise NotImplementedError

    def dlogpdf(self, x):
        raise NotImplementedError

    def params(self) -> dict[str, float]:
        raise NotImplementedError

    def scaled(self, factor: float) -> "Family":
        """Family of ``factor * X``."""
        raise NotImplementedError

    def breakpoints(self) -> tuple[float, ...]:
        return ()

    def _inside(self, x):
        lo, hi = self.domain()
        return (x >= lo) & (x <= hi)


@dataclass(frozen=True)
class Exponential(Family):
    rate: float
    name: ClassVar[str] = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("Exponential rate must be positive")

    def domain(self):
        return (0.0, math.inf)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, math.log(self.rate) - self.rate * x, -np.inf)

    def dlogpdf(self, x):
        return np.full_like(np.asarray(x, dtype=float), -self.rate)

    def params(self):
        return {"rate": self.rate}

    def scaled(self, factor):
        return Exponential(self.rate / factor)


@dataclass(frozen=True)
class Gamma(Family):
    shape: float
    scale: float = 1.0
    name: ClassVar[str] = "gamma"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("Gamma shape and scale must be positive")

    def domain(self):
        return (0.0, math.inf)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        k, th = self.shape, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            out = special.xlogy(k - 1.0, x) - x / th - special.gammaln(k) - k * math.log(th)
        if k == 1.0:
            out = np.where(x >= 0, out, -np.inf)
        else:
            out = np.where(x > 0, out, np.where(x == 0, (-np.inf if k > 1 else np.inf), -np.inf))
        return out

    def dlogpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return (self.shape - 1.0) / x - 1.0 / self.scale

    def params(self):
        return {"shape": self.shape, "scale": self.scale}

    def scaled(self, factor):
        return Gamma(self.shape, self.scale * factor)


@dataclass(frozen=True)
class PowerLaw(Family):
    """``c * x**gamma`` on ``[0, b]``; ``c`` defaults to the normalizing value.

    With ``b = inf`` the family is only integrable under a positive tilt.
    """

    gamma: float
    b: float = 1.0
    c: float | None = None
    name: ClassVar[str] = "powerlaw"

    def __post_init__(self):
        if not self.gamma > -1:
            raise ValueError("PowerLaw exponent must exceed -1")
        if not self.b > 0:
            raise ValueError("PowerLaw upper bound must be positive")
        if self.c is None:
            if not math.isfinite(self.b):
                raise ValueError("PowerLaw on [0, inf) needs an explicit c")
            object.__setattr__(self, "c", (self.gamma + 1.0) / self.b ** (self.gamma + 1.0))
        if not self.c > 0:
            raise ValueError("PowerLaw constant must be positive")

    def domain(self):
        return (0.0, self.b)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = math.log(self.c) + special.xlogy(self.gamma, x)
        if self.gamma < 0:
            out = np.where(x == 0, np.inf, out)
        return np.where(self._inside(x), out, -np.inf)

    def dlogpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return self.gamma / x

    def params(self):
        return {"gamma": self.gamma, "b": self.b, "c": self.c}

    def scaled(self, factor):
        # density of fX: (1/f) c (x/f)^g on [0, f b]
        return PowerLaw(self.gamma, self.b * factor, self.c / factor ** (self.gamma + 1.0))


@dataclass(frozen=True)
class Uniform(Family):
    a: float
    b: float
    name: ClassVar[str] = "uniform"

    def __post_init__(self):
        if not (0 <= self.a < self.b):
            raise ValueError("Uniform needs 0 <= a < b")

    def domain(self):
        return (self.a, self.b)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(self._inside(x), -math.log(self.b - self.a), -np.inf)

    def dlogpdf(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def params(self):
        return {"a": self.a, "b": self.b}

    def scaled(self, factor):
        return Uniform(self.a * factor, self.b * factor)


@dataclass(frozen=True)
class ShellIndicator(Family):
    """Uniform on ``(center - width/2, center + width/2]``."""

    center: float
    width: float
    name: ClassVar[str] = "shell"

    def __post_init__(self):
        if not self.width > 0 or self.center - self.width / 2 < 0:
            raise ValueError("ShellIndicator needs width > 0 and a non-negative lower edge")

    def domain(self):
        return (self.center - self.width / 2, self.center + self.width / 2)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.domain()
        return np.where((x > lo) & (x <= hi), -math.log(self.width), -np.inf)

    def dlogpdf(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def params(self):
        return {"center": self.center, "width": self.width}

    def scaled(self, factor):
        return ShellIndicator(self.center * factor, self.width * factor)

    def breakpoints(self):
        return self.domain()


FAMILIES: dict[str, type[Family]] = {
    cls.name: cls for cls in (Exponential, Gamma, PowerLaw, Uniform, ShellIndicator)
}


# ---------------------------------------------------------------- Density1D


@dataclass(frozen=True, eq=False)
class Density1D:
    support: tuple[float, float]
    family: Family | None = None
    grid: np.ndarray | None = None
    logvalues: np.ndarray | None = None
    log_scale: float = 0.0
    tilt: float = 0.0
    norm_const: float = 1.0
    tail_cut: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        a, b = self.support
        if not (0 <= a < b < math.inf):
            raise ValueError(f"support must be a finite interval [a, b] with 0 <= a < b, got {self.support}")
        if (self.family is None) == (self.grid is None):
            raise ValueError("exactly one of family / grid must be given")
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            lv = np.asarray(self.logvalues, dtype=float)
            if g.ndim != 1 or g.size < 5 or lv.shape != g.shape:
                raise ValueError("grid densities need >= 5 points and matching log values")
            lv = np.where(lv < LOG_ZERO, -np.inf, lv)
            if np.any(np.isnan(lv)) or np.any(lv == np.inf):
                raise ValueError("grid log-density must be finite or -inf")
            g.setflags(write=False)
            lv.setflags(write=False)
            object.__setattr__(self, "grid", g)
            object.__setattr__(self, "logvalues", lv)

    # ------------------------------------------------------------ builders

    @classmethod
    def from_family(cls, family: Family, support: tuple[float, float] | None = None, tilt: float = 0.0) -> "Density1D":
        """Wrap a family; an infinite upper domain is cut where the density
        drops below ``1e-16`` of its maximum."""
        lo, hi = family.domain()
        if support is not None:
            lo, hi = max(lo, support[0]), min(hi, support[1])
            return cls(support=(lo, hi), family=family, tilt=tilt)
        cut = hi
        if not math.isfinite(hi):
            cut = tail_cut_point(lambda x: family.logpdf(x) - tilt * x, lo)
        return cls(support=(lo, cut), family=family, tilt=tilt, tail_cut=not math.isfinite(hi))

    @classmethod
    def from_grid(cls, grid, logvalues) -> "Density1D":
        grid = np.asarray(grid, dtype=float)
        steps = np.diff(grid)
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise ValueError("grid must be uniform")
        return cls(support=(float(grid[0]), float(grid[-1])), grid=grid, logvalues=logvalues)

    @classmethod
    def from_function(cls, fn, a: float, b: float, m: int = 4097, log: bool = False) -> "Density1D":
        """Sample ``fn`` (density or, with ``log=True``, log-density) on ``m`` points."""
        x = np.linspace(a, b, m)
        y = np.asarray(fn(x), dtype=float)
        if not log:
            with np.errstate(divide="ignore"):
                y = np.log(y)
        return cls.from_grid(x, y)

    def to_grid(self, m: int = 4097) -> "Density1D":
        """Grid representation on the same support."""
        g = Density1D.from_function(self.logpdf, *self.support, m=m, log=True)
        return replace(g, norm_const=self.norm_const)

    # ------------------------------------------------------------ evaluation

    @property
    def is_grid(self) -> bool:
        return self.grid is not None

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def _base_logpdf(self, x):
        """log of base(x) * exp(-tilt x), without ``log_scale``."""
        x = np.asarray(x, dtype=float)
        a, b = self.support
        if self.is_grid:
            return _interp_log(x, self.grid, self.logvalues)
        with np.errstate(invalid="ignore"):
            out = self.family.logpdf(x) - self.tilt * x
        inside = x >= a
        if not self.tail_cut:
            inside &= x <= b
        out = np.where(inside, out, -np.inf)
        return np.where(out < LOG_ZERO, -np.inf, out)

    def logpdf(self, x):
        return self._base_logpdf(x) + self.log_scale

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def contains(self, y: float) -> bool:
        a, b = self.support
        if self.tail_cut:
            return y >= a
        return a <= y <= b

    # ------------------------------------------------------------ integration

    def _integrate_base(self, weight=None) -> float:
        """Integral of ``weight(x) * base(x) * exp(-tilt x)`` over the support."""
        a, b = self.support
        if self.is_grid:
            y = np.exp(self.logvalues)
            if weight is not None:
                y = y * weight(self.grid)
            return float(np.dot(y, trapezoid_weights(y.size, self.dx)))

        def integrand(x):
            y = np.exp(self._base_logpdf(x))
            return y if weight is None else y * weight(x)

        bps = self.family.breakpoints()
        if self.tilt == 0.0 and isinstance(self.family, (Gamma,)):
            bps = bps + (self.family.scale * max(self.family.shape - 1.0, 0.0),)
        return adaptive_simpson(integrand, a, b, breakpoints=bps, open_ends=_open_ends(self))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "support": [self.support[0], self.support[1]],
            "norm_const": self.norm_const,
            "log_scale": self.log_scale,
            "tilt": self.tilt,
            "tail_cut": self.tail_cut,
        }
        if self.is_grid:
            d["kind"] = "grid"
            d["grid"] = {"start": float(self.grid[0]), "stop": float(self.grid[-1]), "points": int(self.grid.size)}
            d["values"] = [None if not np.isfinite(v) else float(v) for v in self.logvalues]
        else:
            d["kind"] = "family"
            d["family"] = self.family.name
            d["params"] = self.family.params()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Density1D":
        common = dict(
            support=(float(d["support"][0]), float(d["support"][1])),
            norm_const=float(d.get("norm_const", 1.0)),
            log_scale=float(d.get("log_scale", 0.0)),
            tilt=float(d.get("tilt", 0.0)),
            tail_cut=bool(d.get("tail_cut", False)),
        )
        if d["kind"] == "grid":
            g = d["grid"]
            x = np.linspace(g["start"], g["stop"], g["points"])
            lv = np.array([-np.inf if v is None else v for v in d["values"]], dtype=float)
            return cls(grid=x, logvalues=lv, **common)
        fam = FAMILIES[d["family"]](**d["params"])
        return cls(family=fam, **common)


def _open_ends(d: Density1D) -> bool:
    return isinstance(d.family, (Gamma, PowerLaw))


def _interp_log(x, grid, logv):
    """Piecewise-linear interpolation of a log-density; -inf is absorbing."""
    x = np.asarray(x, dtype=float)
    dx = grid[1] - grid[0]
    m = grid.size
    t = (x - grid[0]) / dx
    # snap round-off near nodes so a -inf neighbour does not leak in
    near = np.rint(t)
    t = np.where(np.abs(t - near) < 1e-9, near, t)
    i = np.clip(np.floor(t).astype(np.int64), 0, m - 2)
    w = t - i
    l0, l1 = logv[i], logv[i + 1]
    with np.errstate(invalid="ignore"):
        out = (1.0 - w) * l0 + w * l1
    out = np.where(w == 0.0, l0, out)
    out = np.where(w == 1.0, l1, out)
    out = np.where(np.isnan(out), -np.inf, out)
    out = np.where((t < -1e-9) | (t > m - 1 + 1e-9), -np.inf, out)
    return out


def tail_cut_point(logpdf, lo: float, ratio: float = TAIL_RATIO) -> float:
    """Smallest ``x > argmax`` where ``logpdf`` falls below ``max + ln(ratio)``.

    Assumes the log-density is unimodal on ``[lo, inf)``.
    """
    xs = lo + np.ldexp(1.0, np.arange(-30, 80))
    vals = np.asarray(logpdf(xs), dtype=float)
    vals = np.where(np.isnan(vals), -np.inf, vals)
    if not np.any(np.isfinite(vals)):
        raise NonIntegrable("density vanishes on the search ladder")
    k = int(np.argmax(vals))
    # refine the peak between ladder neighbours
    left = xs[k - 1] if k > 0 else lo
    fine = np.linspace(left, xs[min(k + 1, xs.size - 1)], 4001)
    fv = np.asarray(logpdf(fine), dtype=float)
    peak = max(float(np.nanmax(np.where(np.isfinite(fv), fv, -np.inf))), float(vals[k]))
    level = peak + math.log(ratio)
    beyond = np.nonzero((np.arange(xs.size) > k) & (vals < level))[0]
    if beyond.size == 0:
        raise NonIntegrable("density tail does not decay")
    j = int(beyond[0])
    lo_x, hi_x = xs[j - 1], xs[j]
    for _ in range(200):
        midp = 0.5 * (lo_x + hi_x)
        if float(logpdf(np.array(midp))) < level:
            hi_x = midp
        else:
            lo_x = midp
        if hi_x - lo_x <= 1e-12 * hi_x:
            break
    return float(hi_x)


# ---------------------------------------------------------------- operations


def integral(d: Density1D) -> float:
    """Total mass ``exp(log_scale) * base integral``."""
    return math.exp(d.log_scale) * d._integrate_base()


def normalize(d: Density1D) -> Density1D:
    """Rescale to unit mass; ``norm_const`` records the input's mass."""
    base = d._integrate_base()
    if not (math.isfinite(base) and base > 0):
        raise NonIntegrable(f"cannot normalize: integral is {base!r}")
    mass = math.exp(d.log_scale) * base
    if d.is_grid:
        return replace(d, logvalues=d.logvalues - math.log(base), log_scale=0.0, norm_const=mass)
    return replace(d, log_scale=-math.log(base), norm_const=mass)


def scale_density(d: Density1D, factor: float) -> Density1D:
    """Law of ``factor * X`` for ``X ~ d``."""
    if not factor > 0:
        raise ValueError("scale factor must be positive")
    a, b = d.support
    if d.is_grid:
        return replace(
            d,
            grid=d.grid * factor,
            logvalues=d.logvalues - math.log(factor),
            support=(a * factor, b * factor),
        )
    return replace(
        d,
        family=d.family.scaled(factor),
        support=(a * factor, b * factor),
        tilt=d.tilt / factor,
    )


def log_density_derivative(d: Density1D, y: float) -> float:
    """``d ln f / dy`` at an interior point.

    Closed form for analytic families; for grids, the derivative of the
    5-point Lagrange interpolant of the log-values (fourth-order accurate,
    equal to the standard central difference at nodes).
    """
    a, b = d.support
    if not (a < y < b or (d.tail_cut and y > a)):
        raise OutOfSupport(f"y={y} is not strictly inside {d.support}")
    if not np.isfinite(d.logpdf(np.array(y))):
        raise ZeroDensity(f"density vanishes at y={y}")
    if not d.is_grid:
        return float(d.family.dlogpdf(np.array(y))) - d.tilt
    x, lv = d.grid, d.logvalues
    h = d.dx
    j = int(round((y - x[0]) / h))
    j = min(max(j, 2), x.size - 3)
    idx = np.arange(j - 2, j + 3)
    vals = lv[idx]
    if not np.all(np.isfinite(vals)):
        raise ZeroDensity(f"stencil around y={y} touches zero density")
    t = (y - x[idx[0]]) / h
    nodes = np.arange(5.0)
    deriv = 0.0
    for i in range(5):
        others = np.delete(nodes, i)
        denom = np.prod(nodes[i] - others)
        s = 0.0
        for k in range(4):
            rest = np.delete(others, k)
            s += np.prod(t - rest)
        deriv += vals[i] * s / denom
    return float(deriv / h)


def moment(d: Density1D, order: int) -> float:
    """``integral of x**order * f(x)``."""
    if order < 0 or int(order) != order:
        raise ValueError("order must be a non-negative integer")
    if order == 0:
        val = d._integrate_base()
    else:
        val = d._integrate_base(weight=lambda x: x**order)
    val *= math.exp(d.log_scale)
    if not math.isfinite(val):
        raise NonIntegrable(f"moment of order {order} diverges")
    return val


def mean(d: Density1D) -> float:
    return moment(d, 1) / moment(d, 0)


def neg_log_norm(g: Density1D) -> float:
    """``-ln`` of the total mass of a (possibly unnormalized) density."""
    base = g._integrate_base()
    if not (math.isfinite(base) and base > 0):
        raise NonIntegrable(f"mass is {base!r}")
    return -(g.log_scale + math.log(base))


def kl_divergence(f: Density1D, g: Density1D) -> float:
    """``integral of f ln(f / g)`` over the support of ``f``.

    ``g`` may be unnormalized; then the result is shifted by ``-ln c`` for a
    constant factor ``c``.  Points where ``f`` vanishes contribute zero.
    """

    def integrand(x):
        lf = f.logpdf(x)
        lg = g.logpdf(x)
        pos = np.isfinite(lf)
        if np.any(pos & ~np.isfinite(lg)):
            bad = np.asarray(x)[pos & ~np.isfinite(lg)][0]
            raise SupportMismatch(f"f > 0 but g = 0 at x={bad!r}")
        with np.errstate(invalid="ignore"):
            out = np.exp(lf) * (lf - lg)
        return np.where(pos, out, 0.0)

    a, b = f.support
    if f.is_grid:
        return float(np.dot(integrand(f.grid), trapezoid_weights(f.grid.size, f.dx)))
    bps = f.family.breakpoints() + (g.family.breakpoints() if not g.is_grid else ())
    return adaptive_simpson(integrand, a, b, breakpoints=bps, open_ends=True)


def total_variation(f: Density1D, g: Density1D, points: int = 20001) -> float:
    """``0.5 * integral |f - g|`` on a fine grid spanning both supports."""
    a = min(f.support[0], g.support[0])
    b = max(f.support[1], g.support[1])
    x = np.linspace(a, b, points)
    diff = np.abs(f.pdf(x) - g.pdf(x))
    return 0.5 * float(np.dot(diff, trapezoid_weights(points, x[1] - x[0])))


# ---------------------------------------------------------------- pmfs


@dataclass(frozen=True, eq=False)
class DiscretePMF:
    """Probabilities ``p[k]`` on ``k = 0..len(p)-1``."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("pmf needs a non-empty 1-D array")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("pmf values must be finite and non-negative")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_log(cls, logp) -> "DiscretePMF":
        logp = np.asarray(logp, dtype=float)
        z = special.logsumexp(logp)
        if not np.isfinite(z):
            raise ValueError("log-pmf has no mass")
        return cls(np.exp(logp - z))

    @classmethod
    def from_weights(cls, w) -> "DiscretePMF":
        w = np.asarray(w, dtype=float)
        s = w.sum()
        if not s > 0:
            raise ValueError("weights have no mass")
        return cls(w / s)

    @property
    def n_max(self) -> int:
        return self.p.size - 1

    @property
    def logp(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.p)

    def normalize(self) -> "DiscretePMF":
        return DiscretePMF.from_weights(self.p)

    def mean(self) -> float:
        return float(np.dot(np.arange(self.p.size), self.p))

    def var(self) -> float:
        k = np.arange(self.p.size)
        m = self.mean()
        return float(np.dot((k - m) ** 2, self.p))

    def padded(self, n_max: int) -> np.ndarray:
        out = np.zeros(n_max + 1)
        n = min(n_max, self.n_max) + 1
        out[:n] = self.p[:n]
        return out

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "pmf", "p": [float(v) for v in self.p]}

    def to_csv_rows(self):
        return [(k, float(v)) for k, v in enumerate(self.p)]


def pmf_total_variation(p: DiscretePMF, q: DiscretePMF) -> float:
    n = max(p.n_max, q.n_max)
    return 0.5 * float(np.abs(p.padded(n) - q.padded(n)).sum())


def pmf_kl(p: DiscretePMF, q: DiscretePMF) -> float:
    n = max(p.n_max, q.n_max)
    a, b = p.padded(n), q.padded(n)
    pos = a > 0
    if np.any(pos & (b == 0)):
        raise SupportMismatch("p puts mass where q is zero")
    return float(np.sum(a[pos] * (np.log(a[pos]) - np.log(b[pos]))))


def density_from_dict(d: dict[str, Any]):
    if d.get("kind") == "pmf":
        return DiscretePMF(np.asarray(d["p"], dtype=float))
    return Density1D.from_dict(d)
