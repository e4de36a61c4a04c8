"""Energy-shell sampling for separable systems ``U_t(q, Q) = U_1(q) + U_2(Q)``.

Each part is a sum of one-coordinate terms ``|x|**p / p`` (``p = 2`` harmonic,
``p = 4`` quartic), so sublevel sets ``{U <= z}`` are scaled l_p balls with a
closed-form volume and an exact uniform sampler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import special, stats

from . import rng
from .density import Density1D, log_density_derivative
from .errors import EmptySampleSet, InvalidShell, MonteCarloBudgetExceeded, RejectionStall
from .quadrature import adaptive_simpson

MIN_ACCEPTANCE = 1e-6
POWERS = {"harmonic": (2.0, 2.0), "quartic": (4.0, 4.0), "mixed": (2.0, 4.0)}


def energy(x: np.ndarray, p: float) -> np.ndarray:
    """Row-wise ``sum |x_i|**p / p``."""
    x = np.asarray(x, dtype=float)
    if p == 2.0:
        return 0.5 * np.einsum("...i,...i->...", x, x)
    return np.sum(np.abs(x) ** p, axis=-1) / p


def log_sublevel_volume(z, dim: int, p: float):
    """``ln vol{x in R^dim : sum |x_i|^p / p <= z}``."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        return (
            dim * math.log(2.0 * math.gamma(1.0 + 1.0 / p))
            + (dim / p) * np.log(p * z)
            - special.gammaln(dim / p + 1.0)
        )


def log_exact_dos(z, dim: int, p: float):
    """``ln f(z)`` with ``f = d/dz vol{U <= z}``, proportional to ``z**(dim/p - 1)``."""
    z = np.asarray(z, dtype=float)
    r = dim / p
    const = dim * math.log(2.0 * math.gamma(1.0 + 1.0 / p)) + r * math.log(p) - special.gammaln(r)
    if r == 1.0:
        return np.where(z >= 0, const, -np.inf) + 0.0 * z
    with np.errstate(divide="ignore"):
        return const + (r - 1.0) * np.log(z)


def sample_sublevel(gen: np.random.Generator, count: int, dim: int, p: float, z: float) -> np.ndarray:
    """Uniform points in ``{sum |x_i|^p / p <= z}``.

    Generalized-Gaussian construction: with ``|Y_i|^p ~ Gamma(1/p)`` and
    ``W ~ Exp(1)``, ``Y / (sum |Y_i|^p + W)**(1/p)`` is uniform in the unit
    l_p ball.
    """
    g = gen.standard_gamma(1.0 / p, size=(count, dim))
    sign = np.where(gen.random((count, dim)) < 0.5, -1.0, 1.0)
    w = gen.standard_exponential(count)
    radius = (p * z) ** (1.0 / p)
    scale = radius / (g.sum(axis=1) + w) ** (1.0 / p)
    return sign * g ** (1.0 / p) * scale[:, None]


@dataclass(frozen=True)
class SeparableHamiltonian:
    """Subsystem of ``n1`` coordinates plus a bath of ``n2`` coordinates."""

    family: str
    n1: int
    n2: int

    def __post_init__(self):
        if self.family not in POWERS:
            raise InvalidShell(f"unknown family {self.family!r}; expected one of {sorted(POWERS)}")
        if self.n1 < 1 or self.n2 < 0:
            raise InvalidShell("dimensions must satisfy n1 >= 1, n2 >= 0")
        if self.n1 > self.n2 / 10.0:
            raise InvalidShell(f"subsystem must be small: n1={self.n1} > n2/10={self.n2 / 10}")

    @property
    def p1(self) -> float:
        return POWERS[self.family][0]

    @property
    def p2(self) -> float:
        return POWERS[self.family][1]

    def u1(self, q: np.ndarray) -> np.ndarray:
        return energy(q, self.p1)

    def u2(self, big_q: np.ndarray) -> np.ndarray:
        return energy(big_q, self.p2)

    def total(self, q, big_q):
        return self.u1(q) + self.u2(big_q)


@dataclass
class ShellSampleSet:
    u1: np.ndarray
    totals: np.ndarray
    q: np.ndarray
    observables: dict[str, np.ndarray]
    h: float
    delta: float
    hamiltonian: SeparableHamiltonian
    sampler: str
    proposals: int
    meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return int(self.u1.size)

    @property
    def acceptance_rate(self) -> float:
        return self.count / self.proposals if self.proposals else 1.0

    def in_shell(self) -> np.ndarray:
        lo, hi = self.h - self.delta / 2.0, self.h + self.delta / 2.0
        return (self.totals > lo) & (self.totals <= hi)

    def csv_rows(self):
        names = list(self.observables)
        yield ["u1", *(f"xi_{i + 1}" for i in range(len(names)))]
        cols = [self.observables[n] for n in names]
        for i in range(self.count):
            yield [float(self.u1[i]), *(float(c[i]) for c in cols)]


def _record(obs: Mapping[str, Callable] | None, q: np.ndarray) -> dict[str, np.ndarray]:
    return {name: np.asarray(fn(q), dtype=float) for name, fn in (obs or {}).items()}


def sample_energy_shell(
    ham: SeparableHamiltonian,
    h: float,
    delta: float,
    count: int,
    seed: int,
    observables: Mapping[str, Callable] | None = None,
    proposal: str = "sublevel",
    batch: int = 4096,
    min_proposals: int = 1_000_000,
    max_proposals: int = 200_000_000,
) -> ShellSampleSet:
    """Points uniform (Lebesgue) on ``{h - delta/2 < U_t <= h + delta/2}``.

    Harmonic systems are sampled directly on the sphere ``U_t = h``.
    Otherwise rejection is used, proposing either from the product of the two
    sublevel sets ``{U_i <= h + delta/2}`` (``proposal="sublevel"``) or from
    a box covering the whole sublevel set (``proposal="box"``).
    """
    if not (h > 0 and delta > 0):
        raise InvalidShell("need h > 0 and delta > 0")
    if delta / 2.0 >= h:
        raise InvalidShell("shell must stay inside U_t > 0")
    if count < 1:
        raise InvalidShell("count must be positive")
    gen = rng.stream(seed, 3)
    n1, n2 = ham.n1, ham.n2
    lo, hi = h - delta / 2.0, h + delta / 2.0

    if ham.family == "harmonic":
        radius = math.sqrt(2.0 * h)
        qs, u1s, tots = [], [], []
        left = count
        while left:
            b = min(batch, left)
            g = gen.standard_normal((b, n1 + n2))
            x = g * (radius / np.linalg.norm(g, axis=1))[:, None]
            qs.append(x[:, :n1].copy())
            u1s.append(ham.u1(x[:, :n1]))
            tots.append(ham.u1(x[:, :n1]) + ham.u2(x[:, n1:]))
            left -= b
        q = np.concatenate(qs)
        return ShellSampleSet(
            np.concatenate(u1s), np.concatenate(tots), q, _record(observables, q), h, delta, ham, "direct-sphere", count
        )

    if proposal not in ("sublevel", "box"):
        raise ValueError(f"unknown proposal {proposal!r}")
    half1 = (ham.p1 * hi) ** (1.0 / ham.p1)
    half2 = (ham.p2 * hi) ** (1.0 / ham.p2)
    accepted_q, accepted_u1, accepted_t = [], [], []
    n_acc = 0
    proposals = 0
    while n_acc < count:
        if proposal == "sublevel":
            q = sample_sublevel(gen, batch, n1, ham.p1, hi)
            big_q = sample_sublevel(gen, batch, n2, ham.p2, hi)
        else:
            q = gen.uniform(-half1, half1, (batch, n1))
            big_q = gen.uniform(-half2, half2, (batch, n2))
        u1 = ham.u1(q)
        tot = u1 + ham.u2(big_q)
        ok = (tot > lo) & (tot <= hi)
        proposals += batch
        if ok.any():
            accepted_q.append(q[ok])
            accepted_u1.append(u1[ok])
            accepted_t.append(tot[ok])
            n_acc += int(ok.sum())
        if proposals >= min_proposals and n_acc / proposals < MIN_ACCEPTANCE:
            raise RejectionStall(
                f"acceptance {n_acc / proposals:.3g} after {proposals} proposals; use a larger delta"
            )
        if proposals >= max_proposals and n_acc < count:
            raise RejectionStall(f"only {n_acc} of {count} samples after {proposals} proposals")
    q = np.concatenate(accepted_q)[:count]
    set_ = ShellSampleSet(
        np.concatenate(accepted_u1)[:count],
        np.concatenate(accepted_t)[:count],
        q,
        _record(observables, q),
        h,
        delta,
        ham,
        f"rejection-{proposal}",
        proposals,
    )
    return set_


def empirical_subsystem_cdf(samples: ShellSampleSet, a: float) -> float:
    """Fraction of samples with ``U_1 <= a``."""
    if samples.count == 0:
        raise EmptySampleSet("no samples")
    return float(np.count_nonzero(samples.u1 <= a)) / samples.count


def conditional_expectation(samples: ShellSampleSet, xi: str | Callable | None = None) -> tuple[float, float]:
    """Sample mean of an observable and its standard error.

    ``xi`` is the name of a recorded observable, a callable of the subsystem
    coordinates, or ``None`` for the constant 1.
    """
    if samples.count == 0:
        raise EmptySampleSet("no samples")
    if xi is None:
        return 1.0, 0.0
    vals = samples.observables[xi] if isinstance(xi, str) else np.asarray(xi(samples.q), dtype=float)
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.inf
    return float(vals.mean()), se


# ---------------------------------------------------------------- canonical prediction


@dataclass(frozen=True)
class CanonicalSubsystem:
    """Law ``Z^{-1} u**(s-1) exp(-psi u)`` of ``U_1`` on ``[0, h]``, where
    ``s = n1 / p1`` comes from the subsystem's Lebesgue density of states."""

    n1: int
    p1: float
    psi: float
    h: float

    @property
    def s(self) -> float:
        return self.n1 / self.p1

    def _integrate(self, fn: Callable[[np.ndarray], np.ndarray], a: float) -> float:
        """``int_0^a fn(u) u**(s-1) e^{-psi u} du``.

        Substituting ``u = a t**m`` with ``m s >= 4`` turns the endpoint factor
        ``u**(s-1)`` into ``t**(m s - 1)``, smooth enough for Simpson.
        """
        s = self.s
        if a <= 0:
            return 0.0
        a = min(a, self.h)
        m = math.ceil(4.0 * max(s, 1.0)) / s

        def g(t):
            u = a * np.power(t, m)
            return fn(u) * np.exp(-self.psi * u) * m * a**s * np.power(t, m * s - 1.0)

        # relative accuracy: a**s e^{max(0, -psi a)} / s bounds the weight integral
        scale = a**s * math.exp(max(0.0, -self.psi * a)) / s
        return adaptive_simpson(g, 0.0, 1.0, tol=1e-13 * scale, initial=64)

    def _weight_integral(self, a: float, k: int = 0) -> float:
        return self._integrate(lambda u: u**k, a)

    def cdf_quadrature(self, a: float) -> float:
        return self._weight_integral(a) / self._weight_integral(self.h)

    def cdf(self, a):
        """Vectorized CDF via the regularized incomplete gamma function."""
        a = np.clip(np.asarray(a, dtype=float), 0.0, self.h)
        x = self.psi * self.h
        if abs(x) < 1e-6:
            # P(s, y) ~ y^s (1 - s y / (s + 1)) / Gamma(s + 1); error O(x^2)
            c = self.s / (self.s + 1.0)
            return (a / self.h) ** self.s * (1.0 - c * self.psi * a) / (1.0 - c * x)
        if self.psi > 0:
            return special.gammainc(self.s, self.psi * a) / special.gammainc(self.s, self.psi * self.h)
        return self.cdf_quadrature_vec(a)

    def cdf_quadrature_vec(self, a):
        return np.vectorize(self.cdf_quadrature)(a)

    def expectation(self, fn: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
        """``Z^{-1} int fn(u) u**(s-1) e^{-psi u} du`` for observables of ``U_1``."""
        if fn is None:
            return self._weight_integral(self.h, 1) / self._weight_integral(self.h)
        return self._integrate(fn, self.h) / self._weight_integral(self.h)


def ks_distance(sample: np.ndarray, cdf: Callable) -> float:
    return float(stats.kstest(np.asarray(sample), cdf).statistic)


# ---------------------------------------------------------------- density of states


@dataclass
class DensityOfStates:
    grid: np.ndarray
    log_values: np.ndarray
    method: str
    dim: int
    family: str
    counts: np.ndarray | None = None

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    @property
    def density(self) -> Density1D:
        return Density1D.from_grid(self.grid, self.log_values)

    def beta(self, h: float, window: float = 0.1) -> float:
        """``d ln f / dz`` at ``h``.

        Exact grids go through ``log_density_derivative``; Monte Carlo grids
        use a count-weighted linear fit of ``ln f`` over ``|z - h| <= window h``.
        """
        if self.counts is None:
            return log_density_derivative(self.density, h)
        sel = (np.abs(self.grid - h) <= window * h) & (self.counts > 0)
        if sel.sum() < 3:
            raise MonteCarloBudgetExceeded(f"too few populated bins near z={h}")
        coef = np.polyfit(self.grid[sel] - h, self.log_values[sel], 1, w=np.sqrt(self.counts[sel]))
        return float(coef[0])


def density_of_states(
    family: str,
    dim: int,
    grid: np.ndarray,
    method: str = "auto",
    samples: int = 1_000_000,
    seed: int = 0,
    min_count: int = 50,
    budget: int = 50_000_000,
) -> DensityOfStates:
    """``f(z)`` with ``f(z) dz = vol{z < U <= z + dz}`` for ``dim`` coordinates.

    ``method``: ``"exact"`` closed form (the harmonic default); ``"box"``
    Monte Carlo in a bounding box; ``"sublevel"`` Monte Carlo inside the
    sublevel set of the largest grid energy.  Monte Carlo values are bin
    averages over the cells between consecutive grid points, reported at
    cell midpoints.
    """
    p = {"harmonic": 2.0, "quartic": 4.0}.get(family)
    if p is None:
        raise ValueError(f"density of states is per-family: 'harmonic' or 'quartic', got {family!r}")
    grid = np.asarray(grid, dtype=float)
    if method == "auto":
        method = "exact" if family == "harmonic" else "box"
    if method == "exact":
        return DensityOfStates(grid, log_exact_dos(grid, dim, p), "exact", dim, family)
    if samples > budget:
        raise MonteCarloBudgetExceeded(f"{samples} samples exceeds budget {budget}")
    zmax = float(grid[-1])
    gen = rng.stream(seed, 4)
    edges = grid
    counts = np.zeros(edges.size - 1)
    chunk = 1 << 16
    done = 0
    if method == "box":
        half = (p * zmax) ** (1.0 / p)
        log_vol = dim * math.log(2.0 * half)
    elif method == "sublevel":
        log_vol = float(log_sublevel_volume(zmax, dim, p))
    else:
        raise ValueError(f"unknown method {method!r}")
    while done < samples:
        b = min(chunk, samples - done)
        if method == "box":
            x = gen.uniform(-half, half, (b, dim))
        else:
            x = sample_sublevel(gen, b, dim, p, zmax)
        counts += np.histogram(energy(x, p), bins=edges)[0]
        done += b
    if counts.min() < min_count:
        raise MonteCarloBudgetExceeded(
            f"sparsest energy cell has {int(counts.min())} hits (< {min_count}); raise samples or narrow the grid"
        )
    width = np.diff(edges)
    with np.errstate(divide="ignore"):
        log_values = np.log(counts / samples / width) + log_vol
    mids = 0.5 * (edges[1:] + edges[:-1])
    return DensityOfStates(mids, log_values, method, dim, family, counts)


def exact_cell_average(edges: np.ndarray, dim: int, p: float) -> np.ndarray:
    """Exact ``[V(z_{i+1}) - V(z_i)] / (z_{i+1} - z_i)`` for comparison with Monte Carlo."""
    v = np.exp(log_sublevel_volume(np.asarray(edges, dtype=float), dim, p))
    return np.diff(v) / np.diff(edges)


def bath_psi(ham: SeparableHamiltonian, h: float, points: int = 4097, **mc) -> tuple[float, DensityOfStates]:
    """Bath exponent ``d ln f_{U_2}/dz`` at ``h`` from the bath density of states."""
    bath_family = "harmonic" if ham.p2 == 2.0 else "quartic"
    if bath_family == "harmonic" or not mc:
        grid = np.linspace(0.0, 2.0 * h, points)
        dos = density_of_states(bath_family, ham.n2, grid, method="exact")
    else:
        grid = np.linspace(mc.pop("zmin", 0.8 * h), mc.pop("zmax", 1.2 * h), mc.pop("cells", 81))
        dos = density_of_states(bath_family, ham.n2, grid, **mc)
    return dos.beta(h), dos


def canonical_for(ham: SeparableHamiltonian, h: float, psi: float) -> CanonicalSubsystem:
    return CanonicalSubsystem(ham.n1, ham.p1, psi, h)
