"""Discrete limit law: counts in a small region or colony given the total.

The asymptotic form is the tilted prior ``Q^{-1} p_K(k) exp(mu k)`` on
``0..m``.  Also here: spatial Poisson counting, the k! demonstration behind
the Gibbs paradox, and a two-colony birth-death-migration simulation.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import optimize, special, stats

from . import rng
from .conditional import exact_conditional_discrete
from .density import DiscretePMF, pmf_kl, pmf_total_variation
from .errors import BoundaryEvaluation, ExtinctionBeforeStationarity, ZeroMass


# ---------------------------------------------------------------- pmf builders


def poisson_pmf(lam: float, n_max: int) -> DiscretePMF:
    return DiscretePMF(stats.poisson.pmf(np.arange(n_max + 1), lam))


def binomial_pmf(n: int, q: float) -> DiscretePMF:
    return DiscretePMF(stats.binom.pmf(np.arange(n + 1), n, q))


def inverse_factorial_prior(n_max: int) -> DiscretePMF:
    """``p(k) proportional to 1/k!`` on ``0..n_max``."""
    return DiscretePMF.from_log(-special.gammaln(np.arange(n_max + 1) + 1.0))


# ---------------------------------------------------------------- baths


class CountBath:
    """Family of laws for ``L_n`` given ``K = k``."""

    independent = True

    def logpmf(self, l, n: int, k=0):
        raise NotImplementedError

    def mean(self, n: int) -> float:
        raise NotImplementedError


class PoissonBath(CountBath):
    def __init__(self, rate: float):
        self.rate = float(rate)

    def logpmf(self, l, n, k=0):
        return stats.poisson.logpmf(np.asarray(l), n * self.rate)

    def mean(self, n):
        return n * self.rate


class BinomialBath(CountBath):
    def __init__(self, q: float):
        self.q = float(q)

    def logpmf(self, l, n, k=0):
        return stats.binom.logpmf(np.asarray(l), n, self.q)

    def mean(self, n):
        return n * self.q


class ConvolutionBath(CountBath):
    """``L_n`` = sum of ``n`` i.i.d. copies of a base count."""

    def __init__(self, base: DiscretePMF):
        self.base = base

    @lru_cache(maxsize=16)
    def _pmf(self, n: int) -> np.ndarray:
        out = np.array([1.0])
        power = self.base.p.copy()
        e = n
        while e:
            if e & 1:
                out = np.convolve(out, power)
            e >>= 1
            if e:
                power = np.convolve(power, power)
        return out / out.sum()

    def logpmf(self, l, n, k=0):
        p = self._pmf(int(n))
        l = np.asarray(l)
        inside = (l >= 0) & (l < p.size)
        with np.errstate(divide="ignore"):
            return np.where(inside, np.log(p[np.clip(l, 0, p.size - 1)]), -np.inf)

    def mean(self, n):
        return n * self.base.mean()


class CoupledBath(CountBath):
    """User law ``log p(l | k; n)`` that may depend on ``k``."""

    independent = False

    def __init__(self, logpmf: Callable, mean: Callable[[int], float]):
        self._logpmf = logpmf
        self._mean = mean

    def logpmf(self, l, n, k=0):
        return np.asarray(self._logpmf(np.asarray(l), n, np.asarray(k)), dtype=float)

    def mean(self, n):
        return self._mean(n)


@dataclass(frozen=True, eq=False)
class CountingPair:
    p_k: DiscretePMF
    bath: CountBath

    @property
    def independent(self) -> bool:
        return self.bath.independent

    def check_scaling(self, ns: Sequence[int], lo: float = 1e-3, hi: float = 1e3) -> bool:
        """``E[L_n]/n`` stays within positive bounds over ``ns``."""
        return all(lo <= self.bath.mean(n) / n <= hi for n in ns)

    def exact_conditional(self, n: int, m: int):
        return exact_conditional_discrete(self.p_k, lambda l, k: np.exp(self.bath.logpmf(l, n, k)), m)


# ---------------------------------------------------------------- limit law


def mu_n(pair: CountingPair, h: float, n: int, full: bool = False):
    """Tilting exponent of the discrete limit law at total ``m = round(n h)``.

    Partials of the scaled density ``n p(n y | n x)`` use one lattice step:
    symmetric in ``y``, forward in ``x`` (``x = 0`` is the edge of K's range).
    In lattice units ``mu = [ln p(m|1) - ln p(m|0)] - [ln p(m+1|0) - ln p(m-1|0)] / 2``.
    """
    m = int(round(n * h))
    if m < 0:
        raise BoundaryEvaluation("n h must be non-negative")
    bath = pair.bath
    lp0 = float(bath.logpmf(m, n, 0))
    if not math.isfinite(lp0):
        raise ZeroMass(f"p(L_n = {m}) = 0")
    one_sided_y = m == 0
    if one_sided_y:
        up = float(bath.logpmf(m + 1, n, 0))
        dy = up - lp0
    else:
        up = float(bath.logpmf(m + 1, n, 0))
        down = float(bath.logpmf(m - 1, n, 0))
        if not math.isfinite(down):
            one_sided_y = True
            dy = up - lp0
        elif not math.isfinite(up):
            one_sided_y = True
            dy = lp0 - down
        else:
            dy = 0.5 * (up - down)
    if not math.isfinite(dy):
        raise BoundaryEvaluation(f"bath log-slope undefined at l={m}")
    dx = 0.0
    if not pair.independent:
        lp1 = float(bath.logpmf(m, n, 1))
        if not math.isfinite(lp1):
            raise ZeroMass(f"p(L_n = {m} | K = 1) = 0")
        dx = lp1 - lp0
    mu = dx - dy
    if full:
        return mu, {"m": m, "dy": dy, "dx": dx, "one_sided_y": one_sided_y, "one_sided_x": not pair.independent}
    return mu


def log_q_n(p_k: DiscretePMF, mu: float, m: int) -> float:
    """``ln sum_{k<=m} p_K(k) e^{mu k}`` by log-sum-exp."""
    k = np.arange(min(m, p_k.n_max) + 1)
    return float(special.logsumexp(p_k.logp[k] + mu * k))


def q_n(p_k: DiscretePMF, mu: float, m: int) -> float:
    return math.exp(log_q_n(p_k, mu, m))


def asymptotic_conditional_pmf(p_k: DiscretePMF, mu: float, m: int) -> DiscretePMF:
    """Tilted prior ``Q^{-1} p_K(k) e^{mu k}`` on ``0..m``."""
    k = np.arange(m + 1)
    logw = np.full(m + 1, -np.inf)
    top = min(m, p_k.n_max)
    logw[: top + 1] = p_k.logp[: top + 1] + mu * k[: top + 1]
    if not np.isfinite(logw).any():
        raise ZeroMass("tilted prior has no mass on 0..m")
    return DiscretePMF.from_log(logw)


# ---------------------------------------------------------------- spatial counting


@dataclass(frozen=True)
class RegionPair:
    """Small region volume, total volume, particle count."""

    vol_small: float
    vol_total: float
    n_particles: int
    enforce_small: bool = True

    def __post_init__(self):
        if not (self.vol_total > 0 and 0 <= self.vol_small <= self.vol_total):
            raise ValueError("need 0 <= |B| <= |D| and |D| > 0")
        if self.n_particles < 0:
            raise ValueError("particle count must be non-negative")
        if self.enforce_small and not (0 < self.vol_small <= 0.05 * self.vol_total):
            raise ValueError("small region must satisfy 0 < |B| <= 0.05 |D| (pass enforce_small=False to relax)")

    @property
    def fraction(self) -> float:
        return self.vol_small / self.vol_total


def _count_chunk(args) -> np.ndarray:
    seed, index, samples, n, vol_small, vol_total = args
    gen = rng.stream(seed, 1, index)
    pos = gen.random((samples, n)) * vol_total
    return np.count_nonzero(pos < vol_small, axis=1)


def spatial_poisson_counts(
    regions: RegionPair, samples: int, seed: int, workers: int = 1, draws_per_chunk: int = 1 << 23
) -> DiscretePMF:
    """Empirical pmf of the number of particles in the small region.

    Each sample places all particles uniformly in the total region.  Work is
    cut into chunks with their own counter-derived stream, so the result does
    not depend on ``workers``.
    """
    n = regions.n_particles
    if samples < 1:
        raise ValueError("samples must be positive")
    if n == 0:
        return DiscretePMF(np.array([1.0]))
    per = max(1, draws_per_chunk // n)
    jobs = []
    done = 0
    while done < samples:
        s = min(per, samples - done)
        jobs.append((seed, len(jobs), s, n, regions.vol_small, regions.vol_total))
        done += s
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_count_chunk, jobs))
    else:
        parts = [_count_chunk(j) for j in jobs]
    counts = np.concatenate(parts)
    return DiscretePMF.from_weights(np.bincount(counts, minlength=n + 1).astype(float))


def distinguishable_law(n: int, fraction: float, enumerate_limit: int = 16) -> DiscretePMF:
    """Occupancy law of labelled particles: enumerate all 2**n region
    assignments when ``n`` is small, closed-form binomial otherwise."""
    if n <= enumerate_limit:
        w = np.zeros(n + 1)
        for assign in itertools.product((0, 1), repeat=n):
            k = sum(assign)
            w[k] += fraction**k * (1.0 - fraction) ** (n - k)
        return DiscretePMF.from_weights(w)
    return binomial_pmf(n, fraction)


def indistinguishable_law(n: int, fraction: float) -> tuple[DiscretePMF, float]:
    """Tilted ``1/k!`` prior on ``0..n`` with mean ``n * fraction``.

    Returns the law and its tilt ``mu``.
    """
    k = np.arange(n + 1)
    if fraction == 0.0:
        return DiscretePMF(np.eye(n + 1)[0]), -math.inf
    if fraction == 1.0:
        return DiscretePMF(np.eye(n + 1)[n]), math.inf
    prior = inverse_factorial_prior(n)
    target = n * fraction

    def gap(mu):
        return asymptotic_conditional_pmf(prior, mu, n).mean() - target

    lo, hi = -50.0, 50.0
    mu = optimize.brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return asymptotic_conditional_pmf(prior, mu, n), float(mu)


def gibbs_paradox_demo(regions: RegionPair, n: int | None = None, seed: int | None = None) -> dict:
    """Conditional count in the small region under two priors.

    (i) indistinguishable counting: prior ``1/k!`` tilted so the mean is
    ``N |B|/|D|``; (ii) labelled particles: occupancy of every assignment.
    The two differ only through the prior, not through any dynamics.
    """
    n = regions.n_particles if n is None else n
    f = regions.fraction
    law_i, mu = indistinguishable_law(n, f)
    law_ii = distinguishable_law(n, f)
    return {
        "law_i": [float(v) for v in law_i.p],
        "law_ii": [float(v) for v in law_ii.p],
        "kl": pmf_kl(law_i, law_ii),
        "tv": pmf_total_variation(law_i, law_ii),
        "mu": mu,
        "parameters": {"N": n, "vol_small": regions.vol_small, "vol_total": regions.vol_total},
        "seed": seed,
    }


# ---------------------------------------------------------------- colonies


@dataclass(frozen=True)
class ColonyModel:
    """Two logistic colonies exchanging individuals.

    Per-capita birth ``b_i`` and death ``d_i n_i / cap_i``; with the default
    ``d_i = b_i`` births balance deaths at the carrying capacity.  Migration
    is per capita: ``migrate_out`` from the small colony, ``migrate_in`` from
    the large one.
    """

    birth_small: float
    birth_large: float
    cap_small: float
    cap_large: float
    migrate_out: float
    migrate_in: float
    death_small: float | None = None
    death_large: float | None = None
    init_small: int | None = None
    init_large: int | None = None

    def __post_init__(self):
        for name in ("birth_small", "birth_large", "cap_small", "cap_large"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.migrate_out < 0 or self.migrate_in < 0:
            raise ValueError("migration rates must be non-negative")
        if self.cap_small > 0.05 * self.cap_large:
            raise ValueError("small colony capacity must be <= 0.05 of the large one")

    @property
    def d_small(self) -> float:
        return self.birth_small if self.death_small is None else self.death_small

    @property
    def d_large(self) -> float:
        return self.birth_large if self.death_large is None else self.death_large

    @property
    def balanced(self) -> bool:
        return self.d_small == self.birth_small and self.d_large == self.birth_large

    def fixed_point(self) -> tuple[float, float]:
        """Deterministic equilibrium of the mean-field rate equations."""

        def rhs(v):
            k, l = v
            return [
                self.birth_small * k - self.d_small * k * k / self.cap_small - self.migrate_out * k + self.migrate_in * l,
                self.birth_large * l - self.d_large * l * l / self.cap_large + self.migrate_out * k - self.migrate_in * l,
            ]

        sol = optimize.fsolve(rhs, [self.cap_small, self.cap_large], full_output=True)
        return float(sol[0][0]), float(sol[0][1])


@numba.njit(cache=True)
def _colony_chunk(state, par, u, burn, t_max, joint, marg_k, marg_l):
    # state: [k, l, t]; par: [bS, dS/capS, bL, dL/capL, mOut, mIn]
    k = int(state[0])
    l = int(state[1])
    t = state[2]
    kmax = joint.shape[0] - 1
    tmax = joint.shape[1] - 1
    n = u.shape[0]
    for i in range(n):
        r0 = par[0] * k
        r1 = par[1] * k * k
        r2 = par[2] * l
        r3 = par[3] * l * l
        r4 = par[4] * k
        r5 = par[5] * l
        total = r0 + r1 + r2 + r3 + r4 + r5
        if total <= 0.0:
            state[0], state[1], state[2] = k, l, t
            return i, 2
        tau = -np.log(1.0 - u[i, 0]) / total
        t_next = t + tau
        if t_next > burn:
            lo = t if t > burn else burn
            hi = t_next if t_next < t_max else t_max
            w = hi - lo
            if w > 0.0:
                if k > kmax or k + l > tmax or l > marg_l.shape[0] - 1:
                    state[0], state[1], state[2] = k, l, t
                    return i, 3
                joint[k, k + l] += w
                marg_k[k] += w
                marg_l[l] += w
        if t_next >= t_max:
            state[0], state[1], state[2] = k, l, t_max
            return i + 1, 1
        t = t_next
        x = u[i, 1] * total
        if x < r0:
            k += 1
        elif x < r0 + r1:
            k -= 1
        elif x < r0 + r1 + r2:
            l += 1
        elif x < r0 + r1 + r2 + r3:
            l -= 1
        elif x < r0 + r1 + r2 + r3 + r4:
            k -= 1
            l += 1
        else:
            k += 1
            l -= 1
    state[0], state[1], state[2] = k, l, t
    return n, 0


@dataclass
class ColonyResult:
    conditional: DiscretePMF
    marginal_k: DiscretePMF
    marginal_l: DiscretePMF
    predicted: DiscretePMF
    target: int
    mu: float
    tv: float
    events: int
    time_at_target: float
    extinct: bool = False
    meta: dict = field(default_factory=dict)


def bath_log_slope(marg_l: np.ndarray, m: int, halfwidth: int) -> float:
    """``d ln p_L / dl`` at ``l = m`` from a weighted quadratic fit of the
    empirical log-pmf over ``|l - m| <= halfwidth``."""
    l = np.arange(marg_l.size)
    sel = (np.abs(l - m) <= halfwidth) & (marg_l > 0)
    if sel.sum() < 3:
        raise ZeroMass(f"bath histogram too sparse near l={m}")
    x = l[sel] - m
    y = np.log(marg_l[sel] / marg_l.sum())
    coef = np.polyfit(x, y, 2, w=np.sqrt(marg_l[sel]))
    return float(coef[1])


def colony_simulation(
    model: ColonyModel,
    t_max: float,
    seed: int,
    max_events: int = 50_000_000,
    target: int | None = None,
    chunk: int = 1 << 20,
) -> ColonyResult:
    """Exact-jump simulation; the small colony's count is recorded with
    sojourn-time weights whenever the total equals the target.

    The first 10% of ``t_max`` is burn-in.  The prediction tilts the
    empirical marginal of the small colony by the large colony's log-slope at
    the target total.
    """
    k0 = model.init_small if model.init_small is not None else int(round(model.cap_small))
    l0 = model.init_large if model.init_large is not None else int(round(model.cap_large))
    par = np.array(
        [
            model.birth_small,
            model.d_small / model.cap_small,
            model.birth_large,
            model.d_large / model.cap_large,
            model.migrate_out,
            model.migrate_in,
        ]
    )
    kmax = int(10 * model.cap_small + 200)
    tmax_total = int(4 * (model.cap_small + model.cap_large) + 500)
    joint = np.zeros((kmax + 1, tmax_total + 1))
    marg_k = np.zeros(kmax + 1)
    marg_l = np.zeros(tmax_total + 1)
    state = np.array([k0, l0, 0.0], dtype=float)
    burn = 0.1 * t_max
    gen = rng.stream(seed, 2)
    events, status = 0, 0
    while status == 0 and events < max_events:
        n = min(chunk, max_events - events)
        u = rng.words_to_unit(rng.raw_words(gen, 2 * n)).reshape(n, 2)
        used, status = _colony_chunk(state, par, u, burn, t_max, joint, marg_k, marg_l)
        events += used
    if status == 3:
        raise RuntimeError("colony state left the histogram range")
    extinct = status == 2
    if marg_k.sum() == 0:
        raise ExtinctionBeforeStationarity("no post-burn-in time recorded")
    totals = joint.sum(axis=0)
    m = target if target is not None else int(round(np.dot(np.arange(totals.size), totals) / totals.sum()))
    column = joint[: m + 1, m] if m < joint.shape[1] else np.zeros(1)
    if column.sum() == 0:
        raise ZeroMass(f"total never equalled target m={m}")
    cond = DiscretePMF.from_weights(column)
    mk = DiscretePMF.from_weights(marg_k)
    ml = DiscretePMF.from_weights(marg_l)
    sd_l = math.sqrt(max(ml.var(), 1.0))
    mu = -bath_log_slope(marg_l, m, max(3, int(2 * sd_l)))
    pred = asymptotic_conditional_pmf(mk, mu, m)
    tv = pmf_total_variation(cond, pred)
    res = ColonyResult(cond, mk, ml, pred, m, mu, tv, events, float(column.sum()), extinct)
    res.meta["tv_marginal"] = pmf_total_variation(cond, mk)
    if extinct:
        raise_partial = ExtinctionBeforeStationarity("population went extinct before t_max")
        raise_partial.partial = res
        raise raise_partial
    return res
