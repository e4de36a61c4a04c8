"""Kinetic exchange economy: conserved total (mode a) versus a drifting total
observed only when it falls in a window around ``h`` (mode b).

Each elementary step picks a uniformly random ordered pair ``i != j`` and
splits ``x_i + x_j`` uniformly between them.  Snapshots of every city's total
holding are taken every ``stride`` steps after a 10% burn-in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from . import rng
from .errors import BinningMismatch, EmptySampleSet, InsufficientAcceptedSnapshots

MIN_SNAPSHOTS = 1000
BURN_IN = 0.1


@dataclass(frozen=True)
class ExchangeEconomy:
    """``n_agents`` agents sharing total ``h``; ``cities`` are disjoint index
    ranges ``(start, size)``.  Mode ``"b"`` perturbs a random agent by
    ``uniform(-eps, eps)`` (clipped at 0) with probability ``perturb_prob``
    per step and keeps snapshots whose total is in ``(h - delta/2, h + delta/2]``.
    """

    n_agents: int
    h: float
    cities: tuple[tuple[int, int], ...] = ((0, 1),)
    mode: str = "a"
    delta: float | None = None
    perturb_prob: float = 0.1
    eps: float | None = None
    stride: int | None = None
    bins: int = 60

    def __post_init__(self):
        if self.n_agents < 1000:
            raise ValueError("need at least 1000 agents")
        if self.mode not in ("a", "b"):
            raise ValueError("mode must be 'a' or 'b'")
        if not self.h > 0:
            raise ValueError("h must be positive")
        taken = np.zeros(self.n_agents, dtype=bool)
        for start, size in self.cities:
            if size < 1 or size > self.n_agents / 100:
                raise ValueError(f"city size {size} must be in 1..N/100")
            if start < 0 or start + size > self.n_agents or taken[start : start + size].any():
                raise ValueError("cities must be disjoint index ranges inside 0..N-1")
            taken[start : start + size] = True
        if self.mode == "b" and not (self.delta and self.delta > 0):
            raise ValueError("mode b needs a positive selection width delta")

    @property
    def epsilon(self) -> float:
        return 0.01 * self.h / self.n_agents if self.eps is None else self.eps

    @property
    def snapshot_stride(self) -> int:
        return self.n_agents if self.stride is None else self.stride

    def with_mode(self, mode: str, delta: float | None = None) -> "ExchangeEconomy":
        return ExchangeEconomy(
            self.n_agents, self.h, self.cities, mode, delta if delta is not None else self.delta,
            self.perturb_prob, self.eps, self.stride, self.bins,
        )

    def edges(self, size: int) -> np.ndarray:
        """Common bin edges for a city of ``size`` agents."""
        top = (size + 10.0 * math.sqrt(size) + 10.0) * self.h / self.n_agents
        return np.linspace(0.0, top, self.bins + 1)


@numba.njit(cache=True)
def _exchange_chunk(x, words, steps, ev_step, ev_agent, ev_amount, starts, sizes, stride, phase, out_city, out_total):
    """Run ``steps`` exchanges; every ``stride`` steps record city sums.

    ``phase`` is the number of steps already taken since the last snapshot.
    Perturbation events are (step, agent, amount) triples sorted by step.
    Returns the number of snapshots recorded and the new phase.
    """
    n = x.shape[0]
    nm1 = np.uint64(n - 1)
    nn = np.uint64(n)
    e = 0
    n_ev = ev_step.shape[0]
    snaps = 0
    for s in range(steps):
        w0 = words[2 * s]
        w1 = words[2 * s + 1]
        i = np.int64(((w0 >> np.uint64(32)) * nn) >> np.uint64(32))
        off = np.int64(((w0 & np.uint64(0xFFFFFFFF)) * nm1) >> np.uint64(32))
        j = (i + 1 + off) % n
        u = np.float64(w1 >> np.uint64(11)) * (1.0 / 9007199254740992.0)
        pool = x[i] + x[j]
        xi = u * pool
        x[i] = xi
        x[j] = pool - xi
        while e < n_ev and ev_step[e] == s:
            v = x[ev_agent[e]] + ev_amount[e]
            x[ev_agent[e]] = v if v > 0.0 else 0.0
            e += 1
        phase += 1
        if phase == stride:
            phase = 0
            for c in range(starts.shape[0]):
                acc = 0.0
                for k in range(starts[c], starts[c] + sizes[c]):
                    acc += x[k]
                out_city[snaps, c] = acc
            acc = 0.0
            for k in range(n):
                acc += x[k]
            out_total[snaps] = acc
            snaps += 1
    return snaps, phase


@dataclass
class SubsystemHistogram:
    edges: np.ndarray
    counts: np.ndarray
    overflow: int
    samples: np.ndarray
    size: int
    mode: str
    h: float
    city: tuple[int, int]
    batches: int = 20

    @property
    def n(self) -> int:
        return int(self.samples.size)

    @property
    def masses(self) -> np.ndarray:
        """Bin masses including a final open bin for values past the last edge."""
        return np.append(self.counts, self.overflow) / self.n

    @property
    def beta_hat(self) -> float:
        """MLE of the rate for a Gamma(size, 1/beta) city total."""
        return self.size / float(self.samples.mean())

    @property
    def beta_se(self) -> float:
        """Delta-method SE from the batch-means SE of the sample mean."""
        m = self.samples.size // self.batches
        if m < 2:
            return math.inf
        means = self.samples[: m * self.batches].reshape(self.batches, m).mean(axis=1)
        se_mean = means.std(ddof=1) / math.sqrt(self.batches)
        mu = float(self.samples.mean())
        return self.size * se_mean / mu**2

    def csv_rows(self):
        yield ["bin_left", "bin_right", "mass"]
        masses = self.masses
        for k in range(self.counts.size):
            yield [float(self.edges[k]), float(self.edges[k + 1]), float(masses[k])]
        yield [float(self.edges[-1]), math.inf, float(masses[-1])]


def make_histogram(samples: np.ndarray, econ: ExchangeEconomy, city: tuple[int, int]) -> SubsystemHistogram:
    if samples.size == 0:
        raise EmptySampleSet("no snapshots recorded")
    edges = econ.edges(city[1])
    counts, _ = np.histogram(samples, bins=edges)
    overflow = int(np.count_nonzero(samples > edges[-1]))
    return SubsystemHistogram(edges, counts, overflow, samples, city[1], econ.mode, econ.h, city)


@dataclass
class ExchangeRun:
    histograms: list[SubsystemHistogram]
    steps: int
    snapshots_taken: int
    snapshots_accepted: int
    totals: np.ndarray
    max_drift: float
    meta: dict = field(default_factory=dict)

    @property
    def acceptance(self) -> float:
        return self.snapshots_accepted / self.snapshots_taken if self.snapshots_taken else 0.0


class _EventTimes:
    """Absolute step indices of perturbations (Bernoulli(p) per step),
    generated from geometric gaps in batches."""

    def __init__(self, gen: np.random.Generator, p: float, batch: int = 1 << 16):
        self.gen, self.p, self.batch = gen, p, batch
        self.buf = np.zeros(0, dtype=np.int64)
        self.last = -1

    def take(self, upto: int) -> np.ndarray:
        """Pop all pending event steps ``< upto``."""
        if self.p <= 0:
            return np.zeros(0, dtype=np.int64)
        while self.last < upto:
            gaps = self.gen.geometric(self.p, size=self.batch).astype(np.int64)
            pos = self.last + np.cumsum(gaps)
            self.buf = np.concatenate([self.buf, pos])
            self.last = int(pos[-1])
        k = int(np.searchsorted(self.buf, upto))
        out, self.buf = self.buf[:k], self.buf[k:]
        return out


def run_exchange(
    econ: ExchangeEconomy,
    steps: int,
    seed: int,
    snapshots: int | None = None,
    chunk_snapshots: int = 256,
    min_snapshots: int = MIN_SNAPSHOTS,
) -> ExchangeRun:
    """Simulate up to ``steps`` exchanges; the first 10% are burn-in.

    With ``snapshots`` given, stop as soon as that many snapshots have been
    kept (``steps`` is then a cap).
    """
    n = econ.n_agents
    stride = econ.snapshot_stride
    burn = int(BURN_IN * steps)
    x = np.full(n, econ.h / n)
    starts = np.array([c[0] for c in econ.cities], dtype=np.int64)
    sizes = np.array([c[1] for c in econ.cities], dtype=np.int64)
    # modes use disjoint streams so matched runs are statistically independent
    lane = 0 if econ.mode == "a" else 1
    ex_gen = rng.stream(seed, 5, lane, 0)
    events = _EventTimes(rng.stream(seed, 5, lane, 1), econ.perturb_prob)
    agent_gen = rng.stream(seed, 5, lane, 2)
    amount_gen = rng.stream(seed, 5, lane, 3)
    lo = econ.h - (econ.delta or 0.0) / 2.0
    hi = econ.h + (econ.delta or 0.0) / 2.0

    kept_city: list[np.ndarray] = []
    kept_total: list[np.ndarray] = []
    all_totals: list[np.ndarray] = []
    n_kept = 0
    done = 0
    phase = 0
    max_drift = 0.0
    empty = np.zeros(0, dtype=np.int64)
    while done < steps:
        if snapshots is not None and n_kept >= snapshots:
            break
        # bounded chunks keep memory flat; the word stream is consumed in order either way
        todo = min(steps - done, chunk_snapshots * stride)
        if done < burn:
            todo = min(todo, burn - done)
        words = rng.raw_words(ex_gen, 2 * todo)
        if econ.mode == "b":
            ev_step = events.take(done + todo) - done
            m = ev_step.size
            ev_agent = agent_gen.integers(0, n, size=m).astype(np.int64)
            ev_amount = amount_gen.uniform(-econ.epsilon, econ.epsilon, size=m)
        else:
            ev_step, ev_agent, ev_amount = empty, empty, np.zeros(0)
        record = done >= burn
        cap = todo // stride + 1
        out_city = np.empty((cap, starts.size))
        out_total = np.empty(cap)
        s_stride = stride if record else todo + 1
        got, new_phase = _exchange_chunk(
            x, words, todo, ev_step, ev_agent, ev_amount, starts, sizes, s_stride, phase if record else 0, out_city, out_total
        )
        phase = new_phase if record else 0
        done += todo
        if got:
            tot = out_total[:got]
            all_totals.append(tot.copy())
            if econ.mode == "a":
                max_drift = max(max_drift, float(np.max(np.abs(tot - econ.h))))
                sel = np.ones(got, dtype=bool)
            else:
                sel = (tot > lo) & (tot <= hi)
            kept_city.append(out_city[:got][sel])
            kept_total.append(tot[sel])
            n_kept += int(sel.sum())
    taken = int(sum(t.size for t in all_totals))
    city = np.concatenate(kept_city) if kept_city else np.zeros((0, starts.size))
    if snapshots is not None:
        city = city[:snapshots]
    if city.shape[0] < min_snapshots:
        raise InsufficientAcceptedSnapshots(
            f"{city.shape[0]} snapshots kept (< {min_snapshots}); widen delta or run longer"
        )
    hists = [make_histogram(city[:, c].copy(), econ, econ.cities[c]) for c in range(starts.size)]
    totals = np.concatenate(all_totals) if all_totals else np.zeros(0)
    return ExchangeRun(hists, done, taken, int(city.shape[0]), totals, max_drift)


def compare_ab(a: SubsystemHistogram, b: SubsystemHistogram) -> dict:
    """Total variation, symmetrized KL (over bins occupied in both), and the
    difference of fitted rates with pooled standard error."""
    if a.edges.shape != b.edges.shape or not np.array_equal(a.edges, b.edges):
        raise BinningMismatch("histograms use different bin edges")
    if a.city != b.city or a.h != b.h:
        raise BinningMismatch("histograms describe different cities or totals")
    pa, pb = a.masses, b.masses
    tv = 0.5 * float(np.abs(pa - pb).sum())
    both = (pa > 0) & (pb > 0)
    qa, qb = pa[both] / pa[both].sum(), pb[both] / pb[both].sum()
    skl = float(np.sum((qa - qb) * np.log(qa / qb)))
    se = math.hypot(a.beta_se, b.beta_se)
    return {
        "tv": tv,
        "skl": skl,
        "beta_a": a.beta_hat,
        "beta_b": b.beta_hat,
        "beta_diff": a.beta_hat - b.beta_hat,
        "se": se,
        "z": (a.beta_hat - b.beta_hat) / se if se > 0 else 0.0,
        "bins_dropped": int((~both & ((pa > 0) | (pb > 0))).sum()),
    }


def log_ratio_fit(hist: SubsystemHistogram, prior_logpdf, min_count: int = 20) -> dict:
    """Least-squares line through ``ln(hist / prior)`` on bins with at least
    ``min_count`` samples; returns slope and R^2."""
    centers = 0.5 * (hist.edges[1:] + hist.edges[:-1])
    ok = hist.counts >= min_count
    if ok.sum() < 3:
        raise EmptySampleSet("fewer than 3 populated bins")
    width = np.diff(hist.edges)
    y = np.log(hist.counts[ok] / (hist.n * width[ok])) - prior_logpdf(centers[ok])
    x = centers[ok]
    w = hist.counts[ok].astype(float)
    coef = np.polyfit(x, y, 1, w=np.sqrt(w))
    fit = np.polyval(coef, x)
    ybar = np.average(y, weights=w)
    ss_res = float(np.sum(w * (y - fit) ** 2))
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    return {"slope": float(coef[0]), "r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0, "bins": int(ok.sum())}


def city_layout(n_agents: int, sizes: Sequence[int]) -> tuple[tuple[int, int], ...]:
    """Consecutive disjoint cities of the given sizes from agent 0."""
    out, start = [], 0
    for s in sizes:
        out.append((start, int(s)))
        start += int(s)
    if start > n_agents:
        raise ValueError("cities exceed the population")
    return tuple(out)
