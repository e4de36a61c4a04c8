"""Named experiments behind the command line.

Each experiment takes resolved parameters, a seed, a worker count and an
output sink; it writes CSV/JSON files and returns a list of
``(name, passed, detail)`` assertions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Callable

import numpy as np
from scipy import stats

from . import counting, exchange, limit_law, phase_space, rng, thermo
from .conditional import exact_conditional_continuous, independent_joint, shell_conditional
from .density import Density1D, Exponential, Gamma, normalize, pmf_total_variation
from .errors import ConfigError

Assertion = tuple[str, bool, str]


@dataclass(frozen=True)
class Param:
    default: Any
    kind: type | tuple
    doc: str


@dataclass(frozen=True)
class Experiment:
    name: str
    anchor: str
    params: dict[str, Param]
    run: Callable


REGISTRY: dict[str, Experiment] = {}


def experiment(name: str, anchor: str, **params: Param):
    def deco(fn):
        REGISTRY[name] = Experiment(name, anchor, params, fn)
        return fn

    return deco


def _gamma(shape: float, scale: float) -> Density1D:
    if shape == 1.0:
        return Density1D.from_family(Exponential(1.0 / scale))
    return Density1D.from_family(Gamma(shape, scale))


def _check(name: str, ok: bool, detail: str) -> Assertion:
    return (name, bool(ok), detail)


# ---------------------------------------------------------------- continuous laws


@experiment(
    "conditional",
    "exact conditional law of X given X+Y=h (ground truth)",
    x_shape=Param(2.0, float, "Gamma shape of X"),
    x_scale=Param(1.0, float, "Gamma scale of X"),
    y_shape=Param(3.0, float, "Gamma shape of Y"),
    y_scale=Param(1.0, float, "Gamma scale of Y"),
    h=Param(1.0, float, "conditioning level"),
    delta=Param(0.0, float, "shell width (0 for exact-level conditioning)"),
    points=Param(2048, int, "grid points"),
)
def run_conditional(p, seed, workers, sink):
    joint = independent_joint(_gamma(p["x_shape"], p["x_scale"]), _gamma(p["y_shape"], p["y_scale"]))
    cond = exact_conditional_continuous(joint, p["h"], p["points"])
    law = cond.density
    x = law.grid
    cols = {"x": x, "exact": law.pdf(x)}
    checks = []
    if p["delta"] > 0:
        shell = shell_conditional(joint, p["h"], p["delta"], p["points"]).density
        cols["shell"] = shell.pdf(x)
    if p["x_scale"] == p["y_scale"]:
        # independent gammas with a common scale: Beta(a, b) on [0, h]
        ref = stats.beta(p["x_shape"], p["y_shape"], scale=p["h"]).pdf(x)
        cols["beta_closed_form"] = ref
        interior = (x > 0) & (x < p["h"])
        err = float(np.max(np.abs(cols["exact"][interior] - ref[interior])))
        checks.append(_check("beta_closed_form", err < 1e-6, f"max abs error {err:.3e}"))
    sink.csv("conditional.csv", cols)
    sink.json("conditional.json", {"h": p["h"], "log_evidence": cond.log_evidence})
    return checks


@experiment(
    "limit-law",
    "tilted canonical form and psi(h)",
    x_shape=Param(2.0, float, "Gamma shape of X"),
    y_shape=Param(3.0, float, "Gamma shape of the bath Y"),
    y_scale=Param(1.0, float, "Gamma scale of Y"),
    h=Param(4.0, float, "conditioning level"),
    points=Param(2048, int, "grid points"),
)
def run_limit_law(p, seed, workers, sink):
    f_x = _gamma(p["x_shape"], 1.0)
    joint = independent_joint(f_x, _gamma(p["y_shape"], p["y_scale"]))
    law = limit_law.asymptotic_conditional(f_x, joint, p["h"])
    psi = law.meta["psi"]
    psi_exact = (p["y_shape"] - 1.0) / p["h"] - 1.0 / p["y_scale"]
    x = np.linspace(0.0, p["h"], p["points"])[1:-1]
    ratio = law.density.logpdf(x) - f_x.logpdf(x)
    slope, icept = (float(v) for v in np.polyfit(x, ratio, 1))
    fit = slope * x + icept
    r2 = float(1.0 - np.sum((ratio - fit) ** 2) / np.sum((ratio - ratio.mean()) ** 2))
    exact = exact_conditional_continuous(joint, p["h"], p["points"]).density
    sink.csv("limit_law.csv", {"x": x, "log_ratio": ratio, "asymptotic": law.density.pdf(x), "exact": exact.pdf(x)})
    sink.json("limit_law.json", {"psi": psi, "psi_analytic": psi_exact, "slope": slope, "r2": r2})
    return [
        _check("log_ratio_linear", r2 > 1 - 1e-10, f"R^2 = {r2!r}"),
        _check("slope_is_minus_psi", abs(slope + psi) < 1e-6, f"slope {slope!r}, psi {psi!r}"),
        _check("psi_matches_bath", abs(psi - psi_exact) < 1e-6, f"psi {psi!r} vs {psi_exact!r}"),
    ]


@experiment(
    "convergence",
    "O(n^{-2/3}) rate of KL(exact || asymptotic) along X_n = X/n",
    n=Param([10, 30, 100, 300, 1000], list, "system-size sequence"),
    h=Param(4.0, float, "conditioning level"),
    x_rate=Param(1.0, float, "rate of X ~ Exponential"),
    y_shape=Param(5.0, float, "Gamma shape of the bath Y"),
    points=Param(2048, int, "grid points"),
    slope_bound=Param(-2.0 / 3.0 + 0.2, float, "required upper bound on the log-log slope"),
)
def run_convergence(p, seed, workers, sink):
    base = independent_joint(Density1D.from_family(Exponential(p["x_rate"])), _gamma(p["y_shape"], 1.0))
    seq = limit_law.SmallSystemSequence(base, [int(n) for n in p["n"]])
    rep = limit_law.convergence_study(seq, p["h"], p["points"])
    sink.csv("convergence.csv", {"n": rep.ns, "kl": rep.kls})
    sink.json("convergence.json", rep.summary())
    return [
        _check("strictly_decreasing", rep.strictly_decreasing(), f"kl = {[float(k) for k in rep.kls]}"),
        _check("slope_bound", rep.slope <= p["slope_bound"], f"slope {rep.slope:.4f} <= {p['slope_bound']:.4f}"),
    ]


# ---------------------------------------------------------------- counting


@experiment(
    "counting",
    "tilted pmf Q^{-1} p_K e^{mu k}; spatial Poisson counting",
    k_rate=Param(2.0, float, "K ~ Poisson(k_rate)"),
    bath_rate=Param(3.0, float, "L_n ~ Poisson(n bath_rate)"),
    n=Param(1000, int, "bath size"),
    tv_tol=Param(1e-2, float, "total-variation tolerance"),
    spatial_particles=Param(10000, int, "particles placed in the total region"),
    spatial_ratio=Param(1e-3, float, "|B|/|D|"),
    spatial_samples=Param(100000, int, "independent placements (0 to skip)"),
)
def run_counting(p, seed, workers, sink):
    n = p["n"]
    m = int(round(p["k_rate"] + n * p["bath_rate"]))
    p_k = counting.poisson_pmf(p["k_rate"], m)
    pair = counting.CountingPair(p_k, counting.PoissonBath(p["bath_rate"]))
    exact = pair.exact_conditional(n, m).pmf
    mu = counting.mu_n(pair, m / n, n)
    tilted = counting.asymptotic_conditional_pmf(p_k, mu, m)
    tv = pmf_total_variation(exact, tilted)
    k = np.arange(m + 1)
    sink.csv("counting.csv", {"k": k, "exact": exact.p, "tilted": tilted.p})
    # 1/k! prior tilted by ln(lambda) is the truncated Poisson(lambda)
    lam = p["k_rate"]
    trunc = counting.asymptotic_conditional_pmf(counting.inverse_factorial_prior(m), math.log(lam), m)
    pois = stats.poisson.pmf(k, lam)
    pois /= pois.sum()
    poisson_err = float(np.max(np.abs(trunc.p - pois)))
    summary = {"m": m, "mu": mu, "tv": tv, "inverse_factorial_max_error": poisson_err}
    checks = [
        _check("tilted_vs_exact", tv < p["tv_tol"], f"tv {tv:.3e}"),
        _check("inverse_factorial_prior", poisson_err < 1e-12, f"max error {poisson_err:.3e}"),
    ]
    if p["spatial_samples"] > 0:
        regions = counting.RegionPair(p["spatial_ratio"], 1.0, p["spatial_particles"])
        emp = counting.spatial_poisson_counts(regions, p["spatial_samples"], seed, workers=workers)
        lam_s = p["spatial_particles"] * p["spatial_ratio"]
        ref = counting.DiscretePMF(stats.poisson.pmf(np.arange(emp.n_max + 1), lam_s))
        tv_s = 0.5 * float(np.abs(emp.p - ref.p).sum() + (1.0 - ref.p.sum()))
        sink.csv("spatial_counts.csv", {"k": np.arange(emp.n_max + 1), "empirical": emp.p, "poisson": ref.p})
        summary.update({"spatial_tv": tv_s, "spatial_mean": emp.mean()})
        checks.append(_check("spatial_poisson", tv_s < 0.01, f"tv {tv_s:.4f}"))
    sink.json("counting.json", summary)
    return checks


@experiment(
    "gibbs-paradox",
    "k! from the prior p_K(k) proportional to 1/k! versus labelled particles",
    particles=Param(100, int, "total particle count N"),
    volume_small=Param(1.0, float, "|B|"),
    volume_total=Param(100.0, float, "|D|"),
    enforce_small=Param(True, bool, "require |B| <= 0.05 |D|"),
)
def run_gibbs(p, seed, workers, sink):
    regions = counting.RegionPair(p["volume_small"], p["volume_total"], p["particles"], p["enforce_small"])
    rep = counting.gibbs_paradox_demo(regions, seed=seed)
    sink.json("gibbs_paradox.json", rep)
    checks = [_check("kl_nonnegative", rep["kl"] >= -1e-12, f"kl {rep['kl']:.3e}")]
    if p["particles"] == 1:
        checks.append(_check("coincide_at_one", abs(rep["kl"]) <= 1e-12, f"kl {rep['kl']:.3e}"))
    return checks


@experiment(
    "colonies",
    "two colonies with migration: conditional count given the total",
    birth_small=Param(25.0, float, "per-capita birth rate, small colony"),
    birth_large=Param(1.0, float, "per-capita birth rate, large colony"),
    cap_small=Param(20.0, float, "carrying capacity, small colony"),
    cap_large=Param(1000.0, float, "carrying capacity, large colony"),
    migrate_out=Param(0.05, float, "per-capita migration small -> large"),
    migrate_in=Param(None, (float, type(None)), "per-capita migration large -> small (default: balanced fluxes)"),
    t_max=Param(4000.0, float, "simulated time"),
    max_events=Param(50_000_000, int, "event cap"),
    tv_tol=Param(0.05, float, "total-variation tolerance"),
)
def run_colonies(p, seed, workers, sink):
    mig_in = p["migrate_in"]
    if mig_in is None:
        mig_in = p["migrate_out"] * p["cap_small"] / p["cap_large"]
    model = counting.ColonyModel(
        p["birth_small"], p["birth_large"], p["cap_small"], p["cap_large"], p["migrate_out"], mig_in
    )
    res = counting.colony_simulation(model, p["t_max"], seed, max_events=p["max_events"])
    top = int(max(np.nonzero(res.conditional.p)[0].max(), np.nonzero(res.marginal_k.p)[0].max())) + 1
    k = np.arange(top)
    sink.csv(
        "colonies.csv",
        {
            "k": k,
            "conditional": res.conditional.padded(top - 1)[:top],
            "predicted": res.predicted.padded(max(top - 1, res.predicted.n_max))[:top],
            "marginal": res.marginal_k.padded(top - 1)[:top],
        },
    )
    sink.json(
        "colonies.json",
        {"target": res.target, "mu": res.mu, "tv": res.tv, "tv_marginal": res.meta["tv_marginal"], "events": res.events},
    )
    return [_check("tilted_prediction", res.tv < p["tv_tol"], f"tv {res.tv:.4f} over {res.events} events")]


# ---------------------------------------------------------------- phase space


@experiment(
    "shell",
    "subsystem law on an energy shell",
    family=Param("harmonic", str, "harmonic | quartic | mixed"),
    n1=Param(2, int, "subsystem coordinates"),
    n2=Param(200, int, "bath coordinates"),
    h=Param(100.0, float, "shell energy"),
    delta=Param(1.0, float, "shell width"),
    samples=Param(100000, int, "accepted samples"),
    proposal=Param("sublevel", str, "rejection proposal for non-harmonic families: sublevel | box"),
    ks_tol=Param(0.02, float, "KS tolerance"),
    dos_samples=Param(400000, int, "Monte Carlo samples for a non-harmonic bath density of states"),
)
def run_shell(p, seed, workers, sink):
    ham = phase_space.SeparableHamiltonian(p["family"], p["n1"], p["n2"])
    s = phase_space.sample_energy_shell(ham, p["h"], p["delta"], p["samples"], seed, proposal=p["proposal"])
    if ham.p2 == 2.0:
        psi, _ = phase_space.bath_psi(ham, p["h"])
    else:
        psi, _ = phase_space.bath_psi(ham, p["h"], samples=p["dos_samples"], method="sublevel", seed=seed)
    psi_pred = (p["n2"] / ham.p2 - 1.0) / p["h"]
    canon = phase_space.canonical_for(ham, p["h"], psi)
    ks = phase_space.ks_distance(s.u1, canon.cdf)
    sink.csv("shell.csv", {"u1": s.u1})
    sink.json(
        "shell.json",
        {
            "h": p["h"], "delta": p["delta"], "n1": p["n1"], "n2": p["n2"], "ks": ks,
            "psi_measured": psi, "psi_predicted": psi_pred, "acceptance": s.acceptance_rate, "sampler": s.sampler,
        },
    )
    return [
        _check("shell_membership", bool(s.in_shell().all()), f"{s.count} samples"),
        _check("ks_canonical", ks < p["ks_tol"], f"ks {ks:.4f}"),
    ]


# ---------------------------------------------------------------- thermodynamics


def _entropy(p) -> thermo.ExtensiveEntropy:
    if p["entropy"] == "log":
        return thermo.ExtensiveEntropy.log(p["c"], 1.0)
    if p["entropy"] == "mixing":
        return thermo.ExtensiveEntropy.mixing(1.0)
    raise ConfigError(f"entropy must be 'log' or 'mixing', got {p['entropy']!r}")


@experiment(
    "legendre",
    "free energy by Legendre transform versus -ln Z / beta",
    entropy=Param("log", str, "log (s = c ln e) | mixing (s = e - e ln e)"),
    c=Param(1.5, float, "coefficient of the log entropy"),
    beta=Param(1.0, float, "inverse temperature"),
    volumes=Param([100, 1000, 10000], list, "system sizes"),
    gap_tol=Param(0.01, float, "bound on gap/V at V = 1000"),
)
def run_legendre(p, seed, workers, sink):
    reps = thermo.volume_sweep(_entropy(p), p["beta"], [float(v) for v in p["volumes"]])
    sink.csv_rows("legendre.csv", list(thermo.sweep_csv_rows(reps)))
    sink.json("legendre.json", {"reports": [r.to_dict() for r in reps]})
    gpv = [r.gap_per_volume for r in reps]
    checks = [_check("gap_per_volume_decreasing", all(b < a + 1e-12 for a, b in zip(gpv, gpv[1:])), f"{gpv}")]
    for r in reps:
        if r.volume == 1000.0:
            checks.append(_check("gap_at_1000", r.gap_per_volume < p["gap_tol"], f"{r.gap_per_volume:.4e}"))
    return checks


@experiment(
    "fluctuation",
    "var[Y] var[beta(Y)] >= (1 - f(0) E[Y])^2 and E[Y^2] E[beta^2] >= 1",
    family=Param("exponential", str, "exponential | gamma"),
    **{"lambda": Param(1.0, float, "exponential rate")},
    shape=Param(3.0, float, "gamma shape"),
    scale=Param(1.0, float, "gamma scale"),
)
def run_fluctuation(p, seed, workers, sink):
    if p["family"] == "exponential":
        f = Density1D.from_family(Exponential(p["lambda"]))
    elif p["family"] == "gamma":
        f = Density1D.from_family(Gamma(p["shape"], p["scale"]))
    else:
        raise ConfigError(f"family must be 'exponential' or 'gamma', got {p['family']!r}")
    rep = thermo.fluctuation_bounds(f)
    sink.json("fluctuation.json", rep)
    checks = [_check("inequalities_hold", rep["holds"], f"lhs {rep['lhs']!r} rhs {rep['rhs']!r}")]
    if p["family"] == "exponential":
        ok = abs(rep["lhs"]) <= 1e-12 and abs(rep["rhs"]) <= 1e-12
        checks.append(_check("equality_case", ok, f"lhs {rep['lhs']:.3e} rhs {rep['rhs']:.3e}"))
    return checks


def random_family(gen: np.random.Generator) -> Density1D:
    if gen.random() < 0.5:
        return Density1D.from_family(Exponential(float(gen.uniform(0.2, 5.0))))
    return Density1D.from_family(Gamma(float(gen.uniform(1.0, 6.0)), float(gen.uniform(0.3, 3.0))))


@experiment(
    "kl-bound",
    "int f ln(f/g) >= -ln int g for non-normalized g",
    pairs=Param(50, int, "randomized (f, g) pairs"),
)
def run_kl_bound(p, seed, workers, sink):
    gen = rng.stream(seed, 6)
    rows = [["pair", "lhs", "rhs", "slack", "kl_to_normalized", "scale"]]
    worst = math.inf
    ident = 0.0
    for i in range(p["pairs"]):
        f = random_family(gen)
        g = random_family(gen)
        c = float(np.exp(gen.uniform(-3.0, 3.0)))
        g = _rescale(g, c)
        rep = thermo.kl_lower_bound_check(f, g)
        worst = min(worst, rep["slack"])
        ident = max(ident, abs(rep["slack"] - rep["kl_to_normalized"]))
        rows.append([i, rep["lhs"], rep["rhs"], rep["slack"], rep["kl_to_normalized"], c])
    g_eq = _rescale(Density1D.from_family(Gamma(2.0, 1.0)), 3.0)
    eq = thermo.kl_lower_bound_check(normalize(g_eq), g_eq)
    sink.csv_rows("kl_bound.csv", rows)
    sink.json("kl_bound.json", {"min_slack": worst, "max_identity_error": ident, "equality_slack": eq["slack"]})
    return [
        _check("bound_holds", worst >= -1e-9, f"min slack {worst:.3e}"),
        _check("slack_is_kl", ident <= 1e-8, f"max |slack - KL| {ident:.3e}"),
        _check("equality_case", abs(eq["slack"]) <= 1e-8, f"slack {eq['slack']:.3e}"),
    ]


def _rescale(d: Density1D, c: float) -> Density1D:
    return replace(d, log_scale=d.log_scale + math.log(c))


# ---------------------------------------------------------------- exchange


def _economy(p, mode: str, delta: float | None) -> exchange.ExchangeEconomy:
    n = p["agents"]
    cities = exchange.city_layout(n, p["cities"])
    h = p["h"] if p["h"] is not None else float(n)
    eps = p["eps"] * h / n
    return exchange.ExchangeEconomy(n, h, cities, mode, delta, p["perturb_prob"], eps, p["stride"])


_EXCHANGE_PARAMS = dict(
    agents=Param(10000, int, "number of agents N"),
    h=Param(None, (float, type(None)), "conserved total (default N)"),
    cities=Param([1, 50, 50], list, "city sizes (disjoint blocks)"),
    snapshots=Param(100000, int, "snapshots kept per run"),
    delta=Param(0.01, float, "selection width as a fraction of h (mode b)"),
    eps=Param(0.001, float, "perturbation half-width in units of h/N (mode b)"),
    perturb_prob=Param(0.1, float, "perturbation probability per step (mode b)"),
    stride=Param(None, (int, type(None)), "snapshot stride (default N)"),
)


def _steps(p) -> int:
    stride = p["stride"] or p["agents"]
    return int(math.ceil(p["snapshots"] * stride / (1.0 - exchange.BURN_IN))) + stride


def _hist_rows(hists) -> list:
    rows = [["city", "bin_left", "bin_right", "mass"]]
    for c, hst in enumerate(hists):
        for r in list(hst.csv_rows())[1:]:
            rows.append([c, *r])
    return rows


@experiment(
    "exchange",
    "kinetic exchange: common beta across small cities",
    mode=Param("a", str, "a (conserved) | b (open, selected on the total)"),
    **_EXCHANGE_PARAMS,
)
def run_exchange_exp(p, seed, workers, sink):
    econ = _economy(p, p["mode"], p["delta"] * (p["h"] or p["agents"]) if p["mode"] == "b" else None)
    run = exchange.run_exchange(econ, _steps(p) * (3 if p["mode"] == "b" else 1), seed, snapshots=p["snapshots"])
    sink.csv_rows("exchange.csv", _hist_rows(run.histograms))
    betas = [(hst.beta_hat, hst.beta_se) for hst in run.histograms]
    sink.json(
        "exchange.json",
        {"beta": [b for b, _ in betas], "se": [s for _, s in betas], "acceptance": run.acceptance,
         "max_drift": run.max_drift, "expected_beta": econ.n_agents / econ.h},
    )
    checks = []
    if p["mode"] == "a":
        checks.append(_check("conservation", run.max_drift <= 1e-9 * max(1.0, econ.h), f"drift {run.max_drift:.3e}"))
    checks.extend(_common_beta(run.histograms))
    return checks


def _common_beta(hists) -> list[Assertion]:
    out = []
    for a, b in zip(hists, hists[1:]):
        if a.size == b.size:
            z = abs(a.beta_hat - b.beta_hat) / math.hypot(a.beta_se, b.beta_se)
            out.append(_check(f"common_beta_cities_{a.city[0]}_{b.city[0]}", z < 2.0, f"z = {z:.3f}"))
    return out


@experiment(
    "compare-ab",
    "conserved total (a) versus selection on the total (b)",
    tv_tol=Param(0.02, float, "total-variation tolerance"),
    z_tol=Param(3.0, float, "beta difference in pooled standard errors"),
    **_EXCHANGE_PARAMS,
)
def run_compare(p, seed, workers, sink):
    h = p["h"] if p["h"] is not None else float(p["agents"])
    ea = _economy(p, "a", None)
    eb = _economy(p, "b", p["delta"] * h)
    steps = _steps(p)
    ra = exchange.run_exchange(ea, steps, seed, snapshots=p["snapshots"])
    rb = exchange.run_exchange(eb, 3 * steps, seed, snapshots=p["snapshots"])
    reports = [exchange.compare_ab(a, b) for a, b in zip(ra.histograms, rb.histograms)]
    sink.csv_rows("compare_a.csv", _hist_rows(ra.histograms))
    sink.csv_rows("compare_b.csv", _hist_rows(rb.histograms))
    sink.json("compare_ab.json", {"cities": reports, "acceptance_b": rb.acceptance})
    checks = []
    for c, r in enumerate(reports):
        checks.append(_check(f"tv_city_{c}", r["tv"] < p["tv_tol"], f"tv {r['tv']:.4f}"))
        checks.append(_check(f"beta_city_{c}", abs(r["z"]) < p["z_tol"], f"z {r['z']:.3f}"))
    checks.extend(_common_beta(ra.histograms))
    return checks
