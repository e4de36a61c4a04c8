"""Deterministic 1-D quadrature.

Adaptive Simpson here is breadth-first: every unconverged panel of a level is
refined in one vectorized call, so integrands must accept numpy arrays.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from .errors import NonIntegrable

ABS_TOL = 1e-10
MAX_DEPTH = 50
_MAX_EVALS = 20_000_000


def adaptive_simpson(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = ABS_TOL,
    max_depth: int = MAX_DEPTH,
    initial: int = 16,
    breakpoints: Iterable[float] = (),
    open_ends: bool = False,
) -> float:
    """Integrate ``f`` over ``[a, b]`` to absolute tolerance ``tol``.

    Parameters
    ----------
    f : callable
        Vectorized integrand.
    a, b : float
        Finite limits, ``a <= b``.
    tol : float
        Absolute error target for the whole interval; each panel receives a
        share proportional to its width.
    max_depth : int
        Maximum number of bisections of any initial panel.  Reaching it with
        an unconverged panel raises ``NonIntegrable``.
    initial : int
        Uniform panels per breakpoint segment before refinement starts.
    breakpoints : iterable of float
        Extra panel edges (kinks, peaks).  Points outside ``(a, b)`` are ignored.
    open_ends : bool
        Pull both endpoints inward by ``1e-13 * (b - a)`` so integrands that are
        singular only at an endpoint (log-type) can be handled.
    """
    if not (np.isfinite(a) and np.isfinite(b)):
        raise NonIntegrable(f"infinite limits [{a}, {b}]")
    if b < a:
        return -adaptive_simpson(f, b, a, tol, max_depth, initial, breakpoints, open_ends)
    if b == a:
        return 0.0
    if open_ends:
        eps = 1e-13 * (b - a)
        a, b = a + eps, b - eps

    edges = sorted({a, b, *(float(p) for p in breakpoints if a < p < b)})
    lo = np.concatenate([np.linspace(l, r, initial + 1)[:-1] for l, r in zip(edges[:-1], edges[1:])])
    hi = np.concatenate([np.linspace(l, r, initial + 1)[1:] for l, r in zip(edges[:-1], edges[1:])])
    mid = 0.5 * (lo + hi)
    fa, fm, fb = _eval(f, lo), _eval(f, mid), _eval(f, hi)
    whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)
    ptol = tol * (hi - lo) / (b - a)

    total = 0.0
    evals = 3 * lo.size
    for _ in range(max_depth + 1):
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        fl, fr = _eval(f, lm), _eval(f, rm)
        evals += 2 * lo.size
        left = (mid - lo) / 6.0 * (fa + 4.0 * fl + fm)
        right = (hi - mid) / 6.0 * (fm + 4.0 * fr + fb)
        err = left + right - whole
        done = np.abs(err) <= 15.0 * ptol
        total += float(np.sum((left + right + err / 15.0)[done]))
        keep = ~done
        if not keep.any():
            return total
        if evals > _MAX_EVALS:
            break
        lo, mid, hi = lo[keep], mid[keep], hi[keep]
        fa, fm, fb, fl, fr = fa[keep], fm[keep], fb[keep], fl[keep], fr[keep]
        left, right, ptol = left[keep], right[keep], ptol[keep] / 2.0
        lm, rm = lm[keep], rm[keep]
        lo, mid, hi = np.concatenate([lo, mid]), np.concatenate([lm, rm]), np.concatenate([mid, hi])
        fa, fm, fb = np.concatenate([fa, fm]), np.concatenate([fl, fr]), np.concatenate([fm, fb])
        whole = np.concatenate([left, right])
        ptol = np.concatenate([ptol, ptol])
    raise NonIntegrable(
        f"adaptive Simpson did not converge on [{a}, {b}] "
        f"({lo.size} panels left, residual {float(np.sum(np.abs(whole))):.3g})"
    )


def _eval(f, x: np.ndarray) -> np.ndarray:
    y = np.asarray(f(x), dtype=float)
    if y.shape != x.shape:
        y = np.broadcast_to(y, x.shape).astype(float)
    if not np.all(np.isfinite(y)):
        bad = x[~np.isfinite(y)][0]
        raise NonIntegrable(f"integrand is not finite at x={bad!r}")
    return y


def trapezoid(y: np.ndarray, dx: float) -> float:
    return float(np.trapezoid(y, dx=dx))


def trapezoid_weights(m: int, dx: float) -> np.ndarray:
    w = np.full(m, dx)
    w[0] = w[-1] = dx / 2.0
    return w


@lru_cache(maxsize=8)
def _gl(order: int):
    return np.polynomial.legendre.leggauss(order)


def gauss_legendre(f, lo: np.ndarray, hi: np.ndarray, panels: int = 16, order: int = 16) -> np.ndarray:
    """Composite Gauss-Legendre over many intervals at once.

    ``lo`` and ``hi`` are arrays of interval limits; ``f`` is called with an
    array of shape ``lo.shape + (panels * order,)`` of abscissae and must
    return values of the same shape.  Returns one integral per interval.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    nodes, weights = _gl(order)
    width = (hi - lo) / panels
    starts = lo[..., None] + width[..., None] * np.arange(panels)
    x = starts[..., None] + 0.5 * width[..., None, None] * (nodes + 1.0)
    x = x.reshape(lo.shape + (panels * order,))
    y = np.asarray(f(x), dtype=float)
    w = np.tile(weights, panels) * 0.5
    return np.sum(y * w, axis=-1) * width


def golden_section_max(f, a: float, b: float, tol: float) -> float:
    """Maximizer of a unimodal scalar function on ``[a, b]``."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)
