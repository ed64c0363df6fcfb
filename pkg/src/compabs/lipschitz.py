"""Lipschitz constants from sampled slopes via a reverse Weibull fit.

Batches of nearby point pairs give maximum slopes; the maxima are fitted by a
three-parameter reverse Weibull distribution whose location (upper support
end) is the estimate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .geometry import Box

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class WeibullFit(NamedTuple):
    location: float
    scale: float
    shape: float
    degenerate: bool = False


@dataclass(frozen=True)
class LipschitzEstimate:
    value: float
    scale: float
    shape: float
    delta: float
    batches: int
    pairs: int
    seed: int
    degenerate: bool = False

    def as_row(self) -> list[float]:
        return [self.value, self.scale, self.shape]


def _weibull_shape(logy: np.ndarray, k0: float = 1.0) -> float:
    """Shape maximizing the Weibull likelihood with the scale profiled out."""
    n = logy.size
    total = logy.sum()
    c = logy.max()
    ls = logy - c  # shift keeps exp() bounded

    def score(k):
        t = np.exp(k * ls)
        st = t.sum()
        m1 = (t * ls).sum() / st
        m2 = (t * ls * ls).sum() / st
        g = n / k + total - n * (m1 + c)
        dg = -n / k**2 - n * (m2 - m1 * m1)
        return g, dg

    # the score is decreasing in k: keep a bracket around Newton steps
    lo, hi = 1e-3, 1e3
    k = min(max(k0, lo), hi)
    for _ in range(200):
        g, dg = score(k)
        if g > 0:
            lo = k
        else:
            hi = k
        k_new = k - g / dg
        if not (lo < k_new < hi) or not np.isfinite(k_new):
            k_new = np.sqrt(lo * hi)
        if abs(k_new - k) <= 1e-12 * max(1.0, k) or hi - lo <= 1e-12 * hi:
            k = k_new
            break
        k = k_new
    return float(k)


def _profile_loglik(samples: np.ndarray, mu: float):
    y = np.maximum(mu - samples, np.finfo(float).tiny)
    logy = np.log(y)
    k = _weibull_shape(logy)
    c = logy.max()
    log_mean = np.log(np.mean(np.exp(k * (logy - c)))) + k * c  # log mean(y^k)
    lam = np.exp(log_mean / k)
    n = samples.size
    ll = n * np.log(k) - n * log_mean + (k - 1.0) * logy.sum() - n
    return float(ll), float(lam), k


def fit_reverse_weibull(maxima: Sequence[float]) -> WeibullFit:
    """Maximum-likelihood reverse Weibull fit, support ``(-inf, location]``."""
    x = np.asarray(maxima, dtype=float).ravel()
    if x.size < 3:
        raise ValueError("reverse Weibull fit needs at least 3 samples")
    top = float(x.max())
    spread = float(x.max() - x.min())
    if spread <= 1e-9 * max(1.0, abs(top)):
        return WeibullFit(top, 0.0, float("nan"), True)

    std = float(x.std())
    eps = max(1e-9 * spread, 16 * np.spacing(top))
    a, b = top + eps, top + 3.0 * std

    def neg(mu):
        return -_profile_loglik(x, mu)[0]

    # coarse scan guards against a multimodal profile, golden section refines
    grid = a + (b - a) * np.linspace(0.0, 1.0, 25) ** 2
    vals = np.array([neg(m) for m in grid])
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = neg(c), neg(d)
    for _ in range(200):
        if hi - lo <= 1e-12 * max(1.0, abs(top)):
            break
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = neg(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = neg(d)
    mu = 0.5 * (lo + hi)
    if vals[i] < neg(mu):
        mu = float(grid[i])
    mu = max(mu, top)
    _, lam, k = _profile_loglik(x, max(mu, a))
    return WeibullFit(float(mu), lam, k, False)


def _draw_pairs(rng, domain: Box, delta: float, n: int, mask: np.ndarray):
    x = domain.sample(rng, n)
    lo = np.where(mask, np.maximum(domain.lower, x - delta), x)
    hi = np.where(mask, np.minimum(domain.upper, x + delta), x)
    xb = rng.uniform(lo, hi)
    return x, xb


def estimate_lipschitz(
    fn: Callable[[np.ndarray], np.ndarray],
    domain: Box,
    delta: float = 1e-3,
    batches: int = 50,
    pairs: int = 200,
    seed: int = 0,
    perturb_dims: Sequence[int] | None = None,
    safety: float = 1.0,
) -> LipschitzEstimate:
    """Estimate the infinity-norm Lipschitz constant of ``fn`` over ``domain``.

    ``fn`` maps ``(n, dim)`` arrays to ``(n, m)`` arrays.  Only the
    coordinates in ``perturb_dims`` (default: all) differ within a pair, which
    gives per-argument constants.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if batches < 3:
        raise ValueError("need at least 3 batches for the fit")
    if pairs < 1:
        raise ValueError("need at least one pair per batch")
    rng = np.random.default_rng(seed)
    mask = np.zeros(domain.dim, dtype=bool)
    mask[list(range(domain.dim)) if perturb_dims is None else list(perturb_dims)] = True

    maxima = np.empty(batches)
    for j in range(batches):
        x, xb = _draw_pairs(rng, domain, delta, pairs, mask)
        dist = np.max(np.abs(x - xb), axis=1)
        zero = dist <= 0
        while np.any(zero):
            x[zero], xb[zero] = _draw_pairs(rng, domain, delta, int(zero.sum()), mask)
            dist = np.max(np.abs(x - xb), axis=1)
            zero = dist <= 0
        fx = np.asarray(fn(x), dtype=float).reshape(pairs, -1)
        fxb = np.asarray(fn(xb), dtype=float).reshape(pairs, -1)
        slopes = np.max(np.abs(fx - fxb), axis=1) / dist
        maxima[j] = slopes.max()

    fit = fit_reverse_weibull(maxima)
    value = max(0.0, fit.location) * safety
    return LipschitzEstimate(
        value, fit.scale, fit.shape, delta, batches, pairs, seed, fit.degenerate
    )


def subsystem_lipschitz(
    sys, u_hat, argument: str, delta=1e-3, batches=50, pairs=200, seed=0
) -> LipschitzEstimate:
    """Per-argument constant of a subsystem at a fixed external input.

    ``argument`` is ``"x"``, ``"w"`` or ``"xw"``; pairs share the external
    input and every coordinate that is not perturbed.
    """
    dx, _, dw = sys.dims
    u_hat = np.atleast_1d(np.asarray(u_hat, dtype=float))
    dom = Box(
        np.concatenate([sys.state_domain.lower, sys.internal_input_domain.lower]),
        np.concatenate([sys.state_domain.upper, sys.internal_input_domain.upper]),
    )
    dims = {"x": range(dx), "w": range(dx, dx + dw), "xw": range(dx + dw)}[argument]

    def fn(z):
        return sys.simulate(z[:, :dx], np.broadcast_to(u_hat, (len(z), u_hat.size)), z[:, dx:])

    return estimate_lipschitz(fn, dom, delta, batches, pairs, seed, perturb_dims=list(dims))


def interconnection_lipschitz(ic, delta=1e-3, batches=50, pairs=200, seed=0) -> LipschitzEstimate:
    return estimate_lipschitz(ic.evaluate, ic.state_domain, delta, batches, pairs, seed)
