"""Poisson point samples and continuum variational values.

Rescaled heavy weights converge to a Poisson point process on
[0, 1] x [-q, q] x (0, inf) with weight intensity proportional to
w^(-alpha-1).  This module samples truncated realizations of that
process and evaluates the limiting energy-entropy values on them:
chain problems with an optional per-point log penalty, the Lipschitz
variant, the best single-point score, and heat-kernel-weighted sums.
It also estimates the random coupling threshold where the penalized
chain value first becomes positive.

Two truncation modes produce the same law for the large weights:

* floor mode keeps every point with weight above ``eps``.  The count
  is Poisson with mean q * eps**(-alpha) and weights are iid Pareto
  rescaled above ``eps``.
* top mode keeps the ``top`` largest weights, built from partial sums
  of unit exponentials: the r-th weight is q**(1/alpha) * G_r**(-1/alpha).

Points are arrays of (t, x, w) rows throughout, matching the chain
solver.  Draw order is fixed per mode (count, weights, t, x in floor
mode; exponential gaps, t, x in top mode) so seeded samples are stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .elpp import (
    ANY,
    ENTROPY_LIPSCHITZ,
    ENTROPY_QUADRATIC,
    Cardinality,
    ChainGeometry,
    prepare_geometry,
    select_top,
    solve,
)

NEG_INF = -np.inf

#: Default number of retained top weights for truncated estimates.
DEFAULT_TOP = 256

#: Coupling bracket and iteration count for the threshold bisection.
BRACKET_LOW = 1e-4
BRACKET_HIGH = 1e4
BISECT_ITERS = 40

__all__ = [
    "DEFAULT_TOP",
    "PointMax",
    "CriticalCouplingEstimate",
    "sample_ppp",
    "heat_kernel_sum",
    "sample_heat_kernel_sum",
    "single_point_max",
    "chain_value",
    "lipschitz_chain_value",
    "critical_coupling",
]


def _as_points(points) -> np.ndarray:
    """Validate a (t, x, w) array without reordering it."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("points must have shape (m, 3) with rows (t, x, w)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    if np.any(arr[:, 0] <= 0.0):
        raise ValueError("point times must be positive")
    return arr


def sample_ppp(
    alpha: float,
    q: float,
    *,
    eps: float | None = None,
    top: int | None = None,
    seed=None,
) -> np.ndarray:
    """Sample a truncated heavy-tail Poisson point process.

    Exactly one of ``eps`` (floor mode, weights above eps) and ``top``
    (top mode, the ``top`` largest weights) must be given.  Returns an
    (m, 3) array of (t, x, w) rows with t uniform on [0, 1] and x
    uniform on [-q, q].  ``eps=inf`` returns an empty sample.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (0, 2)")
    if q <= 0.0:
        raise ValueError("q must be positive")
    if (eps is None) == (top is None):
        raise ValueError("give exactly one of eps and top")
    rng = np.random.default_rng(seed)

    if eps is not None:
        if eps <= 0.0:
            raise ValueError("eps must be positive")
        if math.isinf(eps):
            return np.empty((0, 3))
        count = int(rng.poisson(q * eps ** (-alpha)))
        # Pareto above the floor: P(w > u) = (eps/u)^alpha for u >= eps.
        weights = eps * rng.random(count) ** (-1.0 / alpha)
    else:
        if isinstance(top, bool) or int(top) != top:
            raise ValueError("top must be an integer")
        count = int(top)
        if count < 0:
            raise ValueError("top must be nonnegative")
        gaps = rng.standard_exponential(count)
        # Partial sums of unit exponentials give the ranked weights.
        weights = q ** (1.0 / alpha) * np.cumsum(gaps) ** (-1.0 / alpha)

    t = rng.random(count)
    x = rng.uniform(-q, q, count)
    return np.column_stack([t, x, weights])


def heat_kernel_sum(points) -> float:
    """Sum of w * (2 pi t)^(-1/2) * exp(-x^2 / (2t)) over the points."""
    arr = _as_points(points)
    if arr.shape[0] == 0:
        return 0.0
    t, x, w = arr[:, 0], arr[:, 1], arr[:, 2]
    density = np.exp(-(x * x) / (2.0 * t)) / np.sqrt(2.0 * math.pi * t)
    return float(np.sum(w * density))


def sample_heat_kernel_sum(
    alpha: float,
    eps: float,
    *,
    half_width: float = 8.0,
    seed=None,
) -> float:
    """Heat-kernel sum of a fresh floor-mode sample on [0,1] x [-K, K].

    ``half_width`` is K.  The value grows stochastically as ``eps``
    shrinks; couple comparisons across eps by sampling once at the
    smallest floor and filtering, since redrawing changes the count.
    """
    points = sample_ppp(alpha, half_width, eps=eps, seed=seed)
    return heat_kernel_sum(points)


class PointMax(NamedTuple):
    """Best single-point score and the input row that attains it."""

    value: float
    index: int | None


def single_point_max(points, beta: float) -> PointMax:
    """Maximize w - x^2 / (2 beta t) over the points.

    Empty input returns (-inf, None).  Ties keep the first row in
    input order.
    """
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    arr = _as_points(points)
    if arr.shape[0] == 0:
        return PointMax(NEG_INF, None)
    t, x, w = arr[:, 0], arr[:, 1], arr[:, 2]
    scores = w - (x * x) / (2.0 * beta * t)
    best = int(np.argmax(scores))
    return PointMax(float(scores[best]), best)


def chain_value(
    points,
    nu: float,
    *,
    beta: float | None = None,
    cardinality: Cardinality = ANY,
) -> float:
    """Best chain value nu*(collected weight) - entropy - penalty.

    With ``beta`` set, each collected point also costs 1/(2 beta); the
    cardinality modes then restrict or bound the number of points.
    Without ``beta`` the problem is the plain quadratic-entropy one.
    The empty chain keeps the default mode at a floor of zero; exact
    or at-least modes on an infeasible sample give -inf.
    """
    if nu < 0.0:
        raise ValueError("nu must be nonnegative")
    kappa = 0.0
    if beta is not None:
        if beta <= 0.0:
            raise ValueError("beta must be positive")
        kappa = 1.0 / (2.0 * beta)
    result = solve(points, nu, kappa=kappa, cardinality=cardinality)
    return result.value


def lipschitz_chain_value(points, beta: float) -> float:
    """Best Lipschitz-entropy value sup {weight - entropy / beta}.

    Computed as (1/beta) * sup {beta * weight - entropy} so the pair
    costs are shared with the unscaled solver.  The empty chain keeps
    the value at a floor of zero; points outside the unit-slope cone
    from the origin are unreachable.
    """
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    result = solve(points, beta, kappa=0.0, entropy_kind=ENTROPY_LIPSCHITZ)
    return result.value / beta


def _tilde_value(geometry: ChainGeometry, beta: float) -> float:
    # Penalized chain value with the empty-chain floor at zero.
    kappa = 1.0 / (2.0 * beta)
    return solve(geometry, 1.0, kappa=kappa).value


def _hat_value(geometry: ChainGeometry, beta: float) -> float:
    # Positive iff the Lipschitz value sup {pi - ent/beta} is positive.
    return solve(geometry, beta, kappa=0.0).value


def _bisect_threshold(value_at: Callable[[float], float]) -> float:
    """Smallest beta in the bracket where value_at becomes positive.

    ``value_at`` must be nondecreasing in beta; the evaluated pairs are
    checked for that.  Returns nan when the value never turns positive
    inside the bracket, and the lower end when it is already positive
    there.
    """
    lo, hi = BRACKET_LOW, BRACKET_HIGH
    seen = [(lo, value_at(lo)), (hi, value_at(hi))]
    if seen[1][1] <= 0.0:
        return math.nan
    if seen[0][1] > 0.0:
        return lo
    for _ in range(BISECT_ITERS):
        mid = math.sqrt(lo * hi)
        val = value_at(mid)
        seen.append((mid, val))
        if val > 0.0:
            hi = mid
        else:
            lo = mid
    seen.sort()
    for (_, a), (_, b) in zip(seen, seen[1:]):
        if b < a - 1e-9 * max(1.0, abs(a)):
            raise AssertionError("chain value decreased in beta")
    return math.sqrt(lo * hi)


@dataclass(frozen=True)
class CriticalCouplingEstimate:
    """Monte Carlo estimate of the positive-value coupling threshold.

    ``samples`` holds one threshold per replica at the requested
    truncation (nan where the bracket failed); ``doubled_samples``
    holds the thresholds on the same replicas with twice as many
    retained weights.  ``relative_shift`` compares the two medians as
    a truncation-sensitivity report.
    """

    flavor: str
    alpha: float
    q: float
    top: int
    median: float
    ci_low: float
    ci_high: float
    samples: np.ndarray
    doubled_median: float
    doubled_samples: np.ndarray
    relative_shift: float
    failures: int


def _flavor_setup(flavor: str, alpha: float, q: float | None):
    if flavor == "tilde":
        if not 0.5 < alpha < 2.0:
            raise ValueError("tilde flavor needs alpha in (1/2, 2)")
        return (q if q is not None else 8.0), ENTROPY_QUADRATIC, _tilde_value
    if flavor == "hat":
        if not 0.0 < alpha < 0.5:
            raise ValueError("hat flavor needs alpha in (0, 1/2)")
        return (q if q is not None else 1.0), ENTROPY_LIPSCHITZ, _hat_value
    raise ValueError("flavor must be 'tilde' or 'hat'")


def critical_coupling(
    alpha: float,
    *,
    flavor: str = "tilde",
    replicas: int = 100,
    top: int = DEFAULT_TOP,
    q: float | None = None,
    seed=None,
    bootstrap: int = 200,
) -> CriticalCouplingEstimate:
    """Estimate the coupling where the chain value first turns positive.

    Per replica, a top-mode sample with 2*``top`` weights is drawn once;
    the threshold is bisected on its ``top`` largest weights and again
    on the full sample, so doubling the truncation is coupled point-set
    inclusion and per-replica thresholds can only shrink.  Reports the
    median over replicas with a percentile-bootstrap interval.
    """
    if replicas < 1:
        raise ValueError("replicas must be positive")
    if top < 1:
        raise ValueError("top must be positive")
    q, entropy_kind, value_of = _flavor_setup(flavor, alpha, q)

    root = np.random.SeedSequence(seed)
    sample_seeds = root.spawn(replicas + 1)
    primary = np.empty(replicas)
    doubled = np.empty(replicas)
    for r in range(replicas):
        full = sample_ppp(alpha, q, top=2 * top, seed=sample_seeds[r])
        kept = select_top(full, top)
        geom_kept = prepare_geometry(kept, entropy_kind)
        geom_full = prepare_geometry(full, entropy_kind)
        primary[r] = _bisect_threshold(lambda b: value_of(geom_kept, b))
        doubled[r] = _bisect_threshold(lambda b: value_of(geom_full, b))

    finite = primary[np.isfinite(primary)]
    failures = replicas - finite.size
    if finite.size == 0:
        raise RuntimeError("no replica produced a threshold inside the bracket")
    median = float(np.median(finite))

    boot_rng = np.random.default_rng(sample_seeds[replicas])
    draws = boot_rng.choice(finite, size=(bootstrap, finite.size), replace=True)
    boot_medians = np.median(draws, axis=1)
    ci_low, ci_high = np.percentile(boot_medians, [2.5, 97.5])

    finite_doubled = doubled[np.isfinite(doubled)]
    doubled_median = float(np.median(finite_doubled)) if finite_doubled.size else math.nan
    shift = abs(median - doubled_median) / median if median > 0.0 else math.nan

    return CriticalCouplingEstimate(
        flavor=flavor,
        alpha=alpha,
        q=q,
        top=top,
        median=median,
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        samples=primary,
        doubled_median=doubled_median,
        doubled_samples=doubled,
        relative_shift=float(shift),
        failures=failures,
    )
