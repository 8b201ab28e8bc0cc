"""Coupling-schedule classification and the transversal scale.

The polymer's transversal scale h solves an energy-entropy balance:
beta_n times the (1 - 1/(n h))-quantile of the weight law matches
h^2/n.  Where h lands between sqrt(n) and n is governed by three
probe quantities built from the schedule beta_n and the quantile
growth, and each class comes with its own normalization recipe for
log Z and its own continuum limit object.

Power-law schedules beta_n = beta_hat * n^(-gamma) are classified
symbolically by comparing n-exponents and log-n orders, which makes
the labels exact and probe-size independent.  Explicit schedules are
probed numerically at n, 4n, 16n with a documented heuristic; limits
of arbitrary sequences are not decidable from finitely many values.

Two classes split on the sign of a random continuum quantity rather
than on the schedule itself.  For those, passing a seed runs a Monte
Carlo estimate of the critical coupling and resolves the split;
without a seed the report carries both recipes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .continuum import critical_coupling
from .environment import TailParams, mean_weight, quantile, truncated_mean_weight

LABEL_R1 = "R1"
LABEL_R2 = "R2"
LABEL_R3 = "R3"
LABEL_R3A = "R3a"
LABEL_R3B = "R3b"
LABEL_R4 = "R4"
LABEL_R5 = "R5"
LABEL_SMALL_N = "alpha-small-n-scale"
LABEL_SMALL_SQRT = "alpha-small-sqrt-scale"
LABEL_SMALL_SPLIT = "alpha-small-transition"
LABEL_BOUNDARY = "boundary"

_EXPONENT_TOL = 1e-12

__all__ = [
    "PowerLawSchedule",
    "ExplicitSchedule",
    "ScaleResult",
    "RegimeReport",
    "fluctuation_scale",
    "fluctuation_exponent",
    "classify",
    "centering_constant",
]


@dataclass(frozen=True)
class PowerLawSchedule:
    """Coupling schedule beta_n = beta_hat * n**(-gamma)."""

    gamma: float
    beta_hat: float = 1.0

    def __post_init__(self):
        if self.beta_hat <= 0.0:
            raise ValueError("beta_hat must be positive")

    def at(self, n: int) -> float:
        return self.beta_hat * float(n) ** (-self.gamma)


@dataclass(frozen=True)
class ExplicitSchedule:
    """Coupling schedule given by a callable n -> beta_n > 0."""

    values: Callable[[int], float]

    def at(self, n: int) -> float:
        beta = float(self.values(n))
        if beta <= 0.0:
            raise ValueError(f"schedule must stay positive, got {beta} at n={n}")
        return beta


@dataclass(frozen=True)
class ScaleResult:
    """Resolved transversal scale with clamp flag and balance residual."""

    h: float
    clamped: str | None  # None, "lower" (sqrt(n)), or "upper" (n)
    residual: float  # beta * quantile(n h) - h^2 / n at the returned h


def fluctuation_scale(n: int, beta: float, tail: TailParams) -> ScaleResult:
    """Solve beta * quantile(n h) = h^2 / n for h in [sqrt(n), n].

    Bisection on the normalized balance beta * quantile(n h) / h^2 - 1/n,
    which decreases in h when alpha > 1/2; the root is located to
    relative 1e-9.  When the balance holds nowhere inside the bracket
    the matching endpoint is returned with a clamp flag (this covers
    beta = 0 and the alpha <= 1/2 schedules, where no interior scale
    exists).
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if beta < 0.0:
        raise ValueError("beta must be nonnegative")

    def balance(h: float) -> float:
        return beta * quantile(tail, n * h) / (h * h) - 1.0 / n

    def residual(h: float) -> float:
        return beta * quantile(tail, n * h) - h * h / n

    lo, hi = math.sqrt(n), float(n)
    if beta == 0.0 or balance(lo) < 0.0:
        return ScaleResult(lo, "lower", residual(lo))
    if balance(hi) > 0.0:
        return ScaleResult(hi, "upper", residual(hi))
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if balance(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-9 * lo:
            break
    h = 0.5 * (lo + hi)
    return ScaleResult(h, None, residual(h))


def fluctuation_exponent(alpha: float, gamma: float) -> float | None:
    """Predicted exponent of the transversal scale, h ~ n**xi.

    Two closed-form strips cover the intermediate scales; outside them
    the exponent saturates at 1 (small gamma, single-target strategy)
    or 1/2 (large gamma, diffusive).  On the alpha <= 1/2 transition
    line the scale is random and None is returned.  Region tests use
    the polynomial form alpha*(1-gamma) vs 5-2*gamma so no division by
    1-gamma occurs.
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    if -0.5 <= gamma <= 0.25 and alpha * (1.0 - gamma) >= 5.0 - 2.0 * gamma:
        return 2.0 * (1.0 - gamma) / 3.0
    if (
        alpha > 0.5
        and 2.0 / alpha - 1.0 <= gamma <= 3.0 / (2.0 * alpha)
        and alpha * (1.0 - gamma) <= 5.0 - 2.0 * gamma
    ):
        return (1.0 + alpha * (1.0 - gamma)) / (2.0 * alpha - 1.0)
    threshold = 2.0 / alpha - 1.0
    if gamma < threshold:
        return 1.0
    if alpha > 0.5 or gamma > threshold:
        return 0.5
    return None


def centering_constant(tail: TailParams, beta: float, kind: str) -> float:
    """Centering weight moment: "mean" or "truncated_mean" at level 1/beta."""
    if kind == "mean":
        return mean_weight(tail)
    if kind == "truncated_mean":
        if beta <= 0.0:
            raise ValueError("truncated mean needs beta > 0")
        return truncated_mean_weight(tail, 1.0 / beta)
    raise ValueError(f"unknown centering kind {kind!r}")


@dataclass(frozen=True)
class RegimeReport:
    """Classification outcome with the matching normalization recipe.

    ``beta_limit`` is the limiting probe value for the class (0, inf,
    or the finite probe evaluated at n_probe).  ``probes`` holds the
    three probe quantities at n_probe.  ``split_threshold`` is the
    Monte Carlo critical-coupling median when a random split was
    resolved, else nan.
    """

    label: str
    h_n: float
    clamped: str | None
    xi: float | None
    beta_limit: float
    normalizer: str
    limit_object: str
    probes: Tuple[float, float, float]
    split_threshold: float = math.nan


# Limit of n**e * (log n)**l as a coarse symbol: inf, 0, or the finite
# probe value when both orders vanish.
def _symbolic_limit(exponent: float, log_order: float, probe_value: float) -> float:
    if exponent > _EXPONENT_TOL:
        return math.inf
    if exponent < -_EXPONENT_TOL:
        return 0.0
    if log_order > _EXPONENT_TOL:
        return math.inf
    if log_order < -_EXPONENT_TOL:
        return 0.0
    return probe_value


def _numeric_limit(v1: float, v3: float) -> float:
    # Probe heuristic: fit a local exponent over the 16x span and call
    # the limit infinite above +0.05, zero below -0.05, else finite at
    # the outermost probe.  Drifts slower than n^0.05 (e.g. mild log
    # powers) are below this resolution and read as finite.
    if v1 <= 0.0 or v3 <= 0.0:
        return 0.0 if v3 <= 0.0 else math.inf
    local_exponent = math.log(v3 / v1) / math.log(16.0)
    if local_exponent > 0.05:
        return math.inf
    if local_exponent < -0.05:
        return 0.0
    return v3


def _probe_values(schedule, tail: TailParams, n: int) -> Tuple[float, float, float]:
    beta = schedule.at(n)
    log_n = math.log(n)
    q1 = beta * quantile(tail, float(n) ** 2) / n
    q2 = beta * quantile(tail, float(n) ** 1.5 * math.sqrt(log_n)) / log_n
    q3 = beta * quantile(tail, float(n) ** 1.5)
    return q1, q2, q3


def _probe_limits(schedule, tail: TailParams, n_probe: int):
    probes = _probe_values(schedule, tail, n_probe)
    if isinstance(schedule, PowerLawSchedule):
        alpha = tail.alpha
        log_b = tail.b if tail.law == "logpower" else 0.0
        gamma = schedule.gamma
        orders = [
            (2.0 / alpha - 1.0 - gamma, log_b / alpha),
            (1.5 / alpha - gamma, 0.5 / alpha + log_b / alpha - 1.0),
            (1.5 / alpha - gamma, log_b / alpha),
        ]
        limits = tuple(
            _symbolic_limit(e, l, p) for (e, l), p in zip(orders, probes)
        )
    else:
        far = _probe_values(schedule, tail, 16 * n_probe)
        limits = tuple(_numeric_limit(a, b) for a, b in zip(probes, far))
    return limits, probes


def _mean_centering(alpha: float) -> str:
    if alpha >= 1.5:
        return "subtract n * beta_n * mean_weight(tail)"
    return "none"


def _truncated_centering(alpha: float) -> str:
    if alpha >= 1.0:
        return "subtract n * beta_n * truncated_mean_weight(tail, 1/beta_n)"
    return "none"


def _recipe(label: str, beta_limit: float, alpha: float) -> Tuple[str, str]:
    """Normalizer description and limit object for a resolved label."""
    scale_pref = "prefactor 1/(beta_n * quantile(tail, n * h_n))"
    mean_c = _mean_centering(alpha)
    trunc_c = _truncated_centering(alpha)
    if label in (LABEL_R1, LABEL_SMALL_N):
        return (
            "prefactor 1/(beta_n * quantile(tail, n^2)); centering none; "
            "wrapper identity",
            f"lipschitz_chain_value at coupling {beta_limit:g}",
        )
    if label == LABEL_R2:
        return (
            f"{scale_pref}; centering {mean_c}; wrapper identity",
            "chain_value(nu=1)",
        )
    if label == LABEL_R3A:
        return (
            f"{scale_pref}; centering {mean_c}; wrapper identity",
            f"chain_value(nu=1, beta={beta_limit:g}) (floored penalized value)",
        )
    if label == LABEL_R3B:
        return (
            f"{scale_pref}; centering {trunc_c}; wrapper log",
            f"chain_value(nu=1, beta={beta_limit:g}, cardinality=at_least(1))",
        )
    if label == LABEL_R4:
        return (
            f"{scale_pref}; centering {trunc_c}; wrapper log(sqrt(n) * .)",
            "single_point_max at coupling 1",
        )
    if label in (LABEL_R5, LABEL_SMALL_SQRT):
        return (
            "prefactor sqrt(n)/(beta_n * quantile(tail, n^{3/2})); centering "
            "subtract n * beta_n * truncated_mean_weight(tail, quantile(n^{3/2})) "
            "when alpha >= 1; wrapper identity",
            f"2 * stable heat-kernel functional at coupling {beta_limit:g}"
            + (" (heat_kernel_sum limit)" if beta_limit == 0.0 else ""),
        )
    raise ValueError(f"no recipe for label {label!r}")


def classify(
    alpha: float,
    schedule,
    n_probe: int = 1_000_000,
    *,
    tail: TailParams | None = None,
    seed=None,
    replicas: int = 16,
    top: int = 64,
) -> RegimeReport:
    """Classify a coupling schedule and return its normalization recipe.

    Power-law schedules are classified symbolically; explicit ones by
    numeric probing at n_probe, 4 n_probe, 16 n_probe.  Two outcomes
    depend on the sign of a random continuum value: the log-window
    class splits into R3a/R3b and the alpha < 1/2 transition line
    splits into the two scales.  With ``seed`` given, those splits are
    resolved by comparing the probe coupling to a Monte Carlo estimate
    of the critical coupling (``replicas``/``top`` control its cost);
    without a seed the unsplit label is returned with both recipes.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError("unsupported alpha: classification needs alpha in (0, 2)")
    if tail is None:
        tail = TailParams(alpha)
    elif tail.alpha != alpha:
        raise ValueError("tail.alpha must match alpha")

    (q1, q2, q3), probes = _probe_limits(schedule, tail, n_probe)
    h = fluctuation_scale(n_probe, schedule.at(n_probe), tail)
    xi = (
        fluctuation_exponent(alpha, schedule.gamma)
        if isinstance(schedule, PowerLawSchedule)
        else None
    )
    split_threshold = math.nan

    if alpha == 0.5:
        ratio = quantile(tail, float(n_probe) ** 2) / (
            n_probe * quantile(tail, float(n_probe) ** 1.5)
        )
        report = RegimeReport(
            label=LABEL_BOUNDARY,
            h_n=h.h,
            clamped=h.clamped,
            xi=xi,
            beta_limit=math.nan,
            normalizer=(
                "undecided at alpha = 1/2: the scale comparison depends on "
                "the slowly varying factor; probe ratio quantile(n^2)/"
                f"(n * quantile(n^(3/2))) = {ratio:.6g} at n_probe"
            ),
            limit_object="undecided",
            probes=probes,
        )
        return report

    if alpha < 0.5:
        if q1 == math.inf:
            label = LABEL_SMALL_N
            beta_limit = math.inf
        elif q1 == 0.0:
            label = LABEL_SMALL_SQRT
            beta_limit = 0.0
        else:
            beta_limit = q1
            if seed is None:
                label = LABEL_SMALL_SPLIT
            else:
                est = critical_coupling(
                    alpha, flavor="hat", replicas=replicas, top=top, seed=seed
                )
                split_threshold = est.median
                label = LABEL_SMALL_N if beta_limit > est.median else LABEL_SMALL_SQRT
    else:
        if q1 > 0.0:
            label = LABEL_R1
            beta_limit = q1
        elif q2 == math.inf:
            label = LABEL_R2
            beta_limit = 1.0
        elif q2 > 0.0:
            beta_limit = q2
            if seed is None:
                label = LABEL_R3
            else:
                est = critical_coupling(
                    alpha, flavor="tilde", replicas=replicas, top=top, seed=seed
                )
                split_threshold = est.median
                label = LABEL_R3A if beta_limit > est.median else LABEL_R3B
        elif q3 == math.inf:
            label = LABEL_R4
            beta_limit = 1.0
        else:
            label = LABEL_R5
            beta_limit = q3

    if label == LABEL_R3:
        norm_a, lim_a = _recipe(LABEL_R3A, beta_limit, alpha)
        norm_b, lim_b = _recipe(LABEL_R3B, beta_limit, alpha)
        normalizer = (
            "unresolved random split, positive-value recipe: "
            f"[{norm_a}]; zero-value recipe: [{norm_b}]"
        )
        limit_object = f"positive branch {lim_a}; zero branch {lim_b}"
    elif label == LABEL_SMALL_SPLIT:
        norm_a, lim_a = _recipe(LABEL_SMALL_N, beta_limit, alpha)
        norm_b, lim_b = _recipe(LABEL_SMALL_SQRT, 0.0, alpha)
        normalizer = (
            "unresolved random split, order-n recipe: "
            f"[{norm_a}]; order-sqrt(n) recipe: [{norm_b}]"
        )
        limit_object = f"order-n branch {lim_a}; diffusive branch {lim_b}"
    else:
        normalizer, limit_object = _recipe(label, beta_limit, alpha)

    return RegimeReport(
        label=label,
        h_n=h.h,
        clamped=h.clamped,
        xi=xi,
        beta_limit=beta_limit,
        normalizer=normalizer,
        limit_object=limit_object,
        probes=probes,
        split_threshold=split_threshold,
    )
