"""Exact polymer Gibbs computations on a sampled disorder field.

Everything here is a deterministic function of the field: partition
functions by log-domain transfer recursion over the walk lattice (free
endpoint, optional band or band-window restriction on max |S_i|, weight
filters keeping part of the energy, per-step centering), exact walk
kernels, path sampling from the Gibbs measure, the truncated-environment
expansion terms, and the heavy-site inclusion-exclusion decomposition.

Conventions: the walk starts at S_0 = 0 and takes n unit steps; the
energy collected at step i is beta * f(omega_{i, S_i}) when |S_i| <= h
(inside the field box) and 0 outside it; sites of the wrong parity are
unreachable and carry no mass.  All partition sums are computed in log
domain (elementwise logaddexp), so a weight with beta*omega up to 1e6
cannot overflow.  A returned -inf means the admissible path set is
empty, never an underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp

from .environment import (
    DisorderField,
    TailParams,
    mean_weight,
    survival,
    truncated_mean_weight,
    quantile,
)

LOG_HALF = math.log(0.5)
NEG_INF = -np.inf

FILTER_ALL = "all"
FILTER_ABOVE = "above"
FILTER_BETWEEN = "between"
FILTER_ATMOST_ONE = "atmost1"

CENTER_NONE = "none"
CENTER_MEAN = "mean"
CENTER_TRUNCATED = "truncated_mean"


@dataclass(frozen=True)
class WeightFilter:
    """Which part of the per-site energy beta*omega is kept.

    all: keep beta*w.  above: keep beta*w when beta*w > lo.
    between: keep beta*w when lo < beta*w <= hi.  atmost1: keep
    beta*w when beta*w <= 1.  Thresholds compare against beta*w at the
    coupling actually passed to the partition function.
    """

    kind: str = FILTER_ALL
    lo: float = 0.0
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in (FILTER_ALL, FILTER_ABOVE, FILTER_BETWEEN, FILTER_ATMOST_ONE):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind == FILTER_BETWEEN and not self.lo < self.hi:
            raise ValueError("between filter needs lo < hi")

    def apply(self, energies: np.ndarray) -> np.ndarray:
        if self.kind == FILTER_ALL:
            return energies
        if self.kind == FILTER_ABOVE:
            return np.where(energies > self.lo, energies, 0.0)
        if self.kind == FILTER_BETWEEN:
            return np.where((energies > self.lo) & (energies <= self.hi), energies, 0.0)
        return np.where(energies <= 1.0, energies, 0.0)


def filter_above(t: float) -> WeightFilter:
    return WeightFilter(kind=FILTER_ABOVE, lo=t)


def filter_between(lo: float, hi: float) -> WeightFilter:
    return WeightFilter(kind=FILTER_BETWEEN, lo=lo, hi=hi)


def filter_atmost_one() -> WeightFilter:
    return WeightFilter(kind=FILTER_ATMOST_ONE)


@dataclass(frozen=True)
class PathConstraint:
    """Restrictions and adjustments applied to the partition sum.

    band: max_i |S_i| <= band.  band_window: max_i |S_i| in [H1, H2).
    centering subtracts a per-step constant from the exponent: "mean"
    subtracts beta*E[omega] (finite mean required), "truncated_mean"
    subtracts beta*E[omega 1{omega <= 1/beta}].
    """

    band: Optional[int] = None
    band_window: Optional[Tuple[int, int]] = None
    weight_filter: WeightFilter = WeightFilter()
    centering: str = CENTER_NONE

    def __post_init__(self):
        if self.band is not None and self.band < 0:
            raise ValueError("band must be >= 0")
        if self.band_window is not None:
            h1, h2 = self.band_window
            if not 0 <= h1 < h2:
                raise ValueError("band window needs 0 <= H1 < H2")
        if self.centering not in (CENTER_NONE, CENTER_MEAN, CENTER_TRUNCATED):
            raise ValueError(f"unknown centering {self.centering!r}")


FREE = PathConstraint()


def centering_value(tail: TailParams, beta: float, kind: str) -> float:
    """Per-step centering constant: 0, beta*E[w], or beta*E[w 1{w <= 1/beta}]."""
    if kind == CENTER_NONE or beta == 0.0:
        return 0.0
    if kind == CENTER_MEAN:
        return beta * mean_weight(tail)
    if kind == CENTER_TRUNCATED:
        if beta < 0.0:
            return 0.0  # cutoff below the support, nothing collected
        return beta * truncated_mean_weight(tail, 1.0 / beta)
    raise ValueError(f"unknown centering {kind!r}")


# ---------------------------------------------------------------------------
# Walk kernels
# ---------------------------------------------------------------------------

_EXACT_COMB_LIMIT = 1000


def walk_kernel(i: int, x: int) -> float:
    """P(S_i = x) for the simple walk; 0 on wrong parity or |x| > i."""
    if i < 1:
        raise ValueError("need i >= 1")
    if abs(x) > i or (i + x) % 2 != 0:
        return 0.0
    k = (i + x) // 2
    if i <= _EXACT_COMB_LIMIT:
        return math.comb(i, k) / (1 << i)
    return float(
        np.exp(gammaln(i + 1) - gammaln(k + 1) - gammaln(i - k + 1) + i * LOG_HALF)
    )


_KERNEL_GRID_CACHE: dict = {}


def kernel_grid(n: int, half_width: int) -> np.ndarray:
    """(n, 2*half_width+1) array of P(S_i = x); row i-1, column x+half_width."""
    key = (n, half_width)
    hit = _KERNEL_GRID_CACHE.get(key)
    if hit is not None:
        return hit
    i = np.arange(1, n + 1)[:, None]
    x = np.arange(-half_width, half_width + 1)[None, :]
    valid = (np.abs(x) <= i) & ((i + x) % 2 == 0)
    k = np.clip((i + x) // 2, 0, None)
    logp = gammaln(i + 1) - gammaln(k + 1) - gammaln(np.clip(i - k, 0, None) + 1)
    logp = logp + i * LOG_HALF
    grid = np.where(valid, np.exp(logp), 0.0)
    grid.flags.writeable = False
    _KERNEL_GRID_CACHE[key] = grid
    return grid


# ---------------------------------------------------------------------------
# Transfer recursion
# ---------------------------------------------------------------------------


def _transfer_free(
    weights: np.ndarray,
    h: int,
    n: int,
    beta: float,
    filt: WeightFilter,
    center: float,
    half_width: int,
    store: bool = False,
):
    """Single-layer log-domain pass; returns (log Z, states or None)."""
    wdt = 2 * half_width + 1
    cur = np.full(wdt, NEG_INF)
    cur[half_width] = 0.0
    states = np.empty((n, wdt)) if store else None
    lo = max(-h, -half_width)
    hi = min(h, half_width)
    for i in range(1, n + 1):
        left = np.full(wdt, NEG_INF)
        left[1:] = cur[:-1]
        right = np.full(wdt, NEG_INF)
        right[:-1] = cur[1:]
        cur = np.logaddexp(left, right) + LOG_HALF
        if lo <= hi:
            g = filt.apply(beta * weights[i - 1, lo + h : hi + h + 1])
            cur[lo + half_width : hi + half_width + 1] += g
        cur -= center
        if store:
            states[i - 1] = cur
    return float(logsumexp(cur)), states


def _transfer_window(
    weights: np.ndarray,
    h: int,
    n: int,
    beta: float,
    filt: WeightFilter,
    center: float,
    h1: int,
    h2: int,
) -> float:
    """Two-layer pass for max_i |S_i| in [h1, h2); exact, no subtraction."""
    half_width = min(n, h2 - 1)
    if half_width < 0:
        return NEG_INF
    wdt = 2 * half_width + 1
    xs = np.arange(-half_width, half_width + 1)
    flag_site = np.abs(xs) >= h1
    nf = np.full(wdt, NEG_INF)
    fl = np.full(wdt, NEG_INF)
    nf[half_width] = 0.0
    lo = max(-h, -half_width)
    hi = min(h, half_width)

    def spread(v):
        left = np.full(wdt, NEG_INF)
        left[1:] = v[:-1]
        right = np.full(wdt, NEG_INF)
        right[:-1] = v[1:]
        return np.logaddexp(left, right) + LOG_HALF

    for i in range(1, n + 1):
        a = spread(nf)
        b = spread(fl)
        g = np.zeros(wdt)
        if lo <= hi:
            g[lo + half_width : hi + half_width + 1] = filt.apply(
                beta * weights[i - 1, lo + h : hi + h + 1]
            )
        fl = np.where(flag_site, np.logaddexp(a, b), b) + g - center
        nf = np.where(flag_site, NEG_INF, a) + g - center
    return float(logsumexp(fl))


def log_partition(
    field: DisorderField, beta: float, constraint: PathConstraint = FREE
) -> float:
    """Exact log of the (restricted, filtered, centered) partition sum.

    Free-endpoint expectation over the n-step simple walk from 0; energy
    collected only inside the field box.  -inf (empty admissible set) is
    returned, never raised, when the restriction kills every path.
    """
    if beta < 0.0 and constraint.weight_filter.kind != FILTER_ATMOST_ONE:
        raise ValueError("beta < 0 only allowed with the atmost1 filter")
    n, h = field.n, field.h
    center = centering_value(field.tail, beta, constraint.centering)
    cap = n if constraint.band is None else min(constraint.band, n)
    if constraint.band_window is not None:
        h1, h2 = constraint.band_window
        logz = _transfer_window(
            field.weights, h, n, beta, constraint.weight_filter, center, h1, min(h2 - 1, cap) + 1
        )
        return logz
    logz, _ = _transfer_free(
        field.weights, h, n, beta, constraint.weight_filter, center, cap
    )
    return logz


def gibbs_band_probability(
    field: DisorderField, beta: float, h_low: int, h_high: int
) -> float:
    """P under the Gibbs measure that max_i |S_i| lies in [h_low, h_high)."""
    if not 0 <= h_low < h_high <= field.n + 1:
        raise ValueError("need 0 <= h_low < h_high <= n+1")
    log_free = log_partition(field, beta, FREE)
    log_win = log_partition(
        field, beta, PathConstraint(band_window=(h_low, h_high))
    )
    if log_win == NEG_INF:
        return 0.0
    return float(min(1.0, math.exp(log_win - log_free)))


# ---------------------------------------------------------------------------
# Gibbs path sampling and marginals
# ---------------------------------------------------------------------------


def sample_gibbs_path(
    field: DisorderField, beta: float, seed: int, count: int = 1
) -> np.ndarray:
    """Exact samples from the Gibbs measure, shape (count, n), int64.

    Backward sampling from the stored forward transfer states (PCG64
    stream seeded by `seed`; independent of the field's own stream).
    """
    n, h = field.n, field.h
    _, states = _transfer_free(
        field.weights, h, n, beta, WeightFilter(), 0.0, n, store=True
    )
    rng = np.random.default_rng(seed)
    paths = np.empty((count, n), dtype=np.int64)
    final = states[n - 1]
    logz = logsumexp(final)
    endpoint_p = np.exp(final - logz)
    xs = np.arange(-n, n + 1)
    for r in range(count):
        x = int(rng.choice(xs, p=endpoint_p))
        paths[r, n - 1] = x
        for i in range(n - 1, 0, -1):
            prev = states[i - 1]
            lo = prev[x - 1 + n] if x - 1 >= -n else NEG_INF
            hi = prev[x + 1 + n] if x + 1 <= n else NEG_INF
            # P(step came from x-1 | S_i = x) ~ forward mass at the source
            if lo == NEG_INF:
                p_left = 0.0
            elif hi == NEG_INF:
                p_left = 1.0
            else:
                p_left = 1.0 / (1.0 + math.exp(min(hi - lo, 700.0)))
            x = x - 1 if rng.random() < p_left else x + 1
            paths[r, i - 1] = x
        assert abs(paths[r, 0]) == 1
    return paths


def gibbs_site_marginals(field: DisorderField, beta: float) -> np.ndarray:
    """P(S_i = x) under the Gibbs measure, shape (n, 2n+1), by
    forward-backward products."""
    n, h = field.n, field.h
    _, states = _transfer_free(
        field.weights, h, n, beta, WeightFilter(), 0.0, n, store=True
    )
    wdt = 2 * n + 1
    logz = logsumexp(states[n - 1])
    back = np.zeros(wdt)  # log B_n = 0
    marg = np.empty((n, wdt))
    marg[n - 1] = np.exp(states[n - 1] - logz)
    lo_col, hi_col = max(-h, -n), min(h, n)
    for i in range(n - 1, 0, -1):
        g = np.zeros(wdt)
        g[lo_col + n : hi_col + n + 1] = beta * field.weights[i, lo_col + h : hi_col + h + 1]
        gb = g + back
        left = np.full(wdt, NEG_INF)
        left[:-1] = gb[1:]
        right = np.full(wdt, NEG_INF)
        right[1:] = gb[:-1]
        back = np.logaddexp(left, right) + LOG_HALF
        marg[i - 1] = np.exp(states[i - 1] + back - logz)
    return marg


# ---------------------------------------------------------------------------
# Truncated-environment expansion
# ---------------------------------------------------------------------------


class ChaosTerms(NamedTuple):
    v_n: float  # sum (e^{beta w-trunc} - 1) p(i, x) over the band box
    w_n: float  # (e^lambda - 1)(1 - sum p)
    r_n: float  # residual making the expansion identity exact
    lam: float  # log E[exp(beta w-trunc)]
    cutoff: float  # the truncation level actually used


def weight_density(tail: TailParams, x) -> np.ndarray:
    """Density of the weight law: -d/dx of the survival, 0 below the edge."""
    x = np.asarray(x, dtype=float)
    if tail.law == "constant":
        val = tail.alpha * tail.c * x ** (-tail.alpha - 1.0)
    else:
        lg = np.log(np.e + x)
        val = lg ** (tail.b - 1.0) * x ** (-tail.alpha - 1.0) * (
            tail.alpha * lg - tail.b * x / (np.e + x)
        )
    return np.where(x >= tail.edge, val, 0.0)


def log_mgf_truncated(tail: TailParams, t: float, cutoff: float) -> float:
    """log E[exp(t * omega * 1{omega <= cutoff})], quadrature to ~1e-10.

    Computed in shifted form throughout: exp(-t*cutoff) E equals the
    integral of exp(t(u - cutoff)) against the density plus the atom the
    truncation puts at zero.  The integrand is positive and at most 1 up
    to the density factor, so nothing overflows or cancels at any t.
    Below cutoff - 700/t the integrand is under exp(-700) and is dropped.
    """
    if t == 0.0:
        return 0.0
    if t < 0.0:
        raise ValueError("need t >= 0")
    if cutoff < tail.edge:
        return 0.0  # truncated weight is 0 almost surely
    # integrate in the offset v = cutoff - u so the exponent is exact
    # even when cutoff is astronomically large
    span = min(cutoff - tail.edge, 700.0 / t)
    body, _ = integrate.quad(
        lambda v: math.exp(-t * v) * float(weight_density(tail, cutoff - v)),
        0.0,
        span,
        epsabs=1e-300,
        epsrel=1e-11,
        limit=500,
    )
    exp_shift = math.exp(-t * cutoff) if t * cutoff < 700.0 else 0.0
    val = body + survival(tail, cutoff) * exp_shift
    if val <= 0.0:
        raise ValueError("truncated mgf underflowed; cutoff too extreme")
    return t * cutoff + math.log(val)


def chaos_terms(
    field: DisorderField, beta: float, band: int, cutoff: Optional[float] = None
) -> ChaosTerms:
    """First-order expansion terms of the banded, weight-truncated sum.

    cutoff defaults to the quantile at n^(3/2) log n.  The identity
    exp(-n lam) Z-trunc = 1 + sum (e^{beta w-trunc - lam} - 1) p + r_n
    holds exactly by construction of r_n.
    """
    n, h = field.n, field.h
    if band > h:
        raise ValueError("band exceeds the field box: no weights there")
    if beta < 0.0:
        raise ValueError("need beta >= 0")
    if cutoff is None:
        arg = n**1.5 * math.log(n)
        if arg <= 1.0:
            raise ValueError("default cutoff undefined at this n; pass cutoff")
        cutoff = quantile(field.tail, arg)
    lam = log_mgf_truncated(field.tail, beta, cutoff)
    trunc = np.where(field.weights <= cutoff, field.weights, 0.0)
    grid = kernel_grid(n, band)
    box = trunc[:, h - band : h + band + 1]
    v_n = float(np.sum(np.expm1(beta * box) * grid))
    # 1 minus the kernel mass of the whole space-time box; close to 1-n
    # for a wide band, so typically negative
    gap = 1.0 - float(grid.sum())
    if gap == 0.0 or lam == 0.0:
        w_n = 0.0
    elif lam > 700.0:
        w_n = math.inf if gap > 0.0 else -math.inf
    else:
        w_n = math.expm1(lam) * gap
    v_centered = float(np.sum(np.expm1(beta * box - lam) * grid))
    logz_trunc, _ = _transfer_free(trunc, h, n, beta, WeightFilter(), 0.0, band)
    shift = logz_trunc - n * lam
    z_shifted = math.exp(shift) if shift < 700.0 else math.inf
    r_n = z_shifted - 1.0 - v_centered
    return ChaosTerms(v_n=v_n, w_n=w_n, r_n=r_n, lam=lam, cutoff=cutoff)


def centered_first_term(terms: ChaosTerms) -> float:
    """sum (e^{beta w-trunc - lam} - 1) p, recovered from the returned terms."""
    return math.exp(-terms.lam) * (1.0 + terms.v_n + terms.w_n) - 1.0


# ---------------------------------------------------------------------------
# Heavy-site decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeavySiteDecomposition:
    u: np.ndarray  # U_k with factor e^{beta * energy}, k = 0..len(sites)
    u_minus: np.ndarray  # variant with factor (e^{beta * energy} - 1)
    sites: List[Tuple[int, int, float]]  # (i, x, w), time-sorted
    capped: bool  # True when more heavy sites existed than the cap


_MAX_HEAVY_SITES = 20


def heavy_site_decomposition(
    field: DisorderField, beta: float, band: Optional[int] = None, ell: int = 10
) -> HeavySiteDecomposition:
    """Split the heavy-energy partition sum by visited heavy-site set.

    Heavy sites are the walk-reachable sites with beta*omega > 1 inside
    |x| <= band, capped at the ell largest.  U_k sums e^{beta*energy(D)}
    * P(S meets exactly D) over |D| = k subsets, the probability by
    inclusion-exclusion over supersets (free-walk kernel products).
    With all heavy sites inside the cap, sum_k U_k equals the
    above-one-filtered free partition sum exactly, and sum_{k>=1} of the
    minus variant equals that sum minus 1.
    """
    if ell > _MAX_HEAVY_SITES:
        raise ValueError(f"ell > {_MAX_HEAVY_SITES} refused: cost grows as 2^ell * ell")
    n, h = field.n, field.h
    cap = h if band is None else min(band, h)
    i_grid = np.arange(1, n + 1)[:, None]
    x_grid = np.arange(-h, h + 1)[None, :]
    reach = (
        (np.abs(x_grid) <= np.minimum(i_grid, cap))
        & ((i_grid + x_grid) % 2 == 0)
        & (beta * field.weights > 1.0)
    )
    ii, xx = np.nonzero(reach)
    ws = field.weights[ii, xx]
    capped = ws.size > ell
    if capped:
        order = np.lexsort((xx, ii, -ws))[:ell]
        ii, xx, ws = ii[order], xx[order], ws[order]
    sites = sorted(zip(ii + 1, xx - h, ws), key=lambda s: (s[0], s[1]))
    k = len(sites)
    if k == 0:
        return HeavySiteDecomposition(
            u=np.array([1.0]), u_minus=np.array([0.0]), sites=[], capped=False
        )

    # P(S contains every site of the mask), built incrementally in
    # time order: each block of masks sharing the same top bit extends a
    # previously computed mask by one kernel factor.
    times = np.array([s[0] for s in sites])
    places = np.array([s[1] for s in sites])
    weights = np.array([s[2] for s in sites])
    pair = np.zeros((k, k))
    from_origin = np.array(
        [walk_kernel(int(t), int(x)) for t, x in zip(times, places)]
    )
    for a in range(k):
        for b in range(a + 1, k):
            dt = int(times[b] - times[a])
            dx = int(places[b] - places[a])
            pair[a, b] = walk_kernel(dt, dx) if dt >= 1 else 0.0

    size = 1 << k
    msb = np.zeros(size, dtype=np.int64)
    for b in range(1, k):
        msb[1 << b : 1 << (b + 1)] = b
    contain = np.ones(size)
    energy = np.zeros(size)
    popcnt = np.zeros(size, dtype=np.int64)
    for b in range(k):
        rest = np.arange(1 << b)
        kernels = np.where(rest == 0, from_origin[b], pair[msb[rest], b])
        block = (1 << b) + rest
        contain[block] = contain[rest] * kernels
        energy[block] = energy[rest] + weights[b]
        popcnt[block] = popcnt[rest] + 1

    # Superset Mobius transform: exact[D] = sum_{T >= D} (-1)^{|T\D|} contain[T]
    exact = contain.copy()
    idx = np.arange(size)
    for b in range(k):
        without = idx[(idx >> b) & 1 == 0]
        exact[without] -= exact[without | (1 << b)]

    # couplings with beta * total heavy energy beyond ~700 overflow to
    # inf/nan here; the sum identities only hold in the finite range
    with np.errstate(over="ignore", invalid="ignore"):
        u = np.bincount(popcnt, weights=np.exp(beta * energy) * exact, minlength=k + 1)
        u_minus = np.bincount(
            popcnt, weights=np.expm1(beta * energy) * exact, minlength=k + 1
        )
    return HeavySiteDecomposition(
        u=u, u_minus=u_minus, sites=[(int(t), int(x), float(w)) for t, x, w in sites],
        capped=bool(capped),
    )
