"""Heavy-tailed disorder environments on space-time lattice boxes.

The weight law is P(omega > x) = L(x) * x**(-alpha) with tail exponent
alpha in (0, 2) and a slowly varying prefactor L, either a constant c
(pure Pareto, every quantile closed-form) or L(x) = (log(e + x))**b.
Weights live on the box {1..n} x {-h..h} and are nonnegative.

PRNG contract (fixed so that fields are reproducible across runs,
platforms, and box sizes): Philox4x64 counter-based generator.  Row i of
a field uses key (seed << 64) | i; the weight at column x is the inverse
transform of the uniform draw at absolute stream position x + 2**32.
Philox's advance(d) skips exactly 4*d float64 draws, so any column range
can be generated without producing the columns before it, and the weight
at (i, x) depends on (seed, i, x) alone.  Fields on nested boxes
therefore agree on shared sites.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from numpy.random import Generator, Philox
from scipy import integrate

LAW_CONSTANT = "constant"
LAW_LOGPOWER = "logpower"

# Absolute stream position of column x = 0; columns at x < 0 sit below it.
_COL_OFFSET = 1 << 32

# Log-spaced grid span used to vet monotonicity of a log-power survival.
_MONOTONE_GRID_DECADES = 14
_MONOTONE_GRID_POINTS = 400


def _raw_survival(alpha: float, law: str, c: float, b: float, x):
    """L(x) * x**(-alpha) without the clamp at 1; x may be an array."""
    x = np.asarray(x, dtype=float)
    if law == LAW_CONSTANT:
        return c * x ** (-alpha)
    return np.log(np.e + x) ** b * x ** (-alpha)


@dataclass(frozen=True)
class TailParams:
    """Heavy-tail weight law P(omega > x) = L(x) x^(-alpha).

    law "constant" means L = c (support [c**(1/alpha), infinity), all
    quantiles closed-form); law "logpower" means L(x) = (log(e+x))**b.
    The support edge (smallest weight value) is resolved at construction.
    """

    alpha: float
    law: str = LAW_CONSTANT
    c: float = 1.0
    b: float = 1.0
    edge: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        # (0, 2] with the boundary included: alpha = 2 is a valid weight law
        # (several closed-form checks live there) even though the asymptotic
        # classification below 2 is what the solvers target.
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError(f"alpha must be in (0, 2], got {self.alpha}")
        if self.law not in (LAW_CONSTANT, LAW_LOGPOWER):
            raise ValueError(f"unknown law {self.law!r}")
        if self.law == LAW_CONSTANT:
            if self.c <= 0.0:
                raise ValueError("constant L requires c > 0")
            edge = self.c ** (1.0 / self.alpha)
        else:
            edge = self._solve_edge()
            self._check_monotone(edge)
        object.__setattr__(self, "edge", float(edge))

    def _solve_edge(self) -> float:
        """Smallest x with L(x) x^(-alpha) = 1, by bisection."""
        lo, hi = 1e-300, 1.0
        while _raw_survival(self.alpha, self.law, self.c, self.b, hi) > 1.0:
            lo, hi = hi, hi * 4.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if _raw_survival(self.alpha, self.law, self.c, self.b, mid) > 1.0:
                lo = mid
            else:
                hi = mid
        return hi

    def _check_monotone(self, edge: float):
        # Decreasing survival needs alpha (e+x) log(e+x) > b x; vetted on a
        # log grid because the worst ratio sits at moderate x.
        grid = edge * np.exp(
            np.linspace(0.0, _MONOTONE_GRID_DECADES * np.log(10.0), _MONOTONE_GRID_POINTS)
        )
        s = _raw_survival(self.alpha, self.law, self.c, self.b, grid)
        if np.any(np.diff(s) > 1e-12 * s[:-1]):
            raise ValueError(
                f"survival not nonincreasing for alpha={self.alpha}, b={self.b}"
            )


@dataclass(frozen=True)
class DisorderField:
    """I.i.d. heavy-tail weights on the box {1..n} x {-h..h}.

    weights[i-1, x+h] is the weight at time step i, site x.  Deterministic
    function of (n, h, tail, seed); the array is read-only.
    """

    n: int
    h: int
    tail: TailParams
    seed: int
    weights: np.ndarray

    def weight_at(self, i: int, x: int) -> float:
        return float(self.weights[i - 1, x + self.h])


@dataclass(frozen=True)
class OrderedStats:
    """Top weights of a field, decreasing, with their positions.

    Ties in weight are broken by lexicographic (i, x) position order so the
    selection is deterministic.
    """

    weights: np.ndarray
    rows: np.ndarray  # time coordinates i, aligned with weights
    cols: np.ndarray  # space coordinates x

    @property
    def entries(self) -> List[Tuple[float, Tuple[int, int]]]:
        return [
            (float(w), (int(i), int(x)))
            for w, i, x in zip(self.weights, self.rows, self.cols)
        ]

    def __len__(self) -> int:
        return int(self.weights.shape[0])


# ---------------------------------------------------------------------------
# Law: survival, quantile, moments
# ---------------------------------------------------------------------------


def survival(tail: TailParams, x):
    """P(omega > x) = min(1, L(x) x^(-alpha)); x > 0, scalar or array."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError("survival requires x > 0")
    out = np.minimum(1.0, _raw_survival(tail.alpha, tail.law, tail.c, tail.b, arr))
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def _quantile_from_survival(tail: TailParams, p):
    """Solve survival(m) = p for p in (0, 1]; vectorized bisection."""
    p = np.asarray(p, dtype=float)
    if tail.law == LAW_CONSTANT:
        return (tail.c / p) ** (1.0 / tail.alpha)
    lo = np.full(p.shape, tail.edge)
    hi = np.full(p.shape, max(2.0 * tail.edge, 2.0))
    # Expand hi until survival(hi) <= p everywhere.
    while True:
        need = _raw_survival(tail.alpha, tail.law, tail.c, tail.b, hi) > p
        if not np.any(need):
            break
        hi = np.where(need, hi * 4.0, hi)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        above = _raw_survival(tail.alpha, tail.law, tail.c, tail.b, mid) > p
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return hi


def quantile(tail: TailParams, x):
    """The (1 - 1/x)-quantile of the weight law; x > 1, scalar or array.

    Pure Pareto: (c*x)**(1/alpha) exactly.  Log-power L: monotone bisection
    on the survival to relative tolerance well below 1e-12.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 1.0):
        raise ValueError("quantile requires x > 1")
    out = _quantile_from_survival(tail, 1.0 / arr)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def mean_weight(tail: TailParams) -> float:
    """E[omega]; defined only for alpha > 1."""
    if tail.alpha <= 1.0:
        raise ValueError("mean is infinite for alpha <= 1")
    a = tail.edge
    if tail.law == LAW_CONSTANT:
        return tail.alpha / (tail.alpha - 1.0) * a
    tail_int, _ = integrate.quad(
        lambda u: _raw_survival(tail.alpha, tail.law, tail.c, tail.b, u),
        a,
        np.inf,
        epsabs=1e-12,
        epsrel=1e-12,
        limit=200,
    )
    return a + tail_int


def truncated_mean_weight(tail: TailParams, cutoff: float) -> float:
    """E[omega * 1{omega <= cutoff}] via the survival integral, any alpha."""
    a = tail.edge
    if cutoff <= a:
        return 0.0
    if tail.law == LAW_CONSTANT:
        al, c = tail.alpha, tail.c
        if abs(al - 1.0) < 1e-12:
            body = c * (np.log(cutoff) - np.log(a))
        else:
            body = c * (a ** (1.0 - al) - cutoff ** (1.0 - al)) / (al - 1.0)
    else:
        body, _ = integrate.quad(
            lambda u: _raw_survival(tail.alpha, tail.law, tail.c, tail.b, u),
            a,
            cutoff,
            epsabs=1e-12,
            epsrel=1e-12,
            limit=200,
        )
    return a + body - cutoff * survival(tail, cutoff)


# ---------------------------------------------------------------------------
# Field sampling
# ---------------------------------------------------------------------------


def _row_uniforms(seed: int, i: int, h: int) -> np.ndarray:
    """Uniform draws for columns -h..h of row i, independent of h."""
    gen = Generator(Philox(key=(seed << 64) | i))
    start = _COL_OFFSET - h
    gen.bit_generator.advance(start // 4)
    rem = start % 4
    if rem:
        gen.random(rem)
    return gen.random(2 * h + 1)


def sample_field(n: int, h: int, tail: TailParams, seed: int) -> DisorderField:
    """Sample the disorder field on {1..n} x {-h..h}.

    Inverse-transform sampling omega = quantile(1/U') with U' = 1 - U in
    (0, 1].  See the module docstring for the stream layout guaranteeing
    that nested boxes share weights.
    """
    if n < 1 or h < 0:
        raise ValueError("need n >= 1 and h >= 0")
    if not 0 <= seed < (1 << 64):
        raise ValueError("seed must fit in 64 bits")
    u = np.empty((n, 2 * h + 1))
    for i in range(1, n + 1):
        u[i - 1] = _row_uniforms(seed, i, h)
    w = _quantile_from_survival(tail, 1.0 - u)
    w.flags.writeable = False
    return DisorderField(n=n, h=h, tail=tail, seed=seed, weights=w)


def reachable_mask(n: int, h: int) -> np.ndarray:
    """Boolean (n, 2h+1) mask of sites a walk from the origin can occupy."""
    i = np.arange(1, n + 1)[:, None]
    x = np.arange(-h, h + 1)[None, :]
    return ((i + x) % 2 == 0) & (np.abs(x) <= i)


def ordered_statistics(
    field: DisorderField, ell: int, reachable_only: bool = False
) -> OrderedStats:
    """Top-ell weights with positions, decreasing; partial selection.

    reachable_only restricts the ranking to sites a walk can visit (right
    parity, |x| <= i); used when the statistics feed a path solver.
    """
    w = field.weights
    n, width = w.shape
    if reachable_only:
        mask = reachable_mask(field.n, field.h)
        flat_idx = np.flatnonzero(mask.ravel())
        flat_w = w.ravel()[flat_idx]
    else:
        flat_idx = None
        flat_w = w.ravel()
    total = flat_w.shape[0]
    if not 1 <= ell <= total:
        raise ValueError(f"ell must be in [1, {total}], got {ell}")
    if ell < total:
        part = np.argpartition(flat_w, total - ell)[total - ell :]
        wmin = flat_w[part].min()
        cand = np.flatnonzero(flat_w >= wmin)  # all ties at the boundary
    else:
        cand = np.arange(total)
    if flat_idx is not None:
        orig = flat_idx[cand]
    else:
        orig = cand
    rows = orig // width + 1
    cols = orig % width - field.h
    order = np.lexsort((cols, rows, -flat_w[cand]))[:ell]
    sel = cand[order]
    out_w = flat_w[sel].copy()
    out_r = rows[order].astype(np.int64)
    out_c = cols[order].astype(np.int64)
    for a in (out_w, out_r, out_c):
        a.flags.writeable = False
    return OrderedStats(weights=out_w, rows=out_r, cols=out_c)


# ---------------------------------------------------------------------------
# Dump / load (binary, bit-exact round trip)
# ---------------------------------------------------------------------------


def save_field(field_: DisorderField, path: str):
    """Write a field to an .npz archive; round-trips bit-exactly."""
    np.savez(
        path,
        n=field_.n,
        h=field_.h,
        seed=field_.seed,
        alpha=field_.tail.alpha,
        law=field_.tail.law,
        c=field_.tail.c,
        b=field_.tail.b,
        weights=field_.weights,
    )


def load_field(path: str) -> DisorderField:
    with np.load(path, allow_pickle=False) as z:
        tail = TailParams(
            alpha=float(z["alpha"]),
            law=str(z["law"]),
            c=float(z["c"]),
            b=float(z["b"]),
        )
        w = z["weights"].copy()
        w.flags.writeable = False
        return DisorderField(
            n=int(z["n"]), h=int(z["h"]), tail=tail, seed=int(z["seed"]), weights=w
        )
