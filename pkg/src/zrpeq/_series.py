"""Tail certification for one-dimensional series of nonnegative terms.

Terms are supplied as logarithms ``L[j] = log a_j`` for ``j < n``.  The
tail ``sum_{j >= n} a_j`` is classified from a fit on the window
``[n/4, n)`` of ``L_j = c - a log j + s j`` into geometric decay, power-law
decay (with an optional snap to known exponents) or growth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ZERO, GEOMETRIC, POWER, DIVERGENT, UNCERTAIN = "zero", "geometric", "power", "divergent", "uncertain"

# exponential trend over the fit window that counts as significant
_EXP_SIGNIFICANCE = 5.0
_SNAP_RADIUS = 0.25
_FIT_POINTS = 256


def logsumexp(x) -> float:
    x = np.asarray(x, dtype=float)
    m = x.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(x - m).sum()))


def _fit(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    # normal equations with unit-norm columns, much cheaper than lstsq here
    scale = np.sqrt((A * A).sum(axis=0))
    B = A / scale
    try:
        return np.linalg.solve(B.T @ B, B.T @ y) / scale
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, y, rcond=None)[0]


@dataclass(frozen=True)
class Tail:
    kind: str
    estimate: float = 0.0  # added to the partial sum
    uncertainty: float = 0.0  # bound on |true tail - estimate|
    exponent: float = math.nan
    snapped: bool = False


def certify_tail(L: np.ndarray, candidates=(), margin: float = 0.1) -> Tail:
    """Classify and bound the tail of the series with log-terms ``L``."""
    n = L.size
    if np.isnan(L).any() or np.isposinf(L).any():
        return Tail(DIVERGENT, math.inf, math.inf)
    lo = max(1, n // 4)
    if n - lo > 2 * _FIT_POINTS:
        # geometric subsample: the fit only needs the shape of a smooth curve
        idx = np.unique(np.geomspace(lo, n - 1, _FIT_POINTS).astype(np.int64))
        idx[-1] = n - 1
    else:
        idx = np.arange(lo, n)
    j = idx.astype(float)
    win = L[idx]
    fin = np.isfinite(win)
    if not fin.any():
        return Tail(ZERO)
    head = logsumexp(L[np.isfinite(L)])
    top = win[fin].max()
    if top < head - 700.0 and not np.isfinite(L[-1]) or top < head - 745.0:
        # every remaining term underflows against the partial sum
        return Tail(ZERO)
    if fin.sum() < 8:
        return Tail(UNCERTAIN, 0.0, math.inf)
    jf, lf = j[fin], win[fin]
    A = np.column_stack([np.ones_like(jf), -np.log(jf), jf])
    c, a, s = _fit(A, lf)
    span = jf[-1] - jf[0]
    last = lf[-1]
    jl = jf[-1]
    if s * span > _EXP_SIGNIFICANCE:
        return Tail(DIVERGENT, math.inf, math.inf)
    if s * span < -_EXP_SIGNIFICANCE:
        k = min(16, lf.size - 1)
        emp = (lf[-1] - lf[-1 - k]) / (jf[-1] - jf[-1 - k])
        rho = math.exp(max(s, emp))
        if rho >= 1.0:
            return Tail(UNCERTAIN, 0.0, math.inf)
        bound = 2.0 * math.exp(last) * rho / (1.0 - rho)
        return Tail(GEOMETRIC, 0.0, bound, exponent=math.nan)
    # power law: refit without the exponential term
    A2 = A[:, :2]
    c, a = _fit(A2, lf)
    snapped = False
    if len(candidates):
        cand = np.asarray(candidates, dtype=float)
        i = int(np.argmin(np.abs(cand - a)))
        if abs(cand[i] - a) <= _SNAP_RADIUS:
            a, snapped = float(cand[i]), True
    a_eff = a if snapped else a - margin
    if a_eff <= 1.0:
        return Tail(DIVERGENT, math.inf, math.inf, exponent=a, snapped=snapped)
    # amplitude from the trailing quarter of the window, exponent held fixed
    q = max(1, lf.size // 4)
    logC = float(np.mean(lf[-q:] + a * np.log(jf[-q:])))
    x0 = jl + 0.5
    est = math.exp(logC + (1.0 - a) * math.log(x0)) / (a - 1.0)
    if snapped:
        unc = est * 4.0 * (a + 1.0) / jl
    else:
        bound = math.exp(last) * jl / (a_eff - 1.0)
        unc = max(bound - est, est)
    return Tail(POWER, est, unc, exponent=a, snapped=snapped)


def log_terms(log_s0: np.ndarray, moment: np.ndarray) -> np.ndarray:
    """``log(s0 * moment)`` with ``0 * anything = 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_s0 + np.log(moment)
    out[np.isneginf(log_s0) | (moment == 0)] = -np.inf
    return out


@dataclass(frozen=True)
class SeriesSum:
    """A certified sum with its tail classification."""

    log_value: float
    rel_error: float
    tails: tuple

    @property
    def kinds(self):
        return {t.kind for t in self.tails}

    @property
    def divergent(self):
        return DIVERGENT in self.kinds or self.log_value == math.inf


def certified_sum(blocks, candidates=(), margin: float = 0.1) -> SeriesSum:
    """Sum several log-term sequences, adding and bounding each tail."""
    tails = []
    parts = []
    unc = 0.0
    for L in blocks:
        t = certify_tail(L, candidates, margin)
        tails.append(t)
        if t.kind == DIVERGENT:
            return SeriesSum(math.inf, math.inf, tuple(tails))
        fin = L[np.isfinite(L)]
        if fin.size:
            parts.append(logsumexp(fin))
        if t.estimate > 0:
            parts.append(math.log(t.estimate))
        unc += t.uncertainty
    if not parts:
        return SeriesSum(-math.inf, 0.0, tuple(tails))
    total = float(logsumexp(parts))
    if unc == 0.0:
        rel = 0.0
    elif not math.isfinite(unc):
        rel = math.inf
    else:
        rel = math.exp(math.log(unc) - total)
    return SeriesSum(total, rel, tuple(tails))
