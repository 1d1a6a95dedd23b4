"""Single-site stationary weights and the zero-range jump rates they induce.

A weight ``w: N^2 -> (0, inf)`` is handled through its logarithm.  The
catalogue below holds the standard examples of two-species zero-range
processes with product stationary measures; each carries whatever
analytic side information is known (partial sums of the partition
function, the shape of the convergence domain, power-law tail
exponents) so that downstream numerics can use or cross-check it.

Throughout, ``(a)_k = a (a+1) ... (a+k-1)`` is the rising factorial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Callable, Mapping, Optional

import mpmath
import numpy as np
from scipy.special import gammaln, lambertw

from .errors import CocycleViolation, InvalidParam, OutOfRange, UnknownName

__all__ = [
    "TwoSpeciesWeight",
    "JumpRates",
    "LineSums",
    "rates_from_weight",
    "weight_from_rates",
    "table_weight",
    "builtin",
    "BUILTIN_NAMES",
    "solve_x_plus_exp",
]

COCYCLE_RTOL = 1e-10


@dataclass(frozen=True)
class LineSums:
    """Partial sums of the grand-canonical series grouped by an outer index.

    ``log_s0[j]`` is the log of the summed mass on line ``j``; the other
    arrays are conditional moments of ``(k1, k2)`` given the line.
    """

    log_s0: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    m11: np.ndarray
    m12: np.ndarray
    m22: np.ndarray


@dataclass(frozen=True, eq=False)
class TwoSpeciesWeight:
    """A strictly positive weight on N^2 together with analytic metadata.

    Attributes
    ----------
    name : str
        Identifier, also used in output headers.
    log_eval : callable
        ``log_eval(k1, k2)`` on integer arrays; authoritative for large k.
    exp_bound_xi : float
        A constant with ``w(k) <= xi**|k|`` (Euclidean norm of k).
    tail_exponent : tuple or None
        Per-species power-law exponent ``b`` of the weight along the
        species axis, ``None`` for species without power-law tails.
    direct : callable or None
        Independent scalar evaluation ``w(k1, k2)`` (no log-gamma).
    closed_form_z : callable or None
        ``(psi1, psi2) -> (z, valid)`` from a separate analytic route.
    closed_form_boundary : callable or None
        The boundary of the convergence domain as a map between rotated
        coordinates ``mu1 - mu2 -> mu1 + mu2``.
    line_sums : callable or None
        ``(psi1, psi2, n) -> list[LineSums]``; the inner sum evaluated
        analytically so the outer series is one-dimensional.
    support : int or None
        Largest index for which the weight is defined (tables only).
    """

    name: str
    log_eval: Callable
    exp_bound_xi: float
    tail_exponent: Optional[tuple] = None
    direct: Optional[Callable] = None
    closed_form_z: Optional[Callable] = None
    closed_form_boundary: Optional[Callable] = None
    line_sums: Optional[Callable] = None
    params: Mapping = field(default_factory=dict)
    support: Optional[int] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def eval(self, k1, k2) -> float:
        """The mass ``w(k1, k2)``; may overflow where ``log_eval`` does not."""
        if self.direct is not None:
            return float(self.direct(int(k1), int(k2)))
        return float(np.exp(self.log_eval(np.int64(k1), np.int64(k2))))

    def __call__(self, k1, k2) -> float:
        return self.eval(k1, k2)

    def log_box(self, n1: int, n2: int) -> np.ndarray:
        """``log w`` on the box ``[0, n1] x [0, n2]`` (cached, read-only)."""
        key = ("box", n1, n2)
        out = self._cache.get(key)
        if out is None:
            k1, k2 = np.meshgrid(np.arange(n1 + 1), np.arange(n2 + 1), indexing="ij")
            out = np.asarray(self.log_eval(k1, k2), dtype=float)
            out.setflags(write=False)
            self._cache[key] = out
        return out

    def tail_candidates(self):
        """Exponents a power-law shell sum can have, given the declared tails."""
        if not self.tail_exponent:
            return ()
        out = []
        for b in self.tail_exponent:
            if b is None:
                continue
            out.extend(b - q for q in range(-2, 6))
        return tuple(sorted(set(out)))


@dataclass(frozen=True)
class JumpRates:
    """Per-species exit rates ``g_i(k)`` as vectorised callables."""

    g1: Callable
    g2: Callable

    def table(self, n1: int, n2: int):
        """Both rates on the box ``[0, n1] x [0, n2]``."""
        k1, k2 = np.meshgrid(np.arange(n1 + 1), np.arange(n2 + 1), indexing="ij")
        return (np.asarray(self.g1(k1, k2), dtype=float),
                np.asarray(self.g2(k1, k2), dtype=float))


# ---------------------------------------------------------------------------
# rates <-> weights


def _rate_from_log_weight(log_eval, species, k1, k2):
    k1 = np.asarray(k1, dtype=np.int64)
    k2 = np.asarray(k2, dtype=np.int64)
    own = k1 if species == 1 else k2
    safe = own >= 1
    d1 = np.where(safe, k1 - (species == 1), k1)
    d2 = np.where(safe, k2 - (species == 2), k2)
    d1 = np.maximum(d1, 0)
    d2 = np.maximum(d2, 0)
    diff = np.asarray(log_eval(d1, d2), dtype=float) - np.asarray(log_eval(k1, k2), dtype=float)
    out = np.where(safe, np.exp(diff), 0.0)
    return out if out.ndim else float(out)


def rates_from_weight(w: TwoSpeciesWeight) -> JumpRates:
    """Rates ``g_i(k) = w(k - e_i) / w(k)`` (zero when ``k_i = 0``)."""
    return JumpRates(
        partial(_rate_from_log_weight, w.log_eval, 1),
        partial(_rate_from_log_weight, w.log_eval, 2),
    )


def _table_log_eval(table, k1, k2):
    k1 = np.asarray(k1, dtype=np.int64)
    k2 = np.asarray(k2, dtype=np.int64)
    if k1.size and (k1.min() < 0 or k2.min() < 0
                    or k1.max() >= table.shape[0] or k2.max() >= table.shape[1]):
        raise OutOfRange(f"weight table covers [0,{table.shape[0] - 1}]x[0,{table.shape[1] - 1}]")
    out = table[k1, k2]
    return out if np.ndim(out) else float(out)


def table_weight(log_table, name="table", tail_exponent=None, params=None) -> TwoSpeciesWeight:
    """A weight given by a finite table of log-values on a box."""
    log_table = np.array(log_table, dtype=float)
    if log_table.ndim != 2 or not np.all(np.isfinite(log_table)):
        raise InvalidParam("log-weight table must be a finite 2D array")
    log_table.setflags(write=False)
    k1, k2 = np.meshgrid(np.arange(log_table.shape[0]), np.arange(log_table.shape[1]),
                         indexing="ij")
    norm = np.hypot(k1, k2)
    mask = norm > 0
    log_xi = max(0.0, float(np.max(log_table[mask] / norm[mask]))) if mask.any() else 0.0
    if log_table[0, 0] > 0:
        # xi**0 = 1 must dominate w(0,0); only the gauge can fix this
        log_xi = max(log_xi, float("inf"))
    return TwoSpeciesWeight(
        name=name,
        log_eval=partial(_table_log_eval, log_table),
        exp_bound_xi=math.exp(log_xi) if np.isfinite(log_xi) else float("inf"),
        tail_exponent=tuple(tail_exponent) if tail_exponent is not None else None,
        params=dict(params or {}),
        support=int(min(log_table.shape) - 1),
    )


def weight_from_rates(g: JumpRates, radius: int, name="from-rates",
                      rtol: float = COCYCLE_RTOL) -> TwoSpeciesWeight:
    """Invert the rate relation on ``[0, radius]^2`` with gauge ``w(0,0) = 1``.

    The weight is built along the staircase path: first along the k1 axis,
    then up in k2.  Path independence is checked site by site.
    """
    if radius < 0:
        raise InvalidParam("radius must be nonnegative")
    g1, g2 = g.table(radius, radius)
    if np.any(g1[0, :] != 0) or np.any(g2[:, 0] != 0):
        raise InvalidParam("rates must vanish exactly when the species is absent")
    if np.any(g1[1:, :] <= 0) or np.any(g2[:, 1:] <= 0):
        raise InvalidParam("rates must be positive when the species is present")
    # cocycle: g1(k) g2(k - e1) = g2(k) g1(k - e2)
    lhs = g1[1:, 1:] * g2[:-1, 1:]
    rhs = g2[1:, 1:] * g1[1:, :-1]
    resid = np.abs(lhs - rhs) / np.maximum(np.abs(lhs), np.abs(rhs))
    if resid.size and resid.max() > rtol:
        # report the violation closest to the origin
        bad = np.argwhere(resid > rtol)
        i = np.argmin(bad.sum(axis=1))
        k = bad[i] + 1
        raise CocycleViolation(k, resid[tuple(bad[i])])
    log_w = np.zeros((radius + 1, radius + 1))
    log_w[1:, 0] = -np.cumsum(np.log(g1[1:, 0]))
    log_w[:, 1:] = log_w[:, :1] - np.cumsum(np.log(g2[:, 1:]), axis=1)
    return table_weight(log_w, name=name)


# ---------------------------------------------------------------------------
# building blocks


def log_poch_ratio(k, b):
    """``log(k! / (1+b)_k)``; behaves like ``-b log k`` for large k."""
    k = np.asarray(k, dtype=float)
    return gammaln(k + 1.0) + gammaln(1.0 + b) - gammaln(k + 1.0 + b)


@lru_cache(maxsize=64)
def _poch_line(b: float, n: int) -> np.ndarray:
    out = log_poch_ratio(np.arange(n), b)
    out.setflags(write=False)
    return out


def _direct_poch_ratio(k: int, b: float) -> float:
    out = 1.0
    for i in range(1, k + 1):
        out *= i / (i + b)
    return out


def _xlogy_int(j, log_psi):
    """``j * log(psi)`` with the convention ``0 * log 0 = 0``."""
    if np.isneginf(log_psi):
        return np.where(j == 0, 0.0, -np.inf)
    return j * log_psi


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _hyp_valid(x: float, b: float) -> bool:
    return x < 1.0 or (x <= 1.0 + 1e-14 and b > 1.0)


@lru_cache(maxsize=4096)
def _hyp_moments(b: float, x: float):
    """Sum and first two factorial-weighted moments of ``k!/(1+b)_k x^k``."""
    with mpmath.workdps(30):
        x = min(x, 1.0) if x <= 1.0 + 1e-14 else x
        x = mpmath.mpf(x)
        f0 = mpmath.hyp2f1(1, 1, 1 + b, x)
        if x == 1:
            f1 = mpmath.hyp2f1(2, 2, 2 + b, x) if b > 2 else mpmath.inf
            f2 = mpmath.hyp2f1(3, 3, 3 + b, x) if b > 3 else mpmath.inf
        else:
            f1 = mpmath.hyp2f1(2, 2, 2 + b, x)
            f2 = mpmath.hyp2f1(3, 3, 3 + b, x)
        d1 = f1 / (1 + b)
        d2 = 4 * f2 / ((1 + b) * (2 + b))
        mean = x * d1 / f0
        second = (x * d1 + x * x * d2) / f0
        return float(f0), float(mean), float(second)


def solve_x_plus_exp(c: float) -> float:
    """The unique real x with ``x + exp(x) = c``."""
    if c < -700.0:
        x = c
    elif c < 700.0:
        x = c - float(lambertw(math.exp(c)).real)
    else:
        x = math.log(c)
    for _ in range(50):
        ex = math.exp(x) if x < 700 else math.inf
        step = (x + ex - c) / (1.0 + ex)
        x -= step
        if abs(step) <= 1e-16 * max(1.0, abs(x)):
            break
    return x


def _quadrant_boundary(t):
    return -abs(t)


def _axis1_boundary(t):
    return -t


def _slowed_free_boundary(t):
    """``mu1 + exp(mu2) = 0`` written as ``mu1+mu2`` against ``mu1-mu2``."""
    mu2 = solve_x_plus_exp(-t)
    return 2.0 * mu2 + t


def _symmetrized_boundary(t):
    return min(_slowed_free_boundary(t), _slowed_free_boundary(-t))


# --- evans-hanney: w = k1!/(1+b)_k1 ((k1+1)/(k1+2))^k2


def _eh_log(b, k1, k2):
    k1 = np.asarray(k1)
    return log_poch_ratio(k1, b) - k2 * np.log1p(1.0 / (np.asarray(k1, dtype=float) + 1.0))


def _eh_direct(b, k1, k2):
    return _direct_poch_ratio(k1, b) * ((k1 + 1) / (k1 + 2)) ** k2


def _eh_z(b, psi1, psi2):
    if not (psi2 < 1.0 and _hyp_valid(psi1, b)):
        return math.inf, False
    with mpmath.workdps(30):
        c = 1 - mpmath.mpf(psi2)
        p1 = mpmath.mpf(min(psi1, 1.0))

        def term(k):
            return (p1 ** k * mpmath.factorial(k) / mpmath.rf(1 + b, k)
                    * (2 + k) / (c * (k + 1) + 1))

        return float(mpmath.nsum(term, [0, mpmath.inf])), True


def _eh_lines(b, psi1, psi2, n):
    j = np.arange(n)
    r = psi2 * (j + 1.0) / (j + 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = np.where(r < 1.0, -np.log1p(-r), np.inf)
        mean2 = np.where(r < 1.0, r / (1.0 - r), np.inf)
        sec2 = np.where(r < 1.0, r * (1.0 + r) / (1.0 - r) ** 2, np.inf)
    jf = j.astype(float)
    return [LineSums(_poch_line(b, n) + _xlogy_int(j, _log(psi1)) + inner,
                     jf, mean2, jf * jf, jf * mean2, sec2)]


# --- slowed-free: w = k1!/(1+b)_k1 (k1+1)^k2 / k2!


def _sf_log(b, k1, k2):
    k2f = np.asarray(k2, dtype=float)
    return (log_poch_ratio(k1, b) + k2f * np.log(np.asarray(k1, dtype=float) + 1.0)
            - gammaln(k2f + 1.0))


def _sf_direct(b, k1, k2):
    return _direct_poch_ratio(k1, b) * (k1 + 1) ** k2 / math.factorial(k2)


def _sf_z(b, psi1, psi2):
    x = psi1 * math.exp(psi2)
    if not _hyp_valid(x, b):
        return math.inf, False
    f0 = _hyp_moments(b, x)[0]
    return math.exp(psi2) * f0, True


def _sf_lines(b, psi1, psi2, n):
    j = np.arange(n)
    lam = (j + 1.0) * psi2
    jf = j.astype(float)
    return [LineSums(_poch_line(b, n) + _xlogy_int(j, _log(psi1)) + lam,
                     jf, lam, jf * jf, jf * lam, lam + lam * lam)]


# --- symmetrized: (w_sf(k1,k2) + w_sf(k2,k1)) / 2


def _sym_log(b, k1, k2):
    return np.logaddexp(_sf_log(b, k1, k2), _sf_log(b, k2, k1)) - math.log(2.0)


def _sym_direct(b, k1, k2):
    return 0.5 * (_sf_direct(b, k1, k2) + _sf_direct(b, k2, k1))


def _sym_z(b, psi1, psi2):
    za, va = _sf_z(b, psi1, psi2)
    zb, vb = _sf_z(b, psi2, psi1)
    if not (va and vb):
        return math.inf, False
    return 0.5 * (za + zb), True


def _sym_lines(b, psi1, psi2, n):
    (a,) = _sf_lines(b, psi1, psi2, n)
    (c,) = _sf_lines(b, psi2, psi1, n)
    half = math.log(2.0)
    return [
        LineSums(a.log_s0 - half, a.m1, a.m2, a.m11, a.m12, a.m22),
        # mirrored part: the outer index runs over k2
        LineSums(c.log_s0 - half, c.m2, c.m1, c.m22, c.m12, c.m11),
    ]


# --- single species with power-law weight, second species free


def _single_log(b, k1, k2):
    return log_poch_ratio(k1, b) - gammaln(np.asarray(k2, dtype=float) + 1.0)


def _single_direct(b, k1, k2):
    return _direct_poch_ratio(k1, b) / math.factorial(k2)


def _single_z(b, psi1, psi2):
    if not _hyp_valid(psi1, b):
        return math.inf, False
    return _hyp_moments(b, psi1)[0] * math.exp(psi2), True


def _single_lines(b, psi1, psi2, n):
    j = np.arange(n)
    jf = j.astype(float)
    lam = np.full(n, float(psi2))
    return [LineSums(_poch_line(b, n) + _xlogy_int(j, _log(psi1)) + psi2,
                     jf, lam, jf * jf, jf * lam, lam + lam * lam)]


# --- factorized: k1!/(1+b1)_k1 * k2!/(1+b2)_k2


def _fact_log(b1, b2, k1, k2):
    return log_poch_ratio(k1, b1) + log_poch_ratio(k2, b2)


def _fact_direct(b1, b2, k1, k2):
    return _direct_poch_ratio(k1, b1) * _direct_poch_ratio(k2, b2)


def _fact_z(b1, b2, psi1, psi2):
    if not (_hyp_valid(psi1, b1) and _hyp_valid(psi2, b2)):
        return math.inf, False
    return _hyp_moments(b1, psi1)[0] * _hyp_moments(b2, psi2)[0], True


def _fact_lines(b1, b2, psi1, psi2, n):
    j = np.arange(n)
    jf = j.astype(float)
    if psi2 == 0.0:
        f0, mean, second = 1.0, 0.0, 0.0
    elif _hyp_valid(psi2, b2):
        f0, mean, second = _hyp_moments(b2, psi2)
    else:
        f0, mean, second = math.inf, math.inf, math.inf
    lam = np.full(n, mean)
    return [LineSums(_poch_line(b1, n) + _xlogy_int(j, _log(psi1)) + _log(f0),
                     jf, lam, jf * jf, jf * lam, np.full(n, second))]


# ---------------------------------------------------------------------------
# catalogue


def _need_b(params, key="b"):
    if key not in params:
        raise InvalidParam(f"parameter {key!r} is required")
    try:
        b = float(params[key])
    except (TypeError, ValueError):
        raise InvalidParam(f"parameter {key!r} must be a number") from None
    if not b > 0 or not math.isfinite(b):
        raise InvalidParam(f"parameter {key!r} must be positive, got {params[key]!r}")
    return b


def _evans_hanney(params):
    b = _need_b(params)
    return TwoSpeciesWeight(
        name="evans-hanney",
        log_eval=partial(_eh_log, b),
        exp_bound_xi=1.0,
        tail_exponent=(b, None),
        direct=partial(_eh_direct, b),
        closed_form_z=partial(_eh_z, b),
        closed_form_boundary=_quadrant_boundary,
        line_sums=partial(_eh_lines, b),
        params={"b": b},
    )


def _slowed_free(params):
    b = _need_b(params)
    return TwoSpeciesWeight(
        name="slowed-free",
        log_eval=partial(_sf_log, b),
        # (k1+1)^k2/k2! <= e^(k1+1) and e^(1+k1) <= e^(2|k|) for k != 0
        exp_bound_xi=math.e ** 2,
        tail_exponent=(b, None),
        direct=partial(_sf_direct, b),
        closed_form_z=partial(_sf_z, b),
        closed_form_boundary=_slowed_free_boundary,
        line_sums=partial(_sf_lines, b),
        params={"b": b},
    )


def _symmetrized(params):
    b = _need_b(params)
    return TwoSpeciesWeight(
        name="symmetrized",
        log_eval=partial(_sym_log, b),
        exp_bound_xi=math.e ** 2,
        tail_exponent=(b, b),
        direct=partial(_sym_direct, b),
        closed_form_z=partial(_sym_z, b),
        closed_form_boundary=_symmetrized_boundary,
        line_sums=partial(_sym_lines, b),
        params={"b": b},
    )


def _single_species(params):
    b = _need_b(params)
    return TwoSpeciesWeight(
        name="single-species-b",
        log_eval=partial(_single_log, b),
        exp_bound_xi=1.0,
        tail_exponent=(b, None),
        direct=partial(_single_direct, b),
        closed_form_z=partial(_single_z, b),
        closed_form_boundary=_axis1_boundary,
        line_sums=partial(_single_lines, b),
        params={"b": b},
    )


def _factorized(params):
    params = dict(params)
    if "b" in params:
        params.setdefault("b1", params["b"])
        params.setdefault("b2", params["b"])
    b1 = _need_b(params, "b1")
    b2 = _need_b(params, "b2")
    return TwoSpeciesWeight(
        name="factorized",
        log_eval=partial(_fact_log, b1, b2),
        exp_bound_xi=1.0,
        tail_exponent=(b1, b2),
        direct=partial(_fact_direct, b1, b2),
        closed_form_z=partial(_fact_z, b1, b2),
        closed_form_boundary=_quadrant_boundary,
        line_sums=partial(_fact_lines, b1, b2),
        params={"b1": b1, "b2": b2},
    )


_CATALOGUE = {
    "evans-hanney": _evans_hanney,
    "slowed-free": _slowed_free,
    "symmetrized": _symmetrized,
    "single-species-b": _single_species,
    "single-species": _single_species,
    "factorized": _factorized,
}

BUILTIN_NAMES = tuple(_CATALOGUE)


def builtin(name: str, params: Optional[Mapping] = None, **kwargs) -> TwoSpeciesWeight:
    """Look up a catalogue weight.

    >>> builtin("evans-hanney", b=4).eval(0, 0)
    1.0
    """
    merged = dict(params or {})
    merged.update(kwargs)
    try:
        factory = _CATALOGUE[name]
    except KeyError:
        raise UnknownName(f"unknown weight {name!r}; choose from {', '.join(BUILTIN_NAMES)}") from None
    return factory(merged)
