"""Single-site grand-canonical quantities and the convergence domain.

``z(mu) = sum_k w(k) exp(mu . k)`` is summed in fugacity coordinates
``psi = exp(mu)`` so that ``mu_i = -inf`` is simply ``psi_i = 0``.  Each
evaluation returns the pressure ``p = log z``, the densities
``R = grad p`` and the covariance ``D^2 p`` together with a certified
relative truncation error and a membership label for the domain
``D_mu`` of finite first moments.

The boundary of ``D_mu`` is described in rotated coordinates
``t = mu1 - mu2`` and ``u = mu1 + mu2``: the domain is the region
``u <= f(t)`` under a concave graph ``f``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from . import _series
from .errors import Diverged, InvalidParam, NoCertificate, RadiusExhausted
from .weights import LineSums, TwoSpeciesWeight

__all__ = [
    "Fugacity",
    "ChemicalPotential",
    "Membership",
    "GrandCanonicalState",
    "Corner",
    "DomainBoundary",
    "evaluate",
    "pressure",
    "density",
    "domain_boundary",
    "get_boundary",
    "boundary_point",
    "boundary_distance",
    "tail_rate",
    "covariance_check",
]

DEFAULT_TOL = 1e-10
LINE_BUDGET = 1 << 17
SHELL_BUDGET = 4096
BOUNDARY_EPS = 1e-9
CORNER_TOL = 1e-3


# ---------------------------------------------------------------------------
# coordinates


@dataclass(frozen=True)
class Fugacity:
    psi1: float
    psi2: float

    def __post_init__(self):
        for v in (self.psi1, self.psi2):
            if not (math.isfinite(v) and v >= 0):
                raise InvalidParam(f"fugacities must be finite and nonnegative, got {v!r}")
        object.__setattr__(self, "psi1", float(self.psi1))
        object.__setattr__(self, "psi2", float(self.psi2))

    def to_mu(self) -> "ChemicalPotential":
        f = lambda x: math.log(x) if x > 0 else -math.inf
        return ChemicalPotential(f(self.psi1), f(self.psi2))

    def __iter__(self):
        return iter((self.psi1, self.psi2))


@dataclass(frozen=True)
class ChemicalPotential:
    mu1: float
    mu2: float

    def __post_init__(self):
        for v in (self.mu1, self.mu2):
            if math.isnan(v) or v == math.inf:
                raise InvalidParam(f"chemical potentials lie in [-inf, inf), got {v!r}")
        object.__setattr__(self, "mu1", float(self.mu1))
        object.__setattr__(self, "mu2", float(self.mu2))

    def to_psi(self) -> Fugacity:
        return Fugacity(math.exp(self.mu1), math.exp(self.mu2))

    def rotated(self):
        """``(mu1 - mu2, mu1 + mu2)``."""
        return self.mu1 - self.mu2, self.mu1 + self.mu2

    def __iter__(self):
        return iter((self.mu1, self.mu2))

    def as_array(self) -> np.ndarray:
        return np.array([self.mu1, self.mu2])


def _as_fugacity(x) -> Fugacity:
    if isinstance(x, Fugacity):
        return x
    if isinstance(x, ChemicalPotential):
        return x.to_psi()
    a, b = x
    return Fugacity(a, b)


class Membership(enum.Enum):
    INTERIOR = "Interior"
    BOUNDARY_IN = "BoundaryInDomain"
    BOUNDARY_OUT = "BoundaryOutside"
    EXTERIOR = "Exterior"

    @property
    def on_boundary(self) -> bool:
        return self in (Membership.BOUNDARY_IN, Membership.BOUNDARY_OUT)

    @property
    def in_domain(self) -> bool:
        return self in (Membership.INTERIOR, Membership.BOUNDARY_IN)


@dataclass(frozen=True)
class GrandCanonicalState:
    psi: Fugacity
    z_value: float
    p_value: float
    R: np.ndarray
    covariance: np.ndarray
    trunc_error: float
    membership: Membership
    cov_error: float = 0.0
    n_terms: int = 0

    @property
    def mu(self) -> ChemicalPotential:
        return self.psi.to_mu()

    def to_dict(self) -> dict:
        def clean(x):
            x = float(x)
            return x if math.isfinite(x) else str(x)

        return {
            "psi": [self.psi.psi1, self.psi.psi2],
            "mu": [clean(v) for v in self.mu],
            "z": clean(self.z_value),
            "p": clean(self.p_value),
            "R": [clean(v) for v in self.R],
            "cov": [[clean(v) for v in row] for row in self.covariance],
            "membership": self.membership.value,
            "trunc_error": clean(self.trunc_error),
        }


# ---------------------------------------------------------------------------
# series blocks


@lru_cache(maxsize=8)
def _triangle(M: int):
    """Flat layout of ``{k : k1 + k2 < M}`` ordered by shell then k1."""
    m = np.repeat(np.arange(M), np.arange(1, M + 1))
    offsets = np.concatenate([[0], np.cumsum(np.arange(1, M))])
    k1 = np.arange(m.size) - offsets[m]
    k2 = m - k1
    for a in (m, offsets, k1, k2):
        a.setflags(write=False)
    return k1, k2, m, offsets


def _triangle_logw(w: TwoSpeciesWeight, M: int) -> np.ndarray:
    key = ("tri", M)
    out = w._cache.get(key)
    if out is None:
        k1, k2, _, _ = _triangle(M)
        out = np.asarray(w.log_eval(k1, k2), dtype=float)
        out.setflags(write=False)
        w._cache[key] = out
    return out


def _xlog(k, psi):
    if psi > 0:
        return k * math.log(psi)
    return np.where(k == 0, 0.0, -np.inf)


def _shell_lines(w: TwoSpeciesWeight, psi1: float, psi2: float, M: int):
    k1, k2, m, offsets = _triangle(M)
    v = _triangle_logw(w, M) + _xlog(k1, psi1) + _xlog(k2, psi2)
    mx = np.maximum.reduceat(v, offsets)
    base = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(v - base[m])
    s0 = np.add.reduceat(e, offsets)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_s0 = np.where(np.isposinf(mx), np.inf, base + np.log(s0))
        f1, f2 = k1.astype(float), k2.astype(float)
        mom = [np.add.reduceat(e * x, offsets) / s0 for x in (f1, f2, f1 * f1, f1 * f2, f2 * f2)]
    mom = [np.nan_to_num(x, nan=0.0) for x in mom]
    return [LineSums(log_s0, *mom)]


def _box_lines(w: TwoSpeciesWeight, psi1: float, psi2: float):
    S = w.support
    lw = w.log_box(S, S)
    k1 = np.arange(S + 1)[:, None]
    k2 = np.arange(S + 1)[None, :]
    v = lw + _xlog(k1, psi1) + _xlog(k2, psi2)
    mx = v.max(axis=1)
    base = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(v - base[:, None])
    s0 = e.sum(axis=1)
    k2f = np.broadcast_to(k2.astype(float), e.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        m2 = (e * k2f).sum(axis=1) / s0
        m22 = (e * k2f * k2f).sum(axis=1) / s0
        log_s0 = base + np.log(s0)
    j = np.arange(S + 1, dtype=float)
    return [LineSums(log_s0, j, m2, j * j, j * m2, m22)]


_MOMENTS = ("s0", "m1", "m2", "m11", "m12", "m22")


def _sum_moments(blocks, candidates):
    sums = []
    for q in _MOMENTS:
        seqs = []
        for b in blocks:
            mom = None if q == "s0" else getattr(b, q)
            seqs.append(b.log_s0.copy() if mom is None else _series.log_terms(b.log_s0, mom))
        sums.append(_series.certified_sum(seqs, candidates))
    return sums


# ---------------------------------------------------------------------------
# evaluation


def boundary_distance(w: TwoSpeciesWeight, mu) -> Optional[float]:
    """Signed vertical distance ``f(t) - u`` to the closed-form boundary.

    Positive inside the domain; ``None`` when no closed form is attached
    or a coordinate is infinite.
    """
    mu1, mu2 = mu
    if w.closed_form_boundary is None or not (math.isfinite(mu1) and math.isfinite(mu2)):
        return None
    t, u = mu1 - mu2, mu1 + mu2
    return float(w.closed_form_boundary(t)) - u


def evaluate(w: TwoSpeciesWeight, psi, tol: float = DEFAULT_TOL, *,
             budget: Optional[int] = None, strict: bool = True) -> GrandCanonicalState:
    """Grand-canonical state at fugacity ``psi`` with certified truncation.

    ``psi`` may be a :class:`Fugacity`, a :class:`ChemicalPotential` or a
    pair of fugacities.  With ``strict`` set, failing to certify ``tol``
    a tail that fits neither a geometric nor a power-law bound within the
    budget raises :class:`NoCertificate`.  The achieved relative error on
    z and the first moments is reported in ``trunc_error``; on the boundary
    power-law tails can leave it above ``tol`` at the default budget.
    """
    if not (0 < tol < 1):
        raise InvalidParam("tol must lie in (0, 1)")
    psi = _as_fugacity(psi)
    mu = psi.to_mu()
    geo = None
    d = boundary_distance(w, mu)
    if d is not None:
        scale = max(1.0, abs(mu.mu1), abs(mu.mu2))
        if d < -BOUNDARY_EPS * scale:
            raise Diverged(f"mu=({mu.mu1:.6g}, {mu.mu2:.6g}) lies outside the domain of z "
                           f"(distance {d:.3e})")
        geo = "boundary" if abs(d) <= BOUNDARY_EPS * scale else "interior"

    cands = w.tail_candidates()
    if w.support is not None:
        blocks_fn = lambda n: _box_lines(w, psi.psi1, psi.psi2)
        n, n_max = w.support + 1, w.support + 1
    elif w.line_sums is not None:
        blocks_fn = lambda n: w.line_sums(psi.psi1, psi.psi2, n)
        n, n_max = 1024, budget or LINE_BUDGET
    else:
        blocks_fn = lambda n: _shell_lines(w, psi.psi1, psi.psi2, n)
        n, n_max = 256, budget or SHELL_BUDGET
    n = min(n, n_max)

    while True:
        blocks = blocks_fn(n)
        if w.support is not None:
            sums = _exact_sums(blocks)
        else:
            sums = _sum_moments(blocks, cands)
        z_s, r1_s, r2_s = sums[:3]
        first = (z_s, r1_s, r2_s)
        err = max(s.rel_error for s in first if not s.divergent) if not z_s.divergent else math.inf
        settled = z_s.divergent or (
            all(s.divergent or s.rel_error <= tol for s in first)
            and not any(_series.UNCERTAIN in s.kinds for s in first))
        if settled or n >= n_max:
            break
        n = min(2 * n, n_max)

    growing = z_s.divergent and any(
        t.kind == _series.DIVERGENT and not math.isfinite(t.exponent) for t in z_s.tails)
    if geo is None and growing:
        raise Diverged(f"z diverges at psi=({psi.psi1:.6g}, {psi.psi2:.6g})")
    power_like = any(_series.POWER in s.kinds or s.divergent for s in first)
    if geo is None:
        geo = "boundary" if power_like else "interior"
    if geo == "interior" and z_s.divergent:
        raise Diverged(f"z diverges at psi=({psi.psi1:.6g}, {psi.psi2:.6g}) inside the "
                       "declared boundary; the closed-form boundary is inconsistent")

    if z_s.divergent:
        inf = math.inf
        return GrandCanonicalState(psi, inf, inf, np.array([inf, inf]),
                                   np.full((2, 2), inf), inf, Membership.BOUNDARY_OUT, inf, n)

    logz = z_s.log_value
    R = np.array([_ratio(r1_s, logz), _ratio(r2_s, logz)])
    if psi.psi1 == 0:
        R[0] = 0.0
    if psi.psi2 == 0:
        R[1] = 0.0
    if geo == "boundary":
        membership = Membership.BOUNDARY_IN if np.all(np.isfinite(R)) else Membership.BOUNDARY_OUT
    else:
        membership = Membership.INTERIOR
    second = np.array([_ratio(s, logz) for s in sums[3:]])
    with np.errstate(invalid="ignore"):
        cov = np.array([[second[0] - R[0] ** 2, second[1] - R[0] * R[1]],
                        [second[1] - R[0] * R[1], second[2] - R[1] ** 2]])
    cov = np.where(np.isnan(cov), math.inf, cov)
    finite_err = [s.rel_error for s in first if not s.divergent]
    err = max(finite_err)
    cov_err = max((s.rel_error for s in sums[3:]), default=0.0)
    if strict and any(_series.UNCERTAIN in s.kinds for s in first):
        raise NoCertificate(f"no tail bound applies after {n} terms "
                            f"(error estimate {err:.3e}, tol {tol:.1e})")
    return GrandCanonicalState(psi, math.exp(logz) if logz < 709 else math.inf, logz, R, cov,
                               err, membership, cov_err, n)


def _ratio(s: _series.SeriesSum, logz: float) -> float:
    if s.divergent:
        return math.inf
    if s.log_value == -math.inf:
        return 0.0
    return math.exp(s.log_value - logz)


def _exact_sums(blocks):
    sums = []
    for q in _MOMENTS:
        parts = []
        for b in blocks:
            L = b.log_s0 if q == "s0" else _series.log_terms(b.log_s0, getattr(b, q))
            fin = L[np.isfinite(L)]
            if fin.size:
                parts.append(float(np.logaddexp.reduce(fin)))
        val = float(np.logaddexp.reduce(parts)) if parts else -math.inf
        sums.append(_series.SeriesSum(val, 0.0, (_series.Tail(_series.ZERO),)))
    return sums


def pressure(w, mu, tol: float = DEFAULT_TOL, **kw) -> float:
    return evaluate(w, mu, tol, **kw).p_value


def density(w, mu, tol: float = DEFAULT_TOL, **kw) -> np.ndarray:
    return evaluate(w, mu, tol, **kw).R


# ---------------------------------------------------------------------------
# boundary of the domain


@dataclass(frozen=True)
class Corner:
    """A kink of the boundary graph at rotated coordinate ``t``."""

    t: float
    mu: ChemicalPotential
    slope_left: float
    slope_right: float
    normals: tuple  # two unit vectors in mu coordinates


@dataclass(frozen=True)
class DomainBoundary:
    """Boundary graph ``t -> u`` together with sampled values and corners."""

    boundary_fn: Callable[[float], float]
    grid: np.ndarray
    values: np.ndarray
    corner_list: list = field(default_factory=list)
    closed_form: bool = True

    def is_corner(self) -> np.ndarray:
        """Grid flags: the grid point nearest to each detected corner."""
        flags = np.zeros(self.grid.size, dtype=bool)
        for c in self.corner_list:
            flags[int(np.argmin(np.abs(self.grid - c.t)))] = True
        return flags


def boundary_point(f: Callable[[float], float], t: float) -> ChemicalPotential:
    """The boundary point with rotated coordinate ``t``."""
    u = f(t)
    return ChemicalPotential((u + t) / 2.0, (u - t) / 2.0)


def one_sided_slopes(f: Callable[[float], float], t: float, h: float = 1e-6):
    """Second-order one-sided difference quotients ``(f'(t-), f'(t+))``."""
    f0 = f(t)
    left = (3 * f0 - 4 * f(t - h) + f(t - 2 * h)) / (2 * h)
    right = (-3 * f0 + 4 * f(t + h) - f(t + 2 * h)) / (2 * h)
    return left, right


def normal_from_slope(fp: float) -> np.ndarray:
    """Outward unit normal in mu coordinates where the rotated slope is ``fp``."""
    v = np.array([1.0 - fp, 1.0 + fp])
    return v / np.linalg.norm(v)


def _refine_corner(f, a, c, tol, h=1e-6):
    """Locate a slope jump inside ``[a, c]`` by bisection; ``None`` if smooth.

    Each step compares the one-sided slopes at the midpoint (stencil an
    eighth of the bracket) with the outer slopes and keeps the half that
    carries the larger mismatch.
    """
    sa = one_sided_slopes(f, a, h)[1]
    sc = one_sided_slopes(f, c, h)[0]
    if abs(sa - sc) <= tol:
        return None
    while c - a > 1e-11 * max(1.0, abs(a)):
        m = 0.5 * (a + c)
        lm, rm = one_sided_slopes(f, m, max((c - a) / 16, 1e-10))
        if abs(sa - lm) >= abs(rm - sc):
            c, sc = m, lm
        else:
            a, sa = m, rm
        if abs(sa - sc) <= tol:
            return None
    t = 0.5 * (a + c)
    left = one_sided_slopes(f, a, h)[0]
    right = one_sided_slopes(f, c, h)[1]
    if abs(left - right) <= tol:
        return None
    return t, left, right


def _closed_form_corners(f, grid, tol):
    corners = []
    g = np.unique(np.asarray(grid, dtype=float))
    for a, c in zip(g[:-1], g[1:]):
        left, right = one_sided_slopes(f, a)
        if abs(left - right) > tol:
            # kink sitting on a grid point
            if not corners or abs(corners[-1][0] - a) >= 1e-6:
                corners.append((a, left, right))
            continue
        found = _refine_corner(f, a, c, tol)
        if found is None:
            continue
        t, left, right = found
        if corners and abs(corners[-1][0] - t) < 1e-6:
            continue
        corners.append(found)
    return corners


def _make_corner(f, t, left, right) -> Corner:
    return Corner(t, boundary_point(f, t), left, right,
                  (normal_from_slope(left), normal_from_slope(right)))


class _NumericBoundary:
    """``t -> -limsup_m max_{|k|_1=m} (2 log w(k) + t (k1 - k2)) / m``.

    The shell maxima are fitted by ``L + A log(m)/m + B/m + C/m^2`` on the last two
    decades of shells; disagreement between the decades beyond ``stab_tol``
    raises :class:`RadiusExhausted`.
    """

    def __init__(self, w: TwoSpeciesWeight, radius: int = SHELL_BUDGET,
                 stab_tol: float = 1e-3, n_shells: int = 48):
        self.w = w
        self.radius = radius
        self.stab_tol = stab_tol
        lo = max(4, radius // 100)
        self.shells = np.unique(np.geomspace(lo, radius, n_shells).astype(int))
        self._logw = {int(m): np.asarray(w.log_eval(np.arange(m + 1), m - np.arange(m + 1)),
                                         dtype=float) for m in self.shells}
        self._memo = {}

    def shell_max(self, t: float) -> np.ndarray:
        out = np.empty(self.shells.size)
        for i, m in enumerate(self.shells):
            k1 = np.arange(m + 1)
            out[i] = np.max(2.0 * self._logw[int(m)] + t * (2 * k1 - m)) / m
        return out

    @staticmethod
    def _fit(m, s):
        A = np.column_stack([np.ones_like(m), np.log(m) / m, 1.0 / m, 1.0 / m ** 2])
        return np.linalg.lstsq(A, s, rcond=None)[0][0]

    def __call__(self, t: float) -> float:
        t = float(t)
        if t in self._memo:
            return self._memo[t]
        s = self.shell_max(t)
        m = self.shells.astype(float)
        split = m >= self.radius / 10
        last = self._fit(m[split], s[split])
        prev = self._fit(m[~split], s[~split]) if (~split).sum() >= 4 else last
        if abs(last - prev) > self.stab_tol * max(1.0, abs(last)):
            raise RadiusExhausted(
                f"boundary limsup at t={t:.6g} not stable within radius {self.radius} "
                f"({prev:.6g} vs {last:.6g})")
        self._memo[t] = -last
        return -last


def _numeric_corners(f, grid, tol):
    g = np.unique(np.asarray(grid, dtype=float))
    if g.size < 4:
        return []
    u = np.array([f(t) for t in g])
    slope = np.diff(u) / np.diff(g)
    jump = np.abs(np.diff(slope))
    out = []
    for i in range(jump.size):
        nb = max(jump[i - 1] if i > 0 else 0.0, jump[i + 1] if i + 1 < jump.size else 0.0)
        if jump[i] > tol and jump[i] > 3.0 * nb:
            out.append((g[i + 1], slope[i], slope[i + 1]))
    return out


def domain_boundary(w: TwoSpeciesWeight, tilde_mu1_grid: Sequence[float], *,
                    radius: int = SHELL_BUDGET, corner_tol: float = CORNER_TOL) -> DomainBoundary:
    """Sample the boundary of the convergence domain and locate its corners."""
    grid = np.asarray(tilde_mu1_grid, dtype=float)
    if grid.ndim != 1 or not np.all(np.isfinite(grid)):
        raise InvalidParam("grid must be a finite 1D sequence")
    if w.closed_form_boundary is not None:
        f = w.closed_form_boundary
        raw = _closed_form_corners(f, grid, corner_tol)
        closed = True
    else:
        f = _NumericBoundary(w, radius)
        raw = _numeric_corners(f, grid, corner_tol)
        closed = False
    values = np.array([f(t) for t in grid])
    corners = [_make_corner(f, *c) for c in raw]
    return DomainBoundary(f, grid, values, corners, closed)


def get_boundary(w: TwoSpeciesWeight, grid=None) -> DomainBoundary:
    """Boundary description cached on the weight (default grid ``[-8, 8]``)."""
    key = ("boundary",)
    out = w._cache.get(key)
    if out is None:
        if grid is None:
            grid = np.linspace(-8.0, 8.0, 321)
        out = domain_boundary(w, grid)
        w._cache[key] = out
    return out


# ---------------------------------------------------------------------------
# diagnostics


def tail_rate(w: TwoSpeciesWeight, psi, direction, radii) -> list:
    """Estimates ``-log(w(k) psi^k) / |k|`` along ``k = round(r d)``.

    On the boundary these tend to zero along the outward normal and stay
    positive in other directions; in the interior they stay positive.
    """
    mu = _as_fugacity(psi).to_mu()
    d = np.asarray(direction, dtype=float)
    if d.shape != (2,) or np.any(d < 0) or not np.linalg.norm(d) > 0:
        raise InvalidParam("direction must be a nonzero vector in the positive quadrant")
    d = d / np.linalg.norm(d)
    out = []
    for r in radii:
        k = np.rint(r * d).astype(np.int64)
        norm = float(np.hypot(*k))
        if norm == 0:
            out.append(math.nan)
            continue
        logm = float(w.log_eval(k[0], k[1]))
        for ki, mi in zip(k, mu):
            if ki:
                logm += ki * mi
        out.append(-logm / norm)
    return out


def covariance_check(w: TwoSpeciesWeight, psi, h: float = 1e-4, tol: float = 1e-13) -> float:
    """Max entrywise gap between the covariance and a central-difference Jacobian of R."""
    st = evaluate(w, psi, tol)
    mu = st.mu.as_array()
    jac = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        rp = evaluate(w, ChemicalPotential(*(mu + e)), tol).R
        rm = evaluate(w, ChemicalPotential(*(mu - e)), tol).R
        jac[:, j] = (rp - rm) / (2 * h)
    return float(np.max(np.abs(jac - st.covariance)))
