"""Convex conjugate of the pressure and the condensation phase diagram.

For a density pair ``rho`` the maximiser ``mbar`` of ``rho.mu - p(mu)``
over the closed domain ``D_mu`` gives the entropy density
``s(rho) = rho.mbar - p(mbar)`` and the background density
``R_c(rho) = R(mbar)``.  Species ``i`` condenses when ``R_c,i < rho_i``.
"""

from __future__ import annotations

import concurrent.futures as cf
import enum
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import Diverged, InvalidParam, NotInDomain, NumericalError, SolverStall
from .grand_canonical import (
    ChemicalPotential,
    GrandCanonicalState,
    Membership,
    boundary_distance,
    boundary_point,
    evaluate,
    get_boundary,
    normal_from_slope,
    one_sided_slopes,
)
from .weights import TwoSpeciesWeight

__all__ = [
    "DensityPair",
    "Phase",
    "EntropySolution",
    "SubgradientCone",
    "PhaseDiagramGrid",
    "solve",
    "entropy",
    "subgradient_cone",
    "phase_diagram",
]

GRAD_TOL = 1e-8
EPS_PHASE = 1e-6
EVAL_TOL = 1e-9
_NEAR_BOUNDARY = 1e-7
_COND_MAX = 1e12
_T_SNAP = 1e-6


@dataclass(frozen=True)
class DensityPair:
    rho1: float
    rho2: float

    def __post_init__(self):
        for v in (self.rho1, self.rho2):
            if not (math.isfinite(v) and v >= 0):
                raise InvalidParam(f"densities must be finite and nonnegative, got {v!r}")
        if self.rho1 == 0 and self.rho2 == 0:
            raise InvalidParam("at least one density must be positive")
        object.__setattr__(self, "rho1", float(self.rho1))
        object.__setattr__(self, "rho2", float(self.rho2))

    def as_array(self) -> np.ndarray:
        return np.array([self.rho1, self.rho2])

    def __iter__(self):
        return iter((self.rho1, self.rho2))


def _as_density(x) -> DensityPair:
    return x if isinstance(x, DensityPair) else DensityPair(*x)


class Phase(enum.Enum):
    HOMOGENEOUS = "Homogeneous"
    CONDENSED1 = "Condensed1"
    CONDENSED2 = "Condensed2"
    CONDENSED_BOTH = "CondensedBoth"
    UNRESOLVED = "Unresolved"


@dataclass(frozen=True)
class EntropySolution:
    rho: DensityPair
    mbar: ChemicalPotential
    s_value: float
    rc: np.ndarray
    phase: Phase
    normal_cone: tuple
    on_boundary: bool
    corner: bool = False
    boundary_t: float = math.nan
    state: Optional[GrandCanonicalState] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        f = lambda x: float(x) if math.isfinite(x) else str(float(x))
        return {
            "rho": [self.rho.rho1, self.rho.rho2],
            "mbar": [f(v) for v in self.mbar],
            "s": f(self.s_value),
            "rc": [f(v) for v in self.rc],
            "phase": self.phase.value,
            "on_boundary": self.on_boundary,
            "corner": self.corner,
            "normals": [[float(x) for x in n] for n in self.normal_cone],
        }


def _classify(rho: np.ndarray, rc: np.ndarray, eps: float) -> Phase:
    c1 = rc[0] < rho[0] * (1 - eps)
    c2 = rc[1] < rho[1] * (1 - eps)
    if c1 and c2:
        return Phase.CONDENSED_BOTH
    if c1:
        return Phase.CONDENSED1
    if c2:
        return Phase.CONDENSED2
    return Phase.HOMOGENEOUS


def _F(st: GrandCanonicalState, rho: np.ndarray) -> float:
    mu = st.mu.as_array()
    dot = sum(r * m for r, m in zip(rho, mu) if r != 0)
    return st.p_value - dot


def _eval(w, mu) -> GrandCanonicalState:
    return evaluate(w, ChemicalPotential(*mu), EVAL_TOL, strict=False)


# ---------------------------------------------------------------------------
# two-dimensional problem


class _Problem:
    def __init__(self, w: TwoSpeciesWeight, rho: np.ndarray, gtol: float):
        self.w = w
        self.rho = rho
        # relative per species: the covariance scales like rho at low density
        self.gtol = gtol * np.maximum(rho, 1e-12)
        self.bd = get_boundary(w)
        self.f = self.bd.boundary_fn
        self.closed = self.bd.closed_form
        self.evals = 0

    def inside_gap(self, mu) -> float:
        """Vertical distance to the boundary (positive inside)."""
        if self.closed:
            return boundary_distance(self.w, mu)
        t = mu[0] - mu[1]
        return self.f(t) - (mu[0] + mu[1])

    def eval(self, mu) -> GrandCanonicalState:
        self.evals += 1
        return _eval(self.w, mu)

    def start(self) -> np.ndarray:
        mu = np.log(self.rho / (1.0 + self.rho))
        gap = self.inside_gap(mu)
        if gap < 0.5:
            mu = mu - (0.5 - gap) / 2.0 - 0.25
        return mu

    def newton(self, mu, max_iter=200):
        """Damped Newton; returns (mu, state, status) with status converged/boundary/stalled."""
        st = self.eval(mu)
        F = _F(st, self.rho)
        for _ in range(max_iter):
            g = st.R - self.rho
            if np.all(np.abs(g) <= self.gtol):
                return mu, st, "converged"
            H = st.covariance
            step = None
            if np.all(np.isfinite(H)):
                try:
                    if np.linalg.cond(H) < _COND_MAX:
                        step = -np.linalg.solve(H, g)
                except np.linalg.LinAlgError:
                    step = None
            if step is None or not np.all(np.isfinite(step)) or g @ step >= 0:
                step = -g
            alpha = 1.0
            accepted = False
            while alpha > 1e-12:
                cand = mu + alpha * step
                if self.inside_gap(cand) > 0:
                    try:
                        sc = self.eval(cand)
                    except Diverged:
                        sc = None
                    if sc is not None and sc.membership == Membership.INTERIOR:
                        Fc = _F(sc, self.rho)
                        if Fc <= F + 1e-4 * alpha * (g @ step) or abs(Fc - F) <= 1e-15 * max(1.0, abs(F)):
                            mu, st, F = cand, sc, Fc
                            accepted = True
                            break
                alpha *= 0.5
            if not accepted:
                return mu, st, "stalled"
            scale = max(1.0, float(np.max(np.abs(mu))))
            if self.inside_gap(mu) < _NEAR_BOUNDARY * scale:
                return mu, st, "boundary"
        return mu, st, "stalled"

    # -- stage 2 --------------------------------------------------------------

    def slope(self, t, side=0):
        left, right = one_sided_slopes(self.f, t)
        if side < 0:
            return left
        if side > 0:
            return right
        return 0.5 * (left + right)

    def gprime(self, t, side=0):
        mu = boundary_point(self.f, t)
        fp = self.slope(t, side)
        dmu = ((fp + 1.0) / 2.0, (fp - 1.0) / 2.0)
        st = self.eval(mu.as_array())
        if not math.isfinite(st.z_value):
            return math.nan
        out = 0.0
        for Ri, ri, di in zip(st.R, self.rho, dmu):
            if abs(di) < 1e-7:
                continue
            out += (Ri - ri) * di
        return out

    def robust_gprime(self, t):
        g = self.gprime(t)
        if math.isnan(g):
            h = 1e-9 * (1.0 + abs(t))
            for s in (1, -1, 10, -10):
                g = self.gprime(t + s * h)
                if not math.isnan(g):
                    break
        if math.isnan(g):
            raise SolverStall(f"directional derivative undefined near t={t:.6g}")
        return g

    def boundary_min(self, t0):
        """Walk downhill along the boundary from ``t0`` to the first local minimum."""
        g0 = self.robust_gprime(t0)
        if g0 == 0:
            return t0
        d = 1.0 if g0 < 0 else -1.0

        def flips(g):
            return g == 0 or (g > 0) != (g0 > 0)

        corners = sorted((c.t for c in self.bd.corner_list), key=lambda c: d * c)
        lo, delta = t0, 0.25
        for _ in range(40):
            hi = t0 + d * delta
            for c in corners:
                if not d * lo < d * c < d * hi:
                    continue
                # one-sided derivatives at the kink, approaching side first
                off = 1e-5 * (1.0 + abs(c))  # clear of the slope stencil
                near, far = self.gprime(c, -d), self.gprime(c, d)
                if math.isnan(near) or math.isnan(far):
                    # kink outside the domain: judge it from either side, backing
                    # off until the series is summable
                    xn, near = self._finite_gprime(c, -d, lo)
                    if xn is not None and flips(near):
                        return self._root(lo, xn, None)
                    xf, _ = self._finite_gprime(c, d, hi)
                    lo = xf if xf is not None else c + d * off
                    continue
                if flips(near):
                    return self._root(lo, c - d * off, c)
                if flips(far):
                    return c  # downhill into the kink, uphill after it
                lo = c + d * off
            if d * lo >= d * hi:
                delta *= 2.0
                continue
            ghi = self.robust_gprime(hi)
            if ghi == 0:
                return hi
            if flips(ghi):
                return self._root(lo, hi, None)
            lo = hi
            delta *= 2.0
        raise SolverStall("no sign change of the boundary derivative")

    def _finite_gprime(self, c, side, limit):
        """First finite derivative at ``c + side * off`` for growing offsets short of ``limit``."""
        off = 1e-5 * (1.0 + abs(c))
        while side * (c + side * off) < side * limit:
            x = c + side * off
            g = self.gprime(x)
            if math.isfinite(g):
                return x, g
            off *= 4.0
        return None, math.nan

    def _root(self, x, y, fallback):
        a, b = sorted((x, y))
        ga, gb = self.robust_gprime(a), self.robust_gprime(b)
        if (ga > 0) == (gb > 0) and ga != 0 and gb != 0:
            if fallback is None:
                raise SolverStall("lost the sign change of the boundary derivative")
            return fallback  # the root lies within the stencil offset of a kink
        return brentq(self.robust_gprime, a, b, xtol=1e-13, rtol=4 * np.finfo(float).eps,
                      maxiter=200)

    def snap(self, t):
        for c in self.bd.corner_list:
            if abs(t - c.t) < _T_SNAP:
                return c.t, c
        return t, None


def _cone_coefficients(v, normals):
    if len(normals) == 1:
        n = normals[0]
        lam = float(v @ n)
        return np.array([lam]), float(np.linalg.norm(v - lam * n))
    N = np.column_stack(normals)
    lam = np.linalg.solve(N, v)
    return lam, 0.0


def _finish_boundary(prob: _Problem, t, rho, eps):
    t, corner = prob.snap(t)
    mu = boundary_point(prob.f, t)
    st = prob.eval(mu.as_array())
    if corner is not None:
        normals = corner.normals
    else:
        normals = (normal_from_slope(prob.slope(t)),)
    if not np.all(np.isfinite(st.R)):
        # infinite boundary densities cannot balance a finite rho
        return mu, st, normals, corner is not None, t, False
    v = rho - st.R
    lam, resid = _cone_coefficients(v, normals)
    scale = 1e-6 * (1.0 + float(np.linalg.norm(rho)))
    ok = np.all(lam >= -scale) and resid <= 1e-4 * np.linalg.norm(v) + scale
    return mu, st, normals, corner is not None, t, ok


def _solve2d(w, rho, tol, eps):
    prob = _Problem(w, rho, tol)
    mu, st, status = prob.newton(prob.start())
    if status == "converged":
        return _interior_solution(rho, mu, st, eps)
    t0 = mu[0] - mu[1]
    t = prob.boundary_min(t0)
    mub, stb, normals, is_corner, t, ok = _finish_boundary(prob, t, rho, eps)
    if not ok:
        # the constrained minimum is inside after all; restart just inside it
        n = normals[0]
        mu_in = mub.as_array() - 1e-3 * n
        mu, st, status = prob.newton(mu_in, max_iter=400)
        if status == "converged":
            return _interior_solution(rho, mu, st, eps)
        raise SolverStall(f"rho=({rho[0]:.6g}, {rho[1]:.6g}): optimality conditions fail on "
                          "the boundary and Newton did not converge inside")
    rc = stb.R.copy()
    phase = _classify(rho, rc, eps)
    s = float(rho @ mub.as_array() - stb.p_value)
    return EntropySolution(DensityPair(*rho), mub, s, rc, phase, tuple(normals), True,
                           is_corner, t, stb)


def _interior_solution(rho, mu, st, eps):
    s = float(rho @ mu - st.p_value)
    return EntropySolution(DensityPair(*rho), ChemicalPotential(*mu), s, st.R.copy(),
                           _classify(rho, st.R, eps), (), False, False, math.nan, st)


# ---------------------------------------------------------------------------
# one species absent


def _mu_max(w: TwoSpeciesWeight, species: int) -> float:
    """Upper end of ``mu_i`` on the axis where the other species is absent."""
    bd = get_boundary(w)
    t = 1e6 if species == 1 else -1e6
    u = bd.boundary_fn(t)
    return (u + t) / 2.0 if species == 1 else (u - t) / 2.0


def _solve1d(w, rho, tol, eps):
    i = 0 if rho[1] == 0 else 1

    def mu_of(x):
        m = [-math.inf, -math.inf]
        m[i] = x
        return m

    def state(x):
        return _eval(w, mu_of(x))

    xmax = _mu_max(w, i + 1)
    r = rho[i]
    st_top = state(xmax)
    if st_top.R[i] <= r:
        st, x = st_top, xmax
        on_boundary = True
    else:
        lo = min(xmax - 1.0, math.log(r) - 1.0)
        while state(lo).R[i] >= r:
            lo -= 2.0 * (xmax - lo)
            if lo < -1e4:
                raise SolverStall("no lower bracket for the density")
        x = brentq(lambda y: state(y).R[i] - r, lo, xmax, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        st = state(x)
        on_boundary = False
    rc = st.R.copy()
    rc[1 - i] = 0.0
    n = np.zeros(2)
    n[i] = 1.0
    normals = (n,) if on_boundary else ()
    s = float(r * x - st.p_value)
    return EntropySolution(DensityPair(*rho), ChemicalPotential(*mu_of(x)), s, rc,
                           _classify(rho, rc, eps), normals, on_boundary, False, math.nan, st)


# ---------------------------------------------------------------------------
# public operations


def solve(w: TwoSpeciesWeight, rho, tol: float = GRAD_TOL, eps_phase: float = EPS_PHASE) -> EntropySolution:
    """Minimise ``p(mu) - rho.mu`` over the closed domain ``D_mu``.

    Damped Newton runs in the interior; if it is driven to the boundary
    the problem is reduced to the boundary graph and the root of the
    directional derivative is bracketed and found by Brent's method.
    """
    rho = _as_density(rho).as_array()
    if rho[0] == 0 or rho[1] == 0:
        return _solve1d(w, rho, tol, eps_phase)
    return _solve2d(w, rho, tol, eps_phase)


def entropy(w: TwoSpeciesWeight, rho, tol: float = GRAD_TOL) -> float:
    """Entropy density ``s(rho) = rho.mbar - p(mbar)``."""
    return solve(w, rho, tol).s_value


@dataclass(frozen=True)
class SubgradientCone:
    rc: np.ndarray
    normals: tuple

    def ray(self, lam: Sequence[float]) -> np.ndarray:
        """Density ``rc + sum lam_k n_k`` in the preimage of ``rc``."""
        out = self.rc.copy()
        for l, n in zip(lam, self.normals):
            out = out + l * n
        return out


def subgradient_cone(w: TwoSpeciesWeight, mu_c, corner_tol: float = 1e-3) -> SubgradientCone:
    """Background density and outward normals at a boundary point."""
    mu_c = mu_c if isinstance(mu_c, ChemicalPotential) else ChemicalPotential(*mu_c)
    try:
        st = evaluate(w, mu_c, EVAL_TOL, strict=False)
    except Diverged as exc:
        raise NotInDomain(str(exc)) from None
    if st.membership != Membership.BOUNDARY_IN:
        raise NotInDomain(f"mu=({mu_c.mu1:.6g}, {mu_c.mu2:.6g}) is {st.membership.value}, "
                          "not a boundary point in the domain")
    if not (math.isfinite(mu_c.mu1) and math.isfinite(mu_c.mu2)):
        n = np.array([1.0, 0.0]) if math.isfinite(mu_c.mu1) else np.array([0.0, 1.0])
        return SubgradientCone(st.R.copy(), (n,))
    f = get_boundary(w).boundary_fn
    t = mu_c.mu1 - mu_c.mu2
    left, right = one_sided_slopes(f, t)
    if abs(left - right) > corner_tol:
        normals = (normal_from_slope(left), normal_from_slope(right))
    else:
        normals = (normal_from_slope(0.5 * (left + right)),)
    return SubgradientCone(st.R.copy(), normals)


# ---------------------------------------------------------------------------
# phase diagram


@dataclass
class PhaseDiagramGrid:
    rho1: np.ndarray
    rho2: np.ndarray
    solutions: list  # [i][j] -> EntropySolution or None
    labels: np.ndarray  # phase labels, shape (len(rho1), len(rho2))

    def count(self, phase: Phase) -> int:
        return int(np.sum(self.labels == phase.value))

    def support(self) -> np.ndarray:
        """Where mbar sits: ``interior``, ``edge`` or ``corner``."""
        out = np.empty(self.labels.shape, dtype=object)
        for i, row in enumerate(self.solutions):
            for j, sol in enumerate(row):
                if sol is None:
                    out[i, j] = "unresolved"
                elif sol.corner:
                    out[i, j] = "corner"
                elif sol.on_boundary:
                    out[i, j] = "edge"
                else:
                    out[i, j] = "interior"
        return out

    def region_boundaries(self):
        """Midpoints between horizontally or vertically adjacent cells with different labels."""
        out = []
        n1, n2 = self.labels.shape
        for i in range(n1):
            for j in range(n2):
                for di, dj in ((1, 0), (0, 1)):
                    a, b = i + di, j + dj
                    if a < n1 and b < n2 and self.labels[i, j] != self.labels[a, b]:
                        mid = ((self.rho1[i] + self.rho1[a]) / 2, (self.rho2[j] + self.rho2[b]) / 2)
                        out.append(((i, j), (a, b), mid))
        return out

    def rows(self):
        for i, r1 in enumerate(self.rho1):
            for j, r2 in enumerate(self.rho2):
                yield r1, r2, self.labels[i, j], self.solutions[i][j]


def _cell(args):
    w, rho, tol, eps = args
    try:
        return solve(w, rho, tol, eps)
    except NumericalError:
        return None


def _axis(spec, res):
    lo, hi = spec
    if not (0 <= lo < hi and math.isfinite(hi)):
        raise InvalidParam("density box must satisfy 0 <= lo < hi < inf")
    return lo + (np.arange(res) + 0.5) * (hi - lo) / res


def phase_diagram(w: TwoSpeciesWeight, rho_box, resolution: int, tol: float = GRAD_TOL,
                  eps_phase: float = EPS_PHASE, workers: Optional[int] = None) -> PhaseDiagramGrid:
    """Solve on the cell centres of a density box and label each cell.

    ``rho_box`` is either an upper bound (``(0, b]^2``), a pair of upper
    bounds, or a pair of ``(lo, hi)`` intervals.  Cells whose solve fails
    are labelled ``Unresolved``.
    """
    if resolution < 2:
        raise InvalidParam("resolution must be at least 2")
    if np.isscalar(rho_box):
        box = ((0.0, float(rho_box)), (0.0, float(rho_box)))
    else:
        box = tuple((0.0, float(b)) if np.isscalar(b) else tuple(map(float, b)) for b in rho_box)
    r1, r2 = _axis(box[0], resolution), _axis(box[1], resolution)
    jobs = [(w, (a, b), tol, eps_phase) for a in r1 for b in r2]
    if workers is None:
        workers = int(os.environ.get("ZRP_THREADS", "1") or 1)
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_cell, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_cell(j) for j in jobs]
    sols = [results[i * resolution:(i + 1) * resolution] for i in range(resolution)]
    labels = np.array([[Phase.UNRESOLVED.value if s is None else s.phase.value for s in row]
                       for row in sols], dtype=object)
    return PhaseDiagramGrid(r1, r2, sols, labels)
