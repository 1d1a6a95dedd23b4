"""Exact canonical ensembles on ``L`` sites.

``Z_{L,N}`` is the total weight of configurations with ``N`` particles
of each species on ``L`` sites.  It is built layer by layer by a
log-space convolution with the single-site weight; since no site can
hold more than ``N`` particles the table is exact on the box
``[0, N1] x [0, N2]``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BudgetExceeded, InvalidParam, OutOfRange
from .grand_canonical import ChemicalPotential, evaluate
from .weights import TwoSpeciesWeight

__all__ = [
    "CanonicalTable",
    "build_table",
    "brute_force_Z",
    "site_marginal",
    "marginal_table",
    "specific_relative_entropy",
    "log_sum_probability",
    "canonical_distribution",
    "EquivalenceRow",
    "equivalence_scan",
    "n_of_L",
    "expected_max_occupation",
]

BRUTE_MAX_L = 5
BRUTE_MAX_N = (8, 8)


@dataclass(frozen=True)
class CanonicalTable:
    """``log Z_{l,n}`` for the stored layers ``l`` and all ``n <= cap``."""

    L: int
    cap: tuple
    layers: tuple
    log_Z: np.ndarray  # (len(layers), cap1+1, cap2+1)
    log_w: np.ndarray  # (cap1+1, cap2+1)

    def layer(self, l: int) -> np.ndarray:
        try:
            return self.log_Z[self.layers.index(l)]
        except ValueError:
            raise OutOfRange(f"layer {l} not stored (have {self.layers})") from None

    def log_z(self, l: int, n) -> float:
        n1, n2 = (int(v) for v in n)
        if not (0 <= n1 <= self.cap[0] and 0 <= n2 <= self.cap[1]):
            raise OutOfRange(f"N={n1, n2} exceeds the table cap {self.cap}")
        return float(self.layer(l)[n1, n2])


def _convolve(prev: np.ndarray, lw: np.ndarray) -> np.ndarray:
    n1, n2 = prev.shape
    out = np.full_like(prev, -np.inf)
    for k1 in range(n1):
        for k2 in range(n2):
            a = lw[k1, k2]
            if a == -np.inf:
                continue
            dst = out[k1:, k2:]
            np.logaddexp(dst, prev[: n1 - k1, : n2 - k2] + a, out=dst)
    return out


def build_table(w: TwoSpeciesWeight, L: int, cap, keep_all: bool = False) -> CanonicalTable:
    """Canonical partition functions up to ``L`` sites and ``cap`` particles."""
    if L < 1:
        raise InvalidParam("L must be at least 1")
    cap = tuple(int(c) for c in cap)
    if len(cap) != 2 or min(cap) < 0:
        raise InvalidParam("cap must be a pair of nonnegative integers")
    lw = np.array(w.log_box(*cap), dtype=float)
    layer = np.full((cap[0] + 1, cap[1] + 1), -np.inf)
    layer[0, 0] = 0.0
    stored = {0: layer} if keep_all or L == 1 else {}
    prev = layer
    for l in range(1, L + 1):
        cur = _convolve(prev, lw)
        if keep_all or l >= L - 1:
            stored[l] = cur
        prev = cur
    if L - 1 == 0:
        stored[0] = layer
    layers = tuple(sorted(stored))
    return CanonicalTable(L, cap, layers, np.stack([stored[l] for l in layers]), lw)


def _compositions(n: int, parts: int):
    """All ordered tuples of ``parts`` nonnegative integers summing to ``n``."""
    for bars in itertools.combinations(range(n + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(n + parts - 1 - prev - 1)
        yield tuple(out)


def brute_force_Z(w: TwoSpeciesWeight, L: int, N) -> float:
    """``log Z_{L,N}`` by explicit enumeration (small systems only)."""
    N1, N2 = (int(v) for v in N)
    if L > BRUTE_MAX_L or N1 > BRUTE_MAX_N[0] or N2 > BRUTE_MAX_N[1]:
        raise BudgetExceeded(f"enumeration limited to L <= {BRUTE_MAX_L}, N <= {BRUTE_MAX_N}")
    if L < 1 or N1 < 0 or N2 < 0:
        raise InvalidParam("need L >= 1 and N >= 0")
    single = {}
    terms = []
    for c1 in _compositions(N1, L):
        for c2 in _compositions(N2, L):
            prod = 1.0
            for k in zip(c1, c2):
                v = single.get(k)
                if v is None:
                    v = single[k] = w.eval(*k)
                prod *= v
            terms.append(prod)
    return math.log(math.fsum(terms))


def _check_LN(table: CanonicalTable, L: int, N):
    N = tuple(int(v) for v in N)
    if L < 1 or L not in table.layers or (L - 1) not in table.layers:
        raise OutOfRange(f"table does not hold layers {L - 1} and {L}")
    if not (0 <= N[0] <= table.cap[0] and 0 <= N[1] <= table.cap[1]):
        raise OutOfRange(f"N={N} exceeds the table cap {table.cap}")
    return N


def marginal_table(table: CanonicalTable, L: int, N) -> np.ndarray:
    """``P(eta(x) = k)`` under the canonical measure, for all ``k <= N``."""
    N1, N2 = _check_LN(table, L, N)
    prev = table.layer(L - 1)
    logz = table.layer(L)[N1, N2]
    lw = table.log_w[: N1 + 1, : N2 + 1]
    rest = prev[N1::-1, N2::-1][: N1 + 1, : N2 + 1]
    return np.exp(lw + rest - logz)


def site_marginal(table: CanonicalTable, L: int, N, k) -> float:
    """``w(k) Z_{L-1,N-k} / Z_{L,N}``."""
    k1, k2 = (int(v) for v in k)
    N1, N2 = _check_LN(table, L, N)
    if not (0 <= k1 <= N1 and 0 <= k2 <= N2):
        raise OutOfRange(f"k={k1, k2} not within N={N1, N2}")
    return float(np.exp(table.log_w[k1, k2] + table.layer(L - 1)[N1 - k1, N2 - k2]
                        - table.layer(L)[N1, N2]))


def _mu_dot(mu, N) -> float:
    return sum(m * n for m, n in zip(mu, N) if n != 0)


def specific_relative_entropy(table: CanonicalTable, w: TwoSpeciesWeight, L: int, N, mu,
                              tol: float = 1e-12, p_value: Optional[float] = None) -> float:
    """``h_{L,N}(mu) = p(mu) - mu.N/L - log(Z_{L,N})/L``."""
    N = tuple(int(v) for v in N)
    if L not in table.layers:
        raise OutOfRange(f"layer {L} not stored")
    mu = mu if isinstance(mu, ChemicalPotential) else ChemicalPotential(*mu)
    if p_value is None:
        p_value = evaluate(w, mu, tol, strict=False).p_value
    return p_value - _mu_dot(mu, N) / L - table.log_z(L, N) / L


def log_sum_probability(w: TwoSpeciesWeight, L: int, N, mu, tol: float = 1e-12) -> float:
    """``log nu_mu^L(Sigma_L = N)`` by convolving the normalised marginal.

    Gives the first form of the relative entropy, ``-(1/L)`` times this
    value, through a computation that never forms ``Z_{L,N}`` directly.
    """
    N1, N2 = (int(v) for v in N)
    mu = mu if isinstance(mu, ChemicalPotential) else ChemicalPotential(*mu)
    p = evaluate(w, mu, tol, strict=False).p_value
    k1 = np.arange(N1 + 1)[:, None]
    k2 = np.arange(N2 + 1)[None, :]
    tilt = np.zeros((N1 + 1, N2 + 1))
    for k, m in ((k1, mu.mu1), (k2, mu.mu2)):
        tilt = tilt + (np.where(k == 0, 0.0, -np.inf) if m == -math.inf else k * m)
    marg = w.log_box(N1, N2) + tilt - p
    cur = np.full((N1 + 1, N2 + 1), -np.inf)
    cur[0, 0] = 0.0
    for _ in range(L):
        cur = _convolve(cur, marg)
    return float(cur[N1, N2])


def canonical_distribution(w: TwoSpeciesWeight, L: int, N) -> dict:
    """Exact canonical probabilities of every configuration (small systems)."""
    N1, N2 = (int(v) for v in N)
    configs = []
    logs = []
    for c1 in _compositions(N1, L):
        for c2 in _compositions(N2, L):
            cfg = tuple(zip(c1, c2))
            configs.append(cfg)
            logs.append(sum(float(w.log_eval(a, b)) for a, b in cfg))
    logs = np.array(logs)
    p = np.exp(logs - logs.max())
    p /= p.sum()
    return dict(zip(configs, p))


def _log_power(lw: np.ndarray, L: int) -> np.ndarray:
    """``L``-fold log-space convolution power of ``lw`` by repeated squaring."""
    out = np.full_like(lw, -np.inf)
    out[0, 0] = 0.0
    base = lw
    while L:
        if L & 1:
            out = _convolve(out, base)
        L >>= 1
        if L:
            base = _convolve(base, base)
    return out


def expected_max_occupation(w: TwoSpeciesWeight, L: int, N, species: int = 1) -> float:
    """Exact canonical ``E[max_x eta_i(x)]``.

    Uses ``P(M <= m) = Z^{(m)}_{L,N} / Z_{L,N}`` where ``Z^{(m)}`` is built
    from the weight truncated to ``k_i <= m``.
    """
    N = tuple(int(v) for v in N)
    if species not in (1, 2):
        raise InvalidParam("species must be 1 or 2")
    if L < 1 or min(N) < 0:
        raise InvalidParam("need L >= 1 and N >= 0")
    i = species - 1
    lw = np.array(w.log_box(*N), dtype=float)
    logz = _log_power(lw, L)[N]
    total = 0.0
    for m in range(N[i]):
        if (m + 1) * L < N[i]:
            total += 1.0  # the maximum must exceed m
            continue
        cut = lw.copy()
        if i == 0:
            cut[m + 1:, :] = -np.inf
        else:
            cut[:, m + 1:] = -np.inf
        total += 1.0 - math.exp(_log_power(cut, L)[N] - logz)
    return total


def n_of_L(rho, L: int) -> tuple:
    """Particle numbers ``floor(rho L + 1/2)``."""
    return tuple(int(math.floor(r * L + 0.5)) for r in rho)


@dataclass(frozen=True)
class EquivalenceRow:
    L: int
    N: tuple
    h: float
    log_z_per_site: float
    residual: float  # |log(Z)/L + s(rho)|


def equivalence_scan(w: TwoSpeciesWeight, rho, L_list: Sequence[int],
                     cap_rule: Optional[Callable] = None, solution=None) -> list:
    """Relative entropy ``h_{L,N_L}(mbar(rho))`` along increasing ``L``.

    ``cap_rule(L, N)`` may enlarge the table box; the default cap is N,
    which is exact.
    """
    from .legendre import solve

    L_list = list(L_list)
    if any(b <= a for a, b in zip(L_list, L_list[1:])):
        raise InvalidParam("L_list must be strictly increasing")
    sol = solution if solution is not None else solve(w, rho)
    mbar = sol.mbar
    p = sol.state.p_value if sol.state is not None else evaluate(w, mbar, strict=False).p_value
    rows = []
    for L in L_list:
        N = n_of_L(rho, L)
        cap = tuple(cap_rule(L, N)) if cap_rule is not None else N
        table = build_table(w, L, cap)
        logz = table.log_z(L, N)
        h = specific_relative_entropy(table, w, L, N, mbar, p_value=p)
        rows.append(EquivalenceRow(L, N, h, logz / L, abs(logz / L + sol.s_value)))
    return rows
