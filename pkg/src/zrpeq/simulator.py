"""Continuous-time Monte Carlo of the two-species zero-range process on a ring.

A particle of species ``i`` leaves site ``x`` at rate ``g_i(eta(x))`` and
lands on ``x + d`` with ``d`` drawn from the displacement law ``p_i``.
Events are selected with a sum tree over the ``2L`` per-site per-species
rates; the event loop is compiled with numba and consumes uniforms from
a counter-based generator so that replicas seeded by
``SeedSequence.spawn`` are reproducible one by one.
"""

from __future__ import annotations

import concurrent.futures as cf
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.stats import chisquare

from . import _kernel
from .errors import CocycleViolation, InvalidParam, ZeroRate
from .weights import JumpRates, TwoSpeciesWeight, rates_from_weight, weight_from_rates

__all__ = [
    "Configuration",
    "SimParams",
    "SimResult",
    "jump_distribution",
    "run",
    "run_replicas",
    "MaxOccupationStats",
    "max_occupation_stats",
    "CondensateReport",
    "two_species_condensate_report",
]

MAX_TRACKED_STATES = 1 << 16
CHUNK = 1 << 18


@dataclass
class Configuration:
    """Occupation numbers ``eta(x) = (eta_1(x), eta_2(x))`` on ``L`` sites."""

    occupations: np.ndarray

    def __post_init__(self):
        occ = np.array(self.occupations, dtype=np.int64)
        if occ.ndim != 2 or occ.shape[1] != 2 or occ.shape[0] < 1 or np.any(occ < 0):
            raise InvalidParam("occupations must be an (L, 2) array of nonnegative integers")
        self.occupations = occ

    @property
    def L(self) -> int:
        return self.occupations.shape[0]

    @property
    def totals(self) -> tuple:
        return tuple(int(v) for v in self.occupations.sum(axis=0))

    @classmethod
    def uniform_random(cls, L: int, N, rng: np.random.Generator) -> "Configuration":
        """Each particle placed on an independent uniformly chosen site."""
        occ = np.stack([np.bincount(rng.integers(0, L, size=n), minlength=L) for n in N], axis=1)
        return cls(occ)

    @classmethod
    def flat(cls, L: int, N) -> "Configuration":
        """Particles spread as evenly as possible, remainders on the first sites."""
        occ = np.zeros((L, 2), dtype=np.int64)
        for i, n in enumerate(N):
            occ[:, i] = n // L
            occ[: n % L, i] += 1
        return cls(occ)

    @classmethod
    def stacked(cls, L: int, N, site: int = 0) -> "Configuration":
        occ = np.zeros((L, 2), dtype=np.int64)
        occ[site] = N
        return cls(occ)


def jump_distribution(spec) -> tuple:
    """Parse a displacement law into ``(displacements, probabilities)``.

    Accepts ``"sym"`` (nearest neighbour, symmetric), ``"asym:q"`` (right
    with probability q, left otherwise), ``"self"`` (only self-jumps) or a
    mapping ``{displacement: probability}``.
    """
    if isinstance(spec, str):
        s = spec.strip().lower()
        if s == "sym":
            table = {-1: 0.5, 1: 0.5}
        elif s.startswith("asym"):
            q = float(s.split(":", 1)[1]) if ":" in s else 1.0
            if not 0 <= q <= 1:
                raise InvalidParam(f"asymmetry must lie in [0, 1], got {q}")
            table = {1: q, -1: 1.0 - q}
        elif s == "self":
            table = {0: 1.0}
        else:
            raise InvalidParam(f"unknown jump law {spec!r}; use sym, asym:q or a mapping")
    else:
        table = {int(k): float(v) for k, v in dict(spec).items()}
    table = {k: v for k, v in table.items() if v > 0}
    probs = np.array(list(table.values()), dtype=float)
    if not table or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
        raise InvalidParam("jump probabilities must be nonnegative and sum to 1")
    return np.array(list(table), dtype=np.int64), probs


def _irreducible(disp: np.ndarray, L: int) -> bool:
    if L == 1:
        return True
    g = L
    for d in disp:
        g = math.gcd(g, int(d) % L)
    return g == 1


@dataclass(frozen=True)
class SimParams:
    """Simulation set-up.

    ``burn_in`` is the fraction of the event budget discarded before
    time averages start; ``thin`` is the spacing (in events) of the
    condensate-location samples and defaults to ``L``.
    """

    L: int
    N: tuple
    p1: object = "sym"
    p2: object = "sym"
    seed: int = 0
    events: int = 1_000_000
    burn_in: float = 0.2
    thin: Optional[int] = None
    initial: object = "uniform"
    track_states: bool = False
    track_flux: bool = False
    max_samples: int = 100_000

    def __post_init__(self):
        if self.L < 1:
            raise InvalidParam("L must be positive")
        N = tuple(int(v) for v in self.N)
        if len(N) != 2 or min(N) < 0:
            raise InvalidParam("N must be a pair of nonnegative integers")
        object.__setattr__(self, "N", N)
        if self.events < 0 or not 0 <= self.burn_in < 1:
            raise InvalidParam("need events >= 0 and burn_in in [0, 1)")
        for p in (self.p1, self.p2):
            disp, _ = jump_distribution(p)
            if not _irreducible(disp, self.L):
                raise InvalidParam(f"jump law {p!r} is not irreducible on a ring of {self.L} sites")


@dataclass
class SimResult:
    final: Configuration
    time: float
    events: int
    measured_time: float
    mean_max: np.ndarray  # time averages of max_x eta_i(x)
    samples: np.ndarray  # rows (t, M1, M2, argmax1, argmax2)
    state_time: Optional[np.ndarray] = None  # occupation time per state code
    flux: Optional[np.ndarray] = None
    radix: int = 0
    seed_entropy: object = None

    @property
    def mean_max_fraction(self) -> np.ndarray:
        return self.mean_max / self.final.L

    def state_distribution(self) -> dict:
        """Time-weighted empirical distribution over visited configurations."""
        if self.state_time is None:
            raise InvalidParam("run with track_states=True to record configurations")
        out = {}
        L = self.final.L
        for code in np.nonzero(self.state_time)[0]:
            out[decode_state(int(code), L, self.radix, self._n2p1)] = self.state_time[code] / self.measured_time
        return out

    _n2p1: int = field(default=1, repr=False)


def decode_state(code: int, L: int, radix: int, n2p1: int) -> tuple:
    out = []
    for _ in range(L):
        code, site = divmod(code, radix)
        out.append(divmod(site, n2p1))
    return tuple(out)


def encode_state(cfg, radix: int, n2p1: int) -> int:
    code = 0
    for x, (a, b) in enumerate(cfg):
        code += (radix ** x) * (a * n2p1 + b)
    return code


def _rate_tables(model, N, check_cocycle=True, allow_nonproduct=False):
    if isinstance(model, TwoSpeciesWeight):
        g = rates_from_weight(model)
    elif isinstance(model, JumpRates):
        g = model
        if check_cocycle and min(N) >= 1:
            try:
                weight_from_rates(g, max(N))
            except CocycleViolation as exc:
                if not allow_nonproduct:
                    raise
                warnings.warn(f"simulating rates without a product stationary measure: {exc}")
    else:
        raise InvalidParam("model must be a TwoSpeciesWeight or JumpRates")
    g1, g2 = g.table(*N)
    if np.any(g1[1:, :] <= 0) or np.any(g2[:, 1:] <= 0) or np.any(~np.isfinite(g1)) or np.any(~np.isfinite(g2)):
        raise InvalidParam("rates must be finite and positive whenever the species is present")
    g1 = np.ascontiguousarray(g1)
    g2 = np.ascontiguousarray(g2)
    g1[0, :] = 0.0
    g2[:, 0] = 0.0
    return g1, g2


def _initial(params: SimParams, rng) -> Configuration:
    init = params.initial
    if isinstance(init, Configuration):
        cfg = Configuration(init.occupations.copy())
    elif init == "uniform":
        cfg = Configuration.uniform_random(params.L, params.N, rng)
    elif init == "flat":
        cfg = Configuration.flat(params.L, params.N)
    elif init == "stacked":
        cfg = Configuration.stacked(params.L, params.N)
    else:
        cfg = Configuration(np.asarray(init))
    if cfg.L != params.L or cfg.totals != params.N:
        raise InvalidParam(f"initial configuration has L={cfg.L}, N={cfg.totals}; expected "
                           f"L={params.L}, N={params.N}")
    return cfg


def run(model: Union[TwoSpeciesWeight, JumpRates], params: SimParams, *,
        seed_seq: Optional[np.random.SeedSequence] = None, allow_nonproduct: bool = False) -> SimResult:
    """Simulate ``params.events`` jump events and return time-averaged observables."""
    if params.N == (0, 0):
        raise ZeroRate("no particles: every rate vanishes")
    ss = seed_seq if seed_seq is not None else np.random.SeedSequence(params.seed)
    rng = np.random.Generator(np.random.Philox(ss))
    L = params.L
    N1, N2 = params.N
    g1, g2 = _rate_tables(model, params.N, allow_nonproduct=allow_nonproduct)
    d1, p1 = jump_distribution(params.p1)
    d2, p2 = jump_distribution(params.p2)
    cum1, cum2 = np.cumsum(p1), np.cumsum(p2)
    cum1[-1] = cum2[-1] = 1.0

    cfg = _initial(params, rng)
    eta = cfg.occupations.copy()
    offset = 1
    while offset < 2 * L:
        offset *= 2
    tree = np.zeros(2 * offset)
    hist1 = np.bincount(eta[:, 0], minlength=N1 + 2).astype(np.int64)
    hist2 = np.bincount(eta[:, 1], minlength=N2 + 2).astype(np.int64)

    radix = (N1 + 1) * (N2 + 1)
    n_states = radix ** L if (params.track_states or params.track_flux) else 0
    if n_states > MAX_TRACKED_STATES:
        raise InvalidParam(f"state tracking needs {n_states} states (limit {MAX_TRACKED_STATES})")
    code_weights = np.array([radix ** x for x in range(L)], dtype=np.int64) if n_states else np.zeros(L, np.int64)
    occ_time = np.zeros(n_states if params.track_states else 0)
    flux = np.zeros((n_states, n_states) if params.track_flux else (0, 0), dtype=np.int64)
    code = int(sum(code_weights[x] * (eta[x, 0] * (N2 + 1) + eta[x, 1]) for x in range(L))) if n_states else 0

    thin = params.thin if params.thin is not None else L
    samples = np.zeros((params.max_samples, 5))
    state = np.array([0.0, eta[:, 0].max(), eta[:, 1].max(), code, 0.0])
    acc = np.zeros(3)
    measure_from = int(params.burn_in * params.events)
    n_loc = 0
    done = 0
    leaves = np.empty(2 * L)
    while done < params.events:
        m = min(CHUNK, params.events - done)
        leaves[0::2] = g1[eta[:, 0], eta[:, 1]]
        leaves[1::2] = g2[eta[:, 0], eta[:, 1]]
        _kernel.build_tree(tree, leaves, 2 * L, offset)
        u = rng.random((m, 3))
        n_loc = _kernel.run_chunk(eta, g1, g2, d1, cum1, d2, cum2, tree, offset, u, state,
                                  hist1, hist2, acc, measure_from, code_weights, occ_time, flux,
                                  samples, n_loc, thin)
        if n_loc < 0:
            raise ZeroRate("all jump rates vanished")
        done += m
    final = Configuration(eta)
    if final.totals != params.N:
        raise AssertionError("particle number not conserved")  # kernel invariant
    T = acc[0]
    mean_max = acc[1:] / T if T > 0 else np.full(2, math.nan)
    res = SimResult(final, float(state[0]), done, float(T), mean_max, samples[:n_loc].copy(),
                    occ_time if params.track_states else None,
                    flux if params.track_flux else None, radix, ss.entropy)
    res._n2p1 = N2 + 1
    return res


def _run_one(args):
    model, params, ss = args
    return run(model, params, seed_seq=ss)


def run_replicas(model, params: SimParams, replicas: int, workers: Optional[int] = None) -> list:
    """Independent replicas seeded by spawning from ``params.seed``."""
    children = np.random.SeedSequence(params.seed).spawn(replicas)
    jobs = [(model, params, ss) for ss in children]
    if workers is None:
        workers = int(os.environ.get("ZRP_THREADS", "1") or 1)
    if workers > 1 and replicas > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


# ---------------------------------------------------------------------------
# condensation observables


@dataclass
class MaxOccupationStats:
    species: int
    mean_fraction: float  # replica average of the time-averaged M_L / L
    ci: tuple  # 95% normal interval across replicas
    predicted: Optional[float]  # rho_i - R_c,i
    location_hist: np.ndarray  # final argmax site per replica
    chi2_pvalue: float
    sample_hist: np.ndarray  # argmax sites along the trajectories


def _argmax_random(v: np.ndarray, rng) -> int:
    top = np.flatnonzero(v == v.max())
    return int(top[rng.integers(top.size)]) if top.size > 1 else int(top[0])


def _uniformity_pvalue(locs: np.ndarray, L: int) -> float:
    n = locs.size
    bins = max(2, min(L, n // 5))
    edges = np.linspace(0, L, bins + 1)
    counts = np.histogram(locs, bins=edges)[0]
    expected = n * np.diff(edges) / L
    return float(chisquare(counts, expected).pvalue)


def max_occupation_stats(model, params: SimParams, species: int = 1, replicas: int = 20,
                         predicted: Optional[float] = None, workers: Optional[int] = None) -> MaxOccupationStats:
    """Law of large numbers for the maximal occupation of one species.

    Each replica starts from an independent uniformly random placement;
    its final condensate site enters the uniformity test, so the test
    does not depend on mixing along one trajectory.
    """
    if species not in (1, 2):
        raise InvalidParam("species must be 1 or 2")
    i = species - 1
    if predicted is None and isinstance(model, TwoSpeciesWeight):
        from .legendre import solve

        rho = tuple(n / params.L for n in params.N)
        sol = solve(model, rho)
        predicted = float(rho[i] - sol.rc[i])
    results = run_replicas(model, params, replicas, workers)
    tie_rng = np.random.default_rng(np.random.SeedSequence(params.seed).spawn(replicas + 1)[-1])
    fr = np.array([r.mean_max_fraction[i] for r in results])
    locs = np.array([_argmax_random(r.final.occupations[:, i], tie_rng) for r in results])
    half = 1.96 * fr.std(ddof=1) / math.sqrt(len(fr)) if len(fr) > 1 else math.inf
    samp = np.concatenate([r.samples[:, 3 + i] for r in results]).astype(int)
    return MaxOccupationStats(species, float(fr.mean()), (float(fr.mean() - half), float(fr.mean() + half)),
                              predicted, np.bincount(locs, minlength=params.L),
                              _uniformity_pvalue(locs, params.L),
                              np.bincount(samp, minlength=params.L))


@dataclass
class CondensateReport:
    colocation: Optional[float]  # fraction of samples with argmax1 == argmax2
    samples: int
    hist1: np.ndarray
    hist2: np.ndarray
    mean_max_fraction: np.ndarray


def two_species_condensate_report(model, params: SimParams) -> CondensateReport:
    """How often the two condensates share a site along one trajectory (observational)."""
    res = run(model, params)
    s = res.samples
    L = params.L
    h1 = np.bincount(s[:, 3].astype(int), minlength=L) if params.N[0] else np.zeros(L, int)
    h2 = np.bincount(s[:, 4].astype(int), minlength=L) if params.N[1] else np.zeros(L, int)
    coloc = None
    if params.N[0] and params.N[1] and len(s):
        coloc = float(np.mean(s[:, 3] == s[:, 4]))
    return CondensateReport(coloc, len(s), h1, h2, res.mean_max_fraction)
