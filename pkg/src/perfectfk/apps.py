"""Reference models and experiments.

* :class:`LatticeWalkModel` / :class:`PolymerModel`: simple random walk on
  Z started at 0, reweighted by lattice potentials (the quenched directed
  polymer uses ``exp(-beta * xi_{k,i})`` with Bernoulli ``xi``).
* :class:`GaussianSSM`: AR(1) state with Gaussian observations; the
  potentials are the observation densities.
* :func:`smc_prerun`: bootstrap particle filter estimating the mean
  potential per step, used to calibrate the offspring laws.
* :func:`scaling_experiment`: wandering exponent of quenched polymers.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import DegeneracyError, DomainError
from .model import FeynmanKacModel

logger = logging.getLogger(__name__)

_inv_cdf = NormalDist().inv_cdf
_LOG_HALF = math.log(0.5)


class LatticeWalkModel(FeynmanKacModel):
    """Symmetric simple random walk from 0 with arbitrary lattice potentials.

    ``potential(k, x)`` defaults to the constant 1; ``bounds`` is a scalar
    or one value per time ``1..P-1``.
    """

    kind = "lattice"

    def __init__(self, horizon: int, potential: Callable | None = None, bounds=1.0):
        if horizon < 2:
            raise DomainError("horizon must be >= 2")
        self.horizon = horizon
        self._potential = potential or (lambda k, x: 1.0)
        if np.isscalar(bounds):
            bounds = [float(bounds)] * (horizon - 1)
        if len(bounds) != horizon - 1:
            raise DomainError("need one bound per time 1..P-1")
        self._bounds = tuple(float(b) for b in bounds)

    def initial(self, u):
        return 0

    def transition(self, x, u):
        return x + 1 if u < 0.5 else x - 1

    def potential(self, k, x):
        return self._potential(k, x)

    def bound(self, k):
        return self._bounds[k - 1]

    def log_initial_density(self, x):
        return 0.0 if x == 0 else -math.inf

    def log_transition_density(self, x, y):
        return _LOG_HALF if abs(y - x) == 1 else -math.inf

    def support(self, k: int) -> list[int]:
        """States reachable at time ``k``: ``-(k-1), -(k-1)+2, ..., k-1``."""
        return list(range(-(k - 1), k, 2))

    def initial_pmf(self) -> dict:
        return {0: 1.0}

    def transition_pmf(self, x) -> dict:
        return {x - 1: 0.5, x + 1: 0.5}

    def initial_batch(self, u):
        return np.zeros(len(u), dtype=np.int64)

    def transition_batch(self, x, u):
        return x + np.where(u < 0.5, 1, -1)


@dataclass(frozen=True)
class PolymerEnvironment:
    """Bernoulli field ``xi[k-1, i + P - 1]`` over the cone ``|i| <= k - 1``."""

    p: float
    beta: float
    horizon: int
    seed: int
    xi: np.ndarray = field(repr=False, compare=False)

    def potential_table(self) -> list[list[float]]:
        v = np.exp(-self.beta * self.xi)
        return [[float(g) for g in row] for row in v]


def generate_environment(seed: int, p: float, beta: float, P: int) -> PolymerEnvironment:
    if not 0.0 <= p <= 1.0:
        raise DomainError("Bernoulli parameter must lie in [0, 1]")
    if beta < 0:
        raise DomainError("inverse temperature must be >= 0")
    rng = np.random.default_rng(seed)
    xi = (rng.random((P, 2 * P - 1)) < p).astype(np.int8)
    offs = np.arange(2 * P - 1) - (P - 1)
    outside = np.abs(offs)[None, :] > np.arange(P)[:, None]
    xi[outside] = 0
    return PolymerEnvironment(p, beta, P, seed, xi)


class PolymerModel(LatticeWalkModel):
    """Quenched directed polymer: potentials ``exp(-beta xi_{k,x})``, ``B_k = 1``."""

    def __init__(self, env: PolymerEnvironment):
        super().__init__(env.horizon, bounds=1.0)
        self.env = env
        self._table = env.potential_table()
        self._offset = env.horizon - 1
        self._v = np.exp(-env.beta * env.xi)

    def potential(self, k, x):
        i = x + self._offset
        if 0 <= i < len(self._table[k - 1]):
            return self._table[k - 1][i]
        return 1.0

    def potential_batch(self, k, x):
        return self._v[k - 1, np.asarray(x) + self._offset]

    def __reduce__(self):
        return (PolymerModel, (self.env,))


def polymer_model(env: PolymerEnvironment) -> PolymerModel:
    return PolymerModel(env)


class GaussianSSM(FeynmanKacModel):
    """``X_1 ~ N(0,1)``, ``X_{k+1} = a X_k + b eps``, ``G_k = N(Y_k; x, c^2)``.

    ``observations`` are ``Y_1..Y_{P-1}``; the horizon is one more.
    """

    kind = "continuous"

    def __init__(self, a: float, b: float, c: float, observations: Sequence[float]):
        if not 0.0 < a < 1.0:
            raise DomainError("a must lie in (0, 1) for the contraction certificate")
        if b <= 0 or c <= 0:
            raise DomainError("b and c must be positive")
        self.a, self.b, self.c = float(a), float(b), float(c)
        self.observations = tuple(float(y) for y in observations)
        self.horizon = len(self.observations) + 1
        if self.horizon < 2:
            raise DomainError("need at least one observation")
        self._norm = 1.0 / math.sqrt(2.0 * math.pi * self.c**2)
        self._half_prec = 0.5 / self.c**2

    def initial(self, u):
        return _inv_cdf(u)

    def transition(self, x, u):
        return self.a * x + self.b * _inv_cdf(u)

    def potential(self, k, x):
        d = x - self.observations[k - 1]
        return self._norm * math.exp(-self._half_prec * d * d)

    def bound(self, k):
        return self._norm

    def potential_mode(self, k: int) -> float:
        return self.observations[k - 1]

    def potential_sup(self, k: int, lo: float, hi: float) -> float:
        """sup of G_k over ``[lo, hi]`` (either end may be infinite)."""
        y = self.observations[k - 1]
        if lo <= y <= hi:
            return self._norm
        return self.potential(k, lo if y < lo else hi)

    def transition_interval(self, lo: float, hi: float, u: float) -> tuple[float, float]:
        """Image of ``[lo, hi]`` under ``x -> M'(x, u)`` (increasing in ``x``)."""
        e = self.b * _inv_cdf(u)
        return self.a * lo + e, self.a * hi + e

    def log_initial_density(self, x):
        return -0.5 * x * x - 0.5 * math.log(2 * math.pi)

    def log_transition_density(self, x, y):
        d = (y - self.a * x) / self.b
        return -0.5 * d * d - math.log(self.b) - 0.5 * math.log(2 * math.pi)

    def initial_batch(self, u):
        return ndtri(u)

    def transition_batch(self, x, u):
        return self.a * x + self.b * ndtri(u)

    def potential_batch(self, k, x):
        d = np.asarray(x) - self.observations[k - 1]
        return self._norm * np.exp(-self._half_prec * d * d)


def simulate_observations(a: float, b: float, c: float, P: int, seed: int) -> np.ndarray:
    """Draw ``Y_1..Y_{P-1}`` from the linear-Gaussian model."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal()
    ys = []
    for _ in range(P - 1):
        ys.append(x + c * rng.standard_normal())
        x = a * x + b * rng.standard_normal()
    return np.array(ys)


def gaussian_model(a: float, b: float, c: float, Y: Sequence[float]) -> GaussianSSM:
    return GaussianSSM(a, b, c, Y)


@dataclass(frozen=True)
class SmcResult:
    means: tuple  # mean of G_k over predicted particles, k = 1..P-1
    log_z: float


def smc_prerun(model: FeynmanKacModel, N: int = 2000, seed: int = 0) -> SmcResult:
    """Bootstrap particle filter with multinomial resampling."""
    if N < 100:
        raise DomainError("use at least 100 particles")
    rng = np.random.default_rng(seed)
    x = model.initial_batch(rng.random(N))
    means = []
    for k in range(1, model.horizon):
        g = np.asarray(model.potential_batch(k, x), dtype=float)
        lo = g.min()
        gbar = float(lo + (g - lo).mean())  # exact when the potential is constant
        if not gbar > 0:
            raise DegeneracyError(f"all particle weights vanish at step {k}")
        means.append(gbar)
        idx = rng.choice(N, size=N, p=g / g.sum())
        x = model.transition_batch(x[idx], rng.random(N))
    return SmcResult(tuple(means), float(np.sum(np.log(means))))


def replicate_seed(seed: int, P: int, replicate: int) -> int:
    """Independent 63-bit seed for one (P, replicate) cell."""
    return int(np.random.SeedSequence([seed, P, replicate]).generate_state(1, np.uint64)[0] >> 1)


@dataclass(frozen=True)
class ScalingRow:
    P: int
    replicate: int
    T: int | None
    max_abs: int | None
    seed: int


@dataclass
class ScalingResult:
    rows: list
    table: list  # (P, mean max |z|, replicates used, failures)
    zeta: float
    zeta_se: float
    low_confidence: bool
    params: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "zeta": self.zeta,
            "zeta_se": self.zeta_se,
            "low_confidence": self.low_confidence,
            "table": [
                {"P": P, "mean_max_abs": m, "replicates": n, "failures": f} for P, m, n, f in self.table
            ],
            "params": self.params,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["P", "replicate", "T", "max_abs", "seed"])
            for r in self.rows:
                w.writerow([r.P, r.replicate, "" if r.T is None else r.T, "" if r.max_abs is None else r.max_abs, r.seed])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def _scaling_cell(job) -> ScalingRow:
    from .bounds import provider_for
    from .errors import DepthCapError, PopulationCapError
    from .kernel import KernelSetup, cftp_sample
    from .model import calibrate

    p, beta, P, r, s, n_roots, particles, depth_cap = job
    model = PolymerModel(generate_environment(s, p, beta, P))
    law = calibrate(model, smc_prerun(model, particles, s).means)
    setup = KernelSetup(model, law, n_roots=n_roots or max(1, P // 2))
    try:
        res = cftp_sample(s, setup, provider_for(setup), depth_cap=depth_cap)
    except (DepthCapError, PopulationCapError) as exc:
        logger.warning("P=%d replicate %d failed: %s", P, r, exc)
        return ScalingRow(P, r, None, None, s)
    return ScalingRow(P, r, res.T, max(abs(x) for x in res.path), s)


def fit_loglog(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope of ``log y`` on ``log x`` and its standard error."""
    from scipy.stats import linregress

    if len(xs) < 2:
        raise DomainError("need at least two horizons to fit a slope")
    if len(xs) == 2:
        lx, ly = np.log(xs), np.log(ys)
        return float((ly[1] - ly[0]) / (lx[1] - lx[0])), math.nan
    fit = linregress(np.log(xs), np.log(ys))
    return float(fit.slope), float(fit.stderr)


def scaling_experiment(
    p: float,
    beta: float,
    P_list: Sequence[int],
    replicates: int,
    seed: int = 0,
    *,
    n_roots: int | None = None,
    smc_particles: int = 1000,
    depth_cap: int = 10_000,
    threads: int = 1,
) -> ScalingResult:
    """Mean maximal displacement of perfect polymer samples against ``P``.

    Every replicate uses a fresh environment and its own SMC calibration.
    ``n_roots`` defaults to ``P // 2`` so that proposal forests survive with
    non-vanishing probability at large ``P``.  Depth-cap failures are kept
    in the rows (empty ``T``) and excluded from the means; with fewer than
    two usable horizons ``zeta`` is NaN and the result is low-confidence.
    """
    P_list = [int(P) for P in P_list]
    if any(b <= a for a, b in zip(P_list, P_list[1:])):
        raise DomainError("P_list must be strictly increasing")
    if replicates < 1:
        raise DomainError("need at least one replicate")
    jobs = [
        (p, beta, P, r, replicate_seed(seed, P, r), n_roots, smc_particles, depth_cap)
        for P in P_list
        for r in range(replicates)
    ]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(threads) as pool:
            rows = list(pool.map(_scaling_cell, jobs, chunksize=4))
    else:
        rows = [_scaling_cell(j) for j in jobs]
    table = []
    for P in P_list:
        ok = [r.max_abs for r in rows if r.P == P and r.max_abs is not None]
        failures = sum(1 for r in rows if r.P == P and r.max_abs is None)
        table.append((P, float(np.mean(ok)) if ok else math.nan, len(ok), failures))
    usable = [(P, m) for P, m, n, _ in table if n > 0 and m > 0]
    if len(usable) >= 2:
        zeta, se = fit_loglog([u[0] for u in usable], [u[1] for u in usable])
    else:
        logger.warning("fewer than two horizons with successful replicates; no slope fitted")
        zeta, se = math.nan, math.nan
    params = {"p": p, "beta": beta, "P_list": P_list, "replicates": replicates, "seed": seed,
              "n_roots": n_roots, "smc_particles": smc_particles, "depth_cap": depth_cap}
    return ScalingResult(rows, table, zeta, se, replicates < 2 or math.isnan(zeta), params)
