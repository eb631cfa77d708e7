"""Ground truth at desk scale.

Exact path laws of finite models by enumeration (with an independent
recursive evaluation of the normalising constant), the Kalman filter and
RTS smoother for the linear-Gaussian model, and a chi-squared /
total-variation harness for comparing samples to an exact law.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import DomainError
from .model import FeynmanKacModel

MAX_PATHS = 10**6


@dataclass(frozen=True)
class ExactPathLaw:
    paths: tuple
    probs: np.ndarray
    z: float

    def prob(self, path) -> float:
        try:
            return float(self.probs[self.index[tuple(path)]])
        except KeyError:
            return 0.0

    @property
    def index(self) -> dict:
        idx = self.__dict__.get("_index")
        if idx is None:
            idx = {p: i for i, p in enumerate(self.paths)}
            object.__setattr__(self, "_index", idx)
        return idx

    def sample(self, n: int, rng: np.random.Generator) -> list[tuple]:
        draws = rng.choice(len(self.paths), size=n, p=self.probs)
        return [self.paths[i] for i in draws]

    def mean_path(self) -> np.ndarray:
        return np.asarray(self.paths, dtype=float).T @ self.probs

    def to_json(self) -> str:
        return json.dumps(
            {"Z": self.z, "paths": [list(p) for p in self.paths], "probs": self.probs.tolist()}
        )


def _enumerate_weighted(model: FeynmanKacModel):
    """Yield (path, unnormalised weight) over every path of positive prior mass."""
    P = model.horizon
    stack = [((x,), p * model.potential(1, x) if P > 1 else p) for x, p in model.initial_pmf().items() if p > 0]
    while stack:
        path, w = stack.pop()
        k = len(path)
        if k == P:
            yield path, w
            continue
        for y, p in model.transition_pmf(path[-1]).items():
            if p <= 0:
                continue
            g = model.potential(k + 1, y) if k + 1 < P else 1.0
            stack.append((path + (y,), w * p * g))


def exact_path_law(model: FeynmanKacModel, max_paths: int = MAX_PATHS) -> ExactPathLaw:
    """Exhaustive Feynman-Kac path law of a model with finite transition pmfs."""
    paths, weights = [], []
    for path, w in _enumerate_weighted(model):
        paths.append(path)
        weights.append(w)
        if len(paths) > max_paths:
            raise DomainError(f"more than {max_paths} paths; enumeration refused")
    z = math.fsum(weights)
    if not z > 0:
        raise DomainError("all paths have zero weight")
    order = sorted(range(len(paths)), key=lambda i: paths[i])
    probs = np.array([weights[i] / z for i in order])
    return ExactPathLaw(tuple(paths[i] for i in order), probs, z)


def recursive_z(model: FeynmanKacModel) -> float:
    """Normalising constant by backward recursion over states (no path list)."""
    P = model.horizon
    cache: dict = {}

    def value(k: int, x) -> float:
        # E[prod_{j >= k} G_j(X_j) | X_k = x], with G_P = 1
        if k == P:
            return 1.0
        key = (k, x)
        if key not in cache:
            cache[key] = model.potential(k, x) * math.fsum(
                p * value(k + 1, y) for y, p in model.transition_pmf(x).items() if p > 0
            )
        return cache[key]

    return math.fsum(p * value(1, x) for x, p in model.initial_pmf().items() if p > 0)


def path_probability(model: FeynmanKacModel, path: Sequence, z: float) -> float:
    """Target probability of one path, computed directly from the model."""
    return math.exp(model.log_path_weight(path)) / z


def mean_population(model: FeynmanKacModel, law, n_roots: int = 1) -> list[float]:
    """Exact E[N_k], k = 1..P, of the unconditional forest on a finite model."""
    P = model.horizon
    mass = Counter()
    for x, p in model.initial_pmf().items():
        mass[x] += n_roots * p
    out = [float(sum(mass.values()))]
    for k in range(1, P):
        nxt = Counter()
        for x, m in mass.items():
            mean_kids = law.mean_offspring(k + 1, model.potential(k, x))
            for y, p in model.transition_pmf(x).items():
                nxt[y] += m * mean_kids * p
        mass = nxt
        out.append(math.fsum(mass.values()))
    return out


@dataclass(frozen=True)
class KalmanResult:
    filtered_means: np.ndarray
    filtered_vars: np.ndarray
    smoothed_means: np.ndarray
    smoothed_vars: np.ndarray
    log_likelihood: float


def kalman_smoother(ssm) -> KalmanResult:
    """Scalar Kalman filter and RTS smoother; times 1..P, observations at 1..P-1."""
    a, b, c = ssm.a, ssm.b, ssm.c
    ys = ssm.observations
    P = ssm.horizon
    m_pred, v_pred = 0.0, 1.0
    fm, fv, pm, pv = [], [], [], []
    loglik = 0.0
    for k in range(P):
        pm.append(m_pred)
        pv.append(v_pred)
        if k < len(ys):
            s = v_pred + c * c
            loglik += -0.5 * (math.log(2 * math.pi * s) + (ys[k] - m_pred) ** 2 / s)
            gain = v_pred / s
            m, v = m_pred + gain * (ys[k] - m_pred), (1 - gain) * v_pred
        else:
            m, v = m_pred, v_pred
        fm.append(m)
        fv.append(v)
        m_pred, v_pred = a * m, a * a * v + b * b
    sm, sv = fm[:], fv[:]
    for k in range(P - 2, -1, -1):
        gain = fv[k] * a / pv[k + 1]
        sm[k] = fm[k] + gain * (sm[k + 1] - pm[k + 1])
        sv[k] = fv[k] + gain * gain * (sv[k + 1] - pv[k + 1])
    return KalmanResult(np.array(fm), np.array(fv), np.array(sm), np.array(sv), loglik)


@dataclass(frozen=True)
class FitReport:
    chi2: float
    dof: int
    p_value: float
    tv: float
    n: int
    pooled_cells: int

    @property
    def borderline(self) -> bool:
        """p-values in [1e-3, 1e-2] deserve a second look under multiple testing."""
        return 1e-3 <= self.p_value < 1e-2


def goodness_of_fit(samples: Iterable, law: ExactPathLaw, min_expected: float = 5.0) -> FitReport:
    """Pearson chi-squared and plug-in total variation against an exact law.

    Cells with expected count below ``min_expected`` are pooled into one.
    Samples outside the law's support make the statistic infinite.
    """
    counts = Counter(tuple(s) for s in samples)
    n = sum(counts.values())
    if n == 0:
        raise DomainError("empty sample set")
    index = law.index
    outside = sum(c for p, c in counts.items() if p not in index)
    observed = np.array([counts.get(p, 0) for p in law.paths], dtype=float)
    expected = law.probs * n
    tv = 0.5 * (np.abs(observed / n - law.probs).sum() + outside / n)
    if outside:
        return FitReport(math.inf, 0, 0.0, float(tv), n, 0)
    small = expected < min_expected
    obs_cells = list(observed[~small])
    exp_cells = list(expected[~small])
    if small.any():
        obs_cells.append(observed[small].sum())
        exp_cells.append(expected[small].sum())
    obs_cells, exp_cells = np.array(obs_cells), np.array(exp_cells)
    dof = len(obs_cells) - 1
    if dof < 1:
        return FitReport(0.0, 0, 1.0, float(tv), n, int(small.sum()))
    chi2 = float(((obs_cells - exp_cells) ** 2 / exp_cells).sum())
    return FitReport(chi2, dof, float(stats.chi2.sf(chi2, dof)), float(tv), n, int(small.sum()))
