"""State-uniform bounds ``M(u) >= N_P(z, u)`` on the conditional population.

Both constructions use the decomposition ``N_P = 1 + sum_k N_P^(k)(z_k) +
N_P^(c)``, where the k-th term depends on ``z_k`` only.  Maximising each
term separately over the values ``z_k`` can take gives ``M(u)``.

* Lattice models: enumerate the reachable values of ``z_k``.
* Continuous models: cover the line by cells of width ``delta`` around the
  potential mode.  For a cell centred at ``c`` the side branches are grown
  from ``c`` under inflated potentials ``H_j(x) = sup G_j`` over a tube of
  radius ``f^(j-k)(delta/2)`` around ``x``, where ``f`` is a contraction
  certificate of the keyed transition; by monotonicity of the offspring
  inverse CDF in the potential, the inflated count dominates the count of
  every path whose k-th state lies in the cell.  Beyond the scanned cells,
  whole half-lines are certified empty by propagating state intervals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import randomness as rnd
from .conditional import common_leaves, side_leaves, spine_offspring
from .errors import ContractionError, ExplorationError
from .forest import DEFAULT_POPULATION_CAP
from .model import FeynmanKacModel, OffspringLaw

_RADIUS_SLACK = 1e-9


@dataclass(frozen=True)
class BoundCertificate:
    """``m = 1 + sum(per_time) + common`` unless ``complete`` is false.

    An incomplete certificate stopped early once ``m`` exceeded the
    caller's limit; its ``m`` is then only a lower bound on the full value.
    """

    m: int
    per_time: tuple
    common: int
    complete: bool = True
    exploration: tuple = ()
    rigorous: bool = True

    def to_dict(self) -> dict:
        return {
            "M": self.m,
            "per_time": list(self.per_time),
            "common": self.common,
            "complete": self.complete,
            "rigorous": self.rigorous,
            "exploration": [dict(e) for e in self.exploration],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _over(m: int, limit) -> bool:
    return limit is not None and m > limit


def lattice_bound(
    model: FeynmanKacModel,
    law: OffspringLaw,
    stream: rnd.KeyedStream,
    n_roots: int = 1,
    spine_law: str = "size-biased",
    cap: int = DEFAULT_POPULATION_CAP,
    limit: float | None = None,
    work: list | None = None,
) -> BoundCertificate:
    """Exact per-time maxima over the reachable lattice values.

    ``work``, when given, receives the number of side-branch rebuilds.
    """
    P = model.horizon
    counts = spine_offspring(law, stream, P, spine_law)
    common = common_leaves(model, law, stream, n_roots, None, cap)
    m = 1 + common
    per_time = []
    rebuilds = 0
    for k in range(1, P):
        if counts[k - 1] <= 1 or k == P - 1:
            best = max(counts[k - 1] - 1, 0)
        else:
            best = 0
            for x in model.support(k):
                best = max(best, side_leaves(k, x, model, law, stream, counts, None, None, cap))
                rebuilds += 1
        per_time.append(best)
        m += best
        if _over(m, limit) and k < P - 1:
            if work is not None:
                work.append(rebuilds)
            return BoundCertificate(m, tuple(per_time), common, complete=False)
    if work is not None:
        work.append(rebuilds)
    return BoundCertificate(m, tuple(per_time), common)


@dataclass(frozen=True)
class ContractionCertificate:
    """``diam M'_u(B_eps(x)) <= f(eps)`` for every ``x`` and uniform ``u``."""

    f: Callable[[float], float]
    name: str = "custom"

    @classmethod
    def affine(cls, a: float) -> "ContractionCertificate":
        return cls(lambda e, _a=abs(a): _a * e, f"f(x) = {abs(a)} x")

    def radius(self, steps: int, eps: float) -> float:
        for _ in range(steps):
            eps = self.f(eps)
        return eps


def _cell_potential(model, k0: int, half_width: float, cert: ContractionCertificate):
    radii = {}

    def H(j, x):
        r = radii.get(j)
        if r is None:
            r = radii[j] = cert.radius(j - k0, half_width) * (1 + _RADIUS_SLACK) + 1e-12
        return model.potential_sup(j, x - r, x + r)

    return H


def _interval_potential(model):
    return lambda j, iv: model.potential_sup(j, iv[0], iv[1])


def _interval_transition(model):
    return lambda iv, u: model.transition_interval(iv[0], iv[1], u)


def continuous_bound(
    model: FeynmanKacModel,
    law: OffspringLaw,
    stream: rnd.KeyedStream,
    delta: float,
    contraction: ContractionCertificate,
    n_roots: int = 1,
    spine_law: str = "size-biased",
    cap: int = DEFAULT_POPULATION_CAP,
    limit: float | None = None,
    zero_run: int = 3,
    max_cells: int = 100_000,
) -> BoundCertificate:
    """Cell-cover bound for one-dimensional continuous models.

    For each time the scan walks outward from the mode of ``G_k`` in both
    directions.  After ``zero_run`` consecutive empty cells it tries to
    certify the remaining half-line empty by interval propagation (when the
    model provides ``transition_interval``); without that hook it stops on
    the zero run alone and the certificate is flagged non-rigorous.
    """
    if not delta >= 0:
        raise ExplorationError("cell width must be >= 0")
    if not hasattr(model, "potential_sup") or not hasattr(model, "potential_mode"):
        raise ExplorationError("model gives no unimodal potential description to explore from")
    P = model.horizon
    counts = spine_offspring(law, stream, P, spine_law)
    common = common_leaves(model, law, stream, n_roots, None, cap)
    has_tails = hasattr(model, "transition_interval")
    m = 1 + common
    per_time, exploration = [], []
    rigorous = has_tails
    H_tail = _interval_potential(model) if has_tails else None
    T_tail = _interval_transition(model) if has_tails else None
    half = delta / 2.0
    for k in range(1, P):
        a = counts[k - 1]
        if a <= 1 or k == P - 1:
            best = max(a - 1, 0)
            exploration.append({"time": k, "cells": 0, "stop": "z-free"})
        else:
            H = _cell_potential(model, k, half, contraction)
            mode = model.potential_mode(k)
            best, cells, stops = 0, 0, []
            if delta == 0:
                best = side_leaves(k, mode, model, law, stream, counts, H, None, cap)
                cells = 1
                stops = ["point"]
            for direction in ((1, -1) if delta > 0 else ()):
                m_idx = 0 if direction == 1 else -1
                zeros = 0
                while True:
                    if cells >= max_cells:
                        raise ExplorationError(f"time {k}: more than {max_cells} cells explored")
                    c = mode + m_idx * delta
                    n = side_leaves(k, c, model, law, stream, counts, H, None, cap)
                    cells += 1
                    best = max(best, n)
                    zeros = zeros + 1 if n == 0 else 0
                    if zeros >= zero_run:
                        if not has_tails:
                            stops.append("zero-run")
                            break
                        edge = c + direction * half
                        iv = (edge, math.inf) if direction == 1 else (-math.inf, edge)
                        if side_leaves(k, iv, model, law, stream, counts, H_tail, T_tail, cap) == 0:
                            stops.append("tail-certified")
                            break
                    m_idx += direction
            exploration.append({"time": k, "cells": cells, "stop": "/".join(stops)})
        per_time.append(best)
        m += best
        if _over(m, limit) and k < P - 1:
            return BoundCertificate(m, tuple(per_time), common, False, tuple(exploration), rigorous)
    return BoundCertificate(m, tuple(per_time), common, True, tuple(exploration), rigorous)


def crude_bound(law: OffspringLaw, n_roots: int = 1) -> int:
    """``n_1 * prod_k q_k``: valid for any model, tight when all ``q_k = 1``."""
    m = n_roots
    for k in range(2, law.horizon + 1):
        m *= law.qs[k]
    return m


@dataclass(frozen=True)
class LatticeBoundProvider:
    model: FeynmanKacModel
    law: OffspringLaw
    n_roots: int = 1
    spine_law: str = "size-biased"
    cap: int = DEFAULT_POPULATION_CAP

    def certificate(self, stream, limit=None) -> BoundCertificate:
        return lattice_bound(self.model, self.law, stream, self.n_roots, self.spine_law, self.cap, limit)


@dataclass(frozen=True)
class ContinuousBoundProvider:
    model: FeynmanKacModel
    law: OffspringLaw
    delta: float
    contraction: ContractionCertificate
    n_roots: int = 1
    spine_law: str = "size-biased"
    cap: int = DEFAULT_POPULATION_CAP
    zero_run: int = 3

    def certificate(self, stream, limit=None) -> BoundCertificate:
        return continuous_bound(
            self.model, self.law, stream, self.delta, self.contraction,
            self.n_roots, self.spine_law, self.cap, limit, self.zero_run,
        )


@dataclass(frozen=True)
class CrudeBoundProvider:
    law: OffspringLaw
    n_roots: int = 1

    def certificate(self, stream, limit=None) -> BoundCertificate:
        m = crude_bound(self.law, self.n_roots)
        return BoundCertificate(m, (), m - 1)


def provider_for(setup, delta: float | None = None, contraction: ContractionCertificate | None = None):
    """Pick the bound construction matching the model of a kernel setup."""
    model, law = setup.model, setup.law
    if all(law.qs[k] == 1 for k in range(2, law.horizon + 1)):
        return CrudeBoundProvider(law, setup.n_roots)
    if model.kind == "lattice":
        return LatticeBoundProvider(model, law, setup.n_roots, setup.spine_law, setup.population_cap)
    if contraction is None:
        if not hasattr(model, "a"):
            raise ExplorationError("continuous model needs a contraction certificate")
        contraction = ContractionCertificate.affine(model.a)
    if delta is None:
        delta = 0.1 * getattr(model, "c", 1.0)
    return ContinuousBoundProvider(model, law, delta, contraction, setup.n_roots, setup.spine_law, setup.population_cap)


@dataclass(frozen=True)
class ContractionReport:
    trials: int
    max_ratio: float
    violations: int


def verify_contraction(
    model: FeynmanKacModel,
    certificate: ContractionCertificate,
    trials: int = 10_000,
    seed: int = 0,
    max_steps: int | None = None,
    scale: float = 3.0,
    rtol: float = 1e-12,
) -> ContractionReport:
    """Check ``|M'^j(x) - M'^j(y)| <= f^j(|x - y|)`` along shared uniforms.

    Distances are compared up to ``rtol`` plus a roundoff allowance
    proportional to the magnitude of the states.

    Raises :class:`ContractionError` with the first violating triple.
    """
    rng = np.random.default_rng(seed)
    steps = max_steps if max_steps is not None else max(1, model.horizon - 1)
    worst = 0.0
    for t in range(trials):
        x, y = (float(v) for v in rng.normal(0.0, scale, 2))
        eps = abs(x - y)
        for j in range(1, steps + 1):
            u = float(rng.random()) * 0.999999 + 5e-7
            x, y = model.transition(x, u), model.transition(y, u)
            allowed = certificate.radius(j, eps)
            d = abs(x - y)
            slack = 16 * np.finfo(float).eps * (abs(x) + abs(y) + 1.0)  # roundoff in the two transitions
            if allowed > slack:
                worst = max(worst, d / allowed)
            if d > allowed * (1 + rtol) + slack:
                raise ContractionError(
                    f"step {j}: |M'(x) - M'(y)| = {d} > f^{j}({eps}) = {allowed}",
                    witness={"trial": t, "step": j, "eps": eps, "distance": d, "allowed": allowed},
                )
    return ContractionReport(trials, worst, 0)
