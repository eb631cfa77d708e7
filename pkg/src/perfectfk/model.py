"""Feynman-Kac problem description and the two-parameter offspring laws.

A model supplies an initial law, a Markov kernel and potentials ``G_k``
(k = 1..P-1) together with certified bounds ``B_k >= sup G_k``.  Particles
at time ``k`` reproduce according to the law of step ``k + 1``, whose
parameter is ``G_k`` at the parent and whose scale is ``beta_{k+1} = B_k``.

For a step with bound ``beta`` and support size ``q`` the law puts mass
``1 - g/beta`` on zero children and ``g/(q*beta)`` on each of ``1..q``.
Conditioned on at least one child it is uniform on ``1..q`` whatever ``g``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CalibrationError, DomainError

# Relative slack accepted when comparing a potential to its bound.
_BOUND_RTOL = 1e-12


class FeynmanKacModel(ABC):
    """Abstract Feynman-Kac path model on ``E^P``.

    Subclasses set ``horizon`` and ``kind`` (``"lattice"`` or
    ``"continuous"``) and implement the scalar hooks below.  States are
    plain Python scalars so that the hot loops stay free of numpy
    overhead; the ``*_batch`` hooks are used by the SMC pre-run.
    """

    horizon: int
    kind: str = "continuous"

    @abstractmethod
    def initial(self, u: float):
        """Draw from M_1 by inversion of one uniform."""

    @abstractmethod
    def transition(self, x, u: float):
        """Draw from M(x, .) by inversion of one uniform."""

    @abstractmethod
    def potential(self, k: int, x) -> float:
        """G_k(x) for k in 1..P-1."""

    @abstractmethod
    def bound(self, k: int) -> float:
        """Certified B_k >= sup_x G_k(x)."""

    @abstractmethod
    def log_initial_density(self, x) -> float: ...

    @abstractmethod
    def log_transition_density(self, x, y) -> float: ...

    @property
    def bounds(self) -> tuple[float, ...]:
        return tuple(self.bound(k) for k in range(1, self.horizon))

    # vectorised hooks for the particle filter; override when speed matters
    def initial_batch(self, u: np.ndarray) -> np.ndarray:
        return np.array([self.initial(float(v)) for v in u])

    def transition_batch(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.array([self.transition(xi.item(), float(v)) for xi, v in zip(x, u)])

    def potential_batch(self, k: int, x: np.ndarray) -> np.ndarray:
        return np.array([self.potential(k, xi.item()) for xi in x], dtype=float)

    def log_path_weight(self, path: Sequence) -> float:
        """log of M_1(z_1) prod M(z_{k-1}, z_k) prod_{k<P} G_k(z_k)."""
        if len(path) != self.horizon:
            raise DomainError(f"path length {len(path)} != horizon {self.horizon}")
        lw = self.log_initial_density(path[0])
        for k in range(1, self.horizon):
            lw += self.log_transition_density(path[k - 1], path[k])
            g = self.potential(k, path[k - 1])
            lw += math.log(g) if g > 0 else -math.inf
        return lw

    def check_potentials(self, states_by_time: dict) -> None:
        """Spot-check ``0 <= G_k(x) <= B_k`` on the given states."""
        for k, states in states_by_time.items():
            b = self.bound(k)
            for x in states:
                g = self.potential(k, x)
                if not (0.0 <= g <= b * (1 + _BOUND_RTOL)) or not math.isfinite(g):
                    raise DomainError(f"G_{k}({x!r}) = {g} violates certified bound {b}")

    def validate(self, n_probe: int = 64, seed: int = 0) -> None:
        if self.horizon < 2:
            raise DomainError("horizon must be >= 2")
        for k in range(1, self.horizon):
            b = self.bound(k)
            if not (b > 0 and math.isfinite(b)):
                raise DomainError(f"bound B_{k} = {b} must be positive and finite")
        rng = np.random.default_rng(seed)
        probes: dict[int, list] = {}
        xs = [self.initial(float(u)) for u in rng.random(n_probe) * 0.999 + 0.0005]
        for k in range(1, self.horizon):
            probes[k] = xs
            xs = [self.transition(x, float(u)) for x, u in zip(xs, rng.random(n_probe) * 0.999 + 0.0005)]
        self.check_potentials(probes)


@dataclass(frozen=True)
class OffspringLaw:
    """Per-step bounds ``beta_k`` and support sizes ``q_k`` for k = 2..P.

    Stored as tuples indexed directly by ``k``; entries 0 and 1 are unused.
    """

    betas: tuple
    qs: tuple

    def __post_init__(self):
        if len(self.betas) != len(self.qs) or len(self.betas) < 3:
            raise DomainError("offspring law needs betas and qs for steps 2..P")
        for k in range(2, len(self.betas)):
            if not self.betas[k] > 0:
                raise DomainError(f"beta_{k} must be positive")
            if int(self.qs[k]) != self.qs[k] or self.qs[k] < 1:
                raise DomainError(f"q_{k} must be a positive integer")

    @classmethod
    def from_steps(cls, betas: Sequence[float], qs: Sequence[int]) -> "OffspringLaw":
        """Build from sequences listing steps 2..P in order."""
        qs = list(qs)
        if any(int(q) != q for q in qs):
            raise DomainError("every q_k must be an integer")
        return cls((None, None, *map(float, betas)), (None, None, *map(int, qs)))

    @classmethod
    def for_model(cls, model: FeynmanKacModel, qs: Sequence[int] | int) -> "OffspringLaw":
        if isinstance(qs, int):
            qs = [qs] * (model.horizon - 1)
        if len(qs) != model.horizon - 1:
            raise DomainError("need one q per step 2..P")
        return cls.from_steps(model.bounds, qs)

    @property
    def horizon(self) -> int:
        return len(self.betas) - 1

    def beta(self, k: int) -> float:
        return self.betas[k]

    def q(self, k: int) -> int:
        return self.qs[k]

    def mean_offspring(self, k: int, g: float) -> float:
        return (self.qs[k] + 1) * g / (2.0 * self.betas[k])

    def to_dict(self) -> dict:
        return {"betas": list(self.betas[2:]), "qs": list(self.qs[2:])}


def _check_g(beta: float, g: float) -> None:
    if not (0.0 <= g <= beta * (1 + _BOUND_RTOL)):
        raise DomainError(f"potential value {g} outside [0, {beta}]: certified bound violated")


def offspring_pmf(law: OffspringLaw, k: int, g: float) -> np.ndarray:
    beta, q = law.betas[k], law.qs[k]
    _check_g(beta, g)
    r = min(g / beta, 1.0)
    pmf = np.full(q + 1, r / q)
    pmf[0] = 1.0 - r
    return pmf


def spine_offspring_pmf(law: OffspringLaw, k: int, g: float) -> np.ndarray:
    if not g > 0:
        raise DomainError("a zero-potential spine node cannot be conditioned to survive")
    _check_g(law.betas[k], g)
    q = law.qs[k]
    pmf = np.full(q + 1, 1.0 / q)
    pmf[0] = 0.0
    return pmf


def icdf(beta: float, q: int, g: float, w: float) -> int:
    """Generalised inverse CDF of the offspring law; no argument checking."""
    if w <= 1.0 - g / beta:
        return 0
    # numerator fixed so the result is monotone in g under rounding
    return q - int(((1.0 - w) * q * beta) / g)


def offspring_icdf(law: OffspringLaw, k: int, g: float, w: float) -> int:
    beta = law.betas[k]
    _check_g(beta, g)
    return icdf(beta, law.qs[k], min(g, beta), w)


def spine_offspring_icdf(law: OffspringLaw, k: int, g: float, w: float) -> int:
    """Inverse CDF of the law conditioned on >= 1 child: ``1 + floor(w q)``."""
    if not g > 0:
        raise DomainError("a zero-potential spine node cannot be conditioned to survive")
    _check_g(law.betas[k], g)
    return 1 + int(w * law.qs[k])


def calibrate(model: FeynmanKacModel, smc_means: Sequence[float]) -> OffspringLaw:
    """Pick ``q_{k+1}`` so the mean offspring at the typical potential is ~1.

    ``smc_means[k-1]`` is the particle-filter estimate of the mean of G_k.
    """
    P = model.horizon
    if len(smc_means) != P - 1:
        raise CalibrationError(f"expected {P - 1} mean potentials, got {len(smc_means)}")
    betas, qs = [], []
    for k, gk in enumerate(smc_means, start=1):
        bk = model.bound(k)
        if not gk > 0:
            raise CalibrationError(f"mean potential at step {k} is {gk}; must be > 0")
        if gk > bk * (1 + _BOUND_RTOL):
            raise DomainError(f"mean potential {gk} at step {k} exceeds bound {bk}")
        betas.append(bk)
        qs.append(max(1, math.floor(2.0 * bk / gk - 1.0 + 0.5)))
    return OffspringLaw.from_steps(betas, qs)
