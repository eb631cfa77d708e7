"""Estimator-style facade: calibrate on a model, then draw perfect samples."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .apps import smc_prerun
from .bounds import provider_for
from .errors import DomainError
from .forest import DEFAULT_POPULATION_CAP
from .kernel import DEFAULT_DEPTH_CAP, KernelSetup, cftp_sample
from .model import FeynmanKacModel, OffspringLaw, calibrate


class PerfectSampler(BaseEstimator):
    """Perfect sampler for the path law of a Feynman-Kac model.

    ``fit(model)`` runs the SMC pre-run and calibrates the offspring laws
    (unless ``qs`` fixes them); ``sample(n)`` returns an ``(n, P)`` array of
    exact draws, replicate ``i`` using seed ``seed + i``.

    Parameters
    ----------
    n_roots : int
        Number of roots of every forest.
    qs : sequence of int or None
        Offspring-law ranges ``q_2..q_P``; ``None`` calibrates them.
    smc_particles, smc_seed : int
        Size and seed of the calibration particle filter.
    delta : float or None
        Cell width of the continuous bound (default ``0.1 * c``).
    spine_law : {"size-biased", "conditioned"}
    population_cap, depth_cap : int
    """

    def __init__(
        self,
        n_roots: int = 1,
        qs=None,
        smc_particles: int = 2000,
        smc_seed: int = 0,
        delta: float | None = None,
        spine_law: str = "size-biased",
        population_cap: int = DEFAULT_POPULATION_CAP,
        depth_cap: int = DEFAULT_DEPTH_CAP,
    ):
        self.n_roots = n_roots
        self.qs = qs
        self.smc_particles = smc_particles
        self.smc_seed = smc_seed
        self.delta = delta
        self.spine_law = spine_law
        self.population_cap = population_cap
        self.depth_cap = depth_cap

    def fit(self, model: FeynmanKacModel, y=None):
        if not isinstance(model, FeynmanKacModel):
            raise DomainError("fit expects a FeynmanKacModel")
        if self.n_roots < 1:
            raise DomainError("n_roots must be >= 1")
        model.validate()
        if self.qs is None:
            self.smc_ = smc_prerun(model, self.smc_particles, self.smc_seed)
            self.law_ = calibrate(model, self.smc_.means)
            self.log_z_ = self.smc_.log_z
        else:
            self.smc_ = None
            self.law_ = OffspringLaw.for_model(model, self.qs)
            self.log_z_ = None
        self.model_ = model
        self.setup_ = KernelSetup(model, self.law_, self.n_roots, self.spine_law, self.population_cap)
        self.bound_ = provider_for(self.setup_, self.delta)
        return self

    def sample_results(self, n_samples: int = 1, seed: int = 0) -> list:
        check_is_fitted(self, "setup_")
        if n_samples < 0:
            raise DomainError("n_samples must be >= 0")
        return [
            cftp_sample(seed + i, self.setup_, self.bound_, self.depth_cap) for i in range(n_samples)
        ]

    def sample(self, n_samples: int = 1, seed: int = 0) -> np.ndarray:
        res = self.sample_results(n_samples, seed)
        return np.array([r.path for r in res]).reshape(n_samples, self.model_.horizon)
