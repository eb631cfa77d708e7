"""Perfect simulation of Feynman-Kac path laws by branching-process coupling from the past."""

from .apps import (
    GaussianSSM,
    LatticeWalkModel,
    PolymerModel,
    gaussian_model,
    generate_environment,
    polymer_model,
    scaling_experiment,
    simulate_observations,
    smc_prerun,
)
from .bounds import (
    BoundCertificate,
    ContractionCertificate,
    continuous_bound,
    crude_bound,
    lattice_bound,
    provider_for,
    verify_contraction,
)
from .conditional import build_conditional, build_majorized, descendant_counts
from .errors import PerfectFKError
from .estimator import PerfectSampler
from .forest import Forest, density_pi_hat, density_q, density_q0, proposal_forest, sample_proposal
from .kernel import CftpResult, KernelSetup, cftp_sample, mcmc_chain, metropolis_step
from .model import FeynmanKacModel, OffspringLaw, calibrate
from .oracle import exact_path_law, goodness_of_fit, kalman_smoother, recursive_z
from .randomness import KeyedStream

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
