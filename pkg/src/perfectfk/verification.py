"""Executable acceptance checks shared by ``perfectfk verify`` and the test suite.

Each check returns a :class:`CheckResult`; sizes default to the full
acceptance settings and can be reduced for smoke runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import randomness as rnd
from .apps import (
    GaussianSSM,
    PolymerModel,
    generate_environment,
    scaling_experiment,
    simulate_observations,
    smc_prerun,
)
from .bounds import ContractionCertificate, _cell_potential, lattice_bound, provider_for
from .conditional import build_conditional, build_majorized, side_leaves, spine_offspring
from .forest import density_pi_hat, density_q, proposal_forest
from .kernel import KernelSetup, cftp_sample, metropolis_step
from .model import (
    OffspringLaw,
    calibrate,
    icdf,
    offspring_icdf,
    offspring_pmf,
    spine_offspring_icdf,
    spine_offspring_pmf,
)
from .oracle import exact_path_law, goodness_of_fit, kalman_smoother

POLYMER_REF = {"p": 0.5, "beta": 1.0, "P": 4, "env_seed": 3}
GAUSSIAN_REF = {"a": 0.9, "b": 0.5, "c": 0.5, "P": 5, "obs_seed": 11}


@dataclass
class CheckResult:
    criterion: int
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"[{status}] criterion {self.criterion}: {self.name} ({shown}; {self.seconds:.1f}s)"

    def to_dict(self) -> dict:
        metrics = {k: v.item() if isinstance(v, np.generic) else v for k, v in self.metrics.items()}
        return {"criterion": self.criterion, "name": self.name, "passed": bool(self.passed),
                "metrics": metrics, "seconds": self.seconds}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def reference_polymer(P: int | None = None, env_seed: int | None = None, beta: float | None = None):
    ref = POLYMER_REF
    env = generate_environment(
        ref["env_seed"] if env_seed is None else env_seed,
        ref["p"],
        ref["beta"] if beta is None else beta,
        ref["P"] if P is None else P,
    )
    model = PolymerModel(env)
    return model, calibrate(model, smc_prerun(model, 2000, 0).means)


def reference_gaussian():
    ref = GAUSSIAN_REF
    ys = simulate_observations(ref["a"], ref["b"], ref["c"], ref["P"], ref["obs_seed"])
    model = GaussianSSM(ref["a"], ref["b"], ref["c"], ys)
    return model, calibrate(model, smc_prerun(model, 2000, 0).means)


@_timed
def check_exactness(n_samples: int = 100_000, seed: int = 0) -> CheckResult:
    model, law = reference_polymer()
    exact = exact_path_law(model)
    setup = KernelSetup(model, law)
    provider = provider_for(setup)
    samples = [cftp_sample(seed + i, setup, provider).path for i in range(n_samples)]
    fit = goodness_of_fit(samples, exact)
    return CheckResult(1, "CFTP samples match the enumerated path law",
                       fit.p_value > 1e-3 and fit.tv < 0.02,
                       {"n": n_samples, "chi2": fit.chi2, "dof": fit.dof, "p": fit.p_value, "tv": fit.tv,
                        "borderline": fit.borderline})


@_timed
def check_kernel_invariance(n_samples: int = 100_000, seed: int = 0) -> CheckResult:
    model, law = reference_polymer()
    exact = exact_path_law(model)
    setup = KernelSetup(model, law)
    inputs = exact.sample(n_samples, np.random.default_rng(seed))
    out, accepted = [], 0
    for i, z in enumerate(inputs):
        rec = metropolis_step(z, rnd.KeyedStream(seed + 1, i), setup)
        out.append(rec.output_path)
        accepted += rec.accepted
    fit = goodness_of_fit(out, exact)
    return CheckResult(2, "one kernel step preserves the path law", fit.p_value > 1e-3,
                       {"n": n_samples, "chi2": fit.chi2, "p": fit.p_value, "tv": fit.tv,
                        "acceptance": accepted / n_samples})


@_timed
def check_density_ratio(n_forests: int = 1000, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    model, law = reference_polymer(P=3)
    exact = exact_path_law(model)
    log_z = math.log(exact.z)
    paths = exact.sample(n_forests, np.random.default_rng(seed))
    worst = 0.0
    for i, z in enumerate(paths):
        n_roots = 1 + i % 3
        cf = build_conditional(z, model, law, rnd.KeyedStream(seed, i), n_roots=n_roots, record=True)
        forest = cf.labelled()
        lhs = density_pi_hat(model, law, forest, log_z) - density_q(model, law, forest)
        rhs = (math.log(forest.n_final) + sum(math.log(law.betas[k]) for k in range(2, model.horizon + 1))
               - math.log(n_roots) - log_z)
        worst = max(worst, abs(lhs - rhs))
    return CheckResult(3, "target/proposal density ratio is N_P prod(B) / (N_1 Z)", worst <= tol,
                       {"forests": n_forests, "max_abs_error": worst})


@_timed
def check_acceptance_formula(n_pairs: int = 1000, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    model, law = reference_polymer()
    exact = exact_path_law(model)
    log_z = math.log(exact.z)
    setup = KernelSetup(model, law)
    rng = np.random.default_rng(seed)
    worst, pairs, dead, dead_accepted = 0.0, 0, 0, 0
    i = -1
    while pairs < n_pairs:  # n_pairs surviving proposals; dead ones are counted on the side
        i += 1
        z = exact.sample(1, rng)[0]
        stream = rnd.KeyedStream(seed, i)
        prop = proposal_forest(model, law, stream)
        rec = metropolis_step(z, stream, setup)
        if prop.is_dead:
            dead += 1
            dead_accepted += rec.accepted
            continue
        chi = build_conditional(z, model, law, stream, record=True).labelled()
        log_ratio = (density_pi_hat(model, law, prop, log_z) + density_q(model, law, chi)
                     - density_pi_hat(model, law, chi, log_z) - density_q(model, law, prop))
        direct = math.log(prop.n_final / chi.n_final)
        worst = max(worst, abs(log_ratio - direct))
        pairs += 1
    return CheckResult(4, "density quotient equals N_bar/N; dead proposals rejected",
                       worst <= tol and dead_accepted == 0,
                       {"pairs": pairs, "max_abs_log_error": worst, "dead": dead, "dead_accepted": dead_accepted})


def _coupling_ok(small, large) -> bool:
    big = large.key_sets()
    for gen_small, gen_big in zip(small.key_sets(), big):
        for key, x in gen_small.items():
            if key not in gen_big or gen_big[key] != x:
                return False
    return True


@_timed
def check_monotone_coupling(n_seeds: int = 1000, seed: int = 0) -> CheckResult:
    poly, poly_law = reference_polymer(P=6)
    gauss, gauss_law = reference_gaussian()
    rng = np.random.default_rng(seed)
    failures = 0
    for i in range(n_seeds):
        stream = rnd.KeyedStream(seed, i)
        # polymer: H raises G to 1 on a random set of sites
        lift = {(k, x) for k in range(1, poly.horizon) for x in poly.support(k) if rng.random() < 0.5}
        H = lambda k, x, _l=lift: 1.0 if (k, x) in _l else poly.potential(k, x)  # noqa: E731
        z = [0]
        for _ in range(poly.horizon - 1):
            z.append(z[-1] + (1 if rng.random() < 0.5 else -1))
        n_roots = 1 + i % 3
        small = build_conditional(z, poly, poly_law, stream, n_roots=n_roots, record=True)
        large = build_majorized(z, poly, poly_law, stream, H, n_roots=n_roots, record=True)
        failures += not _coupling_ok(small, large)
        # Gaussian: H is the sup of G over a random radius
        r = float(rng.uniform(0.0, 0.5))
        Hg = lambda k, x, _r=r: gauss.potential_sup(k, x - _r, x + _r)  # noqa: E731
        zg = list(gauss.observations) + [gauss.observations[-1]]
        zg = [y + float(rng.normal(0, 0.3)) for y in zg]
        small = build_conditional(zg, gauss, gauss_law, stream, n_roots=n_roots, record=True)
        large = build_majorized(zg, gauss, gauss_law, stream, Hg, n_roots=n_roots, record=True)
        failures += not _coupling_ok(small, large)
    return CheckResult(5, "H >= G forests contain G forests key-wise with equal states", failures == 0,
                       {"seeds": n_seeds, "failures": failures})


@_timed
def check_bound_validity(n_streams: int = 100, n_perturb: int = 100, seed: int = 0) -> CheckResult:
    # polymer P = 5: every walk path against every stream
    poly, law = reference_polymer(P=5)
    setup = KernelSetup(poly, law)
    lattice_viol = 0
    walks = [tuple(np.cumsum((0,) + steps)) for steps in product((-1, 1), repeat=poly.horizon - 1)]
    for i in range(n_streams):
        stream = rnd.KeyedStream(seed, i)
        m = lattice_bound(poly, law, stream).m
        for z in walks:
            lattice_viol += setup.conditional_size(z, stream) > m
    # Gaussian: in-cell perturbations per time index, plus whole paths
    gauss, glaw = reference_gaussian()
    gsetup = KernelSetup(gauss, glaw)
    provider = provider_for(gsetup)
    delta = provider.delta
    rng = np.random.default_rng(seed)
    cell_viol = path_viol = checked = 0
    P = gauss.horizon
    for i in range(n_streams):
        stream = rnd.KeyedStream(seed, i)
        cert = provider.certificate(stream)
        counts = spine_offspring(glaw, stream, P, gsetup.spine_law)
        for k in range(1, P):
            H = _cell_potential(gauss, k, delta / 2, provider.contraction)
            mode = gauss.potential_mode(k)
            for _ in range(n_perturb):
                c = mode + int(rng.integers(-30, 31)) * delta
                x = c + float(rng.uniform(-delta / 2, delta / 2))
                n_g = side_leaves(k, x, gauss, glaw, stream, counts)
                n_h = side_leaves(k, c, gauss, glaw, stream, counts, H)
                cell_viol += n_g > n_h or n_g > cert.per_time[k - 1]
                checked += 1
        for _ in range(n_perturb):
            z = [y + float(rng.normal(0, 1.0)) for y in gauss.observations] + [float(rng.normal())]
            path_viol += gsetup.conditional_size(z, stream) > cert.m
    passed = lattice_viol == 0 and cell_viol == 0 and path_viol == 0
    return CheckResult(6, "N_P(z,u) <= M(u) on lattice paths and Gaussian cells", passed,
                       {"lattice_violations": lattice_viol, "lattice_checks": n_streams * len(walks),
                        "cell_violations": cell_viol, "cell_checks": checked, "path_violations": path_viol})


@_timed
def check_gaussian_truth(n_samples: int = 10_000, n_smc: int = 50, seed: int = 0) -> CheckResult:
    model, law = reference_gaussian()
    setup = KernelSetup(model, law)
    provider = provider_for(setup)
    X = np.array([cftp_sample(seed + i, setup, provider).path for i in range(n_samples)])
    kal = kalman_smoother(model)
    z_means = (X.mean(0) - kal.smoothed_means) / (X.std(0, ddof=1) / math.sqrt(n_samples))
    log_zs = np.array([smc_prerun(model, 2000, 1000 + r).log_z for r in range(n_smc)])
    z_logz = (log_zs.mean() - kal.log_likelihood) / (log_zs.std(ddof=1) / math.sqrt(n_smc))
    passed = bool(np.all(np.abs(z_means) <= 3)) and abs(z_logz) <= 3
    return CheckResult(7, "Gaussian means and log Z agree with the Kalman oracle", passed,
                       {"n": n_samples, "max_mean_z": float(np.max(np.abs(z_means))), "logz_z": float(z_logz)})


def bound_cost_slope(P_list=(8, 16, 32, 64), n_streams: int = 20, env_seed: int = 0) -> tuple[float, list]:
    """Log-log slope of side-subtree rebuild counts of the lattice bound against P."""
    from .apps import fit_loglog

    costs = []
    for P in P_list:
        model = PolymerModel(generate_environment(env_seed, 0.5, 1.0, P))
        law = calibrate(model, smc_prerun(model, 1000, env_seed).means)
        work: list = []
        for i in range(n_streams):
            lattice_bound(model, law, rnd.KeyedStream(env_seed, i), work=work)
        costs.append(float(np.mean(work)))
    return fit_loglog(list(P_list), costs)[0], costs


@_timed
def check_scaling(P_list=(8, 16, 32, 64), replicates: int = 200, seed: int = 2026, threads: int = 1) -> CheckResult:
    disorder = scaling_experiment(0.5, 1.0, P_list, replicates, seed, threads=threads)
    free = scaling_experiment(0.5, 0.0, P_list, replicates, seed, threads=threads)
    slope, costs = bound_cost_slope(P_list)
    passed = 0.5 <= disorder.zeta <= 0.75 and 0.4 <= free.zeta <= 0.6 and 1.7 <= slope <= 2.3
    return CheckResult(8, "wandering exponent and P^2 bound cost", passed,
                       {"zeta": disorder.zeta, "zeta_se": disorder.zeta_se, "zeta_free": free.zeta,
                        "failures": sum(f for *_, f in disorder.table) + sum(f for *_, f in free.table),
                        "cost_slope": slope})


@_timed
def check_offspring_law(n_grid: int = 200) -> CheckResult:
    worst = 0.0
    monotone = uniform = True
    for beta, q in ((1.0, 1), (1.0, 3), (0.5, 4), (2.0, 7)):
        law = OffspringLaw.from_steps([beta], [q])
        for g in np.linspace(0.0, beta, 11):
            pmf = offspring_pmf(law, 2, g)
            worst = max(worst, abs(pmf.sum() - 1.0))
            worst = max(worst, abs(float(np.arange(q + 1) @ pmf) - (q + 1) * g / (2 * beta)))
            ws = np.linspace(0.0005, 0.9995, n_grid)
            draws = [offspring_icdf(law, 2, g, w) for w in ws]
            monotone &= all(a <= b for a, b in zip(draws, draws[1:]))
            if g > 0:
                spine = spine_offspring_pmf(law, 2, g)
                uniform &= bool(np.allclose(spine[1:], 1.0 / q, rtol=0, atol=1e-12)) and spine[0] == 0
                uniform &= all(spine_offspring_icdf(law, 2, g, w) == 1 + int(w * q) for w in ws)
        for w in np.linspace(0.0005, 0.9995, n_grid):
            seq = [icdf(beta, q, g, w) for g in np.linspace(0.0, beta, 21)]
            monotone &= all(a <= b for a, b in zip(seq, seq[1:]))
    return CheckResult(10, "offspring law: normalisation, mean, spine law, monotonicity",
                       worst <= 1e-12 and monotone and uniform,
                       {"max_abs_error": worst, "monotone": monotone, "spine_uniform": uniform})


@_timed
def check_determinism(n_replicates: int = 20, seed: int = 0, threads: int = 2) -> CheckResult:
    """Bitwise agreement across thread counts, plus prefix stability of the streams."""
    import json

    from .cli import resolve_config, run_samples

    mismatches = 0
    for kind in ("polymer", "gaussian"):
        config = resolve_config({"model": {"kind": kind}})
        seeds = list(range(seed, seed + n_replicates))
        one = [json.dumps(r, sort_keys=True) for r in run_samples(config, seeds, 1)]
        many = [json.dumps(r, sort_keys=True) for r in run_samples(config, seeds, threads)]
        mismatches += sum(a != b for a, b in zip(one, many))
    rows = [scaling_experiment(0.5, 1.0, (4, 8), 4, seed, threads=t).rows for t in (1, threads)]
    mismatches += sum(a != b for a, b in zip(*rows))

    rng = np.random.default_rng(seed)
    prefix_breaks = 0
    for _ in range(1000):
        stream = rnd.KeyedStream(int(rng.integers(2**62)), int(rng.integers(100)))
        key = tuple(int(k) for k in rng.integers(1, 5, size=int(rng.integers(1, 6))))
        n, m = sorted(int(v) for v in rng.integers(0, 40, size=2))
        prefix_breaks += stream.transition_uniforms(key, n) != stream.transition_uniforms(key, m)[:n]
    model, law = reference_polymer()
    setup = KernelSetup(model, law)
    provider = provider_for(setup)
    for i in range(n_replicates):
        full = cftp_sample(seed + i, setup, provider)
        tight = cftp_sample(seed + i, setup, provider, depth_cap=full.T + 1)
        prefix_breaks += (full.path, full.T) != (tight.path, tight.T)
    return CheckResult(9, "determinism across thread counts and stream prefix stability",
                       mismatches == 0 and prefix_breaks == 0,
                       {"replicates": n_replicates, "threads": threads, "mismatches": mismatches,
                        "prefix_breaks": prefix_breaks})


ALL_CHECKS = {
    1: check_exactness,
    2: check_kernel_invariance,
    3: check_density_ratio,
    4: check_acceptance_formula,
    5: check_monotone_coupling,
    6: check_bound_validity,
    7: check_gaussian_truth,
    8: check_scaling,
    9: check_determinism,
    10: check_offspring_law,
}
