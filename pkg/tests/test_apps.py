import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perfectfk.apps import (
    GaussianSSM,
    LatticeWalkModel,
    PolymerModel,
    fit_loglog,
    generate_environment,
    replicate_seed,
    scaling_experiment,
    simulate_observations,
    smc_prerun,
)
from perfectfk.errors import DegeneracyError, DomainError
from perfectfk.oracle import exact_path_law, kalman_smoother

from conftest import flat_walk, small_polymer


class TestEnvironment:
    def test_no_defects_gives_free_walk(self):
        env = generate_environment(0, 0.0, 2.0, 6)
        assert np.all(env.xi == 0)
        law = exact_path_law(PolymerModel(env))
        assert np.allclose(law.probs, 1 / 2**5)

    def test_all_defects_gives_constant_potential(self):
        beta = 0.7
        model = PolymerModel(generate_environment(0, 1.0, beta, 5))
        for k in range(1, 5):
            assert all(model.potential(k, x) == pytest.approx(math.exp(-beta)) for x in model.support(k))
        assert np.allclose(exact_path_law(model).probs, 1 / 2**4)

    def test_defect_frequency(self):
        P, p = 100, 0.3
        env = generate_environment(5, p, 1.0, P)
        cone = [env.xi[k - 1, x + P - 1] for k in range(1, P + 1) for x in range(-(k - 1), k)]
        assert len(cone) == P * P
        se = math.sqrt(p * (1 - p) / len(cone))
        assert abs(np.mean(cone) - p) < 4 * se

    def test_two_potential_values(self):
        env = generate_environment(1, 0.5, 1.3, 8)
        assert set(np.unique(np.exp(-env.beta * env.xi))) == {1.0, math.exp(-1.3)}

    def test_deterministic_in_seed(self):
        a = generate_environment(9, 0.5, 1.0, 10).xi
        b = generate_environment(9, 0.5, 1.0, 10).xi
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("p,beta", [(-0.1, 1.0), (1.1, 1.0), (0.5, -1.0)])
    def test_rejects_bad_parameters(self, p, beta):
        with pytest.raises(DomainError):
            generate_environment(0, p, beta, 4)


class TestPolymerModel:
    def test_parity_support(self):
        model = small_polymer(6)
        for k in range(1, 7):
            reach = {path[k - 1] for path in exact_path_law(model).paths}
            assert sorted(reach) == model.support(k) == list(range(-(k - 1), k, 2))

    def test_three_step_law_by_hand(self):
        model = small_polymer(3)
        law = exact_path_law(model)
        # G_1 is shared by all paths; the law is V_2 reweighted over the 4 walks
        v = {x: model.potential(2, x) for x in (-1, 1)}
        total = 2 * (v[-1] + v[1])
        for path in [(0, 1, 2), (0, 1, 0), (0, -1, 0), (0, -1, -2)]:
            assert law.prob(path) == pytest.approx(v[path[1]] / total, abs=1e-15)
        assert law.z == pytest.approx(model.potential(1, 0) * (v[-1] + v[1]) / 2, abs=1e-15)

    def test_step_from_keyed_uniform(self):
        model = small_polymer(3)
        assert model.transition(0, 0.49) == 1 and model.transition(0, 0.5) == -1
        assert model.initial(0.123) == 0

    def test_bound_is_one(self):
        model = small_polymer(5)
        assert all(model.bound(k) == 1.0 for k in range(1, 5))


class TestGaussianModel:
    def setup_method(self):
        self.model = GaussianSSM(0.9, 0.5, 0.5, [0.3, -1.2, 2.0])

    def test_bound_attained_at_observation(self):
        for k, y in enumerate(self.model.observations, start=1):
            assert self.model.potential(k, y) == self.model.bound(k) == self.model.potential_sup(k, y - 1, y + 1)

    @given(st.floats(-5, 5), st.floats(0, 3), st.floats(0, 3))
    def test_potential_sup_dominates(self, x, left, right):
        lo, hi = x - left, x + right
        for k in (1, 2, 3):
            sup = self.model.potential_sup(k, lo, hi)
            for t in np.linspace(lo, hi, 7):
                assert self.model.potential(k, t) <= sup * (1 + 1e-12)

    def test_wide_observation_noise_flattens_potentials(self):
        flat = GaussianSSM(0.9, 0.5, 1e8, [0.3, -1.2])
        ratios = [flat.potential(1, x) / flat.bound(1) for x in np.linspace(-10, 10, 21)]
        assert np.allclose(ratios, 1.0, atol=1e-12)

    def test_interval_image_is_the_point_image(self):
        u = 0.37
        lo, hi = self.model.transition_interval(-1.0, 2.0, u)
        assert lo == pytest.approx(self.model.transition(-1.0, u))
        assert hi == pytest.approx(self.model.transition(2.0, u))

    @pytest.mark.parametrize("a", [0.0, 1.0, -0.5, 1.5])
    def test_requires_contracting_dynamics(self, a):
        with pytest.raises(DomainError):
            GaussianSSM(a, 0.5, 0.5, [0.0])

    def test_simulated_observations(self):
        ys = simulate_observations(0.9, 0.5, 0.5, 5, 11)
        assert ys.shape == (4,)
        assert np.array_equal(ys, simulate_observations(0.9, 0.5, 0.5, 5, 11))


class TestSmcPrerun:
    def test_constant_potential_is_exact(self):
        res = smc_prerun(flat_walk(5, 0.4), 200, 0)
        assert res.means == (0.4,) * 4
        assert res.log_z == pytest.approx(4 * math.log(0.4))

    @pytest.mark.parametrize("P", [3, 4])
    def test_z_estimator_unbiased(self, P):
        model = small_polymer(P)
        z = exact_path_law(model).z
        est = np.array([math.exp(smc_prerun(model, 100, s).log_z) for s in range(200)])
        se = est.std(ddof=1) / math.sqrt(len(est))
        assert abs(est.mean() - z) < 4 * se + 1e-15

    def test_gaussian_log_z_near_kalman(self):
        model = GaussianSSM(0.9, 0.5, 0.5, simulate_observations(0.9, 0.5, 0.5, 5, 11))
        truth = kalman_smoother(model).log_likelihood
        est = np.array([smc_prerun(model, 1000, s).log_z for s in range(20)])
        assert abs(est.mean() - truth) < 3 * est.std(ddof=1) / math.sqrt(20) + 0.01

    def test_all_weights_vanish(self):
        dead = LatticeWalkModel(4, lambda k, x: 0.0 if k == 2 else 1.0)
        with pytest.raises(DegeneracyError):
            smc_prerun(dead, 100, 0)

    def test_too_few_particles(self):
        with pytest.raises(DomainError):
            smc_prerun(flat_walk(3), 99, 0)


class TestScaling:
    def test_single_replicate_flagged(self):
        res = scaling_experiment(0.5, 1.0, [4, 6, 8], 1, seed=1)
        assert res.low_confidence
        assert math.isfinite(res.zeta)

    def test_csv_and_summary(self, tmp_path):
        res = scaling_experiment(0.5, 0.0, [4, 8], 3, seed=2)
        res.write_csv(tmp_path / "s.csv")
        res.write_summary(tmp_path / "s.json")
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert list(rows[0]) == ["P", "replicate", "T", "max_abs", "seed"]
        assert len(rows) == 6
        assert {int(r["seed"]) for r in rows} == {replicate_seed(2, P, r) for P in (4, 8) for r in range(3)}
        assert not res.low_confidence and math.isnan(res.zeta_se)

    def test_failures_are_counted_and_excluded(self):
        res = scaling_experiment(0.5, 1.0, [6, 10, 14], 6, seed=3, depth_cap=1, n_roots=1)
        failed = sum(1 for r in res.rows if r.T is None)
        assert failed > 0
        assert sum(f for *_, f in res.table) == failed
        assert all(n + f == 6 for _, _, n, f in res.table)

    def test_horizons_must_increase(self):
        with pytest.raises(DomainError):
            scaling_experiment(0.5, 1.0, [8, 8], 2)

    def test_loglog_fit(self):
        xs = [2.0, 4.0, 8.0, 16.0]
        slope, se = fit_loglog(xs, [3 * x**0.6 for x in xs])
        assert slope == pytest.approx(0.6) and se == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(DomainError):
            fit_loglog([2.0], [1.0])

    def test_seeds_distinct(self):
        seeds = {replicate_seed(0, P, r) for P in (8, 16, 32, 64) for r in range(200)}
        assert len(seeds) == 800
