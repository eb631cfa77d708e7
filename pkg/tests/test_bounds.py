import itertools
import json

import numpy as np
import pytest

from perfectfk import randomness as rnd
from perfectfk.apps import GaussianSSM
from perfectfk.bounds import (
    ContractionCertificate,
    CrudeBoundProvider,
    _cell_potential,
    continuous_bound,
    crude_bound,
    lattice_bound,
    provider_for,
    verify_contraction,
)
from perfectfk.conditional import build_conditional, build_majorized, side_leaves, spine_offspring
from perfectfk.errors import ContractionError, ExplorationError
from perfectfk.kernel import KernelSetup
from perfectfk.verification import bound_cost_slope, reference_gaussian

from conftest import flat_walk, law_for, small_polymer


def walks(P):
    for steps in itertools.product((-1, 1), repeat=P - 1):
        yield tuple(int(x) for x in np.cumsum((0,) + steps))


def conditional_sizes(model, law, stream, n_roots=1):
    return [build_conditional(z, model, law, stream, n_roots=n_roots).n_final for z in walks(model.horizon)]


class TestLatticeBound:
    def test_two_steps_is_exact(self):
        model = small_polymer(2)
        law = law_for(model, 3)
        for s in range(50):
            stream = rnd.KeyedStream(s)
            cert = lattice_bound(model, law, stream, n_roots=2)
            a = spine_offspring(law, stream, 2)[0]
            assert cert.per_time == (a - 1,)
            assert cert.m == 1 + cert.common + a - 1 == max(conditional_sizes(model, law, stream, 2))

    @pytest.mark.parametrize("P", [3, 4, 5])
    def test_dominates_every_path(self, P):
        model = small_polymer(P)
        law = law_for(model, 3)
        for s in range(40):
            stream = rnd.KeyedStream(s)
            cert = lattice_bound(model, law, stream, n_roots=2)
            sizes = conditional_sizes(model, law, stream, 2)
            assert max(sizes) <= cert.m
            assert cert.m == 1 + sum(cert.per_time) + cert.common
            if P == 3:
                assert max(sizes) == cert.m  # one z-dependent time: the maximum is attained

    def test_per_time_maxima_are_attained(self):
        model = small_polymer(5)
        law = law_for(model, 3)
        for s in range(30):
            stream = rnd.KeyedStream(s)
            cert = lattice_bound(model, law, stream)
            side = np.array([build_conditional(z, model, law, stream).side_counts for z in walks(5)])
            assert tuple(side.max(axis=0)) == cert.per_time

    def test_lazy_limit_stops_early(self):
        model = small_polymer(8)
        law = law_for(model, 4)
        stream = rnd.KeyedStream(3)
        full = lattice_bound(model, law, stream)
        lazy = lattice_bound(model, law, stream, limit=0.5)
        assert full.complete and not lazy.complete
        assert lazy.m <= full.m and len(lazy.per_time) < len(full.per_time)

    def test_rebuild_count(self):
        model = small_polymer(9)
        law = law_for(model, 3)
        for s in range(10):
            stream = rnd.KeyedStream(s)
            work = []
            lattice_bound(model, law, stream, work=work)
            counts = spine_offspring(law, stream, 9)
            assert work == [sum(k for k in range(1, 8) if counts[k - 1] > 1)]

    def test_cost_grows_quadratically(self):
        slope, costs = bound_cost_slope((8, 16, 32), n_streams=10)
        assert 1.7 <= slope <= 2.3
        assert costs == sorted(costs)

    def test_certificate_json(self):
        model = small_polymer(4)
        cert = lattice_bound(model, law_for(model, 2), rnd.KeyedStream(0))
        data = json.loads(cert.to_json())
        assert data["M"] == cert.m and data["complete"] is True


def test_crude_bound():
    model = small_polymer(4)
    law = law_for(model, [2, 3, 2])
    assert crude_bound(law, 2) == 24
    for s in range(30):
        stream = rnd.KeyedStream(s)
        assert max(conditional_sizes(model, law, stream, 2)) <= CrudeBoundProvider(law, 2).certificate(stream).m


def test_provider_choice():
    model = flat_walk(4)
    assert isinstance(provider_for(KernelSetup(model, law_for(model, 1))), CrudeBoundProvider)
    g, L = reference_gaussian()
    prov = provider_for(KernelSetup(g, L))
    assert prov.delta == pytest.approx(0.1 * g.c)


class TestContinuousBound:
    def setup_method(self):
        self.model, self.law = reference_gaussian()
        self.cert = ContractionCertificate.affine(self.model.a)

    def test_zero_width_cells_add_no_inflation(self):
        rng = np.random.default_rng(0)
        for s in range(100):
            z = [y + float(rng.normal(0, 0.2)) for y in self.model.observations] + [0.3]
            stream = rnd.KeyedStream(s)
            k = int(rng.integers(1, self.model.horizon))
            H = _cell_potential(self.model, k, 0.0, self.cert)
            a = build_conditional(z, self.model, self.law, stream, record=True)
            b = build_majorized(z, self.model, self.law, stream, H, record=True)
            assert a.generations == b.generations

    def test_cells_dominate_their_points(self):
        rng = np.random.default_rng(1)
        delta = 0.1
        P = self.model.horizon
        for s in range(30):
            stream = rnd.KeyedStream(s)
            cert = continuous_bound(self.model, self.law, stream, delta, self.cert)
            counts = spine_offspring(self.law, stream, P)
            for k in range(1, P):
                H = _cell_potential(self.model, k, delta / 2, self.cert)
                for _ in range(20):
                    c = self.model.potential_mode(k) + int(rng.integers(-25, 26)) * delta
                    x = c + float(rng.uniform(-delta / 2, delta / 2))
                    n_g = side_leaves(k, x, self.model, self.law, stream, counts)
                    assert n_g <= side_leaves(k, c, self.model, self.law, stream, counts, H)
                    assert n_g <= cert.per_time[k - 1]

    def test_bound_holds_for_far_paths(self):
        rng = np.random.default_rng(2)
        setup = KernelSetup(self.model, self.law, n_roots=2)
        for s in range(30):
            stream = rnd.KeyedStream(s)
            cert = continuous_bound(self.model, self.law, stream, 0.1, self.cert, n_roots=2)
            assert all(e["stop"] in ("z-free", "tail-certified/tail-certified") for e in cert.exploration)
            for _ in range(30):
                z = list(rng.normal(0, 3, self.model.horizon))
                assert setup.conditional_size(z, stream) <= cert.m

    def test_mean_bound_grows_with_cell_width(self):
        deltas = (0.05, 0.1, 0.2, 0.5)
        means = [
            np.mean([continuous_bound(self.model, self.law, rnd.KeyedStream(0, i), d, self.cert).m for i in range(100)])
            for d in deltas
        ]
        assert means == sorted(means)

    def test_non_rigorous_without_interval_transition(self):
        class NoIntervals(GaussianSSM):
            def __getattribute__(self, name):
                if name == "transition_interval":
                    raise AttributeError(name)
                return super().__getattribute__(name)

        m = NoIntervals(self.model.a, self.model.b, self.model.c, self.model.observations)
        cert = continuous_bound(m, self.law, rnd.KeyedStream(0), 0.1, self.cert)
        assert cert.rigorous is False
        assert all(e["stop"] in ("z-free", "zero-run/zero-run") for e in cert.exploration)

    def test_exploration_errors(self):
        walk = small_polymer(4)
        with pytest.raises(ExplorationError):
            continuous_bound(walk, law_for(walk, 2), rnd.KeyedStream(0), 0.1, self.cert)
        with pytest.raises(ExplorationError):
            continuous_bound(self.model, self.law, rnd.KeyedStream(0), -1.0, self.cert)
        with pytest.raises(ExplorationError):
            for s in range(20):
                continuous_bound(self.model, self.law, rnd.KeyedStream(s), 1e-3, self.cert, max_cells=10)


class TestContraction:
    def test_ar1_step_is_exactly_a(self):
        model = GaussianSSM(0.9, 0.5, 0.5, [0.0, 0.0])
        for u in (0.1, 0.5, 0.93):
            assert abs(model.transition(1.0, u) - model.transition(0.0, u)) == pytest.approx(0.9, abs=1e-15)

    def test_radius(self):
        cert = ContractionCertificate.affine(0.9)
        assert cert.radius(0, 0.37) == 0.37
        assert cert.radius(3, 1.0) == pytest.approx(0.729)

    def test_random_triples_pass(self):
        model = GaussianSSM(0.5, 1.0, 1.0, [0.0] * 4)
        report = verify_contraction(model, ContractionCertificate.affine(0.5), trials=10_000)
        assert report.violations == 0 and report.max_ratio <= 1 + 1e-6

    def test_too_optimistic_certificate_rejected(self):
        model = GaussianSSM(0.9, 1.0, 1.0, [0.0] * 4)
        with pytest.raises(ContractionError) as info:
            verify_contraction(model, ContractionCertificate.affine(0.5), trials=10)
        assert info.value.witness["step"] == 1
