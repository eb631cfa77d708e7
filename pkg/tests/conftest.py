import itertools
import math

import pytest

from perfectfk.apps import LatticeWalkModel, PolymerModel, generate_environment
from perfectfk.forest import Forest
from perfectfk.model import OffspringLaw


def enumerate_forests(model, law, n_roots):
    """Every labelled forest (dead or alive) of a finite lattice model.

    Yields :class:`Forest` objects without a spine.  The enumeration walks
    offspring vectors, canonical child states and relabelling permutations,
    which is a bijection onto labelled forests.
    """
    P = model.horizon
    init = [x for x, p in model.initial_pmf().items() if p > 0]

    def grow(states, offspring, perms):
        k = len(states) + 1
        if k > P:
            yield Forest(P, tuple(states), tuple(offspring), tuple(perms))
            return
        prev = states[-1]
        q = law.qs[k]
        for offs in itertools.product(range(q + 1), repeat=len(prev)):
            n = sum(offs)
            if n == 0:
                yield Forest(P, tuple(states), tuple(offspring) + (offs,), tuple(perms))
                continue
            parents = [i for i, a in enumerate(offs) for _ in range(a)]
            choices = [sorted(model.transition_pmf(prev[p])) for p in parents]
            for canon in itertools.product(*choices):
                for perm in itertools.permutations(range(n)):
                    lab = [None] * n
                    for pos, x in enumerate(canon):
                        lab[perm[pos]] = x
                    yield from grow(states + [tuple(lab)], offspring + [offs], perms + [perm])

    for roots in itertools.product(init, repeat=n_roots):
        yield from grow([tuple(roots)], [], [])


def with_spines(forest):
    """All spine-marked copies of a surviving forest (one per final leaf)."""
    if forest.is_dead:
        return
    P = forest.horizon
    parents = {k: forest.parents(k) for k in range(2, P + 1)}
    for leaf in range(forest.n_final):
        line = [leaf]
        for k in range(P, 1, -1):
            line.append(parents[k][line[-1]])
        line.reverse()
        yield Forest(P, forest.states, forest.offspring, forest.perms, tuple(line))


def small_polymer(P=3, seed=3, beta=1.0, p=0.5):
    return PolymerModel(generate_environment(seed, p, beta, P))


@pytest.fixture
def polymer3():
    return small_polymer(3)


@pytest.fixture
def polymer4():
    return small_polymer(4)


def flat_walk(P, g0=1.0):
    return LatticeWalkModel(P, lambda k, x: g0, bounds=g0)


def law_for(model, qs):
    return OffspringLaw.for_model(model, qs)


def logsumexp(values):
    values = list(values)
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in values))
