"""Conditional forests: branching systems forced to contain a given path.

The spine (the conditioning path) sits at canonical index 0 of every
generation with the all-ones genealogy key.  Its offspring count uses only
the ``W`` uniform of its key and never its potential, so the number of
side branches hanging off each spine node is the same for every path.
Side branches of spine node ``k`` depend on ``z_k`` alone; branches of the
extra roots depend on nothing.  Counting each part separately gives the
decomposition ``N_P = 1 + sum_k N_P^(k) + N_P^(c)``.

Two spine laws are available.  ``"size-biased"`` (default) draws the spine
offspring count with probability proportional to ``a`` on ``1..q`` and, in
labelled output, places the spine uniformly inside its sibling block; this
is the exact conditional law of the forest given the marked path.
``"conditioned"`` draws it from the law conditioned on ``a >= 1`` and keeps
the spine first in its block.  The two agree when every ``q_k = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

from . import randomness as rnd
from .errors import ConditioningError, DomainError, MajorizationError, PopulationCapError
from .forest import DEFAULT_POPULATION_CAP, Forest, _labelled, advance, count_leaves
from .model import FeynmanKacModel, OffspringLaw

SPINE_LAWS = ("size-biased", "conditioned")


@lru_cache(maxsize=256)
def _spine_digests(P: int) -> tuple:
    return tuple(rnd.spine_digests(P))


def sizebiased_icdf(q: int, w: float) -> int:
    """Inverse CDF of ``P(a) = 2a / (q(q+1))`` on ``1..q``."""
    target = w * q * (q + 1)
    a = max(1, min(q, math.ceil((math.sqrt(1.0 + 4.0 * target) - 1.0) / 2.0)))
    while a > 1 and (a - 1) * a >= target:
        a -= 1
    while a < q and a * (a + 1) < target:
        a += 1
    return a


def spine_offspring(law: OffspringLaw, stream: rnd.KeyedStream, P: int, spine_law: str = "size-biased") -> tuple:
    """Entry ``k - 1`` is the number of children of spine node ``k`` (k < P)."""
    if spine_law not in SPINE_LAWS:
        raise DomainError(f"unknown spine law {spine_law!r}")
    w_salt = stream.salt("W")
    sd = _spine_digests(P)
    out = []
    for k in range(1, P):
        w = rnd.unit(w_salt, sd[k - 1])
        q = law.qs[k + 1]
        out.append(sizebiased_icdf(q, w) if spine_law == "size-biased" else 1 + int(w * q))
    return tuple(out)


def side_children(k: int, x, n_children: int, model: FeynmanKacModel, stream: rnd.KeyedStream, transition=None):
    """Digests and states of the non-spine children of spine node ``k`` at state ``x``."""
    trans = transition or model.transition
    v_salt = stream.salt("V")
    d = _spine_digests(model.horizon)[k - 1]
    digests = [rnd.child_digest(d, r) for r in range(2, n_children + 1)]
    return digests, [trans(x, rnd.unit(v_salt, c)) for c in digests]


def side_leaves(
    k: int,
    x,
    model: FeynmanKacModel,
    law: OffspringLaw,
    stream: rnd.KeyedStream,
    spine_counts: Sequence[int],
    potential: Callable | None = None,
    transition: Callable | None = None,
    cap: int = DEFAULT_POPULATION_CAP,
) -> int:
    """Time-P leaves descending from the side branches of spine node ``k`` at ``x``."""
    a = spine_counts[k - 1]
    if a <= 1:
        return 0
    if k == model.horizon - 1:
        return a - 1
    digests, states = side_children(k, x, a, model, stream, transition)
    return count_leaves(
        digests, states, k + 1, model, law, stream.salt("W"), stream.salt("V"), potential, transition, cap
    )


def extra_roots(model: FeynmanKacModel, stream: rnd.KeyedStream, n_roots: int):
    root_salt = stream.salt("root-V")
    digests = [rnd.key_digest(i) for i in range(2, n_roots + 1)]
    return digests, [model.initial(rnd.unit(root_salt, d)) for d in digests]


def common_leaves(
    model: FeynmanKacModel,
    law: OffspringLaw,
    stream: rnd.KeyedStream,
    n_roots: int = 1,
    potential: Callable | None = None,
    cap: int = DEFAULT_POPULATION_CAP,
) -> int:
    """Time-P leaves descending from the roots other than the spine root."""
    if n_roots <= 1:
        return 0
    digests, states = extra_roots(model, stream, n_roots)
    return count_leaves(digests, states, 1, model, law, stream.salt("W"), stream.salt("V"), potential, None, cap)


def _check_path(z: Sequence, model: FeynmanKacModel, potential: Callable) -> None:
    if len(z) != model.horizon:
        raise ConditioningError(f"path length {len(z)} != horizon {model.horizon}")
    for k in range(1, model.horizon):
        g = potential(k, z[k - 1])
        if not g > 0:
            raise ConditioningError(f"G_{k}(z_{k}) = {g}: path has zero target density")
        if g > model.bound(k) * (1 + 1e-12):
            raise DomainError(f"G_{k}(z_{k}) = {g} exceeds certified bound {model.bound(k)}")


@dataclass(frozen=True)
class ConditionalForest:
    """A conditional forest with its terminal-population decomposition.

    ``side_counts[k-1]`` is the number of time-P leaves whose closest spine
    ancestor is spine node ``k``; ``common`` counts leaves of the other
    roots.  ``generations`` (recorded builds only) lists canonical
    generations as ``(digests, states, parents, offspring)`` with the spine
    at index 0.
    """

    path: tuple
    n_final: int
    side_counts: tuple
    common: int
    spine_offspring: tuple
    spine_law: str = "size-biased"
    generations: tuple | None = None
    _stream: rnd.KeyedStream | None = field(default=None, repr=False, compare=False)

    def key_sets(self) -> list[dict]:
        """Per generation, a map from key digest to state (recorded builds)."""
        if self.generations is None:
            raise ValueError("forest was built without recording")
        return [dict(zip(g[0], g[1])) for g in self.generations]

    def labelled(self) -> Forest:
        """Labelled forest with uniform relabelling permutations."""
        if self.generations is None or self._stream is None:
            raise ValueError("forest was built without recording")
        stream = self._stream
        P = len(self.path)
        n1 = len(self.generations[0][0])
        rank_pos = None
        if self.spine_law == "size-biased":
            w_salt = stream.salt("W")
            sd = _spine_digests(P)

            def rank_pos(k, a):
                return int(rnd.unit(w_salt, sd[k - 2], 1) * a)

        return _labelled(
            P,
            self.generations,
            rnd.permutation_at(stream, 1, n1),
            lambda k, n: rnd.permutation_at(stream, k, n),
            [0] * P,
            rank_pos,
        )


def build_conditional(
    z: Sequence,
    model: FeynmanKacModel,
    law: OffspringLaw,
    stream: rnd.KeyedStream,
    potentials: Callable | None = None,
    *,
    n_roots: int = 1,
    spine_law: str = "size-biased",
    record: bool = False,
    cap: int = DEFAULT_POPULATION_CAP,
    _check_majorant: bool = False,
) -> ConditionalForest:
    """Build the conditional forest containing ``z`` from keyed randomness.

    ``potentials(k, x)`` replaces ``G_k`` for every non-spine reproduction
    (the spine's offspring law does not depend on the potential).
    """
    z = tuple(z)
    pot = potentials or model.potential
    if _check_majorant:
        base = model.potential

        def pot(k, x, _h=potentials):
            h, g = _h(k, x), base(k, x)
            if h < g:
                raise MajorizationError(f"H_{k}({x!r}) = {h} < G_{k} = {g}")
            return h

    _check_path(z, model, model.potential)
    P = model.horizon
    counts = spine_offspring(law, stream, P, spine_law)
    if not record:
        side = tuple(side_leaves(k, z[k - 1], model, law, stream, counts, pot, None, cap) for k in range(1, P))
        common = common_leaves(model, law, stream, n_roots, pot, cap)
        return ConditionalForest(z, 1 + sum(side) + common, side, common, counts, spine_law)
    return _build_recorded(z, model, law, stream, pot, n_roots, spine_law, counts, cap)


def _build_recorded(z, model, law, stream, pot, n_roots, spine_law, counts, cap):
    P = model.horizon
    w_salt, v_salt = stream.salt("W"), stream.salt("V")
    sd = _spine_digests(P)
    rd, rs = extra_roots(model, stream, n_roots)
    digests, states, labels = [sd[0]] + rd, [z[0]] + rs, [None] + [0] * len(rd)
    gens = [(tuple(digests), tuple(states), None, None)]
    for k in range(1, P):
        a = counts[k - 1]
        sc_d, sc_s = side_children(k, z[k - 1], a, model, stream)
        cd, cs, cp, offs = advance(digests[1:], states[1:], k, model, law, w_salt, v_salt, pot)
        new_d = [sd[k]] + sc_d + cd
        new_s = [z[k]] + sc_s + cs
        new_p = [0] * a + [p + 1 for p in cp]
        labels = [None] + [k] * (a - 1) + [labels[p + 1] for p in cp]
        if len(new_d) > cap:
            raise PopulationCapError(k + 1, len(new_d), cap)
        gens.append((tuple(new_d), tuple(new_s), tuple(new_p), tuple([a] + offs)))
        digests, states = new_d, new_s
    side = [0] * (P - 1)
    common = 0
    for lab in labels[1:]:
        if lab == 0:
            common += 1
        else:
            side[lab - 1] += 1
    return ConditionalForest(
        z, len(digests), tuple(side), common, counts, spine_law, tuple(gens), stream
    )


def build_majorized(
    z: Sequence,
    model: FeynmanKacModel,
    law: OffspringLaw,
    stream: rnd.KeyedStream,
    H: Callable,
    **kwargs,
) -> ConditionalForest:
    """Conditional forest under potentials ``H >= G`` (checked where evaluated)."""
    return build_conditional(z, model, law, stream, H, _check_majorant=True, **kwargs)


def descendant_counts(forest: ConditionalForest) -> tuple[int, tuple, int]:
    """``(N_P, (N_P^(k))_{k=1..P-1}, N_P^(c))``."""
    return forest.n_final, forest.side_counts, forest.common
