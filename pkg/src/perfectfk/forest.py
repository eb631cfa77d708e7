"""Branching forests: the unconditional proposal sampler and exact densities.

Two representations are used.  Samplers grow forests in *canonical* order:
particles of a generation are listed by parent, siblings by rank, and each
particle is addressed by the digest of its genealogy key.  A labelled
:class:`Forest` adds the uniform relabelling permutations and is what the
density evaluators consume.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

from . import randomness as rnd
from .errors import DomainError, PopulationCapError, StructuralError
from .model import FeynmanKacModel, OffspringLaw

DEFAULT_POPULATION_CAP = 10**6
_BOUND_SLACK = 1.0 + 1e-12


def advance(
    digests: list,
    states: list,
    k: int,
    model: FeynmanKacModel,
    law: OffspringLaw,
    w_salt: int,
    v_salt: int,
    potential: Callable | None = None,
    transition: Callable | None = None,
    states_needed: bool = True,
):
    """Move non-spine particles from time ``k`` to ``k + 1``.

    Returns ``(child_digests, child_states, child_parents, offspring)``;
    with ``states_needed=False`` children get no states (used for the last
    generation when only leaves are counted).
    """
    pot = potential or model.potential
    trans = transition or model.transition
    beta = law.betas[k + 1]
    q = law.qs[k + 1]
    limit = beta * _BOUND_SLACK
    unit, child = rnd.unit, rnd.child_digest
    cd, cs, cp, offspring = [], [], [], []
    for idx, (d, x) in enumerate(zip(digests, states)):
        g = pot(k, x)
        if not 0.0 <= g <= limit:
            raise DomainError(f"G_{k}({x!r}) = {g} outside [0, {beta}]: certified bound violated")
        w = unit(w_salt, d)
        if w <= 1.0 - g / beta:
            offspring.append(0)
            continue
        a = q - int(((1.0 - w) * q * beta) / g)
        offspring.append(a)
        for r in range(1, a + 1):
            c = child(d, r)
            cd.append(c)
            cp.append(idx)
            if states_needed:
                cs.append(trans(x, unit(v_salt, c)))
    return cd, cs, cp, offspring


def count_leaves(
    digests: list,
    states: list,
    k: int,
    model: FeynmanKacModel,
    law: OffspringLaw,
    w_salt: int,
    v_salt: int,
    potential: Callable | None = None,
    transition: Callable | None = None,
    cap: int = DEFAULT_POPULATION_CAP,
) -> int:
    """Number of time-P descendants of the given time-``k`` particles."""
    P = model.horizon
    while digests and k < P - 1:
        digests, states, _, _ = advance(
            digests, states, k, model, law, w_salt, v_salt, potential, transition
        )
        k += 1
        if len(digests) > cap:
            raise PopulationCapError(k, len(digests), cap)
    if not digests:
        return 0
    if k == P:
        return len(digests)
    _, _, _, offspring = advance(
        digests, states, k, model, law, w_salt, v_salt, potential, transition, states_needed=False
    )
    return sum(offspring)


@dataclass(frozen=True)
class Forest:
    """A labelled branching forest on times ``1..p'``.

    ``states[k-1]`` lists the particles of generation ``k`` in label order.
    ``offspring[k-2][i]`` is the number of children at generation ``k`` of
    particle ``i`` of generation ``k-1``; a dead forest carries one extra
    all-zero row for the extinction step.  ``perms[k-2][p]`` is the label of
    block position ``p`` at generation ``k`` (blocks follow parent labels).
    ``spine`` holds 0-based indices ``b_1..b_P`` when a path is marked.
    """

    horizon: int
    states: tuple
    offspring: tuple
    perms: tuple
    spine: tuple | None = None
    keys: tuple | None = None

    @property
    def sizes(self) -> tuple[int, ...]:
        sizes = tuple(len(s) for s in self.states)
        return sizes + (0,) if self.is_dead else sizes

    @property
    def survival_horizon(self) -> int:
        return len(self.states)

    @property
    def is_dead(self) -> bool:
        return len(self.states) < self.horizon

    @property
    def n_final(self) -> int:
        return 0 if self.is_dead else len(self.states[-1])

    def parents(self, k: int) -> tuple[int, ...]:
        """Parent label (generation ``k-1``) of each label at generation ``k``."""
        offs, perm = self.offspring[k - 2], self.perms[k - 2]
        out = [0] * len(perm)
        pos = 0
        for i, a in enumerate(offs):
            for _ in range(a):
                out[perm[pos]] = i
                pos += 1
        return tuple(out)

    def validate(self) -> None:
        P = self.horizon
        if not self.states or not self.states[0]:
            raise StructuralError("forest needs at least one root")
        if len(self.states) > P:
            raise StructuralError("more generations than the horizon")
        n_steps = len(self.states) - 1 + (1 if self.is_dead else 0)
        if len(self.offspring) != n_steps or len(self.perms) != len(self.states) - 1:
            raise StructuralError("offspring/permutation rows do not match generations")
        for k in range(2, len(self.states) + 1):
            offs = self.offspring[k - 2]
            if len(offs) != len(self.states[k - 2]):
                raise StructuralError(f"generation {k}: one offspring count per parent expected")
            if sum(offs) != len(self.states[k - 1]):
                raise StructuralError(f"generation {k}: N_k != sum of offspring counts")
            if sorted(self.perms[k - 2]) != list(range(len(self.states[k - 1]))):
                raise StructuralError(f"generation {k}: s_k is not a permutation")
        if self.is_dead and (len(self.offspring) == 0 or any(self.offspring[-1])):
            raise StructuralError("dead forest must end with an all-zero offspring row")
        if self.spine is not None:
            if self.is_dead or len(self.spine) != P:
                raise StructuralError("a spine needs a forest surviving to the horizon")
            if any(not 0 <= b < len(s) for b, s in zip(self.spine, self.states)):
                raise StructuralError("spine index outside its generation")
            for k in range(2, P + 1):
                if self.parents(k)[self.spine[k - 1]] != self.spine[k - 2]:
                    raise StructuralError(f"spine index at generation {k} is not a child of the spine")

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "sizes": list(self.sizes),
            "states": [list(s) for s in self.states],
            "offspring": [list(o) for o in self.offspring],
            "perms": [list(p) for p in self.perms],
            "spine": None if self.spine is None else list(self.spine),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "Forest":
        return cls(
            horizon=data["horizon"],
            states=tuple(tuple(s) for s in data["states"]),
            offspring=tuple(tuple(o) for o in data["offspring"]),
            perms=tuple(tuple(p) for p in data["perms"]),
            spine=None if data.get("spine") is None else tuple(data["spine"]),
        )

    def canonical(self) -> tuple:
        """Hashable summary, used to tabulate sampled forests."""
        return (self.states, self.offspring, self.perms, self.spine)


def extract_spine(forest: Forest) -> tuple:
    if forest.spine is None:
        raise StructuralError("forest has no spine")
    return tuple(forest.states[k][b] for k, b in enumerate(forest.spine))


@dataclass(frozen=True)
class Proposal:
    """Outcome of the unconditional sampler.

    ``dead_at`` is the first generation with no particle (``None`` when the
    forest survives).  ``path`` is the ancestral line of the picked leaf.
    """

    n_final: int
    path: tuple | None
    dead_at: int | None
    generations: tuple | None = None

    @property
    def survived(self) -> bool:
        return self.dead_at is None


def sample_proposal(
    model: FeynmanKacModel,
    law: OffspringLaw,
    stream: rnd.KeyedStream,
    n_roots: int = 1,
    cap: int = DEFAULT_POPULATION_CAP,
    keep_generations: bool = False,
) -> Proposal:
    """Grow the unconditional forest and mark a uniform time-P leaf.

    Uses only the ``proposal-*`` tags of ``stream``, so the result never
    depends on the current state of a chain.
    """
    P = model.horizon
    v_salt = stream.salt("proposal-V")
    w_salt = stream.salt("proposal-W")
    root_salt = stream.salt("proposal-root-V")
    digests = [rnd.key_digest(i) for i in range(1, n_roots + 1)]
    states = [model.initial(rnd.unit(root_salt, d)) for d in digests]
    gens = [(digests, states, None, None)]
    for k in range(1, P):
        cd, cs, cp, offs = advance(digests, states, k, model, law, w_salt, v_salt)
        if not cd:
            gens.append(([], [], [], offs))
            return Proposal(0, None, k + 1, tuple(gens) if keep_generations else None)
        if len(cd) > cap:
            raise PopulationCapError(k + 1, len(cd), cap)
        gens.append((cd, cs, cp, offs))
        digests, states = cd, cs
    n = len(digests)
    j = int(rnd.unit(stream.salt("proposal-pick"), rnd.key_digest(1)) * n)
    line = [j]
    for k in range(P - 1, 0, -1):
        j = gens[k][2][j]
        line.append(j)
    line.reverse()
    path = tuple(gens[k][1][line[k]] for k in range(P))
    return Proposal(n, path, None, (tuple(gens), tuple(line)) if keep_generations else None)


def _labelled(
    horizon: int,
    gens: Sequence,
    root_perm: Sequence[int],
    perm_for: Callable[[int, int], Sequence[int]],
    spine_canon: Sequence[int] | None,
    spine_rank_pos: Callable[[int, int], int] | None = None,
) -> Forest:
    """Relabel canonical generations into a :class:`Forest`.

    ``gens[k-1] = (digests, states, parents, offspring)`` in canonical order
    (parents index the previous canonical generation).  ``root_perm[c]`` is
    the label of canonical root ``c``; ``perm_for(k, n)`` gives ``s_k``.
    When ``spine_rank_pos`` is given, the spine child's position inside its
    block is moved to ``spine_rank_pos(k, a)`` (0-based) before ``s_k`` is
    applied; the other siblings keep their relative order.
    """
    lab_of = list(root_perm)
    n1 = len(lab_of)
    states = [[None] * n1]
    for c, lab in enumerate(lab_of):
        states[0][lab] = gens[0][1][c]
    keys = [[None] * n1]
    for c, lab in enumerate(lab_of):
        keys[0][lab] = gens[0][0][c]
    offspring_rows, perms = [], []
    spine_lab = [lab_of[spine_canon[0]]] if spine_canon is not None else None
    for k in range(2, len(gens) + 1):
        digests, cstates, cparents, coffs = gens[k - 1]
        n_prev = len(lab_of)
        # children of each canonical parent, in rank order
        children = [[] for _ in range(n_prev)]
        for c, p in enumerate(cparents):
            children[p].append(c)
        by_label = [None] * n_prev
        for c_par, lab in enumerate(lab_of):
            by_label[lab] = c_par
        offs = [coffs[by_label[i]] for i in range(n_prev)]
        offspring_rows.append(tuple(offs))
        n = len(digests)
        if n == 0:
            break
        order = []
        for i in range(n_prev):
            block = children[by_label[i]]
            if spine_canon is not None and spine_rank_pos is not None and by_label[i] == spine_canon[k - 2]:
                sc = spine_canon[k - 1]
                rest = [c for c in block if c != sc]
                pos = spine_rank_pos(k, len(block))
                block = rest[:pos] + [sc] + rest[pos:]
            order.extend(block)
        s_k = tuple(perm_for(k, n))
        new_lab = [0] * n
        for pos, c in enumerate(order):
            new_lab[c] = s_k[pos]
        st = [None] * n
        ky = [None] * n
        for c, lab in enumerate(new_lab):
            st[lab] = cstates[c]
            ky[lab] = digests[c]
        states.append(st)
        keys.append(ky)
        perms.append(s_k)
        lab_of = new_lab
        if spine_lab is not None:
            spine_lab.append(new_lab[spine_canon[k - 1]])
    return Forest(
        horizon=horizon,
        states=tuple(tuple(s) for s in states),
        offspring=tuple(offspring_rows),
        perms=tuple(perms),
        spine=None if spine_lab is None else tuple(spine_lab),
        keys=tuple(tuple(k) for k in keys),
    )


def proposal_forest(
    model: FeynmanKacModel,
    law: OffspringLaw,
    stream: rnd.KeyedStream,
    n_roots: int = 1,
    cap: int = DEFAULT_POPULATION_CAP,
) -> Forest:
    """Labelled version of :func:`sample_proposal` (permutations drawn).

    Dead forests carry no spine.  The marked leaf is the same particle as
    in the trajectory-only sampler.
    """
    prop = sample_proposal(model, law, stream, n_roots, cap, keep_generations=True)
    if prop.survived:
        gens, line = prop.generations
    else:
        gens, line = prop.generations, None
    tag = "proposal-permutation"
    root_perm = rnd.permutation_at(stream, 1, n_roots, tag)
    return _labelled(
        model.horizon,
        gens,
        root_perm,
        lambda k, n: rnd.permutation_at(stream, k, n, tag),
        line,
    )


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _log_f(law: OffspringLaw, k: int, g: float, a: int) -> float:
    beta, q = law.betas[k], law.qs[k]
    if not 0.0 <= g <= beta * _BOUND_SLACK:
        raise DomainError(f"potential {g} outside [0, {beta}]")
    r = min(g / beta, 1.0)
    if a == 0:
        return _log(1.0 - r)
    if a > q:
        return -math.inf
    return _log(r / q)


def _log_f_hat(law: OffspringLaw, k: int, a: int) -> float:
    q = law.qs[k]
    if a < 1:
        raise StructuralError("spine offspring count must be >= 1")
    return -math.log(q) if a <= q else -math.inf


def density_q0(model: FeynmanKacModel, law: OffspringLaw, forest: Forest) -> float:
    """Log-density of the unconditional forest (permutations included)."""
    forest.validate()
    lp = sum(model.log_initial_density(x) for x in forest.states[0])
    for k in range(2, len(forest.offspring) + 2):
        prev = forest.states[k - 2]
        offs = forest.offspring[k - 2]
        for x, a in zip(prev, offs):
            lp += _log_f(law, k, model.potential(k - 1, x), a)
        if k - 1 >= len(forest.states):
            break  # extinction step: no children, 1/0! = 1
        cur = forest.states[k - 1]
        lp -= math.lgamma(len(cur) + 1)
        for j, p in enumerate(forest.parents(k)):
            lp += model.log_transition_density(prev[p], cur[j])
    return lp


def density_q(model: FeynmanKacModel, law: OffspringLaw, forest: Forest) -> float:
    """Log-density of the proposal (forest plus marked leaf); ``-inf`` if dead."""
    if forest.is_dead:
        return -math.inf
    if forest.spine is None:
        raise StructuralError("proposal density needs a marked leaf")
    return density_q0(model, law, forest) - math.log(forest.n_final)


def density_pi_hat(model: FeynmanKacModel, law: OffspringLaw, forest: Forest, log_z: float) -> float:
    """Log of the conditional-forest target, written term by term.

    The spine index is free inside its block, so this is the unnormalised
    form; its total mass is ``prod_k (q_k + 1) / 2`` (see
    :func:`log_pi_hat_mass`).
    """
    forest.validate()
    if forest.spine is None:
        raise StructuralError("target density needs a spine")
    P = model.horizon
    b = forest.spine
    path = extract_spine(forest)
    lp = model.log_path_weight(path) - log_z
    n1 = len(forest.states[0])
    lp -= math.log(n1)
    for i, x in enumerate(forest.states[0]):
        if i != b[0]:
            lp += model.log_initial_density(x)
    for k in range(2, P + 1):
        prev = forest.states[k - 2]
        offs = forest.offspring[k - 2]
        for i, (x, a) in enumerate(zip(prev, offs)):
            if i == b[k - 2]:
                lp += _log_f_hat(law, k, a)
            else:
                lp += _log_f(law, k, model.potential(k - 1, x), a)
        cur = forest.states[k - 1]
        lp -= math.lgamma(len(cur) + 1)
        for j, p in enumerate(forest.parents(k)):
            if j != b[k - 1]:
                lp += model.log_transition_density(prev[p], cur[j])
    return lp


def log_pi_hat_mass(law: OffspringLaw) -> float:
    """log of the total mass of :func:`density_pi_hat` over labelled forests."""
    return sum(math.log((law.qs[k] + 1) / 2.0) for k in range(2, law.horizon + 1))
