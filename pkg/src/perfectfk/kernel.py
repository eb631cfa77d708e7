"""The path-space Metropolis kernel and its backward-coupling sampler.

One transition from a path ``z`` using stream ``U``:

1. build the conditional forest containing ``z`` (``V``/``W`` tags);
2. grow an unconditional proposal forest and mark a uniform leaf
   (``proposal-*`` tags, independent of ``z``);
3. accept the marked leaf's ancestral path when
   ``V <= min(1, N_bar / N)`` with ``V`` drawn from the ``accept`` tag.

Because the proposal and ``V`` do not depend on ``z``, a state-uniform bound
``M(U) >= N(z, U)`` makes the event ``V <= N_bar / M`` force acceptance from
every start path.  Scanning backwards for the first such step and then
running forward gives an exact draw.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

from . import randomness as rnd
from .conditional import build_conditional
from .errors import DepthCapError, StructuralError
from .forest import DEFAULT_POPULATION_CAP, Proposal, sample_proposal
from .model import FeynmanKacModel, OffspringLaw

logger = logging.getLogger(__name__)

DEFAULT_DEPTH_CAP = 10_000


@dataclass(frozen=True)
class KernelSetup:
    """Everything a transition needs besides the path and the stream."""

    model: FeynmanKacModel
    law: OffspringLaw
    n_roots: int = 1
    spine_law: str = "size-biased"
    population_cap: int = DEFAULT_POPULATION_CAP

    def conditional_size(self, z: Sequence, stream: rnd.KeyedStream) -> int:
        return build_conditional(
            z, self.model, self.law, stream,
            n_roots=self.n_roots, spine_law=self.spine_law, cap=self.population_cap,
        ).n_final

    def proposal(self, stream: rnd.KeyedStream) -> Proposal:
        return sample_proposal(self.model, self.law, stream, self.n_roots, self.population_cap)


def acceptance_ratio(n_conditional: int, n_proposal: int) -> float:
    if n_conditional < 1:
        raise StructuralError("a conditional forest always holds its spine leaf")
    return min(1.0, n_proposal / n_conditional)


def accept_uniform(stream: rnd.KeyedStream) -> float:
    return stream.uniform_at("accept", 1)


@dataclass(frozen=True)
class TransitionRecord:
    input_path: tuple
    n_conditional: int
    n_proposal: int
    v: float
    alpha: float
    output_path: tuple
    accepted: bool


def metropolis_step(
    z: Sequence, stream: rnd.KeyedStream, setup: KernelSetup, proposal: Proposal | None = None
) -> TransitionRecord:
    z = tuple(z)
    n_cond = setup.conditional_size(z, stream)
    prop = proposal if proposal is not None else setup.proposal(stream)
    v = accept_uniform(stream)
    alpha = acceptance_ratio(n_cond, prop.n_final)
    accepted = prop.survived and v <= alpha
    return TransitionRecord(z, n_cond, prop.n_final, v, alpha, prop.path if accepted else z, accepted)


def mcmc_chain(z0: Sequence, n_steps: int, seed: int, setup: KernelSetup):
    """Plain forward chain; step ``i`` uses stream index ``i``."""
    paths = [tuple(z0)]
    accepted = 0
    for i in range(n_steps):
        rec = metropolis_step(paths[-1], rnd.KeyedStream(seed, i), setup)
        accepted += rec.accepted
        paths.append(rec.output_path)
    return paths, (accepted / n_steps if n_steps else float("nan"))


@dataclass(frozen=True)
class DepthRecord:
    depth: int
    n_proposal: int
    bound: int | None
    bound_complete: bool
    v: float


@dataclass
class CftpResult:
    seed: int
    path: tuple
    T: int
    records: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "T": self.T,
            "path": list(self.path),
            "records": [asdict(r) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def cftp_sample(
    seed: int,
    setup: KernelSetup,
    bound_provider,
    depth_cap: int = DEFAULT_DEPTH_CAP,
    full_bounds: bool = False,
    stream_factory: Callable[[int, int], rnd.KeyedStream] = rnd.KeyedStream,
) -> CftpResult:
    """Exact draw from the path law by coupling from the past.

    ``bound_provider.certificate(stream, limit)`` must return a certificate
    whose ``m`` bounds the conditional terminal population for every
    reachable path; with ``limit`` set it may stop early once ``m`` exceeds
    the limit (reporting ``complete=False``), which cannot change the
    stopping decision.  ``full_bounds`` forces complete certificates.
    """
    records = []
    proposals = []
    max_ratio = 0.0
    depth = 0
    while True:
        if depth >= depth_cap:
            raise DepthCapError(depth_cap, max_ratio)
        stream = stream_factory(seed, depth)
        prop = setup.proposal(stream)
        v = accept_uniform(stream)
        proposals.append(prop)
        bound, complete, stop = None, False, False
        if prop.n_final > 0 or full_bounds:
            limit = None if full_bounds or prop.n_final == 0 else prop.n_final / v
            cert = bound_provider.certificate(stream, limit=limit)
            bound, complete = cert.m, cert.complete
            max_ratio = max(max_ratio, prop.n_final / bound)
            stop = complete and prop.n_final > 0 and v <= prop.n_final / bound
        records.append(DepthRecord(depth, prop.n_final, bound, complete, v))
        if stop:
            break
        depth += 1
    path = forward_pass(proposals[depth].path, seed, depth, setup, proposals, stream_factory)
    return CftpResult(seed, path, depth, records)


def forward_pass(
    z: Sequence,
    seed: int,
    T: int,
    setup: KernelSetup,
    proposals: Sequence[Proposal] | None = None,
    stream_factory: Callable[[int, int], rnd.KeyedStream] = rnd.KeyedStream,
) -> tuple:
    """Apply ``F_{U_{-(T-1)}}, ..., F_{U_0}`` to ``z`` (the depth-``T`` output)."""
    z = tuple(z)
    for i in range(T - 1, -1, -1):
        stream = stream_factory(seed, i)
        prop = proposals[i] if proposals is not None else None
        z = metropolis_step(z, stream, setup, prop).output_path
    return z


def coalesced_output(z: Sequence, seed: int, T: int, setup: KernelSetup, stream_factory=rnd.KeyedStream) -> tuple:
    """``F_{U_0} o ... o F_{U_{-T}}(z)`` for an arbitrary start ``z``."""
    first = metropolis_step(tuple(z), stream_factory(seed, T), setup)
    return forward_pass(first.output_path, seed, T, setup, None, stream_factory)
