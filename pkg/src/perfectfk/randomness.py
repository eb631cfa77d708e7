"""Counter-based keyed random streams.

Every uniform used by a forest construction is a pure function of
``(seed, index, tag, key)``: the seed and backward-step index select a
stream, the tag separates independent roles (state moves, offspring draws,
acceptance, ...) and the key is the genealogy address of the particle that
consumes the uniform.  Nothing here holds generator state, so values never
depend on the order in which they are requested.

The hash is the SplitMix64 finalizer applied to 64-bit words; the float
mapping takes the top 53 bits and centres them in their cell, so every
uniform lies strictly inside (0, 1).  Both are fixed, which makes outputs
bit-identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import DomainError

MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_RANK_MULT = 0xD1B54A32D192ED03
_SUB_MULT = 0xCA5A826395121157
_INDEX_MULT = 0xA0761D6478BD642F
_ROOT_DIGEST = 0x6A09E667F3BCC909
_UNIT = 2.0**-53

# Tags name the role of a uniform.  Values are arbitrary fixed 64-bit words.
TAGS = {
    "V": 0x243F6A8885A308D3,
    "W": 0x13198A2E03707344,
    "root-V": 0xA4093822299F31D0,
    "permutation": 0x082EFA98EC4E6C89,
    "proposal-V": 0x452821E638D01377,
    "proposal-W": 0xBE5466CF34E90C6C,
    "proposal-root-V": 0xC0AC29B7C97C50DD,
    "proposal-pick": 0x3F84D5B5B5470917,
    "proposal-permutation": 0x9216D5D98979FB1B,
    "accept": 0xD1310BA698DFB5AC,
}


def mix64(z: int) -> int:
    """SplitMix64 output function: a bijection of 64-bit words."""
    z = (z + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def child_digest(parent: int, rank: int) -> int:
    """Digest of the key obtained by appending ``rank`` to the parent key."""
    return mix64(parent ^ ((rank * _RANK_MULT) & MASK64))


def key_digest(key: Sequence[int] | int) -> int:
    """Digest of a genealogy key; a bare integer ``i`` means the key ``(i,)``."""
    if isinstance(key, int):
        key = (key,)
    if len(key) == 0:
        raise DomainError("genealogy keys are non-empty")
    d = _ROOT_DIGEST
    for r in key:
        if r < 1 or r >= 2**32:
            raise DomainError(f"key elements must be in [1, 2**32), got {r}")
        d = child_digest(d, r)
    return d


def spine_digests(length: int) -> list[int]:
    """Digests of the all-ones keys of lengths 1..length (index 0 is length 1)."""
    out = []
    d = _ROOT_DIGEST
    for _ in range(length):
        d = child_digest(d, 1)
        out.append(d)
    return out


def unit(salt: int, digest: int, sub: int = 0) -> float:
    """Map a (salt, digest, sub-index) triple to a float in (0, 1)."""
    h = mix64(((salt ^ digest) + sub * _SUB_MULT) & MASK64)
    return ((h >> 11) + 0.5) * _UNIT


@dataclass(frozen=True)
class KeyedStream:
    """The randomness ``U_{-index}`` of one backward step.

    ``seed`` is the global 64-bit seed of a replicate, ``index`` the
    backward step (0 for the most recent step).
    """

    seed: int
    index: int = 0
    _salts: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.index < 0:
            raise DomainError("stream index must be >= 0")
        base = mix64(mix64(self.seed & MASK64) ^ ((self.index * _INDEX_MULT) & MASK64))
        object.__setattr__(
            self, "_salts", {tag: mix64(base ^ word) for tag, word in TAGS.items()}
        )

    def salt(self, tag: str) -> int:
        try:
            return self._salts[tag]
        except KeyError:
            raise DomainError(f"unknown tag {tag!r}") from None

    def uniform_at(self, tag: str, key: Sequence[int] | int, sub: int = 0) -> float:
        return unit(self.salt(tag), key_digest(key), sub)

    def transition_uniforms(self, key: Sequence[int] | int, n: int, tag: str = "V") -> list[float]:
        """First ``n`` uniforms of the lazily extended sequence attached to ``key``."""
        salt, d = self.salt(tag), key_digest(key)
        return [unit(salt, d, j) for j in range(n)]

    def permutation_at(self, generation: int, size: int, tag: str = "permutation") -> tuple[int, ...]:
        return permutation_at(self, generation, size, tag)


def uniform_at(stream: KeyedStream, tag: str, key: Sequence[int] | int, sub: int = 0) -> float:
    return stream.uniform_at(tag, key, sub)


def transition_uniforms(stream: KeyedStream, key: Sequence[int] | int, n: int = 1) -> list[float]:
    return stream.transition_uniforms(key, n)


def permutation_at(
    stream: KeyedStream, generation: int, size: int, tag: str = "permutation"
) -> tuple[int, ...]:
    """Uniform permutation of ``range(size)`` addressed by ``(generation, size)``.

    Fisher-Yates driven by keyed uniforms.  ``perm[p]`` is the image of ``p``.
    """
    if size < 1:
        raise DomainError("permutations of an empty population are never drawn")
    salt = stream.salt(tag)
    d = key_digest((generation, size))
    perm = list(range(size))
    for j in range(size - 1, 0, -1):
        r = int(unit(salt, d, j) * (j + 1))
        perm[j], perm[r] = perm[r], perm[j]
    return tuple(perm)
