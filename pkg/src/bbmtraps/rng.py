"""Named random substreams derived from a single 64-bit seed.

Every source of randomness in the package hangs off one user seed through
named substream keys, so replicate i of an experiment is reproducible
regardless of worker count, chunking, or evaluation order.  Layout:

    (seed, i)               replicate i
    (seed, i, FIELD)        trap-field sampling
    (seed, i, TREE)         branching events and Brownian increments
    (seed, i, BRIDGE)       entropy for bridge-crossing tests
    (seed, i, LOOKAHEAD)    post-horizon extinction lookahead
    (seed, i, SELECT)       statistic-level selections (e.g. line choice)

Bridge randomness is further keyed per (trap center, particle, segment)
through ``keyed_uniforms`` so collision outcomes for one center do not
depend on which other centers exist; that is what makes coupled-field
comparisons pathwise monotone.
"""
from __future__ import annotations

import numpy as np

FIELD = 0
TREE = 1
BRIDGE = 2
LOOKAHEAD = 3
SELECT = 4

_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_K2 = np.uint64(0xD6E8FEB86659FD93)
_K3 = np.uint64(0xA24BAED4963EE407)


_MASK = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer; full-avalanche 64-bit mixer (numpy arrays)."""
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _mix64_int(z: int) -> int:
    """Same finalizer on plain ints (much faster for scalar keys)."""
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_key(seed: int, *key: int) -> int:
    """64-bit key for the named substream ``(seed, *key)``.

    Finalizer chain over the length-prefixed tuple, so keys of different
    arity cannot collide by construction of the chain.
    """
    z = _mix64_int(((seed & _MASK) + 0x9E3779B97F4A7C15 * len(key)) & _MASK)
    for k in key:
        z = _mix64_int((z + 0xD6E8FEB86659FD93 * (int(k) & _MASK)) & _MASK)
    return z


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the named substream ``(seed, *key)``.

    PCG64 seeded by the stream key: distinct named substreams get distinct,
    well-mixed 64-bit seeds, and construction stays cheap enough to build a
    few per replicate.
    """
    return np.random.Generator(np.random.PCG64(stream_key(seed, *key)))


def entropy64(rng: np.random.Generator) -> int:
    """Draw one 64-bit integer to re-root derived substreams."""
    return int(rng.integers(0, 2**63 - 1, dtype=np.int64))


def keyed_uniforms(entropy: int, a, b, c) -> np.ndarray:
    """Uniforms in [0, 1) addressed by integer triples (a, b, c).

    splitmix64 finalizer chain over (entropy, a, b, c): every triple owns
    one fixed uniform, independent of evaluation order and of what other
    triples are ever queried.  Collision tests use this so the outcome
    against one trap center never depends on which other centers exist.
    """
    with np.errstate(over="ignore"):
        z = np.uint64(entropy) + _GOLDEN * np.asarray(a, dtype=np.uint64)
        z = _mix64(z)
        z = _mix64(z + _K2 * np.asarray(b, dtype=np.uint64))
        z = _mix64(z + _K3 * np.asarray(c, dtype=np.uint64))
    return (z >> np.uint64(11)) * (1.0 / (1 << 53))
