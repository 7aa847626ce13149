"""Counter-based random streams.

Every random quantity in a run is a pure function of
``(seed, agent, index, stream, counter)``, hashed with the splitmix64
finalizer. Draws therefore do not depend on evaluation order, so a batch of
independent runs evaluated together is bit-identical to running them one at a
time.
"""

import numpy as np

ELL = 1
DURATION = 2
DELAY = 3
OFFSET = 4
COIN = 5
TIEBREAK = 6
CHURN = 7
GRAPH = 8

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TO_UNIT = 2.0 ** -53
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _u64(x):
    if isinstance(x, (int, np.integer)):
        return np.array([int(x) & _MASK64], dtype=np.uint64)
    a = np.asarray(x)
    if a.dtype == np.uint64:
        return a
    return a.astype(np.int64).astype(np.uint64)


def hash_words(seed, agent, index, stream, counter=0):
    """Return uint64 words for broadcastable key arrays."""
    with np.errstate(over="ignore"):
        h = _mix(_u64(seed))
        h = _mix(h ^ _u64(agent))
        h = _mix(h ^ _u64(index))
        h = _mix(h ^ _u64(stream))
        h = _mix(h ^ _u64(counter))
    return h


def uniforms(seed, agent, index, stream, counter=0):
    """Uniform doubles in [0, 1) with 53 random bits."""
    return (hash_words(seed, agent, index, stream, counter) >> _S11).astype(np.float64) * _TO_UNIT


def integers(seed, agent, index, stream, low, high, counter=0):
    """Uniform integers in the closed range [low, high]."""
    u = uniforms(seed, agent, index, stream, counter)
    return low + np.floor(u * (high - low + 1)).astype(np.int64)


def geometric(seed, agent, index, p, stream=ELL):
    """Number of flips up to and including the first 0.

    Flip ``k`` of key ``(seed, agent, index)`` is 1 iff its uniform falls
    below ``p``. Only keys still flipping are hashed at each step.
    """
    seed, agent, index = np.broadcast_arrays(_u64(seed), _u64(agent), _u64(index))
    shape = seed.shape
    seed, agent, index = seed.ravel(), agent.ravel(), index.ravel()
    ell = np.ones(seed.size, dtype=np.int64)
    live = np.arange(seed.size)
    k = 0
    while live.size:
        u = uniforms(seed[live], agent[live], index[live], stream, k)
        live = live[u < p]
        ell[live] += 1
        k += 1
    return ell.reshape(shape)


class FlipStream:
    """Scalar view of one key's flip sequence; ``flip(p)`` consumes one flip."""

    def __init__(self, seed, agent=0, index=0, stream=ELL):
        self.key = (seed, agent, index, stream)
        self.count = 0

    def flip(self, p):
        seed, agent, index, stream = self.key
        u = uniforms(seed, agent, index, stream, self.count)[0]
        self.count += 1
        return int(u < p)
