"""The coin-flipping competition behind every protocol round.

``d`` agents each flip a p-biased coin until the first 0; the number of
flips is the agent's step count (its ell). Agent 0 *wins* when its step count
strictly exceeds everybody else's. Two quantities matter:

* ``y_d``: probability that agent 0 wins outright, bounded below by
  ``2p / ((1 + p) d)``;
* ``x_d``: probability that agent 0 holds the largest of ``d`` infinite
  p-biased bit strings, which is exactly ``1/d`` by symmetry.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product

import numpy as np

from . import _rng
from .protocol import ConfigError, sample_ell


@dataclass(frozen=True)
class CompetitionOutcome:
    steps: tuple
    winner: int = None

    @property
    def tie(self):
        return self.winner is None


def _check(d, p=0.5):
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ConfigError(f"need at least one agent, got d={d!r}")
    if not 0.0 < p < 1.0:
        raise ConfigError(f"flip probability must lie in (0, 1), got {p!r}")


def outcome(steps):
    """Wrap explicit step counts; the winner is the index of a unique maximum."""
    steps = tuple(int(s) for s in steps)
    top = max(steps)
    winner = steps.index(top) if steps.count(top) == 1 else None
    return CompetitionOutcome(steps, winner)


def run_competition(d, p=0.5, rng=None):
    """One competition; ``rng`` is anything with ``flip(p)`` or a numpy Generator."""
    _check(d, p)
    if rng is None:
        rng = np.random.default_rng()
    return outcome(sample_ell(rng, p) for _ in range(d))


def y_lower_bound(d, p=0.5):
    _check(d, p)
    return 2 * p / ((1 + p) * d)


def alpha(p):
    return 2 * p / (1 + p)


# --- Monte Carlo -----------------------------------------------------------


@dataclass
class CoinEstimate:
    d: int
    p: float
    trials: int
    y_hat: float
    y_se: float
    x_hat: float
    x_se: float
    bound: float
    unresolved: int = 0

    @property
    def y_ok(self):
        return self.y_hat >= self.bound - 3 * self.y_se

    @property
    def x_ok(self):
        return abs(self.x_hat - 1 / self.d) <= 3 * self.x_se


def _se(mean, n):
    return math.sqrt(max(mean * (1 - mean), 0.0) / n)


def _strict_wins(steps):
    """``wins[:, d-1]``: agent 0 strictly beats agents ``1..d-1``."""
    trials, dmax = steps.shape
    best_other = np.maximum.accumulate(steps[:, 1:], axis=1) if dmax > 1 else np.zeros((trials, 0), np.int64)
    wins = np.ones((trials, dmax), dtype=bool)
    wins[:, 1:] = steps[:, :1] > best_other
    return wins


def _string_wins(seed, t, dmax, p, cap, chunk=8):
    """Agent 0's string is lexicographically larger than each of agents ``1..j``.

    Bits are drawn in chunks of positions until every pair has differed; a
    pair still tied after ``cap`` bits is recorded as unresolved (a loss).
    """
    trials = t.size
    t = t[:, None]
    beat = np.zeros((trials, dmax), dtype=bool)
    beat[:, 0] = True
    unresolved = np.zeros((trials, dmax), dtype=bool)
    if dmax == 1:
        return beat, unresolved
    pending = np.ones((trials, dmax - 1), dtype=bool)
    agents = np.arange(dmax, dtype=np.int64)
    start = 0
    while pending.any() and start < cap:
        rows = np.flatnonzero(pending.any(axis=1))
        width = min(chunk, cap - start)
        k = np.arange(start, start + width, dtype=np.int64)
        # bits[row, agent, position]
        bits = _rng.uniforms(seed, t[rows][:, :, None] * dmax + agents[None, :, None], k[None, None, :],
                             _rng.TIEBREAK) < p
        differ = bits[:, 1:, :] != bits[:, :1, :]
        has = differ.any(axis=2)
        first = differ.argmax(axis=2)
        own = np.take_along_axis(bits[:, 0, :], first, axis=1)
        live = pending[rows]
        settle = live & has
        sub = beat[rows, 1:]
        sub[settle] = own[settle]
        beat[rows, 1:] = sub
        live[settle] = False
        pending[rows] = live
        start += width
    unresolved[:, 1:] = pending
    return beat, unresolved


def estimate_coin_bounds(d_values, p=0.5, trials=100_000, seed=0, cap=10_000, chunk=50_000):
    """Estimate ``y_d`` and ``x_d`` for every ``d`` in ``d_values`` at bias ``p``.

    All values of ``d`` share the same draws: trial ``t`` uses agents
    ``0..d-1`` of one population of ``max(d_values)`` agents.
    """
    d_values = sorted({int(d) for d in np.atleast_1d(d_values)})
    for d in d_values:
        _check(d, p)
    if trials < 1:
        raise ConfigError("need at least one trial")
    dmax = d_values[-1]
    y_wins = np.zeros(dmax, dtype=np.int64)
    x_wins = np.zeros(dmax, dtype=np.int64)
    unres = np.zeros(dmax, dtype=np.int64)
    for lo in range(0, trials, chunk):
        n = min(chunk, trials - lo)
        t = np.arange(lo, lo + n, dtype=np.int64)
        steps = _rng.geometric(seed, t[:, None] * dmax + np.arange(dmax)[None, :], 0, p, stream=_rng.COIN)
        y_wins += _strict_wins(steps).sum(axis=0)
        beat, pending = _string_wins(seed, t, dmax, p, cap)
        beat_all = np.logical_and.accumulate(beat, axis=1)
        x_wins += beat_all.sum(axis=0)
        unres += np.logical_or.accumulate(pending, axis=1).sum(axis=0)
    out = []
    for d in d_values:
        y = y_wins[d - 1] / trials
        x = x_wins[d - 1] / trials
        out.append(CoinEstimate(d, p, trials, y, _se(y, trials), x, _se(x, trials), y_lower_bound(d, p),
                                int(unres[d - 1])))
    return out


# --- exact evaluation over weak orderings --------------------------------------


@lru_cache(maxsize=None)
def weak_orderings(k):
    """All weak orderings of ``k`` items as tuples of blocks, lowest block first."""
    if k == 0:
        return ((),)
    out = []
    for ranks in product(range(k), repeat=k):
        used = sorted(set(ranks))
        if used != list(range(len(used))):
            continue
        out.append(tuple(tuple(i for i in range(k) if ranks[i] == b) for b in used))
    return tuple(out)


def ordering_probability(sizes, p):
    """Exact probability that i.i.d. geometric values fall into a given weak ordering.

    ``sizes`` lists the block sizes from the smallest value upwards; every
    block shares one value and values strictly increase between blocks.
    ``p`` should be a :class:`fractions.Fraction` for exact arithmetic.
    """
    p = Fraction(p)
    k = sum(sizes)
    prob = (1 - p) ** k
    for j, b in enumerate(sizes):
        prob *= p ** (b * j)
    tail = k
    for b in sizes:
        prob /= 1 - p ** tail
        tail -= b
    return prob


def exact_win_probability(d, p):
    """Exact ``y_d``: total probability of the orderings where agent 0 is alone on top."""
    p = Fraction(p)
    _check(d, float(p))
    total = Fraction(0)
    for blocks in weak_orderings(d):
        if blocks[-1] == (0,):
            total += ordering_probability([len(b) for b in blocks], p)
    return total


def capped_win_probability(d, p, cap):
    """Enumerate every step tuple with all values ``<= cap``.

    Returns ``(win_mass, missing_mass)``: the exact probability of the
    enumerated winning tuples and the probability of the tuples left out, so
    the true ``y_d`` lies in ``[win_mass, win_mass + missing_mass]``.
    """
    p = Fraction(p)
    pmf = [(1 - p) * p ** (k - 1) for k in range(1, cap + 1)]
    win = Fraction(0)
    seen = Fraction(0)
    for combo in product(range(cap), repeat=d):
        w = Fraction(1)
        for c in combo:
            w *= pmf[c]
        seen += w
        if d == 1 or combo[0] > max(combo[1:]):
            win += w
    return win, 1 - seen
