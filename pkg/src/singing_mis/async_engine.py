"""Event-driven asynchronous execution with per-agent rounds and delays.

Time is measured in integer ticks. Agent ``v``'s rounds tile time from its
start offset; round ``(v, i)`` occupies ``[start, end)``. A note set sung in
``(u, i)`` towards neighbour ``v`` with delay ``d`` is audible at ``v`` over
``[start_u + d, end_u + d]``. Round ``(v, j)`` listens over
``(start_v + delta_max, end_v]``: the first ``delta_max`` ticks are a guard
period during which the tail of the neighbours' previous rounds drains.
"""

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import _rng
from ._topology import Topology
from .network import check_states
from .protocol import IN, OUT, UN, ConfigError, ProtocolVariant, check_pairing, default_hearing
from .protocol import heard_flags, transition_array
from .sync_engine import default_round_budget


@dataclass(frozen=True)
class TimingParams:
    t_min: int
    t_max: int
    delta_max: int

    def __post_init__(self):
        for name in ("t_min", "t_max", "delta_max"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer number of ticks, got {v!r}")
        if 2 * self.delta_max > self.t_min:
            raise ConfigError(f"timing requires 2*delta_max <= t_min, got delta_max={self.delta_max}, t_min={self.t_min}")
        if self.t_min > self.t_max:
            raise ConfigError(f"t_min={self.t_min} exceeds t_max={self.t_max}")

    @property
    def history(self):
        """Ring-buffer depth that covers every round still audible to a listener."""
        return math.ceil(self.t_max / self.t_min) + 2


@dataclass(frozen=True)
class Fixed:
    value: int


@dataclass(frozen=True)
class Uniform:
    pass


@dataclass(frozen=True)
class Scripted:
    """Explicit values.

    Durations: ``{agent: [d0, d1, ...]}`` (the last value repeats).
    Delays: ``{(u, i, v): d}``. Offsets: ``{agent: t}``. Missing keys fall
    back to ``default`` (an error when ``default`` is None).
    """

    values: dict
    default: int = None


@dataclass(frozen=True)
class SchedulePolicy:
    duration: object = field(default_factory=Uniform)
    delay: object = field(default_factory=Uniform)
    offset: object = field(default_factory=lambda: Fixed(0))

    def validate(self, params):
        d = self.duration
        if isinstance(d, Fixed) and not params.t_min <= d.value <= params.t_max:
            raise ConfigError(f"fixed duration {d.value} outside [{params.t_min}, {params.t_max}]")
        if isinstance(self.delay, Fixed) and not 1 <= self.delay.value <= params.delta_max:
            raise ConfigError(f"fixed delay {self.delay.value} outside [1, {params.delta_max}]")
        if isinstance(self.offset, Fixed) and self.offset.value < 0:
            raise ConfigError("start offsets must be >= 0")


def synchronous_policy(params, duration=None, delay=None):
    """Common start, fixed durations and fixed delays."""
    return SchedulePolicy(Fixed(duration or params.t_min), Fixed(delay or params.delta_max), Fixed(0))


# --- schedule draws (shared by the engine and trace queries) ---------------


def _scripted(policy, keys, what):
    out = np.empty(len(keys), dtype=np.int64)
    for n, key in enumerate(keys):
        v = policy.values.get(key, policy.default)
        if v is None:
            raise ConfigError(f"scripted {what} missing for {key}")
        out[n] = v
    return out


def draw_durations(policy, params, seed, agent, idx):
    d = policy.duration
    if isinstance(d, Fixed):
        out = np.full(np.shape(agent), d.value, dtype=np.int64)
    elif isinstance(d, Uniform):
        out = _rng.integers(seed, agent, idx, _rng.DURATION, params.t_min, params.t_max)
    else:
        out = np.empty(len(agent), dtype=np.int64)
        for n, (a, i) in enumerate(zip(np.asarray(agent).tolist(), np.asarray(idx).tolist())):
            seq = d.values.get(a)
            if not seq:
                if d.default is None:
                    raise ConfigError(f"scripted durations missing for agent {a}")
                out[n] = d.default
            else:
                out[n] = seq[min(i, len(seq) - 1)]
    if ((out < params.t_min) | (out > params.t_max)).any():
        raise ConfigError(f"round duration outside [{params.t_min}, {params.t_max}]")
    return out


def draw_delays(policy, params, seed, u, idx, v):
    d = policy.delay
    if isinstance(d, Fixed):
        out = np.full(np.shape(u), d.value, dtype=np.int64)
    elif isinstance(d, Uniform):
        out = _rng.integers(seed, u, idx, _rng.DELAY, 1, params.delta_max, counter=v)
    else:
        keys = list(zip(np.asarray(u).tolist(), np.asarray(idx).tolist(), np.asarray(v).tolist()))
        out = _scripted(d, keys, "delay")
    if ((out < 1) | (out > params.delta_max)).any():
        raise ConfigError(f"transmission delay outside [1, {params.delta_max}]")
    return out


def draw_offsets(policy, params, seed, agent):
    d = policy.offset
    if isinstance(d, Fixed):
        return np.full(np.shape(agent), d.value, dtype=np.int64)
    if isinstance(d, Uniform):
        return _rng.integers(seed, agent, 0, _rng.OFFSET, 0, params.t_max - 1)
    d = Scripted(d.values, 0 if d.default is None else d.default)
    return _scripted(d, np.asarray(agent).tolist(), "offset")


def ell_schedule(table, default=None):
    """Forced-ell hook from ``{(agent, round_index): ell}``."""

    def fn(agents, idx, copies):
        out = np.empty(len(agents), dtype=np.int64)
        for n, key in enumerate(zip(np.asarray(agents).tolist(), np.asarray(idx).tolist())):
            v = table.get(key, default)
            if v is None:
                raise KeyError(f"no forced ell for round {key}")
            out[n] = v
        return out

    return fn


# --- traces ------------------------------------------------------------------

ROUND_FIELDS = ("copy", "pos", "idx", "start", "end", "state", "ell", "next_state",
                "heard_zero", "heard_comp", "m_same")


@dataclass
class AsyncTrace:
    """All rounds of an asynchronous run (of every copy, for batched runs).

    ``rounds`` maps column names to equal-length arrays sorted by
    ``(copy, pos, idx)``; ``pos`` indexes ``agents``. Rounds still running at
    the horizon have ``next_state == -1``. ``m_same`` is the largest ell
    among same-state rounds heard (0 if none).
    """

    network: object
    agents: np.ndarray
    topo: object
    params: TimingParams
    policy: SchedulePolicy
    variant: ProtocolVariant
    mode: object
    seeds: np.ndarray
    init_states: np.ndarray
    rounds: dict
    horizon: int
    converged_tick: np.ndarray
    in_in_events: np.ndarray
    end_tick: int

    @property
    def copies(self):
        return self.seeds.size

    @property
    def complete(self):
        return self.rounds["next_state"] >= 0

    def __len__(self):
        return self.rounds["idx"].size

    def row(self, agent, idx, copy=0):
        pos = self.topo.pos[agent]
        key = (copy * self.topo.n + pos)
        g = self.rounds["copy"] * self.topo.n + self.rounds["pos"]
        lo = np.searchsorted(g, key)
        r = lo + idx
        if r >= g.size or g[r] != key or self.rounds["idx"][r] != idx:
            raise KeyError(f"round ({agent}, {idx}) not in trace")
        return int(r)

    def round(self, agent, idx, copy=0):
        r = self.row(agent, idx, copy)
        return {k: self.rounds[k][r].item() for k in ROUND_FIELDS}

    def delay(self, u, i, v, copy=0):
        seed = self.seeds[copy]
        return int(draw_delays(self.policy, self.params, np.array([seed]), np.array([u]), np.array([i]), np.array([v]))[0])

    def global_ids(self):
        return self.rounds["copy"] * self.topo.n + self.rounds["pos"]

    def states_at(self, t):
        """``(C, n)`` states at tick ``t``; agents not yet started hold their initial state."""
        n = self.topo.n
        g = self.global_ids()
        out = np.tile(self.init_states, (self.copies, 1)).reshape(-1).copy()
        key = g.astype(np.int64) * (self.end_tick + 2 * self.params.t_max + 2) + self.rounds["start"]
        probe = np.arange(self.copies * n, dtype=np.int64) * (self.end_tick + 2 * self.params.t_max + 2) + t
        r = np.searchsorted(key, probe, side="right") - 1
        ok = (r >= 0) & (g[np.clip(r, 0, None)] == np.arange(self.copies * n))
        ok &= self.rounds["end"][np.clip(r, 0, None)] > t
        out[ok] = self.rounds["state"][r[ok]]
        return out.reshape(self.copies, n)

    def per_agent_rows(self, copy=0):
        sel = self.rounds["copy"] == copy
        return {k: v[sel] for k, v in self.rounds.items()}


@dataclass
class AsyncBatchResult:
    seeds: np.ndarray
    converged_tick: np.ndarray
    mis_valid: np.ndarray
    in_in_events: np.ndarray
    end_tick: int
    max_round_index: np.ndarray
    final_states: np.ndarray = None

    @property
    def converged(self):
        return self.converged_tick >= 0


@numba.njit(cache=True)
def _hear_kernel(g, t, D, n, cur_start, indptr, indices, h_idx, h_start, h_end, h_in, h_un):
    """Largest In/Un ell audible to each ending round ``g`` at tick ``t``.

    A buffered neighbour round is certainly audible if it is audible for every
    delay in ``[1, D]``; rounds audible only for some delays are returned as
    ``(row, source, slot)`` triples for the caller to resolve.
    """
    m = g.size
    K = h_idx.shape[1]
    m_in = np.zeros(m, dtype=np.int64)
    m_un = np.zeros(m, dtype=np.int64)
    cap = 64
    b_row = np.empty(cap, dtype=np.int64)
    b_src = np.empty(cap, dtype=np.int64)
    b_slot = np.empty(cap, dtype=np.int64)
    nb = 0
    for r in range(m):
        v = g[r]
        base = v - v % n
        j = v % n
        lo = cur_start[v] + D
        for q in range(indptr[j], indptr[j + 1]):
            u = base + indices[q]
            for k in range(K):
                if h_idx[u, k] < 0:
                    continue
                s, e = h_start[u, k], h_end[u, k]
                if s + 1 > t or e + D <= lo:
                    continue
                if s + D <= t and e + 1 > lo:
                    if h_in[u, k] > m_in[r]:
                        m_in[r] = h_in[u, k]
                    if h_un[u, k] > m_un[r]:
                        m_un[r] = h_un[u, k]
                    continue
                if nb == cap:
                    cap *= 2
                    b_row = _grow(b_row, cap)
                    b_src = _grow(b_src, cap)
                    b_slot = _grow(b_slot, cap)
                b_row[nb] = r
                b_src[nb] = u
                b_slot[nb] = k
                nb += 1
    return m_in, m_un, b_row[:nb], b_src[:nb], b_slot[:nb]


@numba.njit(cache=True)
def _merge_max(m_in, m_un, rows, v_in, v_un):
    for i in range(rows.size):
        r = rows[i]
        m_in[r] = max(m_in[r], v_in[i])
        m_un[r] = max(m_un[r], v_un[i])


@numba.njit(cache=True)
def _grow(a, cap):
    out = np.empty(cap, dtype=a.dtype)
    out[: a.size] = a
    return out


class AsyncSimulation:
    """Tick-driven simulation of ``C`` independent copies of a static network.

    Only ticks where some round ends or begins are visited. At a tick all
    round ends are resolved first (they only depend on rounds that started
    strictly earlier), then the following rounds begin.
    """

    def __init__(self, net, states, params, policy=None, variant="singing", mode=None, seeds=(0,),
                 p=0.5, ell_fn=None, unsafe_pairing=False, record=True):
        self.variant, self.mode = check_pairing(variant, mode or default_hearing(variant), unsafe_pairing)
        if not isinstance(params, TimingParams):
            raise ConfigError("asynchronous runs need TimingParams")
        self.params = params
        self.policy = policy or SchedulePolicy()
        self.policy.validate(params)
        self.net = net.copy()
        self.topo = topo = Topology(self.net)
        self.seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1)
        C, n = self.seeds.size, topo.n
        self.C, self.n, self.N = C, n, C * n
        self.p = p
        self.ell_fn = ell_fn
        self.record = record
        states = check_states(self.net, states)
        self.init_row = np.array([states[int(a)] for a in topo.ids], dtype=np.int8)

        self.node_seed = np.repeat(self.seeds, n)
        self.node_local = np.tile(topo.ids, C)
        self.node_copy = np.repeat(np.arange(C), n)
        K = self.K = params.history
        N = self.N
        self.h_idx = np.full((N, K), -1, dtype=np.int32)
        self.h_start = np.zeros((N, K), dtype=np.int32)
        self.h_end = np.zeros((N, K), dtype=np.int32)
        # ell of the buffered round, split by the state it was sung in (0 otherwise)
        self.h_in = np.zeros((N, K), dtype=np.int16)
        self.h_un = np.zeros((N, K), dtype=np.int16)
        self.cur_idx = np.full(N, -1, dtype=np.int64)
        self.cur_start = np.zeros(N, dtype=np.int64)
        self.cur_end = np.zeros(N, dtype=np.int64)
        self.cur_state = np.tile(self.init_row, C)
        self.cur_ell = np.zeros(N, dtype=np.int64)
        self.offset = draw_offsets(self.policy, params, self.node_seed, self.node_local)
        self.started = np.zeros(N, dtype=bool)

        self.last_change = np.zeros(C, dtype=np.int64)
        self.converged_tick = np.full(C, -1, dtype=np.int64)
        self.in_in_events = np.zeros(C, dtype=np.int64)
        self.t = int(self.offset.min()) if N else 0
        self._log = []

    # -- draws --------------------------------------------------------------
    def _ells(self, g, idx):
        if self.ell_fn is not None:
            out = np.asarray(self.ell_fn(self.node_local[g], idx, self.node_copy[g]), dtype=np.int64)
            if (out < 1).any():
                raise ConfigError("forced ell values must be >= 1")
            return out
        # async round i draws from the same stream as synchronous round i + 1
        return _rng.geometric(self.node_seed[g], self.node_local[g], idx + 1, self.p)

    def _begin(self, g, state, t):
        idx = self.cur_idx[g] + 1
        dur = draw_durations(self.policy, self.params, self.node_seed[g], self.node_local[g], idx)
        ell = self._ells(g, idx)
        self.cur_idx[g] = idx
        self.cur_start[g] = t
        self.cur_end[g] = t + dur
        self.cur_state[g] = state
        self.cur_ell[g] = ell
        slot = idx % self.K
        self.h_idx[g, slot] = idx
        self.h_start[g, slot] = t
        self.h_end[g, slot] = t + dur
        self.h_in[g, slot] = np.where(state == IN, ell, 0)
        self.h_un[g, slot] = np.where(state == UN, ell, 0)
        self.started[g] = True

    def _neighbours(self, g):
        """Expand flat nodes into ``(row, neighbour_node)`` pairs grouped by row."""
        topo = self.topo
        j = g % self.n
        deg = topo.deg[j]
        total = int(deg.sum())
        row = np.repeat(np.arange(g.size), deg)
        first = np.repeat(topo.indptr[j] - (np.cumsum(deg) - deg), deg)
        nb = topo.indices[np.arange(total) + first]
        return row, np.repeat(g - j, deg) + nb, deg

    def _finish(self, g, t):
        params, topo = self.params, self.topo
        m_in, m_un, b_row, b_src, b_slot = _hear_kernel(
            g, t, params.delta_max, self.n, self.cur_start, topo.indptr, topo.indices,
            self.h_idx, self.h_start, self.h_end, self.h_in, self.h_un)
        if b_row.size:
            # borderline rounds: audible for some delays but not all of them
            v = g[b_row]
            d = draw_delays(self.policy, params, self.node_seed[b_src], self.node_local[b_src],
                            self.h_idx[b_src, b_slot], self.node_local[v])
            aud = (self.h_start[b_src, b_slot] + d <= t) & (self.h_end[b_src, b_slot] + d > self.cur_start[v] + params.delta_max)
            _merge_max(m_in, m_un, b_row[aud], self.h_in[b_src[aud], b_slot[aud]], self.h_un[b_src[aud], b_slot[aud]])
        state, ell = self.cur_state[g], self.cur_ell[g]
        h0, hc = heard_flags(state, ell, m_in, m_un, self.variant, self.mode)
        nxt = transition_array(state, h0, hc, self.variant)
        if self.record:
            m_same = np.where(state == IN, m_in, np.where(state == UN, m_un, 0))
            self._log.append((g, self.cur_idx[g].copy(), self.cur_start[g].copy(), self.cur_end[g].copy(),
                              state.copy(), ell.copy(), nxt, h0, hc, m_same))
        changed = np.unique(self.node_copy[g[nxt != state]])
        self.last_change[changed] = t
        return nxt

    def _check_in_in(self, g):
        """Count newly begun In rounds that overlap an In neighbour."""
        g = g[self.cur_state[g] == IN]
        if not g.size:
            return
        row, src, _ = self._neighbours(g)
        clash = self.started[src] & (self.cur_state[src] == IN)
        if clash.any():
            np.add.at(self.in_in_events, self.node_copy[g[row[clash]]], 1)

    def validity(self):
        s = self.cur_state.reshape(self.C, self.n)
        topo = self.topo
        is_in = s == IN
        has_in = topo.any_neighbor(is_in)
        bad = (s == UN) | (is_in & has_in) | ((s == OUT) & ~has_in)
        bad |= ~self.started.reshape(self.C, self.n)
        return ~bad.any(axis=1)

    def run(self, horizon, stop_on_convergence=True):
        params = self.params
        window = params.t_max + params.delta_max
        valid = self.validity()
        while self.N:
            pending = ~self.started
            nxt_end = self.cur_end[self.started].min() if self.started.any() else np.iinfo(np.int64).max
            nxt_off = self.offset[pending].min() if pending.any() else np.iinfo(np.int64).max
            t = int(min(nxt_end, nxt_off))
            if t > horizon:
                break
            self.t = t
            ending = np.flatnonzero(self.started & (self.cur_end == t))
            first = np.flatnonzero(pending & (self.offset == t))
            if ending.size:
                nxt = self._finish(ending, t)
                self._begin(ending, nxt, t)
            if first.size:
                self._begin(first, self.init_row[first % self.n], t)
                self.last_change[np.unique(self.node_copy[first])] = t
            begun = np.concatenate([ending, first])
            self._check_in_in(begun)
            if ending.size or first.size:
                valid = self.validity()
            done = valid & (t - self.last_change >= window) & (self.converged_tick < 0)
            self.converged_tick[done] = self.last_change[done]
            if stop_on_convergence and (self.converged_tick >= 0).all():
                break
        return self

    # -- results --------------------------------------------------------------
    def trace(self, horizon):
        cols = {k: [] for k in ROUND_FIELDS}
        for g, idx, st, en, state, ell, nxt, h0, hc, m in self._log:
            cols["copy"].append(self.node_copy[g])
            cols["pos"].append(g % self.n)
            for k, v in zip(ROUND_FIELDS[2:], (idx, st, en, state, ell, nxt, h0, hc, m)):
                cols[k].append(v)
        live = np.flatnonzero(self.started)
        cols["copy"].append(self.node_copy[live])
        cols["pos"].append(live % self.n)
        for k, v in zip(ROUND_FIELDS[2:], (self.cur_idx[live], self.cur_start[live], self.cur_end[live],
                                           self.cur_state[live], self.cur_ell[live], np.full(live.size, -1),
                                           np.zeros(live.size, bool), np.zeros(live.size, bool),
                                           np.zeros(live.size, np.int64))):
            cols[k].append(v)
        rounds = {k: np.concatenate(v) if v else np.zeros(0) for k, v in cols.items()}
        rounds["state"] = rounds["state"].astype(np.int8)
        rounds["next_state"] = rounds["next_state"].astype(np.int8)
        order = np.lexsort((rounds["idx"], rounds["pos"], rounds["copy"]))
        rounds = {k: v[order] for k, v in rounds.items()}
        return AsyncTrace(
            network=self.net, agents=self.topo.ids, topo=self.topo, params=self.params, policy=self.policy,
            variant=self.variant, mode=self.mode, seeds=self.seeds, init_states=self.init_row, rounds=rounds,
            horizon=horizon, converged_tick=self.converged_tick.copy(), in_in_events=self.in_in_events.copy(),
            end_tick=self.t,
        )

    def summary(self):
        return AsyncBatchResult(
            seeds=self.seeds.copy(),
            converged_tick=self.converged_tick.copy(),
            mis_valid=self.validity(),
            in_in_events=self.in_in_events.copy(),
            end_tick=self.t,
            max_round_index=self.cur_idx.reshape(self.C, self.n).max(axis=1) if self.n else np.zeros(self.C, int),
            final_states=self.cur_state.reshape(self.C, self.n).copy(),
        )


def default_horizon(n, params):
    return default_round_budget(n) * params.t_max


def run_async(net, init_states, params, policy=None, variant="singing", mode=None, seed=0, horizon=None,
              p=0.5, ell_fn=None, unsafe_pairing=False, stop_on_convergence=True):
    """Run one asynchronous execution and return its :class:`AsyncTrace`."""
    if not isinstance(params, TimingParams):
        raise ConfigError("asynchronous runs need TimingParams")
    horizon = default_horizon(len(net), params) if horizon is None else horizon
    if horizon < params.t_max:
        raise ConfigError("horizon must be at least t_max ticks")
    sim = AsyncSimulation(net, init_states, params, policy, variant, mode, seeds=[seed], p=p, ell_fn=ell_fn,
                          unsafe_pairing=unsafe_pairing, record=True)
    sim.run(horizon, stop_on_convergence)
    return sim.trace(horizon)


def run_async_batch(net, init_states, params, seeds, policy=None, variant="singing", mode=None, horizon=None,
                    p=0.5, ell_fn=None, unsafe_pairing=False, stop_on_convergence=True, record=False):
    """One asynchronous execution per seed; returns a summary (and the trace when ``record``)."""
    if not isinstance(params, TimingParams):
        raise ConfigError("asynchronous runs need TimingParams")
    horizon = default_horizon(len(net), params) if horizon is None else horizon
    sim = AsyncSimulation(net, init_states, params, policy, variant, mode, seeds=seeds, p=p, ell_fn=ell_fn,
                          unsafe_pairing=unsafe_pairing, record=record)
    sim.run(horizon, stop_on_convergence)
    return (sim.summary(), sim.trace(horizon)) if record else sim.summary()


# --- trace analysis ------------------------------------------------------------


def hears_from(trace, speaker, listener, same_state=False, copy=0):
    """Does round ``listener = (v, j)`` hear round ``speaker = (u, i)``?

    True iff the transmission of ``(u, i)`` towards ``v`` is audible somewhere
    in ``(start_v + delta_max, end_v]``. With ``same_state`` the two rounds
    must also have been sung in the same state.
    """
    (u, i), (v, j) = speaker, listener
    if u == v:
        return False
    if not trace.network.has_edge(u, v):
        raise ValueError(f"agents {u} and {v} are not adjacent")
    su, sv = trace.round(u, i, copy), trace.round(v, j, copy)
    if same_state and su["state"] != sv["state"]:
        return False
    d = trace.delay(u, i, v, copy)
    return su["start"] + d <= sv["end"] and su["end"] + d > sv["start"] + trace.params.delta_max


def _hearing_pairs(trace, same_state=False):
    """All directed pairs of time-overlapping rounds of adjacent agents.

    Only overlapping rounds can hear each other, so the pair list is complete
    for the hearing relation. Returns a dict of aligned arrays: ``lst`` and
    ``spk`` (row numbers of listener and speaker), ``grp`` (one id per
    listener row and neighbour), ``hear`` and ``mutual``; plus ``prior``, a
    per-group flag telling whether the neighbour has a round ending at or
    before the listener round starts.
    """
    R, topo, params = trace.rounds, trace.topo, trace.params
    n = topo.n
    g = R["copy"].astype(np.int64) * n + R["pos"]
    B = np.int64(trace.end_tick + 3 * params.t_max + 2)
    key_start = g * B + R["start"]
    key_end = g * B + R["end"]
    pos = R["pos"]
    deg = topo.deg[pos]
    rows = np.repeat(np.arange(g.size), deg)
    first = np.repeat(topo.indptr[pos] - (np.cumsum(deg) - deg), deg)
    nb_g = (g - pos)[rows] + topo.indices[np.arange(rows.size) + first]
    lo = np.searchsorted(key_end, nb_g * B + R["start"][rows], side="right")
    hi = np.searchsorted(key_start, nb_g * B + R["end"][rows], side="left")
    cnt = np.maximum(hi - lo, 0)
    prior = (lo > 0) & (g[np.maximum(lo - 1, 0)] == nb_g)
    total = int(cnt.sum())
    grp = np.repeat(np.arange(rows.size), cnt)
    lst = rows[grp]
    spk = lo[grp] + np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    d = draw_delays(trace.policy, params, trace.seeds[R["copy"][spk]], trace.agents[pos[spk]], R["idx"][spk],
                    trace.agents[pos[lst]])
    hear = (R["start"][spk] + d <= R["end"][lst]) & (R["end"][spk] + d > R["start"][lst] + params.delta_max)
    if same_state:
        hear &= R["state"][spk] == R["state"][lst]
    M = np.int64(g.size)
    fwd = np.sort(lst[hear] * M + spk[hear])
    back = spk * M + lst
    at = np.searchsorted(fwd, back)
    mutual = hear & (at < fwd.size) & (fwd[np.minimum(at, fwd.size - 1)] == back)
    return dict(lst=lst, spk=spk, grp=grp, hear=hear, mutual=mutual, prior=prior, group_row=rows)


def _require_sj(trace):
    if trace.variant is not ProtocolVariant.SELF_JAMMING:
        raise ValueError("collisions are only defined for self-jamming traces")


def collision_mask(trace, pairs=None):
    """Per-row flag: is the round in collision with some neighbouring round."""
    _require_sj(trace)
    R = trace.rounds
    pairs = pairs or _hearing_pairs(trace, same_state=True)
    lst, spk, hear = pairs["lst"], pairs["spk"], pairs["hear"]
    m = np.zeros(len(trace), dtype=np.int64)
    np.maximum.at(m, lst[hear], R["ell"][spk[hear]])
    done = trace.complete
    st, ell = R["state"], R["ell"]
    hit = (pairs["mutual"] & done[lst] & done[spk] & (st[lst] != OUT) & (ell[lst] == ell[spk])
           & (ell[lst] >= m[lst]) & (ell[spk] >= m[spk]))
    out = np.zeros(len(trace), dtype=bool)
    out[lst[hit]] = True
    return out, (lst[hit], spk[hit]), m


def detect_collisions(trace, copy=0):
    """Unordered pairs ``{(v, j), (u, i)}`` of rounds in collision."""
    _, (a, b), _ = collision_mask(trace)
    R, ids = trace.rounds, trace.agents
    keep = (R["copy"][a] == copy) & (a < b)
    return [frozenset({(int(ids[R["pos"][x]]), int(R["idx"][x])), (int(ids[R["pos"][y]]), int(R["idx"][y]))})
            for x, y in zip(a[keep], b[keep])]


def stable_in_mask(trace, pairs=None):
    """Per-row flag: the round ends In and is not in collision."""
    coll, _, _ = collision_mask(trace, pairs)
    return trace.complete & (trace.rounds["next_state"] == IN) & ~coll


def stable_in_rounds(trace, copy=0):
    R, ids = trace.rounds, trace.agents
    sel = stable_in_mask(trace) & (R["copy"] == copy)
    return {(int(ids[p]), int(i)) for p, i in zip(R["pos"][sel], R["idx"][sel])}


def stable_since(trace, pairs=None):
    """``(C, n)`` tick from which each agent is stable and In (-1 if never)."""
    R = trace.rounds
    sel = stable_in_mask(trace, pairs)
    n = trace.topo.n
    big = np.iinfo(np.int64).max
    out = np.full(trace.copies * n, big, dtype=np.int64)
    np.minimum.at(out, (R["copy"][sel].astype(np.int64) * n + R["pos"][sel]), R["end"][sel])
    out[out == big] = -1
    return out.reshape(trace.copies, n)


def stable_in_violations(trace):
    """Stable-and-In agents that later leave In, or that have a stable neighbour."""
    R, topo = trace.rounds, trace.topo
    since = stable_since(trace).reshape(-1)
    g = R["copy"].astype(np.int64) * topo.n + R["pos"]
    s = since[g]
    left = (s >= 0) & (R["start"] >= s) & (R["state"] != IN)
    stable = (since >= 0).reshape(trace.copies, topo.n)
    both = stable[:, topo.eu] & stable[:, topo.ev]
    return int(left.sum()), int(both.sum())


def two_round_hearing_violations(trace, pairs=None):
    """Check two-round hearing on every complete listener round.

    For adjacent ``u, v`` and rounds ``(u, i)``, ``(v, j)`` with ``(u, i)``
    ending no later, either they hear each other or ``(v, j)`` hears some
    ``(u, k)`` with ``k > i``. Returns the number of violating pairs.
    """
    R = trace.rounds
    pairs = pairs or _hearing_pairs(trace)
    lst, spk, grp, hear = pairs["lst"], pairs["spk"], pairs["grp"], pairs["hear"]
    ngrp = pairs["group_row"].size
    maxk = np.full(ngrp, -1, dtype=np.int64)
    np.maximum.at(maxk, grp[hear], R["idx"][spk[hear]])
    done = trace.complete
    first = done[lst] & (R["end"][spk] <= R["end"][lst])
    bad = first & ~pairs["mutual"] & (maxk[grp] <= R["idx"][spk])
    # rounds of u that ended before (v, j) started: (v, j) must hear a later one
    bad_prior = pairs["prior"] & done[pairs["group_row"]] & (maxk < 0)
    return int(bad.sum() + bad_prior.sum())


def in_in_overlaps(trace, pairs=None):
    """Number of time-overlapping round pairs of adjacent agents that are both In."""
    R = trace.rounds
    pairs = pairs or _hearing_pairs(trace)
    lst, spk = pairs["lst"], pairs["spk"]
    both = (R["state"][lst] == IN) & (R["state"][spk] == IN) & (lst < spk)
    return int(both.sum())


def clean_stable_violations(trace, pairs=None):
    """:func:`stable_in_violations` restricted to *clean* stable rounds.

    A stable round is clean when no neighbour round overlapping it in time is
    sung in state In. Returns ``(later rounds not In, adjacent clean pairs)``
    counted from each agent's first clean stable round.
    """
    R, topo = trace.rounds, trace.topo
    pairs = pairs or _hearing_pairs(trace)
    lst, spk = pairs["lst"], pairs["spk"]
    touched = np.zeros(len(trace), dtype=bool)
    touched[lst[R["state"][spk] == IN]] = True
    sel = stable_in_mask(trace) & ~touched
    n = topo.n
    g = R["copy"].astype(np.int64) * n + R["pos"]
    big = np.iinfo(np.int64).max
    since = np.full(trace.copies * n, big, dtype=np.int64)
    np.minimum.at(since, g[sel], R["end"][sel])
    s = since[g]
    left = (s < big) & (R["start"] >= s) & (R["state"] != IN)
    clean = (since < big).reshape(trace.copies, n)
    both = clean[:, topo.eu] & clean[:, topo.ev]
    return int(left.sum()), int(both.sum())
