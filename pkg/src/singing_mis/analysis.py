"""Active/eliminated classification and the quantitative checks built on it.

An agent is *eliminated* when it is In with no In neighbour, or is adjacent to
such an agent; otherwise it is *active*. An edge is active iff both endpoints
are. Expected-decrease bounds are checked by restart sampling: a reached
configuration is frozen and many independent continuations are branched from
it, so each check holds "for this configuration" rather than on average along
one trajectory.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations, product

import numpy as np

from . import _rng
from ._topology import Topology
from .async_engine import (
    _hearing_pairs,
    run_async,
    run_async_batch,
    stable_since,
    synchronous_policy,
)
from .coin import estimate_coin_bounds, ordering_probability, weak_orderings  # noqa: F401  (re-exported)
from .network import ChangeEvent, ChangeScript, apply_changes, affected_edges
from .protocol import (
    IN,
    OUT,
    UN,
    AgentState,
    ConfigError,
    ProtocolVariant,
    default_hearing,
    heard_flags,
    transition_array,
)
from .sync_engine import SyncSimulation, is_converged, run_sync

is_mis = is_converged


@dataclass(frozen=True)
class RefinedStatus:
    base: AgentState
    has_in_neighbor: bool

    def __str__(self):
        return f"{self.base.name.capitalize()}^{'In' if self.has_in_neighbor else '~In'}"


def refined_status(net, states):
    return {u: RefinedStatus(AgentState(states[u]), any(AgentState(states[v]) is IN for v in net.neighbors(u)))
            for u in net.agents}


@dataclass
class Classification:
    agent_active: dict
    edge_active: dict
    e: int

    @property
    def active_agents(self):
        return {u for u, a in self.agent_active.items() if a}

    @property
    def active_edges(self):
        return {e for e, a in self.edge_active.items() if a}

    @property
    def eliminated_edges(self):
        return {e for e, a in self.edge_active.items() if not a}


def classify(net, states):
    status = refined_status(net, states)
    leaders = {u for u, s in status.items() if s.base is IN and not s.has_in_neighbor}
    eliminated = set(leaders)
    for u in leaders:
        eliminated |= net.neighbors(u)
    agent_active = {u: u not in eliminated for u in net.agents}
    edge_active = {(u, v): agent_active[u] and agent_active[v] for u, v in net.edges}
    return Classification(agent_active, edge_active, sum(edge_active.values()))


def active_mask(topo, states):
    """Vectorised classification: ``(active agents, active edge count)`` per row of ``states``."""
    is_in = states == IN
    leader = is_in & ~topo.any_neighbor(is_in)
    active = ~(leader | topo.any_neighbor(leader))
    return active, (active[..., topo.eu] & active[..., topo.ev]).sum(axis=-1)


# --- reports ---------------------------------------------------------------------


@dataclass
class ContractionReport:
    """Sampled means against a bound, one row per frozen configuration."""

    name: str
    bound: str
    rows: list = field(default_factory=list)

    @property
    def passed(self):
        return all(r["ok"] for r in self.rows)

    @property
    def samples(self):
        return len(self.rows)

    @property
    def max_se(self):
        return max((r["se"] for r in self.rows), default=0.0)

    @property
    def worst_margin(self):
        """Smallest ``(bound + 3 se) - mean`` over all rows, in units of se."""
        return min((r["z"] for r in self.rows), default=math.inf)

    def summary(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{self.name}: {verdict} ({self.samples} configurations, bound {self.bound}, "
                f"max se {self.max_se:.4f}, worst z {self.worst_margin:+.2f})")

    def csv_rows(self):
        keys = sorted({k for r in self.rows for k in r})
        return keys, [[r.get(k, "") for k in keys] for r in self.rows]


def _branch_seeds(seed, config, branches):
    base = int(_rng.hash_words(seed, config, 0, _rng.CHURN, 0)[0])
    return (np.uint64(base) + np.arange(branches, dtype=np.uint64)).astype(np.uint64)


def _z(mean, bound, se):
    """Standardised slack of ``mean <= bound``; >= -3 passes."""
    if se == 0:
        return math.inf if mean <= bound else -math.inf
    return (bound - mean) / se


def _state_row(record, topo):
    pos = {int(a): i for i, a in enumerate(record.agents)}
    return np.array([record.state[pos[int(a)]] for a in topo.ids], dtype=np.int8)


def _is_static(trace):
    return not (trace.script and len(trace.script)) and all(not r.changed for r in trace.rounds)


def check_static_contraction(traces, branches=10_000, rounds=None, seed=0, span=2, bound=0.75):
    """Restart-sample ``e_{i+span} / e_i`` from the configurations of static traces.

    For every trace and every round ``i`` (all rounds with ``e_i > 0`` unless
    ``rounds`` is given) the round-``i`` states are frozen and ``branches``
    continuations are run for ``span`` rounds.
    """
    report = ContractionReport("static contraction", f"E[e(i+{span})]/e(i) <= {bound}")
    for k, trace in enumerate(traces):
        if not _is_static(trace):
            raise ConfigError("static contraction needs traces of static networks")
        if trace.variant is not ProtocolVariant.SINGING:
            raise ConfigError("static contraction is stated for the singing protocol")
        net = trace.initial_network
        topo = Topology(net)
        for rec in trace.rounds:
            if rounds is not None and rec.round not in rounds:
                continue
            if rec.active_edges == 0:
                continue
            row = _state_row(rec, topo)
            seeds = _branch_seeds(seed, k * 100_003 + rec.round, branches)
            sim = SyncSimulation(net, np.tile(row, (branches, 1)), trace.variant, trace.mode, seeds=seeds)
            for _ in range(span):
                sim.step()
            _, e = active_mask(sim.topo, sim.states)
            ratio = e / rec.active_edges
            mean, se = float(ratio.mean()), float(ratio.std(ddof=1) / math.sqrt(branches))
            z = _z(mean, bound, se)
            report.rows.append(dict(trace=k, round=rec.round, e_i=rec.active_edges, mean=mean, se=se,
                                    bound=bound, z=z, ok=z >= -3))
    return report


def _affected_by_round(trace, upto):
    net = trace.initial_network.copy()
    out = {}
    for r, kinds in sorted((trace.script or ChangeScript()).by_round().items()):
        if r > upto:
            break
        before = net.copy()
        _, changed = apply_changes(net, kinds)
        out[r] = affected_edges(net, changed, before)
    return out


DYNAMIC_BOUNDS = {
    ProtocolVariant.SINGING: (Fraction(3, 4), Fraction(1)),
    ProtocolVariant.SELF_JAMMING: (Fraction(6, 7), Fraction(8, 7)),
}


def check_dynamic_contraction(traces, branches=10_000, windows=None, seed=0):
    """Restart-sample ``|E_{i+3}|`` against ``a |E_i| + b |A_{i+1} u A_{i+2} u A_{i+3}|``.

    The network and states of round ``i`` are frozen; every branch replays
    the trace's own change events for rounds ``i+1..i+3`` (the adversary is
    oblivious) with fresh coins. ``(a, b)`` is ``(3/4, 1)`` for the singing
    protocol and ``(6/7, 8/7)`` for the self-jamming one.
    """
    report = None
    for k, trace in enumerate(traces):
        a, b = DYNAMIC_BOUNDS[trace.variant]
        if report is None:
            report = ContractionReport("dynamic contraction", f"E|E(i+3)| <= {a}|E(i)| + {b}|A|")
        last = len(trace.rounds) - 3
        wins = range(1, last + 1) if windows is None else [w for w in windows if 1 <= w <= last]
        affected = _affected_by_round(trace, last + 3)
        events = (trace.script or ChangeScript()).by_round()
        for i in wins:
            rec = trace.rounds[i - 1]
            if rec.active_edges == 0 and not any(affected.get(i + s) for s in (1, 2, 3)):
                continue
            net = trace.network_at(i)
            topo = Topology(net)
            row = _state_row(rec, topo)
            shifted = [ChangeEvent(s + 1, kind) for s in (1, 2, 3) for kind in events.get(i + s, [])]
            seeds = _branch_seeds(seed, k * 100_003 + i, branches)
            sim = SyncSimulation(net, np.tile(row, (branches, 1)), trace.variant, trace.mode, seeds=seeds,
                                 script=ChangeScript(shifted))
            for _ in range(3):
                sim.step()
            sim.begin_round()
            _, e = active_mask(sim.topo, sim.states)
            a_union = set().union(*(affected.get(i + s, set()) for s in (1, 2, 3)))
            bound = float(a * rec.active_edges + b * len(a_union))
            mean, se = float(e.mean()), float(e.std(ddof=1) / math.sqrt(branches))
            z = _z(mean, bound, se)
            report.rows.append(dict(trace=k, round=i, e_i=rec.active_edges, affected=len(a_union), mean=mean,
                                    se=se, bound=bound, z=z, ok=z >= -3))
    return report or ContractionReport("dynamic contraction", "n/a")


def check_eligibility_probability(traces, branches=100_000, rounds=None, seed=0, chunk=20_000):
    """Per active agent ``v`` of a frozen configuration, compare two-round outcomes.

    With ``C_v`` = "two rounds later v is Un with no In neighbour", the check
    is ``Pr[v eliminated two rounds later] >= (1 - Pr[C_v]) / 2``, tested on
    the per-branch statistic ``1[eliminated] - (1 - 1[C_v]) / 2``.
    """
    report = ContractionReport("eligibility", "Pr[elim] >= (1 - p_v)/2")
    for k, trace in enumerate(traces):
        if not _is_static(trace):
            raise ConfigError("eligibility sampling uses static traces")
        net = trace.initial_network
        topo = Topology(net)
        for rec in trace.rounds:
            if rounds is not None and rec.round not in rounds:
                continue
            row = _state_row(rec, topo)
            active, _ = active_mask(topo, row[None, :])
            act = np.flatnonzero(active[0])
            if not act.size:
                continue
            total = np.zeros(act.size)
            total_sq = np.zeros(act.size)
            elim_n = np.zeros(act.size)
            c_n = np.zeros(act.size)
            seeds_all = _branch_seeds(seed, k * 100_003 + rec.round, branches)
            for lo in range(0, branches, chunk):
                seeds = seeds_all[lo:lo + chunk]
                sim = SyncSimulation(net, np.tile(row, (seeds.size, 1)), trace.variant, trace.mode, seeds=seeds)
                sim.step()
                sim.step()
                s = sim.states
                act2, _ = active_mask(topo, s)
                elim = ~act2[:, act]
                cv = (s[:, act] == UN) & ~topo.any_neighbor(s == IN)[:, act]
                zs = elim - (1 - cv) / 2
                total += zs.sum(axis=0)
                total_sq += (zs ** 2).sum(axis=0)
                elim_n += elim.sum(axis=0)
                c_n += cv.sum(axis=0)
            mean = total / branches
            var = np.maximum(total_sq / branches - mean ** 2, 0) * branches / max(branches - 1, 1)
            se = np.sqrt(var / branches)
            for j, v in enumerate(act):
                z = math.inf if se[j] == 0 and mean[j] >= 0 else (mean[j] / se[j] if se[j] else -math.inf)
                report.rows.append(dict(trace=k, round=rec.round, agent=int(topo.ids[v]), p_v=c_n[j] / branches,
                                        elim=elim_n[j] / branches, mean=float(mean[j]), se=float(se[j]),
                                        z=z, ok=z >= -3))
    return report


# --- asynchronous windows ----------------------------------------------------------

ASYNC_CONSTANTS = {ProtocolVariant.SINGING: (28, 3), ProtocolVariant.SELF_JAMMING: (98, 6)}


def async_window(params, variant):
    """Default window length ``2 delta_max + m t_max`` (``m`` = 3 or 6)."""
    _, m = ASYNC_CONSTANTS[ProtocolVariant(variant)]
    return 2 * params.delta_max + m * params.t_max


def async_active_edges(trace, ticks, pairs=None):
    """``(len(ticks), C)`` active-edge counts of an asynchronous trace.

    Singing: classification of the states held at each tick. Self-jamming:
    an agent is eliminated once it, or a neighbour, is stable and In.
    """
    topo = trace.topo
    out = np.zeros((len(ticks), trace.copies), dtype=np.int64)
    if trace.variant is ProtocolVariant.SINGING:
        for k, t in enumerate(ticks):
            out[k] = active_mask(topo, trace.states_at(t))[1]
        return out
    since = stable_since(trace, pairs)
    for k, t in enumerate(ticks):
        stable = (since >= 0) & (since <= t)
        active = ~(stable | topo.any_neighbor(stable))
        out[k] = (active[:, topo.eu] & active[:, topo.ev]).sum(axis=1)
    return out


def check_async_contraction(net, params, variant="singing", trials=10_000, ticks=(0,), t_diff=None, seed=0,
                            policy=None, chunk=500, init_states=None):
    """Windowed decrease ``|E_t| - E|E_{t+T}|`` against ``|E_t| / c * t_min / T``.

    Every trial is an independent run from the same initial states; the bound
    holds for every configuration at ``t``, hence also on average over runs.
    The test is one-sided on the per-run slack
    ``(|E_t| - |E_{t+T}|) - |E_t| t_min / (c T)``. ``t_diff`` may be one
    window length or several; each (tick, window) pair gives one row.
    """
    variant = ProtocolVariant(variant)
    c, _ = ASYNC_CONSTANTS[variant]
    if t_diff is None:
        windows = [async_window(params, variant)]
    elif np.ndim(t_diff) == 0:
        windows = [int(t_diff)]
    else:
        windows = [int(T) for T in t_diff]
    init = init_states or {u: UN for u in net.agents}
    horizon = max(ticks) + max(windows) + params.t_max + params.delta_max
    label = ", ".join(str(T) for T in windows)
    report = ContractionReport("async contraction", f"E_t - E[E_(t+T)] >= E_t/{c} * {params.t_min}/T, T in {{{label}}}")
    cases = [(t, T) for t in ticks for T in windows]
    slack = {k: [] for k in cases}
    e_t = {k: [] for k in cases}
    dec = {k: [] for k in cases}
    for lo in range(0, trials, chunk):
        seeds = np.arange(lo, min(trials, lo + chunk), dtype=np.uint64) + np.uint64(seed) * np.uint64(1 << 32)
        _, trace = run_async_batch(net, init, params, seeds, policy=policy, variant=variant, horizon=horizon,
                                   stop_on_convergence=False, record=True)
        pairs = _hearing_pairs(trace, same_state=True) if variant is ProtocolVariant.SELF_JAMMING else None
        probe = sorted({t for t in ticks} | {t + T for t, T in cases})
        counts = dict(zip(probe, async_active_edges(trace, probe, pairs)))
        for t, T in cases:
            a, b = counts[t], counts[t + T]
            e_t[t, T].append(a)
            dec[t, T].append(a - b)
            slack[t, T].append((a - b) - a * params.t_min / (c * T))
    for t, T in cases:
        s = np.concatenate(slack[t, T])
        mean, se = float(s.mean()), float(s.std(ddof=1) / math.sqrt(s.size))
        if se < 1e-9 * max(1.0, abs(mean)):
            se = 0.0  # constant slack up to rounding
        z = math.inf if se == 0 and mean >= 0 else (mean / se if se else -math.inf)
        mean_e = float(np.concatenate(e_t[t, T]).mean())
        report.rows.append(dict(tick=t, window=T, mean_e_t=mean_e, mean_decrease=float(np.concatenate(dec[t, T]).mean()),
                                required=mean_e * params.t_min / (c * T), mean=mean, se=se, z=z,
                                ok=z >= -3 and mean_e > 0))
    return report


# --- dynamic locality ------------------------------------------------------------------


def locality_violations(trace):
    """Edges eliminated in round ``i``, unaffected in round ``i+1``, yet active in ``i+1``."""
    net = trace.initial_network.copy()
    events = (trace.script or ChangeScript()).by_round()
    out = []
    prev = None
    for rec in trace.rounds:
        before = net.copy()
        _, changed = apply_changes(net, events.get(rec.round, []))
        cls = classify(net, rec.states())
        if prev is not None:
            a = affected_edges(net, changed, before)
            for e in prev.eliminated_edges - a:
                if cls.edge_active.get(e):
                    out.append((rec.round - 1, e))
        prev = cls
    return out


def settle_down_violations(trace):
    """Un neighbours of edges unaffected for two rounds must have been active two rounds earlier.

    For an edge unaffected in rounds ``i+1`` and ``i+2`` and a neighbour ``u``
    of one of its endpoints that is Un in round ``i+2``, ``u`` must be active
    in round ``i``.
    """
    net = trace.initial_network.copy()
    events = (trace.script or ChangeScript()).by_round()
    nets, affected, cls = [], [], []
    for rec in trace.rounds:
        before = net.copy()
        _, changed = apply_changes(net, events.get(rec.round, []))
        nets.append(net.copy())
        affected.append(affected_edges(net, changed, before))
        cls.append(classify(net, rec.states()))
    out = []
    for i in range(len(trace.rounds) - 2):
        g2 = nets[i + 2]
        st2 = trace.rounds[i + 2].states()
        for x, y in g2.edges:
            e = (x, y)
            if e in affected[i + 1] or e in affected[i + 2] or not nets[i].has_edge(x, y):
                continue
            for end in (x, y):
                for u in g2.neighbors(end):
                    if st2[u] is UN and u in cls[i].agent_active and not cls[i].agent_active[u]:
                        out.append((trace.rounds[i].round, e, u))
    return out


def unaffected_ball_changes(before, after, changed, radius=2):
    """Edges outside the affected set whose ``radius`` neighbourhood changed.

    For every edge of ``after`` that is not affected, the subgraph induced by
    agents within ``radius`` of its endpoints must be identical in ``before``
    and ``after``.
    """
    a = affected_edges(after, changed, before)
    bad = []
    for u, v in after.edges:
        if (u, v) in a:
            continue
        ball = _ball_agents(after, (u, v), radius) | _ball_agents(before, (u, v), radius)
        sub_a = {e for e in after.edges if e[0] in ball and e[1] in ball}
        sub_b = {e for e in before.edges if e[0] in ball and e[1] in ball}
        if sub_a != sub_b or {w for w in ball if w in after} != {w for w in ball if w in before}:
            bad.append((u, v))
    return bad


def _ball_agents(net, sources, radius):
    seen = {s for s in sources if s in net}
    frontier = set(seen)
    for _ in range(radius):
        frontier = {w for u in frontier for w in net.neighbors(u)} - seen
        seen |= frontier
    return seen


# --- biased competitions ---------------------------------------------------------------


def alpha_bounds(p_values):
    """Per-agent win-probability factors for agents flipping coins of different bias."""
    ps = [float(p) for p in p_values]
    if not ps:
        return []
    for p in ps:
        if not 0.0 < p < 1.0:
            raise ConfigError(f"flip probability must lie in (0, 1), got {p!r}")
    if len(ps) == 1:
        return [2 * ps[0] / (1 + ps[0])]
    out = []
    for j, pj in enumerate(ps):
        x2 = min(pj * (1 - pk) / (pj * (1 - pk) + pk * (1 - pj)) for k, pk in enumerate(ps) if k != j)
        out.append(pj / (x2 + pj * (1 - x2)))
    return out


# --- exact small-network oracle ---------------------------------------------------------


def _ordering_table(k, p):
    """Rank vectors (1-based) and exact integer weights over a common denominator."""
    orders = weak_orderings(k)
    probs = [ordering_probability([len(b) for b in blocks], p) for blocks in orders]
    den = math.lcm(*(q.denominator for q in probs))
    weights = np.array([int(q * den) for q in probs], dtype=object)
    ranks = np.zeros((len(orders), k), dtype=np.int64)
    for o, blocks in enumerate(orders):
        for r, block in enumerate(blocks):
            ranks[o, list(block)] = r + 1
    assert sum(weights) == den
    return ranks, weights, den


def one_round_outcomes(edges, k, states, ranks, variant):
    """Next states for every state row and every ell ranking on a ``k``-agent graph."""
    adj = np.zeros((k, k), dtype=bool)
    for u, v in edges:
        adj[u, v] = adj[v, u] = True
    S = states[:, None, :]
    L = ranks[None, :, :]
    Sb, Lb = np.broadcast_arrays(S, L)
    nb_in = np.where(adj[None, None, :, :], np.where(Sb == IN, Lb, 0)[:, :, None, :], 0).max(axis=-1)
    nb_un = np.where(adj[None, None, :, :], np.where(Sb == UN, Lb, 0)[:, :, None, :], 0).max(axis=-1)
    h0, hc = heard_flags(Sb, Lb, nb_in, nb_un, variant, default_hearing(variant))
    return transition_array(Sb, h0, hc, variant), adj


def one_round_leader_check(max_agents=4, variant="sj", p=Fraction(1, 2)):
    """Exact check over every small network, configuration and subset of active agents.

    For a subset ``X`` of the active agents let ``p_X`` be the probability
    that no agent of ``X`` is In after one round; the claim is that some agent
    of ``X`` is In with no In neighbour with probability at least
    ``(1 - p_X) / 2``. Because transitions only compare ell values of
    neighbours, the outcome depends on the weak ordering of the ell values
    alone, whose probabilities are exact rationals.

    Returns ``(cases_checked, violations)`` where each violation is
    ``(edges, states, X, Pr[some In^~In], p_X)``.
    """
    variant = ProtocolVariant(variant)
    checked, bad = 0, []
    for k in range(1, max_agents + 1):
        ranks, weights, den = _ordering_table(k, Fraction(p))
        states = np.array(list(product((OUT, IN, UN), repeat=k)), dtype=np.int8)
        pairs = list(combinations(range(k), 2))
        for mask in range(1 << len(pairs)):
            edges = [pairs[b] for b in range(len(pairs)) if mask >> b & 1]
            nxt, adj = one_round_outcomes(edges, k, states, ranks, variant)
            is_in = nxt == IN
            lead = is_in & ~(adj[None, None] & is_in[:, :, None, :]).any(axis=-1)
            # active agents of each configuration
            s_in = states == IN
            s_lead = s_in & ~(adj[None] & s_in[:, None, :]).any(axis=-1)
            elim = s_lead | (adj[None] & s_lead[:, None, :]).any(axis=-1)
            for c in range(states.shape[0]):
                act = [v for v in range(k) if not elim[c, v]]
                for size in range(1, len(act) + 1):
                    for X in combinations(act, size):
                        X = list(X)
                        none_in = ~is_in[c][:, X].any(axis=1)
                        some_lead = lead[c][:, X].any(axis=1)
                        P = sum(weights[none_in])
                        Q = sum(weights[some_lead])
                        checked += 1
                        if 2 * Q < den - P:
                            bad.append((edges, tuple(int(s) for s in states[c]), tuple(X),
                                        Fraction(int(Q), den), Fraction(int(P), den)))
    return checked, bad


# --- lock-step degeneration ------------------------------------------------------------


def degeneration_mismatches(net, params, variant="singing", seed=0, rounds=None, init_states=None):
    """Compare an asynchronous run under a lock-step schedule with the synchronous run.

    Durations are fixed at ``t_min``, delays at ``delta_max`` and every agent
    starts at tick 0, so asynchronous round ``k`` coincides with synchronous
    round ``k + 1``. Returns ``(compared, mismatches)`` over (agent, round)
    pairs, comparing the state, ell and next state of each round.
    """
    init = init_states or {u: UN for u in net.agents}
    rounds = rounds or 4 * max(1, len(net)).bit_length() + 8
    sync = run_sync(net, init, variant=variant, seed=seed, max_rounds=rounds, stop_on_convergence=False)
    tr = run_async(net, init, params, synchronous_policy(params), variant=variant, seed=seed,
                   horizon=rounds * params.t_min, stop_on_convergence=False)
    R = tr.rounds
    compared, bad = 0, []
    ids = tr.topo.ids
    for row in range(len(tr)):
        k = int(R["idx"][row])
        if k >= len(sync.rounds) or R["next_state"][row] < 0:
            continue
        rec = sync.rounds[k]
        i = int(np.searchsorted(rec.agents, ids[R["pos"][row]]))
        compared += 1
        got = (int(R["state"][row]), int(R["ell"][row]), int(R["next_state"][row]))
        want = (int(rec.state[i]), int(rec.ell[i]), int(rec.next_state[i]))
        if got != want:
            bad.append((int(ids[R["pos"][row]]), k, got, want))
    return compared, bad
