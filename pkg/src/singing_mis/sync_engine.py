"""Synchronous round execution on static or dynamic networks."""

from dataclasses import dataclass, field

import numpy as np

from . import _rng
from ._topology import Topology
from .network import AddAgent, ChangeScript, NetworkError, affected_edges, apply_changes, check_states
from .protocol import (
    IN,
    OUT,
    UN,
    AgentState,
    ConfigError,
    ProtocolVariant,
    check_pairing,
    competition_note,
    default_hearing,
    heard_flags,
    transition_array,
)
from .generators import log2_ceil


def default_round_budget(n):
    return 64 * log2_ceil(n) + 64


@dataclass
class RoundRecord:
    """One synchronous round of a single run.

    Per-agent arrays are aligned with ``agents``. ``state`` is the state held
    during the round and ``next_state`` the state committed at its end.
    """

    round: int
    agents: np.ndarray
    state: np.ndarray
    ell: np.ndarray
    heard_zero: np.ndarray
    heard_comp: np.ndarray
    next_state: np.ndarray
    changed: set
    affected: set
    active_edges: int
    variant: ProtocolVariant = ProtocolVariant.SINGING

    def states(self):
        return {int(a): AgentState(s) for a, s in zip(self.agents, self.state)}

    def next_states(self):
        return {int(a): AgentState(s) for a, s in zip(self.agents, self.next_state)}

    def heard(self, agent):
        """Notes the agent heard, restricted to its listen set."""
        i = int(np.searchsorted(self.agents, agent))
        out = set()
        if self.heard_zero[i]:
            out.add(0)
        if self.heard_comp[i]:
            out.add(competition_note(self.state[i], int(self.ell[i]), self.variant))
        return frozenset(out)


@dataclass
class Trace:
    variant: ProtocolVariant
    mode: object
    seed: int
    initial_network: object
    initial_states: dict
    rounds: list = field(default_factory=list)
    final_network: object = None
    final_states: dict = None
    termination: str = "budget"
    converged_round: int = None
    final_active_edges: int = 0
    script: object = None

    def __len__(self):
        return len(self.rounds)

    @property
    def active_edge_counts(self):
        """``e_1, ..., e_R`` followed by the count for the final states."""
        return [r.active_edges for r in self.rounds] + [self.final_active_edges]

    def network_at(self, rnd):
        """The network during round ``rnd`` (after that round's events)."""
        net = self.initial_network.copy()
        for r, kinds in sorted((self.script or ChangeScript()).by_round().items()):
            if r > rnd:
                break
            apply_changes(net, kinds)
        return net


@dataclass
class BatchResult:
    """Per-copy outcome of a batched run; every array is indexed by copy."""

    seeds: np.ndarray
    converged_round: np.ndarray
    mis_valid: np.ndarray
    in_in_rounds: np.ndarray
    final_active_edges: np.ndarray
    rounds_run: int
    active_edges: np.ndarray = None
    final_states: np.ndarray = None
    agents: np.ndarray = None

    @property
    def converged(self):
        return self.converged_round >= 0


def is_converged(net, states):
    """True iff no agent is Un and the In agents form a maximal independent set."""
    for u in net.agents:
        s = AgentState(states[u])
        if s is UN:
            return False
        in_nbrs = sum(1 for v in net.neighbors(u) if AgentState(states[v]) is IN)
        if s is IN and in_nbrs:
            return False
        if s is OUT and not in_nbrs:
            return False
    return True


def ell_table(table, default=None):
    """Forced-ell hook from ``{round: {agent: ell}}``.

    Agents missing from the table get ``default``; with ``default=None`` a
    missing entry is an error so that tests notice incomplete tables.
    """

    def fn(rnd, agents, copies):
        row = table.get(rnd, {})
        out = np.empty((copies, agents.size), dtype=np.int64)
        for j, a in enumerate(agents.tolist()):
            v = row.get(a, default)
            if v is None:
                raise KeyError(f"no forced ell for agent {a} in round {rnd}")
            out[:, j] = v
        return out

    return fn


class SyncSimulation:
    """Lock-step execution of ``C`` independent copies of one network.

    Copies share the topology and change script but have their own states and
    seeds. Each round first applies the round's change events, then every
    agent draws its ell, the note unions are gathered from the pre-round
    snapshot, and all transitions commit together.
    """

    def __init__(
        self,
        net,
        states,
        variant,
        mode=None,
        seeds=(0,),
        script=None,
        p=0.5,
        ell_fn=None,
        unsafe_pairing=False,
        record=False,
    ):
        self.variant, self.mode = check_pairing(variant, mode or default_hearing(variant), unsafe_pairing)
        if not 0.0 < p < 1.0:
            raise ConfigError(f"flip probability must lie in (0, 1), got {p!r}")
        self.net = net.copy()
        self.script = script or ChangeScript()
        self._events = self.script.by_round()
        self.seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1)
        self.copies = self.seeds.size
        self.p = p
        self.ell_fn = ell_fn
        self.record = record
        self.round = 1
        self._events_done = 0
        self.topo = Topology(self.net)
        if isinstance(states, dict):
            states = check_states(self.net, states)
            row = np.array([states[int(a)] for a in self.topo.ids], dtype=np.int8)
            self.states = np.tile(row, (self.copies, 1))
        else:
            self.states = np.array(states, dtype=np.int8).reshape(self.copies, self.topo.n)

    # -- helpers ------------------------------------------------------------
    def _apply_round_events(self):
        if self._events_done == self.round:
            return self._pending
        self._events_done = self.round
        self._pending = set(), set()
        kinds = self._events.get(self.round, [])
        if not kinds:
            return set(), set()
        before = self.net.copy()
        try:
            _, changed = apply_changes(self.net, kinds)
        except NetworkError as exc:
            raise NetworkError(f"round {self.round}: {exc}") from None
        affected = affected_edges(self.net, changed, before)
        new_states = {}
        for k in kinds:
            if isinstance(k, AddAgent):
                new_states[k.u] = int(AgentState(k.state))
        old = self.topo
        self.topo = Topology(self.net)
        states = np.empty((self.copies, self.topo.n), dtype=np.int8)
        for j, a in enumerate(self.topo.ids.tolist()):
            i = old.pos.get(a)
            states[:, j] = self.states[:, i] if i is not None and a not in new_states else new_states[a]
        self.states = states
        self._pending = changed, affected
        return changed, affected

    def begin_round(self):
        """Apply the current round's change events without running the round.

        Returns ``(changed_agents, affected_edges)``; the following
        :meth:`step` does not apply them again.
        """
        return self._apply_round_events()

    def _draw_ell(self):
        ids = self.topo.ids
        if self.ell_fn is not None:
            ell = np.asarray(self.ell_fn(self.round, ids, self.copies), dtype=np.int64)
            ell = np.broadcast_to(ell, (self.copies, ids.size)).copy()
            if (ell < 1).any():
                raise ConfigError("forced ell values must be >= 1")
            return ell
        return _rng.geometric(self.seeds[:, None], ids[None, :], self.round, self.p)

    def classify(self, states=None):
        """``(active_agents, active_edge_count)`` per copy for ``states``."""
        s = self.states if states is None else states
        topo = self.topo
        is_in = s == IN
        has_in = topo.any_neighbor(is_in)
        leader = is_in & ~has_in
        eliminated = leader | topo.any_neighbor(leader)
        active = ~eliminated
        e = (active[:, topo.eu] & active[:, topo.ev]).sum(axis=1)
        return active, e

    def validity(self, states=None):
        """Per copy: does ``states`` encode a maximal independent set with no Un."""
        s = self.states if states is None else states
        topo = self.topo
        is_in = s == IN
        has_in = topo.any_neighbor(is_in)
        bad = (s == UN) | (is_in & has_in) | ((s == OUT) & ~has_in)
        return ~bad.any(axis=1)

    def in_in_edges(self, states=None):
        s = self.states if states is None else states
        topo = self.topo
        return ((s[:, topo.eu] == IN) & (s[:, topo.ev] == IN)).sum(axis=1)

    # -- the round ------------------------------------------------------------
    def step(self, classify=False):
        changed, affected = self._apply_round_events()
        topo = self.topo
        s = self.states
        ell = self._draw_ell()
        nb_s = s[:, topo.indices]
        nb_l = ell[:, topo.indices]
        max_in = topo.segmax(np.where(nb_s == IN, nb_l, 0))
        max_un = topo.segmax(np.where(nb_s == UN, nb_l, 0))
        h0, hc = heard_flags(s, ell, max_in, max_un, self.variant, self.mode)
        nxt = transition_array(s, h0, hc, self.variant)
        out = dict(round=self.round, state=s, ell=ell, heard_zero=h0, heard_comp=hc, next_state=nxt,
                   changed=changed, affected=affected)
        if classify:
            out["active_edges"] = self.classify(s)[1]
        self.states = nxt
        self.round += 1
        return out

    @property
    def script_done(self):
        return self.round > self.script.last_round


def _record(sim, step):
    return RoundRecord(
        round=step["round"],
        agents=sim.topo.ids.copy(),
        state=step["state"][0].copy(),
        ell=step["ell"][0].copy(),
        heard_zero=step["heard_zero"][0].copy(),
        heard_comp=step["heard_comp"][0].copy(),
        next_state=step["next_state"][0].copy(),
        changed=step["changed"],
        affected=step["affected"],
        active_edges=int(step["active_edges"][0]),
        variant=sim.variant,
    )


def _converged_now(sim, step):
    ok = sim.validity()
    if sim.variant is ProtocolVariant.SELF_JAMMING:
        ok &= (step["state"] == step["next_state"]).all(axis=1)
    return ok


def run_sync(net, init_states, script=None, variant="singing", mode=None, seed=0, max_rounds=None,
             p=0.5, ell_fn=None, unsafe_pairing=False, stop_on_convergence=True):
    """Run one synchronous execution and return its :class:`Trace`."""
    sim = SyncSimulation(net, init_states, variant, mode, seeds=[seed], script=script, p=p,
                         ell_fn=ell_fn, unsafe_pairing=unsafe_pairing, record=True)
    if max_rounds is None:
        max_rounds = default_round_budget(len(net))
    if max_rounds < 1:
        raise ConfigError("max_rounds must be >= 1")
    trace = Trace(sim.variant, sim.mode, seed, net.copy(), check_states(net, init_states), script=sim.script)
    for _ in range(max_rounds):
        step = sim.step(classify=True)
        trace.rounds.append(_record(sim, step))
        if _converged_now(sim, step)[0] and sim.script_done:
            trace.termination = "converged"
            trace.converged_round = step["round"]
            if stop_on_convergence:
                break
    trace.final_network = sim.net.copy()
    trace.final_states = {int(a): AgentState(x) for a, x in zip(sim.topo.ids, sim.states[0])}
    trace.final_active_edges = int(sim.classify()[1][0])
    return trace


def run_sync_batch(net, init_states, seeds, script=None, variant="singing", mode=None, max_rounds=None,
                   p=0.5, ell_fn=None, unsafe_pairing=False, keep_active_edges=False, keep_states=False,
                   stop_on_convergence=True):
    """Run one execution per seed on copies of ``net`` and summarize each.

    Results are identical to calling :func:`run_sync` once per seed.
    """
    sim = SyncSimulation(net, init_states, variant, mode, seeds=seeds, script=script, p=p,
                         ell_fn=ell_fn, unsafe_pairing=unsafe_pairing)
    if max_rounds is None:
        max_rounds = default_round_budget(len(net))
    C = sim.copies
    conv = np.full(C, -1, dtype=np.int64)
    in_in_rounds = np.zeros(C, dtype=np.int64)
    history = []
    rounds_run = 0
    for _ in range(max_rounds):
        step = sim.step(classify=keep_active_edges)
        rounds_run += 1
        in_in_rounds += sim.in_in_edges(step["state"]) > 0
        if keep_active_edges:
            history.append(step["active_edges"])
        if sim.script_done:
            done = _converged_now(sim, step) & (conv < 0)
            conv[done] = step["round"]
        if stop_on_convergence and (conv >= 0).all():
            break
    in_in_rounds += sim.in_in_edges() > 0
    res = BatchResult(
        seeds=sim.seeds.copy(),
        converged_round=conv,
        mis_valid=sim.validity(),
        in_in_rounds=in_in_rounds,
        final_active_edges=sim.classify()[1],
        rounds_run=rounds_run,
    )
    if keep_active_edges:
        history.append(sim.classify()[1])
        res.active_edges = np.array(history)
    if keep_states:
        res.final_states = sim.states.copy()
        res.agents = sim.topo.ids.copy()
    return res
