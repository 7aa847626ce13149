"""Dynamic undirected networks, change scripts and affected-edge computation."""

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .protocol import AgentState, ConfigError


class NetworkError(ValueError):
    """Malformed network input or an inapplicable change event."""


def canonical(u, v):
    return (u, v) if u < v else (v, u)


class Network:
    """Undirected simple graph over integer agent ids.

    Ids are never reused within the lifetime of one network: once removed,
    an id is retired.
    """

    def __init__(self, agents=(), edges=()):
        self._adj = {}
        self._retired = set()
        for a in agents:
            self.add_agent(a)
        for u, v in edges:
            for a in (u, v):
                if a not in self._adj:
                    self.add_agent(a)
            self.add_edge(u, v)

    # queries
    @property
    def agents(self):
        return set(self._adj)

    @property
    def edges(self):
        return {canonical(u, v) for u, nbrs in self._adj.items() for v in nbrs if u < v}

    def neighbors(self, u):
        return self._adj[u]

    def degree(self, u):
        return len(self._adj[u])

    def has_edge(self, u, v):
        return u in self._adj and v in self._adj[u]

    def __contains__(self, u):
        return u in self._adj

    def __len__(self):
        return len(self._adj)

    @property
    def num_edges(self):
        return sum(len(n) for n in self._adj.values()) // 2

    def sorted_agents(self):
        return sorted(self._adj)

    def copy(self):
        net = Network()
        net._adj = {u: set(n) for u, n in self._adj.items()}
        net._retired = set(self._retired)
        return net

    def __eq__(self, other):
        return isinstance(other, Network) and self._adj == other._adj

    def __repr__(self):
        return f"Network(agents={len(self)}, edges={self.num_edges})"

    # mutation
    def add_agent(self, u):
        if not isinstance(u, int) or u < 0:
            raise NetworkError(f"agent id must be a non-negative integer, got {u!r}")
        if u in self._adj or u in self._retired:
            raise NetworkError(f"agent id {u} is not fresh")
        self._adj[u] = set()

    def remove_agent(self, u):
        if u not in self._adj:
            raise NetworkError(f"agent {u} is not present")
        for v in self._adj.pop(u):
            self._adj[v].discard(u)
        self._retired.add(u)

    def add_edge(self, u, v):
        if u == v:
            raise NetworkError(f"self-loop on agent {u}")
        if u not in self._adj or v not in self._adj:
            raise NetworkError(f"edge ({u}, {v}) references a missing agent")
        if v in self._adj[u]:
            raise NetworkError(f"edge ({u}, {v}) already present")
        self._adj[u].add(v)
        self._adj[v].add(u)

    def remove_edge(self, u, v):
        if not self.has_edge(u, v):
            raise NetworkError(f"edge ({u}, {v}) is not present")
        self._adj[u].discard(v)
        self._adj[v].discard(u)


def build_network(edge_list, agents=()):
    """Build a network from ``(u, v)`` pairs, rejecting self-loops and duplicates."""
    seen = set()
    for lineno, (u, v) in enumerate(edge_list, 1):
        if u == v:
            raise NetworkError(f"edge {lineno}: self-loop ({u}, {v})")
        if u < 0 or v < 0:
            raise NetworkError(f"edge {lineno}: negative agent id in ({u}, {v})")
        key = canonical(u, v)
        if key in seen:
            raise NetworkError(f"edge {lineno}: duplicate edge ({u}, {v})")
        seen.add(key)
    return Network(agents, seen)


# --- change events ---------------------------------------------------------


@dataclass(frozen=True)
class AddEdge:
    u: int
    v: int


@dataclass(frozen=True)
class RemoveEdge:
    u: int
    v: int


@dataclass(frozen=True)
class AddAgent:
    u: int
    state: AgentState = AgentState.UN
    edges: tuple = ()


@dataclass(frozen=True)
class RemoveAgent:
    u: int


@dataclass(frozen=True)
class ChangeEvent:
    round: int
    kind: object


@dataclass
class ChangeScript:
    events: list = field(default_factory=list)

    def __post_init__(self):
        rounds = [e.round for e in self.events]
        if any(r < 1 for r in rounds):
            raise NetworkError("change events must target rounds >= 1")
        if rounds != sorted(rounds):
            raise NetworkError("change events must be sorted by round")

    def for_round(self, r):
        return [e.kind for e in self.events if e.round == r]

    def by_round(self):
        out = {}
        for e in self.events:
            out.setdefault(e.round, []).append(e.kind)
        return out

    @property
    def last_round(self):
        return self.events[-1].round if self.events else 0

    def __len__(self):
        return len(self.events)

    def validate(self, net):
        """Dry-run every event in order against a copy of ``net``."""
        scratch = net.copy()
        for r, kinds in sorted(self.by_round().items()):
            try:
                apply_changes(scratch, kinds)
            except NetworkError as exc:
                raise NetworkError(f"round {r}: {exc}") from None


def apply_changes(net, events):
    """Apply one round's events in order; return ``(net, changed_agents)``.

    ``changed_agents`` holds every endpoint of an added or deleted edge,
    including edges that arrive or leave with an agent. ``net`` is mutated in
    place.
    """
    changed = set()
    for ev in events:
        try:
            if isinstance(ev, AddEdge):
                net.add_edge(ev.u, ev.v)
                changed.update((ev.u, ev.v))
            elif isinstance(ev, RemoveEdge):
                net.remove_edge(ev.u, ev.v)
                changed.update((ev.u, ev.v))
            elif isinstance(ev, AddAgent):
                net.add_agent(ev.u)
                for v in ev.edges:
                    net.add_edge(ev.u, v)
                    changed.update((ev.u, v))
            elif isinstance(ev, RemoveAgent):
                nbrs = set(net.neighbors(ev.u)) if ev.u in net else set()
                net.remove_agent(ev.u)
                if nbrs:
                    changed.add(ev.u)
                    changed.update(nbrs)
            else:
                raise NetworkError(f"unknown event {ev!r}")
        except NetworkError as exc:
            raise NetworkError(f"inapplicable event {ev!r}: {exc}") from None
    return net, changed


def _ball(adjs, sources, radius):
    """Agents within ``radius`` hops of ``sources`` in the union of ``adjs``."""
    dist = {s: 0 for s in sources}
    queue = deque(sources)
    while queue:
        u = queue.popleft()
        if dist[u] == radius:
            continue
        for adj in adjs:
            for v in adj.get(u, ()):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
    return dist


def affected_edges(net, changed, before=None):
    """Edges with an endpoint within distance 2 of a changed agent.

    Distances and candidate edges are taken over the union of ``net`` and
    ``before`` (the network prior to the round's events), so agents and edges
    that were just deleted still anchor the neighbourhood.
    """
    if not changed:
        return set()
    adjs = [net._adj] if before is None else [net._adj, before._adj]
    near = _ball(adjs, [c for c in changed if any(c in a for a in adjs)], 2)
    out = set()
    for u in near:
        for adj in adjs:
            for v in adj.get(u, ()):
                out.add(canonical(u, v))
    return out


def neighbourhood_edges(net, sources, radius):
    """Edges incident to any agent within ``radius`` of ``sources`` in ``net``."""
    ball = _ball([net._adj], [s for s in sources if s in net], radius)
    return {canonical(u, v) for u in ball for v in net._adj[u]}, set(ball)


# --- file formats ----------------------------------------------------------


def _content_lines(text):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_edge_list(text):
    pairs = []
    seen = set()
    for lineno, line in _content_lines(text):
        parts = line.split()
        if len(parts) != 2:
            raise NetworkError(f"line {lineno}: expected 'u v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise NetworkError(f"line {lineno}: non-integer id in {line!r}") from None
        if u < 0 or v < 0:
            raise NetworkError(f"line {lineno}: negative id in {line!r}")
        if u == v:
            raise NetworkError(f"line {lineno}: self-loop {line!r}")
        if canonical(u, v) in seen:
            raise NetworkError(f"line {lineno}: duplicate edge {line!r}")
        seen.add(canonical(u, v))
        pairs.append((u, v))
    # isolated agents travel in a '# isolated: ...' comment written by format_edge_list
    isolated = []
    for raw in text.splitlines():
        head, _, rest = raw.strip().partition(":")
        if head.replace(" ", "") == "#isolated":
            isolated += [int(x) for x in rest.split()]
    return build_network(pairs, isolated)


def read_edge_list(path):
    return parse_edge_list(Path(path).read_text(encoding="utf-8"))


def format_edge_list(net):
    lines = [f"# {len(net)} agents, {net.num_edges} edges"]
    isolated = sorted(u for u in net.agents if net.degree(u) == 0)
    if isolated:
        lines.append("# isolated: " + " ".join(map(str, isolated)))
    lines += [f"{u} {v}" for u, v in sorted(net.edges)]
    return "\n".join(lines) + "\n"


def write_edge_list(net, path):
    Path(path).write_text(format_edge_list(net), encoding="utf-8")


_STATE_NAMES = {"OUT": AgentState.OUT, "IN": AgentState.IN, "UN": AgentState.UN}


def parse_change_script(text):
    events = []
    for lineno, line in _content_lines(text):
        parts = line.split()
        try:
            rnd, op, args = int(parts[0]), parts[1], parts[2:]
            if op in ("+e", "-e"):
                if len(args) != 2:
                    raise ValueError("edge events take two ids")
                u, v = int(args[0]), int(args[1])
                kind = AddEdge(u, v) if op == "+e" else RemoveEdge(u, v)
            elif op == "+a":
                if len(args) < 2 or args[1].upper() not in _STATE_NAMES:
                    raise ValueError("agent insertion needs an id and a state in {OUT,IN,UN}")
                kind = AddAgent(int(args[0]), _STATE_NAMES[args[1].upper()], tuple(int(a) for a in args[2:]))
            elif op == "-a":
                if len(args) != 1:
                    raise ValueError("agent deletion takes one id")
                kind = RemoveAgent(int(args[0]))
            else:
                raise ValueError(f"unknown operation {op!r}")
        except (ValueError, IndexError) as exc:
            raise NetworkError(f"line {lineno}: {exc} in {line!r}") from None
        events.append(ChangeEvent(rnd, kind))
    try:
        return ChangeScript(events)
    except NetworkError as exc:
        raise NetworkError(f"change script: {exc}") from None


def read_change_script(path):
    return parse_change_script(Path(path).read_text(encoding="utf-8"))


def format_change_script(script):
    lines = []
    for e in script.events:
        k = e.kind
        if isinstance(k, AddEdge):
            lines.append(f"{e.round} +e {k.u} {k.v}")
        elif isinstance(k, RemoveEdge):
            lines.append(f"{e.round} -e {k.u} {k.v}")
        elif isinstance(k, AddAgent):
            tail = "".join(f" {v}" for v in k.edges)
            lines.append(f"{e.round} +a {k.u} {AgentState(k.state).name}{tail}")
        else:
            lines.append(f"{e.round} -a {k.u}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_change_script(script, path):
    Path(path).write_text(format_change_script(script), encoding="utf-8")


def check_states(net, states):
    """Validate that ``states`` covers every agent of ``net``."""
    missing = net.agents - set(states)
    if missing:
        raise ConfigError(f"initial states missing for agents {sorted(missing)[:10]}")
    return {u: AgentState(states[u]) for u in net.agents}
