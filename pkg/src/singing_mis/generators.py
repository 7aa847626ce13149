"""Graph families and the churn-script generator used by the harness."""

import math
from dataclasses import dataclass

import numpy as np

from .network import AddAgent, AddEdge, ChangeEvent, ChangeScript, Network, RemoveAgent, RemoveEdge, canonical
from .protocol import AgentState, ConfigError


@dataclass(frozen=True)
class GeneratorSpec:
    family: str
    params: tuple

    def build(self, seed=0):
        return generate(self, seed)

    def __str__(self):
        return f"{self.family}:" + ",".join(str(p) for p in self.params)


_ARITY = {"gnp": 2, "ring": 1, "grid": 2, "complete": 1, "star": 1, "path": 1}


def parse_generator(text):
    """Parse ``family:params``, e.g. ``gnp:256,0.05`` or ``grid:16x16``."""
    family, _, rest = text.strip().partition(":")
    family = family.lower()
    if family not in _ARITY:
        raise ConfigError(f"unknown generator {family!r}; expected one of {sorted(_ARITY)}")
    raw = [p for p in rest.replace("x", ",").split(",") if p.strip()]
    if len(raw) != _ARITY[family]:
        raise ConfigError(f"generator {family!r} takes {_ARITY[family]} parameter(s), got {rest!r}")
    try:
        if family == "gnp":
            params = (int(raw[0]), float(raw[1]))
        else:
            params = tuple(int(p) for p in raw)
    except ValueError:
        raise ConfigError(f"bad parameters for {family!r}: {rest!r}") from None
    spec = GeneratorSpec(family, params)
    _check(spec)
    return spec


def _check(spec):
    if any(p < 1 for p in spec.params[: 2 if spec.family == "grid" else 1]):
        raise ConfigError(f"{spec}: sizes must be >= 1")
    if spec.family == "gnp" and not 0.0 <= spec.params[1] <= 1.0:
        raise ConfigError(f"{spec}: edge probability must lie in [0, 1]")


def gnp(n, p, seed=0):
    """Erdos-Renyi graph; edges are found by geometric skips over the pair index."""
    rng = np.random.default_rng(seed)
    total = n * (n - 1) // 2
    if p <= 0.0 or total == 0:
        return Network(range(n))
    if p >= 1.0:
        return complete(n)
    picks = []
    pos = -1
    while pos < total:
        want = int((total - pos) * p * 1.1) + 64
        gaps = rng.geometric(p, size=want)
        run = pos + np.cumsum(gaps)
        picks.append(run[run < total])
        pos = int(run[-1])
    k = np.concatenate(picks)
    # row i owns pair indices [start[i], start[i+1])
    rows = np.arange(n, dtype=np.int64)
    start = rows * (n - 1) - rows * (rows - 1) // 2
    i = np.searchsorted(start, k, side="right") - 1
    j = k - start[i] + i + 1
    return Network(range(n), zip(i.tolist(), j.tolist()))


def ring(n):
    if n <= 2:
        return path(n)
    return Network(range(n), [(i, (i + 1) % n) for i in range(n)])


def path(n):
    return Network(range(n), [(i, i + 1) for i in range(n - 1)])


def grid(rows, cols):
    idx = lambda r, c: r * cols + c  # noqa: E731
    edges = [(idx(r, c), idx(r, c + 1)) for r in range(rows) for c in range(cols - 1)]
    edges += [(idx(r, c), idx(r + 1, c)) for r in range(rows - 1) for c in range(cols)]
    return Network(range(rows * cols), edges)


def complete(n):
    return Network(range(n), [(i, j) for i in range(n) for j in range(i + 1, n)])


def star(n):
    return Network(range(n), [(0, i) for i in range(1, n)])


def generate(spec, seed=0):
    if isinstance(spec, str):
        spec = parse_generator(spec)
    _check(spec)
    f, p = spec.family, spec.params
    if f == "gnp":
        return gnp(p[0], p[1], seed)
    if f == "grid":
        return grid(p[0], p[1])
    return {"ring": ring, "complete": complete, "star": star, "path": path}[f](p[0])


def churn_script(net, rounds, q, seed=0, fault_rate=0.0, start_round=2):
    """Random edge churn recorded as a replayable :class:`ChangeScript`.

    Each round every present edge is deleted with probability ``q``, and each
    pair in a pool of absent pairs (as large as the current edge set) is
    inserted with probability ``q``. With ``fault_rate > 0`` each agent is also
    replaced, with that probability, by a fresh agent in an arbitrary state
    carrying the same edges.
    """
    rng = np.random.default_rng(seed)
    net = net.copy()
    next_id = max(net.agents, default=-1) + 1
    events = []
    for r in range(start_round, start_round + rounds):
        agents = net.sorted_agents()
        edges = sorted(net.edges)
        kinds = []
        for u, v in edges:
            if rng.random() < q:
                kinds.append(RemoveEdge(u, v))
        pool = max(len(edges), 1)
        if len(agents) >= 2:
            for _ in range(pool):
                u, v = rng.choice(len(agents), size=2, replace=False)
                u, v = canonical(agents[u], agents[v])
                if not net.has_edge(u, v) and rng.random() < q:
                    kinds.append(AddEdge(u, v))
        kinds = list(dict.fromkeys(kinds))
        for k in kinds:
            (net.remove_edge if isinstance(k, RemoveEdge) else net.add_edge)(k.u, k.v)
        if fault_rate > 0:
            for u in list(net.sorted_agents()):
                if rng.random() < fault_rate:
                    nbrs = tuple(sorted(net.neighbors(u)))
                    state = AgentState(int(rng.integers(3)))
                    net.remove_agent(u)
                    net.add_agent(next_id)
                    for v in nbrs:
                        net.add_edge(next_id, v)
                    kinds += [RemoveAgent(u), AddAgent(next_id, state, nbrs)]
                    next_id += 1
        events += [ChangeEvent(r, k) for k in kinds]
    return ChangeScript(events)


def log2_ceil(n):
    return max(1, math.ceil(math.log2(n + 1)))
