"""Anonymity-set sizes seen by compromised ASes on a path.

A compromised AS observes only the link a packet came in on and the link it
leaves on.  Candidate senders are the first ASes of every simple path of at
most `max_len` ASes that passes through (previous AS, compromised AS, next AS)
in that order; candidate receivers are the last ASes of the same paths.  When
headers leak the position, only paths with the observed distances count.

A first-hop or last-hop AS sees the end host directly, so the corresponding
set is that single host.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

HOST = None  # marks an end-host link in an observation


@dataclass
class AsGraph:
    hosts: dict = field(default_factory=dict)  # AS -> host count
    adj: dict = field(default_factory=dict)  # AS -> set of neighbours
    paths: list = field(default_factory=list)

    def add_as(self, asn: int, hosts: int) -> None:
        if hosts < 0:
            raise ValueError("host count must be >= 0")
        self.hosts[asn] = hosts
        self.adj.setdefault(asn, set())

    def add_edge(self, a: int, b: int) -> None:
        for x in (a, b):
            if x not in self.hosts:
                raise ValueError(f"unknown AS {x}")
        self.adj[a].add(b)
        self.adj[b].add(a)

    def add_path(self, path: Iterable[int]) -> None:
        path = list(path)
        for a, b in zip(path, path[1:]):
            if b not in self.adj.get(a, ()):
                raise ValueError(f"path uses missing edge {a}-{b}")
        if len(set(path)) != len(path):
            raise ValueError("path revisits an AS")
        self.paths.append(path)

    def host_count(self, ases: Iterable[int]) -> int:
        return sum(self.hosts[a] for a in ases)


@dataclass(frozen=True)
class CompromiseScenario:
    path: tuple
    compromised: frozenset
    position_known: bool = False
    correlating: bool = True

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(self.path))
        object.__setattr__(self, "compromised", frozenset(self.compromised))
        if not self.compromised:
            raise ValueError("at least one compromised position is required")
        for i in self.compromised:
            if not 0 <= i < len(self.path):
                raise ValueError(f"compromised index {i} is not on the path")


@dataclass(frozen=True)
class AnonymitySets:
    senders: frozenset  # ASes; empty when the sender host is seen directly
    receivers: frozenset
    size_s: int
    size_d: int

    @property
    def size_r(self) -> int:
        return self.size_s * self.size_d


def _walks(adj: dict, start: int, banned: set, max_edges: int):
    """(endpoint, edges, nodes) for every simple walk from start of at most max_edges edges."""
    stack = [(start, 0, (start,))]
    while stack:
        node, depth, seen = stack.pop()
        yield node, depth, seen
        if depth == max_edges:
            continue
        for nb in adj[node]:
            if nb not in seen and nb not in banned:
                stack.append((nb, depth + 1, seen + (nb,)))


def observe_sets(graph: AsGraph, prev: Optional[int], node: int, nxt: Optional[int],
                 max_len: int = 7, dist: Optional[tuple] = None) -> tuple:
    """Candidate (sender ASes, receiver ASes) for an observation at `node`.

    `dist` = (hops back to sender AS, hops on to receiver AS) restricts the
    search to that exact position.  Returns None in place of a set when that
    side is the local host.
    """
    if prev is None and nxt is None:
        return None, None
    senders, receivers = set(), set()
    budget = max_len - 1  # edges in the whole path
    back = [(node, 0, (node,))] if prev is None else [
        (a, d + 1, s) for a, d, s in _walks(graph.adj, prev, {node}, budget - 1)]
    for a, db, seen_b in back:
        if dist and db != dist[0]:
            continue
        room = budget - db
        if nxt is None:
            fwd = [(node, 0)]
        elif room < 1 or nxt in seen_b:
            continue
        else:
            fwd = [(b, d + 1) for b, d, _ in _walks(graph.adj, nxt, set(seen_b) | {node}, room - 1)]
        for b, df in fwd:
            if dist and df != dist[1]:
                continue
            senders.add(a)
            receivers.add(b)
    return (None if prev is None else frozenset(senders),
            None if nxt is None else frozenset(receivers))


def _single(graph: AsGraph, path: tuple, i: int, position_known: bool, max_len: int) -> AnonymitySets:
    prev = path[i - 1] if i > 0 else None
    nxt = path[i + 1] if i + 1 < len(path) else None
    dist = (i, len(path) - 1 - i) if position_known else None
    s, d = observe_sets(graph, prev, path[i], nxt, max_len, dist)
    size_s = 1 if s is None else graph.host_count(s)
    size_d = 1 if d is None else graph.host_count(d)
    return AnonymitySets(s or frozenset(), d or frozenset(), size_s, size_d)


def anonymity_sets(graph: AsGraph, scenario: CompromiseScenario, max_len: int = 7) -> AnonymitySets:
    if len(scenario.compromised) != 1:
        raise ValueError("anonymity_sets takes a single compromised AS; use multi_compromise")
    (i,) = scenario.compromised
    return _single(graph, scenario.path, i, scenario.position_known, max_len)


def multi_compromise(graph: AsGraph, scenario: CompromiseScenario, max_len: int = 7) -> int:
    """Relationship set size when several ASes on the path are compromised.

    Correlating adversaries intersect their knowledge (product of minima);
    without correlation the best single observation wins (minimum of products).
    """
    obs = [_single(graph, scenario.path, i, scenario.position_known, max_len)
           for i in sorted(scenario.compromised)]
    if scenario.correlating:
        return min(o.size_s for o in obs) * min(o.size_d for o in obs)
    return min(o.size_r for o in obs)


def build_toy_topology() -> AsGraph:
    """Six-AS example: AS0-AS1-AS2-AS3 with AS4 and AS5 hanging off AS3."""
    g = AsGraph()
    for asn, h in ((0, 8), (1, 8), (2, 24), (3, 8), (4, 8), (5, 8)):
        g.add_as(asn, h)
    for a, b in ((0, 1), (1, 2), (2, 3), (3, 4), (3, 5)):
        g.add_edge(a, b)
    g.add_path([0, 1, 2, 3])
    return g


def parse_graph(text: str) -> AsGraph:
    """Parse the adjacency text format.

    Each non-comment line is either ``<as> <hosts> : <neighbour> ...`` or
    ``path <as> <as> ...``.  Edges may be listed from either side.
    """
    g = AsGraph()
    edges, paths = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("path"):
                paths.append([int(x) for x in line.split()[1:]])
                continue
            head, _, tail = line.partition(":")
            asn, hosts = (int(x) for x in head.split())
            g.add_as(asn, hosts)
            edges.extend((asn, int(x)) for x in tail.split())
        except ValueError as e:
            raise ValueError(f"line {lineno}: {e}") from None
    for a, b in edges:
        g.add_edge(a, b)
    for p in paths:
        g.add_path(p)
    return g


def format_graph(g: AsGraph) -> str:
    lines = [f"{a} {g.hosts[a]} : " + " ".join(str(b) for b in sorted(g.adj[a])) for a in sorted(g.hosts)]
    lines += ["path " + " ".join(map(str, p)) for p in g.paths]
    return "\n".join(lines) + "\n"
