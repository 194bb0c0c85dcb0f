"""Network graph model, topology generators and simple-path enumeration.

Links are stored as directed half-links in flat numpy arrays; every undirected
link ``u -- v`` becomes two half-links ``u->v`` and ``v->u`` (``twin``) with
independent counters. Nodes are kept sorted by id, so node index order equals
node id order and CSR neighbour lists double as lexicographic tie-breakers.

Topology file grammar (one statement per line, ``#`` starts a comment)::

    node <id> switch|host [name=<name>] [ip=<dotted quad>]
    link <id-a> <id-b> <capacity bits/s> [<propagation delay s>]

Capacities accept ``k``/``M``/``G`` suffixes and delays ``ms``/``us``;
``dump_topology`` writes plain floats and round-trips losslessly.
"""
from __future__ import annotations

import enum
import ipaddress
import re
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .units import format_number, parse_quantity

__all__ = [
    "NodeKind",
    "NodeId",
    "Path",
    "Topology",
    "TopologyError",
    "load_topology",
    "parse_topology",
    "dump_topology",
    "generate_fat_tree",
    "eval_tree",
    "simple_paths",
    "residual_capacity",
]

_NAME_RE = re.compile(r"^[A-Za-z0-9_.:]+$")
UNREACHABLE = -1


class TopologyError(ValueError):
    pass


class NodeKind(enum.Enum):
    SWITCH = "switch"
    HOST = "host"


@dataclass(frozen=True, order=True)
class NodeId:
    id: int
    kind: NodeKind


@dataclass(frozen=True)
class Path:
    """An acyclic path: node ids plus the half-link indices between them."""

    nodes: tuple[int, ...]
    links: tuple[int, ...]

    @property
    def source(self) -> int:
        return self.nodes[0]

    @property
    def dest(self) -> int:
        return self.nodes[-1]

    @property
    def hops(self) -> int:
        return len(self.links)

    def __len__(self) -> int:
        return len(self.links)


class Topology:
    """Immutable graph structure plus the controller's reservation ledger.

    ``reserved`` is the only mutable per-link array; it is written by the
    admission module on the controller thread.
    """

    def __init__(self, nodes, links, *, diameter: int | None = None):
        """``nodes``: iterable of (id, kind, name, ip); ``links``: (a, b, capacity, delay)."""
        nodes = sorted(nodes, key=lambda n: n[0])
        ids = [int(n[0]) for n in nodes]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise TopologyError(f"duplicate node id {dup}")
        if not ids:
            raise TopologyError("topology has no nodes")
        if any(i < 0 for i in ids):
            raise TopologyError("node ids must be unsigned")
        self.node_ids = np.asarray(ids, dtype=np.int64)
        self.kinds = tuple(NodeKind(n[1]) if not isinstance(n[1], NodeKind) else n[1] for n in nodes)
        self.names: tuple[str, ...] = tuple(
            n[2] if n[2] else f"{'h' if self.kinds[i] is NodeKind.HOST else 's'}{ids[i]}"
            for i, n in enumerate(nodes)
        )
        self.index_of = {nid: i for i, nid in enumerate(ids)}
        self.by_name = {}
        for i, name in enumerate(self.names):
            if not _NAME_RE.match(name):
                raise TopologyError(f"bad node name {name!r}")
            if name in self.by_name:
                raise TopologyError(f"duplicate node name {name!r}")
            self.by_name[name] = i
        ips = []
        for i, n in enumerate(nodes):
            ip = n[3] if len(n) > 3 else None
            if ip is None and self.kinds[i] is NodeKind.HOST:
                ip = str(ipaddress.IPv4Address(0x0A000000 + ids[i]))
            ips.append(ip)
        self.ips: tuple[str | None, ...] = tuple(ips)
        self.by_ip = {ip: i for i, ip in enumerate(ips) if ip is not None}

        src, dst, cap, delay = [], [], [], []
        seen = set()
        for a, b, c, d in links:
            if a not in self.index_of or b not in self.index_of:
                missing = a if a not in self.index_of else b
                raise TopologyError(f"link references unknown node {missing}")
            if a == b:
                raise TopologyError(f"self-loop on node {a}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise TopologyError(f"duplicate link {a}--{b}")
            seen.add(key)
            if not c > 0:
                raise TopologyError(f"link {a}--{b} needs positive capacity")
            if d < 0:
                raise TopologyError(f"link {a}--{b} has negative delay")
            ia, ib = self.index_of[a], self.index_of[b]
            src += [ia, ib]
            dst += [ib, ia]
            cap += [float(c), float(c)]
            delay += [float(d), float(d)]
        self.link_src = np.asarray(src, dtype=np.int64)
        self.link_dst = np.asarray(dst, dtype=np.int64)
        self.capacity = np.asarray(cap, dtype=np.float64)
        self.prop_delay = np.asarray(delay, dtype=np.float64)
        self.twin = np.arange(len(src), dtype=np.int64) ^ 1
        self.reserved = np.zeros(len(src), dtype=np.float64)

        n = len(ids)
        order = np.lexsort((self.link_dst, self.link_src))
        self.out_link = order.astype(np.int64)
        self.out_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.link_src, minlength=n), out=self.out_ptr[1:])
        order = np.lexsort((self.link_src, self.link_dst))
        self.in_link = order.astype(np.int64)
        self.in_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.link_dst, minlength=n), out=self.in_ptr[1:])
        self._link_index = {(int(s), int(d)): i for i, (s, d) in enumerate(zip(src, dst))}
        self._all = np.ones(len(src), dtype=bool)
        self._diameter = diameter
        self._validate()

    # -- structure -------------------------------------------------------------

    def _validate(self) -> None:
        degree = np.diff(self.out_ptr)
        for i, kind in enumerate(self.kinds):
            if kind is NodeKind.HOST and degree[i] != 1:
                raise TopologyError(f"host {self.names[i]} must have exactly one link")
        dist = kernels.hop_distances(self.out_ptr, self.out_link, self.link_dst, self._all, 0, -1, 1 << 30)
        if (dist < 0).any():
            lost = self.names[int(np.argmax(dist < 0))]
            raise TopologyError(f"graph is disconnected ({lost} unreachable)")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_links(self) -> int:
        """Number of directed half-links."""
        return len(self.link_src)

    def undirected_links(self) -> Iterator[int]:
        return iter(range(0, self.n_links, 2))

    def node(self, node_id: int) -> NodeId:
        return NodeId(node_id, self.kinds[self.index_of[node_id]])

    def kind(self, node_id: int) -> NodeKind:
        return self.kinds[self.index_of[node_id]]

    def name(self, node_id: int) -> str:
        return self.names[self.index_of[node_id]]

    def hosts(self) -> list[int]:
        return [int(self.node_ids[i]) for i, k in enumerate(self.kinds) if k is NodeKind.HOST]

    def switches(self) -> list[int]:
        return [int(self.node_ids[i]) for i, k in enumerate(self.kinds) if k is NodeKind.SWITCH]

    def resolve(self, ref) -> int:
        """Node id from an id, name or IP address."""
        if isinstance(ref, (int, np.integer)):
            if int(ref) not in self.index_of:
                raise KeyError(f"unknown node {ref}")
            return int(ref)
        if ref in self.by_name:
            return int(self.node_ids[self.by_name[ref]])
        if ref in self.by_ip:
            return int(self.node_ids[self.by_ip[ref]])
        if isinstance(ref, str) and ref.isdigit() and int(ref) in self.index_of:
            return int(ref)
        raise KeyError(f"unknown node {ref!r}")

    def neighbors(self, node_id: int) -> list[int]:
        i = self.index_of[node_id]
        links = self.out_link[self.out_ptr[i]:self.out_ptr[i + 1]]
        return [int(self.node_ids[j]) for j in self.link_dst[links]]

    def link_between(self, a: int, b: int) -> int:
        try:
            return self._link_index[(self.index_of[a], self.index_of[b])]
        except KeyError:
            raise TopologyError(f"no link {a}->{b}") from None

    def link_name(self, link: int) -> str:
        return f"{self.names[self.link_src[link]]}>{self.names[self.link_dst[link]]}"

    def path(self, nodes: Sequence[int]) -> Path:
        """Build a validated Path from node ids."""
        nodes = tuple(int(n) for n in nodes)
        if len(nodes) < 2:
            raise TopologyError("a path needs at least two nodes")
        if len(set(nodes)) != len(nodes):
            raise TopologyError("path repeats a node")
        links = tuple(self.link_between(a, b) for a, b in zip(nodes, nodes[1:]))
        return Path(nodes, links)

    def path_from_links(self, links) -> Path:
        links = tuple(int(x) for x in links)
        nodes = [int(self.node_ids[self.link_src[links[0]]])]
        nodes += [int(self.node_ids[self.link_dst[lk]]) for lk in links]
        return Path(tuple(nodes), links)

    def path_label(self, path: Path) -> str:
        return "-".join(self.name(n) for n in path.nodes)

    def path_from_label(self, label: str) -> Path:
        return self.path([self.resolve(part) for part in label.split("-")])

    def distances_to(self, node_id: int, max_depth: int = 1 << 30) -> np.ndarray:
        """Hop distance of every node (by index) to ``node_id``; -1 if unreachable."""
        t = self.index_of[node_id]
        return kernels.hop_distances(self.in_ptr, self.in_link, self.link_src, self._all, t, -1, max_depth)

    @property
    def diameter(self) -> int:
        if self._diameter is None:
            self._diameter = max(
                int(kernels.hop_distances(self.out_ptr, self.out_link, self.link_dst, self._all, i, -1, 1 << 30).max())
                for i in range(self.n_nodes)
            )
        return self._diameter

    @property
    def default_max_hops(self) -> int:
        return self.diameter + 1

    @cached_property
    def _routes(self) -> dict:
        return {}

    def default_route(self, source: int, dest: int) -> Path:
        """Shortest path with lexicographic tie-break (best-effort forwarding)."""
        key = (source, dest)
        if key not in self._routes:
            links = kernels.first_fit_links(
                self.capacity, np.zeros_like(self.capacity), np.zeros_like(self.capacity), -1.0,
                self.index_of[source], self.index_of[dest], 1 << 30,
                self.out_ptr, self.out_link, self.in_ptr, self.in_link, self.link_src, self.link_dst,
            )
            self._routes[key] = self.path_from_links(links)
        return self._routes[key]

    def copy(self) -> Topology:
        """Fresh topology with the same structure and an empty reservation ledger."""
        return parse_topology(dump_topology(self))

    def __repr__(self) -> str:
        hosts = sum(k is NodeKind.HOST for k in self.kinds)
        return f"Topology({self.n_nodes - hosts} switches, {hosts} hosts, {self.n_links // 2} links)"


# -- file format -----------------------------------------------------------------

def parse_topology(text: str) -> Topology:
    nodes, links = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        try:
            if words[0] == "node":
                if len(words) < 3:
                    raise ValueError("expected: node <id> <kind>")
                opts = dict(w.split("=", 1) for w in words[3:])
                unknown = set(opts) - {"name", "ip"}
                if unknown:
                    raise ValueError(f"unknown node option {sorted(unknown)[0]}")
                nodes.append((int(words[1]), NodeKind(words[2]), opts.get("name"), opts.get("ip")))
            elif words[0] == "link":
                if len(words) not in (4, 5):
                    raise ValueError("expected: link <a> <b> <capacity> [<delay>]")
                delay = parse_quantity(words[4]) if len(words) == 5 else 0.0
                links.append((int(words[1]), int(words[2]), parse_quantity(words[3]), delay))
            else:
                raise ValueError(f"unknown statement {words[0]!r}")
        except ValueError as exc:
            raise TopologyError(f"line {lineno}: {exc}") from None
    return Topology(nodes, links)


def load_topology(path) -> Topology:
    with open(path, encoding="utf-8") as fh:
        return parse_topology(fh.read())


def dump_topology(topo: Topology) -> str:
    lines = []
    for i, nid in enumerate(topo.node_ids):
        words = ["node", str(int(nid)), topo.kinds[i].value, f"name={topo.names[i]}"]
        if topo.ips[i] is not None:
            words.append(f"ip={topo.ips[i]}")
        lines.append(" ".join(words))
    for lk in topo.undirected_links():
        a = int(topo.node_ids[topo.link_src[lk]])
        b = int(topo.node_ids[topo.link_dst[lk]])
        lines.append(f"link {a} {b} {format_number(topo.capacity[lk])} {format_number(topo.prop_delay[lk])}")
    return "\n".join(lines) + "\n"


# -- generators ------------------------------------------------------------------

def generate_fat_tree(k: int, capacity: float = 1e9, delay: float = 0.0) -> Topology:
    """k-ary fat-tree: (k/2)^2 cores, k pods of k/2 aggregation + k/2 edge
    switches, k/2 hosts per edge switch.

    Ids run cores, aggregation, edge, hosts. Aggregation switch j of every pod
    uplinks to cores j*k/2 .. (j+1)*k/2 - 1. Hosts get 10.pod.edge.(i+2).
    """
    if not isinstance(k, (int, np.integer)) or k < 2 or k % 2:
        raise TopologyError(f"fat-tree arity must be an even integer >= 2, got {k!r}")
    half = k // 2
    n_core = half * half
    n_agg = k * half
    agg0 = n_core
    edge0 = agg0 + n_agg
    host0 = edge0 + n_agg
    nodes = [(c, NodeKind.SWITCH, f"c{c}", None) for c in range(n_core)]
    links = []
    for p in range(k):
        for j in range(half):
            nodes.append((agg0 + p * half + j, NodeKind.SWITCH, f"a{p}_{j}", None))
    for p in range(k):
        for j in range(half):
            nodes.append((edge0 + p * half + j, NodeKind.SWITCH, f"e{p}_{j}", None))
    for p in range(k):
        for j in range(half):
            agg = agg0 + p * half + j
            for c in range(half):
                links.append((agg, j * half + c, capacity, delay))
            edge = edge0 + p * half + j
            for a in range(half):
                links.append((edge, agg0 + p * half + a, capacity, delay))
            for h in range(half):
                host = host0 + (p * half + j) * half + h
                nodes.append((host, NodeKind.HOST, f"h{p}_{j}_{h}", f"10.{p}.{j}.{h + 2}"))
                links.append((host, edge, capacity, delay))
    return Topology(nodes, links, diameter=6)


def eval_tree(capacity: float = 20e6, delay: float = 1e-3) -> Topology:
    """Seven-switch binary tree (s1 root, s2-s3, s4-s7 edge) with hosts
    h1..h8, two per edge switch; h1, h2 under s4 and h7, h8 under s7."""
    nodes = [(i, NodeKind.SWITCH, f"s{i}", None) for i in range(1, 8)]
    links = [(1, 2, capacity, delay), (1, 3, capacity, delay)]
    links += [(2, 4, capacity, delay), (2, 5, capacity, delay)]
    links += [(3, 6, capacity, delay), (3, 7, capacity, delay)]
    for h in range(1, 9):
        nid = 7 + h
        nodes.append((nid, NodeKind.HOST, f"h{h}", f"10.0.0.{h}"))
        links.append((4 + (h - 1) // 2, nid, capacity, delay))
    return Topology(nodes, links)


# -- paths ----------------------------------------------------------------------

def simple_paths(topo: Topology, source: int, dest: int, max_hops: int | None = None) -> Iterator[Path]:
    """Yield every acyclic path of at most ``max_hops`` links, shortest first.

    Iterative deepening: for each length L the depth-limited DFS prunes any
    prefix that cannot reach ``dest`` within L hops (using BFS distances to
    ``dest``), and walks neighbours in id order, so paths of equal length come
    out lexicographically.
    """
    if source == dest:
        raise TopologyError("source and destination coincide")
    s, t = topo.index_of.get(source), topo.index_of.get(dest)
    if s is None or t is None:
        raise TopologyError(f"unknown node {source if s is None else dest}")
    if max_hops is None:
        max_hops = topo.default_max_hops
    dist = topo.distances_to(dest, max_hops)
    if dist[s] < 0:
        return
    out_ptr, out_link, link_dst = topo.out_ptr, topo.out_link, topo.link_dst
    ids = topo.node_ids
    for length in range(int(dist[s]), max_hops + 1):
        on_path = np.zeros(topo.n_nodes, dtype=bool)
        on_path[s] = True
        nodes = [s]
        links: list[int] = []
        cursor = [int(out_ptr[s])]
        while cursor:
            u = nodes[-1]
            pos = cursor[-1]
            if pos == out_ptr[u + 1]:
                cursor.pop()
                on_path[nodes.pop()] = False
                if links:
                    links.pop()
                continue
            cursor[-1] = pos + 1
            lk = int(out_link[pos])
            v = int(link_dst[lk])
            depth = len(links) + 1
            if on_path[v] or dist[v] < 0 or depth + dist[v] > length:
                continue
            if v == t:
                if depth == length:
                    yield Path(tuple(int(ids[x]) for x in nodes) + (int(ids[t]),), tuple(links) + (lk,))
                continue
            nodes.append(v)
            links.append(lk)
            on_path[v] = True
            cursor.append(int(out_ptr[v]))


def effective_load(topo: Topology, utilization: np.ndarray | None = None) -> np.ndarray:
    """Per-link load seen by admission: reserved demand or measured rate, whichever is larger."""
    if utilization is None:
        return topo.reserved
    return np.maximum(topo.reserved, utilization)


def residual_capacity(topo: Topology, path: Path, utilization: np.ndarray | None = None) -> float:
    """min over path links of capacity - max(reserved, measured), clamped at 0."""
    if not path.links:
        raise TopologyError("empty path")
    idx = np.fromiter(path.links, dtype=np.int64)
    load = topo.reserved[idx] if utilization is None else np.maximum(topo.reserved[idx], utilization[idx])
    return max(0.0, float(np.min(topo.capacity[idx] - load)))
