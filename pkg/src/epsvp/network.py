"""Quasi-static nodal analysis of the distribution network.

Quantities are RMS envelopes treated as real numbers. Generators are EMF
sources behind their internal resistance, loads are resistors to ground,
closed contactors are ideal (zero-volt) branches and converters are ideal
voltage-ratio stages whose input draws ``ratio / efficiency`` times the
output current. For a fixed switching state the solution is linear in the
generator EMFs, so each state is factorised once and reused.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularNetworkError
from .requirements import DEFAULT_BANDS
from .topology import Topology

GROUND = "\0ground"


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


@dataclass
class NetworkSolution:
    voltages: dict  # node -> volts (0 for isolated nodes)
    contactor_currents: dict  # closed contactor -> amperes, signed a -> b
    source_currents: dict  # generator -> amperes delivered
    converter_currents: dict  # converter -> output amperes


class NetworkState:
    """Factorised network for one (closed contactors, shed loads) pair."""

    def __init__(self, topology: Topology, closed, shed=frozenset(), bands=None):
        self.topology = topology
        bands = bands or DEFAULT_BANDS
        closed = frozenset(closed)
        shed = frozenset(shed)
        gens = topology.sources
        self.gens = gens

        # Which nodes are tied to ground (and hence have a defined voltage).
        uf = _UnionFind()
        for n in topology.nodes:
            uf.find(n)
        for g in gens:
            uf.union(g, GROUND)
        for lid in topology.loads:
            if lid not in shed:
                uf.union(topology[lid].bus, GROUND)
        edges = [topology.edge(c) for c in sorted(closed)]
        for e in edges:
            uf.union(e.a, e.b)
        active_conv = []
        pending = list(topology.converters)
        changed = True
        while changed:
            changed = False
            for cid in list(pending):
                conv = topology[cid]
                if uf.find(conv.input) == uf.find(GROUND):
                    uf.union(conv.output, GROUND)
                    active_conv.append(cid)
                    pending.remove(cid)
                    changed = True
        ground_root = uf.find(GROUND)
        nodes = [n for n in topology.nodes if uf.find(n) == ground_root]
        live_edges = [e for e in edges if uf.find(e.a) == ground_root]
        self._check_ideal_loops(live_edges, active_conv, gens)

        idx = {n: i for i, n in enumerate(nodes)}
        n_nodes = len(nodes)
        ideal_gens = [g for g in gens if topology[g].internal_resistance == 0]
        size = n_nodes + len(live_edges) + len(ideal_gens) + len(active_conv)
        M = np.zeros((size, size))
        P = np.zeros((size, len(gens)))  # RHS = P @ emf

        for gi, g in enumerate(gens):
            r = topology[g].internal_resistance
            if r > 0:
                M[idx[g], idx[g]] += 1.0 / r
                P[idx[g], gi] = 1.0 / r
        for lid in topology.loads:
            load = topology[lid]
            if lid not in shed and load.bus in idx:
                M[idx[load.bus], idx[load.bus]] += 1.0 / load.resistance
        row = n_nodes
        for e in live_edges:
            a, b = idx[e.a], idx[e.b]
            M[a, row] += 1.0
            M[b, row] -= 1.0
            M[row, a] = 1.0
            M[row, b] = -1.0
            row += 1
        for g in ideal_gens:
            k = idx[g]
            M[k, row] -= 1.0
            M[row, k] = 1.0
            P[row, gens.index(g)] = 1.0
            row += 1
        ratios = {}
        for cid in active_conv:
            conv = topology[cid]
            in_class = _node_class(topology, conv.input)
            k = conv.effective_ratio(bands[in_class].nominal)
            ratios[cid] = k
            i_in, i_out = idx[conv.input], idx[conv.output]
            M[i_out, row] -= 1.0
            M[i_in, row] += k / conv.efficiency
            M[row, i_out] = 1.0
            M[row, i_in] = -k
            row += 1

        if size:
            try:
                self._A = np.linalg.solve(M, P)
            except np.linalg.LinAlgError:
                raise SingularNetworkError("network matrix is singular", sorted(closed)) from None
        else:
            self._A = np.zeros((0, len(gens)))
        self.nodes = nodes
        self.node_index = idx
        self.live_edges = live_edges
        self.ideal_gens = ideal_gens
        self.active_converters = active_conv
        self._r = np.array([topology[g].internal_resistance for g in gens])
        self._gen_rows = np.array([idx[g] for g in gens], dtype=int)
        self._edge_rows = np.arange(n_nodes, n_nodes + len(live_edges))
        self._conv_rows = np.arange(row - len(active_conv), row)

    def _check_ideal_loops(self, edges, converters, gens):
        """Raise if ideal branches (contactors, ideal sources) close a loop."""
        uf = _UnionFind()
        tree: dict = {}
        branches = [(e.a, e.b, e.contactor) for e in edges]
        branches += [(g, GROUND, g) for g in gens
                     if self.topology[g].internal_resistance == 0]
        branches += [(self.topology[c].output, GROUND, c) for c in converters]
        for a, b, ident in branches:
            if not uf.union(a, b):
                raise SingularNetworkError(
                    f"loop of ideal branches through {ident!r}",
                    _tree_path(tree, a, b) + [ident])
            tree.setdefault(a, []).append((b, ident))
            tree.setdefault(b, []).append((a, ident))

    def solve(self, emf) -> NetworkSolution:
        emf = np.asarray(emf, dtype=float)
        x = self._A @ emf
        topo = self.topology
        volts = {n: 0.0 for n in topo.nodes}
        for n, i in self.node_index.items():
            volts[n] = float(x[i])
        currents = {e.contactor: float(x[r]) for e, r in zip(self.live_edges, self._edge_rows)}
        src = {}
        for gi, g in enumerate(self.gens):
            if self._r[gi] > 0:
                src[g] = float((emf[gi] - volts[g]) / self._r[gi])
        row = len(self.nodes) + len(self.live_edges)
        for g in self.ideal_gens:
            src[g] = float(x[row])
            row += 1
        conv = {c: float(x[r]) for c, r in zip(self.active_converters, self._conv_rows)}
        return NetworkSolution(volts, currents, src, conv)

    def linear_map(self):
        """Matrix mapping the EMF vector to the unknown vector."""
        return self._A


def _tree_path(tree, a, b):
    """Element ids on the forest path a -> b (both in the same tree)."""
    prev = {a: None}
    stack = [a]
    while stack:
        n = stack.pop()
        if n == b:
            break
        for m, ident in tree.get(n, ()):
            if m not in prev:
                prev[m] = (n, ident)
                stack.append(m)
    path = []
    n = b
    while prev.get(n):
        n, ident = prev[n]
        path.append(ident)
    return path[::-1]


def _node_class(topology, node):
    comp = topology[node]
    if comp.kind == "Bus":
        return comp.bus_class
    return "AC" if comp.is_ac else "DC"


class NetworkCache:
    """Memoises :class:`NetworkState` objects by switching state."""

    def __init__(self, topology: Topology, bands=None):
        self.topology = topology
        self.bands = bands
        self._cache = {}

    def get(self, closed, shed=frozenset()) -> NetworkState:
        key = (frozenset(closed), frozenset(shed))
        state = self._cache.get(key)
        if state is None:
            state = NetworkState(self.topology, key[0], key[1], self.bands)
            self._cache[key] = state
        return state
