"""Random graph families, node features and exhaustive MaxCut / MIS solvers."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import CapacityError, ParameterError

FAMILIES = ("ER", "RR", "WS", "BA")
MAX_EXACT_NODES = 26
_CHUNK_BITS = 20

FEATURE_NAMES = (
    "degree",
    "clustering",
    "core_number",
    "betweenness",
    "pagerank",
    "triangles",
)


@dataclass(frozen=True, eq=True)
class Graph:
    """Undirected, unweighted simple graph on nodes ``0..n-1``."""

    id: str
    n: int
    edges: tuple[tuple[int, int], ...]
    family: str = "ER"
    gen_params: dict = field(default_factory=dict, compare=True, hash=False)
    seed: int = 0

    def __post_init__(self):
        clean = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if u > v:
                u, v = v, u
            if v >= self.n or u < 0:
                raise ValueError(f"edge ({u}, {v}) out of range for n={self.n}")
            clean.add((u, v))
        object.__setattr__(self, "edges", tuple(sorted(clean)))

    __hash__ = None

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]], graph_id: str = "g",
                   family: str = "ER", gen_params: dict | None = None, seed: int = 0) -> "Graph":
        return cls(graph_id, n, tuple(tuple(e) for e in edges), family, dict(gen_params or {}), seed)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return [sorted(x) for x in nbrs]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1.0
        return a

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    def relabel(self, perm: Sequence[int], graph_id: str | None = None) -> "Graph":
        """Return the graph with node ``i`` renamed ``perm[i]``."""
        perm = [int(x) for x in perm]
        if sorted(perm) != list(range(self.n)):
            raise ValueError("perm must be a permutation of range(n)")
        edges = tuple((perm[u], perm[v]) for u, v in self.edges)
        return Graph(graph_id or self.id, self.n, edges, self.family, dict(self.gen_params), self.seed)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "family": self.family,
            "gen_params": self.gen_params,
            "n": self.n,
            "seed": self.seed,
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Graph":
        return cls(rec["id"], int(rec["n"]), tuple(tuple(e) for e in rec["edges"]),
                   rec["family"], dict(rec["gen_params"]), int(rec["seed"]))


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------

def check_params(family: str, params: dict, n: int) -> None:
    if family not in FAMILIES:
        raise ParameterError(f"unknown family {family!r}")
    if n < 2:
        raise ParameterError("n must be at least 2")
    if family == "ER":
        p = params["p"]
        if not 0.0 < p <= 1.0:
            raise ParameterError(f"ER edge probability {p} outside (0, 1]")
    elif family == "RR":
        d = params["d"]
        if d < 1 or d >= n:
            raise ParameterError(f"RR degree {d} infeasible for n={n}")
        if (n * d) % 2:
            raise ParameterError(f"RR requires n*d even (n={n}, d={d})")
    elif family == "WS":
        k, pr = params["k"], params["p_r"]
        if k < 1 or k >= n:
            raise ParameterError(f"WS neighbor count {k} infeasible for n={n}")
        if not 0.0 <= pr <= 1.0:
            raise ParameterError(f"WS rewiring probability {pr} outside [0, 1]")
    elif family == "BA":
        m = params["m"]
        if not 1 <= m < n:
            raise ParameterError(f"BA requires 1 <= m < n (m={m}, n={n})")


def barabasi_albert_edges(n: int, m: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Preferential attachment from ``m`` isolated seed nodes.

    Each new node picks ``m`` distinct targets with probability proportional
    to ``degree + 1``, so the edgeless seed core is reachable. Yields
    exactly ``m * (n - m)`` edges.
    """
    deg = np.zeros(n)
    edges = []
    for new in range(m, n):
        w = deg[:new] + 1.0
        targets = rng.choice(new, size=m, replace=False, p=w / w.sum())
        for t in sorted(int(t) for t in targets):
            edges.append((t, new))
            deg[t] += 1
        deg[new] += m
    return edges


def _raw_edges(family: str, params: dict, n: int, seed: int) -> list[tuple[int, int]]:
    if family == "ER":
        return list(nx.gnp_random_graph(n, params["p"], seed=seed).edges())
    if family == "RR":
        return list(nx.random_regular_graph(params["d"], n, seed=seed).edges())
    if family == "WS":
        return list(nx.watts_strogatz_graph(n, params["k"], params["p_r"], seed=seed).edges())
    return barabasi_albert_edges(n, params["m"], np.random.default_rng(seed))


def generate_graph(family: str, params: dict, n: int, seed: int,
                   graph_id: str | None = None, max_retries: int = 1000) -> Graph:
    """Sample one graph from ``family``; deterministic in ``(family, params, n, seed)``.

    Edgeless draws are rejected and retried with ``seed + 1``; the stored
    seed is the one that produced the returned graph.
    """
    check_params(family, params, n)
    s = int(seed)
    for _ in range(max_retries):
        edges = _raw_edges(family, params, n, s)
        if edges:
            return Graph(graph_id or f"{family}-n{n}-s{s}", n, tuple(edges), family, dict(params), s)
        s += 1
    raise ParameterError(f"{family} {params} n={n}: no edges after {max_retries} retries")


# --------------------------------------------------------------------------
# node features
# --------------------------------------------------------------------------

def pagerank(g: Graph, damping: float = 0.85, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    nxg = g.to_networkx()
    pr = nx.pagerank(nxg, alpha=damping, tol=tol / max(g.n, 1), max_iter=max_iter)
    return np.array([pr[i] for i in range(g.n)])


def compute_node_features(g: Graph) -> np.ndarray:
    """Rows of ``FEATURE_NAMES`` per node, shape ``(n, 6)``."""
    nxg = g.to_networkx()
    nxg.remove_edges_from(nx.selfloop_edges(nxg))
    clustering = nx.clustering(nxg)
    core = nx.core_number(nxg)
    btw = nx.betweenness_centrality(nxg, normalized=True)
    tri = nx.triangles(nxg)
    pr = pagerank(g)
    deg = g.degrees()
    out = np.empty((g.n, len(FEATURE_NAMES)))
    for i in range(g.n):
        out[i] = (deg[i], clustering[i], core[i], btw[i], pr[i], tri[i])
    return out


# --------------------------------------------------------------------------
# exhaustive solvers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverResult:
    problem: str
    optimum: float
    optimal_configs: tuple[int, ...]
    n: int

    def bitstrings(self) -> list[str]:
        """Optimal configurations as strings, character ``i`` = vertex ``i``."""
        return [index_to_bitstring(b, self.n) for b in self.optimal_configs]

    def vertex_sets(self) -> list[frozenset[int]]:
        return [frozenset(i for i in range(self.n) if (b >> i) & 1) for b in self.optimal_configs]

    def to_record(self, graph_id: str) -> dict:
        return {"id": graph_id, "problem": self.problem, "optimum": self.optimum,
                "n": self.n, "configs": list(self.optimal_configs)}

    @classmethod
    def from_record(cls, rec: dict) -> "SolverResult":
        return cls(rec["problem"], float(rec["optimum"]), tuple(rec["configs"]), int(rec["n"]))


def index_to_bitstring(b: int, n: int) -> str:
    return "".join("1" if (b >> i) & 1 else "0" for i in range(n))


def cut_counts(g: Graph, idx: np.ndarray) -> np.ndarray:
    """Number of cut edges for each basis index in ``idx``."""
    out = np.zeros(idx.shape, dtype=np.int64)
    for u, v in g.edges:
        out += ((idx >> u) ^ (idx >> v)) & 1
    return out


def set_sizes(n: int, idx: np.ndarray) -> np.ndarray:
    out = np.zeros(idx.shape, dtype=np.int64)
    for i in range(n):
        out += (idx >> i) & 1
    return out


def independent_mask(g: Graph, idx: np.ndarray) -> np.ndarray:
    ok = np.ones(idx.shape, dtype=bool)
    for u, v in g.edges:
        ok &= (((idx >> u) & (idx >> v)) & 1) == 0
    return ok


def _enumerate(g: Graph, score) -> tuple[int, list[int]]:
    if g.n > MAX_EXACT_NODES:
        raise CapacityError(f"exhaustive enumeration limited to n <= {MAX_EXACT_NODES}, got {g.n}")
    total = 1 << g.n
    chunk = 1 << min(g.n, _CHUNK_BITS)
    best, configs = -1, []
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        vals = score(idx)
        top = int(vals.max())
        if top > best:
            best, configs = top, []
        if top == best:
            configs.extend(int(b) for b in idx[vals == best])
    return best, configs


def solve_maxcut_exact(g: Graph) -> SolverResult:
    best, configs = _enumerate(g, lambda idx: cut_counts(g, idx))
    return SolverResult("maxcut", float(best), tuple(configs), g.n)


def solve_mis_exact(g: Graph) -> SolverResult:
    def score(idx):
        return np.where(independent_mask(g, idx), set_sizes(g.n, idx), -1)

    best, configs = _enumerate(g, score)
    return SolverResult("mis", float(best), tuple(configs), g.n)


# --------------------------------------------------------------------------
# graph bank file
# --------------------------------------------------------------------------

def write_graph_bank(graphs: Iterable[Graph], path: str | Path) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_record(), sort_keys=True) + "\n")


def read_graph_bank(path: str | Path) -> list[Graph]:
    with open(path) as fh:
        return [Graph.from_record(json.loads(line)) for line in fh if line.strip()]
