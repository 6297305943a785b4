"""Independent reference implementations used only by the tests.

Nothing here imports the simulator or solvers under test: circuits are built
as full 2^n x 2^n matrices from Pauli Kronecker products and exponentiated
with scipy, solvers loop over itertools products.
"""
import itertools
from functools import reduce

import numpy as np
from scipy.linalg import expm

I2 = np.eye(2)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)


def on_qubit(op, i, n):
    # kron order puts qubit 0 in the least significant position
    mats = [op if q == i else I2 for q in reversed(range(n))]
    return reduce(np.kron, mats)


def neighbors(n, edges):
    nb = {i: set() for i in range(n)}
    for u, v in edges:
        nb[u].add(v)
        nb[v].add(u)
    return nb


def maxcut_hamiltonian(n, edges):
    dim = 2 ** n
    h = np.zeros((dim, dim), dtype=complex)
    for u, v in edges:
        h += 0.5 * (on_qubit(Z, u, n) @ on_qubit(Z, v, n) - np.eye(dim))
    return h


def mis_hamiltonian(n):
    return sum(on_qubit(Z, i, n) for i in range(n))


def x_mixer(n):
    return sum(on_qubit(X, i, n) for i in range(n))


def partial_mixer_term(n, edges, i):
    nb = neighbors(n, edges)[i]
    dim = 2 ** n
    term = on_qubit(X, i, n)
    for k in nb:
        term = term @ (np.eye(dim) + on_qubit(Z, k, n))
    return term * 2.0 ** (-len(nb))


def mis_mixer_unitary(n, edges, beta):
    u = np.eye(2 ** n, dtype=complex)
    for i in range(n):
        u = expm(-1j * beta * partial_mixer_term(n, edges, i)) @ u
    return u


def qaoa_state(problem, n, edges, gammas, betas):
    dim = 2 ** n
    if problem == "maxcut":
        psi = np.ones(dim, dtype=complex) / np.sqrt(dim)
        hc, hb = maxcut_hamiltonian(n, edges), x_mixer(n)
        for g, b in zip(gammas, betas):
            psi = expm(-1j * b * hb) @ (expm(-1j * g * hc) @ psi)
        return psi
    psi = np.zeros(dim, dtype=complex)
    psi[0] = 1.0
    hc = mis_hamiltonian(n)
    for g, b in zip(gammas, betas):
        psi = mis_mixer_unitary(n, edges, b) @ (expm(-1j * g * hc) @ psi)
    return psi


def bits(b, n):
    return [(b >> i) & 1 for i in range(n)]


def cut_value(x, edges):
    return sum(1 for u, v in edges if x[u] != x[v])


def is_independent(x, edges):
    return all(not (x[u] and x[v]) for u, v in edges)


def expected_objective(problem, psi, n, edges):
    probs = np.abs(psi) ** 2
    total = 0.0
    for b in range(2 ** n):
        x = bits(b, n)
        total += probs[b] * (cut_value(x, edges) if problem == "maxcut" else sum(x))
    return total


def brute_maxcut(n, edges):
    vals = {}
    for x in itertools.product([0, 1], repeat=n):
        vals[x] = cut_value(x, edges)
    best = max(vals.values())
    return best, {x for x, v in vals.items() if v == best}


def brute_mis(n, edges):
    best, sets = -1, set()
    for x in itertools.product([0, 1], repeat=n):
        if is_independent(x, edges):
            s = sum(x)
            if s > best:
                best, sets = s, set()
            if s == best:
                sets.add(frozenset(i for i in range(n) if x[i]))
    return best, sets


def pagerank_power(n, edges, damping=0.85, tol=1e-10):
    a = np.zeros((n, n))
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    deg = a.sum(axis=1)
    r = np.full(n, 1.0 / n)
    while True:
        dangling = r[deg == 0].sum()
        spread = np.where(deg > 0, r / np.where(deg > 0, deg, 1), 0.0)
        new = (1 - damping) / n + damping * (a.T @ spread + dangling / n)
        if np.abs(new - r).sum() < tol:
            return new
        r = new


def connected_graphs(max_n):
    """All labeled connected graphs with 2..max_n nodes, up to isomorphism by canonical form."""
    import networkx as nx

    seen = []
    out = []
    for n in range(2, max_n + 1):
        pairs = list(itertools.combinations(range(n), 2))
        for mask in range(1, 2 ** len(pairs)):
            edges = [pairs[j] for j in range(len(pairs)) if (mask >> j) & 1]
            g = nx.Graph()
            g.add_nodes_from(range(n))
            g.add_edges_from(edges)
            if not nx.is_connected(g):
                continue
            if any(len(h) == n and nx.is_isomorphic(g, h) for h in seen):
                continue
            seen.append(g)
            out.append((n, edges))
    return out
