"""Dense statevector simulation of the MaxCut and constrained MIS QAOA circuits.

Basis index ``b`` stores vertex ``i`` in bit ``i`` (little-endian). Gates act
in place on the last axis, so every function accepts a single state of shape
``(2**n,)`` or a batch of shape ``(B, 2**n)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import ParameterError
from .graphs import Graph, cut_counts, independent_mask, index_to_bitstring, set_sizes


class Problem(str, Enum):
    MAXCUT = "maxcut"
    MIS = "mis"


@dataclass(frozen=True)
class ParamSet:
    """Per-layer circuit angles."""

    gammas: tuple[float, ...]
    betas: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(x) for x in self.gammas))
        object.__setattr__(self, "betas", tuple(float(x) for x in self.betas))
        if len(self.gammas) != len(self.betas):
            raise ParameterError("gammas and betas must have equal length")
        if not np.all(np.isfinite(self.gammas + self.betas)):
            raise ParameterError("angles must be finite")

    @property
    def p(self) -> int:
        return len(self.gammas)

    def to_vector(self) -> np.ndarray:
        return np.array(self.gammas + self.betas)

    @classmethod
    def from_vector(cls, v) -> "ParamSet":
        v = np.asarray(v, dtype=float)
        p = len(v) // 2
        return cls(tuple(v[:p]), tuple(v[p:]))

    @classmethod
    def zeros(cls, p: int) -> "ParamSet":
        return cls((0.0,) * p, (0.0,) * p)

    def to_record(self) -> dict:
        return {"gammas": list(self.gammas), "betas": list(self.betas)}

    @classmethod
    def from_record(cls, rec: dict) -> "ParamSet":
        return cls(tuple(rec["gammas"]), tuple(rec["betas"]))


@dataclass(frozen=True, eq=False)
class CircuitSpec:
    problem: Problem
    graph: Graph
    p: int = 1

    def __post_init__(self):
        object.__setattr__(self, "problem", Problem(self.problem))
        if self.p < 1:
            raise ParameterError("depth p must be >= 1")

    @property
    def n(self) -> int:
        return self.graph.n

    @cached_property
    def basis(self) -> np.ndarray:
        return np.arange(1 << self.n, dtype=np.int64)

    @cached_property
    def objective_values(self) -> np.ndarray:
        """Cut count (MaxCut) or set size (MIS) of every basis state."""
        if self.problem is Problem.MAXCUT:
            return cut_counts(self.graph, self.basis).astype(float)
        return set_sizes(self.n, self.basis).astype(float)

    @cached_property
    def cost_diagonal(self) -> np.ndarray:
        """Eigenvalue of the cost Hamiltonian on every basis state.

        MaxCut: sum over edges of (z_i z_j - 1)/2 = -cut(b).
        MIS: sum of Z_i = n - 2 |b|.
        """
        if self.problem is Problem.MAXCUT:
            return -self.objective_values
        return self.n - 2.0 * self.objective_values

    @cached_property
    def feasible(self) -> np.ndarray:
        return independent_mask(self.graph, self.basis)

    @cached_property
    def partial_mixer_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """For each vertex (ascending), basis indices with bit i = 0 and all
        neighbors 0, paired with the same index with bit i set."""
        pairs = []
        b = self.basis
        for i, nbrs in enumerate(self.graph.neighbors()):
            mask = ((b >> i) & 1) == 0
            for k in nbrs:
                mask &= ((b >> k) & 1) == 0
            lo = b[mask]
            pairs.append((lo, lo | (1 << i)))
        return pairs


def prepare_initial(spec: CircuitSpec, batch: int | None = None) -> np.ndarray:
    dim = 1 << spec.n
    shape = (dim,) if batch is None else (batch, dim)
    if spec.problem is Problem.MAXCUT:
        return np.full(shape, dim ** -0.5, dtype=complex)
    state = np.zeros(shape, dtype=complex)
    state[..., 0] = 1.0
    return state


def apply_phase_separator(state: np.ndarray, spec: CircuitSpec, gamma) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim:
        gamma = gamma[:, None]
    state *= np.exp(-1j * gamma * spec.cost_diagonal)
    return state


def _column(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim else x


def apply_mixer(state: np.ndarray, spec: CircuitSpec, beta) -> np.ndarray:
    """X mixer for MaxCut; ordered product of neighbor-controlled X rotations for MIS."""
    beta = np.asarray(beta, dtype=float)
    if spec.problem is Problem.MAXCUT:
        n = spec.n
        lead = state.shape[:-1]
        c = np.cos(beta).reshape(lead + (1, 1)) if beta.ndim else np.cos(beta)
        s = np.sin(beta).reshape(lead + (1, 1)) if beta.ndim else np.sin(beta)
        for i in range(n):
            view = state.reshape(lead + (1 << (n - i - 1), 2, 1 << i))
            a0 = view[..., 0, :].copy()
            a1 = view[..., 1, :]
            view[..., 0, :] = c * a0 - 1j * s * a1
            view[..., 1, :] = c * a1 - 1j * s * a0
        return state
    c = _column(np.cos(beta))
    s = _column(np.sin(beta))
    for lo, hi in spec.partial_mixer_pairs:
        a0 = state[..., lo]
        a1 = state[..., hi]
        state[..., lo] = c * a0 - 1j * s * a1
        state[..., hi] = c * a1 - 1j * s * a0
    return state


def run_circuit(spec: CircuitSpec, params: ParamSet) -> np.ndarray:
    if params.p != spec.p:
        raise ParameterError(f"expected {spec.p} layers of angles, got {params.p}")
    state = prepare_initial(spec)
    for g, b in zip(params.gammas, params.betas):
        apply_phase_separator(state, spec, g)
        apply_mixer(state, spec, b)
    return state


def run_circuit_batch(spec: CircuitSpec, thetas: np.ndarray) -> np.ndarray:
    """Run ``B`` parameter vectors ``[gammas..., betas...]`` at once; returns ``(B, 2**n)``."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[1] != 2 * spec.p:
        raise ParameterError(f"expected {2 * spec.p} angles per row, got {thetas.shape[1]}")
    state = prepare_initial(spec, batch=thetas.shape[0])
    for layer in range(spec.p):
        apply_phase_separator(state, spec, thetas[:, layer])
        apply_mixer(state, spec, thetas[:, spec.p + layer])
    return state


def probabilities(state: np.ndarray) -> np.ndarray:
    return state.real ** 2 + state.imag ** 2


def expectation(state: np.ndarray, spec: CircuitSpec):
    """Expected cut count / set size; returns an array for batched states."""
    probs = probabilities(state)
    return probs @ spec.objective_values if probs.ndim > 1 else float(probs @ spec.objective_values)


@dataclass(frozen=True)
class MeasurementDistribution:
    """Sampled outcomes keyed by basis index (see ``bitstring_counts``)."""

    counts: dict
    shots: int
    n: int

    def bitstring_counts(self) -> dict[str, int]:
        return {index_to_bitstring(b, self.n): c for b, c in self.counts.items()}

    def indices_and_counts(self) -> tuple[np.ndarray, np.ndarray]:
        keys = np.array(sorted(self.counts), dtype=np.int64)
        return keys, np.array([self.counts[k] for k in keys], dtype=np.int64)


def sample(state: np.ndarray, shots: int, seed: int) -> MeasurementDistribution:
    if shots < 1:
        raise ValueError("shots must be >= 1")
    probs = probabilities(state)
    probs = probs / probs.sum()
    n = int(np.log2(len(probs)))
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(shots, probs)
    nz = np.flatnonzero(draws)
    return MeasurementDistribution({int(b): int(draws[b]) for b in nz}, int(shots), n)


def dump_amplitudes(state: np.ndarray, path) -> None:
    """Text dump ``index re im`` per line for diffing against other simulators."""
    with open(path, "w") as fh:
        for i, a in enumerate(np.asarray(state).ravel()):
            fh.write(f"{i} {a.real:.17g} {a.imag:.17g}\n")
