"""Objective, finite-difference gradients and Adam optimization of QAOA angles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericalError, ParameterError
from .simulator import CircuitSpec, ParamSet, expectation, run_circuit, run_circuit_batch

FD_STEP = 1e-3


@dataclass(frozen=True)
class OptConfig:
    max_steps: int = 200
    tol: float = 1e-6
    step_size: float = 0.05
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    fd_step: float = FD_STEP

    def __post_init__(self):
        if self.max_steps < 1:
            raise ParameterError("max_steps must be >= 1")
        if self.tol < 0:
            raise ParameterError("tol must be >= 0 (0 disables early stopping)")


@dataclass
class OptTrace:
    objective_per_step: list[float]
    final_params: ParamSet
    final_objective: float
    steps_taken: int
    converged: bool
    init_params: ParamSet | None = None
    params_per_step: list[ParamSet] = field(default_factory=list, repr=False)


def objective(spec: CircuitSpec, params: ParamSet) -> float:
    return expectation(run_circuit(spec, params), spec)


def _stencil(theta: np.ndarray, h: float) -> np.ndarray:
    """Rows: theta, then theta +/- h e_k for every coordinate k."""
    d = len(theta)
    rows = np.repeat(theta[None, :], 2 * d + 1, axis=0)
    for k in range(d):
        rows[1 + 2 * k, k] += h
        rows[2 + 2 * k, k] -= h
    return rows


def _value_and_grad(spec: CircuitSpec, theta: np.ndarray, h: float) -> tuple[float, np.ndarray]:
    vals = expectation(run_circuit_batch(spec, _stencil(theta, h)), spec)
    grad = (vals[1::2] - vals[2::2]) / (2.0 * h)
    return float(vals[0]), grad


def gradient(spec: CircuitSpec, params: ParamSet, h: float = FD_STEP) -> np.ndarray:
    """Central differences, ordered ``[gamma_1..gamma_p, beta_1..beta_p]``."""
    if h <= 0:
        raise ValueError("h must be positive")
    return _value_and_grad(spec, params.to_vector(), h)[1]


def optimize(spec: CircuitSpec, init: ParamSet, cfg: OptConfig) -> OptTrace:
    """Adam ascent on the expected objective.

    Stops after ``cfg.max_steps`` updates or once consecutive objective
    values differ by less than ``cfg.tol``.
    """
    if init.p != spec.p:
        raise ParameterError(f"init has {init.p} layers, circuit has {spec.p}")
    theta = init.to_vector()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    value, grad = _value_and_grad(spec, theta, cfg.fd_step)
    trace = [value]
    history = [init]
    converged = False
    steps = 0
    for t in range(1, cfg.max_steps + 1):
        g = -grad  # descend on the negated objective
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        theta = theta - cfg.step_size * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_value, grad = _value_and_grad(spec, theta, cfg.fd_step)
        steps = t
        if not (math.isfinite(new_value) and np.all(np.isfinite(theta))):
            partial = OptTrace(trace, history[-1], trace[-1], steps - 1, False, init, history)
            raise NumericalError(f"non-finite objective at step {t}", trace=partial)
        trace.append(new_value)
        history.append(ParamSet.from_vector(theta))
        if cfg.tol > 0 and abs(new_value - value) < cfg.tol:
            converged = True
            break
        value = new_value
    return OptTrace(trace, history[-1], trace[-1], steps, converged, init, history)


def random_init(p: int, seed: int) -> ParamSet:
    """gamma ~ U(-pi, pi), beta ~ U(-pi/2, pi/2) per layer."""
    rng = np.random.default_rng(seed)
    gammas = rng.uniform(-np.pi, np.pi, size=p)
    betas = rng.uniform(-np.pi / 2, np.pi / 2, size=p)
    return ParamSet(tuple(gammas), tuple(betas))


def multistart(spec: CircuitSpec, n_starts: int, cfg: OptConfig) -> list[OptTrace]:
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    return [optimize(spec, random_init(spec.p, cfg.seed + i), cfg) for i in range(n_starts)]


def warm_start(spec: CircuitSpec, init: ParamSet, steps: int = 10, cfg: OptConfig | None = None) -> OptTrace:
    """Run exactly ``steps`` Adam updates from ``init`` (no early stopping)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cfg = replace(cfg or OptConfig(), max_steps=steps, tol=0.0)
    return optimize(spec, init, cfg)
