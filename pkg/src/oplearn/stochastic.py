"""Path simulation and the pathwise Feynman–Kac functional.

The backward problem's solution has the probabilistic representation

    u(x, t) = E[ phi(X_T) * exp(I_c(t, T))
                 - sum_k f(X_k) * exp(I_c(t, s_k)) * dt ]

where X is the diffusion started at x at time t and I_c(t, s) is the
left-endpoint Riemann sum of the running potential integral.  This module
provides a scalar reference implementation (`simulate_path` +
`feynman_kac_sample`), a vectorised accumulation kernel shared with the
dataset generator (`functional_from_values`), and the Monte Carlo oracle
`mc_solution`.

Coefficient handles (phi, c, f, b, eta) must accept numpy arrays and map
them elementwise; plain ufunc-style closures qualify.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ContractError, SimulationError

# Exponent cap for exp(I_c).  exp(35) ~ 1.6e15 is far below float64 overflow,
# but an exponent this large means the potential is too strong for the time
# horizon and the Monte Carlo variance is astronomically useless, so we stop
# early with a clear error instead of returning noise.  Coefficient draws from
# the default compact cube stay below ~18, comfortably inside the guard.
EXP_OVERFLOW_LIMIT = 35.0

# Slack factor for the per-sample boundedness assertion (pure float roundoff).
_BOUND_SLACK = 1.0 + 1e-9


@dataclass(frozen=True)
class PathConfig:
    """Time window and discretization for one simulated path."""

    t_start: float
    t_end: float
    n_steps: int
    x0: float

    def __post_init__(self):
        for name in ("t_start", "t_end", "x0"):
            if not math.isfinite(getattr(self, name)):
                raise ContractError(f"{name} must be finite")
        if not self.t_start < self.t_end:
            raise ContractError(
                f"t_start ({self.t_start}) must precede t_end ({self.t_end})")
        if self.n_steps < 1:
            raise ContractError("n_steps must be at least 1")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficient functions of the Cauchy problem.

    ``f``, ``b`` and ``eta`` default to None, meaning a zero source, zero
    drift and unit diffusion respectively.  With b and eta absent the state
    recursion is exact Brownian motion (no Euler discretization error).
    """

    phi: Callable
    c: Callable
    f: Optional[Callable] = None
    b: Optional[Callable] = None
    eta: Optional[Callable] = None
    T: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ContractError("horizon T must be finite and positive")
        for name in ("phi", "c"):
            if not callable(getattr(self, name)):
                raise ContractError(f"{name} must be callable")


@dataclass
class BrownianPath:
    """One realized trajectory: raw increments plus the visited states."""

    increments: np.ndarray
    states: np.ndarray
    t_start: float
    t_end: float

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.increments.ndim != 1 or self.states.ndim != 1:
            raise ContractError("increments and states must be 1-d")
        if self.states.shape[0] != self.increments.shape[0] + 1:
            raise ContractError("need exactly one more state than increments")
        if not self.t_start < self.t_end:
            raise ContractError("t_start must precede t_end")

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]


def simulate_path(cfg: PathConfig, spec: ProblemSpec, rng) -> BrownianPath:
    """Run Euler–Maruyama over cfg's window; exact when b and eta are absent.

    Raises SimulationError (with the step index) on a non-finite state or a
    negative diffusion value.  A well-posed problem needs eta > 0, but eta
    values of exactly zero are simulated as the degenerate (deterministic)
    limit rather than rejected.
    """
    dt = cfg.dt
    dw = rng.normal(0.0, math.sqrt(dt), cfg.n_steps)
    states = np.empty(cfg.n_steps + 1)
    states[0] = cfg.x0
    for k in range(cfg.n_steps):
        xk = states[k]
        nxt = xk
        if spec.b is not None:
            nxt = nxt + float(spec.b(xk)) * dt
        if spec.eta is not None:
            eta_k = float(spec.eta(xk))
            if not eta_k >= 0.0:
                raise SimulationError(
                    f"diffusion eta({xk}) = {eta_k} is negative",
                    step_index=k)
            nxt = nxt + eta_k * dw[k]
        else:
            nxt = nxt + dw[k]
        if not math.isfinite(nxt):
            raise SimulationError(
                f"state became non-finite at step {k}", step_index=k)
        states[k + 1] = nxt
    return BrownianPath(increments=dw, states=states,
                        t_start=cfg.t_start, t_end=cfg.t_end)


def feynman_kac_sample(path: BrownianPath, spec: ProblemSpec) -> float:
    """Scalar reference evaluation of the pathwise functional.

    Keeps running sums in plain Python; the vectorised kernel below is checked
    against this in the tests.  The time integrals are left-endpoint Riemann
    sums, so a constant potential is integrated without discretization error.
    """
    if path.t_end != spec.T:
        raise ContractError(
            f"path horizon {path.t_end} does not match spec.T {spec.T}")
    n = path.n_steps
    dt = (path.t_end - path.t_start) / n
    span = path.t_end - path.t_start

    c_running = 0.0          # sum of c(X_j) over completed left endpoints
    f_weighted = 0.0         # sum of f(X_k) * exp(I_c(t, s_k))
    max_c = -math.inf
    max_abs_f = 0.0
    for k in range(n):
        xk = float(path.states[k])
        ic_k = dt * c_running
        if ic_k > EXP_OVERFLOW_LIMIT:
            raise SimulationError(
                f"potential integral {ic_k:.3g} exceeds the exp guard "
                f"({EXP_OVERFLOW_LIMIT}); c is too large for this horizon",
                step_index=k)
        if spec.f is not None:
            fk = float(spec.f(xk))
            f_weighted += fk * math.exp(ic_k)
            max_abs_f = max(max_abs_f, abs(fk))
        ck = float(spec.c(xk))
        c_running += ck
        max_c = max(max_c, ck)
    ic_total = dt * c_running
    if ic_total > EXP_OVERFLOW_LIMIT:
        raise SimulationError(
            f"potential integral {ic_total:.3g} exceeds the exp guard "
            f"({EXP_OVERFLOW_LIMIT}); c is too large for this horizon",
            step_index=n - 1)
    phi_T = float(spec.phi(float(path.states[-1])))
    sample = phi_T * math.exp(ic_total) - dt * f_weighted

    # |X| <= |phi| e^{span*max c} + span*max|f|*e^{max(0, span*max c)}:
    # partial sums of a negative potential still allow exponents near zero,
    # hence the clamp in the source term's factor.
    bound = abs(phi_T) * math.exp(span * max_c)
    if spec.f is not None:
        bound += span * max_abs_f * math.exp(max(0.0, span * max_c))
    assert abs(sample) <= bound * _BOUND_SLACK + 1e-12
    return sample


def functional_from_values(phi_final, c_left, dt, f_left=None):
    """Vectorised pathwise functional from precomputed coefficient values.

    phi_final: (P,) final-datum values phi(X_T) per path.
    c_left:    (P, n_steps) potential values at the left endpoints.
    f_left:    optional (P, n_steps) source values at the left endpoints.

    Returns the (P,) vector of functional samples.  Raises SimulationError
    when any running exponent exceeds the guard; asserts the per-sample
    boundedness inequality.
    """
    phi_final = np.asarray(phi_final, dtype=np.float64)
    c_left = np.asarray(c_left, dtype=np.float64)
    if c_left.ndim != 2 or phi_final.shape != c_left.shape[:1]:
        raise ContractError("phi_final must be (P,) and c_left (P, n_steps)")
    n = c_left.shape[1]
    span = dt * n

    cs = np.cumsum(c_left, axis=1)
    ic_total = dt * cs[:, -1]
    # exclusive prefix sums: I_c at left endpoint k sums c over j < k
    ic_prefix = dt * np.concatenate(
        [np.zeros((c_left.shape[0], 1)), cs[:, :-1]], axis=1)
    per_path_worst = np.maximum(np.max(ic_prefix, axis=1), ic_total)
    worst = float(np.max(per_path_worst))
    if worst > EXP_OVERFLOW_LIMIT:
        bad = int(np.argmax(per_path_worst))
        raise SimulationError(
            f"potential integral {worst:.3g} exceeds the exp guard "
            f"({EXP_OVERFLOW_LIMIT}); c is too large for this horizon",
            record_index=bad)

    samples = phi_final * np.exp(ic_total)
    max_c = np.max(c_left, axis=1)
    bound = np.abs(phi_final) * np.exp(span * max_c)
    if f_left is not None:
        f_left = np.asarray(f_left, dtype=np.float64)
        if f_left.shape != c_left.shape:
            raise ContractError("f_left must match c_left's shape")
        samples = samples - dt * np.sum(f_left * np.exp(ic_prefix), axis=1)
        bound = bound + span * np.max(np.abs(f_left), axis=1) \
            * np.exp(np.maximum(0.0, span * max_c))
    assert np.all(np.abs(samples) <= bound * _BOUND_SLACK + 1e-12)
    return samples


def _evolve_block(x, t, spec: ProblemSpec, n_paths, n_steps, rng):
    """Simulate n_paths trajectories on [t, spec.T] as one (P, S+1) array.

    Draws are consumed in the same order as per-path simulate_path calls
    (row-major), and states are advanced step by step with the same
    associativity, so the two routes agree to the last bit.
    """
    dt = (spec.T - t) / n_steps
    dw = rng.normal(0.0, math.sqrt(dt), (n_paths, n_steps))
    states = np.empty((n_paths, n_steps + 1))
    states[:, 0] = x
    exact = spec.b is None and spec.eta is None
    for k in range(n_steps):
        xk = states[:, k]
        if exact:
            states[:, k + 1] = xk + dw[:, k]
            continue
        nxt = xk
        if spec.b is not None:
            nxt = nxt + np.asarray(spec.b(xk), dtype=np.float64) * dt
        if spec.eta is not None:
            eta_k = np.asarray(spec.eta(xk), dtype=np.float64)
            if not np.all(eta_k >= 0.0):
                raise SimulationError("diffusion eta is negative",
                                      step_index=k)
            nxt = nxt + eta_k * dw[:, k]
        else:
            nxt = nxt + dw[:, k]
        states[:, k + 1] = nxt
    if not np.all(np.isfinite(states)):
        bad_cols = np.where(~np.isfinite(states).all(axis=0))[0]
        raise SimulationError("state became non-finite",
                              step_index=int(bad_cols[0]) - 1)
    return states, dt


def mc_solution(x, t, spec: ProblemSpec, n_paths, n_steps, rng):
    """Monte Carlo estimate of u(x, t) with its standard error.

    Averages the pathwise functional over n_paths independent trajectories;
    std_error is the sample standard deviation over sqrt(n_paths).
    """
    if n_paths < 2:
        raise ContractError("n_paths must be at least 2")
    if not t < spec.T:
        raise ContractError(f"t ({t}) must precede the horizon T ({spec.T})")
    states, dt = _evolve_block(x, t, spec, n_paths, n_steps, rng)
    left = states[:, :-1]
    c_left = np.asarray(spec.c(left), dtype=np.float64)
    if c_left.shape != left.shape:
        raise ContractError("potential handle must evaluate elementwise")
    f_left = None
    if spec.f is not None:
        f_left = np.asarray(spec.f(left), dtype=np.float64)
        if f_left.shape != left.shape:
            raise ContractError("source handle must evaluate elementwise")
    phi_final = np.asarray(spec.phi(states[:, -1]), dtype=np.float64)
    samples = functional_from_values(phi_final, c_left, dt, f_left)
    estimate = float(np.mean(samples))
    std_error = float(np.std(samples, ddof=1) / math.sqrt(n_paths))
    return estimate, std_error
