"""Classic fixed-parameter recovery algorithms for one-bit measurements.

Four first-order iterations, all driven by the consistency principle
``r * (phi @ x - b) >= 0``:

* ``rfpi``  -- renormalized fixed-point iteration: gradient of the one-sided
  l2 consistency penalty, soft shrinkage with threshold delta/alpha, then
  projection back onto the unit sphere (zero thresholds only).
* ``grfpi`` -- the generalized variant for arbitrary thresholds; the sphere
  projection is dropped, so amplitude information survives.
* ``biht``  -- binary iterative hard thresholding: subgradient step
  ``x + (alpha/2) phi.T (r - sign(phi x))`` followed by keeping the k
  largest-magnitude entries (zero thresholds; final estimate renormalized).
* ``gbiht`` -- the same step with ``sign(phi x - b)``, no renormalization.

These solvers use the exact sign everywhere and double as the arithmetic
oracles for the unfolded pipelines in :mod:`onebitcs.unfolded`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .numerics import ContractViolation, exact_sign, matvec, matvec_t, norm2, relu
from .signals import (
    EXACT,
    Measurement,
    SensingModel,
    SparseSignal,
    consistency_violations,
    encode,
    mse_amplitude,
    mse_direction,
)

NORMALIZED_BACKPROJECTION = "normalized_backprojection"
ZERO_INIT = "zero"


class DegenerateIterate(RuntimeError):
    """A solve produced an unusable iterate (all-zero after shrinkage, or
    non-finite).  When raised from a solve loop, ``trajectory`` carries the
    iterates produced so far."""

    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class SolverConfig:
    """Fixed parameters of a classic solve.

    ``step_size`` is the gradient step delta (RFPI family; ignored by the
    BIHT family, whose step is penalty/2).  ``penalty`` is alpha.
    ``sparsity`` must be set for the BIHT family and left None otherwise.
    ``init`` is one of the named schemes or an explicit start vector.
    """

    step_size: float
    penalty: float
    iterations: int
    sparsity: Optional[int] = None
    init: Union[str, np.ndarray] = NORMALIZED_BACKPROJECTION

    def __post_init__(self):
        if self.iterations < 0:
            raise ContractViolation(f"SolverConfig: iterations must be >= 0, got {self.iterations}")


@dataclass
class Trajectory:
    """Iterates x_0 .. x_T of one solve plus per-iterate metrics.

    ``iterates`` holds the raw iterates (length iterations + 1); ``final``
    is the solve's estimate, which for ``biht_solve`` is the last iterate
    renormalized onto the unit sphere and is the last iterate itself for
    the other solvers.  ``metrics`` holds one
    (mse_amplitude, mse_direction, violations) triple per iterate against
    the source signal; direction MSE is NaN for an all-zero iterate.
    """

    iterates: list
    metrics: list
    final: np.ndarray


def soft_shrink(t, tau) -> np.ndarray:
    """Element-wise soft shrinkage sign(t) * max(|t| - tau, 0)."""
    t = np.asarray(t, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if t.shape != tau.shape:
        raise ContractViolation(f"soft_shrink: shapes {t.shape} and {tau.shape} differ")
    if np.any(tau < 0):
        raise ContractViolation("soft_shrink: thresholds must be non-negative")
    return np.sign(t) * np.maximum(np.abs(t) - tau, 0.0)


def hard_threshold(u, k: int) -> np.ndarray:
    """Keep the k largest-magnitude entries of u, zero the rest.

    Ties in magnitude are broken toward the smaller index (stable sort), so
    the output is deterministic.
    """
    u = np.asarray(u, dtype=np.float64)
    if not (1 <= k <= u.shape[0]):
        raise ContractViolation(f"hard_threshold: need 1 <= k <= {u.shape[0]}, got {k}")
    order = np.argsort(-np.abs(u), kind="stable")
    out = np.zeros_like(u)
    keep = order[:k]
    out[keep] = u[keep]
    return out


def _require_zero_thresholds(model: SensingModel, who: str):
    if np.any(model.thresholds != 0.0):
        raise ContractViolation(f"{who}: thresholds must be identically zero")


def rfpi_step(x_prev, model: SensingModel, meas: Measurement, step_size: float, penalty: float) -> np.ndarray:
    """One renormalized fixed-point iteration (zero-threshold model)."""
    _require_zero_thresholds(model, "rfpi_step")
    x_prev = np.asarray(x_prev, dtype=np.float64)
    if abs(norm2(x_prev) - 1.0) > 1e-9:
        raise ContractViolation("rfpi_step: x_prev must lie on the unit sphere")
    r = meas.bits
    # d = -(R phi)^T rho(R phi x),  rho(c) = max(-c, 0)
    c = r * matvec(model.phi, x_prev)
    d = -matvec_t(model.phi, r * relu(-c))
    # descent with the sphere-projection term, then shrink by delta/alpha
    t = (1.0 + step_size * float(d @ x_prev)) * x_prev - step_size * d
    v = soft_shrink(t, np.full(t.shape, step_size / penalty))
    if not np.any(v):
        raise DegenerateIterate("rfpi_step: all entries shrunk to zero")
    return v / norm2(v)


def grfpi_step(x_prev, model: SensingModel, meas: Measurement, step_size: float, penalty: float) -> np.ndarray:
    """One generalized fixed-point iteration (arbitrary thresholds, no renormalization)."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    r = meas.bits
    c = r * (matvec(model.phi, x_prev) - model.thresholds)
    d = -matvec_t(model.phi, r * relu(-c))
    t = x_prev - step_size * d
    return soft_shrink(t, np.full(t.shape, step_size / penalty))


def biht_step(x_prev, model: SensingModel, meas: Measurement, penalty: float, k: int) -> np.ndarray:
    """One binary iterative hard thresholding step (zero-threshold model)."""
    _require_zero_thresholds(model, "biht_step")
    x_prev = np.asarray(x_prev, dtype=np.float64)
    u = x_prev + 0.5 * penalty * matvec_t(model.phi, meas.bits - exact_sign(matvec(model.phi, x_prev)))
    return hard_threshold(u, k)


def gbiht_step(x_prev, model: SensingModel, meas: Measurement, penalty: float, k: int) -> np.ndarray:
    """One generalized BIHT step with thresholds inside the sign."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    resid = meas.bits - exact_sign(matvec(model.phi, x_prev) - model.thresholds)
    u = x_prev + 0.5 * penalty * matvec_t(model.phi, resid)
    return hard_threshold(u, k)


def initial_point(config: SolverConfig, model: SensingModel, meas: Measurement) -> np.ndarray:
    """Starting iterate: normalized back-projection phi.T r / ||phi.T r||, zeros, or a given vector."""
    if isinstance(config.init, np.ndarray):
        x0 = np.asarray(config.init, dtype=np.float64)
        if x0.shape != (model.n,):
            raise ContractViolation(f"initial_point: given init has shape {x0.shape}, expected ({model.n},)")
        return x0.copy()
    if config.init == ZERO_INIT:
        return np.zeros(model.n)
    if config.init == NORMALIZED_BACKPROJECTION:
        z = matvec_t(model.phi, meas.bits)
        nrm = norm2(z)
        if nrm == 0.0:
            raise DegenerateIterate("initial_point: back-projection is the zero vector")
        return z / nrm
    raise ContractViolation(f"initial_point: unknown init {config.init!r}")


def _point_metrics(signal: SparseSignal, model: SensingModel, meas: Measurement, x) -> tuple:
    amp = mse_amplitude(signal.values, x)
    direction = float("nan") if not np.any(x) else mse_direction(signal.values, x)
    return (amp, direction, consistency_violations(meas, model, x))


def _solve_loop(step, signal: SparseSignal, model: SensingModel, config: SolverConfig,
                renormalize_final: bool) -> Trajectory:
    meas = encode(model, signal.values, EXACT)
    x = initial_point(config, model, meas)
    iterates = [x]
    metrics = [_point_metrics(signal, model, meas, x)]
    for _ in range(config.iterations):
        try:
            x = step(x, model, meas)
        except DegenerateIterate as err:
            err.trajectory = Trajectory(iterates, metrics, iterates[-1])
            raise
        if not np.all(np.isfinite(x)):
            raise DegenerateIterate("solve: non-finite iterate",
                                    Trajectory(iterates, metrics, iterates[-1]))
        iterates.append(x)
        metrics.append(_point_metrics(signal, model, meas, x))
    final = iterates[-1]
    if renormalize_final:
        nrm = norm2(final)
        if nrm == 0.0:
            raise DegenerateIterate("solve: zero final iterate cannot be renormalized",
                                    Trajectory(iterates, metrics, final))
        final = final / nrm
    return Trajectory(iterates, metrics, final)


def _check_sparsity(config: SolverConfig, needed: bool, who: str):
    if needed and config.sparsity is None:
        raise ContractViolation(f"{who}: config.sparsity is required")
    if not needed and config.sparsity is not None:
        raise ContractViolation(f"{who}: config.sparsity must be None")


def rfpi_solve(signal: SparseSignal, model: SensingModel, config: SolverConfig) -> Trajectory:
    """Run renormalized fixed-point iterations from the configured start."""
    _require_zero_thresholds(model, "rfpi_solve")
    _check_sparsity(config, needed=False, who="rfpi_solve")
    step = lambda x, mdl, ms: rfpi_step(x, mdl, ms, config.step_size, config.penalty)
    return _solve_loop(step, signal, model, config, renormalize_final=False)


def grfpi_solve(signal: SparseSignal, model: SensingModel, config: SolverConfig) -> Trajectory:
    """Run generalized fixed-point iterations (thresholds allowed)."""
    _check_sparsity(config, needed=False, who="grfpi_solve")
    step = lambda x, mdl, ms: grfpi_step(x, mdl, ms, config.step_size, config.penalty)
    return _solve_loop(step, signal, model, config, renormalize_final=False)


def biht_solve(signal: SparseSignal, model: SensingModel, config: SolverConfig) -> Trajectory:
    """Run BIHT; the final estimate is projected onto the unit sphere."""
    _require_zero_thresholds(model, "biht_solve")
    _check_sparsity(config, needed=True, who="biht_solve")
    step = lambda x, mdl, ms: biht_step(x, mdl, ms, config.penalty, config.sparsity)
    return _solve_loop(step, signal, model, config, renormalize_final=True)


def gbiht_solve(signal: SparseSignal, model: SensingModel, config: SolverConfig) -> Trajectory:
    """Run generalized BIHT (thresholds allowed, no final renormalization)."""
    _check_sparsity(config, needed=True, who="gbiht_solve")
    step = lambda x, mdl, ms: gbiht_step(x, mdl, ms, config.penalty, config.sparsity)
    return _solve_loop(step, signal, model, config, renormalize_final=False)


SOLVES = {
    "rfpi": rfpi_solve,
    "grfpi": grfpi_solve,
    "biht": biht_solve,
    "gbiht": gbiht_solve,
}
