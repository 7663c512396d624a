"""Sparse sources, the one-bit encoder, and the evaluation metrics.

The measurement model is ``r = sign(phi @ x - b)``: a sensing matrix, a
vector of per-measurement quantization thresholds, and a one-bit
comparator.  With ``b = 0`` the amplitude of ``x`` is unobservable and only
its direction can be recovered; nonzero thresholds preserve amplitude
information.  Training-oriented code replaces the comparator with
``tanh(t * .)`` (``mode="smooth"``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    ContractViolation,
    RngStream,
    exact_sign,
    matvec,
    norm2,
    smooth_sign,
)


@dataclass(frozen=True)
class SignalSpec:
    """Dimension and sparsity level of a source signal."""

    n: int
    k: int

    def __post_init__(self):
        if not (1 <= self.k <= self.n):
            raise ContractViolation(f"SignalSpec: need 1 <= k <= n, got k={self.k}, n={self.n}")


@dataclass(frozen=True)
class SparseSignal:
    """A length-n vector with exactly k nonzero entries.

    ``support`` holds the sorted indices of the nonzeros.
    """

    values: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "support", np.asarray(self.support, dtype=np.int64))
        nz = np.flatnonzero(self.values)
        if not np.array_equal(nz, np.sort(self.support)):
            raise ContractViolation("SparseSignal: support does not match nonzero entries")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.support.shape[0]


def sample_signal(spec: SignalSpec, rng: RngStream) -> SparseSignal:
    """Draw a sparse signal: support uniform over k-subsets, values N(0, 1).

    The support comes from a seeded shuffle of [0, n); the k nonzero values
    are drawn afterwards, so the draw order is part of the pinned stream.
    """
    support = np.sort(rng.permutation(spec.n)[: spec.k])
    values = np.zeros(spec.n)
    values[support] = rng.standard_normal(spec.k)
    return SparseSignal(values=values, support=support)


@dataclass
class SensingModel:
    """Encoder parameters: sensing matrix, thresholds, tanh sharpness."""

    phi: np.ndarray
    thresholds: np.ndarray
    smoothness: float = 50.0

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        if self.phi.ndim != 2:
            raise ContractViolation(f"SensingModel: phi must be 2-d, got ndim={self.phi.ndim}")
        if self.thresholds.shape != (self.phi.shape[0],):
            raise ContractViolation(
                f"SensingModel: thresholds shape {self.thresholds.shape} does not match m={self.phi.shape[0]}"
            )
        if not self.smoothness > 0:
            raise ContractViolation(f"SensingModel: smoothness must be positive, got {self.smoothness}")

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1]


EXACT = "exact"
SMOOTH = "smooth"

@dataclass(frozen=True)
class Measurement:
    """One-bit measurements: entries in {-1, +1} (exact mode) or inside
    (-1, 1) (smooth mode; float64 saturates tanh to +-1.0 for arguments
    beyond about 19, so saturated smooth entries compare equal to +-1)."""

    bits: np.ndarray
    mode: str = EXACT

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.float64))
        if self.mode not in (EXACT, SMOOTH):
            raise ContractViolation(f"Measurement: unknown mode {self.mode!r}")


def signal_values(x) -> np.ndarray:
    """Accept either a SparseSignal or a plain vector."""
    if isinstance(x, SparseSignal):
        return x.values
    return np.asarray(x, dtype=np.float64)


def encode(model: SensingModel, x, mode: str = EXACT) -> Measurement:
    """Apply the one-bit encoder ``sign(phi @ x - b)`` (exact or smooth)."""
    vals = signal_values(x)
    if vals.shape[0] != model.n:
        raise ContractViolation(f"encode: signal length {vals.shape[0]} != n={model.n}")
    pre = matvec(model.phi, vals) - model.thresholds
    if mode == EXACT:
        return Measurement(bits=exact_sign(pre), mode=EXACT)
    if mode == SMOOTH:
        return Measurement(bits=smooth_sign(pre, model.smoothness), mode=SMOOTH)
    raise ContractViolation(f"encode: unknown mode {mode!r}")


def consistency_violations(meas: Measurement, model: SensingModel, x) -> int:
    """Count measurements whose sign the candidate ``x`` fails to reproduce.

    A consistent reconstruction satisfies ``r * (phi @ x - b) >= 0``
    element-wise; this returns the number of strictly negative entries.
    """
    if meas.mode != EXACT:
        raise ContractViolation("consistency_violations: measurement must be exact-mode")
    vals = signal_values(x)
    margins = meas.bits * (matvec(model.phi, vals) - model.thresholds)
    return int(np.count_nonzero(margins < 0))


def mse_amplitude(x, xhat) -> float:
    """Per-element squared error ||x - xhat||^2 / n."""
    x = signal_values(x)
    xhat = signal_values(xhat)
    if x.shape != xhat.shape:
        raise ContractViolation(f"mse_amplitude: shapes {x.shape} and {xhat.shape} differ")
    return float(np.sum((x - xhat) ** 2) / x.shape[0])


def mse_direction(x, xhat) -> float:
    """Per-element squared error between the normalized copies of x and xhat.

    Invariant to positive rescaling of either argument; undefined (and
    rejected) for zero vectors.
    """
    x = signal_values(x)
    xhat = signal_values(xhat)
    if x.shape != xhat.shape:
        raise ContractViolation(f"mse_direction: shapes {x.shape} and {xhat.shape} differ")
    nx = norm2(x)
    nxhat = norm2(xhat)
    if nx == 0.0 or nxhat == 0.0:
        raise ContractViolation("mse_direction: zero vector has no direction")
    return float(np.sum((x / nx - xhat / nxhat) ** 2) / x.shape[0])
