"""Dense linear algebra on float64 arrays, element-wise nonlinearities,
and reproducible random streams shared by the rest of the package.

Vectors are 1-d numpy arrays, matrices 2-d arrays in row-major (C) order.
All operations work in 64-bit floating point and are pure functions of
their inputs; only :class:`RngStream` carries state.

Random streams are pinned to numpy's Philox bit generator, a counter-based
PRNG with a fixed algorithm: the same seed yields the same draw sequence on
every platform and run.  Child streams are derived by hashing
``(seed, label)`` with SHA-256, so a child's sequence depends only on its
own seed and label, never on how much the parent has already drawn.
"""

from __future__ import annotations

import hashlib

import numpy as np


class ContractViolation(ValueError):
    """A documented precondition of an operation was broken by the caller."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def matvec(a, x) -> np.ndarray:
    """Matrix-vector product ``A @ x`` (``x`` may carry a trailing batch axis)."""
    a = _as_array(a)
    x = _as_array(x)
    if a.ndim != 2 or x.shape[0] != a.shape[1]:
        raise ContractViolation(f"matvec: shapes {a.shape} and {x.shape} do not chain")
    return a @ x


def matvec_t(a, y) -> np.ndarray:
    """Transposed product ``A.T @ y``."""
    a = _as_array(a)
    y = _as_array(y)
    if a.ndim != 2 or y.shape[0] != a.shape[0]:
        raise ContractViolation(f"matvec_t: shapes {a.shape} and {y.shape} do not chain")
    return a.T @ y


def relu(x) -> np.ndarray:
    """Element-wise ``max(x, 0)``."""
    return np.maximum(_as_array(x), 0.0)


def smooth_sign(x, t: float) -> np.ndarray:
    """Smooth surrogate of the sign function, ``tanh(t * x)``.

    Strictly inside (-1, 1) in exact arithmetic; float64 rounds the value
    to +-1.0 once ``|t * x|`` exceeds about 19.  Approaches the exact sign
    as ``t`` grows.
    """
    if not t > 0:
        raise ContractViolation(f"smooth_sign: sharpness t must be positive, got {t}")
    return np.tanh(t * _as_array(x))


def exact_sign(x) -> np.ndarray:
    """Element-wise sign with the fixed convention sign(0) = +1."""
    return np.where(_as_array(x) >= 0.0, 1.0, -1.0)


def norm2(x) -> float:
    """Euclidean norm."""
    return float(np.linalg.norm(_as_array(x)))


class RngStream:
    """Seeded random stream (numpy Philox, counter-based, platform-stable).

    ``child(label)`` derives an independent stream from ``(seed, label)``
    alone, so concurrent consumers never perturb each other's sequences.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def child(self, label: str) -> "RngStream":
        digest = hashlib.sha256(f"{self.seed}/{label}".encode("utf-8")).digest()
        return RngStream(int.from_bytes(digest[:8], "little"))

    def standard_normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def __repr__(self):
        return f"RngStream(seed={self.seed})"


def gaussian_vector(rng: RngStream, length: int) -> np.ndarray:
    """Length-``length`` vector of i.i.d. standard normal entries."""
    if length <= 0:
        raise ContractViolation(f"gaussian_vector: length must be positive, got {length}")
    return rng.standard_normal(length)


def gaussian_matrix(rng: RngStream, rows: int, cols: int) -> np.ndarray:
    """``rows x cols`` matrix of i.i.d. standard normal entries."""
    if rows <= 0 or cols <= 0:
        raise ContractViolation(f"gaussian_matrix: shape must be positive, got {(rows, cols)}")
    return rng.standard_normal((rows, cols))
