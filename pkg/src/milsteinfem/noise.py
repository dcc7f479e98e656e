"""Reproducible scalar Wiener increments for coupled-path studies.

Increments are produced by the counter-based Philox generator keyed by
(seed, sample_id), mapped to Gaussians through the inverse normal CDF.  Any
worker can therefore regenerate any sample independently, and regenerating
with the same key is bit-identical.  Coarsening sums dyadic blocks by
repeated pairwise halving so that coarsening in stages or in one jump gives
exactly the same floating-point values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri


class NoiseError(ValueError):
    """Invalid Brownian path parameters."""


_U64_MAX = 2**64 - 1
# keep uniforms strictly inside (0, 1) so ndtri stays finite
_U_EPS = 2.0**-53


@dataclass(frozen=True)
class BrownianPath:
    """One sample of scalar Wiener increments at the finest resolution."""

    tau_fine: float
    increments: np.ndarray
    seed: int
    sample_id: int

    @property
    def n_fine(self) -> int:
        return self.increments.shape[0]

    @property
    def total_time(self) -> float:
        return self.n_fine * self.tau_fine


def generate_path(seed: int, sample_id: int, n_fine: int, tau_fine: float) -> BrownianPath:
    """Deterministic N(0, tau_fine) increments for one (seed, sample_id).

    Distinct sample ids give independent Philox streams, so samples can be
    generated in any order or in parallel without coordination.
    """
    if n_fine < 1:
        raise NoiseError(f"n_fine must be >= 1, got {n_fine}")
    if not (tau_fine > 0):
        raise NoiseError(f"tau_fine must be positive, got {tau_fine}")
    if not (0 <= seed <= _U64_MAX):
        raise NoiseError("seed must fit in an unsigned 64-bit integer")
    if not (0 <= sample_id <= _U64_MAX):
        raise NoiseError("sample_id must fit in an unsigned 64-bit integer")
    key = np.array([seed, sample_id], dtype=np.uint64)
    u = Generator(Philox(key=key)).random(n_fine)
    np.clip(u, _U_EPS, 1.0 - _U_EPS, out=u)
    increments = ndtri(u) * np.sqrt(tau_fine)
    return BrownianPath(
        tau_fine=float(tau_fine),
        increments=increments,
        seed=int(seed),
        sample_id=int(sample_id),
    )


def coarsen_increments(path, factor: int) -> np.ndarray:
    """Block sums of the fine increments: the same path on a grid coarser by
    the dyadic ``factor``.

    Implemented as repeated pairwise halving, so for any dyadic chain
    ``f1 | f2`` coarsening by ``f1`` and then by ``f2/f1`` reproduces
    coarsening by ``f2`` bit for bit.
    """
    increments = path.increments if isinstance(path, BrownianPath) else np.asarray(path)
    factor = int(factor)
    if factor < 1 or (factor & (factor - 1)) != 0:
        raise NoiseError(f"coarsening factor must be a positive power of 2, got {factor}")
    n = increments.shape[0]
    if n % factor != 0:
        raise NoiseError(f"factor {factor} does not divide the increment count {n}")
    out = increments.copy()
    while factor > 1:
        out = out.reshape(-1, 2).sum(axis=1)
        factor //= 2
    return out


def milstein_bracket(dW, tau: float):
    """The centered squared increment ((dW)^2 - tau) / 2.

    Mean zero with variance tau^2 / 2; multiplies the derivative-times-noise
    correction that lifts the strong temporal order from 1/2 to ~1.
    """
    if not (tau > 0):
        raise NoiseError(f"tau must be positive, got {tau}")
    dW = np.asarray(dW, dtype=float)
    out = (dW * dW - tau) / 2.0
    return float(out) if out.ndim == 0 else out
