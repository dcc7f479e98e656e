"""Drift and diffusion nonlinearities, initial conditions, and sampled
checks of the structural assumptions they are supposed to satisfy.

Drifts are odd polynomials u -> c0*u - c1*u^3 - c2*u^5 - ... with
nonnegative coefficients; the canonical choice is u - u^q for odd q >= 3.
Diffusions come in two built-in flavors, G(u) = delta*u and
G(u) = delta*sqrt(u^2 + 1), plus a user-supplied pointwise pair (G, DG).
All evaluators act nodewise on coefficient vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ModelError(ValueError):
    """Invalid drift/diffusion specification or evaluation failure."""


@dataclass(frozen=True)
class DriftSpec:
    """Odd polynomial drift with sign-constrained coefficients.

    ``coeffs[i]`` multiplies ``u**(2*i + 1)``; the i = 0 term enters with a
    plus sign and all higher terms with a minus sign, so
    F(u) = c0*u - c1*u^3 - c2*u^5 - ...  All coefficients must be >= 0,
    which makes F one-sided Lipschitz with constant c0.
    """

    coeffs: tuple

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs:
            raise ModelError("drift needs at least the linear coefficient c0")
        if any(c < 0 for c in coeffs):
            raise ModelError("drift coefficients must be nonnegative")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def canonical(cls, q: int) -> "DriftSpec":
        """The drift u - u^q for an odd integer q >= 3."""
        q = int(q)
        if q < 3 or q % 2 == 0:
            raise ModelError(f"canonical drift needs odd q >= 3, got {q}")
        coeffs = [1.0] + [0.0] * ((q - 1) // 2)
        coeffs[(q - 1) // 2] = 1.0
        return cls(tuple(coeffs))

    @property
    def degree(self) -> int:
        """Highest power with a nonzero coefficient (1 for purely linear)."""
        for i in range(len(self.coeffs) - 1, 0, -1):
            if self.coeffs[i] != 0.0:
                return 2 * i + 1
        return 1

    def __call__(self, u):
        return eval_drift(self, u)

    def derivative(self, u):
        return eval_drift_derivative(self, u)


def eval_drift(spec: DriftSpec, u):
    """F(u) evaluated elementwise (Horner in u^2)."""
    u = np.asarray(u, dtype=float)
    c = spec.coeffs
    s = u * u
    acc = np.zeros_like(u)
    for ci in c[:0:-1]:
        acc = acc * s + ci
    out = u * (c[0] - s * acc)
    return float(out) if out.ndim == 0 else out


def eval_drift_derivative(spec: DriftSpec, u):
    """F'(u) = c0 - sum (2i+1) c_i u^(2i) evaluated elementwise."""
    u = np.asarray(u, dtype=float)
    c = spec.coeffs
    s = u * u
    acc = np.zeros_like(u)
    for i in range(len(c) - 1, 0, -1):
        acc = acc * s + (2 * i + 1) * c[i]
    out = c[0] - s * acc
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DiffusionSpec:
    """Pointwise diffusion G with its derivative DG.

    The composite correction term is always evaluated as the literal product
    DG(u)*G(u) of the two evaluators, so the identity between the composite
    and the separately computed product holds exactly.
    """

    kind: str
    delta: float
    g: Callable
    dg: Callable

    @classmethod
    def linear(cls, delta: float) -> "DiffusionSpec":
        """G(u) = delta*u, DG = delta."""
        delta = float(delta)
        return cls(
            kind="linear",
            delta=delta,
            g=lambda u: delta * np.asarray(u, dtype=float),
            dg=lambda u: np.full_like(np.asarray(u, dtype=float), delta),
        )

    @classmethod
    def smoothed_sqrt(cls, delta: float) -> "DiffusionSpec":
        """G(u) = delta*sqrt(u^2 + 1), DG(u) = delta*u/sqrt(u^2 + 1)."""
        delta = float(delta)
        return cls(
            kind="smoothed_sqrt",
            delta=delta,
            g=lambda u: delta * np.sqrt(np.asarray(u, dtype=float) ** 2 + 1.0),
            dg=lambda u: delta
            * np.asarray(u, dtype=float)
            / np.sqrt(np.asarray(u, dtype=float) ** 2 + 1.0),
        )

    @classmethod
    def user(cls, g: Callable, dg: Callable, delta: float = float("nan")) -> "DiffusionSpec":
        return cls(kind="user", delta=delta, g=g, dg=dg)

    @classmethod
    def none(cls) -> "DiffusionSpec":
        """Zero noise, useful for deterministic reductions."""
        return cls.linear(0.0)

    def dgg(self, u):
        """The correction factor DG(u)*G(u), evaluated as that product."""
        return self.dg(u) * self.g(u)


def eval_diffusion(spec: DiffusionSpec, u):
    """Return the triple (G(u), DG(u), DG(u)*G(u))."""
    u = np.asarray(u, dtype=float)
    g = np.asarray(spec.g(u), dtype=float)
    dg = np.asarray(spec.dg(u), dtype=float)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(dg))):
        raise ModelError("diffusion evaluator returned a non-finite value")
    dgg = dg * g
    if u.ndim == 0:
        return float(g), float(dg), float(dgg)
    return g, dg, dgg


@dataclass(frozen=True)
class InitialCondition:
    """Pointwise initial datum u0(x, y)."""

    fn: Callable
    description: str = "custom"

    @classmethod
    def tanh_circle(cls, r0: float, eps: float) -> "InitialCondition":
        """tanh((sqrt(x^2+y^2) - r0) / (sqrt(2)*eps)): a circular interface of
        radius r0 and width eps, negative inside and positive outside."""
        r0 = float(r0)
        eps = float(eps)
        if eps <= 0:
            raise ModelError(f"interface width must be positive, got {eps}")
        scale = np.sqrt(2.0) * eps

        def fn(x, y):
            return np.tanh((np.sqrt(np.asarray(x) ** 2 + np.asarray(y) ** 2) - r0) / scale)

        return cls(fn=fn, description=f"tanh_circle(r0={r0:g}, eps={eps:g})")

    def __call__(self, x, y):
        return self.fn(x, y)


@dataclass(frozen=True)
class Model:
    """Drift, diffusion, and initial condition of one problem instance."""

    drift: DriftSpec
    diffusion: DiffusionSpec
    ic: InitialCondition


def validate_one_sided_lipschitz(
    spec: DriftSpec, sample_count: int = 10_000, bound: float = 10.0, seed: int = 0
) -> float:
    """Sampled estimate of the one-sided Lipschitz constant.

    Maximizes (a-b)(F(a)-F(b)) / (a-b)^2 over random pairs in
    [-bound, bound].  For the canonical drift this is at most c0; the value
    is an estimate, not a certificate.
    """
    if sample_count < 2:
        raise ModelError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    a = rng.uniform(-bound, bound, sample_count)
    b = rng.uniform(-bound, bound, sample_count)
    keep = np.abs(a - b) > 1e-12 * bound
    a, b = a[keep], b[keep]
    diff = a - b
    ratios = (diff * (eval_drift(spec, a) - eval_drift(spec, b))) / (diff * diff)
    return float(ratios.max())


@dataclass(frozen=True)
class DiffusionReport:
    """Sampled constants for the Lipschitz/growth/derivative assumptions."""

    lipschitz: float            # sup |G(a)-G(b)| / |a-b|
    growth: float               # sup |G(u)| / (1 + |u|)
    dg_bound: float             # sup |DG(u)|
    d2g_bound: float            # sup |D2G(u)|, via central differences of DG
    composite_lipschitz: float  # sup |DG(a)G(a) - DG(b)G(b)| / |a-b|
    warnings: tuple = ()


def validate_diffusion_assumptions(
    spec: DiffusionSpec, sample_count: int = 10_000, bound: float = 10.0, seed: int = 0
) -> DiffusionReport:
    """Sampled estimates of the diffusion constants with growth warnings.

    Each constant is also estimated on the half range [-bound/2, bound/2];
    when the full-range value clearly exceeds it, the constant is flagged as
    growing with the range, which hints that the assumption fails globally.
    """
    if sample_count < 2:
        raise ModelError("need at least 2 samples")

    def estimates(r):
        rng = np.random.default_rng(seed)
        a = rng.uniform(-r, r, sample_count)
        b = rng.uniform(-r, r, sample_count)
        keep = np.abs(a - b) > 1e-12 * r
        a, b = a[keep], b[keep]
        ga, gb = np.asarray(spec.g(a), float), np.asarray(spec.g(b), float)
        dga, dgb = np.asarray(spec.dg(a), float), np.asarray(spec.dg(b), float)
        step = 1e-5 * np.maximum(1.0, np.abs(a))
        d2g = (np.asarray(spec.dg(a + step), float) - np.asarray(spec.dg(a - step), float)) / (
            2.0 * step
        )
        return {
            "lipschitz": float(np.max(np.abs(ga - gb) / np.abs(a - b))),
            "growth": float(np.max(np.abs(ga) / (1.0 + np.abs(a)))),
            "dg_bound": float(np.max(np.abs(dga))),
            "d2g_bound": float(np.max(np.abs(d2g))),
            "composite_lipschitz": float(
                np.max(np.abs(dga * ga - dgb * gb) / np.abs(a - b))
            ),
        }

    full = estimates(bound)
    half = estimates(bound / 2.0)
    warnings = tuple(
        f"{name} estimate grows with the sampling range "
        f"({half[name]:.4g} on half range vs {full[name]:.4g} on full range)"
        for name in full
        if full[name] > 1.2 * half[name] + 1e-12
    )
    return DiffusionReport(warnings=warnings, **full)
