"""Flat key=value experiment configuration with dotted keys.

Grammar: one ``key = value`` pair per line; blank lines and lines starting
with ``#`` are ignored.  Values are parsed as int, then float, then the
booleans ``true``/``false``, then left as strings; comma-separated values
become tuples.  Example::

    mesh.n_div = 40
    time.tau_levels = 0.025, 0.0125, 0.00625, 0.003125
    diffusion.kind = linear

Presets shipped with the package live in ``milsteinfem/presets/*.cfg`` and
can be addressed by name (``test3_desk``) as well as by path.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .mesh import Mesh, build_structured_mesh
from .model import DiffusionSpec, DriftSpec, InitialCondition, Model
from .solver import SchemeConfig


class ConfigError(ValueError):
    """Unusable experiment configuration (bad key, value, or combination)."""


def _parse_scalar(token: str):
    token = token.strip()
    low = token.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def parse_kv_text(text: str) -> dict:
    """Parse the flat key=value grammar into a {dotted key: value} dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if "," in value:
            out[key] = tuple(_parse_scalar(tok) for tok in value.split(",") if tok.strip())
        else:
            out[key] = _parse_scalar(value)
    return out


def resolve_config_path(name: str) -> Path:
    """Resolve a config argument: path, path + .cfg, or packaged preset name."""
    p = Path(name)
    for candidate in (p, p.with_suffix(".cfg") if p.suffix == "" else p):
        if candidate.is_file():
            return candidate
    stem = p.stem if p.suffix == ".cfg" else p.name
    packaged = resources.files("milsteinfem").joinpath("presets", f"{stem}.cfg")
    if packaged.is_file():
        return Path(str(packaged))
    raise ConfigError(f"config {name!r} not found (no such file or packaged preset)")


_KEY_TO_FIELD = {
    "mesh.L": "mesh_L",
    "mesh.origin_x": "mesh_origin_x",
    "mesh.origin_y": "mesh_origin_y",
    "mesh.n_div": "mesh_n_div",
    "drift.q": "drift_q",
    "drift.coeffs": "drift_coeffs",
    "diffusion.kind": "diffusion_kind",
    "diffusion.delta": "diffusion_delta",
    "ic.preset": "ic_preset",
    "ic.r0": "ic_r0",
    "ic.eps": "ic_eps",
    "time.T": "time_T",
    "time.tau": "time_tau",
    "time.tau_levels": "time_tau_levels",
    "time.tau_fine": "time_tau_fine",
    "mc.samples": "mc_samples",
    "mc.seed": "mc_seed",
    "mc.failure_budget": "mc_failure_budget",
    "scheme.kind": "scheme_kind",
    "scheme.newton_tol": "scheme_newton_tol",
    "scheme.newton_max_iter": "scheme_newton_max_iter",
    "scheme.linear_solver": "scheme_linear_solver",
    "output.dir": "output_dir",
    "output.snapshot_times": "output_snapshot_times",
    "output.field_mode": "output_field_mode",
    "output.higher_moments": "output_higher_moments",
}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


@dataclass(frozen=True)
class ExperimentConfig:
    """All parameters of one experiment, matching the dotted config keys."""

    mesh_L: float = 2.0
    mesh_origin_x: float = -1.0
    mesh_origin_y: float = -1.0
    mesh_n_div: int = 40
    drift_q: int = 3
    drift_coeffs: tuple | None = None
    diffusion_kind: str = "linear"
    diffusion_delta: float = 0.1
    ic_preset: str = "tanh_circle"
    ic_r0: float = 0.6
    ic_eps: float = 0.3
    time_T: float = 0.25
    time_tau: float | None = None
    time_tau_levels: tuple | None = None
    time_tau_fine: float | None = None
    mc_samples: int = 100
    mc_seed: int = 42
    mc_failure_budget: int = 0
    scheme_kind: str = "milstein"
    scheme_newton_tol: float = 1e-10
    scheme_newton_max_iter: int = 50
    scheme_linear_solver: str = "direct"
    output_dir: str = "results"
    output_snapshot_times: tuple = ()
    output_field_mode: str = "sample0"
    output_higher_moments: bool = True

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        kwargs = {}
        for key, value in values.items():
            if key not in _KEY_TO_FIELD:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[_KEY_TO_FIELD[key]] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path_or_name) -> "ExperimentConfig":
        path = resolve_config_path(str(path_or_name))
        return cls.from_dict(parse_kv_text(path.read_text(encoding="utf-8")))

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Apply {dotted key: value} overrides (the CLI --set mechanism)."""
        updates = {}
        for key, value in overrides.items():
            if key not in _KEY_TO_FIELD:
                raise ConfigError(f"unknown config key {key!r}")
            updates[_KEY_TO_FIELD[key]] = value
        cfg = replace(self, **updates)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.mesh_n_div < 1:
            raise ConfigError(f"mesh.n_div must be >= 1, got {self.mesh_n_div}")
        if not (self.mesh_L > 0):
            raise ConfigError(f"mesh.L must be positive, got {self.mesh_L}")
        if self.drift_coeffs is None:
            if self.drift_q < 3 or self.drift_q % 2 == 0:
                raise ConfigError(f"drift.q must be an odd integer >= 3, got {self.drift_q}")
        if self.diffusion_kind not in ("linear", "smoothed_sqrt"):
            raise ConfigError(f"unknown diffusion.kind {self.diffusion_kind!r}")
        if self.ic_preset != "tanh_circle":
            raise ConfigError(f"unknown ic.preset {self.ic_preset!r}")
        if not (self.time_T > 0):
            raise ConfigError("time.T must be positive")
        if self.mc_samples < 1:
            raise ConfigError("mc.samples must be >= 1")
        if not (0 <= self.mc_seed < 2**64):
            raise ConfigError("mc.seed must be an unsigned 64-bit integer")
        if self.mc_failure_budget < 0:
            raise ConfigError("mc.failure_budget must be >= 0")
        if self.output_field_mode not in ("sample0", "mean"):
            raise ConfigError(f"unknown output.field_mode {self.output_field_mode!r}")
        if self.time_tau is not None:
            self._check_divides(self.time_tau, "time.tau")
        if self.time_tau_levels is not None:
            levels = tuple(float(t) for t in self.time_tau_levels)
            if len(levels) < 1:
                raise ConfigError("time.tau_levels must not be empty")
            if self.time_tau_fine is None:
                raise ConfigError("time.tau_levels requires time.tau_fine")
            self._check_divides(self.time_tau_fine, "time.tau_fine")
            for tau in levels:
                self._check_divides(tau, "tau level")
                ratio = tau / self.time_tau_fine
                k = round(np.log2(ratio))
                if k < 0 or abs(ratio - 2**k) > 1e-9 * ratio:
                    raise ConfigError(
                        f"tau level {tau:g} is not a dyadic multiple of "
                        f"tau_fine = {self.time_tau_fine:g}"
                    )

    def _check_divides(self, tau: float, label: str) -> None:
        if not (tau > 0):
            raise ConfigError(f"{label} must be positive")
        steps = self.time_T / tau
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError(f"{label} = {tau:g} does not divide T = {self.time_T:g}")

    # -- builders -----------------------------------------------------------

    def make_mesh(self) -> Mesh:
        return build_structured_mesh(
            self.mesh_L, self.mesh_n_div, origin=(self.mesh_origin_x, self.mesh_origin_y)
        )

    def make_model(self) -> Model:
        if self.drift_coeffs is not None:
            coeffs = self.drift_coeffs
            drift = DriftSpec(coeffs if isinstance(coeffs, tuple) else (coeffs,))
        else:
            drift = DriftSpec.canonical(self.drift_q)
        if self.diffusion_kind == "linear":
            diffusion = DiffusionSpec.linear(self.diffusion_delta)
        else:
            diffusion = DiffusionSpec.smoothed_sqrt(self.diffusion_delta)
        ic = InitialCondition.tanh_circle(self.ic_r0, self.ic_eps)
        return Model(drift=drift, diffusion=diffusion, ic=ic)

    def make_scheme(self, tau: float, scheme: str | None = None) -> SchemeConfig:
        return SchemeConfig(
            tau=tau,
            T=self.time_T,
            scheme=scheme or self.scheme_kind,
            newton_tol=self.scheme_newton_tol,
            newton_max_iter=self.scheme_newton_max_iter,
            linear_solver=self.scheme_linear_solver,
        )

    # -- canonical text and hashing -----------------------------------------

    def to_text(self) -> str:
        """Canonical sorted key=value dump used for hashing and reproducing."""
        lines = []
        for f in sorted(fields(self), key=lambda f: _FIELD_TO_KEY[f.name]):
            value = getattr(self, f.name)
            if value is None:
                continue
            key = _FIELD_TO_KEY[f.name]
            if isinstance(value, tuple):
                rendered = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
                if not rendered:
                    continue
            elif isinstance(value, float):
                rendered = repr(value)
            else:
                rendered = str(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]

    @property
    def h(self) -> float:
        return self.mesh_L / self.mesh_n_div
