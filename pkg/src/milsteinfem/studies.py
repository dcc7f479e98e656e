"""Monte Carlo experiment drivers: strong convergence, stability, evolution.

Strong errors are measured against a coupled reference: every sample runs
once at the finest step ``tau_fine`` and once per coarse level on the same
Brownian path with block-summed increments, and the discrete errors are
taken at the coarse time points.  All aggregation is a fixed-order running
sum over sample ids, so reruns with the same config and seed reproduce the
output files byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .fem import (
    Field,
    SparseOperator,
    assemble_mass,
    assemble_stiffness,
    l2_project,
    write_field_csv,
    _fmt,
)
from .levelset import write_levelset_csv, zero_level_set
from .noise import coarsen_increments, generate_path
from .solver import SolverError, StepWorkspace, run_trajectory


class StudyError(RuntimeError):
    """A study exceeded its failure budget or produced unusable output."""


def estimate_rate(errors, taus) -> list:
    """Observed orders log2(err_{k-1} / err_k) for a tau-halving sequence."""
    errors = [float(e) for e in errors]
    taus = [float(t) for t in taus]
    if len(errors) != len(taus):
        raise ValueError("errors and taus must have the same length")
    if len(errors) < 2:
        raise ValueError("need at least 2 levels to estimate an order")
    if any(e <= 0 for e in errors):
        raise ValueError("errors must be positive")
    for coarse, fine in zip(taus, taus[1:]):
        if abs(coarse / fine - 2.0) > 1e-9:
            raise ValueError("taus must decrease by exact factors of 2")
    return [math.log2(e0 / e1) for e0, e1 in zip(errors, errors[1:])]


@dataclass
class RateTable:
    """Per-tau strong errors with standard errors and observed orders."""

    taus: list
    err_linf_el2: list
    se_linf_el2: list
    order_linf_el2: list      # first entry None
    err_el2h1: list
    se_el2h1: list
    order_el2h1: list         # first entry None
    metadata: dict = field(default_factory=dict)

    def comment_lines(self) -> list:
        md = self.metadata
        return [
            f"config_hash = {md.get('config_hash', '')}",
            f"seed = {md.get('seed', '')}",
            f"h = {md.get('h', '')}",
            f"reference_tau = {md.get('tau_fine', '')}",
            f"samples = {md.get('samples', '')}",
            f"scheme = {md.get('scheme', '')}",
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.comment_lines():
                fh.write(f"# {line}\n")
            fh.write(
                "tau,err_linf_el2,se_linf_el2,order_linf_el2,"
                "err_el2h1,se_el2h1,order_el2h1\n"
            )
            for k in range(len(self.taus)):
                row = [
                    _fmt(self.taus[k]),
                    _fmt(self.err_linf_el2[k]),
                    _fmt(self.se_linf_el2[k]),
                    "" if self.order_linf_el2[k] is None else _fmt(self.order_linf_el2[k]),
                    _fmt(self.err_el2h1[k]),
                    _fmt(self.se_el2h1[k]),
                    "" if self.order_el2h1[k] is None else _fmt(self.order_el2h1[k]),
                ]
                fh.write(",".join(row) + "\n")


def _orders_or_none(errors, taus) -> list:
    if len(errors) < 2 or any(e <= 0 for e in errors):
        return [None] * len(errors)
    return [None] + estimate_rate(errors, taus)


@dataclass
class _StudyContext:
    mesh: object
    model: object
    M: SparseOperator
    K: SparseOperator
    u0: Field


def _prepare(cfg: ExperimentConfig) -> _StudyContext:
    mesh = cfg.make_mesh()
    model = cfg.make_model()
    M = assemble_mass(mesh)
    K = assemble_stiffness(mesh)
    u0 = l2_project(model.ic.fn, mesh, M)
    return _StudyContext(mesh=mesh, model=model, M=M, K=K, u0=u0)


def strong_error_study(cfg: ExperimentConfig, scheme: str | None = None) -> RateTable:
    """Coupled-path strong errors and observed temporal orders.

    For each sample the reference trajectory runs at ``tau_fine`` and every
    coarse level reruns the same path with block-summed increments.  Errors
    at the coarse time points aggregate into

        err_linf_el2 = sqrt( max_n  mean_s ||e^n||_L2^2 )
        err_el2h1    = sqrt( mean_s  sum_n tau ||grad e^n||_L2^2 )

    with one column of Monte Carlo standard errors per error column.
    """
    if cfg.time_tau_levels is None or len(cfg.time_tau_levels) < 2:
        raise ConfigError("strong error study needs >= 2 time.tau_levels")
    ctx = _prepare(cfg)
    tau_fine = float(cfg.time_tau_fine)
    levels = sorted((float(t) for t in cfg.time_tau_levels), reverse=True)
    n_fine = int(round(cfg.time_T / tau_fine))
    factors = [int(round(tau / tau_fine)) for tau in levels]
    gcd_factor = math.gcd(*factors) if len(factors) > 1 else factors[0]
    ref_steps = range(0, n_fine + 1, gcd_factor)

    ws_fine = StepWorkspace(ctx.mesh, ctx.M, ctx.K, tau_fine)
    cfg_fine = cfg.make_scheme(tau_fine, scheme)
    workspaces = {tau: StepWorkspace(ctx.mesh, ctx.M, ctx.K, tau) for tau in levels}
    scheme_cfgs = {tau: cfg.make_scheme(tau, scheme) for tau in levels}

    n_coarse = {tau: int(round(cfg.time_T / tau)) for tau in levels}
    sum_l2sq = {tau: np.zeros(n_coarse[tau] + 1) for tau in levels}
    sumsq_l2sq = {tau: np.zeros(n_coarse[tau] + 1) for tau in levels}
    sum_h1acc = {tau: 0.0 for tau in levels}
    sumsq_h1acc = {tau: 0.0 for tau in levels}
    max_newton = 0
    failures = []

    used_samples = 0
    for sample in range(cfg.mc_samples):
        path = generate_path(cfg.mc_seed, sample, n_fine, tau_fine)
        try:
            ref = run_trajectory(
                ctx.u0, path.increments, cfg_fine, ctx.model, ws_fine,
                snapshot_steps=ref_steps,
            )
            level_records = {}
            for tau in levels:
                inc = coarsen_increments(path, factors[levels.index(tau)])
                level_records[tau] = run_trajectory(
                    ctx.u0, inc, scheme_cfgs[tau], ctx.model, workspaces[tau],
                    snapshot_steps=range(n_coarse[tau] + 1),
                )
        except SolverError as exc:
            failures.append((sample, str(exc)))
            continue
        used_samples += 1
        max_newton = max(max_newton, ref.max_newton_iters)
        for tau, rec in level_records.items():
            factor = int(round(tau / tau_fine))
            max_newton = max(max_newton, rec.max_newton_iters)
            h1_acc = 0.0
            for n in range(n_coarse[tau] + 1):
                e = rec.snapshots[n] - ref.snapshots[n * factor]
                l2sq = float(e @ (ws_fine.M_free @ e))
                sum_l2sq[tau][n] += l2sq
                sumsq_l2sq[tau][n] += l2sq * l2sq
                if n >= 1:
                    h1_acc += tau * float(e @ (ws_fine.K_free @ e))
            sum_h1acc[tau] += h1_acc
            sumsq_h1acc[tau] += h1_acc * h1_acc

    if len(failures) > cfg.mc_failure_budget:
        listing = "; ".join(f"sample {s}: {msg}" for s, msg in failures)
        raise StudyError(
            f"{len(failures)} failed samples exceed the budget "
            f"{cfg.mc_failure_budget}: {listing}"
        )
    if used_samples == 0:
        raise StudyError("no samples completed")

    err_l2, se_l2, err_h1, se_h1 = [], [], [], []
    for tau in levels:
        m = used_samples
        mean_l2sq = sum_l2sq[tau] / m
        n_star = int(np.argmax(mean_l2sq))
        err = math.sqrt(max(mean_l2sq[n_star], 0.0))
        var = max(sumsq_l2sq[tau][n_star] / m - mean_l2sq[n_star] ** 2, 0.0)
        se_sq = math.sqrt(var / m)
        err_l2.append(err)
        se_l2.append(se_sq / (2 * err) if err > 0 else 0.0)

        mean_h1 = sum_h1acc[tau] / m
        errh = math.sqrt(max(mean_h1, 0.0))
        varh = max(sumsq_h1acc[tau] / m - mean_h1**2, 0.0)
        seh_sq = math.sqrt(varh / m)
        err_h1.append(errh)
        se_h1.append(seh_sq / (2 * errh) if errh > 0 else 0.0)

    metadata = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.mc_seed,
        "h": cfg.h,
        "tau_fine": tau_fine,
        "samples": used_samples,
        "scheme": scheme or cfg.scheme_kind,
        "failures": len(failures),
        "max_newton_iters": max_newton,
        "warnings": (
            [f"Newton needed {max_newton} iterations (> 10) on some step"]
            if max_newton > 10
            else []
        ),
    }
    return RateTable(
        taus=levels,
        err_linf_el2=err_l2,
        se_linf_el2=se_l2,
        order_linf_el2=_orders_or_none(err_l2, levels),
        err_el2h1=err_h1,
        se_el2h1=se_h1,
        order_el2h1=_orders_or_none(err_h1, levels),
        metadata=metadata,
    )


@dataclass
class StabilitySeries:
    """Per-step sample statistics of the squared norms (and higher moments)."""

    t: np.ndarray
    mean_l2sq: np.ndarray
    min_l2sq: np.ndarray
    max_l2sq: np.ndarray
    mean_h1sq: np.ndarray
    min_h1sq: np.ndarray
    max_h1sq: np.ndarray
    mean_l2_p4: np.ndarray | None = None
    mean_l2_p8: np.ndarray | None = None
    mean_h1_p4: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        md = self.metadata
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# config_hash = {md.get('config_hash', '')}\n")
            fh.write(f"# seed = {md.get('seed', '')}\n")
            fh.write(f"# h = {md.get('h', '')}\n")
            fh.write(f"# tau = {md.get('tau', '')}\n")
            fh.write(f"# samples = {md.get('samples', '')}\n")
            header = "t,mean_l2sq,min_l2sq,max_l2sq,mean_h1sq,min_h1sq,max_h1sq"
            cols = [
                self.t, self.mean_l2sq, self.min_l2sq, self.max_l2sq,
                self.mean_h1sq, self.min_h1sq, self.max_h1sq,
            ]
            if self.mean_l2_p4 is not None:
                header += ",mean_l2_p4,mean_l2_p8"
                cols += [self.mean_l2_p4, self.mean_l2_p8]
            fh.write(header + "\n")
            for row in zip(*cols):
                fh.write(",".join(_fmt(x) for x in row) + "\n")


def stability_study(cfg: ExperimentConfig) -> StabilitySeries:
    """Moment statistics of one (tau, h) pair across Monte Carlo samples."""
    if cfg.time_tau is None:
        raise ConfigError("stability study needs time.tau")
    ctx = _prepare(cfg)
    tau = float(cfg.time_tau)
    ws = StepWorkspace(ctx.mesh, ctx.M, ctx.K, tau)
    scheme_cfg = cfg.make_scheme(tau)
    n_steps = scheme_cfg.n_steps

    count = 0
    mean_l2sq = np.zeros(n_steps + 1)
    mean_h1sq = np.zeros(n_steps + 1)
    min_l2sq = np.full(n_steps + 1, np.inf)
    max_l2sq = np.full(n_steps + 1, -np.inf)
    min_h1sq = np.full(n_steps + 1, np.inf)
    max_h1sq = np.full(n_steps + 1, -np.inf)
    mean_l2_p4 = np.zeros(n_steps + 1)
    mean_l2_p8 = np.zeros(n_steps + 1)
    mean_h1_p4 = np.zeros(n_steps + 1)
    failures = []
    times = None

    for sample in range(cfg.mc_samples):
        path = generate_path(cfg.mc_seed, sample, n_steps, tau)
        try:
            rec = run_trajectory(ctx.u0, path.increments, scheme_cfg, ctx.model, ws)
        except SolverError as exc:
            failures.append((sample, str(exc)))
            continue
        count += 1
        times = rec.times
        l2sq = rec.l2**2
        h1sq = rec.h1**2
        mean_l2sq += l2sq
        mean_h1sq += h1sq
        np.minimum(min_l2sq, l2sq, out=min_l2sq)
        np.maximum(max_l2sq, l2sq, out=max_l2sq)
        np.minimum(min_h1sq, h1sq, out=min_h1sq)
        np.maximum(max_h1sq, h1sq, out=max_h1sq)
        mean_l2_p4 += l2sq**2
        mean_l2_p8 += l2sq**4
        mean_h1_p4 += h1sq**2

    if len(failures) > cfg.mc_failure_budget:
        listing = "; ".join(f"sample {s}: {msg}" for s, msg in failures)
        raise StudyError(
            f"{len(failures)} diverged samples exceed the budget "
            f"{cfg.mc_failure_budget}: {listing}"
        )
    if count == 0:
        raise StudyError("no samples completed")

    for arr in (mean_l2sq, mean_h1sq, mean_l2_p4, mean_l2_p8, mean_h1_p4):
        arr /= count
        if not np.all(np.isfinite(arr)):
            raise StudyError("stability series contains non-finite values")

    higher = bool(cfg.output_higher_moments)
    return StabilitySeries(
        t=times,
        mean_l2sq=mean_l2sq,
        min_l2sq=min_l2sq,
        max_l2sq=max_l2sq,
        mean_h1sq=mean_h1sq,
        min_h1sq=min_h1sq,
        max_h1sq=max_h1sq,
        mean_l2_p4=mean_l2_p4 if higher else None,
        mean_l2_p8=mean_l2_p8 if higher else None,
        mean_h1_p4=mean_h1_p4 if higher else None,
        metadata={
            "config_hash": cfg.config_hash(),
            "seed": cfg.mc_seed,
            "h": cfg.h,
            "tau": tau,
            "samples": count,
            "failures": len(failures),
        },
    )


def _snapshot_steps(cfg: ExperimentConfig, tau: float) -> dict:
    """Map requested snapshot times to step indices, validating alignment."""
    out = {}
    for t in cfg.output_snapshot_times:
        step = round(float(t) / tau)
        if abs(float(t) - step * tau) > 1e-9 * max(1.0, cfg.time_T):
            raise ConfigError(f"snapshot time {t:g} is not a multiple of tau = {tau:g}")
        out[int(step)] = float(t)
    return out


def evolution_study(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Field and zero-level-set snapshots at the configured times.

    Writes ``field_t<time>.csv`` and ``levelset_t<time>.csv`` per snapshot,
    for sample 0 or for the sample-averaged field depending on
    ``output.field_mode``.  Returns {time: (field, segments)}.
    """
    if cfg.time_tau is None:
        raise ConfigError("evolution study needs time.tau")
    if not cfg.output_snapshot_times:
        raise ConfigError("evolution study needs output.snapshot_times")
    ctx = _prepare(cfg)
    tau = float(cfg.time_tau)
    steps = _snapshot_steps(cfg, tau)
    ws = StepWorkspace(ctx.mesh, ctx.M, ctx.K, tau)
    scheme_cfg = cfg.make_scheme(tau)
    n_steps = scheme_cfg.n_steps

    n_samples = cfg.mc_samples if cfg.output_field_mode == "mean" else 1
    sums = {step: np.zeros(ctx.mesh.num_free) for step in steps}
    for sample in range(n_samples):
        path = generate_path(cfg.mc_seed, sample, n_steps, tau)
        rec = run_trajectory(
            ctx.u0, path.increments, scheme_cfg, ctx.model, ws,
            snapshot_steps=steps.keys(),
        )
        for step in steps:
            sums[step] += rec.snapshots[step]

    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    comments = [
        f"config_hash = {cfg.config_hash()}",
        f"seed = {cfg.mc_seed}",
        f"h = {cfg.h}",
        f"tau = {tau}",
        f"field_mode = {cfg.output_field_mode}",
    ]
    results = {}
    for step, t in sorted(steps.items()):
        fld = Field.from_free(ctx.mesh, sums[step] / n_samples)
        segments = zero_level_set(fld)
        tag = f"{t:g}"
        write_field_csv(fld, out_dir / f"field_t{tag}.csv", comments=comments)
        write_levelset_csv(segments, out_dir / f"levelset_t{tag}.csv", comments=comments)
        results[t] = (fld, segments)
    return results
