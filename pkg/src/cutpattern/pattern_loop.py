"""Outer reduction-stress iteration for cutting-pattern optimisation.

Each step removes the current reduction stress from the target surface,
flattens every sheet, solves for the equilibrium shape of the resulting
cutting sheets and nudges the reduction stress by c times the gap between
the ideal target stress and the stress actually achieved. The equilibrium
surface becomes the next target surface.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .equilibrium import SolverConfig, minimize_energy
from .fem_core import recover_stresses, reference_from_patterns
from .flattening import ProjectionMode, fit_pattern, project_to_plane, strip_length, unstressed_edge_lengths
from .materials import EtfeBilinear
from .mesh import SurfaceMesh, atomic_write_text
from .pneumatics import PressureLoad

logger = logging.getLogger(__name__)


class PatternLoopError(RuntimeError):
    def __init__(self, step: int, stage: str, cause: Exception):
        super().__init__(f"step {step}, stage '{stage}': {cause}")
        self.step = step
        self.stage = stage


@dataclass(frozen=True)
class TargetStress:
    sigma1: float
    sigma2: float

    def __post_init__(self):
        if not (self.sigma1 > 0 and self.sigma2 > 0):
            raise ValueError("target stresses must be positive (tension)")

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma1, self.sigma2])


@dataclass
class LoopConfig:
    c: float = 0.5
    max_steps: int = 20
    stop_tol: Optional[float] = None  # kN/m; None -> 0.02 * min target stress
    solver: SolverConfig = field(default_factory=SolverConfig)
    fit_grad_tol: float = 1e-8
    reproject_each_step: bool = False

    def __post_init__(self):
        if not 0 < self.c <= 2:
            raise ValueError("c must lie in (0, 2]")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.stop_tol is not None and self.stop_tol < 0:
            raise ValueError("stop_tol must be non-negative")


@dataclass(frozen=True)
class DirectionStats:
    average: float
    max: float
    min: float
    stddev: float


@dataclass(frozen=True)
class StressStats:
    step: int
    directions: dict  # label -> DirectionStats


def stress_statistics(stresses, labels=("x", "y"), step: int = 0) -> StressStats:
    """Unweighted per-element average, extremes and population std per direction."""
    s = np.asarray(stresses, dtype=float)
    if s.ndim != 2 or len(s) == 0:
        raise ValueError("stress statistics need a non-empty (m, k) array")
    out = {}
    for col, label in enumerate(labels):
        v = s[:, col]
        out[label] = DirectionStats(float(v.mean()), float(v.max()), float(v.min()), float(v.std()))
    return StressStats(step, out)


def update_reduction_stress(current, achieved, target, c: float) -> np.ndarray:
    """sigma_hat + c (sigma* - sigma) for both principal directions."""
    current = np.asarray(current, dtype=float)
    achieved = np.asarray(achieved, dtype=float)
    if achieved.ndim == 2 and achieved.shape[1] == 3:
        achieved = achieved[:, :2]  # shear is not controlled
    target = target.as_array() if isinstance(target, TargetStress) else np.asarray(target, dtype=float)
    return current + c * (target - achieved)


@dataclass
class LoopResult:
    patterns: list
    initial_patterns: list
    equilibrium: SurfaceMesh
    history: list
    reports: list
    reduction_stress: np.ndarray
    stresses: np.ndarray
    fit_residuals: list = field(default_factory=list)

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.reports)


def direction_labels(mat) -> tuple:
    return ("X", "Y") if isinstance(mat, EtfeBilinear) else ("x", "y")


def run_pattern_optimization(surface: SurfaceMesh, mat, target: TargetStress,
                             load: Optional[PressureLoad], projection: ProjectionMode,
                             cfg: Optional[LoopConfig] = None, start=None,
                             callback=None) -> LoopResult:
    """Iterate flattening and equilibrium analysis until the stress is uniform enough.

    Steps are numbered from 0; with ``max_steps`` = N at most N + 1
    equilibrium solves are run (steps 0..N). ``start`` gives the initial
    nodal coordinates of the step-0 equilibrium solve (default: the target
    surface). ``callback(step, stats, report)`` is called after every step.
    """
    cfg = cfg or LoopConfig()
    stop_tol = 0.02 * min(target.sigma1, target.sigma2) if cfg.stop_tol is None else cfg.stop_tol
    labels = direction_labels(mat)
    m = surface.n_elements
    sheets = surface.sheet_ids
    sig_hat = np.tile(target.as_array(), (m, 1))
    target_surface = surface
    eq_start = surface.nodes if start is None else np.asarray(start, dtype=float)

    def stage(step, name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except Exception as exc:
            raise PatternLoopError(step, name, exc) from exc

    initial = [stage(0, "projection", project_to_plane, surface, s, projection) for s in sheets]
    patterns = initial
    _, theta = stage(0, "projection", reference_from_patterns, patterns, m)
    history, reports, residuals = [], [], []
    eq = surface
    stresses = np.zeros((m, 3))
    for step in range(cfg.max_steps + 1):
        if step > 0 and cfg.reproject_each_step:
            patterns = [stage(step, "projection", project_to_plane, target_surface, s, projection) for s in sheets]
        L0 = stage(step, "strain removal", unstressed_edge_lengths, target_surface, mat, sig_hat, theta)
        fitted, F = [], []
        for sheet in patterns:
            p, f = stage(step, "pattern fit", fit_pattern, sheet, L0[sheet.element_ids],
                         grad_tol=cfg.fit_grad_tol)
            fitted.append(p)
            F.append(f)
        patterns = fitted
        refs, theta = stage(step, "reference geometry", reference_from_patterns, patterns, m)
        work = target_surface.with_material_angle(theta)
        eq, report = stage(step, "equilibrium", minimize_energy, work, refs, mat, load, cfg.solver,
                           start=eq_start)
        if not report.converged:
            logger.warning("step %d: equilibrium solve did not converge (%s)", step, report.message)
        stresses = recover_stresses(eq, refs, mat)
        stats = stress_statistics(stresses, labels, step)
        history.append(stats)
        reports.append(report)
        residuals.append(F)
        if callback is not None:
            callback(step, stats, report)
        if max(d.stddev for d in stats.directions.values()) <= stop_tol:
            break
        sig_hat = update_reduction_stress(sig_hat, stresses, target, cfg.c)
        target_surface = eq
        eq_start = eq.nodes
    return LoopResult(patterns, initial, eq, history, reports, sig_hat, stresses, residuals)


def history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "direction", "avg", "max", "min", "stddev"])
    for stats in history:
        for label, d in stats.directions.items():
            w.writerow([stats.step, label, f"{d.average:.6f}", f"{d.max:.6f}", f"{d.min:.6f}", f"{d.stddev:.6f}"])
    return buf.getvalue()


def write_history_csv(history, path) -> None:
    atomic_write_text(path, history_csv(history))


def cable_demo(span: float = 1.2, guess: float = 1.0, target: float = 0.1,
               c: float = 1.0, E: float = 1.0, steps: int = 3):
    """Scalar version of the loop for a pin-ended cable.

    Returns rows (step, reduction stress, unstressed length, equilibrium
    stress) for steps 1..``steps``.
    """
    rows = []
    sig_hat = target
    for step in range(1, steps + 1):
        L0 = float(strip_length(guess, sig_hat / E))
        sigma = E * (span - L0) / L0
        rows.append((step, sig_hat, L0, sigma))
        sig_hat = float(update_reduction_stress(sig_hat, sigma, target, c))
    return rows
