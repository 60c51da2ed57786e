"""Equilibrium shapes by energy minimisation.

``minimize`` is a limited-memory BFGS with projected backtracking line search
for smooth objectives under simple bounds. ``minimize_energy`` applies it to
the strain energy S(X) of a membrane on fixed supports, or to S(X) - pV(X)
when a pressure load is present. Supported coordinates are removed from the
variable vector.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .fem_core import ReferenceElements, energy_and_gradient
from .mesh import DegenerateElementError, SurfaceMesh, atomic_write_text
from .pneumatics import PressureLoad, enclosed_volume, pressure_nodal_forces

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    max_iterations: int = 20000
    grad_tol: Optional[float] = None  # kN; None -> grad_tol_rel * problem scale
    grad_tol_rel: float = 1e-8
    history_size: int = 10
    armijo: float = 1e-4
    backtrack: float = 0.5
    step_init: float = 1e-2  # length of the first trial step along -g
    max_backtracks: int = 60
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.grad_tol is not None and self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.grad_tol_rel <= 0 or self.step_init <= 0:
            raise ValueError("tolerances and step_init must be positive")
        if not (0 < self.armijo < 1 and 0 < self.backtrack < 1):
            raise ValueError("line-search factors must lie in (0, 1)")
        if self.history_size < 1 or self.max_iterations < 0:
            raise ValueError("history_size must be >= 1 and max_iterations >= 0")


@dataclass
class SolverReport:
    converged: bool
    iterations: int
    final_energy: float
    grad_norm: float
    grad_tol: float
    residual_norm: float = math.nan
    line_search_failures: int = 0
    message: str = ""
    energies: list = field(default_factory=list, repr=False)


def _two_loop(q, S, Y):
    alpha = []
    q = q.copy()
    for s, y in zip(reversed(S), reversed(Y)):
        a = (s @ q) / (y @ s)
        alpha.append(a)
        q -= a * y
    s, y = S[-1], Y[-1]
    q *= (s @ y) / (y @ y)
    for (s, y), a in zip(zip(S, Y), reversed(alpha)):
        b = (y @ q) / (y @ s)
        q += (a - b) * s
    return q


def minimize(fun: Callable, x0, cfg: SolverConfig, grad_tol: float,
             lower=None, upper=None, log_rows=None):
    """Minimise ``fun(x) -> (f, g)`` subject to lower <= x <= upper.

    Convergence is declared when the infinity norm of the projected gradient
    drops to ``grad_tol``. Accepted iterates never increase f.
    """
    lo = np.full(len(x0), -np.inf) if lower is None else np.asarray(lower, float)
    hi = np.full(len(x0), np.inf) if upper is None else np.asarray(upper, float)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    f, g = fun(x)
    S, Y = deque(maxlen=cfg.history_size), deque(maxlen=cfg.history_size)
    energies = [f]
    failures = 0
    stalled = 0
    message = "iteration limit reached"
    converged = False
    it = 0
    while True:
        blocked = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
        pg = np.where(blocked, 0.0, g)
        gnorm = float(np.max(np.abs(pg))) if len(pg) else 0.0
        if log_rows is not None:
            log_rows.append((it, f, gnorm))
        if gnorm <= grad_tol:
            converged, message = True, "converged"
            break
        if it >= cfg.max_iterations:
            break
        it += 1
        if S:
            d = -_two_loop(pg, S, Y)
            d[blocked] = 0.0
            if d @ pg >= 0:
                S.clear(), Y.clear()
        if not S:
            d = -pg * (cfg.step_init / gnorm)
        step = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            xn = np.clip(x + step * d, lo, hi)
            if np.array_equal(xn, x):
                break
            try:
                fn, gn = fun(xn)
            except DegenerateElementError:
                fn = math.inf
            if np.isfinite(fn) and fn <= f + cfg.armijo * min(g @ (xn - x), 0.0) and fn <= f:
                accepted = True
                break
            step *= cfg.backtrack
        if not accepted:
            failures += 1
            if S:
                S.clear(), Y.clear()
                continue
            message = "line search failed along steepest descent"
            break
        stalled = stalled + 1 if fn >= f else 0
        if stalled >= 5:
            message = "no further decrease: objective at rounding level"
            break
        s, y = xn - x, gn - g
        sy = s @ y
        if sy > 1e-12 * math.sqrt((s @ s) * (y @ y)):
            S.append(s)
            Y.append(y)
        x, f, g = xn, fn, gn
        energies.append(f)
    report = SolverReport(converged, it, float(f), gnorm, grad_tol,
                          line_search_failures=failures, message=message, energies=energies)
    return x, report


def _write_log(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "energy", "grad_norm"])
    for it, f, gn in rows:
        w.writerow([it, repr(float(f)), repr(float(gn))])
    atomic_write_text(path, buf.getvalue())


def default_grad_tol(refs: ReferenceElements, mat, cfg: SolverConfig) -> float:
    if cfg.grad_tol is not None:
        return cfg.grad_tol
    return cfg.grad_tol_rel * float(np.mean(refs.area)) * mat.stiffness_scale


def total_potential(surface: SurfaceMesh, refs, mat, load: Optional[PressureLoad] = None, nodes=None):
    """Pi = S - pV and its gradient over all nodes, shape (n, 3)."""
    X = surface.nodes if nodes is None else nodes
    energy, grad = energy_and_gradient(surface, refs, mat, X)
    if load is not None and load.p != 0:
        energy -= load.p * enclosed_volume(surface, X)
        grad = grad - pressure_nodal_forces(surface, load, X)
    return energy, grad


def minimize_energy(surface: SurfaceMesh, refs: ReferenceElements, mat,
                    load: Optional[PressureLoad] = None, cfg: Optional[SolverConfig] = None,
                    start=None):
    """Equilibrium shape for the cutting-sheet geometry ``refs``.

    ``start`` optionally overrides the initial nodal coordinates (the supports
    always keep the coordinates of ``surface``).
    """
    cfg = cfg or SolverConfig()
    if len(refs) != surface.n_elements:
        raise ValueError("reference geometry must cover every element")
    free = ~surface.fixed
    base = np.array(surface.nodes if start is None else start, dtype=float)
    base[surface.fixed] = surface.nodes[surface.fixed]
    # surface the offending element id before iterating
    energy_and_gradient(surface, refs, mat, base)
    lower = surface.lower[free] if surface.lower is not None else None
    upper = surface.upper[free] if surface.upper is not None else None
    tol = default_grad_tol(refs, mat, cfg)

    def fun(x):
        X = base.copy()
        X[free] = x
        e, g = total_potential(surface, refs, mat, load, X)
        return e, g[free]

    rows = [] if cfg.log_path else None
    x, report = minimize(fun, base[free], cfg, tol, lower, upper, rows)
    X = base.copy()
    X[free] = x
    result = surface.with_nodes(X)
    report.residual_norm = float(np.max(np.abs(equilibrium_residual(result, refs, mat, load)), initial=0.0))
    if rows is not None:
        _write_log(cfg.log_path, rows)
    if not report.converged:
        logger.warning("equilibrium solve stopped after %d iterations: %s (|g|=%.3e, tol=%.3e)",
                       report.iterations, report.message, report.grad_norm, tol)
    return result, report


def equilibrium_residual(surface: SurfaceMesh, refs, mat, load: Optional[PressureLoad] = None) -> np.ndarray:
    """Internal minus pressure force at every free coordinate (zero at equilibrium)."""
    _, grad = energy_and_gradient(surface, refs, mat)
    if load is not None:
        grad = grad - pressure_nodal_forces(surface, load)
    return grad[~surface.fixed]


class GradientCheck(NamedTuple):
    max_error: float
    worst_index: int
    analytic: np.ndarray
    numeric: np.ndarray


def check_gradient(fun: Callable, x, step: float, rel_floor: float = 1e-2) -> GradientCheck:
    """Compare the gradient returned by ``fun(x) -> (f, g)`` with central differences.

    The error of component i is |fd_i - g_i| / max(|fd_i|, |g_i|, floor),
    with floor = rel_floor * max|g| so that near-zero components are judged
    against the overall gradient size.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    _, g = fun(x)
    g = np.asarray(g, dtype=float)
    fd = np.empty_like(g)
    for i in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        fd[i] = (fun(xp)[0] - fun(xm)[0]) / (2.0 * step)
    scale = max(np.max(np.abs(g), initial=0.0), np.max(np.abs(fd), initial=0.0))
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(g)), max(rel_floor * scale, 1e-300))
    err = np.abs(fd - g) / denom
    worst = int(np.argmax(err)) if len(err) else -1
    return GradientCheck(float(err[worst]) if len(err) else 0.0, worst, g, fd)
