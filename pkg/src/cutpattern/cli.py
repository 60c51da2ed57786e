"""Command-line front end.

    cutpattern optimize --config model.toml [--out DIR] [--log FILE] [--csv]
    cutpattern equilibrium --config model.toml
    cutpattern flatten --config model.toml
    cutpattern check-gradients --config model.toml
    cutpattern cable-demo [--csv]

Exit codes: 0 success, 1 error (message on stderr), 2 a solver did not
converge or a gradient check failed.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .equilibrium import SolverConfig, check_gradient, minimize_energy, total_potential
from .fem_core import ReferenceElements, energy_and_gradient, recover_stresses, reference_from_patterns
from .flattening import (ParallelProjection, PointProjection, fit_pattern, fit_sphere, pattern_objective,
                         project_to_plane, unstressed_edge_lengths)
from .materials import EtfeBilinear, MaterialError, OrthotropicElastic, make_material
from .mesh import (MeshError, atomic_write_text, generate_hp_mesh, generate_square_cushion_mesh, load_mesh,
                   save_mesh, save_pattern)
from .pattern_loop import (LoopConfig, PatternLoopError, TargetStress, cable_demo, direction_labels,
                           history_csv, run_pattern_optimization, stress_statistics)
from .pneumatics import PressureLoad

logger = logging.getLogger("cutpattern")

GRADIENT_TOL = 1e-6


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


@dataclass
class ModelSpec:
    kind: str  # hp | cushion | file
    W: float = 10.0
    divisions: int = 8
    lift: float = 0.0
    sheets: int = 1
    path: Optional[Path] = None


@dataclass
class RunConfig:
    model: ModelSpec
    material: object
    target: Optional[TargetStress]
    load: Optional[PressureLoad]
    projection: object
    loop: LoopConfig
    out_dir: Path = Path("out")
    seed: int = 0
    source: Optional[Path] = field(default=None, repr=False)

    @property
    def solver(self) -> SolverConfig:
        return self.loop.solver


# -- configuration ------------------------------------------------------------

def _section(raw, name, required=True):
    sec = raw.get(name)
    if sec is None:
        if required:
            raise ConfigError(name, "section is missing")
        return None
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a table")
    return dict(sec)


def _number(sec, name, key, default=None, kind=float):
    if key not in sec:
        if default is None:
            raise ConfigError(f"{name}.{key}", "is required")
        return default
    v = sec.pop(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name}.{key}", f"must be a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{name}.{key}", f"must be an integer, got {v!r}")
    return kind(v)


def _vector(sec, name, key):
    if key not in sec:
        return None
    v = sec.pop(key)
    if not (isinstance(v, list) and len(v) == 3 and all(isinstance(c, (int, float)) for c in v)):
        raise ConfigError(f"{name}.{key}", "must be a list of three numbers")
    return tuple(float(c) for c in v)


def _no_extra(sec, name):
    if sec:
        raise ConfigError(f"{name}.{sorted(sec)[0]}", "unknown key")


def _model(raw, base: Path) -> ModelSpec:
    sec = _section(raw, "model")
    kind = sec.pop("kind", None)
    if kind == "hp":
        spec = ModelSpec("hp", W=_number(sec, "model", "W"), divisions=_number(sec, "model", "divisions", kind=int))
        if spec.W <= 0:
            raise ConfigError("model.W", "must be positive")
    elif kind == "cushion":
        spec = ModelSpec("cushion", W=_number(sec, "model", "W"), divisions=_number(sec, "model", "divisions", kind=int),
                         lift=_number(sec, "model", "lift", 0.0), sheets=_number(sec, "model", "sheets", 1, int))
        if spec.W <= 0:
            raise ConfigError("model.W", "must be positive")
        if spec.lift < 0:
            raise ConfigError("model.lift", "must be non-negative")
        if spec.sheets not in (1, 2):
            raise ConfigError("model.sheets", "must be 1 or 2")
    elif kind == "file":
        path = sec.pop("path", None)
        if not isinstance(path, str):
            raise ConfigError("model.path", "is required for kind = 'file'")
        p = (base / path).resolve()
        if not p.is_file():
            raise ConfigError("model.path", f"file not found: {p}")
        spec = ModelSpec("file", path=p)
    else:
        raise ConfigError("model.kind", f"must be 'hp', 'cushion' or 'file', got {kind!r}")
    if spec.kind != "file" and spec.divisions < 2:
        raise ConfigError("model.divisions", "must be >= 2")
    _no_extra(sec, "model")
    return spec


def _material(raw):
    sec = _section(raw, "material")
    kind = sec.pop("type", None)
    if not isinstance(kind, str):
        raise ConfigError("material.type", "is required ('orthotropic' or 'etfe')")
    known = {"orthotropic": OrthotropicElastic, "etfe": EtfeBilinear}.get(kind)
    if known is None:
        raise ConfigError("material.type", f"must be 'orthotropic' or 'etfe', got {kind!r}")
    names = {f.name for f in fields(known)}
    for k, v in sec.items():
        if k not in names:
            raise ConfigError(f"material.{k}", "unknown key")
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"material.{k}", f"must be a number, got {v!r}")
    try:
        return make_material(kind, **{k: float(v) for k, v in sec.items()})
    except MaterialError as exc:
        raise ConfigError("material", str(exc)) from None


def _target(raw):
    sec = _section(raw, "target", required=False)
    if sec is None:
        return None
    s1 = _number(sec, "target", "sigma1")
    s2 = _number(sec, "target", "sigma2")
    for key, v in (("sigma1", s1), ("sigma2", s2)):
        if v <= 0:
            raise ConfigError(f"target.{key}", f"must be positive (tension), got {v}")
    _no_extra(sec, "target")
    return TargetStress(s1, s2)


def _pressure(raw):
    sec = _section(raw, "pressure", required=False)
    if sec is None:
        return None
    p = _number(sec, "pressure", "p")
    if p < 0:
        raise ConfigError("pressure.p", "must be non-negative")
    _no_extra(sec, "pressure")
    return PressureLoad(p)


def _projection(raw):
    sec = _section(raw, "projection", required=False) or {"mode": "parallel"}
    mode = sec.pop("mode", "parallel")
    normal = _vector(sec, "projection", "normal")
    origin = _vector(sec, "projection", "origin")
    if normal is not None and not any(normal):
        raise ConfigError("projection.normal", "must be non-zero")
    if mode == "parallel":
        proj = ParallelProjection(normal or (0.0, 0.0, 1.0), origin or (0.0, 0.0, 0.0))
    elif mode == "point":
        proj = PointProjection(_vector(sec, "projection", "center"), normal, origin)
    else:
        raise ConfigError("projection.mode", f"must be 'parallel' or 'point', got {mode!r}")
    _no_extra(sec, "projection")
    return proj


def _solver(raw):
    sec = _section(raw, "solver", required=False) or {}
    d = SolverConfig()
    kw = dict(max_iterations=_number(sec, "solver", "max_iterations", d.max_iterations, int),
              grad_tol_rel=_number(sec, "solver", "grad_tol_rel", d.grad_tol_rel),
              history_size=_number(sec, "solver", "history_size", d.history_size, int),
              step_init=_number(sec, "solver", "step_init", d.step_init))
    if "grad_tol" in sec:
        kw["grad_tol"] = _number(sec, "solver", "grad_tol")
    _no_extra(sec, "solver")
    for k, v in kw.items():
        if v <= 0:
            raise ConfigError(f"solver.{k}", "must be positive")
    return SolverConfig(**kw)


def _loop(raw, solver):
    sec = _section(raw, "loop", required=False) or {}
    c = _number(sec, "loop", "c", 0.5)
    steps = _number(sec, "loop", "max_steps", 20, int)
    stop = sec.pop("stop_tol", None)
    reproject = sec.pop("reproject_each_step", False)
    _no_extra(sec, "loop")
    if not 0 < c <= 2:
        raise ConfigError("loop.c", f"must lie in (0, 2], got {c}")
    if steps < 1:
        raise ConfigError("loop.max_steps", "must be >= 1")
    if stop is not None and (isinstance(stop, bool) or not isinstance(stop, (int, float)) or stop < 0):
        raise ConfigError("loop.stop_tol", "must be a non-negative number")
    if not isinstance(reproject, bool):
        raise ConfigError("loop.reproject_each_step", "must be true or false")
    return LoopConfig(c=c, max_steps=steps, stop_tol=None if stop is None else float(stop),
                      solver=solver, reproject_each_step=reproject)


def parse_config(raw: dict, base: Path = Path(".")) -> RunConfig:
    raw = dict(raw)
    model = _model(raw, base)
    mat = _material(raw)
    target = _target(raw)
    load = _pressure(raw)
    proj = _projection(raw)
    loop = _loop(raw, _solver(raw))
    out = _section(raw, "output", required=False) or {}
    out_dir = out.pop("dir", "out")
    seed = _number(out, "output", "seed", 0, int)
    _no_extra(out, "output")
    if model.kind == "cushion" and load is None:
        raise ConfigError("pressure.p", "a cushion model needs an internal pressure")
    extra = sorted(set(raw) - {"model", "material", "target", "pressure", "projection", "loop", "solver", "output"})
    if extra:
        raise ConfigError(extra[0], "unknown section")
    return RunConfig(model, mat, target, load, proj, loop, Path(out_dir), seed)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("--config", f"file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("--config", f"{path}: {exc}") from None
    cfg = parse_config(raw, path.parent)
    cfg.source = path
    return cfg


def build_surface(cfg: RunConfig):
    m = cfg.model
    if m.kind == "hp":
        return generate_hp_mesh(m.W, m.divisions)
    if m.kind == "cushion":
        return generate_square_cushion_mesh(m.W, m.lift, m.divisions, m.sheets)
    return load_mesh(m.path)


# -- outputs ------------------------------------------------------------------

def pattern_svg(initial, final, margin: float = 0.05) -> str:
    """Overlay of a cutting sheet before (black) and after (red) optimisation."""
    pts = np.vstack([initial.nodes2d, final.nodes2d])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = margin * float(np.max(hi - lo))
    lo, hi = lo - pad, hi + pad
    w, h = hi - lo
    width = 800.0
    scale = width / w

    def path(sheet, colour):
        xy = (sheet.nodes2d - lo) * scale
        xy[:, 1] = h * scale - xy[:, 1]  # SVG y points down
        d = " ".join("M{:.3f},{:.3f} L{:.3f},{:.3f} L{:.3f},{:.3f} Z".format(*xy[t].ravel())
                     for t in sheet.elements)
        return f'<path d="{d}" fill="none" stroke="{colour}" stroke-width="0.6"/>'

    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{h * scale:.0f}" '
            f'viewBox="0 0 {width:.3f} {h * scale:.3f}">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n'
            f"{path(initial, 'black')}\n{path(final, 'red')}\n</svg>\n")


def _stats_line(stats) -> str:
    return "  ".join(f"{k}: avg {d.average:.4f} max {d.max:.4f} min {d.min:.4f} std {d.stddev:.4f}"
                     for k, d in stats.directions.items())


def _step_zero(cfg: RunConfig, surface):
    """Initial projection plus fit to the target stress removed from the surface."""
    patterns = [project_to_plane(surface, s, cfg.projection) for s in surface.sheet_ids]
    _, theta = reference_from_patterns(patterns, surface.n_elements)
    L0 = unstressed_edge_lengths(surface, cfg.material, cfg.target.as_array(), theta)
    fitted = [fit_pattern(p, L0[p.element_ids], grad_tol=cfg.loop.fit_grad_tol) for p in patterns]
    return patterns, [f[0] for f in fitted], [f[1] for f in fitted]


def _need_target(cfg, command):
    if cfg.target is None:
        raise ConfigError("target.sigma1", f"'{command}' needs a [target] section")


# -- commands -----------------------------------------------------------------

def cmd_optimize(cfg: RunConfig, out: Path, csv_only: bool = False) -> int:
    _need_target(cfg, "optimize")
    surface = build_surface(cfg)
    out.mkdir(parents=True, exist_ok=True)

    def progress(step, stats, report):
        logger.info("step %d: %s (%d iterations, %s)", step, _stats_line(stats), report.iterations, report.message)
        if not csv_only:
            print(f"step {step:2d}  {_stats_line(stats)}", flush=True)

    result = run_pattern_optimization(surface, cfg.material, cfg.target, cfg.load, cfg.projection,
                                      cfg.loop, callback=progress)
    table = history_csv(result.history)
    atomic_write_text(out / "history.csv", table)
    save_mesh(result.equilibrium, out / "equilibrium.mesh")
    for init, final in zip(result.initial_patterns, result.patterns):
        save_pattern(init, out / f"initial_sheet{final.sheet}.pattern")
        save_pattern(final, out / f"pattern_sheet{final.sheet}.pattern")
        atomic_write_text(out / f"pattern_sheet{final.sheet}.svg", pattern_svg(init, final))
    if csv_only:
        sys.stdout.write(table)
    else:
        print(f"wrote {out}")
    if not result.all_converged:
        bad = [i for i, r in enumerate(result.reports) if not r.converged]
        print(f"warning: equilibrium solve did not converge at steps {bad}", file=sys.stderr)
        return 2
    return 0


def cmd_equilibrium(cfg: RunConfig, out: Path) -> int:
    """One equilibrium solve.

    With a [target] section the cutting sheets come from the first loop step
    (target stress removed, then flattened); otherwise the surface itself is
    taken as unstressed.
    """
    surface = build_surface(cfg)
    if cfg.target is not None:
        _, fitted, _ = _step_zero(cfg, surface)
        refs, theta = reference_from_patterns(fitted, surface.n_elements)
        surface = surface.with_material_angle(theta)
    else:
        refs = ReferenceElements.from_coords(surface.nodes, surface.elements)
    eq, report = minimize_energy(surface, refs, cfg.material, cfg.load, cfg.solver)
    out.mkdir(parents=True, exist_ok=True)
    save_mesh(eq, out / "equilibrium.mesh")
    stats = stress_statistics(recover_stresses(eq, refs, cfg.material), direction_labels(cfg.material))
    print(f"iterations {report.iterations}  {report.message}")
    print(f"residual {report.residual_norm:.3e}  grad_tol {report.grad_tol:.3e}")
    print(_stats_line(stats))
    if cfg.model.kind == "cushion":
        X = eq.nodes
        half = cfg.model.W / 4.0
        centre = (np.abs(X[:, 0]) <= half) & (np.abs(X[:, 1]) <= half)
        print(f"central sphere radius {fit_sphere(X[centre])[1]:.4f} m")
    return 0 if report.converged else 2


def cmd_flatten(cfg: RunConfig, out: Path) -> int:
    _need_target(cfg, "flatten")
    surface = build_surface(cfg)
    initial, fitted, F = _step_zero(cfg, surface)
    out.mkdir(parents=True, exist_ok=True)
    for init, final, f in zip(initial, fitted, F):
        save_pattern(final, out / f"pattern_sheet{final.sheet}.pattern")
        atomic_write_text(out / f"pattern_sheet{final.sheet}.svg", pattern_svg(init, final))
        print(f"sheet {final.sheet}: {len(final.elements)} elements, F* = {f:.6e}")
    return 0


def cmd_cable_demo(csv_only: bool = False) -> int:
    rows = cable_demo()
    if csv_only:
        buf = io.StringIO()
        buf.write("step,sigma_hat,L0,sigma\n")
        for step, sh, L0, s in rows:
            buf.write(f"{step},{sh:.6f},{L0:.6f},{s:.6f}\n")
        sys.stdout.write(buf.getvalue())
    else:
        print(f"{'step':>4} {'sigma_hat':>10} {'L0':>8} {'sigma':>8}")
        for step, sh, L0, s in rows:
            print(f"{step:>4} {sh:>10.4f} {L0:>8.4f} {s:>8.4f}")
    return 0


def gradient_objectives(cfg: RunConfig):
    """(name, fun, x, step) for S, Pi (when pressurised) and F on the configured model.

    Free coordinates are perturbed randomly (seeded) so that gradients are
    not trivially zero.
    """
    rng = np.random.default_rng(cfg.seed)
    surface = build_surface(cfg)
    if cfg.target is not None:
        _, fitted, _ = _step_zero(cfg, surface)
        refs, theta = reference_from_patterns(fitted, surface.n_elements)
        surface = surface.with_material_angle(theta)
        L0 = unstressed_edge_lengths(surface, cfg.material, cfg.target.as_array(), theta)
        sheet = fitted[0]
    else:
        refs = ReferenceElements.from_coords(surface.nodes, surface.elements)
        L0, sheet = None, None
    char = float(np.sqrt(np.mean(refs.area)))
    free = ~surface.fixed
    X = surface.nodes.copy()
    X[free] += 0.02 * char * rng.standard_normal(int(free.sum()))
    h = 1e-6 * char

    def fun_s(x):
        Y = X.copy()
        Y[free] = x
        e, g = energy_and_gradient(surface, refs, cfg.material, Y)
        return e, g[free]

    objectives = [("S", fun_s, X[free], h)]
    if cfg.load is not None:
        def fun_pi(x):
            Y = X.copy()
            Y[free] = x
            e, g = total_potential(surface, refs, cfg.material, cfg.load, Y)
            return e, g[free]
        objectives.append(("Pi", fun_pi, X[free], h))
    if sheet is not None:
        L0s = L0[sheet.element_ids]
        xy = sheet.nodes2d + 0.02 * char * rng.standard_normal(sheet.nodes2d.shape)

        def fun_f(x):
            F, g = pattern_objective(x.reshape(-1, 2), sheet.elements, L0s)
            return F, g.ravel()
        objectives.append(("F", fun_f, xy.ravel(), h))
    return objectives


def cmd_check_gradients(cfg: RunConfig) -> int:
    ok = True
    for name, fun, x, step in gradient_objectives(cfg):
        res = check_gradient(fun, x, step)
        good = res.max_error < GRADIENT_TOL
        ok &= good
        i = res.worst_index
        print(f"{name:>2}: max rel error {res.max_error:.3e} at coordinate {i} "
              f"(analytic {res.analytic[i]:.6e}, central difference {res.numeric[i]:.6e}) "
              f"{'ok' if good else 'FAIL'}")
    return 0 if ok else 2


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cutpattern", description="Cutting-pattern optimisation for membrane structures.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("optimize", "run the full pattern loop"),
                        ("equilibrium", "single equilibrium solve"),
                        ("flatten", "project and fit the cutting sheets once"),
                        ("check-gradients", "finite-difference check of S, Pi and F")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--log", help="write a progress log to this file")
        p.add_argument("--csv", action="store_true", help="print machine-readable CSV on stdout")
    p = sub.add_parser("cable-demo", help="scalar cable example of the reduction-stress iteration")
    p.add_argument("--csv", action="store_true", help="print CSV instead of a table")
    p.add_argument("--log", help="write a progress log to this file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = None
    if args.log:
        handler = logging.FileHandler(args.log, mode="w")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)
    try:
        if args.command == "cable-demo":
            return cmd_cable_demo(args.csv)
        cfg = load_config(args.config)
        out = Path(args.out) if args.out else cfg.out_dir
        if args.command == "optimize":
            return cmd_optimize(cfg, out, args.csv)
        if args.command == "equilibrium":
            return cmd_equilibrium(cfg, out)
        if args.command == "flatten":
            return cmd_flatten(cfg, out)
        return cmd_check_gradients(cfg)
    except (ConfigError, MeshError, MaterialError, PatternLoopError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if handler is not None:
            logger.removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
