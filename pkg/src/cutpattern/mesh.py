"""Triangulated membrane surfaces, planar cutting sheets and their text file format.

Node coordinates are in metres. Connectivity is stored as integer arrays;
``SurfaceMesh`` and ``PatternSheet`` are validated on construction and their
arrays are made read-only, so a new object is built whenever geometry changes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

AREA_TOL = 1e-12


class MeshError(ValueError):
    """Raised when a mesh violates one of its structural invariants."""


class DegenerateElementError(MeshError):
    def __init__(self, element: int, area: float):
        super().__init__(f"element {element} is degenerate (area {area:.3e} m^2)")
        self.element = element
        self.area = area


class MeshParseError(MeshError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def scatter_rows(index, values, n_rows: int) -> np.ndarray:
    """Sum rows of ``values`` into an (n_rows, k) array at ``index`` (fixed order)."""
    values = np.asarray(values, dtype=float)
    return np.column_stack([np.bincount(index, weights=values[:, c], minlength=n_rows)
                            for c in range(values.shape[1])])


def triangle_areas(coords: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Unsigned areas of triangles; works for 2D or 3D coordinates."""
    p = coords[elements]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    if coords.shape[1] == 2:
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def signed_areas_2d(coords: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p = coords[elements]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _check_connectivity(elements: np.ndarray, n_nodes: int) -> None:
    if elements.ndim != 2 or elements.shape[1] != 3:
        raise MeshError("elements must be an (m, 3) integer array")
    if len(elements) == 0:
        raise MeshError("mesh has no elements")
    if elements.min() < 0 or elements.max() >= n_nodes:
        bad = int(np.flatnonzero((elements < 0).any(1) | (elements >= n_nodes).any(1))[0])
        raise MeshError(f"element {bad} references a node that does not exist")
    dup = (elements[:, 0] == elements[:, 1]) | (elements[:, 1] == elements[:, 2]) | (elements[:, 0] == elements[:, 2])
    if dup.any():
        raise MeshError(f"element {int(np.flatnonzero(dup)[0])} repeats a node id")


def _check_winding(elements: np.ndarray, label: str) -> None:
    # a shared edge must be traversed in opposite directions, so each
    # directed edge may appear at most once
    directed = np.concatenate([elements[:, [0, 1]], elements[:, [1, 2]], elements[:, [2, 0]]])
    _, counts = np.unique(directed, axis=0, return_counts=True)
    if (counts > 1).any():
        raise MeshError(f"inconsistent element winding in {label}")


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """3D membrane surface.

    ``fixed`` is an (n, 3) boolean array of per-coordinate supports, ``sheet``
    assigns each element to a cutting sheet and ``material_angle`` is the angle
    (rad) from the element local x-axis (edge node1 -> node2) to the warp
    direction. ``lower``/``upper`` are optional coordinate bounds.
    """

    nodes: np.ndarray
    elements: np.ndarray
    fixed: np.ndarray
    sheet: np.ndarray
    material_angle: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        elements = np.asarray(self.elements, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 3:
            raise MeshError("nodes must be an (n, 3) array")
        if not np.isfinite(nodes).all():
            raise MeshError("node coordinates must be finite")
        _check_connectivity(elements, len(nodes))
        m = len(elements)
        fixed = np.broadcast_to(np.asarray(self.fixed, dtype=bool), nodes.shape)
        sheet = np.asarray(self.sheet, dtype=np.int64).reshape(-1)
        angle = np.asarray(self.material_angle, dtype=float).reshape(-1)
        if sheet.shape != (m,) or angle.shape != (m,):
            raise MeshError("sheet and material_angle need one entry per element")
        if (sheet < 0).any():
            raise MeshError("sheet ids must be non-negative")
        if (np.abs(angle) > math.pi + 1e-12).any():
            raise MeshError("material angles must lie in [-pi, pi]")
        areas = triangle_areas(nodes, elements)
        if (areas <= AREA_TOL).any():
            k = int(np.argmin(areas))
            raise DegenerateElementError(k, float(areas[k]))
        for s in np.unique(sheet):
            _check_winding(elements[sheet == s], f"sheet {s}")
        for name in ("lower", "upper"):
            b = getattr(self, name)
            if b is not None:
                b = np.broadcast_to(np.asarray(b, dtype=float), nodes.shape)
                object.__setattr__(self, name, _readonly(b))
        if self.lower is not None and self.upper is not None and (self.lower > self.upper).any():
            raise MeshError("lower bound exceeds upper bound")
        object.__setattr__(self, "nodes", _readonly(nodes))
        object.__setattr__(self, "elements", _readonly(elements))
        object.__setattr__(self, "fixed", _readonly(fixed))
        object.__setattr__(self, "sheet", _readonly(sheet))
        object.__setattr__(self, "material_angle", _readonly(angle))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def sheet_ids(self) -> list[int]:
        return [int(s) for s in np.unique(self.sheet)]

    def with_nodes(self, nodes) -> "SurfaceMesh":
        return SurfaceMesh(nodes, self.elements, self.fixed, self.sheet,
                           self.material_angle, self.lower, self.upper)

    def with_material_angle(self, angle) -> "SurfaceMesh":
        return SurfaceMesh(self.nodes, self.elements, self.fixed, self.sheet,
                           angle, self.lower, self.upper)

    def areas(self) -> np.ndarray:
        return triangle_areas(self.nodes, self.elements)

    def normals(self) -> np.ndarray:
        p = self.nodes[self.elements]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    def boundary_nodes(self) -> np.ndarray:
        """Nodes on edges used by exactly one element."""
        e = self.elements
        edges = np.sort(np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return np.unique(uniq[counts == 1])


def element_area(mesh: SurfaceMesh, k: int) -> float:
    p = mesh.nodes[mesh.elements[k]]
    return 0.5 * float(np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])))


def element_normal(mesh: SurfaceMesh, k: int) -> np.ndarray:
    p = mesh.nodes[mesh.elements[k]]
    n = np.cross(p[1] - p[0], p[2] - p[0])
    norm = np.linalg.norm(n)
    if 0.5 * norm <= AREA_TOL:
        raise DegenerateElementError(k, 0.5 * norm)
    return n / norm


def element_centroid(mesh: SurfaceMesh, k: int) -> np.ndarray:
    return mesh.nodes[mesh.elements[k]].mean(axis=0)


@dataclass(frozen=True, eq=False)
class PatternSheet:
    """Planar cutting sheet.

    ``node_ids``/``element_ids`` map the sheet's local numbering back to the
    surface mesh; ``elements`` uses local node indices in the same order as
    the surface elements so that node 1, 2, 3 correspond one-to-one.
    """

    nodes2d: np.ndarray
    elements: np.ndarray
    node_ids: np.ndarray
    element_ids: np.ndarray
    sheet: int = 0
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    _check_orientation: bool = field(default=True, repr=False)

    def __post_init__(self):
        xy = np.asarray(self.nodes2d, dtype=float)
        el = np.asarray(self.elements, dtype=np.int64)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise MeshError("pattern nodes must be an (n, 2) array")
        if not np.isfinite(xy).all():
            raise MeshError("pattern coordinates must be finite")
        _check_connectivity(el, len(xy))
        nid = np.asarray(self.node_ids, dtype=np.int64)
        eid = np.asarray(self.element_ids, dtype=np.int64)
        if nid.shape != (len(xy),) or eid.shape != (len(el),):
            raise MeshError("node_ids/element_ids do not match the sheet size")
        if self._check_orientation:
            a = signed_areas_2d(xy, el)
            if (a <= AREA_TOL).any():
                k = int(np.argmin(a))
                raise DegenerateElementError(int(eid[k]), float(a[k]))
        for name in ("lower", "upper"):
            b = getattr(self, name)
            if b is not None:
                object.__setattr__(self, name, _readonly(np.broadcast_to(np.asarray(b, float), xy.shape)))
        object.__setattr__(self, "nodes2d", _readonly(xy))
        object.__setattr__(self, "elements", _readonly(el))
        object.__setattr__(self, "node_ids", _readonly(nid))
        object.__setattr__(self, "element_ids", _readonly(eid))

    def with_nodes(self, xy) -> "PatternSheet":
        return PatternSheet(xy, self.elements, self.node_ids, self.element_ids,
                            self.sheet, self.lower, self.upper)

    def signed_areas(self) -> np.ndarray:
        return signed_areas_2d(self.nodes2d, self.elements)


def sheet_topology(mesh: SurfaceMesh, sheet: int):
    """Local numbering of one sheet: (surface node ids, surface element ids, local elements)."""
    eids = np.flatnonzero(mesh.sheet == sheet)
    if len(eids) == 0:
        raise MeshError(f"sheet {sheet} has no elements")
    el = mesh.elements[eids]
    nids, local = np.unique(el, return_inverse=True)
    return nids, eids, local.reshape(el.shape)


# -- generators --------------------------------------------------------------

def _grid_elements(d: int):
    """Structured (d+1)^2 grid split into triangles with alternating diagonals.

    Cells with even i+j use the diagonal (i, j)-(i+1, j+1), so every cell on
    the index diagonal i == j contributes an edge to the plan diagonal.
    Returns elements (counter-clockwise in plan) and, per element, whether it
    lies below the index diagonal (j < i, or the lower half of a diagonal cell).
    """
    def nid(i, j):
        return j * (d + 1) + i

    elements, below = [], []
    for j in range(d):
        for i in range(d):
            n00, n10, n01, n11 = nid(i, j), nid(i + 1, j), nid(i, j + 1), nid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris = [(n00, n10, n11), (n00, n11, n01)]
                flags = [j <= i, j < i]
            else:
                tris = [(n00, n10, n01), (n10, n11, n01)]
                flags = [j < i, j < i]
            elements.extend(tris)
            below.extend(flags)
    return np.array(elements, dtype=np.int64), np.array(below)


def generate_hp_mesh(W: float, divisions: int) -> SurfaceMesh:
    """Saddle (HP) membrane on a W x 1.3W plan with corner height difference 0.2W.

    Corners (0, 0) and (W1, W2) sit at z = 0, the other two at z = H; interior
    heights follow bilinear interpolation. All boundary nodes are fixed. The
    two cutting sheets are separated along the plan diagonal through the low
    corners.
    """
    if int(divisions) != divisions or divisions < 2:
        raise ValueError("divisions must be an integer >= 2")
    if W <= 0:
        raise ValueError("W must be positive")
    d = int(divisions)
    W1, W2, H = 1.0 * W, 1.3 * W, 0.2 * W
    xi, eta = np.meshgrid(np.linspace(0.0, 1.0, d + 1), np.linspace(0.0, 1.0, d + 1))
    xi, eta = xi.ravel(), eta.ravel()
    z = H * (xi * (1.0 - eta) + eta * (1.0 - xi))
    nodes = np.column_stack([W1 * xi, W2 * eta, z])
    elements, below = _grid_elements(d)
    on_frame = (xi == 0.0) | (xi == 1.0) | (eta == 0.0) | (eta == 1.0)
    fixed = np.repeat(on_frame[:, None], 3, axis=1)
    sheet = np.where(below, 0, 1)
    return SurfaceMesh(nodes, elements, fixed, sheet, np.zeros(len(elements)))


def generate_square_cushion_mesh(W: float, lift: float, divisions: int, sheets: int = 1) -> SurfaceMesh:
    """Square W x W cushion centred on the origin, boundary fixed at z = 0.

    Interior nodes are lifted by ``lift * (1 - (2x/W)^2) * (1 - (2y/W)^2)``,
    which vanishes on the frame and peaks at the centre. Elements are wound
    counter-clockwise seen from above (outward normal +z for air below).
    With ``sheets=2`` the membrane is cut into two triangular sheets along
    the plan diagonal.
    """
    if int(divisions) != divisions or divisions < 2:
        raise ValueError("divisions must be an integer >= 2")
    if lift < 0:
        raise ValueError("lift must be non-negative")
    if W <= 0:
        raise ValueError("W must be positive")
    if sheets not in (1, 2):
        raise ValueError("sheets must be 1 or 2")
    d = int(divisions)
    s = np.linspace(-1.0, 1.0, d + 1)
    u, v = np.meshgrid(s, s)
    u, v = u.ravel(), v.ravel()
    z = lift * (1.0 - u ** 2) * (1.0 - v ** 2)
    nodes = np.column_stack([0.5 * W * u, 0.5 * W * v, z])
    elements, below = _grid_elements(d)
    on_frame = (np.abs(u) == 1.0) | (np.abs(v) == 1.0)
    fixed = np.repeat(on_frame[:, None], 3, axis=1)
    sheet = np.where(below, 0, 1) if sheets == 2 else np.zeros(len(elements), dtype=np.int64)
    return SurfaceMesh(nodes, elements, fixed, sheet, np.zeros(len(elements)))


# -- file I/O -----------------------------------------------------------------

MESH_MAGIC = "cutpattern-mesh 1"
PATTERN_MAGIC = "cutpattern-pattern 1"


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _real(v) -> str:
    # shortest string that round-trips exactly
    return repr(float(v))


def _flags(row) -> str:
    return "".join("1" if f else "0" for f in row)


def format_mesh(mesh: SurfaceMesh) -> str:
    lines = [MESH_MAGIC, "units length=m force=kN", f"nodes {mesh.n_nodes}"]
    for i, (p, f) in enumerate(zip(mesh.nodes, mesh.fixed)):
        lines.append(f"{i} {_real(p[0])} {_real(p[1])} {_real(p[2])} {_flags(f)}")
    lines.append(f"elements {mesh.n_elements}")
    for k, (e, s, a) in enumerate(zip(mesh.elements, mesh.sheet, mesh.material_angle)):
        lines.append(f"{k} {e[0]} {e[1]} {e[2]} {s} {_real(a)}")
    if mesh.lower is not None or mesh.upper is not None:
        lo = mesh.lower if mesh.lower is not None else np.full(mesh.nodes.shape, -np.inf)
        hi = mesh.upper if mesh.upper is not None else np.full(mesh.nodes.shape, np.inf)
        lines.append(f"bounds {mesh.n_nodes}")
        for i in range(mesh.n_nodes):
            vals = " ".join(_real(v) for v in (*lo[i], *hi[i]))
            lines.append(f"{i} {vals}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def format_pattern(sheet: PatternSheet) -> str:
    lines = [PATTERN_MAGIC, "units length=m force=kN", f"sheet {sheet.sheet}",
             f"nodes {len(sheet.nodes2d)}"]
    for i, (p, nid) in enumerate(zip(sheet.nodes2d, sheet.node_ids)):
        lines.append(f"{i} {_real(p[0])} {_real(p[1])} {nid}")
    lines.append(f"elements {len(sheet.elements)}")
    for k, (e, eid) in enumerate(zip(sheet.elements, sheet.element_ids)):
        lines.append(f"{k} {e[0]} {e[1]} {e[2]} {eid}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_mesh(mesh: SurfaceMesh, path) -> None:
    atomic_write_text(path, format_mesh(mesh))


def save_pattern(sheet: PatternSheet, path) -> None:
    atomic_write_text(path, format_pattern(sheet))


class _Reader:
    def __init__(self, path):
        self.path = path
        with open(path, encoding="utf-8") as fh:
            raw = fh.read().splitlines()
        # keep original line numbers; drop blanks and comments
        self.lines = [(i + 1, ln.split("#", 1)[0].split()) for i, ln in enumerate(raw)]
        self.lines = [(i, t) for i, t in self.lines if t]
        self.pos = 0

    def error(self, msg, line_no=None):
        if line_no is None:
            line_no = self.lines[min(self.pos, len(self.lines) - 1)][0] if self.lines else 0
        return MeshParseError(self.path, line_no, msg)

    def next(self):
        if self.pos >= len(self.lines):
            raise self.error("unexpected end of file")
        item = self.lines[self.pos]
        self.pos += 1
        return item

    def header(self, keyword):
        line_no, tok = self.next()
        if tok[0] != keyword or len(tok) != 2:
            raise self.error(f"expected '{keyword} <count>'", line_no)
        n = self.integer(tok[1], line_no, f"{keyword} count")
        if n < 0:
            raise self.error(f"{keyword} count must be non-negative", line_no)
        return n

    def record(self, n_fields, what, expect_id):
        line_no, tok = self.next()
        if len(tok) != n_fields:
            raise self.error(f"{what} record needs {n_fields} fields, got {len(tok)}", line_no)
        if self.integer(tok[0], line_no, f"{what} id") != expect_id:
            raise self.error(f"{what} ids must be consecutive from 0 (expected {expect_id})", line_no)
        return line_no, tok

    def integer(self, s, line_no, what):
        try:
            return int(s)
        except ValueError:
            raise self.error(f"{what}: '{s}' is not an integer", line_no) from None

    def real(self, s, line_no, what):
        try:
            return float(s)
        except ValueError:
            raise self.error(f"{what}: '{s}' is not a number", line_no) from None


def _expect_preamble(r: _Reader, magic: str) -> None:
    line_no, tok = r.next()
    if " ".join(tok) != magic:
        raise r.error(f"missing '{magic}' header", line_no)
    line_no, tok = r.next()
    if tok != ["units", "length=m", "force=kN"]:
        raise r.error("units line must read 'units length=m force=kN'", line_no)


def load_mesh(path) -> SurfaceMesh:
    r = _Reader(path)
    _expect_preamble(r, MESH_MAGIC)
    n = r.header("nodes")
    nodes = np.empty((n, 3))
    fixed = np.zeros((n, 3), dtype=bool)
    for i in range(n):
        ln, tok = r.record(5, "node", i)
        nodes[i] = [r.real(t, ln, f"node {i} coordinate") for t in tok[1:4]]
        if len(tok[4]) != 3 or set(tok[4]) - {"0", "1"}:
            raise r.error(f"node {i}: fixed flags must be three 0/1 characters", ln)
        fixed[i] = [c == "1" for c in tok[4]]
    m = r.header("elements")
    elements = np.empty((m, 3), dtype=np.int64)
    sheet = np.empty(m, dtype=np.int64)
    angle = np.empty(m)
    for k in range(m):
        ln, tok = r.record(6, "element", k)
        elements[k] = [r.integer(t, ln, f"element {k} node") for t in tok[1:4]]
        sheet[k] = r.integer(tok[4], ln, f"element {k} sheet")
        angle[k] = r.real(tok[5], ln, f"element {k} material angle")
    lower = upper = None
    line_no, tok = r.next()
    if tok[0] == "bounds":
        r.pos -= 1
        nb = r.header("bounds")
        if nb != n:
            raise r.error("bounds block must list every node", line_no)
        lower, upper = np.empty((n, 3)), np.empty((n, 3))
        for i in range(n):
            ln, btok = r.record(7, "bound", i)
            vals = [r.real(t, ln, f"bound {i}") for t in btok[1:]]
            lower[i], upper[i] = vals[:3], vals[3:]
        line_no, tok = r.next()
    if tok != ["end"]:
        raise r.error("expected 'end'", line_no)
    return SurfaceMesh(nodes, elements, fixed, sheet, angle, lower, upper)


def load_pattern(path) -> PatternSheet:
    r = _Reader(path)
    _expect_preamble(r, PATTERN_MAGIC)
    line_no, tok = r.next()
    if tok[0] != "sheet" or len(tok) != 2:
        raise r.error("expected 'sheet <id>'", line_no)
    sid = r.integer(tok[1], line_no, "sheet id")
    n = r.header("nodes")
    xy = np.empty((n, 2))
    nid = np.empty(n, dtype=np.int64)
    for i in range(n):
        ln, t = r.record(4, "node", i)
        xy[i] = [r.real(v, ln, f"node {i} coordinate") for v in t[1:3]]
        nid[i] = r.integer(t[3], ln, f"node {i} surface id")
    m = r.header("elements")
    el = np.empty((m, 3), dtype=np.int64)
    eid = np.empty(m, dtype=np.int64)
    for k in range(m):
        ln, t = r.record(5, "element", k)
        el[k] = [r.integer(v, ln, f"element {k} node") for v in t[1:4]]
        eid[k] = r.integer(t[4], ln, f"element {k} surface id")
    line_no, tok = r.next()
    if tok != ["end"]:
        raise r.error("expected 'end'", line_no)
    return PatternSheet(xy, el, nid, eid, sid)
