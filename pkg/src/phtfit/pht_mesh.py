"""Hierarchical T-mesh with a C1 cubic spline basis stored as Bezier ordinates.

Elements form a forest rooted at an initial tensor grid; refinement always
splits an element into 2^d congruent children through its parametric
midpoint (cross insertion).  Basis functions live at basis vertices (2^d
functions each) and are represented purely by per-element Bezier ordinate
tables, so evaluation, refinement, and solver extraction are all Bernstein
algebra.  Parametric coordinates are exact dyadic rationals (Fraction), so
vertex coincidence checks never depend on floating-point rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from pathlib import Path

import numpy as np

from .bernstein import NB, corner_multi_indices, eval_table, subdivide, tensor_rows

#: ordinate tables with no entry above this are treated as identically zero
ZERO_TOL = 1e-14


def _axis_pair(lam: float):
    """Bezier ordinates of the two 1D basis functions at a vertex.

    `low` is the pattern on the interval ending at the vertex, `high` on
    the interval starting at it, indexed by the function's member bit.
    Each function vanishes with value and slope at the vertex-facing end
    of the other member's peak and cubically at the far support ends; the
    pair sums to (0,0,1,1) / (1,1,0,0), which stitches partition of unity
    together across vertices.  lam = D1/(D1+D2) with D1, D2 the knot gaps
    below/above the vertex (0 or 1 at the domain boundary).
    """
    low = (
        np.array([0.0, 0.0, 1.0, 1.0 - lam]),
        np.array([0.0, 0.0, 0.0, lam]),
    )
    high = (
        np.array([1.0 - lam, 0.0, 0.0, 0.0]),
        np.array([lam, 1.0, 0.0, 0.0]),
    )
    return low, high


def hermite_factor(d1, d2) -> np.ndarray:
    """2x2 (value; derivative) data of the 1D pair, columns per member bit."""
    total = float(d1) + float(d2)
    if total <= 0.0:
        raise ValueError("knot gaps must have positive total")
    lam = float(d1) / total
    alpha = 1.0 / total
    return np.array([[1.0 - lam, lam], [-3.0 * alpha, 3.0 * alpha]])


def solve_control_points(info: np.ndarray, gaps) -> np.ndarray:
    """Control points of a vertex's 2^d functions from its geometric data.

    info rows are the mixed derivatives of the geometry map at the vertex
    in C-order of the derivative bits (axis 0 most significant): value,
    then each single derivative, mixed seconds, and in 3D the triple cross
    derivative.  gaps is a per-axis (D1, D2) sequence.  The returned rows
    are ordered like the vertex's member bits.
    """
    mat = np.ones((1, 1))
    for d1, d2 in gaps:
        mat = np.kron(mat, hermite_factor(d1, d2))
    return np.linalg.solve(mat, np.asarray(info, dtype=float))


@dataclass
class Element:
    eid: int
    lo: tuple
    hi: tuple
    level: int
    parent: int | None = None
    children: list | None = None
    funcs: dict = field(default_factory=dict)
    klass: str = "unclassified"

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def widths(self):
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def contains(self, coord) -> bool:
        return all(l <= x <= h for x, l, h in zip(coord, self.lo, self.hi))

    def corner_bits(self, coord):
        """Member-bit tuple if coord is a corner of this box, else None."""
        bits = []
        for x, l, h in zip(coord, self.lo, self.hi):
            if x == l:
                bits.append(0)
            elif x == h:
                bits.append(1)
            else:
                return None
        return tuple(bits)

    def local(self, point) -> np.ndarray:
        return np.array(
            [
                (float(x) - float(l)) / float(h - l)
                for x, l, h in zip(point, self.lo, self.hi)
            ]
        )


@dataclass
class Vertex:
    coord: tuple
    fids: dict  # member bits -> fid


@dataclass
class BasisFunction:
    fid: int
    vertex: tuple
    bits: tuple
    control: np.ndarray
    elements: set = field(default_factory=set)
    local_knots: tuple = ()


class PHTMesh:
    """Mutable hierarchical mesh; see module docstring."""

    def __init__(self, dim: int, domain):
        self.dim = dim
        self.domain = tuple((Fraction(a), Fraction(b)) for a, b in domain)
        self.elements: list[Element] = []
        self.basis: dict[int, BasisFunction] = {}
        self.vertices: dict[tuple, Vertex] = {}
        self.corner_map: dict[tuple, set] = {}
        self._roots: dict[tuple, int] = {}
        self._nshape: tuple = ()
        self._net_cache: dict[int, np.ndarray] = {}
        self._next_fid = 0

    # ---------------------------------------------------------------- setup

    @classmethod
    def init_tensor_mesh(cls, n, domain) -> "PHTMesh":
        """Uniform tensor mesh on `domain` with n elements per axis.

        Every vertex is a basis vertex; control points sit at the Greville
        abscissae so the geometry map is the identity on the domain box.
        """
        n = tuple(int(v) for v in (n if np.iterable(n) else (n,) * len(domain)))
        if any(v < 2 for v in n):
            raise ValueError("need at least 2 elements per axis")
        mesh = cls(len(domain), domain)
        d = mesh.dim
        mesh._nshape = n
        knots = [
            [lo + (hi - lo) * Fraction(i, n[k]) for i in range(n[k] + 1)]
            for k, (lo, hi) in enumerate(mesh.domain)
        ]
        for idx in product(*[range(v) for v in n]):
            lo = tuple(knots[k][idx[k]] for k in range(d))
            hi = tuple(knots[k][idx[k] + 1] for k in range(d))
            e = mesh._new_element(lo, hi, level=1)
            mesh._roots[idx] = e.eid
        for idx in product(*[range(v + 1) for v in n]):
            coord = tuple(knots[k][idx[k]] for k in range(d))
            gaps = []
            for k in range(d):
                w = knots[k][1] - knots[k][0]
                gaps.append(
                    (w if idx[k] > 0 else Fraction(0), w if idx[k] < n[k] else Fraction(0))
                )
            mesh._make_vertex_functions(coord, gaps)
        return mesh

    def _new_element(self, lo, hi, level, parent=None) -> Element:
        e = Element(eid=len(self.elements), lo=lo, hi=hi, level=level, parent=parent)
        self.elements.append(e)
        for bits in corner_multi_indices(self.dim):
            corner = tuple(h if b else l for b, l, h in zip(bits, lo, hi))
            self.corner_map.setdefault(corner, set()).add(e.eid)
        return e

    def _retire_leaf(self, e: Element) -> None:
        for bits in corner_multi_indices(self.dim):
            corner = tuple(h if b else l for b, l, h in zip(bits, e.lo, e.hi))
            self.corner_map[corner].discard(e.eid)

    def _make_vertex_functions(self, coord, gaps, control_rows=None) -> list:
        """Create the 2^d basis functions of a new basis vertex.

        gaps[k] = (D1, D2) knot gaps along axis k; control_rows optionally
        provides the control points (member-bit C-order), otherwise the
        Greville abscissae of the identity map are used.
        """
        d = self.dim
        cornered = [
            self.elements[eid] for eid in self.corner_map.get(coord, ())
        ]
        patterns = [_axis_pair(float(g[0]) / float(g[0] + g[1])) for g in gaps]
        vert = Vertex(coord=coord, fids={})
        fids = []
        for j, bits in enumerate(corner_multi_indices(d)):
            fid = self._next_fid
            self._next_fid += 1
            if control_rows is None:
                ctrl = np.array(
                    [
                        float(coord[k] + gaps[k][1] / 3)
                        if bits[k]
                        else float(coord[k] - gaps[k][0] / 3)
                        for k in range(d)
                    ]
                )
            else:
                ctrl = np.asarray(control_rows[j], dtype=float)
            knots = tuple(
                (
                    float(coord[k] - gaps[k][0]),
                    float(coord[k]),
                    float(coord[k] + gaps[k][1]),
                )
                for k in range(d)
            )
            fn = BasisFunction(
                fid=fid, vertex=coord, bits=bits, control=ctrl, local_knots=knots
            )
            self.basis[fid] = fn
            vert.fids[bits] = fid
            fids.append(fid)
            for e in cornered:
                side = e.corner_bits(coord)
                table = np.ones((1,) * d)
                for k in range(d):
                    low, high = patterns[k]
                    vec = low[bits[k]] if side[k] == 1 else high[bits[k]]
                    shape = [1] * d
                    shape[k] = NB
                    table = table * vec.reshape(shape)
                e.funcs[fid] = table.copy()
                fn.elements.add(e.eid)
        self.vertices[coord] = vert
        self._net_cache.clear()
        return fids

    # ----------------------------------------------------------- basic info

    @property
    def leaves(self):
        return [e for e in self.elements if e.is_leaf]

    def active_leaves(self):
        return [e for e in self.leaves if e.klass in ("boundary-1", "internal")]

    def dim_formula_holds(self) -> bool:
        return len(self.basis) == (2**self.dim) * len(self.vertices)

    def element_size(self, e: Element) -> float:
        return max(float(w) for w in e.widths())

    # ----------------------------------------------------------- point query

    def _leaves_containing(self, coord) -> list:
        """All leaves whose closed box contains the exact coordinate."""
        found = []
        axes = []
        for k, (lo, hi) in enumerate(self.domain):
            w = (hi - lo) / self._nshape[k]
            q = (coord[k] - lo) / w
            if q < 0 or q > self._nshape[k]:
                return []
            i = min(int(q), self._nshape[k] - 1)
            cand = [i]
            if q == i and i > 0:
                cand.append(i - 1)
            axes.append(cand)
        stack = [
            self.elements[self._roots[idx]] for idx in product(*axes)
        ]
        while stack:
            e = stack.pop()
            if e.is_leaf:
                found.append(e)
            else:
                stack.extend(
                    c for c in (self.elements[i] for i in e.children) if c.contains(coord)
                )
        return found

    def find_leaf(self, point) -> Element:
        """Leaf containing a floating-point parametric location."""
        pt = []
        for x, (lo, hi) in zip(point, self.domain):
            if not (float(lo) - 1e-9 <= x <= float(hi) + 1e-9):
                raise ValueError(f"point {point} outside the parametric domain")
            pt.append(min(max(x, float(lo)), float(hi)))
        idx = tuple(
            min(int((pt[k] - float(lo)) / float(hi - lo) * self._nshape[k]), self._nshape[k] - 1)
            for k, (lo, hi) in enumerate(self.domain)
        )
        e = self.elements[self._roots[idx]]
        while not e.is_leaf:
            mid = [float(l + h) / 2.0 for l, h in zip(e.lo, e.hi)]
            child_bits = tuple(int(pt[k] >= mid[k]) for k in range(self.dim))
            e = self.elements[e.children[_bits_index(child_bits)]]
        return e

    # ------------------------------------------------------------- geometry

    def element_net(self, e: Element) -> np.ndarray:
        """Physical Bezier control net of the element, shape (4,)*d + (d,)."""
        net = self._net_cache.get(e.eid)
        if net is None:
            net = np.zeros((NB,) * self.dim + (self.dim,))
            for fid, table in e.funcs.items():
                net += table[..., None] * self.basis[fid].control
            self._net_cache[e.eid] = net
        return net

    def evaluate_geometry(self, points):
        """Map parametric points to physical space; returns (values, jacobians)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        d = self.dim
        vals = np.empty((n, d))
        jacs = np.empty((n, d, d))
        for i in range(n):
            e = self.find_leaf(pts[i])
            net = self.element_net(e)
            t = e.local(pts[i])
            w = [float(x) for x in e.widths()]
            vals[i] = eval_table(net, t[None, :])[0]
            for k in range(d):
                dv = [0] * d
                dv[k] = 1
                jacs[i, :, k] = eval_table(net, t[None, :], tuple(dv))[0] / w[k]
        return vals, jacs

    def compute_geometric_info(self, coord, element: Element | None = None) -> np.ndarray:
        """Mixed derivatives of the geometry map at a parametric location.

        Rows follow the C-order of derivative bits.  Well defined from any
        containing element because the map and all its mixed cross
        derivatives are continuous across interfaces.
        """
        e = element
        if e is None:
            e = self._leaves_containing(coord)[0]
        net = self.element_net(e)
        t = e.local(coord)
        w = [float(x) for x in e.widths()]
        rows = []
        for m in corner_multi_indices(self.dim):
            scale = np.prod([1.0 / w[k] ** m[k] for k in range(self.dim)])
            rows.append(eval_table(net, t[None, :], m)[0] * scale)
        return np.array(rows)

    def scaled_jacobian(self, e: Element, samples: int = 4) -> float:
        """Minimum det(J)/prod(column norms) over a sample grid in [0,1]^d."""
        grid = np.linspace(0.0, 1.0, samples)
        pts = np.stack(
            np.meshgrid(*[grid] * self.dim, indexing="ij"), axis=-1
        ).reshape(-1, self.dim)
        net = self.element_net(e)
        w = [float(x) for x in e.widths()]
        worst = 1.0
        cols = []
        for k in range(self.dim):
            dv = [0] * self.dim
            dv[k] = 1
            cols.append(eval_table(net, pts, tuple(dv)) / w[k])
        for i in range(len(pts)):
            jac = np.stack([c[i] for c in cols], axis=1)
            norms = np.linalg.norm(jac, axis=0)
            if norms.min() <= 1e-300:
                worst = min(worst, 0.0)
                continue
            worst = min(worst, float(np.linalg.det(jac) / norms.prod()))
        return worst

    def bezier_extraction(self, active_only: bool = True):
        """Per-element Bezier nets for assembly/export: list of (element, net)."""
        elems = self.active_leaves() if active_only else self.leaves
        return [(e, self.element_net(e)) for e in elems]

    # ------------------------------------------------------------ refinement

    def refine_element(self, e: Element) -> list:
        """Cross-insert at the midpoint of a leaf; returns new basis vertices.

        Enforces the one-level face-neighbor cap by recursive refinement,
        subdivides inherited ordinate tables onto the children, promotes
        every vertex that newly satisfies the basis-vertex criterion, and
        solves the promoted vertices' control points so the geometry map is
        unchanged.
        """
        if not e.is_leaf:
            raise ValueError("element is already refined")
        d = self.dim
        for k in range(d):
            for side in (0, 1):
                nb = self._coarse_face_neighbor(e, k, side)
                if nb is not None:
                    self.refine_element(nb)
        if not e.is_leaf:
            # A recursive neighbor refinement got here first.
            return []

        pre_net = self.element_net(e).copy()
        mid = tuple(Fraction(l + h, 2) for l, h in zip(e.lo, e.hi))
        e.children = []
        for bits in corner_multi_indices(d):
            lo = tuple(m if b else l for b, l, m in zip(bits, e.lo, mid))
            hi = tuple(h if b else m for b, m, h in zip(bits, mid, e.hi))
            child = self._new_element(lo, hi, e.level + 1, parent=e.eid)
            e.children.append(child.eid)
        self._retire_leaf(e)

        for fid, table in e.funcs.items():
            fn = self.basis[fid]
            fn.elements.discard(e.eid)
            for bits in corner_multi_indices(d):
                sub = subdivide(table, bits)
                if np.abs(sub).max() > ZERO_TOL:
                    child = self.elements[e.children[_bits_index(bits)]]
                    child.funcs[fid] = sub
                    fn.elements.add(child.eid)
        e.funcs = {}
        self._net_cache.clear()

        new_vertices = []
        axes_pts = [(e.lo[k], mid[k], e.hi[k]) for k in range(d)]
        for coord in product(*axes_pts):
            if coord in self.vertices:
                continue
            if not self._is_basis_vertex(coord):
                continue
            self._equalize_gaps(coord)
            if coord in self.vertices:
                # Promoted by a recursive refinement inside _equalize_gaps.
                continue
            gaps = self._vertex_gaps(coord)
            info = self._geometric_info_from_net(pre_net, e, coord)
            rows = solve_control_points(info, gaps)
            self._truncate_at(coord)
            self._make_vertex_functions(coord, gaps, control_rows=rows)
            new_vertices.append(coord)
        return new_vertices

    def _coarse_face_neighbor(self, e: Element, axis: int, side: int):
        face_x = e.hi[axis] if side else e.lo[axis]
        if face_x == self.domain[axis][side]:
            return None
        probe = list(Fraction(l + h, 2) for l, h in zip(e.lo, e.hi))
        probe[axis] = face_x
        for nb in self._leaves_containing(tuple(probe)):
            if nb.eid == e.eid:
                continue
            boundary = nb.lo[axis] if side else nb.hi[axis]
            if boundary == face_x and nb.level < e.level:
                return nb
        return None

    def _is_basis_vertex(self, coord) -> bool:
        free = sum(
            1 for x, (lo, hi) in zip(coord, self.domain) if lo < x < hi
        )
        containing = self._leaves_containing(coord)
        cornered = [e for e in containing if e.corner_bits(coord) is not None]
        if len(cornered) != len(containing):
            return False
        return len(cornered) == 2**free

    def _vertex_gaps(self, coord):
        gaps = []
        for k in range(self.dim):
            lower = set()
            upper = set()
            for eid in self.corner_map[coord]:
                e = self.elements[eid]
                if e.hi[k] == coord[k]:
                    lower.add(e.hi[k] - e.lo[k])
                else:
                    upper.add(e.hi[k] - e.lo[k])
            if len(lower) > 1 or len(upper) > 1:
                raise AssertionError("inconsistent knot gaps at basis vertex")
            gaps.append(
                (lower.pop() if lower else Fraction(0), upper.pop() if upper else Fraction(0))
            )
        return gaps

    def _equalize_gaps(self, coord) -> None:
        """Refine coarser cornered leaves until per-side gaps agree."""
        while True:
            sizes = {}
            for eid in set(self.corner_map[coord]):
                e = self.elements[eid]
                for k in range(self.dim):
                    key = (k, 1 if e.hi[k] == coord[k] else 0)
                    sizes.setdefault(key, {})[eid] = e.hi[k] - e.lo[k]
            worst = None
            for key, per in sizes.items():
                if len(set(per.values())) > 1:
                    big = max(per, key=per.get)
                    worst = big
                    break
            if worst is None:
                return
            self.refine_element(self.elements[worst])

    def _geometric_info_from_net(self, net, e: Element, coord) -> np.ndarray:
        t = e.local(coord)
        w = [float(x) for x in e.widths()]
        rows = []
        for m in corner_multi_indices(self.dim):
            scale = np.prod([1.0 / w[k] ** m[k] for k in range(self.dim)])
            rows.append(eval_table(net, t[None, :], m)[0] * scale)
        return np.array(rows)

    def _truncate_at(self, coord) -> None:
        """Zero the ordinate block carrying the new vertex's corner data."""
        for eid in list(self.corner_map[coord]):
            e = self.elements[eid]
            side = e.corner_bits(coord)
            block = tuple(
                slice(2, 4) if s else slice(0, 2) for s in side
            )
            for fid in list(e.funcs):
                table = e.funcs[fid]
                table[block] = 0.0
                if np.abs(table).max() <= ZERO_TOL:
                    del e.funcs[fid]
                    self.basis[fid].elements.discard(eid)
        self._net_cache.clear()

    # ------------------------------------------------------- vertex plumbing

    def vertex_gaps(self, coord):
        """Knot gaps (D1, D2) per axis of a basis vertex's function pair.

        Read from the stored local knots: the Hermite relation between a
        vertex's control points and its geometric data is fixed when the
        vertex is promoted, and later refinement of a cornered leaf must
        not change it.
        """
        vert = self.vertices[coord]
        knots = self.basis[next(iter(vert.fids.values()))].local_knots
        return [(x - a, b - x) for (a, x, b) in knots]

    def set_vertex_controls(self, coord, rows) -> None:
        """Assign the 2^d control points of a basis vertex (member C-order)."""
        vert = self.vertices[coord]
        for bits, row in zip(corner_multi_indices(self.dim), rows):
            self.basis[vert.fids[bits]].control = np.asarray(row, dtype=float)
        self._net_cache.clear()

    def vertex_controls(self, coord) -> np.ndarray:
        vert = self.vertices[coord]
        return np.array(
            [self.basis[vert.fids[bits]].control for bits in corner_multi_indices(self.dim)]
        )

    def translate_vertex(self, coord, shift) -> None:
        """Rigidly translate a vertex's control points (moves F(vertex) by shift)."""
        shift = np.asarray(shift, dtype=float)
        vert = self.vertices[coord]
        for fid in vert.fids.values():
            self.basis[fid].control = self.basis[fid].control + shift
        self._net_cache.clear()

    def vertex_neighbors(self, coord):
        """Basis vertices joined to coord by a mesh edge of a cornered leaf."""
        out = set()
        for eid in self.corner_map.get(coord, ()):
            e = self.elements[eid]
            bits = e.corner_bits(coord)
            for k in range(self.dim):
                other = list(coord)
                other[k] = e.lo[k] if bits[k] else e.hi[k]
                other = tuple(other)
                if other in self.vertices:
                    out.add(other)
        return out

    def invalidate_cache(self) -> None:
        self._net_cache.clear()

    # ---------------------------------------------------------------- export

    def save(self, path) -> None:
        """JSON topology plus an .npz blob with ordinates and control points."""
        path = Path(path)
        topo = {
            "dim": self.dim,
            "domain": [[str(a), str(b)] for a, b in self.domain],
            "nshape": list(self._nshape),
            "elements": [
                {
                    "eid": e.eid,
                    "lo": [str(x) for x in e.lo],
                    "hi": [str(x) for x in e.hi],
                    "level": e.level,
                    "parent": e.parent,
                    "children": e.children,
                    "klass": e.klass,
                    "funcs": sorted(e.funcs),
                }
                for e in self.elements
            ],
            "basis": [
                {
                    "fid": f.fid,
                    "vertex": [str(x) for x in f.vertex],
                    "bits": list(f.bits),
                    "knots": [list(k) for k in f.local_knots],
                }
                for f in self.basis.values()
            ],
        }
        path.with_suffix(".json").write_text(json.dumps(topo))
        tables = {}
        for e in self.elements:
            for fid, table in e.funcs.items():
                tables[f"t_{e.eid}_{fid}"] = table
        controls = np.array([self.basis[fid].control for fid in sorted(self.basis)])
        np.savez_compressed(path.with_suffix(".npz"), controls=controls, **tables)

    @classmethod
    def load(cls, path) -> "PHTMesh":
        path = Path(path)
        topo = json.loads(path.with_suffix(".json").read_text())
        blob = np.load(path.with_suffix(".npz"))
        mesh = cls(topo["dim"], [(Fraction(a), Fraction(b)) for a, b in topo["domain"]])
        mesh._nshape = tuple(topo["nshape"])
        controls = blob["controls"]
        fids = sorted(int(b["fid"]) for b in topo["basis"])
        for rec, fid in zip(sorted(topo["basis"], key=lambda r: r["fid"]), fids):
            coord = tuple(Fraction(x) for x in rec["vertex"])
            fn = BasisFunction(
                fid=fid,
                vertex=coord,
                bits=tuple(rec["bits"]),
                control=controls[fid],
                local_knots=tuple(tuple(k) for k in rec["knots"]),
            )
            mesh.basis[fid] = fn
            vert = mesh.vertices.setdefault(coord, Vertex(coord=coord, fids={}))
            vert.fids[fn.bits] = fid
        for rec in topo["elements"]:
            lo = tuple(Fraction(x) for x in rec["lo"])
            hi = tuple(Fraction(x) for x in rec["hi"])
            e = Element(
                eid=rec["eid"],
                lo=lo,
                hi=hi,
                level=rec["level"],
                parent=rec["parent"],
                children=rec["children"],
                klass=rec["klass"],
            )
            mesh.elements.append(e)
            if e.is_leaf:
                for bits in corner_multi_indices(mesh.dim):
                    corner = tuple(h if b else l for b, l, h in zip(bits, lo, hi))
                    mesh.corner_map.setdefault(corner, set()).add(e.eid)
            for fid in rec["funcs"]:
                e.funcs[fid] = blob[f"t_{e.eid}_{fid}"]
                mesh.basis[fid].elements.add(e.eid)
        for e in mesh.elements:
            if e.level == 1:
                idx = tuple(
                    int(
                        (e.lo[k] - mesh.domain[k][0])
                        / (e.hi[k] - e.lo[k])
                    )
                    for k in range(mesh.dim)
                )
                mesh._roots[idx] = e.eid
        mesh._next_fid = max(mesh.basis, default=-1) + 1
        return mesh

    def export_vtk(self, path, resolution: int = 4, active_only: bool = True) -> None:
        """Legacy ASCII VTK export of (active) elements as sampled cells."""
        d = self.dim
        res = max(2, int(resolution))
        grid = np.linspace(0.0, 1.0, res)
        pts_local = np.stack(
            np.meshgrid(*[grid] * d, indexing="ij"), axis=-1
        ).reshape(-1, d)
        points = []
        cells = []
        quality = []
        for e, net in self.bezier_extraction(active_only=active_only):
            base = len(points)
            vals = eval_table(net, pts_local)
            points.extend(vals.tolist())
            sj = self.scaled_jacobian(e)
            shape = (res,) * d
            for idx in product(*[range(res - 1)] * d):
                corner_ids = []
                for bits in _vtk_corner_order(d):
                    off = tuple(idx[k] + bits[k] for k in range(d))
                    corner_ids.append(base + int(np.ravel_multi_index(off, shape)))
                cells.append(corner_ids)
                quality.append(sj)
        lines = [
            "# vtk DataFile Version 3.0",
            "phtfit mesh",
            "ASCII",
            "DATASET UNSTRUCTURED_GRID",
            f"POINTS {len(points)} double",
        ]
        for p in points:
            xyz = list(p) + [0.0] * (3 - d)
            lines.append(" ".join(f"{x:.10g}" for x in xyz))
        ncell = len(cells)
        size = sum(len(c) + 1 for c in cells)
        lines.append(f"CELLS {ncell} {size}")
        for c in cells:
            lines.append(" ".join(str(v) for v in [len(c)] + c))
        lines.append(f"CELL_TYPES {ncell}")
        ctype = 9 if d == 2 else 12
        lines.extend([str(ctype)] * ncell)
        lines.append(f"CELL_DATA {ncell}")
        lines.append("SCALARS scaled_jacobian double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{q:.10g}" for q in quality)
        Path(path).write_text("\n".join(lines) + "\n")


def _bits_index(bits) -> int:
    idx = 0
    for b in bits:
        idx = idx * 2 + int(b)
    return idx


def _vtk_corner_order(d):
    if d == 2:
        return [(0, 0), (1, 0), (1, 1), (0, 1)]
    return [
        (0, 0, 0),
        (1, 0, 0),
        (1, 1, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 0, 1),
        (1, 1, 1),
        (0, 1, 1),
    ]
