"""Boundary fitting: classify elements against the level set, move the
control points of adjustable vertices onto the contour with osculating
circle/sphere data, smooth, and refine the boundary elements.

The physical domain is where the field value lies below the intensity
threshold.  Active elements (boundary type 1 and internal) approximate it;
their boundary is bent onto the contour by replacing the control points of
each adjustable basis vertex with those of a scaled and rotated circle or
sphere template that passes through the computed cut location with the
contour's normal and curvature.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field as dataclass_field
from fractions import Fraction
from itertools import combinations, product

import numpy as np

from .bernstein import corner_multi_indices, eval_table
from .levelset import DegenerateGradientError, LevelSetField
from .pht_mesh import PHTMesh, solve_control_points

log = logging.getLogger(__name__)

BOUNDARY_KINDS = ("boundary-1", "boundary-2")
ACTIVE_KINDS = ("boundary-1", "internal")

#: largest vertex move per adjustment, in multiples of the vertex's cell
#: size; farther contour targets are abandoned as unreachable
MOVE_LIMIT = 1.3

#: absolute field tolerance of the nearest-point fallback
FIELD_TOL = 255.0 * 1e-6


@dataclass
class FitConfig:
    """Parameters of the boundary-fitting loop."""

    threshold: float = 200.0
    percent: float = 50.0
    samples_per_axis: int = 5
    lambda_smooth: float = 0.1
    smooth_iters: int = 3
    levels: int = 0
    bisect_tol: float = 1e-9
    radius_clamp: float = 10.0
    adjust: bool = True

    def __post_init__(self):
        if not 0.0 < self.threshold < 255.0:
            raise ValueError("threshold must lie in (0, 255)")
        if not 0.0 < self.percent < 100.0:
            raise ValueError("percent must lie in (0, 100)")
        if not 0.0 < self.lambda_smooth < 1.0:
            raise ValueError("lambda_smooth must lie in (0, 1)")
        if self.bisect_tol <= 0.0:
            raise ValueError("bisect_tol must be positive")
        if self.samples_per_axis < 2:
            raise ValueError("samples_per_axis must be at least 2")
        if self.radius_clamp < 1.0:
            raise ValueError("radius_clamp must be at least 1")


@dataclass
class Classification:
    """Partition of the leaf elements; active = boundary-1 + internal."""

    kinds: dict  # eid -> kind string

    def count(self, kind: str) -> int:
        return sum(1 for k in self.kinds.values() if k == kind)

    def active_eids(self):
        return [e for e, k in self.kinds.items() if k in ACTIVE_KINDS]


def _field_eval(field: LevelSetField, pts: np.ndarray) -> np.ndarray:
    """Field values with points clamped to the image box (smoothing may
    push sample points marginally outside)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    lo = np.zeros(field.dim)
    hi = np.array([float(n) for n in field.dims])
    return field.evaluate(np.clip(pts, lo, hi))


def classify_elements(mesh: PHTMesh, field: LevelSetField, cfg: FitConfig) -> Classification:
    """Sample each leaf on an interior grid and bin it by the fraction of
    samples inside the physical domain (field value below threshold)."""
    s = cfg.samples_per_axis
    ticks = (np.arange(s) + 0.5) / s
    grid = np.stack(
        np.meshgrid(*[ticks] * mesh.dim, indexing="ij"), axis=-1
    ).reshape(-1, mesh.dim)
    kinds = {}
    for e in mesh.leaves:
        phys = eval_table(mesh.element_net(e), grid)
        inside = _field_eval(field, phys) < cfg.threshold
        n_in = int(inside.sum())
        if n_in == len(grid):
            kind = "internal"
        elif n_in == 0:
            kind = "external"
        elif 100.0 * n_in / len(grid) > cfg.percent:
            kind = "boundary-1"
        else:
            kind = "boundary-2"
        e.klass = kind
        kinds[e.eid] = kind
    return Classification(kinds)


def vertex_position(mesh: PHTMesh, coord) -> np.ndarray:
    """Physical location of a basis vertex under the current geometry."""
    e = mesh.elements[next(iter(mesh.corner_map[coord]))]
    t = e.local(coord)
    return eval_table(mesh.element_net(e), t[None, :])[0]


def mark_adjustable_vertices(mesh: PHTMesh, classification: Classification,
                             field: LevelSetField, threshold: float) -> list:
    """Basis vertices of boundary elements sitting on the wrong side of
    the contour, in deterministic lexicographic order."""
    marked = set()
    for e in mesh.leaves:
        kind = classification.kinds[e.eid]
        if kind not in BOUNDARY_KINDS:
            continue
        for bits in product((0, 1), repeat=mesh.dim):
            coord = tuple(e.hi[k] if b else e.lo[k] for k, b in enumerate(bits))
            if coord in marked or coord not in mesh.vertices:
                continue
            f = float(_field_eval(field, vertex_position(mesh, coord))[0])
            outside = f >= threshold
            if (kind == "boundary-1" and outside) or (
                kind == "boundary-2" and not outside
            ):
                marked.add(coord)
    return sorted(marked)


def _bound_axes(mesh: PHTMesh, coord) -> list:
    """Axes along which the vertex lies on a face of the parametric box."""
    return [
        k for k in range(mesh.dim)
        if coord[k] in (mesh.domain[k][0], mesh.domain[k][1])
    ]


def _boundary_owners(mesh: PHTMesh, classification: Classification, coord):
    return sorted(
        (eid for eid in mesh.corner_map[coord]
         if classification.kinds.get(eid) in BOUNDARY_KINDS),
    )


def _diagonal_end(e, coord):
    bits = e.corner_bits(coord)
    return tuple(e.lo[k] if b else e.hi[k] for k, b in enumerate(bits))


def adjust_direction(mesh: PHTMesh, coord, classification: Classification):
    """Ordered candidate endpoints for the cut-location search.

    2D: shared edges of same-type boundary-element pairs first, then the
    owners' diagonals.  3D: the one/two/four owner cases only; any other
    ownership pattern requests nearest-point projection (an empty list),
    because a cube diagonal of one among many owners frequently only
    grazes the contour far from the vertex, and a cut at such a grazing
    point collapses the vertex onto a distant neighbor.
    """
    owners = [mesh.elements[eid] for eid in _boundary_owners(mesh, classification, coord)]
    if not owners:
        return []
    candidates = []
    if mesh.dim == 2:
        for a, b in combinations(owners, 2):
            if a.klass != b.klass:
                continue
            ba, bb = a.corner_bits(coord), b.corner_bits(coord)
            diff = [k for k in range(2) if ba[k] != bb[k]]
            if len(diff) == 1:
                k = 1 - diff[0]  # shared edge runs along the equal-bit axis
                end = list(coord)
                end[k] = a.lo[k] if ba[k] else a.hi[k]
                candidates.append(tuple(end))
        candidates.extend(_diagonal_end(e, coord) for e in owners)
    elif len(owners) == 1:
        candidates.append(_diagonal_end(owners[0], coord))
    else:
        if len(owners) == 2:
            a, b = owners
            ba, bb = a.corner_bits(coord), b.corner_bits(coord)
            diff = [k for k in range(3) if ba[k] != bb[k]]
            if len(diff) == 1:
                # Adjacent pair: move along the diagonal of the shared face.
                end = list(coord)
                for k in range(3):
                    if k != diff[0]:
                        end[k] = a.lo[k] if ba[k] else a.hi[k]
                candidates.append(tuple(end))
        if len(owners) == 4:
            all_bits = [e.corner_bits(coord) for e in owners]
            for k in range(3):
                if len({b[k] for b in all_bits}) == 1 and len(
                    {(b[(k + 1) % 3], b[(k + 2) % 3]) for b in all_bits}
                ) == 4:
                    end = list(coord)
                    e, bits = owners[0], all_bits[0]
                    end[k] = e.lo[k] if bits[k] else e.hi[k]
                    candidates.append(tuple(end))
    seen = set()
    unique = []
    for end in candidates:
        if end not in seen:
            seen.add(end)
            unique.append(end)
    return unique


def cut_location(field: LevelSetField, p0, p1, threshold: float,
                 bisect_tol: float):
    """Bisection along the physical segment p0 -> p1 for the contour
    crossing; None when the field does not change sign."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    f0 = float(_field_eval(field, p0)[0]) - threshold
    f1 = float(_field_eval(field, p1)[0]) - threshold
    if f0 == 0.0:
        return p0.copy()
    if f1 == 0.0:
        return p1.copy()
    if f0 * f1 > 0.0:
        return None
    a, b = 0.0, 1.0
    fa = f0
    while b - a > bisect_tol:
        m = 0.5 * (a + b)
        fm = float(_field_eval(field, p0 + m * (p1 - p0))[0]) - threshold
        if fm == 0.0:
            a = b = m
            break
        if fa * fm < 0.0:
            b = m
        else:
            a, fa = m, fm
    s = 0.5 * (a + b)
    return p0 + s * (p1 - p0)


def _project_to_contour(field: LevelSetField, start, threshold: float,
                        max_iters: int = 100):
    """Damped Newton projection of a point onto the contour along the
    gradient; None on divergence or a degenerate gradient."""
    lo = np.zeros(field.dim)
    hi = np.array([float(n) for n in field.dims])
    x = np.clip(np.asarray(start, dtype=float), lo, hi)
    for _ in range(max_iters):
        f = float(_field_eval(field, x)[0]) - threshold
        if abs(f) < FIELD_TOL:
            return x
        g = field.gradient(np.clip(x, lo, hi))
        g2 = float(g @ g)
        if g2 <= (1e-8 * 255.0) ** 2:
            return None
        step = -f / g2 * g
        norm = np.linalg.norm(step)
        if norm > 2.0:  # damp to two voxels per step
            step *= 2.0 / norm
        x = np.clip(x + step, lo, hi)
    return None


def nearest_point(field: LevelSetField, start, threshold: float,
                  max_iters: int = 100, seed=None):
    """Nearest contour point to `start`.

    Plain gradient projection when the gradient at `start` is usable.  On
    an intensity plateau the gradient vanishes and projection cannot
    start; `seed`, a point known to lie on the other side of the contour,
    then provides a bracketing segment.  The bisected crossing is slid
    tangentially toward `start` (re-projecting after every slide) until
    the offset start - point is normal to the contour.
    """
    direct = _project_to_contour(field, start, threshold, max_iters)
    if direct is not None or seed is None:
        return direct
    start = np.asarray(start, dtype=float)
    q = cut_location(field, start, seed, threshold, 1e-4)
    if q is None:
        return None
    for _ in range(50):
        g = field.gradient(q)
        g2 = float(g @ g)
        if g2 <= (1e-8 * 255.0) ** 2:
            break
        n = g / np.sqrt(g2)
        tang = (start - q) - ((start - q) @ n) * n
        if np.linalg.norm(tang) < 1e-3:
            break
        moved = _project_to_contour(field, q + 0.5 * tang, threshold)
        if moved is None:
            break
        q = moved
    return q


def _opposite_seed(mesh: PHTMesh, classification: Classification,
                   field: LevelSetField, coord, cfg: FitConfig):
    """Sample point of a boundary owner on the other side of the contour
    from the vertex, nearest to the vertex; None when no owner has one."""
    p0 = vertex_position(mesh, coord)
    side = float(_field_eval(field, p0)[0]) >= cfg.threshold
    s = cfg.samples_per_axis
    ticks = (np.arange(s) + 0.5) / s
    grid = np.stack(
        np.meshgrid(*[ticks] * mesh.dim, indexing="ij"), axis=-1
    ).reshape(-1, mesh.dim)
    best = None
    best_d = np.inf
    for eid in _boundary_owners(mesh, classification, coord):
        phys = eval_table(mesh.element_net(mesh.elements[eid]), grid)
        vals = _field_eval(field, phys)
        opposite = (vals < cfg.threshold) if side else (vals >= cfg.threshold)
        for p in phys[opposite]:
            d = float(np.linalg.norm(p - p0))
            if d < best_d:
                best, best_d = p, d
    return best


def _perpendicular(n: np.ndarray) -> np.ndarray:
    if len(n) == 2:
        return np.array([-n[1], n[0]])
    k = int(np.argmin(np.abs(n)))
    t = np.zeros(3)
    t[k] = 1.0
    t -= (t @ n) * n
    return t / np.linalg.norm(t)


#: corner chamfer angle (radians): at an active-domain corner vertex both
#: parametric axes follow the contour, which would open the element to a
#: straight angle there; tilting each tangent this much toward the
#: interior keeps the Jacobian positive at the cost of an O(chamfer * h)
#: boundary offset, in the same spirit as the template's control-point
#: separation.
CHAMFER = 0.08

#: fraction of the way each chamfered axis is pulled back from the pure
#: contour tangent toward its current direction, so corner wedge angles
#: stay close to the true element angles.
CHAMFER_BLEND = 0.4


def _axis_roles(mesh: PHTMesh, coord, classification: Classification):
    """(radial_axis, chamfer) from the activity around the vertex.

    An axis separates the two sides when every active (or every inactive)
    cornered leaf sits on the same side of it.  One separating axis is the
    ordinary half-space case (that axis is radial); two or more on either
    side mean the vertex is a convex or concave corner/edge of the active
    domain and every axis runs along the boundary (chamfer mode); none
    leaves the choice to the normal alignment.
    """
    active_sides = set()
    inactive_sides = set()
    for eid in mesh.corner_map[coord]:
        e = mesh.elements[eid]
        bits = e.corner_bits(coord)
        if classification.kinds.get(e.eid) in ACTIVE_KINDS:
            active_sides.add(bits)
        else:
            inactive_sides.add(bits)
    if not active_sides and inactive_sides:
        # The vertex sits on the contour with no active leaf cornered at
        # it (a boundary-2 pocket); its axes should ride the contour.
        return None, True
    if not active_sides or not inactive_sides:
        return None, False

    def separating(sides):
        return [
            a for a in range(mesh.dim)
            if len({bits[a] for bits in sides}) == 1
        ]

    sep_act = separating(active_sides)
    sep_inact = separating(inactive_sides)
    if max(len(sep_act), len(sep_inact)) >= 2:
        return None, True
    if len(sep_act) == 1:
        return sep_act[0], False
    if len(sep_inact) == 1:
        return sep_inact[0], False
    return None, False


def adjust_vertex(mesh: PHTMesh, coord, cut, field: LevelSetField,
                  cfg: FitConfig, classification: Classification,
                  planned=None) -> None:
    """Replace the vertex's control points with osculating circle/sphere
    data through the cut location.

    The template map is center + rho(radial) * direction(tangentials) with
    per-axis speeds matched to the current geometry; its tangential speed
    is the cubic-arc endpoint speed 4 r tan(phi/4) / gap for the arc angle
    phi subtended by one element, so the boundary edge reproduces the
    contour's normal and curvature at the vertex.  At corner/edge vertices
    of the active domain every axis follows the contour, chamfered toward
    the interior.
    """
    d = mesh.dim
    cut = np.asarray(cut, dtype=float)
    gaps = mesh.vertex_gaps(coord)
    h = max(float(g) for pair in gaps for g in pair)
    r_max = cfg.radius_clamp * h
    r_min = h / cfg.radius_clamp

    e = mesh.elements[next(iter(mesh.corner_map[coord]))]
    info = mesh.compute_geometric_info(coord, e)
    order = corner_multi_indices(d)
    cols = [info[order.index(tuple(int(k == a) for k in range(d)))] for a in range(d)]

    try:
        n = field.normal(cut)
        kappa = float(field.curvature(cut))
        r_signed = (d - 1) / kappa if kappa != 0.0 else np.inf
    except DegenerateGradientError:
        # Flat fallback: outward points from the cut toward the vertex's
        # current (wrong-side) location; largest allowed radius.
        delta = info[0] - cut
        if np.linalg.norm(delta) > 1e-12:
            n = delta / np.linalg.norm(delta)
        else:
            k0 = int(np.argmax([np.linalg.norm(c) for c in cols]))
            n = cols[k0] / np.linalg.norm(cols[k0])
        r_signed = np.inf
    sign = 1.0 if r_signed > 0.0 else -1.0
    rho0 = min(max(abs(r_signed), r_min), r_max)
    u = sign * n  # direction from the osculating center to the cut point

    # When the contour converges (high curvature relative to the mesh),
    # adjacent fitted vertices end up much closer together than their
    # parametric spacing suggests; tangents sized for the old spacing then
    # fold the edge between them.  Cap each axis derivative near the chord
    # rate toward the closest planned neighbor position along that axis.
    chord_rate = {}
    if planned:
        for nb in mesh.vertex_neighbors(coord):
            diff = [a for a in range(d) if nb[a] != coord[a]]
            if len(diff) != 1 or nb not in planned:
                continue
            k = diff[0]
            rate = float(
                np.linalg.norm(planned[nb] - cut)
                / abs(float(nb[k] - coord[k]))
            )
            chord_rate[k] = min(chord_rate.get(k, np.inf), rate)

    def arc_speed(k, s_cur):
        gap = max(float(g) for g in gaps[k]) or h
        phi = min(s_cur * gap / rho0, np.pi / 2.0)
        speed = 4.0 * rho0 * np.tan(phi / 4.0) / gap
        return min(speed, 1.2 * chord_rate.get(k, np.inf))

    radial, chamfer = _axis_roles(mesh, coord, classification)
    if not chamfer and radial is None:
        align = [abs(c @ n) / max(np.linalg.norm(c), 1e-300) for c in cols]
        radial = int(np.argmax(align))

    if chamfer:
        # Every axis follows the contour, pulled a fraction of the way
        # back toward its current direction so the corner wedge angles of
        # the cornered elements stay close to their true angles, plus a
        # small tilt off the tangent plane.  The tangent projections alone
        # are linearly dependent, so orientation lives in the tilts:
        # giving axis k the sign of the Jacobian cofactor of n in slot k
        # makes the vertex determinant (sum of |cofactor| terms) positive.
        dirs = []
        tangents_unit = []
        for k in range(d):
            t = cols[k] - (cols[k] @ n) * n
            norm = np.linalg.norm(t)
            t = t / norm if norm > 1e-12 else _perpendicular(n)
            tangents_unit.append(t)
            c_norm = np.linalg.norm(cols[k])
            if c_norm > 1e-12:
                w = (1.0 - CHAMFER_BLEND) * t + CHAMFER_BLEND * cols[k] / c_norm
                w = w / np.linalg.norm(w)
            else:
                w = t
            dirs.append(w)
        rows = []
        vecs = []
        for k in range(d):
            mat = np.array([n if j == k else dirs[j] for j in range(d)])
            cof = np.linalg.det(mat)
            tilt = 1.0 if cof >= 0.0 else -1.0
            s_k = arc_speed(k, np.linalg.norm(cols[k]))
            # The farther an axis is pulled off the contour tangent, the
            # shorter its derivative: a shrunken off-tangent speed keeps
            # the boundary faces on the contour away from the vertex.
            phi = np.arccos(np.clip(dirs[k] @ tangents_unit[k], -1.0, 1.0))
            s_k *= max((1.0 - phi / 0.5) ** 2, 0.3)
            vecs.append(
                s_k * (np.cos(CHAMFER) * dirs[k] + tilt * np.sin(CHAMFER) * n)
            )
        for m in order:
            axes = [k for k in range(d) if m[k]]
            if not axes:
                rows.append(cut)
            elif len(axes) == 1:
                rows.append(vecs[axes[0]])
            else:
                rows.append(np.zeros(d))
    else:
        tangential = [k for k in range(d) if k != radial]
        tangents = []
        for k in tangential:
            t = cols[k] - (cols[k] @ n) * n
            for prev in tangents:
                t = t - (t @ prev) * prev
            norm = np.linalg.norm(t)
            t = t / norm if norm > 1e-12 else _perpendicular(n)
            tangents.append(t)
        speeds = {
            k: arc_speed(k, np.linalg.norm(cols[k]))
            for k in tangential
        }
        rho_prime = np.linalg.norm(cols[radial])
        if cols[radial] @ u < 0.0:
            rho_prime = -rho_prime
        # A fitted neighbor along the radial axis means the contour runs
        # that way too; an off-surface radial derivative sized for the
        # parametric gap would fold the edge between the two cuts.
        rate = chord_rate.get(radial)
        if rate is not None and abs(rho_prime) > 1.2 * rate:
            rho_prime = np.copysign(1.2 * rate, rho_prime)
        tangent_of = dict(zip(tangential, tangents))
        rows = []
        for m in order:
            axes = [k for k in range(d) if m[k]]
            t_axes = [k for k in axes if k != radial]
            if len(t_axes) >= 2:
                rows.append(np.zeros(d))
                continue
            vec = u if not t_axes else tangent_of[t_axes[0]]
            scale = 1.0
            if t_axes:
                scale *= speeds[t_axes[0]]
            if radial in axes:
                scale *= rho_prime
                if t_axes:
                    scale /= rho0
            rows.append(scale * vec if axes else cut)
    rows = [np.asarray(r, dtype=float).copy() for r in rows]
    # A vertex on a box face must keep the face in its plane: the value
    # and every in-face derivative lose their off-face component (the box
    # faces carry the clipped image boundary and, in the benchmark
    # problems, the symmetry planes).
    for k in _bound_axes(mesh, coord):
        for i, m in enumerate(order):
            if m[k]:
                continue
            rows[i][k] = float(coord[k]) if not any(m) else 0.0
    controls = solve_control_points(
        np.array(rows), [tuple(float(g) for g in pair) for pair in gaps]
    )
    mesh.set_vertex_controls(coord, controls)


def _resolve_cut_collisions(mesh, classification, field, cfg, cuts):
    """Keep at most one vertex per contour point.

    Distinct marked vertices occasionally bisect to the same crossing
    (e.g. both endpoints of one edge straddling the contour); moving both
    there collapses the edge.  The nearest vertex keeps the cut, the
    others are re-routed to their nearest contour point or dropped.
    """
    tol = 1e-3
    groups = {}
    for i, (coord, cut) in enumerate(cuts):
        key = tuple(np.round(np.asarray(cut, dtype=float) / tol).astype(np.int64))
        groups.setdefault(key, []).append(i)
    out = [None] * len(cuts)
    for idxs in groups.values():
        if len(idxs) > 1:
            idxs = sorted(
                idxs,
                key=lambda i: float(np.linalg.norm(
                    cuts[i][1] - vertex_position(mesh, cuts[i][0])
                )),
            )
        out[idxs[0]] = cuts[idxs[0]]
        for i in idxs[1:]:
            coord, cut = cuts[i]
            p0 = vertex_position(mesh, coord)
            seed = _opposite_seed(mesh, classification, field, coord, cfg)
            alt = nearest_point(field, p0, cfg.threshold, seed=seed)
            if alt is None or np.linalg.norm(alt - cuts[idxs[0]][1]) < 10.0 * tol:
                log.warning(
                    "vertex %s left unadjusted (cut collision)", coord
                )
                continue
            out[i] = (coord, alt)
    return [c for c in out if c is not None]


def smooth(mesh: PHTMesh, cfg: FitConfig, pinned) -> None:
    """Jacobi Laplacian smoothing of the non-pinned basis vertices; each
    vertex's control points translate rigidly with it."""
    pinned = set(pinned)
    movable = []
    for coord in mesh.vertices:
        if coord in pinned:
            continue
        on_box = any(
            x == lo or x == hi for x, (lo, hi) in zip(coord, mesh.domain)
        )
        if not on_box:
            movable.append(coord)
    for _ in range(cfg.smooth_iters):
        pos = {c: vertex_position(mesh, c) for c in mesh.vertices}
        shifts = []
        for coord in movable:
            nbrs = mesh.vertex_neighbors(coord)
            if not nbrs:
                continue
            lap = np.mean([pos[n] for n in nbrs], axis=0) - pos[coord]
            shifts.append((coord, cfg.lambda_smooth * lap))
        for coord, delta in shifts:
            mesh.translate_vertex(coord, delta)


def _face_neighbors(mesh: PHTMesh, e) -> set:
    """Eids of leaves sharing a face with e (one-level cap makes 2^(d-1)
    probe points per face sufficient)."""
    out = set()
    d = mesh.dim
    for k in range(d):
        for side in (0, 1):
            x = e.hi[k] if side else e.lo[k]
            if x == mesh.domain[k][side]:
                continue
            others = [a for a in range(d) if a != k]
            for q in product((Fraction(1, 4), Fraction(3, 4)), repeat=d - 1):
                probe = list(coord for coord in e.lo)
                probe[k] = x
                for a, frac in zip(others, q):
                    probe[a] = e.lo[a] + frac * (e.hi[a] - e.lo[a])
                for nb in mesh._leaves_containing(tuple(probe)):
                    if nb.eid == e.eid:
                        continue
                    touch = nb.lo[k] if side else nb.hi[k]
                    if touch == x:
                        out.add(nb.eid)
    return out


def refine_boundary(mesh: PHTMesh, classification: Classification) -> None:
    """Cross-refine every boundary element and its face neighbors, then
    keep refining until no boundary element carries a T-vertex corner."""
    boundary = [
        e for e in mesh.leaves
        if classification.kinds.get(e.eid) in BOUNDARY_KINDS
    ]
    marked = {e.eid for e in boundary}
    for e in boundary:
        marked |= _face_neighbors(mesh, e)
    for eid in sorted(marked):
        if mesh.elements[eid].is_leaf:
            mesh.refine_element(mesh.elements[eid])

    def descendants(eid):
        stack, out = [eid], []
        while stack:
            el = mesh.elements[stack.pop()]
            if el.is_leaf:
                out.append(el)
            else:
                stack.extend(el.children)
        return out

    boundary_eids = [e.eid for e in boundary]
    changed = True
    while changed:
        changed = False
        for eid in boundary_eids:
            for leaf in descendants(eid):
                for bits in product((0, 1), repeat=mesh.dim):
                    coord = tuple(
                        leaf.hi[k] if b else leaf.lo[k]
                        for k, b in enumerate(bits)
                    )
                    if coord in mesh.vertices:
                        continue
                    hangs = [
                        c for c in mesh._leaves_containing(coord)
                        if c.corner_bits(coord) is None
                    ]
                    for c in hangs:
                        if c.is_leaf:
                            mesh.refine_element(c)
                            changed = True


def boundary_faces(mesh: PHTMesh, classification: Classification) -> list:
    """(element, axis, side) faces separating active from inactive leaves."""
    out = []
    for e in mesh.leaves:
        if classification.kinds.get(e.eid) not in ACTIVE_KINDS:
            continue
        for k in range(mesh.dim):
            for side in (0, 1):
                x = e.hi[k] if side else e.lo[k]
                if x == mesh.domain[k][side]:
                    continue
                nbrs = _face_neighbors_on(mesh, e, k, side)
                if nbrs and all(
                    classification.kinds.get(nb) not in ACTIVE_KINDS
                    for nb in nbrs
                ):
                    out.append((e, k, side))
    return out


def _face_neighbors_on(mesh: PHTMesh, e, k, side) -> set:
    out = set()
    x = e.hi[k] if side else e.lo[k]
    others = [a for a in range(mesh.dim) if a != k]
    for q in product((Fraction(1, 4), Fraction(3, 4)), repeat=mesh.dim - 1):
        probe = list(coord for coord in e.lo)
        probe[k] = x
        for a, frac in zip(others, q):
            probe[a] = e.lo[a] + frac * (e.hi[a] - e.lo[a])
        for nb in mesh._leaves_containing(tuple(probe)):
            touch = nb.lo[k] if side else nb.hi[k]
            if nb.eid != e.eid and touch == x:
                out.add(nb.eid)
    return out


def boundary_samples(mesh: PHTMesh, classification: Classification,
                     per_axis: int = 9) -> np.ndarray:
    """Physical sample points on the active-domain boundary faces."""
    ts = np.linspace(0.0, 1.0, per_axis)
    pts = []
    for e, k, side in boundary_faces(mesh, classification):
        net = mesh.element_net(e)
        if mesh.dim == 2:
            local = np.empty((per_axis, 2))
            local[:, k] = float(side)
            local[:, 1 - k] = ts
        else:
            a, b = np.meshgrid(ts, ts, indexing="ij")
            local = np.empty((a.size, 3))
            local[:, k] = float(side)
            others = [x for x in range(3) if x != k]
            local[:, others[0]] = a.ravel()
            local[:, others[1]] = b.ravel()
        pts.append(eval_table(net, local))
    if not pts:
        return np.empty((0, mesh.dim))
    return np.concatenate(pts, axis=0)


def fit(mesh: PHTMesh, field: LevelSetField, cfg: FitConfig,
        distance_oracle=None) -> list:
    """Run the fitting loop; returns one report dict per level."""
    reports = []
    fitted = set()
    for level in range(cfg.levels + 1):
        classification = classify_elements(mesh, field, cfg)
        adjusted = []
        # Classification and refinement run on the pristine parametric
        # geometry; vertices move only once, on the finest mesh.  Adjusting
        # at every level looks attractive but poisons the hierarchy: a
        # coarse-level vertex pulled onto the contour warps the map, later
        # classification sees the warped geometry, and refinement then
        # crowds new vertices onto the same contour arc until a cell has
        # every corner on it and collapses.
        if cfg.adjust and level == cfg.levels:
            # All cuts are located against the geometry frozen at the start
            # of the level; otherwise a segment whose endpoint is an
            # already-fitted neighbor starts on the contour and bisection
            # collapses both vertices onto the same point.
            cuts = []
            for coord in mark_adjustable_vertices(
                mesh, classification, field, cfg.threshold
            ):
                p0 = vertex_position(mesh, coord)
                # Re-adjusting a vertex fitted at an earlier level is a
                # no-op by contract; skip it (but keep it pinned) instead
                # of rebuilding its data from the already-rotated columns.
                if abs(float(field.evaluate(p0)) - cfg.threshold) < 255.0 * 1e-4:
                    adjusted.append(coord)
                    continue
                cut = None
                rejected = None
                # A vertex on a face of the parametric box belongs to the
                # clipped image boundary; its cut must stay within that
                # face or the face geometry leaves the box plane (and a
                # symmetry plane in the benchmark problems would bulge).
                bound = _bound_axes(mesh, coord)
                ends = adjust_direction(mesh, coord, classification)
                if bound:
                    ends = [
                        end for end in ends
                        if all(end[k] == coord[k] for k in bound)
                    ]
                candidates = []
                for end in ends:
                    p1 = mesh.evaluate_geometry(
                        np.array([[float(x) for x in end]])
                    )[0][0]
                    for far, toward_vertex in ((p1, True), (2.0 * p0 - p1, False)):
                        cand = cut_location(
                            field, p0, far, cfg.threshold, cfg.bisect_tol
                        )
                        if cand is None:
                            continue
                        # A cut in the far half of a segment ending at
                        # another vertex belongs to that vertex: if both
                        # endpoints straddle the contour, each bisects to
                        # the same crossing and the edge collapses.  Keep
                        # such a cut only as a last resort.
                        limit = (0.5 if toward_vertex else 0.1) * np.linalg.norm(far - p0)
                        if np.linalg.norm(cand - far) < limit:
                            if rejected is None:
                                rejected = cand
                            continue
                        candidates.append(cand)
                gaps = mesh.vertex_gaps(coord)
                h_v = max(float(g) for pair in gaps for g in pair)
                best = min(
                    (np.linalg.norm(c - p0) for c in candidates),
                    default=np.inf,
                )
                # Segments nearly tangent to the contour cut it far from
                # the vertex; a distant cut drags the vertex along the
                # contour and distorts its cells, so when every segment
                # cut is far the nearest contour point competes too.
                if best > 0.5 * h_v:
                    seed = _opposite_seed(
                        mesh, classification, field, coord, cfg
                    )
                    if bound and seed is not None:
                        seed = seed.copy()
                        for k in bound:
                            seed[k] = float(coord[k])
                        # Projecting the seed into the face can leave it
                        # short of the contour; stretch the in-face segment
                        # so bisection has a bracket.
                        d = seed - p0
                        length = np.linalg.norm(d)
                        if length > 1e-12 and length < 2.0 * h_v:
                            seed = p0 + d * (2.0 * h_v / length)
                        near = cut_location(
                            field, p0, seed, cfg.threshold, cfg.bisect_tol
                        )
                    else:
                        near = nearest_point(
                            field, p0, cfg.threshold, seed=seed
                        )
                    if near is not None:
                        candidates.append(near)
                if candidates:
                    cut = min(
                        candidates, key=lambda c: np.linalg.norm(c - p0)
                    )
                else:
                    cut = rejected
                if cut is None:
                    log.warning("vertex %s left unadjusted (no contour hit)", coord)
                    continue
                # Adjustment is a single pass on the finest mesh, so a
                # skipped vertex stays off the contour forever and leaves a
                # scalloped boundary whose faces point the wrong way.  Only
                # a move so large it would crush the cells behind the vertex
                # is abandoned.
                if np.linalg.norm(cut - p0) > MOVE_LIMIT * h_v:
                    log.info("vertex %s skipped (move %.2f > %.2f)",
                             coord, float(np.linalg.norm(cut - p0)),
                             MOVE_LIMIT * h_v)
                    continue
                cuts.append((coord, cut))
            cuts = _resolve_cut_collisions(
                mesh, classification, field, cfg, cuts
            )
            planned = {c: np.asarray(q, dtype=float) for c, q in cuts}
            for c in adjusted:  # already on the contour from earlier levels
                planned[c] = vertex_position(mesh, c)
            for coord, cut in cuts:
                adjust_vertex(
                    mesh, coord, cut, field, cfg, classification,
                    planned=planned,
                )
                adjusted.append(coord)
            # Vertices fitted at earlier levels stay pinned even when their
            # surroundings are no longer classified as boundary; smoothing
            # must not pull them off the contour.
            fitted.update(adjusted)
            smooth(mesh, cfg, pinned=fitted)
        report = {
            "level": level,
            "n_active": len(classification.active_eids()),
            "n_boundary1": classification.count("boundary-1"),
            "n_boundary2": classification.count("boundary-2"),
            "n_adjusted": len(adjusted),
            "min_scaled_jacobian": min(
                (mesh.scaled_jacobian(e) for e in mesh.active_leaves()),
                default=float("nan"),
            ),
        }
        if distance_oracle is not None:
            samples = boundary_samples(mesh, classification)
            if len(samples):
                dist = np.abs(np.asarray(distance_oracle(samples), dtype=float))
                report["boundary_max_error"] = float(dist.max())
                report["boundary_mean_error"] = float(dist.mean())
        reports.append(report)
        if level < cfg.levels:
            refine_boundary(mesh, classification)
    # The active domain is defined by the classification that drove the
    # last adjustment round.  Re-classifying the moved geometry would flip
    # fitted boundary cells into the active set with corners that were
    # never marked, so element kinds are left as the loop set them.
    return reports


def write_report(path, reports) -> None:
    """Per-level fit metrics as CSV."""
    keys = sorted({k for r in reports for k in r}, key=lambda k: (k != "level", k))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for r in reports:
            writer.writerow(r)
