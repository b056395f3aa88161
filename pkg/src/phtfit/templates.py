"""Unit circle and unit sphere control-net templates.

The circle template has 16 bicubic elements: four disk quadrants whose
outer edges are the classic cubic Bezier quarter-circle (tangent magnitude
4(sqrt(2)-1)/3) and a surrounding ring of twelve annulus sectors.  The
sphere template has eight octant volume elements capped by bicubic octant
patches of the unit sphere plus eight outer shell octants.  Control points
that would coincide at the center (and at the sphere poles) are separated
by a small distance so every element has a nonsingular control net.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .bernstein import NB, eval_table

#: tangent magnitude of the cubic Bezier quarter circle
KAPPA = 4.0 * (np.sqrt(2.0) - 1.0) / 3.0

#: radial coordinates of the linear filler direction (degree-elevated)
RADIAL = np.array([0.0, 1.0, 2.0, 3.0]) / 3.0

RING_RADII = 1.0 + RADIAL


def quarter_arc(theta0: float = 0.0) -> np.ndarray:
    """Control points of the 90-degree unit arc starting at angle theta0."""
    base = np.array([[1.0, 0.0], [1.0, KAPPA], [KAPPA, 1.0], [0.0, 1.0]])
    return base @ _rot2(theta0).T


def arc_controls(phi: float, theta0: float = 0.0) -> np.ndarray:
    """Cubic Bezier approximation of a unit arc of opening angle phi."""
    t = (4.0 / 3.0) * np.tan(phi / 4.0)
    p0 = np.array([np.cos(theta0), np.sin(theta0)])
    p3 = np.array([np.cos(theta0 + phi), np.sin(theta0 + phi)])
    d0 = np.array([-np.sin(theta0), np.cos(theta0)])
    d3 = np.array([-np.sin(theta0 + phi), np.cos(theta0 + phi)])
    return np.stack([p0, p0 + t * d0, p3 - t * d3, p3])


def _rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Template:
    """Immutable control-net template.

    nets[i] has shape (4,)*dim + (dim,) with axis 0 the radial direction
    (0 at the template center, 1 at the outer face of the element).
    arc_elements indexes the elements whose outer (axis 0, upper) face
    approximates the unit circle/sphere.  controls stacks the distinct
    control points; element_index[i] maps net entries to control rows.
    vertex_assoc maps each template vertex (rounded coordinate key) to its
    2^dim associated control rows.
    """

    dim: int
    nets: tuple
    controls: np.ndarray
    element_index: tuple
    arc_elements: tuple
    vertex_assoc: dict
    eps_sep: float

    def boundary_samples(self, per_axis: int) -> np.ndarray:
        """Points sampled on the circle/sphere-approximating faces."""
        ts = np.linspace(0.0, 1.0, per_axis)
        if self.dim == 2:
            local = np.stack([np.ones_like(ts), ts], axis=1)
        else:
            a, b = np.meshgrid(ts, ts, indexing="ij")
            local = np.stack(
                [np.ones(a.size), a.ravel(), b.ravel()], axis=1
            )
        out = [eval_table(self.nets[i], local) for i in self.arc_elements]
        return np.concatenate(out, axis=0)

    def boundary_point(self, element: int, local) -> np.ndarray:
        local = np.concatenate([[1.0], np.atleast_1d(local)])
        return eval_table(self.nets[element], local[None, :])[0]


def build_circle_template(eps_sep: float = 0.01) -> Template:
    """16-element unit circle template; quadrants at indices 6, 7, 10, 11."""
    _check_eps(eps_sep)
    quad_nets = []
    for q in range(4):
        arc = quarter_arc(q * np.pi / 2.0)
        net = RADIAL[:, None, None] * arc[None, :, :]
        net[0] = _separate_center(arc, eps_sep)
        quad_nets.append(net)
    ring_nets = []
    for s in range(12):
        arc = arc_controls(np.pi / 6.0, s * np.pi / 6.0)
        ring_nets.append(RING_RADII[:, None, None] * arc[None, :, :])
    nets = [None] * 16
    for idx, net in zip((6, 7, 10, 11), quad_nets):
        nets[idx] = net
    spots = [i for i in range(16) if nets[i] is None]
    for idx, net in zip(spots, ring_nets):
        nets[idx] = net
    return _assemble(2, nets, (6, 7, 10, 11), eps_sep)


def sphere_octant(sx: float, sy: float, sz: float) -> np.ndarray:
    """Bicubic Bezier net approximating one octant of the unit sphere.

    Rows run from the equator (index 0) to the pole (index 3), columns
    along the equatorial quarter arc; the pole row is degenerate.
    """
    arc = quarter_arc(0.0)
    h = np.array([1.0, 1.0, KAPPA, 0.0])
    z = np.array([0.0, KAPPA, 1.0, 1.0])
    net = np.empty((NB, NB, 3))
    net[..., :2] = h[:, None, None] * arc[None, :, :]
    net[..., 2] = z[:, None]
    net *= np.array([sx, sy, sz])
    return net


def build_sphere_template(eps_sep: float = 0.01) -> Template:
    """16-element unit sphere template; octants at indices 0..7."""
    _check_eps(eps_sep)
    inner = []
    outer = []
    for sz, sy, sx in product((1.0, -1.0), repeat=3):
        raw = sphere_octant(sx, sy, sz)
        offsets = _pole_offsets(raw, eps_sep)
        net = RADIAL[:, None, None, None] * raw[None, ...]
        # The pole column and the center block would be degenerate; keep a
        # radius-independent tangential offset at the pole so every row
        # stays eps_sep-separated, and spread the center points radially.
        net[1:, 3, :] += offsets
        net[0] = (
            1.05 * eps_sep / _OCTANT_MIN_CHORD * _octant_directions(sx, sy, sz)
        ).reshape(NB, NB, 3)
        inner.append(net)
        surf = raw.copy()
        surf[3] += offsets
        outer.append(RING_RADII[:, None, None, None] * surf[None, ...])
    nets = inner + outer
    return _assemble(3, nets, tuple(range(8)), eps_sep)


def instantiate(t: Template, center, radius: float, rotation=None) -> Template:
    """Similarity transform x -> center + radius * R x of the whole template."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    rot = np.eye(t.dim) if rotation is None else np.asarray(rotation, dtype=float)
    if np.abs(rot.T @ rot - np.eye(t.dim)).max() >= 1e-12:
        raise ValueError("rotation matrix is not orthogonal")
    center = np.asarray(center, dtype=float)

    def tf(points):
        return center + radius * (points @ rot.T)

    nets = tuple(
        tf(net.reshape(-1, t.dim)).reshape(net.shape) for net in t.nets
    )
    return Template(
        dim=t.dim,
        nets=nets,
        controls=tf(t.controls),
        element_index=t.element_index,
        arc_elements=t.arc_elements,
        vertex_assoc=t.vertex_assoc,
        eps_sep=t.eps_sep * radius,
    )


def _check_eps(eps_sep: float) -> None:
    if not 0.0 <= eps_sep <= 0.05:
        raise ValueError("eps_sep must lie in [0, 0.05]")


def _separate_center(directions: np.ndarray, eps_sep: float) -> np.ndarray:
    """Replace coincident center points by small radial offsets.

    Each row of `directions` gives the outward ray of one control column;
    offsets sit at radius 2.6 * eps_sep so the minimum pairwise distance
    between separated points is at least eps_sep.
    """
    if eps_sep == 0.0:
        return np.zeros_like(directions)
    unit = directions / np.linalg.norm(directions, axis=-1, keepdims=True)
    return 2.6 * eps_sep * unit


def _spread_octant_directions() -> np.ndarray:
    """16 unit directions in the first octant by farthest-point sampling."""
    # Keep a healthy margin from the octant boundary planes: the mirrored
    # octants reuse these directions with flipped signs, so the smallest
    # direction component controls the distance between the center blocks
    # of adjacent octants.
    beta = np.linspace(0.4, np.pi / 2 - 0.4, 40)
    theta = np.linspace(0.4, np.pi / 2 - 0.4, 40)
    b, t = np.meshgrid(beta, theta, indexing="ij")
    cand = np.stack(
        [np.cos(b) * np.cos(t), np.cos(b) * np.sin(t), np.sin(b)], axis=-1
    ).reshape(-1, 3)
    picked = [cand[0]]
    dists = np.linalg.norm(cand - picked[0], axis=1)
    for _ in range(15):
        nxt = int(np.argmax(dists))
        picked.append(cand[nxt])
        dists = np.minimum(dists, np.linalg.norm(cand - cand[nxt], axis=1))
    return np.array(picked)


_OCTANT_DIRS = _spread_octant_directions()
_OCTANT_MIN_CHORD = min(
    np.linalg.norm(a - b)
    for i, a in enumerate(_OCTANT_DIRS)
    for b in _OCTANT_DIRS[i + 1 :]
)


def _octant_directions(sx: float, sy: float, sz: float) -> np.ndarray:
    return _OCTANT_DIRS * np.array([sx, sy, sz])


def _pole_offsets(surf: np.ndarray, eps_sep: float) -> np.ndarray:
    """Tangential separation vectors for the degenerate pole column.

    Directions follow the azimuths of the four meridian columns (adjacent
    azimuths differ by ~28.9 degrees, chord factor ~0.5), so a radius of
    2.1 * eps_sep keeps pairwise distances above eps_sep.
    """
    if eps_sep == 0.0:
        return np.zeros((NB, 3))
    tang = surf[2].copy()
    tang[:, 2] = 0.0
    unit = tang / np.linalg.norm(tang[:, :2], axis=1, keepdims=True).clip(1e-300)
    return 2.1 * eps_sep * unit


def _assemble(dim: int, nets, arc_elements, eps_sep: float) -> Template:
    points = np.concatenate([n.reshape(-1, dim) for n in nets], axis=0)
    controls, inverse = _unique_points(points)
    element_index = []
    off = 0
    for n in nets:
        cnt = n.reshape(-1, dim).shape[0]
        element_index.append(inverse[off : off + cnt].reshape(n.shape[:-1]))
        off += cnt
    assoc = _vertex_associations(dim, nets, controls, element_index)
    return Template(
        dim=dim,
        nets=tuple(n.copy() for n in nets),
        controls=controls,
        element_index=tuple(element_index),
        arc_elements=tuple(arc_elements),
        vertex_assoc=assoc,
        eps_sep=eps_sep,
    )


def _unique_points(points: np.ndarray, tol: float = 1e-9):
    key = np.round(points / tol).astype(np.int64)
    seen = {}
    inverse = np.empty(len(points), dtype=int)
    rows = []
    for i, k in enumerate(map(tuple, key)):
        if k not in seen:
            seen[k] = len(rows)
            rows.append(points[i])
        inverse[i] = seen[k]
    return np.array(rows), inverse


def _vertex_associations(dim, nets, controls, element_index):
    """Per template vertex, the 2^dim control rows nearest the corner."""
    assoc = {}
    corners = {}
    for n, idx in zip(nets, element_index):
        for bits in product((0, 1), repeat=dim):
            sel = tuple(3 * b for b in bits)
            vkey = tuple(np.round(n[sel], 9))
            block = tuple(
                slice(2, 4) if b else slice(0, 2) for b in bits
            )
            corners.setdefault(vkey, set()).update(idx[block].ravel().tolist())
    for vkey, cand in corners.items():
        cand = np.array(sorted(cand))
        d2 = ((controls[cand] - np.array(vkey)) ** 2).sum(axis=1)
        order = cand[np.argsort(d2, kind="stable")]
        assoc[vkey] = tuple(order[: 2**dim].tolist())
    return assoc
