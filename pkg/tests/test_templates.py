import numpy as np
import pytest

from phtfit.bernstein import eval_table
from phtfit.templates import (
    KAPPA,
    Template,
    arc_controls,
    build_circle_template,
    build_sphere_template,
    instantiate,
    quarter_arc,
    sphere_octant,
)


def pairwise_min(points):
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    d[np.diag_indices(len(points))] = np.inf
    return d.min()


def bezier_curvature(ctrl, t):
    """Curvature of a planar cubic Bezier curve at parameter t."""
    pts = np.atleast_1d(t)[:, None]
    d1 = eval_table(ctrl, pts, (1,))
    d2 = eval_table(ctrl, pts, (2,))
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    return np.abs(cross) / np.linalg.norm(d1, axis=1) ** 3


def test_quarter_arc_error():
    arc = quarter_arc(0.0)
    t = np.linspace(0, 1, 10001)[:, None]
    pts = eval_table(arc, t)
    err = np.abs(np.linalg.norm(pts, axis=1) - 1.0).max()
    assert err < 1e-3
    assert err == pytest.approx(2.7e-4, rel=0.1)


def test_small_arc_error_scales_down():
    t = np.linspace(0, 1, 2001)[:, None]
    errs = []
    for phi in (np.pi / 2, np.pi / 6):
        pts = eval_table(arc_controls(phi), t)
        errs.append(np.abs(np.linalg.norm(pts, axis=1) - 1.0).max())
    assert errs[1] < errs[0] / 100


def test_circle_template_structure():
    t = build_circle_template()
    assert t.dim == 2
    assert len(t.nets) == 16
    assert t.arc_elements == (6, 7, 10, 11)
    samples = t.boundary_samples(64)
    assert np.abs(np.linalg.norm(samples, axis=1) - 1.0).max() < 1e-3


def test_circle_quadrants_rotationally_symmetric():
    t = build_circle_template()
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    quads = [t.nets[i] for i in t.arc_elements]
    for a, b in zip(quads, quads[1:] + quads[:1]):
        assert np.abs(a @ rot.T - b).max() < 1e-12


def test_circle_separation():
    eps = 0.01
    t = build_circle_template(eps)
    assert pairwise_min(t.controls) >= eps


def test_eps_zero_degenerates_center():
    t = build_circle_template(0.0)
    net = t.nets[t.arc_elements[0]]
    # All four control points of the inner face coincide at the origin.
    assert np.abs(net[0]).max() == 0.0
    d1 = eval_table(net, np.array([[0.0, 0.5]]), (0, 1))
    assert np.linalg.norm(d1) < 1e-12


def test_eps_validation():
    with pytest.raises(ValueError):
        build_circle_template(0.06)
    with pytest.raises(ValueError):
        build_circle_template(-0.01)


def test_arc_curvature_matches_radius():
    radius = 3.7
    t = instantiate(build_circle_template(), [1.0, -2.0], radius)
    for i in t.arc_elements:
        outer = t.nets[i][3]
        k = bezier_curvature(outer, [0.25, 0.5, 0.75])
        assert np.abs(k * radius - 1.0).max() < 0.01


def test_sphere_octant_symmetry():
    base = sphere_octant(1.0, 1.0, 1.0)
    flipped = sphere_octant(-1.0, 1.0, -1.0)
    assert np.abs(base * [-1.0, 1.0, -1.0] - flipped).max() == 0.0


def test_sphere_surface_error():
    t = build_sphere_template(0.0)
    samples = t.boundary_samples(40)
    err = np.abs(np.linalg.norm(samples, axis=1) - 1.0).max()
    assert err < 5e-3


def test_sphere_template_structure_and_separation():
    eps = 0.01
    t = build_sphere_template(eps)
    assert t.dim == 3
    assert len(t.nets) == 16
    assert t.arc_elements == tuple(range(8))
    assert pairwise_min(t.controls) >= eps
    # Offsets must not move the surface approximation beyond tolerance.
    samples = t.boundary_samples(40)
    assert np.abs(np.linalg.norm(samples, axis=1) - 1.0).max() < 5e-3


def test_instantiate_identity_and_scaling():
    t = build_circle_template()
    same = instantiate(t, [0.0, 0.0], 1.0)
    assert np.abs(same.controls - t.controls).max() < 1e-14
    radius = 5.0
    scaled = instantiate(t, [0.0, 0.0], radius)
    assert np.abs(scaled.controls - radius * t.controls).max() < 1e-12
    assert scaled.eps_sep == pytest.approx(radius * t.eps_sep)
    samples = scaled.boundary_samples(64)
    err = np.abs(np.linalg.norm(samples, axis=1) - radius).max()
    base_err = np.abs(np.linalg.norm(t.boundary_samples(64), axis=1) - 1.0).max()
    assert err == pytest.approx(radius * base_err, rel=1e-9)


def test_instantiate_rotation():
    t = build_circle_template()
    theta = 0.37
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    moved = instantiate(t, [2.0, 3.0], 2.0, rot)
    assert np.abs(moved.controls - (np.array([2.0, 3.0]) + 2.0 * t.controls @ rot.T)).max() < 1e-12
    with pytest.raises(ValueError):
        instantiate(t, [0.0, 0.0], 1.0, np.array([[1.0, 0.1], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        instantiate(t, [0.0, 0.0], -1.0)


def test_vertex_associations():
    for t in (build_circle_template(), build_sphere_template()):
        for vkey, rows in t.vertex_assoc.items():
            assert len(rows) == 2**t.dim
            assert len(set(rows)) == 2**t.dim


def test_boundary_point():
    t = build_circle_template()
    p = t.boundary_point(t.arc_elements[0], [0.5])
    assert np.abs(np.linalg.norm(p) - 1.0) < 1e-3
