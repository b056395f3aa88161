import numpy as np
import pytest

from phtfit.bernstein import corner_multi_indices, eval_table
from phtfit.pht_mesh import PHTMesh, hermite_factor, solve_control_points


def make_mesh(dim, n=None, perturb=0.0, seed=0):
    n = n or ((4, 4) if dim == 2 else (2, 2, 2))
    mesh = PHTMesh.init_tensor_mesh(n, [(0, 1)] * dim)
    if perturb:
        rng = np.random.default_rng(seed)
        for f in mesh.basis.values():
            f.control = f.control + perturb * rng.normal(size=dim)
        mesh.invalidate_cache()
    return mesh


def leaf_checks(mesh):
    assert mesh.dim_formula_holds()
    for e in mesh.leaves:
        total = sum(t for t in e.funcs.values())
        assert np.abs(total - 1.0).max() < 1e-12
        for t in e.funcs.values():
            assert t.min() > -1e-13


def interface_jumps(mesh, rng, trials=60):
    """Max value/derivative jump across internal interfaces, evaluated
    exactly on the interface from the two adjacent leaves."""
    worst_val = worst_der = 0.0
    d = mesh.dim
    for _ in range(trials):
        p = rng.random(d)
        e = mesh.find_leaf(p)
        k = rng.integers(d)
        x = float(e.hi[k])
        if x >= 1.0:
            continue
        q = p.copy()
        q[k] = x
        other = q.copy()
        other[k] = x + 1e-12
        nb = mesh.find_leaf(other)
        if nb.eid == e.eid:
            continue

        def eval_side(el, pt):
            t = el.local(pt)
            net = mesh.element_net(el)
            w = [float(v) for v in el.widths()]
            val = eval_table(net, t[None, :])[0]
            grads = []
            for a in range(d):
                dv = [0] * d
                dv[a] = 1
                grads.append(eval_table(net, t[None, :], tuple(dv))[0] / w[a])
            return val, np.array(grads)

        v1, g1 = eval_side(e, q)
        v2, g2 = eval_side(nb, q)
        worst_val = max(worst_val, np.abs(v1 - v2).max())
        worst_der = max(worst_der, np.abs(g1 - g2).max())
    return worst_val, worst_der


def test_initial_counts_2d():
    mesh = make_mesh(2)
    assert len(mesh.vertices) == 25
    assert len(mesh.basis) == 100
    assert mesh.dim_formula_holds()


def test_initial_counts_3d():
    mesh = make_mesh(3)
    assert len(mesh.vertices) == 27
    assert len(mesh.basis) == 216


def test_min_elements():
    with pytest.raises(ValueError):
        PHTMesh.init_tensor_mesh((1, 4), [(0, 1), (0, 1)])


def test_identity_map():
    mesh = PHTMesh.init_tensor_mesh((4, 3), [(0, 2), (-1, 1)])
    rng = np.random.default_rng(1)
    pts = rng.random((50, 2)) * [2, 2] + [0, -1]
    vals, jacs = mesh.evaluate_geometry(pts)
    assert np.abs(vals - pts).max() < 1e-12
    assert np.abs(jacs - np.eye(2)).max() < 1e-12


def test_refine_interior_one_new_vertex():
    mesh = make_mesh(2)
    before = len(mesh.basis)
    new = mesh.refine_element(mesh.find_leaf([0.3, 0.3]))
    assert len(new) == 1
    assert len(mesh.basis) == before + 4
    leaf_checks(mesh)


def test_refine_corner_three_new_vertices():
    mesh = make_mesh(2)
    before = len(mesh.basis)
    new = mesh.refine_element(mesh.find_leaf([0.01, 0.01]))
    assert len(new) == 3
    assert len(mesh.basis) == before + 12


def test_refine_errors_on_non_leaf():
    mesh = make_mesh(2)
    e = mesh.find_leaf([0.3, 0.3])
    mesh.refine_element(e)
    with pytest.raises(ValueError):
        mesh.refine_element(e)


def test_modified_functions_vanish_at_new_vertex():
    mesh = make_mesh(2)
    old_fids = set(mesh.basis)
    e = mesh.find_leaf([0.55, 0.55])
    new = mesh.refine_element(e)
    for coord in new:
        for eid in mesh.corner_map[coord]:
            el = mesh.elements[eid]
            side = el.corner_bits(coord)
            block = tuple(slice(2, 4) if s else slice(0, 2) for s in side)
            for fid, table in el.funcs.items():
                if fid in old_fids:
                    # Old functions lose their value/derivative data at the
                    # new vertex: the corner ordinate block is zeroed.
                    assert np.abs(table[block]).max() == 0.0


def test_locality_bitwise():
    mesh = make_mesh(2, perturb=0.03)
    target = mesh.find_leaf([0.55, 0.55])
    near = {target.eid}
    for coord in mesh.corner_map:
        if target.corner_bits(coord) is not None:
            near.update(mesh.corner_map[coord])
    snapshots = {}
    for fid, fn in mesh.basis.items():
        if not (fn.elements & near):
            snapshots[fid] = {
                eid: mesh.elements[eid].funcs[fid].copy() for eid in fn.elements
            }
    mesh.refine_element(target)
    for fid, tabs in snapshots.items():
        fn = mesh.basis[fid]
        assert fn.elements == set(tabs)
        for eid, t in tabs.items():
            assert (mesh.elements[eid].funcs[fid] == t).all()


@pytest.mark.parametrize("dim,steps", [(2, 50), (3, 12)])
def test_randomized_refinement_suite(dim, steps):
    rng = np.random.default_rng(100 + dim)
    mesh = make_mesh(dim, perturb=0.02, seed=dim)
    pts = rng.random((80, dim))
    ref, _ = mesh.evaluate_geometry(pts)
    for _ in range(steps):
        leaves = mesh.leaves
        mesh.refine_element(leaves[rng.integers(len(leaves))])
        leaf_checks(mesh)
    cur, _ = mesh.evaluate_geometry(pts)
    assert np.abs(cur - ref).max() < 1e-10
    jval, jder = interface_jumps(mesh, rng, trials=200)
    assert jval < 1e-10
    assert jder < 1e-8


def test_partition_of_unity_constant_map():
    rng = np.random.default_rng(5)
    mesh = make_mesh(2)
    for _ in range(15):
        leaves = mesh.leaves
        mesh.refine_element(leaves[rng.integers(len(leaves))])
    c = np.array([0.7, -0.3])
    for f in mesh.basis.values():
        f.control = c.copy()
    mesh.invalidate_cache()
    pts = rng.random((1000, 2))
    vals, _ = mesh.evaluate_geometry(pts)
    assert np.abs(vals - c).max() < 1e-12


def test_hermite_factor_uniform():
    h = 0.25
    fac = hermite_factor(h, h)
    # Doubled-knot cubic pair: values split evenly, end slopes +-3/(2h).
    assert np.allclose(fac, [[0.5, 0.5], [-6.0, 6.0]])


def test_solve_control_points_residual():
    rng = np.random.default_rng(7)
    for gaps in [((0.25, 0.25), (0.5, 0.25)), ((0, 0.5), (0.25, 0.25))]:
        info = rng.normal(size=(4, 2))
        rows = solve_control_points(info, gaps)
        mat = np.kron(hermite_factor(*gaps[0]), hermite_factor(*gaps[1]))
        assert np.abs(mat @ rows - info).max() < 1e-12


def test_geometric_info_identity_and_fd():
    mesh = make_mesh(2)
    info = mesh.compute_geometric_info((0.5, 0.5))
    assert np.allclose(info[0], [0.5, 0.5])
    assert np.allclose(info[1], [0.0, 1.0])  # d/dv of identity
    assert np.allclose(info[2], [1.0, 0.0])  # d/du
    assert np.allclose(info[3], [0.0, 0.0])

    mesh = make_mesh(2, perturb=0.05, seed=3)
    coord = (0.4, 0.15)  # element interior, so central differences converge
    info = mesh.compute_geometric_info(coord)
    h = 1e-5
    p = np.array(coord, dtype=float)

    def val(q):
        return mesh.evaluate_geometry(q[None, :])[0][0]

    fd_u = (val(p + [h, 0]) - val(p - [h, 0])) / (2 * h)
    fd_v = (val(p + [0, h]) - val(p - [0, h])) / (2 * h)
    assert np.abs(info[2] - fd_u).max() < 1e-6
    assert np.abs(info[1] - fd_v).max() < 1e-6


def test_geometric_info_3d_identity_cross_term():
    mesh = make_mesh(3)
    info = mesh.compute_geometric_info((0.5, 0.5, 0.5))
    assert np.allclose(info[-1], 0.0)


def test_greville_roundtrip():
    mesh = make_mesh(2)
    coord = (0.5, 0.25)
    info = mesh.compute_geometric_info(coord)
    gaps = mesh.vertex_gaps(coord)
    rows = solve_control_points(info, gaps)
    assert np.allclose(rows, mesh.vertex_controls(coord), atol=1e-12)


def test_scaled_jacobian():
    mesh = make_mesh(2)
    for e in mesh.leaves:
        assert mesh.scaled_jacobian(e) == pytest.approx(1.0, abs=1e-12)
    mesh2 = make_mesh(2, perturb=0.05, seed=9)
    for e in mesh2.leaves:
        assert -1.0 <= mesh2.scaled_jacobian(e, samples=5) <= 1.0


def test_bezier_extraction_equivalence():
    rng = np.random.default_rng(11)
    mesh = make_mesh(2, perturb=0.04, seed=11)
    for _ in range(8):
        leaves = mesh.leaves
        mesh.refine_element(leaves[rng.integers(len(leaves))])
    for e in mesh.leaves:
        e.klass = "internal"
    nets = mesh.bezier_extraction()
    assert len(nets) == len(mesh.leaves)
    for e, net in nets[:20]:
        ts = rng.random((5, 2))
        lo = np.array([float(x) for x in e.lo])
        w = np.array([float(x) for x in e.widths()])
        direct, _ = mesh.evaluate_geometry(lo + ts * w)
        assert np.abs(eval_table(net, ts) - direct).max() < 1e-12


def test_vertex_neighbors_uniform():
    mesh = make_mesh(2)
    nbrs = mesh.vertex_neighbors(next(iter(mesh.vertices)))
    assert 2 <= len(nbrs) <= 4


def test_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(13)
    mesh = make_mesh(2, perturb=0.03, seed=13)
    for _ in range(6):
        leaves = mesh.leaves
        mesh.refine_element(leaves[rng.integers(len(leaves))])
    mesh.save(tmp_path / "mesh")
    back = PHTMesh.load(tmp_path / "mesh")
    pts = rng.random((40, 2))
    v1, j1 = mesh.evaluate_geometry(pts)
    v2, j2 = back.evaluate_geometry(pts)
    assert np.abs(v1 - v2).max() < 1e-14
    assert np.abs(j1 - j2).max() < 1e-14
    assert back.dim_formula_holds()


def test_vtk_export(tmp_path):
    mesh = make_mesh(2)
    for e in mesh.leaves:
        e.klass = "internal"
    mesh.export_vtk(tmp_path / "mesh.vtk", resolution=3)
    text = (tmp_path / "mesh.vtk").read_text()
    assert text.startswith("# vtk DataFile")
    assert "CELL_TYPES" in text
