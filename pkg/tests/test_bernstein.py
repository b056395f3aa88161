import numpy as np

from phtfit.bernstein import (
    SUB_LEFT,
    SUB_RIGHT,
    bernstein_derivs,
    bernstein_values,
    corner_block,
    eval_table,
    subdivide,
    tensor_rows,
)


def cubic(c, t):
    return bernstein_values(t) @ c


def test_partition_of_unity_and_endpoints():
    t = np.linspace(0, 1, 11)
    vals = bernstein_values(t)
    assert np.allclose(vals.sum(axis=-1), 1.0)
    assert np.allclose(vals[0], [1, 0, 0, 0])
    assert np.allclose(vals[-1], [0, 0, 0, 1])


def test_derivatives_match_finite_differences():
    rng = np.random.default_rng(0)
    c = rng.normal(size=4)
    t = rng.random(20) * 0.98 + 0.01
    h = 1e-6
    fd = (cubic(c, t + h) - cubic(c, t - h)) / (2 * h)
    assert np.allclose(bernstein_derivs(t) @ c, fd, atol=1e-7)


def test_subdivision_reproduces_halves():
    rng = np.random.default_rng(1)
    c = rng.normal(size=4)
    t = rng.random(10)
    assert np.allclose(cubic(SUB_LEFT @ c, t), cubic(c, t / 2))
    assert np.allclose(cubic(SUB_RIGHT @ c, t), cubic(c, 0.5 + t / 2))


def test_tensor_subdivision_2d():
    rng = np.random.default_rng(2)
    table = rng.normal(size=(4, 4))
    child = subdivide(table, (0, 1))  # lower in u, upper in v
    pts = rng.random((30, 2))
    direct = eval_table(table, pts * [0.5, 0.5] + [0.0, 0.5])
    assert np.allclose(eval_table(child, pts), direct, atol=1e-13)


def test_subdivide_with_trailing_axes():
    rng = np.random.default_rng(3)
    net = rng.normal(size=(4, 4, 2))  # a control net of 2D points
    child = subdivide(net, (1, 0))
    pts = rng.random((10, 2))
    direct = eval_table(net, pts * 0.5 + [0.5, 0.0])
    assert np.allclose(eval_table(child, pts), direct)


def test_tensor_rows_mixed_derivative():
    rng = np.random.default_rng(4)
    table = rng.normal(size=(4, 4))
    pts = rng.random((5, 2))
    h = 1e-5
    val = lambda p: eval_table(table, p)
    fd = (
        val(pts + [h, h]) - val(pts + [h, -h]) - val(pts + [-h, h]) + val(pts - [h, h])
    ) / (4 * h * h)
    mixed = tensor_rows(pts, (1, 1)) @ table.reshape(-1)
    assert np.allclose(mixed, fd, atol=1e-4)


def test_corner_block_slices():
    assert corner_block((0, 1)) == (slice(0, 2), slice(2, 4))
    table = np.zeros((4, 4, 4))
    table[corner_block((1, 0, 1))] = 1.0
    assert table.sum() == 8
    assert table[3, 0, 3] == 1.0
