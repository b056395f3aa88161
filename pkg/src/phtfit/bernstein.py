"""Cubic Bernstein utilities shared by the mesh, template and solver code.

Everything in the hierarchical mesh is stored as per-element Bezier
ordinates, so evaluation, differentiation and midpoint subdivision of
cubic Bernstein tensor products are the workhorse operations.
"""

from __future__ import annotations

import itertools

import numpy as np

DEG = 3
NB = DEG + 1

# Midpoint de Casteljau subdivision matrices: the left/right half of a cubic
# with coefficients c is represented by SUB_LEFT @ c / SUB_RIGHT @ c.
SUB_LEFT = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.5, 0.5, 0.0, 0.0],
        [0.25, 0.5, 0.25, 0.0],
        [0.125, 0.375, 0.375, 0.125],
    ]
)
SUB_RIGHT = SUB_LEFT[::-1, ::-1].copy()


def bernstein_values(t):
    """Values of the four cubic Bernstein polynomials at t (any shape)."""
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    return np.stack([s**3, 3.0 * s**2 * t, 3.0 * s * t**2, t**3], axis=-1)


def bernstein_derivs(t):
    """First derivatives of the cubic Bernstein polynomials at t."""
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    return np.stack(
        [
            -3.0 * s**2,
            3.0 * s**2 - 6.0 * s * t,
            6.0 * s * t - 3.0 * t**2,
            3.0 * t**2,
        ],
        axis=-1,
    )


def bernstein_second_derivs(t):
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    return np.stack(
        [6.0 * s, 6.0 * t - 12.0 * s, 6.0 * s - 12.0 * t, 6.0 * t], axis=-1
    )


def subdivide(table: np.ndarray, halves) -> np.ndarray:
    """Midpoint-subdivide a (4,)*d ordinate table.

    halves[k] selects the lower (0) or upper (1) half along axis k.
    Extra trailing axes (e.g. a point dimension) are left untouched.
    """
    out = table
    for axis, half in enumerate(halves):
        mat = SUB_LEFT if half == 0 else SUB_RIGHT
        out = np.tensordot(mat, out, axes=([1], [axis]))
        out = np.moveaxis(out, 0, axis)
    return out


def tensor_rows(points: np.ndarray, derivs) -> np.ndarray:
    """Rows of tensor Bernstein data for a batch of points in [0,1]^d.

    points has shape (n, d); derivs[k] in {0,1,2} is the derivative order
    requested along axis k.  Returns an (n, 4**d) array whose dot product
    with a flattened (C-order) ordinate table evaluates the requested
    mixed derivative.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[1]
    funcs = (bernstein_values, bernstein_derivs, bernstein_second_derivs)
    rows = None
    for k in range(d):
        fac = funcs[derivs[k]](points[:, k])
        rows = fac if rows is None else (rows[:, :, None] * fac[:, None, :]).reshape(
            points.shape[0], -1
        )
    return rows


def eval_table(table: np.ndarray, points: np.ndarray, derivs=None) -> np.ndarray:
    """Evaluate a (4,)*d (+ optional trailing value axes) table at unit points."""
    d = int(np.atleast_2d(points).shape[1])
    if derivs is None:
        derivs = (0,) * d
    rows = tensor_rows(points, derivs)
    flat = table.reshape(NB**d, -1)
    out = rows @ flat
    if table.ndim == d:
        return out[:, 0]
    return out.reshape(rows.shape[0], *table.shape[d:])


def corner_block(corner_bits) -> tuple:
    """Index expression of the 2^d ordinate block tied to a corner's data.

    For a C^1 cubic, the value / first / mixed derivatives at a corner are
    carried by the two ordinates nearest that corner along each axis.
    """
    slices = [slice(0, 2) if b == 0 else slice(2, 4) for b in corner_bits]
    return tuple(slices)


def corner_multi_indices(d: int):
    return list(itertools.product((0, 1), repeat=d))
