"""Smooth B-spline level-set field built from a voxel image by convolution.

The image intensity function is approximated by a uniform cubic B-spline
whose coefficients are local voxel averages weighted by the cardinal
B-spline kernel.  The resulting field is C^2 and provides the boundary
normal (normalized gradient) and curvature (divergence of the unit
normal) used by the boundary-fitting algorithm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import BSpline
from scipy.ndimage import correlate1d

from .image_io import GrayImage

#: gradient magnitudes below this are considered degenerate (fraction of
#: the 8-bit intensity range).
EPS_GRAD = 1e-8 * 255.0


class DegenerateGradientError(ArithmeticError):
    """Raised when a normal/curvature query hits a vanishing gradient."""


class OutsideDomainError(ValueError):
    """Raised when a query point lies outside the image box."""


def kernel_weights(degree: int) -> np.ndarray:
    """Integrals of the centered cardinal B-spline over unit knot spans.

    These are the voxel weights of the convolution: weight i is the mass
    of the degree-p cardinal B-spline over its i-th unit interval.  They
    are symmetric and sum to one.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    knots = np.arange(degree + 2, dtype=float) - (degree + 1) / 2.0
    spline = BSpline.basis_element(knots, extrapolate=False)
    w = np.array(
        [spline.integrate(knots[i], knots[i + 1]) for i in range(degree + 1)]
    )
    assert abs(w.sum() - 1.0) < 1e-13
    return w


def compute_coefficients(img: GrayImage, degree: int = 3) -> "LevelSetField":
    """Convolve the image with the separable B-spline kernel (one pass per
    axis); near the image boundary the weights are renormalized by the
    truncated kernel mass, so a constant image reproduces exactly."""
    w = kernel_weights(degree)
    origin = _kernel_origin(degree)
    num = img.data.astype(float)
    den = np.ones(1)
    den_axes = []
    for axis in range(img.dim):
        num = correlate1d(num, w, axis=axis, mode="constant", cval=0.0, origin=origin)
        ones = np.ones(img.dims[axis])
        den_axes.append(
            correlate1d(ones, w, mode="constant", cval=0.0, origin=origin)
        )
    den = den_axes[0]
    for v in den_axes[1:]:
        den = np.multiply.outer(den, v)
    return LevelSetField(coeff=num / den, degree=degree)


def _kernel_origin(degree: int) -> int:
    # Coefficient j sits at integer grid point j and gathers the voxels
    # [j - (p+1)/2, j + (p+1)/2); with scipy's correlate1d convention the
    # symmetric stencil needs no origin shift for odd degree.
    if degree % 2 == 0:
        raise ValueError("convolution coefficients require odd degree")
    return 0


def _cubic_weights(t: np.ndarray, order: int) -> np.ndarray:
    """Cardinal cubic B-spline (or derivative) at offsets t in (-2, 2)."""
    a = np.abs(t)
    s = np.sign(t)
    inner = a < 1.0
    if order == 0:
        w = np.where(
            inner, 2.0 / 3.0 - a**2 + 0.5 * a**3, ((2.0 - a) ** 3) / 6.0
        )
    elif order == 1:
        w = s * np.where(inner, -2.0 * a + 1.5 * a**2, -0.5 * (2.0 - a) ** 2)
    elif order == 2:
        w = np.where(inner, -2.0 + 3.0 * a, 2.0 - a)
    else:
        raise ValueError("order must be 0, 1 or 2")
    return np.where(a < 2.0, w, 0.0)


@dataclass(frozen=True)
class LevelSetField:
    """Uniform cubic (degree p) B-spline field over the image box.

    Coefficient j sits at integer grid point j; evaluation clamps the
    coefficient grid at the image boundary so that partition of unity
    holds on the whole box.
    """

    coeff: np.ndarray
    degree: int = 3

    @property
    def dims(self) -> tuple:
        return self.coeff.shape

    @property
    def dim(self) -> int:
        return self.coeff.ndim

    @property
    def domain(self) -> tuple:
        return tuple((0.0, float(n)) for n in self.dims)

    def _check_inside(self, pts: np.ndarray) -> None:
        for k, n in enumerate(self.dims):
            if (pts[:, k] < -1e-9).any() or (pts[:, k] > n + 1e-9).any():
                raise OutsideDomainError(
                    f"point outside image box [0, {n}] along axis {k}"
                )

    def _tensor_eval(self, pts: np.ndarray, orders) -> np.ndarray:
        if self.degree != 3:
            raise NotImplementedError("evaluation is implemented for degree 3")
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        self._check_inside(pts)
        d = self.dim
        base = np.floor(pts).astype(int)
        weights = []
        indices = []
        for k in range(d):
            idx = base[:, [k]] + np.arange(-1, 3)
            weights.append(_cubic_weights(pts[:, [k]] - idx, orders[k]))
            indices.append(np.clip(idx, 0, self.dims[k] - 1))
        if d == 2:
            vals = self.coeff[indices[0][:, :, None], indices[1][:, None, :]]
            return np.einsum("nij,ni,nj->n", vals, weights[0], weights[1])
        vals = self.coeff[
            indices[0][:, :, None, None],
            indices[1][:, None, :, None],
            indices[2][:, None, None, :],
        ]
        return np.einsum(
            "nijk,ni,nj,nk->n", vals, weights[0], weights[1], weights[2]
        )

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        """Field value at physical points (voxel units), shape (n,) or scalar."""
        scalar = np.asarray(pts).ndim == 1
        out = self._tensor_eval(pts, (0,) * self.dim)
        return out[0] if scalar else out

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        scalar = np.asarray(pts).ndim == 1
        cols = []
        for k in range(self.dim):
            orders = [0] * self.dim
            orders[k] = 1
            cols.append(self._tensor_eval(pts, orders))
        out = np.stack(cols, axis=-1)
        return out[0] if scalar else out

    def hessian(self, pts: np.ndarray) -> np.ndarray:
        scalar = np.asarray(pts).ndim == 1
        d = self.dim
        n = np.atleast_2d(pts).shape[0]
        out = np.empty((n, d, d))
        for i in range(d):
            for j in range(i, d):
                orders = [0] * d
                orders[i] += 1
                orders[j] += 1
                out[:, i, j] = out[:, j, i] = self._tensor_eval(pts, orders)
        return out[0] if scalar else out

    def normal(self, pts: np.ndarray) -> np.ndarray:
        """Unit normal of the contour, pointing from low toward high values."""
        g = np.atleast_2d(self.gradient(pts))
        norms = np.linalg.norm(g, axis=1)
        if (norms <= EPS_GRAD).any():
            raise DegenerateGradientError("gradient magnitude below threshold")
        out = g / norms[:, None]
        return out[0] if np.asarray(pts).ndim == 1 else out

    def curvature(self, pts: np.ndarray) -> np.ndarray:
        """Divergence of the unit normal field.

        Equals the contour curvature in 2D and the sum of the two
        principal curvatures in 3D.
        """
        scalar = np.asarray(pts).ndim == 1
        g = np.atleast_2d(self.gradient(pts))
        h = self.hessian(pts) if not scalar else self.hessian(np.atleast_2d(pts))
        norms = np.linalg.norm(g, axis=1)
        if (norms <= EPS_GRAD).any():
            raise DegenerateGradientError("gradient magnitude below threshold")
        lap = np.trace(h, axis1=1, axis2=2)
        ghg = np.einsum("ni,nij,nj->n", g, h, g)
        kappa = (lap * norms**2 - ghg) / norms**3
        return kappa[0] if scalar else kappa

    def dump(self, path) -> None:
        """Debug dump: RAW float64 coefficients plus a JSON header."""
        path = Path(path)
        path.write_bytes(self.coeff.T.astype("<f8").tobytes())
        path.with_suffix(".json").write_text(
            json.dumps({"dims": list(self.dims), "degree": self.degree, "dtype": "<f8"})
        )
