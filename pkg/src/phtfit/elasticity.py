"""Isogeometric linear elasticity on the active elements of a PHT mesh.

Galerkin assembly runs over the Bezier-extracted active elements only;
inactive elements and basis functions supported exclusively on them never
enter the system.  Closed-form benchmark fields (plate with a circular
hole under remote uniaxial tension, infinite medium with a spherical
hole) provide Neumann data and energy-norm reference stresses for the
convergence studies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bernstein import NB, eval_table, tensor_rows
from .pht_mesh import PHTMesh

REGIMES = ("plane-stress", "plane-strain", "3d")

#: Voigt component pairs per spatial dimension (engineering shear).
VOIGT = {
    2: ((0, 0), (1, 1), (0, 1)),
    3: ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)),
}


class JacobianError(RuntimeError):
    """Non-positive geometry Jacobian at a quadrature point."""


@dataclass(frozen=True)
class Material:
    """Linear isotropic elastic material."""

    E: float
    nu: float
    regime: str = "plane-stress"

    def __post_init__(self):
        if self.E <= 0.0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError("Poisson's ratio must lie in (-1, 0.5)")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")

    @property
    def dim(self) -> int:
        return 3 if self.regime == "3d" else 2

    def stiffness(self) -> np.ndarray:
        """Voigt stiffness matrix mapping engineering strain to stress."""
        E, nu = self.E, self.nu
        if self.regime == "plane-stress":
            c = E / (1.0 - nu**2)
            return c * np.array(
                [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]
            )
        if self.regime == "plane-strain":
            c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
            return c * np.array(
                [
                    [1.0 - nu, nu, 0.0],
                    [nu, 1.0 - nu, 0.0],
                    [0.0, 0.0, (1.0 - 2.0 * nu) / 2.0],
                ]
            )
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        mu = E / (2.0 * (1.0 + nu))
        C = np.zeros((6, 6))
        C[:3, :3] = lam
        C[np.diag_indices(3)] = lam + 2.0 * mu
        C[3:, 3:] = mu * np.eye(3)
        return C

    def compliance(self) -> np.ndarray:
        return np.linalg.inv(self.stiffness())


def gauss_rule(order: int):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return (x + 1.0) / 2.0, w / 2.0


def _tensor_quadrature(dim: int, order: int):
    x, w = gauss_rule(order)
    pts = np.stack(
        np.meshgrid(*[x] * dim, indexing="ij"), axis=-1
    ).reshape(-1, dim)
    wts = np.ones(len(pts))
    grids = np.meshgrid(*[w] * dim, indexing="ij")
    for g in grids:
        wts *= g.ravel()
    return pts, wts


@dataclass
class LinearSystem:
    """Assembled stiffness with the active-function numbering."""

    K: sp.csr_matrix
    mesh: PHTMesh
    mat: Material
    dof_of: dict  # fid -> function index
    fids: list
    quad_order: int
    op_count: int = 0

    @property
    def n_funcs(self) -> int:
        return len(self.fids)

    @property
    def ndof(self) -> int:
        return self.n_funcs * self.mesh.dim

    def element_data(self, e, pts_local: np.ndarray):
        """Geometry and basis data of an element at unit-cube points.

        Returns (phys, detJ, grads, fids) where grads[q, f, :] is the
        physical gradient of function f at point q and detJ the geometry
        Jacobian determinant with respect to the local coordinates.
        """
        d = self.mesh.dim
        net = self.mesh.element_net(e)
        jac = np.empty((len(pts_local), d, d))
        rows0 = tensor_rows(pts_local, (0,) * d)
        net_flat = net.reshape(NB**d, d)
        phys = rows0 @ net_flat
        fids_e = sorted(e.funcs)
        flat = np.stack([e.funcs[fid].reshape(-1) for fid in fids_e])
        dloc = np.empty((len(pts_local), len(fids_e), d))
        for k in range(d):
            dv = [0] * d
            dv[k] = 1
            rows = tensor_rows(pts_local, tuple(dv))
            jac[:, :, k] = rows @ net_flat
            dloc[:, :, k] = rows @ flat.T
        det = np.linalg.det(jac)
        grads = dloc @ np.linalg.inv(jac).transpose(0, 2, 1)
        return phys, det, grads, fids_e

    def strain_displacement(self, grads: np.ndarray) -> np.ndarray:
        """B matrices, shape (nq, n_voigt, nf * dim), engineering shear."""
        nq, nf, d = grads.shape
        pairs = VOIGT[d]
        B = np.zeros((nq, len(pairs), nf * d))
        for v, (i, j) in enumerate(pairs):
            if i == j:
                B[:, v, i::d] = grads[:, :, i]
            else:
                B[:, v, i::d] = grads[:, :, j]
                B[:, v, j::d] = grads[:, :, i]
        return B

    def element_dof_indices(self, fids_e) -> np.ndarray:
        d = self.mesh.dim
        base = np.array([self.dof_of[f] for f in fids_e]) * d
        return (base[:, None] + np.arange(d)).ravel()


def assemble(mesh: PHTMesh, mat: Material, quad_order: int = NB) -> LinearSystem:
    """Stiffness matrix over the active elements by Gauss quadrature."""
    d = mesh.dim
    if mat.dim != d:
        raise ValueError("material regime does not match the mesh dimension")
    active = mesh.active_leaves()
    fids = sorted({fid for e in active for fid in e.funcs})
    dof_of = {fid: i for i, fid in enumerate(fids)}
    system = LinearSystem(
        K=None, mesh=mesh, mat=mat, dof_of=dof_of, fids=fids,
        quad_order=quad_order,
    )
    pts, wts = _tensor_quadrature(d, quad_order)
    C = mat.stiffness()
    rows, cols, vals = [], [], []
    for e in active:
        _, det, grads, fids_e = system.element_data(e, pts)
        if det.min() <= 0.0:
            raise JacobianError(
                f"element {e.eid} has a non-positive Jacobian at a "
                f"quadrature point (min det {det.min():.3e})"
            )
        B = system.strain_displacement(grads)
        scale = wts * det
        BtC = B.transpose(0, 2, 1) @ C
        Ke = np.einsum("q,qiv,qvj->ij", scale, BtC, B, optimize=True)
        idx = system.element_dof_indices(fids_e)
        system.op_count += len(pts) * len(idx) ** 2
        rows.append(np.repeat(idx, len(idx)))
        cols.append(np.tile(idx, len(idx)))
        vals.append(Ke.ravel())
    n = system.ndof
    if rows:
        K = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsr()
    else:
        K = sp.csr_matrix((n, n))
    system.K = K
    return system


def box_face_constraints(system: LinearSystem, axis: int, side: int,
                         component: int, value: float = 0.0) -> dict:
    """Fix one displacement component on a face of the parametric box.

    Only the basis functions whose trace on the face is nonzero are
    constrained: those anchored at face vertices with the member bit
    along `axis` pointing onto the face.  Functions carrying the normal
    derivative vanish on the face and stay free, so symmetry conditions
    do not overconstrain the normal strain.
    """
    mesh = system.mesh
    plane = mesh.domain[axis][side]
    d = mesh.dim
    out = {}
    for fid in system.fids:
        fn = mesh.basis[fid]
        if fn.vertex[axis] == plane and fn.bits[axis] == side:
            out[system.dof_of[fid] * d + component] = value
    return out


def interpolate_linear(system: LinearSystem, A, b) -> np.ndarray:
    """Coefficients reproducing the linear field u(x) = A x + b exactly.

    The basis forms a partition of unity and the control points reproduce
    the identity map, so u_f = A c_f + b interpolates linear fields.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    ctrl = np.array([system.mesh.basis[fid].control for fid in system.fids])
    return ctrl @ A.T + b


def boundary_coefficient_constraints(system: LinearSystem, coeffs: np.ndarray) -> dict:
    """Dirichlet data pinning every box-boundary function to given coefficients."""
    mesh = system.mesh
    d = mesh.dim
    out = {}
    for i, fid in enumerate(system.fids):
        fn = mesh.basis[fid]
        on_boundary = any(
            fn.vertex[k] in mesh.domain[k] for k in range(d)
        )
        if on_boundary:
            for a in range(d):
                out[i * d + a] = float(coeffs[i, a])
    return out


def neumann_box_load(system: LinearSystem, traction, faces) -> np.ndarray:
    """Consistent load vector from tractions on outer box faces.

    faces is a sequence of (axis, side); traction(points, normals) maps
    physical face points and outward unit normals to traction vectors.
    The surface measure and normal come from the cofactor of the geometry
    Jacobian (Nanson's formula), so fitted faces integrate correctly.
    """
    mesh = system.mesh
    d = mesh.dim
    F = np.zeros(system.ndof)
    x1, w1 = gauss_rule(system.quad_order)
    for axis, side in faces:
        plane = mesh.domain[axis][side]
        for e in mesh.active_leaves():
            bound = e.hi[axis] if side else e.lo[axis]
            if bound != plane:
                continue
            others = [k for k in range(d) if k != axis]
            if d == 2:
                local = np.empty((len(x1), 2))
                local[:, axis] = float(side)
                local[:, others[0]] = x1
                wts = w1.copy()
            else:
                a, bgrid = np.meshgrid(x1, x1, indexing="ij")
                local = np.empty((a.size, 3))
                local[:, axis] = float(side)
                local[:, others[0]] = a.ravel()
                local[:, others[1]] = bgrid.ravel()
                wts = np.outer(w1, w1).ravel()
            phys, det, _, fids_e = system.element_data(e, local)
            net = mesh.element_net(e)
            jac = np.empty((len(local), d, d))
            for k in range(d):
                dv = [0] * d
                dv[k] = 1
                jac[:, :, k] = eval_table(net, local, tuple(dv))
            cof = np.linalg.det(jac)[:, None, None] * np.linalg.inv(jac).transpose(0, 2, 1)
            sign = 1.0 if side else -1.0
            nvec = sign * cof[:, :, axis]
            area = np.linalg.norm(nvec, axis=1)
            nhat = nvec / area[:, None]
            trac = np.asarray(traction(phys, nhat), dtype=float)
            rows0 = tensor_rows(local, (0,) * d)
            flat = np.stack([e.funcs[fid].reshape(-1) for fid in fids_e])
            N = rows0 @ flat.T
            contrib = np.einsum("q,qf,qa->fa", wts * area, N, trac)
            idx = system.element_dof_indices(fids_e).reshape(-1, d)
            np.add.at(F, idx, contrib)
    return F


def solve_system(system: LinearSystem, dirichlet: dict,
                 neumann: np.ndarray | None = None) -> np.ndarray:
    """Direct sparse solve; returns coefficients of shape (n_funcs, dim)."""
    n = system.ndof
    F = np.zeros(n) if neumann is None else np.asarray(neumann, dtype=float)
    u = np.zeros(n)
    fixed = np.zeros(n, dtype=bool)
    for dof, val in dirichlet.items():
        fixed[dof] = True
        u[dof] = val
    free = ~fixed
    if not free.any():
        return u.reshape(-1, system.mesh.dim)
    K = system.K
    rhs = F[free] - K[np.ix_(free, fixed)] @ u[fixed]
    Kff = K[np.ix_(free, free)].tocsc()
    sol = spla.spsolve(Kff, rhs)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError(
            "singular stiffness system: constraints leave rigid modes"
        )
    res = np.linalg.norm(Kff @ sol - rhs)
    ref = max(np.linalg.norm(rhs), 1e-300)
    if res > 1e-8 * ref:
        raise np.linalg.LinAlgError(
            f"sparse solve residual too large ({res / ref:.3e} relative)"
        )
    u[free] = sol
    return u.reshape(-1, system.mesh.dim)


def element_stress(system: LinearSystem, u: np.ndarray, e,
                   pts_local: np.ndarray):
    """Physical points and Voigt stresses of one element at local points."""
    phys, det, grads, fids_e = system.element_data(e, pts_local)
    C = system.mat.stiffness()
    ue = u[[system.dof_of[f] for f in fids_e]]
    B = system.strain_displacement(grads)
    strain = B @ ue.reshape(-1)
    return phys, strain @ C.T, det


def energy_norm_error(system: LinearSystem, u: np.ndarray, exact_stress,
                      quad_order: int | None = None) -> float:
    """Energy norm of the stress mismatch over the active elements.

    exact_stress(points) returns Cartesian Voigt stresses at physical
    points; the error is sqrt(int (s_h - s_ex) : C^-1 : (s_h - s_ex)).
    """
    mesh = system.mesh
    order = quad_order or system.quad_order
    pts, wts = _tensor_quadrature(mesh.dim, order)
    Cinv = system.mat.compliance()
    total = 0.0
    for e in mesh.active_leaves():
        phys, sig, det = element_stress(system, u, e, pts)
        diff = sig - np.asarray(exact_stress(phys), dtype=float)
        dens = np.einsum("qv,vw,qw->q", diff, Cinv, diff)
        total += float(np.sum(wts * det * dens))
    return float(np.sqrt(max(total, 0.0)))


def energy_norm(system: LinearSystem, u: np.ndarray) -> float:
    """Energy norm of a discrete solution, sqrt(u^T K u)."""
    flat = u.reshape(-1)
    return float(np.sqrt(max(flat @ (system.K @ flat), 0.0)))


# --------------------------------------------------------------- benchmarks


def exact_plate_stress(r, theta, sigma_inf: float, R: float):
    """Polar stresses of the infinite plate with a circular hole.

    Remote uniaxial tension sigma_inf along theta = 0; hole radius R.
    Returns (sigma_rr, sigma_tt, sigma_rt) broadcast over the inputs.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(r < R * (1.0 - 1e-12)):
        raise ValueError("plate solution is defined for r >= R only")
    q = (R / r) ** 2
    q2 = q * q
    c2, s2 = np.cos(2.0 * theta), np.sin(2.0 * theta)
    s_rr = 0.5 * sigma_inf * (1.0 - q) + 0.5 * sigma_inf * (
        1.0 - 4.0 * q + 3.0 * q2
    ) * c2
    s_tt = 0.5 * sigma_inf * (1.0 + q) - 0.5 * sigma_inf * (1.0 + 3.0 * q2) * c2
    s_rt = -0.5 * sigma_inf * (1.0 + 2.0 * q - 3.0 * q2) * s2
    return s_rr, s_tt, s_rt


def exact_sphere_stress(Rc, beta, sigma_inf: float, a: float, nu: float):
    """Spherical-coordinate stresses of the medium with a spherical hole.

    Remote uniaxial tension sigma_inf along the polar axis (beta measured
    from it); hole radius a.  Returns (sigma_RR, sigma_tt, sigma_bb,
    sigma_Rb).  The published closed form mixes an a^2/R^5 factor into
    the radial component where dimensional reasoning suggests a^5/R^5; it
    is transcribed as printed (exact for a = 1, which all drivers use)
    and validated through its far-field and traction-free limits.
    """
    Rc = np.asarray(Rc, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(Rc < a * (1.0 - 1e-12)):
        raise ValueError("sphere solution is defined for R >= a only")
    c2 = np.cos(beta) ** 2
    fac = 1.0 / (7.0 - 5.0 * nu)
    r3 = (a / Rc) ** 3
    r5_mixed = a**2 / Rc**5
    r5 = (a / Rc) ** 5
    s_RR = sigma_inf * c2 + sigma_inf * fac * (
        r3 * (6.0 - 5.0 * (5.0 - nu) * c2) + 6.0 * r5_mixed * (3.0 * c2 - 1.0)
    )
    s_tt = 1.5 * sigma_inf * fac * (
        r3 * (5.0 * nu - 2.0 + 5.0 * (1.0 - 2.0 * nu) * c2)
        + r5 * (1.0 - 5.0 * c2)
    )
    s_bb = sigma_inf * (1.0 - c2) + 0.5 * sigma_inf * fac * (
        r3 * (4.0 - 5.0 * nu + 5.0 * (1.0 - 2.0 * nu) * c2)
        + 3.0 * r5 * (3.0 - 7.0 * c2)
    )
    s_Rb = (
        sigma_inf
        * (-1.0 + fac * (-5.0 * r3 * (1.0 + nu) + 12.0 * r5))
        * np.sin(beta)
        * np.cos(beta)
    )
    return s_RR, s_tt, s_bb, s_Rb


@dataclass(frozen=True)
class BenchmarkSolution:
    """Closed-form stress field of one benchmark, in Cartesian Voigt form.

    kind 'plate-with-hole': hole of radius R at the origin, tension along
    x.  kind 'spherical-hole': hole of radius R at the origin, tension
    along z (requires nu).  Points closer to the origin than R are
    evaluated at the hole boundary: the exact field is only defined
    outside the hole, and unfitted boundary elements overlap it slightly.
    """

    kind: str
    sigma_inf: float
    R: float
    nu: float = 0.3

    def __post_init__(self):
        if self.kind not in ("plate-with-hole", "spherical-hole"):
            raise ValueError(f"unknown benchmark {self.kind!r}")

    def stress(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "plate-with-hole":
            return self._plate(pts)
        return self._sphere(pts)

    def _plate(self, pts: np.ndarray) -> np.ndarray:
        r = np.maximum(np.linalg.norm(pts, axis=1), self.R)
        theta = np.arctan2(pts[:, 1], pts[:, 0])
        s_rr, s_tt, s_rt = exact_plate_stress(r, theta, self.sigma_inf, self.R)
        c, s = np.cos(theta), np.sin(theta)
        sxx = s_rr * c**2 + s_tt * s**2 - 2.0 * s_rt * s * c
        syy = s_rr * s**2 + s_tt * c**2 + 2.0 * s_rt * s * c
        sxy = (s_rr - s_tt) * s * c + s_rt * (c**2 - s**2)
        return np.stack([sxx, syy, sxy], axis=1)

    def _sphere(self, pts: np.ndarray) -> np.ndarray:
        Rc = np.maximum(np.linalg.norm(pts, axis=1), self.R)
        rho = np.linalg.norm(pts[:, :2], axis=1)
        beta = np.arctan2(rho, pts[:, 2])
        theta = np.arctan2(pts[:, 1], pts[:, 0])
        s_RR, s_tt, s_bb, s_Rb = exact_sphere_stress(
            Rc, beta, self.sigma_inf, self.R, self.nu
        )
        sb, cb = np.sin(beta), np.cos(beta)
        st, ct = np.sin(theta), np.cos(theta)
        eR = np.stack([sb * ct, sb * st, cb], axis=1)
        eb = np.stack([cb * ct, cb * st, -sb], axis=1)
        et = np.stack([-st, ct, np.zeros_like(st)], axis=1)
        tens = (
            s_RR[:, None, None] * eR[:, :, None] * eR[:, None, :]
            + s_bb[:, None, None] * eb[:, :, None] * eb[:, None, :]
            + s_tt[:, None, None] * et[:, :, None] * et[:, None, :]
            + s_Rb[:, None, None]
            * (eR[:, :, None] * eb[:, None, :] + eb[:, :, None] * eR[:, None, :])
        )
        out = np.empty((len(pts), 6))
        for v, (i, j) in enumerate(VOIGT[3]):
            out[:, v] = tens[:, i, j]
        return out

    def traction(self, points: np.ndarray, normals: np.ndarray) -> np.ndarray:
        """Traction vectors sigma . n at physical points."""
        sig = self.stress(points)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        nrm = np.atleast_2d(np.asarray(normals, dtype=float))
        d = pts.shape[1]
        out = np.zeros_like(nrm)
        for v, (i, j) in enumerate(VOIGT[d]):
            out[:, i] += sig[:, v] * nrm[:, j]
            if i != j:
                out[:, j] += sig[:, v] * nrm[:, i]
        return out
