"""Independent oracles the tests check the package against.

Everything here is deliberately written the slow, obvious way and shares no
code with the package: its own Rodrigues rotation, its own scalar projection,
dense Jacobian matrices assembled observation by observation, and dense normal
equations reduced with plain numpy.
"""
from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------------------
# reference projection (scalar, own rotation formula)
# ---------------------------------------------------------------------------


def rotate_reference(w, x):
    """Rodrigues rotation of a single point, independent of the package."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    theta = math.sqrt(float(w @ w))
    if theta < 1e-14:
        return x + np.cross(w, x) + 0.5 * np.cross(w, np.cross(w, x))
    axis = w / theta
    c, s = math.cos(theta), math.sin(theta)
    return c * x + s * np.cross(axis, x) + (1.0 - c) * (axis @ x) * axis


def project_reference(cam9, point):
    """Scalar reference projection for one camera parameter vector."""
    P = rotate_reference(cam9[0:3], point) + np.asarray(cam9[3:6], dtype=float)
    p = -P[0:2] / P[2]
    s = float(p @ p)
    d = 1.0 + cam9[7] * s + cam9[8] * s * s
    return cam9[6] * d * p


def residual_reference(cam9, point, pixel):
    return project_reference(cam9, point) - np.asarray(pixel, dtype=float)


# ---------------------------------------------------------------------------
# finite-difference Jacobians in the same local parameterization
# ---------------------------------------------------------------------------


def _exp_rotvec(delta):
    """Rotation matrix of a small axis-angle vector (reference implementation)."""
    return np.column_stack([rotate_reference(delta, e) for e in np.eye(3)])


def _rotvec_matrix(w):
    return np.column_stack([rotate_reference(w, e) for e in np.eye(3)])


def _perturb_camera_tangent(cam9, i, h):
    """cam9 with tangent coordinate i moved by h; rotation composes on the right."""
    out = np.array(cam9, dtype=float)
    if i < 3:
        delta = np.zeros(3)
        delta[i] = h
        R = _rotvec_matrix(cam9[0:3]) @ _exp_rotvec(delta)
        out[0:3] = _matrix_to_rotvec(R)
    else:
        out[i] += h
    return out


def _matrix_to_rotvec(R):
    """Log map, reference implementation (theta in [0, pi])."""
    c = (np.trace(R) - 1.0) / 2.0
    c = min(1.0, max(-1.0, c))
    theta = math.acos(c)
    if theta < 1e-10:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta > math.pi - 1e-6:
        # near pi take the axis from the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        axis[1] = math.copysign(axis[1], A[0, 1] * axis[0]) if axis[0] > 0.5 else axis[1]
        axis[2] = math.copysign(axis[2], A[0, 2] * axis[0]) if axis[0] > 0.5 else \
            math.copysign(axis[2], A[1, 2] * axis[1])
        axis /= np.linalg.norm(axis)
        return theta * axis
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * math.sin(theta)) * axis


def numeric_jacobians(cam9, point, pixel, h_scale=1e-6):
    """Central finite differences of the residual, (2, 9) and (2, 3).

    Camera tangent coordinates 0..2 perturb the rotation by right-multiplied
    increments, matching the analytic parameterization. Steps scale with the
    parameter magnitude.
    """
    j_pose = np.empty((2, 9))
    for i in range(9):
        h = h_scale * max(1.0, abs(cam9[i]) if i >= 3 else 1.0)
        f_plus = residual_reference(_perturb_camera_tangent(cam9, i, h), point, pixel)
        f_minus = residual_reference(_perturb_camera_tangent(cam9, i, -h), point, pixel)
        j_pose[:, i] = (f_plus - f_minus) / (2.0 * h)
    j_point = np.empty((2, 3))
    for i in range(3):
        h = h_scale * max(1.0, abs(point[i]))
        pp = np.array(point, dtype=float)
        pm = np.array(point, dtype=float)
        pp[i] += h
        pm[i] -= h
        j_point[:, i] = (residual_reference(cam9, pp, pixel)
                         - residual_reference(cam9, pm, pixel)) / (2.0 * h)
    return j_pose, j_point


# ---------------------------------------------------------------------------
# dense normal equations (independent assembly path)
# ---------------------------------------------------------------------------


def analytic_jacobian_fn(cam9, point, pixel):
    """Package Jacobians behind the oracle interface.

    For oracles that should differ from the package only in how the normal
    equations are assembled, not in the derivatives themselves (the derivatives
    have their own finite-difference tests).
    """
    from powerba.bal_io import CameraParams
    from powerba.camera import residual_and_jacobians

    _, jac = residual_and_jacobians(CameraParams.from_array(cam9), point, pixel)
    return jac.j_pose, jac.j_point


class DenseNormalEquations:
    """Explicit J, r and every block of the damped normal equations."""

    def __init__(self, problem, state=None, lam=1e-4, jacobian_fn=None):
        cams = (state.camera_params if state is not None else problem.camera_params)
        pts = (state.points if state is not None else problem.points)
        n_p, n_l = problem.n_cameras, problem.n_points
        n_obs = problem.n_observations
        jacobian_fn = jacobian_fn or numeric_jacobians

        J = np.zeros((2 * n_obs, 9 * n_p + 3 * n_l))
        r = np.zeros(2 * n_obs)
        for i in range(n_obs):
            c = int(problem.cam_indices[i])
            p = int(problem.pt_indices[i])
            rows = slice(2 * i, 2 * i + 2)
            r[rows] = residual_reference(cams[c], pts[p], problem.pixels[i])
            j_pose, j_point = jacobian_fn(cams[c], pts[p], problem.pixels[i])
            J[rows, 9 * c:9 * c + 9] = j_pose
            J[rows, 9 * n_p + 3 * p:9 * n_p + 3 * p + 3] = j_point

        H = J.T @ J
        d = np.sqrt(np.clip(np.diag(H), 1e-12, 1e12))
        H_damped = H + lam * np.diag(d * d)
        b = J.T @ r

        self.n_p, self.n_l = n_p, n_l
        self.J, self.r = J, r
        self.H = H_damped
        self.U = H_damped[: 9 * n_p, : 9 * n_p]
        self.V = H_damped[9 * n_p:, 9 * n_p:]
        self.W = H_damped[: 9 * n_p, 9 * n_p:]
        self.b_p = b[: 9 * n_p]
        self.b_l = b[9 * n_p:]
        self.D_p = d[: 9 * n_p]
        self.D_l = d[9 * n_p:]

    @property
    def V_inv(self):
        return np.linalg.inv(self.V)

    @property
    def schur(self):
        return self.U - self.W @ self.V_inv @ self.W.T

    @property
    def b_tilde(self):
        return self.b_p - self.W @ self.V_inv @ self.b_l

    def solve(self):
        """(delta_p, delta_l) from the dense damped normal equations."""
        delta = np.linalg.solve(self.H, -np.concatenate([self.b_p, self.b_l]))
        return delta[: 9 * self.n_p], delta[9 * self.n_p:]

    @property
    def iteration_matrix(self):
        return np.linalg.inv(self.U) @ self.W @ self.V_inv @ self.W.T


# ---------------------------------------------------------------------------
# gauge-free random block systems
# ---------------------------------------------------------------------------


def random_block_system(seed, n_cameras=None, n_points=None, lam=1e-2,
                        anchor_obs=5, anchor_scale=3.0, precision=64):
    """A random damped system with no gauge nullspace.

    Dense camera-point visibility with N(0,1) Jacobian entries, plus a few
    pose-prior rows per camera (zero point Jacobian) that keep U well separated
    from W V^-1 W^T. The series solve then converges at a rate essentially
    independent of lambda, which real camera geometry cannot offer: its global
    rotation/translation/scale invariance pins the spectral radius of the
    iteration operator to roughly 1/(1+lambda).
    """
    from powerba import blocks

    rng = np.random.default_rng(seed)
    if n_cameras is None:
        n_cameras = int(rng.integers(2, 11))
    if n_points is None:
        n_points = int(rng.integers(8, 51))
    cam_idx = list(np.repeat(np.arange(n_cameras), n_points))
    pt_idx = list(np.tile(np.arange(n_points), n_cameras))
    n_vis = len(cam_idx)
    j_pose = [rng.normal(size=(n_vis, 2, 9))]
    j_point = [rng.normal(size=(n_vis, 2, 3))]
    res = [rng.normal(size=(n_vis, 2))]
    for c in range(n_cameras):
        cam_idx.extend([c] * anchor_obs)
        pt_idx.extend(int(rng.integers(n_points)) for _ in range(anchor_obs))
        j_pose.append(anchor_scale * rng.normal(size=(anchor_obs, 2, 9)))
        j_point.append(np.zeros((anchor_obs, 2, 3)))
        res.append(rng.normal(size=(anchor_obs, 2)))
    lin = blocks.assemble_from_observations(
        cam_idx, pt_idx, np.concatenate(j_pose), np.concatenate(j_point),
        np.concatenate(res), n_cameras, n_points, precision=precision)
    return lin.damp(lam)


def dense_from_system(system):
    """(U, S, b_tilde, P) of a DampedSystem as explicit dense matrices."""
    from powerba import solvers

    n = system.b_p.shape[0]
    n_cameras = n // 9
    S = solvers.materialize_schur(system)
    U = np.zeros((n, n))
    for c in range(n_cameras):
        U[9 * c:9 * c + 9, 9 * c:9 * c + 9] = system.U[c]
    P = np.linalg.solve(U, U - S)
    return U, S, np.asarray(system.b_tilde(), dtype=float), P


# ---------------------------------------------------------------------------
# duck-typed miniature system for series-level arithmetic checks
# ---------------------------------------------------------------------------


class MiniSystem:
    """Arbitrary dense (U, W, V, b) exposed through the block-operator surface.

    Dimensions are free, so scalar analogues of the series solve are one-liners.
    """

    def __init__(self, U, W, V, b_p, b_l):
        self.U = np.atleast_2d(np.asarray(U, dtype=float))
        self.W = np.atleast_2d(np.asarray(W, dtype=float))
        self.V = np.atleast_2d(np.asarray(V, dtype=float))
        self.b_p = np.atleast_1d(np.asarray(b_p, dtype=float))
        self.b_l = np.atleast_1d(np.asarray(b_l, dtype=float))
        self._U_inv = np.linalg.inv(self.U)
        self._V_inv = np.linalg.inv(self.V)

    @property
    def n_pose_params(self):
        return self.U.shape[0]

    def apply_u_inv(self, v):
        return self._U_inv @ v

    def apply_v_inv(self, v):
        return self._V_inv @ v

    def apply_w(self, v):
        return self.W @ v

    def apply_wt(self, v):
        return self.W.T @ v

    def apply_u(self, v):
        return self.U @ v

    def apply_schur(self, v):
        return self.U @ v - self.W @ (self._V_inv @ (self.W.T @ v))

    def b_tilde(self):
        return self.b_p - self.W @ (self._V_inv @ self.b_l)
