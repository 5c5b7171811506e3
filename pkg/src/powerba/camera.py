"""Projection model and its analytic Jacobians.

A point X is taken to the camera frame by P = R(w) X + t with w an axis-angle
rotation vector, projected to the plane as p = -(P_x, P_y) / P_z, distorted
radially with d = 1 + k1 |p|^2 + k2 |p|^4, and scaled: proj = focal * d * p.
The residual of an observation is proj - observed_pixel.

Rotation derivatives are taken in the local tangent of a right-multiplied
increment, R(w) Exp(delta), giving dP/ddelta = -R [X]_x. State updates must
compose rotations the same way (see :func:`powerba.lm.apply_update`).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .bal_io import CameraParams

# Observations with |P_z| below this are degenerate and get flagged invalid.
MIN_PROJECTED_DEPTH = 1e-12

POSE_DIM = 9
POINT_DIM = 3


@dataclass(frozen=True)
class Residual:
    """A 2-vector reprojection residual with a validity flag.

    Invalid observations (zero projected depth) carry a zero value so they drop
    out of the normal equations instead of poisoning them with NaN.
    """

    value: np.ndarray
    valid: bool = True


@dataclass(frozen=True)
class ObservationJacobians:
    """Per-observation Jacobians: j_pose is 2x9 (tangent order: rotation,
    translation, focal, k1, k2), j_point is 2x3."""

    j_pose: np.ndarray
    j_point: np.ndarray


def rotation_matrices(rotvecs: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (n, 3) to rotation matrices (n, 3, 3)."""
    return Rotation.from_rotvec(np.atleast_2d(rotvecs)).as_matrix()


def _skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for rows of v: _skew(v)[i] @ x == cross(v[i], x)."""
    n = v.shape[0]
    s = np.zeros((n, 3, 3))
    s[:, 0, 1] = -v[:, 2]
    s[:, 0, 2] = v[:, 1]
    s[:, 1, 0] = v[:, 2]
    s[:, 1, 2] = -v[:, 0]
    s[:, 2, 0] = -v[:, 1]
    s[:, 2, 1] = v[:, 0]
    return s


def evaluate(cam_params: np.ndarray, points: np.ndarray, pixels: np.ndarray | None,
             with_jacobians: bool):
    """Vectorized model evaluation for parallel observation arrays.

    Args:
        cam_params: (n, 9) camera parameters, one row per observation.
        points: (n, 3) world points, one row per observation.
        pixels: (n, 2) observed pixels, or None to return bare projections.
        with_jacobians: also return the 2x9 pose and 2x3 point Jacobians.

    Returns:
        (res, valid) or (res, j_pose, j_point, valid). Rows flagged invalid are
        zeroed everywhere.
    """
    cam_params = np.atleast_2d(np.asarray(cam_params, dtype=np.float64))
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = cam_params.shape[0]

    R = rotation_matrices(cam_params[:, 0:3])
    t = cam_params[:, 3:6]
    f = cam_params[:, 6]
    k1 = cam_params[:, 7]
    k2 = cam_params[:, 8]

    P = np.einsum("nij,nj->ni", R, points) + t
    z = P[:, 2]
    valid = np.abs(z) >= MIN_PROJECTED_DEPTH
    zs = np.where(valid, z, 1.0)  # placeholder depth on invalid rows

    p = -P[:, 0:2] / zs[:, None]
    s = np.einsum("ni,ni->n", p, p)
    d = 1.0 + s * (k1 + k2 * s)
    proj = (f * d)[:, None] * p

    res = proj if pixels is None else proj - pixels
    res = np.where(valid[:, None], res, 0.0)
    if not with_jacobians:
        return res, valid

    # dp/dP, the projection-plane sensitivity to the camera-frame point.
    dp_dP = np.zeros((n, 2, 3))
    inv_z = 1.0 / zs
    dp_dP[:, 0, 0] = -inv_z
    dp_dP[:, 1, 1] = -inv_z
    dp_dP[:, 0, 2] = P[:, 0] * inv_z * inv_z
    dp_dP[:, 1, 2] = P[:, 1] * inv_z * inv_z

    # dproj/dp = f * (d I + p (dd/dp)^T) with dd/dp = (2 k1 + 4 k2 s) p.
    dd_dp = (2.0 * k1 + 4.0 * k2 * s)[:, None] * p
    dproj_dp = np.zeros((n, 2, 2))
    dproj_dp[:, 0, 0] = d
    dproj_dp[:, 1, 1] = d
    dproj_dp += p[:, :, None] * dd_dp[:, None, :]
    dproj_dp *= f[:, None, None]

    dproj_dP = dproj_dp @ dp_dP

    j_pose = np.empty((n, 2, POSE_DIM))
    # right-increment rotation tangent: dP/ddelta = -R [X]_x
    j_pose[:, :, 0:3] = dproj_dP @ (-(R @ _skew(points)))
    j_pose[:, :, 3:6] = dproj_dP
    j_pose[:, :, 6] = d[:, None] * p
    j_pose[:, :, 7] = (f * s)[:, None] * p
    j_pose[:, :, 8] = (f * s * s)[:, None] * p
    j_point = dproj_dP @ R

    j_pose[~valid] = 0.0
    j_point[~valid] = 0.0
    return res, j_pose, j_point, valid


def project(camera: CameraParams, point: np.ndarray) -> np.ndarray:
    """Project one world point; raises ValueError on zero projected depth."""
    proj, valid = evaluate(camera.to_array()[None, :], np.asarray(point)[None, :],
                           None, with_jacobians=False)
    if not valid[0]:
        raise ValueError("zero projected depth, point is on the camera plane")
    return proj[0]


def residual_and_jacobians(camera: CameraParams, point: np.ndarray,
                           observed: np.ndarray) -> tuple[Residual, ObservationJacobians]:
    """Residual and analytic Jacobians for a single observation.

    Zero-depth observations come back flagged invalid with zeroed residual and
    Jacobians rather than raising, so callers can count and skip them.
    """
    res, j_pose, j_point, valid = evaluate(
        camera.to_array()[None, :], np.asarray(point, dtype=np.float64)[None, :],
        np.asarray(observed, dtype=np.float64)[None, :], with_jacobians=True)
    return Residual(res[0], bool(valid[0])), ObservationJacobians(j_pose[0], j_point[0])


def compose_rotations(rotvecs: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Right-multiply increments onto rotation vectors: log(R(w) Exp(delta)).

    Results are canonical axis-angle vectors (norm <= pi, hence < 2 pi).
    """
    r = Rotation.from_rotvec(np.atleast_2d(rotvecs)) * Rotation.from_rotvec(np.atleast_2d(deltas))
    return r.as_rotvec()
