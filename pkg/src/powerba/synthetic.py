"""Deterministic synthetic problems for tests and benchmarks.

Geometry is a ring of cameras looking inward at a point cloud; intrinsics and
visibility are drawn from a seeded generator, so every fixture is reproducible.
Observations are exact projections unless pixel noise is requested, which makes
the generating state a global optimum with zero cost.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .bal_io import BalProblem
from .camera import evaluate


def _look_at_origin(centers: np.ndarray) -> np.ndarray:
    """World-to-camera rotation vectors for cameras at ``centers`` facing the origin.

    The camera frame follows the projection convention here: points in front of
    the lens have negative z, so the +z row points radially away from the scene.
    """
    z = centers / np.linalg.norm(centers, axis=1, keepdims=True)
    up = np.tile([0.0, 0.0, 1.0], (len(centers), 1))
    near_pole = np.abs(z[:, 2]) > 0.9
    up[near_pole] = [1.0, 0.0, 0.0]
    x = np.cross(up, z)
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1)  # rows are the camera axes
    return Rotation.from_matrix(R).as_rotvec()


def _build_problem(centers, points, cam_idx, pt_idx, rng, name,
                   pixel_noise: float) -> BalProblem:
    n_cam = len(centers)
    rotvecs = _look_at_origin(centers)
    cams = np.zeros((n_cam, 9))
    cams[:, 0:3] = rotvecs
    cams[:, 3:6] = -np.einsum("nij,nj->ni", Rotation.from_rotvec(rotvecs).as_matrix(), centers)
    cams[:, 6] = rng.uniform(700.0, 900.0, n_cam)
    cams[:, 7] = rng.uniform(-0.2, -0.05, n_cam)
    cams[:, 8] = rng.uniform(0.005, 0.02, n_cam)

    pixels, valid = evaluate(cams[cam_idx], points[pt_idx], None, with_jacobians=False)
    if not valid.all():
        raise AssertionError("synthetic geometry produced a zero-depth observation")
    if pixel_noise > 0:
        pixels = pixels + rng.normal(0.0, pixel_noise, pixels.shape)
    return BalProblem(cams, points, cam_idx, pt_idx, pixels, name=name)


def _ring_visibility(n_cameras: int, point_angles: np.ndarray, obs_per_point: int,
                     camera_angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Each point is observed by its ``obs_per_point`` angularly nearest cameras."""
    diff = np.abs(point_angles[:, None] - camera_angles[None, :])
    diff = np.minimum(diff, 2 * np.pi - diff)
    nearest = np.argsort(diff, axis=1, kind="stable")[:, :obs_per_point]
    n_points = len(point_angles)
    pt_idx = np.repeat(np.arange(n_points), obs_per_point)
    cam_idx = nearest.ravel()
    return cam_idx, pt_idx


def make_rig_problem(n_cameras: int = 49, n_points: int = 1200,
                     obs_per_point: int = 8, seed: int = 0,
                     pixel_noise: float = 0.0, name: str | None = None) -> BalProblem:
    """A camera ring around a structured cloud, sized like a small real capture.

    The default 49 cameras stand in for the smallest real capture sequence used
    in the evaluation protocol. Covisibility chains around the ring, so the
    problem does not decouple.
    """
    if obs_per_point > n_cameras:
        raise ValueError("obs_per_point cannot exceed n_cameras")
    rng = np.random.default_rng(seed)
    cam_angles = np.linspace(0.0, 2 * np.pi, n_cameras, endpoint=False)
    radius = 12.0
    centers = np.stack([radius * np.cos(cam_angles), radius * np.sin(cam_angles),
                        rng.uniform(-1.0, 1.0, n_cameras)], axis=1)
    pt_angles = rng.uniform(0.0, 2 * np.pi, n_points)
    pt_radius = rng.uniform(0.0, 4.0, n_points)
    points = np.stack([pt_radius * np.cos(pt_angles), pt_radius * np.sin(pt_angles),
                       rng.uniform(-2.0, 2.0, n_points)], axis=1)
    cam_idx, pt_idx = _ring_visibility(n_cameras, pt_angles, obs_per_point, cam_angles)
    return _build_problem(centers, points, cam_idx, pt_idx, rng,
                          name or f"rig{n_cameras}", pixel_noise)


def make_random_problem(n_cameras: int, n_points: int, seed: int = 0,
                        pixel_noise: float = 0.0, name: str | None = None) -> BalProblem:
    """A small random problem with full coverage, for oracle-scale tests."""
    if n_cameras < 1 or n_points < 1:
        raise ValueError("need at least one camera and one point")
    rng = np.random.default_rng(seed)
    cam_angles = rng.uniform(0.0, 2 * np.pi, n_cameras)
    centers = np.stack([10.0 * np.cos(cam_angles), 10.0 * np.sin(cam_angles),
                        rng.uniform(-2.0, 2.0, n_cameras)], axis=1)
    points = rng.uniform(-3.0, 3.0, (n_points, 3))

    pairs = set()
    for p in range(n_points):
        k = int(rng.integers(2, min(n_cameras, 5) + 1)) if n_cameras > 1 else 1
        for c in rng.choice(n_cameras, size=k, replace=False):
            pairs.add((int(c), p))
    # coverage: give any unobserving camera one point
    seen_cams = {c for c, _ in pairs}
    for c in range(n_cameras):
        if c not in seen_cams:
            pairs.add((c, int(rng.integers(n_points))))
    pairs = sorted(pairs)
    cam_idx = np.array([c for c, _ in pairs])
    pt_idx = np.array([p for _, p in pairs])
    return _build_problem(centers, points, cam_idx, pt_idx, rng,
                          name or f"rand{n_cameras}x{n_points}", pixel_noise)


def make_two_component_problem(seed: int = 0, n_cameras: int = 6,
                               n_points: int = 30) -> BalProblem:
    """Two rigs with no shared landmarks: the reduced system is block diagonal."""
    half_c = n_cameras // 2
    half_p = n_points // 2
    a = make_random_problem(half_c, half_p, seed=seed)
    b = make_random_problem(n_cameras - half_c, n_points - half_p, seed=seed + 1)
    b_points = b.points + np.array([60.0, 0.0, 0.0])
    # the second rig is translated, so its cameras must be too: shift the
    # translation by -R * offset to keep the observations consistent
    b_cams = b.camera_params.copy()
    R = Rotation.from_rotvec(b_cams[:, 0:3]).as_matrix()
    b_cams[:, 3:6] -= np.einsum("nij,j->ni", R, np.array([60.0, 0.0, 0.0]))
    return BalProblem(
        np.vstack([a.camera_params, b_cams]),
        np.vstack([a.points, b_points]),
        np.concatenate([a.cam_indices, b.cam_indices + half_c]),
        np.concatenate([a.pt_indices, b.pt_indices + half_p]),
        np.vstack([a.pixels, b.pixels]),
        name=f"twocomp{n_cameras}",
    )
