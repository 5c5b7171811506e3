"""Covisibility clustering of cameras and per-cluster restricted solves.

Cameras are merged greedily along the heaviest covisibility edges (weight =
number of co-observed landmarks) under a cluster size cap. The reduced system
then splits into per-cluster sub-systems, each solved by the truncated power
series on its own; couplings across the cut are dropped for the pose step and
reconciled by the global back-substitution afterwards.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .bal_io import BalProblem
from .blocks import POSE_DIM, DampedSystem, assemble_from_observations
from .power_series import power_series_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CameraClustering:
    """Partition of the cameras plus cut statistics.

    ``cut_observations`` counts observations whose landmark is seen from more
    than one cluster, the couplings the clustered pose solve drops.
    """

    assignment: np.ndarray  # (n_cameras,) cluster id per camera
    n_clusters: int
    sizes: np.ndarray
    cut_observations: int


@dataclass(frozen=True)
class ClusteredSolveResult:
    delta_p: np.ndarray
    order_used: int      # max over clusters
    converged: bool      # all clusters met the stop criterion


def cluster_cameras(problem: BalProblem, max_cluster_size: int,
                    seed: int = 0) -> CameraClustering:
    """Greedy agglomerative merge along covisibility edges, heaviest first.

    Merges that would push a cluster past ``max_cluster_size`` are skipped.
    Ties break on the smaller camera index pair, so the result is deterministic
    for any seed; the seed only exists so stochastic tie-breaking could be
    slotted in without an interface change.
    """
    del seed  # tie-break is by index, see docstring
    if max_cluster_size < 1:
        raise ValueError("max_cluster_size must be at least 1")
    n_p = problem.n_cameras

    order = np.lexsort((problem.cam_indices, problem.pt_indices))
    pt_sorted = problem.pt_indices[order]
    cam_sorted = problem.cam_indices[order]
    boundaries = np.flatnonzero(np.diff(pt_sorted)) + 1
    weights: Counter = Counter()
    for cams in np.split(cam_sorted, boundaries):
        for i in range(len(cams)):
            for j in range(i + 1, len(cams)):
                weights[(int(cams[i]), int(cams[j]))] += 1

    parent = np.arange(n_p)
    size = np.ones(n_p, dtype=np.int64)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for (ci, cj), _w in sorted(weights.items(), key=lambda kv: (-kv[1], kv[0])):
        ra, rb = find(ci), find(cj)
        if ra == rb or size[ra] + size[rb] > max_cluster_size:
            continue
        keep, drop = min(ra, rb), max(ra, rb)
        parent[drop] = keep
        size[keep] += size[drop]

    roots = np.array([find(c) for c in range(n_p)])
    # cluster ids ordered by smallest member camera index
    unique_roots = np.unique(roots)
    assignment = np.searchsorted(unique_roots, roots)
    sizes = np.bincount(assignment)

    lm_clusters_seen = np.split(assignment[cam_sorted], boundaries)
    cut = sum(len(c) for c in lm_clusters_seen if np.unique(c).size > 1)
    return CameraClustering(assignment, len(unique_roots), sizes, int(cut))


def restrict_system(system: DampedSystem, cluster_cams: np.ndarray) -> DampedSystem:
    """The sub-system of one camera cluster.

    Keeps exactly the observation rows made by the cluster's cameras (so a
    landmark seen from several clusters contributes its within-cluster rows
    here and its other rows elsewhere) and re-reduces them. Damping diagonals
    stay the global ones, which keeps a single whole-problem cluster bitwise
    identical to the unclustered system and every sub-system positive definite.
    """
    store = system.store
    cam_in = np.zeros(store.n_cameras, dtype=bool)
    cam_in[cluster_cams] = True
    cam_map = np.full(store.n_cameras, -1, dtype=np.int64)
    cam_map[cluster_cams] = np.arange(len(cluster_cams))

    mask = cam_in[store.cam_sorted]
    pt_kept = store.pt_sorted[mask]
    kept_lms = np.unique(pt_kept)
    lm_map = np.full(store.n_points, -1, dtype=np.int64)
    lm_map[kept_lms] = np.arange(len(kept_lms))

    rows = store.storage_obs[mask]
    lin = assemble_from_observations(
        cam_map[store.cam_sorted[mask]], lm_map[pt_kept],
        rows[:, :, 0:POSE_DIM], rows[:, :, POSE_DIM:POSE_DIM + 3], rows[:, :, -1],
        n_cameras=len(cluster_cams), n_points=len(kept_lms),
        precision=64 if store.dtype == np.float64 else 32)
    lin.D_p = system.lin.D_p[cluster_cams]
    lin.D_l = system.lin.D_l[kept_lms]
    return lin.damp(system.lam, system.damping)


def solve_clustered(system: DampedSystem, partition: CameraClustering,
                    epsilon: float = 0.01, max_order: int = 20) -> ClusteredSolveResult:
    """Per-cluster truncated-series pose steps, concatenated globally.

    Back-substitution for the landmark step is the caller's job and happens
    globally on the merged pose step.
    """
    if partition.assignment.shape[0] != system.n_cameras:
        raise ValueError("partition does not match the system's camera count")
    delta = np.zeros((system.n_cameras, POSE_DIM))
    order_used = 0
    converged = True
    for c in range(partition.n_clusters):
        cams = np.flatnonzero(partition.assignment == c)
        sub = restrict_system(system, cams)
        res = power_series_solve(sub, epsilon, max_order)
        delta[cams] = res.delta_p.reshape(len(cams), POSE_DIM)
        order_used = max(order_used, res.order_used)
        converged = converged and res.converged
    return ClusteredSolveResult(delta.ravel(), order_used, converged)
