"""Landmark-block storage and matrix-free operators of the reduced camera system.

The damped normal equations of bundle adjustment have the block structure

    [ U_l  W   ] [dx_p]   [b_p]
    [ W^T  V_l ] [dx_l] = -[b_l]

with U_l block diagonal over cameras (9x9 blocks) and V_l block diagonal over
points (3x3 blocks). Nothing here ever materializes W. Each landmark observed by
k cameras owns one dense block of shape 2k x 13 laid out as

    [ stacked 2x9 pose Jacobians | 2k x 3 point Jacobian | 2k residuals ]

and every product with W, W^T, U^-1 or V^-1 streams over these blocks. Blocks are
stored contiguously, grouped by k, so group operations are views into one flat
array. Block storage precision is a parameter (float32 or float64); reductions
always accumulate in float64.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import camera
from .bal_io import BalProblem

log = logging.getLogger(__name__)

POSE_DIM = 9
POINT_DIM = 3
BLOCK_COLS = POSE_DIM + POINT_DIM + 1  # 13

# Marquardt damping diagonals sqrt(diag(J^T J)) are clamped to this range.
DIAG_CLAMP_MIN = 1e-6
DIAG_CLAMP_MAX = 1e6

# Assembly streams observations in slabs to keep transient memory flat.
SLAB_OBS = 512

_PRECISION_DTYPES = {32: np.float32, 64: np.float64}


def _ein(spec: str, *ops) -> np.ndarray:
    # all reductions accumulate in double regardless of block storage precision
    return np.einsum(spec, *ops, dtype=np.float64)


@dataclass(frozen=True)
class _Group:
    """Landmarks sharing one observation count k, contiguous in storage."""

    k: int
    obs_start: int
    n: int
    lm_ids: np.ndarray   # (n,) original landmark indices
    cam_ids: np.ndarray  # (n, k) camera index per block row pair


@dataclass(frozen=True)
class LandmarkBlock:
    """View of one landmark's dense 2k x 13 block."""

    landmark_index: int
    camera_indices: np.ndarray
    data: np.ndarray  # (2k, 13)


class LandmarkBlockStore:
    """Flat, k-grouped storage of all landmark blocks."""

    def __init__(self, storage_obs: np.ndarray, groups: list[_Group],
                 cam_sorted: np.ndarray, pt_sorted: np.ndarray,
                 n_cameras: int, n_points: int):
        self.storage_obs = storage_obs  # (n_obs, 2, 13), rows sorted by (k, point, camera)
        self.groups = groups
        self.cam_sorted = cam_sorted
        self.pt_sorted = pt_sorted
        self.n_cameras = n_cameras
        self.n_points = n_points
        # per-landmark observation offset and count, for block(i) lookups
        self._k_per = np.bincount(pt_sorted, minlength=n_points)
        self._lm_offset = np.empty(n_points, dtype=np.int64)
        first = np.ones(len(pt_sorted), dtype=bool)
        first[1:] = pt_sorted[1:] != pt_sorted[:-1]
        self._lm_offset[pt_sorted[first]] = np.flatnonzero(first)

    @property
    def dtype(self) -> np.dtype:
        return self.storage_obs.dtype

    @property
    def n_observations(self) -> int:
        return self.storage_obs.shape[0]

    @property
    def block_bytes(self) -> int:
        """Exact storage bytes of all blocks: sum over landmarks of 2k * 13 * itemsize."""
        return self.storage_obs.nbytes

    def block(self, landmark_index: int) -> LandmarkBlock:
        off = int(self._lm_offset[landmark_index])
        k = int(self._k_per[landmark_index])
        data = self.storage_obs[off:off + k].reshape(2 * k, BLOCK_COLS)
        return LandmarkBlock(landmark_index, self.cam_sorted[off:off + k].copy(), data)

    def group_views(self):
        """Yield (group, view) pairs; view has shape (n, k, 2, 13), no copy."""
        for grp in self.groups:
            end = grp.obs_start + grp.n * grp.k
            yield grp, self.storage_obs[grp.obs_start:end].reshape(grp.n, grp.k, 2, BLOCK_COLS)


@dataclass
class Linearization:
    """Blocks plus the lambda-independent reductions of one linearization point."""

    store: LandmarkBlockStore
    U0: np.ndarray   # (n_p, 9, 9) undamped pose Gauss-Newton blocks
    V0: np.ndarray   # (n_l, 3, 3) undamped point blocks
    b_p: np.ndarray  # (9 n_p,) J_p^T r
    b_l: np.ndarray  # (3 n_l,) J_l^T r
    D_p: np.ndarray  # (n_p, 9) clamped Marquardt diagonals
    D_l: np.ndarray  # (n_l, 3)
    n_invalid: int

    @property
    def n_cameras(self) -> int:
        return self.store.n_cameras

    @property
    def n_points(self) -> int:
        return self.store.n_points

    def damp(self, lam: float, damping: str = "marquardt") -> "DampedSystem":
        return DampedSystem(self, lam, damping)


@dataclass
class OperatorCounts:
    """Block-operator pass counters (one pass = one streaming sweep)."""

    w: int = 0
    wt: int = 0
    u_inv: int = 0
    v_inv: int = 0

    def total(self) -> int:
        return self.w + self.wt + self.u_inv + self.v_inv

    def reset(self) -> None:
        self.w = self.wt = self.u_inv = self.v_inv = 0


class DampedSystem:
    """The damped reduced system at one (linearization, lambda) pair.

    Exposes the block-diagonal factors and the four operator passes the
    power-series machinery is built from. U blocks are inverted once by 9x9
    Cholesky and cached; likewise the 3x3 V blocks.
    """

    def __init__(self, lin: Linearization, lam: float, damping: str = "marquardt"):
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        if damping not in ("marquardt", "identity"):
            raise ValueError(f"unknown damping mode {damping!r}")
        self.lin = lin
        self.store = lin.store
        self.lam = float(lam)
        self.damping = damping
        if damping == "identity":
            self.D_p = np.ones_like(lin.D_p)
            self.D_l = np.ones_like(lin.D_l)
        else:
            self.D_p = lin.D_p
            self.D_l = lin.D_l
        self.b_p = lin.b_p
        self.b_l = lin.b_l

        self.U = lin.U0.copy()
        di = np.arange(POSE_DIM)
        self.U[:, di, di] += lam * self.D_p ** 2
        self.V = lin.V0.copy()
        di = np.arange(POINT_DIM)
        self.V[:, di, di] += lam * self.D_l ** 2
        self.U_inv = _spd_block_inverse(self.U, "damped pose")
        self.V_inv = _spd_block_inverse(self.V, "damped point")

        self.counters = OperatorCounts()
        self._b_tilde: np.ndarray | None = None

    # -- dimensions ---------------------------------------------------------

    @property
    def n_cameras(self) -> int:
        return self.store.n_cameras

    @property
    def n_points(self) -> int:
        return self.store.n_points

    @property
    def n_pose_params(self) -> int:
        return POSE_DIM * self.n_cameras

    @property
    def n_point_params(self) -> int:
        return POINT_DIM * self.n_points

    # -- operator passes ----------------------------------------------------

    def apply_w(self, v_l: np.ndarray) -> np.ndarray:
        """W v_l, landmark space to pose space."""
        v = np.asarray(v_l, dtype=np.float64).reshape(self.n_points, POINT_DIM)
        out = np.zeros((self.n_cameras, POSE_DIM))
        for grp, blk in self.store.group_views():
            jp = blk[..., 0:POSE_DIM]
            jl = blk[..., POSE_DIM:POSE_DIM + POINT_DIM]
            tmp = _ein("gkab,gb->gka", jl, v[grp.lm_ids])
            np.add.at(out, grp.cam_ids, _ein("gkab,gka->gkb", jp, tmp))
        self.counters.w += 1
        return out.ravel()

    def apply_wt(self, v_p: np.ndarray) -> np.ndarray:
        """W^T v_p, pose space to landmark space."""
        v = np.asarray(v_p, dtype=np.float64).reshape(self.n_cameras, POSE_DIM)
        out = np.zeros((self.n_points, POINT_DIM))
        for grp, blk in self.store.group_views():
            jp = blk[..., 0:POSE_DIM]
            jl = blk[..., POSE_DIM:POSE_DIM + POINT_DIM]
            tmp = _ein("gkab,gkb->gka", jp, v[grp.cam_ids])
            out[grp.lm_ids] = _ein("gkab,gka->gb", jl, tmp)
        self.counters.wt += 1
        return out.ravel()

    def apply_u_inv(self, v_p: np.ndarray) -> np.ndarray:
        v = np.asarray(v_p, dtype=np.float64).reshape(self.n_cameras, POSE_DIM)
        self.counters.u_inv += 1
        return _ein("pij,pj->pi", self.U_inv, v).ravel()

    def apply_v_inv(self, v_l: np.ndarray) -> np.ndarray:
        v = np.asarray(v_l, dtype=np.float64).reshape(self.n_points, POINT_DIM)
        self.counters.v_inv += 1
        return _ein("pij,pj->pi", self.V_inv, v).ravel()

    def apply_u(self, v_p: np.ndarray) -> np.ndarray:
        v = np.asarray(v_p, dtype=np.float64).reshape(self.n_cameras, POSE_DIM)
        return _ein("pij,pj->pi", self.U, v).ravel()

    def apply_schur(self, v_p: np.ndarray) -> np.ndarray:
        """S v = (U_l - W V_l^-1 W^T) v, never forming S."""
        return self.apply_u(v_p) - self.apply_w(self.apply_v_inv(self.apply_wt(v_p)))

    def b_tilde(self) -> np.ndarray:
        """Reduced right-hand side b_p - W V_l^-1 b_l (cached)."""
        if self._b_tilde is None:
            self._b_tilde = self.b_p - self.apply_w(self.apply_v_inv(self.b_l))
        return self._b_tilde


def memory_account(system: DampedSystem) -> int:
    """Analytic byte count of one damped system.

    Landmark blocks (sum over landmarks of 2k * 13 * itemsize) plus the cached
    dense camera/point blocks and the persistent vectors. Transients do not
    count; the accounting reported in traces is exactly this number.
    """
    lin = system.lin
    dense = (lin.U0.nbytes + system.U.nbytes + system.U_inv.nbytes
             + lin.V0.nbytes + system.V.nbytes + system.V_inv.nbytes)
    vectors = system.b_p.nbytes + system.b_l.nbytes + lin.D_p.nbytes + lin.D_l.nbytes
    return system.store.block_bytes + dense + vectors


def _spd_block_inverse(blocks: np.ndarray, what: str) -> np.ndarray:
    """Invert a stack of small SPD matrices through their Cholesky factors."""
    try:
        L = np.linalg.cholesky(blocks)
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} blocks are not positive definite, assembly bug "
                         "or lambda too small") from None
    L_inv = np.linalg.inv(L)
    return np.einsum("pki,pkj->pij", L_inv, L_inv)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def linearize(problem: BalProblem, state=None, precision: int = 64) -> Linearization:
    """Evaluate residuals and Jacobians at ``state`` and pack landmark blocks.

    ``state`` is any object with ``camera_params`` (n_p, 9) and ``points``
    (n_l, 3); default is the problem's own parameters. Observations are
    evaluated in slabs so transient memory stays a small constant over the
    block storage itself.
    """
    dtype = _parse_precision(precision)
    if state is None:
        state = problem
    cam_arr = np.asarray(state.camera_params, dtype=np.float64)
    pts = np.asarray(state.points, dtype=np.float64)
    n_obs = problem.n_observations

    cam_sorted, pt_sorted, order = _sorted_observation_order(
        problem.cam_indices, problem.pt_indices, problem.n_points)
    storage = np.empty((n_obs, 2, BLOCK_COLS), dtype=dtype)
    n_invalid = 0
    for s0 in range(0, n_obs, SLAB_OBS):
        sl = slice(s0, min(n_obs, s0 + SLAB_OBS))
        res, jp, jl, valid = camera.evaluate(
            cam_arr[cam_sorted[sl]], pts[pt_sorted[sl]],
            problem.pixels[order[sl]], with_jacobians=True)
        n_invalid += int((~valid).sum())
        storage[sl, :, 0:POSE_DIM] = jp
        storage[sl, :, POSE_DIM:POSE_DIM + POINT_DIM] = jl
        storage[sl, :, -1] = res
    if n_invalid:
        log.warning("%d observation(s) had zero projected depth and were zeroed", n_invalid)
    return _finish_linearization(storage, cam_sorted, pt_sorted,
                                 problem.n_cameras, problem.n_points, n_invalid)


def assemble(problem: BalProblem, state=None, lam: float = 1e-4,
             precision: int = 64, damping: str = "marquardt") -> DampedSystem:
    """linearize + damp in one call."""
    return linearize(problem, state, precision).damp(lam, damping)


def assemble_from_observations(cam_indices, pt_indices, j_pose, j_point, residuals,
                               n_cameras: int, n_points: int,
                               precision: int = 64) -> Linearization:
    """Pack a linearization from explicit per-observation arrays.

    Mostly a test seam: lets callers craft systems with prescribed Jacobians
    (for instance with the point Jacobians zeroed, which makes every W-product
    vanish). Arrays are (n_obs,), (n_obs,), (n_obs, 2, 9), (n_obs, 2, 3),
    (n_obs, 2).
    """
    dtype = _parse_precision(precision)
    cam_indices = np.asarray(cam_indices, dtype=np.int64)
    pt_indices = np.asarray(pt_indices, dtype=np.int64)
    cam_sorted, pt_sorted, order = _sorted_observation_order(cam_indices, pt_indices, n_points)
    n_obs = len(cam_indices)
    storage = np.empty((n_obs, 2, BLOCK_COLS), dtype=dtype)
    storage[:, :, 0:POSE_DIM] = np.asarray(j_pose)[order]
    storage[:, :, POSE_DIM:POSE_DIM + POINT_DIM] = np.asarray(j_point)[order]
    storage[:, :, -1] = np.asarray(residuals)[order]
    return _finish_linearization(storage, cam_sorted, pt_sorted, n_cameras, n_points, 0)


def _parse_precision(precision: int):
    try:
        return _PRECISION_DTYPES[precision]
    except KeyError:
        raise ValueError(f"precision must be 32 or 64, got {precision}") from None


def _sorted_observation_order(cam_indices, pt_indices, n_points):
    """Order observations by (k of landmark, landmark, camera).

    Grouping by k makes each group a contiguous, zero-copy (n, k, 2, 13) view;
    sorting cameras within a landmark gives blocks their canonical row order.
    """
    k_per = np.bincount(pt_indices, minlength=n_points)
    if k_per.min() == 0:
        raise ValueError("every point must be observed at least once")
    order = np.lexsort((cam_indices, pt_indices, k_per[pt_indices]))
    return cam_indices[order], pt_indices[order], order


def _finish_linearization(storage, cam_sorted, pt_sorted, n_cameras, n_points,
                          n_invalid) -> Linearization:
    if np.bincount(cam_sorted, minlength=n_cameras).min() == 0:
        raise ValueError("every camera must have at least one observation")
    groups = _build_groups(cam_sorted, pt_sorted, n_points)
    store = LandmarkBlockStore(storage, groups, cam_sorted, pt_sorted, n_cameras, n_points)

    U0 = np.zeros((n_cameras, POSE_DIM, POSE_DIM))
    V0 = np.zeros((n_points, POINT_DIM, POINT_DIM))
    b_p = np.zeros((n_cameras, POSE_DIM))
    b_l = np.zeros((n_points, POINT_DIM))
    n_obs = storage.shape[0]
    for s0 in range(0, n_obs, SLAB_OBS):
        sl = slice(s0, min(n_obs, s0 + SLAB_OBS))
        blk = storage[sl]
        jp = blk[:, :, 0:POSE_DIM]
        jl = blk[:, :, POSE_DIM:POSE_DIM + POINT_DIM]
        r = blk[:, :, -1]
        np.add.at(U0, cam_sorted[sl], _ein("oai,oaj->oij", jp, jp))
        np.add.at(V0, pt_sorted[sl], _ein("oai,oaj->oij", jl, jl))
        np.add.at(b_p, cam_sorted[sl], _ein("oai,oa->oi", jp, r))
        np.add.at(b_l, pt_sorted[sl], _ein("oai,oa->oi", jl, r))

    di = np.arange(POSE_DIM)
    D_p = np.sqrt(np.clip(U0[:, di, di], DIAG_CLAMP_MIN ** 2, DIAG_CLAMP_MAX ** 2))
    di = np.arange(POINT_DIM)
    D_l = np.sqrt(np.clip(V0[:, di, di], DIAG_CLAMP_MIN ** 2, DIAG_CLAMP_MAX ** 2))
    return Linearization(store, U0, V0, b_p.ravel(), b_l.ravel(), D_p, D_l, n_invalid)


def _build_groups(cam_sorted, pt_sorted, n_points) -> list[_Group]:
    k_per = np.bincount(pt_sorted, minlength=n_points)
    groups = []
    pos = 0
    for k in np.unique(k_per):
        k = int(k)
        n = int((k_per == k).sum())
        count = n * k
        lm_ids = pt_sorted[pos:pos + count:k].copy()
        cam_ids = cam_sorted[pos:pos + count].reshape(n, k).copy()
        groups.append(_Group(k, pos, n, lm_ids, cam_ids))
        pos += count
    return groups
