"""Reading, writing and perturbing bundle adjustment problems in BAL text format.

A BAL file is whitespace separated: a header ``n_cameras n_points n_observations``,
one line per observation ``cam_index point_index px py``, then 9 scalars per camera
(rotation vector, translation, focal, k1, k2) and 3 scalars per point.

Also home to the trace CSV and summary JSON formats emitted by the optimizer.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CAMERA_PARAMS = 9
POINT_PARAMS = 3

TRACE_COLUMNS = ("iter", "cumulative_time_s", "cost", "inner_iterations", "order_m", "peak_bytes")


class BalParseError(ValueError):
    """Malformed BAL input; the message carries the offending line number."""


@dataclass(frozen=True)
class CameraParams:
    """One camera: axis-angle rotation, translation, focal length, two radial terms.

    The packed order matches the BAL file layout.
    """

    rotation: np.ndarray
    translation: np.ndarray
    focal: float
    k1: float
    k2: float

    @classmethod
    def from_array(cls, a: np.ndarray) -> "CameraParams":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (CAMERA_PARAMS,):
            raise ValueError(f"camera parameter vector must have shape (9,), got {a.shape}")
        return cls(a[0:3].copy(), a[3:6].copy(), float(a[6]), float(a[7]), float(a[8]))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation, [self.focal, self.k1, self.k2]])


@dataclass
class BalProblem:
    """A bundle adjustment problem: cameras, points and pixel observations.

    Arrays are packed: ``camera_params`` is (n_cameras, 9) in BAL order, ``points``
    is (n_points, 3). Observations are parallel arrays; their order is the file
    order and is preserved by all operations here.
    """

    camera_params: np.ndarray
    points: np.ndarray
    cam_indices: np.ndarray
    pt_indices: np.ndarray
    pixels: np.ndarray
    name: str = ""
    n_pruned_cameras: int = 0
    n_pruned_points: int = 0

    def __post_init__(self) -> None:
        self.camera_params = np.ascontiguousarray(self.camera_params, dtype=np.float64)
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.cam_indices = np.ascontiguousarray(self.cam_indices, dtype=np.int64)
        self.pt_indices = np.ascontiguousarray(self.pt_indices, dtype=np.int64)
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if self.camera_params.ndim != 2 or self.camera_params.shape[1] != CAMERA_PARAMS:
            raise ValueError("camera_params must have shape (n_cameras, 9)")
        if self.points.ndim != 2 or self.points.shape[1] != POINT_PARAMS:
            raise ValueError("points must have shape (n_points, 3)")
        n_obs = self.cam_indices.shape[0]
        if self.pt_indices.shape != (n_obs,) or self.pixels.shape != (n_obs, 2):
            raise ValueError("observation arrays have inconsistent lengths")
        if n_obs == 0:
            raise ValueError("problem has no observations")
        if self.cam_indices.min() < 0 or self.cam_indices.max() >= self.n_cameras:
            raise ValueError("camera index out of range")
        if self.pt_indices.min() < 0 or self.pt_indices.max() >= self.n_points:
            raise ValueError("point index out of range")
        key = self.cam_indices * self.n_points + self.pt_indices
        if np.unique(key).size != n_obs:
            raise ValueError("duplicate (camera, point) observation")
        if np.bincount(self.cam_indices, minlength=self.n_cameras).min() == 0:
            raise ValueError("every camera must have at least one observation")
        if np.bincount(self.pt_indices, minlength=self.n_points).min() == 0:
            raise ValueError("every point must have at least one observation")

    @property
    def n_cameras(self) -> int:
        return self.camera_params.shape[0]

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_observations(self) -> int:
        return self.cam_indices.shape[0]

    @property
    def cameras(self) -> list[CameraParams]:
        return [CameraParams.from_array(row) for row in self.camera_params]

    def observations(self):
        """Yield (camera_index, point_index, pixel) tuples in file order."""
        for c, p, px in zip(self.cam_indices, self.pt_indices, self.pixels):
            yield int(c), int(p), px

    def copy(self) -> "BalProblem":
        return replace(
            self,
            camera_params=self.camera_params.copy(),
            points=self.points.copy(),
            cam_indices=self.cam_indices.copy(),
            pt_indices=self.pt_indices.copy(),
            pixels=self.pixels.copy(),
        )


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


class _TokenReader:
    """Whitespace tokenizer that remembers line numbers for error reporting."""

    def __init__(self, lines):
        self._iter = self._tokens(lines)
        self.lineno = 0

    def _tokens(self, lines):
        for lineno, line in enumerate(lines, start=1):
            if isinstance(line, bytes):
                line = line.decode("ascii")
            self.lineno = lineno
            for tok in line.split():
                yield tok

    def next_int(self, what: str) -> int:
        tok = self._next(what)
        try:
            return int(tok)
        except ValueError:
            raise BalParseError(f"line {self.lineno}: expected integer {what}, got {tok!r}") from None

    def next_float(self, what: str) -> float:
        tok = self._next(what)
        try:
            return float(tok)
        except ValueError:
            raise BalParseError(f"line {self.lineno}: expected number {what}, got {tok!r}") from None

    def _next(self, what: str) -> str:
        try:
            return next(self._iter)
        except StopIteration:
            raise BalParseError(f"line {self.lineno}: truncated file, expected {what}") from None

    def exhausted(self) -> bool:
        try:
            next(self._iter)
        except StopIteration:
            return True
        return False


def parse_bal(source) -> BalProblem:
    """Parse a BAL problem from a path or a readable (text or byte) stream.

    Cameras and points that no observation references are pruned, with the counts
    recorded on the returned problem; observation order is preserved. Malformed
    input raises :class:`BalParseError` with the offending line number.
    """
    if hasattr(source, "read"):
        name = getattr(source, "name", "")
        name = Path(name).stem if name else ""
        return _parse_lines(source, name)
    path = Path(source)
    with open(path, "r") as fh:
        return _parse_lines(fh, path.stem)


def _parse_lines(lines, name: str) -> BalProblem:
    rd = _TokenReader(lines)
    n_cam = rd.next_int("camera count")
    n_pt = rd.next_int("point count")
    n_obs = rd.next_int("observation count")
    if n_cam <= 0 or n_pt <= 0 or n_obs <= 0:
        raise BalParseError(f"line {rd.lineno}: counts must be positive, got {n_cam} {n_pt} {n_obs}")

    cam_idx = np.empty(n_obs, dtype=np.int64)
    pt_idx = np.empty(n_obs, dtype=np.int64)
    pixels = np.empty((n_obs, 2), dtype=np.float64)
    seen: set[tuple[int, int]] = set()
    for i in range(n_obs):
        c = rd.next_int("camera index")
        if not 0 <= c < n_cam:
            raise BalParseError(f"line {rd.lineno}: camera index {c} out of range [0, {n_cam})")
        p = rd.next_int("point index")
        if not 0 <= p < n_pt:
            raise BalParseError(f"line {rd.lineno}: point index {p} out of range [0, {n_pt})")
        if (c, p) in seen:
            raise BalParseError(f"line {rd.lineno}: duplicate observation of point {p} by camera {c}")
        seen.add((c, p))
        cam_idx[i] = c
        pt_idx[i] = p
        pixels[i, 0] = rd.next_float("pixel x")
        pixels[i, 1] = rd.next_float("pixel y")

    cams = np.empty((n_cam, CAMERA_PARAMS), dtype=np.float64)
    for i in range(n_cam):
        for j in range(CAMERA_PARAMS):
            cams[i, j] = rd.next_float(f"camera {i} parameter {j}")
    pts = np.empty((n_pt, POINT_PARAMS), dtype=np.float64)
    for i in range(n_pt):
        for j in range(POINT_PARAMS):
            pts[i, j] = rd.next_float(f"point {i} coordinate {j}")
    if not rd.exhausted():
        raise BalParseError(f"line {rd.lineno}: trailing data after point block")

    # Prune cameras/points that nothing observes, renumbering observation indices.
    cam_used = np.bincount(cam_idx, minlength=n_cam) > 0
    pt_used = np.bincount(pt_idx, minlength=n_pt) > 0
    n_pruned_cam = int(n_cam - cam_used.sum())
    n_pruned_pt = int(n_pt - pt_used.sum())
    if n_pruned_cam or n_pruned_pt:
        log.warning(
            "pruned %d unreferenced camera(s) and %d unreferenced point(s) from %s",
            n_pruned_cam, n_pruned_pt, name or "<stream>",
        )
        cam_map = np.cumsum(cam_used) - 1
        pt_map = np.cumsum(pt_used) - 1
        cams = cams[cam_used]
        pts = pts[pt_used]
        cam_idx = cam_map[cam_idx]
        pt_idx = pt_map[pt_idx]

    return BalProblem(
        camera_params=cams,
        points=pts,
        cam_indices=cam_idx,
        pt_indices=pt_idx,
        pixels=pixels,
        name=name,
        n_pruned_cameras=n_pruned_cam,
        n_pruned_points=n_pruned_pt,
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    # repr of a Python float is the shortest digit string that round-trips.
    return repr(float(x))


def serialize_bal(problem: BalProblem) -> str:
    """Serialize to canonical BAL text; parse(serialize(parse(x))) == parse(x)."""
    out = [f"{problem.n_cameras} {problem.n_points} {problem.n_observations}"]
    for i in range(problem.n_observations):
        out.append(
            f"{problem.cam_indices[i]} {problem.pt_indices[i]} "
            f"{_fmt(problem.pixels[i, 0])} {_fmt(problem.pixels[i, 1])}"
        )
    for row in problem.camera_params:
        out.extend(_fmt(v) for v in row)
    for row in problem.points:
        out.extend(_fmt(v) for v in row)
    return "\n".join(out) + "\n"


def write_bal(problem: BalProblem, path) -> None:
    Path(path).write_text(serialize_bal(problem))


# ---------------------------------------------------------------------------
# perturbation
# ---------------------------------------------------------------------------


def perturb(problem: BalProblem, sigma: float, seed: int) -> BalProblem:
    """Add Gaussian noise (std ``sigma``) to camera translations and point positions.

    Rotations and intrinsics are untouched. Deterministic for a fixed seed: the
    generator draws translation noise first, then point noise. ``sigma == 0``
    returns an identical copy.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    out = problem.copy()
    if sigma == 0:
        return out
    rng = np.random.default_rng(seed)
    out.camera_params[:, 3:6] += rng.normal(0.0, sigma, (problem.n_cameras, 3))
    out.points += rng.normal(0.0, sigma, (problem.n_points, 3))
    return out


# ---------------------------------------------------------------------------
# trace CSV and summary JSON
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    """One optimizer iteration as stored in the trace CSV."""

    iteration: int
    cumulative_time_s: float
    cost: float
    inner_iterations: int
    order_m: int
    peak_bytes: int


def write_trace(records, sink) -> None:
    """Write trace records as CSV with the canonical column header."""
    close = False
    if not hasattr(sink, "write"):
        sink = open(sink, "w", newline="")
        close = True
    try:
        w = csv.writer(sink)
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([
                r.iteration,
                _fmt(r.cumulative_time_s),
                _fmt(r.cost),
                r.inner_iterations,
                r.order_m,
                r.peak_bytes,
            ])
    finally:
        if close:
            sink.close()


def read_trace(source) -> list[TraceRecord]:
    """Read a trace CSV back into records; floats round-trip exactly."""
    close = False
    if not hasattr(source, "read"):
        source = open(source, "r", newline="")
        close = True
    try:
        rows = list(csv.reader(source))
    finally:
        if close:
            source.close()
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"trace CSV must start with header {','.join(TRACE_COLUMNS)}")
    return [
        TraceRecord(int(r[0]), float(r[1]), float(r[2]), int(r[3]), int(r[4]), int(r[5]))
        for r in rows[1:]
    ]


def write_summary(sink, *, problem: str, solver: str, final_cost: float,
                  total_time_s: float, peak_bytes: int) -> None:
    """Write the run summary JSON ({problem, solver, final_cost, total_time_s, peak_bytes})."""
    payload = {
        "problem": problem,
        "solver": solver,
        "final_cost": float(final_cost),
        "total_time_s": float(total_time_s),
        "peak_bytes": int(peak_bytes),
    }
    if hasattr(sink, "write"):
        json.dump(payload, sink, indent=2)
        sink.write("\n")
    else:
        with open(sink, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
