"""Planar homography from four point pairs and bird's-eye projection of tracks.

Estimation solves the 8x8 direct-linear system with the bottom-right matrix
entry pinned to 1; four curated calibration pairs per camera are expected,
so there is no noise handling and no least-squares fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datamodel import TrackedObject, read_csv_rows, write_csv
from .errors import (
    DegenerateConfigurationError,
    HorizonPointError,
    NumericalError,
    ValidationError,
)

HORIZON_EPS = 1e-12


@dataclass(frozen=True)
class PointPair:
    """A camera-plane point and its world-plane image."""

    src: tuple[float, float]
    dst: tuple[float, float]


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map with the (2,2) entry normalized to 1."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.shape != (3, 3):
            raise ValidationError(f"homography must be 3x3, got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValidationError("homography has non-finite entries")
        if abs(h[2, 2]) < HORIZON_EPS:
            raise ValidationError("homography (2,2) entry must be nonzero")
        h = h / h[2, 2]
        if abs(np.linalg.det(h)) < 1e-15:
            raise ValidationError("homography is singular")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))


def _collinear_triple(points: np.ndarray) -> bool:
    span = max(1.0, float(np.ptp(points, axis=0).max()))
    tol = 1e-9 * span * span
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            for k in range(j + 1, len(points)):
                a, b, c = points[i], points[j], points[k]
                cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if abs(cross) <= tol:
                    return True
    return False


def estimate_homography(pairs: list[PointPair]) -> Homography:
    """Solve the four-correspondence direct-linear system for H.

    Requires exactly four pairs with no collinear triple on either plane;
    degenerate configurations raise instead of falling back to least squares.
    """
    if len(pairs) != 4:
        raise ValidationError(f"need exactly 4 point pairs, got {len(pairs)}")
    src = np.asarray([p.src for p in pairs], dtype=float)
    dst = np.asarray([p.dst for p in pairs], dtype=float)
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValidationError("calibration points must be finite")
    if _collinear_triple(src):
        raise DegenerateConfigurationError("three source points are collinear")
    if _collinear_triple(dst):
        raise DegenerateConfigurationError("three destination points are collinear")

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (xp, yp)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -xp * x, -xp * y]
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -yp * x, -yp * y]
        b[2 * i] = xp
        b[2 * i + 1] = yp
    try:
        sol = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"homography system is singular: {exc}") from exc
    return Homography(np.append(sol, 1.0).reshape(3, 3))


def project(h: Homography, point) -> tuple[float, float]:
    """Apply H to a point and divide by the projective coordinate."""
    x, y = float(point[0]), float(point[1])
    vec = h.h @ (x, y, 1.0)
    if abs(vec[2]) < HORIZON_EPS:
        raise HorizonPointError((x, y))
    return (vec[0] / vec[2], vec[1] / vec[2])


def project_track(h: Homography, track: TrackedObject) -> TrackedObject:
    """Project every sample of a track into the world plane."""
    samples = np.array(track.samples, dtype=float)
    xy = np.column_stack([samples[:, 1], samples[:, 2], np.ones(len(samples))])
    proj = xy @ h.h.T
    bad = np.abs(proj[:, 2]) < HORIZON_EPS
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise HorizonPointError((samples[idx, 1], samples[idx, 2]), sample_index=idx)
    samples[:, 1] = proj[:, 0] / proj[:, 2]
    samples[:, 2] = proj[:, 1] / proj[:, 2]
    return track.with_samples(samples)


# ---------------------------------------------------------------------------
# calib.csv: camera_id,src_x,src_y,dst_x,dst_y -- four rows per camera
# ---------------------------------------------------------------------------

def load_calibrations(path) -> dict[str, Homography]:
    _, rows = read_csv_rows(path)
    pairs: dict[str, list[PointPair]] = {}
    for i, row in enumerate(rows, start=2):
        try:
            pairs.setdefault(row["camera_id"], []).append(PointPair(
                (float(row["src_x"]), float(row["src_y"])),
                (float(row["dst_x"]), float(row["dst_y"]))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{i}: bad calibration row ({exc})") from exc
    out = {}
    for camera_id, plist in pairs.items():
        if len(plist) != 4:
            raise ValidationError(
                f"{path}: camera {camera_id!r} has {len(plist)} pairs, expected 4")
        out[camera_id] = estimate_homography(plist)
    return out


def write_calibrations(path, pairs_by_camera: dict[str, list[PointPair]],
                       comment: str | None = None) -> None:
    header = ["camera_id", "src_x", "src_y", "dst_x", "dst_y"]

    def rows():
        for camera_id in sorted(pairs_by_camera):
            for p in pairs_by_camera[camera_id]:
                yield [camera_id, p.src[0], p.src[1], p.dst[0], p.dst[1]]

    write_csv(path, header, rows(), comment=comment)
