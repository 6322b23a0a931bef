"""Active Polynomial boundary and myocardial segment partition."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi
from scipy.interpolate import CubicSpline
from skimage.measure import find_contours

from .contour import fit_quartic
from .dataio import A2C, A4C
from .errors import GeometryError, ValidationError
from .geometry import QuarticCurve, cumulative_length, resample_equal

N_FIT_POINTS = 9
N_TRACK_POINTS = 5
BASE_TOLERANCE = 1.0

# per side, base -> apex; the last 2/7 next to the apex is the excluded cap (segment 17)
SPAN_FRACTIONS = ((0.0, 2 / 7), (2 / 7, 4 / 7), (4 / 7, 5 / 7))
CAP_FRACTION = (5 / 7, 1.0)
SLOTS = ("basal", "mid", "apical")

# (left basal, mid, apical), (right basal, mid, apical)
SEGMENT_LAYOUT = {
    A4C: ((3, 9, 14), (6, 12, 16)),
    A2C: ((4, 10, 15), (1, 7, 13)),
}


@dataclass
class ActivePolynomialBoundary:
    apex: np.ndarray
    left_coeffs: np.ndarray
    right_coeffs: np.ndarray
    left_y: tuple[float, float]  # base y -> apex y
    right_y: tuple[float, float]  # apex y -> base y
    left_polyline: np.ndarray
    right_polyline: np.ndarray
    L: float
    R: float
    apex_mismatch: float = 0.0

    def left_curve(self) -> QuarticCurve:
        return QuarticCurve(self.left_coeffs, *self.left_y)

    def right_curve(self) -> QuarticCurve:
        return QuarticCurve(self.right_coeffs, *self.right_y)

    def to_dict(self):
        return {
            "apex": [float(v) for v in self.apex],
            "left_coeffs": [float(v) for v in self.left_coeffs],
            "right_coeffs": [float(v) for v in self.right_coeffs],
            "left_y": [float(v) for v in self.left_y],
            "right_y": [float(v) for v in self.right_y],
            "L": float(self.L),
            "R": float(self.R),
        }

    @classmethod
    def from_dict(cls, d):
        lc = QuarticCurve(d["left_coeffs"], *d["left_y"])
        rc = QuarticCurve(d["right_coeffs"], *d["right_y"])
        return cls(np.asarray(d["apex"], float), lc.coeffs, rc.coeffs, tuple(d["left_y"]),
                   tuple(d["right_y"]), lc.polyline(), rc.polyline(), lc.length, rc.length)


@dataclass
class SegmentGeometry:
    kappa: int
    side: str
    points: np.ndarray  # (N, 2), base -> apex
    span: tuple[float, float]  # arc-length along the side, measured from the base
    slot: str = field(default="")


@dataclass
class OpenContour:
    points: np.ndarray  # (n, 2) (x, y), left base -> over apex -> right base
    multiple_components: bool = False


def _signed_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _runs(flags):
    """Contiguous True runs of a cyclic boolean array as (start, length)."""
    n = len(flags)
    if flags.all():
        return [(0, n)]
    start = int(np.flatnonzero(~flags)[0])
    runs = []
    i = 0
    while i < n:
        j = (start + i) % n
        if flags[j]:
            k = 0
            while k < n and flags[(j + k) % n]:
                k += 1
            runs.append((j, k))
            i += k
        else:
            i += 1
    return runs


def extract_ordered_contour(region) -> OpenContour:
    """Trace the region outline and open it at its bottom (LV base) chord.

    The closed outline runs clockwise on screen (up the left wall first);
    the longest run of outline points within ``BASE_TOLERANCE`` px of the
    lowest row (the base chord) is removed.
    """
    mask = np.asarray(region, dtype=bool)
    if mask.ndim != 2 or not mask.any():
        raise ValidationError("region must be a non-empty 2-D mask")
    if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
        raise GeometryError("region touches the image border; boundary is ambiguous")
    labels, n = ndi.label(mask)
    multiple = n > 1
    if multiple:
        sizes = ndi.sum(mask, labels, index=np.arange(1, n + 1))
        keep = int(np.argmax(sizes)) + 1
        mask = labels == keep
        warnings.warn(f"region has {n} components; tracing the largest", RuntimeWarning,
                      stacklevel=2)

    contours = find_contours(mask.astype(float), 0.5)
    outline = max(contours, key=len)
    if np.allclose(outline[0], outline[-1]):
        outline = outline[:-1]
    pts = outline[:, ::-1].copy()  # (row, col) -> (x, y)
    if _signed_area(pts) < 0:
        pts = pts[::-1]

    # the base chord: lowest outline run, tolerant to 1-px bumps below it
    ymax = pts[:, 1].max()
    bottom = pts[:, 1] >= ymax - BASE_TOLERANCE - 1e-9
    start, length = max(_runs(bottom), key=lambda r: r[1])
    n_pts = len(pts)
    begin = (start + length) % n_pts
    order = (begin + np.arange(n_pts - length)) % n_pts
    return OpenContour(pts[order], multiple)


def split_at_apex(polyline):
    """Split an open contour at its topmost point (plateaus: middle of the run)."""
    pts = np.asarray(polyline, dtype=float)
    if len(pts) < 2 * N_FIT_POINTS:
        raise GeometryError(f"contour needs at least {2 * N_FIT_POINTS} points, got {len(pts)}")
    y = pts[:, 1]
    tied = np.flatnonzero(y <= y.min() + 1e-9)
    runs = np.split(tied, np.flatnonzero(np.diff(tied) > 1) + 1)
    run = max(runs, key=len)
    apex_idx = int(run[0] + (len(run) - 1) // 2)
    left, right = pts[:apex_idx + 1], pts[apex_idx:]
    if len(left) < N_FIT_POINTS or len(right) < N_FIT_POINTS:
        raise GeometryError(
            f"apex split leaves {len(left)} / {len(right)} points; need {N_FIT_POINTS} per side")
    return left, right, pts[apex_idx].copy()


def _fit_samples(part, n=N_FIT_POINTS):
    """``n`` points at equal arc-length spacing on a cubic spline through the part.

    The spline (parameterized by chord length) reproduces points lying on a
    smooth curve far more closely than linear interpolation, while still
    averaging pixel-level zigzags between vertices.
    """
    keep = np.concatenate([[True], np.hypot(*np.diff(part, axis=0).T) > 1e-12])
    part = part[keep]
    if len(part) < 4:
        return resample_equal(part, n)
    cum = cumulative_length(part)
    return CubicSpline(cum, part)(np.linspace(0.0, cum[-1], n))


def _fit_part(part):
    samples = _fit_samples(part)
    if len(np.unique(np.round(samples[:, 1], 6))) < 5:
        raise GeometryError("ill-posed fit: sampled points have fewer than 5 distinct y values")
    coeffs, _ = fit_quartic(samples)
    return coeffs, (float(samples[0, 1]), float(samples[-1, 1]))


def fit_active_polynomials(left, right, apex=None) -> ActivePolynomialBoundary:
    """Quartic ``x = p(y)`` through 9 equal-arc-length samples of each part."""
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if len(left) < N_FIT_POINTS or len(right) < N_FIT_POINTS:
        raise ValidationError(f"each part needs at least {N_FIT_POINTS} points")
    if apex is None:
        apex = left[-1]
    apex = np.asarray(apex, dtype=float)
    lc, ly = _fit_part(left)
    rc, ry = _fit_part(right)
    lcurve, rcurve = QuarticCurve(lc, *ly), QuarticCurve(rc, *ry)
    mismatch = max(abs(lcurve.poly(apex[1]) - apex[0]), abs(rcurve.poly(apex[1]) - apex[0]))
    if mismatch > 2.0:
        warnings.warn(f"active polynomials miss the apex by {mismatch:.2f} px", RuntimeWarning,
                      stacklevel=2)
    return ActivePolynomialBoundary(apex, lc, rc, ly, ry, lcurve.polyline(), rcurve.polyline(),
                                    lcurve.length, rcurve.length, float(mismatch))


def boundary_from_region(region) -> ActivePolynomialBoundary:
    contour = extract_ordered_contour(region)
    left, right, apex = split_at_apex(contour.points)
    return fit_active_polynomials(left, right, apex)


def _side_segments(curve: QuarticCurve, from_base: bool, kappas, side, n_points):
    length = curve.length
    out = []
    for kappa, slot, (f0, f1) in zip(kappas, SLOTS, SPAN_FRACTIONS):
        s0, s1 = f0 * length, f1 * length
        s = s0 + (np.arange(n_points) + 0.5) * (s1 - s0) / n_points
        # curve arc length runs from its own start; the right side starts at the apex
        pts = curve.at(s if from_base else length - s)
        out.append(SegmentGeometry(kappa, side, pts, (s0, s1), slot))
    return out


def partition_segments(boundary: ActivePolynomialBoundary, view: str,
                       n_points: int = N_TRACK_POINTS) -> list[SegmentGeometry]:
    """Six segments in feature order (left base->apex, then right apex->base)."""
    if view not in (A4C, A2C):
        raise ValidationError(f"unknown view {view!r}")
    lcurve, rcurve = boundary.left_curve(), boundary.right_curve()
    if lcurve.length < 14 or rcurve.length < 14:
        raise GeometryError("boundary side shorter than 14 px; segment spans collapse")
    left_k, right_k = SEGMENT_LAYOUT[view]
    left = _side_segments(lcurve, True, left_k, "left", n_points)
    right = _side_segments(rcurve, False, right_k, "right", n_points)
    return left + right[::-1]


def write_boundary_csv(boundary: ActivePolynomialBoundary, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["side", "index", "x", "y"])
        for side, poly in (("left", boundary.left_polyline), ("right", boundary.right_polyline)):
            for i, (x, y) in enumerate(poly):
                w.writerow([side, i, f"{x:.6f}", f"{y:.6f}"])


def write_coefficients_json(boundary: ActivePolynomialBoundary, path):
    Path(path).write_text(json.dumps(boundary.to_dict(), indent=2, sort_keys=True))
