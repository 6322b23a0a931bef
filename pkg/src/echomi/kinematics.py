"""Segment displacement curves, opposite-wall intervals and normalized features."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataio import A2C, A4C, VIEW_SEGMENTS
from .errors import GeometryError, ValidationError

# opposite segments: basal-basal, mid-mid, apical-apical on the two walls
OPPOSITE_PAIRS = {
    A4C: ((3, 6), (9, 12), (14, 16)),
    A2C: ((4, 1), (10, 7), (15, 13)),
}


def opposite_of(view):
    table = {}
    for a, b in OPPOSITE_PAIRS[view]:
        table[a], table[b] = b, a
    return table


@dataclass
class SegmentTrace:
    kappa: int
    D: np.ndarray


@dataclass
class IntervalTrace:
    pair: tuple[int, int]
    I: np.ndarray


@dataclass
class ViewFeatures:
    view: str
    phi: np.ndarray

    @property
    def by_segment(self):
        return dict(zip(VIEW_SEGMENTS[self.view], self.phi))


@dataclass
class FusedFeatures:
    F: np.ndarray


def _stack(points_per_frame, name):
    try:
        arr = np.asarray(points_per_frame, dtype=float)
    except ValueError:
        raise ValidationError(f"{name}: point count differs across frames") from None
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValidationError(f"{name}: expected (frames, N, 2) point sets")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name}: empty point sets")
    return arr


def displacement_curve(points_per_frame, kappa=0) -> SegmentTrace:
    """D(t): mean Euclidean distance of each point from its own position at t = 0."""
    P = _stack(points_per_frame, "displacement_curve")
    D = np.mean(np.sqrt(np.sum((P - P[0]) ** 2, axis=2)), axis=1)
    D[0] = 0.0
    return SegmentTrace(kappa, D)


def interval_curve(points_a, points_b, pair=(0, 0)) -> IntervalTrace:
    """I(t): mean Manhattan distance between corresponding points of two segments."""
    A = _stack(points_a, "interval_curve")
    B = _stack(points_b, "interval_curve")
    if A.shape != B.shape:
        raise ValidationError(f"interval_curve: point sets differ in shape {A.shape} vs {B.shape}")
    I = np.mean(np.abs(A[..., 0] - B[..., 0]) + np.abs(A[..., 1] - B[..., 1]), axis=1)
    return IntervalTrace(tuple(pair), I)


def segment_feature(trace: SegmentTrace, interval: IntervalTrace) -> float:
    """f = max(D) / min(I) over the cycle."""
    D, I = np.asarray(trace.D), np.asarray(interval.I)
    if len(D) != len(I):
        raise ValidationError("displacement and interval traces span different frame counts")
    imin = float(np.min(I))
    if imin <= 0:
        raise GeometryError(f"segment {trace.kappa}: opposite walls touch (min interval 0)")
    f = float(np.max(D)) / imin
    if f > 1:
        warnings.warn(f"segment {trace.kappa}: feature {f:.3f} exceeds 1", RuntimeWarning,
                      stacklevel=2)
    return f


def view_traces(segment_points, view):
    """Displacement and interval traces from ``{kappa: (frames, N, 2)}``."""
    missing = [k for k in VIEW_SEGMENTS[view] if k not in segment_points]
    if missing:
        raise ValidationError(f"{view}: missing segment traces for {missing}")
    opp = opposite_of(view)
    traces, intervals = {}, {}
    for k in VIEW_SEGMENTS[view]:
        traces[k] = displacement_curve(segment_points[k], k)
        intervals[k] = interval_curve(segment_points[k], segment_points[opp[k]], (k, opp[k]))
    return traces, intervals


def view_feature_vector(traces, intervals, view) -> ViewFeatures:
    """Features in the fixed per-view order (A4C: 3,9,14,16,12,6; A2C: 4,10,15,13,7,1)."""
    if view not in VIEW_SEGMENTS:
        raise ValidationError(f"unknown view {view!r}")
    opp = opposite_of(view)
    phi = []
    for k in VIEW_SEGMENTS[view]:
        if k not in traces:
            raise ValidationError(f"{view}: missing segment trace {k}")
        interval = intervals.get(k)
        if interval is None:
            interval = intervals.get(opp[k])
        if interval is None:
            raise ValidationError(f"{view}: missing interval for segment {k}")
        phi.append(segment_feature(traces[k], interval))
    return ViewFeatures(view, np.array(phi))


def features_from_points(segment_points, view) -> ViewFeatures:
    traces, intervals = view_traces(segment_points, view)
    return view_feature_vector(traces, intervals, view)


def concat_features(phi1: ViewFeatures, phi2: ViewFeatures) -> FusedFeatures:
    if phi1.view != A4C or phi2.view != A2C:
        raise ValidationError(f"expected (A4C, A2C) features, got ({phi1.view}, {phi2.view})")
    return FusedFeatures(np.concatenate([phi1.phi, phi2.phi]))
