import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echomi.dataio import VIEW_SEGMENTS
from echomi.errors import GeometryError, ValidationError
from echomi.kinematics import (IntervalTrace, SegmentTrace, ViewFeatures, concat_features,
                               displacement_curve, features_from_points, interval_curve,
                               opposite_of, segment_feature, view_feature_vector, view_traces)


def frames(base, shifts):
    base = np.asarray(base, dtype=float)
    return np.stack([base + np.asarray(s, dtype=float) for s in shifts])


def test_static_points_zero_displacement(rng):
    pts = rng.normal(size=(5, 2))
    D = displacement_curve(frames(pts, [(0, 0)] * 6)).D
    assert np.array_equal(D, np.zeros(6))


def test_three_four_five():
    pts = np.array([[0.0, 0.0], [10.0, 2.0], [4.0, 7.0]])
    D = displacement_curve(frames(pts, [(0, 0), (3, 4)])).D
    assert D[0] == 0.0 and abs(D[1] - 5.0) <= 1e-9


def test_rotated_unit_circle():
    a = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    p0 = np.column_stack([np.cos(a), np.sin(a)])
    p1 = np.column_stack([-p0[:, 1], p0[:, 0]])
    D = displacement_curve(np.stack([p0, p1])).D
    assert abs(D[1] - np.sqrt(2)) <= 1e-9


def test_interval_cases():
    a = frames([[0.0, 0.0], [1.0, 5.0]], [(0, 0), (1, 1)])
    assert np.allclose(interval_curve(a, a).I, 0)
    assert np.allclose(interval_curve(a, a + [10.0, 0.0]).I, 10, atol=1e-9)
    assert np.allclose(interval_curve(a, a + [3.0, -4.0]).I, 7, atol=1e-9)


def test_point_count_mismatch():
    with pytest.raises(ValidationError):
        displacement_curve([np.zeros((5, 2)), np.zeros((4, 2))])
    with pytest.raises(ValidationError):
        interval_curve(np.zeros((2, 5, 2)), np.zeros((2, 4, 2)))


def test_feature_arithmetic():
    f = segment_feature(SegmentTrace(3, np.array([0.0, 2.0, 1.0])),
                        IntervalTrace((3, 6), np.array([12.0, 10.0, 11.0])))
    assert abs(f - 0.2) <= 1e-9
    assert segment_feature(SegmentTrace(3, np.zeros(4)), IntervalTrace((3, 6), np.full(4, 9.0))) == 0


def test_feature_from_rigid_translation():
    pts = np.array([[0.0, 0.0], [2.0, 1.0]])
    tr = displacement_curve(frames(pts, [(0, 0), (3, 4), (0, 0)]))
    f = segment_feature(tr, IntervalTrace((0, 0), np.full(3, 20.0)))
    # brute-force max/min scan
    assert abs(f - max(tr.D) / 20.0) <= 1e-9 and abs(f - 0.25) <= 1e-9


def test_touching_walls():
    with pytest.raises(GeometryError):
        segment_feature(SegmentTrace(3, np.ones(3)), IntervalTrace((3, 6), np.array([4.0, 0.0, 4.0])))


def test_feature_above_one_warns():
    with pytest.warns(RuntimeWarning, match="exceeds 1"):
        segment_feature(SegmentTrace(3, np.array([0.0, 8.0])), IntervalTrace((3, 6), np.full(2, 4.0)))


def ventricle_points(view, n_frames=9, n=5, amps=None, seed=0):
    """Six segments on two opposite walls, each moving along x with its own amplitude."""
    g = np.random.default_rng(seed)
    kappas = VIEW_SEGMENTS[view]
    amps = amps or {k: a for k, a in zip(kappas, g.uniform(1, 4, 6))}
    phase = np.sin(np.linspace(0, np.pi, n_frames))
    pts = {}
    for pos, k in enumerate(kappas):
        left = pos < 3
        y = 70 - 15 * (pos if left else 5 - pos) - np.arange(n)
        x0 = 30.0 if left else 70.0
        sign = 1.0 if left else -1.0
        base = np.column_stack([np.full(n, x0), y])
        pts[k] = np.stack([base + [sign * amps[k] * p, 0.0] for p in phase])
    return pts, amps


@pytest.mark.parametrize("view", ["A4C", "A2C"])
def test_output_order(view):
    pts, amps = ventricle_points(view)
    phi = features_from_points(pts, view)
    assert tuple(phi.by_segment) == VIEW_SEGMENTS[view]
    assert len(set(np.round(phi.phi, 9))) == 6
    # each slot holds the feature computed from that segment's own points
    traces, intervals = view_traces(pts, view)
    for k, f in phi.by_segment.items():
        assert f == segment_feature(traces[k], intervals[k])


def test_a2c_pairing_matches_mirror():
    # brute force: mirror positions in the ordered list pair up (i <-> 5 - i)
    for view in ("A4C", "A2C"):
        ks = VIEW_SEGMENTS[view]
        mirror = {ks[i]: ks[5 - i] for i in range(6)}
        assert opposite_of(view) == mirror
    assert opposite_of("A2C")[4] == 1 and opposite_of("A4C")[3] == 6

    pts, _ = ventricle_points("A2C")
    traces, intervals = view_traces(pts, "A2C")
    expected = interval_curve(pts[4], pts[1]).I
    assert np.allclose(intervals[4].I, expected)
    f4 = features_from_points(pts, "A2C").by_segment[4]
    assert abs(f4 - max(traces[4].D) / min(expected)) <= 1e-12


def test_missing_segment():
    pts, _ = ventricle_points("A4C")
    del pts[14]
    with pytest.raises(ValidationError, match="missing"):
        view_traces(pts, "A4C")


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 10), st.integers(0, 1000))
def test_translation_and_scale_invariance(dx, dy, s, seed):
    pts, _ = ventricle_points("A4C", seed=seed)
    f0 = features_from_points(pts, "A4C").phi
    moved = {k: v + [dx, dy] for k, v in pts.items()}
    scaled = {k: v * s for k, v in pts.items()}
    np.testing.assert_allclose(features_from_points(moved, "A4C").phi, f0, atol=1e-9)
    np.testing.assert_allclose(features_from_points(scaled, "A4C").phi, f0, atol=1e-9)


def test_feature_is_max_over_min():
    pts, _ = ventricle_points("A4C", seed=3)
    traces, intervals = view_traces(pts, "A4C")
    phi = view_feature_vector(traces, intervals, "A4C")
    for k, f in phi.by_segment.items():
        assert abs(f - traces[k].D.max() / intervals[k].I.min()) <= 1e-9


def test_concat():
    a = ViewFeatures("A4C", np.arange(1, 7) / 10)
    b = ViewFeatures("A2C", np.arange(7, 13) / 10)
    np.testing.assert_allclose(concat_features(a, b).F, np.arange(1, 13) / 10)
    with pytest.raises(ValidationError):
        concat_features(b, a)
    z = concat_features(ViewFeatures("A4C", np.zeros(6)), ViewFeatures("A2C", np.zeros(6)))
    assert np.array_equal(z.F, np.zeros(12))
