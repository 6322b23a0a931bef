import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import Polynomial
from scipy.integrate import quad

from echomi.apoly import (ActivePolynomialBoundary, boundary_from_region,
                          extract_ordered_contour, fit_active_polynomials, partition_segments,
                          split_at_apex, write_boundary_csv, write_coefficients_json)
from echomi.errors import GeometryError, ValidationError
from echomi.geometry import QuarticCurve


def u_shape():
    """Filled upright U: a solid arch over a flat base, like an LV cavity."""
    yy, xx = np.mgrid[:80, :70]
    top = ((xx - 35) / 25.0) ** 2 + ((yy - 35) / 25.0) ** 2 <= 1
    return (top & (yy <= 35)) | ((yy > 35) & (yy < 70) & (xx >= 10) & (xx <= 60))


def straight_boundary(L=70.0, R=70.0, base=80.0):
    lc = np.array([30.0, 0, 0, 0, 0])
    rc = np.array([70.0, 0, 0, 0, 0])
    ly, ry = (base, base - L), (base - R, base)
    lcurve, rcurve = QuarticCurve(lc, *ly), QuarticCurve(rc, *ry)
    return ActivePolynomialBoundary(np.array([50.0, base - L]), lc, rc, ly, ry,
                                    lcurve.polyline(), rcurve.polyline(), L, R)


def arc_length(coeffs, y0, y1):
    d = Polynomial(coeffs).deriv()
    return quad(lambda y: np.sqrt(1 + d(y) ** 2), min(y0, y1), max(y0, y1), limit=200)[0]


# ---------------------------------------------------------------- contour

def test_u_shape_runs_tip_to_tip():
    c = extract_ordered_contour(u_shape())
    pts = c.points
    assert not c.multiple_components
    # bottom-left tip -> over the arch -> bottom-right tip
    assert pts[0][0] < 12 and pts[0][1] > 66
    assert pts[-1][0] > 58 and pts[-1][1] > 66
    top = np.argmin(pts[:, 1])
    assert 0 < top < len(pts) - 1
    assert pts[top][1] < 15


def test_two_blobs_trace_largest():
    m = np.zeros((60, 60), dtype=bool)
    m[10:50, 10:30] = True
    m[20:25, 40:45] = True
    with pytest.warns(RuntimeWarning, match="components"):
        c = extract_ordered_contour(m)
    assert c.multiple_components
    assert c.points[:, 0].max() < 31


def test_border_touch():
    with pytest.raises(GeometryError, match="border"):
        extract_ordered_contour(np.ones((30, 30), dtype=bool))


def test_empty_region():
    with pytest.raises(ValidationError):
        extract_ordered_contour(np.zeros((30, 30), dtype=bool))


def test_contour_clockwise_from_left_base():
    m = np.zeros((60, 60), dtype=bool)
    m[10:50, 15:45] = True
    pts = extract_ordered_contour(m).points
    assert pts[0][0] < 30 and pts[-1][0] > 30
    # up the left wall first
    assert pts[5][1] < pts[0][1]


# ---------------------------------------------------------------- apex split

def test_parabola_apex():
    x = np.arange(-20.0, 21.0)
    pts = np.column_stack([x + 50, 10 + 0.1 * x ** 2])
    left, right, apex = split_at_apex(pts)
    np.testing.assert_allclose(apex, [50, 10])
    assert abs(len(left) - len(right)) <= 1


def test_plateau_apex_at_midpoint():
    xs = np.arange(0.0, 31.0)
    ys = np.concatenate([np.linspace(30, 11, 12), np.full(7, 10.0), np.linspace(11, 30, 12)])
    left, right, apex = split_at_apex(np.column_stack([xs, ys]))
    np.testing.assert_allclose(apex, [15, 10])


def test_diagonal_has_no_apex():
    t = np.arange(40.0)
    with pytest.raises(GeometryError, match="apex split"):
        split_at_apex(np.column_stack([t, 50 - t]))


def test_short_contour():
    with pytest.raises(GeometryError, match="at least 18"):
        split_at_apex(np.zeros((10, 2)))


# ---------------------------------------------------------------- active polynomials

LC = np.array([10.0, 0.9, -0.012, 5e-5, 1e-7])
RC = np.array([90.0, -0.9, 0.012, -5e-5, -1e-7])


def dense_part(coeffs, y0, y1, n=400):
    y = np.linspace(y0, y1, n)
    return np.column_stack([Polynomial(coeffs)(y), y])


def test_exact_quartic_recovery():
    left = dense_part(LC, 80, 10)
    right = dense_part(RC, 10, 80)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = fit_active_polynomials(left, right)
    for fitted, true in ((b.left_coeffs, LC), (b.right_coeffs, RC)):
        np.testing.assert_allclose(fitted, true, rtol=1e-6)
    assert abs(b.L - arc_length(LC, 80, 10)) <= 0.005 * arc_length(LC, 80, 10)
    assert abs(b.R - arc_length(RC, 10, 80)) <= 0.005 * arc_length(RC, 10, 80)


def test_jagged_part_is_smoothed():
    y = np.arange(80.0, 9.0, -1.0)
    clean = Polynomial(LC)(y)
    jag = clean + np.where(np.arange(len(y)) % 2 == 0, 1.0, -1.0)
    right = dense_part(RC, 10, 80)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = fit_active_polynomials(np.column_stack([jag, y]), right)
    dev = np.abs(b.left_polyline[:, 0] - Polynomial(LC)(b.left_polyline[:, 1]))
    assert dev.max() <= 1.0


def test_horizontal_part_is_ill_posed():
    flat = np.column_stack([np.arange(30.0), np.full(30, 20.0)])
    with pytest.raises(GeometryError, match="ill-posed"):
        fit_active_polynomials(flat, dense_part(RC, 10, 80))


def test_boundary_roundtrip(tmp_path):
    b = straight_boundary()
    d = b.to_dict()
    b2 = ActivePolynomialBoundary.from_dict(d)
    assert abs(b2.L - b.L) < 1e-9 and np.allclose(b2.left_coeffs, b.left_coeffs)
    write_boundary_csv(b, tmp_path / "b.csv")
    write_coefficients_json(b, tmp_path / "b.json")
    assert (tmp_path / "b.csv").read_text().startswith("side,index,x,y")


# ---------------------------------------------------------------- segments

def test_partition_spans_70px():
    segs = partition_segments(straight_boundary(), "A4C")
    assert len(segs) == 6
    widths = {s.kappa: s.span[1] - s.span[0] for s in segs}
    np.testing.assert_allclose([widths[3], widths[9], widths[14]], [20, 20, 10], atol=1e-9)
    np.testing.assert_allclose([widths[6], widths[12], widths[16]], [20, 20, 10], atol=1e-9)
    # excluded apical cap: 70 - 50 = 20 px per side
    assert max(s.span[1] for s in segs) == pytest.approx(50.0)


@pytest.mark.parametrize("view,kappas", [("A4C", (3, 9, 14, 16, 12, 6)),
                                         ("A2C", (4, 10, 15, 13, 7, 1))])
def test_partition_kappa_order(view, kappas):
    assert tuple(s.kappa for s in partition_segments(straight_boundary(), view)) == kappas


def test_segment_points_lie_in_spans():
    b = straight_boundary()
    for s in partition_segments(b, "A4C"):
        y_base = 80.0
        dist = y_base - s.points[:, 1]
        assert (dist >= s.span[0] - 1e-9).all() and (dist <= s.span[1] + 1e-9).all()
        assert len(s.points) == 5


def test_short_side_rejected():
    with pytest.raises(GeometryError):
        partition_segments(straight_boundary(L=10.0, R=70.0), "A4C")


@settings(max_examples=50, deadline=None)
@given(st.floats(20, 60), st.floats(-0.5, 0.5), st.floats(-3e-3, 3e-3), st.floats(40, 70))
def test_spans_sum_to_side_length(x0, slope, curv, height):
    lc = np.array([x0, slope, curv, 0, 0])
    rc = np.array([x0 + 40, -slope, -curv, 0, 0])
    base = 85.0
    ly, ry = (base, base - height), (base - height, base)
    lcurve, rcurve = QuarticCurve(lc, *ly), QuarticCurve(rc, *ry)
    b = ActivePolynomialBoundary(np.array([x0 + 20, base - height]), lc, rc, ly, ry,
                                 lcurve.polyline(), rcurve.polyline(), lcurve.length,
                                 rcurve.length)
    segs = partition_segments(b, "A2C")
    for side, length in (("left", lcurve.length), ("right", rcurve.length)):
        spans = sorted(s.span for s in segs if s.side == side)
        total = sum(s1 - s0 for s0, s1 in spans) + (length - spans[-1][1])
        assert abs(total - length) <= 1.0
        np.testing.assert_allclose([s1 - s0 for s0, s1 in spans],
                                   np.array([2, 2, 1]) / 7 * length, atol=1e-9)


def test_boundary_from_synthetic_region():
    m = np.zeros((100, 100), dtype=bool)
    yy, xx = np.mgrid[:100, :100]
    m[((xx - 50) / 20.0) ** 2 + ((yy - 80) / 60.0) ** 2 <= 1] = True
    m[80:] = False
    b = boundary_from_region(m)
    assert abs(b.apex[1] - 20) <= 1 and abs(b.apex[0] - 50) <= 1
    assert abs(b.L - b.R) <= 2
