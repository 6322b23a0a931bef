"""Arc-length helpers for polylines and ``x = p(y)`` curves."""

import numpy as np
from numpy.polynomial import Polynomial


def cumulative_length(pts):
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        return np.zeros(len(pts))
    seg = np.hypot(*np.diff(pts, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def sample_at(pts, s):
    """Points at arc-length positions ``s`` along polyline ``pts``."""
    pts = np.asarray(pts, dtype=float)
    cum = cumulative_length(pts)
    s = np.clip(np.asarray(s, dtype=float), 0.0, cum[-1])
    return np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])


def resample_equal(pts, n):
    """``n`` points at equal arc-length spacing, endpoints included."""
    total = cumulative_length(pts)[-1]
    return sample_at(pts, np.linspace(0.0, total, n))


class QuarticCurve:
    """``x = p(y)`` traversed from ``y0`` to ``y1`` with an arc-length lookup table."""

    def __init__(self, coeffs, y0, y1, resolution=4000):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.poly = Polynomial(self.coeffs)
        self.y0, self.y1 = float(y0), float(y1)
        self._y = np.linspace(self.y0, self.y1, resolution + 1)
        self._x = self.poly(self._y)
        self._cum = cumulative_length(np.column_stack([self._x, self._y]))

    @property
    def length(self):
        return float(self._cum[-1])

    def at(self, s):
        """Points at arc-length positions ``s`` measured from ``y0``."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        y = np.interp(s, self._cum, self._y)
        return np.column_stack([self.poly(y), y])

    def polyline(self, step=1.0):
        n = int(np.floor(self.length / step))
        s = np.arange(n + 1) * step
        if self.length - s[-1] > 1e-9:
            s = np.append(s, self.length)
        return self.at(s)
