"""Ridge-constrained two-phase (Chan-Vese) region evolution.

Conventions: images are indexed ``[row, col]``; geometric points are
``(x, y)`` = ``(col, row)``.  Wall curves are parameterized as ``x = p(y)``
with ascending power-basis coefficients (``x = sum(c[k] * y**k)``).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import skfmm
from PIL import Image
from numpy.polynomial import Polynomial
from scipy import ndimage as ndi
from scipy.linalg import solve_banded
from skimage.draw import polygon as draw_polygon

from .errors import SegmentationError, ValidationError

DEGREE = 4


@dataclass
class ChanVeseParams:
    mu: float = 0.25
    nu: float = 0.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    dt: float = 0.5
    max_iters: int = 200
    tol: float = 1e-3
    reinit_every: int = 1
    max_backtracks: int = 6

    def __post_init__(self):
        if self.mu < 0:
            raise ValidationError("mu must be >= 0")
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValidationError("lambda1 and lambda2 must be > 0")
        if self.dt <= 0:
            raise ValidationError("dt must be > 0")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if not 0 < self.tol < 1:
            raise ValidationError("tol must lie in (0, 1)")
        if self.reinit_every < 1:
            raise ValidationError("reinit_every must be >= 1")

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__}
        unknown = set(d or {}) - set(known)
        if unknown:
            raise ValidationError(f"unknown Chan-Vese parameters: {sorted(unknown)}")
        return cls(**known)


@dataclass
class RidgeConstraint:
    left_coeffs: np.ndarray
    right_coeffs: np.ndarray
    left_range: tuple[int, int]
    right_range: tuple[int, int]
    y_range: tuple[int, int]
    barrier: np.ndarray
    left_rms: float = 0.0
    right_rms: float = 0.0

    @property
    def interior(self) -> np.ndarray:
        return ~self.barrier

    @property
    def shape(self):
        return self.barrier.shape

    def left_x(self, y):
        return Polynomial(self.left_coeffs)(y)

    def right_x(self, y):
        return Polynomial(self.right_coeffs)(y)


@dataclass
class RegionMask:
    mask: np.ndarray
    iterations: int
    energy: float
    converged: bool
    warning: bool = False
    energy_trace: list = field(default_factory=list)


# --------------------------------------------------------------------------
# ridge detection


def default_roi(shape, fraction=0.6):
    h, w = shape
    m = (1.0 - fraction) / 2.0
    return (int(round(m * h)), int(round(m * w)), int(round((1 - m) * h)), int(round((1 - m) * w)))


def _refine_peak(prof, i):
    if 0 < i < len(prof) - 1:
        a, b, c = prof[i - 1], prof[i], prof[i + 1]
        denom = a - 2 * b + c
        if denom < 0:
            return i + 0.5 * (a - c) / denom
    return float(i)


def _row_ridges(prof, percentile, min_contrast):
    thr = np.percentile(prof, percentile)
    inner = prof[1:-1]
    is_max = (inner > prof[:-2]) & (inner >= prof[2:]) & (inner > thr)
    peaks = np.flatnonzero(is_max) + 1
    if len(peaks) < 2:
        return None
    best = None
    for a, b in zip(peaks[:-1], peaks[1:]):
        dip = prof[a:b + 1].min()
        if min(prof[a], prof[b]) - dip < min_contrast:
            continue
        if best is None or dip < best[0]:
            best = (dip, a, b)
    if best is None:
        return None
    _, a, b = best
    return _refine_peak(prof, a), _refine_peak(prof, b)


def detect_wall_ridges(frame, roi=None, sigma=2.0, percentile=70.0, min_contrast=0.1,
                       min_support=0.6):
    """Per-row bright-wall crests flanking the dark cavity.

    Returns ``(left, right)`` arrays of ``(x, y)`` points, one pair per row
    that shows a cavity dip between two crests above the row's
    ``percentile`` intensity.
    """
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise ValidationError("frame must be a 2-D intensity matrix")
    if roi is None:
        roi = default_roi(frame.shape)
    top, left, bottom, right = roi
    h, w = frame.shape
    if not (0 <= top < bottom <= h and 0 <= left < right <= w):
        raise ValidationError(f"roi {roi} outside frame {h}x{w}")
    if bottom - top < 20:
        raise ValidationError("roi must span at least 20 rows")
    if right - left < 5:
        raise ValidationError("roi too narrow")

    smooth = ndi.gaussian_filter(frame, sigma, mode="nearest")
    lpts, rpts = [], []
    for row in range(top, bottom):
        found = _row_ridges(smooth[row, left:right], percentile, min_contrast)
        if found is None:
            continue
        lpts.append((left + found[0], row))
        rpts.append((left + found[1], row))

    if len(lpts) < min_support * (bottom - top):
        raise SegmentationError(
            f"insufficient ridge support: {len(lpts)} of {bottom - top} rows show both walls")
    return np.array(lpts, dtype=float), np.array(rpts, dtype=float)


# --------------------------------------------------------------------------
# ridge polynomials


def fit_quartic(points):
    """Least-squares ``x = p(y)`` of degree 4; returns (coeffs, rms)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError("points must be an (n, 2) array of (x, y)")
    if len(pts) < 2 * DEGREE + 1:
        raise ValidationError(f"need at least {2 * DEGREE + 1} points, got {len(pts)}")
    x, y = pts[:, 0], pts[:, 1]
    if len(np.unique(y)) < DEGREE + 1:
        raise ValidationError("rank-deficient fit: fewer than 5 distinct y values")
    poly = Polynomial.fit(y, x, DEGREE)
    coeffs = poly.convert().coef
    coeffs = np.pad(coeffs, (0, DEGREE + 1 - len(coeffs)))
    rms = float(np.sqrt(np.mean((poly(y) - x) ** 2)))
    return coeffs, rms


def _interior_from_curves(shape, lc, rc, y0, y1):
    h, w = shape
    ys = np.arange(y0, y1 + 1)
    xl = np.rint(Polynomial(lc)(ys)).astype(int)
    xr = np.rint(Polynomial(rc)(ys)).astype(int)
    widths = xr - xl - 1
    ok = widths >= 1
    if not ok.any():
        raise SegmentationError("ridge curves leave no interior")
    # keep the contiguous block of rows around the widest row
    centre = int(np.argmax(widths))
    lo = centre
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    hi = centre
    while hi < len(ys) - 1 and ok[hi + 1]:
        hi += 1
    interior = np.zeros(shape, dtype=bool)
    for i in range(lo, hi + 1):
        row = ys[i]
        if not 0 <= row < h:
            continue
        a, b = max(xl[i] + 1, 0), min(xr[i] - 1, w - 1)
        if a <= b:
            interior[row, a:b + 1] = True
    return interior, (int(ys[lo]), int(ys[hi]))


def fit_ridge_polynomials(left_pts, right_pts, shape, top=None,
                          extend=0.2) -> RidgeConstraint:
    """Quartic ridges and the barrier outside the region they enclose.

    Near the apex the two walls blur into one crest, so the curves are
    extrapolated upwards (by at most ``extend`` of the ridge span, never
    above row ``top``) until they cross.
    """
    left_pts = np.asarray(left_pts, dtype=float)
    right_pts = np.asarray(right_pts, dtype=float)
    lc, lrms = fit_quartic(left_pts)
    rc, rrms = fit_quartic(right_pts)
    lrange = (int(np.ceil(left_pts[:, 1].min())), int(np.floor(left_pts[:, 1].max())))
    rrange = (int(np.ceil(right_pts[:, 1].min())), int(np.floor(right_pts[:, 1].max())))
    y0, y1 = max(lrange[0], rrange[0]), min(lrange[1], rrange[1])
    if y0 >= y1:
        raise SegmentationError("left and right ridges share no vertical range")
    y_ext = y0 - int(np.floor(extend * (y1 - y0)))
    y_ext = max(y_ext, 0 if top is None else int(top))
    interior, yr = _interior_from_curves(shape, lc, rc, min(y_ext, y0), y1)
    _, ncomp = ndi.label(interior)
    if ncomp != 1:
        raise SegmentationError(f"ridge interior is not connected ({ncomp} components)")
    return RidgeConstraint(lc, rc, lrange, rrange, yr, ~interior, lrms, rrms)


# --------------------------------------------------------------------------
# initial mask


def _interior_outline(interior):
    rows = np.flatnonzero(interior.any(axis=1))
    lefts, rights = [], []
    for r in rows:
        cols = np.flatnonzero(interior[r])
        lefts.append((cols[0] - 0.5, r))
        rights.append((cols[-1] + 0.5, r))
    top, bottom = rows[0], rows[-1]
    verts = [(lefts[0][0], top - 0.5)] + lefts + [(lefts[-1][0], bottom + 0.5),
                                                  (rights[-1][0], bottom + 0.5)]
    verts += rights[::-1] + [(rights[0][0], top - 0.5)]
    return np.array(verts, dtype=float)


def init_mask(constraint: RidgeConstraint, scale: float = 0.5) -> np.ndarray:
    """The constraint interior shrunk about its centroid (a "mini-version" of it)."""
    if not 0 < scale < 1:
        raise ValidationError(f"scale must lie in (0, 1), got {scale}")
    interior = constraint.interior
    if interior.sum() < 25:
        raise SegmentationError("constraint interior too small to scale (area < 25 px)")
    rr, cc = np.nonzero(interior)
    centroid = np.array([cc.mean(), rr.mean()])
    verts = centroid + scale * (_interior_outline(interior) - centroid)
    mask = np.zeros(interior.shape, dtype=bool)
    pr, pc = draw_polygon(verts[:, 1], verts[:, 0], shape=interior.shape)
    mask[pr, pc] = True
    mask &= ndi.binary_erosion(interior)
    if not mask.any():
        raise SegmentationError("scaled initial mask is empty")
    return mask


# --------------------------------------------------------------------------
# Chan-Vese evolution (phi > 0 inside)


def signed_distance(mask):
    mask = np.asarray(mask, dtype=bool)
    inside = ndi.distance_transform_edt(mask) - 0.5
    outside = ndi.distance_transform_edt(~mask) - 0.5
    return np.where(mask, inside, -outside)


def redistance(phi):
    """Signed distance to the zero level set of ``phi`` (sub-pixel, by fast marching).

    Signs are kept, so the region ``phi > 0`` is unchanged.
    """
    phi = np.asarray(phi, dtype=float)
    if (phi > 0).all() or (phi <= 0).all():
        return signed_distance(phi > 0)
    try:
        d = np.asarray(skfmm.distance(phi, dx=1.0), dtype=float)
    except ValueError:
        return signed_distance(phi > 0)
    # fast marching zeroes exact-zero pixels; keep them outside
    return np.where(phi > 0, np.maximum(d, 1e-9), np.minimum(d, 0.0))


def curvature(phi, eps=1e-8):
    """div(grad phi / |grad phi|) on a staggered grid.

    Forward differences for the normalized gradient and backward differences
    for the divergence, so odd/even oscillations are penalized (a centred
    scheme cannot see them).
    """
    p = np.pad(phi, 1, mode="edge")
    c = p[1:-1, 1:-1]
    # x-normal on the (i, j + 1/2) faces, y-normal on the (i + 1/2, j) faces
    dx_f = p[1:-1, 2:] - c
    dy_x = 0.25 * (p[2:, 1:-1] + p[2:, 2:] - p[:-2, 1:-1] - p[:-2, 2:])
    nx = dx_f / np.sqrt(dx_f ** 2 + dy_x ** 2 + eps)
    dy_f = p[2:, 1:-1] - c
    dx_y = 0.25 * (p[1:-1, 2:] + p[2:, 2:] - p[1:-1, :-2] - p[2:, :-2])
    ny = dy_f / np.sqrt(dy_f ** 2 + dx_y ** 2 + eps)
    nx_p = np.pad(nx, ((0, 0), (1, 0)), mode="edge")
    ny_p = np.pad(ny, ((1, 0), (0, 0)), mode="edge")
    kappa = (nx_p[:, 1:] - nx_p[:, :-1]) + (ny_p[1:, :] - ny_p[:-1, :])
    return np.clip(kappa, -1.0, 1.0)


def _implicit_rows(phi, g, coef):
    """Solve (1 - 2 coef A) u = phi along rows, A = d/dx (g d/dx), Neumann ends.

    Rows are independent, so they are chained into one banded system.
    """
    gh = 0.5 * (g[:, 1:] + g[:, :-1])  # conductivity between columns j and j+1
    w = np.zeros_like(phi)
    w[:, :-1] = 2.0 * coef * gh  # coupling to the right neighbour; 0 at row ends
    w = w.ravel()
    ab = np.empty((3, w.size))
    ab[0, 0] = 0.0
    ab[0, 1:] = -w[:-1]
    ab[2, :-1] = -w[:-1]
    ab[2, -1] = 0.0
    ab[1] = 1.0 + w
    ab[1, 1:] += w[:-1]
    return solve_banded((1, 1), ab, phi.ravel()).reshape(phi.shape)


def curvature_flow(phi, coef, eps=1e-2):
    """One semi-implicit (AOS) step of ``phi_t = div(grad phi / |grad phi|)``.

    ``coef`` is the step length; the diffusivity ``1/|grad phi|`` is lagged.
    Unconditionally stable; planar level sets do not move away from the
    (Neumann) borders.
    """
    if coef <= 0:
        return phi
    gy, gx = np.gradient(phi)
    g = 1.0 / np.sqrt(gx ** 2 + gy ** 2 + eps ** 2)
    u_x = _implicit_rows(phi, g, coef)
    u_y = _implicit_rows(phi.T, g.T, coef).T
    return 0.5 * (u_x + u_y)


def heaviside(phi, eps=1.0):
    """Compactly supported smooth Heaviside: 0 below -eps, 1 above eps."""
    z = np.clip(phi / eps, -1.0, 1.0)
    return 0.5 * (1.0 + z + np.sin(np.pi * z) / np.pi)


class _Energy:
    """Regularized two-phase energy of a level set over ``domain``.

    E = mu * TV(H(phi)) + nu * sum H + (l1 * SSE_in + l2 * SSE_out) / scale,
    where the SSE terms weight pixels by H and 1 - H and ``scale`` is the
    squared intensity range over the domain, so E is invariant to positive
    affine intensity changes.  With a ridge constraint the domain is its
    interior: barrier pixels can never join the region, so they take no
    part in the region means.
    """

    def __init__(self, image, params, domain=None):
        self.domain = np.ones(image.shape, dtype=bool) if domain is None else domain
        self.I = image[self.domain]
        rng = float(self.I.max() - self.I.min())
        self.scale = rng * rng if rng > 0 else 1.0
        self.p = params

    def means(self, phi):
        h = heaviside(phi[self.domain])
        w_in, w_out = h.sum(), (1.0 - h).sum()
        c1 = float(h @ self.I / w_in) if w_in > 0 else 0.0
        c2 = float((1.0 - h) @ self.I / w_out) if w_out > 0 else c1
        return c1, c2

    def __call__(self, phi):
        H = heaviside(phi)
        h = H[self.domain]
        c1, c2 = self.means(phi)
        fid = (self.p.lambda1 * h @ (self.I - c1) ** 2
               + self.p.lambda2 * (1.0 - h) @ (self.I - c2) ** 2) / self.scale
        dx = np.diff(H, axis=1, append=H[:, -1:])
        dy = np.diff(H, axis=0, append=H[-1:, :])
        length = float(np.sqrt(dx ** 2 + dy ** 2).sum())
        return self.p.mu * length + self.p.nu * float(H.sum()) + float(fid)


def evolve_chan_vese(frame, init, constraint: RidgeConstraint | None = None,
                     params: ChanVeseParams | None = None) -> RegionMask:
    """Evolve a two-phase piecewise-constant level set from ``init``.

    Barrier pixels of ``constraint`` are clamped to ``phi <= -1`` after
    every update.  Each step moves the front by at most ``dt`` pixels under
    the region force, scaled by the fidelity contrast ``(c2 - c1)^2``,
    followed by a semi-implicit curvature step of matching length; the step is halved until the regularized
    energy does not increase, and evolution stops when no such step exists,
    when the fraction of pixels changing side over ``ceil(2/dt)`` steps (two
    pixels of front travel) drops below ``tol``, or at ``max_iters``
    (``warning`` set).  Redistancing is part of the step that is checked
    against the energy, so the trace is non-increasing.
    """
    params = params or ChanVeseParams()
    I = np.asarray(frame, dtype=float)
    init = np.asarray(init, dtype=bool)
    if init.shape != I.shape:
        raise ValidationError("init mask and frame shapes differ")
    barrier = constraint.barrier if constraint is not None else np.zeros(I.shape, dtype=bool)
    if barrier.shape != I.shape:
        raise ValidationError("constraint and frame shapes differ")
    inside = init & ~barrier
    if not inside.any():
        raise ValidationError("initial mask is empty inside the constraint interior")
    if constraint is not None and (init & barrier).any():
        raise ValidationError("initial mask crosses the constraint barrier")

    full_shape = I.shape
    crop = (slice(None), slice(None))
    if constraint is not None:
        # everything outside the interior box is clamped barrier: evolve on the box
        rows = np.flatnonzero((~barrier).any(axis=1))
        cols = np.flatnonzero((~barrier).any(axis=0))
        pad = 3
        crop = (slice(max(rows[0] - pad, 0), rows[-1] + pad + 1),
                slice(max(cols[0] - pad, 0), cols[-1] + pad + 1))
        I, barrier, inside = I[crop], barrier[crop], inside[crop]
    n_pixels = full_shape[0] * full_shape[1]

    energy = _Energy(I, params, ~barrier if constraint is not None else None)
    # sign changes are counted over two pixels of full-speed front travel;
    # single-step counts stall while phi catches up
    window = 2.0
    travel = 0.0
    history = [(0.0, inside)]

    def clamp(p):
        p[barrier] = np.minimum(p[barrier], -1.0)
        return p

    phi = clamp(signed_distance(inside))
    E = energy(phi)
    trace = [E]
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        c1, c2 = energy.means(phi)
        fid = (-params.lambda1 * (I - c1) ** 2 + params.lambda2 * (I - c2) ** 2) / energy.scale
        force = fid - params.nu
        # a pixel at either region mean moves the full dt; brighter or darker
        # pixels saturate at dt
        vref = max(params.lambda1, params.lambda2) * (c2 - c1) ** 2 / energy.scale
        if vref <= 1e-12:
            band = np.abs(phi) <= 1.5
            vref = np.abs(force[band]).max() if band.any() else np.abs(force).max()
        if vref <= 0:
            converged = True
            it -= 1
            break
        step = np.clip(force / vref, -1.0, 1.0)

        # region force explicitly, curvature semi-implicitly (stable for any tau);
        # the curvature step flattens phi, so every reinit_every steps the
        # candidate is redistanced before its energy is measured
        reinit = it % params.reinit_every == 0
        tau = params.dt
        accepted = None
        for _ in range(params.max_backtracks + 1):
            cand = clamp(curvature_flow(phi + tau * step, tau * params.mu / vref))
            if (cand > 0).any():
                if reinit:
                    cand = clamp(redistance(cand))
                E_new = energy(cand)
                if E_new <= E:
                    accepted = (cand, E_new)
                    break
            tau *= 0.5
        if accepted is None:
            # no descent step at the finest scale: stationary
            converged = True
            it -= 1
            break

        phi, E = accepted
        inside = phi > 0
        trace.append(E)
        travel += tau
        history.append((travel, inside))
        while len(history) > 1 and travel - history[1][0] >= window:
            history.pop(0)
        changed = int(np.count_nonzero(history[0][1] != inside))
        if travel - history[0][0] >= window and changed / n_pixels < params.tol:
            converged = True
            break

    if not inside.any():
        raise SegmentationError("region collapsed to empty")
    warned = not converged
    if warned:
        warnings.warn(f"Chan-Vese reached max_iters={params.max_iters} without converging",
                      RuntimeWarning, stacklevel=2)
    mask = np.zeros(full_shape, dtype=bool)
    mask[crop] = inside
    return RegionMask(mask, it, float(E), converged, warned, trace)


def segment_region(frame, roi=None, params=None, scale=0.5):
    """Ridge detection -> ridge polynomials -> init -> constrained evolution."""
    if roi is None:
        roi = default_roi(np.shape(frame))
    left, right = detect_wall_ridges(frame, roi)
    constraint = fit_ridge_polynomials(left, right, np.shape(frame), top=roi[0])
    init = init_mask(constraint, scale)
    region = evolve_chan_vese(frame, init, constraint, params)
    return region, constraint


def write_debug(region: RegionMask, constraint: RidgeConstraint | None, out_dir, stem="frame"):
    """Converged mask / barrier as PGM and the energy trace as CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    Image.fromarray(region.mask.astype(np.uint8) * 255).save(out_dir / f"{stem}_mask.pgm")
    if constraint is not None:
        Image.fromarray(constraint.barrier.astype(np.uint8) * 255).save(
            out_dir / f"{stem}_barrier.pgm")
    with open(out_dir / f"{stem}_energy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "energy"])
        for i, e in enumerate(region.energy_trace):
            w.writerow([i, repr(float(e))])
