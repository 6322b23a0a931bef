"""Synthetic apical-view recordings with closed-form wall motion.

The cavity is bounded by two parabolic flanks meeting at a pointed apex,
``x = cx -/+ W * u * (2 - u)`` with ``u = (y - apex_y) / H``; a bright wall
band of fixed thickness surrounds it and the base (bottom) is open.
Each wall point moves along its end-diastolic inward normal by
``a(s) * sin(pi * t / T)``; ``a`` is constant over every segment's tracking
points, ramps linearly between segments and tapers to zero over the apical
cap so the apex never folds over.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .apoly import CAP_FRACTION, SEGMENT_LAYOUT, SLOTS, SPAN_FRACTIONS
from .dataio import (A2C, A4C, ANALYZED_SEGMENTS, VIEWS, EchoRecording, ManifestEntry,
                     SegmentStage, write_frames, write_manifest)
from .errors import ValidationError
from .geometry import cumulative_length

SIDES = ("left", "right")


@dataclass(frozen=True)
class Hypokinesis:
    side: str
    slot: str
    attenuation: float

    def __post_init__(self):
        if self.side not in SIDES:
            raise ValidationError(f"side must be left or right, got {self.side!r}")
        if self.slot not in SLOTS:
            raise ValidationError(f"slot must be one of {SLOTS}, got {self.slot!r}")
        if not 0 <= self.attenuation < 1:
            raise ValidationError("attenuation must lie in [0, 1)")


@dataclass(frozen=True)
class SynthConfig:
    size: tuple[int, int] = (96, 96)
    n_frames: int = 17
    center_x: float = 48.0
    base_y: float = 74.0
    height: float = 56.0  # apex -> base
    half_width: float = 18.0  # at the base
    wall_thickness: float = 5.0
    wall_intensity: float = 0.85
    cavity_intensity: float = 0.1
    background_intensity: float = 0.35
    noise: float = 0.0
    amplitude: float = 5.0
    hypokinesis: Hypokinesis | None = None
    seed: int = 0
    supersample: int = 4
    fps: float = 25.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValidationError("amplitude must be >= 0")
        if self.noise < 0:
            raise ValidationError("noise sigma must be >= 0")
        if self.n_frames < 3:
            raise ValidationError("need at least 3 frames per cycle")
        if self.height <= 0 or self.half_width <= 0:
            raise ValidationError("LV height and width must be positive")
        h, w = self.size
        apex_y = self.base_y - self.height
        margin = self.wall_thickness + 1
        if (apex_y - margin < 0 or self.base_y + 1 > h - 1
                or self.center_x - self.half_width - margin < 0
                or self.center_x + self.half_width + margin > w - 1):
            raise ValidationError("LV geometry exceeds image bounds")

    @property
    def apex_y(self):
        return self.base_y - self.height


@dataclass
class SynthTruth:
    label: int
    segment_points: dict  # kappa -> (T, N, 2)
    displacement: dict  # kappa -> (T,)
    side_lengths: tuple[float, float]
    stages: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "label": self.label,
            "side_lengths": list(self.side_lengths),
            "stages": {str(k): v for k, v in sorted(self.stages.items())},
            "segments": {
                str(k): {
                    "points": np.round(self.segment_points[k], 10).tolist(),
                    "displacement": np.round(self.displacement[k], 12).tolist(),
                }
                for k in sorted(self.segment_points)
            },
        }


def _side_curve(cfg: SynthConfig, side, n=1200):
    """Dense end-diastolic wall curve from base to apex plus inward normals."""
    u = np.linspace(1.0, 0.0, n)
    sign = -1.0 if side == "left" else 1.0
    x = cfg.center_x + sign * cfg.half_width * u * (2.0 - u)
    y = cfg.apex_y + cfg.height * u
    pts = np.column_stack([x, y])
    dxdu = sign * cfg.half_width * (2.0 - 2.0 * u)
    tangent = np.column_stack([dxdu, np.full(n, cfg.height)])
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    normal *= -sign  # towards the long axis
    return pts, normal


def _track_positions(length, n_points=5):
    """Arc positions (from base) of every segment's tracking points."""
    out = []
    for f0, f1 in SPAN_FRACTIONS:
        s0, s1 = f0 * length, f1 * length
        out.append(s0 + (np.arange(n_points) + 0.5) * (s1 - s0) / n_points)
    return out


def _amplitude_profile(cfg, side, length, positions):
    """a(s) knots: flat over each segment's points, linear ramps, zero at the apex."""
    amps = []
    for slot in SLOTS:
        a = cfg.amplitude
        hk = cfg.hypokinesis
        if hk is not None and hk.side == side and hk.slot == slot:
            a *= hk.attenuation
        amps.append(a)
    ks, vs = [0.0], [amps[0]]
    for pos, a in zip(positions, amps):
        ks += [pos[0], pos[-1]]
        vs += [a, a]
    ks.append(length)
    vs.append(0.0)
    return np.array(ks), np.array(vs), amps


def _side_motion(cfg, side):
    pts, normal = _side_curve(cfg, side)
    cum = cumulative_length(pts)
    length = float(cum[-1])
    positions = _track_positions(length)
    ks, vs, amps = _amplitude_profile(cfg, side, length, positions)
    amp = np.interp(cum, ks, vs)
    return pts, normal, cum, amp, positions, amps, length


def _phase(cfg):
    T = cfg.n_frames - 1
    return np.sin(np.pi * np.arange(cfg.n_frames) / T)


def _outward_offset(curve, distance, sign):
    """Polyline shifted by ``distance`` along its outward normal."""
    t = np.gradient(curve, axis=0)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    # curves run base -> apex; outward is away from the long axis
    normal = np.column_stack([t[:, 1], -t[:, 0]]) * sign
    return curve + distance * normal


def _fill(verts, shape, ss):
    """Rasterize a polygon given in frame pixels onto the supersampled grid."""
    cols = (verts[:, 0] + 0.5) * ss - 0.5
    rows = (verts[:, 1] + 0.5) * ss - 0.5
    canvas = Image.new("1", (shape[1], shape[0]), 0)
    ImageDraw.Draw(canvas).polygon(list(zip(cols.tolist(), rows.tolist())), fill=1)
    return np.array(canvas, dtype=bool)


def _render(cfg, left, right, rng):
    h, w = cfg.size
    ss = cfg.supersample
    shape = (h * ss, w * ss)
    cavity = _fill(np.vstack([left, right[::-1]]), shape, ss)
    # wall band: outward offsets of both flanks plus a round cap over the apex
    outer = np.vstack([_outward_offset(left, cfg.wall_thickness, 1.0),
                       _outward_offset(right, cfg.wall_thickness, -1.0)[::-1]])
    band = _fill(outer, shape, ss)
    hr_y = (np.arange(shape[0]) + 0.5) / ss - 0.5
    hr_x = (np.arange(shape[1]) + 0.5) / ss - 0.5
    ax, ay = left[-1]
    band |= (hr_y[:, None] - ay) ** 2 + (hr_x[None, :] - ax) ** 2 <= cfg.wall_thickness ** 2
    wall = band & ~cavity & (hr_y[:, None] <= cfg.base_y)
    img = np.full(shape, cfg.background_intensity)
    img[wall] = cfg.wall_intensity
    img[cavity] = cfg.cavity_intensity
    img = img.reshape(h, ss, w, ss).mean(axis=(1, 3))
    if cfg.noise > 0:
        img = img + rng.normal(0.0, cfg.noise, img.shape)
    return np.clip(img, 0.0, 1.0)


def default_roi(cfg: SynthConfig):
    h, w = cfg.size
    pad = cfg.wall_thickness + 6
    top = max(0, int(np.floor(cfg.apex_y)) - 2)
    bottom = min(h, int(np.floor(cfg.base_y)) + 1)
    left = max(0, int(np.floor(cfg.center_x - cfg.half_width - pad)))
    right = min(w, int(np.ceil(cfg.center_x + cfg.half_width + pad)) + 1)
    return top, left, bottom, right


def generate_recording(cfg: SynthConfig, view: str, subject_id="synth"):
    if view not in VIEWS:
        raise ValidationError(f"unknown view {view!r}")
    phase = _phase(cfg)
    rng = np.random.default_rng(cfg.seed)
    sides = {s: _side_motion(cfg, s) for s in SIDES}

    frames = []
    for p in phase:
        curves = [pts + (amp * p)[:, None] * normal
                  for (pts, normal, _, amp, *_rest) in (sides["left"], sides["right"])]
        frames.append(_render(cfg, curves[0], curves[1], rng))

    seg_points, disp, stages = {}, {}, {k: 1 for k in ANALYZED_SEGMENTS}
    lengths = []
    for side_idx, side in enumerate(SIDES):
        pts, normal, cum, amp, positions, amps, length = sides[side]
        lengths.append(length)
        kappas = SEGMENT_LAYOUT[view][side_idx]
        for kappa, slot, pos, a in zip(kappas, SLOTS, positions, amps):
            p0 = np.column_stack([np.interp(pos, cum, pts[:, 0]), np.interp(pos, cum, pts[:, 1])])
            n0 = np.column_stack([np.interp(pos, cum, normal[:, 0]),
                                  np.interp(pos, cum, normal[:, 1])])
            n0 /= np.linalg.norm(n0, axis=1, keepdims=True)
            seg_points[kappa] = p0[None] + (a * phase)[:, None, None] * n0[None]
            disp[kappa] = a * phase
            hk = cfg.hypokinesis
            if hk is not None and hk.side == side and hk.slot == slot:
                stages[kappa] = 2 if hk.attenuation > 0 else 3

    label = int(cfg.hypokinesis is not None)
    truth = SynthTruth(label, seg_points, disp, tuple(lengths), stages)
    recording = EchoRecording(subject_id, view, np.stack(frames), cfg.fps,
                              (0, cfg.n_frames - 1), default_roi(cfg))
    return recording, truth


@dataclass
class CohortItem:
    subject_id: str
    view: str
    config: SynthConfig
    recording: EchoRecording
    truth: SynthTruth


@dataclass
class Cohort:
    items: list
    manifest_path: Path | None = None

    def labels(self):
        """subject -> {view: label, 'fused': label}"""
        out = {}
        for it in self.items:
            out.setdefault(it.subject_id, {})[it.view] = it.truth.label
        for d in out.values():
            d["fused"] = int(any(d[v] for v in VIEWS if v in d))
        return out


# MI patients by affected view(s): both, A4C only, A2C only (60 / 20 / 8 of 88)
_AFFECTED_VIEWS = ((A4C, A2C), (A4C,), (A2C,))
_AFFECTED_P = np.array([60, 20, 8], dtype=float) / 88.0


def generate_cohort(n_healthy, n_mi, base: SynthConfig | None = None, seed=0,
                    out_dir=None, attenuation=0.3, fmt="pgm") -> Cohort:
    """Two views per subject with jittered size (+-10 %) and amplitude (+-20 %).

    MI subjects get one hypokinetic segment in the A4C view, the A2C view or
    both, in a 60 : 20 : 8 ratio.
    """
    if n_healthy < 0 or n_mi < 0 or n_healthy + n_mi < 10:
        raise ValidationError("need n_healthy + n_mi >= 10")
    base = base or SynthConfig()
    rng = np.random.default_rng(seed)
    n = n_healthy + n_mi
    is_mi = np.array([False] * n_healthy + [True] * n_mi)
    rng.shuffle(is_mi)
    width = max(3, len(str(n)))

    items = []
    for i in range(n):
        sid = f"s{i + 1:0{width}d}"
        size_f = rng.uniform(0.9, 1.1)
        affected = ()
        if is_mi[i]:
            affected = _AFFECTED_VIEWS[rng.choice(3, p=_AFFECTED_P)]
        for v_idx, view in enumerate(VIEWS):
            amp_f = rng.uniform(0.8, 1.2)
            dx = rng.uniform(-2.0, 2.0)
            hk = None
            if view in affected:
                hk = Hypokinesis(SIDES[rng.integers(2)], SLOTS[rng.integers(3)], attenuation)
            cfg = replace(base, height=base.height * size_f,
                          half_width=base.half_width * size_f,
                          center_x=base.center_x + dx, amplitude=base.amplitude * amp_f,
                          hypokinesis=hk, seed=int(rng.integers(2 ** 31)))
            rec, truth = generate_recording(cfg, view, sid)
            items.append(CohortItem(sid, view, cfg, rec, truth))

    cohort = Cohort(items)
    if out_dir is not None:
        cohort.manifest_path = write_cohort(cohort, out_dir, fmt)
    return cohort


def write_cohort(cohort: Cohort, out_dir, fmt="pgm"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # subject-level stages: each line carries all 12 analysed segments
    subject_stages = {}
    for it in cohort.items:
        st = subject_stages.setdefault(it.subject_id, {k: 1 for k in ANALYZED_SEGMENTS})
        own = set(SEGMENT_LAYOUT[it.view][0] + SEGMENT_LAYOUT[it.view][1])
        for k, s in it.truth.stages.items():
            if k in own:
                st[k] = s
    entries = []
    for it in cohort.items:
        rel = Path("frames") / f"{it.subject_id}_{it.view}"
        write_frames(it.recording.frames, out_dir / rel, fmt)
        stages = tuple(SegmentStage(k, subject_stages[it.subject_id][k])
                       for k in ANALYZED_SEGMENTS)
        entries.append(ManifestEntry(it.subject_id, it.view, out_dir / rel, it.recording.fps,
                                     it.recording.cycle, stages, it.recording.roi))
        truth = it.truth.to_dict()
        truth["config"] = _config_dict(it.config)
        truth_path = out_dir / "truth" / f"{it.subject_id}_{it.view}.json"
        truth_path.parent.mkdir(exist_ok=True)
        truth_path.write_text(json.dumps(truth, sort_keys=True))
    manifest = out_dir / "manifest.tsv"
    write_manifest(entries, manifest)
    return manifest


def _config_dict(cfg):
    d = asdict(cfg)
    d["size"] = list(cfg.size)
    return d
