"""Overlays, displacement charts and CSV exports for processed recordings."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .dataio import VIEW_SEGMENTS, to_uint8

# one fixed colour per analysed segment
SEGMENT_COLORS = {
    1: (230, 25, 75), 3: (60, 180, 75), 4: (255, 225, 25), 6: (0, 130, 200),
    7: (245, 130, 48), 9: (145, 30, 180), 10: (70, 240, 240), 12: (240, 50, 230),
    13: (210, 245, 60), 14: (250, 190, 212), 15: (0, 128, 128), 16: (170, 110, 40),
}
BOUNDARY_COLOR = (200, 200, 200)


def overlay_image(frame, result, scale=4):
    """RGB image of a frame with the boundary and colour-coded segments drawn on top."""
    g = to_uint8(frame)
    img = Image.fromarray(g).convert("RGB")
    img = img.resize((g.shape[1] * scale, g.shape[0] * scale), Image.NEAREST)
    draw = ImageDraw.Draw(img)

    def px(pts):
        return [((x + 0.5) * scale, (y + 0.5) * scale) for x, y in pts]

    b = result.boundary
    for poly in (b.left_polyline, b.right_polyline):
        draw.line(px(poly), fill=BOUNDARY_COLOR, width=1)
    r = max(1, scale // 2)
    for kappa, pts in sorted(result.segments.items()):
        color = SEGMENT_COLORS[kappa]
        draw.line(px(pts), fill=color, width=max(1, scale // 2))
        for x, y in px(pts):
            draw.ellipse((x - r, y - r, x + r, y + r), fill=color)
    return img


def write_overlays(recording, rec_result, out_dir, scale=4):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, (frame, res) in enumerate(zip(recording.cycle_frames, rec_result.frames)):
        overlay_image(frame, res, scale).save(out_dir / f"frame_{t:03d}.png", optimize=False)


def boundary_record(rec_result):
    """JSON-ready per-frame boundary coefficients and segment points."""
    frames = []
    for f in rec_result.frames:
        frames.append({
            "boundary": f.boundary.to_dict(),
            "segments": {str(k): np.asarray(v, dtype=float).tolist() for k, v in sorted(f.segments.items())},
            "iterations": int(f.iterations),
            "converged": bool(f.converged),
        })
    return {"subject": rec_result.subject_id, "view": rec_result.view, "frames": frames,
            "warnings": list(rec_result.warnings)}


def write_boundaries(rec_result, out_dir):
    """Coefficients JSON for the recording plus one boundary CSV per frame."""
    from .apoly import write_boundary_csv

    out_dir = Path(out_dir)
    stem = f"{rec_result.subject_id}_{rec_result.view}"
    (out_dir / stem).mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.json").write_text(json.dumps(boundary_record(rec_result), sort_keys=True))
    for t, f in enumerate(rec_result.frames):
        write_boundary_csv(f.boundary, out_dir / stem / f"frame_{t:03d}.csv")


def segment_points_from_record(record):
    """kappa -> (T, N, 2) tracks from a boundary JSON record."""
    view = record["view"]
    return {k: np.array([fr["segments"][str(k)] for fr in record["frames"]], dtype=float)
            for k in VIEW_SEGMENTS[view]}


def write_displacement_csv(traces, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "kappa", "D"])
        n = len(next(iter(traces.values())).D)
        for t in range(n):
            for k, tr in traces.items():
                w.writerow([t, k, f"{tr.D[t]:.6f}"])


def displacement_svg(traces_by_view, path):
    """One panel per view, one line per segment, in the fixed feature order."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    views = list(traces_by_view)
    with matplotlib.rc_context({"svg.hashsalt": "echomi", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, len(views), figsize=(4.2 * len(views), 3.0), squeeze=False)
        for ax, view in zip(axes[0], views):
            traces = traces_by_view[view]
            for k in VIEW_SEGMENTS[view]:
                D = traces[k].D
                c = np.array(SEGMENT_COLORS[k]) / 255.0
                ax.plot(np.arange(len(D)), D, color=c, label=f"segment {k}")
            ax.set_title(view)
            ax.set_xlabel("frame")
            ax.set_ylabel("displacement (px)")
            ax.legend(fontsize="x-small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_phi_csv(rows, path):
    """rows: (subject, view, phi) -> one line of 6 features per recording."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "view", "f1", "f2", "f3", "f4", "f5", "f6", "segments"])
        for sid, view, phi in rows:
            w.writerow([sid, view] + [repr(float(x)) for x in phi]
                       + [" ".join(str(k) for k in VIEW_SEGMENTS[view])])
