"""Per-recording glue: frames -> boundaries -> segment tracks -> features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .apoly import ActivePolynomialBoundary, boundary_from_region, partition_segments
from .contour import ChanVeseParams, segment_region
from .dataio import VIEW_SEGMENTS, DatasetManifest, EchoRecording, load_recording
from .kinematics import ViewFeatures, view_feature_vector, view_traces


@dataclass
class FrameResult:
    boundary: ActivePolynomialBoundary
    segments: dict  # kappa -> (N, 2)
    iterations: int
    converged: bool


@dataclass
class RecordingResult:
    subject_id: str
    view: str
    frames: list  # FrameResult per cycle frame
    warnings: list = field(default_factory=list)

    def segment_points(self):
        """kappa -> (T, N, 2) positional tracks over the cycle."""
        return {k: np.stack([f.segments[k] for f in self.frames]) for k in VIEW_SEGMENTS[self.view]}

    def traces(self):
        return view_traces(self.segment_points(), self.view)

    def features(self) -> ViewFeatures:
        traces, intervals = self.traces()
        return view_feature_vector(traces, intervals, self.view)


def process_frame(frame, view, roi=None, params: ChanVeseParams | None = None,
                  init_scale=0.5) -> FrameResult:
    region, _ = segment_region(frame, roi, params, init_scale)
    boundary = boundary_from_region(region.mask)
    segs = partition_segments(boundary, view)
    return FrameResult(boundary, {s.kappa: s.points for s in segs}, region.iterations,
                       region.converged)


def process_recording(recording: EchoRecording, params: ChanVeseParams | None = None,
                      init_scale=0.5) -> RecordingResult:
    results, notes = [], []
    for t, frame in enumerate(recording.cycle_frames):
        res = process_frame(frame, recording.view, recording.roi, params, init_scale)
        if not res.converged:
            notes.append(f"frame {t}: Chan-Vese hit the iteration cap")
        results.append(res)
    return RecordingResult(recording.subject_id, recording.view, results, notes)


def _run_item(item, params, init_scale):
    subject, view, rec = item[:3]
    if not isinstance(rec, EchoRecording):
        rec = load_recording(rec)
    return process_recording(rec, params, init_scale)


def manifest_items(manifest: DatasetManifest):
    """(subject, view, entry, view label, fused label) per manifest line."""
    return [(e.subject_id, e.view, e, e.label, manifest.ground_truth(e.subject_id).fused)
            for e in manifest]


def cohort_items(cohort):
    labels = cohort.labels()
    return [(it.subject_id, it.view, it.recording, labels[it.subject_id][it.view],
             labels[it.subject_id]["fused"]) for it in cohort.items]


def process_items(items, params: ChanVeseParams | None = None, jobs=1, init_scale=0.5):
    """Segment and track every recording; results come back in input order."""
    if jobs == 1:
        return [_run_item(it, params, init_scale) for it in items]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=jobs)(delayed(_run_item)(it, params, init_scale) for it in items)


def feature_table(items, results):
    from .evaluation import FeatureTable
    rows = [(it[0], it[1], res.features().phi, it[3], it[4]) for it, res in zip(items, results)]
    return FeatureTable.from_rows(rows)
