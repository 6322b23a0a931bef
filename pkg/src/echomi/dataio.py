"""Recording / ground-truth ingestion and label semantics.

Manifest format (UTF-8, tab separated, one recording per line)::

    subject_id  view  frame_dir  fps  cycle_start  cycle_end  k:stage x12  [roi=top,left,bottom,right]

Lines starting with ``#`` and blank lines are ignored.  ``frame_dir`` is
resolved relative to the manifest's directory.  Frames are 8-bit grayscale
PGM (P5) or PNG files; lexicographic file order is temporal order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .errors import ManifestError, ValidationError

A4C = "A4C"
A2C = "A2C"
VIEWS = (A4C, A2C)

# analyzed segments of the 17-segment model (segment 17, the apical cap, is excluded)
ANALYZED_SEGMENTS = (1, 3, 4, 6, 7, 9, 10, 12, 13, 14, 15, 16)

# feature ordering per view: A4C -> (3, 9, 14, 16, 12, 6), A2C -> (4, 10, 15, 13, 7, 1)
VIEW_SEGMENTS = {
    A4C: (3, 9, 14, 16, 12, 6),
    A2C: (4, 10, 15, 13, 7, 1),
}

NON_MI = 0
MI = 1

FRAME_EXTENSIONS = (".pgm", ".png")


@dataclass(frozen=True)
class SegmentStage:
    kappa: int
    stage: int

    def __post_init__(self):
        if self.kappa not in ANALYZED_SEGMENTS:
            raise ValidationError(f"segment {self.kappa} is not one of the 12 analyzed segments")
        if self.stage not in (1, 2, 3, 4, 5):
            raise ValidationError(f"stage must be in 1..5, got {self.stage}")


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    view: str
    frame_dir: Path
    fps: float
    cycle: tuple[int, int]
    stages: tuple[SegmentStage, ...]
    roi: tuple[int, int, int, int] | None = None

    @property
    def label(self) -> int:
        return view_label(self.stages, self.view)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    path: Path | None = None

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def subjects(self) -> list[str]:
        seen = []
        for e in self.entries:
            if e.subject_id not in seen:
                seen.append(e.subject_id)
        return seen

    def get(self, subject_id: str, view: str) -> ManifestEntry | None:
        for e in self.entries:
            if e.subject_id == subject_id and e.view == view:
                return e
        return None

    def ground_truth(self, subject_id: str) -> "GroundTruth":
        per_view = {}
        for e in self.entries:
            if e.subject_id == subject_id:
                per_view[e.view] = list(e.stages)
        if not per_view:
            raise KeyError(subject_id)
        return GroundTruth(per_view)


@dataclass
class GroundTruth:
    stages: dict[str, list[SegmentStage]]
    labels: dict[str, int] = field(init=False)
    fused: int = field(init=False)

    def __post_init__(self):
        self.labels = {v: view_label(s, v) for v, s in self.stages.items()}
        fused = NON_MI
        for lab in self.labels.values():
            fused = fuse_view_labels(fused, lab)
        self.fused = fused


@dataclass
class EchoRecording:
    subject_id: str
    view: str
    frames: np.ndarray  # (T, H, W) float64 in [0, 1]
    fps: float
    cycle: tuple[int, int]
    roi: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3 or len(self.frames) == 0:
            raise ValidationError("frames must be a non-empty (T, H, W) stack")
        if self.view not in VIEWS:
            raise ValidationError(f"unknown view {self.view!r}")
        _check_cycle(self.cycle, len(self.frames))

    @property
    def cycle_frames(self) -> np.ndarray:
        start, end = self.cycle
        return self.frames[start:end + 1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]


def binarize_stage(stage: int) -> int:
    """1 (normal/hyperkinesia) -> non-MI; 2..5 (hypo/a/dyskinesia, aneurysm) -> MI."""
    if isinstance(stage, bool) or int(stage) != stage or stage not in (1, 2, 3, 4, 5):
        raise ValidationError(f"stage must be an integer in 1..5, got {stage!r}")
    return NON_MI if stage == 1 else MI


def fuse_view_labels(a4c: int, a2c: int) -> int:
    return MI if (a4c == MI or a2c == MI) else NON_MI


def view_label(stages: Iterable[SegmentStage], view: str) -> int:
    """MI iff any of the view's own segments has a stage in 2..5."""
    own = set(VIEW_SEGMENTS[view])
    for s in stages:
        if s.kappa in own and binarize_stage(s.stage) == MI:
            return MI
    return NON_MI


def _check_cycle(cycle, n_frames=None):
    start, end = cycle
    if not start < end:
        raise ValidationError(f"cycle start must precede cycle end, got {cycle}")
    if start < 0:
        raise ValidationError(f"cycle start must be >= 0, got {start}")
    if n_frames is not None and end >= n_frames:
        raise ValidationError(f"cycle end {end} beyond last frame index {n_frames - 1}")


def _parse_roi(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError("roi needs 4 comma-separated integers")
    top, left, bottom, right = (int(p) for p in parts)
    if bottom <= top or right <= left:
        raise ValueError("roi must have positive extent")
    return top, left, bottom, right


def parse_manifest_line(line: str, base_dir: Path):
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) < 18:
        raise ValueError(f"expected at least 18 tab-separated fields, got {len(fields)}")
    subject_id, view, frame_dir, fps, c0, c1 = fields[:6]
    if not subject_id:
        raise ValueError("empty subject_id")
    if view not in VIEWS:
        raise ValueError(f"view must be A4C or A2C, got {view!r}")
    fps = float(fps)
    if fps <= 0:
        raise ValueError("fps must be positive")
    cycle = (int(c0), int(c1))
    _check_cycle(cycle)

    pairs = fields[6:18]
    stages = []
    for p in pairs:
        k, _, s = p.partition(":")
        stages.append(SegmentStage(int(k), int(s)))
    kappas = [s.kappa for s in stages]
    if len(set(kappas)) != len(kappas):
        raise ValueError("duplicate segment number in stage list")

    roi = None
    for extra in fields[18:]:
        if extra.startswith("roi="):
            roi = _parse_roi(extra[4:])
        elif extra.strip():
            raise ValueError(f"unexpected field {extra!r}")

    path = Path(frame_dir)
    if not path.is_absolute():
        path = base_dir / path
    return ManifestEntry(subject_id, view, path, fps, cycle, tuple(stages), roi)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError("manifest file not found", path=path)
    base = path.parent
    entries = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                entry = parse_manifest_line(line, base)
            except (ValueError, ValidationError) as exc:
                raise ManifestError(str(exc), path=path, line=lineno) from None
            key = (entry.subject_id, entry.view)
            if key in seen:
                raise ManifestError(
                    f"duplicate entry for {key[0]}/{key[1]} (first seen on line {seen[key]})",
                    path=path, line=lineno)
            if not entry.frame_dir.is_dir():
                raise ManifestError(f"frame directory not found: {entry.frame_dir}",
                                    path=path, line=lineno)
            seen[key] = lineno
            entries.append(entry)
    return DatasetManifest(entries, path)


def format_manifest_line(entry: ManifestEntry, base_dir=None) -> str:
    frame_dir = entry.frame_dir
    if base_dir is not None:
        frame_dir = Path(os.path.relpath(frame_dir, base_dir))
    fields = [entry.subject_id, entry.view, frame_dir.as_posix(), f"{entry.fps:g}",
              str(entry.cycle[0]), str(entry.cycle[1])]
    fields += [f"{s.kappa}:{s.stage}" for s in entry.stages]
    if entry.roi is not None:
        fields.append("roi=" + ",".join(str(v) for v in entry.roi))
    return "\t".join(fields)


def write_manifest(entries, path):
    path = Path(path)
    lines = ["# subject_id\tview\tframe_dir\tfps\tcycle_start\tcycle_end\tk:stage x12\t[roi]"]
    lines += [format_manifest_line(e, path.parent) for e in entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def list_frame_files(frame_dir) -> list[Path]:
    frame_dir = Path(frame_dir)
    return sorted(p for p in frame_dir.iterdir()
                  if p.is_file() and p.suffix.lower() in FRAME_EXTENSIONS)


def read_frame(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L"):
                arr = np.asarray(im, dtype=float) / 65535.0
            else:
                arr = np.asarray(im.convert("L"), dtype=float) / 255.0
    except (OSError, ValueError) as exc:
        raise ValidationError(f"unreadable image {path}: {exc}") from None
    return arr


def load_recording(entry: ManifestEntry) -> EchoRecording:
    files = list_frame_files(entry.frame_dir)
    if not files:
        raise ValidationError(f"no PGM/PNG frames in {entry.frame_dir}")
    frames = []
    for f in files:
        arr = read_frame(f)
        if frames and arr.shape != frames[0].shape:
            raise ValidationError(
                f"mixed frame dimensions in {entry.frame_dir}: {f.name} is "
                f"{arr.shape[0]}x{arr.shape[1]}, expected {frames[0].shape[0]}x{frames[0].shape[1]}")
        frames.append(arr)
    return EchoRecording(entry.subject_id, entry.view, np.stack(frames), entry.fps,
                         entry.cycle, entry.roi)


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)


def write_frames(frames, frame_dir, fmt="pgm"):
    frame_dir = Path(frame_dir)
    frame_dir.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(len(frames) - 1)))
    paths = []
    for i, frame in enumerate(frames):
        p = frame_dir / f"frame_{i:0{width}d}.{fmt}"
        Image.fromarray(to_uint8(frame)).save(p)
        paths.append(p)
    return paths


def write_recording(recording: EchoRecording, frame_dir, fmt="pgm"):
    return write_frames(recording.frames, frame_dir, fmt)
