"""MOTChallenge file I/O, training-corpus sampling and synthetic scenarios."""
from __future__ import annotations

import configparser
import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (BoundingBox, Centroid, Detection, Provenance, SequenceInfo, Track,
                   TrackPoint, TrackState, box_from_centroid, centroid_of)

log = logging.getLogger(__name__)

CORPUS_VERSION = 1
MIN_SEQ_LEN = 20


class DataFormatError(ValueError):
    """A MOT-style file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class FrameDetections:
    frame: int
    detections: tuple[Detection, ...] = ()

    def __post_init__(self):
        if any(d.frame != self.frame for d in self.detections):
            raise ValueError(f"detections in frame {self.frame} carry another frame index")


@dataclass(frozen=True)
class GroundTruthTrack:
    object_id: int
    class_id: int
    points: tuple[TrackPoint, ...]
    visibility: tuple[float, ...]
    flags: tuple[int, ...] = ()

    def __post_init__(self):
        frames = [p.frame for p in self.points]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"gt object {self.object_id}: frames must strictly increase")

    @property
    def id(self) -> int:
        return self.object_id

    def centroids(self) -> np.ndarray:
        return np.array([tuple(centroid_of(p.box)) for p in self.points], dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class TrainingSequence:
    centroids: np.ndarray   # (L, 2)

    @property
    def offsets(self) -> np.ndarray:
        return np.diff(self.centroids, axis=0)

    def __len__(self):
        return len(self.centroids)


# ---------------------------------------------------------------------------
# MOT text files

def _rows(path) -> Iterable[tuple[int, list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            yield lineno, [c.strip() for c in row]


def _box_row(row, path, lineno, min_cols):
    if len(row) < min_cols:
        raise DataFormatError(f"expected at least {min_cols} columns, got {len(row)}", path, lineno)
    try:
        frame = int(float(row[0]))
        obj = int(float(row[1]))
        left, top, w, h = (float(v) for v in row[2:6])
    except ValueError as exc:
        raise DataFormatError(f"unparsable row ({exc})", path, lineno) from exc
    if not all(math.isfinite(v) for v in (left, top, w, h)):
        raise DataFormatError("non-finite box value", path, lineno)
    if frame < 1:
        raise DataFormatError(f"frame index {frame} < 1", path, lineno)
    return frame, obj, left, top, w, h


def parse_detections(path) -> list[FrameDetections]:
    """Read a MOT ``det.txt``: ``frame,id,left,top,width,height,conf,...``.

    Rows with non-positive size are skipped with a warning. Confidence is
    clamped to [0, 1]; a missing confidence column reads as 1.
    """
    by_frame: dict[int, list[Detection]] = {}
    for lineno, row in _rows(path):
        frame, _, left, top, w, h = _box_row(row, path, lineno, 6)
        if w <= 0 or h <= 0:
            log.warning("%s:%d: rejected detection with size %gx%g", path, lineno, w, h)
            continue
        conf = 1.0
        if len(row) > 6 and row[6]:
            try:
                conf = float(row[6])
            except ValueError as exc:
                raise DataFormatError(f"bad confidence {row[6]!r}", path, lineno) from exc
        conf = min(max(conf, 0.0), 1.0)
        by_frame.setdefault(frame, []).append(Detection(frame, BoundingBox(left, top, w, h), conf))
    return [FrameDetections(f, tuple(by_frame[f])) for f in sorted(by_frame)]


def _num(v) -> str:
    # shortest repr that round-trips exactly
    return repr(float(v))


def write_detections(frames: Iterable[FrameDetections], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for fd in sorted(frames, key=lambda f: f.frame):
            for d in fd.detections:
                b = d.box
                fh.write(f"{fd.frame},-1,{_num(b.left)},{_num(b.top)},{_num(b.width)},"
                         f"{_num(b.height)},{_num(d.confidence)},-1,-1,-1\n")


def parse_ground_truth(path) -> list[GroundTruthTrack]:
    """Read a MOT ``gt.txt``: ``frame,id,left,top,w,h,flag,class,visibility``.

    Every row is retained; use :func:`for_evaluation` to drop ignored rows.
    """
    rows: dict[int, list] = {}
    for lineno, row in _rows(path):
        frame, obj, left, top, w, h = _box_row(row, path, lineno, 6)
        try:
            flag = int(float(row[6])) if len(row) > 6 else 1
            cls = int(float(row[7])) if len(row) > 7 else 1
            vis = float(row[8]) if len(row) > 8 else 1.0
        except ValueError as exc:
            raise DataFormatError(f"unparsable row ({exc})", path, lineno) from exc
        if w <= 0 or h <= 0:
            log.warning("%s:%d: rejected gt box with size %gx%g", path, lineno, w, h)
            continue
        rows.setdefault(obj, []).append((frame, BoundingBox(left, top, w, h), flag, cls, vis, lineno))

    tracks = []
    for obj in sorted(rows):
        recs = sorted(rows[obj], key=lambda r: r[0])
        for a, b in zip(recs, recs[1:]):
            if a[0] == b[0]:
                raise DataFormatError(f"object {obj} appears twice in frame {a[0]}", path, b[5])
        tracks.append(GroundTruthTrack(
            object_id=obj,
            class_id=recs[0][3],
            points=tuple(TrackPoint(r[0], r[1]) for r in recs),
            visibility=tuple(r[4] for r in recs),
            flags=tuple(r[2] for r in recs),
        ))
    return tracks


def for_evaluation(tracks: Sequence[GroundTruthTrack], classes: Optional[Iterable[int]] = (1,)
                   ) -> list[GroundTruthTrack]:
    """Drop rows flagged 0 and, when ``classes`` is given, other classes."""
    keep_cls = None if classes is None else set(classes)
    out = []
    for t in tracks:
        if keep_cls is not None and t.class_id not in keep_cls:
            continue
        flags = t.flags or (1,) * len(t.points)
        idx = [i for i, f in enumerate(flags) if f != 0]
        if not idx:
            continue
        out.append(GroundTruthTrack(t.object_id, t.class_id,
                                    tuple(t.points[i] for i in idx),
                                    tuple(t.visibility[i] for i in idx),
                                    tuple(flags[i] for i in idx)))
    return out


def write_ground_truth(tracks: Iterable[GroundTruthTrack], path) -> None:
    rows = []
    for t in tracks:
        flags = t.flags or (1,) * len(t.points)
        for p, vis, flag in zip(t.points, t.visibility, flags):
            rows.append((p.frame, t.object_id, p.box, flag, t.class_id, vis))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for frame, obj, b, flag, cls, vis in rows:
            fh.write(f"{frame},{obj},{_num(b.left)},{_num(b.top)},{_num(b.width)},"
                     f"{_num(b.height)},{flag},{cls},{_num(vis)}\n")


def emit_results(tracks: Iterable[Track], path) -> None:
    """Write tracker output in the MOT result format, sorted by (frame, id)."""
    rows = [(p.frame, t.id, p.box) for t in tracks for p in t.points]
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for frame, tid, b in rows:
            fh.write(f"{frame},{tid},{_num(b.left)},{_num(b.top)},{_num(b.width)},"
                     f"{_num(b.height)},1,-1,-1,-1\n")


def parse_results(path) -> list[Track]:
    """Read a MOT result file back into (finished) tracks."""
    rows: dict[int, list] = {}
    for lineno, row in _rows(path):
        frame, obj, left, top, w, h = _box_row(row, path, lineno, 6)
        if w <= 0 or h <= 0:
            log.warning("%s:%d: rejected result box with size %gx%g", path, lineno, w, h)
            continue
        rows.setdefault(obj, []).append(TrackPoint(frame, BoundingBox(left, top, w, h),
                                                   Provenance.OBSERVED))
    tracks = []
    for obj in sorted(rows):
        pts = sorted(rows[obj], key=lambda p: p.frame)
        tracks.append(Track(obj if obj > 0 else 1, TrackState.TERMINATED, 0, tuple(pts)))
    return tracks


def parse_seqinfo(path) -> SequenceInfo:
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise DataFormatError("cannot read seqinfo file", path)
    if "Sequence" not in cp:
        raise DataFormatError("missing [Sequence] section", path)
    sec = cp["Sequence"]
    values = {}
    for key in ("imWidth", "imHeight", "frameRate", "seqLength"):
        if key not in sec:
            raise DataFormatError(f"missing key {key!r} in [Sequence]", path)
        try:
            values[key] = float(sec[key])
        except ValueError as exc:
            raise DataFormatError(f"bad value for {key!r}: {sec[key]!r}", path) from exc
    return SequenceInfo(
        name=sec.get("name", Path(path).parent.name),
        frame_count=int(values["seqLength"]),
        image_width=int(values["imWidth"]),
        image_height=int(values["imHeight"]),
        frame_rate=values["frameRate"],
    )


# ---------------------------------------------------------------------------
# training corpus

def contiguous_runs(track) -> list[np.ndarray]:
    """Split a track into centroid arrays over runs of consecutive frames."""
    if isinstance(track, np.ndarray):
        return [np.asarray(track, dtype=float).reshape(-1, 2)]
    pts = track.points
    runs, cur = [], [pts[0]] if pts else []
    for a, b in zip(pts, pts[1:]):
        if b.frame != a.frame + 1:
            runs.append(cur)
            cur = []
        cur.append(b)
    if cur:
        runs.append(cur)
    return [np.array([tuple(centroid_of(p.box)) for p in run], dtype=float) for run in runs]


def eligible_windows(lengths: Sequence[int], seq_len: int, min_len: int = MIN_SEQ_LEN
                     ) -> list[tuple[int, int, int]]:
    """All (track, start, length) windows available for sampling."""
    out = []
    for i, n in enumerate(lengths):
        if n >= seq_len:
            out.extend((i, s, seq_len) for s in range(n - seq_len + 1))
        elif n >= min_len:
            out.append((i, 0, n))
    return out


def generate_training_set(gt_tracks, n_train: int = 20000, n_val: int = 2000, seq_len: int = 100,
                          noise_sigma: float = 2.0, seed: int = 0, min_len: int = MIN_SEQ_LEN):
    """Sample noisy centroid windows from ground-truth tracks.

    Windows are drawn uniformly with replacement over every eligible
    (track, start) pair. Validation windows are drawn first; training
    windows are then drawn from the pairs the validation split did not use.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    runs = [r for t in gt_tracks for r in contiguous_runs(t)]
    windows = eligible_windows([len(r) for r in runs], seq_len, min_len)
    if not windows:
        raise ValueError(f"no track has at least {min_len} consecutive frames")
    rng = np.random.default_rng(seed)

    val_idx = rng.integers(len(windows), size=n_val) if n_val else np.array([], dtype=int)
    taken = set(val_idx.tolist())
    remaining = [i for i in range(len(windows)) if i not in taken]
    if n_train and not remaining:
        raise ValueError("validation split consumed every eligible window")
    train_idx = np.asarray(remaining)[rng.integers(len(remaining), size=n_train)] \
        if n_train else np.array([], dtype=int)

    def build(indices):
        out = []
        for w in indices:
            ti, start, n = windows[int(w)]
            c = runs[ti][start:start + n]
            if noise_sigma > 0:
                c = c + rng.normal(0.0, noise_sigma, size=c.shape)
            out.append(TrainingSequence(np.array(c, dtype=float)))
        return out

    return build(train_idx), build(val_idx)


def write_corpus(path, train: Sequence[TrainingSequence], val: Sequence[TrainingSequence],
                 meta: Optional[dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": "traje-corpus", "version": CORPUS_VERSION, **(meta or {})}) + "\n")
        for split, seqs in (("train", train), ("val", val)):
            for s in seqs:
                fh.write(json.dumps({"split": split, "centroids": s.centroids.tolist()}) + "\n")


def read_corpus(path) -> tuple[list[TrainingSequence], list[TrainingSequence], dict]:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise DataFormatError("missing corpus header line", path, 1) from exc
        if header.get("format") != "traje-corpus":
            raise DataFormatError("not a training corpus", path, 1)
        if header.get("version") != CORPUS_VERSION:
            raise DataFormatError(f"unsupported corpus version {header.get('version')}", path, 1)
        train, val = [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                seq = TrainingSequence(np.asarray(rec["centroids"], dtype=float).reshape(-1, 2))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataFormatError(f"bad corpus record ({exc})", path, lineno) from exc
            (val if rec.get("split") == "val" else train).append(seq)
    return train, val, header


def synthetic_motion_tracks(n_tracks: int, length: int, seed: int, speed=(3.0, 15.0),
                            max_turn: float = 0.05) -> list[np.ndarray]:
    """Noise-free constant-velocity and turning centroid paths.

    Half the paths keep a constant heading; the other half turn at a
    constant rate drawn from [-max_turn, max_turn] radians per frame.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_tracks):
        v = rng.uniform(*speed)
        heading = rng.uniform(-math.pi, math.pi)
        omega = 0.0 if i % 2 == 0 else rng.uniform(-max_turn, max_turn)
        start = rng.uniform(0, 1000, size=2)
        out.append(_path(start, v, heading, omega, length))
    return out


def _path(start, speed, heading, omega, n) -> np.ndarray:
    k = np.arange(n - 1)
    ang = heading + omega * k
    steps = np.stack([speed * np.cos(ang), speed * np.sin(ang)], axis=1)
    pos = np.vstack([np.asarray(start, dtype=float)[None], start + np.cumsum(steps, axis=0)])
    return pos


# ---------------------------------------------------------------------------
# scenarios

@dataclass(frozen=True)
class ObjectPath:
    """A parametric object path; ``start`` is the centroid at ``first_frame``."""

    start: tuple[float, float]
    velocity: tuple[float, float]
    size: tuple[float, float] = (40.0, 100.0)
    turn_rate: float = 0.0
    first_frame: int = 1
    last_frame: Optional[int] = None
    occlusions: tuple[tuple[int, int], ...] = ()

    def centroids(self, last_frame: int) -> dict[int, Centroid]:
        end = self.last_frame or last_frame
        n = end - self.first_frame + 1
        speed = math.hypot(*self.velocity)
        heading = math.atan2(self.velocity[1], self.velocity[0])
        pos = _path(self.start, speed, heading, self.turn_rate, n)
        return {self.first_frame + i: Centroid(float(x), float(y)) for i, (x, y) in enumerate(pos)}

    def hidden(self, frame: int) -> bool:
        return any(a <= frame <= b for a, b in self.occlusions)


@dataclass(frozen=True)
class Scenario:
    name: str
    objects: tuple[ObjectPath, ...]
    noise_sigma: float = 2.0
    frame_count: int = 40
    image_size: tuple[int, int] = (1920, 1080)

    def __post_init__(self):
        for obj in self.objects:
            for a, b in obj.occlusions:
                if not 1 <= a <= b <= self.frame_count:
                    raise ValueError(f"occlusion window {(a, b)} outside frames 1..{self.frame_count}")


SCENARIOS = ("cv", "turn", "cross", "occlusion", "cross_occlusion")

# frame at which the two crossing objects share a centroid
CROSS_FRAME = 20


def make_scenario(name: str, noise_sigma: float = 2.0) -> Scenario:
    if name == "cv":
        objs = (ObjectPath((200.0, 300.0), (6.0, 1.0)),
                ObjectPath((400.0, 700.0), (-4.0, 2.0), size=(50.0, 120.0)),
                ObjectPath((1500.0, 500.0), (-7.0, -1.0), size=(36.0, 90.0)))
        return Scenario(name, objs, noise_sigma, frame_count=50)
    if name == "turn":
        objs = (ObjectPath((300.0, 500.0), (8.0, 0.0), turn_rate=0.04),
                ObjectPath((1400.0, 400.0), (-6.0, 3.0), size=(50.0, 120.0), turn_rate=-0.03))
        return Scenario(name, objs, noise_sigma, frame_count=50)
    if name == "cross":
        v = 6.0
        k = CROSS_FRAME - 1
        objs = (ObjectPath((500.0 - v * k, 400.0), (v, 0.0)),
                ObjectPath((500.0 + v * k, 400.0), (-v, 0.0)))
        return Scenario(name, objs, noise_sigma, frame_count=40)
    if name == "occlusion":
        objs = (ObjectPath((300.0, 400.0), (8.0, 6.0), occlusions=((11, 15),)),)
        return Scenario(name, objs, noise_sigma, frame_count=40)
    if name == "cross_occlusion":
        v = 8.0
        k = CROSS_FRAME - 1
        objs = (ObjectPath((600.0 - v * k, 420.0 - 4.0 * k), (v, 4.0)),
                ObjectPath((600.0 + v * k, 420.0 - 4.0 * k), (-v, 4.0),
                           occlusions=((CROSS_FRAME - 3, CROSS_FRAME + 2),)),
                ObjectPath((300.0, 800.0), (5.0, -2.0), size=(50.0, 120.0),
                           occlusions=((30, 33),)))
        return Scenario(name, objs, noise_sigma, frame_count=50)
    raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")


def generate_scenario(scenario: Scenario, seed: int):
    """Ground truth and noisy detections for ``scenario``.

    Detections are the ground-truth boxes with Gaussian centre noise,
    suppressed while the object is inside an occlusion window.
    """
    rng = np.random.default_rng(seed)
    gt, by_frame = [], {f: [] for f in range(1, scenario.frame_count + 1)}
    for oid, obj in enumerate(scenario.objects, start=1):
        w, h = obj.size
        cents = obj.centroids(scenario.frame_count)
        points = []
        for frame in sorted(cents):
            if frame > scenario.frame_count:
                break
            c = cents[frame]
            box = box_from_centroid(c, w, h)
            points.append(TrackPoint(frame, box))
            if obj.hidden(frame):
                continue
            if scenario.noise_sigma > 0:
                dx, dy = rng.normal(0.0, scenario.noise_sigma, size=2)
                box = box_from_centroid(Centroid(c.x + dx, c.y + dy), w, h)
            by_frame[frame].append(Detection(frame, box, 1.0))
        gt.append(GroundTruthTrack(oid, 1, tuple(points), tuple(0.0 if obj.hidden(p.frame) else 1.0
                                                                  for p in points)))
    frames = [FrameDetections(f, tuple(d)) for f, d in sorted(by_frame.items())]
    return gt, frames
