"""Tracking-by-detection loop with pluggable motion models.

Every frame: filter detections by confidence, project each live track
with its motion model, associate by L1 centroid distance under a
size-proportional gate, then run the track lifecycle (active, lost,
recovered, terminated). Lost tracks keep projecting through their motion
model and may be re-associated; on recovery the motion model's estimated
trajectory can fill the gap if it is coherent with the new detection.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import traje
from .core import (BoundingBox, Centroid, Detection, Provenance, Track, TrackPoint, TrackState,
                   box_from_centroid, centroid_of, iou)
from .data import FrameDetections
from .kalman import KalmanTrack
from .metrics import gated_assignment
from .rnn import ModelParams


class Motion(enum.Enum):
    NONE = "none"
    CV = "cv"
    KALMAN = "kalman"
    TRAJE = "traje"


@dataclass(frozen=True)
class TrackerConfig:
    motion: Motion = Motion.NONE
    strategy: traje.Strategy = traje.Strategy.PBS
    beam_width: int = 5
    bias: float = 1.0
    patience: int = 100
    occ_reconstruct: bool = False
    iou_coherence_threshold: float = 0.5
    association_gate: float = 1.0
    detection_min_confidence: float = 0.4
    iou_birth_suppression: float = 0.3
    min_track_length: int = 2

    def __post_init__(self):
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.beam_width < 1:
            raise ValueError("beam width must be >= 1")
        if self.bias < 0:
            raise ValueError("bias must be >= 0")
        for name in ("iou_coherence_threshold", "detection_min_confidence", "iou_birth_suppression"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.association_gate <= 0:
            raise ValueError("association_gate must be positive")


@dataclass(frozen=True)
class TrackerOutput:
    tracks: tuple[Track, ...]


# ---------------------------------------------------------------------------
# motion models: one instance per track

class StaticMotion:
    """No motion: a track is expected where it was last seen."""

    def __init__(self, first: Centroid):
        self.last = first
        self.pending: list[tuple[int, Centroid]] = []

    def projections(self) -> list[Centroid]:
        return [self.last]

    def observed(self, c: Centroid) -> None:
        self.last = c
        self.pending = []

    def lost(self, frame: int) -> None:
        self.pending.append((frame, self.last))

    def recovered(self, c: Centroid):
        return list(self.pending), self.last


class ConstantVelocityMotion(StaticMotion):
    def __init__(self, first: Centroid):
        super().__init__(first)
        self.velocity = None

    def _next(self) -> Centroid:
        return self.last if self.velocity is None else self.last + self.velocity

    def projections(self) -> list[Centroid]:
        return [self._next()]

    def observed(self, c: Centroid) -> None:
        self.velocity = c - self.last
        self.last = c
        self.pending = []

    def lost(self, frame: int) -> None:
        self.last = self._next()
        self.pending.append((frame, self.last))

    def recovered(self, c: Centroid):
        return list(self.pending), self._next()


class KalmanMotion:
    def __init__(self, first: Centroid):
        self.kf = KalmanTrack(first)
        self.pending: list[tuple[int, Centroid]] = []

    def projections(self) -> list[Centroid]:
        return [self.kf.peek()]

    def observed(self, c: Centroid) -> None:
        self.kf.predict()
        self.kf.update(c)
        self.pending = []

    def lost(self, frame: int) -> None:
        self.pending.append((frame, self.kf.predict()))

    def recovered(self, c: Centroid):
        return list(self.pending), self.kf.peek()


class TrajEMotion:
    def __init__(self, first: Centroid, model: ModelParams, strategy, beam_width, bias, rng):
        self.model = model
        self.rng = rng
        self.state = traje.init(strategy, beam_width, bias, first, model.config.hidden_dim)

    def projections(self) -> list[Centroid]:
        return list(traje.predictions_of(self.state).centroids)

    def observed(self, c: Centroid) -> None:
        self.state, _ = traje.observe(self.model, self.state, c, self.rng)

    def lost(self, frame: int) -> None:
        self.state = traje.propagate_lost(self.model, self.state, frame, self.rng)

    def recovered(self, c: Centroid):
        self.state, winner = traje.commit_recovery(self.state, c)
        return list(winner.pending_centroids), winner.predicted


def track_rng(seed: int, track_id: int) -> np.random.Generator:
    """Random stream for one track, independent of processing order."""
    digest = hashlib.sha256(f"{seed}:{track_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


# ---------------------------------------------------------------------------
# association

def project(motion) -> list[Centroid]:
    return motion.projections()


def l1_cost(projections: Sequence[Sequence[Centroid]], detections: Sequence[Centroid]) -> np.ndarray:
    cost = np.empty((len(projections), len(detections)))
    for i, proj in enumerate(projections):
        p = np.array([tuple(c) for c in proj], dtype=float)
        for j, d in enumerate(detections):
            cost[i, j] = np.min(np.abs(p[:, 0] - d.x) + np.abs(p[:, 1] - d.y))
    return cost


def associate(projections: Sequence[Sequence[Centroid]], detections: Sequence[Centroid],
              gates: Sequence[float]):
    """Hungarian matching on min-over-hypotheses L1 distance, gated per track.

    Returns ``(matches, unmatched_tracks, unmatched_detections)`` with
    indices into the inputs; rows must already be ordered by track id.
    """
    n, m = len(projections), len(detections)
    matches = []
    if n and m:
        cost = l1_cost(projections, detections)
        allowed = cost <= np.asarray(gates, dtype=float)[:, None]
        matches = gated_assignment(cost, allowed)
    mt = {r for r, _ in matches}
    md = {c for _, c in matches}
    return matches, [i for i in range(n) if i not in mt], [j for j in range(m) if j not in md]


# ---------------------------------------------------------------------------
# tracker

@dataclass
class _LiveTrack:
    id: int
    motion: object
    patience_left: int
    points: list[TrackPoint] = field(default_factory=list)
    state: TrackState = TrackState.ACTIVE
    lost_since: Optional[int] = None
    last_box: Optional[BoundingBox] = None

    def freeze(self) -> Track:
        return Track(self.id, self.state, self.patience_left, tuple(self.points), self.lost_since)


class Tracker:
    def __init__(self, config: TrackerConfig, model: Optional[ModelParams] = None, seed: int = 0):
        if config.motion is Motion.TRAJE and model is None:
            raise ValueError("the trajectory estimator needs a trained model")
        self.config = config
        self.model = model
        self.seed = seed
        self.tracks: list[_LiveTrack] = []
        self.next_id = 1
        self.last_frame = 0

    def _motion(self, track_id: int, c: Centroid):
        cfg = self.config
        if cfg.motion is Motion.NONE:
            return StaticMotion(c)
        if cfg.motion is Motion.CV:
            return ConstantVelocityMotion(c)
        if cfg.motion is Motion.KALMAN:
            return KalmanMotion(c)
        return TrajEMotion(c, self.model, cfg.strategy, cfg.beam_width, cfg.bias,
                           track_rng(self.seed, track_id))

    def live(self) -> list[_LiveTrack]:
        return [t for t in self.tracks if t.state is not TrackState.TERMINATED]

    def step(self, fd: FrameDetections) -> None:
        cfg = self.config
        frame = fd.frame
        if frame <= self.last_frame:
            raise ValueError(f"frame {frame} presented after frame {self.last_frame}")
        self.last_frame = frame

        dets = [d for d in fd.detections if d.confidence >= cfg.detection_min_confidence]
        det_c = [centroid_of(d.box) for d in dets]
        live = sorted(self.live(), key=lambda t: t.id)
        projections = [project(t.motion) for t in live]
        gates = [cfg.association_gate * (t.last_box.width + t.last_box.height) / 2 for t in live]
        matches, lost_idx, new_idx = associate(projections, det_c, gates)

        for ti, di in matches:
            t, det, c = live[ti], dets[di], det_c[di]
            if t.state is TrackState.LOST:
                self._recover(t, det, c)
            t.points.append(TrackPoint(frame, det.box, Provenance.OBSERVED))
            t.motion.observed(c)
            t.state = TrackState.ACTIVE
            t.lost_since = None
            t.patience_left = cfg.patience
            t.last_box = det.box

        for ti in lost_idx:
            t = live[ti]
            if t.state is TrackState.ACTIVE:
                t.state = TrackState.LOST
                t.lost_since = frame
            t.motion.lost(frame)
            t.patience_left -= 1
            if t.patience_left <= 0:
                t.state = TrackState.TERMINATED
                t.patience_left = 0
                t.lost_since = None

        for di in new_idx:
            det = dets[di]
            others = self.live()
            if all(iou(det.box, o.last_box) < cfg.iou_birth_suppression for o in others):
                self._spawn(det, det_c[di])

    def _recover(self, t: _LiveTrack, det: Detection, c: Centroid) -> None:
        cfg = self.config
        pending, estimate = t.motion.recovered(c)
        if not cfg.occ_reconstruct or not pending:
            return
        ref = t.last_box
        coherence = box_from_centroid(estimate, ref.width, ref.height)
        if iou(coherence, det.box) < cfg.iou_coherence_threshold:
            return
        w, h = det.box.width, det.box.height
        for f, pc in pending:
            t.points.append(TrackPoint(f, box_from_centroid(pc, w, h), Provenance.ESTIMATED))

    def _spawn(self, det: Detection, c: Centroid) -> None:
        tid = self.next_id
        self.next_id += 1
        t = _LiveTrack(tid, self._motion(tid, c), self.config.patience,
                       [TrackPoint(det.frame, det.box, Provenance.OBSERVED)], last_box=det.box)
        self.tracks.append(t)

    def snapshot(self) -> list[Track]:
        return [t.freeze() for t in sorted(self.tracks, key=lambda t: t.id)]

    def output(self) -> TrackerOutput:
        keep = [t for t in self.snapshot() if len(t.points) >= self.config.min_track_length]
        return TrackerOutput(tuple(keep))


def run_sequence(frames: Iterable[FrameDetections], config: TrackerConfig,
                 model: Optional[ModelParams] = None, seed: int = 0,
                 frame_count: Optional[int] = None) -> TrackerOutput:
    """Track a whole sequence; frames without detections are still stepped."""
    by_frame = {fd.frame: fd for fd in frames}
    last = max([*by_frame, frame_count or 0], default=0)
    tracker = Tracker(config, model, seed)
    for f in range(1, last + 1):
        tracker.step(by_frame.get(f, FrameDetections(f)))
    return tracker.output()
