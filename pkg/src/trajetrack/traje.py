"""Per-track trajectory estimator with beam exploration.

Each beam carries a recurrent hidden state, its current position and one
drawn offset (its *proposal*) for the next frame, so the beam's projected
centroid is ``last_centroid + proposal``. While a track is lost, the
proposal is committed as the estimated point for the missed frame, fed
back into the network, and each beam draws fresh candidates; the pooled
candidates are pruned back to the beam width.

Three strategies:

* ``BM``  - one beam, proposal is the mean of the heaviest component;
* ``GBS`` - one beam, draws ``B`` samples and keeps the most likely one;
* ``PBS`` - ``B`` beams, each expanded into ``B`` samples, top ``B`` kept.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import mdn
from .core import Centroid, Offset
from .rnn import ModelParams, cell_step, heads


class Strategy(enum.Enum):
    BM = "bm"
    GBS = "gbs"
    PBS = "pbs"


@dataclass(frozen=True)
class Beam:
    hidden: np.ndarray
    last_centroid: Centroid
    pending_centroids: tuple[tuple[int, Centroid], ...] = ()
    score: float = 0.0
    beam_index: int = 0
    proposal: Optional[Offset] = None
    proposal_logp: float = 0.0
    params: Optional[mdn.MixtureParams] = None

    @property
    def predicted(self) -> Centroid:
        if self.proposal is None:
            return self.last_centroid
        return self.last_centroid + self.proposal


@dataclass(frozen=True)
class EstimatorState:
    beams: tuple[Beam, ...]
    observations_seen: int
    strategy: Strategy
    bias: float
    beam_width: int

    @property
    def kept_beams(self) -> int:
        return self.beam_width if self.strategy is Strategy.PBS else 1

    @property
    def draws_per_beam(self) -> int:
        return 1 if self.strategy is Strategy.BM else self.beam_width


@dataclass(frozen=True)
class Prediction:
    centroids: tuple[Centroid, ...]
    beam_indices: tuple[int, ...]

    def __len__(self):
        return len(self.centroids)


def init(strategy: Strategy, beam_width: int, bias: float, first_centroid: Centroid,
         hidden_dim: int) -> EstimatorState:
    if beam_width < 1:
        raise ValueError(f"beam width must be >= 1, got {beam_width}")
    if bias < 0:
        raise ValueError(f"bias must be >= 0, got {bias}")
    strategy = Strategy(strategy)
    beam = Beam(hidden=np.zeros(hidden_dim), last_centroid=first_centroid)
    return EstimatorState((beam,), 1, strategy, float(bias), int(beam_width))


def _draw(state: EstimatorState, params: mdn.MixtureParams, rng) -> list[tuple[Offset, float]]:
    if state.strategy is Strategy.BM:
        off = mdn.best_mean(params)
        return [(off, mdn.log_density(params, off))]
    out = []
    for _ in range(state.beam_width):
        off = mdn.sample(params, rng)
        out.append((off, mdn.log_density(params, off)))
    return out


def _ranked(candidates, keep):
    # candidates: (score, parent_index, draw_index, beam); highest score first
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    return tuple(replace(c[3], beam_index=i) for i, c in enumerate(candidates[:keep]))


def observe(model: ModelParams, state: EstimatorState, new_centroid: Centroid, rng
            ) -> tuple[EstimatorState, Prediction]:
    """Feed an associated detection and redraw the proposals from scratch."""
    base = state.beams[0]
    delta = new_centroid - base.last_centroid
    h = cell_step(model, base.hidden, delta)
    params = mdn.constrain(heads(model, h), state.bias)
    draws = _draw(state, params, rng)
    cands = [(lp, 0, j, Beam(h, new_centroid, (), 0.0, 0, off, lp, params))
             for j, (off, lp) in enumerate(draws)]
    if state.strategy is Strategy.PBS:
        # keep draw order; every beam shares the same history
        beams = tuple(replace(c[3], beam_index=i) for i, c in enumerate(cands))
    else:
        beams = _ranked(cands, 1)
    new = replace(state, beams=beams, observations_seen=state.observations_seen + 1)
    return new, predictions_of(new)


def propagate_lost(model: ModelParams, state: EstimatorState, frame: int, rng) -> EstimatorState:
    """Advance every beam through one frame without a detection."""
    if state.observations_seen < 2:
        # no motion history yet: hold position
        b = state.beams[0]
        held = replace(b, pending_centroids=b.pending_centroids + ((frame, b.last_centroid),))
        return replace(state, beams=(held,))

    beams = state.beams
    hs = cell_step(model, np.stack([b.hidden for b in beams]),
                   np.array([tuple(b.proposal) for b in beams]))
    cands = []
    for b, h in zip(beams, hs):
        point = b.predicted
        pending = b.pending_centroids + ((frame, point),)
        score = b.score + b.proposal_logp
        params = mdn.constrain(heads(model, h), state.bias)
        for j, (off, lp) in enumerate(_draw(state, params, rng)):
            cands.append((score + lp, b.beam_index, j,
                          Beam(h, point, pending, score, 0, off, lp, params)))
    return replace(state, beams=_ranked(cands, state.kept_beams))


def recovery_scores(state: EstimatorState, detection_centroid: Centroid) -> list[float]:
    """Stored trajectory score plus the log-density of closing the gap."""
    out = []
    for b in state.beams:
        gap = 0.0
        if b.params is not None:
            gap = mdn.log_density(b.params, detection_centroid - b.last_centroid)
        out.append(b.score + gap)
    return out


def commit_recovery(state: EstimatorState, detection_centroid: Centroid
                    ) -> tuple[EstimatorState, Beam]:
    """Pick the beam that best explains the re-associated detection.

    The winner's hidden state and position are copied into every beam and
    the exploration is reset; the returned beam keeps its pending points.
    """
    scores = recovery_scores(state, detection_centroid)
    best = int(np.argmax(scores))   # first max, i.e. lowest beam_index
    winner = state.beams[best]
    reset = replace(winner, pending_centroids=(), score=0.0)
    beams = tuple(replace(reset, beam_index=i) for i in range(len(state.beams)))
    return replace(state, beams=beams), winner


def predictions_of(state: EstimatorState) -> Prediction:
    return Prediction(tuple(b.predicted for b in state.beams),
                      tuple(b.beam_index for b in state.beams))
