"""CLEAR-MOT and identity metrics, plus the assignment solver they share."""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .core import iou

MT_COVERAGE = 0.8
ML_COVERAGE = 0.2


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment for a (possibly rectangular) cost matrix.

    Returns ``(row, col)`` pairs sorted by row; ``min(n_rows, n_cols)``
    pairs are always produced. Shortest augmenting paths with dual
    potentials, rows inserted in index order and columns scanned in index
    order, so equal-cost optima resolve to the lexicographically first one
    the search meets (an all-equal matrix gives the identity).
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ValueError("costs must be finite; use a large sentinel for forbidden pairs")
    n = max(n_rows, n_cols)
    c = np.zeros((n, n))
    c[:n_rows, :n_cols] = cost

    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)     # p[j]: row (1-based) owning column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = c[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = [(int(p[j]) - 1, j - 1) for j in range(1, n + 1)]
    return sorted((r, col) for r, col in pairs if r < n_rows and col < n_cols)


def gated_assignment(cost, allowed) -> list[tuple[int, int]]:
    """Optimal assignment restricted to pairs where ``allowed`` is true.

    Forbidden pairs get a sentinel larger than any sum of allowed costs, so
    the solver first maximises the number of allowed matches.
    """
    cost = np.asarray(cost, dtype=float)
    allowed = np.asarray(allowed, dtype=bool)
    if cost.size == 0 or not allowed.any():
        return []
    big = (np.abs(cost[allowed]).sum() + 1.0) * (max(cost.shape) + 1)
    gated = np.where(allowed, cost, big)
    return [(r, c) for r, c in hungarian(gated) if allowed[r, c]]


@dataclass(frozen=True)
class EvalReport:
    mota: float
    idf1: float
    idsw: int
    fp: int
    fn: int
    mt: float           # percent of gt tracks
    ml: float           # percent of gt tracks
    gt_count: int       # gt boxes
    matches: int = 0
    gt_tracks: int = 0
    mt_count: int = 0
    ml_count: int = 0
    hyp_count: int = 0
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0


def _by_frame(tracks) -> dict[int, dict[int, object]]:
    out: dict[int, dict[int, object]] = {}
    for t in tracks:
        for pt in t.points:
            frame = out.setdefault(pt.frame, {})
            if t.id in frame:
                raise ValueError(f"id {t.id} appears twice in frame {pt.frame}")
            frame[t.id] = pt.box
    return out


def _iou_matrix(a_boxes, b_boxes) -> np.ndarray:
    return np.array([[iou(a, b) for b in b_boxes] for a in a_boxes]).reshape(len(a_boxes), len(b_boxes))


def _ratio(num, den) -> float:
    return num / den if den else float("nan")


def evaluate_idf1(gt_tracks, hyp_tracks, iou_threshold: float = 0.5) -> float:
    return _identity_counts(gt_tracks, hyp_tracks, iou_threshold)[3]


def _identity_counts(gt_tracks, hyp_tracks, iou_threshold):
    gt = _by_frame(gt_tracks)
    hyp = _by_frame(hyp_tracks)
    gt_ids = sorted({t.id for t in gt_tracks})
    hyp_ids = sorted({t.id for t in hyp_tracks})
    gi = {g: i for i, g in enumerate(gt_ids)}
    hi = {h: i for i, h in enumerate(hyp_ids)}
    overlap = np.zeros((len(gt_ids), len(hyp_ids)))
    for frame, gboxes in gt.items():
        hboxes = hyp.get(frame)
        if not hboxes:
            continue
        for g, gb in gboxes.items():
            for h, hb in hboxes.items():
                if iou(gb, hb) >= iou_threshold:
                    overlap[gi[g], hi[h]] += 1
    n_gt = sum(len(v) for v in gt.values())
    n_hyp = sum(len(v) for v in hyp.values())
    idtp = int(sum(overlap[r, c] for r, c in hungarian(-overlap))) if overlap.size else 0
    idfn, idfp = n_gt - idtp, n_hyp - idtp
    idf1 = _ratio(2 * idtp, 2 * idtp + idfp + idfn)
    return idtp, idfp, idfn, idf1


def evaluate_clear(gt_tracks, hyp_tracks, iou_threshold: float = 0.5) -> EvalReport:
    """CLEAR-MOT counts with correspondence persistence, plus IDF1.

    A gt object keeps its previous hypothesis while their IoU stays at or
    above the threshold; the rest are matched per frame by Hungarian on
    ``1 - IoU``. An identity switch is counted whenever a gt object is
    matched to a hypothesis other than the one it was last matched to.
    """
    gt_tracks = list(gt_tracks)
    hyp_tracks = list(hyp_tracks)
    gt = _by_frame(gt_tracks)
    hyp = _by_frame(hyp_tracks)
    last_match: dict[int, int] = {}
    covered: dict[int, int] = {}
    fp = fn = idsw = n_match = 0

    for frame in sorted(set(gt) | set(hyp)):
        g = gt.get(frame, {})
        h = hyp.get(frame, {})
        matched: dict[int, int] = {}
        used_h = set()
        for gid in sorted(g):
            hid = last_match.get(gid)
            if hid is not None and hid in h and hid not in used_h \
                    and iou(g[gid], h[hid]) >= iou_threshold:
                matched[gid] = hid
                used_h.add(hid)
        rest_g = [x for x in sorted(g) if x not in matched]
        rest_h = [x for x in sorted(h) if x not in used_h]
        if rest_g and rest_h:
            ious = _iou_matrix([g[x] for x in rest_g], [h[x] for x in rest_h])
            for r, c in gated_assignment(1.0 - ious, ious >= iou_threshold):
                matched[rest_g[r]] = rest_h[c]

        for gid, hid in matched.items():
            if gid in last_match and last_match[gid] != hid:
                idsw += 1
            last_match[gid] = hid
            covered[gid] = covered.get(gid, 0) + 1
        n_match += len(matched)
        fp += len(h) - len(matched)
        fn += len(g) - len(matched)

    gt_count = sum(len(v) for v in gt.values())
    lengths = {t.id: len(t.points) for t in gt_tracks}
    mt_count = sum(1 for gid, n in lengths.items() if covered.get(gid, 0) >= MT_COVERAGE * n)
    ml_count = sum(1 for gid, n in lengths.items() if covered.get(gid, 0) <= ML_COVERAGE * n)
    idtp, idfp, idfn, idf1 = _identity_counts(gt_tracks, hyp_tracks, iou_threshold)
    n_tracks = len(lengths)
    return EvalReport(
        mota=1.0 - (fn + fp + idsw) / gt_count if gt_count else float("nan"),
        idf1=idf1,
        idsw=idsw, fp=fp, fn=fn,
        mt=100.0 * _ratio(mt_count, n_tracks) if n_tracks else 0.0,
        ml=100.0 * _ratio(ml_count, n_tracks) if n_tracks else 0.0,
        gt_count=gt_count, matches=n_match, gt_tracks=n_tracks,
        mt_count=mt_count, ml_count=ml_count,
        hyp_count=sum(len(v) for v in hyp.values()),
        idtp=idtp, idfp=idfp, idfn=idfn,
    )


evaluate = evaluate_clear


def aggregate(reports: Iterable[EvalReport]) -> EvalReport:
    """Sum counts over sequences, then recompute the ratios."""
    reports = list(reports)
    s = {f.name: sum(getattr(r, f.name) for r in reports)
         for f in fields(EvalReport) if f.type in ("int", int)}
    n_tracks = s["gt_tracks"]
    return EvalReport(
        mota=1.0 - (s["fn"] + s["fp"] + s["idsw"]) / s["gt_count"] if s["gt_count"] else float("nan"),
        idf1=_ratio(2 * s["idtp"], 2 * s["idtp"] + s["idfp"] + s["idfn"]),
        mt=100.0 * s["mt_count"] / n_tracks if n_tracks else 0.0,
        ml=100.0 * s["ml_count"] / n_tracks if n_tracks else 0.0,
        **s,
    )


REPORT_COLUMNS = ("name", "MOTA", "IDF1", "IDSW", "FP", "FN", "MT", "ML", "GT")


def report_row(name: str, r: EvalReport) -> list:
    return [name, r.mota, r.idf1, r.idsw, r.fp, r.fn, r.mt, r.ml, r.gt_count]


def write_report(path, named_reports: Sequence[tuple[str, EvalReport]], overall: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for name, r in named_reports:
            w.writerow(report_row(name, r))
        if overall:
            w.writerow(report_row("OVERALL", aggregate(r for _, r in named_reports)))
