"""Retrieval and highlight evaluation: temporal IoU, AP, mAP sweeps,
Recall@K, truncated top-5 mAP, and HIT@1.

All metrics are rank-based (invariant to positive rescaling of scores) and
live in [0, 1]; reports multiply by 100 only at display time. Score ties are
broken by input order everywhere, and AP uses the all-point
precision-recall area (no interpolation).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import DataError

__all__ = [
    "Span", "EvalReport", "iou_1d", "average_precision", "recall_at_k",
    "map_over_thresholds", "top5_map", "hit_at_1", "sweep_thresholds",
    "RECALL_IOUS", "MAP_IOUS", "POSITIVE_RATING", "VERY_GOOD_RATING",
]

RECALL_IOUS = (0.5, 0.7)
MAP_IOUS = (0.5, 0.75)
# Clip rated >= 3 counts as a highlight positive; 4 is the "Very Good" class.
POSITIVE_RATING = 3
VERY_GOOD_RATING = 4


@dataclass(frozen=True)
class Span:
    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise DataError(f"span endpoints must be finite, got {self}")
        if self.end <= self.start:
            raise DataError(f"degenerate span [{self.start}, {self.end}]")

    @property
    def length(self) -> float:
        return self.end - self.start


def sweep_thresholds() -> list[float]:
    """The ten IoU thresholds 0.5, 0.55, ..., 0.95."""
    return [round(0.5 + 0.05 * i, 2) for i in range(10)]


def iou_1d(a: Span, b: Span) -> float:
    """Intersection over union of two spans; 0 when disjoint."""
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union


def _score_order(scored_preds) -> list[int]:
    # Descending score, ties kept in input order.
    return sorted(range(len(scored_preds)), key=lambda i: (-scored_preds[i][1], i))


def _greedy_match(ordered_spans: list[Span], gts: list[Span],
                  iou_thr: float) -> list[int]:
    """For each prediction in rank order, the matched GT index or -1.

    Each prediction consumes at most one ground truth: the unmatched GT with
    the highest IoU >= threshold (lowest index on ties).
    """
    taken = [False] * len(gts)
    out = []
    for span in ordered_spans:
        best, best_iou = -1, 0.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou_1d(span, gt)
            if v >= iou_thr and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
        out.append(best)
    return out


def average_precision(scored_preds, gts: list[Span], iou_thr: float) -> float:
    """Area under the all-point precision-recall curve.

    ``scored_preds`` is a list of (Span, score). Empty ground truth yields 0;
    the report layer attaches the warning flag.
    """
    if not gts or not scored_preds:
        return 0.0
    order = _score_order(scored_preds)
    matches = _greedy_match([scored_preds[i][0] for i in order], gts, iou_thr)
    ap = 0.0
    tp = 0
    for rank, m in enumerate(matches, start=1):
        if m >= 0:
            tp += 1
            ap += (1.0 / len(gts)) * (tp / rank)  # recall step times precision
    return ap


def recall_at_k(scored_preds, gts: list[Span], k: int, iou_thr: float) -> float:
    """Fraction of GT spans matched by any of the top-k predictions."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if not gts:
        return 0.0
    order = _score_order(scored_preds)[:k]
    matches = _greedy_match([scored_preds[i][0] for i in order], gts, iou_thr)
    hit = sum(1 for m in matches if m >= 0)
    return hit / len(gts)


def map_over_thresholds(scored_preds_per_query, gts_per_query,
                        thresholds) -> float:
    """AP per query per threshold, averaged over queries then thresholds."""
    thresholds = list(thresholds)
    if not thresholds:
        raise DataError("threshold list must be non-empty")
    if not scored_preds_per_query:
        return 0.0
    per_thr = []
    for thr in thresholds:
        aps = [average_precision(preds, gts, thr)
               for preds, gts in zip(scored_preds_per_query, gts_per_query)]
        per_thr.append(sum(aps) / len(aps))
    return sum(per_thr) / len(per_thr)


def _rank_clips(scores) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def _ranking_ap(ranked_positive: list[bool], n_positive: int,
                cutoff: int | None = None) -> float:
    """AP of a relevance-ranked list, optionally truncated at ``cutoff``."""
    if n_positive == 0:
        return 0.0
    limit = len(ranked_positive) if cutoff is None else min(cutoff, len(ranked_positive))
    denom = n_positive if cutoff is None else min(n_positive, cutoff)
    ap = 0.0
    seen = 0
    for rank in range(1, limit + 1):
        if ranked_positive[rank - 1]:
            seen += 1
            ap += seen / rank
    return ap / denom


def top5_map(clip_scores_per_video, gt_ratings_per_video, cutoff: int = 5) -> float:
    """Mean over videos of AP on the score ranking truncated at rank 5.

    Positives are clips rated >= 3 on the 0-4 scale; ties in predicted score
    keep lower clip indices first.
    """
    aps = []
    for scores, ratings in zip(clip_scores_per_video, gt_ratings_per_video):
        if len(scores) != len(ratings):
            raise DataError(
                f"scores ({len(scores)}) and ratings ({len(ratings)}) misaligned")
        if not scores:
            raise DataError("video with zero clips")
        order = _rank_clips(scores)
        positive = [ratings[i] >= POSITIVE_RATING for i in order]
        aps.append(_ranking_ap(positive, sum(positive), cutoff))
    if not aps:
        return 0.0
    return sum(aps) / len(aps)


def highlight_map(clip_scores_per_video, gt_ratings_per_video) -> float:
    """Full-ranking clip AP per video (positives rated >= 3), mean over videos."""
    aps = []
    for scores, ratings in zip(clip_scores_per_video, gt_ratings_per_video):
        if len(scores) != len(ratings) or not scores:
            raise DataError("scores and ratings misaligned or empty")
        order = _rank_clips(scores)
        positive = [ratings[i] >= POSITIVE_RATING for i in order]
        aps.append(_ranking_ap(positive, sum(positive)))
    if not aps:
        return 0.0
    return sum(aps) / len(aps)


def hit_at_1(clip_scores_per_video, gt_ratings_per_video) -> float:
    """Fraction of videos whose top-scored clip is rated Very Good (4).

    Predicted-score ties resolve to the lower clip index.
    """
    hits = []
    for scores, ratings in zip(clip_scores_per_video, gt_ratings_per_video):
        if not scores:
            raise DataError("video with zero clips")
        if len(scores) != len(ratings):
            raise DataError(
                f"scores ({len(scores)}) and ratings ({len(ratings)}) misaligned")
        top = _rank_clips(scores)[0]
        hits.append(1.0 if ratings[top] == VERY_GOOD_RATING else 0.0)
    if not hits:
        return 0.0
    return sum(hits) / len(hits)


@dataclass
class EvalReport:
    """Named metric bundle with canonical JSON serialization.

    Values are fractions in [0, 1]; keys are sorted and floats fixed to four
    decimals so golden-file comparisons are byte-exact.
    """
    metrics: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def add(self, name: str, value: float) -> None:
        if not (0.0 <= value <= 1.0):
            raise DataError(f"metric {name} out of range: {value}")
        self.metrics[name] = value

    def warn(self, message: str) -> None:
        if message not in self.warnings:
            self.warnings.append(message)

    def to_json(self) -> str:
        items = ",".join(
            f"{json.dumps(k)}:{self.metrics[k]:.4f}" for k in sorted(self.metrics))
        warns = ",".join(json.dumps(w) for w in sorted(self.warnings))
        return '{"metrics":{' + items + '},"warnings":[' + warns + "]}"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        raw = json.loads(text)
        return cls(metrics=dict(raw["metrics"]), warnings=list(raw["warnings"]))


def build_report(mr_preds_per_video=None, mr_gts_per_video=None,
                 hd_scores_per_video=None, hd_ratings_per_video=None,
                 video_ids=None) -> EvalReport:
    """Assemble the metric suite for whichever annotation types are present."""
    report = EvalReport()
    ids = video_ids

    if mr_preds_per_video is not None:
        n = len(mr_preds_per_video)
        names = ids if ids is not None else [str(i) for i in range(n)]
        for vid, preds, gts in zip(names, mr_preds_per_video, mr_gts_per_video):
            if not gts:
                report.warn(f"video {vid}: no ground-truth moments; AP counted as 0")
            if not preds:
                report.warn(f"video {vid}: no predictions; AP counted as 0")
        for thr in MAP_IOUS:
            report.add(f"MR-mAP@{thr}", map_over_thresholds(
                mr_preds_per_video, mr_gts_per_video, [thr]))
        report.add("MR-mAP-avg", map_over_thresholds(
            mr_preds_per_video, mr_gts_per_video, sweep_thresholds()))
        for k in (1, 5):
            for thr in RECALL_IOUS:
                vals = [recall_at_k(p, g, k, thr)
                        for p, g in zip(mr_preds_per_video, mr_gts_per_video)]
                report.add(f"MR-R{k}@{thr}", sum(vals) / len(vals) if vals else 0.0)

    if hd_scores_per_video is not None:
        report.add("HD-mAP", highlight_map(hd_scores_per_video, hd_ratings_per_video))
        report.add("HD-top5-mAP", top5_map(hd_scores_per_video, hd_ratings_per_video))
        report.add("HD-HIT@1", hit_at_1(hd_scores_per_video, hd_ratings_per_video))
        for i, ratings in enumerate(hd_ratings_per_video):
            if not any(r >= POSITIVE_RATING for r in ratings):
                vid = ids[i] if ids is not None else str(i)
                report.warn(f"video {vid}: no positive clips; AP counted as 0")

    return report
