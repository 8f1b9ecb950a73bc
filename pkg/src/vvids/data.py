"""Feature ingestion, stream synchronization, and the planted-moment
synthetic dataset.

The on-disk format is JSON Lines: one video record per line, UTF-8, object
keys sorted, floats in shortest round-trip form. Saving a loaded dataset
reproduces the file byte-for-byte. Extractor backbones are out of scope;
records carry pre-extracted clip features only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError, SynchronizationError
from .metrics import Span
from .numerics import make_rng

__all__ = ["ClipFeatures", "VideoRecord", "SyntheticSpec", "load_dataset",
           "save_dataset", "synchronize", "generate_synthetic"]


@dataclass
class ClipFeatures:
    t_start: float
    t_end: float
    video_feat: np.ndarray
    audio_feat: np.ndarray


@dataclass
class VideoRecord:
    video_id: str
    duration: float
    clips: list[ClipFeatures]
    query_text: str
    query_feat: np.ndarray  # [L x d_t]
    moments: list[Span]
    ratings: list[int]  # one 0-4 importance rating per clip

    @property
    def n_clips(self) -> int:
        return len(self.clips)

    def video_matrix(self) -> np.ndarray:
        return np.stack([c.video_feat for c in self.clips])

    def audio_matrix(self) -> np.ndarray:
        return np.stack([c.audio_feat for c in self.clips])

    def normalized_moments(self) -> list[tuple[float, float]]:
        return [(m.start / self.duration, m.end / self.duration)
                for m in self.moments]


# -- JSONL serialization -----------------------------------------------------

def _record_to_obj(rec: VideoRecord) -> dict:
    return {
        "video_id": rec.video_id,
        "duration": rec.duration,
        "clips": [{
            "t_start": c.t_start,
            "t_end": c.t_end,
            "video_feat": [float(x) for x in c.video_feat],
            "audio_feat": [float(x) for x in c.audio_feat],
        } for c in rec.clips],
        "query_text": rec.query_text,
        "query_feat": [[float(x) for x in row] for row in rec.query_feat],
        "annotations": {
            "moments": [{"start": m.start, "end": m.end} for m in rec.moments],
            "ratings": list(rec.ratings),
        },
    }


def save_dataset(records: list[VideoRecord], path) -> None:
    """Canonical JSONL writer: sorted keys, shortest float repr, UTF-8."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_record_to_obj(rec), sort_keys=True,
                                ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


class _Check:
    """Carries line/video context so violations name their exact location."""

    def __init__(self, lineno: int, video_id: str):
        self.where = f"line {lineno}: video {video_id}"

    def fail(self, path: str, why: str):
        raise ParseError(f"{self.where}: {path}: {why}")

    def require(self, cond: bool, path: str, why: str):
        if not cond:
            self.fail(path, why)


def _parse_record(obj: dict, lineno: int) -> VideoRecord:
    if not isinstance(obj, dict):
        raise ParseError(f"line {lineno}: record is not an object")
    vid = obj.get("video_id")
    if not isinstance(vid, str) or not vid:
        raise ParseError(f"line {lineno}: video_id: missing or not a string")
    ck = _Check(lineno, vid)

    for key in ("duration", "clips", "query_text", "query_feat", "annotations"):
        ck.require(key in obj, key, "missing field")
    duration = obj["duration"]
    ck.require(isinstance(duration, (int, float)) and math.isfinite(duration)
               and duration > 0, "duration", f"must be positive, got {duration!r}")

    clips = []
    prev_end = 0.0
    for i, c in enumerate(obj["clips"]):
        p = f"clips[{i}]"
        ck.require(isinstance(c, dict), p, "not an object")
        for key in ("t_start", "t_end", "video_feat", "audio_feat"):
            ck.require(key in c, f"{p}.{key}", "missing field")
        ck.require(c["t_end"] > c["t_start"], f"{p}.t_end",
                   f"clip interval [{c['t_start']}, {c['t_end']}] is empty")
        ck.require(c["t_start"] >= prev_end - 1e-9, f"{p}.t_start",
                   f"overlaps or precedes previous clip ending at {prev_end}")
        prev_end = c["t_end"]
        clips.append(ClipFeatures(
            t_start=float(c["t_start"]), t_end=float(c["t_end"]),
            video_feat=np.asarray(c["video_feat"], dtype=np.float64),
            audio_feat=np.asarray(c["audio_feat"], dtype=np.float64)))
    ck.require(not clips or clips[-1].t_end <= duration + 1e-9,
               "clips", f"extend past duration {duration}")

    query_feat = np.asarray(obj["query_feat"], dtype=np.float64)
    ck.require(query_feat.ndim == 2 and query_feat.shape[0] >= 1, "query_feat",
               f"expected a non-empty 2-D matrix, got shape {query_feat.shape}")

    ann = obj["annotations"]
    ck.require(isinstance(ann, dict), "annotations", "not an object")
    moments = []
    for i, m in enumerate(ann.get("moments", [])):
        p = f"annotations.moments[{i}]"
        ck.require(isinstance(m, dict) and "start" in m and "end" in m, p,
                   "needs start and end")
        ck.require(m["end"] > m["start"], p, f"degenerate span {m}")
        ck.require(0.0 <= m["start"] and m["end"] <= duration + 1e-9, p,
                   f"outside [0, {duration}]")
        moments.append(Span(float(m["start"]), float(m["end"])))
    ratings = ann.get("ratings", [])
    ck.require(len(ratings) == len(clips), "annotations.ratings",
               f"{len(ratings)} ratings for {len(clips)} clips")
    for i, r in enumerate(ratings):
        ck.require(isinstance(r, int) and 0 <= r <= 4, f"annotations.ratings[{i}]",
                   f"rating must be an int in 0..4, got {r!r}")

    return VideoRecord(video_id=vid, duration=float(duration), clips=clips,
                       query_text=str(obj["query_text"]), query_feat=query_feat,
                       moments=moments, ratings=list(ratings))


def load_dataset(path) -> list[VideoRecord]:
    """Load and validate a JSONL dataset; an empty file is an empty dataset."""
    records = []
    dims = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid JSON: {exc}") from exc
            rec = _parse_record(obj, lineno)
            if rec.clips:
                d = (rec.clips[0].video_feat.size, rec.clips[0].audio_feat.size,
                     rec.query_feat.shape[1])
                for i, c in enumerate(rec.clips):
                    if (c.video_feat.size, c.audio_feat.size) != d[:2]:
                        raise ParseError(
                            f"line {lineno}: video {rec.video_id}: clips[{i}]: "
                            f"feature dims differ within the record")
                if dims is None:
                    dims = d
                elif d != dims:
                    raise DataError(
                        f"line {lineno}: video {rec.video_id}: feature dims {d} "
                        f"differ from the dataset's {dims}")
            records.append(rec)
    return records


# -- synchronization ---------------------------------------------------------

def synchronize(video_times, video_feats, audio_times, audio_feats,
                clip_len: float):
    """Align two timestamped streams onto a common grid of clip_len intervals.

    Features whose timestamps fall inside an interval are mean-pooled;
    intervals empty in either stream are dropped from both. Returns the
    surviving clips and their grid indices.
    """
    video_times = np.asarray(video_times, dtype=np.float64)
    audio_times = np.asarray(audio_times, dtype=np.float64)
    video_feats = np.asarray(video_feats, dtype=np.float64)
    audio_feats = np.asarray(audio_feats, dtype=np.float64)
    if clip_len <= 0:
        raise ConfigError(f"clip_len must be positive, got {clip_len}")
    if video_times.size == 0 or audio_times.size == 0:
        raise SynchronizationError("both streams must be non-empty")
    for name, times in (("video", video_times), ("audio", audio_times)):
        if np.any(np.diff(times) < 0):
            raise DataError(f"{name} timestamps must be sorted")

    lo = int(math.floor(min(video_times[0], audio_times[0]) / clip_len))
    hi = int(math.floor(max(video_times[-1], audio_times[-1]) / clip_len))
    v_bins = np.floor(video_times / clip_len).astype(int)
    a_bins = np.floor(audio_times / clip_len).astype(int)

    clips, kept = [], []
    for i in range(lo, hi + 1):
        v_sel = v_bins == i
        a_sel = a_bins == i
        if not v_sel.any() or not a_sel.any():
            continue
        clips.append(ClipFeatures(
            t_start=i * clip_len, t_end=(i + 1) * clip_len,
            video_feat=video_feats[v_sel].mean(axis=0),
            audio_feat=audio_feats[a_sel].mean(axis=0)))
        kept.append(i)
    if not clips:
        raise SynchronizationError(
            "no interval contains both video and audio features")
    return clips, kept


# -- synthetic planted-moment generator ---------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    n_videos: int = 200
    clips_per_video: int = 20
    d_video: int = 32
    d_audio: int = 32
    d_text: int = 16
    moments_per_video: int = 1
    signal_strength: float = 2.0
    query_len: int = 4
    clip_len: float = 2.0
    min_moment_clips: int = 2
    max_moment_clips: int = 4

    def __post_init__(self):
        for name in ("n_videos", "clips_per_video", "d_video", "d_audio",
                     "d_text", "query_len", "min_moment_clips",
                     "max_moment_clips"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.signal_strength < 0:
            raise ConfigError("signal_strength must be >= 0")
        if self.moments_per_video < 0:
            raise ConfigError("moments_per_video must be >= 0")
        if self.moments_per_video * (self.max_moment_clips + 1) - 1 > self.clips_per_video:
            raise ConfigError(
                f"{self.moments_per_video} moments of up to "
                f"{self.max_moment_clips} clips cannot fit in "
                f"{self.clips_per_video} clips")
        if self.min_moment_clips > self.max_moment_clips:
            raise ConfigError("min_moment_clips exceeds max_moment_clips")


def _place_moments(rng, spec: SyntheticSpec) -> list[tuple[int, int]]:
    """Non-overlapping [start_clip, end_clip) intervals, clip-aligned."""
    placed: list[tuple[int, int]] = []
    for _ in range(spec.moments_per_video):
        for _attempt in range(1000):
            width = int(rng.integers(spec.min_moment_clips,
                                     spec.max_moment_clips + 1))
            start = int(rng.integers(0, spec.clips_per_video - width + 1))
            # keep a one-clip gap so adjacent moments stay distinct targets
            if all(start >= e + 1 or start + width <= s - 1 for s, e in placed):
                placed.append((start, start + width))
                break
        else:
            raise ConfigError("could not place non-overlapping moments")
    return sorted(placed)


def generate_synthetic(spec: SyntheticSpec) -> list[VideoRecord]:
    """Planted-moment dataset: clip features are unit Gaussian noise, and
    clips inside a moment additionally receive signal_strength * P(q) for a
    per-video query direction q and fixed random linear maps P per modality.

    Ratings are 4 inside moments and 0..1 outside, so labels and moments stay
    mutually consistent. Deterministic for a fixed seed.
    """
    rng = make_rng(spec.seed)
    proj_video = rng.normal(0.0, 1.0 / math.sqrt(spec.d_text),
                            size=(spec.d_text, spec.d_video))
    proj_audio = rng.normal(0.0, 1.0 / math.sqrt(spec.d_text),
                            size=(spec.d_text, spec.d_audio))
    records = []
    for idx in range(spec.n_videos):
        q = rng.normal(size=spec.d_text)
        q /= np.linalg.norm(q)
        query_feat = q + 0.1 * rng.normal(size=(spec.query_len, spec.d_text))
        vfeat = rng.normal(size=(spec.clips_per_video, spec.d_video))
        afeat = rng.normal(size=(spec.clips_per_video, spec.d_audio))
        spans = _place_moments(rng, spec)
        ratings = [int(r) for r in rng.integers(0, 2, size=spec.clips_per_video)]
        for s, e in spans:
            vfeat[s:e] += spec.signal_strength * (q @ proj_video)
            afeat[s:e] += spec.signal_strength * (q @ proj_audio)
            for t in range(s, e):
                ratings[t] = 4
        clips = [ClipFeatures(t_start=t * spec.clip_len,
                              t_end=(t + 1) * spec.clip_len,
                              video_feat=vfeat[t], audio_feat=afeat[t])
                 for t in range(spec.clips_per_video)]
        records.append(VideoRecord(
            video_id=f"synth-{spec.seed}-{idx:04d}",
            duration=spec.clips_per_video * spec.clip_len,
            clips=clips,
            query_text=f"planted moment query {idx}",
            query_feat=query_feat,
            moments=[Span(s * spec.clip_len, e * spec.clip_len) for s, e in spans],
            ratings=ratings))
    return records
