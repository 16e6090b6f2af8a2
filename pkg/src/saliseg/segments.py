"""Plan decoding, segment scoring and selection, pooling, and baselines.

Segments file format: JSON Lines, one object per video,
``{"video_id": str, "segments": [{"anchor", "start", "end", "score"}, ...],
"selected": [segment indices in temporal order]}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .errors import DataError
from .rng import substream
from .transport import TransportPlan

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Segment:
    """A half-open run of frames assigned to one anchor, with its scores."""

    anchor_id: int
    start: int
    end: int
    score_ot: float = 0.0
    score_len: float = 0.0
    score: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise DataError(f"bad segment bounds ({self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class SegmentSet:
    """Contiguous partition of the valid frames plus the selected indices."""

    segments: tuple[Segment, ...]
    selected: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        prev_end = 0
        for seg in self.segments:
            if seg.start != prev_end:
                raise DataError("segments must partition the frame range")
            prev_end = seg.end

    @property
    def n_frames(self) -> int:
        return self.segments[-1].end if self.segments else 0

    def selected_segments(self) -> list[Segment]:
        return [self.segments[i] for i in self.selected]


def decode_segments(plan: TransportPlan) -> SegmentSet:
    """Run-length encode the per-frame argmax anchor (ties to lower index)."""
    t = np.asarray(plan.T, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 1:
        raise DataError("plan must be F_v x K")
    assign = np.argmax(t, axis=1)
    segments = []
    start = 0
    for n in range(1, len(assign) + 1):
        if n == len(assign) or assign[n] != assign[start]:
            segments.append(Segment(anchor_id=int(assign[start]), start=start, end=n))
            start = n
    return SegmentSet(segments=tuple(segments))


def score_segments(segs: SegmentSet, plan: TransportPlan) -> SegmentSet:
    """Attach alignment and length scores: S = mean plan mass * log(1 + L)."""
    t = np.asarray(plan.T, dtype=np.float64)
    scored = []
    for seg in segs.segments:
        mass = float(t[seg.start : seg.end, seg.anchor_id].sum())
        s_ot = mass / seg.length
        s_len = float(np.log1p(seg.length))
        scored.append(replace(seg, score_ot=s_ot, score_len=s_len, score=s_ot * s_len))
    return SegmentSet(segments=tuple(scored), selected=segs.selected)


def select_topk(segs: SegmentSet, k: int, min_len: int = 1) -> SegmentSet:
    """Keep the k highest-scoring segments; report them in temporal order.

    Ties break toward the earlier segment. If there are fewer than k
    segments, all are selected. Segments shorter than ``min_len`` stay in
    the partition but are never selected (default 1: no filtering); if the
    filter removes everything it is ignored.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    eligible = [i for i, s in enumerate(segs.segments) if s.length >= min_len]
    if not eligible:
        eligible = list(range(len(segs.segments)))
    order = sorted(
        eligible, key=lambda i: (-segs.segments[i].score, segs.segments[i].start)
    )
    chosen = sorted(order[: min(k, len(order))])
    return SegmentSet(segments=segs.segments, selected=tuple(chosen))


def pool_segment_features(
    seg: Segment, xs: NDArray[np.float64], p_s: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Saliency-weighted average of the segment's feature rows.

    Falls back to the uniform mean when the segment carries zero prior mass,
    which keeps the result inside the convex hull of its rows either way.
    """
    xs = np.asarray(xs, dtype=np.float64)
    p_s = np.asarray(p_s, dtype=np.float64)
    if seg.end > xs.shape[0]:
        raise DataError("segment exceeds feature rows")
    rows = xs[seg.start : seg.end]
    weights = p_s[seg.start : seg.end]
    total = float(weights.sum())
    if total <= 0.0:
        logger.warning(
            "segment [%d, %d) has zero saliency mass, uniform pooling", seg.start, seg.end
        )
        return rows.mean(axis=0)
    return (weights @ rows) / total


def baseline_uniform(n_frames: int, k: int) -> SegmentSet:
    """k contiguous near-equal segments; the remainder goes to the earliest."""
    if not 1 <= k <= n_frames:
        raise DataError("need 1 <= k <= F_v")
    base, rem = divmod(n_frames, k)
    segments = []
    start = 0
    for i in range(k):
        length = base + (1 if i < rem else 0)
        seg = Segment(anchor_id=i, start=start, end=start + length)
        seg = replace(seg, score_len=float(np.log1p(seg.length)), score=float(np.log1p(seg.length)))
        segments.append(seg)
        start += length
    return SegmentSet(segments=tuple(segments), selected=tuple(range(k)))


def baseline_kmeans(
    xs: NDArray[np.float64], k: int, seed: int, video_id: str = "", max_iter: int = 100
) -> SegmentSet:
    """Lloyd's iterations with deterministic farthest-point seeding.

    Cluster labels are run-length encoded into contiguous segments, so a
    label sequence 0,1,0 yields three segments. An emptied cluster is
    re-seeded at the point farthest from its assigned center and captures
    that point immediately, which keeps every cluster nonempty; on fully
    degenerate input (all rows identical) this splits one frame off into a
    singleton segment. Segment scores are log(1 + L), the only intrinsic
    ranking available.
    """
    xs = np.asarray(xs, dtype=np.float64)
    n = xs.shape[0]
    if n < k:
        raise DataError("need F_v >= k")
    rng = substream(seed, "kmeans", video_id)
    first = int(rng.integers(n))
    centers = [xs[first]]
    min_d = np.linalg.norm(xs - xs[first], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d))
        centers.append(xs[nxt])
        min_d = np.minimum(min_d, np.linalg.norm(xs - xs[nxt], axis=1))
    centers = np.stack(centers)

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dists = np.linalg.norm(xs[:, None, :] - centers[None, :, :], axis=2)
        new_labels = np.argmin(dists, axis=1)
        for j in range(k):
            members = new_labels == j
            if np.any(members):
                centers[j] = xs[members].mean(axis=0)
            else:
                # Deterministic re-seed: the point farthest from its own center.
                gaps = dists[np.arange(n), new_labels]
                far = int(np.argmax(gaps))
                centers[j] = xs[far]
                new_labels[far] = j
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels

    segments = []
    start = 0
    for i in range(1, n + 1):
        if i == n or labels[i] != labels[start]:
            seg = Segment(anchor_id=int(labels[start]), start=start, end=i)
            length_score = float(np.log1p(seg.length))
            segments.append(replace(seg, score_len=length_score, score=length_score))
            start = i
    return SegmentSet(segments=tuple(segments))


# ---------------------------------------------------------------------------
# Segments file IO
# ---------------------------------------------------------------------------

def segments_to_doc(video_id: str, segs: SegmentSet) -> dict:
    return {
        "video_id": video_id,
        "segments": [
            {"anchor": s.anchor_id, "start": s.start, "end": s.end, "score": s.score}
            for s in segs.segments
        ],
        "selected": list(segs.selected),
    }


def save_segments(docs: list[dict], path: str | Path) -> None:
    lines = [json.dumps(doc, sort_keys=True) for doc in docs]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_segments(path: str | Path) -> dict[str, SegmentSet]:
    out: dict[str, SegmentSet] = {}
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            segments = tuple(
                Segment(
                    anchor_id=int(s["anchor"]), start=int(s["start"]), end=int(s["end"]),
                    score=float(s["score"]),
                )
                for s in doc["segments"]
            )
            out[str(doc["video_id"])] = SegmentSet(
                segments=segments, selected=tuple(int(j) for j in doc["selected"])
            )
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise DataError(f"{path}:{i + 1}: bad segments line: {exc}") from exc
    return out
