"""Fixed-length analysis windows over speech segments, and the inverse step:
assembling clustered local activities / labeled windows back into a global
Annotation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .timeline import Annotation, Segment, to_ms

DEFAULT_FRAME_RATE = 100.0  # frames per second; millisecond-compatible


@dataclass(frozen=True)
class WindowPlan:
    """Sliding-window parameters, all in seconds."""

    window_length: float = 5.0
    shift: float = 1.0
    min_window: float = 1.0

    def __post_init__(self):
        if not (0 < self.shift <= self.window_length):
            raise ConfigError(
                f"need 0 < shift <= window_length, got shift={self.shift}, "
                f"window_length={self.window_length}"
            )
        if not (0 < self.min_window <= self.window_length):
            raise ConfigError(
                f"need 0 < min_window <= window_length, got min_window={self.min_window}"
            )

    @property
    def window_length_ms(self) -> int:
        return to_ms(self.window_length)

    @property
    def shift_ms(self) -> int:
        return to_ms(self.shift)

    @property
    def min_window_ms(self) -> int:
        return to_ms(self.min_window)


def make_windows(speech_segments: Sequence[Segment], plan: WindowPlan) -> list[Segment]:
    """Subsegment disjoint speech segments into overlapping analysis windows.

    Per segment [a, b]: windows [a + k*shift, a + k*shift + L] while they fit;
    if the tail of the segment is left uncovered and b - a >= L, one extra
    window [b - L, b] is appended. Segments shorter than L are emitted as a
    single window when at least min_window long, otherwise skipped.
    """
    L, shift, min_win = plan.window_length_ms, plan.shift_ms, plan.min_window_ms
    ordered = sorted(speech_segments, key=lambda s: (s.onset_ms, s.end_ms))
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.onset_ms < prev.end_ms:
            raise DataError(f"speech segments overlap: {prev!r} vs {cur!r}")

    windows: list[Segment] = []
    for seg in ordered:
        a, b = seg.onset_ms, seg.end_ms
        if b - a < L:
            if b - a >= min_win:
                windows.append(seg)
            continue
        start = a
        while start + L <= b:
            windows.append(Segment(start, L))
            start += shift
        if windows[-1].end_ms < b:
            windows.append(Segment(b - L, L))
    return windows


@dataclass(frozen=True)
class LocalActivity:
    """Per-window frame activity of one local speaker slot."""

    window: Segment
    local_speaker_index: int
    frame_activity: np.ndarray
    frame_rate: float = DEFAULT_FRAME_RATE

    def __post_init__(self):
        activity = np.asarray(self.frame_activity, dtype=np.float64)
        object.__setattr__(self, "frame_activity", activity)
        if activity.ndim != 1:
            raise DataError("frame_activity must be a 1-D vector")
        expected = int(round(self.window.duration * self.frame_rate))
        if len(activity) != expected:
            raise DataError(
                f"frame_activity has {len(activity)} frames, expected {expected} "
                f"for a {self.window.duration:.3f}s window at {self.frame_rate} fps"
            )
        if np.any(activity < 0.0) or np.any(activity > 1.0):
            raise DataError("frame activities must lie in [0, 1]")

    @property
    def start_frame(self) -> int:
        return int(round(self.window.onset * self.frame_rate))


def assemble_global(
    locals_: Sequence[LocalActivity],
    cluster_of: Mapping[tuple[Segment, int], str],
    recording_id: str,
    threshold: float = 0.5,
    min_on: float = 0.0,
    min_off: float = 0.0,
) -> Annotation:
    """Aggregate clustered local activities into a recording-level Annotation.

    Per global label the frame activity is the mean over covering windows
    assigned to that label, binarized with a strict `>` at `threshold`;
    inactive gaps shorter than min_off are closed, then active runs shorter
    than min_on are dropped.
    """
    if not locals_:
        return Annotation(recording_id, [])
    fps = locals_[0].frame_rate
    for la in locals_:
        if la.frame_rate != fps:
            raise DataError(
                f"frame-rate mismatch: {la.frame_rate} vs {fps} at window {la.window!r}"
            )

    n_frames = max(la.start_frame + len(la.frame_activity) for la in locals_)
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, np.ndarray] = {}
    for la in locals_:
        key = (la.window, la.local_speaker_index)
        try:
            label = cluster_of[key]
        except KeyError:
            raise DataError(
                f"no cluster assignment for window {la.window!r} "
                f"speaker {la.local_speaker_index}"
            ) from None
        if label not in sums:
            sums[label] = np.zeros(n_frames)
            counts[label] = np.zeros(n_frames)
        lo = la.start_frame
        hi = lo + len(la.frame_activity)
        sums[label][lo:hi] += la.frame_activity
        counts[label][lo:hi] += 1.0

    entries: list[tuple[Segment, str]] = []
    min_on_frames = min_on * fps
    min_off_frames = min_off * fps
    for label in sums:
        covered = counts[label] > 0
        mean = np.zeros(n_frames)
        mean[covered] = sums[label][covered] / counts[label][covered]
        active = mean > threshold
        # close interior inactive gaps shorter than min_off
        for lo, hi in _runs(~active):
            if lo > 0 and hi < n_frames and (hi - lo) < min_off_frames:
                active[lo:hi] = True
        for lo, hi in _runs(active):
            if (hi - lo) < min_on_frames:
                continue
            onset_ms = int(round(lo * 1000.0 / fps))
            end_ms = int(round(hi * 1000.0 / fps))
            entries.append((Segment(onset_ms, end_ms - onset_ms), label))
    return Annotation(recording_id, entries)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [lo, hi) index ranges of consecutive True values."""
    if not mask.any():
        return []
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[0::2], edges[1::2]))


def windows_to_annotation(
    windows: Sequence[Segment], labels: Sequence[str], recording_id: str
) -> Annotation:
    """Turn per-window hard labels into non-overlapping labeled segments.

    Overlapping neighbours with the same label are merged; where the label
    changes, the boundary is placed at the midpoint of the overlap.
    """
    if len(windows) != len(labels):
        raise DataError(f"{len(windows)} windows vs {len(labels)} labels")
    order = sorted(range(len(windows)), key=lambda i: (windows[i].onset_ms, windows[i].end_ms))
    entries: list[tuple[Segment, str]] = []
    cur_on = cur_end = 0
    cur_label: str | None = None
    for i in order:
        w, lab = windows[i], str(labels[i])
        if cur_label is None:
            cur_on, cur_end, cur_label = w.onset_ms, w.end_ms, lab
        elif lab == cur_label and w.onset_ms <= cur_end:
            cur_end = max(cur_end, w.end_ms)
        elif w.onset_ms >= cur_end:
            entries.append((Segment(cur_on, cur_end - cur_on), cur_label))
            cur_on, cur_end, cur_label = w.onset_ms, w.end_ms, lab
        else:
            mid = (w.onset_ms + cur_end) // 2
            mid = max(mid, cur_on)  # guard nested windows
            if mid > cur_on:
                entries.append((Segment(cur_on, mid - cur_on), cur_label))
            cur_on, cur_end, cur_label = mid, max(w.end_ms, mid + 1), lab
    if cur_label is not None:
        entries.append((Segment(cur_on, cur_end - cur_on), cur_label))
    return Annotation(recording_id, _merge_adjacent(entries))


def _merge_adjacent(entries: list[tuple[Segment, str]]) -> list[tuple[Segment, str]]:
    merged: list[tuple[Segment, str]] = []
    for seg, lab in entries:
        if merged and merged[-1][1] == lab and merged[-1][0].end_ms >= seg.onset_ms:
            prev, _ = merged.pop()
            seg = Segment(prev.onset_ms, max(prev.end_ms, seg.end_ms) - prev.onset_ms)
        merged.append((seg, lab))
    return merged
