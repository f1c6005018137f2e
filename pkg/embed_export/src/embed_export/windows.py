"""Sliding-window arithmetic over VAD speech segments.

Must stay byte-for-byte compatible with the consuming toolkit's windowing:
times are quantized to integer milliseconds (half-up) and a segment [a, b]
yields windows [a + k*shift, a + k*shift + L] while they fit, plus a final
[b - L, b] window when the tail would otherwise be uncovered; segments
shorter than L become a single window when at least min_window long.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ExportError


def to_ms(seconds: float) -> int:
    if not math.isfinite(seconds) or seconds < 0:
        raise ExportError(f"bad time value: {seconds!r}")
    return int(math.floor(seconds * 1000.0 + 0.5))


@dataclass(frozen=True)
class WindowPlan:
    window_length: float = 5.0
    shift: float = 1.0
    min_window: float = 1.0

    def __post_init__(self):
        if not (0 < self.shift <= self.window_length):
            raise ExportError(f"need 0 < shift <= window_length, got {self}")
        if not (0 < self.min_window <= self.window_length):
            raise ExportError(f"need 0 < min_window <= window_length, got {self}")


def make_windows(segments_ms: list[tuple[int, int]], plan: WindowPlan) -> list[tuple[int, int]]:
    """(onset_ms, end_ms) windows for disjoint sorted speech segments."""
    length = to_ms(plan.window_length)
    shift = to_ms(plan.shift)
    min_win = to_ms(plan.min_window)
    ordered = sorted(segments_ms)
    for (_, prev_end), (cur_on, _) in zip(ordered, ordered[1:]):
        if cur_on < prev_end:
            raise ExportError("speech segments overlap")
    windows: list[tuple[int, int]] = []
    for a, b in ordered:
        if b <= a:
            raise ExportError(f"empty speech segment ({a}, {b})")
        if b - a < length:
            if b - a >= min_win:
                windows.append((a, b))
            continue
        start = a
        while start + length <= b:
            windows.append((start, start + length))
            start += shift
        if windows[-1][1] < b:
            windows.append((b - length, b))
    return windows


def parse_lab(text: str) -> list[tuple[int, int]]:
    """Parse `<onset> <end> [label]` speech-segment lines into ms intervals."""
    segments: list[tuple[int, int]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 2:
            raise ExportError(f"line {line_no}: expected '<onset> <end>'")
        try:
            onset = to_ms(float(fields[0]))
            end = to_ms(float(fields[1]))
        except ValueError:
            raise ExportError(f"line {line_no}: bad time field") from None
        if end <= onset:
            raise ExportError(f"line {line_no}: end not after onset")
        segments.append((onset, end))
    return segments
