"""Interval/annotation data model and RTTM / UEM / VAD file I/O.

All times are stored as integer milliseconds so that file round-trips are
bit-exact and scoring differences never depend on float formatting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import DataError, ParseError


def to_ms(seconds: float) -> int:
    """Quantize a non-negative time in seconds to integer milliseconds (half-up)."""
    if not math.isfinite(seconds):
        raise DataError(f"non-finite time value: {seconds!r}")
    return int(math.floor(seconds * 1000.0 + 0.5))


def fmt_ms(ms: int) -> str:
    """Render milliseconds as a seconds string with exactly 3 decimals."""
    sign = "-" if ms < 0 else ""
    ms = abs(ms)
    return f"{sign}{ms // 1000}.{ms % 1000:03d}"


@dataclass(frozen=True, order=True)
class Segment:
    """A time interval with millisecond resolution; duration is strictly positive."""

    onset_ms: int
    duration_ms: int

    def __post_init__(self):
        if self.onset_ms < 0:
            raise DataError(f"segment onset must be >= 0, got {fmt_ms(self.onset_ms)}")
        if self.duration_ms <= 0:
            raise DataError(f"segment duration must be > 0, got {fmt_ms(self.duration_ms)}")

    @classmethod
    def seconds(cls, onset: float, duration: float) -> "Segment":
        return cls(to_ms(onset), to_ms(duration))

    @property
    def end_ms(self) -> int:
        return self.onset_ms + self.duration_ms

    @property
    def onset(self) -> float:
        return self.onset_ms / 1000.0

    @property
    def duration(self) -> float:
        return self.duration_ms / 1000.0

    @property
    def end(self) -> float:
        return self.end_ms / 1000.0

    def intersect(self, other: "Segment") -> "Segment | None":
        on = max(self.onset_ms, other.onset_ms)
        end = min(self.end_ms, other.end_ms)
        if end <= on:
            return None
        return Segment(on, end - on)

    def __repr__(self):
        return f"Segment({fmt_ms(self.onset_ms)}, {fmt_ms(self.duration_ms)})"


class Annotation:
    """Labeled segments over one recording; overlapping segments are allowed.

    Entries are kept sorted by (onset, end, label) and duplicate
    (segment, label) pairs are rejected. Instances are immutable.
    """

    __slots__ = ("recording_id", "_entries")

    def __init__(self, recording_id: str, entries: Iterable[tuple[Segment, str]] = ()):
        self.recording_id = recording_id
        ordered = sorted(entries, key=lambda e: (e[0].onset_ms, e[0].end_ms, e[1]))
        for prev, cur in zip(ordered, ordered[1:]):
            if prev == cur:
                raise DataError(
                    f"duplicate entry {cur[1]!r} at {prev[0]!r} in recording {recording_id!r}"
                )
        self._entries = tuple(ordered)

    @property
    def entries(self) -> tuple[tuple[Segment, str], ...]:
        return self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[tuple[Segment, str]]:
        return iter(self._entries)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Annotation)
            and self.recording_id == other.recording_id
            and self._entries == other._entries
        )

    def __hash__(self):
        return hash((self.recording_id, self._entries))

    def __repr__(self):
        return f"Annotation({self.recording_id!r}, {len(self._entries)} entries)"

    def labels(self) -> list[str]:
        return sorted({label for _, label in self._entries})

    def label_coverage(self, label: str) -> list[tuple[int, int]]:
        """Merged disjoint (onset_ms, end_ms) intervals where `label` is active."""
        return merge_intervals(
            (seg.onset_ms, seg.end_ms) for seg, lab in self._entries if lab == label
        )

    def total_duration(self) -> float:
        """Sum of entry durations in seconds (overlaps counted multiply)."""
        return sum(seg.duration_ms for seg, _ in self._entries) / 1000.0

    def max_end_ms(self) -> int:
        return max((seg.end_ms for seg, _ in self._entries), default=0)

    def rename_labels(self, mapping: Mapping[str, str]) -> "Annotation":
        return Annotation(
            self.recording_id,
            ((seg, mapping.get(lab, lab)) for seg, lab in self._entries),
        )


class Uem(object):
    """Scored-region sidecar for one recording: disjoint, sorted segments."""

    __slots__ = ("recording_id", "scored_regions")

    def __init__(self, recording_id: str, scored_regions: Iterable[Segment]):
        regions = tuple(sorted(scored_regions, key=lambda s: (s.onset_ms, s.end_ms)))
        for prev, cur in zip(regions, regions[1:]):
            if cur.onset_ms < prev.end_ms:
                raise DataError(
                    f"UEM regions overlap in {recording_id!r}: {prev!r} vs {cur!r}"
                )
        self.recording_id = recording_id
        self.scored_regions = regions

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Uem)
            and self.recording_id == other.recording_id
            and self.scored_regions == other.scored_regions
        )

    def __repr__(self):
        return f"Uem({self.recording_id!r}, {len(self.scored_regions)} regions)"

    def total_ms(self) -> int:
        return sum(r.duration_ms for r in self.scored_regions)


def merge_intervals(intervals: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    """Merge overlapping or touching (onset_ms, end_ms) intervals."""
    merged: list[tuple[int, int]] = []
    for on, end in sorted(intervals):
        if merged and on <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((on, end))
    return merged


def crop(annotation: Annotation, uem: Uem) -> Annotation:
    """Intersect every entry with the scored regions; empty intersections drop.

    Same-label segments that collapse onto an identical intersection are
    emitted once.
    """
    out: set[tuple[Segment, str]] = set()
    for seg, label in annotation:
        for region in uem.scored_regions:
            part = seg.intersect(region)
            if part is not None:
                out.add((part, label))
    return Annotation(annotation.recording_id, out)


def boundaries(annotations: Sequence[Annotation]) -> list[float]:
    """All distinct onset/end times across the given annotations, ascending seconds."""
    times = set()
    for ann in annotations:
        for seg, _ in ann:
            times.add(seg.onset_ms)
            times.add(seg.end_ms)
    return [t / 1000.0 for t in sorted(times)]


# ---------------------------------------------------------------------------
# File formats
#
# RTTM:  SPEAKER <rec> 1 <onset:%.3f> <dur:%.3f> <NA> <NA> <label> <NA> <NA>
# UEM:   <rec> 1 <onset:%.3f> <end:%.3f>
# VAD:   <rec> <onset:%.3f> <end:%.3f>          (one speech segment per line)
# LAB:   <onset:%.3f> <end:%.3f> [speech]       (single-recording variant)
# ---------------------------------------------------------------------------


def _decode(data: bytes | str) -> str:
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_time(field: str, what: str, line_no: int) -> int:
    try:
        value = float(field)
    except ValueError:
        raise ParseError(f"bad {what} field {field!r}", line_no) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {field!r}", line_no)
    return to_ms(value)


def rttm_parse(data: bytes | str) -> list[Annotation]:
    """Parse RTTM text into one Annotation per recording (first-appearance order)."""
    per_rec: dict[str, list[tuple[Segment, str]]] = {}
    for line_no, raw in enumerate(_decode(data).splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 9:
            raise ParseError(f"expected >= 9 fields, got {len(fields)}", line_no)
        if fields[0] != "SPEAKER":
            raise ParseError(f"expected record type SPEAKER, got {fields[0]!r}", line_no)
        rec = fields[1]
        onset_ms = _parse_time(fields[3], "onset", line_no)
        duration_ms = _parse_time(fields[4], "duration", line_no)
        if duration_ms <= 0:
            raise ParseError(f"non-positive duration {fields[4]!r}", line_no)
        if onset_ms < 0:
            raise ParseError(f"negative onset {fields[3]!r}", line_no)
        per_rec.setdefault(rec, []).append((Segment(onset_ms, duration_ms), fields[7]))
    return [Annotation(rec, entries) for rec, entries in per_rec.items()]


def rttm_write(annotations: Annotation | Iterable[Annotation]) -> bytes:
    """Serialize annotations to RTTM bytes; round-trips through rttm_parse."""
    if isinstance(annotations, Annotation):
        annotations = [annotations]
    lines = []
    for ann in annotations:
        for seg, label in ann:
            lines.append(
                f"SPEAKER {ann.recording_id} 1 {fmt_ms(seg.onset_ms)} "
                f"{fmt_ms(seg.duration_ms)} <NA> <NA> {label} <NA> <NA>\n"
            )
    return "".join(lines).encode("utf-8")


def uem_parse(data: bytes | str) -> list[Uem]:
    """Parse UEM text into one Uem per recording (first-appearance order)."""
    per_rec: dict[str, list[Segment]] = {}
    for line_no, raw in enumerate(_decode(data).splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 4:
            raise ParseError(f"expected 4 fields, got {len(fields)}", line_no)
        rec = fields[0]
        onset_ms = _parse_time(fields[2], "onset", line_no)
        end_ms = _parse_time(fields[3], "end", line_no)
        if end_ms <= onset_ms:
            raise ParseError(f"region end {fields[3]!r} not after onset", line_no)
        per_rec.setdefault(rec, []).append(Segment(onset_ms, end_ms - onset_ms))
    return [Uem(rec, regions) for rec, regions in per_rec.items()]


def uem_write(uems: Uem | Iterable[Uem]) -> bytes:
    if isinstance(uems, Uem):
        uems = [uems]
    lines = []
    for uem in uems:
        for region in uem.scored_regions:
            lines.append(
                f"{uem.recording_id} 1 {fmt_ms(region.onset_ms)} {fmt_ms(region.end_ms)}\n"
            )
    return "".join(lines).encode("utf-8")


def _check_disjoint(rec: str, segments: list[Segment]) -> list[Segment]:
    segments.sort(key=lambda s: (s.onset_ms, s.end_ms))
    for prev, cur in zip(segments, segments[1:]):
        if cur.onset_ms < prev.end_ms:
            raise DataError(f"speech segments overlap in {rec!r}: {prev!r} vs {cur!r}")
    return segments


def vad_parse(data: bytes | str) -> dict[str, list[Segment]]:
    """Parse `<rec> <onset> <end>` speech-segment lines, per-recording and sorted."""
    per_rec: dict[str, list[Segment]] = {}
    for line_no, raw in enumerate(_decode(data).splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 3:
            raise ParseError(f"expected 3 fields, got {len(fields)}", line_no)
        onset_ms = _parse_time(fields[1], "onset", line_no)
        end_ms = _parse_time(fields[2], "end", line_no)
        if end_ms <= onset_ms:
            raise ParseError(f"segment end {fields[2]!r} not after onset", line_no)
        per_rec.setdefault(fields[0], []).append(Segment(onset_ms, end_ms - onset_ms))
    return {rec: _check_disjoint(rec, segs) for rec, segs in per_rec.items()}


def vad_write(segments_by_rec: Mapping[str, Sequence[Segment]]) -> bytes:
    lines = []
    for rec, segments in segments_by_rec.items():
        for seg in segments:
            lines.append(f"{rec} {fmt_ms(seg.onset_ms)} {fmt_ms(seg.end_ms)}\n")
    return "".join(lines).encode("utf-8")


def lab_parse(data: bytes | str) -> list[Segment]:
    """Parse single-recording `<onset> <end> [label]` speech-segment lines."""
    segments: list[Segment] = []
    for line_no, raw in enumerate(_decode(data).splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 2:
            raise ParseError(f"expected at least 2 fields, got {len(fields)}", line_no)
        onset_ms = _parse_time(fields[0], "onset", line_no)
        end_ms = _parse_time(fields[1], "end", line_no)
        if end_ms <= onset_ms:
            raise ParseError(f"segment end {fields[1]!r} not after onset", line_no)
        segments.append(Segment(onset_ms, end_ms - onset_ms))
    return _check_disjoint("<lab>", segments)
