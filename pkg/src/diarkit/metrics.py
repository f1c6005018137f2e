"""Diarization error rate with optimal speaker mapping, corpus aggregation
and per-recording bootstrap confidence intervals.

All durations are accumulated as integer milliseconds, so component values
are exact and comparisons against brute-force oracles can use equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.optimize

from .errors import DataError
from .timeline import Annotation, Segment, Uem, crop, merge_intervals


@dataclass(frozen=True)
class FileComponents:
    """Per-recording error components, in seconds."""

    recording_id: str
    missed: float
    false_alarm: float
    confusion: float
    total_ref: float
    mapping: dict[str, str] = field(default_factory=dict)

    @property
    def error(self) -> float:
        return self.missed + self.false_alarm + self.confusion

    @property
    def der(self) -> float:
        return self.error / self.total_ref


@dataclass(frozen=True)
class DerReport:
    missed: float
    false_alarm: float
    confusion: float
    total_ref: float
    der: float
    mapping: dict[str, str]
    per_recording: tuple[FileComponents, ...]


@dataclass(frozen=True)
class CiReport:
    point: float
    low: float
    high: float
    n_bootstrap: int
    seed: int


def map_optimal(cooccurrence) -> dict[int, int]:
    """Injective column->row map maximizing total mapped duration.

    Rows index reference labels, columns hypothesis labels. Zero-overlap
    pairs are omitted from the returned map.
    """
    m = np.asarray(cooccurrence, dtype=np.float64)
    if m.ndim != 2:
        raise DataError(f"cooccurrence must be a matrix, got shape {m.shape}")
    if m.size == 0:
        return {}
    if np.any(m < 0):
        raise DataError("cooccurrence entries must be non-negative")
    rows, cols = scipy.optimize.linear_sum_assignment(m, maximize=True)
    return {int(c): int(r) for r, c in zip(rows, cols) if m[r, c] > 0}


def _effective_uem(ref: Annotation, hyp: Annotation, uem: Uem | None, collar: float,
                   score_overlap: bool) -> list[tuple[int, int]]:
    if uem is not None:
        regions = [(r.onset_ms, r.end_ms) for r in uem.scored_regions]
    else:
        end = max(ref.max_end_ms(), hyp.max_end_ms())
        regions = [(0, end)] if end > 0 else []
    if collar > 0:
        half = int(round(collar * 1000))
        excluded = merge_intervals(
            (t - half, t + half)
            for seg, _ in ref
            for t in (seg.onset_ms, seg.end_ms)
        )
        regions = _subtract(regions, excluded)
    if not score_overlap:
        regions = _subtract(regions, _overlap_regions(ref))
    return regions


def _subtract(regions: list[tuple[int, int]], cut: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    for on, end in regions:
        pieces = [(on, end)]
        for c_on, c_end in cut:
            nxt = []
            for p_on, p_end in pieces:
                if c_end <= p_on or c_on >= p_end:
                    nxt.append((p_on, p_end))
                    continue
                if p_on < c_on:
                    nxt.append((p_on, c_on))
                if c_end < p_end:
                    nxt.append((c_end, p_end))
            pieces = nxt
        out.extend(pieces)
    return [p for p in out if p[1] > p[0]]


def _overlap_regions(ann: Annotation) -> list[tuple[int, int]]:
    """Regions where two or more labels are simultaneously active."""
    events: list[tuple[int, int]] = []
    for seg, _ in ann:
        events.append((seg.onset_ms, 1))
        events.append((seg.end_ms, -1))
    events.sort()
    out = []
    depth = 0
    start = None
    for t, delta in events:
        depth += delta
        if depth >= 2 and start is None:
            start = t
        elif depth < 2 and start is not None:
            if t > start:
                out.append((start, t))
            start = None
    return merge_intervals(out)


def _region_table(ref: Annotation, hyp: Annotation, regions: list[tuple[int, int]]):
    """Per scoring region: (duration_ms, active ref labels, active hyp labels)."""
    times = sorted(
        {t for on, end in regions for t in (on, end)}
        | {t for seg, _ in ref for t in (seg.onset_ms, seg.end_ms)}
        | {t for seg, _ in hyp for t in (seg.onset_ms, seg.end_ms)}
    )
    index = {t: k for k, t in enumerate(times)}
    n_slots = max(len(times) - 1, 0)
    ref_active: list[set] = [set() for _ in range(n_slots)]
    hyp_active: list[set] = [set() for _ in range(n_slots)]
    for ann, active in ((ref, ref_active), (hyp, hyp_active)):
        for label in ann.labels():
            for on, end in ann.label_coverage(label):
                for k in range(index[on], index[end]):
                    active[k].add(label)
    scored = [False] * n_slots
    for on, end in regions:
        for k in range(index[on], index[end]):
            scored[k] = True
    return [
        (times[k + 1] - times[k], ref_active[k], hyp_active[k])
        for k in range(n_slots)
        if scored[k] and times[k + 1] > times[k]
    ]


def _score_file(ref: Annotation, hyp: Annotation, uem: Uem | None, collar: float,
                score_overlap: bool) -> FileComponents:
    if ref.recording_id != hyp.recording_id:
        raise DataError(
            f"recording mismatch: ref {ref.recording_id!r} vs hyp {hyp.recording_id!r}"
        )
    regions = _effective_uem(ref, hyp, uem, collar, score_overlap)
    uem_eff = Uem(ref.recording_id, [Segment(on, end - on) for on, end in regions])
    ref_c = crop(ref, uem_eff)
    hyp_c = crop(hyp, uem_eff)
    table = _region_table(ref_c, hyp_c, regions)

    ref_labels = ref_c.labels()
    hyp_labels = hyp_c.labels()
    r_idx = {lab: i for i, lab in enumerate(ref_labels)}
    h_idx = {lab: i for i, lab in enumerate(hyp_labels)}
    cooc = np.zeros((len(ref_labels), len(hyp_labels)), dtype=np.int64)
    for dur, r_set, h_set in table:
        for r in r_set:
            for h in h_set:
                cooc[r_idx[r], h_idx[h]] += dur
    assignment = map_optimal(cooc)
    mapping = {hyp_labels[h]: ref_labels[r] for h, r in assignment.items()}

    missed = false_alarm = error = total_ref = 0
    for dur, r_set, h_set in table:
        n_r, n_h = len(r_set), len(h_set)
        correct = sum(1 for h in h_set if mapping.get(h) in r_set)
        total_ref += n_r * dur
        missed += max(n_r - n_h, 0) * dur
        false_alarm += max(n_h - n_r, 0) * dur
        error += (max(n_r, n_h) - correct) * dur
    confusion = error - missed - false_alarm
    return FileComponents(
        recording_id=ref.recording_id,
        missed=missed / 1000.0,
        false_alarm=false_alarm / 1000.0,
        confusion=confusion / 1000.0,
        total_ref=total_ref / 1000.0,
        mapping=mapping,
    )


def der(ref: Annotation, hyp: Annotation, uem: Uem | None = None, collar: float = 0.0,
        score_overlap: bool = True) -> DerReport:
    """Diarization error rate for one recording.

    Overlap is scored and no forgiveness collar is applied unless requested.
    The hypothesis-to-reference label mapping maximizes co-occurrence time
    (exact assignment).
    """
    comp = _score_file(ref, hyp, uem, collar, score_overlap)
    if comp.total_ref == 0:
        raise DataError(
            f"no scored reference speech in {ref.recording_id!r}; DER undefined"
        )
    return DerReport(
        missed=comp.missed,
        false_alarm=comp.false_alarm,
        confusion=comp.confusion,
        total_ref=comp.total_ref,
        der=comp.error / comp.total_ref,
        mapping=comp.mapping,
        per_recording=(comp,),
    )


def der_corpus(pairs: Sequence[tuple[Annotation, Annotation]],
               uem: Mapping[str, Uem] | None = None, collar: float = 0.0,
               score_overlap: bool = True) -> DerReport:
    """Time-weighted corpus DER: components summed across recordings, one division."""
    if not pairs:
        raise DataError("need at least one (ref, hyp) pair")
    components = []
    for ref, hyp in pairs:
        file_uem = uem.get(ref.recording_id) if uem else None
        try:
            comp = _score_file(ref, hyp, file_uem, collar, score_overlap)
        except DataError as exc:
            raise DataError(f"{ref.recording_id!r}: {exc}") from None
        if comp.total_ref == 0:
            raise DataError(
                f"{ref.recording_id!r}: no scored reference speech; DER undefined"
            )
        components.append(comp)
    missed = sum(c.missed for c in components)
    fa = sum(c.false_alarm for c in components)
    conf = sum(c.confusion for c in components)
    total = sum(c.total_ref for c in components)
    return DerReport(
        missed=missed,
        false_alarm=fa,
        confusion=conf,
        total_ref=total,
        der=(missed + fa + conf) / total,
        mapping={},
        per_recording=tuple(components),
    )


def bootstrap_ci(per_recording: Sequence[FileComponents], n_bootstrap: int = 1000,
                 seed: int = 0, level: float = 0.95) -> CiReport:
    """Percentile bootstrap over recordings treated as IID.

    Each resample draws recordings with replacement and recomputes the
    time-weighted corpus DER; resample RNG streams are derived from the
    master seed with the resample index as the stream key.
    """
    if not per_recording:
        raise DataError("need at least one recording")
    if not (0.0 < level < 1.0):
        raise DataError(f"level must lie in (0, 1), got {level}")
    errors = np.array([c.error for c in per_recording])
    refs = np.array([c.total_ref for c in per_recording])
    point = float(errors.sum() / refs.sum())

    master = np.random.SeedSequence(seed)
    n_files = len(per_recording)
    ders = np.empty(n_bootstrap)
    for b, child in enumerate(master.spawn(n_bootstrap)):
        rng = np.random.default_rng(child)
        idx = rng.integers(0, n_files, n_files)
        ders[b] = errors[idx].sum() / refs[idx].sum()
    lo_q = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(ders, [lo_q, 100.0 - lo_q])
    return CiReport(point=point, low=float(low), high=float(high),
                    n_bootstrap=n_bootstrap, seed=seed)


def format_ci(ci: CiReport) -> str:
    """Render as percentages in the `28.2 (25.6-33.0)` style."""
    return f"{100.0 * ci.point:.1f} ({100.0 * ci.low:.1f}-{100.0 * ci.high:.1f})"
