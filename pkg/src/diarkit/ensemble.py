"""Greedy DOVER-Lap: overlap-aware label mapping across hypotheses followed
by weighted per-region voting.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

from .errors import ConfigError, DataError
from .timeline import Annotation, Segment, merge_intervals


def _interval_overlap_ms(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> int:
    total = 0
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi > lo:
            total += hi - lo
        if a[i][1] <= b[j][1]:
            i += 1
        else:
            j += 1
    return total


def map_labels(hypotheses: Sequence[Annotation]) -> dict[tuple[int, str], str]:
    """Group labels across hypotheses by greedy largest-overlap matching.

    Two labels merge unless their groups already contain labels from a common
    hypothesis. Returns a map from (hypothesis index, label) to a global
    label; groups are named in order of their smallest member.
    """
    if len(hypotheses) < 2:
        raise DataError(f"need at least 2 hypotheses, got {len(hypotheses)}")
    coverage: dict[tuple[int, str], list[tuple[int, int]]] = {}
    for i, hyp in enumerate(hypotheses):
        for label in hyp.labels():
            coverage[(i, label)] = hyp.label_coverage(label)

    keys = sorted(coverage)
    pairs = []
    for a_idx, a in enumerate(keys):
        for b in keys[a_idx + 1 :]:
            if a[0] == b[0]:
                continue
            ov = _interval_overlap_ms(coverage[a], coverage[b])
            if ov > 0:
                pairs.append((-ov, a[0], a[1], b[0], b[1]))
    pairs.sort()

    parent = {k: k for k in keys}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    members: dict[tuple[int, str], set[tuple[int, str]]] = {k: {k} for k in keys}
    for _, i, a, j, b in pairs:
        ra, rb = find((i, a)), find((j, b))
        if ra == rb:
            continue
        hyps_a = {m[0] for m in members[ra]}
        hyps_b = {m[0] for m in members[rb]}
        if hyps_a & hyps_b:
            continue
        parent[rb] = ra
        members[ra] |= members.pop(rb)

    # name groups by an order-invariant key (union coverage, member labels)
    # so downstream lexicographic tie-breaks do not depend on hypothesis order
    def group_key(group):
        union = merge_intervals(
            iv for member in group for iv in coverage[member]
        )
        return tuple(union), tuple(sorted(lab for _, lab in group)), min(group)

    groups = sorted(members.values(), key=group_key)
    mapping: dict[tuple[int, str], str] = {}
    for g_idx, group in enumerate(groups):
        for key in group:
            mapping[key] = f"spk{g_idx:02d}"
    return mapping


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-12))


def dover_lap(hypotheses: Sequence[Annotation], weights: Sequence[float] | None = None) -> Annotation:
    """Combine globally-relabeled hypotheses by weighted regional voting.

    Splits the timeline at every boundary; in each region the estimated
    speaker count is the half-up-rounded weighted mean of per-hypothesis
    counts and the labels with the highest total vote are emitted (ties:
    lexicographic). Adjacent regions with identical label sets merge.
    """
    if len(hypotheses) < 2:
        raise DataError(f"need at least 2 hypotheses, got {len(hypotheses)}")
    rec = hypotheses[0].recording_id
    if any(h.recording_id != rec for h in hypotheses):
        raise DataError("all hypotheses must cover the same recording")
    if weights is None:
        weights = [1.0 / len(hypotheses)] * len(hypotheses)
    if len(weights) != len(hypotheses):
        raise ConfigError(f"{len(weights)} weights for {len(hypotheses)} hypotheses")
    if any(w <= 0 for w in weights):
        raise ConfigError("weights must be positive")
    total_w = float(sum(weights))
    weights = [w / total_w for w in weights]

    times = sorted(
        {t for hyp in hypotheses for seg, _ in hyp for t in (seg.onset_ms, seg.end_ms)}
    )
    if not times:
        return Annotation(rec, [])
    region_index = {t: k for k, t in enumerate(times[:-1])}
    n_regions = len(times) - 1

    votes: list[dict[str, float]] = [{} for _ in range(n_regions)]
    counts: list[list[set]] = [[set() for _ in hypotheses] for _ in range(n_regions)]
    for h_idx, hyp in enumerate(hypotheses):
        for label in hyp.labels():
            for on, end in hyp.label_coverage(label):
                k = region_index[on]
                while k < n_regions and times[k] < end:
                    votes[k][label] = votes[k].get(label, 0.0) + weights[h_idx]
                    counts[k][h_idx].add(label)
                    k += 1

    label_regions: dict[str, list[tuple[int, int]]] = {}
    for k in range(n_regions):
        if not votes[k]:
            continue
        mean_count = sum(w * len(c) for w, c in zip(weights, counts[k]))
        n = min(_round_half_up(mean_count), len(votes[k]))
        if n < 1:
            continue
        winners = sorted(votes[k], key=lambda lab: (-votes[k][lab], lab))[:n]
        for lab in winners:
            label_regions.setdefault(lab, []).append((times[k], times[k + 1]))

    entries = [
        (Segment(on, end - on), lab)
        for lab, regions in label_regions.items()
        for on, end in merge_intervals(regions)
    ]
    return Annotation(rec, entries)


def rank_weights(n: int) -> list[float]:
    """Weights proportional to 1/rank for hypotheses ordered best-first."""
    if n < 1:
        raise ConfigError("need at least one hypothesis")
    raw = [1.0 / (k + 1) for k in range(n)]
    total = sum(raw)
    return [w / total for w in raw]


def ensemble_recordings(
    sources: Sequence[Sequence[Annotation]], weights: Sequence[float] | None = None
) -> list[Annotation]:
    """Per-recording map_labels + dover_lap over aligned hypothesis sets.

    Each element of `sources` is one system's annotations. All systems must
    cover the same recording ids.
    """
    if len(sources) < 2:
        raise DataError(f"need at least 2 hypothesis sets, got {len(sources)}")
    by_rec: list[Mapping[str, Annotation]] = [
        {ann.recording_id: ann for ann in annotations} for annotations in sources
    ]
    rec_ids = list(by_rec[0])
    for k, recs in enumerate(by_rec[1:], start=2):
        if set(recs) != set(rec_ids):
            raise DataError(
                f"hypothesis set {k} covers recordings {sorted(recs)} "
                f"but set 1 covers {sorted(rec_ids)}"
            )
    combined = []
    for rec in rec_ids:
        hyps = [recs[rec] for recs in by_rec]
        mapping = map_labels(hyps)
        relabeled = [
            hyp.rename_labels({lab: mapping[(i, lab)] for lab in hyp.labels()})
            for i, hyp in enumerate(hyps)
        ]
        combined.append(dover_lap(relabeled, weights))
    return combined
