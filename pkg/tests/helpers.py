"""Independent oracles used across the test suite.

These deliberately re-derive results by exhaustive enumeration or direct
formula evaluation, staying independent of the implementation paths they
check.
"""

import itertools
import math

import numpy as np

from diarkit.timeline import Annotation, Segment


def bce(p, y, clip=1e-7):
    p = np.clip(np.asarray(p, dtype=np.float64), clip, 1.0 - clip)
    y = np.asarray(y, dtype=np.float64)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def pit_oracle(pred, ref):
    """Minimum mean BCE over all reference column permutations."""
    k = pred.shape[1]
    best = math.inf
    for perm in itertools.permutations(range(k)):
        best = min(best, bce(pred, ref[:, perm]))
    return best


def mixit_oracle(mixtures, sources, kind="mse"):
    """Minimum reconstruction loss over all source-to-mixture assignments."""
    m = sources.shape[0]
    best = math.inf
    for choice in itertools.product((0, 1), repeat=m):
        est = np.zeros_like(mixtures)
        for src_idx, mix_idx in enumerate(choice):
            est[mix_idx] += sources[src_idx]
        if kind == "mse":
            loss = float(((mixtures - est) ** 2).mean(axis=1).sum())
        else:
            num = (mixtures**2).sum(axis=1)
            den = ((mixtures - est) ** 2).sum(axis=1) + 1e-8
            loss = float((-10.0 * np.log10(num / den)).sum())
        best = min(best, loss)
    return best


def powerset_ce_oracle(pred_logprobs, ref, classes):
    """Minimum mean NLL over reference column permutations, by enumeration."""
    index_of = {c: i for i, c in enumerate(classes)}
    k = ref.shape[1]
    best = math.inf
    for perm in itertools.permutations(range(k)):
        permuted = ref[:, perm]
        total = 0.0
        for t in range(len(ref)):
            active = tuple(int(i) + 1 for i in np.flatnonzero(permuted[t]))
            total -= pred_logprobs[t, index_of[active]]
        best = min(best, total / len(ref))
    return best


def fb_oracle(log_emissions, pi, p_loop):
    """HMM posteriors and evidence by explicit path enumeration."""
    t_len, s_len = log_emissions.shape
    post = np.zeros((t_len, s_len))
    total = 0.0
    for path in itertools.product(range(s_len), repeat=t_len):
        logp = math.log(pi[path[0]]) if pi[path[0]] > 0 else -math.inf
        logp += log_emissions[0, path[0]]
        for t in range(1, t_len):
            tr = p_loop * (path[t] == path[t - 1]) + (1.0 - p_loop) * pi[path[t]]
            logp += math.log(tr) if tr > 0 else -math.inf
            logp += log_emissions[t, path[t]]
        p = math.exp(logp)
        total += p
        for t, s in enumerate(path):
            post[t, s] += p
    return post / total, math.log(total)


def der_oracle_ms(ref: Annotation, hyp: Annotation, uem_span_ms=None):
    """(error_ms, missed_ms, fa_ms, total_ref_ms) minimized over all injective
    hyp -> ref label maps, by direct region sweep."""
    if uem_span_ms is None:
        end = max(ref.max_end_ms(), hyp.max_end_ms())
        uem_span_ms = (0, end)
    times = sorted(
        {t for seg, _ in ref for t in (seg.onset_ms, seg.end_ms)}
        | {t for seg, _ in hyp for t in (seg.onset_ms, seg.end_ms)}
        | set(uem_span_ms)
    )
    regions = []
    for t0, t1 in zip(times, times[1:]):
        if t1 <= uem_span_ms[0] or t0 >= uem_span_ms[1]:
            continue
        t0c, t1c = max(t0, uem_span_ms[0]), min(t1, uem_span_ms[1])
        r_set = {lab for seg, lab in ref if seg.onset_ms <= t0c and seg.end_ms >= t1c}
        h_set = {lab for seg, lab in hyp if seg.onset_ms <= t0c and seg.end_ms >= t1c}
        regions.append((t1c - t0c, r_set, h_set))

    ref_labels = sorted({lab for _, r, _ in regions for lab in r})
    hyp_labels = sorted({lab for _, _, h in regions for lab in h})
    total_ref = sum(d * len(r) for d, r, _ in regions)
    missed = sum(d * max(len(r) - len(h), 0) for d, r, h in regions)
    fa = sum(d * max(len(h) - len(r), 0) for d, r, h in regions)

    def error_for(mapping):
        err = 0
        for d, r_set, h_set in regions:
            correct = sum(1 for h in h_set if mapping.get(h) in r_set)
            err += d * (max(len(r_set), len(h_set)) - correct)
        return err

    best = error_for({})
    if len(hyp_labels) <= len(ref_labels):
        for refs in itertools.permutations(ref_labels, len(hyp_labels)):
            best = min(best, error_for(dict(zip(hyp_labels, refs))))
    else:
        for hyps in itertools.permutations(hyp_labels, len(ref_labels)):
            best = min(best, error_for(dict(zip(hyps, ref_labels))))
    return best, missed, fa, total_ref


def random_annotation(rng, recording_id, max_speakers=6, max_segments=20,
                      horizon_ms=60_000):
    n_speakers = int(rng.integers(1, max_speakers + 1))
    n_segments = int(rng.integers(1, max_segments + 1))
    entries = []
    seen = set()
    for _ in range(n_segments):
        onset = int(rng.integers(0, horizon_ms - 1000))
        duration = int(rng.integers(200, 15_000))
        label = f"s{int(rng.integers(0, n_speakers))}"
        if (onset, duration, label) in seen:
            continue
        seen.add((onset, duration, label))
        entries.append((Segment(onset, duration), label))
    return Annotation(recording_id, entries)


def adjusted_rand_index(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    labels_a = {lab: i for i, lab in enumerate(dict.fromkeys(a.tolist()))}
    labels_b = {lab: i for i, lab in enumerate(dict.fromkeys(b.tolist()))}
    table = np.zeros((len(labels_a), len(labels_b)), dtype=np.int64)
    for x, y in zip(a.tolist(), b.tolist()):
        table[labels_a[x], labels_b[y]] += 1

    def comb2(x):
        return x * (x - 1) // 2

    sum_cells = sum(comb2(v) for v in table.ravel())
    sum_rows = sum(comb2(v) for v in table.sum(axis=1))
    sum_cols = sum(comb2(v) for v in table.sum(axis=0))
    n_pairs = comb2(len(a))
    expected = sum_rows * sum_cols / n_pairs if n_pairs else 0.0
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_cells - expected) / (max_index - expected)
