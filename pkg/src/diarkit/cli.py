"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, backend, clustering, embedstore, ensemble, losses, metrics, pipeline
from .errors import ConfigError, DiarkitError
from .timeline import (
    Annotation,
    lab_parse,
    rttm_parse,
    rttm_write,
    uem_parse,
    vad_parse,
    vad_write,
)
from .windowing import WindowPlan, make_windows, windows_to_annotation


BACKEND_CHOICES = ("cosine", "plda")


def _window_plan(args) -> WindowPlan:
    return WindowPlan(args.win, args.shift, args.min_window)


def _add_window_args(parser):
    parser.add_argument("--win", type=float, default=5.0, help="window length, seconds")
    parser.add_argument("--shift", type=float, default=1.0, help="window shift, seconds")
    parser.add_argument("--min-window", type=float, default=1.0,
                        help="shortest emitted window, seconds")


def _read_vad(args) -> dict:
    if args.vad:
        return vad_parse(Path(args.vad).read_bytes())
    segments = lab_parse(Path(args.lab).read_bytes())
    return {args.recording_id: segments}


def cmd_synth(args) -> int:
    names = tuple(args.class_names.split(",")) if args.class_names else None
    cfg = embedstore.SynthConfig(
        n_recordings=args.recordings,
        n_classes=args.classes,
        classes_per_recording=args.classes_per_recording or args.classes,
        turns_per_recording=args.turns,
        between_class_std=args.between_std,
        within_class_std=args.within_std,
        dim=args.dim,
        seed=args.seed,
        window=_window_plan(args),
        class_names=names,
    )
    emb, references, speech = embedstore.synth_corpus(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    embedstore.emb_write(emb, out / "embeddings.dkeb")
    (out / "reference.rttm").write_bytes(rttm_write(list(references.values())))
    (out / "speech.vad").write_bytes(vad_write(speech))
    print(f"wrote {len(emb)} embeddings over {cfg.n_recordings} recording(s) to {out}")
    return 0


def cmd_windows(args) -> int:
    plan = _window_plan(args)
    doc = [
        {"recording_id": rec, "onset_ms": w.onset_ms, "duration_ms": w.duration_ms}
        for rec, segments in _read_vad(args).items()
        for w in make_windows(segments, plan)
    ]
    text = json.dumps(doc, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train_backend(args) -> int:
    emb = embedstore.emb_read(args.embeddings)
    model = backend.train_backend(emb, None, args.lda_dim)
    backend.save_model(model, args.output)
    print(
        f"trained backend: dim={model.dim} lda_dim={model.lda_dim} "
        f"diag_dim={model.diag_dim} -> {args.output}"
    )
    return 0


def cmd_score_pairs(args) -> int:
    emb = embedstore.emb_read(args.embeddings)
    model = backend.load_model(args.model) if args.model else None
    out = Path(args.output)
    with open(out, "wb") as fh:
        import struct

        for rec in emb.recordings():
            sim = backend.similarity_matrix(emb.select_recording(rec), model, args.backend)
            fh.write(struct.pack("<I", sim.n))
            fh.write(sim.values.astype("<f4").tobytes(order="C"))
    print(f"wrote pairwise {args.backend} scores to {out}")
    return 0


def _cluster_labels_to_rttm(emb, labels_by_rec, output):
    annotations = [
        windows_to_annotation(
            emb.select_recording(rec).windows(),
            [f"spk{int(l):02d}" for l in labels_by_rec[rec]],
            rec,
        )
        for rec in labels_by_rec
    ]
    Path(output).write_bytes(rttm_write(annotations))


def cmd_cluster(args) -> int:
    emb = embedstore.emb_read(args.embeddings)
    model = backend.load_model(args.model) if args.model else None
    cfg = clustering.AhcConfig(args.threshold, args.min_clusters, args.max_clusters)
    labels_by_rec = {}
    for rec in emb.recordings():
        sim = backend.similarity_matrix(emb.select_recording(rec), model, args.backend)
        labels_by_rec[rec] = clustering.ahc(sim, cfg)
    _cluster_labels_to_rttm(emb, labels_by_rec, args.output)
    print(f"AHC labels for {len(labels_by_rec)} recording(s) -> {args.output}")
    return 0


def _init_labels_from_rttm(subset, init_ann: Annotation) -> list[str]:
    labels = []
    for window in subset.windows():
        best_overlap, best_label = 0, None
        for seg, lab in init_ann:
            part = seg.intersect(window)
            overlap = part.duration_ms if part else 0
            if overlap > best_overlap:
                best_overlap, best_label = overlap, lab
        labels.append(best_label if best_label is not None else "spk00")
    return labels


def cmd_vbx(args) -> int:
    emb = embedstore.emb_read(args.embeddings)
    model = backend.load_model(args.model)
    init = {ann.recording_id: ann for ann in rttm_parse(Path(args.init).read_bytes())}
    cfg = clustering.VbxConfig(
        p_loop=args.p_loop, fa=args.fa, fb=args.fb,
        max_iters=args.max_iters, elbo_tol=args.elbo_tol, drop_prior=args.drop_prior,
    )
    labels_by_rec = {}
    for rec in emb.recordings():
        subset = emb.select_recording(rec)
        if rec not in init:
            raise DiarkitError(f"no initial labels for recording {rec!r}")
        init_labels = _init_labels_from_rttm(subset, init[rec])
        diag = model.to_diag(subset.rows)
        labels, _ = clustering.vbx_refine(diag, model.phi, init_labels, cfg)
        labels_by_rec[rec] = labels
    _cluster_labels_to_rttm(emb, labels_by_rec, args.output)
    print(f"VBx labels for {len(labels_by_rec)} recording(s) -> {args.output}")
    return 0


def cmd_ensemble(args) -> int:
    sources = [rttm_parse(Path(p).read_bytes()) for p in args.rttms]
    weights = None
    if args.weights:
        weights = [float(w) for w in args.weights.split(",")]
        if any(w <= 0 for w in weights):
            raise ConfigError("ensemble weights must be positive")
        total = sum(weights)
        weights = [w / total for w in weights]
    elif args.rank_weights:
        weights = ensemble.rank_weights(len(sources))
    combined = ensemble.ensemble_recordings(sources, weights)
    Path(args.output).write_bytes(rttm_write(combined))
    print(f"combined {len(sources)} systems over {len(combined)} recording(s) -> {args.output}")
    return 0


def cmd_score(args) -> int:
    refs = {a.recording_id: a for a in rttm_parse(Path(args.ref).read_bytes())}
    hyps = {a.recording_id: a for a in rttm_parse(Path(args.hyp).read_bytes())}
    uems = None
    if args.uem:
        uems = {u.recording_id: u for u in uem_parse(Path(args.uem).read_bytes())}
    missing = sorted(set(refs) - set(hyps))
    for rec in missing:
        hyps[rec] = Annotation(rec, [])
    pairs = [(refs[rec], hyps[rec]) for rec in refs]
    report = metrics.der_corpus(pairs, uems, collar=args.collar,
                                score_overlap=not args.no_overlap)
    doc = {
        "der": report.der,
        "missed": report.missed,
        "false_alarm": report.false_alarm,
        "confusion": report.confusion,
        "total_ref": report.total_ref,
        "per_recording": [
            {
                "recording_id": c.recording_id,
                "der": c.der,
                "missed": c.missed,
                "false_alarm": c.false_alarm,
                "confusion": c.confusion,
                "total_ref": c.total_ref,
            }
            for c in report.per_recording
        ],
    }
    if args.ci:
        ci = metrics.bootstrap_ci(report.per_recording, n_bootstrap=args.n_bootstrap,
                                  seed=args.seed)
        doc["ci"] = {"point": ci.point, "low": ci.low, "high": ci.high,
                     "n_bootstrap": ci.n_bootstrap, "seed": ci.seed,
                     "formatted": metrics.format_ci(ci)}
    print(json.dumps(doc, indent=2))

    rows = [
        (c.recording_id, c.der, c.missed, c.false_alarm, c.confusion, c.total_ref)
        for c in report.per_recording
    ]
    rows.append(("TOTAL", report.der, report.missed, report.false_alarm,
                 report.confusion, report.total_ref))
    width = max(len(r[0]) for r in rows)
    print(f"\n{'recording':<{width}}  {'DER%':>7} {'miss':>9} {'fa':>9} "
          f"{'conf':>9} {'ref s':>9}", file=sys.stderr)
    for name, der_value, miss, fa, conf, ref in rows:
        print(f"{name:<{width}}  {100 * der_value:>7.2f} {miss:>9.3f} {fa:>9.3f} "
              f"{conf:>9.3f} {ref:>9.3f}", file=sys.stderr)
    if args.ci:
        print(f"DER with 95% CI: {doc['ci']['formatted']}", file=sys.stderr)
    return 0


def _matrix_from_dkeb(path) -> np.ndarray:
    return embedstore.emb_read(path).rows.astype(np.float64)


def cmd_loss(args) -> int:
    doc: dict = {}
    if args.kind in ("pit", "pixit"):
        pred = _matrix_from_dkeb(args.pred)
        ref = _matrix_from_dkeb(args.ref)
        pit_value, perm = losses.pit_loss(pred, ref)
        doc["pit"] = {"loss": pit_value, "permutation": list(perm)}
    if args.kind in ("mixit", "pixit"):
        mom = losses.MixtureOfMixtures(
            _matrix_from_dkeb(args.mixtures), _matrix_from_dkeb(args.sources)
        )
        mixit_value, assignment = losses.mixit_loss(mom, args.reconstruction)
        doc["mixit"] = {"loss": mixit_value, "assignment": assignment.tolist()}
    if args.kind == "pixit":
        doc["pixit"] = {
            "loss": losses.pixit_loss(doc["pit"]["loss"], doc["mixit"]["loss"], args.lam),
            "lambda": args.lam,
        }
    if args.kind == "powerset-ce":
        space = losses.powerset_classes(args.k_max, args.max_overlap)
        loss, perm = losses.powerset_ce(
            _matrix_from_dkeb(args.pred), _matrix_from_dkeb(args.ref), space
        )
        doc["powerset_ce"] = {
            "loss": loss,
            "permutation": list(perm),
            "n_classes": space.n_classes,
        }
    print(json.dumps(doc, indent=2))
    return 0


def cmd_run(args) -> int:
    config = pipeline.load_config(args.config)
    vad = vad_parse(Path(args.vad).read_bytes())
    emb = embedstore.emb_read(args.embeddings)
    model = backend.load_model(args.model) if args.model else None
    inputs = {
        str(p): pipeline.sha256_file(p)
        for p in (args.config, args.vad, args.embeddings, args.model)
        if p
    }
    annotations, manifest = pipeline.run_pipeline(
        config, vad, emb, model, args.out_dir, inputs
    )
    total = sum(manifest.stage_seconds.values())
    print(
        f"processed {len(annotations)} recording(s) in {total:.2f}s "
        f"-> {Path(args.out_dir) / 'final.rttm'}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diarkit",
                                     description="diarization back-end toolkit")
    parser.add_argument("--version", action="version", version=f"diarkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--recordings", type=int, default=1)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--classes-per-recording", type=int, default=None)
    p.add_argument("--turns", type=int, default=10)
    p.add_argument("--between-std", type=float, default=3.0)
    p.add_argument("--within-std", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-names", default=None, help="comma-separated label names")
    _add_window_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("windows", help="derive analysis windows from VAD segments")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--vad", help="3-column '<rec> <onset> <end>' file")
    src.add_argument("--lab", help="2-column '<onset> <end>' single-recording file")
    p.add_argument("--recording-id", default="rec", help="recording id for --lab input")
    p.add_argument("-o", "--output", default=None)
    _add_window_args(p)
    p.set_defaults(func=cmd_windows)

    p = sub.add_parser("train-backend", help="train centering + LDA + PLDA")
    p.add_argument("--embeddings", required=True, help=".dkeb with true labels")
    p.add_argument("--lda-dim", type=int, default=150)
    p.add_argument("-o", "--output", required=True, help="model JSON path")
    p.set_defaults(func=cmd_train_backend)

    p = sub.add_parser("score-pairs", help="pairwise similarity matrices per recording")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--backend", choices=BACKEND_CHOICES, default="plda")
    p.add_argument("-o", "--output", required=True, help="binary f32 output")
    p.set_defaults(func=cmd_score_pairs)

    p = sub.add_parser("cluster", help="AHC clustering to RTTM")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--backend", choices=BACKEND_CHOICES, default="plda")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--min-clusters", type=int, default=1)
    p.add_argument("--max-clusters", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("vbx", help="VBx refinement of an initial RTTM")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--init", required=True, help="initial labels RTTM")
    p.add_argument("--p-loop", type=float, default=0.9)
    p.add_argument("--fa", type=float, default=9.0)
    p.add_argument("--fb", type=float, default=4.0)
    p.add_argument("--max-iters", type=int, default=40)
    p.add_argument("--elbo-tol", type=float, default=1e-6)
    p.add_argument("--drop-prior", type=float, default=1e-3)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_vbx)

    p = sub.add_parser("ensemble", help="greedy DOVER-Lap combination")
    p.add_argument("rttms", nargs="+", help="hypothesis RTTM files")
    p.add_argument("--weights", default=None, help="comma-separated positive weights")
    p.add_argument("--rank-weights", action="store_true",
                   help="weights proportional to 1/rank, best system first")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("score", help="DER scoring with optional bootstrap CI")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--uem", default=None)
    p.add_argument("--collar", type=float, default=0.0)
    p.add_argument("--no-overlap", action="store_true",
                   help="exclude reference overlap regions from scoring")
    p.add_argument("--ci", action="store_true")
    p.add_argument("--n-bootstrap", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("loss", help="loss kernels over .dkeb matrices")
    p.add_argument("kind", choices=("pit", "mixit", "pixit", "powerset-ce"))
    p.add_argument("--pred", help="predictions .dkeb (pit/pixit/powerset-ce)")
    p.add_argument("--ref", help="reference .dkeb")
    p.add_argument("--mixtures", help="2 x T mixtures .dkeb (mixit/pixit)")
    p.add_argument("--sources", help="M x T estimated sources .dkeb")
    p.add_argument("--reconstruction", choices=("mse", "neg_snr"), default="neg_snr")
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--k-max", type=int, default=3)
    p.add_argument("--max-overlap", type=int, default=2)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("run", help="full pipeline from config + VAD + embeddings")
    p.add_argument("--config", required=True)
    p.add_argument("--vad", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DiarkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
