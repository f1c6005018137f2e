"""Pipeline orchestration: config files, stage wiring, run manifests.

A run takes VAD speech segments plus precomputed embeddings, scores pairwise
similarities, clusters with AHC, optionally refines with VBx and emits RTTM.
Every stage artifact is persisted to the run directory and digested in the
manifest, so reruns are verifiable and tampering is detectable.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .backend import PldaModel, similarity_matrix
from .clustering import AhcConfig, VbxConfig, ahc, vbx_refine
from .embedstore import EmbeddingSet
from .errors import ConfigError, DataError
from .timeline import Annotation, Segment, rttm_write
from .windowing import WindowPlan, make_windows, windows_to_annotation

TRACKS = ("speaker", "language")
BACKENDS = ("cosine", "plda")

# sentinel: resolve per track (language -> VBx on, speaker -> off)
VBX_TRACK_DEFAULT = "track-default"


@dataclass(frozen=True)
class PipelineConfig:
    track: str = "speaker"
    window: WindowPlan = WindowPlan(5.0, 1.0, 1.0)
    backend: str = "plda"
    ahc: AhcConfig = AhcConfig()
    vbx: VbxConfig | None | str = VBX_TRACK_DEFAULT
    ensemble_weights: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.track not in TRACKS:
            raise ConfigError(f"track must be one of {TRACKS}, got {self.track!r}")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.vbx == VBX_TRACK_DEFAULT:
            object.__setattr__(
                self, "vbx", VbxConfig() if self.track == "language" else None
            )
        if self.track == "language" and self.backend != "plda":
            raise ConfigError("the language track requires the plda backend")
        if self.vbx is not None and self.backend != "plda":
            raise ConfigError("VBx refinement requires the plda backend")

    def canonical(self) -> dict:
        return {
            "track": self.track,
            "window": [self.window.window_length, self.window.shift, self.window.min_window],
            "backend": self.backend,
            "ahc": {
                "threshold": self.ahc.threshold,
                "min_clusters": self.ahc.min_clusters,
                "max_clusters": self.ahc.max_clusters,
            },
            "vbx": None
            if self.vbx is None
            else {
                "p_loop": self.vbx.p_loop,
                "fa": self.vbx.fa,
                "fb": self.vbx.fb,
                "max_iters": self.vbx.max_iters,
                "elbo_tol": self.vbx.elbo_tol,
                "drop_prior": self.vbx.drop_prior,
            },
            "ensemble_weights": list(self.ensemble_weights) if self.ensemble_weights else None,
            "seed": self.seed,
        }

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _pop_section(data: dict, name: str) -> dict:
    section = data.pop(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    return section


def _reject_unknown(table: dict, context: str) -> None:
    if table:
        raise ConfigError(f"unknown key(s) in {context}: {sorted(table)}")


def load_config(path) -> PipelineConfig:
    """Parse a TOML pipeline configuration; unknown keys are rejected."""
    try:
        data = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}") from None

    track = data.pop("track", "speaker")
    backend = data.pop("backend", "plda")
    seed = data.pop("seed", 0)

    win = _pop_section(data, "window")
    window = WindowPlan(
        window_length=win.pop("length", 5.0),
        shift=win.pop("shift", 1.0),
        min_window=win.pop("min_window", 1.0),
    )
    _reject_unknown(win, "[window]")

    ahc_tbl = _pop_section(data, "ahc")
    ahc_cfg = AhcConfig(
        threshold=ahc_tbl.pop("threshold", 0.0),
        min_clusters=ahc_tbl.pop("min_clusters", 1),
        max_clusters=ahc_tbl.pop("max_clusters", None),
    )
    _reject_unknown(ahc_tbl, "[ahc]")

    vbx_tbl = _pop_section(data, "vbx")
    # an explicit [vbx] section implies the stage unless enabled = false
    enabled = vbx_tbl.pop("enabled", track == "language" or bool(vbx_tbl))
    vbx_cfg = None
    if enabled:
        vbx_cfg = VbxConfig(
            p_loop=vbx_tbl.pop("p_loop", 0.9),
            fa=vbx_tbl.pop("fa", 9.0),
            fb=vbx_tbl.pop("fb", 4.0),
            max_iters=vbx_tbl.pop("max_iters", 40),
            elbo_tol=vbx_tbl.pop("elbo_tol", 1e-6),
            drop_prior=vbx_tbl.pop("drop_prior", 1e-3),
        )
    _reject_unknown(vbx_tbl, "[vbx]")

    ens_tbl = _pop_section(data, "ensemble")
    weights = ens_tbl.pop("weights", None)
    if weights is not None:
        weights = tuple(float(w) for w in weights)
    _reject_unknown(ens_tbl, "[ensemble]")
    _reject_unknown(data, "config")

    return PipelineConfig(
        track=track,
        window=window,
        backend=backend,
        ahc=ahc_cfg,
        vbx=vbx_cfg,
        ensemble_weights=weights,
        seed=seed,
    )


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    inputs: dict[str, str]
    stage_seconds: dict[str, float]
    outputs: dict[str, str]

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_hash": self.config_hash,
                "tool_version": self.tool_version,
                "inputs": self.inputs,
                "stage_seconds": self.stage_seconds,
                "outputs": self.outputs,
            },
            indent=2,
            sort_keys=True,
        )


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _worker_count() -> int:
    env = os.environ.get("DIARKIT_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"DIARKIT_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"DIARKIT_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def _validate_alignment(rec: str, expected: list[Segment], got: list[Segment]) -> None:
    if expected == got:
        return
    for k, (e, g) in enumerate(zip(expected, got)):
        if e != g:
            raise DataError(
                f"recording {rec!r}: window {k} mismatch, derived {e!r} "
                f"but embeddings carry {g!r}"
            )
    raise DataError(
        f"recording {rec!r}: derived {len(expected)} windows but embeddings "
        f"carry {len(got)} rows"
    )


def _cluster_recording(
    config: PipelineConfig,
    rec: str,
    embeddings: EmbeddingSet,
    model: PldaModel | None,
):
    subset = embeddings.select_recording(rec)
    if len(subset) == 1:  # a single window is trivially one cluster
        ann = windows_to_annotation(subset.windows(), ["spk00"], rec)
        return np.zeros((1, 1)), ann, ann
    sim = similarity_matrix(subset, model, config.backend)
    ahc_labels = ahc(sim, config.ahc)
    final_labels = ahc_labels
    if config.vbx is not None:
        diag = model.to_diag(subset.rows)
        final_labels, _ = vbx_refine(diag, model.phi, ahc_labels, config.vbx)
    windows = subset.windows()
    names = lambda labels: [f"spk{int(l):02d}" for l in labels]  # noqa: E731
    ahc_ann = windows_to_annotation(windows, names(ahc_labels), rec)
    final_ann = windows_to_annotation(windows, names(final_labels), rec)
    return sim.values, ahc_ann, final_ann


def run_pipeline(
    config: PipelineConfig,
    vad_segments: Mapping[str, Sequence[Segment]],
    embeddings: EmbeddingSet,
    model: PldaModel | None,
    out_dir,
    input_paths: Mapping[str, str] | None = None,
) -> tuple[list[Annotation], RunManifest]:
    """Run window validation, scoring, AHC and optional VBx for every recording.

    Writes windows.json, sim.f32, ahc.rttm, (vbx.rttm,) final.rttm and
    run_manifest.json into out_dir and returns the final annotations.
    """
    if config.backend == "plda" and model is None:
        raise ConfigError("plda backend requires a trained model")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage_seconds: dict[str, float] = {}

    t0 = time.perf_counter()
    recs = list(vad_segments)
    emb_recs = embeddings.recordings()
    if set(recs) != set(emb_recs):
        raise DataError(
            f"VAD covers recordings {sorted(recs)} but embeddings cover {sorted(emb_recs)}"
        )
    windows_by_rec: dict[str, list[Segment]] = {}
    for rec in recs:
        derived = make_windows(vad_segments[rec], config.window)
        carried = embeddings.select_recording(rec).windows()
        _validate_alignment(rec, derived, carried)
        windows_by_rec[rec] = derived
    stage_seconds["windows"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with concurrent.futures.ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        results = list(
            pool.map(lambda rec: _cluster_recording(config, rec, embeddings, model), recs)
        )
    stage_seconds["cluster"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    windows_doc = [
        {"recording_id": rec, "onset_ms": w.onset_ms, "duration_ms": w.duration_ms}
        for rec in recs
        for w in windows_by_rec[rec]
    ]
    (out_dir / "windows.json").write_text(json.dumps(windows_doc, indent=2) + "\n")

    with open(out_dir / "sim.f32", "wb") as fh:
        for sim_values, _, _ in results:
            fh.write(struct.pack("<I", sim_values.shape[0]))
            fh.write(sim_values.astype("<f4").tobytes(order="C"))

    ahc_anns = [r[1] for r in results]
    final_anns = [r[2] for r in results]
    (out_dir / "ahc.rttm").write_bytes(rttm_write(ahc_anns))
    if config.vbx is not None:
        (out_dir / "vbx.rttm").write_bytes(rttm_write(final_anns))
    (out_dir / "final.rttm").write_bytes(rttm_write(final_anns))
    stage_seconds["write"] = time.perf_counter() - t0

    artifact_names = ["windows.json", "sim.f32", "ahc.rttm", "final.rttm"]
    if config.vbx is not None:
        artifact_names.insert(3, "vbx.rttm")
    manifest = RunManifest(
        config_hash=config.hash(),
        tool_version=__version__,
        inputs=dict(input_paths or {}),
        stage_seconds=stage_seconds,
        outputs={name: sha256_file(out_dir / name) for name in artifact_names},
    )
    (out_dir / "run_manifest.json").write_text(manifest.to_json() + "\n")
    return final_anns, manifest


def verify_run(out_dir) -> list[str]:
    """Recompute artifact digests against the manifest; return mismatches."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "run_manifest.json").read_text())
    bad = []
    for name, digest in manifest["outputs"].items():
        path = out_dir / name
        if not path.exists() or sha256_file(path) != digest:
            bad.append(name)
    return bad


def read_sim_file(path) -> list[np.ndarray]:
    """Read the sim.f32 stage artifact back into per-recording matrices."""
    data = Path(path).read_bytes()
    matrices = []
    offset = 0
    while offset < len(data):
        (n,) = struct.unpack_from("<I", data, offset)
        offset += 4
        count = n * n
        block = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        matrices.append(block.reshape(n, n).astype(np.float64))
        offset += 4 * count
    return matrices
