"""diarkit: diarization back-end toolkit.

Non-neural stages of speaker/language diarization pipelines: windowing,
powerset/PIT/MixIT loss kernels, LDA/PLDA scoring, AHC + VBx clustering,
DOVER-Lap ensembling and DER scoring with bootstrap confidence intervals.
"""

__version__ = "0.1.0"

from .backend import (  # noqa: F401
    PldaModel,
    SimilarityMatrix,
    length_normalize,
    load_model,
    plda_llr,
    save_model,
    similarity_matrix,
    train_backend,
    train_lda,
    train_plda,
)
from .clustering import AhcConfig, VbxConfig, VbxState, ahc, forward_backward, vbx_refine  # noqa: F401
from .embedstore import (  # noqa: F401
    EmbeddingSet,
    RowMeta,
    SynthConfig,
    emb_read,
    emb_write,
    mean_by_cluster,
    sample_plda,
    synth_corpus,
    synth_recording,
)
from .ensemble import dover_lap, ensemble_recordings, map_labels, rank_weights  # noqa: F401
from .errors import ConfigError, DataError, DiarkitError, DomainError, ParseError  # noqa: F401
from .losses import (  # noqa: F401
    MixtureOfMixtures,
    PixitWeights,
    PowersetSpace,
    mixit_loss,
    pit_loss,
    pixit_loss,
    powerset_ce,
    powerset_classes,
    powerset_decode,
    powerset_encode,
)
from .metrics import CiReport, DerReport, bootstrap_ci, der, der_corpus, format_ci, map_optimal  # noqa: F401
from .pipeline import PipelineConfig, RunManifest, load_config, run_pipeline, verify_run  # noqa: F401
from .timeline import (  # noqa: F401
    Annotation,
    Segment,
    Uem,
    boundaries,
    crop,
    rttm_parse,
    rttm_write,
    uem_parse,
    uem_write,
)
from .windowing import LocalActivity, WindowPlan, assemble_global, make_windows  # noqa: F401
