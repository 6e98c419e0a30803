from .metrics import METRIC_CAP_DB, erle, estoi, nlms_baseline, si_sdr, third_octave_bands
from .plots import save_spectrograms
from .suite import (
    MetricsRow, aggregate, evaluate_suite, format_table, identity_system, model_system,
    nlms_system, oracle_system, score_example,
)

__all__ = [
    "METRIC_CAP_DB", "erle", "estoi", "nlms_baseline", "si_sdr", "third_octave_bands",
    "save_spectrograms", "MetricsRow", "aggregate", "evaluate_suite", "format_table",
    "identity_system", "model_system", "nlms_system", "oracle_system", "score_example",
]
