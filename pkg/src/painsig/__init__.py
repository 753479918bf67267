"""ECG pain-assessment toolkit: QRS detection, IBI features, classifiers,
LOSO evaluation and 224x224 signal images."""

from .dataio import (
    Dataset,
    EcgSegment,
    Gender,
    PainLabel,
    Scheme,
    SchemeGroup,
    SubjectMeta,
    build_scheme_partitions,
    load_dataset,
    save_dataset,
    synth_ecg,
)
from .features import augment_features, compute_ibi_features, heart_rate_series
from .qrs import detect_r_peaks, peaks_to_ibis, preprocess

__version__ = "0.1.0"
