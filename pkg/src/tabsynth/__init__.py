"""Multi-table tabular data synthesis pipeline.

Semantic label enhancement, cross-table connection with engaged-subject
bias reduction, textual row encoding for a pluggable synthesizer
backend, inverse mapping of synthetic output, and conditional-
distribution fidelity evaluation.
"""

__version__ = "0.1.0"

from .table import ColumnSpec, Table, build_subject_index, flatten_join, load_csv, write_csv
from .contextual import ContextualReport, detect_contextual, extract_parent, merge_parents
from .semantic import (
    MappingStore,
    MappingSystem,
    RewriteRule,
    apply_mapping,
    apply_rewrites,
    build_differentiability_mapping,
    build_understandability_mapping,
    invert_mapping,
    load_name_pool,
    reverse_rewrites,
)
from .connect import (
    AssociationMatrix,
    IndependencePartition,
    SubjectPools,
    association_matrix,
    bootstrap_append,
    cramers_v,
    exclude_noisy_columns,
    hierarchical_independent,
    reduce_core,
    threshold_independent,
)
from .codec import EncodedCorpus, decode_corpus, decode_sentence, encode_row, encode_table
from .engine import ExternalEndpoint, SynthesizerConfig, TrainedModel, fit, sample
from .fidelity import (
    CategoricalDistribution,
    FidelityReport,
    PairScore,
    compare_reports,
    conditional_dist,
    cross_feature_score,
    fidelity_report,
    ks_p,
    w_dist,
)

__all__ = [
    "ColumnSpec",
    "Table",
    "build_subject_index",
    "flatten_join",
    "load_csv",
    "write_csv",
    "ContextualReport",
    "detect_contextual",
    "extract_parent",
    "merge_parents",
    "MappingStore",
    "MappingSystem",
    "RewriteRule",
    "apply_mapping",
    "apply_rewrites",
    "build_differentiability_mapping",
    "build_understandability_mapping",
    "invert_mapping",
    "load_name_pool",
    "reverse_rewrites",
    "AssociationMatrix",
    "IndependencePartition",
    "SubjectPools",
    "association_matrix",
    "bootstrap_append",
    "cramers_v",
    "exclude_noisy_columns",
    "hierarchical_independent",
    "reduce_core",
    "threshold_independent",
    "EncodedCorpus",
    "decode_corpus",
    "decode_sentence",
    "encode_row",
    "encode_table",
    "ExternalEndpoint",
    "SynthesizerConfig",
    "TrainedModel",
    "fit",
    "sample",
    "CategoricalDistribution",
    "FidelityReport",
    "PairScore",
    "compare_reports",
    "conditional_dist",
    "cross_feature_score",
    "fidelity_report",
    "ks_p",
    "w_dist",
]
