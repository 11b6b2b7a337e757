"""ReLU-budget reduction toolkit.

Builds CNN graphs, counts their ReLUs, applies cull/thin/reshape passes,
scores stage criticality, sweeps reduction candidates onto a latency/accuracy
Pareto frontier, and merges linear layers for inference.
"""

from relureduce._core import (
    BuildError,
    CandidatePoint,
    ConfigError,
    EquivalenceError,
    Graph,
    LatencyModel,
    Model,
    TrainingError,
    acc_per_kilorelu,
    apply_reduce_step,
    build_architecture,
    candidate_key,
    candidates_from_csv,
    canonical_config,
    checkpoint_bytes,
    conv_count,
    count_flops,
    count_params,
    count_relus,
    criticality_csv,
    criticality_scores,
    cull,
    default_latency_points,
    equivalence_check,
    estimate_latency,
    fit_latency_model,
    fold_batchnorm,
    load_checkpoint,
    make_model,
    measurements_from_csv,
    merge_adjacent_linear,
    pareto_csv,
    pareto_front,
    probe_networks,
    reshape,
    run_deepreduce,
    save_checkpoint,
    stage_summary,
    stages,
    step_label,
    thin,
)

__all__ = [
    "BuildError",
    "CandidatePoint",
    "ConfigError",
    "EquivalenceError",
    "Graph",
    "LatencyModel",
    "Model",
    "TrainingError",
    "acc_per_kilorelu",
    "apply_reduce_step",
    "build_architecture",
    "candidate_key",
    "candidates_from_csv",
    "canonical_config",
    "checkpoint_bytes",
    "conv_count",
    "count_flops",
    "count_params",
    "count_relus",
    "criticality_csv",
    "criticality_scores",
    "cull",
    "default_latency_points",
    "equivalence_check",
    "estimate_latency",
    "fit_latency_model",
    "fold_batchnorm",
    "load_checkpoint",
    "make_model",
    "measurements_from_csv",
    "merge_adjacent_linear",
    "pareto_csv",
    "pareto_front",
    "probe_networks",
    "reshape",
    "run_deepreduce",
    "save_checkpoint",
    "stage_summary",
    "stages",
    "step_label",
    "thin",
]

__version__ = "0.1.0"
