from .beams import SpatialStream, beam_power, beam_scan, orthogonal_angles, steering_vector
from .dtw import DistanceMatrix, build_distance_matrix, cddtw_distance, derivative, dtw_cost
from .estimate import CountingConfig, CountReport, estimate_count
from .hac import hac_cluster
from .jade import JadeResult, NonConvergence, RankDeficient, jade_separate
from .kl import (
    TooFewSamples,
    calibrate_threshold,
    false_positive_filter,
    kl_divergence,
    neighbor_divergences,
)

__all__ = [
    "SpatialStream", "beam_power", "beam_scan", "orthogonal_angles", "steering_vector",
    "DistanceMatrix", "build_distance_matrix", "cddtw_distance", "derivative", "dtw_cost",
    "CountingConfig", "CountReport", "estimate_count", "hac_cluster",
    "JadeResult", "NonConvergence", "RankDeficient", "jade_separate",
    "TooFewSamples", "calibrate_threshold", "false_positive_filter", "kl_divergence",
    "neighbor_divergences",
]
