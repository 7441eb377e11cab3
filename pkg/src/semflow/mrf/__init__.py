"""Pairwise MRF MAP inference."""

from .bp import maxproduct_bp
from .dt import dt_message_l1, l1_envelope, min_convolution_l1_bruteforce
from .graph import (
    BIG,
    L1,
    POTTS,
    TABLE,
    InferenceResult,
    PairwiseGraph,
    brute_force_map,
    energy,
)
from .trw import trw_map

__all__ = [
    "BIG", "L1", "POTTS", "TABLE", "InferenceResult", "PairwiseGraph",
    "brute_force_map", "dt_message_l1", "energy", "l1_envelope",
    "maxproduct_bp", "min_convolution_l1_bruteforce", "trw_map",
]
