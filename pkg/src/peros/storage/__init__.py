"""Trace-driven adaptive-storage lab: read-ahead tuning, tiering, learned index."""

from .trace import AccessRecord, AccessTrace, load_trace, save_trace
from .readahead import ReadaheadState, best_fixed_readahead, tune_readahead
from .tiering import TierAssignment, TierConfig, assign_tiers, offline_optimal_tiering
from .index import LearnedIndex, build_learned_index, lookup
from .simulate import SimConfig, SimReport, simulate

__all__ = [
    "AccessRecord", "AccessTrace", "load_trace", "save_trace",
    "ReadaheadState", "best_fixed_readahead", "tune_readahead",
    "TierAssignment", "TierConfig", "assign_tiers", "offline_optimal_tiering",
    "LearnedIndex", "build_learned_index", "lookup",
    "SimConfig", "SimReport", "simulate",
]
