"""Whole-lab replay: tuner + tiering + learned index over one trace.

Deterministic given (trace, seed): the only randomness is the tuner's
exploration, which draws from a seeded generator. Block addresses are
synthesized from a fixed affine map of each key's table position; their
values never influence the statistics, only lookup exactness checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .index import build_learned_index, lookup_with_stats, make_key
from .readahead import (
    DEFAULT_ALPHA,
    DEFAULT_CANDIDATES,
    DEFAULT_EPSILON,
    ReadaheadState,
    tune_readahead,
)
from .tiering import TierConfig, TierSimulator
from .trace import AccessTrace


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    candidates: tuple[int, ...] = DEFAULT_CANDIDATES
    exploration: float = DEFAULT_EPSILON
    alpha: float = DEFAULT_ALPHA
    index_epsilon: int = 16
    tier: TierConfig = field(default_factory=TierConfig)
    # exposes the current tier to the tuner as a stream feature; no coupling
    # objective is defined yet, so the flag only records the tier alongside
    # stream stats (see SimReport.tier_feature_streams)
    tier_feature_to_tuner: bool = False

    @classmethod
    def from_json(cls, doc: Mapping) -> "SimConfig":
        tier_doc = doc.get("tier", {})
        return cls(
            seed=int(doc.get("seed", 0)),
            candidates=tuple(doc.get("candidates", DEFAULT_CANDIDATES)),
            exploration=float(doc.get("exploration", DEFAULT_EPSILON)),
            alpha=float(doc.get("alpha", DEFAULT_ALPHA)),
            index_epsilon=int(doc.get("index_epsilon", 16)),
            tier=TierConfig(**tier_doc) if tier_doc else TierConfig(),
            tier_feature_to_tuner=bool(doc.get("tier_feature_to_tuner", False)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SimReport:
    prefetch_hit_ratio: float
    wasted_prefetch_ratio: float
    wasted_blocks: int
    prefetch_score: float
    chosen_window: int
    memory_overhead_blocks: int
    tier_cost: int
    tier_migrations: int
    index_segments: int
    index_probes_mean: float
    index_bytes: int
    flat_table_bytes: int
    records: int
    tier_feature_streams: Mapping[str, str] = field(default_factory=dict)

    def check(self) -> None:
        for name in ("prefetch_hit_ratio", "wasted_prefetch_ratio"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0,1]")

    def to_json(self) -> dict:
        return {
            "prefetch_hit_ratio": self.prefetch_hit_ratio,
            "wasted_prefetch_ratio": self.wasted_prefetch_ratio,
            "wasted_blocks": self.wasted_blocks,
            "prefetch_score": self.prefetch_score,
            "chosen_window": self.chosen_window,
            "memory_overhead_blocks": self.memory_overhead_blocks,
            "tier_cost": self.tier_cost,
            "tier_migrations": self.tier_migrations,
            "index_segments": self.index_segments,
            "index_probes_mean": self.index_probes_mean,
            "index_bytes": self.index_bytes,
            "flat_table_bytes": self.flat_table_bytes,
            "records": self.records,
            "tier_feature_streams": dict(self.tier_feature_streams),
        }


_EMPTY = SimReport(
    prefetch_hit_ratio=0.0, wasted_prefetch_ratio=0.0, wasted_blocks=0,
    prefetch_score=0.0,
    chosen_window=0, memory_overhead_blocks=0, tier_cost=0, tier_migrations=0,
    index_segments=0, index_probes_mean=0.0, index_bytes=0,
    flat_table_bytes=0, records=0,
)


def simulate(trace: AccessTrace, cfg: SimConfig = SimConfig()) -> SimReport:
    """Replay a trace through all three learners and accumulate one report."""
    trace.check()
    if not trace.records:
        return _EMPTY

    keys = sorted({make_key(r.file_id, r.block) for r in trace.records})
    mapping = [(k, k * 7 + 3) for k in keys]  # synthetic block addresses
    index = build_learned_index(mapping, cfg.index_epsilon)

    tuner = ReadaheadState(candidates=cfg.candidates, epsilon=cfg.exploration,
                           alpha=cfg.alpha, seed=cfg.seed)
    tiers = TierSimulator(cfg=cfg.tier)

    probes_total = 0
    lookups = 0
    for rec in trace.records:
        _, probes, _ = lookup_with_stats(index, make_key(rec.file_id, rec.block))
        probes_total += probes
        lookups += 1
        if rec.op == "read":
            tune_readahead(tuner, rec)
        tiers.step(rec.file_id)
    tuner.finalize()

    prefetched = tuner.total_useful + tuner.total_wasted
    feature_streams = {}
    if cfg.tier_feature_to_tuner:
        feature_streams = {
            str(fid): tiers.assignment.tier(fid)
            for fid in trace.file_ids()
        }
    report = SimReport(
        prefetch_hit_ratio=tuner.total_useful / prefetched if prefetched else 0.0,
        wasted_prefetch_ratio=tuner.total_wasted / prefetched if prefetched else 0.0,
        wasted_blocks=tuner.total_wasted,
        prefetch_score=tuner.total_reward,
        chosen_window=tuner.chosen_arm(),
        memory_overhead_blocks=tuner.max_held,
        tier_cost=tiers.total_cost,
        tier_migrations=tiers.migrations,
        index_segments=index.segment_count,
        index_probes_mean=probes_total / lookups if lookups else 0.0,
        index_bytes=index.index_bytes(),
        flat_table_bytes=index.flat_bytes(),
        records=len(trace.records),
        tier_feature_streams=feature_streams,
    )
    report.check()
    return report
