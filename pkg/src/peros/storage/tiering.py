"""Hot/cold file tiering with hysteresis, plus an exact offline oracle.

Per-file decayed access frequencies drive promotions and demotions; the
hysteresis band (promote threshold > demote threshold) keeps oscillating
scores from thrashing migrations. The offline oracle finds the true minimum
cost over all per-file tier schedules - the cost model has no cross-file
coupling, so per-file dynamic programming is exhaustive search, just faster;
a brute-force enumerator cross-checks it in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..errors import InstanceTooLarge
from .trace import AccessTrace

HOT, COLD = "hot", "cold"


@dataclass(frozen=True)
class TierConfig:
    decay: float = 0.9            # per-step multiplicative decay
    promote_threshold: float = 2.0
    demote_threshold: float = 0.5
    hot_cost: int = 1
    cold_cost: int = 10
    migration_cost: int = 25
    max_files: int = 12
    max_accesses: int = 200

    def check(self) -> None:
        if not (0.0 < self.decay < 1.0):
            raise ValueError("decay must be in (0, 1)")
        if self.promote_threshold <= self.demote_threshold:
            raise ValueError("hysteresis band is empty "
                             "(promote must exceed demote threshold)")


@dataclass(frozen=True)
class TierAssignment:
    tiers: Mapping[int, str] = field(default_factory=dict)
    scores: Mapping[int, float] = field(default_factory=dict)

    def tier(self, file_id: int) -> str:
        return self.tiers.get(file_id, COLD)


def assign_tiers(
    scores: Mapping[int, float],
    cfg: TierConfig,
    previous: TierAssignment | None = None,
) -> TierAssignment:
    """Map decayed frequency scores to tiers with hysteresis: promote at or
    above the promote threshold, demote at or below the demote threshold,
    keep the previous tier inside the band."""
    cfg.check()
    prev = previous or TierAssignment()
    tiers = {}
    for fid, score in scores.items():
        if score >= cfg.promote_threshold:
            tiers[fid] = HOT
        elif score <= cfg.demote_threshold:
            tiers[fid] = COLD
        else:
            tiers[fid] = prev.tier(fid)
    return TierAssignment(tiers=tiers, scores=dict(scores))


@dataclass
class TierSimulator:
    """Online policy replay: one decay step per trace record; each access is
    billed at the file's tier before the assignment update."""

    cfg: TierConfig
    scores: dict[int, float] = field(default_factory=dict)
    assignment: TierAssignment = field(default_factory=TierAssignment)
    access_cost: int = 0
    migration_cost: int = 0
    migrations: int = 0

    def step(self, file_id: int) -> None:
        tier_now = self.assignment.tier(file_id)
        self.access_cost += (
            self.cfg.hot_cost if tier_now == HOT else self.cfg.cold_cost
        )
        for fid in self.scores:
            self.scores[fid] *= self.cfg.decay
        self.scores[file_id] = self.scores.get(file_id, 0.0) + 1.0
        new = assign_tiers(self.scores, self.cfg, self.assignment)
        for fid, tier in new.tiers.items():
            if tier != self.assignment.tier(fid):
                self.migrations += 1
                self.migration_cost += self.cfg.migration_cost
        self.assignment = new

    @property
    def total_cost(self) -> int:
        return self.access_cost + self.migration_cost

    def run(self, trace: AccessTrace) -> int:
        for rec in trace.records:
            self.step(rec.file_id)
        return self.total_cost


def online_tiering_cost(trace: AccessTrace, cfg: TierConfig) -> int:
    sim = TierSimulator(cfg=cfg)
    return sim.run(trace)


# ---------------------------------------------------------------------------
# Offline oracle
# ---------------------------------------------------------------------------

def _optimal_file_cost(n_accesses: int, cfg: TierConfig) -> int:
    """Minimal cost of serving one file's accesses, starting cold, choosing a
    tier before each access (migration billed per change)."""
    if n_accesses == 0:
        return 0
    INF = float("inf")
    best = {COLD: 0, HOT: INF}
    for _ in range(n_accesses):
        stay_cold = best[COLD] + cfg.cold_cost
        move_cold = best[HOT] + cfg.migration_cost + cfg.cold_cost
        stay_hot = best[HOT] + cfg.hot_cost
        move_hot = best[COLD] + cfg.migration_cost + cfg.hot_cost
        best = {COLD: min(stay_cold, move_cold), HOT: min(stay_hot, move_hot)}
    return int(min(best.values()))


def offline_optimal_tiering(trace: AccessTrace, cfg: TierConfig) -> int:
    """Exact minimum total cost over all per-file tier schedules.

    Guarded to small instances: the oracle exists to judge the online policy
    on frozen fixtures, not to run at scale.
    """
    cfg.check()
    files = trace.file_ids()
    if len(files) > cfg.max_files:
        raise InstanceTooLarge(
            f"{len(files)} files exceeds oracle limit {cfg.max_files}")
    if len(trace) > cfg.max_accesses:
        raise InstanceTooLarge(
            f"{len(trace)} accesses exceeds oracle limit {cfg.max_accesses}")
    per_file_counts = {fid: 0 for fid in files}
    for rec in trace.records:
        per_file_counts[rec.file_id] += 1
    return sum(_optimal_file_cost(n, cfg) for n in per_file_counts.values())


def brute_force_optimal_tiering(trace: AccessTrace, cfg: TierConfig) -> int:
    """Enumerate every tier schedule outright; exponential, test-only."""
    files = trace.file_ids()
    per_file: dict[int, int] = {fid: 0 for fid in files}
    for rec in trace.records:
        per_file[rec.file_id] += 1
    total = 0
    for fid in files:
        n = per_file[fid]
        best = None
        for mask in range(1 << n):
            cost = 0
            prev = COLD
            for i in range(n):
                tier = HOT if (mask >> i) & 1 else COLD
                if tier != prev:
                    cost += cfg.migration_cost
                cost += cfg.hot_cost if tier == HOT else cfg.cold_cost
                prev = tier
            best = cost if best is None else min(best, cost)
        total += best or 0
    return total
