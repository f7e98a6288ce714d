"""Bounded-error learned index over a sorted (key -> block address) table.

Greedy shrinking-cone fit: each segment keeps the interval of slopes that
predict every covered key's table position within +/- epsilon, and closes
when the interval empties. Lookups probe the predicted position's window and
fall back to a full binary search on a miss, so the returned address is
always exact - the model only narrows the search, it never answers alone.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Sequence

from ..errors import EmptyMapping, KeyNotFound

KEY_SPACE_SHIFT = 32  # key = file_id * 2^32 + block


def make_key(file_id: int, block: int) -> int:
    return (file_id << KEY_SPACE_SHIFT) + block


@dataclass(frozen=True)
class Segment:
    start_key: int
    start_pos: int
    slope: float
    max_error: int

    def predict(self, key: int) -> int:
        return self.start_pos + round(self.slope * (key - self.start_key))


@dataclass(frozen=True)
class LearnedIndex:
    epsilon: int
    segments: tuple[Segment, ...]
    keys: tuple[int, ...]      # fallback table (shared, sorted)
    addrs: tuple[int, ...]

    @property
    def segment_count(self) -> int:
        return len(self.segments)

    def index_bytes(self) -> int:
        # model cost: start_key + slope + start_pos per segment, 8 bytes each
        return len(self.segments) * 24

    def flat_bytes(self) -> int:
        return len(self.keys) * 16

    def segment_for(self, key: int) -> Segment:
        starts = [s.start_key for s in self.segments]
        i = bisect.bisect_right(starts, key) - 1
        return self.segments[max(i, 0)]


def _fit_segments(keys: Sequence[int], epsilon: int) -> list[Segment]:
    segments: list[Segment] = []
    i = 0
    n = len(keys)
    while i < n:
        start_key, start_pos = keys[i], i
        lo, hi = float("-inf"), float("inf")
        j = i + 1
        while j < n:
            dk = keys[j] - start_key
            dp = j - start_pos
            new_lo = (dp - epsilon) / dk
            new_hi = (dp + epsilon) / dk
            if max(lo, new_lo) > min(hi, new_hi):
                break
            lo, hi = max(lo, new_lo), min(hi, new_hi)
            j += 1
        if j == i + 1:
            slope = 0.0
        elif lo == float("-inf"):
            slope = hi
        elif hi == float("inf"):
            slope = lo
        else:
            slope = (lo + hi) / 2.0
        segments.append(Segment(start_key=start_key, start_pos=start_pos,
                                slope=slope, max_error=epsilon))
        i = j
    return segments


def _verify_and_split(keys: Sequence[int], segments: list[Segment],
                      epsilon: int) -> list[Segment]:
    """Guarantee the error bound even under float rounding: re-fit any
    segment whose prediction drifts past epsilon on an actual key."""
    work: list[tuple[Segment, int, int]] = []
    for idx, seg in enumerate(segments):
        end = segments[idx + 1].start_pos if idx + 1 < len(segments) else len(keys)
        work.append((seg, seg.start_pos, end))
    out: list[Segment] = []
    while work:
        seg, start, end = work.pop()
        violated = any(
            abs(seg.predict(keys[p]) - p) > epsilon for p in range(start, end)
        )
        if not violated:
            out.append(seg)
        elif end - start == 1:  # a single key always fits exactly
            out.append(Segment(keys[start], start, 0.0, epsilon))
        else:
            mid = (start + end) // 2
            for lo, hi in ((start, mid), (mid, end)):
                parts = [
                    Segment(s.start_key, s.start_pos + lo, s.slope, epsilon)
                    for s in _fit_segments(keys[lo:hi], epsilon)
                ]
                for k, part in enumerate(parts):
                    part_end = parts[k + 1].start_pos if k + 1 < len(parts) else hi
                    work.append((part, part.start_pos, part_end))
    return sorted(out, key=lambda s: s.start_pos)


def build_learned_index(
    mapping: Sequence[tuple[int, int]], epsilon: int = 16
) -> LearnedIndex:
    """Fit segments over a sorted, strictly-increasing key table.

    Every key is covered and predicts within +/- epsilon of its position;
    the greedy extension makes the segment count minimal for this order.
    """
    if not mapping:
        raise EmptyMapping("cannot index an empty mapping")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    keys = tuple(k for k, _ in mapping)
    addrs = tuple(a for _, a in mapping)
    for i in range(1, len(keys)):
        if keys[i] <= keys[i - 1]:
            raise ValueError("keys must be strictly increasing")
    segments = _fit_segments(keys, epsilon)
    segments = _verify_and_split(keys, segments, epsilon)
    return LearnedIndex(epsilon=epsilon, segments=tuple(segments),
                        keys=keys, addrs=addrs)


def lookup_with_stats(index: LearnedIndex, key: int) -> tuple[int, int, bool]:
    """(address, probes, served_by_segment); exact or KeyNotFound.

    Probes count table-entry comparisons; a segment-served hit needs at most
    2 * epsilon + 1 of them.
    """
    n = len(index.keys)
    seg = index.segment_for(key)
    center = min(max(seg.predict(key), 0), n - 1)
    lo = max(center - index.epsilon, 0)
    hi = min(center + index.epsilon, n - 1)
    probes = 0
    left, right = lo, hi
    while left <= right:
        mid = (left + right) // 2
        probes += 1
        if index.keys[mid] == key:
            return index.addrs[mid], probes, True
        if index.keys[mid] < key:
            left = mid + 1
        else:
            right = mid - 1
    # segment miss: full binary search keeps lookups exact
    pos = bisect.bisect_left(index.keys, key)
    probes += max(1, n.bit_length())
    if pos < n and index.keys[pos] == key:
        return index.addrs[pos], probes, False
    raise KeyNotFound(f"key {key} is not in the mapping")


def lookup(index: LearnedIndex, key: int) -> int:
    """Exact block address for a present key; KeyNotFound otherwise."""
    addr, _, _ = lookup_with_stats(index, key)
    return addr
