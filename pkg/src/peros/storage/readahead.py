"""Online read-ahead window tuning.

The tuner is an epsilon-greedy choice over a discrete set of window sizes -
deliberately lean, no model runtime anywhere near the hot path. A prefetch
batch of ``window`` blocks is issued whenever a read misses the prefetch
cache; a run of consecutive blocks keeps one window for its whole life, and
when the run ends its reward (useful - alpha * wasted prefetched blocks)
credits the arm that chose the window. ``best_fixed_readahead`` exhaustively
simulates every fixed window and is the oracle the tuner is judged against.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..errors import InvalidCandidates
from .trace import AccessRecord, AccessTrace

DEFAULT_CANDIDATES = (1, 2, 4, 8, 16, 32, 64, 128, 256)
DEFAULT_EPSILON = 0.1
DEFAULT_ALPHA = 0.5


@dataclass
class ArmStats:
    reward_sum: float = 0.0
    pulls: int = 0

    @property
    def mean(self) -> float:
        return self.reward_sum / self.pulls if self.pulls else 0.0


@dataclass
class StreamRun:
    """One in-flight sequential run on a single file."""

    window: int
    last_block: int
    run_length: int = 1
    prefetched: set[int] = field(default_factory=set)
    useful: int = 0

    @property
    def wasted(self) -> int:
        return len(self.prefetched)

    @property
    def total_prefetched(self) -> int:
        # conservation: useful + wasted == prefetched, by construction
        return self.useful + len(self.prefetched)


@dataclass
class ReadaheadState:
    candidates: tuple[int, ...] = DEFAULT_CANDIDATES
    epsilon: float = DEFAULT_EPSILON
    alpha: float = DEFAULT_ALPHA
    seed: int = 0
    arms: dict[int, ArmStats] = field(default_factory=dict)
    streams: dict[int, StreamRun] = field(default_factory=dict)
    total_useful: int = 0
    total_wasted: int = 0
    total_reward: float = 0.0
    max_held: int = 0
    _rng: random.Random = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if not self.candidates:
            raise InvalidCandidates("candidate set must be non-empty")
        self.candidates = tuple(sorted(self.candidates))
        if self._rng is None:
            self._rng = random.Random(self.seed)
        for w in self.candidates:
            self.arms.setdefault(w, ArmStats())

    # -- arm selection --------------------------------------------------------

    def chosen_arm(self) -> int:
        """The window the tuner currently believes in: argmax of arm means
        over pulled arms (smallest size wins ties); smallest candidate before
        any pull."""
        pulled = [w for w in self.candidates if self.arms[w].pulls]
        if not pulled:
            return self.candidates[0]
        best = max(self.arms[w].mean for w in pulled)
        return min(w for w in pulled if self.arms[w].mean == best)

    def _next_window(self) -> int:
        for w in self.candidates:  # explore untried arms first, smallest first
            if self.arms[w].pulls == 0:
                return w
        if self._rng.random() < self.epsilon:
            return self._rng.choice(self.candidates)
        return self.chosen_arm()

    # -- run lifecycle -----------------------------------------------------------

    def _settle(self, run: StreamRun) -> None:
        reward = run.useful - self.alpha * run.wasted
        arm = self.arms[run.window]
        arm.reward_sum += reward
        arm.pulls += 1
        self.total_useful += run.useful
        self.total_wasted += run.wasted
        self.total_reward += reward

    def finalize(self) -> None:
        """End-of-trace: settle all open runs."""
        for run in self.streams.values():
            self._settle(run)
        self.streams.clear()

    def blocks_held(self) -> int:
        return sum(len(r.prefetched) for r in self.streams.values())


def tune_readahead(
    state: ReadaheadState, record: AccessRecord
) -> tuple[ReadaheadState, tuple[int, int] | None]:
    """Feed one read access; returns the state and the issued prefetch range
    ``(first, last)`` inclusive, or None when the read hit the cache."""
    if record.op != "read":
        raise ValueError("tune_readahead only accepts read records")
    run = state.streams.get(record.file_id)
    prefetch: tuple[int, int] | None = None

    if run is not None and record.block == run.last_block + 1:
        run.last_block = record.block
        run.run_length += 1
        if record.block in run.prefetched:
            run.prefetched.discard(record.block)
            run.useful += 1
        else:
            prefetch = (record.block + 1, record.block + run.window)
            run.prefetched.update(range(prefetch[0], prefetch[1] + 1))
    else:
        if run is not None:
            state._settle(run)
        window = state._next_window()
        run = StreamRun(window=window, last_block=record.block)
        state.streams[record.file_id] = run
        prefetch = (record.block + 1, record.block + window)
        run.prefetched.update(range(prefetch[0], prefetch[1] + 1))

    state.max_held = max(state.max_held, state.blocks_held())
    return state, prefetch


def run_tuner(trace: AccessTrace, state: ReadaheadState | None = None) -> ReadaheadState:
    """Replay all reads of a trace through the tuner and settle open runs."""
    state = state or ReadaheadState()
    for rec in trace.records:
        if rec.op == "read":
            tune_readahead(state, rec)
    state.finalize()
    return state


# ---------------------------------------------------------------------------
# Fixed-window oracle
# ---------------------------------------------------------------------------

def score_fixed_window(trace: AccessTrace, window: int,
                       alpha: float = DEFAULT_ALPHA) -> tuple[float, int, int]:
    """Exact score of one fixed window over the whole trace.

    Returns (reward, useful, wasted) with reward = useful - alpha * wasted
    summed over every run of every stream.
    """
    streams: dict[int, StreamRun] = {}
    useful = wasted = 0

    def settle(run: StreamRun) -> None:
        nonlocal useful, wasted
        useful += run.useful
        wasted += run.wasted

    for rec in trace.records:
        if rec.op != "read":
            continue
        run = streams.get(rec.file_id)
        if run is not None and rec.block == run.last_block + 1:
            run.last_block = rec.block
            run.run_length += 1
            if rec.block in run.prefetched:
                run.prefetched.discard(rec.block)
                run.useful += 1
            else:
                run.prefetched.update(range(rec.block + 1, rec.block + window + 1))
        else:
            if run is not None:
                settle(run)
            run = StreamRun(window=window, last_block=rec.block)
            run.prefetched.update(range(rec.block + 1, rec.block + window + 1))
            streams[rec.file_id] = run
    for run in streams.values():
        settle(run)
    return useful - alpha * wasted, useful, wasted


def best_fixed_readahead(
    trace: AccessTrace,
    candidates: Iterable[int] = DEFAULT_CANDIDATES,
    alpha: float = DEFAULT_ALPHA,
) -> tuple[int, float]:
    """Exhaustive baseline: simulate every fixed candidate window, return the
    argmax (lowest size breaks ties) and its score."""
    sizes = sorted(set(candidates))
    if not sizes:
        raise InvalidCandidates("candidate set must be non-empty")
    if not trace.records:
        raise InvalidCandidates("trace must be non-empty")
    best_size, best_score = sizes[0], None
    for w in sizes:
        score, _, _ = score_fixed_window(trace, w, alpha)
        if best_score is None or score > best_score:
            best_size, best_score = w, score
    return best_size, float(best_score)
