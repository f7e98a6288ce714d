"""Workspace event monitoring: triggers, polling scanner, normalized records.

Detection is a polling tree scan (mtime/size/hash compare) so tests stay
deterministic; a platform watch API could back the same contract later.
Events are normalized into a fixed, versioned record shape - identical
between live operation and training corpora - and persisted append-only.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .actuator import PEROS_DIR, Workspace
from .errors import DuplicateId, GlobOutsideSandbox

EVENT_SCHEMA_VERSION = 1
EVENT_KINDS = ("create", "modify", "delete", "rename")
DEFAULT_POLL_MS = 200
DEFAULT_DEBOUNCE_MS = 200


@dataclass(frozen=True)
class TriggerSpec:
    id: str
    kind: str  # create | modify | delete | rename
    glob: str
    debounce_ms: int = DEFAULT_DEBOUNCE_MS

    def check(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"bad trigger kind {self.kind!r}")
        g = self.glob
        if g.startswith("/"):
            g = g[1:]
        if Path(g).is_absolute() or ".." in Path(g).parts:
            raise GlobOutsideSandbox(f"glob escapes the workspace: {self.glob}")

    def normalized_glob(self) -> str:
        return self.glob.lstrip("/")

    def matches(self, kind: str, path: str) -> bool:
        return kind == self.kind and fnmatch.fnmatch(path, self.normalized_glob())


@dataclass(frozen=True)
class RawChange:
    kind: str
    path: str  # workspace-relative, forward slashes
    size: int | None = None
    old_path: str | None = None
    timestamp_ms: int = 0


@dataclass(frozen=True)
class KernelEvent:
    """Normalized event record; format shared by live operation and corpora."""

    schema_version: int
    trigger_id: str
    kind: str
    path: str
    timestamp_ms: int
    seq: int
    size_bytes: int | None = None
    old_path: str | None = None

    def to_json(self) -> dict:
        doc = {
            "schema_version": self.schema_version,  # first field by contract
            "trigger_id": self.trigger_id,
            "kind": self.kind,
            "path": self.path,
            "timestamp_ms": self.timestamp_ms,
            "seq": self.seq,
            "payload": {},
        }
        if self.size_bytes is not None:
            doc["payload"]["size_bytes"] = self.size_bytes
        if self.old_path is not None:
            doc["payload"]["old_path"] = self.old_path
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "KernelEvent":
        payload = doc.get("payload", {})
        return cls(
            schema_version=int(doc["schema_version"]),
            trigger_id=doc["trigger_id"],
            kind=doc["kind"],
            path=doc["path"],
            timestamp_ms=int(doc["timestamp_ms"]),
            seq=int(doc["seq"]),
            size_bytes=payload.get("size_bytes"),
            old_path=payload.get("old_path"),
        )


def normalize_event(raw: RawChange, trigger_id: str, seq: int) -> KernelEvent:
    """Canonicalize a raw change: relative posix path, UTC ms timestamp,
    schema version tag. Identical raw changes normalize identically except
    for the assigned seq."""
    return KernelEvent(
        schema_version=EVENT_SCHEMA_VERSION,
        trigger_id=trigger_id,
        kind=raw.kind,
        path=raw.path.replace("\\", "/"),
        timestamp_ms=raw.timestamp_ms or int(time.time() * 1000),
        seq=seq,
        size_bytes=raw.size,
        old_path=raw.old_path,
    )


class Watchdog:
    """One watcher per workspace. ``scan()`` is the deterministic core; the
    optional background thread just calls it on a period."""

    def __init__(
        self,
        ws: Workspace,
        poll_ms: int = DEFAULT_POLL_MS,
        debounce_ms: int = DEFAULT_DEBOUNCE_MS,
        include_git: bool = False,
    ):
        self.ws = ws
        self.poll_ms = poll_ms
        self.debounce_ms = debounce_ms
        self.include_git = include_git
        self._triggers: dict[str, TriggerSpec] = {}
        self._events: list[KernelEvent] = []
        self._seq = 0
        self._baseline: dict[str, tuple[int, int, str]] | None = None
        self._pending_modify: dict[str, tuple[tuple[int, int, str], int]] = {}
        self._lock = threading.Lock()
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()
        self._load_log()

    # -- persistence -----------------------------------------------------------

    @property
    def log_path(self) -> Path:
        return self.ws.peros_dir / "events.ndjson"

    def _load_log(self) -> None:
        if not self.log_path.exists():
            return
        for line in self.log_path.read_text().splitlines():
            if not line.strip():
                continue
            ev = KernelEvent.from_json(json.loads(line))
            self._events.append(ev)
            self._seq = max(self._seq, ev.seq)

    def _persist(self, event: KernelEvent) -> None:
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event.to_json()) + "\n")

    # -- triggers ----------------------------------------------------------------

    def register_trigger(self, spec: TriggerSpec) -> str:
        spec.check()
        with self._lock:
            if spec.id in self._triggers:
                raise DuplicateId(f"trigger id already registered: {spec.id}")
            self._triggers[spec.id] = spec
        return spec.id

    def triggers(self) -> list[TriggerSpec]:
        return list(self._triggers.values())

    # -- scanning ----------------------------------------------------------------

    def _scan_tree(self) -> dict[str, tuple[int, int, str]]:
        state = {}
        for p in self.ws.iter_files(include_git=self.include_git):
            rel = self.ws.relpath(p)
            st = p.stat()
            cached = self._baseline.get(rel) if self._baseline else None
            if cached and cached[0] == st.st_mtime_ns and cached[1] == st.st_size:
                state[rel] = cached
            else:
                h = hashlib.sha256(p.read_bytes()).hexdigest()
                state[rel] = (st.st_mtime_ns, st.st_size, h)
        return state

    def scan(self, now_ms: int | None = None) -> list[KernelEvent]:
        """One polling pass. The first pass establishes the baseline and
        emits nothing; rapid modify bursts on one path are held until a
        quiet scan, coalescing into a single event."""
        now = now_ms if now_ms is not None else int(time.time() * 1000)
        with self._lock:
            state = self._scan_tree()
            if self._baseline is None:
                self._baseline = state
                return []
            raws: list[RawChange] = []

            old_paths = set(self._baseline) - set(state)
            new_paths = set(state) - set(self._baseline)
            by_hash: dict[str, list[str]] = {}
            for p in sorted(old_paths):
                by_hash.setdefault(self._baseline[p][2], []).append(p)
            renamed_new: set[str] = set()
            renamed_old: set[str] = set()
            for p in sorted(new_paths):
                h = state[p][2]
                if by_hash.get(h):
                    old = by_hash[h].pop(0)
                    raws.append(RawChange("rename", p, size=state[p][1],
                                          old_path=old, timestamp_ms=now))
                    renamed_new.add(p)
                    renamed_old.add(old)
            for p in sorted(new_paths - renamed_new):
                raws.append(RawChange("create", p, size=state[p][1], timestamp_ms=now))
            for p in sorted(old_paths - renamed_old):
                raws.append(RawChange("delete", p, timestamp_ms=now))
                self._pending_modify.pop(p, None)

            changed = {
                p for p in set(state) & set(self._baseline)
                if state[p] != self._baseline[p]
            }
            for p in sorted(changed):
                self._pending_modify[p] = (state[p], now)
            # debounce: a held modify flushes once its path stays quiet for
            # a full window; further churn restarts the hold
            for p, (sig, seen_ms) in list(self._pending_modify.items()):
                if p not in state:
                    del self._pending_modify[p]
                elif p not in changed and now - seen_ms >= self.debounce_ms:
                    raws.append(RawChange("modify", p, size=state[p][1], timestamp_ms=now))
                    del self._pending_modify[p]

            self._baseline = state
            events: list[KernelEvent] = []
            for raw in raws:
                for trig in self._triggers.values():
                    if trig.matches(raw.kind, raw.path):
                        self._seq += 1
                        ev = normalize_event(raw, trig.id, self._seq)
                        self._events.append(ev)
                        self._persist(ev)
                        events.append(ev)
            return events

    def settle(self, now_ms: int | None = None) -> list[KernelEvent]:
        """Run scans until pending debounce holds flush (bounded)."""
        out = []
        base = now_ms if now_ms is not None else int(time.time() * 1000)
        for i in range(3):
            out.extend(self.scan(base + i * max(self.debounce_ms, 1)))
            if not self._pending_modify:
                break
        return out

    # -- queries -----------------------------------------------------------------

    def poll_events(self, since: int = 0) -> list[KernelEvent]:
        """All events with seq > since matching any active trigger, by seq."""
        with self._lock:
            return [e for e in self._events if e.seq > since]

    @property
    def last_seq(self) -> int:
        return self._seq

    # -- background loop -----------------------------------------------------------

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.wait(self.poll_ms / 1000.0):
            try:
                self.scan()
            except OSError:
                pass  # transient fs churn; next pass recovers

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None
