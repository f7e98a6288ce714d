"""Plan compilation: IntentFrame -> validated OperationPlan.

The verb-to-API mapping is a declarative table versioned together with the
grammar. Compilation is pure: the same frame and registry version always
produce the same plan (ids are content hashes, not random).
"""

from __future__ import annotations

import hashlib
import json
import posixpath
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import GrammarLoadError, TypeMismatch, UnknownSlot, UnmappableTask
from .model import (
    ApiRegistry,
    Clarification,
    IntentFrame,
    OperationPlan,
    PlanStep,
    Task,
    UnboundSlot,
    check_typed,
    parse_value,
    validate_plan,
)

DEFAULT_QUESTION = "What value should {slot} take?"


# ---------------------------------------------------------------------------
# Verb mapping table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArgBinding:
    param: str | None = None       # frame param to read
    literal: Any = None            # fixed value
    ask: str | None = None         # clarification slot when param missing
    primary: bool = False          # the arg a scalar answer for `ask` binds

    @classmethod
    def from_json(cls, doc: Mapping) -> "ArgBinding":
        return cls(
            param=doc.get("param"),
            literal=doc.get("literal"),
            ask=doc.get("ask"),
            primary=bool(doc.get("primary", False)),
        )


@dataclass(frozen=True)
class CallTemplate:
    api: str
    args: Mapping[str, ArgBinding]


@dataclass(frozen=True)
class VerbCandidate:
    calls: tuple[CallTemplate, ...]
    requires: tuple[str, ...] = ()


@dataclass(frozen=True)
class VerbTable:
    version: str
    verbs: Mapping[str, tuple[VerbCandidate, ...]]

    @classmethod
    def load(cls, path: str | Path) -> "VerbTable":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            verbs = {}
            for verb, candidates in doc["verbs"].items():
                parsed = []
                for cand in candidates:
                    calls = tuple(
                        CallTemplate(
                            api=c["api"],
                            args={k: ArgBinding.from_json(v) for k, v in c.get("args", {}).items()},
                        )
                        for c in cand["calls"]
                    )
                    parsed.append(VerbCandidate(calls=calls, requires=tuple(cand.get("requires", ()))))
                verbs[verb] = tuple(parsed)
            return cls(version=doc.get("version", "?"), verbs=verbs)
        except (OSError, KeyError, ValueError) as exc:
            raise GrammarLoadError(f"cannot load verb table from {path}: {exc}")


# ---------------------------------------------------------------------------
# Anaphora: "those files" / "this folder" resolution
# ---------------------------------------------------------------------------

@dataclass
class _Selection:
    pattern: str | None = None
    min_size: str | None = None
    directory: str = ""


def _with_suffix_pattern(pattern: str, suffix: str) -> str:
    root, ext = posixpath.splitext(pattern)
    return f"{root}{suffix}{ext}" if ext else f"{pattern}{suffix}"


def _resolve_markers(task: Task, selection: _Selection) -> dict[str, str]:
    params = dict(task.params)
    for key, value in list(params.items()):
        if value == "@selection":
            if not selection.pattern:
                raise UnmappableTask(task.verb, "no prior file selection to refer to")
            params[key] = selection.pattern
            if selection.min_size and "min_size" not in params:
                params["min_size"] = selection.min_size
        elif value == "@selection_dir":
            if not selection.directory:
                raise UnmappableTask(task.verb, "no prior directory to refer to")
            params[key] = selection.directory
    return params


def _advance_selection(selection: _Selection, api: str, params: Mapping[str, str]) -> _Selection:
    if api == "git.rm_cached":
        return _Selection(pattern=params.get("pattern"),
                          min_size=params.get("min_size"),
                          directory=selection.directory)
    if api in ("fs.move", "fs.copy"):
        src = params.get("src", "")
        dst = params.get("dst", "")
        base = posixpath.basename(src) or src
        moved = posixpath.join(dst, base) if dst else base
        if api == "fs.move":
            return _Selection(pattern=moved, min_size=None, directory=dst)
        return selection
    if api == "fs.remove":
        return _Selection()
    if api == "fs.rename_suffix" and selection.pattern:
        suffix = params.get("suffix", "")
        return replace(selection,
                       pattern=_with_suffix_pattern(selection.pattern, suffix))
    return selection


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

def _bind_call(
    call: CallTemplate,
    params: Mapping[str, str],
    registry: ApiRegistry,
) -> tuple[dict[str, Any], list[tuple[str, str, bool]]] | None:
    """Bind one call template; None when a required arg cannot be satisfied.

    Returns (typed args, [(slot, arg name, is_primary)] for unbound args).
    """
    spec = registry.get(call.api)
    args: dict[str, Any] = {}
    pending: list[tuple[str, str, bool]] = []
    for p in spec.params:
        binding = call.args.get(p.name)
        if binding is None:
            if p.required:
                return None
            continue
        if binding.literal is not None:
            value = binding.literal
            if isinstance(value, str) and p.kind not in ("string", "path", "enum"):
                value = parse_value(p.kind, value, p.values)
            if not check_typed(p.kind, value, p.values):
                return None
            args[p.name] = value
            continue
        raw = params.get(binding.param) if binding.param else None
        if raw is not None:
            args[p.name] = parse_value(p.kind, raw, p.values)
        elif binding.ask:
            args[p.name] = UnboundSlot(binding.ask)
            pending.append((binding.ask, p.name, binding.primary))
        elif p.required:
            return None
    return args, pending


def _candidate_score(cand: VerbCandidate, params: Mapping[str, str]) -> int:
    consumed = {r for r in cand.requires if r in params}
    for call in cand.calls:
        for binding in call.args.values():
            if binding.param and binding.param in params:
                consumed.add(binding.param)
    return len(consumed)


def compile_plan(
    frame: IntentFrame,
    registry: ApiRegistry,
    table: VerbTable,
    questions: Mapping[str, str] | None = None,
    origin: str = "",
) -> OperationPlan:
    """Compile a frame into an ordered plan, one or more API calls per task.

    Unresolved slots become plan clarifications; every plan with empty
    clarifications validates against the registry by construction. A verb
    with no mapping (or an ambiguous best candidate) is an UnmappableTask.
    """
    # frame ambiguities carry context-enriched questions (e.g. candidate
    # branches); they win over the grammar's static templates
    questions = dict(questions or {})
    questions.update({a.slot: a.question for a in frame.ambiguities if a.question})
    selection = _Selection()
    steps: list[PlanStep] = []
    clarifications: list[Clarification] = []

    for task in frame.tasks:
        candidates = table.verbs.get(task.verb)
        if not candidates:
            raise UnmappableTask(task.verb)
        params = _resolve_markers(task, selection)

        bound: list[tuple[int, VerbCandidate, list]] = []
        for cand in candidates:
            if any(r not in params for r in cand.requires):
                continue
            calls = []
            ok = True
            for call in cand.calls:
                b = _bind_call(call, params, registry)
                if b is None:
                    ok = False
                    break
                calls.append((call, b))
            if ok:
                bound.append((_candidate_score(cand, params), cand, calls))
        if not bound:
            raise UnmappableTask(task.verb, "no candidate binds the given parameters")
        best = max(s for s, _, _ in bound)
        winners = [entry for entry in bound if entry[0] == best]
        if len(winners) > 1:
            raise UnmappableTask(task.verb, "ambiguous mapping (tied candidates)")
        _, _, calls = winners[0]

        for call, (args, pending) in calls:
            index = len(steps) + 1
            steps.append(PlanStep(
                index=index,
                api=call.api,
                args=args,
                depends_on=(index - 1,) if index > 1 else (),
            ))
            by_slot: dict[str, str] = {}
            for slot, arg_name, is_primary in pending:
                if is_primary or slot not in by_slot:
                    by_slot[slot] = arg_name
            for slot, primary_arg in by_slot.items():
                question = questions.get(slot, DEFAULT_QUESTION.format(slot=slot))
                clarifications.append(Clarification(
                    slot=slot, question=question, step_index=index,
                    primary_arg=primary_arg,
                ))
            selection = _advance_selection(selection, call.api, params)

    digest = hashlib.sha256(json.dumps(
        {"frame": frame.to_json(), "registry": registry.version, "origin": origin},
        sort_keys=True,
    ).encode()).hexdigest()[:16]
    return OperationPlan(
        id=f"plan-{digest}",
        steps=tuple(steps),
        clarifications=tuple(clarifications),
        origin=origin,
        registry_version=registry.version,
    )


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckpointPolicy:
    checkpoint_after_effects: frozenset[str] = frozenset({"mutating"})


def insert_checkpoints(
    plan: OperationPlan,
    registry: ApiRegistry,
    policy: CheckpointPolicy = CheckpointPolicy(),
) -> OperationPlan:
    """Flag approval points: the last step of each maximal run of mutating
    steps, plus every network-effect step. Approval is collected before the
    flagged step executes; plans of only read-only steps gain no flags.
    """
    effects = [registry.get(s.api).effect if s.api in registry else "mutating"
               for s in plan.steps]
    flagged: set[int] = set()
    for i, (step, effect) in enumerate(zip(plan.steps, effects)):
        if effect == "network":
            flagged.add(step.index)
        elif effect in policy.checkpoint_after_effects:
            nxt = effects[i + 1] if i + 1 < len(effects) else None
            if nxt != effect:
                flagged.add(step.index)
    steps = tuple(
        replace(s, checkpoint=s.index in flagged) for s in plan.steps
    )
    return replace(plan, steps=steps)


# ---------------------------------------------------------------------------
# Clarification resolution
# ---------------------------------------------------------------------------

def resolve_clarification(
    plan: OperationPlan,
    slot: str,
    answer: Any,
    registry: ApiRegistry,
) -> OperationPlan:
    """Bind a clarification answer into the owning step and drop the entry.

    ``answer`` is either a scalar (bound to the slot's primary argument) or a
    mapping whose keys are the slot name (primary argument) and/or argument
    names of the owning step.
    """
    clar = next((c for c in plan.clarifications if c.slot == slot), None)
    if clar is None:
        raise UnknownSlot(f"no pending clarification for slot {slot!r}")
    step = plan.step(clar.step_index)
    spec = registry.get(step.api)

    primary_arg = clar.primary_arg or next(
        (name for name, v in step.args.items()
         if isinstance(v, UnboundSlot) and v.slot == slot),
        None,
    )

    if isinstance(answer, Mapping):
        bindings = dict(answer)
        if slot in bindings:
            if primary_arg is None:
                raise UnknownSlot(f"slot {slot!r} owns no argument on step {step.index}")
            bindings[primary_arg] = bindings.pop(slot)
    else:
        if primary_arg is None:
            raise UnknownSlot(f"slot {slot!r} owns no argument on step {step.index}")
        bindings = {primary_arg: answer}

    args = dict(step.args)
    for name, value in bindings.items():
        p = spec.param(name)
        if p is None:
            raise TypeMismatch(f"{step.api} has no parameter {name!r}")
        if isinstance(value, str):
            value = parse_value(p.kind, value, p.values)
        if not check_typed(p.kind, value, p.values):
            raise TypeMismatch(f"{name}={value!r} is not {p.kind}")
        args[name] = value

    steps = tuple(
        replace(s, args=args) if s.index == step.index else s for s in plan.steps
    )
    clarifications = tuple(c for c in plan.clarifications if c.slot != slot)
    resolved = replace(plan, steps=steps, clarifications=clarifications)
    validate_plan(resolved, registry)  # revalidation; violations stay data
    return resolved


# ---------------------------------------------------------------------------
# Proactive recommendations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecommendRules:
    min_creations: int = 10
    window_ms: int = 600_000
    frequency: str = "weekly"


@dataclass(frozen=True)
class Suggestion:
    message: str
    frame: IntentFrame
    accept_message: str
    directory: str
    count: int
    last_seq: int


def recommend(events: Sequence, rules: RecommendRules = RecommendRules()) -> Suggestion | None:
    """Fire a backup suggestion when >= N files are created under one
    directory within the window. Absence of a suggestion is a valid outcome.
    """
    by_dir: dict[str, list] = {}
    for e in events:
        if getattr(e, "kind", None) != "create":
            continue
        by_dir.setdefault(posixpath.dirname(e.path), []).append(e)

    for directory in sorted(by_dir):
        evs = sorted(by_dir[directory], key=lambda e: (e.timestamp_ms, e.seq))
        lo = 0
        for hi in range(len(evs)):
            while evs[hi].timestamp_ms - evs[lo].timestamp_ms > rules.window_ms:
                lo += 1
            if hi - lo + 1 >= rules.min_creations:
                count = hi - lo + 1
                shown = directory or "."
                minutes = rules.window_ms // 60_000
                accept = f"enroll {shown} in {rules.frequency} backups on local storage"
                task = Task(
                    verb="backup-enroll",
                    object=shown,
                    params={"path": shown, "frequency": rules.frequency, "pin": "true"},
                    span=(0, len(accept)),
                )
                message = (
                    f"{count} new files appeared under {shown} in the last "
                    f"{minutes} minutes. Should I enroll that folder in "
                    f"{rules.frequency} backups and keep it on local storage?"
                )
                return Suggestion(
                    message=message,
                    frame=IntentFrame(source=accept, tasks=(task,)),
                    accept_message=accept,
                    directory=shown,
                    count=count,
                    last_seq=max(e.seq for e in evs[lo:hi + 1]),
                )
    return None
