"""Request understanding: natural-language text -> IntentFrame.

Two interchangeable backends emit the same strict intermediate frame schema:
a deterministic rule grammar (shipped as data files, hot-reloadable) and a
client for an external chat-completion endpoint whose output is validated
against that schema and retried once before giving up.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import httpx

from .errors import (
    BackendUnavailable,
    GrammarLoadError,
    MalformedCompletion,
    NoIntent,
)
from .model import Ambiguity, IntentFrame, Task

FRAME_SCHEMA_VERSION = 1

CONTEXT_WINDOW_TURNS = 20

# Filler tokens stripped from the head of a clause before rule matching.
_DISCOURSE_MARKERS = {
    "now", "please", "then", "also", "first", "next", "finally", "and",
    "ok", "okay", "so",
}

_CLAUSE_SEP = re.compile(r",\s*(?:and\s+|then\s+)?|\s+and\s+then\s+|\s+and\s+")


# ---------------------------------------------------------------------------
# Dialogue context
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Turn:
    speaker: str  # "user" | "system"
    text: str
    frame_id: str | None = None
    plan_id: str | None = None

    def to_json(self) -> dict:
        return {
            "speaker": self.speaker,
            "text": self.text,
            "frame_id": self.frame_id,
            "plan_id": self.plan_id,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Turn":
        return cls(doc["speaker"], doc["text"], doc.get("frame_id"), doc.get("plan_id"))


@dataclass(frozen=True)
class WorkspaceInfo:
    """Facts about the bound workspace the interpreter may use in questions."""

    remotes: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def all_branches(self) -> list[tuple[str, str]]:
        """(remote, branch) pairs in remote order."""
        return [(r, b) for r in self.remotes for b in self.remotes[r]]


@dataclass
class DialogueContext:
    """Append-only turn history plus open clarifications for one session."""

    session_id: str
    turns: list[Turn] = field(default_factory=list)
    open_clarifications: list[Ambiguity] = field(default_factory=list)
    workspace_info: WorkspaceInfo | None = None

    def add_turn(self, turn: Turn) -> None:
        self.turns.append(turn)

    def recent_turns(self, window: int = CONTEXT_WINDOW_TURNS) -> list[Turn]:
        return self.turns[-window:]

    def set_clarification(self, amb: Ambiguity) -> None:
        # at most one open clarification per slot
        self.open_clarifications = [
            c for c in self.open_clarifications if c.slot != amb.slot
        ] + [amb]

    def clear_clarification(self, slot: str) -> None:
        self.open_clarifications = [c for c in self.open_clarifications if c.slot != slot]


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "rule"  # "rule" | "llm-endpoint"
    grammar_dir: str | None = None
    endpoint_url: str | None = None
    model: str | None = None
    token_budget: int = 1024
    api_key: str | None = None

    @classmethod
    def llm_from_env(cls, env: Mapping[str, str]) -> "BackendConfig":
        return cls(
            kind="llm-endpoint",
            endpoint_url=env.get("PEROS_LLM_URL"),
            model=env.get("PEROS_LLM_MODEL"),
            api_key=env.get("PEROS_LLM_KEY"),
        )


# ---------------------------------------------------------------------------
# Grammar
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ask:
    slot: str
    param: str
    question: str


@dataclass(frozen=True)
class GrammarRule:
    name: str
    pattern: re.Pattern
    verb: str
    object_template: str | None
    param_templates: Mapping[str, str]
    defaults: Mapping[str, str]
    asks: tuple[Ask, ...]


@dataclass(frozen=True)
class Grammar:
    version: str
    rules: tuple[GrammarRule, ...]

    @classmethod
    def load(cls, path: str | Path) -> "Grammar":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            rules = []
            for r in doc["rules"]:
                rules.append(GrammarRule(
                    name=r["name"],
                    pattern=re.compile(r["pattern"], re.IGNORECASE),
                    verb=r["verb"],
                    object_template=r.get("object"),
                    param_templates=dict(r.get("params", {})),
                    defaults=dict(r.get("defaults", {})),
                    asks=tuple(
                        Ask(a["slot"], a["param"], a["question"])
                        for a in r.get("asks", ())
                    ),
                ))
            return cls(version=doc.get("version", "?"), rules=tuple(rules))
        except (OSError, KeyError, ValueError, re.error) as exc:
            raise GrammarLoadError(f"cannot load grammar from {path}: {exc}")


_TEMPLATE_RE = re.compile(r"\{(?P<group>\w+)(?::(?P<filter>\w+))?\}")


def _expand_template(template: str, groups: Mapping[str, str | None]) -> str | None:
    """Substitute {group} / {group:lower} / {group:flag}; None if a referenced
    group did not participate in the match."""
    missing = False

    def sub(m: re.Match) -> str:
        nonlocal missing
        value = groups.get(m.group("group"))
        filt = m.group("filter")
        if filt == "flag":
            return "true" if value else "\0"
        if value is None:
            missing = True
            return ""
        if filt == "lower":
            return value.lower()
        return value

    out = _TEMPLATE_RE.sub(sub, template)
    if missing or "\0" in out:
        return None
    return out


def split_clauses(text: str) -> list[tuple[str, tuple[int, int]]]:
    """Split a request on coordinating connectives, preserving source spans.

    Leading discourse fillers are stripped from each clause; empty clauses
    are dropped.
    """
    pieces: list[tuple[str, tuple[int, int]]] = []
    pos = 0
    for sep in _CLAUSE_SEP.finditer(text):
        pieces.append((text[pos:sep.start()], (pos, sep.start())))
        pos = sep.end()
    pieces.append((text[pos:], (pos, len(text))))

    out = []
    for clause, (lo, hi) in pieces:
        # trim whitespace and trailing punctuation
        stripped = clause.strip().rstrip(".!?").strip()
        offset = clause.find(stripped) if stripped else 0
        tokens = stripped.split()
        while tokens and tokens[0].lower().rstrip(",") in _DISCOURSE_MARKERS:
            dropped = tokens.pop(0)
            offset = clause.find(" ".join(tokens), offset + len(dropped)) if tokens else offset
        remaining = " ".join(tokens)
        if remaining:
            start = lo + max(clause.find(remaining), 0)
            out.append((remaining, (start, start + len(remaining))))
    return out


def rule_parse(request: str, grammar: Grammar) -> IntentFrame:
    """Deterministic parse: clause split, then first matching rule per clause.

    Clauses no rule covers are dropped; a request where nothing matches
    raises NoIntent.
    """
    tasks: list[Task] = []
    for clause, span in split_clauses(request):
        for rule in grammar.rules:
            m = rule.pattern.match(clause)
            if not m:
                continue
            groups = m.groupdict()
            params: dict[str, str] = {}
            for name, template in rule.param_templates.items():
                value = _expand_template(template, groups)
                if value is not None:
                    params[name] = value
            for name, default in rule.defaults.items():
                params.setdefault(name, default)
            obj = (
                _expand_template(rule.object_template, groups)
                if rule.object_template
                else None
            )
            unfilled = tuple(a.slot for a in rule.asks if a.param not in params)
            tasks.append(Task(
                verb=rule.verb,
                object=obj,
                params=params,
                span=span,
                asks=unfilled,
            ))
            break
    if not tasks:
        raise NoIntent(f"no grammar rule matches: {request!r}")
    frame = IntentFrame(source=request, tasks=tuple(tasks))
    frame.check()
    return frame


def grammar_asks(grammar: Grammar) -> dict[str, Ask]:
    """slot -> Ask declaration across all rules (first declaration wins)."""
    out: dict[str, Ask] = {}
    for rule in grammar.rules:
        for a in rule.asks:
            out.setdefault(a.slot, a)
    return out


# ---------------------------------------------------------------------------
# Ambiguity detection and clarification answers
# ---------------------------------------------------------------------------

def _branch_listing(info: WorkspaceInfo) -> str:
    parts = []
    for remote, branches in info.remotes.items():
        parts.append(f"{', '.join(branches)} on {remote}")
    return " You have " + " and ".join(parts) + "."


def detect_ambiguity(
    frame: IntentFrame,
    ctx: DialogueContext,
    questions: Mapping[str, str] | None = None,
) -> list[Ambiguity]:
    """One entry per unresolved required slot, in task source order.

    When the context knows candidate values (e.g. remote branches for a push
    destination) they are appended to the question text.
    """
    questions = questions or {}
    out: list[Ambiguity] = []
    seen: set[str] = set()
    for task in frame.tasks:
        for slot in task.asks:
            if slot in seen:
                continue
            seen.add(slot)
            question = questions.get(slot, f"What value should {slot} take?")
            if slot == "target_branch" and ctx.workspace_info and ctx.workspace_info.remotes:
                question += _branch_listing(ctx.workspace_info)
            out.append(Ambiguity(slot=slot, question=question))
    return out


def parse_clarification_answer(
    request: str,
    open_clarification: Ambiguity,
    ctx: DialogueContext,
) -> dict[str, str] | None:
    """Try to read a user message as the answer to an open clarification.

    Returns bindings (slot value plus any auxiliary values such as the
    remote a branch lives on), or None when the message does not answer it.
    """
    tokens = [t.strip(",.") for t in request.split() if t.strip(",.")]
    if not tokens:
        return None
    slot = open_clarification.slot
    info = ctx.workspace_info
    if slot == "target_branch" and info and info.remotes:
        branch = None
        remote = None
        for tok in tokens:
            low = tok.lower()
            if low in (r.lower() for r in info.remotes):
                remote = next(r for r in info.remotes if r.lower() == low)
            else:
                for r, branches in info.remotes.items():
                    if low in (b.lower() for b in branches):
                        branch = next(b for b in branches if b.lower() == low)
        if branch is None:
            return None
        if remote is None:
            owners = [r for r, bs in info.remotes.items() if branch in bs]
            if len(owners) != 1:
                return None
            remote = owners[0]
        return {slot: branch, "remote": remote}
    if len(tokens) == 1:
        return {slot: tokens[0]}
    return None


# ---------------------------------------------------------------------------
# LLM endpoint backend
# ---------------------------------------------------------------------------

_PROMPT_HEADER = """You turn one user request into a JSON task frame for a
whitelisted operation planner. Respond with a single JSON object and nothing
else. Schema:
{"version": 1,
 "tasks": [{"verb": "<verb>", "object": "<descriptor or null>",
             "params": {"<name>": "<string value>"}, "span": [start, end],
             "asks": ["<slot needing clarification>"]}],
 "ambiguities": [{"slot": "<slot>", "question": "<question>"}]}
Verbs you may emit: %s.
Split the request into tasks in the order they are expressed. Use parameter
values exactly as written in the request. If a required detail is missing,
list its slot under "asks" for that task.
"""


def build_prompt(request: str, ctx: DialogueContext, grammar: Grammar) -> list[dict]:
    verbs = sorted({r.verb for r in grammar.rules})
    messages = [{"role": "system", "content": _PROMPT_HEADER % ", ".join(verbs)}]
    for turn in ctx.recent_turns():
        role = "user" if turn.speaker == "user" else "assistant"
        messages.append({"role": role, "content": turn.text})
    messages.append({"role": "user", "content": request})
    return messages


def llm_complete(messages: list[dict], cfg: BackendConfig, client: httpx.Client | None = None) -> str:
    """Call an OpenAI-compatible chat-completion endpoint, returning raw text."""
    if cfg.kind != "llm-endpoint":
        raise ValueError("llm_complete requires an llm-endpoint backend")
    if not cfg.endpoint_url:
        raise BackendUnavailable("no endpoint configured (PEROS_LLM_URL)")
    body = {
        "model": cfg.model or "default",
        "messages": messages,
        "temperature": 0,
        "max_tokens": cfg.token_budget,
    }
    headers = {}
    if cfg.api_key:
        headers["Authorization"] = f"Bearer {cfg.api_key}"
    try:
        if client is None:
            with httpx.Client(timeout=30.0) as own:
                resp = own.post(cfg.endpoint_url, json=body, headers=headers)
        else:
            resp = client.post(cfg.endpoint_url, json=body, headers=headers)
    except httpx.HTTPError as exc:
        raise BackendUnavailable(f"endpoint unreachable: {exc}")
    if resp.status_code >= 500:
        raise BackendUnavailable(f"endpoint error {resp.status_code}")
    try:
        return resp.json()["choices"][0]["message"]["content"]
    except (KeyError, IndexError, ValueError) as exc:
        raise MalformedCompletion(f"unexpected completion envelope: {exc}")


def parse_frame_json(text: str, source: str) -> IntentFrame:
    """Validate a completion against the strict intermediate frame schema."""
    stripped = text.strip()
    if stripped.startswith("```"):
        stripped = re.sub(r"^```[a-z]*\n?|\n?```$", "", stripped)
    try:
        doc = json.loads(stripped)
    except ValueError as exc:
        raise MalformedCompletion(f"not JSON: {exc}")
    if not isinstance(doc, dict) or doc.get("version") != FRAME_SCHEMA_VERSION:
        raise MalformedCompletion("missing or wrong schema version")
    allowed = {"version", "tasks", "ambiguities"}
    if set(doc) - allowed:
        raise MalformedCompletion(f"unexpected keys: {sorted(set(doc) - allowed)}")
    tasks = []
    for t in doc.get("tasks", ()):
        if not isinstance(t, dict) or "verb" not in t:
            raise MalformedCompletion("task missing verb")
        params = t.get("params", {})
        if not isinstance(params, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in params.items()
        ):
            raise MalformedCompletion("task params must map strings to strings")
        span = t.get("span", [0, 0])
        if not (isinstance(span, list) and len(span) == 2):
            raise MalformedCompletion("task span must be [start, end]")
        lo, hi = int(span[0]), int(span[1])
        lo = max(0, min(lo, len(source)))
        hi = max(lo, min(hi, len(source)))
        tasks.append(Task(
            verb=t["verb"],
            object=t.get("object"),
            params=dict(params),
            span=(lo, hi),
            asks=tuple(t.get("asks", ())),
        ))
    ambiguities = tuple(
        Ambiguity(a["slot"], a.get("question", ""))
        for a in doc.get("ambiguities", ())
    )
    frame = IntentFrame(source=source, tasks=tuple(tasks), ambiguities=ambiguities)
    frame.check()
    return frame


def _llm_parse(request: str, ctx: DialogueContext, cfg: BackendConfig,
               grammar: Grammar, client: httpx.Client | None) -> IntentFrame:
    messages = build_prompt(request, ctx, grammar)
    text = llm_complete(messages, cfg, client)
    try:
        return parse_frame_json(text, request)
    except MalformedCompletion:
        retry = messages + [
            {"role": "assistant", "content": text},
            {"role": "user", "content": "That was not valid frame JSON. "
                                        "Reply with only the JSON object."},
        ]
        text = llm_complete(retry, cfg, client)
        return parse_frame_json(text, request)  # second failure propagates


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def interpret(
    request: str,
    ctx: DialogueContext,
    cfg: BackendConfig,
    grammar: Grammar,
    http_client: httpx.Client | None = None,
) -> IntentFrame:
    """Turn a user request plus dialogue context into an IntentFrame.

    If the context carries an open clarification and the request answers it,
    the frame contains a single "clarify" task binding that slot.
    """
    req = request.strip()
    if not req:
        raise NoIntent("empty request")

    for open_clar in ctx.open_clarifications:
        bindings = parse_clarification_answer(req, open_clar, ctx)
        if bindings is not None:
            task = Task(verb="clarify", params=bindings, span=(0, len(req)),
                        asks=())
            return IntentFrame(source=req, tasks=(task,))

    if cfg.kind == "rule":
        frame = rule_parse(req, grammar)
    elif cfg.kind == "llm-endpoint":
        frame = _llm_parse(req, ctx, cfg, grammar, http_client)
    else:
        raise ValueError(f"unknown backend kind {cfg.kind!r}")

    questions = {slot: ask.question for slot, ask in grammar_asks(grammar).items()}
    ambiguities = detect_ambiguity(frame, ctx, questions)
    frame = IntentFrame(source=frame.source, tasks=frame.tasks,
                        ambiguities=tuple(ambiguities))
    frame.check()
    return frame
