"""Component services behind one internal contract, two transports.

Each component (interpreter, director, actuator, watchdog, evaluator) is a
stateless service: everything it needs arrives in the call or lives on shared
disk (workspace journals, event logs, report files). The gateway talks to
them through the Components protocol; LocalComponents calls straight in,
HttpComponents speaks JSON over HTTP to separately launched processes
(``peros serve --split``). Both transports carry the same documents.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping, Protocol

import httpx
from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .actuator import (
    ExecutionJournal,
    Workspace,
    dry_run,
    execute,
    revert,
    snapshot,
    workspace_remotes,
)
from .config import PerosConfig, data_path
from .director import (
    RecommendRules,
    compile_plan,
    insert_checkpoints,
    recommend,
    resolve_clarification,
)
from .errors import PerosError
from .evaluation import Corpus, evaluate
from .interpreter import (
    Ambiguity,
    BackendConfig,
    DialogueContext,
    Turn,
    WorkspaceInfo,
    interpret,
)
from .model import IntentFrame, OperationPlan
from .pipeline import LanguageStack, RulePipeline
from .watchdog import KernelEvent, TriggerSpec, Watchdog


def _error_by_name(name: str, detail: str) -> PerosError:
    """Rehydrate a typed error from its wire form (name + detail)."""
    from . import errors as errors_mod
    if name == "StepFailure":
        return errors_mod.StepFailure(0, detail)
    if name == "MissingArg":
        return errors_mod.MissingArg(detail)
    cls = getattr(errors_mod, name, PerosError)
    if not (isinstance(cls, type) and issubclass(cls, PerosError)):
        cls = PerosError
    return cls(detail)


def _ctx_from_doc(doc: Mapping) -> DialogueContext:
    ctx = DialogueContext(session_id=doc.get("session_id", "rpc"))
    ctx.turns = [Turn.from_json(t) for t in doc.get("turns", ())]
    ctx.open_clarifications = [
        Ambiguity(a["slot"], a.get("question", ""))
        for a in doc.get("open_clarifications", ())
    ]
    info = doc.get("workspace_info")
    if info:
        ctx.workspace_info = WorkspaceInfo(
            remotes={k: tuple(v) for k, v in info.get("remotes", {}).items()})
    return ctx


def ctx_to_doc(ctx: DialogueContext) -> dict:
    return {
        "session_id": ctx.session_id,
        "turns": [t.to_json() for t in ctx.recent_turns()],
        "open_clarifications": [a.to_json() for a in ctx.open_clarifications],
        "workspace_info": (
            {"remotes": {k: list(v) for k, v in ctx.workspace_info.remotes.items()}}
            if ctx.workspace_info else None
        ),
    }


class ComponentCore:
    """The shared implementation both transports ultimately run."""

    def __init__(self, config: PerosConfig):
        self.config = config
        from .model import ApiRegistry
        self.registry = ApiRegistry.load(config.registry_file())
        self.stack = LanguageStack(config.grammar_dir())

    # -- interpreter ------------------------------------------------------------

    def interpret(self, request: str, ctx: Mapping, backend: Mapping) -> dict:
        cfg = BackendConfig(
            kind=backend.get("kind", "rule"),
            endpoint_url=backend.get("endpoint_url"),
            model=backend.get("model"),
            api_key=backend.get("api_key"),
        )
        frame = interpret(request, _ctx_from_doc(ctx), cfg, self.stack.grammar)
        return frame.to_json()

    # -- director ------------------------------------------------------------------

    def compile(self, frame: Mapping, origin: str = "") -> dict:
        plan = compile_plan(IntentFrame.from_json(frame), self.registry,
                            self.stack.table, self.stack.questions(),
                            origin=origin)
        plan = insert_checkpoints(plan, self.registry)
        return plan.to_json()

    def resolve(self, plan: Mapping, slot: str, answer: Any) -> dict:
        resolved = resolve_clarification(OperationPlan.from_json(plan), slot,
                                         answer, self.registry)
        return resolved.to_json()

    def recommend(self, events: list[Mapping], min_creations: int,
                  window_ms: int) -> dict | None:
        evs = [KernelEvent.from_json(e) for e in events]
        suggestion = recommend(evs, RecommendRules(min_creations=min_creations,
                                                   window_ms=window_ms))
        if suggestion is None:
            return None
        return {
            "message": suggestion.message,
            "accept_message": suggestion.accept_message,
            "directory": suggestion.directory,
            "count": suggestion.count,
            "last_seq": suggestion.last_seq,
            "frame": suggestion.frame.to_json(),
        }

    # -- actuator -----------------------------------------------------------------

    def dry_run(self, root: str, plan: Mapping) -> dict:
        ws = Workspace.attach(root)
        ws.configure_git()
        diff = dry_run(OperationPlan.from_json(plan), ws,
                       step_timeout=self.config.step_timeout_s)
        return diff.to_json()

    def execute(self, root: str, plan: Mapping, approvals: list[int],
                resume: bool) -> dict:
        ws = Workspace.attach(root)
        ws.configure_git()
        p = OperationPlan.from_json(plan)
        journal = None
        if resume:
            path = ws.journal_dir / f"{p.id}.ndjson"
            if path.exists():
                journal = ExecutionJournal.load(path)
        result, journal = execute(p, ws, set(approvals), journal,
                                  step_timeout=self.config.step_timeout_s)
        return {"result": result.to_json(), "journal_entries": len(journal.entries)}

    def revert(self, root: str, plan_id: str) -> dict:
        ws = Workspace.attach(root)
        path = ws.journal_dir / f"{plan_id}.ndjson"
        journal = ExecutionJournal.load(path)
        return revert(journal, ws)

    def snapshot(self, root: str) -> dict:
        return {"digest": snapshot(Workspace.attach(root))}

    def remotes(self, root: str) -> dict:
        ws = Workspace.attach(root)
        return {"remotes": {k: list(v) for k, v in workspace_remotes(ws).items()}}

    # -- evaluator -----------------------------------------------------------------

    def run_eval(self, corpus_path: str | None) -> dict:
        path = Path(corpus_path) if corpus_path else data_path("corpus", "basic.ndjson")
        report = evaluate(Corpus.load(path),
                          RulePipeline(self.stack, self.registry))
        return report.to_json()

    def reload_stack(self, version_dir: str) -> dict:
        self.stack.reload(version_dir)
        return {"version": self.stack.version}


COMPONENT_METHODS = {
    "interpreter": ("interpret", "reload_stack"),
    "director": ("compile", "resolve", "recommend", "reload_stack"),
    "actuator": ("dry_run", "execute", "revert", "snapshot", "remotes"),
    "evaluator": ("run_eval", "reload_stack"),
}


class Components(Protocol):
    def interpret(self, request: str, ctx: Mapping, backend: Mapping) -> dict: ...
    def compile(self, frame: Mapping, origin: str = "") -> dict: ...
    def resolve(self, plan: Mapping, slot: str, answer: Any) -> dict: ...
    def dry_run(self, root: str, plan: Mapping) -> dict: ...
    def execute(self, root: str, plan: Mapping, approvals: list[int],
                resume: bool) -> dict: ...
    def revert(self, root: str, plan_id: str) -> dict: ...


class LocalComponents(ComponentCore):
    """In-process transport: the default single-binary wiring."""


class HttpComponents:
    """JSON-over-HTTP transport to separately launched component services."""

    def __init__(self, urls: Mapping[str, str], client: httpx.Client | None = None):
        self.urls = dict(urls)
        self.client = client or httpx.Client(timeout=60.0)

    def _call(self, component: str, method: str, **kwargs) -> Any:
        url = f"{self.urls[component].rstrip('/')}/rpc/{method}"
        resp = self.client.post(url, json=kwargs)
        if resp.status_code >= 400:
            detail = resp.json()
            raise _error_by_name(detail.get("error", "PerosError"),
                                 detail.get("detail", ""))
        return resp.json()["result"]

    def interpret(self, request: str, ctx: Mapping, backend: Mapping) -> dict:
        return self._call("interpreter", "interpret", request=request,
                          ctx=ctx, backend=backend)

    def compile(self, frame: Mapping, origin: str = "") -> dict:
        return self._call("director", "compile", frame=frame, origin=origin)

    def resolve(self, plan: Mapping, slot: str, answer: Any) -> dict:
        return self._call("director", "resolve", plan=plan, slot=slot,
                          answer=answer)

    def recommend(self, events, min_creations: int, window_ms: int):
        return self._call("director", "recommend", events=events,
                          min_creations=min_creations, window_ms=window_ms)

    def dry_run(self, root: str, plan: Mapping) -> dict:
        return self._call("actuator", "dry_run", root=root, plan=plan)

    def execute(self, root: str, plan: Mapping, approvals: list[int],
                resume: bool) -> dict:
        return self._call("actuator", "execute", root=root, plan=plan,
                          approvals=approvals, resume=resume)

    def revert(self, root: str, plan_id: str) -> dict:
        return self._call("actuator", "revert", root=root, plan_id=plan_id)

    def snapshot(self, root: str) -> dict:
        return self._call("actuator", "snapshot", root=root)

    def remotes(self, root: str) -> dict:
        return self._call("actuator", "remotes", root=root)

    def run_eval(self, corpus_path: str | None) -> dict:
        return self._call("evaluator", "run_eval", corpus_path=corpus_path)

    def reload_stack(self, version_dir: str) -> dict:
        out = None
        for component in ("interpreter", "director", "evaluator"):
            if component in self.urls:
                out = self._call(component, "reload_stack",
                                 version_dir=version_dir)
        return out or {}


def create_component_app(component: str, config: PerosConfig | None = None,
                         core: ComponentCore | None = None) -> FastAPI:
    """One FastAPI app per component, exposing POST /rpc/{method}."""
    if component not in COMPONENT_METHODS:
        raise ValueError(f"unknown component {component!r}")
    core = core or ComponentCore(config or PerosConfig())
    app = FastAPI(title=f"peros {component}")
    allowed = COMPONENT_METHODS[component]

    @app.post("/rpc/{method}")
    async def rpc(method: str, body: dict):
        if method not in allowed:
            return JSONResponse(status_code=404,
                                content={"error": "UnknownMethod",
                                         "detail": method})
        try:
            result = getattr(core, method)(**body)
        except PerosError as exc:
            return JSONResponse(status_code=422,
                                content={"error": type(exc).__name__,
                                         "detail": str(exc)})
        return {"result": result}

    @app.get("/healthz")
    async def healthz():
        return {"component": component, "ok": True}

    return app
