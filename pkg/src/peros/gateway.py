"""HTTP gateway: sessions, messages, checkpoint decisions, event streaming.

Every handler is a pure function of (persisted state, request) up to
timestamps and seq allocation: session state, transcripts, plans, journals
and event logs all live on disk, so killing and restarting the process
between any two requests loses nothing.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import AsyncIterator, Mapping

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .actuator import (
    ExecutionJournal,
    Workspace,
    journal_diff,
    workspace_remotes,
)
from .config import PerosConfig
from .director import RecommendRules, Suggestion, recommend
from .errors import (
    BackendUnavailable,
    NoIntent,
    NoPendingCheckpoint,
    PerosError,
    RevertConflict,
    SessionNotFound,
    StepFailure,
    UnmappableTask,
    WorkspaceUnavailable,
)
from .evaluation import EvalManager, EvalReport, RetrainPolicy
from .interpreter import (
    Ambiguity,
    DialogueContext,
    Turn,
    WorkspaceInfo,
    parse_clarification_answer,
)
from .model import OperationPlan
from .pipeline import LanguageStack, render_reply, steps_of
from .services import Components, LocalComponents, ctx_to_doc
from .watchdog import TriggerSpec, Watchdog

APPROVE_WORDS = {"y", "yes", "approve", "ok", "confirm"}
REJECT_WORDS = {"n", "no", "reject", "revert", "cancel"}


class _ResultView:
    """Attribute view over an execution-result document."""

    def __init__(self, doc: Mapping):
        self.status = doc["status"]
        self.pending_index = doc.get("pending_index")
        self.pending_slot = doc.get("pending_slot")
        self.failed_step = doc.get("failed_step")
        self.failure = doc.get("failure")
        self.executed = doc.get("executed", [])


# ---------------------------------------------------------------------------
# Persistent session state
# ---------------------------------------------------------------------------

@dataclass
class PendingPlan:
    plan: OperationPlan
    awaiting: str               # "approval" | "clarification"
    pending_index: int
    approvals: set[int] = field(default_factory=set)
    has_journal: bool = False

    def to_json(self) -> dict:
        return {
            "plan": self.plan.to_json(),
            "awaiting": self.awaiting,
            "pending_index": self.pending_index,
            "approvals": sorted(self.approvals),
            "has_journal": self.has_journal,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "PendingPlan":
        return cls(
            plan=OperationPlan.from_json(doc["plan"]),
            awaiting=doc["awaiting"],
            pending_index=int(doc["pending_index"]),
            approvals=set(doc.get("approvals", ())),
            has_journal=bool(doc.get("has_journal", False)),
        )


@dataclass
class Session:
    id: str
    workspace_root: str
    backend: str = "rule"
    username: str = "local"
    pending: PendingPlan | None = None
    recommended_through: int = 0  # last event seq folded into a suggestion

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "workspace_root": self.workspace_root,
            "backend": self.backend,
            "username": self.username,
            "pending": self.pending.to_json() if self.pending else None,
            "recommended_through": self.recommended_through,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Session":
        return cls(
            id=doc["id"],
            workspace_root=doc["workspace_root"],
            backend=doc.get("backend", "rule"),
            username=doc.get("username", "local"),
            pending=(PendingPlan.from_json(doc["pending"])
                     if doc.get("pending") else None),
            recommended_through=int(doc.get("recommended_through", 0)),
        )


class SessionStore:
    """Disk-backed sessions: session.json + transcript.ndjson per session."""

    def __init__(self, state_dir: Path):
        self.root = state_dir / "sessions"
        self.root.mkdir(parents=True, exist_ok=True)

    def _dir(self, sid: str) -> Path:
        return self.root / sid

    def save(self, session: Session) -> None:
        d = self._dir(session.id)
        d.mkdir(parents=True, exist_ok=True)
        (d / "session.json").write_text(
            json.dumps(session.to_json(), indent=2) + "\n")

    def load(self, sid: str) -> Session:
        path = self._dir(sid) / "session.json"
        if not path.exists():
            raise SessionNotFound(sid)
        return Session.from_json(json.loads(path.read_text()))

    def append_turn(self, sid: str, turn: Turn) -> None:
        with open(self._dir(sid) / "transcript.ndjson", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(turn.to_json()) + "\n")

    def transcript(self, sid: str) -> list[Turn]:
        path = self._dir(sid) / "transcript.ndjson"
        if not path.exists():
            return []
        return [Turn.from_json(json.loads(l))
                for l in path.read_text().splitlines() if l.strip()]

    def open_clarification(self, session: Session) -> Ambiguity | None:
        p = session.pending
        if p and p.awaiting == "clarification":
            for c in p.plan.clarifications:
                if c.step_index == p.pending_index:
                    return Ambiguity(slot=c.slot, question=c.question)
            if p.plan.clarifications:
                c = p.plan.clarifications[0]
                return Ambiguity(slot=c.slot, question=c.question)
        return None


# ---------------------------------------------------------------------------
# Gateway runtime
# ---------------------------------------------------------------------------

@dataclass
class Reply:
    text: str
    diff: dict | None = None
    pending_checkpoint: dict | None = None
    clarification: dict | None = None
    plan_id: str | None = None
    status: str = "ok"

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "diff": self.diff,
            "pending_checkpoint": self.pending_checkpoint,
            "clarification": self.clarification,
            "plan_id": self.plan_id,
            "status": self.status,
        }


class GatewayRuntime:
    def __init__(self, config: PerosConfig,
                 components: Components | None = None):
        self.config = config
        config.ensure_dirs()
        from .model import ApiRegistry
        self.registry = ApiRegistry.load(config.registry_file())
        self.stack = LanguageStack(config.grammar_dir())
        self.components = components or LocalComponents(config)
        self.store = SessionStore(config.state_dir)
        self._session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self.manager = EvalManager(
            policy=RetrainPolicy(
                window=config.retrain_window,
                min_accuracy=config.retrain_min_accuracy,
                new_api_trigger=config.retrain_new_api_trigger,
                cooldown=config.retrain_cooldown,
            ),
            reports_dir=config.reports_dir,
        )
        self._watchdogs: dict[str, Watchdog] = {}
        self._load_reports()

    def _load_reports(self) -> None:
        if not self.config.reports_dir.exists():
            return
        for path in sorted(self.config.reports_dir.glob("eval-*.json")):
            self.manager.history.append(
                EvalReport.from_json(json.loads(path.read_text())))

    # -- workspaces -------------------------------------------------------------

    def workspace_for(self, session: Session) -> Workspace:
        ws = Workspace.attach(session.workspace_root)
        ws.configure_git()
        return ws

    def watchdog_for(self, ws: Workspace) -> Watchdog:
        key = str(ws.root)
        dog = self._watchdogs.get(key)
        if dog is None:
            dog = Watchdog(ws, poll_ms=self.config.watch_poll_ms,
                           debounce_ms=self.config.watch_debounce_ms)
            for kind in ("create", "modify", "delete", "rename"):
                dog.register_trigger(
                    TriggerSpec(id=f"default-{kind}", kind=kind, glob="*"))
            dog.scan()  # baseline
            self._watchdogs[key] = dog
        return dog

    def context_for(self, session: Session, ws: Workspace) -> DialogueContext:
        ctx = DialogueContext(session_id=session.id)
        ctx.turns = self.store.transcript(session.id)
        ctx.workspace_info = WorkspaceInfo(remotes=workspace_remotes(ws))
        open_clar = self.store.open_clarification(session)
        if open_clar:
            ctx.open_clarifications = [open_clar]
        return ctx

    # -- session lifecycle ---------------------------------------------------------

    def create_session(self, workspace: str, backend: str = "rule",
                       username: str = "local") -> Session:
        parent = self.config.workspace_parent.resolve()
        candidate = Path(workspace)
        if not candidate.is_absolute():
            candidate = parent / candidate
        candidate = candidate.resolve()
        if parent not in candidate.parents and candidate != parent:
            # pre-existing absolute workspaces are allowed when real
            if not candidate.is_dir():
                raise WorkspaceUnavailable(
                    f"workspace outside sandbox parent: {workspace}")
        try:
            ws = Workspace.attach(candidate, create=True)
        except OSError as exc:
            raise WorkspaceUnavailable(str(exc))
        ws.configure_git()
        session = Session(id=f"s-{uuid.uuid4().hex[:12]}",
                          workspace_root=str(ws.root), backend=backend,
                          username=username)
        self.store.save(session)
        self.watchdog_for(ws)
        return session

    # -- message handling -------------------------------------------------------------

    def _session_lock(self, sid: str):
        with self._locks_guard:
            return self._session_locks.setdefault(sid, threading.Lock())

    def post_message(self, sid: str, text: str) -> Reply:
        with self._session_lock(sid):  # turns are strictly serialized
            session = self.store.load(sid)
            ws = self.workspace_for(session)
            self.store.append_turn(sid, Turn(speaker="user", text=text))
            try:
                reply = self._handle(session, ws, text)
            except NoIntent:
                reply = Reply(
                    text="I could not map that to any operation I know. "
                         "Try one action per clause, e.g. 'list files'.",
                    status="no-intent")
            except UnmappableTask as exc:
                reply = Reply(
                    text=f"I understood the request but cannot plan it: {exc}",
                    status="unmappable")
            except StepFailure as exc:
                session.pending = None
                reply = Reply(
                    text=f"That plan cannot run here: {exc}", status="failed")
            self.store.append_turn(
                sid, Turn(speaker="system", text=reply.text,
                          plan_id=reply.plan_id))
            self.store.save(session)
            self.watchdog_for(ws).scan()
            return reply

    def _handle(self, session: Session, ws: Workspace, text: str) -> Reply:
        stripped = text.strip().lower().rstrip(".!")
        if session.pending:
            if stripped in APPROVE_WORDS:
                return self._approve(session, ws)
            if stripped in REJECT_WORDS:
                return self._reject(session, ws)
            if session.pending.awaiting == "clarification":
                return self._answer_clarification(session, ws, text)
            return Reply(
                text="A plan is awaiting your approval; reply 'y' to continue "
                     "or 'n' to revert.",
                pending_checkpoint={"plan_id": session.pending.plan.id,
                                    "index": session.pending.pending_index},
                plan_id=session.pending.plan.id,
                status="awaiting-approval")
        return self._new_request(session, ws, text)

    def _new_request(self, session: Session, ws: Workspace, text: str) -> Reply:
        ctx = self.context_for(session, ws)
        if session.backend == "rule":
            backend_doc = {"kind": "rule"}
        else:
            env = _env()
            backend_doc = {"kind": "llm-endpoint",
                           "endpoint_url": env.get("PEROS_LLM_URL"),
                           "model": env.get("PEROS_LLM_MODEL"),
                           "api_key": env.get("PEROS_LLM_KEY")}
        frame_doc = self.components.interpret(text, ctx_to_doc(ctx), backend_doc)
        plan = OperationPlan.from_json(
            self.components.compile(frame_doc, origin=session.id))
        self._persist_plan(session, plan)

        flags = [s.index for s in plan.steps if s.checkpoint]
        unbound = [s.index for s in plan.steps if s.unbound_slots()]
        first_flag = flags[0] if flags else None
        first_unbound = unbound[0] if unbound else None

        if first_unbound is not None and (first_flag is None
                                          or first_unbound < first_flag):
            clar = next(c for c in plan.clarifications
                        if c.step_index == first_unbound)
            session.pending = PendingPlan(plan=plan, awaiting="clarification",
                                          pending_index=first_unbound)
            return Reply(text=clar.question, plan_id=plan.id,
                         clarification={"slot": clar.slot,
                                        "question": clar.question},
                         status="clarification")

        if first_flag is None:
            # nothing to approve: run to completion right away
            session.pending = PendingPlan(plan=plan, awaiting="approval",
                                          pending_index=0)
            return self._run(session, ws)

        preview = self.components.dry_run(str(ws.root), plan.to_json())
        session.pending = PendingPlan(plan=plan, awaiting="approval",
                                      pending_index=first_flag)
        gate_api = plan.step(first_flag).api
        preview_text = "".join(f["text"] for f in preview["files"])
        return Reply(
            text=(f"Planned {len(plan.steps)} step(s). The following is the "
                  f"diff after the changes:\n{preview_text}\n"
                  f"Approve step {first_flag} ({gate_api})? Is the result "
                  f"correct? Otherwise, I can revert."),
            diff=preview,
            pending_checkpoint={"plan_id": plan.id, "index": first_flag},
            plan_id=plan.id,
            status="awaiting-approval",
        )

    # -- execution driving ---------------------------------------------------------

    def _journal(self, session: Session, ws: Workspace) -> ExecutionJournal | None:
        if not session.pending or not session.pending.has_journal:
            return None
        path = ws.journal_dir / f"{session.pending.plan.id}.ndjson"
        return ExecutionJournal.load(path) if path.exists() else None

    def _run(self, session: Session, ws: Workspace) -> Reply:
        pending = session.pending
        if pending is None:
            raise NoPendingCheckpoint("no pending plan")
        plan = pending.plan
        approvals = pending.approvals
        out = self.components.execute(str(ws.root), plan.to_json(),
                                      sorted(approvals),
                                      resume=pending.has_journal)
        result = _ResultView(out["result"])
        pending.has_journal = True
        journal = self._journal(session, ws)
        ws.refresh_manifest()

        if result.status == "completed":
            session.pending = None
            read_only = all(
                self.registry.get(s.api).effect == "read-only"
                for s in plan.steps if s.api in self.registry
            )
            details = [e.detail for e in journal.entries
                       if e.outcome == "ok" and e.detail]
            push_notes = [e.detail for e in journal.entries
                          if e.api == "git.push" and e.outcome == "ok"]
            if push_notes:
                text = "Done. I've " + "; ".join(push_notes) + "."
            elif read_only and details:
                text = "\n".join(details)
            else:
                text = "Done. " + render_reply(steps_of(plan))
            return Reply(text=text, plan_id=plan.id, status="completed")

        if result.status == "checkpoint-pending":
            idx = result.pending_index
            session.pending = PendingPlan(
                plan=plan, awaiting="approval", pending_index=idx,
                approvals=approvals, has_journal=True)
            diff = journal_diff(journal, ws)
            api = plan.step(idx).api
            return Reply(
                text=(f"The following is the diff after the changes:\n"
                      f"{diff.text}\nApprove step {idx} ({api})? Is the "
                      f"result correct? Otherwise, I can revert."),
                diff=diff.to_json(),
                pending_checkpoint={"plan_id": plan.id, "index": idx},
                plan_id=plan.id,
                status="awaiting-approval")

        if result.status == "clarification-pending":
            idx = result.pending_index
            clar = next((c for c in plan.clarifications
                         if c.step_index == idx), None)
            question = clar.question if clar else f"What value should {result.pending_slot} take?"
            session.pending = PendingPlan(
                plan=plan, awaiting="clarification", pending_index=idx,
                approvals=approvals, has_journal=True)
            return Reply(text=question, plan_id=plan.id,
                         clarification={"slot": clar.slot if clar else result.pending_slot,
                                        "question": question},
                         status="clarification")

        # failed: roll back so a broken plan never leaves debris
        session.pending = None
        try:
            self.components.revert(str(ws.root), plan.id)
            rolled = "the workspace was rolled back"
        except (RevertConflict, PerosError):
            rolled = "rollback conflicted; see the journal"
        return Reply(text=(f"Step {result.failed_step} failed: "
                           f"{result.failure}; {rolled}."),
                     plan_id=plan.id, status="failed")

    def _approve(self, session: Session, ws: Workspace) -> Reply:
        pending = session.pending
        if pending is None or pending.awaiting != "approval":
            raise NoPendingCheckpoint("no checkpoint awaiting approval")
        pending.approvals.add(pending.pending_index)
        return self._run(session, ws)

    def _reject(self, session: Session, ws: Workspace) -> Reply:
        pending = session.pending
        if pending is None:
            raise NoPendingCheckpoint("no pending plan")
        had_journal = pending.has_journal and self._journal(session, ws) is not None
        session.pending = None
        if had_journal:
            self.components.revert(str(ws.root), pending.plan.id)
            ws.refresh_manifest()
            return Reply(text="Reverted all changes from the pending plan.",
                         plan_id=pending.plan.id, status="reverted")
        return Reply(text="Discarded the pending plan; nothing had executed.",
                     plan_id=pending.plan.id, status="discarded")

    def _answer_clarification(self, session: Session, ws: Workspace,
                              text: str) -> Reply:
        pending = session.pending
        ctx = self.context_for(session, ws)
        open_clar = self.store.open_clarification(session)
        bindings = parse_clarification_answer(text, open_clar, ctx) \
            if open_clar else None
        if not bindings:
            return Reply(text=f"I still need an answer: {open_clar.question}",
                         clarification={"slot": open_clar.slot,
                                        "question": open_clar.question},
                         plan_id=pending.plan.id,
                         status="clarification")
        plan = OperationPlan.from_json(
            self.components.resolve(pending.plan.to_json(), open_clar.slot,
                                    bindings))
        pending.plan = plan
        self._persist_plan(session, plan)
        step = plan.step(pending.pending_index)
        if step.checkpoint and not step.unbound_slots():
            # answering the question that gates this step authorizes it
            pending.approvals.add(step.index)
        pending.awaiting = "approval"
        return self._run(session, ws)

    # -- checkpoint endpoint ------------------------------------------------------

    def decide_checkpoint(self, sid: str, plan_id: str, index: int,
                          decision: str) -> Reply:
        with self._session_lock(sid):
            session = self.store.load(sid)
            ws = self.workspace_for(session)
            pending = session.pending
            if (pending is None or pending.plan.id != plan_id
                    or pending.awaiting != "approval"
                    or pending.pending_index != index):
                raise NoPendingCheckpoint(
                    f"no pending checkpoint {index} on plan {plan_id}")
            if decision == "approve":
                reply = self._approve(session, ws)
            elif decision == "reject":
                reply = self._reject(session, ws)
            else:
                raise ValueError(
                    f"decision must be approve or reject: {decision}")
            self.store.append_turn(
                sid, Turn(speaker="system", text=reply.text,
                          plan_id=reply.plan_id))
            self.store.save(session)
            self.watchdog_for(ws).scan()
            return reply

    # -- events + recommendations ------------------------------------------------

    def events_since(self, sid: str, since: int) -> tuple[list, Suggestion | None]:
        with self._session_lock(sid):
            session = self.store.load(sid)
            ws = self.workspace_for(session)
            dog = self.watchdog_for(ws)
            dog.settle()
            events = dog.poll_events(since=since)
            rules = RecommendRules(
                min_creations=self.config.recommend_min_creations,
                window_ms=self.config.recommend_window_ms)
            fresh = dog.poll_events(since=session.recommended_through)
            suggestion = recommend(fresh, rules)
            if suggestion:
                session.recommended_through = suggestion.last_seq
                self.store.save(session)
            return events, suggestion

    # -- misc -----------------------------------------------------------------------

    def _persist_plan(self, session: Session, plan: OperationPlan) -> None:
        d = self.store._dir(session.id)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"plan-{plan.id}.json").write_text(
            json.dumps(plan.to_json(), indent=2) + "\n")

    def run_eval(self, corpus_path: str | None) -> dict:
        report = EvalReport.from_json(self.components.run_eval(corpus_path))
        self.manager.record(report)
        decision = self.manager.decide(self.registry)
        return {"report": report.to_json(),
                "retrain": {"retrain": decision.retrain,
                            "reason": decision.reason}}

    def latest_report(self) -> dict | None:
        latest = self.manager.latest()
        return latest.to_json() if latest else None


def _env() -> dict:
    import os
    return dict(os.environ)


# ---------------------------------------------------------------------------
# FastAPI app
# ---------------------------------------------------------------------------

class CreateSessionBody(BaseModel):
    workspace: str
    backend: str = "rule"
    username: str = "local"


class MessageBody(BaseModel):
    text: str


class CheckpointBody(BaseModel):
    decision: str  # approve | reject


class EvalBody(BaseModel):
    corpus: str | None = None


def create_app(config: PerosConfig | None = None,
               runtime: GatewayRuntime | None = None) -> FastAPI:
    rt = runtime or GatewayRuntime(config or PerosConfig())
    app = FastAPI(title="peros gateway")
    app.state.runtime = rt

    @app.exception_handler(PerosError)
    async def _peros_error(request, exc: PerosError):
        status = 500
        if isinstance(exc, SessionNotFound):
            status = 404
        elif isinstance(exc, (NoPendingCheckpoint, RevertConflict)):
            status = 409
        elif isinstance(exc, (WorkspaceUnavailable,)):
            status = 400
        elif isinstance(exc, BackendUnavailable):
            status = 503
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__,
                                     "detail": str(exc)})

    @app.post("/v1/sessions")
    def create_session(body: CreateSessionBody):
        session = rt.create_session(body.workspace, body.backend, body.username)
        return {"session_id": session.id, "workspace": session.workspace_root}

    @app.get("/v1/sessions/{sid}")
    def get_session(sid: str):
        session = rt.store.load(sid)
        return {
            "session": session.to_json(),
            "transcript": [t.to_json() for t in rt.store.transcript(sid)],
        }

    @app.post("/v1/sessions/{sid}/messages")
    def post_message(sid: str, body: MessageBody):
        return rt.post_message(sid, body.text).to_json()

    @app.post("/v1/sessions/{sid}/checkpoints/{plan_id}/{index}")
    def decide_checkpoint(sid: str, plan_id: str, index: int,
                          body: CheckpointBody):
        return rt.decide_checkpoint(sid, plan_id, index, body.decision).to_json()

    @app.get("/v1/sessions/{sid}/events")
    async def stream_events(request: Request, sid: str, since: int = 0,
                            max_items: int = 0, idle_timeout_s: float = 2.0):
        rt.store.load(sid)  # 404 early
        last_id = request.headers.get("last-event-id")
        if last_id and last_id.isdigit():
            since = max(since, int(last_id))

        async def gen() -> AsyncIterator[str]:
            import asyncio
            cursor = since
            sent = 0
            idle = 0.0
            while True:
                events, suggestion = rt.events_since(sid, cursor)
                for ev in events:
                    cursor = max(cursor, ev.seq)
                    sent += 1
                    yield (f"id: {ev.seq}\nevent: kernel-event\n"
                           f"data: {json.dumps(ev.to_json())}\n\n")
                if suggestion:
                    sent += 1
                    yield ("event: recommendation\n"
                           f"data: {json.dumps(_suggestion_json(suggestion))}\n\n")
                if events or suggestion:
                    idle = 0.0
                else:
                    idle += 0.05
                if max_items and sent >= max_items:
                    return
                if idle >= idle_timeout_s:
                    return
                await asyncio.sleep(0.05)

        return StreamingResponse(gen(), media_type="text/event-stream")

    @app.get("/v1/registry")
    def get_registry():
        return rt.registry.to_json()

    @app.post("/v1/eval/run")
    def run_eval(body: EvalBody):
        return rt.run_eval(body.corpus)

    @app.get("/v1/reports/latest")
    def latest_report():
        report = rt.latest_report()
        if report is None:
            raise HTTPException(status_code=404, detail="no reports yet")
        return report

    return app


def _suggestion_json(s: Suggestion) -> dict:
    return {
        "message": s.message,
        "accept_message": s.accept_message,
        "directory": s.directory,
        "count": s.count,
        "last_seq": s.last_seq,
    }
