"""The interpret -> compile pipeline as a reusable object.

LanguageStack bundles the grammar and verb table that version together;
reload swaps both atomically (a corrupt file leaves the old pair in place),
which is what "retraining" means for the rule backend.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .director import VerbTable, compile_plan
from .interpreter import (
    BackendConfig,
    DialogueContext,
    Grammar,
    grammar_asks,
    interpret,
)
from .model import ApiRegistry, IntentFrame, OperationPlan, UnboundSlot


class LanguageStack:
    def __init__(self, version_dir: str | Path):
        self.version_dir = Path(version_dir)
        self.grammar = Grammar.load(self.version_dir / "grammar.json")
        self.table = VerbTable.load(self.version_dir / "verbs.json")

    @property
    def version(self) -> str:
        return self.grammar.version

    def questions(self) -> dict[str, str]:
        return {slot: ask.question for slot, ask in grammar_asks(self.grammar).items()}

    def reload(self, version_dir: str | Path) -> None:
        """Swap in a new grammar + verb table; all-or-nothing."""
        new_dir = Path(version_dir)
        grammar = Grammar.load(new_dir / "grammar.json")   # may raise
        table = VerbTable.load(new_dir / "verbs.json")     # may raise
        self.version_dir, self.grammar, self.table = new_dir, grammar, table


def render_reply(steps: Sequence[tuple[str, Mapping[str, Any]]]) -> str:
    """Deterministic one-line account of what a plan will do; doubles as the
    reference text for the linguistic overlap metric."""
    if not steps:
        return "nothing to do"
    parts = []
    for api, args in steps:
        shown = " ".join(f"{k}={args[k]}" for k in sorted(args))
        parts.append(f"{api} {shown}".strip())
    return "run " + " ; ".join(parts)


def steps_of(plan: OperationPlan) -> list[tuple[str, dict]]:
    return [(s.api, dict(s.args)) for s in plan.steps]


@dataclass
class RulePipeline:
    """interpret -> compile with the deterministic rule backend."""

    stack: LanguageStack
    registry: ApiRegistry

    def frame(self, request: str, context: Sequence[str] = ()) -> IntentFrame:
        ctx = DialogueContext(session_id="eval")
        return interpret(request, ctx, BackendConfig(kind="rule"),
                         self.stack.grammar)

    def plan(self, request: str, context: Sequence[str] = ()) -> OperationPlan:
        return compile_plan(self.frame(request, context), self.registry,
                            self.stack.table, self.stack.questions())

    def plan_steps(self, request: str, context: Sequence[str] = ()) -> list[tuple[str, dict]]:
        return steps_of(self.plan(request, context))

    def render_reply(self, steps: Sequence[tuple[str, Mapping[str, Any]]]) -> str:
        return render_reply(steps)
