"""Core domain types: operation registry, intent frames, plans, validation.

The registry is the whitelisted API surface everything else compiles against.
All types are immutable values; registry updates return a new registry with a
strictly larger version (single-writer / multi-reader contract).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import DuplicateName, MissingArg, TypeMismatch, UnknownApi

PARAM_KINDS = ("string", "path", "integer", "size-bytes", "flag", "enum")
EFFECTS = ("read-only", "mutating", "network")

_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*(\.[a-z][a-z0-9_]*)+$")

_SIZE_RE = re.compile(
    r"^\s*(?P<num>\d+(?:\.\d+)?)\s*(?P<unit>[kmgtp]?i?b?)\s*$", re.IGNORECASE
)

_DECIMAL_UNITS = {"b": 1, "kb": 10**3, "mb": 10**6, "gb": 10**9, "tb": 10**12, "pb": 10**15}
_BINARY_UNITS = {"kib": 2**10, "mib": 2**20, "gib": 2**30, "tib": 2**40, "pib": 2**50}


def parse_size(text: str) -> int:
    """Parse a human size string into bytes.

    Decimal suffixes are powers of ten ("10 MB" -> 10_000_000), binary
    suffixes powers of two ("10 MiB" -> 10_485_760). A bare numeral is bytes.
    """
    m = _SIZE_RE.match(text)
    if not m:
        raise TypeMismatch(f"not a size: {text!r}")
    unit = m.group("unit").lower()
    if unit in ("", "b"):
        factor = 1
    elif unit in _DECIMAL_UNITS:
        factor = _DECIMAL_UNITS[unit]
    elif unit in _BINARY_UNITS:
        factor = _BINARY_UNITS[unit]
    else:
        raise TypeMismatch(f"unknown size unit: {unit!r}")
    try:
        value = Decimal(m.group("num")) * factor
    except InvalidOperation:  # pragma: no cover - regex already guards
        raise TypeMismatch(f"not a size: {text!r}")
    if value != value.to_integral_value():
        raise TypeMismatch(f"size is not a whole number of bytes: {text!r}")
    return int(value)


_TRUE = {"true", "1", "yes", "y", "on"}
_FALSE = {"false", "0", "no", "n", "off"}


def parse_value(kind: str, raw: str, enum_values: tuple[str, ...] = ()) -> Any:
    """Parse one raw string into the typed value for a parameter kind."""
    if kind in ("string", "path"):
        return raw
    if kind == "integer":
        try:
            return int(raw, 10)
        except ValueError:
            raise TypeMismatch(f"not an integer: {raw!r}")
    if kind == "size-bytes":
        return parse_size(raw)
    if kind == "flag":
        low = raw.strip().lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise TypeMismatch(f"not a flag value: {raw!r}")
    if kind == "enum":
        if raw not in enum_values:
            raise TypeMismatch(f"{raw!r} not in {sorted(enum_values)}")
        return raw
    raise TypeMismatch(f"unknown parameter kind: {kind!r}")


def check_typed(kind: str, value: Any, enum_values: tuple[str, ...] = ()) -> bool:
    """True iff an already-typed value is well-typed for the kind."""
    if kind in ("string", "path"):
        return isinstance(value, str)
    if kind == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "size-bytes":
        return isinstance(value, int) and not isinstance(value, bool) and value >= 0
    if kind == "flag":
        return isinstance(value, bool)
    if kind == "enum":
        return isinstance(value, str) and value in enum_values
    return False


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    required: bool = False
    values: tuple[str, ...] = ()
    variadic: bool = False

    def check(self) -> None:
        if self.kind not in PARAM_KINDS:
            raise ValueError(f"bad param kind {self.kind!r} for {self.name!r}")
        if self.kind == "enum" and not self.values:
            raise ValueError(f"enum param {self.name!r} needs at least one value")
        if self.variadic and self.kind != "path":
            raise ValueError(f"only path params may be variadic ({self.name!r})")


@dataclass(frozen=True)
class ApiSpec:
    """Schema of one whitelisted operation."""

    name: str
    params: tuple[ParamSpec, ...]
    effect: str
    description: str = ""

    def check(self) -> None:
        if not _NAME_RE.match(self.name):
            raise ValueError(f"bad api name: {self.name!r}")
        if self.effect not in EFFECTS:
            raise ValueError(f"bad effect {self.effect!r} for {self.name!r}")
        seen = set()
        variadic = 0
        for p in self.params:
            p.check()
            if p.name in seen:
                raise ValueError(f"duplicate param {p.name!r} in {self.name!r}")
            seen.add(p.name)
            variadic += p.variadic
        if variadic > 1:
            raise ValueError(f"{self.name!r} has more than one variadic path param")

    def param(self, name: str) -> ParamSpec | None:
        for p in self.params:
            if p.name == name:
                return p
        return None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "effect": self.effect,
            "description": self.description,
            "params": [
                {
                    "name": p.name,
                    "kind": p.kind,
                    "required": p.required,
                    **({"values": list(p.values)} if p.kind == "enum" else {}),
                    **({"variadic": True} if p.variadic else {}),
                }
                for p in self.params
            ],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ApiSpec":
        spec = cls(
            name=doc["name"],
            effect=doc["effect"],
            description=doc.get("description", ""),
            params=tuple(
                ParamSpec(
                    name=p["name"],
                    kind=p["kind"],
                    required=bool(p.get("required", False)),
                    values=tuple(p.get("values", ())),
                    variadic=bool(p.get("variadic", False)),
                )
                for p in doc.get("params", ())
            ),
        )
        spec.check()
        return spec


@dataclass(frozen=True)
class ApiRegistry:
    """Versioned map of operation name -> ApiSpec.

    Every mutation produces a new registry with version + 1; versions are
    therefore strictly monotone over any update sequence.
    """

    version: int = 0
    apis: Mapping[str, ApiSpec] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.apis

    def get(self, name: str) -> ApiSpec:
        try:
            return self.apis[name]
        except KeyError:
            raise UnknownApi(f"not a registered operation: {name!r}")

    def with_api(self, spec: ApiSpec) -> "ApiRegistry":
        spec.check()
        if spec.name in self.apis:
            raise DuplicateName(f"operation already registered: {spec.name!r}")
        apis = dict(self.apis)
        apis[spec.name] = spec
        return ApiRegistry(version=self.version + 1, apis=apis)

    def names(self) -> list[str]:
        return sorted(self.apis)

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "apis": [self.apis[n].to_json() for n in sorted(self.apis)],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ApiRegistry":
        apis = {}
        for entry in doc.get("apis", ()):
            spec = ApiSpec.from_json(entry)
            if spec.name in apis:
                raise DuplicateName(spec.name)
            apis[spec.name] = spec
        return cls(version=int(doc.get("version", len(apis))), apis=apis)

    @classmethod
    def load(cls, path: str | Path) -> "ApiRegistry":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def register_api(registry: ApiRegistry, spec: ApiSpec) -> ApiRegistry:
    """Functional registry update; raises DuplicateName on collision."""
    return registry.with_api(spec)


# ---------------------------------------------------------------------------
# Intent frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Task:
    """One extracted task: a verb plus raw (string) parameters.

    ``asks`` lists slots the grammar knows are required but could not fill
    from the request text; they surface as frame ambiguities.
    """

    verb: str
    object: str | None = None
    params: Mapping[str, str] = field(default_factory=dict)
    span: tuple[int, int] = (0, 0)
    asks: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "verb": self.verb,
            "object": self.object,
            "params": dict(self.params),
            "span": list(self.span),
            "asks": list(self.asks),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Task":
        return cls(
            verb=doc["verb"],
            object=doc.get("object"),
            params=dict(doc.get("params", {})),
            span=tuple(doc.get("span", (0, 0))),  # type: ignore[arg-type]
            asks=tuple(doc.get("asks", ())),
        )


@dataclass(frozen=True)
class Ambiguity:
    slot: str
    question: str

    def to_json(self) -> dict:
        return {"slot": self.slot, "question": self.question}


@dataclass(frozen=True)
class IntentFrame:
    source: str
    tasks: tuple[Task, ...] = ()
    ambiguities: tuple[Ambiguity, ...] = ()

    def check(self) -> None:
        n = len(self.source)
        last = 0
        for t in self.tasks:
            lo, hi = t.span
            if not (0 <= lo <= hi <= n):
                raise ValueError(f"task span {t.span} outside source bounds")
            if lo < last:
                raise ValueError("tasks out of source order")
            last = lo
        asked = {slot for t in self.tasks for slot in t.asks}
        for a in self.ambiguities:
            if a.slot not in asked:
                raise ValueError(f"ambiguity {a.slot!r} not referenced by any task")

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "tasks": [t.to_json() for t in self.tasks],
            "ambiguities": [a.to_json() for a in self.ambiguities],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "IntentFrame":
        frame = cls(
            source=doc["source"],
            tasks=tuple(Task.from_json(t) for t in doc.get("tasks", ())),
            ambiguities=tuple(
                Ambiguity(a["slot"], a.get("question", "")) for a in doc.get("ambiguities", ())
            ),
        )
        frame.check()
        return frame


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnboundSlot:
    """Placeholder argument for a value still owed by a clarification."""

    slot: str


@dataclass(frozen=True)
class PlanStep:
    index: int  # 1-based
    api: str
    args: Mapping[str, Any] = field(default_factory=dict)
    depends_on: tuple[int, ...] = ()
    checkpoint: bool = False

    def unbound_slots(self) -> list[str]:
        return [v.slot for v in self.args.values() if isinstance(v, UnboundSlot)]

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "api": self.api,
            "args": {k: _arg_to_json(v) for k, v in self.args.items()},
            "depends_on": list(self.depends_on),
            "checkpoint": self.checkpoint,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "PlanStep":
        return cls(
            index=int(doc["index"]),
            api=doc["api"],
            args={k: _arg_from_json(v) for k, v in doc.get("args", {}).items()},
            depends_on=tuple(doc.get("depends_on", ())),
            checkpoint=bool(doc.get("checkpoint", False)),
        )


def _arg_to_json(v: Any) -> Any:
    if isinstance(v, UnboundSlot):
        return {"__unbound__": v.slot}
    return v


def _arg_from_json(v: Any) -> Any:
    if isinstance(v, Mapping) and "__unbound__" in v:
        return UnboundSlot(v["__unbound__"])
    return v


@dataclass(frozen=True)
class Clarification:
    slot: str
    question: str
    step_index: int
    primary_arg: str = ""  # the argument a scalar answer binds

    def to_json(self) -> dict:
        return {
            "slot": self.slot,
            "question": self.question,
            "step_index": self.step_index,
            "primary_arg": self.primary_arg,
        }


@dataclass(frozen=True)
class OperationPlan:
    id: str
    steps: tuple[PlanStep, ...] = ()
    clarifications: tuple[Clarification, ...] = ()
    origin: str = ""
    registry_version: int = 0

    @property
    def executable(self) -> bool:
        return not self.clarifications

    def step(self, index: int) -> PlanStep:
        for s in self.steps:
            if s.index == index:
                return s
        raise KeyError(index)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "origin": self.origin,
            "registry_version": self.registry_version,
            "steps": [s.to_json() for s in self.steps],
            "clarifications": [c.to_json() for c in self.clarifications],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "OperationPlan":
        return cls(
            id=doc["id"],
            origin=doc.get("origin", ""),
            registry_version=int(doc.get("registry_version", 0)),
            steps=tuple(PlanStep.from_json(s) for s in doc.get("steps", ())),
            clarifications=tuple(
                Clarification(c["slot"], c.get("question", ""),
                              int(c["step_index"]), c.get("primary_arg", ""))
                for c in doc.get("clarifications", ())
            ),
        )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

VIOLATION_CODES = ("unknown-api", "missing-arg", "type-mismatch", "bad-dependency")


@dataclass(frozen=True)
class Violation:
    step_index: int
    code: str
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [
                {"step_index": v.step_index, "code": v.code, "detail": v.detail}
                for v in self.violations
            ],
        }


def validate_plan(plan: OperationPlan, registry: ApiRegistry) -> ValidationReport:
    """Check every step against the registry; violations are data, not errors.

    Deterministic and side-effect-free: violations are reported in step
    order, and within one step in a fixed code order.
    """
    violations: list[Violation] = []
    for step in plan.steps:
        for dep in step.depends_on:
            if not (1 <= dep < step.index):
                violations.append(Violation(step.index, "bad-dependency",
                                            f"depends_on {dep} is not an earlier step"))
        if step.api not in registry:
            violations.append(Violation(step.index, "unknown-api", step.api))
            continue
        spec = registry.get(step.api)
        for p in spec.params:
            if p.name not in step.args:
                if p.required:
                    violations.append(Violation(step.index, "missing-arg", p.name))
                continue
            value = step.args[p.name]
            if isinstance(value, UnboundSlot):
                violations.append(Violation(step.index, "missing-arg",
                                            f"{p.name} awaiting clarification {value.slot!r}"))
                continue
            if not check_typed(p.kind, value, p.values):
                violations.append(Violation(step.index, "type-mismatch",
                                            f"{p.name}={value!r} is not {p.kind}"))
        for name in step.args:
            if spec.param(name) is None:
                violations.append(Violation(step.index, "type-mismatch",
                                            f"unexpected argument {name!r}"))
    return ValidationReport(tuple(violations))


def normalize_args(spec: ApiSpec, raw: Mapping[str, str]) -> dict[str, Any]:
    """Bind raw string arguments to typed values per the spec.

    Raw strings never flow past this point; missing required params raise
    MissingArg, unparseable or unexpected values raise TypeMismatch.
    """
    out: dict[str, Any] = {}
    for p in spec.params:
        if p.name not in raw:
            if p.required:
                raise MissingArg(p.name)
            continue
        out[p.name] = parse_value(p.kind, raw[p.name], p.values)
    for name in raw:
        if spec.param(name) is None:
            raise TypeMismatch(f"unexpected argument {name!r} for {spec.name}")
    return out


def plan_with_steps(plan: OperationPlan, steps: Iterable[PlanStep]) -> OperationPlan:
    return replace(plan, steps=tuple(steps))
