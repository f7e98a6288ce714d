import pytest
from hypothesis import given, strategies as st

from peros.errors import DuplicateName, MissingArg, TypeMismatch, UnknownApi
from peros.model import (
    ApiRegistry,
    ApiSpec,
    OperationPlan,
    ParamSpec,
    PlanStep,
    UnboundSlot,
    normalize_args,
    parse_size,
    register_api,
    validate_plan,
)


def spec(name="fs.move", params=(), effect="mutating"):
    return ApiSpec(name=name, params=tuple(params), effect=effect)


MOVE = spec("fs.move", [
    ParamSpec("src", "path", required=True),
    ParamSpec("dst", "path", required=True),
])
PUSH = spec("git.push", [
    ParamSpec("remote", "string", required=True),
    ParamSpec("branch", "string", required=True),
    ParamSpec("force", "flag"),
], effect="network")
RM_CACHED = spec("git.rm_cached", [
    ParamSpec("pattern", "string", required=True),
    ParamSpec("min_size", "size-bytes"),
])


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

def test_register_first_insertion():
    reg = register_api(ApiRegistry(), MOVE)
    assert reg.version == 1
    assert reg.get("fs.move") is MOVE


def test_register_duplicate():
    reg = register_api(ApiRegistry(), PUSH)
    with pytest.raises(DuplicateName):
        register_api(reg, PUSH)


def test_register_seven_listing_apis():
    names = [
        "git.undo_last_commit", "git.rm_cached", "fs.move", "git.ignore",
        "fs.rename_suffix", "git.commit_amend", "git.push",
    ]
    reg = ApiRegistry()
    for n in names:
        reg = register_api(reg, spec(n, [ParamSpec("path", "path")]))
    assert reg.version == 7
    assert len(reg.apis) == 7
    for n in names:
        assert n in reg


def test_lookup_absent_is_explicit():
    with pytest.raises(UnknownApi):
        ApiRegistry().get("fs.teleport")


@given(st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=8, unique=True))
def test_registry_version_strictly_monotone(letters):
    reg = ApiRegistry()
    seen = [reg.version]
    for ch in letters:
        reg = register_api(reg, spec(f"ns.{ch}", []))
        seen.append(reg.version)
    assert all(b > a for a, b in zip(seen, seen[1:]))


def test_enum_needs_values_and_variadic_limit():
    with pytest.raises(ValueError):
        spec("a.b", [ParamSpec("x", "enum", values=())]).check()
    with pytest.raises(ValueError):
        spec("a.b", [
            ParamSpec("x", "path", variadic=True),
            ParamSpec("y", "path", variadic=True),
        ]).check()
    with pytest.raises(ValueError):
        spec("a.b", [ParamSpec("x", "string", variadic=True)]).check()


def test_registry_json_roundtrip():
    reg = ApiRegistry()
    for s in (MOVE, PUSH, RM_CACHED):
        reg = register_api(reg, s)
    again = ApiRegistry.from_json(reg.to_json())
    assert again.version == reg.version
    assert again.names() == reg.names()
    assert again.get("git.push").param("force").kind == "flag"


# ---------------------------------------------------------------------------
# sizes
# ---------------------------------------------------------------------------

def test_size_decimal_vs_binary():
    assert parse_size("10 MB") == 10_000_000
    assert parse_size("10 MiB") == 10_485_760
    assert parse_size("10MB") == 10_000_000
    assert parse_size("1.5 GB") == 1_500_000_000
    assert parse_size("0") == 0
    assert parse_size("123") == 123
    assert parse_size("2 KiB") == 2048


@pytest.mark.parametrize("bad", ["", "MB", "-3 MB", "10 XB", "1.0.0 GB"])
def test_size_rejects_garbage(bad):
    with pytest.raises(TypeMismatch):
        parse_size(bad)


# ---------------------------------------------------------------------------
# normalize_args
# ---------------------------------------------------------------------------

def test_normalize_listing_args():
    out = normalize_args(RM_CACHED, {"pattern": "*.csv", "min_size": "10 MB"})
    assert out == {"pattern": "*.csv", "min_size": 10_000_000}


def test_normalize_missing_required():
    with pytest.raises(MissingArg) as exc:
        normalize_args(MOVE, {"src": "a.txt"})
    assert exc.value.name == "dst"


def test_normalize_zero_size_boundary():
    out = normalize_args(RM_CACHED, {"pattern": "*", "min_size": "0"})
    assert out["min_size"] == 0


def test_normalize_rejects_stray_args():
    with pytest.raises(TypeMismatch):
        normalize_args(MOVE, {"src": "a", "dst": "b", "colour": "red"})


# ---------------------------------------------------------------------------
# validate_plan
# ---------------------------------------------------------------------------

@pytest.fixture
def registry():
    reg = ApiRegistry()
    for s in (MOVE, PUSH, RM_CACHED):
        reg = register_api(reg, s)
    return reg


def test_validate_empty_plan(registry):
    assert validate_plan(OperationPlan(id="p"), registry).ok


def test_validate_unknown_api(registry):
    plan = OperationPlan(id="p", steps=(PlanStep(1, "fs.teleport"),))
    report = validate_plan(plan, registry)
    assert not report.ok
    assert report.violations[0].code == "unknown-api"


def test_validate_bad_dependency(registry):
    plan = OperationPlan(id="p", steps=(
        PlanStep(1, "fs.move", {"src": "a", "dst": "b"}),
        PlanStep(2, "fs.move", {"src": "a", "dst": "b"}, depends_on=(5,)),
    ))
    report = validate_plan(plan, registry)
    codes = {v.code for v in report.violations}
    assert codes == {"bad-dependency"}


def test_validate_unbound_slot_is_missing_arg(registry):
    plan = OperationPlan(id="p", steps=(
        PlanStep(1, "git.push", {"remote": UnboundSlot("target_branch"),
                                 "branch": UnboundSlot("target_branch")}),
    ))
    report = validate_plan(plan, registry)
    assert {v.code for v in report.violations} == {"missing-arg"}


def test_validate_type_mismatch(registry):
    plan = OperationPlan(id="p", steps=(
        PlanStep(1, "git.push", {"remote": "github", "branch": 42}),
    ))
    report = validate_plan(plan, registry)
    assert any(v.code == "type-mismatch" for v in report.violations)
    assert any(v.code == "missing-arg" for v in report.violations) is False


# Oracle: the dependency rule is "every depends_on references a strictly
# smaller, existing index"; validate_plan must agree with a direct scan.
@given(st.lists(st.lists(st.integers(min_value=0, max_value=12), max_size=3),
                max_size=8))
def test_validate_dependency_matches_direct_scan(dep_lists):
    registry = register_api(ApiRegistry(), spec("a.noop", []))
    steps = tuple(
        PlanStep(i + 1, "a.noop", {}, depends_on=tuple(deps))
        for i, deps in enumerate(dep_lists)
    )
    plan = OperationPlan(id="p", steps=steps)
    report = validate_plan(plan, registry)
    oracle_bad = [
        (s.index, d) for s in steps for d in s.depends_on if not (1 <= d < s.index)
    ]
    got_bad = [v for v in report.violations if v.code == "bad-dependency"]
    assert len(got_bad) == len(oracle_bad)
    assert report.ok == (not oracle_bad)


@given(st.integers(min_value=0, max_value=2**40))
def test_validate_is_deterministic(seed):
    registry = register_api(ApiRegistry(), RM_CACHED)
    plan = OperationPlan(id="p", steps=(
        PlanStep(1, "git.rm_cached", {"pattern": f"*.{seed}"}),
        PlanStep(2, "nope.nope", {}),
    ))
    r1 = validate_plan(plan, registry)
    r2 = validate_plan(plan, registry)
    assert r1 == r2
    assert r1.ok is False


def test_plan_json_roundtrip():
    plan = OperationPlan(
        id="p1",
        steps=(PlanStep(1, "git.push",
                        {"remote": UnboundSlot("target_branch"), "force": True},
                        depends_on=(), checkpoint=True),),
        origin="req-1",
        registry_version=3,
    )
    again = OperationPlan.from_json(plan.to_json())
    assert again == plan
