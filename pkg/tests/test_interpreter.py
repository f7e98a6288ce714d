import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings, strategies as st

from peros.errors import BackendUnavailable, MalformedCompletion, NoIntent
from peros.interpreter import (
    Ambiguity,
    BackendConfig,
    DialogueContext,
    WorkspaceInfo,
    detect_ambiguity,
    interpret,
    llm_complete,
    parse_clarification_answer,
    rule_parse,
    split_clauses,
)
from tests.conftest import LISTING_REQUEST

INFO = WorkspaceInfo(remotes={
    "github": ("main", "dev", "feat/chihuahua"),
    "bitbucket": ("master",),
})


def ctx(**kw) -> DialogueContext:
    return DialogueContext(session_id="s1", **kw)


# ---------------------------------------------------------------------------
# clause splitting
# ---------------------------------------------------------------------------

def test_split_preserves_order_and_spans():
    text = "list files, stage *.py and commit with message \"wip\""
    clauses = split_clauses(text)
    assert [c for c, _ in clauses] == [
        "list files", "stage *.py", 'commit with message "wip"']
    for clause, (lo, hi) in clauses:
        assert text[lo:hi] == clause


def test_split_drops_discourse_markers():
    assert [c for c, _ in split_clauses("now, list files")] == ["list files"]


# ---------------------------------------------------------------------------
# rule_parse
# ---------------------------------------------------------------------------

def test_listing_request_yields_seven_ordered_tasks(grammar):
    frame = rule_parse(LISTING_REQUEST, grammar)
    verbs = [t.verb for t in frame.tasks]
    assert verbs == [
        "undo-last-commit", "rm-cached", "move", "git-ignore",
        "rename-suffix", "commit-amend", "push",
    ]
    rm = frame.tasks[1]
    assert rm.params["pattern"] == "*.csv"
    assert rm.params["min_size"] == "10 MB"
    move = frame.tasks[2]
    assert move.params == {"src": "@selection", "dst": "data"}
    assert frame.tasks[3].params == {"path": "@selection_dir"}
    assert frame.tasks[4].params == {"pattern": "@selection", "suffix": "_large"}
    assert frame.tasks[5].params == {"no_edit": "true"}
    push = frame.tasks[6]
    assert push.params == {"force": "true"}
    assert push.asks == ("target_branch",)
    # spans lie within bounds and preserve source order
    frame.check()


def test_rm_cached_single_clause(grammar):
    frame = rule_parse(
        "remove all the CSV files larger than 10 MB from the git cache", grammar)
    assert len(frame.tasks) == 1
    assert frame.tasks[0].verb == "rm-cached"
    assert frame.tasks[0].params == {"pattern": "*.csv", "min_size": "10 MB"}


def test_list_files_defaults_to_cwd(grammar):
    frame = rule_parse("list files", grammar)
    assert frame.tasks[0].verb == "list"
    assert frame.tasks[0].params == {"path": "."}


def test_uncovered_verb_is_no_intent(grammar):
    with pytest.raises(NoIntent):
        rule_parse("frobnicate the widget", grammar)


def test_partial_coverage_keeps_parsed_clauses(grammar):
    frame = rule_parse("list files and frobnicate the widget", grammar)
    assert [t.verb for t in frame.tasks] == ["list"]


@settings(max_examples=25)
@given(st.sampled_from([
    LISTING_REQUEST,
    "list files",
    "stage *.py and commit with message \"wip\"",
    "delete all log files larger than 5 KB",
    "enroll docs in weekly backups on local storage",
]))
def test_rule_parse_is_pure(grammar, request_text):
    f1 = rule_parse(request_text, grammar)
    f2 = rule_parse(request_text, grammar)
    assert f1 == f2


# ---------------------------------------------------------------------------
# ambiguity detection
# ---------------------------------------------------------------------------

def test_push_question_lists_known_branches(grammar):
    frame = rule_parse("force push to my remote repo", grammar)
    out = detect_ambiguity(frame, ctx(workspace_info=INFO),
                           {"target_branch": "To which branch do you want to push the changes?"})
    assert len(out) == 1
    q = out[0].question
    for branch in ("main", "dev", "feat/chihuahua", "master"):
        assert branch in q
    assert "github" in q and "bitbucket" in q


def test_fully_bound_frame_has_no_ambiguities(grammar):
    frame = rule_parse("push to github branch dev", grammar)
    assert detect_ambiguity(frame, ctx()) == []


def test_two_unresolved_slots_in_source_order(grammar):
    # oracle: a direct scan over unbound asked params, task by task
    frame1 = rule_parse("force push to my remote repo and push to my remote repo",
                        grammar)
    scan = []
    for task in frame1.tasks:
        scan.extend(task.asks)
    out = detect_ambiguity(frame1, ctx())
    assert [a.slot for a in out] == sorted(set(scan), key=scan.index)


# ---------------------------------------------------------------------------
# clarification answers
# ---------------------------------------------------------------------------

OPEN = Ambiguity(slot="target_branch", question="To which branch?")


def test_answer_дev_github_binds_both():
    got = parse_clarification_answer("dev github", OPEN, ctx(workspace_info=INFO))
    assert got == {"target_branch": "dev", "remote": "github"}


def test_answer_branch_only_infers_unique_remote():
    got = parse_clarification_answer("master", OPEN, ctx(workspace_info=INFO))
    assert got == {"target_branch": "master", "remote": "bitbucket"}


def test_answer_gibberish_is_not_an_answer():
    assert parse_clarification_answer("i forgot the remote branches", OPEN,
                                      ctx(workspace_info=INFO)) is None


def test_interpret_binds_open_clarification(grammar):
    c = ctx(workspace_info=INFO)
    c.set_clarification(OPEN)
    frame = interpret("dev github", c, BackendConfig(kind="rule"), grammar)
    assert len(frame.tasks) == 1
    assert frame.tasks[0].verb == "clarify"
    assert frame.tasks[0].params == {"target_branch": "dev", "remote": "github"}


def test_interpret_empty_is_no_intent(grammar):
    with pytest.raises(NoIntent):
        interpret("   ", ctx(), BackendConfig(kind="rule"), grammar)


def test_interpret_listing_request(grammar):
    frame = interpret(LISTING_REQUEST, ctx(workspace_info=INFO),
                      BackendConfig(kind="rule"), grammar)
    assert len(frame.tasks) == 7
    assert [a.slot for a in frame.ambiguities] == ["target_branch"]
    assert "dev" in frame.ambiguities[0].question


# ---------------------------------------------------------------------------
# llm endpoint backend (recorded fixture, replayed from a local server)
# ---------------------------------------------------------------------------

class _Endpoint(BaseHTTPRequestHandler):
    responses: list[str] = []
    calls: int = 0

    def do_POST(self):
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        body = type(self).responses[min(type(self).calls, len(type(self).responses) - 1)]
        type(self).calls += 1
        payload = json.dumps(
            {"choices": [{"message": {"role": "assistant", "content": body}}]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *a):  # silence
        pass


@pytest.fixture
def endpoint():
    server = HTTPServer(("127.0.0.1", 0), _Endpoint)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Endpoint.calls = 0
    yield server
    server.shutdown()


def _cfg(server) -> BackendConfig:
    host, port = server.server_address
    return BackendConfig(kind="llm-endpoint",
                         endpoint_url=f"http://{host}:{port}/v1/chat/completions",
                         model="fixture")


def test_llm_fixture_replay_matches_rule_backend(grammar, endpoint):
    # the recorded completion is the rule backend's frame for the same request
    gold = rule_parse(LISTING_REQUEST, grammar)
    _Endpoint.responses = [json.dumps({
        "version": 1,
        "tasks": [t.to_json() for t in gold.tasks],
        "ambiguities": [],
    })]
    frame = interpret(LISTING_REQUEST, ctx(workspace_info=INFO),
                      _cfg(endpoint), grammar)
    assert [t.verb for t in frame.tasks] == [t.verb for t in gold.tasks]
    assert [dict(t.params) for t in frame.tasks] == [dict(t.params) for t in gold.tasks]


def test_llm_non_json_twice_is_malformed(grammar, endpoint):
    _Endpoint.responses = ["definitely not json", "still not json"]
    with pytest.raises(MalformedCompletion):
        interpret("list files", ctx(), _cfg(endpoint), grammar)
    assert _Endpoint.calls == 2  # exactly one retry


def test_llm_retry_recovers(grammar, endpoint):
    good = json.dumps({"version": 1, "tasks": [
        {"verb": "list", "object": None, "params": {"path": "."},
         "span": [0, 10], "asks": []}], "ambiguities": []})
    _Endpoint.responses = ["oops", good]
    frame = interpret("list files", ctx(), _cfg(endpoint), grammar)
    assert frame.tasks[0].verb == "list"


def test_llm_endpoint_down_is_backend_unavailable(grammar):
    cfg = BackendConfig(kind="llm-endpoint",
                        endpoint_url="http://127.0.0.1:9/nope", model="x")
    with pytest.raises(BackendUnavailable):
        interpret("list files", ctx(), cfg, grammar)


def test_llm_complete_requires_llm_config():
    with pytest.raises(ValueError):
        llm_complete([], BackendConfig(kind="rule"))
