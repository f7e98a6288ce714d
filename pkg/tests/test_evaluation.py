import json
import math
import shutil

import pytest
from hypothesis import given, strategies as st

from peros.config import data_path
from peros.errors import EmptyCorpus, EmptyText, GrammarLoadError
from peros.evaluation import (
    Corpus,
    Decision,
    EvalManager,
    EvalReport,
    GoldExample,
    RetrainPolicy,
    RetrainState,
    apply_retrain,
    evaluate,
    lcs_matches,
    linguistic_score,
    should_retrain,
)
from peros.model import ApiRegistry, ApiSpec
from peros.pipeline import LanguageStack, RulePipeline


@pytest.fixture(scope="module")
def basic_corpus() -> Corpus:
    return Corpus.load(data_path("corpus", "basic.ndjson"))


@pytest.fixture(scope="module")
def extension_corpus() -> Corpus:
    return Corpus.load(data_path("corpus", "extension.ndjson"))


@pytest.fixture
def stack() -> LanguageStack:
    return LanguageStack(data_path("grammar", "v1"))


def ext_registry(registry: ApiRegistry) -> ApiRegistry:
    out = registry
    for doc in json.loads(data_path("registry_ext.json").read_text())["apis"]:
        out = out.with_api(ApiSpec.from_json(doc))
    return out


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_rule_backend_scores_perfect_on_own_corpus(basic_corpus, stack, registry):
    report = evaluate(basic_corpus, RulePipeline(stack, registry))
    assert report.accuracy == 1.0
    assert report.recall == 1.0
    assert report.exact_match_rate == 1.0
    assert report.linguistic == 1.0
    assert report.generated_steps == report.gold_steps == report.matched_steps


def test_zero_step_pipeline_scores_zero(basic_corpus):
    class Mute:
        def plan_steps(self, request, context):
            return []

        def render_reply(self, steps):
            return "nothing to do"

    report = evaluate(basic_corpus, Mute())
    assert report.accuracy == 0.0
    assert report.recall == 0.0
    assert report.generated_steps == 0


def test_empty_corpus_rejected():
    corpus = Corpus(corpus_id="x", registry_version=0, examples=())
    with pytest.raises(EmptyCorpus):
        evaluate(corpus, None)


def test_removing_rm_cached_rule_drops_recall_exactly(basic_corpus, registry,
                                                      tmp_path):
    # oracle: recount gold steps after rule removal, straight from the corpus
    gold_total = sum(len(e.gold_steps) for e in basic_corpus.examples)
    rm_gold = sum(1 for e in basic_corpus.examples
                  for api, _ in e.gold_steps if api == "git.rm_cached")
    expected_recall = 1 - rm_gold / gold_total

    crippled = tmp_path / "crippled"
    crippled.mkdir()
    doc = json.loads((data_path("grammar", "v1") / "grammar.json").read_text())
    doc["rules"] = [r for r in doc["rules"] if r["verb"] != "rm-cached"]
    (crippled / "grammar.json").write_text(json.dumps(doc))
    shutil.copyfile(data_path("grammar", "v1") / "verbs.json",
                    crippled / "verbs.json")

    report = evaluate(basic_corpus, RulePipeline(LanguageStack(crippled), registry))
    assert report.recall == pytest.approx(expected_recall, abs=0)
    assert report.accuracy == 1.0  # surviving steps still all correct
    assert report.per_api["git.rm_cached"]["matched"] == 0
    assert report.per_api["git.rm_cached"]["gold"] == rm_gold


def test_accuracy_recall_counting_semantics(basic_corpus, stack, registry):
    report = evaluate(basic_corpus, RulePipeline(stack, registry))
    # accuracy * |generated| and recall * |gold| are integers
    assert report.accuracy * report.generated_steps == pytest.approx(
        report.matched_steps)
    assert report.recall * report.gold_steps == pytest.approx(report.matched_steps)


def test_lcs_respects_order():
    a = [("x", {}), ("y", {}), ("z", {})]
    assert len(lcs_matches(a, a)) == 3
    assert len(lcs_matches([("z", {}), ("y", {}), ("x", {})], a)) == 1
    assert len(lcs_matches([("x", {}), ("z", {})], a)) == 2


def test_eval_report_roundtrip(basic_corpus, stack, registry):
    report = evaluate(basic_corpus, RulePipeline(stack, registry))
    again = EvalReport.from_json(json.loads(json.dumps(report.to_json())))
    assert again == report


# ---------------------------------------------------------------------------
# linguistic score
# ---------------------------------------------------------------------------

def test_identical_texts_score_one():
    assert linguistic_score("move the files now", "move the files now") == 1.0


def test_disjoint_texts_score_zero():
    assert linguistic_score("alpha beta gamma", "delta epsilon zeta") == 0.0


def test_truncated_candidate_matches_hand_computation():
    # 10-token reference, candidate drops the last token. All n-gram
    # precisions are exact 1 (distinct tokens), so the score is the brevity
    # penalty alone: exp(1 - 10/9).
    ref = "t1 t2 t3 t4 t5 t6 t7 t8 t9 t10"
    cand = "t1 t2 t3 t4 t5 t6 t7 t8 t9"
    assert linguistic_score(cand, ref) == pytest.approx(math.exp(1 - 10 / 9))


def test_empty_text_rejected():
    with pytest.raises(EmptyText):
        linguistic_score("", "x")
    with pytest.raises(EmptyText):
        linguistic_score("x", "  ")


@given(st.text(alphabet="ab ", min_size=1), st.text(alphabet="ab ", min_size=1))
def test_linguistic_score_bounded(c, r):
    if not c.split() or not r.split():
        return
    s = linguistic_score(c, r)
    assert 0.0 <= s <= 1.0


# ---------------------------------------------------------------------------
# should_retrain
# ---------------------------------------------------------------------------

def _report(acc: float) -> EvalReport:
    return EvalReport(corpus_id="c", registry_version=1, accuracy=acc,
                      recall=acc, exact_match_rate=acc, linguistic=1.0,
                      matched_steps=0, generated_steps=0, gold_steps=0)


POLICY = RetrainPolicy(window=3, min_accuracy=0.9, new_api_trigger=3, cooldown=2)


def test_healthy_window_no_retrain(registry):
    history = [_report(1.0), _report(1.0), _report(1.0)]
    d = should_retrain(history, POLICY, registry, RetrainState(registry.version, 0))
    assert d == Decision(False, "healthy")


def test_low_rolling_mean_triggers_retrain(registry):
    # oracle: arithmetic mean (0.95 + 0.7 + 0.6) / 3 = 0.75 < 0.9
    history = [_report(0.95), _report(0.7), _report(0.6)]
    d = should_retrain(history, POLICY, registry, RetrainState(registry.version, 0))
    assert d.retrain and d.reason == "accuracy"


def test_new_apis_trigger_retrain(registry):
    grown = ext_registry(registry)  # three new APIs
    d = should_retrain([_report(1.0)], POLICY, grown,
                       RetrainState(registry.version, 0))
    assert d.retrain and d.reason == "new-apis"


def test_cooldown_blocks_retrain(registry):
    history = [_report(0.1)] * 4
    state = RetrainState(registry_version_at_retrain=registry.version,
                         eval_count_at_retrain=3)
    d = should_retrain(history, POLICY, registry, state)
    assert not d.retrain and d.reason == "cooldown"


@given(accs=st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=8))
def test_retrain_monotone_in_degradation(registry, accs):
    history = [_report(a) for a in accs]
    state = RetrainState(registry.version, 0)
    base = should_retrain(history, POLICY, registry, state)
    dropped = [_report(max(0.0, a - 0.5)) for a in accs]
    worse = should_retrain(dropped, POLICY, registry, state)
    if base.retrain:
        assert worse.retrain  # lowering accuracy never cancels a retrain


# ---------------------------------------------------------------------------
# apply_retrain
# ---------------------------------------------------------------------------

def test_rule_retrain_reloads_grammar(stack):
    old_version = stack.version
    apply_retrain("rule", stack=stack, version_dir=data_path("grammar", "v2"))
    assert stack.version == "v2" != old_version
    assert "disk-usage" in stack.table.verbs


def test_corrupt_grammar_keeps_previous(stack, tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "grammar.json").write_text("{not json")
    (bad / "verbs.json").write_text("{}")
    before = (stack.version, stack.grammar, stack.table)
    with pytest.raises(GrammarLoadError):
        apply_retrain("rule", stack=stack, version_dir=bad)
    assert (stack.version, stack.grammar, stack.table) == before


def test_llm_retrain_appends_ledger(tmp_path):
    ledger = tmp_path / "jobs.ndjson"
    apply_retrain("llm", ledger_path=ledger, request_id="r1", corpus_ref="basic")
    apply_retrain("llm", ledger_path=ledger, request_id="r2", corpus_ref="basic")
    lines = ledger.read_text().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["request_id"] == "r1"


# ---------------------------------------------------------------------------
# degrade-then-recover, desk scale
# ---------------------------------------------------------------------------

def test_degrade_and_recover_loop(basic_corpus, extension_corpus, registry,
                                  tmp_path):
    stack = LanguageStack(data_path("grammar", "v1"))
    manager = EvalManager(policy=RetrainPolicy(), reports_dir=tmp_path / "reports")
    manager.mark_retrained(registry)

    merged = Corpus(
        corpus_id="merged",
        registry_version=registry.version,
        examples=basic_corpus.examples + extension_corpus.examples,
    )

    # healthy baseline on the shipped corpus
    r0 = evaluate(basic_corpus, RulePipeline(stack, registry))
    manager.record(r0)
    assert r0.recall == 1.0
    assert not manager.decide(registry).retrain

    # three unmapped APIs + 15 new gold examples degrade recall below 0.9
    grown = ext_registry(registry)
    r1 = evaluate(merged, RulePipeline(stack, grown))
    manager.record(r1)
    assert r1.recall < 0.9
    assert r1.accuracy == 1.0  # old steps still correct

    decision = manager.decide(grown)
    assert decision.retrain and decision.reason == "new-apis"

    # retrain = grammar reload; recall recovers fully
    apply_retrain("rule", stack=stack, version_dir=data_path("grammar", "v2"))
    manager.mark_retrained(grown)
    r2 = evaluate(merged, RulePipeline(stack, grown))
    manager.record(r2)
    assert r2.recall == 1.0
    assert r2.accuracy == 1.0
    assert (tmp_path / "reports").exists()
    assert len(list((tmp_path / "reports").glob("*.json"))) == 3
