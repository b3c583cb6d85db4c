import json

import pytest

from reflectgrade.backend import ScriptedBackend, UsageRecord
from reflectgrade.errors import (
    CommentLengthError,
    CorpusGradingError,
    ParseError,
    StageError,
)
from reflectgrade.pipeline import (
    FeedbackComment,
    GradeFailure,
    MetaPrompts,
    StageTrace,
    VerdictStatus,
    count_words,
    grade_corpus,
    parse_equity_output,
    parse_evaluator_output,
    parse_meta_output,
    parse_reflexion_output,
    run_aggregator,
    run_evaluator,
    run_metacognitive,
    run_pipeline,
    run_reflexion,
)
from reflectgrade.results_io import result_to_dict
from reflectgrade.rubric import DimensionId, ScoreVector

from conftest import (
    entry,
    equity_json,
    evaluator_json,
    happy_script,
    make_reflection,
    meta_json,
    reflexion_json,
    words,
)


class TestCountWords:
    def test_two_words(self):
        assert count_words("hello world") == 2

    def test_empty(self):
        assert count_words("") == 0

    def test_mixed_whitespace(self):
        assert count_words("a  b\nc") == 3


class TestParsers:
    def test_evaluator_valid(self):
        output = parse_evaluator_output(evaluator_json(2, 3, 1, 2))
        assert output.scores == ScoreVector(2, 3, 1, 2)
        assert output.reasoning[DimensionId.CONCEPT_UNDERSTANDING]
        assert output.areas_for_improvement

    def test_evaluator_fenced_json(self):
        fenced = "```json\n" + evaluator_json() + "\n```"
        assert parse_evaluator_output(fenced).scores == ScoreVector(2, 3, 1, 2)

    def test_evaluator_missing_reasoning(self):
        doc = json.loads(evaluator_json())
        del doc["reasoning"]
        with pytest.raises(ParseError, match="reasoning"):
            parse_evaluator_output(json.dumps(doc))

    def test_evaluator_score_out_of_range_keeps_fragment(self):
        doc = json.loads(evaluator_json())
        doc["scores"]["cu"] = 4
        with pytest.raises(ParseError, match="out of range") as excinfo:
            parse_evaluator_output(json.dumps(doc))
        assert "4" in excinfo.value.fragment

    def test_evaluator_not_json(self):
        with pytest.raises(ParseError, match="JSON"):
            parse_evaluator_output("I think this deserves a 2.")

    def test_equity_with_flag(self):
        raw = equity_json(
            flags=[{"span": "you people", "issue": "othering"}], revised="better text"
        )
        review = parse_equity_output(raw, "original")
        assert len(review.flags) == 1
        assert review.revised_narrative == "better text"

    def test_equity_no_flags_keeps_original(self):
        review = parse_equity_output(equity_json(), "the original narrative")
        assert review.flags == ()
        assert review.revised_narrative == "the original narrative"

    def test_meta_two_prompts(self):
        prompts = parse_meta_output(meta_json(("One?", "Two?")))
        assert len(prompts.prompts) == 2

    def test_meta_three_prompts_rejected(self):
        with pytest.raises(ParseError, match="1..2"):
            parse_meta_output(meta_json(("One?", "Two?", "Three?")))

    def test_meta_zero_prompts_rejected(self):
        with pytest.raises(ParseError):
            parse_meta_output(meta_json(()))

    def test_meta_statement_rejected(self):
        with pytest.raises(ParseError, match=r"\?"):
            parse_meta_output(meta_json(("Think about it.",)))

    def test_reflexion_json_confident(self):
        verdict = parse_reflexion_output(reflexion_json("CONFIDENT"))
        assert verdict.status is VerdictStatus.CONFIDENT
        assert verdict.suggestions == ()

    def test_reflexion_bare_token(self):
        verdict = parse_reflexion_output("CONFIDENT")
        assert verdict.status is VerdictStatus.CONFIDENT

    def test_reflexion_revise_with_lines(self):
        verdict = parse_reflexion_output("REVISE\n- mention the example\n- soften tone")
        assert verdict.status is VerdictStatus.REVISE
        assert verdict.suggestions == ("mention the example", "soften tone")

    def test_reflexion_revise_without_suggestions(self):
        with pytest.raises(ParseError, match="suggestion"):
            parse_reflexion_output(reflexion_json("REVISE"))

    def test_reflexion_unknown_verdict(self):
        with pytest.raises(ParseError, match="unknown verdict"):
            parse_reflexion_output("MAYBE")


class TestRepairLoop:
    def test_valid_first_try_is_one_call(self, rubric):
        reflection = make_reflection()
        backend = ScriptedBackend({"Evaluator/r1": entry(evaluator_json())})
        trace = StageTrace()
        run_evaluator(reflection, rubric, backend, trace=trace)
        assert len(trace.usages) == 1

    def test_two_malformed_then_valid_is_three_calls(self, rubric):
        reflection = make_reflection()
        backend = ScriptedBackend(
            {
                "Evaluator/r1": [
                    entry("not json"),
                    entry("{\"scores\": {}}"),
                    entry(evaluator_json()),
                ]
            }
        )
        trace = StageTrace()
        output = run_evaluator(reflection, rubric, backend, trace=trace)
        assert output.scores == ScoreVector(2, 3, 1, 2)
        assert len(trace.usages) == 3

    def test_three_malformed_gives_up(self, rubric):
        reflection = make_reflection()
        backend = ScriptedBackend({"Evaluator/r1": entry("still not json")})
        with pytest.raises(ParseError, match="evaluator output unparseable"):
            run_evaluator(reflection, rubric, backend)

    def test_meta_repair_on_cardinality(self):
        reflection = make_reflection()
        backend = ScriptedBackend(
            {
                "Metacognitive/r1": [
                    entry(meta_json(("One?", "Two?", "Three?"))),
                    entry(meta_json(("One?",))),
                ]
            }
        )
        trace = StageTrace()
        prompts = run_metacognitive(reflection, backend, trace=trace)
        assert prompts.prompts == ("One?",)
        assert len(trace.usages) == 2


def aggregate(backend, rubric, trace=None, **kwargs):
    evaluation = parse_evaluator_output(evaluator_json())
    equity = parse_equity_output(equity_json(), "narrative")
    meta = parse_meta_output(meta_json())
    return run_aggregator(
        evaluation, equity, meta, backend, rubric,
        trace=trace, script_key="r1", **kwargs,
    )


class TestAggregator:
    def test_in_cap_accepted_verbatim(self, rubric):
        comment_text = words(90)
        backend = ScriptedBackend({"Aggregator/r1": entry(comment_text)})
        trace = StageTrace()
        comment = aggregate(backend, rubric, trace)
        assert comment.text == comment_text
        assert comment.word_count == 90
        assert len(trace.usages) == 1

    def test_over_cap_reprompted_once(self, rubric):
        backend = ScriptedBackend(
            {"Aggregator/r1": [entry(words(140)), entry(words(110))]}
        )
        trace = StageTrace()
        comment = aggregate(backend, rubric, trace)
        assert comment.word_count == 110
        assert len(trace.usages) == 2
        assert trace.warnings == []

    def test_still_over_cap_truncated_with_warning(self, rubric):
        backend = ScriptedBackend({"Aggregator/r1": entry(words(140))})
        trace = StageTrace()
        comment = aggregate(backend, rubric, trace)
        assert comment.word_count <= 120
        assert comment.word_count == 120  # sentences of 10 words pack exactly
        assert len(trace.usages) == 2
        assert any("truncated" in w for w in trace.warnings)

    def test_unsplittable_overlong_text_errors(self, rubric):
        # 140 words with no sentence boundary: nothing fits under the cap
        text = " ".join(f"w{i}" for i in range(140))
        backend = ScriptedBackend({"Aggregator/r1": entry(text)})
        with pytest.raises(CommentLengthError, match="empty comment after truncation"):
            aggregate(backend, rubric)

    def test_comment_invariant_is_hard(self):
        with pytest.raises(CommentLengthError):
            FeedbackComment.from_text(words(121))
        with pytest.raises(CommentLengthError):
            FeedbackComment(text="two words", word_count=1)


class TestReflexion:
    def test_confident(self):
        backend = ScriptedBackend({"Reflexion/r1": entry(reflexion_json())})
        verdict = run_reflexion(
            FeedbackComment.from_text("fine."), backend, script_key="r1"
        )
        assert verdict.status is VerdictStatus.CONFIDENT

    def test_revise_with_suggestions(self):
        backend = ScriptedBackend(
            {"Reflexion/r1": entry(reflexion_json("REVISE", ["add the example"]))}
        )
        verdict = run_reflexion(
            FeedbackComment.from_text("fine."), backend, script_key="r1"
        )
        assert verdict.status is VerdictStatus.REVISE
        assert verdict.suggestions == ("add the example",)

    def test_unknown_verdict_after_repairs(self):
        backend = ScriptedBackend({"Reflexion/r1": entry("MAYBE")})
        with pytest.raises(ParseError, match="unknown verdict"):
            run_reflexion(FeedbackComment.from_text("fine."), backend, script_key="r1")


class TestRunPipeline:
    def test_confident_path(self, rubric):
        reflection = make_reflection()
        script = happy_script("r1", comment=words(60))
        result = run_pipeline(reflection, rubric, ScriptedBackend(script))
        assert result.revisions_applied == 0
        assert result.verdict.status is VerdictStatus.CONFIDENT
        assert result.comment.text == words(60)

    def test_revise_then_confident(self, rubric):
        script = happy_script("r1")
        script["Aggregator/r1"] = [entry(words(60)), entry(words(70))]
        script["Reflexion/r1"] = [
            entry(reflexion_json("REVISE", ["tie back to the question"])),
            entry(reflexion_json("CONFIDENT")),
        ]
        result = run_pipeline(make_reflection(), rubric, ScriptedBackend(script))
        assert result.revisions_applied == 1
        assert result.verdict.status is VerdictStatus.CONFIDENT
        assert result.comment.text == words(70)

    def test_revision_budget_bounds_loop(self, rubric):
        script = happy_script("r1")
        script["Aggregator/r1"] = [entry(words(60)), entry(words(70))]
        script["Reflexion/r1"] = entry(reflexion_json("REVISE", ["again"]))
        result = run_pipeline(
            make_reflection(), rubric, ScriptedBackend(script), max_revisions=1
        )
        assert result.revisions_applied == 1
        assert result.verdict.status is VerdictStatus.REVISE

    def test_zero_revision_budget(self, rubric):
        script = happy_script("r1")
        script["Reflexion/r1"] = entry(reflexion_json("REVISE", ["again"]))
        result = run_pipeline(
            make_reflection(), rubric, ScriptedBackend(script), max_revisions=0
        )
        assert result.revisions_applied == 0
        assert result.verdict.status is VerdictStatus.REVISE

    def test_usage_is_sum_of_all_calls(self, rubric):
        script = happy_script("r1")
        result = run_pipeline(make_reflection(), rubric, ScriptedBackend(script))
        # five single-entry stages at (10, 20) each
        assert result.usage == UsageRecord(50, 100, 0.0)

    def test_scores_fixed_at_evaluator(self, rubric):
        script = happy_script("r1")
        script["Reflexion/r1"] = [
            entry(reflexion_json("REVISE", ["change it"])),
            entry(reflexion_json("CONFIDENT")),
        ]
        result = run_pipeline(make_reflection(), rubric, ScriptedBackend(script))
        assert result.evaluator.scores == ScoreVector(2, 3, 1, 2)

    def test_stage_identity_on_failure(self, rubric):
        script = happy_script("r1")
        script["Evaluator/r1"] = entry("garbage")
        with pytest.raises(StageError) as excinfo:
            run_pipeline(make_reflection(), rubric, ScriptedBackend(script))
        assert excinfo.value.stage == "evaluator"

    def test_deterministic_across_runs(self, rubric):
        script = happy_script("r1")
        results = [
            result_to_dict(
                run_pipeline(make_reflection(), rubric, ScriptedBackend(script))
            )
            for _ in range(2)
        ]
        assert json.dumps(results[0]) == json.dumps(results[1])


def corpus_and_script(n=6):
    reflections = [make_reflection(f"r{i}", class_index=(i % 12) + 1) for i in range(n)]
    script = {}
    for r in reflections:
        script.update(happy_script(r.id))
    return reflections, script


class TestGradeCorpus:
    def test_output_order_matches_input(self, rubric):
        reflections, script = corpus_and_script(8)
        outcomes = grade_corpus(
            reflections, rubric, ScriptedBackend(script), parallel_workers=4
        )
        assert [o.reflection_id for o in outcomes] == [r.id for r in reflections]

    def test_failures_are_isolated(self, rubric):
        reflections, script = corpus_and_script(3)
        script["Evaluator/r1"] = entry("broken")
        outcomes = grade_corpus(
            reflections, rubric, ScriptedBackend(script), parallel_workers=2
        )
        assert isinstance(outcomes[1], GradeFailure)
        assert outcomes[1].stage == "evaluator"
        assert not isinstance(outcomes[0], GradeFailure)
        assert not isinstance(outcomes[2], GradeFailure)

    def test_worker_count_does_not_change_results(self, rubric):
        reflections, script = corpus_and_script(10)
        serialized = []
        for workers in (1, 8):
            outcomes = grade_corpus(
                reflections, rubric, ScriptedBackend(script), parallel_workers=workers
            )
            serialized.append(
                json.dumps([result_to_dict(o) for o in outcomes])
            )
        assert serialized[0] == serialized[1]

    def test_all_failures_raises(self, rubric):
        reflections, script = corpus_and_script(3)
        for r in reflections:
            script[f"Evaluator/{r.id}"] = entry("broken")
        with pytest.raises(CorpusGradingError):
            grade_corpus(reflections, rubric, ScriptedBackend(script))

    def test_workers_must_be_positive(self, rubric):
        with pytest.raises(ValueError):
            grade_corpus([], rubric, ScriptedBackend({}), parallel_workers=0)


class TestMetaPromptsInvariant:
    def test_prompt_must_end_with_question_mark(self):
        with pytest.raises(ParseError):
            MetaPrompts(prompts=("no question mark",))
