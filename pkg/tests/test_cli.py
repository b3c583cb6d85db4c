import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from reflectgrade.cli import main
from reflectgrade.corpus import save_annotations, save_reflections
from reflectgrade.corpus import AnnotationRecord, Reflection
from reflectgrade.rubric import ScoreVector
from reflectgrade.sampledata import sample_corpus, write_benchmark_files

from conftest import happy_script, entry


@pytest.fixture
def runner():
    return CliRunner()


def write_corpus(path, reflections):
    save_reflections(path, reflections)


def small_corpus(n=3):
    return [
        Reflection(f"r{i}", f"s{i}", (i % 12) + 1, f"reflection text {i}")
        for i in range(n)
    ]


def script_for(reflections):
    script = {}
    for r in reflections:
        script.update(happy_script(r.id))
    return script


def grade_args(corpus="corpus.jsonl", script="script.json", out="results.jsonl"):
    return ["grade", corpus, "--backend", "scripted", "--script", script, "--out", out]


class TestGrade:
    def test_happy_path(self, runner):
        with runner.isolated_filesystem():
            reflections = small_corpus(3)
            write_corpus("corpus.jsonl", reflections)
            Path("script.json").write_text(json.dumps(script_for(reflections)))
            result = runner.invoke(main, grade_args(), catch_exceptions=False)
            assert result.exit_code == 0
            lines = Path("results.jsonl").read_text().splitlines()
            assert len(lines) == 3
            assert json.loads(lines[0])["reflection_id"] == "r0"

    def test_partial_failure_exits_2(self, runner):
        with runner.isolated_filesystem():
            reflections = small_corpus(3)
            write_corpus("corpus.jsonl", reflections)
            script = script_for(reflections)
            script["Evaluator/r1"] = entry("nonsense")
            Path("script.json").write_text(json.dumps(script))
            result = runner.invoke(main, grade_args())
            assert result.exit_code == 2
            lines = [json.loads(l) for l in Path("results.jsonl").read_text().splitlines()]
            assert len(lines) == 3
            assert "error" in lines[1]
            assert lines[1]["error"]["stage"] == "evaluator"

    def test_missing_rubric_exits_1_without_output(self, runner):
        with runner.isolated_filesystem():
            reflections = small_corpus(1)
            write_corpus("corpus.jsonl", reflections)
            Path("script.json").write_text(json.dumps(script_for(reflections)))
            result = runner.invoke(main, grade_args() + ["--rubric", "missing.json"])
            assert result.exit_code == 1
            assert not Path("results.jsonl").exists()

    def test_missing_backend_config_exits_1(self, runner):
        with runner.isolated_filesystem():
            write_corpus("corpus.jsonl", small_corpus(1))
            result = runner.invoke(main, ["grade", "corpus.jsonl", "--out", "r.jsonl"])
            assert result.exit_code == 1

    def test_config_file_with_flag_override(self, runner):
        with runner.isolated_filesystem():
            reflections = small_corpus(2)
            write_corpus("corpus.jsonl", reflections)
            Path("script.json").write_text(json.dumps(script_for(reflections)))
            Path("config.json").write_text(
                json.dumps(
                    {
                        "backend": {"kind": "scripted", "script_path": "missing.json"},
                        "parallel_workers": 2,
                    }
                )
            )
            # the flag wins over the config's script_path
            result = runner.invoke(
                main,
                ["grade", "corpus.jsonl", "--config", "config.json",
                 "--script", "script.json", "--out", "results.jsonl"],
            )
            assert result.exit_code == 0

    def test_idempotent_bytes(self, runner):
        with runner.isolated_filesystem():
            reflections = small_corpus(4)
            write_corpus("corpus.jsonl", reflections)
            Path("script.json").write_text(json.dumps(script_for(reflections)))
            runner.invoke(main, grade_args(out="one.jsonl"), catch_exceptions=False)
            runner.invoke(main, grade_args(out="two.jsonl"), catch_exceptions=False)
            assert Path("one.jsonl").read_bytes() == Path("two.jsonl").read_bytes()


class TestEvaluate:
    def test_benchmark_statistics(self, runner):
        with runner.isolated_filesystem():
            paths = write_benchmark_files(".")
            result = runner.invoke(
                main,
                ["evaluate", str(paths["results"]), str(paths["annotations"]),
                 "--reflections", str(paths["reflections"])],
                catch_exceptions=False,
            )
            assert result.exit_code == 0
            report = json.loads(Path("metrics_report.json").read_text())
            assert report["mae_overall"] == pytest.approx(0.467, abs=1e-3)
            assert report["band_mae_low"]["overall"] == pytest.approx(0.896, abs=1e-3)
            assert report["delta_mae"] == pytest.approx(0.5, abs=1e-3)
            assert Path("metrics_report.csv").exists()

    def test_identity_predictions_give_zero_error(self, runner):
        with runner.isolated_filesystem():
            reflections = [
                Reflection("low", "s1", 1, "text"),
                Reflection("high", "s2", 1, "text"),
            ]
            save_reflections("reflections.jsonl", reflections)
            consensus = {
                "low": ScoreVector(0, 1, 0, 1),
                "high": ScoreVector(3, 2, 3, 2),
            }
            annotations = [
                AnnotationRecord(a, rid, "grading", grading_scores=consensus[rid])
                for rid in consensus
                for a in ("a1", "a2", "a3")
            ]
            save_annotations("annotations.csv", annotations)
            with open("results.jsonl", "w") as handle:
                for rid, vector in consensus.items():
                    handle.write(
                        json.dumps(
                            {"reflection_id": rid, "scores": vector.as_dict()}
                        ) + "\n"
                    )
            result = runner.invoke(
                main,
                ["evaluate", "results.jsonl", "annotations.csv",
                 "--reflections", "reflections.jsonl"],
                catch_exceptions=False,
            )
            assert result.exit_code == 0
            report = json.loads(Path("metrics_report.json").read_text())
            assert report["mae_overall"] == 0.0
            assert report["delta_mae"] == 0.0

    def test_disjoint_ids_exit_1(self, runner):
        with runner.isolated_filesystem():
            annotations = [
                AnnotationRecord(
                    "a1", "other", "grading", grading_scores=ScoreVector(1, 1, 1, 1)
                )
            ]
            save_annotations("annotations.csv", annotations)
            Path("results.jsonl").write_text(
                json.dumps(
                    {"reflection_id": "r1", "scores": {"cu": 1, "rwa": 1, "rq": 1, "cc": 1}}
                ) + "\n"
            )
            result = runner.invoke(main, ["evaluate", "results.jsonl", "annotations.csv"])
            assert result.exit_code == 1
            assert "no joined records" in result.output


class TestCost:
    def test_benchmark_costs(self, runner):
        with runner.isolated_filesystem():
            paths = write_benchmark_files(".")
            result = runner.invoke(
                main,
                ["cost", str(paths["results"]), "--preset", "gpt-4o-mini-2024-07-18",
                 "--out", "cost.json"],
                catch_exceptions=False,
            )
            assert result.exit_code == 0
            assert "$0.13" in result.output
            doc = json.loads(Path("cost.json").read_text())
            assert doc["total_cost"] == "0.1303848"
            assert doc["per_reflection_cost"] == "0.0015522"

    def test_zero_prices(self, runner):
        with runner.isolated_filesystem():
            paths = write_benchmark_files(".")
            result = runner.invoke(
                main,
                ["cost", str(paths["results"]), "--input-price", "0", "--output-price", "0"],
                catch_exceptions=False,
            )
            assert result.exit_code == 0
            assert "$0.00" in result.output

    def test_no_usage_exits_1(self, runner):
        with runner.isolated_filesystem():
            Path("results.jsonl").write_text(
                json.dumps({"reflection_id": "r1", "error": {"stage": "x", "message": "y"}})
                + "\n"
            )
            result = runner.invoke(main, ["cost", "results.jsonl"])
            assert result.exit_code == 1


class TestSample:
    def test_single_class(self, runner):
        with runner.isolated_filesystem():
            save_reflections("corpus.jsonl", sample_corpus(28, range(1, 13)))
            result = runner.invoke(
                main,
                ["sample", "corpus.jsonl", "--classes", "1", "--out", "out.jsonl"],
                catch_exceptions=False,
            )
            assert result.exit_code == 0
            assert len(Path("out.jsonl").read_text().splitlines()) == 28

    def test_three_classes_of_336(self, runner):
        with runner.isolated_filesystem():
            save_reflections("corpus.jsonl", sample_corpus(28, range(1, 13)))
            result = runner.invoke(
                main,
                ["sample", "corpus.jsonl", "--classes", "1,6,12", "--out", "out.jsonl"],
                catch_exceptions=False,
            )
            assert result.exit_code == 0
            assert len(Path("out.jsonl").read_text().splitlines()) == 84

    def test_invalid_class_exits_1(self, runner):
        with runner.isolated_filesystem():
            save_reflections("corpus.jsonl", sample_corpus(2, (1,)))
            result = runner.invoke(
                main, ["sample", "corpus.jsonl", "--classes", "13", "--out", "out.jsonl"]
            )
            assert result.exit_code == 1


class TestInitRubric:
    def test_writes_loadable_defaults(self, runner):
        with runner.isolated_filesystem():
            result = runner.invoke(main, ["init-rubric", "--dir", "rubrics"],
                                   catch_exceptions=False)
            assert result.exit_code == 0
            from reflectgrade.rubric import (
                DEFAULT_FEEDBACK_RUBRIC,
                DEFAULT_GRADING_RUBRIC,
                load_feedback_rubric,
                load_rubric,
            )
            assert load_rubric("rubrics/grading_rubric.json") == DEFAULT_GRADING_RUBRIC
            assert (
                load_feedback_rubric("rubrics/feedback_rubric.json")
                == DEFAULT_FEEDBACK_RUBRIC
            )
