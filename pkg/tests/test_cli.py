import json

import pytest
from click.testing import CliRunner

from helpers import feed_text, make_record, masked_eval_fixture, struts_gov_records
from vulnaug.cli import cli
from vulnaug.corpus import AspectKind


@pytest.fixture()
def runner():
    return CliRunner()


def small_feed_records(n=12):
    records = []
    for i in range(n):
        aspects = {
            AspectKind.VULNERABILITY_TYPE: f"flaw kind{i}",
            AspectKind.ATTACK_VECTOR: f"via port{i}",
            AspectKind.IMPACT: f"impact result{i}",
            AspectKind.ROOT_CAUSE: f"cause bug{i}",
        }
        if i % 3 == 0:
            # leave attacker type missing: these become augment targets
            pass
        else:
            aspects[AspectKind.ATTACKER_TYPE] = f"attacker group{i}"
        records.append(
            make_record(
                f"CVE-2023-{1000 + i}",
                f"flaw kind{i} in widget{i % 3} lets attacker group{i} cause"
                f" impact result{i} via port{i} because cause bug{i}.",
                cwe_id=f"CWE-{100 + (i % 2)}",
                aspects=aspects,
                software=[f"widget{i % 3}"],
            )
        )
    return records


def write_feed(tmp_path, records, name="feed.jsonl"):
    path = tmp_path / name
    path.write_text(feed_text(records), encoding="utf-8")
    return path


def build_artifacts(runner, tmp_path, records):
    feed = write_feed(tmp_path, records)
    corpus = tmp_path / "corpus.jsonl"
    mapping = tmp_path / "mapping.tsv"
    embedding = tmp_path / "embed.bin"
    correlation = tmp_path / "corr.bin"
    steps = [
        ["ingest", str(feed), "-o", str(corpus)],
        ["build-map", "--corpus", str(corpus), "-o", str(mapping)],
        ["train-embed", "--corpus", str(corpus), "-o", str(embedding)],
        ["train-corr", "--corpus", str(corpus), "--embed", str(embedding),
         "--epochs", "50", "-o", str(correlation)],
    ]
    for step in steps:
        result = runner.invoke(cli, step)
        assert result.exit_code == 0, f"{step}: {result.output}"
    return corpus, mapping, embedding, correlation


class TestIngest:
    def test_valid_feed_reports_counts(self, runner, tmp_path):
        feed = write_feed(tmp_path, small_feed_records(5))
        out = tmp_path / "corpus.jsonl"
        result = runner.invoke(cli, ["ingest", str(feed), "-o", str(out)])
        assert result.exit_code == 0
        assert "ingested 5 records" in result.output
        assert len(out.read_text().splitlines()) == 5

    def test_missing_feed_exits_two_with_path(self, runner, tmp_path):
        missing = tmp_path / "nope.jsonl"
        result = runner.invoke(cli, ["ingest", str(missing)])
        assert result.exit_code == 2
        assert "nope.jsonl" in result.output

    def test_duplicates_across_feeds_deduplicated(self, runner, tmp_path):
        records = small_feed_records(4)
        feed_a = write_feed(tmp_path, records, "a.jsonl")
        feed_b = write_feed(tmp_path, records[:2], "b.jsonl")
        out = tmp_path / "corpus.jsonl"
        result = runner.invoke(cli, ["ingest", str(feed_a), str(feed_b), "-o", str(out)])
        assert result.exit_code == 0
        assert "deduplicated 2" in result.output
        assert len(out.read_text().splitlines()) == 4

    def test_rerun_is_byte_identical(self, runner, tmp_path):
        feed = write_feed(tmp_path, small_feed_records(6))
        out = tmp_path / "corpus.jsonl"
        runner.invoke(cli, ["ingest", str(feed), "-o", str(out)])
        first = out.read_bytes()
        runner.invoke(cli, ["ingest", str(feed), "-o", str(out)])
        assert out.read_bytes() == first


class TestPrerequisites:
    def test_build_map_missing_corpus_exits_three(self, runner, tmp_path):
        result = runner.invoke(
            cli, ["build-map", "--corpus", str(tmp_path / "absent.jsonl")]
        )
        assert result.exit_code == 3
        assert "corpus file" in result.output

    def test_augment_missing_model_exits_three(self, runner, tmp_path):
        feed = write_feed(tmp_path, small_feed_records(3))
        corpus = tmp_path / "corpus.jsonl"
        runner.invoke(cli, ["ingest", str(feed), "-o", str(corpus)])
        result = runner.invoke(
            cli,
            ["augment", "--corpus", str(corpus), "--map", str(tmp_path / "m.tsv"),
             "--embed", str(tmp_path / "e.bin"), "--corr", str(tmp_path / "c.bin")],
        )
        assert result.exit_code == 3
        assert "mapping file" in result.output


class TestCost:
    def test_effective_case(self, runner):
        result = runner.invoke(cli, ["cost", "--n", "2", "--x", "0.6"])
        assert result.exit_code == 0
        assert "e_not=2.0" in result.output
        assert "e_aug=1.8" in result.output
        assert "verdict=effective" in result.output

    def test_boundary_breaks_even(self, runner):
        result = runner.invoke(cli, ["cost", "--n", "2", "--x", "0.5"])
        assert "e_aug=2.0" in result.output
        assert "verdict=break-even" in result.output

    def test_bad_accuracy_exits_two(self, runner):
        result = runner.invoke(cli, ["cost", "--n", "2", "--x", "1.5"])
        assert result.exit_code == 2


class TestStats:
    def test_matches_corpus_oracles(self, runner, tmp_path):
        records = small_feed_records(9)
        feed = write_feed(tmp_path, records)
        corpus = tmp_path / "corpus.jsonl"
        runner.invoke(cli, ["ingest", str(feed), "-o", str(corpus)])
        out = tmp_path / "stats.json"
        result = runner.invoke(
            cli, ["stats", "--corpus", str(corpus), "--threshold", "2", "-o", str(out)]
        )
        assert result.exit_code == 0
        report = json.loads(out.read_text())
        # 9 records spread over widget0..widget2 -> counts 3,3,3 at threshold 2
        assert report["counts"] == {"widget0": 3, "widget1": 3, "widget2": 3}
        assert report["non_long_tail"] == ["widget0", "widget1", "widget2"]
        assert report["gini"] == pytest.approx(0.0)
        assert "gini=0.0" in result.output


class TestPipelineCommands:
    def test_full_chain_and_augment_determinism(self, runner, tmp_path):
        corpus, mapping, embedding, correlation = build_artifacts(
            runner, tmp_path, small_feed_records(12)
        )
        out = tmp_path / "augmented.jsonl"
        args = [
            "--seed", "11", "augment",
            "--corpus", str(corpus), "--map", str(mapping),
            "--embed", str(embedding), "--corr", str(correlation),
            "--rounds", "2", "-o", str(out),
        ]
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, result.output
        first = out.read_bytes()
        lines = [json.loads(line) for line in out.read_text().splitlines()]
        # 4 of 12 records lack attacker type
        assert len(lines) == 4
        assert all(line["aspect"] == "attacker_type" for line in lines)
        result = runner.invoke(cli, args)
        assert result.exit_code == 0
        assert out.read_bytes() == first

    def test_augment_jobs_flag_keeps_output_stable(self, runner, tmp_path):
        corpus, mapping, embedding, correlation = build_artifacts(
            runner, tmp_path, small_feed_records(12)
        )
        out_a = tmp_path / "serial.jsonl"
        out_b = tmp_path / "parallel.jsonl"
        common = [
            "augment", "--corpus", str(corpus), "--map", str(mapping),
            "--embed", str(embedding), "--corr", str(correlation), "--rounds", "2",
        ]
        assert runner.invoke(cli, common + ["-o", str(out_a)]).exit_code == 0
        assert runner.invoke(cli, ["--jobs", "4"] + common + ["-o", str(out_b)]).exit_code == 0
        assert out_a.read_bytes() == out_b.read_bytes()

    def test_evaluate_with_oracle_backend(self, runner, tmp_path):
        corpus_obj, _, testset = masked_eval_fixture(8)
        records = list(corpus_obj)
        corpus, mapping, embedding, correlation = build_artifacts(runner, tmp_path, records)
        testset_path = tmp_path / "testset.jsonl"
        lines = []
        for masked, kind, label in testset:
            obj = masked.to_json_obj()
            obj["masked_aspect"] = kind.json_key
            obj["label"] = label
            lines.append(json.dumps(obj, ensure_ascii=False, sort_keys=True))
        testset_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        prefix = tmp_path / "report"
        result = runner.invoke(
            cli,
            ["--backend", "oracle", "evaluate",
             "--corpus", str(corpus), "--map", str(mapping),
             "--embed", str(embedding), "--corr", str(correlation),
             "--testset", str(testset_path), "-o", str(prefix)],
        )
        assert result.exit_code == 0, result.output
        assert (prefix.with_suffix(".txt")).exists()
        assert (prefix.with_suffix(".csv")).exists()
        rows = [json.loads(line) for line in prefix.with_suffix(".jsonl").read_text().splitlines()]
        assert rows and all(row["mean_f1"] == 1.0 for row in rows)

    def test_build_map_resolves_struts(self, runner, tmp_path):
        feed = write_feed(tmp_path, struts_gov_records(), "gov.jsonl")
        corpus = tmp_path / "corpus.jsonl"
        mapping_path = tmp_path / "mapping.tsv"
        runner.invoke(cli, ["ingest", str(feed), "-o", str(corpus)])
        result = runner.invoke(cli, ["build-map", "--corpus", str(corpus), "-o", str(mapping_path)])
        assert result.exit_code == 0
        content = mapping_path.read_text()
        assert "Apache Struts\tCVE-2017-9805,CVE-2018-11776" in content

    def test_augment_dump_examples_flag(self, runner, tmp_path):
        corpus, mapping, embedding, correlation = build_artifacts(
            runner, tmp_path, small_feed_records(12)
        )
        out = tmp_path / "augmented.jsonl"
        result = runner.invoke(
            cli,
            ["augment", "--corpus", str(corpus), "--map", str(mapping),
             "--embed", str(embedding), "--corr", str(correlation),
             "--rounds", "1", "--dump-examples", "-o", str(out)],
        )
        assert result.exit_code == 0, result.output
        lines = [json.loads(line) for line in out.read_text().splitlines()]
        assert all("example_cves" in line for line in lines)
        assert all(len(line["example_cves"]) == line["examples"] for line in lines)

    def test_augment_with_oracle_answer_file(self, runner, tmp_path):
        records = small_feed_records(12)
        corpus, mapping, embedding, correlation = build_artifacts(runner, tmp_path, records)
        answers = {rec.cve_id: "remote attackers" for rec in records}
        answers_path = tmp_path / "answers.json"
        answers_path.write_text(json.dumps(answers))
        out = tmp_path / "augmented.jsonl"
        result = runner.invoke(
            cli,
            ["augment", "--corpus", str(corpus), "--map", str(mapping),
             "--embed", str(embedding), "--corr", str(correlation),
             "--backend", "oracle", "--oracle-answers", str(answers_path),
             "--rounds", "1", "-o", str(out)],
        )
        assert result.exit_code == 0, result.output
        lines = [json.loads(line) for line in out.read_text().splitlines()]
        assert lines and all(line["answer"] == "remote attackers" for line in lines)

    def test_evaluate_masks_aspect_on_the_fly(self, runner, tmp_path):
        corpus, mapping, embedding, correlation = build_artifacts(
            runner, tmp_path, small_feed_records(12)
        )
        prefix = tmp_path / "report"
        result = runner.invoke(
            cli,
            ["--backend", "oracle", "evaluate",
             "--corpus", str(corpus), "--map", str(mapping),
             "--embed", str(embedding), "--corr", str(correlation),
             "--aspect", "impact", "-o", str(prefix)],
        )
        assert result.exit_code == 0, result.output
        rows = [json.loads(line) for line in prefix.with_suffix(".jsonl").read_text().splitlines()]
        assert rows and all(row["aspect"] == "impact" for row in rows)
        assert all(row["mean_f1"] == 1.0 for row in rows)


class TestRunConfig:
    def test_defaults_match_pipeline_constants(self):
        from vulnaug.cli import RunConfig

        cfg = RunConfig()
        assert cfg.example_limit == 30
        assert cfg.rounds == 5
        assert cfg.long_tail_threshold == 50
        assert cfg.neg_ratio == 2

    def test_config_file_overridden_by_flags(self, runner, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"seed": 5, "backend": "echo"}))
        result = runner.invoke(
            cli, ["--config", str(config), "--backend", "mock", "cost", "--n", "3", "--x", "0.9"]
        )
        assert result.exit_code == 0

    def test_unknown_config_key_rejected(self, runner, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"bogus": 1}))
        result = runner.invoke(cli, ["--config", str(config), "cost", "--n", "2", "--x", "0.9"])
        assert result.exit_code != 0
