import json

import pytest
from click.testing import CliRunner

from ladderscore.backend import BackendKind, MockBackend
from ladderscore.cli import (
    RunConfig,
    build_backend,
    load_config,
    main,
    run_axis_corr,
    run_generate,
    run_metaeval,
    run_score,
    run_validate,
)
from ladderscore.core import DatasetKind
from ladderscore.metaeval import CorrelationLevel
from ladderscore.scorer import ScoreVariant


def write_config(tmp_path, dataset_path, **run_overrides):
    run = {
        "seed": 7,
        "n": 3,
        "dimensions": ["coherence", "fluency"],
        "cache_dir": str(tmp_path / "cache"),
        "out_dir": str(tmp_path / "out"),
    }
    run.update(run_overrides)
    run_lines = []
    for key, value in run.items():
        if isinstance(value, list):
            rendered = "[" + ", ".join(json.dumps(v) for v in value) + "]"
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, (int, float)):
            rendered = str(value)
        else:
            rendered = json.dumps(value)
        run_lines.append(f"{key} = {rendered}")
    body = "\n".join(
        [
            "[backend]",
            'kind = "mock"',
            'model = "mock-model"',
            "",
            "[dataset]",
            'kind = "summarization"',
            f'path = "{dataset_path}"',
            "",
            "[run]",
            *run_lines,
        ]
    )
    path = tmp_path / "config.toml"
    path.write_text(body, encoding="utf-8")
    return path


class TestLoadConfig:
    def test_parses_sections(self, tmp_path, summeval_fixture):
        path = write_config(tmp_path, summeval_fixture, variant="sampled", n_samples=10)
        config = load_config(path)
        assert config.backend_kind is BackendKind.MOCK
        assert config.dataset_kind is DatasetKind.SUMMARIZATION
        assert config.seed == 7
        assert config.n == 3
        assert config.variant is ScoreVariant.SAMPLED
        assert config.n_samples == 10
        assert config.dimensions == ("coherence", "fluency")

    def test_seed_required(self, tmp_path, summeval_fixture):
        path = tmp_path / "bad.toml"
        path.write_text(
            "[backend]\nkind = \"mock\"\n[dataset]\nkind = \"summarization\"\n"
            f"path = \"{summeval_fixture}\"\n[run]\nn = 3\n"
        )
        with pytest.raises(KeyError):
            load_config(path)

    def test_overrides_win(self, tmp_path, summeval_fixture):
        path = write_config(tmp_path, summeval_fixture)
        config = load_config(path, {"n": 5, "seed": 99, "model": None})
        assert config.n == 5
        assert config.seed == 99
        assert config.model == "mock-model"  # None override ignored

    def test_invalid_n_rejected(self, tmp_path, summeval_fixture):
        path = write_config(tmp_path, summeval_fixture, n=1)
        with pytest.raises(ValueError):
            load_config(path)


class TestBuildBackend:
    def test_mock_by_default(self, tmp_path, summeval_fixture):
        config = load_config(write_config(tmp_path, summeval_fixture))
        assert isinstance(build_backend(config), MockBackend)


class TestRunGenerate:
    def test_writes_references_and_no_failures(self, tmp_path, summeval_fixture):
        config = load_config(write_config(tmp_path, summeval_fixture))
        failures = run_generate(config)
        assert failures == []
        lines = (tmp_path / "out" / "references.jsonl").read_text().splitlines()
        # 2 docs x 2 dims x n=3 rungs
        assert len(lines) == 12
        assert not (tmp_path / "out" / "generate_failures.json").exists()

    def test_warm_rerun_is_byte_identical_with_zero_calls(self, tmp_path, summeval_fixture):
        config = load_config(write_config(tmp_path, summeval_fixture))
        run_generate(config, backend=MockBackend(seed=7))
        first = (tmp_path / "out" / "references.jsonl").read_bytes()
        warm = MockBackend(seed=7)
        run_generate(config, backend=warm)
        assert warm.call_count == 0
        assert (tmp_path / "out" / "references.jsonl").read_bytes() == first

    def test_failures_recorded_not_fatal(self, tmp_path, summeval_fixture):
        config = load_config(write_config(tmp_path, summeval_fixture))

        def flaky(prompt):
            if "doc-1" in prompt:
                raise RuntimeError("backend down")
            return f"text for {len(prompt)}"

        failures = run_generate(config, backend=MockBackend(completion_fn=flaky))
        assert {c for c, _, _ in failures} == {"doc-1"}
        manifest = json.loads(
            (tmp_path / "out" / "generate_failures.json").read_text()
        )
        assert all("backend down" in entry["error"] for entry in manifest)
        # the healthy document still produced its ladders
        lines = (tmp_path / "out" / "references.jsonl").read_text().splitlines()
        assert len(lines) == 6


class TestRunScore:
    def test_requires_generate_first(self, tmp_path, summeval_fixture):
        config = load_config(write_config(tmp_path, summeval_fixture))
        failures = run_score(config)
        assert failures  # every item fails with a missing-reference error
        assert all("run generate first" in err for _, _, _, err in failures)

    def test_scores_every_candidate(self, tmp_path, summeval_fixture):
        config = load_config(write_config(tmp_path, summeval_fixture))
        run_generate(config)
        failures = run_score(config)
        assert failures == []
        rows = [
            json.loads(line)
            for line in (tmp_path / "out" / "scores.jsonl").read_text().splitlines()
        ]
        # 2 docs x 3 systems x 2 dims
        assert len(rows) == 12
        for row in rows:
            assert abs(row["final"]) <= 6.0  # n=3 bound
            assert len(row["per_reference"]) == 3

    def test_warm_rerun_zero_calls_and_identical_bytes(self, tmp_path, summeval_fixture):
        config = load_config(write_config(tmp_path, summeval_fixture))
        run_generate(config)
        run_score(config, backend=MockBackend(seed=7))
        first = (tmp_path / "out" / "scores.jsonl").read_bytes()
        warm = MockBackend(seed=7)
        run_score(config, backend=warm)
        assert warm.call_count == 0
        assert (tmp_path / "out" / "scores.jsonl").read_bytes() == first


class TestRunMetaeval:
    def make_scored(self, tmp_path, summeval_fixture, **overrides):
        config = load_config(write_config(tmp_path, summeval_fixture, **overrides))
        run_generate(config)
        run_score(config)
        return config

    def test_reports_and_files(self, tmp_path, summeval_fixture):
        config = self.make_scored(
            tmp_path,
            summeval_fixture,
            levels=["sample", "system", "summary"],
            impute_zero=True,
        )
        result = run_metaeval(config)
        assert len(result["reports"]) == 2 * 3  # dims x levels
        assert (tmp_path / "out" / "metaeval.json").exists()
        csv_lines = (tmp_path / "out" / "metaeval.csv").read_text().splitlines()
        assert csv_lines[0] == "level,coherence,fluency,AVG"
        assert [line.split(",")[0] for line in csv_lines[1:]] == [
            "sample",
            "system",
            "summary",
        ]

    def test_missing_scores_file_raises(self, tmp_path, summeval_fixture):
        config = load_config(write_config(tmp_path, summeval_fixture))
        with pytest.raises(FileNotFoundError):
            run_metaeval(config)

    def test_orphan_predictions_rejected(self, tmp_path, summeval_fixture):
        config = self.make_scored(tmp_path, summeval_fixture, impute_zero=True)
        scores_path = tmp_path / "out" / "scores.jsonl"
        rows = [json.loads(line) for line in scores_path.read_text().splitlines()]
        rows[0]["context_id"] = "ghost-doc"
        scores_path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        with pytest.raises(ValueError, match="alignment"):
            run_metaeval(config)


class TestRunAxisCorr:
    def test_matrix_written(self, tmp_path, summeval_fixture):
        config = load_config(
            write_config(tmp_path, summeval_fixture, impute_zero=True)
        )
        axes, matrix = run_axis_corr(config)
        assert axes == ["coherence", "consistency", "fluency", "relevance"]
        assert len(matrix) == 4
        assert all(matrix[i][i] == pytest.approx(1.0) for i in range(4))
        csv_lines = (tmp_path / "out" / "axis_corr.csv").read_text().splitlines()
        assert csv_lines[0] == "axis,coherence,consistency,fluency,relevance"
        assert len(csv_lines) == 5


class TestRunValidate:
    def test_clean_fixture_ok(self, tmp_path, summeval_fixture):
        config = load_config(write_config(tmp_path, summeval_fixture))
        assert run_validate(config).ok


class TestCliCommands:
    def test_help_lists_subcommands(self):
        result = CliRunner().invoke(main, ["--help"])
        assert result.exit_code == 0
        for name in ("generate", "score", "metaeval", "axis-corr", "validate"):
            assert name in result.output

    def test_generate_then_score_exit_codes(self, tmp_path, summeval_fixture):
        config_path = write_config(tmp_path, summeval_fixture)
        runner = CliRunner()
        gen = runner.invoke(main, ["generate", "--config", str(config_path)])
        assert gen.exit_code == 0, gen.output
        score = runner.invoke(main, ["score", "--config", str(config_path)])
        assert score.exit_code == 0, score.output

    def test_score_without_generate_fails(self, tmp_path, summeval_fixture):
        config_path = write_config(tmp_path, summeval_fixture)
        result = CliRunner().invoke(main, ["score", "--config", str(config_path)])
        assert result.exit_code == 1

    def test_flag_overrides_config(self, tmp_path, summeval_fixture):
        config_path = write_config(tmp_path, summeval_fixture)
        runner = CliRunner()
        runner.invoke(main, ["generate", "--config", str(config_path), "--n", "2"])
        lines = (tmp_path / "out" / "references.jsonl").read_text().splitlines()
        # 2 docs x 2 dims x n=2 rungs
        assert len(lines) == 8

    def test_metaeval_command_prints_rows(self, tmp_path, summeval_fixture):
        config_path = write_config(tmp_path, summeval_fixture, impute_zero=True)
        runner = CliRunner()
        runner.invoke(main, ["generate", "--config", str(config_path)])
        runner.invoke(main, ["score", "--config", str(config_path)])
        result = runner.invoke(main, ["metaeval", "--config", str(config_path)])
        assert result.exit_code == 0, result.output
        assert "coherence" in result.output and "sample" in result.output

    def test_validate_command(self, tmp_path, summeval_fixture):
        config_path = write_config(tmp_path, summeval_fixture)
        result = CliRunner().invoke(main, ["validate", "--config", str(config_path)])
        assert result.exit_code == 0
        assert "OK" in result.output


class TestDeterminism:
    def test_fresh_cache_reproduces_outputs(self, tmp_path, summeval_fixture):
        outputs = []
        for tag in ("a", "b"):
            base = tmp_path / tag
            base.mkdir()
            config = load_config(
                write_config(
                    base,
                    summeval_fixture,
                    cache_dir=str(base / "cache"),
                    out_dir=str(base / "out"),
                )
            )
            run_generate(config)
            run_score(config)
            outputs.append(
                (
                    (base / "out" / "references.jsonl").read_bytes(),
                    (base / "out" / "scores.jsonl").read_bytes(),
                )
            )
        assert outputs[0] == outputs[1]
