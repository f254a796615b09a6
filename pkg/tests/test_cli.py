import json
from pathlib import Path

from click.testing import CliRunner

from vulnprompt.cli import main
from vulnprompt.corpus import load_corpus, save_corpus
from vulnprompt.modelplug import BuiltinClassifier
from vulnprompt.simindex import load_index
from vulnprompt.staticscan import findings_from_jsonl
from vulnprompt.synthetic import make_corpus


def _corpus_file(tmp_path: Path, seed=0) -> Path:
    path = tmp_path / "corpus.jsonl"
    save_corpus(make_corpus(seed=seed), path)
    return path


def _run_config(tmp_path: Path) -> Path:
    doc = {
        "corpus_path": str(_corpus_file(tmp_path)),
        "provider": {"kind": "builtin", "location": "auto"},
        "llm": {"transport": "mock", "max_in_flight": 1},
        "mock_policy": "echo-provider",
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_ingest_reports_counts(tmp_path):
    runner = CliRunner()
    result = runner.invoke(main, ["ingest", str(_corpus_file(tmp_path))])
    assert result.exit_code == 0, result.output
    assert "loaded 50 records" in result.output


def test_ingest_split_writes_files(tmp_path):
    runner = CliRunner()
    out_train = tmp_path / "train.jsonl"
    out_test = tmp_path / "test.jsonl"
    result = runner.invoke(
        main,
        [
            "ingest", str(_corpus_file(tmp_path)),
            "--undersample-ratio", "1.0",
            "--train-fraction", "0.8",
            "--seed", "7",
            "--out-train", str(out_train),
            "--out-test", str(out_test),
        ],
    )
    assert result.exit_code == 0, result.output
    train = load_corpus(out_train)
    test = load_corpus(out_test)
    # 30 vulnerable / 20 benign: benign already below the 1.0-ratio target,
    # so undersampling keeps everything and the split is 40/10.
    assert len(train) == 40
    assert len(test) == 10
    assert train.label_counts() == {0: 16, 1: 24}


def test_index_command(tmp_path):
    runner = CliRunner()
    out = tmp_path / "code.idx"
    result = runner.invoke(main, ["index", str(_corpus_file(tmp_path)), "-o", str(out)])
    assert result.exit_code == 0, result.output
    index = load_index(out)
    assert len(index.ids) == 50


def test_train_model_command(tmp_path):
    runner = CliRunner()
    out = tmp_path / "model.json"
    result = runner.invoke(
        main,
        ["train-model", str(_corpus_file(tmp_path)), "-o", str(out), "--epochs", "30"],
    )
    assert result.exit_code == 0, result.output
    classifier = BuiltinClassifier.load(out)
    assert classifier.manifest.epochs == 30


def test_scan_import_command(tmp_path, fixtures_dir):
    runner = CliRunner()
    out = tmp_path / "findings.jsonl"
    result = runner.invoke(
        main,
        [
            "scan-import",
            "--flawfinder", str(fixtures_dir / "flawfinder_sample.csv"),
            "--cppcheck", str(fixtures_dir / "cppcheck_sample.xml"),
            "-o", str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    findings = findings_from_jsonl(out.read_text(encoding="utf-8"))
    assert len(findings) == 10
    assert {f.tool for f in findings} == {"flawfinder", "cppcheck"}


def test_taxonomy_check_ok():
    runner = CliRunner()
    result = runner.invoke(main, ["taxonomy", "check"])
    assert result.exit_code == 0, result.output
    assert "6 major categories" in result.output


def test_taxonomy_check_flags_inconsistent_map(tmp_path):
    bad_map = tmp_path / "map.json"
    bad_map.write_text(
        json.dumps({"cwe_to_category": {"120": "NOPE"}, "rule_to_category": {}}),
        encoding="utf-8",
    )
    runner = CliRunner()
    result = runner.invoke(main, ["taxonomy", "check", "--category-map", str(bad_map)])
    assert result.exit_code == 1


def test_prompt_dump_and_run_and_report(tmp_path):
    runner = CliRunner()
    config_path = _run_config(tmp_path)

    dump_dir = tmp_path / "dumped"
    result = runner.invoke(main, ["prompt", "dump", "--config", str(config_path), "-o", str(dump_dir)])
    assert result.exit_code == 0, result.output
    prompts = list((dump_dir / "prompts").glob("*.txt"))
    assert len(prompts) == 10

    run_dir = tmp_path / "run_out"
    result = runner.invoke(
        main, ["run", "--config", str(config_path), "-o", str(run_dir), "--format", "csv"]
    )
    assert result.exit_code == 0, result.output
    assert result.output.splitlines()[0].startswith("framework,project,")

    result = runner.invoke(main, ["report", str(run_dir / "results.jsonl")])
    assert result.exit_code == 0, result.output
    assert "| composite | synthetic |" in result.output
