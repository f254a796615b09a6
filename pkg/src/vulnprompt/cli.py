"""Command-line surface: ingest, index, train-model, scan-import,
taxonomy check, prompt dump, run, report."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import evalharness, simindex, staticscan
from .modelplug import TrainConfig, train_builtin
from .taxonomy import load_library


@click.group()
def main() -> None:
    """Detection-model-augmented prompt synthesis for vulnerability detection."""


@main.command()
@click.argument("corpus_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--undersample-ratio", type=float, default=None, help="Benign records kept per vulnerable one.")
@click.option("--train-fraction", type=float, default=None, help="Split and write train/test files.")
@click.option("--seed", type=int, default=0)
@click.option("--out-train", type=click.Path(dir_okay=False), default=None)
@click.option("--out-test", type=click.Path(dir_okay=False), default=None)
def ingest(corpus_path, undersample_ratio, train_fraction, seed, out_train, out_test):
    """Validate a corpus file; optionally undersample and split it."""
    corpus = corpus_mod.load_corpus(corpus_path)
    counts = corpus.label_counts()
    click.echo(f"loaded {len(corpus)} records ({counts[1]} vulnerable, {counts[0]} benign)")
    if undersample_ratio is not None:
        corpus = corpus_mod.undersample(corpus, ratio=undersample_ratio, seed=seed)
        counts = corpus.label_counts()
        click.echo(
            f"undersampled to {len(corpus)} records "
            f"({counts[1]} vulnerable, {counts[0]} benign)"
        )
    if train_fraction is not None:
        if not (out_train and out_test):
            raise click.UsageError("--train-fraction needs --out-train and --out-test")
        ds = corpus_mod.split(corpus, train_fraction=train_fraction, seed=seed)
        corpus_mod.save_corpus(ds.train, out_train)
        corpus_mod.save_corpus(ds.test, out_test)
        click.echo(f"split {len(ds.train)} train / {len(ds.test)} test (seed {seed})")


@main.command()
@click.argument("corpus_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
@click.option("--shingle-k", type=int, default=simindex.DEFAULT_SHINGLE_K, show_default=True)
@click.option("--signature-n", type=int, default=simindex.DEFAULT_SIGNATURE_LENGTH, show_default=True)
@click.option("--bands", type=int, default=simindex.DEFAULT_BANDS, show_default=True)
@click.option("--rows", type=int, default=simindex.DEFAULT_ROWS_PER_BAND, show_default=True)
@click.option("--seed", type=int, default=0)
def index(corpus_path, output, shingle_k, signature_n, bands, rows, seed):
    """Build a similarity index over a corpus and persist it."""
    corpus = corpus_mod.load_corpus(corpus_path)
    params = simindex.IndexParams(k=shingle_k, n=signature_n, b=bands, r=rows, seed=seed)
    idx = simindex.build_index(((rec.id, rec.source) for rec in corpus), params=params)
    simindex.save_index(idx, output)
    click.echo(f"indexed {len(corpus)} entries -> {output}")


@main.command("train-model")
@click.argument("corpus_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
@click.option("--epochs", type=int, default=TrainConfig.epochs, show_default=True)
@click.option("--learning-rate", type=float, default=TrainConfig.learning_rate, show_default=True)
@click.option("--l2", type=float, default=TrainConfig.l2, show_default=True)
@click.option("--seed", type=int, default=0)
def train_model(corpus_path, output, epochs, learning_rate, l2, seed):
    """Train the built-in token-count logistic classifier."""
    corpus = corpus_mod.load_corpus(corpus_path)
    classifier = train_builtin(
        corpus, TrainConfig(epochs=epochs, learning_rate=learning_rate, l2=l2, seed=seed)
    )
    classifier.save(output)
    click.echo(
        f"trained on {len(corpus)} records, vocabulary {classifier.manifest.vocab_size}, "
        f"final loss {classifier.loss_history[-1]:.4f} -> {output}"
    )


@main.command("scan-import")
@click.option("--flawfinder", "flawfinder_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--cppcheck", "cppcheck_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("-o", "--output", type=click.Path(dir_okay=False), required=True)
def scan_import(flawfinder_path, cppcheck_path, output):
    """Parse saved analyzer reports into canonical findings (JSON-Lines)."""
    if not flawfinder_path and not cppcheck_path:
        raise click.UsageError("provide --flawfinder and/or --cppcheck report files")
    findings = []
    if flawfinder_path:
        findings.extend(
            staticscan.parse_flawfinder(Path(flawfinder_path).read_text(encoding="utf-8"))
        )
    if cppcheck_path:
        findings.extend(
            staticscan.parse_cppcheck(Path(cppcheck_path).read_text(encoding="utf-8"))
        )
    Path(output).write_text(staticscan.findings_to_jsonl(findings), encoding="utf-8")
    click.echo(f"imported {len(findings)} findings -> {output}")


@main.group()
def taxonomy() -> None:
    """Guidance-library utilities."""


@taxonomy.command()
@click.option("--library", "library_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--category-map", "map_path", type=click.Path(exists=True, dir_okay=False), default=None)
def check(library_path, map_path):
    """Validate a guidance library (and its category-map consistency)."""
    library = load_library(library_path)
    mapping = staticscan.load_category_map(map_path)
    problems = []
    for cwe, category in mapping.get("cwe_to_category", {}).items():
        if library.node(category) is None:
            problems.append(f"CWE-{cwe} maps to unknown category {category!r}")
    for rule, category in mapping.get("rule_to_category", {}).items():
        if library.node(category) is None:
            problems.append(f"rule {rule!r} maps to unknown category {category!r}")
    if problems:
        for p in problems:
            click.echo(f"error: {p}", err=True)
        sys.exit(1)
    subs = sum(1 for n in library.nodes.values() if n.parent is not None)
    click.echo(
        f"library {library.version!r} ok: {len(library.majors)} major categories, "
        f"{subs} subcategories, mapping consistent"
    )


@main.group()
def prompt() -> None:
    """Prompt-construction utilities."""


@prompt.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("-o", "--output-dir", type=click.Path(file_okay=False), required=True)
def dump(config_path, output_dir):
    """Assemble prompts for the configured run and write them out for audit."""
    config = evalharness.run_config_from_json(config_path)
    config = _with_output_dir(config, output_dir)
    result = evalharness.run_pipeline(config)
    click.echo(f"dumped {len(result.samples)} prompts under {output_dir}/prompts")


def _with_output_dir(config: evalharness.RunConfig, output_dir: str) -> evalharness.RunConfig:
    from dataclasses import replace

    return replace(config, output_dir=output_dir)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("-o", "--output-dir", type=click.Path(file_okay=False), default=None)
@click.option("--format", "report_format", type=click.Choice(["markdown", "csv"]), default="markdown")
def run(config_path, output_dir, report_format):
    """Run the full detection pipeline and print the metrics report."""
    config = evalharness.run_config_from_json(config_path)
    if output_dir:
        config = _with_output_dir(config, output_dir)
    result = evalharness.run_pipeline(config)
    rows = [
        (config.prompt_mode, project, report)
        for project, report in sorted(result.by_project.items())
    ]
    click.echo(evalharness.emit_report(rows, format=report_format), nl=False)
    if result.report.notes:
        click.echo("conventions: " + "; ".join(result.report.notes))


@main.command()
@click.argument("results_paths", type=click.Path(exists=True, dir_okay=False), nargs=-1, required=True)
@click.option("--format", "report_format", type=click.Choice(["markdown", "csv"]), default="markdown")
@click.option("--unparseable-as-positive", is_flag=True, default=False,
              help="Count unparseable verdicts as Yes instead of No.")
def report(results_paths, report_format, unparseable_as_positive):
    """Re-score stored per-sample results and render the metrics table."""
    samples = []
    for path in results_paths:
        samples.extend(evalharness.load_results(path))
    rows = evalharness.rescore(
        samples, unparseable_policy="yes" if unparseable_as_positive else "no"
    )
    click.echo(evalharness.emit_report(rows, format=report_format), nl=False)


if __name__ == "__main__":
    main()
