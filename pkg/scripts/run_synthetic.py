#!/usr/bin/env python3
"""End-to-end demo on a synthetic corpus: built-in provider, offline guidance
completion, mock LLM echoing the provider verdict. Writes prompts, results,
and the manifest under the chosen output directory and prints the report.

Usage: python scripts/run_synthetic.py [--out runs/demo] [--seed 0]
       [--mode composite|role|auxiliary|cot2step]
"""

import argparse
import tempfile
from pathlib import Path

from vulnprompt.corpus import save_corpus
from vulnprompt.evalharness import RunConfig, emit_report, run_pipeline
from vulnprompt.llmclient import LlmConfig
from vulnprompt.modelplug import ProviderConfig
from vulnprompt.synthetic import make_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", default="composite",
                    choices=["composite", "role", "auxiliary", "cot2step"])
    args = ap.parse_args()

    corpus_path = Path(tempfile.mkdtemp(prefix="vulnprompt-")) / "synthetic.jsonl"
    save_corpus(make_corpus(seed=args.seed), corpus_path)

    config = RunConfig(
        corpus_path=str(corpus_path),
        provider=ProviderConfig(kind="builtin", location="auto"),
        llm=LlmConfig(transport="mock"),
        prompt_mode=args.mode,
        seed=args.seed,
        mock_policy="echo-provider",
        output_dir=args.out,
    )
    result = run_pipeline(config)
    rows = [(args.mode, p, r) for p, r in sorted(result.by_project.items())]
    print(emit_report(rows, format="markdown"))
    print(f"outputs under {args.out}/ (results.jsonl, prompts/, manifest.json)")


if __name__ == "__main__":
    main()
