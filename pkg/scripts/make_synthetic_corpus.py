#!/usr/bin/env python3
"""Write a deterministic synthetic corpus as JSON-Lines.

Usage: python scripts/make_synthetic_corpus.py out.jsonl [--families 5]
       [--members 10] [--seed 0]
"""

import argparse

from vulnprompt.corpus import save_corpus
from vulnprompt.synthetic import make_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("output")
    ap.add_argument("--families", type=int, default=5)
    ap.add_argument("--members", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    corpus = make_corpus(families=args.families, members=args.members, seed=args.seed)
    save_corpus(corpus, args.output)
    counts = corpus.label_counts()
    print(
        f"wrote {len(corpus)} records ({counts[1]} vulnerable, {counts[0]} benign) "
        f"to {args.output}"
    )


if __name__ == "__main__":
    main()
