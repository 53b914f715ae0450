#!/usr/bin/env python3
"""Regenerate tests/golden/corpus_triples.jsonl from the bundled corpus.

Run after any deliberate grammar or lexicon change, then REVIEW THE DIFF by
hand: the goldens pin parser behaviour, they do not define it.
"""

import json
from pathlib import Path

from halluqa.pipeline import load_corpus
from halluqa.prompt_parser import parse_prompt, triple_to_dict, triples_of


def main():
    out = Path(__file__).resolve().parent.parent / "tests" / "golden" / "corpus_triples.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for pid, text in load_corpus():
        spec = parse_prompt(pid, text)
        lines.append(
            json.dumps(
                {
                    "prompt_id": pid,
                    "text": text,
                    "triples": [triple_to_dict(t) for t in triples_of(spec)],
                },
                sort_keys=True,
                ensure_ascii=False,
            )
        )
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out} ({len(lines)} prompts)")


if __name__ == "__main__":
    main()
