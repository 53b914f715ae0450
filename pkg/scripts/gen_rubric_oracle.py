#!/usr/bin/env python3
"""Regenerate tests/golden/rubric_oracle.csv.

Straight-line transcription of the 7-tier rating rules, kept independent of
halluqa.scoring on purpose: the acceptance suite diffs the production scorer
against this table over every (A, R, M, E) in [0, 5]^4 for a 3-object prompt.
"""

from itertools import product
from pathlib import Path

N_OBJECTS = 3


def rubric_points(a: int, r: int, m: int, e: int, n_objects: int = N_OBJECTS) -> int:
    # tier 1: off-topic, operationalized as every mentioned object absent
    if n_objects > 0 and m == n_objects:
        return 1
    # tier 2: more than two missing objects or relationship errors
    if m + r > 2:
        return 2
    # tier 3: two or fewer missing objects or relationship errors
    if 1 <= m + r <= 2:
        return 3
    # tier 4: more than two object attribute errors
    if a > 2:
        return 4
    # tier 5: two or less object attribute errors
    if 1 <= a <= 2:
        return 5
    # tier 6: objects not mentioned in the text
    if e >= 1:
        return 6
    # tier 7: perfect alignment
    return 7


def main():
    out = Path(__file__).resolve().parent.parent / "tests" / "golden" / "rubric_oracle.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["attribute,relation,omission,extraneous,points"]
    for a, r, m, e in product(range(6), repeat=4):
        lines.append(f"{a},{r},{m},{e},{rubric_points(a, r, m, e)}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out} ({len(lines) - 1} rows)")


if __name__ == "__main__":
    main()
