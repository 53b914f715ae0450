"""Aggregate QA results into per-image hallucination reports and rubric scores.

The 7-tier rubric is evaluated strictly top-down, so severe tiers shadow
milder ones: total omission, then missing-or-relation errors, then attribute
errors, then extraneous objects, then a perfect 7.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graph_qa import ERROR_TYPES, Finding, QAResult
from .prompt_parser import PromptSpec
from .question_gen import Question


class MissingResults(ValueError):
    """A generated question has no QA result."""

    def __init__(self, question_ids: list[str]):
        self.question_ids = list(question_ids)
        super().__init__(f"missing results for {', '.join(self.question_ids)}")


@dataclass(frozen=True)
class HallucinationReport:
    image_id: str
    counts: dict[str, int]
    findings: tuple[Finding, ...]

    def __post_init__(self):
        expected = {t: 0 for t in ERROR_TYPES}
        for f in self.findings:
            expected[f.error_type] += 1
        if expected != dict(self.counts):
            raise ValueError(f"counts {self.counts} disagree with findings {expected}")

    @property
    def total_errors(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class Score:
    points: int
    normalized: float

    def __post_init__(self):
        if not 1 <= self.points <= 7:
            raise ValueError(f"points {self.points} outside 1..7")
        if abs(self.normalized - (self.points - 1) / 6.0) > 1e-12:
            raise ValueError("normalized score inconsistent with points")


def make_score(points: int) -> Score:
    return Score(points=points, normalized=(points - 1) / 6.0)


def build_report(
    results: list[QAResult],
    extraneous: list[Finding],
    spec: PromptSpec,
    image_id: str,
    questions: list[Question] | None = None,
) -> HallucinationReport:
    """Tally findings by error type, deduplicated per (type, target, expected).

    When the generated questions are supplied, every question must have a
    result (MissingResults otherwise).
    """
    if questions is not None:
        have = {r.question_id for r in results}
        missing = [q.question_id for q in questions if q.question_id not in have]
        if missing:
            raise MissingResults(missing)

    findings: list[Finding] = []
    seen: set[tuple[str, str, str]] = set()

    def add(f: Finding):
        key = (f.error_type, f.target, f.expected)
        if key not in seen:
            seen.add(key)
            findings.append(f)

    for r in results:
        if r.error_type is None:
            continue
        add(
            Finding(
                error_type=r.error_type,
                target=r.target or "",
                expected=r.expected or "",
                observed=r.predicted,
                question_id=r.question_id,
            )
        )
    for f in extraneous:
        add(f)

    counts = {t: 0 for t in ERROR_TYPES}
    for f in findings:
        counts[f.error_type] += 1
    return HallucinationReport(image_id=image_id, counts=counts, findings=tuple(findings))


def score(report: HallucinationReport, spec: PromptSpec) -> Score:
    """Rule-based 7-tier rating, tiers evaluated in order of severity.

    Tier 1 (off-topic) is operationalized as every distinct prompt object
    missing; omissions are counted per lemma, so duplicate mentions collapse.
    """
    a = report.counts["attribute"]
    r = report.counts["relation"]
    m = report.counts["omission"]
    e = report.counts["extraneous"]
    n_objects = len(set(spec.object_lemmas()))

    if n_objects > 0 and m == n_objects:
        return make_score(1)
    if m + r > 2:
        return make_score(2)
    if m + r >= 1:
        return make_score(3)
    if a > 2:
        return make_score(4)
    if a >= 1:
        return make_score(5)
    if e >= 1:
        return make_score(6)
    return make_score(7)


def normalize_batch(scores: list[Score]) -> list[float]:
    """Normalized values in batch order; the single home of the convention."""
    return [s.normalized for s in scores]


def report_to_dict(report: HallucinationReport, s: Score | None = None) -> dict:
    doc = {
        "image_id": report.image_id,
        "counts": dict(report.counts),
        "findings": [
            {
                "error_type": f.error_type,
                "target": f.target,
                "expected": f.expected,
                "observed": f.observed,
                "question_id": f.question_id,
                "detail": f.detail(),
            }
            for f in report.findings
        ],
    }
    if s is not None:
        doc["points"] = s.points
        doc["normalized"] = s.normalized
    return doc
