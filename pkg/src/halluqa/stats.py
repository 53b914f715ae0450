"""Comparison statistics: mean normalized scores, rank correlations vs human
ratings, and per-error-type precision/recall/F1.

Kendall's correlation is the tie-corrected tau-b and Spearman uses mid-ranks,
because 7-point rubric scores are heavily tied.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph_qa import ERROR_TYPES, SynonymTable, default_synonyms


class DegenerateInput(ValueError):
    """Vectors too short, mismatched, or without variance on one side."""


class MissingHumanScore(KeyError):
    def __init__(self, image_ids: list[str]):
        self.image_ids = list(image_ids)
        super().__init__(f"no human score for: {', '.join(self.image_ids)}")


def _as_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if xv.ndim != 1 or yv.ndim != 1:
        raise DegenerateInput("inputs must be 1-dimensional")
    if len(xv) != len(yv):
        raise DegenerateInput(f"length mismatch: {len(xv)} vs {len(yv)}")
    if len(xv) < 2:
        raise DegenerateInput("need at least 2 observations")
    return xv, yv


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    xv, yv = _as_pair(x, y)
    dx = xv - xv.mean()
    dy = yv - yv.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInput("zero variance")
    return float((dx * dy).sum() / (sx * sy))


def kendall_tau(x, y) -> float:
    """Kendall's tau-b over all pairs, with tie correction."""
    xv, yv = _as_pair(x, y)
    n = len(xv)
    dx = np.sign(np.subtract.outer(xv, xv))
    dy = np.sign(np.subtract.outer(yv, yv))
    iu = np.triu_indices(n, k=1)
    s = float((dx[iu] * dy[iu]).sum())
    n0 = n * (n - 1) / 2
    n1 = float((dx[iu] == 0).sum())
    n2 = float((dy[iu] == 0).sum())
    denom = np.sqrt((n0 - n1) * (n0 - n2))
    if denom == 0.0:
        raise DegenerateInput("all ties on one side")
    return float(s / denom)


def midranks(v) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    arr = np.asarray(v, dtype=float)
    order = np.argsort(arr, kind="mergesort")
    ranks = np.empty(len(arr), dtype=float)
    i = 0
    while i < len(arr):
        j = i
        while j < len(arr) and arr[order[j]] == arr[order[i]]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0
        i = j
    return ranks


def spearman_rho(x, y) -> float:
    """Pearson correlation of mid-ranks."""
    xv, yv = _as_pair(x, y)
    return pearson(midranks(xv), midranks(yv))


# ---------------------------------------------------------------------------
# per-type F1 against labeled findings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabeledFinding:
    image_id: str
    error_type: str
    target: str


@dataclass(frozen=True)
class TypeScores:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False  # a zero denominator was reported as 0


def _targets_match(a: str, b: str, syn: SynonymTable) -> bool:
    pa, pb = a.split("|"), b.split("|")
    if len(pa) != len(pb):
        return False
    return all(syn.nouns_match(x, y) for x, y in zip(pa, pb))


def f1_by_type(
    predicted: list[LabeledFinding],
    gold: list[LabeledFinding],
    syn: SynonymTable | None = None,
) -> dict[str, TypeScores]:
    """Greedy (image_id, type, target) matching with synonym-normalized targets."""
    table = syn or default_synonyms()
    out: dict[str, TypeScores] = {}
    for etype in ERROR_TYPES:
        preds = [p for p in predicted if p.error_type == etype]
        golds = [g for g in gold if g.error_type == etype]
        used = [False] * len(preds)
        tp = 0
        for g in golds:
            for i, p in enumerate(preds):
                if used[i] or p.image_id != g.image_id:
                    continue
                if _targets_match(p.target, g.target, table):
                    used[i] = True
                    tp += 1
                    break
        fp = used.count(False)
        fn = len(golds) - tp
        degenerate = (tp + fp == 0) or (tp + fn == 0)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[etype] = TypeScores(precision, recall, f1, degenerate=degenerate)
    return out


# ---------------------------------------------------------------------------
# run aggregation against human scores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HumanScoreRecord:
    image_id: str
    prompt_id: str
    points: float
    annotator_id: str | None = None

    def __post_init__(self):
        if not 1 <= self.points <= 7:
            raise ValueError(f"human points {self.points} outside 1..7")


@dataclass(frozen=True)
class ImageScore:
    image_id: str
    prompt_id: str
    points: int
    normalized: float


@dataclass
class EvalRun:
    model_name: str
    n_images: int
    mean_normalized: float
    pearson: float | None
    kendall_tau: float | None
    spearman_rho: float | None
    f1_by_type: dict[str, TypeScores] = field(default_factory=dict)
    grouping: str = "pooled"  # pooled | per_prompt


def load_human_scores(path: Path | str) -> list[HumanScoreRecord]:
    """CSV columns: image_id, prompt_id, points[, annotator_id]."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(
                HumanScoreRecord(
                    image_id=row["image_id"].strip(),
                    prompt_id=row["prompt_id"].strip(),
                    points=float(row["points"]),
                    annotator_id=(row.get("annotator_id") or "").strip() or None,
                )
            )
    return records


def load_gold_findings(path: Path | str) -> list[LabeledFinding]:
    """CSV columns: image_id, error_type, target."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            etype = row["error_type"].strip()
            if etype not in ERROR_TYPES:
                raise ValueError(f"unknown error type {etype!r} in {path}")
            out.append(LabeledFinding(row["image_id"].strip(), etype, row["target"].strip()))
    return out


def _safe(fn, x, y) -> float | None:
    try:
        return fn(x, y)
    except DegenerateInput:
        return None


def aggregate_run(
    scored: list[ImageScore],
    human: list[HumanScoreRecord],
    model_name: str,
    f1: dict[str, TypeScores] | None = None,
    group_by_prompt: bool = False,
) -> EvalRun:
    """Mean normalized score plus the three correlations against human scores.

    Multi-annotator records are averaged per image first. Default is a single
    pooled per-image correlation; group_by_prompt instead averages per-prompt
    correlations over prompts where they are defined.
    """
    if not scored:
        raise DegenerateInput("no scored images")
    by_image: dict[str, list[float]] = {}
    for rec in human:
        by_image.setdefault(rec.image_id, []).append(rec.points)
    human_norm = {iid: (sum(v) / len(v) - 1) / 6.0 for iid, v in by_image.items()}

    missing = sorted({s.image_id for s in scored} - set(human_norm))
    if missing:
        raise MissingHumanScore(missing)

    ordered = sorted(scored, key=lambda s: s.image_id)
    ours = [s.normalized for s in ordered]
    theirs = [human_norm[s.image_id] for s in ordered]
    mean_normalized = float(np.mean(ours))

    if not group_by_prompt:
        run = EvalRun(
            model_name=model_name,
            n_images=len(ordered),
            mean_normalized=mean_normalized,
            pearson=_safe(pearson, ours, theirs),
            kendall_tau=_safe(kendall_tau, ours, theirs),
            spearman_rho=_safe(spearman_rho, ours, theirs),
            grouping="pooled",
        )
    else:
        groups: dict[str, list[tuple[float, float]]] = {}
        for s, h in zip(ordered, theirs):
            groups.setdefault(s.prompt_id, []).append((s.normalized, h))
        vals = {"pearson": [], "kendall_tau": [], "spearman_rho": []}
        for pairs in groups.values():
            if len(pairs) < 2:
                continue
            gx = [p[0] for p in pairs]
            gy = [p[1] for p in pairs]
            for name, fn in (("pearson", pearson), ("kendall_tau", kendall_tau),
                             ("spearman_rho", spearman_rho)):
                v = _safe(fn, gx, gy)
                if v is not None:
                    vals[name].append(v)
        run = EvalRun(
            model_name=model_name,
            n_images=len(ordered),
            mean_normalized=mean_normalized,
            pearson=float(np.mean(vals["pearson"])) if vals["pearson"] else None,
            kendall_tau=float(np.mean(vals["kendall_tau"])) if vals["kendall_tau"] else None,
            spearman_rho=float(np.mean(vals["spearman_rho"])) if vals["spearman_rho"] else None,
            grouping="per_prompt",
        )
    if f1:
        run.f1_by_type = dict(f1)
    return run


def evalrun_to_dict(run: EvalRun) -> dict:
    return {
        "model_name": run.model_name,
        "n_images": run.n_images,
        "mean_normalized": run.mean_normalized,
        "pearson": run.pearson,
        "kendall_tau": run.kendall_tau,
        "spearman_rho": run.spearman_rho,
        "grouping": run.grouping,
        "f1_by_type": {
            t: {"precision": s.precision, "recall": s.recall, "f1": s.f1,
                "degenerate": s.degenerate}
            for t, s in sorted(run.f1_by_type.items())
        },
    }
