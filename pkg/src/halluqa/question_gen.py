"""Templated question/gold-answer pairs from prompt triples.

Templates are the default path: gold answers are a pure function of the
source triple, so they stay trustworthy. The chat path only rewrites the
surface text; gold values and entity references are never model-derived.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .lexicon import DATA_DIR
from .prompt_parser import RELATION_ATTRIBUTE_KINDS, Triple, triple_from_dict, triple_to_dict

QUESTION_KINDS = ("existence", "attribute", "relation")


@dataclass(frozen=True)
class GoldAnswer:
    kind: str  # yes_no | value
    value: str

    def __post_init__(self):
        if self.kind not in ("yes_no", "value"):
            raise ValueError(f"bad gold kind {self.kind!r}")
        if self.kind == "yes_no" and self.value not in ("yes", "no"):
            raise ValueError(f"yes/no gold must be yes or no, got {self.value!r}")
        if not self.value:
            raise ValueError("gold value must be non-empty")


@dataclass(frozen=True)
class Question:
    question_id: str
    kind: str  # existence | attribute | relation
    text: str
    gold: GoldAnswer
    source_triple: Triple
    entity_refs: tuple[str, ...]
    fallback: bool = False  # chat path returned nothing usable; template text kept
    pending: bool = False  # chat path errored; template text kept

    def __post_init__(self):
        if self.kind not in QUESTION_KINDS:
            raise ValueError(f"bad question kind {self.kind!r}")
        if not self.text:
            raise ValueError("question text must be non-empty")
        if not self.entity_refs:
            raise ValueError("entity_refs must be non-empty")


def _prompt_ref(triple: Triple) -> str:
    prov = triple.provenance
    return prov.split(":", 1)[1] if ":" in prov else (prov or "q")


def _question_for(triple: Triple, qid: str) -> Question:
    if triple.kind == "existence":
        return Question(
            question_id=qid,
            kind="existence",
            text=f"Is there a {triple.head} in the image?",
            gold=GoldAnswer("yes_no", "yes"),
            source_triple=triple,
            entity_refs=(triple.head,),
        )
    if triple.kind == "attribute_binding":
        attr_kind = RELATION_ATTRIBUTE_KINDS.get(triple.relation, "other")
        if attr_kind == "other":
            text = f"Is the {triple.head} {triple.tail}?"
            gold = GoldAnswer("yes_no", "yes")
        else:
            text = f"What is the {attr_kind} of the {triple.head}?"
            gold = GoldAnswer("value", triple.tail)
        return Question(
            question_id=qid,
            kind="attribute",
            text=text,
            gold=gold,
            source_triple=triple,
            entity_refs=(triple.head,),
        )
    if triple.kind in ("spatial", "nonspatial"):
        return Question(
            question_id=qid,
            kind="relation",
            text=f"What is the relationship between the {triple.head} and the {triple.tail}?",
            gold=GoldAnswer("value", triple.relation),
            source_triple=triple,
            entity_refs=(triple.head, triple.tail),
        )
    raise ValueError(f"cannot build a question from triple kind {triple.kind!r}")


def generate_questions(triples: list[Triple]) -> list[Question]:
    """One question per triple, in triple order; ids are prompt_id + ordinal."""
    out = []
    for i, triple in enumerate(triples):
        qid = f"{_prompt_ref(triple)}.q{i:03d}"
        out.append(_question_for(triple, qid))
    return out


def load_demonstrations(path: Path | str | None = None) -> str:
    p = Path(path) if path is not None else DATA_DIR / "question_demos.txt"
    return p.read_text(encoding="utf-8")


def generate_questions_llm(triples: list[Triple], chat, demos: str | None = None) -> list[Question]:
    """Same questions, with surface text rewritten by the chat service.

    Gold answers and entity refs stay template-derived. An empty reply falls
    back to the template text (fallback=True); a client error leaves the
    question pending with template text, and the batch continues.
    """
    from .model_clients import ClientError

    instructions = demos if demos is not None else load_demonstrations()
    questions = generate_questions(triples)
    out = []
    for q in questions:
        user = f"Triple: {q.source_triple.as_text()}\nQuestion:"
        try:
            reply = chat.chat(system=instructions, messages=[{"role": "user", "text": user}])
        except ClientError:
            out.append(replace(q, pending=True))
            continue
        text = " ".join(reply.strip().split())
        if text:
            out.append(replace(q, text=text))
        else:
            out.append(replace(q, fallback=True))
    return out


def question_to_dict(q: Question) -> dict:
    return {
        "question_id": q.question_id,
        "kind": q.kind,
        "text": q.text,
        "gold": {"kind": q.gold.kind, "value": q.gold.value},
        "source_triple": triple_to_dict(q.source_triple),
        "entity_refs": list(q.entity_refs),
        "fallback": q.fallback,
        "pending": q.pending,
    }


def question_from_dict(d: dict) -> Question:
    return Question(
        question_id=d["question_id"],
        kind=d["kind"],
        text=d["text"],
        gold=GoldAnswer(d["gold"]["kind"], d["gold"]["value"]),
        source_triple=triple_from_dict(d["source_triple"]),
        entity_refs=tuple(d["entity_refs"]),
        fallback=d.get("fallback", False),
        pending=d.get("pending", False),
    )
