"""Answer generated questions against a scene graph.

The flow mirrors knowledge-graph QA: extract entities from the question,
retrieve the triples touching those entities (the Memory), then decode an
answer from the Memory. The deterministic decoder is the reference
implementation; the chat decoder sends the same Memory to an external chat
service and grades the reply with identical matching rules. A caption-based
retriever provides the degraded knowledge-source ablation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from .lexicon import DATA_DIR, Lexicon, default_lexicon, similarity_ratio
from .prompt_parser import (
    ParseError,
    PromptSpec,
    Triple,
    parse_prompt,
    tokenize,
)
from .question_gen import Question
from .scene_graph import SceneGraph, triples_of_graph

ERROR_TYPES = ("attribute", "relation", "omission", "extraneous")
VERDICTS = ("correct", "incorrect", "unanswerable")

# marker used as the expected value of every omission finding so that
# existence, attribute, and relation questions missing the same object
# deduplicate to a single finding
OMISSION_EXPECTED = "present"

INVERSE_SPATIAL = {
    "above": "below",
    "below": "above",
    "to the left of": "to the right of",
    "to the right of": "to the left of",
    "next to": "next to",
    "behind": "in front of",
    "in front of": "behind",
}

_ARTICLES = ("a", "an", "the", "is", "are", "it")

FALLBACK_STOPWORDS = frozenset(
    {
        "is", "are", "there", "what", "which", "who", "how", "does", "do", "did",
        "relationship", "relation", "between", "image", "picture", "photo",
        "color", "colour", "shape", "texture", "of", "in",
    }
)


class ExtractionError(ValueError):
    """No entity could be extracted from an externally authored question."""


@dataclass(frozen=True)
class Entities:
    lemmas: tuple[str, ...]

    def __post_init__(self):
        if not self.lemmas:
            raise ValueError("entity list must be non-empty")


@dataclass(frozen=True)
class Memory:
    triples: tuple[Triple, ...]

    def __len__(self) -> int:
        return len(self.triples)


@dataclass(frozen=True)
class QAResult:
    question_id: str
    predicted: str
    verdict: str  # correct | incorrect | unanswerable
    error_type: str | None = None
    target: str | None = None  # lemma (or "head|tail" pair) the finding points at
    expected: str | None = None
    memory_size: int = 0
    client_failed: bool = False

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"bad verdict {self.verdict!r}")
        if self.verdict == "correct" and self.error_type is not None:
            raise ValueError("correct answers carry no error type")
        if self.error_type is not None and self.error_type not in ERROR_TYPES:
            raise ValueError(f"bad error type {self.error_type!r}")


@dataclass(frozen=True)
class Finding:
    error_type: str
    target: str
    expected: str = ""
    observed: str = ""
    question_id: str | None = None

    def __post_init__(self):
        if self.error_type not in ERROR_TYPES:
            raise ValueError(f"bad error type {self.error_type!r}")

    def detail(self) -> str:
        if self.error_type == "extraneous":
            return f"object '{self.target}' not mentioned in the prompt"
        if self.error_type == "omission":
            return f"'{self.target}' missing from the image"
        return f"{self.error_type} on '{self.target}': expected '{self.expected}', observed '{self.observed}'"


def normalize_relation(phrase: str) -> str:
    words = phrase.lower().replace(".", " ").split()
    while words and words[0] in _ARTICLES:
        words = words[1:]
    return " ".join(words)


@dataclass(frozen=True)
class SynonymTable:
    """Noun/value and relation synonym groups plus fuzzy lemma matching."""

    noun_canon: dict[str, str]
    relation_canon: dict[str, str]
    relation_members: dict[str, tuple[str, ...]]
    fuzzy_threshold: float = 0.85

    def noun_canonical(self, word: str) -> str:
        w = word.lower().strip()
        return self.noun_canon.get(w, w)

    def nouns_match(self, a: str, b: str) -> bool:
        a, b = a.lower().strip(), b.lower().strip()
        if a == b or self.noun_canonical(a) == self.noun_canonical(b):
            return True
        return similarity_ratio(a, b) >= self.fuzzy_threshold

    def relation_canonical(self, phrase: str) -> str:
        p = normalize_relation(phrase)
        return self.relation_canon.get(p, p)

    def relation_known(self, phrase: str) -> bool:
        return normalize_relation(phrase) in self.relation_canon

    def relations_match(self, a: str, b: str) -> bool:
        ca, cb = self.relation_canonical(a), self.relation_canonical(b)
        if ca == cb:
            return True
        return similarity_ratio(ca, cb) >= self.fuzzy_threshold

    def inverse_relation(self, phrase: str) -> str | None:
        return INVERSE_SPATIAL.get(self.relation_canonical(phrase))

    def relation_class(self, phrase: str) -> tuple[str, ...]:
        canon = self.relation_canonical(phrase)
        return self.relation_members.get(canon, (canon,))


def _load_groups(path: Path) -> list[list[str]]:
    groups = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        entries = [e.strip().lower() for e in line.split(",") if e.strip()]
        if len(entries) >= 2:
            groups.append(entries)
    return groups


def load_synonyms(
    noun_path: Path | str | None = None,
    relation_path: Path | str | None = None,
    fuzzy_threshold: float = 0.85,
) -> SynonymTable:
    noun_groups = _load_groups(Path(noun_path) if noun_path else DATA_DIR / "noun_synonyms.txt")
    rel_groups = _load_groups(
        Path(relation_path) if relation_path else DATA_DIR / "relation_synonyms.txt"
    )
    noun_canon = {}
    for group in noun_groups:
        for entry in group:
            noun_canon[entry] = group[0]
    relation_canon = {}
    relation_members = {}
    for group in rel_groups:
        relation_members[group[0]] = tuple(group)
        for entry in group:
            relation_canon[entry] = group[0]
    return SynonymTable(noun_canon, relation_canon, relation_members, fuzzy_threshold)


@lru_cache(maxsize=1)
def default_synonyms() -> SynonymTable:
    return load_synonyms()


# ---------------------------------------------------------------------------
# entity extraction and retrieval
# ---------------------------------------------------------------------------

def extract_entities(q: Question, lexicon: Lexicon | None = None) -> Entities:
    """Entity refs carried with the question, else a noun-grammar fallback."""
    if q.entity_refs:
        return Entities(tuple(q.entity_refs))
    lex = lexicon or default_lexicon()
    kept = [t for t in tokenize(q.text) if t not in FALLBACK_STOPWORDS]
    try:
        spec = parse_prompt("question", " ".join(kept), lex) if kept else None
    except ParseError:
        spec = None
    if spec is None or not spec.objects:
        raise ExtractionError(f"no entity found in question {q.text!r}")
    return Entities(spec.object_lemmas())


def retrieve_memory(ent: Entities, g: SceneGraph, syn: SynonymTable | None = None) -> Memory:
    """All graph triples whose head or tail matches an entity."""
    table = syn or default_synonyms()
    kept = [
        t
        for t in triples_of_graph(g)
        if any(table.nouns_match(e, t.head) or table.nouns_match(e, t.tail) for e in ent.lemmas)
    ]
    return Memory(tuple(kept))


def split_captions(text: str) -> list[str]:
    parts = re.split(r"(?<=[.!?])\s+", text.strip())
    return [p.strip() for p in parts if p.strip()]


def retrieve_memory_captions(
    ent: Entities,
    captions: list[str],
    syn: SynonymTable | None = None,
    lexicon: Lexicon | None = None,
) -> Memory:
    """Caption sentences mentioning an entity, recast as pseudo-triples."""
    table = syn or default_synonyms()
    lex = lexicon or default_lexicon()
    out = []
    for i, sentence in enumerate(captions):
        if not sentence.strip():
            continue
        lemmas = {lex.lemmatize(tok) for tok in tokenize(sentence)}
        for e in ent.lemmas:
            canon = table.noun_canonical(e)
            if any(tok == e or table.noun_canonical(tok) == canon for tok in lemmas):
                out.append(Triple(e, "mentioned_in", sentence.strip(), "mention", f"caption:{i}"))
    return Memory(tuple(out))


# ---------------------------------------------------------------------------
# deterministic decoding
# ---------------------------------------------------------------------------

def _entity_exists(mem: Memory, entity: str, syn: SynonymTable) -> bool:
    return any(
        t.kind == "existence" and syn.nouns_match(entity, t.head) for t in mem.triples
    )


def _pair_target(e1: str, e2: str) -> str:
    return f"{e1}|{e2}"


def decode_answer(mem: Memory, q: Question, syn: SynonymTable | None = None) -> QAResult:
    """Reference decoder over the Memory; assigns the hallucination type.

    A failure caused by a missing object (whatever the question kind) is an
    omission pointed at that object, so all questions touching one missing
    object collapse to a single finding downstream.
    """
    table = syn or default_synonyms()
    if any(t.kind == "mention" for t in mem.triples):
        return _decode_from_captions(mem, q, table)
    size = len(mem)

    if q.kind == "existence":
        ent = q.entity_refs[0]
        if _entity_exists(mem, ent, table):
            return QAResult(q.question_id, "yes", "correct", memory_size=size)
        verdict = "unanswerable" if size == 0 else "incorrect"
        return QAResult(q.question_id, "" if size == 0 else "no", verdict,
                        error_type="omission", target=ent,
                        expected=OMISSION_EXPECTED, memory_size=size)

    if q.kind == "attribute":
        ent = q.entity_refs[0]
        goldval = q.source_triple.tail
        if not _entity_exists(mem, ent, table):
            return QAResult(q.question_id, "", "unanswerable", error_type="omission",
                            target=ent, expected=OMISSION_EXPECTED, memory_size=size)
        rel = q.source_triple.relation
        values = [
            t.tail
            for t in mem.triples
            if t.kind == "attribute_binding"
            and table.nouns_match(ent, t.head)
            and (rel == "is" or t.relation == rel)
        ]
        matched = [v for v in values if table.nouns_match(v, goldval)]
        if matched:
            predicted = "yes" if q.gold.kind == "yes_no" else matched[0]
            return QAResult(q.question_id, predicted, "correct", memory_size=size)
        if values:
            return QAResult(q.question_id, values[0], "incorrect", error_type="attribute",
                            target=ent, expected=goldval, memory_size=size)
        return QAResult(q.question_id, "", "unanswerable", error_type="attribute",
                        target=ent, expected=goldval, memory_size=size)

    if q.kind == "relation":
        e1, e2 = q.entity_refs
        missing = [e for e in (e1, e2) if not _entity_exists(mem, e, table)]
        if missing:
            return QAResult(q.question_id, "", "unanswerable", error_type="omission",
                            target=missing[0], expected=OMISSION_EXPECTED, memory_size=size)
        gold = q.gold.value
        direct, reverse = [], []
        for t in mem.triples:
            if t.kind not in ("spatial", "nonspatial"):
                continue
            if table.nouns_match(t.head, e1) and table.nouns_match(t.tail, e2):
                direct.append(t)
            elif table.nouns_match(t.head, e2) and table.nouns_match(t.tail, e1):
                reverse.append(t)
        for t in direct:
            if table.relations_match(t.relation, gold):
                return QAResult(q.question_id, t.relation, "correct", memory_size=size)
        inv = table.inverse_relation(gold)
        if inv is not None:
            for t in reverse:
                if table.relation_canonical(t.relation) == inv:
                    return QAResult(q.question_id, t.relation, "correct", memory_size=size)
        target = _pair_target(e1, e2)
        if direct or reverse:
            observed = (direct + reverse)[0].relation
            return QAResult(q.question_id, observed, "incorrect", error_type="relation",
                            target=target, expected=gold, memory_size=size)
        return QAResult(q.question_id, "", "unanswerable", error_type="relation",
                        target=target, expected=gold, memory_size=size)

    raise ValueError(f"unknown question kind {q.kind!r}")


def _sentences_for(mem: Memory, entity: str) -> list[str]:
    return [t.tail for t in mem.triples if t.kind == "mention" and t.head == entity]


def _sentence_has_word(sentence: str, word: str, syn: SynonymTable, lex: Lexicon) -> bool:
    return any(
        tok == word or syn.noun_canonical(lex.lemmatize(tok)) == syn.noun_canonical(word)
        for tok in tokenize(sentence)
    )


def _sentence_has_phrase(sentence: str, phrases: tuple[str, ...]) -> bool:
    low = " ".join(tokenize(sentence))
    return any(re.search(rf"(?<![a-z]){re.escape(p)}(?![a-z])", low) for p in phrases)


def _decode_from_captions(mem: Memory, q: Question, syn: SynonymTable) -> QAResult:
    lex = default_lexicon()
    size = len(mem)
    if q.kind == "existence":
        ent = q.entity_refs[0]
        if _sentences_for(mem, ent):
            return QAResult(q.question_id, "yes", "correct", memory_size=size)
        verdict = "unanswerable" if size == 0 else "incorrect"
        return QAResult(q.question_id, "" if size == 0 else "no", verdict,
                        error_type="omission", target=ent,
                        expected=OMISSION_EXPECTED, memory_size=size)
    if q.kind == "attribute":
        ent = q.entity_refs[0]
        goldval = q.source_triple.tail
        sentences = _sentences_for(mem, ent)
        if not sentences:
            return QAResult(q.question_id, "", "unanswerable", error_type="omission",
                            target=ent, expected=OMISSION_EXPECTED, memory_size=size)
        if any(_sentence_has_word(s, goldval, syn, lex) for s in sentences):
            predicted = "yes" if q.gold.kind == "yes_no" else goldval
            return QAResult(q.question_id, predicted, "correct", memory_size=size)
        return QAResult(q.question_id, "not mentioned", "incorrect", error_type="attribute",
                        target=ent, expected=goldval, memory_size=size)
    if q.kind == "relation":
        e1, e2 = q.entity_refs
        s1, s2 = _sentences_for(mem, e1), _sentences_for(mem, e2)
        missing = [e for e, s in ((e1, s1), (e2, s2)) if not s]
        if missing:
            return QAResult(q.question_id, "", "unanswerable", error_type="omission",
                            target=missing[0], expected=OMISSION_EXPECTED, memory_size=size)
        shared = [s for s in s1 if s in s2]
        gold = q.gold.value
        target = _pair_target(e1, e2)
        if not shared:
            return QAResult(q.question_id, "", "unanswerable", error_type="relation",
                            target=target, expected=gold, memory_size=size)
        if any(_sentence_has_phrase(s, syn.relation_class(gold)) for s in shared):
            return QAResult(q.question_id, gold, "correct", memory_size=size)
        return QAResult(q.question_id, "not stated", "incorrect", error_type="relation",
                        target=target, expected=gold, memory_size=size)
    raise ValueError(f"unknown question kind {q.kind!r}")


# ---------------------------------------------------------------------------
# chat decoding: external answer, identical grading rules
# ---------------------------------------------------------------------------

def load_chat_instruction(path: Path | str | None = None) -> str:
    p = Path(path) if path is not None else DATA_DIR / "chat_instruction.txt"
    return p.read_text(encoding="utf-8")


def _grade_reply(reply: str, q: Question, syn: SynonymTable) -> bool:
    lex = default_lexicon()
    words = tokenize(reply)
    if q.kind == "existence":
        return "yes" in words
    if q.kind == "attribute":
        goldval = q.source_triple.tail
        if q.gold.kind == "yes_no" and "yes" in words:
            return True
        return _sentence_has_word(reply, goldval, syn, lex)
    if q.kind == "relation":
        return _sentence_has_phrase(reply, syn.relation_class(q.gold.value))
    return False


def decode_answer_chat(
    mem: Memory,
    q: Question,
    chat,
    syn: SynonymTable | None = None,
    instruction: str | None = None,
) -> QAResult:
    """Send the Memory plus question to the chat service and grade the reply
    with the deterministic decoder's matching rules."""
    from .model_clients import ClientError

    table = syn or default_synonyms()
    baseline = decode_answer(mem, q, table)
    context = "\n".join(t.as_text() for t in mem.triples) or "(no triples)"
    user = f"Context triples:\n{context}\n\nQuestion: {q.text}"
    try:
        reply = chat.chat(
            system=instruction if instruction is not None else load_chat_instruction(),
            messages=[{"role": "user", "text": user}],
        )
    except ClientError:
        return QAResult(
            q.question_id,
            "",
            "unanswerable",
            error_type=baseline.error_type or _default_error(q),
            target=baseline.target or _default_target(q),
            expected=baseline.expected or _default_expected(q),
            memory_size=len(mem),
            client_failed=True,
        )
    normalized = " ".join(reply.lower().split()).rstrip(".")
    if _grade_reply(normalized, q, table):
        return QAResult(q.question_id, normalized, "correct", memory_size=len(mem))
    verdict = "unanswerable" if "unknown" in normalized or not normalized else "incorrect"
    return QAResult(
        q.question_id,
        normalized,
        verdict,
        error_type=baseline.error_type or _default_error(q),
        target=baseline.target or _default_target(q),
        expected=baseline.expected or _default_expected(q),
        memory_size=len(mem),
    )


def _default_error(q: Question) -> str:
    return {"existence": "omission", "attribute": "attribute", "relation": "relation"}[q.kind]


def _default_target(q: Question) -> str:
    if q.kind == "relation":
        return _pair_target(*q.entity_refs)
    return q.entity_refs[0]


def _default_expected(q: Question) -> str:
    if q.kind == "existence":
        return OMISSION_EXPECTED
    if q.kind == "attribute":
        return q.source_triple.tail
    return q.gold.value


# ---------------------------------------------------------------------------
# extraneous objects
# ---------------------------------------------------------------------------

def detect_extraneous(
    g: SceneGraph, spec: PromptSpec, syn: SynonymTable | None = None
) -> list[Finding]:
    """Object-node groups whose label matches no prompt object.

    Same-group duplicates collapse to one candidate, and duplicates of
    mentioned object types are by definition not extraneous.
    """
    table = syn or default_synonyms()
    reps: dict[str, str] = {}
    for n in g.object_nodes():  # sorted by node_id, so first member represents
        key = n.same_group or n.node_id
        reps.setdefault(key, n.label)
    prompt_lemmas = spec.object_lemmas()

    def mentioned(label: str) -> bool:
        tail = label.split()[-1]
        return any(
            table.nouns_match(label, pl) or table.nouns_match(tail, pl)
            for pl in prompt_lemmas
        )

    findings = []
    seen = set()
    for key in sorted(reps):
        label = reps[key]
        canon = table.noun_canonical(label)
        if canon in seen or mentioned(label):
            continue
        seen.add(canon)
        findings.append(Finding("extraneous", target=label, observed=label))
    return sorted(findings, key=lambda f: f.target)
