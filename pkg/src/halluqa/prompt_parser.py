"""Parse composite prompts into objects, attribute bindings, and relations.

The grammar is deliberately constrained to the compositional prompt style:
coordinated noun phrases ("X and Y"), determiner + adjective* + noun groups,
a fixed preposition table matched longest-first, and transitive verb bridges
drawn from a bundled verb list. Parsing is fully deterministic; anything the
grammar cannot see (counting words, intransitive tails, partitives like
"a bowl of fruit") degrades gracefully rather than guessing.

`load_parsed` is the escape hatch for prompts outside the grammar: it accepts
a pre-parsed tab-separated token listing (see docs/formats.md) and applies the
same group-splitting rules.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .lexicon import Lexicon, default_lexicon

DETERMINERS = frozenset({"a", "an", "the"})
COORDINATORS = frozenset({"and", ","})

# relation label used in attribute-binding triples, per attribute class
ATTRIBUTE_RELATIONS = {
    "color": "has_color",
    "shape": "has_shape",
    "texture": "has_texture",
    "other": "is",
}
RELATION_ATTRIBUTE_KINDS = {v: k for k, v in ATTRIBUTE_RELATIONS.items()}

TRIPLE_KINDS = ("existence", "attribute_binding", "spatial", "nonspatial", "mention")

_NOUN_POS = frozenset({"NOUN", "PROPN"})


class ParseError(ValueError):
    """Prompt could not be parsed; `reason` is a stable machine-readable tag."""

    def __init__(self, reason: str, message: str = ""):
        self.reason = reason
        super().__init__(message or reason)


class FormatError(ValueError):
    """Malformed pre-parsed token listing; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass(frozen=True)
class AttributeMention:
    kind: str  # color | shape | texture | other
    value: str

    def __post_init__(self):
        if self.kind not in ATTRIBUTE_RELATIONS:
            raise ValueError(f"bad attribute kind {self.kind!r}")
        if not self.value or self.value != self.value.lower():
            raise ValueError(f"attribute value must be lowercase non-empty: {self.value!r}")


@dataclass(frozen=True)
class ObjectMention:
    ref: int
    lemma: str
    attributes: tuple[AttributeMention, ...] = ()

    def __post_init__(self):
        if not self.lemma or self.lemma != self.lemma.lower():
            raise ValueError(f"object lemma must be lowercase non-empty: {self.lemma!r}")


@dataclass(frozen=True)
class RelationMention:
    subject_ref: int
    phrase: str
    kind: str  # spatial | nonspatial
    object_ref: int

    def __post_init__(self):
        if self.subject_ref == self.object_ref:
            raise ValueError("relation cannot link an object to itself")
        if not self.phrase:
            raise ValueError("relation phrase must be non-empty")
        if self.kind not in ("spatial", "nonspatial"):
            raise ValueError(f"bad relation kind {self.kind!r}")


@dataclass(frozen=True)
class PromptSpec:
    prompt_id: str
    raw_text: str
    objects: tuple[ObjectMention, ...]
    relations: tuple[RelationMention, ...] = ()
    # free-text notes about attachment ambiguity, e.g. an adjective that may
    # distribute over a coordination; informational only.
    ambiguities: tuple[str, ...] = ()

    def __post_init__(self):
        for i, obj in enumerate(self.objects):
            if obj.ref != i:
                raise ValueError(f"object ref {obj.ref} != position {i}")
        n = len(self.objects)
        for rel in self.relations:
            if not (0 <= rel.subject_ref < n and 0 <= rel.object_ref < n):
                raise ValueError("relation refs out of range")

    def object_lemmas(self) -> tuple[str, ...]:
        return tuple(o.lemma for o in self.objects)


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str
    kind: str
    provenance: str = ""

    def __post_init__(self):
        if not (self.head and self.relation and self.tail):
            raise ValueError(f"triple components must be non-empty: {self!r}")
        if self.kind not in TRIPLE_KINDS:
            raise ValueError(f"bad triple kind {self.kind!r}")

    def as_text(self) -> str:
        return f"({self.head}, {self.relation}, {self.tail})"


_TOKEN_RE = re.compile(r"[a-z0-9']+(?:-[a-z0-9']+)*|,")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class _Group:
    __slots__ = ("det", "words", "coordinated")

    def __init__(self, det: bool = False, coordinated: bool = False):
        self.det = det
        self.words: list[str] = []
        self.coordinated = coordinated


def _strip_trailing_verbs(words: list[str], reason: str, lex: Lexicon) -> list[str]:
    """Pop trailing verb tokens off a closing group; they become the bridge.

    Stripping is rejected when the remaining head word would be a bare
    attribute word ("a silver watch" must keep "watch" as its noun), and at
    coordination/end closes only -ing forms are treated as verbs, so nouns
    that double as verb forms survive.
    """
    k = 0
    while k < len(words) - 1 and words[-1 - k] in lex.verbs:
        if reason in ("coord", "end") and not words[-1 - k].endswith("ing"):
            break
        k += 1
    if k == 0:
        return []
    if lex.is_known_attribute(words[-1 - k]):
        return []
    stripped = words[-k:]
    del words[-k:]
    return stripped


def parse_prompt(prompt_id: str, raw_text: str, lexicon: Lexicon | None = None) -> PromptSpec:
    """Parse a composite prompt into objects, attributes, and relations.

    Raises ParseError("no_object_found") when no noun group is recognized;
    callers should record such prompts as unevaluable instead of aborting.
    """
    lex = lexicon or default_lexicon()
    tokens = tokenize(raw_text)

    objects: list[ObjectMention] = []
    relations: list[RelationMention] = []
    ambiguities: list[str] = []
    # relation whose subject is closed but whose object group is still open
    pending: tuple[int, str, str] | None = None

    group: _Group | None = None

    def close_group(reason: str) -> list[str]:
        """Close the open group, emitting an object; returns stripped verbs."""
        nonlocal group, pending
        if group is None:
            return []
        words = list(group.words)
        verbs = _strip_trailing_verbs(words, reason, lex)
        if not words:
            group = None
            return verbs
        noun = lex.lemmatize(words[-1])
        attrs = tuple(
            AttributeMention(kind=lex.attribute_kind(w), value=w) for w in words[:-1]
        )
        ref = len(objects)
        if (
            group.coordinated
            and not group.det
            and not attrs
            and objects
            and objects[-1].attributes
        ):
            prev = objects[-1]
            vals = ", ".join(a.value for a in prev.attributes)
            ambiguities.append(
                f"attributes [{vals}] of '{prev.lemma}' may also modify '{noun}'"
            )
        objects.append(ObjectMention(ref=ref, lemma=noun, attributes=attrs))
        if pending is not None and pending[0] != ref:
            relations.append(
                RelationMention(
                    subject_ref=pending[0], phrase=pending[1], kind=pending[2], object_ref=ref
                )
            )
        pending = None
        group = None
        return verbs

    i = 0
    after_coord = False
    while i < len(tokens):
        tok = tokens[i]
        if tok in COORDINATORS:
            close_group("coord")
            pending = None
            after_coord = True
            i += 1
            continue
        prep = lex.match_preposition(tokens, i)
        if prep is not None:
            phrase, kind, consumed = prep
            if group is not None and group.words:
                verbs = close_group("prep")
                subj = len(objects) - 1
                full = " ".join(verbs + [phrase])
                pending = (subj, full, kind)
            # a preposition with no subject group to its left is dropped
            i += consumed
            after_coord = False
            continue
        if tok in DETERMINERS:
            if group is not None and group.words:
                verbs = close_group("det")
                if verbs:
                    pending = (len(objects) - 1, " ".join(verbs), "nonspatial")
            if group is None:
                group = _Group(det=True, coordinated=after_coord)
            else:
                group.det = True
            after_coord = False
            i += 1
            continue
        if group is None:
            group = _Group(det=False, coordinated=after_coord)
            after_coord = False
        group.words.append(tok)
        i += 1

    close_group("end")

    if not objects:
        raise ParseError("no_object_found", f"no noun group recognized in {raw_text!r}")
    return PromptSpec(
        prompt_id=prompt_id,
        raw_text=raw_text,
        objects=tuple(objects),
        relations=tuple(relations),
        ambiguities=tuple(ambiguities),
    )


def triples_of(spec: PromptSpec) -> list[Triple]:
    """Flatten a parsed prompt into triples.

    Order is deterministic: per object, its existence triple then its
    attribute bindings, in mention order; relation triples afterwards.
    """
    prov = f"prompt:{spec.prompt_id}"
    out: list[Triple] = []
    for obj in spec.objects:
        out.append(Triple(obj.lemma, "exists", "true", "existence", prov))
        for attr in obj.attributes:
            out.append(
                Triple(obj.lemma, ATTRIBUTE_RELATIONS[attr.kind], attr.value,
                       "attribute_binding", prov)
            )
    for rel in spec.relations:
        out.append(
            Triple(
                spec.objects[rel.subject_ref].lemma,
                rel.phrase,
                spec.objects[rel.object_ref].lemma,
                rel.kind,
                prov,
            )
        )
    return out


# ---------------------------------------------------------------------------
# pre-parsed token listings (escape hatch for prompts outside the grammar)
# ---------------------------------------------------------------------------

@dataclass
class _Row:
    idx: int  # 1-based
    form: str
    lemma: str
    pos: str
    head: int
    dep: str


def load_parsed(
    conllu_like_text: str,
    prompt_id: str = "parsed",
    lexicon: Lexicon | None = None,
) -> PromptSpec:
    """Build a PromptSpec from a 5-field token listing.

    One token per line, tab-separated fields: form, lemma, POS, head (1-based
    index, 0 = root), dependency label. Supported labels are documented in
    docs/formats.md; both spaCy-style (prep/pobj) and UD-style (case/nmod)
    prepositional attachments are accepted.
    """
    lex = lexicon or default_lexicon()
    if not conllu_like_text.strip():
        raise FormatError(0, "empty token listing")
    lines = conllu_like_text.splitlines()
    n = len(lines)
    rows: list[_Row] = []
    for ln, line in enumerate(lines, 1):
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(ln, f"expected 5 tab-separated fields, got {len(parts)}")
        form, lemma, pos, head_s, dep = (p.strip() for p in parts)
        if not form or not lemma or not pos or not dep:
            raise FormatError(ln, "empty field")
        try:
            head = int(head_s)
        except ValueError:
            raise FormatError(ln, f"head index {head_s!r} is not an integer") from None
        if not (0 <= head <= n):
            raise FormatError(ln, f"head index {head} out of range 0..{n}")
        rows.append(_Row(ln, form.lower(), lemma.lower(), pos.upper(), head, dep.lower()))

    noun_ref: dict[int, int] = {}
    objects: list[ObjectMention] = []
    attrs_by_ref: dict[int, list[AttributeMention]] = {}
    for row in rows:
        if row.pos in _NOUN_POS:
            noun_ref[row.idx] = len(objects)
            objects.append(ObjectMention(ref=len(objects), lemma=lex.lemmatize(row.lemma)))
    if not objects:
        raise ParseError("no_object_found", "listing contains no noun token")

    for row in rows:
        if row.pos == "ADJ" and row.dep == "amod" and row.head in noun_ref:
            ref = noun_ref[row.head]
            attrs_by_ref.setdefault(ref, []).append(
                AttributeMention(kind=lex.attribute_kind(row.lemma), value=row.lemma)
            )

    def _phrase_kind(phrase: str) -> str:
        toks = phrase.split()
        match = lex.match_preposition(toks, 0)
        if match is not None and match[2] == len(toks):
            return match[1]
        return "nonspatial"

    relations: list[RelationMention] = []

    def _add_rel(subj_tok: int, phrase: str, obj_tok: int, kind: str | None = None):
        subj, obj = noun_ref.get(subj_tok), noun_ref.get(obj_tok)
        if subj is None or obj is None or subj == obj:
            return
        relations.append(
            RelationMention(subj, phrase, kind or _phrase_kind(phrase), obj)
        )

    by_idx = {r.idx: r for r in rows}
    for row in rows:
        if row.pos == "ADP" and row.dep == "prep" and row.head in noun_ref:
            phrase = row.form
            for extra in rows:
                if extra.dep == "fixed" and extra.head == row.idx:
                    phrase += " " + extra.form
            for obj_row in rows:
                if obj_row.dep in ("pobj", "obl") and obj_row.head == row.idx:
                    _add_rel(row.head, phrase, obj_row.idx)
        elif row.pos == "ADP" and row.dep == "case" and row.head in noun_ref:
            obj_row = by_idx[row.head]
            if obj_row.dep in ("nmod", "obl") and obj_row.head in noun_ref:
                _add_rel(obj_row.head, row.form, obj_row.idx)
        elif row.pos == "VERB":
            subj_tok = None
            obj_tok = None
            if row.dep == "acl" and row.head in noun_ref:
                subj_tok = row.head
            for child in rows:
                if child.head != row.idx:
                    continue
                if child.dep == "nsubj" and child.idx in noun_ref:
                    subj_tok = child.idx
                elif child.dep in ("dobj", "obj") and child.idx in noun_ref:
                    obj_tok = child.idx
            if subj_tok is not None and obj_tok is not None:
                _add_rel(subj_tok, row.form, obj_tok, "nonspatial")

    return PromptSpec(
        prompt_id=prompt_id,
        raw_text=" ".join(r.form for r in rows),
        objects=tuple(
            ObjectMention(ref=o.ref, lemma=o.lemma, attributes=tuple(attrs_by_ref.get(o.ref, ())))
            for o in objects
        ),
        relations=tuple(relations),
    )


def serialize_parsed(spec: PromptSpec) -> str:
    """Render a PromptSpec as the token listing accepted by load_parsed.

    Supports specs in which each object is the object of at most one relation,
    which covers everything parse_prompt can produce.
    """
    incoming: dict[int, RelationMention] = {}
    for rel in spec.relations:
        if rel.object_ref in incoming:
            raise ValueError("object with multiple incoming relations is not serializable")
        incoming[rel.object_ref] = rel

    lines: list[tuple[str, str, str, int, str]] = []
    noun_idx: dict[int, int] = {}

    def emit(form: str, lemma: str, pos: str, head: int, dep: str) -> int:
        lines.append((form, lemma, pos, head, dep))
        return len(lines)

    for obj in spec.objects:
        rel = incoming.get(obj.ref)
        bridge_idx = 0
        bridge_is_verb = False
        if rel is not None:
            single = rel.phrase.split()
            bridge_is_verb = rel.kind == "nonspatial" and len(single) == 1
            pos = "VERB" if bridge_is_verb else "ADP"
            dep = "acl" if bridge_is_verb else "prep"
            bridge_idx = emit(rel.phrase, rel.phrase, pos, noun_idx[rel.subject_ref], dep)
        attr_first = len(lines) + 1
        for attr in obj.attributes:
            emit(attr.value, attr.value, "ADJ", 0, "amod")  # head patched below
        if rel is not None:
            dep = "dobj" if bridge_is_verb else "pobj"
            head = bridge_idx
        elif obj.ref == 0:
            dep, head = "root", 0
        else:
            dep, head = "conj", noun_idx[obj.ref - 1] if obj.ref - 1 in noun_idx else 0
        idx = emit(obj.lemma, obj.lemma, "NOUN", head, dep)
        noun_idx[obj.ref] = idx
        for k in range(attr_first - 1, idx - 1):
            form, lemma, pos, _, dep_k = lines[k]
            lines[k] = (form, lemma, pos, idx, dep_k)

    return "\n".join(
        f"{form}\t{lemma}\t{pos}\t{head}\t{dep}" for form, lemma, pos, head, dep in lines
    )


# ---------------------------------------------------------------------------
# dict round-trips for JSONL interchange
# ---------------------------------------------------------------------------

def triple_to_dict(t: Triple) -> dict:
    return {
        "head": t.head,
        "relation": t.relation,
        "tail": t.tail,
        "kind": t.kind,
        "provenance": t.provenance,
    }


def triple_from_dict(d: dict) -> Triple:
    return Triple(d["head"], d["relation"], d["tail"], d["kind"], d.get("provenance", ""))


def spec_to_dict(spec: PromptSpec) -> dict:
    return {
        "prompt_id": spec.prompt_id,
        "raw_text": spec.raw_text,
        "objects": [
            {
                "ref": o.ref,
                "lemma": o.lemma,
                "attributes": [{"kind": a.kind, "value": a.value} for a in o.attributes],
            }
            for o in spec.objects
        ],
        "relations": [
            {
                "subject_ref": r.subject_ref,
                "phrase": r.phrase,
                "kind": r.kind,
                "object_ref": r.object_ref,
            }
            for r in spec.relations
        ],
        "ambiguities": list(spec.ambiguities),
    }


def spec_from_dict(d: dict) -> PromptSpec:
    return PromptSpec(
        prompt_id=d["prompt_id"],
        raw_text=d["raw_text"],
        objects=tuple(
            ObjectMention(
                ref=o["ref"],
                lemma=o["lemma"],
                attributes=tuple(
                    AttributeMention(a["kind"], a["value"]) for a in o.get("attributes", [])
                ),
            )
            for o in d["objects"]
        ),
        relations=tuple(
            RelationMention(r["subject_ref"], r["phrase"], r["kind"], r["object_ref"])
            for r in d.get("relations", [])
        ),
        ambiguities=tuple(d.get("ambiguities", [])),
    )
