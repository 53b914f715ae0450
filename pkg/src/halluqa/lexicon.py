"""Bundled word tables: attribute classes, relation prepositions, verbs, plurals.

All tables are plain-text data files shipped with the package and overridable
by path, so behaviour is deterministic and versioned with the code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent / "data"

ATTRIBUTE_KINDS = ("color", "shape", "texture", "other")


def _read_words(path: Path) -> frozenset[str]:
    words = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


def _read_pairs(path: Path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        left, right = line.lower().split("\t")
        pairs[left.strip()] = right.strip()
    return pairs


@dataclass(frozen=True)
class Lexicon:
    """Word tables driving the prompt grammar and attribute classification."""

    colors: frozenset[str]
    shapes: frozenset[str]
    textures: frozenset[str]
    verbs: frozenset[str]
    plural_exceptions: dict[str, str]
    # preposition phrase -> "spatial" | "nonspatial", pre-split into tokens,
    # ordered longest-first so multiword phrases win.
    prepositions: tuple[tuple[tuple[str, ...], str], ...] = field(repr=False, default=())

    def attribute_kind(self, word: str) -> str:
        word = word.lower()
        if word in self.colors:
            return "color"
        if word in self.shapes:
            return "shape"
        if word in self.textures:
            return "texture"
        return "other"

    def is_known_attribute(self, word: str) -> bool:
        return self.attribute_kind(word) != "other"

    def lemmatize(self, word: str) -> str:
        """Singularize a noun via the exceptions table plus suffix rules."""
        word = word.lower()
        if word in self.plural_exceptions:
            return self.plural_exceptions[word]
        if len(word) > 4 and word.endswith("ies"):
            return word[:-3] + "y"
        if len(word) > 4 and word.endswith(("xes", "ses", "zes", "ches", "shes")):
            return word[:-2]
        if len(word) > 4 and word.endswith("oes"):
            return word[:-2]
        if len(word) > 3 and word.endswith("s") and not word.endswith(("ss", "us", "is")):
            return word[:-1]
        return word

    def match_preposition(self, tokens: list[str], start: int) -> tuple[str, str, int] | None:
        """Longest-first preposition match at tokens[start].

        Returns (phrase, kind, n_tokens_consumed) or None.
        """
        for phrase_tokens, kind in self.prepositions:
            n = len(phrase_tokens)
            if tuple(tokens[start : start + n]) == phrase_tokens:
                return " ".join(phrase_tokens), kind, n
        return None


def load_lexicon(data_dir: Path | str | None = None) -> Lexicon:
    base = Path(data_dir) if data_dir is not None else DATA_DIR
    preps = []
    for phrase, kind in _read_pairs(base / "prepositions.txt").items():
        preps.append((tuple(phrase.split()), kind))
    preps.sort(key=lambda item: (-len(item[0]), item[0]))
    return Lexicon(
        colors=_read_words(base / "colors.txt"),
        shapes=_read_words(base / "shapes.txt"),
        textures=_read_words(base / "textures.txt"),
        verbs=_read_words(base / "verbs.txt"),
        plural_exceptions=_read_pairs(base / "plural_exceptions.txt"),
        prepositions=tuple(preps),
    )


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    return load_lexicon()


def levenshtein(a: str, b: str) -> int:
    """Plain edit distance (insert/delete/substitute each cost 1)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity_ratio(a: str, b: str) -> float:
    """Normalized Levenshtein similarity in [0, 1].

    Uses the substitution-cost-2 convention, ratio = (|a|+|b| - dist) / (|a|+|b|),
    so ("cat", "cats") scores 6/7 ~ 0.857 rather than the harsher 0.75 that the
    max-length normalization would give.
    """
    total = len(a) + len(b)
    if total == 0:
        return 1.0
    if not a or not b:
        return 0.0
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (0 if ca == cb else 2)))
        prev = cur
    return (total - prev[-1]) / total
