"""Levenshtein distance and lexicon-constrained word selection.

Constrained recognition replaces a raw prediction with the lexicon word
of minimum edit distance.  Ties resolve in favor of an exact match first
(so correct predictions can never be made wrong), then lexicographically.
A linear scan is plenty at the lexicon sizes used here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import DataError
from .vocab import is_valid_word

__all__ = ["edit_distance", "constrained_select", "Lexicon"]


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs.

    Rolling single-row DP: O(len(a)*len(b)) time, O(min width) space.
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1,          # delete from a
                           cur[j - 1] + 1,       # insert into a
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass
class Lexicon:
    """Uppercase candidate word list with a human-readable size tag."""

    words: tuple
    tag: str = ""

    def __post_init__(self):
        words = tuple(w.upper() for w in self.words)
        if not words:
            raise DataError("lexicon must be nonempty")
        for w in words:
            if not is_valid_word(w):
                raise DataError(f"lexicon word {w!r} is not alphanumeric")
        self.words = words
        if not self.tag:
            self.tag = str(len(words))

    @classmethod
    def from_file(cls, path: str, tag: str = "") -> "Lexicon":
        with open(path, "r", encoding="utf-8") as fh:
            words = [line.strip() for line in fh if line.strip()]
        return cls(tuple(words), tag=tag or "")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word.upper() in self.words


def constrained_select(pred: str, lex: Lexicon | Sequence[str]) -> str:
    """Lexicon word minimizing edit distance to `pred` (case-normalized).

    Tie-breaking: an exact match always wins; otherwise the
    lexicographically smallest word among the minimizers.
    """
    words = lex.words if isinstance(lex, Lexicon) else tuple(w.upper() for w in lex)
    if not words:
        raise DataError("constrained_select needs a nonempty lexicon")
    pred = pred.upper()
    best_word = None
    best_dist = None
    for word in words:
        dist = edit_distance(pred, word)
        if dist == 0:
            return word
        if best_dist is None or dist < best_dist or (dist == best_dist and word < best_word):
            best_word, best_dist = word, dist
    return best_word
