"""The 37-symbol character vocabulary: digits, uppercase letters, and a
terminator class that doubles as padding for unused positions."""

from .errors import DataError

CHARSET = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"
NULL_INDEX = len(CHARSET)  # 36: end-of-word / empty position
VOCAB_SIZE = len(CHARSET) + 1  # 37

_CHAR_TO_INDEX = {c: i for i, c in enumerate(CHARSET)}


def is_valid_word(word: str) -> bool:
    """True if every character is an uppercase letter or digit."""
    return len(word) > 0 and all(c in _CHAR_TO_INDEX for c in word)


def encode_word(word: str) -> list[int]:
    """Map a word to class indices. Raises DataError on characters
    outside the alphabet (lowercase input is not normalized here)."""
    try:
        return [_CHAR_TO_INDEX[c] for c in word]
    except KeyError as exc:
        raise DataError(f"character {exc.args[0]!r} not in vocabulary") from None


def decode_indices(indices) -> str:
    """Map class indices back to a string, stopping at the first
    terminator index."""
    chars = []
    for i in indices:
        i = int(i)
        if i == NULL_INDEX:
            break
        chars.append(CHARSET[i])
    return "".join(chars)
