"""Pluggable stemmers used for both supervision targets and relevance judging.

The same stemmer must be used when building bag-of-word targets and when
judging retrievals, otherwise supervision and scoring silently disagree.
"""

from __future__ import annotations

_GERMAN_SUFFIXES = ("en", "er", "es", "e", "n", "s")
_MIN_STEM = 3


def identity_stem(token: str) -> str:
    """Lowercase only; suitable for synthetic corpora."""
    return token.lower()


def german_suffix_stem(token: str) -> str:
    """Minimal German suffix stripper.

    Strips the suffixes -en, -e, -er, -es, -n, -s (longest first) as long as
    at least 3 characters remain, repeating until no suffix applies. The
    fixpoint loop makes the stemmer idempotent.
    """
    stem = token.lower()
    while True:
        for suffix in _GERMAN_SUFFIXES:
            if stem.endswith(suffix) and len(stem) - len(suffix) >= _MIN_STEM:
                stem = stem[: -len(suffix)]
                break
        else:
            return stem


STEMMERS = {
    "identity": identity_stem,
    "german": german_suffix_stem,
}


def get_stemmer(name: str):
    try:
        return STEMMERS[name]
    except KeyError:
        raise ValueError(
            f"unknown stemmer {name!r}; available: {sorted(STEMMERS)}"
        ) from None
