"""English text normalization and word-error-rate computation.

The normalizer is a documented approximation of the usual ASR-style
normalizers: good enough for hermetic scoring, with bit-exact parity
available through the /normalize adapter endpoint when an external
normalizer is deployed.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from typing import Sequence


class UndefinedRateError(ValueError):
    """WER is undefined when the reference normalizes to nothing."""


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    @property
    def total_edits(self) -> int:
        return self.substitutions + self.deletions + self.insertions


# Order matters: "won't"/"can't" are irregular and must match before the
# generic n't rule. "'s" is ambiguous (is/has/possessive) and stays intact.
_CONTRACTIONS = (
    (re.compile(r"\bwon't\b"), "will not"),
    (re.compile(r"\bcan't\b"), "cannot"),
    (re.compile(r"n't\b"), " not"),
    (re.compile(r"'re\b"), " are"),
    (re.compile(r"'ve\b"), " have"),
    (re.compile(r"'ll\b"), " will"),
    (re.compile(r"'m\b"), " am"),
)

_UNITS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9,
}
_TEENS = {
    "ten": 10, "eleven": 11, "twelve": 12, "thirteen": 13, "fourteen": 14,
    "fifteen": 15, "sixteen": 16, "seventeen": 17, "eighteen": 18,
    "nineteen": 19,
}
_TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50,
    "sixty": 60, "seventy": 70, "eighty": 80, "ninety": 90,
}
_SCALES = {
    "thousand": 10 ** 3,
    "million": 10 ** 6,
    "billion": 10 ** 9,
    "trillion": 10 ** 12,
}


class _NumberRun:
    """Accumulates one spelled-out cardinal, token by token.

    Follows the usual grammar: sub-thousand groups (units/teens/tens,
    optionally times one "hundred") attached to strictly decreasing scale
    words. `feed` returns False when the next word cannot extend the run,
    at which point the caller flushes `value()` and starts over.
    """

    def __init__(self) -> None:
        self.total = 0
        self.current = 0
        self.started = False
        self.last_scale = float("inf")
        self.group_has_hundred = False
        self.allowed = {"zero", "unit", "teen", "ten", "hundred", "scale"}

    @staticmethod
    def classify(word: str) -> str | None:
        if word == "zero":
            return "zero"
        if word in _UNITS:
            return "unit"
        if word in _TEENS:
            return "teen"
        if word in _TENS:
            return "ten"
        if word == "hundred":
            return "hundred"
        if word in _SCALES:
            return "scale"
        return None

    def feed(self, word: str) -> bool:
        kind = self.classify(word)
        if kind is None or kind not in self.allowed:
            return False
        if kind == "scale" and _SCALES[word] >= self.last_scale:
            return False
        if kind == "hundred" and self.group_has_hundred:
            return False
        self.started = True
        if kind == "zero":
            self.allowed = set()
        elif kind == "unit":
            self.current += _UNITS[word]
            self.allowed = {"hundred", "scale"}
        elif kind == "teen":
            self.current += _TEENS[word]
            self.allowed = {"hundred", "scale"}
        elif kind == "ten":
            self.current += _TENS[word]
            self.allowed = {"unit", "scale"}
        elif kind == "hundred":
            self.current = max(self.current, 1) * 100
            self.group_has_hundred = True
            self.allowed = {"unit", "teen", "ten", "scale"}
        else:
            self.total += max(self.current, 1) * _SCALES[word]
            self.current = 0
            self.last_scale = _SCALES[word]
            self.group_has_hundred = False
            self.allowed = {"unit", "teen", "ten"}
        return True

    def value(self) -> int:
        return self.total + self.current


def _convert_number_runs(tokens: list[str]) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(tokens):
        run = _NumberRun()
        j = i
        while j < len(tokens) and run.feed(tokens[j]):
            j += 1
        if run.started:
            out.append(str(run.value()))
            i = j
        else:
            out.append(tokens[i])
            i += 1
    return out


def _strip_symbols(text: str) -> str:
    # Keep letters, digits, and apostrophes flanked by them on both sides;
    # everything else becomes a token boundary.
    out: list[str] = []
    last = len(text) - 1
    for i, ch in enumerate(text):
        if ch.isalnum():
            out.append(ch)
        elif (
            ch == "'"
            and 0 < i < last
            and text[i - 1].isalnum()
            and text[i + 1].isalnum()
        ):
            out.append(ch)
        else:
            out.append(" ")
    return "".join(out)


def normalize_text(raw: str) -> list[str]:
    """Normalize raw text to a list of comparison tokens.

    Rule pipeline: Unicode compatibility fold (plus curly apostrophes to
    ASCII so the contraction table matches real-world text); lowercase;
    contraction expansion; hyphenated compounds split apart; symbols
    stripped to boundaries; spelled-out cardinals merged into digit
    strings. Symbol stripping runs before number conversion so trailing
    punctuation cannot hide a number word.
    """
    text = unicodedata.normalize("NFKC", raw)
    text = text.replace("’", "'").replace("‘", "'")
    text = text.lower()
    for pattern, replacement in _CONTRACTIONS:
        text = pattern.sub(replacement, text)
    text = text.replace("-", " ")
    text = _strip_symbols(text)
    tokens = text.split()
    return _convert_number_runs(tokens)


def word_error_rate(
    reference: Sequence[str], hypothesis: Sequence[str]
) -> tuple[float, EditCounts]:
    """Minimal-edit WER with deterministic counts.

    Unit costs; on cost ties the backtrace prefers substitution over
    insertion over deletion, so the S/D/I split is reproducible (the rate
    itself never depends on the tie-break).
    """
    n, m = len(reference), len(hypothesis)
    if n == 0:
        raise UndefinedRateError("reference is empty; WER is undefined")
    # dist[i][j]: edits aligning reference[:i] with hypothesis[:j].
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        ref_tok = reference[i - 1]
        row = dist[i]
        prev = dist[i - 1]
        for j in range(1, m + 1):
            row[j] = min(
                prev[j - 1] + (ref_tok != hypothesis[j - 1]),
                row[j - 1] + 1,
                prev[j] + 1,
            )
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] and \
                reference[i - 1] == hypothesis[j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    counts = EditCounts(subs, dels, ins, n)
    return counts.total_edits / n, counts


def wer_of_strings(ref_raw: str, hyp_raw: str) -> float:
    reference = normalize_text(ref_raw)
    if not reference:
        raise UndefinedRateError(
            "reference normalizes to the empty sequence; WER is undefined"
        )
    rate, _ = word_error_rate(reference, normalize_text(hyp_raw))
    return rate
