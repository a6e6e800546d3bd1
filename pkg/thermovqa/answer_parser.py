"""
Mapping of free-text VQA answers to Normal / Anomaly / Unsure verdicts.

The query asks whether the battery is NORMAL, so "Yes" means Normal and
"No" means Anomaly.
"""

from enum import Enum
from typing import List, Optional
import logging
import re

LOGGER = logging.getLogger(__name__)


class Verdict(str, Enum):
    NORMAL = 'normal'
    ANOMALY = 'anomaly'
    UNSURE = 'unsure'


class BinaryLabel(str, Enum):
    NORMAL = 'normal'
    ANOMALY = 'anomaly'


# Explicit answer statements, e.g. "Answer: b" or "the answer is (a)"
_ANSWER_LETTER = re.compile(
    r"\banswer\**(?:\s+is)?\s*[:\-]?\s*[\*\"'(]*\s*([ab])"
    r"(?=\s*[)\.\*\"',;:\n]|\s*$)")
_ANSWER_WORD = re.compile(
    r"\banswer\**(?:\s+is)?\s*[:\-]?\s*[\*\"']*\s*(yes|no)\b")

_NORMAL_OPTIONS = [
    re.compile(r"\ba\)\s*[\*\"']*\s*yes\b"),
    re.compile(r"\ba\.\s*yes\b"),
    re.compile(r"\(a\)"),
    re.compile(r"\boption\s+a\b"),
    re.compile(r"^[\s\*\"'(]*a\)?[\s\*\"'.]*$"),
    re.compile(r"\ba\)[\s\*\"'.]*$"),
]
_ANOMALY_OPTIONS = [
    re.compile(r"\bb\)\s*[\*\"']*\s*no\b"),
    re.compile(r"\bb\.\s*no\b"),
    re.compile(r"\(b\)"),
    re.compile(r"\boption\s+b\b"),
    re.compile(r"^[\s\*\"'(]*b\)?[\s\*\"'.]*$"),
    re.compile(r"\bb\)[\s\*\"'.]*$"),
]
# The option list echoed back from the prompt is not an answer
_ECHOED_OPTIONS = re.compile(r"a\)\s*yes\s*,?\s*(?:(?:or|and)\s+)?b\)\s*no")

_HEDGES = [
    "cannot determine", "can't determine", "cannot be determined",
    "not possible to determine", "impossible to determine",
    "unable to determine", "difficult to determine", "hard to determine",
    "difficult to say", "hard to say", "cannot say", "can't say",
    "not enough information", "insufficient information", "unclear",
    "cannot conclude", "can't conclude", "not sure", "uncertain",
]

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+|\n+")
# "No, ..." or "Yes." opening a sentence; "no hot spots" is not an answer
_LEADING_YES_NO = re.compile(r"^[\W_]*(yes|no)\s*(?:[,.!:;]|$)")
_TRAILING_YES_NO = re.compile(r"\b(yes|no)[\W_]*$")


def _matches(patterns: List[re.Pattern], text: str) -> bool:
    return any(p.search(text) for p in patterns)


def _sentences(text: str) -> List[str]:
    return [s.strip() for s in _SENTENCE_SPLIT.split(text) if s.strip()]


def _sentence_verdict(sentence: str) -> Optional[Verdict]:
    leading = _LEADING_YES_NO.search(sentence)
    trailing = _TRAILING_YES_NO.search(sentence)
    if leading and trailing and leading.group(1) != trailing.group(1):
        return None
    if leading:
        word = leading.group(1)
    elif trailing and len(set(re.findall(r"\b(yes|no)\b", sentence))) == 1:
        # "... whether it is yes or no" is not an answer
        word = trailing.group(1)
    else:
        return None
    return Verdict.NORMAL if word == 'yes' else Verdict.ANOMALY


def _option_verdict(text: str) -> Optional[Verdict]:
    letters = {m.group(1) for m in _ANSWER_LETTER.finditer(text)}
    words = {m.group(1) for m in _ANSWER_WORD.finditer(text)}
    stated = {'a' if w == 'yes' else 'b' for w in words} | letters
    if len(stated) == 1:
        return Verdict.NORMAL if stated.pop() == 'a' else Verdict.ANOMALY
    if len(stated) > 1:
        return Verdict.UNSURE

    text = _ECHOED_OPTIONS.sub(' ', text)
    normal = _matches(_NORMAL_OPTIONS, text)
    anomaly = _matches(_ANOMALY_OPTIONS, text)
    if normal and anomaly:
        return Verdict.UNSURE
    if normal:
        return Verdict.NORMAL
    if anomaly:
        return Verdict.ANOMALY
    return None


def parse_verdict(text: Optional[str]) -> Verdict:
    """
    Parses a free-text VQA answer.

    Rules, in priority order:

    1. explicit option tokens ("a) yes", "(a)", "answer: a" vs. "b) no",
       "(b)", "answer: b"); both options asserted gives Unsure,
    2. a standalone "yes" / "no" opening or closing the final sentence,
       then an opening "yes," / "no." of the first sentence,
    3. anything else, hedges and empty text included, is Unsure.

    Parameters
    ----------
    text : Optional[str]
        Raw model answer

    Returns
    -------
    Verdict
        Parsed verdict, never raises
    """
    if not text or not text.strip():
        return Verdict.UNSURE
    lowered = text.lower()

    verdict = _option_verdict(lowered)
    if verdict is not None:
        return verdict

    # The closing sentence decides; an opening "Yes," / "No." is the fallback
    sentences = _sentences(lowered)
    for sentence in (sentences[-1], sentences[0]):
        verdict = _sentence_verdict(sentence)
        if verdict is not None:
            return verdict

    if any(hedge in lowered for hedge in _HEDGES):
        LOGGER.debug(f"Hedged answer: {text[:80]!r}")
    return Verdict.UNSURE


def score_verdict(verdict: Verdict) -> BinaryLabel:
    """
    Binary prediction of a verdict; Unsure counts as an anomaly.
    """
    if verdict is Verdict.NORMAL:
        return BinaryLabel.NORMAL
    return BinaryLabel.ANOMALY
