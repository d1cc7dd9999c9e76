"""Exact-match answer scoring with a frozen normalization pipeline.

The rules are deliberately small and fixed so accuracy numbers stay
comparable across runs: strip surrounding whitespace, drop thousands commas
and currency symbols, peel trailing sentence periods and percent signs, then
compare numerically when both sides parse as decimals and case-insensitively
otherwise.
"""

from __future__ import annotations

from decimal import Decimal, InvalidOperation
from typing import Optional, Sequence

_CURRENCY = "$€£¥"


def normalize_answer(text: str) -> str:
    """Canonical comparison form of one answer string."""
    s = text.strip()
    s = s.replace(",", "")
    for symbol in _CURRENCY:
        s = s.replace(symbol, "")
    s = s.strip()
    while s and s[-1] in ".%":
        s = s[:-1].rstrip()
    dec = _as_decimal(s)
    if dec is not None:
        if dec.is_zero():
            return "0"  # -0 and 0 are decimal-equal
        # 'f' formatting avoids scientific notation so '1000' stays '1000'
        return format(dec.normalize(), "f")
    return s.lower()


def _as_decimal(s: str) -> Optional[Decimal]:
    if not s:
        return None
    try:
        value = Decimal(s)
    except InvalidOperation:
        return None
    if not value.is_finite():
        return None
    return value


def answers_match(answer: str, gold: str) -> bool:
    return normalize_answer(answer) == normalize_answer(gold)


def score(answers: Sequence[str], golds: Sequence[str]) -> float:
    """Exact-match accuracy in percent over paired answer/gold lists."""
    if len(answers) != len(golds):
        raise ValueError(
            f"answers and golds differ in length: {len(answers)} vs {len(golds)}"
        )
    if not answers:
        return 0.0
    matches = sum(answers_match(a, g) for a, g in zip(answers, golds))
    return 100.0 * matches / len(answers)
