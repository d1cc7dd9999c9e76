"""Answer normalization and exact-match accuracy."""

import pytest

from leash_capture import answers_match, normalize_answer, score


class TestNormalize:
    @pytest.mark.parametrize("raw,expected", [
        ("  42  ", "42"),
        ("$1,000.", "1000"),
        ("1,234,567", "1234567"),
        ("€3,000", "3000"),
        ("£5", "5"),
        ("¥700", "700"),
        ("50%", "50"),
        ("50 %", "50"),
        ("5.0", "5"),
        ("0.500", "0.5"),
        (".5", "0.5"),
        ("-12.0", "-12"),
        ("1e3", "1000"),
        ("Paris.", "paris"),
        ("YES", "yes"),
        ("", ""),
        (".", ""),
        ("%", ""),
        ("0", "0"),
        ("-0", "0"),
        ("-0.00", "0"),
    ])
    def test_canonical_forms(self, raw, expected):
        assert normalize_answer(raw) == expected

    @pytest.mark.parametrize("raw", [
        "  42  ", "$1,000.", "5.0", "1e3", "Paris.", "50%", "", "-0",
        "a, b", "Infinity", "nan", "0.500", "The answer is 7",
    ])
    def test_idempotent(self, raw):
        once = normalize_answer(raw)
        assert normalize_answer(once) == once

    def test_nonfinite_is_text_not_number(self):
        # Decimal parses these, but they are not numeric answers
        assert normalize_answer("Infinity") == "infinity"
        assert normalize_answer("NaN") == "nan"

    def test_internal_punctuation_survives(self):
        assert normalize_answer("3.5 km") == "3.5 km"


class TestMatch:
    @pytest.mark.parametrize("a,b", [
        ("$1,000.", "1000"),
        ("5.0", "5"),
        ("0.50", ".5"),
        ("Paris", "paris"),
        ("42%", "42"),
        ("-0", "0"),
    ])
    def test_match(self, a, b):
        assert answers_match(a, b)

    @pytest.mark.parametrize("a,b", [
        ("6", "5"),
        ("5.01", "5"),
        ("paris", "london"),
        ("", "0"),
        ("5 apples", "5"),
    ])
    def test_no_match(self, a, b):
        assert not answers_match(a, b)


class TestScore:
    def test_all_and_none(self):
        assert score(["5", "6"], ["5", "6"]) == 100.0
        assert score(["1", "2"], ["3", "4"]) == 0.0

    def test_fraction(self):
        got = score(["5.0", "6", "$7", "x"], ["5", "9", "7", "y"])
        assert got == pytest.approx(50.0)

    def test_empty_lists(self):
        assert score([], []) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            score(["1"], ["1", "2"])
