import pytest
from hypothesis import given, strategies as st

from pkgforge.version import ANY_VERSION, VersionConstraint, VersionTag


def test_parse_three_components():
    assert VersionTag.parse("2.5.0") == VersionTag(2, 5, 0)


def test_parse_v_prefix_and_short_forms():
    assert VersionTag.parse("v2") == VersionTag(2, 0, 0)
    assert VersionTag.parse("1.0") == VersionTag(1, 0, 0)
    assert VersionTag.parse(0.5) == VersionTag(0, 5, 0)  # YAML floats arrive like this


@pytest.mark.parametrize("bad", ["", "a.b.c", "1.2.3.4", "-1.0.0", "1..2"])
def test_parse_rejects_malformed(bad):
    with pytest.raises(ValueError):
        VersionTag.parse(bad)


def test_negative_components_rejected():
    with pytest.raises(ValueError):
        VersionTag(1, -1, 0)


def test_total_order_is_lexicographic():
    assert VersionTag(2, 4, 9) < VersionTag(2, 5, 0) < VersionTag(3, 0, 0)


def test_str_always_three_components():
    assert str(VersionTag.parse("v2")) == "2.0.0"


@given(st.integers(0, 99), st.integers(0, 99), st.integers(0, 99))
def test_str_parse_roundtrip(a, b, c):
    tag = VersionTag(a, b, c)
    assert VersionTag.parse(str(tag)) == tag


def test_any_constraint_accepts_everything():
    assert ANY_VERSION.satisfied_by(VersionTag(9, 9, 9))
    assert not ANY_VERSION.is_exact


def test_exact_constraint():
    c = VersionConstraint.exact("0.5.1")
    assert c.is_exact
    assert c.satisfied_by(VersionTag(0, 5, 1))
    assert not c.satisfied_by(VersionTag(0, 5, 2))


@pytest.mark.parametrize("text,expect_any", [("", True), ("*", True), ("any", True), ("=1.2.3", False)])
def test_constraint_parse(text, expect_any):
    c = VersionConstraint.parse(text)
    assert (c.tag is None) == expect_any


def test_constraint_str():
    assert str(ANY_VERSION) == "*"
    assert str(VersionConstraint.exact("1.2.3")) == "=1.2.3"
