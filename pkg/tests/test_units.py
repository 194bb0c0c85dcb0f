import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from appqos.units import format_number, parse_quantity


@pytest.mark.parametrize("text, value", [
    ("20M", 20e6), ("1ms", 1e-3), ("0.5", 0.5), ("10k", 1e4), ("2G", 2e9),
    ("5%", 0.05), ("250us", 250e-6), ("3s", 3.0), ("1e6", 1e6), (".5M", 5e5),
])
def test_parse_quantity(text, value):
    assert parse_quantity(text) == pytest.approx(value, rel=1e-15)


def test_parse_inf():
    assert math.isinf(parse_quantity("inf"))


@pytest.mark.parametrize("bad", ["", "M", "10X", "1..2", "ten", "10 M"])
def test_parse_rejects(bad):
    with pytest.raises(ValueError):
        parse_quantity(bad)


@given(st.floats(min_value=0, max_value=1e15, allow_nan=False))
def test_format_round_trips(x):
    assert parse_quantity(format_number(x)) == x
