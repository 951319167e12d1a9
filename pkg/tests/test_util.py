from types import SimpleNamespace

import pytest

from cardiolts.decorators import generation_checked
from cardiolts.errors import StaleTopologyError
from cardiolts.util import (
    LimitedSizeDict,
    ceil_log2,
    config_hash,
    is_power_of_two,
)


@pytest.mark.parametrize(
    "ratio, expected",
    [(1.0, 0), (1.5, 1), (2.0, 1), (2.0000001, 2), (8.0, 3), (1024.0, 10)],
)
def test_ceil_log2(ratio, expected):
    assert ceil_log2(ratio) == expected


def test_ceil_log2_of_small_ratio_is_not_positive():
    assert ceil_log2(0.01) <= 0


@pytest.mark.parametrize("value", [1, 2, 4, 64, 1 << 20])
def test_powers_of_two(value):
    assert is_power_of_two(value)


@pytest.mark.parametrize("value", [0, -2, 3, 6, 12])
def test_not_powers_of_two(value):
    assert not is_power_of_two(value)


def test_config_hash():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16


def test_limited_size_dict():
    cache = LimitedSizeDict(2)
    cache["a"] = 1
    cache["b"] = 2
    cache["c"] = 3
    assert list(cache) == ["b", "c"]


def test_generation_checked(caplog):
    @generation_checked("field")
    def consume(mesh, field=None):
        return field

    mesh = SimpleNamespace(generation=3)
    current = SimpleNamespace(generation=3)
    assert consume(mesh, current) is current
    assert consume(mesh) is None
    with pytest.raises(StaleTopologyError) as info:
        consume(mesh, field=SimpleNamespace(generation=1))
    assert (info.value.expected, info.value.found, info.value.detail) == (3, 1, "field")
    assert "generation 1" in caplog.text


def test_generation_checked_against_self():
    class Bound:
        generation = 2

        @generation_checked("other", reference="self")
        def use(self, other):
            return True

    assert Bound().use(SimpleNamespace(generation=2))
    with pytest.raises(StaleTopologyError):
        Bound().use(SimpleNamespace(generation=0))
