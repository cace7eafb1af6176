from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hqflow.resources import (
    AttributePredicate,
    DeviceClaim,
    QuantityError,
    ResourceRequest,
    format_quantity,
    parse_quantity,
)


@pytest.mark.parametrize(
    "res,text,want",
    [
        ("cpu", "500m", 500),
        ("cpu", "1", 1000),
        ("cpu", "0.25", 250),
        ("cpu", 2, 2000),
        ("memory", "500Mi", 500 * 2**20),
        ("memory", "1Gi", 2**30),
        ("memory", "2k", 2000),
        ("memory", "128", 128),
        ("nvidia.com/gpu", 1, 1),
        ("iqm.com/qpu", "3", 3),
    ],
)
def test_parse_quantity(res, text, want):
    assert parse_quantity(res, text) == want


@pytest.mark.parametrize(
    "res,text",
    [("cpu", "0.0001"), ("cpu", "-1"), ("memory", "1.5"), ("nvidia.com/gpu", "0.5"), ("cpu", ""), ("cpu", True), ("cpu", "abc")],
)
def test_bad_quantities(res, text):
    with pytest.raises(QuantityError):
        parse_quantity(res, text)


@given(st.sampled_from(["cpu", "memory", "nvidia.com/gpu"]), st.integers(0, 10**12))
def test_format_parse_round_trip(res, amount):
    assert parse_quantity(res, format_quantity(res, amount)) == amount


def test_predicates():
    attrs = {"shot_budget": 5000, "model": "garnet", "flag": True}
    assert AttributePredicate("shot_budget", ">=", 4096)(attrs)
    assert not AttributePredicate("shot_budget", "<", 4096)(attrs)
    assert AttributePredicate("model", "==", "garnet")(attrs)
    assert not AttributePredicate("missing", "==", 1)(attrs)
    assert not AttributePredicate("model", ">", 3)(attrs)
    assert not AttributePredicate("flag", ">", 0)(attrs)
    with pytest.raises(ValueError):
        AttributePredicate("x", "~=", 1)


def test_request_charge_and_problems():
    req = ResourceRequest({"cpu": 500, "memory": 0}, {"cpu": 250}, (DeviceClaim("iqm.com/qpu", 1),))
    assert req.charge() == {"cpu": 500, "iqm.com/qpu": 1}
    assert req.problems() == ["limit for cpu is below its request"]
    assert ResourceRequest({}, {}, (DeviceClaim("x", -1),)).problems()
