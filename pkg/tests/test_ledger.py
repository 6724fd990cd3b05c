import pytest
from hypothesis import given
from hypothesis import strategies as st

from csbo.ledger import FIELD_NAMES, CostLedger, DivergenceError

counts = st.integers(min_value=0, max_value=10**9)
ledgers = st.builds(CostLedger, *([counts] * len(FIELD_NAMES)))


@given(a=ledgers, b=ledgers)
def test_addition_is_fieldwise_and_commutative(a, b):
    s = a + b
    assert s == b + a
    for name in FIELD_NAMES:
        assert getattr(s, name) == getattr(a, name) + getattr(b, name)
    assert a <= s and b <= s


@given(a=ledgers, b=ledgers)
def test_in_place_addition_matches_addition(a, b):
    expected = a + b
    c = a.copy()
    c += b
    assert c == expected
    assert a.merge(b) == expected


@given(items=st.lists(ledgers, min_size=1, max_size=8))
def test_total_and_mean(items):
    tot = CostLedger.total(items)
    mean = CostLedger.mean(items)
    for name in FIELD_NAMES:
        assert getattr(tot, name) == sum(getattr(i, name) for i in items)
        assert getattr(mean, name) == pytest.approx(getattr(tot, name) / len(items))


def test_copy_is_independent():
    a = CostLedger(eta_samples=3)
    b = a.copy()
    b.eta_samples += 1
    assert a.eta_samples == 3
    assert a.as_dict()["eta_samples"] == 3
    assert tuple(a.as_dict()) == FIELD_NAMES


def test_divergence_error_carries_location():
    err = DivergenceError("boom", epoch=3, step=5, t=7, trace=[1])
    assert isinstance(err, ArithmeticError)
    assert (err.epoch, err.step, err.t, err.trace) == (3, 5, 7, [1])
