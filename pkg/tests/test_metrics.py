import pytest
from hypothesis import given
from hypothesis import strategies as st

from zkfl.defense import DetectionReport
from zkfl.errors import UndefinedMetricError
from zkfl.metrics import ConfusionTally, accumulate, cross_round_success_rate, modified_ppv


def test_ppv_examples():
    assert modified_ppv(ConfusionTally(4, 0, 4)) == 0.5
    assert modified_ppv(ConfusionTally(0, 3, 4)) == 0.0
    assert modified_ppv(ConfusionTally(2, 2, 4)) == 0.25
    with pytest.raises(UndefinedMetricError):
        modified_ppv(ConfusionTally())


def test_tally_validation():
    with pytest.raises(ValueError):
        ConfusionTally(5, 0, 4)
    with pytest.raises(ValueError):
        ConfusionTally(-1, 0, 0)


@given(st.lists(st.tuples(st.sets(st.integers(0, 9)), st.sets(st.integers(0, 9))),
                min_size=1, max_size=30))
def test_ppv_never_exceeds_half(rounds):
    tally = ConfusionTally()
    for removed, attacked in rounds:
        tally = accumulate(DetectionReport(0, True, removed=frozenset(removed)), attacked, tally)
    try:
        assert 0.0 <= modified_ppv(tally) <= 0.5
    except UndefinedMetricError:
        assert tally == ConfusionTally()


def test_accumulate_counts():
    t = accumulate(DetectionReport(0, True, removed=frozenset({1, 2, 5})), {1, 2, 3})
    assert t == ConfusionTally(2, 1, 3)
    assert t + t == ConfusionTally(4, 2, 6)


def test_success_rate():
    assert cross_round_success_rate([(True, True), (False, True), (False, False),
                                     (True, False)]) == 0.5
    with pytest.raises(ValueError):
        cross_round_success_rate([])
