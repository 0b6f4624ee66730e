import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bri import ParamVector, RngStream, coarsening_schedule, validate_study
from bri.errors import LengthMismatch, NonBinaryAssignment, NonFiniteOutcome


def test_validate_study_counts(example_study):
    assert (example_study.n, example_study.n0, example_study.n1) == (4, 2, 2)
    assert not example_study.degenerate


def test_degenerate_group_is_flagged_not_rejected():
    study = validate_study([1, 1], [0.0, 0.0])
    assert study.n1 == 2 and study.n0 == 0
    assert study.degenerate


def test_non_binary_assignment():
    with pytest.raises(NonBinaryAssignment):
        validate_study([0, 2], [1.0, 1.0])


def test_length_mismatch_and_nonfinite():
    with pytest.raises(LengthMismatch):
        validate_study([0, 1, 1], [1.0, 2.0])
    with pytest.raises(NonFiniteOutcome):
        validate_study([0, 1], [1.0, np.nan])
    with pytest.raises(LengthMismatch):
        validate_study([0, 1], [1.0, 2.0], X=np.ones((3, 1)))


def test_study_arrays_are_read_only(example_study):
    with pytest.raises(ValueError):
        example_study.y[0] = 0.0


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(-1e6, 1e6)), min_size=1, max_size=30))
def test_validate_study_idempotent(rows):
    a = [r[0] for r in rows]
    y = [r[1] for r in rows]
    study = validate_study(a, y)
    again = validate_study(study.a, study.y, study.X)
    assert again == study
    assert study.n0 + study.n1 == study.n == len(rows)


def test_coarsening_schedule_examples():
    one = coarsening_schedule(1)
    assert one.alpha == pytest.approx(0.75, abs=1e-15)
    assert one.gamma == pytest.approx(-0.25, abs=1e-15)
    two = coarsening_schedule(2)
    assert two.alpha == pytest.approx(2 / 3, abs=1e-15)
    assert two.gamma == pytest.approx(-1 / 6, abs=1e-15)
    assert one.eps(16) == pytest.approx(0.125, abs=1e-15)


@pytest.mark.parametrize("p", range(1, 12))
def test_coarsening_schedule_balances_both_error_terms(p):
    sched = coarsening_schedule(p)
    assert 0.5 < sched.alpha < (p + 1) / (2 * p)
    assert sched.gamma < 0
    branch_a = p * (sched.alpha - 0.5) - 0.5
    branch_b = 0.5 - sched.alpha
    assert branch_a == pytest.approx(branch_b, abs=1e-14)
    assert sched.gamma == pytest.approx(max(branch_a, branch_b), abs=1e-14)


def test_param_vector_validation():
    pv = ParamVector(np.array([1.0, 2.0]), ("alpha", "sigma"))
    assert pv["sigma"] == 2.0 and len(pv) == 2
    with pytest.raises(ValueError):
        ParamVector(np.array([np.inf]), ("theta",))
    with pytest.raises(ValueError):
        ParamVector(np.array([]), ())


def test_rng_stream_reproducible_and_distinct():
    first = RngStream(7, 3).generator().random(1_000_000)
    second = RngStream(7, 3).generator().random(1_000_000)
    assert np.array_equal(first, second)
    other = RngStream(7, 4).generator().random(1_000_000)
    assert not np.array_equal(first, other)
    # Independent streams should be uncorrelated.
    assert abs(np.corrcoef(first, other)[0, 1]) < 5 / np.sqrt(first.size)


def test_rng_stream_children_are_stable():
    root = RngStream(11)
    assert root.spawn(2) == RngStream(11).spawn(2)
    assert root.spawn(2) != root.spawn(3)
    assert root.named("data") != root.named("oracle")
    keyed = root.keyed([0.5]).generator().random(3)
    assert np.array_equal(keyed, root.keyed([0.5]).generator().random(3))
