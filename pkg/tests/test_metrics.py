import io
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dynabench.events import Event, EventTag, Outcome
from dynabench.metrics import (
    CSV_HEADER,
    CostConfig,
    evaluate_cost,
    manipulation_score,
    read_csv,
    route_completion,
    success_rate,
    summarize,
    write_csv,
)


def outcome(success=False, ee0=((0.0, 0.0),), ee1=((0.5, 0.0),), obj=(1.0, 0.0), events=()):
    return Outcome(success, 1.0, tuple(events), np.array(ee0, float), np.array(ee1, float), np.array(obj, float))


# hand-computed examples ---------------------------------------------------------


def test_rc_success_is_100():
    assert route_completion(outcome(success=True, ee1=((-3.0, 0.0),))) == 100.0


def test_rc_half_way():
    assert route_completion(outcome()) == pytest.approx(50.0, abs=1e-9)


def test_rc_clamped_at_zero():
    assert route_completion(outcome(ee1=((-1.0, 0.0),))) == 0.0


def test_rc_max_over_arms():
    o = outcome(ee0=((0.0, 0.0), (2.0, 0.0)), ee1=((0.5, 0.0), (1.2, 0.0)))
    assert route_completion(o) == pytest.approx(80.0, abs=1e-9)


def test_rc_degenerate_denominator():
    assert route_completion(outcome(ee0=((1.0, 0.0),), ee1=((1.5, 0.0),))) == 100.0


def test_ms_examples():
    assert manipulation_score(50.0, [Event(EventTag.OUT_OF_VIEW, 0.3)]) == pytest.approx(25.0, abs=1e-9)
    both = [Event(EventTag.OUT_OF_VIEW, 0.1), Event(EventTag.CLUTTER_COLLISION, 0.2)]
    assert manipulation_score(100.0, both) == pytest.approx(40.0, abs=1e-9)
    assert manipulation_score(80.0, []) == pytest.approx(80.0, abs=1e-9)


def test_ms_penalty_at_most_once():
    many = [Event(EventTag.CLUTTER_COLLISION, 0.1 * k) for k in range(5)]
    assert manipulation_score(100.0, many) == pytest.approx(80.0, abs=1e-9)


def test_ms_rejects_out_of_range():
    with pytest.raises(ValueError):
        manipulation_score(120.0, [])


def test_success_rate_examples():
    ok, bad = outcome(success=True), outcome()
    assert success_rate([ok] * 4) == 100.0
    assert success_rate([bad] * 4) == 0.0
    assert success_rate([ok] * 9 + [bad] * 91) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        success_rate([])


def step_state(ee, obj):
    return SimpleNamespace(ee=np.array(ee, float), obj=np.array(obj, float))


def test_cost_examples():
    tr = [(step_state([[0, 0]], [1, 0]), np.zeros(2)), (step_state([[0, 0]], [0, 1]), np.zeros(2))]
    assert evaluate_cost(tr, CostConfig(gamma=0.0, horizon=5)) == pytest.approx(1.0)
    assert evaluate_cost(tr, CostConfig(gamma=0.9, horizon=5)) == pytest.approx(1.9)
    zero = [(step_state([[1, 1]], [1, 1]), np.zeros(2))] * 3
    assert evaluate_cost(zero, CostConfig()) == 0.0


def test_cost_nearest_arm_and_control_term():
    tr = [(step_state([[3, 0], [0, 0.5]], [0, 0]), np.array([0.3, 0.4]))]
    assert evaluate_cost(tr, CostConfig(control_weight=2.0)) == pytest.approx(0.5 + 2 * 0.25)


def test_cost_config_validation():
    with pytest.raises(ValueError):
        CostConfig(gamma=1.0)
    with pytest.raises(ValueError):
        CostConfig(horizon=0)


def test_csv_format():
    rep = summarize([outcome(success=True), outcome(events=[Event(EventTag.OUT_OF_VIEW, 0.5)])], "interception", 1, 0.1)
    text = write_csv([rep])
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[1] == "interception,1,0.1,2,50.00,62.50,75.00,1,0"
    assert read_csv(io.StringIO(text))[0]["ms"] == "62.50"


# properties -----------------------------------------------------------------------

coord = st.floats(-1, 1)
pt = st.tuples(coord, coord)
event_tags = st.lists(st.sampled_from(list(EventTag)), max_size=6)


@given(rc=st.floats(0, 100), tags=event_tags)
def test_ms_bounded_by_rc(rc, tags):
    ms = manipulation_score(rc, tags)
    assert 0 <= ms <= rc
    penalised = EventTag.OUT_OF_VIEW in tags or EventTag.CLUTTER_COLLISION in tags
    if penalised:
        assert ms <= 0.8 * rc
    else:
        assert ms == rc


@given(ee0=pt, ee1=pt, obj=pt, shift=pt)
def test_rc_translation_invariant(ee0, ee1, obj, shift):
    a = outcome(ee0=(ee0,), ee1=(ee1,), obj=obj)
    s = np.array(shift)
    b = outcome(ee0=(np.add(ee0, s),), ee1=(np.add(ee1, s),), obj=np.add(obj, s))
    ra, rb = route_completion(a), route_completion(b)
    assert 0 <= ra <= 100
    assert ra == pytest.approx(rb, abs=1e-6)


@given(flags=st.lists(st.booleans(), min_size=1, max_size=30), seed=st.integers(0, 100))
def test_success_rate_permutation_invariant(flags, seed):
    outs = [outcome(success=f) for f in flags]
    perm = np.random.default_rng(seed).permutation(len(outs))
    assert success_rate(outs) == success_rate([outs[i] for i in perm])


@given(d=st.lists(st.floats(0, 2), min_size=1, max_size=10), k=st.integers(0, 9), bump=st.floats(0, 1))
def test_cost_monotone_in_distance(d, k, bump):
    k = k % len(d)
    tr = [(step_state([[0, 0]], [x, 0]), np.zeros(2)) for x in d]
    d2 = list(d)
    d2[k] += bump
    tr2 = [(step_state([[0, 0]], [x, 0]), np.zeros(2)) for x in d2]
    cfg = CostConfig(gamma=0.95, horizon=20)
    assert evaluate_cost(tr2, cfg) >= evaluate_cost(tr, cfg)
