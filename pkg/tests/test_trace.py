import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autoscale_lab.trace import (AZURE_2019, ArrivalSchedule, Constant, MinuteTrace, Sinusoid, Step,
                                 TraceFormatError, TraceSchema, expand_days, expand_to_seconds, parse_trace,
                                 select_function, synth_schedule, trace_to_text, write_trace)

HEADER = "HashOwner,HashApp,HashFunction,Trigger," + ",".join(str(i) for i in range(1, 1441))


def row(fid, counts, owner="o", app="a", trigger="http"):
    return ",".join([owner, app, fid, trigger] + [str(c) for c in counts])


def text(*rows):
    return "\n".join([HEADER, *rows]) + "\n"


def minute_trace(counts, fid="f", day=0):
    full = list(counts) + [0] * (1440 - len(counts))
    return MinuteTrace(fid, day, tuple(full))


# -- parsing --------------------------------------------------------------

def test_zero_row_parses_to_zero_total():
    traces = parse_trace(io.StringIO(text(row("fn", [0] * 1440))))
    assert len(traces) == 1
    assert traces[0].function_id == "fn"
    assert traces[0].total == 0


def test_minute_three_value_lands_at_index_two():
    counts = [0] * 1440
    counts[2] = 7
    counts[100] = 3
    raw = text(row("fn", counts))
    parsed = parse_trace(io.StringIO(raw))[0]
    assert parsed.counts[2] == 7
    # independent check: split the raw data line by hand and re-sum
    fields = raw.splitlines()[1].split(",")
    assert sum(int(v) for v in fields[4:]) == parsed.total == 10


def test_short_row_is_rejected_with_row_number():
    raw = text(row("a", [1] * 1440), row("b", [1] * 1439))
    with pytest.raises(TraceFormatError) as exc:
        parse_trace(io.StringIO(raw))
    assert exc.value.row == 3
    assert "row 3" in str(exc.value)


@pytest.mark.parametrize("bad", ["-1", "x", "1.5", ""])
def test_bad_count_is_rejected(bad):
    counts = ["0"] * 1440
    counts[5] = bad
    raw = HEADER + "\n" + ",".join(["o", "a", "fn", "http"] + counts) + "\n"
    with pytest.raises(TraceFormatError) as exc:
        parse_trace(io.StringIO(raw))
    assert exc.value.row == 2


def test_missing_header_is_rejected():
    with pytest.raises(TraceFormatError):
        parse_trace(io.StringIO(""))
    with pytest.raises(TraceFormatError):
        parse_trace(io.StringIO(row("fn", [0] * 1440) + "\n"))


def test_same_function_on_two_days_stays_distinct():
    a = parse_trace(io.StringIO(text(row("fn", [1] * 1440))), day_index=0)
    b = parse_trace(io.StringIO(text(row("fn", [2] * 1440))), day_index=1)
    assert a[0] != b[0]
    assert (a[0].day_index, b[0].day_index) == (0, 1)


def test_custom_schema_column_names():
    schema = TraceSchema(id_column="fid", minute_columns=tuple(f"m{i}" for i in range(1440)),
                         delimiter=";", extra_columns=(), trigger_column=None)
    raw = "fid;" + ";".join(schema.minute_columns) + "\nzz;" + ";".join(["2"] * 1440) + "\n"
    t = parse_trace(io.StringIO(raw), schema)[0]
    assert t.function_id == "zz" and t.total == 2880


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 5000), min_size=1440, max_size=1440), st.text("abcdef0123456789", min_size=1))
def test_write_then_parse_round_trips(counts, fid):
    t = MinuteTrace(fid, 0, tuple(counts))
    again = parse_trace(io.StringIO(trace_to_text([t])))
    assert again == [t]


def test_minute_trace_invariants():
    with pytest.raises(ValueError):
        MinuteTrace("f", 0, (0,) * 1439)
    with pytest.raises(ValueError):
        MinuteTrace("", 0, (0,) * 1440)
    with pytest.raises(ValueError):
        MinuteTrace("f", 0, (-1,) + (0,) * 1439)
    with pytest.raises(ValueError):
        MinuteTrace("f", -1, (0,) * 1440)


# -- selection --------------------------------------------------------------

def test_rank_one_of_single_trace():
    t = minute_trace([3])
    assert select_function([t], rank=1) is t


def test_rank_orders_by_total_volume():
    small, big = minute_trace([10], "a"), minute_trace([20], "b")
    assert select_function([small, big], rank=1) is big
    assert select_function([small, big], rank=2) is small


def test_rank_ties_break_on_function_id():
    x, y = minute_trace([5], "y"), minute_trace([5], "x")
    assert select_function([x, y], rank=1).function_id == "x"


def test_unknown_id_and_bad_rank_raise():
    t = minute_trace([1], "a")
    with pytest.raises(KeyError):
        select_function([t], function_id="nope")
    with pytest.raises(IndexError):
        select_function([t], rank=2)
    with pytest.raises(ValueError):
        select_function([t])
    with pytest.raises(ValueError):
        select_function([], rank=1)


# -- expansion ------------------------------------------------------------

def test_uniform_sixty_gives_all_ones():
    s = expand_to_seconds(minute_trace([60]))
    assert s.ticks[:60].tolist() == [1] * 60


def test_uniform_remainder_goes_to_first_ticks():
    s = expand_to_seconds(minute_trace([7]))
    assert s.ticks[:60].tolist() == [1] * 7 + [0] * 53
    assert s.ticks[:60].sum() == 7


def test_uniform_mixed_quotient_and_remainder():
    s = expand_to_seconds(minute_trace([125]))
    assert s.ticks[:60].tolist() == [3] * 5 + [2] * 55


def test_poisson_zero_minute_is_zero_for_any_seed():
    for seed in range(5):
        s = expand_to_seconds(minute_trace([0, 30]), "poisson", seed)
        assert s.ticks[:60].sum() == 0


def test_poisson_is_seeded():
    t = minute_trace([600] * 10)
    a = expand_to_seconds(t, "poisson", 3)
    assert a == expand_to_seconds(t, "poisson", 3)
    assert a != expand_to_seconds(t, "poisson", 4)
    # mean 10 per tick over 600 ticks; a loose sanity band
    assert abs(a.ticks[:600].mean() - 10) < 1


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        expand_to_seconds(minute_trace([1]), "gamma")


def test_tick_cap_clamps_corrupt_counts():
    s = expand_to_seconds(minute_trace([6_000_000]))
    assert s.ticks.max() == 10_000


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 100_000), min_size=1440, max_size=1440))
def test_uniform_conserves_every_minute(counts):
    t = MinuteTrace("f", 0, tuple(counts))
    s = expand_to_seconds(t)
    assert len(s) == 86_400
    assert s.minute_sums().tolist() == counts


def test_expand_days_concatenates_in_day_order():
    d1 = minute_trace([1], "f", 1)
    d0 = minute_trace([2], "f", 0)
    s = expand_days([d1, d0])
    assert len(s) == 2 * 86_400
    assert s.minute_sums()[0] == 2 and s.minute_sums()[1440] == 1
    with pytest.raises(ValueError):
        expand_days([d0, minute_trace([1], "g", 1)])


# -- schedule object --------------------------------------------------------

def test_schedule_csv_round_trip():
    s = ArrivalSchedule([0, 3, 1, 0], "x")
    buf = io.StringIO()
    s.to_csv(buf)
    assert buf.getvalue() == "tick_index,arrivals\n0,0\n1,3\n2,1\n3,0\n"
    buf.seek(0)
    assert ArrivalSchedule.from_csv(buf, "x") == s


def test_schedule_is_read_only_and_validated():
    s = ArrivalSchedule([1, 2])
    with pytest.raises(ValueError):
        s.ticks[0] = 5
    with pytest.raises(ValueError):
        ArrivalSchedule([1, -1])
    with pytest.raises(ValueError):
        s.window(1, 5)


def test_schedule_csv_rejects_gaps():
    with pytest.raises(TraceFormatError) as exc:
        ArrivalSchedule.from_csv(io.StringIO("tick_index,arrivals\n0,1\n2,1\n"))
    assert exc.value.row == 3


# -- synthetic patterns -------------------------------------------------------

def test_constant_zero():
    assert synth_schedule(Constant(0), 10).ticks.tolist() == [0] * 10


def test_step_profile():
    s = synth_schedule(Step(((0, 2), (10, 10))), 20)
    assert s.ticks.tolist() == [2] * 10 + [10] * 10


def test_sinusoid_matches_formula():
    s = synth_schedule(Sinusoid(10, 5, 60), 60)
    expected = [math.floor(10 + 5 * math.sin(2 * math.pi * t / 60) + 0.5) for t in range(60)]
    assert s.ticks.tolist() == expected
    # t = 5 lands exactly on 12.5; ties round up, not to even
    assert s.ticks[5] == 13


def test_sinusoid_matches_python_round_away_from_ties():
    s = synth_schedule(Sinusoid(10, 5, 60), 60)
    for t in range(60):
        x = 10 + 5 * math.sin(2 * math.pi * t / 60)
        if x % 1 != 0.5:
            assert s.ticks[t] == round(x)


def test_synth_preconditions():
    with pytest.raises(ValueError):
        synth_schedule(Constant(1), 0)
    with pytest.raises(ValueError):
        synth_schedule(Sinusoid(1, 2, 60), 10)
    with pytest.raises(ValueError):
        synth_schedule(Constant(-1), 10)
    with pytest.raises(ValueError):
        synth_schedule(Step(((5, 1),)), 10)


def test_jitter_is_seeded():
    a = synth_schedule(Constant(4), 300, seed=1, jitter=True)
    assert a == synth_schedule(Constant(4), 300, seed=1, jitter=True)
    assert a != synth_schedule(Constant(4), 300, seed=2, jitter=True)


def test_write_trace_uses_schema_header():
    buf = io.StringIO()
    write_trace([minute_trace([1])], buf)
    first = buf.getvalue().splitlines()[0].split(",")
    assert first[:4] == ["HashOwner", "HashApp", "HashFunction", "Trigger"]
    assert first[4:] == list(AZURE_2019.minute_columns)
    assert np.array_equal(np.array(first[4:7], dtype=int), [1, 2, 3])
