import io
import math

import pytest

from autoscale_lab.baselines import RPS2, RPS5, BaselineController
from autoscale_lab.env import EnvConfig, ScalingEnv
from autoscale_lab.metrics import SERIES_COLUMNS, Summary, reduction_pct, rollout, summarize, write_series, \
    write_summary
from autoscale_lab.trace import Constant, Sinusoid, synth_schedule

ENV = EnvConfig()


def rows_for(policy, sched, seed=0):
    return rollout(BaselineController(policy, ENV), ScalingEnv(ENV), sched, seed=seed)


def test_cumulative_columns_match_running_sums():
    rows = rows_for(RPS2, synth_schedule(Sinusoid(6, 4, 300), 1800))
    cpu = arr = done = viol = 0
    for r in rows:
        m = r.metrics
        cpu += m.cpu_seconds
        arr += m.arrivals
        done += m.completed
        viol += m.violations
        assert r.cumulative_cpu_seconds == pytest.approx(cpu, rel=1e-12)
        assert (r.cumulative_arrivals, r.cumulative_invocations) == (arr, done)
        assert r.running_violation_rate == (viol / done if done else 0.0)
        assert r.elapsed_s == 15 * (m.interval_index + 1)


def test_summary_and_reduction():
    a = Summary("a", 90.0, 100, 100, 5, 0)
    b = Summary("b", 100.0, 100, 100, 20, 0)
    assert a.cpu_seconds_per_invocation == 0.9 and a.violation_rate == 0.05
    assert reduction_pct(a, b) == pytest.approx(10.0)
    idle = Summary("i", 3.0, 0, 0, 0, 0)
    assert reduction_pct(idle, idle) == 0.0
    assert math.isnan(reduction_pct(a, idle))


def test_zero_load_is_idle_only():
    sched = synth_schedule(Constant(0), 600)
    for policy in (RPS5, RPS2):
        s = summarize(policy.name, rows_for(policy, sched))
        assert s.violations == 0 and s.invocations == 0
        # one instance throughout: idle cost only
        assert s.cpu_seconds == pytest.approx(600 * ENV.idle_cost_cpu_s_per_s)


def test_horizon_cuts_and_checks_length():
    sched = synth_schedule(Constant(3), 900)
    assert len(rollout(BaselineController(RPS5, ENV), ScalingEnv(ENV), sched, horizon_s=300)) == 20
    with pytest.raises(ValueError):
        rollout(BaselineController(RPS5, ENV), ScalingEnv(ENV), sched, horizon_s=1000)


def test_ledger_gets_one_record_per_decision():
    from autoscale_lab.ledger import Ledger

    led = Ledger()
    rows = rollout(BaselineController(RPS2, ENV), ScalingEnv(ENV), synth_schedule(Constant(4), 300), ledger=led)
    assert len(led) == len(rows) == 20
    assert [r.resulting_instances for r in led.records] == [r.metrics.instances for r in rows]
    assert led.verify() == (True, None)


def test_csv_writers():
    rows = rows_for(RPS5, synth_schedule(Constant(2), 60))
    buf = io.StringIO()
    write_series(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == list(SERIES_COLUMNS) and len(lines) == 5
    buf = io.StringIO()
    write_summary([summarize("drqn", rows), summarize("rps5", rows)], buf)
    text = buf.getvalue()
    assert "cpu_per_invocation_reduction_pct" in text and text.rstrip().endswith("drqn,rps5,0.0")
