import csv
import io

import numpy as np
import pytest

from autoscale_lab.cli import EXIT_CONFIG, EXIT_DATA, EXIT_MISSING, EXIT_OK, EXIT_TAMPERED, main
from autoscale_lab.trace import ArrivalSchedule, MinuteTrace, write_trace

TOY = """\
[agent]
episode_len = 30
batch_size = 2
seq_len = 6
burn_in = 2
train_every = 4
target_sync_every = 10
epsilon_decay_steps = 100
[trace]
source = constant
constant_rps = {rps}
[run]
episodes = {episodes}
horizon_s = 300
eval_every = 2
snapshot_every = 2
out = {out}
"""


def toy_config(tmp_path, name="toy.ini", rps=12, episodes=6, out="run"):
    path = tmp_path / name
    path.write_text(TOY.format(rps=rps, episodes=episodes, out=tmp_path / out))
    return str(path)


def write_csv_trace(path, traces):
    with open(path, "w", newline="") as fh:
        write_trace(traces, fh)


def read_schedule(path):
    with open(path) as fh:
        return ArrivalSchedule.from_csv(fh)


def test_ingest_zero_trace(tmp_path, capsys):
    src = tmp_path / "t.csv"
    write_csv_trace(src, [MinuteTrace("zero", 0, (0,) * 1440)])
    out = tmp_path / "s.csv"
    assert main(["ingest", str(src), "--out", str(out)]) == EXIT_OK
    sched = read_schedule(out)
    assert len(sched) == 86_400 and sched.ticks.sum() == 0


def test_ingest_conserves_each_minute(tmp_path):
    rng = np.random.default_rng(0)
    counts = tuple(int(c) for c in rng.integers(0, 500, 1440))
    src = tmp_path / "t.csv"
    write_csv_trace(src, [MinuteTrace("a", 0, (1,) * 1440), MinuteTrace("b", 0, counts)])
    out = tmp_path / "s.csv"
    assert main(["ingest", str(src), "--function-id", "b", "--mode", "uniform",
                 "--out", str(out)]) == EXIT_OK
    # re-sum the written CSV by hand, independent of the schedule class
    with open(out) as fh:
        vals = [int(r["arrivals"]) for r in csv.DictReader(fh)]
    assert [sum(vals[60 * m:60 * m + 60]) for m in range(1440)] == list(counts)


def test_ingest_errors(tmp_path):
    assert main(["ingest", str(tmp_path / "missing.csv")]) == EXIT_MISSING
    bad = tmp_path / "bad.csv"
    bad.write_text("HashOwner,HashApp,HashFunction,Trigger,1\no,a,f,http,1\n")
    assert main(["ingest", str(bad)]) == EXIT_DATA
    src = tmp_path / "t.csv"
    write_csv_trace(src, [MinuteTrace("a", 0, (1,) * 1440)])
    assert main(["ingest", str(src), "--function-id", "nope", "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG


def test_synth_trace_then_ingest(tmp_path):
    d = tmp_path / "traces"
    assert main(["synth-trace", "--days", "2", "--out", str(d)]) == EXIT_OK
    files = sorted(p.name for p in d.iterdir())
    assert files == ["invocations_per_function_md.anon.d01.csv", "invocations_per_function_md.anon.d02.csv"]
    assert main(["ingest", str(d / files[1]), "--out", str(tmp_path / "s.csv")]) == EXIT_OK


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[env]\nmax_instance = 3\n")
    assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
    assert main(["train", "--config", str(tmp_path / "none.ini")]) == EXIT_MISSING


def test_train_is_reproducible(tmp_path):
    cfg = toy_config(tmp_path)
    curves = []
    for out in ("a", "b"):
        assert main(["train", "--config", cfg, "--out", str(tmp_path / out), "--seed", "5"]) == EXIT_OK
        curves.append((tmp_path / out / "reward_curve.csv").read_text())
    assert curves[0] == curves[1]
    assert len(curves[0].splitlines()) == 7
    for name in ("final.ckpt", "best.ckpt", "ledger.tsv", "provenance.json", "config.resolved.ini"):
        assert (tmp_path / "a" / name).exists()
    # every second episode a greedy evaluation pass is ledgered, 30 decisions each
    assert main(["verify-log", str(tmp_path / "a" / "ledger.tsv")]) == EXIT_OK
    assert len((tmp_path / "a" / "ledger.tsv").read_text().splitlines()) == 1 + 3 * 30


def test_resume_reproduces_uninterrupted_run(tmp_path):
    cfg = toy_config(tmp_path, episodes=8)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "full")]) == EXIT_OK
    part = str(tmp_path / "part")
    assert main(["train", "--config", cfg, "--out", part, "--stop-after", "4"]) == EXIT_OK
    assert len((tmp_path / "part" / "reward_curve.csv").read_text().splitlines()) == 5
    assert main(["train", "--config", cfg, "--out", part, "--resume"]) == EXIT_OK
    for name in ("reward_curve.csv", "ledger.tsv", "final.ckpt"):
        assert (tmp_path / "part" / name).read_bytes() == (tmp_path / "full" / name).read_bytes(), name


def test_resume_without_snapshot_is_missing(tmp_path):
    cfg = toy_config(tmp_path)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "empty"), "--resume"]) == EXIT_MISSING


def test_evaluate_zero_load(tmp_path, capsys):
    cfg = toy_config(tmp_path, rps=0, episodes=2)
    assert main(["train", "--config", cfg]) == EXIT_OK
    ckpt = str(tmp_path / "run" / "final.ckpt")
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "ev"), "--checkpoint", ckpt]) == EXIT_OK
    ev = tmp_path / "ev"
    with open(ev / "summary.csv") as fh:
        head = list(csv.DictReader(io.StringIO(fh.read().split("\n\n")[0])))
    assert [r["policy"] for r in head] == ["drqn", "rps5", "rps2", "vps1"]
    assert all(r["violation_rate"] == "0.0" and r["invocations"] == "0" for r in head)
    assert (ev / "series_drqn.csv").exists()
    assert main(["verify-log", str(ev / "eval_ledger.tsv")]) == EXIT_OK
    first = (ev / "series_drqn.csv").read_text()
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "ev2"), "--checkpoint", ckpt]) == EXIT_OK
    assert (tmp_path / "ev2" / "series_drqn.csv").read_text() == first


def test_evaluate_needs_checkpoint(tmp_path):
    cfg = toy_config(tmp_path)
    assert main(["evaluate", "--config", cfg, "--checkpoint", str(tmp_path / "no.ckpt")]) == EXIT_MISSING
    assert main(["evaluate", "--config", cfg, "--policies", "rps5,k8s"]) == EXIT_CONFIG
    assert main(["evaluate", "--config", cfg, "--policies", "rps5", "--out", str(tmp_path / "b")]) == EXIT_OK


def test_verify_log_exit_codes(tmp_path, capsys):
    from autoscale_lab.env import EnvState
    from autoscale_lab.ledger import Ledger, write_ledger

    led = Ledger()
    for i in range(10):
        led.append(tick=i, policy_name="p", observed=EnvState(1, 0.0, 0.0, 0.0), action_code=i % 5,
                   resulting_instances=1)
    path = tmp_path / "l.tsv"
    write_ledger(led, str(path))
    assert main(["verify-log", str(path)]) == EXIT_OK
    lines = path.read_text().splitlines(keepends=True)
    cols = lines[4].split("\t")
    cols[6] = "4" if cols[6] != "4" else "3"
    lines[4] = "\t".join(cols)
    path.write_text("".join(lines))
    assert main(["verify-log", str(path)]) == EXIT_TAMPERED
    assert "index 3" in capsys.readouterr().out
    assert main(["verify-log", str(tmp_path / "nope.tsv")]) == EXIT_MISSING
    (tmp_path / "junk.tsv").write_text("not a ledger\n")
    assert main(["verify-log", str(tmp_path / "junk.tsv")]) == EXIT_DATA


def test_version_and_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
