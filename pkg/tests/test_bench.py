import csv

import pytest

from resilitask import cli
from resilitask.bench import (CSV_COLUMNS, RunReport, read_csv,
                              run_synthetic_distributed, run_synthetic_local,
                              write_csv, write_ratio_file)

TINY = dict(tasks=300, grain_us=50, cores=4)


def test_fault_free_local_run_counters():
    r = run_synthetic_local(**TINY, mode="none")
    assert r.tasks_launched == 300
    assert r.failures == 0 and r.replays == 0 and r.replicas == 0
    assert r.wall_time_s > 0


def test_replay_counter_algebra_under_faults():
    r = run_synthetic_local(**TINY, mode="replay", n=3, error_rate=0.2, seed=1)
    assert r.failures > 0
    assert r.tasks_launched == r.tasks + r.replays
    assert r.replays <= (r.n - 1) * r.tasks


def test_replicate_launches_n_per_task():
    r = run_synthetic_local(**TINY, mode="replicate", n=3)
    assert r.replicas == 3 * r.tasks
    assert r.tasks_launched == 3 * r.tasks


def test_rate_one_exhausts_every_task():
    r = run_synthetic_local(tasks=50, grain_us=20, cores=2, mode="replay", n=2,
                            error_rate=1.0, seed=3)
    assert r.failures == 100  # every attempt of every task injects
    assert r.replays == 50


def test_seed_determinism_of_counters():
    a = run_synthetic_local(**TINY, mode="replay", n=3, error_rate=0.3, seed=9)
    b = run_synthetic_local(**TINY, mode="replay", n=3, error_rate=0.3, seed=9)
    assert (a.failures, a.replays, a.tasks_launched) == (b.failures, b.replays, b.tasks_launched)
    c = run_synthetic_local(**TINY, mode="replay", n=3, error_rate=0.3, seed=10)
    assert (a.failures, a.replays) != (c.failures, c.replays)


def test_distributed_none_mode_counters():
    r = run_synthetic_distributed(4, 40, 10, 50, "none", 1, 0.0, (), 0)
    assert r.remote_invocations == 40
    assert r.tasks_launched == 400
    assert r.failures == 0
    assert r.bytes_moved > 0


def test_distributed_replay_recovers_on_other_ranks():
    r = run_synthetic_distributed(4, 80, 25, 50, "replay", 3, 0.002, (1,), seed=0)
    assert r.failures > 0
    assert r.remote_fallbacks > 0
    assert r.remote_invocations == 80 + r.remote_fallbacks
    assert r.faulty_nodes == (1,)


def test_distributed_replicate_width():
    r = run_synthetic_distributed(4, 24, 5, 50, "replicate", 3, 0.0, (), 0)
    assert r.remote_invocations == 24 * 3
    assert r.replicas == 72


# -- CSV ----------------------------------------------------------------------


def _sample_reports():
    return [
        RunReport("synthetic-local", "none", 4, 1, 100, 200, 1, 0.0, (), 7,
                  1.25, 100, 0, 0, 0, 0, 0, 0),
        RunReport("synthetic-distributed", "replay", 2, 4, 500, 500, 3, 0.05,
                  (1, 3), 42, 3.5, 510, 12, 10, 0, 510, 10, 123456),
    ]


def test_csv_two_runs_three_lines(tmp_path):
    path = tmp_path / "runs.csv"
    write_csv(_sample_reports(), path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0] == ",".join(CSV_COLUMNS)


def test_csv_roundtrip_identity(tmp_path):
    path = tmp_path / "runs.csv"
    reports = _sample_reports()
    write_csv(reports, path)
    assert read_csv(path) == reports


def test_csv_roundtrip_randomized_counters(tmp_path):
    import random

    rng = random.Random(0)
    reports = []
    for i in range(25):
        reports.append(RunReport(
            benchmark=rng.choice(["synthetic-local", "stencil-local"]),
            mode=rng.choice(["none", "replay", "replicate_vote"]),
            cores=rng.randint(1, 48), localities=rng.randint(1, 32),
            tasks=rng.randint(0, 10**6), grain_us=rng.randint(0, 1000),
            n=rng.randint(1, 5), error_rate=rng.random(),
            faulty_nodes=tuple(sorted(rng.sample(range(8), rng.randint(0, 3)))),
            seed=rng.randint(0, 2**31), wall_time_s=rng.random() * 100,
            tasks_launched=rng.randint(0, 10**7), failures=rng.randint(0, 10**5),
            replays=rng.randint(0, 10**5), replicas=rng.randint(0, 10**6),
            remote_invocations=rng.randint(0, 10**5),
            remote_fallbacks=rng.randint(0, 10**4),
            bytes_moved=rng.randint(0, 10**12)))
    path = tmp_path / "random.csv"
    write_csv(reports, path)
    assert read_csv(path) == reports


def test_ratio_is_computable_from_two_rows(tmp_path):
    path = tmp_path / "runs.csv"
    none = RunReport("synthetic-local", "none", 4, 1, 100, 200, 1, 0.0, (), 0, 2.0)
    rep = RunReport("synthetic-local", "replay", 4, 1, 100, 200, 3, 0.0, (), 0, 2.1)
    write_csv([none, rep], path)
    rows = {r.mode: r for r in read_csv(path)}
    assert rows["replay"].wall_time_s / rows["none"].wall_time_s == pytest.approx(1.05)


def test_ratio_file_format(tmp_path):
    path = tmp_path / "ratios.dat"
    write_ratio_file(path, [(1, 1.002), (12, 1.01)])
    assert path.read_text() == "1 1.002000\n12 1.010000\n"


# -- CLI ------------------------------------------------------------------------


def test_cli_rejects_error_rate_above_one():
    with pytest.raises(SystemExit) as exc:
        cli.build_parser().parse_args(["synthetic-local", "--error-rate", "1.5"])
    assert exc.value.code == 2


def test_cli_rejects_unknown_flag():
    with pytest.raises(SystemExit) as exc:
        cli.build_parser().parse_args(["synthetic-local", "--frobnicate", "1"])
    assert exc.value.code == 2


def test_cli_parses_large_scale_stencil_request():
    args = cli.build_parser().parse_args(
        ["stencil-local", "--subdomains", "384", "--points", "8000",
         "--iterations", "4096", "--steps", "256"])
    assert (args.subdomains, args.points, args.iterations, args.steps) == (384, 8000, 4096, 256)
    assert args.repeat == 3  # least-of-three reporting by default


def test_cli_faulty_nodes_parsing():
    args = cli.build_parser().parse_args(
        ["synthetic-distributed", "--faulty-nodes", "1,3"])
    assert args.faulty_nodes == (1, 3)


def test_cli_synthetic_local_end_to_end(tmp_path, capsys):
    out = tmp_path / "out.csv"
    code = cli.main(["synthetic-local", "--tasks", "60", "--grain-us", "20",
                     "--cores", "2", "--mode", "replay", "--n", "2",
                     "--repeat", "2", "--csv-out", str(out)])
    assert code == 0
    reports = read_csv(out)
    assert len(reports) == 1
    assert reports[0].mode == "replay"
    assert "synthetic-local" in capsys.readouterr().out


def test_cli_stencil_local_end_to_end(tmp_path):
    out = tmp_path / "st.csv"
    dump = tmp_path / "grid.bin"
    code = cli.main(["stencil-local", "--subdomains", "4", "--points", "32",
                     "--iterations", "4", "--steps", "4", "--mode", "replay_validate",
                     "--repeat", "1", "--csv-out", str(out), "--dump-grid", str(dump)])
    assert code == 0
    assert dump.exists()
    report = read_csv(out)[0]
    assert report.benchmark == "stencil-local"
    assert report.tasks_launched == 16


def test_cli_stencil_distributed_end_to_end(tmp_path):
    code = cli.main(["stencil-distributed", "--subdomains", "4", "--points", "32",
                     "--iterations", "3", "--steps", "4", "--localities", "2",
                     "--repeat", "1", "--csv-out", str(tmp_path / "d.csv")])
    assert code == 0
    report = read_csv(tmp_path / "d.csv")[0]
    assert report.localities == 2
    assert report.remote_invocations == 0  # fault-free: no fallback traffic


def test_cli_ratio_subcommand(tmp_path):
    runs = tmp_path / "runs.csv"
    write_csv([
        RunReport("synthetic-local", "none", 4, 1, 10, 200, 1, 0.0, (), 0, 2.0),
        RunReport("synthetic-local", "replay", 4, 1, 10, 200, 3, 0.0, (), 0, 2.2),
    ], runs)
    out = tmp_path / "ratio.dat"
    code = cli.main(["ratio", "--csv", str(runs), "--x", "cores",
                     "--mode", "replay", "--baseline", "none", "--out", str(out)])
    assert code == 0
    assert out.read_text() == "4 1.100000\n"


def test_cli_faulty_random_derives_from_seed():
    args = cli.build_parser().parse_args(
        ["synthetic-distributed", "--faulty-random", "2", "--seed", "5"])
    first = cli._faulty_ids(args)
    second = cli._faulty_ids(args)
    assert first == second
    assert len(first) == 2
    assert all(0 <= r < args.localities for r in first)
