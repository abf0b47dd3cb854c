import json
import sys

import numpy as np
import pytest

from abrbench import abr, cli, media, nettrace, qoe, simulator, stats, subjective


def write_inputs(tmp_path, n_manifests=1, n_traces=1, segments=6):
    manifests = []
    for i in range(n_manifests):
        m = media.synthetic_manifest(segments=segments, size_jitter=0.1, seed=i)
        path = tmp_path / f"manifest{i}.json"
        path.write_text(media.serialize_manifest(m))
        manifests.append(str(path))
    traces = []
    rates = [900.0, 2500.0, 5200.0, 1400.0, 700.0, 3600.0, 8000.0, 450.0, 6100.0]
    for j in range(n_traces):
        path = tmp_path / f"trace{j}.csv"
        path.write_text(f"0,{rates[j % len(rates)]}\n30,{rates[(j + 3) % len(rates)]}\n")
        traces.append({"path": str(path), "format": "pairs"})
    return manifests, traces


def run(args):
    return cli.main([str(a) for a in args])


def test_simulate_single_cell(tmp_path):
    manifests, traces = write_inputs(tmp_path)
    config = {
        "manifests": manifests,
        "traces": traces,
        "policies": [{"id": "rate_based"}],
        "out_dir": str(tmp_path / "out"),
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    assert run(["simulate", "--config", cfg_path]) == 0
    logs = list((tmp_path / "out" / "logs").glob("*.log.json"))
    records = list((tmp_path / "out" / "records").glob("*.record.json"))
    assert len(logs) == 1 and len(records) == 1
    summary = (tmp_path / "out" / "summary.csv").read_text().splitlines()
    assert len(summary) == 2
    assert summary[0].startswith("cell_id,manifest,trace,policy,status")


def test_simulate_grid_shape_and_determinism(tmp_path):
    manifests, traces = write_inputs(tmp_path, n_manifests=2, n_traces=3)
    config = {
        "manifests": manifests,
        "traces": traces,
        "policies": [{"id": "rate_based"}, {"id": "buffer_based"}],
        "out_dir": str(tmp_path / "out"),
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    assert run(["simulate", "--config", cfg_path]) == 0
    first = (tmp_path / "out" / "summary.csv").read_bytes()
    log_files = sorted((tmp_path / "out" / "logs").glob("*.log.json"))
    assert len(log_files) == 12
    first_logs = [f.read_bytes() for f in log_files]
    assert run(["simulate", "--config", cfg_path]) == 0
    assert (tmp_path / "out" / "summary.csv").read_bytes() == first
    assert [f.read_bytes() for f in sorted((tmp_path / "out" / "logs").glob("*.log.json"))] == first_logs


def test_simulate_cells_fail_in_isolation(tmp_path):
    manifests, traces = write_inputs(tmp_path)
    dead = tmp_path / "dead_trace.csv"
    dead.write_text("0,500\n")  # duration 1 s, no loop -> exhaustion
    config = {
        "manifests": manifests,
        "traces": traces + [{"path": str(dead), "format": "pairs"}],
        "policies": [{"id": "fixed", "rep_index": 1}],
        "player": {"loop_trace": False},
        "out_dir": str(tmp_path / "out"),
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    rc = run(["simulate", "--config", cfg_path])
    assert rc == 1
    rows = (tmp_path / "out" / "summary.csv").read_text().splitlines()[1:]
    statuses = sorted(r.split(",")[4] for r in rows)
    assert statuses == ["error", "ok"]


def test_simulate_parallel_matches_serial(tmp_path):
    manifests, traces = write_inputs(tmp_path, n_traces=2)
    config = {
        "manifests": manifests,
        "traces": traces,
        "policies": [{"id": "rate_based"}, {"id": "fixed", "rep_index": 2}],
        "out_dir": str(tmp_path / "serial"),
    }
    cfg = tmp_path / "c1.json"
    cfg.write_text(json.dumps(config))
    assert run(["simulate", "--config", cfg]) == 0
    config["out_dir"] = str(tmp_path / "parallel")
    cfg2 = tmp_path / "c2.json"
    cfg2.write_text(json.dumps(config))
    assert run(["simulate", "--config", cfg2, "--jobs", 2]) == 0
    assert (tmp_path / "serial" / "summary.csv").read_text() == (tmp_path / "parallel" / "summary.csv").read_text()


def test_mpc_table_build_and_reload(tmp_path):
    config = {
        "mpc_table": {"tput_bins": 6, "buffer_bins": 5, "tput_max_kbps": 8000.0, "horizon": 2},
        "out_dir": str(tmp_path / "out"),
    }
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))
    assert run(["mpc-table", "--config", cfg]) == 0
    path = tmp_path / "out" / "mpc_table.bin"
    table = abr.load_table(path)
    assert table.entries.shape == (6, 5, 13)
    rebuilt = abr.build_mpc_table(
        abr.MpcObjectiveParams(horizon=2),
        abr.TableBinning(tput_bins=6, buffer_bins=5, tput_max_kbps=8000.0),
    )
    assert np.array_equal(table.entries, rebuilt.entries)
    # rebuild through the CLI is byte-identical
    first = path.read_bytes()
    assert run(["mpc-table", "--config", cfg]) == 0
    assert path.read_bytes() == first


def test_mpc_table_default_geometry_reported(tmp_path, capsys):
    # default binning announces the full 100x100x13 = 130,000 cells
    # before building; build itself is exercised on reduced binning
    config = {"mpc_table": {"tput_bins": 100, "buffer_bins": 100}, "out_dir": str(tmp_path)}
    binning = abr.TableBinning()
    assert binning.tput_bins * binning.buffer_bins * 13 == 130_000
    assert len(binning.tput_edges()) == 101
    assert binning.tput_centers()[0] == pytest.approx(100.0)
    assert binning.buffer_centers()[0] == pytest.approx(0.3)


def test_mpc_table_malformed_binning(tmp_path):
    config = {"mpc_table": {"tput_bins": 0}, "out_dir": str(tmp_path)}
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))
    assert run(["mpc-table", "--config", cfg]) == 2


def test_qoe_scores_match_library(tmp_path):
    manifests, traces = write_inputs(tmp_path)
    out = tmp_path / "out"
    config = {
        "manifests": manifests,
        "traces": traces,
        "policies": [{"id": "buffer_based"}],
        "out_dir": str(out),
    }
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))
    assert run(["simulate", "--config", cfg]) == 0
    qoe_config = {
        "records_dir": str(out / "records"),
        "qoe_models": [{"id": "yin2015"}, {"id": "ksqi"}, {"id": "ftw"}],
        "out_dir": str(out),
    }
    cfg2 = tmp_path / "qoe.json"
    cfg2.write_text(json.dumps(qoe_config))
    assert run(["qoe", "--config", cfg2]) == 0
    rows = (out / "qoe_scores.csv").read_text().splitlines()[1:]
    assert len(rows) == 3
    record_path = next((out / "records").glob("*.record.json"))
    record = simulator.record_from_json(record_path.read_text())
    for row in rows:
        video_id, model_id, score = row.split(",")
        assert float(score) == pytest.approx(qoe.evaluate(model_id, record).value)


def test_qoe_external_stub_constant_column(tmp_path):
    manifests, traces = write_inputs(tmp_path)
    out = tmp_path / "out"
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({
        "manifests": manifests, "traces": traces,
        "policies": [{"id": "rate_based"}], "out_dir": str(out),
    }))
    assert run(["simulate", "--config", cfg]) == 0
    stub = tmp_path / "stub.py"
    stub.write_text("import sys, json\njson.load(sys.stdin)\nprint(7.25)\n")
    cfg2 = tmp_path / "qoe.json"
    cfg2.write_text(json.dumps({
        "records_dir": str(out / "records"),
        "qoe_models": [{"id": "ext", "command": [sys.executable, str(stub)]}],
        "out_dir": str(out),
    }))
    try:
        assert run(["qoe", "--config", cfg2]) == 0
    finally:
        qoe._EXTERNAL.pop("ext", None)
    rows = (out / "qoe_scores.csv").read_text().splitlines()[1:]
    assert all(row.endswith(",7.25") for row in rows)


def make_subjective_fixture(tmp_path):
    rng = np.random.default_rng(0)
    base = np.linspace(20, 80, 10)
    lines = ["subject_id,video_id,session_id,day,device,score"]
    for i in range(5):
        for j in range(10):
            sess = "A" if j < 5 else "B"
            score = float(np.clip(base[j] + rng.normal(0, 6.0), 0, 100))
            lines.append(f"s{i},v{j},{sess},D1,hdtv,{score}")
    ratings = tmp_path / "ratings.csv"
    ratings.write_text("\n".join(lines) + "\n")
    anchors = tmp_path / "anchors.csv"
    anchor_lines = ["day,video_id,mos"] + [f"D1,v{j},{20 + 6 * j}" for j in range(10)]
    anchors.write_text("\n".join(anchor_lines) + "\n")
    return ratings, anchors


def test_subjective_pipeline_matches_library(tmp_path):
    ratings, anchors = make_subjective_fixture(tmp_path)
    out = tmp_path / "out"
    cfg = tmp_path / "subj.json"
    cfg.write_text(json.dumps({
        "subjective": {"ratings_csv": str(ratings), "anchors_csv": str(anchors)},
        "out_dir": str(out),
    }))
    assert run(["subjective", "--config", cfg]) == 0
    mos_rows = (out / "mos.csv").read_text().splitlines()[1:]
    got = {r.split(",")[0]: float(r.split(",")[1]) for r in mos_rows}

    matrix = subjective.load_ratings_csv(ratings.read_text())
    matrix.keystroke_accuracy = {s: 1.0 for s in matrix.subjects}
    keep = subjective.reject_auxiliary(matrix)
    matrix = subjective.subset_matrix(matrix, keep)
    z = subjective.z_normalize(matrix)
    keep2 = subjective.reject_bt500(z)
    matrix = subjective.subset_matrix(matrix, keep2)
    z = z[np.asarray(keep2, dtype=bool), :]
    expected, _ = subjective.realign(matrix, z, subjective.load_anchors_csv(anchors.read_text()))
    assert got.keys() == expected.keys()
    for v, m in expected.items():
        assert got[v] == pytest.approx(m)


def test_subjective_missing_file_names_path(tmp_path, capsys):
    cfg = tmp_path / "subj.json"
    cfg.write_text(json.dumps({"subjective": {"ratings_csv": str(tmp_path / "nope.csv")}}))
    assert run(["subjective", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "nope.csv" in err


def test_stats_command_two_methods(tmp_path):
    rng = np.random.default_rng(3)
    items = [f"i{k}" for k in range(40)]
    mos = rng.uniform(10, 90, size=40)
    score_lines = ["item_id,method,score"]
    for k, item in enumerate(items):
        score_lines.append(f"{item},good,{mos[k] + rng.normal(0, 2.0)}")
        score_lines.append(f"{item},bad,{rng.uniform(10, 90)}")
    scores = tmp_path / "scores.csv"
    scores.write_text("\n".join(score_lines) + "\n")
    mos_path = tmp_path / "mos.csv"
    mos_path.write_text("\n".join(["item_id,mos"] + [f"{i},{m}" for i, m in zip(items, mos)]) + "\n")
    out = tmp_path / "out"
    cfg = tmp_path / "stats.json"
    cfg.write_text(json.dumps({
        "stats": {"scores_csv": str(scores), "mos_csv": str(mos_path), "test": "f_test"},
        "out_dir": str(out),
    }))
    assert run(["stats", "--config", cfg]) == 0
    sig = (out / "significance.csv").read_text().splitlines()
    assert sig[0] == ",bad,good"
    assert sig[1].startswith("bad,-,")
    assert sig[2].endswith(",-")
    corr = (out / "correlations.csv").read_text().splitlines()
    assert corr[0] == "method,plcc,srcc,krcc"
    by_method = {}
    for line in corr[1:]:
        name, p, s, k = line.split(",")
        by_method[name] = float(s)
    assert by_method["good"] > by_method["bad"]


def test_traces_command_windows_and_filters(tmp_path):
    raw = tmp_path / "raw.txt"
    raw.write_text("\n".join(["1000"] * 11 + ["50"] * 11) + "\n")  # 110 s at 5 s granularity
    out = tmp_path / "out"
    cfg = tmp_path / "traces.json"
    cfg.write_text(json.dumps({
        "traces_ingest": {
            "inputs": [{"path": str(raw), "format": "granular_5s"}],
            "window_s": 55.0,
            "stride_s": 55.0,
            "min_avg_kbps": 200.0,
        },
        "out_dir": str(out),
    }))
    assert run(["traces", "--config", cfg]) == 0
    index = (out / "trace_index.csv").read_text().splitlines()
    assert len(index) == 3
    kept = list((out / "traces").glob("*.csv"))
    assert len(kept) == 1
    window = nettrace.parse_trace(kept[0].read_text(), "pairs", duration_s=55.0)
    assert window.mean_kbps() > 200.0


def test_unknown_config_file(tmp_path, capsys):
    assert run(["simulate", "--config", tmp_path / "missing.json"]) == 2
    assert "missing.json" in capsys.readouterr().err


def test_simulate_deduplicates_same_stem_inputs(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    for d, rate in (("a", 900.0), ("b", 4000.0)):
        (tmp_path / d / "trace.csv").write_text(f"0,{rate}\n")
    m = media.synthetic_manifest(segments=4)
    (tmp_path / "m.json").write_text(media.serialize_manifest(m))
    config = {
        "manifests": [str(tmp_path / "m.json")],
        "traces": [
            {"path": str(tmp_path / "a" / "trace.csv"), "format": "pairs"},
            {"path": str(tmp_path / "b" / "trace.csv"), "format": "pairs"},
        ],
        "policies": [{"id": "fixed", "rep_index": 1}],
        "out_dir": str(tmp_path / "out"),
    }
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))
    assert run(["simulate", "--config", cfg]) == 0
    rows = (tmp_path / "out" / "summary.csv").read_text().splitlines()[1:]
    assert len(rows) == 2
    assert len({r.split(",")[0] for r in rows}) == 2  # distinct cell ids
    assert len(list((tmp_path / "out" / "logs").glob("*.log.json"))) == 2
