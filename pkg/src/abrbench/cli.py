"""Command-line entry point: batch experiments driven by a JSON config.

Subcommands::

    simulate    manifests x traces x policies grid -> logs, records, summary
    mpc-table   build and persist the offline MPC lookup table
    qoe         score session records under the configured QoE models
    subjective  ratings post-processing -> MOS, sensitivities, CDFs
    stats       correlation criteria and significance matrices
    traces      ingest/window/filter raw bandwidth traces

Every command is deterministic given (config, seed) and overwrites its
outputs atomically. Grid cells fail in isolation; the exit code is 0
only when every cell succeeded.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import abr, media, nettrace, qoe, simulator, stats, subjective


def _read_text(path: str, what: str) -> str:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} file not found: {p}")
    return p.read_text()


def _atomic_write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _load_config(path: str) -> dict:
    text = _read_text(path, "config")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc}") from exc


def _stem(path: str) -> str:
    return Path(path).stem


def _dedupe(names: list[str]) -> list[str]:
    """Disambiguate repeated stems so grid cells never collide on disk."""
    seen: dict[str, int] = {}
    out = []
    for name in names:
        seen[name] = seen.get(name, 0) + 1
        out.append(name if seen[name] == 1 else f"{name}_{seen[name]}")
    return out


def _load_traces(entries) -> list[tuple[str, nettrace.Trace]]:
    parsed = []
    for entry in entries:
        if isinstance(entry, str):
            entry = {"path": entry, "format": "pairs"}
        text = _read_text(entry["path"], "trace")
        parsed.append((_stem(entry["path"]), nettrace.parse_trace(text, entry.get("format", "pairs"))))
    names = _dedupe([n for n, _ in parsed])
    return [(n, t) for n, (_, t) in zip(names, parsed)]


def _player_config(block: dict) -> simulator.PlayerConfig:
    channel = nettrace.ChannelConfig(
        rtt_s=float(block.get("rtt_s", 0.08)),
        loop_trace=bool(block.get("loop_trace", True)),
    )
    return simulator.PlayerConfig(
        max_buffer_s=float(block.get("max_buffer_s", 60.0)),
        initial_rep=int(block.get("initial_rep", 1)),
        drop_first_chunk=bool(block.get("drop_first_chunk", True)),
        channel=channel,
    )


def _run_cell(manifest: media.Manifest, trace: nettrace.Trace, policy_spec: dict, player: simulator.PlayerConfig):
    policy = abr.make_policy(policy_spec)
    try:
        log = simulator.run_session(manifest, trace, policy, player)
    finally:
        if hasattr(policy, "close"):
            policy.close()
    record = simulator.to_record(log, manifest, player)
    return log, record


def cmd_simulate(config: dict, args) -> int:
    out_dir = Path(args.out or config.get("out_dir", "out"))
    player = _player_config(config.get("player", {}))
    manifest_paths = config.get("manifests", [])
    manifest_names = _dedupe([_stem(p) for p in manifest_paths])
    manifests = [
        (name, media.parse_manifest(_read_text(p, "manifest")))
        for name, p in zip(manifest_names, manifest_paths)
    ]
    traces = _load_traces(config.get("traces", []))
    policies = config.get("policies", [])
    if not manifests or not traces or not policies:
        raise ValueError("simulate needs manifests, traces and policies in the config")

    cells = []
    for m_name, manifest in manifests:
        for t_name, trace in traces:
            for p_idx, spec in enumerate(policies):
                p_name = spec.get("name") or f"{spec['id']}{p_idx}"
                cells.append((m_name, manifest, t_name, trace, p_name, spec))

    results = {}
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {
                pool.submit(_run_cell, manifest, trace, spec, player): (m, t, p)
                for m, manifest, t, trace, p, spec in cells
            }
            for fut, key in futures.items():
                try:
                    results[key] = ("ok", fut.result())
                except Exception as exc:  # isolate cell failures
                    results[key] = ("error", str(exc))
    else:
        for m, manifest, t, trace, p, spec in cells:
            try:
                results[(m, t, p)] = ("ok", _run_cell(manifest, trace, spec, player))
            except Exception as exc:
                results[(m, t, p)] = ("error", str(exc))

    rows = []
    failed = 0
    for m, manifest, t, trace, p, spec in cells:
        cell_id = f"{m}__{t}__{p}"
        status, payload = results[(m, t, p)]
        if status == "ok":
            log, record = payload
            _atomic_write(out_dir / "logs" / f"{cell_id}.log.json", simulator.log_to_json(log))
            _atomic_write(out_dir / "records" / f"{cell_id}.record.json", simulator.record_to_json(record))
            rates = [b / 1000.0 for b in record.bitrates_kbps]
            switch = sum(abs(b - a) for a, b in zip(rates, rates[1:]))
            rows.append(
                [
                    cell_id, m, t, p, "ok",
                    repr(sum(record.bitrates_kbps) / len(record.bitrates_kbps)),
                    repr(record.total_stall_s),
                    str(len(record.stalls)),
                    repr(switch),
                    repr(log.startup_delay_s),
                    repr(log.total_wall_time_s),
                    "",
                ]
            )
        else:
            failed += 1
            rows.append([cell_id, m, t, p, "error", "", "", "", "", "", "", payload])

    header = (
        "cell_id,manifest,trace,policy,status,avg_bitrate_kbps,total_stall_s,"
        "stall_count,switch_magnitude_mbps,startup_delay_s,total_wall_time_s,error"
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header.split(","))
    writer.writerows(rows)
    _atomic_write(out_dir / "summary.csv", buf.getvalue())
    print(f"simulate: {len(cells) - failed}/{len(cells)} cells ok -> {out_dir}")
    return 1 if failed else 0


def cmd_mpc_table(config: dict, args) -> int:
    block = config.get("mpc_table", {})
    try:
        binning = abr.TableBinning(
            tput_bins=int(block.get("tput_bins", 100)),
            buffer_bins=int(block.get("buffer_bins", 100)),
            tput_max_kbps=float(block.get("tput_max_kbps", 20000.0)),
            max_buffer_s=float(block.get("max_buffer_s", 60.0)),
        )
        params = abr.MpcObjectiveParams(
            lambda_switch=float(block.get("lambda_switch", 1.0)),
            mu_rebuf=float(block.get("mu_rebuf", 16.8)),
            horizon=int(block.get("horizon", 5)),
            rtt_s=float(block.get("rtt_s", 0.08)),
            max_buffer_s=float(block.get("max_buffer_s", 60.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ValueError(f"malformed mpc_table binning block: {exc}") from exc
    ladder = media.ladder_default()
    if "ladder_kbps" in block:
        ladder = tuple(
            media.Representation(index=i + 1, width=16, height=9, bitrate_kbps=float(r))
            for i, r in enumerate(block["ladder_kbps"])
        )
    cell_count = binning.tput_bins * binning.buffer_bins * len(ladder)
    print(f"cells: {cell_count} ({binning.tput_bins}x{binning.buffer_bins}x{len(ladder)})")
    table = abr.build_mpc_table(
        params,
        binning,
        ladder=ladder,
        segment_duration_s=float(block.get("segment_duration_s", 4.0)),
    )
    out_dir = Path(args.out or config.get("out_dir", "out"))
    out_path = out_dir / "mpc_table.bin"
    out_dir.mkdir(parents=True, exist_ok=True)
    abr.save_table(table, out_path)
    print(f"mpc-table: wrote {out_path}")
    return 0


def cmd_qoe(config: dict, args) -> int:
    out_dir = Path(args.out or config.get("out_dir", "out"))
    records_dir = Path(config.get("records_dir", out_dir / "records"))
    if not records_dir.exists():
        raise FileNotFoundError(f"records directory not found: {records_dir}")
    models = config.get("qoe_models", [{"id": mid} for mid in sorted(qoe.MODELS)])
    for spec in models:
        if spec.get("command"):
            qoe.register_external_model(spec["id"], spec["command"])
    rows = []
    failed = 0
    for path in sorted(records_dir.glob("*.record.json")):
        record = simulator.record_from_json(path.read_text())
        video_id = path.name[: -len(".record.json")]
        for spec in models:
            params = {k: v for k, v in spec.items() if k not in ("id", "command", "name")}
            try:
                score = qoe.evaluate(spec["id"], record, params or None)
                rows.append((video_id, spec["id"], score.value))
            except Exception as exc:
                failed += 1
                print(f"qoe: {video_id}/{spec['id']} failed: {exc}", file=sys.stderr)
    if args.format == "json":
        payload = [{"video_id": v, "model_id": m, "score": s} for v, m, s in rows]
        _atomic_write(out_dir / "qoe_scores.json", json.dumps(payload, indent=1))
    else:
        lines = ["video_id,model_id,score"] + [f"{v},{m},{s!r}" for v, m, s in rows]
        _atomic_write(out_dir / "qoe_scores.csv", "\n".join(lines) + "\n")
    print(f"qoe: scored {len(rows)} (record, model) pairs -> {out_dir}")
    return 1 if failed else 0


def cmd_subjective(config: dict, args) -> int:
    out_dir = Path(args.out or config.get("out_dir", "out"))
    block = config.get("subjective", {})
    if "ratings_csv" not in block:
        raise ValueError("subjective block needs ratings_csv")
    matrix = subjective.load_ratings_csv(_read_text(block["ratings_csv"], "ratings"))

    if "video_meta_csv" in block:
        matrix.video_meta = subjective.load_video_meta_csv(_read_text(block["video_meta_csv"], "video meta"))
    if "keystrokes_csv" in block and "stall_events_csv" in block:
        events = subjective.load_keystrokes_csv(_read_text(block["keystrokes_csv"], "keystrokes"))
        onsets = subjective.load_stall_events_csv(_read_text(block["stall_events_csv"], "stall events"))
        videos_of = {
            s: [v for j, v in enumerate(matrix.videos) if not np.isnan(matrix.raw[i, j])]
            for i, s in enumerate(matrix.subjects)
        }
        matrix.keystroke_accuracy = subjective.keystroke_accuracy(
            events, onsets, videos_of, tol_s=float(block.get("keystroke_tol_s", 2.0))
        )
    else:
        matrix.keystroke_accuracy = {s: 1.0 for s in matrix.subjects}

    keep = subjective.reject_auxiliary(matrix, threshold=float(block.get("auxiliary_threshold", 0.10)))
    matrix = subjective.subset_matrix(matrix, keep)
    z = subjective.z_normalize(matrix)
    keep2 = subjective.reject_bt500(z)
    matrix = subjective.subset_matrix(matrix, keep2)
    z = z[np.asarray(keep2, dtype=bool), :]

    outputs = []
    if "anchors_csv" in block:
        anchors = subjective.load_anchors_csv(_read_text(block["anchors_csv"], "anchors"))
        mos, mappings = subjective.realign(matrix, z, anchors)
        _atomic_write(out_dir / "mos.csv", subjective.mos_to_csv(mos))
        lines = ["day,slope,intercept"] + [f"{d},{a!r},{b!r}" for d, (a, b) in sorted(mappings.items())]
        _atomic_write(out_dir / "realign_mappings.csv", "\n".join(lines) + "\n")
        outputs.append("mos.csv")

    if matrix.video_meta:
        partitions = subjective.partition_sessions(matrix.video_meta)
        report = subjective.build_sensitivity_report(
            matrix, partitions, min_set=int(block.get("min_set", 30))
        )
        _atomic_write(out_dir / "sensitivity.csv", subjective.sensitivity_report_to_csv(report))
        outputs.append("sensitivity.csv")

    cdf = subjective.personal_mean_cdf(matrix)
    lines = ["device,mean_rating,cdf"]
    for device in sorted(cdf):
        means, values = cdf[device]
        for m, c in zip(means, values):
            lines.append(f"{device},{float(m)!r},{float(c)!r}")
    _atomic_write(out_dir / "personal_mean_cdf.csv", "\n".join(lines) + "\n")
    outputs.append("personal_mean_cdf.csv")
    print(f"subjective: kept {len(matrix.subjects)} subjects -> {', '.join(outputs)} in {out_dir}")
    return 0


def _load_scores_csv(text: str) -> tuple[dict[str, dict[str, float]], list[str]]:
    reader = csv.DictReader(io.StringIO(text))
    by_method: dict[str, dict[str, float]] = {}
    items: list[str] = []
    for row in reader:
        by_method.setdefault(row["method"], {})[row["item_id"]] = float(row["score"])
        if row["item_id"] not in items:
            items.append(row["item_id"])
    return by_method, items


def cmd_stats(config: dict, args) -> int:
    out_dir = Path(args.out or config.get("out_dir", "out"))
    block = config.get("stats", {})
    for key in ("scores_csv", "mos_csv"):
        if key not in block:
            raise ValueError(f"stats block needs {key}")
    by_method, items = _load_scores_csv(_read_text(block["scores_csv"], "scores"))
    mos_rows = list(csv.DictReader(io.StringIO(_read_text(block["mos_csv"], "mos"))))
    mos_by_item = {r["item_id"]: float(r["mos"]) for r in mos_rows}
    items = [i for i in items if i in mos_by_item]
    mos = np.array([mos_by_item[i] for i in items])

    corr_lines = ["method,plcc,srcc,krcc"]
    samples = {}
    for method in sorted(by_method):
        scores = np.array([by_method[method][i] for i in items])
        samples[method] = scores
        fit = stats.fit_logistic(scores, mos)
        corr_lines.append(
            f"{method},{stats.plcc(fit.mapped, mos)!r},{stats.srcc(scores, mos)!r},{stats.krcc(scores, mos)!r}"
        )
    _atomic_write(out_dir / "correlations.csv", "\n".join(corr_lines) + "\n")

    test = block.get("test", "f_test")
    matrix = stats.build_significance_matrix(
        samples, test=test, mos=mos, alpha=float(block.get("alpha", 0.05))
    )
    if args.format == "json":
        payload = {"labels": list(matrix.labels), "cells": [list(r) for r in matrix.cells]}
        _atomic_write(out_dir / "significance.json", json.dumps(payload, indent=1))
    else:
        _atomic_write(out_dir / "significance.csv", matrix.to_csv())
    _atomic_write(out_dir / "significance.md", matrix.to_markdown())
    print(f"stats: {len(samples)} methods over {len(items)} items -> {out_dir}")
    return 0


def cmd_traces(config: dict, args) -> int:
    out_dir = Path(args.out or config.get("out_dir", "out"))
    block = config.get("traces_ingest", {})
    if "inputs" not in block:
        raise ValueError("traces_ingest block needs inputs")
    window_s = float(block.get("window_s", 55.0))
    stride_s = float(block.get("stride_s", window_s))
    min_avg = float(block.get("min_avg_kbps", 200.0))
    index_lines = ["trace_id,source,start_offset_s,mean_kbps,kept"]
    kept_count = 0
    for entry in block["inputs"]:
        text = _read_text(entry["path"], "trace")
        trace = nettrace.parse_trace(text, entry.get("format", "pairs"))
        windows = nettrace.window_traces(trace, window_s=window_s, stride_s=stride_s)
        for w_idx, window in enumerate(windows):
            mean = window.mean_kbps()
            kept = mean > min_avg
            trace_id = f"{_stem(entry['path'])}_w{w_idx:03d}"
            index_lines.append(
                f"{trace_id},{entry['path']},{w_idx * stride_s!r},{mean!r},{int(kept)}"
            )
            if kept:
                kept_count += 1
                _atomic_write(out_dir / "traces" / f"{trace_id}.csv", nettrace.serialize_trace(window))
    _atomic_write(out_dir / "trace_index.csv", "\n".join(index_lines) + "\n")
    print(f"traces: kept {kept_count} windows -> {out_dir}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "mpc-table": cmd_mpc_table,
    "qoe": cmd_qoe,
    "subjective": cmd_subjective,
    "stats": cmd_stats,
    "traces": cmd_traces,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="abrbench", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the config output directory")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        return COMMANDS[args.command](config, args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"abrbench {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
