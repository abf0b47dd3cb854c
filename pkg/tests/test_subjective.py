import random

import numpy as np
import pytest

from abrbench import subjective
from abrbench.subjective import (
    RatingsMatrix,
    VideoMeta,
    build_sensitivity_report,
    keystroke_accuracy,
    partition_sessions,
    personal_mean_cdf,
    realign,
    reject_auxiliary,
    reject_bt500,
    sensitivity_adaptation,
    sensitivity_quality,
    sensitivity_rebuffering,
    z_normalize,
)


def simple_matrix(raw, sessions=None, days=None, devices=None, accuracy=None):
    n_subj, n_videos = raw.shape
    subjects = [f"s{i}" for i in range(n_subj)]
    videos = [f"v{j}" for j in range(n_videos)]
    session_of = {v: (sessions[j] if sessions else "S1") for j, v in enumerate(videos)}
    day_of = {s: (days.get(s) if days else "D1") for s in set(session_of.values())}
    device_of = {s: (devices.get(s, "hdtv") if devices else "hdtv") for s in subjects}
    return RatingsMatrix(
        subjects=subjects,
        videos=videos,
        raw=np.asarray(raw, dtype=float),
        session_of=session_of,
        day_of=day_of,
        device_of=device_of,
        keystroke_accuracy=accuracy or {s: 1.0 for s in subjects},
    )


def test_z_normalize_symmetric_triple():
    m = simple_matrix(np.array([[10.0, 20.0, 30.0]]))
    z = z_normalize(m)
    assert z[0].tolist() == pytest.approx([-1.0, 0.0, 1.0])


def test_z_normalize_group_moments():
    rng = np.random.default_rng(3)
    raw = rng.uniform(5, 95, size=(6, 12))
    m = simple_matrix(raw)
    z = z_normalize(m)
    for i in range(6):
        assert z[i].mean() == pytest.approx(0.0, abs=1e-12)
        assert z[i].std(ddof=1) == pytest.approx(1.0, abs=1e-12)


def test_z_normalize_sessions_independent():
    raw = np.array([[10.0, 30.0, 55.0, 95.0]])
    sessions = ["A", "A", "B", "B"]
    m = simple_matrix(raw, sessions=sessions)
    z = z_normalize(m)
    assert z[0, :2].mean() == pytest.approx(0.0, abs=1e-12)
    assert z[0, 2:].mean() == pytest.approx(0.0, abs=1e-12)


def test_z_normalize_idempotent_on_normalized_groups():
    rng = np.random.default_rng(9)
    raw = rng.uniform(0, 100, size=(4, 10))
    m = simple_matrix(raw)
    z1 = z_normalize(m)
    # feed the z-scores back as a (shifted into range) matrix: the group
    # transform depends only on affine position, so z re-derives itself
    m2 = simple_matrix(50.0 + 10.0 * z1)
    z2 = z_normalize(m2)
    assert np.allclose(z1, z2)


def test_z_normalize_zero_spread_rejected():
    m = simple_matrix(np.array([[50.0, 50.0, 50.0]]))
    with pytest.raises(ValueError):
        z_normalize(m)


def test_z_normalize_single_rating_rejected():
    raw = np.array([[50.0, np.nan, np.nan]])
    m = simple_matrix(raw)
    with pytest.raises(ValueError):
        z_normalize(m)


def test_keystroke_accuracy_window():
    events = {("s0", "v0"): [10.4, 30.0], ("s0", "v1"): []}
    onsets = {"v0": [9.0, 30.5], "v1": [5.0]}
    acc = keystroke_accuracy(events, onsets, {"s0": ["v0", "v1"]}, tol_s=2.0)
    assert acc["s0"] == pytest.approx(2.0 / 3.0)


def test_keystroke_accuracy_no_stalls_is_perfect():
    acc = keystroke_accuracy({}, {}, {"s0": ["v0"]})
    assert acc["s0"] == 1.0


def test_reject_auxiliary_boundaries():
    raw = np.tile(np.array([[40.0, 60.0]]), (3, 1))
    m = simple_matrix(raw, accuracy={"s0": 1.0, "s1": 0.85, "s2": 0.90})
    keep = reject_auxiliary(m, threshold=0.10)
    assert keep.tolist() == [True, False, True]


def test_reject_bt500_homogeneous_panel_keeps_everyone():
    # literally identical behaviour (per-subject offsets vanish in the
    # z-domain): no column has spread, so nobody can be flagged
    base = np.linspace(20, 80, 40)
    raw = np.vstack([np.clip(base + 3.0 * i, 0, 100) for i in range(6)])
    m = simple_matrix(raw)
    keep = reject_bt500(z_normalize(m))
    assert keep.all()


def test_reject_bt500_typical_noisy_panel_mostly_kept():
    rng = np.random.default_rng(1)
    base = np.linspace(10, 90, 50)
    raw = np.vstack([np.clip(base + rng.normal(0, 12.0, size=50), 0, 100) for _ in range(20)])
    m = simple_matrix(raw)
    keep = reject_bt500(z_normalize(m))
    assert keep.sum() >= 18


def test_reject_bt500_flags_inverted_subject():
    # honest raters need realistic spread: a lone clean outlier drives
    # the column kurtosis past 4 and the sqrt(20)-sigma branch would
    # shield it, which is exactly how the screening rule is specified
    rng = np.random.default_rng(0)
    base = np.linspace(10, 90, 50)
    rows = [np.clip(base + rng.normal(0, 15.0, size=50), 0, 100) for _ in range(30)]
    rows.append(np.clip(100.0 - base + rng.normal(0, 15.0, size=50), 0, 100))
    m = simple_matrix(np.vstack(rows))
    keep = reject_bt500(z_normalize(m))
    assert not keep[-1]
    assert keep[:-1].all()


def test_reject_bt500_single_pass_semantics():
    # decisions are simultaneous over the input panel: per-subject
    # outcomes depend only on the data, never on processing order
    rng = np.random.default_rng(0)
    base = np.linspace(10, 90, 50)
    rows = [np.clip(base + rng.normal(0, 15.0, size=50), 0, 100) for _ in range(30)]
    rows.append(np.clip(100.0 - base + rng.normal(0, 15.0, size=50), 0, 100))
    z = z_normalize(simple_matrix(np.vstack(rows)))
    keep = reject_bt500(z)
    perm = rng.permutation(len(keep))
    keep_perm = reject_bt500(z[perm])
    assert (keep_perm == keep[perm]).all()


def test_realign_round_trip_exact():
    # build two days with known linear maps, z-scores constructed directly
    rng = np.random.default_rng(7)
    n_videos = 20
    sessions = ["A"] * 10 + ["B"] * 10
    days = {"A": "D1", "B": "D2"}
    target = {"D1": (12.0, 55.0), "D2": (8.0, 40.0)}
    base_z = {}
    raw = np.zeros((6, n_videos))
    for sess, cols in (("A", range(10)), ("B", range(10, 20))):
        z_target = rng.normal(0, 1, size=10)
        z_target = (z_target - z_target.mean()) / z_target.std(ddof=1)
        for k, j in enumerate(cols):
            base_z[f"v{j}"] = z_target[k]
        for i in range(6):
            scale = rng.uniform(5, 15)
            offset = rng.uniform(30, 60)
            for k, j in enumerate(cols):
                raw[i, j] = offset + scale * z_target[k]
    raw = np.clip(raw, 0, 100)
    m = simple_matrix(raw, sessions=sessions, days=days)
    z = z_normalize(m)
    anchors = {
        "D1": [(f"v{j}", target["D1"][0] * base_z[f"v{j}"] + target["D1"][1]) for j in range(0, 10, 2)],
        "D2": [(f"v{j}", target["D2"][0] * base_z[f"v{j}"] + target["D2"][1]) for j in range(10, 20, 2)],
    }
    mos, mappings = realign(m, z, anchors)
    for day, (a, b) in target.items():
        assert mappings[day][0] == pytest.approx(a, abs=1e-9)
        assert mappings[day][1] == pytest.approx(b, abs=1e-9)
    for j in range(20):
        day = "D1" if j < 10 else "D2"
        a, b = target[day]
        assert mos[f"v{j}"] == pytest.approx(a * base_z[f"v{j}"] + b, abs=1e-9)


def test_realign_identity_mapping():
    raw = np.array(
        [
            [10.0, 30.0, 50.0, 70.0, 90.0],
            [12.0, 32.0, 52.0, 72.0, 92.0],
        ]
    )
    m = simple_matrix(raw)
    z = z_normalize(m)
    mean_z = np.nanmean(z, axis=0)
    anchors = {"D1": [(f"v{j}", float(mean_z[j])) for j in range(5)]}
    mos, mappings = realign(m, z, anchors)
    assert mappings["D1"][0] == pytest.approx(1.0, abs=1e-12)
    assert mappings["D1"][1] == pytest.approx(0.0, abs=1e-12)


def test_realign_underdetermined():
    m = simple_matrix(np.array([[10.0, 20.0, 80.0]]))
    z = z_normalize(m)
    with pytest.raises(ValueError):
        realign(m, z, {"D1": [("v0", 50.0)]})


def test_partition_rule_traces():
    meta = {
        "clean": VideoMeta(82.0, 4.0, 0.0, 82.0, 82.0),
        "stalled": VideoMeta(78.0, 6.0, 2.5, 78.0, 78.0),
        "too_good": VideoMeta(95.0, 3.0, 0.0, 95.0, 95.0),
        "short_stall": VideoMeta(80.0, 5.0, 0.5, 80.0, 80.0),
        "varying": VideoMeta(80.0, 15.0, 0.0, 60.0, 95.0),
        "low": VideoMeta(40.0, 5.0, 0.0, 40.0, 40.0),
    }
    parts = partition_sessions(meta)
    assert "clean" in parts["q_r_bar"]
    assert "stalled" in parts["q_r"]
    assert "too_good" not in parts["q_r_bar"] and "too_good" not in parts["q_r"]
    assert "short_stall" not in parts["q_r"] and "short_stall" not in parts["q_r_bar"]
    assert "varying" in parts["q_a"] and "clean" in parts["q_a_bar"]
    assert "low" in parts["q_q_bar"] and "clean" in parts["q_q"]
    assert partition_sessions({}) == {k: [] for k in parts}


def test_partition_primacy_recency():
    meta = {
        "first_bad": VideoMeta(85.0, 8.0, 0.0, 60.0, 92.0),
        "last_bad": VideoMeta(85.0, 8.0, 0.0, 92.0, 60.0),
        "both_fine": VideoMeta(85.0, 2.0, 0.0, 85.0, 85.0),
    }
    parts = partition_sessions(meta)
    assert parts["primacy"] == ["first_bad"]
    assert parts["recency"] == ["last_bad"]


def test_sensitivity_values_and_shift_invariance():
    q_no = [f"a{i}" for i in range(30)]
    q_yes = [f"b{i}" for i in range(30)]
    ratings = {v: 80.0 for v in q_no} | {v: 50.0 for v in q_yes}
    assert sensitivity_rebuffering(ratings, q_no, q_yes) == pytest.approx(30.0)
    shifted = {v: r + 7.5 for v, r in ratings.items()}
    assert sensitivity_rebuffering(shifted, q_no, q_yes) == pytest.approx(30.0)
    same = {v: 66.0 for v in q_no + q_yes}
    assert sensitivity_rebuffering(same, q_no, q_yes) == 0.0


def test_sensitivity_undersized_set_rejected():
    ratings = {f"a{i}": 80.0 for i in range(10)} | {f"b{i}": 50.0 for i in range(30)}
    with pytest.raises(ValueError):
        sensitivity_quality(ratings, [f"a{i}" for i in range(10)], [f"b{i}" for i in range(30)])


def test_sensitivity_positive_slope_scaling_preserves_order():
    rng = random.Random(3)
    q_a = [f"a{i}" for i in range(30)]
    q_b = [f"b{i}" for i in range(30)]
    slopes = [0.5, 1.0, 2.0, 3.0]
    base = []
    for k in range(4):
        ratings = {v: 70.0 + rng.uniform(-2, 2) for v in q_a} | {v: 40.0 + rng.uniform(-2, 2) for v in q_b}
        base.append((ratings, 1.0 + k))
    raw_values = [sensitivity_adaptation(r, q_a, q_b) * s for r, s in base]
    scaled_values = [
        sensitivity_adaptation({v: x * s for v, x in r.items()}, q_a, q_b) for r, s in base
    ]
    assert np.argsort(raw_values).tolist() == np.argsort(scaled_values).tolist()
    for (r, s), v in zip(base, scaled_values):
        assert v == pytest.approx(sensitivity_adaptation(r, q_a, q_b) * s)


def test_sensitivity_report_handles_missing_sets():
    raw = np.random.default_rng(0).uniform(20, 90, size=(3, 8))
    m = simple_matrix(raw)
    m.video_meta = {f"v{j}": VideoMeta(80.0, 4.0, 0.0, 80.0, 80.0) for j in range(8)}
    parts = partition_sessions(m.video_meta)
    report = build_sensitivity_report(m, parts, min_set=30)
    assert all(row.s_r is None for row in report.rows)  # sets far too small
    report2 = build_sensitivity_report(m, parts, min_set=1)
    assert all(row.s_a is None for row in report2.rows)  # no varying videos at all


def test_personal_mean_cdf_single_subject():
    m = simple_matrix(np.array([[40.0, 60.0]]))
    (means, cdf) = personal_mean_cdf(m)["hdtv"]
    assert means.tolist() == [50.0]
    assert cdf.tolist() == [1.0]


def test_personal_mean_cdf_three_subjects():
    raw = np.array([[60.0, 60.0], [70.0, 70.0], [80.0, 80.0]])
    m = simple_matrix(raw)
    means, cdf = personal_mean_cdf(m)["hdtv"]
    assert means.tolist() == [60.0, 70.0, 80.0]
    assert cdf.tolist() == pytest.approx([1 / 3, 2 / 3, 1.0])


def test_personal_mean_cdf_monotone_ends_at_one():
    rng = np.random.default_rng(11)
    raw = rng.uniform(0, 100, size=(9, 6))
    devices = {f"s{i}": ("phone" if i % 2 else "uhdtv") for i in range(9)}
    m = simple_matrix(raw, devices=devices)
    for means, cdf in personal_mean_cdf(m).values():
        assert (np.diff(cdf) > 0).all()
        assert cdf[-1] == 1.0
        assert (np.diff(means) >= 0).all()


def test_csv_round_trips():
    text = (
        "subject_id,video_id,session_id,day,device,score\n"
        "s0,v0,A,D1,phone,55\n"
        "s0,v1,A,D1,phone,70\n"
        "s1,v0,A,D1,hdtv,60\n"
        "s1,v1,A,D1,hdtv,80\n"
    )
    m = subjective.load_ratings_csv(text)
    assert m.subjects == ["s0", "s1"]
    assert m.videos == ["v0", "v1"]
    assert m.raw[1, 1] == 80.0
    assert m.device_of["s1"] == "hdtv"

    ks = subjective.load_keystrokes_csv("subject_id,video_id,event_time_s\ns0,v0,4.2\ns0,v0,9.9\n")
    assert ks[("s0", "v0")] == [4.2, 9.9]

    meta = subjective.load_video_meta_csv(
        "video_id,mean_quality,quality_std,total_stall_s,first_quality,last_quality\nv0,80,5,0,78,82\n"
    )
    assert meta["v0"].mean_quality == 80.0

    onsets = subjective.load_stall_events_csv("video_id,position_s,duration_s\nv0,8.0,2.0\n")
    assert onsets["v0"] == [8.0]

    anchors = subjective.load_anchors_csv("day,video_id,mos\nD1,v0,55.5\n")
    assert anchors["D1"] == [("v0", 55.5)]

    out = subjective.mos_to_csv({"v0": 55.5})
    assert "video_id,mos" in out and "55.5" in out


def test_primacy_recency_effect_flagged_and_computed():
    rng = np.random.default_rng(6)
    raw = rng.uniform(30, 90, size=(3, 70))
    m = simple_matrix(raw)
    meta = {}
    for j in range(70):
        if j < 35:
            meta[f"v{j}"] = VideoMeta(85.0, 5.0, 0.0, 60.0, 90.0)  # degraded first segment
        else:
            meta[f"v{j}"] = VideoMeta(85.0, 5.0, 0.0, 90.0, 60.0)  # degraded last segment
    parts = partition_sessions(meta)
    out = subjective.primacy_recency_effect(m, parts, min_set=30)
    assert out["paper_underspecified"] is True
    for s in m.subjects:
        effect = out["per_subject"][s]
        primacy_mean = np.mean([raw[m.subjects.index(s), j] for j in range(35)])
        recency_mean = np.mean([raw[m.subjects.index(s), j] for j in range(35, 70)])
        assert effect == pytest.approx(primacy_mean - recency_mean)
