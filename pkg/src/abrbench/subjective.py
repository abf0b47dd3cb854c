"""Subjective-score post-processing and user-heterogeneity analysis.

The pipeline mirrors a multi-session lab study: raw 0-100 ratings are
standardized per subject per session, unreliable raters are screened
out (an auxiliary keystroke task plus BT.500-style statistical
screening), and a per-day linear mapping learned on anchor videos
realigns session Z-scores onto a common MOS scale. Per-subject
sensitivities to rebuffering, presentation quality, and quality
adaptation are difference-of-means over filtered video partitions.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VideoMeta:
    """Per-video summary used by the partition filters."""

    mean_quality: float
    quality_std: float
    total_stall_s: float
    first_quality: float
    last_quality: float


@dataclass
class RatingsMatrix:
    """Subjects x videos opinion scores with study metadata.

    ``raw[i, j]`` is subject i's score for video j on a 0-100 scale,
    NaN where missing. Sessions group videos; days group sessions (one
    realignment mapping is learned per day).
    """

    subjects: list[str]
    videos: list[str]
    raw: np.ndarray
    session_of: dict[str, str]
    day_of: dict[str, str]
    device_of: dict[str, str]
    keystroke_accuracy: dict[str, float] = field(default_factory=dict)
    video_meta: dict[str, VideoMeta] = field(default_factory=dict)

    def __post_init__(self):
        if self.raw.shape != (len(self.subjects), len(self.videos)):
            raise ValueError("raw matrix shape inconsistent with subject/video lists")
        present = self.raw[~np.isnan(self.raw)]
        if present.size and (present.min() < 0.0 or present.max() > 100.0):
            raise ValueError("ratings must lie in [0, 100]")
        for s, acc in self.keystroke_accuracy.items():
            if not (0.0 <= acc <= 1.0):
                raise ValueError(f"keystroke accuracy of {s} outside [0, 1]")

    def sessions(self) -> list[str]:
        seen = []
        for v in self.videos:
            s = self.session_of[v]
            if s not in seen:
                seen.append(s)
        return seen

    def session_columns(self, session: str) -> list[int]:
        return [j for j, v in enumerate(self.videos) if self.session_of[v] == session]


def z_normalize(matrix: RatingsMatrix) -> np.ndarray:
    """Standardize ratings per subject per session (sample std, n-1).

    Each (subject, session) group maps to mean 0 and std 1; missing
    entries stay NaN. A group with fewer than two ratings or zero
    spread is an error.
    """
    z = np.full_like(matrix.raw, np.nan)
    for session in matrix.sessions():
        cols = matrix.session_columns(session)
        for i, subject in enumerate(matrix.subjects):
            vals = matrix.raw[i, cols]
            mask = ~np.isnan(vals)
            if not mask.any():
                continue
            if mask.sum() < 2:
                raise ValueError(f"subject {subject} has a single rating in session {session}")
            mean = vals[mask].mean()
            std = vals[mask].std(ddof=1)
            if std == 0.0:
                raise ValueError(f"zero-spread group: subject {subject}, session {session}")
            for k, j in enumerate(cols):
                if mask[k]:
                    z[i, j] = (matrix.raw[i, j] - mean) / std
    return z


def keystroke_accuracy(
    events: dict[tuple[str, str], list[float]],
    stall_onsets: dict[str, list[float]],
    videos_of: dict[str, list[str]],
    tol_s: float = 2.0,
) -> dict[str, float]:
    """Fraction of true stall onsets each subject flagged in time.

    A keystroke within +-tol_s of a stall onset counts as correct;
    accuracy is correct flags over true stalls across the subject's
    videos. Subjects whose videos had no stalls score 1.0.
    """
    out = {}
    for subject, videos in videos_of.items():
        correct = 0
        total = 0
        for video in videos:
            onsets = stall_onsets.get(video, [])
            strokes = events.get((subject, video), [])
            for onset in onsets:
                total += 1
                if any(abs(k - onset) <= tol_s for k in strokes):
                    correct += 1
        out[subject] = correct / total if total else 1.0
    return out


def reject_auxiliary(matrix: RatingsMatrix, threshold: float = 0.10) -> np.ndarray:
    """Keep-mask over subjects passing the auxiliary-task screen.

    A subject failing more than ``threshold`` of the keystroke task is
    removed; the boundary (exactly 1-threshold accuracy) is kept.
    """
    keep = np.ones(len(matrix.subjects), dtype=bool)
    for i, subject in enumerate(matrix.subjects):
        if subject not in matrix.keystroke_accuracy:
            raise ValueError(f"no keystroke accuracy recorded for subject {subject}")
        keep[i] = matrix.keystroke_accuracy[subject] >= 1.0 - threshold
    return keep


def reject_bt500(
    z: np.ndarray,
    outlier_fraction: float = 0.05,
    balance: float = 0.3,
    normal_sigma: float = 2.0,
    heavy_sigma: float = math.sqrt(20.0),
) -> np.ndarray:
    """Single-pass BT.500-style screening; returns a keep-mask.

    Per video, ratings beyond mean +- k*std are counted against the
    subject, with k chosen by the column kurtosis (2..4 treated as
    normal-tailed). A subject is rejected when flagged ratings exceed
    ``outlier_fraction`` of their total and the flags are not heavily
    one-sided (|P-Q|/(P+Q) < balance).
    """
    n_subj, n_videos = z.shape
    if n_subj < 3:
        raise ValueError("BT.500 screening needs at least 3 subjects")
    p = np.zeros(n_subj)
    q = np.zeros(n_subj)
    for j in range(n_videos):
        col = z[:, j]
        mask = ~np.isnan(col)
        if mask.sum() < 2:
            continue
        vals = col[mask]
        mean = vals.mean()
        std = vals.std(ddof=1)
        if std == 0.0:
            continue
        m2 = ((vals - mean) ** 2).mean()
        m4 = ((vals - mean) ** 4).mean()
        beta2 = m4 / (m2 * m2) if m2 > 0 else 0.0
        k = normal_sigma if 2.0 <= beta2 <= 4.0 else heavy_sigma
        hi = mean + k * std
        lo = mean - k * std
        p[mask] += (vals >= hi).astype(float)
        q[mask] += (vals <= lo).astype(float)
    rated = (~np.isnan(z)).sum(axis=1).astype(float)
    keep = np.ones(n_subj, dtype=bool)
    for i in range(n_subj):
        total = p[i] + q[i]
        if rated[i] == 0 or total == 0:
            continue
        if total / rated[i] > outlier_fraction and abs(p[i] - q[i]) / total < balance:
            keep[i] = False
    return keep


def realign(
    matrix: RatingsMatrix,
    z: np.ndarray,
    anchors: dict[str, list[tuple[str, float]]],
) -> tuple[dict[str, float], dict[str, tuple[float, float]]]:
    """Map session Z-scores onto the MOS scale, one linear fit per day.

    ``anchors[day]`` lists (video_id, anchor_mos) pairs; the fit
    minimizes the squared residual of MOS = a*z + b over the anchors'
    mean Z-scores, then applies to every video of that day's sessions.
    Returns (mos per video, (a, b) per day).
    """
    video_index = {v: j for j, v in enumerate(matrix.videos)}
    mean_z = np.array([np.nanmean(z[:, j]) if (~np.isnan(z[:, j])).any() else np.nan for j in range(len(matrix.videos))])
    mos: dict[str, float] = {}
    mappings: dict[str, tuple[float, float]] = {}
    for day, pairs in anchors.items():
        usable = [(video_index[v], m) for v, m in pairs if v in video_index and not np.isnan(mean_z[video_index[v]])]
        if len(usable) < 2:
            raise ValueError(f"day {day!r} has {len(usable)} usable anchors; need at least 2")
        zs = np.array([mean_z[j] for j, _ in usable])
        ms = np.array([m for _, m in usable])
        a_mat = np.vstack([zs, np.ones_like(zs)]).T
        (a, b), *_ = np.linalg.lstsq(a_mat, ms, rcond=None)
        mappings[day] = (float(a), float(b))
        for v in matrix.videos:
            if matrix.day_of[matrix.session_of[v]] == day and not np.isnan(mean_z[video_index[v]]):
                mos[v] = float(a * mean_z[video_index[v]] + b)
    return mos, mappings


@dataclass(frozen=True)
class PartitionParams:
    """Thresholds of the named video partitions (values from the study design)."""

    quality_center: float = 80.0
    quality_halfwidth: float = 10.0
    variation_std: float = 10.0
    stall_long_s: float = 1.0
    quality_floor: float = 60.0
    edge_quality: float = 70.0
    edge_center: float = 85.0


def partition_sessions(
    video_meta: dict[str, VideoMeta], params: PartitionParams = PartitionParams()
) -> dict[str, list[str]]:
    """Build the analysis partitions from per-video summaries.

    Rebuffering sets fix quality near the center and split on stalls;
    quality sets exclude stalls/variation and split on the floor;
    adaptation sets exclude stalls and split on quality spread;
    primacy/recency sets flag a degraded first or last segment.
    """
    p = params
    out: dict[str, list[str]] = {
        "q_r_bar": [], "q_r": [],
        "q_q": [], "q_q_bar": [],
        "q_a": [], "q_a_bar": [],
        "primacy": [], "recency": [],
    }
    for video, meta in video_meta.items():
        near_center = abs(meta.mean_quality - p.quality_center) <= p.quality_halfwidth
        steady = meta.quality_std <= p.variation_std
        if near_center and steady:
            if meta.total_stall_s == 0.0:
                out["q_r_bar"].append(video)
            elif meta.total_stall_s > p.stall_long_s:
                out["q_r"].append(video)
        if meta.total_stall_s <= p.stall_long_s and steady:
            (out["q_q"] if meta.mean_quality > p.quality_floor else out["q_q_bar"]).append(video)
        if meta.total_stall_s == 0.0 and near_center:
            (out["q_a"] if meta.quality_std > p.variation_std else out["q_a_bar"]).append(video)
        if meta.total_stall_s == 0.0 and steady and abs(meta.mean_quality - p.edge_center) <= p.quality_halfwidth:
            if meta.first_quality < p.edge_quality:
                out["primacy"].append(video)
            if meta.last_quality < p.edge_quality:
                out["recency"].append(video)
    return out


def _mean_over(subject_ratings: dict[str, float], videos, min_set: int, label: str) -> float:
    vals = [subject_ratings[v] for v in videos if v in subject_ratings and not math.isnan(subject_ratings[v])]
    if len(vals) < min_set:
        raise ValueError(f"set {label} has {len(vals)} rated videos; need at least {min_set}")
    return sum(vals) / len(vals)


def sensitivity_rebuffering(subject_ratings: dict[str, float], q_no, q_stall, min_set: int = 30) -> float:
    """Mean rating on stall-free videos minus mean on stalled videos."""
    return _mean_over(subject_ratings, q_no, min_set, "q_r_bar") - _mean_over(
        subject_ratings, q_stall, min_set, "q_r"
    )


def sensitivity_quality(subject_ratings: dict[str, float], q_high, q_low, min_set: int = 30) -> float:
    """Mean rating on high-quality videos minus mean on low-quality videos."""
    return _mean_over(subject_ratings, q_high, min_set, "q_q") - _mean_over(subject_ratings, q_low, min_set, "q_q_bar")


def sensitivity_adaptation(subject_ratings: dict[str, float], q_adapt, q_stable, min_set: int = 30) -> float:
    """Mean rating on quality-varying videos minus mean on steady videos."""
    return _mean_over(subject_ratings, q_adapt, min_set, "q_a") - _mean_over(
        subject_ratings, q_stable, min_set, "q_a_bar"
    )


@dataclass(frozen=True)
class SensitivityRow:
    subject: str
    s_r: float | None
    s_q: float | None
    s_a: float | None
    set_sizes: dict[str, int]


@dataclass(frozen=True)
class SensitivityReport:
    rows: tuple[SensitivityRow, ...]
    min_set: int


def build_sensitivity_report(
    matrix: RatingsMatrix,
    partitions: dict[str, list[str]],
    values: np.ndarray | None = None,
    min_set: int = 30,
) -> SensitivityReport:
    """Per-subject sensitivities over the named partitions.

    ``values`` defaults to the raw ratings (the difference form is
    shift-invariant either way). Sensitivities whose sets are smaller
    than ``min_set`` for a subject are reported as None.
    """
    scores = matrix.raw if values is None else values
    rows = []
    for i, subject in enumerate(matrix.subjects):
        ratings = {v: scores[i, j] for j, v in enumerate(matrix.videos) if not np.isnan(scores[i, j])}
        sizes = {
            name: sum(1 for v in partitions.get(name, []) if v in ratings)
            for name in ("q_r_bar", "q_r", "q_q", "q_q_bar", "q_a", "q_a_bar")
        }
        def attempt(fn, a, b):
            try:
                return fn(ratings, partitions.get(a, []), partitions.get(b, []), min_set)
            except ValueError:
                return None
        rows.append(
            SensitivityRow(
                subject=subject,
                s_r=attempt(sensitivity_rebuffering, "q_r_bar", "q_r"),
                s_q=attempt(sensitivity_quality, "q_q", "q_q_bar"),
                s_a=attempt(sensitivity_adaptation, "q_a", "q_a_bar"),
                set_sizes=sizes,
            )
        )
    return SensitivityReport(rows=tuple(rows), min_set=min_set)


def primacy_recency_effect(
    matrix: RatingsMatrix, partitions: dict[str, list[str]], min_set: int = 30
) -> dict:
    """Difference-of-means between degraded-first and degraded-last videos.

    The study reports the effect without defining an equation, so the
    result is flagged as underspecified in the output metadata.
    """
    per_subject = {}
    for i, subject in enumerate(matrix.subjects):
        ratings = {v: matrix.raw[i, j] for j, v in enumerate(matrix.videos) if not np.isnan(matrix.raw[i, j])}
        try:
            effect = _mean_over(ratings, partitions.get("primacy", []), min_set, "primacy") - _mean_over(
                ratings, partitions.get("recency", []), min_set, "recency"
            )
        except ValueError:
            effect = None
        per_subject[subject] = effect
    return {"per_subject": per_subject, "metric": "mean(primacy) - mean(recency)", "paper_underspecified": True}


def personal_mean_cdf(matrix: RatingsMatrix) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-device empirical CDF of average personal ratings.

    Returns, per device, the sorted per-subject mean ratings and the
    CDF values k/n at those points.
    """
    by_device: dict[str, list[float]] = {}
    for i, subject in enumerate(matrix.subjects):
        vals = matrix.raw[i, :]
        mask = ~np.isnan(vals)
        if not mask.any():
            continue
        by_device.setdefault(matrix.device_of[subject], []).append(float(vals[mask].mean()))
    out = {}
    for device, means in by_device.items():
        arr = np.sort(np.array(means))
        cdf = np.arange(1, len(arr) + 1) / len(arr)
        out[device] = (arr, cdf)
    return out


def subset_matrix(matrix: RatingsMatrix, keep: np.ndarray) -> RatingsMatrix:
    """Restrict the panel to the kept subjects."""
    subjects = [s for s, k in zip(matrix.subjects, keep) if k]
    return RatingsMatrix(
        subjects=subjects,
        videos=list(matrix.videos),
        raw=matrix.raw[np.asarray(keep, dtype=bool), :].copy(),
        session_of=dict(matrix.session_of),
        day_of=dict(matrix.day_of),
        device_of={s: matrix.device_of[s] for s in subjects},
        keystroke_accuracy={s: a for s, a in matrix.keystroke_accuracy.items() if s in subjects},
        video_meta=dict(matrix.video_meta),
    )


# ---------------------------------------------------------------------------
# CSV interfaces (column layouts in docs/file_formats.md)

def load_ratings_csv(text: str) -> RatingsMatrix:
    """Columns: subject_id,video_id,session_id,day,device,score."""
    reader = csv.DictReader(io.StringIO(text))
    needed = {"subject_id", "video_id", "session_id", "day", "device", "score"}
    if reader.fieldnames is None or not needed.issubset(reader.fieldnames):
        raise ValueError(f"ratings CSV must carry columns {sorted(needed)}")
    subjects: list[str] = []
    videos: list[str] = []
    session_of: dict[str, str] = {}
    day_of: dict[str, str] = {}
    device_of: dict[str, str] = {}
    cells: dict[tuple[str, str], float] = {}
    for row in reader:
        s, v = row["subject_id"], row["video_id"]
        if s not in subjects:
            subjects.append(s)
        if v not in videos:
            videos.append(v)
        session_of[v] = row["session_id"]
        day_of[row["session_id"]] = row["day"]
        device_of[s] = row["device"]
        cells[(s, v)] = float(row["score"])
    raw = np.full((len(subjects), len(videos)), np.nan)
    for (s, v), score in cells.items():
        raw[subjects.index(s), videos.index(v)] = score
    return RatingsMatrix(
        subjects=subjects, videos=videos, raw=raw,
        session_of=session_of, day_of=day_of, device_of=device_of,
    )


def load_keystrokes_csv(text: str) -> dict[tuple[str, str], list[float]]:
    """Columns: subject_id,video_id,event_time_s."""
    reader = csv.DictReader(io.StringIO(text))
    out: dict[tuple[str, str], list[float]] = {}
    for row in reader:
        out.setdefault((row["subject_id"], row["video_id"]), []).append(float(row["event_time_s"]))
    return out


def load_video_meta_csv(text: str) -> dict[str, VideoMeta]:
    """Columns: video_id,mean_quality,quality_std,total_stall_s,first_quality,last_quality."""
    reader = csv.DictReader(io.StringIO(text))
    out = {}
    for row in reader:
        out[row["video_id"]] = VideoMeta(
            mean_quality=float(row["mean_quality"]),
            quality_std=float(row["quality_std"]),
            total_stall_s=float(row["total_stall_s"]),
            first_quality=float(row["first_quality"]),
            last_quality=float(row["last_quality"]),
        )
    return out


def load_stall_events_csv(text: str) -> dict[str, list[float]]:
    """Columns: video_id,position_s[,duration_s]; positions are stall onsets."""
    reader = csv.DictReader(io.StringIO(text))
    out: dict[str, list[float]] = {}
    for row in reader:
        out.setdefault(row["video_id"], []).append(float(row["position_s"]))
    return out


def load_anchors_csv(text: str) -> dict[str, list[tuple[str, float]]]:
    """Columns: day,video_id,mos."""
    reader = csv.DictReader(io.StringIO(text))
    out: dict[str, list[tuple[str, float]]] = {}
    for row in reader:
        out.setdefault(row["day"], []).append((row["video_id"], float(row["mos"])))
    return out


def mos_to_csv(mos: dict[str, float]) -> str:
    lines = ["video_id,mos"]
    for video in sorted(mos):
        lines.append(f"{video},{mos[video]!r}")
    return "\n".join(lines) + "\n"


def sensitivity_report_to_csv(report: SensitivityReport) -> str:
    lines = ["subject_id,s_r,s_q,s_a,n_r_bar,n_r,n_q,n_q_bar,n_a,n_a_bar"]
    for row in report.rows:
        def fmt(x):
            return "" if x is None else repr(x)
        sizes = row.set_sizes
        lines.append(
            f"{row.subject},{fmt(row.s_r)},{fmt(row.s_q)},{fmt(row.s_a)},"
            f"{sizes['q_r_bar']},{sizes['q_r']},{sizes['q_q']},{sizes['q_q_bar']},{sizes['q_a']},{sizes['q_a_bar']}"
        )
    return "\n".join(lines) + "\n"
