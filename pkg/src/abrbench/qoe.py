"""Objective QoE models: SessionRecord -> scalar score.

Nine knowledge-driven models are registered under ``evaluate``; each is
a pure function of the record and its coefficient set. The default
coefficients are recorded in docs/model_parameters.md. Learned models
(feature-regression or standardized bitstream models) are supported
only through the external-command stub.

Bitrates enter the linear models in Mb/s; quality scores are the 0-100
per-segment values carried by the record.
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass

import numpy as np

from .simulator import SessionRecord, record_to_json


@dataclass(frozen=True)
class QoeScore:
    value: float
    model_id: str

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite QoE score from {self.model_id}")


@dataclass(frozen=True)
class KsqiParams:
    """Coefficients of the KSQI-style model.

    Negative adaptations must cost at least as much as positive ones
    (beta_neg >= beta_pos >= 0); all stall-penalty coefficients are
    nonnegative. Optional penalty tables (bilinearly interpolated)
    replace the parametric forms when supplied, so trained surfaces can
    drop in.
    """

    c0: float = 1.0
    c1: float = 6.0
    c2: float = 0.06
    beta_neg: float = 0.5
    beta_pos: float = 0.1
    stall_table: "PenaltyTable | None" = None
    switch_table: "PenaltyTable | None" = None

    def __post_init__(self):
        if not (self.beta_neg >= self.beta_pos >= 0.0):
            raise ValueError("adaptation weights must satisfy beta_neg >= beta_pos >= 0")
        if self.c0 < 0 or self.c1 < 0 or self.c2 < 0:
            raise ValueError("stall penalty coefficients must be >= 0")


@dataclass(frozen=True)
class PenaltyTable:
    """2-D penalty surface with bilinear interpolation, clamped at the edges."""

    x_grid: tuple[float, ...]
    y_grid: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]  # values[i][j] at (x_grid[i], y_grid[j])

    def __post_init__(self):
        if len(self.values) != len(self.x_grid) or any(len(row) != len(self.y_grid) for row in self.values):
            raise ValueError("penalty table shape inconsistent with grids")

    def __call__(self, x: float, y: float) -> float:
        xs, ys = self.x_grid, self.y_grid
        v = self.values
        x = min(max(x, xs[0]), xs[-1])
        y = min(max(y, ys[0]), ys[-1])
        i = max(0, min(len(xs) - 2, int(np.searchsorted(xs, x, side="right")) - 1))
        j = max(0, min(len(ys) - 2, int(np.searchsorted(ys, y, side="right")) - 1))
        tx = 0.0 if xs[i + 1] == xs[i] else (x - xs[i]) / (xs[i + 1] - xs[i])
        ty = 0.0 if ys[j + 1] == ys[j] else (y - ys[j]) / (ys[j + 1] - ys[j])
        return (
            v[i][j] * (1 - tx) * (1 - ty)
            + v[i + 1][j] * tx * (1 - ty)
            + v[i][j + 1] * (1 - tx) * ty
            + v[i + 1][j + 1] * tx * ty
        )

    @classmethod
    def from_json(cls, text: str) -> "PenaltyTable":
        doc = json.loads(text)
        return cls(
            x_grid=tuple(float(x) for x in doc["x_grid"]),
            y_grid=tuple(float(y) for y in doc["y_grid"]),
            values=tuple(tuple(float(c) for c in row) for row in doc["values"]),
        )


def _require_segments(record: SessionRecord):
    if record.segment_count < 1:
        raise ValueError("empty session record")


def _mbps(record: SessionRecord) -> list[float]:
    return [b / 1000.0 for b in record.bitrates_kbps]


def _quality_before(record: SessionRecord, position_s: float) -> float:
    """Quality on screen when a stall at ``position_s`` begins.

    A stall at a segment boundary charges the segment just finished; a
    stall before anything played charges the first segment.
    """
    idx = max(0, math.ceil(position_s / record.segment_duration_s) - 1)
    return record.qualities[min(idx, record.segment_count - 1)]


def qoe_yin2015(record: SessionRecord, lam: float = 1.0, mu: float = 4.3, mu_s: float = 0.0) -> float:
    """Linear bitrate objective: sum of bitrates minus switch, stall and startup terms."""
    _require_segments(record)
    rates = _mbps(record)
    switching = sum(abs(b - a) for a, b in zip(rates, rates[1:]))
    return sum(rates) - lam * switching - mu * record.total_stall_s - mu_s * record.startup_delay_s


def qoe_bentaleb2016(record: SessionRecord, lam: float = 0.5, mu: float = 50.0, mu_s: float = 0.0) -> float:
    """Same linear form as yin2015 with per-segment quality in place of bitrate."""
    _require_segments(record)
    q = record.qualities
    switching = sum(abs(b - a) for a, b in zip(q, q[1:]))
    return sum(q) - lam * switching - mu * record.total_stall_s - mu_s * record.startup_delay_s


def qoe_ftw(record: SessionRecord, a: float = 3.5, b_len: float = 0.15, b_cnt: float = 0.19, c: float = 1.5) -> float:
    """Exponential stall model on a 1-5 scale; no stalls scores a + c."""
    _require_segments(record)
    n = len(record.stalls)
    if n == 0:
        return a + c
    mean_stall = record.total_stall_s / n
    return a * math.exp(-(b_len * mean_stall + b_cnt) * n) + c


MOK2011_COEFFS = (4.23, 0.0672, 0.742, 0.106)
# Ternary level thresholds (level 0 below the first bound, 2 above the second).
MOK2011_LEVELS = {
    "startup_s": (1.0, 5.0),
    "stall_freq_per_min": (0.1, 1.0),
    "mean_stall_s": (1.0, 5.0),
}


def _ternary_level(value: float, bounds: tuple[float, float]) -> int:
    lo, hi = bounds
    if value <= lo:
        return 0
    if value <= hi:
        return 1
    return 2


def qoe_mok2011(record: SessionRecord, coeffs=MOK2011_COEFFS, levels=None) -> float:
    """Level-based regression on startup delay, stall frequency, stall duration."""
    _require_segments(record)
    levels = levels or MOK2011_LEVELS
    base, w_init, w_freq, w_dur = coeffs
    content_min = record.segment_count * record.segment_duration_s / 60.0
    freq = len(record.stalls) / content_min if content_min > 0 else 0.0
    mean_stall = record.total_stall_s / len(record.stalls) if record.stalls else 0.0
    l_init = _ternary_level(record.startup_delay_s, levels["startup_s"])
    l_freq = _ternary_level(freq, levels["stall_freq_per_min"])
    l_dur = _ternary_level(mean_stall, levels["mean_stall_s"])
    return base - w_init * l_init - w_freq * l_freq - w_dur * l_dur


def qoe_liu2012(record: SessionRecord, c1: float = 4.0, c2: float = 1.0) -> float:
    """Mean bitrate reward against the rebuffering-time ratio."""
    _require_segments(record)
    rates = _mbps(record)
    content = record.segment_count * record.segment_duration_s
    stall = record.total_stall_s
    ratio = stall / (stall + content)
    return c2 * (sum(rates) / len(rates)) - c1 * ratio


def qoe_xue2014(record: SessionRecord, rho: float = 1.0, r_min_kbps: float = 235.0) -> float:
    """Log-bitrate chunk utility minus stall seconds.

    ``r_min_kbps`` is the ladder floor (the record itself does not carry
    the ladder); defaults to the reference ladder's lowest rung.
    """
    _require_segments(record)
    utility = sum(math.log(b / r_min_kbps) for b in record.bitrates_kbps)
    return utility - rho * record.total_stall_s


def qoe_spiteri2016(record: SessionRecord, gamma: float = 2.0, r_min_kbps: float = 235.0) -> float:
    """BOLA-style utility: log-bitrate sum minus gamma times stall seconds."""
    _require_segments(record)
    utility = sum(math.log(b / r_min_kbps) for b in record.bitrates_kbps)
    return utility - gamma * record.total_stall_s


def qoe_sqi(
    record: SessionRecord,
    u0: float = 1.0,
    u1: float = 0.0,
    tau_memory_s: float = math.inf,
) -> float:
    """Presentation quality plus experience-weighted, memory-decayed stall terms.

    Each stall contributes -(u0 + u1*q_at_stall) * duration *
    exp(-position/tau); the default infinite memory constant disables
    the decay.
    """
    _require_segments(record)
    n = record.segment_count
    base = sum(record.qualities) / n
    penalty = 0.0
    for pos, dur in record.stalls:
        q = _quality_before(record, pos)
        decay = math.exp(-pos / tau_memory_s) if math.isfinite(tau_memory_s) else 1.0
        penalty += (u0 + u1 * q) * dur * decay
    return base - penalty / n


def qoe_ksqi(record: SessionRecord, params: KsqiParams = KsqiParams()) -> float:
    """Quality mean minus normalized stall and asymmetric-switch penalties.

    Stall cost grows with log-duration and with how good the picture
    was when it hit; downward quality switches cost beta_neg per unit,
    upward beta_pos.
    """
    _require_segments(record)
    n = record.segment_count
    base = sum(record.qualities) / n
    penalty = 0.0
    for pos, dur in record.stalls:
        q = _quality_before(record, pos)
        if params.stall_table is not None:
            penalty += params.stall_table(dur, q)
        else:
            penalty += params.c0 * math.log1p(dur) * (params.c1 + params.c2 * (100.0 - q))
    for a, b in zip(record.qualities, record.qualities[1:]):
        if params.switch_table is not None:
            penalty += params.switch_table(a, b)
        else:
            delta = b - a
            penalty += params.beta_neg * max(-delta, 0.0) + params.beta_pos * max(delta, 0.0)
    return base - penalty / n


MODELS = {
    "yin2015": qoe_yin2015,
    "bentaleb2016": qoe_bentaleb2016,
    "ftw": qoe_ftw,
    "mok2011": qoe_mok2011,
    "liu2012": qoe_liu2012,
    "xue2014": qoe_xue2014,
    "spiteri2016": qoe_spiteri2016,
    "sqi": qoe_sqi,
    "ksqi": qoe_ksqi,
}

_EXTERNAL: dict[str, list[str]] = {}


def register_external_model(model_id: str, command) -> None:
    """Register a model scored by an external command.

    The command receives one SessionRecord JSON document on stdin and
    must print a single scalar. Used for learned or standardized models
    whose implementations live outside this package.
    """
    _EXTERNAL[model_id] = list(command)


def evaluate(model_id: str, record: SessionRecord, params: dict | KsqiParams | None = None) -> QoeScore:
    """Score ``record`` under the registered model ``model_id``."""
    if model_id in _EXTERNAL:
        proc = subprocess.run(
            _EXTERNAL[model_id], input=record_to_json(record), capture_output=True, text=True, check=True
        )
        return QoeScore(value=float(proc.stdout.strip().splitlines()[-1]), model_id=model_id)
    if model_id not in MODELS:
        raise ValueError(f"unknown QoE model {model_id!r}; known: {sorted(MODELS)}")
    fn = MODELS[model_id]
    if model_id == "ksqi":
        if params is None:
            value = fn(record)
        elif isinstance(params, KsqiParams):
            value = fn(record, params)
        else:
            value = fn(record, KsqiParams(**params))
    else:
        value = fn(record, **(params or {}))
    return QoeScore(value=float(value), model_id=model_id)


def model_ids() -> list[str]:
    return sorted(set(MODELS) | set(_EXTERNAL))


# Parameter names exposed to the calibration entry point, per model.
CALIBRATABLE = {
    "yin2015": ("lam", "mu", "mu_s"),
    "bentaleb2016": ("lam", "mu", "mu_s"),
    "ftw": ("a", "b_len", "b_cnt", "c"),
    "liu2012": ("c1", "c2"),
    "xue2014": ("rho",),
    "spiteri2016": ("gamma",),
    "sqi": ("u0", "u1"),
    "ksqi": ("c0", "c1", "c2", "beta_neg", "beta_pos"),
}


def calibrate(
    model_id: str,
    records,
    mos,
    train_fraction: float = 0.8,
    seed: int = 0,
) -> dict[str, float]:
    """Least-squares fit of a model's coefficients to MOS targets.

    Minimizes the squared residual of an affine rescaling of the model
    score against MOS over the training split (80/20 by default, seeded
    shuffle), searching the model's coefficient space with bound-
    constrained least squares from the documented defaults. Returns the
    fitted coefficients.
    """
    from scipy.optimize import least_squares

    if model_id not in CALIBRATABLE:
        raise ValueError(f"model {model_id!r} has no calibratable parameters")
    names = CALIBRATABLE[model_id]
    records = list(records)
    mos = np.asarray(mos, dtype=float)
    if len(records) != len(mos):
        raise ValueError("records and mos must align")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_train = max(2, int(round(train_fraction * len(records))))
    train_idx = order[:n_train]

    if model_id == "ksqi":
        defaults = KsqiParams()
        x0 = np.array([getattr(defaults, n) for n in names])
    else:
        fn = MODELS[model_id]
        x0 = np.array([fn.__defaults__[i] for i, n in enumerate(names)])

    def project(x):
        # keep the searched point inside the model's parameter invariants
        if model_id == "ksqi":
            beta_pos = max(min(x[3], x[4]), 0.0)
            return [max(x[0], 0.0), max(x[1], 0.0), max(x[2], 0.0), max(x[3], beta_pos, 0.0), beta_pos]
        return [max(v, 0.0) for v in x]

    def scores(x):
        x = project(x)
        if model_id == "ksqi":
            p = KsqiParams(**dict(zip(names, x)))
            return np.array([qoe_ksqi(records[i], p) for i in train_idx])
        kwargs = dict(zip(names, x))
        return np.array([MODELS[model_id](records[i], **kwargs) for i in train_idx])

    target = mos[train_idx]

    def residuals(x):
        s = scores(x)
        # affine head absorbs scale/offset so coefficients fit shape, not units
        a_mat = np.vstack([s, np.ones_like(s)]).T
        coef, *_ = np.linalg.lstsq(a_mat, target, rcond=None)
        return a_mat @ coef - target

    result = least_squares(residuals, x0, bounds=(0.0, np.inf), max_nfev=200)
    return dict(zip(names, (float(v) for v in project(result.x))))
