"""ABR decision policies behind a single ``select(state)`` interface.

Four families are provided:

* rate-based: largest rung strictly below the arithmetic-mean
  throughput prediction;
* buffer-based: piecewise-linear map from buffer occupancy to bitrate
  between a reservoir and a cushion;
* receding-horizon MPC over a bitrate objective, both as exact
  per-decision enumeration and as an offline lookup table indexed by
  (throughput bin, buffer bin, previous rung);
* RDOS: the same enumeration machinery driven by a perceptual
  (KSQI-style) objective minus a bitrate-saving term.

All enumeration paths accumulate floating-point terms in one canonical
order so that the per-state selector, the batched table builder, and
any straight re-implementation of the formula produce bit-identical
objective values (and therefore identical argmax decisions).
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .media import Manifest
from .qoe import KsqiParams
from .simulator import buffer_step


@dataclass(frozen=True)
class AbrState:
    """Decision inputs exposed to a policy before each chunk download."""

    chunk_index: int  # 1-based ordinal of the chunk about to be requested
    buffer_s: float
    last_rep: int
    throughput_history_kbps: tuple[float, ...]
    manifest: Manifest

    def __post_init__(self):
        if self.buffer_s < 0:
            raise ValueError("buffer_s must be >= 0")
        if not 1 <= self.last_rep <= len(self.manifest.ladder):
            raise ValueError(f"last_rep {self.last_rep} not in ladder")
        if any(t <= 0 for t in self.throughput_history_kbps):
            raise ValueError("throughput samples must be > 0")

    @property
    def remaining_chunks(self) -> int:
        return self.manifest.segment_count - self.chunk_index + 1


def arithmetic_mean_predict(history, window: int = 5) -> float:
    """Mean of the last ``window`` throughput samples (kb/s)."""
    if not history:
        raise ValueError("empty throughput history")
    tail = list(history)[-window:]
    return sum(tail) / len(tail)


def harmonic_mean_predict(history, window: int = 5) -> float:
    """Harmonic mean of the last ``window`` throughput samples (kb/s)."""
    if not history:
        raise ValueError("empty throughput history")
    tail = list(history)[-window:]
    acc = 0.0
    for x in tail:
        if x <= 0:
            raise ValueError("throughput samples must be > 0")
        acc += 1.0 / x
    return len(tail) / acc


def rate_based_select(state: AbrState, window: int = 5, strict: bool = True) -> int:
    """Largest rung with bitrate below the arithmetic-mean prediction.

    ``strict`` uses "strictly below"; clamps to rung 1 when even the
    lowest bitrate is not below the prediction.
    """
    pred = arithmetic_mean_predict(state.throughput_history_kbps, window)
    best = 1
    for rep in state.manifest.ladder:
        if (rep.bitrate_kbps < pred) if strict else (rep.bitrate_kbps <= pred):
            best = rep.index
    return best


def buffer_based_select(buffer_s: float, reservoir_s: float = 5.0, cushion_s: float = 10.0, ladder=None) -> int:
    """Piecewise-linear buffer-to-bitrate map.

    At or under the reservoir the lowest rung is chosen; at or beyond
    reservoir+cushion the highest; in between the target bitrate
    interpolates linearly between the ladder extremes and the largest
    rung not exceeding it wins.
    """
    if buffer_s < 0:
        raise ValueError("buffer_s must be >= 0")
    if ladder is None:
        raise ValueError("ladder required")
    if buffer_s <= reservoir_s:
        return 1
    if buffer_s >= reservoir_s + cushion_s:
        return ladder[-1].index
    r_min = ladder[0].bitrate_kbps
    r_max = ladder[-1].bitrate_kbps
    target = r_min + (buffer_s - reservoir_s) / cushion_s * (r_max - r_min)
    best = 1
    for rep in ladder:
        if rep.bitrate_kbps <= target:
            best = rep.index
    return best


@dataclass(frozen=True)
class MpcObjectiveParams:
    """Weights of the bitrate-centric MPC objective.

    ``mu_rebuf`` defaults to the top ladder rate in Mb/s so a second of
    stalling can never be bought by one chunk of extra bitrate.
    """

    lambda_switch: float = 1.0
    mu_rebuf: float = 16.8
    horizon: int = 5
    rtt_s: float = 0.08
    max_buffer_s: float = 60.0
    use_manifest_sizes: bool = False  # clairvoyant chunk sizes vs nominal rate x duration
    prediction_window: int = 5

    def __post_init__(self):
        if self.lambda_switch < 0 or self.mu_rebuf < 0:
            raise ValueError("objective weights must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def _horizon_sizes(state: AbrState, h: int, params) -> list[list[float]]:
    """Per-position, per-rep chunk sizes (bits) for the lookahead."""
    manifest = state.manifest
    ladder = manifest.ladder
    seg = manifest.segment_duration_s
    if getattr(params, "use_manifest_sizes", False):
        first = state.chunk_index - 1
        return [[manifest.size_bits(first + k, r.index) for r in ladder] for k in range(h)]
    nominal = [r.bitrate_kbps * 1000.0 * seg for r in ladder]
    return [nominal] * h


def mpc_objective(choices, state: AbrState, predicted_tput: float, params: MpcObjectiveParams) -> float:
    """Bitrate objective of one candidate choice sequence.

    Sum of chosen bitrates (Mb/s), minus ``lambda_switch`` times the
    magnitude of every bitrate switch (including the step from the
    previously downloaded chunk), minus ``mu_rebuf`` times the stall
    seconds predicted by the buffer recursion with download time
    size/predicted_tput + rtt.
    """
    ladder = state.manifest.ladder
    seg = state.manifest.segment_duration_s
    sizes = _horizon_sizes(state, len(choices), params)
    rate_acc = 0.0
    sw_inner = 0.0
    stall_acc = 0.0
    buf = state.buffer_s
    prev_rate = None
    for k, rep in enumerate(choices):
        rate = ladder[rep - 1].bitrate_kbps / 1000.0
        dt = sizes[k][rep - 1] / (predicted_tput * 1000.0) + params.rtt_s
        buf, stall, _ = buffer_step(buf, dt, seg, params.max_buffer_s)
        stall_acc += stall
        rate_acc += rate
        if k > 0:
            sw_inner += abs(rate - prev_rate)
        prev_rate = rate
    first_rate = ladder[choices[0] - 1].bitrate_kbps / 1000.0
    last_rate = ladder[state.last_rep - 1].bitrate_kbps / 1000.0
    return (
        rate_acc
        - params.lambda_switch * sw_inner
        - params.mu_rebuf * stall_acc
    ) - params.lambda_switch * abs(first_rate - last_rate)


_DIGIT_CACHE: dict[tuple[int, int], list[np.ndarray]] = {}


def _sequence_digits(n_reps: int, horizon: int) -> list[np.ndarray]:
    """Digit arrays enumerating all n_reps**horizon sequences.

    The first position varies slowest, so the enumeration order is
    lexicographic and ``np.argmax`` tie-breaking lands on the lowest
    first element.
    """
    key = (n_reps, horizon)
    if key not in _DIGIT_CACHE:
        count = n_reps**horizon
        if count > 6_000_000:
            raise ValueError(f"{n_reps} reps x horizon {horizon} enumerates {count} sequences; too many")
        idx = np.arange(count)
        _DIGIT_CACHE[key] = [(idx // n_reps ** (horizon - 1 - k)) % n_reps for k in range(horizon)]
    return _DIGIT_CACHE[key]


def _mpc_scores(
    rates_mbps: np.ndarray,
    dt_by_pos: list[np.ndarray],
    buffer0,
    seg: float,
    params: MpcObjectiveParams,
    horizon: int,
) -> np.ndarray:
    """Objective minus the previous-chunk switch term for every sequence.

    ``buffer0`` may be a scalar (one state) or a vector of initial
    buffer levels (batched table construction); the result has shape
    (len(buffer0), n_sequences). The previous-chunk switch term is
    constant within a first-element block and is applied by the caller;
    IEEE rounding is monotone, so subtracting it after the per-block max
    yields bit-identical decisions.
    """
    n_reps = len(rates_mbps)
    digits = _sequence_digits(n_reps, horizon)
    b0 = np.atleast_1d(np.asarray(buffer0, dtype=np.float64))
    n = n_reps**horizon
    buf = np.broadcast_to(b0[:, None], (len(b0), n)).copy()
    stall_acc = np.zeros((len(b0), n))
    rate_acc = np.zeros(n)
    sw_inner = np.zeros(n)
    prev_rate = None
    for k in range(horizon):
        rate = rates_mbps[digits[k]]
        dt = dt_by_pos[k][digits[k]]
        stall_acc += np.maximum(dt - buf, 0.0)
        buf = np.minimum(buf - np.minimum(buf, dt) + seg, params.max_buffer_s)
        rate_acc += rate
        if k > 0:
            sw_inner += np.abs(rate - prev_rate)
        prev_rate = rate
    return (rate_acc - params.lambda_switch * sw_inner) - params.mu_rebuf * stall_acc


def mpc_select_exact(state: AbrState, params: MpcObjectiveParams, predicted_tput: float | None = None) -> int:
    """Exhaustive receding-horizon MPC decision.

    Enumerates every rung sequence over the (end-truncated) horizon
    under the harmonic-mean throughput prediction (or an externally
    supplied one, e.g. a clairvoyant value) and returns the first
    element of the best sequence, ties broken toward the lower rung.
    """
    ladder = state.manifest.ladder
    seg = state.manifest.segment_duration_s
    h = min(params.horizon, state.remaining_chunks)
    tput = (
        predicted_tput
        if predicted_tput is not None
        else harmonic_mean_predict(state.throughput_history_kbps, params.prediction_window)
    )
    rates = np.array([r.bitrate_kbps / 1000.0 for r in ladder])
    sizes = _horizon_sizes(state, h, params)
    dt_by_pos = [np.array(row) / (tput * 1000.0) + params.rtt_s for row in sizes]
    scores = _mpc_scores(rates, dt_by_pos, state.buffer_s, seg, params, h)[0]
    n_reps = len(ladder)
    block = scores.reshape(n_reps, n_reps ** (h - 1)).max(axis=1)
    last_rate = rates[state.last_rep - 1]
    final = block - params.lambda_switch * np.abs(rates - last_rate)
    return int(np.argmax(final)) + 1


@dataclass(frozen=True)
class TableBinning:
    """Uniform binning of the table axes; representatives are bin centers."""

    tput_bins: int = 100
    buffer_bins: int = 100
    tput_max_kbps: float = 20000.0
    max_buffer_s: float = 60.0

    def __post_init__(self):
        if self.tput_bins < 1 or self.buffer_bins < 1:
            raise ValueError("bin counts must be >= 1")
        if self.tput_max_kbps <= 0 or self.max_buffer_s <= 0:
            raise ValueError("bin ranges must be > 0")

    def tput_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.tput_max_kbps, self.tput_bins + 1)

    def buffer_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.max_buffer_s, self.buffer_bins + 1)

    def tput_centers(self) -> np.ndarray:
        e = self.tput_edges()
        return (e[:-1] + e[1:]) / 2.0

    def buffer_centers(self) -> np.ndarray:
        e = self.buffer_edges()
        return (e[:-1] + e[1:]) / 2.0


@dataclass
class LookupTable:
    """Precomputed MPC policy: best first rung per state cell."""

    tput_edges: np.ndarray
    buffer_edges: np.ndarray
    entries: np.ndarray  # (tput_bins, buffer_bins, n_reps) uint8, 1-based rungs
    ladder_kbps: tuple[float, ...]
    segment_duration_s: float
    params: MpcObjectiveParams

    def __post_init__(self):
        t, b, r = self.entries.shape
        if t != len(self.tput_edges) - 1 or b != len(self.buffer_edges) - 1:
            raise ValueError("entries shape inconsistent with bin edges")
        if r != len(self.ladder_kbps):
            raise ValueError("entries rep dimension inconsistent with ladder")
        if self.entries.size and (self.entries.min() < 1 or self.entries.max() > r):
            raise ValueError("table entries must be valid 1-based rung indices")

    @property
    def cell_count(self) -> int:
        return int(self.entries.size)


def _bin_index(edges: np.ndarray, value: float) -> int:
    """Bin of ``value``, clamping out-of-range values to the edge bins."""
    i = int(np.searchsorted(edges, value, side="right")) - 1
    return min(max(i, 0), len(edges) - 2)


def _table_block(ladder_kbps, seg, params, tput_value, buffer_values, max_rows: int = 24) -> np.ndarray:
    """Best first rung for every (buffer, prev_rep) cell at one throughput.

    Returns a (len(buffer_values), n_reps) uint8 array. Shares the
    canonical accumulation order with :func:`mpc_select_exact`. Buffer
    rows are processed in slabs of ``max_rows`` to bound memory.
    """
    n_reps = len(ladder_kbps)
    rates = np.array([r / 1000.0 for r in ladder_kbps])
    sizes = np.array([r * 1000.0 * seg for r in ladder_kbps])
    dt = sizes / (tput_value * 1000.0) + params.rtt_s
    h = params.horizon
    values = np.asarray(buffer_values, dtype=np.float64)
    out = np.empty((len(values), n_reps), dtype=np.uint8)
    for lo in range(0, len(values), max_rows):
        rows = values[lo : lo + max_rows]
        scores = _mpc_scores(rates, [dt] * h, rows, seg, params, h)
        block = scores.reshape(len(rows), n_reps, n_reps ** (h - 1)).max(axis=2)
        for prev in range(n_reps):
            final = block - params.lambda_switch * np.abs(rates - rates[prev])
            out[lo : lo + max_rows, prev] = np.argmax(final, axis=1) + 1
    return out


def _stall_free_threshold(ladder_kbps, seg, params, tput_value) -> float:
    """Initial buffer above which no candidate sequence can stall.

    The worst cumulative deficit over k steps is k*dt_max - (k-1)*seg,
    maximized at either endpoint of the horizon.
    """
    dt_max = ladder_kbps[-1] * 1000.0 * seg / (tput_value * 1000.0) + params.rtt_s
    return max(dt_max, params.horizon * dt_max - (params.horizon - 1) * seg)


def build_mpc_table(
    params: MpcObjectiveParams,
    binning: TableBinning = TableBinning(),
    ladder=None,
    segment_duration_s: float = 4.0,
    progress=None,
) -> LookupTable:
    """Solve the MPC decision offline for every (tput, buffer, prev) cell.

    Future chunk sizes are the nominal ladder bitrate times the segment
    duration. Cells whose buffer representative exceeds the worst-case
    stall-free threshold reuse a single stall-free evaluation; the rest
    run the batched enumeration. The default 100x100x13 binning takes
    minutes; see ``mpc_table_cells`` for spot computation.
    """
    from .media import ladder_default

    if ladder is None:
        ladder = ladder_default()
    ladder_kbps = tuple(r.bitrate_kbps for r in ladder)
    n_reps = len(ladder_kbps)
    tput_centers = binning.tput_centers()
    buffer_centers = binning.buffer_centers()
    entries = np.empty((binning.tput_bins, binning.buffer_bins, n_reps), dtype=np.uint8)
    for ti, tput in enumerate(tput_centers):
        threshold = _stall_free_threshold(ladder_kbps, segment_duration_s, params, tput)
        needy = buffer_centers < threshold
        if needy.any():
            entries[ti, needy, :] = _table_block(
                ladder_kbps, segment_duration_s, params, tput, buffer_centers[needy]
            )
        if (~needy).any():
            free_row = _table_block(
                ladder_kbps, segment_duration_s, params, tput, buffer_centers[~needy][:1]
            )
            entries[ti, ~needy, :] = free_row[0]
        if progress is not None:
            progress(ti + 1, binning.tput_bins)
    return LookupTable(
        tput_edges=binning.tput_edges(),
        buffer_edges=binning.buffer_edges(),
        entries=entries,
        ladder_kbps=ladder_kbps,
        segment_duration_s=segment_duration_s,
        params=params,
    )


def mpc_table_cells(
    params: MpcObjectiveParams,
    binning: TableBinning,
    cells,
    ladder=None,
    segment_duration_s: float = 4.0,
) -> dict[tuple[int, int, int], int]:
    """Compute selected table cells without building the full table.

    ``cells`` is an iterable of (tput_bin, buffer_bin, prev_rep_index)
    with a 1-based rep index. Cells are independent, so a subset costs
    proportionally less; used to audit a table against the exact
    per-state decision.
    """
    from .media import ladder_default

    if ladder is None:
        ladder = ladder_default()
    ladder_kbps = tuple(r.bitrate_kbps for r in ladder)
    tput_centers = binning.tput_centers()
    buffer_centers = binning.buffer_centers()
    by_tput: dict[int, set[int]] = {}
    for ti, bi, _ in cells:
        by_tput.setdefault(ti, set()).add(bi)
    out: dict[tuple[int, int, int], int] = {}
    for ti, bis in sorted(by_tput.items()):
        bis_sorted = sorted(bis)
        block = _table_block(
            ladder_kbps, segment_duration_s, params, tput_centers[ti], buffer_centers[bis_sorted]
        )
        for row, bi in enumerate(bis_sorted):
            for prev in range(len(ladder_kbps)):
                out[(ti, bi, prev + 1)] = int(block[row, prev])
    return {cell: out[cell] for cell in cells}


def mpc_select_table(state: AbrState, table: LookupTable) -> int:
    """Online FastMPC: look the decision up instead of optimizing.

    Throughput prediction and buffer clamp into the edge bins when they
    fall outside the binned ranges.
    """
    tput = harmonic_mean_predict(state.throughput_history_kbps, table.params.prediction_window)
    ti = _bin_index(table.tput_edges, tput)
    bi = _bin_index(table.buffer_edges, state.buffer_s)
    return int(table.entries[ti, bi, state.last_rep - 1])


def save_table(table: LookupTable, path) -> None:
    """Write the table artifact: one JSON header line + raw row-major entries."""
    header = {
        "format": "abrbench-mpc-table-v1",
        "tput_edges": [float(x) for x in table.tput_edges],
        "buffer_edges": [float(x) for x in table.buffer_edges],
        "ladder_kbps": list(table.ladder_kbps),
        "segment_duration_s": table.segment_duration_s,
        "params": {
            "lambda_switch": table.params.lambda_switch,
            "mu_rebuf": table.params.mu_rebuf,
            "horizon": table.params.horizon,
            "rtt_s": table.params.rtt_s,
            "max_buffer_s": table.params.max_buffer_s,
            "use_manifest_sizes": table.params.use_manifest_sizes,
            "prediction_window": table.params.prediction_window,
        },
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(table.entries).tobytes())


def load_table(path) -> LookupTable:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != "abrbench-mpc-table-v1":
        raise ValueError(f"not a lookup-table artifact: {path}")
    tput_edges = np.array(header["tput_edges"])
    buffer_edges = np.array(header["buffer_edges"])
    ladder_kbps = tuple(header["ladder_kbps"])
    shape = (len(tput_edges) - 1, len(buffer_edges) - 1, len(ladder_kbps))
    entries = np.frombuffer(blob, dtype=np.uint8).reshape(shape).copy()
    p = header["params"]
    params = MpcObjectiveParams(
        lambda_switch=p["lambda_switch"],
        mu_rebuf=p["mu_rebuf"],
        horizon=p["horizon"],
        rtt_s=p["rtt_s"],
        max_buffer_s=p["max_buffer_s"],
        use_manifest_sizes=p["use_manifest_sizes"],
        prediction_window=p["prediction_window"],
    )
    return LookupTable(
        tput_edges=tput_edges,
        buffer_edges=buffer_edges,
        entries=entries,
        ladder_kbps=ladder_kbps,
        segment_duration_s=header["segment_duration_s"],
        params=params,
    )


@dataclass(frozen=True)
class RdosParams:
    """Perceptual-objective policy parameters.

    The objective is the KSQI-style horizon score minus ``gamma_rate``
    per Mb/s of chosen bitrate, encouraging bitrate saving. Chunk sizes
    and qualities come from the manifest attributes by default since
    the manifest embeds both per chunk.
    """

    ksqi: KsqiParams = field(default_factory=KsqiParams)
    gamma_rate: float = 0.1
    horizon: int = 5
    rtt_s: float = 0.08
    max_buffer_s: float = 60.0
    use_manifest_sizes: bool = True
    prediction_window: int = 5

    def __post_init__(self):
        if self.gamma_rate < 0:
            raise ValueError("gamma_rate must be >= 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def rdos_objective(choices, state: AbrState, predicted_tput: float, params: RdosParams) -> float:
    """KSQI-style horizon score of a choice sequence minus the bitrate term.

    Stalls are predicted with the same buffer recursion as MPC; each
    stall is charged against the quality on screen when it hits, and
    every quality switch (including the one from the previously played
    chunk) pays the asymmetric adaptation penalty.
    """
    manifest = state.manifest
    ladder = manifest.ladder
    seg = manifest.segment_duration_s
    kp = params.ksqi
    h = len(choices)
    first = state.chunk_index - 1
    sizes = _horizon_sizes(state, h, params)
    prev_chunk = max(first - 1, 0)
    q_prev = manifest.quality(prev_chunk, state.last_rep)

    q_acc = 0.0
    pen_acc = 0.0
    rate_acc = 0.0
    buf = state.buffer_s
    for k, rep in enumerate(choices):
        q = manifest.quality(first + k, rep)
        dt = sizes[k][rep - 1] / (predicted_tput * 1000.0) + params.rtt_s
        buf, stall, _ = buffer_step(buf, dt, seg, params.max_buffer_s)
        if stall > 0:
            pen_acc += kp.c0 * np.log1p(stall) * (kp.c1 + kp.c2 * (100.0 - q_prev))
        delta = q - q_prev
        pen_acc += kp.beta_neg * max(-delta, 0.0) + kp.beta_pos * max(delta, 0.0)
        q_acc += q
        rate_acc += ladder[rep - 1].bitrate_kbps / 1000.0
        q_prev = q
    return q_acc / h - pen_acc / h - params.gamma_rate * rate_acc


def rdos_select(state: AbrState, params: RdosParams) -> int:
    """Exhaustive perceptual-objective decision, ties toward the lower rung."""
    manifest = state.manifest
    ladder = manifest.ladder
    seg = manifest.segment_duration_s
    kp = params.ksqi
    n_reps = len(ladder)
    h = min(params.horizon, state.remaining_chunks)
    tput = harmonic_mean_predict(state.throughput_history_kbps, params.prediction_window)
    first = state.chunk_index - 1
    sizes = _horizon_sizes(state, h, params)
    dt_by_pos = [np.array(row) / (tput * 1000.0) + params.rtt_s for row in sizes]
    q_by_pos = [np.array([manifest.quality(first + k, r.index) for r in ladder]) for k in range(h)]
    rates = np.array([r.bitrate_kbps / 1000.0 for r in ladder])
    prev_chunk = max(first - 1, 0)
    q_start = manifest.quality(prev_chunk, state.last_rep)

    digits = _sequence_digits(n_reps, h)
    n = n_reps**h
    buf = np.full(n, state.buffer_s)
    q_acc = np.zeros(n)
    pen_acc = np.zeros(n)
    rate_acc = np.zeros(n)
    q_prev = np.full(n, q_start)
    for k in range(h):
        q = q_by_pos[k][digits[k]]
        dt = dt_by_pos[k][digits[k]]
        stall = np.maximum(dt - buf, 0.0)
        buf = np.minimum(buf - np.minimum(buf, dt) + seg, params.max_buffer_s)
        pen_acc += np.where(
            stall > 0, kp.c0 * np.log1p(stall) * (kp.c1 + kp.c2 * (100.0 - q_prev)), 0.0
        )
        delta = q - q_prev
        pen_acc += kp.beta_neg * np.maximum(-delta, 0.0) + kp.beta_pos * np.maximum(delta, 0.0)
        q_acc += q
        rate_acc += rates[digits[k]]
        q_prev = q
    scores = q_acc / h - pen_acc / h - params.gamma_rate * rate_acc
    best = int(np.argmax(scores))
    return int(digits[0][best]) + 1


class FixedPolicy:
    """Always the same rung; useful as a control and for hand-checked runs."""

    def __init__(self, rep_index: int = 1):
        self.rep_index = rep_index

    def select(self, state: AbrState) -> int:
        return self.rep_index


class ScriptedPolicy:
    """Replays a fixed per-chunk choice sequence (1-based chunk ordinals)."""

    def __init__(self, choices):
        self.choices = list(choices)

    def select(self, state: AbrState) -> int:
        return self.choices[state.chunk_index - 1]


class RateBasedPolicy:
    def __init__(self, window: int = 5, strict: bool = True):
        self.window = window
        self.strict = strict

    def select(self, state: AbrState) -> int:
        return rate_based_select(state, self.window, self.strict)


class BufferBasedPolicy:
    def __init__(self, reservoir_s: float = 5.0, cushion_s: float = 10.0):
        self.reservoir_s = reservoir_s
        self.cushion_s = cushion_s

    def select(self, state: AbrState) -> int:
        return buffer_based_select(state.buffer_s, self.reservoir_s, self.cushion_s, state.manifest.ladder)


class MpcExactPolicy:
    def __init__(self, params: MpcObjectiveParams = MpcObjectiveParams()):
        self.params = params

    def select(self, state: AbrState) -> int:
        return mpc_select_exact(state, self.params)


class MpcTablePolicy:
    def __init__(self, table: LookupTable):
        self.table = table

    def select(self, state: AbrState) -> int:
        return mpc_select_table(state, self.table)


class RdosPolicy:
    def __init__(self, params: RdosParams = RdosParams()):
        self.params = params

    def select(self, state: AbrState) -> int:
        return rdos_select(state, self.params)


class ExternalPolicy:
    """Adapter for out-of-process policies (e.g. learned models).

    Speaks a line protocol on the child's stdin/stdout: one JSON object
    per decision in, one integer rung index out. The payload mirrors
    AbrState plus the manifest attributes of the next few chunks; see
    docs/file_formats.md.
    """

    def __init__(self, command, lookahead: int = 5):
        self.command = list(command)
        self.lookahead = lookahead
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def select(self, state: AbrState) -> int:
        manifest = state.manifest
        first = state.chunk_index - 1
        h = min(self.lookahead, state.remaining_chunks)
        payload = {
            "chunk_index": state.chunk_index,
            "buffer_s": state.buffer_s,
            "last_rep": state.last_rep,
            "throughput_history_kbps": list(state.throughput_history_kbps),
            "segment_duration_s": manifest.segment_duration_s,
            "ladder_kbps": [r.bitrate_kbps for r in manifest.ladder],
            "future_sizes_bits": [
                [manifest.size_bits(first + k, r.index) for r in manifest.ladder] for k in range(h)
            ],
            "future_qualities": [
                [manifest.quality(first + k, r.index) for r in manifest.ladder] for k in range(h)
            ],
        }
        self._proc.stdin.write(json.dumps(payload) + "\n")
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise RuntimeError(f"external policy {self.command} closed its output")
        return int(line.strip())

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


POLICY_IDS = ("fixed", "rate_based", "buffer_based", "mpc_exact", "mpc_table", "rdos", "external")


def make_policy(spec: dict):
    """Build a policy from a declarative config block (CLI plumbing)."""
    kind = spec.get("id")
    opts = {k: v for k, v in spec.items() if k not in ("id", "name")}
    if kind == "fixed":
        return FixedPolicy(int(opts.get("rep_index", 1)))
    if kind == "rate_based":
        return RateBasedPolicy(int(opts.get("window", 5)), bool(opts.get("strict", True)))
    if kind == "buffer_based":
        return BufferBasedPolicy(float(opts.get("reservoir_s", 5.0)), float(opts.get("cushion_s", 10.0)))
    if kind == "mpc_exact":
        return MpcExactPolicy(MpcObjectiveParams(**opts.get("params", {})))
    if kind == "mpc_table":
        return MpcTablePolicy(load_table(opts["table"]))
    if kind == "rdos":
        ksqi = KsqiParams(**opts.pop("ksqi", {})) if "ksqi" in opts else KsqiParams()
        return RdosPolicy(RdosParams(ksqi=ksqi, **opts.get("params", {})))
    if kind == "external":
        return ExternalPolicy(opts["command"], int(opts.get("lookahead", 5)))
    raise ValueError(f"unknown policy id {kind!r}; expected one of {POLICY_IDS}")
