"""Bandwidth traces and the fluid channel model.

A trace is a piecewise-constant bandwidth timeline. Downloads are
resolved analytically by integrating bandwidth over time, with a fixed
round-trip latency charged once per request before any bits flow. This
replaces packet-level emulation with the chunk-granularity timing that
ABR logic actually consumes.

Supported on-disk formats (bit-exact definitions in
docs/file_formats.md):

* ``granular_5s`` - one bandwidth value (kb/s) per line, 5 s apart
  (FCC-style broadband measurements);
* ``granular_1s`` - one value per line, 1 s apart (HSDPA/Belgium-style
  mobile measurements);
* ``pairs`` - generic CSV lines ``time_s,bandwidth_kbps``.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

TRACE_FORMATS = ("granular_5s", "granular_1s", "pairs")


class TraceExhaustedError(ValueError):
    """A non-looping trace ended with bits still outstanding."""


@dataclass(frozen=True)
class ChannelConfig:
    """Channel behaviour shared by every download of a session."""

    rtt_s: float = 0.08
    loop_trace: bool = True  # wrap the trace when a session outlasts it

    def __post_init__(self):
        if self.rtt_s < 0:
            raise ValueError("rtt_s must be >= 0")


@dataclass(frozen=True)
class Trace:
    """Piecewise-constant bandwidth timeline.

    ``samples[i] = (start_time_s, bandwidth_kbps)``: the i-th value
    holds from its start time until the next start (or ``duration_s``
    for the last sample). Start times are strictly increasing and begin
    at 0.
    """

    samples: tuple[tuple[float, float], ...]
    duration_s: float

    def __post_init__(self):
        if not self.samples:
            raise ValueError("empty trace")
        if self.samples[0][0] != 0.0:
            raise ValueError("first sample must start at time 0")
        prev = -1.0
        for t, bw in self.samples:
            if t <= prev:
                raise ValueError("sample start times must be strictly increasing")
            if bw < 0:
                raise ValueError(f"negative bandwidth {bw}")
            prev = t
        if self.duration_s < self.samples[-1][0]:
            raise ValueError("duration_s shorter than last sample start")

    def bandwidth_at(self, t: float) -> float:
        """Bandwidth (kb/s) in effect at local time ``t`` in [0, duration)."""
        starts = [s for s, _ in self.samples]
        i = bisect_right(starts, t) - 1
        return self.samples[max(i, 0)][1]

    def mean_kbps(self) -> float:
        """Time-weighted mean bandwidth over the full duration."""
        total = 0.0
        for i, (t, bw) in enumerate(self.samples):
            end = self.samples[i + 1][0] if i + 1 < len(self.samples) else self.duration_s
            total += bw * (end - t)
        return total / self.duration_s


def parse_trace(text: str, format: str, duration_s: float | None = None) -> Trace:
    """Parse trace ``text`` in one of the supported formats.

    For the fixed-granularity formats the k-th line becomes the sample
    (k*step, value) and the duration is n*step. For ``pairs`` the
    duration defaults to the last start time plus the trailing gap
    (1.0 s for a single sample); pass ``duration_s`` to override.
    """
    if format not in TRACE_FORMATS:
        raise ValueError(f"unknown trace format {format!r}; expected one of {TRACE_FORMATS}")
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ValueError("empty trace input")

    if format in ("granular_5s", "granular_1s"):
        step = 5.0 if format == "granular_5s" else 1.0
        samples = []
        for k, ln in enumerate(lines):
            bw = float(ln)
            if bw < 0:
                raise ValueError(f"negative bandwidth {bw!r} on line {k + 1}")
            samples.append((k * step, bw))
        return Trace(samples=tuple(samples), duration_s=duration_s if duration_s is not None else len(lines) * step)

    samples = []
    for k, ln in enumerate(lines):
        body = ln.strip().strip("()")
        parts = [p for p in body.replace(";", ",").split(",") if p.strip()]
        if len(parts) != 2:
            raise ValueError(f"malformed pair on line {k + 1}: {ln!r}")
        t, bw = float(parts[0]), float(parts[1])
        if bw < 0:
            raise ValueError(f"negative bandwidth {bw!r} on line {k + 1}")
        samples.append((t, bw))
    if duration_s is None:
        if len(samples) >= 2:
            duration_s = samples[-1][0] + (samples[-1][0] - samples[-2][0])
        else:
            duration_s = samples[-1][0] + 1.0
    return Trace(samples=tuple(samples), duration_s=duration_s)


def serialize_trace(trace: Trace) -> str:
    """Write a trace as ``pairs`` CSV lines (round-trips with parse_trace)."""
    lines = [f"{t!r},{bw!r}" for t, bw in trace.samples]
    return "\n".join(lines) + "\n"


def window_traces(trace: Trace, window_s: float = 55.0, stride_s: float = 55.0) -> list[Trace]:
    """Cut sliding windows of ``window_s`` seconds out of ``trace``.

    Each output window is re-origined to time 0 and preserves the
    time-weighted mean bandwidth of the span it covers.
    """
    if stride_s <= 0:
        raise ValueError("stride_s must be > 0")
    if window_s <= 0:
        raise ValueError("window_s must be > 0")
    if window_s > trace.duration_s:
        raise ValueError(f"window {window_s}s longer than trace ({trace.duration_s}s)")
    starts = [s for s, _ in trace.samples]
    out = []
    t0 = 0.0
    while t0 + window_s <= trace.duration_s + 1e-12:
        i = max(bisect_right(starts, t0) - 1, 0)
        samples = [(0.0, trace.samples[i][1])]
        for s, bw in trace.samples[i + 1:]:
            if s >= t0 + window_s:
                break
            if s > t0:
                samples.append((s - t0, bw))
        out.append(Trace(samples=tuple(samples), duration_s=window_s))
        t0 += stride_s
    return out


def filter_traces(traces: list[Trace], min_avg_kbps: float = 200.0) -> list[Trace]:
    """Keep traces whose time-weighted mean bandwidth is strictly above the floor.

    Discarding slow traces avoids sessions where even the lowest rung
    of the ladder stalls and bitrate selection is trivial.
    """
    return [t for t in traces if t.mean_kbps() > min_avg_kbps]


def download_time(trace: Trace, channel: ChannelConfig, start_time_s: float, size_bits: float) -> float:
    """Wall-clock seconds to fetch ``size_bits`` starting at ``start_time_s``.

    The RTT elapses first; bits then flow at the trace bandwidth from
    ``start_time_s + rtt_s`` onward, so the latency overlaps whatever
    bandwidth interval it lands in. Zero-bandwidth spans simply consume
    wall time. With ``loop_trace`` the timeline wraps modulo the trace
    duration; otherwise running out of trace raises
    :class:`TraceExhaustedError`.
    """
    if size_bits < 0:
        raise ValueError("size_bits must be >= 0")
    if start_time_s < 0:
        raise ValueError("start_time_s must be >= 0")
    if size_bits == 0:
        return channel.rtt_s

    starts = [s for s, _ in trace.samples]
    rates = [bw * 1000.0 for _, bw in trace.samples]  # bits per second
    n = len(starts)
    duration = trace.duration_s

    t = start_time_s + channel.rtt_s
    if not channel.loop_trace and t >= duration:
        raise TraceExhaustedError(f"request at {start_time_s}s lands beyond trace end ({duration}s)")

    # bits available in one full pass of the trace
    loop_bits = 0.0
    for i in range(n):
        end = starts[i + 1] if i + 1 < n else duration
        loop_bits += rates[i] * (end - starts[i])

    remaining = size_bits
    elapsed = 0.0
    local = t % duration if channel.loop_trace else t

    if channel.loop_trace and loop_bits <= 0.0:
        raise TraceExhaustedError("trace carries zero bandwidth over a full loop")
    if channel.loop_trace and remaining > loop_bits:
        # skip whole loops analytically; finish within the last partial pass
        head_bits = 0.0
        i = max(bisect_right(starts, local) - 1, 0)
        pos = local
        while pos < duration:
            end = starts[i + 1] if i + 1 < n else duration
            head_bits += rates[i] * (end - pos)
            pos = end
            i += 1
        if remaining > head_bits:
            whole = (remaining - head_bits) // loop_bits
            elapsed += (duration - local) + whole * duration
            remaining -= head_bits + whole * loop_bits
            local = 0.0
            if remaining <= 0.0:  # landed exactly on a loop boundary
                remaining = 0.0

    while remaining > 0.0:
        if not channel.loop_trace and local >= duration:
            raise TraceExhaustedError(
                f"trace exhausted with {remaining:.0f} bits remaining (loop_trace=False)"
            )
        i = max(bisect_right(starts, local) - 1, 0)
        end = starts[i + 1] if i + 1 < n else duration
        rate = rates[i]
        span = end - local
        if rate > 0 and remaining <= rate * span:
            elapsed += remaining / rate
            remaining = 0.0
        else:
            remaining -= rate * span
            elapsed += span
            local = end
            if channel.loop_trace and local >= duration:
                local = 0.0

    return channel.rtt_s + elapsed
