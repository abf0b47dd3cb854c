"""Media-side data model: bitrate ladders, per-segment attributes, manifests.

A manifest carries everything the "transmitter" side contributes to a
streaming session: the encoding ladder and, for every (segment,
representation) pair, the transfer size in bits and a precomputed
perceptual quality score in [0, 100]. Quality scores are opaque inputs;
this package never computes them.

Sizes are stored in bits so that all channel arithmetic happens in a
single unit against kb/s bandwidth values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


@dataclass(frozen=True)
class Representation:
    """One encoding of the content: resolution plus nominal bitrate."""

    index: int  # 1-based position in the ladder
    width: int
    height: int
    bitrate_kbps: float

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"representation index must be >= 1, got {self.index}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"non-positive resolution {self.width}x{self.height}")
        if not (self.bitrate_kbps > 0):
            raise ValueError(f"non-positive bitrate {self.bitrate_kbps}")


@dataclass(frozen=True)
class SegmentInfo:
    """Per-(segment, representation) attributes embedded in the manifest."""

    size_bits: float
    quality: float  # perceptual score in [0, 100], device-adapted

    def __post_init__(self):
        if not (self.size_bits > 0):
            raise ValueError(f"non-positive segment size {self.size_bits}")
        if not (0.0 <= self.quality <= 100.0):
            raise ValueError(f"quality {self.quality} outside [0, 100]")


@dataclass(frozen=True)
class Manifest:
    """Immutable description of one encoded title.

    ``segments[i][r-1]`` holds the :class:`SegmentInfo` of segment ``i``
    (0-based position) at representation ``r`` (1-based ladder index).
    """

    segment_duration_s: float
    ladder: tuple[Representation, ...]
    segments: tuple[tuple[SegmentInfo, ...], ...]

    def __post_init__(self):
        if not (self.segment_duration_s > 0):
            raise ValueError("segment_duration_s must be > 0")
        if not self.ladder:
            raise ValueError("empty ladder")
        for pos, rep in enumerate(self.ladder, start=1):
            if rep.index != pos:
                raise ValueError(f"ladder indices must be contiguous from 1, got {rep.index} at position {pos}")
        rates = [rep.bitrate_kbps for rep in self.ladder]
        if any(b >= a for a, b in zip(rates[1:], rates)):
            raise ValueError("ladder bitrates must be strictly increasing")
        if not self.segments:
            raise ValueError("manifest has no segments")
        for i, row in enumerate(self.segments):
            if len(row) != len(self.ladder):
                raise ValueError(f"ragged segment matrix: row {i} has {len(row)} entries, ladder has {len(self.ladder)}")

    @property
    def segment_count(self) -> int:
        return len(self.segments)

    def info(self, segment: int, rep_index: int) -> SegmentInfo:
        """Attributes of 0-based ``segment`` at 1-based ``rep_index``."""
        if not 1 <= rep_index <= len(self.ladder):
            raise IndexError(f"representation index {rep_index} out of range 1..{len(self.ladder)}")
        return self.segments[segment][rep_index - 1]

    def size_bits(self, segment: int, rep_index: int) -> float:
        return self.info(segment, rep_index).size_bits

    def quality(self, segment: int, rep_index: int) -> float:
        return self.info(segment, rep_index).quality

    def nominal_size_bits(self, rep_index: int) -> float:
        """Nominal transfer size: ladder bitrate x segment duration."""
        return self.ladder[rep_index - 1].bitrate_kbps * 1000.0 * self.segment_duration_s


# Reference 13-step encoding ladder used throughout the toolkit
# (Netflix-style steps plus two UHD extensions).
_DEFAULT_LADDER = (
    (1, 320, 180, 235.0),
    (2, 384, 216, 375.0),
    (3, 512, 288, 560.0),
    (4, 512, 288, 750.0),
    (5, 640, 360, 1050.0),
    (6, 960, 540, 1750.0),
    (7, 1280, 720, 2350.0),
    (8, 1280, 720, 3000.0),
    (9, 1920, 1080, 4300.0),
    (10, 1920, 1080, 5800.0),
    (11, 2560, 1440, 8100.0),
    (12, 3840, 2160, 11600.0),
    (13, 3840, 2160, 16800.0),
)


def ladder_default() -> tuple[Representation, ...]:
    """The reference 13-entry encoding ladder."""
    return tuple(Representation(*row) for row in _DEFAULT_LADDER)


def parse_manifest(text: str) -> Manifest:
    """Parse the JSON manifest document (see docs/file_formats.md).

    Raises ValueError on schema violations, non-increasing ladder
    bitrates, a ragged segment matrix, or out-of-range quality scores.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError("manifest document must be a JSON object")
    for key in ("segment_duration_s", "ladder", "segments"):
        if key not in doc:
            raise ValueError(f"manifest missing required field {key!r}")
    try:
        ladder = tuple(
            Representation(
                index=int(entry["index"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
                bitrate_kbps=float(entry["bitrate_kbps"]),
            )
            for entry in doc["ladder"]
        )
        segments = tuple(
            tuple(SegmentInfo(size_bits=float(cell["size_bits"]), quality=float(cell["quality"])) for cell in row)
            for row in doc["segments"]
        )
    except (TypeError, KeyError) as exc:
        raise ValueError(f"malformed manifest entry: {exc}") from exc
    return Manifest(
        segment_duration_s=float(doc["segment_duration_s"]),
        ladder=ladder,
        segments=segments,
    )


def serialize_manifest(manifest: Manifest) -> str:
    """Serialize to the JSON manifest document.

    Floats are emitted with ``repr`` (shortest round-trip form), so
    parse -> serialize -> parse yields a field-wise identical Manifest.
    """
    doc = {
        "segment_duration_s": manifest.segment_duration_s,
        "ladder": [
            {"index": r.index, "width": r.width, "height": r.height, "bitrate_kbps": r.bitrate_kbps}
            for r in manifest.ladder
        ],
        "segments": [
            [{"size_bits": cell.size_bits, "quality": cell.quality} for cell in row]
            for row in manifest.segments
        ],
    }
    return json.dumps(doc, indent=1)


def average_bitrate(manifest: Manifest, choices: list[int]) -> float:
    """Mean actual bitrate (kb/s) over the chosen segments.

    ``choices[i]`` is the 1-based representation index downloaded for
    segment ``i``. The actual per-segment bitrate is size_bits divided
    by the segment duration, not the ladder's nominal value.
    """
    if not choices:
        raise ValueError("choices must be non-empty")
    if len(choices) > manifest.segment_count:
        raise ValueError(f"{len(choices)} choices for {manifest.segment_count} segments")
    total = 0.0
    for seg, rep in enumerate(choices):
        total += manifest.size_bits(seg, rep)
    return total / len(choices) / manifest.segment_duration_s / 1000.0


def default_quality_curve(bitrate_kbps: float) -> float:
    """Saturating VMAF-like quality stand-in for synthetic manifests."""
    return 100.0 * bitrate_kbps / (bitrate_kbps + 900.0)


def synthetic_manifest(
    segments: int = 8,
    segment_duration_s: float = 4.0,
    ladder: tuple[Representation, ...] | None = None,
    size_jitter: float = 0.0,
    quality_fn=default_quality_curve,
    seed: int = 0,
) -> Manifest:
    """Build a synthetic manifest for experiments and tests.

    Segment sizes default to the nominal ladder value; ``size_jitter``
    adds deterministic multiplicative variation of +-jitter around it,
    mimicking encoder rate-control spread.
    """
    import random

    if ladder is None:
        ladder = ladder_default()
    rng = random.Random(seed)
    rows = []
    for _ in range(segments):
        row = []
        for rep in ladder:
            factor = 1.0 + size_jitter * (2.0 * rng.random() - 1.0) if size_jitter else 1.0
            size = rep.bitrate_kbps * 1000.0 * segment_duration_s * factor
            q = min(100.0, max(0.0, quality_fn(rep.bitrate_kbps)))
            row.append(SegmentInfo(size_bits=size, quality=q))
        rows.append(tuple(row))
    return Manifest(segment_duration_s=segment_duration_s, ladder=tuple(ladder), segments=tuple(rows))
