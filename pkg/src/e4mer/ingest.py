"""Parsing of Empatica-E4-style export archives into aligned multirate recordings.

Archive layout (one directory per recording):

    ACC.csv   three comma-separated columns (x, y, z) in raw counts of 1/64 g
    BVP.csv   single column, device units
    EDA.csv   single column, microsiemens
    TEMP.csv  single column, degrees Celsius
    HR.csv    optional, single column, beats per minute
    IBI.csv   optional, "offset_s,ibi_s" rows

Every channel file starts with two header rows: the start epoch (seconds since
the Unix epoch) and the sampling rate in Hz.  ACC headers may repeat the value
once per column; the first field is authoritative.  IBI.csv has a single
start-epoch header row.

A manifest file (tab-separated: recording_id, subject_id, dataset_tag, label,
path) enumerates recordings; paths are resolved relative to the manifest.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import (
    EmptyFile,
    EmptyIntersection,
    MalformedRow,
    MissingChannel,
    NonPositiveRate,
)


class ChannelKind(str, Enum):
    ACC_X = "ACC_X"
    ACC_Y = "ACC_Y"
    ACC_Z = "ACC_Z"
    BVP = "BVP"
    EDA = "EDA"
    TEMP = "TEMP"
    HR = "HR"

    def __str__(self) -> str:  # keep file/report output free of "ChannelKind."
        return self.value


class Label(str, Enum):
    Euthymia = "Euthymia"
    AcuteEpisode = "AcuteEpisode"
    Unlabelled = "Unlabelled"

    def __str__(self) -> str:
        return self.value


#: Channels that enter the model, in the fixed concatenation/storage order.
MODEL_KINDS = (
    ChannelKind.ACC_X,
    ChannelKind.ACC_Y,
    ChannelKind.ACC_Z,
    ChannelKind.BVP,
    ChannelKind.EDA,
    ChannelKind.TEMP,
)

#: Default sampling rates (Hz); overridable through synth/config.
DEFAULT_RATES: Dict[ChannelKind, float] = {
    ChannelKind.ACC_X: 32.0,
    ChannelKind.ACC_Y: 32.0,
    ChannelKind.ACC_Z: 32.0,
    ChannelKind.BVP: 64.0,
    ChannelKind.EDA: 4.0,
    ChannelKind.TEMP: 1.0,
    ChannelKind.HR: 1.0,
}

_ACC_COLUMN = {ChannelKind.ACC_X: 0, ChannelKind.ACC_Y: 1, ChannelKind.ACC_Z: 2}
_ACC_COUNTS_PER_G = 64.0

_CHANNEL_FILES = {
    "ACC.csv": (ChannelKind.ACC_X, ChannelKind.ACC_Y, ChannelKind.ACC_Z),
    "BVP.csv": (ChannelKind.BVP,),
    "EDA.csv": (ChannelKind.EDA,),
    "TEMP.csv": (ChannelKind.TEMP,),
    "HR.csv": (ChannelKind.HR,),
}
_REQUIRED_FILES = ("ACC.csv", "BVP.csv", "EDA.csv", "TEMP.csv")


@dataclass
class ChannelSeries:
    """One uniformly sampled channel, in physical units."""

    kind: ChannelKind
    start_epoch: float
    rate_hz: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def n_samples(self) -> int:
        return int(self.values.shape[0])

    @property
    def end_epoch(self) -> float:
        return self.start_epoch + self.n_samples / self.rate_hz


@dataclass
class IbiSeries:
    """Inter-beat-interval events: (offset from start, interval), both seconds."""

    start_epoch: float
    offsets: np.ndarray
    intervals: np.ndarray

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.intervals = np.asarray(self.intervals, dtype=np.float64)

    @property
    def n_events(self) -> int:
        return int(self.offsets.shape[0])


@dataclass
class Recording:
    """One subject-session of multirate channels plus provenance."""

    id: str
    subject_id: str
    dataset_tag: str
    label: Label
    channels: Dict[ChannelKind, ChannelSeries] = field(default_factory=dict)
    ibi: Optional[IbiSeries] = None

    @property
    def duration_s(self) -> float:
        spans = [c.end_epoch - c.start_epoch for c in self.channels.values()]
        return min(spans) if spans else 0.0

    @property
    def start_epoch(self) -> float:
        return max(c.start_epoch for c in self.channels.values())


def _decode(data) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def _parse_float(token: str, line_no: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise MalformedRow(line_no, f"not a number: {token.strip()!r}") from None
    if not math.isfinite(value):
        raise MalformedRow(line_no, f"non-finite value: {token.strip()!r}")
    return value


def _header_value(line: str, line_no: int) -> float:
    # ACC headers repeat the value once per column; first field wins.
    return _parse_float(line.split(",")[0], line_no)


def parse_channel_file(data, kind: ChannelKind) -> ChannelSeries:
    """Parse one channel file into physical units.

    Row 1 is the start epoch, row 2 the sampling rate, the rest samples.  ACC
    kinds select their column and convert raw counts to g.  NaN/Inf tokens are
    rejected rather than propagated.
    """
    text = _decode(data)
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) < 2:
        raise EmptyFile("need start-epoch and rate header rows")

    start_epoch = _header_value(lines[0], 1)
    rate_hz = _header_value(lines[1], 2)
    if rate_hz <= 0:
        raise NonPositiveRate(f"rate {rate_hz} must be > 0")

    column = _ACC_COLUMN.get(kind)
    values = np.empty(len(lines) - 2, dtype=np.float64)
    for i, line in enumerate(lines[2:]):
        line_no = i + 3
        fields = line.split(",")
        if column is None:
            if len(fields) != 1:
                raise MalformedRow(line_no, f"expected 1 column, got {len(fields)}")
            values[i] = _parse_float(fields[0], line_no)
        else:
            if len(fields) != 3:
                raise MalformedRow(line_no, f"expected 3 columns, got {len(fields)}")
            values[i] = _parse_float(fields[column], line_no) / _ACC_COUNTS_PER_G
    return ChannelSeries(kind=kind, start_epoch=start_epoch, rate_hz=rate_hz, values=values)


def _format_float(x: float) -> str:
    # %r round-trips float64 exactly and stays compact.
    return repr(float(x))


def serialize_channel_file(series: ChannelSeries) -> str:
    """Inverse of :func:`parse_channel_file` for single-column kinds."""
    if series.kind in _ACC_COLUMN:
        raise ValueError("use serialize_acc_file for ACC channels")
    rows = [_format_float(series.start_epoch), _format_float(series.rate_hz)]
    rows.extend(_format_float(v) for v in series.values)
    return "\n".join(rows) + "\n"


def serialize_acc_file(x: ChannelSeries, y: ChannelSeries, z: ChannelSeries) -> str:
    """Write the three-axis ACC file back in raw 1/64 g counts."""
    if not (x.n_samples == y.n_samples == z.n_samples):
        raise ValueError("ACC axes must have equal length")
    header_epoch = ", ".join([_format_float(x.start_epoch)] * 3)
    header_rate = ", ".join([_format_float(x.rate_hz)] * 3)
    rows = [header_epoch, header_rate]
    for vx, vy, vz in zip(x.values, y.values, z.values):
        rows.append(
            ", ".join(
                _format_float(v * _ACC_COUNTS_PER_G) for v in (vx, vy, vz)
            )
        )
    return "\n".join(rows) + "\n"


def parse_ibi_file(data) -> IbiSeries:
    """Parse IBI.csv: a start-epoch row, then offset_s,ibi_s rows."""
    text = _decode(data)
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise EmptyFile("IBI file needs a start-epoch row")
    start_epoch = _header_value(lines[0], 1)
    offsets: List[float] = []
    intervals: List[float] = []
    prev = -math.inf
    for i, line in enumerate(lines[1:]):
        line_no = i + 2
        fields = line.split(",")
        if len(fields) != 2:
            raise MalformedRow(line_no, f"expected offset,ibi got {len(fields)} fields")
        off = _parse_float(fields[0], line_no)
        ibi = _parse_float(fields[1], line_no)
        if off <= prev:
            raise MalformedRow(line_no, "offsets must be strictly increasing")
        if ibi <= 0:
            raise MalformedRow(line_no, "ibi must be > 0")
        prev = off
        offsets.append(off)
        intervals.append(ibi)
    return IbiSeries(start_epoch=start_epoch, offsets=np.array(offsets), intervals=np.array(intervals))


def serialize_ibi_file(ibi: IbiSeries) -> str:
    rows = [_format_float(ibi.start_epoch)]
    for off, val in zip(ibi.offsets, ibi.intervals):
        rows.append(f"{_format_float(off)},{_format_float(val)}")
    return "\n".join(rows) + "\n"


def load_recording(
    dir_path,
    recording_id: str,
    subject_id: str,
    dataset_tag: str = "",
    label: Label = Label.Unlabelled,
) -> Recording:
    """Load one archive directory into a :class:`Recording`.

    ACC/BVP/EDA/TEMP are required; HR and IBI are attached when present.
    """
    dir_path = Path(dir_path)
    channels: Dict[ChannelKind, ChannelSeries] = {}
    for filename in _REQUIRED_FILES + ("HR.csv",):
        kinds = _CHANNEL_FILES[filename]
        path = dir_path / filename
        if not path.exists():
            if filename in _REQUIRED_FILES:
                raise MissingChannel(kinds[0] if len(kinds) == 1 else "ACC")
            continue
        data = path.read_bytes()
        for kind in kinds:
            channels[kind] = parse_channel_file(data, kind)

    ibi = None
    ibi_path = dir_path / "IBI.csv"
    if ibi_path.exists():
        ibi = parse_ibi_file(ibi_path.read_bytes())

    return Recording(
        id=recording_id,
        subject_id=subject_id,
        dataset_tag=dataset_tag,
        label=label,
        channels=channels,
        ibi=ibi,
    )


def align(recording: Recording) -> Recording:
    """Trim all channels to their common whole-second time interval.

    The aligned interval starts at the latest channel start rounded up to a
    whole second and lasts the largest whole number of seconds covered by
    every channel.  Channels are trimmed, never resampled.
    """
    if not recording.channels:
        raise EmptyIntersection("recording has no channels")
    for series in recording.channels.values():
        if series.n_samples == 0:
            raise EmptyIntersection(f"channel {series.kind} is empty")

    latest_start = max(c.start_epoch for c in recording.channels.values())
    earliest_end = min(c.end_epoch for c in recording.channels.values())
    new_start = math.ceil(latest_start - 1e-9)
    duration = math.floor(earliest_end - new_start + 1e-9)
    if duration < 1:
        raise EmptyIntersection(
            f"channels overlap for {earliest_end - new_start:.3f}s; need >= 1s"
        )

    channels: Dict[ChannelKind, ChannelSeries] = {}
    for kind, series in recording.channels.items():
        i0 = math.ceil((new_start - series.start_epoch) * series.rate_hz - 1e-9)
        n = math.floor(duration * series.rate_hz + 1e-9)
        if i0 < 0 or i0 + n > series.n_samples:
            raise EmptyIntersection(
                f"channel {kind}: window [{i0}, {i0 + n}) outside {series.n_samples} samples"
            )
        channels[kind] = ChannelSeries(
            kind=kind,
            start_epoch=float(new_start),
            rate_hz=series.rate_hz,
            values=series.values[i0 : i0 + n].copy(),
        )

    ibi = None
    if recording.ibi is not None and recording.ibi.n_events:
        shifted = recording.ibi.offsets + (recording.ibi.start_epoch - new_start)
        keep = (shifted >= 0.0) & (shifted < duration)
        ibi = IbiSeries(
            start_epoch=float(new_start),
            offsets=shifted[keep],
            intervals=recording.ibi.intervals[keep],
        )

    return replace(recording, channels=channels, ibi=ibi)


# --- manifest -------------------------------------------------------------

MANIFEST_COLUMNS = ("recording_id", "subject_id", "dataset_tag", "label", "path")


@dataclass
class ManifestEntry:
    recording_id: str
    subject_id: str
    dataset_tag: str
    label: Label
    path: str


def write_manifest(entries: List[ManifestEntry], path) -> None:
    path = Path(path)
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for e in entries:
        lines.append("\t".join([e.recording_id, e.subject_id, e.dataset_tag, str(e.label), e.path]))
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path) -> List[ManifestEntry]:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise EmptyFile(f"manifest {path} is empty")
    if lines[0].split("\t") == list(MANIFEST_COLUMNS):
        lines = lines[1:]
    entries = []
    for i, line in enumerate(lines):
        fields = line.split("\t")
        if len(fields) != 5:
            raise MalformedRow(i + 1, f"manifest row needs 5 fields, got {len(fields)}")
        entries.append(
            ManifestEntry(
                recording_id=fields[0],
                subject_id=fields[1],
                dataset_tag=fields[2],
                label=Label(fields[3]),
                path=fields[4],
            )
        )
    return entries


def load_manifest_recording(entry: ManifestEntry, manifest_path) -> Recording:
    """Resolve a manifest entry's path (relative to the manifest) and load it."""
    base = Path(manifest_path).parent
    rec_dir = Path(entry.path)
    if not rec_dir.is_absolute():
        rec_dir = base / rec_dir
    return load_recording(
        os.fspath(rec_dir),
        recording_id=entry.recording_id,
        subject_id=entry.subject_id,
        dataset_tag=entry.dataset_tag,
        label=entry.label,
    )
