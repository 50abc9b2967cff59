"""Sliding-window segmentation, channel standardization, and data splits.

Wake time is sliced into fixed-duration windows (omega seconds, default 512)
advanced by a step (delta, default 128); windows never bridge state
transitions.  Labelled recordings are split 70/15/15 along recording time
with boundary-straddling windows dropped; unlabelled recordings are
partitioned 85/15 at the recording level for self-supervised training.

Segment store layout (one directory):

    manifest.tsv     segment_id, recording_id, subject_id, label, split,
                     start_s, then <KIND>_offset and <KIND>_nbytes per model
                     channel
    segments/<segment_id>.bin   little-endian float32 channel arrays
                                concatenated as ACC_X, ACC_Y, ACC_Z, BVP,
                                EDA, TEMP (raw physical units)
    ibi.tsv          optional: segment_id, offset_s, ibi_s rows
    meta.json        omega_s, delta_s, per-channel rates
    standardizer_target.json / standardizer_ssl.json
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyInput, LengthMismatch, TooFewRecordings
from .ingest import MODEL_KINDS, ChannelKind, Label, Recording
from .wear_state import WearStateTimeline, wake_runs

STD_EPS = 1e-8


class Split(str, Enum):
    Train = "Train"
    Val = "Val"
    Test = "Test"
    NONE = "None"

    def __str__(self) -> str:
        return self.value


@dataclass
class SegmentationConfig:
    omega_s: int = 512
    delta_s: int = 128

    def __post_init__(self):
        if not (0 < self.delta_s <= self.omega_s):
            raise ValueError(f"need 0 < delta {self.delta_s} <= omega {self.omega_s}")


@dataclass
class Segment:
    """A fixed-duration multirate slice of wake time, the unit of learning."""

    recording_id: str
    subject_id: str
    start_s: int
    channels: Dict[ChannelKind, np.ndarray]
    label: Label = Label.Unlabelled
    split: Split = Split.NONE
    ibi_offsets: Optional[np.ndarray] = None  # seconds from segment start
    ibi_intervals: Optional[np.ndarray] = None

    @property
    def segment_id(self) -> str:
        return f"{self.recording_id}_{self.start_s:08d}"


def window_starts(run_len_s: int, omega_s: int, delta_s: int) -> List[int]:
    """Window start offsets inside one contiguous run of `run_len_s` seconds."""
    if run_len_s < omega_s:
        return []
    count = (run_len_s - omega_s) // delta_s + 1
    return [k * delta_s for k in range(count)]


def slice_segments(
    recording: Recording,
    timeline: WearStateTimeline,
    config: SegmentationConfig,
) -> List[Segment]:
    """Slice every maximal Wake run of the aligned recording into windows."""
    duration = timeline.duration_s
    for kind, series in recording.channels.items():
        expected = int(round(duration * series.rate_hz))
        if series.n_samples < expected:
            raise LengthMismatch(
                f"{kind}: {series.n_samples} samples < {expected} for {duration}s timeline"
            )

    segments: List[Segment] = []
    for run_start, run_end in wake_runs(timeline):
        for offset in window_starts(run_end - run_start, config.omega_s, config.delta_s):
            start = run_start + offset
            channels: Dict[ChannelKind, np.ndarray] = {}
            for kind in MODEL_KINDS:
                series = recording.channels[kind]
                rate = int(round(series.rate_hz))
                channels[kind] = series.values[
                    start * rate : (start + config.omega_s) * rate
                ].copy()
            ibi_off = ibi_int = None
            if recording.ibi is not None and recording.ibi.n_events:
                rel = recording.ibi.offsets - start
                keep = (rel >= 0.0) & (rel < config.omega_s)
                ibi_off = rel[keep]
                ibi_int = recording.ibi.intervals[keep]
            segments.append(
                Segment(
                    recording_id=recording.id,
                    subject_id=recording.subject_id,
                    start_s=start,
                    channels=channels,
                    label=recording.label,
                    ibi_offsets=ibi_off,
                    ibi_intervals=ibi_int,
                )
            )
    return segments


def time_split(
    segments: Sequence[Segment],
    train_frac: float = 0.70,
    val_frac: float = 0.15,
) -> List[Segment]:
    """Assign Train/Val/Test along recording time for one labelled recording.

    Boundaries sit at train_frac and train_frac+val_frac of the wake-segment
    time span; a window is assigned only when its full interval lies inside a
    split's range, otherwise it gets Split.NONE and is excluded downstream.
    """
    if not segments:
        return []
    starts = [seg.start_s for seg in segments]
    omega = _segment_omega(segments[0])
    t0 = min(starts)
    t1 = max(starts) + omega
    span = t1 - t0
    b1 = t0 + train_frac * span
    b2 = t0 + (train_frac + val_frac) * span

    out = []
    for seg in sorted(segments, key=lambda s: s.start_s):
        lo, hi = seg.start_s, seg.start_s + omega
        if lo >= t0 and hi <= b1 + 1e-9:
            split = Split.Train
        elif lo >= b1 - 1e-9 and hi <= b2 + 1e-9:
            split = Split.Val
        elif lo >= b2 - 1e-9:
            split = Split.Test
        else:
            split = Split.NONE
        out.append(replace(seg, split=split))
    return out


def _segment_omega(segment: Segment) -> int:
    """Window length in seconds, from the 1 Hz TEMP channel."""
    return int(segment.channels[ChannelKind.TEMP].shape[0])


def ssl_split(
    recording_ids: Sequence[str], seed: int, train_frac: float = 0.85
) -> Tuple[List[str], List[str]]:
    """Deterministic seeded partition of recordings into SSL train/val sets."""
    ids = sorted(set(recording_ids))
    if len(ids) < 2:
        raise TooFewRecordings(f"ssl split needs >= 2 recordings, got {len(ids)}")
    rng = np.random.default_rng([seed, 0x55517])
    order = rng.permutation(len(ids))
    n_train = int(round(train_frac * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)
    train = sorted(ids[i] for i in order[:n_train])
    val = sorted(ids[i] for i in order[n_train:])
    return train, val


@dataclass
class Standardizer:
    """Per-channel population mean/std fitted on a declared segment set."""

    means: Dict[ChannelKind, float] = field(default_factory=dict)
    stds: Dict[ChannelKind, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "means": {str(k): v for k, v in self.means.items()},
                "stds": {str(k): v for k, v in self.stds.items()},
            },
            indent=1,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "Standardizer":
        raw = json.loads(text)
        return cls(
            means={ChannelKind(k): float(v) for k, v in raw["means"].items()},
            stds={ChannelKind(k): float(v) for k, v in raw["stds"].items()},
        )


def fit_standardizer(segments: Iterable[Segment]) -> Standardizer:
    """Population mean/std per channel kind over all samples of all segments.

    Computed as a (sum, sum-of-squares) reduction so shards merge cleanly.
    Degenerate channels (std <= 0) fall back to std = 1e-8.
    """
    sums = {k: 0.0 for k in MODEL_KINDS}
    sumsqs = {k: 0.0 for k in MODEL_KINDS}
    counts = {k: 0 for k in MODEL_KINDS}
    n_segments = 0
    for seg in segments:
        n_segments += 1
        for kind in MODEL_KINDS:
            v = seg.channels[kind]
            sums[kind] += float(v.sum())
            sumsqs[kind] += float((v * v).sum())
            counts[kind] += v.shape[0]
    if n_segments == 0:
        raise EmptyInput("cannot fit a standardizer on zero segments")
    means, stds = {}, {}
    for kind in MODEL_KINDS:
        mean = sums[kind] / counts[kind]
        var = sumsqs[kind] / counts[kind] - mean * mean
        std = float(np.sqrt(max(var, 0.0)))
        if not np.isfinite(std) or std <= 0.0:
            std = STD_EPS
        means[kind] = mean
        stds[kind] = std
    return Standardizer(means=means, stds=stds)


def standardize(segment: Segment, standardizer: Standardizer) -> Segment:
    """(x - mean) / std per model channel; provenance fields unchanged."""
    channels = {
        kind: (segment.channels[kind] - standardizer.means[kind]) / standardizer.stds[kind]
        for kind in MODEL_KINDS
    }
    return replace(segment, channels=channels)


def standardize_channels(
    channels: Dict[ChannelKind, np.ndarray], standardizer: Standardizer
) -> Dict[ChannelKind, np.ndarray]:
    return {
        kind: (channels[kind] - standardizer.means[kind]) / standardizer.stds[kind]
        for kind in MODEL_KINDS
    }


# --- segment store ---------------------------------------------------------

_MANIFEST_FIXED = ("segment_id", "recording_id", "subject_id", "label", "split", "start_s")


def _manifest_header() -> List[str]:
    cols = list(_MANIFEST_FIXED)
    for kind in MODEL_KINDS:
        cols.append(f"{kind}_offset")
        cols.append(f"{kind}_nbytes")
    return cols


@dataclass
class StoreRow:
    segment_id: str
    recording_id: str
    subject_id: str
    label: Label
    split: Split
    start_s: int
    layout: Dict[ChannelKind, Tuple[int, int]]  # kind -> (offset, nbytes)


class SegmentStore:
    """On-disk segment collection; blobs hold raw (unstandardized) units."""

    def __init__(self, root):
        self.root = Path(root)
        self.rows: List[StoreRow] = []
        self._ibi: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        meta_path = self.root / "meta.json"
        self.meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        manifest = self.root / "manifest.tsv"
        if manifest.exists():
            self._read_manifest(manifest)
        ibi_path = self.root / "ibi.tsv"
        if ibi_path.exists():
            self._read_ibi(ibi_path)

    @property
    def omega_s(self) -> int:
        return int(self.meta["omega_s"])

    @property
    def rates(self) -> Dict[ChannelKind, float]:
        return {ChannelKind(k): float(v) for k, v in self.meta["rates"].items()}

    def _read_manifest(self, path: Path) -> None:
        lines = [ln for ln in path.read_text().splitlines() if ln]
        header = lines[0].split("\t")
        expected = _manifest_header()
        if header != expected:
            raise LengthMismatch(f"store manifest header mismatch in {path}")
        for line in lines[1:]:
            f = line.split("\t")
            layout = {}
            for i, kind in enumerate(MODEL_KINDS):
                layout[kind] = (int(f[6 + 2 * i]), int(f[7 + 2 * i]))
            self.rows.append(
                StoreRow(
                    segment_id=f[0],
                    recording_id=f[1],
                    subject_id=f[2],
                    label=Label(f[3]),
                    split=Split(f[4]),
                    start_s=int(f[5]),
                    layout=layout,
                )
            )

    def _read_ibi(self, path: Path) -> None:
        by_segment: Dict[str, List[Tuple[float, float]]] = {}
        for line in path.read_text().splitlines():
            if not line or line.startswith("segment_id\t"):
                continue
            sid, off, ibi = line.split("\t")
            by_segment.setdefault(sid, []).append((float(off), float(ibi)))
        for sid, events in by_segment.items():
            arr = np.asarray(events, dtype=np.float64)
            self._ibi[sid] = (arr[:, 0], arr[:, 1])

    def select(
        self,
        split: Optional[Split] = None,
        labels: Optional[Sequence[Label]] = None,
        recording_ids: Optional[Sequence[str]] = None,
    ) -> List[StoreRow]:
        rows = self.rows
        if split is not None:
            rows = [r for r in rows if r.split == split]
        if labels is not None:
            wanted = set(labels)
            rows = [r for r in rows if r.label in wanted]
        if recording_ids is not None:
            wanted_ids = set(recording_ids)
            rows = [r for r in rows if r.recording_id in wanted_ids]
        return list(rows)

    def load_channels(self, row: StoreRow) -> Dict[ChannelKind, np.ndarray]:
        blob = (self.root / "segments" / f"{row.segment_id}.bin").read_bytes()
        channels = {}
        for kind in MODEL_KINDS:
            offset, nbytes = row.layout[kind]
            arr = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=offset)
            channels[kind] = arr.astype(np.float64)
        return channels

    def load_segment(self, row: StoreRow) -> Segment:
        ibi = self._ibi.get(row.segment_id)
        return Segment(
            recording_id=row.recording_id,
            subject_id=row.subject_id,
            start_s=row.start_s,
            channels=self.load_channels(row),
            label=row.label,
            split=row.split,
            ibi_offsets=None if ibi is None else ibi[0],
            ibi_intervals=None if ibi is None else ibi[1],
        )

    def load_standardizer(self, name: str) -> Standardizer:
        return Standardizer.from_json((self.root / f"standardizer_{name}.json").read_text())


def write_store(
    root,
    segments: Iterable[Segment],
    omega_s: int,
    delta_s: int,
    rates: Dict[ChannelKind, float],
) -> SegmentStore:
    """Write segments (raw units) plus manifest/meta; returns the opened store."""
    root = Path(root)
    (root / "segments").mkdir(parents=True, exist_ok=True)
    manifest_lines = ["\t".join(_manifest_header())]
    ibi_lines = ["segment_id\toffset_s\tibi_s"]
    have_ibi = False
    for seg in segments:
        blob_parts = []
        layout_fields = []
        offset = 0
        for kind in MODEL_KINDS:
            data = np.ascontiguousarray(seg.channels[kind], dtype="<f4").tobytes()
            blob_parts.append(data)
            layout_fields.extend([str(offset), str(len(data))])
            offset += len(data)
        sid = seg.segment_id
        (root / "segments" / f"{sid}.bin").write_bytes(b"".join(blob_parts))
        manifest_lines.append(
            "\t".join(
                [sid, seg.recording_id, seg.subject_id, str(seg.label), str(seg.split), str(seg.start_s)]
                + layout_fields
            )
        )
        if seg.ibi_offsets is not None and len(seg.ibi_offsets):
            have_ibi = True
            for off, ibi in zip(seg.ibi_offsets, seg.ibi_intervals):
                ibi_lines.append(f"{sid}\t{off!r}\t{ibi!r}")
    (root / "manifest.tsv").write_text("\n".join(manifest_lines) + "\n")
    if have_ibi:
        (root / "ibi.tsv").write_text("\n".join(ibi_lines) + "\n")
    (root / "meta.json").write_text(
        json.dumps(
            {
                "omega_s": omega_s,
                "delta_s": delta_s,
                "rates": {str(k): v for k, v in rates.items()},
            },
            indent=1,
            sort_keys=True,
        )
    )
    return SegmentStore(root)
