"""Per-second OffBody / Sleep / Wake labelling.

Off-body seconds are flagged from EDA and skin-temperature rules: any EDA
sample below 0.05 or above 100 microsiemens, or any TEMP sample outside the
physiological 30-40 C band, marks that second off-body.  Sleep uses the
arm-angle heuristic: the angle of the forearm (from 5-second median
accelerometer epochs) staying within 5 degrees of its previous epoch for at
least 5 minutes.  Short on-body stretches (< 5 minutes) are rewritten to
off-body so every retained run is usable for windowing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .errors import LengthMismatch
from .ingest import ChannelKind, ChannelSeries, Recording

OFFBODY = 0
SLEEP = 1
WAKE = 2

_STATE_CHARS = {OFFBODY: "O", SLEEP: "S", WAKE: "W"}
_CHAR_STATES = {v: k for k, v in _STATE_CHARS.items()}

EDA_MIN_US = 0.05
EDA_MAX_US = 100.0
TEMP_MIN_C = 30.0
TEMP_MAX_C = 40.0

ANGLE_EPOCH_S = 5
ANGLE_CHANGE_DEG = 5.0
SLEEP_MIN_EPOCHS = 60  # 60 epochs x 5 s = 5 minutes
MIN_WEAR_S = 300


@dataclass
class WearStateTimeline:
    """One state per second of the aligned recording duration."""

    recording_id: str
    states: np.ndarray  # int8, values in {OFFBODY, SLEEP, WAKE}

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int8)

    @property
    def duration_s(self) -> int:
        return int(self.states.shape[0])


def _per_second(values: np.ndarray, rate_hz: float, duration_s: int) -> np.ndarray:
    """Reshape an aligned channel into (seconds, samples_per_second)."""
    n = int(round(rate_hz * duration_s))
    if values.shape[0] < n:
        raise LengthMismatch(
            f"channel has {values.shape[0]} samples, need {n} for {duration_s}s at {rate_hz}Hz"
        )
    per_s = int(round(rate_hz))
    if not math.isclose(rate_hz, per_s):
        raise LengthMismatch(f"per-second grouping needs an integer rate, got {rate_hz}")
    return values[:n].reshape(duration_s, per_s)


def detect_offbody(eda: ChannelSeries, temp: ChannelSeries) -> np.ndarray:
    """Per-second off-body flags from the EDA/TEMP rules.

    A second is off-body iff ANY of its EDA samples is < 0.05 or > 100 uS,
    or ANY of its TEMP samples falls outside the closed [30, 40] C interval.
    """
    duration = int(min(eda.n_samples / eda.rate_hz, temp.n_samples / temp.rate_hz))
    eda_sec = _per_second(eda.values, eda.rate_hz, duration)
    temp_sec = _per_second(temp.values, temp.rate_hz, duration)
    eda_bad = (eda_sec < EDA_MIN_US) | (eda_sec > EDA_MAX_US)
    temp_bad = (temp_sec < TEMP_MIN_C) | (temp_sec > TEMP_MAX_C)
    return eda_bad.any(axis=1) | temp_bad.any(axis=1)


def arm_angle(acc_epoch: np.ndarray) -> float:
    """Arm angle (degrees) of one 5 s accelerometer epoch, shape (n, 3).

    Uses per-axis medians; a zero horizontal component maps to +/-90 by the
    sign of the vertical median.
    """
    if acc_epoch.shape[0] == 0:
        raise ValueError("epoch must be non-empty")
    med = np.median(acc_epoch, axis=0)
    horiz = math.sqrt(med[0] ** 2 + med[1] ** 2)
    return math.degrees(math.atan2(med[2], horiz))


def arm_angles(
    acc_x: ChannelSeries, acc_y: ChannelSeries, acc_z: ChannelSeries
) -> np.ndarray:
    """Arm angle per full 5 s epoch over the aligned ACC channels."""
    rate = acc_x.rate_hz
    n_sec = int(min(c.n_samples / c.rate_hz for c in (acc_x, acc_y, acc_z)))
    n_epochs = n_sec // ANGLE_EPOCH_S
    per_epoch = int(round(rate * ANGLE_EPOCH_S))
    angles = np.empty(n_epochs, dtype=np.float64)
    for axis_values in (acc_x.values, acc_y.values, acc_z.values):
        if axis_values.shape[0] < n_epochs * per_epoch:
            raise LengthMismatch("ACC axes shorter than the epoch grid")
    xs = acc_x.values[: n_epochs * per_epoch].reshape(n_epochs, per_epoch)
    ys = acc_y.values[: n_epochs * per_epoch].reshape(n_epochs, per_epoch)
    zs = acc_z.values[: n_epochs * per_epoch].reshape(n_epochs, per_epoch)
    med_x = np.median(xs, axis=1)
    med_y = np.median(ys, axis=1)
    med_z = np.median(zs, axis=1)
    horiz = np.sqrt(med_x**2 + med_y**2)
    angles = np.degrees(np.arctan2(med_z, horiz))
    return angles


def detect_sleep(
    acc_x: ChannelSeries, acc_y: ChannelSeries, acc_z: ChannelSeries
) -> np.ndarray:
    """Per-5s-epoch sleep flags via the sustained-arm-angle rule.

    An epoch sleeps iff it belongs to a maximal chain of epochs whose
    successive angle changes all stay <= 5 degrees and which spans at least
    60 epochs (5 minutes).
    """
    angles = arm_angles(acc_x, acc_y, acc_z)
    n = angles.shape[0]
    sleep = np.zeros(n, dtype=bool)
    if n == 0:
        return sleep
    small = np.abs(np.diff(angles)) <= ANGLE_CHANGE_DEG
    i = 0
    while i < n:
        j = i
        while j + 1 < n and small[j]:
            j += 1
        if j - i + 1 >= SLEEP_MIN_EPOCHS:
            sleep[i : j + 1] = True
        i = j + 1
    return sleep


def compose_timeline(
    recording_id: str, offbody: np.ndarray, sleep_epochs: np.ndarray
) -> WearStateTimeline:
    """Merge per-second off-body and per-epoch sleep flags.

    Precedence per second: OffBody > Sleep > Wake.  Sleep epochs broadcast to
    their 5 seconds; trailing seconds beyond the last full epoch are Wake.
    """
    n_sec = int(offbody.shape[0])
    if sleep_epochs.shape[0] != n_sec // ANGLE_EPOCH_S:
        raise LengthMismatch(
            f"{sleep_epochs.shape[0]} sleep epochs cannot cover {n_sec} seconds"
        )
    states = np.full(n_sec, WAKE, dtype=np.int8)
    sleep_sec = np.zeros(n_sec, dtype=bool)
    full = sleep_epochs.shape[0] * ANGLE_EPOCH_S
    sleep_sec[:full] = np.repeat(sleep_epochs, ANGLE_EPOCH_S)
    states[sleep_sec] = SLEEP
    states[offbody.astype(bool)] = OFFBODY
    return WearStateTimeline(recording_id=recording_id, states=states)


def enforce_min_wear(timeline: WearStateTimeline) -> WearStateTimeline:
    """Rewrite every on-body run shorter than 5 minutes to OffBody."""
    states = timeline.states.copy()
    n = states.shape[0]
    i = 0
    while i < n:
        if states[i] == OFFBODY:
            i += 1
            continue
        j = i
        while j < n and states[j] != OFFBODY:
            j += 1
        if j - i < MIN_WEAR_S:
            states[i:j] = OFFBODY
        i = j
    return WearStateTimeline(recording_id=timeline.recording_id, states=states)


def summarize_hours(timeline: WearStateTimeline) -> Tuple[float, float, float]:
    """(offbody_h, sleep_h, wake_h); the three sum to the total duration."""
    counts = np.bincount(timeline.states, minlength=3)
    return (counts[OFFBODY] / 3600.0, counts[SLEEP] / 3600.0, counts[WAKE] / 3600.0)


def build_timeline(recording: Recording) -> WearStateTimeline:
    """Full rule stack for one aligned recording."""
    offbody = detect_offbody(
        recording.channels[ChannelKind.EDA], recording.channels[ChannelKind.TEMP]
    )
    sleep = detect_sleep(
        recording.channels[ChannelKind.ACC_X],
        recording.channels[ChannelKind.ACC_Y],
        recording.channels[ChannelKind.ACC_Z],
    )
    timeline = compose_timeline(recording.id, offbody, sleep)
    return enforce_min_wear(timeline)


def wake_runs(timeline: WearStateTimeline) -> List[Tuple[int, int]]:
    """Maximal [start, end) second intervals in state Wake."""
    runs = []
    n = timeline.states.shape[0]
    i = 0
    while i < n:
        if timeline.states[i] != WAKE:
            i += 1
            continue
        j = i
        while j < n and timeline.states[j] == WAKE:
            j += 1
        runs.append((i, j))
        i = j
    return runs


def write_timeline(timeline: WearStateTimeline, path) -> None:
    """One line per second (O/S/W) under a recording-id header."""
    lines = [f"# recording_id={timeline.recording_id}"]
    lines.extend(_STATE_CHARS[int(s)] for s in timeline.states)
    Path(path).write_text("\n".join(lines) + "\n")


def read_timeline(path) -> WearStateTimeline:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# recording_id="):
        raise LengthMismatch(f"{path}: missing timeline header")
    recording_id = lines[0].split("=", 1)[1]
    states = np.array([_CHAR_STATES[ln] for ln in lines[1:] if ln], dtype=np.int8)
    return WearStateTimeline(recording_id=recording_id, states=states)
