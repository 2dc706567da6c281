"""Recording schema, CSV ingestion, and the preprocessing pipeline that turns
raw sensor streams into fixed-size model windows.

Pipeline order: resample to 1 Hz -> impute missing values -> min-max normalize
(statistics from the training split only) -> cut windows of T consecutive,
fully labeled seconds.
"""

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, ParseError, VocabularyError

N_RSSI = 20  # 10 access points x 2 wearables (left then right wrist)
N_ACCEL = 6  # x, y, z per wearable (left then right)
N_FEATURES = N_RSSI + N_ACCEL
RSSI_FLOOR_DB = -120.0

DEFAULT_ROOMS = ("kitchen", "living room", "dining room", "hallway", "stairs", "porch")

FEATURE_NAMES = tuple(
    [f"rssi_{i + 1:02d}" for i in range(N_RSSI)] + [f"acc_{i + 1:02d}" for i in range(N_ACCEL)]
)

CSV_COLUMNS = ("subject_id", "day_index", "timestamp_s") + FEATURE_NAMES + ("room",)


@dataclass(frozen=True)
class RoomVocabulary:
    """Ordered room names mapped to dense integer ids 0..n-1."""

    names: tuple

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise VocabularyError(f"duplicate room names: {self.names}")
        if not self.names:
            raise VocabularyError("vocabulary must contain at least one room")

    @classmethod
    def default(cls):
        return cls(DEFAULT_ROOMS)

    def __len__(self):
        return len(self.names)

    @property
    def n(self):
        return len(self.names)

    def id_of(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise VocabularyError(f"unknown room {name!r}; known: {list(self.names)}")

    def name_of(self, room_id):
        if not 0 <= room_id < len(self.names):
            raise VocabularyError(f"room id {room_id} outside [0, {len(self.names)})")
        return self.names[room_id]


@dataclass
class SensorFrame:
    """One 1 Hz timestep (or one raw reading before resampling).

    Missing per-entry values are NaN; ``missing`` marks seconds with no
    readings at all, which break windows.
    """

    timestamp: float
    rssi: np.ndarray  # (N_RSSI,), dB
    accel: np.ndarray  # (N_ACCEL,), g
    room: Optional[str] = None
    subject_id: str = ""
    day_index: int = 0
    missing: bool = False


@dataclass
class Recording:
    """All frames of one (subject, day), timestamp-sorted."""

    subject_id: str
    day_index: int
    frames: list = field(default_factory=list)


@dataclass
class Sample:
    """One model input window: T seconds of both modalities plus labels."""

    rssi: np.ndarray  # (T, N_RSSI)
    accel: np.ndarray  # (T, N_ACCEL)
    labels: np.ndarray  # (T,) int room ids
    subject_id: str = ""
    day_index: int = 0
    start_timestamp: float = 0.0


@dataclass
class NormStats:
    """Per-feature min/max learned on the training split."""

    mins: np.ndarray
    maxs: np.ndarray
    feature_names: tuple = FEATURE_NAMES

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if self.mins.shape != self.maxs.shape or self.mins.ndim != 1:
            raise DimensionError("NormStats: mins/maxs must be 1-D and equal length")
        if np.any(self.maxs < self.mins):
            raise DimensionError("NormStats: max < min for some feature")

    def to_json(self):
        return json.dumps(
            {
                "mins": self.mins.tolist(),
                "maxs": self.maxs.tolist(),
                "feature_names": list(self.feature_names),
            }
        )

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(
            mins=np.array(obj["mins"], dtype=np.float64),
            maxs=np.array(obj["maxs"], dtype=np.float64),
            feature_names=tuple(obj["feature_names"]),
        )


def subject_group(subject_id):
    """'PD' or 'HC' from the subject id prefix, else 'other'."""
    prefix = subject_id[:2].upper()
    return prefix if prefix in ("PD", "HC") else "other"


def _parse_cell(cell, line_no, col):
    if cell == "":
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"column {col}: {cell!r} is not a number", line_no)


def load_recordings(path, vocabulary=None):
    """Read a recording CSV into per-(subject, day) streams.

    Returns a list of Recording, sorted by (subject_id, day_index), each with
    timestamp-sorted frames. Raises ParseError with the offending line number
    for malformed rows and VocabularyError for unknown room names.
    """
    vocabulary = vocabulary or RoomVocabulary.default()
    streams = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ParseError(
                f"bad header: expected {list(CSV_COLUMNS)}, got {header}", 1
            )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise ParseError(
                    f"expected {len(CSV_COLUMNS)} columns, got {len(row)}", line_no
                )
            subject = row[0]
            try:
                day = int(row[1])
            except ValueError:
                raise ParseError(f"day_index {row[1]!r} is not an integer", line_no)
            ts = _parse_cell(row[2], line_no, "timestamp_s")
            if math.isnan(ts):
                raise ParseError("timestamp_s is empty", line_no)
            rssi = np.array(
                [_parse_cell(c, line_no, FEATURE_NAMES[i]) for i, c in enumerate(row[3 : 3 + N_RSSI])]
            )
            accel = np.array(
                [
                    _parse_cell(c, line_no, FEATURE_NAMES[N_RSSI + i])
                    for i, c in enumerate(row[3 + N_RSSI : 3 + N_FEATURES])
                ]
            )
            room = row[-1] or None
            if room is not None:
                vocabulary.id_of(room)  # raises VocabularyError if unknown
            frame = SensorFrame(
                timestamp=ts,
                rssi=rssi,
                accel=accel,
                room=room,
                subject_id=subject,
                day_index=day,
            )
            streams.setdefault((subject, day), []).append(frame)
    out = []
    for (subject, day) in sorted(streams):
        frames = sorted(streams[(subject, day)], key=lambda f: f.timestamp)
        out.append(Recording(subject_id=subject, day_index=day, frames=frames))
    return out


def _fmt(value):
    if isinstance(value, float) and math.isnan(value):
        return ""
    return repr(float(value))


def write_recordings(path, recordings):
    """Write streams back to the canonical CSV format (round-trips losslessly)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in recordings:
            for f in rec.frames:
                row = (
                    [rec.subject_id, str(rec.day_index), _fmt(f.timestamp)]
                    + [_fmt(v) for v in f.rssi]
                    + [_fmt(v) for v in f.accel]
                    + [f.room or ""]
                )
                writer.writerow(row)


def _nan_aggregate(values, aggregator):
    """Column-wise mean/max ignoring NaN; all-NaN columns stay NaN."""
    present = ~np.isnan(values)
    counts = present.sum(axis=0)
    filled = np.where(present, values, 0.0 if aggregator == "mean" else -np.inf)
    if aggregator == "mean":
        agg = filled.sum(axis=0) / np.maximum(counts, 1)
    else:
        agg = filled.max(axis=0)
    return np.where(counts > 0, agg, np.nan)


def resample_1hz(frames, aggregator="mean"):
    """Collapse raw readings to one frame per wall-clock second.

    Each feature becomes the per-second mean (or max) over readings, ignoring
    NaN entries; seconds with no readings at all are emitted with
    ``missing=True``. The per-second room label is the majority label, ties
    going to the earlier reading's label.
    """
    if aggregator not in ("mean", "max"):
        raise ValueError(f"aggregator must be 'mean' or 'max', got {aggregator!r}")
    if not frames:
        return []
    by_second = {}
    for f in frames:
        by_second.setdefault(int(math.floor(f.timestamp)), []).append(f)
    first, last = min(by_second), max(by_second)
    subject, day = frames[0].subject_id, frames[0].day_index
    out = []
    for sec in range(first, last + 1):
        group = by_second.get(sec)
        if not group:
            out.append(
                SensorFrame(
                    timestamp=float(sec),
                    rssi=np.full(N_RSSI, np.nan),
                    accel=np.full(N_ACCEL, np.nan),
                    room=None,
                    subject_id=subject,
                    day_index=day,
                    missing=True,
                )
            )
            continue
        rssi_agg = _nan_aggregate(np.stack([g.rssi for g in group]), aggregator)
        accel_agg = _nan_aggregate(np.stack([g.accel for g in group]), aggregator)
        labels = [g.room for g in group if g.room is not None]
        room = None
        if labels:
            counts = Counter(labels)
            top = max(counts.values())
            room = next(lab for lab in labels if counts[lab] == top)
        out.append(
            SensorFrame(
                timestamp=float(sec),
                rssi=rssi_agg,
                accel=accel_agg,
                room=room,
                subject_id=subject,
                day_index=day,
            )
        )
    return out


def impute(frames):
    """Replace missing entries in place of NaN: RSSI -> -120 dB, accel -> 0 g.

    Returns new frames; the ``missing`` flag is preserved so gap seconds still
    break windows downstream.
    """
    out = []
    for f in frames:
        rssi = np.where(np.isnan(f.rssi), RSSI_FLOOR_DB, f.rssi)
        accel = np.where(np.isnan(f.accel), 0.0, f.accel)
        out.append(
            SensorFrame(
                timestamp=f.timestamp,
                rssi=rssi,
                accel=accel,
                room=f.room,
                subject_id=f.subject_id,
                day_index=f.day_index,
                missing=f.missing,
            )
        )
    return out


# spec name for the RSSI side of the rule
impute_rssi = impute


def _feature_matrix(frames):
    rows = [np.concatenate([f.rssi, f.accel]) for f in frames if not f.missing]
    if not rows:
        raise DimensionError("no non-missing frames to compute statistics from")
    return np.stack(rows)


def fit_norm(frames):
    """Per-feature min/max over the given (training) frames."""
    m = _feature_matrix(frames)
    if np.isnan(m).any():
        raise DimensionError("fit_norm: impute before fitting normalization stats")
    return NormStats(mins=m.min(axis=0), maxs=m.max(axis=0))


def apply_norm(frames, stats):
    """Map each feature linearly so the training min->0 and max->1, clamped.

    Features with max == min map to 0.
    """
    if stats.mins.shape[0] != N_FEATURES:
        raise DimensionError(
            f"apply_norm: stats cover {stats.mins.shape[0]} features, need {N_FEATURES}"
        )
    span = stats.maxs - stats.mins
    safe = np.where(span > 0, span, 1.0)
    out = []
    for f in frames:
        feats = np.concatenate([f.rssi, f.accel])
        scaled = np.clip((feats - stats.mins) / safe, 0.0, 1.0)
        scaled = np.where(span > 0, scaled, 0.0)
        out.append(
            SensorFrame(
                timestamp=f.timestamp,
                rssi=scaled[:N_RSSI],
                accel=scaled[N_RSSI:],
                room=f.room,
                subject_id=f.subject_id,
                day_index=f.day_index,
                missing=f.missing,
            )
        )
    return out


def window(frames, vocabulary, T=10, stride=None):
    """Cut contiguous, fully labeled windows of T one-second frames.

    A window never spans a missing second or a timestamp jump. ``stride``
    defaults to T (non-overlapping); use 1 for training augmentation. Streams
    shorter than T produce no samples.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    stride = T if stride is None else stride
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    runs = []
    current = []
    prev_ts = None
    for f in frames:
        usable = not f.missing and f.room is not None
        contiguous = prev_ts is not None and f.timestamp == prev_ts + 1.0
        if usable and (not current or contiguous):
            current.append(f)
        elif usable:
            if current:
                runs.append(current)
            current = [f]
        else:
            if current:
                runs.append(current)
            current = []
        prev_ts = f.timestamp if usable else None
    if current:
        runs.append(current)
    samples = []
    for run in runs:
        for start in range(0, len(run) - T + 1, stride):
            chunk = run[start : start + T]
            samples.append(
                Sample(
                    rssi=np.stack([c.rssi for c in chunk]),
                    accel=np.stack([c.accel for c in chunk]),
                    labels=np.array([vocabulary.id_of(c.room) for c in chunk], dtype=np.int64),
                    subject_id=chunk[0].subject_id,
                    day_index=chunk[0].day_index,
                    start_timestamp=chunk[0].timestamp,
                )
            )
    return samples


def samples_to_arrays(samples):
    """Stack samples into (rssi, accel, labels) arrays of shapes (B,T,r),(B,T,a),(B,T)."""
    if not samples:
        raise DimensionError("no samples to stack")
    rssi = np.stack([s.rssi for s in samples]).astype(np.float64)
    accel = np.stack([s.accel for s in samples]).astype(np.float64)
    labels = np.stack([s.labels for s in samples])
    return rssi, accel, labels


def preprocess(recording, stats=None, aggregator="mean"):
    """resample -> impute -> (optionally) normalize one recording's frames."""
    frames = impute(resample_1hz(recording.frames, aggregator=aggregator))
    if stats is not None:
        frames = apply_norm(frames, stats)
    return frames
