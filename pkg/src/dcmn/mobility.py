"""In-home mobility analytics over per-second room sequences: daily transition
counts and room-to-room transition durations through the hallway hub.

A pair transition is a maximal run "A, hallway^k, B" (either direction, k >= 0)
inside one contiguous recording segment; its duration is k + 1 seconds, i.e.
from leaving A through the first second inside B, inclusive. Runs that return
to the same room or pass through a third room do not count.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ReportError

DEFAULT_PAIRS = (
    ("kitchen", "living room"),
    ("kitchen", "dining room"),
    ("dining room", "living room"),
)


@dataclass
class RoomSequence:
    """Per-second room ids with timestamps for one (subject, day)."""

    subject_id: str
    day_index: int
    timestamps: np.ndarray  # (N,) seconds; gaps allowed between segments
    rooms: np.ndarray  # (N,) int room ids

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.rooms = np.asarray(self.rooms, dtype=np.int64)
        if self.timestamps.shape != self.rooms.shape:
            raise DomainError("timestamps and rooms must have equal length")
        if np.any(np.diff(self.timestamps) < 1.0):
            raise DomainError("timestamps must increase by at least 1 s")

    @property
    def key(self):
        return (self.subject_id, self.day_index)

    def segments(self):
        """Contiguous runs (1 s steps) of room ids."""
        if self.rooms.size == 0:
            return []
        breaks = np.where(np.diff(self.timestamps) != 1.0)[0] + 1
        return np.split(self.rooms, breaks)


def count_daily_transitions(seq):
    """Number of room changes, never counting across recording gaps."""
    return int(sum((seg[1:] != seg[:-1]).sum() for seg in seq.segments()))


def _check_pair(pair, floorplan):
    a, b = pair
    rooms = floorplan.rooms
    hall_id = rooms.id_of("hallway")
    a_id, b_id = rooms.id_of(a), rooms.id_of(b)
    if a_id == b_id:
        raise DomainError("pair must be two distinct rooms")
    if not (floorplan.are_adjacent(a, "hallway") and floorplan.are_adjacent(b, "hallway")):
        raise DomainError(f"pair ({a!r}, {b!r}) is not hallway-connected")
    if floorplan.are_adjacent(a, b):
        raise DomainError(f"pair ({a!r}, {b!r}) is directly adjacent, not hallway-mediated")
    return a_id, b_id, hall_id


def pair_transition_durations(seq, pair, floorplan):
    """Durations (seconds) of every A-hallway-B traversal, undirected.

    Raises DomainError when the pair's rooms are not both hallway-adjacent or
    are directly connected.
    """
    a_id, b_id, hall_id = _check_pair(pair, floorplan)
    wanted = {a_id, b_id}
    durations = []
    for seg in seq.segments():
        last_room = None
        hall_run = 0
        for r in seg.tolist():
            if r == hall_id:
                hall_run += 1
                continue
            if last_room is not None and {last_room, r} == wanted:
                durations.append(hall_run + 1)
            last_room = r
            hall_run = 0
    return durations


def median_smooth(rooms, width=3):
    """Width-3 median filter over room ids; removes single-second jumps."""
    if width != 3:
        raise DomainError("only width-3 smoothing is supported")
    rooms = np.asarray(rooms)
    if rooms.size < 3:
        return rooms.copy()
    out = rooms.copy()
    stacked = np.stack([rooms[:-2], rooms[1:-1], rooms[2:]])
    out[1:-1] = np.median(stacked, axis=0).astype(rooms.dtype)
    return out


def smooth_sequence(seq, width=3):
    return RoomSequence(
        subject_id=seq.subject_id,
        day_index=seq.day_index,
        timestamps=seq.timestamps,
        rooms=np.concatenate([median_smooth(seg, width) for seg in seq.segments()])
        if seq.rooms.size
        else seq.rooms,
    )


@dataclass
class PairStats:
    mean_s: float  # NaN when no events
    std_s: float
    count: int


@dataclass
class MobilityReport:
    """Aggregates over subject-days plus offsets of predictions vs truth."""

    daily_mean_pred: float
    daily_std_pred: float
    daily_mean_truth: float
    daily_std_truth: float
    daily_offset: float
    pairs_pred: dict  # "roomA|roomB" -> PairStats
    pairs_truth: dict
    pair_offsets: dict  # "roomA|roomB" -> |pred mean - truth mean|
    duration_offset: float  # mean of pair_offsets
    rows: list = field(default_factory=list)  # long format (metric, subject, day, value)

    def to_json_dict(self):
        def stats_dict(stats):
            return {
                "mean_s": None if np.isnan(stats.mean_s) else stats.mean_s,
                "std_s": None if np.isnan(stats.std_s) else stats.std_s,
                "count": stats.count,
            }

        return {
            "daily_transitions": {
                "predicted": {"mean": self.daily_mean_pred, "std": self.daily_std_pred},
                "ground_truth": {"mean": self.daily_mean_truth, "std": self.daily_std_truth},
                "offset": self.daily_offset,
            },
            "pair_durations": {
                name: {
                    "predicted": stats_dict(self.pairs_pred[name]),
                    "ground_truth": stats_dict(self.pairs_truth[name]),
                    "offset": None
                    if np.isnan(self.pair_offsets[name])
                    else self.pair_offsets[name],
                }
                for name in self.pairs_pred
            },
            "duration_offset": None if np.isnan(self.duration_offset) else self.duration_offset,
        }


def _pair_name(pair):
    return f"{pair[0]}|{pair[1]}"


def _collect(sequences, floorplan, pairs):
    daily = {seq.key: count_daily_transitions(seq) for seq in sequences}
    durations = {
        _pair_name(p): {seq.key: pair_transition_durations(seq, p, floorplan) for seq in sequences}
        for p in pairs
    }
    return daily, durations


def _pair_stats(per_key):
    pooled = [d for ds in per_key.values() for d in ds]
    if not pooled:
        return PairStats(mean_s=float("nan"), std_s=float("nan"), count=0)
    arr = np.array(pooled, dtype=np.float64)
    return PairStats(mean_s=float(arr.mean()), std_s=float(arr.std()), count=len(pooled))


def mobility_report(predicted, truth, floorplan, pairs=DEFAULT_PAIRS, smooth=False):
    """Compare predicted room sequences against ground truth.

    Both inputs are lists of RoomSequence covering the same (subject, day)
    keys; ReportError lists any mismatch. The duration offset averages the
    per-pair |predicted mean - truth mean| over pairs with events on both
    sides.
    """
    pred_keys = {seq.key for seq in predicted}
    truth_keys = {seq.key for seq in truth}
    if pred_keys != truth_keys:
        raise ReportError(
            "subject-day keys differ: "
            f"missing from predictions {sorted(truth_keys - pred_keys)}, "
            f"missing from ground truth {sorted(pred_keys - truth_keys)}"
        )
    if not truth:
        raise ReportError("no sequences to report on")
    if smooth:
        predicted = [smooth_sequence(seq) for seq in predicted]
    daily_pred, dur_pred = _collect(predicted, floorplan, pairs)
    daily_truth, dur_truth = _collect(truth, floorplan, pairs)

    pred_counts = np.array([daily_pred[k] for k in sorted(daily_pred)], dtype=np.float64)
    truth_counts = np.array([daily_truth[k] for k in sorted(daily_truth)], dtype=np.float64)
    pairs_pred = {name: _pair_stats(per_key) for name, per_key in dur_pred.items()}
    pairs_truth = {name: _pair_stats(per_key) for name, per_key in dur_truth.items()}
    pair_offsets = {}
    for name in pairs_pred:
        a, b = pairs_pred[name], pairs_truth[name]
        pair_offsets[name] = (
            abs(a.mean_s - b.mean_s) if a.count and b.count else float("nan")
        )
    valid = [v for v in pair_offsets.values() if not np.isnan(v)]
    duration_offset = float(np.mean(valid)) if valid else float("nan")

    rows = []
    for source, daily in (("predicted", daily_pred), ("ground_truth", daily_truth)):
        for (subject, day), value in sorted(daily.items()):
            rows.append((f"daily_transitions/{source}", subject, day, float(value)))
    for source, dur in (("predicted", dur_pred), ("ground_truth", dur_truth)):
        for name, per_key in sorted(dur.items()):
            for (subject, day), values in sorted(per_key.items()):
                for v in values:
                    rows.append((f"duration/{name}/{source}", subject, day, float(v)))

    return MobilityReport(
        daily_mean_pred=float(pred_counts.mean()),
        daily_std_pred=float(pred_counts.std()),
        daily_mean_truth=float(truth_counts.mean()),
        daily_std_truth=float(truth_counts.std()),
        daily_offset=float(abs(pred_counts.mean() - truth_counts.mean())),
        pairs_pred=pairs_pred,
        pairs_truth=pairs_truth,
        pair_offsets=pair_offsets,
        duration_offset=duration_offset,
        rows=rows,
    )


def sequences_from_frames(frames_by_key, vocabulary):
    """RoomSequence per (subject, day) from labeled, non-missing 1 Hz frames."""
    out = []
    for (subject, day) in sorted(frames_by_key):
        usable = [
            f for f in frames_by_key[(subject, day)] if not f.missing and f.room is not None
        ]
        out.append(
            RoomSequence(
                subject_id=subject,
                day_index=day,
                timestamps=np.array([f.timestamp for f in usable]),
                rooms=np.array([vocabulary.id_of(f.room) for f in usable]),
            )
        )
    return out


def sequences_from_windows(samples, labels_per_window):
    """Stitch non-overlapping windows back into per-(subject, day) sequences.

    labels_per_window: (B, T) array, rows aligned with ``samples``.
    """
    if len(samples) != len(labels_per_window):
        raise ReportError("one label row per sample required")
    grouped = {}
    for sample, labels in zip(samples, labels_per_window):
        key = (sample.subject_id, sample.day_index)
        for offset, room in enumerate(labels):
            grouped.setdefault(key, []).append((sample.start_timestamp + offset, int(room)))
    out = []
    for key in sorted(grouped):
        points = sorted(grouped[key])
        out.append(
            RoomSequence(
                subject_id=key[0],
                day_index=key[1],
                timestamps=np.array([p[0] for p in points]),
                rooms=np.array([p[1] for p in points]),
            )
        )
    return out
