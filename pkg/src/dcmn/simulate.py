"""Synthetic smart-home generator: a semi-Markov room-to-room walk over a
floorplan, log-distance RSSI with Gaussian shadowing for ten access points
seen by two wrist wearables, and per-second accelerometer energy summaries
with room-specific activity signatures, gait bursts, and an optional tremor
component. Output is the recording CSV schema with ground-truth room labels.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import data
from .data import RoomVocabulary, RSSI_FLOOR_DB
from .errors import ConfigError, VocabularyError

N_APS = 10
MIN_AP_DISTANCE_M = 0.1  # distance floor when standing on top of an access point

DEFAULT_TX_POWER_DB = -40.0  # at 1 m
DEFAULT_PATH_LOSS_EXPONENT = 2.5
DEFAULT_SHADOWING_SIGMA_DB = 4.0
DEFAULT_RSSI_DROPOUT = 0.05

# per-axis energy split of the activity signature; right wrist slightly weaker
AXIS_WEIGHTS = np.array([1.0, 0.8, 0.6])
RIGHT_WRIST_FACTOR = 0.85
TREMOR_RIGHT_FACTOR = 0.6  # tremor is asymmetric across wrists
GAIT_ENERGY_PER_MPS = 0.12  # g of walking burst per m/s of walking speed


@dataclass
class Floorplan:
    """Rooms with 2-D centers (meters), a symmetric adjacency, and AP sites."""

    rooms: RoomVocabulary
    adjacency: frozenset  # of frozenset({room_a, room_b}) name pairs
    room_centers: dict  # name -> (x, y)
    ap_positions: list  # N_APS (x, y) pairs

    def __post_init__(self):
        names = set(self.rooms.names)
        for pair in self.adjacency:
            if len(pair) != 2 or not pair <= names:
                raise ConfigError(f"adjacency pair {sorted(pair)} not two known rooms")
        if set(self.room_centers) != names:
            raise ConfigError("room_centers must cover exactly the vocabulary rooms")
        if len(self.ap_positions) != N_APS:
            raise ConfigError(f"expected {N_APS} access points, got {len(self.ap_positions)}")
        # connectivity check
        seen = {self.rooms.names[0]}
        frontier = [self.rooms.names[0]]
        while frontier:
            here = frontier.pop()
            for other in self.neighbors(here):
                if other not in seen:
                    seen.add(other)
                    frontier.append(other)
        if seen != names:
            raise ConfigError(f"floorplan not connected; unreachable: {sorted(names - seen)}")

    def neighbors(self, room):
        return sorted(
            next(iter(pair - {room})) for pair in self.adjacency if room in pair
        )

    def are_adjacent(self, a, b):
        return frozenset({a, b}) in self.adjacency

    def forbidden_transition_mask(self, vocabulary):
        """Boolean (n, n) matrix, True where a room change is not an adjacency.

        Staying in a room is always allowed. The vocabulary must match this
        floorplan's rooms.
        """
        if set(vocabulary.names) != set(self.rooms.names):
            raise VocabularyError(
                f"vocabulary rooms {sorted(vocabulary.names)} do not match "
                f"floorplan rooms {sorted(self.rooms.names)}"
            )
        n = len(vocabulary)
        mask = np.ones((n, n), dtype=bool)
        np.fill_diagonal(mask, False)
        for pair in self.adjacency:
            a, b = tuple(pair)
            ia, ib = vocabulary.id_of(a), vocabulary.id_of(b)
            mask[ia, ib] = mask[ib, ia] = False
        return mask

    def to_json_dict(self):
        return {
            "rooms": list(self.rooms.names),
            "adjacency": sorted(sorted(p) for p in self.adjacency),
            "room_centers": {k: list(v) for k, v in self.room_centers.items()},
            "ap_positions": [list(p) for p in self.ap_positions],
        }

    @classmethod
    def from_json_dict(cls, obj):
        try:
            return cls(
                rooms=RoomVocabulary(tuple(obj["rooms"])),
                adjacency=frozenset(frozenset(p) for p in obj["adjacency"]),
                room_centers={k: tuple(v) for k, v in obj["room_centers"].items()},
                ap_positions=[tuple(p) for p in obj["ap_positions"]],
            )
        except KeyError as exc:
            raise ConfigError(f"floorplan: missing key {exc.args[0]!r}")


def default_floorplan():
    """Six rooms around a hallway hub, ten access points.

    Coordinates are plausible placeholders for a small ground floor; nothing
    downstream depends on the exact geometry beyond relative distances.
    """
    rooms = RoomVocabulary.default()
    centers = {
        "kitchen": (2.0, 6.0),
        "living room": (8.0, 6.0),
        "dining room": (5.0, 8.5),
        "hallway": (5.0, 4.0),
        "stairs": (2.5, 1.5),
        "porch": (8.0, 1.5),
    }
    hub_edges = frozenset(
        frozenset({"hallway", other})
        for other in ("kitchen", "living room", "dining room", "stairs", "porch")
    )
    aps = [
        (1.2, 5.4), (2.6, 7.2),      # kitchen
        (7.4, 5.3), (8.8, 7.1),      # living room
        (4.2, 9.0), (6.1, 8.6),      # dining room
        (5.0, 3.2), (5.1, 5.1),      # hallway
        (2.2, 0.9),                  # stairs
        (8.5, 0.8),                  # porch
    ]
    return Floorplan(rooms=rooms, adjacency=hub_edges, room_centers=centers, ap_positions=aps)


@dataclass
class MobilityProfile:
    """Dwell, walking, and wearable-signal characteristics of one subject."""

    mean_dwell_s: dict  # room name -> seconds
    transition_walk_speed_mps: float
    tremor_amplitude_g: float = 0.0
    activity_signature: dict = field(default_factory=dict)  # room -> (amp g, freq Hz)
    accel_noise_g: float = 0.02
    position_jitter_m: float = 0.3

    def __post_init__(self):
        if self.transition_walk_speed_mps <= 0:
            raise ConfigError("walk speed must be > 0")
        if self.tremor_amplitude_g < 0:
            raise ConfigError("tremor amplitude must be >= 0")
        for room, dwell in self.mean_dwell_s.items():
            if dwell <= 0:
                raise ConfigError(f"mean dwell for {room!r} must be > 0")


DEFAULT_SIGNATURES = {
    "kitchen": (0.25, 2.0),
    "living room": (0.08, 0.9),
    "dining room": (0.15, 1.5),
    "hallway": (0.35, 1.8),
    "stairs": (0.45, 2.2),
    "porch": (0.05, 0.7),
}


def healthy_profile():
    return MobilityProfile(
        mean_dwell_s={
            "kitchen": 180.0,
            "living room": 240.0,
            "dining room": 180.0,
            "hallway": 4.0,
            "stairs": 30.0,
            "porch": 45.0,
        },
        transition_walk_speed_mps=1.2,
        tremor_amplitude_g=0.0,
        activity_signature=dict(DEFAULT_SIGNATURES),
    )


def parkinsonian_profile():
    """Longer dwells, slower walking, and a tremor component."""
    return MobilityProfile(
        mean_dwell_s={
            "kitchen": 240.0,
            "living room": 330.0,
            "dining room": 240.0,
            "hallway": 8.0,
            "stairs": 45.0,
            "porch": 60.0,
        },
        transition_walk_speed_mps=0.5,
        tremor_amplitude_g=0.3,
        activity_signature=dict(DEFAULT_SIGNATURES),
    )


@dataclass
class Trajectory:
    """Ground truth: per-second room id, 2-D position, and a walking flag."""

    room_ids: np.ndarray  # (N,) int
    positions: np.ndarray  # (N, 2) meters
    moving: np.ndarray  # (N,) bool, True during a room-to-room walk


def _as_rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def simulate_trajectory(floorplan, profile, duration_s, seed):
    """Semi-Markov walk: exponential dwell, then a uniformly random adjacent
    room reached in ceil(distance/speed) seconds of interpolated walking.

    Seconds spent walking are labeled with whichever endpoint room's center is
    closer, so consecutive labels are always equal or adjacent.
    """
    if duration_s < 1:
        raise ConfigError("duration must be >= 1 second")
    rng = _as_rng(seed)
    rooms = floorplan.rooms
    centers = {r: np.asarray(c, dtype=float) for r, c in floorplan.room_centers.items()}
    room_ids, positions, moving = [], [], []
    current = rooms.names[int(rng.integers(len(rooms)))]

    def dwell_here(room):
        mean = profile.mean_dwell_s.get(room)
        if mean is None:
            raise ConfigError(f"profile has no dwell time for room {room!r}")
        return max(1, int(math.ceil(rng.exponential(mean))))

    while len(room_ids) < duration_s:
        for _ in range(dwell_here(current)):
            jitter = rng.normal(0.0, profile.position_jitter_m, size=2)
            room_ids.append(rooms.id_of(current))
            positions.append(centers[current] + jitter)
            moving.append(False)
            if len(room_ids) >= duration_s:
                break
        if len(room_ids) >= duration_s:
            break
        neighbors = floorplan.neighbors(current)
        target = neighbors[int(rng.integers(len(neighbors)))]
        a, b = centers[current], centers[target]
        distance = float(np.linalg.norm(b - a))
        steps = max(1, int(math.ceil(distance / profile.transition_walk_speed_mps)))
        for s in range(1, steps + 1):
            pos = a + (b - a) * (s / steps)
            here = current if np.linalg.norm(pos - a) <= np.linalg.norm(pos - b) else target
            room_ids.append(rooms.id_of(here))
            positions.append(pos)
            moving.append(True)
            if len(room_ids) >= duration_s:
                break
        current = target
    return Trajectory(
        room_ids=np.array(room_ids[:duration_s]),
        positions=np.array(positions[:duration_s]),
        moving=np.array(moving[:duration_s]),
    )


def synthesize_rssi(
    trajectory,
    floorplan,
    tx_power_db=DEFAULT_TX_POWER_DB,
    path_loss_exponent=DEFAULT_PATH_LOSS_EXPONENT,
    shadowing_sigma_db=DEFAULT_SHADOWING_SIGMA_DB,
    dropout_prob=DEFAULT_RSSI_DROPOUT,
    seed=0,
):
    """Log-distance RSSI per second for both wearables at every access point.

    rssi = tx_power - 10 * exponent * log10(distance) + N(0, sigma), the
    distance floored at 0.1 m, entries dropped (NaN) with ``dropout_prob``,
    and everything clamped to >= -120 dB. Column order: left wrist AP1..AP10
    then right wrist AP1..AP10.
    """
    if shadowing_sigma_db < 0:
        raise ConfigError("shadowing sigma must be >= 0")
    if path_loss_exponent <= 0:
        raise ConfigError("path loss exponent must be > 0")
    if not 0.0 <= dropout_prob <= 1.0:
        raise ConfigError("dropout probability must be in [0, 1]")
    rng = _as_rng(seed)
    aps = np.asarray(floorplan.ap_positions, dtype=float)  # (10, 2)
    dist = np.linalg.norm(trajectory.positions[:, None, :] - aps[None, :, :], axis=2)
    dist = np.maximum(dist, MIN_AP_DISTANCE_M)
    mean = tx_power_db - 10.0 * path_loss_exponent * np.log10(dist)  # (N, 10)
    out = np.concatenate([mean, mean], axis=1)  # left wrist, right wrist
    out = out + rng.normal(0.0, shadowing_sigma_db, size=out.shape)  # exact zeros at sigma=0
    dropped = rng.random(out.shape) < dropout_prob
    out = np.where(dropped, np.nan, np.maximum(out, RSSI_FLOOR_DB))
    return out


def signature_energy(profile, room):
    """Deterministic per-axis energy (6-vector) of a room's activity signature."""
    amp, freq = profile.activity_signature[room]
    phase = np.array([math.cos(freq * (i + 1)) for i in range(3)])
    left = amp / math.sqrt(2.0) * AXIS_WEIGHTS * (1.0 + 0.25 * phase) / 1.25
    return np.concatenate([left, RIGHT_WRIST_FACTOR * left])


def synthesize_accel(trajectory, floorplan, profile, seed=0):
    """Per-second accelerometer energy features (6-vector per second).

    Room signature energy plus a gait burst while walking, an asymmetric
    tremor term (drawn per second, scaled by the profile's amplitude), and
    Gaussian sensor noise; clipped at zero.
    """
    rng = _as_rng(seed)
    n = len(trajectory.room_ids)
    base = np.stack(
        [signature_energy(profile, floorplan.rooms.name_of(r)) for r in trajectory.room_ids]
    )
    gait = np.where(
        trajectory.moving[:, None],
        GAIT_ENERGY_PER_MPS * profile.transition_walk_speed_mps,
        0.0,
    ) * np.concatenate([AXIS_WEIGHTS, AXIS_WEIGHTS])
    tremor_draws = rng.uniform(0.6, 1.0, size=(n, 6))
    tremor_scale = np.concatenate([np.ones(3), np.full(3, TREMOR_RIGHT_FACTOR)])
    tremor = profile.tremor_amplitude_g * tremor_draws * tremor_scale
    noise = rng.normal(0.0, profile.accel_noise_g, size=(n, 6))
    return np.clip(base + gait + tremor + noise, 0.0, None)


@dataclass
class SimConfig:
    """Everything needed to generate one dataset deterministically."""

    floorplan: Floorplan
    profiles: dict  # subject_id -> MobilityProfile
    days: int = 3
    seconds_per_day: int = 7200
    start_timestamp: float = 1_600_000_000.0
    tx_power_db: float = DEFAULT_TX_POWER_DB
    path_loss_exponent: float = DEFAULT_PATH_LOSS_EXPONENT
    shadowing_sigma_db: float = DEFAULT_SHADOWING_SIGMA_DB
    rssi_dropout_prob: float = DEFAULT_RSSI_DROPOUT
    seed: int = 0

    def __post_init__(self):
        if not self.profiles:
            raise ConfigError("at least one subject profile is required")
        if self.days < 1 or self.seconds_per_day < 1:
            raise ConfigError("days and seconds_per_day must be >= 1")


def default_sim_config(n_hc=4, n_pd=4, days=3, seconds_per_day=7200, seed=0):
    profiles = {}
    for i in range(n_hc):
        profiles[f"HC{i + 1:02d}"] = healthy_profile()
    for i in range(n_pd):
        profiles[f"PD{i + 1:02d}"] = parkinsonian_profile()
    return SimConfig(
        floorplan=default_floorplan(),
        profiles=profiles,
        days=days,
        seconds_per_day=seconds_per_day,
        seed=seed,
    )


_PRESETS = {"hc": healthy_profile, "pd": parkinsonian_profile}


def sim_config_from_json(obj):
    """Build a SimConfig from a parsed JSON dict; ConfigError names the field."""
    if not isinstance(obj, dict):
        raise ConfigError("config: expected a JSON object")
    fp_obj = obj.get("floorplan", "default")
    floorplan = default_floorplan() if fp_obj == "default" else Floorplan.from_json_dict(fp_obj)
    subjects = obj.get("subjects")
    if not isinstance(subjects, list) or not subjects:
        raise ConfigError("subjects: expected a non-empty list")
    profiles = {}
    for i, entry in enumerate(subjects):
        where = f"subjects[{i}]"
        if not isinstance(entry, dict) or "id" not in entry:
            raise ConfigError(f"{where}: expected an object with an 'id'")
        preset = entry.get("preset", "hc")
        if preset not in _PRESETS:
            raise ConfigError(f"{where}.preset: unknown preset {preset!r} (use 'hc' or 'pd')")
        profile = _PRESETS[preset]()
        overrides = {}
        for key in ("transition_walk_speed_mps", "tremor_amplitude_g", "accel_noise_g",
                    "position_jitter_m"):
            if key in entry:
                overrides[key] = float(entry[key])
        if "mean_dwell_s" in entry:
            overrides["mean_dwell_s"] = {k: float(v) for k, v in entry["mean_dwell_s"].items()}
        try:
            profile = replace(profile, **overrides)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}")
        if entry["id"] in profiles:
            raise ConfigError(f"{where}.id: duplicate subject {entry['id']!r}")
        profiles[entry["id"]] = profile
    physics = obj.get("physics", {})
    try:
        return SimConfig(
            floorplan=floorplan,
            profiles=profiles,
            days=int(obj.get("days", 3)),
            seconds_per_day=int(obj.get("seconds_per_day", 7200)),
            start_timestamp=float(obj.get("start_timestamp", 1_600_000_000.0)),
            tx_power_db=float(physics.get("tx_power_db", DEFAULT_TX_POWER_DB)),
            path_loss_exponent=float(physics.get("path_loss_exponent", DEFAULT_PATH_LOSS_EXPONENT)),
            shadowing_sigma_db=float(physics.get("shadowing_sigma_db", DEFAULT_SHADOWING_SIGMA_DB)),
            rssi_dropout_prob=float(physics.get("dropout_prob", DEFAULT_RSSI_DROPOUT)),
            seed=int(obj.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: {exc}")


def sim_config_to_json(config):
    return {
        "floorplan": config.floorplan.to_json_dict(),
        "subjects": [
            {
                "id": sid,
                "preset": "pd" if p.tremor_amplitude_g > 0 else "hc",
                "transition_walk_speed_mps": p.transition_walk_speed_mps,
                "tremor_amplitude_g": p.tremor_amplitude_g,
                "mean_dwell_s": p.mean_dwell_s,
            }
            for sid, p in sorted(config.profiles.items())
        ],
        "days": config.days,
        "seconds_per_day": config.seconds_per_day,
        "start_timestamp": config.start_timestamp,
        "physics": {
            "tx_power_db": config.tx_power_db,
            "path_loss_exponent": config.path_loss_exponent,
            "shadowing_sigma_db": config.shadowing_sigma_db,
            "dropout_prob": config.rssi_dropout_prob,
        },
        "seed": config.seed,
    }


def _generate_one(config, subject_index, subject, day):
    fp = config.floorplan
    profile = config.profiles[subject]
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, subject_index, day)))
    traj = simulate_trajectory(fp, profile, config.seconds_per_day, rng)
    rssi = synthesize_rssi(
        traj,
        fp,
        tx_power_db=config.tx_power_db,
        path_loss_exponent=config.path_loss_exponent,
        shadowing_sigma_db=config.shadowing_sigma_db,
        dropout_prob=config.rssi_dropout_prob,
        seed=rng,
    )
    accel = synthesize_accel(traj, fp, profile, seed=rng)
    base = config.start_timestamp + day * 86400.0
    frames = [
        data.SensorFrame(
            timestamp=base + s,
            rssi=rssi[s],
            accel=accel[s],
            room=fp.rooms.name_of(int(traj.room_ids[s])),
            subject_id=subject,
            day_index=day,
        )
        for s in range(config.seconds_per_day)
    ]
    return data.Recording(subject_id=subject, day_index=day, frames=frames)


def generate_recordings(config, jobs=1):
    """All (subject, day) recordings for a SimConfig, fully deterministic.

    Each subject-day derives its own generator from (seed, subject index,
    day), so neither generation order nor worker count changes the result.
    """
    keys = [
        (si, subject, day)
        for si, subject in enumerate(sorted(config.profiles))
        for day in range(config.days)
    ]
    if jobs == 1:
        return [_generate_one(config, *key) for key in keys]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=jobs)(delayed(_generate_one)(config, *key) for key in keys)


def make_dataset(config, out_path):
    """Generate and write the recording CSV; returns the recordings."""
    recordings = generate_recordings(config)
    data.write_recordings(out_path, recordings)
    return recordings
