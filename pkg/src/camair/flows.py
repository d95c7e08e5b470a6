"""Per-file modal-flow features and their hourly aggregation.

Thirteen channels per camera-file: one flow count per road-user class (6),
stationary counts for the five vehicle classes, a congestion index, and the
total flow. Objects are deduplicated by tracked id so a user spanning many
frames counts once. ``flows.csv`` holds one row per observed camera-file;
absent files are zero-filled and flagged only when the hourly tensor is
assembled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datamodel import (
    MODES,
    STATIONARY_MODES,
    HourKey,
    TrackedObject,
    read_csv_rows,
    write_csv,
)
from .errors import ValidationError

FLOW_CHANNELS = tuple(f"flow_{m}" for m in MODES)
STATIONARY_CHANNELS = tuple(f"stationary_{m}" for m in STATIONARY_MODES)
CHANNELS = (*FLOW_CHANNELS, *STATIONARY_CHANNELS, "congestion", "total_flow")
N_CHANNELS = len(CHANNELS)  # 13
_CHANNEL_INDEX = {name: i for i, name in enumerate(CHANNELS)}

DEFAULT_WINDOW_S = 30.0
DEFAULT_RADIUS_M = 2.0
DEFAULT_FILES_PER_HOUR = 11


@dataclass(frozen=True, eq=False)
class FlowChannels:
    """The 13 named channels of one camera-file, in CHANNELS order."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (N_CHANNELS,):
            raise ValidationError(f"expected {N_CHANNELS} channels, got {values.shape}")
        if np.any(values < 0):
            raise ValidationError("flow channels must be non-negative")
        flows = values[:len(FLOW_CHANNELS)]
        if values[_CHANNEL_INDEX["total_flow"]] != flows.sum():
            raise ValidationError("total_flow must equal the sum of the six flows")
        for mode in STATIONARY_MODES:
            if values[_CHANNEL_INDEX[f"stationary_{mode}"]] > values[_CHANNEL_INDEX[f"flow_{mode}"]]:
                raise ValidationError(f"stationary_{mode} exceeds flow_{mode}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __getitem__(self, name: str) -> float:
        return float(self.values[_CHANNEL_INDEX[name]])

    def as_dict(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(CHANNELS, self.values)}


def classify_stationary(track: TrackedObject, window_s: float = DEFAULT_WINDOW_S,
                        radius_m: float = DEFAULT_RADIUS_M) -> bool:
    """True iff some contiguous sample window of duration >= window_s stays
    within radius_m of the window's first position."""
    samples = track.samples
    if len(samples) < 2:
        return False
    t = samples[:, 0]
    xy = samples[:, 1:3]
    for i in range(len(samples)):
        if t[-1] - t[i] < window_s:
            break
        dist = np.hypot(xy[i + 1:, 0] - xy[i, 0], xy[i + 1:, 1] - xy[i, 1])
        outside = np.nonzero(dist > radius_m)[0]
        j = len(samples) - 1 if len(outside) == 0 else i + outside[0]
        if t[j] - t[i] >= window_s:
            return True
    return False


def congestion_index(channels: FlowChannels) -> float:
    """Stationary motor vehicles in the file: cars, buses, and trucks idle in
    traffic contribute to congestion; bicycles and pedestrians do not."""
    return (channels["stationary_car"] + channels["stationary_bus"]
            + channels["stationary_truck"])


def count_modal_flows(tracks: Sequence[TrackedObject],
                      window_s: float = DEFAULT_WINDOW_S,
                      radius_m: float = DEFAULT_RADIUS_M) -> FlowChannels:
    """Count distinct road users per class in one file, plus stationary
    counts, congestion, and total flow."""
    seen: dict[tuple[str, str], TrackedObject] = {}
    for track in tracks:
        seen.setdefault((track.object_id, track.mode), track)
    values = np.zeros(N_CHANNELS)
    for (_, mode), track in seen.items():
        values[_CHANNEL_INDEX[f"flow_{mode}"]] += 1
        if mode in STATIONARY_MODES and classify_stationary(track, window_s, radius_m):
            values[_CHANNEL_INDEX[f"stationary_{mode}"]] += 1
    values[_CHANNEL_INDEX["total_flow"]] = values[:len(FLOW_CHANNELS)].sum()
    channels = FlowChannels(values)
    out = np.array(values)
    out[_CHANNEL_INDEX["congestion"]] = congestion_index(channels)
    return FlowChannels(out)


# ---------------------------------------------------------------------------
# Hourly tensor
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HourlyFlowTensor:
    """One hour of flows: values (N, F, 13) per file increment, plus which
    camera-file cells were never observed."""

    hour: HourKey
    camera_ids: tuple[str, ...]
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        missing = np.asarray(self.missing, dtype=bool)
        n, f = len(self.camera_ids), values.shape[1] if values.ndim == 3 else 0
        if values.shape != (n, f, N_CHANNELS) or missing.shape != (n, f):
            raise ValidationError("hourly tensor shapes disagree")
        values.setflags(write=False)
        missing.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)

    @property
    def files_per_hour(self) -> int:
        return self.values.shape[1]

    @property
    def hourly(self) -> np.ndarray:
        """(N, 13) reduction: channel sums over the hour's file increments."""
        return self.values.sum(axis=1)

    def camera_index(self, camera_id: str) -> int:
        return self.camera_ids.index(camera_id)


def hourly_tensor(hour: HourKey,
                  files_by_camera: Mapping[str, Mapping[int, FlowChannels]],
                  camera_ids: Sequence[str],
                  files_per_hour: int | None = None) -> HourlyFlowTensor:
    """Assemble the (N, F, 13) tensor for one hour.

    Cameras in ``camera_ids`` with no data for a file increment get a
    zero-filled row flagged missing, so F is consistent across cameras.
    """
    observed_max = max((fi for files in files_by_camera.values() for fi in files),
                       default=-1)
    f = files_per_hour if files_per_hour is not None else observed_max + 1
    if observed_max >= f:
        raise ValidationError(
            f"{hour.isoformat()}: file index {observed_max} exceeds F={f}")
    n = len(camera_ids)
    values = np.zeros((n, max(f, 0), N_CHANNELS))
    missing = np.ones((n, max(f, 0)), dtype=bool)
    for ci, camera_id in enumerate(camera_ids):
        for fi, channels in files_by_camera.get(camera_id, {}).items():
            values[ci, fi] = channels.values
            missing[ci, fi] = False
    return HourlyFlowTensor(hour, tuple(camera_ids), values, missing)


# ---------------------------------------------------------------------------
# Traffic-composition ranks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompositionRank:
    """How often one multiset of road-user classes occurred among all files
    containing exactly ``node_count`` users, summed at city scale."""

    node_count: int
    pattern: tuple[str, ...]
    pattern_id: int
    count: int


def composition_ranks(files: Iterable[Sequence[TrackedObject]]) -> list[CompositionRank]:
    """Group every file by its multiset of road-user classes and count
    occurrences; ids are assigned in (node_count, pattern) order."""
    counts: dict[tuple[str, ...], int] = {}
    for tracks in files:
        seen = {(t.object_id, t.mode) for t in tracks}
        pattern = tuple(sorted(mode for _, mode in seen))
        counts[pattern] = counts.get(pattern, 0) + 1
    ranks = []
    ordered = sorted(counts, key=lambda p: (len(p), p))
    for pattern_id, pattern in enumerate(ordered):
        ranks.append(CompositionRank(len(pattern), pattern, pattern_id, counts[pattern]))
    return ranks


# ---------------------------------------------------------------------------
# flows.csv
# ---------------------------------------------------------------------------

FLOWS_HEADER = ("hour", "date", "camera_id", "file_index", *CHANNELS)


def write_flows(path, rows: Iterable[tuple[HourKey, str, int, FlowChannels]],
                comment: str | None = None) -> None:
    write_csv(path, FLOWS_HEADER,
              ([hour.hour, hour.date.isoformat(), camera_id, file_index,
                *channels.values]
               for hour, camera_id, file_index, channels in rows), comment=comment)


def load_flows(path) -> dict[HourKey, dict[str, dict[int, FlowChannels]]]:
    _, rows = read_csv_rows(path)
    out: dict[HourKey, dict[str, dict[int, FlowChannels]]] = {}
    for i, row in enumerate(rows, start=2):
        try:
            hour = HourKey.parse(row["date"], row["hour"])
            camera_id = row["camera_id"]
            file_index = int(row["file_index"])
            values = np.array([float(row[c]) for c in CHANNELS])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{i}: bad flows row ({exc})") from exc
        out.setdefault(hour, {}).setdefault(camera_id, {})[file_index] = FlowChannels(values)
    return out
