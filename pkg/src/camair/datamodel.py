"""Shared domain types, CSV ingestion, and the multi-resolution alignment tree.

Inputs arrive as four CSV files (UTF-8, header row, RFC 4180 quoting):

``tracks.csv``   camera_id,date,hour,file_index,object_id,class,t,x,y
                 (one row per trajectory sample)
``no2.csv``      sensor_id,date,hour,no2_ugm3
``weather.csv``  date plus nine daily weather columns
``sites.csv``    kind,id,x,y plus static feature columns (cameras only)

Readers skip leading ``#`` comment lines so the pipeline's own outputs
(which carry a provenance comment) can be fed back in.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateReadingError,
    UnknownClassError,
    UnknownSiteError,
    ValidationError,
)

MODES = ("car", "bus", "truck", "motorcycle", "bicycle", "person")
STATIONARY_MODES = ("car", "bus", "truck", "motorcycle", "bicycle")
WIND_DIRECTIONS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")

WEATHER_COLUMNS = (
    "wind_speed_mean",
    "wind_direction",
    "wet_hours",
    "sun_hours",
    "rainfall",
    "pressure_mean",
    "humidity_mean",
    "temperature_mean",
    "feels_like_mean",
)


@dataclass(frozen=True, order=True)
class HourKey:
    """One calendar hour: a date plus an hour-of-day in [0, 23]."""

    date: dt.date
    hour: int

    def __post_init__(self):
        if not isinstance(self.date, dt.date):
            raise ValidationError(f"HourKey.date must be a date, got {self.date!r}")
        if not 0 <= self.hour <= 23:
            raise ValidationError(f"hour must be in [0, 23], got {self.hour}")

    @classmethod
    def parse(cls, date_str: str, hour: str | int) -> "HourKey":
        return cls(dt.date.fromisoformat(date_str), int(hour))

    def isoformat(self) -> str:
        return f"{self.date.isoformat()}T{self.hour:02d}"


@dataclass(frozen=True)
class CameraSite:
    """A camera location in projected planar meters with its static covariates."""

    camera_id: str
    x: float
    y: float
    static_features: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"camera {self.camera_id}: non-finite position")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class SensorSite:
    """An NO2 sensor location; need not coincide with any camera."""

    sensor_id: str
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"sensor {self.sensor_id}: non-finite position")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True, eq=False)
class TrackedObject:
    """One road user inside one video-file increment.

    ``samples`` is a read-only float array of shape (k, 3) holding
    (t seconds, x, y); time must be strictly increasing.
    """

    object_id: str
    mode: str
    samples: np.ndarray
    file_index: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise UnknownClassError(
                f"object {self.object_id}: class {self.mode!r} not one of {MODES}")
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 3 or samples.shape[0] < 1:
            raise ValidationError(
                f"object {self.object_id}: samples must be (k, 3) with k >= 1")
        if not np.all(np.isfinite(samples)):
            raise ValidationError(f"object {self.object_id}: non-finite sample")
        if np.any(np.diff(samples[:, 0]) <= 0):
            raise ValidationError(
                f"object {self.object_id}: sample times must strictly increase")
        if self.file_index < 0:
            raise ValidationError(f"object {self.object_id}: negative file_index")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def with_samples(self, samples: np.ndarray) -> "TrackedObject":
        return TrackedObject(self.object_id, self.mode, samples, self.file_index)


@dataclass(frozen=True)
class WeatherDay:
    """Daily weather summary: nine variables describing one calendar day."""

    date: dt.date
    wind_speed_mean: float
    wind_direction: str
    wet_hours: float
    sun_hours: float
    rainfall: float
    pressure_mean: float
    humidity_mean: float
    temperature_mean: float
    feels_like_mean: float

    def __post_init__(self):
        if self.wind_direction not in WIND_DIRECTIONS:
            raise ValidationError(
                f"wind_direction {self.wind_direction!r} not in {WIND_DIRECTIONS}")
        if not 0 <= self.wet_hours <= 24 or not 0 <= self.sun_hours <= 24:
            raise ValidationError("wet_hours and sun_hours must lie in [0, 24]")
        if self.rainfall < 0:
            raise ValidationError("rainfall must be >= 0")


@dataclass(frozen=True)
class No2Reading:
    sensor_id: str
    hour: HourKey
    value: float


@dataclass(frozen=True)
class TrackBatch:
    """All tracked objects seen by one camera during one hour."""

    camera_id: str
    hour: HourKey
    tracks: tuple[TrackedObject, ...]


class Sites:
    """Registry of declared camera and sensor sites."""

    def __init__(self, cameras: Iterable[CameraSite], sensors: Iterable[SensorSite]):
        self.cameras: dict[str, CameraSite] = {}
        self.sensors: dict[str, SensorSite] = {}
        for cam in cameras:
            if cam.camera_id in self.cameras:
                raise ValidationError(f"duplicate camera id {cam.camera_id!r}")
            self.cameras[cam.camera_id] = cam
        for sen in sensors:
            if sen.sensor_id in self.sensors:
                raise ValidationError(f"duplicate sensor id {sen.sensor_id!r}")
            self.sensors[sen.sensor_id] = sen

    def camera_ids(self) -> list[str]:
        return sorted(self.cameras)

    def sensor_ids(self) -> list[str]:
        return sorted(self.sensors)


# ---------------------------------------------------------------------------
# Alignment tree
# ---------------------------------------------------------------------------

class AlignmentTree:
    """Hierarchical index HourKey -> site -> file_index -> records.

    Camera leaves are (hour, camera, file) track lists; sensor leaves are
    (hour, sensor) NO2 values. Weather hangs off the tree at day resolution.
    Supports insertion, search over hour ranges, and re-parenting a site
    branch to a different hour.
    """

    def __init__(self):
        self._cameras: dict[HourKey, dict[str, dict[int, list[TrackedObject]]]] = {}
        self._sensors: dict[HourKey, dict[str, float]] = {}
        self.weather: dict[dt.date, WeatherDay] = {}

    # -- construction -------------------------------------------------

    def insert_tracks(self, hour: HourKey, camera_id: str, file_index: int,
                      tracks: Sequence[TrackedObject]) -> None:
        files = self._cameras.setdefault(hour, {}).setdefault(camera_id, {})
        files.setdefault(file_index, []).extend(tracks)

    def insert_reading(self, hour: HourKey, sensor_id: str, value: float) -> None:
        readings = self._sensors.setdefault(hour, {})
        if sensor_id in readings:
            raise DuplicateReadingError(
                f"two NO2 values for sensor {sensor_id!r} at {hour.isoformat()}")
        readings[sensor_id] = float(value)

    def set_weather(self, day: WeatherDay) -> None:
        self.weather[day.date] = day

    def move_branch(self, site_id: str, src: HourKey, dst: HourKey) -> None:
        """Re-parent one site's branch from hour ``src`` to hour ``dst``."""
        if site_id in self._cameras.get(src, {}):
            branch = self._cameras[src].pop(site_id)
            if not self._cameras[src]:
                del self._cameras[src]
            dst_files = self._cameras.setdefault(dst, {}).setdefault(site_id, {})
            for file_index, tracks in branch.items():
                dst_files.setdefault(file_index, []).extend(tracks)
        elif site_id in self._sensors.get(src, {}):
            value = self._sensors[src].pop(site_id)
            if not self._sensors[src]:
                del self._sensors[src]
            self.insert_reading(dst, site_id, value)
        else:
            raise UnknownSiteError(
                f"no branch for site {site_id!r} at {src.isoformat()}")

    # -- queries --------------------------------------------------------

    def hours(self) -> list[HourKey]:
        return sorted(set(self._cameras) | set(self._sensors))

    def cameras_at(self, hour: HourKey) -> dict[str, dict[int, list[TrackedObject]]]:
        return self._cameras.get(hour, {})

    def sensors_at(self, hour: HourKey) -> dict[str, float]:
        return self._sensors.get(hour, {})

    def camera_leaves(self) -> Iterator[tuple[HourKey, str, int, list[TrackedObject]]]:
        for hour in sorted(self._cameras):
            for camera_id in sorted(self._cameras[hour]):
                for file_index in sorted(self._cameras[hour][camera_id]):
                    yield hour, camera_id, file_index, self._cameras[hour][camera_id][file_index]

    def sensor_leaves(self) -> Iterator[tuple[HourKey, str, float]]:
        for hour in sorted(self._sensors):
            for sensor_id in sorted(self._sensors[hour]):
                yield hour, sensor_id, self._sensors[hour][sensor_id]

    def query(self, start: HourKey | None = None, end: HourKey | None = None,
              site_id: str | None = None):
        """Union of all leaves whose hour lies in [start, end].

        Narrowing the range (or fixing a site) never enlarges the result.
        """
        out = []
        for hour, camera_id, file_index, tracks in self.camera_leaves():
            if start is not None and hour < start:
                continue
            if end is not None and hour > end:
                continue
            if site_id is not None and camera_id != site_id:
                continue
            out.append((hour, camera_id, file_index, tracks))
        for hour, sensor_id, value in self.sensor_leaves():
            if start is not None and hour < start:
                continue
            if end is not None and hour > end:
                continue
            if site_id is not None and sensor_id != site_id:
                continue
            out.append((hour, sensor_id, None, value))
        return out

    # -- canonical form ---------------------------------------------------

    def to_canonical(self) -> dict:
        hours = []
        for hour in self.hours():
            cameras = {}
            for camera_id, files in sorted(self._cameras.get(hour, {}).items()):
                cameras[camera_id] = {
                    str(fi): [_track_to_json(t) for t in sorted(
                        tracks, key=lambda t: t.object_id)]
                    for fi, tracks in sorted(files.items())
                }
            hours.append({
                "date": hour.date.isoformat(),
                "hour": hour.hour,
                "cameras": cameras,
                "sensors": dict(sorted(self._sensors.get(hour, {}).items())),
            })
        weather = {
            day.isoformat(): _weather_to_json(w)
            for day, w in sorted(self.weather.items())
        }
        return {"format": "camair-tree-v1", "hours": hours, "weather": weather}

    def serialize(self) -> str:
        return json.dumps(self.to_canonical(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def parse(cls, text: str) -> "AlignmentTree":
        doc = json.loads(text)
        if doc.get("format") != "camair-tree-v1":
            raise ValidationError(f"unknown tree format {doc.get('format')!r}")
        tree = cls()
        for node in doc["hours"]:
            hour = HourKey.parse(node["date"], node["hour"])
            for camera_id, files in node["cameras"].items():
                for fi, tracks in files.items():
                    tree.insert_tracks(hour, camera_id, int(fi),
                                       [_track_from_json(t) for t in tracks])
            for sensor_id, value in node["sensors"].items():
                tree.insert_reading(hour, sensor_id, value)
        for day, wjson in doc["weather"].items():
            tree.set_weather(_weather_from_json(day, wjson))
        return tree

    def __eq__(self, other):
        if not isinstance(other, AlignmentTree):
            return NotImplemented
        return self.to_canonical() == other.to_canonical()


def _track_to_json(t: TrackedObject) -> dict:
    return {
        "object_id": t.object_id,
        "class": t.mode,
        "file_index": t.file_index,
        "samples": [[float(v) for v in row] for row in t.samples],
    }


def _track_from_json(doc: dict) -> TrackedObject:
    return TrackedObject(doc["object_id"], doc["class"],
                         np.asarray(doc["samples"], dtype=float), doc["file_index"])


def _weather_to_json(w: WeatherDay) -> dict:
    return {name: getattr(w, name) for name in WEATHER_COLUMNS}


def _weather_from_json(day: str, doc: dict) -> WeatherDay:
    return WeatherDay(dt.date.fromisoformat(day), **doc)


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------

def align_hourly(track_batches: Iterable[TrackBatch],
                 no2: Iterable[No2Reading],
                 weather: Mapping[dt.date, WeatherDay],
                 sites: Sites) -> AlignmentTree:
    """Align all modalities onto the hours for which NO2 readings exist.

    NO2 availability is the master clock: camera branches for hours with no
    reading are dropped. Weather joins at day resolution. Raises
    UnknownSiteError for undeclared sites and DuplicateReadingError for
    repeated sensor-hour values.
    """
    tree = AlignmentTree()
    no2 = list(no2)
    for reading in no2:
        if reading.sensor_id not in sites.sensors:
            raise UnknownSiteError(f"undeclared sensor {reading.sensor_id!r}")
        tree.insert_reading(reading.hour, reading.sensor_id, reading.value)
    if not no2:
        warnings.warn("no NO2 readings: alignment tree is empty", stacklevel=2)
        return tree
    kept_hours = {reading.hour for reading in no2}
    for batch in track_batches:
        if batch.camera_id not in sites.cameras:
            raise UnknownSiteError(f"undeclared camera {batch.camera_id!r}")
        if batch.hour not in kept_hours:
            continue
        by_file: dict[int, list[TrackedObject]] = {}
        for track in batch.tracks:
            by_file.setdefault(track.file_index, []).append(track)
        for file_index, tracks in by_file.items():
            tree.insert_tracks(batch.hour, batch.camera_id, file_index, tracks)
    for day in sorted({hour.date for hour in kept_hours}):
        if day in weather:
            tree.set_weather(weather[day])
    return tree


# ---------------------------------------------------------------------------
# CSV plumbing
# ---------------------------------------------------------------------------

def read_csv_rows(path) -> tuple[list[str], list[dict[str, str]]]:
    """Read a CSV with a header row, skipping leading ``#`` comment lines."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None:
        raise ValidationError(f"{path}: empty file")
    return list(reader.fieldnames), list(reader)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence],
              comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def _format_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _require(row: dict, column: str, path, line: int) -> str:
    value = row.get(column)
    if value is None or value == "":
        raise ValidationError(f"{path}:{line}: missing column {column!r}")
    return value


def load_sites(path) -> Sites:
    header, rows = read_csv_rows(path)
    static_cols = [c for c in header if c not in ("kind", "id", "x", "y")]
    cameras, sensors = [], []
    for i, row in enumerate(rows, start=2):
        kind = _require(row, "kind", path, i)
        sid = _require(row, "id", path, i)
        x = float(_require(row, "x", path, i))
        y = float(_require(row, "y", path, i))
        if kind == "camera":
            feats = {}
            for col in static_cols:
                raw = row.get(col, "")
                if raw == "":
                    continue
                try:
                    feats[col] = float(raw)
                except ValueError:
                    feats[col] = raw
            cameras.append(CameraSite(sid, x, y, feats))
        elif kind == "sensor":
            sensors.append(SensorSite(sid, x, y))
        else:
            raise ValidationError(f"{path}:{i}: kind must be camera or sensor, got {kind!r}")
    return Sites(cameras, sensors)


def load_tracks(path, sites: Sites | None = None) -> list[TrackBatch]:
    header, rows = read_csv_rows(path)
    grouped: dict[tuple, dict[tuple, list[tuple]]] = {}
    for i, row in enumerate(rows, start=2):
        camera_id = _require(row, "camera_id", path, i)
        if sites is not None and camera_id not in sites.cameras:
            raise UnknownSiteError(f"{path}:{i}: undeclared camera {camera_id!r}")
        hour = HourKey.parse(_require(row, "date", path, i), _require(row, "hour", path, i))
        key = (camera_id, hour)
        obj_key = (int(_require(row, "file_index", path, i)),
                   _require(row, "object_id", path, i),
                   _require(row, "class", path, i))
        if obj_key[2] not in MODES:
            raise UnknownClassError(f"{path}:{i}: unknown class {obj_key[2]!r}")
        sample = (float(_require(row, "t", path, i)),
                  float(_require(row, "x", path, i)),
                  float(_require(row, "y", path, i)))
        grouped.setdefault(key, {}).setdefault(obj_key, []).append(sample)
    batches = []
    for (camera_id, hour), objects in sorted(grouped.items()):
        tracks = []
        for (file_index, object_id, mode), samples in sorted(objects.items()):
            samples.sort(key=lambda s: s[0])
            tracks.append(TrackedObject(object_id, mode,
                                        np.asarray(samples, dtype=float), file_index))
        batches.append(TrackBatch(camera_id, hour, tuple(tracks)))
    return batches


def load_no2(path, sites: Sites | None = None) -> list[No2Reading]:
    _, rows = read_csv_rows(path)
    readings = []
    for i, row in enumerate(rows, start=2):
        sensor_id = _require(row, "sensor_id", path, i)
        if sites is not None and sensor_id not in sites.sensors:
            raise UnknownSiteError(f"{path}:{i}: undeclared sensor {sensor_id!r}")
        hour = HourKey.parse(_require(row, "date", path, i), _require(row, "hour", path, i))
        readings.append(No2Reading(sensor_id, hour, float(_require(row, "no2_ugm3", path, i))))
    return readings


def load_weather(path) -> dict[dt.date, WeatherDay]:
    _, rows = read_csv_rows(path)
    out: dict[dt.date, WeatherDay] = {}
    for i, row in enumerate(rows, start=2):
        day = dt.date.fromisoformat(_require(row, "date", path, i))
        if day in out:
            raise ValidationError(f"{path}:{i}: duplicate weather for {day}")
        kwargs = {}
        for col in WEATHER_COLUMNS:
            raw = _require(row, col, path, i)
            kwargs[col] = raw if col == "wind_direction" else float(raw)
        out[day] = WeatherDay(day, **kwargs)
    return out


def write_tracks(path, batches: Iterable[TrackBatch], comment: str | None = None) -> None:
    header = ["camera_id", "date", "hour", "file_index", "object_id", "class", "t", "x", "y"]

    def rows():
        for batch in batches:
            for track in batch.tracks:
                for t, x, y in track.samples:
                    yield [batch.camera_id, batch.hour.date.isoformat(), batch.hour.hour,
                           track.file_index, track.object_id, track.mode, t, x, y]

    write_csv(path, header, rows(), comment=comment)


def write_no2(path, readings: Iterable[No2Reading], comment: str | None = None) -> None:
    write_csv(path, ["sensor_id", "date", "hour", "no2_ugm3"],
              ([r.sensor_id, r.hour.date.isoformat(), r.hour.hour, r.value]
               for r in readings), comment=comment)


def write_weather(path, days: Iterable[WeatherDay], comment: str | None = None) -> None:
    header = ["date", *WEATHER_COLUMNS]
    write_csv(path, header,
              ([d.date.isoformat()] + [getattr(d, c) for c in WEATHER_COLUMNS]
               for d in days), comment=comment)


def write_sites(path, sites: Sites, comment: str | None = None) -> None:
    static_cols = sorted({k for cam in sites.cameras.values() for k in cam.static_features})
    header = ["kind", "id", "x", "y", *static_cols]

    def rows():
        for cam_id in sites.camera_ids():
            cam = sites.cameras[cam_id]
            yield ["camera", cam_id, cam.x, cam.y,
                   *[cam.static_features.get(c, "") for c in static_cols]]
        for sen_id in sites.sensor_ids():
            sen = sites.sensors[sen_id]
            yield ["sensor", sen_id, sen.x, sen.y, *[""] * len(static_cols)]

    write_csv(path, header, rows(), comment=comment)
