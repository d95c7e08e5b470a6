"""Deterministic synthetic world with planted, recoverable ground truth.

A scenario declares the camera/sensor layout, per-mode traffic intensities,
and the generative law for NO2: instantaneous channel effects (beta),
lagged effects per channel (the Granger targets), a spatial-lag mixing
coefficient rho over the sensor KNN graph, daily weather effects, and a
within-hour recency term that only the path signature can see from hourly
aggregates. ``manifest.json`` records everything needed to recompute the
noise-free NO2 expectation from the emitted CSVs; ``expected_no2`` is that
oracle.

All randomness flows through named Philox streams (64-bit counter-based),
so a bundle is byte-identical across runs and platforms for a given seed.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import flows as flows_mod
from .datamodel import (
    MODES,
    STATIONARY_MODES,
    WIND_DIRECTIONS,
    CameraSite,
    HourKey,
    No2Reading,
    SensorSite,
    Sites,
    TrackBatch,
    TrackedObject,
    WeatherDay,
    load_tracks,
    load_weather,
    write_no2,
    write_sites,
    write_tracks,
    write_weather,
)
from .errors import InfeasibleScenarioError, ValidationError
from .geometry import PointPair, load_calibrations, project_track, write_calibrations
from .rng import stream
from .spatial import knn_weights

FILE_DURATION_S = 240.0
PIXEL_SCALE = 0.05  # meters per pixel in the synthetic calibration

_SPEED = {"car": 8.0, "bus": 7.0, "truck": 7.0, "motorcycle": 9.0,
          "bicycle": 4.0, "person": 1.4}
_BASE_RATE = {"car": 3.0, "bus": 1.0, "truck": 1.0, "motorcycle": 0.5,
              "bicycle": 0.7, "person": 2}
_STATIONARY_P = {"car": 0.35, "bus": 0.25, "truck": 0.2, "motorcycle": 0.1,
                 "bicycle": 0.1}

STATIC_FEATURES = ("maxspeed", "two_directional", "ulez", "proximity_industry",
                   "landuse_farmland", "landuse_forest")
STREET_TYPES = ("residential", "primary", "trunk")


@dataclass
class Scenario:
    n_cameras: int = 6
    n_sensors: int = 3
    hours: int = 30
    files_per_hour: int = 6
    start_date: str = "2021-03-01"
    alpha: float = 30.0
    beta: dict = field(default_factory=lambda: {"flow_car": 0.4, "congestion": 0.8})
    lagged_effects: dict = field(default_factory=lambda: {"flow_truck": (3, 1.5)})
    static_beta: dict = field(default_factory=lambda: {"ulez": 2.0,
                                                       "proximity_industry": 1.5})
    weather_beta: dict = field(default_factory=lambda: {
        "wind_speed_mean": -0.6, "rainfall": 4.0, "temperature_mean": -0.3,
        "sun_hours": 0.4, "wet_hours": -0.8})
    wind_direction_effect: dict = field(default_factory=lambda: {"SW": 3.0, "NE": -4.0})
    rho: float = 0.0
    noise_sigma: float = 1.0
    recency_weight: float = 0.0
    sensor_influence_k: int = 3
    sensor_knn_k: int = 2
    traffic_scale: float = 1.0
    track_detail: bool = True

    def validate(self) -> None:
        if self.n_cameras < 1 or self.n_sensors < 1 or self.hours < 1:
            raise InfeasibleScenarioError("need at least one camera, sensor, and hour")
        if self.files_per_hour < 2:
            raise InfeasibleScenarioError("files_per_hour must be >= 2")
        for channel, (lag, _) in self.lagged_effects.items():
            if lag >= self.hours:
                raise InfeasibleScenarioError(
                    f"lag {lag} for {channel!r} >= hours {self.hours}")
            if lag < 0:
                raise InfeasibleScenarioError(f"negative lag for {channel!r}")
        if abs(self.rho) >= 1:
            raise InfeasibleScenarioError(f"|rho| must be < 1, got {self.rho}")
        if self.rho != 0.0 and self.n_sensors < 2:
            raise InfeasibleScenarioError("spatial mixing needs >= 2 sensors")
        known = set(flows_mod.CHANNELS)
        for channel in list(self.beta) + list(self.lagged_effects):
            if channel not in known:
                raise InfeasibleScenarioError(f"unknown channel {channel!r}")


def _hour_keys(scenario: Scenario) -> list[HourKey]:
    start = dt.date.fromisoformat(scenario.start_date)
    return [HourKey(start + dt.timedelta(days=idx // 24), idx % 24)
            for idx in range(scenario.hours)]


def _diurnal(hour: int) -> float:
    peak = (math.exp(-((hour - 8.5) / 2.5) ** 2)
            + math.exp(-((hour - 17.5) / 2.5) ** 2))
    return 0.6 + 1.2 * peak


def _make_sites(scenario: Scenario, seed: int) -> Sites:
    rng = stream(seed, "sites")
    cameras = []
    for i in range(scenario.n_cameras):
        x, y = rng.uniform(0.0, 3000.0, size=2)
        feats = {
            "maxspeed": float(rng.choice([20.0, 30.0, 40.0])),
            "street_type": str(rng.choice(STREET_TYPES)),
            "two_directional": float(rng.integers(0, 2)),
            "ulez": float(rng.integers(0, 2)),
            "proximity_industry": float(rng.integers(0, 2)),
            "landuse_farmland": float(rng.integers(0, 2)),
            "landuse_forest": float(rng.integers(0, 2)),
        }
        cameras.append(CameraSite(f"cam{i:03d}", float(x), float(y), feats))
    sensors = []
    for i in range(scenario.n_sensors):
        x, y = rng.uniform(300.0, 2700.0, size=2)
        sensors.append(SensorSite(f"sen{i:03d}", float(x), float(y)))
    return Sites(cameras, sensors)


def _make_weather(scenario: Scenario, seed: int) -> dict[dt.date, WeatherDay]:
    rng = stream(seed, "weather")
    days = sorted({hk.date for hk in _hour_keys(scenario)})
    out = {}
    for day in days:
        temperature = float(rng.normal(12.0, 5.0))
        wind = float(rng.uniform(2.0, 10.0))
        out[day] = WeatherDay(
            date=day,
            wind_speed_mean=wind,
            wind_direction=str(rng.choice(WIND_DIRECTIONS)),
            wet_hours=float(rng.uniform(0.0, 12.0)),
            sun_hours=float(rng.uniform(0.0, 12.0)),
            rainfall=float(rng.exponential(2.0)),
            pressure_mean=float(rng.normal(1013.0, 8.0)),
            humidity_mean=float(rng.uniform(50.0, 95.0)),
            temperature_mean=temperature,
            feels_like_mean=temperature - 0.2 * wind,
        )
    return out


def _plan_counts(scenario: Scenario, seed: int):
    """Per (camera, hour, file): flow and stationary counts per mode."""
    n, h, f = scenario.n_cameras, scenario.hours, scenario.files_per_hour
    counts = np.zeros((n, h, f, len(MODES)), dtype=int)
    stationary = np.zeros((n, h, f, len(STATIONARY_MODES)), dtype=int)
    hour_keys = _hour_keys(scenario)
    for ci in range(n):
        for hi, hk in enumerate(hour_keys):
            rng = stream(seed, "counts", ci, hi)
            level = _diurnal(hk.hour) * scenario.traffic_scale
            for mi, mode in enumerate(MODES):
                if mode == "person":
                    counts[ci, hi, :, mi] = int(round(_BASE_RATE[mode]
                                                      * scenario.traffic_scale))
                    continue
                lam = _BASE_RATE[mode] * level
                counts[ci, hi, :, mi] = rng.poisson(lam, size=f)
            for si, mode in enumerate(STATIONARY_MODES):
                mi = MODES.index(mode)
                p = _STATIONARY_P[mode] * min(1.0, _diurnal(hk.hour) / 1.8)
                stationary[ci, hi, :, si] = rng.binomial(counts[ci, hi, :, mi], p)
    return counts, stationary


def _channel_tensor(counts: np.ndarray, stationary: np.ndarray) -> np.ndarray:
    """(cam, hour, file, 13) channel values implied by the planted counts."""
    n, h, f, _ = counts.shape
    channels = np.zeros((n, h, f, flows_mod.N_CHANNELS))
    channels[..., :len(MODES)] = counts
    channels[..., len(MODES):len(MODES) + len(STATIONARY_MODES)] = stationary
    idx = {name: i for i, name in enumerate(flows_mod.CHANNELS)}
    channels[..., idx["congestion"]] = (
        stationary[..., STATIONARY_MODES.index("car")]
        + stationary[..., STATIONARY_MODES.index("bus")]
        + stationary[..., STATIONARY_MODES.index("truck")])
    channels[..., idx["total_flow"]] = counts.sum(axis=-1)
    return channels


def _influence_lists(sites: Sites, k: int) -> dict[str, list[str]]:
    cam_ids = sites.camera_ids()
    cams = np.array([[sites.cameras[c].x, sites.cameras[c].y] for c in cam_ids])
    out = {}
    for sid in sites.sensor_ids():
        s = sites.sensors[sid]
        d = np.hypot(cams[:, 0] - s.x, cams[:, 1] - s.y)
        order = sorted(range(len(cam_ids)), key=lambda i: (d[i], cam_ids[i]))
        out[sid] = [cam_ids[i] for i in order[:min(k, len(cam_ids))]]
    return out


def _expected_series(channels: np.ndarray, cam_ids: list[str], sites: Sites,
                     weather: dict[dt.date, WeatherDay], manifest: dict) -> np.ndarray:
    """Noise-free NO2 (sensors x hours) implied by channel tensor + manifest."""
    scenario = manifest["scenario"]
    hour_keys = [HourKey.parse(d, h) for d, h in manifest["hours"]]
    sensor_ids = manifest["sensor_order"]
    influence = manifest["sensor_influence"]
    cam_index = {c: i for i, c in enumerate(cam_ids)}
    ch_index = {name: i for i, name in enumerate(flows_mod.CHANNELS)}
    hourly = channels.sum(axis=2)  # (cam, hour, 13)

    f = channels.shape[2]
    recency_w = np.arange(f) / max(f - 1, 1)
    truck = channels[..., ch_index["flow_truck"]]
    cam_recency = (truck * recency_w).sum(axis=2)  # (cam, hour)

    m, h = len(sensor_ids), len(hour_keys)
    feat = np.zeros((m, h, flows_mod.N_CHANNELS))
    rec_feat = np.zeros((m, h))
    static_feat = {name: np.zeros(m) for name in manifest["static_beta"]}
    for si, sid in enumerate(sensor_ids):
        rows = [cam_index[c] for c in influence[sid]]
        feat[si] = hourly[rows].mean(axis=0)
        rec_feat[si] = cam_recency[rows].mean(axis=0)
        for name in static_feat:
            static_feat[name][si] = float(np.mean(
                [float(sites.cameras[c].static_features.get(name, 0.0))
                 for c in influence[sid]]))

    base = np.full((m, h), float(manifest["alpha"]))
    for channel, coeff in manifest["beta"].items():
        base += coeff * feat[:, :, ch_index[channel]]
    for channel, (lag, coeff) in manifest["lagged_effects"].items():
        lagged = np.zeros((m, h))
        if lag < h:
            lagged[:, lag:] = feat[:, :h - lag, ch_index[channel]]
        base += coeff * lagged
    for name, coeff in manifest["static_beta"].items():
        base += coeff * static_feat[name][:, None]
    base += manifest["recency_weight"] * rec_feat
    for hi, hk in enumerate(hour_keys):
        day = weather[hk.date]
        for name, coeff in manifest["weather_beta"].items():
            base[:, hi] += coeff * float(getattr(day, name))
        base[:, hi] += float(manifest["wind_direction_effect"].get(
            day.wind_direction, 0.0))

    rho = float(manifest["rho"])
    if rho != 0.0:
        positions = np.array([[sites.sensors[s].x, sites.sensors[s].y]
                              for s in sensor_ids])
        w = knn_weights(positions, manifest["sensor_knn_k"], standardize=True,
                        site_ids=sensor_ids)
        mix = np.eye(m) - rho * w.to_dense()
        base = np.linalg.solve(mix, base)
    del scenario
    return base


def _make_tracks(scenario: Scenario, seed: int, sites: Sites,
                 counts: np.ndarray, stationary: np.ndarray
                 ) -> tuple[list[TrackBatch], dict[str, list[PointPair]]]:
    hour_keys = _hour_keys(scenario)
    cam_ids = sites.camera_ids()
    calib: dict[str, list[PointPair]] = {}
    batches = []
    for ci, cam_id in enumerate(cam_ids):
        cam = sites.cameras[cam_id]
        offset = np.array([cam.x - 25.0, cam.y - 25.0])
        corners = [(0.0, 0.0), (1000.0, 0.0), (1000.0, 1000.0), (0.0, 1000.0)]
        calib[cam_id] = [
            PointPair((px, py),
                      (offset[0] + PIXEL_SCALE * px, offset[1] + PIXEL_SCALE * py))
            for px, py in corners
        ]
        for hi, hk in enumerate(hour_keys):
            rng = stream(seed, "tracks", ci, hi)
            tracks = []
            for fi in range(scenario.files_per_hour):
                seq = 0
                for mi, mode in enumerate(MODES):
                    total = int(counts[ci, hi, fi, mi])
                    n_stat = (int(stationary[ci, hi, fi, STATIONARY_MODES.index(mode)])
                              if mode in STATIONARY_MODES else 0)
                    for j in range(total):
                        world = _world_track(rng, cam, mode, is_stationary=j < n_stat)
                        pixel = np.array(world)
                        pixel[:, 1] = (world[:, 1] - offset[0]) / PIXEL_SCALE
                        pixel[:, 2] = (world[:, 2] - offset[1]) / PIXEL_SCALE
                        tracks.append(TrackedObject(f"o{fi}_{seq}", mode, pixel, fi))
                        seq += 1
            batches.append(TrackBatch(cam_id, hk, tuple(tracks)))
    return batches, calib


def _world_track(rng: np.random.Generator, cam: CameraSite, mode: str,
                 is_stationary: bool) -> np.ndarray:
    anchor = np.array([cam.x, cam.y]) + rng.uniform(-15.0, 15.0, size=2)
    if is_stationary:
        # spans 40 s inside a 0.5 m jitter box: always satisfies the
        # 30 s / 2 m stationary rule after projection
        times = np.arange(0.0, 41.0, 8.0)
        t0 = rng.uniform(0.0, FILE_DURATION_S - times[-1])
        jitter = rng.uniform(-0.5, 0.5, size=(len(times), 2))
        samples = np.column_stack([t0 + times, anchor + jitter])
        return samples
    # short pass-through: total duration < 30 s, so never stationary
    duration = rng.uniform(5.0, 10.0)
    n_samples = 6
    times = np.linspace(0.0, duration, n_samples)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    velocity = _SPEED[mode] * np.array([math.cos(heading), math.sin(heading)])
    t0 = rng.uniform(0.0, FILE_DURATION_S - duration)
    pos = anchor[None, :] + times[:, None] * velocity[None, :]
    return np.column_stack([t0 + times, pos])


def generate(scenario: Scenario, seed: int, workdir) -> dict:
    """Write the full CSV bundle plus manifest.json; returns the manifest."""
    scenario.validate()
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    comment = f"camair synth seed={seed}"

    sites = _make_sites(scenario, seed)
    weather = _make_weather(scenario, seed)
    counts, stationary = _plan_counts(scenario, seed)
    channels = _channel_tensor(counts, stationary)
    cam_ids = sites.camera_ids()
    hour_keys = _hour_keys(scenario)

    manifest = {
        "format": "camair-synth-v1",
        "seed": seed,
        "scenario": asdict(scenario),
        "alpha": scenario.alpha,
        "beta": dict(scenario.beta),
        "lagged_effects": {k: [int(v[0]), float(v[1])]
                           for k, v in scenario.lagged_effects.items()},
        "static_beta": dict(scenario.static_beta),
        "weather_beta": dict(scenario.weather_beta),
        "wind_direction_effect": dict(scenario.wind_direction_effect),
        "rho": scenario.rho,
        "noise_sigma": scenario.noise_sigma,
        "recency_weight": scenario.recency_weight,
        "sensor_knn_k": min(scenario.sensor_knn_k, max(scenario.n_sensors - 1, 1)),
        "camera_order": cam_ids,
        "sensor_order": sites.sensor_ids(),
        "sensor_influence": _influence_lists(sites, scenario.sensor_influence_k),
        "hours": [[hk.date.isoformat(), hk.hour] for hk in hour_keys],
        "files_per_hour": scenario.files_per_hour,
        "file_duration_s": FILE_DURATION_S,
    }

    expected = _expected_series(channels, cam_ids, sites, weather, manifest)
    noise = stream(seed, "noise").normal(0.0, scenario.noise_sigma, size=expected.shape) \
        if scenario.noise_sigma > 0 else np.zeros_like(expected)
    no2 = expected + noise
    clipped = int(np.count_nonzero(no2 < 0.0))
    no2 = np.maximum(no2, 0.0)
    manifest["clipped"] = clipped

    write_sites(workdir / "sites.csv", sites, comment=comment)
    write_weather(workdir / "weather.csv", sorted(weather.values(), key=lambda w: w.date),
                  comment=comment)
    readings = [No2Reading(sid, hk, float(no2[si, hi]))
                for si, sid in enumerate(manifest["sensor_order"])
                for hi, hk in enumerate(hour_keys)]
    write_no2(workdir / "no2.csv", readings, comment=comment)

    if scenario.track_detail:
        batches, calib = _make_tracks(scenario, seed, sites, counts, stationary)
        write_tracks(workdir / "tracks.csv", batches, comment=comment)
        write_calibrations(workdir / "calib.csv", calib, comment=comment)
    else:
        rows = []
        for ci, cam_id in enumerate(cam_ids):
            for hi, hk in enumerate(hour_keys):
                for fi in range(scenario.files_per_hour):
                    rows.append((hk, cam_id, fi,
                                 flows_mod.FlowChannels(channels[ci, hi, fi])))
        flows_mod.write_flows(workdir / "flows.csv", rows, comment=comment)

    with open(workdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# Oracle: recompute the expected NO2 series from the emitted bundle
# ---------------------------------------------------------------------------

def load_manifest(workdir) -> dict:
    with open(Path(workdir) / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "camair-synth-v1":
        raise ValidationError("not a camair synth manifest")
    manifest["lagged_effects"] = {k: (int(v[0]), float(v[1]))
                                  for k, v in manifest["lagged_effects"].items()}
    return manifest


def expected_no2(workdir) -> dict[tuple[str, HourKey], float]:
    """Recompute the noise-free NO2 expectation from manifest + CSVs.

    Works from tracks.csv (projecting and counting from scratch) when track
    detail was generated, else from flows.csv.
    """
    from .datamodel import load_sites

    workdir = Path(workdir)
    manifest = load_manifest(workdir)
    sites = load_sites(workdir / "sites.csv")
    weather = load_weather(workdir / "weather.csv")
    cam_ids = manifest["camera_order"]
    hour_keys = [HourKey.parse(d, h) for d, h in manifest["hours"]]
    f = manifest["files_per_hour"]
    cam_index = {c: i for i, c in enumerate(cam_ids)}
    hour_index = {hk: i for i, hk in enumerate(hour_keys)}
    channels = np.zeros((len(cam_ids), len(hour_keys), f, flows_mod.N_CHANNELS))

    if (workdir / "tracks.csv").exists():
        calib = load_calibrations(workdir / "calib.csv")
        for batch in load_tracks(workdir / "tracks.csv", sites):
            h = calib[batch.camera_id]
            by_file: dict[int, list[TrackedObject]] = {}
            for track in batch.tracks:
                by_file.setdefault(track.file_index, []).append(project_track(h, track))
            for fi, tracks in by_file.items():
                fc = flows_mod.count_modal_flows(tracks)
                channels[cam_index[batch.camera_id], hour_index[batch.hour], fi] = fc.values
    else:
        by_hour = flows_mod.load_flows(workdir / "flows.csv")
        for hk, cams in by_hour.items():
            for cam_id, files in cams.items():
                for fi, fc in files.items():
                    channels[cam_index[cam_id], hour_index[hk], fi] = fc.values

    expected = _expected_series(channels, cam_ids, sites, weather, manifest)
    return {(sid, hk): float(expected[si, hi])
            for si, sid in enumerate(manifest["sensor_order"])
            for hi, hk in enumerate(hour_keys)}
