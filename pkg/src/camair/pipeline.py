"""Stage plumbing: projecting track bundles, computing flows, assembling
regression designs and graph datasets from the exchanged CSV files.

Sensor-level traffic features are influence means: each sensor averages the
hourly channel totals of its k nearest cameras. The regression design uses
eleven of the thirteen channels (congestion and total_flow are exact linear
combinations of the others by construction, so they are excluded to keep
the design full rank), plus static, weather, and day-of-week covariates.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datamodel import (
    MODES,
    HourKey,
    No2Reading,
    Sites,
    TrackBatch,
    WeatherDay,
)
from .errors import ValidationError
from .flows import (
    CHANNELS,
    FLOW_CHANNELS,
    STATIONARY_CHANNELS,
    FlowChannels,
    HourlyFlowTensor,
    count_modal_flows,
    hourly_tensor,
)
from .geometry import Homography, project_track
from .graphnet import GraphSample, fully_connected_adjacency, normalize_adjacency
from .signature import hourly_signature
from .spatial import knn_weights

DESIGN_CHANNELS = (*FLOW_CHANNELS, *STATIONARY_CHANNELS)  # full rank subset
WEATHER_NUMERIC = ("wind_speed_mean", "wet_hours", "sun_hours", "rainfall",
                   "pressure_mean", "humidity_mean", "temperature_mean",
                   "feels_like_mean")
DAY_NAMES = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday",
             "Saturday", "Sunday")


def project_batches(batches: Iterable[TrackBatch],
                    calibrations: Mapping[str, Homography]) -> list[TrackBatch]:
    """Project every track of every batch to the world plane."""
    out = []
    for batch in batches:
        if batch.camera_id not in calibrations:
            raise ValidationError(f"no calibration for camera {batch.camera_id!r}")
        h = calibrations[batch.camera_id]
        out.append(TrackBatch(batch.camera_id, batch.hour,
                              tuple(project_track(h, t) for t in batch.tracks)))
    return out


def flows_from_batches(batches: Iterable[TrackBatch], window_s: float,
                       radius_m: float) -> list[tuple[HourKey, str, int, FlowChannels]]:
    """Per-file modal flow rows, sorted for reproducible output."""
    rows = []
    for batch in batches:
        by_file: dict[int, list] = {}
        for track in batch.tracks:
            by_file.setdefault(track.file_index, []).append(track)
        for file_index, tracks in sorted(by_file.items()):
            rows.append((batch.hour, batch.camera_id, file_index,
                         count_modal_flows(tracks, window_s, radius_m)))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows


def tensors_by_hour(flows_by_hour: Mapping[HourKey, Mapping[str, Mapping[int, FlowChannels]]],
                    camera_ids: Sequence[str],
                    files_per_hour: int | None = None) -> dict[HourKey, HourlyFlowTensor]:
    out = {}
    for hour in sorted(flows_by_hour):
        observed = max((fi for files in flows_by_hour[hour].values() for fi in files),
                       default=-1)
        f = files_per_hour if files_per_hour is not None else observed + 1
        out[hour] = hourly_tensor(hour, flows_by_hour[hour], camera_ids, f)
    return out


def influence_map(sites: Sites, k: int) -> dict[str, list[str]]:
    """k nearest cameras per sensor, ties by (distance, camera_id)."""
    cam_ids = sites.camera_ids()
    if not cam_ids:
        raise ValidationError("no cameras declared")
    cams = np.array([[sites.cameras[c].x, sites.cameras[c].y] for c in cam_ids])
    out = {}
    for sid in sites.sensor_ids():
        s = sites.sensors[sid]
        d = np.hypot(cams[:, 0] - s.x, cams[:, 1] - s.y)
        order = sorted(range(len(cam_ids)), key=lambda i: (d[i], cam_ids[i]))
        out[sid] = [cam_ids[i] for i in order[:min(k, len(cam_ids))]]
    return out


def sensor_feature_series(tensors: Mapping[HourKey, HourlyFlowTensor],
                          influence: Mapping[str, list[str]],
                          sensor_id: str, channel: str) -> tuple[list[HourKey], np.ndarray]:
    """Hourly influence-mean of one channel at one sensor, in hour order."""
    ch = CHANNELS.index(channel)
    hours = sorted(tensors)
    series = np.empty(len(hours))
    for i, hour in enumerate(hours):
        tensor = tensors[hour]
        rows = [tensor.camera_index(c) for c in influence[sensor_id]]
        series[i] = tensor.hourly[rows, ch].mean()
    return hours, series


# ---------------------------------------------------------------------------
# Regression design
# ---------------------------------------------------------------------------

@dataclass
class DesignOptions:
    influence_k: int = 3
    channels: tuple[str, ...] = DESIGN_CHANNELS
    include_static: bool = True
    include_weather: bool = True
    include_dow: bool = True
    log_dep: bool = False


@dataclass
class RegressionDesign:
    y: np.ndarray
    x: np.ndarray
    names: tuple[str, ...]
    rows: tuple[tuple[str, HourKey], ...]  # (sensor_id, hour) per observation
    sensor_ids: tuple[str, ...]
    group_flags: dict[str, np.ndarray] = field(default_factory=dict)


def _static_numeric_features(sites: Sites) -> tuple[list[str], dict[str, dict[str, float]]]:
    names: set[str] = set()
    for cam in sites.cameras.values():
        for key, value in cam.static_features.items():
            if isinstance(value, (int, float)):
                names.add(key)
            elif key == "street_type":
                names.add(f"{key}_{value}")
    ordered = sorted(names)
    per_camera = {}
    for cam_id, cam in sites.cameras.items():
        feats = {}
        for name in ordered:
            if name.startswith("street_type_"):
                feats[name] = 1.0 if cam.static_features.get("street_type") == \
                    name.removeprefix("street_type_") else 0.0
            else:
                value = cam.static_features.get(name, 0.0)
                feats[name] = float(value) if isinstance(value, (int, float)) else 0.0
        per_camera[cam_id] = feats
    return ordered, per_camera


def build_design(tensors: Mapping[HourKey, HourlyFlowTensor],
                 readings: Iterable[No2Reading],
                 weather: Mapping[dt.date, WeatherDay],
                 sites: Sites,
                 opts: DesignOptions) -> RegressionDesign:
    """One observation per (sensor, hour) with an NO2 reading and flow data.

    Constant columns are dropped (they are collinear with the intercept);
    categorical covariates enter as dummies with the first seen level as
    the reference.
    """
    influence = influence_map(sites, opts.influence_k)
    by_key = {}
    for r in readings:
        by_key[(r.sensor_id, r.hour)] = r.value
    static_names, static_feats = _static_numeric_features(sites)
    ch_idx = [CHANNELS.index(c) for c in opts.channels]

    dirs_present = sorted({w.wind_direction for w in weather.values()})
    dir_dummies = dirs_present[1:] if len(dirs_present) > 1 else []
    dows_present = sorted({hk.date.weekday() for (_, hk) in by_key})
    dow_dummies = [DAY_NAMES[d] for d in dows_present[1:]] if len(dows_present) > 1 else []

    rows, y_vals, x_rows = [], [], []
    ulez_flags = []
    for (sensor_id, hour), value in sorted(by_key.items()):
        if hour not in tensors:
            continue
        tensor = tensors[hour]
        cam_rows = [tensor.camera_index(c) for c in influence[sensor_id]]
        hourly = tensor.hourly[cam_rows].mean(axis=0)
        feats = [hourly[i] for i in ch_idx]
        names = list(opts.channels)

        if opts.include_static:
            for name in static_names:
                feats.append(float(np.mean([static_feats[c][name]
                                            for c in influence[sensor_id]])))
                names.append(name)
        if opts.include_weather:
            day = weather.get(hour.date)
            if day is None:
                continue
            for name in WEATHER_NUMERIC:
                feats.append(float(getattr(day, name)))
                names.append(name)
            for direction in dir_dummies:
                feats.append(1.0 if day.wind_direction == direction else 0.0)
                names.append(f"wind_direction_{direction}")
        if opts.include_dow:
            for dow in dow_dummies:
                feats.append(1.0 if DAY_NAMES[hour.date.weekday()] == dow else 0.0)
                names.append(dow)

        rows.append((sensor_id, hour))
        y_vals.append(value)
        x_rows.append(feats)
        if "ulez" in static_names:
            ulez_flags.append(float(np.mean([static_feats[c]["ulez"]
                                             for c in influence[sensor_id]])) >= 0.5)

    if not rows:
        raise ValidationError("no (sensor, hour) observations with flow data")
    y = np.asarray(y_vals)
    if opts.log_dep:
        y = np.log(y + 1.0)
    x = np.asarray(x_rows)

    keep = [j for j in range(x.shape[1]) if np.ptp(x[:, j]) > 0.0]
    x = x[:, keep]
    kept_names = tuple(names[j] for j in keep)
    design = RegressionDesign(y, x, kept_names, tuple(rows),
                              tuple(sorted({s for s, _ in rows})))
    if ulez_flags:
        design.group_flags["ulez"] = np.asarray(ulez_flags, dtype=bool)
    return design


def sensor_weights(sites: Sites, design: RegressionDesign, k: int):
    """Row-standardized KNN weights over the design's observations.

    Observations repeat per hour; neighbours are restricted to the same
    hour so the lag never mixes time steps.
    """
    by_hour: dict[HourKey, list[int]] = {}
    for idx, (_, hour) in enumerate(design.rows):
        by_hour.setdefault(hour, []).append(idx)
    n = len(design.rows)
    k_eff = min(k, min(len(v) for v in by_hour.values()) - 1)
    if k_eff < 1:
        raise ValidationError("need at least 2 sensors per hour for spatial weights")
    neighbor_idx = np.zeros((n, k_eff), dtype=int)
    for hour, indices in by_hour.items():
        ids = [design.rows[i][0] for i in indices]
        positions = np.array([[sites.sensors[s].x, sites.sensors[s].y] for s in ids])
        w = knn_weights(positions, k_eff, standardize=True, site_ids=ids)
        local = np.asarray(indices)
        neighbor_idx[local] = local[w.neighbor_idx]
    from .spatial import SpatialWeights
    weights = np.full((n, k_eff), 1.0 / k_eff)
    return SpatialWeights(tuple(f"{s}@{h.isoformat()}" for s, h in design.rows),
                          neighbor_idx, weights, True)


# ---------------------------------------------------------------------------
# Graph dataset
# ---------------------------------------------------------------------------

@dataclass
class GraphDatasetOptions:
    knn_k: int = 10
    use_signature: bool = False
    signature_depth: int = 2
    signature_cumulative: bool = True


def _zscore(block: np.ndarray) -> np.ndarray:
    mean = block.mean(axis=0)
    std = block.std(axis=0)
    std[std == 0.0] = 1.0
    return (block - mean) / std


def build_graph_dataset(tensors: Mapping[HourKey, HourlyFlowTensor],
                        readings: Iterable[No2Reading],
                        weather: Mapping[dt.date, WeatherDay],
                        sites: Sites,
                        opts: GraphDatasetOptions) -> list[GraphSample]:
    """One GraphSample per hour with complete sensor coverage.

    Feature blocks are z-scored over the whole dataset; targets stay in
    raw units. Camera adjacency is the symmetrized (max) KNN graph with
    self-loops under symmetric normalization; the sensor graph is fully
    connected.
    """
    cam_ids = sites.camera_ids()
    sensor_ids = sites.sensor_ids()
    n, m = len(cam_ids), len(sensor_ids)
    if n < 2 or m < 1:
        raise ValidationError("graph dataset needs >= 2 cameras and >= 1 sensor")

    positions = np.array([[sites.cameras[c].x, sites.cameras[c].y] for c in cam_ids])
    k = min(opts.knn_k, n - 1)
    w = knn_weights(positions, k, standardize=False, site_ids=cam_ids)
    camera_adj = normalize_adjacency(w.symmetrized_max())
    env_adj = fully_connected_adjacency(m) if m > 1 else np.ones((1, 1))

    by_hour: dict[HourKey, dict[str, float]] = {}
    for r in readings:
        by_hour.setdefault(r.hour, {})[r.sensor_id] = r.value
    hours = [h for h in sorted(by_hour)
             if h in tensors and len(by_hour[h]) == m and h.date in weather]
    if not hours:
        raise ValidationError("no hour has flows, weather, and full sensor coverage")

    static_names, static_feats = _static_numeric_features(sites)
    static_block = np.array([[static_feats[c][name] for name in static_names]
                             for c in cam_ids]) if static_names else np.zeros((n, 0))
    dirs_present = sorted({w_.wind_direction for w_ in weather.values()})

    flow_blocks, numeric_blocks, sig_blocks, targets = [], [], [], []
    for hour in hours:
        tensor = tensors[hour]
        cam_rows = [tensor.camera_index(c) for c in cam_ids]
        flow_blocks.append(tensor.hourly[cam_rows])
        day = weather[hour.date]
        weather_vec = [float(getattr(day, name)) for name in WEATHER_NUMERIC]
        weather_vec += [1.0 if day.wind_direction == d else 0.0 for d in dirs_present]
        missing_frac = tensor.missing[cam_rows].mean(axis=1)
        numeric_blocks.append(np.column_stack([
            np.tile(weather_vec, (n, 1)), missing_frac]))
        if opts.use_signature:
            sig_blocks.append(np.array([
                hourly_signature(tensor, c, depth=opts.signature_depth,
                                 cumulative=opts.signature_cumulative).data
                for c in cam_ids]))
        targets.append(np.array([by_hour[hour][s] for s in sensor_ids]))

    flows_all = _zscore(np.concatenate(flow_blocks, axis=0))
    numeric_all = _zscore(np.concatenate(numeric_blocks, axis=0))
    sig_all = _zscore(np.concatenate(sig_blocks, axis=0)) if sig_blocks else None
    categorical = _zscore(static_block) if static_block.shape[1] else np.zeros((n, 0))

    samples = []
    for i, hour in enumerate(hours):
        samples.append(GraphSample(
            hour=hour,
            flows=flows_all[i * n:(i + 1) * n],
            categorical=categorical,
            numerical=numeric_all[i * n:(i + 1) * n],
            camera_adj=camera_adj,
            env_adj=env_adj,
            target=targets[i],
            signature_block=sig_all[i * n:(i + 1) * n] if sig_all is not None else None,
        ))
    return samples
