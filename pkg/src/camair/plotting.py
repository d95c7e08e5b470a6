"""Figure rendering for the CLI report paths.

Every plotting function takes already-computed table data and writes an
SVG next to the CSV it illustrates. Rendering is deterministic: the Agg
backend, a fixed hash salt for SVG ids, and no embedded timestamps, so
re-running a stage reproduces byte-identical figures.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "camair"

import matplotlib.pyplot as plt
import numpy as np

_CLASS_COLORS = {
    "HighHigh": "#c0392b",
    "LowLow": "#2471a3",
    "HighLow": "#e67e22",
    "LowHigh": "#16a085",
    "NotSignificant": "#bdc3c7",
}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_hotspots(path, positions, classes, title: str) -> None:
    """Scatter of sites colored by Moran class."""
    positions = np.asarray(positions, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 5))
    for cls in _CLASS_COLORS:
        mask = [c == cls for c in classes]
        if any(mask):
            ax.scatter(positions[mask, 0], positions[mask, 1],
                       c=_CLASS_COLORS[cls], label=cls, s=28,
                       edgecolors="black", linewidths=0.3)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    _save(fig, path)


def plot_history(path, history: list[dict]) -> None:
    """Training and validation loss curves with the validation r-squared."""
    epochs = [row["epoch"] for row in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [row["train_msle"] for row in history], label="train MSLE")
    ax1.plot(epochs, [row["val_msle"] for row in history], label="val MSLE")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("MSLE")
    ax1.legend(fontsize=8)
    ax2.plot(epochs, [row["r2"] for row in history], color="#7d3c98")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation $r^2$")
    fig.tight_layout()
    _save(fig, path)


def plot_clock(path, table: dict[str, list[float]], mean_no2: list[float]) -> None:
    """Polar chart of per-hour standardized coefficients around the mean
    NO2 profile; the 24-hour clock layout."""
    hours = np.arange(24)
    theta = hours / 24.0 * 2.0 * np.pi
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(111, projection="polar")
    ax.set_theta_zero_location("N")
    ax.set_theta_direction(-1)
    closed_theta = np.append(theta, theta[0])
    no2 = np.asarray(mean_no2, dtype=float)
    ax.plot(closed_theta, np.append(no2, no2[0]), color="black", lw=1.5,
            label="mean NO2")
    for name, betas in sorted(table.items()):
        values = np.asarray(betas, dtype=float)
        scale = np.nanmax(np.abs(no2)) or 1.0
        ax.plot(closed_theta, np.append(values, values[0]) * 0.25 * scale + no2.mean(),
                lw=1.0, alpha=0.85, label=name)
    ax.set_xticks(theta[::3])
    ax.set_xticklabels([f"{h:02d}h" for h in hours[::3]], fontsize=7)
    ax.legend(loc="upper right", bbox_to_anchor=(1.35, 1.1), fontsize=7)
    _save(fig, path)


def plot_surface(path, xs, ys, values, sensor_points=None) -> None:
    """Raster of the interpolated surface as a colored scatter, with the
    source sensors overlaid."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 5))
    inside = np.isfinite(values)
    sct = ax.scatter(xs[inside], ys[inside], c=values[inside], s=12,
                     marker="s", cmap="viridis")
    fig.colorbar(sct, ax=ax, label="NO2 (ug/m3)")
    if sensor_points is not None:
        sensor_points = np.asarray(sensor_points, dtype=float)
        ax.scatter(sensor_points[:, 0], sensor_points[:, 1], c="red", s=30,
                   marker="^", label="sensors")
        ax.legend(fontsize=8)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    _save(fig, path)


def plot_coefficients(path, names, betas, p_values, title: str) -> None:
    """Horizontal bars of regression coefficients, significant ones filled."""
    order = np.argsort(np.abs(np.asarray(betas, dtype=float)))
    names = [names[i] for i in order]
    betas = np.asarray(betas, dtype=float)[order]
    p_values = np.asarray(p_values, dtype=float)[order]
    colors = ["#c0392b" if (p < 0.05 and b > 0) else
              "#2471a3" if (p < 0.05 and b < 0) else "#bdc3c7"
              for b, p in zip(betas, p_values)]
    fig, ax = plt.subplots(figsize=(6, 0.5 + 0.25 * len(names)))
    ax.barh(range(len(names)), betas, color=colors)
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=7)
    ax.axvline(0.0, color="black", lw=0.8)
    ax.set_xlabel("coefficient")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def plot_granger(path, grid: dict[tuple[str, str], list[float]], max_lag: int) -> None:
    """Heat table of minimum p-values per (variable, lag)."""
    labels = sorted(grid)
    matrix = np.array([grid[k] for k in labels], dtype=float)
    fig, ax = plt.subplots(figsize=(1.2 + 0.8 * max_lag, 0.6 + 0.45 * len(labels)))
    im = ax.imshow(matrix, cmap="RdYlGn", vmin=0.0, vmax=0.2, aspect="auto")
    ax.set_xticks(range(max_lag))
    ax.set_xticklabels([f"lag {p + 1}" for p in range(max_lag)], fontsize=7)
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels([f"{s} ~ {v}" for s, v in labels], fontsize=7)
    fig.colorbar(im, ax=ax, label="min p-value")
    fig.tight_layout()
    _save(fig, path)
