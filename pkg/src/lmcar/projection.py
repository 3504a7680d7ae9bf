"""Projecting feature importances onto point clouds and writing colored PLY."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class PointImportance:
    values: np.ndarray
    normalized: np.ndarray
    all_zero: bool = False


def point_mapped_weights(profile, groups) -> dict:
    """Per point-mapped group weight vectors, renormalized jointly over those groups."""
    mapped = [g for g in groups if g.point_mapped]
    if not mapped:
        raise ValueError("no point-mapped feature groups in the layout")
    blocks = {g.name: profile.normalized[g.offset:g.offset + g.length] for g in mapped}
    total = sum(float(b.sum()) for b in blocks.values())
    if total > 0:
        blocks = {name: b / total for name, b in blocks.items()}
    return blocks


def point_importance(profile, cloud_map, groups) -> PointImportance:
    """Sum, per point, the weight of the bin each point-mapped group assigns it."""
    cloud_map.check(groups)
    weights = point_mapped_weights(profile, groups)
    values = np.zeros(cloud_map.point_count)
    for name, w in weights.items():
        values += w[cloud_map.assignments[name]]
    peak = values.max()
    if peak > 0:
        return PointImportance(values, values / peak)
    return PointImportance(values, np.zeros_like(values), all_zero=True)


def colorize(importance) -> np.ndarray:
    """Linear blue (0) to red (max) ramp in byte space, rounded half up."""
    t = np.clip(np.asarray(importance.normalized, dtype=float), 0.0, 1.0)
    colors = np.zeros((len(t), 3), dtype=np.uint8)
    colors[:, 0] = np.floor(255.0 * t + 0.5)
    colors[:, 2] = np.floor(255.0 * (1.0 - t) + 0.5)
    return colors


def export_cloud(points, colors, path):
    """Write an ASCII PLY with x, y, z (double) and red, green, blue (uchar)."""
    points = np.asarray(points, dtype=float)
    colors = np.asarray(colors)
    if len(points) == 0:
        raise ValueError("refusing to write an empty point cloud")
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must be P x 3, got {points.shape}")
    if colors.shape != (len(points), 3):
        raise ValueError(f"{len(points)} points but colors have shape {colors.shape}")
    header = [
        "ply",
        "format ascii 1.0",
        "comment point importance (red = high, blue = low)",
        f"element vertex {len(points)}",
        "property double x",
        "property double y",
        "property double z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(header) + "\n")
        for (x, y, z), (r, g, b) in zip(points.tolist(), colors.tolist()):
            fh.write(f"{x!r} {y!r} {z!r} {r} {g} {b}\n")
