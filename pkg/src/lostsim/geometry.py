"""Planar polyline helpers shared by the network, behaviours and sampling."""

from __future__ import annotations

import numpy as np


def cumulative_lengths(vertices: np.ndarray) -> np.ndarray:
    """Running arc length along ``vertices``; starts at 0."""
    vertices = np.asarray(vertices, dtype=float)
    if len(vertices) < 2:
        return np.zeros(len(vertices))
    seg = np.hypot(*np.diff(vertices, axis=0).T)
    return np.concatenate(([0.0], np.cumsum(seg)))


def polyline_length(vertices: np.ndarray) -> float:
    return float(cumulative_lengths(vertices)[-1]) if len(vertices) else 0.0


def project_onto_segments(p, a: np.ndarray, b: np.ndarray):
    """Project point ``p`` onto every segment ``a[i] -> b[i]``.

    Returns:
        (distance, t, foot) where ``t`` is the clamped segment parameter and
        ``foot`` the closest point on each segment.
    """
    p = np.asarray(p, dtype=float)
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.einsum("ij,ij->i", p - a, ab) / denom
    t = np.where(denom > 0, np.clip(t, 0.0, 1.0), 0.0)
    foot = a + t[:, None] * ab
    d = np.hypot(foot[:, 0] - p[0], foot[:, 1] - p[1])
    return d, t, foot


def closest_point_on_polyline(p, vertices: np.ndarray):
    """Closest point on a polyline.

    Returns:
        (foot, distance, segment_index, t)
    """
    vertices = np.asarray(vertices, dtype=float)
    d, t, foot = project_onto_segments(p, vertices[:-1], vertices[1:])
    i = int(np.argmin(d))
    return foot[i], float(d[i]), i, float(t[i])


def points_along(vertices: np.ndarray, cum: np.ndarray, distances: np.ndarray) -> np.ndarray:
    """Positions at arc-length ``distances`` along a polyline.

    ``cum`` must be :func:`cumulative_lengths` of ``vertices``. Distances are
    expected in ``[0, cum[-1]]``.
    """
    distances = np.asarray(distances, dtype=float)
    if len(vertices) == 1:
        return np.repeat(np.asarray(vertices, dtype=float), len(distances), axis=0)
    x = np.interp(distances, cum, vertices[:, 0])
    y = np.interp(distances, cum, vertices[:, 1])
    return np.column_stack((x, y))


def drop_repeated(vertices) -> np.ndarray:
    """Remove consecutive duplicate vertices."""
    v = np.asarray(vertices, dtype=float)
    if len(v) < 2:
        return v
    keep = np.concatenate(([True], np.any(np.diff(v, axis=0) != 0, axis=1)))
    return v[keep]
