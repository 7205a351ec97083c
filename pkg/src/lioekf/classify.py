"""Minimal curvature-based plane/edge labelling of raw scan-line points.

Low curvature is treated as planar and high curvature as an edge, the usual
convention for smoothness-based LiDAR features.
"""
import numpy as np

from .errors import TooFewPoints
from .propagation import Kind, LidarPoint


def curvature(xyz, neighborhood):
    """c_j = |sum_i (p_i - p_j)| / (2n |p_j|) over the n points on each side.

    The first and last ``neighborhood`` points get NaN.
    """
    xyz = np.asarray(xyz, dtype=float)
    n = neighborhood
    m = len(xyz)
    c = np.full(m, np.nan)
    if m < 2 * n + 1:
        return c
    csum = np.vstack([np.zeros(3), np.cumsum(xyz, axis=0)])
    j = np.arange(n, m - n)
    window = csum[j + n + 1] - csum[j - n]          # includes p_j itself
    diff = window - (2 * n + 1) * xyz[j]
    c[j] = np.linalg.norm(diff, axis=1) / (2 * n * np.linalg.norm(xyz[j], axis=1))
    return c


def classify_features(raw_scan, neighborhood=5, plane_threshold=0.01, edge_threshold=0.05):
    """Label points of one scan line by local curvature.

    ``raw_scan`` is a sequence of ``(stamp, xyz)`` pairs in acquisition order.
    Points with curvature below ``plane_threshold`` become planes, above
    ``edge_threshold`` edges; the rest, and the unclassifiable ends, are dropped.
    """
    raw_scan = list(raw_scan)
    if len(raw_scan) < 2 * neighborhood + 1:
        raise TooFewPoints(f"need at least {2 * neighborhood + 1} points, got {len(raw_scan)}")
    stamps = [float(s) for s, _ in raw_scan]
    xyz = np.array([p for _, p in raw_scan], dtype=float)
    kinds = classify_array(xyz, neighborhood, plane_threshold, edge_threshold)
    return [LidarPoint(stamps[i], xyz[i], Kind(int(kinds[i])))
            for i in range(len(xyz)) if kinds[i] >= 0]


def classify_array(xyz, neighborhood=5, plane_threshold=0.01, edge_threshold=0.05):
    """Kind per point as int8: 0 plane, 1 edge, -1 dropped."""
    c = curvature(xyz, neighborhood)
    kinds = np.full(len(c), -1, dtype=np.int8)
    kinds[c < plane_threshold] = int(Kind.PLANE)
    kinds[c > edge_threshold] = int(Kind.EDGE)
    return kinds
