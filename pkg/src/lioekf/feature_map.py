"""Global feature map, nearest-neighbour search and plane/edge correspondences."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMap, TooFewNeighbors
from .manifold import skew
from .propagation import Kind


@dataclass(frozen=True, slots=True)
class MapPoint:
    xyz: np.ndarray
    kind: Kind


@dataclass(frozen=True)
class Correspondence:
    """Matched map plane (``u`` = normal) or edge (``u`` = direction) through ``q``."""

    u: np.ndarray
    q: np.ndarray
    kind: Kind

    def projector(self):
        return self.u[None, :] if self.kind is Kind.PLANE else skew(self.u)


@dataclass
class MatchConfig:
    """Neighbour count, residual gate and the fit acceptance thresholds."""

    k: int = 5
    gate: float = 0.5
    plane_ratio: float = 0.01      # smallest eigenvalue <= ratio * middle
    plane_max_dist: float = 0.1    # every neighbour within this of the plane
    edge_ratio: float = 3.0        # largest eigenvalue >= ratio * middle
    rank_floor: float = 1e-6       # plane: middle eigenvalue > floor * largest


class _KindIndex:
    """Exact k-NN over an append-only point set: a KD-tree plus a buffer of recent points."""

    def __init__(self, rebuild_ratio, brute_force_budget):
        self.rebuild_ratio = rebuild_ratio
        self.brute_force_budget = brute_force_budget
        self.indexed = np.empty((0, 3))
        self.tree = None
        self.buffer = []
        self.buffer_len = 0
        self._buffer_arr = None
        self._buffer_tree = None

    def __len__(self):
        return len(self.indexed) + self.buffer_len

    def add(self, pts):
        if len(pts) == 0:
            return
        self.buffer.append(np.array(pts, dtype=float))
        self.buffer_len += len(pts)
        self._buffer_arr = None
        self._buffer_tree = None
        if self.buffer_len > self.rebuild_ratio * len(self.indexed):
            self.indexed = np.concatenate([self.indexed] + self.buffer)
            self.tree = cKDTree(self.indexed)
            self.buffer = []
            self.buffer_len = 0

    def points(self):
        return np.concatenate([self.indexed] + self.buffer) if self.buffer else self.indexed

    def _buffer_points(self):
        if self._buffer_arr is None:
            self._buffer_arr = np.concatenate(self.buffer)
        return self._buffer_arr

    def query(self, queries, k):
        """Distances and points of the ``min(k, len)`` nearest neighbours, ascending."""
        n = len(self)
        k = min(k, n)
        nq = len(queries)
        dists, pts, order_keys = [], [], []
        if len(self.indexed):
            kk = min(k, len(self.indexed))
            d, i = self.tree.query(queries, k=kk)
            d = d.reshape(nq, kk)
            i = i.reshape(nq, kk)
            dists.append(d)
            pts.append(self.indexed[i])
            order_keys.append(i)
        if self.buffer_len:
            buf = self._buffer_points()
            kk = min(k, len(buf))
            if nq * len(buf) <= self.brute_force_budget:
                d2 = ((queries[:, None, :] - buf[None, :, :]) ** 2).sum(-1)
                if kk < len(buf):
                    i = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
                else:
                    i = np.broadcast_to(np.arange(kk), (nq, kk))
                d = np.sqrt(np.take_along_axis(d2, i, axis=1))
            else:
                if self._buffer_tree is None:
                    self._buffer_tree = cKDTree(buf)
                d, i = self._buffer_tree.query(queries, k=kk)
                d = d.reshape(nq, kk)
                i = i.reshape(nq, kk)
            dists.append(d)
            pts.append(buf[i])
            order_keys.append(i + len(self.indexed))
        if len(dists) == 1:
            return dists[0], pts[0]
        d = np.concatenate(dists, axis=1)
        p = np.concatenate(pts, axis=1)
        key = np.concatenate(order_keys, axis=1)
        sel = np.lexsort((key, d), axis=-1)[:, :k]
        return np.take_along_axis(d, sel, axis=1), np.take_along_axis(p, sel[..., None], axis=1)


class FeatureMap:
    """Append-only global map of plane and edge feature points.

    Queries are exact. Each kind keeps a KD-tree that is rebuilt once the
    points appended since the last build exceed ``rebuild_ratio`` of its size;
    until then recent points are searched separately and merged.
    """

    def __init__(self, rebuild_ratio=0.2, brute_force_budget=2_000):
        self._index = {kind: _KindIndex(rebuild_ratio, brute_force_budget) for kind in Kind}
        self._chunks = []

    def __len__(self):
        return sum(len(ix) for ix in self._index.values())

    def count(self, kind):
        return len(self._index[Kind(kind)])

    def add(self, xyz, kinds):
        xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
        kinds = np.asarray(kinds, dtype=np.int8).reshape(-1)
        if len(xyz) != len(kinds):
            raise ValueError("xyz and kinds must have the same length")
        self._chunks.append((xyz.copy(), kinds.copy()))
        for kind in Kind:
            self._index[kind].add(xyz[kinds == int(kind)])

    def points(self, kind=None):
        if kind is not None:
            return self._index[Kind(kind)].points()
        if not self._chunks:
            return np.empty((0, 3))
        return np.concatenate([c[0] for c in self._chunks])

    def kinds(self):
        if not self._chunks:
            return np.empty(0, dtype=np.int8)
        return np.concatenate([c[1] for c in self._chunks])

    def knn_batch(self, queries, k, kind):
        """Exact k nearest neighbours of each query row among points of ``kind``.

        Returns ``(distances (q, k'), points (q, k', 3))`` with k' = min(k, count).
        """
        index = self._index[Kind(kind)]
        if len(index) == 0:
            raise EmptyMap(f"map holds no {Kind(kind).name.lower()} points")
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        return index.query(queries, k)

    def dump(self, path):
        """Write ``x y z kind`` lines in insertion order."""
        letters = np.array(["P", "E"])
        with open(path, "w") as fh:
            for xyz, kinds in self._chunks:
                for p, c in zip(xyz, letters[kinds]):
                    fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} {c}\n")


def knn(fmap, query, k, kind):
    """The ``k`` nearest map points of ``kind`` to ``query``, nearest first."""
    _, pts = fmap.knn_batch(np.asarray(query, dtype=float)[None, :], k, kind)
    return [MapPoint(p, Kind(kind)) for p in pts[0]]


def _as_array(neighbors):
    if isinstance(neighbors, np.ndarray):
        return neighbors.reshape(-1, 3).astype(float)
    return np.array([n.xyz if isinstance(n, MapPoint) else n for n in neighbors], dtype=float)


def _scatter(nbrs):
    """Centroids and eigen-decompositions of the scatter matrices of ``(n, k, 3)`` neighbour sets."""
    centroid = nbrs.mean(axis=1)
    d = nbrs - centroid[:, None, :]
    S = np.einsum("nki,nkj->nij", d, d)
    evals, evecs = np.linalg.eigh(S)
    return centroid, d, evals, evecs


def fit_planes(nbrs, cfg=None, viewpoint=None):
    """Batched plane fit. Returns ``(ok, u, q)``; ``u`` faces ``viewpoint`` when given."""
    cfg = cfg or MatchConfig()
    centroid, d, evals, evecs = _scatter(nbrs)
    u = evecs[:, :, 0]
    ok = (evals[:, 0] <= cfg.plane_ratio * evals[:, 1]) & (evals[:, 1] > cfg.rank_floor * evals[:, 2])
    ok &= np.abs(np.einsum("nkj,nj->nk", d, u)).max(axis=1) <= cfg.plane_max_dist
    if viewpoint is not None:
        flip = np.einsum("nj,nj->n", np.asarray(viewpoint) - centroid, u) < 0.0
        u = np.where(flip[:, None], -u, u)
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    return ok, u, centroid


def fit_edges(nbrs, cfg=None):
    """Batched line fit. Returns ``(ok, u, q)``."""
    cfg = cfg or MatchConfig()
    centroid, _, evals, evecs = _scatter(nbrs)
    u = evecs[:, :, 2]
    ok = (evals[:, 2] >= cfg.edge_ratio * evals[:, 1]) & (evals[:, 2] > 0.0)
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    return ok, u, centroid


def fit_plane(neighbors, cfg=None, viewpoint=None):
    """Plane through at least five points, or ``None`` if they are not planar.

    The normal is the scatter-matrix eigenvector of smallest eigenvalue and
    the anchor is the centroid.
    """
    pts = _as_array(neighbors)
    if len(pts) < 5:
        raise TooFewNeighbors(f"plane fit needs 5 points, got {len(pts)}")
    ok, u, q = fit_planes(pts[None], cfg, viewpoint)
    return Correspondence(u[0], q[0], Kind.PLANE) if ok[0] else None


def fit_edge(neighbors, cfg=None):
    """Line through at least five points, or ``None`` if the scatter is not line-like."""
    pts = _as_array(neighbors)
    if len(pts) < 5:
        raise TooFewNeighbors(f"edge fit needs 5 points, got {len(pts)}")
    ok, u, q = fit_edges(pts[None], cfg)
    return Correspondence(u[0], q[0], Kind.EDGE) if ok[0] else None


def compute_residual(p_G, corr):
    """Point-to-plane distance (1-vector) or u x (p - q) for edges (3-vector)."""
    return corr.projector() @ (np.asarray(p_G, dtype=float) - corr.q)


@dataclass
class Matches:
    """Gated correspondences for a batch of points, aligned row by row."""

    index: np.ndarray
    kind: np.ndarray
    u: np.ndarray
    q: np.ndarray
    z: np.ndarray  # plane rows use column 0 only

    def __len__(self):
        return len(self.index)

    def planes(self):
        return self.kind == int(Kind.PLANE)


def match_points(fmap, points_G, kinds, cfg=None, viewpoint=None):
    """Search, fit and gate correspondences for every point; rejected points are dropped."""
    cfg = cfg or MatchConfig()
    points_G = np.asarray(points_G, dtype=float).reshape(-1, 3)
    kinds = np.asarray(kinds, dtype=np.int8)
    idx_out, kind_out, u_out, q_out, z_out = [], [], [], [], []
    for kind in Kind:
        sel = np.flatnonzero(kinds == int(kind))
        if len(sel) == 0 or fmap.count(kind) < max(cfg.k, 5):
            continue
        _, nbrs = fmap.knn_batch(points_G[sel], cfg.k, kind)
        if kind is Kind.PLANE:
            ok, u, q = fit_planes(nbrs, cfg, viewpoint)
            z = np.zeros((len(sel), 3))
            z[:, 0] = np.einsum("nj,nj->n", u, points_G[sel] - q)
            znorm = np.abs(z[:, 0])
        else:
            ok, u, q = fit_edges(nbrs, cfg)
            z = np.cross(u, points_G[sel] - q)
            znorm = np.linalg.norm(z, axis=1)
        ok &= znorm < cfg.gate
        idx_out.append(sel[ok])
        kind_out.append(np.full(ok.sum(), int(kind), dtype=np.int8))
        u_out.append(u[ok])
        q_out.append(q[ok])
        z_out.append(z[ok])
    if not idx_out:
        return Matches(np.empty(0, int), np.empty(0, np.int8), np.empty((0, 3)),
                       np.empty((0, 3)), np.empty((0, 3)))
    order = np.argsort(np.concatenate(idx_out), kind="stable")
    return Matches(np.concatenate(idx_out)[order], np.concatenate(kind_out)[order],
                   np.concatenate(u_out)[order], np.concatenate(q_out)[order],
                   np.concatenate(z_out)[order])


def build_correspondences(fmap, points_G, cfg=None, viewpoint=None):
    """Gated correspondences for ``(index, xyz, kind)`` triples.

    Returns ``(index, Correspondence, residual)`` for each accepted point.
    """
    if len(fmap) == 0:
        raise EmptyMap("cannot match against an empty map")
    points_G = list(points_G)
    if not points_G:
        return []
    ids = [p[0] for p in points_G]
    xyz = np.array([p[1] for p in points_G], dtype=float)
    kinds = np.array([int(p[2]) for p in points_G], dtype=np.int8)
    m = match_points(fmap, xyz, kinds, cfg, viewpoint)
    out = []
    for row, i in enumerate(m.index):
        kind = Kind(int(m.kind[row]))
        corr = Correspondence(m.u[row], m.q[row], kind)
        z = m.z[row, :1] if kind is Kind.PLANE else m.z[row]
        out.append((ids[i], corr, z.copy()))
    return out


def transform_to_global(x, ext, points_Lk):
    """Scan-end LiDAR points into the global frame using pose ``x``."""
    p_I = ext.to_imu(np.asarray(points_Lk, dtype=float).reshape(-1, 3))
    return p_I @ x.rot.T + x.pos


def append_scan(fmap, x, ext, points_Lk, kinds=None):
    """Transform scan-end points with the optimal pose and append them; returns ``fmap``."""
    if kinds is None:
        if len(points_Lk) and hasattr(points_Lk[0], "kind"):
            kinds = [int(p.kind) for p in points_Lk]
            points_Lk = [p.xyz for p in points_Lk]
        else:
            kinds = np.zeros(len(points_Lk), dtype=np.int8)
    fmap.add(transform_to_global(x, ext, points_Lk), kinds)
    return fmap
